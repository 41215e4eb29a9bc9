//! Depth-2 minimax search over joint actions.
//!
//! Each node expands the friendly ranker's top actions against the enemy
//! ranker's top replies. Within a node the enemy replies after the friendly
//! choice, so a node's value is the max over friendly actions of the min over
//! enemy actions.

use serde::{Deserialize, Serialize};

use crate::game::{AbstractState, ActionPair, Player, PurchaseAction};
use crate::models::{ModelBundle, ModelError, RankedAction};

/// Friendly and enemy ranking widths at the root and at depth 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PruneWidths {
    pub root: (usize, usize),
    pub inner: (usize, usize),
}

impl Default for PruneWidths {
    fn default() -> Self {
        PruneWidths {
            root: (20, 10),
            inner: (5, 3),
        }
    }
}

pub const MAX_DEPTH: u8 = 2;

/// The edge into a node: the joint action and the positions of its two halves
/// in their players' `legal_actions` enumeration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Edge {
    pub parent: usize,
    pub actions: ActionPair,
    pub friendly_index: usize,
    pub enemy_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TreeNode {
    pub id: usize,
    pub depth: u8,
    pub state: AbstractState,
    pub win_probabilities: [f64; 4],
    pub edge: Option<Edge>,
    pub children: Vec<usize>,
    pub backed_up_value: f64,
    /// Reward vector predicted on the transition into this node.
    pub reward: [f64; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SearchTree {
    pub nodes: Vec<TreeNode>,
    pub chosen_action: PurchaseAction,
    pub widths: PruneWidths,
}

#[derive(Debug, thiserror::Error)]
pub enum PlannerError {
    #[error("cannot plan from a terminal state")]
    Terminal,
    #[error("model failed while expanding node {node}: {source}")]
    Model {
        node: usize,
        #[source]
        source: ModelError,
    },
}

impl SearchTree {
    pub fn root(&self) -> &TreeNode {
        &self.nodes[0]
    }

    pub fn node(&self, id: usize) -> Option<&TreeNode> {
        self.nodes.get(id)
    }

    pub fn depth(&self) -> u8 {
        self.nodes.iter().map(|n| n.depth).max().unwrap_or(0)
    }

    /// Recomputes every internal node's value from its children.
    pub fn recompute_backups(&self) -> Vec<f64> {
        let mut values: Vec<f64> = self.nodes.iter().map(|n| n.backed_up_value).collect();
        for node in self.nodes.iter().rev() {
            if !node.children.is_empty() {
                let (v, _) = max_min(&self.nodes, &node.children, |id| values[id]);
                values[node.id] = v;
            }
        }
        values
    }
}

/// Max over friendly actions of min over enemy replies; returns the value and
/// the winning child group's friendly action. Ties go to the lowest friendly
/// enumeration index.
fn max_min(nodes: &[TreeNode], children: &[usize], value: impl Fn(usize) -> f64) -> (f64, Option<PurchaseAction>) {
    // (friendly enumeration index, action, min value) per friendly group, in
    // first-seen order.
    let mut groups: Vec<(usize, PurchaseAction, f64)> = Vec::new();
    for &c in children {
        let edge = nodes[c].edge.expect("child has an edge");
        let v = value(c);
        match groups.iter_mut().find(|g| g.0 == edge.friendly_index) {
            Some(g) => {
                if v < g.2 {
                    g.2 = v;
                }
            }
            None => groups.push((edge.friendly_index, edge.actions.friendly, v)),
        }
    }
    let mut best: Option<&(usize, PurchaseAction, f64)> = None;
    for g in &groups {
        best = match best {
            Some(b) if g.2 < b.2 || (g.2 == b.2 && g.0 > b.0) => Some(b),
            _ => Some(g),
        };
    }
    match best {
        Some(b) => (b.2, Some(b.1)),
        None => (f64::NAN, None),
    }
}

struct Builder<'a> {
    bundle: &'a ModelBundle,
    nodes: Vec<TreeNode>,
}

impl Builder<'_> {
    fn push(&mut self, depth: u8, state: AbstractState, edge: Option<Edge>, reward: [f64; 4]) -> Result<usize, PlannerError> {
        let id = self.nodes.len();
        let v = self
            .bundle
            .win_vector(&state)
            .map_err(|source| PlannerError::Model { node: id, source })?;
        let value = self.bundle.report(&v, Player::Friendly);
        self.nodes.push(TreeNode {
            id,
            depth,
            state,
            win_probabilities: v.0,
            edge,
            children: Vec::new(),
            backed_up_value: value,
            reward,
        });
        Ok(id)
    }

    fn rank(&self, node: usize, player: Player, k: usize) -> Result<Vec<RankedAction>, PlannerError> {
        self.bundle
            .rank_actions(&self.nodes[node].state, player, k)
            .map_err(|source| PlannerError::Model { node, source })
    }

    fn expand(&mut self, parent: usize, (kf, ke): (usize, usize)) -> Result<(), PlannerError> {
        let friendly = self.rank(parent, Player::Friendly, kf)?;
        let enemy = self.rank(parent, Player::Enemy, ke)?;
        let state = self.nodes[parent].state.clone();
        let depth = self.nodes[parent].depth + 1;
        for f in &friendly {
            for e in &enemy {
                let actions = ActionPair::new(f.action, e.action);
                let (next, reward) = self
                    .bundle
                    .predict_transition(&state, &actions)
                    .map_err(|source| PlannerError::Model { node: parent, source })?;
                let edge = Edge {
                    parent,
                    actions,
                    friendly_index: f.enumeration_index,
                    enemy_index: e.enumeration_index,
                };
                let id = self.push(depth, next, Some(edge), reward.0)?;
                self.nodes[parent].children.push(id);
            }
        }
        Ok(())
    }
}

/// Builds the pruned depth-2 tree from `state`. Node ids follow construction
/// order: the root, then all depth-1 children, then each depth-1 node's
/// children in turn.
pub fn build_tree(bundle: &ModelBundle, state: &AbstractState, widths: PruneWidths) -> Result<SearchTree, PlannerError> {
    if bundle.is_terminal(state) {
        return Err(PlannerError::Terminal);
    }
    let mut b = Builder {
        bundle,
        nodes: Vec::new(),
    };
    b.push(0, state.clone(), None, [0.0; 4])?;
    b.expand(0, widths.root)?;
    let first_level = b.nodes[0].children.clone();
    for &c in &first_level {
        if !bundle.is_terminal(&b.nodes[c].state) {
            b.expand(c, widths.inner)?;
        }
    }
    for &c in first_level.iter().rev() {
        if !b.nodes[c].children.is_empty() {
            let (v, _) = max_min(&b.nodes, &b.nodes[c].children, |id| b.nodes[id].backed_up_value);
            b.nodes[c].backed_up_value = v;
        }
    }
    let (v, chosen) = max_min(&b.nodes, &first_level, |id| b.nodes[id].backed_up_value);
    b.nodes[0].backed_up_value = v;
    Ok(SearchTree {
        nodes: b.nodes,
        chosen_action: chosen.expect("a non-terminal state has at least one legal action"),
        widths,
    })
}

/// Chooses the friendly action for `state`, returning the tree behind it.
pub fn select_action(bundle: &ModelBundle, state: &AbstractState) -> Result<(PurchaseAction, SearchTree), PlannerError> {
    let tree = build_tree(bundle, state, PruneWidths::default())?;
    Ok((tree.chosen_action, tree))
}
