//! Relational store of episodes and search trees.
//!
//! Tables are columnar and append-only. Row ids are dense per table and
//! start at 1, so `id - 1` is the row position. Every node of every tree is a
//! `States` row with exactly one `WinProbability` row (sharing its id); every
//! non-root node also has the `Actions` row for the edge into it. An episode's
//! rows are contiguous in each table.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::episode::{Episode, Header};
use crate::game::attributes::{
    action_from_values, action_to_values, state_from_values, state_to_values,
    NUM_ACTION_ATTRIBUTES, NUM_STATE_ATTRIBUTES,
};
use crate::game::{AbstractState, ActionPair, PurchaseAction, Transform};
use crate::models::{ModelBundle, ModelError};
use crate::planner::{Edge, PruneWidths, SearchTree, TreeNode};

pub const SNAPSHOT_FORMAT: &str = "towcheck-store";
pub const SNAPSHOT_VERSION: u32 = 1;

pub type RowId = u64;

/// Canonical names of the four win-probability columns.
pub const WIN_PROBABILITY_COLUMNS: [&str; 4] = [
    "probabilityOfWinInTopLane",
    "probabilityOfWinInBottomLane",
    "probabilityOfEnemyWinInTopLane",
    "probabilityOfEnemyWinInBottomLane",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EpisodeRow {
    pub episode_id: String,
    pub is_win: bool,
    pub wave_count: usize,
    pub config_hash: String,
    pub header: Header,
    pub outcome: crate::game::Outcome,
    /// Half-open row-position ranges of this episode's rows.
    pub states: (usize, usize),
    pub actions: (usize, usize),
    pub decisions: (usize, usize),
}

/// Per decision point: the root row and the planner's choice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DecisionRow {
    pub episode: usize,
    pub decision_idx: usize,
    pub root_state_id: RowId,
    pub actions: ActionPair,
    pub chosen_action: Option<PurchaseAction>,
    pub widths: Option<PruneWidths>,
    pub wave_seed: u64,
    pub next: AbstractState,
    pub reward_vector: [f64; 4],
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct StatesTable {
    pub episode: Vec<u32>,
    pub decision_idx: Vec<u32>,
    pub is_root: Vec<bool>,
    pub depth: Vec<u8>,
    pub parent_action_id: Vec<Option<RowId>>,
    pub model_predicted: Vec<bool>,
    pub backed_up_value: Vec<f64>,
    /// One column per state attribute, in schema order.
    pub columns: Vec<Vec<i32>>,
}

impl StatesTable {
    pub fn len(&self) -> usize {
        self.episode.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episode.is_empty()
    }

    pub fn value(&self, row: usize, attribute: usize) -> i32 {
        self.columns[attribute][row]
    }

    pub fn state(&self, row: usize) -> AbstractState {
        let values: Vec<i32> = self.columns.iter().map(|c| c[row]).collect();
        state_from_values(&values)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ActionsTable {
    pub parent_state_id: Vec<RowId>,
    pub child_state_id: Vec<RowId>,
    pub friendly_index: Vec<u32>,
    pub enemy_index: Vec<u32>,
    pub reward: Vec<[f64; 4]>,
    /// One column per action attribute, in schema order.
    pub columns: Vec<Vec<i32>>,
}

impl ActionsTable {
    pub fn len(&self) -> usize {
        self.parent_state_id.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parent_state_id.is_empty()
    }

    pub fn value(&self, row: usize, attribute: usize) -> i32 {
        self.columns[attribute][row]
    }

    pub fn pair(&self, row: usize) -> ActionPair {
        let values: Vec<i32> = self.columns.iter().map(|c| c[row]).collect();
        action_from_values(&values)
    }
}

/// `WinProbability` rows; row `i` belongs to state row `i`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WinProbabilityTable {
    pub columns: [Vec<f64>; 4],
}

impl WinProbabilityTable {
    pub fn len(&self) -> usize {
        self.columns[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn vector(&self, row: usize) -> [f64; 4] {
        [0, 1, 2, 3].map(|c| self.columns[c][row])
    }
}

/// Inference results for transformed transition inputs. Row `i` links to
/// the original output state `origin_id[i]` and the original action row
/// `origin_action_id[i]`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CounterfactualTable {
    pub origin_id: Vec<RowId>,
    pub origin_action_id: Vec<RowId>,
    pub input: Vec<Vec<i32>>,
    pub actions: Vec<Vec<i32>>,
    pub output: Vec<Vec<i32>>,
    pub win: [Vec<f64>; 4],
    /// Episodes materialized for this transform, with their row ranges.
    pub episodes: Vec<(usize, (usize, usize))>,
}

impl CounterfactualTable {
    fn new() -> Self {
        CounterfactualTable {
            input: vec![Vec::new(); NUM_STATE_ATTRIBUTES],
            actions: vec![Vec::new(); NUM_ACTION_ATTRIBUTES],
            output: vec![Vec::new(); NUM_STATE_ATTRIBUTES],
            ..Default::default()
        }
    }

    pub fn len(&self) -> usize {
        self.origin_id.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origin_id.is_empty()
    }

    pub fn range_of(&self, episode: usize) -> Option<(usize, usize)> {
        self.episodes.iter().find(|(e, _)| *e == episode).map(|(_, r)| *r)
    }

    pub fn output_state(&self, row: usize) -> AbstractState {
        let values: Vec<i32> = self.output.iter().map(|c| c[row]).collect();
        state_from_values(&values)
    }

    pub fn win_vector(&self, row: usize) -> [f64; 4] {
        [0, 1, 2, 3].map(|c| self.win[c][row])
    }
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("unknown episode {0}")]
    UnknownEpisode(String),
    #[error("no {table} row with id {id}")]
    NotFound { table: &'static str, id: RowId },
    #[error("episode {episode} has no decision {decision}")]
    UnknownDecision { episode: String, decision: usize },
    #[error("counterfactual inference for transition {action_id}: {source}")]
    Model {
        action_id: RowId,
        #[source]
        source: ModelError,
    },
    #[error("snapshot: {0}")]
    Io(#[from] std::io::Error),
    #[error("snapshot: {0}")]
    Json(#[from] serde_json::Error),
    #[error("snapshot format {format:?} version {version} is not supported")]
    Version { format: String, version: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct IngestSummary {
    pub episode_id: String,
    pub inserted: bool,
    pub states: usize,
    pub actions: usize,
    pub win_probabilities: usize,
}

/// A stored transition: input state, the action row, output state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct TransitionRef {
    pub input_state_id: RowId,
    pub action_id: RowId,
    pub output_state_id: RowId,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct EpisodeSummary {
    pub episode_id: String,
    pub is_win: bool,
    pub wave_count: usize,
    pub config_hash: String,
    pub decision_points: usize,
    pub states: usize,
    pub transition_inferences: usize,
    pub flipped_materialized: bool,
    pub reversed_materialized: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TreeStore {
    pub episodes: Vec<EpisodeRow>,
    pub decisions: Vec<DecisionRow>,
    pub states: StatesTable,
    pub actions: ActionsTable,
    pub win_probability: WinProbabilityTable,
    pub flipped: CounterfactualTable,
    pub reversed: CounterfactualTable,
}

impl Default for TreeStore {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Serialize, Deserialize)]
struct Snapshot<T> {
    format: String,
    version: u32,
    store: T,
}

#[derive(Deserialize)]
struct SnapshotHead {
    format: String,
    version: u32,
}

impl TreeStore {
    pub fn new() -> Self {
        TreeStore {
            episodes: Vec::new(),
            decisions: Vec::new(),
            states: StatesTable {
                columns: vec![Vec::new(); NUM_STATE_ATTRIBUTES],
                ..Default::default()
            },
            actions: ActionsTable {
                columns: vec![Vec::new(); NUM_ACTION_ATTRIBUTES],
                ..Default::default()
            },
            win_probability: WinProbabilityTable::default(),
            flipped: CounterfactualTable::new(),
            reversed: CounterfactualTable::new(),
        }
    }

    pub fn episode_index(&self, episode_id: &str) -> Result<usize, StoreError> {
        self.episodes
            .iter()
            .position(|e| e.episode_id == episode_id)
            .ok_or_else(|| StoreError::UnknownEpisode(episode_id.to_string()))
    }

    pub fn counterfactuals(&self, transform: Transform) -> &CounterfactualTable {
        match transform {
            Transform::Flip => &self.flipped,
            Transform::Reverse => &self.reversed,
        }
    }

    fn push_state(&mut self, episode: usize, decision: usize, node: &TreeNode, parent_action: Option<RowId>, predicted: bool) -> RowId {
        let st = &mut self.states;
        st.episode.push(episode as u32);
        st.decision_idx.push(decision as u32);
        st.is_root.push(node.depth == 0);
        st.depth.push(node.depth);
        st.parent_action_id.push(parent_action);
        st.model_predicted.push(predicted);
        st.backed_up_value.push(node.backed_up_value);
        for (col, v) in st.columns.iter_mut().zip(state_to_values(&node.state)) {
            col.push(v);
        }
        for (col, v) in self.win_probability.columns.iter_mut().zip(node.win_probabilities) {
            col.push(v);
        }
        st.len() as RowId
    }

    /// Inserts every tree of `episode`. Re-ingesting identical content is a
    /// no-op returning the existing id.
    pub fn ingest(&mut self, episode: &Episode) -> IngestSummary {
        let episode_id = episode.content_id();
        if let Some(existing) = self.episodes.iter().find(|e| e.episode_id == episode_id) {
            return IngestSummary {
                episode_id,
                inserted: false,
                states: existing.states.1 - existing.states.0,
                actions: existing.actions.1 - existing.actions.0,
                win_probabilities: existing.states.1 - existing.states.0,
            };
        }
        let index = self.episodes.len();
        let (s0, a0, d0) = (self.states.len(), self.actions.len(), self.decisions.len());
        for (d, point) in episode.decisions.iter().enumerate() {
            let t = &point.transition;
            let root_id;
            match &point.tree {
                Some(tree) => {
                    // Node id → state row id for this tree.
                    let mut ids: Vec<RowId> = Vec::with_capacity(tree.nodes.len());
                    for node in &tree.nodes {
                        let parent_action = node.edge.as_ref().map(|e| {
                            let a = &mut self.actions;
                            a.parent_state_id.push(ids[e.parent]);
                            // Filled in below once the child row exists.
                            a.child_state_id.push(0);
                            a.friendly_index.push(e.friendly_index as u32);
                            a.enemy_index.push(e.enemy_index as u32);
                            a.reward.push(node.reward);
                            for (col, v) in a.columns.iter_mut().zip(action_to_values(&e.actions)) {
                                col.push(v);
                            }
                            a.len() as RowId
                        });
                        let id = self.push_state(index, d, node, parent_action, node.depth > 0);
                        if let Some(aid) = parent_action {
                            self.actions.child_state_id[aid as usize - 1] = id;
                        }
                        ids.push(id);
                    }
                    root_id = ids[0];
                }
                None => {
                    // Without a tree there is no model output for the root.
                    let root = TreeNode {
                        id: 0,
                        depth: 0,
                        state: t.state.clone(),
                        win_probabilities: [0.0; 4],
                        edge: None,
                        children: Vec::new(),
                        backed_up_value: 0.0,
                        reward: [0.0; 4],
                    };
                    root_id = self.push_state(index, d, &root, None, false);
                }
            }
            self.decisions.push(DecisionRow {
                episode: index,
                decision_idx: d,
                root_state_id: root_id,
                actions: t.actions,
                chosen_action: point.tree.as_ref().map(|tr| tr.chosen_action),
                widths: point.tree.as_ref().map(|tr| tr.widths),
                wave_seed: t.wave_seed,
                next: t.next.clone(),
                reward_vector: t.reward_vector,
            });
        }
        let (s1, a1) = (self.states.len(), self.actions.len());
        self.episodes.push(EpisodeRow {
            episode_id: episode_id.clone(),
            is_win: episode.outcome.winner == crate::game::Player::Friendly,
            wave_count: episode.waves(),
            config_hash: episode.header.config_hash.clone(),
            header: episode.header.clone(),
            outcome: episode.outcome,
            states: (s0, s1),
            actions: (a0, a1),
            decisions: (d0, self.decisions.len()),
        });
        IngestSummary {
            episode_id,
            inserted: true,
            states: s1 - s0,
            actions: a1 - a0,
            win_probabilities: s1 - s0,
        }
    }

    /// Runs `bundle` on the transformed input of every stored transition of
    /// the episode and records the results. Re-materializing an episode is a
    /// no-op. Returns the number of rows for the episode.
    pub fn materialize_counterfactuals(&mut self, episode_id: &str, bundle: &ModelBundle, transform: Transform) -> Result<usize, StoreError> {
        let e = self.episode_index(episode_id)?;
        if let Some((start, end)) = self.counterfactuals(transform).range_of(e) {
            return Ok(end - start);
        }
        let (a0, a1) = self.episodes[e].actions;
        let mut rows = Vec::with_capacity(a1 - a0);
        for a in a0..a1 {
            let input = self.states.state(self.actions.parent_state_id[a] as usize - 1);
            let pair = self.actions.pair(a);
            let cf_input = transform.state(&input);
            let cf_pair = transform.actions(&pair);
            let model = |source| StoreError::Model {
                action_id: a as RowId + 1,
                source,
            };
            let (cf_output, _) = bundle.predict_transition(&cf_input, &cf_pair).map_err(model)?;
            let cf_win = bundle.win_vector(&cf_output).map_err(model)?;
            rows.push((a, cf_input, cf_pair, cf_output, cf_win.0));
        }
        let child_ids = &self.actions.child_state_id;
        let table = match transform {
            Transform::Flip => &mut self.flipped,
            Transform::Reverse => &mut self.reversed,
        };
        let start = table.len();
        for (a, input, pair, output, win) in rows {
            table.origin_id.push(child_ids[a]);
            table.origin_action_id.push(a as RowId + 1);
            for (col, v) in table.input.iter_mut().zip(state_to_values(&input)) {
                col.push(v);
            }
            for (col, v) in table.actions.iter_mut().zip(action_to_values(&pair)) {
                col.push(v);
            }
            for (col, v) in table.output.iter_mut().zip(state_to_values(&output)) {
                col.push(v);
            }
            for (col, v) in table.win.iter_mut().zip(win) {
                col.push(v);
            }
        }
        let end = table.len();
        table.episodes.push((e, (start, end)));
        Ok(end - start)
    }

    pub fn state_row(&self, id: RowId) -> Result<usize, StoreError> {
        if id == 0 || id as usize > self.states.len() {
            return Err(StoreError::NotFound { table: "States", id });
        }
        Ok(id as usize - 1)
    }

    pub fn action_row(&self, id: RowId) -> Result<usize, StoreError> {
        if id == 0 || id as usize > self.actions.len() {
            return Err(StoreError::NotFound { table: "Actions", id });
        }
        Ok(id as usize - 1)
    }

    fn decision(&self, episode_id: &str, decision: usize) -> Result<&DecisionRow, StoreError> {
        let e = self.episode_index(episode_id)?;
        let (d0, d1) = self.episodes[e].decisions;
        if decision >= d1 - d0 {
            return Err(StoreError::UnknownDecision {
                episode: episode_id.to_string(),
                decision,
            });
        }
        Ok(&self.decisions[d0 + decision])
    }

    /// State row ids of one decision point's tree, in node order (root
    /// first, then depth 1, then depth 2).
    pub fn states_of(&self, episode_id: &str, decision: usize) -> Result<Vec<RowId>, StoreError> {
        let d = self.decision(episode_id, decision)?;
        let start = d.root_state_id as usize - 1;
        let end = (start + 1..self.states.len())
            .find(|&r| self.states.is_root[r])
            .unwrap_or(self.states.len())
            .min(self.episodes[d.episode].states.1);
        Ok((start..end).map(|r| r as RowId + 1).collect())
    }

    /// Every `(input, action, output)` path of one decision point's tree.
    pub fn transitions_of(&self, episode_id: &str, decision: usize) -> Result<Vec<TransitionRef>, StoreError> {
        Ok(self
            .states_of(episode_id, decision)?
            .into_iter()
            .filter_map(|id| {
                let a = self.states.parent_action_id[id as usize - 1]?;
                Some(TransitionRef {
                    input_state_id: self.actions.parent_state_id[a as usize - 1],
                    action_id: a,
                    output_state_id: id,
                })
            })
            .collect())
    }

    pub fn decision_count(&self, episode_id: &str) -> Result<usize, StoreError> {
        let e = self.episode_index(episode_id)?;
        let (d0, d1) = self.episodes[e].decisions;
        Ok(d1 - d0)
    }

    pub fn episode_summary(&self, episode_id: &str) -> Result<EpisodeSummary, StoreError> {
        let e = self.episode_index(episode_id)?;
        let row = &self.episodes[e];
        Ok(EpisodeSummary {
            episode_id: row.episode_id.clone(),
            is_win: row.is_win,
            wave_count: row.wave_count,
            config_hash: row.config_hash.clone(),
            decision_points: row.decisions.1 - row.decisions.0,
            states: row.states.1 - row.states.0,
            transition_inferences: row.actions.1 - row.actions.0,
            flipped_materialized: self.flipped.range_of(e).is_some(),
            reversed_materialized: self.reversed.range_of(e).is_some(),
        })
    }

    /// Rebuilds the search tree of a decision point from its rows, or `None`
    /// when the agent did not plan there.
    pub fn tree(&self, episode_id: &str, decision: usize) -> Result<Option<SearchTree>, StoreError> {
        let d = self.decision(episode_id, decision)?;
        let (Some(chosen_action), Some(widths)) = (d.chosen_action, d.widths) else {
            return Ok(None);
        };
        let ids = self.states_of(episode_id, decision)?;
        let base = ids[0];
        let mut nodes: Vec<TreeNode> = Vec::with_capacity(ids.len());
        for &id in &ids {
            let r = id as usize - 1;
            let node_id = (id - base) as usize;
            let edge = self.states.parent_action_id[r].map(|a| {
                let ar = a as usize - 1;
                Edge {
                    parent: (self.actions.parent_state_id[ar] - base) as usize,
                    actions: self.actions.pair(ar),
                    friendly_index: self.actions.friendly_index[ar] as usize,
                    enemy_index: self.actions.enemy_index[ar] as usize,
                }
            });
            let reward = self.states.parent_action_id[r].map_or([0.0; 4], |a| self.actions.reward[a as usize - 1]);
            if let Some(e) = &edge {
                nodes[e.parent].children.push(node_id);
            }
            nodes.push(TreeNode {
                id: node_id,
                depth: self.states.depth[r],
                state: self.states.state(r),
                win_probabilities: self.win_probability.vector(r),
                edge,
                children: Vec::new(),
                backed_up_value: self.states.backed_up_value[r],
                reward,
            });
        }
        Ok(Some(SearchTree {
            nodes,
            chosen_action,
            widths,
        }))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), StoreError> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(
            &mut w,
            &Snapshot {
                format: SNAPSHOT_FORMAT.to_string(),
                version: SNAPSHOT_VERSION,
                store: self,
            },
        )?;
        std::io::Write::flush(&mut w)?;
        Ok(())
    }

    pub fn from_snapshot_bytes(bytes: &[u8]) -> Result<Self, StoreError> {
        let head: SnapshotHead = serde_json::from_slice(bytes)?;
        if head.format != SNAPSHOT_FORMAT || head.version != SNAPSHOT_VERSION {
            return Err(StoreError::Version {
                format: head.format,
                version: head.version,
            });
        }
        let snap: Snapshot<TreeStore> = serde_json::from_slice(bytes)?;
        Ok(snap.store)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        Self::from_snapshot_bytes(&std::fs::read(path)?)
    }

    /// Ids of the stored episodes, in ingestion order.
    pub fn episode_ids(&self) -> Vec<&str> {
        self.episodes.iter().map(|e| e.episode_id.as_str()).collect()
    }

    /// Per decision point of an episode: number of tree nodes.
    pub fn nodes_per_decision(&self, episode_id: &str) -> Result<HashMap<usize, usize>, StoreError> {
        let n = self.decision_count(episode_id)?;
        (0..n)
            .map(|d| Ok((d, self.states_of(episode_id, d)?.len())))
            .collect()
    }
}
