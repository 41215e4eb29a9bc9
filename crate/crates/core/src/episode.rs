//! Episode artifacts: one played game with every search tree, as JSON Lines.
//!
//! A file holds one or more episodes. Each starts with a `header` line and
//! ends with an `outcome` line. In between, every decision point contributes a
//! `decision` line followed, when the agent planned, by a `tree` line and one
//! `node`, `action` and `winProbability` line per tree node (the root has no
//! `action` line). Node ids count from 0 within each tree, in construction
//! order. Datasets use the same format without trees.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::game::{AbstractState, ActionPair, GameConfig, Outcome, PurchaseAction};
use crate::planner::{Edge, PruneWidths, SearchTree, TreeNode, MAX_DEPTH};
use crate::play::{GameRecord, TransitionRecord};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Header {
    pub schema_version: u32,
    pub config_hash: String,
    pub config: GameConfig,
    pub bundle: String,
    pub friendly_agent: String,
    pub enemy_agent: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecisionPoint {
    pub transition: TransitionRecord,
    pub tree: Option<SearchTree>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub header: Header,
    pub decisions: Vec<DecisionPoint>,
    pub outcome: Outcome,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "camelCase")]
enum Line {
    Header(Header),
    #[serde(rename_all = "camelCase")]
    Decision {
        decision_idx: usize,
        state: AbstractState,
        actions: ActionPair,
        next: AbstractState,
        reward_vector: [f64; 4],
        wave_seed: u64,
    },
    #[serde(rename_all = "camelCase")]
    Tree {
        decision_idx: usize,
        chosen_action: PurchaseAction,
        widths: PruneWidths,
        node_count: usize,
    },
    #[serde(rename_all = "camelCase")]
    Node {
        decision_idx: usize,
        node_id: usize,
        depth: u8,
        state: AbstractState,
        backed_up_value: f64,
    },
    #[serde(rename_all = "camelCase")]
    Action {
        decision_idx: usize,
        node_id: usize,
        parent_node_id: usize,
        actions: ActionPair,
        friendly_index: usize,
        enemy_index: usize,
        reward: [f64; 4],
    },
    #[serde(rename_all = "camelCase")]
    WinProbability {
        decision_idx: usize,
        node_id: usize,
        vector: [f64; 4],
    },
    #[serde(rename_all = "camelCase")]
    Outcome { outcome: Outcome, waves: usize },
}

#[derive(Debug, thiserror::Error)]
pub enum EpisodeError {
    #[error("reading episode: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: unsupported schema version {found} (expected {SCHEMA_VERSION})")]
    Version { line: usize, found: u32 },
    #[error("line {line}: decision {decision}, node {node}: {message}")]
    Malformed {
        line: usize,
        decision: usize,
        node: usize,
        message: String,
    },
    #[error("line {line}: {message}")]
    Structure { line: usize, message: String },
}

impl Episode {
    pub fn from_game(record: GameRecord, config: &GameConfig, bundle: &str, friendly_agent: &str, enemy_agent: &str) -> Self {
        let decisions = record
            .transitions
            .into_iter()
            .zip(record.trees)
            .map(|(transition, tree)| DecisionPoint { transition, tree })
            .collect();
        Episode {
            header: Header {
                schema_version: SCHEMA_VERSION,
                config_hash: config.hash(),
                config: config.clone(),
                bundle: bundle.to_string(),
                friendly_agent: friendly_agent.to_string(),
                enemy_agent: enemy_agent.to_string(),
                seed: record.seed,
            },
            decisions,
            outcome: record.outcome,
        }
    }

    pub fn waves(&self) -> usize {
        self.decisions.len()
    }

    pub fn transitions(&self) -> impl Iterator<Item = &TransitionRecord> {
        self.decisions.iter().map(|d| &d.transition)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let mut line = |l: &Line| -> std::io::Result<()> {
            serde_json::to_writer(&mut w, l)?;
            w.write_all(b"\n")
        };
        line(&Line::Header(self.header.clone()))?;
        for (i, d) in self.decisions.iter().enumerate() {
            let t = &d.transition;
            line(&Line::Decision {
                decision_idx: i,
                state: t.state.clone(),
                actions: t.actions,
                next: t.next.clone(),
                reward_vector: t.reward_vector,
                wave_seed: t.wave_seed,
            })?;
            let Some(tree) = &d.tree else { continue };
            line(&Line::Tree {
                decision_idx: i,
                chosen_action: tree.chosen_action,
                widths: tree.widths,
                node_count: tree.nodes.len(),
            })?;
            for n in &tree.nodes {
                line(&Line::Node {
                    decision_idx: i,
                    node_id: n.id,
                    depth: n.depth,
                    state: n.state.clone(),
                    backed_up_value: n.backed_up_value,
                })?;
                if let Some(e) = &n.edge {
                    line(&Line::Action {
                        decision_idx: i,
                        node_id: n.id,
                        parent_node_id: e.parent,
                        actions: e.actions,
                        friendly_index: e.friendly_index,
                        enemy_index: e.enemy_index,
                        reward: n.reward,
                    })?;
                }
                line(&Line::WinProbability {
                    decision_idx: i,
                    node_id: n.id,
                    vector: n.win_probabilities,
                })?;
            }
        }
        line(&Line::Outcome {
            outcome: self.outcome,
            waves: self.decisions.len(),
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to memory");
        out
    }

    /// Identifier derived from the serialized content, so re-ingesting the
    /// same game yields the same id.
    pub fn content_id(&self) -> String {
        let digest = Sha256::digest(self.to_bytes());
        format!("ep-{}", hex::encode(&digest[..8]))
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> std::io::Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()
    }

    pub fn load_all(path: impl AsRef<std::path::Path>) -> Result<Vec<Episode>, EpisodeError> {
        read_episodes(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

pub fn write_episodes<W: Write>(episodes: &[Episode], mut w: W) -> std::io::Result<()> {
    for e in episodes {
        e.write_to(&mut w)?;
    }
    w.flush()
}

/// A tree under construction while reading.
struct PendingTree {
    decision: usize,
    chosen_action: PurchaseAction,
    widths: PruneWidths,
    expected: usize,
    nodes: Vec<TreeNode>,
    has_win: Vec<bool>,
}

struct Reader {
    episodes: Vec<Episode>,
    header: Option<Header>,
    decisions: Vec<DecisionPoint>,
    tree: Option<PendingTree>,
}

impl Reader {
    fn finish_tree(&mut self, line: usize) -> Result<(), EpisodeError> {
        let Some(t) = self.tree.take() else { return Ok(()) };
        let malformed = |node: usize, message: &str| EpisodeError::Malformed {
            line,
            decision: t.decision,
            node,
            message: message.to_string(),
        };
        if t.nodes.len() != t.expected {
            return Err(malformed(t.nodes.len(), &format!("tree declares {} nodes", t.expected)));
        }
        if let Some(n) = t.has_win.iter().position(|w| !w) {
            return Err(malformed(n, "missing win probability"));
        }
        if t.nodes.is_empty() {
            return Err(malformed(0, "tree has no root"));
        }
        for n in &t.nodes[1..] {
            if n.edge.is_none() {
                return Err(malformed(n.id, "non-root node without an action"));
            }
        }
        let tree = SearchTree {
            nodes: t.nodes,
            chosen_action: t.chosen_action,
            widths: t.widths,
        };
        self.decisions[t.decision].tree = Some(tree);
        Ok(())
    }

    fn accept(&mut self, line_no: usize, line: Line) -> Result<(), EpisodeError> {
        let structure = |message: &str| EpisodeError::Structure {
            line: line_no,
            message: message.to_string(),
        };
        if !matches!(line, Line::Header(_)) && self.header.is_none() {
            return Err(structure("record before header"));
        }
        match line {
            Line::Header(h) => {
                if self.header.is_some() {
                    return Err(structure("header inside an unfinished episode"));
                }
                if h.schema_version != SCHEMA_VERSION {
                    return Err(EpisodeError::Version {
                        line: line_no,
                        found: h.schema_version,
                    });
                }
                self.header = Some(h);
            }
            Line::Decision {
                decision_idx,
                state,
                actions,
                next,
                reward_vector,
                wave_seed,
            } => {
                self.finish_tree(line_no)?;
                if decision_idx != self.decisions.len() {
                    return Err(structure(&format!("expected decision {}", self.decisions.len())));
                }
                self.decisions.push(DecisionPoint {
                    transition: TransitionRecord {
                        state,
                        actions,
                        next,
                        reward_vector,
                        wave_seed,
                    },
                    tree: None,
                });
            }
            Line::Tree {
                decision_idx,
                chosen_action,
                widths,
                node_count,
            } => {
                if self.tree.is_some() || decision_idx + 1 != self.decisions.len() || self.decisions[decision_idx].tree.is_some() {
                    return Err(structure("tree does not follow its decision"));
                }
                self.tree = Some(PendingTree {
                    decision: decision_idx,
                    chosen_action,
                    widths,
                    expected: node_count,
                    nodes: Vec::with_capacity(node_count.min(1 << 16)),
                    has_win: Vec::new(),
                });
            }
            Line::Node {
                decision_idx,
                node_id,
                depth,
                state,
                backed_up_value,
            } => {
                let t = self.pending(line_no, decision_idx, node_id)?;
                let malformed = |message: &str| EpisodeError::Malformed {
                    line: line_no,
                    decision: decision_idx,
                    node: node_id,
                    message: message.to_string(),
                };
                if node_id != t.nodes.len() {
                    return Err(malformed("node ids must be consecutive from 0"));
                }
                if node_id == 0 && depth != 0 {
                    return Err(malformed("root must have depth 0"));
                }
                if depth > MAX_DEPTH {
                    return Err(malformed("depth exceeds 2"));
                }
                t.nodes.push(TreeNode {
                    id: node_id,
                    depth,
                    state,
                    win_probabilities: [0.0; 4],
                    edge: None,
                    children: Vec::new(),
                    backed_up_value,
                    reward: [0.0; 4],
                });
                t.has_win.push(false);
            }
            Line::Action {
                decision_idx,
                node_id,
                parent_node_id,
                actions,
                friendly_index,
                enemy_index,
                reward,
            } => {
                let t = self.pending(line_no, decision_idx, node_id)?;
                let malformed = |message: &str| EpisodeError::Malformed {
                    line: line_no,
                    decision: decision_idx,
                    node: node_id,
                    message: message.to_string(),
                };
                if node_id == 0 || node_id + 1 != t.nodes.len() || t.nodes[node_id].edge.is_some() {
                    return Err(malformed("action must follow its child node"));
                }
                if parent_node_id >= node_id {
                    return Err(malformed("parent must precede child"));
                }
                if t.nodes[parent_node_id].depth + 1 != t.nodes[node_id].depth {
                    return Err(malformed("child depth must be parent depth + 1"));
                }
                t.nodes[parent_node_id].children.push(node_id);
                let n = &mut t.nodes[node_id];
                n.reward = reward;
                n.edge = Some(Edge {
                    parent: parent_node_id,
                    actions,
                    friendly_index,
                    enemy_index,
                });
            }
            Line::WinProbability {
                decision_idx,
                node_id,
                vector,
            } => {
                let t = self.pending(line_no, decision_idx, node_id)?;
                if node_id >= t.nodes.len() || t.has_win[node_id] {
                    return Err(EpisodeError::Malformed {
                        line: line_no,
                        decision: decision_idx,
                        node: node_id,
                        message: "win probability without a node".to_string(),
                    });
                }
                t.nodes[node_id].win_probabilities = vector;
                t.has_win[node_id] = true;
            }
            Line::Outcome { outcome, waves } => {
                self.finish_tree(line_no)?;
                if waves != self.decisions.len() {
                    return Err(structure(&format!("outcome reports {waves} waves, found {}", self.decisions.len())));
                }
                self.episodes.push(Episode {
                    header: self.header.take().expect("checked above"),
                    decisions: std::mem::take(&mut self.decisions),
                    outcome,
                });
            }
        }
        Ok(())
    }

    fn pending(&mut self, line: usize, decision: usize, node: usize) -> Result<&mut PendingTree, EpisodeError> {
        match &mut self.tree {
            Some(t) if t.decision == decision => Ok(t),
            _ => Err(EpisodeError::Malformed {
                line,
                decision,
                node,
                message: "node record outside its tree".to_string(),
            }),
        }
    }
}

/// Parses and structurally validates every episode in a stream.
pub fn read_episodes<R: BufRead>(r: R) -> Result<Vec<Episode>, EpisodeError> {
    let mut reader = Reader {
        episodes: Vec::new(),
        header: None,
        decisions: Vec::new(),
        tree: None,
    };
    let mut last = 0;
    for (i, text) in r.lines().enumerate() {
        let text = text?;
        last = i + 1;
        if text.trim().is_empty() {
            continue;
        }
        let line: Line = serde_json::from_str(&text).map_err(|e| EpisodeError::Syntax {
            line: i + 1,
            message: e.to_string(),
        })?;
        reader.accept(i + 1, line)?;
    }
    if reader.header.is_some() {
        return Err(EpisodeError::Structure {
            line: last,
            message: "episode has no outcome line".to_string(),
        });
    }
    Ok(reader.episodes)
}

pub fn parse_episodes(bytes: &[u8]) -> Result<Vec<Episode>, EpisodeError> {
    read_episodes(bytes)
}
