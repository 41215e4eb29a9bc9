//! Agents and the match harness that plays them against each other.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::game::{
    initial_state, legal_actions, reverse_players, simulate_wave, AbstractState, ActionPair,
    GameConfig, Outcome, Player, PurchaseAction, SimError,
};
use crate::models::{ModelBundle, ModelError};
use crate::planner::{build_tree, PlannerError, PruneWidths, SearchTree};

#[derive(Debug, Clone)]
pub enum Agent {
    /// Uniform over legal actions.
    Random,
    /// Top-ranked action under the bundle's action-value model, with
    /// epsilon-greedy exploration.
    Greedy { bundle: ModelBundle, epsilon: f64 },
    /// Depth-2 minimax planner.
    Planner { bundle: ModelBundle, widths: PruneWidths },
}

#[derive(Debug, thiserror::Error)]
pub enum PlayError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("planning at wave {wave}: {source}")]
    Planner {
        wave: i32,
        #[source]
        source: PlannerError,
    },
}

/// One agent decision, with the search tree when the agent planned.
#[derive(Debug, Clone)]
pub struct Decision {
    pub action: PurchaseAction,
    pub tree: Option<SearchTree>,
}

impl Agent {
    pub fn planner(bundle: ModelBundle) -> Self {
        Agent::Planner {
            bundle,
            widths: PruneWidths::default(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Agent::Random => "random",
            Agent::Greedy { .. } => "greedy",
            Agent::Planner { .. } => "planner",
        }
    }

    /// Chooses `player`'s action. Model-based agents see the enemy's
    /// position through the player-reversed state.
    pub fn act<R: Rng>(&self, s: &AbstractState, player: Player, config: &GameConfig, rng: &mut R) -> Result<Decision, PlayError> {
        let reversed;
        let view = match player {
            Player::Friendly => s,
            Player::Enemy => {
                reversed = reverse_players(s);
                &reversed
            }
        };
        match self {
            Agent::Random => Ok(Decision {
                action: random_action(view, config, rng),
                tree: None,
            }),
            Agent::Greedy { bundle, epsilon } => {
                let action = if *epsilon > 0.0 && rng.random::<f64>() < *epsilon {
                    random_action(view, config, rng)
                } else {
                    bundle
                        .rank_actions(view, Player::Friendly, 1)?
                        .first()
                        .map_or(PurchaseAction::empty(), |r| r.action)
                };
                Ok(Decision { action, tree: None })
            }
            Agent::Planner { bundle, widths } => {
                let tree = build_tree(bundle, view, *widths).map_err(|source| PlayError::Planner {
                    wave: s.wave_index,
                    source,
                })?;
                Ok(Decision {
                    action: tree.chosen_action,
                    tree: Some(tree),
                })
            }
        }
    }
}

pub fn random_action<R: Rng>(s: &AbstractState, config: &GameConfig, rng: &mut R) -> PurchaseAction {
    let actions = legal_actions(s, Player::Friendly, config);
    if actions.is_empty() {
        PurchaseAction::empty()
    } else {
        actions[rng.random_range(0..actions.len())]
    }
}

/// One wave of a played game. `wave_seed` seeds the simulator's generator for
/// this wave, so the transition can be replayed exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TransitionRecord {
    pub state: AbstractState,
    pub actions: ActionPair,
    pub next: AbstractState,
    pub reward_vector: [f64; 4],
    pub wave_seed: u64,
}

impl TransitionRecord {
    /// Re-runs the simulator on the recorded inputs.
    pub fn replay(&self, config: &GameConfig) -> Result<AbstractState, SimError> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.wave_seed);
        Ok(simulate_wave(&self.state, &self.actions.friendly, &self.actions.enemy, config, &mut rng)?.0)
    }
}

#[derive(Debug, Clone)]
pub struct GameRecord {
    pub seed: u64,
    pub transitions: Vec<TransitionRecord>,
    /// Friendly search trees, indexed like `transitions`, when the friendly
    /// agent planned.
    pub trees: Vec<Option<SearchTree>>,
    pub outcome: Outcome,
}

impl GameRecord {
    pub fn waves(&self) -> usize {
        self.transitions.len()
    }
}

/// Plays one full game. Every random draw comes from a generator seeded with
/// `seed`.
pub fn play_game(friendly: &Agent, enemy: &Agent, config: &GameConfig, seed: u64) -> Result<GameRecord, PlayError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = initial_state(config);
    let mut transitions = Vec::new();
    let mut trees = Vec::new();
    loop {
        let f = friendly.act(&s, Player::Friendly, config, &mut rng)?;
        let e = enemy.act(&s, Player::Enemy, config, &mut rng)?;
        let wave_seed = rng.next_u64();
        let actions = ActionPair::new(f.action, e.action);
        let mut wave_rng = ChaCha8Rng::seed_from_u64(wave_seed);
        let (next, outcome) = simulate_wave(&s, &actions.friendly, &actions.enemy, config, &mut wave_rng)?;
        transitions.push(TransitionRecord {
            state: s,
            actions,
            next: next.clone(),
            reward_vector: outcome.map_or([0.0; 4], |o| o.reward_vector),
            wave_seed,
        });
        trees.push(f.tree);
        s = next;
        if let Some(outcome) = outcome {
            return Ok(GameRecord {
                seed,
                transitions,
                trees,
                outcome,
            });
        }
    }
}

/// Wins of `agent` (as friendly) against `opponent` over `games` seeds
/// starting at `seed`.
pub fn win_count(agent: &Agent, opponent: &Agent, config: &GameConfig, games: u64, seed: u64) -> Result<u64, PlayError> {
    let mut wins = 0;
    for g in 0..games {
        let record = play_game(agent, opponent, config, seed.wrapping_add(g))?;
        wins += (record.outcome.winner == Player::Friendly) as u64;
    }
    Ok(wins)
}
