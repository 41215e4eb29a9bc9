//! The model suite behind the planner: transition model, action ranker and
//! state-value function, each backed by the exact simulator, a flaw-injected
//! variant of it, or a trained network.

pub mod exact;
pub mod features;
pub mod flaws;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use ndarray::Array2;

use crate::game::{
    check_legal, legal_actions, outcome_of, reverse_players, AbstractState, ActionPair,
    GameConfig, Player, PurchaseAction, SimError,
};
use crate::nn::Mlp;
pub use exact::Lookahead;
use features::{FeatureScales, ACTION_FEATURES};
pub use flaws::{Component, Flaw, FlawSpec};

/// Four win-condition probabilities in reward-vector order, friendly
/// perspective: friendly destroys enemy top / bottom, enemy destroys
/// friendly top / bottom.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct QVector(pub [f64; 4]);

impl QVector {
    /// Raw sum of `player`'s two destroy components.
    pub fn scalar(&self, player: Player) -> f64 {
        let i = player.index() * 2;
        self.0[i] + self.0[i + 1]
    }

    /// Reported win probability: the scalar value capped at 1.
    pub fn win_probability(&self, player: Player) -> f64 {
        self.scalar(player).min(1.0)
    }

    /// The same vector seen from the other player's side.
    pub fn swap_players(&self) -> QVector {
        let v = self.0;
        QVector([v[2], v[3], v[0], v[1]])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendKind {
    Exact,
    Flawed,
    Learned,
}

/// A trained network together with the scaling its inputs were built with.
#[derive(Debug, Clone)]
pub struct LearnedNet {
    pub net: Mlp,
    pub scales: FeatureScales,
}

#[derive(Debug, Clone)]
pub enum TransitionModel {
    Exact,
    Learned(Arc<LearnedNet>),
}

#[derive(Debug, Clone)]
pub enum ActionValueModel {
    Exact(Lookahead),
    Learned(Arc<LearnedNet>),
}

#[derive(Debug, Clone)]
pub enum StateValueModel {
    /// Hand-written estimate over the true game state.
    Exact,
    /// Value of the best action under the action-value model.
    MaxQ,
    /// Distilled network mapping a state directly to a win vector.
    Learned(Arc<LearnedNet>),
}

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Illegal(#[from] SimError),
    #[error("network input width {actual} does not match expected {expected}")]
    Shape { expected: usize, actual: usize },
}

/// Counts reported win probabilities whose raw sum exceeded 1.
#[derive(Debug, Default)]
pub struct Diagnostics {
    overflowing_win_sums: AtomicU64,
}

impl Diagnostics {
    pub fn overflowing_win_sums(&self) -> u64 {
        self.overflowing_win_sums.load(Ordering::Relaxed)
    }
}

#[derive(Debug, Clone)]
pub struct ModelBundle {
    /// Rules used for legality and for the exact components; always in
    /// deterministic mode.
    pub config: GameConfig,
    pub transition: TransitionModel,
    pub action_value: ActionValueModel,
    pub state_value: StateValueModel,
    pub flaws: Vec<Flaw>,
    pub diagnostics: Arc<Diagnostics>,
}

/// An action chosen by the ranker with its position in `legal_actions`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankedAction {
    pub action: PurchaseAction,
    pub enumeration_index: usize,
    pub score: f64,
}

impl ModelBundle {
    pub fn exact(config: &GameConfig) -> Self {
        ModelBundle {
            config: config.deterministic(),
            transition: TransitionModel::Exact,
            action_value: ActionValueModel::Exact(Lookahead::Passive),
            state_value: StateValueModel::Exact,
            flaws: Vec::new(),
            diagnostics: Arc::default(),
        }
    }

    pub fn flawed(config: &GameConfig, flaws: Vec<Flaw>) -> Self {
        ModelBundle {
            flaws,
            ..Self::exact(config)
        }
    }

    /// Bundle of trained networks. Without a distilled value net the state
    /// value is the best action value.
    pub fn learned(config: &GameConfig, q: Mlp, dynamics: Mlp, value: Option<Mlp>) -> Self {
        let scales = FeatureScales::for_config(config);
        let wrap = |net| Arc::new(LearnedNet { net, scales });
        ModelBundle {
            config: config.deterministic(),
            transition: TransitionModel::Learned(wrap(dynamics)),
            action_value: ActionValueModel::Learned(wrap(q)),
            state_value: value.map_or(StateValueModel::MaxQ, |v| StateValueModel::Learned(wrap(v))),
            flaws: Vec::new(),
            diagnostics: Arc::default(),
        }
    }

    /// Replaces the ranker with a trained Q-net, keeping the other components.
    pub fn with_action_value(mut self, q: Mlp) -> Self {
        self.action_value = ActionValueModel::Learned(Arc::new(LearnedNet {
            net: q,
            scales: FeatureScales::for_config(&self.config),
        }));
        self
    }

    pub fn with_flaws(mut self, flaws: Vec<Flaw>) -> Self {
        self.flaws = flaws;
        self
    }

    pub fn kind(&self, component: Component) -> BackendKind {
        let learned = match component {
            Component::Transition => matches!(self.transition, TransitionModel::Learned(_)),
            Component::Ranker => matches!(self.action_value, ActionValueModel::Learned(_)),
            Component::Value => match self.state_value {
                StateValueModel::Learned(_) => true,
                StateValueModel::MaxQ => matches!(self.action_value, ActionValueModel::Learned(_)),
                StateValueModel::Exact => false,
            },
        };
        if learned {
            BackendKind::Learned
        } else if self.flaws.iter().any(|f| f.component() == component) {
            BackendKind::Flawed
        } else {
            BackendKind::Exact
        }
    }

    /// Predicts the next state and reward vector for a joint action.
    pub fn predict_transition(&self, s: &AbstractState, pair: &ActionPair) -> Result<(AbstractState, QVector), ModelError> {
        check_legal(s, Player::Friendly, &pair.friendly, &self.config)?;
        check_legal(s, Player::Enemy, &pair.enemy, &self.config)?;
        let (mut next, reward) = match &self.transition {
            TransitionModel::Exact => exact::exact_transition(s, &pair.friendly, &pair.enemy, &self.config)?,
            TransitionModel::Learned(m) => {
                let mut x = Vec::with_capacity(m.net.input_width());
                m.scales.encode_state_into(s, &mut x);
                m.scales.encode_action_into(&pair.friendly, &mut x);
                m.scales.encode_action_into(&pair.enemy, &mut x);
                let y = run(&m.net, x, 1)?;
                let row = y.row(0);
                let out = row.as_slice().expect("contiguous");
                let n = out.len();
                let next = m.scales.decode_state(&out[..n - 4]);
                let r = [out[n - 4], out[n - 3], out[n - 2], out[n - 1]].map(|v| v as f64);
                (next, r)
            }
        };
        flaws::perturb_transition(&self.flaws, s, pair, &mut next);
        Ok((next, QVector(reward)))
    }

    /// Action values of `actions` for `player` in `s`. The enemy's values are
    /// computed on the player-reversed state and mapped back.
    pub fn q_values_batch(&self, s: &AbstractState, actions: &[PurchaseAction], player: Player) -> Result<Vec<QVector>, ModelError> {
        let reversed;
        let view = match player {
            Player::Friendly => s,
            Player::Enemy => {
                reversed = reverse_players(s);
                &reversed
            }
        };
        let raw = self.friendly_q_batch(view, actions)?;
        Ok(match player {
            Player::Friendly => raw,
            Player::Enemy => raw.iter().map(QVector::swap_players).collect(),
        })
    }

    pub fn q_values(&self, s: &AbstractState, action: &PurchaseAction, player: Player) -> Result<QVector, ModelError> {
        Ok(self.q_values_batch(s, std::slice::from_ref(action), player)?[0])
    }

    fn friendly_q_batch(&self, s: &AbstractState, actions: &[PurchaseAction]) -> Result<Vec<QVector>, ModelError> {
        match &self.action_value {
            ActionValueModel::Exact(lookahead) => actions
                .iter()
                .map(|a| Ok(QVector(exact::exact_q(s, a, &self.config, *lookahead)?)))
                .collect(),
            ActionValueModel::Learned(m) => {
                if actions.is_empty() {
                    return Ok(Vec::new());
                }
                let mut state = Vec::with_capacity(m.net.input_width());
                m.scales.encode_state_into(s, &mut state);
                let mut x = Vec::with_capacity(actions.len() * (state.len() + ACTION_FEATURES));
                for a in actions {
                    x.extend_from_slice(&state);
                    m.scales.encode_action_into(a, &mut x);
                }
                let y = run(&m.net, x, actions.len())?;
                Ok(y.rows()
                    .into_iter()
                    .map(|r| QVector([r[0] as f64, r[1] as f64, r[2] as f64, r[3] as f64]))
                    .collect())
            }
        }
    }

    /// Top-`k` legal actions for `player` by that player's scalar value,
    /// ties broken by enumeration order.
    pub fn rank_actions(&self, s: &AbstractState, player: Player, k: usize) -> Result<Vec<RankedAction>, ModelError> {
        let actions = legal_actions(s, player, &self.config);
        let q = self.q_values_batch(s, &actions, player)?;
        let invert = flaws::inverts_ranking(&self.flaws);
        let mut ranked: Vec<RankedAction> = actions
            .into_iter()
            .zip(q)
            .enumerate()
            .map(|(i, (action, q))| RankedAction {
                action,
                enumeration_index: i,
                score: if invert { -q.scalar(player) } else { q.scalar(player) },
            })
            .collect();
        ranked.sort_by(|a, b| {
            b.score
                .total_cmp(&a.score)
                .then(a.enumeration_index.cmp(&b.enumeration_index))
        });
        ranked.truncate(k.max(1));
        Ok(ranked)
    }

    /// Best action value for `friendly` by definition: the max over legal
    /// actions of the scalar value, with the argmax.
    pub fn state_value_by_max_q(&self, s: &AbstractState, player: Player) -> Result<(QVector, Option<PurchaseAction>), ModelError> {
        let actions = legal_actions(s, player, &self.config);
        if actions.is_empty() {
            let v = match self.action_value {
                ActionValueModel::Exact(_) => QVector(exact::heuristic_vector(s, &self.config)),
                // A finished game has no legal moves; ask the network about
                // standing still so that its opinion stays observable.
                ActionValueModel::Learned(_) => self.q_values(s, &PurchaseAction::empty(), player)?,
            };
            return Ok((v, None));
        }
        let q = self.q_values_batch(s, &actions, player)?;
        let mut best = 0;
        for i in 1..q.len() {
            if q[i].scalar(player) > q[best].scalar(player) {
                best = i;
            }
        }
        Ok((q[best], Some(actions[best])))
    }

    /// Decomposed win probabilities of a state (friendly perspective), as
    /// shown on every tree node.
    pub fn win_vector(&self, s: &AbstractState) -> Result<QVector, ModelError> {
        let mut v = match &self.state_value {
            StateValueModel::Exact => QVector(exact::heuristic_vector(s, &self.config)),
            StateValueModel::MaxQ => self.state_value_by_max_q(s, Player::Friendly)?.0,
            StateValueModel::Learned(m) => {
                let x = m.scales.encode_state(s);
                let y = run(&m.net, x, 1)?;
                let r = y.row(0);
                QVector([r[0] as f64, r[1] as f64, r[2] as f64, r[3] as f64])
            }
        };
        flaws::perturb_value(&self.flaws, s, &mut v.0);
        Ok(v)
    }

    /// Probability that `player` wins from `s`, capped at 1. A raw sum above
    /// 1 is counted in [`Diagnostics`].
    pub fn state_value(&self, s: &AbstractState, player: Player) -> Result<f64, ModelError> {
        let v = self.win_vector(s)?;
        Ok(self.report(&v, player))
    }

    /// Caps a scalar value at 1, recording overflow.
    pub fn report(&self, v: &QVector, player: Player) -> f64 {
        let raw = v.scalar(player);
        if raw > 1.0 + 1e-9 {
            self.diagnostics
                .overflowing_win_sums
                .fetch_add(1, Ordering::Relaxed);
        }
        raw.min(1.0)
    }

    /// Whether the game is over in `s` according to the rules.
    pub fn is_terminal(&self, s: &AbstractState) -> bool {
        outcome_of(s, &self.config).is_some()
    }
}

fn run(net: &Mlp, x: Vec<f32>, rows: usize) -> Result<Array2<f32>, ModelError> {
    let width = x.len() / rows.max(1);
    if width != net.input_width() {
        return Err(ModelError::Shape {
            expected: net.input_width(),
            actual: width,
        });
    }
    let x = Array2::from_shape_vec((rows, width), x).expect("length is rows × width");
    Ok(net.forward(x.view()))
}
