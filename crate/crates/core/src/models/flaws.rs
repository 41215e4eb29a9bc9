//! Named, parameterized perturbations applied on top of a backend's
//! predictions. They give rules a ground-truth defect to find.
//!
//! Every random choice is a hash of the model input, so a flawed backend is
//! still a deterministic function of its inputs.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::game::attributes::{action_to_values, state_to_values};
use crate::game::{AbstractState, ActionPair, Lane, Player, UnitType};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "camelCase", deny_unknown_fields)]
pub enum Flaw {
    /// With the given probability, the predicted base health of `player` in
    /// `lane` is raised by `amount`.
    #[serde(rename_all = "camelCase")]
    HealthInflation {
        lane: Lane,
        player: Player,
        amount: i32,
        probability: f64,
    },
    /// Adds `count` units of `unit` to every predicted state, in
    /// `player`'s `lane` at `grid` (defaults: friendly, top, grid 2).
    #[serde(rename_all = "camelCase")]
    PhantomUnits {
        unit: UnitType,
        count: i32,
        #[serde(default = "default_player")]
        player: Player,
        #[serde(default = "default_lane")]
        lane: Lane,
        #[serde(default = "default_grid")]
        grid: usize,
    },
    /// Adds input-dependent noise in `[-scale, scale]` to every predicted unit
    /// count, breaking both symmetries.
    AsymmetryNoise { scale: f64 },
    /// Adds `epsilon` to the win components of any player who has already
    /// lost a base.
    WinProbLeak { epsilon: f64 },
    /// The ranker returns the lowest-scored actions first.
    InvertRanking,
}

fn default_player() -> Player {
    Player::Friendly
}

fn default_lane() -> Lane {
    Lane::Top
}

fn default_grid() -> usize {
    2
}

/// Which model a flaw perturbs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Component {
    Transition,
    Ranker,
    Value,
}

impl Flaw {
    /// The `kind` tag used in flaw specs.
    pub fn name(&self) -> &'static str {
        match self {
            Flaw::HealthInflation { .. } => "healthInflation",
            Flaw::PhantomUnits { .. } => "phantomUnits",
            Flaw::AsymmetryNoise { .. } => "asymmetryNoise",
            Flaw::WinProbLeak { .. } => "winProbLeak",
            Flaw::InvertRanking => "invertRanking",
        }
    }

    pub fn component(&self) -> Component {
        match self {
            Flaw::HealthInflation { .. } | Flaw::PhantomUnits { .. } | Flaw::AsymmetryNoise { .. } => {
                Component::Transition
            }
            Flaw::WinProbLeak { .. } => Component::Value,
            Flaw::InvertRanking => Component::Ranker,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlawSpec {
    #[serde(default, rename = "flaw")]
    pub flaws: Vec<Flaw>,
}

#[derive(Debug, thiserror::Error)]
pub enum FlawSpecError {
    #[error("reading flaw spec: {0}")]
    Io(#[from] std::io::Error),
    #[error("parsing flaw spec: {0}")]
    Parse(#[from] toml::de::Error),
}

impl FlawSpec {
    pub fn from_toml_str(text: &str) -> Result<Self, FlawSpecError> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, FlawSpecError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("flaw spec serializes")
    }
}

/// splitmix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stable hash of a transition input.
pub fn input_key(s: &AbstractState, pair: &ActionPair) -> u64 {
    let mut h = 0x243f_6a88_85a3_08d3u64;
    for v in state_to_values(s).iter().chain(action_to_values(pair).iter()) {
        h = mix(h ^ (*v as u32 as u64));
    }
    h
}

/// Uniform draw in `[0, 1)` derived from a key and a salt.
fn unit(key: u64, salt: u64) -> f64 {
    (mix(key ^ mix(salt)) >> 11) as f64 / (1u64 << 53) as f64
}

/// Applies transition flaws to a predicted next state.
pub fn perturb_transition(flaws: &[Flaw], input: &AbstractState, pair: &ActionPair, predicted: &mut AbstractState) {
    let mut key = None;
    for (i, flaw) in flaws.iter().enumerate() {
        let salt = i as u64 + 1;
        match *flaw {
            Flaw::HealthInflation {
                lane,
                player,
                amount,
                probability,
            } => {
                let k = *key.get_or_insert_with(|| input_key(input, pair));
                if unit(k, salt) < probability {
                    predicted.health[player.index()][lane.index()] += amount;
                }
            }
            Flaw::PhantomUnits {
                unit,
                count,
                player,
                lane,
                grid,
            } => {
                let g = grid.clamp(1, 4) - 1;
                predicted.units[player.index()][lane.index()][unit.index()][g] += count;
            }
            Flaw::AsymmetryNoise { scale } => {
                let k = *key.get_or_insert_with(|| input_key(input, pair));
                let mut n = 0u64;
                for cell in predicted.units.iter_mut().flatten().flatten().flatten() {
                    n += 1;
                    let noise = (scale * (2.0 * unit(k, salt.wrapping_mul(1000) + n) - 1.0)).round() as i32;
                    *cell = (*cell + noise).max(0);
                }
            }
            Flaw::WinProbLeak { .. } | Flaw::InvertRanking => {}
        }
    }
}

/// Applies value flaws to a friendly-perspective win vector.
pub fn perturb_value(flaws: &[Flaw], s: &AbstractState, v: &mut [f64; 4]) {
    for flaw in flaws {
        if let Flaw::WinProbLeak { epsilon } = *flaw {
            for p in Player::ALL {
                if s.health[p.index()].iter().any(|&h| h <= 0) {
                    for c in &mut v[p.index() * 2..p.index() * 2 + 2] {
                        *c = (*c + epsilon).clamp(0.0, 1.0);
                    }
                }
            }
        }
    }
}

pub fn inverts_ranking(flaws: &[Flaw]) -> bool {
    flaws.iter().any(|f| matches!(f, Flaw::InvertRanking))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::PurchaseAction;

    #[test]
    fn spec_file_parses_all_families() {
        let text = r#"
[[flaw]]
kind = "healthInflation"
lane = "top"
player = "enemy"
amount = 10
probability = 0.3

[[flaw]]
kind = "phantomUnits"
unit = "immortal"
count = 1

[[flaw]]
kind = "asymmetryNoise"
scale = 2.0

[[flaw]]
kind = "winProbLeak"
epsilon = 0.05

[[flaw]]
kind = "invertRanking"
"#;
        let spec = FlawSpec::from_toml_str(text).unwrap();
        assert_eq!(spec.flaws.len(), 5);
        assert_eq!(
            spec.flaws[1],
            Flaw::PhantomUnits {
                unit: UnitType::Immortal,
                count: 1,
                player: Player::Friendly,
                lane: Lane::Top,
                grid: 2
            }
        );
        assert_eq!(FlawSpec::from_toml_str(&spec.to_toml_string()).unwrap(), spec);
        assert!(FlawSpec::from_toml_str("[[flaw]]\nkind = \"meteor\"").is_err());
    }

    #[test]
    fn perturbations_are_deterministic() {
        let s = AbstractState::empty();
        let pair = ActionPair::new(PurchaseAction::empty(), PurchaseAction::empty());
        let flaws = [Flaw::AsymmetryNoise { scale: 3.0 }];
        let mut a = s.clone();
        let mut b = s.clone();
        perturb_transition(&flaws, &s, &pair, &mut a);
        perturb_transition(&flaws, &s, &pair, &mut b);
        assert_eq!(a, b);
        assert_ne!(a, s);
    }

    #[test]
    fn inflation_rate_tracks_probability() {
        let flaws = [Flaw::HealthInflation {
            lane: Lane::Top,
            player: Player::Enemy,
            amount: 10,
            probability: 0.3,
        }];
        let pair = ActionPair::new(PurchaseAction::empty(), PurchaseAction::empty());
        let mut hits = 0;
        for i in 0..2000 {
            let mut s = AbstractState::empty();
            s.currency = [i, 0];
            let mut p = s.clone();
            perturb_transition(&flaws, &s, &pair, &mut p);
            hits += (p.health[1][0] == 10) as i32;
        }
        assert!((500..700).contains(&hits), "{hits}");
    }

    #[test]
    fn leak_only_touches_losers() {
        let mut s = AbstractState::empty();
        s.health = [[0, 100], [100, 100]];
        let mut v = [0.0, 0.0, 1.0, 0.0];
        perturb_value(&[Flaw::WinProbLeak { epsilon: 0.1 }], &s, &mut v);
        assert_eq!(v, [0.1, 0.1, 1.0, 0.0]);
    }
}
