//! The two symmetry transforms of the game: swapping lanes and swapping players.
//!
//! Both are involutions. The simulator in deterministic mode is equivariant
//! under both, which makes them exact oracles for symmetry rules.

use super::state::{AbstractState, ActionPair, PurchaseAction, NUM_GRIDS, NUM_LANES, NUM_PLAYERS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Transform {
    /// Swap the top and bottom lanes.
    Flip,
    /// Swap the two players and mirror the grid.
    Reverse,
}

impl Transform {
    pub const ALL: [Transform; 2] = [Transform::Flip, Transform::Reverse];

    pub fn state(self, s: &AbstractState) -> AbstractState {
        match self {
            Transform::Flip => flip_lanes(s),
            Transform::Reverse => reverse_players(s),
        }
    }

    pub fn actions(self, pair: &ActionPair) -> ActionPair {
        match self {
            Transform::Flip => ActionPair::new(flip_action(&pair.friendly), flip_action(&pair.enemy)),
            Transform::Reverse => reverse_action_pair(pair),
        }
    }

    pub fn win_vector(self, v: &[f64; 4]) -> [f64; 4] {
        match self {
            Transform::Flip => flip_win_vector(v),
            Transform::Reverse => reverse_win_vector(v),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Transform::Flip => "flip",
            Transform::Reverse => "reverse",
        }
    }
}

pub fn flip_lanes(s: &AbstractState) -> AbstractState {
    let mut out = s.clone();
    for p in 0..NUM_PLAYERS {
        for l in 0..NUM_LANES {
            out.health[p][l] = s.health[p][1 - l];
            out.buildings[p][l] = s.buildings[p][1 - l];
            out.units[p][l] = s.units[p][1 - l];
        }
    }
    out
}

pub fn flip_action(a: &PurchaseAction) -> PurchaseAction {
    PurchaseAction::new(a.lane.other(), a.purchases)
}

/// Swaps friendly and enemy and mirrors grid `g` to `5 - g`.
pub fn reverse_players(s: &AbstractState) -> AbstractState {
    let mut out = s.clone();
    for p in 0..NUM_PLAYERS {
        let q = 1 - p;
        out.health[p] = s.health[q];
        out.buildings[p] = s.buildings[q];
        out.currency[p] = s.currency[q];
        for l in 0..NUM_LANES {
            for (u, cells) in s.units[q][l].iter().enumerate() {
                for g in 0..NUM_GRIDS {
                    out.units[p][l][u][g] = cells[NUM_GRIDS - 1 - g];
                }
            }
        }
    }
    out
}

/// `(a_f, a_e)` maps to `(a_e, a_f)`; lanes are unaffected by the player swap.
pub fn reverse_action_pair(pair: &ActionPair) -> ActionPair {
    ActionPair::new(pair.enemy, pair.friendly)
}

pub fn flip_win_vector(v: &[f64; 4]) -> [f64; 4] {
    [v[1], v[0], v[3], v[2]]
}

pub fn reverse_win_vector(v: &[f64; 4]) -> [f64; 4] {
    [v[2], v[3], v[0], v[1]]
}
