//! Flat, named view of a state and an action pair.
//!
//! The order defined here is shared by the feature encoder, the tree store's
//! columns and the rule catalog.

use std::sync::OnceLock;

use super::state::{
    AbstractState, ActionPair, Lane, Player, PurchaseAction, UnitType, NUM_GRIDS, NUM_LANES,
    NUM_PLAYERS, NUM_UNIT_TYPES,
};

pub const NUM_HEALTH: usize = NUM_PLAYERS * NUM_LANES;
pub const NUM_BUILDINGS: usize = NUM_PLAYERS * NUM_LANES * NUM_UNIT_TYPES;
pub const NUM_UNIT_CELLS: usize = NUM_PLAYERS * NUM_LANES * NUM_UNIT_TYPES * NUM_GRIDS;
/// 4 health + 12 building counts + 48 unit-grid counts + 2 currency + wave index.
pub const NUM_STATE_ATTRIBUTES: usize = NUM_HEALTH + NUM_BUILDINGS + NUM_UNIT_CELLS + NUM_PLAYERS + 1;
pub const NUM_ACTION_ATTRIBUTES: usize = 8;

/// What kind of quantity an attribute holds; used for feature scaling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttributeKind {
    Health,
    Buildings,
    Units,
    Currency,
    Wave,
}

pub fn state_attribute_names() -> &'static [String] {
    static NAMES: OnceLock<Vec<String>> = OnceLock::new();
    NAMES.get_or_init(|| {
        let mut names = Vec::with_capacity(NUM_STATE_ATTRIBUTES);
        for p in Player::ALL {
            for l in Lane::ALL {
                names.push(format!("{}Health{}", p.name(), l.title()));
            }
        }
        for p in Player::ALL {
            for l in Lane::ALL {
                for u in UnitType::ALL {
                    names.push(format!("{}{}Bldgs{}", p.name(), u.title(), l.title()));
                }
            }
        }
        for p in Player::ALL {
            for l in Lane::ALL {
                for u in UnitType::ALL {
                    for g in 1..=NUM_GRIDS {
                        names.push(format!("{}{}{}Grid{}", p.name(), u.title(), l.title(), g));
                    }
                }
            }
        }
        for p in Player::ALL {
            names.push(format!("{}Currency", p.name()));
        }
        names.push("waveIndex".to_string());
        names
    })
}

pub fn state_attribute_kind(index: usize) -> AttributeKind {
    if index < NUM_HEALTH {
        AttributeKind::Health
    } else if index < NUM_HEALTH + NUM_BUILDINGS {
        AttributeKind::Buildings
    } else if index < NUM_HEALTH + NUM_BUILDINGS + NUM_UNIT_CELLS {
        AttributeKind::Units
    } else if index < NUM_STATE_ATTRIBUTES - 1 {
        AttributeKind::Currency
    } else {
        AttributeKind::Wave
    }
}

pub fn action_attribute_names() -> &'static [String] {
    static NAMES: OnceLock<Vec<String>> = OnceLock::new();
    NAMES.get_or_init(|| {
        let mut names = Vec::with_capacity(NUM_ACTION_ATTRIBUTES);
        for p in Player::ALL {
            for u in UnitType::ALL {
                names.push(format!("numOf{}BldgsPurchasedBy{}", u.title(), p.title()));
            }
            names.push(format!("laneOf{}", p.title()));
        }
        names
    })
}

pub fn state_to_values(s: &AbstractState) -> [i32; NUM_STATE_ATTRIBUTES] {
    let mut out = [0; NUM_STATE_ATTRIBUTES];
    let mut i = 0;
    let mut push = |v: i32| {
        out[i] = v;
        i += 1;
    };
    s.health.iter().flatten().for_each(|&v| push(v));
    s.buildings.iter().flatten().flatten().for_each(|&v| push(v));
    s.units.iter().flatten().flatten().flatten().for_each(|&v| push(v));
    s.currency.iter().for_each(|&v| push(v));
    push(s.wave_index);
    out
}

/// Inverse of [`state_to_values`]. Panics if `values` is too short.
pub fn state_from_values(values: &[i32]) -> AbstractState {
    assert!(values.len() >= NUM_STATE_ATTRIBUTES, "need {NUM_STATE_ATTRIBUTES} values");
    let mut s = AbstractState::empty();
    let mut it = values.iter().copied();
    let mut next = || it.next().expect("length checked");
    for h in s.health.iter_mut().flatten() {
        *h = next();
    }
    for b in s.buildings.iter_mut().flatten().flatten() {
        *b = next();
    }
    for u in s.units.iter_mut().flatten().flatten().flatten() {
        *u = next();
    }
    for c in s.currency.iter_mut() {
        *c = next();
    }
    s.wave_index = next();
    s
}

/// Lane code used in action columns: 0 for top, 1 for bottom.
pub fn action_to_values(pair: &ActionPair) -> [i32; NUM_ACTION_ATTRIBUTES] {
    let mut out = [0; NUM_ACTION_ATTRIBUTES];
    for (k, a) in [pair.friendly, pair.enemy].iter().enumerate() {
        out[k * 4..k * 4 + 3].copy_from_slice(&a.purchases);
        out[k * 4 + 3] = a.lane.index() as i32;
    }
    out
}

pub fn action_from_values(values: &[i32]) -> ActionPair {
    let one = |k: usize| {
        let lane = Lane::from_index(values[k * 4 + 3].clamp(0, 1) as usize).expect("clamped");
        PurchaseAction::new(lane, [values[k * 4], values[k * 4 + 1], values[k * 4 + 2]])
    };
    ActionPair::new(one(0), one(1))
}

/// Position of a named state attribute.
pub fn state_attribute_index(name: &str) -> Option<usize> {
    state_attribute_names().iter().position(|n| n == name)
}
