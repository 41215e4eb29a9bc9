//! The Tug-of-War abstraction: states, actions, a deterministic-capable wave
//! simulator and the lane/player symmetry transforms.

pub mod attributes;
pub mod config;
pub mod sim;
pub mod state;
pub mod symmetry;

pub use config::{GameConfig, PerUnit};
pub use sim::{
    action_cost, check_legal, initial_state, is_terminal, legal_actions, outcome_of, simulate_wave,
    SimError,
};
pub use state::{
    AbstractState, ActionPair, Lane, Outcome, Player, PurchaseAction, UnitType, WinCondition,
};
pub use symmetry::{flip_action, flip_lanes, reverse_action_pair, reverse_players, Transform};
