//! Behavioral testing workbench for a planning agent playing Tug-of-War.

pub mod game;
pub mod models;
pub mod nn;
pub mod planner;
pub mod query;
pub mod play;
pub mod dsl;
pub mod episode;
pub mod store;
pub mod training;
