//! Command-line front end and HTTP API for the towcheck workbench.

pub mod api;
pub mod cli;
