//! Command-line front end: preprocessing, single-query recommendation,
//! batch evaluation and synthetic data generation.

pub mod args;
pub mod commands;
pub mod config;

pub use args::Cli;
pub use commands::{run, Status};
