//! Command-line experiment drivers: configuration, subcommands and report
//! emission.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;
