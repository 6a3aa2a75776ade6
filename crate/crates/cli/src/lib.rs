//! Command-line front end of the cavcool toolkit.

pub mod cli;
pub mod config;
pub mod output;
pub mod resolve;
pub mod runs;
