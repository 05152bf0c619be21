//! Configuration, orchestration and artifact output for robust sample size
//! studies.

pub mod commands;
pub mod config;
pub mod output;
