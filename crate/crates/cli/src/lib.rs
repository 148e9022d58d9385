//! Batch front end: simulate, run, baseline, eval, bench and oracle.

pub mod bench;
pub mod commands;
pub mod config;
pub mod manifest;
