//! Configuration-driven experiments, report writing and the acceptance suite
//! for `srlab`.

pub mod config;
pub mod oracles;
pub mod report;
pub mod runner;
pub mod suite;
