//! Monte Carlo experiments, the flop model and result files.

pub mod flops;
pub mod matching;
pub mod montecarlo;
pub mod results;
pub mod scenario;
pub mod snapshot_io;
pub mod verify;
