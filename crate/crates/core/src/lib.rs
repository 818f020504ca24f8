//! Sample size and power calculations for micro-randomized trials, with a
//! Monte Carlo engine that checks the analytic answers by simulating
//! participant trajectories.

pub mod design;
pub mod numerics;
pub mod power;
pub mod protocol;
pub mod simulate;
pub mod trends;
