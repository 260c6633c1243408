//! FLOP accounting, energy estimates and timing sweeps.

pub mod energy;
pub mod flops;
pub mod sweep;
