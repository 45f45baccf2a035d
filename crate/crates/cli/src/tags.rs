//! Substream tags of the master seed. Every random quantity in a run is
//! drawn from `SeedStream::new(seed).substream(TAG)`, further keyed by grid
//! index, so results do not depend on scheduling or thread count.

pub const CALIBRATION: u64 = 0;
pub const ENDPOINTS: u64 = 1;
pub const COUPLING: u64 = 2;
pub const TV: u64 = 3;
pub const TRACE: u64 = 4;
pub const DELTA: u64 = 5;
pub const SUITES: u64 = 6;
