//! Runtime checkpoint-interval tuning for distributed stream processing jobs.
//!
//! The crate implements a three-stage pipeline around a deterministic
//! discrete-event simulator of a checkpointed streaming job:
//!
//! 1. **Record** ([`workload`]): capture or generate a per-second workload
//!    trace, smooth it, and pick failure points spanning the observed
//!    throughput range.
//! 2. **Profile** ([`profiler`]): replay the trace into one simulated
//!    deployment per candidate checkpoint interval, inject worst-case
//!    failures at each failure point, and measure latencies plus
//!    anomaly-detected recovery times ([`anomaly`]).
//! 3. **Optimize** ([`modeling`], [`optimizer`]): fit latency and recovery
//!    regression models from the profiling matrix, then run a control loop
//!    that watches QoS bounds, forecasts the input rate, and reconfigures
//!    the interval through controlled restarts when both bounds can be met.
//!
//! [`pipeline_sim`] stands in for the production cluster and doubles as the
//! ground-truth oracle for everything the detector and models estimate.

pub mod anomaly;
pub mod arima;
pub mod domain;
pub mod error;
pub mod experiment;
pub mod modeling;
pub mod optimizer;
pub mod pipeline_sim;
pub mod profiler;
pub mod workload;

pub use error::{Error, Result};

/// Derives a sub-seed from a root seed and a purpose tag.
///
/// Every randomized component takes its own derived seed so that one
/// scenario seed fans out deterministically, independent of the order in
/// which runs execute.
pub fn derive_seed(seed: u64, tag: &str) -> u64 {
    // FNV-1a over the tag, mixed with splitmix64.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.as_bytes() {
        h = (h ^ u64::from(*b)).wrapping_mul(0x0000_0100_0000_01b3);
    }
    splitmix64(seed ^ h)
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
