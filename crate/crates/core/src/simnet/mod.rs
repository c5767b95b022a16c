//! Deterministic discrete-event simulation of the edge network and the three
//! caching schemes.
//!
//! End devices push learning items to their edge node and the data center
//! streams background items to every edge. Each scheme then differs in what
//! edges cache and exchange:
//!
//! - `ccache`: edges record learning items in a counting Bloom filter,
//!   gossip the record to edges within their collaboration range, skip
//!   items a neighbour already holds, and request differentiated data when
//!   their learner stalls. The range grows when a round brings no new data.
//! - `pcache`: edges cache everything and periodically send a key digest to
//!   one peer, which returns items missing from the digest.
//! - `centralized`: edges forward learning items to the data center, which
//!   trains every sub-model itself.
//!
//! Events at equal times run in insertion order, so a run is a pure
//! function of its configuration, scheme and seed.

mod config;
mod engine;
mod learner;
mod queue;
mod topology;

pub use config::{
    derive_seed, CcbfConfig, ConfigError, LearnerConfig, LearnerKind, ScenarioConfig, SchemeConfig,
    SeedsConfig, WorkloadConfig,
};
pub use engine::{
    run, run_with, widen_range, CacheDump, Counters, OverheadBreakdown, Payload, Request,
    RunOptions, RunResult,
};
pub use learner::Learner;
pub use queue::EventQueue;
pub use topology::{transmission_delay, EdgeLinks, Link, NodeKind, Topology, TopologyConfig};

use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scheme {
    CCache,
    PCache,
    Centralized,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [Scheme::CCache, Scheme::PCache, Scheme::Centralized];

    pub fn name(self) -> &'static str {
        match self {
            Self::CCache => "ccache",
            Self::PCache => "pcache",
            Self::Centralized => "centralized",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| format!("unknown scheme {s:?} (expected ccache, pcache or centralized)"))
    }
}

/// Runs several schemes on the same scenario and seed, one thread each.
pub fn run_parallel(
    cfg: &ScenarioConfig,
    schemes: &[Scheme],
    seed: u64,
    opts: &RunOptions,
) -> Result<Vec<RunResult>, ConfigError> {
    cfg.validate()?;
    std::thread::scope(|s| {
        let handles: Vec<_> = schemes
            .iter()
            .map(|&scheme| s.spawn(move || run_with(cfg, scheme, seed, opts)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("simulation thread panicked"))
            .collect()
    })
}
