pub mod ccbf;
pub mod edgecache;
pub mod learning;
pub mod metrics;
pub mod rng;
pub mod simnet;
