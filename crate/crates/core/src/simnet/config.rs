use super::topology::TopologyConfig;
use crate::ccbf::CcbfParams;
use crate::learning::{MlpParams, SyntheticParams, TaskParams};
use crate::rng::mix64;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config key `{path}`: {message}")]
    Parse { path: String, message: String },
    #[error("config key `{field}`: {reason}")]
    Invalid { field: String, reason: String },
}

impl ConfigError {
    fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Self::Invalid {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// Dotted path of the offending key, when known.
    pub fn key_path(&self) -> Option<&str> {
        match self {
            Self::Io { .. } => None,
            Self::Parse { path, .. } => Some(path),
            Self::Invalid { field, .. } => Some(field),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchemeConfig {
    /// Interval between periodic requests in the periodic scheme.
    pub p_cache_period_s: f64,
    /// Interval between record broadcasts in the adaptive scheme.
    pub record_exchange_period_s: f64,
    pub initial_range_hops: u32,
    /// Defaults to the largest hop distance between two edge nodes.
    pub max_range_hops: Option<u32>,
    /// Items returned per request.
    pub request_budget: u32,
    /// Interval between training rounds.
    pub train_round_s: f64,
    /// A learner whose last round gained less accuracy than this asks its
    /// neighbours for data.
    pub stall_gain: f64,
    pub snapshot_period_s: f64,
    /// Simulated time limit.
    pub horizon_s: f64,
    /// Bytes of one model upload to the data center.
    pub model_upload_bytes: u64,
}

impl Default for SchemeConfig {
    fn default() -> Self {
        Self {
            p_cache_period_s: 60.0,
            record_exchange_period_s: 45.0,
            initial_range_hops: 1,
            max_range_hops: None,
            request_budget: 64,
            train_round_s: 10.0,
            stall_gain: 0.01,
            snapshot_period_s: 10.0,
            horizon_s: 20_000.0,
            model_upload_bytes: 65_536,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CcbfConfig {
    pub m: u32,
    pub g: u8,
    pub k: u8,
    pub n: u32,
    /// Derived from the run seed when absent.
    pub hash_seed: Option<u64>,
    pub matrix_seed: Option<u64>,
}

impl Default for CcbfConfig {
    fn default() -> Self {
        let p = CcbfParams::with_seeds(0, 0);
        Self {
            m: p.m,
            g: p.g,
            k: p.k,
            n: p.n,
            hash_seed: None,
            matrix_seed: None,
        }
    }
}

impl CcbfConfig {
    pub fn params(&self, run_seed: u64) -> CcbfParams {
        CcbfParams {
            m: self.m,
            g: self.g,
            k: self.k,
            n: self.n,
            hash_seed: self.hash_seed.unwrap_or_else(|| derive_seed(run_seed, 3)),
            matrix_seed: self.matrix_seed.unwrap_or_else(|| derive_seed(run_seed, 4)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkloadConfig {
    /// Distinct learning items, split evenly over the end devices.
    pub learning_items: u64,
    /// Poisson arrival rate of learning items at each end device.
    pub device_rate_hz: f64,
    /// Poisson rate of background items sent from the data center to each
    /// edge node.
    pub background_rate_hz: f64,
    pub learning_bytes: u32,
    pub background_bytes: u32,
    /// Class prior of learning items.
    pub class_weights: Vec<f64>,
    pub feature_dims: usize,
    pub separation: f64,
    /// Fraction of learning items also observed by a device attached to
    /// another edge node.
    pub shared_fraction: f64,
    /// Range of the delay before the second observation.
    pub shared_delay_s: [f64; 2],
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        let task = TaskParams::default();
        Self {
            learning_items: 12_000,
            device_rate_hz: 0.5,
            background_rate_hz: 2.0,
            learning_bytes: 1024,
            background_bytes: 4096,
            class_weights: task.class_weights,
            feature_dims: task.feature_dims,
            separation: task.separation,
            shared_fraction: 0.3,
            shared_delay_s: [40.0, 160.0],
        }
    }
}

impl WorkloadConfig {
    pub fn task(&self) -> TaskParams {
        TaskParams {
            class_weights: self.class_weights.clone(),
            feature_dims: self.feature_dims,
            separation: self.separation,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LearnerKind {
    Synthetic,
    Mlp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnerConfig {
    pub kind: LearnerKind,
    /// `dims` is taken from the number of classes.
    pub synthetic: SyntheticParams,
    pub mlp: MlpParams,
    /// Convergence window in training rounds.
    pub window: usize,
    /// Minimum accuracy gain over the window to count as still improving.
    pub epsilon: f64,
    pub validation_size: usize,
    pub test_size: usize,
    /// Sub-models trained by the data center in the centralized scheme.
    pub central_models: usize,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            kind: LearnerKind::Synthetic,
            synthetic: SyntheticParams {
                a0: 0.3,
                amax: 0.9,
                tau: 400.0,
                rho: 0.3,
                dims: 6,
                noise_rank: 64,
            },
            mlp: MlpParams::default(),
            window: 5,
            epsilon: 0.002,
            validation_size: 2000,
            test_size: 5000,
            central_models: 4,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeedsConfig {
    /// Arrivals, labels and features. Derived from the run seed if absent.
    pub workload: Option<u64>,
    /// Learner noise and initialization. Derived from the run seed if absent.
    pub model: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub topology: TopologyConfig,
    pub scheme: SchemeConfig,
    pub ccbf: CcbfConfig,
    pub workload: WorkloadConfig,
    pub learner: LearnerConfig,
    pub seeds: SeedsConfig,
}

pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    mix64(seed ^ mix64(stream.wrapping_add(0x5EED)))
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| ConfigError::Parse {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn workload_seed(&self, run_seed: u64) -> u64 {
        self.seeds
            .workload
            .unwrap_or_else(|| derive_seed(run_seed, 1))
    }

    pub fn model_seed(&self, run_seed: u64) -> u64 {
        self.seeds.model.unwrap_or_else(|| derive_seed(run_seed, 2))
    }

    pub fn max_range(&self, edge_diameter: u32) -> u32 {
        self.scheme.max_range_hops.unwrap_or(edge_diameter).max(1)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        fn bad(field: impl Into<String>, reason: impl Into<String>) -> ConfigError {
            ConfigError::invalid(field, reason)
        }
        let positive = |v: f64, field: &str| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(bad(field, format!("must be positive and finite, got {v}")))
            }
        };
        let nonneg = |v: f64, field: &str| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(bad(
                    field,
                    format!("must be nonnegative and finite, got {v}"),
                ))
            }
        };
        let unit = |v: f64, field: &str| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(bad(field, format!("must lie in [0, 1], got {v}")))
            }
        };

        let t = &self.topology;
        if t.edges == 0 {
            return Err(bad("topology.edges", "must be at least 1"));
        }
        if t.devices_per_edge == 0 {
            return Err(bad("topology.devices_per_edge", "must be at least 1"));
        }
        if t.cache_capacity == 0 {
            return Err(bad("topology.cache_capacity", "must be at least 1"));
        }
        positive(t.bandwidth_bps, "topology.bandwidth_bps")?;
        nonneg(t.propagation_delay_s, "topology.propagation_delay_s")?;

        let s = &self.scheme;
        positive(s.p_cache_period_s, "scheme.p_cache_period_s")?;
        positive(
            s.record_exchange_period_s,
            "scheme.record_exchange_period_s",
        )?;
        positive(s.train_round_s, "scheme.train_round_s")?;
        positive(s.snapshot_period_s, "scheme.snapshot_period_s")?;
        positive(s.horizon_s, "scheme.horizon_s")?;
        nonneg(s.stall_gain, "scheme.stall_gain")?;
        if s.initial_range_hops == 0 {
            return Err(bad("scheme.initial_range_hops", "must be at least 1"));
        }
        if let Some(max) = s.max_range_hops {
            if max < s.initial_range_hops {
                return Err(bad(
                    "scheme.max_range_hops",
                    "must be at least initial_range_hops",
                ));
            }
        }
        if s.request_budget == 0 {
            return Err(bad("scheme.request_budget", "must be at least 1"));
        }

        self.ccbf
            .params(0)
            .validate()
            .map_err(|e| bad(format!("ccbf.{}", e.field), e.reason))?;

        let w = &self.workload;
        nonneg(w.device_rate_hz, "workload.device_rate_hz")?;
        nonneg(w.background_rate_hz, "workload.background_rate_hz")?;
        if w.learning_bytes == 0 {
            return Err(bad("workload.learning_bytes", "must be positive"));
        }
        if w.background_bytes == 0 {
            return Err(bad("workload.background_bytes", "must be positive"));
        }
        if w.class_weights.is_empty() || w.class_weights.len() > 255 {
            return Err(bad(
                "workload.class_weights",
                "needs between 1 and 255 classes",
            ));
        }
        if w.class_weights
            .iter()
            .any(|&x| !(x >= 0.0 && x.is_finite()))
            || w.class_weights.iter().sum::<f64>() <= 0.0
        {
            return Err(bad(
                "workload.class_weights",
                "weights must be nonnegative with a positive sum",
            ));
        }
        if w.feature_dims == 0 {
            return Err(bad("workload.feature_dims", "must be at least 1"));
        }
        nonneg(w.separation, "workload.separation")?;
        unit(w.shared_fraction, "workload.shared_fraction")?;
        let [lo, hi] = w.shared_delay_s;
        nonneg(lo, "workload.shared_delay_s")?;
        if !(hi >= lo && hi.is_finite()) {
            return Err(bad("workload.shared_delay_s", "needs min <= max"));
        }
        if w.shared_fraction > 0.0 && t.edges < 2 {
            return Err(bad(
                "workload.shared_fraction",
                "needs at least two edge nodes",
            ));
        }

        let l = &self.learner;
        let p = &l.synthetic;
        unit(p.a0, "learner.synthetic.a0")?;
        unit(p.amax, "learner.synthetic.amax")?;
        if p.a0 > p.amax {
            return Err(bad("learner.synthetic.a0", "must not exceed amax"));
        }
        positive(p.tau, "learner.synthetic.tau")?;
        unit(p.rho, "learner.synthetic.rho")?;
        if p.noise_rank == 0 {
            return Err(bad("learner.synthetic.noise_rank", "must be at least 1"));
        }
        if l.mlp.hidden == 0 {
            return Err(bad("learner.mlp.hidden", "must be at least 1"));
        }
        if l.mlp.batch_size == 0 {
            return Err(bad("learner.mlp.batch_size", "must be at least 1"));
        }
        positive(l.mlp.learning_rate, "learner.mlp.learning_rate")?;
        if l.window == 0 {
            return Err(bad("learner.window", "must be at least 1"));
        }
        nonneg(l.epsilon, "learner.epsilon")?;
        if l.validation_size == 0 {
            return Err(bad("learner.validation_size", "must be at least 1"));
        }
        if l.test_size == 0 {
            return Err(bad("learner.test_size", "must be at least 1"));
        }
        if l.central_models == 0 {
            return Err(bad("learner.central_models", "must be at least 1"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let cfg = ScenarioConfig::from_json("{}").unwrap();
        assert_eq!(cfg, ScenarioConfig::default());
        assert_eq!(cfg.topology.edges, 4);
        assert_eq!(cfg.topology.cache_capacity, 2000);
    }

    #[test]
    fn k_above_m_names_the_key() {
        let e = ScenarioConfig::from_json(r#"{"ccbf": {"m": 4, "k": 5}}"#).unwrap_err();
        assert_eq!(e.key_path(), Some("ccbf.k"));
        assert!(e.to_string().contains("ccbf.k"));
    }

    #[test]
    fn unknown_and_mistyped_keys_are_located() {
        let e = ScenarioConfig::from_json(r#"{"workload": {"devce_rate_hz": 1}}"#).unwrap_err();
        assert!(e.to_string().contains("workload"), "{e}");
        let e = ScenarioConfig::from_json(r#"{"scheme": {"request_budget": "many"}}"#).unwrap_err();
        assert_eq!(e.key_path(), Some("scheme.request_budget"));
    }

    #[test]
    fn json_roundtrip() {
        let cfg = ScenarioConfig::default();
        assert_eq!(ScenarioConfig::from_json(&cfg.to_json()).unwrap(), cfg);
    }

    #[test]
    fn seeds_derive_from_run_seed_unless_pinned() {
        let cfg = ScenarioConfig::default();
        assert_ne!(cfg.workload_seed(1), cfg.workload_seed(2));
        assert_ne!(cfg.workload_seed(1), cfg.model_seed(1));
        let pinned = ScenarioConfig {
            seeds: SeedsConfig {
                workload: Some(5),
                model: None,
            },
            ..cfg
        };
        assert_eq!(pinned.workload_seed(1), 5);
        assert_eq!(pinned.workload_seed(2), 5);
    }
}
