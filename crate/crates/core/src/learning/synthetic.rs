use super::{target, Sample, SubModel};
use crate::rng::{hash_words, normal_from, unit_f64};
use serde::{Deserialize, Serialize};
use std::collections::HashSet;

const TAG_SHARED: u64 = 0x5348_4152;
const TAG_PRIVATE: u64 = 0x5052_4956;
const TAG_UNTRAINED: u64 = 0x554E_5452;
const TAG_ITEM: u64 = 0x4954_454D;
const TAG_INPUT: u64 = 0x494E_5055;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticParams {
    /// Accuracy with no training data.
    pub a0: f64,
    /// Accuracy ceiling.
    pub amax: f64,
    /// Learning-curve scale in distinct items.
    pub tau: f64,
    /// Error correlation of the ceiling term across learners, in `[0, 1]`.
    pub rho: f64,
    /// Output dimension (number of classes).
    pub dims: usize,
    /// Random-feature rank of the data-dependent error term.
    pub noise_rank: usize,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        Self {
            a0: 0.0,
            amax: 0.9,
            tau: 1500.0,
            rho: 0.5,
            dims: 6,
            noise_rank: 256,
        }
    }
}

/// Parametric learner with a closed-form learning curve
/// `accuracy(u) = amax - (amax - a0)·e^{-u/tau}` in distinct items `u`.
///
/// Its output for input `x` is the one-hot target plus an error vector whose
/// squared norm per dimension has expectation `1 - accuracy(u)`. The error
/// has two independent parts:
///
/// - a ceiling term of variance `1 - amax`, split into a component shared by
///   every learner with the same `shared_noise_seed` (weight `rho`) and a
///   private component (weight `1 - rho`);
/// - a data term of variance `(amax - a0)·e^{-u/tau}`, built from random
///   features of the items seen so far. Two learners' data terms correlate
///   by `|S_i ∩ S_j| / sqrt(|S_i|·|S_j|)`, the overlap of their training
///   sets. An untrained learner draws it privately.
///
/// With `a0 == amax` the data term vanishes and the learner has a fixed error
/// with pairwise correlation exactly `rho`.
#[derive(Debug, Clone)]
pub struct SyntheticLearner {
    params: SyntheticParams,
    shared_noise_seed: u64,
    private_noise_seed: u64,
    seen: HashSet<u64>,
    features: Vec<f64>,
}

impl SyntheticLearner {
    pub fn new(params: SyntheticParams, shared_noise_seed: u64, private_noise_seed: u64) -> Self {
        let rank = params.noise_rank.max(1);
        Self {
            params,
            shared_noise_seed,
            private_noise_seed,
            seen: HashSet::new(),
            features: vec![0.0; rank],
        }
    }

    /// Learner with constant error `err` and ceiling correlation `rho`.
    pub fn fixed(err: f64, rho: f64, dims: usize, shared_seed: u64, private_seed: u64) -> Self {
        let params = SyntheticParams {
            a0: 1.0 - err,
            amax: 1.0 - err,
            tau: 1.0,
            rho,
            dims,
            noise_rank: 1,
        };
        Self::new(params, shared_seed, private_seed)
    }

    pub fn params(&self) -> &SyntheticParams {
        &self.params
    }

    pub fn accuracy_at(&self, u: usize) -> f64 {
        let p = &self.params;
        if p.tau <= 0.0 {
            return p.amax;
        }
        p.amax - (p.amax - p.a0) * (-(u as f64) / p.tau).exp()
    }

    pub fn accuracy(&self) -> f64 {
        self.accuracy_at(self.seen.len())
    }

    fn sym_uniform(word: u64) -> f64 {
        (2.0 * unit_f64(word) - 1.0) * 3f64.sqrt()
    }

    /// Error vector at input `x`.
    pub fn error(&self, x: u64) -> Vec<f64> {
        let p = &self.params;
        let ceiling = (1.0 - p.amax).max(0.0).sqrt();
        let rho = p.rho.clamp(0.0, 1.0);
        let (ws, wp) = (rho.sqrt(), (1.0 - rho).sqrt());
        let u = self.seen.len();
        let data_sd = (p.amax - p.a0).max(0.0).sqrt()
            * (-(u as f64) / p.tau.max(f64::MIN_POSITIVE)).exp().sqrt();
        let rank = self.features.len();
        let norm = if u > 0 {
            1.0 / ((u * rank) as f64).sqrt()
        } else {
            0.0
        };
        (0..p.dims as u64)
            .map(|d| {
                let zs = normal_from(hash_words(&[self.shared_noise_seed, TAG_SHARED, x, d]));
                let zp = normal_from(hash_words(&[self.private_noise_seed, TAG_PRIVATE, x, d]));
                let zd = if data_sd == 0.0 {
                    0.0
                } else if u == 0 {
                    normal_from(hash_words(&[self.private_noise_seed, TAG_UNTRAINED, x, d]))
                } else {
                    let base = hash_words(&[self.shared_noise_seed, TAG_INPUT, x, d]);
                    let dot: f64 = self
                        .features
                        .iter()
                        .enumerate()
                        .map(|(r, a)| a * Self::sym_uniform(hash_words(&[base, r as u64])))
                        .sum();
                    dot * norm
                };
                ceiling * (ws * zs + wp * zp) + data_sd * zd
            })
            .collect()
    }
}

impl SubModel for SyntheticLearner {
    fn train(&mut self, batch: &[Sample]) {
        for s in batch {
            if self.seen.insert(s.key) {
                for (r, a) in self.features.iter_mut().enumerate() {
                    *a += Self::sym_uniform(hash_words(&[
                        self.shared_noise_seed,
                        TAG_ITEM,
                        s.key,
                        r as u64,
                    ]));
                }
            }
        }
    }

    fn output(&self, x: &Sample) -> Vec<f64> {
        let mut out = target(x.label, self.params.dims);
        for (o, e) in out.iter_mut().zip(self.error(x.key)) {
            *o += e;
        }
        out
    }

    fn output_dims(&self) -> usize {
        self.params.dims
    }

    fn distinct_items_seen(&self) -> usize {
        self.seen.len()
    }

    /// The closed-form curve value; `validation` is not consulted.
    fn validation_accuracy(&self, _validation: &[Sample]) -> f64 {
        self.accuracy()
    }
}
