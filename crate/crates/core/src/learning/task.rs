use super::Sample;
use crate::rng::SplitMix64;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskParams {
    /// Class prior; its length is the number of classes.
    pub class_weights: Vec<f64>,
    pub feature_dims: usize,
    /// Standard deviation of the class centroids around the origin.
    pub separation: f64,
}

impl Default for TaskParams {
    fn default() -> Self {
        Self {
            class_weights: vec![0.35, 0.25, 0.15, 0.10, 0.10, 0.05],
            feature_dims: 8,
            separation: 1.0,
        }
    }
}

/// Gaussian class-conditional data: each class has a random centroid and
/// features are centroid plus unit-variance noise. Samples are a pure
/// function of `(seed, key)`.
#[derive(Debug, Clone)]
pub struct ClassTask {
    params: TaskParams,
    seed: u64,
    centroids: Vec<Vec<f64>>,
}

impl ClassTask {
    pub fn new(params: TaskParams, seed: u64) -> Self {
        let mut rng = SplitMix64::derive(seed, 0xCE27_0001);
        let centroids = (0..params.class_weights.len())
            .map(|_| {
                (0..params.feature_dims)
                    .map(|_| params.separation * rng.normal())
                    .collect()
            })
            .collect();
        Self {
            params,
            seed,
            centroids,
        }
    }

    pub fn classes(&self) -> usize {
        self.params.class_weights.len()
    }

    pub fn feature_dims(&self) -> usize {
        self.params.feature_dims
    }

    pub fn label(&self, key: u64) -> usize {
        SplitMix64::derive(self.seed, key).weighted_index(&self.params.class_weights)
    }

    pub fn sample(&self, key: u64) -> Sample {
        let mut rng = SplitMix64::derive(self.seed, key);
        let label = rng.weighted_index(&self.params.class_weights);
        let features = self.centroids[label]
            .iter()
            .map(|c| (c + rng.normal()) as f32)
            .collect();
        Sample {
            key,
            label,
            features,
        }
    }

    pub fn samples(&self, keys: impl IntoIterator<Item = u64>) -> Vec<Sample> {
        keys.into_iter().map(|k| self.sample(k)).collect()
    }
}
