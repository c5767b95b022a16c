use super::{Sample, SubModel};
use crate::rng::SplitMix64;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlpParams {
    pub hidden: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Passes over each training batch per `train` call.
    pub epochs: usize,
}

impl Default for MlpParams {
    fn default() -> Self {
        Self {
            hidden: 16,
            learning_rate: 0.1,
            batch_size: 32,
            epochs: 1,
        }
    }
}

/// Single-hidden-layer classifier (tanh hidden units, softmax output)
/// trained with plain mini-batch gradient descent on cross-entropy.
#[derive(Debug, Clone)]
pub struct TinyMlp {
    params: MlpParams,
    inputs: usize,
    classes: usize,
    // hidden × inputs, row-major
    w1: Vec<f64>,
    b1: Vec<f64>,
    // classes × hidden
    w2: Vec<f64>,
    b2: Vec<f64>,
    rng: SplitMix64,
    seen: HashSet<u64>,
}

impl TinyMlp {
    pub fn new(params: MlpParams, inputs: usize, classes: usize, seed: u64) -> Self {
        let mut rng = SplitMix64::derive(seed, 0x4D4C_5000);
        let hidden = params.hidden.max(1);
        let s1 = (1.0 / inputs.max(1) as f64).sqrt();
        let s2 = (1.0 / hidden as f64).sqrt();
        let w1 = (0..hidden * inputs).map(|_| s1 * rng.normal()).collect();
        let w2 = (0..classes * hidden).map(|_| s2 * rng.normal()).collect();
        Self {
            params: MlpParams { hidden, ..params },
            inputs,
            classes,
            w1,
            b1: vec![0.0; hidden],
            w2,
            b2: vec![0.0; classes],
            rng,
            seen: HashSet::new(),
        }
    }

    fn forward(&self, x: &[f32]) -> (Vec<f64>, Vec<f64>) {
        let h = self.params.hidden;
        let hidden: Vec<f64> = (0..h)
            .map(|j| {
                let row = &self.w1[j * self.inputs..(j + 1) * self.inputs];
                let z: f64 =
                    row.iter().zip(x).map(|(w, &xi)| w * xi as f64).sum::<f64>() + self.b1[j];
                z.tanh()
            })
            .collect();
        let logits: Vec<f64> = (0..self.classes)
            .map(|c| {
                let row = &self.w2[c * h..(c + 1) * h];
                row.iter().zip(&hidden).map(|(w, a)| w * a).sum::<f64>() + self.b2[c]
            })
            .collect();
        (hidden, softmax(&logits))
    }

    fn step(&mut self, batch: &[&Sample]) {
        let h = self.params.hidden;
        let mut g1 = vec![0.0; self.w1.len()];
        let mut gb1 = vec![0.0; h];
        let mut g2 = vec![0.0; self.w2.len()];
        let mut gb2 = vec![0.0; self.classes];
        for s in batch {
            let (hidden, probs) = self.forward(&s.features);
            let delta_out: Vec<f64> = probs
                .iter()
                .enumerate()
                .map(|(c, p)| p - if c == s.label { 1.0 } else { 0.0 })
                .collect();
            for c in 0..self.classes {
                gb2[c] += delta_out[c];
                for j in 0..h {
                    g2[c * h + j] += delta_out[c] * hidden[j];
                }
            }
            for j in 0..h {
                let back: f64 = (0..self.classes)
                    .map(|c| delta_out[c] * self.w2[c * h + j])
                    .sum();
                let dz = back * (1.0 - hidden[j] * hidden[j]);
                gb1[j] += dz;
                for (i, &xi) in s.features.iter().enumerate() {
                    g1[j * self.inputs + i] += dz * xi as f64;
                }
            }
        }
        let lr = self.params.learning_rate / batch.len() as f64;
        for (w, g) in self.w1.iter_mut().zip(&g1) {
            *w -= lr * g;
        }
        for (w, g) in self.b1.iter_mut().zip(&gb1) {
            *w -= lr * g;
        }
        for (w, g) in self.w2.iter_mut().zip(&g2) {
            *w -= lr * g;
        }
        for (w, g) in self.b2.iter_mut().zip(&gb2) {
            *w -= lr * g;
        }
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

impl SubModel for TinyMlp {
    fn train(&mut self, batch: &[Sample]) {
        if batch.is_empty() {
            return;
        }
        for s in batch {
            self.seen.insert(s.key);
        }
        let mut order: Vec<usize> = (0..batch.len()).collect();
        let bs = self.params.batch_size.max(1);
        for _ in 0..self.params.epochs.max(1) {
            self.rng.shuffle(&mut order);
            for chunk in order.chunks(bs) {
                let mb: Vec<&Sample> = chunk.iter().map(|&i| &batch[i]).collect();
                self.step(&mb);
            }
        }
    }

    fn output(&self, x: &Sample) -> Vec<f64> {
        self.forward(&x.features).1
    }

    fn output_dims(&self) -> usize {
        self.classes
    }

    fn distinct_items_seen(&self) -> usize {
        self.seen.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learning::{ClassTask, TaskParams};

    #[test]
    fn learns_separable_task() {
        let task = ClassTask::new(
            TaskParams {
                separation: 3.0,
                ..TaskParams::default()
            },
            1,
        );
        let train = task.samples(0..2000);
        let test = task.samples(100_000..101_000);
        let mut mlp = TinyMlp::new(MlpParams::default(), task.feature_dims(), task.classes(), 4);
        let before = mlp.validation_accuracy(&test);
        for _ in 0..10 {
            mlp.train(&train);
        }
        let after = mlp.validation_accuracy(&test);
        assert!(after > 0.85, "accuracy {after} (before {before})");
        assert_eq!(mlp.distinct_items_seen(), 2000);
    }

    #[test]
    fn outputs_are_probabilities() {
        let task = ClassTask::new(TaskParams::default(), 2);
        let mlp = TinyMlp::new(MlpParams::default(), task.feature_dims(), task.classes(), 4);
        let out = mlp.output(&task.sample(3));
        assert_eq!(out.len(), 6);
        assert!((out.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn training_is_deterministic() {
        let task = ClassTask::new(TaskParams::default(), 2);
        let data = task.samples(0..300);
        let mut a = TinyMlp::new(MlpParams::default(), 8, 6, 9);
        let mut b = TinyMlp::new(MlpParams::default(), 8, 6, 9);
        a.train(&data);
        b.train(&data);
        assert_eq!(a.output(&data[0]), b.output(&data[0]));
    }
}
