/// Plateau detector over per-round validation accuracy.
///
/// After at least `window + 1` observations, the tracker latches once the
/// accuracy gained over the last `window` rounds is below `epsilon`. The
/// latch never resets.
#[derive(Debug, Clone)]
pub struct ConvergenceTracker {
    window: usize,
    epsilon: f64,
    history: Vec<f64>,
    converged_round: Option<usize>,
}

impl ConvergenceTracker {
    pub fn new(window: usize, epsilon: f64) -> Self {
        Self {
            window: window.max(1),
            epsilon,
            history: Vec::new(),
            converged_round: None,
        }
    }

    /// Records one round and returns the (latched) convergence state.
    pub fn observe(&mut self, accuracy: f64) -> bool {
        self.history.push(accuracy);
        if self.converged_round.is_none() && self.history.len() > self.window {
            let n = self.history.len();
            let gain = self.history[n - 1] - self.history[n - 1 - self.window];
            if gain < self.epsilon {
                self.converged_round = Some(n - 1);
            }
        }
        self.converged()
    }

    pub fn converged(&self) -> bool {
        self.converged_round.is_some()
    }

    /// Zero-based index of the round that latched convergence.
    pub fn converged_round(&self) -> Option<usize> {
        self.converged_round
    }

    /// Gain over the most recent round, or `None` before two observations.
    pub fn last_gain(&self) -> Option<f64> {
        let n = self.history.len();
        (n >= 2).then(|| self.history[n - 1] - self.history[n - 2])
    }

    pub fn history(&self) -> &[f64] {
        &self.history
    }
}
