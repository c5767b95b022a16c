//! Cache hit ratios, classification accuracy, and the per-snapshot time
//! series written as CSV.
//!
//! Ratios with a zero denominator are reported as 0.

mod csv;

pub use self::csv::{parse_csv, render_csv, write_csv, CsvError, CSV_HEADER, TERMINAL_HEADER};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("numerator {part} exceeds total {total}")]
    PartExceedsTotal { part: u64, total: u64 },
    #[error("confusion counts sum to zero")]
    EmptyConfusion,
}

fn ratio(part: u64, total: u64) -> Result<f64, MetricsError> {
    if part > total {
        return Err(MetricsError::PartExceedsTotal { part, total });
    }
    Ok(if total == 0 {
        0.0
    } else {
        part as f64 / total as f64
    })
}

/// Share of learning items in one node's cache: `N_l / N_c`.
pub fn llr_hit(n_l: u64, n_c: u64) -> Result<f64, MetricsError> {
    ratio(n_l, n_c)
}

/// Share of learning items over all caches: `N_g / N_gc`.
pub fn glr_hit(n_g: u64, n_gc: u64) -> Result<f64, MetricsError> {
    ratio(n_g, n_gc)
}

/// Share of background items over all caches: `N_b / N_gc`.
pub fn r_hit(n_b: u64, n_gc: u64) -> Result<f64, MetricsError> {
    ratio(n_b, n_gc)
}

/// `(TP + TN) / (TP + FP + FN + TN)`.
pub fn accuracy(c: &Confusion) -> Result<f64, MetricsError> {
    let total = c.total();
    if total == 0 {
        return Err(MetricsError::EmptyConfusion);
    }
    Ok((c.tp + c.tn) as f64 / total as f64)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl Confusion {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// Tallies one prediction with `positive` as the positive class: a
    /// positive prediction is TP when correct and FP otherwise; any other
    /// prediction is TN when correct and FN otherwise.
    pub fn observe(&mut self, predicted: usize, actual: usize, positive: usize) {
        match (predicted == positive, predicted == actual) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.tn += 1,
            (false, false) => self.fn_ += 1,
        }
    }
}

/// Cache counters of one node at one snapshot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeSnapshot {
    pub node: String,
    /// Learning items cached.
    pub n_l: u64,
    /// Items cached.
    pub n_c: u64,
    /// Background items cached.
    pub n_b: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub t: f64,
    pub nodes: Vec<NodeSnapshot>,
    /// Cumulative transmission overhead.
    pub overhead_bytes: u64,
}

impl Snapshot {
    /// `N_g`: learning items summed over nodes.
    pub fn n_g(&self) -> u64 {
        self.nodes.iter().map(|n| n.n_l).sum()
    }

    /// `N_gc`: cached items summed over nodes.
    pub fn n_gc(&self) -> u64 {
        self.nodes.iter().map(|n| n.n_c).sum()
    }

    /// `N_b`: background items summed over nodes.
    pub fn n_b(&self) -> u64 {
        self.nodes.iter().map(|n| n.n_b).sum()
    }

    pub fn glr_hit(&self) -> f64 {
        glr_hit(self.n_g(), self.n_gc()).unwrap_or(0.0)
    }

    pub fn r_hit(&self) -> f64 {
        r_hit(self.n_b(), self.n_gc()).unwrap_or(0.0)
    }

    pub fn check(&self) -> Result<(), MetricsError> {
        for n in &self.nodes {
            llr_hit(n.n_l, n.n_c)?;
            ratio(n.n_l + n.n_b, n.n_c)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Terminal {
    pub scheme: String,
    pub latency_s: f64,
    pub accuracy: f64,
    pub confusion: Confusion,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsSeries {
    pub snapshots: Vec<Snapshot>,
    pub terminal: Option<Terminal>,
}

impl MetricsSeries {
    pub fn last(&self) -> Option<&Snapshot> {
        self.snapshots.last()
    }

    pub fn final_overhead(&self) -> u64 {
        self.last().map_or(0, |s| s.overhead_bytes)
    }

    /// The last snapshot taken at or before `t`.
    pub fn at(&self, t: f64) -> Option<&Snapshot> {
        self.snapshots.iter().take_while(|s| s.t <= t).last()
    }

    /// Time ordering, per-node count bounds and overhead monotonicity.
    pub fn check_invariants(&self) -> Result<(), String> {
        for w in self.snapshots.windows(2) {
            if w[1].t <= w[0].t {
                return Err(format!("snapshot times not increasing at t={}", w[1].t));
            }
            if w[1].overhead_bytes < w[0].overhead_bytes {
                return Err(format!("overhead decreased at t={}", w[1].t));
            }
        }
        for s in &self.snapshots {
            s.check().map_err(|e| format!("t={}: {e}", s.t))?;
        }
        Ok(())
    }
}

/// Fixed-width comparison table, one row per run.
pub fn summary_table(runs: &[(&str, &MetricsSeries)]) -> String {
    let mut out = format!(
        "{:<12} {:>12} {:>16} {:>10} {:>10} {:>10}\n",
        "scheme", "latency_s", "overhead_bytes", "accuracy", "glr_hit", "r_hit"
    );
    for (name, s) in runs {
        let (latency, acc) = s
            .terminal
            .as_ref()
            .map_or((0.0, 0.0), |t| (t.latency_s, t.accuracy));
        let (glr, r) = s.last().map_or((0.0, 0.0), |l| (l.glr_hit(), l.r_hit()));
        out.push_str(&format!(
            "{:<12} {:>12.1} {:>16} {:>10.4} {:>10.4} {:>10.4}\n",
            name,
            latency,
            s.final_overhead(),
            acc,
            glr,
            r
        ));
    }
    out
}
