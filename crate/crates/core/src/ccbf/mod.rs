//! Composable counting Bloom filter.
//!
//! A counting filter assembled from `g` stacked plain bit arrays. The count at
//! position `p` is the number of arrays with bit `p` set, and the arrays at a
//! position always fill in the order given by column `p` of a seeded
//! [`RandMatrix`]. Because every cooperating filter shares that order,
//! two filters combine by a bitwise OR of same-index arrays: the union of two
//! fill prefixes of one column is again a fill prefix. A separate aggregate
//! array (`or_bits`, the OR of all levels) answers membership queries.
//!
//! Counts are never stored; [`Ccbf::column_count`] popcounts a column on
//! demand so combination stays a pure OR.

mod bits;
mod matrix;
mod wire;

pub use bits::BitArray;
pub use matrix::RandMatrix;
pub use wire::{WireError, HEADER_LEN, MAGIC, WIRE_VERSION};

use thiserror::Error;
use xxhash_rust::xxh64::xxh64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct CcbfParams {
    /// Positions per bit array.
    pub m: u32,
    /// Number of stacked bit arrays (maximum count per position).
    pub g: u8,
    /// Number of hash functions.
    pub k: u8,
    /// Capacity in items.
    pub n: u32,
    pub hash_seed: u64,
    pub matrix_seed: u64,
}

impl CcbfParams {
    /// Simulator defaults: 32 Ki positions, 4 levels, 5 hashes, 8000 items.
    pub fn with_seeds(hash_seed: u64, matrix_seed: u64) -> Self {
        Self {
            m: 32_768,
            g: 4,
            k: 5,
            n: 8_000,
            hash_seed,
            matrix_seed,
        }
    }

    pub fn validate(&self) -> Result<(), ParamsError> {
        if self.m == 0 {
            return Err(ParamsError::new("m", "must be at least 1"));
        }
        if self.g == 0 {
            return Err(ParamsError::new("g", "must be at least 1"));
        }
        if self.k == 0 || self.k as u32 > self.m {
            return Err(ParamsError::new(
                "k",
                format!("must satisfy 1 <= k <= m (k={}, m={})", self.k, self.m),
            ));
        }
        if self.n == 0 {
            return Err(ParamsError::new("n", "must be at least 1"));
        }
        Ok(())
    }

    /// Name of the first field that differs from `other`, if any.
    pub fn first_mismatch(&self, other: &CcbfParams) -> Option<&'static str> {
        if self.m != other.m {
            Some("m")
        } else if self.g != other.g {
            Some("g")
        } else if self.k != other.k {
            Some("k")
        } else if self.n != other.n {
            Some("n")
        } else if self.hash_seed != other.hash_seed {
            Some("hash_seed")
        } else if self.matrix_seed != other.matrix_seed {
            Some("matrix_seed")
        } else {
            None
        }
    }

    /// Analytic Bloom false-positive estimate `(1 - e^{-k·items/m})^k`.
    pub fn expected_fpr(&self, items: usize) -> f64 {
        let k = self.k as f64;
        (1.0 - (-k * items as f64 / self.m as f64).exp()).powf(k)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid parameter `{field}`: {reason}")]
pub struct ParamsError {
    pub field: &'static str,
    pub reason: String,
}

impl ParamsError {
    fn new(field: &'static str, reason: impl Into<String>) -> Self {
        Self {
            field,
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CombineError {
    #[error("cannot combine filters: parameter `{field}` differs")]
    ParamMismatch { field: &'static str },
    #[error("combined item count {combined} exceeds capacity {capacity}")]
    Capacity { combined: u64, capacity: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InsertOutcome {
    Inserted,
    /// The item already queries true; nothing changed.
    Duplicate,
    /// The filter holds `n` items; nothing changed.
    CapacityExceeded,
    /// Some position already has all `g` levels set; nothing changed.
    PositionOverflow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeleteOutcome {
    Deleted,
    NotFound,
}

#[derive(Clone, PartialEq, Eq)]
pub struct Ccbf {
    params: CcbfParams,
    matrix: RandMatrix,
    levels: Vec<BitArray>,
    or_bits: BitArray,
    item_count: u32,
}

impl std::fmt::Debug for Ccbf {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Ccbf")
            .field("params", &self.params)
            .field("item_count", &self.item_count)
            .field("or_ones", &self.or_bits.count_ones())
            .finish()
    }
}

impl Ccbf {
    pub fn new(params: CcbfParams) -> Result<Self, ParamsError> {
        params.validate()?;
        let m = params.m as usize;
        Ok(Self {
            params,
            matrix: RandMatrix::new(params.matrix_seed, params.g, params.m),
            levels: (0..params.g).map(|_| BitArray::zeros(m)).collect(),
            or_bits: BitArray::zeros(m),
            item_count: 0,
        })
    }

    pub fn params(&self) -> &CcbfParams {
        &self.params
    }

    pub fn matrix(&self) -> &RandMatrix {
        &self.matrix
    }

    pub fn item_count(&self) -> u32 {
        self.item_count
    }

    /// Stacked array `i` (`barr_i`).
    pub fn level(&self, i: usize) -> &BitArray {
        &self.levels[i]
    }

    pub fn levels(&self) -> &[BitArray] {
        &self.levels
    }

    /// The aggregate array (`orBarr`).
    pub fn or_bits(&self) -> &BitArray {
        &self.or_bits
    }

    pub fn is_empty(&self) -> bool {
        !self.or_bits.any()
    }

    /// Fraction of positions set in the aggregate array.
    pub fn fill_ratio(&self) -> f64 {
        self.or_bits.count_ones() as f64 / self.params.m as f64
    }

    /// The `k` hash positions of `key` by double hashing a single keyed
    /// xxh64: `p_j = (h1 + j·h2) mod m` with `h1`/`h2` the low/high halves.
    /// `h2` is forced odd when `m` is a power of two so the sequence does not
    /// collapse. Positions may repeat.
    pub fn positions(&self, key: &[u8]) -> Vec<usize> {
        positions_for(&self.params, key)
    }

    /// Sorted, deduplicated [`positions`](Self::positions).
    pub fn distinct_positions(&self, key: &[u8]) -> Vec<usize> {
        let mut ps = self.positions(key);
        ps.sort_unstable();
        ps.dedup();
        ps
    }

    /// Number of stacked arrays with bit `p` set.
    pub fn column_count(&self, p: usize) -> usize {
        self.levels.iter().filter(|l| l.get(p)).count()
    }

    pub fn query(&self, key: &[u8]) -> bool {
        self.positions(key).into_iter().all(|p| self.or_bits.get(p))
    }

    pub fn insert(&mut self, key: &[u8]) -> InsertOutcome {
        if self.query(key) {
            return InsertOutcome::Duplicate;
        }
        if self.item_count >= self.params.n {
            return InsertOutcome::CapacityExceeded;
        }
        let positions = self.distinct_positions(key);
        let g = self.params.g as usize;
        let counts: Vec<usize> = positions.iter().map(|&p| self.column_count(p)).collect();
        // Checking every position first makes the insert atomic.
        if counts.contains(&g) {
            return InsertOutcome::PositionOverflow;
        }
        for (&p, &c) in positions.iter().zip(&counts) {
            let array = self.matrix.entry(c, p);
            self.levels[array].set(p);
            self.or_bits.set(p);
        }
        self.item_count += 1;
        InsertOutcome::Inserted
    }

    /// Clears, at each distinct position of `key`, the array that was filled
    /// last. Deleting from a filter produced by [`combine`] can remove bits
    /// that belong to another node's item sharing a position; callers that
    /// combine records should not delete from the result.
    pub fn delete(&mut self, key: &[u8]) -> DeleteOutcome {
        if !self.query(key) {
            return DeleteOutcome::NotFound;
        }
        for p in self.distinct_positions(key) {
            let c = self.column_count(p);
            debug_assert!(c >= 1);
            let array = self.matrix.entry(c - 1, p);
            self.levels[array].clear(p);
            self.or_bits.assign(p, c > 1);
        }
        self.item_count = self.item_count.saturating_sub(1);
        DeleteOutcome::Deleted
    }

    /// ORs `other` into `self` array by array. On error `self` is unchanged.
    pub fn combine_from(&mut self, other: &Ccbf) -> Result<(), CombineError> {
        if let Some(field) = self.params.first_mismatch(&other.params) {
            return Err(CombineError::ParamMismatch { field });
        }
        let combined = self.item_count as u64 + other.item_count as u64;
        if combined > self.params.n as u64 {
            return Err(CombineError::Capacity {
                combined,
                capacity: self.params.n,
            });
        }
        for (mine, theirs) in self.levels.iter_mut().zip(&other.levels) {
            mine.or_assign(theirs);
        }
        self.or_bits.or_assign(&other.or_bits);
        self.item_count = combined as u32;
        Ok(())
    }

    /// Histogram of column counts: entry `c` is the number of positions whose
    /// count equals `c`, for `c` in `0..=g`.
    pub fn column_histogram(&self) -> Vec<usize> {
        let mut hist = vec![0usize; self.params.g as usize + 1];
        for p in 0..self.params.m as usize {
            hist[self.column_count(p)] += 1;
        }
        hist
    }

    /// Verifies the aggregate array and the fill-order layout at every
    /// position. Returns a description of the first violation.
    pub fn check_invariants(&self) -> Result<(), String> {
        for p in 0..self.params.m as usize {
            let any = self.levels.iter().any(|l| l.get(p));
            if any != self.or_bits.get(p) {
                return Err(format!("aggregate bit mismatch at position {p}"));
            }
            if !any {
                continue;
            }
            let column = self.matrix.column(p);
            let c = self.column_count(p);
            for (level, &array) in column.iter().enumerate() {
                if self.levels[array as usize].get(p) != (level < c) {
                    return Err(format!(
                        "position {p}: count {c} but fill level {level} (array {array}) is wrong"
                    ));
                }
            }
        }
        if self.item_count > self.params.n {
            return Err(format!(
                "item count {} exceeds capacity {}",
                self.item_count, self.params.n
            ));
        }
        Ok(())
    }

    pub(crate) fn from_parts(
        params: CcbfParams,
        levels: Vec<BitArray>,
        or_bits: BitArray,
        item_count: u32,
    ) -> Self {
        Self {
            params,
            matrix: RandMatrix::new(params.matrix_seed, params.g, params.m),
            levels,
            or_bits,
            item_count,
        }
    }
}

/// Combine two filters into a new one.
pub fn combine(a: &Ccbf, b: &Ccbf) -> Result<Ccbf, CombineError> {
    let mut out = a.clone();
    out.combine_from(b)?;
    Ok(out)
}

pub(crate) fn positions_for(params: &CcbfParams, key: &[u8]) -> Vec<usize> {
    let h = xxh64(key, params.hash_seed);
    let m = params.m as u64;
    let h1 = h & 0xFFFF_FFFF;
    let mut h2 = h >> 32;
    if m.is_power_of_two() {
        h2 |= 1;
    }
    (0..params.k as u64)
        .map(|j| (h1.wrapping_add(j.wrapping_mul(h2)) % m) as usize)
        .collect()
}

/// All-positions membership test of `key` against an arbitrary bit vector
/// laid out like a filter built from `params`.
pub fn query_bits(params: &CcbfParams, bits: &BitArray, key: &[u8]) -> bool {
    positions_for(params, key).into_iter().all(|p| bits.get(p))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(m: u32, g: u8, k: u8, n: u32) -> CcbfParams {
        CcbfParams {
            m,
            g,
            k,
            n,
            hash_seed: 11,
            matrix_seed: 22,
        }
    }

    fn key(i: u64) -> [u8; 8] {
        i.to_le_bytes()
    }

    /// Searches keys `0..` for ones satisfying `pred` on their distinct positions.
    fn find_keys(f: &Ccbf, count: usize, mut pred: impl FnMut(&[usize]) -> bool) -> Vec<[u8; 8]> {
        (0u64..)
            .map(key)
            .filter(|k| pred(&f.distinct_positions(k)))
            .take(count)
            .collect()
    }

    #[test]
    fn fresh_filter_is_empty() {
        let f = Ccbf::new(params(16, 4, 2, 8)).unwrap();
        assert_eq!(f.levels().len(), 4);
        assert!(f.levels().iter().all(|l| l.len() == 16 && !l.any()));
        assert_eq!(f.or_bits().len(), 16);
        assert!(!f.query(b"anything"));
        assert!((0..16).all(|p| f.column_count(p) == 0));
        assert_eq!(f.item_count(), 0);
    }

    #[test]
    fn invalid_params_name_the_field() {
        assert_eq!(Ccbf::new(params(0, 4, 1, 8)).unwrap_err().field, "m");
        assert_eq!(Ccbf::new(params(16, 0, 1, 8)).unwrap_err().field, "g");
        assert_eq!(Ccbf::new(params(16, 4, 0, 8)).unwrap_err().field, "k");
        assert_eq!(Ccbf::new(params(4, 4, 5, 8)).unwrap_err().field, "k");
        assert_eq!(Ccbf::new(params(16, 4, 2, 0)).unwrap_err().field, "n");
    }

    #[test]
    fn positions_deterministic_across_instances() {
        let a = Ccbf::new(params(1000, 4, 5, 8)).unwrap();
        let b = Ccbf::new(params(1000, 4, 5, 8)).unwrap();
        for i in 0..100 {
            assert_eq!(a.positions(&key(i)), b.positions(&key(i)));
            assert_eq!(a.positions(&key(i)).len(), 5);
        }
    }

    #[test]
    fn single_hash_is_h1_mod_m() {
        let p = params(1000, 2, 1, 8);
        let f = Ccbf::new(p).unwrap();
        for i in 0..50 {
            let h1 = xxh64(&key(i), p.hash_seed) & 0xFFFF_FFFF;
            assert_eq!(f.positions(&key(i)), vec![(h1 % 1000) as usize]);
        }
    }

    #[test]
    fn positions_roughly_uniform() {
        // Each of 10,000 keys contributes k=1 position; counts per bin are
        // Binomial(10000, 1/64), sd ≈ 12.3.
        let f = Ccbf::new(params(64, 2, 1, 8)).unwrap();
        let mut counts = [0usize; 64];
        for i in 0..10_000u64 {
            counts[f.positions(&key(i))[0]] += 1;
        }
        let mean = 10_000.0 / 64.0;
        let sd = (10_000.0 * (1.0 / 64.0) * (63.0 / 64.0_f64)).sqrt();
        for (p, &c) in counts.iter().enumerate() {
            assert!(
                (c as f64 - mean).abs() <= 4.0 * sd,
                "position {p}: {c} vs {mean}"
            );
        }
        let chi2: f64 = counts
            .iter()
            .map(|&c| (c as f64 - mean).powi(2) / mean)
            .sum();
        // 63 dof: mean 63, sd ≈ 11.2.
        assert!(chi2 < 63.0 + 4.0 * 11.2, "chi2 {chi2}");
    }

    #[test]
    fn first_insert_then_query() {
        let mut f = Ccbf::new(params(64, 4, 3, 8)).unwrap();
        assert_eq!(f.insert(b"a"), InsertOutcome::Inserted);
        assert!(f.query(b"a"));
        for p in f.distinct_positions(b"a") {
            assert_eq!(f.column_count(p), 1);
        }
        assert_eq!(f.item_count(), 1);
    }

    #[test]
    fn duplicate_insert_changes_nothing() {
        let mut f = Ccbf::new(params(64, 4, 3, 8)).unwrap();
        f.insert(b"a");
        let before = f.clone();
        assert_eq!(f.insert(b"a"), InsertOutcome::Duplicate);
        assert_eq!(f, before);
    }

    #[test]
    fn capacity_exceeded_leaves_state() {
        let mut f = Ccbf::new(params(4096, 4, 3, 2)).unwrap();
        assert_eq!(f.insert(b"a"), InsertOutcome::Inserted);
        assert_eq!(f.insert(b"b"), InsertOutcome::Inserted);
        let before = f.clone();
        assert_eq!(f.insert(b"c"), InsertOutcome::CapacityExceeded);
        assert_eq!(f, before);
    }

    #[test]
    fn position_overflow_is_atomic() {
        // g=2, k=2: three keys sharing position 5, each with a distinct
        // second position, so none of them is a duplicate of the others.
        let mut f = Ccbf::new(params(8, 2, 2, 8)).unwrap();
        let mut others = std::collections::BTreeSet::new();
        let keys = find_keys(&f, 3, |ps| {
            ps.len() == 2 && ps.contains(&5) && {
                let other = if ps[0] == 5 { ps[1] } else { ps[0] };
                others.insert(other)
            }
        });
        assert_eq!(f.insert(&keys[0]), InsertOutcome::Inserted);
        assert_eq!(f.insert(&keys[1]), InsertOutcome::Inserted);
        assert_eq!(f.column_count(5), 2);
        let after_two = f.clone();
        assert_eq!(f.insert(&keys[2]), InsertOutcome::PositionOverflow);
        assert_eq!(f, after_two);
        f.check_invariants().unwrap();
    }

    #[test]
    fn single_hash_collisions_are_duplicates() {
        // With k=1 a second key on an occupied position already queries true.
        let mut f = Ccbf::new(params(8, 2, 1, 8)).unwrap();
        let keys = find_keys(&f, 3, |ps| ps == [5]);
        assert_eq!(f.insert(&keys[0]), InsertOutcome::Inserted);
        assert_eq!(f.insert(&keys[1]), InsertOutcome::Duplicate);
        assert_eq!(f.insert(&keys[2]), InsertOutcome::Duplicate);
        assert_eq!(f.column_count(5), 1);
    }

    #[test]
    fn insert_delete_roundtrip() {
        let mut f = Ccbf::new(params(256, 4, 4, 8)).unwrap();
        let empty = f.clone();
        f.insert(b"d");
        assert_eq!(f.delete(b"d"), DeleteOutcome::Deleted);
        assert!(!f.query(b"d"));
        assert_eq!(f, empty);
    }

    #[test]
    fn delete_missing_is_not_found() {
        let mut f = Ccbf::new(params(256, 4, 4, 8)).unwrap();
        assert_eq!(f.delete(b"nope"), DeleteOutcome::NotFound);
    }

    #[test]
    fn delete_keeps_colliding_neighbor() {
        let mut f = Ccbf::new(params(64, 4, 3, 8)).unwrap();
        let x = key(0);
        let xs = f.distinct_positions(&x);
        let y = find_keys(&f, 1, |ps| {
            ps.len() == 3 && ps.iter().filter(|p| xs.contains(p)).count() == 1
        })[0];
        let shared = *f
            .distinct_positions(&y)
            .iter()
            .find(|p| xs.contains(p))
            .unwrap();
        f.insert(&x);
        assert_eq!(f.insert(&y), InsertOutcome::Inserted);
        assert_eq!(f.column_count(shared), 2);
        assert_eq!(f.delete(&y), DeleteOutcome::Deleted);
        assert_eq!(f.column_count(shared), 1);
        assert!(f.query(&x));
        // x's bit at the shared position is the first fill level.
        assert!(f.level(f.matrix().entry(0, shared)).get(shared));
        f.check_invariants().unwrap();
    }

    #[test]
    fn combine_unions_membership() {
        let p = params(1024, 4, 4, 8);
        let mut a = Ccbf::new(p).unwrap();
        let mut b = Ccbf::new(p).unwrap();
        a.insert(b"x");
        b.insert(b"y");
        let c = combine(&a, &b).unwrap();
        assert!(c.query(b"x") && c.query(b"y"));
        assert_eq!(c.item_count(), 2);
        c.check_invariants().unwrap();
    }

    #[test]
    fn combine_identical_is_noop_on_arrays() {
        let p = params(1024, 4, 4, 8);
        let mut a = Ccbf::new(p).unwrap();
        a.insert(b"x");
        let c = combine(&a, &a.clone()).unwrap();
        assert_eq!(c.levels(), a.levels());
        assert_eq!(c.or_bits(), a.or_bits());
    }

    #[test]
    fn combine_capacity_guard() {
        let p = params(4096, 4, 3, 8);
        let mut a = Ccbf::new(p).unwrap();
        let mut b = Ccbf::new(p).unwrap();
        for i in 0..3 {
            assert_eq!(a.insert(&key(i)), InsertOutcome::Inserted);
        }
        for i in 100..106 {
            assert_eq!(b.insert(&key(i)), InsertOutcome::Inserted);
        }
        let before = a.clone();
        assert_eq!(
            a.combine_from(&b),
            Err(CombineError::Capacity {
                combined: 9,
                capacity: 8
            })
        );
        assert_eq!(a, before);
    }

    #[test]
    fn combine_param_mismatch_names_field() {
        let a = Ccbf::new(params(64, 4, 3, 8)).unwrap();
        let mut other = params(64, 4, 3, 8);
        other.matrix_seed = 99;
        let b = Ccbf::new(other).unwrap();
        assert_eq!(
            combine(&a, &b).unwrap_err(),
            CombineError::ParamMismatch {
                field: "matrix_seed"
            }
        );
    }

    #[test]
    fn false_positive_rate_near_analytic() {
        let p = params(1024, 4, 7, 200);
        let mut f = Ccbf::new(p).unwrap();
        for i in 0..100 {
            f.insert(&key(i));
        }
        let probes = 10_000u64;
        let fp = (1_000_000..1_000_000 + probes)
            .filter(|&i| f.query(&key(i)))
            .count();
        let observed = fp as f64 / probes as f64;
        let analytic = p.expected_fpr(100);
        assert!((analytic - 0.0073).abs() < 0.0005, "analytic {analytic}");
        assert!(observed <= 2.0 * analytic, "observed {observed}");
    }
}
