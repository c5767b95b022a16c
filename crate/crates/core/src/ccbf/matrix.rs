use crate::rng::SplitMix64;

/// The `g × m` fill-order matrix.
///
/// Column `p` is a permutation of `0..g` produced by a Fisher-Yates shuffle
/// (see [`SplitMix64::shuffle`]) of the identity, driven by
/// `SplitMix64::derive(matrix_seed, p)`. Row `c` of column `p` names the bit
/// array that receives the `(c+1)`-th item landing on position `p`.
///
/// Columns are derived on demand; nothing is stored beyond the seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RandMatrix {
    seed: u64,
    g: u8,
    m: u32,
}

impl RandMatrix {
    pub fn new(seed: u64, g: u8, m: u32) -> Self {
        Self { seed, g, m }
    }

    pub fn rows(&self) -> usize {
        self.g as usize
    }

    pub fn cols(&self) -> usize {
        self.m as usize
    }

    pub fn column(&self, p: usize) -> Vec<u8> {
        debug_assert!(p < self.m as usize);
        let mut col: Vec<u8> = (0..self.g).collect();
        SplitMix64::derive(self.seed, p as u64).shuffle(&mut col);
        col
    }

    /// Array index used at fill level `level` of column `p`.
    pub fn entry(&self, level: usize, p: usize) -> usize {
        self.column(p)[level] as usize
    }

    /// Full row-major table, `table[row][col]`.
    pub fn materialize(&self) -> Vec<Vec<u8>> {
        let columns: Vec<Vec<u8>> = (0..self.m as usize).map(|p| self.column(p)).collect();
        (0..self.g as usize)
            .map(|row| columns.iter().map(|c| c[row]).collect())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn columns_are_latin() {
        let mat = RandMatrix::new(77, 6, 500);
        for p in 0..500 {
            let mut col = mat.column(p);
            col.sort();
            assert_eq!(col, (0..6).collect::<Vec<u8>>());
        }
    }

    #[test]
    fn same_seed_same_matrix() {
        let a = RandMatrix::new(5, 4, 64).materialize();
        let b = RandMatrix::new(5, 4, 64).materialize();
        let c = RandMatrix::new(6, 4, 64).materialize();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn columns_vary() {
        let mat = RandMatrix::new(1, 4, 256);
        let first_rows: std::collections::BTreeSet<u8> =
            (0..256).map(|p| mat.entry(0, p) as u8).collect();
        assert_eq!(first_rows.len(), 4);
    }
}
