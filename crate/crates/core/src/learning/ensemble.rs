//! Weighted soft-vote ensemble.
//!
//! The ensemble output is `H(x) = Σ w_i h_i(x)` with `w` on the probability
//! simplex. With `C_ij` the mean product of the errors of models `i` and `j`
//! against the target, the ensemble's squared error is `wᵀCw`, minimized over
//! `Σ w = 1` by `w = C⁻¹1 / (1ᵀC⁻¹1)`. Negative components are removed by an
//! active-set pass so the result also satisfies `w ≥ 0`.

use super::{target, LearningError, Sample, SubModel};
use nalgebra::{DMatrix, DVector};

/// Expected ensemble error when `n` sub-models share error rate `err` and
/// pairwise correlation `theta`: `(1 + theta·(n-1)) / n · err`.
pub fn expected_ensemble_error(theta: f64, n: usize, err: f64) -> Result<f64, LearningError> {
    if !(0.0..=1.0).contains(&theta) {
        return Err(LearningError::Domain(format!(
            "theta={theta} not in [0, 1]"
        )));
    }
    if n == 0 {
        return Err(LearningError::Domain("n must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&err) {
        return Err(LearningError::Domain(format!("err={err} not in [0, 1]")));
    }
    Ok((1.0 + theta * (n as f64 - 1.0)) / n as f64 * err)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleWeights(Vec<f64>);

impl EnsembleWeights {
    pub fn new(w: Vec<f64>) -> Self {
        Self(w)
    }

    pub fn uniform(n: usize) -> Self {
        Self(vec![1.0 / n as f64; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }
}

pub fn soft_vote(outputs: &[f64], w: &EnsembleWeights) -> Result<f64, LearningError> {
    if outputs.len() != w.len() {
        return Err(LearningError::LengthMismatch {
            expected: w.len(),
            actual: outputs.len(),
        });
    }
    Ok(outputs.iter().zip(w.as_slice()).map(|(h, w)| h * w).sum())
}

/// Soft vote applied per output dimension.
pub fn soft_vote_vectors(
    outputs: &[Vec<f64>],
    w: &EnsembleWeights,
) -> Result<Vec<f64>, LearningError> {
    if outputs.len() != w.len() {
        return Err(LearningError::LengthMismatch {
            expected: w.len(),
            actual: outputs.len(),
        });
    }
    let dims = outputs.first().map_or(0, Vec::len);
    let mut out = vec![0.0; dims];
    for (o, &wi) in outputs.iter().zip(w.as_slice()) {
        if o.len() != dims {
            return Err(LearningError::LengthMismatch {
                expected: dims,
                actual: o.len(),
            });
        }
        for (acc, v) in out.iter_mut().zip(o) {
            *acc += wi * v;
        }
    }
    Ok(out)
}

/// Symmetric error covariance matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CovMatrix(DMatrix<f64>);

impl CovMatrix {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, LearningError> {
        let n = rows.len();
        for r in rows {
            if r.len() != n {
                return Err(LearningError::LengthMismatch {
                    expected: n,
                    actual: r.len(),
                });
            }
        }
        Ok(Self(DMatrix::from_fn(n, n, |i, j| rows[i][j])))
    }

    pub fn identity(n: usize) -> Self {
        Self(DMatrix::identity(n, n))
    }

    /// `C_ij = (1/|V|) Σ_x ⟨e_i(x), e_j(x)⟩` where `errors[i][x]` is the
    /// error vector of model `i` on input `x`.
    pub fn from_errors(errors: &[Vec<Vec<f64>>]) -> Result<Self, LearningError> {
        let n = errors.len();
        let points = errors.first().map_or(0, Vec::len);
        if points == 0 {
            return Err(LearningError::EmptyValidation);
        }
        if let Some(bad) = errors.iter().find(|e| e.len() != points) {
            return Err(LearningError::LengthMismatch {
                expected: points,
                actual: bad.len(),
            });
        }
        let mut c = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let s: f64 = errors[i]
                    .iter()
                    .zip(&errors[j])
                    .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>())
                    .sum();
                let v = s / points as f64;
                c[(i, j)] = v;
                c[(j, i)] = v;
            }
        }
        Ok(Self(c))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        let n = self.dim();
        (0..n).all(|i| (0..n).all(|j| (self.0[(i, j)] - self.0[(j, i)]).abs() <= tol))
    }

    /// Smallest eigenvalue is at least `-tol`.
    pub fn is_psd(&self, tol: f64) -> bool {
        self.0
            .clone()
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .all(|&l| l >= -tol)
    }
}

/// Error covariance of `models` on `validation`, against one-hot targets.
pub fn estimate_c(
    models: &[&dyn SubModel],
    validation: &[Sample],
) -> Result<CovMatrix, LearningError> {
    if validation.is_empty() {
        return Err(LearningError::EmptyValidation);
    }
    let errors: Vec<Vec<Vec<f64>>> = models
        .iter()
        .map(|m| {
            validation
                .iter()
                .map(|x| {
                    let t = target(x.label, m.output_dims());
                    m.output(x).iter().zip(&t).map(|(h, f)| h - f).collect()
                })
                .collect()
        })
        .collect();
    CovMatrix::from_errors(&errors)
}

/// `wᵀCw`.
pub fn ensemble_error(w: &EnsembleWeights, c: &CovMatrix) -> Result<f64, LearningError> {
    if w.len() != c.dim() {
        return Err(LearningError::LengthMismatch {
            expected: c.dim(),
            actual: w.len(),
        });
    }
    let v = DVector::from_column_slice(w.as_slice());
    Ok((v.transpose() * c.matrix() * &v)[(0, 0)])
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightSolution {
    pub weights: EnsembleWeights,
    /// The system stayed singular after regularization and uniform weights
    /// were returned instead.
    pub fallback: bool,
}

/// Largest ensemble for which the exhaustive support search is attempted.
const MAX_EXHAUSTIVE: usize = 16;

/// Minimum of `wᵀCw` over the probability simplex.
///
/// With `ridge: None`, `C` is used as given when it is well conditioned and
/// `1e-8 · trace(C) / n` is added to the diagonal otherwise. The unconstrained Lagrangian
/// solution is computed first; models with negative weight are dropped and
/// the rest re-solved until all weights are nonnegative. If the result then
/// fails the optimality conditions for the dropped models, every support is
/// tried (up to 16 models).
pub fn optimal_weights(c: &CovMatrix, ridge: Option<f64>) -> Result<WeightSolution, LearningError> {
    let n = c.dim();
    if n == 0 {
        return Err(LearningError::Domain("empty covariance matrix".into()));
    }
    if n == 1 {
        return Ok(WeightSolution {
            weights: EnsembleWeights::new(vec![1.0]),
            fallback: false,
        });
    }
    let ridge = ridge.unwrap_or_else(|| {
        if well_conditioned(c.matrix()) {
            0.0
        } else {
            1e-8 * c.trace() / n as f64
        }
    });
    let reg = c.matrix() + DMatrix::identity(n, n) * ridge;
    let fallback = || WeightSolution {
        weights: EnsembleWeights::uniform(n),
        fallback: true,
    };

    let mut support: Vec<usize> = (0..n).collect();
    let w = loop {
        let Some(sub) = solve_support(&reg, &support) else {
            return Ok(fallback());
        };
        if sub.iter().all(|&x| x >= 0.0) {
            break scatter(n, &support, &sub);
        }
        support = support
            .iter()
            .zip(&sub)
            .filter(|(_, &x)| x >= 0.0)
            .map(|(&i, _)| i)
            .collect();
    };

    if support.len() < n && !kkt_holds(&reg, &w) && n <= MAX_EXHAUSTIVE {
        if let Some(best) = best_support(&reg) {
            return Ok(WeightSolution {
                weights: EnsembleWeights::new(best),
                fallback: false,
            });
        }
    }
    Ok(WeightSolution {
        weights: EnsembleWeights::new(w),
        fallback: false,
    })
}

/// Reciprocal eigenvalue condition number above `1e-10`.
fn well_conditioned(c: &DMatrix<f64>) -> bool {
    let eig = c.clone().symmetric_eigen().eigenvalues;
    let max = eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
    max > 0.0 && min > 1e-10 * max
}

/// Normalized `(C_S)⁻¹1` on the index set `support`.
fn solve_support(reg: &DMatrix<f64>, support: &[usize]) -> Option<Vec<f64>> {
    let k = support.len();
    let sub = DMatrix::from_fn(k, k, |i, j| reg[(support[i], support[j])]);
    let ones = DVector::from_element(k, 1.0);
    let x = match sub.clone().cholesky() {
        Some(ch) => ch.solve(&ones),
        None => sub.lu().solve(&ones)?,
    };
    let total: f64 = x.iter().sum();
    if !total.is_finite() || total <= 0.0 || x.iter().any(|v| !v.is_finite()) {
        return None;
    }
    Some(x.iter().map(|v| v / total).collect())
}

fn scatter(n: usize, support: &[usize], values: &[f64]) -> Vec<f64> {
    let mut w = vec![0.0; n];
    for (&i, &v) in support.iter().zip(values) {
        w[i] = v;
    }
    w
}

/// Optimality on the simplex: every gradient entry is at least the
/// multiplier `wᵀCw`, with equality on the support.
fn kkt_holds(reg: &DMatrix<f64>, w: &[f64]) -> bool {
    let v = DVector::from_column_slice(w);
    let grad = reg * &v;
    let lambda = v.dot(&grad);
    let tol = 1e-12 * lambda.abs().max(1e-300);
    grad.iter().all(|&g| g >= lambda - tol)
}

fn best_support(reg: &DMatrix<f64>) -> Option<Vec<f64>> {
    let n = reg.nrows();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 1u32..(1 << n) {
        let support: Vec<usize> = (0..n).filter(|i| mask >> i & 1 == 1).collect();
        let Some(sub) = solve_support(reg, &support) else {
            continue;
        };
        if sub.iter().any(|&x| x < 0.0) {
            continue;
        }
        let w = scatter(n, &support, &sub);
        let v = DVector::from_column_slice(&w);
        let obj = v.dot(&(reg * &v));
        if best.as_ref().is_none_or(|(b, _)| obj < *b) {
            best = Some((obj, w));
        }
    }
    best.map(|(_, w)| w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learning::SyntheticLearner;

    #[test]
    fn eq2_reference_values() {
        assert!((expected_ensemble_error(0.0, 4, 0.2).unwrap() - 0.05).abs() < 1e-15);
        for n in 1..10 {
            assert!((expected_ensemble_error(1.0, n, 0.2).unwrap() - 0.2).abs() < 1e-15);
        }
        for theta in [0.0, 0.3, 1.0] {
            assert_eq!(expected_ensemble_error(theta, 1, 0.37).unwrap(), 0.37);
        }
        assert!(expected_ensemble_error(1.5, 2, 0.1).is_err());
        assert!(expected_ensemble_error(0.5, 0, 0.1).is_err());
        assert!(expected_ensemble_error(0.5, 2, -0.1).is_err());
    }

    #[test]
    fn soft_vote_cases() {
        let u = EnsembleWeights::uniform(4);
        assert!((soft_vote(&[0.3; 4], &u).unwrap() - 0.3).abs() < 1e-15);
        let one_hot = EnsembleWeights::new(vec![0.0, 1.0, 0.0]);
        assert_eq!(soft_vote(&[5.0, 7.0, 9.0], &one_hot).unwrap(), 7.0);
        let w = EnsembleWeights::new(vec![0.8, 0.2]);
        assert!((soft_vote(&[1.0, 0.0], &w).unwrap() - 0.8).abs() < 1e-15);
        assert!(matches!(
            soft_vote(&[1.0], &w),
            Err(LearningError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn covariance_of_constant_error() {
        let e = 0.3;
        let errors = vec![vec![vec![e]; 50]];
        let c = CovMatrix::from_errors(&errors).unwrap();
        assert!((c.get(0, 0) - e * e).abs() < 1e-15);
    }

    #[test]
    fn identical_models_fill_covariance() {
        let a = SyntheticLearner::fixed(0.2, 0.0, 1, 1, 5);
        let b = a.clone();
        let validation: Vec<Sample> = (0..500)
            .map(|key| Sample {
                key,
                label: 0,
                features: vec![],
            })
            .collect();
        let c = estimate_c(&[&a, &b], &validation).unwrap();
        assert_eq!(c.get(0, 0), c.get(0, 1));
        assert_eq!(c.get(1, 1), c.get(0, 1));
        assert!(c.is_symmetric(0.0));
    }

    #[test]
    fn empty_validation_rejected() {
        let a = SyntheticLearner::fixed(0.2, 0.0, 1, 1, 5);
        assert_eq!(estimate_c(&[&a], &[]), Err(LearningError::EmptyValidation));
    }

    #[test]
    fn identity_gives_uniform() {
        for n in 1..=6 {
            let w = optimal_weights(&CovMatrix::identity(n), None).unwrap();
            assert!(!w.fallback);
            for &x in w.weights.as_slice() {
                assert_eq!(x, 1.0 / n as f64, "n={n}");
            }
        }
    }

    #[test]
    fn diagonal_one_four() {
        let c = CovMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 4.0]]).unwrap();
        let w = optimal_weights(&c, None).unwrap().weights;
        assert!((w.as_slice()[0] - 0.8).abs() < 1e-9);
        assert!((w.as_slice()[1] - 0.2).abs() < 1e-9);
        // Independent check: dense grid over the 1-simplex at step 1e-4.
        let (mut best, mut best_obj) = (0.0, f64::INFINITY);
        for i in 0..=10_000 {
            let a = i as f64 * 1e-4;
            let obj = a * a + 4.0 * (1.0 - a) * (1.0 - a);
            if obj < best_obj {
                best_obj = obj;
                best = a;
            }
        }
        assert!((best - 0.8).abs() < 1e-9);
    }

    #[test]
    fn negative_solution_is_projected() {
        // Strongly correlated pair with unequal variance: the unconstrained
        // optimum puts negative weight on the worse model.
        let c = CovMatrix::from_rows(&[vec![1.0, 1.05], vec![1.05, 1.2]]).unwrap();
        let w = optimal_weights(&c, None).unwrap().weights;
        assert_eq!(w.as_slice(), &[1.0, 0.0]);
    }

    #[test]
    fn singular_zero_matrix_falls_back() {
        let c = CovMatrix::from_rows(&[vec![0.0, 0.0], vec![0.0, 0.0]]).unwrap();
        let s = optimal_weights(&c, None).unwrap();
        assert!(s.fallback);
        assert_eq!(s.weights, EnsembleWeights::uniform(2));
    }

    #[test]
    fn ensemble_error_cases() {
        let c = CovMatrix::from_rows(&[
            vec![2.0, 0.1, 0.0],
            vec![0.1, 3.0, 0.2],
            vec![0.0, 0.2, 5.0],
        ])
        .unwrap();
        for i in 0..3 {
            let mut w = vec![0.0; 3];
            w[i] = 1.0;
            assert_eq!(
                ensemble_error(&EnsembleWeights::new(w), &c).unwrap(),
                c.get(i, i)
            );
        }
        let id = CovMatrix::identity(4);
        assert!((ensemble_error(&EnsembleWeights::uniform(4), &id).unwrap() - 0.25).abs() < 1e-15);
        assert!(ensemble_error(&EnsembleWeights::uniform(2), &c).is_err());
    }
}
