//! Multivariate Gaussian distributions over voltage increments.
//!
//! Everything density-related is done in log space: the posterior-ratio
//! statistic and the learner both consume per-sample log densities, and
//! products over hundreds of samples would underflow otherwise. Cholesky
//! factors back the solves and the sampler; eigendecompositions are reserved
//! for whitening.

use alloc::vec::Vec;
use core::fmt;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::matfun::SymMatrix;

/// Relative floor under which a symmetric matrix is treated as non-PD:
/// `min_eig > PD_REL_TOL * trace / dim`.
pub const PD_REL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub enum GaussError {
    DimensionMismatch { expected: usize, got: usize },
    NotPositiveDefinite { min_eigenvalue: f64 },
    DegenerateConditional { variance: f64 },
    BadIndices { i: usize, k: usize, dim: usize },
}

impl fmt::Display for GaussError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::DimensionMismatch { expected, got } => {
                write!(f, "dimension mismatch: expected {expected}, got {got}")
            }
            Self::NotPositiveDefinite { min_eigenvalue } => {
                write!(f, "covariance is not positive definite (min eigenvalue {min_eigenvalue:e})")
            }
            Self::DegenerateConditional { variance } => {
                write!(f, "conditional variance {variance:e} is numerically degenerate")
            }
            Self::BadIndices { i, k, dim } => {
                write!(f, "bus pair ({i}, {k}) invalid for dimension {dim}")
            }
        }
    }
}

/// Checks the relative PD tolerance used across the crate.
pub fn is_positive_definite(x: &SymMatrix) -> bool {
    let dim = x.dim() as f64;
    let floor = PD_REL_TOL * x.matrix().trace() / dim;
    crate::matfun::min_eigenvalue(x) > floor
}

/// A multivariate Gaussian over voltage-magnitude increments: the `g` / `f`
/// of the detection problem. Immutable; the Cholesky factor of the
/// covariance is computed once at construction.
#[derive(Clone)]
pub struct IncrementDistribution {
    mean: DVector<f64>,
    cov: SymMatrix,
    chol: Cholesky<f64, Dyn>,
    log_det: f64,
}

impl fmt::Debug for IncrementDistribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("IncrementDistribution")
            .field("mean", &self.mean)
            .field("cov", &self.cov)
            .finish()
    }
}

impl IncrementDistribution {
    pub fn new(mean: DVector<f64>, cov: SymMatrix) -> Result<Self, GaussError> {
        if mean.len() != cov.dim() {
            return Err(GaussError::DimensionMismatch { expected: cov.dim(), got: mean.len() });
        }
        if !is_positive_definite(&cov) {
            return Err(GaussError::NotPositiveDefinite {
                min_eigenvalue: crate::matfun::min_eigenvalue(&cov),
            });
        }
        let chol = cov
            .matrix()
            .clone()
            .cholesky()
            .ok_or(GaussError::NotPositiveDefinite { min_eigenvalue: 0.0 })?;
        let log_det = 2.0 * chol.l().diagonal().iter().map(|&d| libm::log(d)).sum::<f64>();
        Ok(Self { mean, cov, chol, log_det })
    }

    /// Scalar convenience constructor.
    pub fn scalar(mean: f64, variance: f64) -> Result<Self, GaussError> {
        Self::new(
            DVector::from_vec(alloc::vec![mean]),
            SymMatrix::from_diagonal(&DVector::from_vec(alloc::vec![variance])),
        )
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &SymMatrix {
        &self.cov
    }

    pub fn log_det_cov(&self) -> f64 {
        self.log_det
    }

    /// `Σ⁻¹ v` via the cached Cholesky factor.
    pub fn solve(&self, v: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(v)
    }

    /// `Σ⁻¹` as a dense matrix.
    pub fn precision(&self) -> SymMatrix {
        SymMatrix::symmetrized(self.chol.inverse())
    }

    /// Log density `log N(x; μ, Σ)`.
    pub fn log_pdf(&self, x: &DVector<f64>) -> Result<f64, GaussError> {
        if x.len() != self.dim() {
            return Err(GaussError::DimensionMismatch { expected: self.dim(), got: x.len() });
        }
        let centered = x - &self.mean;
        let quad = centered.dot(&self.chol.solve(&centered));
        let m = self.dim() as f64;
        Ok(-0.5 * (quad + self.log_det + m * libm::log(2.0 * core::f64::consts::PI)))
    }

    /// Closed-form Gaussian KL divergence `D_KL(self ‖ other)`.
    pub fn kl_divergence(&self, other: &Self) -> Result<f64, GaussError> {
        if self.dim() != other.dim() {
            return Err(GaussError::DimensionMismatch { expected: self.dim(), got: other.dim() });
        }
        let m = self.dim() as f64;
        let trace = other.chol.solve(self.cov.matrix()).trace();
        let dmean = other.mean() - self.mean();
        let quad = dmean.dot(&other.chol.solve(&dmean));
        Ok(0.5 * (trace + quad - m + other.log_det - self.log_det))
    }

    /// Draws `n` i.i.d. samples; deterministic given the RNG state.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Vec<DVector<f64>> {
        let l = self.chol.l();
        (0..n)
            .map(|_| {
                let z = DVector::from_iterator(
                    self.dim(),
                    (0..self.dim()).map(|_| rng.sample::<f64, _>(StandardNormal)),
                );
                &self.mean + &l * z
            })
            .collect()
    }
}

/// PCA whitening transform `W` with `Wᵀ W = Σ₀⁻¹`, built from the
/// eigendecomposition `Σ₀ = Q diag(λ) Qᵀ` as `W = diag(λ)^{-1/2} Qᵀ`.
#[derive(Debug, Clone)]
pub struct WhiteningTransform {
    w: DMatrix<f64>,
    w_inv: DMatrix<f64>,
}

impl WhiteningTransform {
    pub fn new(sigma0: &SymMatrix) -> Result<Self, GaussError> {
        if !is_positive_definite(sigma0) {
            return Err(GaussError::NotPositiveDefinite {
                min_eigenvalue: crate::matfun::min_eigenvalue(sigma0),
            });
        }
        let eig = sigma0.matrix().clone().symmetric_eigen();
        let inv_sqrt = DVector::from_iterator(
            eig.eigenvalues.len(),
            eig.eigenvalues.iter().map(|&a| 1.0 / libm::sqrt(a)),
        );
        let sqrt = DVector::from_iterator(
            eig.eigenvalues.len(),
            eig.eigenvalues.iter().map(|&a| libm::sqrt(a)),
        );
        let w = DMatrix::from_diagonal(&inv_sqrt) * eig.eigenvectors.transpose();
        let w_inv = &eig.eigenvectors * DMatrix::from_diagonal(&sqrt);
        Ok(Self { w, w_inv })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.w * x
    }

    pub fn apply_stream(&self, stream: &[DVector<f64>]) -> Vec<DVector<f64>> {
        stream.iter().map(|x| self.apply(x)).collect()
    }

    /// Pushes a distribution through `W`: mean `Wμ`, covariance `WΣWᵀ`.
    pub fn apply_distribution(
        &self,
        dist: &IncrementDistribution,
    ) -> Result<IncrementDistribution, GaussError> {
        let mean = &self.w * dist.mean();
        let cov = SymMatrix::symmetrized(&self.w * dist.cov().matrix() * self.w.transpose());
        IncrementDistribution::new(mean, cov)
    }

    /// Maps parameters learned in whitened coordinates back to the original
    /// ones: mean `W⁻¹ μ`, covariance `W⁻¹ Σ W⁻ᵀ`.
    pub fn unapply_params(&self, mean: &DVector<f64>, cov: &SymMatrix) -> (DVector<f64>, SymMatrix) {
        let m = &self.w_inv * mean;
        let c = SymMatrix::symmetrized(&self.w_inv * cov.matrix() * self.w_inv.transpose());
        (m, c)
    }
}

/// Schur-complement conditional covariance of the pair `(i, k)` given all
/// other coordinates: `Σ_II - Σ_IK Σ_KK⁻¹ Σ_IKᵀ`.
pub fn conditional_covariance(
    sigma: &SymMatrix,
    i: usize,
    k: usize,
) -> Result<SymMatrix, GaussError> {
    let dim = sigma.dim();
    if i == k || i >= dim || k >= dim || dim < 3 {
        return Err(GaussError::BadIndices { i, k, dim });
    }
    let rest: Vec<usize> = (0..dim).filter(|&j| j != i && j != k).collect();
    let idx = [i, k];
    let s = sigma.matrix();
    let s_ii = DMatrix::from_fn(2, 2, |r, c| s[(idx[r], idx[c])]);
    let s_ik = DMatrix::from_fn(2, rest.len(), |r, c| s[(idx[r], rest[c])]);
    let s_kk = DMatrix::from_fn(rest.len(), rest.len(), |r, c| s[(rest[r], rest[c])]);
    let chol = s_kk
        .cholesky()
        .ok_or(GaussError::NotPositiveDefinite { min_eigenvalue: 0.0 })?;
    let cond = &s_ii - &s_ik * chol.solve(&s_ik.transpose());
    Ok(SymMatrix::symmetrized(cond))
}
