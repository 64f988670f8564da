//! Matrix functions for symmetric matrices.
//!
//! The covariance mirror step needs `exp` and `log` of symmetric matrices.
//! Two routes are provided: an exact eigendecomposition route, and truncated
//! Taylor series
//!
//! ```text
//! exp(X) ≈ Σ_{k=0}^{K_exp} X^k / k!
//! log(X) ≈ Σ_{k=1}^{K_log} (-1)^{k+1} (X - I)^k / k
//! ```
//!
//! The truncated exponential of a symmetric `X` is positive definite whenever
//! `K_exp` is even and `K_exp > max(0, -a_min)` with `a_min` the smallest
//! eigenvalue of `X`; callers get an error instead of a non-PD result when
//! that condition fails. The truncated logarithm requires the spectral
//! radius of `X - I` to be below one (the Mercator series diverges outside).

use alloc::string::String;
use core::fmt;

use nalgebra::{DMatrix, DVector};

/// Absolute tolerance for accepting a matrix as symmetric.
pub const SYMMETRY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub enum MatFunError {
    NotSquare { rows: usize, cols: usize },
    NotSymmetric { max_asymmetry: f64 },
    /// `k_exp` must be even and >= 2.
    OddTruncation { k_exp: usize },
    /// The positivity condition `k_exp > -a_min` failed.
    TruncationTooSmall { k_exp: usize, min_eigenvalue: f64 },
    NotPositiveDefinite { min_eigenvalue: f64 },
    /// Spectral radius of `X - I` is >= 1, the log series diverges.
    LogSeriesDivergent { spectral_radius: f64 },
}

impl fmt::Display for MatFunError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::NotSquare { rows, cols } => {
                write!(f, "matrix is {rows}x{cols}, expected square")
            }
            Self::NotSymmetric { max_asymmetry } => {
                write!(f, "matrix is not symmetric (max |a_ij - a_ji| = {max_asymmetry:e})")
            }
            Self::OddTruncation { k_exp } => {
                write!(f, "exp truncation level {k_exp} must be even and >= 2")
            }
            Self::TruncationTooSmall { k_exp, min_eigenvalue } => write!(
                f,
                "truncation level {k_exp} <= -a_min = {:} cannot guarantee positive definiteness",
                -min_eigenvalue
            ),
            Self::NotPositiveDefinite { min_eigenvalue } => {
                write!(f, "matrix is not positive definite (min eigenvalue {min_eigenvalue:e})")
            }
            Self::LogSeriesDivergent { spectral_radius } => write!(
                f,
                "log series diverges: spectral radius of X - I is {spectral_radius} >= 1"
            ),
        }
    }
}

/// A real symmetric matrix. Symmetry is validated on construction and every
/// operation in this module preserves it exactly (outputs are re-symmetrized
/// by averaging with the transpose to kill floating-point drift).
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    data: DMatrix<f64>,
}

impl SymMatrix {
    pub fn new(data: DMatrix<f64>) -> Result<Self, MatFunError> {
        if data.nrows() != data.ncols() {
            return Err(MatFunError::NotSquare { rows: data.nrows(), cols: data.ncols() });
        }
        let mut max_asym = 0.0f64;
        for i in 0..data.nrows() {
            for j in (i + 1)..data.ncols() {
                let d = libm::fabs(data[(i, j)] - data[(j, i)]);
                if d > max_asym {
                    max_asym = d;
                }
            }
        }
        if max_asym > SYMMETRY_TOL {
            return Err(MatFunError::NotSymmetric { max_asymmetry: max_asym });
        }
        Ok(Self { data })
    }

    /// Builds from an arbitrary square matrix by averaging with its transpose.
    pub fn symmetrized(data: DMatrix<f64>) -> Self {
        let sym = (&data + data.transpose()) * 0.5;
        Self { data: sym }
    }

    pub fn from_diagonal(diag: &DVector<f64>) -> Self {
        Self { data: DMatrix::from_diagonal(diag) }
    }

    pub fn zeros(dim: usize) -> Self {
        Self { data: DMatrix::zeros(dim, dim) }
    }

    pub fn identity(dim: usize) -> Self {
        Self { data: DMatrix::identity(dim, dim) }
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.data
    }

    pub fn scale(&self, factor: f64) -> Self {
        Self { data: &self.data * factor }
    }

    /// Frobenius-normed distance, handy in tests.
    pub fn frobenius_distance(&self, other: &Self) -> f64 {
        (&self.data - &other.data).norm()
    }
}

/// Truncation levels for the accelerated exp/log path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ApproxConfig {
    pub k_exp: usize,
    pub k_log: usize,
}

impl Default for ApproxConfig {
    fn default() -> Self {
        Self { k_exp: 12, k_log: 16 }
    }
}

impl ApproxConfig {
    pub fn validate(&self) -> Result<(), MatFunError> {
        if self.k_exp < 2 || self.k_exp % 2 != 0 {
            return Err(MatFunError::OddTruncation { k_exp: self.k_exp });
        }
        Ok(())
    }
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(x: &SymMatrix) -> f64 {
    let (eigs, _) = jacobi_eigen(&x.data);
    eigs.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Gershgorin lower bound on the smallest eigenvalue; cheap certificate used
/// to skip the eigendecomposition in the common case.
fn gershgorin_min(x: &DMatrix<f64>) -> f64 {
    let n = x.nrows();
    let mut lo = f64::INFINITY;
    for i in 0..n {
        let mut off = 0.0;
        for j in 0..n {
            if j != i {
                off += libm::fabs(x[(i, j)]);
            }
        }
        lo = lo.min(x[(i, i)] - off);
    }
    lo
}

fn gershgorin_max(x: &DMatrix<f64>) -> f64 {
    let n = x.nrows();
    let mut hi = f64::NEG_INFINITY;
    for i in 0..n {
        let mut off = 0.0;
        for j in 0..n {
            if j != i {
                off += libm::fabs(x[(i, j)]);
            }
        }
        hi = hi.max(x[(i, i)] + off);
    }
    hi
}

/// Truncated-Taylor matrix exponential `Σ_{k=0}^{k_exp} X^k / k!`.
///
/// Evaluated Horner-style (`I + X/k (I + X/(k-1) (...))`) so no bare power
/// `X^k` is ever formed.
pub fn truncated_exp(x: &SymMatrix, k_exp: usize) -> Result<SymMatrix, MatFunError> {
    if k_exp < 2 || k_exp % 2 != 0 {
        return Err(MatFunError::OddTruncation { k_exp });
    }
    // Positivity condition k_exp > max(0, -a_min). Gershgorin certifies most
    // inputs; fall back to the exact spectrum only when it cannot.
    if !((k_exp as f64) > -gershgorin_min(&x.data)) {
        let a_min = min_eigenvalue(x);
        if !((k_exp as f64) > -a_min) {
            return Err(MatFunError::TruncationTooSmall { k_exp, min_eigenvalue: a_min });
        }
    }
    let n = x.dim();
    let eye = DMatrix::<f64>::identity(n, n);
    let mut acc = eye.clone();
    for k in (1..=k_exp).rev() {
        acc = &eye + (&x.data * acc) / (k as f64);
    }
    Ok(SymMatrix::symmetrized(acc))
}

/// Truncated Mercator matrix logarithm `Σ_{k=1}^{k_log} (-1)^{k+1} (X-I)^k / k`.
pub fn truncated_log(x: &SymMatrix, k_log: usize) -> Result<SymMatrix, MatFunError> {
    let n = x.dim();
    let y = &x.data - DMatrix::<f64>::identity(n, n);
    // Convergence needs every eigenvalue of X in (0, 2).
    let (g_lo, g_hi) = (gershgorin_min(&x.data), gershgorin_max(&x.data));
    if !(g_lo > 0.0 && g_hi < 2.0) {
        let (eigs, _) = jacobi_eigen(&x.data);
        let lo = eigs.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = eigs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if lo <= 0.0 {
            return Err(MatFunError::NotPositiveDefinite { min_eigenvalue: lo });
        }
        let radius = libm::fabs(lo - 1.0).max(libm::fabs(hi - 1.0));
        if radius >= 1.0 {
            return Err(MatFunError::LogSeriesDivergent { spectral_radius: radius });
        }
    }
    let mut acc = y.clone();
    let mut power = y.clone();
    let mut sign = 1.0;
    for k in 2..=k_log {
        power *= &y;
        sign = -sign;
        acc += &power * (sign / k as f64);
    }
    Ok(SymMatrix::symmetrized(acc))
}

/// Exact matrix exponential via eigendecomposition; PD for any symmetric input.
pub fn exact_exp_sym(x: &SymMatrix) -> SymMatrix {
    apply_spectral(x, libm::exp)
}

/// Exact matrix logarithm via eigendecomposition; input must be PD.
pub fn exact_log_sym(x: &SymMatrix) -> Result<SymMatrix, MatFunError> {
    let (eigs, q) = jacobi_eigen(&x.data);
    let lo = eigs.iter().copied().fold(f64::INFINITY, f64::min);
    if lo <= 0.0 {
        return Err(MatFunError::NotPositiveDefinite { min_eigenvalue: lo });
    }
    let logged = DVector::from_iterator(eigs.len(), eigs.iter().map(|&a| libm::log(a)));
    Ok(SymMatrix::symmetrized(&q * DMatrix::from_diagonal(&logged) * q.transpose()))
}

fn apply_spectral(x: &SymMatrix, f: fn(f64) -> f64) -> SymMatrix {
    let (eigs, q) = jacobi_eigen(&x.data);
    let mapped = DVector::from_iterator(eigs.len(), eigs.iter().map(|&a| f(a)));
    SymMatrix::symmetrized(&q * DMatrix::from_diagonal(&mapped) * q.transpose())
}

/// Cyclic Jacobi eigendecomposition: `x = Q diag(a) Qᵀ`.
///
/// The tridiagonalization-based solver in nalgebra can leave residuals of
/// order 1e-8 on moderately conditioned inputs, which is too coarse for the
/// exp/log paths used as accuracy oracles; two-sided Jacobi rotations keep
/// the residual at machine precision for the small dimensions handled here.
fn jacobi_eigen(x: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = x.nrows();
    let mut m = x.clone();
    let mut q = DMatrix::<f64>::identity(n, n);
    let scale = m.norm();
    for _ in 0..40 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += m[(i, j)] * m[(i, j)];
            }
        }
        if libm::sqrt(off) <= 1e-15 * scale || off == 0.0 {
            break;
        }
        for p in 0..n {
            for r in (p + 1)..n {
                let apr = m[(p, r)];
                if apr == 0.0 {
                    continue;
                }
                let theta = (m[(r, r)] - m[(p, p)]) / (2.0 * apr);
                let sign = if theta >= 0.0 { 1.0 } else { -1.0 };
                let t = sign / (libm::fabs(theta) + libm::sqrt(theta * theta + 1.0));
                let c = 1.0 / libm::sqrt(t * t + 1.0);
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkr) = (m[(k, p)], m[(k, r)]);
                    m[(k, p)] = c * mkp - s * mkr;
                    m[(k, r)] = s * mkp + c * mkr;
                }
                for k in 0..n {
                    let (mpk, mrk) = (m[(p, k)], m[(r, k)]);
                    m[(p, k)] = c * mpk - s * mrk;
                    m[(r, k)] = s * mpk + c * mrk;
                }
                for k in 0..n {
                    let (qkp, qkr) = (q[(k, p)], q[(k, r)]);
                    q[(k, p)] = c * qkp - s * qkr;
                    q[(k, r)] = s * qkp + c * qkr;
                }
            }
        }
    }
    (DVector::from_fn(n, |i, _| m[(i, i)]), q)
}

impl fmt::Display for SymMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.data)
    }
}

/// Human-readable name used by the CLI benchmark output.
pub fn describe(cfg: &ApproxConfig) -> String {
    use alloc::format;
    format!("K_exp={}, K_log={}", cfg.k_exp, cfg.k_log)
}
