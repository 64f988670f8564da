//! Out-of-service branch identification from conditional correlations.
//!
//! For Gaussian voltage increments, the conditional correlation of buses i
//! and k given every other bus,
//!
//! ```text
//! ρ_{ik|rest}(Σ) = C₁₂ / √(C₁₁ C₂₂),   C = Σ_II − Σ_IK Σ_KK⁻¹ Σ_IKᵀ,
//! ```
//!
//! is large in magnitude when an energized line couples the pair directly
//! and collapses towards zero when that line opens. A branch is declared out
//! of service when |ρ| exceeded `delta_max` under the pre-outage covariance
//! and fell below `delta_min` under the (learned) post-outage one.
//!
//! [`localize`] scans every pair of the covariance index set. The per-pair
//! Schur complement above costs O(M³) each; the identity
//! ρ_{ik|rest} = −P_ik/√(P_ii P_kk) with P = Σ⁻¹ gives every pair from one
//! O(M³) factorization, and [`conditional_correlation`] keeps the literal
//! Schur route around as the equivalence oracle.

use alloc::vec::Vec;
use core::fmt;

use crate::gaussian::{conditional_covariance, GaussError, IncrementDistribution};
use crate::matfun::SymMatrix;

#[derive(Debug, Clone, PartialEq)]
pub enum LocalizeError {
    BadThresholds { delta_max: f64, delta_min: f64 },
    BadIndices { i: usize, k: usize, dim: usize },
    DimensionMismatch { left: usize, right: usize },
    Gauss(GaussError),
}

impl fmt::Display for LocalizeError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::BadThresholds { delta_max, delta_min } => write!(
                f,
                "thresholds must satisfy 0 < delta_min < delta_max < 1, got max {delta_max}, min {delta_min}"
            ),
            Self::BadIndices { i, k, dim } => {
                write!(f, "bus pair ({i}, {k}) invalid for dimension {dim}")
            }
            Self::DimensionMismatch { left, right } => {
                write!(f, "covariance dimensions differ: {left} vs {right}")
            }
            Self::Gauss(e) => write!(f, "{e}"),
        }
    }
}

impl From<GaussError> for LocalizeError {
    fn from(e: GaussError) -> Self {
        Self::Gauss(e)
    }
}

/// Decision thresholds on |ρ_{ik|rest}|.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalizerThresholds {
    /// A pair counts as directly coupled before the outage when |ρ⁻| exceeds this.
    pub delta_max: f64,
    /// A pair counts as decoupled after the outage when |ρ⁺| is below this.
    pub delta_min: f64,
}

impl Default for LocalizerThresholds {
    fn default() -> Self {
        Self { delta_max: 0.5, delta_min: 0.1 }
    }
}

impl LocalizerThresholds {
    pub fn new(delta_max: f64, delta_min: f64) -> Result<Self, LocalizeError> {
        if !(0.0 < delta_min && delta_min < delta_max && delta_max < 1.0) {
            return Err(LocalizeError::BadThresholds { delta_max, delta_min });
        }
        Ok(Self { delta_max, delta_min })
    }
}

/// ρ_{ik|rest} via the Schur complement conditional covariance.
pub fn conditional_correlation(
    sigma: &SymMatrix,
    i: usize,
    k: usize,
) -> Result<f64, LocalizeError> {
    let dim = sigma.dim();
    if i >= dim || k >= dim || i == k {
        return Err(LocalizeError::BadIndices { i, k, dim });
    }
    let cond = conditional_covariance(sigma, i, k)?;
    let c = cond.matrix();
    Ok(c[(0, 1)] / libm::sqrt(c[(0, 0)] * c[(1, 1)]))
}

/// ρ_{ik|rest} from a precomputed precision matrix: −P_ik / √(P_ii P_kk).
pub fn conditional_correlation_fast(
    precision: &SymMatrix,
    i: usize,
    k: usize,
) -> Result<f64, LocalizeError> {
    let dim = precision.dim();
    if i >= dim || k >= dim || i == k {
        return Err(LocalizeError::BadIndices { i, k, dim });
    }
    let p = precision.matrix();
    Ok(-p[(i, k)] / libm::sqrt(p[(i, i)] * p[(k, k)]))
}

/// One suspected branch with its pre/post conditional correlations; indices
/// are positions in the covariance index set (i < k).
#[derive(Debug, Clone, PartialEq)]
pub struct OutageCandidate {
    pub i: usize,
    pub k: usize,
    pub rho_pre: f64,
    pub rho_post: f64,
}

/// Scans all M(M−1)/2 pairs and returns those whose conditional correlation
/// collapsed between `sigma0` and `sigma1_hat`, sorted by (i, k). An empty
/// list is a valid outcome and is reported upstream as a localization
/// failure.
pub fn localize(
    sigma0: &SymMatrix,
    sigma1_hat: &SymMatrix,
    th: &LocalizerThresholds,
) -> Result<Vec<OutageCandidate>, LocalizeError> {
    if sigma0.dim() != sigma1_hat.dim() {
        return Err(LocalizeError::DimensionMismatch {
            left: sigma0.dim(),
            right: sigma1_hat.dim(),
        });
    }
    let p_pre = precision_of(sigma0)?;
    let p_post = precision_of(sigma1_hat)?;
    let dim = sigma0.dim();
    let mut out = Vec::new();
    for i in 0..dim {
        for k in (i + 1)..dim {
            let rho_pre = conditional_correlation_fast(&p_pre, i, k)?;
            let rho_post = conditional_correlation_fast(&p_post, i, k)?;
            if rho_pre.abs() > th.delta_max && rho_post.abs() < th.delta_min {
                out.push(OutageCandidate { i, k, rho_pre, rho_post });
            }
        }
    }
    Ok(out)
}

fn precision_of(sigma: &SymMatrix) -> Result<SymMatrix, LocalizeError> {
    IncrementDistribution::new(nalgebra::DVector::zeros(sigma.dim()), sigma.clone())
        .map(|d| d.precision())
        .map_err(LocalizeError::from)
}
