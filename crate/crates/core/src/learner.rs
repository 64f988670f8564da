//! Post-outage parameter learning by mirror descent under Bregman-divergence
//! constraints.
//!
//! The unknown post-change mean and covariance are estimated by alternating
//! projected gradient steps of the form
//!
//! ```text
//! θ ← Φ̇⁻¹( Φ̇(θ) − η ∇L(θ) )
//! ```
//!
//! with a mirror potential Φ per parameter: plain Euclidean or a
//! bounded-interval potential for the mean (voltage-increment means live in
//! (−1.1, 1.1) p.u.), and the matrix entropy `tr(Σ log Σ − Σ)` for the
//! covariance, whose mirror pair is the matrix log/exp — so every covariance
//! iterate stays positive definite by construction.
//!
//! The likelihood of the change-point mixture is a sum of products of
//! hundreds of densities and underflows when computed directly;
//! [`neg_log_likelihood`] therefore evaluates `-logsumexp` of the per-k log
//! terms, which has the same minimizers. Inside [`pgd_fit`] the objective
//! and gradients are additionally scaled by `1/N` so that the step size and
//! the stop tolerance are window-length independent, and dual-space steps
//! are norm-clipped to keep tiny early windows from blowing up the iterates.

use alloc::vec::Vec;
use core::fmt;

use nalgebra::{DMatrix, DVector};

use crate::gaussian::{GaussError, IncrementDistribution};
use crate::matfun::{
    exact_exp_sym, exact_log_sym, min_eigenvalue, truncated_exp, truncated_log, ApproxConfig,
    MatFunError, SymMatrix,
};

#[derive(Debug, Clone, PartialEq)]
pub enum LearnError {
    EmptyWindow,
    MeanOutOfBounds { value: f64, bound: f64 },
    NotPositiveDefinite { min_eigenvalue: f64 },
    Gauss(GaussError),
    MatFun(MatFunError),
}

impl fmt::Display for LearnError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::EmptyWindow => write!(f, "the sample window is empty"),
            Self::MeanOutOfBounds { value, bound } => {
                write!(f, "mean coordinate {value} is outside the open interval (-{bound}, {bound})")
            }
            Self::NotPositiveDefinite { min_eigenvalue } => {
                write!(f, "covariance iterate lost positive definiteness (min eig {min_eigenvalue:e})")
            }
            Self::Gauss(e) => write!(f, "{e}"),
            Self::MatFun(e) => write!(f, "{e}"),
        }
    }
}

impl From<GaussError> for LearnError {
    fn from(e: GaussError) -> Self {
        Self::Gauss(e)
    }
}

impl From<MatFunError> for LearnError {
    fn from(e: MatFunError) -> Self {
        Self::MatFun(e)
    }
}

/// Mirror map for the mean parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MeanMap {
    /// Φ(μ) = ½‖μ‖²; the update reduces to plain gradient descent.
    Euclidean,
    /// Per-coordinate Φ(μ) = (b+μ)log(b+μ) + (b−μ)log(b−μ) + μ; keeps every
    /// iterate strictly inside (−b, b).
    BoundedInterval { bound: f64 },
}

/// Φ(μ) = ½‖μ‖₂², Φ̇ = Φ̇⁻¹ = identity.
pub fn mirror_euclidean() -> MeanMap {
    MeanMap::Euclidean
}

/// Bounded-interval potential with the standard voltage-increment bound.
pub fn mirror_bounded_interval(bound: f64) -> MeanMap {
    MeanMap::BoundedInterval { bound }
}

// tanh saturates to exactly 1.0 in f64 near |x| ~ 19; clamping the dual
// coordinate keeps Φ̇⁻¹ strictly interior and Φ̇ finite.
const DUAL_CLAMP: f64 = 18.0;

impl MeanMap {
    pub fn is_feasible(&self, mu: &DVector<f64>) -> bool {
        match self {
            Self::Euclidean => true,
            Self::BoundedInterval { bound } => mu.iter().all(|&v| v.abs() < *bound),
        }
    }

    /// Φ̇(μ), the map into dual coordinates.
    pub fn forward(&self, mu: &DVector<f64>) -> Result<DVector<f64>, LearnError> {
        match self {
            Self::Euclidean => Ok(mu.clone()),
            Self::BoundedInterval { bound } => {
                let b = *bound;
                let mut out = DVector::zeros(mu.len());
                for (i, &v) in mu.iter().enumerate() {
                    if !(v.abs() < b) {
                        return Err(LearnError::MeanOutOfBounds { value: v, bound: b });
                    }
                    out[i] = libm::log((b + v) / (b - v)) + 1.0;
                }
                Ok(out)
            }
        }
    }

    /// Φ̇⁻¹(x), back to primal coordinates.
    pub fn inverse(&self, dual: &DVector<f64>) -> DVector<f64> {
        match self {
            Self::Euclidean => dual.clone(),
            Self::BoundedInterval { bound } => {
                let b = *bound;
                DVector::from_iterator(
                    dual.len(),
                    dual.iter().map(|&x| {
                        let arg = (x - 1.0).clamp(-DUAL_CLAMP, DUAL_CLAMP);
                        b * libm::tanh(arg / 2.0)
                    }),
                )
            }
        }
    }

    /// One mirror step μ ← Φ̇⁻¹(Φ̇(μ) − step).
    pub fn step(&self, mu: &DVector<f64>, step: &DVector<f64>) -> Result<DVector<f64>, LearnError> {
        let dual = self.forward(mu)? - step;
        Ok(self.inverse(&dual))
    }

    /// The potential Φ, used by Bregman-divergence checks.
    pub fn potential(&self, mu: &DVector<f64>) -> f64 {
        match self {
            Self::Euclidean => 0.5 * mu.norm_squared(),
            Self::BoundedInterval { bound } => {
                let b = *bound;
                mu.iter()
                    .map(|&v| (b + v) * libm::log(b + v) + (b - v) * libm::log(b - v) + v)
                    .sum()
            }
        }
    }

    /// Δ_Φ(a, b) = Φ(a) − Φ(b) − ⟨Φ̇(b), a − b⟩.
    pub fn bregman(&self, a: &DVector<f64>, b: &DVector<f64>) -> Result<f64, LearnError> {
        let grad_b = self.forward(b)?;
        // the "+1" offset in the bounded map's Φ̇ comes from the +μ term of Φ
        Ok(self.potential(a) - self.potential(b) - grad_b.dot(&(a - b)))
    }
}

/// Mirror map for the covariance parameter: matrix entropy
/// Φ(Σ) = tr(Σ log Σ − Σ) with Φ̇ = log and Φ̇⁻¹ = exp.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CovMap {
    /// Eigendecomposition exp/log.
    Exact,
    /// Truncated Taylor exp/log; falls back to the exact route whenever an
    /// input leaves the series' convergence region.
    Truncated(ApproxConfig),
}

/// Matrix-entropy mirror map, exact or accelerated.
pub fn mirror_matrix_entropy(accelerated: bool) -> CovMap {
    if accelerated {
        CovMap::Truncated(ApproxConfig::default())
    } else {
        CovMap::Exact
    }
}

impl CovMap {
    /// Φ̇(Σ) = log Σ. Returns the dual matrix and whether the accelerated
    /// path had to fall back to the exact one.
    pub fn forward(&self, sigma: &SymMatrix) -> Result<(SymMatrix, bool), LearnError> {
        match self {
            Self::Exact => Ok((exact_log_sym(sigma)?, false)),
            Self::Truncated(cfg) => match truncated_log(sigma, cfg.k_log) {
                Ok(l) => Ok((l, false)),
                Err(MatFunError::LogSeriesDivergent { .. }) => Ok((exact_log_sym(sigma)?, true)),
                Err(e) => Err(e.into()),
            },
        }
    }

    /// Φ̇⁻¹(X) = exp X.
    pub fn inverse(&self, dual: &SymMatrix) -> Result<(SymMatrix, bool), LearnError> {
        match self {
            Self::Exact => Ok((exact_exp_sym(dual), false)),
            Self::Truncated(cfg) => match truncated_exp(dual, cfg.k_exp) {
                Ok(e) => Ok((e, false)),
                Err(MatFunError::TruncationTooSmall { .. }) => Ok((exact_exp_sym(dual), true)),
                Err(e) => Err(e.into()),
            },
        }
    }

    /// One mirror step Σ ← exp(log Σ − step); PD is preserved for any
    /// symmetric step.
    pub fn step(&self, sigma: &SymMatrix, step: &SymMatrix) -> Result<(SymMatrix, u32), LearnError> {
        let (log_s, fb1) = self.forward(sigma)?;
        let dual = SymMatrix::symmetrized(log_s.matrix() - step.matrix());
        let (next, fb2) = self.inverse(&dual)?;
        Ok((next, fb1 as u32 + fb2 as u32))
    }

    /// Von Neumann divergence Δ_Φ(A, B) = tr(A log A − A log B − A + B).
    pub fn bregman(&self, a: &SymMatrix, b: &SymMatrix) -> Result<f64, LearnError> {
        let log_a = exact_log_sym(a)?;
        let log_b = exact_log_sym(b)?;
        let t = (a.matrix() * (log_a.matrix() - log_b.matrix())).trace();
        Ok(t - a.matrix().trace() + b.matrix().trace())
    }
}

/// Step-size schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepSize {
    /// η = 1/√E, the schedule of the convergence guarantee.
    InvSqrtMaxIters,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputMode {
    /// Lowest-objective iterate.
    Best,
    /// Running average of the iterates.
    Averaged,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnerConfig {
    pub max_iters: usize,
    pub step: StepSize,
    /// Stop when the per-sample objective changes by no more than this.
    pub stop_tol: f64,
    /// Use the truncated exp/log route for the covariance mirror map.
    pub accelerated: bool,
    pub output_mode: OutputMode,
    pub mean_map: MeanMap,
    /// Dual-space norm caps per step; guards against exploding iterates on
    /// tiny windows.
    pub clip_mean: f64,
    pub clip_cov: f64,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            max_iters: 50,
            step: StepSize::InvSqrtMaxIters,
            stop_tol: 1e-3,
            accelerated: false,
            output_mode: OutputMode::Best,
            mean_map: mirror_bounded_interval(1.1),
            clip_mean: 2.0,
            clip_cov: 0.5,
        }
    }
}

impl LearnerConfig {
    pub fn step_size(&self) -> f64 {
        match self.step {
            StepSize::InvSqrtMaxIters => 1.0 / libm::sqrt(self.max_iters.max(1) as f64),
            StepSize::Fixed(eta) => eta,
        }
    }
}

/// Per-fit diagnostics.
#[derive(Debug, Clone, Default)]
pub struct LearnTrace {
    /// Per-sample-normalized objective at each iterate (plus the final one).
    pub objective: Vec<f64>,
    pub grad_norms: Vec<f64>,
    pub best_index: usize,
    /// True when the stop rule fired before `max_iters`.
    pub converged: bool,
    /// Accelerated-path convergence-region violations that fell back to the
    /// exact exp/log.
    pub fallbacks: u32,
}

/// Result of a [`pgd_fit`] run.
#[derive(Debug, Clone)]
pub struct PgdFit {
    pub mean: DVector<f64>,
    pub cov: SymMatrix,
    pub trace: LearnTrace,
}

struct Objective<'a> {
    window: &'a [DVector<f64>],
    log_g_prefix: Vec<f64>,
    log_prior: Vec<f64>,
}

impl<'a> Objective<'a> {
    fn new(window: &'a [DVector<f64>], g: &IncrementDistribution, rho: f64) -> Result<Self, LearnError> {
        if window.is_empty() {
            return Err(LearnError::EmptyWindow);
        }
        let n = window.len();
        let mut log_g_prefix = Vec::with_capacity(n + 1);
        log_g_prefix.push(0.0);
        for x in window {
            let v = g.log_pdf(x)?;
            log_g_prefix.push(log_g_prefix.last().unwrap() + v);
        }
        let log_rho = libm::log(rho);
        let log_1mr = libm::log(1.0 - rho);
        let log_prior = (0..n).map(|k| log_rho + k as f64 * log_1mr).collect();
        Ok(Self { window, log_g_prefix, log_prior })
    }

    /// Log-mixture terms t_k = log π(k) + Σ_{n<k} log g + Σ_{n≥k} log f,
    /// for k = 1..N, with π anchored at the window start.
    fn terms(&self, f: &IncrementDistribution) -> Result<Vec<f64>, LearnError> {
        let n = self.window.len();
        let mut log_f_suffix = alloc::vec![0.0; n + 1];
        for i in (0..n).rev() {
            log_f_suffix[i] = log_f_suffix[i + 1] + f.log_pdf(&self.window[i])?;
        }
        Ok((0..n)
            .map(|k| self.log_prior[k] + self.log_g_prefix[k] + log_f_suffix[k])
            .collect())
    }

    /// Unnormalized objective −logsumexp(t), plus per-sample change-point
    /// responsibilities c_n = Σ_{k≤n} w_k.
    fn value_and_responsibilities(
        &self,
        f: &IncrementDistribution,
    ) -> Result<(f64, Vec<f64>), LearnError> {
        let terms = self.terms(f)?;
        let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = terms.iter().map(|&t| libm::exp(t - m)).sum();
        let value = -(m + libm::log(sum));
        let mut c = Vec::with_capacity(terms.len());
        let mut acc = 0.0;
        for &t in &terms {
            acc += libm::exp(t - m) / sum;
            c.push(acc);
        }
        Ok((value, c))
    }
}

fn make_dist(mu: &DVector<f64>, sigma: &SymMatrix) -> Result<IncrementDistribution, LearnError> {
    IncrementDistribution::new(mu.clone(), sigma.clone()).map_err(|e| match e {
        GaussError::NotPositiveDefinite { min_eigenvalue } => {
            LearnError::NotPositiveDefinite { min_eigenvalue }
        }
        other => LearnError::Gauss(other),
    })
}

/// Negative log of the change-point mixture likelihood over the window,
/// computed as −logsumexp of the per-change-point log terms.
pub fn neg_log_likelihood(
    window: &[DVector<f64>],
    g: &IncrementDistribution,
    mu1: &DVector<f64>,
    sigma1: &SymMatrix,
    rho: f64,
) -> Result<f64, LearnError> {
    let obj = Objective::new(window, g, rho)?;
    let f = make_dist(mu1, sigma1)?;
    Ok(obj.value_and_responsibilities(&f)?.0)
}

/// Gradient of [`neg_log_likelihood`] with respect to the mean.
pub fn grad_mu(
    window: &[DVector<f64>],
    g: &IncrementDistribution,
    mu1: &DVector<f64>,
    sigma1: &SymMatrix,
    rho: f64,
) -> Result<DVector<f64>, LearnError> {
    let obj = Objective::new(window, g, rho)?;
    let f = make_dist(mu1, sigma1)?;
    let (_, c) = obj.value_and_responsibilities(&f)?;
    let mut grad = DVector::zeros(mu1.len());
    for (x, &cn) in window.iter().zip(&c) {
        grad -= f.solve(&(x - mu1)) * cn;
    }
    Ok(grad)
}

/// Gradient of [`neg_log_likelihood`] with respect to the covariance;
/// symmetric by construction.
pub fn grad_sigma(
    window: &[DVector<f64>],
    g: &IncrementDistribution,
    mu1: &DVector<f64>,
    sigma1: &SymMatrix,
    rho: f64,
) -> Result<SymMatrix, LearnError> {
    let obj = Objective::new(window, g, rho)?;
    let f = make_dist(mu1, sigma1)?;
    let (_, c) = obj.value_and_responsibilities(&f)?;
    Ok(grad_sigma_inner(window, &f, mu1, &c))
}

fn grad_sigma_inner(
    window: &[DVector<f64>],
    f: &IncrementDistribution,
    mu1: &DVector<f64>,
    c: &[f64],
) -> SymMatrix {
    let dim = mu1.len();
    let precision = f.precision();
    let mut grad = DMatrix::<f64>::zeros(dim, dim);
    for (x, &cn) in window.iter().zip(c) {
        let y = f.solve(&(x - mu1));
        // ∂ log f / ∂Σ = ½ (Σ⁻¹ r rᵀ Σ⁻¹ − Σ⁻¹)
        grad -= (&y * y.transpose() - precision.matrix()) * (0.5 * cn);
    }
    SymMatrix::symmetrized(grad)
}

fn clip(v: f64, cap: f64) -> f64 {
    if v > cap {
        cap / v
    } else {
        1.0
    }
}

/// Fits the post-outage parameters by alternating mean and covariance mirror
/// steps; returns the best (or averaged) iterate and the full trace.
pub fn pgd_fit(
    window: &[DVector<f64>],
    g: &IncrementDistribution,
    rho: f64,
    config: &LearnerConfig,
    warm_start: Option<(&DVector<f64>, &SymMatrix)>,
) -> Result<PgdFit, LearnError> {
    let obj = Objective::new(window, g, rho)?;
    let n = window.len() as f64;
    let (mut mu, mut sigma) = match warm_start {
        Some((m, s)) => (m.clone(), s.clone()),
        None => (g.mean().clone(), g.cov().clone()),
    };
    if let MeanMap::BoundedInterval { bound } = config.mean_map {
        if !config.mean_map.is_feasible(&mu) {
            let worst = mu.iter().fold(0.0f64, |m, &v| if v.abs() > m.abs() { v } else { m });
            return Err(LearnError::MeanOutOfBounds { value: worst, bound });
        }
    }
    let cov_map = mirror_matrix_entropy(config.accelerated);
    let eta = config.step_size();

    let mut trace = LearnTrace::default();
    let mut best: (f64, DVector<f64>, SymMatrix) = (f64::INFINITY, mu.clone(), sigma.clone());
    let mut sum_mu = DVector::<f64>::zeros(mu.len());
    let mut sum_sigma = DMatrix::<f64>::zeros(sigma.dim(), sigma.dim());
    let mut iters = 0usize;
    let mut prev_value: Option<f64> = None;

    for _ in 0..config.max_iters {
        let f = make_dist(&mu, &sigma)?;
        let (raw_value, c) = obj.value_and_responsibilities(&f)?;
        let value = raw_value / n;
        trace.objective.push(value);
        if value < best.0 {
            best = (value, mu.clone(), sigma.clone());
            trace.best_index = trace.objective.len() - 1;
        }

        // mean step
        let mut gm = DVector::zeros(mu.len());
        for (x, &cn) in window.iter().zip(&c) {
            gm -= f.solve(&(x - &mu)) * cn;
        }
        gm /= n;
        let mut step_m = &gm * eta;
        step_m *= clip(step_m.norm(), config.clip_mean);
        trace.grad_norms.push(gm.norm());
        mu = config.mean_map.step(&mu, &step_m)?;

        // covariance step at the updated mean
        let f2 = make_dist(&mu, &sigma)?;
        let (_, c2) = obj.value_and_responsibilities(&f2)?;
        let gs = grad_sigma_inner(window, &f2, &mu, &c2).scale(1.0 / n);
        let mut step_s = gs.scale(eta);
        step_s = step_s.scale(clip(step_s.matrix().norm(), config.clip_cov));
        let (next_sigma, fallbacks) = cov_map.step(&sigma, &step_s)?;
        trace.fallbacks += fallbacks;
        sigma = next_sigma;

        sum_mu += &mu;
        sum_sigma += sigma.matrix();
        iters += 1;

        if let Some(prev) = prev_value {
            if libm::fabs(prev - value) <= config.stop_tol {
                trace.converged = true;
                break;
            }
        }
        prev_value = Some(value);
    }

    // evaluate the final iterate too
    let f = make_dist(&mu, &sigma)?;
    let (raw_value, _) = obj.value_and_responsibilities(&f)?;
    let value = raw_value / n;
    trace.objective.push(value);
    if value < best.0 {
        best = (value, mu.clone(), sigma.clone());
        trace.best_index = trace.objective.len() - 1;
    }

    let (mean, cov) = match config.output_mode {
        OutputMode::Best => (best.1, best.2),
        OutputMode::Averaged => {
            let k = iters.max(1) as f64;
            (&sum_mu / k, SymMatrix::symmetrized(&sum_sigma / k))
        }
    };
    Ok(PgdFit { mean, cov, trace })
}

/// Diagnostic check of the restricted-convexity constraint set:
/// `Σ₁ − v_k v_kᵀ / (N−k+1)` is PSD for every k, with
/// `v_k = Σ_{n=k}^{N} (Δv[n] − μ₁)`.
pub fn restricted_set_check(
    mu1: &DVector<f64>,
    sigma1: &SymMatrix,
    window: &[DVector<f64>],
) -> bool {
    let n = window.len();
    let mut v = DVector::<f64>::zeros(mu1.len());
    let mut ok = true;
    // iterate k = N..1 so v_k accumulates backwards
    for k in (0..n).rev() {
        v += &window[k] - mu1;
        let m = SymMatrix::symmetrized(
            sigma1.matrix() - &v * v.transpose() / (n - k) as f64,
        );
        if min_eigenvalue(&m) < -1e-9 {
            ok = false;
            break;
        }
    }
    ok
}
