//! Sequential Bayesian change-point detection on the posterior probability
//! ratio.
//!
//! An outage at time λ switches the voltage-increment distribution from the
//! pre-change Gaussian g to a post-change Gaussian f. With a geometric prior
//! π(k) = ρ(1−ρ)^{k−1} on λ, the statistic after N samples is
//!
//! ```text
//!          Σ_{k=1}^{N} π(k) Π_{n<k} g(Δv[n]) Π_{n≥k} f(Δv[n])
//! Λ(N) = ─────────────────────────────────────────────────────
//!                  Σ_{k>N} π(k) Π_{n≤N} g(Δv[n])
//! ```
//!
//! i.e. the posterior odds that the change has already happened. The alarm
//! fires the first time Λ crosses B = (1−ρ)/(ρα), which caps the false-alarm
//! probability at α. Everything is computed in log space with log-sum-exp;
//! the products above underflow after a few dozen samples otherwise.
//!
//! When f is unknown, each step re-fits it by mirror descent
//! ([`crate::learner::pgd_fit`]) over a sliding window before evaluating the
//! statistic, with the geometric prior re-anchored to the window start.

use alloc::vec::Vec;
use core::fmt;

use nalgebra::DVector;

use crate::gaussian::{GaussError, IncrementDistribution, WhiteningTransform};
use crate::learner::{pgd_fit, LearnError, LearnTrace, LearnerConfig, MeanMap};
use crate::matfun::SymMatrix;

#[derive(Debug, Clone, PartialEq)]
pub enum DetectError {
    BadRho(f64),
    BadAlpha(f64),
    EmptyWindow,
    DimensionMismatch { expected: usize, got: usize },
    Gauss(GaussError),
    Learn(LearnError),
}

impl fmt::Display for DetectError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::BadRho(r) => write!(f, "prior parameter rho must be in (0, 1), got {r}"),
            Self::BadAlpha(a) => write!(f, "false-alarm level alpha must be in (0, 1), got {a}"),
            Self::EmptyWindow => write!(f, "detector window must be non-empty"),
            Self::DimensionMismatch { expected, got } => {
                write!(f, "sample has dimension {got}, expected {expected}")
            }
            Self::Gauss(e) => write!(f, "{e}"),
            Self::Learn(e) => write!(f, "{e}"),
        }
    }
}

impl From<GaussError> for DetectError {
    fn from(e: GaussError) -> Self {
        Self::Gauss(e)
    }
}

impl From<LearnError> for DetectError {
    fn from(e: LearnError) -> Self {
        Self::Learn(e)
    }
}

/// log π(k) for the geometric prior π(k) = ρ(1−ρ)^{k−1}, k ≥ 1.
pub fn geometric_log_prior(rho: f64, k: usize) -> f64 {
    debug_assert!(k >= 1);
    libm::log(rho) + (k as f64 - 1.0) * libm::log(1.0 - rho)
}

/// log Σ_{k>N} π(k) = N log(1−ρ), the prior mass not yet explained.
pub fn geometric_log_tail(rho: f64, n: usize) -> f64 {
    n as f64 * libm::log(1.0 - rho)
}

/// Detection threshold in log space: log B = log((1−α)/(ρα)).
pub fn log_threshold(rho: f64, alpha: f64) -> Result<f64, DetectError> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(DetectError::BadRho(rho));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(DetectError::BadAlpha(alpha));
    }
    Ok(libm::log((1.0 - alpha) / (rho * alpha)))
}

fn logsumexp(terms: &[f64]) -> f64 {
    let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    m + libm::log(terms.iter().map(|&t| libm::exp(t - m)).sum::<f64>())
}

/// log Λ over a window, with the prior anchored at the window's first sample.
///
/// `log_g[n]` / `log_f[n]` are the per-sample log densities under the pre-
/// and post-change models.
pub fn log_posterior_ratio(log_g: &[f64], log_f: &[f64], rho: f64) -> Result<f64, DetectError> {
    let n = log_g.len();
    if n == 0 {
        return Err(DetectError::EmptyWindow);
    }
    if !(rho > 0.0 && rho < 1.0) {
        return Err(DetectError::BadRho(rho));
    }
    debug_assert_eq!(log_g.len(), log_f.len());
    // prefix sums of log g and suffix sums of log f
    let mut suffix = alloc::vec![0.0; n + 1];
    for i in (0..n).rev() {
        suffix[i] = suffix[i + 1] + log_f[i];
    }
    let mut prefix = 0.0;
    let mut terms = Vec::with_capacity(n);
    for k in 0..n {
        terms.push(geometric_log_prior(rho, k + 1) + prefix + suffix[k]);
        prefix += log_g[k];
    }
    let numerator = logsumexp(&terms);
    let denominator = geometric_log_tail(rho, n) + prefix;
    Ok(numerator - denominator)
}

/// Post-change model.
#[derive(Debug, Clone)]
pub enum DetectorMode {
    /// f is known exactly (the clairvoyant baseline).
    FKnown(IncrementDistribution),
    /// f is re-learned each step by mirror descent over the current window.
    Pgd(LearnerConfig),
}

#[derive(Debug, Clone)]
pub struct DetectorConfig {
    /// Geometric prior parameter for the outage time.
    pub rho: f64,
    /// False-alarm probability bound; sets the threshold.
    pub alpha: f64,
    /// Sliding-window length.
    pub window: usize,
    pub mode: DetectorMode,
    /// Whiten samples by the pre-change covariance before detection. The
    /// statistic is invariant under this for a known f; for the learned mode
    /// it conditions the optimization landscape.
    pub whiten: bool,
}

impl DetectorConfig {
    pub fn new(rho: f64, alpha: f64, window: usize, mode: DetectorMode) -> Result<Self, DetectError> {
        log_threshold(rho, alpha)?;
        if window == 0 {
            return Err(DetectError::EmptyWindow);
        }
        Ok(Self { rho, alpha, window, mode, whiten: false })
    }
}

/// Result of a detection run.
#[derive(Debug, Clone)]
pub struct DetectionOutcome {
    /// 1-based index of the first sample at which the statistic crossed the
    /// threshold; `None` if the stream ended first.
    pub tau: Option<usize>,
    /// log Λ after each processed sample.
    pub trace: Vec<f64>,
    pub log_threshold: f64,
    /// Final learned post-change parameters (original coordinates), present
    /// in the learned mode.
    pub learned: Option<(DVector<f64>, SymMatrix)>,
    /// Trace of the last mirror-descent fit, present in the learned mode.
    pub learn_trace: Option<LearnTrace>,
}

/// Runs the stopping rule over a stream of increments, consuming samples
/// until the alarm fires or the stream ends.
pub fn run_detection<I>(
    g: &IncrementDistribution,
    config: &DetectorConfig,
    stream: I,
) -> Result<DetectionOutcome, DetectError>
where
    I: IntoIterator<Item = DVector<f64>>,
{
    let threshold = log_threshold(config.rho, config.alpha)?;
    let dim = g.dim();

    // optional whitening: transform g to N(Wμ, I) and each sample by W
    let (g_work, transform) = if config.whiten {
        let w = WhiteningTransform::new(g.cov())?;
        (w.apply_distribution(g)?, Some(w))
    } else {
        (g.clone(), None)
    };
    // in whitened coordinates the physical mean bound no longer applies
    let learner_cfg = |cfg: &LearnerConfig| -> LearnerConfig {
        let mut c = cfg.clone();
        if transform.is_some() {
            c.mean_map = MeanMap::Euclidean;
        }
        c
    };

    let mut window: Vec<DVector<f64>> = Vec::with_capacity(config.window);
    let mut log_g_win: Vec<f64> = Vec::with_capacity(config.window);
    let mut trace = Vec::new();
    let mut tau = None;
    let mut learned: Option<(DVector<f64>, SymMatrix)> = None;
    let mut learn_trace: Option<LearnTrace> = None;
    // warm start each refit from the previous window's estimate
    let mut warm: Option<(DVector<f64>, SymMatrix)> = None;

    for (idx, sample) in stream.into_iter().enumerate() {
        if sample.len() != dim {
            return Err(DetectError::DimensionMismatch { expected: dim, got: sample.len() });
        }
        let x = match &transform {
            Some(w) => w.apply(&sample),
            None => sample,
        };
        if window.len() == config.window {
            window.remove(0);
            log_g_win.remove(0);
        }
        log_g_win.push(g_work.log_pdf(&x)?);
        window.push(x);

        let log_f_win: Vec<f64> = match &config.mode {
            DetectorMode::FKnown(f) => {
                let f_work = match &transform {
                    Some(w) => w.apply_distribution(f)?,
                    None => f.clone(),
                };
                window.iter().map(|x| f_work.log_pdf(x)).collect::<Result<_, _>>()?
            }
            DetectorMode::Pgd(cfg) => {
                let cfg = learner_cfg(cfg);
                let fit = pgd_fit(
                    &window,
                    &g_work,
                    config.rho,
                    &cfg,
                    warm.as_ref().map(|(m, s)| (m, s)),
                )?;
                let f_hat = IncrementDistribution::new(fit.mean.clone(), fit.cov.clone())?;
                warm = Some((fit.mean.clone(), fit.cov.clone()));
                let back = match &transform {
                    Some(w) => w.unapply_params(&fit.mean, &fit.cov),
                    None => (fit.mean, fit.cov),
                };
                learned = Some(back);
                learn_trace = Some(fit.trace);
                window.iter().map(|x| f_hat.log_pdf(x)).collect::<Result<_, _>>()?
            }
        };

        let stat = log_posterior_ratio(&log_g_win, &log_f_win, config.rho)?;
        trace.push(stat);
        if stat > threshold {
            tau = Some(idx + 1);
            break;
        }
    }

    Ok(DetectionOutcome { tau, trace, log_threshold: threshold, learned, learn_trace })
}
