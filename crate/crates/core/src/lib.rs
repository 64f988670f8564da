#![cfg_attr(not(test), no_std)]
#![forbid(unsafe_code)]

//! Line-outage identification for distribution grids from voltage-magnitude
//! increment streams.
//!
//! The pipeline is built from six pieces:
//!
//! * [`grid`] — admittance/impedance construction and the exact Gaussian
//!   increment distributions implied by a topology (the simulator's ground
//!   truth),
//! * [`gaussian`] — multivariate normal densities, KL divergence, sampling,
//!   whitening and Schur-complement conditionals,
//! * [`matfun`] — truncated-series and eigendecomposition matrix exp/log for
//!   symmetric matrices,
//! * [`learner`] — mirror-descent estimation of the unknown post-outage mean
//!   and covariance under Bregman-divergence constraints,
//! * [`detector`] — the sequential Bayesian stopping rule on the posterior
//!   probability ratio,
//! * [`localizer`] — out-of-service branch identification from conditional
//!   correlation changes.
//!
//! [`sim`] drives Monte Carlo experiments over synthetic grids. The crate is
//! `no_std` + `alloc`; file formats and the CLI live in the companion
//! `gridline` crate.

extern crate alloc;

pub mod detector;
pub mod gaussian;
pub mod grid;
pub mod learner;
pub mod localizer;
pub mod matfun;
pub mod sim;


pub use detector::{DetectionOutcome, DetectorConfig, DetectorMode};
pub use gaussian::{IncrementDistribution, WhiteningTransform};
pub use grid::{GridTopology, InjectionStats};
pub use learner::{LearnTrace, LearnerConfig};
pub use localizer::LocalizerThresholds;
pub use matfun::{ApproxConfig, SymMatrix};
pub use sim::{ExperimentConfig, MetricsReport};
