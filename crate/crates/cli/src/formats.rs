//! File formats: topology JSON, stream CSV, model/outcome JSON, bench
//! config (TOML or JSON) and metrics reports.
//!
//! Every loader names the offending file, and where possible the offending
//! field or row, in its error message.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use gridline_core::grid::{Admittance, Branch, GridTopology};
use gridline_core::{IncrementDistribution, SymMatrix};

// ---------------------------------------------------------------- topology

#[derive(Debug, Serialize, Deserialize)]
pub struct BranchFile {
    pub i: usize,
    pub k: usize,
    pub g: f64,
    #[serde(default)]
    pub b: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ShuntFile {
    pub bus: usize,
    pub g: f64,
    #[serde(default)]
    pub b: f64,
}

/// On-disk topology: `{buses, slack, branches: [{i, k, g, b}], shunt:
/// [{bus, g, b}]}`; shunt entries are sparse.
#[derive(Debug, Serialize, Deserialize)]
pub struct TopologyFile {
    pub buses: usize,
    pub slack: usize,
    pub branches: Vec<BranchFile>,
    #[serde(default)]
    pub shunt: Vec<ShuntFile>,
}

impl TopologyFile {
    pub fn from_topology(top: &GridTopology) -> Self {
        Self {
            buses: top.bus_count,
            slack: top.slack,
            branches: top
                .branches
                .iter()
                .map(|br| BranchFile { i: br.from, k: br.to, g: br.admittance.re, b: br.admittance.im })
                .collect(),
            shunt: top
                .shunt
                .iter()
                .enumerate()
                .filter(|(_, s)| s.re != 0.0 || s.im != 0.0)
                .map(|(bus, s)| ShuntFile { bus, g: s.re, b: s.im })
                .collect(),
        }
    }

    pub fn into_topology(self) -> Result<GridTopology> {
        let mut shunt = vec![Admittance::new(0.0, 0.0); self.buses];
        for s in &self.shunt {
            if s.bus >= self.buses {
                bail!("shunt entry references bus {} but the grid has {} buses", s.bus, self.buses);
            }
            shunt[s.bus] = Admittance::new(s.g, s.b);
        }
        let branches = self
            .branches
            .iter()
            .map(|br| Branch { from: br.i, to: br.k, admittance: Admittance::new(br.g, br.b) })
            .collect();
        let top = GridTopology { bus_count: self.buses, branches, shunt, slack: self.slack };
        top.validate().map_err(|e| anyhow::anyhow!("invalid topology: {e}"))?;
        Ok(top)
    }
}

pub fn load_topology(path: &Path) -> Result<GridTopology> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read topology file {}", path.display()))?;
    let file: TopologyFile = serde_json::from_str(&text)
        .with_context(|| format!("malformed topology JSON in {}", path.display()))?;
    file.into_topology()
        .with_context(|| format!("invalid topology in {}", path.display()))
}

pub fn save_topology(path: &Path, top: &GridTopology) -> Result<()> {
    let text = serde_json::to_string_pretty(&TopologyFile::from_topology(top))?;
    fs::write(path, text + "\n")
        .with_context(|| format!("cannot write topology file {}", path.display()))
}

// ------------------------------------------------------------------ stream

/// Writes a stream as CSV: header row = bus ids, one row per timestep.
pub fn save_stream(path: &Path, bus_ids: &[usize], stream: &[DVector<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)
        .with_context(|| format!("cannot write stream file {}", path.display()))?;
    w.write_record(bus_ids.iter().map(|b| b.to_string()))?;
    for x in stream {
        w.write_record(x.iter().map(|v| format!("{v}")))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a stream CSV; returns (bus ids from the header, samples).
pub fn load_stream(path: &Path) -> Result<(Vec<usize>, Vec<DVector<f64>>)> {
    let mut r = csv::Reader::from_path(path)
        .with_context(|| format!("cannot read stream file {}", path.display()))?;
    let bus_ids: Vec<usize> = r
        .headers()
        .with_context(|| format!("missing header row in {}", path.display()))?
        .iter()
        .enumerate()
        .map(|(col, h)| {
            h.trim().parse().with_context(|| {
                format!("header column {} of {} is not a bus id: {h:?}", col + 1, path.display())
            })
        })
        .collect::<Result<_>>()?;
    let mut stream = Vec::new();
    for (row, record) in r.records().enumerate() {
        let record =
            record.with_context(|| format!("bad CSV record at row {} of {}", row + 2, path.display()))?;
        if record.len() != bus_ids.len() {
            bail!(
                "row {} of {} has {} fields, expected {}",
                row + 2,
                path.display(),
                record.len(),
                bus_ids.len()
            );
        }
        let values: Vec<f64> = record
            .iter()
            .enumerate()
            .map(|(col, v)| {
                v.trim().parse().with_context(|| {
                    format!(
                        "row {} column {} of {} is not a number: {v:?}",
                        row + 2,
                        col + 1,
                        path.display()
                    )
                })
            })
            .collect::<Result<_>>()?;
        stream.push(DVector::from_vec(values));
    }
    Ok((bus_ids, stream))
}

// ------------------------------------------------------------------- model

/// A Gaussian in file form: mean vector `mu`, covariance rows `sigma`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GaussianFile {
    pub mu: Vec<f64>,
    pub sigma: Vec<Vec<f64>>,
}

impl GaussianFile {
    pub fn from_distribution(d: &IncrementDistribution) -> Self {
        Self::from_params(d.mean(), d.cov())
    }

    pub fn from_params(mean: &DVector<f64>, cov: &SymMatrix) -> Self {
        let n = mean.len();
        Self {
            mu: mean.iter().copied().collect(),
            sigma: (0..n).map(|i| (0..n).map(|j| cov.matrix()[(i, j)]).collect()).collect(),
        }
    }

    pub fn into_distribution(self) -> Result<IncrementDistribution> {
        let n = self.mu.len();
        for (i, row) in self.sigma.iter().enumerate() {
            if row.len() != n {
                bail!("sigma row {i} has {} entries, expected {n}", row.len());
            }
        }
        if self.sigma.len() != n {
            bail!("sigma has {} rows, expected {n}", self.sigma.len());
        }
        let cov = DMatrix::from_fn(n, n, |i, j| self.sigma[i][j]);
        let cov = SymMatrix::new(cov).map_err(|e| anyhow::anyhow!("field sigma: {e}"))?;
        IncrementDistribution::new(DVector::from_vec(self.mu), cov)
            .map_err(|e| anyhow::anyhow!("fields mu/sigma: {e}"))
    }
}

/// Pre-change model (and optionally the known post-change model) for
/// `detect`.
#[derive(Debug, Serialize, Deserialize)]
pub struct ModelFile {
    pub g: GaussianFile,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f: Option<GaussianFile>,
}

pub fn load_model(path: &Path) -> Result<ModelFile> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read model file {}", path.display()))?;
    serde_json::from_str(&text)
        .with_context(|| format!("malformed model JSON in {}", path.display()))
}

// ----------------------------------------------------------------- outcome

/// Serialized detection outcome: `{tau, threshold, trace[], learned:
/// {mu[], sigma[][]}}`; `threshold` is in log domain, like `trace`.
#[derive(Debug, Serialize, Deserialize)]
pub struct OutcomeFile {
    pub tau: Option<usize>,
    pub threshold: f64,
    pub trace: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub learned: Option<GaussianFile>,
}

// -------------------------------------------------------------- localizer

#[derive(Debug, Serialize, Deserialize)]
pub struct CandidateFile {
    pub i: usize,
    pub k: usize,
    pub rho_pre: f64,
    pub rho_post: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CandidatesFile {
    pub candidates: Vec<CandidateFile>,
}

// ------------------------------------------------------------ bench config

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DetectorKind {
    FKnown,
    Pgd,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct GridScenarioFile {
    /// Either a topology file...
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topology_file: Option<String>,
    /// ...or generator parameters.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub size: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    pub outage: Vec<usize>,
    #[serde(default)]
    pub injection_seed: u64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct KnownScenarioFile {
    pub g: GaussianFile,
    pub f: GaussianFile,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ScenarioFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub known: Option<KnownScenarioFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridScenarioFile>,
}

fn default_trials() -> usize {
    1000
}

fn default_window() -> usize {
    100
}

fn default_coverage() -> f64 {
    1.0
}

/// Bench configuration, accepted as TOML or JSON (by file extension).
#[derive(Debug, Serialize, Deserialize)]
pub struct BenchConfigFile {
    pub rho: f64,
    pub alphas: Vec<f64>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_window")]
    pub window: usize,
    pub detector: DetectorKind,
    #[serde(default)]
    pub whiten: bool,
    #[serde(default)]
    pub noise_level: f64,
    #[serde(default = "default_coverage")]
    pub coverage_ratio: f64,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default)]
    pub learner_iters: Option<usize>,
    pub scenario: ScenarioFile,
}

pub fn load_bench_config(path: &Path) -> Result<BenchConfigFile> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read config file {}", path.display()))?;
    match path.extension().and_then(|e| e.to_str()) {
        Some("json") => serde_json::from_str(&text)
            .with_context(|| format!("malformed JSON config in {}", path.display())),
        _ => toml::from_str(&text)
            .with_context(|| format!("malformed TOML config in {}", path.display())),
    }
}

// ----------------------------------------------------------------- reports

#[derive(Debug, Serialize, Deserialize)]
pub struct TrialRecordFile {
    pub seed: u64,
    pub lambda: usize,
    pub tau: Option<usize>,
    pub false_alarm: bool,
    pub delay: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub localized_ok: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct AlphaReportFile {
    pub alpha: f64,
    pub trials: usize,
    pub avg_delay: Option<f64>,
    pub false_alarm_rate: f64,
    pub localization_accuracy: Option<f64>,
    pub missed: usize,
    pub failures: usize,
    pub records: Vec<TrialRecordFile>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct MetricsReportFile {
    pub schema_version: u32,
    pub per_alpha: Vec<AlphaReportFile>,
}

impl MetricsReportFile {
    pub fn from_report(r: &gridline_core::MetricsReport) -> Self {
        Self {
            schema_version: r.schema_version,
            per_alpha: r
                .per_alpha
                .iter()
                .map(|a| AlphaReportFile {
                    alpha: a.alpha,
                    trials: a.trials,
                    avg_delay: a.avg_delay,
                    false_alarm_rate: a.false_alarm_rate,
                    localization_accuracy: a.localization_accuracy,
                    missed: a.missed,
                    failures: a.failures,
                    records: a
                        .records
                        .iter()
                        .map(|t| TrialRecordFile {
                            seed: t.seed,
                            lambda: t.lambda,
                            tau: t.tau,
                            false_alarm: t.false_alarm,
                            delay: t.delay,
                            localized_ok: t.localized_ok,
                            error: t.error.clone(),
                        })
                        .collect(),
                })
                .collect(),
        }
    }
}

/// Per-α summary CSV for external plotting.
pub fn save_report_csv(path: &Path, report: &MetricsReportFile) -> Result<()> {
    let mut w = csv::Writer::from_path(path)
        .with_context(|| format!("cannot write report CSV {}", path.display()))?;
    w.write_record([
        "alpha",
        "trials",
        "avg_delay",
        "false_alarm_rate",
        "localization_accuracy",
        "missed",
        "failures",
    ])?;
    for a in &report.per_alpha {
        w.write_record([
            a.alpha.to_string(),
            a.trials.to_string(),
            a.avg_delay.map(|d| d.to_string()).unwrap_or_default(),
            a.false_alarm_rate.to_string(),
            a.localization_accuracy.map(|d| d.to_string()).unwrap_or_default(),
            a.missed.to_string(),
            a.failures.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("cannot write {}", path.display()))
}
