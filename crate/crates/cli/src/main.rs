//! Command-line front end for the outage detection library: grid
//! generation, stream simulation, detection, Monte Carlo benchmarking, and
//! matrix-function benchmarking.

mod formats;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use gridline_core::detector::{run_detection, DetectorConfig, DetectorMode};
use gridline_core::grid::{generate_test_grid, GridKind, GridTopology};
use gridline_core::localizer::{localize, LocalizerThresholds};
use gridline_core::matfun::{
    exact_exp_sym, exact_log_sym, truncated_exp, truncated_log, SymMatrix,
};
use gridline_core::sim::{simulate_trial, run_monte_carlo, ExperimentConfig, Scenario, SimDetector};
use gridline_core::LearnerConfig;

use formats::{
    load_bench_config, load_model, load_stream, load_topology, save_report_csv, save_stream,
    save_topology, write_json, CandidateFile, CandidatesFile, DetectorKind, GaussianFile,
    MetricsReportFile, OutcomeFile,
};

#[derive(Parser)]
#[command(name = "gridline", version, about = "Distribution-grid outage detection toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic grid topology and write it as JSON.
    GenGrid(GenGridArgs),
    /// Simulate a voltage-increment stream with a planted outage.
    Simulate(SimulateArgs),
    /// Run the sequential detector over a stream CSV.
    Detect(DetectArgs),
    /// Run a Monte Carlo benchmark from a TOML or JSON config.
    Bench(BenchArgs),
    /// Benchmark truncated matrix exp/log accuracy and timing against
    /// eigendecomposition.
    MatfunBench(MatfunBenchArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Radial,
    Loopy,
}

#[derive(Args)]
struct GenGridArgs {
    /// Topology family.
    #[arg(long, value_enum, default_value = "radial")]
    kind: KindArg,
    /// Number of buses (>= 3).
    #[arg(long)]
    size: usize,
    /// RNG seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output topology JSON path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    /// Topology JSON path.
    #[arg(long)]
    topology: PathBuf,
    /// Branch ids to take out of service (repeatable).
    #[arg(long, required = true)]
    outage: Vec<usize>,
    /// Geometric prior parameter for the outage time.
    #[arg(long, default_value_t = 0.04)]
    rho: f64,
    /// Injection-statistics seed.
    #[arg(long, default_value_t = 0)]
    injection_seed: u64,
    /// Trial seed (controls the outage time and the samples).
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Relative meter-noise level.
    #[arg(long, default_value_t = 0.0)]
    noise_level: f64,
    /// Fraction of buses observed.
    #[arg(long, default_value_t = 1.0)]
    coverage_ratio: f64,
    /// Output stream CSV path.
    #[arg(long)]
    out: PathBuf,
    /// Output ground-truth JSON path.
    #[arg(long)]
    truth: PathBuf,
}

#[derive(Args)]
struct DetectArgs {
    /// Stream CSV path (header row = bus ids).
    #[arg(long)]
    stream: PathBuf,
    /// Model JSON path: pre-change Gaussian `g`, optional known
    /// post-change `f`. When `f` is absent the post-change parameters are
    /// learned online.
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 0.04)]
    rho: f64,
    #[arg(long, default_value_t = 0.01)]
    alpha: f64,
    /// Sliding-window length.
    #[arg(long, default_value_t = 100)]
    window: usize,
    /// Whiten with the pre-change covariance before detection.
    #[arg(long)]
    whiten: bool,
    /// Output detection-outcome JSON path.
    #[arg(long)]
    out: PathBuf,
    /// Optional output path for localization candidates; requires a known
    /// or learned post-change covariance.
    #[arg(long)]
    candidates: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Experiment config, TOML (default) or JSON by extension.
    #[arg(long)]
    config: PathBuf,
    /// Output metrics-report JSON path.
    #[arg(long)]
    out: PathBuf,
    /// Optional per-alpha summary CSV path.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct MatfunBenchArgs {
    /// Matrix dimension.
    #[arg(long, default_value_t = 12)]
    dim: usize,
    /// Matrices per truncation level.
    #[arg(long, default_value_t = 200)]
    matrices: usize,
    /// Truncation levels to sweep (even values benchmark exp too).
    #[arg(long, default_values_t = vec![2, 4, 8, 12, 16, 24])]
    levels: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output JSON path.
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenGrid(a) => cmd_gen_grid(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Detect(a) => cmd_detect(a),
        Command::Bench(a) => cmd_bench(a),
        Command::MatfunBench(a) => cmd_matfun_bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn cmd_gen_grid(a: GenGridArgs) -> Result<()> {
    let kind = match a.kind {
        KindArg::Radial => GridKind::Radial,
        KindArg::Loopy => GridKind::Loopy,
    };
    let top = generate_test_grid(kind, a.size, a.seed)
        .map_err(|e| anyhow!("cannot generate grid: {e}"))?;
    save_topology(&a.out, &top)?;
    println!("wrote {} ({} buses, {} branches)", a.out.display(), top.bus_count, top.branches.len());
    Ok(())
}

/// Ground truth emitted next to a simulated stream.
#[derive(Serialize)]
struct TruthFile {
    lambda: usize,
    observed_buses: Vec<usize>,
    truth_pairs: Vec<(usize, usize)>,
    g: GaussianFile,
    f: GaussianFile,
}

fn cmd_simulate(a: SimulateArgs) -> Result<()> {
    let topology = load_topology(&a.topology)?;
    for &id in &a.outage {
        if id >= topology.branches.len() {
            bail!(
                "outage branch {id} does not exist ({} has {} branches)",
                a.topology.display(),
                topology.branches.len()
            );
        }
    }
    let non_slack = topology.non_slack_buses();
    let mut cfg = ExperimentConfig::new(
        Scenario::Grid { topology, outage: a.outage, injection_seed: a.injection_seed },
        a.rho,
        vec![0.01],
    );
    cfg.noise_level = a.noise_level;
    cfg.coverage_ratio = a.coverage_ratio;
    cfg.validate().map_err(|e| anyhow!("invalid simulation parameters: {e}"))?;
    let trial = simulate_trial(&cfg, a.seed).map_err(|e| anyhow!("simulation failed: {e}"))?;

    // stream columns are the observed subset of non-slack bus ids
    let bus_ids: Vec<usize> = trial.observed.iter().map(|&j| non_slack[j]).collect();
    save_stream(&a.out, &bus_ids, &trial.stream)?;
    write_json(
        &a.truth,
        &TruthFile {
            lambda: trial.lambda,
            observed_buses: bus_ids,
            truth_pairs: trial.truth_pairs.clone(),
            g: GaussianFile::from_distribution(&trial.g),
            f: GaussianFile::from_distribution(&trial.f),
        },
    )?;
    println!(
        "wrote {} ({} samples) and {} (lambda = {})",
        a.out.display(),
        trial.stream.len(),
        a.truth.display(),
        trial.lambda
    );
    Ok(())
}

fn cmd_detect(a: DetectArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let g = model
        .g
        .into_distribution()
        .with_context(|| format!("invalid pre-change model in {}", a.model.display()))?;
    let f = model
        .f
        .map(|f| {
            f.into_distribution()
                .with_context(|| format!("invalid post-change model in {}", a.model.display()))
        })
        .transpose()?;
    let (_, stream) = load_stream(&a.stream)?;
    if let Some(x) = stream.first() {
        if x.len() != g.dim() {
            bail!(
                "stream {} has {} columns but the model in {} has dimension {}",
                a.stream.display(),
                x.len(),
                a.model.display(),
                g.dim()
            );
        }
    }
    let mode = match &f {
        Some(f) => DetectorMode::FKnown(f.clone()),
        None => DetectorMode::Pgd(LearnerConfig::default()),
    };
    let mut config = DetectorConfig::new(a.rho, a.alpha, a.window, mode)
        .map_err(|e| anyhow!("invalid detector parameters: {e}"))?;
    config.whiten = a.whiten;
    let outcome =
        run_detection(&g, &config, stream).map_err(|e| anyhow!("detection failed: {e}"))?;

    let learned = outcome.learned.as_ref().map(|(mu, sigma)| GaussianFile::from_params(mu, sigma));
    write_json(
        &a.out,
        &OutcomeFile {
            tau: outcome.tau,
            threshold: outcome.log_threshold,
            trace: outcome.trace.clone(),
            learned,
        },
    )?;
    match outcome.tau {
        Some(tau) => println!("alarm at sample {tau}; wrote {}", a.out.display()),
        None => println!("no alarm in {} samples; wrote {}", outcome.trace.len(), a.out.display()),
    }

    if let Some(cand_path) = a.candidates {
        let post_cov = match (&outcome.learned, &f) {
            (Some((_, sigma)), _) => sigma.clone(),
            (None, Some(f)) => f.cov().clone(),
            (None, None) => bail!("no post-change covariance available for localization"),
        };
        let cands = localize(g.cov(), &post_cov, &LocalizerThresholds::default())
            .map_err(|e| anyhow!("localization failed: {e}"))?;
        write_json(
            &cand_path,
            &CandidatesFile {
                candidates: cands
                    .iter()
                    .map(|c| CandidateFile { i: c.i, k: c.k, rho_pre: c.rho_pre, rho_post: c.rho_post })
                    .collect(),
            },
        )?;
        println!("wrote {} ({} candidates)", cand_path.display(), cands.len());
    }
    Ok(())
}

fn cmd_bench(a: BenchArgs) -> Result<()> {
    let file = load_bench_config(&a.config)?;
    let scenario = build_scenario(&file, &a.config)?;
    let detector = match file.detector {
        DetectorKind::FKnown => SimDetector::FKnown,
        DetectorKind::Pgd => {
            let mut lc = LearnerConfig::default();
            if let Some(iters) = file.learner_iters {
                lc.max_iters = iters;
            }
            SimDetector::Pgd(lc)
        }
    };
    let mut cfg = ExperimentConfig::new(scenario, file.rho, file.alphas.clone());
    cfg.trials = file.trials;
    cfg.window = file.window;
    cfg.detector = detector;
    cfg.whiten = file.whiten;
    cfg.noise_level = file.noise_level;
    cfg.coverage_ratio = file.coverage_ratio;
    cfg.master_seed = file.master_seed;
    cfg.validate()
        .map_err(|e| anyhow!("invalid config in {}: {e}", a.config.display()))?;

    let report = run_monte_carlo(&cfg).map_err(|e| anyhow!("benchmark failed: {e}"))?;
    let report = MetricsReportFile::from_report(&report);
    write_json(&a.out, &report)?;
    if let Some(csv) = &a.csv {
        save_report_csv(csv, &report)?;
    }
    for alpha in &report.per_alpha {
        println!(
            "alpha {:>8}: avg_delay {:?}, false_alarm_rate {:.4}, localization {:?}, failures {}",
            alpha.alpha, alpha.avg_delay, alpha.false_alarm_rate, alpha.localization_accuracy,
            alpha.failures
        );
    }
    println!("wrote {}", a.out.display());
    Ok(())
}

fn build_scenario(file: &formats::BenchConfigFile, path: &std::path::Path) -> Result<Scenario> {
    match (&file.scenario.known, &file.scenario.grid) {
        (Some(_), Some(_)) => {
            bail!("config {}: scenario has both `known` and `grid`; pick one", path.display())
        }
        (None, None) => {
            bail!("config {}: scenario needs either `known` or `grid`", path.display())
        }
        (Some(known), None) => {
            let g = known
                .g
                .clone()
                .into_distribution()
                .with_context(|| format!("config {}: field scenario.known.g", path.display()))?;
            let f = known
                .f
                .clone()
                .into_distribution()
                .with_context(|| format!("config {}: field scenario.known.f", path.display()))?;
            Ok(Scenario::Known { g, f })
        }
        (None, Some(grid)) => {
            let topology: GridTopology = match (&grid.topology_file, &grid.kind) {
                (Some(top_path), None) => {
                    // relative paths resolve against the config file
                    let base = path.parent().unwrap_or_else(|| std::path::Path::new("."));
                    load_topology(&base.join(top_path))?
                }
                (None, Some(kind)) => {
                    let kind = match kind.as_str() {
                        "radial" => GridKind::Radial,
                        "loopy" => GridKind::Loopy,
                        other => bail!(
                            "config {}: field scenario.grid.kind must be \"radial\" or \"loopy\", got {other:?}",
                            path.display()
                        ),
                    };
                    let size = grid.size.ok_or_else(|| {
                        anyhow!(
                            "config {}: field scenario.grid.size is required with `kind`",
                            path.display()
                        )
                    })?;
                    generate_test_grid(kind, size, grid.seed)
                        .map_err(|e| anyhow!("config {}: cannot generate grid: {e}", path.display()))?
                }
                (Some(_), Some(_)) => bail!(
                    "config {}: scenario.grid has both `topology_file` and `kind`; pick one",
                    path.display()
                ),
                (None, None) => bail!(
                    "config {}: scenario.grid needs `topology_file` or `kind`+`size`",
                    path.display()
                ),
            };
            for &id in &grid.outage {
                if id >= topology.branches.len() {
                    bail!(
                        "config {}: field scenario.grid.outage references branch {id} but the grid has {} branches",
                        path.display(),
                        topology.branches.len()
                    );
                }
            }
            Ok(Scenario::Grid {
                topology,
                outage: grid.outage.clone(),
                injection_seed: grid.injection_seed,
            })
        }
    }
}

#[derive(Serialize)]
struct MatfunLevelReport {
    k: usize,
    exp_max_rel_err: Option<f64>,
    log_max_rel_err: f64,
    exp_failures: usize,
    log_failures: usize,
    truncated_exp_ns_per_call: Option<f64>,
    truncated_log_ns_per_call: f64,
}

#[derive(Serialize)]
struct MatfunBenchReport {
    dim: usize,
    matrices: usize,
    exact_exp_ns_per_call: f64,
    exact_log_ns_per_call: f64,
    levels: Vec<MatfunLevelReport>,
}

/// Random symmetric matrix with eigenvalues drawn uniformly from `range`,
/// conjugated by a random rotation.
fn random_spectrum_matrix(rng: &mut ChaCha8Rng, dim: usize, range: (f64, f64)) -> SymMatrix {
    let a = DMatrix::from_fn(dim, dim, |_, _| rng.gen_range(-1.0..1.0));
    let q = a.qr().q();
    let eigs = DVector::from_fn(dim, |_, _| rng.gen_range(range.0..range.1));
    SymMatrix::symmetrized(&q * DMatrix::from_diagonal(&eigs) * q.transpose())
}

fn rel_err(approx: &SymMatrix, exact: &SymMatrix) -> f64 {
    approx.frobenius_distance(exact) / exact.matrix().norm()
}

fn cmd_matfun_bench(a: MatfunBenchArgs) -> Result<()> {
    if a.dim < 2 || a.matrices == 0 || a.levels.is_empty() {
        bail!("need --dim >= 2, --matrices >= 1 and at least one --levels value");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    // exp inputs: spectral radius <= 2; log inputs: eigenvalues in (0, 2)
    let exp_inputs: Vec<SymMatrix> =
        (0..a.matrices).map(|_| random_spectrum_matrix(&mut rng, a.dim, (-2.0, 2.0))).collect();
    let log_inputs: Vec<SymMatrix> =
        (0..a.matrices).map(|_| random_spectrum_matrix(&mut rng, a.dim, (0.1, 1.9))).collect();

    let t0 = Instant::now();
    let exact_exps: Vec<SymMatrix> = exp_inputs.iter().map(exact_exp_sym).collect();
    let exact_exp_ns = t0.elapsed().as_nanos() as f64 / a.matrices as f64;
    let t0 = Instant::now();
    let exact_logs: Vec<SymMatrix> = log_inputs
        .iter()
        .map(|x| exact_log_sym(x).map_err(|e| anyhow!("exact log failed: {e}")))
        .collect::<Result<_>>()?;
    let exact_log_ns = t0.elapsed().as_nanos() as f64 / a.matrices as f64;

    let mut levels = Vec::new();
    for &k in &a.levels {
        let (mut exp_err, mut exp_fail, mut exp_ns) = (0.0_f64, 0usize, None);
        if k >= 2 && k % 2 == 0 {
            let t0 = Instant::now();
            for (x, exact) in exp_inputs.iter().zip(&exact_exps) {
                match truncated_exp(x, k) {
                    Ok(approx) => exp_err = exp_err.max(rel_err(&approx, exact)),
                    Err(_) => exp_fail += 1,
                }
            }
            exp_ns = Some(t0.elapsed().as_nanos() as f64 / a.matrices as f64);
        }
        let (mut log_err, mut log_fail) = (0.0_f64, 0usize);
        let t0 = Instant::now();
        for (x, exact) in log_inputs.iter().zip(&exact_logs) {
            match truncated_log(x, k) {
                Ok(approx) => log_err = log_err.max(rel_err(&approx, exact)),
                Err(_) => log_fail += 1,
            }
        }
        let log_ns = t0.elapsed().as_nanos() as f64 / a.matrices as f64;
        levels.push(MatfunLevelReport {
            k,
            exp_max_rel_err: exp_ns.is_some().then_some(exp_err),
            log_max_rel_err: log_err,
            exp_failures: exp_fail,
            log_failures: log_fail,
            truncated_exp_ns_per_call: exp_ns,
            truncated_log_ns_per_call: log_ns,
        });
    }

    let report = MatfunBenchReport {
        dim: a.dim,
        matrices: a.matrices,
        exact_exp_ns_per_call: exact_exp_ns,
        exact_log_ns_per_call: exact_log_ns,
        levels,
    };
    write_json(&a.out, &report)?;
    println!("wrote {}", a.out.display());
    Ok(())
}
