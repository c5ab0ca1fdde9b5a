//! Experiment orchestration: builds every ingredient of a run from a
//! configuration, executes seeded runs, aggregates them and writes the
//! results to disk.

mod config;
pub mod svg;

use std::fmt;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use log::{info, warn};
use nalgebra::DVector;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::engine::{run, Algorithm, RunError, RunInputs};
use crate::flows::{
    flow_floor, phi_sequence, pi_sequence, FlowError, StochasticFlow, DEFAULT_PHI_TOL, DEFAULT_TAIL_EXTENSION,
};
use crate::graph::{
    generate_sequence, graph_stats, is_strongly_connected, union_graph, DigraphSeq, GraphError,
};
use crate::metrics::{MetricRow, RunRecord, CSV_HEADER};
use crate::mixing::{build_mixing_sequence, is_doubly_stochastic, validate_mixing, MixingError, MixingPair, STOCHASTIC_TOL};
use crate::problems::{partition, Dataset, Problem, ProblemError};
use crate::rng::{derive_seed, stream, Purpose};
use crate::theory::{
    analyze_network, composite_system, spectral_radius, theorem1_bounds, BetaBinding, GlobalConstants,
    NetworkAnalysis, StepsizeBounds, TheoryError,
};

pub use config::{
    load_config, ConfigError, DataSection, DataSource, ExperimentConfig, ExperimentSection, GraphSection,
    HyperSection, ProblemSection, Violation,
};

/// Environment variable naming the default output root.
pub const OUTPUT_ROOT_ENV: &str = "DSGTM_OUTPUT_ROOT";

/// Columns of the metric CSV after `iter`.
const METRIC_NAMES: [&str; 7] = ["opt_gap", "consensus", "state_diff", "tracking", "loss", "accuracy", "sumgrad_residual"];

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("graph: {0}")]
    Graph(#[from] GraphError),
    #[error("mixing: {0}")]
    Mixing(#[from] MixingError),
    #[error("flows: {0}")]
    Flow(#[from] FlowError),
    #[error("problem: {0}")]
    Problem(#[from] ProblemError),
    #[error("theory: {0}")]
    Theory(#[from] TheoryError),
    #[error("seed {seed}, {source}")]
    Run { seed: u64, source: RunError },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io { path: path.to_path_buf(), source }
}

/// MNIST training file names looked up by the `mnist-or-synthetic` source.
const MNIST_IMAGES: &str = "train-images-idx3-ubyte";
const MNIST_LABELS: &str = "train-labels-idx1-ubyte";
/// Pixel count of the synthetic MNIST surrogate.
const MNIST_DIM: usize = 784;

fn load_dataset(cfg: &ExperimentConfig) -> Result<Dataset, ProblemError> {
    let seed = cfg.experiment.master_seed;
    match &cfg.data.source {
        DataSource::Synthetic { train, test, dim, separation } => {
            Dataset::two_gaussians(*train, *test, *dim, *separation, seed)
        }
        DataSource::Csv { path, train, test } => {
            let ds = Dataset::from_csv(&cfg.resolve(path))?;
            let train = train.unwrap_or(ds.len().saturating_sub(*test));
            ds.split(train, *test)
        }
        DataSource::Idx { images, labels, positive, negative, train, test } => {
            Dataset::from_idx(&cfg.resolve(images), &cfg.resolve(labels), *positive, *negative)?.split(*train, *test)
        }
        DataSource::MnistOrSynthetic { dir, train, test, separation } => {
            let dir = cfg.resolve(dir);
            let (images, labels) = (dir.join(MNIST_IMAGES), dir.join(MNIST_LABELS));
            if images.is_file() && labels.is_file() {
                Dataset::from_idx(&images, &labels, 3, 5)?.split(*train, *test)
            } else {
                warn!("no MNIST files in {}, using the synthetic surrogate", dir.display());
                Dataset::two_gaussians(*train, *test, MNIST_DIM, *separation, seed)
            }
        }
    }
}

/// Per-agent values: an explicit list, or `base * u_i` with `u_i` uniform
/// in `[min_fraction, 1]`.
fn agent_values(explicit: &Option<Vec<f64>>, base: f64, min_fraction: f64, n: usize, master: u64, which: u64) -> Vec<f64> {
    if let Some(list) = explicit {
        return list.clone();
    }
    (0..n)
        .map(|i| {
            if min_fraction >= 1.0 {
                base
            } else {
                let u: f64 = stream(master, Purpose::Multipliers, i as u64, which).random_range(min_fraction..=1.0);
                base * u
            }
        })
        .collect()
}

/// Every seed-independent ingredient of a configured experiment.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    /// Graphs of steps `0 .. max(horizon, 1)`.
    pub graphs: DigraphSeq,
    pub pairs: Vec<MixingPair>,
    pub phi: StochasticFlow,
    pub pi: StochasticFlow,
    pub problem: Problem,
    pub x_star: DVector<f64>,
    pub f_star: f64,
    pub l: f64,
    pub mu: f64,
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
    pub x0: Vec<DVector<f64>>,
}

impl Experiment {
    pub fn prepare(config: &ExperimentConfig) -> Result<Self, HarnessError> {
        let violations = config.violations();
        if !violations.is_empty() {
            return Err(ConfigError::Invalid(violations).into());
        }
        let master = config.experiment.master_seed;
        let n = config.graph.n;
        let steps = config.experiment.horizon.max(1);
        let graphs = generate_sequence(n, steps, &config.graph.spec, derive_seed(master, Purpose::Graph, 0, 0))?;
        let pairs = build_mixing_sequence(&graphs, &config.mixing, derive_seed(master, Purpose::Mixing, 0, 0))?;
        let as_: Vec<_> = pairs.iter().map(|p| p.a.clone()).collect();
        let bs: Vec<_> = pairs.iter().map(|p| p.b.clone()).collect();
        let phi = phi_sequence(&as_, DEFAULT_TAIL_EXTENSION, DEFAULT_PHI_TOL)?;
        let pi = pi_sequence(&bs)?;

        let data = load_dataset(config)?;
        let shards = partition(&data, n, config.data.partition, master)?;
        let problem = Problem::new(config.problem.kind, config.problem.lambda, data.into(), shards)?;
        config.oracle.warn_if_clamped(&problem);
        let (l, mu) = problem.estimate_l_mu();
        let (x_star, f_star) = problem.solve_reference()?;

        let h = &config.hyper;
        let alphas = agent_values(&h.alphas, h.alpha, h.alpha_min_fraction, n, master, 0);
        let betas = agent_values(&h.betas, h.beta, h.beta_min_fraction, n, master, 1);
        let x0 = vec![DVector::from_element(problem.dim(), h.x0); n];
        info!("prepared {} agents, dimension {}, L = {l:e}, mu = {mu:e}", n, problem.dim());
        Ok(Self { config: config.clone(), graphs, pairs, phi, pi, problem, x_star, f_star, l, mu, alphas, betas, x0 })
    }

    pub fn horizon(&self) -> usize {
        self.config.experiment.horizon
    }

    /// Largest stepsize and momentum over the agents.
    pub fn alpha_bar(&self) -> f64 {
        self.alphas.iter().copied().fold(0.0, f64::max)
    }

    pub fn beta_bar(&self) -> f64 {
        self.betas.iter().copied().fold(0.0, f64::max)
    }

    fn inputs<'a>(&'a self, alphas: &'a [f64], betas: &'a [f64], seed: u64) -> RunInputs<'a> {
        RunInputs {
            algorithm: self.config.experiment.algorithm,
            problem: &self.problem,
            pairs: &self.pairs[..self.horizon()],
            phi: &self.phi,
            pi: &self.pi,
            x_star: &self.x_star,
            x0: &self.x0,
            alphas,
            betas,
            oracle: &self.config.oracle,
            schedule: self.config.experiment.schedule,
            cadence: self.config.experiment.cadence,
            test: &self.problem.data().test,
            seed,
        }
    }

    /// One run with oracle seed `seed`.
    pub fn run_seed(&self, seed: u64) -> Result<RunRecord, HarnessError> {
        self.run_with(&self.alphas, &self.betas, seed)
    }

    /// One run with overridden per-agent stepsizes and momentum.
    pub fn run_with(&self, alphas: &[f64], betas: &[f64], seed: u64) -> Result<RunRecord, HarnessError> {
        let rows = run(&self.inputs(alphas, betas, seed)).map_err(|source| HarnessError::Run { seed, source })?;
        Ok(RunRecord {
            rows,
            run_seed: seed,
            master_seed: self.config.experiment.master_seed,
            initial_point: format!("{} in every coordinate of every agent", self.config.hyper.x0),
            config_echo: self.config.to_toml(),
        })
    }

    /// Oracle seeds `master_seed .. master_seed + seeds`.
    pub fn seeds(&self) -> Vec<u64> {
        let e = &self.config.experiment;
        (0..e.seeds as u64).map(|r| e.master_seed.wrapping_add(r)).collect()
    }

    /// Per-step and horizon constants of the realized network. The oracle
    /// variance is evaluated at `x*`.
    pub fn analysis(&self) -> Result<NetworkAnalysis, HarnessError> {
        let stats = self.graphs.graphs.iter().map(graph_stats).collect::<Result<Vec<_>, _>>()?;
        let a = self.pairs.iter().map(|p| p.a_floor).fold(1.0, f64::min);
        let b = self.pairs.iter().map(|p| p.b_floor).fold(1.0, f64::min);
        let sigma_sq = self.problem.oracle_variance(&self.config.oracle, &self.x_star);
        Ok(analyze_network(&self.phi, &self.pi, &stats, a, b, self.l, self.mu, sigma_sq)?)
    }
}

/// Per-iteration mean and standard error over seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub iters: Vec<usize>,
    pub mean: Vec<[f64; 7]>,
    /// Sample standard deviation over `sqrt(seeds)`; zero for one seed.
    pub stderr: Vec<[f64; 7]>,
}

impl Aggregate {
    pub fn from_records(records: &[RunRecord]) -> Self {
        let Some(first) = records.first() else {
            return Self { iters: Vec::new(), mean: Vec::new(), stderr: Vec::new() };
        };
        let r = records.len() as f64;
        let mut out = Self { iters: Vec::new(), mean: Vec::new(), stderr: Vec::new() };
        for (t, row) in first.rows.iter().enumerate() {
            let mut mean = [0.0; 7];
            let mut stderr = [0.0; 7];
            for c in 0..7 {
                let values: Vec<f64> = records.iter().map(|rec| rec.rows[t].values()[c]).collect();
                let m = values.iter().sum::<f64>() / r;
                mean[c] = m;
                if records.len() > 1 {
                    let var = values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (r - 1.0);
                    stderr[c] = (var / r).sqrt();
                }
            }
            out.iters.push(row.iter);
            out.mean.push(mean);
            out.stderr.push(stderr);
        }
        out
    }

    pub fn write_csv<W: Write>(&self, out: &mut W) -> io::Result<()> {
        let mut header = vec!["iter".to_string()];
        for name in METRIC_NAMES {
            header.push(format!("{name}_mean"));
            header.push(format!("{name}_stderr"));
        }
        writeln!(out, "{}", header.join(","))?;
        for (t, iter) in self.iters.iter().enumerate() {
            let cells: Vec<String> =
                (0..7).flat_map(|c| [format!("{:e}", self.mean[t][c]), format!("{:e}", self.stderr[t][c])]).collect();
            writeln!(out, "{iter},{}", cells.join(","))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub records: Vec<RunRecord>,
    pub aggregate: Aggregate,
    pub dir: PathBuf,
}

#[derive(Serialize)]
struct Summary<'a> {
    algorithm: &'a str,
    seeds: Vec<u64>,
    master_seed: u64,
    horizon: usize,
    l: f64,
    mu: f64,
    f_star: f64,
    alphas: &'a [f64],
    betas: &'a [f64],
    phi_approx_tol: f64,
    final_mean: Vec<(&'static str, f64)>,
}

/// Output directory: explicit override, then the configured directory,
/// then `$DSGTM_OUTPUT_ROOT/<name>`, then `runs/<name>`.
pub fn output_dir(cfg: &ExperimentConfig, override_dir: Option<&Path>) -> PathBuf {
    if let Some(dir) = override_dir {
        return dir.to_path_buf();
    }
    if let Some(dir) = &cfg.experiment.output_dir {
        return cfg.resolve(dir);
    }
    let root = std::env::var_os(OUTPUT_ROOT_ENV).map_or_else(|| PathBuf::from("runs"), PathBuf::from);
    root.join(&cfg.experiment.name)
}

fn write_file(path: &Path, write: impl FnOnce(&mut BufWriter<fs::File>) -> io::Result<()>) -> Result<(), HarnessError> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut out = BufWriter::new(file);
    write(&mut out).and_then(|_| out.flush()).map_err(io_err(path))
}

/// Runs every seed (in parallel) and writes the artifacts to the output
/// directory. File contents depend only on the configuration.
pub fn run_experiment(cfg: &ExperimentConfig, override_dir: Option<&Path>) -> Result<ExperimentOutput, HarnessError> {
    let exp = Experiment::prepare(cfg)?;
    let seeds = exp.seeds();
    let records = seeds.par_iter().map(|&s| exp.run_seed(s)).collect::<Result<Vec<_>, _>>()?;
    let aggregate = Aggregate::from_records(&records);

    let dir = output_dir(cfg, override_dir);
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    write_file(&dir.join("config.toml"), |out| out.write_all(cfg.to_toml().as_bytes()))?;
    write_file(&dir.join("graphs.txt"), |out| out.write_all(exp.graphs.to_text().as_bytes()))?;
    write_file(&dir.join("phi.csv"), |out| exp.phi.write_csv(out))?;
    write_file(&dir.join("pi.csv"), |out| exp.pi.write_csv(out))?;
    for record in &records {
        write_file(&dir.join(format!("seed_{}.csv", record.run_seed)), |out| record.write_csv(out))?;
    }
    write_file(&dir.join("aggregate.csv"), |out| aggregate.write_csv(out))?;

    let final_mean = aggregate.mean.last().map_or_else(Vec::new, |m| METRIC_NAMES.iter().copied().zip(m.iter().copied()).collect());
    let summary = Summary {
        algorithm: cfg.experiment.algorithm.name(),
        seeds: seeds.clone(),
        master_seed: cfg.experiment.master_seed,
        horizon: exp.horizon(),
        l: exp.l,
        mu: exp.mu,
        f_star: exp.f_star,
        alphas: &exp.alphas,
        betas: &exp.betas,
        phi_approx_tol: exp.phi.approx_tol,
        final_mean,
    };
    write_file(&dir.join("summary.json"), |out| {
        serde_json::to_writer_pretty(&mut *out, &summary).map_err(io::Error::other)?;
        writeln!(out)
    })?;

    if cfg.experiment.plots {
        let plots = dir.join("plots");
        fs::create_dir_all(&plots).map_err(io_err(&plots))?;
        for (c, name) in METRIC_NAMES.iter().enumerate() {
            let points: Vec<(f64, f64)> =
                aggregate.iters.iter().zip(&aggregate.mean).map(|(&k, m)| (k as f64, m[c])).collect();
            let svg = svg::log_plot(name, "iteration", &points);
            write_file(&plots.join(format!("{name}.svg")), |out| out.write_all(svg.as_bytes()))?;
        }
    }
    info!("wrote {} run(s) to {}", records.len(), dir.display());
    Ok(ExperimentOutput { records, aggregate, dir })
}

/// Outcome of one named invariant check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
}

impl ValidationReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(f, "{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail)?;
        }
        let failed = self.checks.iter().filter(|c| !c.passed).count();
        write!(f, "{} checks, {failed} failed", self.checks.len())
    }
}

fn stochastic_gap(flow: &StochasticFlow) -> f64 {
    flow.vectors.iter().map(|v| (v.sum() - 1.0).abs()).fold(0.0, f64::max)
}

/// Invariants of the configured graphs, weights and flows, without
/// running the optimizer.
pub fn validate_experiment(cfg: &ExperimentConfig) -> Result<ValidationReport, HarnessError> {
    let violations = cfg.violations();
    if !violations.is_empty() {
        return Err(ConfigError::Invalid(violations).into());
    }
    let master = cfg.experiment.master_seed;
    let n = cfg.graph.n;
    let graphs = generate_sequence(n, cfg.experiment.horizon.max(1), &cfg.graph.spec, derive_seed(master, Purpose::Graph, 0, 0))?;
    let pairs = build_mixing_sequence(&graphs, &cfg.mixing, derive_seed(master, Purpose::Mixing, 0, 0))?;
    let mut checks = Vec::new();
    let mut check = |name: &str, passed: bool, detail: String| checks.push(Check { name: name.into(), passed, detail });

    let loops = graphs.graphs.iter().position(|g| !g.has_all_self_loops());
    check("graph.self_loops", loops.is_none(), loops.map_or("every node has a self-loop".into(), |k| format!("missing at step {k}")));
    let per_step = cfg.graph.spec.is_per_step_connected();
    if per_step {
        let bad = graphs.graphs.iter().position(|g| !is_strongly_connected(g));
        check("graph.strongly_connected", bad.is_none(), bad.map_or("every step".into(), |k| format!("step {k} is not")));
    } else {
        let period = cfg.graph.spec.period();
        let bad = (0..graphs.horizon().saturating_sub(period - 1))
            .find(|&s| union_graph(&graphs, s, period).map_or(true, |g| !is_strongly_connected(&g)));
        check(
            "graph.window_connected",
            bad.is_none(),
            bad.map_or(format!("every window of {period} steps"), |s| format!("window starting at {s} is not")),
        );
    }
    let stats_ok = graphs.graphs.iter().map(graph_stats).collect::<Result<Vec<_>, _>>();
    match (&stats_ok, per_step) {
        (Ok(stats), _) => {
            let d = stats.iter().map(|s| s.diameter).max().unwrap_or(0);
            let u = stats.iter().map(|s| s.max_edge_utility).max().unwrap_or(0);
            check("graph.stats", true, format!("max diameter {d}, max edge utility {u}"));
        }
        (Err(e), true) => check("graph.stats", false, e.to_string()),
        (Err(_), false) => check("graph.stats", true, "skipped: individual steps need not be connected".into()),
    }

    let mut mixing_failures = Vec::new();
    for (k, (pair, g)) in pairs.iter().zip(&graphs.graphs).enumerate() {
        let report = validate_mixing(pair, g);
        if !report.is_valid() {
            mixing_failures.push(format!("step {k}: {:?}", report.violations));
        }
    }
    check(
        "mixing.stochastic_aligned",
        mixing_failures.is_empty(),
        mixing_failures.first().cloned().unwrap_or_else(|| format!("{} steps", pairs.len())),
    );
    if cfg.experiment.algorithm != Algorithm::DsgtmTv {
        let ok = pairs.iter().all(|p| is_doubly_stochastic(&p.a, STOCHASTIC_TOL) && p.a == p.b);
        check("mixing.doubly_stochastic", ok, "baselines need A = B = W doubly stochastic".into());
    }

    let as_: Vec<_> = pairs.iter().map(|p| p.a.clone()).collect();
    let bs: Vec<_> = pairs.iter().map(|p| p.b.clone()).collect();
    let pi = pi_sequence(&bs)?;
    let a = pairs.iter().map(|p| p.a_floor).fold(1.0, f64::min);
    let b = pairs.iter().map(|p| p.b_floor).fold(1.0, f64::min);
    let (phi_floor, pi_floor) = flow_floor(a, b, n);
    check("flows.pi_stochastic", stochastic_gap(&pi) <= 1e-10, format!("max |sum - 1| = {:e}", stochastic_gap(&pi)));
    check("flows.pi_recursion", pi.max_residual() <= 1e-10, format!("max residual {:e}", pi.max_residual()));
    if per_step {
        check("flows.pi_floor", pi.min_entry() >= pi_floor, format!("min {:e} vs floor {pi_floor:e}", pi.min_entry()));
    }
    match phi_sequence(&as_, DEFAULT_TAIL_EXTENSION, DEFAULT_PHI_TOL) {
        Ok(phi) => {
            check("flows.phi_stochastic", stochastic_gap(&phi) <= 1e-10, format!("max |sum - 1| = {:e}", stochastic_gap(&phi)));
            check(
                "flows.phi_recursion",
                phi.max_residual() <= phi.approx_tol.max(1e-10),
                format!("max residual {:e}, tail tolerance {:e}", phi.max_residual(), phi.approx_tol),
            );
            if per_step {
                check("flows.phi_floor", phi.min_entry() >= phi_floor, format!("min {:e} vs floor {phi_floor:e}", phi.min_entry()));
            }
        }
        Err(e) => check("flows.phi_recursion", false, e.to_string()),
    }
    Ok(ValidationReport { checks })
}

/// One line of the bounds table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundsRow {
    /// Fraction of `alpha_max`.
    pub fraction: f64,
    pub alpha: f64,
    pub beta_bound: f64,
    pub binding: BetaBinding,
    /// `rho(M)` at `(alpha, beta_bound / 2)`.
    pub rho: f64,
    /// `1 - rho(M)` there, resolved below machine epsilon.
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundsReport {
    pub globals: GlobalConstants,
    pub alpha_max: f64,
    pub alpha_limit: f64,
    pub alpha_stability: f64,
    pub rows: Vec<BoundsRow>,
    /// Configured `(alpha_bar, beta_bar)` and `rho(M)` there, if defined.
    pub configured: (f64, f64, Option<f64>),
}

/// Fractions of `alpha_max` tabulated by [`bounds_report`].
pub const BOUND_FRACTIONS: [f64; 5] = [0.1, 0.25, 0.5, 0.75, 0.9];

pub fn bounds_from(globals: &GlobalConstants, alpha_bar: f64, beta_bar: f64) -> Result<BoundsReport, HarnessError> {
    let bounds: StepsizeBounds = theorem1_bounds(globals);
    let rows = BOUND_FRACTIONS
        .iter()
        .map(|&fraction| {
            let alpha = fraction * bounds.alpha_max;
            let beta = bounds.beta_bound(alpha);
            let sys = composite_system(globals, alpha, 0.5 * beta.value)?;
            let rho = spectral_radius(&sys.m)?.rho;
            Ok(BoundsRow { fraction, alpha, beta_bound: beta.value, binding: beta.binding, rho, margin: sys.margin() })
        })
        .collect::<Result<Vec<_>, TheoryError>>()?;
    let configured_rho = composite_system(globals, alpha_bar, beta_bar).ok().map(|sys| 1.0 - sys.margin());
    Ok(BoundsReport {
        globals: *globals,
        alpha_max: bounds.alpha_max,
        alpha_limit: bounds.alpha_limit,
        alpha_stability: bounds.alpha_stability,
        rows,
        configured: (alpha_bar, beta_bar, configured_rho),
    })
}

/// Admissible stepsize / momentum table for the configured network.
pub fn bounds_report(exp: &Experiment) -> Result<BoundsReport, HarnessError> {
    let analysis = exp.analysis()?;
    bounds_from(&analysis.globals, exp.alpha_bar(), exp.beta_bar())
}

impl BoundsReport {
    pub fn write_csv<W: Write>(&self, out: &mut W) -> io::Result<()> {
        writeln!(out, "fraction,alpha,beta_bound,binding,rho,margin")?;
        for r in &self.rows {
            writeln!(out, "{},{:e},{:e},{:?},{:e},{:e}", r.fraction, r.alpha, r.beta_bound, r.binding, r.rho, r.margin)?;
        }
        Ok(())
    }
}

impl fmt::Display for BoundsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let g = &self.globals;
        writeln!(f, "n = {}, L = {:e}, mu = {:e}, sigma^2 = {:e}", g.n, g.l, g.mu, g.sigma_sq)?;
        writeln!(f, "c = {:.6}, tau = {:.6}, eta = {:e}, psi = {:e}", g.c, g.tau, g.eta, g.psi)?;
        writeln!(f, "chi = {:e}, varphi = {:e}, nu = {:e}, varsigma^2 = {:e}", g.chi, g.varphi, g.nu, g.varsigma_sq)?;
        writeln!(f, "alpha_max = {:e}  (limit {:e}, stability {:e})", self.alpha_max, self.alpha_limit, self.alpha_stability)?;
        writeln!(
            f,
            "{:>8} {:>14} {:>14} {:>10} {:>14} {:>14}",
            "fraction", "alpha", "beta_bound", "binding", "rho(M)", "1-rho(M)"
        )?;
        for r in &self.rows {
            writeln!(
                f,
                "{:>8} {:>14.6e} {:>14.6e} {:>10} {:>14.10} {:>14.6e}",
                r.fraction,
                r.alpha,
                r.beta_bound,
                format!("{:?}", r.binding).to_lowercase(),
                r.rho,
                r.margin
            )?;
        }
        let (alpha, beta, rho) = self.configured;
        match rho {
            Some(rho) => write!(f, "configured alpha_bar = {alpha:e}, beta_bar = {beta:e}: rho(M) = {rho:.10}"),
            None => write!(f, "configured alpha_bar = {alpha:e}, beta_bar = {beta:e}: outside the stepsize range"),
        }
    }
}

/// One grid point of a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub alpha: f64,
    pub beta: f64,
    /// `rho(M)`, NaN where the system is undefined.
    pub rho: f64,
    /// `1 - rho(M)`, NaN where the system is undefined.
    pub margin: f64,
    pub final_opt_gap: f64,
}

/// Runs every `(alpha, beta)` pair with homogeneous hyperparameters and
/// the master oracle seed.
pub fn sweep(exp: &Experiment, alphas: &[f64], betas: &[f64]) -> Result<Vec<SweepRow>, HarnessError> {
    let globals = exp.analysis().ok().map(|a| a.globals);
    let n = exp.config.graph.n;
    let grid: Vec<(f64, f64)> = alphas.iter().flat_map(|&a| betas.iter().map(move |&b| (a, b))).collect();
    grid.par_iter()
        .map(|&(alpha, beta)| {
            let sys = globals.as_ref().and_then(|g| composite_system(g, alpha, beta).ok());
            let rho = sys.as_ref().and_then(|s| spectral_radius(&s.m).ok()).map_or(f64::NAN, |r| r.rho);
            let margin = sys.as_ref().map_or(f64::NAN, |s| s.margin());
            let record = exp.run_with(&vec![alpha; n], &vec![beta; n], exp.config.experiment.master_seed)?;
            let final_opt_gap = record.last().map_or(f64::NAN, |r: &MetricRow| r.errors.opt_gap);
            Ok(SweepRow { alpha, beta, rho, margin, final_opt_gap })
        })
        .collect()
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], out: &mut W) -> io::Result<()> {
    writeln!(out, "alpha,beta,rho,margin,final_opt_gap")?;
    for r in rows {
        writeln!(out, "{:e},{:e},{:e},{:e},{:e}", r.alpha, r.beta, r.rho, r.margin, r.final_opt_gap)?;
    }
    Ok(())
}

/// Header shared by per-seed CSV files.
pub fn record_header() -> &'static str {
    CSV_HEADER
}
