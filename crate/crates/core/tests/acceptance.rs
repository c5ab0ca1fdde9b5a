//! Acceptance criteria A1 to A9. Each criterion prints one `PASS`/`FAIL`
//! line; the process exits with failure if any criterion fails.

use std::path::Path;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use dsgtm_core::flows::{flow_floor, phi_sequence, pi_sequence, DEFAULT_PHI_TOL, DEFAULT_TAIL_EXTENSION};
use dsgtm_core::graph::{generate_sequence, graph_stats, GeneratorSpec};
use dsgtm_core::harness::{load_config, DataSource, Experiment};
use dsgtm_core::mixing::{build_mixing_sequence, WeightRule};
use dsgtm_core::problems::{partition, Dataset, OracleConfig, PartitionScheme, Problem, ProblemKind};
use dsgtm_core::rng::{stream, Purpose};
use dsgtm_core::theory::{analyze_network, composite_system, step_system, theorem1_bounds};
use dsgtm_core::{ExperimentConfig, RunRecord};
use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

struct Outcome {
    passed: bool,
    detail: String,
}

impl Outcome {
    fn new(passed: bool, detail: impl Into<String>) -> Self {
        Self { passed, detail: detail.into() }
    }
}

fn config(text: &str) -> ExperimentConfig {
    ExperimentConfig::from_toml(text, Path::new(".")).expect("acceptance config parses")
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

fn error_rows(record: &RunRecord) -> Vec<[f64; 4]> {
    record.rows.iter().map(|r| r.errors.to_array()).collect()
}

fn a1_tracking_identity() -> Outcome {
    let cfg = config(
        r#"
[experiment]
horizon = 500
master_seed = 11
[graph]
n = 10
mode = "per-step-random"
density = 0.2
[mixing]
rule = "random"
floor = 0.05
[problem]
kind = "logistic-l2"
lambda = 0.01
[data]
source = "synthetic"
train = 1000
test = 0
dim = 10
separation = 2.0
[oracle]
mode = "exact-plus-noise"
sigma = 0.5
[hyper]
alpha = 0.05
alpha_min_fraction = 0.5
beta = 0.3
beta_min_fraction = 0.0
"#,
    );
    let start = Instant::now();
    let exp = Experiment::prepare(&cfg).expect("prepare");
    let record = exp.run_seed(11).expect("run");
    let elapsed = start.elapsed();
    let worst = record.rows.iter().map(|r| r.sumgrad_residual).fold(0.0, f64::max);
    Outcome::new(
        worst <= 1e-9 && record.rows.len() == 501 && elapsed < Duration::from_secs(5),
        format!("max relative sumgrad residual {worst:.3e} over 500 steps, {:.2}s", secs(elapsed)),
    )
}

/// `R^2` of the least-squares line through `(k, ln gap_k)`.
fn log_linear_r2(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let (mx, my) = points.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x / n, b + y / n));
    let sxy: f64 = points.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = points.iter().map(|(x, _)| (x - mx) * (x - mx)).sum();
    let syy: f64 = points.iter().map(|(_, y)| (y - my) * (y - my)).sum();
    if syy == 0.0 {
        return 1.0;
    }
    sxy * sxy / (sxx * syy)
}

fn a2_linear_convergence() -> Outcome {
    let cfg = config(
        r#"
[experiment]
horizon = 5000
cadence = 10
master_seed = 21
[graph]
n = 10
mode = "per-step-random"
density = 0.3
[mixing]
rule = "uniform"
[problem]
kind = "quadratic"
lambda = 0.1
[data]
source = "synthetic"
train = 1000
test = 0
dim = 20
separation = 2.0
[hyper]
alpha = 1.0
"#,
    );
    let start = Instant::now();
    let exp = Experiment::prepare(&cfg).expect("prepare");
    let analysis = exp.analysis().expect("analysis");
    let bounds = theorem1_bounds(&analysis.globals);
    let alpha_bar = 0.5 * bounds.alpha_max;
    let beta_bar = 0.5 * bounds.beta_bound(alpha_bar).value;
    let mut rng = stream(21, Purpose::Multipliers, 0, 0);
    let n = cfg.graph.n;
    let alphas: Vec<f64> = (0..n).map(|_| alpha_bar * rng.random_range(0.5..=1.0)).collect();
    let betas: Vec<f64> = (0..n).map(|_| beta_bar * rng.random::<f64>()).collect();
    let record = exp.run_with(&alphas, &betas, 21).expect("run");
    let elapsed = start.elapsed();

    let initial = record.rows[0].errors.opt_gap;
    let best = record.rows.iter().map(|r| r.errors.opt_gap).fold(f64::INFINITY, f64::min);
    let points: Vec<(f64, f64)> = record
        .rows
        .iter()
        .filter(|r| r.errors.opt_gap > 0.0)
        .map(|r| (r.iter as f64, r.errors.opt_gap.ln()))
        .collect();
    let r2 = log_linear_r2(&points);
    let reduction = best / initial;
    Outcome::new(
        reduction <= 1e-16 && r2 >= 0.95 && elapsed < Duration::from_secs(30),
        format!(
            "alpha_max {:.3e}, beta bound {:.3e}; opt_gap reduced to {reduction:.3e} of initial in 5000 steps \
             (need 1e-16), fit R^2 {r2:.4}, {:.2}s",
            bounds.alpha_max,
            2.0 * beta_bar,
            secs(elapsed)
        ),
    )
}

const GRID: [f64; 3] = [0.1, 0.5, 0.9];

struct RandomCase {
    contractive: usize,
    points: usize,
    /// `1 - rho(M)` at doubled stepsize; `None` past `2 / (n eta (L + mu))`.
    doubled: Vec<Option<f64>>,
}

fn a3_case(seed: u64) -> RandomCase {
    let mut rng = stream(seed, Purpose::Init, 0, 0);
    let n = rng.random_range(2..=10);
    let density = rng.random_range(0.05..0.5);
    let rule = if rng.random_bool(0.5) { WeightRule::Uniform } else { WeightRule::Random { floor: rng.random_range(0.01..0.1) } };
    let l = rng.random_range(0.5..5.0);
    let mu = l * rng.random_range(0.01..=1.0);
    let sigma_sq = rng.random_range(0.0..1.0);

    let seq = generate_sequence(n, 30, &GeneratorSpec::PerStepRandom { density }, seed).expect("graphs");
    let pairs = build_mixing_sequence(&seq, &rule, seed).expect("weights");
    let as_: Vec<_> = pairs.iter().map(|p| p.a.clone()).collect();
    let bs: Vec<_> = pairs.iter().map(|p| p.b.clone()).collect();
    let phi = phi_sequence(&as_, DEFAULT_TAIL_EXTENSION, DEFAULT_PHI_TOL).expect("phi");
    let pi = pi_sequence(&bs).expect("pi");
    let stats: Vec<_> = seq.graphs.iter().map(|g| graph_stats(g).expect("stats")).collect();
    let a = pairs.iter().map(|p| p.a_floor).fold(1.0, f64::min);
    let b = pairs.iter().map(|p| p.b_floor).fold(1.0, f64::min);
    let analysis = analyze_network(&phi, &pi, &stats, a, b, l, mu, sigma_sq).expect("analysis");
    let bounds = theorem1_bounds(&analysis.globals);

    let mut contractive = 0;
    let mut doubled = Vec::new();
    for fa in GRID {
        let alpha = fa * bounds.alpha_max;
        for fb in GRID {
            let beta = fb * bounds.beta_bound(alpha).value;
            let sys = composite_system(&analysis.globals, alpha, beta).expect("inside the stepsize limit");
            if sys.margin() > 0.0 {
                contractive += 1;
            }
            doubled.push(composite_system(&analysis.globals, 2.0 * alpha, beta).ok().map(|s| s.margin()));
        }
    }
    RandomCase { contractive, points: GRID.len() * GRID.len(), doubled }
}

fn a3_radius_soundness() -> Outcome {
    let cases: Vec<RandomCase> = (0..200u64).into_par_iter().map(|s| a3_case(1000 + s)).collect();
    let points: usize = cases.iter().map(|c| c.points).sum();
    let contractive: usize = cases.iter().map(|c| c.contractive).sum();
    let doubled: Vec<f64> = cases.iter().flat_map(|c| c.doubled.iter().flatten().copied()).collect();
    let doubled_below_one = doubled.iter().filter(|&&margin| margin > 0.0).count();
    let first: Vec<String> =
        cases[0].doubled.iter().map(|r| r.map_or("undefined".into(), |v| format!("{v:.3e}"))).collect();
    Outcome::new(
        points == 1800 && contractive == points && !doubled.is_empty(),
        format!(
            "rho(M) < 1 at {contractive}/{points} interior points; doubled stepsize: {} of {} evaluable points \
             still below 1, first configuration 1 - rho = [{}]",
            doubled_below_one,
            doubled.len(),
            first.join(", ")
        ),
    )
}

fn a4_classification() -> Outcome {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/mnist_3v5.toml");
    let cfg = load_config(&path).expect("shipped recipe loads");
    let real_data = match &cfg.data.source {
        DataSource::MnistOrSynthetic { dir, .. } => cfg.resolve(dir).join("train-images-idx3-ubyte").is_file(),
        _ => false,
    };
    let threshold = if real_data { 0.93 } else { 0.95 };
    let start = Instant::now();
    let exp = Experiment::prepare(&cfg).expect("prepare");
    let record = exp.run_seed(cfg.experiment.master_seed).expect("run");
    let elapsed = start.elapsed();
    let best = record.rows.iter().filter(|r| (1..=50).contains(&r.iter)).map(|r| r.accuracy).fold(0.0, f64::max);
    let first = record.rows.iter().find(|r| r.accuracy >= threshold).map(|r| r.iter);
    Outcome::new(
        best >= threshold && elapsed < Duration::from_secs(60),
        format!(
            "{} data, best test accuracy {best:.4} within 50 iterations (threshold {threshold}, first reached at {}), {:.2}s",
            if real_data { "MNIST" } else { "surrogate" },
            first.map_or("never".into(), |k| k.to_string()),
            secs(elapsed)
        ),
    )
}

fn ring_config(algorithm: &str) -> ExperimentConfig {
    config(&format!(
        r#"
[experiment]
algorithm = "{algorithm}"
horizon = 3000
cadence = 100
[graph]
n = 10
mode = "static"
topology = {{ kind = "ring" }}
[mixing]
rule = "metropolis"
[problem]
kind = "logistic-l2"
lambda = 0.1
[data]
source = "synthetic"
train = 500
test = 0
dim = 10
separation = 2.0
partition = "label-sorted"
[hyper]
alpha = 0.1
"#
    ))
}

fn a5_steady_state_contrast() -> Outcome {
    let start = Instant::now();
    // with doubly stochastic weights phi is uniform, so
    // (1/n) sum_i |x_i - x*|^2 = opt_gap + consensus
    let mse = |algorithm: &str| {
        let exp = Experiment::prepare(&ring_config(algorithm)).expect("prepare");
        let last = *exp.run_seed(0).expect("run").last().expect("rows");
        last.errors.opt_gap + last.errors.consensus
    };
    let tracking = mse("dsgt");
    let plain = mse("dsgd");
    let elapsed = start.elapsed();
    Outcome::new(
        tracking <= 1e-10 && plain >= 1e3 * tracking && elapsed < Duration::from_secs(20),
        format!(
            "after 3000 steps at alpha 0.1: DSGT mean-square error {tracking:.3e}, DSGD {plain:.3e} (ratio {:.1e}), {:.2}s",
            plain / tracking,
            secs(elapsed)
        ),
    )
}

const A6_BASE: &str = r#"
[experiment]
horizon = 300
master_seed = 5
[graph]
n = 6
mode = "per-step-random"
density = 0.3
[mixing]
rule = "random"
floor = 0.05
[problem]
kind = "logistic-l2"
lambda = 0.1
[data]
source = "synthetic"
train = 300
test = 0
dim = 4
separation = 2.0
[hyper]
alpha = 1.0
beta = 0.3
beta_min_fraction = 0.0
"#;

/// Deterministic part: the one-step inequality with `b = 0`, against the
/// horizon-uniform `M` (asserted) and the per-step `M_k` (reported).
fn a6_deterministic() -> (bool, String) {
    let mut cfg = config(A6_BASE);
    cfg.experiment.horizon = 300;
    let exp = Experiment::prepare(&cfg).expect("prepare");
    let analysis = exp.analysis().expect("analysis");
    let g = &analysis.globals;
    let alpha = 0.05 * g.alpha_limit();
    let beta = exp.beta_bar();
    let alphas = vec![alpha; cfg.graph.n];
    let record = exp.run_with(&alphas, &exp.betas, 5).expect("run");
    let v = error_rows(&record);
    let global = composite_system(g, alpha, beta).expect("system");
    let mut violations = 0;
    let mut step_violations = 0;
    let mut worst: f64 = 0.0;
    for k in 0..v.len() - 1 {
        let now = DVector::from_row_slice(&v[k]);
        let bound = &global.m * &now;
        let step = step_system(&analysis.steps[k], g, alpha, beta).expect("step system");
        let step_bound = &step.m * &now;
        for i in 0..4 {
            let next = v[k + 1][i];
            if next > bound[i] * (1.0 + 1e-9) {
                violations += 1;
            }
            if next > step_bound[i] * (1.0 + 1e-9) {
                step_violations += 1;
            }
            if bound[i] > 0.0 {
                worst = worst.max(next / bound[i]);
            }
        }
    }
    (
        violations == 0,
        format!(
            "deterministic: {violations} violations of V_(k+1) <= M V_k over {} steps (max ratio {worst:.3e}), \
             {step_violations} against per-step M_k",
            v.len() - 1
        ),
    )
}

/// Stochastic part: starting at `x*`, the tail average of `V_k` over 32
/// seeds stays below `(I - M)^{-1} b` plus three standard errors.
fn a6_stochastic() -> (bool, String) {
    let mut cfg = config(A6_BASE);
    cfg.experiment.horizon = 1000;
    cfg.oracle = OracleConfig::noisy(0.5);
    let mut exp = Experiment::prepare(&cfg).expect("prepare");
    exp.x0 = vec![exp.x_star.clone(); cfg.graph.n];
    let analysis = exp.analysis().expect("analysis");
    let g = &analysis.globals;
    let bounds = theorem1_bounds(g);
    let alpha = 0.5 * bounds.alpha_max;
    let beta_bar = 0.5 * bounds.beta_bound(alpha).value;
    let betas: Vec<f64> = exp.betas.iter().map(|b| b / exp.beta_bar() * beta_bar).collect();
    let alphas = vec![alpha; cfg.graph.n];
    let sys = composite_system(g, alpha, beta_bar).expect("system");
    let limit = sys.steady_state().expect("I - M invertible");

    let tails: Vec<[f64; 4]> = (0..32u64)
        .into_par_iter()
        .map(|seed| {
            let v = error_rows(&exp.run_with(&alphas, &betas, seed).expect("run"));
            let tail = &v[v.len() / 2..];
            let mut mean = [0.0; 4];
            for row in tail {
                for i in 0..4 {
                    mean[i] += row[i] / tail.len() as f64;
                }
            }
            mean
        })
        .collect();
    let seeds = tails.len() as f64;
    let mut ok = sys.is_contractive();
    let mut parts = Vec::new();
    for i in 0..4 {
        let mean = tails.iter().map(|t| t[i]).sum::<f64>() / seeds;
        let var = tails.iter().map(|t| (t[i] - mean).powi(2)).sum::<f64>() / (seeds - 1.0);
        let stderr = (var / seeds).sqrt();
        ok &= mean <= limit[i] + 3.0 * stderr;
        parts.push(format!("{mean:.2e}<={:.2e}", limit[i]));
    }
    (ok, format!("stochastic (32 seeds, alpha {alpha:.2e}): tail mean vs (I-M)^-1 b [{}]", parts.join(", ")))
}

fn a6_composite_inequality() -> Outcome {
    let (det_ok, det) = a6_deterministic();
    let (sto_ok, sto) = a6_stochastic();
    Outcome::new(det_ok && sto_ok, format!("{det}; {sto}"))
}

fn a7_flow_floors() -> Outcome {
    let results: Vec<(bool, bool, f64)> = (0..100u64)
        .into_par_iter()
        .map(|s| {
            let seed = 5000 + s;
            let mut rng = stream(seed, Purpose::Init, 0, 0);
            let density = rng.random_range(0.05..0.5);
            let rule =
                if rng.random_bool(0.5) { WeightRule::Uniform } else { WeightRule::Random { floor: rng.random_range(0.01..0.1) } };
            let seq = generate_sequence(10, 200, &GeneratorSpec::PerStepRandom { density }, seed).expect("graphs");
            let pairs = build_mixing_sequence(&seq, &rule, seed).expect("weights");
            let as_: Vec<_> = pairs.iter().map(|p| p.a.clone()).collect();
            let bs: Vec<_> = pairs.iter().map(|p| p.b.clone()).collect();
            let phi = phi_sequence(&as_, DEFAULT_TAIL_EXTENSION, DEFAULT_PHI_TOL).expect("phi");
            let pi = pi_sequence(&bs).expect("pi");
            let a = pairs.iter().map(|p| p.a_floor).fold(1.0, f64::min);
            let b = pairs.iter().map(|p| p.b_floor).fold(1.0, f64::min);
            let (phi_floor, pi_floor) = flow_floor(a, b, 10);
            (pi.min_entry() >= pi_floor, phi.min_entry() >= phi_floor, phi.max_residual())
        })
        .collect();
    let pi_ok = results.iter().filter(|r| r.0).count();
    let phi_ok = results.iter().filter(|r| r.1).count();
    let residual = results.iter().map(|r| r.2).fold(0.0, f64::max);
    Outcome::new(
        pi_ok == 100 && phi_ok == 100 && residual <= 1e-10,
        format!("pi floor held on {pi_ok}/100, phi floor on {phi_ok}/100, max phi residual {residual:.3e}"),
    )
}

fn desk_problem(kind: ProblemKind, n: usize, seed: u64) -> Problem {
    let data = Dataset::two_gaussians(240, 0, 5, 2.0, seed).expect("data");
    let shards = partition(&data, n, PartitionScheme::Iid, seed).expect("partition");
    Problem::new(kind, 0.05, Arc::new(data), shards).expect("problem")
}

/// Empirical mean and variance of the oracle error at `x` for `agent`.
/// Returns per-coordinate `(|mean|, stderr)` and `(E|e|^2, stderr)`.
fn oracle_moments(
    problem: &Problem,
    agent: usize,
    x: &DVector<f64>,
    oracle: &OracleConfig,
    draws: usize,
    seed: u64,
) -> (Vec<(f64, f64)>, (f64, f64)) {
    let exact = problem.local_loss_grad(agent, x).1;
    let d = exact.len();
    let mut rng = stream(seed, Purpose::Oracle, agent as u64, 0);
    let mut sum = DVector::zeros(d);
    let mut sum_sq = DVector::zeros(d);
    let (mut norm_sum, mut norm_sq) = (0.0, 0.0);
    for _ in 0..draws {
        let e = problem.sample_gradient(agent, x, oracle, &mut rng) - &exact;
        sum += &e;
        sum_sq += e.component_mul(&e);
        let q = e.norm_squared();
        norm_sum += q;
        norm_sq += q * q;
    }
    let m = draws as f64;
    let coords = (0..d)
        .map(|c| {
            let mean = sum[c] / m;
            let var = (sum_sq[c] / m - mean * mean) * m / (m - 1.0);
            (mean.abs(), (var / m).sqrt())
        })
        .collect();
    let q_mean = norm_sum / m;
    let q_var = (norm_sq / m - q_mean * q_mean) * m / (m - 1.0);
    (coords, (q_mean, (q_var / m).sqrt()))
}

fn a8_oracle_statistics() -> Outcome {
    let problem = desk_problem(ProblemKind::LogisticL2, 4, 81);
    let noisy = OracleConfig::noisy(0.7);
    let sigma_sq = problem.oracle_variance(&noisy, &problem.solve_reference().expect("optimum").0);
    let mut rng = stream(81, Purpose::Init, 0, 0);
    let mut biased = 0;
    let mut checks = 0;
    let mut over = 0;
    let mut worst_var: f64 = 0.0;
    for point in 0..5 {
        let x = DVector::from_fn(problem.dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
        let agent = point % problem.n_agents();
        let (coords, (var, var_err)) = oracle_moments(&problem, agent, &x, &noisy, 20_000, 800 + point as u64);
        for (mean, stderr) in coords {
            checks += 1;
            if mean > 3.0 * stderr {
                biased += 1;
            }
        }
        // the noise variance is exactly sigma^2, so the Monte-Carlo estimate
        // is compared with its own standard error
        if var > sigma_sq + 3.0 * var_err {
            over += 1;
        }
        worst_var = worst_var.max(var);
    }
    Outcome::new(
        biased == 0 && over == 0,
        format!(
            "{biased}/{checks} coordinates outside 3 stderr of zero mean; empirical variance max {worst_var:.4} \
             vs sigma^2 {sigma_sq:.4} at 5 points ({over} above)"
        ),
    )
}

fn central_difference(f: impl Fn(&DVector<f64>) -> f64, x: &DVector<f64>) -> DVector<f64> {
    DVector::from_fn(x.len(), |c, _| {
        let h = 1e-5 * x[c].abs().max(1.0);
        let mut plus = x.clone();
        let mut minus = x.clone();
        plus[c] += h;
        minus[c] -= h;
        (f(&plus) - f(&minus)) / (2.0 * h)
    })
}

fn a9_gradients() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut failures = 0;
    for (kind, seed) in [(ProblemKind::LogisticL2, 91), (ProblemKind::Quadratic, 92)] {
        let problem = desk_problem(kind, 3, seed);
        let mut rng = stream(seed, Purpose::Init, 0, 0);
        for _ in 0..20 {
            let x = DVector::from_fn(problem.dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
            let checks = [
                (problem.global_loss_grad(&x).1, central_difference(|z| problem.global_loss_grad(z).0, &x)),
                (problem.local_loss_grad(1, &x).1, central_difference(|z| problem.local_loss_grad(1, z).0, &x)),
            ];
            for (analytic, numeric) in checks {
                let rel = (&analytic - &numeric).norm() / analytic.norm().max(1e-8);
                worst = worst.max(rel);
                if rel >= 1e-5 {
                    failures += 1;
                }
            }
        }
    }
    Outcome::new(failures == 0, format!("max relative error {worst:.3e} over 80 gradient checks ({failures} above 1e-5)"))
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("A1 gradient-tracking identity", a1_tracking_identity),
        ("A2 deterministic linear convergence", a2_linear_convergence),
        ("A3 spectral-radius soundness", a3_radius_soundness),
        ("A4 classification accuracy", a4_classification),
        ("A5 DSGT vs DSGD steady state", a5_steady_state_contrast),
        ("A6 composite one-step inequality", a6_composite_inequality),
        ("A7 flow floors", a7_flow_floors),
        ("A8 oracle statistics", a8_oracle_statistics),
        ("A9 gradient correctness", a9_gradients),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let outcome = check();
        let verdict = if outcome.passed { "PASS" } else { "FAIL" };
        println!("{verdict} {name}: {}", outcome.detail);
        failed += usize::from(!outcome.passed);
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
