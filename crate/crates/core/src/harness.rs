//! Benchmark experiments: instance construction, method sweeps, summary
//! tables, figure data and the invariant verification bundle.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::multiplier::{eta_lower_bound, EtaBracket};
use crate::objective::{
    check_gradient, check_pl_inequality, check_smoothness_inequalities, gradient_tolerance,
    make_log_sum_exp, make_nonconvex_pl, make_quadratic, Objective, Point, ProblemInstance,
    WithLipschitz,
};
use crate::optimizer::{optimize, Method, RunConfig, Termination, Trajectory};
use crate::rates::{applicable_kinds, certify, h_lb, h_ub, RateConstants, RateEnvelope};

/// Gradient-norm tolerance of the table runs.
pub const TABLE_EPS: f64 = 1e-6;
/// Iteration horizon of table and figure runs.
pub const HORIZON: usize = 10_000;
/// Gradient-norm tolerance of the log-sum-exp reference solve.
pub const REFERENCE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum ProblemKind {
    Quadratic,
    Lse,
    NonconvexPl,
}

impl ProblemKind {
    pub const ALL: [ProblemKind; 3] = [Self::Quadratic, Self::Lse, Self::NonconvexPl];

    pub fn name(self) -> &'static str {
        match self {
            Self::Quadratic => "quadratic",
            Self::Lse => "lse",
            Self::NonconvexPl => "nonconvex_pl",
        }
    }

    /// Initial trial step of the Armijo line search.
    pub fn armijo_h_init(self) -> f64 {
        match self {
            Self::Lse => 100.0,
            Self::Quadratic | Self::NonconvexPl => 10.0,
        }
    }

    /// Step sizes swept for Algorithm 1 in the tables.
    pub fn backtracking_steps(self) -> [f64; 3] {
        match self {
            Self::NonconvexPl => [0.1, 1.0, 10.0],
            Self::Quadratic | Self::Lse => [1.0, 10.0, 100.0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProblemParams {
    pub n: usize,
    /// Number of log-sum-exp terms.
    pub m: usize,
    pub rho: f64,
}

impl ProblemParams {
    pub fn defaults(kind: ProblemKind) -> Self {
        match kind {
            ProblemKind::Quadratic => Self { n: 500, m: 0, rho: 0.0 },
            ProblemKind::Lse => Self { n: 50, m: 200, rho: 20.0 },
            ProblemKind::NonconvexPl => Self { n: 50, m: 0, rho: 0.0 },
        }
    }
}

/// One method run inside an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSpec {
    pub label: String,
    pub config: RunConfig,
    /// Shown in the summary table.
    pub in_table: bool,
}

impl MethodSpec {
    pub fn new(config: RunConfig) -> Self {
        Self {
            label: default_label(&config),
            config,
            in_table: false,
        }
    }
}

fn default_label(c: &RunConfig) -> String {
    match c.method {
        Method::Armijo => format!("armijo_c{}", c.c_armijo),
        Method::Backtracking => format!("backtracking_h{}", c.h0),
        Method::Adaptive => format!("adaptive_h0_{}", c.h0),
        Method::ExactLm => format!("exact_lm_h{}", c.h0),
        Method::FixedGd => format!("fixed_gd_h{}", c.h0),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub problem: ProblemKind,
    pub params: ProblemParams,
    pub seed: u64,
    pub methods: Vec<MethodSpec>,
    /// Directory for per-method CSV files; nothing is written when absent.
    pub out_dir: Option<PathBuf>,
    /// Replaces the advertised Lipschitz constant of the instance.
    pub lipschitz_override: Option<f64>,
    /// Loads the instance from a JSON document instead of generating it.
    pub instance_file: Option<PathBuf>,
}

impl ExperimentSpec {
    /// The published sweep: Armijo over `c`, Algorithm 1 over `h`,
    /// Algorithm 2 over `h₀`, plus fixed-step descent with `h = 1/L`
    /// (filled in once `L` is known).
    pub fn table(problem: ProblemKind, seed: u64) -> Self {
        let base = RunConfig {
            eps: TABLE_EPS,
            max_iter: HORIZON,
            armijo_h_init: problem.armijo_h_init(),
            ..RunConfig::default()
        };
        let mut methods = Vec::new();
        for c in [1e-4, 0.1, 0.5] {
            methods.push(table_entry(RunConfig {
                method: Method::Armijo,
                c_armijo: c,
                ..base
            }));
        }
        for h in problem.backtracking_steps() {
            methods.push(table_entry(RunConfig {
                method: Method::Backtracking,
                h0: h,
                ..base
            }));
        }
        for h in [1.0, 10.0, 100.0] {
            methods.push(table_entry(RunConfig {
                method: Method::Adaptive,
                h0: h,
                ..base
            }));
        }
        methods.push(MethodSpec {
            label: "fixed_gd".into(),
            config: RunConfig {
                method: Method::FixedGd,
                h0: f64::NAN,
                ..base
            },
            in_table: false,
        });
        Self {
            problem,
            params: ProblemParams::defaults(problem),
            seed,
            methods,
            out_dir: None,
            lipschitz_override: None,
            instance_file: None,
        }
    }

    /// A single-method experiment with the problem's default parameters.
    pub fn single(problem: ProblemKind, seed: u64, config: RunConfig) -> Self {
        Self {
            methods: vec![MethodSpec::new(config)],
            ..Self::table(problem, seed)
        }
    }

    /// The table sweep plus an exact multiplier run with `h = 1/L`.
    pub fn verification(problem: ProblemKind, seed: u64) -> Self {
        let mut spec = Self::table(problem, seed);
        let base = spec.methods[0].config;
        spec.methods.push(MethodSpec {
            label: "exact_lm".into(),
            config: RunConfig {
                method: Method::ExactLm,
                h0: f64::NAN,
                ..base
            },
            in_table: false,
        });
        spec
    }
}

fn table_entry(config: RunConfig) -> MethodSpec {
    MethodSpec {
        in_table: true,
        ..MethodSpec::new(config)
    }
}

/// Instance, objective handle and starting point of an experiment.
#[derive(Clone)]
pub struct Benchmark {
    pub instance: ProblemInstance,
    pub objective: Arc<dyn Objective>,
    pub x0: Point,
}

impl Benchmark {
    pub fn lipschitz(&self) -> Option<f64> {
        self.objective.lipschitz()
    }

    pub fn f_star(&self) -> Option<f64> {
        self.objective.optimal_value()
    }

    /// Resolves `NaN` step sizes (meaning `1/L`) in `config`.
    pub fn resolve(&self, config: &RunConfig) -> Result<RunConfig> {
        if !config.h0.is_nan() {
            return Ok(*config);
        }
        let l = self.lipschitz().ok_or(Error::MissingConstant("lipschitz"))?;
        Ok(RunConfig { h0: 1.0 / l, ..*config })
    }
}

/// Generates the instance named by `spec` (or loads it) and its `x₀`.
pub fn build_benchmark(spec: &ExperimentSpec) -> Result<Benchmark> {
    let instance = match &spec.instance_file {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            ProblemInstance::from_json(&text)?
        }
        None => generate_instance(spec.problem, &spec.params, spec.seed)?,
    };
    let instance = match instance {
        ProblemInstance::LogSumExp(lse) if lse.f_star.is_none() => {
            let (x_star, f_star) = reference_solution(&ProblemInstance::LogSumExp(lse.clone()))?;
            ProblemInstance::LogSumExp(lse.with_optimum(x_star, f_star))
        }
        other => other,
    };
    let x0 = initial_point(&instance, spec.seed);
    let objective: Arc<dyn Objective> = match spec.lipschitz_override {
        Some(l) => Arc::new(WithLipschitz {
            inner: instance.clone(),
            lipschitz: l,
        }),
        None => Arc::new(instance.clone()),
    };
    Ok(Benchmark {
        instance,
        objective,
        x0,
    })
}

pub fn generate_instance(kind: ProblemKind, params: &ProblemParams, seed: u64) -> Result<ProblemInstance> {
    if params.n == 0 {
        return Err(Error::Config("dimension must be positive".into()));
    }
    Ok(match kind {
        ProblemKind::Quadratic => ProblemInstance::Quadratic(make_quadratic(params.n, seed)),
        ProblemKind::Lse => {
            if params.m == 0 || !(params.rho > 0.0) {
                return Err(Error::Config("log-sum-exp needs m ≥ 1 and rho > 0".into()));
            }
            ProblemInstance::LogSumExp(make_log_sum_exp(params.n, params.m, params.rho, seed))
        }
        ProblemKind::NonconvexPl => ProblemInstance::NonconvexPl(make_nonconvex_pl(params.n, seed)),
    })
}

/// Starting point: the origin for the convex problems, a standard normal
/// draw (stream independent of the instance) for the nonconvex one, whose
/// minimizer is the origin.
pub fn initial_point(instance: &ProblemInstance, seed: u64) -> Point {
    let n = instance.dim();
    match instance {
        ProblemInstance::Quadratic(_) | ProblemInstance::LogSumExp(_) => Point::zeros(n),
        ProblemInstance::NonconvexPl(_) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(1);
            Point::from_fn(n, |_, _| StandardNormal.sample(&mut rng))
        }
    }
}

/// High-accuracy minimizer by exact multiplier steps until
/// `‖∇f‖ < 1e-12`; returns the best iterate found.
pub fn reference_solution(instance: &ProblemInstance) -> Result<(Point, f64)> {
    let l = match instance {
        ProblemInstance::LogSumExp(lse) => lse.lipschitz_scaled(),
        other => other.lipschitz().ok_or(Error::MissingConstant("lipschitz"))?,
    };
    let config = RunConfig {
        method: Method::ExactLm,
        h0: 2.0 / l,
        eps: REFERENCE_EPS,
        max_iter: 200_000,
        ..RunConfig::default()
    };
    let x0 = initial_point(instance, 0);
    let traj = optimize(instance, &x0, &config)?;
    if let Termination::Failed(msg) = &traj.termination {
        return Err(Error::Config(format!("reference solve failed: {msg}")));
    }
    let f = instance.value(&traj.final_x);
    Ok((traj.final_x, f))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub avg_step: Option<f64>,
    pub avg_backtracks: Option<f64>,
    pub iterations: usize,
    pub final_f_gap: Option<f64>,
    pub termination: Termination,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub problem: ProblemKind,
    pub seed: u64,
    pub per_method: BTreeMap<String, MethodSummary>,
}

pub struct MethodRun {
    pub spec: MethodSpec,
    pub outcome: Result<Trajectory>,
}

pub struct ExperimentRun {
    pub benchmark: Benchmark,
    pub runs: Vec<MethodRun>,
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

impl ExperimentRun {
    pub fn summary(&self, spec: &ExperimentSpec) -> ExperimentSummary {
        let f_star = self.benchmark.f_star();
        let per_method = self
            .runs
            .iter()
            .map(|run| {
                let s = match &run.outcome {
                    Ok(t) => MethodSummary {
                        avg_step: finite(t.avg_effective_step()),
                        avg_backtracks: finite(t.avg_backtracks()),
                        iterations: t.iterations(),
                        final_f_gap: f_star.map(|s| t.final_record().f - s),
                        termination: t.termination.clone(),
                    },
                    Err(e) => MethodSummary {
                        avg_step: None,
                        avg_backtracks: None,
                        iterations: 0,
                        final_f_gap: None,
                        termination: Termination::Failed(e.to_string()),
                    },
                };
                (run.spec.label.clone(), s)
            })
            .collect();
        ExperimentSummary {
            problem: spec.problem,
            seed: spec.seed,
            per_method,
        }
    }

    pub fn trajectory(&self, label: &str) -> Option<&Trajectory> {
        self.runs
            .iter()
            .find(|r| r.spec.label == label)
            .and_then(|r| r.outcome.as_ref().ok())
    }
}

/// Runs every method of `spec` on one shared instance. Method failures are
/// kept per method; only instance construction errors abort.
pub fn run_methods(spec: &ExperimentSpec) -> Result<ExperimentRun> {
    let benchmark = build_benchmark(spec)?;
    let runs = spec
        .methods
        .par_iter()
        .map(|m| {
            let outcome = benchmark
                .resolve(&m.config)
                .and_then(|config| optimize(benchmark.objective.as_ref(), &benchmark.x0, &config));
            MethodRun {
                spec: m.clone(),
                outcome,
            }
        })
        .collect();
    Ok(ExperimentRun { benchmark, runs })
}

/// Runs the experiment, writes one CSV per method when `out_dir` is set,
/// and returns the summary.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<(ExperimentRun, ExperimentSummary)> {
    let run = run_methods(spec)?;
    if let Some(dir) = &spec.out_dir {
        write_csvs(&run, dir)?;
    }
    let summary = run.summary(spec);
    Ok((run, summary))
}

fn write_csvs(run: &ExperimentRun, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let f_star = run.benchmark.f_star();
    let mut paths = Vec::new();
    for r in &run.runs {
        if let Ok(t) = &r.outcome {
            let path = dir.join(format!("{}.csv", r.spec.label));
            t.write_csv(&path, f_star)?;
            paths.push(path);
        }
    }
    Ok(paths)
}

/// Writes per-method trajectories for plotting `f(x_k) − f⋆` against `k`.
pub fn emit_figure_data(spec: &ExperimentSpec, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let run = run_methods(spec)?;
    write_csvs(&run, out_dir)
}

/// Text table with one column per table method.
pub fn render_table(spec: &ExperimentSpec, summary: &ExperimentSummary) -> String {
    let cols: Vec<&MethodSpec> = spec.methods.iter().filter(|m| m.in_table).collect();
    let fmt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.3}"));
    let mut out = String::new();
    let _ = writeln!(out, "problem: {}  seed: {}", spec.problem.name(), spec.seed);
    let _ = write!(out, "{:<12}", "method");
    for m in &cols {
        let _ = write!(out, " {:>22}", m.label);
    }
    out.push('\n');
    for (name, get) in [
        ("step size", (|s: &MethodSummary| s.avg_step) as fn(&MethodSummary) -> Option<f64>),
        ("# backtrack", |s: &MethodSummary| s.avg_backtracks),
        ("iterations", |s: &MethodSummary| Some(s.iterations as f64)),
    ] {
        let _ = write!(out, "{name:<12}");
        for m in &cols {
            let v = summary.per_method.get(&m.label).and_then(get);
            let _ = write!(out, " {:>22}", fmt(v));
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckStatus {
    Pass,
    Fail,
    NotApplicable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub status: CheckStatus,
    /// Largest observed/allowed ratio, when meaningful.
    pub worst_ratio: Option<f64>,
    pub detail: String,
}

impl CheckResult {
    fn new(name: impl Into<String>, ok: bool, worst_ratio: Option<f64>, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            status: if ok { CheckStatus::Pass } else { CheckStatus::Fail },
            worst_ratio,
            detail: detail.into(),
        }
    }

    fn not_applicable(name: impl Into<String>, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            status: CheckStatus::NotApplicable,
            worst_ratio: None,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationBundle {
    pub problem: ProblemKind,
    pub seed: u64,
    pub checks: Vec<CheckResult>,
}

impl VerificationBundle {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.status != CheckStatus::Fail)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| c.status == CheckStatus::Fail)
    }
}

/// Number of random points and pairs probed by the objective checks.
const PROBES: usize = 64;

/// Runs every invariant check over the instance and methods of `spec`.
/// Failures are reported in the bundle, never as errors, except when the
/// instance itself cannot be built.
pub fn verify_all(spec: &ExperimentSpec) -> Result<VerificationBundle> {
    let run = run_methods(spec)?;
    let bench = &run.benchmark;
    let f = bench.objective.as_ref();
    let mut checks = objective_checks(bench, spec.seed);
    for r in &run.runs {
        let label = &r.spec.label;
        let traj = match &r.outcome {
            Ok(t) => t,
            Err(e) => {
                checks.push(CheckResult::new(format!("{label}: run"), false, None, e.to_string()));
                continue;
            }
        };
        if let Termination::Failed(msg) = &traj.termination {
            checks.push(CheckResult::new(format!("{label}: run"), false, None, msg.clone()));
        }
        let config = traj.config;
        if config.method.is_monotone() {
            checks.push(CheckResult::new(
                format!("{label}: dissipation"),
                traj.is_monotone(),
                None,
                format!("{} increases", traj.dissipation_violations.len()),
            ));
        }
        checks.extend(method_checks(f, traj, label));
        let constants = RateConstants::for_run(f, &bench.x0, &config);
        let kinds = applicable_kinds(config.method, f, &config);
        if kinds.is_empty() && config.method.is_multiplier_method() {
            checks.push(CheckResult::not_applicable(
                format!("{label}: rate envelopes"),
                "no envelope hypotheses hold",
            ));
        }
        for kind in kinds {
            let name = format!("{label}: envelope {}", kind.name());
            match certify(traj, &RateEnvelope::new(kind, constants)) {
                Ok(rep) => checks.push(CheckResult::new(
                    name,
                    rep.passed(),
                    Some(rep.worst_ratio),
                    format!("{} of {} iterates above the bound", rep.violations.len(), rep.checked),
                )),
                Err(e) => checks.push(CheckResult::not_applicable(name, e.to_string())),
            }
        }
    }
    Ok(VerificationBundle {
        problem: spec.problem,
        seed: spec.seed,
        checks,
    })
}

fn probe_points(bench: &Benchmark, seed: u64) -> Vec<Point> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2);
    let n = bench.x0.len();
    let scale = 1.0 + bench.x0.norm() / (n as f64).sqrt();
    let mut points = vec![bench.x0.clone()];
    if let Some(x_star) = bench.objective.minimizer() {
        points.push(x_star);
    }
    while points.len() < PROBES {
        let base = &points[points.len() % 2];
        let noise = Point::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
        points.push(base + noise * scale);
    }
    points
}

fn objective_checks(bench: &Benchmark, seed: u64) -> Vec<CheckResult> {
    let f = bench.objective.as_ref();
    let points = probe_points(bench, seed);
    let mut checks = Vec::new();

    let mut worst = 0.0_f64;
    for x in points.iter().take(8) {
        let err = check_gradient(f, x, 1e-6 * (1.0 + x.norm() / (x.len() as f64).sqrt()));
        worst = worst.max(err / gradient_tolerance(f, x));
    }
    checks.push(CheckResult::new("gradient", worst <= 1.0, Some(worst), "central differences"));

    // Along the top curvature direction as well as random pairs, so an
    // understated constant is caught.
    let mut bad = 0;
    let mut pairs = 0;
    let mut missing = None;
    for (i, x) in points.iter().enumerate() {
        let y = &points[(i + 1) % points.len()];
        for z in [y.clone(), x + sharpest_direction(f, x) * (1.0 + x.norm())] {
            pairs += 1;
            match check_smoothness_inequalities(f, x, &z) {
                Ok(true) => {}
                Ok(false) => bad += 1,
                Err(e) => missing = Some(e.to_string()),
            }
        }
    }
    checks.push(match missing {
        Some(msg) => CheckResult::not_applicable("smoothness", msg),
        None => CheckResult::new("smoothness", bad == 0, None, format!("{bad} of {pairs} pairs violate")),
    });

    if f.pl_mu().is_some() && f.optimal_value().is_some() {
        let bad = points
            .iter()
            .filter(|x| !matches!(check_pl_inequality(f, x), Ok(true)))
            .count();
        checks.push(CheckResult::new(
            "pl_inequality",
            bad == 0,
            None,
            format!("{bad} of {} points violate", points.len()),
        ));
    }
    checks
}

/// Unit direction of largest curvature estimated by power iteration on
/// finite-difference Hessian-vector products.
fn sharpest_direction(f: &dyn Objective, x: &Point) -> Point {
    let n = x.len();
    let g0 = f.gradient(x);
    let mut v = Point::from_fn(n, |i, _| 1.0 + (i as f64 * 0.618).sin());
    v /= v.norm();
    let delta = 1e-4 * (1.0 + x.norm());
    for _ in 0..30 {
        let hv = (f.gradient(&(x + &v * delta)) - &g0) / delta;
        let norm = hv.norm();
        if norm == 0.0 || !norm.is_finite() {
            break;
        }
        v = hv / norm;
    }
    v
}

/// Per-step checks tied to the multiplier methods.
fn method_checks(f: &dyn Objective, traj: &Trajectory, label: &str) -> Vec<CheckResult> {
    let config = traj.config;
    let mut checks = Vec::new();
    let Some(l) = f.lipschitz() else {
        return checks;
    };
    match config.method {
        Method::Backtracking | Method::Adaptive => {
            let mut worst = 0.0_f64;
            let mut bad = 0;
            for r in traj.steps() {
                let (h, b) = (r.h.unwrap_or(f64::NAN), r.backtracks.unwrap_or(0));
                let cap = (eta_lower_bound(l, h).ln() / config.alpha.ln()).ceil();
                let cap = cap.max(0.0);
                if f64::from(b) > cap {
                    bad += 1;
                }
                worst = worst.max(f64::from(b) / cap.max(1.0));
            }
            checks.push(CheckResult::new(
                format!("{label}: backtrack count"),
                bad == 0,
                Some(worst),
                format!("{bad} steps exceed the bound"),
            ));
        }
        Method::ExactLm => {
            let mut bad = 0;
            for r in traj.steps() {
                let h = r.h.unwrap_or(f64::NAN);
                let eta = r.eta.unwrap_or(f64::NAN);
                if let Some(b) = EtaBracket::for_objective(f, h) {
                    let slack = 1e-9 * b.lower.max(1.0);
                    if eta < b.lower - slack || eta > b.upper + 1e-9 * b.upper.max(1.0) {
                        bad += 1;
                    }
                }
            }
            checks.push(CheckResult::new(
                format!("{label}: eta bracket"),
                bad == 0,
                None,
                format!("{bad} multipliers outside the bracket"),
            ));
        }
        _ => {}
    }
    if config.method == Method::Adaptive {
        let (a, e) = (config.alpha, config.eta_star);
        let name = format!("{label}: adaptive h bounds");
        if !config.adaptive_hypotheses_hold() {
            checks.push(CheckResult::not_applicable(name, "requires 1/2 <= eta_star < alpha"));
        } else {
            let lb = h_lb(a, e, l);
            let ub = f.pl_mu().map(|mu| h_ub(mu, e));
            let check_lb = config.h0 >= lb;
            let check_ub = ub.is_some_and(|ub| config.h0 <= ub);
            if !check_lb && !check_ub {
                checks.push(CheckResult::not_applicable(name, "h0 outside [h_LB, h_UB]"));
            } else {
                let bad = traj
                    .steps()
                    .filter_map(|r| r.h)
                    .filter(|&h| {
                        (check_lb && h < lb * (1.0 - 1e-12)) || (check_ub && h > ub.unwrap() * (1.0 + 1e-12))
                    })
                    .count();
                checks.push(CheckResult::new(name, bad == 0, None, format!("{bad} steps leave the interval")));
            }
        }
    }
    checks
}

/// Summary rows of `verify_all` as plain text.
pub fn render_checks(bundle: &VerificationBundle) -> String {
    let mut out = String::new();
    for c in &bundle.checks {
        let status = match c.status {
            CheckStatus::Pass => "PASS",
            CheckStatus::Fail => "FAIL",
            CheckStatus::NotApplicable => "N/A ",
        };
        let _ = writeln!(out, "{status} {} ({})", c.name, c.detail);
    }
    out
}
