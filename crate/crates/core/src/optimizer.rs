//! Steepest-descent methods driven by the multiplier equation, plus the
//! fixed-step and Armijo baselines.
//!
//! With `Q = 0` and `D = I` the multiplier scheme reads
//! `x_{k+1} = x_k − hη_k∇f(x_k)` where `η_k` solves
//! `F_h(η; x_k) = f(x_k − ηh∇f) − f(x_k) + hη²‖∇f‖² = 0`. The relaxed
//! methods only ask for `F_h(η_k; x_k) ≤ 0`, which still gives
//! `f(x_{k+1}) − f(x_k) ≤ −hη_k²‖∇f(x_k)‖²`.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::multiplier::{halving_lower, solve_eta, EtaBracket, MultiplierEquation, DEFAULT_TOL};
use crate::objective::{Objective, Point};

/// Upper limit on reductions inside one line search.
pub const MAX_BACKTRACKS: u32 = 400;
/// Relative slack of the per-step monotonicity check.
pub const DISSIPATION_SLACK: f64 = 1e-10;
/// Absolute slack of the per-step monotonicity check.
pub const DISSIPATION_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Method {
    /// Solve `F_h(η) = 0` exactly each step.
    ExactLm,
    /// Algorithm 1: shrink `η` from 1 until `F_h(η) ≤ 0`.
    Backtracking,
    /// Algorithm 2: backtracking with `h_{k+1} = h_k η_k / η*`.
    Adaptive,
    /// Plain gradient descent with a fixed step.
    FixedGd,
    /// Gradient descent with the Armijo rule.
    Armijo,
}

impl Method {
    /// Methods whose iterates obey the discrete dissipation law.
    pub fn is_multiplier_method(self) -> bool {
        matches!(self, Self::ExactLm | Self::Backtracking | Self::Adaptive)
    }

    pub fn is_monotone(self) -> bool {
        self.is_multiplier_method() || self == Self::Armijo
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::ExactLm => "exact_lm",
            Self::Backtracking => "backtracking",
            Self::Adaptive => "adaptive",
            Self::FixedGd => "fixed_gd",
            Self::Armijo => "armijo",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "exact_lm" => Self::ExactLm,
            "backtracking" => Self::Backtracking,
            "adaptive" => Self::Adaptive,
            "fixed_gd" => Self::FixedGd,
            "armijo" => Self::Armijo,
            other => return Err(Error::Config(format!("unknown method `{other}`"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub method: Method,
    /// Step size `h` (exact, backtracking, fixed) or initial `h₀` (adaptive).
    pub h0: f64,
    /// Reduction factor of every line search.
    pub alpha: f64,
    /// Target multiplier of the adaptive rule.
    pub eta_star: f64,
    /// Stop once `‖∇f(x_k)‖ < eps`.
    pub eps: f64,
    pub c_armijo: f64,
    pub max_iter: usize,
    pub armijo_h_init: f64,
    /// Residual tolerance of the exact multiplier solve.
    pub tol: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            method: Method::Backtracking,
            h0: 1.0,
            alpha: 0.8,
            eta_star: 0.5,
            eps: 1e-6,
            c_armijo: 1e-4,
            max_iter: 10_000,
            armijo_h_init: 10.0,
            tol: DEFAULT_TOL,
        }
    }
}

impl RunConfig {
    pub fn new(method: Method) -> Self {
        Self {
            method,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(what.to_string()));
        if !(self.h0 > 0.0) || !self.h0.is_finite() {
            return bad("h0 must be positive and finite");
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad("alpha must lie in (0, 1)");
        }
        if !(self.eta_star > 0.0 && self.eta_star < 1.0) {
            return bad("eta_star must lie in (0, 1)");
        }
        if !(self.eps >= 0.0) {
            return bad("eps must be nonnegative");
        }
        if !(self.c_armijo > 0.0 && self.c_armijo < 1.0) {
            return bad("c must lie in (0, 1)");
        }
        if !(self.armijo_h_init > 0.0) || !self.armijo_h_init.is_finite() {
            return bad("armijo initial step must be positive");
        }
        if !(self.tol > 0.0) {
            return bad("solver tolerance must be positive");
        }
        if self.max_iter == 0 {
            return bad("max_iter must be at least 1");
        }
        Ok(())
    }

    /// Whether `(α, η*)` satisfy `½ ≤ η* < α`, the hypotheses of the
    /// adaptive rate bounds.
    pub fn adaptive_hypotheses_hold(&self) -> bool {
        self.eta_star < self.alpha && self.eta_star >= 0.5
    }
}

/// State at `x_k` and the step taken from it (empty on the final record).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub k: usize,
    pub f: f64,
    pub grad_norm: f64,
    pub eta: Option<f64>,
    pub h: Option<f64>,
    pub backtracks: Option<u32>,
    /// `h_k η_k` for multiplier methods, the accepted `h` otherwise.
    pub effective_step: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status", content = "detail")]
pub enum Termination {
    Converged,
    /// `‖∇f(x_k)‖²` is zero or subnormal.
    Stationary,
    /// No trial step changes `x_k` in floating point.
    Stalled,
    MaxIterReached,
    Failed(String),
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub config: RunConfig,
    pub records: Vec<StepRecord>,
    pub final_x: Point,
    pub termination: Termination,
    /// Indices `k` with `f(x_{k+1}) > f(x_k)` beyond the allowed slack.
    pub dissipation_violations: Vec<usize>,
}

#[derive(Serialize)]
struct CsvRow {
    k: usize,
    f: f64,
    f_gap: Option<f64>,
    grad_norm: f64,
    eta: Option<f64>,
    h: Option<f64>,
    backtracks: Option<u32>,
}

impl Trajectory {
    /// Number of outer iterations performed.
    pub fn iterations(&self) -> usize {
        self.records.len().saturating_sub(1)
    }

    pub fn steps(&self) -> impl Iterator<Item = &StepRecord> {
        self.records.iter().filter(|r| r.effective_step.is_some())
    }

    pub fn avg_effective_step(&self) -> f64 {
        mean(self.steps().filter_map(|r| r.effective_step))
    }

    pub fn avg_backtracks(&self) -> f64 {
        mean(self.steps().filter_map(|r| r.backtracks.map(f64::from)))
    }

    pub fn final_record(&self) -> &StepRecord {
        self.records.last().expect("trajectory always holds x_0")
    }

    pub fn is_monotone(&self) -> bool {
        self.dissipation_violations.is_empty()
    }

    /// Writes `k,f,f_gap,grad_norm,eta,h,backtracks`, one row per iterate.
    pub fn write_csv(&self, path: impl AsRef<Path>, f_star: Option<f64>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv_to(file, f_star)
    }

    pub fn write_csv_to<W: std::io::Write>(&self, out: W, f_star: Option<f64>) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.records {
            w.serialize(CsvRow {
                k: r.k,
                f: r.f,
                f_gap: f_star.map(|s| r.f - s),
                grad_norm: r.grad_norm,
                eta: r.eta,
                h: r.h,
                backtracks: r.backtracks,
            })?;
        }
        w.flush()?;
        Ok(())
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, count) = values.fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    if count == 0 {
        f64::NAN
    } else {
        sum / count as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmStep {
    pub x_next: Point,
    pub eta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BacktrackStep {
    pub x_next: Point,
    pub eta: f64,
    pub backtracks: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveStep {
    pub x_next: Point,
    pub eta: f64,
    pub h_next: f64,
    pub backtracks: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArmijoStep {
    pub x_next: Point,
    pub h: f64,
    pub backtracks: u32,
}

fn nonzero_gradient(f: &dyn Objective, x: &Point) -> Result<(f64, Point)> {
    let grad = f.gradient(x);
    if grad.iter().all(|g| *g == 0.0) {
        return Err(Error::StationaryPoint);
    }
    Ok((f.value(x), grad))
}

/// Exact multiplier step: `η` is the nontrivial root of `F_h(·; x_k)`.
pub fn exact_lm_step(f: &dyn Objective, x: &Point, h: f64, tol: f64) -> Result<LmStep> {
    let (fx, grad) = nonzero_gradient(f, x)?;
    exact_lm_step_with(f, x, fx, grad, h, tol)
}

fn exact_lm_step_with(
    f: &dyn Objective,
    x: &Point,
    fx: f64,
    grad: Point,
    h: f64,
    tol: f64,
) -> Result<LmStep> {
    let eq = MultiplierEquation::special_with(f, x, fx, grad, h);
    let bracket = match EtaBracket::for_objective(f, h) {
        Some(b) => b,
        None => EtaBracket::new(halving_lower(&eq)?, f64::INFINITY),
    };
    let eta = solve_eta(&eq, bracket, tol).map_err(|e| Error::RootFailure(Box::new(e)))?;
    Ok(LmStep {
        x_next: eq.next_point(eta),
        eta,
    })
}

fn shrink_until_nonpositive(
    eq: &MultiplierEquation<'_>,
    x: &Point,
    alpha: f64,
) -> Result<(f64, u32)> {
    let mut eta = 1.0;
    let mut backtracks = 0;
    while eq.eval(eta) > 0.0 {
        if eq.next_point(eta) == *x {
            return Err(Error::NoProgress);
        }
        if backtracks == MAX_BACKTRACKS {
            return Err(Error::BacktrackLimit(MAX_BACKTRACKS));
        }
        eta *= alpha;
        backtracks += 1;
    }
    Ok((eta, backtracks))
}

/// One outer iteration of Algorithm 1.
pub fn backtracking_step(f: &dyn Objective, x: &Point, h: f64, alpha: f64) -> Result<BacktrackStep> {
    let (fx, grad) = nonzero_gradient(f, x)?;
    backtracking_step_with(f, x, fx, grad, h, alpha)
}

fn backtracking_step_with(
    f: &dyn Objective,
    x: &Point,
    fx: f64,
    grad: Point,
    h: f64,
    alpha: f64,
) -> Result<BacktrackStep> {
    let eq = MultiplierEquation::special_with(f, x, fx, grad, h);
    let (eta, backtracks) = shrink_until_nonpositive(&eq, x, alpha)?;
    Ok(BacktrackStep {
        x_next: eq.next_point(eta),
        eta,
        backtracks,
    })
}

/// One outer iteration of Algorithm 2.
pub fn adaptive_step(
    f: &dyn Objective,
    x: &Point,
    h: f64,
    alpha: f64,
    eta_star: f64,
) -> Result<AdaptiveStep> {
    let (fx, grad) = nonzero_gradient(f, x)?;
    adaptive_step_with(f, x, fx, grad, h, alpha, eta_star)
}

fn adaptive_step_with(
    f: &dyn Objective,
    x: &Point,
    fx: f64,
    grad: Point,
    h: f64,
    alpha: f64,
    eta_star: f64,
) -> Result<AdaptiveStep> {
    let bt = backtracking_step_with(f, x, fx, grad, h, alpha)?;
    Ok(AdaptiveStep {
        x_next: bt.x_next,
        eta: bt.eta,
        h_next: h * bt.eta / eta_star,
        backtracks: bt.backtracks,
    })
}

/// `x − h∇f(x)`.
pub fn fixed_gd_step(f: &dyn Objective, x: &Point, h: f64) -> Point {
    x - f.gradient(x) * h
}

/// Gradient step with the Armijo rule `f(x − h∇f) − f(x) ≤ −c h ‖∇f‖²`.
pub fn armijo_step(f: &dyn Objective, x: &Point, h_init: f64, c: f64, alpha: f64) -> Result<ArmijoStep> {
    let (fx, grad) = nonzero_gradient(f, x)?;
    armijo_step_with(f, x, fx, &grad, h_init, c, alpha)
}

fn armijo_step_with(
    f: &dyn Objective,
    x: &Point,
    fx: f64,
    grad: &Point,
    h_init: f64,
    c: f64,
    alpha: f64,
) -> Result<ArmijoStep> {
    let grad_sq = grad.norm_squared();
    let curvature = f.curvature_along(grad);
    let mut h = h_init;
    let mut backtracks = 0;
    loop {
        let step = grad * (-h);
        let change = match curvature {
            Some(k) => -h * grad_sq + 0.5 * h * h * k,
            None => f.value_change(x, fx, grad, &step),
        };
        if change <= -c * h * grad_sq {
            return Ok(ArmijoStep {
                x_next: x + step,
                h,
                backtracks,
            });
        }
        if x + &step == *x {
            return Err(Error::NoProgress);
        }
        if backtracks == MAX_BACKTRACKS {
            return Err(Error::BacktrackLimit(MAX_BACKTRACKS));
        }
        h *= alpha;
        backtracks += 1;
    }
}

/// Runs the configured method from `x0` until `‖∇f‖ < eps`, a stationary
/// point, a failure, or `max_iter` steps.
pub fn optimize(f: &dyn Objective, x0: &Point, config: &RunConfig) -> Result<Trajectory> {
    config.validate()?;
    if x0.len() != f.dim() {
        return Err(Error::Config(format!(
            "initial point has dimension {}, objective expects {}",
            x0.len(),
            f.dim()
        )));
    }
    let mut x = x0.clone();
    let mut h = config.h0;
    let mut records = Vec::new();
    let mut violations = Vec::new();
    let mut previous_f: Option<f64> = None;

    let termination = loop {
        let k = records.len();
        let fx = f.value(&x);
        let grad = f.gradient(&x);
        let grad_norm = grad.norm();
        if let Some(prev) = previous_f {
            if config.method.is_monotone()
                && fx > prev + DISSIPATION_SLACK * prev.abs() + DISSIPATION_FLOOR
            {
                violations.push(k - 1);
            }
        }
        previous_f = Some(fx);
        records.push(StepRecord {
            k,
            f: fx,
            grad_norm,
            eta: None,
            h: None,
            backtracks: None,
            effective_step: None,
        });

        // Once ‖∇f‖² is subnormal the multiplier equation can no longer be
        // resolved, so such a gradient is treated as zero.
        if grad_norm * grad_norm < f64::MIN_POSITIVE {
            break Termination::Stationary;
        }
        if grad_norm < config.eps {
            break Termination::Converged;
        }
        if k == config.max_iter {
            break Termination::MaxIterReached;
        }

        let record = records.last_mut().expect("just pushed");
        let outcome = match config.method {
            Method::ExactLm => exact_lm_step_with(f, &x, fx, grad, h, config.tol).map(|s| {
                record.eta = Some(s.eta);
                record.h = Some(h);
                record.backtracks = Some(0);
                record.effective_step = Some(h * s.eta);
                s.x_next
            }),
            Method::Backtracking => {
                backtracking_step_with(f, &x, fx, grad, h, config.alpha).map(|s| {
                    record.eta = Some(s.eta);
                    record.h = Some(h);
                    record.backtracks = Some(s.backtracks);
                    record.effective_step = Some(h * s.eta);
                    s.x_next
                })
            }
            Method::Adaptive => {
                adaptive_step_with(f, &x, fx, grad, h, config.alpha, config.eta_star).map(|s| {
                    record.eta = Some(s.eta);
                    record.h = Some(h);
                    record.backtracks = Some(s.backtracks);
                    record.effective_step = Some(h * s.eta);
                    h = s.h_next;
                    s.x_next
                })
            }
            Method::FixedGd => {
                record.h = Some(h);
                record.backtracks = Some(0);
                record.effective_step = Some(h);
                Ok(&x - grad * h)
            }
            Method::Armijo => armijo_step_with(
                f,
                &x,
                fx,
                &grad,
                config.armijo_h_init,
                config.c_armijo,
                config.alpha,
            )
            .map(|s| {
                record.h = Some(s.h);
                record.backtracks = Some(s.backtracks);
                record.effective_step = Some(s.h);
                s.x_next
            }),
        };
        match outcome {
            Ok(next) if next.iter().all(|v| v.is_finite()) => x = next,
            Ok(_) => {
                break Termination::Failed(format!("non-finite iterate after step {k}"));
            }
            Err(Error::NoProgress) => break Termination::Stalled,
            Err(e) => break Termination::Failed(e.to_string()),
        }
    };

    Ok(Trajectory {
        config: *config,
        records,
        final_x: x,
        termination,
        dissipation_violations: violations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::multiplier::{eta_lower_bound, eval_f_special};
    use crate::objective::{make_quadratic, FnObjective};

    fn half_square() -> FnObjective {
        FnObjective::new(1, |x| 0.5 * x[0] * x[0], |x| x.clone())
            .with_lipschitz(1.0)
            .with_pl_mu(1.0)
            .with_minimum(Point::zeros(1), 0.0)
            .convex()
    }

    fn one() -> Point {
        Point::from_element(1, 1.0)
    }

    #[test]
    fn exact_step_closed_form() {
        let f = half_square();
        let s = exact_lm_step(&f, &one(), 1.0, DEFAULT_TOL).unwrap();
        assert!((s.eta - 2.0 / 3.0).abs() < 1e-12);
        assert!((s.x_next[0] - 1.0 / 3.0).abs() < 1e-12);
        assert!((f.value(&s.x_next) - 1.0 / 18.0).abs() < 1e-12);
    }

    #[test]
    fn exact_step_without_lipschitz_constant() {
        let f = FnObjective::new(1, |x| 0.5 * x[0] * x[0], |x| x.clone());
        let s = exact_lm_step(&f, &one(), 1.0, DEFAULT_TOL).unwrap();
        assert!((s.eta - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn backtracking_trace_matches_hand_computation() {
        let f = half_square();
        let x = one();
        let trace: Vec<f64> = [1.0, 0.8, 0.64].iter().map(|&e| eval_f_special(&f, &x, 1.0, e)).collect();
        assert!((trace[0] - 0.5).abs() < 1e-15);
        assert!((trace[1] - 0.16).abs() < 1e-15);
        assert!((trace[2] + 0.0256).abs() < 1e-15);
        let s = backtracking_step(&f, &x, 1.0, 0.8).unwrap();
        assert_eq!(s.backtracks, 2);
        assert!((s.eta - 0.64).abs() < 1e-15);
        let bound = eta_lower_bound(1.0, 1.0).ln() / 0.8_f64.ln();
        assert_eq!(bound.ceil() as u32, 2);
    }

    #[test]
    fn backtracking_skips_loop_when_f_of_one_nonpositive() {
        // Linear objective: F(1) = −h g² + h g² = 0.
        let f = FnObjective::new(1, |x| 3.0 * x[0], |_| Point::from_element(1, 3.0));
        let s = backtracking_step(&f, &one(), 0.5, 0.8).unwrap();
        assert_eq!(s.backtracks, 0);
        assert_eq!(s.eta, 1.0);
    }

    #[test]
    fn adaptive_update_fixed_point() {
        let f = FnObjective::new(1, |x| 3.0 * x[0], |_| Point::from_element(1, 3.0));
        // η = 1 is accepted, so h doubles when η* = 1/2.
        let s = adaptive_step(&f, &one(), 2.0, 0.8, 0.5).unwrap();
        assert_eq!(s.eta, 1.0);
        assert_eq!(s.h_next, 4.0);
        let quad = half_square();
        let s = adaptive_step(&quad, &one(), 1.0, 0.8, 0.64).unwrap();
        assert!((s.eta - 0.64).abs() < 1e-15);
        assert!((s.h_next - 1.0).abs() < 1e-15);
    }

    #[test]
    fn fixed_gd_cases() {
        let f = half_square();
        assert_eq!(fixed_gd_step(&f, &one(), 1.0)[0], 0.0);
        let zero = Point::zeros(1);
        assert_eq!(fixed_gd_step(&f, &zero, 3.0), zero);
    }

    #[test]
    fn armijo_accepts_boundary_step() {
        let f = half_square();
        let s = armijo_step(&f, &one(), 1.0, 0.5, 0.8).unwrap();
        assert_eq!(s.backtracks, 0);
        assert_eq!(s.h, 1.0);
    }

    #[test]
    fn armijo_backtracks_nonincreasing_in_c() {
        let inst = make_quadratic(20, 13);
        let x = Point::from_element(20, 2.0);
        let mut last = u32::MAX;
        for c in [0.9, 0.5, 0.1, 1e-2, 1e-4, 1e-8] {
            let s = armijo_step(&inst, &x, 10.0, c, 0.8).unwrap();
            assert!(s.backtracks <= last);
            last = s.backtracks;
        }
    }

    #[test]
    fn stationary_start_returns_immediately() {
        let f = half_square();
        let t = optimize(&f, &Point::zeros(1), &RunConfig::new(Method::ExactLm)).unwrap();
        assert_eq!(t.iterations(), 0);
        assert_eq!(t.termination, Termination::Stationary);
        assert!(matches!(exact_lm_step(&f, &Point::zeros(1), 1.0, 1e-12), Err(Error::StationaryPoint)));
    }

    #[test]
    fn invalid_config_is_rejected() {
        let f = half_square();
        let cfg = RunConfig {
            alpha: 1.5,
            ..RunConfig::default()
        };
        assert!(matches!(optimize(&f, &one(), &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn max_iter_is_soft() {
        let inst = make_quadratic(10, 2);
        let cfg = RunConfig {
            max_iter: 5,
            eps: 0.0,
            ..RunConfig::new(Method::Backtracking)
        };
        let t = optimize(&inst, &Point::zeros(10), &cfg).unwrap();
        assert_eq!(t.termination, Termination::MaxIterReached);
        assert_eq!(t.records.len(), 6);
        assert!(t.final_record().eta.is_none());
    }

    #[test]
    fn csv_has_expected_header_and_rows() {
        let f = half_square();
        let t = optimize(&f, &one(), &RunConfig::new(Method::ExactLm)).unwrap();
        let mut buf = Vec::new();
        t.write_csv_to(&mut buf, Some(0.0)).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("k,f,f_gap,grad_norm,eta,h,backtracks"));
        assert_eq!(lines.count(), t.iterations() + 1);
    }

    #[test]
    fn method_names_round_trip() {
        for m in [Method::ExactLm, Method::Backtracking, Method::Adaptive, Method::FixedGd, Method::Armijo] {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!("newton".parse::<Method>().is_err());
    }
}
