//! Lagrange multiplier time stepping for `ẋ = −D∇V(x)` with
//! `V = ½⟨x, Qx⟩ + E(x)`.
//!
//! Each step treats the quadratic part by the implicit midpoint rule and the
//! energy `E` through a scalar multiplier `η_k` chosen so that
//! `E(x_{k+1}) − E(x_k) = η_k⟨∇E(x*), x_{k+1} − x_k⟩`. Combined with the
//! midpoint rule this makes `V(x_{k+1}) ≤ V(x_k)`.

use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::multiplier::{
    perturb_splitting, solve_eta_near_one, MidpointSolver, MultiplierEquation, Splitting,
    DEFAULT_PERTURBATION, DEFAULT_TOL,
};
use crate::objective::{Objective, Point};

/// Relative slack allowed in the discrete dissipation check.
pub const DISSIPATION_SLACK: f64 = 1e-10;

/// Choice of the point `x*_{k+1/2}` at which `∇E` is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MidpointRule {
    /// `x*_{k+1/2} = x_k` (first order).
    Current,
    /// `x*_{k+1/2} = (3x_k − x_{k−1})/2` (second order). The first step
    /// falls back to [`MidpointRule::Current`].
    Extrapolated,
}

#[derive(Debug, Clone)]
pub struct FlowState {
    pub x: Point,
    pub x_prev: Option<Point>,
    pub k: usize,
    pub h: f64,
    pub eta_history: Vec<f64>,
}

impl FlowState {
    pub fn new(x0: Point, h: f64) -> Self {
        Self {
            x: x0,
            x_prev: None,
            k: 0,
            h,
            eta_history: Vec::new(),
        }
    }
}

/// What happened during one accepted step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowStepInfo {
    pub eta: f64,
    /// The splitting was perturbed because `⟨∇E, D∇V⟩` vanished.
    pub perturbed: bool,
    /// `F ≡ 0` along the ray; `η = 1` was taken.
    pub degenerate: bool,
    pub v_before: f64,
    pub v_after: f64,
}

impl FlowStepInfo {
    pub fn dissipates(&self) -> bool {
        self.v_after <= self.v_before + DISSIPATION_SLACK * (1.0 + self.v_before.abs())
    }
}

/// Integrator bound to one splitting and step size; `I + (h/2)DQ` is
/// factored once.
pub struct FlowStepper<'a> {
    splitting: &'a Splitting,
    solver: MidpointSolver,
    h: f64,
    rule: MidpointRule,
    tol: f64,
    epsilon: f64,
}

impl<'a> FlowStepper<'a> {
    pub fn new(splitting: &'a Splitting, h: f64, rule: MidpointRule) -> Result<Self> {
        if !(h > 0.0) {
            return Err(Error::Config(format!("step size must be positive, got {h}")));
        }
        Ok(Self {
            splitting,
            solver: MidpointSolver::new(splitting, h)?,
            h,
            rule,
            tol: DEFAULT_TOL,
            epsilon: DEFAULT_PERTURBATION,
        })
    }

    pub fn with_tolerance(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn with_perturbation(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    /// Advances `state` by one step.
    pub fn step(&self, state: &mut FlowState) -> Result<FlowStepInfo> {
        let s = self.splitting;
        let x = &state.x;
        let grad_v = s.gradient(x);
        if grad_v.iter().all(|g| *g == 0.0) {
            return Err(Error::StationaryPoint);
        }
        let v_before = s.value(x);

        let anchor = match (self.rule, &state.x_prev) {
            (MidpointRule::Extrapolated, Some(prev)) => (x * 3.0 - prev) * 0.5,
            _ => x.clone(),
        };
        let grad_e = s.energy.gradient(&anchor);
        let (p, q) = self.solver.pq(x, &grad_e)?;
        let eq = MultiplierEquation::general(s, x, grad_e.clone(), p, q, self.h);

        let flat_and_satisfied = eq.is_flat() && eq.eval(1.0).abs() <= self.tol * eq.scale();
        let (x_next, eta, perturbed, degenerate) = if flat_and_satisfied {
            (eq.next_point(1.0), 1.0, false, true)
        } else if self.coupling_vanishes(x, &grad_v) {
            let (x_next, eta) = self.perturbed_step(state)?;
            (x_next, eta, true, false)
        } else {
            let eta =
                solve_eta_near_one(&eq, self.tol).map_err(|e| Error::RootFailure(Box::new(e)))?;
            (eq.next_point(eta), eta, false, false)
        };

        let v_after = s.value(&x_next);
        state.x_prev = Some(std::mem::replace(&mut state.x, x_next));
        state.k += 1;
        state.eta_history.push(eta);
        Ok(FlowStepInfo {
            eta,
            perturbed,
            degenerate,
            v_before,
            v_after,
        })
    }

    /// `⟨∇E(x), D∇V(x)⟩ = 0` up to `1e-12 ‖∇E‖ ‖D∇V‖`.
    fn coupling_vanishes(&self, x: &Point, grad_v: &Point) -> bool {
        let s = self.splitting;
        let ge = s.energy.gradient(x);
        let dgv = &s.d * grad_v;
        ge.dot(&dgv).abs() <= 1e-12 * ge.norm() * dgv.norm()
    }

    fn perturbed_step(&self, state: &FlowState) -> Result<(Point, f64)> {
        let perturbed = perturb_splitting(self.splitting, self.epsilon)?;
        let solver = MidpointSolver::new(&perturbed, self.h)?;
        let x = &state.x;
        let anchor = match (self.rule, &state.x_prev) {
            (MidpointRule::Extrapolated, Some(prev)) => (x * 3.0 - prev) * 0.5,
            _ => x.clone(),
        };
        let grad_e = perturbed.energy.gradient(&anchor);
        let (p, q) = solver.pq(x, &grad_e)?;
        let eq = MultiplierEquation::general(&perturbed, x, grad_e, p, q, self.h);
        let eta = solve_eta_near_one(&eq, self.tol).map_err(|e| Error::RootFailure(Box::new(e)))?;
        Ok((eq.next_point(eta), eta))
    }
}

/// One step of the scheme, factoring `I + (h/2)DQ` on the fly.
pub fn flow_step(
    splitting: &Splitting,
    state: &FlowState,
    rule: MidpointRule,
    tol: f64,
) -> Result<(FlowState, FlowStepInfo)> {
    let stepper = FlowStepper::new(splitting, state.h, rule)?.with_tolerance(tol);
    let mut next = state.clone();
    let info = stepper.step(&mut next)?;
    Ok((next, info))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FlowRecord {
    pub k: usize,
    #[serde(rename = "V")]
    pub v: f64,
    pub grad_norm: f64,
    /// Multiplier of the step leaving `x_k`; empty on the last row.
    pub eta: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct FlowTrajectory {
    pub records: Vec<FlowRecord>,
    pub final_state: FlowState,
    pub stopped_at_stationary: bool,
    pub perturbed_steps: Vec<usize>,
    pub dissipation_violations: Vec<usize>,
}

impl FlowTrajectory {
    pub fn etas(&self) -> impl Iterator<Item = f64> + '_ {
        self.records.iter().filter_map(|r| r.eta)
    }

    /// Writes `k,V,grad_norm,eta`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.records {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Runs `steps` steps from `x0`, stopping early at a stationary point.
pub fn flow_run(
    splitting: &Splitting,
    x0: Point,
    h: f64,
    steps: usize,
    rule: MidpointRule,
) -> Result<FlowTrajectory> {
    if steps == 0 {
        return Err(Error::Config("steps must be at least 1".into()));
    }
    let stepper = FlowStepper::new(splitting, h, rule)?;
    let mut state = FlowState::new(x0, h);
    let mut records = Vec::with_capacity(steps + 1);
    let mut perturbed_steps = Vec::new();
    let mut dissipation_violations = Vec::new();
    let mut stopped_at_stationary = false;

    for _ in 0..steps {
        let k = state.k;
        let v = splitting.value(&state.x);
        let grad_norm = splitting.gradient(&state.x).norm();
        match stepper.step(&mut state) {
            Ok(info) => {
                if info.perturbed {
                    perturbed_steps.push(k);
                }
                if !info.dissipates() {
                    dissipation_violations.push(k);
                }
                records.push(FlowRecord {
                    k,
                    v,
                    grad_norm,
                    eta: Some(info.eta),
                });
            }
            Err(Error::StationaryPoint) => {
                stopped_at_stationary = true;
                break;
            }
            Err(e) => return Err(e),
        }
    }
    records.push(FlowRecord {
        k: state.k,
        v: splitting.value(&state.x),
        grad_norm: splitting.gradient(&state.x).norm(),
        eta: None,
    });
    Ok(FlowTrajectory {
        records,
        final_state: state,
        stopped_at_stationary,
        perturbed_steps,
        dissipation_violations,
    })
}
