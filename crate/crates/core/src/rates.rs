//! Convergence envelopes for the multiplier methods and certification of
//! recorded trajectories against them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objective::{Objective, Point};
use crate::optimizer::{Method, RunConfig, Trajectory};

/// Relative slack granted to every certified inequality.
pub const CERTIFY_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateKind {
    /// `min_{i≤k} ‖∇f(x_i)‖ ≤ (Lh/2 + 1) √(Δ₀ / ((k+1)h))`, exact steps.
    GradMin,
    /// `f(x_k) − f⋆ ≤ ((Lh+2)/4) ‖x₀ − x⋆‖² / (kh)`, exact steps, `h ≤ 2/L`.
    Convex1k,
    /// `f(x_k) − f⋆ ≤ exp(−8μkh/(Lh+2)²) Δ₀`, exact steps.
    PlExp,
    /// `min_{i≤k} ‖∇f(x_i)‖ ≤ (Lh+2)/(2α) √(Δ₀ / ((k+1)h))`, backtracking.
    BtGrad,
    /// `f(x_k) − f⋆ ≤ exp(−8α²μkh/(Lh+2)²) Δ₀`, backtracking.
    BtPl,
    /// `f(x_k) − f⋆ ≤ L/(4(α−η*)) ‖x₀ − x⋆‖² / k`, adaptive.
    AdConvex,
    /// `f(x_k) − f⋆ ≤ exp(−16α(α−η*)η*² k / (κ(κ + 4η*²))) Δ₀`, adaptive.
    AdPl,
}

impl RateKind {
    pub const ALL: [RateKind; 7] = [
        Self::GradMin,
        Self::Convex1k,
        Self::PlExp,
        Self::BtGrad,
        Self::BtPl,
        Self::AdConvex,
        Self::AdPl,
    ];

    /// Whether the bound constrains the smallest gradient norm seen so far
    /// rather than the optimality gap.
    pub fn is_gradient_bound(self) -> bool {
        matches!(self, Self::GradMin | Self::BtGrad)
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::GradMin => "grad_min",
            Self::Convex1k => "convex_1k",
            Self::PlExp => "pl_exp",
            Self::BtGrad => "bt_grad",
            Self::BtPl => "bt_pl",
            Self::AdConvex => "ad_convex",
            Self::AdPl => "ad_pl",
        }
    }
}

/// Constants an envelope may need. Missing entries surface as
/// [`Error::MissingConstant`] when the envelope is evaluated.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RateConstants {
    pub lipschitz: Option<f64>,
    pub mu: Option<f64>,
    /// `h` for fixed-step methods, `h₀` for the adaptive method.
    pub h: Option<f64>,
    pub alpha: Option<f64>,
    pub eta_star: Option<f64>,
    pub f_star: Option<f64>,
    /// `f(x₀) − f⋆`.
    pub initial_gap: Option<f64>,
    /// `‖x₀ − x⋆‖²`.
    pub initial_dist_sq: Option<f64>,
}

fn need(value: Option<f64>, name: &'static str) -> Result<f64> {
    value.ok_or(Error::MissingConstant(name))
}

impl RateConstants {
    /// Collects whatever the objective and configuration know.
    pub fn for_run(f: &dyn Objective, x0: &Point, config: &RunConfig) -> Self {
        let f_star = f.optimal_value();
        Self {
            lipschitz: f.lipschitz(),
            mu: f.pl_mu(),
            h: Some(config.h0),
            alpha: Some(config.alpha),
            eta_star: Some(config.eta_star),
            f_star,
            initial_gap: f_star.map(|s| f.value(x0) - s),
            initial_dist_sq: f.minimizer().map(|m| (x0 - m).norm_squared()),
        }
    }

    pub fn lipschitz(&self) -> Result<f64> {
        need(self.lipschitz, "L")
    }
    pub fn mu(&self) -> Result<f64> {
        need(self.mu, "mu")
    }
    pub fn h(&self) -> Result<f64> {
        need(self.h, "h")
    }
    pub fn alpha(&self) -> Result<f64> {
        need(self.alpha, "alpha")
    }
    pub fn eta_star(&self) -> Result<f64> {
        need(self.eta_star, "eta_star")
    }
    pub fn f_star(&self) -> Result<f64> {
        need(self.f_star, "f_star")
    }
    pub fn initial_gap(&self) -> Result<f64> {
        need(self.initial_gap, "f(x0) - f_star")
    }
    pub fn initial_dist_sq(&self) -> Result<f64> {
        need(self.initial_dist_sq, "|x0 - x_star|^2")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateEnvelope {
    pub kind: RateKind,
    pub constants: RateConstants,
}

impl RateEnvelope {
    pub fn new(kind: RateKind, constants: RateConstants) -> Self {
        Self { kind, constants }
    }

    pub fn value(&self, k: usize) -> Result<f64> {
        envelope_value(self, k)
    }
}

/// `κ = L/μ`.
pub fn kappa(lipschitz: f64, mu: f64) -> f64 {
    lipschitz / mu
}

/// `h_LB = 2(α − η*)/(η* L)`.
pub fn h_lb(alpha: f64, eta_star: f64, lipschitz: f64) -> f64 {
    2.0 * (alpha - eta_star) / (eta_star * lipschitz)
}

/// `h_UB = 1/(2μη*²)`.
pub fn h_ub(mu: f64, eta_star: f64) -> f64 {
    1.0 / (2.0 * mu * eta_star * eta_star)
}

/// `((Lh+2)/2)² Δ₀ / h`, the bound on `Σ ‖∇f(x_i)‖²` along exact steps.
pub fn grad_sum_bound(lipschitz: f64, h: f64, initial_gap: f64) -> f64 {
    let c = (lipschitz * h + 2.0) / 2.0;
    c * c * initial_gap / h
}

/// Right-hand side of the envelope at iteration `k`.
pub fn envelope_value(env: &RateEnvelope, k: usize) -> Result<f64> {
    let c = &env.constants;
    let kf = k as f64;
    let value = match env.kind {
        RateKind::GradMin => {
            let (l, h) = (c.lipschitz()?, c.h()?);
            (l * h / 2.0 + 1.0) * (c.initial_gap()?.max(0.0) / ((kf + 1.0) * h)).sqrt()
        }
        RateKind::BtGrad => {
            let (l, h, a) = (c.lipschitz()?, c.h()?, c.alpha()?);
            (l * h + 2.0) / (2.0 * a) * (c.initial_gap()?.max(0.0) / ((kf + 1.0) * h)).sqrt()
        }
        RateKind::Convex1k => {
            let (l, h) = (c.lipschitz()?, c.h()?);
            (l * h + 2.0) / 4.0 * c.initial_dist_sq()? / (kf * h)
        }
        RateKind::PlExp => {
            let (l, h, mu) = (c.lipschitz()?, c.h()?, c.mu()?);
            let d = l * h + 2.0;
            (-8.0 * mu * kf * h / (d * d)).exp() * c.initial_gap()?
        }
        RateKind::BtPl => {
            let (l, h, mu, a) = (c.lipschitz()?, c.h()?, c.mu()?, c.alpha()?);
            let d = l * h + 2.0;
            (-8.0 * a * a * mu * kf * h / (d * d)).exp() * c.initial_gap()?
        }
        RateKind::AdConvex => {
            let (l, a, e) = (c.lipschitz()?, c.alpha()?, c.eta_star()?);
            l / (4.0 * (a - e)) * c.initial_dist_sq()? / kf
        }
        RateKind::AdPl => {
            let (l, mu, a, e) = (c.lipschitz()?, c.mu()?, c.alpha()?, c.eta_star()?);
            let kap = kappa(l, mu);
            let e2 = e * e;
            (-16.0 * a * (a - e) * e2 * kf / (kap * (kap + 4.0 * e2))).exp() * c.initial_gap()?
        }
    };
    Ok(value)
}

/// Envelopes whose hypotheses are met by `method` on `f` with `config`.
/// Kinds that need an unknown constant are left out.
pub fn applicable_kinds(method: Method, f: &dyn Objective, config: &RunConfig) -> Vec<RateKind> {
    let Some(l) = f.lipschitz() else {
        return Vec::new();
    };
    let has_gap = f.optimal_value().is_some();
    let has_min = has_gap && f.minimizer().is_some();
    let convex = f.is_convex();
    let mu = f.pl_mu();
    let h = config.h0;
    let mut kinds = Vec::new();
    match method {
        Method::ExactLm => {
            if has_gap {
                kinds.push(RateKind::GradMin);
            }
            if convex && has_min && h <= 2.0 / l {
                kinds.push(RateKind::Convex1k);
            }
            if has_gap && mu.is_some() {
                kinds.push(RateKind::PlExp);
            }
        }
        Method::Backtracking => {
            if has_gap {
                kinds.push(RateKind::BtGrad);
            }
            if has_gap && mu.is_some() {
                kinds.push(RateKind::BtPl);
            }
        }
        Method::Adaptive => {
            let (a, e) = (config.alpha, config.eta_star);
            if !config.adaptive_hypotheses_hold() || h < h_lb(a, e, l) {
                return kinds;
            }
            if convex && has_min {
                kinds.push(RateKind::AdConvex);
            }
            if let (Some(mu), true) = (mu, has_gap) {
                if h <= h_ub(mu, e) {
                    kinds.push(RateKind::AdPl);
                }
            }
        }
        Method::FixedGd | Method::Armijo => {}
    }
    kinds
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificationReport {
    pub kind: RateKind,
    pub constants: RateConstants,
    /// Number of iterations compared against the envelope.
    pub checked: usize,
    /// Iterations whose observed value exceeded the envelope.
    pub violations: Vec<usize>,
    pub first_violation: Option<usize>,
    /// Largest observed/envelope ratio.
    pub worst_ratio: f64,
    pub worst_k: Option<usize>,
}

impl CertificationReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Compares every iterate of `traj` with `env`.
///
/// Gap kinds compare `f(x_k) − f⋆` for `k ≥ 1`; gradient kinds compare
/// `min_{i≤k} ‖∇f(x_i)‖` for `k ≥ 0`. An observation passes when it is at
/// most `bound·(1 + 1e-9)` plus a rounding floor proportional to `|f⋆|`.
pub fn certify(traj: &Trajectory, env: &RateEnvelope) -> Result<CertificationReport> {
    let c = &env.constants;
    let f_star = c.f_star()?;
    let floor = if env.kind.is_gradient_bound() {
        0.0
    } else {
        16.0 * f64::EPSILON * (1.0 + f_star.abs())
    };
    // Fail early on missing constants even for an empty trajectory.
    envelope_value(env, 1)?;

    let mut report = CertificationReport {
        kind: env.kind,
        constants: *c,
        checked: 0,
        violations: Vec::new(),
        first_violation: None,
        worst_ratio: 0.0,
        worst_k: None,
    };
    let mut min_grad = f64::INFINITY;
    for r in &traj.records {
        min_grad = min_grad.min(r.grad_norm);
        let observed = if env.kind.is_gradient_bound() {
            min_grad
        } else if r.k == 0 {
            continue;
        } else {
            r.f - f_star
        };
        let bound = envelope_value(env, r.k)?;
        report.checked += 1;
        let ratio = if bound > 0.0 {
            observed / bound
        } else if observed > 0.0 {
            f64::INFINITY
        } else {
            0.0
        };
        if ratio > report.worst_ratio || report.worst_k.is_none() {
            report.worst_ratio = ratio;
            report.worst_k = Some(r.k);
        }
        let ok = observed.is_finite() && observed <= bound * (1.0 + CERTIFY_SLACK) + floor;
        if !ok {
            report.violations.push(r.k);
        }
    }
    report.first_violation = report.violations.first().copied();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constants() -> RateConstants {
        RateConstants {
            lipschitz: Some(8.0),
            mu: Some(1.0 / 32.0),
            h: Some(0.25),
            alpha: Some(0.8),
            eta_star: Some(0.5),
            f_star: Some(0.0),
            initial_gap: Some(1.0),
            initial_dist_sq: Some(4.0),
        }
    }

    #[test]
    fn pl_exp_hand_value() {
        let env = RateEnvelope::new(RateKind::PlExp, constants());
        let v = env.value(1).unwrap();
        assert!((v - (-1.0_f64 / 256.0).exp()).abs() < 1e-15);
        assert!((v - 0.996101).abs() < 1e-6);
    }

    #[test]
    fn convex_1k_hand_value() {
        let c = RateConstants {
            lipschitz: Some(1.0),
            h: Some(2.0),
            initial_dist_sq: Some(4.0),
            ..RateConstants::default()
        };
        let v = RateEnvelope::new(RateKind::Convex1k, c).value(10).unwrap();
        assert!((v - 0.2).abs() < 1e-15);
    }

    #[test]
    fn envelopes_decrease_and_vanish() {
        for kind in RateKind::ALL {
            let env = RateEnvelope::new(kind, constants());
            let mut last = f64::INFINITY;
            for k in 1..200 {
                let v = env.value(k).unwrap();
                assert!(v < last, "{kind:?} at {k}");
                last = v;
            }
            assert!(env.value(1 << 40).unwrap() < 1e-3 * env.value(1).unwrap(), "{kind:?}");
        }
    }

    #[test]
    fn h_lb_identity() {
        for &(a, e, l) in &[(0.8, 0.5, 1.0), (0.9, 0.3, 42.0), (0.6, 0.55, 1e-3)] {
            let lhs = h_lb(a, e, l) * l * e;
            assert!((lhs - 2.0 * (a - e)).abs() < 1e-14);
        }
        assert!((h_lb(0.8, 0.5, 1.0) - 1.2).abs() < 1e-15);
        assert!((h_ub(1.0 / 32.0, 0.5) - 64.0).abs() < 1e-12);
    }

    #[test]
    fn missing_constant_is_reported() {
        let c = RateConstants {
            mu: None,
            ..constants()
        };
        let err = RateEnvelope::new(RateKind::BtPl, c).value(3).unwrap_err();
        assert!(matches!(err, Error::MissingConstant("mu")));
    }

    #[test]
    fn grad_sum_bound_matches_square_of_grad_min() {
        let c = constants();
        let gm = RateEnvelope::new(RateKind::GradMin, c).value(0).unwrap();
        let s = grad_sum_bound(8.0, 0.25, 1.0);
        assert!((gm * gm - s).abs() < 1e-12);
    }
}
