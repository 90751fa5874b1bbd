//! The scalar multiplier equation `F_h(η; x_k) = 0` and its root brackets.
//!
//! Three variants are supported:
//!
//! * **special** (`Q = 0`, `D = I`):
//!   `F(η) = f(x − ηh∇f) − f(x) + hη²‖∇f‖²`,
//! * **general D** (`Q = 0`):
//!   `F(η) = f(x − ηhD∇f) − f(x) + hη²⟨∇f, D∇f⟩`,
//! * **general** splitting `V = ½⟨x, Qx⟩ + E`:
//!   `F(η) = E(p − hηq) − E(x) − η⟨∇E(x*), p − hηq − x⟩`,
//!   with `p = (I + h/2 DQ)⁻¹(I − h/2 DQ)x` and `q = (I + h/2 DQ)⁻¹D∇E(x*)`.
//!
//! The first two always have the trivial root `η = 0`; the solvers here
//! only ever return the nontrivial root, bracketed from below by
//! `η_LB = (1 + Lh/2)⁻¹`.

use std::sync::Arc;

use nalgebra::{DMatrix, Dyn, LU};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objective::{Objective, Point};

/// Default residual tolerance, relative to `1 + |f(x_k)|`.
pub const DEFAULT_TOL: f64 = 1e-12;
/// Largest multiplier the upward bracket expansion will try.
pub const EXPANSION_CAP: f64 = 1e6;
/// Default perturbation size for the splitting fallback.
pub const DEFAULT_PERTURBATION: f64 = 1e-3;

const BISECTION_SWITCH: f64 = 1e-4;
const WIDTH_TOL: f64 = 1e-12;
const MAX_ITER: usize = 300;

/// Decomposition `V(x) = ½⟨x, Qx⟩ + E(x)` together with the mobility `D`.
#[derive(Clone)]
pub struct Splitting {
    pub q: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub energy: Arc<dyn Objective>,
    /// Lipschitz constant of `∇E`, if known.
    pub energy_lipschitz: Option<f64>,
}

impl Splitting {
    /// Splitting with `D = I`.
    pub fn new(q: DMatrix<f64>, energy: Arc<dyn Objective>) -> Result<Self> {
        let n = energy.dim();
        if q.nrows() != n || q.ncols() != n {
            return Err(Error::Config(format!(
                "Q must be {n}x{n}, got {}x{}",
                q.nrows(),
                q.ncols()
            )));
        }
        let asym = (&q - q.transpose()).abs().max();
        if asym > 1e-12 * (1.0 + q.abs().max()) {
            return Err(Error::Config(format!("Q is not symmetric (|Q − Qᵀ| = {asym:e})")));
        }
        let energy_lipschitz = energy.lipschitz();
        Ok(Self {
            q,
            d: DMatrix::identity(n, n),
            energy,
            energy_lipschitz,
        })
    }

    /// Replaces the mobility matrix; `D` must be positive definite.
    pub fn with_mobility(mut self, d: DMatrix<f64>) -> Result<Self> {
        let n = self.dim();
        if d.nrows() != n || d.ncols() != n {
            return Err(Error::Config(format!("D must be {n}x{n}")));
        }
        if rayleigh_min(&d) <= 0.0 {
            return Err(Error::Config("D is not positive definite".into()));
        }
        self.d = d;
        Ok(self)
    }

    pub fn with_energy_lipschitz(mut self, l: f64) -> Self {
        self.energy_lipschitz = Some(l);
        self
    }

    pub fn dim(&self) -> usize {
        self.energy.dim()
    }

    /// `⟨∇E(x), D∇V(x)⟩`.
    pub fn coupling(&self, x: &Point) -> f64 {
        let ge = self.energy.gradient(x);
        let gv = &self.q * x + &ge;
        ge.dot(&(&self.d * gv))
    }

    /// Whether the small-step condition `h(rqmin(Q) − L_E) > −2 rqmin(D⁻¹)`
    /// holds. `None` when `L_E` is unknown.
    pub fn step_condition(&self, h: f64) -> Option<bool> {
        let le = self.energy_lipschitz?;
        let dinv = self.d.clone().try_inverse()?;
        Some(h * (rayleigh_min(&self.q) - le) > -2.0 * rayleigh_min(&dinv))
    }
}

impl Objective for Splitting {
    fn dim(&self) -> usize {
        self.energy.dim()
    }

    fn value(&self, x: &Point) -> f64 {
        0.5 * x.dot(&(&self.q * x)) + self.energy.value(x)
    }

    fn gradient(&self, x: &Point) -> Point {
        &self.q * x + self.energy.gradient(x)
    }
}

/// `E_ε(x) = E(x) + (ε/2)⟨x, Qx⟩`.
struct PerturbedEnergy {
    inner: Arc<dyn Objective>,
    q: DMatrix<f64>,
    epsilon: f64,
}

impl Objective for PerturbedEnergy {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn value(&self, x: &Point) -> f64 {
        self.inner.value(x) + 0.5 * self.epsilon * x.dot(&(&self.q * x))
    }

    fn gradient(&self, x: &Point) -> Point {
        self.inner.gradient(x) + &self.q * x * self.epsilon
    }
}

/// Moves the fraction `ε` of the quadratic part into the energy:
/// `Q_ε = (1 − ε)Q`, `E_ε = E + (ε/2)⟨x, Qx⟩`. `V` is unchanged.
pub fn perturb_splitting(splitting: &Splitting, epsilon: f64) -> Result<Splitting> {
    if epsilon == 0.0 || !epsilon.is_finite() {
        return Err(Error::Config("perturbation must be finite and nonzero".into()));
    }
    let q_norm = if splitting.q.iter().all(|v| *v == 0.0) {
        0.0
    } else {
        splitting.q.clone().symmetric_eigen().eigenvalues.abs().max()
    };
    Ok(Splitting {
        q: &splitting.q * (1.0 - epsilon),
        d: splitting.d.clone(),
        energy: Arc::new(PerturbedEnergy {
            inner: splitting.energy.clone(),
            q: splitting.q.clone(),
            epsilon,
        }),
        energy_lipschitz: splitting
            .energy_lipschitz
            .map(|l| l + epsilon.abs() * q_norm),
    })
}

/// Minimum Rayleigh quotient `min_{‖x‖=1} ⟨x, Ax⟩`, i.e. the smallest
/// eigenvalue of the symmetric part of `A`.
pub fn rayleigh_min(a: &DMatrix<f64>) -> f64 {
    assert!(a.is_square(), "rayleigh_min needs a square matrix");
    let sym = (a + a.transpose()) * 0.5;
    sym.symmetric_eigen().eigenvalues.min()
}

/// LU factorization of `I + (h/2)DQ` reused for every `(p_k, q_k)` pair at a
/// fixed step size.
pub struct MidpointSolver {
    h: f64,
    lu: LU<f64, Dyn, Dyn>,
    explicit_part: DMatrix<f64>,
    d: DMatrix<f64>,
}

impl MidpointSolver {
    pub fn new(splitting: &Splitting, h: f64) -> Result<Self> {
        let n = splitting.dim();
        let dq = &splitting.d * &splitting.q * (0.5 * h);
        let identity = DMatrix::<f64>::identity(n, n);
        let implicit = &identity + &dq;
        let scale = implicit.abs().max().max(1.0);
        let lu = implicit.lu();
        let u = lu.u();
        let min_pivot = u.diagonal().abs().min();
        if !(min_pivot > 1e-13 * scale) {
            return Err(Error::SingularMatrix { h });
        }
        Ok(Self {
            h,
            lu,
            explicit_part: identity - dq,
            d: splitting.d.clone(),
        })
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    /// Returns `(p, q)` for the current point and the energy gradient at the
    /// midpoint approximation.
    pub fn pq(&self, x: &Point, energy_grad: &Point) -> Result<(Point, Point)> {
        let n = x.len();
        let mut rhs = DMatrix::zeros(n, 2);
        rhs.set_column(0, &(&self.explicit_part * x));
        rhs.set_column(1, &(&self.d * energy_grad));
        let sol = self
            .lu
            .solve(&rhs)
            .ok_or(Error::SingularMatrix { h: self.h })?;
        if sol.iter().any(|v| !v.is_finite()) {
            return Err(Error::SingularMatrix { h: self.h });
        }
        Ok((sol.column(0).into_owned(), sol.column(1).into_owned()))
    }
}

/// `(p_k, q_k)` for the splitting at `x_k` with `∇E` taken at `x_k`.
pub fn compute_pq(splitting: &Splitting, x_k: &Point, h: f64) -> Result<(Point, Point)> {
    let solver = MidpointSolver::new(splitting, h)?;
    solver.pq(x_k, &splitting.energy.gradient(x_k))
}

/// Frozen per-step data of the special variant.
pub struct SpecialEquation<'a> {
    f: &'a dyn Objective,
    x: &'a Point,
    fx: f64,
    grad: Point,
    grad_sq: f64,
    /// `⟨∇f, ∇²f ∇f⟩` for objectives with constant Hessian.
    curvature: Option<f64>,
    h: f64,
}

/// Frozen per-step data of the general-`D` variant.
pub struct GeneralDEquation<'a> {
    f: &'a dyn Objective,
    x: &'a Point,
    fx: f64,
    grad: Point,
    d_grad: Point,
    grad_d_grad: f64,
    curvature: Option<f64>,
    h: f64,
}

/// Frozen per-step data of the general splitting variant.
pub struct GeneralEquation<'a> {
    splitting: &'a Splitting,
    x: &'a Point,
    ex: f64,
    /// `∇E` at the midpoint approximation.
    grad_e: Point,
    p: Point,
    q: Point,
    h: f64,
}

/// `F_h(·; x_k)` in one of its three forms.
pub enum MultiplierEquation<'a> {
    Special(SpecialEquation<'a>),
    GeneralD(GeneralDEquation<'a>),
    General(GeneralEquation<'a>),
}

impl<'a> MultiplierEquation<'a> {
    pub fn special(f: &'a dyn Objective, x: &'a Point, h: f64) -> Self {
        let fx = f.value(x);
        let grad = f.gradient(x);
        Self::special_with(f, x, fx, grad, h)
    }

    /// Special variant reusing an already computed value and gradient.
    pub fn special_with(f: &'a dyn Objective, x: &'a Point, fx: f64, grad: Point, h: f64) -> Self {
        let grad_sq = grad.norm_squared();
        let curvature = f.curvature_along(&grad);
        Self::Special(SpecialEquation {
            f,
            x,
            fx,
            grad,
            grad_sq,
            curvature,
            h,
        })
    }

    pub fn general_d(f: &'a dyn Objective, d: &DMatrix<f64>, x: &'a Point, h: f64) -> Self {
        let fx = f.value(x);
        let grad = f.gradient(x);
        let d_grad = d * &grad;
        let grad_d_grad = grad.dot(&d_grad);
        let curvature = f.curvature_along(&d_grad);
        Self::GeneralD(GeneralDEquation {
            f,
            x,
            fx,
            grad,
            d_grad,
            grad_d_grad,
            curvature,
            h,
        })
    }

    /// General variant. `grad_e` is `∇E` at the midpoint approximation
    /// (`∇E(x_k)` for the analyzed scheme) and `(p, q)` must come from the
    /// same `(x_k, h)`.
    pub fn general(
        splitting: &'a Splitting,
        x: &'a Point,
        grad_e: Point,
        p: Point,
        q: Point,
        h: f64,
    ) -> Self {
        let ex = splitting.energy.value(x);
        Self::General(GeneralEquation {
            splitting,
            x,
            ex,
            grad_e,
            p,
            q,
            h,
        })
    }

    pub fn h(&self) -> f64 {
        match self {
            Self::Special(e) => e.h,
            Self::GeneralD(e) => e.h,
            Self::General(e) => e.h,
        }
    }

    /// Point reached with multiplier `eta`.
    pub fn next_point(&self, eta: f64) -> Point {
        match self {
            Self::Special(e) => e.x - &e.grad * (eta * e.h),
            Self::GeneralD(e) => e.x - &e.d_grad * (eta * e.h),
            Self::General(e) => &e.p - &e.q * (eta * e.h),
        }
    }

    pub fn eval(&self, eta: f64) -> f64 {
        match self {
            Self::Special(e) => {
                let t = eta * e.h;
                let change = match e.curvature {
                    Some(c) => -t * e.grad_sq + 0.5 * t * t * c,
                    None => e.f.value_change(e.x, e.fx, &e.grad, &(&e.grad * -t)),
                };
                change + e.h * eta * eta * e.grad_sq
            }
            Self::GeneralD(e) => {
                let t = eta * e.h;
                let change = match e.curvature {
                    Some(c) => -t * e.grad_d_grad + 0.5 * t * t * c,
                    None => e.f.value_change(e.x, e.fx, &e.grad, &(&e.d_grad * -t)),
                };
                change + e.h * eta * eta * e.grad_d_grad
            }
            Self::General(e) => {
                let y = &e.p - &e.q * (eta * e.h);
                let displacement = &y - e.x;
                e.splitting.energy.value(&y) - e.ex - eta * e.grad_e.dot(&displacement)
            }
        }
    }

    /// `dF/dη`.
    pub fn derivative(&self, eta: f64) -> f64 {
        match self {
            Self::Special(e) => {
                let slope = match e.curvature {
                    Some(c) => -e.h * e.grad_sq + e.h * e.h * eta * c,
                    None => {
                        let y = e.x - &e.grad * (eta * e.h);
                        -e.h * e.f.gradient(&y).dot(&e.grad)
                    }
                };
                slope + 2.0 * e.h * eta * e.grad_sq
            }
            Self::GeneralD(e) => {
                let slope = match e.curvature {
                    Some(c) => -e.h * e.grad_d_grad + e.h * e.h * eta * c,
                    None => {
                        let y = e.x - &e.d_grad * (eta * e.h);
                        -e.h * e.f.gradient(&y).dot(&e.d_grad)
                    }
                };
                slope + 2.0 * e.h * eta * e.grad_d_grad
            }
            Self::General(e) => {
                let y = &e.p - &e.q * (eta * e.h);
                let displacement = &y - e.x;
                let gq = e.grad_e.dot(&e.q);
                -e.h * e.splitting.energy.gradient(&y).dot(&e.q) - e.grad_e.dot(&displacement)
                    + eta * e.h * gq
            }
        }
    }

    /// Magnitude against which residuals are judged: `1 + |f(x_k)|`.
    pub fn scale(&self) -> f64 {
        1.0 + match self {
            Self::Special(e) => e.fx.abs(),
            Self::GeneralD(e) => e.fx.abs(),
            Self::General(e) => e.ex.abs(),
        }
    }

    /// True when `F` does not depend on `η` (zero search direction).
    pub fn is_flat(&self) -> bool {
        match self {
            Self::Special(e) => e.grad_sq == 0.0,
            Self::GeneralD(e) => e.grad_d_grad == 0.0,
            Self::General(e) => e.q.iter().all(|v| *v == 0.0) && e.grad_e.iter().all(|v| *v == 0.0),
        }
    }
}

/// `F_h(η; x_k)` for `Q = 0`, `D = I`.
pub fn eval_f_special(f: &dyn Objective, x_k: &Point, h: f64, eta: f64) -> f64 {
    MultiplierEquation::special(f, x_k, h).eval(eta)
}

/// `F_h(η; x_k)` for `Q = 0` and a general mobility `D`.
pub fn eval_f_general_d(f: &dyn Objective, d: &DMatrix<f64>, x_k: &Point, h: f64, eta: f64) -> f64 {
    MultiplierEquation::general_d(f, d, x_k, h).eval(eta)
}

/// `F_h(η; x_k)` for a general splitting, given `(p_k, q_k)` from [`compute_pq`].
pub fn eval_f_general(
    splitting: &Splitting,
    x_k: &Point,
    h: f64,
    eta: f64,
    p_k: &Point,
    q_k: &Point,
) -> f64 {
    let grad_e = splitting.energy.gradient(x_k);
    MultiplierEquation::general(splitting, x_k, grad_e, p_k.clone(), q_k.clone(), h).eval(eta)
}

/// Function class selecting which upper bound on the multiplier applies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "class")]
pub enum FunctionClass {
    /// `L`-smooth only; the bound needs `h ≤ 2/L`.
    Smooth,
    Convex,
    /// Polyak–Łojasiewicz with parameter `mu`.
    Pl { mu: f64 },
}

/// Where a bracket endpoint came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundSource {
    /// `(1 + Lh/2)⁻¹`.
    SmoothLower,
    /// `(1 − Lh/2)⁻¹`, valid for `h ≤ 2/L`.
    SmoothUpper,
    /// `1`, valid for convex objectives.
    ConvexUpper,
    /// `(2μh)^{-1/2}`.
    PlUpper,
    /// Found by halving from 1 when `L` is unknown.
    Halving,
    /// Found by doubling until `F ≥ 0`.
    Expansion,
    /// Supplied by the caller.
    Given,
}

/// Interval `[lower, upper]` with `F(lower) ≤ 0 ≤ F(upper)`;
/// `upper = +∞` means the upper end must be found by expansion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EtaBracket {
    pub lower: f64,
    pub upper: f64,
    pub lower_source: BoundSource,
    pub upper_source: BoundSource,
}

impl EtaBracket {
    pub fn new(lower: f64, upper: f64) -> Self {
        Self {
            lower,
            upper,
            lower_source: BoundSource::Given,
            upper_source: BoundSource::Given,
        }
    }

    /// Tightest bracket the known constants of `f` justify at step `h`.
    /// Returns `None` when `L` is unknown.
    pub fn for_objective(f: &dyn Objective, h: f64) -> Option<Self> {
        let l = f.lipschitz()?;
        let mut bracket = Self {
            lower: eta_lower_bound(l, h),
            upper: f64::INFINITY,
            lower_source: BoundSource::SmoothLower,
            upper_source: BoundSource::Expansion,
        };
        let mut tighten = |value: f64, source| {
            if value < bracket.upper {
                bracket.upper = value;
                bracket.upper_source = source;
            }
        };
        tighten(eta_upper_bound(FunctionClass::Smooth, l, h), BoundSource::SmoothUpper);
        if f.is_convex() {
            tighten(eta_upper_bound(FunctionClass::Convex, l, h), BoundSource::ConvexUpper);
        }
        if let Some(mu) = f.pl_mu() {
            tighten(eta_upper_bound(FunctionClass::Pl { mu }, l, h), BoundSource::PlUpper);
        }
        Some(bracket)
    }

    /// Bracket for the general-`D` variant.
    pub fn for_objective_with_mobility(f: &dyn Objective, d: &DMatrix<f64>, h: f64) -> Option<Self> {
        let l = f.lipschitz()?;
        let scales = MobilityScales::of(d)?;
        let mut bracket = Self {
            lower: eta_lower_bound_d(l, h, scales.rqmin_dinv),
            upper: f64::INFINITY,
            lower_source: BoundSource::SmoothLower,
            upper_source: BoundSource::Expansion,
        };
        let mut tighten = |value: f64, source| {
            if value < bracket.upper {
                bracket.upper = value;
                bracket.upper_source = source;
            }
        };
        tighten(eta_upper_bound_d(FunctionClass::Smooth, l, h, scales), BoundSource::SmoothUpper);
        if f.is_convex() {
            tighten(eta_upper_bound_d(FunctionClass::Convex, l, h, scales), BoundSource::ConvexUpper);
        }
        if let Some(mu) = f.pl_mu() {
            tighten(eta_upper_bound_d(FunctionClass::Pl { mu }, l, h, scales), BoundSource::PlUpper);
        }
        Some(bracket)
    }
}

/// `η_LB = (1 + Lh/2)⁻¹`.
pub fn eta_lower_bound(l: f64, h: f64) -> f64 {
    1.0 / (1.0 + 0.5 * l * h)
}

/// `(1 + Lh / (2 rqmin(D⁻¹)))⁻¹`.
pub fn eta_lower_bound_d(l: f64, h: f64, rqmin_dinv: f64) -> f64 {
    1.0 / (1.0 + 0.5 * l * h / rqmin_dinv)
}

/// Class-specific upper bound on the nontrivial root; `+∞` when none applies.
pub fn eta_upper_bound(class: FunctionClass, l: f64, h: f64) -> f64 {
    match class {
        FunctionClass::Smooth if l * h < 2.0 => 1.0 / (1.0 - 0.5 * l * h),
        FunctionClass::Smooth => f64::INFINITY,
        FunctionClass::Convex => 1.0,
        FunctionClass::Pl { mu } if mu > 0.0 => (2.0 * mu * h).powf(-0.5),
        FunctionClass::Pl { .. } => f64::INFINITY,
    }
}

/// Rayleigh-quotient minima of `D` and `D⁻¹`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MobilityScales {
    pub rqmin_d: f64,
    pub rqmin_dinv: f64,
}

impl MobilityScales {
    pub fn of(d: &DMatrix<f64>) -> Option<Self> {
        let dinv = d.clone().try_inverse()?;
        Some(Self {
            rqmin_d: rayleigh_min(d),
            rqmin_dinv: rayleigh_min(&dinv),
        })
    }
}

/// Upper bounds for the general-`D` variant.
///
/// The smooth bound `(1 − Lh/(2 rqmin(D⁻¹)))⁻¹` needs `h ≤ 2 rqmin(D⁻¹)/L`.
/// The Polyak–Łojasiewicz bound is `(2μh · rqmin(D))^{-1/2}`: at that
/// multiplier `hη²⟨∇f, D∇f⟩ ≥ ‖∇f‖²/(2μ)`, which is what makes `F ≥ 0`.
pub fn eta_upper_bound_d(class: FunctionClass, l: f64, h: f64, scales: MobilityScales) -> f64 {
    match class {
        FunctionClass::Smooth => {
            let t = 0.5 * l * h / scales.rqmin_dinv;
            if t < 1.0 {
                1.0 / (1.0 - t)
            } else {
                f64::INFINITY
            }
        }
        FunctionClass::Convex => 1.0,
        FunctionClass::Pl { mu } if mu > 0.0 => (2.0 * mu * h * scales.rqmin_d).powf(-0.5),
        FunctionClass::Pl { .. } => f64::INFINITY,
    }
}

/// Finds the nontrivial root of `F` inside `bracket`.
///
/// `F(lower)` must be `≤ 0` and a finite `upper` must have `F(upper) ≥ 0`,
/// both up to `tol · (1 + |f(x_k)|)`. An infinite upper end is located by
/// doubling from `max(1, 2·lower)` up to [`EXPANSION_CAP`].
pub fn solve_eta(eq: &MultiplierEquation<'_>, bracket: EtaBracket, tol: f64) -> Result<f64> {
    if eq.is_flat() {
        return Err(Error::Degenerate);
    }
    let slack = tol * eq.scale();
    let lower = bracket.lower;
    let f_lower = eq.eval(lower);
    if f_lower > slack {
        return Err(Error::InvalidBracket {
            eta: lower,
            value: f_lower,
        });
    }
    if f_lower >= 0.0 {
        return Ok(lower);
    }

    let (upper, f_upper) = if bracket.upper.is_finite() {
        let fu = eq.eval(bracket.upper);
        if fu < -slack {
            return Err(Error::InvalidBracket {
                eta: bracket.upper,
                value: fu,
            });
        }
        (bracket.upper, fu)
    } else {
        expand_upward(eq, (2.0 * lower).max(1.0), 2.0)?
    };
    if f_upper <= 0.0 {
        return Ok(upper);
    }
    if upper <= lower {
        return Ok(lower);
    }
    refine_root(eq, lower, f_lower, upper, f_upper, tol)
}

/// Lower end for the special variant when `L` is unknown: halve from 1
/// until `F ≤ 0`.
pub fn halving_lower(eq: &MultiplierEquation<'_>) -> Result<f64> {
    let mut eta = 1.0;
    for _ in 0..200 {
        if eq.eval(eta) <= 0.0 {
            return Ok(eta);
        }
        eta *= 0.5;
    }
    Err(Error::Degenerate)
}

fn expand_upward(eq: &MultiplierEquation<'_>, start: f64, factor: f64) -> Result<(f64, f64)> {
    let mut eta = start;
    loop {
        let value = eq.eval(eta);
        if value >= 0.0 {
            return Ok((eta, value));
        }
        if eta >= EXPANSION_CAP {
            return Err(Error::NoBracket { cap: EXPANSION_CAP });
        }
        eta = (eta * factor).min(EXPANSION_CAP);
    }
}

/// Bisection down to a small bracket followed by a safeguarded Newton polish.
/// Works for either sign orientation of the end values.
fn refine_root(
    eq: &MultiplierEquation<'_>,
    mut a: f64,
    mut fa: f64,
    mut b: f64,
    mut fb: f64,
    tol: f64,
) -> Result<f64> {
    debug_assert!(fa.signum() != fb.signum());
    let width_tol = |a: f64, b: f64| WIDTH_TOL * a.abs().max(b.abs()).max(1.0);
    let switch = |a: f64, b: f64| BISECTION_SWITCH * a.abs().max(b.abs()).max(1.0);

    let mut iter = 0;
    while (b - a).abs() > switch(a, b) && iter < MAX_ITER {
        let m = 0.5 * (a + b);
        let fm = eq.eval(m);
        if fm == 0.0 {
            return Ok(m);
        }
        if fm.signum() == fa.signum() {
            a = m;
            fa = fm;
        } else {
            b = m;
            fb = fm;
        }
        iter += 1;
    }

    let residual_tol = tol * eq.scale();
    let (mut eta, mut f_eta) = if fa.abs() <= fb.abs() { (a, fa) } else { (b, fb) };
    while (b - a).abs() > width_tol(a, b) && iter < MAX_ITER {
        iter += 1;
        let slope = eq.derivative(eta);
        let newton = eta - f_eta / slope;
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let candidate = if slope.is_finite() && slope != 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (a + b)
        };
        let f_candidate = eq.eval(candidate);
        if f_candidate == 0.0 {
            return Ok(candidate);
        }
        if f_candidate.signum() == fa.signum() {
            a = candidate;
            fa = f_candidate;
        } else {
            b = candidate;
        }
        let converged = (candidate - eta).abs() <= width_tol(candidate, candidate);
        if f_candidate.abs() <= f_eta.abs() {
            eta = candidate;
            f_eta = f_candidate;
        }
        if converged && f_eta.abs() <= residual_tol {
            break;
        }
    }
    Ok(eta)
}

/// Root of the general variant closest to `η = 1`.
///
/// For small `h` the equation behaves like `h c (η − 1)(η − r)` with
/// `c = ⟨∇E, D∇E⟩` and `r = −⟨∇E, DQx⟩ / c`, negative strictly between its
/// two roots. The search locates a point of that negative region, walks
/// outward in both directions to the sign changes and keeps the root
/// nearer to 1.
pub fn solve_eta_near_one(eq: &MultiplierEquation<'_>, tol: f64) -> Result<f64> {
    let MultiplierEquation::General(data) = eq else {
        return Err(Error::Config("solve_eta_near_one expects the general variant".into()));
    };
    if eq.is_flat() {
        let constant = eq.eval(1.0);
        return if constant.abs() <= tol * eq.scale() {
            Err(Error::Degenerate)
        } else {
            Err(Error::NoBracket { cap: EXPANSION_CAP })
        };
    }

    let s = data.splitting;
    let d_grad = &s.d * &data.grad_e;
    let c = data.grad_e.dot(&d_grad);
    let other = if c > 0.0 {
        let dqx = &s.d * (&s.q * data.x);
        -data.grad_e.dot(&dqx) / c
    } else {
        0.0
    };
    let other = if other.is_finite() { other } else { 0.0 };
    let lo = other.min(1.0);
    let hi = other.max(1.0);
    let pad = 0.25 * (hi - lo) + 0.25;
    let (start, end) = (lo - pad, hi + pad);

    const SAMPLES: usize = 64;
    let mut best = (f64::NAN, f64::INFINITY);
    for i in 0..=SAMPLES {
        let eta = start + (end - start) * (i as f64) / (SAMPLES as f64);
        let v = eq.eval(eta);
        if v < best.1 {
            best = (eta, v);
        }
    }
    let (neg_eta, neg_val) = best;
    let slack = tol * eq.scale();
    if !(neg_val < 0.0) {
        // Touching zero without crossing: accept a sample that already
        // satisfies the equation, preferring the one nearest 1.
        if neg_val.abs() <= slack && (neg_eta - 1.0).abs() <= pad {
            return Ok(neg_eta);
        }
        return Err(Error::NoBracket { cap: EXPANSION_CAP });
    }

    let width = (hi - lo).max(1.0);
    let upper_root = walk_to_sign_change(eq, neg_eta, neg_val, width, 1.0)
        .and_then(|(a, fa, b, fb)| refine_root(eq, a, fa, b, fb, tol));
    let lower_root = walk_to_sign_change(eq, neg_eta, neg_val, width, -1.0)
        .and_then(|(a, fa, b, fb)| refine_root(eq, a, fa, b, fb, tol));
    match (upper_root, lower_root) {
        (Ok(u), Ok(l)) => Ok(if (u - 1.0).abs() <= (l - 1.0).abs() { u } else { l }),
        (Ok(u), Err(_)) => Ok(u),
        (Err(_), Ok(l)) => Ok(l),
        (Err(e), Err(_)) => Err(e),
    }
}

fn walk_to_sign_change(
    eq: &MultiplierEquation<'_>,
    from: f64,
    f_from: f64,
    width: f64,
    direction: f64,
) -> Result<(f64, f64, f64, f64)> {
    let mut step = 0.125 * width;
    let (mut a, mut fa) = (from, f_from);
    loop {
        let b = a + direction * step;
        let fb = eq.eval(b);
        if fb >= 0.0 {
            return Ok((a, fa, b, fb));
        }
        if (b - from).abs() >= EXPANSION_CAP * width {
            return Err(Error::NoBracket { cap: EXPANSION_CAP * width });
        }
        a = b;
        fa = fb;
        step *= 2.0;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::{make_quadratic, FnObjective, QuadraticInstance};

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
    fn special_hand_values() {
        let f = half_square();
        let x = one();
        assert!((eval_f_special(&f, &x, 1.0, 1.0) - 0.5).abs() < 1e-15);
        assert!(eval_f_special(&f, &x, 1.0, 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(eval_f_special(&f, &x, 1.0, 0.0), 0.0);
    }

    #[test]
    fn zero_gradient_makes_f_vanish() {
        let f = half_square();
        let x = Point::zeros(1);
        for eta in [-3.0, 0.0, 0.4, 7.0] {
            assert_eq!(eval_f_special(&f, &x, 0.7, eta), 0.0);
        }
        let eq = MultiplierEquation::special(&f, &x, 1.0);
        assert!(matches!(
            solve_eta(&eq, EtaBracket::new(0.5, 1.0), DEFAULT_TOL),
            Err(Error::Degenerate)
        ));
    }

    #[test]
    fn general_d_hand_values() {
        let f = half_square();
        let d = DMatrix::from_element(1, 1, 2.0);
        let x = one();
        for eta in [0.0, 0.1, 1.0 / 3.0, 0.9, 2.0] {
            let expected = 4.0 * eta * eta - 2.0 * eta;
            assert!((eval_f_general_d(&f, &d, &x, 1.0, eta) - expected).abs() < 1e-14);
        }
        assert_eq!(eval_f_general_d(&f, &d, &x, 1.0, 0.0), 0.0);
    }

    #[test]
    fn general_d_with_identity_matches_special() {
        let inst = make_quadratic(8, 3);
        let id = DMatrix::identity(8, 8);
        for k in 0..20 {
            let x = Point::from_fn(8, |i, _| ((i + k) as f64).sin() * 3.0);
            let h = 0.1 + k as f64 * 0.3;
            let eta = -1.0 + k as f64 * 0.17;
            let a = eval_f_general_d(&inst, &id, &x, h, eta);
            let b = eval_f_special(&inst, &x, h, eta);
            assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn pq_reduces_with_zero_quadratic_part() {
        let inst = Arc::new(make_quadratic(5, 2));
        let s = Splitting::new(DMatrix::zeros(5, 5), inst.clone()).unwrap();
        let x = Point::from_element(5, 0.3);
        let (p, q) = compute_pq(&s, &x, 0.7).unwrap();
        assert!((p - &x).norm() < 1e-15);
        assert!((q - inst.gradient(&x)).norm() < 1e-13);
    }

    #[test]
    fn pq_one_dimensional_h_two() {
        let e = Arc::new(FnObjective::new(1, |x| x[0].powi(4) / 4.0, |x| x.map(|v| v.powi(3))));
        let s = Splitting::new(DMatrix::from_element(1, 1, 1.0), e).unwrap();
        let x = Point::from_element(1, 1.5);
        let (p, q) = compute_pq(&s, &x, 2.0).unwrap();
        assert_eq!(p[0], 0.0);
        assert!((q[0] - 0.5 * 1.5_f64.powi(3)).abs() < 1e-15);
    }

    #[test]
    fn pq_residual() {
        let n = 6;
        let q = DMatrix::from_fn(n, n, |i, j| 1.0 / (1.0 + i as f64 + j as f64));
        let d = DMatrix::from_fn(n, n, |i, j| if i == j { 2.0 } else { 0.1 * (i as f64 - j as f64) });
        let e = Arc::new(FnObjective::new(n, |x| x.map(|v| v.cosh()).sum(), |x| x.map(f64::sinh)));
        let s = Splitting::new(q.clone(), e).unwrap().with_mobility(d.clone()).unwrap();
        let x = Point::from_fn(n, |i, _| i as f64 * 0.2 - 0.5);
        let h = 0.4;
        let (p, qk) = compute_pq(&s, &x, h).unwrap();
        let dq = &d * &q * (0.5 * h);
        let forward = DMatrix::identity(n, n) + &dq;
        let lhs = &forward * &p;
        let rhs = (DMatrix::identity(n, n) - &dq) * &x;
        assert!((lhs - &rhs).norm() <= 1e-10 * (1.0 + rhs.norm()));
        let rhs_q = &d * s.energy.gradient(&x);
        assert!((&forward * qk - &rhs_q).norm() <= 1e-10 * (1.0 + rhs_q.norm()));
    }

    #[test]
    fn singular_midpoint_matrix_is_reported() {
        let e = Arc::new(FnObjective::new(1, |_| 0.0, |x| Point::zeros(x.len())));
        let s = Splitting::new(DMatrix::from_element(1, 1, -1.0), e).unwrap();
        assert!(matches!(compute_pq(&s, &one(), 2.0), Err(Error::SingularMatrix { .. })));
    }

    #[test]
    fn bound_formulas() {
        assert!((eta_lower_bound(1.0, 1.0) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(eta_lower_bound(8.0, 0.25), 0.5);
        assert_eq!(eta_lower_bound_d(3.0, 0.4, 1.0), eta_lower_bound(3.0, 0.4));
        assert_eq!(eta_upper_bound(FunctionClass::Convex, 5.0, 9.0), 1.0);
        assert_eq!(eta_upper_bound(FunctionClass::Smooth, 1.0, 1.0), 2.0);
        assert_eq!(eta_upper_bound(FunctionClass::Smooth, 1.0, 2.5), f64::INFINITY);
        let pl = eta_upper_bound(FunctionClass::Pl { mu: 1.0 / 32.0 }, 8.0, 2.0);
        assert!((pl - 8.0_f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn rayleigh_min_examples() {
        assert!((rayleigh_min(&DMatrix::identity(4, 4)) - 1.0).abs() < 1e-15);
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]);
        assert!(rayleigh_min(&a).abs() < 1e-15);
        let s = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 3.0]);
        let expected = (5.0 - 5.0_f64.sqrt()) / 2.0;
        assert!((rayleigh_min(&s) - expected).abs() < 1e-14);
    }

    #[test]
    fn solve_one_dimensional_root() {
        let f = half_square();
        let x = one();
        let eq = MultiplierEquation::special(&f, &x, 1.0);
        let bracket = EtaBracket::for_objective(&f, 1.0).unwrap();
        assert_eq!(bracket.upper, 0.5_f64.sqrt());
        let eta = solve_eta(&eq, bracket, DEFAULT_TOL).unwrap();
        assert!((eta - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn solve_with_expansion() {
        let f = half_square();
        let x = one();
        let eq = MultiplierEquation::special(&f, &x, 3.0);
        let lower = eta_lower_bound(1.0, 3.0);
        let eta = solve_eta(&eq, EtaBracket::new(lower, f64::INFINITY), DEFAULT_TOL).unwrap();
        // root of η(1 + h/2) = 1
        assert!((eta - 0.4).abs() < 1e-12);
    }

    #[test]
    fn wrong_bracket_is_rejected() {
        let f = half_square();
        let x = one();
        let eq = MultiplierEquation::special(&f, &x, 1.0);
        assert!(matches!(
            solve_eta(&eq, EtaBracket::new(0.9, 2.0), DEFAULT_TOL),
            Err(Error::InvalidBracket { .. })
        ));
    }

    #[test]
    fn perturbation_preserves_value_and_full_transfer() {
        let e: Arc<dyn Objective> =
            Arc::new(FnObjective::new(2, |x| x[0].powi(4) + x[1], |x| Point::from_vec(vec![4.0 * x[0].powi(3), 1.0])));
        let q = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let s = Splitting::new(q, e).unwrap();
        let full = perturb_splitting(&s, 1.0).unwrap();
        assert!(full.q.iter().all(|v| *v == 0.0));
        for eps in [1e-3, -0.4, 1.0, 2.5] {
            let p = perturb_splitting(&s, eps).unwrap();
            for k in 0..10 {
                let x = Point::from_vec(vec![k as f64 * 0.3 - 1.0, 2.0 - k as f64 * 0.1]);
                let (a, b) = (s.value(&x), p.value(&x));
                assert!((a - b).abs() <= 1e-14 * (1.0 + a.abs()));
                assert!((s.gradient(&x) - p.gradient(&x)).norm() <= 1e-13);
            }
        }
        assert!(perturb_splitting(&s, 0.0).is_err());
    }

    #[test]
    fn quadratic_general_root_near_one() {
        // V = ½x² + ¼x⁴ split as Q = 1, E = x⁴/4.
        let e: Arc<dyn Objective> =
            Arc::new(FnObjective::new(1, |x| x[0].powi(4) / 4.0, |x| x.map(|v| v.powi(3))));
        let s = Splitting::new(DMatrix::from_element(1, 1, 1.0), e).unwrap();
        let x = one();
        let h = 0.01;
        let (p, q) = compute_pq(&s, &x, h).unwrap();
        let grad_e = s.energy.gradient(&x);
        let eq = MultiplierEquation::general(&s, &x, grad_e, p, q, h);
        let eta = solve_eta_near_one(&eq, DEFAULT_TOL).unwrap();
        assert!((eta - 1.0).abs() < 0.05, "eta = {eta}");
        assert!(eq.eval(eta).abs() < 1e-12);
    }

    #[test]
    fn pure_quadratic_general_is_flat() {
        let e: Arc<dyn Objective> = Arc::new(FnObjective::new(1, |_| 0.0, |x| Point::zeros(x.len())));
        let s = Splitting::new(DMatrix::from_element(1, 1, 1.0), e).unwrap();
        let x = one();
        let (p, q) = compute_pq(&s, &x, 0.3).unwrap();
        let eq = MultiplierEquation::general(&s, &x, Point::zeros(1), p, q, 0.3);
        for eta in [-2.0, 0.0, 1.0, 5.0] {
            assert_eq!(eq.eval(eta), 0.0);
        }
        assert!(matches!(solve_eta_near_one(&eq, DEFAULT_TOL), Err(Error::Degenerate)));
    }

    #[test]
    fn convex_quadratic_bracket_contains_unique_root() {
        let inst = make_quadratic(12, 44);
        let x = Point::from_element(12, 1.0);
        for h in [0.1, 1.0, 10.0, 100.0] {
            let eq = MultiplierEquation::special(&inst, &x, h);
            let b = EtaBracket::for_objective(&inst, h).unwrap();
            let eta = solve_eta(&eq, b, DEFAULT_TOL).unwrap();
            assert!(eta >= b.lower && eta <= 1.0);
            // closed form for quadratics: η = 1/(1 + h r/2), r = Rayleigh quotient of A at ∇f
            let g = inst.gradient(&x);
            let r = g.dot(&(&inst.a * &g)) / g.norm_squared();
            assert!((eta - 1.0 / (1.0 + 0.5 * h * r)).abs() < 1e-10);
        }
    }

    #[test]
    fn quadratic_instance_value_change_is_consistent() {
        let inst = QuadraticInstance::from_parts(
            DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]),
            Point::from_vec(vec![1.0, -1.0]),
            None,
        )
        .unwrap();
        let x = Point::from_vec(vec![0.5, 0.2]);
        let d = Point::from_vec(vec![-0.1, 0.4]);
        let direct = inst.value(&(&x + &d)) - inst.value(&x);
        let fx = inst.value(&x);
        let g = inst.gradient(&x);
        assert!((inst.value_change(&x, fx, &g, &d) - direct).abs() < 1e-14);
    }
}
