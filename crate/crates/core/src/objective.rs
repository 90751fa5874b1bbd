//! Objective functions and the three benchmark problem generators.
//!
//! Every objective exposes its value, gradient and whatever structural
//! constants are known for it (gradient Lipschitz constant `L`,
//! Polyak–Łojasiewicz parameter `μ`, optimal value `f⋆`). Instances are
//! immutable after construction and can be shared between threads.
//!
//! Random instances are drawn from [`ChaCha8Rng`] (rand_chacha 0.9) seeded
//! with [`SeedableRng::seed_from_u64`], so a seed fully determines an
//! instance.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point of the search space.
pub type Point = DVector<f64>;

/// Smooth objective `f: Rⁿ → R`.
pub trait Objective: Send + Sync {
    fn dim(&self) -> usize;

    fn value(&self, x: &Point) -> f64;

    fn gradient(&self, x: &Point) -> Point;

    /// `f(x + d) − f(x)` given `fx = f(x)` and `grad = ∇f(x)`.
    ///
    /// Implementations may override this with a cancellation-free formula;
    /// the default subtracts two function values.
    fn value_change(&self, x: &Point, fx: f64, _grad: &Point, d: &Point) -> f64 {
        self.value(&(x + d)) - fx
    }

    /// `⟨d, ∇²f d⟩` when the Hessian is constant, letting line searches
    /// evaluate `f` along a ray in closed form.
    fn curvature_along(&self, _d: &Point) -> Option<f64> {
        None
    }

    /// Gradient Lipschitz constant, when known.
    fn lipschitz(&self) -> Option<f64> {
        None
    }

    /// Polyak–Łojasiewicz parameter, when known.
    fn pl_mu(&self) -> Option<f64> {
        None
    }

    fn optimal_value(&self) -> Option<f64> {
        None
    }

    fn minimizer(&self) -> Option<Point> {
        None
    }

    fn is_convex(&self) -> bool {
        false
    }
}

impl<T: Objective + ?Sized> Objective for Arc<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn value(&self, x: &Point) -> f64 {
        (**self).value(x)
    }
    fn gradient(&self, x: &Point) -> Point {
        (**self).gradient(x)
    }
    fn value_change(&self, x: &Point, fx: f64, grad: &Point, d: &Point) -> f64 {
        (**self).value_change(x, fx, grad, d)
    }
    fn curvature_along(&self, d: &Point) -> Option<f64> {
        (**self).curvature_along(d)
    }
    fn lipschitz(&self) -> Option<f64> {
        (**self).lipschitz()
    }
    fn pl_mu(&self) -> Option<f64> {
        (**self).pl_mu()
    }
    fn optimal_value(&self) -> Option<f64> {
        (**self).optimal_value()
    }
    fn minimizer(&self) -> Option<Point> {
        (**self).minimizer()
    }
    fn is_convex(&self) -> bool {
        (**self).is_convex()
    }
}

type ValueFn = dyn Fn(&Point) -> f64 + Send + Sync;
type GradientFn = dyn Fn(&Point) -> Point + Send + Sync;

/// Objective assembled from closures, mostly for small hand-written problems.
#[derive(Clone)]
pub struct FnObjective {
    dim: usize,
    value: Arc<ValueFn>,
    gradient: Arc<GradientFn>,
    lipschitz: Option<f64>,
    pl_mu: Option<f64>,
    optimal_value: Option<f64>,
    minimizer: Option<Point>,
    convex: bool,
}

impl FnObjective {
    pub fn new(
        dim: usize,
        value: impl Fn(&Point) -> f64 + Send + Sync + 'static,
        gradient: impl Fn(&Point) -> Point + Send + Sync + 'static,
    ) -> Self {
        Self {
            dim,
            value: Arc::new(value),
            gradient: Arc::new(gradient),
            lipschitz: None,
            pl_mu: None,
            optimal_value: None,
            minimizer: None,
            convex: false,
        }
    }

    pub fn with_lipschitz(mut self, l: f64) -> Self {
        self.lipschitz = Some(l);
        self
    }

    pub fn with_pl_mu(mut self, mu: f64) -> Self {
        self.pl_mu = Some(mu);
        self
    }

    pub fn with_minimum(mut self, x_star: Point, f_star: f64) -> Self {
        self.minimizer = Some(x_star);
        self.optimal_value = Some(f_star);
        self
    }

    pub fn convex(mut self) -> Self {
        self.convex = true;
        self
    }
}

impl Objective for FnObjective {
    fn dim(&self) -> usize {
        self.dim
    }
    fn value(&self, x: &Point) -> f64 {
        (self.value)(x)
    }
    fn gradient(&self, x: &Point) -> Point {
        (self.gradient)(x)
    }
    fn lipschitz(&self) -> Option<f64> {
        self.lipschitz
    }
    fn pl_mu(&self) -> Option<f64> {
        self.pl_mu
    }
    fn optimal_value(&self) -> Option<f64> {
        self.optimal_value
    }
    fn minimizer(&self) -> Option<Point> {
        self.minimizer.clone()
    }
    fn is_convex(&self) -> bool {
        self.convex
    }
}

/// Wraps an objective and replaces its advertised Lipschitz constant.
///
/// Used to feed deliberately wrong constants into the verification checks.
pub struct WithLipschitz<O> {
    pub inner: O,
    pub lipschitz: f64,
}

impl<O: Objective> Objective for WithLipschitz<O> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn value(&self, x: &Point) -> f64 {
        self.inner.value(x)
    }
    fn gradient(&self, x: &Point) -> Point {
        self.inner.gradient(x)
    }
    fn value_change(&self, x: &Point, fx: f64, grad: &Point, d: &Point) -> f64 {
        self.inner.value_change(x, fx, grad, d)
    }
    fn curvature_along(&self, d: &Point) -> Option<f64> {
        self.inner.curvature_along(d)
    }
    fn lipschitz(&self) -> Option<f64> {
        Some(self.lipschitz)
    }
    fn pl_mu(&self) -> Option<f64> {
        self.inner.pl_mu()
    }
    fn optimal_value(&self) -> Option<f64> {
        self.inner.optimal_value()
    }
    fn minimizer(&self) -> Option<Point> {
        self.inner.minimizer()
    }
    fn is_convex(&self) -> bool {
        self.inner.is_convex()
    }
}

/// `f(x) = ½⟨x, Ax⟩ + ⟨b, x⟩` with `A` symmetric positive definite.
#[derive(Debug, Clone)]
pub struct QuadraticInstance {
    pub a: DMatrix<f64>,
    pub b: Point,
    pub seed: Option<u64>,
    /// Largest eigenvalue of `A`.
    pub lipschitz: f64,
    /// Smallest eigenvalue of `A`.
    pub mu: f64,
    pub x_star: Point,
    pub f_star: f64,
}

impl QuadraticInstance {
    /// Builds an instance from an explicit matrix, computing the spectrum
    /// and the minimizer. `A` is symmetrized before use.
    pub fn from_parts(a: DMatrix<f64>, b: Point, seed: Option<u64>) -> Result<Self> {
        if !a.is_square() || a.nrows() != b.len() || b.is_empty() {
            return Err(Error::Config(format!(
                "quadratic needs a square matrix matching b (got {}x{} and {})",
                a.nrows(),
                a.ncols(),
                b.len()
            )));
        }
        let a = (&a + a.transpose()) * 0.5;
        let eig = a.clone().symmetric_eigen();
        let lipschitz = eig.eigenvalues.max();
        let mu = eig.eigenvalues.min();
        if mu <= 0.0 {
            return Err(Error::Config(format!(
                "quadratic matrix is not positive definite (min eigenvalue {mu:e})"
            )));
        }
        Self::with_spectrum(a, b, seed, lipschitz, mu)
    }

    /// Builds an instance whose extreme eigenvalues are already known.
    pub fn with_spectrum(
        a: DMatrix<f64>,
        b: Point,
        seed: Option<u64>,
        lipschitz: f64,
        mu: f64,
    ) -> Result<Self> {
        let chol = a
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Config("quadratic matrix is not positive definite".into()))?;
        let x_star = -chol.solve(&b);
        // f(x⋆) = ½⟨b, x⋆⟩ since Ax⋆ = −b.
        let f_star = 0.5 * b.dot(&x_star);
        Ok(Self {
            a,
            b,
            seed,
            lipschitz,
            mu,
            x_star,
            f_star,
        })
    }
}

impl Objective for QuadraticInstance {
    fn dim(&self) -> usize {
        self.b.len()
    }

    fn value(&self, x: &Point) -> f64 {
        0.5 * x.dot(&(&self.a * x)) + self.b.dot(x)
    }

    fn gradient(&self, x: &Point) -> Point {
        &self.a * x + &self.b
    }

    fn value_change(&self, _x: &Point, _fx: f64, grad: &Point, d: &Point) -> f64 {
        grad.dot(d) + 0.5 * d.dot(&(&self.a * d))
    }

    fn curvature_along(&self, d: &Point) -> Option<f64> {
        Some(d.dot(&(&self.a * d)))
    }

    fn lipschitz(&self) -> Option<f64> {
        Some(self.lipschitz)
    }

    fn pl_mu(&self) -> Option<f64> {
        Some(self.mu)
    }

    fn optimal_value(&self) -> Option<f64> {
        Some(self.f_star)
    }

    fn minimizer(&self) -> Option<Point> {
        Some(self.x_star.clone())
    }

    fn is_convex(&self) -> bool {
        true
    }
}

/// Which smoothness constant a [`LogSumExpInstance`] advertises.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LseLipschitz {
    /// `max_i ‖a_i‖²`, the looser constant used in the published experiments.
    #[default]
    MaxRowNormSq,
    /// `max_i ‖a_i‖² / ρ`, the standard log-sum-exp bound.
    Scaled,
}

/// `f(x) = ρ log Σᵢ exp((⟨aᵢ, x⟩ − bᵢ)/ρ)`.
#[derive(Debug, Clone)]
pub struct LogSumExpInstance {
    /// Rows are the vectors `aᵢ` (m × n).
    pub a: DMatrix<f64>,
    pub b: Point,
    pub rho: f64,
    pub seed: Option<u64>,
    pub max_row_norm_sq: f64,
    pub lipschitz_choice: LseLipschitz,
    pub f_star: Option<f64>,
    pub x_star: Option<Point>,
}

impl LogSumExpInstance {
    pub fn from_parts(a: DMatrix<f64>, b: Point, rho: f64, seed: Option<u64>) -> Result<Self> {
        if a.nrows() != b.len() || a.nrows() == 0 || a.ncols() == 0 {
            return Err(Error::Config("log-sum-exp needs m ≥ 1 rows matching b".into()));
        }
        if !(rho > 0.0) {
            return Err(Error::Config(format!("rho must be positive, got {rho}")));
        }
        let max_row_norm_sq = a
            .row_iter()
            .map(|r| r.norm_squared())
            .fold(0.0_f64, f64::max);
        Ok(Self {
            a,
            b,
            rho,
            seed,
            max_row_norm_sq,
            lipschitz_choice: LseLipschitz::default(),
            f_star: None,
            x_star: None,
        })
    }

    pub fn lipschitz_scaled(&self) -> f64 {
        self.max_row_norm_sq / self.rho
    }

    /// Records a numerically computed optimum.
    pub fn with_optimum(mut self, x_star: Point, f_star: f64) -> Self {
        self.x_star = Some(x_star);
        self.f_star = Some(f_star);
        self
    }

    fn scaled_logits(&self, x: &Point) -> Point {
        (&self.a * x - &self.b) / self.rho
    }
}

impl Objective for LogSumExpInstance {
    fn dim(&self) -> usize {
        self.a.ncols()
    }

    fn value(&self, x: &Point) -> f64 {
        let z = self.scaled_logits(x);
        let shift = z.max();
        let sum: f64 = z.iter().map(|zi| (zi - shift).exp()).sum();
        self.rho * (shift + sum.ln())
    }

    fn gradient(&self, x: &Point) -> Point {
        let z = self.scaled_logits(x);
        let shift = z.max();
        let mut w = z.map(|zi| (zi - shift).exp());
        let total = w.sum();
        w /= total;
        self.a.tr_mul(&w)
    }

    /// `ρ log Σ wᵢ exp(tᵢ)` with `w` the softmax weights at `x` and
    /// `tᵢ = ⟨aᵢ, d⟩/ρ`; small steps go through `expm1`/`ln_1p`.
    fn value_change(&self, x: &Point, _fx: f64, _grad: &Point, d: &Point) -> f64 {
        let z = self.scaled_logits(x);
        let shift = z.max();
        let mut w = z.map(|zi| (zi - shift).exp());
        let total = w.sum();
        w /= total;
        let t = (&self.a * d) / self.rho;
        let t_max = t.max();
        if t_max.abs() <= 0.5 && t.min().abs() <= 0.5 {
            let s: f64 = w.iter().zip(t.iter()).map(|(wi, ti)| wi * ti.exp_m1()).sum();
            self.rho * s.ln_1p()
        } else {
            let s: f64 = w.iter().zip(t.iter()).map(|(wi, ti)| wi * (ti - t_max).exp()).sum();
            self.rho * (t_max + s.ln())
        }
    }

    fn lipschitz(&self) -> Option<f64> {
        Some(match self.lipschitz_choice {
            LseLipschitz::MaxRowNormSq => self.max_row_norm_sq,
            LseLipschitz::Scaled => self.lipschitz_scaled(),
        })
    }

    fn optimal_value(&self) -> Option<f64> {
        self.f_star
    }

    fn minimizer(&self) -> Option<Point> {
        self.x_star.clone()
    }

    fn is_convex(&self) -> bool {
        true
    }
}

/// `f(x) = ‖x‖² + 3 sin²(⟨b, x⟩)` with `‖b‖ = 1`: 8-smooth, nonconvex,
/// Polyak–Łojasiewicz with `μ = 1/32`, minimized at the origin.
#[derive(Debug, Clone)]
pub struct NonconvexPlInstance {
    pub b: Point,
    pub seed: Option<u64>,
}

impl NonconvexPlInstance {
    pub const LIPSCHITZ: f64 = 8.0;
    pub const PL_MU: f64 = 1.0 / 32.0;

    pub fn from_direction(v: Point, seed: Option<u64>) -> Result<Self> {
        let norm = v.norm();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::Config("direction vector must be nonzero".into()));
        }
        // Leave vectors that are already unit length bit-for-bit unchanged.
        let b = if (norm - 1.0).abs() <= 4.0 * f64::EPSILON { v } else { v / norm };
        Ok(Self { b, seed })
    }
}

impl Objective for NonconvexPlInstance {
    fn dim(&self) -> usize {
        self.b.len()
    }

    fn value(&self, x: &Point) -> f64 {
        let s = self.b.dot(x).sin();
        x.norm_squared() + 3.0 * s * s
    }

    fn gradient(&self, x: &Point) -> Point {
        let t = self.b.dot(x);
        x * 2.0 + &self.b * (3.0 * (2.0 * t).sin())
    }

    /// Uses `sin²u − sin²v = sin(u + v) sin(u − v)` to avoid cancellation.
    fn value_change(&self, x: &Point, _fx: f64, _grad: &Point, d: &Point) -> f64 {
        let s = self.b.dot(x);
        let delta = self.b.dot(d);
        2.0 * x.dot(d) + d.norm_squared() + 3.0 * (2.0 * s + delta).sin() * delta.sin()
    }

    fn lipschitz(&self) -> Option<f64> {
        Some(Self::LIPSCHITZ)
    }

    fn pl_mu(&self) -> Option<f64> {
        Some(Self::PL_MU)
    }

    fn optimal_value(&self) -> Option<f64> {
        Some(0.0)
    }

    fn minimizer(&self) -> Option<Point> {
        Some(Point::zeros(self.b.len()))
    }
}

fn rng_for(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn gaussian_matrix<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    // Filled row by row so that the draw order matches the row-major layout.
    let mut m = DMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            m[(i, j)] = StandardNormal.sample(rng);
        }
    }
    m
}

/// Samples an orthogonal matrix from the Haar measure: QR of a Gaussian
/// matrix with the columns of `Q` rescaled by `sign(R_jj)`.
pub fn haar_orthogonal<R: Rng>(n: usize, rng: &mut R) -> DMatrix<f64> {
    let qr = gaussian_matrix(n, n, rng).qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Random convex quadratic `A = QᵀΛQ`, `Λ ~ U[0.001, 1]`, `Q` Haar, `b ~ N(0, 5²)`.
pub fn make_quadratic(n: usize, seed: u64) -> QuadraticInstance {
    assert!(n >= 1, "dimension must be positive");
    let mut rng = rng_for(seed);
    let spectrum = Uniform::new_inclusive(0.001, 1.0).expect("valid range");
    let lambda: Vec<f64> = (0..n).map(|_| spectrum.sample(&mut rng)).collect();
    let q = haar_orthogonal(n, &mut rng);
    let normal = Normal::new(0.0, 5.0).expect("valid std");
    let b = Point::from_fn(n, |_, _| normal.sample(&mut rng));

    let scaled = DMatrix::from_fn(n, n, |i, j| lambda[i] * q[(i, j)]);
    let a = q.tr_mul(&scaled);
    let a = (&a + a.transpose()) * 0.5;
    let lipschitz = lambda.iter().copied().fold(f64::MIN, f64::max);
    let mu = lambda.iter().copied().fold(f64::MAX, f64::min);
    QuadraticInstance::with_spectrum(a, b, Some(seed), lipschitz, mu)
        .expect("generated matrix is positive definite")
}

/// Random log-sum-exp instance with `aᵢ ~ N(0, I)` and `bᵢ ~ N(0, 2)`.
pub fn make_log_sum_exp(n: usize, m: usize, rho: f64, seed: u64) -> LogSumExpInstance {
    assert!(n >= 1 && m >= 1, "dimensions must be positive");
    let mut rng = rng_for(seed);
    let a = gaussian_matrix(m, n, &mut rng);
    let normal = Normal::new(0.0, std::f64::consts::SQRT_2).expect("valid std");
    let b = Point::from_fn(m, |_, _| normal.sample(&mut rng));
    LogSumExpInstance::from_parts(a, b, rho, Some(seed)).expect("valid generated instance")
}

/// Random direction `b = v/‖v‖`, `v ~ N(0, I)`, for [`NonconvexPlInstance`].
pub fn make_nonconvex_pl(n: usize, seed: u64) -> NonconvexPlInstance {
    assert!(n >= 1, "dimension must be positive");
    let mut rng = rng_for(seed);
    loop {
        let v = Point::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
        if let Ok(inst) = NonconvexPlInstance::from_direction(v, Some(seed)) {
            return inst;
        }
    }
}

/// Largest componentwise error between the gradient and central differences.
pub fn check_gradient(f: &dyn Objective, x: &Point, delta: f64) -> f64 {
    let grad = f.gradient(x);
    let mut worst = 0.0_f64;
    let mut probe = x.clone();
    for i in 0..x.len() {
        let xi = x[i];
        probe[i] = xi + delta;
        let fp = f.value(&probe);
        probe[i] = xi - delta;
        let fm = f.value(&probe);
        probe[i] = xi;
        let fd = (fp - fm) / (2.0 * delta);
        worst = worst.max((fd - grad[i]).abs());
    }
    worst
}

/// Default finite-difference acceptance: `1e-6 · (1 + ‖∇f(x)‖)`.
pub fn gradient_tolerance(f: &dyn Objective, x: &Point) -> f64 {
    1e-6 * (1.0 + f.gradient(x).norm())
}

/// Checks both quadratic Taylor bounds implied by `L`-smoothness at `(x, y)`.
pub fn check_smoothness_inequalities(f: &dyn Objective, x: &Point, y: &Point) -> Result<bool> {
    let l = f.lipschitz().ok_or(Error::MissingConstant("lipschitz"))?;
    let fx = f.value(x);
    let grad = f.gradient(x);
    let d = y - x;
    let remainder = f.value_change(x, fx, &grad, &d) - grad.dot(&d);
    let bound = 0.5 * l * d.norm_squared();
    let slack = 1e-10 * (bound + fx.abs() + f.value(y).abs() + 1e-300);
    Ok(remainder <= bound + slack && remainder >= -bound - slack)
}

/// Checks `½‖∇f(x)‖² ≥ μ (f(x) − f⋆)` at `x`.
pub fn check_pl_inequality(f: &dyn Objective, x: &Point) -> Result<bool> {
    let mu = f.pl_mu().ok_or(Error::MissingConstant("pl_mu"))?;
    let f_star = f.optimal_value().ok_or(Error::MissingConstant("f_star"))?;
    let lhs = 0.5 * f.gradient(x).norm_squared();
    let gap = f.value(x) - f_star;
    Ok(lhs >= mu * gap - 1e-10 * (1.0 + gap.abs()))
}

/// A benchmark instance of any of the supported kinds.
#[derive(Debug, Clone)]
pub enum ProblemInstance {
    Quadratic(QuadraticInstance),
    LogSumExp(LogSumExpInstance),
    NonconvexPl(NonconvexPlInstance),
}

impl ProblemInstance {
    fn inner(&self) -> &dyn Objective {
        match self {
            Self::Quadratic(p) => p,
            Self::LogSumExp(p) => p,
            Self::NonconvexPl(p) => p,
        }
    }

    pub fn to_document(&self) -> InstanceDocument {
        match self {
            Self::Quadratic(p) => InstanceDocument::Quadratic {
                n: p.b.len(),
                seed: p.seed,
                a: rows_of(&p.a),
                b: p.b.iter().copied().collect(),
                lipschitz: Some(p.lipschitz),
                mu: Some(p.mu),
                f_star: Some(p.f_star),
            },
            Self::LogSumExp(p) => InstanceDocument::LogSumExp {
                n: p.a.ncols(),
                m: p.a.nrows(),
                rho: p.rho,
                seed: p.seed,
                a: rows_of(&p.a),
                b: p.b.iter().copied().collect(),
                max_row_norm_sq: p.max_row_norm_sq,
                lipschitz_choice: p.lipschitz_choice,
                f_star: p.f_star,
                x_star: p.x_star.as_ref().map(|x| x.iter().copied().collect()),
            },
            Self::NonconvexPl(p) => InstanceDocument::NonconvexPl {
                n: p.b.len(),
                seed: p.seed,
                b: p.b.iter().copied().collect(),
                lipschitz: NonconvexPlInstance::LIPSCHITZ,
                mu: NonconvexPlInstance::PL_MU,
            },
        }
    }

    pub fn from_document(doc: InstanceDocument) -> Result<Self> {
        Ok(match doc {
            InstanceDocument::Quadratic {
                a,
                b,
                seed,
                lipschitz,
                mu,
                ..
            } => {
                let a = matrix_from_rows(&a)?;
                let b = Point::from_vec(b);
                let inst = match (lipschitz, mu) {
                    (Some(l), Some(mu)) if mu > 0.0 && l >= mu => {
                        let a = (&a + a.transpose()) * 0.5;
                        QuadraticInstance::with_spectrum(a, b, seed, l, mu)?
                    }
                    _ => QuadraticInstance::from_parts(a, b, seed)?,
                };
                Self::Quadratic(inst)
            }
            InstanceDocument::LogSumExp {
                a,
                b,
                rho,
                seed,
                lipschitz_choice,
                f_star,
                x_star,
                ..
            } => {
                let a = matrix_from_rows(&a)?;
                let mut inst = LogSumExpInstance::from_parts(a, Point::from_vec(b), rho, seed)?;
                inst.lipschitz_choice = lipschitz_choice;
                inst.f_star = f_star;
                inst.x_star = x_star.map(Point::from_vec);
                Self::LogSumExp(inst)
            }
            InstanceDocument::NonconvexPl { b, seed, .. } => {
                Self::NonconvexPl(NonconvexPlInstance::from_direction(Point::from_vec(b), seed)?)
            }
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_document())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_document(serde_json::from_str(text)?)
    }
}

impl Objective for ProblemInstance {
    fn dim(&self) -> usize {
        self.inner().dim()
    }
    fn value(&self, x: &Point) -> f64 {
        self.inner().value(x)
    }
    fn gradient(&self, x: &Point) -> Point {
        self.inner().gradient(x)
    }
    fn value_change(&self, x: &Point, fx: f64, grad: &Point, d: &Point) -> f64 {
        self.inner().value_change(x, fx, grad, d)
    }
    fn curvature_along(&self, d: &Point) -> Option<f64> {
        self.inner().curvature_along(d)
    }
    fn lipschitz(&self) -> Option<f64> {
        self.inner().lipschitz()
    }
    fn pl_mu(&self) -> Option<f64> {
        self.inner().pl_mu()
    }
    fn optimal_value(&self) -> Option<f64> {
        self.inner().optimal_value()
    }
    fn minimizer(&self) -> Option<Point> {
        self.inner().minimizer()
    }
    fn is_convex(&self) -> bool {
        self.inner().is_convex()
    }
}

/// JSON form of an instance. Matrices are stored as a list of rows.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "problem", rename_all = "snake_case")]
pub enum InstanceDocument {
    Quadratic {
        n: usize,
        seed: Option<u64>,
        a: Vec<Vec<f64>>,
        b: Vec<f64>,
        #[serde(default)]
        lipschitz: Option<f64>,
        #[serde(default)]
        mu: Option<f64>,
        #[serde(default)]
        f_star: Option<f64>,
    },
    #[serde(rename = "lse")]
    LogSumExp {
        n: usize,
        m: usize,
        rho: f64,
        seed: Option<u64>,
        a: Vec<Vec<f64>>,
        b: Vec<f64>,
        max_row_norm_sq: f64,
        #[serde(default)]
        lipschitz_choice: LseLipschitz,
        f_star: Option<f64>,
        x_star: Option<Vec<f64>>,
    },
    NonconvexPl {
        n: usize,
        seed: Option<u64>,
        b: Vec<f64>,
        lipschitz: f64,
        mu: f64,
    },
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if nrows == 0 || ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Config("matrix rows must be nonempty and of equal length".into()));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_point(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Point {
        Point::from_fn(n, |_, _| rng.random_range(-scale..scale))
    }

    #[test]
    fn haar_matrix_is_orthogonal() {
        let mut rng = rng_for(3);
        let q = haar_orthogonal(40, &mut rng);
        let err = (q.tr_mul(&q) - DMatrix::identity(40, 40)).abs().max();
        assert!(err < 1e-12, "QᵀQ − I = {err:e}");
    }

    #[test]
    fn quadratic_spectrum_matches_eigendecomposition() {
        let inst = make_quadratic(60, 11);
        let eig = inst.a.clone().symmetric_eigen();
        assert!((eig.eigenvalues.max() - inst.lipschitz).abs() < 1e-10);
        assert!((eig.eigenvalues.min() - inst.mu).abs() < 1e-10);
        assert!(inst.mu >= 0.001 - 1e-12 && inst.lipschitz <= 1.0 + 1e-12);
    }

    #[test]
    fn one_dimensional_quadratic_closed_form() {
        let c = 0.37;
        let inst =
            QuadraticInstance::from_parts(DMatrix::from_element(1, 1, c), Point::zeros(1), None)
                .unwrap();
        let x = Point::from_element(1, 2.0);
        assert!((inst.value(&x) - 0.5 * c * 4.0).abs() < 1e-15);
        assert!((inst.gradient(&x)[0] - 2.0 * c).abs() < 1e-15);
        assert_eq!(inst.x_star[0], 0.0);
        assert_eq!(inst.f_star, 0.0);
    }

    #[test]
    fn quadratic_minimizer_beats_random_points() {
        let inst = make_quadratic(30, 5);
        let mut rng = rng_for(99);
        for _ in 0..1000 {
            let x = random_point(&mut rng, 30, 50.0);
            assert!(inst.f_star <= inst.value(&x));
        }
        assert!(inst.gradient(&inst.x_star).norm() < 1e-8 * (1.0 + inst.b.norm()));
    }

    #[test]
    fn quadratic_taylor_remainder_is_exact() {
        let inst = make_quadratic(20, 8);
        let mut rng = rng_for(1);
        let x = random_point(&mut rng, 20, 3.0);
        let y = random_point(&mut rng, 20, 3.0);
        let d = &y - &x;
        let remainder = inst.value(&y) - inst.value(&x) - inst.gradient(&x).dot(&d);
        let expected = 0.5 * d.dot(&(&inst.a * &d));
        assert!((remainder - expected).abs() < 1e-9 * (1.0 + expected.abs()));
    }

    #[test]
    fn single_term_log_sum_exp_is_affine() {
        let a = DMatrix::from_row_slice(1, 3, &[1.0, -2.0, 0.5]);
        let b = Point::from_element(1, 0.7);
        let inst = LogSumExpInstance::from_parts(a, b, 20.0, None).unwrap();
        let x = Point::from_vec(vec![0.3, 1.1, -4.0]);
        let expected = 0.3 - 2.2 - 2.0 - 0.7;
        assert!((inst.value(&x) - expected).abs() < 1e-12);
        let g = inst.gradient(&x);
        assert!((g - Point::from_vec(vec![1.0, -2.0, 0.5])).norm() < 1e-15);
    }

    #[test]
    fn log_sum_exp_does_not_overflow() {
        let inst = make_log_sum_exp(5, 7, 20.0, 2);
        let a0 = inst.a.row(0).transpose();
        // ⟨a₀, x⟩/ρ = 10⁴
        let x = &a0 * (1e4 * inst.rho / a0.norm_squared());
        let v = inst.value(&x);
        assert!(v.is_finite() && v > 0.0);
        assert!(inst.gradient(&x).iter().all(|g| g.is_finite()));
    }

    #[test]
    fn log_sum_exp_row_norms_in_expected_band() {
        let inst = make_log_sum_exp(50, 200, 20.0, 17);
        assert!(inst.max_row_norm_sq > 30.0 && inst.max_row_norm_sq < 100.0);
        assert!((inst.lipschitz_scaled() * 20.0 - inst.max_row_norm_sq).abs() < 1e-12);
        assert_eq!(inst.lipschitz(), Some(inst.max_row_norm_sq));
    }

    #[test]
    fn nonconvex_hand_values() {
        let inst = make_nonconvex_pl(10, 4);
        assert!((inst.b.norm() - 1.0).abs() < 1e-14);
        let zero = Point::zeros(10);
        assert_eq!(inst.value(&zero), 0.0);
        assert_eq!(inst.gradient(&zero).norm(), 0.0);

        let half_pi = std::f64::consts::FRAC_PI_2;
        let x = &inst.b * half_pi;
        let expected_value = half_pi * half_pi + 3.0;
        assert!((inst.value(&x) - expected_value).abs() < 1e-12);
        let expected_grad = &inst.b * std::f64::consts::PI;
        assert!((inst.gradient(&x) - expected_grad).norm() < 1e-12);
    }

    #[test]
    fn gradient_check_on_constant_is_noise() {
        let f = FnObjective::new(3, |_| 4.2, |x| Point::zeros(x.len()));
        let err = check_gradient(&f, &Point::from_element(3, 1.0), 1e-6);
        assert!(err < 1e-9);
    }

    #[test]
    fn understated_lipschitz_is_detected() {
        let inst = make_quadratic(15, 21);
        let eig = inst.a.clone().symmetric_eigen();
        let top = eig.eigenvalues.imax();
        let v = eig.eigenvectors.column(top).into_owned();
        let x = Point::zeros(15);
        let y = &v * 3.0;
        assert!(check_smoothness_inequalities(&inst, &x, &y).unwrap());
        let wrong = WithLipschitz {
            inner: inst.clone(),
            lipschitz: inst.lipschitz / 2.0,
        };
        assert!(!check_smoothness_inequalities(&wrong, &x, &y).unwrap());
    }

    #[test]
    fn smoothness_check_requires_constant() {
        let f = FnObjective::new(1, |x| x[0] * x[0], |x| x * 2.0);
        let x = Point::zeros(1);
        assert!(matches!(
            check_smoothness_inequalities(&f, &x, &x),
            Err(Error::MissingConstant("lipschitz"))
        ));
    }

    #[test]
    fn document_round_trip_preserves_instances() {
        for inst in [
            ProblemInstance::Quadratic(make_quadratic(6, 1)),
            ProblemInstance::LogSumExp(make_log_sum_exp(4, 9, 20.0, 1)),
            ProblemInstance::NonconvexPl(make_nonconvex_pl(5, 1)),
        ] {
            let json = inst.to_json().unwrap();
            let back = ProblemInstance::from_json(&json).unwrap();
            assert_eq!(back.to_document(), inst.to_document());
        }
    }
}
