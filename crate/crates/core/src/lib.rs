//! Energy-dissipative integration of gradient flows `ẋ = −D∇V(x)` with a
//! scalar Lagrange multiplier, and the optimization methods built on it.
//!
//! - [`objective`]: objectives, benchmark generators and smoothness checks.
//! - [`multiplier`]: the scalar multiplier equation, its bounds and solvers.
//! - [`integrator`]: the time-stepping scheme for split energies.
//! - [`optimizer`]: exact multiplier descent, backtracking, adaptive steps
//!   and the fixed-step and Armijo baselines.
//! - [`rates`]: convergence envelopes and trajectory certification.
//! - [`harness`]: experiments, summaries and the verification bundle.

pub mod error;
pub mod harness;
pub mod integrator;
pub mod multiplier;
pub mod objective;
pub mod optimizer;
pub mod rates;

pub use error::{Error, Result};
pub use objective::{Objective, Point};
pub use optimizer::{optimize, Method, RunConfig, StepRecord, Termination, Trajectory};
