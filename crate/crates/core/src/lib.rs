//! Calculus of variations on finite time scales with nabla derivatives.
//!
//! The crate is organised bottom-up:
//!
//! - [`timescale`]: finite point sets, jump operators, graininess, kappa-sets
//!   and the affine jump-law detection needed for higher-order problems;
//! - [`nabla`]: grid functions with nabla derivatives, rho-compositions and
//!   nabla integrals;
//! - [`expr`]: a small expression language for Lagrangians with symbolic
//!   partial derivatives;
//! - [`variational`]: problem definition, boundary pinning, functional
//!   evaluation, the higher-order Euler-Lagrange residual and the first
//!   variation;
//! - [`solver`]: direct quasi-Newton minimisation, Newton on the
//!   Euler-Lagrange system and an exhaustive lattice oracle;
//! - [`oracle`]: randomized and exhaustive checks of the supporting lemmas;
//! - [`io`] and [`cli`]: JSON/CSV formats and the `nablavar` command line.
//!
//! ```
//! use std::sync::Arc;
//! use nablavar::{BoundaryConditions, Family, Lagrangian, TimeScale, VariationalProblem};
//! use nablavar::solver::{solve_direct, DirectOptions};
//!
//! let ts = Arc::new(TimeScale::make_lattice(Family::QLattice { q: 2.0 }, 1.0, 64.0)?);
//! let lag = Lagrangian::parse("u2^2 + u0^2", 2)?;
//! let problem = VariationalProblem::new(ts, lag, BoundaryConditions::new(vec![1.0, 0.0], vec![0.0, 0.0]))?;
//! let sol = solve_direct(&problem, &DirectOptions::default())?.into_converged()?;
//! let report = problem.el_residual(&sol.y)?;
//! assert!(report.sup_norm < 1e-6);
//! # Ok::<(), nablavar::Error>(())
//! ```

pub mod cli;
pub mod error;
pub mod expr;
pub mod io;
pub mod nabla;
pub mod oracle;
pub mod solver;
pub mod timescale;
pub mod variational;

pub use error::{Error, Result};
pub use expr::{Expr, Lagrangian};
pub use nabla::GridFunction;
pub use solver::Solution;
pub use timescale::{Family, HCoefficients, Jump, TimeScale};
pub use variational::{BoundaryConditions, ElReport, VariationalProblem};
