// Index loops mirror the tensor formulas, and negated comparisons like
// `!(x > 0.0)` reject NaN on purpose.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

//! Numerical laboratory for a second-order-in-time Ricci-type flow on flat
//! complex tori.
//!
//! The crate integrates the scalar potential form of the flow (a hyperbolic
//! complex Monge-Ampere equation), independently integrates the tensor form
//! of the metric evolution, and verifies the derived curvature evolution
//! identities numerically along computed trajectories.
//!
//! Layout:
//! - [`spectral`]: periodic grids with Fourier differentiation and dealiasing
//! - [`geometry`]: metric, Christoffel, curvature, potentials, Laplacians
//! - [`flow`]: leapfrog integrators, trajectories, normalization
//! - [`verify`]: residual checks of the curvature evolution identities
//! - [`config`], [`snapshot`], [`report`], [`plot`], [`runner`]: the CLI layer
//!
//! # Example
//!
//! Integrate a weakly perturbed flat torus and check the evolution
//! identities along the trajectory:
//!
//! ```
//! use hkflow::flow::{integrate_flow, FlowSetup};
//! use hkflow::geometry::MetricField;
//! use hkflow::spectral::{C64, Grid, ScalarField};
//! use hkflow::verify::{run_identity_suite, SuiteOptions};
//!
//! let grid = Grid::new(1, 32, 1.0)?;
//! let setup = FlowSetup::new(MetricField::flat(&grid)?, true)?;
//! let phi0 = ScalarField::from_fn(&grid, |x| {
//!     C64::new(1e-4 * (2.0 * std::f64::consts::PI * x[0]).cos(), 0.0)
//! });
//! let psi0 = ScalarField::zeros(&grid);
//! let traj = integrate_flow(&setup, &phi0, &psi0, 1e-3, 0.3, 10)?;
//! let reports = run_identity_suite(&traj, &SuiteOptions::default())?;
//! assert!(reports.iter().all(|r| r.pass));
//! # Ok::<(), hkflow::HkError>(())
//! ```

pub mod config;
pub mod error;
pub mod flow;
pub mod geometry;
pub mod plot;
pub mod report;
pub mod runner;
pub mod snapshot;
pub mod spectral;
pub mod verify;

pub use error::{HkError, Result};
