//! Unsupervised image restoration with a deep image prior.
//!
//! An untrained encoder–decoder network `f(θ; z)` is fitted to a single
//! degraded observation `g = H u + η`. Three solvers share one code path:
//!
//! * `Dip`: plain Adam on `½‖H f − g‖²` with oracle or checkpoint early stopping;
//! * `DipTv`: ADMM splitting `D f = t` with an isotropic total-variation prior;
//! * `DipWtv`: the same splitting with a per-pixel weight field recomputed every
//!   outer iteration from the current residual and gradient magnitudes.
//!
//! The modules mirror the processing chain: [`imaging`] holds images, noise and
//! quality metrics, [`operators`] the forward operators and finite differences,
//! [`generator`] the network, [`inner`] the inexact θ-solver, [`admm`] the outer
//! loop, and [`experiment`] the reproducible run harness.

pub mod admm;
pub mod error;
pub mod experiment;
pub mod generator;
pub mod imaging;
pub mod inner;
pub mod operators;

pub use admm::{AdmmConfig, MuPolicy, RunOutcome, RunTrace, SolverMode};
pub use error::{Error, Result};
pub use generator::{Generator, GeneratorConfig, GeneratorParams, SeedInput};
pub use imaging::{Image, NoiseSpec};
pub use operators::{ForwardOperator, GradientField};
