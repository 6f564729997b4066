//! Eigencomponents of the derivatives of multivariate functional data.
//!
//! Three estimators are provided, all generic over the scalar type:
//!
//! * [`pipelines::fit_dmfpca`] eigen-decomposes the mixed partial derivatives
//!   of each feature's covariance surface, predicts univariate scores and
//!   combines them into a multivariate expansion;
//! * [`pipelines::fit_dmkl`] differentiates the multivariate Karhunen-Loève
//!   expansion of the data and re-runs MFPCA on the result;
//! * [`pipelines::fit_direct`] smooths and differentiates every curve with
//!   P-splines before running MFPCA.
//!
//! [`simstudy`] reproduces the four-feature benchmark and [`metrics`] scores
//! estimates against the truth.

pub mod bspline;
pub mod covariance;
pub mod error;
pub mod grid;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod mfpca;
pub mod pipelines;
pub mod pspline;
pub mod sample;
pub mod scalar;
pub mod simstudy;
pub mod ufpca;

pub use ndarray;

pub use error::{Error, Result, Stage};
pub use grid::{integrate, make_uniform_grid, Grid};
pub use pspline::{PSplineFit, Smoothing, SplineConfig, SurfaceFit};
pub use sample::{center, DenseCurves, FunctionalSample, Observation, Subject};
pub use scalar::Real;

/// Double-precision instantiations, the default for analysis work.
pub type Sample = FunctionalSample<f64>;
pub type Curves = DenseCurves<f64>;
pub type FitConfig = pipelines::FitConfig<f64>;
pub type FitResult = pipelines::FitResult<f64>;
pub type EigenSystem = mfpca::MultivariateEigenSystem<f64>;

/// Single-precision instantiations.
pub type SampleF32 = FunctionalSample<f32>;
pub type CurvesF32 = DenseCurves<f32>;
pub type FitConfigF32 = pipelines::FitConfig<f32>;
pub type FitResultF32 = pipelines::FitResult<f32>;
pub type EigenSystemF32 = mfpca::MultivariateEigenSystem<f32>;
