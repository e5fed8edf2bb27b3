//! Few-step residual-diffusion super-resolution for 2D fields.
//!
//! An LR field is lifted to the fine grid, noised, and pulled back in a
//! handful of reverse steps. Each step's drift is a learned multigrid
//! correction of the coarse data misfit plus optional physics terms
//! (smoothness, anchor-guided diffusion, spectral matching).
//!
//! Modules follow the pipeline: [`field`] and [`stencils`] for grids and
//! finite differences, [`transfer`] for wavelet restriction/prolongation,
//! [`spectral`] for FFT utilities, [`physics`] and [`mgcorr`] for the drift,
//! [`nnet`] for the model and its gradients, [`sampler`] and [`training`] for
//! the diffusion loop, [`metrics`] and [`data`] for evaluation and I/O.

mod binio;
pub mod data;
pub mod error;
pub mod field;
pub mod metrics;
pub mod mgcorr;
pub mod nnet;
pub mod physics;
pub mod rng;
pub mod sampler;
pub mod spectral;
pub mod training;
pub mod stencils;
pub mod transfer;
pub use error::{Error, Result};
pub use field::{Boundary, FluidMask, Grid2D, ScalarField, VectorField2D};
