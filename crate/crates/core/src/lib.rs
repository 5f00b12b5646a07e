//! Random-matrix laboratory for symmetric Gaussian matrices whose entries are
//! built from a stationary, positive-mean Gaussian field on the integer grid.
//!
//! The matrix of interest is `A(i,j) = Z(i,j) + Z(j,i)` where `Z` has mean
//! `theta > 0` and covariance kernel `R(u,v) = Cov(Z(0,0), Z(u,v))`. Its
//! largest eigenvalue sits near `2 n theta` and, after centering, fluctuates
//! like a normal law with mean `alpha` and variance `sigma2` computed in
//! [`theory::predict`].
//!
//! Modules, bottom-up:
//!
//! * [`kernel`]: covariance kernels, moving-average filters, PSD validation.
//! * [`sampler`]: exact field samplers (moving average, Cholesky, circulant
//!   embedding) driven by counter-derived RNG streams.
//! * [`matrix`]: dense symmetric matrices, quadratic forms, Lanczos solver.
//! * [`theory`]: limiting constants and exact finite-size moments.
//! * [`stats`]: moments, Kolmogorov-Smirnov, Q-Q export.
//! * [`montecarlo`]: the replicated experiment and its summary verdicts.
//! * [`cli`]: the `corrmat` command line front end.

pub mod cli;
pub mod kernel;
pub mod matrix;
pub mod montecarlo;
pub mod sampler;
pub mod stats;
pub mod theory;

mod spectral;

pub use kernel::{FieldParams, Kernel, KernelError, KernelSpec, Lag, MaFilter};
pub use matrix::{EigError, EigOptions, EigResult, SymMatrix};
pub use montecarlo::{RepRecord, RunConfig, RunError, RunOutput, SummaryReport};
pub use sampler::{FieldSample, RngStream, SampleError, SamplerKind};
pub use theory::{FiniteNOracles, Predictions, TheoryError};
