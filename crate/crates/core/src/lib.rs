//! Complete-case bivariate kernel estimation of time-varying coefficient
//! models for longitudinal data with a terminal event.
//!
//! The coefficient surfaces `β_k(t, T − t)` depend on time since entry `t`
//! and on residual lifetime `T − t`. Only subjects whose terminal event is
//! observed contribute to the fit. The crate provides
//!
//! - [`kernel`]: the truncated bivariate normal kernel and its moments,
//! - [`fit`]: local weighted least squares, residuals, sandwich variance
//!   and pointwise confidence intervals,
//! - [`bandwidth`]: subject-level K-fold cross-validation with undersmoothing,
//! - [`simulate`]: the reference data-generating process,
//! - [`experiments`]: Monte Carlo coverage studies,
//! - [`io`]: CSV ingestion, response transforms, config files and SVG output.
//!
//! Data-parallel loops (grid points, residual tables, CV folds, replications)
//! run on rayon when the `parallel` feature is enabled and sequentially
//! otherwise. Results never depend on the worker count.

// `!(x > 0.0)` is the NaN-rejecting form used throughout
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bandwidth;
pub mod cli;
pub mod data;
pub mod error;
pub mod experiments;
pub mod fit;
pub mod io;
pub mod kernel;
pub mod par;
pub mod quadrature;
pub mod rng;
pub mod simulate;
pub mod svg;

pub use data::{CaseDesign, Dataset, Subject, Visit};
pub use error::{Error, Result};
pub use fit::{FitPoint, FitStatus};
pub use kernel::{Kernel, KernelMoments};
