//! Loss-landscape analysis for small multilayer perceptrons.
//!
//! The crate trains MLPs with a family of gradient-descent optimizers,
//! assembles the exact full-batch Hessian at the converged parameters via
//! Pearlmutter Hessian-vector products, and classifies the critical point
//! by its eigenspectrum (local minimum / maximum / min-max saddle /
//! degenerate saddle), including stable- and good-saddle checks and a
//! Wigner semicircle comparison.
//!
//! Modules:
//! - [`linalg`]: dense symmetric eigensolver, Lanczos, PCA
//! - [`model`]: MLP forward/backward, Hvp, explicit Hessian
//! - [`optim`]: the six update rules and the training loop
//! - [`data`]: MNIST IDX, feature CSV, subsampling, synthetic sets
//! - [`spectral`]: spectrum classification and saddle taxonomy
//! - [`toyscape`]: closed-form degenerate-plateau landscapes
//! - [`harness`]: config-driven experiment runner and CLI

pub mod data;
pub mod harness;
pub mod linalg;
pub mod model;
pub mod optim;
pub mod spectral;
pub mod toyscape;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
