//! Latent embedding model for general (non-uniform, multiplicity-preserving)
//! hypergraphs.
//!
//! Each hyperlink `e_j` over `n` vertices is modelled as a vector of
//! independent Bernoulli draws with log-odds
//! `theta_ji = beta + alpha_i + f_j^T z_i`, where `beta` adjusts for the
//! typical hyperlink order, `alpha` carries vertex degree heterogeneity and
//! `f_j`, `z_i` are `K`-dimensional hyperlink and vertex embeddings.
//!
//! The crate is organised bottom-up:
//!
//! * [`hypergraph`]: data model, ingestion and audit statistics;
//! * [`model`]: likelihood, gradients, the identifiability penalty and the
//!   canonical-form transform;
//! * [`estimator`]: constrained maximum likelihood by projected ascent;
//! * [`inference`]: plug-in covariances, intervals and ellipses;
//! * [`simulate`]: synthetic designs and Monte-Carlo experiment drivers.
//!
//! Heavy loops run through [`Exec`], which dispatches to rayon when the
//! `parallel` feature is enabled and falls back to plain iteration otherwise.
//! Reductions are always performed sequentially in index order, so results are
//! bit-identical across both paths and any thread count.

pub mod error;
pub mod estimator;
pub mod exec;
pub mod hypergraph;
pub mod inference;
pub mod json;
pub mod linalg;
pub mod model;
pub mod rng;
pub mod simulate;
pub mod stats;

pub use error::{Error, Result};
pub use estimator::{fit, fit_f1, FitConfig, FitResult};
pub use exec::Exec;
pub use hypergraph::{Hypergraph, IncidenceMatrix};
pub use inference::{ConfidenceEllipse, ConfidenceInterval, PluginCovariances, Target};
pub use model::{ModelParams, UncenteredParams};
