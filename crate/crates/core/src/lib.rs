//! Graph Posterior Network: uncertainty-aware node classification with
//! per-class latent densities, personalized-PageRank evidence diffusion and
//! closed-form Dirichlet posterior training.

pub mod baselines;
pub mod diff;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod flows;
pub mod graph;
pub mod model;
pub mod posterior;
pub mod training;

pub use error::{GpnError, Result};
