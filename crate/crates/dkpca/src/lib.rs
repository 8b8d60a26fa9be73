//! Deep kernel principal component analysis: stacked KPCA levels coupled
//! through a single residual objective, trained by projected gradient
//! descent on the Stiefel manifold, with closed-form tools for the
//! two-level linear case, spectral bounds, out-of-sample encoding,
//! pre-image reconstruction, and latent-space traversal.

pub mod analysis;
pub mod dataio;
pub mod downstream;
pub mod error;
pub mod generative;
pub mod kernels;
pub mod model;
pub mod numerics;

pub use error::{Error, Result};
