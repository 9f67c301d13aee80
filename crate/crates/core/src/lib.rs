//! Hierarchical EEG-to-image decoding.
//!
//! Images are decomposed into contour, object and context views and
//! embedded; EEG epochs pass through three spatiotemporal convolution
//! streams whose tokens are fused bottom-up by cross-attention, then
//! aligned to the image embeddings with a contrastive loss. Zero-shot
//! retrieval, ablations, similarity analysis and cost accounting live in
//! [`evaluation`].
//!
//! All numeric code is generic over [`Scalar`]; [`Model32`] is the usual
//! instantiation, [`Model64`] serves high-precision checks.

pub mod cahi;
pub mod dataio;
pub mod decomposition;
pub mod encoder;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod gradcheck;
pub mod linalg;
pub mod model;
pub mod nn;
pub mod objective;
pub mod scalar;
pub mod tensor_file;
pub mod training;

pub use error::{Error, Result};
pub use model::{HierarchicalModel, ModelConfig};
pub use scalar::Scalar;

pub type Model32 = HierarchicalModel<f32>;
pub type Model64 = HierarchicalModel<f64>;
