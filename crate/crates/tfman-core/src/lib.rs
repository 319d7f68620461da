//! TFMAN super-resolution engine.
//!
//! A self-contained implementation of a recurrent super-resolution network
//! built from three computational blocks — trainable feature matching (TFM),
//! same-size-divided region-level non-local attention (SRNL) and channel
//! attention (CA) — together with the image degradation pipelines (BI/BD/DN),
//! PSNR/SSIM evaluation on the Y channel, an analytical MAC/memory cost model
//! for SRNL, and a deterministic CPU trainer with taped reverse-mode autodiff.

pub mod blocks;
pub mod cost;
pub mod error;
pub mod eval;
pub mod image;
pub mod net;
pub mod ops;
pub mod rng;
pub mod scalar;
pub mod tape;
pub mod train;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tape::{NodeId, Tape};
pub use tensor::Tensor;
