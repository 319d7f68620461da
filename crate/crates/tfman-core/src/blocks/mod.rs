//! The network's computational blocks: trainable feature matching (TFM),
//! same-size-divided region-level non-local (SRNL) and channel attention
//! (CA). Each block is a pure transform recorded on a [`crate::Tape`], so
//! the same code path serves inference and training.

mod ca;
mod nonlocal;
mod srnl;
mod tfm;

pub use ca::{ca_forward, CaNodes};
pub use nonlocal::{nonlocal_block, MacCounter, NonLocalNodes};
pub use srnl::{srnl_divide, srnl_forward, SrnlLayout};
pub use tfm::{overlap_count_map, tfm_forward, FeatureSetBank, TfmConfig, TfmNodes};

use crate::error::Result;
use crate::scalar::Scalar;
use crate::tape::{NodeId, Tape};

/// A convolution's bound tape nodes (weight plus optional bias).
#[derive(Debug, Clone, Copy)]
pub struct ConvNodes {
    pub weight: NodeId,
    pub bias: Option<NodeId>,
}

impl ConvNodes {
    /// Apply as a stride-1 convolution with the given symmetric padding.
    pub fn apply<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        input: NodeId,
        padding: usize,
    ) -> Result<NodeId> {
        let mut out = tape.conv2d(input, self.weight, 1, padding)?;
        if let Some(bias) = self.bias {
            out = tape.add_channel_bias(out, bias, 1)?;
        }
        Ok(out)
    }
}
