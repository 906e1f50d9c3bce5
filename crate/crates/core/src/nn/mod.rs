//! Layers and residual blocks.

mod attention;
mod block;
mod layers;
mod norm;

pub use attention::{EncoderBlock, MultiHeadAttention};
pub use block::{BasicBlock, BlockOutput};
pub use layers::{Conv2d, Linear};
pub use norm::{NormKind, NormSet, SwitchableNorm, BN_EPS, BN_MOMENTUM, LN_EPS};

use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::params::{ParamId, ParamStore};

/// A residual block of either network family.
#[derive(Clone, Debug)]
pub enum ResidualBlock {
    Basic(BasicBlock),
    Encoder(EncoderBlock),
}

impl ResidualBlock {
    /// Runs the block. `norm_mode` reaches every switchable norm inside it;
    /// plain norms ignore it.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &mut ParamStore,
        h: Var,
        norm_mode: usize,
        training: bool,
    ) -> Result<BlockOutput> {
        match self {
            ResidualBlock::Basic(b) => b.forward(tape, store, h, norm_mode, training),
            ResidualBlock::Encoder(b) => b.forward(tape, store, h, norm_mode, training),
        }
    }

    /// Per-sample MACs and output shape for a per-sample input shape
    /// (`[C,H,W]` or `[T,D]`).
    pub fn macs(&self, input: &[usize]) -> Result<(u64, Vec<usize>)> {
        match self {
            ResidualBlock::Basic(b) => b.macs(input),
            ResidualBlock::Encoder(b) => Ok((b.macs(input[0]), input.to_vec())),
        }
    }

    pub fn norms(&self) -> Vec<&SwitchableNorm> {
        match self {
            ResidualBlock::Basic(b) => b.norms(),
            ResidualBlock::Encoder(b) => b.norms(),
        }
    }

    /// Trainable parameters executed under `norm_mode`.
    pub fn params(&self, norm_mode: usize) -> Vec<ParamId> {
        match self {
            ResidualBlock::Basic(b) => b.params(norm_mode),
            ResidualBlock::Encoder(b) => b.params(norm_mode),
        }
    }

    pub fn changes_shape(&self) -> bool {
        match self {
            ResidualBlock::Basic(b) => b.changes_shape(),
            ResidualBlock::Encoder(_) => false,
        }
    }

    pub fn uses_switchable_norm(&self) -> bool {
        self.norms().iter().any(|n| n.is_switchable())
    }
}
