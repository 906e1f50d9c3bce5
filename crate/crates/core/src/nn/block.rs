use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::params::{ParamId, ParamStore};

use super::layers::Conv2d;
use super::norm::{NormKind, SwitchableNorm};

/// Values produced by one residual block: `out = shortcut + F(h)`.
#[derive(Clone, Copy, Debug)]
pub struct BlockOutput {
    pub out: Var,
    pub shortcut: Var,
}

/// Two-conv residual block.
///
/// `F(h) = norm2(conv2(relu(norm1(conv1(h)))))`, added to the identity or to
/// a strided 1×1 projection when the block changes shape. There is no
/// activation after the addition, so a zero `norm2` scale makes the block an
/// exact identity.
#[derive(Clone, Debug)]
pub struct BasicBlock {
    pub conv1: Conv2d,
    pub norm1: SwitchableNorm,
    pub conv2: Conv2d,
    pub norm2: SwitchableNorm,
    pub downsample: Option<(Conv2d, SwitchableNorm)>,
}

impl BasicBlock {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        stride: usize,
        switchable: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let norm = |store: &mut ParamStore, n: &str, c| {
            if switchable {
                SwitchableNorm::switchable(store, &format!("{name}.{n}"), NormKind::BatchNorm2d, c)
            } else {
                SwitchableNorm::plain(store, &format!("{name}.{n}"), NormKind::BatchNorm2d, c)
            }
        };
        let conv1 = Conv2d::new(
            store,
            &format!("{name}.conv1"),
            in_channels,
            out_channels,
            3,
            stride,
            1,
            false,
            rng,
        );
        let norm1 = norm(store, "norm1", out_channels);
        let conv2 = Conv2d::new(
            store,
            &format!("{name}.conv2"),
            out_channels,
            out_channels,
            3,
            1,
            1,
            false,
            rng,
        );
        let norm2 = norm(store, "norm2", out_channels);
        let downsample = (stride != 1 || in_channels != out_channels).then(|| {
            let conv = Conv2d::new(
                store,
                &format!("{name}.downsample.conv"),
                in_channels,
                out_channels,
                1,
                stride,
                0,
                false,
                rng,
            );
            (conv, norm(store, "downsample.norm", out_channels))
        });
        Self {
            conv1,
            norm1,
            conv2,
            norm2,
            downsample,
        }
    }

    pub fn changes_shape(&self) -> bool {
        self.downsample.is_some()
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &mut ParamStore,
        h: Var,
        mode: usize,
        training: bool,
    ) -> Result<BlockOutput> {
        let y = self.conv1.forward(tape, store, h)?;
        let y = self.norm1.forward(tape, store, y, mode, training)?;
        let y = tape.relu(y);
        let y = self.conv2.forward(tape, store, y)?;
        let residual = self.norm2.forward(tape, store, y, mode, training)?;
        let shortcut = match &self.downsample {
            Some((conv, norm)) => {
                let s = conv.forward(tape, store, h)?;
                norm.forward(tape, store, s, mode, training)?
            }
            None => h,
        };
        let out = tape.add(shortcut, residual)?;
        Ok(BlockOutput { out, shortcut })
    }

    pub fn macs(&self, input: &[usize]) -> Result<(u64, Vec<usize>)> {
        let (m1, s1) = self.conv1.macs(input)?;
        let (m2, s2) = self.conv2.macs(&s1)?;
        let md = match &self.downsample {
            Some((conv, _)) => conv.macs(input)?.0,
            None => 0,
        };
        Ok((m1 + m2 + md, s2))
    }

    pub fn norms(&self) -> Vec<&SwitchableNorm> {
        let mut v = vec![&self.norm1, &self.norm2];
        if let Some((_, n)) = &self.downsample {
            v.push(n);
        }
        v
    }

    pub fn params(&self, mode: usize) -> Vec<ParamId> {
        let mut ids = self.conv1.params();
        ids.extend(self.conv2.params());
        if let Some((conv, _)) = &self.downsample {
            ids.extend(conv.params());
        }
        for n in self.norms() {
            ids.extend(n.params(mode));
        }
        ids
    }
}
