use rand::Rng;

use crate::autodiff::{Conv2dGeometry, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamKind, ParamStore};

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2d {
    /// He-normal initialised kernel (fan-in).
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = (in_channels * kernel * kernel) as f32;
        let w = Tensor::randn(
            &[out_channels, in_channels, kernel, kernel],
            (2.0 / fan_in).sqrt(),
            rng,
        );
        let weight = store.add(format!("{name}.weight"), w, ParamKind::Weight);
        let bias = bias.then(|| {
            store.add(
                format!("{name}.bias"),
                Tensor::zeros(&[out_channels]),
                ParamKind::NoDecay,
            )
        });
        Self {
            weight,
            bias,
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = self.bias.map(|b| tape.param(store, b));
        tape.conv2d(x, w, b, self.stride, self.padding)
    }

    /// Multiply-accumulates for one `[C,H,W]` sample, and the output shape.
    pub fn macs(&self, input: &[usize]) -> Result<(u64, Vec<usize>)> {
        let geom = Conv2dGeometry {
            channels: self.in_channels,
            height: input[1],
            width: input[2],
            kernel_h: self.kernel,
            kernel_w: self.kernel,
            stride: self.stride,
            padding: self.padding,
        };
        let (ho, wo) = geom
            .out_hw()
            .ok_or_else(|| Error::invalid("conv2d", format!("no output for input {input:?}")))?;
        let macs = self.out_channels * self.in_channels * self.kernel * self.kernel * ho * wo;
        Ok((macs as u64, vec![self.out_channels, ho, wo]))
    }

    pub fn params(&self) -> Vec<ParamId> {
        std::iter::once(self.weight).chain(self.bias).collect()
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_features: usize,
    pub out_features: usize,
}

impl Linear {
    /// Kernel stored as `[in, out]`, drawn from N(0, std²); zero bias.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_features: usize,
        out_features: usize,
        std: f32,
        rng: &mut impl Rng,
    ) -> Self {
        let weight = store.add(
            format!("{name}.weight"),
            Tensor::randn(&[in_features, out_features], std, rng),
            ParamKind::Weight,
        );
        let bias = store.add(
            format!("{name}.bias"),
            Tensor::zeros(&[out_features]),
            ParamKind::NoDecay,
        );
        Self {
            weight,
            bias: Some(bias),
            in_features,
            out_features,
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = self.bias.map(|b| tape.param(store, b));
        tape.linear(x, w, b)
    }

    /// MACs for `rows` input vectors.
    pub fn macs(&self, rows: usize) -> u64 {
        (rows * self.in_features * self.out_features) as u64
    }

    pub fn params(&self) -> Vec<ParamId> {
        std::iter::once(self.weight).chain(self.bias).collect()
    }
}
