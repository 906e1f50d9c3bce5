use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};

use super::block::BlockOutput;
use super::layers::Linear;
use super::norm::{NormKind, SwitchableNorm};

const INIT_STD: f32 = 0.02;

/// Global multi-head self-attention over `[N,T,D]` tokens.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub num_heads: usize,
    pub head_dim: usize,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
}

impl MultiHeadAttention {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        num_heads: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if num_heads == 0 || dim % num_heads != 0 {
            return Err(Error::Config(format!(
                "embedding dim {dim} is not divisible by {num_heads} heads"
            )));
        }
        let mut lin = |n: &str| Linear::new(store, &format!("{name}.{n}"), dim, dim, INIT_STD, rng);
        Ok(Self {
            num_heads,
            head_dim: dim / num_heads,
            q: lin("q"),
            k: lin("k"),
            v: lin("v"),
            out: lin("out"),
        })
    }

    pub fn dim(&self) -> usize {
        self.num_heads * self.head_dim
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        Ok(self.forward_with_weights(tape, store, x)?.0)
    }

    /// Output `[N,T,D]` and the attention weights `[N·H,T,T]`.
    pub fn forward_with_weights(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: Var,
    ) -> Result<(Var, Var)> {
        let shape = tape.shape(x).to_vec();
        if shape.len() != 3 || shape[2] != self.dim() {
            return Err(Error::invalid(
                "attention",
                format!("expected [N, T, {}], got {shape:?}", self.dim()),
            ));
        }
        let heads = self.num_heads;
        let q = self.q.forward(tape, store, x)?;
        let q = tape.split_heads(q, heads)?;
        let k = self.k.forward(tape, store, x)?;
        let k = tape.split_heads(k, heads)?;
        let v = self.v.forward(tape, store, x)?;
        let v = tape.split_heads(v, heads)?;
        let scores = tape.bmm_nt(q, k)?;
        let scores = tape.mul_scalar(scores, 1.0 / (self.head_dim as f32).sqrt());
        let weights = tape.softmax(scores)?;
        let ctx = tape.bmm(weights, v)?;
        let ctx = tape.merge_heads(ctx, heads)?;
        let out = self.out.forward(tape, store, ctx)?;
        Ok((out, weights))
    }

    /// Per-sample MACs for `tokens` tokens: four projections, scores and
    /// context.
    pub fn macs(&self, tokens: usize) -> u64 {
        let d = self.dim();
        (4 * tokens * d * d + 2 * tokens * tokens * d) as u64
    }

    pub fn params(&self) -> Vec<ParamId> {
        [&self.q, &self.k, &self.v, &self.out]
            .into_iter()
            .flat_map(Linear::params)
            .collect()
    }
}

/// Pre-norm transformer encoder block: `x + attn(norm1(x))`, then
/// `+ mlp(norm2(·))`.
#[derive(Clone, Debug)]
pub struct EncoderBlock {
    pub norm1: SwitchableNorm,
    pub attn: MultiHeadAttention,
    pub norm2: SwitchableNorm,
    pub fc1: Linear,
    pub fc2: Linear,
}

impl EncoderBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        heads: usize,
        mlp_hidden: usize,
        switchable: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let norm = |store: &mut ParamStore, n: &str| {
            let full = format!("{name}.{n}");
            if switchable {
                SwitchableNorm::switchable(store, &full, NormKind::LayerNorm, dim)
            } else {
                SwitchableNorm::plain(store, &full, NormKind::LayerNorm, dim)
            }
        };
        let norm1 = norm(store, "norm1");
        let attn = MultiHeadAttention::new(store, &format!("{name}.attn"), dim, heads, rng)?;
        let norm2 = norm(store, "norm2");
        let fc1 = Linear::new(store, &format!("{name}.fc1"), dim, mlp_hidden, INIT_STD, rng);
        let fc2 = Linear::new(store, &format!("{name}.fc2"), mlp_hidden, dim, INIT_STD, rng);
        Ok(Self {
            norm1,
            attn,
            norm2,
            fc1,
            fc2,
        })
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &mut ParamStore,
        h: Var,
        mode: usize,
        training: bool,
    ) -> Result<BlockOutput> {
        let y = self.norm1.forward(tape, store, h, mode, training)?;
        let y = self.attn.forward(tape, store, y)?;
        let h1 = tape.add(h, y)?;
        let y = self.norm2.forward(tape, store, h1, mode, training)?;
        let y = self.fc1.forward(tape, store, y)?;
        let y = tape.gelu(y);
        let y = self.fc2.forward(tape, store, y)?;
        let out = tape.add(h1, y)?;
        Ok(BlockOutput { out, shortcut: h })
    }

    /// Per-sample MACs for `[T, D]` tokens.
    pub fn macs(&self, tokens: usize) -> u64 {
        self.attn.macs(tokens) + self.fc1.macs(tokens) + self.fc2.macs(tokens)
    }

    pub fn norms(&self) -> Vec<&SwitchableNorm> {
        vec![&self.norm1, &self.norm2]
    }

    pub fn params(&self, mode: usize) -> Vec<ParamId> {
        let mut ids = self.attn.params();
        ids.extend(self.fc1.params());
        ids.extend(self.fc2.params());
        for n in self.norms() {
            ids.extend(n.params(mode));
        }
        ids
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use crate::autodiff::Tensor;

    use super::*;

    #[test]
    fn attention_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut store = ParamStore::new();
        let mha = MultiHeadAttention::new(&mut store, "mha", 8, 2, &mut rng).unwrap();
        let mut tape = Tape::new();
        let x = tape.input(Tensor::randn(&[2, 5, 8], 1.0, &mut rng));
        let (out, w) = mha.forward_with_weights(&mut tape, &store, x).unwrap();
        assert_eq!(tape.shape(out), &[2, 5, 8]);
        assert_eq!(tape.shape(w), &[4, 5, 5]);
        for row in tape.value(w).data().chunks(5) {
            assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn single_token_attends_to_itself() {
        // with T = 1 the weight is exactly 1, so the output is out(v(x))
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::new();
        let mha = MultiHeadAttention::new(&mut store, "mha", 4, 2, &mut rng).unwrap();
        let mut tape = Tape::new();
        let x = tape.input(Tensor::randn(&[3, 1, 4], 1.0, &mut rng));
        let (out, w) = mha.forward_with_weights(&mut tape, &store, x).unwrap();
        assert!(tape.value(w).data().iter().all(|&v| v == 1.0));
        let v = mha.v.forward(&mut tape, &store, x).unwrap();
        let direct = mha.out.forward(&mut tape, &store, v).unwrap();
        for (a, b) in tape.value(out).data().iter().zip(tape.value(direct).data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn rejects_indivisible_heads_and_wrong_dim() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut store = ParamStore::new();
        assert!(MultiHeadAttention::new(&mut store, "a", 6, 4, &mut rng).is_err());
        let mha = MultiHeadAttention::new(&mut store, "b", 8, 2, &mut rng).unwrap();
        let mut tape = Tape::new();
        let x = tape.input(Tensor::zeros(&[1, 3, 6]));
        assert!(mha.forward(&mut tape, &store, x).is_err());
    }
}
