use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};

use super::Tensor;

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Adjoint rule of one recorded op: receives the output gradient and the
/// values of every node on the tape, and accumulates into parent gradients.
pub(crate) type BackwardFn = Box<dyn Fn(&[f32], &[Tensor], &mut Grads)>;

struct Node {
    requires_grad: bool,
    param: Option<ParamId>,
    backward: Option<BackwardFn>,
}

/// Gradient buffers for one backward sweep.
pub(crate) struct Grads {
    bufs: Vec<Option<Vec<f32>>>,
    requires: Vec<bool>,
    lens: Vec<usize>,
}

impl Grads {
    /// Mutable gradient buffer of `v`, zero-initialised on first touch.
    /// `None` when `v` does not require a gradient.
    pub(crate) fn slot(&mut self, v: Var) -> Option<&mut [f32]> {
        if !self.requires[v.0] {
            return None;
        }
        let len = self.lens[v.0];
        Some(self.bufs[v.0].get_or_insert_with(|| vec![0.0; len]))
    }

    pub(crate) fn wants(&self, v: Var) -> bool {
        self.requires[v.0]
    }

    pub(crate) fn add(&mut self, v: Var, g: &[f32]) {
        if let Some(slot) = self.slot(v) {
            for (s, &x) in slot.iter_mut().zip(g) {
                *s += x;
            }
        }
    }
}

/// Reverse-mode gradient tape.
///
/// Nodes are appended in evaluation order, so insertion order is a valid
/// topological order and the backward sweep simply walks it in reverse.
/// Leaf gradients persist across `backward` calls and accumulate; interior
/// gradients are rebuilt on every sweep.
pub struct Tape {
    values: Vec<Tensor>,
    nodes: Vec<Node>,
    leaf_grads: Vec<Option<Vec<f32>>>,
    grad_enabled: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            values: Vec::new(),
            nodes: Vec::new(),
            leaf_grads: Vec::new(),
            grad_enabled: true,
        }
    }

    /// A tape that never records adjoints. Used for evaluation.
    pub fn inference() -> Self {
        Self {
            grad_enabled: false,
            ..Self::new()
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Constant input; never receives a gradient.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, false, None)
    }

    /// Free leaf, optionally tracked for gradients.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        let rg = requires_grad && self.grad_enabled;
        self.push_leaf(value, rg, None)
    }

    /// Registers a parameter. Its gradient flows into the store on
    /// [`Tape::backward_into`].
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let entry = store.entry(id);
        let rg = self.grad_enabled && entry.kind.is_trainable();
        self.push_leaf(entry.value.clone(), rg, Some(id))
    }

    /// Copy of `v` cut off from the graph.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.values[v.0].clone();
        self.input(value)
    }

    fn push_leaf(&mut self, value: Tensor, requires_grad: bool, param: Option<ParamId>) -> Var {
        self.values.push(value);
        self.nodes.push(Node {
            requires_grad,
            param,
            backward: None,
        });
        self.leaf_grads.push(None);
        Var(self.values.len() - 1)
    }

    pub(crate) fn push(
        &mut self,
        value: Tensor,
        parents: &[Var],
        backward: impl Fn(&[f32], &[Tensor], &mut Grads) + 'static,
    ) -> Var {
        let rg = self.grad_enabled && parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.values.push(value);
        self.nodes.push(Node {
            requires_grad: rg,
            param: None,
            backward: rg.then(|| Box::new(backward) as BackwardFn),
        });
        self.leaf_grads.push(None);
        Var(self.values.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.values[v.0]
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.values[v.0].shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf, if any sweep reached it.
    pub fn grad(&self, v: Var) -> Option<&[f32]> {
        self.leaf_grads[v.0].as_deref()
    }

    /// Backpropagates a scalar loss; leaf gradients accumulate on the tape.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        self.check_scalar(loss)?;
        self.sweep(loss, vec![1.0], None);
        Ok(())
    }

    /// Backpropagates a scalar loss and accumulates parameter gradients
    /// into `store`.
    pub fn backward_into(&mut self, loss: Var, store: &mut ParamStore) -> Result<()> {
        self.check_scalar(loss)?;
        self.sweep(loss, vec![1.0], Some(store));
        Ok(())
    }

    /// Vector-Jacobian product: backpropagates `seed` as the gradient of `out`.
    pub fn backward_with_grad(&mut self, out: Var, seed: Vec<f32>) -> Result<()> {
        if seed.len() != self.values[out.0].numel() {
            return Err(Error::shape(
                "backward_with_grad",
                self.values[out.0].shape(),
                &[seed.len()],
            ));
        }
        self.sweep(out, seed, None);
        Ok(())
    }

    fn check_scalar(&self, loss: Var) -> Result<()> {
        let value = &self.values[loss.0];
        if !value.is_scalar() {
            return Err(Error::NonScalarLoss(value.shape().to_vec()));
        }
        Ok(())
    }

    fn sweep(&mut self, out: Var, seed: Vec<f32>, mut store: Option<&mut ParamStore>) {
        if !self.nodes[out.0].requires_grad {
            return;
        }
        let n = out.0 + 1;
        let mut grads = Grads {
            bufs: vec![None; n],
            requires: self.nodes[..n].iter().map(|nd| nd.requires_grad).collect(),
            lens: self.values[..n].iter().map(Tensor::numel).collect(),
        };
        grads.bufs[out.0] = Some(seed);
        for i in (0..n).rev() {
            let Some(g) = grads.bufs[i].take() else {
                continue;
            };
            let node = &self.nodes[i];
            match &node.backward {
                Some(f) => f(&g, &self.values, &mut grads),
                None => {
                    if let (Some(id), Some(store)) = (node.param, store.as_deref_mut()) {
                        store.accumulate_grad(id, &g);
                    }
                    match &mut self.leaf_grads[i] {
                        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                        slot @ None => *slot = Some(g),
                    }
                }
            }
        }
    }
}
