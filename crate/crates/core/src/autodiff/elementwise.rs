use crate::error::{Error, Result};

use super::{Tape, Tensor, Var};

/// Period with which `b` repeats over `a`, if `b` (ignoring leading unit
/// dims) matches the trailing dims of `a`.
fn broadcast_period(a: &[usize], b: &[usize]) -> Option<usize> {
    let lead = b.iter().take_while(|&&d| d == 1).count();
    let core = &b[lead..];
    if core.len() > a.len() || a[a.len() - core.len()..] != *core {
        // all-ones b (e.g. [1]) broadcasts as a scalar
        return core.is_empty().then_some(1);
    }
    Some(core.iter().product())
}

#[derive(Clone, Copy)]
enum BinOp {
    Add,
    Sub,
    Mul,
}

impl Tape {
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, BinOp::Add, "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, BinOp::Sub, "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, BinOp::Mul, "mul")
    }

    fn binary(&mut self, a: Var, b: Var, op: BinOp, name: &'static str) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let (a, b, sa, sb) = match broadcast_period(&sa, &sb) {
            Some(_) => (a, b, sa, sb),
            // add/mul commute, so the broadcast operand may come first
            None if !matches!(op, BinOp::Sub) && broadcast_period(&sb, &sa).is_some() => {
                (b, a, sb, sa)
            }
            None => return Err(Error::shape(name, &sa, &sb)),
        };
        let period = broadcast_period(&sa, &sb).expect("checked above");
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let out: Vec<f32> = av
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let y = bv[i % period];
                match op {
                    BinOp::Add => x + y,
                    BinOp::Sub => x - y,
                    BinOp::Mul => x * y,
                }
            })
            .collect();
        let value = Tensor::from_parts(sa, out);
        Ok(self.push(value, &[a, b], move |g, vals, grads| {
            if grads.wants(a) {
                let bv = vals[b.0].data();
                let da = grads.slot(a).expect("wanted");
                match op {
                    BinOp::Add | BinOp::Sub => da.iter_mut().zip(g).for_each(|(d, &gi)| *d += gi),
                    BinOp::Mul => {
                        for (i, (d, &gi)) in da.iter_mut().zip(g).enumerate() {
                            *d += gi * bv[i % period];
                        }
                    }
                }
            }
            if grads.wants(b) {
                let av = vals[a.0].data();
                let db = grads.slot(b).expect("wanted");
                for (i, &gi) in g.iter().enumerate() {
                    db[i % period] += match op {
                        BinOp::Add => gi,
                        BinOp::Sub => -gi,
                        BinOp::Mul => gi * av[i],
                    };
                }
            }
        }))
    }

    pub fn add_scalar(&mut self, a: Var, s: f32) -> Var {
        let value = self.map(a, |x| x + s);
        self.push(value, &[a], move |g, _, grads| grads.add(a, g))
    }

    pub fn mul_scalar(&mut self, a: Var, s: f32) -> Var {
        let value = self.map(a, |x| x * s);
        self.push(value, &[a], move |g, _, grads| {
            if let Some(da) = grads.slot(a) {
                da.iter_mut().zip(g).for_each(|(d, &gi)| *d += gi * s);
            }
        })
    }

    fn map(&self, a: Var, f: impl Fn(f32) -> f32) -> Tensor {
        let t = self.value(a);
        Tensor::from_parts(t.shape().to_vec(), t.data().iter().map(|&x| f(x)).collect())
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).clone().reshape(shape)?;
        Ok(self.push(value, &[a], move |g, _, grads| grads.add(a, g)))
    }

    /// `[N, ...] -> [N, prod(...)]`.
    pub fn flatten(&mut self, a: Var) -> Result<Var> {
        let shape = self.shape(a);
        let n = shape[0];
        let rest = shape[1..].iter().product();
        self.reshape(a, &[n, rest])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.map(a, |x| x.max(0.0));
        self.push(value, &[a], move |g, vals, grads| {
            let x = vals[a.0].data();
            if let Some(da) = grads.slot(a) {
                for ((d, &gi), &xi) in da.iter_mut().zip(g).zip(x) {
                    if xi > 0.0 {
                        *d += gi;
                    }
                }
            }
        })
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let value = self.map(a, gelu);
        self.push(value, &[a], move |g, vals, grads| {
            let x = vals[a.0].data();
            if let Some(da) = grads.slot(a) {
                for ((d, &gi), &xi) in da.iter_mut().zip(g).zip(x) {
                    *d += gi * gelu_grad(xi);
                }
            }
        })
    }

    /// Sum of all elements, as a `[1]` tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let s: f32 = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), &[a], move |g, _, grads| {
            if let Some(da) = grads.slot(a) {
                da.iter_mut().for_each(|d| *d += g[0]);
            }
        })
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).numel() as f32;
        let s = self.sum(a);
        self.mul_scalar(s, 1.0 / n)
    }
}

const SQRT_2_OVER_PI: f32 = 0.797_884_6;
const GELU_C: f32 = 0.044_715;

fn gelu(x: f32) -> f32 {
    0.5 * x * (1.0 + (SQRT_2_OVER_PI * (x + GELU_C * x * x * x)).tanh())
}

fn gelu_grad(x: f32) -> f32 {
    let u = SQRT_2_OVER_PI * (x + GELU_C * x * x * x);
    let t = u.tanh();
    let du = SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_C * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f32]) -> Tensor {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn add_elementwise() {
        let mut tape = Tape::new();
        let a = tape.input(t(&[2], &[1.0, 2.0]));
        let b = tape.input(t(&[2], &[3.0, 4.0]));
        let c = tape.add(a, b).unwrap();
        assert_eq!(tape.value(c).data(), &[4.0, 6.0]);
    }

    #[test]
    fn add_zero_is_bit_exact() {
        let mut tape = Tape::new();
        let data = [1.5e-7_f32, -3.25, 7.0e12, f32::MIN_POSITIVE];
        let a = tape.input(t(&[4], &data));
        let z = tape.input(Tensor::zeros(&[4]));
        let c = tape.add(a, z).unwrap();
        for (x, y) in tape.value(c).data().iter().zip(&data) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn broadcast_trailing_dims() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::from_fn(&[2, 3], |i| i as f32), true);
        let b = tape.leaf(t(&[3], &[10.0, 20.0, 30.0]), true);
        let c = tape.add(a, b).unwrap();
        assert_eq!(tape.value(c).data(), &[10.0, 21.0, 32.0, 13.0, 24.0, 35.0]);
        let s = tape.sum(c);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(b).unwrap(), &[2.0, 2.0, 2.0]);
        assert_eq!(tape.grad(a).unwrap(), &[1.0; 6]);
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.input(Tensor::zeros(&[2, 3]));
        let b = tape.input(Tensor::zeros(&[2]));
        let err = tape.sub(a, b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]") && err.contains("[2]"), "{err}");
    }

    #[test]
    fn grad_of_sum_of_product_is_other_factor() {
        let mut tape = Tape::new();
        let a = tape.leaf(t(&[3], &[1.0, -2.0, 0.5]), true);
        let b = tape.leaf(t(&[3], &[4.0, 0.25, -3.0]), true);
        let p = tape.mul(a, b).unwrap();
        let s = tape.sum(p);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(a).unwrap(), tape.value(b).data());
        assert_eq!(tape.grad(b).unwrap(), tape.value(a).data());
    }

    #[test]
    fn relu_clamps_negatives() {
        let mut tape = Tape::new();
        let a = tape.input(t(&[2], &[-1.0, 2.0]));
        let r = tape.relu(a);
        assert_eq!(tape.value(r).data(), &[0.0, 2.0]);
    }

    #[test]
    fn backward_of_sum_is_ones() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_fn(&[2, 2], |i| i as f32 - 1.5), true);
        let s = tape.sum(x);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1.0; 4]);
    }

    #[test]
    fn backward_twice_doubles() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[3], &[0.3, -1.2, 2.0]), true);
        let y = tape.gelu(x);
        let z = tape.mul(y, x).unwrap();
        let s = tape.sum(z);
        tape.backward(s).unwrap();
        let once = tape.grad(x).unwrap().to_vec();
        tape.backward(s).unwrap();
        let twice = tape.grad(x).unwrap();
        for (a, b) in once.iter().zip(twice) {
            assert_eq!(2.0 * a, *b);
        }
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(&[2]), true);
        assert!(tape.backward(x).is_err());
    }
}
