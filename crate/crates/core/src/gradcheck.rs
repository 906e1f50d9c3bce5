//! Finite-difference check of every differentiable tape operation, plus
//! attention and one end-to-end residual block with its training losses.

use std::cell::RefCell;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{finite_difference_check, BnStats, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::nn::{BasicBlock, Linear, MultiHeadAttention};
use crate::params::ParamStore;

/// Finite-difference step.
pub const SUITE_EPS: f32 = 1e-3;
/// Largest accepted relative error.
pub const SUITE_TOLERANCE: f64 = 1e-3;

/// Every entry of the suite report, in order.
pub const SUITE_OPS: [&str; 31] = [
    "add",
    "sub",
    "mul",
    "add_scalar",
    "mul_scalar",
    "reshape",
    "flatten",
    "relu",
    "gelu",
    "sum",
    "mean",
    "matmul",
    "bmm",
    "bmm_nt",
    "linear",
    "conv2d",
    "avgpool2d",
    "global_avgpool",
    "log_softmax",
    "softmax",
    "cross_entropy",
    "kl_divergence",
    "batch_norm",
    "layer_norm",
    "split_heads",
    "merge_heads",
    "patchify",
    "prepend_token",
    "select_token",
    "attention",
    "residual_block_ce_kl",
];

/// Worst relative error over all checks of one operation.
#[derive(Clone, Debug, PartialEq)]
pub struct OpReport {
    pub op: &'static str,
    pub max_rel_error: f64,
    /// Number of inputs checked.
    pub checks: usize,
}

impl OpReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < SUITE_TOLERANCE
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteReport {
    pub ops: Vec<OpReport>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.ops.iter().all(OpReport::passed)
    }

    pub fn failures(&self) -> Vec<&OpReport> {
        self.ops.iter().filter(|r| !r.passed()).collect()
    }
}

struct Suite {
    rng: ChaCha8Rng,
    fault: Option<String>,
    ops: Vec<OpReport>,
}

impl Suite {
    /// Values in `±[0.1, 1]`, away from the kink of relu.
    fn tensor(&mut self, shape: &[usize]) -> Tensor {
        let rng = &mut self.rng;
        Tensor::from_fn(shape, |_| {
            let m: f32 = rng.random_range(0.1..1.0);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
    }

    fn check<F>(&mut self, op: &'static str, x: &Tensor, f: F) -> Result<()>
    where
        F: Fn(&mut Tape, Var) -> Result<Var>,
    {
        let faulty = self.fault.as_deref() == Some(op);
        let check = finite_difference_check(
            |t, v| {
                let y = f(t, v)?;
                if faulty {
                    halve_adjoint(t, y)
                } else {
                    Ok(y)
                }
            },
            x,
            SUITE_EPS,
        )?;
        match self.ops.iter_mut().find(|r| r.op == op) {
            Some(r) => {
                r.max_rel_error = r.max_rel_error.max(check.max_rel_error);
                r.checks += 1;
            }
            None => self.ops.push(OpReport {
                op,
                max_rel_error: check.max_rel_error,
                checks: 1,
            }),
        }
        Ok(())
    }
}

/// Same value as `y`, half its gradient: `0.5·y + detach(0.5·y)`.
fn halve_adjoint(t: &mut Tape, y: Var) -> Result<Var> {
    let half = t.mul_scalar(y, 0.5);
    let frozen = t.detach(half);
    t.add(half, frozen)
}

/// Runs every check. `fault` names one operation whose adjoint is
/// deliberately corrupted, to exercise the failure path.
pub fn run_suite(fault: Option<&str>) -> Result<SuiteReport> {
    if let Some(op) = fault {
        if !SUITE_OPS.contains(&op) {
            return Err(Error::invalid("gradcheck", format!("unknown operation {op:?}")));
        }
    }
    let mut s = Suite {
        rng: ChaCha8Rng::seed_from_u64(0x6ad),
        fault: fault.map(str::to_owned),
        ops: Vec::new(),
    };
    elementwise(&mut s)?;
    linalg(&mut s)?;
    conv(&mut s)?;
    losses(&mut s)?;
    norms(&mut s)?;
    tokens(&mut s)?;
    attention(&mut s)?;
    composite(&mut s)?;
    Ok(SuiteReport { ops: s.ops })
}

fn elementwise(s: &mut Suite) -> Result<()> {
    let x = s.tensor(&[3, 4]);
    for (op, b) in [("add", s.tensor(&[3, 4])), ("sub", s.tensor(&[4])), ("mul", s.tensor(&[3, 4]))] {
        let bb = b.clone();
        s.check(op, &x, move |t, x| {
            let b = t.input(bb.clone());
            match op {
                "add" => t.add(x, b),
                "sub" => t.sub(x, b),
                _ => t.mul(x, b),
            }
        })?;
        // gradient through the broadcast or second operand
        let xx = x.clone();
        let b = if op == "sub" { s.tensor(&[4]) } else { b };
        s.check(op, &b, move |t, b| {
            let x = t.input(xx.clone());
            match op {
                "add" => t.add(x, b),
                "sub" => t.sub(x, b),
                _ => t.mul(x, b),
            }
        })?;
    }
    s.check("add_scalar", &x, |t, x| Ok(t.add_scalar(x, 0.3)))?;
    s.check("mul_scalar", &x, |t, x| Ok(t.mul_scalar(x, -1.7)))?;
    s.check("reshape", &x, |t, x| t.reshape(x, &[2, 6]))?;
    let x4 = s.tensor(&[2, 2, 2, 2]);
    s.check("flatten", &x4, |t, x| t.flatten(x))?;
    s.check("relu", &x, |t, x| Ok(t.relu(x)))?;
    s.check("gelu", &x, |t, x| Ok(t.gelu(x)))?;
    s.check("sum", &x, |t, x| Ok(t.sum(x)))?;
    s.check("mean", &x, |t, x| Ok(t.mean(x)))
}

fn linalg(s: &mut Suite) -> Result<()> {
    let (a, b) = (s.tensor(&[4, 3]), s.tensor(&[3, 5]));
    let bc = b.clone();
    s.check("matmul", &a, move |t, a| {
        let b = t.input(bc.clone());
        t.matmul(a, b)
    })?;
    let ac = a.clone();
    s.check("matmul", &b, move |t, b| {
        let a = t.input(ac.clone());
        t.matmul(a, b)
    })?;
    let (a, b, bt) = (s.tensor(&[2, 3, 4]), s.tensor(&[2, 4, 2]), s.tensor(&[2, 5, 4]));
    for (op, other) in [("bmm", b), ("bmm_nt", bt)] {
        let oc = other.clone();
        let run = move |t: &mut Tape, a: Var, b: Var| if op == "bmm" { t.bmm(a, b) } else { t.bmm_nt(a, b) };
        s.check(op, &a, move |t, a| {
            let b = t.input(oc.clone());
            run(t, a, b)
        })?;
        let ac = a.clone();
        s.check(op, &other, move |t, b| {
            let a = t.input(ac.clone());
            run(t, a, b)
        })?;
    }
    let (x, w, bias) = (s.tensor(&[2, 3, 4]), s.tensor(&[4, 3]), s.tensor(&[3]));
    let (wc, bc) = (w.clone(), bias.clone());
    s.check("linear", &x, move |t, x| {
        let (w, b) = (t.input(wc.clone()), t.input(bc.clone()));
        t.linear(x, w, Some(b))
    })?;
    let (xc, bc) = (x.clone(), bias.clone());
    s.check("linear", &w, move |t, w| {
        let (x, b) = (t.input(xc.clone()), t.input(bc.clone()));
        t.linear(x, w, Some(b))
    })?;
    let (xc, wc) = (x, w);
    s.check("linear", &bias, move |t, b| {
        let (x, w) = (t.input(xc.clone()), t.input(wc.clone()));
        t.linear(x, w, Some(b))
    })
}

fn conv(s: &mut Suite) -> Result<()> {
    let (x, w, b) = (s.tensor(&[2, 3, 5, 5]), s.tensor(&[4, 3, 3, 3]), s.tensor(&[4]));
    for (stride, padding) in [(1, 1), (2, 0)] {
        let (wc, bc) = (w.clone(), b.clone());
        s.check("conv2d", &x, move |t, x| {
            let (w, b) = (t.input(wc.clone()), t.input(bc.clone()));
            t.conv2d(x, w, Some(b), stride, padding)
        })?;
        let (xc, bc) = (x.clone(), b.clone());
        s.check("conv2d", &w, move |t, w| {
            let (x, b) = (t.input(xc.clone()), t.input(bc.clone()));
            t.conv2d(x, w, Some(b), stride, padding)
        })?;
        let (xc, wc) = (x.clone(), w.clone());
        s.check("conv2d", &b, move |t, b| {
            let (x, w) = (t.input(xc.clone()), t.input(wc.clone()));
            t.conv2d(x, w, Some(b), stride, padding)
        })?;
    }
    let x = s.tensor(&[2, 2, 4, 4]);
    s.check("avgpool2d", &x, |t, x| t.avgpool2d(x, 2, 2))?;
    s.check("global_avgpool", &x, |t, x| t.global_avgpool(x))
}

fn losses(s: &mut Suite) -> Result<()> {
    let x = s.tensor(&[3, 5]);
    s.check("log_softmax", &x, |t, x| t.log_softmax(x, 1))?;
    s.check("log_softmax", &x, |t, x| t.log_softmax(x, 0))?;
    s.check("softmax", &x, |t, x| t.softmax(x))?;
    s.check("cross_entropy", &x, |t, x| t.cross_entropy(x, &[4, 0, 2]))?;
    let teacher = s.tensor(&[3, 5]);
    for temperature in [1.0, 2.5] {
        let tc = teacher.clone();
        s.check("kl_divergence", &x, move |t, x| {
            let p = t.input(tc.clone());
            t.kl_divergence(p, x, temperature)
        })?;
    }
    Ok(())
}

fn norms(s: &mut Suite) -> Result<()> {
    let x = s.tensor(&[3, 2, 2, 2]);
    let (gamma, beta) = (s.tensor(&[2]), s.tensor(&[2]));
    for train in [true, false] {
        let (g, b) = (gamma.clone(), beta.clone());
        s.check("batch_norm", &x, move |t, x| {
            let (g, b) = (t.input(g.clone()), t.input(b.clone()));
            let (mut mean, mut var) = (vec![0.1, -0.2], vec![0.8, 1.3]);
            let stats = if train {
                BnStats::Train {
                    running_mean: &mut mean,
                    running_var: &mut var,
                    momentum: 0.1,
                }
            } else {
                BnStats::Eval {
                    running_mean: &mean,
                    running_var: &var,
                }
            };
            t.batch_norm(x, g, b, stats, 1e-5)
        })?;
    }
    let xc = x.clone();
    let bc = beta.clone();
    s.check("batch_norm", &gamma, move |t, g| {
        let (x, b) = (t.input(xc.clone()), t.input(bc.clone()));
        let (mut mean, mut var) = (vec![0.0; 2], vec![1.0; 2]);
        let stats = BnStats::Train {
            running_mean: &mut mean,
            running_var: &mut var,
            momentum: 0.1,
        };
        t.batch_norm(x, g, b, stats, 1e-5)
    })?;
    let x = s.tensor(&[2, 3, 4]);
    let (gamma, beta) = (s.tensor(&[4]), s.tensor(&[4]));
    let (g, b) = (gamma.clone(), beta.clone());
    s.check("layer_norm", &x, move |t, x| {
        let (g, b) = (t.input(g.clone()), t.input(b.clone()));
        t.layer_norm(x, g, b, 1e-6)
    })?;
    let xc = x;
    s.check("layer_norm", &gamma, move |t, g| {
        let (x, b) = (t.input(xc.clone()), t.input(beta.clone()));
        t.layer_norm(x, g, b, 1e-6)
    })
}

fn tokens(s: &mut Suite) -> Result<()> {
    let x = s.tensor(&[2, 3, 4]);
    s.check("split_heads", &x, |t, x| t.split_heads(x, 2))?;
    let h = s.tensor(&[4, 3, 2]);
    s.check("merge_heads", &h, |t, x| t.merge_heads(x, 2))?;
    let img = s.tensor(&[2, 2, 4, 4]);
    s.check("patchify", &img, |t, x| t.patchify(x, 2))?;
    let tok = s.tensor(&[4]);
    let tc = tok.clone();
    s.check("prepend_token", &x, move |t, x| {
        let tok = t.input(tc.clone());
        t.prepend_token(x, tok)
    })?;
    let xc = x.clone();
    s.check("prepend_token", &tok, move |t, tok| {
        let x = t.input(xc.clone());
        t.prepend_token(x, tok)
    })?;
    s.check("select_token", &x, |t, x| t.select_token(x, 1))
}

fn attention(s: &mut Suite) -> Result<()> {
    let mut store = ParamStore::new();
    let mha = MultiHeadAttention::new(&mut store, "attn", 4, 2, &mut s.rng)?;
    // larger weights give attention maps far from uniform
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let v = s.tensor(store.value(id).shape());
        *store.value_mut(id) = v;
    }
    let x = s.tensor(&[2, 3, 4]);
    s.check("attention", &x, |t, x| mha.forward(t, &store, x))
}

/// conv → switchable norm → relu → conv → norm → residual add → pooled
/// linear head → cross-entropy plus KL towards fixed teacher logits.
fn composite(s: &mut Suite) -> Result<()> {
    let store = RefCell::new(ParamStore::new());
    let block = BasicBlock::new(&mut store.borrow_mut(), "block", 2, 2, 1, true, &mut s.rng);
    let head = Linear::new(&mut store.borrow_mut(), "head", 2, 3, 1.0, &mut s.rng);
    let x = s.tensor(&[3, 2, 4, 4]);
    let teacher = s.tensor(&[3, 3]);
    s.check("residual_block_ce_kl", &x, |t, x| {
        let mut store = store.borrow_mut();
        let out = block.forward(t, &mut store, x, 1, true)?;
        let pooled = t.global_avgpool(out.out)?;
        let logits = head.forward(t, &store, pooled)?;
        let ce = t.cross_entropy(logits, &[0, 2, 1])?;
        let p = t.input(teacher.clone());
        let kl = t.kl_divergence(p, logits, 1.0)?;
        t.add(ce, kl)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes_and_lists_every_op_once() {
        let report = run_suite(None).unwrap();
        let names: Vec<&str> = report.ops.iter().map(|r| r.op).collect();
        assert_eq!(names, SUITE_OPS);
        for r in &report.ops {
            assert!(r.passed(), "{} {:e}", r.op, r.max_rel_error);
        }
    }

    #[test]
    fn injected_fault_is_named() {
        let report = run_suite(Some("conv2d")).unwrap();
        let failed: Vec<&str> = report.failures().iter().map(|r| r.op).collect();
        assert_eq!(failed, ["conv2d"]);
        assert!(run_suite(Some("nope")).is_err());
    }
}
