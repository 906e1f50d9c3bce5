use crate::error::{Error, Result};

use super::{Tape, Tensor, Var};

/// Row-major matrix view: data plus (row stride, col stride).
#[derive(Clone, Copy)]
pub(crate) struct MatRef<'a> {
    pub data: &'a [f32],
    pub rs: isize,
    pub cs: isize,
}

impl<'a> MatRef<'a> {
    pub fn rows(data: &'a [f32], cols: usize) -> Self {
        Self {
            data,
            rs: cols as isize,
            cs: 1,
        }
    }

    pub fn t(self) -> Self {
        Self {
            data: self.data,
            rs: self.cs,
            cs: self.rs,
        }
    }
}

/// `c = beta * c + a · b` with `a: m×k`, `b: k×n`, `c: m×n` row-major.
pub(crate) fn gemm(m: usize, k: usize, n: usize, a: MatRef, b: MatRef, beta: f32, c: &mut [f32]) {
    debug_assert!(c.len() >= m * n);
    // SAFETY: strides describe in-bounds accesses for the given dims; every
    // caller passes buffers of at least m·k, k·n and m·n elements.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            a.rs,
            a.cs,
            b.data.as_ptr(),
            b.rs,
            b.cs,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// The `i`-th matrix of a batched operand, viewed as `k×n`.
fn batch_matrix(data: &[f32], i: usize, k: usize, n: usize, trans: bool) -> MatRef<'_> {
    let slice = &data[i * k * n..(i + 1) * k * n];
    if trans {
        MatRef::rows(slice, k).t()
    } else {
        MatRef::rows(slice, n)
    }
}

impl Tape {
    /// `[m,k] · [k,n] -> [m,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            MatRef::rows(self.value(a).data(), k),
            MatRef::rows(self.value(b).data(), n),
            0.0,
            &mut out,
        );
        let value = Tensor::from_parts(vec![m, n], out);
        Ok(self.push(value, &[a, b], move |g, vals, grads| {
            let gm = MatRef::rows(g, n);
            if grads.wants(a) {
                let bv = MatRef::rows(vals[b.0].data(), n);
                let da = grads.slot(a).expect("wanted");
                gemm(m, n, k, gm, bv.t(), 1.0, da);
            }
            if grads.wants(b) {
                let av = MatRef::rows(vals[a.0].data(), k);
                let db = grads.slot(b).expect("wanted");
                gemm(k, m, n, av.t(), gm, 1.0, db);
            }
        }))
    }

    /// Batched product `[B,m,k] · [B,k,n] -> [B,m,n]`.
    pub fn bmm(&mut self, a: Var, b: Var) -> Result<Var> {
        self.batched(a, b, false)
    }

    /// Batched product with the second operand transposed:
    /// `[B,m,k] · [B,n,k]ᵀ -> [B,m,n]`.
    pub fn bmm_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.batched(a, b, true)
    }

    fn batched(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let name = if trans_b { "bmm_nt" } else { "bmm" };
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] {
            return Err(Error::shape(name, sa, sb));
        }
        let (bs, m, k) = (sa[0], sa[1], sa[2]);
        let (kb, n) = if trans_b { (sb[2], sb[1]) } else { (sb[1], sb[2]) };
        if kb != k {
            return Err(Error::shape(name, sa, sb));
        }
        let mut out = vec![0.0; bs * m * n];
        {
            let (av, bv) = (self.value(a).data(), self.value(b).data());
            for i in 0..bs {
                gemm(
                    m,
                    k,
                    n,
                    MatRef::rows(&av[i * m * k..(i + 1) * m * k], k),
                    batch_matrix(bv, i, k, n, trans_b),
                    0.0,
                    &mut out[i * m * n..(i + 1) * m * n],
                );
            }
        }
        let value = Tensor::from_parts(vec![bs, m, n], out);
        Ok(self.push(value, &[a, b], move |g, vals, grads| {
            let (av, bv) = (vals[a.0].data(), vals[b.0].data());
            if let Some(da) = grads.slot(a) {
                for i in 0..bs {
                    let gi = MatRef::rows(&g[i * m * n..(i + 1) * m * n], n);
                    gemm(m, n, k, gi, batch_matrix(bv, i, k, n, trans_b).t(), 1.0, &mut da[i * m * k..(i + 1) * m * k]);
                }
            }
            if let Some(db) = grads.slot(b) {
                for i in 0..bs {
                    let gi = MatRef::rows(&g[i * m * n..(i + 1) * m * n], n);
                    let ai = MatRef::rows(&av[i * m * k..(i + 1) * m * k], k);
                    let dbi = &mut db[i * k * n..(i + 1) * k * n];
                    if trans_b {
                        // d(Bᵀ) = Aᵀ·G, so dB = Gᵀ·A  (n×k)
                        gemm(n, m, k, gi.t(), ai, 1.0, dbi);
                    } else {
                        gemm(k, m, n, ai.t(), gi, 1.0, dbi);
                    }
                }
            }
        }))
    }

    /// Affine map over the last axis: `x[..., in] · w[in, out] + b[out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let d_in = *shape.last().expect("rank >= 1");
        let rows = self.value(x).numel() / d_in;
        let x2 = self.reshape(x, &[rows, d_in])?;
        let mut y = self.matmul(x2, w)?;
        if let Some(b) = b {
            y = self.add(y, b)?;
        }
        let mut out_shape = shape;
        *out_shape.last_mut().expect("rank >= 1") = self.shape(y)[1];
        self.reshape(y, &out_shape)
    }
}
