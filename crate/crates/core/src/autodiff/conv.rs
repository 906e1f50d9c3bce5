use crate::error::{Error, Result};

use super::linalg::{gemm, MatRef};
use super::{Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dGeometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2dGeometry {
    pub fn out_hw(&self) -> Option<(usize, usize)> {
        let ph = self.height + 2 * self.padding;
        let pw = self.width + 2 * self.padding;
        if self.stride == 0 || self.kernel_h > ph || self.kernel_w > pw {
            return None;
        }
        Some((
            (ph - self.kernel_h) / self.stride + 1,
            (pw - self.kernel_w) / self.stride + 1,
        ))
    }

    fn col_rows(&self) -> usize {
        self.channels * self.kernel_h * self.kernel_w
    }
}

/// Unfolds one `[C,H,W]` sample into `[C·kh·kw, Ho·Wo]`.
fn im2col(x: &[f32], g: &Conv2dGeometry, ho: usize, wo: usize, cols: &mut [f32]) {
    let (h, w, p, s) = (g.height as isize, g.width as isize, g.padding as isize, g.stride);
    let plane = ho * wo;
    let mut row = 0;
    for c in 0..g.channels {
        let xc = &x[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..g.kernel_h {
            for kj in 0..g.kernel_w {
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oi in 0..ho {
                    let ii = (oi * s + ki) as isize - p;
                    let line = &mut dst[oi * wo..(oi + 1) * wo];
                    if ii < 0 || ii >= h {
                        line.fill(0.0);
                        continue;
                    }
                    let src = &xc[ii as usize * g.width..(ii as usize + 1) * g.width];
                    for (oj, v) in line.iter_mut().enumerate() {
                        let jj = (oj * s + kj) as isize - p;
                        *v = if jj < 0 || jj >= w { 0.0 } else { src[jj as usize] };
                    }
                }
                row += 1;
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters columns back onto `[C,H,W]`.
fn col2im(cols: &[f32], g: &Conv2dGeometry, ho: usize, wo: usize, dx: &mut [f32]) {
    let (h, w, p, s) = (g.height as isize, g.width as isize, g.padding as isize, g.stride);
    let plane = ho * wo;
    let mut row = 0;
    for c in 0..g.channels {
        let dxc = &mut dx[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..g.kernel_h {
            for kj in 0..g.kernel_w {
                let src = &cols[row * plane..(row + 1) * plane];
                for oi in 0..ho {
                    let ii = (oi * s + ki) as isize - p;
                    if ii < 0 || ii >= h {
                        continue;
                    }
                    let dst = &mut dxc[ii as usize * g.width..(ii as usize + 1) * g.width];
                    for oj in 0..wo {
                        let jj = (oj * s + kj) as isize - p;
                        if jj >= 0 && jj < w {
                            dst[jj as usize] += src[oi * wo + oj];
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

impl Tape {
    /// 2-D cross-correlation. `x: [N,C,H,W]`, `w: [K,C,kh,kw]`, `bias: [K]`.
    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if sx.len() != 4 || sw.len() != 4 || sx[1] != sw[1] {
            return Err(Error::shape("conv2d", &sx, &sw));
        }
        if let Some(b) = bias {
            if self.shape(b) != [sw[0]] {
                return Err(Error::shape("conv2d bias", &sw, self.shape(b)));
            }
        }
        let geom = Conv2dGeometry {
            channels: sx[1],
            height: sx[2],
            width: sx[3],
            kernel_h: sw[2],
            kernel_w: sw[3],
            stride,
            padding,
        };
        let (ho, wo) = geom.out_hw().ok_or_else(|| {
            Error::invalid(
                "conv2d",
                format!("no valid output for input {sx:?}, kernel {sw:?}, stride {stride}, padding {padding}"),
            )
        })?;
        let (n, k) = (sx[0], sw[0]);
        let (rows, plane) = (geom.col_rows(), ho * wo);
        let in_per = geom.channels * geom.height * geom.width;

        let mut out = vec![0.0; n * k * plane];
        let mut cols = vec![0.0; rows * plane];
        {
            let xv = self.value(x).data();
            let wv = MatRef::rows(self.value(w).data(), rows);
            let bv = bias.map(|b| self.value(b).data());
            for i in 0..n {
                im2col(&xv[i * in_per..(i + 1) * in_per], &geom, ho, wo, &mut cols);
                let oi = &mut out[i * k * plane..(i + 1) * k * plane];
                gemm(k, rows, plane, wv, MatRef::rows(&cols, plane), 0.0, oi);
                if let Some(bv) = bv {
                    for (kk, chunk) in oi.chunks_mut(plane).enumerate() {
                        chunk.iter_mut().for_each(|v| *v += bv[kk]);
                    }
                }
            }
        }
        let value = Tensor::from_parts(vec![n, k, ho, wo], out);
        let parents: Vec<Var> = [Some(x), Some(w), bias].into_iter().flatten().collect();
        Ok(self.push(value, &parents, move |g, vals, grads| {
            let xv = vals[x.0].data();
            let wm = MatRef::rows(vals[w.0].data(), rows);
            let mut cols = vec![0.0; rows * plane];
            let mut dcols = vec![0.0; rows * plane];
            if let Some(b) = bias {
                if let Some(db) = grads.slot(b) {
                    for i in 0..n {
                        for (kk, chunk) in g[i * k * plane..(i + 1) * k * plane]
                            .chunks(plane)
                            .enumerate()
                        {
                            db[kk] += chunk.iter().sum::<f32>();
                        }
                    }
                }
            }
            if grads.wants(w) {
                let dw = grads.slot(w).expect("wanted");
                for i in 0..n {
                    im2col(&xv[i * in_per..(i + 1) * in_per], &geom, ho, wo, &mut cols);
                    let gi = MatRef::rows(&g[i * k * plane..(i + 1) * k * plane], plane);
                    gemm(k, plane, rows, gi, MatRef::rows(&cols, plane).t(), 1.0, dw);
                }
            }
            if let Some(dx) = grads.slot(x) {
                for i in 0..n {
                    let gi = MatRef::rows(&g[i * k * plane..(i + 1) * k * plane], plane);
                    gemm(rows, k, plane, wm.t(), gi, 0.0, &mut dcols);
                    col2im(&dcols, &geom, ho, wo, &mut dx[i * in_per..(i + 1) * in_per]);
                }
            }
        }))
    }

    /// Average pooling without padding.
    pub fn avgpool2d(&mut self, x: Var, kernel: usize, stride: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 || kernel == 0 || stride == 0 || kernel > s[2] || kernel > s[3] {
            return Err(Error::invalid(
                "avgpool2d",
                format!("kernel {kernel}, stride {stride} on {s:?}"),
            ));
        }
        let (nc, h, w) = (s[0] * s[1], s[2], s[3]);
        let (ho, wo) = ((h - kernel) / stride + 1, (w - kernel) / stride + 1);
        let scale = 1.0 / (kernel * kernel) as f32;
        let xv = self.value(x).data();
        let mut out = vec![0.0; nc * ho * wo];
        for p in 0..nc {
            let src = &xv[p * h * w..(p + 1) * h * w];
            for oi in 0..ho {
                for oj in 0..wo {
                    let mut acc = 0.0;
                    for ki in 0..kernel {
                        let row = &src[(oi * stride + ki) * w..];
                        acc += row[oj * stride..oj * stride + kernel].iter().sum::<f32>();
                    }
                    out[(p * ho + oi) * wo + oj] = acc * scale;
                }
            }
        }
        let value = Tensor::from_parts(vec![s[0], s[1], ho, wo], out);
        Ok(self.push(value, &[x], move |g, _, grads| {
            let Some(dx) = grads.slot(x) else { return };
            for p in 0..nc {
                for oi in 0..ho {
                    for oj in 0..wo {
                        let gv = g[(p * ho + oi) * wo + oj] * scale;
                        for ki in 0..kernel {
                            let base = p * h * w + (oi * stride + ki) * w + oj * stride;
                            dx[base..base + kernel].iter_mut().for_each(|d| *d += gv);
                        }
                    }
                }
            }
        }))
    }

    /// `[N,C,H,W] -> [N,C]` spatial mean.
    pub fn global_avgpool(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 {
            return Err(Error::invalid("global_avgpool", format!("expected rank 4, got {s:?}")));
        }
        let plane = s[2] * s[3];
        let scale = 1.0 / plane as f32;
        let out: Vec<f32> = self
            .value(x)
            .data()
            .chunks(plane)
            .map(|c| c.iter().sum::<f32>() * scale)
            .collect();
        let value = Tensor::from_parts(vec![s[0], s[1]], out);
        Ok(self.push(value, &[x], move |g, _, grads| {
            let Some(dx) = grads.slot(x) else { return };
            for (chunk, &gv) in dx.chunks_mut(plane).zip(g) {
                chunk.iter_mut().for_each(|d| *d += gv * scale);
            }
        }))
    }
}
