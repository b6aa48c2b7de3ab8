//! Convolution, batch normalization and affine layers as tape operations.

use rayon::prelude::*;

use super::tape::{Backward, Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Batch-normalization mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Normalize with batch statistics.
    Train,
    /// Normalize with running statistics.
    Eval,
}

/// Per-channel statistics of one training-mode batch normalization.
#[derive(Debug, Clone)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Unbiased variance, used for the running estimate.
    pub var: Vec<f64>,
}

fn dims4(t: &Tensor, what: &str) -> Result<(usize, usize, usize, usize)> {
    match *t.shape() {
        [b, c, h, w] => Ok((b, c, h, w)),
        ref s => Err(Error::DimensionMismatch(format!("{what} must be [b,c,h,w], got {s:?}"))),
    }
}

impl Tape {
    /// 3x3 convolution, stride 1, zero padding 1.
    /// `x: [b, ci, h, w]`, `weight: [co, ci, 3, 3]`, `bias: [co]`.
    pub fn conv3x3(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        let (b, ci, h, w) = dims4(self.value(x), "conv input")?;
        let wt = self.value(weight);
        let co = match *wt.shape() {
            [co, c, 3, 3] if c == ci => co,
            ref s => {
                return Err(Error::DimensionMismatch(format!("conv weight {s:?} incompatible with {ci} input channels")))
            }
        };
        if self.value(bias).shape() != [co] {
            return Err(Error::DimensionMismatch(format!("conv bias must be [{co}]")));
        }
        let xin = self.value(x).data();
        let wd = wt.data();
        let bd = self.value(bias).data();
        let plane = h * w;
        let mut out = vec![0.0; b * co * plane];
        out.par_chunks_mut(co * plane).enumerate().for_each(|(n, o)| {
            let xs = &xin[n * ci * plane..(n + 1) * ci * plane];
            for oc in 0..co {
                let op = &mut o[oc * plane..(oc + 1) * plane];
                op.iter_mut().for_each(|v| *v = bd[oc]);
                for ic in 0..ci {
                    let xp = &xs[ic * plane..(ic + 1) * plane];
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let wv = wd[((oc * ci + ic) * 3 + ky) * 3 + kx];
                            shifted_axpy(op, xp, h, w, ky, kx, wv);
                        }
                    }
                }
            }
        });
        let value = Tensor::new(&[b, co, h, w], out)?;
        Ok(self.push(value, vec![x, weight, bias], Box::new(Conv3x3Rule)))
    }

    /// Batch normalization over `(b, h, w)` per channel of a `[b, c, h, w]`
    /// input (or over `b` for `[b, c]`). In training mode the batch
    /// statistics are returned so the caller can update its running buffers.
    pub fn batchnorm(
        &mut self,
        x: Var,
        scale: Var,
        shift: Var,
        running: (&[f64], &[f64]),
        mode: Mode,
    ) -> Result<(Var, Option<BatchStats>)> {
        let xv = self.value(x);
        let (b, c, plane) = match *xv.shape() {
            [b, c, h, w] => (b, c, h * w),
            [b, c] => (b, c, 1),
            ref s => return Err(Error::DimensionMismatch(format!("batchnorm input {s:?}"))),
        };
        if self.value(scale).shape() != [c] || self.value(shift).shape() != [c] {
            return Err(Error::DimensionMismatch(format!("batchnorm affine parameters must be [{c}]")));
        }
        let count = b * plane;
        let (mean, var_biased, stats) = match mode {
            Mode::Train => {
                if b < 2 {
                    return Err(Error::DimensionMismatch("training-mode batchnorm needs batch >= 2".into()));
                }
                let mut mean = vec![0.0; c];
                let mut var = vec![0.0; c];
                for ch in 0..c {
                    let mut s = 0.0;
                    for n in 0..b {
                        let base = (n * c + ch) * plane;
                        s += xv.data()[base..base + plane].iter().sum::<f64>();
                    }
                    let mu = s / count as f64;
                    let mut ss = 0.0;
                    for n in 0..b {
                        let base = (n * c + ch) * plane;
                        ss += xv.data()[base..base + plane].iter().map(|v| (v - mu) * (v - mu)).sum::<f64>();
                    }
                    mean[ch] = mu;
                    var[ch] = ss / count as f64;
                }
                let unbiased = var.iter().map(|v| v * count as f64 / (count - 1) as f64).collect();
                let stats = BatchStats { mean: mean.clone(), var: unbiased };
                (mean, var, Some(stats))
            }
            Mode::Eval => (running.0.to_vec(), running.1.to_vec(), None),
        };
        if mean.len() != c || var_biased.len() != c {
            return Err(Error::DimensionMismatch(format!("running statistics must have {c} channels")));
        }
        let inv_std: Vec<f64> = var_biased.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let gamma = self.value(scale).data();
        let beta = self.value(shift).data();
        let mut xhat = vec![0.0; xv.len()];
        let mut out = vec![0.0; xv.len()];
        for n in 0..b {
            for ch in 0..c {
                let base = (n * c + ch) * plane;
                for i in base..base + plane {
                    let nh = (xv.data()[i] - mean[ch]) * inv_std[ch];
                    xhat[i] = nh;
                    out[i] = gamma[ch] * nh + beta[ch];
                }
            }
        }
        let value = Tensor::new(xv.shape(), out)?;
        let rule = BatchNormRule { xhat, inv_std, batch: b, channels: c, plane, train: mode == Mode::Train };
        Ok((self.push(value, vec![x, scale, shift], Box::new(rule)), stats))
    }

    /// `x W + bias` with `x: [b, n]`, `W: [n, p]`, `bias: [p]`.
    pub fn linear(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        let (b, n) = match *self.value(x).shape() {
            [b, n] => (b, n),
            ref s => return Err(Error::DimensionMismatch(format!("linear input must be [b,n], got {s:?}"))),
        };
        let p = match *self.value(weight).shape() {
            [wn, p] if wn == n => p,
            ref s => return Err(Error::DimensionMismatch(format!("linear weight {s:?} incompatible with {n} inputs"))),
        };
        if self.value(bias).shape() != [p] {
            return Err(Error::DimensionMismatch(format!("linear bias must be [{p}]")));
        }
        let mut out = Vec::with_capacity(b * p);
        for _ in 0..b {
            out.extend_from_slice(self.value(bias).data());
        }
        gemm(b, n, p, self.value(x).data(), (n as isize, 1), self.value(weight).data(), (p as isize, 1), &mut out, 1.0);
        let value = Tensor::new(&[b, p], out)?;
        Ok(self.push(value, vec![x, weight, bias], Box::new(LinearRule { b, n, p })))
    }
}

/// `c += alpha a b` with `a: m x k`, `b: k x n`, `c: m x n` row-major; `a`
/// and `b` strides are (row, col).
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], sa: (isize, isize), b: &[f64], sb: (isize, isize), c: &mut [f64], alpha: f64) {
    // SAFETY: slice lengths cover every index addressed by the given
    // dimensions and strides, as asserted below.
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    unsafe {
        matrixmultiply::dgemm(
            m, k, n, alpha, a.as_ptr(), sa.0, sa.1, b.as_ptr(), sb.0, sb.1, 1.0, c.as_mut_ptr(), n as isize, 1,
        );
    }
}

/// `out[y][x] += wv * input[y + ky - 1][x + kx - 1]` over the valid region.
#[inline]
fn shifted_axpy(out: &mut [f64], input: &[f64], h: usize, w: usize, ky: usize, kx: usize, wv: f64) {
    let (y0, y1) = (if ky == 0 { 1 } else { 0 }, if ky == 2 { h - 1 } else { h });
    let (x0, x1) = (if kx == 0 { 1 } else { 0 }, if kx == 2 { w - 1 } else { w });
    for y in y0..y1 {
        let iy = y + ky - 1;
        let orow = &mut out[y * w + x0..y * w + x1];
        let irow = &input[iy * w + x0 + kx - 1..iy * w + x1 + kx - 1];
        for (o, i) in orow.iter_mut().zip(irow) {
            *o += wv * i;
        }
    }
}

/// `sum_{y,x} a[y][x] * input[y + ky - 1][x + kx - 1]` over the valid region.
#[inline]
fn shifted_dot(a: &[f64], input: &[f64], h: usize, w: usize, ky: usize, kx: usize) -> f64 {
    let (y0, y1) = (if ky == 0 { 1 } else { 0 }, if ky == 2 { h - 1 } else { h });
    let (x0, x1) = (if kx == 0 { 1 } else { 0 }, if kx == 2 { w - 1 } else { w });
    let mut acc = 0.0;
    for y in y0..y1 {
        let iy = y + ky - 1;
        let arow = &a[y * w + x0..y * w + x1];
        let irow = &input[iy * w + x0 + kx - 1..iy * w + x1 + kx - 1];
        acc += arow.iter().zip(irow).map(|(p, q)| p * q).sum::<f64>();
    }
    acc
}

/// `input_grad[y + ky - 1][x + kx - 1] += wv * g[y][x]`.
#[inline]
fn shifted_scatter(input_grad: &mut [f64], g: &[f64], h: usize, w: usize, ky: usize, kx: usize, wv: f64) {
    let (y0, y1) = (if ky == 0 { 1 } else { 0 }, if ky == 2 { h - 1 } else { h });
    let (x0, x1) = (if kx == 0 { 1 } else { 0 }, if kx == 2 { w - 1 } else { w });
    for y in y0..y1 {
        let iy = y + ky - 1;
        let grow = &g[y * w + x0..y * w + x1];
        let irow = &mut input_grad[iy * w + x0 + kx - 1..iy * w + x1 + kx - 1];
        for (i, gv) in irow.iter_mut().zip(grow) {
            *i += wv * gv;
        }
    }
}

struct Conv3x3Rule;

impl Backward for Conv3x3Rule {
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let (x, wt) = (inputs[0], inputs[1]);
        let [b, ci, h, w] = *x.shape() else { unreachable!() };
        let co = output.shape()[1];
        let plane = h * w;
        let wd = wt.data();
        let gd = grad.data();

        let gx = needs[0].then(|| {
            let mut gx = vec![0.0; x.len()];
            gx.par_chunks_mut(ci * plane).enumerate().for_each(|(n, gxs)| {
                let gs = &gd[n * co * plane..(n + 1) * co * plane];
                for ic in 0..ci {
                    let gp = &mut gxs[ic * plane..(ic + 1) * plane];
                    for oc in 0..co {
                        let go = &gs[oc * plane..(oc + 1) * plane];
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let wv = wd[((oc * ci + ic) * 3 + ky) * 3 + kx];
                                shifted_scatter(gp, go, h, w, ky, kx, wv);
                            }
                        }
                    }
                }
            });
            Tensor::new(x.shape(), gx).expect("same shape")
        });

        let gw = needs[1].then(|| {
            // per-sample partial sums reduced in sample order
            let partials: Vec<Vec<f64>> = (0..b)
                .into_par_iter()
                .map(|n| {
                    let xs = &x.data()[n * ci * plane..(n + 1) * ci * plane];
                    let gs = &gd[n * co * plane..(n + 1) * co * plane];
                    let mut acc = vec![0.0; co * ci * 9];
                    for oc in 0..co {
                        let go = &gs[oc * plane..(oc + 1) * plane];
                        for ic in 0..ci {
                            let xp = &xs[ic * plane..(ic + 1) * plane];
                            for ky in 0..3 {
                                for kx in 0..3 {
                                    acc[((oc * ci + ic) * 3 + ky) * 3 + kx] = shifted_dot(go, xp, h, w, ky, kx);
                                }
                            }
                        }
                    }
                    acc
                })
                .collect();
            let mut total = vec![0.0; co * ci * 9];
            for p in partials {
                for (t, v) in total.iter_mut().zip(p) {
                    *t += v;
                }
            }
            Tensor::new(wt.shape(), total).expect("same shape")
        });

        let gb = needs[2].then(|| {
            let mut gb = vec![0.0; co];
            for n in 0..b {
                for (oc, g) in gb.iter_mut().enumerate() {
                    let base = (n * co + oc) * plane;
                    *g += gd[base..base + plane].iter().sum::<f64>();
                }
            }
            Tensor::new(&[co], gb).expect("same shape")
        });
        vec![gx, gw, gb]
    }
}

struct BatchNormRule {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    batch: usize,
    channels: usize,
    plane: usize,
    train: bool,
}

impl Backward for BatchNormRule {
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let gamma = inputs[1].data();
        let (b, c, plane) = (self.batch, self.channels, self.plane);
        let gd = grad.data();
        let mut sum_g = vec![0.0; c];
        let mut sum_gx = vec![0.0; c];
        for n in 0..b {
            for ch in 0..c {
                let base = (n * c + ch) * plane;
                for i in base..base + plane {
                    sum_g[ch] += gd[i];
                    sum_gx[ch] += gd[i] * self.xhat[i];
                }
            }
        }
        let gx = needs[0].then(|| {
            let count = (b * plane) as f64;
            let mut gx = vec![0.0; gd.len()];
            for n in 0..b {
                for ch in 0..c {
                    let base = (n * c + ch) * plane;
                    let k = gamma[ch] * self.inv_std[ch];
                    for i in base..base + plane {
                        gx[i] = if self.train {
                            k * (gd[i] - sum_g[ch] / count - self.xhat[i] * sum_gx[ch] / count)
                        } else {
                            k * gd[i]
                        };
                    }
                }
            }
            Tensor::new(inputs[0].shape(), gx).expect("same shape")
        });
        let gs = needs[1].then(|| Tensor::new(&[c], sum_gx.clone()).expect("channel vector"));
        let gb = needs[2].then(|| Tensor::new(&[c], sum_g.clone()).expect("channel vector"));
        vec![gx, gs, gb]
    }
}

struct LinearRule {
    b: usize,
    n: usize,
    p: usize,
}

impl Backward for LinearRule {
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let (b, n, p) = (self.b, self.n, self.p);
        let (x, wt) = (inputs[0], inputs[1]);
        let gd = grad.data();
        let gx = needs[0].then(|| {
            // g [b,p] * W^T [p,n]
            let mut gx = vec![0.0; b * n];
            gemm(b, p, n, gd, (p as isize, 1), wt.data(), (1, p as isize), &mut gx, 1.0);
            Tensor::new(&[b, n], gx).expect("shape")
        });
        let gw = needs[1].then(|| {
            // x^T [n,b] * g [b,p]
            let mut gw = vec![0.0; n * p];
            gemm(n, b, p, x.data(), (1, n as isize), gd, (p as isize, 1), &mut gw, 1.0);
            Tensor::new(&[n, p], gw).expect("shape")
        });
        let gb = needs[2].then(|| {
            let mut gb = vec![0.0; p];
            for row in gd.chunks(p) {
                for (a, v) in gb.iter_mut().zip(row) {
                    *a += v;
                }
            }
            Tensor::new(&[p], gb).expect("shape")
        });
        vec![gx, gw, gb]
    }
}
