//! Discretized scattering operators and loss functionals on the tape.
//!
//! Complex data inside the graph use paired real channels: vectors are
//! `[b, n, 2]` with interleaved (re, im) and matrices are planar
//! `[b, 2, rows, cols]` with the real part in channel 0.

use std::f64::consts::{FRAC_PI_4, PI, TAU};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{direction_angles, unit_vector, ApertureBounds, CMatrix, LimitedAperture};
use crate::geometry::{parameter_grid, FourierCurve, Point};
use crate::nn::{Backward, Tape, Tensor, Var};
use crate::specfun;

const I: Complex64 = Complex64::new(0.0, 1.0);

/// Scale of the auxiliary curve on which the Herglotz norm is penalized.
pub const GAMMA_SCALE: f64 = 1.001;

/// Distance below which a boundary point counts as hitting the source.
pub const MIN_SOURCE_DISTANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    /// Regularization parameter.
    pub alpha: f64,
    /// Coupling parameter.
    pub gamma: f64,
    /// Weight of the data-completion loss.
    pub beta_dc: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { alpha: 1e-8, gamma: 1.0, beta_dc: 10.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.gamma > 0.0 && self.beta_dc >= 0.0)
            || !(self.alpha.is_finite() && self.gamma.is_finite() && self.beta_dc.is_finite())
        {
            return Err(Error::Config(format!("invalid loss weights {self:?}")));
        }
        Ok(())
    }
}

/// `Phi(x, z) = (i/4) H_0^(1)(k |x - z|)`.
pub fn phi_fundamental(x: Point, z: Point, k: f64) -> Result<Complex64> {
    let r = ((x[0] - z[0]).powi(2) + (x[1] - z[1]).powi(2)).sqrt();
    if r < 1e-12 {
        return Err(Error::SourceCoincidence(r));
    }
    Ok(0.25 * I * specfun::hankel1(0, k * r)?)
}

/// `Phi_inf(xhat, z) = e^{i pi/4} / sqrt(8 pi k) e^{-i k xhat.z}`.
pub fn phi_farfield(xhat: Point, z: Point, k: f64) -> Complex64 {
    let phase = -k * (xhat[0] * z[0] + xhat[1] * z[1]);
    Complex64::from_polar(1.0 / (8.0 * PI * k).sqrt(), FRAC_PI_4 + phase)
}

/// `(pi/m) F g`.
pub fn far_operator_apply(f: &CMatrix, g: &[Complex64], m: usize) -> Result<Vec<Complex64>> {
    if f.cols != g.len() {
        return Err(Error::DimensionMismatch(format!("{} columns against {} kernel values", f.cols, g.len())));
    }
    let w = PI / m as f64;
    Ok((0..f.rows).map(|j| w * (0..f.cols).map(|i| f.get(j, i) * g[i]).sum::<Complex64>()).collect())
}

/// `(pi/m) sum_i e^{i k x.d_i} g_i` at each point; `dirs` are the unit
/// incidence directions matching `g`.
pub fn herglotz_eval(points: &[Point], g: &[Complex64], dirs: &[Point], k: f64, m: usize) -> Result<Vec<Complex64>> {
    if g.len() != dirs.len() {
        return Err(Error::DimensionMismatch(format!("{} kernel values for {} directions", g.len(), dirs.len())));
    }
    let w = PI / m as f64;
    Ok(points
        .iter()
        .map(|x| {
            w * dirs
                .iter()
                .zip(g)
                .map(|(d, gi)| Complex64::from_polar(1.0, k * (x[0] * d[0] + x[1] * d[1])) * gi)
                .sum::<Complex64>()
        })
        .collect())
}

/// Values of the Fourier basis functions multiplying `Q` in `q(t)`.
pub fn fourier_basis(t: f64, n_lambda: usize, s: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * n_lambda + 1);
    out.push(1.0 / TAU.sqrt());
    let inv_sqrt_pi = 1.0 / PI.sqrt();
    for n in 1..=n_lambda {
        let decay = inv_sqrt_pi / (n as f64).powf(s);
        let (sn, cn) = (n as f64 * t).sin_cos();
        out.push(decay * cn);
        out.push(decay * sn);
    }
    out
}

/// Stack complex matrices into a planar `[b, 2, rows, cols]` tensor.
pub fn planar_tensor(mats: &[&CMatrix]) -> Result<Tensor> {
    let (rows, cols) = match mats.first() {
        Some(m) => (m.rows, m.cols),
        None => return Err(Error::DimensionMismatch("empty batch".into())),
    };
    let mut data = Vec::with_capacity(mats.len() * 2 * rows * cols);
    for m in mats {
        if (m.rows, m.cols) != (rows, cols) {
            return Err(Error::DimensionMismatch("matrices in a batch differ in size".into()));
        }
        data.extend(m.data.iter().map(|z| z.re));
        data.extend(m.data.iter().map(|z| z.im));
    }
    Tensor::new(&[mats.len(), 2, rows, cols], data)
}

/// Sample `n` of a planar `[b, 2, rows, cols]` tensor as a matrix.
pub fn planar_to_cmatrix(t: &Tensor, n: usize) -> CMatrix {
    let [_, _, rows, cols] = *t.shape() else { panic!("planar tensor must be rank 4") };
    let plane = rows * cols;
    let base = n * 2 * plane;
    let d = t.data();
    CMatrix {
        rows,
        cols,
        data: (0..plane).map(|i| Complex64::new(d[base + i], d[base + plane + i])).collect(),
    }
}

/// Stack complex vectors into an interleaved `[b, n, 2]` tensor.
pub fn interleaved_tensor(vecs: &[&[Complex64]]) -> Result<Tensor> {
    let n = vecs.first().map_or(0, |v| v.len());
    if vecs.is_empty() || vecs.iter().any(|v| v.len() != n) {
        return Err(Error::DimensionMismatch("complex vectors in a batch differ in length".into()));
    }
    let data = vecs.iter().flat_map(|v| v.iter().flat_map(|z| [z.re, z.im])).collect();
    Tensor::new(&[vecs.len(), n, 2], data)
}

/// Sample `n` of an interleaved `[b, len, 2]` tensor.
pub fn interleaved_to_complex(t: &Tensor, n: usize) -> Vec<Complex64> {
    let row = t.row_len();
    t.data()[n * row..(n + 1) * row].chunks(2).map(|c| Complex64::new(c[0], c[1])).collect()
}

#[inline]
fn cget(d: &[f64], i: usize) -> Complex64 {
    Complex64::new(d[2 * i], d[2 * i + 1])
}

#[inline]
fn cadd(d: &mut [f64], i: usize, z: Complex64) {
    d[2 * i] += z.re;
    d[2 * i + 1] += z.im;
}

impl Tape {
    /// `w F g` per sample: `f: [b, 2, R, C]`, `g: [b, C, 2]` to `[b, R, 2]`.
    pub fn far_operator(&mut self, f: Var, g: Var, weight: f64) -> Result<Var> {
        let (b, rows, cols) = match *self.value(f).shape() {
            [b, 2, r, c] => (b, r, c),
            ref s => return Err(Error::DimensionMismatch(format!("far-field matrix must be [b,2,R,C], got {s:?}"))),
        };
        if self.value(g).shape() != [b, cols, 2] {
            return Err(Error::DimensionMismatch(format!(
                "kernel shape {:?} does not match [{b}, {cols}, 2]",
                self.value(g).shape()
            )));
        }
        let (fd, gd) = (self.value(f).data(), self.value(g).data());
        let plane = rows * cols;
        let mut out = vec![0.0; b * rows * 2];
        for n in 0..b {
            let (fr, fi) = (&fd[n * 2 * plane..], &fd[n * 2 * plane + plane..]);
            let gs = &gd[n * cols * 2..(n + 1) * cols * 2];
            let os = &mut out[n * rows * 2..(n + 1) * rows * 2];
            for j in 0..rows {
                let mut acc = Complex64::new(0.0, 0.0);
                for i in 0..cols {
                    acc += Complex64::new(fr[j * cols + i], fi[j * cols + i]) * cget(gs, i);
                }
                cadd(os, j, weight * acc);
            }
        }
        let value = Tensor::new(&[b, rows, 2], out)?;
        Ok(self.push(value, vec![f, g], Box::new(FarOperatorRule { weight })))
    }

    /// Boundary nodes `scale e^{q(t_l)} (cos t_l, sin t_l)` for coefficient
    /// rows `q: [b, 2N+1]`, giving `[b, L, 2]`.
    pub fn boundary_points(&mut self, q: Var, nodes: &[f64], s: f64, scale: f64) -> Result<Var> {
        let (b, nq) = match *self.value(q).shape() {
            [b, n] if n % 2 == 1 => (b, n),
            ref sh => return Err(Error::DimensionMismatch(format!("coefficients must be [b, 2N+1], got {sh:?}"))),
        };
        let n_lambda = (nq - 1) / 2;
        let basis: Vec<Vec<f64>> = nodes.iter().map(|&t| fourier_basis(t, n_lambda, s)).collect();
        let qd = self.value(q).data();
        let mut out = Vec::with_capacity(b * nodes.len() * 2);
        for row in qd.chunks(nq) {
            for (t, phi) in nodes.iter().zip(&basis) {
                let qt: f64 = row.iter().zip(phi).map(|(a, p)| a * p).sum();
                let r = scale * qt.exp();
                out.push(r * t.cos());
                out.push(r * t.sin());
            }
        }
        let value = Tensor::new(&[b, nodes.len(), 2], out)?;
        Ok(self.push(value, vec![q], Box::new(BoundaryPointsRule { basis })))
    }

    /// `w sum_i e^{i k x_l.d_i} g_i`: `points: [b, L, 2]`, `g: [b, C, 2]`
    /// with one direction per kernel entry, giving `[b, L, 2]`.
    pub fn herglotz(&mut self, points: Var, g: Var, dirs: &[Point], k: f64, weight: f64) -> Result<Var> {
        let (b, l) = match *self.value(points).shape() {
            [b, l, 2] => (b, l),
            ref s => return Err(Error::DimensionMismatch(format!("points must be [b,L,2], got {s:?}"))),
        };
        if self.value(g).shape() != [b, dirs.len(), 2] {
            return Err(Error::DimensionMismatch(format!(
                "kernel shape {:?} does not match {} directions",
                self.value(g).shape(),
                dirs.len()
            )));
        }
        let (pd, gd) = (self.value(points).data(), self.value(g).data());
        let c = dirs.len();
        let mut out = vec![0.0; b * l * 2];
        for n in 0..b {
            let gs = &gd[n * c * 2..(n + 1) * c * 2];
            for p in 0..l {
                let x = [pd[(n * l + p) * 2], pd[(n * l + p) * 2 + 1]];
                let mut acc = Complex64::new(0.0, 0.0);
                for (i, d) in dirs.iter().enumerate() {
                    acc += Complex64::from_polar(1.0, k * (x[0] * d[0] + x[1] * d[1])) * cget(gs, i);
                }
                cadd(&mut out[n * l * 2..], p, weight * acc);
            }
        }
        let value = Tensor::new(&[b, l, 2], out)?;
        Ok(self.push(value, vec![points, g], Box::new(HerglotzRule { dirs: dirs.to_vec(), k, weight })))
    }

    /// `Phi(x_l, z)` at `points: [b, L, 2]`, giving `[b, L, 2]`.
    pub fn fundamental(&mut self, points: Var, z: Point, k: f64) -> Result<Var> {
        let pd = self.value(points).data();
        let shape = self.value(points).shape().to_vec();
        if shape.len() != 3 || shape[2] != 2 {
            return Err(Error::DimensionMismatch(format!("points must be [b,L,2], got {shape:?}")));
        }
        let count = pd.len() / 2;
        let mut out = Vec::with_capacity(pd.len());
        let mut slopes = Vec::with_capacity(count);
        for p in 0..count {
            let (dx, dy) = (pd[2 * p] - z[0], pd[2 * p + 1] - z[1]);
            let r = dx.hypot(dy);
            if r < MIN_SOURCE_DISTANCE || !r.is_finite() {
                return Err(Error::SourceCoincidence(r));
            }
            let (h0, h1) = specfun::hankel1_01(k * r)?;
            let v = 0.25 * I * h0;
            out.push(v.re);
            out.push(v.im);
            // d Phi / d x = -(i/4) k H_1 (x - z)/r
            let c = -0.25 * I * k * h1 / r;
            slopes.push([c * dx, c * dy]);
        }
        let value = Tensor::new(&shape, out)?;
        Ok(self.push(value, vec![points], Box::new(FundamentalRule { slopes })))
    }
}

struct FarOperatorRule {
    weight: f64,
}

impl Backward for FarOperatorRule {
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let (f, g) = (inputs[0], inputs[1]);
        let [b, _, rows, cols] = *f.shape() else { unreachable!() };
        let plane = rows * cols;
        let (fd, gd, up) = (f.data(), g.data(), grad.data());
        let w = self.weight;
        let gf = needs[0].then(|| {
            let mut out = vec![0.0; f.len()];
            for n in 0..b {
                let gs = &gd[n * cols * 2..];
                let us = &up[n * rows * 2..];
                for j in 0..rows {
                    let gj = w * cget(us, j);
                    for i in 0..cols {
                        let v = gj * cget(gs, i).conj();
                        out[n * 2 * plane + j * cols + i] = v.re;
                        out[n * 2 * plane + plane + j * cols + i] = v.im;
                    }
                }
            }
            Tensor::new(f.shape(), out).expect("same shape")
        });
        let gg = needs[1].then(|| {
            let mut out = vec![0.0; g.len()];
            for n in 0..b {
                let (fr, fi) = (&fd[n * 2 * plane..], &fd[n * 2 * plane + plane..]);
                let us = &up[n * rows * 2..];
                let os = &mut out[n * cols * 2..(n + 1) * cols * 2];
                for j in 0..rows {
                    let gj = w * cget(us, j);
                    for i in 0..cols {
                        cadd(os, i, Complex64::new(fr[j * cols + i], -fi[j * cols + i]) * gj);
                    }
                }
            }
            Tensor::new(g.shape(), out).expect("same shape")
        });
        vec![gf, gg]
    }
}

struct BoundaryPointsRule {
    basis: Vec<Vec<f64>>,
}

impl Backward for BoundaryPointsRule {
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        let q = inputs[0];
        let nq = q.shape()[1];
        let l = self.basis.len();
        let (xd, up) = (output.data(), grad.data());
        let mut out = vec![0.0; q.len()];
        for (n, row) in out.chunks_mut(nq).enumerate() {
            for (p, phi) in self.basis.iter().enumerate() {
                let i = (n * l + p) * 2;
                // dx/dq = x, so dL/dq(t_l) = G . x
                let s = up[i] * xd[i] + up[i + 1] * xd[i + 1];
                for (r, b) in row.iter_mut().zip(phi) {
                    *r += s * b;
                }
            }
        }
        vec![Some(Tensor::new(q.shape(), out).expect("same shape"))]
    }
}

struct HerglotzRule {
    dirs: Vec<Point>,
    k: f64,
    weight: f64,
}

impl Backward for HerglotzRule {
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let (pts, g) = (inputs[0], inputs[1]);
        let [b, l, _] = *pts.shape() else { unreachable!() };
        let c = self.dirs.len();
        let (pd, gd, up) = (pts.data(), g.data(), grad.data());
        let w = self.weight;
        let mut gp = needs[0].then(|| vec![0.0; pts.len()]);
        let mut gg = needs[1].then(|| vec![0.0; g.len()]);
        for n in 0..b {
            let gs = &gd[n * c * 2..(n + 1) * c * 2];
            for p in 0..l {
                let idx = n * l + p;
                let x = [pd[idx * 2], pd[idx * 2 + 1]];
                let u = w * cget(up, idx);
                let mut dvx = Complex64::new(0.0, 0.0);
                let mut dvy = Complex64::new(0.0, 0.0);
                for (i, d) in self.dirs.iter().enumerate() {
                    let e = Complex64::from_polar(1.0, self.k * (x[0] * d[0] + x[1] * d[1]));
                    if let Some(gg) = gg.as_mut() {
                        cadd(&mut gg[n * c * 2..], i, e.conj() * u);
                    }
                    if gp.is_some() {
                        let t = I * self.k * e * cget(gs, i);
                        dvx += t * d[0];
                        dvy += t * d[1];
                    }
                }
                if let Some(gp) = gp.as_mut() {
                    // real coordinates: dL/dx = Re(G conj(dv/dx))
                    gp[idx * 2] += (u * dvx.conj()).re;
                    gp[idx * 2 + 1] += (u * dvy.conj()).re;
                }
            }
        }
        vec![
            gp.map(|v| Tensor::new(pts.shape(), v).expect("same shape")),
            gg.map(|v| Tensor::new(g.shape(), v).expect("same shape")),
        ]
    }
}

struct FundamentalRule {
    slopes: Vec<[Complex64; 2]>,
}

impl Backward for FundamentalRule {
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        let up = grad.data();
        let mut out = vec![0.0; inputs[0].len()];
        for (p, s) in self.slopes.iter().enumerate() {
            let u = cget(up, p);
            out[2 * p] = (u * s[0].conj()).re;
            out[2 * p + 1] = (u * s[1].conj()).re;
        }
        vec![Some(Tensor::new(inputs[0].shape(), out).expect("same shape"))]
    }
}

/// Discretization and weights shared by the physics losses.
#[derive(Debug, Clone, PartialEq)]
pub struct PhysicsSetup {
    pub k: f64,
    pub m: usize,
    pub n_t: usize,
    pub s: f64,
    pub z: Point,
    pub weights: LossWeights,
    /// Directions entering the sums; full for the network losses.
    pub bounds: ApertureBounds,
}

/// Per-sample terms of the physics loss, each `[b]`.
#[derive(Debug, Clone, Copy)]
pub struct PhyTerms {
    pub total: Var,
    /// `sum_j |w (F g)_j - Phi_inf(x_j)|^2`, unweighted.
    pub far: Var,
    /// `sum_l |H g (Gamma_l)|^2`, unweighted.
    pub herglotz: Var,
    /// `sum_l |H g (Lambda_l) + Phi(Lambda_l)|^2`, unweighted.
    pub boundary: Var,
}

/// Batch-mean losses of one network pass, each `[1]`.
#[derive(Debug, Clone, Copy)]
pub struct DdmLoss {
    pub total: Var,
    pub phy: Var,
    pub dc: Option<Var>,
}

impl PhysicsSetup {
    pub fn new(k: f64, m: usize, n_t: usize, s: f64, weights: LossWeights) -> Self {
        Self { k, m, n_t, s, z: [0.0, 0.0], weights, bounds: ApertureBounds::full(m) }
    }

    pub fn with_bounds(mut self, bounds: ApertureBounds) -> Self {
        self.bounds = bounds;
        self
    }

    /// `pi / m`.
    pub fn direction_weight(&self) -> f64 {
        PI / self.m as f64
    }

    /// `2 pi / N_t`.
    pub fn boundary_weight(&self) -> f64 {
        TAU / self.n_t as f64
    }

    pub fn observation_dirs(&self) -> Vec<Point> {
        let tau = direction_angles(self.m);
        tau[self.bounds.obs_lo..self.bounds.obs_hi].iter().map(|&a| unit_vector(a)).collect()
    }

    pub fn incidence_dirs(&self) -> Vec<Point> {
        let tau = direction_angles(self.m);
        tau[self.bounds.inc_lo..self.bounds.inc_hi].iter().map(|&a| unit_vector(a)).collect()
    }

    /// Far field of the source at the observation directions in use.
    pub fn phi_inf(&self) -> Vec<Complex64> {
        self.observation_dirs().iter().map(|&d| phi_farfield(d, self.z, self.k)).collect()
    }

    /// Physics loss per sample. `f: [b, 2, R, C]` covers the rows and
    /// columns of `bounds`; `g: [b, 2m, 2]` holds the kernel at all `2m`
    /// directions; `q: [b, 2N+1]`.
    pub fn j_phy(&self, tape: &mut Tape, f: Var, g: Var, q: Var) -> Result<PhyTerms> {
        let bd = self.bounds;
        let b = tape.value(g).batch();
        if tape.value(g).shape() != [b, 2 * self.m, 2] {
            return Err(Error::DimensionMismatch(format!(
                "kernel must be [b, {}, 2], got {:?}",
                2 * self.m,
                tape.value(g).shape()
            )));
        }
        if tape.value(f).shape() != [b, 2, bd.rows(), bd.cols()] {
            return Err(Error::DimensionMismatch(format!(
                "far-field block must be [{b}, 2, {}, {}], got {:?}",
                bd.rows(),
                bd.cols(),
                tape.value(f).shape()
            )));
        }
        let g_used = if bd.inc_lo == 0 && bd.inc_hi == 2 * self.m { g } else { tape.narrow(g, bd.inc_lo, bd.inc_hi)? };
        let w_dir = self.direction_weight();
        let w_bd = self.boundary_weight();

        let fg = tape.far_operator(f, g_used, w_dir)?;
        let phi_inf = self.phi_inf();
        let neg: Vec<Complex64> = phi_inf.iter().map(|z| -z).collect();
        let rows: Vec<&[Complex64]> = (0..b).map(|_| neg.as_slice()).collect();
        let far_res = tape.add_const(fg, &interleaved_tensor(&rows)?)?;
        let far = tape.sum_squares_rows(far_res);

        let nodes = parameter_grid(self.n_t);
        let dirs = self.incidence_dirs();
        let gamma_pts = tape.boundary_points(q, &nodes, self.s, GAMMA_SCALE)?;
        let h_gamma = tape.herglotz(gamma_pts, g_used, &dirs, self.k, w_dir)?;
        let herglotz = tape.sum_squares_rows(h_gamma);

        let lambda_pts = tape.boundary_points(q, &nodes, self.s, 1.0)?;
        let h_lambda = tape.herglotz(lambda_pts, g_used, &dirs, self.k, w_dir)?;
        let phi = tape.fundamental(lambda_pts, self.z, self.k)?;
        let bc_res = tape.add(h_lambda, phi)?;
        let boundary = tape.sum_squares_rows(bc_res);

        let total = tape.lincomb(&[
            (far, w_dir),
            (herglotz, self.weights.alpha * w_bd),
            (boundary, self.weights.gamma * w_bd),
        ])?;
        Ok(PhyTerms { total, far, herglotz, boundary })
    }

    /// Data-completion loss per sample: `(pi/m)^2 sum |F_pred - F_exact|^2`.
    pub fn j_dc(&self, tape: &mut Tape, f_pred: Var, f_exact: &Tensor) -> Result<Var> {
        let mut neg = f_exact.clone();
        neg.data_mut().iter_mut().for_each(|v| *v = -*v);
        let diff = tape.add_const(f_pred, &neg)?;
        let ss = tape.sum_squares_rows(diff);
        Ok(tape.scale(ss, self.direction_weight().powi(2)))
    }

    /// Batch-mean `L_phy + beta_DC L_DC`; without exact data the loss is
    /// `L_phy` alone.
    pub fn j_ddm(&self, tape: &mut Tape, f_pred: Var, f_exact: Option<&Tensor>, g: Var, q: Var) -> Result<DdmLoss> {
        let terms = self.j_phy(tape, f_pred, g, q)?;
        let phy = tape.mean(terms.total);
        match f_exact {
            Some(exact) => {
                let dc = self.j_dc(tape, f_pred, exact)?;
                let dc = tape.mean(dc);
                let total = tape.lincomb(&[(phy, 1.0), (dc, self.weights.beta_dc)])?;
                Ok(DdmLoss { total, phy, dc: Some(dc) })
            }
            None => Ok(DdmLoss { total: phy, phy, dc: None }),
        }
    }
}

/// Value and gradient of the classical decomposition functional restricted
/// to the aperture of `data`. `g_free` holds `4m` interleaved reals and
/// `q_free` the `2N+1` curve coefficients; the gradient is ordered the same.
pub fn j_cdm(g_free: &[f64], q_free: &[f64], data: &LimitedAperture, setup: &PhysicsSetup) -> Result<(f64, Vec<f64>)> {
    let m = data.m();
    if setup.m != m || setup.bounds != data.bounds {
        return Err(Error::DimensionMismatch("setup does not match the data aperture".into()));
    }
    if g_free.len() != 4 * m {
        return Err(Error::DimensionMismatch(format!("expected {} kernel reals, got {}", 4 * m, g_free.len())));
    }
    let mut tape = Tape::new();
    let f = tape.constant(planar_tensor(&[&data.matrix])?);
    let g = tape.leaf(Tensor::new(&[1, 2 * m, 2], g_free.to_vec())?);
    let q = tape.leaf(Tensor::new(&[1, q_free.len()], q_free.to_vec())?);
    let terms = setup.j_phy(&mut tape, f, g, q)?;
    let value = tape.value(terms.total).data()[0];
    let grads = tape.backward(terms.total)?;
    let mut grad = grads.get_or_zeros(g, &[1, 2 * m, 2]).into_data();
    grad.extend(grads.get_or_zeros(q, &[1, q_free.len()]).into_data());
    Ok((value, grad))
}

/// Physics loss of one sample without building a graph for training.
pub fn j_phy_value(f: &CMatrix, g: &[Complex64], curve: &FourierCurve, setup: &PhysicsSetup) -> Result<f64> {
    let mut tape = Tape::new();
    let fv = tape.constant(planar_tensor(&[f])?);
    let gv = tape.constant(interleaved_tensor(&[g])?);
    let qv = tape.constant(Tensor::new(&[1, 2 * curve.n_lambda() + 1], curve.to_vec())?);
    let terms = setup.j_phy(&mut tape, fv, gv, qv)?;
    Ok(tape.value(terms.total).data()[0])
}
