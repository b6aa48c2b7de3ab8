//! Classical baselines: the decomposition functional minimized by BFGS and
//! the direct sampling indicator.

use std::io::Write;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{direction_angles, unit_vector, LimitedAperture};
use crate::geometry::FourierCurve;
use crate::physics::{j_cdm, PhysicsSetup};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BfgsOptions {
    pub max_iter: usize,
    /// Stop once the gradient infinity norm falls to this value.
    pub grad_tol: f64,
    /// Sufficient-decrease constant.
    pub c1: f64,
    /// Curvature constant.
    pub c2: f64,
    /// Objective evaluations allowed per line search.
    pub max_evals: usize,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self { max_iter: 500, grad_tol: 1e-8, c1: 1e-4, c2: 0.9, max_evals: 40 }
    }
}

/// Quasi-Newton iterate and inverse-Hessian approximation.
#[derive(Debug, Clone)]
pub struct BfgsState {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad: Vec<f64>,
    /// Row-major, `n x n`, kept symmetric positive definite.
    pub h_inv: Vec<f64>,
    pub iteration: usize,
}

#[derive(Debug, Clone)]
pub struct BfgsResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    /// Objective after each accepted step, starting with the initial value.
    pub history: Vec<f64>,
    pub converged: bool,
    /// The line search failed to find an acceptable step.
    pub degraded: bool,
    pub curvature_resets: usize,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

fn identity(n: usize) -> Vec<f64> {
    let mut h = vec![0.0; n * n];
    for i in 0..n {
        h[i * n + i] = 1.0;
    }
    h
}

struct Trial {
    alpha: f64,
    x: Vec<f64>,
    f: f64,
    grad: Vec<f64>,
}

/// Evaluation failures inside the line search (a boundary running into the
/// source point, say) are treated as an infinite objective so the step shrinks.
fn probe<F>(objective: &mut F, x: &[f64], p: &[f64], alpha: f64) -> Trial
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let xt: Vec<f64> = x.iter().zip(p).map(|(xi, pi)| xi + alpha * pi).collect();
    match objective(&xt) {
        Ok((f, g)) if f.is_finite() && g.iter().all(|v| v.is_finite()) => Trial { alpha, x: xt, f, grad: g },
        _ => Trial { alpha, x: xt, f: f64::INFINITY, grad: Vec::new() },
    }
}

/// Strong-Wolfe line search with bracketing and safeguarded quadratic
/// interpolation. On failure returns the best Armijo point seen, if any.
fn line_search<F>(
    objective: &mut F,
    state: &BfgsState,
    p: &[f64],
    alpha0: f64,
    opts: &BfgsOptions,
) -> std::result::Result<Trial, Option<Trial>>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let f0 = state.f;
    let d0 = dot(&state.grad, p);
    let armijo = |t: &Trial| t.f <= f0 + opts.c1 * t.alpha * d0;
    let curvature = |t: &Trial| dot(&t.grad, p).abs() <= -opts.c2 * d0;
    let mut best: Option<Trial> = None;
    let keep = |t: &Trial, best: &mut Option<Trial>| {
        if t.f.is_finite() && armijo(t) && best.as_ref().map_or(true, |b| t.f < b.f) {
            *best = Some(Trial { alpha: t.alpha, x: t.x.clone(), f: t.f, grad: t.grad.clone() });
        }
    };

    let mut evals = 0;
    let mut lo = Trial { alpha: 0.0, x: state.x.clone(), f: f0, grad: state.grad.clone() };
    let mut alpha = alpha0;
    let hi;
    loop {
        let t = probe(objective, &state.x, p, alpha);
        evals += 1;
        keep(&t, &mut best);
        if !armijo(&t) || (lo.alpha > 0.0 && t.f >= lo.f) {
            hi = t;
            break;
        }
        if curvature(&t) {
            return Ok(t);
        }
        if dot(&t.grad, p) >= 0.0 {
            hi = lo;
            lo = t;
            break;
        }
        if evals >= opts.max_evals {
            return Err(best);
        }
        lo = t;
        alpha *= 2.0;
    }

    let mut hi = hi;
    while evals < opts.max_evals {
        let width = hi.alpha - lo.alpha;
        if width.abs() <= 1e-16 * lo.alpha.abs().max(1e-300) {
            break;
        }
        let dlo = dot(&lo.grad, p);
        let mut trial = lo.alpha + 0.5 * width;
        if hi.f.is_finite() {
            let curv = hi.f - lo.f - dlo * width;
            if curv > 0.0 {
                trial = lo.alpha - dlo * width * width / (2.0 * curv);
            }
        }
        let (a, b) = if width > 0.0 { (lo.alpha, hi.alpha) } else { (hi.alpha, lo.alpha) };
        let margin = 0.1 * (b - a);
        if !(trial > a + margin && trial < b - margin) {
            trial = lo.alpha + 0.5 * width;
        }
        let t = probe(objective, &state.x, p, trial);
        evals += 1;
        keep(&t, &mut best);
        if !armijo(&t) || t.f >= lo.f {
            hi = t;
        } else {
            if curvature(&t) {
                return Ok(t);
            }
            if dot(&t.grad, p) * (hi.alpha - lo.alpha) >= 0.0 {
                hi = lo;
            }
            lo = t;
        }
    }
    Err(best)
}

/// Minimize a smooth objective with BFGS. The objective returns its value and
/// gradient; its first evaluation must succeed.
pub fn bfgs<F>(mut objective: F, x0: Vec<f64>, opts: &BfgsOptions) -> Result<BfgsResult>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let n = x0.len();
    let (f, grad) = objective(&x0)?;
    if !f.is_finite() {
        return Err(Error::Numerical("objective is not finite at the initial point".into()));
    }
    let mut st = BfgsState { x: x0, f, grad, h_inv: identity(n), iteration: 0 };
    let mut history = vec![st.f];
    let mut converged = false;
    let mut degraded = false;
    let mut resets = 0;
    let mut scaled = false;

    while st.iteration < opts.max_iter {
        if inf_norm(&st.grad) <= opts.grad_tol {
            converged = true;
            break;
        }
        let mut p: Vec<f64> = (0..n).map(|i| -dot(&st.h_inv[i * n..(i + 1) * n], &st.grad)).collect();
        if dot(&p, &st.grad) >= 0.0 {
            st.h_inv = identity(n);
            resets += 1;
            p = st.grad.iter().map(|g| -g).collect();
        }
        let alpha0 = if scaled { 1.0 } else { (1.0 / inf_norm(&p)).min(1.0) };
        let t = match line_search(&mut objective, &st, &p, alpha0, opts) {
            Ok(t) => t,
            Err(best) => {
                degraded = true;
                if let Some(b) = best {
                    st.x = b.x;
                    st.f = b.f;
                    st.grad = b.grad;
                    st.iteration += 1;
                    history.push(st.f);
                }
                break;
            }
        };
        let s: Vec<f64> = t.x.iter().zip(&st.x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = t.grad.iter().zip(&st.grad).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() && sy > 0.0 {
            if !scaled {
                let gamma = sy / dot(&y, &y);
                st.h_inv.iter_mut().for_each(|v| *v *= gamma);
                scaled = true;
            }
            // H <- (I - rho s y^T) H (I - rho y s^T) + rho s s^T
            let rho = 1.0 / sy;
            let hy: Vec<f64> = (0..n).map(|i| dot(&st.h_inv[i * n..(i + 1) * n], &y)).collect();
            let yhy = dot(&y, &hy);
            for i in 0..n {
                for j in 0..n {
                    st.h_inv[i * n + j] += -rho * (hy[i] * s[j] + s[i] * hy[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
                }
            }
        } else {
            st.h_inv = identity(n);
            scaled = false;
            resets += 1;
        }
        st.x = t.x;
        st.f = t.f;
        st.grad = t.grad;
        st.iteration += 1;
        history.push(st.f);
    }
    if !converged && inf_norm(&st.grad) <= opts.grad_tol {
        converged = true;
    }
    Ok(BfgsResult {
        grad_norm: inf_norm(&st.grad),
        x: st.x,
        f: st.f,
        iterations: st.iteration,
        history,
        converged,
        degraded,
        curvature_resets: resets,
    })
}

/// Outcome of the classical decomposition method.
#[derive(Debug, Clone)]
pub struct CdmResult {
    pub curve: FourierCurve,
    pub kernel: Vec<Complex64>,
    pub history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub degraded: bool,
}

impl CdmResult {
    pub fn write_history_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "iteration,objective")?;
        for (i, f) in self.history.iter().enumerate() {
            writeln!(w, "{i},{f:.17e}")?;
        }
        Ok(())
    }
}

/// Compare the analytic gradient with central differences.
fn check_cdm_gradient(data: &LimitedAperture, setup: &PhysicsSetup, x: &[f64], split: usize) -> Result<()> {
    let (_, grad) = j_cdm(&x[..split], &x[split..], data, setup)?;
    let h = 1e-6;
    let mut num = vec![0.0; x.len()];
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        xp[i] = x[i] + h;
        let fp = j_cdm(&xp[..split], &xp[split..], data, setup)?.0;
        xp[i] = x[i] - h;
        let fm = j_cdm(&xp[..split], &xp[split..], data, setup)?.0;
        xp[i] = x[i];
        num[i] = (fp - fm) / (2.0 * h);
    }
    let diff: f64 = grad.iter().zip(&num).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let scale = dot(&num, &num).sqrt().max(1e-300);
    if diff / scale > 1e-5 {
        return Err(Error::Numerical(format!("CDM gradient disagrees with finite differences ({:e})", diff / scale)));
    }
    Ok(())
}

/// Minimize the decomposition functional over the kernel and the curve
/// coefficients, starting from zero. `setup.bounds` must match the data.
pub fn run_cdm(data: &LimitedAperture, setup: &PhysicsSetup, n_lambda: usize, opts: &BfgsOptions) -> Result<CdmResult> {
    let m = data.m();
    let split = 4 * m;
    let x0 = vec![0.0; split + 2 * n_lambda + 1];
    if cfg!(debug_assertions) {
        check_cdm_gradient(data, setup, &x0, split)?;
    }
    let res = bfgs(|x| j_cdm(&x[..split], &x[split..], data, setup), x0, opts)?;
    if res.degraded {
        log::warn!("CDM line search failed after {} iterations; returning best iterate", res.iterations);
    }
    let kernel = res.x[..split].chunks(2).map(|c| Complex64::new(c[0], c[1])).collect();
    Ok(CdmResult {
        curve: FourierCurve::from_slice(&res.x[split..], setup.s)?,
        kernel,
        history: res.history,
        iterations: res.iterations,
        converged: res.converged,
        degraded: res.degraded,
    })
}

pub const DSM_RESOLUTION: usize = 100;
pub const DSM_HALF_WIDTH: f64 = 4.0;

/// Indicator values on an equally spaced square grid, row-major with `x`
/// varying fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingGrid {
    pub n: usize,
    pub lo: f64,
    pub hi: f64,
    pub values: Vec<f64>,
}

impl SamplingGrid {
    pub fn coordinate(&self, i: usize) -> f64 {
        self.lo + (self.hi - self.lo) * i as f64 / (self.n - 1) as f64
    }

    /// Node position and indicator value, in storage order.
    pub fn nodes(&self) -> impl Iterator<Item = ([f64; 2], f64)> + '_ {
        self.values.iter().enumerate().map(|(idx, &v)| ([self.coordinate(idx % self.n), self.coordinate(idx / self.n)], v))
    }

    pub fn argmax(&self) -> [f64; 2] {
        self.nodes().fold(([0.0; 2], f64::NEG_INFINITY), |best, n| if n.1 > best.1 { n } else { best }).0
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "h_x,h_y,indicator")?;
        for ([x, y], v) in self.nodes() {
            writeln!(w, "{x:.6},{y:.6},{v:.17e}")?;
        }
        Ok(())
    }
}

/// Direct sampling indicator `|sum_ij e^{-ik h.d_i} F_ji e^{ik h.x_j}|` on
/// the 100 x 100 grid over `[-4, 4]^2`.
pub fn run_dsm(data: &LimitedAperture, k: f64) -> SamplingGrid {
    let b = data.bounds;
    let tau = direction_angles(b.m);
    let obs: Vec<[f64; 2]> = tau[b.obs_lo..b.obs_hi].iter().map(|&a| unit_vector(a)).collect();
    let inc: Vec<[f64; 2]> = tau[b.inc_lo..b.inc_hi].iter().map(|&a| unit_vector(a)).collect();
    let mut grid = SamplingGrid { n: DSM_RESOLUTION, lo: -DSM_HALF_WIDTH, hi: DSM_HALF_WIDTH, values: Vec::new() };
    let n = grid.n;
    let coords: Vec<f64> = (0..n).map(|i| grid.coordinate(i)).collect();
    let plane = |h: [f64; 2], d: [f64; 2], sign: f64| Complex64::from_polar(1.0, sign * k * (h[0] * d[0] + h[1] * d[1]));
    grid.values = (0..n * n)
        .into_par_iter()
        .map(|idx| {
            let h = [coords[idx % n], coords[idx / n]];
            let right: Vec<Complex64> = inc.iter().map(|&d| plane(h, d, -1.0)).collect();
            let mut acc = Complex64::new(0.0, 0.0);
            for (r, &x) in obs.iter().enumerate() {
                let row: Complex64 = right.iter().enumerate().map(|(c, &e)| data.matrix.get(r, c) * e).sum();
                acc += plane(h, x, 1.0) * row;
            }
            acc.norm()
        })
        .collect();
    grid
}
