//! Boundary curves: the starlike Fourier representation used for recovery,
//! the two fixed out-of-distribution test shapes, and the random training
//! distribution.

use std::f64::consts::{PI, TAU};

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point = [f64; 2];

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
const INV_SQRT_PI: f64 = 0.564_189_583_547_756_3;

/// Starlike curve `e^{q(t)} (cos t, sin t)` with
/// `q(t) = q0/sqrt(2pi) + sum_n (a_n cos nt + b_n sin nt) / (n^s sqrt(pi))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FourierCurve {
    pub q0: f64,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub s: f64,
}

impl FourierCurve {
    pub fn new(q0: f64, a: Vec<f64>, b: Vec<f64>, s: f64) -> Result<Self> {
        if a.len() != b.len() || a.is_empty() {
            return Err(Error::DimensionMismatch(format!(
                "cosine/sine coefficient counts {} and {} must match and be nonzero",
                a.len(),
                b.len()
            )));
        }
        if !(s > 0.0) {
            return Err(Error::Config(format!("decay exponent s must be positive, got {s}")));
        }
        Ok(Self { q0, a, b, s })
    }

    /// All-zero coefficients: the unit circle.
    pub fn unit_circle(n_lambda: usize, s: f64) -> Self {
        Self { q0: 0.0, a: vec![0.0; n_lambda], b: vec![0.0; n_lambda], s }
    }

    /// Circle of the given radius.
    pub fn circle(radius: f64, n_lambda: usize, s: f64) -> Self {
        Self { q0: radius.ln() / INV_SQRT_2PI, ..Self::unit_circle(n_lambda, s) }
    }

    pub fn n_lambda(&self) -> usize {
        self.a.len()
    }

    /// Coefficient vector ordered `(q0, a1, b1, ..., aN, bN)`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(2 * self.n_lambda() + 1);
        v.push(self.q0);
        for (a, b) in self.a.iter().zip(&self.b) {
            v.push(*a);
            v.push(*b);
        }
        v
    }

    pub fn from_slice(q: &[f64], s: f64) -> Result<Self> {
        if q.len() < 3 || q.len() % 2 == 0 {
            return Err(Error::DimensionMismatch(format!(
                "coefficient vector must have odd length 2N+1 >= 3, got {}",
                q.len()
            )));
        }
        let a = q[1..].iter().step_by(2).copied().collect();
        let b = q[2..].iter().step_by(2).copied().collect();
        Self::new(q[0], a, b, s)
    }

    /// `(q, q', q'')` at `t`.
    pub fn q_derivatives(&self, t: f64) -> (f64, f64, f64) {
        let mut q = self.q0 * INV_SQRT_2PI;
        let mut dq = 0.0;
        let mut ddq = 0.0;
        for (idx, (a, b)) in self.a.iter().zip(&self.b).enumerate() {
            let n = (idx + 1) as f64;
            let w = INV_SQRT_PI / n.powf(self.s);
            let (sn, cs) = (n * t).sin_cos();
            q += w * (a * cs + b * sn);
            dq += w * n * (-a * sn + b * cs);
            ddq -= w * n * n * (a * cs + b * sn);
        }
        (q, dq, ddq)
    }

    pub fn q(&self, t: f64) -> f64 {
        self.q_derivatives(t).0
    }

    pub fn radius(&self, t: f64) -> f64 {
        self.q(t).exp()
    }

    pub fn boundary_point(&self, t: f64) -> Point {
        let r = self.radius(t);
        let (s, c) = t.sin_cos();
        [r * c, r * s]
    }

    pub fn boundary_tangent(&self, t: f64) -> Point {
        let (q, dq, _) = self.q_derivatives(t);
        let r = q.exp();
        let (s, c) = t.sin_cos();
        [r * (dq * c - s), r * (dq * s + c)]
    }

    fn boundary_second(&self, t: f64) -> Point {
        let (q, dq, ddq) = self.q_derivatives(t);
        let r = q.exp();
        let (s, c) = t.sin_cos();
        // r'' = r (q'' + q'^2)
        let rpp = r * (ddq + dq * dq);
        let rp = r * dq;
        [rpp * c - 2.0 * rp * s - r * c, rpp * s + 2.0 * rp * c - r * s]
    }
}

/// Boundary used for data generation and evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "tag", rename_all = "snake_case")]
pub enum ParametricShape {
    Fourier { curve: FourierCurve },
    /// `(1.5 + 0.3 sin 3t)(cos t, sin t)`
    Pear,
    /// `(3/4)(cos^3 t + cos t, sin^3 t + sin t)`
    RoundedSquare,
}

impl From<FourierCurve> for ParametricShape {
    fn from(curve: FourierCurve) -> Self {
        ParametricShape::Fourier { curve }
    }
}

impl ParametricShape {
    pub fn unit_disk() -> Self {
        FourierCurve::unit_circle(8, 1.0).into()
    }

    pub fn name(&self) -> &'static str {
        match self {
            ParametricShape::Fourier { .. } => "fourier",
            ParametricShape::Pear => "pear",
            ParametricShape::RoundedSquare => "rounded_square",
        }
    }

    /// Shapes whose parameter equals the polar angle.
    pub fn is_starlike(&self) -> bool {
        !matches!(self, ParametricShape::RoundedSquare)
    }

    pub fn point(&self, t: f64) -> Point {
        match self {
            ParametricShape::Fourier { curve } => curve.boundary_point(t),
            ParametricShape::Pear => {
                let r = 1.5 + 0.3 * (3.0 * t).sin();
                [r * t.cos(), r * t.sin()]
            }
            ParametricShape::RoundedSquare => {
                let (s, c) = t.sin_cos();
                [0.75 * (c * c * c + c), 0.75 * (s * s * s + s)]
            }
        }
    }

    /// Exact derivative of [`Self::point`] with respect to `t`.
    pub fn tangent(&self, t: f64) -> Point {
        match self {
            ParametricShape::Fourier { curve } => curve.boundary_tangent(t),
            ParametricShape::Pear => {
                let r = 1.5 + 0.3 * (3.0 * t).sin();
                let rp = 0.9 * (3.0 * t).cos();
                let (s, c) = t.sin_cos();
                [rp * c - r * s, rp * s + r * c]
            }
            ParametricShape::RoundedSquare => {
                let (s, c) = t.sin_cos();
                [-0.75 * s * (3.0 * c * c + 1.0), 0.75 * c * (3.0 * s * s + 1.0)]
            }
        }
    }

    /// Exact second derivative of [`Self::point`].
    pub fn second_derivative(&self, t: f64) -> Point {
        match self {
            ParametricShape::Fourier { curve } => curve.boundary_second(t),
            ParametricShape::Pear => {
                let r = 1.5 + 0.3 * (3.0 * t).sin();
                let rp = 0.9 * (3.0 * t).cos();
                let rpp = -2.7 * (3.0 * t).sin();
                let (s, c) = t.sin_cos();
                [rpp * c - 2.0 * rp * s - r * c, rpp * s + 2.0 * rp * c - r * s]
            }
            ParametricShape::RoundedSquare => {
                let (s, c) = t.sin_cos();
                // d/dt of -(3/4)(3 c^2 s + s) and (3/4)(3 s^2 c + c)
                [
                    -0.75 * (c * (3.0 * c * c + 1.0) - 6.0 * c * s * s),
                    0.75 * (-s * (3.0 * s * s + 1.0) + 6.0 * s * c * c),
                ]
            }
        }
    }

    /// Polar angle in `[0, 2pi)` and distance from the origin of the boundary
    /// point at parameter `t`.
    pub fn polar_angle_radius(&self, t: f64) -> Result<(f64, f64)> {
        // star-shaped curves are parametrized by the polar angle itself
        if let Self::Fourier { curve } = self {
            return Ok((t.rem_euclid(TAU), curve.radius(t)));
        }
        let [x1, x2] = self.point(t);
        let r = x1.hypot(x2);
        if r < 1e-12 {
            return Err(Error::Degenerate(format!("boundary point at t={t} is the origin")));
        }
        Ok((x2.atan2(x1).rem_euclid(TAU), r))
    }

    /// Polar samples at the uniform parameter grid `t_l = 2pi l / n_t`.
    /// The unwrapped angle must increase strictly, otherwise the radius is not
    /// a function of the angle and the boundary metric is undefined.
    pub fn polar_samples(&self, n_t: usize) -> Result<Vec<(f64, f64)>> {
        let grid = parameter_grid(n_t);
        let samples = grid
            .iter()
            .map(|&t| self.polar_angle_radius(t))
            .collect::<Result<Vec<_>>>()?;
        let mut prev: Option<f64> = None;
        let mut turn = 0.0;
        for &(zeta, _) in &samples {
            if let Some(p) = prev {
                let mut step = zeta - p;
                if step < -PI {
                    step += TAU;
                }
                if step <= 0.0 {
                    return Err(Error::Metric(format!(
                        "polar angle of {} is not monotone in t",
                        self.name()
                    )));
                }
                turn += step;
            }
            prev = Some(zeta);
        }
        if turn >= TAU {
            return Err(Error::Metric(format!("polar angle of {} winds more than once", self.name())));
        }
        Ok(samples)
    }
}

/// `t_l = 2 pi l / n`, `l = 0..n`.
pub fn parameter_grid(n: usize) -> Vec<f64> {
    (0..n).map(|l| TAU * l as f64 / n as f64).collect()
}

/// Boundary nodes with exact derivative vectors.
#[derive(Debug, Clone)]
pub struct SurfaceGrid {
    pub nodes: Vec<f64>,
    pub points: Vec<Point>,
    pub tangents: Vec<Point>,
}

impl SurfaceGrid {
    pub fn new(shape: &ParametricShape, n_t: usize) -> Self {
        let nodes = parameter_grid(n_t);
        let points = nodes.iter().map(|&t| shape.point(t)).collect();
        let tangents = nodes.iter().map(|&t| shape.tangent(t)).collect();
        Self { nodes, points, tangents }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Cut-off and decay of the sampled coefficient sets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveSampling {
    pub n_lambda: usize,
    pub s: f64,
}

impl Default for CurveSampling {
    fn default() -> Self {
        Self { n_lambda: 8, s: 1.0 }
    }
}

/// Training distribution: `q0 ~ U(0.5, 1.5)`, `a_n, b_n ~ N(0, 0.2^2)` for
/// `n <= 4` and `a_n, b_n ~ U(0, 0.1)` above.
pub fn sample_random_curve<R: Rng + ?Sized>(rng: &mut R, sampling: CurveSampling) -> FourierCurve {
    let q0_dist = Uniform::new(0.5, 1.5).expect("valid range");
    let low = Normal::new(0.0, 0.2).expect("valid std");
    let high = Uniform::new(0.0, 0.1).expect("valid range");
    let q0 = q0_dist.sample(rng);
    let mut a = Vec::with_capacity(sampling.n_lambda);
    let mut b = Vec::with_capacity(sampling.n_lambda);
    for n in 1..=sampling.n_lambda {
        let (an, bn) = if n <= 4 {
            (low.sample(rng), low.sample(rng))
        } else {
            (high.sample(rng), high.sample(rng))
        };
        a.push(an);
        b.push(bn);
    }
    FourierCurve { q0, a, b, s: sampling.s }
}
