//! Sound-soft forward scattering by a Nyström discretization of a boundary
//! integral equation, multi-static response matrices, aperture extraction,
//! noise, and the analytic disk series.

use std::f64::consts::{FRAC_PI_4, PI, TAU};
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ParametricShape, Point};
use crate::specfun::{self, EULER_GAMMA};

const I: Complex64 = Complex64::new(0.0, 1.0);

/// Dense complex matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<Complex64>,
}

impl CMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![Complex64::new(0.0, 0.0); rows * cols] }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> Complex64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: Complex64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }
}

/// `tau_i = i pi / m` for `i = 0..2m` (zero-based).
pub fn direction_angles(m: usize) -> Vec<f64> {
    (0..2 * m).map(|i| i as f64 * PI / m as f64).collect()
}

pub fn unit_vector(angle: f64) -> Point {
    let (s, c) = angle.sin_cos();
    [c, s]
}

/// Full-aperture far-field matrix; entry `(j, i)` is `u_inf(x_j, d_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Msrm {
    pub m: usize,
    pub matrix: CMatrix,
}

impl Msrm {
    pub fn new(m: usize, matrix: CMatrix) -> Result<Self> {
        if matrix.rows != 2 * m || matrix.cols != 2 * m {
            return Err(Error::DimensionMismatch(format!(
                "MSRM for m={m} must be {0}x{0}, got {1}x{2}",
                2 * m,
                matrix.rows,
                matrix.cols
            )));
        }
        Ok(Self { m, matrix })
    }
}

/// A multiple of pi stored as an exact fraction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PiFraction {
    pub num: i64,
    pub den: i64,
}

impl PiFraction {
    pub fn new(num: i64, den: i64) -> Result<Self> {
        if den <= 0 {
            return Err(Error::Aperture(format!("denominator must be positive, got {den}")));
        }
        let g = gcd(num.unsigned_abs(), den as u64).max(1) as i64;
        Ok(Self { num: num / g, den: den / g })
    }

    pub fn radians(self) -> f64 {
        PI * self.num as f64 / self.den as f64
    }

    /// Grid index `value * m / pi`, if integral.
    fn grid_index(self, m: usize) -> Option<usize> {
        let scaled = self.num * m as i64;
        (scaled % self.den == 0 && scaled >= 0).then(|| (scaled / self.den) as usize)
    }
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

impl fmt::Display for PiFraction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den == 1 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/{}", self.num, self.den)
        }
    }
}

impl FromStr for PiFraction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Aperture(format!("cannot parse '{s}' as a fraction of pi"));
        let (n, d) = match s.trim().split_once('/') {
            Some((n, d)) => (n.trim().parse().map_err(|_| bad())?, d.trim().parse().map_err(|_| bad())?),
            None => (s.trim().parse().map_err(|_| bad())?, 1),
        };
        PiFraction::new(n, d)
    }
}

/// Closed angular arc `[start, end]` in units of pi, e.g. `0:1/2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Arc {
    pub start: PiFraction,
    pub end: PiFraction,
}

impl Arc {
    pub fn full() -> Self {
        Self { start: PiFraction { num: 0, den: 1 }, end: PiFraction { num: 2, den: 1 } }
    }

    pub fn new(start: PiFraction, end: PiFraction) -> Result<Self> {
        let (a, b) = (start.radians(), end.radians());
        if !(0.0 <= a && a < b && b <= TAU + 1e-12) {
            return Err(Error::Aperture(format!("arc [{start}, {end}]pi must satisfy 0 <= start < end <= 2")));
        }
        Ok(Self { start, end })
    }

    pub fn is_full(&self) -> bool {
        self.start.num == 0 && self.end.num == 2 * self.end.den
    }

    /// Zero-based half-open index range `[n, N)` of the `tau` grid covered
    /// by the arc: `n = start m / pi`, `N = end m / pi`.
    pub fn index_range(&self, m: usize) -> Result<(usize, usize)> {
        let lo = self
            .start
            .grid_index(m)
            .ok_or_else(|| Error::Aperture(format!("{}pi is not a multiple of pi/{m}", self.start)))?;
        let hi = self
            .end
            .grid_index(m)
            .ok_or_else(|| Error::Aperture(format!("{}pi is not a multiple of pi/{m}", self.end)))?;
        if hi > 2 * m || lo >= hi {
            return Err(Error::Aperture(format!("arc {self} out of range for m={m}")));
        }
        Ok((lo, hi))
    }
}

impl fmt::Display for Arc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.start, self.end)
    }
}

impl FromStr for Arc {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (a, b) = s
            .split_once(':')
            .ok_or_else(|| Error::Aperture(format!("arc '{s}' must look like 'start:end'")))?;
        Arc::new(a.parse()?, b.parse()?)
    }
}

impl Serialize for Arc {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Arc {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Observation (`phi`) and incidence (`psi`) arcs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Aperture {
    pub observation: Arc,
    pub incidence: Arc,
}

impl Aperture {
    pub fn full() -> Self {
        Self { observation: Arc::full(), incidence: Arc::full() }
    }

    pub fn is_full(&self) -> bool {
        self.observation.is_full() && self.incidence.is_full()
    }

    pub fn bounds(&self, m: usize) -> Result<ApertureBounds> {
        let (obs_lo, obs_hi) = self.observation.index_range(m)?;
        let (inc_lo, inc_hi) = self.incidence.index_range(m)?;
        Ok(ApertureBounds { m, obs_lo, obs_hi, inc_lo, inc_hi })
    }
}

impl Default for Aperture {
    fn default() -> Self {
        Self {
            observation: Arc::new(PiFraction { num: 0, den: 1 }, PiFraction { num: 1, den: 2 }).expect("valid arc"),
            incidence: Arc::full(),
        }
    }
}

/// Zero-based half-open row (observation) and column (incidence) ranges.
/// One-based bounds are `n^o = obs_lo + 1`, `N^o = obs_hi` and likewise for
/// incidence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApertureBounds {
    pub m: usize,
    pub obs_lo: usize,
    pub obs_hi: usize,
    pub inc_lo: usize,
    pub inc_hi: usize,
}

impl ApertureBounds {
    pub fn full(m: usize) -> Self {
        Self { m, obs_lo: 0, obs_hi: 2 * m, inc_lo: 0, inc_hi: 2 * m }
    }

    pub fn rows(&self) -> usize {
        self.obs_hi - self.obs_lo
    }

    pub fn cols(&self) -> usize {
        self.inc_hi - self.inc_lo
    }

    pub fn is_full(&self) -> bool {
        self.rows() == 2 * self.m && self.cols() == 2 * self.m
    }

    pub fn validate(&self) -> Result<()> {
        if self.obs_lo >= self.obs_hi || self.inc_lo >= self.inc_hi || self.obs_hi > 2 * self.m || self.inc_hi > 2 * self.m {
            return Err(Error::Aperture(format!("index bounds {self:?} invalid")));
        }
        Ok(())
    }
}

/// Contiguous sub-block of an MSRM.
#[derive(Debug, Clone, PartialEq)]
pub struct LimitedAperture {
    pub bounds: ApertureBounds,
    pub matrix: CMatrix,
}

impl LimitedAperture {
    pub fn m(&self) -> usize {
        self.bounds.m
    }
}

/// Extract the block observed through `aperture`.
pub fn extract_limited(msrm: &Msrm, aperture: &Aperture) -> Result<LimitedAperture> {
    let bounds = aperture.bounds(msrm.m)?;
    Ok(extract_bounds(msrm, bounds))
}

pub fn extract_bounds(msrm: &Msrm, b: ApertureBounds) -> LimitedAperture {
    let matrix = CMatrix::from_fn(b.rows(), b.cols(), |r, c| msrm.matrix.get(b.obs_lo + r, b.inc_lo + c));
    LimitedAperture { bounds: b, matrix }
}

/// Multiplicative uniform noise `F (1 + sigma Delta)` with an independent
/// real `Delta ~ U(-1, 1)` per entry.
pub fn add_noise<R: Rng + ?Sized>(data: &LimitedAperture, sigma: f64, rng: &mut R) -> LimitedAperture {
    if sigma == 0.0 {
        return data.clone();
    }
    let delta = Uniform::new_inclusive(-1.0, 1.0).expect("valid range");
    let mut out = data.clone();
    for z in out.matrix.data.iter_mut() {
        *z *= 1.0 + sigma * delta.sample(rng);
    }
    out
}

/// Boundary integral formulation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Formulation {
    /// `S psi = -u^i`.
    SingleLayer,
    /// `(I/2 + K - i eta S) psi = -u^i`; free of interior resonances.
    CombinedField { eta: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    /// Quadrature node count; must be even.
    pub nodes: usize,
    pub formulation: Formulation,
    /// Largest accepted 1-norm condition estimate.
    pub condition_limit: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { nodes: 128, formulation: Formulation::SingleLayer, condition_limit: 1e12 }
    }
}

impl SolverOptions {
    /// Combined-field variant with coupling `eta = k`.
    pub fn combined(k: f64) -> Self {
        Self { formulation: Formulation::CombinedField { eta: k }, ..Self::default() }
    }
}

/// `e^{i pi/4} / sqrt(8 pi k)`, the far-field constant of the fundamental solution.
pub fn far_field_constant(k: f64) -> Complex64 {
    Complex64::from_polar(1.0 / (8.0 * PI * k).sqrt(), FRAC_PI_4)
}

/// Weights of the trigonometric rule for `int ln(4 sin^2((t - s)/2)) f(s) ds`
/// indexed by `|i - j|` on `2n` equispaced nodes.
fn log_weights(n: usize) -> Vec<f64> {
    let nf = n as f64;
    (0..2 * n)
        .map(|d| {
            let mut acc = 0.0;
            for p in 1..n {
                acc += (p as f64 * d as f64 * PI / nf).cos() / p as f64;
            }
            let sign = if d % 2 == 0 { 1.0 } else { -1.0 };
            -2.0 * PI / nf * acc - PI / (nf * nf) * sign
        })
        .collect()
}

/// Assembled and factorized boundary integral system.
pub struct NystromSystem {
    pub k: f64,
    pub formulation: Formulation,
    pub nodes: Vec<f64>,
    pub points: Vec<Point>,
    pub tangents: Vec<Point>,
    pub condition: f64,
    lu: nalgebra::LU<Complex64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl NystromSystem {
    pub fn new(shape: &ParametricShape, k: f64, opts: &SolverOptions) -> Result<Self> {
        if !(k > 0.0) {
            return Err(Error::Config(format!("wavenumber must be positive, got {k}")));
        }
        let nq = opts.nodes;
        if nq < 4 || nq % 2 != 0 {
            return Err(Error::Config(format!("quadrature node count must be even and >= 4, got {nq}")));
        }
        let half = nq / 2;
        let nodes: Vec<f64> = (0..nq).map(|j| PI * j as f64 / half as f64).collect();
        let points: Vec<Point> = nodes.iter().map(|&t| shape.point(t)).collect();
        let tangents: Vec<Point> = nodes.iter().map(|&t| shape.tangent(t)).collect();
        let seconds: Vec<Point> = nodes.iter().map(|&t| shape.second_derivative(t)).collect();
        let speeds: Vec<f64> = tangents.iter().map(|d| d[0].hypot(d[1])).collect();
        let weights = log_weights(half);
        let h = PI / half as f64;

        let rows: Vec<Vec<Complex64>> = (0..nq)
            .into_par_iter()
            .map(|i| -> Result<Vec<Complex64>> {
                let mut row = Vec::with_capacity(nq);
                for j in 0..nq {
                    let r_weight = weights[(i as isize - j as isize).unsigned_abs()];
                    let entry = if i == j {
                        let smooth = (Complex64::new(-EULER_GAMMA / TAU, 0.25)
                            - (0.5 * k * speeds[i]).ln() / TAU)
                            * speeds[i];
                        let single = r_weight * (-speeds[i] / (4.0 * PI)) + h * smooth;
                        match opts.formulation {
                            Formulation::SingleLayer => single,
                            Formulation::CombinedField { eta } => {
                                let d = tangents[i];
                                let dd = seconds[i];
                                let normal_curv = d[1] * dd[0] - d[0] * dd[1];
                                let double = normal_curv / (4.0 * PI * speeds[i] * speeds[i]);
                                Complex64::new(0.5, 0.0) + h * double - I * eta * single
                            }
                        }
                    } else {
                        let dx = [points[i][0] - points[j][0], points[i][1] - points[j][1]];
                        let dist = dx[0].hypot(dx[1]);
                        let (h0, h1) = specfun::hankel1_01(k * dist)?;
                        let log_term = (4.0 * (0.5 * (nodes[i] - nodes[j])).sin().powi(2)).ln();
                        let s_full = 0.25 * I * h0 * speeds[j];
                        let s_log = -h0.re / (4.0 * PI) * speeds[j];
                        let s_smooth = s_full - s_log * log_term;
                        let single = r_weight * s_log + h * s_smooth;
                        match opts.formulation {
                            Formulation::SingleLayer => single,
                            Formulation::CombinedField { eta } => {
                                // unnormalized outward normal at the source node
                                let n = [tangents[j][1], -tangents[j][0]];
                                let ndx = n[0] * dx[0] + n[1] * dx[1];
                                let k_full = 0.25 * I * k * h1 * ndx / dist;
                                let k_log = -k / (4.0 * PI) * ndx * h1.re / dist;
                                let k_smooth = k_full - k_log * log_term;
                                r_weight * k_log + h * k_smooth - I * eta * single
                            }
                        }
                    };
                    row.push(entry);
                }
                Ok(row)
            })
            .collect::<Result<_>>()?;

        let matrix = DMatrix::from_fn(nq, nq, |i, j| rows[i][j]);
        let norm1 = column_sum_norm(&matrix);
        let lu = matrix.lu();
        let inverse = lu
            .try_inverse()
            .ok_or(Error::NearSingular(f64::INFINITY))?;
        let condition = norm1 * column_sum_norm(&inverse);
        if !condition.is_finite() || condition > opts.condition_limit {
            return Err(Error::NearSingular(condition));
        }
        Ok(Self { k, formulation: opts.formulation, nodes, points, tangents, condition, lu })
    }

    /// Densities for the plane waves `e^{i k x . d}` with the given incident
    /// directions, one column per direction.
    pub fn densities(&self, incident: &[Point], amplitude: f64) -> DMatrix<Complex64> {
        let nq = self.nodes.len();
        let rhs = DMatrix::from_fn(nq, incident.len(), |i, c| {
            let d = incident[c];
            let phase = self.k * (self.points[i][0] * d[0] + self.points[i][1] * d[1]);
            -amplitude * Complex64::from_polar(1.0, phase)
        });
        self.lu.solve(&rhs).expect("factorization checked at construction")
    }

    /// Far field of each density column in each observation direction;
    /// result is `observations x columns`.
    pub fn far_field(&self, densities: &DMatrix<Complex64>, observations: &[Point]) -> CMatrix {
        let nq = self.nodes.len();
        let h = TAU / nq as f64;
        let gamma = far_field_constant(self.k);
        let kernel: Vec<Vec<Complex64>> = observations
            .iter()
            .map(|xh| {
                (0..nq)
                    .map(|j| {
                        let p = self.points[j];
                        let t = self.tangents[j];
                        let speed = t[0].hypot(t[1]);
                        let phase = Complex64::from_polar(1.0, -self.k * (xh[0] * p[0] + xh[1] * p[1]));
                        let factor = match self.formulation {
                            Formulation::SingleLayer => Complex64::new(speed, 0.0),
                            Formulation::CombinedField { eta } => {
                                let n_dot = xh[0] * t[1] - xh[1] * t[0];
                                -I * self.k * n_dot - I * eta * speed
                            }
                        };
                        gamma * h * factor * phase
                    })
                    .collect()
            })
            .collect();
        CMatrix::from_fn(observations.len(), densities.ncols(), |o, c| {
            kernel[o].iter().enumerate().map(|(j, w)| w * densities[(j, c)]).sum()
        })
    }
}

fn column_sum_norm(m: &DMatrix<Complex64>) -> f64 {
    m.column_iter().map(|c| c.iter().map(|z| z.norm()).sum::<f64>()).fold(0.0, f64::max)
}

/// Far field `u_inf(x, d)` for the requested observation angles.
pub fn solve_far_field(
    shape: &ParametricShape,
    k: f64,
    d: Point,
    observation_angles: &[f64],
    opts: &SolverOptions,
) -> Result<Vec<Complex64>> {
    let system = NystromSystem::new(shape, k, opts)?;
    let dens = system.densities(&[d], 1.0);
    let obs: Vec<Point> = observation_angles.iter().map(|&a| unit_vector(a)).collect();
    Ok(system.far_field(&dens, &obs).data)
}

/// One factorization, `2m` incident directions, `2m` observation directions.
pub fn assemble_msrm(shape: &ParametricShape, k: f64, m: usize, opts: &SolverOptions) -> Result<Msrm> {
    if m < 2 {
        return Err(Error::Config(format!("m must be at least 2, got {m}")));
    }
    let system = NystromSystem::new(shape, k, opts)?;
    let dirs: Vec<Point> = direction_angles(m).into_iter().map(unit_vector).collect();
    let dens = system.densities(&dirs, 1.0);
    let matrix = system.far_field(&dens, &dirs);
    if !matrix.is_finite() {
        return Err(Error::Numerical("non-finite far-field entries".into()));
    }
    Msrm::new(m, matrix)
}

/// Sound-soft disk of radius `a` centred at the origin:
/// `u_inf(theta) = -sqrt(2/(pi k)) e^{-i pi/4} sum_n J_n(ka)/H_n(ka) e^{i n theta}`
/// where `theta` is the angle between observation and incidence.
pub fn disk_far_field(radius: f64, k: f64, theta: f64, n_terms: u32) -> Result<Complex64> {
    let ka = k * radius;
    let (j, y) = specfun::bessel_jy_seq(n_terms, ka)?;
    let mut sum = Complex64::new(0.0, 0.0);
    for n in 0..=n_terms as usize {
        let ratio = j[n] / Complex64::new(j[n], y[n]);
        let mode = if n == 0 { Complex64::new(1.0, 0.0) } else { Complex64::new(2.0 * (n as f64 * theta).cos(), 0.0) };
        sum += ratio * mode;
    }
    Ok(-(2.0 / (PI * k)).sqrt() * Complex64::from_polar(1.0, -FRAC_PI_4) * sum)
}

/// Analytic MSRM of the disk.
pub fn disk_msrm(radius: f64, k: f64, m: usize, n_terms: u32) -> Result<Msrm> {
    let tau = direction_angles(m);
    let per_offset: Vec<Complex64> = (0..2 * m)
        .map(|o| disk_far_field(radius, k, tau[o], n_terms))
        .collect::<Result<_>>()?;
    let matrix = CMatrix::from_fn(2 * m, 2 * m, |j, i| per_offset[(j + 2 * m - i) % (2 * m)]);
    Msrm::new(m, matrix)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::geometry::FourierCurve;

    fn pf(n: i64, d: i64) -> PiFraction {
        PiFraction::new(n, d).unwrap()
    }

    #[test]
    fn log_weights_integrate_constant() {
        // int_0^{2pi} ln(4 sin^2(s/2)) ds = 0
        let w = log_weights(32);
        assert!(w.iter().sum::<f64>().abs() < 1e-13);
    }

    #[test]
    fn arc_parsing() {
        let a: Arc = "0:1/2".parse().unwrap();
        assert_eq!(a.start, pf(0, 1));
        assert_eq!(a.end, pf(1, 2));
        assert_eq!(a.to_string(), "0:1/2");
        assert!("1:1/2".parse::<Arc>().is_err());
        assert!("0:3".parse::<Arc>().is_err());
        assert!("x:1".parse::<Arc>().is_err());
        assert!("0:2".parse::<Arc>().unwrap().is_full());
    }

    #[test]
    fn index_rules() {
        let m = 16;
        let half: Arc = "0:1".parse().unwrap();
        assert_eq!(half.index_range(m).unwrap(), (0, 16));
        let quarter: Arc = "0:1/2".parse().unwrap();
        assert_eq!(quarter.index_range(m).unwrap(), (0, 8));
        let mid: Arc = "1/2:3/2".parse().unwrap();
        // n^i = m/2 + 1, N^i = 3m/2 (one-based)
        assert_eq!(mid.index_range(m).unwrap(), (8, 24));
        let odd: Arc = "0:1/32".parse().unwrap();
        assert!(matches!(odd.index_range(m), Err(Error::Aperture(_))));
    }

    #[test]
    fn extraction_shapes() {
        let m = 16;
        let msrm = Msrm::new(m, CMatrix::from_fn(32, 32, |r, c| Complex64::new(r as f64, c as f64))).unwrap();
        let full = extract_limited(&msrm, &Aperture::full()).unwrap();
        assert_eq!(full.matrix, msrm.matrix);
        let ap = Aperture { observation: "0:1/2".parse().unwrap(), incidence: Arc::full() };
        let lim = extract_limited(&msrm, &ap).unwrap();
        assert_eq!((lim.matrix.rows, lim.matrix.cols), (8, 32));
        assert_eq!(lim.matrix.get(7, 31), msrm.matrix.get(7, 31));
        let ap = Aperture { observation: "0:1".parse().unwrap(), incidence: Arc::full() };
        let b = ap.bounds(m).unwrap();
        assert_eq!((b.obs_lo + 1, b.obs_hi, b.inc_lo + 1, b.inc_hi), (1, 16, 1, 32));
    }

    #[test]
    fn noise_properties() {
        let data = LimitedAperture {
            bounds: ApertureBounds::full(2),
            matrix: CMatrix::from_fn(4, 4, |r, c| Complex64::new(1.0 + r as f64, c as f64 - 1.5)),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(add_noise(&data, 0.0, &mut rng), data);
        for _ in 0..50 {
            let noisy = add_noise(&data, 0.3, &mut rng);
            let diff = CMatrix::from_fn(4, 4, |r, c| noisy.matrix.get(r, c) - data.matrix.get(r, c));
            assert!(diff.frobenius_norm() <= 0.3 * data.matrix.frobenius_norm() + 1e-15);
        }
    }

    #[test]
    fn noise_is_unbiased() {
        let data = LimitedAperture {
            bounds: ApertureBounds::full(1),
            matrix: CMatrix::from_fn(2, 2, |_, _| Complex64::new(0.7, -0.4)),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let n = 10_000;
        let sigma = 0.5;
        let mut sum = Complex64::new(0.0, 0.0);
        for _ in 0..n {
            sum += add_noise(&data, sigma, &mut rng).matrix.get(0, 0);
        }
        let mean = sum / n as f64;
        // std of 0.7 * sigma * U(-1,1) is 0.7 * sigma / sqrt(3)
        let se = 0.7 * sigma / 3f64.sqrt() / (n as f64).sqrt();
        assert!((mean.re - 0.7).abs() < 3.0 * se);
    }

    #[test]
    fn disk_matches_series() {
        let shape = ParametricShape::unit_disk();
        let k = 3.0;
        let angles = direction_angles(16);
        let got = solve_far_field(&shape, k, unit_vector(0.0), &angles, &SolverOptions::default()).unwrap();
        let want: Vec<Complex64> = angles.iter().map(|&t| disk_far_field(1.0, k, t, 30).unwrap()).collect();
        let err: f64 = got.iter().zip(&want).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
        let norm: f64 = want.iter().map(|b| b.norm_sqr()).sum::<f64>().sqrt();
        assert!(err / norm < 1e-8, "relative error {}", err / norm);
    }

    #[test]
    fn combined_field_matches_single_layer() {
        let shape: ParametricShape =
            FourierCurve::new(1.0, vec![0.1, -0.2], vec![0.05, 0.1], 1.0).unwrap().into();
        let a = assemble_msrm(&shape, 3.0, 8, &SolverOptions::default()).unwrap();
        let b = assemble_msrm(&shape, 3.0, 8, &SolverOptions::combined(3.0)).unwrap();
        let diff = CMatrix::from_fn(16, 16, |r, c| a.matrix.get(r, c) - b.matrix.get(r, c));
        assert!(diff.frobenius_norm() / a.matrix.frobenius_norm() < 1e-9);
    }

    #[test]
    fn quadrature_converges() {
        let shape = ParametricShape::unit_disk();
        let angles = direction_angles(8);
        let coarse = SolverOptions { nodes: 64, ..Default::default() };
        let a = solve_far_field(&shape, 3.0, unit_vector(0.4), &angles, &coarse).unwrap();
        let b = solve_far_field(&shape, 3.0, unit_vector(0.4), &angles, &SolverOptions::default()).unwrap();
        assert!(a.iter().zip(&b).all(|(x, y)| (x - y).norm() <= 1e-10));
    }

    #[test]
    fn far_field_is_linear_in_amplitude() {
        let shape = ParametricShape::Pear;
        let sys = NystromSystem::new(&shape, 3.0, &SolverOptions::default()).unwrap();
        let obs = [unit_vector(0.3), unit_vector(2.0)];
        let one = sys.far_field(&sys.densities(&[unit_vector(1.0)], 1.0), &obs);
        let two = sys.far_field(&sys.densities(&[unit_vector(1.0)], 2.0), &obs);
        for (a, b) in one.data.iter().zip(&two.data) {
            assert!((2.0 * a - b).norm() < 1e-14);
        }
    }

    #[test]
    fn disk_msrm_rows_are_cyclic_shifts() {
        let msrm = assemble_msrm(&ParametricShape::unit_disk(), 3.0, 16, &SolverOptions::default()).unwrap();
        let n = 32;
        for j in 1..n {
            for i in 0..n {
                let shifted = msrm.matrix.get(0, (i + n - j) % n);
                assert!((msrm.matrix.get(j, i) - shifted).norm() < 1e-10);
            }
        }
        assert!(msrm.matrix.frobenius_norm() > 0.0);
    }

    #[test]
    fn msrm_matches_single_direction_solves() {
        let shape = ParametricShape::RoundedSquare;
        let opts = SolverOptions::default();
        let msrm = assemble_msrm(&shape, 3.0, 4, &opts).unwrap();
        let tau = direction_angles(4);
        for (i, &ti) in tau.iter().enumerate() {
            let col = solve_far_field(&shape, 3.0, unit_vector(ti), &tau, &opts).unwrap();
            for (j, v) in col.iter().enumerate() {
                assert_eq!(*v, msrm.matrix.get(j, i));
            }
        }
    }

    #[test]
    fn interior_resonance_is_flagged() {
        // k = j_{0,1} is a Dirichlet eigenvalue of the unit disk
        let k = 2.404_825_557_695_773;
        let err = NystromSystem::new(&ParametricShape::unit_disk(), k, &SolverOptions::default());
        assert!(matches!(err, Err(Error::NearSingular(_))));
        assert!(NystromSystem::new(&ParametricShape::unit_disk(), k, &SolverOptions::combined(k)).is_ok());
    }
}
