//! Reconstruction metrics, reciprocity diagnostics and the input-noise study.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::forward::{CMatrix, LimitedAperture, Msrm};
use crate::geometry::{FourierCurve, ParametricShape};
use crate::nn::{DdmModel, Mode, Tape};
use crate::physics::planar_tensor;
use crate::train::Sample;

/// Relative L2 distance between exact and recovered radii.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryError {
    pub value: f64,
    /// `r_exact - r_recovered` at each polar sample.
    pub residuals: Vec<f64>,
    pub exact: String,
    pub recovered: String,
}

/// Compare radii at the polar angles of the exact boundary sampled at
/// `t_l = 2 pi l / n_t`. The recovered radius is `e^{q(zeta_l)}`.
pub fn boundary_error(exact: &ParametricShape, recovered: &FourierCurve, n_t: usize) -> Result<BoundaryError> {
    let samples = exact.polar_samples(n_t)?;
    let residuals: Vec<f64> = samples.iter().map(|&(zeta, r)| r - recovered.radius(zeta)).collect();
    let num: f64 = residuals.iter().map(|d| d * d).sum();
    let den: f64 = samples.iter().map(|(_, r)| r * r).sum();
    Ok(BoundaryError {
        value: (num / den).sqrt(),
        residuals,
        exact: exact.name().to_string(),
        recovered: "fourier".to_string(),
    })
}

/// Relative Frobenius mismatch between `F(x_j, d_i)` and `F(-d_i, -x_j)`.
pub fn reciprocity_residual(msrm: &Msrm) -> f64 {
    let n = 2 * msrm.m;
    let f = &msrm.matrix;
    let mirrored = CMatrix::from_fn(n, n, |j, i| f.get((i + msrm.m) % n, (j + msrm.m) % n));
    let diff: f64 = f.data.iter().zip(&mirrored.data).map(|(a, b)| (a - b).norm_sqr()).sum();
    diff.sqrt() / f.frobenius_norm()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseStudyOptions {
    pub sigmas: Vec<f64>,
    /// Antithetic pairs per noise level.
    pub trials: usize,
    pub seed: u64,
}

impl Default for NoiseStudyOptions {
    fn default() -> Self {
        Self { sigmas: vec![0.01, 0.02, 0.04, 0.08], trials: 2000, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoisePoint {
    pub sigma: f64,
    /// Monte Carlo estimate of `E[J(F + eta)] - J(F)`.
    pub mean_delta: f64,
    pub std_err: f64,
    pub trials: usize,
    /// Standard error above 20% of the mean.
    pub insufficient: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseStudy {
    pub base_loss: f64,
    pub points: Vec<NoisePoint>,
    /// Least-squares slope of `log mean_delta` against `log sigma`; absent
    /// when fewer than two levels have a positive mean.
    pub slope: Option<f64>,
    /// 95% confidence interval of the slope.
    pub slope_ci: Option<[f64; 2]>,
    /// Sample mean of `Delta^2` over every draw, which should be near 1/3.
    pub delta_second_moment: f64,
}

impl NoiseStudy {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "sigma,mean_delta,std_err,trials")?;
        for p in &self.points {
            writeln!(w, "{},{:.17e},{:.17e},{}", p.sigma, p.mean_delta, p.std_err, p.trials)?;
        }
        Ok(())
    }
}

/// Per-sample `J_phy + beta_DC J_DC` in evaluation mode. The data term is
/// included only when the model completes data.
pub fn ddm_loss_per_sample(model: &DdmModel, config: &RunConfig, inputs: &[&LimitedAperture], exact: &[&Msrm]) -> Result<Vec<f64>> {
    let setup = config.physics();
    let input = model.input(inputs)?;
    let mut tape = Tape::new();
    let out = model.forward(&mut tape, &input, Mode::Eval, false)?;
    let terms = setup.j_phy(&mut tape, out.f_pred, out.g, out.q)?;
    let total = if model.dcnet.is_some() {
        let mats: Vec<&CMatrix> = exact.iter().map(|e| &e.matrix).collect();
        let dc = setup.j_dc(&mut tape, out.f_pred, &planar_tensor(&mats)?)?;
        tape.lincomb(&[(terms.total, 1.0), (dc, setup.weights.beta_dc)])?
    } else {
        terms.total
    };
    Ok(tape.value(total).data().to_vec())
}

fn perturb(data: &LimitedAperture, delta: &[f64], scale: f64) -> LimitedAperture {
    let mut out = data.clone();
    for (z, d) in out.matrix.data.iter_mut().zip(delta) {
        *z *= 1.0 + scale * d;
    }
    out
}

/// Least-squares line through `(x, y)`: slope and its 95% interval.
pub fn fit_slope(x: &[f64], y: &[f64]) -> Option<(f64, [f64; 2])> {
    let n = x.len();
    if n < 2 {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let half = if n > 2 {
        let ssr: f64 = x.iter().zip(y).map(|(a, b)| (b - my - slope * (a - mx)).powi(2)).sum();
        let t = StudentsT::new(0.0, 1.0, (n - 2) as f64).expect("positive degrees of freedom").inverse_cdf(0.975);
        t * (ssr / (n - 2) as f64 / sxx).sqrt()
    } else {
        f64::INFINITY
    };
    Some((slope, [slope - half, slope + half]))
}

const PAIRS_PER_BATCH: usize = 32;

/// Monte Carlo estimate of how the loss responds to multiplicative uniform
/// input noise, with network parameters held fixed. Each trial draws `Delta`
/// and evaluates the antithetic pair `F (1 +- sigma Delta)`, which cancels the
/// odd orders of the expansion without biasing the mean.
pub fn noise_scaling_study(model: &DdmModel, config: &RunConfig, sample: &Sample, opts: &NoiseStudyOptions) -> Result<NoiseStudy> {
    if opts.trials < 2 {
        return Err(Error::Config("noise study needs at least two trials per level".into()));
    }
    if let Some(s) = opts.sigmas.iter().find(|s| !(0.0..1.0).contains(*s)) {
        return Err(Error::Config(format!("noise level {s} outside [0, 1)")));
    }
    let base = ddm_loss_per_sample(model, config, &[&sample.limited], &[&sample.full])?[0];
    let entries = sample.limited.matrix.data.len();
    let unit = Uniform::new_inclusive(-1.0, 1.0).expect("valid range");

    let mut points = Vec::new();
    let mut moment = (0.0, 0usize);
    for (level, &sigma) in opts.sigmas.iter().enumerate() {
        if sigma == 0.0 {
            points.push(NoisePoint { sigma, mean_delta: 0.0, std_err: 0.0, trials: opts.trials, insufficient: false });
            continue;
        }
        let starts: Vec<usize> = (0..opts.trials).step_by(PAIRS_PER_BATCH).collect();
        let batches: Vec<Result<(Vec<f64>, f64)>> = starts
            .par_iter()
            .map(|&start| {
                let end = (start + PAIRS_PER_BATCH).min(opts.trials);
                let mut inputs = Vec::with_capacity(2 * (end - start));
                let mut sq = 0.0;
                for trial in start..end {
                    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
                    rng.set_stream(((level as u64) << 32) | trial as u64);
                    let delta: Vec<f64> = (0..entries).map(|_| unit.sample(&mut rng)).collect();
                    sq += delta.iter().map(|d| d * d).sum::<f64>();
                    inputs.push(perturb(&sample.limited, &delta, sigma));
                    inputs.push(perturb(&sample.limited, &delta, -sigma));
                }
                let refs: Vec<&LimitedAperture> = inputs.iter().collect();
                let exact = vec![&sample.full; refs.len()];
                let loss = ddm_loss_per_sample(model, config, &refs, &exact)?;
                Ok((loss.chunks(2).map(|p| 0.5 * (p[0] + p[1]) - base).collect(), sq))
            })
            .collect();
        let mut deltas = Vec::with_capacity(opts.trials);
        for b in batches {
            let (d, sq) = b?;
            moment.0 += sq;
            moment.1 += d.len() * entries;
            deltas.extend(d);
        }
        let n = deltas.len() as f64;
        let mean = deltas.iter().sum::<f64>() / n;
        let var = deltas.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let std_err = (var / n).sqrt();
        let insufficient = std_err > 0.2 * mean.abs();
        if insufficient {
            log::warn!("noise level {sigma}: standard error {std_err:e} exceeds 20% of the mean {mean:e}; add trials");
        }
        points.push(NoisePoint { sigma, mean_delta: mean, std_err, trials: opts.trials, insufficient });
    }

    let (lx, ly): (Vec<f64>, Vec<f64>) = points
        .iter()
        .filter(|p| p.sigma > 0.0 && p.mean_delta > 0.0)
        .map(|p| (p.sigma.ln(), p.mean_delta.ln()))
        .unzip();
    let fit = fit_slope(&lx, &ly);
    Ok(NoiseStudy {
        base_loss: base,
        points,
        slope: fit.map(|f| f.0),
        slope_ci: fit.map(|f| f.1),
        delta_second_moment: if moment.1 > 0 { moment.0 / moment.1 as f64 } else { f64::NAN },
    })
}

/// Sample mean of `Delta^2` for `draws` uniform draws on `[-1, 1]`.
pub fn uniform_second_moment<R: Rng + ?Sized>(draws: usize, rng: &mut R) -> f64 {
    let unit = Uniform::new_inclusive(-1.0, 1.0).expect("valid range");
    (0..draws).map(|_| { let d: f64 = unit.sample(rng); d * d }).sum::<f64>() / draws as f64
}
