//! Dataset generation, the DDM training loop, inference and error metrics.

use std::time::Instant;

use log::{info, warn};
use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::forward::{add_noise, assemble_msrm, extract_limited, CMatrix, LimitedAperture, Msrm};
use crate::geometry::{sample_random_curve, FourierCurve, ParametricShape};
use crate::nn::{Adam, DdmModel, Mode, Tape, Tensor};
use crate::physics::{interleaved_to_complex, planar_tensor, planar_to_cmatrix};

/// Give up on a sample after this many rejected curves.
const MAX_RETRIES: usize = 64;

/// Stream offset separating the training shuffle from sample generation.
const SHUFFLE_STREAM: u64 = 1 << 40;

/// One training or test example.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// Noisy observed block.
    pub limited: LimitedAperture,
    /// Exact full matrix.
    pub full: Msrm,
    /// Generating curve, kept for evaluation only.
    pub curve: FourierCurve,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub config: RunConfig,
    pub samples: Vec<Sample>,
    /// Rejected curve draws during generation.
    pub retries: usize,
}

impl Dataset {
    pub fn n_train(&self) -> usize {
        self.samples.len() * 4 / 5
    }

    pub fn train(&self) -> &[Sample] {
        &self.samples[..self.n_train()]
    }

    pub fn test(&self) -> &[Sample] {
        &self.samples[self.n_train()..]
    }
}

/// Generator for sample `index`: one ChaCha stream per sample under the
/// master seed, so results do not depend on scheduling.
pub fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn generate_sample(config: &RunConfig, index: usize) -> Result<(Sample, usize)> {
    let mut rng = sample_rng(config.seed, index as u64);
    let mut last_err = None;
    for attempt in 0..MAX_RETRIES {
        let curve = sample_random_curve(&mut rng, config.sampling());
        let shape = ParametricShape::from(curve.clone());
        match assemble_msrm(&shape, config.k, config.m, &config.solver) {
            Ok(full) if full.matrix.is_finite() => {
                let limited = extract_limited(&full, &config.aperture)?;
                let limited = add_noise(&limited, config.sigma, &mut rng);
                return Ok((Sample { limited, full, curve }, attempt));
            }
            Ok(_) => last_err = Some(Error::Numerical("non-finite far field".into())),
            Err(e @ (Error::NearSingular(_) | Error::Numerical(_))) => last_err = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last_err.unwrap_or_else(|| Error::Numerical("sample generation failed".into())))
}

/// Draw `n_samples` curves, solve the forward problem, extract the aperture
/// and add noise. Deterministic under the master seed; parallel over samples.
pub fn generate_dataset(config: &RunConfig) -> Result<Dataset> {
    config.validate()?;
    let results: Vec<Result<(Sample, usize)>> =
        (0..config.n_samples).into_par_iter().map(|i| generate_sample(config, i)).collect();
    let mut samples = Vec::with_capacity(config.n_samples);
    let mut retries = 0;
    for r in results {
        let (s, n) = r?;
        samples.push(s);
        retries += n;
    }
    if retries > 0 {
        warn!("{retries} curve draws rejected by the solver and redrawn");
    }
    info!("generated {} samples", samples.len());
    Ok(Dataset { config: config.clone(), samples, retries })
}

/// `sqrt(sum |Q_pred - Q_true|^2) / sqrt(sum |Q_true|^2)` over a batch.
pub fn err_batch(pred: &[Vec<f64>], truth: &[Vec<f64>]) -> Result<f64> {
    if pred.len() != truth.len() || pred.iter().zip(truth).any(|(a, b)| a.len() != b.len()) {
        return Err(Error::DimensionMismatch("predicted and true coefficient lists differ in shape".into()));
    }
    let (num, den) = err_sums(pred, truth);
    if den == 0.0 {
        return Err(Error::Metric("all true coefficients vanish".into()));
    }
    Ok((num / den).sqrt())
}

fn err_sums(pred: &[Vec<f64>], truth: &[Vec<f64>]) -> (f64, f64) {
    let mut num = 0.0;
    let mut den = 0.0;
    for (p, t) in pred.iter().zip(truth) {
        num += p.iter().zip(t).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        den += t.iter().map(|b| b * b).sum::<f64>();
    }
    (num, den)
}

fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    t.data().chunks(t.row_len()).map(<[f64]>::to_vec).collect()
}

/// Per-epoch training record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub l_ddm: f64,
    pub l_phy: f64,
    pub l_dc: f64,
    pub err: f64,
}

pub const HISTORY_HEADER: &str = "epoch,l_ddm,l_phy,l_dc,err";

impl EpochRecord {
    pub fn csv_row(&self) -> String {
        format!("{},{:e},{:e},{:e},{:e}", self.epoch, self.l_ddm, self.l_phy, self.l_dc, self.err)
    }
}

/// Trained networks with optimizer state and history.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    /// Networks at the end of the epoch with the lowest `L_DDM`.
    pub best: DdmModel,
    pub best_epoch: usize,
    pub last: DdmModel,
    pub adam: Adam,
    pub history: Vec<EpochRecord>,
}

/// Batches of at most `size` indices; a trailing singleton is merged into
/// the previous batch because training-mode normalization needs two samples.
pub fn batch_indices(order: &[usize], size: usize) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = order.chunks(size).map(<[usize]>::to_vec).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() == 1) {
        let tail = out.pop().expect("nonempty");
        out.last_mut().expect("nonempty").extend(tail);
    }
    out
}

fn check_compatible(config: &RunConfig, data: &Dataset) -> Result<()> {
    let d = &data.config;
    if (d.m, d.n_lambda, d.aperture) != (config.m, config.n_lambda, config.aperture) || d.k != config.k {
        return Err(Error::Config("dataset was generated with a different k, m, n_lambda or aperture".into()));
    }
    Ok(())
}

/// Outcome of one optimizer step.
struct StepLosses {
    l_ddm: f64,
    l_phy: f64,
    l_dc: f64,
    q_pred: Vec<Vec<f64>>,
}

fn train_step(model: &mut DdmModel, adam: &mut Adam, config: &RunConfig, batch: &[&Sample]) -> Result<StepLosses> {
    let setup = config.physics();
    let limited: Vec<&LimitedAperture> = batch.iter().map(|s| &s.limited).collect();
    let input = model.input(&limited)?;
    let exact = match model.dcnet {
        Some(_) => Some(planar_tensor(&batch.iter().map(|s| &s.full.matrix).collect::<Vec<_>>())?),
        None => None,
    };
    let mut tape = Tape::new();
    let out = model.forward(&mut tape, &input, Mode::Train, true)?;
    let loss = setup.j_ddm(&mut tape, out.f_pred, exact.as_ref(), out.g, out.q)?;
    let l_ddm = tape.value(loss.total).data()[0];
    if !l_ddm.is_finite() {
        return Err(Error::Numerical(format!("training loss became {l_ddm}")));
    }
    let grads = tape.backward(loss.total)?;
    let params = model.params();
    let grads: Vec<Tensor> = out.params.iter().zip(&params).map(|(v, p)| grads.get_or_zeros(*v, p.shape())).collect();
    if grads.iter().any(|g| g.data().iter().any(|v| !v.is_finite())) {
        return Err(Error::Numerical("non-finite gradient".into()));
    }
    let q_pred = rows(tape.value(out.q));
    let l_phy = tape.value(loss.phy).data()[0];
    let l_dc = loss.dc.map_or(0.0, |v| tape.value(v).data()[0]);
    adam.step(&mut model.params_mut(), &grads)?;
    model.update_running(&out.stats);
    Ok(StepLosses { l_ddm, l_phy, l_dc, q_pred })
}

/// Train from freshly initialized networks.
pub fn train_ddm(data: &Dataset, config: &RunConfig) -> Result<Checkpoint> {
    config.validate()?;
    check_compatible(config, data)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(SHUFFLE_STREAM);
    let model = DdmModel::init(config.m, config.n_lambda, config.uses_dcnet(), &mut rng)?;
    train_from(model, data, config, &mut rng, |_| {})
}

/// Train `model` for `config.epochs` epochs, reporting each epoch to
/// `on_epoch`.
pub fn train_from(
    mut model: DdmModel,
    data: &Dataset,
    config: &RunConfig,
    rng: &mut ChaCha8Rng,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<Checkpoint> {
    let train = data.train();
    if train.len() < 2 || config.batch_size * 4 > train.len() {
        return Err(Error::Config(format!(
            "batch size {} must not exceed a quarter of the {} training samples",
            config.batch_size,
            train.len()
        )));
    }
    let mut adam = Adam::new(model.params(), config.adam());
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    let mut best = (f64::INFINITY, model.clone(), 0);
    let mut initial = None;
    for epoch in 1..=config.epochs {
        if config.shuffle {
            order.shuffle(rng);
        }
        let (mut l_ddm, mut l_phy, mut l_dc) = (0.0, 0.0, 0.0);
        let (mut num, mut den) = (0.0, 0.0);
        for idx in batch_indices(&order, config.batch_size) {
            let batch: Vec<&Sample> = idx.iter().map(|&i| &train[i]).collect();
            let step = train_step(&mut model, &mut adam, config, &batch)?;
            let w = batch.len() as f64;
            l_ddm += w * step.l_ddm;
            l_phy += w * step.l_phy;
            l_dc += w * step.l_dc;
            let truth: Vec<Vec<f64>> = batch.iter().map(|s| s.curve.to_vec()).collect();
            let (a, b) = err_sums(&step.q_pred, &truth);
            num += a;
            den += b;
            let first = *initial.get_or_insert(step.l_ddm);
            if step.l_ddm > 10.0 * first {
                warn!("epoch {epoch}: loss {:.3e} exceeds ten times its initial value {first:.3e}", step.l_ddm);
            }
        }
        let n = train.len() as f64;
        let record = EpochRecord { epoch, l_ddm: l_ddm / n, l_phy: l_phy / n, l_dc: l_dc / n, err: (num / den).sqrt() };
        info!(
            "epoch {epoch}: L_DDM {:.4e} L_phy {:.4e} L_DC {:.4e} Err {:.4}",
            record.l_ddm, record.l_phy, record.l_dc, record.err
        );
        if record.l_ddm < best.0 {
            best = (record.l_ddm, model.clone(), epoch);
        }
        on_epoch(&record);
        history.push(record);
    }
    Ok(Checkpoint { config: config.clone(), best: best.1, best_epoch: best.2, last: model, adam, history })
}

/// Eval-mode coefficient predictions for many samples, in chunks.
pub fn predict_coefficients(model: &DdmModel, samples: &[Sample]) -> Result<Vec<Vec<f64>>> {
    let chunks: Vec<&[Sample]> = samples.chunks(64).collect();
    let parts: Vec<Result<Vec<Vec<f64>>>> = chunks
        .par_iter()
        .map(|chunk| {
            let limited: Vec<&LimitedAperture> = chunk.iter().map(|s| &s.limited).collect();
            let input = model.input(&limited)?;
            let mut tape = Tape::new();
            let out = model.forward(&mut tape, &input, Mode::Eval, false)?;
            Ok(rows(tape.value(out.q)))
        })
        .collect();
    let mut all = Vec::with_capacity(samples.len());
    for p in parts {
        all.extend(p?);
    }
    Ok(all)
}

/// Test error of a model in evaluation mode.
pub fn terr(model: &DdmModel, test: &[Sample]) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::Metric("test split is empty".into()));
    }
    let pred = predict_coefficients(model, test)?;
    let truth: Vec<Vec<f64>> = test.iter().map(|s| s.curve.to_vec()).collect();
    err_batch(&pred, &truth)
}

/// Result of one reconstruction.
#[derive(Debug, Clone, PartialEq)]
pub struct Inversion {
    pub curve: FourierCurve,
    pub kernel: Vec<Complex64>,
    pub completed: CMatrix,
    pub seconds: f64,
}

/// Single eval-mode forward pass on one observed block.
pub fn invert(model: &DdmModel, config: &RunConfig, data: &LimitedAperture) -> Result<Inversion> {
    let start = Instant::now();
    if data.bounds != config.bounds()? {
        return Err(Error::Aperture(format!(
            "input aperture {:?} differs from the training aperture {}..{} x {}..{}",
            data.bounds,
            config.bounds()?.obs_lo,
            config.bounds()?.obs_hi,
            config.bounds()?.inc_lo,
            config.bounds()?.inc_hi
        )));
    }
    let input = model.input(&[data])?;
    let mut tape = Tape::new();
    let out = model.forward(&mut tape, &input, Mode::Eval, false)?;
    let curve = FourierCurve::from_slice(tape.value(out.q).data(), config.s)?;
    let kernel = interleaved_to_complex(tape.value(out.g), 0);
    let completed = planar_to_cmatrix(tape.value(out.f_pred), 0);
    Ok(Inversion { curve, kernel, completed, seconds: start.elapsed().as_secs_f64() })
}

/// Comparison of autodiff and central differences for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorCheck {
    pub network: String,
    pub index: usize,
    pub len: usize,
    /// `(autodiff, central difference)` directional derivatives.
    pub probes: Vec<(f64, f64)>,
}

/// Gradient check of `L_DDM` over every parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub loss: f64,
    /// Round-off resolution of the central differences.
    pub atol: f64,
    pub tensors: Vec<TensorCheck>,
}

impl TensorCheck {
    /// Every probe satisfies `|a - n| <= rtol max(|a|, |n|) + atol`.
    pub fn passes(&self, rtol: f64, atol: f64) -> bool {
        self.probes.iter().all(|&(a, n)| (a - n).abs() <= rtol * a.abs().max(n.abs()) + atol)
    }

    /// Worst relative error among probes well above the resolution `atol`.
    pub fn rel_err(&self, atol: f64) -> f64 {
        self.probes
            .iter()
            .filter(|(a, n)| a.abs().max(n.abs()) > 1e3 * atol)
            .map(|&(a, n)| (a - n).abs() / a.abs().max(n.abs()))
            .fold(0.0, f64::max)
    }
}

impl GradCheckReport {
    pub fn passes(&self, rtol: f64) -> bool {
        self.tensors.iter().all(|t| t.passes(rtol, self.atol))
    }

    pub fn max_rel_err(&self) -> f64 {
        self.tensors.iter().map(|t| t.rel_err(self.atol)).fold(0.0, f64::max)
    }
}

fn ddm_loss(model: &DdmModel, input: &Tensor, exact: &Tensor, config: &RunConfig) -> Result<(f64, Vec<Tensor>)> {
    let mut tape = Tape::new();
    let out = model.forward(&mut tape, input, Mode::Train, true)?;
    let loss = config.physics().j_ddm(&mut tape, out.f_pred, Some(exact), out.g, out.q)?;
    let grads = tape.backward(loss.total)?;
    let params = model.params();
    let g = out.params.iter().zip(&params).map(|(v, p)| grads.get_or_zeros(*v, p.shape())).collect();
    Ok((tape.value(loss.total).data()[0], g))
}

/// Central-difference check of the full DDM graph on a two-sample batch of
/// random data with the configured aperture. Each tensor is probed along
/// its unit gradient direction, along a random sign direction, and at
/// `entries` random single entries.
pub fn gradient_check(config: &RunConfig, seed: u64, entries: usize) -> Result<GradCheckReport> {
    const STEP: f64 = 1e-6;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = DdmModel::init(config.m, config.n_lambda, true, &mut rng)?;
    let side = 2 * config.m;
    let full: Vec<Msrm> = (0..2)
        .map(|_| {
            let mat = CMatrix::from_fn(side, side, |_, _| {
                Complex64::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3))
            });
            Msrm::new(config.m, mat)
        })
        .collect::<Result<_>>()?;
    let limited: Vec<LimitedAperture> = full.iter().map(|f| extract_limited(f, &config.aperture)).collect::<Result<_>>()?;
    let input = model.input(&limited.iter().collect::<Vec<_>>())?;
    let exact = planar_tensor(&full.iter().map(|f| &f.matrix).collect::<Vec<_>>())?;
    let (loss, grads) = ddm_loss(&model, &input, &exact, config)?;
    // a few dozen ulps of the loss per difference quotient
    let atol = 64.0 * f64::EPSILON * loss.abs() / STEP;

    let names: Vec<String> = model
        .networks()
        .iter()
        .flat_map(|n| std::iter::repeat_n(n.spec.name.clone(), n.params.len()))
        .collect();
    let mut tensors = Vec::new();
    for (index, grad) in grads.iter().enumerate() {
        let len = grad.len();
        let mut directions: Vec<Vec<f64>> = Vec::new();
        let gnorm = grad.norm();
        if gnorm > 0.0 {
            directions.push(grad.data().iter().map(|v| v / gnorm).collect());
        }
        let scale = 1.0 / (len as f64).sqrt();
        directions.push((0..len).map(|_| if rng.random::<bool>() { scale } else { -scale }).collect());
        for _ in 0..entries.min(len) {
            let mut e = vec![0.0; len];
            e[rng.random_range(0..len)] = 1.0;
            directions.push(e);
        }
        let mut probes = Vec::with_capacity(directions.len());
        for dir in directions {
            let analytic: f64 = grad.data().iter().zip(&dir).map(|(g, d)| g * d).sum();
            let eval = |sign: f64| -> Result<f64> {
                let mut probe = model.clone();
                let p = &mut probe.params_mut()[index];
                for (v, d) in p.data_mut().iter_mut().zip(&dir) {
                    *v += sign * STEP * d;
                }
                let mut tape = Tape::new();
                let out = probe.forward(&mut tape, &input, Mode::Train, false)?;
                let l = config.physics().j_ddm(&mut tape, out.f_pred, Some(&exact), out.g, out.q)?;
                Ok(tape.value(l.total).data()[0])
            };
            let numeric = (eval(1.0)? - eval(-1.0)?) / (2.0 * STEP);
            probes.push((analytic, numeric));
        }
        tensors.push(TensorCheck { network: names[index].clone(), index, len, probes });
    }
    Ok(GradCheckReport { loss, atol, tensors })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::Aperture;

    #[test]
    fn err_examples() {
        let t = vec![vec![1.0, 2.0, -0.5]];
        assert_eq!(err_batch(&t, &t).unwrap(), 0.0);
        let doubled = vec![vec![2.0, 4.0, -1.0]];
        assert!((err_batch(&doubled, &t).unwrap() - 1.0).abs() < 1e-15);
        let e = err_batch(&[vec![1.0, 0.0]], &[vec![0.0, 1.0]]).unwrap();
        assert!((e - 2f64.sqrt()).abs() < 1e-15);
        assert!(matches!(err_batch(&[vec![1.0]], &[vec![0.0]]), Err(Error::Metric(_))));
        assert!(err_batch(&[vec![1.0]], &[vec![0.0, 1.0]]).is_err());
    }

    #[test]
    fn err_is_scale_covariant() {
        let p = vec![vec![0.3, -1.0], vec![2.0, 0.1]];
        let t = vec![vec![0.5, -0.7], vec![1.5, 0.0]];
        let base = err_batch(&p, &t).unwrap();
        for c in [-3.0, 0.01, 7.5] {
            let sp: Vec<Vec<f64>> = p.iter().map(|r| r.iter().map(|v| c * v).collect()).collect();
            let st: Vec<Vec<f64>> = t.iter().map(|r| r.iter().map(|v| c * v).collect()).collect();
            assert!((err_batch(&sp, &st).unwrap() - base).abs() < 1e-14);
        }
    }

    #[test]
    fn batches_never_end_with_a_singleton() {
        let order: Vec<usize> = (0..9).collect();
        let b = batch_indices(&order, 4);
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 5]);
        let b = batch_indices(&order, 3);
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![3, 3, 3]);
        assert_eq!(batch_indices(&order, 4).concat(), order);
    }

    fn small_config() -> RunConfig {
        RunConfig { m: 4, n_lambda: 2, n_t: 16, n_samples: 20, batch_size: 4, epochs: 3, seed: 5, ..Default::default() }
    }

    #[test]
    fn dataset_split_and_noise_free_blocks() {
        let cfg = small_config();
        let data = generate_dataset(&cfg).unwrap();
        assert_eq!(data.samples.len(), 20);
        assert_eq!((data.train().len(), data.test().len()), (16, 4));
        for s in &data.samples {
            assert_eq!(s.limited, extract_limited(&s.full, &cfg.aperture).unwrap());
        }
        assert_eq!(RunConfig { n_samples: 5000, ..cfg }.n_train(), 4000);
    }

    #[test]
    fn dataset_is_seeded_and_noisy_when_asked() {
        let cfg = RunConfig { sigma: 0.1, ..small_config() };
        let a = generate_dataset(&cfg).unwrap();
        let b = generate_dataset(&cfg).unwrap();
        assert_eq!(a, b);
        let s = &a.samples[0];
        let exact = extract_limited(&s.full, &cfg.aperture).unwrap();
        assert_ne!(s.limited, exact);
        for (n, e) in s.limited.matrix.data.iter().zip(&exact.matrix.data) {
            assert!((n - e).norm() <= 0.1 * e.norm() + 1e-15);
        }
    }

    #[test]
    fn training_runs_and_is_reproducible() {
        let cfg = small_config();
        let data = generate_dataset(&cfg).unwrap();
        let a = train_ddm(&data, &cfg).unwrap();
        let b = train_ddm(&data, &cfg).unwrap();
        assert_eq!(a.history.len(), 3);
        assert_eq!(a, b);
        assert!(a.history.iter().all(|r| r.l_ddm.is_finite() && r.err > 0.0));
        let best = a.history.iter().map(|r| r.l_ddm).fold(f64::INFINITY, f64::min);
        assert_eq!(a.history[a.best_epoch - 1].l_ddm, best);
        let t = terr(&a.best, data.test()).unwrap();
        assert!(t.is_finite() && t > 0.0);
        assert!(terr(&a.best, &[]).is_err());
    }

    #[test]
    fn full_aperture_trains_without_completion() {
        let cfg = RunConfig { aperture: Aperture::full(), ..small_config() };
        let data = generate_dataset(&cfg).unwrap();
        let ck = train_ddm(&data, &cfg).unwrap();
        assert!(ck.last.dcnet.is_none());
        for r in &ck.history {
            assert_eq!(r.l_dc, 0.0);
            assert_eq!(r.l_ddm, r.l_phy);
        }
    }

    #[test]
    fn oversized_batches_rejected() {
        let cfg = small_config();
        let data = generate_dataset(&cfg).unwrap();
        let big = RunConfig { batch_size: 5, ..cfg };
        assert!(matches!(train_ddm(&data, &big), Err(Error::Config(_))));
        let other = RunConfig { m: 8, ..small_config() };
        assert!(matches!(train_ddm(&data, &other), Err(Error::Config(_))));
    }

    #[test]
    fn inversion_is_deterministic_and_checks_aperture() {
        let cfg = small_config();
        let data = generate_dataset(&cfg).unwrap();
        let ck = train_ddm(&data, &RunConfig { epochs: 1, ..cfg.clone() }).unwrap();
        let s = &data.test()[0];
        let a = invert(&ck.best, &cfg, &s.limited).unwrap();
        let b = invert(&ck.best, &cfg, &s.limited).unwrap();
        assert_eq!((&a.curve, &a.kernel, &a.completed), (&b.curve, &b.kernel, &b.completed));
        assert_eq!(a.kernel.len(), 8);
        assert!(a.curve.radius(0.3) > 0.0);
        let full = extract_limited(&s.full, &Aperture::full()).unwrap();
        assert!(matches!(invert(&ck.best, &cfg, &full), Err(Error::Aperture(_))));
    }

    #[test]
    fn full_graph_gradient_check() {
        let cfg = RunConfig { m: 4, n_lambda: 2, n_t: 16, ..Default::default() };
        let report = gradient_check(&cfg, 1, 4).unwrap();
        assert!(report.loss.is_finite());
        for t in &report.tensors {
            assert!(t.passes(1e-4, report.atol), "{t:?}");
        }
        assert!(report.max_rel_err() < 1e-4);
    }
}
