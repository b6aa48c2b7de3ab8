//! The three-network composition: data completion, Herglotz kernel and
//! boundary reconstruction.

use rand::Rng;

use super::layers::{BatchStats, Mode};
use super::network::{Network, NetworkSpec};
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::forward::LimitedAperture;
use crate::physics::planar_tensor;

/// Zero-embed limited blocks into `[b, 3, 2m, 2m]`: real part, imaginary
/// part and a mask marking observed entries.
pub fn embed_limited(samples: &[&LimitedAperture]) -> Result<Tensor> {
    let first = samples.first().ok_or_else(|| Error::DimensionMismatch("empty batch".into()))?;
    let side = 2 * first.m();
    let plane = side * side;
    let mut data = vec![0.0; samples.len() * 3 * plane];
    for (n, s) in samples.iter().enumerate() {
        if s.bounds != first.bounds {
            return Err(Error::Aperture("samples in a batch use different apertures".into()));
        }
        let b = s.bounds;
        let base = n * 3 * plane;
        for r in 0..b.rows() {
            for c in 0..b.cols() {
                let idx = (b.obs_lo + r) * side + b.inc_lo + c;
                let z = s.matrix.get(r, c);
                data[base + idx] = z.re;
                data[base + plane + idx] = z.im;
                data[base + 2 * plane + idx] = 1.0;
            }
        }
    }
    Tensor::new(&[samples.len(), 3, side, side], data)
}

/// Networks of one DDM instance. Without a data-completion network the
/// input must already be the full matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DdmModel {
    pub m: usize,
    pub n_lambda: usize,
    pub dcnet: Option<Network>,
    pub hknet: Network,
    pub brnet: Network,
}

/// Graph handles of one model pass.
pub struct DdmForward {
    /// Completed matrix `[b, 2, 2m, 2m]`.
    pub f_pred: Var,
    /// Herglotz kernel `[b, 2m, 2]`.
    pub g: Var,
    /// Curve coefficients `[b, 2N+1]`.
    pub q: Var,
    /// Parameter handles in [`DdmModel::params`] order.
    pub params: Vec<Var>,
    /// Batch statistics per network, in [`DdmModel::networks`] order.
    pub stats: Vec<Vec<BatchStats>>,
}

impl DdmModel {
    pub fn init<R: Rng + ?Sized>(m: usize, n_lambda: usize, with_dcnet: bool, rng: &mut R) -> Result<Self> {
        let dcnet = if with_dcnet { Some(Network::init(NetworkSpec::dcnet(m), rng)?) } else { None };
        let hknet = Network::init(NetworkSpec::hknet(m), rng)?;
        let brnet = Network::init(NetworkSpec::brnet(m, n_lambda), rng)?;
        Ok(Self { m, n_lambda, dcnet, hknet, brnet })
    }

    pub fn networks(&self) -> Vec<&Network> {
        self.dcnet.iter().chain([&self.hknet, &self.brnet]).collect()
    }

    fn networks_mut(&mut self) -> Vec<&mut Network> {
        self.dcnet.iter_mut().chain([&mut self.hknet, &mut self.brnet]).collect()
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.networks().into_iter().flat_map(|n| n.params.iter()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.networks_mut().into_iter().flat_map(|n| n.params.iter_mut()).collect()
    }

    pub fn param_count(&self) -> usize {
        self.networks().iter().map(|n| n.param_count()).sum()
    }

    /// Network input for a batch of observed blocks.
    pub fn input(&self, samples: &[&LimitedAperture]) -> Result<Tensor> {
        if samples.iter().any(|s| s.m() != self.m) {
            return Err(Error::DimensionMismatch(format!("model expects m = {}", self.m)));
        }
        if self.dcnet.is_some() {
            embed_limited(samples)
        } else {
            if samples.iter().any(|s| !s.bounds.is_full()) {
                return Err(Error::Aperture("a model without data completion needs full-aperture input".into()));
            }
            let mats: Vec<_> = samples.iter().map(|s| &s.matrix).collect();
            planar_tensor(&mats)
        }
    }

    /// Forward pass; see [`DdmModel::input`] for the input layout.
    pub fn forward(&self, tape: &mut Tape, input: &Tensor, mode: Mode, trainable: bool) -> Result<DdmForward> {
        let b = input.batch();
        let side = 2 * self.m;
        let mut params = Vec::new();
        let mut stats = Vec::new();
        let f_pred = match &self.dcnet {
            Some(dc) => {
                let x = tape.constant(input.clone());
                let out = dc.forward(tape, x, mode, trainable)?;
                params.extend(out.params);
                stats.push(out.stats);
                tape.reshape(out.output, &[b, 2, side, side])?
            }
            None => tape.constant(input.clone()),
        };
        let hk = self.hknet.forward(tape, f_pred, mode, trainable)?;
        params.extend(hk.params);
        stats.push(hk.stats);
        let g = tape.reshape(hk.output, &[b, side, 2])?;
        let br = self.brnet.forward(tape, f_pred, mode, trainable)?;
        params.extend(br.params);
        stats.push(br.stats);
        Ok(DdmForward { f_pred, g, q: br.output, params, stats })
    }

    pub fn update_running(&mut self, stats: &[Vec<BatchStats>]) {
        for (net, s) in self.networks_mut().into_iter().zip(stats) {
            net.update_running(s);
        }
    }
}

#[cfg(test)]
mod tests {
    use num_complex::Complex64;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::forward::{extract_limited, Aperture, CMatrix, Msrm};
    use crate::physics::{planar_to_cmatrix, LossWeights, PhysicsSetup};

    fn random_msrm(m: usize, rng: &mut ChaCha8Rng) -> Msrm {
        let mat = CMatrix::from_fn(2 * m, 2 * m, |_, _| {
            Complex64::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3))
        });
        Msrm::new(m, mat).unwrap()
    }

    #[test]
    fn embedding_places_block_and_mask() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = 4;
        let msrm = random_msrm(m, &mut rng);
        let lim = extract_limited(&msrm, &Aperture::default()).unwrap();
        let t = embed_limited(&[&lim]).unwrap();
        assert_eq!(t.shape(), &[1, 3, 8, 8]);
        let d = t.data();
        // rows 0..2 observed, all columns
        assert_eq!(d[3], msrm.matrix.get(0, 3).re);
        assert_eq!(d[64 + 8 + 5], msrm.matrix.get(1, 5).im);
        assert_eq!(d[128 + 8 + 5], 1.0);
        assert_eq!(d[2 * 8 + 1], 0.0);
        assert_eq!(d[128 + 2 * 8 + 1], 0.0);
        assert_eq!(d[128..].iter().sum::<f64>(), 16.0);
    }

    fn dcnet_count(side: usize) -> usize {
        (3 * 16 * 9 + 16) + 32 + (16 * 9 + 1) + 2 + side * side * 2 * side * side + 2 * side * side
    }

    fn hknet_count(m: usize) -> usize {
        let side = 2 * m;
        (2 * 4 * 9 + 4) + 8 + (4 * 9 + 1) + 2 + (side * side * 512 + 512) + (512 * 4 * m + 4 * m)
    }

    fn brnet_count(m: usize, n: usize) -> usize {
        let side = 2 * m;
        (2 * 4 * 9 + 4) + 8 + (4 * 9 + 1) + 2 + (side * side * 512 + 512) + (512 * 128 + 128) + (128 * (2 * n + 1) + 2 * n + 1)
    }

    #[test]
    fn parameter_counts_follow_formula() {
        for (m, n) in [(4, 2), (16, 8), (8, 5)] {
            let model = DdmModel::init(m, n, true, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
            assert_eq!(model.dcnet.as_ref().unwrap().param_count(), dcnet_count(2 * m));
            assert_eq!(model.hknet.param_count(), hknet_count(m));
            assert_eq!(model.brnet.param_count(), brnet_count(m, n));
        }
        assert_eq!(dcnet_count(32), 2_099_827);
        assert_eq!(hknet_count(16), 557_755);
        assert_eq!(brnet_count(16, 8), 592_780);
    }

    #[test]
    fn output_shapes_and_batch_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = 4;
        let model = DdmModel::init(m, 2, true, &mut rng).unwrap();
        let lims: Vec<LimitedAperture> =
            (0..3).map(|_| extract_limited(&random_msrm(m, &mut rng), &Aperture::default()).unwrap()).collect();
        let refs: Vec<&LimitedAperture> = lims.iter().collect();
        let mut tape = Tape::new();
        let input = model.input(&refs).unwrap();
        let out = model.forward(&mut tape, &input, Mode::Eval, false).unwrap();
        assert_eq!(tape.value(out.f_pred).shape(), &[3, 2, 8, 8]);
        assert_eq!(tape.value(out.g).shape(), &[3, 8, 2]);
        assert_eq!(tape.value(out.q).shape(), &[3, 5]);
        // eval mode treats samples independently
        for (n, lim) in lims.iter().enumerate() {
            let mut single = Tape::new();
            let one = model.forward(&mut single, &model.input(&[lim]).unwrap(), Mode::Eval, false).unwrap();
            let a = &tape.value(out.q).data()[n * 5..(n + 1) * 5];
            assert_eq!(a, single.value(one.q).data());
            assert_eq!(planar_to_cmatrix(tape.value(out.f_pred), n), planar_to_cmatrix(single.value(one.f_pred), 0));
        }
    }

    #[test]
    fn loss_gradient_reaches_every_parameter() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = 4;
        let model = DdmModel::init(m, 2, true, &mut rng).unwrap();
        let full: Vec<Msrm> = (0..4).map(|_| random_msrm(m, &mut rng)).collect();
        let lims: Vec<LimitedAperture> = full.iter().map(|f| extract_limited(f, &Aperture::default()).unwrap()).collect();
        let refs: Vec<&LimitedAperture> = lims.iter().collect();
        let exact = planar_tensor(&full.iter().map(|f| &f.matrix).collect::<Vec<_>>()).unwrap();
        let setup = PhysicsSetup::new(3.0, m, 16, 1.0, LossWeights::default());
        let mut tape = Tape::new();
        let out = model.forward(&mut tape, &model.input(&refs).unwrap(), Mode::Train, true).unwrap();
        let loss = setup.j_ddm(&mut tape, out.f_pred, Some(&exact), out.g, out.q).unwrap();
        let grads = tape.backward(loss.total).unwrap();
        let mut index = 0;
        for net in model.networks() {
            let mut slot = 0;
            for layer in &net.spec.layers {
                let shapes = layer.param_shapes();
                for (j, _) in shapes.iter().enumerate() {
                    let norm = grads.get(out.params[index]).map_or(0.0, |g| g.norm());
                    // a convolution bias followed by batch normalization is
                    // cancelled by the mean subtraction
                    let cancelled = matches!(layer, crate::nn::Layer::Conv3x3 { .. }) && j == 1;
                    if cancelled {
                        assert!(norm < 1e-12, "{} slot {slot}: {norm}", net.spec.name);
                    } else {
                        assert!(norm > 1e-12, "{} slot {slot} has no gradient", net.spec.name);
                    }
                    index += 1;
                    slot += 1;
                }
            }
        }
        assert_eq!(index, out.params.len());
    }

    #[test]
    fn bypass_requires_full_aperture() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = 4;
        let model = DdmModel::init(m, 2, false, &mut rng).unwrap();
        let msrm = random_msrm(m, &mut rng);
        let lim = extract_limited(&msrm, &Aperture::default()).unwrap();
        assert!(matches!(model.input(&[&lim]), Err(Error::Aperture(_))));
        let full = extract_limited(&msrm, &Aperture::full()).unwrap();
        let input = model.input(&[&full, &full]).unwrap();
        let mut tape = Tape::new();
        let out = model.forward(&mut tape, &input, Mode::Train, true).unwrap();
        assert_eq!(tape.value(out.f_pred), &input);
        assert_eq!(out.stats.len(), 2);
        assert_eq!(out.params.len(), model.params().len());
    }
}
