//! Layer-list networks: specification, initialization and forward pass.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::layers::{BatchStats, Mode, BN_MOMENTUM};
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Standard deviation of initial weights.
pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Layer {
    Conv3x3 { in_channels: usize, out_channels: usize },
    BatchNorm { channels: usize },
    Relu,
    Flatten,
    Linear { inputs: usize, outputs: usize },
}

impl Layer {
    /// Shapes of the trainable tensors of this layer (weight first).
    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        match *self {
            Layer::Conv3x3 { in_channels, out_channels } => {
                vec![vec![out_channels, in_channels, 3, 3], vec![out_channels]]
            }
            Layer::BatchNorm { channels } => vec![vec![channels], vec![channels]],
            Layer::Linear { inputs, outputs } => vec![vec![inputs, outputs], vec![outputs]],
            Layer::Relu | Layer::Flatten => Vec::new(),
        }
    }
}

/// Input image shape and layer list of one network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub name: String,
    /// `(channels, height, width)` of one input sample.
    pub input: [usize; 3],
    pub layers: Vec<Layer>,
}

fn conv_block(in_channels: usize, hidden: usize) -> Vec<Layer> {
    vec![
        Layer::Conv3x3 { in_channels, out_channels: hidden },
        Layer::BatchNorm { channels: hidden },
        Layer::Relu,
        Layer::Conv3x3 { in_channels: hidden, out_channels: 1 },
        Layer::BatchNorm { channels: 1 },
        Layer::Relu,
        Layer::Flatten,
    ]
}

impl NetworkSpec {
    /// Data completion network: 3-channel embedded input (re, im, mask) to
    /// the full `2m x 2m` complex matrix as `2 (2m)^2` reals.
    pub fn dcnet(m: usize) -> Self {
        let side = 2 * m;
        let mut layers = conv_block(3, 16);
        layers.push(Layer::Linear { inputs: side * side, outputs: 2 * side * side });
        Self { name: "dcnet".into(), input: [3, side, side], layers }
    }

    /// Herglotz kernel network: completed matrix to `4m` reals.
    pub fn hknet(m: usize) -> Self {
        let side = 2 * m;
        let mut layers = conv_block(2, 4);
        layers.push(Layer::Linear { inputs: side * side, outputs: 512 });
        layers.push(Layer::Linear { inputs: 512, outputs: 4 * m });
        Self { name: "hknet".into(), input: [2, side, side], layers }
    }

    /// Boundary reconstruction network: completed matrix to `2 N + 1`
    /// Fourier coefficients.
    pub fn brnet(m: usize, n_lambda: usize) -> Self {
        let side = 2 * m;
        let mut layers = conv_block(2, 4);
        layers.push(Layer::Linear { inputs: side * side, outputs: 512 });
        layers.push(Layer::Linear { inputs: 512, outputs: 128 });
        layers.push(Layer::Linear { inputs: 128, outputs: 2 * n_lambda + 1 });
        Self { name: "brnet".into(), input: [2, side, side], layers }
    }

    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        self.layers.iter().flat_map(|l| l.param_shapes()).collect()
    }

    pub fn param_count(&self) -> usize {
        self.param_shapes().iter().map(|s| s.iter().product::<usize>()).sum()
    }

    /// Check that consecutive layers agree on their shapes.
    pub fn validate(&self) -> Result<()> {
        let [mut c, h, w] = self.input;
        let mut flat: Option<usize> = None;
        for layer in &self.layers {
            match (*layer, flat) {
                (Layer::Conv3x3 { in_channels, out_channels }, None) if in_channels == c => c = out_channels,
                (Layer::BatchNorm { channels }, None) if channels == c => {}
                (Layer::BatchNorm { channels }, Some(n)) if channels == n => {}
                (Layer::Relu, _) => {}
                (Layer::Flatten, None) => flat = Some(c * h * w),
                (Layer::Linear { inputs, outputs }, Some(n)) if inputs == n => flat = Some(outputs),
                (layer, _) => {
                    return Err(Error::Config(format!("{}: layer {layer:?} does not fit its input", self.name)))
                }
            }
        }
        Ok(())
    }

    pub fn output_len(&self) -> usize {
        match self.layers.iter().rev().find_map(|l| match l {
            Layer::Linear { outputs, .. } => Some(*outputs),
            _ => None,
        }) {
            Some(n) => n,
            None => self.input.iter().product(),
        }
    }
}

/// Running mean and (unbiased) variance of one batch-normalization layer.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        Self { mean: vec![0.0; channels], var: vec![1.0; channels] }
    }

    fn update(&mut self, batch: &BatchStats) {
        for (r, b) in self.mean.iter_mut().zip(&batch.mean) {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * b;
        }
        for (r, b) in self.var.iter_mut().zip(&batch.var) {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * b;
        }
    }
}

/// A network with its parameters and batch-normalization buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub spec: NetworkSpec,
    pub params: Vec<Tensor>,
    pub running: Vec<RunningStats>,
}

/// Result of [`Network::forward`].
pub struct NetOutput {
    pub output: Var,
    /// One handle per parameter tensor, in [`Network::params`] order.
    pub params: Vec<Var>,
    /// Batch statistics of each normalization layer (training mode only).
    pub stats: Vec<BatchStats>,
}

impl Network {
    /// Weights `N(0, 0.02^2)`, biases zero, normalization scale 1 and shift 0.
    pub fn init<R: Rng + ?Sized>(spec: NetworkSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let mut params = Vec::new();
        let mut running = Vec::new();
        for layer in &spec.layers {
            match *layer {
                Layer::Conv3x3 { .. } | Layer::Linear { .. } => {
                    let shapes = layer.param_shapes();
                    let n: usize = shapes[0].iter().product();
                    let w = (0..n).map(|_| normal.sample(rng)).collect();
                    params.push(Tensor::new(&shapes[0], w)?);
                    params.push(Tensor::zeros(&shapes[1]));
                }
                Layer::BatchNorm { channels } => {
                    params.push(Tensor::full(&[channels], 1.0));
                    params.push(Tensor::zeros(&[channels]));
                    running.push(RunningStats::new(channels));
                }
                Layer::Relu | Layer::Flatten => {}
            }
        }
        Ok(Self { spec, params, running })
    }

    /// Rebuild from stored tensors, checking their shapes against the spec.
    pub fn from_parts(spec: NetworkSpec, params: Vec<Tensor>, running: Vec<RunningStats>) -> Result<Self> {
        spec.validate()?;
        let shapes = spec.param_shapes();
        if shapes.len() != params.len() || shapes.iter().zip(&params).any(|(s, p)| s.as_slice() != p.shape()) {
            return Err(Error::Format(format!("{}: stored parameters do not match the layer list", spec.name)));
        }
        let bn: Vec<usize> = spec
            .layers
            .iter()
            .filter_map(|l| match l {
                Layer::BatchNorm { channels } => Some(*channels),
                _ => None,
            })
            .collect();
        if bn.len() != running.len() || bn.iter().zip(&running).any(|(c, r)| r.mean.len() != *c || r.var.len() != *c) {
            return Err(Error::Format(format!("{}: stored normalization buffers do not match", spec.name)));
        }
        Ok(Self { spec, params, running })
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    /// Forward pass on `[b, c, h, w]` input. Parameters enter the tape as
    /// leaves when `trainable`, otherwise as constants.
    pub fn forward(&self, tape: &mut Tape, input: Var, mode: Mode, trainable: bool) -> Result<NetOutput> {
        let [c, h, w] = self.spec.input;
        if tape.value(input).shape()[1..] != [c, h, w] {
            return Err(Error::DimensionMismatch(format!(
                "{} expects [b, {c}, {h}, {w}], got {:?}",
                self.spec.name,
                tape.value(input).shape()
            )));
        }
        let vars: Vec<Var> = self
            .params
            .iter()
            .map(|p| if trainable { tape.leaf(p.clone()) } else { tape.constant(p.clone()) })
            .collect();
        let mut x = input;
        let mut next = vars.iter().copied();
        let mut bn_index = 0;
        let mut stats = Vec::new();
        for layer in &self.spec.layers {
            x = match layer {
                Layer::Conv3x3 { .. } => {
                    let (wv, bv) = (next.next().expect("weight"), next.next().expect("bias"));
                    tape.conv3x3(x, wv, bv)?
                }
                Layer::BatchNorm { .. } => {
                    let (gv, bv) = (next.next().expect("scale"), next.next().expect("shift"));
                    let r = &self.running[bn_index];
                    bn_index += 1;
                    let (y, s) = tape.batchnorm(x, gv, bv, (&r.mean, &r.var), mode)?;
                    stats.extend(s);
                    y
                }
                Layer::Relu => tape.relu(x),
                Layer::Flatten => tape.flatten(x)?,
                Layer::Linear { .. } => {
                    let (wv, bv) = (next.next().expect("weight"), next.next().expect("bias"));
                    tape.linear(x, wv, bv)?
                }
            };
        }
        Ok(NetOutput { output: x, params: vars, stats })
    }

    /// Fold the statistics of one training-mode pass into the running buffers.
    pub fn update_running(&mut self, stats: &[BatchStats]) {
        for (r, s) in self.running.iter_mut().zip(stats) {
            r.update(s);
        }
    }
}
