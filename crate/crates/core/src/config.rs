//! Run configuration shared by data generation, training and the baselines.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{Aperture, ApertureBounds, SolverOptions};
use crate::geometry::CurveSampling;
use crate::nn::AdamConfig;
use crate::physics::{LossWeights, PhysicsSetup};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub dataset: PathBuf,
    pub checkpoint: PathBuf,
    pub output_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self { dataset: "dataset.ddm".into(), checkpoint: "model.ckpt".into(), output_dir: "output".into() }
    }
}

/// Every tunable of an experiment. Defaults are the desk-scale setup;
/// [`RunConfig::full_scale`] restores the full sample and epoch counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub k: f64,
    pub m: usize,
    pub n_t: usize,
    pub n_lambda: usize,
    pub s: f64,
    pub z: [f64; 2],
    pub weights: LossWeights,
    pub aperture: Aperture,
    pub sigma: f64,
    pub n_samples: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub shuffle: bool,
    pub seed: u64,
    pub solver: SolverOptions,
    pub paths: Paths,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            k: 3.0,
            m: 16,
            n_t: 64,
            n_lambda: 8,
            s: 1.0,
            z: [0.0, 0.0],
            weights: LossWeights::default(),
            aperture: Aperture::default(),
            sigma: 0.0,
            n_samples: 500,
            epochs: 200,
            batch_size: 64,
            learning_rate: 1e-4,
            shuffle: true,
            seed: 0,
            solver: SolverOptions::default(),
            paths: Paths::default(),
        }
    }
}

impl RunConfig {
    pub fn full_scale() -> Self {
        Self { n_samples: 5000, epochs: 1000, ..Self::default() }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.k > 0.0 && self.k.is_finite()) {
            return bad(format!("k must be positive, got {}", self.k));
        }
        if self.m < 2 {
            return bad(format!("m must be at least 2, got {}", self.m));
        }
        if self.n_t < 4 || self.n_lambda == 0 {
            return bad("n_t must be at least 4 and n_lambda positive".into());
        }
        if !(self.s > 0.0) {
            return bad(format!("s must be positive, got {}", self.s));
        }
        if !(0.0..1.0).contains(&self.sigma) {
            return bad(format!("sigma must lie in [0, 1), got {}", self.sigma));
        }
        if !(self.learning_rate > 0.0) || self.batch_size < 2 || self.epochs == 0 {
            return bad("learning_rate must be positive, batch_size >= 2 and epochs >= 1".into());
        }
        if self.solver.nodes < 8 || self.solver.nodes % 2 != 0 {
            return bad(format!("solver.nodes must be even and at least 8, got {}", self.solver.nodes));
        }
        self.weights.validate()?;
        self.bounds()?;
        Ok(())
    }

    pub fn bounds(&self) -> Result<ApertureBounds> {
        self.aperture.bounds(self.m)
    }

    /// The data-completion network is bypassed at full aperture.
    pub fn uses_dcnet(&self) -> bool {
        !self.aperture.is_full()
    }

    pub fn n_train(&self) -> usize {
        self.n_samples * 4 / 5
    }

    pub fn sampling(&self) -> CurveSampling {
        CurveSampling { n_lambda: self.n_lambda, s: self.s }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.learning_rate, ..AdamConfig::default() }
    }

    /// Loss discretization over all `2m` directions.
    pub fn physics(&self) -> PhysicsSetup {
        let mut setup = PhysicsSetup::new(self.k, self.m, self.n_t, self.s, self.weights);
        setup.z = self.z;
        setup
    }

    /// Loss discretization restricted to the aperture.
    pub fn physics_limited(&self) -> Result<PhysicsSetup> {
        Ok(self.physics().with_bounds(self.bounds()?))
    }
}
