use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::optim::{LrSchedule, OptimizerKind};
use crate::data::CorpusConfig;
use crate::error::{Error, Result};
use crate::loss::{LossWeights, StyleLossKind};
use crate::pseudo::DEFAULT_DELTA;

/// Learning rates and optimizer hyperparameters per module.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimConfig {
    pub encoder_lr: f64,
    pub decoder_lr: f64,
    pub discriminator_lr: f64,
    pub momentum: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub poly_power: f64,
    /// Poly horizon; every phase (DA and each SSL round) restarts at step 0.
    pub poly_max_step: usize,
    pub exp_decay_rate: f64,
    pub exp_decay_steps: usize,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            encoder_lr: 2.5e-4,
            decoder_lr: 2.5e-3,
            discriminator_lr: 1e-4,
            momentum: 0.9,
            adam_beta1: 0.9,
            adam_beta2: 0.99,
            adam_eps: 1e-8,
            poly_power: 0.9,
            poly_max_step: 4_000,
            exp_decay_rate: 0.1,
            exp_decay_steps: 50_000,
        }
    }
}

impl OptimConfig {
    pub fn encoder_schedule(&self) -> LrSchedule {
        LrSchedule::Poly { base_lr: self.encoder_lr, max_step: self.poly_max_step, power: self.poly_power }
    }

    pub fn decoder_schedule(&self) -> LrSchedule {
        LrSchedule::Poly { base_lr: self.decoder_lr, max_step: self.poly_max_step, power: self.poly_power }
    }

    pub fn discriminator_schedule(&self) -> LrSchedule {
        LrSchedule::ExpDecay {
            base_lr: self.discriminator_lr,
            decay_rate: self.exp_decay_rate,
            decay_steps: self.exp_decay_steps,
        }
    }

    pub fn sgd(&self) -> OptimizerKind {
        OptimizerKind::MomentumSgd { momentum: self.momentum }
    }

    pub fn adam(&self) -> OptimizerKind {
        OptimizerKind::Adam { beta1: self.adam_beta1, beta2: self.adam_beta2, eps: self.adam_eps }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhaseConfig {
    pub da_steps: usize,
    pub ssl_steps: usize,
    pub ssl_rounds: usize,
    pub batch_size: usize,
    /// Images per forward pass when predicting over a whole split.
    pub eval_batch: usize,
    /// Write `checkpoints/step_<n>.bin` every this many steps (0: final only).
    pub checkpoint_every: usize,
}

impl Default for PhaseConfig {
    fn default() -> Self {
        PhaseConfig { da_steps: 3_000, ssl_steps: 1_000, ssl_rounds: 2, batch_size: 4, eval_batch: 10, checkpoint_every: 0 }
    }
}

/// Everything a run depends on besides the corpus files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Model initialization and batch sampling seed.
    pub seed: u64,
    pub delta: f64,
    pub style_loss: StyleLossKind,
    pub weights: LossWeights,
    pub optim: OptimConfig,
    pub phases: PhaseConfig,
    pub corpus: CorpusConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            delta: DEFAULT_DELTA,
            style_loss: StyleLossKind::AdversarialMean,
            weights: LossWeights::default(),
            optim: OptimConfig::default(),
            phases: PhaseConfig::default(),
            corpus: CorpusConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        self.corpus.validate()?;
        if !self.delta.is_finite() {
            return Err(Error::Config("delta must be finite".into()));
        }
        let p = &self.phases;
        if p.batch_size == 0 || p.eval_batch == 0 {
            return Err(Error::Config("batch sizes must be positive".into()));
        }
        if p.da_steps > self.optim.poly_max_step || p.ssl_steps > self.optim.poly_max_step {
            return Err(Error::Config(format!(
                "phase lengths ({} DA, {} SSL) exceed poly_max_step {}",
                p.da_steps, p.ssl_steps, self.optim.poly_max_step
            )));
        }
        for s in [self.optim.encoder_schedule(), self.optim.decoder_schedule(), self.optim.discriminator_schedule()] {
            s.validate()?;
        }
        let o = &self.optim;
        if !(0.0..1.0).contains(&o.momentum)
            || !(0.0..1.0).contains(&o.adam_beta1)
            || !(0.0..1.0).contains(&o.adam_beta2)
            || !(o.adam_eps > 0.0)
        {
            return Err(Error::Config("optimizer coefficients out of range".into()));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}
