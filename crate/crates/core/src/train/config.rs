use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::camera::Mode;
use crate::gnn::Hyper;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugConfig {
    pub enabled: bool,
    pub alpha_range_deg: [f64; 2],
    pub gamma_range_deg: [f64; 2],
}

impl Default for AugConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            alpha_range_deg: [-15.0, 15.0],
            gamma_range_deg: [-20.0, 20.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutlierConfig {
    pub enabled: bool,
    pub rate: f64,
}

impl Default for OutlierConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            rate: 0.10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub model: Hyper,
    pub base_lr: f64,
    pub warmup_iters: u64,
    /// The learning rate drops by this factor every `decay_iters`
    /// iterations after warmup.
    pub decay_factor: f64,
    pub decay_iters: u64,
    /// Keep the learning rate at `base_lr` throughout (fine-tuning).
    pub constant_lr: bool,
    pub epochs: u64,
    pub validate_every: u64,
    /// Inclusive range of sub-scene lengths, in views.
    pub subseq_range: [usize; 2],
    pub aug: AugConfig,
    pub outliers: OutlierConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: Hyper::full(Mode::Euclidean),
            base_lr: 1e-4,
            warmup_iters: 2500,
            decay_factor: 10.0,
            decay_iters: 250_000,
            constant_lr: false,
            epochs: 40_000,
            validate_every: 250,
            subseq_range: [10, 20],
            aug: AugConfig::default(),
            outliers: OutlierConfig::default(),
            seed: 0,
        }
    }
}

fn ordered(r: [f64; 2]) -> bool {
    r[0].is_finite() && r[1].is_finite() && r[0] <= r[1]
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |msg: &str| Err(TrainError::Config(msg.to_string()));
        self.model.validate()?;
        if !(self.base_lr >= 0.0 && self.base_lr.is_finite()) {
            return bad("base_lr must be finite and non-negative");
        }
        if !(self.decay_factor > 0.0) || self.decay_iters == 0 {
            return bad("decay_factor and decay_iters must be positive");
        }
        if self.validate_every == 0 {
            return bad("validate_every must be positive");
        }
        let [lo, hi] = self.subseq_range;
        if lo < 2 || lo > hi {
            return bad("subseq_range must be ordered with a minimum of 2 views");
        }
        if !ordered(self.aug.alpha_range_deg) || !ordered(self.aug.gamma_range_deg) {
            return bad("augmentation angle ranges must be ordered");
        }
        if self.aug.enabled && self.model.mode != Mode::Euclidean {
            return bad("augmentation requires the euclidean mode");
        }
        if !(self.outliers.rate >= 0.0 && self.outliers.rate < 1.0) {
            return bad("outlier rate must lie in [0, 1)");
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, TrainError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| TrainError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
