use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::{AdamConfig, OptimizerKind};
use crate::sae::DEFAULT_AUX_ALPHA;

/// Full-scale dead window in tokens.
pub const FULL_SCALE_DEAD_WINDOW: u64 = 10_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuxConfig {
    pub alpha: f64,
    pub k_aux: usize,
}

impl AuxConfig {
    /// `α = 1/32` and `k_aux = min(512, h/8)`.
    pub fn for_width(h: usize) -> Self {
        Self {
            alpha: DEFAULT_AUX_ALPHA,
            k_aux: (h / 8).clamp(1, 512),
        }
    }
}

/// Everything that determines a training run apart from the data and the
/// initialization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Number of features.
    pub h: usize,
    pub k: usize,
    pub batch_size: usize,
    /// `None` selects the optimizer's default rate.
    pub lr: Option<f64>,
    pub optimizer: OptimizerKind,
    pub aux: Option<AuxConfig>,
    pub total_tokens: u64,
    /// `None` selects `min(10M, total_tokens / 4)`.
    pub dead_window: Option<u64>,
    /// Tokens between evaluations; `None` selects 2% of `total_tokens`.
    pub eval_every: Option<u64>,
    /// Held-out rows drawn before training, used for initialization scale
    /// and for every evaluation.
    pub eval_rows: usize,
    pub weight_decay: f64,
    pub max_grad_norm: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            h: 1024,
            k: 8,
            batch_size: 256,
            lr: None,
            optimizer: OptimizerKind::SparseAdam,
            aux: None,
            total_tokens: 2_000_000,
            dead_window: None,
            eval_every: None,
            eval_rows: 4096,
            weight_decay: 0.0,
            max_grad_norm: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn lr(&self) -> f64 {
        self.lr.unwrap_or_else(|| self.optimizer.default_lr())
    }

    pub fn dead_window(&self) -> u64 {
        self.dead_window
            .unwrap_or_else(|| FULL_SCALE_DEAD_WINDOW.min(self.total_tokens / 4).max(1))
    }

    pub fn eval_every(&self) -> u64 {
        self.eval_every
            .unwrap_or_else(|| (self.total_tokens / 50).max(1))
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr(),
            weight_decay: self.weight_decay,
            max_grad_norm: self.max_grad_norm,
            ..AdamConfig::default()
        }
    }

    /// Copy with every defaulted field filled in.
    pub fn resolved(&self) -> Self {
        Self {
            lr: Some(self.lr()),
            dead_window: Some(self.dead_window()),
            eval_every: Some(self.eval_every()),
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::invalid(msg));
        if self.h == 0 || self.k == 0 || self.k > self.h {
            return fail(format!("need 1 <= k <= h, got k={} h={}", self.k, self.h));
        }
        if self.batch_size == 0 {
            return fail("batch size must be at least 1".into());
        }
        if self.total_tokens == 0 {
            return fail("total tokens must be positive".into());
        }
        if self.dead_window() == 0 || self.dead_window() > self.total_tokens {
            return fail(format!(
                "dead window {} must lie in 1..={} (total tokens)",
                self.dead_window(),
                self.total_tokens
            ));
        }
        if self.eval_every() == 0 {
            return fail("eval cadence must be positive".into());
        }
        if self.eval_rows < 2 {
            return fail("need at least 2 held-out rows".into());
        }
        if !(self.lr() > 0.0 && self.lr().is_finite()) {
            return fail(format!("learning rate must be positive, got {}", self.lr()));
        }
        if let Some(aux) = &self.aux {
            if aux.k_aux == 0 || !(aux.alpha >= 0.0 && aux.alpha.is_finite()) {
                return fail(format!("invalid AuxK settings {aux:?}"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_resolve() {
        let c = TrainConfig {
            total_tokens: 1_000_000,
            ..TrainConfig::default()
        };
        assert_eq!(c.dead_window(), 250_000);
        assert_eq!(c.eval_every(), 20_000);
        assert_eq!(c.lr(), 6e-5);
        let long = TrainConfig {
            total_tokens: 100_000_000,
            ..c.clone()
        };
        assert_eq!(long.dead_window(), 10_000_000);
        assert_eq!(AuxConfig::for_width(16384).k_aux, 512);
        assert_eq!(AuxConfig::for_width(64).k_aux, 8);
    }

    #[test]
    fn invalid_configs() {
        let base = TrainConfig::default();
        for bad in [
            TrainConfig { k: 0, ..base.clone() },
            TrainConfig { k: 2000, ..base.clone() },
            TrainConfig { batch_size: 0, ..base.clone() },
            TrainConfig { dead_window: Some(3_000_000), ..base.clone() },
            TrainConfig { lr: Some(-1.0), ..base.clone() },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
        base.validate().unwrap();
    }

    #[test]
    fn json_uses_defaults_for_missing_fields() {
        let c: TrainConfig = serde_json::from_str(r#"{"h": 64, "optimizer": "adam"}"#).unwrap();
        assert_eq!(c.h, 64);
        assert_eq!(c.optimizer, OptimizerKind::Adam);
        assert_eq!(c.k, TrainConfig::default().k);
    }
}
