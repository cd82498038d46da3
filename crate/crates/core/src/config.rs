//! Model and training hyper-parameters. Every struct deserialises with
//! per-field defaults so config files only need the keys they change.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::AdamConfig;

/// What the denoiser is trained to output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parameterization {
    /// The clean style `s_0`.
    Clean,
    /// The injected noise ε.
    Noise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiffusionConfig {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    /// Width of the denoiser's hidden layers.
    pub hidden: usize,
    pub parameterization: Parameterization,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        Self {
            steps: 50,
            beta_start: 1e-4,
            beta_end: 0.2,
            hidden: 128,
            parameterization: Parameterization::Clean,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_head: usize,
    pub decoder_layers: usize,
    pub kernel_size: usize,
    pub ptbe_layers: usize,
    /// Width of the visual emotion and lip feature streams.
    pub visual_dim: usize,
    pub diffusion: DiffusionConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 128,
            n_head: 4,
            decoder_layers: 4,
            kernel_size: 3,
            ptbe_layers: 2,
            visual_dim: 16,
            diffusion: DiffusionConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model < 2 || self.d_model % 2 != 0 {
            return Err(Error::InvalidArgument(format!(
                "d_model {} must be even and ≥ 2",
                self.d_model
            )));
        }
        if self.n_head == 0 || self.d_model % self.n_head != 0 {
            return Err(Error::InvalidArgument(format!(
                "n_head {} must divide d_model {}",
                self.n_head, self.d_model
            )));
        }
        if self.kernel_size % 2 == 0 {
            return Err(Error::InvalidArgument("kernel_size must be odd".into()));
        }
        if self.visual_dim == 0 {
            return Err(Error::InvalidArgument("visual_dim must be positive".into()));
        }
        let d = &self.diffusion;
        if d.steps == 0 || !(0.0 < d.beta_start && d.beta_start < d.beta_end && d.beta_end < 1.0) {
            return Err(Error::InvalidArgument(
                "diffusion needs steps > 0 and 0 < beta_start < beta_end < 1".into(),
            ));
        }
        Ok(())
    }
}

/// λ weights of the pitch, energy, duration and diffusion terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub pitch: f64,
    pub energy: f64,
    pub duration: f64,
    pub style: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            pitch: 1.0,
            energy: 1.0,
            duration: 1.0,
            style: 0.2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Pretrain,
    Adapt,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub stage: Stage,
    pub epochs: usize,
    pub lr: f64,
    pub adam_betas: (f64, f64),
    pub adam_eps: f64,
    pub loss_weights: LossWeights,
    pub seed: u64,
    pub batch_size: usize,
    /// Fraction of the pre-training corpus to augment before training.
    pub enhancement_ratio: f64,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            stage: Stage::Pretrain,
            epochs: 20,
            lr: 0.00625,
            adam_betas: (0.9, 0.98),
            adam_eps: 1e-9,
            loss_weights: LossWeights::default(),
            seed: 0,
            batch_size: 8,
            enhancement_ratio: 0.03,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn pretrain() -> Self {
        Self::default()
    }

    pub fn adapt() -> Self {
        Self {
            stage: Stage::Adapt,
            epochs: 30,
            ..Self::default()
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.adam_betas.0,
            beta2: self.adam_betas.1,
            eps: self.adam_eps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be positive".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::InvalidArgument("lr must be positive".into()));
        }
        let w = self.loss_weights;
        if [w.pitch, w.energy, w.duration, w.style]
            .iter()
            .any(|&v| v < 0.0 || !v.is_finite())
        {
            return Err(Error::InvalidArgument(
                "loss weights must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_reference_settings() {
        let c = TrainConfig::default();
        assert_eq!(c.lr, 0.00625);
        assert_eq!(c.adam_betas, (0.9, 0.98));
        assert_eq!(c.adam_eps, 1e-9);
        assert_eq!(
            c.loss_weights,
            LossWeights {
                pitch: 1.0,
                energy: 1.0,
                duration: 1.0,
                style: 0.2
            }
        );
        assert_eq!(c.epochs, 20);
        assert_eq!(TrainConfig::adapt().epochs, 30);
        assert_eq!(c.enhancement_ratio, 0.03);
        c.validate().unwrap();
    }

    #[test]
    fn partial_json_keeps_defaults() {
        let c: TrainConfig = serde_json::from_str(r#"{"epochs": 3, "model": {"d_model": 16}}"#).unwrap();
        assert_eq!(c.epochs, 3);
        assert_eq!(c.model.d_model, 16);
        assert_eq!(c.model.n_head, 4);
        assert!(serde_json::from_str::<TrainConfig>(r#"{"epoch": 3}"#).is_err());
    }

    #[test]
    fn head_count_must_divide_width() {
        let m = ModelConfig {
            d_model: 30,
            n_head: 4,
            ..ModelConfig::default()
        };
        assert!(m.validate().is_err());
    }
}
