use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrossEncoderConfig {
    pub layers: usize,
    pub hidden: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub max_seq_len: usize,
    pub vocab_size: usize,
    pub seed: u64,
    /// Std of the normal initializer for weight matrices and embeddings.
    #[serde(default = "default_init_std")]
    pub init_std: f64,
}

fn default_init_std() -> f64 {
    0.02
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// 2 layers, hidden 128, 2 heads.
    Tiny,
    /// 4 layers, hidden 256, 4 heads.
    Mini,
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::Tiny => "cross-tiny",
            Preset::Mini => "cross-mini",
        }
    }
}

impl CrossEncoderConfig {
    pub fn preset(preset: Preset, vocab_size: usize, seed: u64) -> Self {
        let (layers, hidden, heads) = match preset {
            Preset::Tiny => (2, 128, 2),
            Preset::Mini => (4, 256, 4),
        };
        Self {
            layers,
            hidden,
            heads,
            ffn_dim: 4 * hidden,
            max_seq_len: 32,
            vocab_size,
            seed,
            init_std: default_init_std(),
        }
    }

    pub fn tiny(vocab_size: usize, seed: u64) -> Self {
        Self::preset(Preset::Tiny, vocab_size, seed)
    }

    pub fn mini(vocab_size: usize, seed: u64) -> Self {
        Self::preset(Preset::Mini, vocab_size, seed)
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 {
            return Err(Error::Config("layers must be >= 1".into()));
        }
        if self.heads == 0 || self.hidden % self.heads != 0 {
            return Err(Error::Config(format!(
                "hidden {} not divisible by heads {}",
                self.hidden, self.heads
            )));
        }
        if self.ffn_dim == 0 || self.max_seq_len == 0 || self.vocab_size < 4 {
            return Err(Error::Config("ffn_dim, max_seq_len and vocab_size must be positive".into()));
        }
        if !(self.init_std > 0.0) {
            return Err(Error::Config("init_std must be positive".into()));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        let (h, f) = (self.hidden, self.ffn_dim);
        let per_layer = 4 * (h * h + h) + (h * f + f) + (f * h + h) + 4 * h;
        self.vocab_size * h + self.max_seq_len * h + self.layers * per_layer + 2 * h + h + 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrossTrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
}

impl Default for CrossTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 8,
            lr: 1e-3,
            batch_size: 32,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
        }
    }
}

impl CrossTrainConfig {
    /// Large-scale reference setup: 4 epochs at lr 2e-5 with the per-preset
    /// batch sizes used on multi-GPU hardware.
    pub fn large_scale(preset: Preset) -> Self {
        Self {
            epochs: 4,
            lr: 2e-5,
            batch_size: match preset {
                Preset::Tiny => 40960,
                Preset::Mini => 10240,
            },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("lr > 0, epochs >= 1 and batch_size >= 1 required".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_follow_compact_bert_shapes() {
        let t = CrossEncoderConfig::tiny(100, 0);
        let m = CrossEncoderConfig::mini(100, 0);
        assert_eq!((t.layers, t.hidden), (2, 128));
        assert_eq!((m.layers, m.hidden), (4, 256));
        assert!(m.param_count() > t.param_count());
        t.validate().unwrap();
        m.validate().unwrap();
    }

    #[test]
    fn invalid_shapes_rejected() {
        let mut c = CrossEncoderConfig::tiny(100, 0);
        c.heads = 3;
        assert!(c.validate().is_err());
        c.heads = 2;
        c.layers = 0;
        assert!(c.validate().is_err());
    }
}
