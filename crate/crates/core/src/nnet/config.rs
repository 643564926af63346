use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_seq_len: usize,
    pub vocab_size: usize,
    /// Keys holding this id are excluded from attention.
    pub pad_id: usize,
    pub dropout_rate: f64,
    /// Scale entropy by 1/n (natural log); disable for the plain Shannon form.
    pub normalize_entropy: bool,
}

impl ModelConfig {
    /// Default toy architecture for a vocabulary of `vocab_size` tokens.
    pub fn toy(vocab_size: usize, pad_id: usize) -> Self {
        Self {
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            d_ff: 128,
            max_seq_len: 128,
            vocab_size,
            pad_id,
            dropout_rate: 0.0,
            normalize_entropy: true,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return Err(Error::InvalidConfig(format!(
                "d_model ({}) must be a positive multiple of n_heads ({})",
                self.d_model, self.n_heads
            )));
        }
        if self.vocab_size < 2 || self.pad_id >= self.vocab_size {
            return Err(Error::InvalidConfig("vocab_size must be >= 2 and contain pad_id".into()));
        }
        if self.max_seq_len == 0 || self.d_ff == 0 {
            return Err(Error::InvalidConfig("max_seq_len and d_ff must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::InvalidConfig("dropout_rate must lie in [0, 1)".into()));
        }
        Ok(())
    }
}
