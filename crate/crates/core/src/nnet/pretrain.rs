//! Masked-LM pretraining that gives the LM head its language knowledge
//! before it is frozen.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::forward::{ModelInput, OutputGrads};
use super::loss::masked_lm_loss;
use super::optim::{AdamWConfig, LinearSchedule};
use super::state::ModelState;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlmConfig {
    pub mask_fraction: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub warmup_fraction: f64,
    pub seed: u64,
}

impl Default for MlmConfig {
    fn default() -> Self {
        Self {
            mask_fraction: 0.15,
            steps: 500,
            batch_size: 8,
            lr: 1e-3,
            warmup_fraction: 0.1,
            seed: 0,
        }
    }
}

/// Ids that are never chosen as prediction targets or random replacements.
#[derive(Debug, Clone)]
pub struct MlmTokens {
    pub mask: usize,
    pub protected: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlmReport {
    pub losses: Vec<f64>,
}

impl MlmReport {
    /// Mean loss over the first and last `window` steps.
    pub fn head_tail(&self, window: usize) -> Option<(f64, f64)> {
        if self.losses.is_empty() {
            return None;
        }
        let w = window.clamp(1, self.losses.len());
        let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
        Some((mean(&self.losses[..w]), mean(&self.losses[self.losses.len() - w..])))
    }
}

/// Applies BERT-style corruption: of the chosen positions 80% become the
/// mask token, 10% a random token and 10% stay unchanged.
fn corrupt(
    seq: &[usize],
    fraction: f64,
    tokens: &MlmTokens,
    vocab: usize,
    rng: &mut ChaCha8Rng,
) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let candidates: Vec<usize> = (0..seq.len())
        .filter(|&i| !tokens.protected.contains(&seq[i]))
        .collect();
    let mut input = seq.to_vec();
    if candidates.is_empty() {
        return (input, Vec::new(), Vec::new());
    }
    let count = ((candidates.len() as f64 * fraction).round() as usize).clamp(1, candidates.len());
    let mut picked: Vec<usize> = sample(rng, candidates.len(), count)
        .into_iter()
        .map(|k| candidates[k])
        .collect();
    picked.sort_unstable();
    let targets: Vec<usize> = picked.iter().map(|&p| seq[p]).collect();
    for &p in &picked {
        let r: f64 = rng.gen();
        if r < 0.8 {
            input[p] = tokens.mask;
        } else if r < 0.9 {
            loop {
                let t = rng.gen_range(0..vocab);
                if !tokens.protected.contains(&t) && t != tokens.mask {
                    input[p] = t;
                    break;
                }
            }
        }
    }
    (input, picked, targets)
}

/// Trains encoder and LM head on masked-token prediction, then freezes the
/// LM head.
pub fn masked_lm_pretrain(
    state: &mut ModelState,
    corpus: &[Vec<usize>],
    cfg: &MlmConfig,
    tokens: &MlmTokens,
) -> Result<MlmReport> {
    if corpus.is_empty() || corpus.iter().all(|s| s.is_empty()) {
        return Err(Error::EmptyCorpus);
    }
    if !(cfg.mask_fraction > 0.0 && cfg.mask_fraction <= 1.0) {
        return Err(Error::InvalidLoss(format!(
            "mask_fraction {} selects no prediction targets",
            cfg.mask_fraction
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let schedule = LinearSchedule {
        base_lr: cfg.lr,
        warmup: cfg.steps as f64 * cfg.warmup_fraction,
        total: cfg.steps as f64,
    };
    let opt = AdamWConfig::default();
    let max_len = state.config.max_seq_len;
    let vocab = state.config.vocab_size;
    let mut losses = Vec::with_capacity(cfg.steps);

    for step in 0..cfg.steps {
        let mut grads = state.zero_grads();
        let mut loss_sum = 0.0;
        let mut used = 0usize;
        for _ in 0..cfg.batch_size.max(1) {
            let seq = &corpus[rng.gen_range(0..corpus.len())];
            let seq = &seq[..seq.len().min(max_len)];
            let (input, positions, targets) = corrupt(seq, cfg.mask_fraction, tokens, vocab, &mut rng);
            if positions.is_empty() {
                continue;
            }
            let mi = ModelInput::tokens(&input);
            let (out, cache) = state.forward(mi, true, Some(&mut rng))?;
            let (loss, dl) = masked_lm_loss(out.lm_logits.as_ref().unwrap(), &positions, &targets)?;
            let mut dout = OutputGrads::zeros(input.len(), 0, 0);
            dout.lm_logits = Some(dl);
            state.accumulate_grads(mi, &out, &cache, &dout, &mut grads);
            loss_sum += loss;
            used += 1;
        }
        if used == 0 {
            return Err(Error::InvalidLoss("no maskable tokens in sampled batch".into()));
        }
        grads.scale(1.0 / used as f64);
        let lr = schedule.lr_at(step as f64);
        state.step(&grads, &opt, lr)?;
        losses.push(loss_sum / used as f64);
    }
    state.freeze_lm_head();
    Ok(MlmReport { losses })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnet::config::ModelConfig;

    fn setup() -> (ModelState, Vec<Vec<usize>>, MlmTokens) {
        let mut cfg = ModelConfig::toy(20, 19);
        cfg.d_model = 16;
        cfg.n_heads = 2;
        cfg.d_ff = 32;
        cfg.max_seq_len = 16;
        let state = ModelState::new(cfg, 3).unwrap();
        // a repetitive toy language: tokens follow a fixed cycle
        let corpus: Vec<Vec<usize>> = (0..40)
            .map(|k| (0..12).map(|i| 1 + (k + i * 3) % 15).collect())
            .collect();
        let tokens = MlmTokens {
            mask: 18,
            protected: vec![0, 18, 19],
        };
        (state, corpus, tokens)
    }

    #[test]
    fn zero_steps_only_freezes() {
        let (mut s, corpus, tokens) = setup();
        let before = s.params.clone();
        let cfg = MlmConfig { steps: 0, ..MlmConfig::default() };
        masked_lm_pretrain(&mut s, &corpus, &cfg, &tokens).unwrap();
        assert_eq!(s.params, before);
        assert!(s.lm_head_frozen);
    }

    #[test]
    fn zero_mask_fraction_is_an_error() {
        let (mut s, corpus, tokens) = setup();
        let cfg = MlmConfig { mask_fraction: 0.0, ..MlmConfig::default() };
        assert!(masked_lm_pretrain(&mut s, &corpus, &cfg, &tokens).is_err());
        assert!(masked_lm_pretrain(&mut s, &[], &MlmConfig::default(), &tokens).is_err());
    }

    #[test]
    fn loss_decreases() {
        let (mut s, corpus, tokens) = setup();
        let cfg = MlmConfig {
            steps: 500,
            batch_size: 4,
            lr: 3e-3,
            seed: 11,
            ..MlmConfig::default()
        };
        let report = masked_lm_pretrain(&mut s, &corpus, &cfg, &tokens).unwrap();
        let (head, tail) = report.head_tail(25).unwrap();
        assert!(tail < head, "initial {head} final {tail}");
        assert!(s.lm_head_frozen);
    }
}
