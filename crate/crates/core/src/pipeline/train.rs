//! The two-stage epoch loop: build memories with the frozen-head stage-1
//! model, train stage 2 on memory-augmented segments, then copy the stage-2
//! encoder back into stage 1.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evalmetrics::{evaluate_encoded, PredictionRecord, ScoreReport};
use crate::memory::{build_entropy_profile, populate_memory, EntropyProfile, MemoryBuffer, MemoryPolicy};
use crate::nnet::{multitask_loss, AdamWConfig, DatasetProfile, LinearSchedule, LossBreakdown, LossWeights, ModelState};
use crate::pipeline::encode::EncodedSample;
use crate::pipeline::infer::infer;
use crate::pipeline::prepare::{prepare_segments, PreparedSegment};
use crate::pipeline::segment::SegmentConfig;
use crate::text::Vocabulary;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Ablation {
    /// Keep the pretrained stage-1 encoder for every epoch.
    pub no_finetune_stage1: bool,
    /// Drop the question from stage-1 inputs when scoring the document.
    pub exclude_question: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub profile: DatasetProfile,
    pub weights: LossWeights,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub warmup_fraction: f64,
    pub seed: u64,
    pub segment: SegmentConfig,
    pub policy: MemoryPolicy,
    pub ablation: Ablation,
    pub adamw: AdamWConfig,
}

impl TrainConfig {
    pub fn new(profile: DatasetProfile, policy: MemoryPolicy) -> Self {
        Self {
            profile,
            weights: profile.default_weights(),
            epochs: 3,
            batch_size: 8,
            lr: 1e-3,
            warmup_fraction: 0.1,
            seed: 0,
            segment: SegmentConfig::default(),
            policy,
            ablation: Ablation::default(),
            adamw: AdamWConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.policy.validate()?;
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig("epochs and batch size must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || !(0.0..=1.0).contains(&self.warmup_fraction) {
            return Err(Error::InvalidConfig("lr must be positive, warmup fraction in [0,1]".into()));
        }
        Ok(())
    }
}

/// Pooled mean stage-1 entropy of dev tokens by class.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EntropyStats {
    pub answer: f64,
    pub supporting: f64,
    pub distractor: f64,
}

impl EntropyStats {
    /// Distractor minus supporting mean entropy.
    pub fn separation(&self) -> f64 {
        self.distractor - self.supporting
    }
}

pub fn entropy_stats(dev: &[EncodedSample], profiles: &[EntropyProfile]) -> EntropyStats {
    let mut acc = [(0.0, 0usize); 3];
    for (s, p) in dev.iter().zip(profiles) {
        let sets = [s.answer_positions(), s.supporting_fact_positions(), s.distractor_positions()];
        for (a, set) in acc.iter_mut().zip(&sets) {
            for &i in set {
                a.0 += p.entries[i].entropy;
                a.1 += 1;
            }
        }
    }
    let mean = |(s, n): (f64, usize)| if n == 0 { f64::NAN } else { s / n as f64 };
    EntropyStats {
        answer: mean(acc[0]),
        supporting: mean(acc[1]),
        distractor: mean(acc[2]),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss: LossBreakdown,
    pub steps: usize,
    pub dev_answer_f1: f64,
    pub dev_supporting_f1: f64,
    pub dev_joint_f1: f64,
    /// Dev entropies from the stage-1 model after this epoch's sync.
    pub entropy: EntropyStats,
    pub mean_memory_train: f64,
    pub mean_memory_dev: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyncRecord {
    pub epoch: usize,
    pub stage1_encoder: String,
    pub stage2_encoder: String,
    pub stage1_lm_head: String,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub stage1: ModelState,
    pub stage2: ModelState,
    pub epochs: Vec<EpochMetrics>,
    /// Dev entropy stats before any training.
    pub initial_entropy: EntropyStats,
    pub pretrained_lm_head: String,
    pub sync_log: Vec<SyncRecord>,
    /// Dev profiles after k syncs, k = 0..=epochs.
    pub dev_profiles: Vec<Vec<EntropyProfile>>,
    /// Dev memories used in the final epoch's evaluation.
    pub dev_memories: Vec<MemoryBuffer>,
    pub dev_predictions: Vec<PredictionRecord>,
    pub dev_report: ScoreReport,
}

fn profiles(
    model: &ModelState,
    vocab: &Vocabulary,
    samples: &[EncodedSample],
    cfg: &TrainConfig,
) -> Result<Vec<EntropyProfile>> {
    samples
        .iter()
        .map(|s| {
            build_entropy_profile(model, vocab, &s.question, &s.doc, &cfg.segment, !cfg.ablation.exclude_question)
        })
        .collect()
}

fn memories(
    profiles: &[EntropyProfile],
    policy: &MemoryPolicy,
    salt: u64,
) -> Result<Vec<MemoryBuffer>> {
    profiles
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let seed = policy.seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (i as u64).wrapping_mul(0xD1B5_4A32_D192_ED03);
            populate_memory(p, &policy.with_seed(seed))
        })
        .collect()
}

fn mean_len(m: &[MemoryBuffer]) -> f64 {
    if m.is_empty() {
        0.0
    } else {
        m.iter().map(|b| b.len() as f64).sum::<f64>() / m.len() as f64
    }
}

fn prepare_all(
    samples: &[EncodedSample],
    memories: &[MemoryBuffer],
    vocab: &Vocabulary,
    cfg: &TrainConfig,
) -> Result<Vec<PreparedSegment>> {
    let mut out = Vec::new();
    for (s, m) in samples.iter().zip(memories) {
        out.extend(prepare_segments(s, &m.ids(), vocab.markers(), &cfg.segment, cfg.profile)?);
    }
    Ok(out)
}

/// Predicts every dev sample with `model` and scores the predictions.
pub fn evaluate_dev(
    model: &ModelState,
    dev: &[EncodedSample],
    memories: &[MemoryBuffer],
    vocab: &Vocabulary,
    cfg: &TrainConfig,
) -> Result<(Vec<PredictionRecord>, ScoreReport)> {
    let preds = dev
        .iter()
        .zip(memories)
        .map(|(s, m)| Ok(infer(model, s, &m.ids(), vocab, &cfg.segment, cfg.profile)?.to_record()))
        .collect::<Result<Vec<_>>>()?;
    let report = evaluate_encoded(dev, &preds, cfg.profile)?;
    Ok((preds, report))
}

/// Runs the two-stage loop from a pretrained (frozen-head) stage-1 model.
/// Stage 2 starts as a copy of it with a fresh optimizer.
pub fn train_two_stage(
    pretrained: &ModelState,
    train: &[EncodedSample],
    dev: &[EncodedSample],
    vocab: &Vocabulary,
    cfg: &TrainConfig,
    mut progress: impl FnMut(&EpochMetrics),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    pretrained.require_frozen()?;
    if train.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut stage1 = pretrained.clone();
    let mut stage2 = pretrained.clone();
    stage2.reset_optimizer();
    let pretrained_lm_head = stage1.params.lm_head_hash();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut dev_profiles = vec![profiles(&stage1, vocab, dev, cfg)?];
    let initial_entropy = entropy_stats(dev, &dev_profiles[0]);
    let mut schedule: Option<LinearSchedule> = None;
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut sync_log = Vec::with_capacity(cfg.epochs);
    let mut last = None;

    for epoch in 1..=cfg.epochs {
        let train_profiles = profiles(&stage1, vocab, train, cfg)?;
        let train_mem = memories(&train_profiles, &cfg.policy, 2 * epoch as u64)?;
        let dev_mem = memories(dev_profiles.last().unwrap(), &cfg.policy, 2 * epoch as u64 + 1)?;
        let mut segments = prepare_all(train, &train_mem, vocab, cfg)?;
        segments.shuffle(&mut rng);

        let steps = segments.len().div_ceil(cfg.batch_size);
        let schedule = *schedule.get_or_insert_with(|| {
            let total = (steps * cfg.epochs) as f64;
            LinearSchedule {
                base_lr: cfg.lr,
                warmup: total * cfg.warmup_fraction,
                total,
            }
        });

        let mut sum = LossBreakdown::default();
        for batch in segments.chunks(cfg.batch_size) {
            let mut grads = stage2.zero_grads();
            for seg in batch {
                let input = seg.input();
                let (out, cache) = stage2.forward(input, false, Some(&mut rng))?;
                let (parts, dout) = multitask_loss(&out, &seg.targets, &cfg.weights, cfg.profile)?;
                stage2.accumulate_grads(input, &out, &cache, &dout, &mut grads);
                sum.total += parts.total;
                sum.qtype += parts.qtype;
                sum.span += parts.span;
                sum.para += parts.para;
                sum.sent += parts.sent;
            }
            grads.scale(1.0 / batch.len() as f64);
            let lr = schedule.lr_at(stage2.step as f64).max(0.0);
            stage2.step(&grads, &cfg.adamw, lr)?;
        }
        let n = segments.len().max(1) as f64;
        let loss = LossBreakdown {
            total: sum.total / n,
            qtype: sum.qtype / n,
            span: sum.span / n,
            para: sum.para / n,
            sent: sum.sent / n,
        };

        let (preds, report) = evaluate_dev(&stage2, dev, &dev_mem, vocab, cfg)?;

        if !cfg.ablation.no_finetune_stage1 {
            stage1.params.copy_encoder_from(&stage2.params);
        }
        sync_log.push(SyncRecord {
            epoch,
            stage1_encoder: stage1.params.encoder_hash(),
            stage2_encoder: stage2.params.encoder_hash(),
            stage1_lm_head: stage1.params.lm_head_hash(),
        });
        let next = profiles(&stage1, vocab, dev, cfg)?;
        let metrics = EpochMetrics {
            epoch,
            loss,
            steps,
            dev_answer_f1: report.answer_f1,
            dev_supporting_f1: report.supporting_f1,
            dev_joint_f1: report.joint_f1,
            entropy: entropy_stats(dev, &next),
            mean_memory_train: mean_len(&train_mem),
            mean_memory_dev: mean_len(&dev_mem),
        };
        dev_profiles.push(next);
        progress(&metrics);
        epochs.push(metrics);
        last = Some((dev_mem, preds, report));
    }

    let (dev_memories, dev_predictions, dev_report) = last.expect("at least one epoch");
    Ok(TrainOutcome {
        stage1,
        stage2,
        epochs,
        initial_entropy,
        pretrained_lm_head,
        sync_log,
        dev_profiles,
        dev_memories,
        dev_predictions,
        dev_report,
    })
}
