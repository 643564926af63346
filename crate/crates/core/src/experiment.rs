//! End-to-end runs: data generation, masked-LM pretraining of the stage-1
//! model, two-stage training, and the run artifacts.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::Result;
use crate::io::{sha256_hex, write_atomic, write_json};
use crate::nnet::checkpoint::round_to_f32;
use crate::nnet::pretrain::MlmReport;
use crate::nnet::{masked_lm_pretrain, MlmTokens, ModelState};
use crate::pipeline::{corpus_vocabulary, segment_document, train_two_stage, EncodedSample, EpochMetrics, EntropyStats, TrainOutcome};
use crate::synthdata::{generate_corpus, samples_to_jsonl, MhqaSample};
use crate::text::{TokenId, Vocabulary};

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train: Vec<MhqaSample>,
    pub dev: Vec<MhqaSample>,
}

impl Dataset {
    pub fn generate(cfg: &RunConfig) -> Result<Self> {
        let mut all = generate_corpus(&cfg.gen_config())?;
        let dev = all.split_off(cfg.n_train);
        Ok(Self { train: all, dev })
    }

    /// SHA-256 of the train JSONL followed by the dev JSONL.
    pub fn hash(&self) -> Result<String> {
        let mut bytes = samples_to_jsonl(&self.train)?.into_bytes();
        bytes.extend(samples_to_jsonl(&self.dev)?.into_bytes());
        Ok(sha256_hex(&bytes))
    }

    pub fn all(&self) -> Vec<MhqaSample> {
        self.train.iter().chain(&self.dev).cloned().collect()
    }
}

#[derive(Debug, Clone)]
pub struct EncodedDataset {
    pub vocab: Vocabulary,
    pub train: Vec<EncodedSample>,
    pub dev: Vec<EncodedSample>,
}

impl EncodedDataset {
    /// Encodes with a vocabulary built over train and dev together.
    pub fn new(data: &Dataset) -> Result<Self> {
        let vocab = corpus_vocabulary(&data.all())?;
        Self::with_vocab(data, vocab)
    }

    pub fn with_vocab(data: &Dataset, vocab: Vocabulary) -> Result<Self> {
        let enc = |v: &[MhqaSample]| v.iter().map(|s| EncodedSample::encode(s, &vocab)).collect::<Result<Vec<_>>>();
        let train = enc(&data.train)?;
        let dev = enc(&data.dev)?;
        Ok(Self { vocab, train, dev })
    }
}

/// Stage-1 style inputs (`[CLS] <q> question </q> context`) of the training
/// documents, used as the masked-LM corpus.
pub fn stage1_corpus(data: &EncodedDataset, cfg: &RunConfig) -> Result<Vec<Vec<TokenId>>> {
    let mut out = Vec::new();
    for s in &data.train {
        for seg in segment_document(Some(&s.question), &[], &s.doc, &cfg.segment_config(), data.vocab.markers())? {
            out.push(seg.ids);
        }
    }
    Ok(out)
}

/// Fresh model, masked-LM pretraining, head frozen, weights rounded to the
/// checkpoint precision.
pub fn pretrain_stage1(data: &EncodedDataset, cfg: &RunConfig) -> Result<(ModelState, MlmReport)> {
    let m = data.vocab.markers();
    let mut state = ModelState::new(cfg.model_config(data.vocab.len(), m.pad), cfg.seed)?;
    let corpus = stage1_corpus(data, cfg)?;
    let tokens = MlmTokens {
        mask: m.mask,
        protected: data.vocab.special_ids().iter().copied().collect(),
    };
    let report = masked_lm_pretrain(&mut state, &corpus, &cfg.mlm_config(), &tokens)?;
    round_to_f32(&mut state);
    Ok((state, report))
}

pub fn train(
    data: &EncodedDataset,
    pretrained: &ModelState,
    cfg: &RunConfig,
    progress: impl FnMut(&EpochMetrics),
) -> Result<TrainOutcome> {
    train_two_stage(pretrained, &data.train, &data.dev, &data.vocab, &cfg.train_config(), progress)
}

pub const METRICS_HEADER: &str = "epoch,loss_total,loss_qtype,loss_span,loss_para,loss_sent,dev_answer_f1,dev_supporting_f1,dev_joint_f1,h_answer,h_supporting,h_distractor,mem_train,mem_dev";

/// Per-epoch metrics; the epoch-0 row carries only the pre-training entropies.
pub fn metrics_csv(initial: &EntropyStats, epochs: &[EpochMetrics]) -> String {
    let mut s = String::new();
    s.push_str(METRICS_HEADER);
    s.push('\n');
    let _ = writeln!(
        s,
        "0,,,,,,,,,{:.9},{:.9},{:.9},,",
        initial.answer, initial.supporting, initial.distractor
    );
    for e in epochs {
        let _ = writeln!(
            s,
            "{},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9},{:.4},{:.4}",
            e.epoch,
            e.loss.total,
            e.loss.qtype,
            e.loss.span,
            e.loss.para,
            e.loss.sent,
            e.dev_answer_f1,
            e.dev_supporting_f1,
            e.dev_joint_f1,
            e.entropy.answer,
            e.entropy.supporting,
            e.entropy.distractor,
            e.mean_memory_train,
            e.mean_memory_dev
        );
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub crate_version: String,
    pub config: RunConfig,
    /// The same config in the flat file format, ready for `--config`.
    pub config_text: String,
    pub seeds: Seeds,
    pub threads: usize,
    pub dataset_hash: Option<String>,
    pub extra: serde_json::Value,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub run: u64,
    pub data: u64,
    pub init: u64,
    pub mlm: u64,
    pub memory: u64,
    pub train: u64,
}

impl Manifest {
    pub fn new(command: &str, cfg: &RunConfig, dataset_hash: Option<String>) -> Self {
        Self {
            command: command.to_owned(),
            crate_version: env!("CARGO_PKG_VERSION").to_owned(),
            config: cfg.clone(),
            config_text: cfg.to_text(),
            seeds: Seeds {
                run: cfg.seed,
                data: cfg.gen_config().seed,
                init: cfg.seed,
                mlm: cfg.mlm_config().seed,
                memory: cfg.memory_policy().seed,
                train: cfg.train_config().seed,
            },
            threads: 1,
            dataset_hash,
            extra: serde_json::Value::Null,
        }
    }

    /// Writes `manifest-<command>.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        write_json(&dir.join(format!("manifest-{}.json", self.command)), self)
    }
}

pub fn write_metrics(dir: &Path, outcome: &TrainOutcome) -> Result<()> {
    write_atomic(
        &dir.join("metrics.csv"),
        metrics_csv(&outcome.initial_entropy, &outcome.epochs).as_bytes(),
    )
}
