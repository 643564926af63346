//! Flat `key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown keys are
//! errors so that typos never silently fall back to defaults.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::memory::{MemoryPolicy, PolicyKind};
use crate::nnet::{DatasetProfile, MlmConfig, ModelConfig};
use crate::pipeline::{Ablation, SegmentConfig, TrainConfig};
use crate::synthdata::{GenConfig, YesNoStyle};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AblationKind {
    NoQuestion,
    NoFinetune,
    RandomMemory,
}

impl AblationKind {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "no-question" | "no_question" => Self::NoQuestion,
            "no-finetune" | "no_finetune" => Self::NoFinetune,
            "random-memory" | "random_memory" => Self::RandomMemory,
            other => return Err(Error::InvalidConfig(format!("unknown ablation `{other}`"))),
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::NoQuestion => "no-question",
            Self::NoFinetune => "no-finetune",
            Self::RandomMemory => "random-memory",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub profile: DatasetProfile,
    pub seed: u64,
    pub out: PathBuf,

    pub n_train: usize,
    pub n_dev: usize,
    pub n_paragraphs: usize,
    pub hops: usize,
    pub name_pool: usize,
    pub span_fraction: f64,
    pub max_filler: usize,
    pub answer_repeat_prob: f64,

    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_seq_len: usize,
    pub overlap: usize,
    pub dropout: f64,
    pub normalize_entropy: bool,

    pub mlm_steps: usize,
    pub mlm_batch: usize,
    pub mlm_lr: f64,
    pub mask_fraction: f64,

    pub policy: PolicyKind,
    pub theta: f64,
    pub percentile: f64,
    pub mem_cap: usize,

    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub warmup_fraction: f64,
    pub ablations: Vec<AblationKind>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            profile: DatasetProfile::HpLike,
            seed: 0,
            out: PathBuf::from("runs/default"),
            n_train: 200,
            n_dev: 50,
            n_paragraphs: 10,
            hops: 2,
            name_pool: 200,
            span_fraction: 0.8,
            max_filler: 1,
            answer_repeat_prob: 0.3,
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            d_ff: 128,
            max_seq_len: 128,
            overlap: 20,
            dropout: 0.0,
            normalize_entropy: true,
            mlm_steps: 300,
            mlm_batch: 8,
            mlm_lr: 1e-3,
            mask_fraction: 0.15,
            policy: PolicyKind::LowHFixed,
            theta: 0.3,
            percentile: 5.0,
            mem_cap: 32,
            epochs: 3,
            batch_size: 8,
            lr: 1e-3,
            warmup_fraction: 0.1,
            ablations: Vec::new(),
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::InvalidConfig(format!("`{key}`: cannot parse `{v}`")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::InvalidConfig(format!("`{key}`: expected a boolean, got `{v}`"))),
    }
}

impl RunConfig {
    /// Sets one key from its string value.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "profile" => self.profile = DatasetProfile::parse(v)?,
            "seed" => self.seed = parse_num(key, v)?,
            "out" => self.out = PathBuf::from(v),
            "n_train" => self.n_train = parse_num(key, v)?,
            "n_dev" => self.n_dev = parse_num(key, v)?,
            "n_paragraphs" => self.n_paragraphs = parse_num(key, v)?,
            "hops" => self.hops = parse_num(key, v)?,
            "name_pool" => self.name_pool = parse_num(key, v)?,
            "span_fraction" => self.span_fraction = parse_num(key, v)?,
            "max_filler" => self.max_filler = parse_num(key, v)?,
            "answer_repeat_prob" => self.answer_repeat_prob = parse_num(key, v)?,
            "d_model" => self.d_model = parse_num(key, v)?,
            "n_layers" => self.n_layers = parse_num(key, v)?,
            "n_heads" => self.n_heads = parse_num(key, v)?,
            "d_ff" => self.d_ff = parse_num(key, v)?,
            "max_seq_len" => self.max_seq_len = parse_num(key, v)?,
            "overlap" => self.overlap = parse_num(key, v)?,
            "dropout" => self.dropout = parse_num(key, v)?,
            "normalize_entropy" => self.normalize_entropy = parse_bool(key, v)?,
            "mlm_steps" => self.mlm_steps = parse_num(key, v)?,
            "mlm_batch" => self.mlm_batch = parse_num(key, v)?,
            "mlm_lr" => self.mlm_lr = parse_num(key, v)?,
            "mask_fraction" => self.mask_fraction = parse_num(key, v)?,
            "policy" => self.policy = PolicyKind::parse(v)?,
            "theta" => self.theta = parse_num(key, v)?,
            "percentile" => self.percentile = parse_num(key, v)?,
            "mem_cap" => self.mem_cap = parse_num(key, v)?,
            "epochs" => self.epochs = parse_num(key, v)?,
            "batch_size" => self.batch_size = parse_num(key, v)?,
            "lr" => self.lr = parse_num(key, v)?,
            "warmup_fraction" => self.warmup_fraction = parse_num(key, v)?,
            "ablation" => {
                self.ablations = v
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty() && *s != "none")
                    .map(AblationKind::parse)
                    .collect::<Result<_>>()?;
            }
            other => return Err(Error::InvalidConfig(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Applies every `key = value` line of `text` on top of `self`.
    pub fn apply_text(&mut self, text: &str, origin: &Path) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |message: String| Error::Parse {
                path: origin.to_path_buf(),
                line: i + 1,
                message,
            };
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| err("expected `key = value`".into()))?;
            self.set(k.trim(), v.trim()).map_err(|e| err(e.to_string()))?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::Missing(path.to_path_buf()),
            _ => Error::Io(e),
        })?;
        let mut cfg = Self::default();
        cfg.apply_text(&text, path)?;
        Ok(cfg)
    }

    /// The config as a file `apply_text` reads back to an equal value.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("profile", self.profile.name().into());
        kv("seed", self.seed.to_string());
        kv("out", self.out.display().to_string());
        kv("n_train", self.n_train.to_string());
        kv("n_dev", self.n_dev.to_string());
        kv("n_paragraphs", self.n_paragraphs.to_string());
        kv("hops", self.hops.to_string());
        kv("name_pool", self.name_pool.to_string());
        kv("span_fraction", self.span_fraction.to_string());
        kv("max_filler", self.max_filler.to_string());
        kv("answer_repeat_prob", self.answer_repeat_prob.to_string());
        kv("d_model", self.d_model.to_string());
        kv("n_layers", self.n_layers.to_string());
        kv("n_heads", self.n_heads.to_string());
        kv("d_ff", self.d_ff.to_string());
        kv("max_seq_len", self.max_seq_len.to_string());
        kv("overlap", self.overlap.to_string());
        kv("dropout", self.dropout.to_string());
        kv("normalize_entropy", self.normalize_entropy.to_string());
        kv("mlm_steps", self.mlm_steps.to_string());
        kv("mlm_batch", self.mlm_batch.to_string());
        kv("mlm_lr", self.mlm_lr.to_string());
        kv("mask_fraction", self.mask_fraction.to_string());
        kv("policy", self.policy.name().into());
        kv("theta", self.theta.to_string());
        kv("percentile", self.percentile.to_string());
        kv("mem_cap", self.mem_cap.to_string());
        kv("epochs", self.epochs.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("lr", self.lr.to_string());
        kv("warmup_fraction", self.warmup_fraction.to_string());
        let abl: Vec<&str> = self.ablations.iter().map(|a| a.name()).collect();
        kv("ablation", if abl.is_empty() { "none".into() } else { abl.join(",") });
        s
    }

    pub fn has(&self, a: AblationKind) -> bool {
        self.ablations.contains(&a)
    }

    /// Random memory replaces the configured policy.
    pub fn effective_policy(&self) -> PolicyKind {
        if self.has(AblationKind::RandomMemory) {
            PolicyKind::Random
        } else {
            self.policy
        }
    }

    pub fn gen_config(&self) -> GenConfig {
        let (span_fraction, yes_no_style) = match self.profile {
            DatasetProfile::HpLike => (self.span_fraction, YesNoStyle::Verify),
            DatasetProfile::TwoWikiLike => (self.span_fraction, YesNoStyle::Comparison),
            DatasetProfile::MsqLike => (1.0, YesNoStyle::Verify),
        };
        GenConfig {
            n_samples: self.n_train + self.n_dev,
            n_paragraphs: self.n_paragraphs,
            hops: self.hops,
            vocab_size: self.name_pool,
            span_fraction,
            seed: self.seed,
            max_filler: self.max_filler,
            answer_repeat_prob: self.answer_repeat_prob,
            yes_no_style,
        }
    }

    pub fn model_config(&self, vocab_size: usize, pad_id: usize) -> ModelConfig {
        ModelConfig {
            d_model: self.d_model,
            n_layers: self.n_layers,
            n_heads: self.n_heads,
            d_ff: self.d_ff,
            max_seq_len: self.max_seq_len,
            vocab_size,
            pad_id,
            dropout_rate: self.dropout,
            normalize_entropy: self.normalize_entropy,
        }
    }

    pub fn mlm_config(&self) -> MlmConfig {
        MlmConfig {
            mask_fraction: self.mask_fraction,
            steps: self.mlm_steps,
            batch_size: self.mlm_batch,
            lr: self.mlm_lr,
            warmup_fraction: self.warmup_fraction,
            seed: self.seed ^ 0x6d6c_6d00,
        }
    }

    pub fn segment_config(&self) -> SegmentConfig {
        SegmentConfig {
            max_seq_len: self.max_seq_len,
            overlap: self.overlap,
        }
    }

    pub fn memory_policy(&self) -> MemoryPolicy {
        MemoryPolicy {
            kind: self.effective_policy(),
            theta: self.theta,
            percentile: self.percentile,
            k: self.mem_cap,
            seed: self.seed ^ 0x6d65_6d00,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let mut t = TrainConfig::new(self.profile, self.memory_policy());
        t.epochs = self.epochs;
        t.batch_size = self.batch_size;
        t.lr = self.lr;
        t.warmup_fraction = self.warmup_fraction;
        t.seed = self.seed ^ 0x7472_6e00;
        t.segment = self.segment_config();
        t.ablation = Ablation {
            no_finetune_stage1: self.has(AblationKind::NoFinetune),
            exclude_question: self.has(AblationKind::NoQuestion),
        };
        t
    }

    /// Checks everything that can be checked before data exists.
    pub fn validate(&self) -> Result<()> {
        if self.n_train == 0 {
            return Err(Error::InvalidConfig("n_train must be positive".into()));
        }
        self.gen_config().validate()?;
        self.model_config(16, 15).validate()?;
        self.train_config().validate()?;
        if self.overlap + 2 > self.max_seq_len {
            return Err(Error::InvalidConfig("overlap leaves no room in max_seq_len".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidConfig("dropout must lie in [0, 1)".into()));
        }
        Ok(())
    }
}
