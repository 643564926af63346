//! Subcommands over a run directory.
//!
//! `gen-data` writes `train.jsonl` / `dev.jsonl`, `pretrain-lm` adds
//! `vocab.json` and `stage1.ckpt`, `train` adds checkpoints, metrics and
//! dev dumps, and the remaining commands read those back.

use std::collections::{BTreeMap, BTreeSet};
use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::analysis::{
    composition_csv, coverage_csv, coverage_table, curve_csv, export_heatmap, f1_vs_memory_curve, heatmap_tsv,
    join_views, memory_composition_scatter, rare_stats_csv, rare_token_stats, HeatmapMode, DEFAULT_WINDOW,
    RARE_THRESHOLD,
};
use crate::config::{AblationKind, RunConfig};
use crate::error::{Error, Result};
use crate::evalmetrics::{evaluate, PredictionRecord, ScoreReport};
use crate::experiment::{self, Dataset, EncodedDataset, Manifest};
use crate::io::{read_json, read_jsonl, write_atomic, write_json, write_jsonl};
use crate::memory::{MemoryDumpRecord, ProfileDumpRecord};
use crate::memory::PolicyKind;
use crate::nnet::{checkpoint, DatasetProfile};
use crate::pipeline::EncodedSample;
use crate::synthdata;
use crate::text::Vocabulary;

#[derive(Debug, Parser)]
#[command(name = "memqa", version, about = "Entropy-based global memory for multi-hop QA on synthetic data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic train/dev corpus.
    GenData(Common),
    /// Build the vocabulary and pretrain the stage-1 model with masked LM.
    PretrainLm(DataArgs),
    /// Two-stage training from a pretrained checkpoint.
    Train(TrainArgs),
    /// Score a prediction file against gold data.
    Eval(EvalArgs),
    /// Coverage, F1-vs-memory, composition and rare-token tables.
    AnalyzeMemory(AnalyzeArgs),
    /// Per-token entropy rows for one dev document.
    ExportHeatmap(HeatmapArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// Flat `key = value` config file; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// highest_h | low_h | low_h_percentile | random | none
    #[arg(long)]
    pub policy: Option<String>,
    #[arg(long)]
    pub theta: Option<f64>,
    #[arg(long)]
    pub percentile: Option<f64>,
    #[arg(long = "mem-cap")]
    pub mem_cap: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// hp-like | 2w-like | msq-like
    #[arg(long)]
    pub profile: Option<String>,
    #[arg(long, value_delimiter = ',', value_parser = ["no-question", "no-finetune", "random-memory"])]
    pub ablation: Vec<String>,
    /// Run directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Any config key, e.g. `--set d_model=32`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct DataArgs {
    #[command(flatten)]
    pub common: Common,
    /// Directory holding train.jsonl and dev.jsonl (default: the run directory).
    #[arg(long)]
    pub data: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Pretrained stage-1 checkpoint; `vocab.json` is read from its directory.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    /// Apply SQuAD-style answer normalization.
    #[arg(long)]
    pub normalize: bool,
}

#[derive(Debug, Clone, Default, Args)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = DEFAULT_WINDOW)]
    pub window: usize,
    #[arg(long = "rare-threshold", default_value_t = RARE_THRESHOLD)]
    pub rare_threshold: usize,
}

#[derive(Debug, Clone, Default, Args)]
pub struct HeatmapArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Dev sample id (default: the first dev sample).
    #[arg(long)]
    pub sample: Option<String>,
    /// absolute | epoch_delta
    #[arg(long, default_value = "absolute")]
    pub mode: String,
    /// Profile epoch to export (0 = before fine-tuning).
    #[arg(long, default_value_t = 1)]
    pub epoch: usize,
    /// Baseline epoch for delta mode.
    #[arg(long = "before-epoch", default_value_t = 0)]
    pub before_epoch: usize,
}

impl Common {
    /// Defaults, then the config file, then `--set`, then named flags.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::InvalidConfig(format!("--set expects KEY=VALUE, got `{kv}`")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = &self.policy {
            cfg.policy = PolicyKind::parse(v)?;
        }
        if let Some(v) = self.theta {
            cfg.theta = v;
        }
        if let Some(v) = self.percentile {
            cfg.percentile = v;
        }
        if let Some(v) = self.mem_cap {
            cfg.mem_cap = v;
        }
        if let Some(v) = self.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = &self.profile {
            cfg.profile = DatasetProfile::parse(v)?;
        }
        if !self.ablation.is_empty() {
            cfg.ablations = self.ablation.iter().map(|a| AblationKind::parse(a)).collect::<Result<_>>()?;
        }
        if let Some(v) = &self.out {
            cfg.out = v.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

impl DataArgs {
    fn data_dir(&self, cfg: &RunConfig) -> PathBuf {
        self.data.clone().unwrap_or_else(|| cfg.out.clone())
    }
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    Ok(Dataset {
        train: synthdata::read_jsonl(&dir.join("train.jsonl"))?,
        dev: synthdata::read_jsonl(&dir.join("dev.jsonl"))?,
    })
}

pub fn gen_data(cfg: &RunConfig) -> Result<Dataset> {
    let data = Dataset::generate(cfg)?;
    synthdata::write_jsonl(&cfg.out.join("train.jsonl"), &data.train)?;
    synthdata::write_jsonl(&cfg.out.join("dev.jsonl"), &data.dev)?;
    Manifest::new("gen-data", cfg, Some(data.hash()?)).write(&cfg.out)?;
    Ok(data)
}

pub fn pretrain_lm(cfg: &RunConfig, data_dir: &Path) -> Result<()> {
    let data = load_dataset(data_dir)?;
    let enc = EncodedDataset::new(&data)?;
    let (state, report) = experiment::pretrain_stage1(&enc, cfg)?;
    enc.vocab.save(&cfg.out.join("vocab.json"))?;
    checkpoint::save(&state, &cfg.out.join("stage1.ckpt"))?;
    let mut csv = String::from("step,loss\n");
    for (i, l) in report.losses.iter().enumerate() {
        let _ = writeln!(csv, "{},{:.9}", i + 1, l);
    }
    write_atomic(&cfg.out.join("pretrain_loss.csv"), csv.as_bytes())?;
    let mut m = Manifest::new("pretrain-lm", cfg, Some(data.hash()?));
    m.extra = serde_json::json!({
        "vocab_size": enc.vocab.len(),
        "loss_head_tail": report.head_tail(20),
        "lm_head_hash": state.params.lm_head_hash(),
    });
    m.write(&cfg.out)
}

pub fn train(cfg: &RunConfig, data_dir: &Path, ckpt: &Path) -> Result<ScoreReport> {
    let data = load_dataset(data_dir)?;
    let pretrained = checkpoint::load(ckpt)?;
    let vocab_path = ckpt.parent().unwrap_or(Path::new(".")).join("vocab.json");
    let vocab = Vocabulary::load(&vocab_path)?;
    let enc = EncodedDataset::with_vocab(&data, vocab)?;
    if pretrained.config != cfg.model_config(enc.vocab.len(), enc.vocab.markers().pad) {
        return Err(Error::InvalidConfig(
            "checkpoint model settings differ from the run config; use the pretraining config".into(),
        ));
    }
    let outcome = experiment::train(&enc, &pretrained, cfg, |m| {
        eprintln!(
            "epoch {}: loss {:.4} dev ans {:.4} sup {:.4} joint {:.4} H sup {:.6} dis {:.6}",
            m.epoch,
            m.loss.total,
            m.dev_answer_f1,
            m.dev_supporting_f1,
            m.dev_joint_f1,
            m.entropy.supporting,
            m.entropy.distractor
        )
    })?;
    let out = &cfg.out;
    experiment::write_metrics(out, &outcome)?;
    write_jsonl(&out.join("sync_log.jsonl"), &outcome.sync_log)?;
    write_jsonl(&out.join("dev_predictions.jsonl"), &outcome.dev_predictions)?;
    let policy = cfg.effective_policy();
    let memories: Vec<MemoryDumpRecord> = enc
        .dev
        .iter()
        .zip(&outcome.dev_memories)
        .map(|(s, m)| MemoryDumpRecord::new(&s.id, policy, m, &enc.vocab))
        .collect();
    write_jsonl(&out.join("dev_memories.jsonl"), &memories)?;
    let mut profiles = Vec::new();
    for (k, epoch) in outcome.dev_profiles.iter().enumerate() {
        for (s, p) in enc.dev.iter().zip(epoch) {
            profiles.push(ProfileDumpRecord::new(&s.id, k, p, &enc.vocab));
        }
    }
    write_jsonl(&out.join("dev_profiles.jsonl"), &profiles)?;
    write_json(&out.join("scores.json"), &outcome.dev_report)?;
    checkpoint::save(&outcome.stage2, &out.join("stage2.ckpt"))?;
    checkpoint::save(&outcome.stage1, &out.join("stage1_final.ckpt"))?;
    let mut m = Manifest::new("train", cfg, Some(data.hash()?));
    m.extra = serde_json::json!({
        "checkpoint": ckpt,
        "pretrained_lm_head": outcome.pretrained_lm_head,
        "initial_entropy": outcome.initial_entropy,
    });
    m.write(out)?;
    Ok(outcome.dev_report)
}

pub fn eval(cfg: &RunConfig, data_dir: &Path, predictions: &Path, normalize: bool) -> Result<ScoreReport> {
    let gold = synthdata::read_jsonl(&data_dir.join("dev.jsonl"))?;
    let preds: Vec<PredictionRecord> = read_jsonl(predictions)?;
    let report = evaluate(&gold, &preds, cfg.profile, normalize)?;
    write_json(&cfg.out.join("scores.json"), &report)?;
    let mut m = Manifest::new("eval", cfg, None);
    m.extra = serde_json::json!({ "predictions": predictions, "normalize": normalize });
    m.write(&cfg.out)?;
    Ok(report)
}

fn encoded_dev(data_dir: &Path, vocab: &Vocabulary) -> Result<Vec<EncodedSample>> {
    synthdata::read_jsonl(&data_dir.join("dev.jsonl"))?
        .iter()
        .map(|s| EncodedSample::encode(s, vocab))
        .collect()
}

/// Profiles of one epoch keyed by sample id.
fn profiles_at(
    records: &[ProfileDumpRecord],
    epoch: usize,
    vocab: &Vocabulary,
) -> Result<BTreeMap<String, crate::memory::EntropyProfile>> {
    records
        .iter()
        .filter(|r| r.epoch == epoch)
        .map(|r| Ok((r.sample_id.clone(), r.to_profile(vocab)?)))
        .collect()
}

pub fn analyze_memory(cfg: &RunConfig, data_dir: &Path, window: usize, rare_threshold: usize) -> Result<()> {
    let out = &cfg.out;
    let vocab = Vocabulary::load(&out.join("vocab.json"))
        .or_else(|_| Vocabulary::load(&data_dir.join("vocab.json")))?;
    let dev = encoded_dev(data_dir, &vocab)?;
    let memories: Vec<MemoryDumpRecord> = read_jsonl(&out.join("dev_memories.jsonl"))?;
    let scores: ScoreReport = read_json(&out.join("scores.json"))?;
    let records: Vec<ProfileDumpRecord> = read_jsonl(&out.join("dev_profiles.jsonl"))?;

    let mem: BTreeMap<String, BTreeSet<usize>> = memories
        .iter()
        .map(|r| (r.sample_id.clone(), r.tokens.iter().map(|t| t.pos).collect()))
        .collect();
    let evidence: BTreeMap<String, BTreeSet<usize>> =
        dev.iter().map(|s| (s.id.clone(), s.supporting_fact_positions())).collect();
    let f1: BTreeMap<String, f64> = scores.per_sample.iter().map(|s| (s.id.clone(), s.answer.f1)).collect();
    let views = join_views(&mem, &evidence, &f1)?;

    let coverage = coverage_table(&views);
    let pairs: Vec<(usize, f64)> = views.iter().map(|v| (v.memory_positions.len(), v.answer_f1)).collect();
    let curve = f1_vs_memory_curve(&pairs, window)?;
    let composition = memory_composition_scatter(&views);

    // the final epoch's memories come from the profiles one sync earlier
    let last = records.iter().map(|r| r.epoch).max().unwrap_or(0);
    let at = profiles_at(&records, last.saturating_sub(1), &vocab)?;
    let mut profs = Vec::new();
    let mut mems = Vec::new();
    for v in &views {
        let p = at
            .get(&v.id)
            .ok_or_else(|| Error::IdMismatch(format!("no profile for `{}`", v.id)))?;
        profs.push(p.clone());
        mems.push(v.memory_positions.clone());
    }
    let rare = rare_token_stats(&profs, &mems, rare_threshold)?;

    write_atomic(&out.join("coverage.csv"), coverage_csv(&coverage).as_bytes())?;
    write_atomic(&out.join("f1_vs_memory.csv"), curve_csv(&curve).as_bytes())?;
    write_atomic(&out.join("composition.csv"), composition_csv(&composition).as_bytes())?;
    write_atomic(&out.join("rare_tokens.csv"), rare_stats_csv(&rare).as_bytes())?;
    write_json(
        &out.join("analysis.json"),
        &serde_json::json!({
            "window": window,
            "rare_threshold": rare_threshold,
            "profile_epoch": last.saturating_sub(1),
            "coverage": coverage,
            "curve": curve,
            "rare": rare,
        }),
    )?;
    let mut m = Manifest::new("analyze-memory", cfg, None);
    m.extra = serde_json::json!({ "window": window, "rare_threshold": rare_threshold });
    m.write(out)
}

pub fn heatmap(cfg: &RunConfig, args: &HeatmapArgs, data_dir: &Path) -> Result<PathBuf> {
    let out = &cfg.out;
    let mode = HeatmapMode::parse(&args.mode)?;
    let vocab = Vocabulary::load(&out.join("vocab.json"))
        .or_else(|_| Vocabulary::load(&data_dir.join("vocab.json")))?;
    let records: Vec<ProfileDumpRecord> = read_jsonl(&out.join("dev_profiles.jsonl"))?;
    let id = match &args.sample {
        Some(id) => id.clone(),
        None => records
            .first()
            .map(|r| r.sample_id.clone())
            .ok_or_else(|| Error::InvalidConfig("profile dump is empty".into()))?,
    };
    let find = |epoch: usize| {
        records
            .iter()
            .find(|r| r.sample_id == id && r.epoch == epoch)
            .ok_or_else(|| Error::InvalidConfig(format!("no profile for `{id}` at epoch {epoch}")))
            .and_then(|r| r.to_profile(&vocab))
    };
    let after = find(args.epoch)?;
    let before = match mode {
        HeatmapMode::EpochDelta => Some(find(args.before_epoch)?),
        HeatmapMode::Absolute => None,
    };
    let rows = export_heatmap(&after, before.as_ref(), &vocab, mode)?;
    let name = match mode {
        HeatmapMode::Absolute => format!("heatmap_{id}_e{}.tsv", args.epoch),
        HeatmapMode::EpochDelta => format!("heatmap_{id}_e{}-e{}.tsv", args.epoch, args.before_epoch),
    };
    let path = out.join(name);
    write_atomic(&path, heatmap_tsv(&rows).as_bytes())?;
    let mut m = Manifest::new("export-heatmap", cfg, None);
    m.extra = serde_json::json!({ "sample": id, "mode": args.mode, "epoch": args.epoch, "before_epoch": args.before_epoch });
    m.write(out)?;
    Ok(path)
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(c) => {
            let cfg = c.resolve()?;
            let d = gen_data(&cfg)?;
            eprintln!("wrote {} train / {} dev samples to {}", d.train.len(), d.dev.len(), cfg.out.display());
        }
        Command::PretrainLm(a) => {
            let cfg = a.common.resolve()?;
            pretrain_lm(&cfg, &a.data_dir(&cfg))?;
        }
        Command::Train(a) => {
            let cfg = a.data.common.resolve()?;
            let ckpt = a.checkpoint.clone().unwrap_or_else(|| cfg.out.join("stage1.ckpt"));
            let r = train(&cfg, &a.data.data_dir(&cfg), &ckpt)?;
            println!("answer_f1 {:.4} supporting_f1 {:.4} joint_f1 {:.4}", r.answer_f1, r.supporting_f1, r.joint_f1);
        }
        Command::Eval(a) => {
            let cfg = a.data.common.resolve()?;
            let preds = a.predictions.clone().unwrap_or_else(|| cfg.out.join("dev_predictions.jsonl"));
            let r = eval(&cfg, &a.data.data_dir(&cfg), &preds, a.normalize)?;
            println!("answer_f1 {:.4} supporting_f1 {:.4} joint_f1 {:.4}", r.answer_f1, r.supporting_f1, r.joint_f1);
        }
        Command::AnalyzeMemory(a) => {
            let cfg = a.data.common.resolve()?;
            analyze_memory(&cfg, &a.data.data_dir(&cfg), a.window, a.rare_threshold)?;
        }
        Command::ExportHeatmap(a) => {
            let cfg = a.data.common.resolve()?;
            let p = heatmap(&cfg, &a, &a.data.data_dir(&cfg))?;
            eprintln!("wrote {}", p.display());
        }
    }
    Ok(())
}

/// Parses `args` and runs; returns the process exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
