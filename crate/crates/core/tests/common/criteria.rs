//! One check per acceptance criterion. Each returns a short summary on
//! success and a description of the first violation on failure.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::process::Command;

use memqa::analysis::{
    coverage_table, export_heatmap, f1_vs_memory_curve, DistributionStats, HeatmapMode, SampleMemoryView,
};
use memqa::config::RunConfig;
use memqa::evalmetrics::{answer_prf, evidence_prf, joint_f1, MeanStd};
use memqa::experiment::{pretrain_stage1, train, Dataset, EncodedDataset, Manifest};
use memqa::memory::{populate_memory, EntropyProfile, MemoryPolicy, PolicyKind, ProfileEntry};
use memqa::nnet::loss::or_ce_span_loss;
use memqa::nnet::{token_entropy, ModelState};
use memqa::pipeline::{corpus_vocabulary, segment_document, EncodedSample, SegmentConfig};
use memqa::text::Vocabulary;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use super::*;

pub type Check = std::result::Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

// ---------------------------------------------------------------- 1

pub fn entropy_bounds() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..10_000 {
        let n = rng.gen_range(2..400);
        let scale = [0.1, 1.0, 10.0, 60.0][rng.gen_range(0..4)];
        let row: Vec<f64> = (0..n).map(|_| rng.gen_range(-scale..scale)).collect();
        let h = token_entropy(&row, true);
        let bound = (n as f64).ln() / n as f64;
        ensure!(h >= 0.0 && h <= bound + 1e-9, "H = {h} outside [0, {bound}] for n = {n}");
        worst = worst.max(h - bound);
    }
    for n in [2usize, 10, 245, 1000] {
        let h = token_entropy(&vec![0.37; n], true);
        let want = (n as f64).ln() / n as f64;
        ensure!((h - want).abs() < 1e-9, "uniform row n={n}: {h} vs {want}");
    }
    let p = [0.7f64, 0.2, 0.1];
    let logits: Vec<f64> = p.iter().map(|x| x.ln() + 3.0).collect();
    let oracle = -(p[0] * p[0].ln() + p[1] * p[1].ln() + p[2] * p[2].ln()) / 3.0;
    let h = token_entropy(&logits, true);
    ensure!((h - oracle).abs() < 1e-9, "(0.7,0.2,0.1): {h} vs {oracle}");
    Ok(format!("10000 rows in bounds (max H - bound {worst:.3e}); uniform and hand rows match; hand H = {h:.12}"))
}

// ---------------------------------------------------------------- 2

fn random_profile(rng: &mut ChaCha8Rng, thetas: &[f64]) -> EntropyProfile {
    let len = rng.gen_range(1..300);
    let grid = [0.0, 0.05, 0.1, 0.25, 0.3, 0.5];
    EntropyProfile {
        entries: (0..len)
            .map(|p| {
                let entropy = match rng.gen_range(0..10) {
                    0 => thetas[rng.gen_range(0..thetas.len())],
                    1 | 2 => grid[rng.gen_range(0..grid.len())],
                    _ => rng.gen_range(0.0..0.6),
                };
                ProfileEntry {
                    doc_position: p,
                    token_id: rng.gen_range(0..50),
                    entropy,
                    eligible: rng.gen_bool(0.8),
                }
            })
            .collect(),
    }
}

/// Sort/filter reference selection of memory positions.
pub fn policy_oracle(profile: &EntropyProfile, kind: PolicyKind, theta: f64, percentile: f64, k: usize) -> BTreeSet<usize> {
    let el: Vec<(usize, f64)> = profile
        .entries
        .iter()
        .filter(|e| e.eligible)
        .map(|e| (e.doc_position, e.entropy))
        .collect();
    let low = |th: f64| {
        let mut c: Vec<(usize, f64)> = el.iter().copied().filter(|&(_, h)| h < th).collect();
        if c.len() > k {
            c.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
            c.truncate(k);
        }
        c.into_iter().map(|(p, _)| p).collect()
    };
    match kind {
        PolicyKind::HighestH => {
            let mut c = el.clone();
            c.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            c.into_iter().take(k).map(|(p, _)| p).collect()
        }
        PolicyKind::LowHFixed => low(theta),
        PolicyKind::LowHPercentile => {
            if el.is_empty() {
                return BTreeSet::new();
            }
            let mut hs: Vec<f64> = el.iter().map(|&(_, h)| h).collect();
            hs.sort_by(|a, b| a.partial_cmp(b).unwrap());
            // nearest rank in integer arithmetic; percentile is integral here
            let p = percentile as usize;
            let rank = ((p * hs.len()).div_ceil(100)).max(1);
            low(hs[rank - 1])
        }
        _ => unreachable!(),
    }
}

pub fn memory_policies() -> Check {
    let thetas = [0.2, 0.3, 0.45];
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut cases: Vec<(PolicyKind, f64)> = vec![(PolicyKind::HighestH, 0.3)];
    cases.extend(thetas.iter().map(|&t| (PolicyKind::LowHFixed, t)));
    cases.push((PolicyKind::LowHPercentile, 0.3));
    let mut boundary = 0usize;
    for &(kind, theta) in &cases {
        for i in 0..1000 {
            let profile = random_profile(&mut rng, &thetas);
            let k = rng.gen_range(1..64);
            let policy = MemoryPolicy {
                kind,
                theta,
                percentile: 5.0,
                k,
                seed: 0,
            };
            let got: BTreeSet<usize> = populate_memory(&profile, &policy).map_err(|e| e.to_string())?.positions().into_iter().collect();
            let want = policy_oracle(&profile, kind, theta, 5.0, k);
            ensure!(got == want, "{kind} theta={theta} case {i}: got {got:?}, oracle {want:?}");
            if kind == PolicyKind::LowHFixed {
                boundary += profile.entries.iter().filter(|e| e.eligible && e.entropy == theta).count();
                ensure!(
                    got.iter().all(|&p| profile.entries[p].entropy < theta),
                    "{kind} theta={theta} case {i}: a token with H >= theta was stored"
                );
            }
        }
    }
    Ok(format!(
        "5 policy settings x 1000 profiles equal the oracle; {boundary} eligible tokens sat exactly on theta and none were stored"
    ))
}

// ---------------------------------------------------------------- 3

pub fn gradients() -> Check {
    let mut lines = Vec::new();
    let runs: [(&str, Case, u64, &[&str]); 2] = [
        ("hp loss", hotpot_case(), 21, &["lm_head.w", "lm_head.b"]),
        (
            "msq loss",
            musique_case(),
            22,
            &["lm_head.w", "lm_head.b", "qtype.w", "qtype.b", "sent.w1", "sent.b1", "sent.w2", "sent.b2"],
        ),
    ];
    for (name, case, seed, silent) in runs {
        ensure!(case.weights.qtype == 10.0 || name != "hp loss", "hp case must use alpha_qtype = 10");
        let state = ModelState::new(gradcheck_config(), seed).map_err(|e| e.to_string())?;
        let g = case.analytic(&state);
        let report = finite_difference_errors(&state, &g, 1e-5, |s| case.loss(s));
        lines.push(summarize(name, &report, silent)?);
    }
    let state = ModelState::new(gradcheck_config(), 23).map_err(|e| e.to_string())?;
    let ids = vec![30, 5, 38, 7, 8, 38, 10, 11, 39];
    let (pos, tgt) = ([2, 5], [6, 9]);
    let g = mlm_analytic(&state, &ids, &pos, &tgt);
    let report = finite_difference_errors(&state, &g, 1e-5, |s| mlm_loss(s, &ids, &pos, &tgt));
    let heads = [
        "qtype.w", "qtype.b", "span.w", "span.b", "para.w1", "para.b1", "para.w2", "para.b2", "sent.w1", "sent.b1",
        "sent.w2", "sent.b2",
    ];
    lines.push(summarize("masked lm", &report, &heads)?);
    Ok(lines.join("; "))
}

fn summarize(name: &str, report: &[(String, f64, f64)], silent: &[&str]) -> Check {
    let mut worst = (String::new(), 0.0f64);
    let mut checked = 0;
    for (group, rel, norm) in report {
        if silent.contains(&group.as_str()) {
            ensure!(*norm == 0.0, "{name}: {group} should get no gradient, |g| = {norm:e}");
            continue;
        }
        ensure!(*rel < 1e-4, "{name}: {group} relative error {rel:e}");
        checked += 1;
        if *rel > worst.1 {
            worst = (group.clone(), *rel);
        }
    }
    Ok(format!("{name}: {checked} groups, worst {} {:.1e}", worst.0, worst.1))
}

// ---------------------------------------------------------------- 4

pub fn or_ce() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let instance = |rng: &mut ChaCha8Rng| {
        let len = rng.gen_range(4..30);
        let a = rng.gen_range(0..len - 1);
        let b = rng.gen_range(a + 1..=len);
        let start: Vec<f64> = (0..len).map(|_| rng.gen_range(-4.0..4.0)).collect();
        let end: Vec<f64> = (0..len).map(|_| rng.gen_range(-4.0..4.0)).collect();
        (start, end, a..b)
    };
    let valid = |r: &std::ops::Range<usize>| {
        let mut v = Vec::new();
        for i in r.clone() {
            for j in i..r.end {
                v.push((i, j));
            }
        }
        v
    };
    let mut worst_single = 0.0f64;
    for c in 0..100 {
        let (s, e, region) = instance(&mut rng);
        let spans = valid(&region);
        let g = spans[rng.gen_range(0..spans.len())];
        // softmax cross-entropy over the flattened span scores
        let scores: Vec<f64> = spans.iter().map(|&(i, j)| s[i] + e[j]).collect();
        let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + scores.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
        let joint_ce = lse - (s[g.0] + e[g.1]);
        let (loss, _, _) = or_ce_span_loss(&s, &e, &[g], region).map_err(|e| e.to_string())?;
        let d = (loss - joint_ce).abs();
        ensure!(d < 1e-9, "single-span case {c}: or_CE {loss} vs joint CE {joint_ce}");
        worst_single = worst_single.max(d);
    }
    let mut worst_multi = 0.0f64;
    for c in 0..100 {
        let (s, e, region) = instance(&mut rng);
        let spans = valid(&region);
        let n_gold = rng.gen_range(2..=spans.len().clamp(2, 5));
        let gold: Vec<(usize, usize)> = (0..n_gold).map(|_| spans[rng.gen_range(0..spans.len())]).collect();
        let distinct: BTreeSet<(usize, usize)> = gold.iter().copied().collect();
        let num: f64 = distinct.iter().map(|&(i, j)| (s[i] + e[j]).exp()).sum();
        let den: f64 = spans.iter().map(|&(i, j)| (s[i] + e[j]).exp()).sum();
        let oracle = -(num / den).ln();
        let (loss, _, _) = or_ce_span_loss(&s, &e, &gold, region).map_err(|e| e.to_string())?;
        let d = (loss - oracle).abs();
        ensure!(d < 1e-7, "multi-span case {c}: or_CE {loss} vs enumeration {oracle}");
        worst_multi = worst_multi.max(d);
    }
    Ok(format!("single-span max diff {worst_single:.1e}; multi-span max diff {worst_multi:.1e}"))
}

// ---------------------------------------------------------------- 5

pub fn segmentation() -> Check {
    let cfg = base_config();
    let data = Dataset::generate(&cfg).map_err(|e| e.to_string())?;
    let vocab = corpus_vocabulary(&data.all()).map_err(|e| e.to_string())?;
    let markers = vocab.markers();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut windows = 0;
    for d in 0..500 {
        let len = rng.gen_range(1..700);
        let doc: Vec<usize> = (0..len).map(|_| rng.gen_range(0..vocab.len())).collect();
        let max_seq_len = rng.gen_range(48..200);
        let q: Vec<usize> = (0..rng.gen_range(0..12)).map(|_| rng.gen_range(0..vocab.len())).collect();
        let with_q = rng.gen_bool(0.8);
        let prefix = 1 + if with_q { q.len() + 2 } else { 0 };
        let mem_max = max_seq_len - prefix - 21;
        let memory: Vec<usize> = (0..rng.gen_range(0..=mem_max.min(40))).map(|_| rng.gen_range(0..vocab.len())).collect();
        let seg = SegmentConfig { max_seq_len, overlap: 20 };
        let segs = segment_document(with_q.then_some(&q[..]), &memory, &doc, &seg, markers).map_err(|e| e.to_string())?;
        let mut stitched: Vec<usize> = Vec::new();
        for (i, s) in segs.iter().enumerate() {
            ensure!(s.ids.len() <= max_seq_len, "doc {d}: window {i} longer than {max_seq_len}");
            ensure!(s.memory_ids() == &memory[..], "doc {d}: window {i} lost its memory");
            if i > 0 {
                let prev = segs[i - 1].doc_range();
                ensure!(prev.end - s.doc_start == 20, "doc {d}: windows {} and {i} overlap by {}", i - 1, prev.end - s.doc_start);
            }
            let ctx = &s.ids[s.context.clone()];
            let skip = stitched.len() - s.doc_start;
            stitched.extend_from_slice(&ctx[skip..]);
        }
        ensure!(stitched == doc, "doc {d}: stitched context differs from the document");
        windows += segs.len();
    }

    // gold spans of generated samples under the training layout
    let seg = cfg.segment_config();
    let mut spans = 0;
    for s in data.all() {
        let enc = EncodedSample::encode(&s, &vocab).map_err(|e| e.to_string())?;
        let memory: Vec<usize> = enc.doc.iter().copied().filter(|&t| vocab.is_memory_eligible(t)).take(cfg.mem_cap).collect();
        let segs = segment_document(Some(&enc.question), &memory, &enc.doc, &seg, markers).map_err(|e| e.to_string())?;
        for &(a, b) in &enc.answer_spans {
            ensure!(
                segs.iter().any(|w| w.doc_range().contains(&a) && w.doc_range().contains(&b)),
                "{}: answer span ({a}, {b}) is cut by every window",
                enc.id
            );
            spans += 1;
        }
    }
    Ok(format!(
        "500 random documents ({windows} windows) stitch exactly with overlap 20; {spans} gold spans of {} samples whole in a window",
        data.train.len() + data.dev.len()
    ))
}

// ---------------------------------------------------------------- 6

pub fn small_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    for (k, v) in [
        ("n_train", "40"),
        ("n_dev", "10"),
        ("n_paragraphs", "6"),
        ("d_model", "32"),
        ("n_heads", "2"),
        ("d_ff", "64"),
        ("max_seq_len", "64"),
        ("mem_cap", "8"),
        ("mlm_steps", "30"),
        ("epochs", "3"),
    ] {
        cfg.set(k, v).unwrap();
    }
    cfg
}

pub fn two_stage_contract() -> Check {
    let cfg = small_config();
    let data = EncodedDataset::new(&Dataset::generate(&cfg).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let (pre, _) = pretrain_stage1(&data, &cfg).map_err(|e| e.to_string())?;
    let head = pre.params.lm_head_hash();
    let run = train(&data, &pre, &cfg, |_| {}).map_err(|e| e.to_string())?;
    ensure!(run.sync_log.len() == 3, "expected 3 syncs, got {}", run.sync_log.len());
    for s in &run.sync_log {
        ensure!(s.stage1_encoder == s.stage2_encoder, "epoch {}: stage-1 and stage-2 encoders differ", s.epoch);
        ensure!(s.stage1_lm_head == head, "epoch {}: LM head changed", s.epoch);
    }
    ensure!(run.stage1.params.lm_head_hash() == head, "final LM head changed");
    let distinct: BTreeSet<&String> = run.sync_log.iter().map(|s| &s.stage1_encoder).collect();
    ensure!(distinct.len() == 3, "stage-1 encoder did not move between epochs");

    let mut frozen = cfg.clone();
    frozen.set("ablation", "no-finetune").map_err(|e| e.to_string())?;
    let run2 = train(&data, &pre, &frozen, |_| {}).map_err(|e| e.to_string())?;
    let enc0 = pre.params.encoder_hash();
    for s in &run2.sync_log {
        ensure!(s.stage1_encoder == enc0, "no-finetune epoch {}: stage-1 encoder changed", s.epoch);
        ensure!(s.stage1_lm_head == head, "no-finetune epoch {}: LM head changed", s.epoch);
    }
    ensure!(run2.sync_log.last().map(|s| &s.stage2_encoder) != Some(&enc0), "stage 2 did not train");
    Ok(format!(
        "3 syncs: stage1 == stage2 encoder each epoch, LM head {} constant; no-finetune keeps stage 1 at {}",
        &head[..12],
        &enc0[..12]
    ))
}

// ---------------------------------------------------------------- 7 and 8

/// The synthetic 2-hop setup of the directional experiments.
pub fn base_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.set("n_train", "400").unwrap();
    cfg.set("n_dev", "100").unwrap();
    cfg
}

pub const SEEDS: [u64; 3] = [1, 2, 3];
pub const POLICIES: [&str; 3] = ["low_h", "none", "random"];

#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    /// distractor minus supporting entropy after epoch 1 and after the last epoch
    pub separation: (f64, f64),
    /// dev answer F1 at the last epoch, in `POLICIES` order
    pub answer_f1: [f64; 3],
    pub joint_f1: [f64; 3],
}

pub fn directional_runs(log: &mut impl FnMut(String)) -> std::result::Result<Vec<SeedRun>, String> {
    let mut out = Vec::new();
    for seed in SEEDS {
        let mut cfg = base_config();
        cfg.seed = seed;
        let raw = Dataset::generate(&cfg).map_err(|e| e.to_string())?;
        let data = EncodedDataset::new(&raw).map_err(|e| e.to_string())?;
        let (pre, _) = pretrain_stage1(&data, &cfg).map_err(|e| e.to_string())?;
        let mut answer_f1 = [0.0; 3];
        let mut joint = [0.0; 3];
        let mut separation = (0.0, 0.0);
        for (pi, policy) in POLICIES.iter().enumerate() {
            let mut c = cfg.clone();
            c.set("policy", policy).map_err(|e| e.to_string())?;
            let run = train(&data, &pre, &c, |_| {}).map_err(|e| e.to_string())?;
            let last = run.epochs.last().unwrap();
            answer_f1[pi] = last.dev_answer_f1;
            joint[pi] = last.dev_joint_f1;
            if pi == 0 {
                separation = (run.epochs[0].entropy.separation(), last.entropy.separation());
                let m = Manifest::new("acceptance", &c, Some(raw.hash().map_err(|e| e.to_string())?));
                log(format!(
                    "    manifest seed {seed}: {}",
                    serde_json::json!({"seeds": m.seeds, "dataset_hash": m.dataset_hash, "threads": m.threads})
                ));
            }
            let per_epoch: Vec<String> = run
                .epochs
                .iter()
                .map(|e| format!("e{} F1 {:.4} sep {:+.3e}", e.epoch, e.dev_answer_f1, e.entropy.separation()))
                .collect();
            log(format!("    seed {seed} {policy:>6}: {}", per_epoch.join(" | ")));
        }
        out.push(SeedRun {
            seed,
            separation,
            answer_f1,
            joint_f1: joint,
        });
    }
    Ok(out)
}

pub fn separation_direction(runs: &[SeedRun]) -> Check {
    let grown: Vec<String> = runs
        .iter()
        .map(|r| {
            format!(
                "seed {}: {:+.3e} -> {:+.3e} {}",
                r.seed,
                r.separation.0,
                r.separation.1,
                if r.separation.1 > r.separation.0 { "up" } else { "down" }
            )
        })
        .collect();
    let n = runs.iter().filter(|r| r.separation.1 > r.separation.0).count();
    let msg = format!("{n}/3 seeds grow ({})", grown.join(", "));
    if n >= 2 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

pub fn ablation_direction(runs: &[SeedRun]) -> Check {
    let mean = |i: usize| runs.iter().map(|r| r.answer_f1[i]).sum::<f64>() / runs.len() as f64;
    let (low, none, random) = (mean(0), mean(1), mean(2));
    let msg = format!("mean dev answer F1 low_h {low:.4}, none {none:.4}, random {random:.4} (slack 0.02 per link)");
    if low >= none - 0.02 && none >= random - 0.02 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

// ---------------------------------------------------------------- 9

#[derive(Deserialize)]
struct GoldenCase {
    name: String,
    pred: Vec<String>,
    gold: Vec<String>,
    pred_sp: Vec<(usize, usize)>,
    gold_sp: Vec<(usize, usize)>,
    answer: [String; 3],
    evidence: [String; 3],
    joint: [String; 3],
}

fn fraction(s: &str) -> f64 {
    let (n, d) = s.split_once('/').expect("fraction");
    n.parse::<f64>().unwrap() / d.parse::<f64>().unwrap()
}

pub fn metric_golden() -> Check {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/metrics_golden.jsonl");
    let text = std::fs::read_to_string(&path).map_err(|e| e.to_string())?;
    let mut n = 0;
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let c: GoldenCase = serde_json::from_str(line).map_err(|e| e.to_string())?;
        let a = answer_prf(&c.pred, &c.gold);
        let ps: BTreeSet<_> = c.pred_sp.iter().copied().collect();
        let gs: BTreeSet<_> = c.gold_sp.iter().copied().collect();
        let e = evidence_prf(&ps, &gs);
        for (what, got, want) in [("answer", a, &c.answer), ("evidence", e, &c.evidence)] {
            let want = [fraction(&want[0]), fraction(&want[1]), fraction(&want[2])];
            ensure!(
                [got.precision, got.recall, got.f1] == want,
                "{}: {what} P/R/F1 {:?} vs {:?}",
                c.name,
                [got.precision, got.recall, got.f1],
                want
            );
        }
        let j = joint_f1(&a, &e);
        let want = fraction(&c.joint[2]);
        // the precision and recall products are rounded before the harmonic mean
        ensure!((j - want).abs() <= 1e-15, "{}: joint {j} vs {want}", c.name);
        n += 1;
    }
    ensure!(n == 20, "expected 20 golden cases, found {n}");
    Ok("20 golden cases match (answer and evidence bit-exact, joint within 1e-15)".into())
}

// ---------------------------------------------------------------- 10

fn oracle_mean_std(xs: &[f64]) -> MeanStd {
    if xs.is_empty() {
        return MeanStd { mean: 0.0, std: 0.0 };
    }
    let mut s = 0.0;
    for x in xs {
        s += x;
    }
    let mean = s / xs.len() as f64;
    let mut ss = 0.0;
    for x in xs {
        ss += (x - mean) * (x - mean);
    }
    let std = if xs.len() > 1 { (ss / (xs.len() - 1) as f64).sqrt() } else { 0.0 };
    MeanStd { mean, std }
}

/// Skewness and excess kurtosis from shifted raw power sums.
pub fn oracle_moments(xs: &[f64]) -> (f64, f64) {
    let c = xs[0];
    let n = xs.len() as f64;
    let (mut s1, mut s2, mut s3, mut s4) = (0.0, 0.0, 0.0, 0.0);
    for &x in xs {
        let y = x - c;
        s1 += y;
        s2 += y * y;
        s3 += y * y * y;
        s4 += y * y * y * y;
    }
    let (r1, r2, r3, r4) = (s1 / n, s2 / n, s3 / n, s4 / n);
    let m2 = r2 - r1 * r1;
    let m3 = r3 - 3.0 * r1 * r2 + 2.0 * r1.powi(3);
    let m4 = r4 - 4.0 * r1 * r3 + 6.0 * r1 * r1 * r2 - 3.0 * r1.powi(4);
    (m3 / m2.powf(1.5), m4 / (m2 * m2) - 3.0)
}

pub fn analysis_oracles() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-9;

    // coverage
    for t in 0..50 {
        let views: Vec<SampleMemoryView> = (0..rng.gen_range(1..80))
            .map(|i| {
                let len = rng.gen_range(1..200);
                let pm = rng.gen_range(0.0..0.4);
                let pe = if rng.gen_bool(0.1) { 0.0 } else { rng.gen_range(0.0..0.3) };
                SampleMemoryView {
                    id: format!("s{i}"),
                    memory_positions: (0..len).filter(|_| rng.gen_bool(pm)).collect(),
                    evidence_positions: (0..len).filter(|_| rng.gen_bool(pe)).collect(),
                    answer_f1: if rng.gen_bool(0.4) { 1.0 } else { rng.gen_range(0.0..1.0) },
                }
            })
            .collect();
        let rows = coverage_table(&views);
        let groups: [(&str, fn(&SampleMemoryView) -> bool); 3] =
            [("all", |_| true), ("+ans", |v| v.answer_f1 == 1.0), ("-ans", |v| v.answer_f1 != 1.0)];
        for (row, (name, keep)) in rows.iter().zip(groups) {
            ensure!(row.group == name, "row order {} vs {name}", row.group);
            let sel: Vec<&SampleMemoryView> = views.iter().filter(|v| keep(v)).collect();
            let sizes: Vec<f64> = sel.iter().map(|v| v.memory_positions.len() as f64).collect();
            let mut cov = Vec::new();
            for v in &sel {
                let ev: Vec<usize> = v.evidence_positions.iter().copied().collect();
                if ev.is_empty() {
                    continue;
                }
                let hit = ev.iter().filter(|p| v.memory_positions.iter().any(|m| m == *p)).count();
                cov.push(100.0 * hit as f64 / ev.len() as f64);
            }
            let (s, c) = (oracle_mean_std(&sizes), oracle_mean_std(&cov));
            ensure!(row.n == sel.len(), "trial {t} {name}: n {} vs {}", row.n, sel.len());
            ensure!(
                close(row.memory_size.mean, s.mean) && close(row.memory_size.std, s.std),
                "trial {t} {name}: memory size {:?} vs {s:?}",
                row.memory_size
            );
            ensure!(
                close(row.coverage_percent.mean, c.mean) && close(row.coverage_percent.std, c.std),
                "trial {t} {name}: coverage {:?} vs {c:?}",
                row.coverage_percent
            );
        }
    }

    // moving average
    for t in 0..50 {
        let n = rng.gen_range(0..150);
        let pts: Vec<(usize, f64)> = (0..n).map(|_| (rng.gen_range(0..20), rng.gen_range(0.0..1.0))).collect();
        let w = rng.gen_range(1..30);
        let curve = f1_vs_memory_curve(&pts, w).map_err(|e| e.to_string())?;
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| pts[a].0.cmp(&pts[b].0).then(a.cmp(&b)));
        let expect = if n >= w { n - w + 1 } else { 0 };
        ensure!(curve.points.len() == expect, "trial {t}: {} points vs {expect}", curve.points.len());
        for (i, p) in curve.points.iter().enumerate() {
            let (mut m, mut f) = (0.0, 0.0);
            for &j in &order[i..i + w] {
                m += pts[j].0 as f64;
                f += pts[j].1;
            }
            ensure!(
                close(p.memory_size, m / w as f64) && close(p.answer_f1, f / w as f64),
                "trial {t} point {i}: ({}, {}) vs ({}, {})",
                p.memory_size,
                p.answer_f1,
                m / w as f64,
                f / w as f64
            );
        }
    }

    // skewness and kurtosis
    let fixed = DistributionStats::of(&[1.0, 1.0, 1.0, 10.0]).unwrap();
    ensure!(
        close(fixed.skewness, 2.0 / 3f64.sqrt()) && close(fixed.kurtosis, -2.0 / 3.0),
        "{{1,1,1,10}}: skew {} kurt {}",
        fixed.skewness,
        fixed.kurtosis
    );
    for t in 0..200 {
        let n = rng.gen_range(3..1000);
        let xs: Vec<f64> = match t % 3 {
            0 => (0..n).map(|_| rng.gen_range(0.0..1.0)).collect(),
            1 => (0..n).map(|_| rng.gen_range(0.0f64..1.0).powi(4) * 0.02).collect(),
            _ => (0..n).map(|_| -(rng.gen_range(1e-9f64..1.0)).ln()).collect(),
        };
        let d = DistributionStats::of(&xs).unwrap();
        let (s, k) = oracle_moments(&xs);
        if !s.is_finite() {
            continue;
        }
        ensure!(close(d.skewness, s) && close(d.kurtosis, k), "trial {t}: ({}, {}) vs ({s}, {k})", d.skewness, d.kurtosis);
    }

    // heatmap delta of identical profiles
    let vocab = Vocabulary::build(&["alpha beta gamma delta"], &[]).map_err(|e| e.to_string())?;
    let p = EntropyProfile {
        entries: (0..300)
            .map(|i| ProfileEntry {
                doc_position: i,
                token_id: rng.gen_range(0..vocab.len()),
                entropy: rng.gen_range(0.0..0.03),
                eligible: true,
            })
            .collect(),
    };
    let rows = export_heatmap(&p, Some(&p.clone()), &vocab, HeatmapMode::EpochDelta).map_err(|e| e.to_string())?;
    ensure!(rows.len() == 300 && rows.iter().all(|r| r.value == 0.0), "identical profiles gave a nonzero delta");
    Ok("coverage (50 tables), moving average (50 curves), moments (200 samples) within 1e-9; identical-profile delta all zero".into())
}

// ---------------------------------------------------------------- 11

fn memqa(args: &[&str]) -> std::result::Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_memqa"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("memqa {args:?} failed: {}", String::from_utf8_lossy(&out.stderr)))
    }
}

/// gen-data, pretrain-lm and train in `dir`, configured by `config`.
pub fn cli_run(dir: &Path, config: &Path) -> std::result::Result<Vec<u8>, String> {
    let d = dir.to_str().unwrap();
    let c = config.to_str().unwrap();
    for cmd in ["gen-data", "pretrain-lm", "train"] {
        memqa(&[cmd, "--config", c, "--out", d])?;
    }
    std::fs::read(dir.join("metrics.csv")).map_err(|e| e.to_string())
}

pub fn determinism() -> Check {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = small_config();
    let config = tmp.path().join("run.cfg");
    std::fs::write(&config, cfg.to_text()).map_err(|e| e.to_string())?;
    let a = cli_run(&tmp.path().join("a"), &config)?;
    let b = cli_run(&tmp.path().join("b"), &config)?;
    ensure!(a == b, "metrics.csv differs between two runs of one config");

    // a third run configured from the first run's train manifest
    let manifest: Manifest = serde_json::from_slice(
        &std::fs::read(tmp.path().join("a/manifest-train.json")).map_err(|e| e.to_string())?,
    )
    .map_err(|e| e.to_string())?;
    let replay = tmp.path().join("replay.cfg");
    std::fs::write(&replay, &manifest.config_text).map_err(|e| e.to_string())?;
    let c = cli_run(&tmp.path().join("c"), &replay)?;
    ensure!(a == c, "metrics.csv differs when replaying the manifest");
    let mut by_file = BTreeMap::new();
    for f in ["dev_predictions.jsonl", "sync_log.jsonl", "dev_memories.jsonl"] {
        let x = std::fs::read(tmp.path().join("a").join(f)).map_err(|e| e.to_string())?;
        let y = std::fs::read(tmp.path().join("b").join(f)).map_err(|e| e.to_string())?;
        by_file.insert(f, x == y);
    }
    ensure!(by_file.values().all(|&v| v), "run artifacts differ: {by_file:?}");
    Ok(format!("3 CLI executions ({} bytes of metrics.csv each) are byte-identical", a.len()))
}
