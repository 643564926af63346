//! Memory and entropy analyses: coverage of supporting facts, F1 against
//! memory size, distribution statistics, rare tokens and heatmaps.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evalmetrics::{mean_std, MeanStd};
use crate::memory::EntropyProfile;
use crate::text::{TokenId, Vocabulary};

/// Per-sample inputs shared by the coverage and composition tables.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleMemoryView {
    pub id: String,
    pub memory_positions: BTreeSet<usize>,
    pub evidence_positions: BTreeSet<usize>,
    pub answer_f1: f64,
}

impl SampleMemoryView {
    /// Percentage of evidence positions stored in memory; `None` without evidence.
    pub fn coverage(&self) -> Option<f64> {
        if self.evidence_positions.is_empty() {
            return None;
        }
        let hit = self.memory_positions.intersection(&self.evidence_positions).count();
        Some(100.0 * hit as f64 / self.evidence_positions.len() as f64)
    }

    /// Exact answers count as correct.
    pub fn correct(&self) -> bool {
        self.answer_f1 >= 1.0
    }
}

/// Joins memories, evidence and per-sample answer F1 by id.
pub fn join_views(
    memories: &BTreeMap<String, BTreeSet<usize>>,
    evidence: &BTreeMap<String, BTreeSet<usize>>,
    answer_f1: &BTreeMap<String, f64>,
) -> Result<Vec<SampleMemoryView>> {
    if memories.len() != evidence.len() || memories.len() != answer_f1.len() {
        return Err(Error::IdMismatch(format!(
            "{} memories, {} evidence sets, {} scores",
            memories.len(),
            evidence.len(),
            answer_f1.len()
        )));
    }
    evidence
        .iter()
        .map(|(id, ev)| {
            let mem = memories
                .get(id)
                .ok_or_else(|| Error::IdMismatch(format!("no memory for `{id}`")))?;
            let f1 = answer_f1
                .get(id)
                .ok_or_else(|| Error::IdMismatch(format!("no score for `{id}`")))?;
            Ok(SampleMemoryView {
                id: id.clone(),
                memory_positions: mem.clone(),
                evidence_positions: ev.clone(),
                answer_f1: *f1,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryCoverageRow {
    /// `all`, `+ans` or `-ans`.
    pub group: String,
    pub n: usize,
    pub memory_size: MeanStd,
    pub coverage_percent: MeanStd,
}

/// Memory size and supporting-fact coverage over all samples and split by
/// answer correctness. Samples without evidence tokens are left out of the
/// coverage column only.
pub fn coverage_table(views: &[SampleMemoryView]) -> Vec<MemoryCoverageRow> {
    let row = |group: &str, keep: &dyn Fn(&SampleMemoryView) -> bool| {
        let sel: Vec<&SampleMemoryView> = views.iter().filter(|v| keep(v)).collect();
        MemoryCoverageRow {
            group: group.to_owned(),
            n: sel.len(),
            memory_size: mean_std(&sel.iter().map(|v| v.memory_positions.len() as f64).collect::<Vec<_>>()),
            coverage_percent: mean_std(&sel.iter().filter_map(|v| v.coverage()).collect::<Vec<_>>()),
        }
    };
    vec![
        row("all", &|_| true),
        row("+ans", &|v| v.correct()),
        row("-ans", &|v| !v.correct()),
    ]
}

pub fn coverage_csv(rows: &[MemoryCoverageRow]) -> String {
    let mut s = String::from("group,n,memory_size_mean,memory_size_std,coverage_mean,coverage_std\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{:.6},{:.6},{:.6},{:.6}",
            r.group, r.n, r.memory_size.mean, r.memory_size.std, r.coverage_percent.mean, r.coverage_percent.std
        );
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    /// Mean memory size inside the window.
    pub memory_size: f64,
    pub answer_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F1Curve {
    pub window: usize,
    pub overall_mean: f64,
    pub points: Vec<CurvePoint>,
}

pub const DEFAULT_WINDOW: usize = 25;

/// Sorts `(memory size, answer F1)` pairs by size (stable) and averages
/// every full window of `window` consecutive samples.
pub fn f1_vs_memory_curve(samples: &[(usize, f64)], window: usize) -> Result<F1Curve> {
    if window == 0 {
        return Err(Error::InvalidConfig("window must be at least 1".into()));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by_key(|&(m, _)| m);
    let overall_mean = if sorted.is_empty() {
        0.0
    } else {
        sorted.iter().map(|&(_, f)| f).sum::<f64>() / sorted.len() as f64
    };
    let points = if sorted.len() < window {
        Vec::new()
    } else {
        sorted
            .windows(window)
            .map(|w| CurvePoint {
                memory_size: w.iter().map(|&(m, _)| m as f64).sum::<f64>() / window as f64,
                answer_f1: w.iter().map(|&(_, f)| f).sum::<f64>() / window as f64,
            })
            .collect()
    };
    Ok(F1Curve {
        window,
        overall_mean,
        points,
    })
}

pub fn curve_csv(curve: &F1Curve) -> String {
    let mut s = format!("# window={} overall_mean={:.9}\nmemory_size,answer_f1_ma\n", curve.window, curve.overall_mean);
    for p in &curve.points {
        let _ = writeln!(s, "{:.6},{:.9}", p.memory_size, p.answer_f1);
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositionRow {
    pub id: String,
    pub memory_size: usize,
    pub evidence_len: usize,
    pub evidence_in_memory: usize,
    /// Evidence tokens in memory over memory size; `None` for empty memory.
    pub share_of_memory: Option<f64>,
    /// Evidence tokens in memory over evidence length; `None` without evidence.
    pub share_of_evidence: Option<f64>,
    pub answer_f1: f64,
}

pub fn memory_composition_scatter(views: &[SampleMemoryView]) -> Vec<CompositionRow> {
    views
        .iter()
        .map(|v| {
            let hit = v.memory_positions.intersection(&v.evidence_positions).count();
            let m = v.memory_positions.len();
            let e = v.evidence_positions.len();
            CompositionRow {
                id: v.id.clone(),
                memory_size: m,
                evidence_len: e,
                evidence_in_memory: hit,
                share_of_memory: (m > 0).then(|| hit as f64 / m as f64),
                share_of_evidence: (e > 0).then(|| hit as f64 / e as f64),
                answer_f1: v.answer_f1,
            }
        })
        .collect()
}

pub fn composition_csv(rows: &[CompositionRow]) -> String {
    let opt = |x: Option<f64>| x.map_or("NA".to_owned(), |v| format!("{v:.9}"));
    let mut s = String::from("id,memory_size,evidence_len,evidence_in_memory,share_of_memory,share_of_evidence,answer_f1,flag\n");
    for r in rows {
        let flag = match (r.memory_size, r.evidence_len) {
            (0, 0) => "empty_memory;no_evidence",
            (0, _) => "empty_memory",
            (_, 0) => "no_evidence",
            _ => "",
        };
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{:.9},{}",
            r.id,
            r.memory_size,
            r.evidence_len,
            r.evidence_in_memory,
            opt(r.share_of_memory),
            opt(r.share_of_evidence),
            r.answer_f1,
            flag
        );
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DistributionStats {
    pub n: usize,
    pub min: f64,
    pub mean: f64,
    pub median: f64,
    /// Midpoint of the fullest of 50 equal-width bins.
    pub mode: f64,
    pub max: f64,
    /// Fisher-Pearson coefficient m3 / m2^1.5.
    pub skewness: f64,
    /// Fisher (excess) kurtosis m4 / m2^2 - 3.
    pub kurtosis: f64,
}

pub const MODE_BINS: usize = 50;

impl DistributionStats {
    /// `None` for an empty sample. Skewness and kurtosis are NaN for a
    /// constant sample.
    pub fn of(xs: &[f64]) -> Option<Self> {
        if xs.is_empty() {
            return None;
        }
        let n = xs.len();
        let mut sorted = xs.to_vec();
        sorted.sort_by(f64::total_cmp);
        let (min, max) = (sorted[0], sorted[n - 1]);
        let mean = xs.iter().sum::<f64>() / n as f64;
        let median = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
        };
        let moment = |p: i32| xs.iter().map(|x| (x - mean).powi(p)).sum::<f64>() / n as f64;
        let (m2, m3, m4) = (moment(2), moment(3), moment(4));
        let (skewness, kurtosis) = if max > min && m2 > 0.0 {
            (m3 / m2.powf(1.5), m4 / (m2 * m2) - 3.0)
        } else {
            (f64::NAN, f64::NAN)
        };
        let mode = if max > min {
            let width = (max - min) / MODE_BINS as f64;
            let mut counts = [0usize; MODE_BINS];
            for &x in xs {
                let b = (((x - min) / width) as usize).min(MODE_BINS - 1);
                counts[b] += 1;
            }
            let best = (0..MODE_BINS).max_by_key(|&b| (counts[b], std::cmp::Reverse(b))).unwrap();
            min + (best as f64 + 0.5) * width
        } else {
            min
        };
        Some(Self {
            n,
            min,
            mean,
            median,
            mode,
            max,
            skewness,
            kurtosis,
        })
    }

    fn fields(&self) -> [f64; 7] {
        [self.min, self.mean, self.median, self.mode, self.max, self.skewness, self.kurtosis]
    }

    /// Field-wise mean, skipping non-finite values per field.
    pub fn average(all: &[DistributionStats]) -> Option<Self> {
        if all.is_empty() {
            return None;
        }
        let mut out = [0.0; 7];
        for (i, o) in out.iter_mut().enumerate() {
            let vals: Vec<f64> = all.iter().map(|s| s.fields()[i]).filter(|v| v.is_finite()).collect();
            *o = if vals.is_empty() {
                f64::NAN
            } else {
                vals.iter().sum::<f64>() / vals.len() as f64
            };
        }
        Some(Self {
            n: all.iter().map(|s| s.n).sum::<usize>() / all.len(),
            min: out[0],
            mean: out[1],
            median: out[2],
            mode: out[3],
            max: out[4],
            skewness: out[5],
            kurtosis: out[6],
        })
    }
}

pub const RARE_THRESHOLD: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RareTokenReport {
    pub threshold: usize,
    /// Per-document statistics averaged over documents.
    pub rare: Option<DistributionStats>,
    pub overall: Option<DistributionStats>,
    /// Share of memory tokens that are rare in their document, in percent.
    pub rare_memory_percent: MeanStd,
}

/// Token ids occurring fewer than `threshold` times in `profile`'s document.
pub fn rare_ids(profile: &EntropyProfile, threshold: usize) -> BTreeSet<TokenId> {
    let mut counts: HashMap<TokenId, usize> = HashMap::new();
    for e in &profile.entries {
        *counts.entry(e.token_id).or_default() += 1;
    }
    counts.into_iter().filter(|&(_, c)| c < threshold).map(|(t, _)| t).collect()
}

/// Rare versus overall entropy distributions. `memories` holds the memory
/// positions of each document, aligned with `profiles`.
pub fn rare_token_stats(
    profiles: &[EntropyProfile],
    memories: &[BTreeSet<usize>],
    threshold: usize,
) -> Result<RareTokenReport> {
    if profiles.len() != memories.len() {
        return Err(Error::LengthMismatch(format!(
            "{} profiles, {} memories",
            profiles.len(),
            memories.len()
        )));
    }
    let mut rare = Vec::new();
    let mut overall = Vec::new();
    let mut shares = Vec::new();
    for (p, mem) in profiles.iter().zip(memories) {
        let ids = rare_ids(p, threshold);
        let all: Vec<f64> = p.entropies();
        let r: Vec<f64> = p
            .entries
            .iter()
            .filter(|e| ids.contains(&e.token_id))
            .map(|e| e.entropy)
            .collect();
        overall.extend(DistributionStats::of(&all));
        rare.extend(DistributionStats::of(&r));
        if !mem.is_empty() {
            let n_rare = mem
                .iter()
                .filter(|&&pos| p.entries.get(pos).is_some_and(|e| ids.contains(&e.token_id)))
                .count();
            shares.push(100.0 * n_rare as f64 / mem.len() as f64);
        }
    }
    Ok(RareTokenReport {
        threshold,
        rare: DistributionStats::average(&rare),
        overall: DistributionStats::average(&overall),
        rare_memory_percent: mean_std(&shares),
    })
}

pub fn rare_stats_csv(report: &RareTokenReport) -> String {
    let mut s = String::from("set,min,mean,median,mode,max,skewness,kurtosis\n");
    for (name, st) in [("rare", report.rare), ("overall", report.overall)] {
        if let Some(d) = st {
            let _ = writeln!(
                s,
                "{name},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9}",
                d.min, d.mean, d.median, d.mode, d.max, d.skewness, d.kurtosis
            );
        }
    }
    let _ = writeln!(
        s,
        "# rare_memory_percent={:.6} std={:.6} threshold={}",
        report.rare_memory_percent.mean, report.rare_memory_percent.std, report.threshold
    );
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeatmapMode {
    Absolute,
    EpochDelta,
}

impl HeatmapMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "absolute" => Ok(Self::Absolute),
            "epoch_delta" | "epoch-delta" | "delta" => Ok(Self::EpochDelta),
            other => Err(Error::InvalidConfig(format!("unknown heatmap mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapRow {
    pub token: String,
    pub position: usize,
    pub value: f64,
}

/// Absolute entropies of `after`, or `after - before` per position.
pub fn export_heatmap(
    after: &EntropyProfile,
    before: Option<&EntropyProfile>,
    vocab: &Vocabulary,
    mode: HeatmapMode,
) -> Result<Vec<HeatmapRow>> {
    let base: Option<&EntropyProfile> = match mode {
        HeatmapMode::Absolute => None,
        HeatmapMode::EpochDelta => {
            let b = before.ok_or_else(|| Error::InvalidConfig("delta mode needs two profiles".into()))?;
            if b.len() != after.len() {
                return Err(Error::LengthMismatch(format!(
                    "profiles of {} and {} tokens",
                    b.len(),
                    after.len()
                )));
            }
            Some(b)
        }
    };
    Ok(after
        .entries
        .iter()
        .enumerate()
        .map(|(i, e)| HeatmapRow {
            token: vocab.token(e.token_id).to_owned(),
            position: e.doc_position,
            value: match base {
                Some(b) => e.entropy - b.entries[i].entropy,
                None => e.entropy,
            },
        })
        .collect())
}

pub fn heatmap_tsv(rows: &[HeatmapRow]) -> String {
    let mut s = String::from("token\tposition\tvalue\n");
    for r in rows {
        let _ = writeln!(s, "{}\t{}\t{:.9e}", r.token, r.position, r.value);
    }
    s
}
