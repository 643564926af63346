//! Answer, supporting-evidence and joint F1.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nnet::DatasetProfile;
use crate::pipeline::encode::EncodedSample;
use crate::synthdata::{MhqaSample, QuestionType};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    fn perfect() -> Self {
        Self {
            precision: 1.0,
            recall: 1.0,
            f1: 1.0,
        }
    }

    fn from_counts(common: usize, n_pred: usize, n_gold: usize) -> Self {
        if n_pred == 0 && n_gold == 0 {
            return Self::perfect();
        }
        if n_pred == 0 || n_gold == 0 || common == 0 {
            return Self::default();
        }
        let precision = common as f64 / n_pred as f64;
        let recall = common as f64 / n_gold as f64;
        Self {
            precision,
            recall,
            // 2PR/(P+R) reduced to counts, rounded once
            f1: (2 * common) as f64 / (n_pred + n_gold) as f64,
        }
    }
}

/// SQuAD-style cleanup: lowercase, drop punctuation and articles.
pub fn normalize_answer(tokens: &[String]) -> Vec<String> {
    tokens
        .iter()
        .map(|t| {
            t.to_lowercase()
                .chars()
                .filter(|c| !c.is_ascii_punctuation())
                .collect::<String>()
        })
        .filter(|t| !t.is_empty() && !matches!(t.as_str(), "a" | "an" | "the"))
        .collect()
}

/// Token F1 over multisets.
pub fn answer_prf(pred: &[String], gold: &[String]) -> Prf {
    let mut counts: HashMap<&str, isize> = HashMap::new();
    for g in gold {
        *counts.entry(g.as_str()).or_default() += 1;
    }
    let mut common = 0;
    for p in pred {
        if let Some(c) = counts.get_mut(p.as_str()) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    Prf::from_counts(common, pred.len(), gold.len())
}

pub fn answer_f1(pred: &[String], gold: &[String]) -> f64 {
    answer_prf(pred, gold).f1
}

pub fn evidence_prf<T: Ord>(pred: &BTreeSet<T>, gold: &BTreeSet<T>) -> Prf {
    Prf::from_counts(pred.intersection(gold).count(), pred.len(), gold.len())
}

pub fn evidence_f1<T: Ord>(pred: &BTreeSet<T>, gold: &BTreeSet<T>) -> f64 {
    evidence_prf(pred, gold).f1
}

/// Harmonic mean of the products of precisions and of recalls.
pub fn joint_f1(answer: &Prf, evidence: &Prf) -> f64 {
    let p = answer.precision * evidence.precision;
    let r = answer.recall * evidence.recall;
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// One line of a prediction file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    #[serde(rename = "_id")]
    pub id: String,
    pub answer: String,
    pub answer_type: QuestionType,
    pub score: f64,
    /// Predicted supporting sentences as (paragraph, sentence).
    pub sp: Vec<(usize, usize)>,
    pub sp_paragraphs: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleScore {
    pub id: String,
    pub answer: Prf,
    pub supporting: Prf,
    pub joint_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub profile: DatasetProfile,
    pub n: usize,
    pub answer_f1: f64,
    pub supporting_f1: f64,
    pub joint_f1: f64,
    pub per_sample: Vec<SampleScore>,
}

/// Gold labels needed for scoring one sample.
#[derive(Debug, Clone)]
pub struct GoldRef<'a> {
    pub id: &'a str,
    pub answer: Vec<String>,
    pub paragraphs: &'a BTreeSet<usize>,
    pub sentences: &'a BTreeSet<(usize, usize)>,
}

impl<'a> From<&'a MhqaSample> for GoldRef<'a> {
    fn from(s: &'a MhqaSample) -> Self {
        Self {
            id: &s.id,
            answer: s.answer_tokens(),
            paragraphs: &s.supporting_paragraphs,
            sentences: &s.supporting_sentences,
        }
    }
}

impl<'a> From<&'a EncodedSample> for GoldRef<'a> {
    fn from(s: &'a EncodedSample) -> Self {
        Self {
            id: &s.id,
            answer: s.answer_words.clone(),
            paragraphs: &s.supporting_paragraphs,
            sentences: &s.supporting_sentences,
        }
    }
}

/// Scores predictions against gold samples matched by id. Evidence is
/// sentence-level except for the MuSiQue-style profile (paragraphs).
pub fn evaluate(
    gold: &[MhqaSample],
    preds: &[PredictionRecord],
    profile: DatasetProfile,
    normalize: bool,
) -> Result<ScoreReport> {
    evaluate_refs(gold.iter().map(GoldRef::from), preds, profile, normalize)
}

pub fn evaluate_encoded(gold: &[EncodedSample], preds: &[PredictionRecord], profile: DatasetProfile) -> Result<ScoreReport> {
    evaluate_refs(gold.iter().map(GoldRef::from), preds, profile, false)
}

pub fn evaluate_refs<'a>(
    gold: impl IntoIterator<Item = GoldRef<'a>>,
    preds: &[PredictionRecord],
    profile: DatasetProfile,
    normalize: bool,
) -> Result<ScoreReport> {
    let by_id: HashMap<&str, &PredictionRecord> = preds.iter().map(|p| (p.id.as_str(), p)).collect();
    if by_id.len() != preds.len() {
        return Err(Error::IdMismatch("duplicate prediction ids".into()));
    }
    let mut per_sample = Vec::new();
    for g in gold {
        let p = by_id
            .get(g.id)
            .ok_or_else(|| Error::IdMismatch(format!("no prediction for `{}`", g.id)))?;
        let pred_words: Vec<String> = p.answer.split_whitespace().map(str::to_owned).collect();
        let answer = if normalize {
            answer_prf(&normalize_answer(&pred_words), &normalize_answer(&g.answer))
        } else {
            answer_prf(&pred_words, &g.answer)
        };
        let supporting = if profile.is_msq() {
            let pred: BTreeSet<usize> = p.sp_paragraphs.iter().copied().collect();
            evidence_prf(&pred, g.paragraphs)
        } else {
            let pred: BTreeSet<(usize, usize)> = p.sp.iter().copied().collect();
            evidence_prf(&pred, g.sentences)
        };
        per_sample.push(SampleScore {
            id: g.id.to_owned(),
            answer,
            supporting,
            joint_f1: joint_f1(&answer, &supporting),
        });
    }
    if per_sample.len() != preds.len() {
        return Err(Error::IdMismatch("predictions for unknown sample ids".into()));
    }
    let n = per_sample.len();
    let mean = |f: &dyn Fn(&SampleScore) -> f64| {
        if n == 0 {
            0.0
        } else {
            per_sample.iter().map(f).sum::<f64>() / n as f64
        }
    };
    Ok(ScoreReport {
        profile,
        n,
        answer_f1: mean(&|s| s.answer.f1),
        supporting_f1: mean(&|s| s.supporting.f1),
        joint_f1: mean(&|s| s.joint_f1),
        per_sample,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

/// Mean and sample standard deviation.
pub fn mean_std(xs: &[f64]) -> MeanStd {
    if xs.is_empty() {
        return MeanStd { mean: 0.0, std: 0.0 };
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let std = if xs.len() > 1 {
        (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    MeanStd { mean, std }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub answer_f1: MeanStd,
    pub supporting_f1: MeanStd,
    pub joint_f1: MeanStd,
}

pub fn summarize_runs(reports: &[ScoreReport]) -> RunSummary {
    let col = |f: fn(&ScoreReport) -> f64| mean_std(&reports.iter().map(f).collect::<Vec<_>>());
    RunSummary {
        answer_f1: col(|r| r.answer_f1),
        supporting_f1: col(|r| r.supporting_f1),
        joint_f1: col(|r| r.joint_f1),
    }
}
