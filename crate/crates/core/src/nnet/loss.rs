//! Entropy, span losses and the multi-task objectives.

use std::ops::Range;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::forward::{OutputGrads, Outputs};
use crate::error::{Error, Result};

pub fn log_sum_exp(xs: impl IntoIterator<Item = f64>) -> f64 {
    let xs: Vec<f64> = xs.into_iter().collect();
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `-(1/n) sum_j p_j ln p_j` over the softmax of one logit row, where `n` is
/// the row length. With `normalize = false` the `1/n` factor is dropped.
pub fn token_entropy(logits: &[f64], normalize: bool) -> f64 {
    let n = logits.len();
    let lse = log_sum_exp(logits.iter().copied());
    let h: f64 = logits
        .iter()
        .map(|&z| {
            let lp = z - lse;
            let p = lp.exp();
            if p > 0.0 {
                -p * lp
            } else {
                0.0
            }
        })
        .sum();
    let h = h.max(0.0);
    if normalize {
        h / n as f64
    } else {
        h
    }
}

/// Cross-entropy of a softmax over `logits` against `target`; returns the
/// loss and its gradient with respect to the logits.
pub fn cross_entropy(logits: &[f64], target: usize) -> (f64, Vec<f64>) {
    let p = softmax(logits);
    let lse = log_sum_exp(logits.iter().copied());
    let loss = lse - logits[target];
    let mut g = p;
    g[target] -= 1.0;
    (loss, g)
}

/// Binary cross-entropy on a logit; returns loss and d loss / d logit.
pub fn bce_with_logit(z: f64, label: bool) -> (f64, f64) {
    let y = if label { 1.0 } else { 0.0 };
    let loss = z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
    (loss, sigmoid(z) - y)
}

/// Span loss marginalized over every gold occurrence:
/// `-log( sum_gold exp(s_i + e_j) / sum_valid exp(s_i + e_j) )`, where valid
/// spans are `i <= j` inside `region`. Returns the loss with gradients for
/// the start and end logits.
pub fn or_ce_span_loss(
    start: &[f64],
    end: &[f64],
    gold: &[(usize, usize)],
    region: Range<usize>,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    if gold.is_empty() {
        return Err(Error::InvalidLoss("gold span set is empty".into()));
    }
    if start.len() != end.len() || region.end > start.len() || region.is_empty() {
        return Err(Error::InvalidLoss("span region does not fit the logits".into()));
    }
    for &(s, e) in gold {
        if s > e || !region.contains(&s) || !region.contains(&e) {
            return Err(Error::InvalidLoss(format!(
                "gold span ({s}, {e}) is not a valid span in {region:?}"
            )));
        }
    }
    let mut gold: Vec<(usize, usize)> = gold.to_vec();
    gold.sort_unstable();
    gold.dedup();

    let mut scores = Vec::with_capacity(region.len() * (region.len() + 1) / 2);
    for i in region.clone() {
        for j in i..region.end {
            scores.push(start[i] + end[j]);
        }
    }
    let log_z = log_sum_exp(scores.iter().copied());
    let log_gold = log_sum_exp(gold.iter().map(|&(i, j)| start[i] + end[j]));
    let loss = (log_z - log_gold).max(0.0);

    let mut ds = vec![0.0; start.len()];
    let mut de = vec![0.0; end.len()];
    for i in region.clone() {
        for j in i..region.end {
            let p = (start[i] + end[j] - log_z).exp();
            ds[i] += p;
            de[j] += p;
        }
    }
    for &(i, j) in &gold {
        let q = (start[i] + end[j] - log_gold).exp();
        ds[i] -= q;
        de[j] -= q;
    }
    Ok((loss, ds, de))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetProfile {
    HpLike,
    #[serde(rename = "2w-like")]
    TwoWikiLike,
    MsqLike,
}

impl DatasetProfile {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "hp-like" | "hp" => Ok(Self::HpLike),
            "2w-like" | "2w" => Ok(Self::TwoWikiLike),
            "msq-like" | "msq" => Ok(Self::MsqLike),
            other => Err(Error::InvalidConfig(format!("unknown dataset profile `{other}`"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::HpLike => "hp-like",
            Self::TwoWikiLike => "2w-like",
            Self::MsqLike => "msq-like",
        }
    }

    /// Single span target, paragraph-level evidence only.
    pub fn is_msq(self) -> bool {
        self == Self::MsqLike
    }

    pub fn default_weights(self) -> LossWeights {
        match self {
            Self::HpLike => LossWeights {
                qtype: 10.0,
                span: 1.0,
                para: 1.0,
                sent: 1.0,
            },
            _ => LossWeights::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub qtype: f64,
    pub span: f64,
    pub para: f64,
    pub sent: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            qtype: 1.0,
            span: 1.0,
            para: 1.0,
            sent: 1.0,
        }
    }
}

/// Supervision for one segment, aligned with its marker positions.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SegmentTargets {
    /// Question-type class; `None` for the MuSiQue-style profile.
    pub qtype: Option<usize>,
    /// Gold answer spans wholly inside this segment (segment coordinates).
    pub spans: Vec<(usize, usize)>,
    /// Positions eligible to start or end a predicted span.
    pub context: Range<usize>,
    pub para_labels: Vec<bool>,
    pub sent_labels: Vec<bool>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub qtype: f64,
    pub span: f64,
    pub para: f64,
    pub sent: f64,
}

impl LossBreakdown {
    pub fn weighted_total(&self, w: &LossWeights) -> f64 {
        w.qtype * self.qtype + w.span * self.span + w.para * self.para + w.sent * self.sent
    }
}

fn mean_bce(logits: &[f64], labels: &[bool]) -> (f64, Vec<f64>) {
    if logits.is_empty() {
        return (0.0, Vec::new());
    }
    let n = logits.len() as f64;
    let mut total = 0.0;
    let grads = logits
        .iter()
        .zip(labels)
        .map(|(&z, &y)| {
            let (l, g) = bce_with_logit(z, y);
            total += l;
            g / n
        })
        .collect();
    (total / n, grads)
}

/// HotpotQA/2Wiki profile: `a1 CE_qtype + a2 orCE_span + a3 CE_para + a4 CE_sent`.
/// MuSiQue profile: `CE_span + BCE_para` with a single span target.
pub fn multitask_loss(
    out: &Outputs,
    targets: &SegmentTargets,
    weights: &LossWeights,
    profile: DatasetProfile,
) -> Result<(LossBreakdown, OutputGrads)> {
    let seq = out.start_logits.len();
    if targets.para_labels.len() != out.para_logits.len() {
        return Err(Error::InvalidLoss(format!(
            "{} paragraph labels for {} paragraph markers",
            targets.para_labels.len(),
            out.para_logits.len()
        )));
    }
    let mut grads = OutputGrads::zeros(seq, out.para_logits.len(), out.sent_logits.len());
    let mut parts = LossBreakdown::default();

    let weights = if profile.is_msq() {
        if targets.qtype.is_some() || !targets.sent_labels.is_empty() || targets.spans.len() > 1 {
            return Err(Error::InvalidLoss(
                "msq-like targets take one span, paragraph labels only".into(),
            ));
        }
        LossWeights {
            qtype: 0.0,
            span: 1.0,
            para: 1.0,
            sent: 0.0,
        }
    } else {
        let q = targets
            .qtype
            .ok_or_else(|| Error::InvalidLoss("question-type target missing".into()))?;
        if q >= 3 {
            return Err(Error::InvalidLoss(format!("question-type class {q} out of range")));
        }
        if targets.sent_labels.len() != out.sent_logits.len() {
            return Err(Error::InvalidLoss(format!(
                "{} sentence labels for {} sentence markers",
                targets.sent_labels.len(),
                out.sent_logits.len()
            )));
        }
        let (l, g) = cross_entropy(out.qtype_logits.as_slice().unwrap(), q);
        parts.qtype = l;
        grads.qtype_logits = Array1::from(g) * weights.qtype;
        let (l, g) = mean_bce(&out.sent_logits, &targets.sent_labels);
        parts.sent = l;
        grads.sent_logits = g.into_iter().map(|v| v * weights.sent).collect();
        *weights
    };

    if !targets.spans.is_empty() {
        let (l, ds, de) = or_ce_span_loss(
            out.start_logits.as_slice().unwrap(),
            out.end_logits.as_slice().unwrap(),
            &targets.spans,
            targets.context.clone(),
        )?;
        parts.span = l;
        grads.start_logits = Array1::from(ds) * weights.span;
        grads.end_logits = Array1::from(de) * weights.span;
    }

    let (l, g) = mean_bce(&out.para_logits, &targets.para_labels);
    parts.para = l;
    grads.para_logits = g.into_iter().map(|v| v * weights.para).collect();

    parts.total = parts.weighted_total(&weights);
    Ok((parts, grads))
}

/// Mean cross-entropy of LM logits at `positions` against `targets`.
pub fn masked_lm_loss(
    lm_logits: &Array2<f64>,
    positions: &[usize],
    targets: &[usize],
) -> Result<(f64, Array2<f64>)> {
    if positions.is_empty() {
        return Err(Error::InvalidLoss("masked-LM loss over zero targets".into()));
    }
    let mut grad = Array2::zeros(lm_logits.raw_dim());
    let n = positions.len() as f64;
    let mut total = 0.0;
    for (&p, &t) in positions.iter().zip(targets) {
        let row = lm_logits.row(p).to_vec();
        let (l, g) = cross_entropy(&row, t);
        total += l;
        for (dst, v) in grad.row_mut(p).iter_mut().zip(g) {
            *dst = v / n;
        }
    }
    Ok((total / n, grad))
}
