//! Aggregating per-segment head outputs into one prediction per sample.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::Result;
use crate::evalmetrics::PredictionRecord;
use crate::nnet::loss::{sigmoid, softmax};
use crate::nnet::{DatasetProfile, ModelState, Outputs};
use crate::pipeline::encode::EncodedSample;
use crate::pipeline::prepare::{prepare_segments, PreparedSegment};
use crate::pipeline::segment::SegmentConfig;
use crate::synthdata::QuestionType;
use crate::text::{TokenId, Vocabulary};

pub const MAX_ANSWER_LEN: usize = 10;
pub const EVIDENCE_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct SpanChoice {
    pub segment: usize,
    /// Inclusive segment positions.
    pub start: usize,
    pub end: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregatedPrediction {
    pub id: String,
    pub question_type: QuestionType,
    pub answer: String,
    /// Inclusive document positions of the chosen span, if any.
    pub span: Option<(usize, usize)>,
    pub score: f64,
    pub paragraph_scores: BTreeMap<usize, f64>,
    pub sentence_scores: BTreeMap<(usize, usize), f64>,
    pub sp_paragraphs: BTreeSet<usize>,
    pub sp_sentences: BTreeSet<(usize, usize)>,
}

impl AggregatedPrediction {
    pub fn to_record(&self) -> PredictionRecord {
        PredictionRecord {
            id: self.id.clone(),
            answer: self.answer.clone(),
            answer_type: self.question_type,
            score: self.score,
            sp: self.sp_sentences.iter().copied().collect(),
            sp_paragraphs: self.sp_paragraphs.iter().copied().collect(),
        }
    }
}

/// Best `start + end` over context spans of at most `max_len` tokens across
/// all segments. Earlier segments, starts and ends win ties.
pub fn best_span(segments: &[PreparedSegment], outputs: &[Outputs], max_len: usize) -> Option<SpanChoice> {
    let mut best: Option<SpanChoice> = None;
    for (si, (seg, out)) in segments.iter().zip(outputs).enumerate() {
        let ctx = seg.segment.context.clone();
        for s in ctx.clone() {
            for e in s..ctx.end.min(s + max_len) {
                let score = out.start_logits[s] + out.end_logits[e];
                if best.as_ref().is_none_or(|b| score > b.score) {
                    best = Some(SpanChoice {
                        segment: si,
                        start: s,
                        end: e,
                        score,
                    });
                }
            }
        }
    }
    best
}

/// Predicts one sample from its memory-augmented segments.
pub fn infer(
    model: &ModelState,
    sample: &EncodedSample,
    memory: &[TokenId],
    vocab: &Vocabulary,
    seg: &SegmentConfig,
    profile: DatasetProfile,
) -> Result<AggregatedPrediction> {
    let segments = prepare_segments(sample, memory, vocab.markers(), seg, profile)?;
    let outputs = segments
        .iter()
        .map(|s| model.infer(s.input(), false))
        .collect::<Result<Vec<_>>>()?;
    Ok(aggregate(sample, &segments, &outputs, vocab, profile))
}

pub fn aggregate(
    sample: &EncodedSample,
    segments: &[PreparedSegment],
    outputs: &[Outputs],
    vocab: &Vocabulary,
    profile: DatasetProfile,
) -> AggregatedPrediction {
    let (question_type, qtype_prob) = if profile.is_msq() {
        (QuestionType::Span, 1.0)
    } else {
        let mut best = (QuestionType::Span, f64::NEG_INFINITY);
        for out in outputs {
            for (c, p) in softmax(out.qtype_logits.as_slice().unwrap()).into_iter().enumerate() {
                if p > best.1 {
                    best = (QuestionType::from_index(c), p);
                }
            }
        }
        best
    };

    let mut paragraph_scores: BTreeMap<usize, f64> = BTreeMap::new();
    let mut sentence_scores: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for (s, out) in segments.iter().zip(outputs) {
        for (&p, &z) in s.para_index.iter().zip(&out.para_logits) {
            let v = paragraph_scores.entry(p).or_insert(0.0);
            *v = v.max(sigmoid(z));
        }
        for (&k, &z) in s.sent_index.iter().zip(&out.sent_logits) {
            let v = sentence_scores.entry(k).or_insert(0.0);
            *v = v.max(sigmoid(z));
        }
    }

    let sp_paragraphs: BTreeSet<usize> = match profile {
        DatasetProfile::HpLike => {
            let mut ranked: Vec<(usize, f64)> = paragraph_scores.iter().map(|(&p, &v)| (p, v)).collect();
            ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            ranked.into_iter().take(2).map(|(p, _)| p).collect()
        }
        _ => paragraph_scores
            .iter()
            .filter(|(_, &v)| v > EVIDENCE_THRESHOLD)
            .map(|(&p, _)| p)
            .collect(),
    };
    let sp_sentences: BTreeSet<(usize, usize)> = sentence_scores
        .iter()
        .filter(|(&(p, _), &v)| {
            v > EVIDENCE_THRESHOLD && (profile != DatasetProfile::HpLike || sp_paragraphs.contains(&p))
        })
        .map(|(&k, _)| k)
        .collect();

    let (answer, span, score) = match question_type {
        QuestionType::Yes => ("yes".to_owned(), None, qtype_prob),
        QuestionType::No => ("no".to_owned(), None, qtype_prob),
        QuestionType::Span => match best_span(segments, outputs, MAX_ANSWER_LEN) {
            Some(c) => {
                let seg = &segments[c.segment].segment;
                let (b, e) = (seg.doc_position(c.start), seg.doc_position(c.end));
                (vocab.detokenize(&sample.doc[b..=e]), Some((b, e)), c.score)
            }
            None => (String::new(), None, f64::NEG_INFINITY),
        },
    };

    AggregatedPrediction {
        id: sample.id.clone(),
        question_type,
        answer,
        span,
        score,
        paragraph_scores,
        sentence_scores,
        sp_paragraphs,
        sp_sentences,
    }
}
