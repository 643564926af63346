//! Memory-augmented stage-two inputs with their head positions and targets.

use crate::error::Result;
use crate::nnet::{DatasetProfile, ModelInput, SegmentTargets};
use crate::pipeline::encode::EncodedSample;
use crate::pipeline::segment::{segment_document, Segment, SegmentConfig};
use crate::synthdata::QuestionType;
use crate::text::{MarkerSet, TokenId};

#[derive(Debug, Clone, PartialEq)]
pub struct PreparedSegment {
    pub segment: Segment,
    pub para_positions: Vec<usize>,
    /// Paragraph index of each entry of `para_positions`.
    pub para_index: Vec<usize>,
    pub sent_positions: Vec<usize>,
    pub sent_index: Vec<(usize, usize)>,
    pub targets: SegmentTargets,
}

impl PreparedSegment {
    pub fn input(&self) -> ModelInput<'_> {
        ModelInput {
            ids: &self.segment.ids,
            para_positions: &self.para_positions,
            sent_positions: &self.sent_positions,
        }
    }
}

/// Segments `sample` with `memory` and attaches marker positions and
/// supervision. Paragraph scores are read at `</t>` (`<p>` for the
/// MuSiQue-style profile) and sentence scores at `[/sent]`.
pub fn prepare_segments(
    sample: &EncodedSample,
    memory: &[TokenId],
    markers: &MarkerSet,
    cfg: &SegmentConfig,
    profile: DatasetProfile,
) -> Result<Vec<PreparedSegment>> {
    let segments = segment_document(Some(&sample.question), memory, &sample.doc, cfg, markers)?;
    let para_markers = if profile.is_msq() {
        &sample.para_start
    } else {
        &sample.title_end
    };
    Ok(segments
        .into_iter()
        .map(|segment| {
            let mut para_positions = Vec::new();
            let mut para_index = Vec::new();
            for (pi, &d) in para_markers.iter().enumerate() {
                if let Some(p) = segment.segment_position(d) {
                    para_positions.push(p);
                    para_index.push(pi);
                }
            }
            let mut sent_positions = Vec::new();
            let mut sent_index = Vec::new();
            if !profile.is_msq() {
                for (pi, ends) in sample.sent_end.iter().enumerate() {
                    for (si, &d) in ends.iter().enumerate() {
                        if let Some(p) = segment.segment_position(d) {
                            sent_positions.push(p);
                            sent_index.push((pi, si));
                        }
                    }
                }
            }
            let whole = |&(b, e): &(usize, usize)| {
                Some((segment.segment_position(b)?, segment.segment_position(e)?))
            };
            let spans = if profile.is_msq() {
                sample.last_supporting_span.iter().filter_map(whole).collect()
            } else if sample.qtype == QuestionType::Span {
                sample.answer_spans.iter().filter_map(whole).collect()
            } else {
                Vec::new()
            };
            let targets = SegmentTargets {
                qtype: (!profile.is_msq()).then_some(sample.qtype.index()),
                spans,
                context: segment.context.clone(),
                para_labels: para_index
                    .iter()
                    .map(|p| sample.supporting_paragraphs.contains(p))
                    .collect(),
                sent_labels: sent_index
                    .iter()
                    .map(|s| sample.supporting_sentences.contains(s))
                    .collect(),
            };
            PreparedSegment {
                segment,
                para_positions,
                para_index,
                sent_positions,
                sent_index,
                targets,
            }
        })
        .collect())
}
