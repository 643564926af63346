//! Splitting long documents into question + memory + context windows.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::{MarkerSet, TokenId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentConfig {
    pub max_seq_len: usize,
    /// Context tokens shared by consecutive windows.
    pub overlap: usize,
}

impl Default for SegmentConfig {
    fn default() -> Self {
        Self {
            max_seq_len: 128,
            overlap: 20,
        }
    }
}

/// One model input: `[CLS] (<q> question </q>)? memory context`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub ids: Vec<TokenId>,
    /// Includes the question markers; empty when the question is omitted.
    pub question: Range<usize>,
    pub memory: Range<usize>,
    pub context: Range<usize>,
    /// Document position of the first context token.
    pub doc_start: usize,
}

impl Segment {
    /// Document position of segment position `pos` (which must be in context).
    pub fn doc_position(&self, pos: usize) -> usize {
        debug_assert!(self.context.contains(&pos));
        self.doc_start + pos - self.context.start
    }

    /// Segment position of document position `doc`, if this window holds it.
    pub fn segment_position(&self, doc: usize) -> Option<usize> {
        let end = self.doc_start + self.context.len();
        (self.doc_start..end)
            .contains(&doc)
            .then(|| self.context.start + doc - self.doc_start)
    }

    pub fn doc_range(&self) -> Range<usize> {
        self.doc_start..self.doc_start + self.context.len()
    }

    pub fn memory_ids(&self) -> &[TokenId] {
        &self.ids[self.memory.clone()]
    }
}

/// Windows of at most `budget` tokens over `0..len`, each starting `overlap`
/// tokens before the previous one ended.
pub fn chunk_ranges(len: usize, budget: usize, overlap: usize) -> Vec<Range<usize>> {
    assert!(budget > overlap, "budget must exceed overlap");
    let mut out = Vec::new();
    let mut start = 0;
    loop {
        let end = (start + budget).min(len);
        out.push(start..end);
        if end >= len {
            break;
        }
        start = end - overlap;
    }
    out
}

/// Builds every window of `document`, each carrying the full question (when
/// given) and the full memory.
pub fn segment_document(
    question: Option<&[TokenId]>,
    memory: &[TokenId],
    document: &[TokenId],
    cfg: &SegmentConfig,
    markers: &MarkerSet,
) -> Result<Vec<Segment>> {
    if document.is_empty() {
        return Err(Error::InvalidConfig("document is empty".into()));
    }
    let mut prefix = vec![markers.cls];
    if let Some(q) = question {
        prefix.push(markers.question_start);
        prefix.extend_from_slice(q);
        prefix.push(markers.question_end);
    }
    let question_range = 1..prefix.len();
    let fixed = prefix.len() + memory.len();
    if fixed + cfg.overlap + 1 > cfg.max_seq_len {
        return Err(Error::NoContextRoom {
            question: prefix.len(),
            memory: memory.len(),
            overlap: cfg.overlap,
            max: cfg.max_seq_len,
        });
    }
    let budget = cfg.max_seq_len - fixed;
    Ok(chunk_ranges(document.len(), budget, cfg.overlap)
        .into_iter()
        .map(|r| {
            let mut ids = prefix.clone();
            ids.extend_from_slice(memory);
            ids.extend_from_slice(&document[r.clone()]);
            Segment {
                ids,
                question: question_range.clone(),
                memory: prefix.len()..fixed,
                context: fixed..fixed + r.len(),
                doc_start: r.start,
            }
        })
        .collect())
}
