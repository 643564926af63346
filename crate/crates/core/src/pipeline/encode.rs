//! Flattening samples into marker-delimited token sequences.
//!
//! Each paragraph becomes `<p> <t> title </t> s1 [/sent] s2 [/sent] ...`.

use std::collections::BTreeSet;

use crate::error::Result;
use crate::synthdata::{find_occurrences, MhqaSample, QuestionType};
use crate::text::{TokenId, Vocabulary};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenRole {
    Marker { paragraph: usize },
    Title { paragraph: usize },
    Sentence { paragraph: usize, sentence: usize },
}

impl TokenRole {
    pub fn paragraph(self) -> usize {
        match self {
            TokenRole::Marker { paragraph }
            | TokenRole::Title { paragraph }
            | TokenRole::Sentence { paragraph, .. } => paragraph,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodedSample {
    pub id: String,
    pub question: Vec<TokenId>,
    pub qtype: QuestionType,
    pub doc: Vec<TokenId>,
    pub roles: Vec<TokenRole>,
    /// Document position of each paragraph's `<p>` marker.
    pub para_start: Vec<usize>,
    /// Document position of each paragraph's `</t>` marker.
    pub title_end: Vec<usize>,
    /// Document position of each sentence's `[/sent]` marker.
    pub sent_end: Vec<Vec<usize>>,
    /// Scored answer tokens (`yes`/`no` or the span words).
    pub answer_words: Vec<String>,
    /// Inclusive document spans of every answer occurrence.
    pub answer_spans: Vec<(usize, usize)>,
    /// Last occurrence inside a supporting paragraph.
    pub last_supporting_span: Option<(usize, usize)>,
    pub supporting_paragraphs: BTreeSet<usize>,
    pub supporting_sentences: BTreeSet<(usize, usize)>,
}

impl EncodedSample {
    pub fn encode(sample: &MhqaSample, vocab: &Vocabulary) -> Result<Self> {
        let m = vocab.markers();
        let mut doc = Vec::new();
        let mut roles = Vec::new();
        let mut para_start = Vec::new();
        let mut title_end = Vec::new();
        let mut sent_end = Vec::new();
        // document start of every sentence's first token
        let mut sent_offsets: Vec<Vec<usize>> = Vec::new();
        for (pi, p) in sample.paragraphs.iter().enumerate() {
            let marker = TokenRole::Marker { paragraph: pi };
            para_start.push(doc.len());
            doc.push(m.paragraph_start);
            roles.push(marker);
            doc.push(m.title_start);
            roles.push(marker);
            for id in vocab.encode(&p.title)? {
                doc.push(id);
                roles.push(TokenRole::Title { paragraph: pi });
            }
            title_end.push(doc.len());
            doc.push(m.title_end);
            roles.push(marker);
            let mut ends = Vec::new();
            let mut offsets = Vec::new();
            for (si, s) in p.sentences.iter().enumerate() {
                offsets.push(doc.len());
                for id in vocab.encode(s)? {
                    doc.push(id);
                    roles.push(TokenRole::Sentence {
                        paragraph: pi,
                        sentence: si,
                    });
                }
                ends.push(doc.len());
                doc.push(m.sentence_end);
                roles.push(marker);
            }
            sent_end.push(ends);
            sent_offsets.push(offsets);
        }

        let (answer_spans, last_supporting_span) = if sample.question_type == QuestionType::Span {
            let n = sample.answer_text.len();
            let spans: Vec<(usize, usize)> = find_occurrences(sample, &sample.answer_text)
                .into_iter()
                .map(|(p, s, start)| {
                    let begin = sent_offsets[p][s] + start;
                    (begin, begin + n - 1)
                })
                .collect();
            let last = spans
                .iter()
                .copied()
                .filter(|&(b, _)| sample.supporting_paragraphs.contains(&roles[b].paragraph()))
                .max();
            (spans, last)
        } else {
            (Vec::new(), None)
        };

        Ok(Self {
            id: sample.id.clone(),
            question: vocab.encode(&sample.question)?,
            qtype: sample.question_type,
            doc,
            roles,
            para_start,
            title_end,
            sent_end,
            answer_words: sample.answer_tokens(),
            answer_spans,
            last_supporting_span,
            supporting_paragraphs: sample.supporting_paragraphs.clone(),
            supporting_sentences: sample.supporting_sentences.clone(),
        })
    }

    pub fn n_paragraphs(&self) -> usize {
        self.para_start.len()
    }

    /// Document positions of supporting-sentence body tokens.
    pub fn supporting_fact_positions(&self) -> BTreeSet<usize> {
        self.roles
            .iter()
            .enumerate()
            .filter_map(|(i, r)| match *r {
                TokenRole::Sentence { paragraph, sentence }
                    if self.supporting_sentences.contains(&(paragraph, sentence)) =>
                {
                    Some(i)
                }
                _ => None,
            })
            .collect()
    }

    /// Sentence body tokens of non-supporting paragraphs.
    pub fn distractor_positions(&self) -> BTreeSet<usize> {
        self.roles
            .iter()
            .enumerate()
            .filter_map(|(i, r)| match *r {
                TokenRole::Sentence { paragraph, .. }
                    if !self.supporting_paragraphs.contains(&paragraph) =>
                {
                    Some(i)
                }
                _ => None,
            })
            .collect()
    }

    pub fn answer_positions(&self) -> BTreeSet<usize> {
        self.answer_spans
            .iter()
            .flat_map(|&(b, e)| b..=e)
            .collect()
    }
}

/// Vocabulary over every word of `samples` plus the stop-word filter.
pub fn corpus_vocabulary(samples: &[MhqaSample]) -> Result<Vocabulary> {
    let docs: Vec<String> = samples
        .iter()
        .map(|s| s.words().collect::<Vec<_>>().join(" "))
        .collect();
    Vocabulary::build(&docs, crate::text::STOP_WORDS)
}
