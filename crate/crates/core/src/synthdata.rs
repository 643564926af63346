//! Synthetic multi-hop QA corpora.
//!
//! Each sample is built around a bridge chain `e0 -> e1 -> ... -> e_hops`:
//! the paragraph titled `e_k` states the relation linking `e_k` to `e_{k+1}`,
//! and the question composes the relations starting from `e0`. Distractor
//! paragraphs use the same relation and filler templates over other
//! entities, occasionally mentioning chain entities, so surface matching
//! alone does not locate the answer.
//!
//! The JSONL layout follows the HotpotQA distractor-setting fields
//! (`_id`, `question`, `answer`, `context`, `supporting_facts`) with the
//! extra keys `answer_type`, `supporting_paragraphs` and `hops`.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuestionType {
    Yes,
    No,
    Span,
}

impl QuestionType {
    pub fn index(self) -> usize {
        match self {
            QuestionType::Yes => 0,
            QuestionType::No => 1,
            QuestionType::Span => 2,
        }
    }

    pub fn from_index(i: usize) -> Self {
        match i {
            0 => QuestionType::Yes,
            1 => QuestionType::No,
            _ => QuestionType::Span,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Paragraph {
    pub title: Vec<String>,
    pub sentences: Vec<Vec<String>>,
    pub is_supporting: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MhqaSample {
    pub id: String,
    pub question: Vec<String>,
    pub question_type: QuestionType,
    pub paragraphs: Vec<Paragraph>,
    /// Empty for yes/no questions.
    pub answer_text: Vec<String>,
    pub supporting_paragraphs: BTreeSet<usize>,
    pub supporting_sentences: BTreeSet<(usize, usize)>,
    pub hops: usize,
}

impl MhqaSample {
    /// The answer as it is scored: the span tokens, or the literal `yes`/`no`.
    pub fn answer_tokens(&self) -> Vec<String> {
        match self.question_type {
            QuestionType::Yes => vec!["yes".into()],
            QuestionType::No => vec!["no".into()],
            QuestionType::Span => self.answer_text.clone(),
        }
    }

    /// Every whitespace-separated word of the sample, markers excluded.
    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.question
            .iter()
            .chain(self.paragraphs.iter().flat_map(|p| {
                p.title.iter().chain(p.sentences.iter().flatten())
            }))
            .map(String::as_str)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum YesNoStyle {
    /// "is the location of the birthplace of X Y ?"
    Verify,
    /// "were X and Y born in the same place ?" (two hops only)
    Comparison,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub n_samples: usize,
    pub n_paragraphs: usize,
    pub hops: usize,
    /// Number of distinct pseudo-words available for entity names.
    pub vocab_size: usize,
    pub span_fraction: f64,
    pub seed: u64,
    /// Filler sentences per paragraph are drawn from `1..=max_filler`.
    pub max_filler: usize,
    /// Probability that a distractor fact mentions the answer entity.
    pub answer_repeat_prob: f64,
    pub yes_no_style: YesNoStyle,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            n_samples: 100,
            n_paragraphs: 10,
            hops: 2,
            vocab_size: 200,
            span_fraction: 0.8,
            seed: 0,
            max_filler: 1,
            answer_repeat_prob: 0.3,
            yes_no_style: YesNoStyle::Verify,
        }
    }
}

const SYLLABLES: [&str; 20] = [
    "ka", "lo", "mi", "ru", "te", "zan", "vo", "pel", "dri", "sa", "nu", "gor", "fi", "bel",
    "xo", "tam", "qui", "ro", "ven", "hu",
];

/// (relation phrase, question noun)
const RELATIONS: [(&[&str], &str); 4] = [
    (&["was", "born", "in"], "birthplace"),
    (&["is", "located", "in"], "location"),
    (&["is", "part", "of"], "region"),
    (&["was", "founded", "by"], "founder"),
];

const FILLER_NOUNS: [&str; 8] = [
    "river", "market", "museum", "library", "bridge", "festival", "harbor", "garden",
];
const FILLER_ADJS: [&str; 6] = ["famous", "large", "old", "quiet", "busy", "small"];

pub fn name_pool(size: usize) -> Vec<String> {
    let s = SYLLABLES.len();
    (0..size)
        .map(|i| {
            let a = SYLLABLES[i % s];
            let b = SYLLABLES[(i / s) % s];
            let c = SYLLABLES[(i / (s * s) + 7) % s];
            format!("{a}{b}{c}")
        })
        .collect()
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if !(2..=4).contains(&self.hops) {
            return Err(Error::InvalidConfig(format!(
                "hops must be 2, 3 or 4, got {}",
                self.hops
            )));
        }
        if self.n_paragraphs < self.hops {
            return Err(Error::InvalidConfig(format!(
                "n_paragraphs ({}) must be at least hops ({})",
                self.n_paragraphs, self.hops
            )));
        }
        if !(0.0..=1.0).contains(&self.span_fraction) {
            return Err(Error::InvalidConfig("span_fraction must lie in [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.answer_repeat_prob) {
            return Err(Error::InvalidConfig("answer_repeat_prob must lie in [0, 1]".into()));
        }
        if self.max_filler == 0 {
            return Err(Error::InvalidConfig("max_filler must be at least 1".into()));
        }
        if self.yes_no_style == YesNoStyle::Comparison && self.hops != 2 {
            return Err(Error::InvalidConfig(
                "comparison questions require hops = 2".into(),
            ));
        }
        let needed = self.words_per_sample();
        if self.vocab_size < needed || self.vocab_size > SYLLABLES.len().pow(3) {
            return Err(Error::InvalidConfig(format!(
                "vocab_size {} cannot provide {} distinct entity words per sample",
                self.vocab_size, needed
            )));
        }
        Ok(())
    }

    // chain entities, distractor titles, and distractor objects, up to two words each
    fn words_per_sample(&self) -> usize {
        2 * ((self.hops + 1) + 2 * self.n_paragraphs + 1)
    }
}

struct EntityDraw<'a> {
    pool: Vec<&'a str>,
}

impl<'a> EntityDraw<'a> {
    fn new(names: &'a [String], rng: &mut ChaCha8Rng) -> Self {
        let mut pool: Vec<&str> = names.iter().map(String::as_str).collect();
        pool.shuffle(rng);
        Self { pool }
    }

    fn next(&mut self, rng: &mut ChaCha8Rng) -> Vec<String> {
        let len = if rng.gen_bool(0.35) { 2 } else { 1 };
        (0..len)
            .map(|_| self.pool.pop().expect("pool sized by validate").to_string())
            .collect()
    }
}

fn words(parts: &[&str]) -> Vec<String> {
    parts.iter().map(|s| s.to_string()).collect()
}

fn fact(subject: &[String], relation: usize, object: &[String]) -> Vec<String> {
    let mut s = subject.to_vec();
    s.extend(words(RELATIONS[relation].0));
    s.extend_from_slice(object);
    s.push(".".into());
    s
}

fn filler(subject: &[String], rng: &mut ChaCha8Rng) -> Vec<String> {
    let noun = FILLER_NOUNS[rng.gen_range(0..FILLER_NOUNS.len())];
    let adj = FILLER_ADJS[rng.gen_range(0..FILLER_ADJS.len())];
    let mut s = subject.to_vec();
    if rng.gen_bool(0.5) {
        s.extend(words(&["has", "a", adj, noun]));
    } else {
        s.extend(words(&["is", "known", "for", "its", adj, noun]));
    }
    s.push(".".into());
    s
}

/// A paragraph about `title` holding `facts` plus filler, shuffled.
/// Returns the paragraph and the sentence index of each fact.
fn paragraph(
    title: &[String],
    facts: Vec<Vec<String>>,
    supporting: bool,
    max_filler: usize,
    rng: &mut ChaCha8Rng,
) -> (Paragraph, Vec<usize>) {
    let n_fill = rng.gen_range(1..=max_filler);
    let n_facts = facts.len();
    let mut sentences: Vec<(Option<usize>, Vec<String>)> =
        facts.into_iter().enumerate().map(|(i, f)| (Some(i), f)).collect();
    for _ in 0..n_fill {
        sentences.push((None, filler(title, rng)));
    }
    sentences.shuffle(rng);
    let mut fact_at = vec![0; n_facts];
    for (pos, (tag, _)) in sentences.iter().enumerate() {
        if let Some(i) = tag {
            fact_at[*i] = pos;
        }
    }
    (
        Paragraph {
            title: title.to_vec(),
            sentences: sentences.into_iter().map(|(_, s)| s).collect(),
            is_supporting: supporting,
        },
        fact_at,
    )
}

fn question_chain(relations: &[usize], head: &[String]) -> Vec<String> {
    // innermost relation comes last: "the location of the birthplace of X"
    let mut q = Vec::new();
    for (i, &r) in relations.iter().rev().enumerate() {
        if i > 0 {
            q.push("of".into());
        }
        q.push("the".into());
        q.push(RELATIONS[r].1.into());
    }
    q.push("of".into());
    q.extend_from_slice(head);
    q
}

/// Builds one sample from its own deterministic stream.
pub fn generate_sample(config: &GenConfig, index: usize, names: &[String]) -> MhqaSample {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(index as u64 + 1);
    let mut draw = EntityDraw::new(names, &mut rng);

    let question_type = if rng.gen_bool(config.span_fraction) {
        QuestionType::Span
    } else if rng.gen_bool(0.5) {
        QuestionType::Yes
    } else {
        QuestionType::No
    };

    let mut paragraphs: Vec<(Paragraph, Option<usize>)> = Vec::new();
    let question;
    let mut answer_text = Vec::new();
    let hops = config.hops;

    if config.yes_no_style == YesNoStyle::Comparison && question_type != QuestionType::Span {
        let a = draw.next(&mut rng);
        let b = draw.next(&mut rng);
        let place_a = draw.next(&mut rng);
        let place_b = if question_type == QuestionType::Yes {
            place_a.clone()
        } else {
            draw.next(&mut rng)
        };
        for (person, place) in [(&a, &place_a), (&b, &place_b)] {
            let (p, at) = paragraph(person, vec![fact(person, 0, place)], true, config.max_filler, &mut rng);
            paragraphs.push((p, Some(at[0])));
        }
        let mut q = words(&["were"]);
        q.extend(a.clone());
        q.push("and".into());
        q.extend(b.clone());
        q.extend(words(&["born", "in", "the", "same", "place", "?"]));
        question = q;
    } else {
        let chain: Vec<Vec<String>> = (0..=hops).map(|_| draw.next(&mut rng)).collect();
        // first hop always starts from a person's birthplace
        let relations: Vec<usize> = (0..hops)
            .map(|k| if k == 0 { 0 } else { rng.gen_range(1..RELATIONS.len()) })
            .collect();
        for k in 0..hops {
            let (p, at) = paragraph(
                &chain[k],
                vec![fact(&chain[k], relations[k], &chain[k + 1])],
                true,
                config.max_filler,
                &mut rng,
            );
            paragraphs.push((p, Some(at[0])));
        }
        let target = &chain[hops];
        match question_type {
            QuestionType::Span => {
                let mut q = words(&["what", "is"]);
                q.extend(question_chain(&relations, &chain[0]));
                q.push("?".into());
                question = q;
                answer_text = target.clone();
            }
            _ => {
                let candidate = if question_type == QuestionType::Yes {
                    target.clone()
                } else {
                    draw.next(&mut rng)
                };
                let mut q = words(&["is"]);
                q.extend(question_chain(&relations, &chain[0]));
                q.extend(candidate.clone());
                q.push("?".into());
                question = q;
                if question_type == QuestionType::No {
                    // the wrong candidate still appears in the document
                    let holder = draw.next(&mut rng);
                    let (p, _) = paragraph(
                        &holder,
                        vec![fact(&holder, relations[hops - 1], &candidate)],
                        false,
                        config.max_filler,
                        &mut rng,
                    );
                    paragraphs.push((p, None));
                }
            }
        }
        let chain_words: Vec<Vec<String>> = chain.clone();
        while paragraphs.len() < config.n_paragraphs {
            let title = draw.next(&mut rng);
            let relation = rng.gen_range(0..RELATIONS.len());
            let object = if question_type == QuestionType::Span
                && rng.gen_bool(config.answer_repeat_prob)
            {
                target.clone()
            } else if rng.gen_bool(0.3) {
                chain_words[rng.gen_range(1..chain_words.len())].clone()
            } else {
                draw.next(&mut rng)
            };
            let (p, _) = paragraph(
                &title,
                vec![fact(&title, relation, &object)],
                false,
                config.max_filler,
                &mut rng,
            );
            paragraphs.push((p, None));
        }
    }

    while paragraphs.len() < config.n_paragraphs {
        let title = draw.next(&mut rng);
        let object = draw.next(&mut rng);
        let relation = rng.gen_range(0..RELATIONS.len());
        let (p, _) = paragraph(&title, vec![fact(&title, relation, &object)], false, config.max_filler, &mut rng);
        paragraphs.push((p, None));
    }
    paragraphs.truncate(config.n_paragraphs.max(paragraphs.iter().filter(|p| p.0.is_supporting).count()));
    paragraphs.shuffle(&mut rng);

    let mut supporting_paragraphs = BTreeSet::new();
    let mut supporting_sentences = BTreeSet::new();
    for (i, (p, fact_at)) in paragraphs.iter().enumerate() {
        if p.is_supporting {
            supporting_paragraphs.insert(i);
            supporting_sentences.insert((i, fact_at.expect("supporting paragraphs carry a fact")));
        }
    }

    MhqaSample {
        id: format!("syn-{}-{index:06}", config.seed),
        question,
        question_type,
        paragraphs: paragraphs.into_iter().map(|(p, _)| p).collect(),
        answer_text,
        supporting_paragraphs,
        supporting_sentences,
        hops,
    }
}

pub fn generate_corpus(config: &GenConfig) -> Result<Vec<MhqaSample>> {
    config.validate()?;
    let names = name_pool(config.vocab_size);
    Ok((0..config.n_samples)
        .map(|i| generate_sample(config, i, &names))
        .collect())
}

/// Positions `(paragraph, start)` where `needle` occurs inside a sentence.
pub fn find_occurrences(sample: &MhqaSample, needle: &[String]) -> Vec<(usize, usize, usize)> {
    let mut hits = Vec::new();
    if needle.is_empty() {
        return hits;
    }
    for (pi, p) in sample.paragraphs.iter().enumerate() {
        for (si, s) in p.sentences.iter().enumerate() {
            for start in 0..s.len().saturating_sub(needle.len() - 1) {
                if s[start..start + needle.len()] == *needle {
                    hits.push((pi, si, start));
                }
            }
        }
    }
    hits
}

// ---------------------------------------------------------------------------
// JSONL

#[derive(Serialize, Deserialize)]
struct SampleRecord {
    #[serde(rename = "_id")]
    id: String,
    answer_type: QuestionType,
    question: String,
    answer: String,
    context: Vec<(String, Vec<String>)>,
    supporting_facts: Vec<(String, usize)>,
    supporting_paragraphs: Vec<usize>,
    hops: usize,
}

fn join(words: &[String]) -> String {
    words.join(" ")
}

fn split(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_owned).collect()
}

impl From<&MhqaSample> for SampleRecord {
    fn from(s: &MhqaSample) -> Self {
        SampleRecord {
            id: s.id.clone(),
            answer_type: s.question_type,
            question: join(&s.question),
            answer: join(&s.answer_tokens()),
            context: s
                .paragraphs
                .iter()
                .map(|p| (join(&p.title), p.sentences.iter().map(|x| join(x)).collect()))
                .collect(),
            supporting_facts: s
                .supporting_sentences
                .iter()
                .map(|&(p, i)| (join(&s.paragraphs[p].title), i))
                .collect(),
            supporting_paragraphs: s.supporting_paragraphs.iter().copied().collect(),
            hops: s.hops,
        }
    }
}

impl SampleRecord {
    fn into_sample(self) -> std::result::Result<MhqaSample, String> {
        let mut by_title: HashMap<&str, usize> = HashMap::new();
        for (i, (title, _)) in self.context.iter().enumerate() {
            by_title.entry(title.as_str()).or_insert(i);
        }
        let mut supporting_sentences = BTreeSet::new();
        for (title, idx) in &self.supporting_facts {
            let p = *by_title
                .get(title.as_str())
                .ok_or_else(|| format!("supporting fact names unknown title `{title}`"))?;
            if *idx >= self.context[p].1.len() {
                return Err(format!("supporting fact ({title}, {idx}) out of range"));
            }
            supporting_sentences.insert((p, *idx));
        }
        let supporting_paragraphs: BTreeSet<usize> =
            self.supporting_paragraphs.iter().copied().collect();
        if let Some(&bad) = supporting_paragraphs.iter().find(|&&p| p >= self.context.len()) {
            return Err(format!("supporting paragraph {bad} out of range"));
        }
        let paragraphs = self
            .context
            .into_iter()
            .enumerate()
            .map(|(i, (title, sentences))| Paragraph {
                title: split(&title),
                sentences: sentences.iter().map(|s| split(s)).collect(),
                is_supporting: supporting_paragraphs.contains(&i),
            })
            .collect();
        let answer_text = match self.answer_type {
            QuestionType::Span => split(&self.answer),
            _ => Vec::new(),
        };
        Ok(MhqaSample {
            id: self.id,
            question: split(&self.question),
            question_type: self.answer_type,
            paragraphs,
            answer_text,
            supporting_paragraphs,
            supporting_sentences,
            hops: self.hops,
        })
    }
}

pub fn samples_to_jsonl(samples: &[MhqaSample]) -> Result<String> {
    let records: Vec<SampleRecord> = samples.iter().map(SampleRecord::from).collect();
    crate::io::to_jsonl(&records)
}

pub fn write_jsonl(path: &Path, samples: &[MhqaSample]) -> Result<()> {
    crate::io::write_atomic(path, samples_to_jsonl(samples)?.as_bytes())
}

pub fn read_jsonl(path: &Path) -> Result<Vec<MhqaSample>> {
    let records: Vec<(usize, SampleRecord)> = {
        if !path.exists() {
            return Err(Error::Missing(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path)?;
        text.lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str(l)
                    .map(|r| (i + 1, r))
                    .map_err(|e| Error::Parse {
                        path: path.to_path_buf(),
                        line: i + 1,
                        message: e.to_string(),
                    })
            })
            .collect::<Result<_>>()?
    };
    records
        .into_iter()
        .map(|(line, r)| {
            r.into_sample().map_err(|message| Error::Parse {
                path: path.to_path_buf(),
                line,
                message,
            })
        })
        .collect()
}
