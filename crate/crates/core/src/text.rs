//! Word-level tokenization over a closed vocabulary.
//!
//! Ids are assigned to corpus words in lexicographic order, followed by the
//! marker tokens and finally the pad token, so a rebuild from the same corpus
//! always yields the same ids.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type TokenId = usize;

/// English function words barred from memory.
pub const STOP_WORDS: &[&str] = &[
    "a", "an", "the", "and", "or", "but", "if", "of", "at", "by", "for", "with", "about", "to",
    "from", "in", "on", "into", "is", "are", "was", "were", "be", "been", "being", "has", "have",
    "had", "do", "does", "did", "it", "its", "this", "that", "these", "those", "as", "which",
    "who", "whom", "what", "where", "when", "not", "so", "than",
];

pub const CLS: &str = "[CLS]";
pub const MASK: &str = "[MASK]";
pub const QUESTION_START: &str = "<q>";
pub const QUESTION_END: &str = "</q>";
pub const TITLE_START: &str = "<t>";
pub const TITLE_END: &str = "</t>";
pub const SENTENCE_END: &str = "[/sent]";
pub const PARAGRAPH_START: &str = "<p>";
pub const PAD: &str = "[PAD]";

const MARKER_STRINGS: [&str; 8] = [
    CLS,
    MASK,
    QUESTION_START,
    QUESTION_END,
    TITLE_START,
    TITLE_END,
    SENTENCE_END,
    PARAGRAPH_START,
];

/// Ids of the structural marker tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MarkerSet {
    pub cls: TokenId,
    pub mask: TokenId,
    pub question_start: TokenId,
    pub question_end: TokenId,
    pub title_start: TokenId,
    pub title_end: TokenId,
    pub sentence_end: TokenId,
    pub paragraph_start: TokenId,
    pub pad: TokenId,
}

impl MarkerSet {
    pub fn all(&self) -> [TokenId; 9] {
        [
            self.cls,
            self.mask,
            self.question_start,
            self.question_end,
            self.title_start,
            self.title_end,
            self.sentence_end,
            self.paragraph_start,
            self.pad,
        ]
    }
}

#[derive(Debug, Clone)]
pub struct Vocabulary {
    id_to_token: Vec<String>,
    token_to_id: HashMap<String, TokenId>,
    special: BTreeSet<TokenId>,
    filtered: BTreeSet<TokenId>,
    markers: MarkerSet,
}

#[derive(Serialize, Deserialize)]
struct VocabularyFile {
    tokens: Vec<String>,
    special: Vec<TokenId>,
    filtered: Vec<TokenId>,
}

/// A token is punctuation when none of its characters is alphanumeric.
pub fn is_punctuation(token: &str) -> bool {
    !token.is_empty() && !token.chars().any(char::is_alphanumeric)
}

impl Vocabulary {
    /// Builds a vocabulary covering every whitespace-separated word of `corpus`.
    ///
    /// Stop words only enter the filter set when they occur in the corpus.
    pub fn build<S: AsRef<str>>(corpus: &[S], stop_words: &[&str]) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let words: BTreeSet<&str> = corpus
            .iter()
            .flat_map(|doc| doc.as_ref().split_whitespace())
            .filter(|w| !MARKER_STRINGS.contains(w) && *w != PAD)
            .collect();

        let mut id_to_token: Vec<String> = words.into_iter().map(str::to_owned).collect();
        id_to_token.extend(MARKER_STRINGS.iter().map(|s| s.to_string()));
        id_to_token.push(PAD.to_string());

        let token_to_id = index(&id_to_token);
        let markers = markers_from(&token_to_id)?;
        let special: BTreeSet<TokenId> = markers.all().into_iter().collect();

        let mut filtered = special.clone();
        for (id, tok) in id_to_token.iter().enumerate() {
            if is_punctuation(tok) {
                filtered.insert(id);
            }
        }
        for sw in stop_words {
            if let Some(&id) = token_to_id.get(*sw) {
                filtered.insert(id);
            }
        }

        Ok(Self {
            id_to_token,
            token_to_id,
            special,
            filtered,
            markers,
        })
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_token.is_empty()
    }

    pub fn markers(&self) -> &MarkerSet {
        &self.markers
    }

    pub fn special_ids(&self) -> &BTreeSet<TokenId> {
        &self.special
    }

    pub fn filtered_ids(&self) -> &BTreeSet<TokenId> {
        &self.filtered
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> &str {
        &self.id_to_token[id]
    }

    pub fn tokens(&self) -> &[String] {
        &self.id_to_token
    }

    pub fn tokenize(&self, text: &str) -> Result<Vec<TokenId>> {
        text.split_whitespace().map(|w| self.lookup(w)).collect()
    }

    /// Maps pre-split words to ids.
    pub fn encode<S: AsRef<str>>(&self, words: &[S]) -> Result<Vec<TokenId>> {
        words.iter().map(|w| self.lookup(w.as_ref())).collect()
    }

    fn lookup(&self, word: &str) -> Result<TokenId> {
        self.id(word)
            .ok_or_else(|| Error::OutOfVocabulary(word.to_string()))
    }

    pub fn detokenize(&self, ids: &[TokenId]) -> String {
        ids.iter()
            .map(|&id| self.id_to_token[id].as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Whether a document token may be stored in the global memory.
    pub fn is_memory_eligible(&self, id: TokenId) -> bool {
        !self.filtered.contains(&id)
    }

    pub fn to_json(&self) -> Result<String> {
        let file = VocabularyFile {
            tokens: self.id_to_token.clone(),
            special: self.special.iter().copied().collect(),
            filtered: self.filtered.iter().copied().collect(),
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let file: VocabularyFile = serde_json::from_str(json)?;
        let n = file.tokens.len();
        let token_to_id = index(&file.tokens);
        if token_to_id.len() != n {
            return Err(Error::InvalidConfig("vocabulary tokens are not distinct".into()));
        }
        if file.special.iter().chain(&file.filtered).any(|&id| id >= n) {
            return Err(Error::InvalidConfig("vocabulary id out of range".into()));
        }
        let markers = markers_from(&token_to_id)?;
        Ok(Self {
            id_to_token: file.tokens,
            token_to_id,
            special: file.special.into_iter().collect(),
            filtered: file.filtered.into_iter().collect(),
            markers,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::Missing(path.to_path_buf()));
        }
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

fn index(tokens: &[String]) -> HashMap<String, TokenId> {
    tokens
        .iter()
        .enumerate()
        .map(|(i, t)| (t.clone(), i))
        .collect()
}

fn markers_from(map: &HashMap<String, TokenId>) -> Result<MarkerSet> {
    let get = |s: &str| {
        map.get(s)
            .copied()
            .ok_or_else(|| Error::InvalidConfig(format!("vocabulary lacks marker {s}")))
    };
    Ok(MarkerSet {
        cls: get(CLS)?,
        mask: get(MASK)?,
        question_start: get(QUESTION_START)?,
        question_end: get(QUESTION_END)?,
        title_start: get(TITLE_START)?,
        title_end: get(TITLE_END)?,
        sentence_end: get(SENTENCE_END)?,
        paragraph_start: get(PARAGRAPH_START)?,
        pad: get(PAD)?,
    })
}
