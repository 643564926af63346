//! Per-token entropy profiles and global memory population.

use std::collections::BTreeMap;
use std::fmt;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nnet::{token_entropy, ModelInput, ModelState};
use crate::pipeline::segment::{segment_document, SegmentConfig};
use crate::text::{TokenId, Vocabulary};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileEntry {
    pub doc_position: usize,
    pub token_id: TokenId,
    pub entropy: f64,
    pub eligible: bool,
}

/// One entry per document token, in document order.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EntropyProfile {
    pub entries: Vec<ProfileEntry>,
}

impl EntropyProfile {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entropies(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.entropy).collect()
    }
}

/// Runs the frozen-head model over question + context windows and averages
/// the entropies of positions seen by more than one window.
pub fn build_entropy_profile(
    model: &ModelState,
    vocab: &Vocabulary,
    question: &[TokenId],
    document: &[TokenId],
    seg: &SegmentConfig,
    include_question: bool,
) -> Result<EntropyProfile> {
    model.require_frozen()?;
    if document.is_empty() {
        return Err(Error::InvalidConfig("document is empty".into()));
    }
    let q = include_question.then_some(question);
    let segments = segment_document(q, &[], document, seg, vocab.markers())?;
    let mut sums = vec![0.0; document.len()];
    let mut counts = vec![0u32; document.len()];
    for s in &segments {
        let out = model.infer(ModelInput::tokens(&s.ids), true)?;
        let logits = out.lm_logits.expect("requested LM logits");
        for pos in s.context.clone() {
            let row = logits.row(pos);
            let h = token_entropy(row.as_slice().unwrap(), model.config.normalize_entropy);
            let d = s.doc_position(pos);
            sums[d] += h;
            counts[d] += 1;
        }
    }
    Ok(profile_from_sums(vocab, document, &sums, &counts))
}

pub(crate) fn profile_from_sums(
    vocab: &Vocabulary,
    document: &[TokenId],
    sums: &[f64],
    counts: &[u32],
) -> EntropyProfile {
    EntropyProfile {
        entries: document
            .iter()
            .enumerate()
            .map(|(i, &t)| ProfileEntry {
                doc_position: i,
                token_id: t,
                entropy: sums[i] / counts[i].max(1) as f64,
                eligible: vocab.is_memory_eligible(t),
            })
            .collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    HighestH,
    LowHFixed,
    LowHPercentile,
    Random,
    None,
}

impl PolicyKind {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "highest_h" | "highest-h" => Self::HighestH,
            "low_h" | "low_h_fixed" | "low-h" => Self::LowHFixed,
            "low_h_percentile" | "low-h-percentile" | "percentile" => Self::LowHPercentile,
            "random" => Self::Random,
            "none" => Self::None,
            other => return Err(Error::InvalidConfig(format!("unknown memory policy `{other}`"))),
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::HighestH => "highest_h",
            Self::LowHFixed => "low_h_fixed",
            Self::LowHPercentile => "low_h_percentile",
            Self::Random => "random",
            Self::None => "none",
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MemoryPolicy {
    pub kind: PolicyKind,
    pub theta: f64,
    pub percentile: f64,
    /// Maximum memory size.
    pub k: usize,
    pub seed: u64,
}

impl Default for MemoryPolicy {
    fn default() -> Self {
        Self {
            kind: PolicyKind::LowHFixed,
            theta: 0.3,
            percentile: 5.0,
            k: 200,
            seed: 0,
        }
    }
}

impl MemoryPolicy {
    pub fn of(kind: PolicyKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidConfig("memory cap k must be at least 1".into()));
        }
        if self.kind == PolicyKind::LowHFixed && !(self.theta > 0.0) {
            return Err(Error::InvalidConfig("theta must be positive".into()));
        }
        if self.kind == PolicyKind::LowHPercentile && !(self.percentile > 0.0 && self.percentile < 100.0) {
            return Err(Error::InvalidConfig("percentile must lie in (0, 100)".into()));
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MemoryToken {
    pub token_id: TokenId,
    pub doc_position: usize,
    pub entropy: f64,
}

/// Selected memory tokens in document order.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MemoryBuffer {
    pub tokens: Vec<MemoryToken>,
    /// Threshold actually applied by the low-H policies.
    pub theta_effective: Option<f64>,
}

impl MemoryBuffer {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn ids(&self) -> Vec<TokenId> {
        self.tokens.iter().map(|t| t.token_id).collect()
    }

    pub fn positions(&self) -> Vec<usize> {
        self.tokens.iter().map(|t| t.doc_position).collect()
    }
}

/// Nearest-rank percentile: the `ceil(p/100 * N)`-th smallest value.
pub fn percentile_threshold(values: &[f64], percentile: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InvalidConfig("percentile of an empty list".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    // p*N is exact for integral p, so whole ranks do not round up
    let rank = (percentile * sorted.len() as f64 / 100.0).ceil() as usize;
    Ok(sorted[rank.clamp(1, sorted.len()) - 1])
}

/// Applies `policy` to the eligible entries of `profile`.
pub fn populate_memory(profile: &EntropyProfile, policy: &MemoryPolicy) -> Result<MemoryBuffer> {
    policy.validate()?;
    let eligible: Vec<&ProfileEntry> = profile.entries.iter().filter(|e| e.eligible).collect();
    let k = policy.k;
    let mut theta_effective = None;

    let mut chosen: Vec<&ProfileEntry> = match policy.kind {
        PolicyKind::None => Vec::new(),
        PolicyKind::HighestH => {
            let mut v = eligible;
            v.sort_by(|a, b| {
                b.entropy
                    .total_cmp(&a.entropy)
                    .then(a.doc_position.cmp(&b.doc_position))
            });
            v.truncate(k);
            v
        }
        PolicyKind::LowHFixed | PolicyKind::LowHPercentile => {
            let theta = if policy.kind == PolicyKind::LowHFixed {
                policy.theta
            } else if eligible.is_empty() {
                0.0
            } else {
                let hs: Vec<f64> = eligible.iter().map(|e| e.entropy).collect();
                percentile_threshold(&hs, policy.percentile)?
            };
            theta_effective = Some(theta);
            let mut v: Vec<&ProfileEntry> = eligible.into_iter().filter(|e| e.entropy < theta).collect();
            if v.len() > k {
                v.sort_by(|a, b| {
                    a.entropy
                        .total_cmp(&b.entropy)
                        .then(a.doc_position.cmp(&b.doc_position))
                });
                v.truncate(k);
            }
            v
        }
        PolicyKind::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(policy.seed);
            let n = eligible.len();
            sample(&mut rng, n, k.min(n))
                .into_iter()
                .map(|i| eligible[i])
                .collect()
        }
    };
    chosen.sort_by_key(|e| e.doc_position);
    Ok(MemoryBuffer {
        tokens: chosen
            .into_iter()
            .map(|e| MemoryToken {
                token_id: e.token_id,
                doc_position: e.doc_position,
                entropy: e.entropy,
            })
            .collect(),
        theta_effective,
    })
}

/// One line of the memory dump file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryDumpRecord {
    pub sample_id: String,
    pub policy: PolicyKind,
    pub theta_effective: Option<f64>,
    pub tokens: Vec<MemoryDumpToken>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryDumpToken {
    pub pos: usize,
    pub token: String,
    #[serde(rename = "H")]
    pub entropy: f64,
}

impl MemoryDumpRecord {
    pub fn new(sample_id: &str, policy: PolicyKind, memory: &MemoryBuffer, vocab: &Vocabulary) -> Self {
        Self {
            sample_id: sample_id.to_string(),
            policy,
            theta_effective: memory.theta_effective,
            tokens: memory
                .tokens
                .iter()
                .map(|t| MemoryDumpToken {
                    pos: t.doc_position,
                    token: vocab.token(t.token_id).to_string(),
                    entropy: t.entropy,
                })
                .collect(),
        }
    }
}

/// One line of a profile dump file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileDumpRecord {
    pub sample_id: String,
    pub epoch: usize,
    pub tokens: Vec<String>,
    #[serde(rename = "H")]
    pub entropy: Vec<f64>,
    pub eligible: Vec<bool>,
}

impl ProfileDumpRecord {
    pub fn new(sample_id: &str, epoch: usize, profile: &EntropyProfile, vocab: &Vocabulary) -> Self {
        Self {
            sample_id: sample_id.to_string(),
            epoch,
            tokens: profile
                .entries
                .iter()
                .map(|e| vocab.token(e.token_id).to_string())
                .collect(),
            entropy: profile.entropies(),
            eligible: profile.entries.iter().map(|e| e.eligible).collect(),
        }
    }
}

impl ProfileDumpRecord {
    /// Rebuilds the profile; token strings are mapped back through `vocab`.
    pub fn to_profile(&self, vocab: &Vocabulary) -> Result<EntropyProfile> {
        if self.tokens.len() != self.entropy.len() || self.tokens.len() != self.eligible.len() {
            return Err(Error::LengthMismatch(format!("profile record `{}`", self.sample_id)));
        }
        let entries = self
            .tokens
            .iter()
            .zip(&self.entropy)
            .zip(&self.eligible)
            .enumerate()
            .map(|(i, ((t, &h), &eligible))| {
                Ok(ProfileEntry {
                    doc_position: i,
                    token_id: vocab.id(t).ok_or_else(|| Error::OutOfVocabulary(t.clone()))?,
                    entropy: h,
                    eligible,
                })
            })
            .collect::<Result<_>>()?;
        Ok(EntropyProfile { entries })
    }
}

/// Groups memory records by sample id.
pub fn index_by_sample(records: Vec<MemoryDumpRecord>) -> BTreeMap<String, MemoryDumpRecord> {
    records.into_iter().map(|r| (r.sample_id.clone(), r)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn profile(hs: &[f64]) -> EntropyProfile {
        EntropyProfile {
            entries: hs
                .iter()
                .enumerate()
                .map(|(i, &h)| ProfileEntry {
                    doc_position: i,
                    token_id: i,
                    entropy: h,
                    eligible: true,
                })
                .collect(),
        }
    }

    #[test]
    fn highest_h_two_of_three() {
        let p = profile(&[0.1, 0.5, 0.2]);
        let m = populate_memory(&p, &MemoryPolicy { kind: PolicyKind::HighestH, k: 2, ..Default::default() }).unwrap();
        assert_eq!(m.positions(), vec![1, 2]);
    }

    #[test]
    fn low_h_threshold_is_strict() {
        let p = profile(&[0.3, 0.4, 0.3]);
        let pol = MemoryPolicy { kind: PolicyKind::LowHFixed, theta: 0.3, ..Default::default() };
        assert!(populate_memory(&p, &pol).unwrap().is_empty());
        let p = profile(&[0.3, 0.2999, 0.5]);
        assert_eq!(populate_memory(&p, &pol).unwrap().positions(), vec![1]);
    }

    #[test]
    fn low_h_overflow_keeps_most_certain() {
        let p = profile(&[0.05, 0.01, 0.2, 0.01, 0.02]);
        let pol = MemoryPolicy { kind: PolicyKind::LowHFixed, theta: 0.1, k: 3, ..Default::default() };
        assert_eq!(populate_memory(&p, &pol).unwrap().positions(), vec![1, 3, 4]);
    }

    #[test]
    fn ineligible_tokens_never_selected() {
        let mut p = profile(&[0.01, 0.02, 0.9, 0.03]);
        p.entries[0].eligible = false;
        p.entries[2].eligible = false;
        for kind in [PolicyKind::HighestH, PolicyKind::LowHFixed, PolicyKind::LowHPercentile, PolicyKind::Random] {
            let m = populate_memory(&p, &MemoryPolicy { kind, k: 10, theta: 1.0, ..Default::default() }).unwrap();
            assert!(m.positions().iter().all(|&x| x == 1 || x == 3), "{kind}");
        }
    }

    #[test]
    fn no_eligible_gives_empty() {
        let mut p = profile(&[0.1, 0.2]);
        for e in &mut p.entries {
            e.eligible = false;
        }
        for kind in [PolicyKind::HighestH, PolicyKind::LowHFixed, PolicyKind::LowHPercentile, PolicyKind::Random, PolicyKind::None] {
            let m = populate_memory(&p, &MemoryPolicy::of(kind)).unwrap();
            assert!(m.is_empty());
        }
    }

    #[test]
    fn random_policy_is_seeded_and_capped() {
        let p = profile(&(0..50).map(|i| i as f64 / 100.0).collect::<Vec<_>>());
        let pol = MemoryPolicy { kind: PolicyKind::Random, k: 10, seed: 4, ..Default::default() };
        let a = populate_memory(&p, &pol).unwrap();
        let b = populate_memory(&p, &pol).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 10);
        assert!(a.positions().windows(2).all(|w| w[0] < w[1]));
        let c = populate_memory(&p, &pol.with_seed(5)).unwrap();
        assert_ne!(a.positions(), c.positions());
    }

    #[test]
    fn percentile_examples() {
        assert_eq!(percentile_threshold(&[0.3], 5.0).unwrap(), 0.3);
        let ten: Vec<f64> = (1..=10).map(|i| i as f64 / 10.0).collect();
        assert_eq!(percentile_threshold(&ten, 5.0).unwrap(), 0.1);
        assert_eq!(percentile_threshold(&ten, 50.0).unwrap(), 0.5);
        assert!(percentile_threshold(&[], 5.0).is_err());
    }

    #[test]
    fn percentile_of_uniform_draws() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let xs: Vec<f64> = (0..1000).map(|_| rng.gen()).collect();
        let t = percentile_threshold(&xs, 5.0).unwrap();
        // order statistic oracle: the 50th smallest after a full sort
        let mut sorted = xs.clone();
        sorted.sort_by(f64::total_cmp);
        assert_eq!(t, sorted[49]);
        assert!((0.03..=0.07).contains(&t), "{t}");
    }

    #[test]
    fn invalid_policies() {
        assert!(MemoryPolicy { k: 0, ..Default::default() }.validate().is_err());
        assert!(MemoryPolicy { theta: 0.0, ..Default::default() }.validate().is_err());
        assert!(MemoryPolicy { kind: PolicyKind::LowHPercentile, percentile: 100.0, ..Default::default() }
            .validate()
            .is_err());
    }
}
