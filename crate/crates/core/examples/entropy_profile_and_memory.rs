//! Scores every document token with an (untrained) frozen-head encoder and
//! fills a memory buffer under each selection policy.

use memqa::memory::{build_entropy_profile, populate_memory, MemoryPolicy, PolicyKind};
use memqa::nnet::{ModelConfig, ModelState};
use memqa::pipeline::{corpus_vocabulary, EncodedSample, SegmentConfig};
use memqa::synthdata::{generate_corpus, GenConfig};

fn main() -> memqa::Result<()> {
    let corpus = generate_corpus(&GenConfig {
        n_samples: 8,
        seed: 11,
        ..GenConfig::default()
    })?;
    let vocab = corpus_vocabulary(&corpus)?;
    let sample = EncodedSample::encode(&corpus[0], &vocab)?;

    let mut model_cfg = ModelConfig::toy(vocab.len(), vocab.markers().pad);
    model_cfg.max_seq_len = 96;
    let mut model = ModelState::new(model_cfg, 5)?;
    model.freeze_lm_head();

    let seg = SegmentConfig {
        max_seq_len: 96,
        overlap: 20,
    };
    let profile = build_entropy_profile(&model, &vocab, &sample.question, &sample.doc, &seg, true)?;
    let hs = profile.entropies();
    let max = hs.iter().copied().fold(f64::MIN, f64::max);
    let min = hs.iter().copied().fold(f64::MAX, f64::min);
    println!("{} tokens, H in [{min:.6}, {max:.6}], ln(n)/n = {:.6}", hs.len(), (vocab.len() as f64).ln() / vocab.len() as f64);

    for kind in [
        PolicyKind::HighestH,
        PolicyKind::LowHFixed,
        PolicyKind::LowHPercentile,
        PolicyKind::Random,
        PolicyKind::None,
    ] {
        let policy = MemoryPolicy {
            k: 12,
            ..MemoryPolicy::of(kind)
        };
        let mem = populate_memory(&profile, &policy)?;
        println!("{kind:>16}: {:2} tokens  {}", mem.len(), vocab.detokenize(&mem.ids()));
    }
    Ok(())
}
