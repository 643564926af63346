//! Per-token entropy heatmaps: absolute values from a profile, and the
//! change between two stage-1 snapshots.

use memqa::analysis::{export_heatmap, heatmap_tsv, HeatmapMode};
use memqa::memory::build_entropy_profile;
use memqa::nnet::{ModelConfig, ModelState};
use memqa::pipeline::{corpus_vocabulary, EncodedSample, SegmentConfig};
use memqa::synthdata::{generate_corpus, GenConfig};

fn main() -> memqa::Result<()> {
    let corpus = generate_corpus(&GenConfig {
        n_samples: 4,
        n_paragraphs: 4,
        seed: 2,
        ..GenConfig::default()
    })?;
    let vocab = corpus_vocabulary(&corpus)?;
    let sample = EncodedSample::encode(&corpus[0], &vocab)?;
    let seg = SegmentConfig {
        max_seq_len: 64,
        overlap: 20,
    };
    let mut cfg = ModelConfig::toy(vocab.len(), vocab.markers().pad);
    cfg.max_seq_len = 64;

    let mut before = ModelState::new(cfg.clone(), 1)?;
    before.freeze_lm_head();
    // a second encoder under the same LM head stands in for a later epoch
    let mut after = ModelState::new(cfg, 2)?;
    after.params.lm_w = before.params.lm_w.clone();
    after.params.lm_b = before.params.lm_b.clone();
    after.freeze_lm_head();

    let p0 = build_entropy_profile(&before, &vocab, &sample.question, &sample.doc, &seg, true)?;
    let p1 = build_entropy_profile(&after, &vocab, &sample.question, &sample.doc, &seg, true)?;

    let abs = export_heatmap(&p1, None, &vocab, HeatmapMode::Absolute)?;
    let delta = export_heatmap(&p1, Some(&p0), &vocab, HeatmapMode::EpochDelta)?;
    let same = export_heatmap(&p0, Some(&p0), &vocab, HeatmapMode::EpochDelta)?;
    assert!(same.iter().all(|r| r.value == 0.0));

    print!("{}", heatmap_tsv(&abs[..12]));
    print!("{}", heatmap_tsv(&delta[..12]));
    Ok(())
}
