//! Splits an encoded document into overlapping windows with the question
//! and a memory prefix, then checks the windows stitch back to the document.

use memqa::pipeline::{corpus_vocabulary, segment_document, EncodedSample, SegmentConfig};
use memqa::synthdata::{generate_corpus, GenConfig};

fn main() -> memqa::Result<()> {
    let corpus = generate_corpus(&GenConfig {
        n_samples: 4,
        seed: 3,
        ..GenConfig::default()
    })?;
    let vocab = corpus_vocabulary(&corpus)?;
    let sample = EncodedSample::encode(&corpus[0], &vocab)?;
    let memory: Vec<usize> = sample.doc.iter().copied().filter(|&t| vocab.is_memory_eligible(t)).take(8).collect();

    let cfg = SegmentConfig {
        max_seq_len: 64,
        overlap: 20,
    };
    let segments = segment_document(Some(&sample.question), &memory, &sample.doc, &cfg, vocab.markers())?;
    println!("document of {} tokens, {} windows", sample.doc.len(), segments.len());
    for (i, s) in segments.iter().enumerate() {
        println!(
            "window {i}: question {:?} memory {:?} context {:?} -> doc {:?}",
            s.question,
            s.memory,
            s.context,
            s.doc_range()
        );
    }

    let mut stitched = Vec::new();
    for s in &segments {
        let ctx = &s.ids[s.context.clone()];
        let skip = stitched.len() - s.doc_start;
        stitched.extend_from_slice(&ctx[skip..]);
    }
    assert_eq!(stitched, sample.doc);
    println!("first window: {}", vocab.detokenize(&segments[0].ids));
    Ok(())
}
