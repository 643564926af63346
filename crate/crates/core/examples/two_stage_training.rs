//! The full two-stage loop on a small corpus: pretrain stage 1, then train
//! stage 2 with Low-H memories and sync the encoder back after each epoch.
//!
//! cargo run --release --example two_stage_training -- [policy] [epochs]

use memqa::config::RunConfig;
use memqa::experiment::{metrics_csv, pretrain_stage1, train, Dataset, EncodedDataset};

fn main() -> memqa::Result<()> {
    let mut args = std::env::args().skip(1);
    let mut cfg = RunConfig::default();
    for (k, v) in [
        ("n_train", "80"),
        ("n_dev", "20"),
        ("n_paragraphs", "6"),
        ("d_model", "32"),
        ("n_heads", "2"),
        ("d_ff", "64"),
        ("max_seq_len", "64"),
        ("mem_cap", "8"),
        ("mlm_steps", "100"),
    ] {
        cfg.set(k, v)?;
    }
    if let Some(p) = args.next() {
        cfg.set("policy", &p)?;
    }
    if let Some(e) = args.next() {
        cfg.set("epochs", &e)?;
    }
    cfg.validate()?;

    let data = EncodedDataset::new(&Dataset::generate(&cfg)?)?;
    let (pretrained, _) = pretrain_stage1(&data, &cfg)?;
    let outcome = train(&data, &pretrained, &cfg, |m| {
        println!(
            "epoch {}: loss {:.4}  dev answer F1 {:.3}  H sup {:.6} dis {:.6}",
            m.epoch, m.loss.total, m.dev_answer_f1, m.entropy.supporting, m.entropy.distractor
        );
    })?;

    for s in &outcome.sync_log {
        assert_eq!(s.stage1_encoder, s.stage2_encoder);
        assert_eq!(s.stage1_lm_head, outcome.pretrained_lm_head);
    }
    print!("{}", metrics_csv(&outcome.initial_entropy, &outcome.epochs));
    Ok(())
}
