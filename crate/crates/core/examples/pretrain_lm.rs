//! Masked-LM pretraining of the stage-1 encoder on a tiny corpus. Prints the
//! loss curve and saves the frozen-head checkpoint.
//!
//! cargo run --release --example pretrain_lm -- [out.ckpt]

use memqa::config::RunConfig;
use memqa::experiment::{pretrain_stage1, Dataset, EncodedDataset};
use memqa::nnet::checkpoint;

fn main() -> memqa::Result<()> {
    let mut cfg = RunConfig::default();
    for (k, v) in [
        ("n_train", "60"),
        ("n_dev", "10"),
        ("n_paragraphs", "6"),
        ("d_model", "32"),
        ("n_heads", "2"),
        ("d_ff", "64"),
        ("max_seq_len", "64"),
        ("mem_cap", "8"),
        ("mlm_steps", "120"),
    ] {
        cfg.set(k, v)?;
    }
    let data = EncodedDataset::new(&Dataset::generate(&cfg)?)?;
    let (state, report) = pretrain_stage1(&data, &cfg)?;
    for (i, chunk) in report.losses.chunks(20).enumerate() {
        let mean = chunk.iter().sum::<f64>() / chunk.len() as f64;
        println!("steps {:4}-{:4}: loss {mean:.4}", i * 20, i * 20 + chunk.len() - 1);
    }
    state.require_frozen()?;
    println!("lm head {}", &state.params.lm_head_hash()[..16]);

    if let Some(path) = std::env::args().nth(1) {
        checkpoint::save(&state, path.as_ref())?;
        println!("wrote {path}");
    }
    Ok(())
}
