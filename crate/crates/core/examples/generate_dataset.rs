//! Generates a small synthetic 2-hop corpus and prints one sample.
//!
//! cargo run --example generate_dataset -- [n_samples] [seed]

use memqa::synthdata::{generate_corpus, GenConfig};

fn main() -> memqa::Result<()> {
    let mut args = std::env::args().skip(1);
    let n_samples = args.next().and_then(|a| a.parse().ok()).unwrap_or(20);
    let seed = args.next().and_then(|a| a.parse().ok()).unwrap_or(7);
    let cfg = GenConfig {
        n_samples,
        seed,
        ..GenConfig::default()
    };
    let corpus = generate_corpus(&cfg)?;

    let s = &corpus[0];
    println!("id: {}", s.id);
    println!("question: {}", s.question.join(" "));
    println!("type: {:?}  answer: {}", s.question_type, s.answer_tokens().join(" "));
    for (i, p) in s.paragraphs.iter().enumerate() {
        let tag = if p.is_supporting { "*" } else { " " };
        println!("{tag} [{i}] {}", p.title.join(" "));
        for sent in &p.sentences {
            println!("      {}", sent.join(" "));
        }
    }

    let spans = corpus.iter().filter(|s| s.question_type == memqa::synthdata::QuestionType::Span).count();
    println!("{} samples, {} span questions", corpus.len(), spans);
    Ok(())
}
