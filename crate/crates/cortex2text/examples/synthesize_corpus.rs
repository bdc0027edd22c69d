//! Generate a synthetic multi-channel corpus and write it to disk as
//! recordings plus a JSON-lines manifest.
//!
//! ```bash
//! cargo run --release --example synthesize_corpus
//! ```

use cortex2text::data::{generate_synthetic, load_corpus, save_corpus};
use cortex2text::pipeline::load_sentences;

fn main() -> cortex2text::Result<()> {
    let sentences = load_sentences(None)?;
    println!("{} sentences, e.g. {:?}", sentences.len(), sentences[0]);

    let corpus = generate_synthetic(&sentences, 3, 42, 1.0)?;
    println!(
        "generated {} utterances: {} unique sentences, {} unique words",
        corpus.len(),
        corpus.unique_sentences().len(),
        corpus.unique_words().len()
    );
    let first = &corpus.recordings[0];
    println!(
        "first utterance: {:?}, {} channels x {} samples ({:.2} s at {} Hz)",
        first.transcript.join(" "),
        first.samples.len(),
        first.len(),
        first.duration_secs(),
        first.sample_rate
    );

    let dir = std::env::temp_dir().join("c2t_example_corpus");
    std::fs::create_dir_all(&dir).ok();
    let manifest = save_corpus(&dir, &corpus, 42)?;
    println!("wrote {}", manifest.display());

    let (reloaded, entries) = load_corpus(&manifest)?;
    println!(
        "reloaded {} utterances; first entry id {} seed {}",
        reloaded.len(),
        entries[0].id,
        entries[0].seed
    );
    Ok(())
}
