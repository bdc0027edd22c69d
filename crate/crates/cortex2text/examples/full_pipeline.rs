//! The whole pipeline in one run: synthesize, filter + extract features,
//! fit kernel PCA, train, and evaluate WER over vocabulary subsets.
//! Mirrors `c2t synth-data && c2t extract-features && c2t fit-kpca &&
//! c2t train && c2t evaluate` with a desk-scale configuration.
//!
//! ```bash
//! cargo run --release --example full_pipeline
//! ```

use cortex2text::pipeline::{self, RunConfig};

fn main() -> cortex2text::Result<()> {
    let dir = std::env::temp_dir().join("c2t_example_pipeline");
    std::fs::create_dir_all(&dir).ok();

    // 10 sentences x 3 repetitions, a small model, early stop on
    // converged training loss.
    let sentences: String = pipeline::load_sentences(None)?[..10].join("\n");
    let sentences_path = dir.join("sentences.txt");
    std::fs::write(&sentences_path, sentences).ok();

    let cfg = RunConfig {
        out_dir: dir.clone(),
        sentences: Some(sentences_path),
        seed: 1,
        repetitions: 3,
        noise_level: 1.0,
        kpca_max_landmarks: 512,
        d_model: 64,
        n_enc_layers: 2,
        n_dec_layers: 2,
        n_heads: 4,
        d_k: 16,
        d_v: 16,
        d_ff: 128,
        epochs: 120,
        batch_size: 6,
        lr: 1e-3,
        stop_at_train_loss: Some(0.02),
        beam_width: 10,
        timing: true,
        ..RunConfig::default()
    };

    pipeline::synth_data(&cfg)?;
    pipeline::extract_features_cmd(&cfg)?;
    pipeline::fit_kpca_cmd(&cfg)?;
    pipeline::train_cmd(&cfg)?;
    let rows = pipeline::evaluate_cmd(&cfg)?;
    pipeline::decode_cmd(&cfg)?;

    println!("\nartifacts in {}:", dir.display());
    for name in [
        "manifest.jsonl",
        "explained_variance.csv",
        "train_metrics.csv",
        "checkpoint.c2t",
        "lm.ngrams",
        "wer_by_subset.csv",
        "decodes.tsv",
        "timing.csv",
    ] {
        println!("  {name}");
    }
    let evaluated = rows.iter().filter(|r| !r.wer.is_nan()).count();
    println!("{evaluated}/{} subset rows had test utterances to score", rows.len());
    Ok(())
}
