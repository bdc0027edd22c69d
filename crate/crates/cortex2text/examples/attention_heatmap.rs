//! Run the whole pipeline on a miniature corpus, then export one
//! encoder-decoder attention head as CSV and a PGM heatmap.
//!
//! ```bash
//! cargo run --release --example attention_heatmap
//! ```

use cortex2text::pipeline::{self, RunConfig};

fn main() -> cortex2text::Result<()> {
    let dir = std::env::temp_dir().join("c2t_example_attention");
    std::fs::create_dir_all(&dir).ok();

    let cfg = RunConfig {
        out_dir: dir.clone(),
        seed: 4,
        repetitions: 3,
        noise_level: 1.0,
        kpca_max_landmarks: 400,
        d_model: 32,
        n_enc_layers: 2,
        n_dec_layers: 2,
        n_heads: 4,
        d_k: 8,
        d_v: 8,
        d_ff: 64,
        epochs: 25,
        batch_size: 4,
        lr: 1e-3,
        beam_width: 4,
        ..RunConfig::default()
    };

    // A 4-sentence corpus keeps this example under a minute.
    let sentences_path = dir.join("sentences.txt");
    std::fs::write(
        &sentences_path,
        "the fox jumps high\nsnow falls all day\nwe read old maps\nbells ring at noon\n",
    )
    .ok();
    let mut cfg = cfg;
    cfg.sentences = Some(sentences_path);

    pipeline::synth_data(&cfg)?;
    pipeline::extract_features_cmd(&cfg)?;
    pipeline::fit_kpca_cmd(&cfg)?;
    pipeline::train_cmd(&cfg)?;

    let (csv, pgm) = pipeline::export_attention_cmd(&cfg, "utt00000", 1, 2)?;
    println!("attention matrix: {}", csv.display());
    println!("heatmap:          {}", pgm.display());

    // Rows are decoder positions and must sum to one.
    let text = std::fs::read_to_string(&csv).expect("csv written");
    for (i, line) in text.lines().enumerate() {
        let sum: f64 = line.split(',').map(|v| v.parse::<f64>().unwrap()).sum();
        println!("row {i}: {} columns, sum {sum:.6}", line.split(',').count());
    }
    Ok(())
}
