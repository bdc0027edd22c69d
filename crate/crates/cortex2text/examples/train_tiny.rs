//! Train a small transformer end-to-end on a three-sentence synthetic
//! corpus and watch the loss fall.
//!
//! ```bash
//! cargo run --release --example train_tiny
//! ```

use cortex2text::data::{generate_synthetic, split, SplitSpec, Vocabulary};
use cortex2text::model::{train, Model, TrainOptions, TransformerConfig};
use cortex2text::numerics::Tensor;
use cortex2text::reduce::{append_deltas, fit_kpca, KernelParams};
use cortex2text::signal::{extract_features, preprocess};

fn main() -> cortex2text::Result<()> {
    let sentences: Vec<String> = ["we sail at dawn", "the owl hunts at night", "rain taps the glass"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let corpus = generate_synthetic(&sentences, 4, 5, 1.0)?;
    let vocab = Vocabulary::from_corpus(&corpus)?;
    let parts = split(corpus.len(), &SplitSpec::new(5))?;

    // Feature pipeline: filter -> 155 statistics -> KPCA 30 -> deltas 90.
    let raw: Vec<Tensor> = corpus
        .recordings
        .iter()
        .map(|r| Ok(extract_features(&preprocess(r)?)?.into_matrix()))
        .collect::<cortex2text::Result<_>>()?;
    let mut rows = Vec::new();
    let mut n = 0;
    for &i in &parts.train {
        n += raw[i].rows();
        rows.extend_from_slice(raw[i].data());
    }
    let kpca = fit_kpca(&Tensor::matrix(n, 155, rows)?, KernelParams::polynomial3(155), 30, 400, 5)?;
    let build = |indices: &[usize]| -> cortex2text::Result<Vec<(Tensor, Vec<u32>)>> {
        indices
            .iter()
            .map(|&i| {
                Ok((
                    append_deltas(&kpca.transform(&raw[i])?),
                    vocab.encode(&corpus.recordings[i].transcript)?,
                ))
            })
            .collect()
    };
    let train_set = build(&parts.train)?;
    let val_set = build(&parts.val)?;

    let config = TransformerConfig {
        d_model: 32,
        n_enc_layers: 1,
        n_dec_layers: 1,
        n_heads: 4,
        d_k: 8,
        d_v: 8,
        d_ff: 64,
        input_dim: 90,
        vocab_size: vocab.len(),
        max_src_len: 2048,
        max_tgt_len: 32,
        dropout: 0.0,
        label_smoothing: 0.0,
        tie_output_embedding: true,
    };
    let model = Model::new(config, 5)?;
    println!(
        "training {} parameters on {} utterances ({} words in vocabulary)",
        model.params.param_count(),
        train_set.len(),
        vocab.n_words()
    );

    let opts = TrainOptions {
        epochs: 30,
        batch_size: 5,
        learning_rate: 1e-3,
        seed: 5,
        ..TrainOptions::default()
    };
    let report = train(model, &train_set, &val_set, &opts)?;
    for m in report.metrics.iter().step_by(5) {
        println!(
            "epoch {:3}  train loss {:.4}  val loss {:.4}  ({:.2} s)",
            m.epoch, m.train_loss, m.val_loss, m.wall_seconds
        );
    }
    println!(
        "best validation loss {:.4} at epoch {}",
        report.best_val_loss, report.best_epoch
    );
    Ok(())
}
