//! Beam-search decoding with 4-gram shallow fusion, compared against the
//! exhaustive search oracle and plain greedy decoding.
//!
//! ```bash
//! cargo run --release --example fused_decoding
//! ```

use cortex2text::data::Vocabulary;
use cortex2text::decode::{beam_search, exhaustive_decode, rescore, DecodeConfig};
use cortex2text::lm::fit_ngram;
use cortex2text::model::{Model, TransformerConfig};
use cortex2text::numerics::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> cortex2text::Result<()> {
    // A random (untrained) model over a 3-word vocabulary keeps the
    // search space small enough to enumerate exactly.
    let words: Vec<String> = ["sun", "moon", "tide"].iter().map(|s| s.to_string()).collect();
    let vocab = Vocabulary::from_words(words.iter())?;
    let model = Model::new(TransformerConfig::tiny(vocab.len(), 4), 9)?;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let features = Tensor::matrix(3, 4, (0..12).map(|_| rng.random_range(-1.0..1.0)).collect())?;

    let corpus: Vec<Vec<u32>> = ["sun tide", "moon tide", "sun moon tide"]
        .iter()
        .map(|s| vocab.encode(&s.split(' ').map(String::from).collect::<Vec<_>>()))
        .collect::<cortex2text::Result<_>>()?;
    let lm = fit_ngram(&corpus, 4, 0.4, vocab.len() as u32)?;

    for lm_weight in [0.0, 0.3, 1.0] {
        let cfg = DecodeConfig {
            beam_width: 64,
            lm_weight,
            max_len: 4,
            length_normalize: false,
        };
        let beam = beam_search(&model, &features, &lm, &vocab, &cfg)?;
        let full = exhaustive_decode(&model, &features, &lm, &vocab, lm_weight, 4)?;
        let again = rescore(&model, &features, &lm, lm_weight, &beam.word_ids)?;
        println!(
            "lm_weight {lm_weight:.1}: beam {:?} (score {:.4}), exhaustive {:?}, rescore {:.4}, agree: {}",
            beam.words,
            beam.score,
            full.words,
            again,
            beam.word_ids == full.word_ids && beam.score == again
        );
    }

    let greedy = beam_search(
        &model,
        &features,
        &lm,
        &vocab,
        &DecodeConfig {
            beam_width: 1,
            lm_weight: 0.0,
            max_len: 4,
            length_normalize: false,
        },
    )?;
    println!("greedy (beam 1, no fusion): {:?}", greedy.words);
    Ok(())
}
