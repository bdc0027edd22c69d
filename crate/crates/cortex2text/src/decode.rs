//! Beam-search decoding with shallow-fusion language-model scoring, plus
//! a brute-force exhaustive search used as its equivalence oracle.

use crate::data::{Vocabulary, EOS_ID};
use crate::error::{Error, Result};
use crate::lm::NgramLm;
use crate::model::Model;
use crate::numerics::Tensor;

/// Beam width, fusion weight, and output length cap.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecodeConfig {
    pub beam_width: usize,
    pub lm_weight: f64,
    /// Maximum emitted tokens per utterance, end token included.
    pub max_len: usize,
    /// Select the final hypothesis by per-token average score instead of
    /// the raw sum.
    pub length_normalize: bool,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            beam_width: 10,
            lm_weight: 0.3,
            max_len: 32,
            length_normalize: false,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beam_width == 0 || self.max_len == 0 {
            return Err(Error::InvalidConfig(
                "beam width and max length must be >= 1".into(),
            ));
        }
        if self.lm_weight < 0.0 {
            return Err(Error::InvalidConfig("lm weight must be >= 0".into()));
        }
        Ok(())
    }
}

/// Partial decode: the token prefix (beginning with the start token) and
/// its fused score.
#[derive(Clone, Debug)]
pub struct BeamHypothesis {
    pub tokens: Vec<u32>,
    pub score: f64,
    pub finished: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecodeResult {
    /// Emitted word ids, end token excluded.
    pub word_ids: Vec<u32>,
    pub words: Vec<String>,
    pub score: f64,
    /// True when no hypothesis finished within the length cap and the
    /// best unfinished one was returned instead.
    pub truncated: bool,
}

/// Per-token fused increment. All three scoring paths (beam, exhaustive,
/// rescore) go through this one expression so ties and re-scores agree
/// bit-for-bit.
fn fused_increment(model_logprob: f64, lm_logprob: f64, lm_weight: f64) -> f64 {
    model_logprob + lm_weight * lm_logprob
}

fn log_softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    row.iter().map(|v| v - lse).collect()
}

/// Score ordering with deterministic ties: higher score first, then the
/// lexicographically smaller token sequence.
fn better(score_a: f64, tokens_a: &[u32], score_b: f64, tokens_b: &[u32]) -> std::cmp::Ordering {
    score_b
        .partial_cmp(&score_a)
        .expect("finite decode scores")
        .then_with(|| tokens_a.cmp(tokens_b))
}

fn candidate_tokens(vocab_size: usize) -> impl Iterator<Item = u32> {
    // Words plus the end token; pad and start are never emitted.
    (3..vocab_size as u32).chain(std::iter::once(EOS_ID))
}

fn to_result(
    tokens: &[u32],
    score: f64,
    truncated: bool,
    vocab: &Vocabulary,
) -> Result<DecodeResult> {
    let word_ids: Vec<u32> = tokens[1..]
        .iter()
        .copied()
        .filter(|&t| t != EOS_ID)
        .collect();
    Ok(DecodeResult {
        words: vocab.decode(&word_ids)?,
        word_ids,
        score,
        truncated,
    })
}

/// Standard beam search over the trained model with shallow fusion.
///
/// Each live hypothesis expands over the full emittable vocabulary with
/// score `log softmax(model logits) + lm_weight * lm score`; the top
/// `beam_width` candidates survive, hypotheses emitting the end token
/// move to the finished pool, and search stops when no live hypothesis
/// remains or `max_len` tokens were emitted. Returns the best finished
/// hypothesis, or the best unfinished one flagged `truncated`.
pub fn beam_search(
    model: &Model,
    features: &Tensor,
    lm: &NgramLm,
    vocab: &Vocabulary,
    cfg: &DecodeConfig,
) -> Result<DecodeResult> {
    cfg.validate()?;
    let memory = model.encode_memory(features)?;
    beam_search_with_memory(model, &memory, lm, vocab, cfg)
}

pub fn beam_search_with_memory(
    model: &Model,
    memory: &Tensor,
    lm: &NgramLm,
    vocab: &Vocabulary,
    cfg: &DecodeConfig,
) -> Result<DecodeResult> {
    cfg.validate()?;
    let vocab_size = model.config.vocab_size;
    // The decoder prefix holds sos plus everything emitted so far.
    let max_emissions = cfg.max_len.min(model.config.max_tgt_len - 1);
    let mut live = vec![BeamHypothesis {
        tokens: vec![crate::data::SOS_ID],
        score: 0.0,
        finished: false,
    }];
    let mut finished: Vec<BeamHypothesis> = Vec::new();

    for _step in 0..max_emissions {
        let mut candidates: Vec<BeamHypothesis> = Vec::new();
        for hyp in &live {
            let logits = model.forward_logits_with_memory(memory, &hyp.tokens)?;
            let logprobs = log_softmax(logits.row(logits.rows() - 1));
            for token in candidate_tokens(vocab_size) {
                let lm_lp = lm.logprob(token, &hyp.tokens)?;
                let score = hyp.score
                    + fused_increment(logprobs[token as usize], lm_lp, cfg.lm_weight);
                if !score.is_finite() {
                    return Err(Error::NonFiniteInput);
                }
                let mut tokens = hyp.tokens.clone();
                tokens.push(token);
                candidates.push(BeamHypothesis {
                    tokens,
                    score,
                    finished: token == EOS_ID,
                });
            }
        }
        candidates.sort_by(|a, b| better(a.score, &a.tokens, b.score, &b.tokens));
        candidates.truncate(cfg.beam_width);
        live = Vec::new();
        for cand in candidates {
            if cand.finished {
                finished.push(cand);
            } else {
                live.push(cand);
            }
        }
        if live.is_empty() {
            break;
        }
    }

    let rank_score = |h: &BeamHypothesis| {
        if cfg.length_normalize {
            h.score / (h.tokens.len() - 1) as f64
        } else {
            h.score
        }
    };
    let pick = |pool: &[BeamHypothesis]| -> Option<BeamHypothesis> {
        pool.iter()
            .min_by(|a, b| better(rank_score(a), &a.tokens, rank_score(b), &b.tokens))
            .cloned()
    };
    if let Some(best) = pick(&finished) {
        to_result(&best.tokens, best.score, false, vocab)
    } else if let Some(best) = pick(&live) {
        to_result(&best.tokens, best.score, true, vocab)
    } else {
        unreachable!("beam search always holds at least one hypothesis")
    }
}

const EXHAUSTIVE_GUARD: u64 = 1_000_000;

/// Enumerate every token sequence of up to `max_len` emissions ending in
/// the end token and return the best fused score, with the same
/// tie-break as the beam. The search tree is capped at one million
/// sequences.
pub fn exhaustive_decode(
    model: &Model,
    features: &Tensor,
    lm: &NgramLm,
    vocab: &Vocabulary,
    lm_weight: f64,
    max_len: usize,
) -> Result<DecodeResult> {
    let max_len = max_len.min(model.config.max_tgt_len - 1);
    let n_words = (model.config.vocab_size - 3) as u64;
    let mut sequences: u64 = 0;
    let mut layer: u64 = 1;
    for _ in 0..max_len {
        sequences = sequences.saturating_add(layer);
        layer = layer.saturating_mul(n_words);
    }
    if sequences > EXHAUSTIVE_GUARD {
        return Err(Error::ExhaustiveGuard {
            sequences,
            limit: EXHAUSTIVE_GUARD,
        });
    }

    let memory = model.encode_memory(features)?;
    let mut best: Option<(Vec<u32>, f64)> = None;
    let mut prefix = vec![crate::data::SOS_ID];
    explore(
        model,
        &memory,
        lm,
        lm_weight,
        max_len,
        &mut prefix,
        0.0,
        &mut best,
    )?;
    let (tokens, score) = best.expect("eos alone is always enumerable");
    to_result(&tokens, score, false, vocab)
}

#[allow(clippy::too_many_arguments)]
fn explore(
    model: &Model,
    memory: &Tensor,
    lm: &NgramLm,
    lm_weight: f64,
    max_len: usize,
    prefix: &mut Vec<u32>,
    score: f64,
    best: &mut Option<(Vec<u32>, f64)>,
) -> Result<()> {
    let emitted = prefix.len() - 1;
    let logits = model.forward_logits_with_memory(memory, prefix)?;
    let logprobs = log_softmax(logits.row(logits.rows() - 1));

    // Finishing here is always allowed (emitted + 1 <= max_len).
    let eos_lp = lm.logprob(EOS_ID, prefix)?;
    let eos_score = score + fused_increment(logprobs[EOS_ID as usize], eos_lp, lm_weight);
    let mut tokens = prefix.clone();
    tokens.push(EOS_ID);
    let replace = match best {
        None => true,
        Some((bt, bs)) => better(eos_score, &tokens, *bs, bt).is_lt(),
    };
    if replace {
        *best = Some((tokens, eos_score));
    }

    if emitted + 1 < max_len {
        for word in 3..model.config.vocab_size as u32 {
            let lm_lp = lm.logprob(word, prefix)?;
            let next = score + fused_increment(logprobs[word as usize], lm_lp, lm_weight);
            prefix.push(word);
            explore(model, memory, lm, lm_weight, max_len, prefix, next, best)?;
            prefix.pop();
        }
    }
    Ok(())
}

/// Independent re-scoring of a finished word sequence through the model
/// and language model, summing per-token increments left to right.
pub fn rescore(
    model: &Model,
    features: &Tensor,
    lm: &NgramLm,
    lm_weight: f64,
    word_ids: &[u32],
) -> Result<f64> {
    let memory = model.encode_memory(features)?;
    let mut tokens = vec![crate::data::SOS_ID];
    let mut score = 0.0;
    for &token in word_ids.iter().chain(std::iter::once(&EOS_ID)) {
        let logits = model.forward_logits_with_memory(&memory, &tokens)?;
        let logprobs = log_softmax(logits.row(logits.rows() - 1));
        let lm_lp = lm.logprob(token, &tokens)?;
        score += fused_increment(logprobs[token as usize], lm_lp, lm_weight);
        tokens.push(token);
    }
    Ok(score)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::fit_ngram;
    use crate::model::TransformerConfig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Vocabulary with `n` words named wa, wb, ...
    fn test_vocab(n: usize) -> Vocabulary {
        let words: Vec<String> = (0..n)
            .map(|i| format!("w{}", (b'a' + i as u8) as char))
            .collect();
        Vocabulary::from_words(words.iter()).unwrap()
    }

    fn test_lm(vocab: &Vocabulary, rng: &mut ChaCha8Rng) -> NgramLm {
        let word_ids: Vec<u32> = (3..vocab.len() as u32).collect();
        let corpus: Vec<Vec<u32>> = (0..5)
            .map(|_| {
                (0..rng.random_range(1..4))
                    .map(|_| word_ids[rng.random_range(0..word_ids.len())])
                    .collect()
            })
            .collect();
        fit_ngram(&corpus, 4, 0.4, vocab.len() as u32).unwrap()
    }

    fn random_setup(seed: u64, vocab_size: usize) -> (Model, Tensor, NgramLm, Vocabulary) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vocab = test_vocab(vocab_size - 3);
        let model = Model::new(TransformerConfig::tiny(vocab_size, 4), seed).unwrap();
        let features = Tensor::matrix(3, 4, (0..12).map(|_| rng.random_range(-1.0..1.0)).collect())
            .unwrap();
        let lm = test_lm(&vocab, &mut rng);
        (model, features, lm, vocab)
    }

    #[test]
    fn unit_beam_without_lm_is_greedy() {
        for seed in 0..10 {
            let (model, features, lm, vocab) = random_setup(seed, 7);
            let cfg = DecodeConfig {
                beam_width: 1,
                lm_weight: 0.0,
                max_len: 5,
                length_normalize: false,
            };
            let got = beam_search(&model, &features, &lm, &vocab, &cfg).unwrap();

            // Independent greedy loop: argmax at each step, smallest id on
            // ties.
            let memory = model.encode_memory(&features).unwrap();
            let mut tokens = vec![crate::data::SOS_ID];
            let mut words = Vec::new();
            for _ in 0..5 {
                let logits = model.forward_logits_with_memory(&memory, &tokens).unwrap();
                let lp = log_softmax(logits.row(logits.rows() - 1));
                let next = candidate_tokens(model.config.vocab_size)
                    .min_by(|&a, &b| {
                        lp[b as usize]
                            .partial_cmp(&lp[a as usize])
                            .unwrap()
                            .then(a.cmp(&b))
                    })
                    .unwrap();
                tokens.push(next);
                if next == EOS_ID {
                    break;
                }
                words.push(next);
            }
            if *tokens.last().unwrap() == EOS_ID {
                assert_eq!(got.word_ids, words, "seed {seed}");
                assert!(!got.truncated);
            } else {
                assert!(got.truncated, "seed {seed}");
            }
        }
    }

    #[test]
    fn saturating_beam_matches_exhaustive() {
        // V=5 gives two real words; beam width 125 >= 5^3 saturates.
        for seed in 0..10 {
            let (model, features, lm, vocab) = random_setup(seed, 5);
            let cfg = DecodeConfig {
                beam_width: 125,
                lm_weight: 0.3,
                max_len: 3,
                length_normalize: false,
            };
            let beam = beam_search(&model, &features, &lm, &vocab, &cfg).unwrap();
            let full = exhaustive_decode(&model, &features, &lm, &vocab, 0.3, 3).unwrap();
            assert_eq!(beam.word_ids, full.word_ids, "seed {seed}");
            assert_eq!(beam.score, full.score, "seed {seed}");
        }
    }

    #[test]
    fn decoding_stops_at_first_eos() {
        // Zero weights except a large end-token bias: eos wins at step 1.
        let mut model = crate::model::Model::zeroed(TransformerConfig::tiny(6, 4)).unwrap();
        let idx = model
            .params
            .names()
            .iter()
            .position(|n| n == "decoder.output_bias")
            .unwrap();
        model.params.tensors_mut()[idx].data_mut()[EOS_ID as usize] = 50.0;
        let vocab = test_vocab(3);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let lm = test_lm(&vocab, &mut rng);
        let features = Tensor::matrix(2, 4, vec![0.1; 8]).unwrap();
        let got = beam_search(&model, &features, &lm, &vocab, &DecodeConfig::default()).unwrap();
        assert!(got.words.is_empty());
        assert!(!got.truncated);
    }

    #[test]
    fn never_finishing_model_returns_truncated_best() {
        let mut model = crate::model::Model::zeroed(TransformerConfig::tiny(6, 4)).unwrap();
        let idx = model
            .params
            .names()
            .iter()
            .position(|n| n == "decoder.output_bias")
            .unwrap();
        model.params.tensors_mut()[idx].data_mut()[EOS_ID as usize] = -1e9;
        let vocab = test_vocab(3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let lm = test_lm(&vocab, &mut rng);
        let features = Tensor::matrix(2, 4, vec![0.1; 8]).unwrap();
        // Narrow beam: the awful end-token candidate is pruned instead of
        // pooled, so nothing ever finishes.
        let cfg = DecodeConfig {
            beam_width: 2,
            max_len: 4,
            ..DecodeConfig::default()
        };
        let got = beam_search(&model, &features, &lm, &vocab, &cfg).unwrap();
        assert!(got.truncated);
        assert_eq!(got.word_ids.len(), 4);
    }

    #[test]
    fn single_word_vocabulary_repeats_best_length() {
        // V=4: one real word plus eos.
        let (model, features, lm, vocab) = random_setup(3, 4);
        let full = exhaustive_decode(&model, &features, &lm, &vocab, 0.3, 3).unwrap();
        assert!(full.word_ids.iter().all(|&w| w == 3));
        assert!(full.word_ids.len() <= 2);
        let cfg = DecodeConfig {
            beam_width: 64,
            lm_weight: 0.3,
            max_len: 3,
            length_normalize: false,
        };
        let beam = beam_search(&model, &features, &lm, &vocab, &cfg).unwrap();
        assert_eq!(beam, full);
    }

    #[test]
    fn exhaustive_is_deterministic() {
        let (model, features, lm, vocab) = random_setup(4, 5);
        let a = exhaustive_decode(&model, &features, &lm, &vocab, 0.3, 3).unwrap();
        let b = exhaustive_decode(&model, &features, &lm, &vocab, 0.3, 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn exhaustive_guard_rejects_large_searches() {
        let (model, features, lm, vocab) = random_setup(5, 43);
        match exhaustive_decode(&model, &features, &lm, &vocab, 0.3, 5) {
            Err(Error::ExhaustiveGuard { sequences, limit }) => {
                assert!(sequences > limit);
            }
            other => panic!("expected guard error, got {other:?}"),
        }
    }

    #[test]
    fn best_score_is_monotone_in_beam_width() {
        for seed in 20..30 {
            let (model, features, lm, vocab) = random_setup(seed, 6);
            let memory = model.encode_memory(&features).unwrap();
            let mut prev: Option<f64> = None;
            for b in [1usize, 2, 4, 8] {
                let cfg = DecodeConfig {
                    beam_width: b,
                    lm_weight: 0.3,
                    max_len: 4,
                    length_normalize: false,
                };
                let got =
                    beam_search_with_memory(&model, &memory, &lm, &vocab, &cfg).unwrap();
                if got.truncated {
                    continue;
                }
                if let Some(p) = prev {
                    assert!(got.score >= p - 1e-12, "seed {seed} width {b}: {} < {p}", got.score);
                }
                prev = Some(got.score);
            }
        }
    }

    #[test]
    fn returned_score_matches_independent_rescore_exactly() {
        for seed in 40..45 {
            let (model, features, lm, vocab) = random_setup(seed, 6);
            let cfg = DecodeConfig {
                beam_width: 4,
                lm_weight: 0.5,
                max_len: 4,
                length_normalize: false,
            };
            let got = beam_search(&model, &features, &lm, &vocab, &cfg).unwrap();
            if got.truncated {
                continue;
            }
            let again = rescore(&model, &features, &lm, 0.5, &got.word_ids).unwrap();
            assert_eq!(got.score, again, "seed {seed}");
            // Both fused addends are <= 0, so scores never increase with
            // length.
            assert!(got.score <= 0.0);
        }
    }
}
