//! Word-level n-gram language model with stupid-backoff scoring, used
//! for shallow fusion during decoding.
//!
//! Scores are log relative frequencies with a fixed multiplicative
//! penalty per backoff level and an add-1 unigram floor; they are not a
//! normalized distribution.

use crate::data::{Vocabulary, EOS_ID, PAD_ID, SOS_ID};
use crate::error::{Error, Result};
use std::collections::HashMap;
use std::io::{BufWriter, Write};
use std::path::Path;

pub const DEFAULT_ORDER: usize = 4;
pub const DEFAULT_BACKOFF_ALPHA: f64 = 0.4;

/// Count tables for orders 1..=order, keyed by word-id n-grams.
#[derive(Clone, Debug)]
pub struct NgramLm {
    order: usize,
    alpha: f64,
    vocab_size: u32,
    /// counts[k-1]: k-gram counts over sos-padded, eos-terminated
    /// sentences.
    counts: Vec<HashMap<Vec<u32>, u64>>,
    /// contexts[k-1]: prefix counts (sums of continuations) for k-grams.
    contexts: Vec<HashMap<Vec<u32>, u64>>,
    unigram_total: u64,
}

/// Count all n-grams up to `order` over word-id sentences. Each order k
/// pads with k-1 start tokens and one end token, so every query context
/// that decoding can produce has a denominator.
pub fn fit_ngram(
    sentences: &[Vec<u32>],
    order: usize,
    alpha: f64,
    vocab_size: u32,
) -> Result<NgramLm> {
    if sentences.is_empty() {
        return Err(Error::InvalidConfig("empty corpus".into()));
    }
    if order == 0 {
        return Err(Error::InvalidConfig("order must be >= 1".into()));
    }
    if !(0.0..=1.0).contains(&alpha) || alpha == 0.0 {
        return Err(Error::InvalidConfig(format!("backoff alpha {alpha}")));
    }
    for s in sentences {
        for &id in s {
            if id < 3 || id >= vocab_size {
                return Err(Error::UnknownTokenId(id));
            }
        }
    }

    let mut counts: Vec<HashMap<Vec<u32>, u64>> = vec![HashMap::new(); order];
    let mut contexts: Vec<HashMap<Vec<u32>, u64>> = vec![HashMap::new(); order];
    for sentence in sentences {
        for k in 1..=order {
            let mut seq: Vec<u32> = vec![SOS_ID; k - 1];
            seq.extend_from_slice(sentence);
            seq.push(EOS_ID);
            for window in seq.windows(k) {
                *counts[k - 1].entry(window.to_vec()).or_insert(0) += 1;
                *contexts[k - 1].entry(window[..k - 1].to_vec()).or_insert(0) += 1;
            }
        }
    }
    let unigram_total = contexts[0][&Vec::new()];
    Ok(NgramLm {
        order,
        alpha,
        vocab_size,
        counts,
        contexts,
        unigram_total,
    })
}

impl NgramLm {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn vocab_size(&self) -> u32 {
        self.vocab_size
    }

    /// Token types eligible for scoring: corpus words plus the end token.
    fn scorable_types(&self) -> u64 {
        self.vocab_size as u64 - 2
    }

    /// Stupid-backoff log score of `word` after `history` (most recent
    /// last). The history may include the start token; only the last
    /// `order - 1` entries are used.
    ///
    /// Highest matching order contributes its log relative frequency;
    /// each backoff level multiplies by alpha; the base case is the
    /// add-1-smoothed unigram, so no query is ever -inf.
    pub fn logprob(&self, word: u32, history: &[u32]) -> Result<f64> {
        if word == PAD_ID || word == SOS_ID || word >= self.vocab_size {
            return Err(Error::UnknownTokenId(word));
        }
        let max_ctx = (self.order - 1).min(history.len());
        let hist = &history[history.len() - max_ctx..];

        let mut backoffs = 0u32;
        for ctx_len in (1..=hist.len()).rev() {
            let ctx = &hist[hist.len() - ctx_len..];
            let mut key = Vec::with_capacity(ctx_len + 1);
            key.extend_from_slice(ctx);
            key.push(word);
            if let Some(&c) = self.counts[ctx_len].get(&key) {
                let denom = self.contexts[ctx_len][ctx];
                return Ok((c as f64 / denom as f64).ln()
                    + backoffs as f64 * self.alpha.ln());
            }
            backoffs += 1;
        }
        let c = self.counts[0].get(&vec![word]).copied().unwrap_or(0);
        let floor =
            (c + 1) as f64 / (self.unigram_total + self.scorable_types()) as f64;
        Ok(floor.ln() + backoffs as f64 * self.alpha.ln())
    }

    /// Sorted text serialization: header, then one line per n-gram with
    /// its count, ordered by n-gram length then id sequence. Diffable and
    /// deterministic.
    pub fn save_text(&self, path: &Path, vocab: &Vocabulary) -> Result<()> {
        let file =
            std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut w = BufWriter::new(file);
        let io_err = |e| Error::io(path.display().to_string(), e);
        writeln!(w, "c2t-ngram v1").map_err(io_err)?;
        writeln!(w, "order {}", self.order).map_err(io_err)?;
        writeln!(w, "alpha {}", self.alpha).map_err(io_err)?;
        writeln!(w, "vocab_size {}", self.vocab_size).map_err(io_err)?;
        for k in 1..=self.order {
            let mut grams: Vec<(&Vec<u32>, &u64)> = self.counts[k - 1].iter().collect();
            grams.sort();
            for (ids, count) in grams {
                let words: Result<Vec<&str>> = ids.iter().map(|&i| vocab.word(i)).collect();
                writeln!(w, "{}\t{}", words?.join(" "), count).map_err(io_err)?;
            }
        }
        w.flush().map_err(io_err)
    }

    pub fn load_text(path: &Path, vocab: &Vocabulary) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let bad = |detail: String| Error::MalformedFile {
            path: path.display().to_string(),
            detail,
        };
        let mut lines = text.lines();
        if lines.next() != Some("c2t-ngram v1") {
            return Err(bad("bad header".into()));
        }
        let mut order = 0usize;
        let mut alpha = DEFAULT_BACKOFF_ALPHA;
        let mut vocab_size = 0u32;
        for _ in 0..3 {
            let l = lines.next().ok_or_else(|| bad("truncated header".into()))?;
            let (key, value) = l.split_once(' ').ok_or_else(|| bad(format!("bad line {l:?}")))?;
            match key {
                "order" => order = value.parse().map_err(|_| bad(format!("order {value}")))?,
                "alpha" => alpha = value.parse().map_err(|_| bad(format!("alpha {value}")))?,
                "vocab_size" => {
                    vocab_size = value.parse().map_err(|_| bad(format!("vocab_size {value}")))?
                }
                other => return Err(bad(format!("unknown header field {other}"))),
            }
        }
        let mut counts: Vec<HashMap<Vec<u32>, u64>> = vec![HashMap::new(); order];
        let mut contexts: Vec<HashMap<Vec<u32>, u64>> = vec![HashMap::new(); order];
        for l in lines {
            if l.trim().is_empty() {
                continue;
            }
            let (gram, count) = l.rsplit_once('\t').ok_or_else(|| bad(format!("bad line {l:?}")))?;
            let count: u64 = count.parse().map_err(|_| bad(format!("bad count in {l:?}")))?;
            let ids: Result<Vec<u32>> = gram.split(' ').map(|w| vocab.id(w)).collect();
            let ids = ids?;
            let k = ids.len();
            if k == 0 || k > order {
                return Err(bad(format!("n-gram of length {k}")));
            }
            *contexts[k - 1].entry(ids[..k - 1].to_vec()).or_insert(0) += count;
            counts[k - 1].insert(ids, count);
        }
        let unigram_total = contexts[0].get(&Vec::new()).copied().unwrap_or(0);
        if unigram_total == 0 {
            return Err(bad("no unigrams".into()));
        }
        Ok(NgramLm {
            order,
            alpha,
            vocab_size,
            counts,
            contexts,
            unigram_total,
        })
    }
}
