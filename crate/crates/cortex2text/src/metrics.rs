//! Word error rate via Levenshtein alignment, plus pooled corpus
//! aggregation.

use crate::error::{Error, Result};

/// Edit counts of a minimal-cost alignment.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WerResult {
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub reference_len: usize,
}

impl WerResult {
    pub fn errors(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }

    /// (S + D + I) / N. May exceed 1 with many insertions.
    pub fn wer(&self) -> f64 {
        self.errors() as f64 / self.reference_len as f64
    }
}

/// Minimal-cost word alignment with unit substitution/deletion/insertion
/// costs. On equal total cost the result prefers fewer substitutions,
/// then fewer deletions; the per-cell lexicographic minimum makes the
/// backtrace deterministic.
pub fn wer<R: AsRef<str>, H: AsRef<str>>(reference: &[R], hypothesis: &[H]) -> Result<WerResult> {
    if reference.is_empty() {
        return Err(Error::EmptyReference);
    }
    let n = reference.len();
    let m = hypothesis.len();
    // Each cell is the lexicographic minimum of (cost, subs, dels) over
    // alignments of the prefixes; I = cost - S - D at the end.
    let mut prev: Vec<(u32, u32, u32)> = (0..=m as u32).map(|j| (j, 0, 0)).collect();
    let mut cur = vec![(0u32, 0u32, 0u32); m + 1];
    for i in 1..=n {
        cur[0] = (i as u32, 0, i as u32);
        for j in 1..=m {
            let mut best = if reference[i - 1].as_ref() == hypothesis[j - 1].as_ref() {
                prev[j - 1]
            } else {
                let (c, s, d) = prev[j - 1];
                (c + 1, s + 1, d)
            };
            let (c, s, d) = prev[j];
            let del = (c + 1, s, d + 1);
            if del < best {
                best = del;
            }
            let (c, s, d) = cur[j - 1];
            let ins = (c + 1, s, d);
            if ins < best {
                best = ins;
            }
            cur[j] = best;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    let (cost, subs, dels) = prev[m];
    Ok(WerResult {
        substitutions: subs as usize,
        deletions: dels as usize,
        insertions: (cost - subs - dels) as usize,
        reference_len: n,
    })
}

/// Pooled corpus aggregation: error and reference counts summed over
/// utterances.
#[derive(Clone, Debug)]
pub struct CorpusWer {
    pub pooled: WerResult,
    pub per_utterance: Vec<WerResult>,
}

pub fn corpus_wer<R: AsRef<str>, H: AsRef<str>>(
    pairs: &[(Vec<R>, Vec<H>)],
) -> Result<CorpusWer> {
    if pairs.is_empty() {
        return Err(Error::EmptyReference);
    }
    let mut per_utterance = Vec::with_capacity(pairs.len());
    let mut pooled = WerResult {
        substitutions: 0,
        deletions: 0,
        insertions: 0,
        reference_len: 0,
    };
    for (i, (reference, hypothesis)) in pairs.iter().enumerate() {
        let r = wer(reference, hypothesis).map_err(|e| e.for_utterance(i.to_string()))?;
        pooled.substitutions += r.substitutions;
        pooled.deletions += r.deletions;
        pooled.insertions += r.insertions;
        pooled.reference_len += r.reference_len;
        per_utterance.push(r);
    }
    Ok(CorpusWer {
        pooled,
        per_utterance,
    })
}

/// Unweighted mean of per-utterance WERs, for sensitivity checks against
/// the pooled number.
pub fn macro_average_wer(results: &[WerResult]) -> f64 {
    results.iter().map(WerResult::wer).sum::<f64>() / results.len() as f64
}


#[cfg(test)]
mod symmetry_tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn equal_length_pairs_have_symmetric_distance() {
        let alphabet = ["a", "b", "c"];
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..200 {
            let n = rng.random_range(1..9);
            let draw = |rng: &mut ChaCha8Rng| -> Vec<&str> {
                (0..n).map(|_| alphabet[rng.random_range(0..3)]).collect()
            };
            let r = draw(&mut rng);
            let h = draw(&mut rng);
            let fwd = wer(&r, &h).unwrap();
            let bwd = wer(&h, &r).unwrap();
            assert_eq!(fwd.errors(), bwd.errors(), "{r:?} vs {h:?}");
        }
    }
}
