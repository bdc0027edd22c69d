//! Word error rate: single pairs, pooled corpus aggregation, and the
//! macro average for comparison.
//!
//! ```bash
//! cargo run --release --example wer_report
//! ```

use cortex2text::metrics::{corpus_wer, macro_average_wer, wer};

fn words(s: &str) -> Vec<&str> {
    s.split_whitespace().collect()
}

fn main() -> cortex2text::Result<()> {
    let cases = [
        ("the cat sat", "the cat sat"),
        ("the cat sat", "the bat sat on"),
        ("a b c d", ""),
        ("she sells sea shells", "she sea shells shells"),
    ];
    for (reference, hypothesis) in cases {
        let r = wer(&words(reference), &words(hypothesis))?;
        println!(
            "ref {reference:24} hyp {hypothesis:22} S={} D={} I={}  WER {:.3}",
            r.substitutions,
            r.deletions,
            r.insertions,
            r.wer()
        );
    }

    let pairs: Vec<(Vec<&str>, Vec<&str>)> = cases
        .iter()
        .map(|(r, h)| (words(r), words(h)))
        .collect();
    let agg = corpus_wer(&pairs)?;
    println!(
        "\npooled corpus WER {:.3} ({} errors / {} reference words)",
        agg.pooled.wer(),
        agg.pooled.errors(),
        agg.pooled.reference_len
    );
    println!("macro-averaged WER {:.3}", macro_average_wer(&agg.per_utterance));
    Ok(())
}
