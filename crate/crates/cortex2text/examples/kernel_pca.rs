//! Reduce 155-dim feature frames to 30 components with polynomial-kernel
//! PCA, then augment with delta / delta-delta coefficients.
//!
//! ```bash
//! cargo run --release --example kernel_pca
//! ```

use cortex2text::data::generate_synthetic;
use cortex2text::numerics::Tensor;
use cortex2text::reduce::{append_deltas, fit_kpca, KernelParams};
use cortex2text::signal::{extract_features, preprocess};

fn main() -> cortex2text::Result<()> {
    let sentences: Vec<String> = ["the river flows", "cold wind blows", "a lamp burns low"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let corpus = generate_synthetic(&sentences, 2, 3, 1.0)?;

    let mut rows = Vec::new();
    let mut n = 0;
    let mut per_utt = Vec::new();
    for rec in &corpus.recordings {
        let feats = extract_features(&preprocess(rec)?)?.into_matrix();
        n += feats.rows();
        rows.extend_from_slice(feats.data());
        per_utt.push(feats);
    }
    let frames = Tensor::matrix(n, 155, rows)?;
    println!("{} training frames of dimension {}", frames.rows(), frames.cols());

    let kernel = KernelParams::polynomial3(155);
    println!(
        "kernel: degree {} gamma {:.5} offset {}",
        kernel.degree, kernel.gamma, kernel.offset
    );
    let model = fit_kpca(&frames, kernel, 30, 400, 3)?;
    println!("fitted on {} landmarks", model.landmarks().rows());

    let curve = model.cumulative_explained_variance();
    println!("cumulative explained variance:");
    for c in [1, 2, 5, 10, 20, 30] {
        println!("  {c:3} components: {:.4}", curve[c - 1]);
    }

    let reduced = model.transform(&per_utt[0])?;
    let augmented = append_deltas(&reduced);
    println!(
        "utterance 0: {}x{} -> {}x{} -> {}x{} [static | delta | delta-delta]",
        per_utt[0].rows(),
        per_utt[0].cols(),
        reduced.rows(),
        reduced.cols(),
        augmented.rows(),
        augmented.cols()
    );
    Ok(())
}
