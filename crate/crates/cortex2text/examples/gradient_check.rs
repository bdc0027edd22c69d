//! Verify the reverse-mode gradients of individual ops and of the whole
//! tiny transformer against central finite differences.
//!
//! ```bash
//! cargo run --release --example gradient_check
//! ```

use cortex2text::model::{model_grad_check, Model, TransformerConfig};
use cortex2text::numerics::{grad_check, Graph, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> cortex2text::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = Tensor::matrix(3, 4, (0..12).map(|_| rng.random_range(-1.0..1.0)).collect())?;

    let softmax_sq = |g: &mut Graph, v: Var| {
        let s = g.softmax(v)?;
        let sq = g.mul(s, s)?;
        g.sum(sq)
    };
    println!("softmax:        max rel err {:.2e}", grad_check(softmax_sq, &x, 1e-5)?);

    let gain = Tensor::vector(vec![1.1, 0.9, 1.0, 1.2]);
    let bias = Tensor::vector(vec![0.1, -0.1, 0.0, 0.2]);
    let layer_norm = move |g: &mut Graph, v: Var| {
        let gv = g.leaf(gain.clone());
        let bv = g.leaf(bias.clone());
        let y = g.layer_norm(v, gv, bv, 1e-6)?;
        let sq = g.mul(y, y)?;
        g.sum(sq)
    };
    println!("layer norm:     max rel err {:.2e}", grad_check(layer_norm, &x, 1e-5)?);

    let cross_entropy = |g: &mut Graph, v: Var| g.cross_entropy(v, &[1, 3, 0], &[1.0, 1.0, 1.0], 0.0);
    println!("cross entropy:  max rel err {:.2e}", grad_check(cross_entropy, &x, 1e-5)?);

    // The whole model: every parameter coordinate of a 1+1 layer
    // transformer with d_model 8.
    let model = Model::new(TransformerConfig::tiny(5, 6), 42)?;
    let features = Tensor::matrix(4, 6, (0..24).map(|_| rng.random_range(-1.0..1.0)).collect())?;
    let started = std::time::Instant::now();
    let err = model_grad_check(&model, &features, &[3, 4, 3], 1e-5)?;
    println!(
        "tiny transformer ({} parameters): max rel err {:.2e} in {:.2?}",
        model.params.param_count(),
        err,
        started.elapsed()
    );
    Ok(())
}
