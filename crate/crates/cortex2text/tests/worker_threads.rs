//! Parallel decoding through C2T_THREADS must not change results.
//! Kept in its own test binary because it mutates process environment.

use cortex2text::pipeline::{self, RunConfig};

#[test]
fn decode_results_are_identical_across_worker_counts() {
    let dir = tempfile::tempdir().unwrap();
    let sentences = pipeline::load_sentences(None).unwrap()[..6].join("\n");
    let sentences_path = dir.path().join("sentences.txt");
    std::fs::write(&sentences_path, sentences).unwrap();
    let cfg = RunConfig {
        out_dir: dir.path().to_path_buf(),
        sentences: Some(sentences_path),
        seed: 8,
        repetitions: 2,
        noise_level: 1.0,
        kpca_max_landmarks: 256,
        d_model: 16,
        n_enc_layers: 1,
        n_dec_layers: 1,
        n_heads: 2,
        d_k: 8,
        d_v: 8,
        d_ff: 32,
        epochs: 2,
        batch_size: 8,
        lr: 1e-3,
        beam_width: 3,
        max_decode_len: 10,
        ..RunConfig::default()
    };
    pipeline::synth_data(&cfg).unwrap();
    pipeline::extract_features_cmd(&cfg).unwrap();
    pipeline::fit_kpca_cmd(&cfg).unwrap();
    pipeline::train_cmd(&cfg).unwrap();

    std::env::set_var("C2T_THREADS", "1");
    assert_eq!(pipeline::worker_count(), 1);
    pipeline::decode_cmd(&cfg).unwrap();
    let sequential = std::fs::read(dir.path().join("decodes.tsv")).unwrap();

    std::env::set_var("C2T_THREADS", "4");
    assert_eq!(pipeline::worker_count(), 4);
    pipeline::decode_cmd(&cfg).unwrap();
    let parallel = std::fs::read(dir.path().join("decodes.tsv")).unwrap();
    std::env::remove_var("C2T_THREADS");

    assert_eq!(sequential, parallel);
}
