//! End-to-end pipeline drivers: data synthesis, feature extraction,
//! kernel-PCA fitting, training, vocabulary-subset evaluation, decoding,
//! attention export, and timing reports.
//!
//! Every function here is also reachable through the `c2t` binary; a run
//! directory holds `manifest.jsonl` + `recordings/`, `features/`,
//! `kpca.c2t`, `checkpoint.c2t`, `vocab.txt`, `lm.ngrams`, and the CSV
//! outputs.

use crate::checkpoint;
use crate::data::{
    self, load_corpus, subset_experiment, Corpus, ManifestEntry, SplitSpec, Vocabulary, SUBSET_KS,
};
use crate::decode::{beam_search_with_memory, DecodeConfig, DecodeResult};
use crate::error::{Error, Result};
use crate::lm::{fit_ngram, NgramLm};
use crate::metrics::corpus_wer;
use crate::model::{train, LrSchedule, Model, TrainOptions, TransformerConfig};
use crate::numerics::Tensor;
use crate::reduce::{append_deltas, fit_kpca, KernelParams, KpcaModel};
use crate::signal::{extract_features, preprocess, RAW_FEATURE_DIM};
use std::path::{Path, PathBuf};
use std::time::Instant;

/// The 30-sentence corpus shipped with the repository
/// (`data/sentences_30.txt`); editable, embedded here as the default.
pub const DEFAULT_SENTENCES: &str = include_str!("../data/sentences_30.txt");

/// Reference results reported by the original study on its non-public
/// recordings, printed alongside synthetic results for context. The row
/// order follows `SUBSET_KS`.
pub const REFERENCE_UNIQUE_WORDS: [usize; 6] = [29, 59, 84, 106, 132, 153];
pub const REFERENCE_TOTALS_A: [usize; 6] = [15, 30, 45, 60, 75, 90];
pub const REFERENCE_WER_A: [f64; 6] = [67.7, 83.95, 88.85, 91.04, 91.15, 93.95];
pub const REFERENCE_TOTALS_B: [usize; 6] = [12, 24, 36, 48, 60, 72];
pub const REFERENCE_WER_B: [f64; 6] = [62.5, 76.65, 86.83, 85.92, 98.59, 96.8];
/// Reference minutes-per-example timings from the same study:
/// (phase, dataset, minutes).
pub const REFERENCE_TIMINGS: [(&str, &str, f64); 4] = [
    ("train", "a", 0.017),
    ("inference", "a", 0.016),
    ("train", "b", 0.022),
    ("inference", "b", 0.015),
];

/// Every knob of the pipeline, with the documented defaults. A flat
/// `key=value` config file can override any field, and CLI flags override
/// the file.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub out_dir: PathBuf,
    /// Corpus manifest; defaults to `<out_dir>/manifest.jsonl`.
    pub corpus: Option<PathBuf>,
    pub sentences: Option<PathBuf>,
    pub seed: u64,
    pub repetitions: usize,
    pub noise_level: f64,

    pub kpca_components: usize,
    pub kpca_max_landmarks: usize,
    pub kpca_degree: u32,
    /// Kernel scale; `None` means 1 / input dimension.
    pub kpca_gamma: Option<f64>,
    pub kpca_offset: f64,

    pub d_model: usize,
    pub n_enc_layers: usize,
    pub n_dec_layers: usize,
    pub n_heads: usize,
    pub d_k: usize,
    pub d_v: usize,
    pub d_ff: usize,
    pub max_src_len: usize,
    pub max_tgt_len: usize,
    pub dropout: f64,
    pub label_smoothing: f64,
    pub tie_output_embedding: bool,

    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub warmup_steps: Option<usize>,
    pub stop_at_train_loss: Option<f64>,

    pub beam_width: usize,
    pub lm_weight: f64,
    pub max_decode_len: usize,
    pub length_normalize: bool,
    pub lm_alpha: f64,

    pub subset_k: Option<usize>,
    pub timing: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            out_dir: PathBuf::from("c2t_out"),
            corpus: None,
            sentences: None,
            seed: 0,
            repetitions: 3,
            noise_level: 1.0,
            kpca_components: 30,
            kpca_max_landmarks: 2000,
            kpca_degree: 3,
            kpca_gamma: None,
            kpca_offset: 1.0,
            d_model: 256,
            n_enc_layers: 8,
            n_dec_layers: 8,
            n_heads: 32,
            d_k: 8,
            d_v: 8,
            d_ff: 1024,
            max_src_len: 2048,
            max_tgt_len: 32,
            dropout: 0.0,
            label_smoothing: 0.0,
            tie_output_embedding: true,
            epochs: 120,
            batch_size: 100,
            lr: 1e-4,
            warmup_steps: None,
            stop_at_train_loss: None,
            beam_width: 10,
            lm_weight: 0.3,
            max_decode_len: 32,
            length_normalize: false,
            lm_alpha: 0.4,
            subset_k: None,
            timing: false,
        }
    }
}

impl RunConfig {
    /// Parse a flat `key=value` file ('#' starts a comment).
    pub fn load_file(&mut self, path: &Path) -> Result<()> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::MalformedFile {
                path: path.display().to_string(),
                detail: format!("line {}: expected key=value", lineno + 1),
            })?;
            self.set(key.trim(), value.trim()).map_err(|e| Error::MalformedFile {
                path: path.display().to_string(),
                detail: format!("line {}: {e}", lineno + 1),
            })?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("{key}={value}")))
        }
        match key {
            "out_dir" => self.out_dir = PathBuf::from(value),
            "corpus" => self.corpus = Some(PathBuf::from(value)),
            "sentences" => self.sentences = Some(PathBuf::from(value)),
            "seed" => self.seed = parse(key, value)?,
            "repetitions" => self.repetitions = parse(key, value)?,
            "noise_level" => self.noise_level = parse(key, value)?,
            "kpca_components" => self.kpca_components = parse(key, value)?,
            "kpca_max_landmarks" => self.kpca_max_landmarks = parse(key, value)?,
            "kpca_degree" => self.kpca_degree = parse(key, value)?,
            "kpca_gamma" => self.kpca_gamma = Some(parse(key, value)?),
            "kpca_offset" => self.kpca_offset = parse(key, value)?,
            "d_model" => self.d_model = parse(key, value)?,
            "n_enc_layers" => self.n_enc_layers = parse(key, value)?,
            "n_dec_layers" => self.n_dec_layers = parse(key, value)?,
            "n_heads" => self.n_heads = parse(key, value)?,
            "d_k" => self.d_k = parse(key, value)?,
            "d_v" => self.d_v = parse(key, value)?,
            "d_ff" => self.d_ff = parse(key, value)?,
            "max_src_len" => self.max_src_len = parse(key, value)?,
            "max_tgt_len" => self.max_tgt_len = parse(key, value)?,
            "dropout" => self.dropout = parse(key, value)?,
            "label_smoothing" => self.label_smoothing = parse(key, value)?,
            "tie_output_embedding" => self.tie_output_embedding = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "warmup_steps" => self.warmup_steps = Some(parse(key, value)?),
            "stop_at_train_loss" => self.stop_at_train_loss = Some(parse(key, value)?),
            "beam_width" => self.beam_width = parse(key, value)?,
            "lm_weight" => self.lm_weight = parse(key, value)?,
            "max_decode_len" => self.max_decode_len = parse(key, value)?,
            "length_normalize" => self.length_normalize = parse(key, value)?,
            "lm_alpha" => self.lm_alpha = parse(key, value)?,
            "subset_k" => self.subset_k = Some(parse(key, value)?),
            "timing" => self.timing = parse(key, value)?,
            other => return Err(Error::InvalidConfig(format!("unknown config key {other}"))),
        }
        Ok(())
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.corpus
            .clone()
            .unwrap_or_else(|| self.out_dir.join("manifest.jsonl"))
    }

    pub fn transformer_config(&self, vocab_size: usize) -> TransformerConfig {
        TransformerConfig {
            d_model: self.d_model,
            n_enc_layers: self.n_enc_layers,
            n_dec_layers: self.n_dec_layers,
            n_heads: self.n_heads,
            d_k: self.d_k,
            d_v: self.d_v,
            d_ff: self.d_ff,
            input_dim: 3 * self.kpca_components,
            vocab_size,
            max_src_len: self.max_src_len,
            max_tgt_len: self.max_tgt_len,
            dropout: self.dropout,
            label_smoothing: self.label_smoothing,
            tie_output_embedding: self.tie_output_embedding,
        }
    }

    pub fn decode_config(&self) -> DecodeConfig {
        DecodeConfig {
            beam_width: self.beam_width,
            lm_weight: self.lm_weight,
            max_len: self.max_decode_len,
            length_normalize: self.length_normalize,
        }
    }

    fn train_options(&self) -> TrainOptions {
        TrainOptions {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.lr,
            schedule: match self.warmup_steps {
                Some(w) => LrSchedule::Warmup { warmup_steps: w },
                None => LrSchedule::Fixed,
            },
            seed: self.seed,
            stop_at_train_loss: self.stop_at_train_loss,
            ..TrainOptions::default()
        }
    }
}

/// Worker cap for parallel decoding, from `C2T_THREADS` (default 1).
pub fn worker_count() -> usize {
    std::env::var("C2T_THREADS")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(1)
        .max(1)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))
}

fn require(path: &Path, produced_by: &str) -> Result<()> {
    if !path.exists() {
        return Err(Error::MissingArtifact {
            path: path.display().to_string(),
            hint: format!("run `c2t {produced_by}` first"),
        });
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

// ── artifact paths ───────────────────────────────────────────────────

pub fn features_dir(out_dir: &Path) -> PathBuf {
    out_dir.join("features")
}

pub fn features_path(out_dir: &Path, utterance_id: &str) -> PathBuf {
    features_dir(out_dir).join(format!("{utterance_id}.c2tf"))
}

pub fn kpca_path(out_dir: &Path) -> PathBuf {
    out_dir.join("kpca.c2t")
}

pub fn checkpoint_path(out_dir: &Path) -> PathBuf {
    out_dir.join("checkpoint.c2t")
}

pub fn vocab_path(out_dir: &Path) -> PathBuf {
    out_dir.join("vocab.txt")
}

pub fn lm_path(out_dir: &Path) -> PathBuf {
    out_dir.join("lm.ngrams")
}

// ── subcommands ──────────────────────────────────────────────────────

/// Read sentences (one per line) from the given file or the embedded
/// default corpus.
pub fn load_sentences(path: Option<&Path>) -> Result<Vec<String>> {
    let text = match path {
        Some(p) => std::fs::read_to_string(p).map_err(|e| Error::io(p.display().to_string(), e))?,
        None => DEFAULT_SENTENCES.to_string(),
    };
    let sentences: Vec<String> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect();
    if sentences.is_empty() {
        return Err(Error::InvalidConfig("no sentences".into()));
    }
    Ok(sentences)
}

/// Generate a synthetic corpus and write it under the run directory.
pub fn synth_data(cfg: &RunConfig) -> Result<PathBuf> {
    ensure_dir(&cfg.out_dir)?;
    let sentences = load_sentences(cfg.sentences.as_deref())?;
    let corpus = data::generate_synthetic(&sentences, cfg.repetitions, cfg.seed, cfg.noise_level)?;
    let manifest = data::save_corpus(&cfg.out_dir, &corpus, cfg.seed)?;
    println!(
        "synth-data: {} utterances ({} sentences x {} repetitions) -> {}",
        corpus.len(),
        sentences.len(),
        cfg.repetitions,
        manifest.display()
    );
    Ok(manifest)
}

/// Band-pass + notch filtering and 155-dim windowed statistics for every
/// utterance in the manifest.
pub fn extract_features_cmd(cfg: &RunConfig) -> Result<()> {
    let manifest = cfg.manifest_path();
    require(&manifest, "synth-data")?;
    let (corpus, entries) = load_corpus(&manifest)?;
    ensure_dir(&features_dir(&cfg.out_dir))?;
    for (rec, entry) in corpus.recordings.iter().zip(&entries) {
        let cleaned = preprocess(rec).map_err(|e| e.for_utterance(&entry.id))?;
        let feats = extract_features(&cleaned).map_err(|e| e.for_utterance(&entry.id))?;
        checkpoint::save_tensors(
            &features_path(&cfg.out_dir, &entry.id),
            &[("features".to_string(), feats.matrix().clone())],
        )?;
    }
    println!("extract-features: {} utterances -> {}", entries.len(), features_dir(&cfg.out_dir).display());
    Ok(())
}

fn load_features(out_dir: &Path, utterance_id: &str) -> Result<Tensor> {
    let path = features_path(out_dir, utterance_id);
    require(&path, "extract-features")?;
    let entries = checkpoint::load_tensors(&path)?;
    entries
        .into_iter()
        .find(|(n, _)| n == "features")
        .map(|(_, t)| t)
        .ok_or_else(|| Error::MalformedFile {
            path: path.display().to_string(),
            detail: "missing features entry".into(),
        })
}

/// Fit kernel PCA on training-split frames only and export the
/// cumulative explained-variance curve.
pub fn fit_kpca_cmd(cfg: &RunConfig) -> Result<()> {
    let manifest = cfg.manifest_path();
    require(&manifest, "synth-data")?;
    let entries = data::read_manifest(&manifest)?;
    let split = data::split(entries.len(), &SplitSpec::new(cfg.seed))?;

    let mut rows: Vec<f64> = Vec::new();
    let mut n_rows = 0;
    for &idx in &split.train {
        let feats = load_features(&cfg.out_dir, &entries[idx].id)?;
        n_rows += feats.rows();
        rows.extend_from_slice(feats.data());
    }
    let train_frames = Tensor::matrix(n_rows, RAW_FEATURE_DIM, rows)?;
    let params = KernelParams {
        degree: cfg.kpca_degree,
        gamma: cfg.kpca_gamma.unwrap_or(1.0 / RAW_FEATURE_DIM as f64),
        offset: cfg.kpca_offset,
    };
    let model = fit_kpca(
        &train_frames,
        params,
        cfg.kpca_components,
        cfg.kpca_max_landmarks,
        cfg.seed,
    )?;
    checkpoint::save_tensors(&kpca_path(&cfg.out_dir), &model.to_entries())?;

    let mut csv = String::from("component,cumulative_explained_variance\n");
    for (i, v) in model.cumulative_explained_variance().iter().enumerate() {
        csv.push_str(&format!("{},{}\n", i + 1, v));
    }
    write_text(&cfg.out_dir.join("explained_variance.csv"), &csv)?;
    println!(
        "fit-kpca: {} train frames -> {} landmarks, {} components",
        n_rows,
        model.landmarks().rows(),
        model.n_components()
    );
    Ok(())
}

fn load_kpca(out_dir: &Path) -> Result<KpcaModel> {
    let path = kpca_path(out_dir);
    require(&path, "fit-kpca")?;
    KpcaModel::from_entries(&checkpoint::load_tensors(&path)?)
}

/// 30-dim projection plus delta/delta-delta augmentation for one
/// utterance.
fn reduced_features(out_dir: &Path, kpca: &KpcaModel, utterance_id: &str) -> Result<Tensor> {
    let raw = load_features(out_dir, utterance_id)?;
    Ok(append_deltas(&kpca.transform(&raw)?))
}

/// Train the transformer and the fusion language model on the training
/// split; write the best-validation checkpoint, vocabulary, LM, and the
/// per-epoch metrics CSV.
pub fn train_cmd(cfg: &RunConfig) -> Result<()> {
    let manifest = cfg.manifest_path();
    require(&manifest, "synth-data")?;
    let (corpus, entries) = load_corpus(&manifest)?;
    let kpca = load_kpca(&cfg.out_dir)?;
    let vocab = Vocabulary::from_corpus(&corpus)?;
    vocab.save(&vocab_path(&cfg.out_dir))?;

    let split = data::split(entries.len(), &SplitSpec::new(cfg.seed))?;
    let started = Instant::now();

    // Fusion LM sees training-split transcripts only.
    let train_tokens: Result<Vec<Vec<u32>>> = split
        .train
        .iter()
        .map(|&i| vocab.encode(&corpus.recordings[i].transcript))
        .collect();
    let lm = fit_ngram(&train_tokens?, crate::lm::DEFAULT_ORDER, cfg.lm_alpha, vocab.len() as u32)?;
    lm.save_text(&lm_path(&cfg.out_dir), &vocab)?;

    let build_set = |indices: &[usize]| -> Result<Vec<(Tensor, Vec<u32>)>> {
        indices
            .iter()
            .map(|&i| {
                let feats = reduced_features(&cfg.out_dir, &kpca, &entries[i].id)?;
                let targets = vocab.encode(&corpus.recordings[i].transcript)?;
                Ok((feats, targets))
            })
            .collect()
    };
    let train_set = build_set(&split.train)?;
    let val_set = build_set(&split.val)?;

    let model = Model::new(cfg.transformer_config(vocab.len()), cfg.seed)?;
    println!(
        "train: {} parameters, {} train / {} val utterances, {} epochs",
        model.params.param_count(),
        train_set.len(),
        val_set.len(),
        cfg.epochs
    );
    let report = train(model, &train_set, &val_set, &cfg.train_options())?;

    let mut csv = String::from("epoch,train_loss,val_loss,wall_seconds\n");
    for m in &report.metrics {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            m.epoch, m.train_loss, m.val_loss, m.wall_seconds
        ));
    }
    write_text(&cfg.out_dir.join("train_metrics.csv"), &csv)?;
    report.model.save(&checkpoint_path(&cfg.out_dir))?;
    println!(
        "train: best validation loss {:.6} at epoch {}",
        report.best_val_loss, report.best_epoch
    );

    if cfg.timing {
        let wall_minutes = started.elapsed().as_secs_f64() / 60.0;
        append_timing(&cfg.out_dir, "train", train_set.len(), wall_minutes)?;
    }
    Ok(())
}

/// Load everything `evaluate`/`decode` need, timing the checkpoint load
/// so inference timing includes it.
struct InferenceStack {
    corpus: Corpus,
    entries: Vec<ManifestEntry>,
    kpca: KpcaModel,
    model: Model,
    vocab: Vocabulary,
    lm: NgramLm,
    load_started: Instant,
}

fn load_inference_stack(cfg: &RunConfig) -> Result<InferenceStack> {
    let load_started = Instant::now();
    let manifest = cfg.manifest_path();
    require(&manifest, "synth-data")?;
    let (corpus, entries) = load_corpus(&manifest)?;
    let kpca = load_kpca(&cfg.out_dir)?;
    let ckpt = checkpoint_path(&cfg.out_dir);
    require(&ckpt, "train")?;
    let model = Model::load(&ckpt)?;
    let vpath = vocab_path(&cfg.out_dir);
    require(&vpath, "train")?;
    let vocab = Vocabulary::load(&vpath)?;
    let lpath = lm_path(&cfg.out_dir);
    require(&lpath, "train")?;
    let lm = NgramLm::load_text(&lpath, &vocab)?;
    Ok(InferenceStack {
        corpus,
        entries,
        kpca,
        model,
        vocab,
        lm,
        load_started,
    })
}

/// Beam-decode a set of utterances, optionally across `C2T_THREADS`
/// worker threads. Results keep the input order.
fn decode_many(
    stack: &InferenceStack,
    cfg: &RunConfig,
    indices: &[usize],
) -> Result<Vec<DecodeResult>> {
    let decode_cfg = cfg.decode_config();
    let inputs: Result<Vec<Tensor>> = indices
        .iter()
        .map(|&i| reduced_features(&cfg.out_dir, &stack.kpca, &stack.entries[i].id))
        .collect();
    let inputs = inputs?;
    let workers = worker_count().min(inputs.len().max(1));
    if workers <= 1 {
        return inputs
            .iter()
            .enumerate()
            .map(|(pos, feats)| {
                let memory = stack.model.encode_memory(feats)?;
                beam_search_with_memory(&stack.model, &memory, &stack.lm, &stack.vocab, &decode_cfg)
                    .map_err(|e| e.for_utterance(&stack.entries[indices[pos]].id))
            })
            .collect();
    }
    let chunk = inputs.len().div_ceil(workers);
    let mut results: Vec<Option<Result<DecodeResult>>> = Vec::new();
    results.resize_with(inputs.len(), || None);
    std::thread::scope(|s| {
        for (in_chunk, out_chunk) in inputs.chunks(chunk).zip(results.chunks_mut(chunk)) {
            s.spawn(|| {
                for (feats, slot) in in_chunk.iter().zip(out_chunk.iter_mut()) {
                    *slot = Some(stack.model.encode_memory(feats).and_then(|memory| {
                        beam_search_with_memory(
                            &stack.model,
                            &memory,
                            &stack.lm,
                            &stack.vocab,
                            &decode_cfg,
                        )
                    }));
                }
            });
        }
    });
    results
        .into_iter()
        .enumerate()
        .map(|(pos, r)| {
            r.expect("every slot filled")
                .map_err(|e| e.for_utterance(&stack.entries[indices[pos]].id))
        })
        .collect()
}

/// One row of the vocabulary-scaling table.
#[derive(Clone, Debug)]
pub struct SubsetRow {
    pub k: usize,
    pub total_sentences: usize,
    pub unique_sentences: usize,
    pub unique_words: usize,
    /// Pooled test-split WER over the subset; NaN when the subset holds
    /// no test utterances.
    pub wer: f64,
}

/// Decode the test split restricted to each vocabulary subset and emit
/// the ladder table mirroring the reference results' shape.
pub fn evaluate_cmd(cfg: &RunConfig) -> Result<Vec<SubsetRow>> {
    let stack = load_inference_stack(cfg)?;
    let split = data::split(stack.entries.len(), &SplitSpec::new(cfg.seed))?;
    let started = stack.load_started;

    let ks: Vec<usize> = match cfg.subset_k {
        Some(k) => vec![k],
        None => SUBSET_KS.to_vec(),
    };

    // Decode every test utterance once; subsets reuse the results.
    let decodes = decode_many(&stack, cfg, &split.test)?;
    let mut decoded_total = decodes.len();

    let mut rows = Vec::with_capacity(ks.len());
    let mut previous_indices: Option<std::collections::HashSet<usize>> = None;
    for &k in &ks {
        let exp = subset_experiment(&stack.corpus, k);
        let members: std::collections::HashSet<usize> = exp.indices.iter().copied().collect();
        if let Some(prev) = &previous_indices {
            // Monotone nesting of the subset ladder.
            debug_assert!(prev.iter().all(|i| members.contains(i)));
        }
        previous_indices = Some(members.clone());

        let pairs: Vec<(Vec<String>, Vec<String>)> = split
            .test
            .iter()
            .zip(&decodes)
            .filter(|(i, _)| members.contains(i))
            .map(|(&i, d)| (stack.corpus.recordings[i].transcript.clone(), d.words.clone()))
            .collect();
        let wer = if pairs.is_empty() {
            f64::NAN
        } else {
            corpus_wer(&pairs)?.pooled.wer()
        };
        rows.push(SubsetRow {
            k,
            total_sentences: exp.total_utterances,
            unique_sentences: exp.unique_sentences,
            unique_words: exp.unique_words,
            wer,
        });
    }

    let mut csv = String::from("total_sentences,unique_sentences,unique_words,wer_percent\n");
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            r.total_sentences,
            r.unique_sentences,
            r.unique_words,
            format_wer_percent(r.wer)
        ));
    }
    write_text(&cfg.out_dir.join("wer_by_subset.csv"), &csv)?;

    println!("evaluate: test WER by unique-sentence subset");
    for r in &rows {
        println!(
            "  k={:2}  total={:3}  unique_words={:3}  WER%={}",
            r.k,
            r.total_sentences,
            r.unique_words,
            format_wer_percent(r.wer)
        );
    }
    print_reference_wer();

    if cfg.timing {
        decoded_total = decoded_total.max(1);
        let wall_minutes = started.elapsed().as_secs_f64() / 60.0;
        append_timing(&cfg.out_dir, "inference", decoded_total, wall_minutes)?;
    }
    Ok(rows)
}

fn format_wer_percent(wer: f64) -> String {
    if wer.is_nan() {
        "nan".to_string()
    } else {
        format!("{:.2}", 100.0 * wer)
    }
}

fn print_reference_wer() {
    println!("  reference WER% from the original study (non-public recordings; not comparable):");
    for (i, &k) in SUBSET_KS.iter().enumerate() {
        println!(
            "  k={:2}  dataset A: total={:3} unique_words={:3} WER%={:6.2}   dataset B: total={:3} WER%={:6.2}",
            k,
            REFERENCE_TOTALS_A[i],
            REFERENCE_UNIQUE_WORDS[i],
            REFERENCE_WER_A[i],
            REFERENCE_TOTALS_B[i],
            REFERENCE_WER_B[i],
        );
    }
}

/// Beam-decode the test split and write one tab-separated line per
/// utterance: id, reference, hypothesis, fused score.
pub fn decode_cmd(cfg: &RunConfig) -> Result<PathBuf> {
    let stack = load_inference_stack(cfg)?;
    let split = data::split(stack.entries.len(), &SplitSpec::new(cfg.seed))?;
    let decodes = decode_many(&stack, cfg, &split.test)?;

    let mut out = String::new();
    for (&i, d) in split.test.iter().zip(&decodes) {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            stack.entries[i].id,
            stack.corpus.recordings[i].transcript.join(" "),
            d.words.join(" "),
            d.score
        ));
    }
    let path = cfg.out_dir.join("decodes.tsv");
    write_text(&path, &out)?;
    println!("decode: {} test utterances -> {}", decodes.len(), path.display());

    if cfg.timing {
        let wall_minutes = stack.load_started.elapsed().as_secs_f64() / 60.0;
        append_timing(&cfg.out_dir, "inference", decodes.len().max(1), wall_minutes)?;
    }
    Ok(path)
}

/// Export one encoder-decoder attention head for a decoded utterance as
/// CSV plus a grayscale PGM heatmap. Rows are decoder positions, columns
/// are feature frames.
pub fn export_attention_cmd(
    cfg: &RunConfig,
    utterance_id: &str,
    layer: usize,
    head: usize,
) -> Result<(PathBuf, PathBuf)> {
    let stack = load_inference_stack(cfg)?;
    if layer >= stack.model.config.n_dec_layers {
        return Err(Error::IndexOutOfRange(format!(
            "layer {layer} of {}",
            stack.model.config.n_dec_layers
        )));
    }
    if head >= stack.model.config.n_heads {
        return Err(Error::IndexOutOfRange(format!(
            "head {head} of {}",
            stack.model.config.n_heads
        )));
    }
    let entry = stack
        .entries
        .iter()
        .find(|e| e.id == utterance_id)
        .ok_or_else(|| Error::IndexOutOfRange(format!("utterance {utterance_id}")))?;

    let feats = reduced_features(&cfg.out_dir, &stack.kpca, &entry.id)?;
    let memory = stack.model.encode_memory(&feats)?;
    let decoded = beam_search_with_memory(
        &stack.model,
        &memory,
        &stack.lm,
        &stack.vocab,
        &cfg.decode_config(),
    )?;

    let mut tokens = vec![data::SOS_ID];
    tokens.extend(&decoded.word_ids);
    let (_, trace) = stack.model.forward_traced(&feats, &tokens)?;
    let weights = &trace.cross_attention[layer][head];

    let mut csv = String::new();
    for r in 0..weights.rows() {
        let row: Vec<String> = weights.row(r).iter().map(f64::to_string).collect();
        csv.push_str(&row.join(","));
        csv.push('\n');
    }
    let csv_path = cfg.out_dir.join(format!("attention_{utterance_id}_l{layer}_h{head}.csv"));
    write_text(&csv_path, &csv)?;
    let pgm_path = cfg.out_dir.join(format!("attention_{utterance_id}_l{layer}_h{head}.pgm"));
    write_pgm(&pgm_path, weights)?;
    println!(
        "export-attention: {} ({} -> {:?}), layer {layer} head {head}: {} x {} -> {}",
        utterance_id,
        entry.transcript,
        decoded.words,
        weights.rows(),
        weights.cols(),
        pgm_path.display()
    );
    Ok((csv_path, pgm_path))
}

/// Binary PGM (P5), scaled so the largest weight maps to white.
pub fn write_pgm(path: &Path, matrix: &Tensor) -> Result<()> {
    let (rows, cols) = (matrix.rows(), matrix.cols());
    let max = matrix.data().iter().cloned().fold(0.0_f64, f64::max);
    let file = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = std::io::BufWriter::new(file);
    let io_err = |e| Error::io(path.display().to_string(), e);
    write!(w, "P5\n{cols} {rows}\n255\n").map_err(io_err)?;
    for &v in matrix.data() {
        let level = if max > 0.0 {
            (255.0 * v / max).round().clamp(0.0, 255.0) as u8
        } else {
            0
        };
        w.write_all(&[level]).map_err(io_err)?;
    }
    use std::io::Write as _;
    w.flush().map_err(io_err)
}

/// Append one measured row to `timing.csv`, writing the header and the
/// reference rows on first use.
fn append_timing(out_dir: &Path, phase: &str, examples: usize, wall_minutes: f64) -> Result<()> {
    let path = out_dir.join("timing.csv");
    let mut text = if path.exists() {
        std::fs::read_to_string(&path).map_err(|e| Error::io(path.display().to_string(), e))?
    } else {
        let mut t = String::from("phase,examples,wall_minutes,minutes_per_example\n");
        for (phase, dataset, minutes) in REFERENCE_TIMINGS {
            t.push_str(&format!("reference-{phase}-dataset-{dataset},,,{minutes}\n"));
        }
        t
    };
    text.push_str(&format!(
        "{phase},{examples},{wall_minutes},{}\n",
        wall_minutes / examples as f64
    ));
    write_text(&path, &text)
}
