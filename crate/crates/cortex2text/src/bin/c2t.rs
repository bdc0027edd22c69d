//! Subcommand CLI over the pipeline functions. Flags override the
//! optional `--config` key=value file, which overrides the built-in
//! defaults.

use clap::{Parser, Subcommand};
use cortex2text::pipeline::{self, RunConfig};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "c2t",
    about = "EEG-to-text pipeline: synthesis, features, kernel PCA, transformer training, fused beam decoding, WER evaluation",
    after_help = "Artifacts live under --out-dir; a typical run is:\n  \
        c2t synth-data && c2t extract-features && c2t fit-kpca && c2t train && c2t evaluate\n\
        Set C2T_THREADS to decode test utterances in parallel workers."
)]
struct Cli {
    /// Flat key=value config file; command-line flags override it
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Corpus manifest path [default: <out-dir>/manifest.jsonl]
    #[arg(long, global = true)]
    corpus: Option<PathBuf>,

    /// Run directory for all artifacts [default: c2t_out]
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,

    /// Seed for synthesis, splits, subsampling, and training [default: 0]
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Record wall-clock timing rows into timing.csv [default: off]
    #[arg(long, global = true)]
    timing: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus (recordings + manifest)
    SynthData {
        /// Sentence file, one per line [default: the embedded 30-sentence corpus]
        #[arg(long)]
        sentences: Option<PathBuf>,
        /// Recordings per sentence [default: 3]
        #[arg(long)]
        repetitions: Option<usize>,
        /// White-noise standard deviation in microvolts [default: 1.0]
        #[arg(long)]
        noise: Option<f64>,
    },
    /// Filter recordings and extract the 155-dim feature matrices
    ExtractFeatures,
    /// Fit kernel PCA on training-split frames; export explained variance
    FitKpca {
        /// Retained components [default: 30]
        #[arg(long)]
        components: Option<usize>,
        /// Gram-matrix landmark cap [default: 2000]
        #[arg(long)]
        max_landmarks: Option<usize>,
    },
    /// Train the transformer and the fusion 4-gram LM
    Train {
        /// Training epochs [default: 120]
        #[arg(long)]
        epochs: Option<usize>,
        /// Utterances per Adam step [default: 100]
        #[arg(long)]
        batch_size: Option<usize>,
        /// Fixed learning rate [default: 0.0001]
        #[arg(long)]
        lr: Option<f64>,
        /// Use the inverse-square-root warmup schedule with this many steps
        #[arg(long)]
        warmup_steps: Option<usize>,
        /// Model width [default: 256]
        #[arg(long)]
        d_model: Option<usize>,
        /// Encoder layers [default: 8]
        #[arg(long)]
        enc_layers: Option<usize>,
        /// Decoder layers [default: 8]
        #[arg(long)]
        dec_layers: Option<usize>,
        /// Attention heads [default: 32]
        #[arg(long)]
        heads: Option<usize>,
        /// Per-head key/value width [default: 8]
        #[arg(long)]
        head_dim: Option<usize>,
        /// Feed-forward width [default: 1024]
        #[arg(long)]
        d_ff: Option<usize>,
        /// Stop once training loss falls below this value [default: run all epochs]
        #[arg(long)]
        stop_at_train_loss: Option<f64>,
    },
    /// Decode the test split per vocabulary subset and emit the WER table
    Evaluate {
        /// Beam width [default: 10]
        #[arg(long)]
        beam_width: Option<usize>,
        /// Shallow-fusion LM weight [default: 0.3]
        #[arg(long)]
        lm_weight: Option<f64>,
        /// Evaluate a single unique-sentence subset size instead of 5..30
        #[arg(long)]
        subset_k: Option<usize>,
    },
    /// Beam-decode the test split into decodes.tsv
    Decode {
        /// Beam width [default: 10]
        #[arg(long)]
        beam_width: Option<usize>,
        /// Shallow-fusion LM weight [default: 0.3]
        #[arg(long)]
        lm_weight: Option<f64>,
    },
    /// Export one encoder-decoder attention head as CSV + PGM heatmap
    ExportAttention {
        /// Utterance id from the manifest (e.g. utt00003)
        #[arg(long)]
        utterance: String,
        /// Decoder layer index [default: 0]
        #[arg(long, default_value_t = 0)]
        layer: usize,
        /// Attention head index [default: 0]
        #[arg(long, default_value_t = 0)]
        head: usize,
    },
}

fn build_config(cli: &Cli) -> Result<RunConfig, cortex2text::Error> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &cli.config {
        cfg.load_file(path)?;
    }
    if let Some(v) = &cli.out_dir {
        cfg.out_dir = v.clone();
    }
    if let Some(v) = &cli.corpus {
        cfg.corpus = Some(v.clone());
    }
    if let Some(v) = cli.seed {
        cfg.seed = v;
    }
    if cli.timing {
        cfg.timing = true;
    }

    match &cli.command {
        Command::SynthData {
            sentences,
            repetitions,
            noise,
        } => {
            if let Some(v) = sentences {
                cfg.sentences = Some(v.clone());
            }
            if let Some(v) = repetitions {
                cfg.repetitions = *v;
            }
            if let Some(v) = noise {
                cfg.noise_level = *v;
            }
        }
        Command::ExtractFeatures => {}
        Command::FitKpca {
            components,
            max_landmarks,
        } => {
            if let Some(v) = components {
                cfg.kpca_components = *v;
            }
            if let Some(v) = max_landmarks {
                cfg.kpca_max_landmarks = *v;
            }
        }
        Command::Train {
            epochs,
            batch_size,
            lr,
            warmup_steps,
            d_model,
            enc_layers,
            dec_layers,
            heads,
            head_dim,
            d_ff,
            stop_at_train_loss,
        } => {
            if let Some(v) = epochs {
                cfg.epochs = *v;
            }
            if let Some(v) = batch_size {
                cfg.batch_size = *v;
            }
            if let Some(v) = lr {
                cfg.lr = *v;
            }
            if warmup_steps.is_some() {
                cfg.warmup_steps = *warmup_steps;
            }
            if let Some(v) = d_model {
                cfg.d_model = *v;
            }
            if let Some(v) = enc_layers {
                cfg.n_enc_layers = *v;
            }
            if let Some(v) = dec_layers {
                cfg.n_dec_layers = *v;
            }
            if let Some(v) = heads {
                cfg.n_heads = *v;
            }
            if let Some(v) = head_dim {
                cfg.d_k = *v;
                cfg.d_v = *v;
            }
            if let Some(v) = d_ff {
                cfg.d_ff = *v;
            }
            if stop_at_train_loss.is_some() {
                cfg.stop_at_train_loss = *stop_at_train_loss;
            }
        }
        Command::Evaluate {
            beam_width,
            lm_weight,
            subset_k,
        } => {
            if let Some(v) = beam_width {
                cfg.beam_width = *v;
            }
            if let Some(v) = lm_weight {
                cfg.lm_weight = *v;
            }
            if subset_k.is_some() {
                cfg.subset_k = *subset_k;
            }
        }
        Command::Decode {
            beam_width,
            lm_weight,
        } => {
            if let Some(v) = beam_width {
                cfg.beam_width = *v;
            }
            if let Some(v) = lm_weight {
                cfg.lm_weight = *v;
            }
        }
        Command::ExportAttention { .. } => {}
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), cortex2text::Error> {
    let cfg = build_config(cli)?;
    match &cli.command {
        Command::SynthData { .. } => {
            pipeline::synth_data(&cfg)?;
        }
        Command::ExtractFeatures => pipeline::extract_features_cmd(&cfg)?,
        Command::FitKpca { .. } => pipeline::fit_kpca_cmd(&cfg)?,
        Command::Train { .. } => pipeline::train_cmd(&cfg)?,
        Command::Evaluate { .. } => {
            pipeline::evaluate_cmd(&cfg)?;
        }
        Command::Decode { .. } => {
            pipeline::decode_cmd(&cfg)?;
        }
        Command::ExportAttention {
            utterance,
            layer,
            head,
        } => {
            pipeline::export_attention_cmd(&cfg, utterance, *layer, *head)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("c2t: error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::FAILURE
        }
    }
}
