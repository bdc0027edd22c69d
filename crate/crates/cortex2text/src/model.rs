//! The transformer encoder-decoder: an 8-layer encoder over continuous
//! feature frames, an 8-layer decoder over word tokens, multi-head
//! attention, sinusoidal positional encoding, post-norm residual
//! sublayers, a decoder embedding tied to the output projection, and
//! cross-entropy training with Adam.

use crate::checkpoint;
use crate::data::{EOS_ID, PAD_ID, SOS_ID};
use crate::error::{Error, Result};
use crate::numerics::{AdamConfig, AdamState, Graph, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;
use std::path::Path;
use std::time::Instant;

pub const LAYER_NORM_EPS: f64 = 1e-6;

/// Architecture hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TransformerConfig {
    pub d_model: usize,
    pub n_enc_layers: usize,
    pub n_dec_layers: usize,
    pub n_heads: usize,
    pub d_k: usize,
    pub d_v: usize,
    pub d_ff: usize,
    pub input_dim: usize,
    pub vocab_size: usize,
    /// Maximum encoder input length, in feature frames.
    pub max_src_len: usize,
    /// Maximum decoder input length, in tokens.
    pub max_tgt_len: usize,
    pub dropout: f64,
    pub label_smoothing: f64,
    pub tie_output_embedding: bool,
}

impl TransformerConfig {
    /// The full-scale configuration: d_model 256, 8+8 layers, 32 heads of
    /// dimension 8, feed-forward width 1024, 90-dimensional input.
    pub fn production(vocab_size: usize) -> Self {
        TransformerConfig {
            d_model: 256,
            n_enc_layers: 8,
            n_dec_layers: 8,
            n_heads: 32,
            d_k: 8,
            d_v: 8,
            d_ff: 1024,
            input_dim: 90,
            vocab_size,
            max_src_len: 2048,
            max_tgt_len: 32,
            dropout: 0.0,
            label_smoothing: 0.0,
            tie_output_embedding: true,
        }
    }

    /// A small configuration for tests and examples.
    pub fn tiny(vocab_size: usize, input_dim: usize) -> Self {
        TransformerConfig {
            d_model: 8,
            n_enc_layers: 1,
            n_dec_layers: 1,
            n_heads: 2,
            d_k: 4,
            d_v: 4,
            d_ff: 16,
            input_dim,
            vocab_size,
            max_src_len: 256,
            max_tgt_len: 16,
            dropout: 0.0,
            label_smoothing: 0.0,
            tie_output_embedding: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_heads * self.d_v != self.d_model {
            return Err(Error::InvalidConfig(format!(
                "n_heads * d_v = {} must equal d_model = {}",
                self.n_heads * self.d_v,
                self.d_model
            )));
        }
        if self.d_k != self.d_v {
            return Err(Error::InvalidConfig("d_k must equal d_v".into()));
        }
        if !self.d_model.is_multiple_of(2) {
            return Err(Error::InvalidConfig("d_model must be even".into()));
        }
        if self.vocab_size < 4 {
            return Err(Error::InvalidConfig(
                "vocabulary needs the 3 reserved ids plus at least one word".into(),
            ));
        }
        if self.max_src_len == 0 || self.max_tgt_len == 0 {
            return Err(Error::InvalidConfig("max lengths must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidConfig(format!("dropout {}", self.dropout)));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(Error::InvalidConfig(format!(
                "label smoothing {}",
                self.label_smoothing
            )));
        }
        Ok(())
    }

    fn attn_param_count(&self) -> usize {
        3 * self.d_model * (self.n_heads * self.d_k) + (self.n_heads * self.d_v) * self.d_model
    }

    /// Closed-form parameter count.
    pub fn param_count(&self) -> usize {
        let ff = self.d_model * self.d_ff + self.d_ff + self.d_ff * self.d_model + self.d_model;
        let norm = 2 * self.d_model;
        let enc_layer = self.attn_param_count() + ff + 2 * norm;
        let dec_layer = 2 * self.attn_param_count() + ff + 3 * norm;
        let untied_proj = if self.tie_output_embedding {
            0
        } else {
            self.d_model * self.vocab_size
        };
        self.input_dim * self.d_model
            + self.d_model
            + self.n_enc_layers * enc_layer
            + self.vocab_size * self.d_model
            + self.n_dec_layers * dec_layer
            + self.vocab_size
            + untied_proj
    }
}

/// Sinusoidal positional encoding:
/// `PE(pos, 2i) = sin(pos / 10000^(2i/d))`, `PE(pos, 2i+1) = cos(same)`.
pub fn positional_encoding(len: usize, d_model: usize) -> Tensor {
    let mut data = vec![0.0; len * d_model];
    for pos in 0..len {
        for i in 0..d_model / 2 {
            let angle = pos as f64 / 10000_f64.powf(2.0 * i as f64 / d_model as f64);
            data[pos * d_model + 2 * i] = angle.sin();
            data[pos * d_model + 2 * i + 1] = angle.cos();
        }
    }
    Tensor::matrix(len, d_model, data).expect("shape by construction")
}

/// Row-major `s x s` mask allowing each position to attend to itself and
/// earlier positions only.
pub fn causal_mask(s: usize) -> Vec<bool> {
    let mut mask = vec![false; s * s];
    for i in 0..s {
        for j in 0..=i {
            mask[i * s + j] = true;
        }
    }
    mask
}

/// Graph vars of one attention block's projections.
#[derive(Clone, Copy)]
pub struct MhaWeights {
    pub wq: Var,
    pub wk: Var,
    pub wv: Var,
    pub wo: Var,
}

/// Scaled dot-product attention over `n_heads` column slices of the
/// projected inputs; heads are concatenated and projected by `wo`.
/// `mask[i][j] == false` forbids query `i` attending to key `j`. When
/// `record` is given, each head's weight matrix is appended to it.
#[allow(clippy::too_many_arguments)]
pub fn multi_head_attention(
    g: &mut Graph,
    q_input: Var,
    kv_input: Var,
    weights: MhaWeights,
    n_heads: usize,
    d_k: usize,
    d_v: usize,
    mask: Option<&[bool]>,
    mut record: Option<&mut Vec<Tensor>>,
) -> Result<Var> {
    let q = g.matmul(q_input, weights.wq)?;
    let k = g.matmul(kv_input, weights.wk)?;
    let v = g.matmul(kv_input, weights.wv)?;
    let scale = 1.0 / (d_k as f64).sqrt();
    let mut heads = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let qh = g.slice_cols(q, h * d_k, d_k)?;
        let kh = g.slice_cols(k, h * d_k, d_k)?;
        let vh = g.slice_cols(v, h * d_v, d_v)?;
        let kt = g.transpose(kh)?;
        let scores = g.matmul(qh, kt)?;
        let scaled = g.scale(scores, scale)?;
        let attn = match mask {
            Some(m) => g.softmax_masked(scaled, m)?,
            None => g.softmax(scaled)?,
        };
        if let Some(rec) = record.as_deref_mut() {
            rec.push(g.value(attn).clone());
        }
        heads.push(g.matmul(attn, vh)?);
    }
    let concat = g.concat_cols(&heads)?;
    g.matmul(concat, weights.wo)
}

// ── parameters ───────────────────────────────────────────────────────

enum Init {
    Xavier,
    Zero,
    One,
}

fn param_specs(cfg: &TransformerConfig) -> Vec<(String, Vec<usize>, Init)> {
    let d = cfg.d_model;
    let hk = cfg.n_heads * cfg.d_k;
    let hv = cfg.n_heads * cfg.d_v;
    let mut specs: Vec<(String, Vec<usize>, Init)> = Vec::new();
    specs.push(("encoder.input_proj.weight".into(), vec![cfg.input_dim, d], Init::Xavier));
    specs.push(("encoder.input_proj.bias".into(), vec![d], Init::Zero));
    let attn = |specs: &mut Vec<(String, Vec<usize>, Init)>, prefix: &str| {
        specs.push((format!("{prefix}.wq"), vec![d, hk], Init::Xavier));
        specs.push((format!("{prefix}.wk"), vec![d, hk], Init::Xavier));
        specs.push((format!("{prefix}.wv"), vec![d, hv], Init::Xavier));
        specs.push((format!("{prefix}.wo"), vec![hv, d], Init::Xavier));
    };
    let norm = |specs: &mut Vec<(String, Vec<usize>, Init)>, prefix: &str| {
        specs.push((format!("{prefix}.gain"), vec![d], Init::One));
        specs.push((format!("{prefix}.bias"), vec![d], Init::Zero));
    };
    let ff = |specs: &mut Vec<(String, Vec<usize>, Init)>, prefix: &str| {
        specs.push((format!("{prefix}.w1"), vec![d, cfg.d_ff], Init::Xavier));
        specs.push((format!("{prefix}.b1"), vec![cfg.d_ff], Init::Zero));
        specs.push((format!("{prefix}.w2"), vec![cfg.d_ff, d], Init::Xavier));
        specs.push((format!("{prefix}.b2"), vec![d], Init::Zero));
    };
    for l in 0..cfg.n_enc_layers {
        let p = format!("encoder.layer{l}");
        attn(&mut specs, &format!("{p}.self_attn"));
        norm(&mut specs, &format!("{p}.norm1"));
        ff(&mut specs, &format!("{p}.ff"));
        norm(&mut specs, &format!("{p}.norm2"));
    }
    specs.push(("decoder.embedding".into(), vec![cfg.vocab_size, d], Init::Xavier));
    for l in 0..cfg.n_dec_layers {
        let p = format!("decoder.layer{l}");
        attn(&mut specs, &format!("{p}.self_attn"));
        norm(&mut specs, &format!("{p}.norm1"));
        attn(&mut specs, &format!("{p}.cross_attn"));
        norm(&mut specs, &format!("{p}.norm2"));
        ff(&mut specs, &format!("{p}.ff"));
        norm(&mut specs, &format!("{p}.norm3"));
    }
    specs.push(("decoder.output_bias".into(), vec![cfg.vocab_size], Init::Zero));
    if !cfg.tie_output_embedding {
        specs.push(("decoder.output_proj".into(), vec![d, cfg.vocab_size], Init::Xavier));
    }
    specs
}

/// All learned weights, in a fixed construction order.
#[derive(Clone, Debug)]
pub struct ModelParams {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ModelParams {
    /// Seeded Xavier-uniform initialization for matrices; biases zero,
    /// layer-norm gains one.
    pub fn init(cfg: &TransformerConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::build(cfg, |shape, init| match init {
            Init::Xavier => {
                let (fan_in, fan_out) = (shape[0], shape[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let data = (0..fan_in * fan_out)
                    .map(|_| rng.random_range(-limit..limit))
                    .collect();
                Tensor::new(shape.to_vec(), data).expect("shape by construction")
            }
            Init::Zero => Tensor::zeros(shape.to_vec()),
            Init::One => Tensor::filled(shape.to_vec(), 1.0),
        })
    }

    /// All-zero parameters (uniform output distribution).
    pub fn zeros(cfg: &TransformerConfig) -> Result<Self> {
        cfg.validate()?;
        Self::build(cfg, |shape, init| match init {
            Init::One => Tensor::filled(shape.to_vec(), 1.0),
            _ => Tensor::zeros(shape.to_vec()),
        })
    }

    fn build<F: FnMut(&[usize], &Init) -> Tensor>(
        cfg: &TransformerConfig,
        mut make: F,
    ) -> Result<Self> {
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        for (name, shape, init) in param_specs(cfg) {
            tensors.push(make(&shape, &init));
            names.push(name);
        }
        let index = names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i))
            .collect();
        Ok(ModelParams {
            names,
            tensors,
            index,
        })
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn param_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::all_finite)
    }
}

// ── the model ────────────────────────────────────────────────────────

/// Attention weights and per-layer outputs captured during one decoder
/// forward pass.
#[derive(Debug, Default)]
pub struct DecodeTrace {
    /// Output of each decoder layer, `S x d_model`.
    pub layer_outputs: Vec<Tensor>,
    /// Encoder-decoder attention weights, `[layer][head]`, each `S x T`.
    pub cross_attention: Vec<Vec<Tensor>>,
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: TransformerConfig,
    pub params: ModelParams,
}

struct Bound {
    vars: Vec<Var>,
}

impl Model {
    pub fn new(config: TransformerConfig, seed: u64) -> Result<Self> {
        Ok(Model {
            params: ModelParams::init(&config, seed)?,
            config,
        })
    }

    pub fn zeroed(config: TransformerConfig) -> Result<Self> {
        Ok(Model {
            params: ModelParams::zeros(&config)?,
            config,
        })
    }

    fn bind(&self, g: &mut Graph) -> Bound {
        Bound {
            vars: self
                .params
                .tensors
                .iter()
                .map(|t| g.leaf(t.clone()))
                .collect(),
        }
    }

    fn var(&self, bound: &Bound, name: &str) -> Var {
        bound.vars[self.params.index[name]]
    }

    fn mha_weights(&self, bound: &Bound, prefix: &str) -> MhaWeights {
        MhaWeights {
            wq: self.var(bound, &format!("{prefix}.wq")),
            wk: self.var(bound, &format!("{prefix}.wk")),
            wv: self.var(bound, &format!("{prefix}.wv")),
            wo: self.var(bound, &format!("{prefix}.wo")),
        }
    }

    fn sublayer_norm(
        &self,
        g: &mut Graph,
        bound: &Bound,
        prefix: &str,
        x: Var,
        sub: Var,
        rng: &mut Option<&mut ChaCha8Rng>,
    ) -> Result<Var> {
        let sub = match rng {
            Some(r) => g.dropout(sub, self.config.dropout, r)?,
            None => sub,
        };
        let added = g.add(x, sub)?;
        let gain = self.var(bound, &format!("{prefix}.gain"));
        let bias = self.var(bound, &format!("{prefix}.bias"));
        g.layer_norm(added, gain, bias, LAYER_NORM_EPS)
    }

    fn feed_forward(&self, g: &mut Graph, bound: &Bound, prefix: &str, x: Var) -> Result<Var> {
        let w1 = self.var(bound, &format!("{prefix}.w1"));
        let b1 = self.var(bound, &format!("{prefix}.b1"));
        let w2 = self.var(bound, &format!("{prefix}.w2"));
        let b2 = self.var(bound, &format!("{prefix}.b2"));
        let h = g.matmul(x, w1)?;
        let h = g.add_row(h, b1)?;
        let h = g.relu(h)?;
        let h = g.matmul(h, w2)?;
        g.add_row(h, b2)
    }

    /// Input projection + positional encoding, then the encoder stack.
    fn encode_inner(
        &self,
        g: &mut Graph,
        bound: &Bound,
        features: &Tensor,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var> {
        let t = features.rows();
        if features.cols() != self.config.input_dim {
            return Err(Error::ShapeMismatch(format!(
                "{} feature columns, model expects {}",
                features.cols(),
                self.config.input_dim
            )));
        }
        if t == 0 || t > self.config.max_src_len {
            return Err(Error::SequenceTooLong {
                got: t,
                max: self.config.max_src_len,
            });
        }
        let x = g.leaf(features.clone());
        let w = self.var(bound, "encoder.input_proj.weight");
        let b = self.var(bound, "encoder.input_proj.bias");
        let projected = g.matmul(x, w)?;
        let projected = g.add_row(projected, b)?;
        let pe = g.leaf(positional_encoding(t, self.config.d_model));
        let mut h = g.add(projected, pe)?;
        for l in 0..self.config.n_enc_layers {
            let p = format!("encoder.layer{l}");
            let attn = multi_head_attention(
                g,
                h,
                h,
                self.mha_weights(bound, &format!("{p}.self_attn")),
                self.config.n_heads,
                self.config.d_k,
                self.config.d_v,
                None,
                None,
            )?;
            h = self.sublayer_norm(g, bound, &format!("{p}.norm1"), h, attn, &mut rng)?;
            let ff = self.feed_forward(g, bound, &format!("{p}.ff"), h)?;
            h = self.sublayer_norm(g, bound, &format!("{p}.norm2"), h, ff, &mut rng)?;
        }
        Ok(h)
    }

    /// Embedding + positional encoding, masked self-attention,
    /// encoder-decoder attention, feed-forward; final projection tied to
    /// the embedding transpose.
    fn decode_inner(
        &self,
        g: &mut Graph,
        bound: &Bound,
        tokens: &[u32],
        memory: Var,
        mut rng: Option<&mut ChaCha8Rng>,
        mut trace: Option<&mut DecodeTrace>,
    ) -> Result<Var> {
        if tokens.first() != Some(&SOS_ID) {
            return Err(Error::InvalidConfig(
                "decoder input must begin with the start token".into(),
            ));
        }
        let s = tokens.len();
        if s > self.config.max_tgt_len {
            return Err(Error::SequenceTooLong {
                got: s,
                max: self.config.max_tgt_len,
            });
        }
        let ids: Vec<usize> = tokens.iter().map(|&t| t as usize).collect();
        let embedding = self.var(bound, "decoder.embedding");
        let emb = g.gather_rows(embedding, &ids)?;
        let pe = g.leaf(positional_encoding(s, self.config.d_model));
        let mut h = g.add(emb, pe)?;
        let mask = causal_mask(s);
        for l in 0..self.config.n_dec_layers {
            let p = format!("decoder.layer{l}");
            let self_attn = multi_head_attention(
                g,
                h,
                h,
                self.mha_weights(bound, &format!("{p}.self_attn")),
                self.config.n_heads,
                self.config.d_k,
                self.config.d_v,
                Some(&mask),
                None,
            )?;
            h = self.sublayer_norm(g, bound, &format!("{p}.norm1"), h, self_attn, &mut rng)?;
            let mut head_weights = Vec::new();
            let record = if trace.is_some() {
                Some(&mut head_weights)
            } else {
                None
            };
            let cross = multi_head_attention(
                g,
                h,
                memory,
                self.mha_weights(bound, &format!("{p}.cross_attn")),
                self.config.n_heads,
                self.config.d_k,
                self.config.d_v,
                None,
                record,
            )?;
            h = self.sublayer_norm(g, bound, &format!("{p}.norm2"), h, cross, &mut rng)?;
            let ff = self.feed_forward(g, bound, &format!("{p}.ff"), h)?;
            h = self.sublayer_norm(g, bound, &format!("{p}.norm3"), h, ff, &mut rng)?;
            if let Some(tr) = trace.as_deref_mut() {
                tr.cross_attention.push(head_weights);
                tr.layer_outputs.push(g.value(h).clone());
            }
        }
        let out_bias = self.var(bound, "decoder.output_bias");
        let logits = if self.config.tie_output_embedding {
            let et = g.transpose(embedding)?;
            g.matmul(h, et)?
        } else {
            let proj = self.var(bound, "decoder.output_proj");
            g.matmul(h, proj)?
        };
        g.add_row(logits, out_bias)
    }

    /// Teacher-forced mean cross-entropy over non-pad positions. The
    /// decoder reads `[sos, w1..wn, pads]` and the loss scores
    /// `[w1..wn, eos, pads]` with pad positions weighted zero.
    fn loss_inner(
        &self,
        g: &mut Graph,
        bound: &Bound,
        features: &Tensor,
        target_ids: &[u32],
        pad_to: Option<usize>,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(Var, usize)> {
        if target_ids.is_empty() {
            return Err(Error::EmptyTranscript);
        }
        if target_ids.iter().any(|&t| t < 3) {
            return Err(Error::InvalidConfig(
                "loss targets must be corpus words, not reserved tokens".into(),
            ));
        }
        let n = target_ids.len();
        let len = pad_to.unwrap_or(n + 1).max(n + 1);
        let mut input = Vec::with_capacity(len);
        input.push(SOS_ID);
        input.extend_from_slice(target_ids);
        input.resize(len, PAD_ID);
        let mut predict: Vec<usize> = target_ids.iter().map(|&t| t as usize).collect();
        predict.push(EOS_ID as usize);
        predict.resize(len, PAD_ID as usize);
        let mut weights = vec![1.0; n + 1];
        weights.resize(len, 0.0);

        let memory = self.encode_inner(g, bound, features, rng.as_deref_mut())?;
        let logits = self.decode_inner(g, bound, &input, memory, rng, None)?;
        let ce = g.cross_entropy(logits, &predict, &weights, self.config.label_smoothing)?;
        Ok((ce, n + 1))
    }

    // ── public forward API ───────────────────────────────────────────

    /// Encoder memory for one utterance.
    pub fn encode_memory(&self, features: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let bound = self.bind(&mut g);
        let mem = self.encode_inner(&mut g, &bound, features, None)?;
        Ok(g.value(mem).clone())
    }

    /// Full decoder logits (`tokens.len() x vocab`) against a
    /// precomputed encoder memory.
    pub fn forward_logits_with_memory(&self, memory: &Tensor, tokens: &[u32]) -> Result<Tensor> {
        let mut g = Graph::new();
        let bound = self.bind(&mut g);
        let mem = g.leaf(memory.clone());
        let logits = self.decode_inner(&mut g, &bound, tokens, mem, None, None)?;
        Ok(g.value(logits).clone())
    }

    /// Encode then decode in one call.
    pub fn forward_logits(&self, features: &Tensor, tokens: &[u32]) -> Result<Tensor> {
        let mut g = Graph::new();
        let bound = self.bind(&mut g);
        let mem = self.encode_inner(&mut g, &bound, features, None)?;
        let logits = self.decode_inner(&mut g, &bound, tokens, mem, None, None)?;
        Ok(g.value(logits).clone())
    }

    /// Forward pass that also captures per-layer outputs and
    /// encoder-decoder attention weights.
    pub fn forward_traced(&self, features: &Tensor, tokens: &[u32]) -> Result<(Tensor, DecodeTrace)> {
        let mut g = Graph::new();
        let bound = self.bind(&mut g);
        let mem = self.encode_inner(&mut g, &bound, features, None)?;
        let mut trace = DecodeTrace::default();
        let logits = self.decode_inner(&mut g, &bound, tokens, mem, None, Some(&mut trace))?;
        Ok((g.value(logits).clone(), trace))
    }

    /// Teacher-forced loss value for one utterance.
    pub fn loss_value(&self, features: &Tensor, target_ids: &[u32]) -> Result<f64> {
        self.loss_value_padded(features, target_ids, None)
    }

    /// Same loss with the target block padded to `pad_to` positions;
    /// masked pads contribute exactly zero.
    pub fn loss_value_padded(
        &self,
        features: &Tensor,
        target_ids: &[u32],
        pad_to: Option<usize>,
    ) -> Result<f64> {
        let mut g = Graph::new();
        let bound = self.bind(&mut g);
        let (loss, _) = self.loss_inner(&mut g, &bound, features, target_ids, pad_to, None)?;
        Ok(g.value(loss).item())
    }

    // ── persistence ──────────────────────────────────────────────────

    fn config_entry(&self) -> (String, Tensor) {
        let c = &self.config;
        (
            "config".to_string(),
            Tensor::vector(vec![
                c.d_model as f64,
                c.n_enc_layers as f64,
                c.n_dec_layers as f64,
                c.n_heads as f64,
                c.d_k as f64,
                c.d_v as f64,
                c.d_ff as f64,
                c.input_dim as f64,
                c.vocab_size as f64,
                c.max_src_len as f64,
                c.max_tgt_len as f64,
                c.dropout,
                c.label_smoothing,
                if c.tie_output_embedding { 1.0 } else { 0.0 },
            ]),
        )
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut entries = vec![self.config_entry()];
        for (name, tensor) in self.params.names.iter().zip(&self.params.tensors) {
            entries.push((name.clone(), tensor.clone()));
        }
        checkpoint::save_tensors(path, &entries)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let entries = checkpoint::load_tensors(path)?;
        let bad = |detail: String| Error::MalformedFile {
            path: path.display().to_string(),
            detail,
        };
        let (first_name, cfg_tensor) = entries.first().ok_or_else(|| bad("empty file".into()))?;
        if first_name != "config" || cfg_tensor.len() != 14 {
            return Err(bad("missing config entry".into()));
        }
        let v = cfg_tensor.data();
        let config = TransformerConfig {
            d_model: v[0] as usize,
            n_enc_layers: v[1] as usize,
            n_dec_layers: v[2] as usize,
            n_heads: v[3] as usize,
            d_k: v[4] as usize,
            d_v: v[5] as usize,
            d_ff: v[6] as usize,
            input_dim: v[7] as usize,
            vocab_size: v[8] as usize,
            max_src_len: v[9] as usize,
            max_tgt_len: v[10] as usize,
            dropout: v[11],
            label_smoothing: v[12],
            tie_output_embedding: v[13] != 0.0,
        };
        config.validate()?;
        let specs = param_specs(&config);
        if entries.len() != specs.len() + 1 {
            return Err(bad(format!(
                "{} parameter entries, expected {}",
                entries.len() - 1,
                specs.len()
            )));
        }
        let mut names = Vec::with_capacity(specs.len());
        let mut tensors = Vec::with_capacity(specs.len());
        for ((name, tensor), (want_name, want_shape, _)) in entries.into_iter().skip(1).zip(specs)
        {
            if name != want_name || tensor.shape() != want_shape.as_slice() {
                return Err(bad(format!("unexpected entry {name} {:?}", tensor.shape())));
            }
            names.push(name);
            tensors.push(tensor);
        }
        let index = names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i))
            .collect();
        Ok(Model {
            config,
            params: ModelParams {
                names,
                tensors,
                index,
            },
        })
    }
}

/// Finite-difference check of the full model loss gradient with respect
/// to every parameter coordinate. Returns the worst relative error.
pub fn model_grad_check(
    model: &Model,
    features: &Tensor,
    target_ids: &[u32],
    h: f64,
) -> Result<f64> {
    let mut g = Graph::new();
    let bound = model.bind(&mut g);
    let (loss, _) = model.loss_inner(&mut g, &bound, features, target_ids, None, None)?;
    g.backward(loss)?;
    let grads: Vec<Vec<f64>> = bound
        .vars
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            g.grad(v)
                .map(Tensor::into_data)
                .unwrap_or_else(|| vec![0.0; model.params.tensors[i].len()])
        })
        .collect();

    let mut probe = model.clone();
    let mut max_err: f64 = 0.0;
    for p in 0..grads.len() {
        for i in 0..grads[p].len() {
            let original = probe.params.tensors[p].data()[i];
            probe.params.tensors[p].data_mut()[i] = original + h;
            let plus = probe.loss_value(features, target_ids)?;
            probe.params.tensors[p].data_mut()[i] = original - h;
            let minus = probe.loss_value(features, target_ids)?;
            probe.params.tensors[p].data_mut()[i] = original;
            let numeric = (plus - minus) / (2.0 * h);
            let analytic = grads[p][i];
            let denom = 1.0_f64.max(analytic.abs()).max(numeric.abs());
            max_err = max_err.max((analytic - numeric).abs() / denom);
        }
    }
    Ok(max_err)
}

// ── training ─────────────────────────────────────────────────────────

/// Learning-rate schedule; the warmup variant follows the inverse
/// square-root ramp.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LrSchedule {
    Fixed,
    Warmup { warmup_steps: usize },
}

impl LrSchedule {
    fn learning_rate(&self, base: f64, d_model: usize, step: u64) -> f64 {
        match self {
            LrSchedule::Fixed => base,
            LrSchedule::Warmup { warmup_steps } => {
                let s = step as f64;
                let w = (*warmup_steps).max(1) as f64;
                (d_model as f64).powf(-0.5) * s.powf(-0.5).min(s * w.powf(-1.5))
            }
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub schedule: LrSchedule,
    pub seed: u64,
    pub adam: AdamConfig,
    /// Stop after the first epoch whose training loss drops below this.
    pub stop_at_train_loss: Option<f64>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            epochs: 120,
            batch_size: 100,
            learning_rate: 1e-4,
            schedule: LrSchedule::Fixed,
            seed: 0,
            adam: AdamConfig::default(),
            stop_at_train_loss: None,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub wall_seconds: f64,
}

pub struct TrainReport {
    /// The checkpoint with the best validation loss (the final epoch when
    /// no validation set is given).
    pub model: Model,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub metrics: Vec<EpochMetrics>,
}

/// One utterance: features plus target word ids.
pub type TrainExample = (Tensor, Vec<u32>);

/// Adam over seeded shuffled mini-batches. Single-threaded and
/// deterministic for a fixed seed.
pub fn train(
    mut model: Model,
    train_set: &[TrainExample],
    val_set: &[TrainExample],
    opts: &TrainOptions,
) -> Result<TrainReport> {
    if train_set.is_empty() {
        return Err(Error::InvalidConfig("empty training set".into()));
    }
    if opts.batch_size == 0 || opts.epochs == 0 {
        return Err(Error::InvalidConfig("epochs and batch size must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(1));
    let mut adam = AdamState::for_params(
        AdamConfig {
            learning_rate: opts.learning_rate,
            ..opts.adam
        },
        model.params.tensors(),
    );

    let mut metrics = Vec::with_capacity(opts.epochs);
    let mut best: Option<(usize, f64, ModelParams)> = None;
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=opts.epochs {
        let started = Instant::now();
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
        let mut epoch_loss_weighted = 0.0;
        let mut epoch_tokens = 0usize;

        for (batch_idx, batch) in order.chunks(opts.batch_size).enumerate() {
            let diverged = |detail: Error| match detail {
                Error::NonFiniteInput => Error::TrainingDiverged {
                    epoch,
                    batch: batch_idx + 1,
                },
                other => other,
            };
            let mut g = Graph::new();
            let bound = model.bind(&mut g);
            let mut terms = Vec::with_capacity(batch.len());
            for &idx in batch {
                let (features, targets) = &train_set[idx];
                let term = model
                    .loss_inner(&mut g, &bound, features, targets, None, Some(&mut dropout_rng))
                    .map_err(diverged)?;
                terms.push(term);
            }
            let total_tokens: usize = terms.iter().map(|t| t.1).sum();
            let mut acc: Option<Var> = None;
            for (ce, n) in &terms {
                let scaled = g.scale(*ce, *n as f64 / total_tokens as f64)?;
                acc = Some(match acc {
                    None => scaled,
                    Some(a) => g.add(a, scaled)?,
                });
            }
            let loss = acc.expect("non-empty batch");
            let loss_value = g.value(loss).item();
            if !loss_value.is_finite() {
                return Err(Error::TrainingDiverged {
                    epoch,
                    batch: batch_idx + 1,
                });
            }
            g.backward(loss)?;
            let grads: Vec<Tensor> = bound
                .vars
                .iter()
                .enumerate()
                .map(|(i, &v)| {
                    g.grad(v).unwrap_or_else(|| {
                        Tensor::zeros(model.params.tensors[i].shape().to_vec())
                    })
                })
                .collect();
            if grads.iter().any(|t| !t.all_finite()) {
                return Err(Error::TrainingDiverged {
                    epoch,
                    batch: batch_idx + 1,
                });
            }
            adam.set_learning_rate(opts.schedule.learning_rate(
                opts.learning_rate,
                model.config.d_model,
                adam.step_count() + 1,
            ));
            adam.step(model.params.tensors_mut(), &grads)?;
            epoch_loss_weighted += loss_value * total_tokens as f64;
            epoch_tokens += total_tokens;
        }

        let train_loss = epoch_loss_weighted / epoch_tokens as f64;
        let val_loss = if val_set.is_empty() {
            f64::NAN
        } else {
            let mut weighted = 0.0;
            let mut tokens = 0usize;
            for (features, targets) in val_set {
                weighted += model.loss_value(features, targets)? * (targets.len() + 1) as f64;
                tokens += targets.len() + 1;
            }
            weighted / tokens as f64
        };
        metrics.push(EpochMetrics {
            epoch,
            train_loss,
            val_loss,
            wall_seconds: started.elapsed().as_secs_f64(),
        });
        let tracked = if val_set.is_empty() { train_loss } else { val_loss };
        if best.as_ref().is_none_or(|(_, b, _)| tracked < *b) {
            best = Some((epoch, tracked, model.params.clone()));
        }
        if opts.stop_at_train_loss.is_some_and(|t| train_loss < t) {
            break;
        }
    }

    let (best_epoch, best_val_loss, best_params) = best.expect("at least one epoch ran");
    Ok(TrainReport {
        model: Model {
            config: model.config,
            params: best_params,
        },
        best_epoch,
        best_val_loss,
        metrics,
    })
}
