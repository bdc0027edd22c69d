//! Corpus handling: vocabulary construction, deterministic 80/10/10
//! splits, vocabulary-subset experiments, synthetic EEG generation, and
//! recording/manifest file I/O.

use crate::error::{Error, Result};
use crate::signal::{EegRecording, CHANNEL_COUNT, SAMPLE_RATE_HZ};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::f64::consts::PI;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

pub const PAD_ID: u32 = 0;
pub const SOS_ID: u32 = 1;
pub const EOS_ID: u32 = 2;
pub const RESERVED_TOKENS: [&str; 3] = ["<pad>", "<s>", "</s>"];

/// Word <-> id bijection with the three reserved ids up front.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    /// Corpus words sorted lexicographically after the reserved tokens.
    pub fn from_corpus(corpus: &Corpus) -> Result<Self> {
        Vocabulary::from_words(corpus.recordings.iter().flat_map(|r| r.transcript.iter()))
    }

    pub fn from_words<'a, I: IntoIterator<Item = &'a String>>(words: I) -> Result<Self> {
        let mut unique: Vec<String> = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for w in words {
            if RESERVED_TOKENS.contains(&w.as_str()) {
                return Err(Error::InvalidConfig(format!(
                    "corpus word {w:?} collides with a reserved token"
                )));
            }
            if seen.insert(w.clone()) {
                unique.push(w.clone());
            }
        }
        unique.sort();
        let mut all: Vec<String> = RESERVED_TOKENS.iter().map(|s| s.to_string()).collect();
        all.extend(unique);
        let index = all
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i as u32))
            .collect();
        Ok(Vocabulary { words: all, index })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Corpus word count, excluding the reserved tokens.
    pub fn n_words(&self) -> usize {
        self.words.len() - RESERVED_TOKENS.len()
    }

    pub fn id(&self, word: &str) -> Result<u32> {
        self.index
            .get(word)
            .copied()
            .ok_or_else(|| Error::OutOfVocabulary(word.to_string()))
    }

    pub fn word(&self, id: u32) -> Result<&str> {
        self.words
            .get(id as usize)
            .map(String::as_str)
            .ok_or(Error::UnknownTokenId(id))
    }

    pub fn encode(&self, transcript: &[String]) -> Result<Vec<u32>> {
        transcript.iter().map(|w| self.id(w)).collect()
    }

    pub fn decode(&self, ids: &[u32]) -> Result<Vec<String>> {
        ids.iter().map(|&i| self.word(i).map(String::from)).collect()
    }

    /// One word per line, id order.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for w in &self.words {
            out.push_str(w);
            out.push('\n');
        }
        std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let words: Vec<String> = text.lines().map(String::from).collect();
        for (i, r) in RESERVED_TOKENS.iter().enumerate() {
            if words.get(i).map(String::as_str) != Some(*r) {
                return Err(Error::MalformedFile {
                    path: path.display().to_string(),
                    detail: format!("reserved token {i} missing"),
                });
            }
        }
        let index = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i as u32))
            .collect();
        Ok(Vocabulary { words, index })
    }
}

/// A list of recordings plus derived sentence/word statistics.
#[derive(Clone, Debug, Default)]
pub struct Corpus {
    pub recordings: Vec<EegRecording>,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.recordings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.recordings.is_empty()
    }

    /// Distinct sentences in order of first appearance.
    pub fn unique_sentences(&self) -> Vec<String> {
        let mut seen = std::collections::HashSet::new();
        let mut out = Vec::new();
        for rec in &self.recordings {
            let s = rec.transcript.join(" ");
            if seen.insert(s.clone()) {
                out.push(s);
            }
        }
        out
    }

    /// Distinct words, sorted.
    pub fn unique_words(&self) -> Vec<String> {
        let mut set: Vec<String> = self
            .recordings
            .iter()
            .flat_map(|r| r.transcript.iter().cloned())
            .collect();
        set.sort();
        set.dedup();
        set
    }
}

/// 80/10/10 split fractions plus the shuffle seed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(seed: u64) -> Self {
        SplitSpec {
            train_fraction: 0.8,
            val_fraction: 0.1,
            test_fraction: 0.1,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sum = self.train_fraction + self.val_fraction + self.test_fraction;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!("split fractions sum to {sum}")));
        }
        Ok(())
    }
}

/// Disjoint index sets covering the corpus.
#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded uniform shuffle, then a contiguous partition:
/// train = floor(train_fraction * n), val = floor(val_fraction * n),
/// test = remainder.
pub fn split(n_utterances: usize, spec: &SplitSpec) -> Result<Split> {
    spec.validate()?;
    if n_utterances < 10 {
        return Err(Error::CorpusTooSmall {
            got: n_utterances,
            min: 10,
        });
    }
    let mut indices: Vec<usize> = (0..n_utterances).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    indices.shuffle(&mut rng);
    let n_train = (spec.train_fraction * n_utterances as f64).floor() as usize;
    let n_val = (spec.val_fraction * n_utterances as f64).floor() as usize;
    let train = indices[..n_train].to_vec();
    let val = indices[n_train..n_train + n_val].to_vec();
    let test = indices[n_train + n_val..].to_vec();
    // Disjointness and coverage hold by construction; keep the set
    // algebra asserted on every run.
    debug_assert!({
        let mut all: Vec<usize> = train.iter().chain(&val).chain(&test).copied().collect();
        all.sort_unstable();
        all == (0..n_utterances).collect::<Vec<_>>()
    });
    Ok(Split { train, val, test })
}

/// Restriction of a corpus to utterances whose sentence is among the
/// first `k` unique sentences, with counts recomputed from the data.
#[derive(Clone, Debug)]
pub struct SubsetExperiment {
    pub k: usize,
    pub indices: Vec<usize>,
    pub total_utterances: usize,
    pub unique_sentences: usize,
    pub unique_words: usize,
}

pub fn subset_experiment(corpus: &Corpus, k: usize) -> SubsetExperiment {
    let sentences = corpus.unique_sentences();
    let kept: std::collections::HashSet<&String> = sentences.iter().take(k).collect();
    let indices: Vec<usize> = corpus
        .recordings
        .iter()
        .enumerate()
        .filter(|(_, r)| kept.contains(&r.transcript.join(" ")))
        .map(|(i, _)| i)
        .collect();
    let sub = Corpus {
        recordings: indices
            .iter()
            .map(|&i| corpus.recordings[i].clone())
            .collect(),
    };
    SubsetExperiment {
        k,
        total_utterances: indices.len(),
        unique_sentences: sub.unique_sentences().len(),
        unique_words: sub.unique_words().len(),
        indices,
    }
}

/// The vocabulary-scaling ladder used by the evaluation tables.
pub const SUBSET_KS: [usize; 6] = [5, 10, 15, 20, 25, 30];

pub fn subset_experiments(corpus: &Corpus, ks: &[usize]) -> Vec<SubsetExperiment> {
    ks.iter().map(|&k| subset_experiment(corpus, k)).collect()
}

// ── synthetic generation ─────────────────────────────────────────────

const OSCILLATIONS_PER_WORD: usize = 3;
const COMPONENT_AMPLITUDES_UV: [f64; OSCILLATIONS_PER_WORD] = [10.0, 6.0, 4.0];

/// Deterministic per-word signal signature: three band-limited
/// oscillation frequencies and a duration.
#[derive(Clone, Debug, PartialEq)]
struct WordSignature {
    frequencies_hz: [f64; OSCILLATIONS_PER_WORD],
    duration_secs: f64,
}

fn word_signature(word: &str, seed: u64) -> WordSignature {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, fnv1a(word.as_bytes())));
    let mut frequencies_hz = [0.0; OSCILLATIONS_PER_WORD];
    for f in &mut frequencies_hz {
        *f = rng.random_range(1.0..40.0);
    }
    WordSignature {
        frequencies_hz,
        duration_secs: rng.random_range(0.3..0.6),
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x1000_0000_01b3);
    }
    h
}

/// splitmix64 step, for deriving independent seeds.
fn mix_seed(base: u64, salt: u64) -> u64 {
    let mut z = base ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Per-utterance noise seed, recorded in the manifest.
pub fn utterance_seed(corpus_seed: u64, utterance_index: usize) -> u64 {
    mix_seed(corpus_seed, 0x5eed ^ (utterance_index as u64))
}

/// Generate a synthetic corpus: each word is a deterministic mixture of
/// three band-limited oscillations (1-40 Hz, duration 300-600 ms) with
/// per-channel phase offsets from a seeded channel signature; words are
/// concatenated per utterance and white noise at `noise_level` (microvolt
/// std-dev) is added. The word->signature mapping is injective, checked
/// explicitly.
pub fn generate_synthetic(
    sentences: &[String],
    repetitions: usize,
    seed: u64,
    noise_level: f64,
) -> Result<Corpus> {
    if sentences.is_empty() || repetitions == 0 {
        return Err(Error::InvalidConfig(
            "need at least one sentence and one repetition".into(),
        ));
    }
    let tokenized: Vec<Vec<String>> = sentences
        .iter()
        .map(|s| s.split_whitespace().map(str::to_lowercase).collect())
        .collect();
    if tokenized.iter().any(|t: &Vec<String>| t.is_empty()) {
        return Err(Error::EmptyTranscript);
    }

    // Word signatures, with an explicit injectivity check.
    let mut signatures: HashMap<String, WordSignature> = HashMap::new();
    for word in tokenized.iter().flatten() {
        signatures
            .entry(word.clone())
            .or_insert_with(|| word_signature(word, seed));
    }
    let mut by_word: Vec<(&String, &WordSignature)> = signatures.iter().collect();
    by_word.sort_by_key(|(w, _)| w.as_str());
    for i in 0..by_word.len() {
        for j in (i + 1)..by_word.len() {
            if by_word[i].1.frequencies_hz == by_word[j].1.frequencies_hz {
                return Err(Error::SignatureCollision(
                    by_word[i].0.clone(),
                    by_word[j].0.clone(),
                ));
            }
        }
    }

    // Channel signature: a fixed per-channel phase per oscillation slot.
    let mut chan_rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0xc4a7));
    let mut channel_phases = [[0.0; OSCILLATIONS_PER_WORD]; CHANNEL_COUNT];
    for row in &mut channel_phases {
        for p in row.iter_mut() {
            *p = chan_rng.random_range(0.0..2.0 * PI);
        }
    }

    let fs = SAMPLE_RATE_HZ as f64;
    let labels = EegRecording::default_labels();
    let mut recordings = Vec::with_capacity(sentences.len() * repetitions);
    for transcript in &tokenized {
        for _rep in 0..repetitions {
            let utt_index = recordings.len();
            let n_samples: usize = transcript
                .iter()
                .map(|w| (signatures[w].duration_secs * fs).round() as usize)
                .sum();
            let mut samples = vec![vec![0.0; n_samples]; CHANNEL_COUNT];
            let mut offset = 0;
            for word in transcript {
                let sig = &signatures[word];
                let n = (sig.duration_secs * fs).round() as usize;
                for (ch, channel) in samples.iter_mut().enumerate() {
                    for (i, slot) in channel[offset..offset + n].iter_mut().enumerate() {
                        let t = i as f64 / fs;
                        let mut v = 0.0;
                        for k in 0..OSCILLATIONS_PER_WORD {
                            v += COMPONENT_AMPLITUDES_UV[k]
                                * (2.0 * PI * sig.frequencies_hz[k] * t + channel_phases[ch][k])
                                    .sin();
                        }
                        *slot = v;
                    }
                }
                offset += n;
            }
            if noise_level > 0.0 {
                let mut noise_rng = ChaCha8Rng::seed_from_u64(utterance_seed(seed, utt_index));
                for channel in &mut samples {
                    for v in channel.iter_mut() {
                        let z: f64 = StandardNormal.sample(&mut noise_rng);
                        *v += noise_level * z;
                    }
                }
            }
            recordings.push(EegRecording::new(
                SAMPLE_RATE_HZ,
                labels.clone(),
                samples,
                transcript.clone(),
            )?);
        }
    }
    Ok(Corpus { recordings })
}

// ── recording file format ────────────────────────────────────────────

const RECORDING_HEADER: &str = "c2t-recording v1";

/// Textual header followed by binary little-endian f32 samples,
/// channel-major.
pub fn write_recording(path: &Path, rec: &EegRecording) -> Result<()> {
    let file =
        std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e| Error::io(path.display().to_string(), e);
    writeln!(w, "{RECORDING_HEADER}").map_err(io_err)?;
    writeln!(w, "sample_rate {}", rec.sample_rate).map_err(io_err)?;
    writeln!(w, "channels {}", rec.samples.len()).map_err(io_err)?;
    writeln!(w, "samples {}", rec.len()).map_err(io_err)?;
    writeln!(w, "labels {}", rec.channel_labels.join(" ")).map_err(io_err)?;
    writeln!(w, "transcript {}", rec.transcript.join(" ")).map_err(io_err)?;
    writeln!(w, "end-header").map_err(io_err)?;
    for channel in &rec.samples {
        for &v in channel {
            w.write_all(&(v as f32).to_le_bytes()).map_err(io_err)?;
        }
    }
    w.flush().map_err(io_err)
}

pub fn read_recording(path: &Path) -> Result<EegRecording> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut r = BufReader::new(file);
    let bad = |detail: String| Error::MalformedFile {
        path: path.display().to_string(),
        detail,
    };

    let mut line = String::new();
    let read_line = |r: &mut BufReader<std::fs::File>, line: &mut String| -> Result<String> {
        line.clear();
        r.read_line(line)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        Ok(line.trim_end_matches('\n').to_string())
    };

    if read_line(&mut r, &mut line)? != RECORDING_HEADER {
        return Err(bad("bad header".into()));
    }
    let mut sample_rate = 0u32;
    let mut channels = 0usize;
    let mut samples = 0usize;
    let mut labels: Vec<String> = Vec::new();
    let mut transcript: Vec<String> = Vec::new();
    loop {
        let l = read_line(&mut r, &mut line)?;
        if l == "end-header" {
            break;
        }
        if l.is_empty() {
            return Err(bad("truncated header".into()));
        }
        let (key, value) = l.split_once(' ').unwrap_or((l.as_str(), ""));
        match key {
            "sample_rate" => {
                sample_rate = value.parse().map_err(|_| bad(format!("sample_rate {value}")))?
            }
            "channels" => {
                channels = value.parse().map_err(|_| bad(format!("channels {value}")))?
            }
            "samples" => samples = value.parse().map_err(|_| bad(format!("samples {value}")))?,
            "labels" => labels = value.split_whitespace().map(String::from).collect(),
            "transcript" => transcript = value.split_whitespace().map(String::from).collect(),
            other => return Err(bad(format!("unknown header field {other}"))),
        }
    }
    let mut data = vec![0u8; channels * samples * 4];
    r.read_exact(&mut data)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut chans = Vec::with_capacity(channels);
    for ch in 0..channels {
        let mut v = Vec::with_capacity(samples);
        for i in 0..samples {
            let off = (ch * samples + i) * 4;
            v.push(f32::from_le_bytes(data[off..off + 4].try_into().unwrap()) as f64);
        }
        chans.push(v);
    }
    EegRecording::new(sample_rate, labels, chans, transcript)
}

/// CSV import: one column per channel (header row = labels), transcript
/// in a sidecar text file (one line of words).
pub fn read_recording_csv(csv_path: &Path, transcript_path: &Path) -> Result<EegRecording> {
    let text = std::fs::read_to_string(csv_path)
        .map_err(|e| Error::io(csv_path.display().to_string(), e))?;
    let bad = |detail: String| Error::MalformedFile {
        path: csv_path.display().to_string(),
        detail,
    };
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| bad("empty file".into()))?;
    let labels: Vec<String> = header.split(',').map(|s| s.trim().to_string()).collect();
    let mut chans: Vec<Vec<f64>> = vec![Vec::new(); labels.len()];
    for (row_idx, row) in lines.enumerate() {
        if row.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = row.split(',').collect();
        if fields.len() != labels.len() {
            return Err(bad(format!(
                "row {}: {} fields, expected {}",
                row_idx + 2,
                fields.len(),
                labels.len()
            )));
        }
        for (ch, field) in fields.iter().enumerate() {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| bad(format!("row {}: bad number {field:?}", row_idx + 2)))?;
            chans[ch].push(v);
        }
    }
    let transcript_text = std::fs::read_to_string(transcript_path)
        .map_err(|e| Error::io(transcript_path.display().to_string(), e))?;
    let transcript: Vec<String> = transcript_text.split_whitespace().map(String::from).collect();
    EegRecording::new(SAMPLE_RATE_HZ, labels, chans, transcript)
}

pub fn write_recording_csv(csv_path: &Path, transcript_path: &Path, rec: &EegRecording) -> Result<()> {
    let mut out = String::new();
    out.push_str(&rec.channel_labels.join(","));
    out.push('\n');
    for i in 0..rec.len() {
        for (ch, channel) in rec.samples.iter().enumerate() {
            if ch > 0 {
                out.push(',');
            }
            out.push_str(&format!("{}", channel[i]));
        }
        out.push('\n');
    }
    std::fs::write(csv_path, out).map_err(|e| Error::io(csv_path.display().to_string(), e))?;
    std::fs::write(transcript_path, rec.transcript.join(" "))
        .map_err(|e| Error::io(transcript_path.display().to_string(), e))
}

// ── corpus manifest ──────────────────────────────────────────────────

/// One JSON-lines record per utterance. `file` is relative to the
/// manifest's directory.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ManifestEntry {
    pub id: String,
    pub file: String,
    pub transcript: String,
    pub seed: u64,
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut out = String::new();
    for e in entries {
        out.push_str(&serde_json::to_string(e).expect("manifest entry serializes"));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut entries = Vec::new();
    for (i, l) in text.lines().enumerate() {
        if l.trim().is_empty() {
            continue;
        }
        entries.push(
            serde_json::from_str(l).map_err(|e| Error::MalformedFile {
                path: path.display().to_string(),
                detail: format!("line {}: {e}", i + 1),
            })?,
        );
    }
    Ok(entries)
}

/// Write a corpus as one recording file per utterance plus
/// `manifest.jsonl`; returns the manifest path.
pub fn save_corpus(dir: &Path, corpus: &Corpus, corpus_seed: u64) -> Result<PathBuf> {
    let rec_dir = dir.join("recordings");
    std::fs::create_dir_all(&rec_dir).map_err(|e| Error::io(rec_dir.display().to_string(), e))?;
    let mut entries = Vec::with_capacity(corpus.len());
    for (i, rec) in corpus.recordings.iter().enumerate() {
        let id = format!("utt{i:05}");
        let rel = format!("recordings/{id}.c2trec");
        write_recording(&dir.join(&rel), rec)?;
        entries.push(ManifestEntry {
            id,
            file: rel,
            transcript: rec.transcript.join(" "),
            seed: utterance_seed(corpus_seed, i),
        });
    }
    let manifest = dir.join("manifest.jsonl");
    write_manifest(&manifest, &entries)?;
    Ok(manifest)
}

/// Load every recording referenced by a manifest.
pub fn load_corpus(manifest_path: &Path) -> Result<(Corpus, Vec<ManifestEntry>)> {
    let entries = read_manifest(manifest_path)?;
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let mut recordings = Vec::with_capacity(entries.len());
    for e in &entries {
        let rec = read_recording(&base.join(&e.file)).map_err(|err| err.for_utterance(&e.id))?;
        recordings.push(rec);
    }
    Ok((Corpus { recordings }, entries))
}
