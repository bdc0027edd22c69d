//! Raw 31-channel EEG preprocessing (band-pass + notch IIR filtering) and
//! windowed statistical feature extraction at 100 Hz.
//!
//! The band-pass is a 4th-order Butterworth realized as a high-pass and a
//! low-pass biquad in cascade (two second-order sections via the bilinear
//! transform); the power-line notch is a second-order section at 60 Hz
//! with Q = 30. Filtering is causal, forward-only.

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::f64::consts::PI;
use std::sync::Arc;

pub const CHANNEL_COUNT: usize = 31;
pub const SAMPLE_RATE_HZ: u32 = 1000;
pub const FEATURES_PER_CHANNEL: usize = 5;
/// 31 channels x 5 statistical features.
pub const RAW_FEATURE_DIM: usize = CHANNEL_COUNT * FEATURES_PER_CHANNEL;
/// 100 ms analysis window at 1000 Hz.
pub const WINDOW_SAMPLES: usize = 100;
/// 10 ms hop, giving the 100 Hz feature rate.
pub const HOP_SAMPLES: usize = 10;

pub const BANDPASS_LOW_HZ: f64 = 0.1;
pub const BANDPASS_HIGH_HZ: f64 = 70.0;
pub const NOTCH_HZ: f64 = 60.0;
pub const NOTCH_Q: f64 = 30.0;

/// One multi-channel recording with its word-level transcript.
#[derive(Clone, Debug, PartialEq)]
pub struct EegRecording {
    pub sample_rate: u32,
    pub channel_labels: Vec<String>,
    /// Channel-major samples in microvolts; all channels equal length.
    pub samples: Vec<Vec<f64>>,
    pub transcript: Vec<String>,
}

impl EegRecording {
    pub fn new(
        sample_rate: u32,
        channel_labels: Vec<String>,
        samples: Vec<Vec<f64>>,
        transcript: Vec<String>,
    ) -> Result<Self> {
        if sample_rate != SAMPLE_RATE_HZ {
            return Err(Error::InvalidRecording(format!(
                "sample rate {sample_rate}, expected {SAMPLE_RATE_HZ}"
            )));
        }
        if channel_labels.len() != CHANNEL_COUNT || samples.len() != CHANNEL_COUNT {
            return Err(Error::InvalidRecording(format!(
                "{} labels / {} channels, expected {CHANNEL_COUNT}",
                channel_labels.len(),
                samples.len()
            )));
        }
        let n = samples[0].len();
        if samples.iter().any(|ch| ch.len() != n) {
            return Err(Error::InvalidRecording("channel lengths differ".into()));
        }
        Ok(EegRecording {
            sample_rate,
            channel_labels,
            samples,
            transcript,
        })
    }

    /// Samples per channel.
    pub fn len(&self) -> usize {
        self.samples[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn duration_secs(&self) -> f64 {
        self.len() as f64 / self.sample_rate as f64
    }

    /// Default channel labels `ch01..ch31`.
    pub fn default_labels() -> Vec<String> {
        (1..=CHANNEL_COUNT).map(|i| format!("ch{i:02}")).collect()
    }
}

/// One second-order section, direct form I: coefficients normalized so
/// a0 = 1.
#[derive(Clone, Copy, Debug)]
pub struct BiquadSection {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub a1: f64,
    pub a2: f64,
}

impl BiquadSection {
    /// Poles strictly inside the unit circle (Jury criterion for a
    /// second-order polynomial).
    pub fn is_stable(&self) -> bool {
        self.a2.abs() < 1.0 && self.a1.abs() < 1.0 + self.a2
    }

    pub fn magnitude_at(&self, freq_hz: f64, sample_rate_hz: f64) -> f64 {
        let z_inv = Complex64::from_polar(1.0, -2.0 * PI * freq_hz / sample_rate_hz);
        let num = Complex64::new(self.b0, 0.0) + z_inv * (self.b1 + self.b2 * z_inv);
        let den = Complex64::new(1.0, 0.0) + z_inv * (self.a1 + self.a2 * z_inv);
        (num / den).norm()
    }

    fn apply_into(&self, x: &[f64], y: &mut Vec<f64>) {
        y.clear();
        y.reserve(x.len());
        let (mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0);
        for &xn in x {
            let yn = self.b0 * xn + self.b1 * x1 + self.b2 * x2 - self.a1 * y1 - self.a2 * y2;
            x2 = x1;
            x1 = xn;
            y2 = y1;
            y1 = yn;
            y.push(yn);
        }
    }
}

/// Cascade of second-order sections with a design description.
#[derive(Clone, Debug)]
pub struct IirFilter {
    sections: Vec<BiquadSection>,
    description: String,
    sample_rate_hz: f64,
}

// RBJ cookbook designs (bilinear transform with pre-warped analog
// prototypes). Q = 1/sqrt(2) gives the maximally flat Butterworth shape
// for a single section.

fn butter_lowpass(fc: f64, fs: f64) -> BiquadSection {
    let q = std::f64::consts::FRAC_1_SQRT_2;
    let w0 = 2.0 * PI * fc / fs;
    let (sw, cw) = (w0.sin(), w0.cos());
    let alpha = sw / (2.0 * q);
    let a0 = 1.0 + alpha;
    BiquadSection {
        b0: (1.0 - cw) / 2.0 / a0,
        b1: (1.0 - cw) / a0,
        b2: (1.0 - cw) / 2.0 / a0,
        a1: -2.0 * cw / a0,
        a2: (1.0 - alpha) / a0,
    }
}

fn butter_highpass(fc: f64, fs: f64) -> BiquadSection {
    let q = std::f64::consts::FRAC_1_SQRT_2;
    let w0 = 2.0 * PI * fc / fs;
    let (sw, cw) = (w0.sin(), w0.cos());
    let alpha = sw / (2.0 * q);
    let a0 = 1.0 + alpha;
    BiquadSection {
        b0: (1.0 + cw) / 2.0 / a0,
        b1: -(1.0 + cw) / a0,
        b2: (1.0 + cw) / 2.0 / a0,
        a1: -2.0 * cw / a0,
        a2: (1.0 - alpha) / a0,
    }
}

fn notch_section(f0: f64, q: f64, fs: f64) -> BiquadSection {
    let w0 = 2.0 * PI * f0 / fs;
    let (sw, cw) = (w0.sin(), w0.cos());
    let alpha = sw / (2.0 * q);
    let a0 = 1.0 + alpha;
    BiquadSection {
        b0: 1.0 / a0,
        b1: -2.0 * cw / a0,
        b2: 1.0 / a0,
        a1: -2.0 * cw / a0,
        a2: (1.0 - alpha) / a0,
    }
}

impl IirFilter {
    /// 4th-order Butterworth band-pass: high-pass at `low_hz` cascaded
    /// with low-pass at `high_hz`.
    pub fn butterworth_bandpass(low_hz: f64, high_hz: f64, sample_rate_hz: f64) -> Self {
        let sections = vec![
            butter_highpass(low_hz, sample_rate_hz),
            butter_lowpass(high_hz, sample_rate_hz),
        ];
        let f = IirFilter {
            sections,
            description: format!("butterworth band-pass {low_hz}-{high_hz} Hz, order 4"),
            sample_rate_hz,
        };
        f.assert_stable();
        f
    }

    /// Second-order notch at `center_hz` with quality factor `q`.
    pub fn notch(center_hz: f64, q: f64, sample_rate_hz: f64) -> Self {
        let f = IirFilter {
            sections: vec![notch_section(center_hz, q, sample_rate_hz)],
            description: format!("notch {center_hz} Hz, Q={q}"),
            sample_rate_hz,
        };
        f.assert_stable();
        f
    }

    /// The production preprocessing chain: band-pass 0.1-70 Hz then the
    /// 60 Hz notch.
    pub fn eeg_preprocessing_chain() -> (IirFilter, IirFilter) {
        let fs = SAMPLE_RATE_HZ as f64;
        (
            IirFilter::butterworth_bandpass(BANDPASS_LOW_HZ, BANDPASS_HIGH_HZ, fs),
            IirFilter::notch(NOTCH_HZ, NOTCH_Q, fs),
        )
    }

    fn assert_stable(&self) {
        for s in &self.sections {
            assert!(
                s.is_stable(),
                "unstable section in {}: {:?}",
                self.description,
                s
            );
        }
    }

    pub fn sections(&self) -> &[BiquadSection] {
        &self.sections
    }

    pub fn description(&self) -> &str {
        &self.description
    }

    /// Causal forward pass through the cascade. The signal must be at
    /// least three times the section length (3 taps).
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() < 9 {
            return Err(Error::SignalTooShort);
        }
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        for s in &self.sections {
            s.apply_into(&cur, &mut next);
            std::mem::swap(&mut cur, &mut next);
        }
        Ok(cur)
    }

    pub fn magnitude_response(&self, freq_hz: f64) -> f64 {
        self.sections
            .iter()
            .map(|s| s.magnitude_at(freq_hz, self.sample_rate_hz))
            .product()
    }
}

/// Band-pass then notch on every channel; length preserved.
pub fn preprocess(rec: &EegRecording) -> Result<EegRecording> {
    let (bandpass, notch) = IirFilter::eeg_preprocessing_chain();
    let mut filtered = Vec::with_capacity(rec.samples.len());
    for ch in &rec.samples {
        filtered.push(notch.apply(&bandpass.apply(ch)?)?);
    }
    EegRecording::new(
        rec.sample_rate,
        rec.channel_labels.clone(),
        filtered,
        rec.transcript.clone(),
    )
}

/// The five per-window statistics, in feature order.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrameFeatures {
    pub rms: f64,
    pub zero_crossing_rate: f64,
    pub moving_window_average: f64,
    pub kurtosis: f64,
    pub spectral_entropy: f64,
}

impl FrameFeatures {
    pub fn as_array(&self) -> [f64; FEATURES_PER_CHANNEL] {
        [
            self.rms,
            self.zero_crossing_rate,
            self.moving_window_average,
            self.kurtosis,
            self.spectral_entropy,
        ]
    }
}

/// Statistics of one analysis window. The window must hold at least 8
/// samples.
///
/// Conventions: zeros count as positive for the zero-crossing rate;
/// kurtosis is Pearson m4/m2^2 with 0 for zero-variance windows; spectral
/// entropy is the Shannon entropy of the one-sided periodogram normalized
/// by log(bin count), 0 for all-zero windows.
pub fn frame_stats(window: &[f64]) -> FrameFeatures {
    let fft = FftPlanner::new().plan_fft_forward(window.len());
    frame_stats_with(&fft, window)
}

fn frame_stats_with(fft: &Arc<dyn Fft<f64>>, window: &[f64]) -> FrameFeatures {
    let n = window.len();
    assert!(n >= 8, "analysis window must hold at least 8 samples");
    let nf = n as f64;

    let mean = window.iter().sum::<f64>() / nf;
    let rms = (window.iter().map(|v| v * v).sum::<f64>() / nf).sqrt();

    let mut crossings = 0usize;
    for pair in window.windows(2) {
        let a = pair[0] >= 0.0;
        let b = pair[1] >= 0.0;
        if a != b {
            crossings += 1;
        }
    }
    let zcr = crossings as f64 / (nf - 1.0);

    let m2 = window.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / nf;
    let m4 = window.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / nf;
    let kurtosis = if m2 == 0.0 { 0.0 } else { m4 / (m2 * m2) };

    let mut buf: Vec<Complex64> = window.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft.process(&mut buf);
    let bins = n / 2 + 1;
    let power: Vec<f64> = buf[..bins].iter().map(|c| c.norm_sqr()).collect();
    let total: f64 = power.iter().sum();
    let spectral_entropy = if total == 0.0 {
        0.0
    } else {
        let h: f64 = power
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|&p| {
                let q = p / total;
                -q * q.ln()
            })
            .sum();
        h / (bins as f64).ln()
    };

    FrameFeatures {
        rms,
        zero_crossing_rate: zcr,
        moving_window_average: mean,
        kurtosis,
        spectral_entropy,
    }
}

/// Pipeline stage of a feature matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeatureStage {
    /// 155-dim windowed statistics.
    Raw,
    /// 30-dim kernel-PCA projection.
    Reduced,
    /// 90-dim static + delta + delta-delta.
    Final,
}

impl FeatureStage {
    pub fn dim(&self) -> usize {
        match self {
            FeatureStage::Raw => RAW_FEATURE_DIM,
            FeatureStage::Reduced => 30,
            FeatureStage::Final => 90,
        }
    }
}

/// Time-major feature matrix tagged with its pipeline stage.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSequence {
    stage: FeatureStage,
    matrix: Tensor,
}

impl FeatureSequence {
    pub fn new(stage: FeatureStage, matrix: Tensor) -> Result<Self> {
        if matrix.cols() != stage.dim() {
            return Err(Error::ShapeMismatch(format!(
                "{:?} features must have {} columns, got {}",
                stage,
                stage.dim(),
                matrix.cols()
            )));
        }
        if !matrix.all_finite() {
            return Err(Error::NonFiniteInput);
        }
        Ok(FeatureSequence { stage, matrix })
    }

    pub fn stage(&self) -> FeatureStage {
        self.stage
    }

    pub fn frames(&self) -> usize {
        self.matrix.rows()
    }

    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }

    pub fn matrix(&self) -> &Tensor {
        &self.matrix
    }

    pub fn into_matrix(self) -> Tensor {
        self.matrix
    }
}

/// Number of analysis frames for a channel of `n` samples.
pub fn frame_count(n: usize) -> Result<usize> {
    if n < WINDOW_SAMPLES {
        return Err(Error::RecordingTooShort);
    }
    Ok((n - WINDOW_SAMPLES) / HOP_SAMPLES + 1)
}

/// Sliding-window statistics over a preprocessed recording.
///
/// 100-sample windows with a 10-sample hop per channel give the 100 Hz
/// frame rate; columns are channel-major (channel 1's five features,
/// then channel 2's five, ...).
pub fn extract_features(rec: &EegRecording) -> Result<FeatureSequence> {
    let n = rec.len();
    let frames = frame_count(n)?;
    let fft = FftPlanner::new().plan_fft_forward(WINDOW_SAMPLES);

    let dim = rec.samples.len() * FEATURES_PER_CHANNEL;
    let mut data = vec![0.0; frames * dim];
    for (ch_idx, channel) in rec.samples.iter().enumerate() {
        for t in 0..frames {
            let start = t * HOP_SAMPLES;
            let stats = frame_stats_with(&fft, &channel[start..start + WINDOW_SAMPLES]);
            let base = t * dim + ch_idx * FEATURES_PER_CHANNEL;
            data[base..base + FEATURES_PER_CHANNEL].copy_from_slice(&stats.as_array());
        }
    }
    FeatureSequence::new(FeatureStage::Raw, Tensor::matrix(frames, dim, data)?)
}
