//! Filter one recording (band-pass + notch) and extract the windowed
//! statistical features at 100 Hz.
//!
//! ```bash
//! cargo run --release --example signal_features
//! ```

use cortex2text::data::generate_synthetic;
use cortex2text::signal::{extract_features, frame_stats, preprocess, IirFilter};

fn main() -> cortex2text::Result<()> {
    let (bandpass, notch) = IirFilter::eeg_preprocessing_chain();
    println!("designed filters:");
    for f in [&bandpass, &notch] {
        println!("  {} ({} second-order sections)", f.description(), f.sections().len());
    }
    println!("  magnitude response:");
    for freq in [0.05, 1.0, 10.0, 45.0, 60.0, 70.0, 120.0] {
        println!(
            "    {freq:6.2} Hz  band-pass {:.4}  with notch {:.6}",
            bandpass.magnitude_response(freq),
            bandpass.magnitude_response(freq) * notch.magnitude_response(freq)
        );
    }

    let corpus = generate_synthetic(&["stars shine tonight".to_string()], 1, 7, 1.5)?;
    let rec = &corpus.recordings[0];
    let cleaned = preprocess(rec)?;
    let features = extract_features(&cleaned)?;
    println!(
        "\nrecording {:?}: {} samples -> {} frames x {} features",
        rec.transcript.join(" "),
        rec.len(),
        features.frames(),
        features.dim()
    );

    let mid = features.frames() / 2;
    let window = &cleaned.samples[0][mid * 10..mid * 10 + 100];
    let stats = frame_stats(window);
    println!("channel 1, frame {mid}: {stats:#?}");
    Ok(())
}
