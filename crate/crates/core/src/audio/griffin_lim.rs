//! Griffin-Lim phase retrieval. Debug-quality audio only.

use ndarray::Array2;
use rustfft::num_complex::Complex64;

use super::mel::{MelExtractor, MelSpectrogram};
use crate::config::TrainingConfig;

/// Inverts a log-mel spectrogram to a waveform of `hop * (M - 1)` samples.
///
/// Starts from zero phase, so `iterations == 0` returns the zero-phase
/// reconstruction and the result is deterministic.
pub fn invert_mel(mel: &MelSpectrogram, config: &TrainingConfig, iterations: usize) -> Vec<f64> {
    let extractor = MelExtractor::new(config);
    let magnitude = extractor.mel_to_magnitude(&mel.frames);
    griffin_lim(&extractor, &magnitude, iterations)
}

fn griffin_lim(extractor: &MelExtractor, magnitude: &Array2<f64>, iterations: usize) -> Vec<f64> {
    let stft = extractor.stft();
    let mut spectrum = magnitude.mapv(|m| Complex64::new(m, 0.0));
    let mut signal = stft.inverse(&spectrum);
    for _ in 0..iterations {
        if signal.len() <= stft.n_fft() / 2 {
            break;
        }
        let rebuilt = stft.forward(&signal);
        for ((s, r), &m) in spectrum.iter_mut().zip(rebuilt.iter()).zip(magnitude.iter()) {
            let norm = r.norm();
            *s = if norm > 1e-12 {
                r * (m / norm)
            } else {
                Complex64::new(m, 0.0)
            };
        }
        signal = stft.inverse(&spectrum);
    }
    signal
}
