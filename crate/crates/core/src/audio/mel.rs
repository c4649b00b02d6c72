//! Slaney-style mel filterbank and log-mel extraction.

use ndarray::{Array1, Array2};

use super::stft::Stft;
use crate::config::TrainingConfig;
use crate::error::{Error, Result};

const F_SP: f64 = 200.0 / 3.0;
const MIN_LOG_HZ: f64 = 1000.0;
const MIN_LOG_MEL: f64 = MIN_LOG_HZ / F_SP;

fn log_step() -> f64 {
    6.4f64.ln() / 27.0
}

pub fn hz_to_mel(hz: f64) -> f64 {
    if hz >= MIN_LOG_HZ {
        MIN_LOG_MEL + (hz / MIN_LOG_HZ).ln() / log_step()
    } else {
        hz / F_SP
    }
}

pub fn mel_to_hz(mel: f64) -> f64 {
    if mel >= MIN_LOG_MEL {
        MIN_LOG_HZ * (log_step() * (mel - MIN_LOG_MEL)).exp()
    } else {
        F_SP * mel
    }
}

/// Band edges in Hz: `n_mels + 2` points evenly spaced on the mel scale.
pub fn mel_band_edges(n_mels: usize, f_min: f64, f_max: f64) -> Vec<f64> {
    let lo = hz_to_mel(f_min);
    let hi = hz_to_mel(f_max);
    (0..n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n_mels + 1) as f64))
        .collect()
}

/// Triangular filters with area normalisation, `n_mels × (n_fft/2 + 1)`.
pub fn mel_filterbank(sample_rate: u32, n_fft: usize, n_mels: usize, f_min: f64, f_max: f64) -> Array2<f64> {
    let bins = n_fft / 2 + 1;
    let edges = mel_band_edges(n_mels, f_min, f_max);
    let mut fb = Array2::zeros((n_mels, bins));
    for m in 0..n_mels {
        let (lo, center, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        let enorm = 2.0 / (hi - lo);
        for k in 0..bins {
            let f = k as f64 * sample_rate as f64 / n_fft as f64;
            let rising = (f - lo) / (center - lo);
            let falling = (hi - f) / (hi - center);
            fb[[m, k]] = rising.min(falling).max(0.0) * enorm;
        }
    }
    fb
}

/// Log-amplitude mel spectrogram, frames × mel bins.
#[derive(Clone, Debug, PartialEq)]
pub struct MelSpectrogram {
    pub frames: Array2<f64>,
    pub hop: usize,
    pub win: usize,
    pub sample_rate: u32,
}

impl MelSpectrogram {
    pub fn n_frames(&self) -> usize {
        self.frames.nrows()
    }

    pub fn n_bins(&self) -> usize {
        self.frames.ncols()
    }

    /// Duration in seconds implied by the hop size.
    pub fn seconds(&self) -> f64 {
        (self.n_frames() * self.hop) as f64 / self.sample_rate as f64
    }
}

/// Reusable mel analysis front end.
pub struct MelExtractor {
    stft: Stft,
    filterbank: Array2<f64>,
    win: usize,
    sample_rate: u32,
    log_floor: f64,
}

impl MelExtractor {
    pub fn new(config: &TrainingConfig) -> Self {
        Self {
            stft: Stft::new(config.n_fft, config.win_length, config.hop_length),
            filterbank: mel_filterbank(
                config.sample_rate,
                config.n_fft,
                config.n_mels,
                config.f_min,
                config.f_max,
            ),
            win: config.win_length,
            sample_rate: config.sample_rate,
            log_floor: config.log_floor,
        }
    }

    pub fn filterbank(&self) -> &Array2<f64> {
        &self.filterbank
    }

    pub fn stft(&self) -> &Stft {
        &self.stft
    }

    pub fn extract(&self, waveform: &[f64]) -> Result<MelSpectrogram> {
        if waveform.len() < self.win || waveform.len() <= self.stft.n_fft() / 2 {
            return Err(Error::InputTooShort {
                len: waveform.len(),
                win: self.win,
            });
        }
        let magnitude = self.stft.magnitude(waveform);
        let mel = magnitude.dot(&self.filterbank.t());
        let floor = self.log_floor;
        Ok(MelSpectrogram {
            frames: mel.mapv(|v| v.max(floor).ln()),
            hop: self.stft.hop(),
            win: self.win,
            sample_rate: self.sample_rate,
        })
    }

    /// Approximate linear magnitude from a log-mel frame matrix. Each FFT bin
    /// takes the convex combination of the filters that cover it, weighted
    /// by filter response; a spectrally flat input is recovered exactly.
    pub fn mel_to_magnitude(&self, log_mel: &Array2<f64>) -> Array2<f64> {
        let fb = &self.filterbank;
        let row_sums: Array1<f64> = fb.sum_axis(ndarray::Axis(1));
        let col_sums: Array1<f64> = fb.sum_axis(ndarray::Axis(0));
        let linear = log_mel.mapv(f64::exp);
        let mut per_filter = linear.clone();
        for mut row in per_filter.rows_mut() {
            for (v, s) in row.iter_mut().zip(row_sums.iter()) {
                *v = if *s > 0.0 { *v / s } else { 0.0 };
            }
        }
        let mut mag = per_filter.dot(fb);
        for mut row in mag.rows_mut() {
            for (v, s) in row.iter_mut().zip(col_sums.iter()) {
                *v = if *s > 0.0 { *v / s } else { 0.0 };
            }
        }
        mag
    }
}

/// Convenience wrapper around [`MelExtractor`].
pub fn extract_mel(waveform: &[f64], config: &TrainingConfig) -> Result<MelSpectrogram> {
    MelExtractor::new(config).extract(waveform)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mel_scale_round_trip() {
        for hz in [0.0, 440.0, 1000.0, 3000.0, 8000.0] {
            assert!((mel_to_hz(hz_to_mel(hz)) - hz).abs() < 1e-9);
        }
    }

    #[test]
    fn filterbank_shape_and_support() {
        let fb = mel_filterbank(22050, 1024, 80, 0.0, 8000.0);
        assert_eq!(fb.dim(), (80, 513));
        // Every filter has support and nothing leaks above f_max.
        for row in fb.rows() {
            assert!(row.iter().any(|&v| v > 0.0));
        }
        let above = (8000.0 * 1024.0 / 22050.0) as usize + 2;
        assert!(fb.column(above).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn short_input_rejected() {
        let c = TrainingConfig::default();
        assert!(matches!(
            extract_mel(&vec![0.0; 1000], &c),
            Err(Error::InputTooShort { .. })
        ));
    }

    #[test]
    fn flat_spectrum_inverts_exactly() {
        let c = TrainingConfig::default();
        let ex = MelExtractor::new(&c);
        let flat = ndarray::Array2::from_elem((1, 513), 0.7);
        let mel = flat.dot(&ex.filterbank().t()).mapv(f64::ln);
        let back = ex.mel_to_magnitude(&mel);
        let cutoff = (8000.0 * 1024.0 / 22050.0) as usize - 1;
        for k in 1..cutoff {
            assert!((back[[0, k]] - 0.7).abs() < 1e-9, "bin {k}: {}", back[[0, k]]);
        }
    }
}
