//! Centered short-time Fourier transform with reflect padding.
//!
//! Frames are centred on multiples of the hop: the signal is reflect-padded
//! by `n_fft / 2` on both sides, so a signal of `len` samples yields
//! `1 + len / hop` frames.

use std::sync::Arc;

use ndarray::Array2;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

pub struct Stft {
    n_fft: usize,
    hop: usize,
    window: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

/// Periodic Hann window of `win_length`, zero-padded (centred) to `n_fft`.
pub fn hann_window(win_length: usize, n_fft: usize) -> Vec<f64> {
    let mut window = vec![0.0; n_fft];
    let offset = (n_fft - win_length) / 2;
    for i in 0..win_length {
        let phase = 2.0 * std::f64::consts::PI * i as f64 / win_length as f64;
        window[offset + i] = 0.5 - 0.5 * phase.cos();
    }
    window
}

/// Reflect-pads without repeating the edge sample (numpy `reflect` mode).
/// Requires `pad < x.len()`.
pub fn reflect_pad(x: &[f64], pad: usize) -> Vec<f64> {
    let n = x.len();
    debug_assert!(pad < n);
    let mut out = Vec::with_capacity(n + 2 * pad);
    out.extend((0..pad).map(|i| x[pad - i]));
    out.extend_from_slice(x);
    out.extend((0..pad).map(|j| x[n - 2 - j]));
    out
}

impl Stft {
    pub fn new(n_fft: usize, win_length: usize, hop: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            n_fft,
            hop,
            window: hann_window(win_length, n_fft),
            forward: planner.plan_fft_forward(n_fft),
            inverse: planner.plan_fft_inverse(n_fft),
        }
    }

    pub fn n_fft(&self) -> usize {
        self.n_fft
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn n_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    pub fn frame_count(&self, len: usize) -> usize {
        1 + len / self.hop
    }

    /// Complex spectrum, frames × bins. The caller guarantees
    /// `x.len() > n_fft / 2`.
    pub fn forward(&self, x: &[f64]) -> Array2<Complex64> {
        let padded = reflect_pad(x, self.n_fft / 2);
        let frames = self.frame_count(x.len());
        let bins = self.n_bins();
        let mut out = Array2::from_elem((frames, bins), Complex64::new(0.0, 0.0));
        let mut buf = vec![Complex64::new(0.0, 0.0); self.n_fft];
        for f in 0..frames {
            let start = f * self.hop;
            for (i, slot) in buf.iter_mut().enumerate() {
                *slot = Complex64::new(padded[start + i] * self.window[i], 0.0);
            }
            self.forward.process(&mut buf);
            for b in 0..bins {
                out[[f, b]] = buf[b];
            }
        }
        out
    }

    pub fn magnitude(&self, x: &[f64]) -> Array2<f64> {
        self.forward(x).mapv(|c| c.norm())
    }

    /// Weighted overlap-add inverse. Output has `hop * (frames - 1)` samples.
    pub fn inverse(&self, spec: &Array2<Complex64>) -> Vec<f64> {
        let frames = spec.nrows();
        let bins = self.n_bins();
        let total = self.n_fft + self.hop * frames.saturating_sub(1);
        let mut signal = vec![0.0; total];
        let mut norm = vec![0.0; total];
        let mut buf = vec![Complex64::new(0.0, 0.0); self.n_fft];
        for f in 0..frames {
            for b in 0..bins {
                buf[b] = spec[[f, b]];
            }
            // Hermitian completion of the real spectrum.
            for b in bins..self.n_fft {
                buf[b] = spec[[f, self.n_fft - b]].conj();
            }
            buf[0].im = 0.0;
            if self.n_fft % 2 == 0 {
                buf[self.n_fft / 2].im = 0.0;
            }
            self.inverse.process(&mut buf);
            let start = f * self.hop;
            for i in 0..self.n_fft {
                let w = self.window[i];
                signal[start + i] += buf[i].re / self.n_fft as f64 * w;
                norm[start + i] += w * w;
            }
        }
        for (s, n) in signal.iter_mut().zip(&norm) {
            if *n > 1e-10 {
                *s /= n;
            }
        }
        let pad = self.n_fft / 2;
        let len = self.hop * frames.saturating_sub(1);
        signal[pad..pad + len].to_vec()
    }
}
