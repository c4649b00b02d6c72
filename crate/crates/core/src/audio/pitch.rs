//! Frame-level pitch tracking by normalised autocorrelation.
//!
//! Frames use the same centring and hop as the mel front end, so the track
//! has exactly one value per mel frame. Unvoiced frames are reported as 0.

use super::stft::reflect_pad;
use crate::config::TrainingConfig;

/// Frames quieter than this RMS are unvoiced regardless of periodicity.
const SILENCE_RMS: f64 = 1e-4;
/// Candidate peaks within this fraction of the best peak are treated as
/// equivalent; the shortest such lag wins, avoiding sub-octave picks.
const OCTAVE_TOLERANCE: f64 = 0.9;

#[derive(Clone, Debug)]
pub struct PitchTracker {
    sample_rate: u32,
    frame_length: usize,
    hop: usize,
    min_lag: usize,
    max_lag: usize,
    threshold: f64,
}

impl PitchTracker {
    pub fn new(config: &TrainingConfig) -> Self {
        let sr = config.sample_rate as f64;
        Self {
            sample_rate: config.sample_rate,
            frame_length: config.win_length,
            hop: config.hop_length,
            min_lag: (sr / config.pitch_max).floor().max(2.0) as usize,
            max_lag: (sr / config.pitch_min).ceil() as usize,
            threshold: config.voicing_threshold,
        }
    }

    pub fn frame_count(&self, len: usize) -> usize {
        1 + len / self.hop
    }

    /// Pitch in Hz per frame, 0 for unvoiced frames.
    pub fn track(&self, waveform: &[f64]) -> Vec<f64> {
        let pad = self.frame_length / 2;
        let padded = if waveform.len() > pad {
            reflect_pad(waveform, pad)
        } else {
            let mut p = vec![0.0; pad];
            p.extend_from_slice(waveform);
            p.resize(waveform.len() + 2 * pad, 0.0);
            p
        };
        (0..self.frame_count(waveform.len()))
            .map(|f| {
                let start = f * self.hop;
                let end = (start + self.frame_length).min(padded.len());
                self.frame_pitch(&padded[start..end])
            })
            .collect()
    }

    fn frame_pitch(&self, frame: &[f64]) -> f64 {
        let n = frame.len();
        let max_lag = self.max_lag.min(n.saturating_sub(2));
        if n < 4 || max_lag <= self.min_lag + 1 {
            return 0.0;
        }
        let mean = frame.iter().sum::<f64>() / n as f64;
        let x: Vec<f64> = frame.iter().map(|v| v - mean).collect();
        let rms = (x.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
        if rms < SILENCE_RMS {
            return 0.0;
        }

        // r[lag - lo] for lag in lo..=hi, one extra lag each side for peak tests.
        let lo = self.min_lag - 1;
        let hi = max_lag;
        let corr: Vec<f64> = (lo..=hi).map(|lag| normalized_autocorr(&x, lag)).collect();
        let at = |lag: usize| corr[lag - lo];

        let mut peaks = Vec::new();
        for lag in self.min_lag..hi {
            let r = at(lag);
            if r >= at(lag - 1) && r > at(lag + 1) {
                peaks.push((lag, r));
            }
        }
        let best = peaks.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
        if !(best >= self.threshold) {
            return 0.0;
        }
        let (lag, _) = peaks
            .iter()
            .copied()
            .find(|&(_, r)| r >= OCTAVE_TOLERANCE * best)
            .expect("best peak is a candidate");

        let (a, b, c) = (at(lag - 1), at(lag), at(lag + 1));
        let denom = a - 2.0 * b + c;
        let shift = if denom.abs() > 1e-12 {
            (0.5 * (a - c) / denom).clamp(-0.5, 0.5)
        } else {
            0.0
        };
        self.sample_rate as f64 / (lag as f64 + shift)
    }
}

fn normalized_autocorr(x: &[f64], lag: usize) -> f64 {
    let n = x.len() - lag;
    let (mut xy, mut xx, mut yy) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let (a, b) = (x[i], x[i + lag]);
        xy += a * b;
        xx += a * a;
        yy += b * b;
    }
    let d = (xx * yy).sqrt();
    if d > 0.0 {
        xy / d
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f64, seconds: f64) -> Vec<f64> {
        let sr = 22050.0;
        (0..(sr * seconds) as usize)
            .map(|i| 0.5 * (2.0 * std::f64::consts::PI * freq * i as f64 / sr).sin())
            .collect()
    }

    #[test]
    fn tracks_pure_tones() {
        let tracker = PitchTracker::new(&TrainingConfig::default());
        for freq in [100.0, 200.0, 330.0, 440.0] {
            let track = tracker.track(&sine(freq, 0.5));
            assert_eq!(track.len(), 1 + 11025 / 256);
            for &p in &track[2..track.len() - 2] {
                assert!((p - freq).abs() < 0.01 * freq, "{freq}: got {p}");
            }
        }
    }

    #[test]
    fn silence_and_noise_unvoiced() {
        let tracker = PitchTracker::new(&TrainingConfig::default());
        assert!(tracker.track(&vec![0.0; 8000]).iter().all(|&p| p == 0.0));
        // Deterministic pseudo-noise.
        let mut state = 12345u64;
        let noise: Vec<f64> = (0..8000)
            .map(|_| {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
            })
            .collect();
        let voiced = tracker.track(&noise).iter().filter(|&&p| p > 0.0).count();
        assert!(voiced <= 2, "{voiced} noise frames voiced");
    }
}
