//! Small deterministic corpora for smoke tests and demos.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::audio::write_wav_i16;
use crate::config::{TrainingConfig, N_MELS};
use crate::dataset::{CachedUtterance, FeatureCache, ProsodyTargets};
use crate::error::{Error, Result};

/// Symbol, spectral centre bin, pitch in Hz (0 = unvoiced).
const PHONES: [(&str, f64, f64); 6] = [
    ("AA", 12.0, 120.0),
    ("B", 24.0, 110.0),
    ("IY", 36.0, 150.0),
    ("K", 48.0, 0.0),
    ("S", 60.0, 0.0),
    ("T", 70.0, 130.0),
];

fn frame(centre: f64, position: f64) -> impl Iterator<Item = f64> {
    (0..N_MELS).map(move |b| {
        let b = b as f64;
        -4.0 + 3.0 * (-((b - centre) / 6.0).powi(2)).exp() + 0.5 * position * (b / 7.0).cos()
    })
}

/// `count` utterances of 4–8 phonemes with 2–6 frames each. Each phoneme
/// has a fixed spectral bump; frames drift linearly inside a phoneme.
pub fn synthetic_utterances(count: usize, seed: u64) -> Vec<CachedUtterance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|u| {
            let n = rng.random_range(4..=8);
            let picks: Vec<usize> = (0..n).map(|_| rng.random_range(0..PHONES.len())).collect();
            let durations: Vec<u32> = (0..n).map(|_| rng.random_range(2..=6)).collect();
            let mut data = Vec::new();
            for (&p, &d) in picks.iter().zip(&durations) {
                for t in 0..d {
                    data.extend(frame(PHONES[p].1, t as f64 / d as f64));
                }
            }
            let m = data.len() / N_MELS;
            let jitter: f64 = rng.random_range(-5.0..5.0);
            CachedUtterance {
                id: format!("toy{u:02}"),
                phonemes: picks.iter().map(|&p| PHONES[p].0.to_string()).collect(),
                mel: Array2::from_shape_vec((m, N_MELS), data).expect("frame width"),
                targets: ProsodyTargets {
                    durations,
                    pitch: picks
                        .iter()
                        .map(|&p| if PHONES[p].2 > 0.0 { PHONES[p].2 + jitter } else { 0.0 })
                        .collect(),
                },
            }
        })
        .collect()
}

/// Eight synthetic utterances as an in-memory feature cache.
pub fn toy_cache(config: &TrainingConfig) -> FeatureCache {
    FeatureCache::from_utterances(synthetic_utterances(8, config.seed), config, Vec::new())
}

/// Writes a tone-based audio corpus: one WAV per utterance (harmonic tone
/// at the phoneme pitch, noise for unvoiced phonemes), matching `.dur`
/// alignment files and `manifest.txt`. Returns the manifest path.
pub fn write_audio_corpus(dir: &Path, count: usize, config: &TrainingConfig) -> Result<PathBuf> {
    std::fs::create_dir_all(dir.join("wavs")).map_err(|e| Error::io(dir, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed);
    let hop = config.hop_length;
    let sr = config.sample_rate as f64;
    let mut manifest = String::new();
    for u in synthetic_utterances(count, config.seed) {
        // Enough samples for a centred STFT to give exactly Σd frames, and
        // at least one analysis window.
        let frames: usize = u.targets.durations.iter().map(|&d| d as usize).sum();
        let len = ((frames - 1) * hop).max(config.win_length);
        let mut wave = vec![0.0; len];
        let mut start = 0;
        let mut phase: f64 = 0.0;
        for (sym, &d) in u.phonemes.iter().zip(&u.targets.durations) {
            let f0 = PHONES.iter().find(|p| p.0 == sym).map(|p| p.2).unwrap_or(0.0);
            let end = (start + d as usize * hop).min(len);
            for x in wave.iter_mut().take(end).skip(start) {
                *x = if f0 > 0.0 {
                    phase += 2.0 * PI * f0 / sr;
                    0.3 * phase.sin() + 0.1 * (2.0 * phase).sin()
                } else {
                    0.05 * rng.random_range(-1.0..1.0)
                };
            }
            start = end;
        }
        let rel = format!("wavs/{}.wav", u.id);
        write_wav_i16(&dir.join(&rel), &wave, config.sample_rate)?;
        let durs: Vec<String> = u.targets.durations.iter().map(u32::to_string).collect();
        let dur_path = dir.join(format!("wavs/{}.dur", u.id));
        std::fs::write(&dur_path, durs.join(" ") + "\n").map_err(|e| Error::io(&dur_path, e))?;
        manifest.push_str(&format!("{rel}|{}\n", u.phonemes.join(" ")));
    }
    let path = dir.join("manifest.txt");
    std::fs::write(&path, manifest).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn utterances_are_consistent_and_deterministic() {
        let a = synthetic_utterances(8, 3);
        assert_eq!(a, synthetic_utterances(8, 3));
        for u in &a {
            u.check().unwrap();
        }
    }
}
