//! Right-padded mini-batches with 0/1 masks.

use candle_core::Tensor;
use ndarray::Array2;

use crate::config::N_MELS;
use crate::dataset::{CachedUtterance, PitchStats, Vocabulary};
use crate::error::{Error, Result};
use crate::nn::device;

/// One utterance in model units: phoneme ids, log-mel frames, durations in
/// frames and normalised phoneme pitch.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingExample {
    pub id: String,
    pub phoneme_ids: Vec<u32>,
    pub mel: Array2<f64>,
    pub durations: Vec<u32>,
    pub pitch: Vec<f64>,
}

impl TrainingExample {
    pub fn from_cached(utt: &CachedUtterance, vocab: &Vocabulary, stats: &PitchStats) -> Result<Self> {
        utt.check()?;
        Ok(Self {
            id: utt.id.clone(),
            phoneme_ids: vocab.encode(&utt.phonemes)?,
            mel: utt.mel.clone(),
            durations: utt.targets.durations.clone(),
            pitch: utt.targets.pitch.iter().map(|&p| stats.normalize(p)).collect(),
        })
    }

    pub fn n_phonemes(&self) -> usize {
        self.phoneme_ids.len()
    }

    pub fn n_frames(&self) -> usize {
        self.mel.nrows()
    }
}

pub struct Batch {
    /// (B, N) u32
    pub ids: Tensor,
    /// (B, N)
    pub phone_mask: Tensor,
    /// (B, M, 80)
    pub mel: Tensor,
    /// (B, M)
    pub frame_mask: Tensor,
    /// (B, N), `ln(1 + d)`
    pub log_durations: Tensor,
    /// (B, N), normalised units
    pub pitch: Tensor,
    pub durations: Vec<Vec<u32>>,
    pub phone_lens: Vec<usize>,
    pub frame_lens: Vec<usize>,
}

impl Batch {
    pub fn size(&self) -> usize {
        self.phone_lens.len()
    }

    pub fn collate(examples: &[&TrainingExample]) -> Result<Self> {
        if examples.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        for ex in examples {
            let total: usize = ex.durations.iter().map(|&d| d as usize).sum();
            if total != ex.n_frames() || ex.durations.len() != ex.n_phonemes() || ex.pitch.len() != ex.n_phonemes() {
                return Err(Error::Consistency(format!("example {} is inconsistent", ex.id)));
            }
            if ex.n_phonemes() == 0 || ex.mel.ncols() != N_MELS {
                return Err(Error::Shape(format!("example {} has bad shape", ex.id)));
            }
        }
        let b = examples.len();
        let n = examples.iter().map(|e| e.n_phonemes()).max().unwrap_or(0);
        let m = examples.iter().map(|e| e.n_frames()).max().unwrap_or(0);
        let mut ids = vec![0u32; b * n];
        let mut phone_mask = vec![0.0; b * n];
        let mut log_dur = vec![0.0; b * n];
        let mut pitch = vec![0.0; b * n];
        let mut mel = vec![0.0; b * m * N_MELS];
        let mut frame_mask = vec![0.0; b * m];
        for (i, ex) in examples.iter().enumerate() {
            for j in 0..ex.n_phonemes() {
                ids[i * n + j] = ex.phoneme_ids[j];
                phone_mask[i * n + j] = 1.0;
                log_dur[i * n + j] = (ex.durations[j] as f64).ln_1p();
                pitch[i * n + j] = ex.pitch[j];
            }
            for t in 0..ex.n_frames() {
                frame_mask[i * m + t] = 1.0;
                for k in 0..N_MELS {
                    mel[(i * m + t) * N_MELS + k] = ex.mel[[t, k]];
                }
            }
        }
        let dev = device();
        Ok(Self {
            ids: Tensor::from_vec(ids, (b, n), &dev)?,
            phone_mask: Tensor::from_vec(phone_mask, (b, n), &dev)?,
            mel: Tensor::from_vec(mel, (b, m, N_MELS), &dev)?,
            frame_mask: Tensor::from_vec(frame_mask, (b, m), &dev)?,
            log_durations: Tensor::from_vec(log_dur, (b, n), &dev)?,
            pitch: Tensor::from_vec(pitch, (b, n), &dev)?,
            durations: examples.iter().map(|e| e.durations.clone()).collect(),
            phone_lens: examples.iter().map(|e| e.n_phonemes()).collect(),
            frame_lens: examples.iter().map(|e| e.n_frames()).collect(),
        })
    }
}
