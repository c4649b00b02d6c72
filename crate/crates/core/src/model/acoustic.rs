//! Deterministic backbone: phoneme embedding and text encoder, the two
//! phoneme-level prosody predictors, pitch embedding, length regulation and
//! the mel decoder.

use candle_core::{Tensor, D};

use crate::config::{TrainingConfig, N_MELS};
use crate::error::{Error, Result};
use crate::nn::ops::{apply_mask, masked_mse};
use crate::nn::{join, Conv1d, Embedding, FftStack, Linear, Lstm, ParamStore};

pub struct TextEncoder {
    embedding: Embedding,
    stack: FftStack,
}

impl TextEncoder {
    pub fn new(ps: &mut ParamStore, prefix: &str, vocab: usize, c: &TrainingConfig) -> Result<Self> {
        Ok(Self {
            embedding: Embedding::new(ps, &join(prefix, "embedding"), vocab, c.d_model)?,
            stack: FftStack::new(
                ps,
                &join(prefix, "fft"),
                c.text_layers,
                c.d_model,
                c.attn_heads,
                c.ff_hidden,
                c.ff_kernel,
            )?,
        })
    }

    /// `ids` (B, N) → H (B, N, d_model).
    pub fn forward(&self, ids: &Tensor, mask: &Tensor) -> Result<Tensor> {
        let y = self.embedding.forward(ids)?;
        self.stack.forward(&y, mask)
    }
}

/// Two-layer LSTM plus a scalar projection; used for both duration
/// (log(1 + frames)) and pitch (normalised units).
pub struct ProsodyPredictor {
    lstm: Lstm,
    projection: Linear,
}

impl ProsodyPredictor {
    pub fn new(ps: &mut ParamStore, prefix: &str, input: usize, c: &TrainingConfig) -> Result<Self> {
        Ok(Self {
            lstm: Lstm::new(ps, &join(prefix, "lstm"), input, c.predictor_hidden, c.predictor_layers)?,
            projection: Linear::new(ps, &join(prefix, "projection"), c.predictor_hidden, 1)?,
        })
    }

    /// (B, N, C) → (B, N), zero at padding.
    pub fn forward(&self, h_z: &Tensor, mask: &Tensor) -> Result<Tensor> {
        let h = self.lstm.forward(h_z, mask)?;
        Ok((self.projection.forward(&h)?.squeeze(D::Minus1)? * mask)?)
    }
}

/// Kernel-3, stride-1 convolution lifting the pitch scalar to `d_model`.
pub struct PitchEmbedding {
    conv: Conv1d,
}

impl PitchEmbedding {
    pub fn new(ps: &mut ParamStore, prefix: &str, dim: usize) -> Result<Self> {
        Ok(Self {
            conv: Conv1d::new(ps, &join(prefix, "conv"), 1, dim, 3)?,
        })
    }

    /// (B, N) → (B, N, dim). Same-length zero padding at both ends.
    pub fn forward(&self, pitch: &Tensor, mask: &Tensor) -> Result<Tensor> {
        let x = (pitch * mask)?.unsqueeze(2)?;
        apply_mask(&self.conv.forward(&x)?, mask)
    }
}

/// Repeats row `i` of each sequence `durations[b][i]` times, in order, and
/// right-pads to the longest result. Returns the expanded (B, M, D) tensor
/// and its (B, M) frame mask. Zero durations drop the phoneme.
pub fn length_regulate(x: &Tensor, durations: &[Vec<u32>]) -> Result<(Tensor, Tensor)> {
    let (b, n, d) = x.dims3()?;
    if durations.len() != b || durations.iter().any(|ds| ds.len() > n) {
        return Err(Error::Shape(format!(
            "durations for {} sequences do not fit input {:?}",
            durations.len(),
            x.dims()
        )));
    }
    let lengths: Vec<usize> = durations
        .iter()
        .map(|ds| ds.iter().map(|&v| v as usize).sum())
        .collect();
    let m = lengths.iter().copied().max().unwrap_or(0);
    let pad_row = (b * n) as u32;
    let mut index = Vec::with_capacity(b * m);
    let mut mask = Vec::with_capacity(b * m);
    for (s, ds) in durations.iter().enumerate() {
        for (i, &rep) in ds.iter().enumerate() {
            index.extend(std::iter::repeat_n((s * n + i) as u32, rep as usize));
        }
        mask.extend(std::iter::repeat_n(1.0, lengths[s]));
        index.extend(std::iter::repeat_n(pad_row, m - lengths[s]));
        mask.extend(std::iter::repeat_n(0.0, m - lengths[s]));
    }
    let flat = x.reshape((b * n, d))?;
    let zero = Tensor::zeros((1, d), x.dtype(), x.device())?;
    let table = Tensor::cat(&[flat, zero], 0)?;
    let index = Tensor::from_vec(index, b * m, x.device())?;
    let out = table.index_select(&index, 0)?.reshape((b, m, d))?;
    let mask = Tensor::from_vec(mask, (b, m), x.device())?.to_dtype(x.dtype())?;
    Ok((out, mask))
}

/// Single-sequence form: (N, D) rows and N durations → (Σd, D).
pub fn length_regulate_rows(rows: &Tensor, durations: &[u32]) -> Result<Tensor> {
    let (out, _) = length_regulate(&rows.unsqueeze(0)?, &[durations.to_vec()])?;
    Ok(out.squeeze(0)?)
}

pub struct MelDecoder {
    stack: FftStack,
    projection: Linear,
}

impl MelDecoder {
    pub fn new(ps: &mut ParamStore, prefix: &str, c: &TrainingConfig) -> Result<Self> {
        Ok(Self {
            stack: FftStack::new(
                ps,
                &join(prefix, "fft"),
                c.decoder_layers,
                c.d_model,
                c.attn_heads,
                c.ff_hidden,
                c.ff_kernel,
            )?,
            projection: Linear::new(ps, &join(prefix, "projection"), c.d_model, N_MELS)?,
        })
    }

    /// (B, M, d_model) → (B, M, 80).
    pub fn forward(&self, frames: &Tensor, mask: &Tensor) -> Result<Tensor> {
        let h = self.stack.forward(frames, mask)?;
        apply_mask(&self.projection.forward(&h)?, mask)
    }
}

/// The three reconstruction terms and their α-weighted sum.
pub struct ReconLoss {
    pub mel: Tensor,
    pub duration: Tensor,
    pub pitch: Tensor,
    pub total: Tensor,
}

/// Mel MSE over valid frames plus α-weighted MSE of log(1 + d) and of
/// pitch over valid phonemes.
#[allow(clippy::too_many_arguments)]
pub fn recon_loss(
    mel_target: &Tensor,
    mel_pred: &Tensor,
    frame_mask: &Tensor,
    log_dur_target: &Tensor,
    log_dur_pred: &Tensor,
    pitch_target: &Tensor,
    pitch_pred: &Tensor,
    phone_mask: &Tensor,
    alpha: f64,
) -> Result<ReconLoss> {
    if mel_target.dims() != mel_pred.dims()
        || log_dur_target.dims() != log_dur_pred.dims()
        || pitch_target.dims() != pitch_pred.dims()
    {
        return Err(Error::Shape("reconstruction pairs differ in shape".into()));
    }
    let mel = masked_mse(mel_target, mel_pred, &frame_mask.unsqueeze(2)?)?;
    let duration = masked_mse(log_dur_target, log_dur_pred, phone_mask)?;
    let pitch = masked_mse(pitch_target, pitch_pred, phone_mask)?;
    let total = ((&mel + (&duration * alpha)?)? + (&pitch * alpha)?)?;
    Ok(ReconLoss {
        mel,
        duration,
        pitch,
        total,
    })
}

/// Inverse of the log(1 + d) duration domain with round-half-up, clamped
/// at zero frames.
pub fn durations_from_log(log_durations: &[f64]) -> Vec<u32> {
    log_durations
        .iter()
        .map(|&v| {
            let frames = (v.exp() - 1.0 + 0.5).floor();
            if frames.is_finite() && frames > 0.0 {
                frames as u32
            } else {
                0
            }
        })
        .collect()
}
