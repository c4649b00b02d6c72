//! Hierarchical two-scale prosody encoder.
//!
//! The global branch summarises the whole mel into one latent `z_g`; the
//! local branch forms phoneme-level queries from the text representation
//! (conditioned on `z_g`), attends over the frame-level mel features and
//! produces one latent per phoneme. A separate predictor learns the local
//! posterior mean from the text side alone, behind a stop-gradient, and
//! supplies the local prior mean at inference.

use candle_core::{Tensor, D};

use crate::config::TrainingConfig;
use crate::error::{Error, Result};
use crate::nn::ops::{apply_mask, masked_time_mean, sigmoid, softplus};
use crate::nn::{join, BiGru, Conv1d, LayerNorm, Linear, MultiHeadAttention, ParamStore};

/// Lower bound added to softplus outputs for the posterior SD.
pub const SIGMA_FLOOR: f64 = 1e-4;

/// Gated residual convolution stack over the mel frames. Keeps the frame
/// rate (M' = M).
pub struct MelEncoder {
    prenet: Linear,
    blocks: Vec<Conv1d>,
    width: usize,
}

impl MelEncoder {
    pub fn new(ps: &mut ParamStore, prefix: &str, c: &TrainingConfig) -> Result<Self> {
        let blocks = (0..c.mel_encoder_blocks)
            .map(|i| {
                Conv1d::new(
                    ps,
                    &join(prefix, &format!("glu{i}")),
                    c.d_enc,
                    2 * c.d_enc,
                    c.mel_encoder_kernel,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            prenet: Linear::new(ps, &join(prefix, "prenet"), c.n_mels, c.d_enc)?,
            blocks,
            width: c.d_enc,
        })
    }

    /// (B, M, 80) → H_g (B, M, d_enc).
    pub fn forward(&self, mel: &Tensor, mask: &Tensor) -> Result<Tensor> {
        let mut h = apply_mask(&self.prenet.forward(mel)?.relu()?, mask)?;
        for conv in &self.blocks {
            let y = conv.forward(&h)?;
            let value = y.narrow(D::Minus1, 0, self.width)?;
            let gate = sigmoid(&y.narrow(D::Minus1, self.width, self.width)?)?;
            h = apply_mask(&(h + (value * gate)?)?, mask)?;
        }
        Ok(h)
    }
}

/// Splits a projection into a mean and a positive SD.
fn mean_and_sd(projected: &Tensor, dim: usize) -> Result<(Tensor, Tensor)> {
    let mu = projected.narrow(D::Minus1, 0, dim)?;
    let sigma = (softplus(&projected.narrow(D::Minus1, dim, dim)?)? + SIGMA_FLOOR)?;
    Ok((mu, sigma))
}

pub struct GlobalHead {
    gru: BiGru,
    projection: Linear,
    dim: usize,
}

impl GlobalHead {
    pub fn new(ps: &mut ParamStore, prefix: &str, c: &TrainingConfig) -> Result<Self> {
        Ok(Self {
            gru: BiGru::new(ps, &join(prefix, "gru"), c.d_enc, c.enc_gru_hidden, c.enc_gru_layers)?,
            projection: Linear::new(ps, &join(prefix, "projection"), 2 * c.enc_gru_hidden, 2 * c.z_global)?,
            dim: c.z_global,
        })
    }

    /// H_g (B, M, d_enc) → μ_g, σ_g, each (B, z_global).
    pub fn forward(&self, h_g: &Tensor, frame_mask: &Tensor) -> Result<(Tensor, Tensor)> {
        let h = self.gru.forward(h_g, frame_mask)?;
        let pooled = masked_time_mean(&h, frame_mask)?;
        mean_and_sd(&self.projection.forward(&pooled)?, self.dim)
    }
}

/// Two convolution + layer-norm blocks mapping the (optionally
/// z_g-conditioned) text representation to H_l.
pub struct HiddenEncoder {
    convs: Vec<Conv1d>,
    norms: Vec<LayerNorm>,
}

impl HiddenEncoder {
    pub fn new(ps: &mut ParamStore, prefix: &str, input: usize, c: &TrainingConfig) -> Result<Self> {
        let mut convs = Vec::new();
        let mut norms = Vec::new();
        for i in 0..2 {
            let width = if i == 0 { input } else { c.d_enc };
            convs.push(Conv1d::new(ps, &join(prefix, &format!("conv{i}")), width, c.d_enc, c.hidden_encoder_kernel)?);
            norms.push(LayerNorm::new(ps, &join(prefix, &format!("norm{i}")), c.d_enc)?);
        }
        Ok(Self { convs, norms })
    }

    pub fn forward(&self, x: &Tensor, mask: &Tensor) -> Result<Tensor> {
        let mut h = apply_mask(x, mask)?;
        for (conv, norm) in self.convs.iter().zip(&self.norms) {
            h = apply_mask(&norm.forward(&conv.forward(&h)?.relu()?)?, mask)?;
        }
        Ok(h)
    }
}

/// Cross-attention from phoneme queries (H_l) to frame keys (H_g),
/// followed by a Bi-GRU stack and the local mean/SD projection.
pub struct LocalHead {
    attention: MultiHeadAttention,
    gru: BiGru,
    projection: Linear,
    dim: usize,
}

pub struct LocalPosterior {
    pub mu: Tensor,
    pub sigma: Tensor,
    /// (B, heads, N, M)
    pub attention: Tensor,
}

impl LocalHead {
    pub fn new(ps: &mut ParamStore, prefix: &str, c: &TrainingConfig) -> Result<Self> {
        Ok(Self {
            attention: MultiHeadAttention::new(ps, &join(prefix, "attention"), c.d_enc, c.d_enc, c.d_enc, c.enc_heads)?,
            gru: BiGru::new(ps, &join(prefix, "gru"), c.d_enc, c.enc_gru_hidden, c.enc_gru_layers)?,
            projection: Linear::new(ps, &join(prefix, "projection"), 2 * c.enc_gru_hidden, 2 * c.z_local)?,
            dim: c.z_local,
        })
    }

    pub fn forward(
        &self,
        h_l: &Tensor,
        h_g: &Tensor,
        phone_mask: &Tensor,
        frame_mask: &Tensor,
    ) -> Result<LocalPosterior> {
        let (attended, weights) = self.attention.forward(h_l, h_g, frame_mask)?;
        let features = apply_mask(&(h_l + attended)?, phone_mask)?;
        let h = self.gru.forward(&features, phone_mask)?;
        let (mu, sigma) = mean_and_sd(&self.projection.forward(&h)?, self.dim)?;
        Ok(LocalPosterior {
            mu: apply_mask(&mu, phone_mask)?,
            sigma,
            attention: weights,
        })
    }
}

/// Bi-GRU stack predicting the local posterior mean from H_l.
pub struct PosteriorMeanPredictor {
    gru: BiGru,
    projection: Linear,
}

impl PosteriorMeanPredictor {
    pub fn new(ps: &mut ParamStore, prefix: &str, c: &TrainingConfig) -> Result<Self> {
        Ok(Self {
            gru: BiGru::new(ps, &join(prefix, "gru"), c.d_enc, c.enc_gru_hidden, c.enc_gru_layers)?,
            projection: Linear::new(ps, &join(prefix, "projection"), 2 * c.enc_gru_hidden, c.z_local)?,
        })
    }

    /// Detaches `h_l` itself, so no gradient reaches upstream parameters.
    pub fn forward(&self, h_l: &Tensor, phone_mask: &Tensor) -> Result<Tensor> {
        let h = self.gru.forward(&h_l.detach(), phone_mask)?;
        apply_mask(&self.projection.forward(&h)?, phone_mask)
    }
}

/// Reparameterised sample `z = μ + σ ⊙ ε`.
pub fn reparameterize(mu: &Tensor, sigma: &Tensor, eps: &Tensor) -> Result<Tensor> {
    if mu.dims() != eps.dims() || sigma.dims() != eps.dims() {
        return Err(Error::Shape(format!(
            "ε {:?} does not match μ {:?}",
            eps.dims(),
            mu.dims()
        )));
    }
    Ok((mu + (sigma * eps)?)?)
}

/// Elementwise KL(N(μ, σ²) ‖ N(0, 1)) = ½(μ² + σ² − 1 − ln σ²), not yet
/// reduced.
pub fn kl_elements(mu: &Tensor, sigma: &Tensor) -> Result<Tensor> {
    let var = sigma.sqr()?;
    Ok(((((mu.sqr()? + &var)? - 1.0)? - var.log()?)? * 0.5)?)
}

/// KL divergence to the standard normal prior, summed over all elements.
/// Rejects non-positive SDs.
pub fn kl_standard_normal(mu: &Tensor, sigma: &Tensor) -> Result<Tensor> {
    if sigma.flatten_all()?.to_vec1::<f64>()?.iter().any(|&s| !(s > 0.0)) {
        return Err(Error::InvalidArgument("sigma must be strictly positive".into()));
    }
    Ok(kl_elements(mu, sigma)?.sum_all()?)
}

/// Batch mean of per-utterance KL sums. `mask` (B, N) restricts local
/// latents to real phonemes; `None` for the (B, z) global latent.
pub fn batch_kl(mu: &Tensor, sigma: &Tensor, mask: Option<&Tensor>) -> Result<Tensor> {
    let kl = kl_elements(mu, sigma)?;
    let kl = match mask {
        Some(m) => apply_mask(&kl, m)?,
        None => kl,
    };
    Ok((kl.sum_all()? / mu.dim(0)? as f64)?)
}

/// Σ_n MSE(μ_n, μ̂_n) with the MSE taken over latent dimensions, averaged
/// over the batch. `mu_l` is detached so only the predictor learns from it.
pub fn posterior_mean_loss(mu_l: &Tensor, mu_hat: &Tensor, phone_mask: &Tensor) -> Result<Tensor> {
    if mu_l.dims() != mu_hat.dims() {
        return Err(Error::Shape(format!(
            "μ {:?} vs μ̂ {:?}",
            mu_l.dims(),
            mu_hat.dims()
        )));
    }
    let (b, _, z) = mu_l.dims3()?;
    let sq = apply_mask(&(mu_l.detach() - mu_hat)?.sqr()?, phone_mask)?;
    Ok((sq.sum_all()? / (b * z) as f64)?)
}

/// Concatenates replicated `z_g` (B, zg) with `z_l` (B, N, zl) per phoneme.
/// Either part may be absent; padded phonemes are zeroed.
pub fn assemble_prosody(
    z_g: Option<&Tensor>,
    z_l: Option<&Tensor>,
    n: usize,
    phone_mask: &Tensor,
) -> Result<Option<Tensor>> {
    let mut parts = Vec::new();
    if let Some(g) = z_g {
        let (b, zg) = g.dims2()?;
        parts.push(g.unsqueeze(1)?.broadcast_as((b, n, zg))?.contiguous()?);
    }
    if let Some(l) = z_l {
        parts.push(l.clone());
    }
    if parts.is_empty() {
        return Ok(None);
    }
    let z = Tensor::cat(&parts, 2)?;
    Ok(Some(apply_mask(&z, phone_mask)?))
}
