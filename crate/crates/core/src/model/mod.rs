//! Model assembly: the backbone, the optional two-scale prosody encoder and
//! the optional discriminator, wired according to a [`Variant`].
//!
//! Parameter names are grouped by prefix. `disc.` holds the discriminator,
//! `prosody.posterior_mean.` the posterior-mean predictor; everything else is
//! generator-side.

pub mod acoustic;
pub mod adversarial;
pub mod batch;
pub mod prosody;

use std::fmt;
use std::str::FromStr;

use candle_core::Tensor;

use crate::config::TrainingConfig;
use crate::dataset::{PitchStats, Vocabulary};
use crate::error::{Error, Result};
use crate::nn::ops::apply_mask;
use crate::nn::{Linear, ParamStore};

use acoustic::{length_regulate, MelDecoder, PitchEmbedding, ProsodyPredictor, TextEncoder};
use adversarial::Discriminator;
use batch::Batch;
use prosody::{
    assemble_prosody, reparameterize, GlobalHead, HiddenEncoder, LocalHead, MelEncoder,
    PosteriorMeanPredictor,
};

pub const DISC_PREFIX: &str = "disc";
pub const POSTERIOR_MEAN_PREFIX: &str = "prosody.posterior_mean";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    /// Global and local latents, adversarial training.
    Himuv,
    /// Global latent only.
    Gvae,
    /// Local latents only, not conditioned on a global latent.
    Lvae,
    /// No latents.
    Backbone,
    /// No latents, adversarial training.
    BackboneAdv,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Himuv,
        Variant::Gvae,
        Variant::Lvae,
        Variant::Backbone,
        Variant::BackboneAdv,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Himuv => "himuv",
            Variant::Gvae => "gvae",
            Variant::Lvae => "lvae",
            Variant::Backbone => "backbone",
            Variant::BackboneAdv => "backbone_adv",
        }
    }

    pub fn has_global(self) -> bool {
        matches!(self, Variant::Himuv | Variant::Gvae)
    }

    pub fn has_local(self) -> bool {
        matches!(self, Variant::Himuv | Variant::Lvae)
    }

    pub fn has_discriminator(self) -> bool {
        matches!(self, Variant::Himuv | Variant::BackboneAdv)
    }

    /// Width of the per-phoneme prosody embedding Z.
    pub fn prosody_width(self, c: &TrainingConfig) -> usize {
        let g = if self.has_global() { c.z_global } else { 0 };
        let l = if self.has_local() { c.z_local } else { 0 };
        g + l
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::UnknownVariant(s.to_string()))
    }
}

struct LocalBranch {
    hidden: HiddenEncoder,
    head: LocalHead,
    predictor: PosteriorMeanPredictor,
}

struct ProsodyEncoder {
    mel_encoder: MelEncoder,
    global: Option<GlobalHead>,
    local: Option<LocalBranch>,
}

/// Reparameterisation noise for one step. Absent entries mean ε = 0.
#[derive(Clone, Default)]
pub struct LatentNoise {
    /// (B, z_global)
    pub eps_g: Option<Tensor>,
    /// (B, N, z_local)
    pub eps_l: Option<Tensor>,
}

pub struct GlobalLatent {
    pub mu: Tensor,
    pub sigma: Tensor,
    pub z: Tensor,
}

pub struct LocalLatent {
    pub mu: Tensor,
    pub sigma: Tensor,
    pub z: Tensor,
    /// Posterior-mean prediction μ̂ from H_l.
    pub mu_hat: Tensor,
    pub h_l: Tensor,
    /// (B, heads, N, M)
    pub attention: Tensor,
}

/// Teacher-forced training pass.
pub struct TrainOutput {
    pub mel: Tensor,
    pub log_durations: Tensor,
    pub pitch: Tensor,
    pub global: Option<GlobalLatent>,
    pub local: Option<LocalLatent>,
}

pub struct TtsModel {
    pub variant: Variant,
    pub config: TrainingConfig,
    pub vocab: Vocabulary,
    pub pitch_stats: PitchStats,
    pub params: ParamStore,
    text_encoder: TextEncoder,
    duration_predictor: ProsodyPredictor,
    pitch_predictor: ProsodyPredictor,
    pitch_embedding: PitchEmbedding,
    fuse: Option<Linear>,
    decoder: MelDecoder,
    prosody: Option<ProsodyEncoder>,
    discriminator: Option<Discriminator>,
}

impl TtsModel {
    /// Builds a freshly initialised model; initial values depend only on
    /// `config.seed`.
    pub fn build(
        variant: Variant,
        config: &TrainingConfig,
        vocab: Vocabulary,
        pitch_stats: PitchStats,
    ) -> Result<Self> {
        config.validate()?;
        if vocab.is_empty() {
            return Err(Error::InvalidArgument("empty phoneme vocabulary".into()));
        }
        let c = config;
        let mut ps = ParamStore::new(c.seed);
        let width = variant.prosody_width(c);
        let text_encoder = TextEncoder::new(&mut ps, "text_encoder", vocab.len(), c)?;
        let duration_predictor = ProsodyPredictor::new(&mut ps, "duration_predictor", c.d_model + width, c)?;
        let pitch_predictor = ProsodyPredictor::new(&mut ps, "pitch_predictor", c.d_model + width, c)?;
        let pitch_embedding = PitchEmbedding::new(&mut ps, "pitch_embedding", c.d_model)?;
        let fuse = if width > 0 {
            Some(Linear::new(&mut ps, "fuse", c.d_model + width, c.d_model)?)
        } else {
            None
        };
        let decoder = MelDecoder::new(&mut ps, "decoder", c)?;
        let prosody = if width > 0 {
            let global = if variant.has_global() {
                Some(GlobalHead::new(&mut ps, "prosody.global", c)?)
            } else {
                None
            };
            let local = if variant.has_local() {
                let input = if variant.has_global() { c.d_model + c.z_global } else { c.d_model };
                Some(LocalBranch {
                    hidden: HiddenEncoder::new(&mut ps, "prosody.hidden_encoder", input, c)?,
                    head: LocalHead::new(&mut ps, "prosody.local", c)?,
                    predictor: PosteriorMeanPredictor::new(&mut ps, POSTERIOR_MEAN_PREFIX, c)?,
                })
            } else {
                None
            };
            Some(ProsodyEncoder {
                mel_encoder: MelEncoder::new(&mut ps, "prosody.mel_encoder", c)?,
                global,
                local,
            })
        } else {
            None
        };
        let discriminator = if variant.has_discriminator() {
            Some(Discriminator::new(&mut ps, DISC_PREFIX, c)?)
        } else {
            None
        };
        Ok(Self {
            variant,
            config: c.clone(),
            vocab,
            pitch_stats,
            params: ps,
            text_encoder,
            duration_predictor,
            pitch_predictor,
            pitch_embedding,
            fuse,
            decoder,
            prosody,
            discriminator,
        })
    }

    pub fn prosody_width(&self) -> usize {
        self.variant.prosody_width(&self.config)
    }

    pub fn discriminator(&self) -> Option<&Discriminator> {
        self.discriminator.as_ref()
    }

    /// Whether adversarial terms take part in training.
    pub fn adversarial_active(&self) -> bool {
        self.discriminator.is_some() && self.config.adversarial
    }

    pub fn is_discriminator_param(name: &str) -> bool {
        name.starts_with(DISC_PREFIX) && name[DISC_PREFIX.len()..].starts_with('.')
    }

    pub fn is_posterior_mean_param(name: &str) -> bool {
        name.starts_with(POSTERIOR_MEAN_PREFIX) && name[POSTERIOR_MEAN_PREFIX.len()..].starts_with('.')
    }

    /// H (B, N, d_model).
    pub fn encode_text(&self, ids: &Tensor, phone_mask: &Tensor) -> Result<Tensor> {
        self.text_encoder.forward(ids, phone_mask)
    }

    /// H_l for the given (optional) global latent.
    fn hidden_local(&self, h: &Tensor, z_g: Option<&Tensor>, phone_mask: &Tensor) -> Result<Tensor> {
        let branch = self.local_branch()?;
        let input = match z_g {
            Some(g) => {
                let (b, n, _) = h.dims3()?;
                let replicated = g.unsqueeze(1)?.broadcast_as((b, n, g.dim(1)?))?.contiguous()?;
                Tensor::cat(&[h, &replicated], 2)?
            }
            None => h.clone(),
        };
        branch.hidden.forward(&input, phone_mask)
    }

    fn local_branch(&self) -> Result<&LocalBranch> {
        self.prosody
            .as_ref()
            .and_then(|p| p.local.as_ref())
            .ok_or_else(|| Error::InvalidArgument(format!("variant {} has no local latents", self.variant)))
    }

    /// μ̂ (B, N, z_local): the local prior mean given H and z_g.
    pub fn local_prior_mean(&self, h: &Tensor, z_g: Option<&Tensor>, phone_mask: &Tensor) -> Result<Tensor> {
        let h_l = self.hidden_local(h, z_g, phone_mask)?;
        self.local_branch()?.predictor.forward(&h_l, phone_mask)
    }

    /// μ̂ from an already formed H_l.
    pub fn predict_posterior_mean(&self, h_l: &Tensor, phone_mask: &Tensor) -> Result<Tensor> {
        self.local_branch()?.predictor.forward(h_l, phone_mask)
    }

    /// Predicted log(1 + d) and normalised pitch from H and Z.
    pub fn predict_prosody(&self, h: &Tensor, z: Option<&Tensor>, phone_mask: &Tensor) -> Result<(Tensor, Tensor)> {
        let hz = self.join_prosody(h, z)?;
        Ok((
            self.duration_predictor.forward(&hz, phone_mask)?,
            self.pitch_predictor.forward(&hz, phone_mask)?,
        ))
    }

    fn join_prosody(&self, h: &Tensor, z: Option<&Tensor>) -> Result<Tensor> {
        match (z, self.prosody_width()) {
            (None, 0) => Ok(h.clone()),
            (Some(z), w) if w > 0 && z.dim(2)? == w => Ok(Tensor::cat(&[h, z], 2)?),
            (z, w) => Err(Error::Shape(format!(
                "prosody embedding {:?} does not match width {w}",
                z.map(|t| t.dims().to_vec())
            ))),
        }
    }

    /// Phoneme-level decoder input: projected [H ∥ Z] plus the pitch
    /// embedding, length-regulated by `durations`, then decoded.
    pub fn decode(
        &self,
        h: &Tensor,
        z: Option<&Tensor>,
        pitch: &Tensor,
        durations: &[Vec<u32>],
        phone_mask: &Tensor,
    ) -> Result<(Tensor, Tensor)> {
        let hz = self.join_prosody(h, z)?;
        let base = match &self.fuse {
            Some(f) => apply_mask(&f.forward(&hz)?, phone_mask)?,
            None => hz,
        };
        let phone = (base + self.pitch_embedding.forward(pitch, phone_mask)?)?;
        let (frames, frame_mask) = length_regulate(&phone, durations)?;
        Ok((self.decoder.forward(&frames, &frame_mask)?, frame_mask))
    }

    /// Teacher-forced pass: posterior latents from the target mel, ground
    /// truth durations and pitch drive the decoder.
    pub fn forward_train(&self, batch: &Batch, noise: &LatentNoise) -> Result<TrainOutput> {
        let h = self.encode_text(&batch.ids, &batch.phone_mask)?;
        let mut global = None;
        let mut local = None;
        if let Some(enc) = &self.prosody {
            let h_g = enc.mel_encoder.forward(&batch.mel, &batch.frame_mask)?;
            if let Some(head) = &enc.global {
                let (mu, sigma) = head.forward(&h_g, &batch.frame_mask)?;
                let z = sample_or_mean(&mu, &sigma, noise.eps_g.as_ref())?;
                global = Some(GlobalLatent { mu, sigma, z });
            }
            if let Some(branch) = &enc.local {
                let h_l = self.hidden_local(&h, global.as_ref().map(|g| &g.z), &batch.phone_mask)?;
                let post = branch.head.forward(&h_l, &h_g, &batch.phone_mask, &batch.frame_mask)?;
                let z = apply_mask(&sample_or_mean(&post.mu, &post.sigma, noise.eps_l.as_ref())?, &batch.phone_mask)?;
                let mu_hat = branch.predictor.forward(&h_l, &batch.phone_mask)?;
                local = Some(LocalLatent {
                    mu: post.mu,
                    sigma: post.sigma,
                    z,
                    mu_hat,
                    h_l,
                    attention: post.attention,
                });
            }
        }
        let z = assemble_prosody(
            global.as_ref().map(|g| &g.z),
            local.as_ref().map(|l| &l.z),
            batch.ids.dim(1)?,
            &batch.phone_mask,
        )?;
        let (log_durations, pitch) = self.predict_prosody(&h, z.as_ref(), &batch.phone_mask)?;
        let (mel, _) = self.decode(&h, z.as_ref(), &batch.pitch, &batch.durations, &batch.phone_mask)?;
        Ok(TrainOutput {
            mel,
            log_durations,
            pitch,
            global,
            local,
        })
    }
}

fn sample_or_mean(mu: &Tensor, sigma: &Tensor, eps: Option<&Tensor>) -> Result<Tensor> {
    match eps {
        Some(e) => reparameterize(mu, sigma, e),
        None => Ok(mu.clone()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stats() -> PitchStats {
        PitchStats {
            mean: 150.0,
            sd: 20.0,
            voiced_phonemes: 10,
            normalization: true,
        }
    }

    fn vocab() -> Vocabulary {
        Vocabulary::from_symbols(["a", "b", "c"])
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        assert!(matches!("vits".parse::<Variant>(), Err(Error::UnknownVariant(_))));
    }

    #[test]
    fn prosody_widths() {
        let c = TrainingConfig::default();
        assert_eq!(Variant::Himuv.prosody_width(&c), 48);
        assert_eq!(Variant::Gvae.prosody_width(&c), 32);
        assert_eq!(Variant::Lvae.prosody_width(&c), 16);
        assert_eq!(Variant::Backbone.prosody_width(&c), 0);
    }

    #[test]
    fn parameter_groups_follow_variant() {
        let c = TrainingConfig::desk();
        let lvae = TtsModel::build(Variant::Lvae, &c, vocab(), stats()).unwrap();
        assert!(!lvae.params.names().any(|n| n.starts_with("prosody.global")));
        assert!(lvae.params.names().any(|n| TtsModel::is_posterior_mean_param(n)));
        assert!(lvae.discriminator().is_none());
        let backbone = TtsModel::build(Variant::Backbone, &c, vocab(), stats()).unwrap();
        assert!(!backbone.params.names().any(|n| n.starts_with("prosody") || n.starts_with("fuse")));
        let adv = TtsModel::build(Variant::BackboneAdv, &c, vocab(), stats()).unwrap();
        assert!(adv.params.names().any(TtsModel::is_discriminator_param));
        assert!(!TtsModel::is_discriminator_param("discount.weight"));
    }

    #[test]
    fn same_seed_same_parameters() {
        let c = TrainingConfig::desk();
        let a = TtsModel::build(Variant::Himuv, &c, vocab(), stats()).unwrap();
        let b = TtsModel::build(Variant::Himuv, &c, vocab(), stats()).unwrap();
        for name in a.params.names() {
            assert_eq!(a.params.values(name).unwrap(), b.params.values(name).unwrap());
        }
    }
}
