//! Unconditional mel discriminator and the least-squares adversarial and
//! feature-matching losses.

use candle_core::Tensor;

use crate::config::TrainingConfig;
use crate::error::{Error, Result};
use crate::nn::ops::leaky_relu;
use crate::nn::{join, Init, ParamStore};

const LEAKY_SLOPE: f64 = 0.2;

struct Conv2d {
    weight: Tensor,
    bias: Tensor,
    stride: usize,
}

impl Conv2d {
    fn new(ps: &mut ParamStore, prefix: &str, input: usize, output: usize, stride: usize) -> Result<Self> {
        let bound = 1.0 / ((input * 9) as f64).sqrt();
        Ok(Self {
            weight: ps.get(&join(prefix, "weight"), &[output, input, 3, 3], Init::Uniform(bound))?,
            bias: ps.get(&join(prefix, "bias"), &[output], Init::Zeros)?,
            stride,
        })
    }

    /// 3×3 convolution, padding 1. Striding is realised by subsampling a
    /// stride-1 output, which gives `ceil(len / stride)` positions per axis.
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.conv2d(&self.weight, 1, 1, 1, 1)?;
        let y = y.broadcast_add(&self.bias.reshape((1, (), 1, 1))?)?;
        if self.stride == 1 {
            return Ok(y);
        }
        let pick = |len: usize| -> Result<Tensor> {
            let idx: Vec<u32> = (0..len).step_by(self.stride).map(|i| i as u32).collect();
            let n = idx.len();
            Ok(Tensor::from_vec(idx, n, x.device())?)
        };
        let (_, _, h, w) = y.dims4()?;
        let y = y.index_select(&pick(h)?, 2)?;
        Ok(y.index_select(&pick(w)?, 3)?)
    }
}

/// Patch score map plus the activations of every strided layer.
pub struct DiscriminatorOutput {
    /// (1, 1, M', 80')
    pub score_map: Tensor,
    pub layer_features: Vec<Tensor>,
}

/// `disc_layers` strided 3×3 convolutions with leaky-ReLU over the mel as a
/// one-channel image, then a linear 3×3 score layer.
pub struct Discriminator {
    layers: Vec<Conv2d>,
    score: Conv2d,
}

impl Discriminator {
    pub fn new(ps: &mut ParamStore, prefix: &str, c: &TrainingConfig) -> Result<Self> {
        let mut layers = Vec::new();
        let mut channels = 1;
        for l in 0..c.disc_layers {
            let out = c.disc_channels << l.min(3);
            layers.push(Conv2d::new(ps, &join(prefix, &format!("conv{l}")), channels, out, 2)?);
            channels = out;
        }
        Ok(Self {
            layers,
            score: Conv2d::new(ps, &join(prefix, "score"), channels, 1, 1)?,
        })
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    /// One unpadded mel, (M, 80).
    pub fn forward(&self, mel: &Tensor) -> Result<DiscriminatorOutput> {
        let (m, bins) = mel.dims2()?;
        let mut h = mel.reshape((1, 1, m, bins))?;
        let mut features = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            h = leaky_relu(&layer.forward(&h)?, LEAKY_SLOPE)?;
            features.push(h.clone());
        }
        Ok(DiscriminatorOutput {
            score_map: self.score.forward(&h)?,
            layer_features: features,
        })
    }
}

/// E[(D(X) − 1)² + D(X̂)²] over patches.
pub fn adv_loss_d(score_real: &Tensor, score_fake: &Tensor) -> Result<Tensor> {
    if score_real.dims() != score_fake.dims() {
        return Err(Error::Shape("real/fake score maps differ".into()));
    }
    Ok(((score_real - 1.0)?.sqr()? + score_fake.sqr()?)?.mean_all()?)
}

/// E[(D(X̂) − 1)²] over patches.
pub fn adv_loss_g(score_fake: &Tensor) -> Result<Tensor> {
    Ok((score_fake - 1.0)?.sqr()?.mean_all()?)
}

/// Σ_t mean |D_t(X) − D_t(X̂)|.
pub fn feature_matching_loss(real: &[Tensor], fake: &[Tensor]) -> Result<Tensor> {
    if real.len() != fake.len() || real.is_empty() {
        return Err(Error::Shape(format!(
            "feature lists of length {} and {}",
            real.len(),
            fake.len()
        )));
    }
    let mut total: Option<Tensor> = None;
    for (r, f) in real.iter().zip(fake) {
        if r.dims() != f.dims() {
            return Err(Error::Shape(format!("layer shapes {:?} vs {:?}", r.dims(), f.dims())));
        }
        let term = (r - f)?.abs()?.mean_all()?;
        total = Some(match total {
            Some(t) => (t + term)?,
            None => term,
        });
    }
    Ok(total.expect("non-empty"))
}
