//! Loss assembly, KL annealing, the alternating discriminator/generator
//! optimisation loop, metrics and checkpoints.

pub mod checkpoint;
pub mod metrics;
pub mod optim;

use std::path::Path;

use candle_core::Tensor;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use tracing::{debug, info};

use crate::config::TrainingConfig;
use crate::error::{Error, Result};
use crate::model::acoustic::{recon_loss, ReconLoss};
use crate::model::adversarial::{adv_loss_d, adv_loss_g, feature_matching_loss, Discriminator};
use crate::model::batch::{Batch, TrainingExample};
use crate::model::prosody::{batch_kl, posterior_mean_loss};
use crate::model::{LatentNoise, TrainOutput, TtsModel};
use crate::nn::device;
use crate::nn::ops::scalar;

pub use checkpoint::{Checkpoint, RngSnapshot, TrainerState, CHECKPOINT_VERSION};
pub use metrics::{MetricsLog, StepMetrics, METRICS_HEADER};
pub use optim::{learning_rate, AdamState};

/// (β_g, β_l): zero before the ramp, linear on [start, end], held at the
/// maxima afterwards.
pub fn kl_weight_schedule(step: usize, config: &TrainingConfig) -> (f64, f64) {
    let (start, end) = (config.kl_ramp_start, config.kl_ramp_end);
    let frac = if step <= start {
        0.0
    } else if step >= end {
        1.0
    } else {
        (step - start) as f64 / (end - start) as f64
    };
    (config.beta_g_max * frac, config.beta_l_max * frac)
}

/// Parts of the generator objective. `kl` is already β-weighted.
pub struct GeneratorTerms<'a> {
    pub recon: &'a Tensor,
    pub kl: &'a Tensor,
    pub post: &'a Tensor,
    pub adv_g: &'a Tensor,
    pub fm: &'a Tensor,
}

/// L_recon + L_KL + γ·L_post + L_adv(G) + δ·L_fm.
pub fn total_generator_loss(t: &GeneratorTerms, gamma: f64, delta: f64) -> Result<Tensor> {
    let sum = ((t.recon + t.kl)? + (t.post * gamma)?)?;
    Ok(((sum + t.adv_g)? + (t.fm * delta)?)?)
}

pub struct GeneratorLosses {
    pub recon: ReconLoss,
    pub kl_g: Tensor,
    pub kl_l: Tensor,
    pub post: Tensor,
    pub adv_g: Tensor,
    pub fm: Tensor,
    pub beta_g: f64,
    pub beta_l: f64,
    pub total: Tensor,
}

fn zero() -> Result<Tensor> {
    Ok(Tensor::new(0f64, &device())?)
}

/// Splits a padded (B, M, 80) mel into unpadded per-utterance (M_b, 80).
pub fn unpad_mels(mel: &Tensor, frame_lens: &[usize]) -> Result<Vec<Tensor>> {
    frame_lens
        .iter()
        .enumerate()
        .map(|(b, &len)| Ok(mel.get(b)?.narrow(0, 0, len)?))
        .collect()
}

fn batch_mean(terms: Vec<Tensor>) -> Result<Tensor> {
    let n = terms.len() as f64;
    Ok((Tensor::stack(&terms, 0)?.sum_all()? / n)?)
}

/// L_adv(D) averaged over utterances; `fake` should already be detached.
pub fn discriminator_loss(disc: &Discriminator, real: &[Tensor], fake: &[Tensor]) -> Result<Tensor> {
    let terms = real
        .iter()
        .zip(fake)
        .map(|(r, f)| adv_loss_d(&disc.forward(r)?.score_map, &disc.forward(f)?.score_map))
        .collect::<Result<Vec<_>>>()?;
    batch_mean(terms)
}

/// (L_adv(G), L_fm) averaged over utterances.
pub fn generator_adversarial_losses(
    disc: &Discriminator,
    real: &[Tensor],
    fake: &[Tensor],
) -> Result<(Tensor, Tensor)> {
    let mut adv = Vec::with_capacity(real.len());
    let mut fm = Vec::with_capacity(real.len());
    for (r, f) in real.iter().zip(fake) {
        let dr = disc.forward(r)?;
        let df = disc.forward(f)?;
        adv.push(adv_loss_g(&df.score_map)?);
        fm.push(feature_matching_loss(&dr.layer_features, &df.layer_features)?);
    }
    Ok((batch_mean(adv)?, batch_mean(fm)?))
}

/// All generator-side terms for one teacher-forced pass at `step`.
pub fn generator_losses(
    model: &TtsModel,
    batch: &Batch,
    out: &TrainOutput,
    step: usize,
) -> Result<GeneratorLosses> {
    let c = &model.config;
    let recon = recon_loss(
        &batch.mel,
        &out.mel,
        &batch.frame_mask,
        &batch.log_durations,
        &out.log_durations,
        &batch.pitch,
        &out.pitch,
        &batch.phone_mask,
        c.alpha,
    )?;
    let (beta_g, beta_l) = kl_weight_schedule(step, c);
    let kl_g = match &out.global {
        Some(g) => batch_kl(&g.mu, &g.sigma, None)?,
        None => zero()?,
    };
    let (kl_l, post) = match &out.local {
        Some(l) => (
            batch_kl(&l.mu, &l.sigma, Some(&batch.phone_mask))?,
            posterior_mean_loss(&l.mu, &l.mu_hat, &batch.phone_mask)?,
        ),
        None => (zero()?, zero()?),
    };
    let (adv_g, fm) = match model.discriminator() {
        Some(disc) if model.adversarial_active() => {
            let real = unpad_mels(&batch.mel, &batch.frame_lens)?;
            let fake = unpad_mels(&out.mel, &batch.frame_lens)?;
            generator_adversarial_losses(disc, &real, &fake)?
        }
        _ => (zero()?, zero()?),
    };
    let kl = ((&kl_g * beta_g)? + (&kl_l * beta_l)?)?;
    let total = total_generator_loss(
        &GeneratorTerms {
            recon: &recon.total,
            kl: &kl,
            post: &post,
            adv_g: &adv_g,
            fm: &fm,
        },
        c.gamma,
        c.delta,
    )?;
    Ok(GeneratorLosses {
        recon,
        kl_g,
        kl_l,
        post,
        adv_g,
        fm,
        beta_g,
        beta_l,
        total,
    })
}

fn finite(term: &'static str, value: f64, step: usize) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFinite { term, step })
    }
}

/// Noise drawn for one step, kept when recording is on.
#[derive(Clone, Debug, PartialEq)]
pub struct EpsRecord {
    pub step: usize,
    pub eps_g: Vec<f64>,
    pub eps_l: Vec<f64>,
}

/// Owns the model, optimiser state and both random streams. Batch order and
/// noise depend only on `config.seed`.
pub struct Trainer {
    pub model: TtsModel,
    examples: Vec<TrainingExample>,
    generator_opt: AdamState,
    discriminator_opt: AdamState,
    step: usize,
    order: Vec<usize>,
    cursor: usize,
    data_rng: ChaCha8Rng,
    noise_rng: ChaCha8Rng,
    pub record_eps: bool,
    pub eps_log: Vec<EpsRecord>,
}

impl Trainer {
    pub fn new(model: TtsModel, examples: Vec<TrainingExample>) -> Result<Self> {
        if examples.is_empty() {
            return Err(Error::InvalidArgument("no training examples".into()));
        }
        let seed = model.config.seed;
        Ok(Self {
            model,
            examples,
            generator_opt: AdamState::default(),
            discriminator_opt: AdamState::default(),
            step: 0,
            order: Vec::new(),
            cursor: 0,
            data_rng: ChaCha8Rng::seed_from_u64(seed.wrapping_add(1)),
            noise_rng: ChaCha8Rng::seed_from_u64(seed.wrapping_add(2)),
            record_eps: false,
            eps_log: Vec::new(),
        })
    }

    /// Continues exactly where the checkpointed run stopped.
    pub fn from_checkpoint(ck: Checkpoint, examples: Vec<TrainingExample>) -> Result<Self> {
        let model = ck.to_model()?;
        let mut trainer = Self::new(model, examples)?;
        if let Some(state) = &ck.state {
            if state.data_order.iter().any(|&i| i >= trainer.examples.len()) {
                return Err(Error::Consistency("checkpoint data order does not fit the corpus".into()));
            }
            trainer.step = state.step;
            trainer.order = state.data_order.clone();
            trainer.cursor = state.data_cursor;
            trainer.data_rng = state.data_rng.restore()?;
            trainer.noise_rng = state.noise_rng.restore()?;
        }
        trainer.generator_opt = ck.generator_opt;
        trainer.discriminator_opt = ck.discriminator_opt;
        Ok(trainer)
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        let mut ck = Checkpoint::from_model(&self.model)?;
        ck.state = Some(TrainerState {
            step: self.step,
            data_order: self.order.clone(),
            data_cursor: self.cursor,
            data_rng: RngSnapshot::capture(&self.data_rng),
            noise_rng: RngSnapshot::capture(&self.noise_rng),
            generator_updates: self.generator_opt.updates,
            discriminator_updates: self.discriminator_opt.updates,
        });
        ck.generator_opt = self.generator_opt.clone();
        ck.discriminator_opt = self.discriminator_opt.clone();
        Ok(ck)
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    pub fn examples(&self) -> &[TrainingExample] {
        &self.examples
    }

    /// Next `batch_size` examples from a per-epoch shuffled order.
    pub fn next_batch(&mut self) -> Result<Batch> {
        let size = self.model.config.batch_size.min(self.examples.len());
        let mut picked = Vec::with_capacity(size);
        while picked.len() < size {
            if self.cursor >= self.order.len() {
                self.order = (0..self.examples.len()).collect();
                self.order.shuffle(&mut self.data_rng);
                self.cursor = 0;
            }
            picked.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        let refs: Vec<&TrainingExample> = picked.iter().map(|&i| &self.examples[i]).collect();
        Batch::collate(&refs)
    }

    fn draw(&mut self, shape: &[usize]) -> Result<Option<Tensor>> {
        let count: usize = shape.iter().product();
        if count == 0 {
            return Ok(None);
        }
        let data: Vec<f64> = (0..count).map(|_| StandardNormal.sample(&mut self.noise_rng)).collect();
        Ok(Some(Tensor::from_vec(data, shape, &device())?))
    }

    fn draw_noise(&mut self, batch: &Batch) -> Result<LatentNoise> {
        let (b, n) = (batch.size(), batch.ids.dim(1)?);
        let c = &self.model.config;
        let g = if self.model.variant.has_global() { c.z_global } else { 0 };
        let l = if self.model.variant.has_local() { c.z_local } else { 0 };
        Ok(LatentNoise {
            eps_g: self.draw(&[b, g])?,
            eps_l: self.draw(&[b, n, l])?,
        })
    }

    /// One discriminator update (when adversarial training is on) followed
    /// by one generator update.
    pub fn step(&mut self) -> Result<StepMetrics> {
        let step = self.step;
        let batch = self.next_batch()?;
        let noise = self.draw_noise(&batch)?;
        if self.record_eps {
            let flat = |t: &Option<Tensor>| -> Result<Vec<f64>> {
                Ok(match t {
                    Some(t) => t.flatten_all()?.to_vec1::<f64>()?,
                    None => Vec::new(),
                })
            };
            self.eps_log.push(EpsRecord {
                step,
                eps_g: flat(&noise.eps_g)?,
                eps_l: flat(&noise.eps_l)?,
            });
        }
        let lr = learning_rate(step, &self.model.config);
        let out = self.model.forward_train(&batch, &noise)?;

        let mut l_adv_d = 0.0;
        if let (Some(disc), true) = (self.model.discriminator(), self.model.adversarial_active()) {
            let real = unpad_mels(&batch.mel, &batch.frame_lens)?;
            let fake = unpad_mels(&out.mel.detach(), &batch.frame_lens)?;
            let loss_d = discriminator_loss(disc, &real, &fake)?;
            l_adv_d = finite("l_adv_d", scalar(&loss_d)?, step)?;
            let grads = loss_d.backward()?;
            let g = optim::collect_grads(&self.model.params, &grads, TtsModel::is_discriminator_param)?;
            self.discriminator_opt.step(&self.model.params, g, lr, &self.model.config)?;
        }

        let losses = generator_losses(&self.model, &batch, &out, step)?;
        let metrics = StepMetrics {
            step,
            l_recon: finite("l_recon", scalar(&losses.recon.total)?, step)?,
            l_kl_g: finite("l_kl_g", scalar(&losses.kl_g)?, step)?,
            l_kl_l: finite("l_kl_l", scalar(&losses.kl_l)?, step)?,
            l_post: finite("l_post", scalar(&losses.post)?, step)?,
            l_adv_g: finite("l_adv_g", scalar(&losses.adv_g)?, step)?,
            l_adv_d,
            l_fm: finite("l_fm", scalar(&losses.fm)?, step)?,
            beta_g: losses.beta_g,
            beta_l: losses.beta_l,
            grad_norm: 0.0,
            l_final: finite("l_final", scalar(&losses.total)?, step)?,
            l_mel: scalar(&losses.recon.mel)?,
        };
        let grads = losses.total.backward()?;
        let g = optim::collect_grads(&self.model.params, &grads, |n| !TtsModel::is_discriminator_param(n))?;
        let grad_norm = finite("grad_norm", optim::global_norm(&g), step)?;
        self.generator_opt.step(&self.model.params, g, lr, &self.model.config)?;
        self.step += 1;
        debug!(step, l_final = metrics.l_final, grad_norm, "step");
        Ok(StepMetrics { grad_norm, ..metrics })
    }
}

/// Runs until `until_step`, appending to `<out>/metrics.csv`, writing the
/// effective config to `<out>/config.txt` and checkpoints every
/// `checkpoint_every` steps plus `<out>/latest.ckpt` at the end.
pub fn run_training(trainer: &mut Trainer, out_dir: &Path, until_step: usize) -> Result<Vec<StepMetrics>> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    crate::array_io::write_atomic(&out_dir.join("config.txt"), trainer.model.config.to_kv_string().as_bytes())?;
    let mut log = MetricsLog::open(&out_dir.join("metrics.csv"))?;
    let every = trainer.model.config.checkpoint_every.max(1);
    let mut history = Vec::new();
    while trainer.step_count() < until_step {
        let m = trainer.step()?;
        log.append(&m)?;
        if trainer.step_count() % every == 0 {
            log.flush()?;
            trainer
                .checkpoint()?
                .save(&out_dir.join(format!("step_{:07}.ckpt", trainer.step_count())))?;
            info!(step = trainer.step_count(), l_final = m.l_final, mel = m.l_mel, "checkpoint");
        }
        history.push(m);
    }
    log.flush()?;
    trainer.checkpoint()?.save(&out_dir.join("latest.ckpt"))?;
    Ok(history)
}
