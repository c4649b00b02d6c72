//! Training/model/feature configuration.
//!
//! The on-disk form is a flat `key = value` text file, one entry per line,
//! with `#` comments. Every field of [`TrainingConfig`] is a valid key; the
//! whole struct is echoed verbatim into each checkpoint.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

/// Number of mel bins. Fixed by the model contract.
pub const N_MELS: usize = 80;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub seed: u64,

    // optimisation
    pub lr: f64,
    pub batch_size: usize,
    pub total_steps: usize,
    pub warmup_steps: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    pub grad_clip: f64,

    // loss weights and KL annealing
    pub alpha: f64,
    pub gamma: f64,
    pub delta: f64,
    pub beta_g_max: f64,
    pub beta_l_max: f64,
    pub kl_ramp_start: usize,
    pub kl_ramp_end: usize,

    // text encoder / decoder / predictors
    pub d_model: usize,
    pub text_layers: usize,
    pub decoder_layers: usize,
    pub attn_heads: usize,
    pub ff_hidden: usize,
    pub ff_kernel: usize,
    pub predictor_hidden: usize,
    pub predictor_layers: usize,

    // prosody encoder
    pub d_enc: usize,
    pub enc_heads: usize,
    pub enc_gru_hidden: usize,
    pub enc_gru_layers: usize,
    pub mel_encoder_blocks: usize,
    pub mel_encoder_kernel: usize,
    pub hidden_encoder_kernel: usize,
    pub z_global: usize,
    pub z_local: usize,

    // discriminator
    pub disc_channels: usize,
    pub disc_layers: usize,
    /// Train the discriminator and add L_adv(G) + δ·L_fm for variants that have one.
    pub adversarial: bool,

    // features
    pub sample_rate: u32,
    pub n_fft: usize,
    pub win_length: usize,
    pub hop_length: usize,
    pub n_mels: usize,
    pub f_min: f64,
    pub f_max: f64,
    pub log_floor: f64,
    pub pitch_min: f64,
    pub pitch_max: f64,
    pub voicing_threshold: f64,
    pub duration_tolerance: usize,

    // bookkeeping
    pub checkpoint_every: usize,
    pub griffin_lim_iters: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            seed: 1234,
            lr: 0.002,
            batch_size: 32,
            total_steps: 200_000,
            warmup_steps: 4000,
            adam_beta1: 0.9,
            adam_beta2: 0.98,
            adam_eps: 1e-9,
            weight_decay: 0.0,
            grad_clip: 1.0,
            alpha: 0.01,
            gamma: 0.01,
            delta: 0.01,
            beta_g_max: 1e-7,
            beta_l_max: 1e-4,
            kl_ramp_start: 10_000,
            kl_ramp_end: 60_000,
            d_model: 256,
            text_layers: 4,
            decoder_layers: 4,
            attn_heads: 2,
            ff_hidden: 1024,
            ff_kernel: 3,
            predictor_hidden: 256,
            predictor_layers: 2,
            d_enc: 128,
            enc_heads: 2,
            enc_gru_hidden: 128,
            enc_gru_layers: 2,
            mel_encoder_blocks: 2,
            mel_encoder_kernel: 5,
            hidden_encoder_kernel: 3,
            z_global: 32,
            z_local: 16,
            disc_channels: 32,
            disc_layers: 4,
            adversarial: true,
            sample_rate: 22050,
            n_fft: 1024,
            win_length: 1024,
            hop_length: 256,
            n_mels: N_MELS,
            f_min: 0.0,
            f_max: 8000.0,
            log_floor: 1e-5,
            pitch_min: 60.0,
            pitch_max: 500.0,
            voicing_threshold: 0.45,
            duration_tolerance: 2,
            checkpoint_every: 1000,
            griffin_lim_iters: 32,
        }
    }
}

impl TrainingConfig {
    /// Small model for quick experiments on toy corpora. Latent sizes and
    /// loss weights keep their full-scale values; the KL ramp is compressed
    /// into the shortened schedule.
    pub fn desk() -> Self {
        Self {
            batch_size: 8,
            total_steps: 2000,
            warmup_steps: 100,
            kl_ramp_start: 200,
            kl_ramp_end: 1200,
            d_model: 32,
            text_layers: 1,
            decoder_layers: 2,
            ff_hidden: 64,
            predictor_hidden: 32,
            predictor_layers: 2,
            d_enc: 32,
            enc_gru_hidden: 16,
            disc_channels: 8,
            checkpoint_every: 500,
            griffin_lim_iters: 8,
            ..Self::default()
        }
    }

    /// All config keys with their default values, in declaration order.
    pub fn keys() -> Vec<(String, String)> {
        let defaults = TrainingConfig::default();
        match serde_json::to_value(&defaults) {
            Ok(Value::Object(map)) => map
                .into_iter()
                .map(|(k, v)| (k, render_value(&v)))
                .collect(),
            _ => Vec::new(),
        }
    }

    pub fn set(&mut self, key: &str, raw: &str) -> Result<()> {
        let mut value = serde_json::to_value(&*self)?;
        let map = value
            .as_object_mut()
            .ok_or_else(|| Error::Config("config is not a map".into()))?;
        if !map.contains_key(key) {
            return Err(Error::Config(format!("unknown key `{key}`")));
        }
        map.insert(key.to_string(), parse_value(raw));
        *self = serde_json::from_value(value)
            .map_err(|e| Error::Config(format!("bad value `{raw}` for `{key}`: {e}")))?;
        Ok(())
    }

    pub fn parse_kv(text: &str) -> Result<Self> {
        let mut config = TrainingConfig::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            config
                .set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_kv(&text)
    }

    pub fn to_kv_string(&self) -> String {
        let mut out = String::new();
        if let Ok(Value::Object(map)) = serde_json::to_value(self) {
            for (k, v) in map {
                out.push_str(&format!("{k} = {}\n", render_value(&v)));
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.kl_ramp_start >= self.kl_ramp_end {
            return fail(format!(
                "kl_ramp_start ({}) must be below kl_ramp_end ({})",
                self.kl_ramp_start, self.kl_ramp_end
            ));
        }
        if self.kl_ramp_end > self.total_steps {
            return fail(format!(
                "kl_ramp_end ({}) exceeds total_steps ({})",
                self.kl_ramp_end, self.total_steps
            ));
        }
        for (name, w) in [
            ("alpha", self.alpha),
            ("gamma", self.gamma),
            ("delta", self.delta),
            ("beta_g_max", self.beta_g_max),
            ("beta_l_max", self.beta_l_max),
            ("lr", self.lr),
            ("weight_decay", self.weight_decay),
        ] {
            if !(w >= 0.0 && w.is_finite()) {
                return fail(format!("{name} must be a finite non-negative number"));
            }
        }
        if self.n_mels != N_MELS {
            return fail(format!("n_mels must be {N_MELS}"));
        }
        if self.d_model % self.attn_heads != 0 || self.d_enc % self.enc_heads != 0 {
            return fail("attention widths must be divisible by their head counts".into());
        }
        if self.hop_length == 0 || self.hop_length > self.win_length || self.win_length > self.n_fft {
            return fail("require 0 < hop_length <= win_length <= n_fft".into());
        }
        if self.f_max <= self.f_min || self.f_max > self.sample_rate as f64 / 2.0 {
            return fail("require f_min < f_max <= sample_rate / 2".into());
        }
        if self.pitch_min <= 0.0 || self.pitch_max <= self.pitch_min {
            return fail("require 0 < pitch_min < pitch_max".into());
        }
        if self.batch_size == 0 || self.ff_kernel % 2 == 0 || self.mel_encoder_kernel % 2 == 0 {
            return fail("batch_size must be positive and conv kernels odd".into());
        }
        if self.hidden_encoder_kernel % 2 == 0 {
            return fail("hidden_encoder_kernel must be odd".into());
        }
        if self.disc_layers < 2 {
            return fail("disc_layers must be at least 2".into());
        }
        Ok(())
    }
}

fn parse_value(raw: &str) -> Value {
    let raw = raw.trim();
    if let Ok(b) = raw.parse::<bool>() {
        return Value::Bool(b);
    }
    if let Ok(i) = raw.parse::<u64>() {
        return Value::from(i);
    }
    if let Ok(i) = raw.parse::<i64>() {
        return Value::from(i);
    }
    if let Ok(f) = raw.parse::<f64>() {
        return Value::from(f);
    }
    Value::String(raw.trim_matches('"').to_string())
}

fn render_value(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        TrainingConfig::default().validate().unwrap();
        TrainingConfig::desk().validate().unwrap();
    }

    #[test]
    fn kv_round_trip() {
        let mut c = TrainingConfig::desk();
        c.seed = 99;
        c.gamma = 0.5;
        let back = TrainingConfig::parse_kv(&c.to_kv_string()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn parses_comments_and_overrides() {
        let text = "# comment\nlr = 0.001\nbatch_size=4 # trailing\n";
        let c = TrainingConfig::parse_kv(text).unwrap();
        assert_eq!(c.lr, 0.001);
        assert_eq!(c.batch_size, 4);
    }

    #[test]
    fn rejects_unknown_key_and_bad_ramp() {
        assert!(TrainingConfig::parse_kv("nope = 1").is_err());
        assert!(TrainingConfig::parse_kv("kl_ramp_start = 70000").is_err());
        assert!(TrainingConfig::parse_kv("batch_size = 0.5").is_err());
    }

    #[test]
    fn keys_cover_all_fields() {
        let keys = TrainingConfig::keys();
        assert!(keys.iter().any(|(k, v)| k == "beta_l_max" && v == "0.0001"));
        assert_eq!(keys.len(), TrainingConfig::default().to_kv_string().lines().count());
    }
}
