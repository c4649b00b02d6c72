//! Prior sampling with temperature and per-scale freezing, text-to-mel
//! synthesis and output writers.
//!
//! At inference the global latent is drawn first (`z_g = τ_g·ε`), the
//! hidden encoder forms H_l from H and `z_g`, and the posterior-mean
//! predictor supplies the local prior mean: `z_l = μ̂ + τ_l·ε`. A frozen
//! scale takes its supplied fixed value, or otherwise its zero-temperature
//! value (`z_g = 0`; `z_l = μ̂` computed from the frozen global latent, so it
//! does not move with a sampled `z_g`).

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use candle_core::Tensor;
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::array_io;
use crate::audio::{invert_mel, write_wav_i16, MelSpectrogram};
use crate::config::N_MELS;
use crate::error::{Error, Result};
use crate::model::acoustic::durations_from_log;
use crate::model::prosody::assemble_prosody;
use crate::model::TtsModel;
use crate::nn::device;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    /// Both scales sampled.
    Full,
    /// Global latent sampled, local latents frozen.
    GlobalOnly,
    /// Local latents sampled, global latent frozen.
    LocalOnly,
    /// Both frozen.
    None,
}

impl SamplingMode {
    pub fn name(self) -> &'static str {
        match self {
            SamplingMode::Full => "full",
            SamplingMode::GlobalOnly => "global_only",
            SamplingMode::LocalOnly => "local_only",
            SamplingMode::None => "none",
        }
    }

    fn samples_global(self) -> bool {
        matches!(self, SamplingMode::Full | SamplingMode::GlobalOnly)
    }

    fn samples_local(self) -> bool {
        matches!(self, SamplingMode::Full | SamplingMode::LocalOnly)
    }
}

impl fmt::Display for SamplingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SamplingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            SamplingMode::Full,
            SamplingMode::GlobalOnly,
            SamplingMode::LocalOnly,
            SamplingMode::None,
        ]
        .into_iter()
        .find(|m| m.name() == s)
        .ok_or_else(|| Error::InvalidArgument(format!("unknown sampling mode `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SamplingSpec {
    pub mode: SamplingMode,
    pub tau: f64,
    /// Overrides `tau` for the global scale.
    pub tau_global: Option<f64>,
    /// Overrides `tau` for the local scale.
    pub tau_local: Option<f64>,
    pub seed: u64,
    /// Frozen global latent, length z_global.
    pub fixed_z_g: Option<Vec<f64>>,
    /// Frozen local latents, N rows of z_local.
    pub fixed_z_l: Option<Vec<Vec<f64>>>,
}

impl SamplingSpec {
    pub fn new(mode: SamplingMode, tau: f64, seed: u64) -> Self {
        Self {
            mode,
            tau,
            tau_global: None,
            tau_local: None,
            seed,
            fixed_z_g: None,
            fixed_z_l: None,
        }
    }

    /// Effective (τ_g, τ_l); a frozen scale has temperature 0.
    pub fn temperatures(&self) -> (f64, f64) {
        let g = if self.mode.samples_global() {
            self.tau_global.unwrap_or(self.tau)
        } else {
            0.0
        };
        let l = if self.mode.samples_local() {
            self.tau_local.unwrap_or(self.tau)
        } else {
            0.0
        };
        (g, l)
    }

    fn validate(&self) -> Result<()> {
        for t in [Some(self.tau), self.tau_global, self.tau_local].into_iter().flatten() {
            if !(t >= 0.0 && t.is_finite()) {
                return Err(Error::InvalidArgument(format!("temperature {t} must be finite and >= 0")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatentSource {
    Sampled,
    Fixed,
    PriorMean,
}

/// Record of the latents actually used for one synthesis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentAudit {
    pub mode: SamplingMode,
    pub seed: u64,
    pub tau_global: f64,
    pub tau_local: f64,
    pub z_g: Option<Vec<f64>>,
    pub z_g_source: Option<LatentSource>,
    pub z_l: Option<Vec<Vec<f64>>>,
    pub z_l_source: Option<LatentSource>,
    /// Local prior mean the sample was centred on.
    pub mu_hat: Option<Vec<Vec<f64>>>,
}

/// Latents for `draws` independent samples sharing one text, with leading
/// draw dimension.
pub struct LatentDraws {
    /// (D, N, width), `None` for latent-free variants.
    pub z: Option<Tensor>,
    /// (D, z_global)
    pub z_g: Option<Tensor>,
    /// (D, N, z_local)
    pub z_l: Option<Tensor>,
    /// (D, N, z_local)
    pub mu_hat: Option<Tensor>,
    pub z_g_source: Option<LatentSource>,
    pub z_l_source: Option<LatentSource>,
}

fn normal(rng: &mut ChaCha8Rng, count: usize) -> Vec<f64> {
    (0..count).map(|_| StandardNormal.sample(rng)).collect()
}

/// Draws prior latents for `draws` samples of the text encoded as `h`
/// (1, N, d_model). Noise is taken draw by draw from one stream seeded with
/// `spec.seed`: ε_g first, then ε_l.
pub fn sample_latents(model: &TtsModel, h: &Tensor, spec: &SamplingSpec, draws: usize) -> Result<LatentDraws> {
    spec.validate()?;
    let (_, n, d) = h.dims3()?;
    let c = &model.config;
    let (tau_g, tau_l) = spec.temperatures();
    let has_g = model.variant.has_global();
    let has_l = model.variant.has_local();
    let (zg, zl) = (c.z_global, c.z_local);

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut eps_g = Vec::with_capacity(draws * zg);
    let mut eps_l = Vec::with_capacity(draws * n * zl);
    for _ in 0..draws {
        if has_g {
            eps_g.extend(normal(&mut rng, zg));
        }
        if has_l {
            eps_l.extend(normal(&mut rng, n * zl));
        }
    }

    let dev = device();
    let hb = h.broadcast_as((draws, n, d))?.contiguous()?;
    let mask = Tensor::ones((draws, n), h.dtype(), &dev)?;

    let frozen_g = match &spec.fixed_z_g {
        Some(v) if has_g => {
            if v.len() != zg {
                return Err(Error::Shape(format!("fixed z_g has {} values, expected {zg}", v.len())));
            }
            Some((Tensor::from_slice(v, (1, zg), &dev)?.broadcast_as((draws, zg))?.contiguous()?, LatentSource::Fixed))
        }
        _ if has_g => Some((Tensor::zeros((draws, zg), h.dtype(), &dev)?, LatentSource::PriorMean)),
        _ => None,
    };
    let (z_g, z_g_source) = match frozen_g {
        Some((frozen, source)) => {
            if spec.mode.samples_global() && spec.fixed_z_g.is_none() {
                let e = Tensor::from_vec(eps_g, (draws, zg), &dev)?;
                (Some((e * tau_g)?), Some(LatentSource::Sampled))
            } else {
                (Some(frozen), Some(source))
            }
        }
        None => (None, None),
    };

    let (z_l, mu_hat, z_l_source) = if has_l {
        let fixed_l = match &spec.fixed_z_l {
            Some(rows) => {
                if rows.len() != n || rows.iter().any(|r| r.len() != zl) {
                    return Err(Error::Shape(format!("fixed z_l must be {n} rows of {zl}")));
                }
                let flat: Vec<f64> = rows.iter().flatten().copied().collect();
                Some(Tensor::from_vec(flat, (1, n, zl), &dev)?.broadcast_as((draws, n, zl))?.contiguous()?)
            }
            None => None,
        };
        if let Some(fixed) = fixed_l {
            (Some(fixed), None, Some(LatentSource::Fixed))
        } else {
            // A frozen local scale is conditioned on the frozen global value,
            // so it stays put while z_g is sampled.
            let cond = if spec.mode.samples_local() {
                z_g.clone()
            } else if has_g {
                Some(match &spec.fixed_z_g {
                    Some(v) => Tensor::from_slice(v, (1, zg), &dev)?.broadcast_as((draws, zg))?.contiguous()?,
                    None => Tensor::zeros((draws, zg), h.dtype(), &dev)?,
                })
            } else {
                None
            };
            let mu_hat = model.local_prior_mean(&hb, cond.as_ref(), &mask)?;
            if spec.mode.samples_local() {
                let e = Tensor::from_vec(eps_l, (draws, n, zl), &dev)?;
                (Some((&mu_hat + (e * tau_l)?)?), Some(mu_hat), Some(LatentSource::Sampled))
            } else {
                (Some(mu_hat.clone()), Some(mu_hat), Some(LatentSource::PriorMean))
            }
        }
    } else {
        (None, None, None)
    };

    let z = assemble_prosody(z_g.as_ref(), z_l.as_ref(), n, &mask)?;
    Ok(LatentDraws {
        z,
        z_g,
        z_l,
        mu_hat,
        z_g_source,
        z_l_source,
    })
}

/// Single-draw prior sample with its audit record. `z` is (1, N, width).
pub fn sample_prior(model: &TtsModel, h: &Tensor, spec: &SamplingSpec) -> Result<(Option<Tensor>, LatentAudit)> {
    let draws = sample_latents(model, h, spec, 1)?;
    let (tau_global, tau_local) = spec.temperatures();
    let rows = |t: &Option<Tensor>| -> Result<Option<Vec<Vec<f64>>>> {
        t.as_ref().map(|t| Ok(t.get(0)?.to_vec2::<f64>()?)).transpose()
    };
    let audit = LatentAudit {
        mode: spec.mode,
        seed: spec.seed,
        tau_global,
        tau_local,
        z_g: draws.z_g.as_ref().map(|t| t.get(0)?.to_vec1::<f64>()).transpose()?,
        z_g_source: draws.z_g_source,
        z_l: rows(&draws.z_l)?,
        z_l_source: draws.z_l_source,
        mu_hat: rows(&draws.mu_hat)?,
    };
    Ok((draws.z, audit))
}

/// A synthesised mel and its prosody report.
#[derive(Clone, Debug)]
pub struct Synthesis {
    pub mel: MelSpectrogram,
    pub durations: Vec<u32>,
    /// Denormalised phoneme pitch in Hz.
    pub pitch_hz: Vec<f64>,
    pub audit: LatentAudit,
}

/// Text → mel along the inference path: prior latents, predicted durations
/// (round half up) and pitch, length regulation, decoding.
pub fn synthesize(model: &TtsModel, phoneme_ids: &[u32], spec: &SamplingSpec) -> Result<Synthesis> {
    if phoneme_ids.is_empty() {
        return Err(Error::InvalidArgument("empty phoneme sequence".into()));
    }
    if let Some(&bad) = phoneme_ids.iter().find(|&&i| i as usize >= model.vocab.len()) {
        return Err(Error::Vocabulary {
            id: bad as usize,
            size: model.vocab.len(),
        });
    }
    let dev = device();
    let n = phoneme_ids.len();
    let ids = Tensor::from_slice(phoneme_ids, (1, n), &dev)?;
    let mask = Tensor::ones((1, n), candle_core::DType::F64, &dev)?;
    let h = model.encode_text(&ids, &mask)?;
    let (z, audit) = sample_prior(model, &h, spec)?;
    let (log_d, pitch) = model.predict_prosody(&h, z.as_ref(), &mask)?;
    let durations = durations_from_log(&log_d.squeeze(0)?.to_vec1::<f64>()?);
    if durations.iter().all(|&d| d == 0) {
        return Err(Error::Degenerate(format!("all {n} predicted durations round to zero frames")));
    }
    let (mel, _) = model.decode(&h, z.as_ref(), &pitch, std::slice::from_ref(&durations), &mask)?;
    let mel = mel.squeeze(0)?;
    let m = mel.dim(0)?;
    let frames = Array2::from_shape_vec((m, N_MELS), mel.flatten_all()?.to_vec1::<f64>()?)
        .map_err(|e| Error::Shape(e.to_string()))?;
    let pitch_hz = pitch
        .squeeze(0)?
        .to_vec1::<f64>()?
        .into_iter()
        .map(|p| model.pitch_stats.denormalize(p))
        .collect();
    Ok(Synthesis {
        mel: MelSpectrogram {
            frames,
            hop: model.config.hop_length,
            win: model.config.win_length,
            sample_rate: model.config.sample_rate,
        },
        durations,
        pitch_hz,
        audit,
    })
}

/// Encodes a space-separated phoneme string with the model vocabulary.
pub fn encode_phonemes(model: &TtsModel, text: &str) -> Result<Vec<u32>> {
    let symbols: Vec<&str> = text.split_whitespace().collect();
    model.vocab.encode(&symbols)
}

/// One sentence from a text file: `id|PH PH ...` or bare phonemes, which are
/// numbered by line.
#[derive(Clone, Debug, PartialEq)]
pub struct Sentence {
    pub id: String,
    pub phonemes: String,
}

pub fn parse_sentences(text: &str) -> Vec<Sentence> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .enumerate()
        .map(|(i, line)| match line.split_once('|') {
            Some((id, ph)) => Sentence {
                id: id.trim().to_string(),
                phonemes: ph.trim().to_string(),
            },
            None => Sentence {
                id: format!("s{i:03}"),
                phonemes: line.to_string(),
            },
        })
        .collect()
}

#[derive(Serialize)]
struct Sidecar<'a> {
    frames: usize,
    n_mels: usize,
    hop: usize,
    win: usize,
    sample_rate: u32,
    durations: &'a [u32],
    pitch_hz: &'a [f64],
    audit: &'a LatentAudit,
}

/// Writes `<stem>.mel` (binary array) and `<stem>.json`; returns both paths.
pub fn write_mel_output(dir: &Path, stem: &str, s: &Synthesis) -> Result<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mel_path = dir.join(format!("{stem}.mel"));
    let json_path = dir.join(format!("{stem}.json"));
    array_io::save(&mel_path, &s.mel.frames.clone().into_dyn())?;
    let sidecar = Sidecar {
        frames: s.mel.n_frames(),
        n_mels: s.mel.n_bins(),
        hop: s.mel.hop,
        win: s.mel.win,
        sample_rate: s.mel.sample_rate,
        durations: &s.durations,
        pitch_hz: &s.pitch_hz,
        audit: &s.audit,
    };
    array_io::write_atomic(&json_path, serde_json::to_string_pretty(&sidecar)?.as_bytes())?;
    Ok((mel_path, json_path))
}

/// Debug-quality waveform through iterative phase reconstruction, written
/// as 16-bit PCM.
pub fn write_wav_output(path: &Path, s: &Synthesis, model: &TtsModel) -> Result<Vec<f64>> {
    let wave = invert_mel(&s.mel, &model.config, model.config.griffin_lim_iters);
    write_wav_i16(path, &wave, model.config.sample_rate)?;
    Ok(wave)
}

/// Outcome of generating samples for one sentence.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SentenceSamples {
    pub sentence: String,
    pub written: usize,
    /// Seeds of the kept samples, in output order.
    pub seeds: Vec<u64>,
    /// Seeds whose draw predicted all-zero durations and was redrawn.
    pub degenerate_seeds: Vec<u64>,
}

/// Sampling batch layout and retry budget for [`generate_samples`].
#[derive(Clone, Debug)]
pub struct SampleRequest {
    pub mode: SamplingMode,
    pub tau: f64,
    pub seed: u64,
    pub n_samples: usize,
    pub wav: bool,
}

/// Writes `n_samples` draws per sentence to `<out>/<sentence>/<idx>.mel`
/// (plus `.json`, and `.wav` if requested). Draw `j` of a sentence uses seed
/// `seed + j`; a draw that degenerates to zero frames is skipped and the
/// next seed is tried, up to `4·n_samples + 10` attempts. The per-sentence
/// outcome is also written to `<out>/samples.json`.
pub fn generate_samples(
    model: &TtsModel,
    sentences: &[Sentence],
    request: &SampleRequest,
    out: &Path,
) -> Result<Vec<SentenceSamples>> {
    let budget = 4 * request.n_samples + 10;
    let mut reports = Vec::with_capacity(sentences.len());
    for sentence in sentences {
        let ids = encode_phonemes(model, &sentence.phonemes)?;
        let dir = out.join(&sentence.id);
        let mut report = SentenceSamples {
            sentence: sentence.id.clone(),
            written: 0,
            seeds: Vec::new(),
            degenerate_seeds: Vec::new(),
        };
        let mut attempt = 0u64;
        while report.written < request.n_samples {
            if attempt as usize >= budget {
                return Err(Error::Degenerate(format!(
                    "sentence `{}`: {} of {attempt} draws degenerate",
                    sentence.id,
                    report.degenerate_seeds.len()
                )));
            }
            let seed = request.seed.wrapping_add(attempt);
            attempt += 1;
            let spec = SamplingSpec::new(request.mode, request.tau, seed);
            let s = match synthesize(model, &ids, &spec) {
                Ok(s) => s,
                Err(Error::Degenerate(_)) => {
                    report.degenerate_seeds.push(seed);
                    continue;
                }
                Err(e) => return Err(e),
            };
            let stem = format!("{:03}", report.written);
            write_mel_output(&dir, &stem, &s)?;
            if request.wav {
                write_wav_output(&dir.join(format!("{stem}.wav")), &s, model)?;
            }
            report.seeds.push(seed);
            report.written += 1;
        }
        reports.push(report);
    }
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    array_io::write_atomic(&out.join("samples.json"), serde_json::to_string_pretty(&reports)?.as_bytes())?;
    Ok(reports)
}
