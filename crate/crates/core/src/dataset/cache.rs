use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayD, IxDyn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tracing::{info, warn};

use super::{
    load_alignment, load_frame_pitch, phoneme_pitch, reconcile_lengths, CorpusManifest,
    ManifestEntry, ProsodyTargets, Vocabulary,
};
use crate::array_io;
use crate::audio::{read_wav, MelExtractor, PitchTracker};
use crate::config::TrainingConfig;
use crate::error::{Error, Result};

pub const CACHE_VERSION: u32 = 1;
const STATS_FILE: &str = "stats.json";
const UTT_DIR: &str = "utt";

/// Corpus-level pitch statistics over voiced phonemes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PitchStats {
    pub mean: f64,
    pub sd: f64,
    pub voiced_phonemes: usize,
    pub normalization: bool,
}

impl PitchStats {
    pub fn from_values<'a>(values: impl IntoIterator<Item = &'a f64>) -> Self {
        let voiced: Vec<f64> = values.into_iter().copied().filter(|&p| p > 0.0).collect();
        let n = voiced.len();
        let mean = if n > 0 {
            voiced.iter().sum::<f64>() / n as f64
        } else {
            0.0
        };
        let sd = if n > 0 {
            (voiced.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / n as f64).sqrt()
        } else {
            0.0
        };
        let normalization = sd > 0.0;
        if !normalization {
            warn!("pitch SD is 0 over {n} voiced phonemes; pitch normalization disabled");
        }
        Self {
            mean,
            sd,
            voiced_phonemes: n,
            normalization,
        }
    }

    /// Hz to model units. Unvoiced (0 Hz) maps to 0.
    pub fn normalize(&self, hz: f64) -> f64 {
        if hz <= 0.0 {
            0.0
        } else if self.normalization {
            (hz - self.mean) / self.sd
        } else {
            hz
        }
    }

    /// Model units to Hz, clamped at 0.
    pub fn denormalize(&self, value: f64) -> f64 {
        let hz = if self.normalization {
            value * self.sd + self.mean
        } else {
            value
        };
        hz.max(0.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MelConfigEcho {
    pub sample_rate: u32,
    pub n_fft: usize,
    pub win_length: usize,
    pub hop_length: usize,
    pub n_mels: usize,
    pub f_min: f64,
    pub f_max: f64,
    pub log_floor: f64,
}

impl From<&TrainingConfig> for MelConfigEcho {
    fn from(c: &TrainingConfig) -> Self {
        Self {
            sample_rate: c.sample_rate,
            n_fft: c.n_fft,
            win_length: c.win_length,
            hop_length: c.hop_length,
            n_mels: c.n_mels,
            f_min: c.f_min,
            f_max: c.f_max,
            log_floor: c.log_floor,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub id: String,
    pub phonemes: String,
    pub frames: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RejectedUtterance {
    pub id: String,
    pub reason: String,
}

/// Contents of `stats.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CacheIndex {
    pub version: u32,
    pub mel: MelConfigEcho,
    pub pitch: PitchStats,
    pub utterances: Vec<IndexEntry>,
    pub rejected: Vec<RejectedUtterance>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CachedUtterance {
    pub id: String,
    pub phonemes: Vec<String>,
    pub mel: Array2<f64>,
    pub targets: ProsodyTargets,
}

impl CachedUtterance {
    pub fn check(&self) -> Result<()> {
        let total: usize = self.targets.durations.iter().map(|&d| d as usize).sum();
        if total != self.mel.nrows() {
            return Err(Error::Consistency(format!(
                "{}: durations sum to {total} but mel has {} frames",
                self.id,
                self.mel.nrows()
            )));
        }
        if self.targets.durations.len() != self.phonemes.len()
            || self.targets.pitch.len() != self.phonemes.len()
        {
            return Err(Error::Consistency(format!(
                "{}: target lengths do not match {} phonemes",
                self.id,
                self.phonemes.len()
            )));
        }
        if self.mel.iter().any(|v| !v.is_finite()) {
            return Err(Error::Consistency(format!("{}: non-finite mel", self.id)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct FeatureCache {
    pub index: CacheIndex,
    pub utterances: Vec<CachedUtterance>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PreprocessReport {
    pub written: usize,
    pub reused: usize,
    pub rejected: Vec<RejectedUtterance>,
    pub stats_path: PathBuf,
}

fn utt_paths(dir: &Path, id: &str) -> [PathBuf; 3] {
    let base = dir.join(UTT_DIR);
    [
        base.join(format!("{id}.mel")),
        base.join(format!("{id}.dur")),
        base.join(format!("{id}.pitch")),
    ]
}

fn write_utterance(dir: &Path, utt: &CachedUtterance) -> Result<()> {
    let [mel_p, dur_p, pitch_p] = utt_paths(dir, &utt.id);
    let durs: Vec<f64> = utt.targets.durations.iter().map(|&d| d as f64).collect();
    array_io::save(&dur_p, &ArrayD::from_shape_vec(IxDyn(&[durs.len()]), durs).expect("1-d"))?;
    array_io::save(
        &pitch_p,
        &ArrayD::from_shape_vec(IxDyn(&[utt.targets.pitch.len()]), utt.targets.pitch.clone())
            .expect("1-d"),
    )?;
    // Mel last: its presence marks the utterance complete.
    array_io::save(&mel_p, &utt.mel.clone().into_dyn())
}

fn read_utterance(dir: &Path, id: &str, phonemes: Vec<String>) -> Result<CachedUtterance> {
    let [mel_p, dur_p, pitch_p] = utt_paths(dir, id);
    let mel = array_io::load(&mel_p)?
        .into_dimensionality::<ndarray::Ix2>()
        .map_err(|e| Error::Parse {
            path: mel_p.clone(),
            msg: e.to_string(),
        })?;
    let durations = array_io::load(&dur_p)?
        .iter()
        .map(|&d| {
            if d >= 0.0 && d.fract() == 0.0 {
                Ok(d as u32)
            } else {
                Err(Error::Consistency(format!("{id}: invalid cached duration {d}")))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let pitch = array_io::load(&pitch_p)?.iter().copied().collect();
    let utt = CachedUtterance {
        id: id.to_string(),
        phonemes,
        mel,
        targets: ProsodyTargets { durations, pitch },
    };
    utt.check()?;
    Ok(utt)
}

enum Outcome {
    Ready(CachedUtterance, bool),
    Rejected(RejectedUtterance),
}

fn process_entry(
    entry: &ManifestEntry,
    dir: &Path,
    config: &TrainingConfig,
    extractor: &MelExtractor,
    tracker: &PitchTracker,
) -> Result<Outcome> {
    let id = entry.id();
    if utt_paths(dir, &id).iter().all(|p| p.exists()) {
        return Ok(Outcome::Ready(read_utterance(dir, &id, entry.phonemes.clone())?, false));
    }
    let (wave, sr) = read_wav(&entry.audio_path)?;
    if sr != config.sample_rate {
        return Err(Error::Consistency(format!(
            "sample rate {sr} Hz, expected {}",
            config.sample_rate
        )));
    }
    let mel = extractor.extract(&wave)?;
    let durations = load_alignment(&entry.alignment_path(), Some(entry.phonemes.len()))?;
    let frame_pitch = if entry.frame_pitch_path().exists() {
        load_frame_pitch(&entry.frame_pitch_path())?
    } else {
        tracker.track(&wave)
    };
    if frame_pitch.len().abs_diff(mel.n_frames()) > config.duration_tolerance {
        return Err(Error::Alignment(format!(
            "frame pitch has {} values for {} mel frames",
            frame_pitch.len(),
            mel.n_frames()
        )));
    }
    let mut frame_pitch = frame_pitch;
    frame_pitch.resize(mel.n_frames(), 0.0);
    let (mel, frame_pitch) =
        match reconcile_lengths(mel.frames, frame_pitch, &durations, config.duration_tolerance) {
            Ok(v) => v,
            Err(Error::Alignment(reason)) => {
                warn!("rejecting utterance {id}: {reason}");
                return Ok(Outcome::Rejected(RejectedUtterance { id, reason }));
            }
            Err(e) => return Err(e),
        };
    let pitch = phoneme_pitch(&frame_pitch, &durations)?;
    let utt = CachedUtterance {
        id,
        phonemes: entry.phonemes.clone(),
        mel,
        targets: ProsodyTargets { durations, pitch },
    };
    utt.check()?;
    write_utterance(dir, &utt)?;
    Ok(Outcome::Ready(utt, true))
}

/// Extracts features for every manifest entry into `out_dir` and writes
/// `stats.json`. Utterances already present in the cache are reused, so an
/// interrupted run can be resumed; output is deterministic.
pub fn preprocess_corpus(
    manifest: &CorpusManifest,
    out_dir: &Path,
    config: &TrainingConfig,
) -> Result<PreprocessReport> {
    if manifest.sample_rate != config.sample_rate {
        return Err(Error::Config(format!(
            "manifest sample rate {} differs from config {}",
            manifest.sample_rate, config.sample_rate
        )));
    }
    let utt_dir = out_dir.join(UTT_DIR);
    std::fs::create_dir_all(&utt_dir).map_err(|e| Error::io(&utt_dir, e))?;
    let extractor = MelExtractor::new(config);
    let tracker = PitchTracker::new(config);

    let outcomes: Vec<(String, Result<Outcome>)> = manifest
        .entries
        .par_iter()
        .map(|entry| {
            (
                entry.id(),
                process_entry(entry, out_dir, config, &extractor, &tracker),
            )
        })
        .collect();

    let mut failures = Vec::new();
    let mut ready = Vec::new();
    let mut rejected = Vec::new();
    let (mut written, mut reused) = (0, 0);
    for (id, outcome) in outcomes {
        match outcome {
            Ok(Outcome::Ready(utt, fresh)) => {
                if fresh {
                    written += 1;
                } else {
                    reused += 1;
                }
                ready.push(utt);
            }
            Ok(Outcome::Rejected(r)) => rejected.push(r),
            Err(e) => failures.push((id, e.to_string())),
        }
    }
    if let Some((id, _)) = failures.first() {
        let msg = failures
            .iter()
            .map(|(id, m)| format!("{id}: {m}"))
            .collect::<Vec<_>>()
            .join("; ");
        return Err(Error::Utterance {
            id: id.clone(),
            msg: format!("{} utterance(s) failed, cache is resumable: {msg}", failures.len()),
        });
    }

    let cache = FeatureCache::from_utterances(ready, config, rejected.clone());
    let stats_path = out_dir.join(STATS_FILE);
    let json = serde_json::to_string_pretty(&cache.index)?;
    array_io::write_atomic(&stats_path, json.as_bytes())?;
    info!(written, reused, rejected = rejected.len(), "preprocessing finished");
    Ok(PreprocessReport {
        written,
        reused,
        rejected,
        stats_path,
    })
}

impl FeatureCache {
    pub fn from_utterances(
        utterances: Vec<CachedUtterance>,
        config: &TrainingConfig,
        rejected: Vec<RejectedUtterance>,
    ) -> Self {
        let pitch = PitchStats::from_values(utterances.iter().flat_map(|u| u.targets.pitch.iter()));
        let index = CacheIndex {
            version: CACHE_VERSION,
            mel: MelConfigEcho::from(config),
            pitch,
            utterances: utterances
                .iter()
                .map(|u| IndexEntry {
                    id: u.id.clone(),
                    phonemes: u.phonemes.join(" "),
                    frames: u.mel.nrows(),
                })
                .collect(),
            rejected,
        };
        Self { index, utterances }
    }

    /// Writes every utterance and the stats file.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let utt_dir = dir.join(UTT_DIR);
        std::fs::create_dir_all(&utt_dir).map_err(|e| Error::io(&utt_dir, e))?;
        for utt in &self.utterances {
            write_utterance(dir, utt)?;
        }
        let json = serde_json::to_string_pretty(&self.index)?;
        array_io::write_atomic(&dir.join(STATS_FILE), json.as_bytes())
    }

    /// Loads a cache, asserting duration/mel consistency for every utterance.
    pub fn load(dir: &Path) -> Result<Self> {
        let stats_path = dir.join(STATS_FILE);
        let text = std::fs::read_to_string(&stats_path).map_err(|e| Error::io(&stats_path, e))?;
        let index: CacheIndex = serde_json::from_str(&text)?;
        if index.version != CACHE_VERSION {
            return Err(Error::Consistency(format!(
                "cache version {} unsupported",
                index.version
            )));
        }
        let utterances = index
            .utterances
            .iter()
            .map(|e| {
                let phonemes = e.phonemes.split_whitespace().map(str::to_string).collect();
                read_utterance(dir, &e.id, phonemes)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { index, utterances })
    }

    pub fn vocabulary(&self) -> Vocabulary {
        Vocabulary::from_symbols(
            self.utterances
                .iter()
                .flat_map(|u| u.phonemes.iter().map(String::as_str)),
        )
    }

    pub fn pitch_stats(&self) -> &PitchStats {
        &self.index.pitch
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_pitch_stats_disable_normalization() {
        let stats = PitchStats::from_values(&[0.0, 0.0, 0.0]);
        assert_eq!(stats.sd, 0.0);
        assert!(!stats.normalization);
        assert_eq!(stats.normalize(0.0), 0.0);
    }

    #[test]
    fn pitch_stats_over_voiced_only() {
        let stats = PitchStats::from_values(&[0.0, 100.0, 300.0]);
        assert_eq!(stats.mean, 200.0);
        assert_eq!(stats.sd, 100.0);
        assert_eq!(stats.normalize(300.0), 1.0);
        assert_eq!(stats.denormalize(-1.0), 100.0);
        assert_eq!(stats.normalize(0.0), 0.0);
    }
}
