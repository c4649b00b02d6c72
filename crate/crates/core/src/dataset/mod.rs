//! Corpus ingestion: manifests, external duration alignments, phoneme-level
//! pitch, and the on-disk feature cache.

mod cache;

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};

pub use cache::{
    preprocess_corpus, CacheIndex, CachedUtterance, FeatureCache, MelConfigEcho, PitchStats,
    PreprocessReport, RejectedUtterance,
};

use crate::audio::PitchTracker;
use crate::config::TrainingConfig;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub audio_path: PathBuf,
    pub phonemes: Vec<String>,
}

impl ManifestEntry {
    /// Utterance id: the audio file stem.
    pub fn id(&self) -> String {
        self.audio_path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    }

    pub fn alignment_path(&self) -> PathBuf {
        self.audio_path.with_extension("dur")
    }

    pub fn frame_pitch_path(&self) -> PathBuf {
        self.audio_path.with_extension("f0")
    }
}

/// `relative/audio/path.wav|PH1 PH2 ...` per line; paths resolve against the
/// manifest's directory.
#[derive(Clone, Debug, PartialEq)]
pub struct CorpusManifest {
    pub entries: Vec<ManifestEntry>,
    pub sample_rate: u32,
}

impl CorpusManifest {
    pub fn parse(text: &str, root: &Path, sample_rate: u32, origin: &Path) -> Result<Self> {
        let mut entries = Vec::new();
        let mut seen = BTreeSet::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| Error::Parse {
                path: origin.to_path_buf(),
                msg: format!("line {}: {msg}", lineno + 1),
            };
            let (path, phones) = line
                .split_once('|')
                .ok_or_else(|| err("expected `path|phonemes`".into()))?;
            let phonemes: Vec<String> = phones.split_whitespace().map(str::to_string).collect();
            if phonemes.is_empty() {
                return Err(err("empty phoneme string".into()));
            }
            let entry = ManifestEntry {
                audio_path: root.join(path.trim()),
                phonemes,
            };
            if !seen.insert(entry.id()) {
                return Err(err(format!("duplicate utterance id `{}`", entry.id())));
            }
            entries.push(entry);
        }
        Ok(Self {
            entries,
            sample_rate,
        })
    }

    pub fn load(path: &Path, sample_rate: u32) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let root = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, root, sample_rate, path)
    }
}

/// Per-phoneme targets: durations in frames and phoneme-averaged pitch in Hz
/// (0 for phonemes without voiced frames).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProsodyTargets {
    pub durations: Vec<u32>,
    pub pitch: Vec<f64>,
}

/// Sorted phoneme symbol inventory; a symbol's id is its index.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub symbols: Vec<String>,
}

impl Vocabulary {
    pub fn from_symbols<'a>(symbols: impl IntoIterator<Item = &'a str>) -> Self {
        let set: BTreeSet<&str> = symbols.into_iter().collect();
        Self {
            symbols: set.into_iter().map(str::to_string).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn encode(&self, phonemes: &[impl AsRef<str>]) -> Result<Vec<u32>> {
        phonemes
            .iter()
            .map(|p| {
                self.symbols
                    .binary_search_by(|s| s.as_str().cmp(p.as_ref()))
                    .map(|i| i as u32)
                    .map_err(|_| Error::UnknownPhoneme(p.as_ref().to_string()))
            })
            .collect()
    }
}

pub fn parse_alignment(text: &str, origin: &Path) -> Result<Vec<u32>> {
    let line = text.lines().map(str::trim).find(|l| !l.is_empty()).unwrap_or("");
    line.split_whitespace()
        .map(|tok| {
            let v: i64 = tok.parse().map_err(|_| Error::Parse {
                path: origin.to_path_buf(),
                msg: format!("`{tok}` is not an integer"),
            })?;
            u32::try_from(v).map_err(|_| {
                Error::Consistency(format!(
                    "{}: negative duration {v}",
                    origin.display()
                ))
            })
        })
        .collect()
}

/// Reads a duration file; `expected` is the phoneme count of the paired
/// manifest line.
pub fn load_alignment(path: &Path, expected: Option<usize>) -> Result<Vec<u32>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let durations = parse_alignment(&text, path)?;
    if durations.is_empty() {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            msg: "no durations".into(),
        });
    }
    if let Some(n) = expected {
        if durations.len() != n {
            return Err(Error::Consistency(format!(
                "{}: {} durations for {n} phonemes",
                path.display(),
                durations.len()
            )));
        }
    }
    Ok(durations)
}

/// One float per line, Hz, 0 meaning unvoiced.
pub fn load_frame_pitch(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(|l| {
            let v: f64 = l.parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                msg: format!("`{l}` is not a number"),
            })?;
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    msg: format!("invalid pitch value {v}"),
                });
            }
            Ok(v)
        })
        .collect()
}

/// Mean of the voiced (non-zero) frame pitch values inside each phoneme's
/// span; 0 when the span has no voiced frame.
pub fn phoneme_pitch(frame_pitch: &[f64], durations: &[u32]) -> Result<Vec<f64>> {
    let total: usize = durations.iter().map(|&d| d as usize).sum();
    if total != frame_pitch.len() {
        return Err(Error::Alignment(format!(
            "durations sum to {total} frames but the pitch track has {}",
            frame_pitch.len()
        )));
    }
    let mut out = Vec::with_capacity(durations.len());
    let mut start = 0;
    for &d in durations {
        let span = &frame_pitch[start..start + d as usize];
        let (sum, count) = span
            .iter()
            .filter(|&&p| p > 0.0)
            .fold((0.0, 0usize), |(s, c), &p| (s + p, c + 1));
        out.push(if count > 0 { sum / count as f64 } else { 0.0 });
        start += d as usize;
    }
    Ok(out)
}

/// Tracks frame pitch at the mel hop and averages it per phoneme.
pub fn extract_phoneme_pitch(
    waveform: &[f64],
    durations: &[u32],
    config: &TrainingConfig,
) -> Result<Vec<f64>> {
    let track = PitchTracker::new(config).track(waveform);
    phoneme_pitch(&track, durations)
}

/// Reconciles an alignment with the mel length. Differences up to
/// `tolerance` frames are repaired by trimming the mel/pitch tail or by
/// repeating the last frame (pitch padded as unvoiced); larger gaps are an
/// alignment error.
pub fn reconcile_lengths(
    mel: Array2<f64>,
    frame_pitch: Vec<f64>,
    durations: &[u32],
    tolerance: usize,
) -> Result<(Array2<f64>, Vec<f64>)> {
    let target: usize = durations.iter().map(|&d| d as usize).sum();
    let frames = mel.nrows();
    if frame_pitch.len() != frames {
        return Err(Error::Alignment(format!(
            "pitch track has {} frames, mel has {frames}",
            frame_pitch.len()
        )));
    }
    if target == 0 {
        return Err(Error::Alignment("durations sum to zero".into()));
    }
    if target.abs_diff(frames) > tolerance {
        return Err(Error::Alignment(format!(
            "durations sum to {target} frames, mel has {frames} (tolerance {tolerance})"
        )));
    }
    if target <= frames {
        let mel = mel.slice(s![..target, ..]).to_owned();
        let mut pitch = frame_pitch;
        pitch.truncate(target);
        return Ok((mel, pitch));
    }
    let mut out = Array2::zeros((target, mel.ncols()));
    out.slice_mut(s![..frames, ..]).assign(&mel);
    let last = mel.row(frames - 1).to_owned();
    for r in frames..target {
        out.row_mut(r).assign(&last);
    }
    let mut pitch = frame_pitch;
    pitch.resize(target, 0.0);
    Ok((out, pitch))
}
