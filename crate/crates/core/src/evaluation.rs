//! Prosody-diversity statistics over repeated samples of the same sentence
//! and histogram export.
//!
//! Per utterance: length (s), average energy (dB), average pitch and pitch
//! SD over voiced frames (Hz). Per sentence: the sample SD (ddof = 1) of
//! each feature across samples. Reported values are the unweighted mean of
//! the per-sentence SDs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::array_io;
use crate::audio::{invert_mel, read_wav, MelSpectrogram, PitchTracker};
use crate::config::TrainingConfig;
use crate::error::{Error, Result};

const ENERGY_EPS: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UtteranceFeatures {
    pub length_s: f64,
    pub avg_energy_db: f64,
    /// `None` when no frame is voiced.
    pub avg_pitch: Option<f64>,
    /// `None` with fewer than two voiced frames.
    pub pitch_sd: Option<f64>,
}

/// Single-pass (Welford) sample SD with ddof = 1; `None` for fewer than two
/// values.
pub fn sample_sd(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (mut n, mut mean, mut m2) = (0usize, 0.0, 0.0);
    for x in values {
        n += 1;
        let delta = x - mean;
        mean += delta / n as f64;
        m2 += delta * (x - mean);
    }
    (n >= 2).then(|| (m2 / (n - 1) as f64).max(0.0).sqrt())
}

/// Mean and sample SD of voiced (> 0) frames of a pitch track.
pub fn pitch_summary(track: &[f64]) -> (Option<f64>, Option<f64>) {
    let voiced: Vec<f64> = track.iter().copied().filter(|&p| p > 0.0).collect();
    let mean = (!voiced.is_empty()).then(|| voiced.iter().sum::<f64>() / voiced.len() as f64);
    (mean, sample_sd(voiced))
}

/// Mean over frames of 20·log10(RMS + 1e-9). Frames are centred every hop
/// with zero padding outside the signal, giving 1 + len/hop frames.
pub fn average_energy_db(wave: &[f64], win: usize, hop: usize) -> f64 {
    let frames = 1 + wave.len() / hop;
    let half = win / 2;
    let total: f64 = (0..frames)
        .map(|t| {
            let centre = t * hop;
            let lo = centre.saturating_sub(half);
            let hi = (centre + win - half).min(wave.len());
            let energy: f64 = wave[lo.min(hi)..hi].iter().map(|x| x * x).sum();
            20.0 * ((energy / win as f64).sqrt() + ENERGY_EPS).log10()
        })
        .sum();
    total / frames as f64
}

pub fn utterance_features(wave: &[f64], config: &TrainingConfig) -> UtteranceFeatures {
    let tracker = PitchTracker::new(config);
    let (avg_pitch, pitch_sd) = pitch_summary(&tracker.track(wave));
    UtteranceFeatures {
        length_s: wave.len() as f64 / config.sample_rate as f64,
        avg_energy_db: average_energy_db(wave, config.win_length, config.hop_length),
        avg_pitch,
        pitch_sd,
    }
}

/// Mel input: length is M·hop samples; energy and pitch are measured on the
/// phase-reconstructed waveform.
pub fn mel_features(mel: &MelSpectrogram, config: &TrainingConfig) -> UtteranceFeatures {
    let wave = invert_mel(mel, config, config.griffin_lim_iters);
    let mut f = utterance_features(&wave, config);
    f.length_s = (mel.n_frames() * mel.hop) as f64 / mel.sample_rate as f64;
    f
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SentenceStats {
    pub sentence: String,
    pub n_samples: usize,
    pub sd_length: f64,
    pub sd_energy: f64,
    pub sd_pitch: Option<f64>,
    pub sd_pitch_sd: Option<f64>,
    /// Samples left out of the pitch statistics for lack of voicing.
    pub unvoiced_samples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiversityStats {
    pub sigma_l: f64,
    pub sigma_e: f64,
    pub sigma_p: Option<f64>,
    pub sigma_sigma_p: Option<f64>,
    pub n_samples: usize,
    pub per_sentence: Vec<SentenceStats>,
    pub excluded_sentences: Vec<String>,
    pub sd_ddof: u32,
}

fn mean_of(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let v: Vec<f64> = values.into_iter().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Per-sentence sample SDs averaged over sentences. Sentences with fewer
/// than two samples are excluded with a warning.
pub fn diversity_stats(sentences: &[(String, Vec<UtteranceFeatures>)]) -> Result<DiversityStats> {
    let mut per_sentence = Vec::new();
    let mut excluded = Vec::new();
    let mut n_samples = 0;
    for (id, samples) in sentences {
        if samples.len() < 2 {
            warn!(sentence = %id, samples = samples.len(), "fewer than 2 samples; sentence excluded");
            excluded.push(id.clone());
            continue;
        }
        n_samples += samples.len();
        let voiced_p: Vec<f64> = samples.iter().filter_map(|s| s.avg_pitch).collect();
        let voiced_sd: Vec<f64> = samples.iter().filter_map(|s| s.pitch_sd).collect();
        per_sentence.push(SentenceStats {
            sentence: id.clone(),
            n_samples: samples.len(),
            sd_length: sample_sd(samples.iter().map(|s| s.length_s)).expect("two samples"),
            sd_energy: sample_sd(samples.iter().map(|s| s.avg_energy_db)).expect("two samples"),
            sd_pitch: sample_sd(voiced_p.iter().copied()),
            sd_pitch_sd: sample_sd(voiced_sd.iter().copied()),
            unvoiced_samples: samples.len() - voiced_p.len(),
        });
    }
    if per_sentence.is_empty() {
        return Err(Error::InvalidArgument("no sentence has at least 2 samples".into()));
    }
    Ok(DiversityStats {
        sigma_l: mean_of(per_sentence.iter().map(|s| s.sd_length)).expect("non-empty"),
        sigma_e: mean_of(per_sentence.iter().map(|s| s.sd_energy)).expect("non-empty"),
        sigma_p: mean_of(per_sentence.iter().filter_map(|s| s.sd_pitch)),
        sigma_sigma_p: mean_of(per_sentence.iter().filter_map(|s| s.sd_pitch_sd)),
        n_samples,
        per_sentence,
        excluded_sentences: excluded,
        sd_ddof: 1,
    })
}

/// Reference diversity values reported for the full-scale models, for
/// side-by-side display only.
pub fn reference_table() -> BTreeMap<&'static str, [f64; 4]> {
    BTreeMap::from([
        ("GVAE", [0.31, 0.75, 10.54, 8.78]),
        ("LVAE", [0.13, 0.84, 21.48, 9.41]),
        ("HiMuV-TTS", [0.50, 1.02, 12.01, 10.44]),
        ("HiMuV-TTS-G", [0.33, 0.86, 11.82, 10.39]),
        ("HiMuV-TTS-L", [0.36, 0.71, 2.46, 5.37]),
    ])
}

pub const HISTOGRAM_FEATURES: [&str; 3] = ["length", "avg_pitch", "pitch_sd"];

fn feature_value(f: &UtteranceFeatures, name: &str) -> Option<f64> {
    match name {
        "length" => Some(f.length_s),
        "avg_pitch" => f.avg_pitch,
        "pitch_sd" => f.pitch_sd,
        _ => None,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

/// `bins` equal-width bins spanning all values; a single distinct value gets
/// a unit-wide range around it.
pub fn shared_edges(values: &[f64], bins: usize) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if !lo.is_finite() {
        (0.0, 1.0)
    } else if hi > lo {
        (lo, hi)
    } else {
        (lo - 0.5, hi + 0.5)
    };
    (0..=bins).map(|i| lo + (hi - lo) * i as f64 / bins as f64).collect()
}

pub fn histogram(values: &[f64], edges: &[f64]) -> Histogram {
    let bins = edges.len() - 1;
    let mut counts = vec![0; bins];
    for &v in values {
        let pos = edges.partition_point(|&e| e <= v);
        let idx = pos.saturating_sub(1).min(bins - 1);
        counts[idx] += 1;
    }
    Histogram {
        edges: edges.to_vec(),
        counts,
    }
}

fn render_png(h: &Histogram, path: &Path) -> Result<()> {
    const BAR: u32 = 12;
    const HEIGHT: u32 = 160;
    let width = BAR * h.counts.len() as u32 + 4;
    let mut img = RgbImage::from_pixel(width, HEIGHT + 4, Rgb([255, 255, 255]));
    let peak = h.counts.iter().copied().max().unwrap_or(0).max(1);
    for (i, &c) in h.counts.iter().enumerate() {
        let bar = (c as u64 * HEIGHT as u64 / peak as u64) as u32;
        for x in 2 + i as u32 * BAR..2 + (i as u32 + 1) * BAR - 1 {
            for y in HEIGHT + 2 - bar..HEIGHT + 2 {
                img.put_pixel(x, y, Rgb([40, 90, 170]));
            }
        }
    }
    img.save(path)?;
    Ok(())
}

/// For every label and feature, writes `<label>_<feature>.csv` (columns
/// `bin_lo,bin_hi,count`) and a matching PNG bar chart. Bin edges are
/// shared across labels per feature.
pub fn export_histograms(
    features: &[(String, Vec<UtteranceFeatures>)],
    out_dir: &Path,
    bins: usize,
) -> Result<Vec<PathBuf>> {
    if features.is_empty() || features.iter().all(|(_, f)| f.is_empty()) || bins == 0 {
        return Err(Error::InvalidArgument("nothing to histogram".into()));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();
    for name in HISTOGRAM_FEATURES {
        let all: Vec<f64> = features
            .iter()
            .flat_map(|(_, fs)| fs.iter().filter_map(|f| feature_value(f, name)))
            .collect();
        let edges = shared_edges(&all, bins);
        for (label, fs) in features {
            let values: Vec<f64> = fs.iter().filter_map(|f| feature_value(f, name)).collect();
            let h = histogram(&values, &edges);
            let mut csv = String::from("bin_lo,bin_hi,count\n");
            for (i, c) in h.counts.iter().enumerate() {
                csv.push_str(&format!("{},{},{}\n", h.edges[i], h.edges[i + 1], c));
            }
            let csv_path = out_dir.join(format!("{label}_{name}.csv"));
            array_io::write_atomic(&csv_path, csv.as_bytes())?;
            let png_path = out_dir.join(format!("{label}_{name}.png"));
            render_png(&h, &png_path)?;
            written.push(csv_path);
            written.push(png_path);
        }
    }
    Ok(written)
}

/// Samples grouped as `<root>/<label>/<sentence>/<idx>.{wav|mel}`; a `.mel`
/// is used only when no `.wav` of the same stem exists.
pub type SampleTree = BTreeMap<String, Vec<(String, Vec<PathBuf>)>>;

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<_>>()?;
    out.sort();
    Ok(out)
}

pub fn scan_samples(root: &Path) -> Result<SampleTree> {
    let mut tree = SampleTree::new();
    for label_dir in sorted_entries(root)?.into_iter().filter(|p| p.is_dir()) {
        let label = label_dir.file_name().unwrap_or_default().to_string_lossy().into_owned();
        let mut sentences = Vec::new();
        for sentence_dir in sorted_entries(&label_dir)?.into_iter().filter(|p| p.is_dir()) {
            let id = sentence_dir.file_name().unwrap_or_default().to_string_lossy().into_owned();
            let files = sorted_entries(&sentence_dir)?;
            let samples: Vec<PathBuf> = files
                .iter()
                .filter(|p| match p.extension().and_then(|e| e.to_str()) {
                    Some("wav") => true,
                    Some("mel") => !p.with_extension("wav").exists(),
                    _ => false,
                })
                .cloned()
                .collect();
            if !samples.is_empty() {
                sentences.push((id, samples));
            }
        }
        if !sentences.is_empty() {
            tree.insert(label, sentences);
        }
    }
    if tree.is_empty() {
        return Err(Error::InvalidArgument(format!("no samples under {}", root.display())));
    }
    Ok(tree)
}

pub fn sample_features(path: &Path, config: &TrainingConfig) -> Result<UtteranceFeatures> {
    if path.extension().and_then(|e| e.to_str()) == Some("mel") {
        let arr = array_io::load(path)?;
        let frames = arr
            .into_dimensionality::<ndarray::Ix2>()
            .map_err(|e| Error::Shape(format!("{}: {e}", path.display())))?;
        let mel = MelSpectrogram {
            frames,
            hop: config.hop_length,
            win: config.win_length,
            sample_rate: config.sample_rate,
        };
        return Ok(mel_features(&mel, config));
    }
    let (wave, sr) = read_wav(path)?;
    if sr != config.sample_rate {
        return Err(Error::Config(format!("{} has sample rate {sr}", path.display())));
    }
    Ok(utterance_features(&wave, config))
}

#[derive(Clone, Debug, Serialize)]
pub struct ReferenceRow {
    pub sigma_l: f64,
    pub sigma_e: f64,
    pub sigma_p: f64,
    pub sigma_sigma_p: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct EvaluationReport {
    pub models: BTreeMap<String, DiversityStats>,
    pub reference: BTreeMap<String, ReferenceRow>,
    pub sd_convention: String,
    pub energy_definition: String,
}

/// Scans `samples_dir`, computes per-label diversity statistics and
/// histograms, and writes `stats.json` plus histogram files to `out_dir`.
pub fn evaluate_samples(samples_dir: &Path, out_dir: &Path, config: &TrainingConfig) -> Result<EvaluationReport> {
    let tree = scan_samples(samples_dir)?;
    let mut models = BTreeMap::new();
    let mut flat = Vec::new();
    for (label, sentences) in &tree {
        let feats = sentences
            .iter()
            .map(|(id, paths)| {
                let f = paths
                    .par_iter()
                    .map(|p| sample_features(p, config))
                    .collect::<Result<Vec<_>>>()?;
                Ok((id.clone(), f))
            })
            .collect::<Result<Vec<_>>>()?;
        models.insert(label.clone(), diversity_stats(&feats)?);
        flat.push((label.clone(), feats.into_iter().flat_map(|(_, f)| f).collect::<Vec<_>>()));
    }
    export_histograms(&flat, out_dir, 20)?;
    let report = EvaluationReport {
        models,
        reference: reference_table()
            .into_iter()
            .map(|(k, v)| {
                (
                    k.to_string(),
                    ReferenceRow {
                        sigma_l: v[0],
                        sigma_e: v[1],
                        sigma_p: v[2],
                        sigma_sigma_p: v[3],
                    },
                )
            })
            .collect(),
        sd_convention: "sample standard deviation (ddof = 1) per sentence, unweighted mean over sentences".into(),
        energy_definition: format!(
            "mean over centred frames (hop {}, window {}) of 20*log10(rms + 1e-9)",
            config.hop_length, config.win_length
        ),
    };
    array_io::write_atomic(&out_dir.join("stats.json"), serde_json::to_string_pretty(&report)?.as_bytes())?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn feat(len: f64) -> UtteranceFeatures {
        UtteranceFeatures {
            length_s: len,
            avg_energy_db: -20.0,
            avg_pitch: Some(150.0),
            pitch_sd: Some(10.0),
        }
    }

    fn two_pass(v: &[f64]) -> f64 {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
    }

    #[test]
    fn pitch_summary_examples() {
        assert_eq!(pitch_summary(&[200.0; 5]), (Some(200.0), Some(0.0)));
        let (m, sd) = pitch_summary(&[100.0, 0.0, 200.0]);
        assert_eq!(m, Some(150.0));
        assert!((sd.unwrap() - 70.71067811865476).abs() < 1e-12);
        assert_eq!(pitch_summary(&[0.0, 0.0]), (None, None));
    }

    #[test]
    fn one_second_length() {
        let c = TrainingConfig::default();
        let f = utterance_features(&vec![0.0; 22050], &c);
        assert_eq!(f.length_s, 1.0);
        assert_eq!(f.avg_pitch, None);
        assert!((f.avg_energy_db + 180.0).abs() < 1e-9);
    }

    #[test]
    fn diversity_examples() {
        let s = diversity_stats(&[("a".into(), vec![feat(1.0), feat(2.0), feat(3.0)])]).unwrap();
        assert_eq!(s.sigma_l, 1.0);
        assert_eq!(s.sigma_e, 0.0);
        assert_eq!(s.sigma_p, Some(0.0));
        let same = diversity_stats(&[("a".into(), vec![feat(2.0); 4]), ("b".into(), vec![feat(1.0); 2])]).unwrap();
        assert_eq!((same.sigma_l, same.sigma_e), (0.0, 0.0));
        let excl = diversity_stats(&[("a".into(), vec![feat(1.0)]), ("b".into(), vec![feat(1.0), feat(3.0)])]).unwrap();
        assert_eq!(excl.excluded_sentences, vec!["a".to_string()]);
        assert!(diversity_stats(&[("a".into(), vec![feat(1.0)])]).is_err());
    }

    #[test]
    fn histogram_conservation() {
        let values: Vec<f64> = (0..100).map(|i| (i as f64).sin()).collect();
        let h = histogram(&values, &shared_edges(&values, 20));
        assert_eq!(h.counts.len(), 20);
        assert_eq!(h.counts.iter().sum::<usize>(), 100);
        let single = histogram(&[3.0; 7], &shared_edges(&[3.0; 7], 10));
        assert_eq!(single.counts.iter().filter(|&&c| c > 0).count(), 1);
    }

    #[test]
    fn two_labels_produce_six_pairs() {
        let dir = tempfile::tempdir().unwrap();
        let data = vec![
            ("m1".to_string(), vec![feat(1.0), feat(2.0)]),
            ("m2".to_string(), vec![feat(1.5), feat(2.5)]),
        ];
        let files = export_histograms(&data, dir.path(), 8).unwrap();
        assert_eq!(files.iter().filter(|p| p.extension().unwrap() == "csv").count(), 6);
        assert_eq!(files.iter().filter(|p| p.extension().unwrap() == "png").count(), 6);
        assert!(export_histograms(&[], dir.path(), 8).is_err());
    }

    proptest! {
        #[test]
        fn welford_matches_two_pass(v in proptest::collection::vec(-1e3f64..1e3, 2..60), c in 0.1f64..10.0) {
            let sd = sample_sd(v.iter().copied()).unwrap();
            let reference = two_pass(&v);
            prop_assert!((sd - reference).abs() <= 1e-12 * reference.max(1e-300) + 1e-12);
            let scaled = sample_sd(v.iter().map(|x| x * c)).unwrap();
            prop_assert!((scaled - c * sd).abs() <= 1e-9 * (c * sd).max(1.0));
            let mut rev = v.clone();
            rev.reverse();
            prop_assert!((sample_sd(rev).unwrap() - sd).abs() <= 1e-10 * sd.max(1.0));
        }
    }
}
