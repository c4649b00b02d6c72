use std::path::Path;

use proptest::prelude::*;

use himuv_tts::dataset::{phoneme_pitch, preprocess_corpus, CorpusManifest, FeatureCache};
use himuv_tts::{toy, TrainingConfig};

fn corpus(dir: &Path, count: usize) -> (TrainingConfig, CorpusManifest) {
    let config = TrainingConfig::desk();
    let manifest = toy::write_audio_corpus(dir, count, &config).unwrap();
    let manifest = CorpusManifest::load(&manifest, config.sample_rate).unwrap();
    (config, manifest)
}

fn cache_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn two_utterance_manifest_gives_two_triples_and_stats() {
    let dir = tempfile::tempdir().unwrap();
    let (config, manifest) = corpus(dir.path(), 2);
    let out = dir.path().join("cache");
    let report = preprocess_corpus(&manifest, &out, &config).unwrap();
    assert_eq!(report.written, 2);
    assert!(report.rejected.is_empty());
    assert!(out.join("stats.json").exists());
    let cache = FeatureCache::load(&out).unwrap();
    assert_eq!(cache.utterances.len(), 2);
    for u in &cache.utterances {
        let frames: u32 = u.targets.durations.iter().sum();
        assert_eq!(frames as usize, u.mel.nrows());
        assert_eq!(u.mel.ncols(), 80);
    }
}

#[test]
fn rerun_is_a_byte_identical_no_op() {
    let dir = tempfile::tempdir().unwrap();
    let (config, manifest) = corpus(dir.path(), 3);
    let out = dir.path().join("cache");
    preprocess_corpus(&manifest, &out, &config).unwrap();
    let first = cache_bytes(&out);
    let report = preprocess_corpus(&manifest, &out, &config).unwrap();
    assert_eq!(report.written, 0);
    assert_eq!(report.reused, 3);
    assert_eq!(first, cache_bytes(&out));

    let fresh = dir.path().join("fresh");
    preprocess_corpus(&manifest, &fresh, &config).unwrap();
    assert_eq!(first, cache_bytes(&fresh));
}

#[test]
fn all_unvoiced_corpus_disables_normalization() {
    let dir = tempfile::tempdir().unwrap();
    let (config, manifest) = corpus(dir.path(), 2);
    for entry in &manifest.entries {
        let frames: u32 = std::fs::read_to_string(entry.alignment_path())
            .unwrap()
            .split_whitespace()
            .map(|d| d.parse::<u32>().unwrap())
            .sum();
        std::fs::write(entry.frame_pitch_path(), "0\n".repeat(frames as usize)).unwrap();
    }
    let out = dir.path().join("cache");
    preprocess_corpus(&manifest, &out, &config).unwrap();
    let cache = FeatureCache::load(&out).unwrap();
    let stats = cache.pitch_stats();
    assert_eq!(stats.sd, 0.0);
    assert!(!stats.normalization);
    assert!(cache.utterances.iter().all(|u| u.targets.pitch.iter().all(|&p| p == 0.0)));
}

#[test]
fn toy_cache_round_trips_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let cache = toy::toy_cache(&TrainingConfig::desk());
    cache.save(dir.path()).unwrap();
    let loaded = FeatureCache::load(dir.path()).unwrap();
    assert_eq!(loaded.utterances, cache.utterances);
    assert_eq!(loaded.pitch_stats(), cache.pitch_stats());
}

proptest! {
    #[test]
    fn phoneme_pitch_is_concatenation_consistent(
        a in prop::collection::vec((0u32..4, prop::collection::vec(prop_oneof![Just(0.0), 80.0..300.0f64], 4)), 1..5),
        b in prop::collection::vec((0u32..4, prop::collection::vec(prop_oneof![Just(0.0), 80.0..300.0f64], 4)), 1..5),
    ) {
        let split = |spans: &[(u32, Vec<f64>)]| {
            let durations: Vec<u32> = spans.iter().map(|(d, _)| *d).collect();
            let frames: Vec<f64> = spans.iter().flat_map(|(d, f)| f[..*d as usize].to_vec()).collect();
            (durations, frames)
        };
        let (da, fa) = split(&a);
        let (db, fb) = split(&b);
        let mut joined = phoneme_pitch(&fa, &da).unwrap();
        joined.extend(phoneme_pitch(&fb, &db).unwrap());
        let whole = phoneme_pitch(&[fa, fb].concat(), &[da, db].concat()).unwrap();
        prop_assert_eq!(joined, whole);
    }
}
