use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use himuv_tts::TrainingConfig;

const SMALL: &str = "\
batch_size = 8
total_steps = 60
warmup_steps = 10
kl_ramp_start = 10
kl_ramp_end = 50
d_model = 32
text_layers = 1
decoder_layers = 1
ff_hidden = 32
predictor_hidden = 16
predictor_layers = 1
d_enc = 16
enc_gru_hidden = 8
disc_channels = 4
checkpoint_every = 30
griffin_lim_iters = 4
";

fn himuv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_himuv")).args(args).output().expect("run himuv")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn error_line(o: &Output) -> String {
    let text = stderr(o);
    let lines: Vec<&str> = text.lines().filter(|l| l.starts_with("error: kind=")).collect();
    assert_eq!(lines.len(), 1, "expected one error line in:\n{text}");
    lines[0].to_string()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn help_lists_every_config_key() {
    let out = himuv(&["--help"]);
    assert!(out.status.success());
    let help = String::from_utf8_lossy(&out.stdout);
    for (key, _) in TrainingConfig::keys() {
        assert!(help.contains(&key), "--help is missing `{key}`");
    }
}

#[test]
fn failures_are_single_line_with_distinct_codes() {
    let dir = tempfile::tempdir().unwrap();
    let unknown_flag = himuv(&["train", "--bogus"]);
    assert!(error_line(&unknown_flag).starts_with("error: kind=usage"));

    let missing = himuv(&["inspect-checkpoint", "--checkpoint", s(&dir.path().join("none.ckpt"))]);
    assert!(error_line(&missing).starts_with("error: kind=io"));

    let bad_config = dir.path().join("bad.cfg");
    std::fs::write(&bad_config, "kl_ramp_start = 500\nkl_ramp_end = 100\n").unwrap();
    let config = himuv(&["--config", s(&bad_config), "toy-corpus", "--out", s(dir.path())]);
    assert!(error_line(&config).starts_with("error: kind=config"));

    let unknown_key = himuv(&["--set", "no_such_key=1", "toy-corpus", "--out", s(dir.path())]);
    assert!(error_line(&unknown_key).starts_with("error: kind=config"));

    let codes: Vec<i32> = [&unknown_flag, &missing, &config]
        .iter()
        .map(|o| o.status.code().unwrap())
        .collect();
    assert!(codes.iter().all(|&c| c != 0));
    assert!(codes[0] != codes[1] && codes[1] != codes[2] && codes[0] != codes[2], "{codes:?}");
}

fn mel_files(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "mel"))
        .collect();
    v.sort();
    v
}

#[test]
fn toy_pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let cfg = root.join("small.cfg");
    std::fs::write(&cfg, SMALL).unwrap();
    let run = |args: &[&str]| {
        let mut full = vec!["--config", s(&cfg), "--log-level", "warn"];
        full.extend_from_slice(args);
        let out = himuv(&full);
        assert!(out.status.success(), "{args:?} failed: {}", stderr(&out));
        String::from_utf8_lossy(&out.stdout).into_owned()
    };

    let corpus = root.join("corpus");
    run(&["toy-corpus", "--out", s(&corpus), "--count", "8"]);
    let cache = root.join("cache");
    run(&["preprocess", "--manifest", s(&corpus.join("manifest.txt")), "--out", s(&cache)]);
    let index = std::fs::read(cache.join("stats.json")).unwrap();
    run(&["preprocess", "--manifest", s(&corpus.join("manifest.txt")), "--out", s(&cache)]);
    assert_eq!(index, std::fs::read(cache.join("stats.json")).unwrap());

    let backbone = root.join("backbone");
    run(&["train", "--variant", "backbone", "--cache", s(&cache), "--out", s(&backbone), "--steps", "2"]);
    let listing = run(&["inspect-checkpoint", "--checkpoint", s(&backbone.join("latest.ckpt"))]);
    assert!(listing.contains("variant: backbone"));
    assert!(!listing.contains("prosody.") && !listing.contains("disc."), "{listing}");

    let model = root.join("himuv");
    run(&["train", "--variant", "himuv", "--cache", s(&cache), "--out", s(&model)]);
    let metrics = std::fs::read_to_string(model.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 61);
    assert!(model.join("step_0000030.ckpt").exists() && model.join("config.txt").exists());
    let listing = run(&["inspect-checkpoint", "--checkpoint", s(&model.join("latest.ckpt"))]);
    assert!(listing.contains("step: 60") && listing.contains("prosody.posterior_mean"));

    let text = root.join("text.txt");
    let manifest = std::fs::read_to_string(corpus.join("manifest.txt")).unwrap();
    let lines: Vec<String> = manifest
        .lines()
        .take(2)
        .enumerate()
        .map(|(i, l)| format!("t{i}|{}", l.split_once('|').unwrap().1))
        .collect();
    std::fs::write(&text, lines.join("\n")).unwrap();

    let still = root.join("still");
    let ckpt = model.join("latest.ckpt");
    run(&[
        "synthesize", "--checkpoint", s(&ckpt), "--text-file", s(&text), "--tau", "0", "--n-samples", "3",
        "--out", s(&still),
    ]);
    let mels = mel_files(&still.join("t0"));
    assert_eq!(mels.len(), 3);
    let first = std::fs::read(&mels[0]).unwrap();
    assert!(mels.iter().all(|p| std::fs::read(p).unwrap() == first));

    let samples = root.join("samples");
    for (label, mode) in [("full", "full"), ("global", "global_only")] {
        run(&[
            "--seed", "5", "synthesize", "--checkpoint", s(&ckpt), "--text-file", s(&text), "--mode", mode,
            "--tau", "1", "--n-samples", "4", "--out", s(&samples.join(label)),
        ]);
    }
    let again = root.join("again");
    run(&[
        "--seed", "5", "synthesize", "--checkpoint", s(&ckpt), "--text-file", s(&text), "--tau", "1",
        "--n-samples", "4", "--out", s(&again),
    ]);
    for (a, b) in mel_files(&samples.join("full/t1")).iter().zip(mel_files(&again.join("t1"))) {
        assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
    }

    let eval = root.join("eval");
    let summary = run(&["evaluate", "--samples-dir", s(&samples), "--out", s(&eval)]);
    assert!(summary.contains("full: sigma_l=") && summary.contains("global: sigma_l="));
    let stats: String = std::fs::read_to_string(eval.join("stats.json")).unwrap();
    for key in ["sigma_l", "sigma_e", "sigma_p", "sigma_sigma_p", "reference"] {
        assert!(stats.contains(key), "stats.json lacks {key}");
    }
    assert!(eval.join("full_length.csv").exists() && eval.join("global_pitch_sd.png").exists());
}
