//! `himuv` command-line front end: preprocess, train, synthesize, evaluate
//! and inspect checkpoints.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tracing::info;

use himuv_tts::dataset::{preprocess_corpus, CorpusManifest, FeatureCache};
use himuv_tts::evaluation::evaluate_samples;
use himuv_tts::inference::{generate_samples, parse_sentences, SampleRequest};
use himuv_tts::model::batch::TrainingExample;
use himuv_tts::training::{run_training, Checkpoint, Trainer};
use himuv_tts::{toy, Error, SamplingMode, TrainingConfig, TtsModel, Variant};

#[derive(Parser, Debug)]
#[command(name = "himuv", version, about = "Multi-scale prosody TTS toolkit", after_help = config_help())]
struct Cli {
    /// Config file of `key = value` lines; unset keys keep their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override one config key, e.g. `--set total_steps=500`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// Seed for all randomness; overrides the `seed` config key.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// One of error, warn, info, debug, trace.
    #[arg(long, global = true, default_value = "info")]
    log_level: String,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Extract mel, duration and pitch features from a corpus manifest.
    Preprocess {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model on a feature cache; resumes from `<out>/latest.ckpt`.
    Train {
        #[arg(long)]
        variant: Variant,
        #[arg(long)]
        cache: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Stop after this many total steps (default: `total_steps`).
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Sample mel-spectrograms for each sentence of a phoneme text file.
    Synthesize(SynthArgs),
    /// Prosody-diversity statistics and histograms over generated samples.
    Evaluate {
        /// Laid out as `<label>/<sentence>/<idx>.{wav,mel}`.
        #[arg(long)]
        samples_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print a checkpoint's variant, training step and parameter tensors.
    InspectCheckpoint {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Write a small synthetic audio corpus with alignments and a manifest.
    ToyCorpus {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        count: usize,
    },
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Lines of `id|PH PH ...` or bare phoneme sequences.
    #[arg(long)]
    text_file: PathBuf,
    #[arg(long, default_value = "full")]
    mode: SamplingMode,
    #[arg(long, default_value_t = 1.0)]
    tau: f64,
    #[arg(long, default_value_t = 1)]
    n_samples: usize,
    /// Writes `<out>/<sentence>/<idx>.mel` plus a `.json` sidecar.
    #[arg(long)]
    out: PathBuf,
    /// Also write a phase-reconstructed `.wav` next to each mel.
    #[arg(long)]
    wav: bool,
}

fn config_help() -> String {
    let mut text = String::from("Config keys (file lines `key = value`, or `--set key=value`):\n");
    for (key, default) in TrainingConfig::keys() {
        text.push_str(&format!("  {key:<22} default {default}\n"));
    }
    text
}

fn load_config(cli: &Cli) -> Result<TrainingConfig, Error> {
    let mut config = match &cli.config {
        Some(path) => TrainingConfig::load(path)?,
        None => TrainingConfig::default(),
    };
    for item in &cli.overrides {
        let (key, value) = item
            .split_once('=')
            .ok_or_else(|| Error::InvalidArgument(format!("`--set {item}` is not KEY=VALUE")))?;
        config.set(key.trim(), value.trim())?;
    }
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    config.validate()?;
    Ok(config)
}

fn write_config(dir: &Path, config: &TrainingConfig) -> Result<(), Error> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join("config.txt");
    std::fs::write(&path, config.to_kv_string()).map_err(|e| Error::io(&path, e))
}

fn preprocess(config: &TrainingConfig, manifest: &Path, out: &Path) -> Result<(), Error> {
    let manifest = CorpusManifest::load(manifest, config.sample_rate)?;
    let report = preprocess_corpus(&manifest, out, config)?;
    write_config(out, config)?;
    info!(written = report.written, reused = report.reused, rejected = report.rejected.len(), "preprocessed");
    for r in &report.rejected {
        info!(id = %r.id, reason = %r.reason, "rejected");
    }
    Ok(())
}

fn train(config: TrainingConfig, variant: Variant, cache: &Path, out: &Path, steps: Option<usize>) -> Result<(), Error> {
    let cache = FeatureCache::load(cache)?;
    let vocab = cache.vocabulary();
    let stats = cache.pitch_stats().clone();
    let examples = cache
        .utterances
        .iter()
        .map(|u| TrainingExample::from_cached(u, &vocab, &stats))
        .collect::<Result<Vec<_>, _>>()?;
    let latest = out.join("latest.ckpt");
    let mut trainer = if latest.exists() {
        let ck = Checkpoint::load(&latest)?;
        if ck.variant != variant {
            return Err(Error::InvalidArgument(format!(
                "{} holds a {} model, not {variant}",
                latest.display(),
                ck.variant
            )));
        }
        info!(path = %latest.display(), "resuming");
        Trainer::from_checkpoint(ck, examples)?
    } else {
        Trainer::new(TtsModel::build(variant, &config, vocab, stats)?, examples)?
    };
    let until = steps.unwrap_or(trainer.model.config.total_steps);
    let history = run_training(&mut trainer, out, until)?;
    if let Some(last) = history.last() {
        info!(step = last.step, l_final = last.l_final, l_mel = last.l_mel, "finished");
    }
    Ok(())
}

fn synthesize_cmd(seed: u64, args: &SynthArgs) -> Result<(), Error> {
    let model = Checkpoint::load(&args.checkpoint)?.to_model()?;
    let text = std::fs::read_to_string(&args.text_file).map_err(|e| Error::io(&args.text_file, e))?;
    let sentences = parse_sentences(&text);
    if sentences.is_empty() {
        return Err(Error::InvalidArgument(format!("{} has no sentences", args.text_file.display())));
    }
    write_config(&args.out, &model.config)?;
    let request = SampleRequest {
        mode: args.mode,
        tau: args.tau,
        seed,
        n_samples: args.n_samples,
        wav: args.wav,
    };
    for r in generate_samples(&model, &sentences, &request, &args.out)? {
        info!(sentence = %r.sentence, samples = r.written, redrawn = r.degenerate_seeds.len(), "synthesized");
    }
    Ok(())
}

fn evaluate(config: &TrainingConfig, samples: &Path, out: &Path) -> Result<(), Error> {
    let report = evaluate_samples(samples, out, config)?;
    write_config(out, config)?;
    for (label, s) in &report.models {
        let opt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.3}"));
        println!(
            "{label}: sigma_l={:.3} sigma_e={:.3} sigma_p={} sigma_sigma_p={} samples={}",
            s.sigma_l,
            s.sigma_e,
            opt(s.sigma_p),
            opt(s.sigma_sigma_p),
            s.n_samples
        );
    }
    Ok(())
}

fn inspect(path: &Path) -> Result<(), Error> {
    let ck = Checkpoint::load(path)?;
    println!("variant: {}", ck.variant);
    println!("step: {}", ck.state.as_ref().map_or(0, |s| s.step));
    println!("vocabulary: {} symbols", ck.vocab.len());
    let total: usize = ck.params.values().map(|(_, v)| v.len()).sum();
    println!("parameters: {total} in {} tensors", ck.params.len());
    for (name, (shape, _)) in &ck.params {
        println!("  {name} {shape:?}");
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<(), Error> {
    let config = load_config(cli)?;
    match &cli.command {
        Command::Preprocess { manifest, out } => preprocess(&config, manifest, out),
        Command::Train { variant, cache, out, steps } => train(config, *variant, cache, out, *steps),
        Command::Synthesize(args) => synthesize_cmd(config.seed, args),
        Command::Evaluate { samples_dir, out } => evaluate(&config, samples_dir, out),
        Command::InspectCheckpoint { checkpoint } => inspect(checkpoint),
        Command::ToyCorpus { out, count } => {
            let manifest = toy::write_audio_corpus(out, *count, &config)?;
            println!("{}", manifest.display());
            Ok(())
        }
    }
}

fn exit_code(kind: &str) -> u8 {
    match kind {
        "io" => 3,
        "config" => 4,
        "parse" => 5,
        "vocabulary" => 6,
        "checkpoint_version" => 7,
        "corrupt_checkpoint" => 8,
        "invalid_argument" | "unknown_variant" => 9,
        "input_too_short" | "alignment" | "utterance" => 10,
        "consistency" | "shape" => 11,
        "non_finite" | "degenerate" => 12,
        "wav" | "image" | "json" => 13,
        _ => 1,
    }
}

fn one_line(msg: &str) -> String {
    msg.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error: kind=usage msg={}", one_line(first));
            return ExitCode::from(2);
        }
    };
    let filter = tracing_subscriber::EnvFilter::try_new(&cli.log_level)
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info"));
    tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: kind={} msg={}", e.kind(), one_line(&e.to_string()));
            ExitCode::from(exit_code(e.kind()))
        }
    }
}
