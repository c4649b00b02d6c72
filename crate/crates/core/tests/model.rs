use std::sync::OnceLock;

use candle_core::{DType, Tensor};
use ndarray::Array2;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use himuv_tts::dataset::FeatureCache;
use himuv_tts::inference::{sample_prior, synthesize};
use himuv_tts::model::acoustic::{durations_from_log, length_regulate, length_regulate_rows, PitchEmbedding};
use himuv_tts::model::adversarial::adv_loss_d;
use himuv_tts::model::batch::{Batch, TrainingExample};
use himuv_tts::model::prosody::{kl_standard_normal, reparameterize};
use himuv_tts::model::{LatentNoise, TtsModel, Variant};
use himuv_tts::nn::ops::scalar;
use himuv_tts::nn::{device, ParamStore};
use himuv_tts::training::optim::collect_grads;
use himuv_tts::training::{discriminator_loss, unpad_mels, AdamState, Checkpoint, Trainer};
use himuv_tts::{toy, Error, SamplingMode, SamplingSpec, TrainingConfig};

fn small_config() -> TrainingConfig {
    TrainingConfig {
        adversarial: false,
        total_steps: 400,
        warmup_steps: 20,
        kl_ramp_start: 50,
        kl_ramp_end: 300,
        d_model: 16,
        ff_hidden: 32,
        predictor_hidden: 16,
        predictor_layers: 1,
        d_enc: 16,
        enc_gru_hidden: 8,
        disc_channels: 4,
        ..TrainingConfig::desk()
    }
}

fn toy_data(c: &TrainingConfig) -> (FeatureCache, Vec<TrainingExample>) {
    let cache = toy::toy_cache(c);
    let vocab = cache.vocabulary();
    let stats = cache.pitch_stats().clone();
    let examples = cache
        .utterances
        .iter()
        .map(|u| TrainingExample::from_cached(u, &vocab, &stats).unwrap())
        .collect();
    (cache, examples)
}

fn build(variant: Variant, c: &TrainingConfig) -> (TtsModel, Vec<TrainingExample>) {
    let (cache, examples) = toy_data(c);
    let model = TtsModel::build(variant, c, cache.vocabulary(), cache.pitch_stats().clone()).unwrap();
    (model, examples)
}

/// A briefly trained model whose predicted durations are non-degenerate.
fn trained() -> &'static Checkpoint {
    static CKPT: OnceLock<Checkpoint> = OnceLock::new();
    CKPT.get_or_init(|| {
        let c = small_config();
        let (model, examples) = build(Variant::Himuv, &c);
        let mut t = Trainer::new(model, examples).unwrap();
        for _ in 0..300 {
            t.step().unwrap();
        }
        t.checkpoint().unwrap()
    })
}

fn ids_of(model: &TtsModel, i: usize) -> Vec<u32> {
    let cache = toy::toy_cache(&model.config);
    model.vocab.encode(&cache.utterances[i].phonemes).unwrap()
}

fn encode(model: &TtsModel, ids: &[u32]) -> Tensor {
    let n = ids.len();
    let t = Tensor::from_slice(ids, (1, n), &device()).unwrap();
    let mask = Tensor::ones((1, n), DType::F64, &device()).unwrap();
    model.encode_text(&t, &mask).unwrap()
}

fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    t.squeeze(0).unwrap().to_vec2::<f64>().unwrap()
}

#[test]
fn text_encoder_shapes_determinism_and_global_context() {
    let (model, _) = build(Variant::Himuv, &small_config());
    let ids = [1u32, 2, 3, 4, 5, 0, 2];
    let h = encode(&model, &ids);
    assert_eq!(h.dims(), [1, 7, 16]);
    assert_eq!(rows(&h), rows(&encode(&model, &ids)));

    let longer = [3u32, 1, 2, 3, 4, 5, 0, 2];
    let h2 = rows(&encode(&model, &longer));
    assert_ne!(rows(&h)[6], h2[7]);

    assert_eq!(encode(&model, &[2]).dims(), [1, 1, 16]);
}

#[test]
fn pitch_embedding_constant_and_zero_inputs() {
    let mut ps = ParamStore::new(4);
    let emb = PitchEmbedding::new(&mut ps, "p", 8).unwrap();
    let mask = Tensor::ones((1, 6), DType::F64, &device()).unwrap();
    let out = rows(&emb.forward(&Tensor::full(0.7f64, (1, 6), &device()).unwrap(), &mask).unwrap());
    for r in &out[2..5] {
        assert_eq!(r, &out[1]);
    }
    assert_ne!(out[0], out[1]);
    assert_ne!(out[5], out[4]);

    let zero = rows(&emb.forward(&Tensor::zeros((1, 6), DType::F64, &device()).unwrap(), &mask).unwrap());
    assert!(zero.iter().flatten().all(|&v| v == 0.0));

    let one = Tensor::ones((1, 1), DType::F64, &device()).unwrap();
    assert_eq!(emb.forward(&one, &one).unwrap().dims(), [1, 1, 8]);
}

#[test]
fn predictors_are_not_shift_invariant() {
    let (model, _) = build(Variant::Backbone, &small_config());
    let ids = [1u32, 2, 3, 4, 5];
    let h = encode(&model, &ids);
    let mask = Tensor::ones((1, 5), DType::F64, &device()).unwrap();
    let (d, p) = model.predict_prosody(&h, None, &mask).unwrap();
    assert_eq!(d.dims(), [1, 5]);
    assert_eq!(p.dims(), [1, 5]);
    let (d2, p2) = model.predict_prosody(&(&h + 0.5).unwrap(), None, &mask).unwrap();
    assert_ne!(d.to_vec2::<f64>().unwrap(), d2.to_vec2::<f64>().unwrap());
    assert_ne!(p.to_vec2::<f64>().unwrap(), p2.to_vec2::<f64>().unwrap());
}

#[test]
fn latent_shapes_identity_and_attention_normalization() {
    let c = small_config();
    let (model, examples) = build(Variant::Himuv, &c);
    let refs: Vec<&TrainingExample> = examples.iter().take(3).collect();
    let batch = Batch::collate(&refs).unwrap();
    let out = model.forward_train(&batch, &LatentNoise::default()).unwrap();
    let g = out.global.as_ref().unwrap();
    let l = out.local.as_ref().unwrap();
    assert_eq!(g.z.dims(), [3, 32]);
    let n = batch.ids.dim(1).unwrap();
    assert_eq!(l.z.dims(), [3, n, 16]);
    assert_eq!(g.z.to_vec2::<f64>().unwrap(), g.mu.to_vec2::<f64>().unwrap());
    assert_eq!(l.z.flatten_all().unwrap().to_vec1::<f64>().unwrap(), l.mu.flatten_all().unwrap().to_vec1::<f64>().unwrap());

    let sums = l.attention.sum(3).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap();
    assert!(sums.iter().all(|s| (s - 1.0).abs() < 1e-12));
}

#[test]
fn reparameterized_mean_approaches_mu() {
    let draws = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let eps: Vec<f64> = (0..draws).map(|_| StandardNormal.sample(&mut rng)).collect();
    let eps = Tensor::from_vec(eps, draws, &device()).unwrap();
    let mu = Tensor::full(0.3f64, draws, &device()).unwrap();
    let sigma = Tensor::full(1.7f64, draws, &device()).unwrap();
    let z = reparameterize(&mu, &sigma, &eps).unwrap();
    let mean = scalar(&z.mean_all().unwrap()).unwrap();
    let se = 1.7 / (draws as f64).sqrt();
    assert!((mean - 0.3).abs() < 3.0 * se, "mean {mean}");
}

#[test]
fn baseline_variants_log_and_store_only_their_parts() {
    let c = small_config();
    let (backbone, examples) = build(Variant::Backbone, &c);
    let mut t = Trainer::new(backbone, examples.clone()).unwrap();
    for _ in 0..3 {
        let m = t.step().unwrap();
        assert_eq!((m.l_kl_g, m.l_kl_l, m.l_post), (0.0, 0.0, 0.0));
    }
    assert!(t.model.params.names().all(|n| !n.starts_with("prosody.") && !n.starts_with("disc")));

    let (lvae, _) = build(Variant::Lvae, &c);
    assert!(lvae.params.names().all(|n| !n.starts_with("prosody.global")));
    assert!(lvae.params.names().any(|n| n.starts_with("prosody.local")));
    let (gvae, _) = build(Variant::Gvae, &c);
    assert!(gvae.params.names().all(|n| !n.starts_with("prosody.local") && !n.starts_with("prosody.posterior_mean")));

    let mut adv_config = c.clone();
    adv_config.adversarial = true;
    let (adv, _) = build(Variant::BackboneAdv, &adv_config);
    assert!(adv.params.names().any(|n| n.starts_with("disc")));
    let mut t = Trainer::new(adv, examples).unwrap();
    let m = t.step().unwrap();
    assert!(m.l_adv_d > 0.0 && m.l_adv_g > 0.0 && m.l_kl_g == 0.0);
}

#[test]
fn zero_gamma_leaves_the_predictor_untouched() {
    let mut c = small_config();
    c.gamma = 0.0;
    let (model, examples) = build(Variant::Himuv, &c);
    let before: Vec<Vec<f64>> = model
        .params
        .names()
        .filter(|n| TtsModel::is_posterior_mean_param(n))
        .map(|n| model.params.values(n).unwrap())
        .collect();
    assert!(!before.is_empty());
    let mut t = Trainer::new(model, examples).unwrap();
    for _ in 0..3 {
        t.step().unwrap();
    }
    let after: Vec<Vec<f64>> = t
        .model
        .params
        .names()
        .filter(|n| TtsModel::is_posterior_mean_param(n))
        .map(|n| t.model.params.values(n).unwrap())
        .collect();
    assert_eq!(before, after);
}

#[test]
fn logged_final_loss_is_the_weighted_sum_of_parts() {
    let mut c = small_config();
    c.adversarial = true;
    c.kl_ramp_start = 0;
    c.kl_ramp_end = 2;
    c.beta_g_max = 0.1;
    c.beta_l_max = 0.1;
    let (model, examples) = build(Variant::Himuv, &c);
    let mut t = Trainer::new(model, examples).unwrap();
    for _ in 0..5 {
        let m = t.step().unwrap();
        let r = m.recombined(c.gamma, c.delta);
        assert!((r - m.l_final).abs() <= 1e-6 * m.l_final.abs(), "{r} vs {}", m.l_final);
    }
}

#[test]
fn resumed_training_replays_the_uninterrupted_run() {
    let mut c = small_config();
    c.adversarial = true;
    let (model, examples) = build(Variant::Himuv, &c);
    let mut straight = Trainer::new(model, examples.clone()).unwrap();
    let full: Vec<u64> = (0..6).map(|_| straight.step().unwrap().l_final.to_bits()).collect();

    let (model, _) = build(Variant::Himuv, &c);
    let mut first = Trainer::new(model, examples.clone()).unwrap();
    let mut trace: Vec<u64> = (0..3).map(|_| first.step().unwrap().l_final.to_bits()).collect();
    let bytes = first.checkpoint().unwrap().encode().unwrap();
    let mut second = Trainer::from_checkpoint(Checkpoint::decode(&bytes).unwrap(), examples).unwrap();
    trace.extend((0..3).map(|_| second.step().unwrap().l_final.to_bits()));
    assert_eq!(full, trace);
}

#[test]
fn discriminator_separates_frozen_fakes() {
    let mut c = small_config();
    c.adversarial = true;
    c.disc_channels = 8;
    let (model, _) = build(Variant::BackboneAdv, &c);
    let disc = model.discriminator().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut mel = |offset: f64| {
        let data: Vec<f64> = (0..24 * 80).map(|_| { let e: f64 = StandardNormal.sample(&mut rng); offset + 0.1 * e }).collect();
        Tensor::from_vec(data, (24, 80), &device()).unwrap()
    };
    let real: Vec<Tensor> = (0..4).map(|_| mel(1.0)).collect();
    let fake: Vec<Tensor> = (0..4).map(|_| mel(-1.0)).collect();
    let mut opt = AdamState::default();
    let mut loss = f64::INFINITY;
    for step in 0..500 {
        let l = discriminator_loss(disc, &real, &fake).unwrap();
        loss = scalar(&l).unwrap();
        if loss < 0.1 {
            break;
        }
        let grads = collect_grads(&model.params, &l.backward().unwrap(), TtsModel::is_discriminator_param).unwrap();
        opt.step(&model.params, grads, 1e-3, &c).unwrap();
        assert!(step < 499);
    }
    assert!(loss < 0.1, "adv_loss_d stuck at {loss}");
    let ideal = adv_loss_d(&Tensor::ones(3, DType::F64, &device()).unwrap(), &Tensor::zeros(3, DType::F64, &device()).unwrap());
    assert_eq!(scalar(&ideal.unwrap()).unwrap(), 0.0);
}

#[test]
fn unpadding_recovers_each_utterance() {
    let (_, examples) = toy_data(&small_config());
    let refs: Vec<&TrainingExample> = examples.iter().collect();
    let batch = Batch::collate(&refs).unwrap();
    let parts = unpad_mels(&batch.mel, &batch.frame_lens).unwrap();
    for (p, ex) in parts.iter().zip(&examples) {
        let got = Array2::from_shape_vec((ex.n_frames(), 80), p.flatten_all().unwrap().to_vec1::<f64>().unwrap()).unwrap();
        assert_eq!(got, ex.mel);
    }
}

#[test]
fn zero_temperature_synthesis_is_deterministic_and_length_consistent() {
    let model = trained().to_model().unwrap();
    let ids = ids_of(&model, 0);
    let spec = SamplingSpec::new(SamplingMode::Full, 0.0, 3);
    let a = synthesize(&model, &ids, &spec).unwrap();
    let b = synthesize(&model, &ids, &SamplingSpec::new(SamplingMode::Full, 0.0, 99)).unwrap();
    assert_eq!(a.mel.frames, b.mel.frames);
    let frames: u32 = a.durations.iter().sum();
    assert_eq!(a.mel.n_frames(), frames as usize);
    assert_eq!(a.audit.z_g.as_ref().unwrap(), &vec![0.0; 32]);
    assert_eq!(a.audit.z_l, a.audit.mu_hat);
}

#[test]
fn unit_temperature_seeds_give_different_mels() {
    let model = trained().to_model().unwrap();
    let ids = ids_of(&model, 1);
    for k in 0..5u64 {
        let a = synthesize(&model, &ids, &SamplingSpec::new(SamplingMode::LocalOnly, 1.0, 2 * k));
        let b = synthesize(&model, &ids, &SamplingSpec::new(SamplingMode::LocalOnly, 1.0, 2 * k + 1));
        assert_ne!(a.unwrap().mel.frames, b.unwrap().mel.frames);
    }
}

#[test]
fn mode_records_are_literal() {
    let model = trained().to_model().unwrap();
    let h = encode(&model, &ids_of(&model, 2));
    let (_, g1) = sample_prior(&model, &h, &SamplingSpec::new(SamplingMode::GlobalOnly, 1.0, 1)).unwrap();
    let (_, g2) = sample_prior(&model, &h, &SamplingSpec::new(SamplingMode::GlobalOnly, 1.0, 2)).unwrap();
    assert_eq!(g1.z_l, g2.z_l);
    assert_ne!(g1.z_g, g2.z_g);
    let (_, l1) = sample_prior(&model, &h, &SamplingSpec::new(SamplingMode::LocalOnly, 1.0, 1)).unwrap();
    let (_, l2) = sample_prior(&model, &h, &SamplingSpec::new(SamplingMode::LocalOnly, 1.0, 2)).unwrap();
    assert_eq!(l1.z_g, l2.z_g);
    assert_ne!(l1.z_l, l2.z_l);
}

#[test]
fn checkpoint_round_trip_and_version_guard() {
    let ck = trained();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    ck.save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    assert_eq!(loaded.config, small_config());
    let (a, b) = (ck.to_model().unwrap(), loaded.to_model().unwrap());
    let ids = ids_of(&a, 3);
    let spec = SamplingSpec::new(SamplingMode::Full, 0.0, 0);
    assert_eq!(synthesize(&a, &ids, &spec).unwrap().mel.frames, synthesize(&b, &ids, &spec).unwrap().mel.frames);

    let mut bytes = std::fs::read(&path).unwrap();
    bytes[8] = bytes[8].wrapping_add(1);
    assert!(matches!(Checkpoint::decode(&bytes), Err(Error::CheckpointVersion { .. })));
}

#[test]
fn synthesis_rejects_bad_input() {
    let model = trained().to_model().unwrap();
    let spec = SamplingSpec::new(SamplingMode::Full, 0.0, 0);
    assert!(matches!(synthesize(&model, &[], &spec), Err(Error::InvalidArgument(_))));
    let bad = model.vocab.len() as u32;
    assert!(matches!(synthesize(&model, &[bad], &spec), Err(Error::Vocabulary { .. })));
}

proptest! {
    #[test]
    fn length_regulator_row_count_is_duration_sum(d in prop::collection::vec(0u32..6, 1..10)) {
        let n = d.len();
        let x = Tensor::arange(0f64, (n * 3) as f64, &device()).unwrap().reshape((n, 3)).unwrap();
        let out = length_regulate_rows(&x, &d).unwrap();
        prop_assert_eq!(out.dim(0).unwrap(), d.iter().sum::<u32>() as usize);
        let (_, mask) = length_regulate(&x.unsqueeze(0).unwrap(), std::slice::from_ref(&d)).unwrap();
        prop_assert_eq!(scalar(&mask.sum_all().unwrap()).unwrap() as u32, d.iter().sum::<u32>());
    }

    #[test]
    fn kl_is_non_negative(mu in -4.0..4.0f64, sigma in 0.05..5.0f64) {
        let kl = kl_standard_normal(&Tensor::new(&[mu], &device()).unwrap(), &Tensor::new(&[sigma], &device()).unwrap()).unwrap();
        prop_assert!(scalar(&kl).unwrap() >= 0.0);
    }

    #[test]
    fn rounded_durations_invert_log_targets(d in prop::collection::vec(0u32..40, 1..12)) {
        let logs: Vec<f64> = d.iter().map(|&x| (1.0 + x as f64).ln()).collect();
        prop_assert_eq!(durations_from_log(&logs), d);
    }
}
