mod common;

use fsec_core::baselines::Prediction;
use fsec_core::corpus::Corpus;
use fsec_core::encoder::{
    checkpoint, combined_loss, episode_loss_ce, predict, reconstruction_loss, EncoderParams,
    LossWeights,
};
use fsec_core::sampling::{MetaTask, Sampler, SamplerConfig, SamplingMethod};
use fsec_core::synthetic::{separable_fixture, skewed_corpus, SkewedCorpusConfig};
use fsec_core::train::{
    evaluate, initial_params, train, train_from, EvalConfig, Model, TrainConfig,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn overfit_config(beta: f64) -> TrainConfig {
    TrainConfig {
        n_way: 2,
        k_shot: 1,
        lr: 1e-3,
        episodes_per_epoch: 200,
        max_epochs: 1,
        dev_tasks: 10,
        alpha: 1.0,
        beta,
        seed: 7,
        ..Default::default()
    }
}

fn probe_tasks(corpus: &Corpus) -> Vec<MetaTask> {
    let cfg = SamplerConfig {
        n_way: 2,
        k_shot: 1,
        seed: 999,
        ..Default::default()
    };
    let sampler = Sampler::new(corpus, cfg, None).unwrap();
    (0..50).map(|i| sampler.task(i).unwrap()).collect()
}

fn mean_losses(params: &EncoderParams, corpus: &Corpus, tasks: &[MetaTask]) -> (f64, f64) {
    let (mut ce, mut rec) = (0.0, 0.0);
    for t in tasks {
        let episode = t.resolve(corpus);
        ce += episode_loss_ce(params, &episode).unwrap().loss;
        rec += reconstruction_loss(params, &episode).unwrap().loss;
    }
    (ce / tasks.len() as f64, rec / tasks.len() as f64)
}

#[test]
fn separable_fixture_is_fit_within_200_episodes() {
    let corpus = separable_fixture();
    let tasks = probe_tasks(&corpus);

    let cfg = overfit_config(0.0);
    let init = initial_params(&corpus, &corpus, None, &cfg).unwrap();
    let out = train_from(init, &corpus, &corpus, None, &cfg).unwrap();
    assert_eq!(out.episode_losses.len(), 200);
    let (ce, _) = mean_losses(&out.params, &corpus, &tasks);
    assert!(ce < 0.05, "l_ce {ce}");

    let cfg = overfit_config(0.1);
    let init = initial_params(&corpus, &corpus, None, &cfg).unwrap();
    let (_, rec_before) = mean_losses(&init, &corpus, &tasks);
    let out = train_from(init, &corpus, &corpus, None, &cfg).unwrap();
    let (ce, rec_after) = mean_losses(&out.params, &corpus, &tasks);
    assert!(ce < 0.05, "l_ce {ce}");
    assert!(
        rec_after <= 0.5 * rec_before,
        "l_rec {rec_before} -> {rec_after}"
    );
}

#[test]
fn zero_learning_rate_returns_initial_parameters() {
    let corpus = separable_fixture();
    let cfg = TrainConfig {
        lr: 0.0,
        episodes_per_epoch: 20,
        ..overfit_config(0.1)
    };
    let init = initial_params(&corpus, &corpus, None, &cfg).unwrap();
    let out = train_from(init.clone(), &corpus, &corpus, None, &cfg).unwrap();
    assert_eq!(out.params, init);
}

fn small_training_setup() -> (Corpus, Corpus, TrainConfig) {
    let corpus = |seed| {
        skewed_corpus(&SkewedCorpusConfig {
            n_events: 6,
            instances_per_event: 20,
            rare_triggers: 3,
            seed,
            ..Default::default()
        })
        .unwrap()
    };
    let cfg = TrainConfig {
        n_way: 3,
        k_shot: 2,
        lr: 1e-3,
        episodes_per_epoch: 15,
        max_epochs: 3,
        dev_tasks: 20,
        patience: 1,
        encoder: common::tiny_config(),
        ..Default::default()
    };
    (corpus(1), corpus(2), cfg)
}

#[test]
fn training_is_deterministic() {
    let (train_c, dev_c, cfg) = small_training_setup();
    let a = train(&train_c, &dev_c, None, &cfg).unwrap();
    let b = train(&train_c, &dev_c, None, &cfg).unwrap();
    assert_eq!(a.params, b.params);
    assert_eq!(a.history, b.history);
    let mut x = Vec::new();
    let mut y = Vec::new();
    checkpoint::write_checkpoint(&mut x, &a.params, None).unwrap();
    checkpoint::write_checkpoint(&mut y, &b.params, None).unwrap();
    assert_eq!(x, y);
    assert!(a.history.len() <= 3 && !a.history.is_empty());
    assert!(a.best_epoch < a.history.len());
}

#[test]
fn early_stopping_keeps_the_best_epoch() {
    let (train_c, dev_c, cfg) = small_training_setup();
    let out = train(&train_c, &dev_c, None, &cfg).unwrap();
    let best = out
        .history
        .iter()
        .map(|h| h.dev_accuracy)
        .fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(out.best_dev_accuracy, best);
    assert_eq!(out.history[out.best_epoch].dev_accuracy, best);
}

#[test]
fn evaluation_does_not_mutate_inputs() {
    let (train_c, dev_c, cfg) = small_training_setup();
    let params = initial_params(&train_c, &dev_c, None, &cfg).unwrap();
    let params_before = params.clone();
    let corpus_before = dev_c.clone();
    let eval = EvalConfig {
        sampler: SamplerConfig {
            n_way: 3,
            k_shot: 2,
            method: SamplingMethod::Tus,
            ..Default::default()
        },
        n_tasks: 200,
        seeds: vec![1, 2],
        workers: 3,
    };
    let a = evaluate(&Model::Encoder(&params), &dev_c, None, &eval).unwrap();
    assert_eq!(params, params_before);
    assert_eq!(dev_c, corpus_before);
    let b = evaluate(
        &Model::Encoder(&params),
        &dev_c,
        None,
        &EvalConfig { workers: 1, ..eval },
    )
    .unwrap();
    assert_eq!(a, b);
}

#[test]
fn losses_ignore_order_within_support_rows() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..10 {
        let (corpus, mut task, params) = common::random_episode(&mut rng);
        let weights = LossWeights::default();
        let (before, _) = combined_loss(&params, &task.resolve(&corpus), &weights).unwrap();
        for row in &mut task.support {
            row.reverse();
        }
        let (after, _) = combined_loss(&params, &task.resolve(&corpus), &weights).unwrap();
        assert!((before.l_ce - after.l_ce).abs() < 1e-12);
        assert!((before.l_adv - after.l_adv).abs() < 1e-12);
        assert!((before.l_rec - after.l_rec).abs() < 1e-12);
    }
}

#[test]
fn classifier_probabilities_sum_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    for _ in 0..20 {
        let (corpus, task, params) = common::random_episode(&mut rng);
        let episode = task.resolve(&corpus);
        let Prediction { probabilities, .. } = predict(&params, &episode).unwrap();
        let sum: f64 = probabilities.unwrap().iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
        let sum: f64 = episode_loss_ce(&params, &episode)
            .unwrap()
            .probabilities
            .iter()
            .sum();
        assert!((sum - 1.0).abs() < 1e-9);
    }
}

#[test]
fn checkpoint_survives_a_file_round_trip() {
    let (train_c, dev_c, cfg) = small_training_setup();
    let params = initial_params(&train_c, &dev_c, None, &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    checkpoint::save(&path, &params, Some(serde_json::to_value(&cfg).unwrap())).unwrap();
    assert!(checkpoint::is_checkpoint(&path));
    let (loaded, meta) = checkpoint::load(&path).unwrap();
    assert_eq!(loaded, params);
    let restored: TrainConfig = serde_json::from_value(meta.unwrap()).unwrap();
    assert_eq!(restored, cfg);
}
