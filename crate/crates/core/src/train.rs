//! Episodic training with early stopping, and the multi-seed evaluation protocol.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{glove_match_predict, string_match_predict, Prediction};
use crate::corpus::Corpus;
use crate::embeddings::EmbeddingTable;
use crate::encoder::{
    self, combined_loss, EncoderConfig, EncoderParams, EpisodeLoss, LossWeights, Tensors, Vocab,
};
use crate::error::{Error, Result};
use crate::sampling::{task_rng, MetaTask, Sampler, SamplerConfig, SamplingMethod};
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub n_way: usize,
    pub k_shot: usize,
    pub train_method: SamplingMethod,
    pub lr: f64,
    pub episodes_per_epoch: usize,
    pub patience: usize,
    pub max_epochs: usize,
    /// IUS tasks used for the dev check after each epoch.
    pub dev_tasks: usize,
    pub alpha: f64,
    pub beta: f64,
    pub eps: f64,
    pub adv_scope: encoder::AdvScope,
    pub cos_p: f64,
    pub cos_u: usize,
    pub seed: u64,
    pub adam: AdamConfig,
    pub encoder: EncoderConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            n_way: 5,
            k_shot: 5,
            train_method: SamplingMethod::Ius,
            lr: 1e-4,
            episodes_per_epoch: 1000,
            patience: 3,
            max_epochs: 100,
            dev_tasks: 1000,
            alpha: 1.0,
            beta: 0.1,
            eps: 0.5,
            adv_scope: encoder::AdvScope::All,
            cos_p: 1.0,
            cos_u: 6,
            seed: 42,
            adam: AdamConfig::default(),
            encoder: EncoderConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patience == 0 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        if self.lr.is_nan() || self.lr < 0.0 {
            return Err(Error::Config("lr must be non-negative".into()));
        }
        if self.episodes_per_epoch == 0 || self.max_epochs == 0 || self.dev_tasks == 0 {
            return Err(Error::Config(
                "episodes_per_epoch, max_epochs and dev_tasks must be positive".into(),
            ));
        }
        if self.alpha < 0.0 || self.beta < 0.0 || self.eps < 0.0 {
            return Err(Error::Config(
                "alpha, beta and eps must be non-negative".into(),
            ));
        }
        Ok(())
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            alpha: self.alpha,
            beta: self.beta,
            eps: self.eps,
            adv_scope: self.adv_scope,
        }
    }

    fn sampler_config(&self, method: SamplingMethod, seed: u64) -> SamplerConfig {
        SamplerConfig {
            n_way: self.n_way,
            k_shot: self.k_shot,
            method,
            cos_p: self.cos_p,
            cos_u: self.cos_u,
            cos_query_confusing: true,
            seed,
        }
    }
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    cfg: AdamConfig,
    lr: f64,
    step: i32,
    m: Tensors,
    v: Tensors,
}

impl Adam {
    pub fn new(params: &Tensors, lr: f64, cfg: AdamConfig) -> Self {
        Self {
            cfg,
            lr,
            step: 0,
            m: Tensors::zeros_like(params),
            v: Tensors::zeros_like(params),
        }
    }

    pub fn step(&mut self, params: &mut Tensors, grads: &Tensors) {
        self.step += 1;
        let AdamConfig {
            beta1,
            beta2,
            epsilon,
        } = self.cfg;
        let c1 = 1.0 - beta1.powi(self.step);
        let c2 = 1.0 - beta2.powi(self.step);
        let layers = params
            .iter_mut()
            .zip(grads.iter())
            .zip(self.m.iter_mut().zip(self.v.iter_mut()));
        for (((_, p), (_, g)), ((_, m), (_, v))) in layers {
            let p = p.data_mut();
            let m = m.data_mut();
            let v = v.data_mut();
            for (i, &gi) in g.data().iter().enumerate() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= self.lr * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_l_ce: f64,
    pub mean_l_adv: f64,
    pub mean_l_rec: f64,
    pub mean_total: f64,
    pub dev_accuracy: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters of the best dev epoch.
    pub params: EncoderParams,
    pub best_epoch: usize,
    pub best_dev_accuracy: f64,
    pub history: Vec<EpochRecord>,
    pub episode_losses: Vec<EpisodeLoss>,
}

/// Fresh parameters for training: vocabulary over the train and dev corpora.
pub fn initial_params(
    train_corpus: &Corpus,
    dev_corpus: &Corpus,
    table: Option<&EmbeddingTable>,
    cfg: &TrainConfig,
) -> Result<EncoderParams> {
    let vocab = Vocab::build([train_corpus, dev_corpus], cfg.encoder.max_vocab);
    EncoderParams::init(cfg.encoder.clone(), vocab, table, cfg.seed)
}

/// Trains from [`initial_params`].
pub fn train(
    train_corpus: &Corpus,
    dev_corpus: &Corpus,
    table: Option<&EmbeddingTable>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    let params = initial_params(train_corpus, dev_corpus, table, cfg)?;
    train_from(params, train_corpus, dev_corpus, table, cfg)
}

/// Trains the given parameters. Episode `i` of epoch `e` is task number
/// `e · episodes_per_epoch + i` of the training seed, so any episode can be
/// replayed from the seed and its stream number.
pub fn train_from(
    mut params: EncoderParams,
    train_corpus: &Corpus,
    dev_corpus: &Corpus,
    table: Option<&EmbeddingTable>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let sampler = Sampler::new(
        train_corpus,
        cfg.sampler_config(cfg.train_method, cfg.seed),
        table,
    )?;
    let dev_cfg = EvalConfig {
        sampler: cfg.sampler_config(SamplingMethod::Ius, 0),
        n_tasks: cfg.dev_tasks,
        seeds: vec![cfg.seed],
        workers: 1,
    };
    let weights = cfg.weights();
    let mut adam = Adam::new(&params.tensors, cfg.lr, cfg.adam);

    let mut best: Option<(f64, usize, EncoderParams)> = None;
    let mut since_best = 0;
    let mut history = Vec::new();
    let mut episode_losses = Vec::new();
    for epoch in 0..cfg.max_epochs {
        let mut sums = [0.0; 4];
        for i in 0..cfg.episodes_per_epoch {
            let stream = (epoch * cfg.episodes_per_epoch + i) as u64;
            let task = sampler.task(stream)?;
            let episode = task.resolve(train_corpus);
            let non_finite = || Error::NonFiniteLoss {
                epoch,
                episode: i,
                seed: cfg.seed,
                stream,
            };
            let (loss, grads) =
                combined_loss(&params, &episode, &weights).map_err(|e| match e {
                    Error::NumericalOverflow => non_finite(),
                    other => other,
                })?;
            if !loss.total.is_finite() || !grads.is_finite() {
                return Err(non_finite());
            }
            adam.step(&mut params.tensors, &grads);
            for (s, v) in sums
                .iter_mut()
                .zip([loss.l_ce, loss.l_adv, loss.l_rec, loss.total])
            {
                *s += v;
            }
            episode_losses.push(loss);
        }
        let report = evaluate(&Model::Encoder(&params), dev_corpus, table, &dev_cfg)?;
        let n = cfg.episodes_per_epoch as f64;
        history.push(EpochRecord {
            epoch,
            mean_l_ce: sums[0] / n,
            mean_l_adv: sums[1] / n,
            mean_l_rec: sums[2] / n,
            mean_total: sums[3] / n,
            dev_accuracy: report.mean,
        });
        match &best {
            Some((acc, _, _)) if report.mean <= *acc => {
                since_best += 1;
                if since_best >= cfg.patience {
                    break;
                }
            }
            _ => {
                best = Some((report.mean, epoch, params.clone()));
                since_best = 0;
            }
        }
    }
    let (best_dev_accuracy, best_epoch, params) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        params,
        best_epoch,
        best_dev_accuracy,
        history,
        episode_losses,
    })
}

/// What to evaluate.
pub enum Model<'a> {
    StringMatch,
    GloveMatch,
    Encoder(&'a EncoderParams),
}

impl Model<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            Model::StringMatch => "string-match",
            Model::GloveMatch => "glove-match",
            Model::Encoder(_) => "proto-cnn",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    /// Sampler settings; its `seed` is replaced by each evaluation seed.
    pub sampler: SamplerConfig,
    pub n_tasks: usize,
    pub seeds: Vec<u64>,
    /// Threads for task fan-out. Results do not depend on this.
    pub workers: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub method: SamplingMethod,
    pub n_way: usize,
    pub k_shot: usize,
    pub n_tasks: usize,
    pub seeds: Vec<u64>,
    pub correct: Vec<usize>,
    pub accuracies: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation over seeds.
    pub std: f64,
}

impl EvalReport {
    /// Human-readable table (accuracies in percent, two decimals).
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "model: {}  method: {}  setting: {}-way-{}-shot  tasks/seed: {}\n",
            self.model, self.method, self.n_way, self.k_shot, self.n_tasks
        ));
        out.push_str(&format!(
            "{:>12}  {:>10}  {:>9}\n",
            "seed", "correct", "accuracy"
        ));
        for ((seed, correct), acc) in self.seeds.iter().zip(&self.correct).zip(&self.accuracies) {
            out.push_str(&format!(
                "{seed:>12}  {correct:>10}  {:>9.2}\n",
                acc * 100.0
            ));
        }
        out.push_str(&format!(
            "mean ± std: {:.2} ± {:.2}\n",
            self.mean * 100.0,
            self.std * 100.0
        ));
        out
    }
}

fn predict_task(
    model: &Model<'_>,
    corpus: &Corpus,
    table: Option<&EmbeddingTable>,
    task: &MetaTask,
    rng: &mut ChaCha8Rng,
) -> Result<usize> {
    let prediction: Prediction = match model {
        Model::StringMatch => string_match_predict(corpus, task, rng),
        Model::GloveMatch => {
            glove_match_predict(corpus, task, table.ok_or(Error::MissingEmbeddings)?)?
        }
        Model::Encoder(params) => encoder::predict(params, &task.resolve(corpus))?,
    };
    Ok(prediction.label_index)
}

/// Accuracy over `n_tasks` sampled tasks for each seed.
pub fn evaluate(
    model: &Model<'_>,
    corpus: &Corpus,
    table: Option<&EmbeddingTable>,
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    if matches!(model, Model::GloveMatch) && table.is_none() {
        return Err(Error::Config(
            "glove-match requires an embedding table".into(),
        ));
    }
    evaluate_with(model.name(), corpus, table, cfg, |task, rng| {
        predict_task(model, corpus, table, task, rng)
    })
}

/// [`evaluate`] with an arbitrary predictor. Task `i` of seed `s` is drawn
/// from `task_rng(s, i)`, and the predictor continues on the same stream.
pub fn evaluate_with<F>(
    name: &str,
    corpus: &Corpus,
    table: Option<&EmbeddingTable>,
    cfg: &EvalConfig,
    predictor: F,
) -> Result<EvalReport>
where
    F: Fn(&MetaTask, &mut ChaCha8Rng) -> Result<usize> + Sync,
{
    if cfg.seeds.is_empty() || cfg.n_tasks == 0 {
        return Err(Error::Config(
            "evaluation needs at least one seed and one task".into(),
        ));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let mut correct = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        let sampler = Sampler::new(
            corpus,
            SamplerConfig {
                seed,
                ..cfg.sampler.clone()
            },
            table,
        )?;
        let hits = pool.install(|| {
            (0..cfg.n_tasks as u64)
                .into_par_iter()
                .map(|i| {
                    let mut rng = task_rng(seed, i);
                    let task = sampler.sample(&mut rng)?;
                    Ok::<_, Error>(usize::from(predictor(&task, &mut rng)? == task.gold_index))
                })
                .try_reduce(|| 0, |a, b| Ok(a + b))
        })?;
        correct.push(hits);
    }
    let accuracies: Vec<f64> = correct
        .iter()
        .map(|&c| c as f64 / cfg.n_tasks as f64)
        .collect();
    let mean = accuracies.iter().sum::<f64>() / accuracies.len() as f64;
    let std = (accuracies
        .iter()
        .map(|a| (a - mean) * (a - mean))
        .sum::<f64>()
        / accuracies.len() as f64)
        .sqrt();
    Ok(EvalReport {
        model: name.to_string(),
        method: cfg.sampler.method,
        n_way: cfg.sampler.n_way,
        k_shot: cfg.sampler.k_shot,
        n_tasks: cfg.n_tasks,
        seeds: cfg.seeds.clone(),
        correct,
        accuracies,
        mean,
        std,
    })
}
