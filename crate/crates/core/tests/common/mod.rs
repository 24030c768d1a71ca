#![allow(dead_code)]

use fsec_core::corpus::{Corpus, Instance};
use fsec_core::encoder::{EncoderConfig, EncoderParams, Vocab};
use fsec_core::sampling::MetaTask;
use rand::Rng;

pub const WORDS: [&str; 8] = ["a", "b", "c", "d", "e", "f", "g", "h"];

pub fn tiny_config() -> EncoderConfig {
    EncoderConfig {
        word_dim: 4,
        pos_dim: 2,
        filters: 4,
        window: 3,
        max_len: 6,
        max_vocab: 100,
        init_range: 0.5,
    }
}

pub fn random_instance<R: Rng>(rng: &mut R, event: &str) -> Instance {
    let len = rng.gen_range(1..=5);
    let tokens = (0..len)
        .map(|_| WORDS[rng.gen_range(0..WORDS.len())].to_string())
        .collect();
    Instance::new(tokens, rng.gen_range(0..len), event).unwrap()
}

/// A random episode over a fresh corpus, with random parameters.
pub fn random_episode<R: Rng>(rng: &mut R) -> (Corpus, MetaTask, EncoderParams) {
    let n = rng.gen_range(2..=3);
    let k = rng.gen_range(1..=2);
    let mut instances = Vec::new();
    let mut support = Vec::new();
    for e in 0..n {
        let mut row = Vec::new();
        for _ in 0..k {
            row.push(instances.len());
            instances.push(random_instance(rng, &format!("E{e}")));
        }
        support.push(row);
    }
    let gold = rng.gen_range(0..n);
    let query = instances.len();
    instances.push(random_instance(rng, &format!("E{gold}")));
    let corpus = Corpus::new(instances).unwrap();
    let task = MetaTask {
        event_types: (0..n).map(|e| format!("E{e}")).collect(),
        support,
        query,
        gold_index: gold,
    };
    // Leave one word out of the vocabulary so the OOV row is exercised too.
    let vocab = Vocab::from_tokens(WORDS[..7].iter().copied());
    let params = EncoderParams::init(tiny_config(), vocab, None, rng.gen()).unwrap();
    (corpus, task, params)
}

/// Smallest kink margin over the episode instances, clean and masked, and
/// under the given trigger perturbations.
pub fn episode_margin(
    params: &EncoderParams,
    corpus: &Corpus,
    task: &MetaTask,
    deltas: Option<&[Vec<f64>]>,
) -> f64 {
    use fsec_core::encoder::gradcheck::kink_margin;
    let episode = task.resolve(corpus);
    episode
        .instances()
        .enumerate()
        .map(|(i, inst)| {
            let d = deltas.map(|d| d[i].as_slice());
            kink_margin(params, inst, false, d).min(kink_margin(params, inst, true, None))
        })
        .fold(f64::INFINITY, f64::min)
}

/// Smallest of: query-to-prototype distance, and distance between two prototypes.
pub fn prototype_margin(params: &EncoderParams, corpus: &Corpus, task: &MetaTask) -> f64 {
    use fsec_core::baselines::prototype;
    use fsec_core::encoder::encode;
    let episode = task.resolve(corpus);
    let rep = |i| encode(params, i, false).unwrap().repr;
    let protos: Vec<Vec<f64>> = episode
        .support
        .iter()
        .map(|row| prototype(&row.iter().map(|i| rep(i)).collect::<Vec<_>>()).unwrap())
        .collect();
    let query = rep(episode.query);
    let dist = |a: &[f64], b: &[f64]| {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    };
    let mut margin = f64::INFINITY;
    for (i, p) in protos.iter().enumerate() {
        margin = margin.min(dist(p, &query));
        for q in &protos[i + 1..] {
            margin = margin.min(dist(p, q));
        }
    }
    margin
}
