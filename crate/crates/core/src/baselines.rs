//! Prototype math and the two context-free baselines.
//!
//! String Match and GloVe Match look at nothing but the trigger words, which
//! makes them a direct probe of how much an episode can be solved without
//! reading the sentence.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::embeddings::{l2, EmbeddingTable};
use crate::error::{Error, Result};
use crate::sampling::MetaTask;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label_index: usize,
    pub probabilities: Option<Vec<f64>>,
}

/// Elementwise mean of the representations.
pub fn prototype<V: AsRef<[f64]>>(representations: &[V]) -> Result<Vec<f64>> {
    let first = representations
        .first()
        .ok_or(Error::EmptyInput("prototype of no representations"))?
        .as_ref();
    let mut sum = vec![0.0; first.len()];
    for rep in representations {
        let rep = rep.as_ref();
        if rep.len() != sum.len() {
            return Err(Error::DimensionMismatch {
                left: rep.len(),
                right: sum.len(),
            });
        }
        for (s, x) in sum.iter_mut().zip(rep) {
            *s += x;
        }
    }
    let k = representations.len() as f64;
    sum.iter_mut().for_each(|s| *s /= k);
    Ok(sum)
}

/// Max-shifted softmax over `-distances`.
pub fn softmax_neg(distances: &[f64]) -> Vec<f64> {
    let best = distances.iter().copied().fold(f64::INFINITY, f64::min);
    let exps: Vec<f64> = distances.iter().map(|d| (best - d).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `p_k ∝ exp(-‖query - c_k‖₂)`.
pub fn proto_probabilities<V: AsRef<[f64]>>(query: &[f64], prototypes: &[V]) -> Result<Vec<f64>> {
    if prototypes.is_empty() {
        return Err(Error::EmptyInput("no prototypes"));
    }
    let distances = prototypes
        .iter()
        .map(|c| {
            let c = c.as_ref();
            if c.len() != query.len() {
                Err(Error::DimensionMismatch {
                    left: query.len(),
                    right: c.len(),
                })
            } else {
                Ok(l2(query, c))
            }
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(softmax_neg(&distances))
}

/// Index of the largest value; exact ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Predicts an event whose support row shares the query's trigger form,
/// uniformly among such events, or uniformly among all N if none does.
pub fn string_match_predict<R: Rng + ?Sized>(
    corpus: &Corpus,
    task: &MetaTask,
    rng: &mut R,
) -> Prediction {
    let query = corpus.trigger_form(task.query);
    let overlapping: Vec<usize> = task
        .support
        .iter()
        .enumerate()
        .filter(|(_, row)| row.iter().any(|&i| corpus.trigger_form(i) == query))
        .map(|(k, _)| k)
        .collect();
    let label_index = if overlapping.is_empty() {
        rng.gen_range(0..task.n_way())
    } else {
        overlapping[rng.gen_range(0..overlapping.len())]
    };
    Prediction {
        label_index,
        probabilities: None,
    }
}

/// Prototypical classification over trigger embeddings only.
pub fn glove_match_predict(
    corpus: &Corpus,
    task: &MetaTask,
    table: &EmbeddingTable,
) -> Result<Prediction> {
    let prototypes = task
        .support
        .iter()
        .map(|row| {
            let reps: Vec<&[f64]> = row
                .iter()
                .map(|&i| table.lookup(corpus.trigger_form(i)))
                .collect();
            prototype(&reps)
        })
        .collect::<Result<Vec<_>>>()?;
    let query = table.lookup(corpus.trigger_form(task.query));
    let probabilities = proto_probabilities(query, &prototypes)?;
    Ok(Prediction {
        label_index: argmax(&probabilities),
        probabilities: Some(probabilities),
    })
}
