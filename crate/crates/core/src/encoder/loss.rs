//! Episode losses and their closed-form gradients.
//!
//! - classification: prototypes are row means of the support representations,
//!   `P(k | query) = softmax(-‖query - c_k‖₂)`, loss `-log P(gold)`;
//! - adversarial: the same loss with `δ = ε·g/‖g‖₂` added to each instance's
//!   trigger embedding, `g` being that embedding's gradient from the clean pass
//!   (`δ` is a constant for the backward pass);
//! - reconstruction: encode with the trigger masked, read the activation at the
//!   trigger position, softmax over the vocabulary, `-log P(trigger token)`
//!   averaged over the episode instances.

use serde::{Deserialize, Serialize};

use super::{EncoderParams, Matrix, Tensors};
use crate::baselines::{argmax, proto_probabilities, prototype, Prediction};
use crate::error::{Error, Result};
use crate::sampling::Episode;

/// Squared distances below this are clamped before the square root.
const DIST_FLOOR: f64 = 1e-12;
/// Gradient norms below this skip the adversarial perturbation.
const FGM_NORM_FLOOR: f64 = 1e-12;

/// A loss value with its gradient.
#[derive(Clone, Debug)]
pub struct LossGrad {
    pub loss: f64,
    pub grads: Tensors,
    /// Per-instance gradient w.r.t. the trigger word-embedding input, support
    /// row-major then query. Empty for the reconstruction loss.
    pub trigger_grads: Vec<Vec<f64>>,
    /// Class probabilities for the query (empty for reconstruction).
    pub probabilities: Vec<f64>,
}

/// Cross-entropy of the prototype classifier, with optional per-instance
/// perturbations of the trigger embeddings (same order as `trigger_grads`).
pub fn perturbed_ce_loss(
    params: &EncoderParams,
    episode: &Episode<'_>,
    deltas: Option<&[Vec<f64>]>,
) -> Result<LossGrad> {
    let n = episode.n_way();
    if n == 0 || episode.gold >= n || episode.support.iter().any(Vec::is_empty) {
        return Err(Error::Config("malformed episode".into()));
    }
    if let Some(d) = deltas {
        if d.len() != episode.len() {
            return Err(Error::DimensionMismatch {
                left: d.len(),
                right: episode.len(),
            });
        }
    }
    let preps: Vec<_> = episode
        .instances()
        .map(|i| params.prepare(i, false))
        .collect();
    let fwds: Vec<_> = preps
        .iter()
        .enumerate()
        .map(|(i, p)| params.forward(p, deltas.map(|d| d[i].as_slice())))
        .collect();

    let f_count = params.config.filters;
    let mut offsets = Vec::with_capacity(n);
    let mut prototypes = Vec::with_capacity(n);
    let mut start = 0;
    for row in &episode.support {
        offsets.push(start);
        let reps: Vec<&[f64]> = fwds[start..start + row.len()]
            .iter()
            .map(|f| f.repr.as_slice())
            .collect();
        prototypes.push(prototype(&reps)?);
        start += row.len();
    }
    let query = &fwds[start].repr;

    let sq: Vec<f64> = prototypes
        .iter()
        .map(|c| query.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum())
        .collect();
    let dist: Vec<f64> = sq.iter().map(|s| s.max(DIST_FLOOR).sqrt()).collect();
    let shift = dist.iter().copied().fold(f64::INFINITY, f64::min);
    let log_z = -shift + dist.iter().map(|d| (shift - d).exp()).sum::<f64>().ln();
    let loss = log_z + dist[episode.gold];
    if !loss.is_finite() {
        return Err(Error::NumericalOverflow);
    }
    let probabilities: Vec<f64> = dist.iter().map(|d| (-d - log_z).exp()).collect();

    // dL/dz = p - y with z = -d.
    let mut d_query = vec![0.0; f_count];
    let mut d_protos = vec![vec![0.0; f_count]; n];
    for k in 0..n {
        let y = if k == episode.gold { 1.0 } else { 0.0 };
        let d_dist = -(probabilities[k] - y);
        if sq[k] <= DIST_FLOOR || d_dist == 0.0 {
            continue;
        }
        let scale = d_dist / dist[k];
        for f in 0..f_count {
            let diff = query[f] - prototypes[k][f];
            d_query[f] += scale * diff;
            d_protos[k][f] -= scale * diff;
        }
    }

    let mut grads = Tensors::zeros_like(&params.tensors);
    let mut trigger_grads = Vec::with_capacity(fwds.len());
    for (i, (prep, fwd)) in preps.iter().zip(&fwds).enumerate() {
        let d_repr: Vec<f64> = if i == start {
            d_query.clone()
        } else {
            let row = offsets.iter().rposition(|&o| o <= i).expect("row offset");
            let k = episode.support[row].len() as f64;
            d_protos[row].iter().map(|g| g / k).collect()
        };
        let mut d_act = Matrix::zeros(fwd.act.rows(), f_count);
        for (f, (&pos, &g)) in fwd.argmax.iter().zip(&d_repr).enumerate() {
            d_act.data_mut()[pos * f_count + f] += g;
        }
        trigger_grads.push(params.backward(prep, fwd, &d_act, &mut grads));
    }
    Ok(LossGrad {
        loss,
        grads,
        trigger_grads,
        probabilities,
    })
}

pub fn episode_loss_ce(params: &EncoderParams, episode: &Episode<'_>) -> Result<LossGrad> {
    perturbed_ce_loss(params, episode, None)
}

/// `ε·g/‖g‖₂`, or the zero vector when `‖g‖₂ < 1e-12`.
pub fn fgm_delta(gradient: &[f64], eps: f64) -> Vec<f64> {
    let norm = gradient.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm < FGM_NORM_FLOOR {
        return vec![0.0; gradient.len()];
    }
    gradient.iter().map(|g| eps * g / norm).collect()
}

/// Which episode instances receive the adversarial perturbation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdvScope {
    #[default]
    All,
    QueryOnly,
}

/// Loss of the FGM-perturbed episode. `trigger_grads` come from
/// [`episode_loss_ce`] on the same parameters.
pub fn adversarial_loss(
    params: &EncoderParams,
    episode: &Episode<'_>,
    trigger_grads: &[Vec<f64>],
    eps: f64,
    scope: AdvScope,
) -> Result<LossGrad> {
    let last = trigger_grads.len().saturating_sub(1);
    let deltas: Vec<Vec<f64>> = trigger_grads
        .iter()
        .enumerate()
        .map(|(i, g)| match scope {
            AdvScope::QueryOnly if i != last => vec![0.0; g.len()],
            _ => fgm_delta(g, eps),
        })
        .collect();
    perturbed_ce_loss(params, episode, Some(&deltas))
}

/// Masked-trigger reconstruction loss, averaged over all episode instances.
pub fn reconstruction_loss(params: &EncoderParams, episode: &Episode<'_>) -> Result<LossGrad> {
    let f_count = params.config.filters;
    let classes = params.vocab.n_classes();
    let rec_w = &params.tensors.rec_weight;
    let rec_b = params.tensors.rec_bias.row(0);
    let count = episode.len() as f64;

    let mut grads = Tensors::zeros_like(&params.tensors);
    let mut loss = 0.0;
    for instance in episode.instances() {
        let prep = params.prepare(instance, true);
        let fwd = params.forward(&prep, None);
        let hidden = fwd.act.row(prep.trigger);

        let mut logits = rec_b.to_vec();
        for (f, h) in hidden.iter().enumerate() {
            if *h != 0.0 {
                for (l, w) in logits.iter_mut().zip(rec_w.row(f)) {
                    *l += h * w;
                }
            }
        }
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let log_z = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        loss += (log_z - logits[prep.target]) / count;

        let mut d_logits: Vec<f64> = logits.iter().map(|l| (l - log_z).exp() / count).collect();
        d_logits[prep.target] -= 1.0 / count;

        for (g, d) in grads.rec_bias.data_mut().iter_mut().zip(&d_logits) {
            *g += d;
        }
        let mut d_hidden = vec![0.0; f_count];
        for f in 0..f_count {
            let w_row = rec_w.row(f);
            d_hidden[f] = w_row.iter().zip(&d_logits).map(|(w, d)| w * d).sum();
            let h = hidden[f];
            if h != 0.0 {
                let g_row = &mut grads.rec_weight.data_mut()[f * classes..(f + 1) * classes];
                for (g, d) in g_row.iter_mut().zip(&d_logits) {
                    *g += h * d;
                }
            }
        }
        let mut d_act = Matrix::zeros(fwd.act.rows(), f_count);
        d_act.row_mut(prep.trigger).copy_from_slice(&d_hidden);
        params.backward(&prep, &fwd, &d_act, &mut grads);
    }
    if !loss.is_finite() {
        return Err(Error::NumericalOverflow);
    }
    Ok(LossGrad {
        loss,
        grads,
        trigger_grads: Vec::new(),
        probabilities: Vec::new(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub eps: f64,
    #[serde(default)]
    pub adv_scope: AdvScope,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 0.1,
            eps: 0.5,
            adv_scope: AdvScope::All,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLoss {
    pub l_ce: f64,
    /// Zero when `alpha == 0` (pass skipped).
    pub l_adv: f64,
    /// Zero when `beta == 0` (pass skipped).
    pub l_rec: f64,
    pub total: f64,
    pub forward_passes: u8,
}

/// `l_ce + α·l_adv + β·l_rec` and its gradient. Passes with a zero weight are skipped.
pub fn combined_loss(
    params: &EncoderParams,
    episode: &Episode<'_>,
    weights: &LossWeights,
) -> Result<(EpisodeLoss, Tensors)> {
    if weights.alpha < 0.0 || weights.beta < 0.0 {
        return Err(Error::Config("alpha and beta must be non-negative".into()));
    }
    let ce = episode_loss_ce(params, episode)?;
    let mut grads = ce.grads;
    let mut passes = 1;
    let mut l_adv = 0.0;
    let mut l_rec = 0.0;
    if weights.alpha > 0.0 {
        let adv = adversarial_loss(
            params,
            episode,
            &ce.trigger_grads,
            weights.eps,
            weights.adv_scope,
        )?;
        grads.add_scaled(&adv.grads, weights.alpha);
        l_adv = adv.loss;
        passes += 1;
    }
    if weights.beta > 0.0 {
        let rec = reconstruction_loss(params, episode)?;
        grads.add_scaled(&rec.grads, weights.beta);
        l_rec = rec.loss;
        passes += 1;
    }
    let total = ce.loss + weights.alpha * l_adv + weights.beta * l_rec;
    Ok((
        EpisodeLoss {
            l_ce: ce.loss,
            l_adv,
            l_rec,
            total,
            forward_passes: passes,
        },
        grads,
    ))
}

/// Nearest-prototype prediction with the encoder.
pub fn predict(params: &EncoderParams, episode: &Episode<'_>) -> Result<Prediction> {
    let encode = |i| {
        let prep = params.prepare(i, false);
        params.forward(&prep, None).repr
    };
    let prototypes = episode
        .support
        .iter()
        .map(|row| prototype(&row.iter().map(|i| encode(i)).collect::<Vec<_>>()))
        .collect::<Result<Vec<_>>>()?;
    let probabilities = proto_probabilities(&encode(episode.query), &prototypes)?;
    Ok(Prediction {
        label_index: argmax(&probabilities),
        probabilities: Some(probabilities),
    })
}
