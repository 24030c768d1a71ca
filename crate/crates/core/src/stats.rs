//! Trigger-bias diagnostics.
//!
//! Two views of the same long-tail:
//! - per event type, how concentrated its instances are on a few triggers
//!   ([`event_trigger_stats`]);
//! - per frequent trigger, how concentrated its instances are on a few event
//!   types ([`trigger_event_stats`]).
//!
//! All rankings are by count descending with ties broken by trigger form
//! ascending, so reports are reproducible regardless of instance order.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::sampling::MetaTask;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventTriggerStats {
    pub n_event_types: usize,
    pub avg_triggers_per_event: f64,
    pub top_m: usize,
    pub avg_top_m_instance_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TriggerEventStats {
    pub n_triggers: usize,
    pub avg_events_per_top_trigger: f64,
    /// Mean fraction covered by the top-x dominant event types, one entry per requested x.
    pub top_x_fractions: Vec<(usize, f64)>,
    pub top1_fraction: f64,
    pub top2_fraction: f64,
}

/// Triggers of `event` ranked by instance count (desc), ties by form (asc).
pub fn ranked_triggers<'a>(corpus: &'a Corpus, event: &str) -> Vec<(&'a str, usize)> {
    let mut ranked: Vec<(&str, usize)> = corpus
        .event_triggers(event)
        .map(|m| m.iter().map(|(t, idx)| (t.as_str(), idx.len())).collect())
        .unwrap_or_default();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    ranked
}

pub fn event_trigger_stats(corpus: &Corpus, top_m: usize) -> Result<EventTriggerStats> {
    if corpus.is_empty() {
        return Err(Error::EmptyInput("corpus"));
    }
    if top_m == 0 {
        return Err(Error::Config("top_m must be positive".into()));
    }
    let mut trigger_sum = 0.0;
    let mut fraction_sum = 0.0;
    for event in corpus.event_types() {
        let ranked = ranked_triggers(corpus, event);
        let total: usize = ranked.iter().map(|(_, c)| c).sum();
        let covered: usize = ranked.iter().take(top_m).map(|(_, c)| c).sum();
        trigger_sum += ranked.len() as f64;
        fraction_sum += covered as f64 / total as f64;
    }
    let n = corpus.n_event_types();
    Ok(EventTriggerStats {
        n_event_types: n,
        avg_triggers_per_event: trigger_sum / n as f64,
        top_m,
        avg_top_m_instance_fraction: fraction_sum / n as f64,
    })
}

/// Corpus-wide event-type counts for every trigger form.
fn trigger_event_counts(corpus: &Corpus) -> BTreeMap<&str, BTreeMap<&str, usize>> {
    let mut counts: BTreeMap<&str, BTreeMap<&str, usize>> = BTreeMap::new();
    for (event, triggers) in corpus.by_event_trigger() {
        for (form, idx) in triggers {
            *counts
                .entry(form.as_str())
                .or_default()
                .entry(event.as_str())
                .or_default() += idx.len();
        }
    }
    counts
}

pub fn trigger_event_stats(
    corpus: &Corpus,
    top_m: usize,
    top_x_list: &[usize],
) -> Result<TriggerEventStats> {
    if corpus.is_empty() {
        return Err(Error::EmptyInput("corpus"));
    }
    if top_m == 0 || top_x_list.contains(&0) {
        return Err(Error::Config(
            "top_m and top-x values must be positive".into(),
        ));
    }
    let collected: BTreeSet<&str> = corpus
        .event_types()
        .flat_map(|e| {
            ranked_triggers(corpus, e)
                .into_iter()
                .take(top_m)
                .map(|(t, _)| t)
        })
        .collect();
    let counts = trigger_event_counts(corpus);

    let mut xs: Vec<usize> = top_x_list.to_vec();
    for x in [1, 2] {
        if !xs.contains(&x) {
            xs.push(x);
        }
    }
    let mut events_sum = 0.0;
    let mut fraction_sums = vec![0.0; xs.len()];
    for trigger in &collected {
        let per_event = &counts[trigger];
        let mut sorted: Vec<usize> = per_event.values().copied().collect();
        sorted.sort_unstable_by(|a, b| b.cmp(a));
        let total: usize = sorted.iter().sum();
        events_sum += per_event.len() as f64;
        for (slot, &x) in fraction_sums.iter_mut().zip(&xs) {
            *slot += sorted.iter().take(x).sum::<usize>() as f64 / total as f64;
        }
    }
    let n = collected.len() as f64;
    let fractions: Vec<(usize, f64)> = xs
        .iter()
        .copied()
        .zip(fraction_sums.iter().map(|s| s / n))
        .collect();
    let lookup = |x: usize| {
        fractions
            .iter()
            .find(|(k, _)| *k == x)
            .map(|(_, v)| *v)
            .unwrap()
    };
    Ok(TriggerEventStats {
        n_triggers: collected.len(),
        avg_events_per_top_trigger: events_sum / n,
        top1_fraction: lookup(1),
        top2_fraction: lookup(2),
        top_x_fractions: fractions
            .iter()
            .filter(|(x, _)| top_x_list.contains(x))
            .copied()
            .collect(),
    })
}

/// True iff the query's trigger form equals the trigger form of some support instance.
pub fn has_trigger_overlap(corpus: &Corpus, task: &MetaTask) -> bool {
    let query = corpus.trigger_form(task.query);
    task.support
        .iter()
        .flatten()
        .any(|&idx| corpus.trigger_form(idx) == query)
}

/// Returns `(overlapping tasks, total tasks)`.
pub fn count_trigger_overlap<'t, I>(corpus: &Corpus, tasks: I) -> (usize, usize)
where
    I: IntoIterator<Item = &'t MetaTask>,
{
    tasks.into_iter().fold((0, 0), |(hits, total), task| {
        (hits + has_trigger_overlap(corpus, task) as usize, total + 1)
    })
}
