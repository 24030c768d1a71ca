//! N-way-K-shot meta-task construction.
//!
//! Three regimes share the event-type draw (N types uniformly without
//! replacement) and differ in how instances are picked:
//!
//! - **IUS**: K instances uniformly from all instances of the event, so corpus
//!   trigger frequencies carry straight into the episode.
//! - **TUS**: first draw trigger forms uniformly from the event's trigger set,
//!   then an instance bearing that trigger.
//! - **COS**: split each event's triggers into confusing / non-confusing sets
//!   relative to the other events in the task ([`partition_triggers`]) and draw
//!   triggers from the confusing set with probability `cos_p`.
//!
//! Every task is a pure function of `(corpus, config, seed, task index)`: task
//! `i` is drawn from a ChaCha stream keyed by the seed and selected by `i`
//! ([`task_rng`]), so parallel evaluation yields the same tasks as a serial run.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, Mutex};

use rand::seq::index;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Instance};
use crate::embeddings::{l2, EmbeddingTable};
use crate::error::{Error, Result};

/// Query redraw budget for TUS/COS before giving up.
pub const MAX_QUERY_ATTEMPTS: usize = 1000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplingMethod {
    Ius,
    Tus,
    Cos,
}

impl fmt::Display for SamplingMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SamplingMethod::Ius => "ius",
            SamplingMethod::Tus => "tus",
            SamplingMethod::Cos => "cos",
        })
    }
}

impl FromStr for SamplingMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ius" => Ok(SamplingMethod::Ius),
            "tus" => Ok(SamplingMethod::Tus),
            "cos" => Ok(SamplingMethod::Cos),
            other => Err(Error::Config(format!("unknown sampling method `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub n_way: usize,
    pub k_shot: usize,
    pub method: SamplingMethod,
    /// Probability of drawing a trigger from the confusing set.
    pub cos_p: f64,
    /// Confusing triggers added per other event type.
    pub cos_u: usize,
    /// Apply the confusing-set rule to the query as well (otherwise the query
    /// trigger is uniform over the gold event's triggers).
    pub cos_query_confusing: bool,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            n_way: 5,
            k_shot: 5,
            method: SamplingMethod::Ius,
            cos_p: 1.0,
            cos_u: 6,
            cos_query_confusing: true,
            seed: 42,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_way == 0 || self.k_shot == 0 {
            return Err(Error::Config("n_way and k_shot must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.cos_p) {
            return Err(Error::Config(format!(
                "cos_p {} outside [0, 1]",
                self.cos_p
            )));
        }
        if self.cos_u == 0 {
            return Err(Error::Config("cos_u must be positive".into()));
        }
        Ok(())
    }
}

/// One episode. Instances are indices into the corpus the task was drawn from.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MetaTask {
    pub event_types: Vec<String>,
    /// `support[i]` holds the K instances of `event_types[i]`.
    pub support: Vec<Vec<usize>>,
    pub query: usize,
    pub gold_index: usize,
}

/// A task with its instances resolved against a corpus.
#[derive(Clone, Debug)]
pub struct Episode<'a> {
    pub support: Vec<Vec<&'a Instance>>,
    pub query: &'a Instance,
    pub gold: usize,
}

impl<'a> Episode<'a> {
    pub fn n_way(&self) -> usize {
        self.support.len()
    }

    /// Support instances row-major, then the query.
    pub fn instances(&self) -> impl Iterator<Item = &'a Instance> + '_ {
        self.support
            .iter()
            .flatten()
            .copied()
            .chain(std::iter::once(self.query))
    }

    pub fn len(&self) -> usize {
        self.support.iter().map(Vec::len).sum::<usize>() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

impl MetaTask {
    pub fn n_way(&self) -> usize {
        self.event_types.len()
    }

    pub fn resolve<'a>(&self, corpus: &'a Corpus) -> Episode<'a> {
        Episode {
            support: self
                .support
                .iter()
                .map(|row| row.iter().map(|&i| corpus.instance(i)).collect())
                .collect(),
            query: corpus.instance(self.query),
            gold: self.gold_index,
        }
    }

    /// Checks the structural invariants against the corpus the task came from.
    pub fn validate(&self, corpus: &Corpus) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("malformed task: {m}")));
        let n = self.event_types.len();
        if n == 0 || self.support.len() != n || self.gold_index >= n {
            return bad("shape".into());
        }
        let distinct: HashSet<&String> = self.event_types.iter().collect();
        if distinct.len() != n {
            return bad("duplicate event types".into());
        }
        let mut seen = HashSet::new();
        for (row, event) in self.support.iter().zip(&self.event_types) {
            for &idx in row {
                if idx >= corpus.len() || !seen.insert(idx) {
                    return bad(format!("support instance {idx} invalid or repeated"));
                }
                if &corpus.instance(idx).event_type != event {
                    return bad(format!("support instance {idx} is not a {event}"));
                }
            }
        }
        if self.query >= corpus.len() || seen.contains(&self.query) {
            return bad("query missing or inside support".into());
        }
        if corpus.instance(self.query).event_type != self.event_types[self.gold_index] {
            return bad("query label does not match gold event".into());
        }
        Ok(())
    }
}

/// Per-trigger scores against one other event type.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TriggerScores {
    pub d_inner: f64,
    pub d_inter: f64,
    pub d_com: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OtherEventScores {
    pub other: String,
    pub scores: BTreeMap<String, TriggerScores>,
    /// Triggers added to the confusing set for this other event.
    pub selected: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TriggerPartition {
    pub event: String,
    pub confusing: BTreeSet<String>,
    pub non_confusing: BTreeSet<String>,
    pub per_other: Vec<OtherEventScores>,
}

/// Splits the triggers of `event` into confusing and non-confusing sets.
///
/// For every other event `o` and trigger `t` of `event`:
/// `d_inner(t)` is the mean distance from `t` to all triggers of `event`
/// (itself included), `d_inter(t)` the mean distance to the triggers of `o`,
/// and `d_com = -d_inner + d_inter`. The `u` triggers with the smallest
/// `d_com` (ties by form) are confusing with respect to `o`; the confusing set
/// is the union over all `o`.
pub fn partition_triggers(
    event: &str,
    others: &[&str],
    corpus: &Corpus,
    table: &EmbeddingTable,
    u: usize,
) -> Result<TriggerPartition> {
    let triggers: Vec<&str> = corpus
        .event_triggers(event)
        .map(|m| m.keys().map(String::as_str).collect())
        .unwrap_or_default();
    if triggers.is_empty() {
        return Err(Error::Insufficient(format!(
            "event `{event}` has no triggers"
        )));
    }
    let vectors: Vec<&[f64]> = triggers.iter().map(|t| table.lookup(t)).collect();
    let d_inner: Vec<f64> = vectors
        .iter()
        .map(|a| vectors.iter().map(|b| l2(a, b)).sum::<f64>() / vectors.len() as f64)
        .collect();

    let mut confusing = BTreeSet::new();
    let mut per_other = Vec::with_capacity(others.len());
    for &other in others {
        let other_vectors: Vec<&[f64]> = corpus
            .event_triggers(other)
            .ok_or_else(|| Error::Insufficient(format!("unknown event `{other}`")))?
            .keys()
            .map(|t| table.lookup(t))
            .collect();
        let mut scores = BTreeMap::new();
        let mut ranked: Vec<(f64, &str)> = Vec::with_capacity(triggers.len());
        for (i, &t) in triggers.iter().enumerate() {
            let d_inter = other_vectors.iter().map(|b| l2(vectors[i], b)).sum::<f64>()
                / other_vectors.len() as f64;
            let d_com = -d_inner[i] + d_inter;
            scores.insert(
                t.to_string(),
                TriggerScores {
                    d_inner: d_inner[i],
                    d_inter,
                    d_com,
                },
            );
            ranked.push((d_com, t));
        }
        ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1)));
        let selected: Vec<String> = ranked.iter().take(u).map(|(_, t)| t.to_string()).collect();
        confusing.extend(selected.iter().cloned());
        per_other.push(OtherEventScores {
            other: other.to_string(),
            scores,
            selected,
        });
    }
    let non_confusing = triggers
        .iter()
        .filter(|t| !confusing.contains(**t))
        .map(|t| t.to_string())
        .collect();
    Ok(TriggerPartition {
        event: event.to_string(),
        confusing,
        non_confusing,
        per_other,
    })
}

/// The random stream for task `task_index` under `seed`.
pub fn task_rng(seed: u64, task_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(task_index);
    rng
}

type PartitionKey = (Vec<String>, String);

/// Reusable sampler bound to a corpus; caches COS partitions per event combination.
pub struct Sampler<'a> {
    corpus: &'a Corpus,
    table: Option<&'a EmbeddingTable>,
    cfg: SamplerConfig,
    events: Vec<&'a str>,
    partitions: Mutex<HashMap<PartitionKey, Arc<TriggerPartition>>>,
}

impl<'a> Sampler<'a> {
    pub fn new(
        corpus: &'a Corpus,
        cfg: SamplerConfig,
        table: Option<&'a EmbeddingTable>,
    ) -> Result<Self> {
        cfg.validate()?;
        if cfg.method == SamplingMethod::Cos && table.is_none() {
            return Err(Error::MissingEmbeddings);
        }
        let events: Vec<&str> = corpus.event_types().collect();
        if events.len() < cfg.n_way {
            return Err(Error::Insufficient(format!(
                "{} event types available, {}-way tasks need {}",
                events.len(),
                cfg.n_way,
                cfg.n_way
            )));
        }
        if let Some(e) = events
            .iter()
            .find(|e| corpus.event_instances(e).len() <= cfg.k_shot)
        {
            return Err(Error::Insufficient(format!(
                "event type `{e}` has {} instances, {}-shot tasks need more than {}",
                corpus.event_instances(e).len(),
                cfg.k_shot,
                cfg.k_shot
            )));
        }
        Ok(Self {
            corpus,
            table,
            cfg,
            events,
            partitions: Mutex::new(HashMap::new()),
        })
    }

    pub fn config(&self) -> &SamplerConfig {
        &self.cfg
    }

    pub fn corpus(&self) -> &'a Corpus {
        self.corpus
    }

    /// Task number `index` of the configured seed.
    pub fn task(&self, index: u64) -> Result<MetaTask> {
        self.sample(&mut task_rng(self.cfg.seed, index))
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<MetaTask> {
        match self.cfg.method {
            SamplingMethod::Ius => self.sample_ius(rng),
            SamplingMethod::Tus => self.sample_tus(rng),
            SamplingMethod::Cos => self.sample_cos(rng),
        }
    }

    fn draw_events<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<String> {
        index::sample(rng, self.events.len(), self.cfg.n_way)
            .into_iter()
            .map(|i| self.events[i].to_string())
            .collect()
    }

    fn sample_ius<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<MetaTask> {
        let k = self.cfg.k_shot;
        let event_types = self.draw_events(rng);
        let support: Vec<Vec<usize>> = event_types
            .iter()
            .map(|e| {
                let pool = self.corpus.event_instances(e);
                index::sample(rng, pool.len(), k)
                    .into_iter()
                    .map(|i| pool[i])
                    .collect()
            })
            .collect();
        let gold_index = rng.gen_range(0..event_types.len());
        let row: HashSet<usize> = support[gold_index].iter().copied().collect();
        let rest: Vec<usize> = self
            .corpus
            .event_instances(&event_types[gold_index])
            .iter()
            .copied()
            .filter(|i| !row.contains(i))
            .collect();
        let query = rest[rng.gen_range(0..rest.len())];
        Ok(MetaTask {
            event_types,
            support,
            query,
            gold_index,
        })
    }

    /// Picks an unused instance bearing one of `allowed` triggers, uniformly
    /// over triggers that still have unused instances. `None` when exhausted.
    fn draw_from_triggers<R: Rng + ?Sized>(
        triggers: &BTreeMap<String, Vec<usize>>,
        allowed: &[&str],
        used: &HashSet<usize>,
        rng: &mut R,
    ) -> Option<usize> {
        let live: Vec<&Vec<usize>> = allowed
            .iter()
            .map(|t| &triggers[*t])
            .filter(|bucket| bucket.iter().any(|i| !used.contains(i)))
            .collect();
        if live.is_empty() {
            return None;
        }
        let bucket = live[rng.gen_range(0..live.len())];
        let free: Vec<usize> = bucket
            .iter()
            .copied()
            .filter(|i| !used.contains(i))
            .collect();
        Some(free[rng.gen_range(0..free.len())])
    }

    fn tus_row<R: Rng + ?Sized>(&self, event: &str, rng: &mut R) -> Vec<usize> {
        let k = self.cfg.k_shot;
        let triggers = self.corpus.event_triggers(event).expect("event exists");
        let forms: Vec<&str> = triggers.keys().map(String::as_str).collect();
        let distinct = k.min(forms.len());
        let mut row = Vec::with_capacity(k);
        let mut used = HashSet::new();
        // Distinct triggers first; distinct triggers have disjoint buckets.
        for i in index::sample(rng, forms.len(), distinct) {
            let bucket = &triggers[forms[i]];
            let pick = bucket[rng.gen_range(0..bucket.len())];
            used.insert(pick);
            row.push(pick);
        }
        // Trigger-poor event: remaining draws with replacement.
        while row.len() < k {
            let pick = Self::draw_from_triggers(triggers, &forms, &used, rng)
                .expect("event has more than k instances");
            used.insert(pick);
            row.push(pick);
        }
        row
    }

    fn sample_tus<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<MetaTask> {
        let event_types = self.draw_events(rng);
        let support: Vec<Vec<usize>> = event_types.iter().map(|e| self.tus_row(e, rng)).collect();
        let gold_index = rng.gen_range(0..event_types.len());
        let triggers = self
            .corpus
            .event_triggers(&event_types[gold_index])
            .expect("event exists");
        let forms: Vec<&str> = triggers.keys().map(String::as_str).collect();
        let query = Self::redraw_query(&support[gold_index], rng, |rng| {
            &triggers[forms[rng.gen_range(0..forms.len())]]
        })?;
        Ok(MetaTask {
            event_types,
            support,
            query,
            gold_index,
        })
    }

    /// Draws a trigger bucket, then an instance from it outside `row`; a
    /// bucket with every instance in `row` sends the draw back to the trigger.
    fn redraw_query<'b, R, F>(row: &[usize], rng: &mut R, mut draw: F) -> Result<usize>
    where
        R: Rng + ?Sized,
        F: FnMut(&mut R) -> &'b Vec<usize>,
    {
        for _ in 0..MAX_QUERY_ATTEMPTS {
            let free: Vec<usize> = draw(rng)
                .iter()
                .copied()
                .filter(|i| !row.contains(i))
                .collect();
            if !free.is_empty() {
                return Ok(free[rng.gen_range(0..free.len())]);
            }
        }
        Err(Error::DisjointQuery(MAX_QUERY_ATTEMPTS))
    }

    /// Partition of `event` against the other events of the task, memoised on
    /// the sorted event combination.
    pub fn partition(&self, event: &str, task_events: &[String]) -> Result<Arc<TriggerPartition>> {
        let table = self.table.ok_or(Error::MissingEmbeddings)?;
        let mut key_events = task_events.to_vec();
        key_events.sort();
        let key = (key_events, event.to_string());
        if let Some(hit) = self.partitions.lock().expect("partition cache").get(&key) {
            return Ok(Arc::clone(hit));
        }
        let others: Vec<&str> = key
            .0
            .iter()
            .map(String::as_str)
            .filter(|e| *e != event)
            .collect();
        let partition = Arc::new(partition_triggers(
            event,
            &others,
            self.corpus,
            table,
            self.cfg.cos_u,
        )?);
        self.partitions
            .lock()
            .expect("partition cache")
            .insert(key, Arc::clone(&partition));
        Ok(partition)
    }

    /// Chooses the confusing set with probability `cos_p`, the other set
    /// otherwise, falling back when the chosen set is empty.
    fn cos_trigger_set<'p, R: Rng + ?Sized>(
        &self,
        partition: &'p TriggerPartition,
        rng: &mut R,
    ) -> (Vec<&'p str>, Vec<&'p str>) {
        let con: Vec<&str> = partition.confusing.iter().map(String::as_str).collect();
        let non: Vec<&str> = partition.non_confusing.iter().map(String::as_str).collect();
        let (first, second) = if rng.gen_bool(self.cfg.cos_p) {
            (con, non)
        } else {
            (non, con)
        };
        if first.is_empty() {
            (second, first)
        } else {
            (first, second)
        }
    }

    fn sample_cos<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<MetaTask> {
        let k = self.cfg.k_shot;
        let event_types = self.draw_events(rng);
        let mut support = Vec::with_capacity(event_types.len());
        for event in &event_types {
            let partition = self.partition(event, &event_types)?;
            let triggers = self.corpus.event_triggers(event).expect("event exists");
            let mut row = Vec::with_capacity(k);
            let mut used = HashSet::new();
            while row.len() < k {
                let (chosen, fallback) = self.cos_trigger_set(&partition, rng);
                let pick = Self::draw_from_triggers(triggers, &chosen, &used, rng)
                    .or_else(|| Self::draw_from_triggers(triggers, &fallback, &used, rng))
                    .expect("event has more than k instances");
                used.insert(pick);
                row.push(pick);
            }
            support.push(row);
        }

        let gold_index = rng.gen_range(0..event_types.len());
        let gold = &event_types[gold_index];
        let triggers = self.corpus.event_triggers(gold).expect("event exists");
        let query = if self.cfg.cos_query_confusing {
            let partition = self.partition(gold, &event_types)?;
            let row = &support[gold_index];
            let exhausted = |set: &[&str]| {
                set.iter()
                    .all(|t| triggers[*t].iter().all(|i| row.contains(i)))
            };
            Self::redraw_query(row, rng, |rng| {
                let (chosen, fallback) = self.cos_trigger_set(&partition, rng);
                let set = if exhausted(&chosen) && !fallback.is_empty() {
                    fallback
                } else {
                    chosen
                };
                &triggers[set[rng.gen_range(0..set.len())]]
            })?
        } else {
            let forms: Vec<&str> = triggers.keys().map(String::as_str).collect();
            Self::redraw_query(&support[gold_index], rng, |rng| {
                &triggers[forms[rng.gen_range(0..forms.len())]]
            })?
        };
        Ok(MetaTask {
            event_types,
            support,
            query,
            gold_index,
        })
    }
}

pub fn sample_ius<R: Rng + ?Sized>(
    corpus: &Corpus,
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<MetaTask> {
    let cfg = SamplerConfig {
        method: SamplingMethod::Ius,
        ..cfg.clone()
    };
    Sampler::new(corpus, cfg, None)?.sample(rng)
}

pub fn sample_tus<R: Rng + ?Sized>(
    corpus: &Corpus,
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<MetaTask> {
    let cfg = SamplerConfig {
        method: SamplingMethod::Tus,
        ..cfg.clone()
    };
    Sampler::new(corpus, cfg, None)?.sample(rng)
}

pub fn sample_cos<R: Rng + ?Sized>(
    corpus: &Corpus,
    cfg: &SamplerConfig,
    table: &EmbeddingTable,
    rng: &mut R,
) -> Result<MetaTask> {
    let cfg = SamplerConfig {
        method: SamplingMethod::Cos,
        ..cfg.clone()
    };
    Sampler::new(corpus, cfg, Some(table))?.sample(rng)
}
