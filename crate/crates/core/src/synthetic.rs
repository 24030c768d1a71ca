//! Generated corpora with controlled trigger skew.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Instance};
use crate::error::{Error, Result};

/// How trigger forms are shared between event types.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TriggerVocab {
    /// Every event has its own dominant and rare forms.
    Disjoint,
    /// Each event has its own dominant form; rare forms come from one pool shared by all events.
    SharedRarePool,
    /// All events use the same dominant and rare forms.
    FullyShared,
}

impl std::str::FromStr for TriggerVocab {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "disjoint" => Ok(Self::Disjoint),
            "shared-rare-pool" => Ok(Self::SharedRarePool),
            "fully-shared" => Ok(Self::FullyShared),
            other => Err(Error::Config(format!(
                "unknown trigger vocabulary mode: {other}"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SkewedCorpusConfig {
    pub n_events: usize,
    pub instances_per_event: usize,
    /// Share of each event's instances carried by its dominant trigger.
    pub dominant_fraction: f64,
    pub rare_triggers: usize,
    pub vocab: TriggerVocab,
    pub context_words: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub seed: u64,
}

impl Default for SkewedCorpusConfig {
    fn default() -> Self {
        Self {
            n_events: 20,
            instances_per_event: 200,
            dominant_fraction: 0.9,
            rare_triggers: 10,
            vocab: TriggerVocab::SharedRarePool,
            context_words: 50,
            min_len: 5,
            max_len: 12,
            seed: 0,
        }
    }
}

impl SkewedCorpusConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_events == 0 || self.instances_per_event == 0 {
            return Err(Error::Config(
                "need at least one event and one instance".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.dominant_fraction) {
            return Err(Error::Config("dominant_fraction must lie in [0, 1]".into()));
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err(Error::Config("need 1 <= min_len <= max_len".into()));
        }
        if self.context_words == 0 {
            return Err(Error::Config("need at least one context word".into()));
        }
        let n_dominant = self.n_dominant();
        let n_rare = self.instances_per_event - n_dominant;
        if n_rare > 0 && self.rare_triggers == 0 {
            return Err(Error::Config(
                "rare instances requested with no rare triggers".into(),
            ));
        }
        Ok(())
    }

    fn n_dominant(&self) -> usize {
        ((self.instances_per_event as f64) * self.dominant_fraction).round() as usize
    }
}

fn event_name(e: usize) -> String {
    format!("Event{e:02}")
}

fn dominant_form(cfg: &SkewedCorpusConfig, e: usize) -> String {
    match cfg.vocab {
        TriggerVocab::FullyShared => "dom".into(),
        _ => format!("dom{e:02}"),
    }
}

fn rare_form(cfg: &SkewedCorpusConfig, e: usize, r: usize) -> String {
    match cfg.vocab {
        TriggerVocab::Disjoint => format!("rare{e:02}x{r:02}"),
        _ => format!("rare{r:02}"),
    }
}

fn sentence<R: Rng>(
    cfg: &SkewedCorpusConfig,
    trigger: String,
    rng: &mut R,
) -> (Vec<String>, usize) {
    let len = rng.gen_range(cfg.min_len..=cfg.max_len);
    let trigger_index = rng.gen_range(0..len);
    let tokens = (0..len)
        .map(|i| {
            if i == trigger_index {
                trigger.clone()
            } else {
                format!("w{}", rng.gen_range(0..cfg.context_words))
            }
        })
        .collect();
    (tokens, trigger_index)
}

/// One dominant trigger per event plus evenly spread rare triggers; rare
/// instances are dealt round-robin, so each rare form appears at least once
/// when there are enough rare instances.
pub fn skewed_corpus(cfg: &SkewedCorpusConfig) -> Result<Corpus> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n_dominant = cfg.n_dominant();
    let mut instances = Vec::with_capacity(cfg.n_events * cfg.instances_per_event);
    for e in 0..cfg.n_events {
        let mut forms: Vec<String> = (0..cfg.instances_per_event)
            .map(|i| {
                if i < n_dominant {
                    dominant_form(cfg, e)
                } else {
                    rare_form(cfg, e, (i - n_dominant) % cfg.rare_triggers)
                }
            })
            .collect();
        forms.shuffle(&mut rng);
        for form in forms {
            let (tokens, trigger_index) = sentence(cfg, form, &mut rng);
            instances.push(Instance::new(tokens, trigger_index, event_name(e))?);
        }
    }
    Corpus::new(instances)
}

/// Two event types, four instances each, with disjoint vocabularies.
pub fn separable_fixture() -> Corpus {
    let rows: [(&str, [[&str; 3]; 4]); 2] = [
        (
            "Attack",
            [
                ["soldiers", "attacked", "village"],
                ["troops", "bombed", "bridge"],
                ["rebels", "attacked", "convoy"],
                ["militants", "bombed", "base"],
            ],
        ),
        (
            "Marry",
            [
                ["couple", "married", "yesterday"],
                ["bride", "wed", "happily"],
                ["pair", "married", "abroad"],
                ["groom", "wed", "quietly"],
            ],
        ),
    ];
    let mut instances = Vec::new();
    for (event, sentences) in rows {
        for tokens in sentences {
            let tokens = tokens.iter().map(|t| t.to_string()).collect();
            instances.push(Instance::new(tokens, 1, event).expect("valid fixture"));
        }
    }
    Corpus::new(instances).expect("valid fixture")
}
