//! Event-mention corpora.
//!
//! The canonical on-disk format is one JSON object per line:
//!
//! ```text
//! {"tokens":["he","left","home"],"trigger_index":1,"event_type":"Death"}
//! ```
//!
//! A [`Corpus`] is immutable once built and keeps two indexes: instances by
//! event type, and instances by `(event type, trigger form)`, where the trigger
//! form is the lowercased token at `trigger_index`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One event mention.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Instance {
    pub tokens: Vec<String>,
    pub trigger_index: usize,
    pub event_type: String,
}

impl Instance {
    pub fn new(
        tokens: Vec<String>,
        trigger_index: usize,
        event_type: impl Into<String>,
    ) -> Result<Self> {
        let instance = Self {
            tokens,
            trigger_index,
            event_type: event_type.into(),
        };
        instance.validate()?;
        Ok(instance)
    }

    pub fn validate(&self) -> Result<()> {
        if self.tokens.is_empty() {
            return Err(Error::InvalidInstance("empty token sequence".into()));
        }
        if self.event_type.is_empty() {
            return Err(Error::InvalidInstance("empty event type".into()));
        }
        if self.trigger_index >= self.tokens.len() {
            return Err(Error::TriggerOutOfRange {
                index: self.trigger_index,
                len: self.tokens.len(),
            });
        }
        Ok(())
    }

    pub fn trigger_token(&self) -> &str {
        &self.tokens[self.trigger_index]
    }

    /// Lowercased trigger token.
    pub fn trigger_form(&self) -> String {
        self.trigger_token().to_lowercase()
    }
}

/// Indexed, immutable collection of instances.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Corpus {
    instances: Vec<Instance>,
    trigger_forms: Vec<String>,
    by_event: BTreeMap<String, Vec<usize>>,
    by_event_trigger: BTreeMap<String, BTreeMap<String, Vec<usize>>>,
}

impl Corpus {
    pub fn new(instances: Vec<Instance>) -> Result<Self> {
        for instance in &instances {
            instance.validate()?;
        }
        let trigger_forms: Vec<String> = instances.iter().map(Instance::trigger_form).collect();
        let mut by_event: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        let mut by_event_trigger: BTreeMap<String, BTreeMap<String, Vec<usize>>> = BTreeMap::new();
        for (idx, (instance, form)) in instances.iter().zip(&trigger_forms).enumerate() {
            by_event
                .entry(instance.event_type.clone())
                .or_default()
                .push(idx);
            by_event_trigger
                .entry(instance.event_type.clone())
                .or_default()
                .entry(form.clone())
                .or_default()
                .push(idx);
        }
        Ok(Self {
            instances,
            trigger_forms,
            by_event,
            by_event_trigger,
        })
    }

    pub fn instances(&self) -> &[Instance] {
        &self.instances
    }

    pub fn into_instances(self) -> Vec<Instance> {
        self.instances
    }

    pub fn instance(&self, idx: usize) -> &Instance {
        &self.instances[idx]
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn trigger_form(&self, idx: usize) -> &str {
        &self.trigger_forms[idx]
    }

    /// Event types in lexicographic order.
    pub fn event_types(&self) -> impl Iterator<Item = &str> {
        self.by_event.keys().map(String::as_str)
    }

    pub fn n_event_types(&self) -> usize {
        self.by_event.len()
    }

    pub fn contains_event(&self, event: &str) -> bool {
        self.by_event.contains_key(event)
    }

    /// Instance indices of `event`; empty for unknown events.
    pub fn event_instances(&self, event: &str) -> &[usize] {
        self.by_event.get(event).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Trigger form → instance indices for `event` (the trigger set T_e is its key set).
    pub fn event_triggers(&self, event: &str) -> Option<&BTreeMap<String, Vec<usize>>> {
        self.by_event_trigger.get(event)
    }

    pub fn by_event(&self) -> &BTreeMap<String, Vec<usize>> {
        &self.by_event
    }

    pub fn by_event_trigger(&self) -> &BTreeMap<String, BTreeMap<String, Vec<usize>>> {
        &self.by_event_trigger
    }

    /// Subset of this corpus restricted to the given events, in original order.
    pub fn restrict_to<'a, I>(&self, events: I) -> Result<Corpus>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let keep: BTreeSet<&str> = events.into_iter().collect();
        Corpus::new(
            self.instances
                .iter()
                .filter(|i| keep.contains(i.event_type.as_str()))
                .cloned()
                .collect(),
        )
    }
}

/// Parses canonical records from a reader. Blank lines are skipped.
pub fn read_canonical<R: BufRead>(reader: R, source_name: &str) -> Result<Vec<Instance>> {
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            source_name: source_name.to_string(),
            line: lineno + 1,
            message,
        };
        let instance: Instance =
            serde_json::from_str(&line).map_err(|e| parse_err(format!("malformed record: {e}")))?;
        instance.validate().map_err(|e| parse_err(e.to_string()))?;
        out.push(instance);
    }
    Ok(out)
}

pub fn load_canonical(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    let name = path.display().to_string();
    let instances = read_canonical(BufReader::new(File::open(path)?), &name)?;
    if instances.is_empty() {
        return Err(Error::EmptyFile(name));
    }
    Corpus::new(instances)
}

pub fn write_canonical<W: Write>(mut writer: W, instances: &[Instance]) -> Result<()> {
    for instance in instances {
        serde_json::to_writer(&mut writer, instance)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

pub fn save_canonical(path: impl AsRef<Path>, instances: &[Instance]) -> Result<()> {
    write_canonical(BufWriter::new(File::create(path)?), instances)
}

// MAVEN release schema. Unknown fields (title, negative_triggers, ...) are ignored.

#[derive(Deserialize)]
struct MavenDocument {
    id: Option<String>,
    content: Option<Vec<MavenSentence>>,
    events: Option<Vec<MavenEvent>>,
}

#[derive(Deserialize)]
struct MavenSentence {
    tokens: Option<Vec<String>>,
}

#[derive(Deserialize)]
struct MavenEvent {
    #[serde(rename = "type")]
    event_type: Option<String>,
    mention: Option<Vec<MavenMention>>,
}

#[derive(Deserialize)]
struct MavenMention {
    sent_id: Option<usize>,
    offset: Option<Vec<usize>>,
}

/// Converts MAVEN-format documents (one JSON document per line) to instances.
///
/// Each event mention becomes one instance whose trigger is the first token of
/// the mention span. Negative/candidate triggers are discarded.
pub fn read_maven<R: BufRead>(reader: R, source_name: &str) -> Result<Vec<Instance>> {
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: MavenDocument = serde_json::from_str(&line).map_err(|e| Error::Parse {
            source_name: source_name.to_string(),
            line: lineno + 1,
            message: format!("malformed document: {e}"),
        })?;
        let doc_id = doc
            .id
            .clone()
            .unwrap_or_else(|| format!("<line {}>", lineno + 1));
        let missing = |field: &str| Error::Document {
            doc_id: doc_id.clone(),
            message: format!("missing field `{field}`"),
        };
        let content = doc.content.as_ref().ok_or_else(|| missing("content"))?;
        // Documents without annotated events (e.g. test split) contribute nothing.
        let Some(events) = doc.events.as_ref() else {
            continue;
        };
        for event in events {
            let event_type = event.event_type.as_ref().ok_or_else(|| missing("type"))?;
            let mentions = event.mention.as_ref().ok_or_else(|| missing("mention"))?;
            for mention in mentions {
                let sent_id = mention.sent_id.ok_or_else(|| missing("sent_id"))?;
                let offset = mention
                    .offset
                    .as_ref()
                    .and_then(|o| o.first().copied())
                    .ok_or_else(|| missing("offset"))?;
                let sentence = content.get(sent_id).ok_or_else(|| Error::Document {
                    doc_id: doc_id.clone(),
                    message: format!(
                        "sent_id {sent_id} out of range ({} sentences)",
                        content.len()
                    ),
                })?;
                let tokens = sentence.tokens.clone().ok_or_else(|| missing("tokens"))?;
                let instance = Instance::new(tokens, offset, event_type.clone()).map_err(|e| {
                    Error::Document {
                        doc_id: doc_id.clone(),
                        message: e.to_string(),
                    }
                })?;
                out.push(instance);
            }
        }
    }
    Ok(out)
}

pub fn convert_maven(path: impl AsRef<Path>) -> Result<Vec<Instance>> {
    let path = path.as_ref();
    read_maven(
        BufReader::new(File::open(path)?),
        &path.display().to_string(),
    )
}

/// Keeps only event types with at least `min_count` instances.
pub fn filter_min_instances(corpus: &Corpus, min_count: usize) -> Result<Corpus> {
    if min_count == 0 {
        return Err(Error::Config("min_count must be at least 1".into()));
    }
    let kept: Vec<&str> = corpus
        .by_event()
        .iter()
        .filter(|(_, idx)| idx.len() >= min_count)
        .map(|(e, _)| e.as_str())
        .collect();
    if kept.is_empty() {
        return Err(Error::EmptyFilter(min_count));
    }
    corpus.restrict_to(kept)
}

/// Disjoint train/dev/test event-type lists.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    #[serde(default)]
    pub train: Vec<String>,
    #[serde(default)]
    pub dev: Vec<String>,
    #[serde(default)]
    pub test: Vec<String>,
}

impl SplitSpec {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
    }

    pub fn validate(&self, corpus: &Corpus) -> Result<()> {
        let mut seen: BTreeMap<&str, &str> = BTreeMap::new();
        for (name, list) in [
            ("train", &self.train),
            ("dev", &self.dev),
            ("test", &self.test),
        ] {
            for event in list {
                if let Some(prev) = seen.insert(event, name) {
                    return Err(Error::InvalidSplit(format!(
                        "event type `{event}` listed in both {prev} and {name}"
                    )));
                }
                if !corpus.contains_event(event) {
                    return Err(Error::InvalidSplit(format!(
                        "unknown event type `{event}` in {name}"
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Split {
    pub train: Corpus,
    pub dev: Corpus,
    pub test: Corpus,
    /// Event types present in the corpus but absent from every list.
    pub dropped_event_types: usize,
    pub dropped_instances: usize,
}

pub fn split_by_event_types(corpus: &Corpus, spec: &SplitSpec) -> Result<Split> {
    spec.validate(corpus)?;
    let train = corpus.restrict_to(spec.train.iter().map(String::as_str))?;
    let dev = corpus.restrict_to(spec.dev.iter().map(String::as_str))?;
    let test = corpus.restrict_to(spec.test.iter().map(String::as_str))?;
    let listed = spec.train.len() + spec.dev.len() + spec.test.len();
    Ok(Split {
        dropped_event_types: corpus.n_event_types() - listed,
        dropped_instances: corpus.len() - train.len() - dev.len() - test.len(),
        train,
        dev,
        test,
    })
}
