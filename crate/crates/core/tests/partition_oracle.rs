//! `partition_triggers` against a direct, loop-by-loop re-derivation.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use fsec_core::corpus::{Corpus, Instance};
use fsec_core::embeddings::EmbeddingTable;
use fsec_core::sampling::partition_triggers;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Toy {
    corpus: Corpus,
    table: EmbeddingTable,
    events: Vec<String>,
    forms: BTreeMap<String, Vec<String>>,
    vectors: BTreeMap<String, Vec<f64>>,
}

fn toy<R: Rng>(rng: &mut R) -> Toy {
    let n_events = rng.gen_range(2..=3);
    let dim = rng.gen_range(1..=5);
    let n_forms = rng.gen_range(2..=10);
    // Small integer coordinates make exact d_com ties common.
    let integer = rng.gen_bool(0.5);
    let vectors: BTreeMap<String, Vec<f64>> = (0..n_forms)
        .map(|i| {
            let v = (0..dim)
                .map(|_| {
                    if integer {
                        rng.gen_range(-2..=2) as f64
                    } else {
                        rng.gen_range(-1.0..1.0)
                    }
                })
                .collect();
            (format!("t{i}"), v)
        })
        .collect();
    let all: Vec<String> = vectors.keys().cloned().collect();
    let events: Vec<String> = (0..n_events).map(|e| format!("E{e}")).collect();
    let mut instances = Vec::new();
    let mut forms = BTreeMap::new();
    for e in &events {
        let k = rng.gen_range(1..=all.len());
        let mut chosen: Vec<String> = rand::seq::index::sample(rng, all.len(), k)
            .into_iter()
            .map(|i| all[i].clone())
            .collect();
        // Occasionally an out-of-table trigger, which maps to the zero vector.
        if rng.gen_bool(0.2) {
            chosen.push(format!("oov{}", e.to_lowercase()));
        }
        for t in &chosen {
            for _ in 0..rng.gen_range(1..=3) {
                instances.push(Instance::new(vec![t.clone()], 0, e.as_str()).unwrap());
            }
        }
        chosen.sort();
        forms.insert(e.clone(), chosen);
    }
    let table =
        EmbeddingTable::from_entries(dim, vectors.iter().map(|(k, v)| (k.as_str(), v.clone())))
            .unwrap();
    Toy {
        corpus: Corpus::new(instances).unwrap(),
        table,
        events,
        forms,
        vectors: vectors.clone(),
    }
}

fn vector(toy: &Toy, form: &str, dim: usize) -> Vec<f64> {
    toy.vectors
        .get(form)
        .cloned()
        .unwrap_or_else(|| vec![0.0; dim])
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += (a[i] - b[i]) * (a[i] - b[i]);
    }
    s.sqrt()
}

struct Expected {
    scores: BTreeMap<(String, String), (f64, f64, f64)>,
    selected: BTreeMap<String, Vec<String>>,
    confusing: BTreeSet<String>,
}

fn brute_force(toy: &Toy, event: &str, u: usize) -> Expected {
    let dim = toy.table.dim();
    let own = &toy.forms[event];
    let mut scores = BTreeMap::new();
    let mut selected = BTreeMap::new();
    let mut confusing = BTreeSet::new();
    for other in toy.events.iter().filter(|o| o.as_str() != event) {
        let theirs = &toy.forms[other];
        let mut d_com = Vec::new();
        for t in own {
            let vt = vector(toy, t, dim);
            let mut inner = 0.0;
            for s in own {
                inner += dist(&vt, &vector(toy, s, dim));
            }
            inner /= own.len() as f64;
            let mut inter = 0.0;
            for s in theirs {
                inter += dist(&vt, &vector(toy, s, dim));
            }
            inter /= theirs.len() as f64;
            scores.insert((other.clone(), t.clone()), (inner, inter, inter - inner));
            d_com.push((t.clone(), inter - inner));
        }
        // Selection by repeated minimum; ties go to the smaller form.
        let mut picked = Vec::new();
        let mut remaining = d_com.clone();
        while picked.len() < u && !remaining.is_empty() {
            let mut best = 0;
            for i in 1..remaining.len() {
                let (ref f, d) = remaining[i];
                let (ref bf, bd) = remaining[best];
                if d < bd || (d == bd && f < bf) {
                    best = i;
                }
            }
            picked.push(remaining.remove(best).0);
        }
        confusing.extend(picked.iter().cloned());
        selected.insert(other.clone(), picked);
    }
    Expected {
        scores,
        selected,
        confusing,
    }
}

#[test]
fn partition_matches_brute_force_on_random_toys() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..50 {
        let toy = toy(&mut rng);
        let u = rng.gen_range(1..=6);
        for event in &toy.events {
            let others: Vec<&str> = toy
                .events
                .iter()
                .map(String::as_str)
                .filter(|o| o != event)
                .collect();
            let got = partition_triggers(event, &others, &toy.corpus, &toy.table, u).unwrap();
            let want = brute_force(&toy, event, u);
            assert_eq!(got.confusing, want.confusing, "case {case} event {event}");
            let all: BTreeSet<String> = toy.forms[event].iter().cloned().collect();
            let non: BTreeSet<String> = all.difference(&want.confusing).cloned().collect();
            assert_eq!(got.non_confusing, non, "case {case}");
            for per in &got.per_other {
                assert_eq!(per.selected, want.selected[&per.other], "case {case}");
                for (t, s) in &per.scores {
                    let (inner, inter, com) = want.scores[&(per.other.clone(), t.clone())];
                    assert!((s.d_inner - inner).abs() < 1e-9);
                    assert!((s.d_inter - inter).abs() < 1e-9);
                    assert!((s.d_com - com).abs() < 1e-9);
                }
            }
        }
    }
    assert!(start.elapsed().as_secs_f64() < 1.0);
}
