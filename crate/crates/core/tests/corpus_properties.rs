use std::collections::BTreeSet;

use fsec_core::corpus::{
    filter_min_instances, load_canonical, read_canonical, save_canonical, split_by_event_types,
    write_canonical, Corpus, Instance, SplitSpec,
};
use fsec_core::stats::{event_trigger_stats, trigger_event_stats};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn instance_strategy() -> impl Strategy<Value = Instance> {
    (
        prop::collection::vec("[A-Za-zÀ-ÿ0-9\"\\\\ ,.]{1,8}", 1..8),
        any::<prop::sample::Index>(),
        prop::sample::select(vec!["Attack", "Die", "Marry", "Move", "Elect"]),
    )
        .prop_map(|(tokens, idx, event)| {
            let trigger_index = idx.index(tokens.len());
            Instance::new(tokens, trigger_index, event).unwrap()
        })
}

fn corpus_strategy() -> impl Strategy<Value = Vec<Instance>> {
    prop::collection::vec(instance_strategy(), 1..40)
}

proptest! {
    #[test]
    fn canonical_round_trip(instances in corpus_strategy()) {
        let mut buf = Vec::new();
        write_canonical(&mut buf, &instances).unwrap();
        let back = read_canonical(buf.as_slice(), "mem").unwrap();
        prop_assert_eq!(&back, &instances);
        prop_assert_eq!(Corpus::new(back).unwrap(), Corpus::new(instances).unwrap());
    }

    #[test]
    fn filter_is_idempotent(instances in corpus_strategy(), min in 1usize..6) {
        let corpus = Corpus::new(instances).unwrap();
        if let Ok(once) = filter_min_instances(&corpus, min) {
            let twice = filter_min_instances(&once, min).unwrap();
            prop_assert_eq!(once, twice);
        }
    }

    #[test]
    fn stats_ignore_instance_order(instances in corpus_strategy(), seed in any::<u64>()) {
        let mut shuffled = instances.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let a = Corpus::new(instances).unwrap();
        let b = Corpus::new(shuffled).unwrap();
        prop_assert_eq!(event_trigger_stats(&a, 2).unwrap(), event_trigger_stats(&b, 2).unwrap());
        prop_assert_eq!(
            trigger_event_stats(&a, 5, &[1, 2]).unwrap(),
            trigger_event_stats(&b, 5, &[1, 2]).unwrap()
        );
    }

    #[test]
    fn unbounded_top_m_covers_everything(instances in corpus_strategy()) {
        let corpus = Corpus::new(instances).unwrap();
        prop_assert_eq!(event_trigger_stats(&corpus, usize::MAX).unwrap().avg_top_m_instance_fraction, 1.0);
    }

    #[test]
    fn split_is_disjoint_and_complete(instances in corpus_strategy()) {
        let corpus = Corpus::new(instances).unwrap();
        let events: Vec<String> = corpus.event_types().map(String::from).collect();
        let spec = SplitSpec {
            train: events.iter().step_by(3).cloned().collect(),
            dev: events.iter().skip(1).step_by(3).cloned().collect(),
            test: events.iter().skip(2).step_by(3).cloned().collect(),
        };
        let split = split_by_event_types(&corpus, &spec).unwrap();
        let sets: Vec<BTreeSet<&str>> = [&split.train, &split.dev, &split.test]
            .iter()
            .map(|c| c.event_types().collect())
            .collect();
        prop_assert!(sets[0].is_disjoint(&sets[1]) && sets[0].is_disjoint(&sets[2]) && sets[1].is_disjoint(&sets[2]));
        let mut all: Vec<Instance> = [&split.train, &split.dev, &split.test]
            .iter()
            .flat_map(|c| c.instances().to_vec())
            .collect();
        let mut original = corpus.instances().to_vec();
        let key = |i: &Instance| serde_json::to_string(i).unwrap();
        all.sort_by_key(key);
        original.sort_by_key(key);
        prop_assert_eq!(all, original);
    }
}

#[test]
fn file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.jsonl");
    let instances = vec![
        Instance::new(vec!["Troops".into(), "ATTACKED".into()], 1, "Attack").unwrap(),
        Instance::new(vec!["ça".into(), "va".into()], 0, "Talk").unwrap(),
    ];
    save_canonical(&path, &instances).unwrap();
    let corpus = load_canonical(&path).unwrap();
    assert_eq!(corpus.instances(), instances.as_slice());
    assert_eq!(corpus.trigger_form(0), "attacked");
}
