use std::collections::{BTreeSet, HashMap};

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use xdnr::corpus::{
    build_train_pairs, split, Collection, Debunk, JudgmentSet, PairConfig, QueryClaim, RelevanceJudgment,
    RelevanceLevel, SplitSpec, TrainSet,
};

fn debunks(n: usize) -> Collection<Debunk> {
    Collection::new(
        (0..n)
            .map(|i| Debunk {
                id: format!("d{i}"),
                lang: "en".into(),
                claim: format!("claim {i}"),
                title: String::new(),
                published_at: None,
                source_org: None,
            })
            .collect(),
    )
    .unwrap()
}

fn queries(n: usize) -> Collection<QueryClaim> {
    Collection::new(
        (0..n)
            .map(|i| QueryClaim {
                id: format!("q{i}"),
                lang: "en".into(),
                text: format!("query {i}"),
                text_en: None,
                created_at: None,
            })
            .collect(),
    )
    .unwrap()
}

fn judgment(q: &str, d: &str, level: RelevanceLevel) -> RelevanceJudgment {
    RelevanceJudgment {
        query_id: q.into(),
        debunk_id: d.into(),
        level,
    }
}

/// Partial Fisher-Yates written out by hand: position i swaps with a uniform
/// pick from i..len, for the first k positions.
fn reference_draw(mut items: Vec<&str>, k: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..k {
        let j = rng.gen_range(i..items.len());
        items.swap(i, j);
    }
    items[..k].iter().map(|s| s.to_string()).collect()
}

#[test]
fn seeded_negative_draw_is_one_of_the_six_and_reproducible() {
    let corpus = debunks(5);
    let js = JudgmentSet::new(vec![judgment("q0", "d2", RelevanceLevel::Exact)]).unwrap();
    let train = TrainSet {
        query_ids: vec!["q0".into()],
        blocked_debunks: BTreeSet::new(),
    };
    let eligible = ["d0", "d1", "d3", "d4"];
    let all_draws: BTreeSet<BTreeSet<&str>> = (0..4)
        .flat_map(|a| (a + 1..4).map(move |b| [eligible[a], eligible[b]].into_iter().collect()))
        .collect();
    assert_eq!(all_draws.len(), 6);

    let mut seen = HashMap::new();
    for seed in 0..600u64 {
        let cfg = PairConfig {
            negatives_per_query: 2,
            seed,
            ..PairConfig::default()
        };
        let pairs = build_train_pairs(&train, &js, &corpus, &cfg).unwrap();
        assert_eq!(pairs.len(), 3);
        assert_eq!((pairs[0].debunk_id.as_str(), pairs[0].label), ("d2", 1.0));
        let negs: Vec<String> = pairs[1..].iter().map(|p| p.debunk_id.clone()).collect();
        assert!(pairs[1..].iter().all(|p| p.label == 0.0));
        assert_eq!(negs, reference_draw(eligible.to_vec(), 2, seed));
        let set: BTreeSet<&str> = negs.iter().map(String::as_str).collect();
        assert!(all_draws.contains(&set));
        *seen.entry(set.into_iter().map(String::from).collect::<Vec<_>>()).or_insert(0) += 1;
        assert_eq!(pairs, build_train_pairs(&train, &js, &corpus, &cfg).unwrap());
    }
    // every subset turns up, none wildly over-represented
    assert_eq!(seen.len(), 6);
    assert!(seen.values().all(|&c| (50..=150).contains(&c)), "{seen:?}");
}

fn level(i: u8) -> RelevanceLevel {
    match i % 3 {
        0 => RelevanceLevel::Exact,
        1 => RelevanceLevel::Partial,
        _ => RelevanceLevel::Irrelevant,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn split_and_pairs_invariants(
        nq in 4usize..20,
        raw in prop::collection::vec((0usize..20, 0usize..40, 0u8..3), 0..60),
        test_mask in prop::collection::vec(any::<bool>(), 20),
        seed in any::<u64>(),
    ) {
        let qs = queries(nq);
        let corpus = debunks(40);
        let mut seen = BTreeSet::new();
        let js: Vec<RelevanceJudgment> = raw
            .iter()
            .filter(|(q, d, _)| *q < nq && seen.insert((*q, *d)))
            .map(|(q, d, l)| judgment(&format!("q{q}"), &format!("d{d}"), level(*l)))
            .collect();
        let js = JudgmentSet::new(js).unwrap();
        let mut test_ids: Vec<String> = (0..nq).filter(|i| test_mask[*i]).map(|i| format!("q{i}")).collect();
        if test_ids.is_empty() {
            test_ids.push("q0".into());
        }
        prop_assume!(test_ids.len() < nq);
        let spec = SplitSpec { test_query_ids: test_ids, validation_fraction: 0.25, seed, pool_query_ids: None };
        let sp = split(&qs, &js, &spec).unwrap();

        // partition
        let parts = [&sp.train.query_ids, &sp.validation, &sp.test];
        let union: BTreeSet<&String> = parts.iter().flat_map(|p| p.iter()).collect();
        prop_assert_eq!(union.len(), nq);
        prop_assert_eq!(parts.iter().map(|p| p.len()).sum::<usize>(), nq);

        let cfg = PairConfig { negatives_per_query: 3, seed, ..PairConfig::default() };
        let pairs = build_train_pairs(&sp.train, &js, &corpus, &cfg).unwrap();
        prop_assert_eq!(&pairs, &build_train_pairs(&sp.train, &js, &corpus, &cfg).unwrap());

        // leakage: nothing judged positive for a test query is a training positive
        let test_pos: BTreeSet<&str> = sp.test.iter()
            .flat_map(|q| js.for_query(q))
            .filter(|j| j.level.is_positive())
            .map(|j| j.debunk_id.as_str())
            .collect();
        prop_assert!(pairs.iter().filter(|p| p.label > 0.0).all(|p| !test_pos.contains(p.debunk_id.as_str())));

        // count identity (net of excluded leakage)
        let positives = pairs.iter().filter(|p| p.label > 0.0).count();
        let expected = sp.train.query_ids.iter()
            .flat_map(|q| js.for_query(q))
            .filter(|j| j.level.is_positive() && !test_pos.contains(j.debunk_id.as_str()))
            .count();
        prop_assert_eq!(positives, expected);
        prop_assert_eq!(pairs.len() - positives, 3 * sp.train.query_ids.len());
    }
}
