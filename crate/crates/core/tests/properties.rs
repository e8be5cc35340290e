use std::collections::{BTreeMap, BTreeSet, HashSet};

use proptest::prelude::*;
use xdnr::analysis::{candidate_pairs, fleiss_kappa, weighted_jaccard};
use xdnr::dense::{cosine, hash_embed, DenseIndex, EmbeddingMatrix};
use xdnr::lexical::{bm25_search, Bm25Params, InvertedIndex};
use xdnr::metrics::{query_dcg, query_ndcg, reciprocal_rank, Qrels};
use xdnr::ranking::{RankedList, ScoredDoc};
use xdnr::trainer::{loss, loss_grad, ProjectionHead, Sample};

const WORDS: [&str; 8] = ["alpha", "beta", "gamma", "delta", "eps", "zeta", "eta", "theta"];
const FILLER: &str = "filler";

fn doc_strategy() -> impl Strategy<Value = Vec<usize>> {
    // indices into WORDS; 8 means filler
    prop::collection::vec(0usize..9, 1..15)
}

fn text(doc: &[usize]) -> String {
    doc.iter()
        .map(|&i| if i == 8 { FILLER } else { WORDS[i] })
        .collect::<Vec<_>>()
        .join(" ")
}

fn score_of(list: &RankedList, id: &str) -> f64 {
    list.entries.iter().find(|e| e.id == id).map_or(0.0, |e| e.score)
}

fn index(docs: &[Vec<usize>]) -> InvertedIndex {
    InvertedIndex::from_texts(docs.iter().enumerate().map(|(i, d)| (format!("d{i:02}"), text(d)))).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn bm25_extra_occurrence_never_lowers_score(
        mut docs in prop::collection::vec(doc_strategy(), 1..20),
        query in prop::collection::vec(0usize..8, 1..4),
        pick in any::<prop::sample::Index>(),
    ) {
        // turn one filler into a query term so length and average length stay fixed
        let target = pick.index(docs.len());
        docs[target].push(8);
        let q: Vec<String> = query.iter().map(|&i| WORDS[i].to_string()).collect();
        let before = score_of(&bm25_search(&index(&docs), &q, Bm25Params::default(), 1000), &format!("d{target:02}"));
        let pos = docs[target].iter().rposition(|&w| w == 8).unwrap();
        docs[target][pos] = query[0];
        let after = score_of(&bm25_search(&index(&docs), &q, Bm25Params::default(), 1000), &format!("d{target:02}"));
        prop_assert!(after >= before - 1e-12, "{before} -> {after}");
    }

    #[test]
    fn bm25_b_zero_ignores_length(
        tfs in prop::collection::vec(0usize..4, 3),
        pad in 1usize..20,
        others in prop::collection::vec(doc_strategy(), 0..10),
    ) {
        let mut short: Vec<usize> = tfs.iter().enumerate().flat_map(|(w, &n)| std::iter::repeat_n(w, n)).collect();
        short.push(8);
        let mut long = short.clone();
        long.extend(std::iter::repeat_n(8, pad));
        let mut docs = vec![short, long];
        docs.extend(others);
        let params = Bm25Params { k1: 1.2, b: 0.0 };
        let q: Vec<String> = WORDS[..3].iter().map(|s| s.to_string()).collect();
        let res = bm25_search(&index(&docs), &q, params, 1000);
        prop_assert!((score_of(&res, "d00") - score_of(&res, "d01")).abs() < 1e-12);
    }

    #[test]
    fn cosine_is_symmetric(
        u in prop::collection::vec(-10.0f64..10.0, 6),
        v in prop::collection::vec(-10.0f64..10.0, 6),
    ) {
        prop_assume!(u.iter().any(|x| *x != 0.0) && v.iter().any(|x| *x != 0.0));
        prop_assert!((cosine(&u, &v).unwrap() - cosine(&v, &u).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn dense_search_is_exact_and_scale_invariant(
        rows in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 5), 2..30),
        query in prop::collection::vec(-1.0f64..1.0, 5),
        scale in prop::collection::vec(0.01f64..100.0, 30),
    ) {
        prop_assume!(query.iter().any(|x| x.abs() > 1e-3));
        prop_assume!(rows.iter().all(|r| r.iter().any(|x| x.abs() > 1e-3)));
        let named = |rs: &[Vec<f64>]| -> EmbeddingMatrix {
            EmbeddingMatrix::from_rows(5, rs.iter().enumerate().map(|(i, r)| (format!("r{i:02}"), r.clone())).collect()).unwrap()
        };
        let got = DenseIndex::new(named(&rows)).search(&query, rows.len()).unwrap().ranked;

        // full scan
        let mut want: Vec<(String, f64)> = rows.iter().enumerate().map(|(i, r)| {
            let dot: f64 = r.iter().zip(&query).map(|(a, b)| a * b).sum();
            let n = r.iter().map(|a| a * a).sum::<f64>().sqrt() * query.iter().map(|a| a * a).sum::<f64>().sqrt();
            (format!("r{i:02}"), dot / n)
        }).collect();
        want.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
        for (g, w) in got.entries.iter().zip(&want) {
            prop_assert!((g.score - w.1).abs() < 1e-12);
        }
        let got_scores: Vec<f64> = got.entries.iter().map(|e| e.score).collect();
        let want_scores: Vec<f64> = want.iter().map(|w| w.1).collect();
        prop_assert_eq!(got_scores.len(), want_scores.len());

        let scaled: Vec<Vec<f64>> = rows.iter().zip(&scale).map(|(r, c)| r.iter().map(|x| x * c).collect()).collect();
        let again = DenseIndex::new(named(&scaled)).search(&query, rows.len()).unwrap().ranked;
        for (a, b) in got.entries.iter().zip(&again.entries) {
            prop_assert!((a.score - b.score).abs() < 1e-12);
        }
    }

    #[test]
    fn hash_embed_is_unit_and_deterministic(text in "\\PC{0,40}", dim in 8usize..300, seed in any::<u64>()) {
        let v = hash_embed(&text, dim, seed).unwrap();
        prop_assert_eq!(v.len(), dim);
        let n: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        prop_assert!((n - 1.0).abs() < 1e-12);
        prop_assert_eq!(v, hash_embed(&text, dim, seed).unwrap());
    }
}

fn ranked(ids: &[usize]) -> RankedList {
    RankedList::new(
        "q",
        ids.iter()
            .enumerate()
            .map(|(r, i)| ScoredDoc {
                id: format!("d{i}"),
                score: -(r as f64),
            })
            .collect(),
        "t",
    )
}

fn qrels_from(gains: &[u32]) -> Qrels {
    let mut q = Qrels::default();
    for (i, g) in gains.iter().enumerate() {
        q.insert("q", &format!("d{i}"), *g);
    }
    q
}

fn permutation() -> impl Strategy<Value = (Vec<u32>, Vec<usize>)> {
    prop::collection::vec(0u32..3, 1..15).prop_flat_map(|gains| {
        let n = gains.len();
        (Just(gains), Just((0..n).collect::<Vec<_>>()).prop_shuffle())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn metrics_stay_in_unit_range((gains, order) in permutation(), k in 1usize..12) {
        let q = qrels_from(&gains);
        let l = ranked(&order);
        for m in [reciprocal_rank(&l, &q), query_ndcg(&l, &q, k)] {
            prop_assert!((0.0..=1.0).contains(&m));
        }
    }

    #[test]
    fn dcg_grows_with_k((gains, order) in permutation()) {
        let q = qrels_from(&gains);
        let l = ranked(&order);
        for k in 1..order.len() {
            prop_assert!(query_dcg(&l, &q, k + 1) >= query_dcg(&l, &q, k));
        }
    }

    #[test]
    fn moving_higher_gain_up_never_lowers_dcg((gains, order) in permutation(), i in 0usize..15, j in 0usize..15, k in 1usize..12) {
        let n = order.len();
        let (a, b) = ((i % n).min(j % n), (i % n).max(j % n));
        let q = qrels_from(&gains);
        let mut swapped = order.clone();
        if gains[order[b]] > gains[order[a]] {
            swapped.swap(a, b);
        }
        prop_assert!(query_dcg(&ranked(&swapped), &q, k) >= query_dcg(&ranked(&order), &q, k) - 1e-12);
    }

    #[test]
    fn gain_sorted_ranking_has_unit_ndcg(gains in prop::collection::vec(0u32..3, 1..15), k in 1usize..12) {
        prop_assume!(gains.iter().any(|&g| g > 0));
        let mut order: Vec<usize> = (0..gains.len()).collect();
        order.sort_by_key(|&i| std::cmp::Reverse(gains[i]));
        prop_assert!((query_ndcg(&ranked(&order), &qrels_from(&gains), k) - 1.0).abs() < 1e-12);
    }
}

fn batch_strategy(din: usize) -> impl Strategy<Value = Vec<(Vec<f64>, Vec<f64>, f64)>> {
    prop::collection::vec(
        (
            prop::collection::vec(-1.0f64..1.0, din),
            prop::collection::vec(-1.0f64..1.0, din),
            prop::sample::select(vec![0.0, 0.5, 1.0]),
        ),
        1..8,
    )
}

fn samples(b: &[(Vec<f64>, Vec<f64>, f64)]) -> Vec<Sample<'_>> {
    b.iter()
        .map(|(q, d, l)| Sample {
            query: q,
            doc: d,
            label: *l,
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn small_gradient_step_does_not_increase_loss(batch in batch_strategy(4), seed in any::<u64>(), bias in any::<bool>()) {
        let mut head = ProjectionHead::uniform(4, 3, bias, seed);
        let s = samples(&batch);
        let before = loss(&head, &s).unwrap();
        let g = loss_grad(&head, &s).unwrap();
        for (p, gi) in head.params_mut().iter_mut().zip(&g) {
            *p -= 1e-6 * gi;
        }
        prop_assert!(loss(&head, &s).unwrap() <= before + 1e-15);
    }

    #[test]
    fn swapping_roles_keeps_loss(batch in batch_strategy(5), seed in any::<u64>()) {
        let head = ProjectionHead::uniform(5, 4, true, seed);
        let swapped: Vec<_> = batch.iter().map(|(q, d, l)| (d.clone(), q.clone(), *l)).collect();
        prop_assert!((loss(&head, &samples(&batch)).unwrap() - loss(&head, &samples(&swapped)).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn loss_is_a_weighted_mean_over_batches(b1 in batch_strategy(3), b2 in batch_strategy(3), seed in any::<u64>()) {
        let head = ProjectionHead::uniform(3, 3, false, seed);
        let joined: Vec<_> = b1.iter().chain(&b2).cloned().collect();
        let (n1, n2) = (b1.len() as f64, b2.len() as f64);
        let want = (n1 * loss(&head, &samples(&b1)).unwrap() + n2 * loss(&head, &samples(&b2)).unwrap()) / (n1 + n2);
        prop_assert!((loss(&head, &samples(&joined)).unwrap() - want).abs() < 1e-12);
    }
}

fn weights(keys: &[u8], vals: &[f64]) -> BTreeMap<String, f64> {
    keys.iter().zip(vals).map(|(k, v)| (format!("t{k}"), *v)).collect()
}

proptest! {
    #[test]
    fn weighted_jaccard_range_and_binary_case(
        kx in prop::collection::vec(0u8..12, 1..8),
        ky in prop::collection::vec(0u8..12, 1..8),
        vx in prop::collection::vec(0.01f64..5.0, 8),
        vy in prop::collection::vec(0.01f64..5.0, 8),
    ) {
        let (x, y) = (weights(&kx, &vx), weights(&ky, &vy));
        let j = weighted_jaccard(&x, &y).unwrap();
        prop_assert!((0.0..=1.0).contains(&j));
        prop_assert!((j - weighted_jaccard(&y, &x).unwrap()).abs() < 1e-12);

        let sx: BTreeSet<u8> = kx.iter().copied().collect();
        let sy: BTreeSet<u8> = ky.iter().copied().collect();
        let plain = sx.intersection(&sy).count() as f64 / sx.union(&sy).count() as f64;
        let bx = weights(&kx, &[1.0; 8]);
        let by = weights(&ky, &[1.0; 8]);
        prop_assert!((weighted_jaccard(&bx, &by).unwrap() - plain).abs() < 1e-12);
    }

    #[test]
    fn kappa_ignores_row_and_column_order(
        rows in prop::collection::vec(prop::collection::vec(0u32..4, 3), 2..10),
        perm in Just(vec![0usize, 1, 2]).prop_shuffle(),
        row_perm_seed in any::<u64>(),
    ) {
        // pad each row to a common total of 9 raters in the last category
        let table: Vec<Vec<u32>> = rows.iter().map(|r| {
            let mut r = r.clone();
            r[2] = 9 - r[0] - r[1];
            r
        }).collect();
        let Ok(k) = fleiss_kappa(&table, 9) else { return Ok(()); };
        let cols: Vec<Vec<u32>> = table.iter().map(|r| perm.iter().map(|&c| r[c]).collect()).collect();
        let mut shuffled = cols.clone();
        let n = shuffled.len();
        shuffled.rotate_left((row_perm_seed as usize) % n);
        prop_assert!((fleiss_kappa(&shuffled, 9).unwrap() - k).abs() < 1e-12);
    }
}

#[test]
fn candidate_pairs_do_not_depend_on_row_order() {
    let texts = [
        "the vaccine contains a tracking chip",
        "vaccines contain tracking chips says post",
        "crocodile spotted on the streets of hyderabad",
        "a crocodile was seen in hyderabad streets",
        "5g towers spread the virus",
        "the virus is spread by 5g towers",
        "drinking hot water cures the infection",
        "hot water kills the virus claim",
    ];
    let rows: Vec<(String, Vec<f64>)> = texts
        .iter()
        .enumerate()
        .map(|(i, t)| (format!("c{i}"), hash_embed(t, 128, 3).unwrap()))
        .collect();
    let forward = candidate_pairs(&EmbeddingMatrix::from_rows(128, rows.clone()).unwrap(), 3, 0.1).unwrap();
    let mut reversed = rows;
    reversed.reverse();
    let backward = candidate_pairs(&EmbeddingMatrix::from_rows(128, reversed).unwrap(), 3, 0.1).unwrap();
    assert!(!forward.is_empty());
    assert_eq!(forward, backward);
    let sources: HashSet<&str> = forward.iter().map(|p| p.source_claim_id.as_str()).collect();
    assert!(forward.iter().all(|p| p.source_claim_id != p.target_claim_id));
    assert!(sources.len() > 1);
}
