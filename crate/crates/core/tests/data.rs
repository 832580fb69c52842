use std::collections::BTreeSet;

use eagat::data::{
    evaluate, generate_synthetic, kfold_split, parse_corpus, parse_predictions, student_t_sf,
    summarize_folds, ttest_onesample, Prediction, SyntheticSpec,
};
use eagat::Error;
use proptest::prelude::*;

fn perturbed(doc: &eagat::segmentation::Document, salt: u64) -> Prediction {
    let n = doc.len();
    let flip = |i: usize| (i as u64 * 31 + salt).is_multiple_of(3);
    let toggle = |set: &BTreeSet<usize>| -> BTreeSet<usize> {
        (1..=n).filter(|&i| set.contains(&i) != flip(i)).collect()
    };
    let mut pairs = doc.pairs().clone();
    if salt.is_multiple_of(2) {
        pairs.insert((1, n));
    }
    Prediction::new(
        doc.doc_id(),
        toggle(doc.emotions()),
        toggle(doc.causes()),
        pairs,
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    /// Scores depend neither on prediction order nor on document order.
    #[test]
    fn evaluate_is_order_invariant(seed in 0u64..500, salt in 0u64..50, rot in 0usize..10) {
        let c = generate_synthetic(8, seed, SyntheticSpec::default()).unwrap();
        let preds: Vec<Prediction> = c.documents.iter().map(|d| perturbed(d, salt)).collect();
        let base = evaluate(&preds, &c.documents).unwrap();

        let mut p2 = preds.clone();
        p2.rotate_left(rot % 8);
        p2.reverse();
        let mut d2 = c.documents.clone();
        d2.rotate_right(rot % 8);
        prop_assert_eq!(evaluate(&p2, &d2).unwrap(), base);
    }

    #[test]
    fn gold_predictions_score_one(seed in 0u64..500) {
        let c = generate_synthetic(5, seed, SyntheticSpec::default()).unwrap();
        let gold: Vec<Prediction> = c.documents.iter().map(Prediction::gold).collect();
        let r = evaluate(&gold, &c.documents).unwrap();
        for s in [r.emotion, r.cause, r.pair, r.pair_negative] {
            prop_assert_eq!((s.fp, s.fn_, s.f1), (0, 0, 1.0));
        }
        prop_assert_eq!(r.avg_f1, 1.0);
    }

    /// Folds partition the corpus, sizes differ by at most one, and the
    /// reported statistics match a direct computation.
    #[test]
    fn kfold_partitions(n in 2usize..60, k in 2usize..8, seed in any::<u64>()) {
        prop_assume!(k <= n);
        let c = generate_synthetic(n, 1, SyntheticSpec::default()).unwrap();
        let rep = kfold_split(&c, k, seed).unwrap();
        let all: Vec<&String> = rep.split.folds.iter().flatten().collect();
        let unique: BTreeSet<&String> = all.iter().copied().collect();
        prop_assert_eq!(all.len(), n);
        prop_assert_eq!(unique.len(), n);
        let sizes: Vec<usize> = rep.split.folds.iter().map(Vec::len).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);

        for (fold, st) in rep.split.folds.iter().zip(&rep.stats) {
            let pos: Vec<f64> = fold
                .iter()
                .map(|id| (c.documents.iter().position(|d| d.doc_id() == id).unwrap() + 1) as f64)
                .collect();
            let m = pos.len() as f64;
            let mean = pos.iter().sum::<f64>() / m;
            let var = pos.iter().map(|p| (p - mean) * (p - mean)).sum::<f64>() / m;
            prop_assert!((st.mean - mean).abs() < 1e-9);
            prop_assert!((st.std - var.sqrt()).abs() < 1e-9);
            prop_assert_eq!(st.window_counts.iter().sum::<usize>(), fold.len());
            prop_assert_eq!(st.window_counts.len(), n.div_ceil(10));
        }
        prop_assert_eq!(kfold_split(&c, k, seed).unwrap(), rep);
    }

    #[test]
    fn corpus_jsonl_round_trip(seed in 0u64..500) {
        let c = generate_synthetic(4, seed, SyntheticSpec::default()).unwrap();
        prop_assert_eq!(parse_corpus(&c.to_jsonl()).unwrap(), c);
    }
}

#[test]
fn ttest_matches_reference_values() {
    // Reference values from an independent statistics package.
    let (t, p) = ttest_onesample(&[1.0, 2.0, 3.0, 4.0, 5.0], 2.0).unwrap();
    assert!((t - std::f64::consts::SQRT_2).abs() < 1e-12);
    assert!((p - 0.23019964108049873).abs() < 1e-10);
    let (t, p) = ttest_onesample(&[0.61, 0.58, 0.66, 0.59, 0.63, 0.6], 0.55).unwrap();
    assert!((t - 5.160837262027949).abs() < 1e-9);
    assert!((p - 0.0035822265088704).abs() < 1e-10);
    for (t, df, want) in [
        (2.5, 7.0, 0.020496109292876437),
        (0.3, 30.0, 0.3831230526421764),
        (4.0, 3.5, 0.01046030818270186),
    ] {
        assert!((student_t_sf(t, df) - want).abs() < 1e-10, "t={t} df={df}");
    }
}

#[test]
fn fold_summary_uses_sample_std() {
    let c = generate_synthetic(6, 2, SyntheticSpec::default()).unwrap();
    let gold: Vec<Prediction> = c.documents.iter().map(Prediction::gold).collect();
    let empty: Vec<Prediction> = c
        .documents
        .iter()
        .map(|d| Prediction::new(d.doc_id(), [], [], []))
        .collect();
    let a = evaluate(&gold, &c.documents).unwrap();
    let b = evaluate(&empty, &c.documents).unwrap();
    let s = summarize_folds(&[a, b]).unwrap();
    let pair = &s["pair_f1"];
    assert_eq!(pair.mean, 0.5);
    // Two points 1 and 0: sample std is sqrt(0.5).
    assert!((pair.std - 0.5f64.sqrt()).abs() < 1e-15);
}

#[test]
fn malformed_inputs_name_their_line() {
    let err = parse_corpus(
        "{\"doc_id\": \"a\", \"clauses\": [{\"text\": \"x\", \"sentence_id\": 1}]}\nnot json\n",
    )
    .unwrap_err();
    assert!(matches!(err, Error::Parse { line: 2, .. }), "{err:?}");
    assert!(matches!(parse_corpus(""), Err(Error::EmptyCorpus)));
    let err = parse_predictions("{\"doc_id\": \"a\"}\n{\"doc_id\": 3}\n").unwrap_err();
    assert!(matches!(err, Error::Parse { line: 2, .. }), "{err:?}");
}
