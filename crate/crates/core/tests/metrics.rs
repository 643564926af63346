mod common;

use std::collections::BTreeSet;

use memqa::evalmetrics::{answer_f1, answer_prf, evaluate, evidence_prf, joint_f1, PredictionRecord};
use memqa::nnet::DatasetProfile;
use memqa::synthdata::{generate_corpus, GenConfig};
use memqa::Error;
use proptest::prelude::*;

#[test]
fn golden_file() {
    common::criteria::metric_golden().unwrap();
}

fn words(ws: &[&str]) -> Vec<String> {
    ws.iter().map(|w| w.to_string()).collect()
}

#[test]
fn yes_no_are_exact_strings() {
    assert_eq!(answer_f1(&words(&["yes"]), &words(&["yes"])), 1.0);
    assert_eq!(answer_f1(&words(&["Yes"]), &words(&["yes"])), 0.0);
}

fn perfect(s: &memqa::synthdata::MhqaSample) -> PredictionRecord {
    PredictionRecord {
        id: s.id.clone(),
        answer: s.answer_tokens().join(" "),
        answer_type: s.question_type,
        score: 0.0,
        sp: s.supporting_sentences.iter().copied().collect(),
        sp_paragraphs: s.supporting_paragraphs.iter().copied().collect(),
    }
}

#[test]
fn gold_predictions_score_one_and_ids_must_match() {
    let gold = generate_corpus(&GenConfig {
        n_samples: 30,
        seed: 5,
        ..GenConfig::default()
    })
    .unwrap();
    let preds: Vec<PredictionRecord> = gold.iter().map(perfect).collect();
    for profile in [DatasetProfile::HpLike, DatasetProfile::TwoWikiLike, DatasetProfile::MsqLike] {
        let r = evaluate(&gold, &preds, profile, false).unwrap();
        assert_eq!((r.answer_f1, r.supporting_f1, r.joint_f1), (1.0, 1.0, 1.0));
    }

    let mut missing = preds.clone();
    missing.pop();
    assert!(matches!(evaluate(&gold, &missing, DatasetProfile::HpLike, false), Err(Error::IdMismatch(_))));
    let mut dup = preds.clone();
    dup[1] = dup[0].clone();
    assert!(matches!(evaluate(&gold, &dup, DatasetProfile::HpLike, false), Err(Error::IdMismatch(_))));
}

fn tokens() -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(prop::sample::select(vec!["a", "b", "c", "d", "e"]).prop_map(String::from), 0..6)
}

fn ids() -> impl Strategy<Value = BTreeSet<(usize, usize)>> {
    prop::collection::btree_set((0usize..4, 0usize..3), 0..6)
}

proptest! {
    #[test]
    fn scores_are_bounded_and_joint_is_dominated(p in tokens(), g in tokens(), ps in ids(), gs in ids()) {
        let a = answer_prf(&p, &g);
        let e = evidence_prf(&ps, &gs);
        let j = joint_f1(&a, &e);
        for x in [a.precision, a.recall, a.f1, e.precision, e.recall, e.f1, j] {
            prop_assert!((0.0..=1.0).contains(&x));
        }
        prop_assert!(j <= a.f1.min(e.f1) + 1e-9);
        prop_assert_eq!(answer_prf(&g, &p).f1, a.f1);
        prop_assert_eq!(evidence_prf(&gs, &ps).f1, e.f1);
    }
}
