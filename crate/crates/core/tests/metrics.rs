mod common;

use geoqa_core::domain::{CanonicalAnswer, NumberUnit};
use geoqa_core::eval::{accuracy, aggregate, item_f1, trace_metrics, RunConfig};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::synth::{close, episode, oracle_scores, random_set, tally, NAMES};

#[test]
fn metrics_match_a_brute_force_tally() {
    for set in 0..100u64 {
        let (ts, gs) = random_set(1000 + set);
        let n = ts.len();
        let o = tally(&ts, &gs);

        let m = trace_metrics(&ts, &gs).unwrap();
        assert_eq!((m.ecr.hits, m.ecr.total), (o.ecr, n), "set {set}");
        assert_eq!((m.pass_at_1.hits, m.pass_at_1.total), (o.pass, n), "set {set}");
        assert_eq!((m.api_label.hits, m.api_label.total), (o.api, o.api_total), "set {set}");
        assert_eq!((m.planning.hits, m.planning.total), (o.plan, n), "set {set}");
        assert!(close(m.ecr.value, o.ecr as f64 / n as f64));
        assert!(close(m.pass_at_1.value, o.pass as f64 / n as f64));
        assert!(close(m.planning.value, o.plan as f64 / n as f64));
        if o.api_total > 0 {
            assert!(close(m.api_label.value, o.api as f64 / o.api_total as f64));
        }

        let r = aggregate("x", &RunConfig::default(), &ts, &gs).unwrap();
        let (mut tn, mut ta, mut tf) = (0, 0.0, 0.0);
        for (k, (c, a, f)) in &o.per_type {
            let got = r.per_type[&format!("type_{k}")];
            assert_eq!(got.count, *c);
            assert!(close(got.accuracy, a / *c as f64), "set {set} type {k}");
            assert!(close(got.f1, f / *c as f64), "set {set} type {k}");
            tn += c;
            ta += a;
            tf += f;
        }
        assert_eq!(r.overall.count, n);
        assert_eq!(r.per_type.values().map(|t| t.count).sum::<usize>(), n);
        assert!(close(r.overall.accuracy, ta / tn as f64));
        assert!(close(r.overall.f1, tf / tn as f64));
        assert_eq!(r.trace, m);
    }
}

#[test]
fn aggregation_ignores_episode_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (ts, gs): (Vec<_>, Vec<_>) = (0..80).map(|i| episode(i, &mut rng)).unzip();
    let base = aggregate("x", &RunConfig::default(), &ts, &gs).unwrap();
    let mut idx: Vec<usize> = (0..ts.len()).collect();
    for _ in 0..5 {
        idx.shuffle(&mut rng);
        let t2: Vec<_> = idx.iter().map(|&i| ts[i].clone()).collect();
        let g2: Vec<_> = idx.iter().map(|&i| gs[i].clone()).collect();
        assert_eq!(aggregate("x", &RunConfig::default(), &t2, &g2).unwrap(), base);
    }
}

#[test]
fn misaligned_inputs_are_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (ts, mut gs): (Vec<_>, Vec<_>) = (0..4).map(|i| episode(i, &mut rng)).unzip();
    assert!(trace_metrics(&ts[..3], &gs).is_err());
    gs.swap(0, 1);
    assert!(trace_metrics(&ts, &gs).is_err());
}

#[test]
fn forced_partial_credit_is_two_thirds() {
    let gold = CanonicalAnswer::entity_set(["A", "B", "C"]).unwrap();
    let pred = CanonicalAnswer::entity_set(["A", "B", "D"]).unwrap();
    assert!(close(item_f1(&pred, &gold), 2.0 / 3.0));
    assert_eq!(accuracy(&pred, &gold), 0.0);
}

fn arb_answer() -> impl Strategy<Value = CanonicalAnswer> {
    prop_oneof![
        prop::collection::vec(prop::sample::select(NAMES.to_vec()), 1..5)
            .prop_map(|v| CanonicalAnswer::entity_set(v).unwrap()),
        (0u32..6).prop_map(|v| CanonicalAnswer::Number { value: v as f64, unit: NumberUnit::Count }),
        (0u64..4).prop_map(|s| CanonicalAnswer::Duration { seconds: s }),
    ]
}

proptest! {
    #[test]
    fn exact_match_implies_full_f1(a in arb_answer(), b in arb_answer()) {
        let f = item_f1(&a, &b);
        prop_assert!((0.0..=1.0).contains(&f));
        prop_assert!(close(f, item_f1(&b, &a)));
        if accuracy(&a, &b) == 1.0 {
            prop_assert_eq!(f, 1.0);
        }
        let (oa, of) = oracle_scores(Some(&a), &b);
        prop_assert_eq!(oa, accuracy(&a, &b));
        prop_assert!(close(of, f));
    }

    #[test]
    fn single_items_have_f1_equal_to_accuracy(a in 0u64..3, b in 0u64..3) {
        let x = CanonicalAnswer::Distance { meters: a };
        let y = CanonicalAnswer::Distance { meters: b };
        prop_assert_eq!(item_f1(&x, &y), accuracy(&x, &y));
    }
}
