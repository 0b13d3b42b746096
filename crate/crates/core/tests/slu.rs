mod common;

use std::sync::Arc;

use geoqa_core::agent::OracleBackend;
use geoqa_core::generator::{stratified_split, SplitSpec};
use geoqa_core::slu::{slu_metrics, FewShotSlu, Gazetteer, LexiconSlu, SluPrediction, SluStrategy, DEFAULT_SHOTS};

#[test]
fn lexicon_baseline_on_the_test_split() {
    let w = common::build_world(200, 150, 60, 31);
    let split = stratified_split(&w.instances, &SplitSpec::default());
    let slu = LexiconSlu::new(Gazetteer::from_store(&w.store), &w.templates);
    let preds: Vec<SluPrediction> = split.test.iter().map(|i| slu.predict(&i.question)).collect();
    let golds: Vec<SluPrediction> = split.test.iter().map(SluPrediction::gold).collect();
    let m = slu_metrics(&preds, &golds).unwrap();
    for (p, g) in preds.iter().zip(&golds).filter(|(p, g)| p != g).take(5) {
        eprintln!("pred {p:?}\ngold {g:?}");
    }
    eprintln!("{} test instances: slot f1 {:.4}, intent acc {:.4}", split.test.len(), m.slot.f1, m.intent_accuracy);
    assert!(m.slot.f1 >= 0.95);
    assert!(m.intent_accuracy >= 0.95);
    for (p, i) in preds.iter().zip(&split.test) {
        p.check(&i.question).unwrap();
    }
}

#[test]
fn few_shot_prompt_covers_every_intent() {
    let w = common::build_world(40, 40, 8, 32);
    let backend = Arc::new(OracleBackend::new(&w.instances, &w.templates, w.store.list_captions().to_vec()));
    let slu = FewShotSlu::from_pool(backend, &w.instances, DEFAULT_SHOTS, 1);
    assert_eq!(slu.example_count(), DEFAULT_SHOTS.min(w.instances.len()));
    let intents: std::collections::BTreeSet<&str> =
        w.instances.iter().flat_map(|i| i.intents.iter().map(String::as_str)).collect();
    for intent in intents {
        assert!(slu.system_prompt().contains(intent), "{intent}");
    }
    let preds: Vec<SluPrediction> = w.instances.iter().take(50).map(|i| slu.predict(&i.question)).collect();
    let golds: Vec<SluPrediction> = w.instances.iter().take(50).map(SluPrediction::gold).collect();
    let m = slu_metrics(&preds, &golds).unwrap();
    assert_eq!((m.slot.f1, m.intent_accuracy), (1.0, 1.0));
}
