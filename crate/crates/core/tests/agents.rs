mod common;

use std::sync::{mpsc, Arc};
use std::time::Duration;

use geoqa_core::agent::{
    AdversarialBackend, ChatBackend, ErrorBackend, FailureKind, FaultyBackend, Injection, OracleBackend, Stage,
    DEFAULT_STEP_CAP,
};
use geoqa_core::domain::{QAInstance, QuestionType, Specialist};
use geoqa_core::eval::{run_suite, score_verdict, RunConfig, SuiteEnv, SuiteRun};
use geoqa_core::slu::{FewShotSlu, Gazetteer, LexiconSlu, SluStrategy};
use common::World;

fn oracle(w: &World) -> Arc<dyn ChatBackend> {
    Arc::new(OracleBackend::new(&w.instances, &w.templates, w.store.list_captions().to_vec()))
}

fn run(w: &World, backend: &dyn ChatBackend, slu: &dyn SluStrategy, inject: Injection, insts: &[QAInstance]) -> SuiteRun {
    let env = SuiteEnv {
        store: &w.store,
        cache: &w.cache,
        backend,
        slu: Some(slu),
    };
    let config = RunConfig {
        inject,
        ..Default::default()
    };
    run_suite("t", insts, &env, &config).unwrap()
}

fn wrong(run: &SuiteRun, insts: &[QAInstance]) -> Vec<QAInstance> {
    run.transcripts
        .iter()
        .zip(insts)
        .filter(|(t, g)| score_verdict(t.final_answer.as_ref(), &g.answer).0 < 1.0)
        .map(|(_, g)| g.clone())
        .collect()
}

fn world() -> World {
    common::build_world(50, 50, 15, 21)
}

#[test]
fn hostile_backends_terminate_unanswerable() {
    let w = world();
    let insts: Vec<QAInstance> = w.instances.iter().take(200).cloned().collect();
    assert_eq!(insts.len(), 200);
    let lexicon = LexiconSlu::new(Gazetteer::from_store(&w.store), &w.templates);
    let (tx, rx) = mpsc::channel();
    std::thread::scope(|s| {
        s.spawn(|| {
            let adversarial = AdversarialBackend::new();
            let a = run(&w, &adversarial, &lexicon, Injection::NONE, &insts);
            let e = run(&w, &ErrorBackend, &lexicon, Injection::NONE, &insts);
            tx.send((a, e)).unwrap();
        });
        let (a, e) = rx.recv_timeout(Duration::from_secs(120)).expect("episodes hung");
        for t in &a.transcripts {
            assert!(t.is_unanswerable(), "{}", t.instance_id);
            assert!(t.step_count <= DEFAULT_STEP_CAP);
            assert_eq!(t.failure, Some(FailureKind::StepCap));
        }
        for t in &e.transcripts {
            assert!(t.is_unanswerable());
            assert!(t.step_count <= DEFAULT_STEP_CAP);
            assert_eq!(t.failure, Some(FailureKind::PlanParse));
        }
        assert_eq!(a.report.overall.accuracy, 0.0);
        assert_eq!(e.report.unanswerable, 200);
    });
}

#[test]
fn step_cap_is_honored_for_small_caps() {
    let w = world();
    let insts: Vec<QAInstance> = w.instances.iter().take(20).cloned().collect();
    let lexicon = LexiconSlu::new(Gazetteer::from_store(&w.store), &w.templates);
    let adversarial = AdversarialBackend::new();
    for cap in [1, 2, 5] {
        let env = SuiteEnv {
            store: &w.store,
            cache: &w.cache,
            backend: &adversarial,
            slu: Some(&lexicon),
        };
        let r = run_suite("cap", &insts, &env, &RunConfig { step_cap: cap, ..Default::default() }).unwrap();
        assert!(r.transcripts.iter().all(|t| t.step_count <= cap && t.is_unanswerable()));
    }
}

#[test]
fn misrouted_first_plan_is_repaired_by_replanning() {
    let w = world();
    let faulty = FaultyBackend::new(oracle(&w), Stage::Plan);
    let lexicon = LexiconSlu::new(Gazetteer::from_store(&w.store), &w.templates);
    let r = run(&w, &faulty, &lexicon, Injection::NONE, &w.instances);
    assert_eq!(r.report.overall.accuracy, 1.0);
    for (t, g) in r.transcripts.iter().zip(&w.instances) {
        assert_eq!(t.route()[0], Specialist::MapAgent);
        assert!(t.plans.len() >= 2);
        assert!(t.route().ends_with(&g.agent_route));
    }
    assert_eq!(r.report.trace.planning.value, 0.0);
}

#[test]
fn gold_injection_recovers_each_broken_stage() {
    let w = world();
    let base = oracle(&w);
    let lexicon = LexiconSlu::new(Gazetteer::from_store(&w.store), &w.templates);

    // SLU: the few-shot strategy talks to a backend whose SLU stage is broken.
    let broken_slu = FewShotSlu::from_pool(Arc::new(FaultyBackend::new(base.clone(), Stage::Slu)), &w.instances, 26, 1);
    let before = run(&w, base.as_ref(), &broken_slu, Injection::NONE, &w.instances);
    let affected = wrong(&before, &w.instances);
    assert!(!affected.is_empty());
    let after = run(&w, base.as_ref(), &broken_slu, Injection { slu: true, ..Injection::NONE }, &affected);
    assert_eq!(after.report.overall.accuracy, 1.0);

    for (stage, inject) in [
        (Stage::Sql, Injection { sql: true, ..Injection::NONE }),
        (Stage::Tool, Injection { api: true, ..Injection::NONE }),
    ] {
        let faulty = FaultyBackend::new(base.clone(), stage);
        let before = run(&w, &faulty, &lexicon, Injection::NONE, &w.instances);
        let affected = wrong(&before, &w.instances);
        assert!(!affected.is_empty(), "{stage:?}");
        if stage == Stage::Tool {
            assert!(affected.iter().all(|i| i.question_type != QuestionType::Simple));
        }
        let after = run(&w, &faulty, &lexicon, inject, &affected);
        assert_eq!(after.report.overall.accuracy, 1.0, "{stage:?}");
        assert!(after.transcripts.iter().all(|t| t.step_count <= DEFAULT_STEP_CAP));
    }
}

#[test]
fn sql_that_runs_but_returns_wrong_rows_counts_only_toward_ecr() {
    use geoqa_core::agent::{ChatRequest, BackendError};
    use geoqa_core::eval::trace_metrics;

    struct WrongRows(Arc<dyn ChatBackend>);
    impl ChatBackend for WrongRows {
        fn name(&self) -> String {
            "wrong-rows".into()
        }
        fn complete(&self, r: &ChatRequest) -> Result<String, BackendError> {
            let text = self.0.complete(r)?;
            Ok(if r.stage == Stage::Sql {
                text.replace("SELECT ", "SELECT DISTINCT ").replace("WHERE ", "WHERE 1 = 0 AND ")
            } else {
                text
            })
        }
    }
    let w = world();
    let lexicon = LexiconSlu::new(Gazetteer::from_store(&w.store), &w.templates);
    let insts: Vec<QAInstance> = w.instances.iter().filter(|i| i.sql_trace[0].statement.contains("WHERE ")).take(30).cloned().collect();
    let backend = WrongRows(oracle(&w));
    let r = run(&w, &backend, &lexicon, Injection::NONE, &insts);
    let m = trace_metrics(&r.transcripts, &insts).unwrap();
    assert_eq!(m.ecr.value, 1.0);
    assert_eq!(m.pass_at_1.value, 0.0);
}
