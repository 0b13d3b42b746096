mod common;

use geoqa_core::agent::OracleBackend;
use geoqa_core::domain::QuestionType;
use geoqa_core::eval::{render_table, run_ablation, run_suite, save_run, EvalError, RunConfig, SuiteEnv};
use geoqa_core::slu::{Gazetteer, LexiconSlu};

#[test]
fn oracle_closes_and_runs_are_reproducible() {
    let w = common::build_world(60, 60, 30, 11);
    for t in QuestionType::ALL {
        assert!(w.instances.iter().any(|i| i.question_type == t), "no {t} instances");
    }
    let oracle = OracleBackend::new(&w.instances, &w.templates, w.store.list_captions().to_vec());
    let slu = LexiconSlu::new(Gazetteer::from_store(&w.store), &w.templates);
    let env = SuiteEnv {
        store: &w.store,
        cache: &w.cache,
        backend: &oracle,
        slu: Some(&slu),
    };
    let a = run_suite("none", &w.instances, &env, &RunConfig::default()).unwrap();
    let r = &a.report;
    assert_eq!((r.overall.accuracy, r.overall.f1), (1.0, 1.0));
    for m in [r.trace.ecr, r.trace.pass_at_1, r.trace.api_label, r.trace.planning] {
        assert_eq!(m.value, 1.0);
    }
    assert!(r.failures.is_empty());

    let serial = RunConfig {
        parallelism: 1,
        ..Default::default()
    };
    let b = run_suite("none", &w.instances, &env, &serial).unwrap();
    assert_eq!(
        serde_json::to_string(&a.transcripts).unwrap(),
        serde_json::to_string(&b.transcripts).unwrap()
    );
}

#[test]
fn ablation_ladder_and_run_directories() {
    let w = common::build_world(40, 40, 10, 12);
    let oracle = OracleBackend::new(&w.instances, &w.templates, w.store.list_captions().to_vec());
    let slu = LexiconSlu::new(Gazetteer::from_store(&w.store), &w.templates);
    let env = SuiteEnv {
        store: &w.store,
        cache: &w.cache,
        backend: &oracle,
        slu: Some(&slu),
    };
    let runs = run_ablation(&w.instances, &env, &RunConfig::default()).unwrap();
    let labels: Vec<&str> = runs.iter().map(|r| r.report.label.as_str()).collect();
    assert_eq!(labels, ["none", "slu", "slu+sql", "slu+sql+api"]);
    for r in &runs {
        assert_eq!(r.report.overall.accuracy, 1.0, "{}", r.report.label);
    }
    let reports: Vec<_> = runs.iter().map(|r| r.report.clone()).collect();
    let table = render_table(&reports);
    assert_eq!(table.lines().count(), 5);

    let dir = tempfile::tempdir().unwrap();
    let run_dir = dir.path().join("oracle");
    save_run(&run_dir, &runs[0], false).unwrap();
    for f in ["transcripts.jsonl", "report.json", "report.txt"] {
        assert!(run_dir.join(f).exists());
    }
    let lines = std::fs::read_to_string(run_dir.join("transcripts.jsonl")).unwrap().lines().count();
    assert_eq!(lines, w.instances.len());
    assert!(matches!(save_run(&run_dir, &runs[1], false), Err(EvalError::Config(_))));
    save_run(&run_dir, &runs[1], true).unwrap();
    let back: geoqa_core::eval::EvalReport =
        serde_json::from_str(&std::fs::read_to_string(run_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(back.label, "slu");
}

#[test]
fn missing_slu_strategy_is_a_configuration_error() {
    let w = common::build_world(20, 20, 2, 13);
    let oracle = OracleBackend::new(&w.instances, &w.templates, w.store.list_captions().to_vec());
    let env = SuiteEnv {
        store: &w.store,
        cache: &w.cache,
        backend: &oracle,
        slu: None,
    };
    assert!(matches!(
        run_suite("x", &w.instances, &env, &RunConfig::default()),
        Err(EvalError::Config(_))
    ));
    let zero = RunConfig {
        step_cap: 0,
        ..Default::default()
    };
    assert!(run_suite("x", &w.instances, &env, &zero).is_err());
}
