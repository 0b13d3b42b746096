//! Scoring and experiment running: exact-match accuracy and item F1 per
//! question type, intermediate trace metrics (executable SQL ratio,
//! pass@1, tool-call label accuracy, planning accuracy), SLU metrics and
//! the gold-injection ablation ladder.

mod metrics;
mod suite;

pub use metrics::{
    accuracy, check_alignment, item_f1, rows_equal, score_verdict, trace_hits, trace_metrics, EvalError, Ratio,
    TraceHits, TraceMetrics,
};
pub use suite::{
    aggregate, render_table, run_ablation, run_suite, save_run, type_key, EvalReport, RunConfig, SuiteEnv, SuiteRun,
    TypeScore,
};
