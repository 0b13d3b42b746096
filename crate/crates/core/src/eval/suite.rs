use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agent::{ChatBackend, EpisodeConfig, EpisodeTranscript, Injection, SufficiencyMode, Supervisor, DEFAULT_STEP_CAP};
use crate::db_agent::{Bm25Params, DbAgent};
use crate::domain::{QAInstance, QuestionType};
use crate::map_agent::{MapAgent, DEFAULT_ATTEMPT_CAP};
use crate::slu::{slu_metrics, SluMetrics, SluPrediction, SluStrategy};
use crate::store::GeoStore;
use crate::tools::ToolCache;

use super::metrics::{check_alignment, score_verdict, trace_hits, EvalError, Ratio, TraceMetrics};

/// Everything that shapes a run. Recorded verbatim in the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub split: String,
    pub backend: String,
    pub slu_strategy: String,
    pub inject: Injection,
    pub step_cap: usize,
    pub attempt_cap: usize,
    pub sufficiency: SufficiencyMode,
    pub top_k: usize,
    pub seed: u64,
    /// Worker threads; 0 lets rayon decide.
    pub parallelism: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            split: "test".into(),
            backend: "oracle".into(),
            slu_strategy: "lexicon".into(),
            inject: Injection::NONE,
            step_cap: DEFAULT_STEP_CAP,
            attempt_cap: DEFAULT_ATTEMPT_CAP,
            sufficiency: SufficiencyMode::Rule,
            top_k: 3,
            seed: 7,
            parallelism: 0,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.step_cap == 0 {
            return Err(EvalError::Config("step_cap must be at least 1".into()));
        }
        if self.attempt_cap == 0 {
            return Err(EvalError::Config("attempt_cap must be at least 1".into()));
        }
        Ok(())
    }
}

/// Shared, read-only inputs of a run.
pub struct SuiteEnv<'a> {
    pub store: &'a GeoStore,
    pub cache: &'a ToolCache,
    pub backend: &'a dyn ChatBackend,
    /// Required unless SLU injection is on.
    pub slu: Option<&'a dyn SluStrategy>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TypeScore {
    pub count: usize,
    pub accuracy: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub label: String,
    pub config: RunConfig,
    pub episodes: usize,
    /// Keyed "type_1", "type_2", "type_3"; counts sum to `episodes`.
    pub per_type: BTreeMap<String, TypeScore>,
    pub overall: TypeScore,
    pub trace: TraceMetrics,
    pub slu: SluMetrics,
    /// Failure kind (or "wrong_answer") to episode count.
    pub failures: BTreeMap<String, usize>,
    pub unanswerable: usize,
    pub backend_errors: usize,
    pub max_steps: usize,
}

pub fn type_key(t: QuestionType) -> String {
    format!("type_{}", t.number())
}

/// Fold transcripts into a report. The result does not depend on the
/// order of the pairs: they are sorted by instance id before summing.
pub fn aggregate(
    label: &str,
    config: &RunConfig,
    transcripts: &[EpisodeTranscript],
    golds: &[QAInstance],
) -> Result<EvalReport, EvalError> {
    check_alignment(transcripts, golds)?;
    let mut pairs: Vec<(&EpisodeTranscript, &QAInstance)> = transcripts.iter().zip(golds).collect();
    pairs.sort_by(|a, b| a.1.id.cmp(&b.1.id));

    let mut sums: BTreeMap<String, (usize, f64, f64)> = QuestionType::ALL
        .iter()
        .map(|t| (type_key(*t), (0, 0.0, 0.0)))
        .collect();
    let mut failures = BTreeMap::new();
    let (mut ecr, mut pass, mut api, mut api_total, mut plan) = (0, 0, 0, 0, 0);
    let (mut unanswerable, mut backend_errors, mut max_steps) = (0, 0, 0);
    let mut preds = Vec::with_capacity(pairs.len());
    let mut gold_slu = Vec::with_capacity(pairs.len());
    for (t, g) in &pairs {
        let (acc, f1) = score_verdict(t.final_answer.as_ref(), &g.answer);
        let e = sums.entry(type_key(g.question_type)).or_default();
        e.0 += 1;
        e.1 += acc;
        e.2 += f1;
        if let Some(k) = t.failure {
            *failures.entry(k.as_str().to_string()).or_insert(0) += 1;
        } else if acc < 1.0 {
            *failures.entry("wrong_answer".to_string()).or_insert(0) += 1;
        }
        unanswerable += t.is_unanswerable() as usize;
        backend_errors += t.backend_calls.iter().filter(|c| c.error.is_some()).count();
        max_steps = max_steps.max(t.step_count);
        let h = trace_hits(t, g);
        ecr += h.executable as usize;
        pass += h.pass_at_1 as usize;
        plan += h.planning as usize;
        if let Some(ok) = h.api_label {
            api_total += 1;
            api += ok as usize;
        }
        preds.push(t.slu.clone());
        gold_slu.push(SluPrediction::gold(g));
    }
    let score = |(n, a, f): (usize, f64, f64)| TypeScore {
        count: n,
        accuracy: if n == 0 { 0.0 } else { a / n as f64 },
        f1: if n == 0 { 0.0 } else { f / n as f64 },
    };
    let total = sums
        .values()
        .fold((0, 0.0, 0.0), |acc, s| (acc.0 + s.0, acc.1 + s.1, acc.2 + s.2));
    let n = pairs.len();
    Ok(EvalReport {
        label: label.to_string(),
        config: config.clone(),
        episodes: n,
        per_type: sums.into_iter().map(|(k, v)| (k, score(v))).collect(),
        overall: score(total),
        trace: TraceMetrics {
            ecr: Ratio::new(ecr, n),
            pass_at_1: Ratio::new(pass, n),
            api_label: Ratio::new(api, api_total),
            planning: Ratio::new(plan, n),
        },
        slu: slu_metrics(&preds, &gold_slu).map_err(EvalError::Config)?,
        failures,
        unanswerable,
        backend_errors,
        max_steps,
    })
}

#[derive(Debug, Clone)]
pub struct SuiteRun {
    pub transcripts: Vec<EpisodeTranscript>,
    pub report: EvalReport,
}

/// Run every instance through a fresh supervisor episode and aggregate.
/// Backend failures surface as failure counts, never as an error.
pub fn run_suite(
    label: &str,
    instances: &[QAInstance],
    env: &SuiteEnv<'_>,
    config: &RunConfig,
) -> Result<SuiteRun, EvalError> {
    config.validate()?;
    if env.slu.is_none() && !config.inject.slu {
        return Err(EvalError::Config("no SLU strategy configured and SLU injection is off".into()));
    }
    let db = DbAgent::new(env.store, Bm25Params::default()).with_top_k(config.top_k);
    let map = MapAgent::new(env.cache, config.attempt_cap);
    let supervisor = Supervisor::new(
        env.backend,
        &db,
        &map,
        EpisodeConfig {
            step_cap: config.step_cap,
            attempt_cap: config.attempt_cap,
            sufficiency: config.sufficiency,
            inject: config.inject,
        },
    );
    let episode = |inst: &QAInstance| {
        let slu = match (config.inject.slu, env.slu) {
            (false, Some(s)) => s.predict(&inst.question),
            _ => SluPrediction::gold(inst),
        };
        supervisor.run_episode(&inst.id, &inst.question, &slu, Some(inst))
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.parallelism)
        .build()
        .map_err(|e| EvalError::Config(e.to_string()))?;
    let transcripts: Vec<EpisodeTranscript> = pool.install(|| instances.par_iter().map(episode).collect());
    let report = aggregate(label, config, &transcripts, instances)?;
    Ok(SuiteRun { transcripts, report })
}

/// Sweep the four cumulative injection rungs: none, slu, slu+sql,
/// slu+sql+api.
pub fn run_ablation(instances: &[QAInstance], env: &SuiteEnv<'_>, base: &RunConfig) -> Result<Vec<SuiteRun>, EvalError> {
    Injection::ladder()
        .into_iter()
        .map(|(label, inject)| {
            let config = RunConfig {
                inject,
                ..base.clone()
            };
            run_suite(label, instances, env, &config)
        })
        .collect()
}

/// Fixed-width table: one row per report, accuracy and F1 per question
/// type and overall, then the trace metrics.
pub fn render_table(reports: &[EvalReport]) -> String {
    let mut out = format!(
        "{:<14} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7}\n",
        "run", "T1 Acc", "T1 F1", "T2 Acc", "T2 F1", "T3 Acc", "T3 F1", "All Acc", "All F1", "ECR", "pass@1", "API", "Plan"
    );
    for r in reports {
        let t = |k: &str| r.per_type.get(k).copied().unwrap_or_default();
        let (t1, t2, t3) = (t("type_1"), t("type_2"), t("type_3"));
        out.push_str(&format!(
            "{:<14} {:>7.4} {:>7.4} {:>7.4} {:>7.4} {:>7.4} {:>7.4} {:>7.4} {:>7.4} {:>7.4} {:>7.4} {:>7.4} {:>7.4}\n",
            r.label,
            t1.accuracy,
            t1.f1,
            t2.accuracy,
            t2.f1,
            t3.accuracy,
            t3.f1,
            r.overall.accuracy,
            r.overall.f1,
            r.trace.ecr.value,
            r.trace.pass_at_1.value,
            r.trace.api_label.value,
            r.trace.planning.value,
        ));
    }
    out
}

/// Persist a run as `transcripts.jsonl`, `report.json` and `report.txt`.
/// An existing non-empty directory is refused unless `overwrite`.
pub fn save_run(dir: &Path, run: &SuiteRun, overwrite: bool) -> Result<(), EvalError> {
    let io = |e: std::io::Error| EvalError::Io(format!("{}: {e}", dir.display()));
    if dir.exists() && std::fs::read_dir(dir).map_err(io)?.next().is_some() {
        if !overwrite {
            return Err(EvalError::Config(format!(
                "run directory {} already exists; pass the overwrite flag to replace it",
                dir.display()
            )));
        }
        std::fs::remove_dir_all(dir).map_err(io)?;
    }
    std::fs::create_dir_all(dir).map_err(io)?;
    let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join("transcripts.jsonl")).map_err(io)?);
    for t in &run.transcripts {
        let line = serde_json::to_string(t).map_err(|e| EvalError::Io(e.to_string()))?;
        writeln!(f, "{line}").map_err(io)?;
    }
    f.flush().map_err(io)?;
    let json = serde_json::to_string_pretty(&run.report).map_err(|e| EvalError::Io(e.to_string()))?;
    std::fs::write(dir.join("report.json"), json + "\n").map_err(io)?;
    std::fs::write(dir.join("report.txt"), render_table(std::slice::from_ref(&run.report))).map_err(io)?;
    Ok(())
}
