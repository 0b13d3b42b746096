use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::db_agent::{DbAgent, SqlAttempt};
use crate::domain::{CanonicalAnswer, GeoPoint, QAInstance, Specialist};
use crate::map_agent::{MapAgent, DEFAULT_ATTEMPT_CAP};
use crate::slu::SluPrediction;
use crate::tools::ToolRequest;

use super::backend::{call_backend, CallRecord, ChatBackend, Stage, StageContext};
use super::prompts;
use super::protocol::{
    parse_answer, parse_plan, parse_sufficiency, AgentResult, AgentTask, AnswerEnvelope, Directive, Evidence,
    Exchange,
};

pub const DEFAULT_STEP_CAP: usize = 25;

/// Replace a live stage's output with gold. `slu` is applied by the
/// caller, which chooses the SLU fed into the episode.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Injection {
    pub slu: bool,
    pub sql: bool,
    pub api: bool,
}

impl Injection {
    pub const NONE: Injection = Injection { slu: false, sql: false, api: false };

    /// The four cumulative rungs: none, slu, slu+sql, slu+sql+api.
    pub fn ladder() -> [(&'static str, Injection); 4] {
        [
            ("none", Injection::NONE),
            ("slu", Injection { slu: true, ..Injection::NONE }),
            ("slu+sql", Injection { slu: true, sql: true, api: false }),
            ("slu+sql+api", Injection { slu: true, sql: true, api: true }),
        ]
    }

    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        if self.slu {
            parts.push("slu");
        }
        if self.sql {
            parts.push("sql");
        }
        if self.api {
            parts.push("api");
        }
        if parts.is_empty() {
            "none".into()
        } else {
            parts.join("+")
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SufficiencyMode {
    /// Sufficient once every planned directive has been consumed.
    #[default]
    Rule,
    /// Ask the backend; fall back to the rule when its reply is unparseable.
    Backend,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    pub step_cap: usize,
    pub attempt_cap: usize,
    pub sufficiency: SufficiencyMode,
    pub inject: Injection,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        EpisodeConfig {
            step_cap: DEFAULT_STEP_CAP,
            attempt_cap: DEFAULT_ATTEMPT_CAP,
            sufficiency: SufficiencyMode::Rule,
            inject: Injection::NONE,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    PlanParse,
    StepCap,
    FinalizeBackend,
    DeclaredUnanswerable,
    UnparsedAnswer,
}

impl FailureKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            FailureKind::PlanParse => "plan_parse",
            FailureKind::StepCap => "step_cap",
            FailureKind::FinalizeBackend => "finalize_backend",
            FailureKind::DeclaredUnanswerable => "declared_unanswerable",
            FailureKind::UnparsedAnswer => "unparsed_answer",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanEvent {
    pub directives: Vec<Directive>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feedback: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispatchRecord {
    pub specialist: Specialist,
    pub task: AgentTask,
    pub result: AgentResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTranscript {
    pub instance_id: String,
    pub question: String,
    pub slu: SluPrediction,
    pub injection: Injection,
    pub plans: Vec<PlanEvent>,
    pub dispatches: Vec<DispatchRecord>,
    pub sql_attempts: Vec<SqlAttempt>,
    pub tool_calls: Vec<ToolRequest>,
    pub backend_calls: Vec<CallRecord>,
    /// `None` means the episode ended with an unanswerable verdict.
    pub final_answer: Option<CanonicalAnswer>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<FailureKind>,
    pub step_count: usize,
}

impl EpisodeTranscript {
    pub fn is_unanswerable(&self) -> bool {
        self.final_answer.is_none()
    }

    pub fn route(&self) -> Vec<Specialist> {
        self.dispatches.iter().map(|d| d.specialist).collect()
    }
}

/// Plans, dispatches to the two specialists, replans on failure and
/// composes the final answer.
pub struct Supervisor<'a> {
    backend: &'a dyn ChatBackend,
    db: &'a DbAgent<'a>,
    map: &'a MapAgent<'a>,
    config: EpisodeConfig,
}

struct Run<'q> {
    question: &'q str,
    slu: &'q SluPrediction,
    steps: usize,
    evidence: Vec<Evidence>,
    context: BTreeMap<String, GeoPoint>,
    completed: Vec<Specialist>,
    history: Vec<Exchange>,
    log: Vec<CallRecord>,
}

impl<'a> Supervisor<'a> {
    pub fn new(backend: &'a dyn ChatBackend, db: &'a DbAgent<'a>, map: &'a MapAgent<'a>, config: EpisodeConfig) -> Self {
        Supervisor {
            backend,
            db,
            map,
            config,
        }
    }

    pub fn config(&self) -> &EpisodeConfig {
        &self.config
    }

    fn stage_context(&self, run: &Run<'_>, feedback: Option<String>) -> StageContext {
        StageContext {
            question: run.question.to_string(),
            intents: run.slu.intents.clone(),
            slots: run.slu.slots.clone(),
            evidence: run.evidence.clone(),
            completed: run.completed.clone(),
            feedback,
            ..Default::default()
        }
    }

    /// One plan event: a call plus at most one reprompt.
    fn plan(&self, run: &mut Run<'_>, feedback: Option<String>) -> Result<Vec<Directive>, String> {
        let mut fb = feedback;
        for _ in 0..2 {
            let user = prompts::plan_message(
                run.question,
                &run.slu.intents,
                &run.slu.slots,
                &run.history,
                &run.evidence,
                fb.as_deref(),
            );
            let ctx = self.stage_context(run, fb.clone());
            match call_backend(self.backend, Stage::Plan, prompts::SUPERVISOR, user, ctx, &mut run.log) {
                Ok(text) => match parse_plan(&text) {
                    Ok(p) => return Ok(p),
                    Err(e) => fb = Some(format!("{e}; write one 'N. db_agent|map_agent: task' line per step")),
                },
                Err(e) => fb = Some(e.to_string()),
            }
        }
        Err(fb.unwrap_or_default())
    }

    fn sufficient(&self, run: &mut Run<'_>, remaining: usize) -> bool {
        let rule = remaining == 0;
        if self.config.sufficiency == SufficiencyMode::Rule {
            return rule;
        }
        let user = prompts::sufficiency_message(run.question, remaining, &run.evidence);
        let ctx = self.stage_context(run, None);
        match call_backend(self.backend, Stage::Sufficiency, prompts::SUFFICIENCY, user, ctx, &mut run.log) {
            Ok(text) => parse_sufficiency(&text).unwrap_or(rule),
            Err(_) => rule,
        }
    }

    fn finalize(&self, run: &mut Run<'_>) -> (Option<CanonicalAnswer>, Option<FailureKind>) {
        let user = prompts::finalize_message(run.question, &run.evidence);
        let ctx = self.stage_context(run, None);
        match call_backend(self.backend, Stage::Finalize, prompts::FINALIZE, user, ctx, &mut run.log) {
            Ok(text) => match parse_answer(&text) {
                AnswerEnvelope::Answer(a) => (Some(a), None),
                AnswerEnvelope::Unanswerable => (None, Some(FailureKind::DeclaredUnanswerable)),
                AnswerEnvelope::Raw(a) => (Some(a), Some(FailureKind::UnparsedAnswer)),
            },
            Err(_) => (None, Some(FailureKind::FinalizeBackend)),
        }
    }

    /// Run one question to a verdict. `gold` is consulted only for the SQL
    /// and API injection switches.
    pub fn run_episode(
        &self,
        instance_id: &str,
        question: &str,
        slu: &SluPrediction,
        gold: Option<&QAInstance>,
    ) -> EpisodeTranscript {
        let mut run = Run {
            question,
            slu,
            steps: 0,
            evidence: Vec::new(),
            context: BTreeMap::new(),
            completed: Vec::new(),
            history: Vec::new(),
            log: Vec::new(),
        };
        let mut t = EpisodeTranscript {
            instance_id: instance_id.to_string(),
            question: question.to_string(),
            slu: slu.clone(),
            injection: self.config.inject,
            plans: Vec::new(),
            dispatches: Vec::new(),
            sql_attempts: Vec::new(),
            tool_calls: Vec::new(),
            backend_calls: Vec::new(),
            final_answer: None,
            failure: None,
            step_count: 0,
        };
        let gold_sql = gold.filter(|_| self.config.inject.sql).map(|g| g.sql_trace.as_slice());
        let gold_api: Option<Vec<ToolRequest>> = gold
            .filter(|_| self.config.inject.api)
            .map(|g| g.tool_trace.iter().map(|s| s.request.clone()).collect());
        let cap = self.config.step_cap.max(1);

        let mut queue: VecDeque<Directive> = VecDeque::new();
        let mut pending_feedback: Option<String> = None;
        let mut need_plan = true;
        loop {
            if need_plan {
                if run.steps >= cap {
                    t.failure = Some(FailureKind::StepCap);
                    break;
                }
                run.steps += 1;
                let fb = pending_feedback.take();
                match self.plan(&mut run, fb.clone()) {
                    Ok(p) => {
                        t.plans.push(PlanEvent {
                            directives: p.clone(),
                            feedback: fb,
                        });
                        queue = p.into();
                        need_plan = false;
                    }
                    Err(_) => {
                        t.failure = Some(FailureKind::PlanParse);
                        break;
                    }
                }
            }
            let Some(d) = queue.pop_front() else {
                pending_feedback = Some("the plan is finished but the evidence does not answer the question".into());
                need_plan = true;
                continue;
            };
            if run.steps >= cap {
                t.failure = Some(FailureKind::StepCap);
                break;
            }
            run.steps += 1;
            let task = AgentTask {
                task_description: d.description.clone(),
                question: question.to_string(),
                intents: slu.intents.clone(),
                slots: slu.slots.clone(),
                context: run.context.clone(),
                evidence: run.evidence.clone(),
                history: run.history.clone(),
            };
            let result = match d.specialist {
                Specialist::DbAgent => {
                    let out = self.db.handle(&task, self.backend, gold_sql, &mut run.log);
                    t.sql_attempts.extend(out.attempts);
                    out.result
                }
                Specialist::MapAgent => {
                    let out = self.map.handle(&task, self.backend, gold_api.as_deref(), &mut run.log);
                    t.tool_calls.extend(out.calls);
                    out.result
                }
            };
            run.history.push(Exchange {
                specialist: d.specialist,
                task_description: d.description.clone(),
                status: result.status,
                error_report: result.error_report.clone(),
            });
            t.dispatches.push(DispatchRecord {
                specialist: d.specialist,
                task,
                result: result.clone(),
            });
            if result.is_success() {
                for e in &result.evidence {
                    if let Evidence::Coordinates { map } = e {
                        for (k, v) in map {
                            run.context.entry(k.clone()).or_insert(*v);
                        }
                    }
                }
                run.evidence.extend(result.evidence);
                run.completed.push(d.specialist);
                if self.sufficient(&mut run, queue.len()) {
                    let (answer, failure) = self.finalize(&mut run);
                    t.final_answer = answer;
                    t.failure = failure;
                    break;
                }
            } else {
                pending_feedback = Some(format!(
                    "{} reported {}: {}",
                    d.specialist.as_str(),
                    result.status.as_str(),
                    result.error_report.unwrap_or_default()
                ));
                need_plan = true;
            }
        }
        t.step_count = run.steps;
        t.backend_calls = run.log;
        t
    }
}
