//! Database specialist: writes a hypothetical table caption, retrieves the
//! closest real caption with BM25, asks the backend for one SQL statement,
//! runs it read-only and packages rows plus entity coordinates.
//!
//! Coordinate columns are found by name: a `<prefix>name` column paired
//! with `<prefix>latitude`/`<prefix>lat` and
//! `<prefix>longitude`/`<prefix>lon`/`<prefix>lng` (case-insensitive).

mod bm25;

pub use bm25::{tokenize, Bm25Index, Bm25Params, RetrievalError, Scored};

use serde::{Deserialize, Serialize};

use crate::agent::backend::{call_backend, CallRecord, ChatBackend, StageContext, Stage};
use crate::agent::prompts;
use crate::agent::protocol::{extract_sql, parse_caption, AgentResult, AgentTask, Evidence};
use crate::domain::SqlStep;
use crate::store::{GeoStore, TableCaption};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SqlSource {
    Generated,
    GtInjected,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SqlCandidate {
    pub statement: String,
    pub source: SqlSource,
}

/// A candidate together with what happened when it ran.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SqlAttempt {
    pub candidate: SqlCandidate,
    pub executed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rows: Option<crate::domain::ResultSet>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DbOutcome {
    pub result: AgentResult,
    pub attempts: Vec<SqlAttempt>,
    pub retrieved: Vec<Scored>,
}

pub struct DbAgent<'a> {
    store: &'a GeoStore,
    captions: Vec<TableCaption>,
    index: Bm25Index,
    top_k: usize,
}

impl<'a> DbAgent<'a> {
    pub fn new(store: &'a GeoStore, params: Bm25Params) -> Self {
        let captions: Vec<TableCaption> = store.list_captions().to_vec();
        let texts: Vec<&str> = captions.iter().map(|c| c.caption.as_str()).collect();
        let index = Bm25Index::new(&texts, params);
        DbAgent {
            store,
            captions,
            index,
            top_k: 1,
        }
    }

    pub fn with_top_k(mut self, k: usize) -> Self {
        self.top_k = k.max(1);
        self
    }

    pub fn index(&self) -> &Bm25Index {
        &self.index
    }

    fn context(task: &AgentTask) -> StageContext {
        StageContext {
            question: task.question.clone(),
            intents: task.intents.clone(),
            slots: task.slots.clone(),
            task: Some(task.clone()),
            ..Default::default()
        }
    }

    pub fn caption_summary(
        &self,
        task: &AgentTask,
        backend: &dyn ChatBackend,
        log: &mut Vec<CallRecord>,
    ) -> Result<String, String> {
        let user = prompts::caption_message(&task.question, &task.intents, &task.slots);
        let text = call_backend(backend, Stage::Caption, prompts::DB_CAPTION, user, Self::context(task), log)
            .map_err(|e| e.to_string())?;
        parse_caption(&text).ok_or_else(|| "empty caption summary".to_string())
    }

    pub fn retrieve_caption(&self, summary: &str) -> Result<Vec<Scored>, RetrievalError> {
        self.index.retrieve(summary, self.top_k)
    }

    /// One statement from the fenced envelope, with a single reprompt.
    pub fn generate_sql(
        &self,
        task: &AgentTask,
        caption: &TableCaption,
        backend: &dyn ChatBackend,
        log: &mut Vec<CallRecord>,
    ) -> Result<SqlCandidate, String> {
        let mut feedback: Option<String> = None;
        for _ in 0..2 {
            let mut ctx = Self::context(task);
            ctx.caption = Some(caption.clone());
            ctx.feedback = feedback.clone();
            let user = prompts::sql_message(task, caption, feedback.as_deref());
            match call_backend(backend, Stage::Sql, prompts::DB_SQL, user, ctx, log) {
                Ok(text) => match extract_sql(&text) {
                    Some(statement) => {
                        return Ok(SqlCandidate {
                            statement,
                            source: SqlSource::Generated,
                        })
                    }
                    None => feedback = Some("the reply had no ```sql fenced block".into()),
                },
                Err(e) => feedback = Some(e.to_string()),
            }
        }
        Err(format!("SQL extraction failed: {}", feedback.unwrap_or_default()))
    }

    pub fn execute_and_package(&self, candidate: &SqlCandidate, table: Option<&str>) -> (AgentResult, SqlAttempt) {
        match self.store.execute_sql(&candidate.statement) {
            Ok(rs) => {
                let coords = rs.coordinate_map();
                let mut evidence = vec![Evidence::Rows {
                    table: table.map(String::from),
                    statement: candidate.statement.clone(),
                    result: rs.clone(),
                }];
                if !coords.is_empty() {
                    evidence.push(Evidence::Coordinates { map: coords });
                }
                (
                    AgentResult::success(evidence),
                    SqlAttempt {
                        candidate: candidate.clone(),
                        executed: true,
                        error: None,
                        rows: Some(rs),
                    },
                )
            }
            Err(e) => (
                AgentResult::error(format!("SQL execution failed: {e}")),
                SqlAttempt {
                    candidate: candidate.clone(),
                    executed: false,
                    error: Some(e.to_string()),
                    rows: None,
                },
            ),
        }
    }

    /// Full sub-task. With `injected` gold steps, the statement for this
    /// sub-task is taken from gold (indexed by how many row sets the task
    /// already carries) and no backend call is made.
    pub fn handle(
        &self,
        task: &AgentTask,
        backend: &dyn ChatBackend,
        injected: Option<&[SqlStep]>,
        log: &mut Vec<CallRecord>,
    ) -> DbOutcome {
        let step = task.evidence.iter().filter(|e| matches!(e, Evidence::Rows { .. })).count();
        if let Some(gold) = injected.and_then(|g| g.get(step)) {
            let cand = SqlCandidate {
                statement: gold.statement.clone(),
                source: SqlSource::GtInjected,
            };
            let (result, attempt) = self.execute_and_package(&cand, None);
            return DbOutcome {
                result,
                attempts: vec![attempt],
                retrieved: vec![],
            };
        }
        let fail = |msg: String, retrieved: Vec<Scored>| DbOutcome {
            result: AgentResult::error(msg),
            attempts: vec![],
            retrieved,
        };
        let summary = match self.caption_summary(task, backend, log) {
            Ok(s) => s,
            Err(e) => return fail(format!("caption summary failed: {e}"), vec![]),
        };
        let retrieved = match self.retrieve_caption(&summary) {
            Ok(r) => r,
            Err(e) => return fail(e.to_string(), vec![]),
        };
        let caption = self.captions[retrieved[0].index].clone();
        let cand = match self.generate_sql(task, &caption, backend, log) {
            Ok(c) => c,
            Err(e) => return fail(e, retrieved),
        };
        let (result, attempt) = self.execute_and_package(&cand, Some(&caption.table_id));
        DbOutcome {
            result,
            attempts: vec![attempt],
            retrieved,
        }
    }
}
