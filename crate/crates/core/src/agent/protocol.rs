//! Supervisor/specialist message types and the line-oriented envelopes the
//! prompts mandate. Free text before or around an envelope is ignored.
//!
//! Grammar (one item per line):
//!
//! ```text
//! plan         := directive+
//! directive    := N "." specialist ":" description      N >= 1
//! specialist   := "db_agent" | "map_agent"
//! answer       := "ANSWER:" <canonical answer JSON> | "UNANSWERABLE"
//! sql          := "```sql" NEWLINE statement "```"
//! caption      := "CAPTION:" text
//! call         := "CALL" function <JSON object>
//! synthesis    := "SYNTHESIS" rule                       e.g. "SYNTHESIS argmin"
//! unable       := "UNABLE:" reason
//! sufficiency  := "SUFFICIENT:" ("yes" | "no")
//! ```

use std::collections::BTreeMap;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::answer::{SynthesisRule, ToolObservation};
use crate::domain::{CanonicalAnswer, GeoPoint, ResultSet, SlotAnnotation, Specialist};
use crate::tools::ToolFunction;

/// Typed evidence payload returned by specialists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Evidence {
    Rows {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        table: Option<String>,
        statement: String,
        result: ResultSet,
    },
    Coordinates {
        map: BTreeMap<String, GeoPoint>,
    },
    Tool {
        observation: ToolObservation,
    },
    Derived {
        rule: String,
        answer: CanonicalAnswer,
    },
}

impl Evidence {
    pub fn kind(&self) -> &'static str {
        match self {
            Evidence::Rows { .. } => "rows",
            Evidence::Coordinates { .. } => "coordinates",
            Evidence::Tool { .. } => "tool",
            Evidence::Derived { .. } => "derived",
        }
    }

    /// Compact text rendering for prompts.
    pub fn describe(&self) -> String {
        match self {
            Evidence::Rows { statement, result, .. } => {
                let mut s = format!("SQL: {statement}\ncolumns: {}\n", result.columns.join(" | "));
                for row in result.rows.iter().take(50) {
                    let cells: Vec<String> = row.iter().map(|c| c.to_string()).collect();
                    s.push_str(&cells.join(" | "));
                    s.push('\n');
                }
                if result.rows.len() > 50 {
                    s.push_str(&format!("... {} rows total\n", result.rows.len()));
                }
                s
            }
            Evidence::Coordinates { map } => {
                let parts: Vec<String> = map.iter().map(|(k, v)| format!("{k} = ({v})")).collect();
                format!("coordinates: {}\n", parts.join("; "))
            }
            Evidence::Tool { observation } => format!(
                "tool {} {} -> {}\n",
                observation.request.function.as_str(),
                serde_json::to_string(&observation.request.params).unwrap_or_default(),
                serde_json::to_string(&observation.result.rows).unwrap_or_default()
            ),
            Evidence::Derived { rule, answer } => {
                format!("derived ({rule}): {}\n", serde_json::to_string(answer).unwrap_or_default())
            }
        }
    }
}

/// One completed supervisor/specialist exchange, as seen by later tasks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exchange {
    pub specialist: Specialist,
    pub task_description: String,
    pub status: AgentStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_report: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentTask {
    pub task_description: String,
    pub question: String,
    pub intents: Vec<String>,
    pub slots: Vec<SlotAnnotation>,
    /// Entity name to coordinates; keys are unique by construction.
    pub context: BTreeMap<String, GeoPoint>,
    pub evidence: Vec<Evidence>,
    pub history: Vec<Exchange>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentStatus {
    Success,
    Error,
    Unable,
}

impl AgentStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            AgentStatus::Success => "success",
            AgentStatus::Error => "error",
            AgentStatus::Unable => "unable",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentResult {
    pub status: AgentStatus,
    pub evidence: Vec<Evidence>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_report: Option<String>,
}

impl AgentResult {
    /// Success needs evidence; an empty list is downgraded to an error.
    pub fn success(evidence: Vec<Evidence>) -> Self {
        if evidence.is_empty() {
            return Self::error("specialist produced no evidence");
        }
        AgentResult {
            status: AgentStatus::Success,
            evidence,
            error_report: None,
        }
    }

    pub fn error(report: impl Into<String>) -> Self {
        Self::failed(AgentStatus::Error, report.into())
    }

    pub fn unable(report: impl Into<String>) -> Self {
        Self::failed(AgentStatus::Unable, report.into())
    }

    fn failed(status: AgentStatus, mut report: String) -> Self {
        if report.trim().is_empty() {
            report = format!("specialist reported {}", status.as_str());
        }
        AgentResult {
            status,
            evidence: Vec::new(),
            error_report: Some(report),
        }
    }

    pub fn is_success(&self) -> bool {
        self.status == AgentStatus::Success
    }

    pub fn check(&self) -> Result<(), String> {
        match self.status {
            AgentStatus::Success if self.evidence.is_empty() => Err("success without evidence".into()),
            AgentStatus::Error | AgentStatus::Unable
                if self.error_report.as_deref().is_none_or(|r| r.trim().is_empty()) =>
            {
                Err("failure without error report".into())
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Directive {
    pub specialist: Specialist,
    pub description: String,
}

fn directive_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)^\s*\d+\s*[.)]\s*(db_agent|map_agent)\s*:\s*(.*?)\s*$").expect("directive regex"))
}

pub fn parse_plan(text: &str) -> Result<Vec<Directive>, String> {
    let plan: Vec<Directive> = text
        .lines()
        .filter_map(|l| directive_re().captures(l))
        .map(|c| Directive {
            specialist: Specialist::parse(&c[1].to_ascii_lowercase()).expect("regex restricts names"),
            description: c[2].to_string(),
        })
        .collect();
    if plan.is_empty() {
        Err("no directive lines in planner output".into())
    } else {
        Ok(plan)
    }
}

pub fn format_plan(plan: &[Directive]) -> String {
    plan.iter()
        .enumerate()
        .map(|(i, d)| format!("{}. {}: {}", i + 1, d.specialist.as_str(), d.description))
        .collect::<Vec<_>>()
        .join("\n")
}

#[derive(Debug, Clone, PartialEq)]
pub enum AnswerEnvelope {
    Answer(CanonicalAnswer),
    Unanswerable,
    /// No parseable envelope; the raw output is kept as a Text answer.
    Raw(CanonicalAnswer),
}

pub fn parse_answer(text: &str) -> AnswerEnvelope {
    for line in text.lines().rev() {
        let l = line.trim();
        if l.eq_ignore_ascii_case("UNANSWERABLE") {
            return AnswerEnvelope::Unanswerable;
        }
        if let Some(rest) = l.strip_prefix("ANSWER:") {
            if let Ok(a) = serde_json::from_str::<CanonicalAnswer>(rest.trim()) {
                if a.validate().is_ok() {
                    return AnswerEnvelope::Answer(a);
                }
            }
            break;
        }
    }
    AnswerEnvelope::Raw(CanonicalAnswer::Text {
        value: text.trim().to_string(),
    })
}

pub fn format_answer(answer: Option<&CanonicalAnswer>) -> String {
    match answer {
        Some(a) => format!("ANSWER: {}", serde_json::to_string(a).expect("answers serialize")),
        None => "UNANSWERABLE".into(),
    }
}

/// The first ```sql fenced block; `None` when there is none or it is blank.
pub fn extract_sql(text: &str) -> Option<String> {
    let start = text.find("```sql")? + "```sql".len();
    let rest = &text[start..];
    let end = rest.find("```")?;
    let stmt = rest[..end].trim().trim_end_matches(';').trim();
    (!stmt.is_empty()).then(|| stmt.to_string())
}

pub fn format_sql(statement: &str) -> String {
    format!("```sql\n{statement}\n```")
}

pub fn parse_caption(text: &str) -> Option<String> {
    for line in text.lines() {
        if let Some(rest) = line.trim().strip_prefix("CAPTION:") {
            let c = rest.trim();
            if !c.is_empty() {
                return Some(c.to_string());
            }
        }
    }
    text.lines().map(str::trim).find(|l| !l.is_empty()).map(String::from)
}

/// A tool call as written by the backend: parameters name entities rather
/// than coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallSpec {
    pub function: ToolFunction,
    pub args: serde_json::Map<String, serde_json::Value>,
}

impl CallSpec {
    pub fn to_line(&self) -> String {
        format!(
            "CALL {} {}",
            self.function.as_str(),
            serde_json::Value::Object(self.args.clone())
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MapResponse {
    pub calls: Vec<CallSpec>,
    pub synthesis: Option<SynthesisRule>,
    pub unable: Option<String>,
    /// Lines that looked like envelope items but failed to parse.
    pub malformed: Vec<String>,
}

impl MapResponse {
    pub fn is_empty(&self) -> bool {
        self.calls.is_empty() && self.synthesis.is_none() && self.unable.is_none()
    }
}

pub fn parse_map_response(text: &str) -> MapResponse {
    let mut out = MapResponse::default();
    for line in text.lines().map(str::trim) {
        if let Some(rest) = line.strip_prefix("CALL ") {
            let rest = rest.trim();
            let (name, json) = rest.split_once(char::is_whitespace).unwrap_or((rest, "{}"));
            let parsed = ToolFunction::parse(name).and_then(|f| {
                serde_json::from_str::<serde_json::Value>(json.trim())
                    .ok()
                    .and_then(|v| v.as_object().cloned())
                    .map(|args| CallSpec { function: f, args })
            });
            match parsed {
                Some(c) => out.calls.push(c),
                None => out.malformed.push(line.to_string()),
            }
        } else if let Some(rest) = line.strip_prefix("SYNTHESIS") {
            match SynthesisRule::parse(rest.trim()) {
                Some(r) => out.synthesis = Some(r),
                None => out.malformed.push(line.to_string()),
            }
        } else if let Some(rest) = line.strip_prefix("UNABLE:") {
            out.unable = Some(rest.trim().to_string());
        }
    }
    out
}

pub fn parse_sufficiency(text: &str) -> Option<bool> {
    text.lines().rev().find_map(|l| {
        let rest = l.trim().strip_prefix("SUFFICIENT:")?.trim().to_ascii_lowercase();
        match rest.as_str() {
            "yes" => Some(true),
            "no" => Some(false),
            _ => None,
        }
    })
}
