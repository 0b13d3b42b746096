//! Versioned prompt assets and the user-message renderers that fill them.

use std::fmt::Write as _;
use std::sync::OnceLock;

use serde::Deserialize;

use crate::answer::ToolObservation;
use crate::domain::SlotAnnotation;
use crate::store::TableCaption;

use super::protocol::{AgentTask, Evidence, Exchange};

pub const PROMPT_VERSION: &str = "v1";

pub const SUPERVISOR: &str = include_str!("../../assets/prompts/supervisor_v1.txt");
pub const FINALIZE: &str = include_str!("../../assets/prompts/finalize_v1.txt");
pub const SUFFICIENCY: &str = include_str!("../../assets/prompts/sufficiency_v1.txt");
pub const DB_CAPTION: &str = include_str!("../../assets/prompts/db_caption_v1.txt");
pub const DB_SQL: &str = include_str!("../../assets/prompts/db_sql_v1.txt");
pub const MAP: &str = include_str!("../../assets/prompts/map_v1.txt");
pub const SLU_FEWSHOT: &str = include_str!("../../assets/prompts/slu_fewshot_v1.txt");
pub const PARAPHRASE: &str = include_str!("../../assets/prompts/paraphrase_v1.txt");
pub const TOOL_DESCRIPTIONS: &str = include_str!("../../assets/prompts/tools_v1.json");
const DB_EXAMPLES: &str = include_str!("../../assets/prompts/db_examples_v1.toml");

/// One worked example for the database specialist.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct DbExample {
    pub query: String,
    pub intents: Vec<String>,
    pub slots: Vec<(String, String)>,
    pub caption: String,
    pub sql: String,
}

#[derive(Deserialize)]
struct DbExampleFile {
    example: Vec<DbExample>,
}

pub fn db_examples() -> &'static [DbExample] {
    static EX: OnceLock<Vec<DbExample>> = OnceLock::new();
    EX.get_or_init(|| {
        toml::from_str::<DbExampleFile>(DB_EXAMPLES)
            .expect("bundled database examples parse")
            .example
    })
}

pub fn render_slots(slots: &[SlotAnnotation]) -> String {
    if slots.is_empty() {
        return "(none)".into();
    }
    slots
        .iter()
        .map(|s| format!("{}={}", s.slot_type, s.value))
        .collect::<Vec<_>>()
        .join("; ")
}

fn header(out: &mut String, question: &str, intents: &[String], slots: &[SlotAnnotation]) {
    let _ = writeln!(out, "Question: {question}");
    let _ = writeln!(out, "Intents: {}", if intents.is_empty() { "(none)".into() } else { intents.join(", ") });
    let _ = writeln!(out, "Slots: {}", render_slots(slots));
}

fn evidence_block(out: &mut String, evidence: &[Evidence]) {
    if evidence.is_empty() {
        out.push_str("Evidence: (none yet)\n");
        return;
    }
    out.push_str("Evidence:\n");
    for (i, e) in evidence.iter().enumerate() {
        let _ = write!(out, "[{}] {}", i + 1, e.describe());
    }
}

pub fn plan_message(
    question: &str,
    intents: &[String],
    slots: &[SlotAnnotation],
    history: &[Exchange],
    evidence: &[Evidence],
    feedback: Option<&str>,
) -> String {
    let mut out = String::new();
    header(&mut out, question, intents, slots);
    if !history.is_empty() {
        out.push_str("Previous sub-tasks:\n");
        for h in history {
            let _ = writeln!(
                out,
                "- {} ({}): {}{}",
                h.specialist.as_str(),
                h.status.as_str(),
                h.task_description,
                h.error_report.as_deref().map(|r| format!(" -- {r}")).unwrap_or_default()
            );
        }
        evidence_block(&mut out, evidence);
    }
    if let Some(f) = feedback {
        let _ = writeln!(out, "Problem with the previous attempt: {f}");
        out.push_str("Write a revised plan for the remaining work.\n");
    }
    out
}

pub fn finalize_message(question: &str, evidence: &[Evidence]) -> String {
    let mut out = format!("Question: {question}\n");
    evidence_block(&mut out, evidence);
    out
}

pub fn sufficiency_message(question: &str, remaining: usize, evidence: &[Evidence]) -> String {
    let mut out = format!("Question: {question}\nPlanned sub-tasks not yet run: {remaining}\n");
    evidence_block(&mut out, evidence);
    out
}

pub fn caption_message(question: &str, intents: &[String], slots: &[SlotAnnotation]) -> String {
    let mut out = String::from("Examples:\n");
    for ex in db_examples() {
        let slots: Vec<String> = ex.slots.iter().map(|(t, v)| format!("{t}={v}")).collect();
        let _ = writeln!(
            out,
            "Question: {}\nIntents: {}\nSlots: {}\nCAPTION: {}\n",
            ex.query,
            ex.intents.join(", "),
            slots.join("; "),
            ex.caption
        );
    }
    header(&mut out, question, intents, slots);
    out
}

pub fn sql_message(task: &AgentTask, caption: &TableCaption, feedback: Option<&str>) -> String {
    let mut out = String::from("Examples:\n");
    for ex in db_examples() {
        let _ = writeln!(out, "Question: {}\nTable: {}\n```sql\n{}\n```\n", ex.query, ex.caption, ex.sql);
    }
    header(&mut out, &task.question, &task.intents, &task.slots);
    let _ = writeln!(out, "Sub-task: {}", task.task_description);
    let _ = writeln!(out, "Table: {}\nSchema: {}", caption.caption, caption.schema_line());
    if let Some(f) = feedback {
        let _ = writeln!(out, "The previous statement failed: {f}");
    }
    out
}

pub fn map_message(task: &AgentTask, observations: &[ToolObservation], feedback: Option<&str>) -> String {
    let mut out = format!("Tool descriptions:\n{TOOL_DESCRIPTIONS}\n");
    header(&mut out, &task.question, &task.intents, &task.slots);
    let _ = writeln!(out, "Sub-task: {}", task.task_description);
    out.push_str("Known entities:\n");
    for (name, p) in &task.context {
        let _ = writeln!(out, "- {name} ({p})");
    }
    if !observations.is_empty() {
        out.push_str("Results so far:\n");
        for o in observations {
            out.push_str(&Evidence::Tool { observation: o.clone() }.describe());
        }
    }
    if let Some(f) = feedback {
        let _ = writeln!(out, "Problem with the previous round: {f}");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn assets_load() {
        assert_eq!(db_examples().len(), 5);
        let tools: serde_json::Value = serde_json::from_str(TOOL_DESCRIPTIONS).unwrap();
        assert_eq!(tools.as_array().unwrap().len(), 4);
        for p in [SUPERVISOR, FINALIZE, DB_CAPTION, DB_SQL, MAP] {
            assert!(p.contains("# Role"));
        }
        assert!(SLU_FEWSHOT.contains("{examples}"));
    }
}
