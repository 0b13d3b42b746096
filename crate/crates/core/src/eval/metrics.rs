use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::EpisodeTranscript;
use crate::domain::{answer_equal, CanonicalAnswer, QAInstance, ResultSet};
use crate::tools::ToolRequest;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("{transcripts} transcripts for {golds} gold instances")]
    Length { transcripts: usize, golds: usize },
    #[error("transcript {index} is for '{transcript}' but gold is '{gold}'")]
    Misaligned {
        index: usize,
        transcript: String,
        gold: String,
    },
    #[error("configuration: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(String),
}

fn multiset(items: Vec<String>) -> BTreeMap<String, usize> {
    let mut m = BTreeMap::new();
    for i in items {
        *m.entry(i).or_insert(0) += 1;
    }
    m
}

/// Item-level F1 over the answers' item multisets. Zero when either side
/// has no items.
pub fn item_f1(pred: &CanonicalAnswer, gold: &CanonicalAnswer) -> f64 {
    let p = multiset(pred.items());
    let g = multiset(gold.items());
    let np: usize = p.values().sum();
    let ng: usize = g.values().sum();
    if np == 0 || ng == 0 {
        return 0.0;
    }
    let tp: usize = p.iter().map(|(k, n)| (*n).min(*g.get(k).unwrap_or(&0))).sum();
    if tp == 0 {
        return 0.0;
    }
    let precision = tp as f64 / np as f64;
    let recall = tp as f64 / ng as f64;
    2.0 * precision * recall / (precision + recall)
}

pub fn accuracy(pred: &CanonicalAnswer, gold: &CanonicalAnswer) -> f64 {
    if answer_equal(pred, gold) {
        1.0
    } else {
        0.0
    }
}

/// (accuracy, item F1) for an episode verdict; an unanswerable verdict
/// scores zero on both.
pub fn score_verdict(pred: Option<&CanonicalAnswer>, gold: &CanonicalAnswer) -> (f64, f64) {
    match pred {
        Some(p) => (accuracy(p, gold), item_f1(p, gold)),
        None => (0.0, 0.0),
    }
}

/// Hits over a denominator, with the ratio precomputed (0 when the
/// denominator is 0).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Ratio {
    pub hits: usize,
    pub total: usize,
    pub value: f64,
}

impl Ratio {
    pub fn new(hits: usize, total: usize) -> Self {
        Ratio {
            hits,
            total,
            value: if total == 0 { 0.0 } else { hits as f64 / total as f64 },
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TraceMetrics {
    /// First generated SQL candidate executes. Over all instances; an
    /// episode that never produced a candidate counts as a miss.
    pub ecr: Ratio,
    /// First candidate's rows equal the gold first step's rows.
    pub pass_at_1: Ratio,
    /// Normalized tool-call sequence equals gold. Over instances whose
    /// gold carries tool steps.
    pub api_label: Ratio,
    /// Dispatched specialist sequence equals the gold route.
    pub planning: Ratio,
}

/// Row multisets compare equal; column names and row order are ignored.
pub fn rows_equal(a: &ResultSet, b: &ResultSet) -> bool {
    if a.rows.len() != b.rows.len() {
        return false;
    }
    let key = |rs: &ResultSet| {
        let mut v: Vec<String> = rs.rows.iter().map(|r| format!("{r:?}")).collect();
        v.sort();
        v
    };
    key(a) == key(b)
}

fn normalized_calls(calls: impl IntoIterator<Item = ToolRequest>) -> Vec<String> {
    calls.into_iter().map(|c| c.normalized().key()).collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TraceHits {
    pub executable: bool,
    pub pass_at_1: bool,
    /// `None` when the gold has no tool steps.
    pub api_label: Option<bool>,
    pub planning: bool,
}

pub fn trace_hits(t: &EpisodeTranscript, gold: &QAInstance) -> TraceHits {
    let first = t.sql_attempts.first();
    let executable = first.is_some_and(|a| a.executed);
    let pass_at_1 = match (first.and_then(|a| a.rows.as_ref()), gold.sql_trace.first()) {
        (Some(rows), Some(step)) => rows_equal(rows, &step.expected_result),
        _ => false,
    };
    let api_label = (!gold.tool_trace.is_empty()).then(|| {
        normalized_calls(t.tool_calls.iter().cloned())
            == normalized_calls(gold.tool_trace.iter().map(|s| s.request.clone()))
    });
    TraceHits {
        executable,
        pass_at_1,
        api_label,
        planning: t.route() == gold.agent_route,
    }
}

pub fn check_alignment(transcripts: &[EpisodeTranscript], golds: &[QAInstance]) -> Result<(), EvalError> {
    if transcripts.len() != golds.len() {
        return Err(EvalError::Length {
            transcripts: transcripts.len(),
            golds: golds.len(),
        });
    }
    for (i, (t, g)) in transcripts.iter().zip(golds).enumerate() {
        if t.instance_id != g.id {
            return Err(EvalError::Misaligned {
                index: i,
                transcript: t.instance_id.clone(),
                gold: g.id.clone(),
            });
        }
    }
    Ok(())
}

pub fn trace_metrics(transcripts: &[EpisodeTranscript], golds: &[QAInstance]) -> Result<TraceMetrics, EvalError> {
    check_alignment(transcripts, golds)?;
    let (mut ecr, mut pass, mut api, mut api_total, mut plan) = (0, 0, 0, 0, 0);
    for (t, g) in transcripts.iter().zip(golds) {
        let h = trace_hits(t, g);
        ecr += h.executable as usize;
        pass += h.pass_at_1 as usize;
        plan += h.planning as usize;
        if let Some(ok) = h.api_label {
            api_total += 1;
            api += ok as usize;
        }
    }
    let n = golds.len();
    Ok(TraceMetrics {
        ecr: Ratio::new(ecr, n),
        pass_at_1: Ratio::new(pass, n),
        api_label: Ratio::new(api, api_total),
        planning: Ratio::new(plan, n),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(items: &[&str]) -> CanonicalAnswer {
        CanonicalAnswer::entity_set(items.iter().copied()).unwrap()
    }

    #[test]
    fn partial_credit() {
        let f = item_f1(&set(&["A", "B", "D"]), &set(&["A", "B", "C"]));
        assert!((f - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(accuracy(&set(&["B", "A"]), &set(&["A", "B"])), 1.0);
        assert_eq!(item_f1(&set(&["B", "A"]), &set(&["A", "B"])), 1.0);
    }

    #[test]
    fn enumeration_for_a_count_is_wrong() {
        let gold = CanonicalAnswer::Number {
            value: 2.0,
            unit: crate::domain::NumberUnit::Count,
        };
        assert_eq!(accuracy(&set(&["A", "B"]), &gold), 0.0);
        assert_eq!(item_f1(&set(&["A", "B"]), &gold), 0.0);
        assert_eq!(score_verdict(None, &gold), (0.0, 0.0));
    }

    #[test]
    fn ratio_zero_denominator() {
        assert_eq!(Ratio::new(0, 0).value, 0.0);
        assert_eq!(Ratio::new(1, 4).value, 0.25);
    }
}
