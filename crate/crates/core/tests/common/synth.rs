#![allow(dead_code)]

//! Randomized episode/gold pairs and an independent per-instance tally of
//! every metric, used to cross-check the evaluator.

use std::collections::BTreeMap;

use geoqa_core::agent::{AgentResult, AgentTask, DispatchRecord, EpisodeTranscript, Evidence, Injection};
use geoqa_core::db_agent::{SqlAttempt, SqlCandidate, SqlSource};
use geoqa_core::domain::{
    CanonicalAnswer, Cell, GeoPoint, NumberUnit, QAInstance, QuestionType, ResultSet, Specialist, SqlStep, ToolStep,
};
use geoqa_core::slu::SluPrediction;
use geoqa_core::tools::{ToolRequest, ToolResult, TravelMode};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// ---- independent tally -------------------------------------------------

fn oracle_items(a: &CanonicalAnswer) -> Vec<String> {
    match a {
        CanonicalAnswer::EntitySet { items } => items
            .iter()
            .map(|s| format!("E|{}", s.split_whitespace().collect::<Vec<_>>().join(" ")))
            .collect(),
        CanonicalAnswer::Number { value, unit } => vec![format!("N|{unit:?}|{value}")],
        CanonicalAnswer::Duration { seconds } => vec![format!("D|{seconds}")],
        CanonicalAnswer::Distance { meters } => vec![format!("M|{meters}")],
        CanonicalAnswer::Boolean { value } => vec![format!("B|{value}")],
        CanonicalAnswer::Text { value } => vec![format!("T|{}", value.trim())],
    }
}

pub fn oracle_scores(pred: Option<&CanonicalAnswer>, gold: &CanonicalAnswer) -> (f64, f64) {
    let Some(pred) = pred else { return (0.0, 0.0) };
    let p = oracle_items(pred);
    let g = oracle_items(gold);
    let mut left = g.clone();
    let mut tp = 0;
    for item in &p {
        if let Some(pos) = left.iter().position(|x| x == item) {
            left.remove(pos);
            tp += 1;
        }
    }
    let acc = if tp == p.len() && tp == g.len() { 1.0 } else { 0.0 };
    let f1 = if tp == 0 { 0.0 } else { 2.0 * tp as f64 / (p.len() + g.len()) as f64 };
    (acc, f1)
}

fn call_signature(r: &ToolRequest) -> String {
    let pt = |p: Option<GeoPoint>| p.map(|p| format!("{:.6},{:.6}", p.latitude, p.longitude)).unwrap_or_default();
    format!(
        "{:?}|{}|{}|{:?}|{:?}|{:?}",
        r.function,
        pt(r.params.origin),
        pt(r.params.destination),
        r.params.mode,
        r.params.kind,
        r.params.label.as_deref().map(str::to_lowercase)
    )
}

fn rows_same(a: &ResultSet, b: &ResultSet) -> bool {
    let mut left = b.rows.clone();
    for r in &a.rows {
        match left.iter().position(|x| x == r) {
            Some(i) => {
                left.remove(i);
            }
            None => return false,
        }
    }
    left.is_empty()
}

// ---- synthetic episodes ------------------------------------------------

pub const NAMES: [&str; 6] = ["Oak Garden", "Pine Court", "Jade Villa", "Ruby Heights", "Maple Estate", "Lotus Park"];

fn answer(rng: &mut ChaCha8Rng) -> CanonicalAnswer {
    match rng.random_range(0..4) {
        0 | 1 => {
            let n = rng.random_range(1..=4);
            let mut names = NAMES.to_vec();
            names.shuffle(rng);
            CanonicalAnswer::entity_set(names[..n].iter().copied()).unwrap()
        }
        2 => CanonicalAnswer::Number {
            value: rng.random_range(0..5) as f64,
            unit: NumberUnit::Count,
        },
        _ => CanonicalAnswer::Duration {
            seconds: rng.random_range(60..70),
        },
    }
}

fn rows(rng: &mut ChaCha8Rng) -> ResultSet {
    ResultSet {
        columns: vec!["name".into(), "avg_price".into()],
        rows: (0..rng.random_range(1..4))
            .map(|i| vec![Cell::Text(NAMES[i].into()), Cell::Integer(rng.random_range(1..3))])
            .collect(),
    }
}

fn call(rng: &mut ChaCha8Rng) -> ToolRequest {
    let p = |rng: &mut ChaCha8Rng| {
        GeoPoint::new(23.0 + rng.random_range(0..1000) as f64 * 1e-4, 113.0 + rng.random_range(0..1000) as f64 * 1e-4)
            .unwrap()
    };
    let mode = [TravelMode::Walking, TravelMode::Driving][rng.random_range(0..2)];
    ToolRequest::time_query(p(rng), p(rng), mode).unwrap()
}

fn task() -> AgentTask {
    AgentTask {
        task_description: "t".into(),
        question: "q".into(),
        intents: vec![],
        slots: vec![],
        context: BTreeMap::new(),
        evidence: vec![],
        history: vec![],
    }
}

pub fn episode(id: usize, rng: &mut ChaCha8Rng) -> (EpisodeTranscript, QAInstance) {
    let qt = QuestionType::ALL[rng.random_range(0..3)];
    let route = if qt == QuestionType::Simple {
        vec![Specialist::DbAgent]
    } else {
        vec![Specialist::DbAgent, Specialist::MapAgent]
    };
    let gold_rows = rows(rng);
    let gold_calls: Vec<ToolRequest> = if qt == QuestionType::Simple {
        vec![]
    } else {
        (0..rng.random_range(1..4)).map(|_| call(rng)).collect()
    };
    let gold_answer = answer(rng);
    let gold = QAInstance {
        id: format!("i{id:04}"),
        template_id: "synthetic".into(),
        city: "Guangzhou".into(),
        question: format!("question {id}"),
        question_type: qt,
        intents: vec!["x".into()],
        slots: vec![],
        sql_trace: vec![SqlStep {
            statement: "SELECT 1".into(),
            expected_result: gold_rows.clone(),
        }],
        tool_trace: gold_calls
            .iter()
            .map(|r| ToolStep {
                request: r.clone(),
                expected_result: ToolResult::distance(1),
            })
            .collect(),
        agent_route: route.clone(),
        answer: gold_answer.clone(),
        nl_answer: String::new(),
        bindings: BTreeMap::new(),
    };

    let pred_answer = match rng.random_range(0..5) {
        0 => None,
        1 => Some(gold_answer.clone()),
        2 => Some(match &gold_answer {
            CanonicalAnswer::EntitySet { items } => {
                let mut v = items.clone();
                v.reverse();
                CanonicalAnswer::EntitySet { items: v }
            }
            other => other.clone(),
        }),
        _ => Some(answer(rng)),
    };
    let sql_attempts = match rng.random_range(0..4) {
        0 => vec![],
        1 => vec![SqlAttempt {
            candidate: SqlCandidate { statement: "SELECT x".into(), source: SqlSource::Generated },
            executed: false,
            error: Some("no such table".into()),
            rows: None,
        }],
        2 => {
            let mut r = gold_rows.clone();
            r.rows.reverse();
            vec![SqlAttempt {
                candidate: SqlCandidate { statement: "SELECT 1".into(), source: SqlSource::Generated },
                executed: true,
                error: None,
                rows: Some(r),
            }]
        }
        _ => vec![SqlAttempt {
            candidate: SqlCandidate { statement: "SELECT 2".into(), source: SqlSource::Generated },
            executed: true,
            error: None,
            rows: Some(rows(rng)),
        }],
    };
    let tool_calls = match rng.random_range(0..4) {
        0 => gold_calls.clone(),
        1 => gold_calls
            .iter()
            .map(|r| {
                // sub-rounding jitter must not matter
                let mut r = r.clone();
                r.params.origin = r.params.origin.map(|p| GeoPoint::new(p.latitude + 1e-8, p.longitude).unwrap());
                r
            })
            .collect(),
        2 => {
            let mut v = gold_calls.clone();
            v.push(call(rng));
            v
        }
        _ => (0..gold_calls.len()).map(|_| call(rng)).collect(),
    };
    let pred_route = match rng.random_range(0..3) {
        0 => vec![Specialist::DbAgent],
        1 => vec![Specialist::MapAgent, Specialist::DbAgent, Specialist::MapAgent],
        _ => route,
    };
    let t = EpisodeTranscript {
        instance_id: gold.id.clone(),
        question: gold.question.clone(),
        slu: SluPrediction::gold(&gold),
        injection: Injection::NONE,
        plans: vec![],
        dispatches: pred_route
            .into_iter()
            .map(|s| DispatchRecord {
                specialist: s,
                task: task(),
                result: AgentResult::success(vec![Evidence::Derived {
                    rule: "x".into(),
                    answer: CanonicalAnswer::Boolean { value: true },
                }]),
            })
            .collect(),
        sql_attempts,
        tool_calls,
        backend_calls: vec![],
        final_answer: pred_answer,
        failure: None,
        step_count: 3,
    };
    (t, gold)
}

pub fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9
}

/// Counts from a straightforward loop over the pairs.
#[derive(Debug, Default)]
pub struct Tally {
    /// question type number -> (count, accuracy sum, f1 sum)
    pub per_type: BTreeMap<u8, (usize, f64, f64)>,
    pub ecr: usize,
    pub pass: usize,
    pub api: usize,
    pub api_total: usize,
    pub plan: usize,
}

pub fn tally(ts: &[EpisodeTranscript], gs: &[QAInstance]) -> Tally {
    let mut out = Tally::default();
    for (t, g) in ts.iter().zip(gs) {
        let (a, f) = oracle_scores(t.final_answer.as_ref(), &g.answer);
        let e = out.per_type.entry(g.question_type.number()).or_default();
        e.0 += 1;
        e.1 += a;
        e.2 += f;
        if let Some(first) = t.sql_attempts.first() {
            out.ecr += first.executed as usize;
            if let Some(r) = &first.rows {
                out.pass += rows_same(r, &g.sql_trace[0].expected_result) as usize;
            }
        }
        if !g.tool_trace.is_empty() {
            out.api_total += 1;
            let p: Vec<String> = t.tool_calls.iter().map(call_signature).collect();
            let q: Vec<String> = g.tool_trace.iter().map(|s| call_signature(&s.request)).collect();
            out.api += (p == q) as usize;
        }
        let route: Vec<Specialist> = t.dispatches.iter().map(|d| d.specialist).collect();
        out.plan += (route == g.agent_route) as usize;
    }
    out
}

/// One randomized set of up to 100 episodes.
pub fn random_set(seed: u64) -> (Vec<EpisodeTranscript>, Vec<QAInstance>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=100);
    (0..n).map(|i| episode(i, &mut rng)).unzip()
}
