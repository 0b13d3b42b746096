use serde::{Deserialize, Serialize};

use crate::domain::QAInstance;
use crate::store::GeoStore;
use crate::tools::ToolCache;

use super::{instantiate, plausibility_filter, TemplateSet};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mismatch {
    pub id: String,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub checked: usize,
    pub mismatches: Vec<Mismatch>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.mismatches.is_empty()
    }
}

/// Re-execute every SQL step, replay every tool step on `cache` (expected
/// to be frozen), then re-derive the whole instance from its template and
/// bindings and compare field by field.
pub fn validate_instance(
    inst: &QAInstance,
    templates: &TemplateSet,
    store: &GeoStore,
    cache: &ToolCache,
) -> Vec<String> {
    let mut problems = Vec::new();
    if let Err(e) = inst.check_invariants() {
        problems.push(e.to_string());
    }
    for (i, step) in inst.sql_trace.iter().enumerate() {
        match store.execute_sql(&step.statement) {
            Ok(rs) if rs == step.expected_result => {}
            Ok(_) => problems.push(format!("sql step {i}: rows differ on re-execution")),
            Err(e) => problems.push(format!("sql step {i}: {e}")),
        }
    }
    for (i, step) in inst.tool_trace.iter().enumerate() {
        match cache.lookup(&step.request) {
            Ok(r) if r == step.expected_result => {}
            Ok(_) => problems.push(format!("tool step {i}: payload differs on replay")),
            Err(e) => problems.push(format!("tool step {i}: {e}")),
        }
    }
    if let Err(r) = plausibility_filter(inst) {
        problems.push(r.to_string());
    }
    let Some(template) = templates.get(&inst.template_id) else {
        problems.push(format!("unknown template '{}'", inst.template_id));
        return problems;
    };
    match instantiate(template, &inst.bindings, store, cache) {
        Err(r) => problems.push(format!("re-derivation failed: {r}")),
        Ok(again) => {
            let a = &again.instance;
            let checks: [(&str, bool); 10] = [
                ("city", a.city == inst.city),
                ("question", a.question == inst.question),
                ("question_type", a.question_type == inst.question_type),
                ("intents", a.intents == inst.intents),
                ("slots", a.slots == inst.slots),
                ("sql_trace", a.sql_trace == inst.sql_trace),
                ("tool_trace", a.tool_trace == inst.tool_trace),
                ("agent_route", a.agent_route == inst.agent_route),
                ("answer", a.answer == inst.answer),
                ("nl_answer", a.nl_answer == inst.nl_answer),
            ];
            for (field, ok) in checks {
                if !ok {
                    problems.push(format!("{field} differs on re-derivation"));
                }
            }
        }
    }
    problems
}

pub fn validate_dataset(
    instances: &[QAInstance],
    templates: &TemplateSet,
    store: &GeoStore,
    cache: &ToolCache,
) -> ValidationReport {
    let mut report = ValidationReport::default();
    for inst in instances {
        report.checked += 1;
        for detail in validate_instance(inst, templates, store, cache) {
            report.mismatches.push(Mismatch {
                id: inst.id.clone(),
                detail,
            });
        }
    }
    report
}
