//! Deterministic backends that answer from gold annotations.
//!
//! The oracle is not a lookup table of final answers. Each stage reacts to
//! what it is given: the plan follows the predicted intents, SQL is
//! re-rendered from the predicted slots, tool calls are named from the
//! entities in the task context, and the final answer is derived from the
//! evidence the specialists actually returned. Upstream mistakes therefore
//! propagate exactly as they would with a live model.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex};

use crate::answer::{derive_sql, SynthesisRule};
use crate::domain::{GeoPoint, QAInstance, SlotAnnotation, Specialist};
use crate::generator::{parse_pattern, render, ResolvedRule, Segment, Template, TemplateSet};
use crate::store::TableCaption;
use crate::tools::{ToolFunction, ToolRequest, TimeBucket};

use super::backend::{BackendError, ChatBackend, ChatRequest, Stage, StageContext};
use super::protocol::{format_answer, format_plan, format_sql, CallSpec, Directive, Evidence};

struct Gold {
    instance: QAInstance,
    template: Template,
    rule: ResolvedRule,
}

/// Gold-driven backend for every stage.
pub struct OracleBackend {
    by_question: HashMap<String, Arc<Gold>>,
    captions: Vec<TableCaption>,
}

impl OracleBackend {
    /// Instances whose template is missing from `templates` are skipped.
    pub fn new(instances: &[QAInstance], templates: &TemplateSet, captions: Vec<TableCaption>) -> Self {
        let mut by_question = HashMap::new();
        for inst in instances {
            let Some(t) = templates.get(&inst.template_id) else {
                log::warn!("oracle: no template '{}' for {}", inst.template_id, inst.id);
                continue;
            };
            let Ok(rule) = crate::generator::resolve_rule(t, &inst.bindings) else {
                log::warn!("oracle: cannot resolve answer rule for {}", inst.id);
                continue;
            };
            by_question.insert(
                inst.question.clone(),
                Arc::new(Gold {
                    instance: inst.clone(),
                    template: t.clone(),
                    rule,
                }),
            );
        }
        OracleBackend { by_question, captions }
    }

    fn gold(&self, ctx: &StageContext) -> Result<&Gold, BackendError> {
        self.by_question
            .get(&ctx.question)
            .map(|g| g.as_ref())
            .ok_or_else(|| BackendError::Unavailable(format!("oracle has no gold for question '{}'", ctx.question)))
    }

    fn slu(&self, g: &Gold) -> String {
        let mut out = format!("INTENTS: {}\n", g.instance.intents.join(", "));
        for s in &g.instance.slots {
            out.push_str(&format!("SLOT {}: {}\n", s.slot_type, s.value));
        }
        out
    }

    fn plan(&self, g: &Gold, ctx: &StageContext) -> String {
        let mut want = ctx.intents.clone();
        want.sort();
        let mut have = g.instance.intents.clone();
        have.sort();
        if want != have {
            // Without the right intent the route is a guess: ask the
            // database and hope.
            return "The intent is unclear, so I will start with the database.\n1. db_agent: look up the entities named in the question".into();
        }
        let n_sql = g.instance.sql_trace.len();
        let done_db = ctx.completed.iter().filter(|s| **s == Specialist::DbAgent).count();
        let done_map = ctx.completed.contains(&Specialist::MapAgent);
        let mut plan = Vec::new();
        for k in done_db.min(n_sql)..n_sql {
            plan.push(Directive {
                specialist: Specialist::DbAgent,
                description: format!("database lookup {} of {n_sql} for the entities in the question", k + 1),
            });
        }
        if !g.instance.tool_trace.is_empty() && !done_map {
            plan.push(Directive {
                specialist: Specialist::MapAgent,
                description: "compute the requested travel, distance or nearby-POI information".into(),
            });
        }
        if plan.is_empty() {
            plan.push(Directive {
                specialist: Specialist::DbAgent,
                description: "re-check the database records".into(),
            });
        }
        format_plan(&plan)
    }

    fn sufficiency(&self, g: &Gold, ctx: &StageContext) -> String {
        let done_db = ctx.completed.iter().filter(|s| **s == Specialist::DbAgent).count();
        let done_map = ctx.completed.contains(&Specialist::MapAgent);
        let enough = done_db >= g.instance.sql_trace.len() && (g.instance.tool_trace.is_empty() || done_map);
        format!("SUFFICIENT: {}", if enough { "yes" } else { "no" })
    }

    fn finalize(&self, g: &Gold, ctx: &StageContext) -> String {
        let answer = match &g.rule {
            ResolvedRule::Sql { step, rule } => ctx
                .evidence
                .iter()
                .filter_map(|e| match e {
                    Evidence::Rows { result, .. } => Some(result),
                    _ => None,
                })
                .nth(*step)
                .and_then(|rs| derive_sql(rule, rs).ok()),
            ResolvedRule::Tools { .. } => ctx.evidence.iter().rev().find_map(|e| match e {
                Evidence::Derived { answer, .. } => Some(answer.clone()),
                _ => None,
            }),
        };
        format_answer(answer.as_ref())
    }

    fn db_step(ctx: &StageContext) -> usize {
        ctx.task
            .as_ref()
            .map(|t| t.evidence.iter().filter(|e| matches!(e, Evidence::Rows { .. })).count())
            .unwrap_or(0)
    }

    fn caption(&self, g: &Gold, ctx: &StageContext) -> String {
        let k = Self::db_step(ctx);
        let found = g.instance.sql_trace.get(k).and_then(|step| {
            self.captions.iter().find(|c| {
                step.statement
                    .split(|ch: char| !(ch.is_ascii_alphanumeric() || ch == '_'))
                    .any(|tok| tok == c.table_id)
            })
        });
        match found {
            Some(c) => format!("CAPTION: {}", c.caption),
            None => format!("CAPTION: Table for Communities in {}", g.instance.city),
        }
    }

    fn sql(&self, g: &Gold, ctx: &StageContext) -> String {
        let k = Self::db_step(ctx);
        let slots = ctx.task.as_ref().map(|t| t.slots.as_slice()).unwrap_or(&ctx.slots);
        let Some(pattern) = g.template.sql.get(k) else {
            return "No further query is needed.".into();
        };
        match rebind(&g.template, &g.instance, slots) {
            Some(b) => {
                let city = b.get("city").cloned().unwrap_or_else(|| g.instance.city.clone());
                match render(pattern, &b, &city, None) {
                    Ok(stmt) => format_sql(&stmt),
                    Err(e) => format!("I cannot write this query: {e}"),
                }
            }
            None => "Some values the query needs are missing from the slots.".into(),
        }
    }

    fn tool(&self, g: &Gold, ctx: &StageContext) -> String {
        if g.instance.tool_trace.is_empty() {
            return "UNABLE: this sub-task needs no map function; the answer is in the database".into();
        }
        let Some(task) = &ctx.task else {
            return "UNABLE: no task context".into();
        };
        let mut names: Vec<(String, GeoPoint)> = task.context.iter().map(|(n, p)| (n.clone(), p.rounded())).collect();
        for o in &ctx.observations {
            for h in o.result.poi_hits().unwrap_or_default() {
                names.push((h.name, h.location.rounded()));
            }
        }
        let name_of = |p: &GeoPoint| -> Option<String> {
            let p = p.rounded();
            names.iter().filter(|(_, q)| *q == p).map(|(n, _)| n.clone()).min()
        };
        let mut pending: Vec<&ToolRequest> = Vec::new();
        let mut executed: Vec<ToolRequest> = ctx.observations.iter().map(|o| o.request.clone().normalized()).collect();
        for step in &g.instance.tool_trace {
            let r = step.request.clone().normalized();
            if let Some(i) = executed.iter().position(|e| *e == r) {
                executed.remove(i);
            } else {
                pending.push(&step.request);
            }
        }
        let rule = match &g.rule {
            ResolvedRule::Tools { rule } => rule.clone(),
            ResolvedRule::Sql { .. } => SynthesisRule::Passthrough { limit: None },
        };
        let mut lines = Vec::new();
        for req in &pending {
            match call_for(req, &name_of) {
                Some(c) => lines.push(c.to_line()),
                None => break,
            }
        }
        if lines.is_empty() && !pending.is_empty() {
            return "UNABLE: coordinates required for the task are missing from the context".into();
        }
        if lines.len() == pending.len() {
            lines.push(format!("SYNTHESIS {rule}"));
        }
        lines.join("\n")
    }
}

/// Rebuild the template bindings with slot-typed placeholders taken from
/// `slots` instead of gold. `None` when a needed slot is missing.
fn rebind(template: &Template, gold: &QAInstance, slots: &[SlotAnnotation]) -> Option<BTreeMap<String, String>> {
    let mut b = gold.bindings.clone();
    let mut predicted: Vec<&SlotAnnotation> = slots.iter().collect();
    predicted.sort_by_key(|s| (s.span.start, s.span.end));
    let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
    let segments = parse_pattern(&template.question).ok()?;
    for seg in segments {
        let Segment::Ref { name, .. } = seg else { continue };
        let Some(slot_type) = template.placeholder(&name).and_then(|p| p.slot.as_deref()) else {
            continue;
        };
        let ordinal = seen.entry(slot_type).or_default();
        let value = predicted.iter().filter(|s| s.slot_type == slot_type).nth(*ordinal)?;
        *ordinal += 1;
        b.insert(name, value.value.clone());
    }
    Some(b)
}

fn call_for(req: &ToolRequest, name_of: &dyn Fn(&GeoPoint) -> Option<String>) -> Option<CallSpec> {
    let p = &req.params;
    let mut args = serde_json::Map::new();
    let mut put = |k: &str, v: serde_json::Value| {
        args.insert(k.to_string(), v);
    };
    match req.function {
        ToolFunction::TimeQuery | ToolFunction::RushHourQuery => {
            put("origin", name_of(p.origin.as_ref()?)?.into());
            put("destination", name_of(p.destination.as_ref()?)?.into());
            put("mode", p.mode?.as_str().into());
            if req.function == ToolFunction::TimeQuery && req.time_bucket != TimeBucket::Midnight00 {
                put("time_bucket", req.time_bucket.as_str().into());
            }
        }
        ToolFunction::DistanceQuery => {
            put("origin", name_of(p.origin.as_ref()?)?.into());
            put("destination", name_of(p.destination.as_ref()?)?.into());
            put("kind", p.kind?.as_str().into());
        }
        ToolFunction::SurroundingPoisQuery => {
            put("center", name_of(p.center.as_ref()?)?.into());
            put("radius", p.radius?.into());
            put("label", p.label.clone()?.into());
        }
    }
    Some(CallSpec {
        function: req.function,
        args,
    })
}

impl ChatBackend for OracleBackend {
    fn name(&self) -> String {
        "oracle".into()
    }

    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        let ctx = &request.context;
        let g = self.gold(ctx)?;
        Ok(match request.stage {
            Stage::Slu => self.slu(g),
            Stage::Plan => self.plan(g, ctx),
            Stage::Sufficiency => self.sufficiency(g, ctx),
            Stage::Finalize => self.finalize(g, ctx),
            Stage::Caption => self.caption(g, ctx),
            Stage::Sql => self.sql(g, ctx),
            Stage::Tool => self.tool(g, ctx),
            Stage::Paraphrase => format!("REWRITE: {}", g.instance.question),
        })
    }
}

/// Wraps a backend and breaks exactly one stage.
///
/// * `Slu`: unparseable output.
/// * `Sql`: a statement against a table that does not exist.
/// * `Tool`: every call gets a perturbed parameter (mode, kind or radius).
/// * `Plan`: the first plan routes everything to the map agent; replans
///   are passed through.
/// * any other stage: transport error.
pub struct FaultyBackend {
    inner: Arc<dyn ChatBackend>,
    stage: Stage,
}

impl FaultyBackend {
    pub fn new(inner: Arc<dyn ChatBackend>, stage: Stage) -> Self {
        FaultyBackend { inner, stage }
    }

    pub fn broken_stage(&self) -> Stage {
        self.stage
    }
}

fn perturb(call: &mut CallSpec) {
    let swap = |v: Option<&serde_json::Value>, a: &str, b: &str| -> serde_json::Value {
        if v.and_then(|v| v.as_str()) == Some(a) { b.into() } else { a.into() }
    };
    match call.function {
        ToolFunction::TimeQuery | ToolFunction::RushHourQuery => {
            let m = swap(call.args.get("mode"), "cycling", "driving");
            call.args.insert("mode".into(), m);
        }
        ToolFunction::DistanceQuery => {
            let k = swap(call.args.get("kind"), "straight", "driving");
            call.args.insert("kind".into(), k);
        }
        ToolFunction::SurroundingPoisQuery => {
            let r = call.args.get("radius").and_then(|v| v.as_u64()).unwrap_or(1000) + 7;
            call.args.insert("radius".into(), r.into());
        }
    }
}

impl ChatBackend for FaultyBackend {
    fn name(&self) -> String {
        format!("faulty[{}]:{}", self.stage.as_str(), self.inner.name())
    }

    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        if request.stage != self.stage {
            return self.inner.complete(request);
        }
        match self.stage {
            Stage::Slu => Ok("I think this is about housing.".into()),
            Stage::Sql => Ok(format_sql("SELECT name FROM table_that_does_not_exist")),
            Stage::Tool => {
                let text = self.inner.complete(request)?;
                let parsed = super::protocol::parse_map_response(&text);
                let mut lines = Vec::new();
                for mut c in parsed.calls {
                    perturb(&mut c);
                    lines.push(c.to_line());
                }
                if let Some(r) = parsed.synthesis {
                    lines.push(format!("SYNTHESIS {r}"));
                }
                if let Some(u) = parsed.unable {
                    lines.push(format!("UNABLE: {u}"));
                }
                Ok(lines.join("\n"))
            }
            Stage::Plan => {
                let ctx = &request.context;
                if ctx.completed.is_empty() && ctx.feedback.is_none() {
                    Ok("1. map_agent: answer the question with map functions".into())
                } else {
                    self.inner.complete(request)
                }
            }
            other => Err(BackendError::Transport(format!("injected failure at stage {}", other.as_str()))),
        }
    }
}

/// Produces well-formed plans forever and garbage everywhere else, so the
/// supervisor keeps replanning until the step cap.
#[derive(Debug, Default)]
pub struct AdversarialBackend {
    calls: Mutex<u64>,
}

impl AdversarialBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn call_count(&self) -> u64 {
        *self.calls.lock().expect("counter lock")
    }
}

impl ChatBackend for AdversarialBackend {
    fn name(&self) -> String {
        "adversarial".into()
    }

    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        let n = {
            let mut c = self.calls.lock().expect("counter lock");
            *c += 1;
            *c
        };
        match request.stage {
            Stage::Plan => Ok(if n % 2 == 0 {
                "1. map_agent: try the map\n2. db_agent: try the database".into()
            } else {
                "1. db_agent: try the database\n2. map_agent: try the map".into()
            }),
            Stage::Sufficiency => Ok("SUFFICIENT: no".into()),
            Stage::Tool => Ok("CALL time_query {\"origin\": \"Nowhere\", \"destination\": \"Elsewhere\", \"mode\": \"driving\"}".into()),
            Stage::Sql => Ok("```sql\nDELETE FROM community\n```".into()),
            _ => Err(BackendError::Unavailable("adversarial refusal".into())),
        }
    }
}
