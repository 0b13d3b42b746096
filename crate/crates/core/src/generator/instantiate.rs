use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::answer::{derive_sql, synthesize, SqlRule, SynthesisRule, ToolObservation};
use crate::domain::{
    haversine, GeoPoint, QAInstance, QuestionType, SlotAnnotation, Span, Specialist, SqlStep, ToolStep,
};
use crate::store::{city_key, sql_quote, GeoStore};
use crate::tools::{
    DistanceKind, ToolCache, ToolError, ToolFunction, ToolParams, ToolRequest, ToolResult, TimeBucket, TravelMode,
};

use super::template::{
    parse_pattern, single_ref, AnswerSource, PlaceholderKind, ResolvedRule, Segment, Template, TABLE_REFS,
};

pub type Bindings = BTreeMap<String, String>;

/// Why an attempt did not produce an instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    SamplingExhausted,
    SqlError,
    EmptyResult,
    InsufficientResults,
    ToolError,
    AnswerUnderivable,
    Implausible,
    Duplicate,
}

impl RejectReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            RejectReason::SamplingExhausted => "sampling_exhausted",
            RejectReason::SqlError => "sql_error",
            RejectReason::EmptyResult => "empty_result",
            RejectReason::InsufficientResults => "insufficient_results",
            RejectReason::ToolError => "tool_error",
            RejectReason::AnswerUnderivable => "answer_underivable",
            RejectReason::Implausible => "implausible",
            RejectReason::Duplicate => "duplicate",
        }
    }
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rejection {
    pub reason: RejectReason,
    pub detail: String,
}

impl Rejection {
    fn new(reason: RejectReason, detail: impl Into<String>) -> Self {
        Rejection {
            reason,
            detail: detail.into(),
        }
    }
}

impl fmt::Display for Rejection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.reason, self.detail)
    }
}

/// Walking and cycling steps longer than these straight-line distances
/// are implausible.
pub const WALKING_LIMIT_M: f64 = 10_000.0;
pub const CYCLING_LIMIT_M: f64 = 20_000.0;

/// Draw a value for every placeholder in declaration order. Repeated
/// community or POI placeholders receive distinct entities.
pub fn sample_bindings<R: Rng + ?Sized>(
    template: &Template,
    store: &GeoStore,
    rng: &mut R,
) -> Result<Bindings, Rejection> {
    let mut b = Bindings::new();
    let cfg = store.config();
    let exhausted = |name: &str| Rejection::new(RejectReason::SamplingExhausted, format!("no candidates for '{name}'"));
    let mut used_communities = BTreeSet::new();
    let mut used_pois = BTreeSet::new();
    let mut city: Option<String> = None;
    for p in &template.placeholders {
        let value = match p.kind {
            PlaceholderKind::City => {
                let cities: Vec<&String> =
                    store.cities().iter().filter(|c| store.communities_in(c).next().is_some()).collect();
                let c = (*cities.choose(rng).ok_or_else(|| exhausted(&p.name))?).clone();
                city = Some(c.clone());
                c
            }
            PlaceholderKind::District => {
                let ds = store.districts(city.as_deref().unwrap_or_default());
                ds.choose(rng).ok_or_else(|| exhausted(&p.name))?.clone()
            }
            PlaceholderKind::PoiLabel => {
                let labels: Vec<&str> = store.taxonomy().labels().collect();
                labels.choose(rng).ok_or_else(|| exhausted(&p.name))?.to_string()
            }
            PlaceholderKind::Choice => {
                let avoid: BTreeSet<&String> = p.distinct_from.iter().filter_map(|d| b.get(d)).collect();
                let vals: Vec<&String> = p.values.iter().filter(|v| !avoid.contains(v)).collect();
                (*vals.choose(rng).ok_or_else(|| exhausted(&p.name))?).clone()
            }
            PlaceholderKind::Number => {
                let avoid: BTreeSet<&String> = p.distinct_from.iter().filter_map(|d| b.get(d)).collect();
                let vals: Vec<String> =
                    p.numbers.iter().map(|n| n.to_string()).filter(|v| !avoid.contains(v)).collect();
                vals.choose(rng).ok_or_else(|| exhausted(&p.name))?.clone()
            }
            PlaceholderKind::Community => {
                let city = city.clone().unwrap_or_default();
                let poi_anchor = p.near_poi.as_ref().and_then(|n| store.find_poi(&city, &b[n]));
                let com_anchor = p.near_community.as_ref().and_then(|n| store.find_community(&city, &b[n]));
                let cands: Vec<&str> = store
                    .communities_in(&city)
                    .filter(|c| !used_communities.contains(&c.name))
                    .filter(|c| p.in_district.as_ref().is_none_or(|d| c.district == b[d]))
                    .filter(|c| poi_anchor.is_none_or(|a| haversine(a.location, c.location) <= cfg.poi_pairing_radius))
                    .filter(|c| {
                        com_anchor.is_none_or(|a| {
                            a.id != c.id && haversine(a.location, c.location) <= cfg.community_pairing_radius
                        })
                    })
                    .map(|c| c.name.as_str())
                    .collect();
                let v = cands.choose(rng).ok_or_else(|| exhausted(&p.name))?.to_string();
                used_communities.insert(v.clone());
                v
            }
            PlaceholderKind::Poi => {
                let city = city.clone().unwrap_or_default();
                let com_anchor = p.near_community.as_ref().and_then(|n| store.find_community(&city, &b[n]));
                let label = p.label.as_ref().map(|l| b[l].clone());
                let cands: Vec<&str> = store
                    .pois_in(&city)
                    .filter(|x| !used_pois.contains(&x.name))
                    .filter(|x| label.as_ref().is_none_or(|l| &x.label == l))
                    .filter(|x| com_anchor.is_none_or(|a| haversine(a.location, x.location) <= cfg.poi_pairing_radius))
                    .map(|x| x.name.as_str())
                    .collect();
                let v = cands.choose(rng).ok_or_else(|| exhausted(&p.name))?.to_string();
                used_pois.insert(v.clone());
                v
            }
        };
        b.insert(p.name.clone(), value);
    }
    Ok(b)
}

fn city_of(template: &Template, b: &Bindings) -> Result<String, Rejection> {
    let ph = template
        .city_placeholder()
        .ok_or_else(|| Rejection::new(RejectReason::SamplingExhausted, "template has no city placeholder"))?;
    b.get(&ph.name)
        .cloned()
        .ok_or_else(|| Rejection::new(RejectReason::SamplingExhausted, "city is unbound"))
}

fn lookup_ref(name: &str, b: &Bindings, city: &str, item: Option<&str>) -> Option<String> {
    if TABLE_REFS.contains(&name) {
        let family = name.strip_suffix("_table")?;
        return Some(format!("{family}_{}", city_key(city)));
    }
    if name == "item" {
        return item.map(String::from);
    }
    b.get(name).cloned()
}

/// Fill a pattern; `{name:sql}` refs become quoted SQL literals.
pub fn render(pattern: &str, b: &Bindings, city: &str, item: Option<&str>) -> Result<String, String> {
    let mut out = String::new();
    for seg in parse_pattern(pattern)? {
        match seg {
            Segment::Text(t) => out.push_str(&t),
            Segment::Ref { name, sql } => {
                let v = lookup_ref(&name, b, city, item).ok_or_else(|| format!("unbound '{name}'"))?;
                if sql {
                    out.push_str(&sql_quote(&v));
                } else {
                    out.push_str(&v);
                }
            }
        }
    }
    Ok(out)
}

/// Fill the question pattern and record a slot span for every occurrence
/// of a slot-typed placeholder, by position while filling.
pub fn render_question(template: &Template, b: &Bindings) -> Result<(String, Vec<SlotAnnotation>), String> {
    let mut text = String::new();
    let mut chars = 0usize;
    let mut slots = Vec::new();
    for seg in parse_pattern(&template.question)? {
        match seg {
            Segment::Text(t) => {
                chars += t.chars().count();
                text.push_str(&t);
            }
            Segment::Ref { name, .. } => {
                let v = b.get(&name).ok_or_else(|| format!("unbound '{name}'"))?;
                let len = v.chars().count();
                if let Some(slot) = template.placeholder(&name).and_then(|p| p.slot.clone()) {
                    slots.push(SlotAnnotation {
                        slot_type: slot,
                        value: v.clone(),
                        span: Span {
                            start: chars,
                            end: chars + len,
                        },
                    });
                }
                chars += len;
                text.push_str(v);
            }
        }
    }
    Ok((text, slots))
}

fn resolve_number(raw: &str, b: &Bindings) -> Result<u64, String> {
    let v = match single_ref(raw) {
        Some(name) => b.get(name).cloned().ok_or_else(|| format!("unbound '{name}'"))?,
        None => raw.trim().to_string(),
    };
    v.parse().map_err(|_| format!("'{v}' is not a non-negative integer"))
}

/// Bind the template's answer rule to concrete numbers.
pub fn resolve_rule(template: &Template, b: &Bindings) -> Result<ResolvedRule, String> {
    let a = &template.answer;
    let col = |c: &Option<String>| c.clone().ok_or_else(|| "missing column".to_string());
    Ok(match a.source {
        AnswerSource::Sql => ResolvedRule::Sql {
            step: a.step.unwrap_or(template.sql.len() - 1),
            rule: match a.rule.as_str() {
                "lookup" => SqlRule::Lookup {
                    column: col(&a.column)?,
                    unit: a.unit.ok_or("missing unit")?,
                },
                "count" => SqlRule::Count,
                "list" => SqlRule::List { column: col(&a.column)? },
                "argmin" => SqlRule::Argmin {
                    name_column: col(&a.name_column)?,
                    value_column: col(&a.value_column)?,
                },
                "argmax" => SqlRule::Argmax {
                    name_column: col(&a.name_column)?,
                    value_column: col(&a.value_column)?,
                },
                other => return Err(format!("unknown sql rule '{other}'")),
            },
        },
        AnswerSource::Tools => ResolvedRule::Tools {
            rule: match a.rule.as_str() {
                "passthrough" => SynthesisRule::Passthrough {
                    limit: a.limit.as_deref().map(|l| resolve_number(l, b)).transpose()?.map(|n| n as usize),
                },
                "argmin" => SynthesisRule::Argmin,
                "argmax" => SynthesisRule::Argmax,
                "count" => SynthesisRule::Count,
                "threshold_filter" => SynthesisRule::ThresholdFilter {
                    max: resolve_number(a.max.as_deref().ok_or("missing max")?, b)? * a.scale.unwrap_or(1),
                },
                "compare" => SynthesisRule::Compare {
                    op: a.op.ok_or("missing op")?,
                },
                other => return Err(format!("unknown tool rule '{other}'")),
            },
        },
    })
}

/// Everything derived from one binding, before an id is assigned.
#[derive(Debug, Clone, PartialEq)]
pub struct Instantiated {
    pub instance: QAInstance,
    pub rule: ResolvedRule,
    pub observations: Vec<ToolObservation>,
}

fn tool_rejection(e: ToolError) -> Rejection {
    Rejection::new(RejectReason::ToolError, e.to_string())
}

/// Execute the template under `b`: run SQL steps, resolve tool calls via
/// `cache` (coordinates come from SQL results and earlier surrounding
/// hits), and derive the answer.
pub fn instantiate(
    template: &Template,
    b: &Bindings,
    store: &GeoStore,
    cache: &ToolCache,
) -> Result<Instantiated, Rejection> {
    let city = city_of(template, b)?;
    let (question, slots) =
        render_question(template, b).map_err(|e| Rejection::new(RejectReason::SamplingExhausted, e))?;
    let rule = resolve_rule(template, b).map_err(|e| Rejection::new(RejectReason::AnswerUnderivable, e))?;

    let mut sql_trace = Vec::new();
    let mut coords: BTreeMap<String, GeoPoint> = BTreeMap::new();
    for pattern in &template.sql {
        let statement = render(pattern, b, &city, None).map_err(|e| Rejection::new(RejectReason::SqlError, e))?;
        let rs = store
            .execute_sql(&statement)
            .map_err(|e| Rejection::new(RejectReason::SqlError, format!("{statement}: {e}")))?;
        for (k, v) in rs.coordinate_map() {
            coords.entry(k).or_insert(v);
        }
        sql_trace.push(SqlStep {
            statement,
            expected_result: rs,
        });
    }

    let mut tool_trace: Vec<ToolStep> = Vec::new();
    let mut observations: Vec<ToolObservation> = Vec::new();
    // index of the first observation produced by each tool pattern
    let mut pattern_first_obs: Vec<usize> = Vec::new();
    for pattern in &template.tools {
        pattern_first_obs.push(observations.len());
        let items: Vec<Option<String>> = match &pattern.for_each {
            None => vec![None],
            Some(fe) => {
                let source = pattern_first_obs
                    .get(fe.step)
                    .and_then(|i| observations.get(*i))
                    .ok_or_else(|| Rejection::new(RejectReason::ToolError, "for_each source step missing"))?;
                let hits = source.result.poi_hits().unwrap_or_default();
                let limit = match &fe.limit {
                    Some(l) => resolve_number(l, b).map_err(|e| Rejection::new(RejectReason::ToolError, e))? as usize,
                    None => hits.len(),
                };
                if hits.len() < limit {
                    return Err(Rejection::new(
                        RejectReason::InsufficientResults,
                        format!("{} results, {limit} requested", hits.len()),
                    ));
                }
                hits.into_iter().take(limit).map(|h| Some(h.name)).collect()
            }
        };
        for item in items {
            let field = |v: &Option<String>| -> Result<Option<String>, Rejection> {
                v.as_deref()
                    .map(|p| render(p, b, &city, item.as_deref()))
                    .transpose()
                    .map_err(|e| Rejection::new(RejectReason::ToolError, e))
            };
            let point = |name: &Option<String>| -> Result<Option<GeoPoint>, Rejection> {
                name.as_ref()
                    .map(|n| {
                        coords.get(n).copied().ok_or_else(|| {
                            Rejection::new(RejectReason::ToolError, format!("no coordinates for '{n}'"))
                        })
                    })
                    .transpose()
            };
            let origin_name = field(&pattern.origin)?;
            let destination_name = field(&pattern.destination)?;
            let center_name = field(&pattern.center)?;
            let mode = field(&pattern.mode)?
                .map(|m| {
                    TravelMode::parse(&m)
                        .ok_or_else(|| Rejection::new(RejectReason::ToolError, format!("unknown mode '{m}'")))
                })
                .transpose()?;
            let kind = field(&pattern.kind)?
                .map(|k| {
                    DistanceKind::parse(&k)
                        .ok_or_else(|| Rejection::new(RejectReason::ToolError, format!("unknown distance kind '{k}'")))
                })
                .transpose()?;
            let radius = field(&pattern.radius)?
                .map(|r| {
                    r.parse::<u32>()
                        .map_err(|_| Rejection::new(RejectReason::ToolError, format!("bad radius '{r}'")))
                })
                .transpose()?;
            let params = ToolParams {
                origin: point(&origin_name)?,
                destination: point(&destination_name)?,
                mode,
                kind,
                center: point(&center_name)?,
                radius,
                label: field(&pattern.label)?,
            };
            let bucket = pattern.bucket.unwrap_or(match pattern.function {
                ToolFunction::RushHourQuery => TimeBucket::Peak08,
                _ => TimeBucket::Midnight00,
            });
            let request = ToolRequest::new(pattern.function, params, bucket).map_err(tool_rejection)?;
            let result: ToolResult = cache.lookup(&request).map_err(tool_rejection)?;
            if let Some(hits) = result.poi_hits() {
                if hits.is_empty() {
                    return Err(Rejection::new(RejectReason::EmptyResult, "surrounding_pois_query returned nothing"));
                }
                for h in hits {
                    coords.entry(h.name).or_insert(h.location);
                }
            }
            tool_trace.push(ToolStep {
                request: request.clone(),
                expected_result: result.clone(),
            });
            observations.push(ToolObservation {
                request,
                origin_name,
                destination_name,
                center_name,
                result,
            });
        }
    }

    let answer = match &rule {
        ResolvedRule::Sql { step, rule } => {
            let rs = &sql_trace
                .get(*step)
                .ok_or_else(|| Rejection::new(RejectReason::AnswerUnderivable, "answer step out of range"))?
                .expected_result;
            derive_sql(rule, rs)
        }
        ResolvedRule::Tools { rule } => synthesize(rule, &observations),
    }
    .map_err(|e| {
        let reason = if e.contains("empty") || e.contains("no candidate") {
            RejectReason::EmptyResult
        } else if e.contains("requested") {
            RejectReason::InsufficientResults
        } else {
            RejectReason::AnswerUnderivable
        };
        Rejection::new(reason, e)
    })?;

    let mut agent_route = vec![Specialist::DbAgent; sql_trace.len()];
    if !tool_trace.is_empty() {
        agent_route.push(Specialist::MapAgent);
    }
    let nl_answer = answer.render();
    let instance = QAInstance {
        id: String::new(),
        template_id: template.id.clone(),
        city,
        question,
        question_type: template.question_type,
        intents: template.intents.clone(),
        slots,
        sql_trace,
        tool_trace,
        agent_route,
        answer,
        nl_answer,
        bindings: b.clone(),
    };
    debug_assert!(instance.question_type != QuestionType::Simple || instance.tool_trace.is_empty());
    Ok(Instantiated {
        instance,
        rule,
        observations,
    })
}

/// Reject walking/cycling steps whose straight-line span exceeds the
/// mode threshold.
pub fn plausibility_filter(instance: &QAInstance) -> Result<(), Rejection> {
    for step in &instance.tool_trace {
        let p = &step.request.params;
        let (Some(o), Some(d)) = (p.origin, p.destination) else { continue };
        let limit = match (p.mode, p.kind) {
            (Some(TravelMode::Walking), _) | (_, Some(DistanceKind::Walking)) => WALKING_LIMIT_M,
            (Some(TravelMode::Cycling), _) => CYCLING_LIMIT_M,
            _ => continue,
        };
        let span = haversine(o, d);
        if span > limit {
            return Err(Rejection::new(
                RejectReason::Implausible,
                format!("{} step spans {:.0} m (limit {:.0} m)", step.request.function, span, limit),
            ));
        }
    }
    Ok(())
}
