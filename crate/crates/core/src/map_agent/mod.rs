//! Map specialist: turns backend tool calls (which name entities) into
//! concrete requests using the task context, runs them against the cache,
//! and applies the synthesis rule the backend chose.
//!
//! A dispatch may take several rounds, for example a surrounding search
//! followed by travel times to the POIs it found. At most `attempt_cap`
//! rounds are made; results of earlier rounds stay available.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::agent::backend::{call_backend, CallRecord, ChatBackend, StageContext, Stage};
use crate::agent::prompts;
use crate::agent::protocol::{parse_map_response, AgentResult, AgentTask, CallSpec, Evidence};
use crate::answer::{synthesize, SynthesisRule, ToolObservation};
use crate::domain::GeoPoint;
use crate::tools::{
    DistanceKind, TimeBucket, ToolCache, ToolFunction, ToolParams, ToolRequest, TravelMode,
};

pub const DEFAULT_ATTEMPT_CAP: usize = 3;

/// A backend call resolved to coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolDecision {
    pub request: ToolRequest,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin_name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub destination_name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center_name: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DecideError {
    /// A named entity has no coordinates in the context.
    MissingCoordinates(String),
    Invalid(String),
}

impl std::fmt::Display for DecideError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DecideError::MissingCoordinates(n) => {
                write!(f, "geographical coordinates for '{n}' are missing from the context")
            }
            DecideError::Invalid(m) => write!(f, "invalid tool call: {m}"),
        }
    }
}

/// Entity name → coordinates, including POIs found by earlier calls.
#[derive(Debug, Clone, Default)]
pub struct Gazette {
    by_name: BTreeMap<String, GeoPoint>,
}

impl Gazette {
    pub fn new(context: &BTreeMap<String, GeoPoint>) -> Self {
        Gazette {
            by_name: context.clone(),
        }
    }

    pub fn absorb(&mut self, obs: &ToolObservation) {
        for h in obs.result.poi_hits().unwrap_or_default() {
            self.by_name.entry(h.name).or_insert(h.location);
        }
    }

    pub fn get(&self, name: &str) -> Option<GeoPoint> {
        self.by_name.get(name).copied()
    }

    /// Smallest name at exactly these (6-decimal) coordinates.
    pub fn name_at(&self, p: &GeoPoint) -> Option<String> {
        let p = p.rounded();
        self.by_name
            .iter()
            .find(|(_, q)| q.rounded() == p)
            .map(|(n, _)| n.clone())
    }

    pub fn points(&self) -> BTreeMap<String, GeoPoint> {
        self.by_name.clone()
    }
}

fn arg_str<'a>(c: &'a CallSpec, key: &str) -> Result<&'a str, DecideError> {
    c.args
        .get(key)
        .and_then(|v| v.as_str())
        .ok_or_else(|| DecideError::Invalid(format!("{} needs a string '{key}'", c.function.as_str())))
}

fn place(c: &CallSpec, key: &str, g: &Gazette) -> Result<(String, GeoPoint), DecideError> {
    let name = arg_str(c, key)?;
    g.get(name)
        .map(|p| (name.to_string(), p))
        .ok_or_else(|| DecideError::MissingCoordinates(name.to_string()))
}

/// Resolve entity names to coordinates and validate the parameters.
pub fn decide_tool(call: &CallSpec, gazette: &Gazette) -> Result<ToolDecision, DecideError> {
    let mode = |c: &CallSpec| -> Result<TravelMode, DecideError> {
        let m = arg_str(c, "mode")?;
        TravelMode::parse(m).ok_or_else(|| DecideError::Invalid(format!("unknown mode '{m}'")))
    };
    let built = match call.function {
        ToolFunction::TimeQuery | ToolFunction::RushHourQuery => {
            let (on, o) = place(call, "origin", gazette)?;
            let (dn, d) = place(call, "destination", gazette)?;
            let bucket = if call.function == ToolFunction::RushHourQuery {
                TimeBucket::Peak08
            } else {
                match call.args.get("time_bucket").and_then(|v| v.as_str()) {
                    Some(b) => TimeBucket::parse(b).ok_or_else(|| DecideError::Invalid(format!("unknown time bucket '{b}'")))?,
                    None => TimeBucket::Midnight00,
                }
            };
            let params = ToolParams {
                origin: Some(o),
                destination: Some(d),
                mode: Some(mode(call)?),
                ..Default::default()
            };
            (ToolRequest::new(call.function, params, bucket), Some(on), Some(dn), None)
        }
        ToolFunction::DistanceQuery => {
            let (on, o) = place(call, "origin", gazette)?;
            let (dn, d) = place(call, "destination", gazette)?;
            let k = arg_str(call, "kind")?;
            let kind = DistanceKind::parse(k).ok_or_else(|| DecideError::Invalid(format!("unknown distance kind '{k}'")))?;
            let params = ToolParams {
                origin: Some(o),
                destination: Some(d),
                kind: Some(kind),
                ..Default::default()
            };
            (ToolRequest::new(call.function, params, TimeBucket::Midnight00), Some(on), Some(dn), None)
        }
        ToolFunction::SurroundingPoisQuery => {
            let (cn, c) = place(call, "center", gazette)?;
            let radius = call
                .args
                .get("radius")
                .and_then(|v| v.as_u64().or_else(|| v.as_str().and_then(|s| s.trim().parse().ok())))
                .and_then(|r| u32::try_from(r).ok())
                .ok_or_else(|| DecideError::Invalid("surrounding_pois_query needs an integer 'radius'".into()))?;
            let label = arg_str(call, "label")?.to_string();
            let params = ToolParams {
                center: Some(c),
                radius: Some(radius),
                label: Some(label),
                ..Default::default()
            };
            (ToolRequest::new(call.function, params, TimeBucket::Midnight00), None, None, Some(cn))
        }
    };
    let (req, origin_name, destination_name, center_name) = built;
    Ok(ToolDecision {
        request: req.map_err(|e| DecideError::Invalid(e.to_string()))?,
        origin_name,
        destination_name,
        center_name,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapOutcome {
    pub result: AgentResult,
    /// Every request sent to the cache, in order, including failed ones.
    pub calls: Vec<ToolRequest>,
    pub observations: Vec<ToolObservation>,
    pub rounds: usize,
}

pub struct MapAgent<'a> {
    cache: &'a ToolCache,
    attempt_cap: usize,
}

impl<'a> MapAgent<'a> {
    pub fn new(cache: &'a ToolCache, attempt_cap: usize) -> Self {
        MapAgent {
            cache,
            attempt_cap: attempt_cap.max(1),
        }
    }

    fn invoke(&self, d: ToolDecision, calls: &mut Vec<ToolRequest>) -> Result<ToolObservation, String> {
        calls.push(d.request.clone());
        let result = self.cache.lookup(&d.request).map_err(|e| e.to_string())?;
        Ok(ToolObservation {
            request: d.request,
            origin_name: d.origin_name,
            destination_name: d.destination_name,
            center_name: d.center_name,
            result,
        })
    }

    fn finish(&self, rule: &SynthesisRule, observations: &[ToolObservation]) -> Result<AgentResult, String> {
        let answer = synthesize(rule, observations)?;
        let mut evidence: Vec<Evidence> = observations
            .iter()
            .map(|o| Evidence::Tool { observation: o.clone() })
            .collect();
        let found: BTreeMap<String, GeoPoint> = observations
            .iter()
            .flat_map(|o| o.result.poi_hits().unwrap_or_default())
            .map(|h| (h.name, h.location))
            .collect();
        if !found.is_empty() {
            evidence.push(Evidence::Coordinates { map: found });
        }
        evidence.push(Evidence::Derived {
            rule: rule.to_string(),
            answer,
        });
        Ok(AgentResult::success(evidence))
    }

    /// Run one map sub-task. With `injected` gold requests, those requests
    /// replace whatever calls the backend proposes; the backend still
    /// chooses the synthesis rule.
    pub fn handle(
        &self,
        task: &AgentTask,
        backend: &dyn ChatBackend,
        injected: Option<&[ToolRequest]>,
        log: &mut Vec<CallRecord>,
    ) -> MapOutcome {
        let mut gazette = Gazette::new(&task.context);
        let mut observations: Vec<ToolObservation> = Vec::new();
        let mut calls: Vec<ToolRequest> = Vec::new();
        let mut feedback: Option<String> = None;
        let mut injected_done = false;
        let mut rounds = 0;
        let outcome = |result, calls, observations, rounds| MapOutcome {
            result,
            calls,
            observations,
            rounds,
        };
        while rounds < self.attempt_cap {
            rounds += 1;
            let ctx = StageContext {
                question: task.question.clone(),
                intents: task.intents.clone(),
                slots: task.slots.clone(),
                task: Some(task.clone()),
                observations: observations.clone(),
                feedback: feedback.clone(),
                ..Default::default()
            };
            let user = prompts::map_message(task, &observations, feedback.as_deref());
            let text = match call_backend(backend, Stage::Tool, prompts::MAP, user, ctx, log) {
                Ok(t) => t,
                Err(e) => {
                    feedback = Some(e.to_string());
                    continue;
                }
            };
            let resp = parse_map_response(&text);
            feedback = None;

            let mut round_error: Option<String> = None;
            if let (Some(gold), false) = (injected, injected_done) {
                injected_done = true;
                for req in gold {
                    let d = ToolDecision {
                        request: req.clone(),
                        origin_name: req.params.origin.as_ref().and_then(|p| gazette.name_at(p)),
                        destination_name: req.params.destination.as_ref().and_then(|p| gazette.name_at(p)),
                        center_name: req.params.center.as_ref().and_then(|p| gazette.name_at(p)),
                    };
                    match self.invoke(d, &mut calls) {
                        Ok(o) => {
                            gazette.absorb(&o);
                            observations.push(o);
                        }
                        Err(e) => {
                            round_error = Some(e);
                            break;
                        }
                    }
                }
            } else if injected.is_none() {
                if let Some(reason) = &resp.unable {
                    if resp.calls.is_empty() {
                        return outcome(AgentResult::unable(reason.clone()), calls, observations, rounds);
                    }
                }
                for c in &resp.calls {
                    let d = match decide_tool(c, &gazette) {
                        Ok(d) => d,
                        Err(e @ DecideError::MissingCoordinates(_)) => {
                            return outcome(AgentResult::unable(e.to_string()), calls, observations, rounds);
                        }
                        Err(e) => {
                            round_error = Some(e.to_string());
                            break;
                        }
                    };
                    match self.invoke(d, &mut calls) {
                        Ok(o) => {
                            gazette.absorb(&o);
                            observations.push(o);
                        }
                        Err(e) => {
                            round_error = Some(e);
                            break;
                        }
                    }
                }
                if !resp.malformed.is_empty() && round_error.is_none() && resp.synthesis.is_none() {
                    round_error = Some(format!("could not parse: {}", resp.malformed.join(" | ")));
                }
            }
            if let Some(e) = round_error {
                feedback = Some(e);
                continue;
            }
            match &resp.synthesis {
                Some(rule) => match self.finish(rule, &observations) {
                    Ok(r) => return outcome(r, calls, observations, rounds),
                    Err(e) => feedback = Some(format!("synthesis {rule} failed: {e}")),
                },
                None if resp.calls.is_empty() && injected.is_none() => {
                    feedback = Some("the reply had no CALL or SYNTHESIS line".into());
                }
                None => {}
            }
        }
        let why = feedback.unwrap_or_else(|| "no synthesis was requested".into());
        outcome(
            AgentResult::error(format!(
                "cannot derive a conclusive answer within {} attempts: {why}",
                self.attempt_cap
            )),
            calls,
            observations,
            rounds,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx() -> Gazette {
        let mut m = BTreeMap::new();
        m.insert("A".to_string(), GeoPoint::new(23.1, 113.3).unwrap());
        m.insert("B".to_string(), GeoPoint::new(23.11, 113.31).unwrap());
        Gazette::new(&m)
    }

    fn call(json: &str, f: ToolFunction) -> CallSpec {
        CallSpec {
            function: f,
            args: serde_json::from_str(json).unwrap(),
        }
    }

    #[test]
    fn decide_resolves_names() {
        let d = decide_tool(
            &call(r#"{"origin":"A","destination":"B","mode":"driving"}"#, ToolFunction::TimeQuery),
            &ctx(),
        )
        .unwrap();
        assert_eq!(d.request.params.origin, Some(GeoPoint::new(23.1, 113.3).unwrap()));
        assert_eq!(d.destination_name.as_deref(), Some("B"));
        assert_eq!(d.request.time_bucket, TimeBucket::Midnight00);
        let r = decide_tool(
            &call(r#"{"origin":"A","destination":"B","mode":"transit"}"#, ToolFunction::RushHourQuery),
            &ctx(),
        )
        .unwrap();
        assert_eq!(r.request.time_bucket, TimeBucket::Peak08);
    }

    #[test]
    fn missing_entity_is_reported() {
        let e = decide_tool(
            &call(r#"{"origin":"A","destination":"Zed","mode":"driving"}"#, ToolFunction::TimeQuery),
            &ctx(),
        )
        .unwrap_err();
        assert_eq!(e, DecideError::MissingCoordinates("Zed".into()));
        let bad = decide_tool(
            &call(r#"{"origin":"A","destination":"B","mode":"teleport"}"#, ToolFunction::TimeQuery),
            &ctx(),
        )
        .unwrap_err();
        assert!(matches!(bad, DecideError::Invalid(_)));
    }

    #[test]
    fn radius_accepts_numeric_strings() {
        let d = decide_tool(
            &call(r#"{"center":"A","radius":"800","label":"park"}"#, ToolFunction::SurroundingPoisQuery),
            &ctx(),
        )
        .unwrap();
        assert_eq!(d.request.params.radius, Some(800));
        assert_eq!(d.center_name.as_deref(), Some("A"));
    }
}
