//! Answer derivation shared by the generator (gold answers), the map agent
//! (post-tool synthesis) and rule-based finalizers.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::domain::{CanonicalAnswer, Cell, NumberUnit, ResultSet};
use crate::tools::{ToolFunction, ToolRequest, ToolResult};

/// Derivation over the rows of one SQL result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum SqlRule {
    /// Single-row, single-value answer.
    Lookup { column: String, unit: NumberUnit },
    /// Number of rows.
    Count,
    /// Values of one column.
    List { column: String },
    Argmin { name_column: String, value_column: String },
    Argmax { name_column: String, value_column: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompareOp {
    Lt,
    Gt,
}

/// Post-tool synthesis applied by the map agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SynthesisRule {
    /// A single scalar result, or the names of surrounding hits (first
    /// `limit` when given).
    Passthrough { limit: Option<usize> },
    Argmin,
    Argmax,
    /// Number of surrounding hits.
    Count,
    /// Candidates whose value is at most `max` (seconds or meters).
    ThresholdFilter { max: u64 },
    /// First scalar against second scalar.
    Compare { op: CompareOp },
}

impl SynthesisRule {
    pub fn name(&self) -> &'static str {
        match self {
            SynthesisRule::Passthrough { .. } => "passthrough",
            SynthesisRule::Argmin => "argmin",
            SynthesisRule::Argmax => "argmax",
            SynthesisRule::Count => "count",
            SynthesisRule::ThresholdFilter { .. } => "threshold_filter",
            SynthesisRule::Compare { .. } => "compare",
        }
    }

    /// Line form used in backend envelopes: `passthrough 3`, `argmin`,
    /// `threshold_filter 900`, `compare lt`.
    pub fn parse(s: &str) -> Option<Self> {
        let mut it = s.split_whitespace();
        let head = it.next()?.to_ascii_lowercase();
        let arg = it.next();
        let rule = match head.as_str() {
            "passthrough" => SynthesisRule::Passthrough {
                limit: match arg {
                    Some(a) => Some(a.parse().ok()?),
                    None => None,
                },
            },
            "argmin" => SynthesisRule::Argmin,
            "argmax" => SynthesisRule::Argmax,
            "count" => SynthesisRule::Count,
            "threshold_filter" => SynthesisRule::ThresholdFilter { max: arg?.parse().ok()? },
            "compare" => SynthesisRule::Compare {
                op: match arg?.to_ascii_lowercase().as_str() {
                    "lt" => CompareOp::Lt,
                    "gt" => CompareOp::Gt,
                    _ => return None,
                },
            },
            _ => return None,
        };
        Some(rule)
    }
}

impl fmt::Display for SynthesisRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SynthesisRule::Passthrough { limit: Some(n) } => write!(f, "passthrough {n}"),
            SynthesisRule::ThresholdFilter { max } => write!(f, "threshold_filter {max}"),
            SynthesisRule::Compare { op: CompareOp::Lt } => f.write_str("compare lt"),
            SynthesisRule::Compare { op: CompareOp::Gt } => f.write_str("compare gt"),
            other => f.write_str(other.name()),
        }
    }
}

/// One executed tool call together with the entity names its coordinate
/// parameters were taken from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolObservation {
    pub request: ToolRequest,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin_name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub destination_name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center_name: Option<String>,
    pub result: ToolResult,
}

fn cell_number(c: &Cell) -> Option<f64> {
    match c {
        Cell::Text(t) => t.trim().parse().ok(),
        other => other.as_f64(),
    }
}

fn column(rs: &ResultSet, name: &str) -> Result<usize, String> {
    rs.column_index(name).ok_or_else(|| format!("result has no column '{name}'"))
}

/// Pick the extremal (name, value); ties go to the lexicographically
/// smallest name.
fn extremum(cands: &[(String, f64)], max: bool) -> Option<String> {
    let mut best: Option<&(String, f64)> = None;
    for c in cands {
        best = match best {
            None => Some(c),
            Some(b) => {
                let better = if max { c.1 > b.1 } else { c.1 < b.1 };
                if better || (c.1 == b.1 && c.0 < b.0) {
                    Some(c)
                } else {
                    Some(b)
                }
            }
        };
    }
    best.map(|b| b.0.clone())
}

pub fn derive_sql(rule: &SqlRule, rs: &ResultSet) -> Result<CanonicalAnswer, String> {
    match rule {
        SqlRule::Lookup { column: col, unit } => {
            let i = column(rs, col)?;
            match rs.rows.as_slice() {
                [row] => {
                    let v = row.get(i).and_then(cell_number).ok_or("lookup value is not numeric")?;
                    Ok(CanonicalAnswer::Number { value: v, unit: *unit })
                }
                [] => Err("empty result".into()),
                _ => Err(format!("lookup expects one row, got {}", rs.rows.len())),
            }
        }
        SqlRule::Count => Ok(CanonicalAnswer::Number {
            value: rs.rows.len() as f64,
            unit: NumberUnit::Count,
        }),
        SqlRule::List { column: col } => {
            let i = column(rs, col)?;
            let items: Vec<String> = rs.rows.iter().filter_map(|r| r.get(i).map(|c| c.to_string())).collect();
            CanonicalAnswer::entity_set(items).map_err(|_| "empty result".to_string())
        }
        SqlRule::Argmin { name_column, value_column } | SqlRule::Argmax { name_column, value_column } => {
            let n = column(rs, name_column)?;
            let v = column(rs, value_column)?;
            let cands: Vec<(String, f64)> = rs
                .rows
                .iter()
                .filter_map(|r| Some((r.get(n)?.to_string(), r.get(v).and_then(cell_number)?)))
                .collect();
            let max = matches!(rule, SqlRule::Argmax { .. });
            let name = extremum(&cands, max).ok_or("empty result")?;
            Ok(CanonicalAnswer::EntitySet { items: vec![name] })
        }
    }
}

/// Candidate entity of each scalar observation: the endpoint that varies
/// across calls (destination when every origin is the same, else origin).
fn scalar_candidates(obs: &[ToolObservation]) -> Result<Vec<(String, f64)>, String> {
    let scalars: Vec<&ToolObservation> = obs.iter().filter(|o| o.request.function.is_scalar()).collect();
    if scalars.is_empty() {
        return Err("no scalar tool results to compare".into());
    }
    let same_origin = scalars.windows(2).all(|w| w[0].origin_name == w[1].origin_name);
    scalars
        .iter()
        .map(|o| {
            let name = if same_origin && scalars.len() > 1 {
                o.destination_name.clone()
            } else {
                o.origin_name.clone()
            };
            let name = name.ok_or("tool call without entity name")?;
            let v = o.result.scalar().ok_or("malformed scalar payload")?;
            Ok((name, v as f64))
        })
        .collect()
}

pub fn synthesize(rule: &SynthesisRule, obs: &[ToolObservation]) -> Result<CanonicalAnswer, String> {
    match rule {
        SynthesisRule::Passthrough { limit } => {
            let last = obs.last().ok_or("no tool results")?;
            match last.request.function {
                ToolFunction::TimeQuery | ToolFunction::RushHourQuery => Ok(CanonicalAnswer::Duration {
                    seconds: last.result.scalar().ok_or("malformed duration payload")?,
                }),
                ToolFunction::DistanceQuery => Ok(CanonicalAnswer::Distance {
                    meters: last.result.scalar().ok_or("malformed distance payload")?,
                }),
                ToolFunction::SurroundingPoisQuery => {
                    let hits = last.result.poi_hits().ok_or("malformed surrounding payload")?;
                    let n = limit.unwrap_or(hits.len());
                    if hits.len() < n {
                        return Err(format!("only {} results, {} requested", hits.len(), n));
                    }
                    CanonicalAnswer::entity_set(hits.into_iter().take(n).map(|h| h.name))
                        .map_err(|_| "empty result".to_string())
                }
            }
        }
        SynthesisRule::Count => {
            let last = obs
                .iter()
                .rev()
                .find(|o| o.request.function == ToolFunction::SurroundingPoisQuery)
                .ok_or("count needs a surrounding_pois_query result")?;
            let hits = last.result.poi_hits().ok_or("malformed surrounding payload")?;
            Ok(CanonicalAnswer::Number {
                value: hits.len() as f64,
                unit: NumberUnit::Count,
            })
        }
        SynthesisRule::Argmin | SynthesisRule::Argmax => {
            let cands = scalar_candidates(obs)?;
            let name = extremum(&cands, matches!(rule, SynthesisRule::Argmax)).ok_or("no candidates")?;
            Ok(CanonicalAnswer::EntitySet { items: vec![name] })
        }
        SynthesisRule::ThresholdFilter { max } => {
            let cands = scalar_candidates(obs)?;
            let items: Vec<String> = cands.into_iter().filter(|c| c.1 <= *max as f64).map(|c| c.0).collect();
            CanonicalAnswer::entity_set(items).map_err(|_| "no candidate within the threshold".to_string())
        }
        SynthesisRule::Compare { op } => {
            let vals: Vec<u64> = obs.iter().filter_map(|o| o.result.scalar()).collect();
            let [a, b] = vals.as_slice() else {
                return Err(format!("compare needs exactly two scalar results, got {}", vals.len()));
            };
            Ok(CanonicalAnswer::Boolean {
                value: match op {
                    CompareOp::Lt => a < b,
                    CompareOp::Gt => a > b,
                },
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::GeoPoint;
    use crate::tools::TravelMode;

    fn time_obs(origin: &str, dest: &str, secs: u64) -> ToolObservation {
        let a = GeoPoint::new(23.0, 113.0).unwrap();
        ToolObservation {
            request: ToolRequest::time_query(a, a, TravelMode::Driving).unwrap(),
            origin_name: Some(origin.into()),
            destination_name: Some(dest.into()),
            center_name: None,
            result: ToolResult::duration(ToolFunction::TimeQuery, secs),
        }
    }

    #[test]
    fn argmin_over_three_durations() {
        let obs = vec![time_obs("A", "P", 600), time_obs("B", "P", 900), time_obs("C", "P", 450)];
        assert_eq!(
            synthesize(&SynthesisRule::Argmin, &obs).unwrap(),
            CanonicalAnswer::EntitySet { items: vec!["C".into()] }
        );
        assert_eq!(
            synthesize(&SynthesisRule::Argmax, &obs).unwrap(),
            CanonicalAnswer::EntitySet { items: vec!["B".into()] }
        );
    }

    #[test]
    fn same_origin_uses_destinations() {
        let obs = vec![time_obs("H", "X", 50), time_obs("H", "Y", 40)];
        assert_eq!(
            synthesize(&SynthesisRule::Argmin, &obs).unwrap(),
            CanonicalAnswer::EntitySet { items: vec!["Y".into()] }
        );
    }

    #[test]
    fn ties_go_to_smallest_name_regardless_of_order() {
        let mut obs = vec![time_obs("Zed", "P", 10), time_obs("Amy", "P", 10), time_obs("Max", "P", 30)];
        let a = synthesize(&SynthesisRule::Argmin, &obs).unwrap();
        obs.reverse();
        assert_eq!(a, synthesize(&SynthesisRule::Argmin, &obs).unwrap());
        assert_eq!(a, CanonicalAnswer::EntitySet { items: vec!["Amy".into()] });
    }

    #[test]
    fn threshold_and_compare() {
        let obs = vec![time_obs("A", "P", 600), time_obs("B", "P", 900)];
        assert_eq!(
            synthesize(&SynthesisRule::ThresholdFilter { max: 600 }, &obs).unwrap(),
            CanonicalAnswer::EntitySet { items: vec!["A".into()] }
        );
        assert!(synthesize(&SynthesisRule::ThresholdFilter { max: 10 }, &obs).is_err());
        assert_eq!(
            synthesize(&SynthesisRule::Compare { op: CompareOp::Lt }, &obs).unwrap(),
            CanonicalAnswer::Boolean { value: true }
        );
    }

    #[test]
    fn passthrough_single_distance() {
        let a = GeoPoint::new(23.0, 113.0).unwrap();
        let obs = vec![ToolObservation {
            request: ToolRequest::distance_query(a, a, crate::tools::DistanceKind::Straight).unwrap(),
            origin_name: Some("A".into()),
            destination_name: Some("B".into()),
            center_name: None,
            result: ToolResult::distance(1234),
        }];
        assert_eq!(
            synthesize(&SynthesisRule::Passthrough { limit: None }, &obs).unwrap(),
            CanonicalAnswer::Distance { meters: 1234 }
        );
    }

    #[test]
    fn rule_line_form_round_trips() {
        for r in [
            SynthesisRule::Passthrough { limit: None },
            SynthesisRule::Passthrough { limit: Some(2) },
            SynthesisRule::Argmin,
            SynthesisRule::Argmax,
            SynthesisRule::Count,
            SynthesisRule::ThresholdFilter { max: 900 },
            SynthesisRule::Compare { op: CompareOp::Gt },
        ] {
            assert_eq!(SynthesisRule::parse(&r.to_string()), Some(r));
        }
        assert_eq!(SynthesisRule::parse("median"), None);
    }

    #[test]
    fn sql_rules() {
        let rs = ResultSet {
            columns: vec!["name".into(), "avg_price".into()],
            rows: vec![
                vec![Cell::Text("A".into()), Cell::Integer(300)],
                vec![Cell::Text("B".into()), Cell::Integer(500)],
            ],
        };
        assert_eq!(
            derive_sql(&SqlRule::Argmax { name_column: "name".into(), value_column: "avg_price".into() }, &rs).unwrap(),
            CanonicalAnswer::EntitySet { items: vec!["B".into()] }
        );
        assert_eq!(
            derive_sql(&SqlRule::Count, &rs).unwrap(),
            CanonicalAnswer::Number { value: 2.0, unit: NumberUnit::Count }
        );
        assert!(derive_sql(&SqlRule::Lookup { column: "avg_price".into(), unit: NumberUnit::YuanPerSqm }, &rs).is_err());
        let one = ResultSet { rows: vec![rs.rows[0].clone()], ..rs.clone() };
        assert_eq!(
            derive_sql(&SqlRule::Lookup { column: "avg_price".into(), unit: NumberUnit::YuanPerSqm }, &one).unwrap(),
            CanonicalAnswer::Number { value: 300.0, unit: NumberUnit::YuanPerSqm }
        );
    }
}
