//! Declarative question templates.
//!
//! A template file holds `[[template]]` tables. Each template declares
//! placeholders (sampled in declaration order), a question pattern, SQL
//! patterns, optional tool-call patterns and an answer rule. Patterns use
//! `{name}` for a placeholder value and `{name:sql}` for the value as a
//! quoted SQL literal. SQL patterns may also use `{community_table}`,
//! `{poi_table}`, `{poi_community_table}` and `{community_community_table}`,
//! which resolve against the bound city. Tool patterns may use `{item}` for
//! the current element of a `for_each` loop.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::answer::{CompareOp, SqlRule, SynthesisRule};
use crate::domain::{NumberUnit, QuestionType};
use crate::tools::{TimeBucket, ToolFunction};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TemplateError {
    #[error("{source_name}: {message}")]
    Parse { source_name: String, message: String },
    #[error("template {id}: {message}")]
    Invalid { id: String, message: String },
    #[error("io: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlaceholderKind {
    City,
    District,
    Community,
    Poi,
    PoiLabel,
    Choice,
    Number,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlaceholderSpec {
    pub name: String,
    pub kind: PlaceholderKind,
    /// Slot type annotated wherever the placeholder appears in the question.
    #[serde(default)]
    pub slot: Option<String>,
    /// Community: restrict to the district bound to this placeholder.
    #[serde(default)]
    pub in_district: Option<String>,
    /// Community: within the POI pairing radius of this POI placeholder.
    #[serde(default)]
    pub near_poi: Option<String>,
    /// Community: within the community pairing radius of this community.
    /// POI: within the POI pairing radius of this community.
    #[serde(default)]
    pub near_community: Option<String>,
    /// POI: label bound to this placeholder.
    #[serde(default)]
    pub label: Option<String>,
    #[serde(default)]
    pub values: Vec<String>,
    #[serde(default)]
    pub numbers: Vec<i64>,
    /// Choice/number: must differ from these placeholders.
    #[serde(default)]
    pub distinct_from: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForEach {
    /// Index of an earlier `surrounding_pois_query` tool step.
    pub step: usize,
    /// Number of leading hits to iterate over (placeholder or literal).
    #[serde(default)]
    pub limit: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToolPattern {
    pub function: ToolFunction,
    #[serde(default)]
    pub bucket: Option<TimeBucket>,
    #[serde(default)]
    pub origin: Option<String>,
    #[serde(default)]
    pub destination: Option<String>,
    #[serde(default)]
    pub center: Option<String>,
    #[serde(default)]
    pub mode: Option<String>,
    #[serde(default)]
    pub kind: Option<String>,
    #[serde(default)]
    pub radius: Option<String>,
    #[serde(default)]
    pub label: Option<String>,
    #[serde(default)]
    pub for_each: Option<ForEach>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerSource {
    Sql,
    Tools,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnswerSpec {
    pub source: AnswerSource,
    /// sql: lookup | count | list | argmin | argmax.
    /// tools: passthrough | argmin | argmax | count | threshold_filter | compare.
    pub rule: String,
    /// SQL step the rule reads; defaults to the last one.
    #[serde(default)]
    pub step: Option<usize>,
    #[serde(default)]
    pub column: Option<String>,
    #[serde(default)]
    pub name_column: Option<String>,
    #[serde(default)]
    pub value_column: Option<String>,
    #[serde(default)]
    pub unit: Option<NumberUnit>,
    #[serde(default)]
    pub limit: Option<String>,
    /// threshold_filter bound; multiplied by `scale`.
    #[serde(default)]
    pub max: Option<String>,
    #[serde(default)]
    pub scale: Option<u64>,
    #[serde(default)]
    pub op: Option<CompareOp>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Template {
    pub id: String,
    pub question_type: QuestionType,
    pub intents: Vec<String>,
    pub question: String,
    pub placeholders: Vec<PlaceholderSpec>,
    pub sql: Vec<String>,
    #[serde(default)]
    pub tools: Vec<ToolPattern>,
    pub answer: AnswerSpec,
}

/// A resolved answer rule for one binding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum ResolvedRule {
    Sql { step: usize, rule: SqlRule },
    Tools { rule: SynthesisRule },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Segment {
    Text(String),
    Ref { name: String, sql: bool },
}

/// Split a pattern into literal text and `{name}` / `{name:sql}` refs.
pub fn parse_pattern(pattern: &str) -> Result<Vec<Segment>, String> {
    let mut out = Vec::new();
    let mut rest = pattern;
    while let Some(open) = rest.find('{') {
        if open > 0 {
            out.push(Segment::Text(rest[..open].to_string()));
        }
        let after = &rest[open + 1..];
        let close = after.find('}').ok_or_else(|| format!("unclosed '{{' in '{pattern}'"))?;
        let inner = &after[..close];
        let (name, fmt) = match inner.split_once(':') {
            Some((n, f)) => (n, Some(f)),
            None => (inner, None),
        };
        if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
            return Err(format!("bad placeholder '{{{inner}}}' in '{pattern}'"));
        }
        let sql = match fmt {
            None => false,
            Some("sql") => true,
            Some(other) => return Err(format!("unknown format ':{other}' in '{pattern}'")),
        };
        out.push(Segment::Ref { name: name.to_string(), sql });
        rest = &after[close + 1..];
    }
    if !rest.is_empty() {
        out.push(Segment::Text(rest.to_string()));
    }
    Ok(out)
}

pub const TABLE_REFS: [&str; 4] = ["community_table", "poi_table", "poi_community_table", "community_community_table"];

fn refs_of(pattern: &str) -> Result<Vec<String>, String> {
    Ok(parse_pattern(pattern)?
        .into_iter()
        .filter_map(|s| match s {
            Segment::Ref { name, .. } => Some(name),
            Segment::Text(_) => None,
        })
        .collect())
}

/// `{name}` → Some(name) when the whole value is a single reference.
pub fn single_ref(value: &str) -> Option<&str> {
    let v = value.trim();
    let inner = v.strip_prefix('{')?.strip_suffix('}')?;
    if inner.contains(['{', '}', ':']) {
        None
    } else {
        Some(inner)
    }
}

impl Template {
    pub fn placeholder(&self, name: &str) -> Option<&PlaceholderSpec> {
        self.placeholders.iter().find(|p| p.name == name)
    }

    pub fn city_placeholder(&self) -> Option<&PlaceholderSpec> {
        self.placeholders.iter().find(|p| p.kind == PlaceholderKind::City)
    }

    /// Static checks: placeholders bound, references defined, type/tool
    /// consistency, `{X}`-style count limits within 1..=3.
    pub fn validate(&self) -> Result<(), TemplateError> {
        let bad = |message: String| TemplateError::Invalid {
            id: self.id.clone(),
            message,
        };
        if self.intents.is_empty() {
            return Err(bad("no intents".into()));
        }
        if self.sql.is_empty() {
            return Err(bad("at least one SQL pattern is required".into()));
        }
        match self.question_type {
            QuestionType::Simple if !self.tools.is_empty() => {
                return Err(bad("type 1 templates cannot call tools".into()))
            }
            QuestionType::Compound | QuestionType::MultiStep if self.tools.is_empty() => {
                return Err(bad("type 2/3 templates need tool steps".into()))
            }
            _ => {}
        }
        let mut defined: BTreeMap<&str, PlaceholderKind> = BTreeMap::new();
        let cities = self.placeholders.iter().filter(|p| p.kind == PlaceholderKind::City).count();
        if cities != 1 || self.placeholders.first().map(|p| p.kind) != Some(PlaceholderKind::City) {
            return Err(bad("the first and only city placeholder must come first".into()));
        }
        for p in &self.placeholders {
            if defined.contains_key(p.name.as_str()) || TABLE_REFS.contains(&p.name.as_str()) || p.name == "item" {
                return Err(bad(format!("placeholder '{}' is duplicated or reserved", p.name)));
            }
            let need = |dep: &Option<String>, kind: PlaceholderKind, what: &str| -> Result<(), TemplateError> {
                if let Some(d) = dep {
                    if defined.get(d.as_str()) != Some(&kind) {
                        return Err(bad(format!(
                            "placeholder '{}': {what} '{d}' must be an earlier {kind:?} placeholder",
                            p.name
                        )));
                    }
                }
                Ok(())
            };
            need(&p.in_district, PlaceholderKind::District, "in_district")?;
            need(&p.near_poi, PlaceholderKind::Poi, "near_poi")?;
            need(&p.near_community, PlaceholderKind::Community, "near_community")?;
            need(&p.label, PlaceholderKind::PoiLabel, "label")?;
            for d in &p.distinct_from {
                if !defined.contains_key(d.as_str()) {
                    return Err(bad(format!("placeholder '{}': distinct_from '{d}' is not defined earlier", p.name)));
                }
            }
            match p.kind {
                PlaceholderKind::Choice if p.values.is_empty() => {
                    return Err(bad(format!("choice placeholder '{}' has no values", p.name)))
                }
                PlaceholderKind::Number if p.numbers.is_empty() => {
                    return Err(bad(format!("number placeholder '{}' has no numbers", p.name)))
                }
                _ => {}
            }
            if (p.name == "X" || p.slot.as_deref() == Some("count_limit"))
                && (p.kind != PlaceholderKind::Number || p.numbers.iter().any(|n| !(1..=3).contains(n)))
            {
                return Err(bad(format!("count placeholder '{}' must be a number in 1..=3", p.name)));
            }
            defined.insert(&p.name, p.kind);
        }
        let check_refs = |pattern: &str, allow_tables: bool, allow_item: bool| -> Result<(), TemplateError> {
            for r in refs_of(pattern).map_err(&bad)? {
                let ok = defined.contains_key(r.as_str())
                    || (allow_tables && TABLE_REFS.contains(&r.as_str()))
                    || (allow_item && r == "item");
                if !ok {
                    return Err(bad(format!("unbound reference '{{{r}}}' in '{pattern}'")));
                }
            }
            Ok(())
        };
        check_refs(&self.question, false, false)?;
        for s in &self.sql {
            check_refs(s, true, false)?;
        }
        for (i, t) in self.tools.iter().enumerate() {
            if let Some(fe) = &t.for_each {
                if fe.step >= i || self.tools[fe.step].function != ToolFunction::SurroundingPoisQuery {
                    return Err(bad(format!("tool step {i}: for_each must name an earlier surrounding_pois_query")));
                }
                if let Some(l) = &fe.limit {
                    check_refs(l, false, false)?;
                }
            }
            let fields = [&t.origin, &t.destination, &t.center, &t.mode, &t.kind, &t.radius, &t.label];
            for f in fields.into_iter().flatten() {
                check_refs(f, false, t.for_each.is_some())?;
            }
        }
        let a = &self.answer;
        for f in [&a.limit, &a.max].into_iter().flatten() {
            check_refs(f, false, false)?;
        }
        match (a.source, a.rule.as_str()) {
            (AnswerSource::Sql, "lookup") if a.column.is_some() && a.unit.is_some() => {}
            (AnswerSource::Sql, "list") if a.column.is_some() => {}
            (AnswerSource::Sql, "count") => {}
            (AnswerSource::Sql, "argmin" | "argmax") if a.name_column.is_some() && a.value_column.is_some() => {}
            (AnswerSource::Tools, "passthrough" | "argmin" | "argmax" | "count") => {}
            (AnswerSource::Tools, "threshold_filter") if a.max.is_some() => {}
            (AnswerSource::Tools, "compare") if a.op.is_some() => {}
            (s, r) => return Err(bad(format!("answer rule '{r}' with source {s:?} is missing fields or unknown"))),
        }
        if a.source == AnswerSource::Tools && self.tools.is_empty() {
            return Err(bad("tool answer rule without tool steps".into()));
        }
        if let Some(step) = a.step {
            if step >= self.sql.len() {
                return Err(bad(format!("answer step {step} out of range")));
            }
        }
        Ok(())
    }

    /// Intents and slot types used anywhere in the template.
    pub fn slot_types(&self) -> BTreeSet<String> {
        self.placeholders.iter().filter_map(|p| p.slot.clone()).collect()
    }
}

#[derive(Debug, Deserialize)]
struct TemplateFile {
    template: Vec<Template>,
}

/// Ordered, validated template collection with unique ids.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TemplateSet {
    templates: Vec<Template>,
}

const DEFAULT_FILES: [(&str, &str); 3] = [
    ("type1.toml", include_str!("../../assets/templates/type1.toml")),
    ("type2.toml", include_str!("../../assets/templates/type2.toml")),
    ("type3.toml", include_str!("../../assets/templates/type3.toml")),
];

impl TemplateSet {
    pub fn new(templates: Vec<Template>) -> Result<Self, TemplateError> {
        let mut ids = BTreeSet::new();
        for t in &templates {
            t.validate()?;
            if !ids.insert(t.id.clone()) {
                return Err(TemplateError::Invalid {
                    id: t.id.clone(),
                    message: "duplicate template id".into(),
                });
            }
        }
        Ok(TemplateSet { templates })
    }

    /// The shipped default set.
    pub fn default_set() -> Self {
        let mut all = Vec::new();
        for (name, text) in DEFAULT_FILES {
            all.extend(Self::parse_str(name, text).expect("bundled templates parse"));
        }
        Self::new(all).expect("bundled templates validate")
    }

    pub fn parse_str(source_name: &str, text: &str) -> Result<Vec<Template>, TemplateError> {
        let file: TemplateFile = toml::from_str(text).map_err(|e| TemplateError::Parse {
            source_name: source_name.to_string(),
            message: e.to_string(),
        })?;
        Ok(file.template)
    }

    /// Load every `*.toml` file of a directory in file-name order.
    pub fn load_dir(dir: &Path) -> Result<Self, TemplateError> {
        let mut paths: Vec<_> = std::fs::read_dir(dir)
            .map_err(|e| TemplateError::Io(format!("{}: {e}", dir.display())))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "toml"))
            .collect();
        paths.sort();
        let mut all = Vec::new();
        for p in paths {
            let text = std::fs::read_to_string(&p).map_err(|e| TemplateError::Io(format!("{}: {e}", p.display())))?;
            all.extend(Self::parse_str(&p.display().to_string(), &text)?);
        }
        Self::new(all)
    }

    /// Write the default set to a directory (one file per question type).
    pub fn write_default_files(dir: &Path) -> Result<(), TemplateError> {
        std::fs::create_dir_all(dir).map_err(|e| TemplateError::Io(e.to_string()))?;
        for (name, text) in DEFAULT_FILES {
            std::fs::write(dir.join(name), text).map_err(|e| TemplateError::Io(e.to_string()))?;
        }
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&Template> {
        self.templates.iter().find(|t| t.id == id)
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Template> {
        self.templates.iter()
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }

    pub fn intents(&self) -> BTreeSet<String> {
        self.templates.iter().flat_map(|t| t.intents.iter().cloned()).collect()
    }
}

impl<'a> IntoIterator for &'a TemplateSet {
    type Item = &'a Template;
    type IntoIter = std::slice::Iter<'a, Template>;
    fn into_iter(self) -> Self::IntoIter {
        self.templates.iter()
    }
}
