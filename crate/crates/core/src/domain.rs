//! Shared vocabulary: geographic entities, QA instances, answers and the
//! supervision traces attached to every instance.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tools::{ToolRequest, ToolResult};

/// Mean Earth radius used for every great-circle computation.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// Decimal places kept for coordinates in fixtures and cache keys.
pub const COORD_DECIMALS: i32 = 6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DomainError {
    #[error("latitude {0} outside [-90, 90]")]
    Latitude(f64),
    #[error("longitude {0} outside [-180, 180]")]
    Longitude(f64),
    #[error("entity set answers need at least one element")]
    EmptyEntitySet,
    #[error("invalid question type {0}")]
    QuestionType(u8),
    #[error("instance {id}: {reason}")]
    Instance { id: String, reason: String },
    #[error("io: {0}")]
    Io(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub latitude: f64,
    pub longitude: f64,
}

impl GeoPoint {
    pub fn new(latitude: f64, longitude: f64) -> Result<Self, DomainError> {
        let p = GeoPoint { latitude, longitude };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        if !(-90.0..=90.0).contains(&self.latitude) {
            return Err(DomainError::Latitude(self.latitude));
        }
        if !(-180.0..=180.0).contains(&self.longitude) {
            return Err(DomainError::Longitude(self.longitude));
        }
        Ok(())
    }

    /// Coordinates rounded to [`COORD_DECIMALS`] places.
    pub fn rounded(&self) -> GeoPoint {
        GeoPoint {
            latitude: round_coord(self.latitude),
            longitude: round_coord(self.longitude),
        }
    }
}

impl fmt::Display for GeoPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.6},{:.6}", self.latitude, self.longitude)
    }
}

pub fn round_coord(v: f64) -> f64 {
    let scale = 10f64.powi(COORD_DECIMALS);
    let r = (v * scale).round() / scale;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

/// Great-circle distance in meters (haversine formula, spherical Earth).
pub fn haversine(a: GeoPoint, b: GeoPoint) -> f64 {
    let (lat1, lat2) = (a.latitude.to_radians(), b.latitude.to_radians());
    let dlat = lat2 - lat1;
    let dlon = (b.longitude - a.longitude).to_radians();
    let h = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoiCategory {
    Education,
    Medical,
    Supermarket,
    Shopping,
    Park,
    Transit,
}

impl PoiCategory {
    pub const ALL: [PoiCategory; 6] = [
        PoiCategory::Education,
        PoiCategory::Medical,
        PoiCategory::Supermarket,
        PoiCategory::Shopping,
        PoiCategory::Park,
        PoiCategory::Transit,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            PoiCategory::Education => "education",
            PoiCategory::Medical => "medical",
            PoiCategory::Supermarket => "supermarket",
            PoiCategory::Shopping => "shopping",
            PoiCategory::Park => "park",
            PoiCategory::Transit => "transit",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.as_str() == s)
    }
}

/// Refined POI labels and the top-level category each belongs to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoiTaxonomy {
    labels: BTreeMap<String, PoiCategory>,
}

impl Default for PoiTaxonomy {
    fn default() -> Self {
        let labels = [
            ("primary school", PoiCategory::Education),
            ("middle school", PoiCategory::Education),
            ("kindergarten", PoiCategory::Education),
            ("hospital", PoiCategory::Medical),
            ("clinic", PoiCategory::Medical),
            ("supermarket", PoiCategory::Supermarket),
            ("shopping mall", PoiCategory::Shopping),
            ("park", PoiCategory::Park),
            ("metro station", PoiCategory::Transit),
            ("bus stop", PoiCategory::Transit),
        ];
        PoiTaxonomy {
            labels: labels.into_iter().map(|(l, c)| (l.to_string(), c)).collect(),
        }
    }
}

impl PoiTaxonomy {
    pub fn category_of(&self, label: &str) -> Option<PoiCategory> {
        self.labels.get(label).copied()
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.labels.keys().map(String::as_str)
    }

    pub fn contains(&self, label: &str) -> bool {
        self.labels.contains_key(label)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Community {
    pub id: String,
    pub city: String,
    pub name: String,
    pub district: String,
    pub address: String,
    pub location: GeoPoint,
    /// Percent in [0, 100].
    pub greening_rate: f64,
    /// Currency per square meter.
    pub avg_price: i64,
    pub property_type: PropertyType,
    pub sales_status: SalesStatus,
}

impl Community {
    pub fn validate(&self) -> Result<(), String> {
        self.location.validate().map_err(|e| e.to_string())?;
        if self.id.trim().is_empty() || self.name.trim().is_empty() {
            return Err("empty id or name".into());
        }
        if !(0.0..=100.0).contains(&self.greening_rate) {
            return Err(format!("greening_rate {} outside [0, 100]", self.greening_rate));
        }
        if self.avg_price <= 0 {
            return Err(format!("avg_price {} must be positive", self.avg_price));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PropertyType {
    Residential,
    Apartment,
    Villa,
    Commercial,
}

impl PropertyType {
    pub const ALL: [PropertyType; 4] = [
        PropertyType::Residential,
        PropertyType::Apartment,
        PropertyType::Villa,
        PropertyType::Commercial,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            PropertyType::Residential => "residential",
            PropertyType::Apartment => "apartment",
            PropertyType::Villa => "villa",
            PropertyType::Commercial => "commercial",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.as_str() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SalesStatus {
    OnSale,
    SoldOut,
    Upcoming,
}

impl SalesStatus {
    pub const ALL: [SalesStatus; 3] = [SalesStatus::OnSale, SalesStatus::SoldOut, SalesStatus::Upcoming];

    pub fn as_str(&self) -> &'static str {
        match self {
            SalesStatus::OnSale => "on_sale",
            SalesStatus::SoldOut => "sold_out",
            SalesStatus::Upcoming => "upcoming",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.as_str() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Poi {
    pub id: String,
    pub city: String,
    pub name: String,
    pub category: PoiCategory,
    pub label: String,
    pub location: GeoPoint,
}

impl Poi {
    pub fn validate(&self, taxonomy: &PoiTaxonomy) -> Result<(), String> {
        self.location.validate().map_err(|e| e.to_string())?;
        if self.id.trim().is_empty() || self.name.trim().is_empty() {
            return Err("empty id or name".into());
        }
        match taxonomy.category_of(&self.label) {
            Some(c) if c == self.category => Ok(()),
            Some(c) => Err(format!(
                "label '{}' belongs to category {}, not {}",
                self.label,
                c.as_str(),
                self.category.as_str()
            )),
            None => Err(format!("unknown label '{}'", self.label)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairKind {
    PoiCommunity,
    CommunityCommunity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProximityPair {
    pub kind: PairKind,
    pub subject_id: String,
    pub neighbor_id: String,
    /// Whole meters.
    pub straight_distance: i64,
}

/// A typed result cell. Serialized untagged so that JSON numbers keep their
/// integer/real distinction (`3` vs `3.0`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Cell {
    Null,
    Integer(i64),
    Real(f64),
    Text(String),
}

impl Cell {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Cell::Integer(i) => Some(*i as f64),
            Cell::Real(r) => Some(*r),
            _ => None,
        }
    }

    pub fn as_text(&self) -> Option<&str> {
        match self {
            Cell::Text(s) => Some(s),
            _ => None,
        }
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cell::Null => f.write_str("NULL"),
            Cell::Integer(i) => write!(f, "{i}"),
            Cell::Real(r) => write!(f, "{r}"),
            Cell::Text(s) => f.write_str(s),
        }
    }
}

pub type Row = Vec<Cell>;

/// Ordered rows with named columns; column order is significant.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ResultSet {
    pub columns: Vec<String>,
    pub rows: Vec<Row>,
}

impl ResultSet {
    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Entity coordinates found in the rows. A coordinate triple is a
    /// `name` column with `latitude`/`longitude` (also `lat`/`lon`/`lng`),
    /// or the same names sharing a prefix such as `poi_name`,
    /// `poi_latitude`, `poi_longitude`. First occurrence of a name wins.
    pub fn coordinate_map(&self) -> BTreeMap<String, GeoPoint> {
        let mut triples = Vec::new();
        for (i, col) in self.columns.iter().enumerate() {
            let lower = col.to_ascii_lowercase();
            let Some(prefix) = lower.strip_suffix("name") else { continue };
            let find = |suffixes: &[&str]| {
                suffixes.iter().find_map(|s| {
                    let want = format!("{prefix}{s}");
                    self.columns.iter().position(|c| c.to_ascii_lowercase() == want)
                })
            };
            if let (Some(lat), Some(lon)) = (find(&["latitude", "lat"]), find(&["longitude", "lon", "lng"])) {
                triples.push((i, lat, lon));
            }
        }
        let mut out = BTreeMap::new();
        for row in &self.rows {
            for &(n, lat, lon) in &triples {
                let (Some(Cell::Text(name)), Some(la), Some(lo)) = (row.get(n), row.get(lat), row.get(lon)) else {
                    continue;
                };
                if let (Some(la), Some(lo)) = (la.as_f64(), lo.as_f64()) {
                    if let Ok(p) = GeoPoint::new(la, lo) {
                        out.entry(name.clone()).or_insert(p);
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NumberUnit {
    Count,
    YuanPerSqm,
    Percent,
}

impl NumberUnit {
    pub fn as_str(&self) -> &'static str {
        match self {
            NumberUnit::Count => "count",
            NumberUnit::YuanPerSqm => "yuan_per_sqm",
            NumberUnit::Percent => "percent",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "count" => Some(NumberUnit::Count),
            "yuan_per_sqm" => Some(NumberUnit::YuanPerSqm),
            "percent" => Some(NumberUnit::Percent),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CanonicalAnswer {
    EntitySet { items: Vec<String> },
    Number { value: f64, unit: NumberUnit },
    Duration { seconds: u64 },
    Distance { meters: u64 },
    Boolean { value: bool },
    Text { value: String },
}

impl CanonicalAnswer {
    pub fn entity_set<I, S>(items: I) -> Result<Self, DomainError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let items: Vec<String> = items.into_iter().map(Into::into).collect();
        if items.is_empty() {
            return Err(DomainError::EmptyEntitySet);
        }
        Ok(CanonicalAnswer::EntitySet { items })
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        match self {
            CanonicalAnswer::EntitySet { items } if items.is_empty() => Err(DomainError::EmptyEntitySet),
            _ => Ok(()),
        }
    }

    /// Item-level decomposition used by exact match and item F1. Scalars
    /// become a singleton; every item is prefixed by its variant so that
    /// cross-variant comparisons never match.
    pub fn items(&self) -> Vec<String> {
        match self {
            CanonicalAnswer::EntitySet { items } => {
                items.iter().map(|i| format!("entity:{}", normalize_text(i))).collect()
            }
            CanonicalAnswer::Number { value, unit } => {
                let v = if *value == 0.0 { 0.0 } else { *value };
                vec![format!("number:{}:{}", unit.as_str(), v)]
            }
            CanonicalAnswer::Duration { seconds } => vec![format!("duration:{seconds}")],
            CanonicalAnswer::Distance { meters } => vec![format!("distance:{meters}")],
            CanonicalAnswer::Boolean { value } => vec![format!("boolean:{value}")],
            CanonicalAnswer::Text { value } => vec![format!("text:{}", normalize_text(value))],
        }
    }

    /// Plain-language rendering used for `nl_answer`.
    pub fn render(&self) -> String {
        match self {
            CanonicalAnswer::EntitySet { items } => items.join(", "),
            CanonicalAnswer::Number { value, unit } => match unit {
                NumberUnit::Count => format!("{value}"),
                NumberUnit::YuanPerSqm => format!("{value} yuan per square meter"),
                NumberUnit::Percent => format!("{value}%"),
            },
            CanonicalAnswer::Duration { seconds } => {
                let (m, s) = (seconds / 60, seconds % 60);
                if m == 0 {
                    format!("{s} seconds")
                } else {
                    format!("{m} minutes {s} seconds")
                }
            }
            CanonicalAnswer::Distance { meters } => format!("{meters} meters"),
            CanonicalAnswer::Boolean { value } => if *value { "Yes" } else { "No" }.to_string(),
            CanonicalAnswer::Text { value } => value.clone(),
        }
    }
}

/// Trim and collapse internal whitespace runs to a single space.
pub fn normalize_text(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Strict exact match: multiset equality of normalized items.
pub fn answer_equal(pred: &CanonicalAnswer, gold: &CanonicalAnswer) -> bool {
    let mut a = pred.items();
    let mut b = gold.items();
    if a.len() != b.len() {
        return false;
    }
    a.sort();
    b.sort();
    a == b
}

/// Half-open span in character (Unicode scalar) offsets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn overlaps(&self, other: &Span) -> bool {
        self.start < other.end && other.start < self.end
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotAnnotation {
    pub slot_type: String,
    pub value: String,
    pub span: Span,
}

/// Substring of `text` by character offsets.
pub fn char_slice(text: &str, span: Span) -> Option<&str> {
    let mut idx = text.char_indices().map(|(i, _)| i).chain(std::iter::once(text.len()));
    let start = idx.nth(span.start)?;
    if span.end < span.start {
        return None;
    }
    let end = if span.end == span.start {
        start
    } else {
        idx.nth(span.end - span.start - 1)?
    };
    Some(&text[start..end])
}

/// Check the substring and non-overlap invariants of a slot list.
pub fn check_slots(question: &str, slots: &[SlotAnnotation]) -> Result<(), String> {
    for s in slots {
        match char_slice(question, s.span) {
            Some(sub) if sub == s.value => {}
            other => {
                return Err(format!(
                    "slot {} value '{}' does not match question text {:?}",
                    s.slot_type, s.value, other
                ))
            }
        }
    }
    for (i, a) in slots.iter().enumerate() {
        for b in &slots[i + 1..] {
            if a.span.overlaps(&b.span) {
                return Err(format!("slots {} and {} overlap", a.slot_type, b.slot_type));
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum QuestionType {
    Simple = 1,
    Compound = 2,
    MultiStep = 3,
}

impl QuestionType {
    pub const ALL: [QuestionType; 3] = [QuestionType::Simple, QuestionType::Compound, QuestionType::MultiStep];

    pub fn number(&self) -> u8 {
        *self as u8
    }
}

impl TryFrom<u8> for QuestionType {
    type Error = DomainError;
    fn try_from(v: u8) -> Result<Self, DomainError> {
        match v {
            1 => Ok(QuestionType::Simple),
            2 => Ok(QuestionType::Compound),
            3 => Ok(QuestionType::MultiStep),
            other => Err(DomainError::QuestionType(other)),
        }
    }
}

impl From<QuestionType> for u8 {
    fn from(t: QuestionType) -> u8 {
        t.number()
    }
}

impl fmt::Display for QuestionType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Type {}", self.number())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Specialist {
    DbAgent,
    MapAgent,
}

impl Specialist {
    pub fn as_str(&self) -> &'static str {
        match self {
            Specialist::DbAgent => "db_agent",
            Specialist::MapAgent => "map_agent",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "db_agent" => Some(Specialist::DbAgent),
            "map_agent" => Some(Specialist::MapAgent),
            _ => None,
        }
    }
}

impl fmt::Display for Specialist {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SqlStep {
    pub statement: String,
    pub expected_result: ResultSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolStep {
    #[serde(flatten)]
    pub request: ToolRequest,
    pub expected_result: ToolResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QAInstance {
    pub id: String,
    pub template_id: String,
    pub city: String,
    pub question: String,
    pub question_type: QuestionType,
    pub intents: Vec<String>,
    pub slots: Vec<SlotAnnotation>,
    pub sql_trace: Vec<SqlStep>,
    pub tool_trace: Vec<ToolStep>,
    pub agent_route: Vec<Specialist>,
    pub answer: CanonicalAnswer,
    pub nl_answer: String,
    /// Placeholder values the instance was instantiated from.
    #[serde(default)]
    pub bindings: BTreeMap<String, String>,
}

impl QAInstance {
    pub fn check_invariants(&self) -> Result<(), DomainError> {
        let fail = |reason: String| DomainError::Instance { id: self.id.clone(), reason };
        if self.sql_trace.is_empty() {
            return Err(fail("sql_trace is empty".into()));
        }
        match self.question_type {
            QuestionType::Simple if !self.tool_trace.is_empty() => {
                return Err(fail("type 1 instance carries tool steps".into()))
            }
            QuestionType::Compound | QuestionType::MultiStep if self.tool_trace.is_empty() => {
                return Err(fail("type 2/3 instance without tool steps".into()))
            }
            _ => {}
        }
        for step in &self.tool_trace {
            step.request.validate().map_err(|e| fail(e.to_string()))?;
        }
        self.answer.validate().map_err(|e| fail(e.to_string()))?;
        check_slots(&self.question, &self.slots).map_err(fail)?;
        Ok(())
    }
}

/// Identifier of the tokenization used for exported IOB tags.
pub const IOB_TOKENIZATION: &str = "ws-punct-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IobExport {
    pub tokenization: String,
    pub tokens: Vec<String>,
    pub tags: Vec<String>,
}

/// Split on whitespace; ASCII punctuation (other than `-`, `'` and `.` inside
/// numbers) becomes its own token. Returns tokens with character spans.
pub fn tokenize_with_spans(text: &str) -> Vec<(String, Span)> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut start: Option<usize> = None;
    let flush = |out: &mut Vec<(String, Span)>, s: usize, e: usize| {
        out.push((chars[s..e].iter().collect(), Span { start: s, end: e }));
    };
    for (i, &c) in chars.iter().enumerate() {
        let is_punct = c.is_ascii_punctuation() && c != '-' && c != '\'' && c != '.';
        if c.is_whitespace() {
            if let Some(s) = start.take() {
                flush(&mut out, s, i);
            }
        } else if is_punct || (c == '.' && !(i > 0 && chars[i - 1].is_ascii_digit() && chars.get(i + 1).is_some_and(|n| n.is_ascii_digit()))) {
            if let Some(s) = start.take() {
                flush(&mut out, s, i);
            }
            flush(&mut out, i, i + 1);
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        flush(&mut out, s, chars.len());
    }
    out
}

/// IOB tags derived from span annotations.
pub fn iob_tags(question: &str, slots: &[SlotAnnotation]) -> IobExport {
    let tokens = tokenize_with_spans(question);
    let mut tags = Vec::with_capacity(tokens.len());
    let mut prev_slot: Option<usize> = None;
    for (_, span) in &tokens {
        let hit = slots.iter().position(|s| s.span.overlaps(span));
        match hit {
            Some(i) => {
                let prefix = if prev_slot == Some(i) { "I" } else { "B" };
                tags.push(format!("{prefix}-{}", slots[i].slot_type));
            }
            None => tags.push("O".to_string()),
        }
        prev_slot = hit;
    }
    IobExport {
        tokenization: IOB_TOKENIZATION.to_string(),
        tokens: tokens.into_iter().map(|(t, _)| t).collect(),
        tags,
    }
}

#[derive(Serialize)]
struct ExportRecord<'a> {
    #[serde(flatten)]
    instance: &'a QAInstance,
    iob: IobExport,
}

/// One JSON record per line; `iob` is derived and ignored on read.
pub fn instance_to_line(instance: &QAInstance) -> String {
    let rec = ExportRecord {
        instance,
        iob: iob_tags(&instance.question, &instance.slots),
    };
    serde_json::to_string(&rec).expect("instance serializes")
}

pub fn write_dataset(path: &Path, instances: &[QAInstance]) -> Result<(), DomainError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| DomainError::Io(e.to_string()))?;
    }
    let file = std::fs::File::create(path).map_err(|e| DomainError::Io(format!("{}: {e}", path.display())))?;
    let mut w = BufWriter::new(file);
    for inst in instances {
        writeln!(w, "{}", instance_to_line(inst)).map_err(|e| DomainError::Io(e.to_string()))?;
    }
    w.flush().map_err(|e| DomainError::Io(e.to_string()))
}

pub fn read_dataset(path: &Path) -> Result<Vec<QAInstance>, DomainError> {
    let file = std::fs::File::open(path).map_err(|e| DomainError::Io(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| DomainError::Io(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let inst: QAInstance = serde_json::from_str(&line).map_err(|e| DomainError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(inst);
    }
    Ok(out)
}
