use std::fmt;

use serde::{Deserialize, Serialize};

use crate::domain::{Cell, GeoPoint, Row};

use super::ToolError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolFunction {
    TimeQuery,
    DistanceQuery,
    SurroundingPoisQuery,
    RushHourQuery,
}

impl ToolFunction {
    pub const ALL: [ToolFunction; 4] = [
        ToolFunction::TimeQuery,
        ToolFunction::DistanceQuery,
        ToolFunction::SurroundingPoisQuery,
        ToolFunction::RushHourQuery,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ToolFunction::TimeQuery => "time_query",
            ToolFunction::DistanceQuery => "distance_query",
            ToolFunction::SurroundingPoisQuery => "surrounding_pois_query",
            ToolFunction::RushHourQuery => "rush_hour_query",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        let s = s.trim().to_ascii_lowercase();
        Self::ALL.into_iter().find(|f| f.as_str() == s)
    }

    /// True when the result is a single duration or distance value.
    pub fn is_scalar(&self) -> bool {
        !matches!(self, ToolFunction::SurroundingPoisQuery)
    }
}

impl fmt::Display for ToolFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Collection window a cached value belongs to (times are UTC+8).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TimeBucket {
    #[serde(rename = "midnight_00")]
    Midnight00,
    #[serde(rename = "offpeak_15")]
    Offpeak15,
    #[serde(rename = "peak_08")]
    Peak08,
}

impl TimeBucket {
    pub fn as_str(&self) -> &'static str {
        match self {
            TimeBucket::Midnight00 => "midnight_00",
            TimeBucket::Offpeak15 => "offpeak_15",
            TimeBucket::Peak08 => "peak_08",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "midnight_00" => Some(TimeBucket::Midnight00),
            "offpeak_15" => Some(TimeBucket::Offpeak15),
            "peak_08" => Some(TimeBucket::Peak08),
            _ => None,
        }
    }

    /// Nominal collection time, recorded as cache provenance.
    pub fn nominal_time(&self) -> &'static str {
        match self {
            TimeBucket::Midnight00 => "00:00+08:00",
            TimeBucket::Offpeak15 => "15:00+08:00",
            TimeBucket::Peak08 => "08:00+08:00",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TravelMode {
    Walking,
    Driving,
    Cycling,
    Transit,
}

impl TravelMode {
    pub const ALL: [TravelMode; 4] = [TravelMode::Walking, TravelMode::Driving, TravelMode::Cycling, TravelMode::Transit];

    pub fn as_str(&self) -> &'static str {
        match self {
            TravelMode::Walking => "walking",
            TravelMode::Driving => "driving",
            TravelMode::Cycling => "cycling",
            TravelMode::Transit => "transit",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        let s = s.trim().to_ascii_lowercase();
        Self::ALL.into_iter().find(|m| m.as_str() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceKind {
    Straight,
    Walking,
    Driving,
}

impl DistanceKind {
    pub const ALL: [DistanceKind; 3] = [DistanceKind::Straight, DistanceKind::Walking, DistanceKind::Driving];

    pub fn as_str(&self) -> &'static str {
        match self {
            DistanceKind::Straight => "straight",
            DistanceKind::Walking => "walking",
            DistanceKind::Driving => "driving",
        }
    }

    /// Accepts `straight-line` as an alias of `straight`.
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "straight" | "straight-line" | "straight line" => Some(DistanceKind::Straight),
            "walking" => Some(DistanceKind::Walking),
            "driving" => Some(DistanceKind::Driving),
            _ => None,
        }
    }
}

/// Normalized parameter map; which fields are required depends on the
/// function (see [`ToolRequest::validate`]).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ToolParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin: Option<GeoPoint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub destination: Option<GeoPoint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<TravelMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<DistanceKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center: Option<GeoPoint>,
    /// Search radius in whole meters.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolRequest {
    pub function: ToolFunction,
    pub params: ToolParams,
    pub time_bucket: TimeBucket,
}

impl ToolRequest {
    /// Build a request, normalize it and check it against the schema.
    pub fn new(function: ToolFunction, params: ToolParams, time_bucket: TimeBucket) -> Result<Self, ToolError> {
        let req = ToolRequest { function, params, time_bucket }.normalized();
        req.validate()?;
        Ok(req)
    }

    pub fn time_query(origin: GeoPoint, destination: GeoPoint, mode: TravelMode) -> Result<Self, ToolError> {
        Self::time_query_at(origin, destination, mode, TimeBucket::Midnight00)
    }

    pub fn time_query_at(
        origin: GeoPoint,
        destination: GeoPoint,
        mode: TravelMode,
        bucket: TimeBucket,
    ) -> Result<Self, ToolError> {
        let params = ToolParams {
            origin: Some(origin),
            destination: Some(destination),
            mode: Some(mode),
            ..Default::default()
        };
        Self::new(ToolFunction::TimeQuery, params, bucket)
    }

    pub fn distance_query(origin: GeoPoint, destination: GeoPoint, kind: DistanceKind) -> Result<Self, ToolError> {
        let params = ToolParams {
            origin: Some(origin),
            destination: Some(destination),
            kind: Some(kind),
            ..Default::default()
        };
        Self::new(ToolFunction::DistanceQuery, params, TimeBucket::Midnight00)
    }

    pub fn surrounding_pois_query(center: GeoPoint, radius: u32, label: &str) -> Result<Self, ToolError> {
        let params = ToolParams {
            center: Some(center),
            radius: Some(radius),
            label: Some(label.to_string()),
            ..Default::default()
        };
        Self::new(ToolFunction::SurroundingPoisQuery, params, TimeBucket::Midnight00)
    }

    pub fn rush_hour_query(origin: GeoPoint, destination: GeoPoint, mode: TravelMode) -> Result<Self, ToolError> {
        let params = ToolParams {
            origin: Some(origin),
            destination: Some(destination),
            mode: Some(mode),
            ..Default::default()
        };
        Self::new(ToolFunction::RushHourQuery, params, TimeBucket::Peak08)
    }

    /// Round coordinates, case-fold labels and apply the bucket rules:
    /// rush hour is always peak, and transit has no midnight data so it is
    /// re-keyed to the off-peak window.
    pub fn normalized(mut self) -> Self {
        for p in [&mut self.params.origin, &mut self.params.destination, &mut self.params.center]
            .into_iter()
            .flatten()
        {
            *p = p.rounded();
        }
        if let Some(label) = &mut self.params.label {
            *label = crate::domain::normalize_text(&label.to_lowercase());
        }
        if self.function == ToolFunction::RushHourQuery {
            self.time_bucket = TimeBucket::Peak08;
        }
        if self.params.mode == Some(TravelMode::Transit) && self.time_bucket == TimeBucket::Midnight00 {
            self.time_bucket = TimeBucket::Offpeak15;
        }
        self
    }

    pub fn validate(&self) -> Result<(), ToolError> {
        let p = &self.params;
        let bad = |msg: String| Err(ToolError::InvalidParams(format!("{}: {msg}", self.function)));
        for pt in [p.origin, p.destination, p.center].into_iter().flatten() {
            if let Err(e) = pt.validate() {
                return bad(e.to_string());
            }
        }
        let present = |name: &str| -> bool {
            match name {
                "origin" => p.origin.is_some(),
                "destination" => p.destination.is_some(),
                "mode" => p.mode.is_some(),
                "kind" => p.kind.is_some(),
                "center" => p.center.is_some(),
                "radius" => p.radius.is_some(),
                "label" => p.label.is_some(),
                _ => false,
            }
        };
        let required: &[&str] = match self.function {
            ToolFunction::TimeQuery | ToolFunction::RushHourQuery => &["origin", "destination", "mode"],
            ToolFunction::DistanceQuery => &["origin", "destination", "kind"],
            ToolFunction::SurroundingPoisQuery => &["center", "radius", "label"],
        };
        const ALL: [&str; 7] = ["origin", "destination", "mode", "kind", "center", "radius", "label"];
        for name in ALL {
            let needed = required.contains(&name);
            if needed && !present(name) {
                return bad(format!("missing parameter '{name}'"));
            }
            if !needed && present(name) {
                return bad(format!("unexpected parameter '{name}'"));
            }
        }
        if p.radius == Some(0) {
            return bad("radius must be positive".into());
        }
        if self.function == ToolFunction::RushHourQuery {
            if !matches!(p.mode, Some(TravelMode::Driving | TravelMode::Transit)) {
                return bad("rush hour data exists only for driving and transit".into());
            }
            if self.time_bucket != TimeBucket::Peak08 {
                return bad("rush hour requests use the peak_08 bucket".into());
            }
        }
        if p.mode == Some(TravelMode::Transit) && self.time_bucket == TimeBucket::Midnight00 {
            return bad("transit has no midnight_00 data".into());
        }
        Ok(())
    }

    /// Canonical serialization used as the cache key.
    pub fn key(&self) -> String {
        let p = &self.params;
        let mut parts = vec![self.function.as_str().to_string(), self.time_bucket.as_str().to_string()];
        if let Some(v) = p.origin {
            parts.push(format!("origin={v}"));
        }
        if let Some(v) = p.destination {
            parts.push(format!("destination={v}"));
        }
        if let Some(v) = p.center {
            parts.push(format!("center={v}"));
        }
        if let Some(v) = p.radius {
            parts.push(format!("radius={v}"));
        }
        if let Some(v) = &p.label {
            parts.push(format!("label={v}"));
        }
        if let Some(v) = p.mode {
            parts.push(format!("mode={}", v.as_str()));
        }
        if let Some(v) = p.kind {
            parts.push(format!("kind={}", v.as_str()));
        }
        parts.join("|")
    }
}

/// One surrounding-POI result row.
#[derive(Debug, Clone, PartialEq)]
pub struct PoiHit {
    pub name: String,
    pub label: String,
    pub location: GeoPoint,
    pub straight_distance: u64,
}

/// SQL-style tool payload: a named schema with ordered rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolResult {
    pub schema: String,
    pub columns: Vec<String>,
    pub rows: Vec<Row>,
}

impl ToolResult {
    pub fn duration(function: ToolFunction, seconds: u64) -> Self {
        let schema = match function {
            ToolFunction::RushHourQuery => "rush_hour_time",
            _ => "travel_time",
        };
        ToolResult {
            schema: schema.into(),
            columns: vec!["duration_s".into()],
            rows: vec![vec![Cell::Integer(seconds as i64)]],
        }
    }

    pub fn distance(meters: u64) -> Self {
        ToolResult {
            schema: "travel_distance".into(),
            columns: vec!["distance_m".into()],
            rows: vec![vec![Cell::Integer(meters as i64)]],
        }
    }

    pub fn pois(hits: &[PoiHit]) -> Self {
        ToolResult {
            schema: "surrounding_pois".into(),
            columns: ["name", "label", "latitude", "longitude", "straight_distance_m"]
                .into_iter()
                .map(String::from)
                .collect(),
            rows: hits
                .iter()
                .map(|h| {
                    vec![
                        Cell::Text(h.name.clone()),
                        Cell::Text(h.label.clone()),
                        Cell::Real(h.location.latitude),
                        Cell::Real(h.location.longitude),
                        Cell::Integer(h.straight_distance as i64),
                    ]
                })
                .collect(),
        }
    }

    /// Result schema for a function; used to check payloads.
    pub fn expected_columns(function: ToolFunction) -> &'static [&'static str] {
        match function {
            ToolFunction::TimeQuery | ToolFunction::RushHourQuery => &["duration_s"],
            ToolFunction::DistanceQuery => &["distance_m"],
            ToolFunction::SurroundingPoisQuery => &["name", "label", "latitude", "longitude", "straight_distance_m"],
        }
    }

    pub fn conforms_to(&self, function: ToolFunction) -> bool {
        let cols = Self::expected_columns(function);
        self.columns.len() == cols.len()
            && self.columns.iter().zip(cols).all(|(a, b)| a == b)
            && self.rows.iter().all(|r| r.len() == cols.len())
            && (!function.is_scalar() || self.rows.len() == 1)
    }

    /// The value of a single-cell duration or distance payload.
    pub fn scalar(&self) -> Option<u64> {
        match self.rows.as_slice() {
            [row] if row.len() == 1 => match row[0] {
                Cell::Integer(v) if v >= 0 => Some(v as u64),
                _ => None,
            },
            _ => None,
        }
    }

    pub fn poi_hits(&self) -> Option<Vec<PoiHit>> {
        if self.schema != "surrounding_pois" {
            return None;
        }
        self.rows
            .iter()
            .map(|r| match r.as_slice() {
                [Cell::Text(name), Cell::Text(label), lat, lon, Cell::Integer(d)] => Some(PoiHit {
                    name: name.clone(),
                    label: label.clone(),
                    location: GeoPoint {
                        latitude: lat.as_f64()?,
                        longitude: lon.as_f64()?,
                    },
                    straight_distance: *d as u64,
                }),
                _ => None,
            })
            .collect()
    }
}
