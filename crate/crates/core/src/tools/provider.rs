//! Value sources for cache misses.

use crate::domain::{haversine, GeoPoint, Poi, PoiTaxonomy};

use super::{PoiHit, TimeBucket, ToolError, ToolFunction, ToolRequest, ToolResult, TravelMode, DistanceKind};

/// Resolves a normalized request to a payload. Implementations must be
/// deterministic for a given request and provider seed.
pub trait Provider: Send + Sync {
    fn name(&self) -> String;
    fn resolve(&self, request: &ToolRequest) -> Result<ToolResult, ToolError>;
}

/// Deterministic stand-in for a live map vendor. Travel paths are the
/// straight-line distance times a per-mode detour factor; durations divide
/// the path by a per-mode speed.
#[derive(Debug, Clone)]
pub struct SyntheticProvider {
    seed: u64,
    pois: Vec<Poi>,
    taxonomy: PoiTaxonomy,
}

pub const WALKING_DETOUR: f64 = 1.3;
pub const CYCLING_DETOUR: f64 = 1.3;
pub const DRIVING_DETOUR: f64 = 1.4;
pub const TRANSIT_DETOUR: f64 = 1.4;

pub const WALKING_KMH: f64 = 5.0;
pub const CYCLING_KMH: f64 = 15.0;
pub const DRIVING_OFFPEAK_KMH: f64 = 40.0;
pub const DRIVING_PEAK_KMH: f64 = 22.0;
pub const TRANSIT_OFFPEAK_KMH: f64 = 28.0;
pub const TRANSIT_PEAK_KMH: f64 = 24.0;
pub const TRANSIT_OVERHEAD_S: u64 = 300;

impl SyntheticProvider {
    pub fn new(seed: u64, pois: Vec<Poi>, taxonomy: PoiTaxonomy) -> Self {
        SyntheticProvider { seed, pois, taxonomy }
    }

    pub fn travel_seconds(origin: GeoPoint, destination: GeoPoint, mode: TravelMode, bucket: TimeBucket) -> u64 {
        let straight = haversine(origin, destination);
        if straight == 0.0 {
            return 0;
        }
        let peak = bucket == TimeBucket::Peak08;
        let (detour, kmh, overhead) = match mode {
            TravelMode::Walking => (WALKING_DETOUR, WALKING_KMH, 0),
            TravelMode::Cycling => (CYCLING_DETOUR, CYCLING_KMH, 0),
            TravelMode::Driving if peak => (DRIVING_DETOUR, DRIVING_PEAK_KMH, 0),
            TravelMode::Driving => (DRIVING_DETOUR, DRIVING_OFFPEAK_KMH, 0),
            TravelMode::Transit if peak => (TRANSIT_DETOUR, TRANSIT_PEAK_KMH, TRANSIT_OVERHEAD_S),
            TravelMode::Transit => (TRANSIT_DETOUR, TRANSIT_OFFPEAK_KMH, TRANSIT_OVERHEAD_S),
        };
        let meters_per_second = kmh * 1000.0 / 3600.0;
        (straight * detour / meters_per_second).round() as u64 + overhead
    }

    pub fn travel_meters(origin: GeoPoint, destination: GeoPoint, kind: DistanceKind) -> u64 {
        let straight = haversine(origin, destination);
        let factor = match kind {
            DistanceKind::Straight => 1.0,
            DistanceKind::Walking => WALKING_DETOUR,
            DistanceKind::Driving => DRIVING_DETOUR,
        };
        (straight * factor).round() as u64
    }

    fn surrounding(&self, center: GeoPoint, radius: u32, label: &str) -> Result<Vec<PoiHit>, ToolError> {
        if !self.taxonomy.contains(label) {
            return Err(ToolError::InvalidParams(format!("unknown POI label '{label}'")));
        }
        let mut hits: Vec<(f64, &Poi)> = self
            .pois
            .iter()
            .filter(|p| p.label == label)
            .map(|p| (haversine(center, p.location), p))
            .filter(|(d, _)| *d <= radius as f64)
            .collect();
        hits.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.name.cmp(&b.1.name)));
        Ok(hits
            .into_iter()
            .map(|(d, p)| PoiHit {
                name: p.name.clone(),
                label: p.label.clone(),
                location: p.location,
                straight_distance: d.round() as u64,
            })
            .collect())
    }
}

impl Provider for SyntheticProvider {
    fn name(&self) -> String {
        format!("synthetic-v1(seed={})", self.seed)
    }

    fn resolve(&self, request: &ToolRequest) -> Result<ToolResult, ToolError> {
        request.validate()?;
        let p = &request.params;
        let missing = || ToolError::InvalidParams("validated request lost a parameter".into());
        match request.function {
            ToolFunction::TimeQuery | ToolFunction::RushHourQuery => {
                let secs = Self::travel_seconds(
                    p.origin.ok_or_else(missing)?,
                    p.destination.ok_or_else(missing)?,
                    p.mode.ok_or_else(missing)?,
                    request.time_bucket,
                );
                Ok(ToolResult::duration(request.function, secs))
            }
            ToolFunction::DistanceQuery => Ok(ToolResult::distance(Self::travel_meters(
                p.origin.ok_or_else(missing)?,
                p.destination.ok_or_else(missing)?,
                p.kind.ok_or_else(missing)?,
            ))),
            ToolFunction::SurroundingPoisQuery => {
                let hits = self.surrounding(
                    p.center.ok_or_else(missing)?,
                    p.radius.ok_or_else(missing)?,
                    p.label.as_deref().ok_or_else(missing)?,
                )?;
                Ok(ToolResult::pois(&hits))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(lat: f64, lon: f64) -> GeoPoint {
        GeoPoint::new(lat, lon).unwrap()
    }

    #[test]
    fn walking_1300m_path_takes_936_seconds() {
        // 1300 m / (5000 m / 3600 s) = 936 s, by hand.
        let a = pt(0.0, 0.0);
        let lon = 1000.0 / (crate::domain::EARTH_RADIUS_M * std::f64::consts::PI / 180.0);
        let b = GeoPoint { latitude: 0.0, longitude: lon };
        assert!((haversine(a, b) - 1000.0).abs() < 1e-6);
        assert_eq!(SyntheticProvider::travel_seconds(a, b, TravelMode::Walking, TimeBucket::Midnight00), 936);
    }

    #[test]
    fn zero_distance_is_zero_for_every_mode() {
        let a = pt(23.1, 113.2);
        for mode in TravelMode::ALL {
            for bucket in [TimeBucket::Midnight00, TimeBucket::Offpeak15, TimeBucket::Peak08] {
                assert_eq!(SyntheticProvider::travel_seconds(a, a, mode, bucket), 0);
            }
        }
        for kind in DistanceKind::ALL {
            assert_eq!(SyntheticProvider::travel_meters(a, a, kind), 0);
        }
    }

    #[test]
    fn transit_adds_overhead() {
        let a = pt(23.1, 113.2);
        let b = pt(23.11, 113.2);
        let d = haversine(a, b) * TRANSIT_DETOUR;
        let expected = (d / (28_000.0 / 3600.0)).round() as u64 + 300;
        assert_eq!(SyntheticProvider::travel_seconds(a, b, TravelMode::Transit, TimeBucket::Offpeak15), expected);
    }

    #[test]
    fn unknown_label_is_invalid() {
        let prov = SyntheticProvider::new(1, vec![], PoiTaxonomy::default());
        let req = ToolRequest::surrounding_pois_query(pt(23.0, 113.0), 1000, "casino").unwrap();
        assert!(matches!(prov.resolve(&req), Err(ToolError::InvalidParams(_))));
    }
}
