use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};

use crate::domain::{GeoPoint, PoiTaxonomy};

use super::{
    DistanceKind, Provider, TimeBucket, ToolError, ToolFunction, ToolParams, ToolRequest, ToolResult, TravelMode,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub provider_name: String,
    pub recorded_at: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key: String,
    pub request: ToolRequest,
    pub payload: ToolResult,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct PopulationReport {
    pub unique_requests: usize,
    pub inserted: usize,
    pub already_present: usize,
    pub failures: Vec<(String, String)>,
}

/// Keyed store of tool payloads. Lookups take a read lock; misses resolved
/// through the provider take the write lock (single writer).
pub struct ToolCache {
    entries: RwLock<BTreeMap<String, CacheEntry>>,
    provider: Option<Arc<dyn Provider>>,
    taxonomy: PoiTaxonomy,
}

impl Default for ToolCache {
    fn default() -> Self {
        Self::new()
    }
}

impl ToolCache {
    pub fn new() -> Self {
        ToolCache {
            entries: RwLock::new(BTreeMap::new()),
            provider: None,
            taxonomy: PoiTaxonomy::default(),
        }
    }

    pub fn with_provider(provider: Arc<dyn Provider>) -> Self {
        ToolCache {
            provider: Some(provider),
            ..Self::new()
        }
    }

    pub fn set_provider(&mut self, provider: Option<Arc<dyn Provider>>) {
        self.provider = provider;
    }

    /// Drop the provider so that misses become errors.
    pub fn freeze(&mut self) {
        self.provider = None;
    }

    pub fn is_frozen(&self) -> bool {
        self.provider.is_none()
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, request: &ToolRequest) -> bool {
        self.entries.read().expect("cache lock").contains_key(&request.key())
    }

    /// Replay a request; on a miss, resolve through the provider and record.
    pub fn lookup(&self, request: &ToolRequest) -> Result<ToolResult, ToolError> {
        let request = request.clone().normalized();
        request.validate()?;
        if let Some(label) = &request.params.label {
            if !self.taxonomy.contains(label) {
                return Err(ToolError::InvalidParams(format!("unknown POI label '{label}'")));
            }
        }
        let key = request.key();
        if let Some(e) = self.entries.read().expect("cache lock").get(&key) {
            return Ok(e.payload.clone());
        }
        let provider = self
            .provider
            .as_ref()
            .ok_or_else(|| ToolError::CacheMissNoProvider(key.clone()))?;
        let payload = provider.resolve(&request)?;
        if !payload.conforms_to(request.function) {
            return Err(ToolError::Provider(format!("payload for {key} does not match the result schema")));
        }
        let entry = CacheEntry {
            key: key.clone(),
            provenance: Provenance {
                provider_name: provider.name(),
                recorded_at: request.time_bucket.nominal_time().to_string(),
            },
            request,
            payload: payload.clone(),
        };
        let mut guard = self.entries.write().expect("cache lock");
        // another writer may have raced us; keep the first entry
        Ok(guard.entry(key).or_insert(entry).payload.clone())
    }

    pub fn time_query(
        &self,
        origin: GeoPoint,
        destination: GeoPoint,
        mode: TravelMode,
        bucket: TimeBucket,
    ) -> Result<u64, ToolError> {
        let req = ToolRequest::time_query_at(origin, destination, mode, bucket)?;
        self.scalar(&req)
    }

    pub fn distance_query(
        &self,
        origin: GeoPoint,
        destination: GeoPoint,
        kind: DistanceKind,
        bucket: TimeBucket,
    ) -> Result<u64, ToolError> {
        let params = ToolParams {
            origin: Some(origin),
            destination: Some(destination),
            kind: Some(kind),
            ..Default::default()
        };
        let req = ToolRequest::new(ToolFunction::DistanceQuery, params, bucket)?;
        self.scalar(&req)
    }

    pub fn surrounding_pois_query(
        &self,
        center: GeoPoint,
        radius: u32,
        label: &str,
        bucket: TimeBucket,
    ) -> Result<Vec<super::PoiHit>, ToolError> {
        let params = ToolParams {
            center: Some(center),
            radius: Some(radius),
            label: Some(label.to_string()),
            ..Default::default()
        };
        let req = ToolRequest::new(ToolFunction::SurroundingPoisQuery, params, bucket)?;
        self.lookup(&req)?
            .poi_hits()
            .ok_or_else(|| ToolError::Provider("malformed surrounding_pois payload".into()))
    }

    pub fn rush_hour_query(&self, origin: GeoPoint, destination: GeoPoint, mode: TravelMode) -> Result<u64, ToolError> {
        let req = ToolRequest::rush_hour_query(origin, destination, mode)?;
        self.scalar(&req)
    }

    fn scalar(&self, req: &ToolRequest) -> Result<u64, ToolError> {
        self.lookup(req)?
            .scalar()
            .ok_or_else(|| ToolError::Provider(format!("non-scalar payload for {}", req.key())))
    }

    /// Resolve every unique request of `corpus` exactly once through
    /// `provider`. Entries already present are left untouched.
    pub fn populate(&self, provider: &dyn Provider, corpus: &[ToolRequest]) -> PopulationReport {
        let mut report = PopulationReport::default();
        let mut unique: BTreeMap<String, ToolRequest> = BTreeMap::new();
        for r in corpus {
            let r = r.clone().normalized();
            unique.entry(r.key()).or_insert(r);
        }
        report.unique_requests = unique.len();
        let mut guard = self.entries.write().expect("cache lock");
        for (key, req) in unique {
            if guard.contains_key(&key) {
                report.already_present += 1;
                continue;
            }
            match provider.resolve(&req) {
                Ok(payload) if payload.conforms_to(req.function) => {
                    guard.insert(
                        key.clone(),
                        CacheEntry {
                            key,
                            provenance: Provenance {
                                provider_name: provider.name(),
                                recorded_at: req.time_bucket.nominal_time().to_string(),
                            },
                            request: req,
                            payload,
                        },
                    );
                    report.inserted += 1;
                }
                Ok(_) => report.failures.push((key, "payload does not match the result schema".into())),
                Err(e) => report.failures.push((key, e.to_string())),
            }
        }
        report
    }

    pub fn entries(&self) -> Vec<CacheEntry> {
        self.entries.read().expect("cache lock").values().cloned().collect()
    }

    /// One entry per line, sorted by key.
    pub fn save(&self, path: &Path) -> Result<(), ToolError> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| ToolError::Io(e.to_string()))?;
        }
        let file = std::fs::File::create(path).map_err(|e| ToolError::Io(format!("{}: {e}", path.display())))?;
        let mut w = BufWriter::new(file);
        for e in self.entries.read().expect("cache lock").values() {
            let line = serde_json::to_string(e).map_err(|e| ToolError::Io(e.to_string()))?;
            writeln!(w, "{line}").map_err(|e| ToolError::Io(e.to_string()))?;
        }
        w.flush().map_err(|e| ToolError::Io(e.to_string()))
    }

    /// Load a frozen cache. Keys are recomputed and must match the stored ones.
    pub fn load(path: &Path) -> Result<Self, ToolError> {
        let file = std::fs::File::open(path).map_err(|e| ToolError::Io(format!("{}: {e}", path.display())))?;
        let mut map = BTreeMap::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| ToolError::Io(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: CacheEntry =
                serde_json::from_str(&line).map_err(|e| ToolError::Io(format!("line {}: {e}", i + 1)))?;
            if entry.request.key() != entry.key {
                return Err(ToolError::Io(format!("line {}: key does not match request", i + 1)));
            }
            map.insert(entry.key.clone(), entry);
        }
        Ok(ToolCache {
            entries: RwLock::new(map),
            ..Self::new()
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{haversine, Poi, PoiCategory};
    use crate::tools::SyntheticProvider;

    fn pt(lat: f64, lon: f64) -> GeoPoint {
        GeoPoint::new(lat, lon).unwrap()
    }

    fn provider() -> Arc<SyntheticProvider> {
        let pois = vec![
            Poi {
                id: "p1".into(),
                city: "Testville".into(),
                name: "North Park".into(),
                category: PoiCategory::Park,
                label: "park".into(),
                location: pt(23.01, 113.0),
            },
            Poi {
                id: "p2".into(),
                city: "Testville".into(),
                name: "South Park".into(),
                category: PoiCategory::Park,
                label: "park".into(),
                location: pt(22.995, 113.0),
            },
        ];
        Arc::new(SyntheticProvider::new(7, pois, PoiTaxonomy::default()))
    }

    #[test]
    fn frozen_cache_miss_is_an_error() {
        let cache = ToolCache::new();
        let err = cache.time_query(pt(23.0, 113.0), pt(23.01, 113.0), TravelMode::Walking, TimeBucket::Midnight00);
        assert!(matches!(err, Err(ToolError::CacheMissNoProvider(_))));
    }

    #[test]
    fn straight_distance_equals_rounded_haversine() {
        let cache = ToolCache::with_provider(provider());
        let (a, b) = (pt(23.0, 113.0), pt(23.013, 113.021));
        let d = cache.distance_query(a, b, DistanceKind::Straight, TimeBucket::Midnight00).unwrap();
        assert_eq!(d, haversine(a, b).round() as u64);
        let back = cache.distance_query(b, a, DistanceKind::Straight, TimeBucket::Midnight00).unwrap();
        assert_eq!(d, back);
    }

    #[test]
    fn replay_is_byte_identical() {
        let cache = ToolCache::with_provider(provider());
        let req = ToolRequest::time_query(pt(23.0, 113.0), pt(23.02, 113.01), TravelMode::Cycling).unwrap();
        let first = serde_json::to_string(&cache.lookup(&req).unwrap()).unwrap();
        let second = serde_json::to_string(&cache.lookup(&req).unwrap()).unwrap();
        assert_eq!(first, second);
        assert_eq!(cache.len(), 1);
    }

    #[test]
    fn surrounding_results_sorted_and_bounded() {
        let cache = ToolCache::with_provider(provider());
        let hits = cache
            .surrounding_pois_query(pt(23.0, 113.0), 2000, "park", TimeBucket::Midnight00)
            .unwrap();
        assert_eq!(hits.iter().map(|h| h.name.as_str()).collect::<Vec<_>>(), vec!["South Park", "North Park"]);
        assert!(hits.windows(2).all(|w| w[0].straight_distance <= w[1].straight_distance));
        let none = cache
            .surrounding_pois_query(pt(10.0, 10.0), 1, "park", TimeBucket::Midnight00)
            .unwrap();
        assert!(none.is_empty());
        assert!(matches!(
            cache.surrounding_pois_query(pt(23.0, 113.0), 2000, "casino", TimeBucket::Midnight00),
            Err(ToolError::InvalidParams(_))
        ));
    }

    #[test]
    fn rush_hour_rejects_walking_and_is_zero_on_identity() {
        let cache = ToolCache::with_provider(provider());
        let a = pt(23.0, 113.0);
        assert!(matches!(
            cache.rush_hour_query(a, pt(23.1, 113.0), TravelMode::Walking),
            Err(ToolError::InvalidParams(_))
        ));
        assert_eq!(cache.rush_hour_query(a, a, TravelMode::Driving).unwrap(), 0);
    }

    #[test]
    fn transit_at_midnight_is_rekeyed() {
        let req = ToolRequest::time_query(pt(23.0, 113.0), pt(23.1, 113.0), TravelMode::Transit).unwrap();
        assert_eq!(req.time_bucket, TimeBucket::Offpeak15);
        let walk = ToolRequest::time_query(pt(23.0, 113.0), pt(23.1, 113.0), TravelMode::Walking).unwrap();
        assert_eq!(walk.time_bucket, TimeBucket::Midnight00);
    }

    #[test]
    fn keys_use_six_decimal_coordinates() {
        let a = ToolRequest::time_query(pt(23.00000001, 113.0), pt(23.1, 113.0), TravelMode::Walking).unwrap();
        let b = ToolRequest::time_query(pt(23.0, 113.00000004), pt(23.1, 113.0), TravelMode::Walking).unwrap();
        assert_eq!(a.key(), b.key());
        assert!(a.key().contains("origin=23.000000,113.000000"));
    }

    #[test]
    fn population_dedups_and_is_idempotent() {
        let prov = provider();
        let base = pt(23.0, 113.0);
        let mut corpus = Vec::new();
        for i in 0..7 {
            corpus.push(ToolRequest::time_query(base, pt(23.0 + 0.01 * i as f64, 113.01), TravelMode::Walking).unwrap());
        }
        corpus.push(corpus[0].clone());
        corpus.push(corpus[3].clone());
        corpus.push(corpus[6].clone());
        assert_eq!(corpus.len(), 10);
        let cache = ToolCache::new();
        let r = cache.populate(prov.as_ref(), &corpus);
        assert_eq!((r.unique_requests, r.inserted), (7, 7));
        assert_eq!(cache.len(), 7);
        let again = cache.populate(prov.as_ref(), &corpus);
        assert_eq!((again.inserted, again.already_present), (0, 7));
        assert_eq!(cache.len(), 7);
    }

    #[test]
    fn reload_yields_identical_lookups() {
        let prov = provider();
        let corpus = vec![
            ToolRequest::time_query(pt(23.0, 113.0), pt(23.02, 113.0), TravelMode::Driving).unwrap(),
            ToolRequest::surrounding_pois_query(pt(23.0, 113.0), 3000, "park").unwrap(),
            ToolRequest::rush_hour_query(pt(23.0, 113.0), pt(23.02, 113.0), TravelMode::Transit).unwrap(),
        ];
        let cache = ToolCache::new();
        cache.populate(prov.as_ref(), &corpus);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        cache.save(&path).unwrap();
        let loaded = ToolCache::load(&path).unwrap();
        assert!(loaded.is_frozen());
        for r in &corpus {
            assert_eq!(cache.lookup(r).unwrap(), loaded.lookup(r).unwrap());
        }
        let path2 = dir.path().join("cache2.jsonl");
        loaded.save(&path2).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }
}
