use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::store::GeoStore;
use crate::tools::TravelMode;

pub const GAZETTEER_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum GazetteerError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("unsupported gazetteer version {0}")]
    Version(u32),
}

/// Known surface forms per slot type.
///
/// Dump format (JSON): `{"version": 1, "entries": {"<slot_type>": ["value", ...]}}`,
/// with slot types and values sorted.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Gazetteer {
    pub version: u32,
    pub entries: BTreeMap<String, BTreeSet<String>>,
}

impl Gazetteer {
    pub fn new() -> Self {
        Gazetteer {
            version: GAZETTEER_VERSION,
            entries: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, slot_type: &str, value: &str) {
        if !value.is_empty() {
            self.entries.entry(slot_type.to_string()).or_default().insert(value.to_string());
        }
    }

    /// Cities, districts, community and POI names, POI labels and travel
    /// modes.
    pub fn from_store(store: &GeoStore) -> Self {
        let mut g = Gazetteer::new();
        for city in store.cities() {
            g.insert("city", city);
            for d in store.districts(city) {
                g.insert("district", &d);
            }
        }
        for c in store.communities() {
            g.insert("community_name", &c.name);
        }
        for p in store.pois() {
            g.insert("poi_name", &p.name);
        }
        for l in store.taxonomy().labels() {
            g.insert("poi_label", l);
        }
        for m in TravelMode::ALL {
            g.insert("transport_mode", m.as_str());
        }
        g
    }

    pub fn len(&self) -> usize {
        self.entries.values().map(BTreeSet::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries
            .iter()
            .flat_map(|(t, vs)| vs.iter().map(move |v| (t.as_str(), v.as_str())))
    }

    pub fn save(&self, path: &Path) -> Result<(), GazetteerError> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, GazetteerError> {
        let g: Gazetteer = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if g.version != GAZETTEER_VERSION {
            return Err(GazetteerError::Version(g.version));
        }
        Ok(g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dump_and_load() {
        let mut g = Gazetteer::new();
        g.insert("city", "Guangzhou");
        g.insert("community_name", "Oak Garden");
        g.insert("community_name", "");
        assert_eq!(g.len(), 2);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.json");
        g.save(&p).unwrap();
        assert_eq!(Gazetteer::load(&p).unwrap(), g);
        std::fs::write(&p, r#"{"version": 9, "entries": {}}"#).unwrap();
        assert!(matches!(Gazetteer::load(&p), Err(GazetteerError::Version(9))));
    }
}
