//! Embedded SQLite store with the four per-city table families.
//!
//! Each city gets `community_<city>`, `poi_<city>`, `poi_community_<city>`
//! and `community_community_<city>` tables. The city key is the lowercased
//! city name with non-alphanumeric runs replaced by `_`.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Mutex;

use rusqlite::types::ValueRef;
use rusqlite::{params, Connection, OpenFlags};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{
    haversine, Cell, Community, GeoPoint, PairKind, Poi, PoiCategory, PoiTaxonomy, PropertyType, ProximityPair,
    ResultSet, SalesStatus,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StoreError {
    #[error("{file}: record {record}: {reason}")]
    Record { file: String, record: String, reason: String },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("sql: {0}")]
    Sql(String),
    #[error("io: {0}")]
    Io(String),
}

impl From<rusqlite::Error> for StoreError {
    fn from(e: rusqlite::Error) -> Self {
        StoreError::Sql(e.to_string())
    }
}

/// Structured execution failure carrying the engine message.
#[derive(Debug, Error, Clone, PartialEq, Serialize, Deserialize)]
#[error("{message}")]
pub struct SqlError {
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StoreConfig {
    pub cities: Vec<String>,
    /// Meters.
    pub poi_pairing_radius: f64,
    /// Meters.
    pub community_pairing_radius: f64,
    pub seed: u64,
}

impl Default for StoreConfig {
    fn default() -> Self {
        StoreConfig {
            cities: vec!["Guangzhou".into(), "Shenzhen".into()],
            poi_pairing_radius: 3000.0,
            community_pairing_radius: 1000.0,
            seed: 7,
        }
    }
}

impl StoreConfig {
    pub fn validate(&self) -> Result<(), StoreError> {
        if self.cities.is_empty() {
            return Err(StoreError::Config("city list is empty".into()));
        }
        let keys: BTreeSet<String> = self.cities.iter().map(|c| city_key(c)).collect();
        if keys.len() != self.cities.len() {
            return Err(StoreError::Config("city names collide after key normalization".into()));
        }
        if !(self.poi_pairing_radius > 0.0 && self.community_pairing_radius > 0.0) {
            return Err(StoreError::Config("pairing radii must be positive".into()));
        }
        Ok(())
    }
}

pub fn city_key(city: &str) -> String {
    let mut out = String::new();
    let mut gap = false;
    for ch in city.trim().chars() {
        if ch.is_alphanumeric() {
            if gap && !out.is_empty() {
                out.push('_');
            }
            gap = false;
            out.extend(ch.to_lowercase());
        } else {
            gap = true;
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableFamily {
    Community,
    Poi,
    PoiCommunity,
    CommunityCommunity,
}

impl TableFamily {
    pub const ALL: [TableFamily; 4] = [
        TableFamily::Community,
        TableFamily::Poi,
        TableFamily::PoiCommunity,
        TableFamily::CommunityCommunity,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            TableFamily::Community => "community",
            TableFamily::Poi => "poi",
            TableFamily::PoiCommunity => "poi_community",
            TableFamily::CommunityCommunity => "community_community",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|f| f.as_str() == s)
    }

    fn phrase(&self) -> &'static str {
        match self {
            TableFamily::Community => "Communities",
            TableFamily::Poi => "POIs",
            TableFamily::PoiCommunity => "Communities around POIs",
            TableFamily::CommunityCommunity => "Neighboring Community Pairs",
        }
    }

    pub fn columns(&self) -> Vec<ColumnSpec> {
        let spec: &[(&str, &str)] = match self {
            TableFamily::Community => &[
                ("id", "TEXT"),
                ("name", "TEXT"),
                ("district", "TEXT"),
                ("address", "TEXT"),
                ("latitude", "REAL"),
                ("longitude", "REAL"),
                ("greening_rate", "REAL"),
                ("avg_price", "INTEGER"),
                ("property_type", "TEXT"),
                ("sales_status", "TEXT"),
            ],
            TableFamily::Poi => &[
                ("id", "TEXT"),
                ("name", "TEXT"),
                ("category", "TEXT"),
                ("label", "TEXT"),
                ("latitude", "REAL"),
                ("longitude", "REAL"),
            ],
            TableFamily::PoiCommunity => &[
                ("poi_id", "TEXT"),
                ("poi_name", "TEXT"),
                ("poi_label", "TEXT"),
                ("poi_latitude", "REAL"),
                ("poi_longitude", "REAL"),
                ("community_id", "TEXT"),
                ("community_name", "TEXT"),
                ("community_latitude", "REAL"),
                ("community_longitude", "REAL"),
                ("straight_distance", "INTEGER"),
            ],
            TableFamily::CommunityCommunity => &[
                ("community_id", "TEXT"),
                ("community_name", "TEXT"),
                ("community_latitude", "REAL"),
                ("community_longitude", "REAL"),
                ("neighbor_id", "TEXT"),
                ("neighbor_name", "TEXT"),
                ("neighbor_latitude", "REAL"),
                ("neighbor_longitude", "REAL"),
                ("straight_distance", "INTEGER"),
            ],
        };
        spec.iter()
            .map(|(n, t)| ColumnSpec {
                name: n.to_string(),
                sql_type: t.to_string(),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub sql_type: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableCaption {
    pub table_id: String,
    pub caption: String,
    pub city: String,
    pub family: TableFamily,
    pub columns: Vec<ColumnSpec>,
}

impl TableCaption {
    pub fn new(city: &str, family: TableFamily) -> Self {
        TableCaption {
            table_id: format!("{}_{}", family.as_str(), city_key(city)),
            caption: format!("Table for {} in {}", family.phrase(), city),
            city: city.to_string(),
            family,
            columns: family.columns(),
        }
    }

    /// `table_id(col TYPE, ...)`, the form shown to SQL writers.
    pub fn schema_line(&self) -> String {
        let cols: Vec<String> = self.columns.iter().map(|c| format!("{} {}", c.name, c.sql_type)).collect();
        format!("{}({})", self.table_id, cols.join(", "))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairCounts {
    pub poi_community: usize,
    pub community_community: usize,
}

/// Handle to an ingested store. Reads go through a mutex-guarded
/// connection; entity lists are kept in memory for samplers and
/// gazetteers.
pub struct GeoStore {
    conn: Mutex<Connection>,
    config: StoreConfig,
    taxonomy: PoiTaxonomy,
    captions: Vec<TableCaption>,
    communities: Vec<Community>,
    pois: Vec<Poi>,
}

impl std::fmt::Debug for GeoStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GeoStore")
            .field("cities", &self.config.cities)
            .field("communities", &self.communities.len())
            .field("pois", &self.pois.len())
            .finish()
    }
}

#[derive(Debug, Deserialize, Serialize)]
pub(crate) struct CommunityRecord {
    pub id: String,
    pub name: String,
    pub district: String,
    pub address: String,
    pub latitude: f64,
    pub longitude: f64,
    pub greening_rate: f64,
    pub avg_price: i64,
    pub property_type: String,
    pub sales_status: String,
}

#[derive(Debug, Deserialize, Serialize)]
pub(crate) struct PoiRecord {
    pub id: String,
    pub name: String,
    pub category: String,
    pub label: String,
    pub latitude: f64,
    pub longitude: f64,
}

impl CommunityRecord {
    pub(crate) fn from_community(c: &Community) -> Self {
        CommunityRecord {
            id: c.id.clone(),
            name: c.name.clone(),
            district: c.district.clone(),
            address: c.address.clone(),
            latitude: c.location.latitude,
            longitude: c.location.longitude,
            greening_rate: c.greening_rate,
            avg_price: c.avg_price,
            property_type: c.property_type.as_str().into(),
            sales_status: c.sales_status.as_str().into(),
        }
    }

    fn into_community(self, city: &str) -> Result<Community, String> {
        let location = GeoPoint::new(self.latitude, self.longitude).map_err(|e| e.to_string())?;
        let property_type = PropertyType::parse(&self.property_type)
            .ok_or_else(|| format!("unknown property_type '{}'", self.property_type))?;
        let sales_status = SalesStatus::parse(&self.sales_status)
            .ok_or_else(|| format!("unknown sales_status '{}'", self.sales_status))?;
        let c = Community {
            id: self.id,
            city: city.to_string(),
            name: self.name,
            district: self.district,
            address: self.address,
            location,
            greening_rate: self.greening_rate,
            avg_price: self.avg_price,
            property_type,
            sales_status,
        };
        c.validate()?;
        Ok(c)
    }
}

impl PoiRecord {
    pub(crate) fn from_poi(p: &Poi) -> Self {
        PoiRecord {
            id: p.id.clone(),
            name: p.name.clone(),
            category: p.category.as_str().into(),
            label: p.label.clone(),
            latitude: p.location.latitude,
            longitude: p.location.longitude,
        }
    }

    fn into_poi(self, city: &str, taxonomy: &PoiTaxonomy) -> Result<Poi, String> {
        let location = GeoPoint::new(self.latitude, self.longitude).map_err(|e| e.to_string())?;
        let category =
            PoiCategory::parse(&self.category).ok_or_else(|| format!("unknown category '{}'", self.category))?;
        let p = Poi {
            id: self.id,
            city: city.to_string(),
            name: self.name,
            category,
            label: self.label,
            location,
        };
        p.validate(taxonomy)?;
        Ok(p)
    }
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<(usize, T)>, StoreError> {
    let file = path.display().to_string();
    let mut rdr = csv::Reader::from_path(path).map_err(|e| StoreError::Io(format!("{file}: {e}")))?;
    let mut out = Vec::new();
    for (i, rec) in rdr.deserialize::<T>().enumerate() {
        // header is line 1
        let line = i + 2;
        let rec = rec.map_err(|e| StoreError::Record {
            file: file.clone(),
            record: format!("line {line}"),
            reason: e.to_string(),
        })?;
        out.push((line, rec));
    }
    Ok(out)
}

impl GeoStore {
    /// Validate entities and materialize all tables. Pair tables start
    /// empty; call [`GeoStore::build_proximity_pairs`] to fill them.
    pub fn from_entities(
        config: StoreConfig,
        communities: Vec<Community>,
        pois: Vec<Poi>,
    ) -> Result<GeoStore, StoreError> {
        config.validate()?;
        let taxonomy = PoiTaxonomy::default();
        let known: BTreeSet<&str> = config.cities.iter().map(String::as_str).collect();
        let mut ids = BTreeSet::new();
        let mut names = BTreeSet::new();
        for c in &communities {
            let bad = |reason: String| StoreError::Record {
                file: "community".into(),
                record: format!("id {}", c.id),
                reason,
            };
            c.validate().map_err(bad)?;
            if !known.contains(c.city.as_str()) {
                return Err(bad(format!("city '{}' is not configured", c.city)));
            }
            if !ids.insert(c.id.clone()) {
                return Err(bad("duplicate id".into()));
            }
            if !names.insert((c.city.clone(), c.name.clone())) {
                return Err(bad(format!("duplicate community name '{}' in {}", c.name, c.city)));
            }
        }
        let mut poi_ids = BTreeSet::new();
        let mut poi_names = BTreeSet::new();
        for p in &pois {
            let bad = |reason: String| StoreError::Record {
                file: "poi".into(),
                record: format!("id {}", p.id),
                reason,
            };
            p.validate(&taxonomy).map_err(bad)?;
            if !known.contains(p.city.as_str()) {
                return Err(bad(format!("city '{}' is not configured", p.city)));
            }
            if !poi_ids.insert(p.id.clone()) {
                return Err(bad("duplicate id".into()));
            }
            if !poi_names.insert((p.city.clone(), p.name.clone())) {
                return Err(bad(format!("duplicate POI name '{}' in {}", p.name, p.city)));
            }
        }

        let conn = Connection::open_in_memory()?;
        let mut captions = Vec::new();
        for city in &config.cities {
            for family in TableFamily::ALL {
                let cap = TableCaption::new(city, family);
                let cols: Vec<String> = cap.columns.iter().map(|c| format!("{} {}", c.name, c.sql_type)).collect();
                conn.execute_batch(&format!("CREATE TABLE {} ({});", cap.table_id, cols.join(", ")))?;
                captions.push(cap);
            }
        }
        conn.execute_batch(
            "CREATE TABLE table_captions (table_id TEXT PRIMARY KEY, caption TEXT, city TEXT, family TEXT);
             CREATE TABLE store_meta (key TEXT PRIMARY KEY, value TEXT);",
        )?;
        let store = GeoStore {
            conn: Mutex::new(conn),
            config,
            taxonomy,
            captions,
            communities,
            pois,
        };
        store.write_entities()?;
        Ok(store)
    }

    fn write_entities(&self) -> Result<(), StoreError> {
        let mut conn = self.conn.lock().expect("store lock");
        let tx = conn.transaction()?;
        for cap in &self.captions {
            tx.execute(
                "INSERT INTO table_captions VALUES (?1, ?2, ?3, ?4)",
                params![cap.table_id, cap.caption, cap.city, cap.family.as_str()],
            )?;
        }
        let cfg = serde_json::to_string(&self.config).map_err(|e| StoreError::Io(e.to_string()))?;
        tx.execute("INSERT INTO store_meta VALUES ('config', ?1)", params![cfg])?;
        for c in &self.communities {
            let table = format!("community_{}", city_key(&c.city));
            tx.execute(
                &format!("INSERT INTO {table} VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7, ?8, ?9, ?10)"),
                params![
                    c.id,
                    c.name,
                    c.district,
                    c.address,
                    c.location.latitude,
                    c.location.longitude,
                    c.greening_rate,
                    c.avg_price,
                    c.property_type.as_str(),
                    c.sales_status.as_str()
                ],
            )?;
        }
        for p in &self.pois {
            let table = format!("poi_{}", city_key(&p.city));
            tx.execute(
                &format!("INSERT INTO {table} VALUES (?1, ?2, ?3, ?4, ?5, ?6)"),
                params![p.id, p.name, p.category.as_str(), p.label, p.location.latitude, p.location.longitude],
            )?;
        }
        tx.commit()?;
        Ok(())
    }

    /// Read `<dir>/<city_key>/community.csv` and `poi.csv` for every
    /// configured city (header row required, POI file may be empty).
    pub fn ingest_fixture(config: StoreConfig, dir: &Path) -> Result<GeoStore, StoreError> {
        config.validate()?;
        let taxonomy = PoiTaxonomy::default();
        let mut communities = Vec::new();
        let mut pois = Vec::new();
        for city in &config.cities {
            let city_dir = dir.join(city_key(city));
            let cpath = city_dir.join("community.csv");
            for (line, rec) in read_csv::<CommunityRecord>(&cpath)? {
                let id = rec.id.clone();
                let c = rec.into_community(city).map_err(|reason| StoreError::Record {
                    file: cpath.display().to_string(),
                    record: format!("line {line} (id {id})"),
                    reason,
                })?;
                communities.push(c);
            }
            let ppath = city_dir.join("poi.csv");
            for (line, rec) in read_csv::<PoiRecord>(&ppath)? {
                let id = rec.id.clone();
                let p = rec.into_poi(city, &taxonomy).map_err(|reason| StoreError::Record {
                    file: ppath.display().to_string(),
                    record: format!("line {line} (id {id})"),
                    reason,
                })?;
                pois.push(p);
            }
        }
        Self::from_entities(config, communities, pois)
    }

    /// Recompute both pair tables from scratch: every (poi, community)
    /// within the POI radius and every ordered community pair within the
    /// community radius.
    pub fn build_proximity_pairs(&mut self) -> Result<PairCounts, StoreError> {
        let pairs = compute_pairs(
            &self.communities,
            &self.pois,
            self.config.poi_pairing_radius,
            self.config.community_pairing_radius,
        );
        let by_id_c: BTreeMap<&str, &Community> = self.communities.iter().map(|c| (c.id.as_str(), c)).collect();
        let by_id_p: BTreeMap<&str, &Poi> = self.pois.iter().map(|p| (p.id.as_str(), p)).collect();
        let mut counts = PairCounts::default();
        let mut conn = self.conn.lock().expect("store lock");
        let tx = conn.transaction()?;
        for city in &self.config.cities {
            let k = city_key(city);
            tx.execute_batch(&format!("DELETE FROM poi_community_{k}; DELETE FROM community_community_{k};"))?;
        }
        for pair in &pairs {
            match pair.kind {
                PairKind::PoiCommunity => {
                    let p = by_id_p[pair.subject_id.as_str()];
                    let c = by_id_c[pair.neighbor_id.as_str()];
                    tx.execute(
                        &format!(
                            "INSERT INTO poi_community_{} VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7, ?8, ?9, ?10)",
                            city_key(&c.city)
                        ),
                        params![
                            p.id,
                            p.name,
                            p.label,
                            p.location.latitude,
                            p.location.longitude,
                            c.id,
                            c.name,
                            c.location.latitude,
                            c.location.longitude,
                            pair.straight_distance
                        ],
                    )?;
                    counts.poi_community += 1;
                }
                PairKind::CommunityCommunity => {
                    let a = by_id_c[pair.subject_id.as_str()];
                    let b = by_id_c[pair.neighbor_id.as_str()];
                    tx.execute(
                        &format!(
                            "INSERT INTO community_community_{} VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7, ?8, ?9)",
                            city_key(&a.city)
                        ),
                        params![
                            a.id,
                            a.name,
                            a.location.latitude,
                            a.location.longitude,
                            b.id,
                            b.name,
                            b.location.latitude,
                            b.location.longitude,
                            pair.straight_distance
                        ],
                    )?;
                    counts.community_community += 1;
                }
            }
        }
        tx.commit()?;
        Ok(counts)
    }

    /// Read-only execution. Anything other than a single SELECT (or WITH
    /// ... SELECT) statement is refused.
    pub fn execute_sql(&self, statement: &str) -> Result<ResultSet, SqlError> {
        let err = |message: String| SqlError { message };
        let sql = statement.trim().trim_end_matches(';').trim();
        let first = sql
            .split(|c: char| c.is_whitespace() || c == '(')
            .next()
            .unwrap_or("")
            .to_ascii_uppercase();
        if first != "SELECT" && first != "WITH" {
            return Err(err(format!("write-protected store: only SELECT statements are allowed, got '{first}'")));
        }
        let conn = self.conn.lock().expect("store lock");
        let mut stmt = conn.prepare(sql).map_err(|e| err(e.to_string()))?;
        if !stmt.readonly() {
            return Err(err("write-protected store: statement would modify the database".into()));
        }
        let columns: Vec<String> = stmt.column_names().into_iter().map(String::from).collect();
        let n = columns.len();
        let mut rows = Vec::new();
        let mut cursor = stmt.query([]).map_err(|e| err(e.to_string()))?;
        while let Some(row) = cursor.next().map_err(|e| err(e.to_string()))? {
            let mut out = Vec::with_capacity(n);
            for i in 0..n {
                let v = row.get_ref(i).map_err(|e| err(e.to_string()))?;
                out.push(match v {
                    ValueRef::Null => Cell::Null,
                    ValueRef::Integer(i) => Cell::Integer(i),
                    ValueRef::Real(f) => Cell::Real(f),
                    ValueRef::Text(t) => Cell::Text(String::from_utf8_lossy(t).into_owned()),
                    ValueRef::Blob(b) => Cell::Text(String::from_utf8_lossy(b).into_owned()),
                });
            }
            rows.push(out);
        }
        Ok(ResultSet { columns, rows })
    }

    /// Catalog in (configured city order, family order).
    pub fn list_captions(&self) -> &[TableCaption] {
        &self.captions
    }

    pub fn caption_for(&self, city: &str, family: TableFamily) -> Option<&TableCaption> {
        self.captions.iter().find(|c| c.city == city && c.family == family)
    }

    pub fn caption_by_table(&self, table_id: &str) -> Option<&TableCaption> {
        self.captions.iter().find(|c| c.table_id == table_id)
    }

    pub fn config(&self) -> &StoreConfig {
        &self.config
    }

    pub fn taxonomy(&self) -> &PoiTaxonomy {
        &self.taxonomy
    }

    pub fn cities(&self) -> &[String] {
        &self.config.cities
    }

    pub fn communities(&self) -> &[Community] {
        &self.communities
    }

    pub fn pois(&self) -> &[Poi] {
        &self.pois
    }

    pub fn communities_in<'a>(&'a self, city: &'a str) -> impl Iterator<Item = &'a Community> + 'a {
        self.communities.iter().filter(move |c| c.city == city)
    }

    pub fn pois_in<'a>(&'a self, city: &'a str) -> impl Iterator<Item = &'a Poi> + 'a {
        self.pois.iter().filter(move |p| p.city == city)
    }

    /// Districts of a city in sorted order.
    pub fn districts(&self, city: &str) -> Vec<String> {
        let set: BTreeSet<&str> = self.communities_in(city).map(|c| c.district.as_str()).collect();
        set.into_iter().map(String::from).collect()
    }

    pub fn find_community(&self, city: &str, name: &str) -> Option<&Community> {
        self.communities.iter().find(|c| c.city == city && c.name == name)
    }

    pub fn find_poi(&self, city: &str, name: &str) -> Option<&Poi> {
        self.pois.iter().find(|p| p.city == city && p.name == name)
    }

    /// Copy the whole database to a file.
    pub fn save(&self, path: &Path) -> Result<(), StoreError> {
        if path.exists() {
            std::fs::remove_file(path).map_err(|e| StoreError::Io(e.to_string()))?;
        }
        let conn = self.conn.lock().expect("store lock");
        conn.execute("VACUUM INTO ?1", params![path.to_string_lossy()])?;
        Ok(())
    }

    /// Open a file written by [`GeoStore::save`] into memory. The file
    /// itself is opened read-only.
    pub fn open(path: &Path) -> Result<GeoStore, StoreError> {
        let disk = Connection::open_with_flags(path, OpenFlags::SQLITE_OPEN_READ_ONLY)
            .map_err(|e| StoreError::Io(format!("{}: {e}", path.display())))?;
        let cfg: String = disk.query_row("SELECT value FROM store_meta WHERE key = 'config'", [], |r| r.get(0))?;
        let config: StoreConfig = serde_json::from_str(&cfg).map_err(|e| StoreError::Io(e.to_string()))?;
        let taxonomy = PoiTaxonomy::default();
        let mut communities = Vec::new();
        let mut pois = Vec::new();
        for city in &config.cities {
            let k = city_key(city);
            let mut stmt = disk.prepare(&format!(
                "SELECT id, name, district, address, latitude, longitude, greening_rate, avg_price, \
                 property_type, sales_status FROM community_{k} ORDER BY rowid"
            ))?;
            let recs = stmt.query_map([], |r| {
                Ok(CommunityRecord {
                    id: r.get(0)?,
                    name: r.get(1)?,
                    district: r.get(2)?,
                    address: r.get(3)?,
                    latitude: r.get(4)?,
                    longitude: r.get(5)?,
                    greening_rate: r.get(6)?,
                    avg_price: r.get(7)?,
                    property_type: r.get(8)?,
                    sales_status: r.get(9)?,
                })
            })?;
            for rec in recs {
                let rec = rec?;
                let id = rec.id.clone();
                communities.push(rec.into_community(city).map_err(|reason| StoreError::Record {
                    file: path.display().to_string(),
                    record: format!("community {id}"),
                    reason,
                })?);
            }
            let mut stmt = disk.prepare(&format!(
                "SELECT id, name, category, label, latitude, longitude FROM poi_{k} ORDER BY rowid"
            ))?;
            let recs = stmt.query_map([], |r| {
                Ok(PoiRecord {
                    id: r.get(0)?,
                    name: r.get(1)?,
                    category: r.get(2)?,
                    label: r.get(3)?,
                    latitude: r.get(4)?,
                    longitude: r.get(5)?,
                })
            })?;
            for rec in recs {
                let rec = rec?;
                let id = rec.id.clone();
                pois.push(rec.into_poi(city, &taxonomy).map_err(|reason| StoreError::Record {
                    file: path.display().to_string(),
                    record: format!("poi {id}"),
                    reason,
                })?);
            }
        }
        drop(disk);
        let mut mem = Connection::open_in_memory()?;
        mem.execute("ATTACH DATABASE ?1 AS disk", params![path.to_string_lossy()])?;
        {
            let tx = mem.transaction()?;
            let tables: Vec<String> = {
                let mut stmt = tx.prepare("SELECT name FROM disk.sqlite_master WHERE type = 'table' ORDER BY rowid")?;
                let names = stmt.query_map([], |r| r.get::<_, String>(0))?;
                names.collect::<Result<_, _>>()?
            };
            for t in tables {
                let ddl: String = tx.query_row(
                    "SELECT sql FROM disk.sqlite_master WHERE type = 'table' AND name = ?1",
                    params![t],
                    |r| r.get(0),
                )?;
                tx.execute_batch(&ddl)?;
                tx.execute_batch(&format!("INSERT INTO main.{t} SELECT * FROM disk.{t};"))?;
            }
            tx.commit()?;
        }
        mem.execute_batch("DETACH DATABASE disk;")?;
        let captions = config
            .cities
            .iter()
            .flat_map(|city| TableFamily::ALL.map(|f| TableCaption::new(city, f)))
            .collect();
        Ok(GeoStore {
            conn: Mutex::new(mem),
            config,
            taxonomy,
            captions,
            communities,
            pois,
        })
    }

    /// Row counts of the two pair tables summed over cities.
    pub fn pair_counts(&self) -> PairCounts {
        let mut counts = PairCounts::default();
        for city in &self.config.cities {
            let k = city_key(city);
            let count = |t: &str| -> usize {
                self.execute_sql(&format!("SELECT COUNT(*) FROM {t}_{k}"))
                    .ok()
                    .and_then(|r| r.rows.first().and_then(|row| row.first().and_then(Cell::as_f64)))
                    .unwrap_or(0.0) as usize
            };
            counts.poi_community += count("poi_community");
            counts.community_community += count("community_community");
        }
        counts
    }
}

/// Brute-force pairing over all entity pairs of the same city. Output is
/// ordered by (kind, subject id, neighbor id).
pub fn compute_pairs(
    communities: &[Community],
    pois: &[Poi],
    poi_radius: f64,
    community_radius: f64,
) -> Vec<ProximityPair> {
    let mut out = Vec::new();
    for p in pois {
        for c in communities.iter().filter(|c| c.city == p.city) {
            let d = haversine(p.location, c.location);
            if d <= poi_radius {
                out.push(ProximityPair {
                    kind: PairKind::PoiCommunity,
                    subject_id: p.id.clone(),
                    neighbor_id: c.id.clone(),
                    straight_distance: d.round() as i64,
                });
            }
        }
    }
    for a in communities {
        for b in communities.iter().filter(|b| b.city == a.city && b.id != a.id) {
            let d = haversine(a.location, b.location);
            if d <= community_radius {
                out.push(ProximityPair {
                    kind: PairKind::CommunityCommunity,
                    subject_id: a.id.clone(),
                    neighbor_id: b.id.clone(),
                    straight_distance: d.round() as i64,
                });
            }
        }
    }
    out.sort_by(|x, y| {
        (x.kind as u8, &x.subject_id, &x.neighbor_id).cmp(&(y.kind as u8, &y.subject_id, &y.neighbor_id))
    });
    out
}

/// Quote a value as an SQL string literal.
pub fn sql_quote(s: &str) -> String {
    format!("'{}'", s.replace('\'', "''"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn community(id: &str, city: &str, lat: f64, lon: f64) -> Community {
        Community {
            id: id.into(),
            city: city.into(),
            name: format!("{id} Garden"),
            district: "Central".into(),
            address: "1 Road".into(),
            location: GeoPoint::new(lat, lon).unwrap(),
            greening_rate: 30.0,
            avg_price: 50_000,
            property_type: PropertyType::Residential,
            sales_status: SalesStatus::OnSale,
        }
    }

    fn one_city() -> StoreConfig {
        StoreConfig {
            cities: vec!["Guangzhou".into()],
            ..Default::default()
        }
    }

    #[test]
    fn city_keys() {
        assert_eq!(city_key("Guangzhou"), "guangzhou");
        assert_eq!(city_key(" New  York-City "), "new_york_city");
    }

    #[test]
    fn two_communities_500m_apart_give_two_rows() {
        // 500 m due north
        let dlat = 500.0 / (crate::domain::EARTH_RADIUS_M * std::f64::consts::PI / 180.0);
        let cs = vec![community("a", "Guangzhou", 23.0, 113.0), community("b", "Guangzhou", 23.0 + dlat, 113.0)];
        let mut store = GeoStore::from_entities(one_city(), cs, vec![]).unwrap();
        let counts = store.build_proximity_pairs().unwrap();
        assert_eq!(counts.community_community, 2);
        assert_eq!(counts.poi_community, 0);
        assert_eq!(store.pair_counts(), counts);
    }

    #[test]
    fn rejects_writes() {
        let store = GeoStore::from_entities(one_city(), vec![community("a", "Guangzhou", 23.0, 113.0)], vec![]).unwrap();
        for sql in [
            "DELETE FROM community_guangzhou",
            "DROP TABLE community_guangzhou",
            "INSERT INTO community_guangzhou (id) VALUES ('x')",
            "SELECT 1; DELETE FROM community_guangzhou",
        ] {
            assert!(store.execute_sql(sql).is_err(), "{sql}");
        }
        let rs = store.execute_sql("SELECT COUNT(*) FROM community_guangzhou").unwrap();
        assert_eq!(rs.rows, vec![vec![Cell::Integer(1)]]);
    }

    #[test]
    fn missing_table_is_an_error_with_engine_message() {
        let store = GeoStore::from_entities(one_city(), vec![], vec![]).unwrap();
        let e = store.execute_sql("SELECT * FROM community_paris").unwrap_err();
        assert!(e.message.contains("no such table"), "{}", e.message);
    }

    #[test]
    fn invalid_latitude_names_the_record() {
        let mut c = community("bad1", "Guangzhou", 23.0, 113.0);
        c.location.latitude = 95.0;
        let e = GeoStore::from_entities(one_city(), vec![c], vec![]).unwrap_err();
        assert!(e.to_string().contains("bad1"), "{e}");
    }

    #[test]
    fn quote_escapes() {
        assert_eq!(sql_quote("O'Neil"), "'O''Neil'");
    }
}
