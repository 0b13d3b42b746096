//! Seeded synthetic fixtures: city-clustered communities and POIs.

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{Community, GeoPoint, Poi, PoiTaxonomy, PropertyType, SalesStatus, EARTH_RADIUS_M};
use crate::store::{city_key, CommunityRecord, PoiRecord, StoreError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureConfig {
    pub cities: Vec<String>,
    pub communities_per_city: usize,
    pub pois_per_city: usize,
    pub seed: u64,
}

impl Default for FixtureConfig {
    fn default() -> Self {
        FixtureConfig {
            cities: vec!["Guangzhou".into(), "Shenzhen".into()],
            communities_per_city: 200,
            pois_per_city: 150,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fixture {
    pub communities: Vec<Community>,
    pub pois: Vec<Poi>,
}

const KNOWN_CITIES: &[(&str, f64, f64, [&str; 4])] = &[
    ("Guangzhou", 23.1291, 113.2644, ["Tianhe", "Yuexiu", "Haizhu", "Baiyun"]),
    ("Shenzhen", 22.5431, 114.0579, ["Futian", "Nanshan", "Luohu", "Longgang"]),
    ("Beijing", 39.9042, 116.4074, ["Chaoyang", "Haidian", "Dongcheng", "Fengtai"]),
    ("Shanghai", 31.2304, 121.4737, ["Pudong", "Xuhui", "Minhang", "Changning"]),
    ("Chengdu", 30.5728, 104.0668, ["Jinjiang", "Wuhou", "Qingyang", "Chenghua"]),
    ("Hangzhou", 30.2741, 120.1551, ["Xihu", "Gongshu", "Binjiang", "Yuhang"]),
];

const COMMUNITY_WORDS: &[&str] = &[
    "Azure", "Bamboo", "Cedar", "Coral", "Crystal", "Dawn", "Emerald", "Golden", "Harbor", "Ivory", "Jade",
    "Jasmine", "Laurel", "Maple", "Meadow", "Misty", "Oak", "Orchid", "Pearl", "Pine", "Plum", "Rainbow", "Ruby",
    "Sapphire", "Silver", "Spring", "Starlight", "Summit", "Sunrise", "Tranquil", "Twin Oaks", "Velvet", "Verdant",
    "Vista", "Willow", "Wisteria", "Zenith", "Amber", "Birch", "Camellia",
];

const COMMUNITY_SUFFIXES: &[&str] =
    &["Garden", "Court", "Residence", "Mansion", "Heights", "Villa", "Terrace", "Estate"];

const PLACE_WORDS: &[&str] = &[
    "Lotus", "Phoenix", "Riverside", "Hilltop", "Sunshine", "Harmony", "Peace", "Unity", "Lakeview", "Greenfield",
    "Eastgate", "Westgate", "Northbridge", "Southbank", "Central", "Pioneer", "Liberty", "Heritage", "Crescent",
    "Horizon", "Evergreen", "Brightwater", "Kingsway", "Queensway", "Fairview", "Oldtown", "Newport", "Stonebridge",
    "Clearwater", "Moonlight", "Starbridge", "Redwood", "Bluebell", "Highland", "Lowland", "Parkside", "Seaview",
    "Sunset", "Springfield", "Hillcrest",
];

const STREETS: &[&str] =
    &["Zhongshan Road", "Renmin Road", "Jiefang Avenue", "Huanshi Road", "Xinhua Street", "Binhe Road"];

fn title_case(s: &str) -> String {
    s.split(' ')
        .map(|w| {
            let mut cs = w.chars();
            match cs.next() {
                Some(f) => f.to_uppercase().chain(cs).collect(),
                None => String::new(),
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}

fn offset(center: GeoPoint, north_m: f64, east_m: f64) -> GeoPoint {
    let deg = 180.0 / std::f64::consts::PI / EARTH_RADIUS_M;
    let lat = center.latitude + north_m * deg;
    let lon = center.longitude + east_m * deg / center.latitude.to_radians().cos();
    GeoPoint {
        latitude: lat,
        longitude: lon,
    }
    .rounded()
}

fn uniform_in_disc(rng: &mut ChaCha8Rng, center: GeoPoint, radius: f64) -> GeoPoint {
    let r = radius * rng.random::<f64>().sqrt();
    let theta = rng.random::<f64>() * std::f64::consts::TAU;
    offset(center, r * theta.sin(), r * theta.cos())
}

/// City center and district names; unknown cities get a seeded center in
/// eastern China and compass-named districts.
fn city_layout(city: &str, rng: &mut ChaCha8Rng) -> (GeoPoint, Vec<String>) {
    if let Some((_, lat, lon, d)) = KNOWN_CITIES.iter().find(|(n, ..)| *n == city) {
        return (
            GeoPoint {
                latitude: *lat,
                longitude: *lon,
            },
            d.iter().map(|s| s.to_string()).collect(),
        );
    }
    let center = GeoPoint {
        latitude: rng.random_range(22.0..40.0),
        longitude: rng.random_range(104.0..121.0),
    }
    .rounded();
    let districts = ["North", "East", "South", "West"].iter().map(|d| format!("{city} {d}")).collect();
    (center, districts)
}

/// Deterministic under `config.seed`. Districts sit 6-8 km from the city
/// center and entities are uniform in a 2.5 km disc around their district.
/// Names are unique within a city.
pub fn generate_fixture(config: &FixtureConfig) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let taxonomy = PoiTaxonomy::default();
    let labels: Vec<String> = taxonomy.labels().map(String::from).collect();
    let mut communities = Vec::new();
    let mut pois = Vec::new();
    for city in &config.cities {
        let key = city_key(city);
        let (center, districts) = city_layout(city, &mut rng);
        let district_centers: Vec<GeoPoint> = (0..districts.len())
            .map(|i| {
                let angle = i as f64 * std::f64::consts::TAU / districts.len() as f64 + rng.random_range(-0.3..0.3);
                let dist = rng.random_range(6000.0..8000.0);
                offset(center, dist * angle.sin(), dist * angle.cos())
            })
            .collect();

        let mut names: Vec<String> = COMMUNITY_WORDS
            .iter()
            .flat_map(|w| COMMUNITY_SUFFIXES.iter().map(move |s| format!("{w} {s}")))
            .collect();
        names.shuffle(&mut rng);
        for (i, name) in names.into_iter().cycle().take(config.communities_per_city).enumerate() {
            let name = if i >= COMMUNITY_WORDS.len() * COMMUNITY_SUFFIXES.len() {
                format!("{name} Phase {}", i / (COMMUNITY_WORDS.len() * COMMUNITY_SUFFIXES.len()) + 1)
            } else {
                name
            };
            let d = i % districts.len();
            let location = uniform_in_disc(&mut rng, district_centers[d], 2500.0);
            let greening: f64 = rng.random_range(15.0..45.0);
            communities.push(Community {
                id: format!("{key}-c{:04}", i + 1),
                city: city.clone(),
                name,
                district: districts[d].clone(),
                address: format!("{} {}, {} District", rng.random_range(1..400), STREETS[rng.random_range(0..STREETS.len())], districts[d]),
                location,
                greening_rate: (greening * 10.0).round() / 10.0,
                avg_price: rng.random_range(100..=900) * 100,
                property_type: PropertyType::ALL[rng.random_range(0..PropertyType::ALL.len())],
                sales_status: SalesStatus::ALL[rng.random_range(0..SalesStatus::ALL.len())],
            });
        }

        let mut used = BTreeSet::new();
        let mut place_words: Vec<&str> = PLACE_WORDS.to_vec();
        for i in 0..config.pois_per_city {
            let label = &labels[i % labels.len()];
            let round = i / labels.len();
            if round.is_multiple_of(PLACE_WORDS.len()) {
                place_words.shuffle(&mut rng);
            }
            let word = place_words[round % PLACE_WORDS.len()];
            let mut name = format!("{word} {}", title_case(label));
            let mut n = 2;
            while !used.insert(name.clone()) {
                name = format!("{word} {} No. {n}", title_case(label));
                n += 1;
            }
            let d = rng.random_range(0..districts.len());
            pois.push(Poi {
                id: format!("{key}-p{:04}", i + 1),
                city: city.clone(),
                name,
                category: taxonomy.category_of(label).expect("taxonomy label"),
                label: label.clone(),
                location: uniform_in_disc(&mut rng, district_centers[d], 2500.0),
            });
        }
    }
    Fixture { communities, pois }
}

/// Write `<dir>/<city_key>/community.csv` and `poi.csv`.
pub fn write_fixture(fixture: &Fixture, cities: &[String], dir: &Path) -> Result<(), StoreError> {
    let io = |e: &dyn std::fmt::Display| StoreError::Io(e.to_string());
    for city in cities {
        let city_dir = dir.join(city_key(city));
        std::fs::create_dir_all(&city_dir).map_err(|e| io(&e))?;
        let mut w = csv::Writer::from_path(city_dir.join("community.csv")).map_err(|e| io(&e))?;
        let mut any = false;
        for c in fixture.communities.iter().filter(|c| &c.city == city) {
            w.serialize(CommunityRecord::from_community(c)).map_err(|e| io(&e))?;
            any = true;
        }
        if !any {
            w.write_record(COMMUNITY_HEADER).map_err(|e| io(&e))?;
        }
        w.flush().map_err(|e| io(&e))?;
        let mut w = csv::Writer::from_path(city_dir.join("poi.csv")).map_err(|e| io(&e))?;
        let mut any = false;
        for p in fixture.pois.iter().filter(|p| &p.city == city) {
            w.serialize(PoiRecord::from_poi(p)).map_err(|e| io(&e))?;
            any = true;
        }
        if !any {
            w.write_record(POI_HEADER).map_err(|e| io(&e))?;
        }
        w.flush().map_err(|e| io(&e))?;
    }
    Ok(())
}

const COMMUNITY_HEADER: [&str; 10] = [
    "id",
    "name",
    "district",
    "address",
    "latitude",
    "longitude",
    "greening_rate",
    "avg_price",
    "property_type",
    "sales_status",
];
const POI_HEADER: [&str; 6] = ["id", "name", "category", "label", "latitude", "longitude"];
