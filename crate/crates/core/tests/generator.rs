mod common;

use std::collections::BTreeMap;
use std::sync::Arc;

use geoqa_core::domain::{Community, GeoPoint, Poi, PoiCategory, PropertyType, SalesStatus};
use geoqa_core::generator::{
    generate, plausibility_filter, stratified_split, validate_dataset, GeneratorConfig, RejectReason, SplitSpec,
    TemplateSet, CYCLING_LIMIT_M, WALKING_LIMIT_M,
};
use geoqa_core::store::{GeoStore, StoreConfig};
use geoqa_core::tools::{DistanceKind, SyntheticProvider, ToolCache, TravelMode};
use proptest::prelude::*;

#[test]
fn accounting_and_validation() {
    let w = common::build_world(60, 60, 25, 3);
    let r = &w.report;
    assert_eq!(r.total.attempted, r.total.accepted + r.total.rejected_total());
    for (id, t) in &r.per_template {
        assert_eq!(t.attempted, t.accepted + t.rejected_total(), "{id}");
    }
    assert_eq!(r.total.accepted, w.instances.len());
    for inst in &w.instances {
        inst.check_invariants().unwrap();
    }
    let v = validate_dataset(&w.instances, &w.templates, &w.store, &w.cache);
    assert_eq!(v.checked, w.instances.len());
    assert!(v.is_clean(), "{:?}", &v.mismatches[..v.mismatches.len().min(5)]);
}

#[test]
fn tampered_answer_is_reported() {
    let w = common::build_world(40, 40, 5, 5);
    let mut bad = w.instances.clone();
    let victim = bad.iter_mut().find(|i| i.sql_trace.len() == 1).unwrap();
    victim.sql_trace[0].statement = victim.sql_trace[0].statement.replace("SELECT", "SELECT 1 AS junk,");
    let v = validate_dataset(&bad, &w.templates, &w.store, &w.cache);
    assert!(!v.is_clean());
}

#[test]
fn generation_is_a_function_of_the_seed() {
    let a = common::build_world(40, 40, 10, 9);
    let b = common::build_world(40, 40, 10, 9);
    assert_eq!(
        serde_json::to_string(&a.instances).unwrap(),
        serde_json::to_string(&b.instances).unwrap()
    );
    assert_eq!(a.report, b.report);
}

#[test]
fn emitted_instances_respect_mode_limits() {
    let w = common::build_world(60, 60, 25, 4);
    for inst in &w.instances {
        plausibility_filter(inst).unwrap();
        for s in &inst.tool_trace {
            let p = &s.request.params;
            if let (Some(o), Some(d)) = (p.origin, p.destination) {
                let span = geoqa_core::domain::haversine(o, d);
                if p.mode == Some(TravelMode::Walking) || p.kind == Some(DistanceKind::Walking) {
                    assert!(span <= WALKING_LIMIT_M);
                }
                if p.mode == Some(TravelMode::Cycling) {
                    assert!(span <= CYCLING_LIMIT_M);
                }
            }
        }
    }
}

const FAR_WALK: &str = r#"
[[template]]
id = "forced_far_walk"
question_type = 2
intents = ["commute_time"]
question = "How long does it take to walk from {community_a} to {community_b} in {city}?"
sql = ["SELECT name, latitude, longitude FROM {community_table} WHERE name IN ({community_a:sql}, {community_b:sql})"]
answer = { source = "tools", rule = "passthrough" }

[[template.placeholders]]
name = "city"
kind = "city"
slot = "city"

[[template.placeholders]]
name = "community_a"
kind = "community"
slot = "community_name"

[[template.placeholders]]
name = "community_b"
kind = "community"
slot = "community_name"

[[template.tools]]
function = "time_query"
origin = "{community_a}"
destination = "{community_b}"
mode = "walking"
"#;

fn community(id: &str, name: &str, lat: f64, lon: f64) -> Community {
    Community {
        id: id.into(),
        city: "Guangzhou".into(),
        name: name.into(),
        district: "Tianhe".into(),
        address: "1 Road".into(),
        location: GeoPoint::new(lat, lon).unwrap(),
        greening_rate: 30.0,
        avg_price: 50_000,
        property_type: PropertyType::Residential,
        sales_status: SalesStatus::OnSale,
    }
}

#[test]
fn twenty_km_walk_is_rejected() {
    // Two communities about 22 km apart: every binding is a far walk.
    let communities = vec![
        community("c1", "Oak Garden", 23.10, 113.20),
        community("c2", "Pine Court", 23.30, 113.20),
    ];
    let pois = vec![Poi {
        id: "p1".into(),
        city: "Guangzhou".into(),
        name: "Lotus Park".into(),
        category: PoiCategory::Park,
        label: "park".into(),
        location: GeoPoint::new(23.2, 113.2).unwrap(),
    }];
    let config = StoreConfig {
        cities: vec!["Guangzhou".into()],
        ..Default::default()
    };
    let mut store = GeoStore::from_entities(config, communities, pois).unwrap();
    store.build_proximity_pairs().unwrap();
    let provider = SyntheticProvider::new(1, store.pois().to_vec(), store.taxonomy().clone());
    let cache = ToolCache::with_provider(Arc::new(provider));
    let templates = TemplateSet::new(TemplateSet::parse_str("far.toml", FAR_WALK).unwrap()).unwrap();
    let out = generate(
        &templates,
        &store,
        &cache,
        &GeneratorConfig {
            seed: 1,
            attempts_per_template: 40,
        },
    );
    assert!(out.instances.is_empty());
    let tally = &out.report.total;
    assert_eq!(tally.accepted, 0);
    assert!(tally.rejected.get(&RejectReason::Implausible).copied().unwrap_or(0) > 0, "{tally:?}");
}

#[test]
fn split_is_stratified_and_reproducible() {
    let w = common::build_world(60, 60, 25, 6);
    let spec = SplitSpec::default();
    let a = stratified_split(&w.instances, &spec);
    let b = stratified_split(&w.instances, &spec);
    assert_eq!(a, b);
    let mut strata: BTreeMap<&str, [usize; 3]> = BTreeMap::new();
    for (k, part) in [&a.train, &a.val, &a.test].into_iter().enumerate() {
        for i in part {
            strata.entry(i.template_id.as_str()).or_default()[k] += 1;
        }
    }
    for (t, c) in strata {
        let n = (c[0] + c[1] + c[2]) as f64;
        for (got, share) in c.iter().zip([0.8, 0.1, 0.1]) {
            assert!((*got as f64 - n * share).abs() <= 1.0, "{t}: {c:?}");
        }
    }
    assert_eq!(a.train.len() + a.val.len() + a.test.len(), w.instances.len());
}

proptest! {
    #[test]
    fn allocation_within_one(n in 0usize..5000) {
        let parts = geoqa_core::generator::allocate(n, [8.0, 1.0, 1.0]);
        prop_assert_eq!(parts.iter().sum::<usize>(), n);
        for (got, share) in parts.iter().zip([0.8, 0.1, 0.1]) {
            prop_assert!((*got as f64 - n as f64 * share).abs() <= 1.0);
        }
    }
}
