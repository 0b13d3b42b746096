#![allow(dead_code)]

pub mod synth;

use std::sync::Arc;

use geoqa_core::domain::QAInstance;
use geoqa_core::fixture::{generate_fixture, FixtureConfig};
use geoqa_core::generator::{generate, GenerationReport, GeneratorConfig, TemplateSet};
use geoqa_core::store::{GeoStore, StoreConfig};
use geoqa_core::tools::{SyntheticProvider, ToolCache};

pub struct World {
    pub store: GeoStore,
    pub cache: ToolCache,
    pub templates: TemplateSet,
    pub instances: Vec<QAInstance>,
    pub report: GenerationReport,
}

/// Fixture, store with pair tables, a provider-backed cache filled while
/// generating, then frozen.
pub fn build_world(communities_per_city: usize, pois_per_city: usize, attempts: usize, seed: u64) -> World {
    let fixture = generate_fixture(&FixtureConfig {
        communities_per_city,
        pois_per_city,
        seed,
        ..Default::default()
    });
    let config = StoreConfig {
        seed,
        ..Default::default()
    };
    let mut store = GeoStore::from_entities(config, fixture.communities, fixture.pois).expect("store");
    store.build_proximity_pairs().expect("pairs");
    let provider = SyntheticProvider::new(seed, store.pois().to_vec(), store.taxonomy().clone());
    let mut cache = ToolCache::with_provider(Arc::new(provider));
    let templates = TemplateSet::default_set();
    let out = generate(
        &templates,
        &store,
        &cache,
        &GeneratorConfig {
            seed,
            attempts_per_template: attempts,
        },
    );
    cache.freeze();
    World {
        store,
        cache,
        templates,
        instances: out.instances,
        report: out.report,
    }
}
