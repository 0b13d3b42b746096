//! Python bindings: build a store, generate and validate a dataset, run the
//! oracle-backed agents and score answers. Structured values cross the
//! boundary as plain dicts and lists.

use std::path::PathBuf;
use std::sync::Arc;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyAny;

use geoqa_core::agent::{Injection, OracleBackend};
use geoqa_core::db_agent::{tokenize as bm25_tokenize, Bm25Index, Bm25Params};
use geoqa_core::domain::{read_dataset, write_dataset, CanonicalAnswer};
use geoqa_core::eval::{run_suite, score_verdict, RunConfig, SuiteEnv};
use geoqa_core::fixture::{generate_fixture as make_fixture, write_fixture, FixtureConfig};
use geoqa_core::generator::{generate, validate_dataset, GeneratorConfig, TemplateSet};
use geoqa_core::slu::{Gazetteer, LexiconSlu};
use geoqa_core::store::{GeoStore, StoreConfig};
use geoqa_core::tools::{SyntheticProvider, ToolCache};

fn runtime(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn to_py<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(runtime)?;
    py.import("json")?.call_method1("loads", (text,))
}

fn from_py<T: serde::de::DeserializeOwned>(obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = obj.py().import("json")?.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn templates(dir: Option<PathBuf>) -> PyResult<TemplateSet> {
    match dir {
        Some(d) => TemplateSet::load_dir(&d).map_err(runtime),
        None => Ok(TemplateSet::default_set()),
    }
}

/// Write a synthetic fixture (CSV per city) and return
/// `(communities, pois)` written.
#[pyfunction]
#[pyo3(signature = (out_dir, communities_per_city=200, pois_per_city=150, seed=7))]
fn generate_fixture(out_dir: PathBuf, communities_per_city: usize, pois_per_city: usize, seed: u64) -> PyResult<(usize, usize)> {
    let config = FixtureConfig {
        cities: StoreConfig::default().cities,
        communities_per_city,
        pois_per_city,
        seed,
    };
    let fixture = make_fixture(&config);
    write_fixture(&fixture, &config.cities, &out_dir).map_err(runtime)?;
    Ok((fixture.communities.len(), fixture.pois.len()))
}

/// Embedded SQL store of communities, POIs and their proximity pairs.
#[pyclass(frozen)]
struct Store {
    inner: GeoStore,
}

#[pymethods]
impl Store {
    #[staticmethod]
    fn ingest(fixtures_dir: PathBuf) -> PyResult<Self> {
        let inner = GeoStore::ingest_fixture(StoreConfig::default(), &fixtures_dir).map_err(runtime)?;
        Ok(Store { inner })
    }

    #[staticmethod]
    fn open(path: PathBuf) -> PyResult<Self> {
        Ok(Store {
            inner: GeoStore::open(&path).map_err(runtime)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(runtime)
    }

    fn cities(&self) -> Vec<String> {
        self.inner.cities().to_vec()
    }

    fn captions(&self) -> Vec<String> {
        self.inner.list_captions().iter().map(|c| c.caption.clone()).collect()
    }

    fn pair_counts<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.pair_counts())
    }

    /// Execute a read-only statement; returns `{"columns": [...], "rows": [...]}`.
    fn sql<'py>(&self, py: Python<'py>, statement: &str) -> PyResult<Bound<'py, PyAny>> {
        let rs = self.inner.execute_sql(statement).map_err(|e| PyValueError::new_err(e.to_string()))?;
        to_py(py, &rs)
    }
}

/// Compute the proximity pair tables of the store at `path` in place.
#[pyfunction]
fn build_pairs<'py>(py: Python<'py>, path: PathBuf) -> PyResult<Bound<'py, PyAny>> {
    let mut store = GeoStore::open(&path).map_err(runtime)?;
    let counts = py.detach(|| store.build_proximity_pairs()).map_err(runtime)?;
    store.save(&path).map_err(runtime)?;
    to_py(py, &counts)
}

/// Generate a dataset from the templates. The tool cache at `cache_path`
/// is extended through the synthetic provider and saved. Returns the
/// generation report.
#[pyfunction]
#[pyo3(signature = (store_path, cache_path, out_path, attempts_per_template=100, seed=7, provider_seed=7, templates_dir=None))]
#[allow(clippy::too_many_arguments)]
fn generate_dataset<'py>(
    py: Python<'py>,
    store_path: PathBuf,
    cache_path: PathBuf,
    out_path: PathBuf,
    attempts_per_template: usize,
    seed: u64,
    provider_seed: u64,
    templates_dir: Option<PathBuf>,
) -> PyResult<Bound<'py, PyAny>> {
    let store = GeoStore::open(&store_path).map_err(runtime)?;
    let templates = templates(templates_dir)?;
    let mut cache = if cache_path.exists() {
        ToolCache::load(&cache_path).map_err(runtime)?
    } else {
        ToolCache::new()
    };
    cache.set_provider(Some(Arc::new(SyntheticProvider::new(
        provider_seed,
        store.pois().to_vec(),
        store.taxonomy().clone(),
    ))));
    let config = GeneratorConfig {
        seed,
        attempts_per_template,
    };
    let output = py.detach(|| generate(&templates, &store, &cache, &config));
    write_dataset(&out_path, &output.instances).map_err(runtime)?;
    cache.save(&cache_path).map_err(runtime)?;
    to_py(py, &output.report)
}

/// Re-derive every instance against the store and a frozen cache; returns
/// the list of mismatches (empty when the dataset is consistent).
#[pyfunction]
#[pyo3(signature = (store_path, cache_path, dataset_path, templates_dir=None))]
fn validate<'py>(
    py: Python<'py>,
    store_path: PathBuf,
    cache_path: PathBuf,
    dataset_path: PathBuf,
    templates_dir: Option<PathBuf>,
) -> PyResult<Bound<'py, PyAny>> {
    let store = GeoStore::open(&store_path).map_err(runtime)?;
    let cache = ToolCache::load(&cache_path).map_err(runtime)?;
    let instances = read_dataset(&dataset_path).map_err(runtime)?;
    let templates = templates(templates_dir)?;
    let report = py.detach(|| validate_dataset(&instances, &templates, &store, &cache));
    let mismatches: Vec<(String, String)> = report.mismatches.iter().map(|m| (m.id.clone(), m.detail.clone())).collect();
    to_py(py, &mismatches)
}

/// Run every instance of a dataset through the agents with the
/// gold-replay backend and lexicon SLU. `inject` names gold stages
/// (any of "slu", "sql", "api"). Returns the evaluation report.
#[pyfunction]
#[pyo3(signature = (store_path, cache_path, dataset_path, inject=Vec::new(), parallelism=0, templates_dir=None))]
fn run_oracle<'py>(
    py: Python<'py>,
    store_path: PathBuf,
    cache_path: PathBuf,
    dataset_path: PathBuf,
    inject: Vec<String>,
    parallelism: usize,
    templates_dir: Option<PathBuf>,
) -> PyResult<Bound<'py, PyAny>> {
    let mut injection = Injection::NONE;
    for stage in &inject {
        match stage.as_str() {
            "slu" => injection.slu = true,
            "sql" => injection.sql = true,
            "api" => injection.api = true,
            other => return Err(PyValueError::new_err(format!("unknown injection stage '{other}'"))),
        }
    }
    let store = GeoStore::open(&store_path).map_err(runtime)?;
    let cache = ToolCache::load(&cache_path).map_err(runtime)?;
    let instances = read_dataset(&dataset_path).map_err(runtime)?;
    let templates = templates(templates_dir)?;
    let backend = OracleBackend::new(&instances, &templates, store.list_captions().to_vec());
    let slu = LexiconSlu::new(Gazetteer::from_store(&store), &templates);
    let config = RunConfig {
        inject: injection,
        parallelism,
        split: dataset_path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
        ..Default::default()
    };
    let env = SuiteEnv {
        store: &store,
        cache: &cache,
        backend: &backend,
        slu: Some(&slu),
    };
    let run = py
        .detach(|| run_suite(&injection.label(), &instances, &env, &config))
        .map_err(runtime)?;
    to_py(py, &run.report)
}

/// `(accuracy, item_f1)` of a predicted answer against gold. Answers are
/// dicts such as `{"kind": "entity_set", "items": [...]}`; `None` as the
/// prediction means unanswerable.
#[pyfunction]
fn score_answer(pred: Option<Bound<'_, PyAny>>, gold: Bound<'_, PyAny>) -> PyResult<(f64, f64)> {
    let gold: CanonicalAnswer = from_py(&gold)?;
    let pred: Option<CanonicalAnswer> = pred.map(|p| from_py(&p)).transpose()?;
    Ok(score_verdict(pred.as_ref(), &gold))
}

/// Okapi BM25 score of `query` against each caption.
#[pyfunction]
#[pyo3(signature = (captions, query, k1=1.2, b=0.75))]
fn bm25_scores(captions: Vec<String>, query: &str, k1: f64, b: f64) -> Vec<f64> {
    Bm25Index::new(&captions, Bm25Params { k1, b }).scores(query)
}

/// Retrieval tokens: lowercased words, CJK runs as character bigrams.
#[pyfunction]
fn tokenize(text: &str) -> Vec<String> {
    bm25_tokenize(text)
}

#[pymodule]
fn geoqa(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Store>()?;
    m.add_function(wrap_pyfunction!(generate_fixture, m)?)?;
    m.add_function(wrap_pyfunction!(build_pairs, m)?)?;
    m.add_function(wrap_pyfunction!(generate_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(validate, m)?)?;
    m.add_function(wrap_pyfunction!(run_oracle, m)?)?;
    m.add_function(wrap_pyfunction!(score_answer, m)?)?;
    m.add_function(wrap_pyfunction!(bm25_scores, m)?)?;
    m.add_function(wrap_pyfunction!(tokenize, m)?)?;
    Ok(())
}
