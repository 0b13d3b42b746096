//! Hybrid database + geospatial-tool question answering over real-estate
//! style data: an embedded store, a record/replay tool cache, a QA
//! generator with verifiable traces, a hierarchical agent framework and an
//! evaluation harness.

pub mod domain;
pub mod tools;
pub mod store;
pub mod fixture;
pub mod answer;
pub mod generator;
pub mod slu;
pub mod agent;
pub mod db_agent;
pub mod map_agent;
pub mod eval;
