//! Record/replay implementation of the four geospatial functions.
//!
//! Every call is keyed by a normalized [`ToolRequest`]. A frozen
//! [`ToolCache`] answers purely from stored entries; an unfrozen cache with a
//! [`Provider`] resolves misses once and records them.

mod cache;
mod provider;
mod request;

pub use cache::{CacheEntry, PopulationReport, Provenance, ToolCache};
pub use provider::{Provider, SyntheticProvider};
pub use request::{
    DistanceKind, PoiHit, TimeBucket, ToolFunction, ToolParams, ToolRequest, ToolResult, TravelMode,
};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ToolError {
    #[error("cache miss with no provider: {0}")]
    CacheMissNoProvider(String),
    #[error("invalid params: {0}")]
    InvalidParams(String),
    #[error("provider failure: {0}")]
    Provider(String),
    #[error("cache io: {0}")]
    Io(String),
}
