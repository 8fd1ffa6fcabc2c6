//! Metadata-driven dataset catalog and fusion engine.
//!
//! The pipeline runs in four steps over line-delimited metadata files:
//! [`harmonize`] maps free-text fields onto controlled vocabularies and
//! deduplicates the corpus into a [`harmonize::CatalogManifest`]; [`query`]
//! selects datasets with declarative recipes or facets; [`fusion`] groups a
//! selection into a blueprint with per-group summaries; [`index`] writes the
//! manifest, audit tables and statistics.

pub mod cli;
pub mod fusion;
pub mod harmonize;
pub mod index;
pub mod query;
pub mod schema;
pub mod vocab;
