//! Core library for scoring text-to-image alignment: data records, keyword
//! coverage markup, model backends, automatic metrics, human-rating
//! aggregation, statistics and prompt-set construction.

pub mod backends;
pub mod coverage;
pub mod human;
pub mod metric;
pub mod promptset;
pub mod records;
pub mod stats;
pub mod templates;
