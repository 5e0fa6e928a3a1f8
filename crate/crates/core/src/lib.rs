//! Fairness evaluation for pedestrian object detection.
//!
//! Detector outputs are matched to attributed ground truth ([`matcher`]),
//! summarized into recall/precision and confidence metrics ([`metrics`]),
//! split by demographic and weather groups and compared for disparity
//! ([`fairness`]). [`corpus`] handles ingestion and curation, [`darkness`]
//! produces ambient-darkness sweeps and [`synthgen`] generates seeded
//! synthetic corpora. [`report`] ties the pipeline together for the CLI.

pub mod corpus;
pub mod darkness;
pub mod error;
pub mod fairness;
pub mod matcher;
pub mod metrics;
pub mod model;
pub mod report;
pub mod synthgen;

pub use error::{Error, ErrorKind, Result};
