//! Losses, point-cloud metrics, and gradient checking.

mod gradcheck;
mod kdtree;
mod losses;
mod pointcloud;

use serde::{Deserialize, Serialize};

pub use gradcheck::*;
pub use kdtree::*;
pub use losses::*;
pub use pointcloud::*;

/// One metric value as written by the command line tools.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub metric: String,
    /// `None` stands for an unbounded value such as PSNR of identical images.
    pub value: Option<f64>,
    pub params: serde_json::Value,
    pub seed: u64,
}

impl MetricReport {
    pub fn new(metric: &str, value: f64, params: serde_json::Value, seed: u64) -> Self {
        Self { metric: metric.into(), value: value.is_finite().then_some(value), params, seed }
    }
}
