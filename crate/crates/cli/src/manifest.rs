use std::path::PathBuf;

use serde::Serialize;

use rmdda::diagnostics::Thresholds;
use rmdda::Schema;

use crate::{Format, Resampling};

/// Everything needed to re-run a command and get identical artifacts.
///
/// Thread count is deliberately absent: it cannot change any result.
#[derive(Debug, Default, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub subcommand: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub format: Option<Format>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub schema: Option<Schema>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scenario: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iter: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reps: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub resampling: Option<Resampling>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rtol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub thresholds: Option<Thresholds>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub include_intercept: Option<bool>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub protected: Vec<String>,
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    pub per_timepoint: bool,
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    pub drop_collinear: bool,
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    pub suggest_removals: bool,
    pub output_dir: PathBuf,
}

impl RunManifest {
    pub fn new(subcommand: &'static str, output_dir: PathBuf) -> Self {
        RunManifest {
            tool: "rmdda",
            version: env!("CARGO_PKG_VERSION"),
            subcommand,
            output_dir,
            ..Default::default()
        }
    }
}
