//! Robust repeated-measures MANOVA and descriptive discriminant analysis.
//!
//! The crate covers the full workflow for multivariate repeated-measures
//! data observed in `g` groups at `t` time points on `p` variables:
//!
//! - [`dataset`]: ingestion of long/wide tables into the canonical
//!   subject-vector layout (time-major blocks of `p` variables).
//! - [`contrasts`]: Kronecker hypothesis matrices for group, time and
//!   interaction effects.
//! - [`mats`] and [`bootstrap`]: the modified ANOVA-type statistic and its
//!   parametric / wild bootstrap p-values.
//! - [`dda`]: two-group descriptive discriminant analysis (raw and
//!   standardized discriminant function coefficients).
//! - [`diagnostics`]: covariance homogeneity indices and Belsley
//!   collinearity diagnostics with a greedy removal workflow.
//! - [`sim`]: synthetic data generation and Monte-Carlo rejection rates.

pub mod bootstrap;
pub mod contrasts;
pub mod dataset;
pub mod dda;
pub mod diagnostics;
pub mod error;
pub mod linalg;
pub mod mats;
pub mod rng;
pub mod sim;

pub use bootstrap::{bootstrap_pvalue, manova_rm, BootstrapResult, EffectTest, Scheme};
pub use contrasts::{hypothesis_matrix, Effect, HypothesisMatrix};
pub use dataset::{LoadReport, RepeatedMeasuresDataset, Schema};
pub use dda::{dfc_table, DfcTable};
pub use diagnostics::{collinearity_report, homogeneity_report, suggest_removals};
pub use error::{Error, Result};
pub use mats::{estimate_moments, mats, MatsResult, MomentEstimates};
