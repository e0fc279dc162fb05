//! Two-group descriptive discriminant analysis.
//!
//! The raw discriminant function coefficients solve
//! `Σ̂_P λ = μ̂_1 − μ̂_2`, with `Σ̂_P` the degrees-of-freedom weighted pooled
//! covariance. Standardized coefficients multiply each raw coefficient by
//! the pooled within-group standard deviation of its component, which makes
//! them unit-free and comparable for ranking.
//!
//! The overall sign of λ follows the group order of the dataset and carries
//! no meaning by itself; only relative signs and magnitudes are interpretable.

use std::io::Write;

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::Serialize;

use crate::dataset::RepeatedMeasuresDataset;
use crate::error::{Error, Result};
use crate::linalg::symmetric_condition_number;
use crate::mats::mean_and_covariance;

/// Pooled covariances above this condition number are refused.
pub const MAX_CONDITION_NUMBER: f64 = 1e12;

/// Minimum ratio of total sample size to number of components before a
/// stability warning is emitted.
pub const MIN_SAMPLE_RATIO: f64 = 20.0;

/// `((n1−1) S1 + (n2−1) S2) / (n1 + n2 − 2)`.
pub fn pooled_covariance(s1: &DMatrix<f64>, s2: &DMatrix<f64>, n1: usize, n2: usize) -> Result<DMatrix<f64>> {
    if n1 < 2 || n2 < 2 {
        return Err(Error::InvalidArgument("pooled covariance needs n ≥ 2 per group".into()));
    }
    if s1.shape() != s2.shape() || !s1.is_square() {
        return Err(Error::InvalidArgument("covariance shapes differ".into()));
    }
    let w1 = (n1 - 1) as f64;
    let w2 = (n2 - 1) as f64;
    Ok((s1 * w1 + s2 * w2) / (w1 + w2))
}

/// Raw coefficients `λ = Σ̂_P⁻¹ (μ1 − μ2)`.
pub fn raw_dfc(sp: &DMatrix<f64>, mu1: &DVector<f64>, mu2: &DVector<f64>) -> Result<DVector<f64>> {
    if mu1.len() != sp.nrows() || mu2.len() != sp.nrows() {
        return Err(Error::InvalidArgument("mean vectors do not match the covariance size".into()));
    }
    let cond = symmetric_condition_number(sp);
    if !(cond <= MAX_CONDITION_NUMBER) {
        return Err(Error::IllConditioned(cond));
    }
    let delta = mu1 - mu2;
    let chol = Cholesky::new(sp.clone()).ok_or(Error::IllConditioned(cond))?;
    let lambda = chol.solve(&delta);
    let residual = (sp * &lambda - &delta).norm();
    if residual > 1e-8 * delta.norm().max(f64::MIN_POSITIVE) && delta.norm() > 0.0 {
        return Err(Error::IllConditioned(cond));
    }
    Ok(lambda)
}

/// `raw_s · sqrt(Σ̂_P[s, s])` for every component.
pub fn standardized_dfc(raw: &DVector<f64>, sp: &DMatrix<f64>) -> Result<DVector<f64>> {
    if raw.len() != sp.nrows() {
        return Err(Error::InvalidArgument("coefficient length does not match covariance".into()));
    }
    let mut out = DVector::zeros(raw.len());
    for s in 0..raw.len() {
        let var = sp[(s, s)];
        if !(var > 0.0) {
            return Err(Error::ConstantVariable {
                variable: format!("component {s}"),
            });
        }
        out[s] = raw[s] * var.sqrt();
    }
    Ok(out)
}

/// Discriminant scores `d_ij = λᵀ X_ij`, grouped like the dataset.
pub fn discriminant_scores(ds: &RepeatedMeasuresDataset, lambda: &DVector<f64>) -> Result<Vec<Vec<f64>>> {
    if lambda.len() != ds.pt() {
        return Err(Error::InvalidArgument(format!(
            "coefficient vector has length {}, expected p·t = {}",
            lambda.len(),
            ds.pt()
        )));
    }
    Ok((0..ds.g())
        .map(|i| {
            ds.group(i)
                .iter()
                .map(|x| x.iter().zip(lambda.iter()).map(|(a, b)| a * b).sum())
                .collect()
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DfcEntry {
    pub variable: String,
    pub time: String,
    /// `"VAR (TIME)"`
    pub label: String,
    pub raw: f64,
    pub pooled_sd: f64,
    pub standardized: f64,
    /// 1-based rank by absolute standardized value.
    pub rank: usize,
}

/// Coefficients for every component, in canonical order, plus the ranking.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DfcTable {
    pub entries: Vec<DfcEntry>,
    /// Entry indices ordered by decreasing `|standardized|`; ties keep canonical order.
    pub ranking: Vec<usize>,
    /// `(first, second)` group labels; λ is proportional to `μ̂_first − μ̂_second`.
    pub group_order: (String, String),
    /// `N / (p·t)`.
    pub sample_ratio: f64,
    pub warnings: Vec<String>,
}

impl DfcTable {
    /// Entries in rank order.
    pub fn ranked(&self) -> impl Iterator<Item = &DfcEntry> {
        self.ranking.iter().map(|&i| &self.entries[i])
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["variable", "time", "raw", "pooled_sd", "standardized", "rank"])?;
        for e in self.ranked() {
            w.write_record([
                e.variable.clone(),
                e.time.clone(),
                e.raw.to_string(),
                e.pooled_sd.to_string(),
                e.standardized.to_string(),
                e.rank.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Stable ranking by decreasing absolute value.
pub fn rank_by_magnitude(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].abs().total_cmp(&values[a].abs()));
    order
}

/// Full pipeline: moments, pooled covariance, raw and standardized DFCs, ranking.
pub fn dfc_table(ds: &RepeatedMeasuresDataset) -> Result<DfcTable> {
    if ds.g() != 2 {
        return Err(Error::NotTwoGroups(ds.g()));
    }
    let (mu1, s1) = mean_and_covariance(ds.group(0));
    let (mu2, s2) = mean_and_covariance(ds.group(1));
    let sizes = ds.group_sizes();
    let sp = pooled_covariance(&s1, &s2, sizes[0], sizes[1])?;

    let labels = ds.component_labels();
    for (s, label) in labels.iter().enumerate() {
        if !(sp[(s, s)] > 0.0) {
            return Err(Error::ConstantVariable {
                variable: label.clone(),
            });
        }
    }
    let raw = raw_dfc(&sp, &mu1, &mu2)?;
    let std = standardized_dfc(&raw, &sp)?;

    let sample_ratio = ds.n_total() as f64 / ds.pt() as f64;
    let mut warnings = Vec::new();
    if sample_ratio < MIN_SAMPLE_RATIO {
        warnings.push(format!(
            "sample size to variable ratio is {sample_ratio:.1} (< {MIN_SAMPLE_RATIO}:1); \
             coefficient estimates may be unstable"
        ));
    }

    let ranking = rank_by_magnitude(std.as_slice());
    let mut ranks = vec![0; ranking.len()];
    for (r, &i) in ranking.iter().enumerate() {
        ranks[i] = r + 1;
    }
    let p = ds.p();
    let entries = (0..ds.pt())
        .map(|c| DfcEntry {
            variable: ds.variable_labels()[c % p].clone(),
            time: ds.time_labels()[c / p].clone(),
            label: labels[c].clone(),
            raw: raw[c],
            pooled_sd: sp[(c, c)].sqrt(),
            standardized: std[c],
            rank: ranks[c],
        })
        .collect();
    Ok(DfcTable {
        entries,
        ranking,
        group_order: (ds.group_labels()[0].clone(), ds.group_labels()[1].clone()),
        sample_ratio,
        warnings,
    })
}

/// One table per time point, each from a single-time slice of the data.
pub fn dfc_tables_per_time(ds: &RepeatedMeasuresDataset) -> Result<Vec<DfcTable>> {
    (0..ds.t()).map(|k| dfc_table(&ds.time_slice(k)?)).collect()
}
