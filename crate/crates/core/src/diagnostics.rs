//! Assumption screening before discriminant analysis.
//!
//! Homogeneity of covariances is summarised with traces, log-determinants
//! and log-eigenvalue spectra of each group covariance and of the pooled
//! covariance. Collinearity uses Belsley's scaled condition indices and
//! variance decomposition proportions (VDPs) on the unit-norm design of all
//! `p·t` outcome columns, optionally with an intercept column.

use std::io::Write;

use nalgebra::{DMatrix, SVD};
use serde::Serialize;

use crate::dataset::RepeatedMeasuresDataset;
use crate::error::{Error, Result};
use crate::linalg::sorted_symmetric_eigen;
use crate::mats::mean_and_covariance;

pub const INTERCEPT: &str = "(Intercept)";

/// Trace, log-determinant and log-spectrum of one covariance matrix.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CovarianceIndices {
    pub label: String,
    pub trace: f64,
    /// Sum of the log-eigenvalues; `None` when the matrix is singular.
    pub log_determinant: Option<f64>,
    /// Descending. Non-positive eigenvalues appear as `-inf` (`null` in JSON).
    pub log_eigenvalues: Vec<f64>,
}

impl CovarianceIndices {
    pub fn from_matrix(label: &str, cov: &DMatrix<f64>) -> Self {
        let (values, _) = sorted_symmetric_eigen(cov);
        let log_eigenvalues: Vec<f64> = values
            .iter()
            .map(|&v| if v > 0.0 { v.ln() } else { f64::NEG_INFINITY })
            .collect();
        let log_determinant = if log_eigenvalues.iter().all(|v| v.is_finite()) {
            Some(log_eigenvalues.iter().sum())
        } else {
            None
        };
        CovarianceIndices {
            label: label.to_string(),
            trace: cov.trace(),
            log_determinant,
            log_eigenvalues,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HomogeneityReport {
    pub groups: Vec<CovarianceIndices>,
    pub pooled: CovarianceIndices,
}

/// Degrees-of-freedom weighted pooled covariance over all groups.
pub fn pooled_group_covariance(ds: &RepeatedMeasuresDataset) -> DMatrix<f64> {
    let pt = ds.pt();
    let mut acc = DMatrix::zeros(pt, pt);
    for i in 0..ds.g() {
        let (_, cov) = mean_and_covariance(ds.group(i));
        acc += cov * (ds.group(i).len() - 1) as f64;
    }
    acc / (ds.n_total() - ds.g()) as f64
}

pub fn homogeneity_report(ds: &RepeatedMeasuresDataset) -> Result<HomogeneityReport> {
    if ds.g() < 2 {
        return Err(Error::InvalidArgument("homogeneity needs at least 2 groups".into()));
    }
    let groups = (0..ds.g())
        .map(|i| {
            let (_, cov) = mean_and_covariance(ds.group(i));
            CovarianceIndices::from_matrix(&ds.group_labels()[i], &cov)
        })
        .collect();
    Ok(HomogeneityReport {
        groups,
        pooled: CovarianceIndices::from_matrix("pooled", &pooled_group_covariance(ds)),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScreeRow {
    /// 1-based eigenvalue index.
    pub index: usize,
    pub log_eigenvalue: f64,
    pub series: String,
}

/// Long-format scree table: every group series followed by the pooled one.
pub fn scree_data(report: &HomogeneityReport) -> Vec<ScreeRow> {
    report
        .groups
        .iter()
        .chain(std::iter::once(&report.pooled))
        .flat_map(|c| {
            c.log_eigenvalues.iter().enumerate().map(move |(i, &v)| ScreeRow {
                index: i + 1,
                log_eigenvalue: v,
                series: c.label.clone(),
            })
        })
        .collect()
}

pub fn write_scree_csv<W: Write>(rows: &[ScreeRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["index", "log_eigenvalue", "series"])?;
    for r in rows {
        w.write_record([r.index.to_string(), r.log_eigenvalue.to_string(), r.series.clone()])?;
    }
    w.flush()?;
    Ok(())
}

/// 2×2 covariance blocks for every pair of components, per group and pooled.
/// These are the data behind pairwise covariance-ellipse plots.
pub fn write_covariance_blocks_csv<W: Write>(ds: &RepeatedMeasuresDataset, writer: W) -> Result<()> {
    let labels = ds.component_labels();
    let mut series: Vec<(String, DMatrix<f64>)> = (0..ds.g())
        .map(|i| (ds.group_labels()[i].clone(), mean_and_covariance(ds.group(i)).1))
        .collect();
    series.push(("pooled".into(), pooled_group_covariance(ds)));
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["series", "a", "b", "var_a", "cov_ab", "var_b"])?;
    for (name, cov) in &series {
        for a in 0..labels.len() {
            for b in (a + 1)..labels.len() {
                w.write_record([
                    name.clone(),
                    labels[a].clone(),
                    labels[b].clone(),
                    cov[(a, a)].to_string(),
                    cov[(a, b)].to_string(),
                    cov[(b, b)].to_string(),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Thresholds {
    pub condition_index: f64,
    pub vdp: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            condition_index: 30.0,
            vdp: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CollinearityFlag {
    /// Row of the report (index into `condition_indices`).
    pub row: usize,
    pub condition_index: f64,
    /// Non-intercept predictors with a VDP above the threshold on this row.
    pub implicated: Vec<String>,
    pub exact_dependency: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CollinearityReport {
    /// Design column labels; the intercept (when present) comes first.
    pub predictors: Vec<String>,
    /// Variable behind each predictor column, `None` for the intercept.
    pub predictor_variables: Vec<Option<String>>,
    /// `η_max / η_j`, ascending (so the first entry is 1). Exact
    /// dependencies show as `+inf` (`null` in JSON).
    pub condition_indices: Vec<f64>,
    /// `vdp[j][k]`: share of predictor `k`'s variance tied to index `j`.
    pub vdp: Vec<Vec<f64>>,
    pub flags: Vec<CollinearityFlag>,
    pub thresholds: Thresholds,
}

impl CollinearityReport {
    pub fn is_flagged(&self) -> bool {
        !self.flags.is_empty()
    }

    /// Table with one row per condition index; VDP cells at or below
    /// `display_threshold` are printed as `"."`.
    pub fn write_csv<W: Write>(&self, writer: W, display_threshold: f64) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["condition_index".to_string()];
        header.extend(self.predictors.iter().cloned());
        header.push("flagged".into());
        w.write_record(&header)?;
        for (j, ci) in self.condition_indices.iter().enumerate() {
            let mut row = vec![ci.to_string()];
            row.extend(self.vdp[j].iter().map(|&v| {
                if v > display_threshold {
                    v.to_string()
                } else {
                    ".".to_string()
                }
            }));
            let flagged = self.flags.iter().any(|f| f.row == j);
            row.push(if flagged { "yes" } else { "" }.to_string());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Belsley diagnostics for an explicit design (rows = observations).
///
/// `variables[k]` names the variable behind column `k` so that flags can be
/// traced back; the intercept column is added here when requested.
pub fn collinearity_from_design(
    design: &DMatrix<f64>,
    predictors: &[String],
    variables: &[Option<String>],
    include_intercept: bool,
    thresholds: Thresholds,
) -> Result<CollinearityReport> {
    if predictors.len() != design.ncols() || variables.len() != design.ncols() {
        return Err(Error::InvalidArgument("one name per design column is required".into()));
    }
    let mut x = design.clone();
    let mut names = predictors.to_vec();
    let mut vars = variables.to_vec();
    if include_intercept {
        x = x.insert_column(0, 1.0);
        names.insert(0, INTERCEPT.to_string());
        vars.insert(0, None);
    }
    let (n, m) = x.shape();
    if n <= m {
        return Err(Error::Data(format!(
            "collinearity diagnostics need more observations ({n}) than design columns ({m})"
        )));
    }
    for (k, mut col) in x.column_iter_mut().enumerate() {
        let norm = col.norm();
        if norm == 0.0 {
            return Err(Error::Data(format!("design column {:?} is identically zero", names[k])));
        }
        col /= norm;
    }

    let svd = SVD::new(x, false, true);
    let v_t = svd.v_t.expect("right singular vectors requested");
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let eta: Vec<f64> = order.iter().map(|&j| svd.singular_values[j]).collect();
    // v[k][j]: loading of predictor k on singular direction j
    let v: Vec<Vec<f64>> = (0..m)
        .map(|k| order.iter().map(|&j| v_t[(j, k)]).collect())
        .collect();

    let zero_tol = eta[0] * m as f64 * f64::EPSILON;
    let exact: Vec<bool> = eta.iter().map(|&e| e <= zero_tol).collect();
    let condition_indices: Vec<f64> = eta
        .iter()
        .zip(&exact)
        .map(|(&e, &z)| if z { f64::INFINITY } else { eta[0] / e })
        .collect();

    let mut vdp = vec![vec![0.0; m]; m];
    for k in 0..m {
        // a zero singular value dominates every finite term in the limit
        let exact_mass: f64 = (0..m).filter(|&j| exact[j]).map(|j| v[k][j].powi(2)).sum();
        if exact_mass > 0.0 {
            for j in (0..m).filter(|&j| exact[j]) {
                vdp[j][k] = v[k][j].powi(2) / exact_mass;
            }
        } else {
            let phi: Vec<f64> = (0..m)
                .map(|j| if exact[j] { 0.0 } else { (v[k][j] / eta[j]).powi(2) })
                .collect();
            let total: f64 = phi.iter().sum();
            for j in 0..m {
                vdp[j][k] = phi[j] / total;
            }
        }
    }

    let mut flags = Vec::new();
    for j in 0..m {
        if !(condition_indices[j] > thresholds.condition_index) {
            continue;
        }
        let implicated: Vec<String> = (0..m)
            .filter(|&k| vars[k].is_some() && vdp[j][k] > thresholds.vdp)
            .map(|k| names[k].clone())
            .collect();
        if implicated.len() >= 2 || exact[j] {
            flags.push(CollinearityFlag {
                row: j,
                condition_index: condition_indices[j],
                implicated,
                exact_dependency: exact[j],
            });
        }
    }

    Ok(CollinearityReport {
        predictors: names,
        predictor_variables: vars,
        condition_indices,
        vdp,
        flags,
        thresholds,
    })
}

/// Belsley diagnostics on the pooled `N × p·t` design of outcome columns.
pub fn collinearity_report(
    ds: &RepeatedMeasuresDataset,
    include_intercept: bool,
    thresholds: Thresholds,
) -> Result<CollinearityReport> {
    let rows: Vec<&Vec<f64>> = (0..ds.g()).flat_map(|i| ds.group(i).iter()).collect();
    let design = DMatrix::from_fn(rows.len(), ds.pt(), |r, c| rows[r][c]);
    let p = ds.p();
    let variables: Vec<Option<String>> = (0..ds.pt())
        .map(|c| Some(ds.variable_labels()[c % p].clone()))
        .collect();
    collinearity_from_design(&design, &ds.component_labels(), &variables, include_intercept, thresholds)
}

#[derive(Debug, Clone)]
pub struct RemovalPlan {
    /// Variables in the order they were dropped.
    pub removed: Vec<String>,
    pub dataset: RepeatedMeasuresDataset,
    pub report: CollinearityReport,
}

/// Greedy collinearity removal: repeatedly drop (at every time point) the
/// unprotected implicated variable with the largest summed VDP on flagged
/// rows, then recompute, until no flags remain.
pub fn suggest_removals(
    report: &CollinearityReport,
    ds: &RepeatedMeasuresDataset,
    protected: &[String],
    include_intercept: bool,
) -> Result<RemovalPlan> {
    for name in protected {
        if !ds.variable_labels().contains(name) {
            return Err(Error::InvalidArgument(format!("protected variable {name:?} not in dataset")));
        }
    }
    let thresholds = report.thresholds;
    let mut current = ds.clone();
    let mut report = report.clone();
    let mut removed = Vec::new();
    while report.is_flagged() {
        let mut scores: Vec<(String, f64)> = current
            .variable_labels()
            .iter()
            .map(|v| (v.clone(), 0.0))
            .collect();
        let mut implicated: Vec<String> = Vec::new();
        for flag in &report.flags {
            for (k, var) in report.predictor_variables.iter().enumerate() {
                let Some(var) = var else { continue };
                let slot = scores.iter_mut().find(|(v, _)| v == var).expect("known variable");
                slot.1 += report.vdp[flag.row][k];
                if report.vdp[flag.row][k] > thresholds.vdp && !implicated.contains(var) {
                    implicated.push(var.clone());
                }
            }
        }
        let choice = scores
            .iter()
            .filter(|(v, _)| implicated.contains(v) && !protected.contains(v))
            .fold(None::<&(String, f64)>, |best, cand| match best {
                Some(b) if b.1 >= cand.1 => Some(b),
                _ => Some(cand),
            });
        let Some((victim, _)) = choice else {
            return Err(Error::AllImplicatedProtected { implicated, removed });
        };
        current = current.drop_variable(victim)?;
        removed.push(victim.clone());
        report = collinearity_report(&current, include_intercept, thresholds)?;
    }
    Ok(RemovalPlan {
        removed,
        dataset: current,
        report,
    })
}
