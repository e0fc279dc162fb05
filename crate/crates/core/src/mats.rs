//! Moment estimation and the modified ANOVA-type statistic (MATS).
//!
//! ```text
//! Q_N = N · (T X̄)ᵀ (T D̂_N T)⁺ (T X̄)
//! ```
//!
//! where `X̄` stacks the group-wise mean vectors and `D̂_N` is the diagonal
//! matrix of `N/n_i · σ̂²_iks`. Only the diagonal of the covariance enters,
//! so the statistic tolerates singular covariances and is invariant under
//! per-variable rescaling.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::contrasts::{Effect, HypothesisMatrix};
use crate::dataset::RepeatedMeasuresDataset;
use crate::error::{Error, Result};
use crate::linalg::{pseudoinverse, symmetric_rank};

/// Group means, covariances and the MATS variance diagonal.
#[derive(Debug, Clone)]
pub struct MomentEstimates {
    /// Stacked group means, component `(i·t + k)·p + s`.
    pub mean_vector: DVector<f64>,
    /// `Σ̂_i` with divisor `n_i − 1`.
    pub group_covariances: Vec<DMatrix<f64>>,
    /// Diagonal of `D̂_N`: `N/n_i · σ̂²_iks`.
    pub variance_diagonal: DVector<f64>,
    pub group_sizes: Vec<usize>,
    pub n_total: usize,
    /// Components of `D̂_N` that are exactly zero (variable constant within a group).
    pub zero_variance: Vec<usize>,
}

impl MomentEstimates {
    /// Mean vector of group `i` (length `p·t`).
    pub fn group_mean(&self, i: usize) -> DVector<f64> {
        let pt = self.mean_vector.len() / self.group_sizes.len();
        self.mean_vector.rows(i * pt, pt).into_owned()
    }
}

/// Per-group mean vector and `n − 1` covariance.
pub(crate) fn mean_and_covariance(rows: &[Vec<f64>]) -> (DVector<f64>, DMatrix<f64>) {
    let n = rows.len();
    let d = rows[0].len();
    let mut mean = DVector::zeros(d);
    for x in rows {
        for (m, v) in mean.iter_mut().zip(x) {
            *m += v;
        }
    }
    mean /= n as f64;
    let mut cov = DMatrix::zeros(d, d);
    for x in rows {
        let c = DVector::from_iterator(d, x.iter().zip(mean.iter()).map(|(v, m)| v - m));
        cov.ger(1.0, &c, &c, 1.0);
    }
    cov /= (n - 1) as f64;
    (mean, cov)
}

/// Group means and per-component variances only; enough for the statistic.
fn mean_and_variance(rows: &[Vec<f64>], mean: &mut [f64], var: &mut [f64]) {
    let n = rows.len() as f64;
    mean.iter_mut().for_each(|m| *m = 0.0);
    var.iter_mut().for_each(|v| *v = 0.0);
    for x in rows {
        for (m, v) in mean.iter_mut().zip(x) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    for x in rows {
        for ((s, v), m) in var.iter_mut().zip(x).zip(mean.iter()) {
            *s += (v - m) * (v - m);
        }
    }
    var.iter_mut().for_each(|s| *s /= n - 1.0);
}

/// Stacked means and `D̂_N` diagonal straight from grouped subject vectors.
pub(crate) fn diagonal_moments(groups: &[Vec<Vec<f64>>]) -> (DVector<f64>, DVector<f64>) {
    let pt = groups[0][0].len();
    let g = groups.len();
    let n_total: usize = groups.iter().map(Vec::len).sum();
    let mut mean = DVector::zeros(g * pt);
    let mut diag = DVector::zeros(g * pt);
    for (i, rows) in groups.iter().enumerate() {
        let m = &mut mean.as_mut_slice()[i * pt..(i + 1) * pt];
        let d = &mut diag.as_mut_slice()[i * pt..(i + 1) * pt];
        mean_and_variance(rows, m, d);
        let w = n_total as f64 / rows.len() as f64;
        d.iter_mut().for_each(|v| *v *= w);
    }
    (mean, diag)
}

/// Means, covariances and `D̂_N` for a dataset.
pub fn estimate_moments(ds: &RepeatedMeasuresDataset) -> MomentEstimates {
    let pt = ds.pt();
    let g = ds.g();
    let n_total = ds.n_total();
    let mut mean_vector = DVector::zeros(g * pt);
    let mut variance_diagonal = DVector::zeros(g * pt);
    let mut group_covariances = Vec::with_capacity(g);
    for i in 0..g {
        let rows = ds.group(i);
        let (mean, cov) = mean_and_covariance(rows);
        let w = n_total as f64 / rows.len() as f64;
        for c in 0..pt {
            mean_vector[i * pt + c] = mean[c];
            variance_diagonal[i * pt + c] = w * cov[(c, c)];
        }
        group_covariances.push(cov);
    }
    let zero_variance = variance_diagonal
        .iter()
        .enumerate()
        .filter(|(_, &v)| v == 0.0)
        .map(|(i, _)| i)
        .collect();
    MomentEstimates {
        mean_vector,
        group_covariances,
        variance_diagonal,
        group_sizes: ds.group_sizes(),
        n_total,
        zero_variance,
    }
}

/// Value of the statistic for one hypothesis.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatsResult {
    pub effect: Effect,
    pub statistic: f64,
    /// Numerical rank of `T D̂_N T`.
    pub pseudoinverse_rank: usize,
    /// Set when `D̂_N` has no mass on the range of `T`; the statistic is then 0.
    pub no_variance_on_contrast: bool,
}

pub(crate) fn mats_statistic(
    mean: &DVector<f64>,
    diag: &DVector<f64>,
    n_total: usize,
    t: &HypothesisMatrix,
    rtol: f64,
) -> Result<MatsResult> {
    let m = &t.matrix;
    if m.nrows() != mean.len() {
        return Err(Error::InvalidArgument(format!(
            "hypothesis matrix is {}×{} but the mean vector has length {}",
            m.nrows(),
            m.ncols(),
            mean.len()
        )));
    }
    // T D T with D diagonal
    let mut td = m.clone();
    for (c, d) in diag.iter().enumerate() {
        td.column_mut(c).scale_mut(*d);
    }
    let tdt = &td * m;
    let rank = symmetric_rank(&tdt, rtol);
    if rank == 0 {
        return Ok(MatsResult {
            effect: t.effect,
            statistic: 0.0,
            pseudoinverse_rank: 0,
            no_variance_on_contrast: true,
        });
    }
    let pinv = pseudoinverse(&tdt, rtol)?;
    let tx = m * mean;
    let q = n_total as f64 * tx.dot(&(&pinv * &tx));
    Ok(MatsResult {
        effect: t.effect,
        statistic: q.max(0.0),
        pseudoinverse_rank: rank,
        no_variance_on_contrast: false,
    })
}

/// `Q_N` for the given hypothesis matrix.
pub fn mats(moments: &MomentEstimates, t: &HypothesisMatrix, rtol: f64) -> Result<MatsResult> {
    mats_statistic(
        &moments.mean_vector,
        &moments.variance_diagonal,
        moments.n_total,
        t,
        rtol,
    )
}
