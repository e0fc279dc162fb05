//! Bootstrap calibration of the MATS statistic.
//!
//! The p-value is the share of bootstrap statistics at least as large as
//! the observed one, `p = #{b : Q_N ≤ Q*_b} / B`. Ties count toward `p`.
//!
//! Two resampling schemes are available:
//!
//! - **parametric** (`paramBS`): for each group draw `n_i` vectors from
//!   `N(0, Σ̂_i)`, using the symmetric square root of `Σ̂_i` with negative
//!   eigenvalues clipped at zero;
//! - **wild** (`wildBS`): multiply each group-centred subject vector by an
//!   independent Rademacher sign.
//!
//! Replicate `b` draws from its own random stream keyed by `(seed, b)`, so
//! results do not depend on thread count or scheduling. When several
//! hypotheses are tested together they share each bootstrap sample.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::contrasts::{hypothesis_matrix, Effect, HypothesisMatrix};
use crate::dataset::RepeatedMeasuresDataset;
use crate::error::{Error, Result};
use crate::linalg::{psd_sqrt, DEFAULT_PINV_RTOL};
use crate::mats::{diagonal_moments, estimate_moments, mats, mats_statistic};
use crate::rng::{substream, StreamRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Scheme {
    #[serde(rename = "paramBS")]
    Parametric,
    #[serde(rename = "wildBS")]
    Wild,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::Parametric => "paramBS",
            Scheme::Wild => "wildBS",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paramBS" | "parametric" => Ok(Scheme::Parametric),
            "wildBS" | "wild" => Ok(Scheme::Wild),
            _ => Err(Error::InvalidArgument(format!(
                "unknown resampling scheme {s:?} (expected paramBS or wildBS)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BootstrapOptions {
    pub iterations: usize,
    pub scheme: Scheme,
    pub seed: u64,
    /// Relative eigenvalue cutoff for the pseudoinverse.
    pub rtol: f64,
}

impl BootstrapOptions {
    pub fn new(iterations: usize, scheme: Scheme, seed: u64) -> Self {
        BootstrapOptions {
            iterations,
            scheme,
            seed,
            rtol: DEFAULT_PINV_RTOL,
        }
    }
}

/// Five-number summary of the replicate distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReplicateSummary {
    pub min: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub max: f64,
}

impl ReplicateSummary {
    /// Quantiles by linear interpolation between order statistics.
    pub fn from_values(values: &[f64]) -> Self {
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let q = |prob: f64| -> f64 {
            if v.is_empty() {
                return f64::NAN;
            }
            let h = (v.len() - 1) as f64 * prob;
            let lo = h.floor() as usize;
            let hi = h.ceil() as usize;
            v[lo] + (h - lo as f64) * (v[hi] - v[lo])
        };
        ReplicateSummary {
            min: q(0.0),
            q25: q(0.25),
            median: q(0.5),
            q75: q(0.75),
            max: q(1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapResult {
    pub effect: Effect,
    pub statistic: f64,
    pub replicates: Vec<f64>,
    pub p_value: f64,
    pub scheme: Scheme,
    pub seed: u64,
    pub iterations: usize,
    pub pseudoinverse_rank: usize,
}

impl BootstrapResult {
    pub fn summary(&self) -> ReplicateSummary {
        ReplicateSummary::from_values(&self.replicates)
    }
}

/// Outcome for one effect of a MANOVA-RM run.
#[derive(Debug, Clone, PartialEq)]
pub enum EffectTest {
    Tested(BootstrapResult),
    NotApplicable { effect: Effect, reason: String },
}

impl EffectTest {
    pub fn effect(&self) -> Effect {
        match self {
            EffectTest::Tested(r) => r.effect,
            EffectTest::NotApplicable { effect, .. } => *effect,
        }
    }

    pub fn result(&self) -> Option<&BootstrapResult> {
        match self {
            EffectTest::Tested(r) => Some(r),
            EffectTest::NotApplicable { .. } => None,
        }
    }
}

/// `#{b : statistic ≤ replicate_b} / B`.
pub fn p_value(statistic: f64, replicates: &[f64]) -> Result<f64> {
    if replicates.is_empty() {
        return Err(Error::InvalidArgument("bootstrap needs B ≥ 1 replicates".into()));
    }
    let hits = replicates.iter().filter(|&&q| statistic <= q).count();
    Ok(hits as f64 / replicates.len() as f64)
}

enum Resampler {
    Parametric { factors: Vec<DMatrix<f64>> },
    Wild { residuals: Vec<Vec<DVector<f64>>> },
}

impl Resampler {
    fn new(ds: &RepeatedMeasuresDataset, scheme: Scheme) -> Self {
        match scheme {
            Scheme::Parametric => {
                let moments = estimate_moments(ds);
                Resampler::Parametric {
                    factors: moments.group_covariances.iter().map(psd_sqrt).collect(),
                }
            }
            Scheme::Wild => {
                let moments = estimate_moments(ds);
                let residuals = (0..ds.g())
                    .map(|i| {
                        let mean = moments.group_mean(i);
                        ds.group(i)
                            .iter()
                            .map(|x| DVector::from_column_slice(x) - &mean)
                            .collect()
                    })
                    .collect();
                Resampler::Wild { residuals }
            }
        }
    }

    fn draw(&self, sizes: &[usize], rng: &mut StreamRng) -> Vec<Vec<Vec<f64>>> {
        match self {
            Resampler::Parametric { factors } => factors
                .iter()
                .zip(sizes)
                .map(|(l, &n)| {
                    let d = l.nrows();
                    (0..n)
                        .map(|_| {
                            let z = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
                            (l * z).as_slice().to_vec()
                        })
                        .collect()
                })
                .collect(),
            Resampler::Wild { residuals } => residuals
                .iter()
                .map(|group| {
                    group
                        .iter()
                        .map(|r| {
                            let w = if rng.random::<bool>() { 1.0 } else { -1.0 };
                            r.iter().map(|v| w * v).collect()
                        })
                        .collect()
                })
                .collect(),
        }
    }
}

/// Bootstraps several hypotheses at once, sharing every resampled dataset.
pub fn bootstrap_contrasts(
    ds: &RepeatedMeasuresDataset,
    hypotheses: &[HypothesisMatrix],
    opts: &BootstrapOptions,
) -> Result<Vec<BootstrapResult>> {
    if opts.iterations == 0 {
        return Err(Error::InvalidArgument("bootstrap needs B ≥ 1 iterations".into()));
    }
    let moments = estimate_moments(ds);
    let observed = hypotheses
        .iter()
        .map(|h| mats(&moments, h, opts.rtol))
        .collect::<Result<Vec<_>>>()?;

    let resampler = Resampler::new(ds, opts.scheme);
    let sizes = ds.group_sizes();
    let n_total = ds.n_total();
    let per_replicate: Vec<Vec<f64>> = (0..opts.iterations)
        .into_par_iter()
        .map(|b| {
            let mut rng = substream(opts.seed, b as u64);
            let sample = resampler.draw(&sizes, &mut rng);
            let (mean, diag) = diagonal_moments(&sample);
            hypotheses
                .iter()
                .map(|h| mats_statistic(&mean, &diag, n_total, h, opts.rtol).map(|r| r.statistic))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;

    observed
        .into_iter()
        .enumerate()
        .map(|(h, obs)| {
            let replicates: Vec<f64> = per_replicate.iter().map(|r| r[h]).collect();
            Ok(BootstrapResult {
                effect: obs.effect,
                statistic: obs.statistic,
                p_value: p_value(obs.statistic, &replicates)?,
                replicates,
                scheme: opts.scheme,
                seed: opts.seed,
                iterations: opts.iterations,
                pseudoinverse_rank: obs.pseudoinverse_rank,
            })
        })
        .collect()
}

/// Bootstrap p-value for a single standard effect.
pub fn bootstrap_pvalue(
    ds: &RepeatedMeasuresDataset,
    effect: Effect,
    opts: &BootstrapOptions,
) -> Result<BootstrapResult> {
    let t = hypothesis_matrix(effect, ds.g(), ds.t(), ds.p())?;
    Ok(bootstrap_contrasts(ds, std::slice::from_ref(&t), opts)?.remove(0))
}

/// Group, time and interaction tests from one shared resampling loop.
///
/// With a single time point the time and interaction effects are reported
/// as not applicable.
pub fn manova_rm(ds: &RepeatedMeasuresDataset, opts: &BootstrapOptions) -> Result<Vec<EffectTest>> {
    let mut hypotheses = Vec::new();
    let mut skipped = Vec::new();
    for effect in Effect::STANDARD {
        match hypothesis_matrix(effect, ds.g(), ds.t(), ds.p()) {
            Ok(t) => hypotheses.push(t),
            Err(e @ Error::TimeContrastUndefined) => skipped.push((effect, e.to_string())),
            Err(e) => return Err(e),
        }
    }
    let mut results = bootstrap_contrasts(ds, &hypotheses, opts)?.into_iter();
    Ok(Effect::STANDARD
        .iter()
        .map(|&effect| match skipped.iter().find(|(e, _)| *e == effect) {
            Some((_, reason)) => EffectTest::NotApplicable {
                effect,
                reason: reason.clone(),
            },
            None => EffectTest::Tested(results.next().expect("one result per tested effect")),
        })
        .collect())
}
