//! Synthetic repeated-measures data and Monte-Carlo rejection rates.
//!
//! Subjects follow `X_ij = μ_i + L_i z_ij`, where `L_i` is the symmetric
//! square root of `Σ_i` and `z_ij` has independent standardized components
//! (mean 0, variance 1) from the chosen noise family.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore};
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bootstrap::{manova_rm, BootstrapOptions, EffectTest};
use crate::contrasts::{kronecker, Effect};
use crate::dataset::RepeatedMeasuresDataset;
use crate::error::{Error, Result};
use crate::linalg::checked_psd_sqrt;
use crate::rng::substream;

/// Two-sided 99% standard-normal quantile.
const Z_99: f64 = 2.575_829_303_548_901;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseFamily {
    #[default]
    Normal,
    /// `(exp(Z) − e^{1/2}) / sqrt(e(e − 1))`: right-skewed, mean 0, variance 1.
    StandardizedLognormal,
}

impl NoiseFamily {
    fn draw<R: Rng + ?Sized>(self, rng: &mut R) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        match self {
            NoiseFamily::Normal => z,
            NoiseFamily::StandardizedLognormal => {
                let e = std::f64::consts::E;
                (z.exp() - e.sqrt()) / (e * (e - 1.0)).sqrt()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CovarianceSpec {
    Identity,
    /// Full `p·t × p·t` matrix, row by row, in canonical order.
    Explicit { matrix: Vec<Vec<f64>> },
    /// `variance · ((1 − ρ) I + ρ J)` over all `p·t` components.
    CompoundSymmetry { variance: f64, rho: f64 },
    /// `variance · AR1(time_rho) ⊗ Exch(variable_rho)`.
    Ar1Exchangeable {
        variance: f64,
        time_rho: f64,
        variable_rho: f64,
    },
}

impl CovarianceSpec {
    pub fn build(&self, t: usize, p: usize) -> Result<DMatrix<f64>> {
        let d = t * p;
        match self {
            CovarianceSpec::Identity => Ok(DMatrix::identity(d, d)),
            CovarianceSpec::Explicit { matrix } => {
                if matrix.len() != d || matrix.iter().any(|r| r.len() != d) {
                    return Err(Error::InvalidArgument(format!(
                        "explicit covariance must be {d}×{d}"
                    )));
                }
                Ok(DMatrix::from_fn(d, d, |r, c| matrix[r][c]))
            }
            CovarianceSpec::CompoundSymmetry { variance, rho } => {
                Ok(DMatrix::from_fn(d, d, |r, c| if r == c { *variance } else { variance * rho }))
            }
            CovarianceSpec::Ar1Exchangeable {
                variance,
                time_rho,
                variable_rho,
            } => {
                let time = DMatrix::from_fn(t, t, |a, b| time_rho.powi((a as i32 - b as i32).abs()));
                let vars = DMatrix::from_fn(p, p, |a, b| if a == b { 1.0 } else { *variable_rho });
                Ok(kronecker(&time, &vars) * *variance)
            }
        }
    }
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSpec {
    #[serde(default)]
    pub label: Option<String>,
    pub n: usize,
    /// Length `p·t`; zero when omitted.
    #[serde(default)]
    pub mean: Option<Vec<f64>>,
    pub covariance: CovarianceSpec,
    /// Multiplies the covariance (heteroscedastic designs).
    #[serde(default = "one")]
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub t: usize,
    pub p: usize,
    pub groups: Vec<GroupSpec>,
    #[serde(default)]
    pub family: NoiseFamily,
    #[serde(default)]
    pub seed: u64,
}

struct PreparedGroup {
    label: String,
    n: usize,
    mean: DVector<f64>,
    factor: DMatrix<f64>,
}

impl ScenarioConfig {
    fn prepare(&self) -> Result<Vec<PreparedGroup>> {
        if self.t == 0 || self.p == 0 || self.groups.is_empty() {
            return Err(Error::InvalidArgument("scenario needs t, p ≥ 1 and at least one group".into()));
        }
        let d = self.t * self.p;
        self.groups
            .iter()
            .enumerate()
            .map(|(i, g)| {
                if g.n < 2 {
                    return Err(Error::InvalidArgument(format!("group {} has n < 2", i + 1)));
                }
                let mean = match &g.mean {
                    None => DVector::zeros(d),
                    Some(m) if m.len() == d => DVector::from_column_slice(m),
                    Some(m) => {
                        return Err(Error::InvalidArgument(format!(
                            "group {} mean has length {}, expected {d}",
                            i + 1,
                            m.len()
                        )))
                    }
                };
                let sigma = g.covariance.build(self.t, self.p)? * g.scale;
                Ok(PreparedGroup {
                    label: g.label.clone().unwrap_or_else(|| (i + 1).to_string()),
                    n: g.n,
                    mean,
                    factor: checked_psd_sqrt(&sigma)?,
                })
            })
            .collect()
    }
}

fn generate_prepared<R: Rng + ?Sized>(
    config: &ScenarioConfig,
    groups: &[PreparedGroup],
    rng: &mut R,
) -> Result<RepeatedMeasuresDataset> {
    let d = config.t * config.p;
    let subjects = groups
        .iter()
        .map(|g| {
            (0..g.n)
                .map(|_| {
                    let z = DVector::from_fn(d, |_, _| config.family.draw(rng));
                    (&g.mean + &g.factor * z).as_slice().to_vec()
                })
                .collect()
        })
        .collect();
    RepeatedMeasuresDataset::from_groups(
        groups.iter().map(|g| g.label.clone()).collect(),
        (1..=config.t).map(|k| k.to_string()).collect(),
        (1..=config.p).map(|s| format!("x{s}")).collect(),
        subjects,
    )
}

/// One dataset from the scenario, drawn from stream 0 of `config.seed`.
pub fn generate(config: &ScenarioConfig) -> Result<RepeatedMeasuresDataset> {
    let groups = config.prepare()?;
    generate_prepared(config, &groups, &mut substream(config.seed, 0))
}

/// Statistics and p-values of one Monte-Carlo repetition, indexed like
/// [`Effect::STANDARD`]. `None` marks effects not applicable to the design.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RepetitionRow {
    pub rep: usize,
    pub bootstrap_seed: u64,
    pub statistics: [Option<f64>; 3],
    pub p_values: [Option<f64>; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Experiment {
    pub rows: Vec<RepetitionRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RejectionRate {
    pub effect: Effect,
    pub alpha: f64,
    pub rejections: usize,
    pub reps: usize,
    pub rate: f64,
    /// 99% Wilson score interval.
    pub lower: f64,
    pub upper: f64,
}

fn wilson_99(k: usize, n: usize) -> (f64, f64) {
    let n = n as f64;
    let phat = k as f64 / n;
    let z2 = Z_99 * Z_99;
    let denom = 1.0 + z2 / n;
    let centre = (phat + z2 / (2.0 * n)) / denom;
    let half = Z_99 * (phat * (1.0 - phat) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

fn effect_slot(effect: Effect) -> Result<usize> {
    Effect::STANDARD
        .iter()
        .position(|&e| e == effect)
        .ok_or_else(|| Error::InvalidArgument("simulation covers the standard effects only".into()))
}

impl Experiment {
    pub fn rejection_rate(&self, effect: Effect, alpha: f64) -> Result<RejectionRate> {
        let slot = effect_slot(effect)?;
        let ps: Vec<f64> = self.rows.iter().filter_map(|r| r.p_values[slot]).collect();
        if ps.is_empty() {
            return Err(Error::InvalidArgument(format!("{effect} effect was not tested")));
        }
        let rejections = ps.iter().filter(|&&p| p <= alpha).count();
        let (lower, upper) = wilson_99(rejections, ps.len());
        Ok(RejectionRate {
            effect,
            alpha,
            rejections,
            reps: ps.len(),
            rate: rejections as f64 / ps.len() as f64,
            lower,
            upper,
        })
    }

    /// One row per repetition: `rep, bootstrap_seed, Q_<effect>…, p_<effect>…`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["rep".to_string(), "bootstrap_seed".into()];
        header.extend(Effect::STANDARD.iter().map(|e| format!("Q_{e}")));
        header.extend(Effect::STANDARD.iter().map(|e| format!("p_{e}")));
        w.write_record(&header)?;
        let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.rows {
            let mut row = vec![r.rep.to_string(), r.bootstrap_seed.to_string()];
            row.extend(r.statistics.iter().map(|&v| cell(v)));
            row.extend(r.p_values.iter().map(|&v| cell(v)));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Runs `reps` independent generate → MANOVA-RM cycles.
///
/// Repetition `r` draws its data and its bootstrap seed from stream `r` of
/// `seed`, so the result is independent of scheduling.
pub fn run_experiment(
    config: &ScenarioConfig,
    reps: usize,
    bootstrap: &BootstrapOptions,
    seed: u64,
) -> Result<Experiment> {
    if reps < 50 {
        return Err(Error::InvalidArgument("Monte-Carlo experiments need reps ≥ 50".into()));
    }
    let groups = config.prepare()?;
    let rows = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let mut rng = substream(seed, rep as u64);
            let bootstrap_seed = rng.next_u64();
            let ds = generate_prepared(config, &groups, &mut rng)?;
            let opts = BootstrapOptions {
                seed: bootstrap_seed,
                ..*bootstrap
            };
            let tests = manova_rm(&ds, &opts)?;
            let mut statistics = [None; 3];
            let mut p_values = [None; 3];
            for test in &tests {
                if let EffectTest::Tested(r) = test {
                    let slot = effect_slot(r.effect)?;
                    statistics[slot] = Some(r.statistic);
                    p_values[slot] = Some(r.p_value);
                }
            }
            Ok(RepetitionRow {
                rep,
                bootstrap_seed,
                statistics,
                p_values,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Experiment { rows })
}

/// Share of repetitions with `p ≤ alpha` for one effect, with a 99% interval.
pub fn rejection_rate(
    config: &ScenarioConfig,
    effect: Effect,
    alpha: f64,
    reps: usize,
    bootstrap: &BootstrapOptions,
    seed: u64,
) -> Result<RejectionRate> {
    run_experiment(config, reps, bootstrap, seed)?.rejection_rate(effect, alpha)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bootstrap::Scheme;
    use crate::mats::mean_and_covariance;

    fn scenario(n: usize, family: NoiseFamily, cov: CovarianceSpec) -> ScenarioConfig {
        ScenarioConfig {
            t: 2,
            p: 2,
            groups: vec![
                GroupSpec { label: None, n, mean: None, covariance: cov.clone(), scale: 1.0 },
                GroupSpec { label: None, n, mean: Some(vec![1.0, 2.0, 3.0, 4.0]), covariance: cov, scale: 1.0 },
            ],
            family,
            seed: 17,
        }
    }

    #[test]
    fn zero_covariance_gives_the_mean() {
        let cfg = scenario(
            5,
            NoiseFamily::Normal,
            CovarianceSpec::Explicit { matrix: vec![vec![0.0; 4]; 4] },
        );
        let ds = generate(&cfg).unwrap();
        assert!(ds.group(1).iter().all(|x| x == &[1.0, 2.0, 3.0, 4.0]));
        assert!(ds.group(0).iter().all(|x| x.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn large_sample_covariance_close_to_target() {
        let cov = CovarianceSpec::Ar1Exchangeable { variance: 2.0, time_rho: 0.6, variable_rho: 0.3 };
        let target = cov.build(2, 2).unwrap();
        let ds = generate(&scenario(10_000, NoiseFamily::Normal, cov)).unwrap();
        let (_, s) = mean_and_covariance(ds.group(0));
        assert!((&s - &target).norm() / target.norm() < 0.05);
    }

    #[test]
    fn lognormal_family_is_right_skewed() {
        let ds = generate(&scenario(10_000, NoiseFamily::StandardizedLognormal, CovarianceSpec::Identity)).unwrap();
        let xs: Vec<f64> = ds.group(0).iter().map(|x| x[0]).collect();
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
        let skew = xs.iter().map(|x| (x - m).powi(3)).sum::<f64>() / n / v.powf(1.5);
        assert!(skew > 0.5, "skewness {skew}");
        assert!(m.abs() < 0.05 && (v - 1.0).abs() < 0.1);
    }

    #[test]
    fn non_psd_covariance_rejected() {
        let cfg = scenario(5, NoiseFamily::Normal, CovarianceSpec::CompoundSymmetry { variance: 1.0, rho: -0.9 });
        assert!(matches!(generate(&cfg), Err(Error::NotPsd(_))));
    }

    #[test]
    fn structured_covariances() {
        let cs = CovarianceSpec::CompoundSymmetry { variance: 2.0, rho: 0.5 }.build(2, 2).unwrap();
        assert_eq!(cs[(0, 0)], 2.0);
        assert_eq!(cs[(0, 3)], 1.0);
        let ar = CovarianceSpec::Ar1Exchangeable { variance: 1.0, time_rho: 0.5, variable_rho: 0.2 }
            .build(3, 2)
            .unwrap();
        // (time 0, var 0) vs (time 2, var 1)
        assert!((ar[(0, 5)] - 0.25 * 0.2).abs() < 1e-15);
        assert!(CovarianceSpec::Explicit { matrix: vec![vec![1.0]] }.build(2, 2).is_err());
    }

    #[test]
    fn alpha_one_always_rejects() {
        let cfg = scenario(6, NoiseFamily::Normal, CovarianceSpec::Identity);
        let opts = BootstrapOptions::new(10, Scheme::Parametric, 0);
        let r = rejection_rate(&cfg, Effect::Group, 1.0, 50, &opts, 3).unwrap();
        assert_eq!(r.rate, 1.0);
        assert!(rejection_rate(&cfg, Effect::Group, 0.05, 49, &opts, 3).is_err());
    }

    #[test]
    fn experiment_is_deterministic() {
        let cfg = scenario(8, NoiseFamily::Normal, CovarianceSpec::Identity);
        let opts = BootstrapOptions::new(20, Scheme::Wild, 0);
        let a = run_experiment(&cfg, 50, &opts, 99).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| run_experiment(&cfg, 50, &opts, 99).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn wilson_interval_brackets_rate() {
        let (lo, hi) = wilson_99(20, 400);
        assert!(lo < 0.05 && hi > 0.05);
        assert_eq!(wilson_99(0, 100).0, 0.0);
    }

    #[test]
    fn scenario_json() {
        let json = r#"{"t":2,"p":1,"family":"standardized_lognormal",
            "groups":[{"n":10,"covariance":{"kind":"identity"}},
                      {"n":12,"covariance":{"kind":"compound_symmetry","variance":1.0,"rho":0.3},"scale":3.0}]}"#;
        let cfg: ScenarioConfig = serde_json::from_str(json).unwrap();
        assert_eq!(cfg.groups[1].scale, 3.0);
        let ds = generate(&cfg).unwrap();
        assert_eq!(ds.group_sizes(), vec![10, 12]);
    }
}
