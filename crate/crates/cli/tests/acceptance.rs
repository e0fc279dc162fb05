//! Acceptance gate: one PASS/FAIL line per criterion, non-zero exit on any failure.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rmdda::bootstrap::{p_value, BootstrapOptions};
use rmdda::dda::dfc_table;
use rmdda::diagnostics::{collinearity_from_design, CollinearityReport, CovarianceIndices, Thresholds};
use rmdda::linalg::DEFAULT_PINV_RTOL;
use rmdda::sim::{generate, run_experiment, CovarianceSpec, GroupSpec, NoiseFamily, ScenarioConfig};
use rmdda::{
    collinearity_report, estimate_moments, hypothesis_matrix, mats, suggest_removals, Effect,
    RepeatedMeasuresDataset, Scheme,
};

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn labels(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("{prefix}{i}")).collect()
}

fn dataset(g: usize, t: usize, p: usize, subjects: Vec<Vec<Vec<f64>>>) -> RepeatedMeasuresDataset {
    RepeatedMeasuresDataset::from_groups(labels("G", g), labels("T", t), labels("V", p), subjects).unwrap()
}

fn random_dataset(rng: &mut ChaCha8Rng, g: usize, t: usize, p: usize, sizes: &[usize]) -> RepeatedMeasuresDataset {
    let subjects = (0..g)
        .map(|i| {
            let shift: Vec<f64> = (0..t * p).map(|_| rng.random_range(-1.0..1.0)).collect();
            (0..sizes[i])
                .map(|_| shift.iter().map(|s| s + rng.random_range(-2.0..2.0)).collect())
                .collect()
        })
        .collect();
    dataset(g, t, p, subjects)
}

fn rescale(ds: &RepeatedMeasuresDataset, scales: &[f64]) -> RepeatedMeasuresDataset {
    let p = ds.p();
    let subjects = (0..ds.g())
        .map(|i| {
            ds.group(i)
                .iter()
                .map(|x| x.iter().enumerate().map(|(c, v)| v * scales[c % p]).collect())
                .collect()
        })
        .collect();
    dataset(ds.g(), ds.t(), p, subjects)
}

fn statistic(ds: &RepeatedMeasuresDataset, effect: Effect) -> f64 {
    let h = hypothesis_matrix(effect, ds.g(), ds.t(), ds.p()).unwrap();
    mats(&estimate_moments(ds), &h, DEFAULT_PINV_RTOL).unwrap().statistic
}

fn hand_oracle() -> Check {
    let ds = dataset(2, 1, 1, vec![vec![vec![0.0], vec![2.0]], vec![vec![2.0], vec![4.0]]]);
    let q = statistic(&ds, Effect::Group);
    let err = (q - 2.0).abs();
    if err <= 1e-12 {
        Ok(format!("Q_N = {q}, |err| = {err:.1e}"))
    } else {
        Err(format!("Q_N = {q}, |err| = {err:.1e} > 1e-12"))
    }
}

fn scale_invariance() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(20_240_501);
    let mut worst: f64 = 0.0;
    for _ in 0..500 {
        let p = rng.random_range(1..=3);
        let sizes = [rng.random_range(10..=50), rng.random_range(10..=50)];
        let ds = random_dataset(&mut rng, 2, 2, p, &sizes);
        let scales: Vec<f64> = (0..p).map(|_| rng.random_range(0.1..10.0)).collect();
        let scaled = rescale(&ds, &scales);
        for effect in Effect::STANDARD {
            let a = statistic(&ds, effect);
            let b = statistic(&scaled, effect);
            worst = worst.max((a - b).abs() / a.abs().max(f64::MIN_POSITIVE));
        }
    }
    if worst <= 1e-8 {
        Ok(format!("500 datasets, max relative change {worst:.2e}"))
    } else {
        Err(format!("max relative change {worst:.2e} > 1e-8"))
    }
}

fn kron3(a: &DVector<f64>, b: &DVector<f64>, c: &DVector<f64>) -> DVector<f64> {
    let ab = a.kronecker(b);
    ab.kronecker(c)
}

fn projectors() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut rand_vec = |n: usize| DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for g in 2..=4 {
        for t in 1..=4 {
            for p in 1..=3 {
                let ones = |n: usize| DVector::from_element(n, 1.0);
                for effect in Effect::STANDARD {
                    if t == 1 && effect != Effect::Group {
                        continue;
                    }
                    let m = hypothesis_matrix(effect, g, t, p).unwrap().matrix;
                    let rank = match effect {
                        Effect::Group => (g - 1) * p,
                        Effect::Time => (t - 1) * p,
                        _ => (g - 1) * (t - 1) * p,
                    };
                    if (m.trace() - rank as f64).abs() > 1e-10 {
                        return Err(format!("{effect} g={g} t={t} p={p}: trace {} != {rank}", m.trace()));
                    }
                    let nulls = match effect {
                        Effect::Group => vec![kron3(&ones(g), &rand_vec(t), &rand_vec(p))],
                        Effect::Time => vec![kron3(&rand_vec(g), &ones(t), &rand_vec(p))],
                        _ => vec![
                            kron3(&rand_vec(g), &ones(t), &rand_vec(p)),
                            kron3(&ones(g), &rand_vec(t), &rand_vec(p)),
                        ],
                    };
                    let idem = (&m * &m - &m).amax();
                    let sym = (&m - m.transpose()).amax();
                    let null = nulls.iter().map(|mu| (&m * mu).amax()).fold(0.0, f64::max);
                    worst = worst.max(idem).max(sym).max(null);
                    count += 1;
                }
            }
        }
    }
    if worst <= 1e-12 {
        Ok(format!("{count} matrices, max deviation {worst:.1e}"))
    } else {
        Err(format!("max deviation {worst:.1e} > 1e-12"))
    }
}

fn p_value_counting() -> Check {
    let p = p_value(2.0, &[1.0, 3.0, 5.0, 2.0]).map_err(|e| e.to_string())?;
    if p == 0.75 {
        Ok(format!("p = {p}"))
    } else {
        Err(format!("p = {p}, expected 0.75"))
    }
}

fn null_scenario(family: NoiseFamily) -> ScenarioConfig {
    let sigma = CovarianceSpec::Ar1Exchangeable {
        variance: 1.0,
        time_rho: 0.5,
        variable_rho: 0.3,
    };
    let group = |scale: f64| GroupSpec {
        label: None,
        n: 30,
        mean: None,
        covariance: sigma.clone(),
        scale,
    };
    ScenarioConfig {
        t: 2,
        p: 2,
        groups: vec![group(1.0), group(3.0)],
        family,
        seed: 0,
    }
}

fn type_one_error() -> Check {
    let opts = BootstrapOptions::new(500, Scheme::Parametric, 0);
    let mut lines = Vec::new();
    let mut ok = true;
    for family in [NoiseFamily::Normal, NoiseFamily::StandardizedLognormal] {
        let experiment = run_experiment(&null_scenario(family), 400, &opts, 123).map_err(|e| e.to_string())?;
        for effect in Effect::STANDARD {
            let r = experiment.rejection_rate(effect, 0.05).map_err(|e| e.to_string())?;
            ok &= (0.022..=0.078).contains(&r.rate);
            lines.push(format!("{family:?}/{effect} {:.4}", r.rate));
        }
    }
    let detail = lines.join(", ");
    if ok {
        Ok(detail)
    } else {
        Err(format!("{detail} (band [0.022, 0.078])"))
    }
}

fn naive_inverse(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = row.clone();
            r.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            r
        })
        .collect();
    for col in 0..n {
        let pivot = (col..n).max_by(|&x, &y| m[x][col].abs().total_cmp(&m[y][col].abs())).unwrap();
        m.swap(col, pivot);
        let d = m[col][col];
        for v in m[col].iter_mut() {
            *v /= d;
        }
        for r in 0..n {
            if r != col {
                let f = m[r][col];
                let pivot_row = m[col].clone();
                for (v, pv) in m[r].iter_mut().zip(pivot_row) {
                    *v -= f * pv;
                }
            }
        }
    }
    m.into_iter().map(|r| r[n..].to_vec()).collect()
}

fn mat_vec(a: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    a.iter().map(|row| row.iter().zip(v).map(|(x, y)| x * y).sum()).collect()
}

/// Leading eigenvector of `W⁻¹B` by plain power iteration.
fn rayleigh_oracle(ds: &RepeatedMeasuresDataset) -> Vec<f64> {
    let d = ds.pt();
    let means: Vec<Vec<f64>> = (0..2)
        .map(|i| {
            let rows = ds.group(i);
            (0..d).map(|c| rows.iter().map(|x| x[c]).sum::<f64>() / rows.len() as f64).collect()
        })
        .collect();
    let n = ds.n_total() as f64;
    let grand: Vec<f64> = (0..d)
        .map(|c| (0..2).map(|i| ds.group(i).len() as f64 * means[i][c]).sum::<f64>() / n)
        .collect();
    let mut within = vec![vec![0.0; d]; d];
    let mut between = vec![vec![0.0; d]; d];
    for (i, mean) in means.iter().enumerate() {
        for x in ds.group(i) {
            for r in 0..d {
                for c in 0..d {
                    within[r][c] += (x[r] - mean[r]) * (x[c] - mean[c]);
                }
            }
        }
        let ni = ds.group(i).len() as f64;
        for r in 0..d {
            for c in 0..d {
                between[r][c] += ni * (mean[r] - grand[r]) * (mean[c] - grand[c]);
            }
        }
    }
    let w_inv = naive_inverse(&within);
    let mut v = vec![1.0; d];
    for _ in 0..200 {
        let next = mat_vec(&w_inv, &mat_vec(&between, &v));
        let norm = next.iter().map(|x| x * x).sum::<f64>().sqrt();
        v = next.into_iter().map(|x| x / norm).collect();
    }
    v
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

fn rayleigh() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst: f64 = 1.0;
    for _ in 0..200 {
        let t = rng.random_range(1..=3);
        let p = rng.random_range(1..=6 / t);
        let sizes = [rng.random_range(20..=40), rng.random_range(20..=40)];
        let ds = random_dataset(&mut rng, 2, t, p, &sizes);
        let table = dfc_table(&ds).map_err(|e| e.to_string())?;
        let raw: Vec<f64> = table.entries.iter().map(|e| e.raw).collect();
        worst = worst.min(cosine(&raw, &rayleigh_oracle(&ds)).abs());
    }
    if worst >= 1.0 - 1e-8 {
        Ok(format!("200 problems, min |cos| = 1 - {:.1e}", 1.0 - worst))
    } else {
        Err(format!("min |cos| = {worst} < 1 - 1e-8"))
    }
}

fn dfc_unit_invariance() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for trial in 0..100 {
        let t = rng.random_range(1..=3);
        let p = rng.random_range(1..=3);
        let sizes = [rng.random_range(30..=60), rng.random_range(30..=60)];
        let ds = random_dataset(&mut rng, 2, t, p, &sizes);
        let scales: Vec<f64> = (0..p).map(|_| rng.random_range(0.1..10.0)).collect();
        let a = dfc_table(&ds).map_err(|e| e.to_string())?;
        let b = dfc_table(&rescale(&ds, &scales)).map_err(|e| e.to_string())?;
        if a.ranking != b.ranking {
            return Err(format!("trial {trial}: ranking changed"));
        }
        for (x, y) in a.entries.iter().zip(&b.entries) {
            worst = worst.max((x.standardized - y.standardized).abs());
        }
    }
    if worst <= 1e-10 {
        Ok(format!("100 trials, max |Δ| = {worst:.1e}, rankings identical"))
    } else {
        Err(format!("max |Δ| = {worst:.1e} > 1e-10"))
    }
}

fn vdp_column_error(report: &CollinearityReport) -> f64 {
    (0..report.predictors.len())
        .map(|k| (report.vdp.iter().map(|row| row[k]).sum::<f64>() - 1.0).abs())
        .fold(0.0, f64::max)
}

fn collinearity() -> Check {
    // Hadamard columns: orthogonal to each other and to the intercept
    let n = 8;
    let design = DMatrix::from_fn(n, 4, |i, j| {
        if (i & (j + 1)).count_ones().is_multiple_of(2) {
            1.0
        } else {
            -1.0
        }
    });
    let names = labels("h", 4);
    let vars: Vec<Option<String>> = names.iter().cloned().map(Some).collect();
    let mut vdp_err: f64 = 0.0;
    let mut ci_err: f64 = 0.0;
    for intercept in [false, true] {
        let r = collinearity_from_design(&design, &names, &vars, intercept, Thresholds::default())
            .map_err(|e| e.to_string())?;
        if r.is_flagged() {
            return Err("orthonormal design flagged".into());
        }
        ci_err = r.condition_indices.iter().map(|c| (c - 1.0).abs()).fold(ci_err, f64::max);
        vdp_err = vdp_err.max(vdp_column_error(&r));
    }
    if ci_err > 1e-10 {
        return Err(format!("orthonormal condition indices off by {ci_err:.1e}"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let subjects: Vec<Vec<Vec<f64>>> = (0..2)
        .map(|_| {
            (0..50)
                .map(|_| {
                    let x1: f64 = rng.random_range(-1.0..1.0);
                    let x3: f64 = rng.random_range(-1.0..1.0);
                    let x2 = x1 + 1e-6 * rng.random_range(-1.0..1.0);
                    vec![x1, x2, x3]
                })
                .collect()
        })
        .collect();
    let ds = dataset(2, 1, 3, subjects);
    let report = collinearity_report(&ds, true, Thresholds::default()).map_err(|e| e.to_string())?;
    vdp_err = vdp_err.max(vdp_column_error(&report));
    let top = report.condition_indices.len() - 1;
    let flag = report
        .flags
        .iter()
        .find(|f| f.row == top)
        .ok_or("near-dependency not flagged on the top index")?;
    let col = |name: &str| report.predictors.iter().position(|p| p == name).unwrap();
    let (v1, v2) = (report.vdp[top][col("V1 (T1)")], report.vdp[top][col("V2 (T1)")]);
    if v1 <= 0.3 || v2 <= 0.3 {
        return Err(format!("top-index VDPs {v1:.3}, {v2:.3} not both > .3"));
    }

    let protected = vec!["V2".to_string()];
    let plan = suggest_removals(&report, &ds, &protected, true).map_err(|e| e.to_string())?;
    vdp_err = vdp_err.max(vdp_column_error(&plan.report));
    if plan.report.is_flagged() || plan.removed.len() > ds.p() || plan.removed.iter().any(|r| protected.contains(r)) {
        return Err(format!("removal sequence {:?} did not clear flags cleanly", plan.removed));
    }
    if vdp_err > 1e-8 {
        return Err(format!("VDP columns off by {vdp_err:.1e}"));
    }
    Ok(format!(
        "orthonormal CI err {ci_err:.1e}; top CI {:.3e} implicates {:?} (VDP {v1:.3}, {v2:.3}); removed {:?}; VDP sum err {vdp_err:.1e}",
        flag.condition_index, flag.implicated, plan.removed
    ))
}

fn cofactor_determinant(a: &[Vec<f64>]) -> f64 {
    let n = a.len();
    if n == 1 {
        return a[0][0];
    }
    (0..n)
        .map(|j| {
            let minor: Vec<Vec<f64>> = a[1..]
                .iter()
                .map(|row| row.iter().enumerate().filter(|&(c, _)| c != j).map(|(_, v)| *v).collect())
                .collect();
            let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
            sign * a[0][j] * cofactor_determinant(&minor)
        })
        .sum()
}

fn homogeneity_identities() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let d = rng.random_range(1..=4);
        let a = DMatrix::from_fn(d, d + 2, |_, _| rng.random_range(-1.0..1.0));
        let m = &a * a.transpose() + DMatrix::identity(d, d) * 0.05;
        let rows: Vec<Vec<f64>> = (0..d).map(|i| (0..d).map(|j| m[(i, j)]).collect()).collect();
        let trace: f64 = (0..d).map(|i| rows[i][i]).sum();
        let log_det = cofactor_determinant(&rows).ln();
        let idx = CovarianceIndices::from_matrix("m", &m);
        let ld = idx.log_determinant.ok_or("PSD matrix reported singular")?;
        let eig_sum: f64 = idx.log_eigenvalues.iter().sum();
        worst = worst.max((idx.trace - trace).abs()).max((ld - log_det).abs()).max((ld - eig_sum).abs());
    }
    if worst <= 1e-8 {
        Ok(format!("200 matrices, max deviation {worst:.1e}"))
    } else {
        Err(format!("max deviation {worst:.1e} > 1e-8"))
    }
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect()
}

fn cli_determinism() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = dir.path();
    let config = ScenarioConfig {
        t: 3,
        p: 2,
        ..null_scenario(NoiseFamily::Normal)
    };
    let ds = generate(&config).map_err(|e| e.to_string())?;
    let mut buf = Vec::new();
    ds.write_long(&mut buf).map_err(|e| e.to_string())?;
    fs::write(root.join("data.csv"), buf).map_err(|e| e.to_string())?;
    fs::write(root.join("scenario.json"), serde_json::to_string(&null_scenario(NoiseFamily::Normal)).unwrap())
        .map_err(|e| e.to_string())?;

    let data = ["--input", "data.csv", "--group", "group", "--subject", "subject", "--time", "time", "--variables", "x1,x2"];
    let runs: Vec<(&str, Vec<&str>)> = vec![
        ("validate", data.to_vec()),
        ("manova", [&data[..], &["--iter", "400", "--dump-replicates"]].concat()),
        ("anova", [&data[..], &["--iter", "400", "--resampling", "wildBS"]].concat()),
        ("dda", [&data[..], &["--per-timepoint", "--drop-collinear"]].concat()),
        ("diagnose", [&data[..], &["--suggest-removals"]].concat()),
        ("simulate", vec!["--scenario", "scenario.json", "--reps", "60", "--iter", "100"]),
    ];
    let mut files = 0;
    for (sub, args) in &runs {
        let out = format!("out_{sub}");
        let mut snapshots = Vec::new();
        for threads in ["1", "3"] {
            let status = Command::new(env!("CARGO_BIN_EXE_rmdda"))
                .arg(sub)
                .args(args)
                .args(["--out", &out, "--threads", threads])
                .current_dir(root)
                .output()
                .map_err(|e| e.to_string())?;
            if !status.status.success() {
                return Err(format!("{sub} failed: {}", String::from_utf8_lossy(&status.stderr)));
            }
            snapshots.push(snapshot(&root.join(&out)));
        }
        if snapshots[0] != snapshots[1] {
            return Err(format!("{sub}: artifacts differ between --threads 1 and 3"));
        }
        if !snapshots[0].contains_key("manifest.json") {
            return Err(format!("{sub}: no manifest.json"));
        }
        files += snapshots[0].len();
    }
    Ok(format!("{} subcommands, {files} artifacts byte-identical across thread counts", runs.len()))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("hand-oracle MATS", hand_oracle),
        ("scale invariance", scale_invariance),
        ("contrast projectors", projectors),
        ("bootstrap p-value counting", p_value_counting),
        ("type-1 error band", type_one_error),
        ("DDA Rayleigh oracle", rayleigh),
        ("standardized DFC unit invariance", dfc_unit_invariance),
        ("collinearity detection", collinearity),
        ("homogeneity identities", homogeneity_identities),
        ("CLI determinism", cli_determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = check();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name} ({secs:.1}s): {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name} ({secs:.1}s): {detail}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
