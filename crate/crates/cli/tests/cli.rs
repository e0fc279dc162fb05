use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use rmdda::sim::{generate, CovarianceSpec, GroupSpec, NoiseFamily, ScenarioConfig};
use rmdda::RepeatedMeasuresDataset;

fn rmdda(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rmdda"))
        .args(args)
        .current_dir(cwd)
        .output()
        .unwrap()
}

fn group(n: usize, shift: f64, d: usize) -> GroupSpec {
    GroupSpec {
        label: None,
        n,
        mean: Some(vec![shift; d]),
        covariance: CovarianceSpec::CompoundSymmetry { variance: 1.0, rho: 0.3 },
        scale: 1.0,
    }
}

fn sample(t: usize, p: usize) -> RepeatedMeasuresDataset {
    generate(&ScenarioConfig {
        t,
        p,
        groups: vec![group(20, 0.0, t * p), group(22, 0.8, t * p)],
        family: NoiseFamily::Normal,
        seed: 42,
    })
    .unwrap()
}

fn write_long(ds: &RepeatedMeasuresDataset, path: &Path) {
    let mut buf = Vec::new();
    ds.write_long(&mut buf).unwrap();
    fs::write(path, buf).unwrap();
}

const LONG: [&str; 10] = [
    "--input", "data.csv", "--group", "group", "--subject", "subject", "--time", "time", "--variables", "",
];

fn long_args<'a>(variables: &'a str, rest: &[&'a str]) -> Vec<&'a str> {
    let mut v = LONG.to_vec();
    v[9] = variables;
    v.extend_from_slice(rest);
    v
}

fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn missing_input_exits_with_usage_status() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["validate"];
    args.extend(long_args("x1", &[]));
    let out = rmdda(&args, dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("data.csv"));
}

#[test]
fn unknown_column_exits_with_usage_status() {
    let dir = tempfile::tempdir().unwrap();
    write_long(&sample(2, 2), &dir.path().join("data.csv"));
    let mut args = vec!["manova"];
    args.extend(long_args("x1,nope", &["--iter", "50"]));
    let out = rmdda(&args, dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope"));
}

#[test]
fn unknown_flag_exits_with_usage_status() {
    let dir = tempfile::tempdir().unwrap();
    let out = rmdda(&["manova", "--bogus"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn singular_discriminant_problem_is_a_runtime_failure() {
    let dir = tempfile::tempdir().unwrap();
    let ds = sample(1, 2);
    let groups: Vec<Vec<Vec<f64>>> = (0..2)
        .map(|i| ds.group(i).iter().map(|x| vec![x[0], x[1], x[0] + x[1]]).collect())
        .collect();
    let degenerate = RepeatedMeasuresDataset::from_groups(
        ds.group_labels().to_vec(),
        ds.time_labels().to_vec(),
        vec!["x1".into(), "x2".into(), "x3".into()],
        groups,
    )
    .unwrap();
    write_long(&degenerate, &dir.path().join("data.csv"));
    let mut args = vec!["dda"];
    args.extend(long_args("x1,x2,x3", &[]));
    let out = rmdda(&args, dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("collinearity"));
}

#[test]
fn single_variable_anova_matches_manova() {
    let dir = tempfile::tempdir().unwrap();
    write_long(&sample(3, 2), &dir.path().join("data.csv"));

    let mut anova = vec!["anova"];
    anova.extend(long_args("x1,x2", &["--iter", "200", "--seed", "9", "--out", "a"]));
    let out = rmdda(&anova, dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("alpha_adj = 0.05 / 2 = 0.025"));

    let mut manova = vec!["manova"];
    manova.extend(long_args("x2", &["--iter", "200", "--seed", "9", "--out", "m"]));
    assert!(rmdda(&manova, dir.path()).status.success());

    let per_variable = read_json(&dir.path().join("a/anova.json"));
    let x2 = per_variable
        .as_array()
        .unwrap()
        .iter()
        .find(|v| v["variable"] == "x2")
        .unwrap();
    let whole = read_json(&dir.path().join("m/manova.json"));
    assert_eq!(x2["results"], whole);

    let table = fs::read_to_string(dir.path().join("a/anova.csv")).unwrap();
    assert!(table.starts_with("variable,effect,statistic,p_value,alpha_adj,significant\n"));
    assert_eq!(table.lines().count(), 1 + 2 * 3);
}

#[test]
fn manova_json_shape() {
    let dir = tempfile::tempdir().unwrap();
    write_long(&sample(1, 2), &dir.path().join("data.csv"));
    let mut args = vec!["manova"];
    args.extend(long_args("x1,x2", &["--iter", "100", "--resampling", "wildBS", "--dump-replicates"]));
    assert!(rmdda(&args, dir.path()).status.success());
    let out = dir.path().join("rmdda-out");
    let json = read_json(&out.join("manova.json"));
    let effects = json.as_array().unwrap();
    assert_eq!(effects.len(), 3);
    assert_eq!(effects[0]["effect"], "group");
    assert_eq!(effects[0]["B"], 100);
    assert_eq!(effects[0]["scheme"], "wildBS");
    assert!(effects[0]["replicate_summary"]["median"].is_number());
    assert_eq!(effects[1]["effect"], "time");
    assert!(effects[1]["not_applicable"].is_string());
    let replicates = fs::read_to_string(out.join("replicates.csv")).unwrap();
    assert_eq!(replicates.lines().count(), 101);
    let manifest = read_json(&out.join("manifest.json"));
    assert_eq!(manifest["resampling"], "wildBS");
    assert_eq!(manifest["schema"]["group"], "group");
}

#[test]
fn per_timepoint_dda_writes_one_table_per_time() {
    let dir = tempfile::tempdir().unwrap();
    write_long(&sample(3, 2), &dir.path().join("data.csv"));
    let mut args = vec!["dda"];
    args.extend(long_args("x1,x2", &["--per-timepoint", "--csv"]));
    let out = rmdda(&args, dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let dir = dir.path().join("rmdda-out");
    for k in 1..=3 {
        let table = fs::read_to_string(dir.join(format!("dfc_time{k}.csv"))).unwrap();
        assert_eq!(table.lines().count(), 3);
        assert!(!dir.join(format!("dfc_time{k}.json")).exists());
    }
    let scores = fs::read_to_string(dir.join("scores.csv")).unwrap();
    assert_eq!(scores.lines().count(), 1 + 42);
}

#[test]
fn diagnose_suppresses_small_proportions() {
    let dir = tempfile::tempdir().unwrap();
    write_long(&sample(2, 2), &dir.path().join("data.csv"));
    let mut args = vec!["diagnose"];
    args.extend(long_args("x1,x2", &["--vdp-threshold", "0.3", "--ci-threshold", "30"]));
    assert!(rmdda(&args, dir.path()).status.success());
    let out = dir.path().join("rmdda-out");
    let table = fs::read_to_string(out.join("collinearity.csv")).unwrap();
    let header = table.lines().next().unwrap();
    assert_eq!(header, "condition_index,(Intercept),x1 (1),x2 (1),x1 (2),x2 (2),flagged");
    let cells: Vec<&str> = table.lines().skip(1).flat_map(|l| l.split(',').skip(1)).collect();
    assert!(cells.contains(&"."));
    for c in cells.iter().filter(|c| **c != "." && !c.is_empty()) {
        assert!(c.parse::<f64>().unwrap() > 0.3);
    }
    for name in ["homogeneity.json", "scree.csv", "covariance_blocks.csv", "collinearity.json", "manifest.json"] {
        assert!(out.join(name).exists(), "{name}");
    }
}

#[test]
fn wide_input_with_schema_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let ds = sample(2, 2);
    let mut buf = Vec::new();
    ds.write_wide(&mut buf).unwrap();
    fs::write(dir.path().join("wide.csv"), buf).unwrap();
    fs::write(
        dir.path().join("schema.json"),
        serde_json::to_string(&ds.wide_schema()).unwrap(),
    )
    .unwrap();
    let out = rmdda(
        &["validate", "--input", "wide.csv", "--format", "wide", "--schema", "schema.json"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v = read_json(&dir.path().join("rmdda-out/validation.json"));
    assert_eq!(v["group_sizes"], serde_json::json!([20, 22]));
    assert_eq!(v["time_points"], serde_json::json!(["1", "2"]));
}

#[test]
fn simulate_reports_all_effects() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = ScenarioConfig {
        t: 2,
        p: 1,
        groups: vec![group(10, 0.0, 2), group(10, 0.0, 2)],
        family: NoiseFamily::StandardizedLognormal,
        seed: 0,
    };
    fs::write(dir.path().join("s.json"), serde_json::to_string(&scenario).unwrap()).unwrap();
    let out = rmdda(&["simulate", "--scenario", "s.json", "--reps", "50", "--iter", "50"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = read_json(&dir.path().join("rmdda-out/summary.json"));
    assert_eq!(summary["rejection_rates"].as_array().unwrap().len(), 3);
    let reps = fs::read_to_string(dir.path().join("rmdda-out/reps.csv")).unwrap();
    assert_eq!(reps.lines().count(), 51);

    let too_few = rmdda(&["simulate", "--scenario", "s.json", "--reps", "10"], dir.path());
    assert_eq!(too_few.status.code(), Some(2));
}
