use std::fmt;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::DVector;
use serde::Serialize;

use rmdda::bootstrap::{BootstrapOptions, EffectTest, ReplicateSummary};
use rmdda::dataset::{load_long, load_wide, LoadReport};
use rmdda::dda::{dfc_table, dfc_tables_per_time, discriminant_scores, DfcTable};
use rmdda::diagnostics::{
    collinearity_report, homogeneity_report, scree_data, suggest_removals, write_covariance_blocks_csv,
    write_scree_csv, Thresholds,
};
use rmdda::sim::{run_experiment, ScenarioConfig};
use rmdda::{Effect, RepeatedMeasuresDataset, Schema};

use crate::manifest::RunManifest;
use crate::{CollinearityArgs, DataArgs, DdaArgs, DiagnoseArgs, Format, OutputArgs, SimulateArgs, TestArgs, ValidateArgs};

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, schema or input data: exit status 2.
    Usage(String),
    Core(rmdda::Error),
    Io(std::io::Error),
    Json(serde_json::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(e) if e.is_input() => 2,
            _ => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => f.write_str(m),
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Io(e) => write!(f, "{e}"),
            CliError::Json(e) => write!(f, "{e}"),
        }
    }
}

impl From<rmdda::Error> for CliError {
    fn from(e: rmdda::Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Json(e)
    }
}

type CliResult<T> = Result<T, CliError>;

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let file = File::open(path).map_err(|e| CliError::Usage(format!("cannot open {}: {e}", path.display())))?;
    serde_json::from_reader(BufReader::new(file))
        .map_err(|e| CliError::Usage(format!("invalid JSON in {}: {e}", path.display())))
}

fn resolve_schema(data: &DataArgs) -> CliResult<Schema> {
    let mut schema = match &data.schema {
        Some(path) => read_json::<Schema>(path)?,
        None => {
            let group = data
                .group
                .clone()
                .ok_or_else(|| CliError::Usage("--group is required without --schema".into()))?;
            let variables = data
                .variables
                .clone()
                .ok_or_else(|| CliError::Usage("--variables is required without --schema".into()))?;
            Schema {
                group,
                subject: None,
                time: None,
                variables,
                time_order: None,
                group_order: None,
                columns: None,
                na: "NA".into(),
            }
        }
    };
    if let Some(g) = &data.group {
        schema.group = g.clone();
    }
    if let Some(v) = &data.variables {
        schema.variables = v.clone();
    }
    if data.subject.is_some() {
        schema.subject = data.subject.clone();
    }
    if data.time.is_some() {
        schema.time = data.time.clone();
    }
    if data.time_order.is_some() {
        schema.time_order = data.time_order.clone();
    }
    if data.group_order.is_some() {
        schema.group_order = data.group_order.clone();
    }
    if let Some(na) = &data.na {
        schema.na = na.clone();
    }
    if data.format == Format::Long {
        if schema.subject.is_none() {
            return Err(CliError::Usage("long format needs --subject".into()));
        }
        if schema.time.is_none() {
            return Err(CliError::Usage("long format needs --time".into()));
        }
    }
    Ok(schema)
}

fn load(data: &DataArgs) -> CliResult<(RepeatedMeasuresDataset, LoadReport, Schema)> {
    let schema = resolve_schema(data)?;
    let file = File::open(&data.input)
        .map_err(|e| CliError::Usage(format!("cannot open {}: {e}", data.input.display())))?;
    let reader = BufReader::new(file);
    let (ds, report) = match data.format {
        Format::Long => load_long(reader, &schema)?,
        Format::Wide => load_wide(reader, &schema)?,
    };
    if report.dropped_count() > 0 || report.non_numeric_rows > 0 {
        eprintln!(
            "note: {} incomplete subject(s) dropped, {} non-numeric row(s) excluded",
            report.dropped_count(),
            report.non_numeric_rows
        );
    }
    Ok((ds, report, schema))
}

fn setup(output: &OutputArgs) -> CliResult<()> {
    if let Some(n) = output.threads {
        // only fails if a pool already exists, which cannot happen this early
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("--threads: {e}")))?;
    }
    fs::create_dir_all(&output.out)?;
    Ok(())
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> CliResult<()> {
    let mut w = BufWriter::new(File::create(dir.join(name))?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn create(dir: &Path, name: &str) -> CliResult<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn data_manifest(sub: &'static str, data: &DataArgs, output: &OutputArgs, schema: Schema) -> RunManifest {
    let mut m = RunManifest::new(sub, output.out.clone());
    m.input = Some(data.input.clone());
    m.format = Some(data.format);
    m.schema = Some(schema);
    m
}

#[derive(Serialize)]
struct Validation<'a> {
    groups: &'a [String],
    group_sizes: Vec<usize>,
    time_points: &'a [String],
    variables: &'a [String],
    n_total: usize,
    raw_subjects: usize,
    dropped_subjects: &'a [String],
    non_numeric_rows: usize,
}

pub fn validate(args: &ValidateArgs) -> CliResult<()> {
    setup(&args.output)?;
    let (ds, report, schema) = load(&args.data)?;
    let v = Validation {
        groups: ds.group_labels(),
        group_sizes: ds.group_sizes(),
        time_points: ds.time_labels(),
        variables: ds.variable_labels(),
        n_total: ds.n_total(),
        raw_subjects: report.raw_subjects,
        dropped_subjects: &report.dropped_subjects,
        non_numeric_rows: report.non_numeric_rows,
    };
    println!(
        "g = {}, t = {}, p = {}, n = {:?} (N = {}), dropped = {}",
        ds.g(),
        ds.t(),
        ds.p(),
        v.group_sizes,
        v.n_total,
        report.dropped_count()
    );
    let dir = &args.output.out;
    write_json(dir, "validation.json", &v)?;
    write_json(dir, "manifest.json", &data_manifest("validate", &args.data, &args.output, schema))?;
    Ok(())
}

/// JSON shape of one effect test.
#[derive(Serialize)]
#[serde(untagged)]
enum EffectJson {
    Tested {
        effect: Effect,
        statistic: f64,
        p_value: f64,
        #[serde(rename = "B")]
        b: usize,
        scheme: rmdda::Scheme,
        seed: u64,
        replicate_summary: ReplicateSummary,
    },
    NotApplicable {
        effect: Effect,
        not_applicable: String,
    },
}

impl From<&EffectTest> for EffectJson {
    fn from(t: &EffectTest) -> Self {
        match t {
            EffectTest::Tested(r) => EffectJson::Tested {
                effect: r.effect,
                statistic: r.statistic,
                p_value: r.p_value,
                b: r.iterations,
                scheme: r.scheme,
                seed: r.seed,
                replicate_summary: r.summary(),
            },
            EffectTest::NotApplicable { effect, reason } => EffectJson::NotApplicable {
                effect: *effect,
                not_applicable: reason.clone(),
            },
        }
    }
}

fn bootstrap_options(args: &TestArgs) -> CliResult<BootstrapOptions> {
    if args.iter == 0 {
        return Err(CliError::Usage("--iter must be at least 1".into()));
    }
    Ok(BootstrapOptions {
        iterations: args.iter,
        scheme: args.resampling.into(),
        seed: args.seed,
        rtol: args.rtol,
    })
}

fn test_manifest(sub: &'static str, args: &TestArgs, schema: Schema) -> RunManifest {
    let mut m = data_manifest(sub, &args.data, &args.output, schema);
    m.iter = Some(args.iter);
    m.resampling = Some(args.resampling);
    m.seed = Some(args.seed);
    m.alpha = Some(args.alpha);
    m.rtol = Some(args.rtol);
    m
}

fn write_replicates(dir: &Path, rows: &[(String, &EffectTest)]) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(create(dir, "replicates.csv")?);
    w.write_record(["variable", "effect", "b", "statistic"]).map_err(io_from_csv)?;
    for (variable, test) in rows {
        if let EffectTest::Tested(r) = test {
            for (b, q) in r.replicates.iter().enumerate() {
                w.write_record([variable.clone(), r.effect.to_string(), (b + 1).to_string(), q.to_string()])
                    .map_err(io_from_csv)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn io_from_csv(e: csv::Error) -> CliError {
    CliError::Core(rmdda::Error::Csv(e))
}

pub fn manova(args: &TestArgs) -> CliResult<()> {
    setup(&args.output)?;
    let opts = bootstrap_options(args)?;
    let (ds, _, schema) = load(&args.data)?;
    let tests = rmdda::manova_rm(&ds, &opts)?;
    for t in &tests {
        match t {
            EffectTest::Tested(r) => println!("{:<12} MATS = {:>12.4}  p = {:.4}", r.effect, r.statistic, r.p_value),
            EffectTest::NotApplicable { effect, reason } => println!("{effect:<12} not applicable ({reason})"),
        }
    }
    let dir = &args.output.out;
    let json: Vec<EffectJson> = tests.iter().map(EffectJson::from).collect();
    write_json(dir, "manova.json", &json)?;
    if args.dump_replicates {
        let all = ds.variable_labels().join("+");
        let rows: Vec<(String, &EffectTest)> = tests.iter().map(|t| (all.clone(), t)).collect();
        write_replicates(dir, &rows)?;
    }
    write_json(dir, "manifest.json", &test_manifest("manova", args, schema))?;
    Ok(())
}

#[derive(Serialize)]
struct AnovaJson {
    variable: String,
    alpha_adjusted: f64,
    results: Vec<EffectJson>,
}

pub fn anova(args: &TestArgs) -> CliResult<()> {
    setup(&args.output)?;
    let opts = bootstrap_options(args)?;
    let (ds, _, schema) = load(&args.data)?;
    let alpha_adj = args.alpha / ds.p() as f64;
    println!("# per-variable tests, alpha_adj = {} / {} = {alpha_adj}", args.alpha, ds.p());

    let mut per_variable = Vec::new();
    for v in ds.variable_labels() {
        let sub = ds.select_variables(&[v.as_str()])?;
        per_variable.push((v.clone(), rmdda::manova_rm(&sub, &opts)?));
    }

    let dir = &args.output.out;
    if args.output.want_csv() {
        let mut w = csv::Writer::from_writer(create(dir, "anova.csv")?);
        w.write_record(["variable", "effect", "statistic", "p_value", "alpha_adj", "significant"])
            .map_err(io_from_csv)?;
        for (v, tests) in &per_variable {
            for t in tests {
                if let EffectTest::Tested(r) = t {
                    let sig = r.p_value <= alpha_adj;
                    println!("{v:<16} {:<12} MATS = {:>12.4}  p = {:.4}{}", r.effect, r.statistic, r.p_value, if sig { " *" } else { "" });
                    w.write_record([
                        v.clone(),
                        r.effect.to_string(),
                        r.statistic.to_string(),
                        r.p_value.to_string(),
                        alpha_adj.to_string(),
                        sig.to_string(),
                    ])
                    .map_err(io_from_csv)?;
                }
            }
        }
        w.flush()?;
    }
    if args.output.want_json() {
        let json: Vec<AnovaJson> = per_variable
            .iter()
            .map(|(v, tests)| AnovaJson {
                variable: v.clone(),
                alpha_adjusted: alpha_adj,
                results: tests.iter().map(EffectJson::from).collect(),
            })
            .collect();
        write_json(dir, "anova.json", &json)?;
    }
    if args.dump_replicates {
        let rows: Vec<(String, &EffectTest)> = per_variable
            .iter()
            .flat_map(|(v, tests)| tests.iter().map(move |t| (v.clone(), t)))
            .collect();
        write_replicates(dir, &rows)?;
    }
    write_json(dir, "manifest.json", &test_manifest("anova", args, schema))?;
    Ok(())
}

fn thresholds(c: &CollinearityArgs) -> Thresholds {
    Thresholds {
        condition_index: c.ci_threshold,
        vdp: c.vdp_threshold,
    }
}

fn collinearity_manifest(m: &mut RunManifest, c: &CollinearityArgs) {
    m.thresholds = Some(thresholds(c));
    m.include_intercept = Some(!c.no_intercept);
    m.protected = c.protected.clone();
}

#[derive(Serialize)]
struct Removals<'a> {
    removed: &'a [String],
    remaining_variables: &'a [String],
    protected: &'a [String],
}

fn print_table(title: &str, table: &DfcTable) {
    println!("{title} (sign: {} − {})", table.group_order.0, table.group_order.1);
    for e in table.ranked() {
        println!("  {:>3}  {:<24} {:>10.4}", e.rank, e.label, e.standardized);
    }
    for w in &table.warnings {
        eprintln!("warning: {w}");
    }
}

fn write_dfc(dir: &Path, output: &OutputArgs, stem: &str, table: &DfcTable) -> CliResult<()> {
    if output.want_csv() {
        table.write_csv(create(dir, &format!("{stem}.csv"))?)?;
    }
    if output.want_json() {
        write_json(dir, &format!("{stem}.json"), table)?;
    }
    Ok(())
}

pub fn dda(args: &DdaArgs) -> CliResult<()> {
    setup(&args.output)?;
    let (mut ds, _, schema) = load(&args.data)?;
    let dir = &args.output.out;
    let include_intercept = !args.collinearity.no_intercept;
    if args.drop_collinear {
        let report = collinearity_report(&ds, include_intercept, thresholds(&args.collinearity))?;
        let plan = suggest_removals(&report, &ds, &args.collinearity.protected, include_intercept)?;
        if !plan.removed.is_empty() {
            println!("dropped for collinearity: {}", plan.removed.join(", "));
        }
        write_json(
            dir,
            "removals.json",
            &Removals {
                removed: &plan.removed,
                remaining_variables: plan.dataset.variable_labels(),
                protected: &args.collinearity.protected,
            },
        )?;
        ds = plan.dataset;
    }

    let table = dfc_table(&ds)?;
    print_table("standardized DFCs", &table);
    write_dfc(dir, &args.output, "dfc", &table)?;
    if args.output.want_csv() {
        let lambda = raw_vector(&table);
        let scores = discriminant_scores(&ds, &lambda)?;
        let mut w = csv::Writer::from_writer(create(dir, "scores.csv")?);
        w.write_record(["group", "subject", "score"]).map_err(io_from_csv)?;
        for (i, group) in scores.iter().enumerate() {
            for (j, s) in group.iter().enumerate() {
                w.write_record([ds.group_labels()[i].clone(), ds.subject_ids(i)[j].clone(), s.to_string()])
                    .map_err(io_from_csv)?;
            }
        }
        w.flush()?;
    }
    if args.per_timepoint {
        for (k, t) in dfc_tables_per_time(&ds)?.iter().enumerate() {
            print_table(&format!("time {}", ds.time_labels()[k]), t);
            write_dfc(dir, &args.output, &format!("dfc_time{}", k + 1), t)?;
        }
    }

    let mut m = data_manifest("dda", &args.data, &args.output, schema);
    collinearity_manifest(&mut m, &args.collinearity);
    m.per_timepoint = args.per_timepoint;
    m.drop_collinear = args.drop_collinear;
    write_json(dir, "manifest.json", &m)?;
    Ok(())
}

fn raw_vector(table: &DfcTable) -> DVector<f64> {
    DVector::from_iterator(table.entries.len(), table.entries.iter().map(|e| e.raw))
}

pub fn diagnose(args: &DiagnoseArgs) -> CliResult<()> {
    setup(&args.output)?;
    let (ds, _, schema) = load(&args.data)?;
    let dir = &args.output.out;
    let include_intercept = !args.collinearity.no_intercept;
    let th = thresholds(&args.collinearity);

    let homogeneity = homogeneity_report(&ds)?;
    for c in homogeneity.groups.iter().chain(std::iter::once(&homogeneity.pooled)) {
        match c.log_determinant {
            Some(ld) => println!("{:<12} trace = {:>12.4}  log-det = {:>10.4}", c.label, c.trace, ld),
            None => println!("{:<12} trace = {:>12.4}  log-det undefined (singular)", c.label, c.trace),
        }
    }
    let collinearity = collinearity_report(&ds, include_intercept, th)?;
    for f in &collinearity.flags {
        println!("flag: condition index {:.2} implicates {}", f.condition_index, f.implicated.join(", "));
    }

    if args.output.want_json() {
        write_json(dir, "homogeneity.json", &homogeneity)?;
        write_json(dir, "collinearity.json", &collinearity)?;
    }
    if args.output.want_csv() {
        write_scree_csv(&scree_data(&homogeneity), create(dir, "scree.csv")?)?;
        write_covariance_blocks_csv(&ds, create(dir, "covariance_blocks.csv")?)?;
        collinearity.write_csv(create(dir, "collinearity.csv")?, th.vdp)?;
    }
    if args.suggest_removals {
        let plan = suggest_removals(&collinearity, &ds, &args.collinearity.protected, include_intercept)?;
        println!("suggested removals: {}", if plan.removed.is_empty() { "none".to_string() } else { plan.removed.join(", ") });
        write_json(
            dir,
            "removals.json",
            &Removals {
                removed: &plan.removed,
                remaining_variables: plan.dataset.variable_labels(),
                protected: &args.collinearity.protected,
            },
        )?;
    }

    let mut m = data_manifest("diagnose", &args.data, &args.output, schema);
    collinearity_manifest(&mut m, &args.collinearity);
    m.suggest_removals = args.suggest_removals;
    write_json(dir, "manifest.json", &m)?;
    Ok(())
}

#[derive(Serialize)]
struct SimulationSummary {
    scenario: ScenarioConfig,
    reps: usize,
    #[serde(rename = "B")]
    b: usize,
    scheme: rmdda::Scheme,
    seed: u64,
    rejection_rates: Vec<rmdda::sim::RejectionRate>,
}

pub fn simulate(args: &SimulateArgs) -> CliResult<()> {
    setup(&args.output)?;
    let scenario: ScenarioConfig = read_json(&args.scenario)?;
    if args.reps < 50 {
        return Err(CliError::Usage("--reps must be at least 50".into()));
    }
    if args.iter == 0 {
        return Err(CliError::Usage("--iter must be at least 1".into()));
    }
    let opts = BootstrapOptions::new(args.iter, args.resampling.into(), 0);
    let experiment = run_experiment(&scenario, args.reps, &opts, args.seed)?;
    let mut rates = Vec::new();
    for effect in Effect::STANDARD {
        if let Ok(r) = experiment.rejection_rate(effect, args.alpha) {
            println!(
                "{:<12} rejection rate {:.4}  (99% CI {:.4}–{:.4}, {}/{})",
                effect, r.rate, r.lower, r.upper, r.rejections, r.reps
            );
            rates.push(r);
        }
    }
    let dir = &args.output.out;
    if args.output.want_csv() {
        experiment.write_csv(create(dir, "reps.csv")?)?;
    }
    write_json(
        dir,
        "summary.json",
        &SimulationSummary {
            scenario,
            reps: args.reps,
            b: args.iter,
            scheme: args.resampling.into(),
            seed: args.seed,
            rejection_rates: rates,
        },
    )?;
    let mut m = RunManifest::new("simulate", args.output.out.clone());
    m.scenario = Some(args.scenario.clone());
    m.iter = Some(args.iter);
    m.reps = Some(args.reps);
    m.resampling = Some(args.resampling);
    m.seed = Some(args.seed);
    m.alpha = Some(args.alpha);
    write_json(dir, "manifest.json", &m)?;
    Ok(())
}
