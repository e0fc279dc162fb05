//! Repeated-measures data model and tabular ingestion.
//!
//! Every subject is stored as one dense vector of length `p·t` in
//! time-major order: the entry for time `k` and variable `s` (both 0-based)
//! sits at `k·p + s`. Stacking group means gives the `g·p·t` vector used by
//! the hypothesis matrices, with component `(i·t + k)·p + s`.

use std::collections::{HashMap, HashSet};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn default_na() -> String {
    "NA".to_string()
}

/// Maps one wide-format column onto a `(variable, time)` cell.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WideColumn {
    pub column: String,
    pub variable: String,
    pub time: String,
}

/// Column roles for long or wide input.
///
/// Long tables need `subject` and `time`. Wide tables take an explicit
/// `columns` mapping, or else derive column names as `"VAR (TIME)"` from
/// `variables` and `time_order`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub group: String,
    #[serde(default)]
    pub subject: Option<String>,
    #[serde(default)]
    pub time: Option<String>,
    pub variables: Vec<String>,
    #[serde(default)]
    pub time_order: Option<Vec<String>>,
    #[serde(default)]
    pub group_order: Option<Vec<String>>,
    #[serde(default)]
    pub columns: Option<Vec<WideColumn>>,
    /// Cell value treated as missing, in addition to the empty string.
    #[serde(default = "default_na")]
    pub na: String,
}

impl Schema {
    pub fn long(group: &str, subject: &str, time: &str, variables: &[&str]) -> Self {
        Schema {
            group: group.to_string(),
            subject: Some(subject.to_string()),
            time: Some(time.to_string()),
            variables: variables.iter().map(|v| v.to_string()).collect(),
            time_order: None,
            group_order: None,
            columns: None,
            na: default_na(),
        }
    }

    pub fn wide(group: &str, subject: Option<&str>, variables: &[&str], times: &[&str]) -> Self {
        Schema {
            group: group.to_string(),
            subject: subject.map(str::to_string),
            time: None,
            variables: variables.iter().map(|v| v.to_string()).collect(),
            time_order: Some(times.iter().map(|t| t.to_string()).collect()),
            group_order: None,
            columns: None,
            na: default_na(),
        }
    }

    fn check_unique(&self) -> Result<()> {
        check_unique_labels("variable", &self.variables)?;
        if let Some(order) = &self.time_order {
            check_unique_labels("time", order)?;
        }
        if let Some(order) = &self.group_order {
            check_unique_labels("group", order)?;
        }
        if self.variables.is_empty() {
            return Err(Error::Schema("no variables listed".into()));
        }
        Ok(())
    }
}

/// Wide column name for a `(variable, time)` cell, e.g. `"GOSE (2)"`.
pub fn cell_label(variable: &str, time: &str) -> String {
    format!("{variable} ({time})")
}

/// Bookkeeping from a load: how many subjects were seen and which were dropped.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct LoadReport {
    pub raw_subjects: usize,
    pub dropped_subjects: Vec<String>,
    /// Wide rows excluded because a cell did not parse as a number.
    pub non_numeric_rows: usize,
}

impl LoadReport {
    pub fn dropped_count(&self) -> usize {
        self.dropped_subjects.len()
    }
}

/// Complete-case repeated-measures data, grouped and in canonical order.
#[derive(Debug, Clone, PartialEq)]
pub struct RepeatedMeasuresDataset {
    group_labels: Vec<String>,
    time_labels: Vec<String>,
    variable_labels: Vec<String>,
    subject_ids: Vec<Vec<String>>,
    subjects: Vec<Vec<Vec<f64>>>,
}

fn check_unique_labels(kind: &str, labels: &[String]) -> Result<()> {
    let mut seen = HashSet::new();
    for l in labels {
        if !seen.insert(l.as_str()) {
            return Err(Error::Schema(format!("duplicate {kind} label {l:?}")));
        }
    }
    Ok(())
}

impl RepeatedMeasuresDataset {
    /// Builds a dataset from per-group subject vectors, checking every invariant.
    pub fn new(
        group_labels: Vec<String>,
        time_labels: Vec<String>,
        variable_labels: Vec<String>,
        subject_ids: Vec<Vec<String>>,
        subjects: Vec<Vec<Vec<f64>>>,
    ) -> Result<Self> {
        check_unique_labels("group", &group_labels)?;
        check_unique_labels("time", &time_labels)?;
        check_unique_labels("variable", &variable_labels)?;
        if group_labels.is_empty() || time_labels.is_empty() || variable_labels.is_empty() {
            return Err(Error::Data("dataset needs at least one group, time and variable".into()));
        }
        if subjects.len() != group_labels.len() || subject_ids.len() != group_labels.len() {
            return Err(Error::Data("one subject list per group is required".into()));
        }
        let len = time_labels.len() * variable_labels.len();
        for (i, group) in subjects.iter().enumerate() {
            if group.len() < 2 {
                return Err(Error::TooFewSubjects {
                    group: group_labels[i].clone(),
                    n: group.len(),
                });
            }
            if subject_ids[i].len() != group.len() {
                return Err(Error::Data("subject id count does not match subject count".into()));
            }
            for (j, x) in group.iter().enumerate() {
                if x.len() != len {
                    return Err(Error::Data(format!(
                        "subject {:?} has {} values, expected p·t = {len}",
                        subject_ids[i][j],
                        x.len()
                    )));
                }
                if x.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Data(format!(
                        "subject {:?} has non-finite values",
                        subject_ids[i][j]
                    )));
                }
            }
        }
        Ok(RepeatedMeasuresDataset {
            group_labels,
            time_labels,
            variable_labels,
            subject_ids,
            subjects,
        })
    }

    /// Convenience constructor with generated subject ids (`g{i}s{j}`).
    pub fn from_groups(
        group_labels: Vec<String>,
        time_labels: Vec<String>,
        variable_labels: Vec<String>,
        subjects: Vec<Vec<Vec<f64>>>,
    ) -> Result<Self> {
        let ids = subjects
            .iter()
            .enumerate()
            .map(|(i, g)| (0..g.len()).map(|j| format!("g{}s{}", i + 1, j + 1)).collect())
            .collect();
        Self::new(group_labels, time_labels, variable_labels, ids, subjects)
    }

    pub fn g(&self) -> usize {
        self.group_labels.len()
    }

    pub fn t(&self) -> usize {
        self.time_labels.len()
    }

    pub fn p(&self) -> usize {
        self.variable_labels.len()
    }

    /// Length of one subject vector.
    pub fn pt(&self) -> usize {
        self.p() * self.t()
    }

    pub fn group_sizes(&self) -> Vec<usize> {
        self.subjects.iter().map(Vec::len).collect()
    }

    /// Total sample size N.
    pub fn n_total(&self) -> usize {
        self.subjects.iter().map(Vec::len).sum()
    }

    pub fn group_labels(&self) -> &[String] {
        &self.group_labels
    }

    pub fn time_labels(&self) -> &[String] {
        &self.time_labels
    }

    pub fn variable_labels(&self) -> &[String] {
        &self.variable_labels
    }

    pub fn subject_ids(&self, group: usize) -> &[String] {
        &self.subject_ids[group]
    }

    /// All subject vectors of group `i`.
    pub fn group(&self, i: usize) -> &[Vec<f64>] {
        &self.subjects[i]
    }

    /// Canonical flat index of `(time, variable)` within a subject vector.
    pub fn index(&self, time: usize, variable: usize) -> usize {
        time * self.p() + variable
    }

    /// Labels of the `p·t` subject-vector components, `"VAR (TIME)"`.
    pub fn component_labels(&self) -> Vec<String> {
        let mut out = Vec::with_capacity(self.pt());
        for t in &self.time_labels {
            for v in &self.variable_labels {
                out.push(cell_label(v, t));
            }
        }
        out
    }

    /// Subject vector `X_ij` (0-based group and subject indices).
    pub fn subject_vector(&self, group: usize, subject: usize) -> Result<&[f64]> {
        let g = self.subjects.get(group).ok_or_else(|| {
            Error::OutOfRange(format!("group index {group} with g = {}", self.g()))
        })?;
        g.get(subject).map(Vec::as_slice).ok_or_else(|| {
            Error::OutOfRange(format!(
                "subject index {subject} in group {group} with n = {}",
                g.len()
            ))
        })
    }

    fn variable_index(&self, name: &str) -> Result<usize> {
        self.variable_labels
            .iter()
            .position(|v| v == name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown variable {name:?}")))
    }

    /// Keeps only the listed variables (in the given order) at every time point.
    pub fn select_variables(&self, names: &[&str]) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::InvalidArgument("no variables selected".into()));
        }
        let keep = names
            .iter()
            .map(|n| self.variable_index(n))
            .collect::<Result<Vec<_>>>()?;
        let p = self.p();
        let subjects = self
            .subjects
            .iter()
            .map(|g| {
                g.iter()
                    .map(|x| {
                        (0..self.t())
                            .flat_map(|k| keep.iter().map(move |&s| x[k * p + s]))
                            .collect()
                    })
                    .collect()
            })
            .collect();
        Self::new(
            self.group_labels.clone(),
            self.time_labels.clone(),
            keep.iter().map(|&s| self.variable_labels[s].clone()).collect(),
            self.subject_ids.clone(),
            subjects,
        )
    }

    /// Removes a variable at every time point. Complete data forbid dropping
    /// it at a single time only.
    pub fn drop_variable(&self, name: &str) -> Result<Self> {
        let idx = self.variable_index(name)?;
        if self.p() == 1 {
            return Err(Error::InvalidArgument(format!(
                "cannot drop {name:?}: it is the only variable"
            )));
        }
        let keep: Vec<&str> = self
            .variable_labels
            .iter()
            .enumerate()
            .filter(|&(s, _)| s != idx)
            .map(|(_, v)| v.as_str())
            .collect();
        self.select_variables(&keep)
    }

    /// Single-time-point dataset (t = 1) for the `k`-th time label.
    pub fn time_slice(&self, k: usize) -> Result<Self> {
        if k >= self.t() {
            return Err(Error::OutOfRange(format!("time index {k} with t = {}", self.t())));
        }
        let p = self.p();
        let subjects = self
            .subjects
            .iter()
            .map(|g| g.iter().map(|x| x[k * p..(k + 1) * p].to_vec()).collect())
            .collect();
        Self::new(
            self.group_labels.clone(),
            vec![self.time_labels[k].clone()],
            self.variable_labels.clone(),
            self.subject_ids.clone(),
            subjects,
        )
    }

    /// Schema matching the layout written by [`write_long`](Self::write_long).
    pub fn long_schema(&self) -> Schema {
        Schema {
            group: "group".into(),
            subject: Some("subject".into()),
            time: Some("time".into()),
            variables: self.variable_labels.clone(),
            time_order: Some(self.time_labels.clone()),
            group_order: Some(self.group_labels.clone()),
            columns: None,
            na: default_na(),
        }
    }

    /// Schema matching the layout written by [`write_wide`](Self::write_wide).
    pub fn wide_schema(&self) -> Schema {
        Schema {
            group: "group".into(),
            subject: Some("subject".into()),
            time: None,
            variables: self.variable_labels.clone(),
            time_order: Some(self.time_labels.clone()),
            group_order: Some(self.group_labels.clone()),
            columns: None,
            na: default_na(),
        }
    }

    fn check_reserved(&self, reserved: &[&str]) -> Result<()> {
        for v in &self.variable_labels {
            if reserved.contains(&v.as_str()) {
                return Err(Error::Schema(format!(
                    "variable name {v:?} clashes with a reserved column"
                )));
            }
        }
        Ok(())
    }

    /// Writes one row per (subject, time) with columns `group, subject, time, vars…`.
    pub fn write_long<W: Write>(&self, writer: W) -> Result<()> {
        self.check_reserved(&["group", "subject", "time"])?;
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["group".to_string(), "subject".into(), "time".into()];
        header.extend(self.variable_labels.iter().cloned());
        w.write_record(&header)?;
        let p = self.p();
        for (i, group) in self.subjects.iter().enumerate() {
            for (j, x) in group.iter().enumerate() {
                for (k, time) in self.time_labels.iter().enumerate() {
                    let mut row = vec![
                        self.group_labels[i].clone(),
                        self.subject_ids[i][j].clone(),
                        time.clone(),
                    ];
                    row.extend(x[k * p..(k + 1) * p].iter().map(|v| v.to_string()));
                    w.write_record(&row)?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Writes one row per subject with columns `group, subject, "VAR (TIME)"…`.
    pub fn write_wide<W: Write>(&self, writer: W) -> Result<()> {
        let labels = self.component_labels();
        let label_refs: Vec<&str> = labels.iter().map(String::as_str).collect();
        if label_refs.contains(&"group") || label_refs.contains(&"subject") {
            return Err(Error::Schema("cell label clashes with a reserved column".into()));
        }
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["group".to_string(), "subject".into()];
        header.extend(labels);
        w.write_record(&header)?;
        for (i, group) in self.subjects.iter().enumerate() {
            for (j, x) in group.iter().enumerate() {
                let mut row = vec![self.group_labels[i].clone(), self.subject_ids[i][j].clone()];
                row.extend(x.iter().map(|v| v.to_string()));
                w.write_record(&row)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

enum Cell {
    Missing,
    Value(f64),
    Invalid,
}

fn parse_cell(raw: &str, na: &str) -> Cell {
    let s = raw.trim();
    if s.is_empty() || s == na {
        return Cell::Missing;
    }
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() => Cell::Value(v),
        _ => Cell::Invalid,
    }
}

fn column_index(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Error::Schema(format!("column {name:?} not found in header")))
}

/// Orders labels by an explicit list when given, else by first appearance.
fn resolve_order(kind: &str, seen: Vec<String>, explicit: Option<&Vec<String>>) -> Result<Vec<String>> {
    match explicit {
        None => Ok(seen),
        Some(order) => {
            for s in &seen {
                if !order.contains(s) {
                    return Err(Error::Schema(format!(
                        "{kind} label {s:?} is not in the explicit {kind} order"
                    )));
                }
            }
            Ok(order.clone())
        }
    }
}

struct RawSubject {
    id: String,
    group: String,
    /// Values per time label, `None` for missing cells.
    cells: HashMap<String, Vec<Option<f64>>>,
}

fn assemble(
    raw: Vec<RawSubject>,
    group_seen: Vec<String>,
    time_labels: Vec<String>,
    schema: &Schema,
    non_numeric_rows: usize,
) -> Result<(RepeatedMeasuresDataset, LoadReport)> {
    let group_labels = resolve_order("group", group_seen, schema.group_order.as_ref())?;
    let g = group_labels.len();
    let mut ids: Vec<Vec<String>> = vec![Vec::new(); g];
    let mut subjects: Vec<Vec<Vec<f64>>> = vec![Vec::new(); g];
    let mut report = LoadReport {
        raw_subjects: raw.len(),
        dropped_subjects: Vec::new(),
        non_numeric_rows,
    };
    'subject: for s in raw {
        let gi = group_labels.iter().position(|l| *l == s.group).expect("group resolved");
        let mut x = Vec::with_capacity(time_labels.len() * schema.variables.len());
        for time in &time_labels {
            match s.cells.get(time) {
                Some(vals) if vals.iter().all(Option::is_some) => {
                    x.extend(vals.iter().map(|v| v.unwrap()));
                }
                _ => {
                    report.dropped_subjects.push(s.id);
                    continue 'subject;
                }
            }
        }
        ids[gi].push(s.id);
        subjects[gi].push(x);
    }
    for (i, group) in subjects.iter().enumerate() {
        if group.len() < 2 {
            return Err(Error::TooFewSubjects {
                group: group_labels[i].clone(),
                n: group.len(),
            });
        }
    }
    let ds = RepeatedMeasuresDataset::new(
        group_labels,
        time_labels,
        schema.variables.clone(),
        ids,
        subjects,
    )?;
    Ok((ds, report))
}

/// Loads a long table: one row per (subject, time).
///
/// Subjects missing any (time, variable) cell are dropped and listed in the
/// report. Non-numeric variable cells are hard errors.
pub fn load_long<R: Read>(source: R, schema: &Schema) -> Result<(RepeatedMeasuresDataset, LoadReport)> {
    schema.check_unique()?;
    let subject_col = schema
        .subject
        .as_deref()
        .ok_or_else(|| Error::Schema("long format needs a subject column".into()))?;
    let time_col = schema
        .time
        .as_deref()
        .ok_or_else(|| Error::Schema("long format needs a time column".into()))?;

    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(source);
    let headers = rdr.headers()?.clone();
    let gi = column_index(&headers, &schema.group)?;
    let si = column_index(&headers, subject_col)?;
    let ti = column_index(&headers, time_col)?;
    let vi = schema
        .variables
        .iter()
        .map(|v| column_index(&headers, v))
        .collect::<Result<Vec<_>>>()?;

    let mut raw: Vec<RawSubject> = Vec::new();
    let mut by_id: HashMap<String, usize> = HashMap::new();
    let mut group_seen: Vec<String> = Vec::new();
    let mut time_seen: Vec<String> = Vec::new();

    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let field = |i: usize| rec.get(i).unwrap_or("").trim().to_string();
        let (id, group, time) = (field(si), field(gi), field(ti));
        if id.is_empty() || group.is_empty() || time.is_empty() {
            return Err(Error::Data(format!(
                "row {}: empty subject, group or time",
                row + 2
            )));
        }
        let mut values = Vec::with_capacity(vi.len());
        for (&c, name) in vi.iter().zip(&schema.variables) {
            match parse_cell(rec.get(c).unwrap_or(""), &schema.na) {
                Cell::Missing => values.push(None),
                Cell::Value(v) => values.push(Some(v)),
                Cell::Invalid => {
                    return Err(Error::Data(format!(
                        "row {}: column {name:?} is not numeric",
                        row + 2
                    )))
                }
            }
        }
        if !group_seen.contains(&group) {
            group_seen.push(group.clone());
        }
        if !time_seen.contains(&time) {
            time_seen.push(time.clone());
        }
        let idx = *by_id.entry(id.clone()).or_insert_with(|| {
            raw.push(RawSubject {
                id: id.clone(),
                group: group.clone(),
                cells: HashMap::new(),
            });
            raw.len() - 1
        });
        let subject = &mut raw[idx];
        if subject.group != group {
            return Err(Error::SubjectInTwoGroups {
                subject: id,
                first: subject.group.clone(),
                second: group,
            });
        }
        if subject.cells.insert(time.clone(), values).is_some() {
            return Err(Error::DuplicateRow { subject: id, time });
        }
    }
    if raw.is_empty() {
        return Err(Error::Data("input has no data rows".into()));
    }
    let time_labels = resolve_order("time", time_seen, schema.time_order.as_ref())?;
    assemble(raw, group_seen, time_labels, schema, 0)
}

/// Loads a wide table: one row per subject, one column per (variable, time).
///
/// Rows with a missing cell are dropped as incomplete; rows with a
/// non-numeric cell are dropped and counted separately.
pub fn load_wide<R: Read>(source: R, schema: &Schema) -> Result<(RepeatedMeasuresDataset, LoadReport)> {
    schema.check_unique()?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(source);
    let headers = rdr.headers()?.clone();
    let gi = column_index(&headers, &schema.group)?;
    let si = match &schema.subject {
        Some(s) => Some(column_index(&headers, s)?),
        None => None,
    };

    let mapping: Vec<WideColumn> = match &schema.columns {
        Some(cols) => cols.clone(),
        None => {
            let times = schema.time_order.as_ref().ok_or_else(|| {
                Error::Schema("wide format needs either explicit columns or a time order".into())
            })?;
            times
                .iter()
                .flat_map(|t| {
                    schema.variables.iter().map(move |v| WideColumn {
                        column: cell_label(v, t),
                        variable: v.clone(),
                        time: t.clone(),
                    })
                })
                .collect()
        }
    };
    let mut time_seen: Vec<String> = Vec::new();
    for c in &mapping {
        if !schema.variables.contains(&c.variable) {
            return Err(Error::Schema(format!(
                "column {:?} maps to unlisted variable {:?}",
                c.column, c.variable
            )));
        }
        if !time_seen.contains(&c.time) {
            time_seen.push(c.time.clone());
        }
    }
    let time_labels = resolve_order("time", time_seen, schema.time_order.as_ref())?;

    // (variable, time) -> header index
    let mut gaps = Vec::new();
    let mut cell_cols: Vec<Vec<usize>> = Vec::with_capacity(time_labels.len());
    for t in &time_labels {
        let mut row = Vec::with_capacity(schema.variables.len());
        for v in &schema.variables {
            let col = mapping
                .iter()
                .find(|c| &c.variable == v && &c.time == t)
                .and_then(|c| headers.iter().position(|h| h == c.column));
            match col {
                Some(c) => row.push(c),
                None => gaps.push(format!("variable {v} lacks time {t}")),
            }
        }
        cell_cols.push(row);
    }
    if !gaps.is_empty() {
        return Err(Error::Schema(gaps.join("; ")));
    }

    let mut raw: Vec<RawSubject> = Vec::new();
    let mut seen_ids: HashSet<String> = HashSet::new();
    let mut group_seen: Vec<String> = Vec::new();
    let mut non_numeric = 0usize;
    'row: for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let group = rec.get(gi).unwrap_or("").trim().to_string();
        let id = match si {
            Some(c) => rec.get(c).unwrap_or("").trim().to_string(),
            None => format!("row{}", row + 1),
        };
        if group.is_empty() || id.is_empty() {
            return Err(Error::Data(format!("row {}: empty group or subject", row + 2)));
        }
        if !seen_ids.insert(id.clone()) {
            return Err(Error::DuplicateRow {
                subject: id,
                time: "(wide row)".into(),
            });
        }
        let mut cells = HashMap::new();
        for (t, cols) in time_labels.iter().zip(&cell_cols) {
            let mut vals = Vec::with_capacity(cols.len());
            for &c in cols {
                match parse_cell(rec.get(c).unwrap_or(""), &schema.na) {
                    Cell::Missing => vals.push(None),
                    Cell::Value(v) => vals.push(Some(v)),
                    Cell::Invalid => {
                        non_numeric += 1;
                        continue 'row;
                    }
                }
            }
            cells.insert(t.clone(), vals);
        }
        if !group_seen.contains(&group) {
            group_seen.push(group.clone());
        }
        raw.push(RawSubject { id, group, cells });
    }
    if raw.is_empty() {
        return Err(Error::Data("input has no usable data rows".into()));
    }
    assemble(raw, group_seen, time_labels, schema, non_numeric)
}
