//! CSV and JSON file formats for datasets, draws, reports and run manifests.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::diagnostics::{DiagnosticsReport, ErrorSummary, QuantileRow};
use crate::models::{CovariateSet, DocumentTermMatrix, ModelError, Response, SurveyPanel};
use crate::samples::{ParamInfo, SampleSet};
use crate::simgen::SimTruth;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: u64, message: String },
    #[error("{path}: {source}")]
    File { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Invalid(String),
}

impl IoError {
    fn parse(path: &Path, line: u64, message: impl Into<String>) -> Self {
        IoError::Parse { path: path.to_path_buf(), line, message: message.into() }
    }

    fn file(path: &Path, source: std::io::Error) -> Self {
        IoError::File { path: path.to_path_buf(), source }
    }
}

impl From<ModelError> for IoError {
    fn from(e: ModelError) -> Self {
        IoError::Invalid(e.to_string())
    }
}

pub const DTM_HEADER: [&str; 3] = ["doc_id", "term_id", "count"];
pub const SAMPLES_HEADER: [&str; 5] = ["chain", "draw", "name", "index", "value"];
pub const REPORT_HEADER: [&str; 9] = ["name", "index", "mean", "sd", "q025", "q50", "q975", "ess", "rhat"];

/// Writes `bytes` to `path` through a temporary sibling and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| IoError::file(dir, e))?;
    let name = path.file_name().ok_or_else(|| IoError::Invalid(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let mut f = fs::File::create(&tmp).map_err(|e| IoError::file(&tmp, e))?;
    f.write_all(bytes).and_then(|_| f.sync_all()).map_err(|e| IoError::file(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| IoError::file(path, e))
}

/// Hex SHA-256 of a file's bytes.
pub fn file_digest(path: &Path) -> Result<String, IoError> {
    let bytes = fs::read(path).map_err(|e| IoError::file(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Records of a CSV file with its header checked; yields (line number, record).
fn read_csv(path: &Path, expected: Option<&[&str]>) -> Result<(Vec<String>, Vec<(u64, csv::StringRecord)>), IoError> {
    let file = fs::File::open(path).map_err(|e| IoError::file(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(file);
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| IoError::parse(path, 1, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if header.iter().all(|h| h.is_empty()) {
        return Err(IoError::parse(path, 1, "missing header"));
    }
    if let Some(exp) = expected {
        if header.iter().map(String::as_str).ne(exp.iter().copied()) {
            return Err(IoError::parse(path, 1, format!("header must be '{}', found '{}'", exp.join(","), header.join(","))));
        }
    }
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            IoError::parse(path, line, e.to_string())
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != header.len() {
            return Err(IoError::parse(path, line, format!("expected {} fields, found {}", header.len(), rec.len())));
        }
        rows.push((line, rec));
    }
    Ok((header, rows))
}

fn field<T: std::str::FromStr>(path: &Path, line: u64, rec: &csv::StringRecord, i: usize, what: &str) -> Result<T, IoError> {
    let raw = &rec[i];
    raw.parse().map_err(|_| IoError::parse(path, line, format!("{what} '{raw}' is not a valid value")))
}

fn real(path: &Path, line: u64, rec: &csv::StringRecord, i: usize, what: &str) -> Result<f64, IoError> {
    let v: f64 = field(path, line, rec, i, what)?;
    if !v.is_finite() {
        return Err(IoError::parse(path, line, format!("{what} must be finite")));
    }
    Ok(v)
}

fn to_csv(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>, IoError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(|e| IoError::Invalid(e.to_string()))?;
    for r in rows {
        w.write_record(&r).map_err(|e| IoError::Invalid(e.to_string()))?;
    }
    w.into_inner().map_err(|e| IoError::Invalid(e.to_string()))
}

/// Exact decimal rendering with 17 significant digits.
pub fn format_real(v: f64) -> String {
    format!("{v:.16e}")
}

/// Reads `doc_id,term_id,count`. Without explicit sizes, D and V are one past
/// the largest ids seen.
pub fn load_dtm(path: &Path) -> Result<DocumentTermMatrix, IoError> {
    load_dtm_sized(path, None, None)
}

pub fn load_dtm_sized(path: &Path, docs: Option<usize>, terms: Option<usize>) -> Result<DocumentTermMatrix, IoError> {
    let (_, rows) = read_csv(path, Some(&DTM_HEADER))?;
    let mut entries = Vec::with_capacity(rows.len());
    let mut seen = HashMap::with_capacity(rows.len());
    for (line, rec) in &rows {
        let d: usize = field(path, *line, rec, 0, "doc_id")?;
        let v: usize = field(path, *line, rec, 1, "term_id")?;
        let c: u64 = field(path, *line, rec, 2, "count")?;
        if c < 1 {
            return Err(IoError::parse(path, *line, "count must be at least 1"));
        }
        if docs.is_some_and(|n| d >= n) || terms.is_some_and(|n| v >= n) {
            return Err(IoError::parse(path, *line, format!("id ({d}, {v}) out of range")));
        }
        if let Some(first) = seen.insert((d, v), *line) {
            return Err(IoError::parse(path, *line, format!("duplicate (doc, term) pair ({d}, {v}), first on line {first}")));
        }
        entries.push((d, v, c));
    }
    let d = docs.unwrap_or_else(|| entries.iter().map(|e| e.0 + 1).max().unwrap_or(0));
    let v = terms.unwrap_or_else(|| entries.iter().map(|e| e.1 + 1).max().unwrap_or(0));
    let dtm = DocumentTermMatrix::new(d, v, entries)?;
    assert_eq!(dtm.entries().len(), rows.len(), "every row becomes one entry");
    Ok(dtm)
}

pub fn write_dtm(path: &Path, dtm: &DocumentTermMatrix) -> Result<(), IoError> {
    let rows = dtm.entries().iter().map(|&(d, v, c)| vec![d.to_string(), v.to_string(), c.to_string()]);
    write_atomic(path, &to_csv(&DTM_HEADER, rows)?)
}

/// Reads `doc_id,<name>,…`. Column `y` is the outcome, columns starting with
/// `q_` are outcome covariates and every other column is a topic covariate.
/// Each document 0..D−1 must appear exactly once.
pub fn load_covariates(path: &Path) -> Result<CovariateSet, IoError> {
    let (header, rows) = read_csv(path, None)?;
    if header[0] != "doc_id" {
        return Err(IoError::parse(path, 1, "first column must be doc_id"));
    }
    let mut g_cols = Vec::new();
    let mut q_cols = Vec::new();
    let mut y_col = None;
    for (i, name) in header.iter().enumerate().skip(1) {
        if name.is_empty() || header[..i].contains(name) {
            return Err(IoError::parse(path, 1, format!("column name '{name}' is empty or repeated")));
        }
        match name.as_str() {
            "y" => y_col = Some(i),
            n if n.starts_with("q_") => q_cols.push(i),
            _ => g_cols.push(i),
        }
    }
    let n = rows.len();
    let mut slots: Vec<Option<(Vec<f64>, Vec<f64>, f64)>> = vec![None; n];
    for (line, rec) in &rows {
        let d: usize = field(path, *line, rec, 0, "doc_id")?;
        if d >= n {
            return Err(IoError::parse(path, *line, format!("doc_id {d} out of range for {n} rows")));
        }
        if slots[d].is_some() {
            return Err(IoError::parse(path, *line, format!("doc_id {d} repeated")));
        }
        let g = g_cols.iter().map(|&i| real(path, *line, rec, i, &header[i])).collect::<Result<_, _>>()?;
        let q = q_cols.iter().map(|&i| real(path, *line, rec, i, &header[i])).collect::<Result<_, _>>()?;
        let y = y_col.map(|i| real(path, *line, rec, i, "y")).transpose()?.unwrap_or(0.0);
        slots[d] = Some((g, q, y));
    }
    let filled: Vec<_> = slots.into_iter().map(|s| s.expect("n distinct ids below n")).collect();
    Ok(CovariateSet {
        g_names: g_cols.iter().map(|&i| header[i].clone()).collect(),
        g: filled.iter().map(|r| r.0.clone()).collect(),
        q_names: q_cols.iter().map(|&i| header[i].clone()).collect(),
        q: filled.iter().map(|r| r.1.clone()).collect(),
        y: y_col.map(|_| filled.iter().map(|r| r.2).collect()),
    })
}

pub fn write_covariates(path: &Path, cov: &CovariateSet) -> Result<(), IoError> {
    let mut header = vec!["doc_id".to_string()];
    header.extend(cov.g_names.iter().cloned());
    header.extend(cov.q_names.iter().cloned());
    if cov.y.is_some() {
        header.push("y".into());
    }
    let rows = (0..cov.docs()).map(|d| {
        let mut r = vec![d.to_string()];
        r.extend(cov.g[d].iter().map(|&v| format_real(v)));
        r.extend(cov.q[d].iter().map(|&v| format_real(v)));
        if let Some(y) = &cov.y {
            r.push(format_real(y[d]));
        }
        r
    });
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    write_atomic(path, &to_csv(&header, rows)?)
}

/// Optional pins for a survey file: period count and answer categories per question.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SurveyShape {
    pub periods: Option<usize>,
    pub categories: Option<Vec<usize>>,
}

/// Reads `resp_id,period,q0,…,q{J−1}`. Unpinned category counts are one past
/// the largest observed code; unpinned period count one past the largest period.
pub fn load_survey(path: &Path, shape: &SurveyShape) -> Result<SurveyPanel, IoError> {
    let (header, rows) = read_csv(path, None)?;
    let j = header.len().saturating_sub(2);
    let expected: Vec<String> =
        ["resp_id".to_string(), "period".to_string()].into_iter().chain((0..j).map(|i| format!("q{i}"))).collect();
    if j == 0 || header != expected {
        return Err(IoError::parse(path, 1, format!("header must be 'resp_id,period,q0,…', found '{}'", header.join(","))));
    }
    if let Some(c) = &shape.categories {
        if c.len() != j {
            return Err(IoError::Invalid(format!("{}: {j} questions but {} pinned category counts", path.display(), c.len())));
        }
    }
    let mut responses = Vec::with_capacity(rows.len());
    for (line, rec) in &rows {
        let respondent: u64 = field(path, *line, rec, 0, "resp_id")?;
        let period: usize = field(path, *line, rec, 1, "period")?;
        if shape.periods.is_some_and(|t| period >= t) {
            return Err(IoError::parse(path, *line, format!("period {period} out of range")));
        }
        let answers: Vec<usize> = (0..j).map(|q| field(path, *line, rec, q + 2, &header[q + 2])).collect::<Result<_, _>>()?;
        if let Some(c) = &shape.categories {
            if let Some(q) = (0..j).find(|&q| answers[q] >= c[q]) {
                return Err(IoError::parse(
                    path,
                    *line,
                    format!("respondent {respondent}: q{q} code {} is not below {}", answers[q], c[q]),
                ));
            }
        }
        responses.push(Response { respondent, period, answers });
    }
    let periods = shape.periods.unwrap_or_else(|| responses.iter().map(|r| r.period + 1).max().unwrap_or(0));
    let categories = shape.categories.clone().unwrap_or_else(|| {
        (0..j).map(|q| responses.iter().map(|r| r.answers[q] + 1).max().unwrap_or(0)).collect()
    });
    let panel = SurveyPanel::new(periods, categories, responses)?;
    assert_eq!(panel.responses().len(), rows.len(), "every row becomes one response");
    Ok(panel)
}

pub fn write_survey(path: &Path, panel: &SurveyPanel) -> Result<(), IoError> {
    let header: Vec<String> =
        ["resp_id".to_string(), "period".to_string()].into_iter().chain((0..panel.questions()).map(|i| format!("q{i}"))).collect();
    let rows = panel.responses().iter().map(|r| {
        let mut row = vec![r.respondent.to_string(), r.period.to_string()];
        row.extend(r.answers.iter().map(usize::to_string));
        row
    });
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    write_atomic(path, &to_csv(&header, rows)?)
}

pub fn write_samples(path: &Path, set: &SampleSet) -> Result<(), IoError> {
    let mut rows = Vec::with_capacity(set.chains() * set.draws() * set.width());
    for c in 0..set.chains() {
        for d in 0..set.draws() {
            for (col, v) in set.draw(c, d).iter().enumerate() {
                let (name, index) = set.column_label(col);
                rows.push(vec![c.to_string(), d.to_string(), name.to_string(), index.to_string(), format_real(*v)]);
            }
        }
    }
    write_atomic(path, &to_csv(&SAMPLES_HEADER, rows)?)
}

/// Reads draws back. `params` gives names and shapes in column order; without
/// it each parameter becomes a vector of its largest index plus one, in order
/// of first appearance.
pub fn load_samples(path: &Path, params: Option<&[ParamInfo]>) -> Result<SampleSet, IoError> {
    let (_, rows) = read_csv(path, Some(&SAMPLES_HEADER))?;
    let mut parsed = Vec::with_capacity(rows.len());
    let mut order: Vec<String> = Vec::new();
    let mut extent: HashMap<String, usize> = HashMap::new();
    let (mut chains, mut draws) = (0, 0);
    for (line, rec) in &rows {
        let c: usize = field(path, *line, rec, 0, "chain")?;
        let d: usize = field(path, *line, rec, 1, "draw")?;
        let name = rec[2].to_string();
        let i: usize = field(path, *line, rec, 3, "index")?;
        let v: f64 = field(path, *line, rec, 4, "value")?;
        if !extent.contains_key(&name) {
            order.push(name.clone());
        }
        let e = extent.entry(name.clone()).or_insert(0);
        *e = (*e).max(i + 1);
        chains = chains.max(c + 1);
        draws = draws.max(d + 1);
        parsed.push((*line, c, d, name, i, v));
    }
    let params: Vec<ParamInfo> = match params {
        Some(p) => p.to_vec(),
        None => order.iter().map(|n| ParamInfo::new(n.clone(), &[extent[n]])).collect(),
    };
    let mut set = SampleSet::new(params, chains, draws);
    let mut filled = vec![false; chains * draws * set.width()];
    for (line, c, d, name, i, v) in parsed {
        let col = set.column(&name, i).ok_or_else(|| IoError::parse(path, line, format!("unknown parameter entry {name}[{i}]")))?;
        let slot = (c * draws + d) * set.width() + col;
        if std::mem::replace(&mut filled[slot], true) {
            return Err(IoError::parse(path, line, format!("repeated value for chain {c}, draw {d}, {name}[{i}]")));
        }
        set.set_value(c, d, col, v);
    }
    if let Some(missing) = filled.iter().position(|f| !f) {
        let w = set.width();
        let (name, index) = set.column_label(missing % w);
        return Err(IoError::Invalid(format!(
            "{}: no value for chain {}, draw {}, {name}[{index}]",
            path.display(),
            missing / w / draws,
            missing / w % draws
        )));
    }
    Ok(set)
}

pub fn write_report(path: &Path, report: &DiagnosticsReport) -> Result<(), IoError> {
    let with_error = report.rows.iter().any(|r| r.error.is_some());
    let mut header = REPORT_HEADER.to_vec();
    if with_error {
        header.push("error");
    }
    let rows = report.rows.iter().map(|r| {
        let mut row = vec![r.name.clone(), r.index.to_string()];
        row.extend([r.mean, r.sd, r.q025, r.q50, r.q975, r.ess, r.rhat].iter().map(|&v| format_real(v)));
        if with_error {
            row.push(r.error.map(format_real).unwrap_or_default());
        }
        row
    });
    write_atomic(path, &to_csv(&header, rows)?)
}

pub const SUMMARY_HEADER: [&str; 6] = ["quantity", "mean", "q05", "q50", "q95", "frac_rhat_above_1.1"];

/// Error, ESS and R̂ quantile rows of an error summary.
pub fn write_summary(path: &Path, summary: &ErrorSummary) -> Result<(), IoError> {
    let row = |name: &str, q: &QuantileRow, frac: Option<f64>| {
        let mut r = vec![name.to_string()];
        r.extend([q.mean, q.q05, q.q50, q.q95].iter().map(|&v| format_real(v)));
        r.push(frac.map(format_real).unwrap_or_default());
        r
    };
    let rows = vec![
        row("error", &summary.error, Some(summary.frac_rhat_above)),
        row("ess", &summary.ess, None),
        row("rhat", &summary.rhat, None),
    ];
    write_atomic(path, &to_csv(&SUMMARY_HEADER, rows)?)
}

/// Any table of named columns, written with full precision.
pub fn write_table(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<(), IoError> {
    write_atomic(path, &to_csv(header, rows.iter().cloned())?)
}

pub fn write_truth(path: &Path, truth: &SimTruth) -> Result<(), IoError> {
    let text = serde_json::to_string_pretty(truth).map_err(|e| IoError::Invalid(e.to_string()))?;
    write_atomic(path, text.as_bytes())
}

pub fn load_truth(path: &Path) -> Result<SimTruth, IoError> {
    let text = fs::read_to_string(path).map_err(|e| IoError::file(path, e))?;
    serde_json::from_str(&text).map_err(|e| IoError::parse(path, e.line() as u64, e.to_string()))
}

/// Flat record of a run: scalar settings under dotted keys, file digests
/// under `digest.<file>` and parameter shapes under `param.<name>`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RunManifest {
    pub entries: BTreeMap<String, Value>,
}

impl RunManifest {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, key: impl Into<String>, value: impl Into<Value>) {
        self.entries.insert(key.into(), value.into());
    }

    pub fn get(&self, key: &str) -> Option<&Value> {
        self.entries.get(key)
    }

    pub fn get_str(&self, key: &str) -> Option<&str> {
        self.entries.get(key).and_then(Value::as_str)
    }

    pub fn get_u64(&self, key: &str) -> Option<u64> {
        self.entries.get(key).and_then(Value::as_u64)
    }

    pub fn get_f64(&self, key: &str) -> Option<f64> {
        self.entries.get(key).and_then(Value::as_f64)
    }

    /// Records the digest of `dir/file` under `digest.<file>`.
    pub fn add_digest(&mut self, dir: &Path, file: &str) -> Result<(), IoError> {
        let d = file_digest(&dir.join(file))?;
        self.set(format!("digest.{file}"), d);
        Ok(())
    }

    /// Checks every `digest.<file>` against `dir/file`.
    pub fn verify(&self, dir: &Path) -> Result<(), IoError> {
        for (key, value) in &self.entries {
            if let Some(file) = key.strip_prefix("digest.") {
                let expected = value.as_str().unwrap_or_default();
                let actual = file_digest(&dir.join(file))?;
                if actual != expected {
                    return Err(IoError::Invalid(format!("{}: digest mismatch for {file}", dir.display())));
                }
            }
        }
        Ok(())
    }

    pub fn set_params(&mut self, params: &[ParamInfo]) {
        let order: Vec<Value> = params.iter().map(|p| Value::from(p.name.clone())).collect();
        self.set("params", order);
        for p in params {
            self.set(format!("param.{}", p.name), p.shape.clone());
        }
    }

    /// Parameter names and shapes in column order.
    pub fn params(&self) -> Option<Vec<ParamInfo>> {
        let names = self.entries.get("params")?.as_array()?;
        names
            .iter()
            .map(|n| {
                let name = n.as_str()?;
                let shape: Vec<usize> = self
                    .entries
                    .get(&format!("param.{name}"))?
                    .as_array()?
                    .iter()
                    .map(|v| v.as_u64().map(|x| x as usize))
                    .collect::<Option<_>>()?;
                Some(ParamInfo::new(name, &shape))
            })
            .collect()
    }

    pub fn write(&self, path: &Path) -> Result<(), IoError> {
        let mut text = serde_json::to_string_pretty(self).map_err(|e| IoError::Invalid(e.to_string()))?;
        text.push('\n');
        write_atomic(path, text.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self, IoError> {
        let text = fs::read_to_string(path).map_err(|e| IoError::file(path, e))?;
        serde_json::from_str(&text).map_err(|e| IoError::parse(path, e.line() as u64, e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, text).unwrap();
        p
    }

    fn parse_line(err: IoError) -> u64 {
        match err {
            IoError::Parse { line, .. } => line,
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn dtm_rows_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "dtm.csv", "doc_id,term_id,count\n0,3,2\n1,0,1\n");
        let dtm = load_dtm(&p).unwrap();
        assert_eq!((dtm.docs(), dtm.terms()), (2, 4));
        assert_eq!(dtm.dense_row(0), vec![0, 0, 0, 2]);

        let cases = [
            ("doc,term,count\n0,0,1\n", 1),
            ("doc_id,term_id,count\n0,0,1\n0,0,2\n", 3),
            ("doc_id,term_id,count\n0,0,1\n0,1,0\n", 3),
            ("doc_id,term_id,count\n0,x,1\n", 2),
            ("doc_id,term_id,count\n0,-1,1\n", 2),
            ("", 1),
        ];
        for (text, line) in cases {
            let p = write(dir.path(), "bad.csv", text);
            assert_eq!(parse_line(load_dtm(&p).unwrap_err()), line, "{text:?}");
        }
        let p = write(dir.path(), "dtm.csv", "doc_id,term_id,count\n0,5,1\n");
        assert_eq!(parse_line(load_dtm_sized(&p, Some(1), Some(3)).unwrap_err()), 2);
        assert!(matches!(load_dtm(&dir.path().join("missing.csv")), Err(IoError::File { .. })));
    }

    #[test]
    fn covariates_split_columns() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "cov.csv", "doc_id,g,q_a,y\n1,0.5,2,3.5\n0,-1,1e-3,0\n");
        let c = load_covariates(&p).unwrap();
        assert_eq!(c.g_names, vec!["g"]);
        assert_eq!(c.q_names, vec!["q_a"]);
        assert_eq!(c.g, vec![vec![-1.0], vec![0.5]]);
        assert_eq!(c.y, Some(vec![0.0, 3.5]));
        let out = dir.path().join("cov2.csv");
        write_covariates(&out, &c).unwrap();
        assert_eq!(load_covariates(&out).unwrap(), c);

        let p = write(dir.path(), "bad.csv", "doc_id,g\n0,1\n0,2\n");
        assert_eq!(parse_line(load_covariates(&p).unwrap_err()), 3);
        let p = write(dir.path(), "bad.csv", "doc_id,g\n0,abc\n");
        assert_eq!(parse_line(load_covariates(&p).unwrap_err()), 2);
    }

    #[test]
    fn survey_codes_and_pins() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "s.csv", "resp_id,period,q0,q1\n0,0,1,2\n1,1,0,0\n2,1,1,1\n");
        let panel = load_survey(&p, &SurveyShape::default()).unwrap();
        assert_eq!(panel.categories(), &[2, 3]);
        assert_eq!(panel.periods(), 2);
        let pinned = SurveyShape { periods: Some(2), categories: Some(vec![2, 2]) };
        let err = load_survey(&p, &pinned).unwrap_err();
        assert_eq!(parse_line(err), 2);
        let out = dir.path().join("s2.csv");
        write_survey(&out, &panel).unwrap();
        assert_eq!(load_survey(&out, &SurveyShape::default()).unwrap(), panel);
        let p = write(dir.path(), "bad.csv", "resp_id,period,a\n0,0,1\n");
        assert_eq!(parse_line(load_survey(&p, &SurveyShape::default()).unwrap_err()), 1);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn samples_round_trip_exactly(values in proptest::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 2 * 3 * 5)) {
            let params = vec![ParamInfo::new("a", &[2, 2]), ParamInfo::new("s", &[])];
            let mut set = SampleSet::new(params.clone(), 2, 3);
            for (i, v) in values.iter().enumerate() {
                set.set_value(i / 15, i / 5 % 3, i % 5, *v);
            }
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("samples.csv");
            write_samples(&p, &set).unwrap();
            let back = load_samples(&p, Some(&params)).unwrap();
            for c in 0..2 {
                for d in 0..3 {
                    prop_assert_eq!(back.draw(c, d), set.draw(c, d));
                }
            }
        }
    }

    #[test]
    fn samples_without_shapes_and_with_gaps() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "s.csv", "chain,draw,name,index,value\n0,0,b,1,2\n0,0,b,0,1\n0,0,a,0,3\n");
        let set = load_samples(&p, None).unwrap();
        assert_eq!(set.params()[0], ParamInfo::new("b", &[2]));
        assert_eq!(set.draw(0, 0), &[1.0, 2.0, 3.0]);
        let p = write(dir.path(), "s.csv", "chain,draw,name,index,value\n0,0,a,0,1\n0,1,a,1,1\n");
        assert!(matches!(load_samples(&p, None), Err(IoError::Invalid(_))));
        let p = write(dir.path(), "s.csv", "chain,draw,name,index,value\n0,0,a,0,1\n0,0,a,0,2\n");
        assert_eq!(parse_line(load_samples(&p, None).unwrap_err()), 3);
    }

    #[test]
    fn manifest_digests_and_shapes() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "data.csv", "x\n1\n");
        let mut m = RunManifest::new();
        m.set("family", "stm");
        m.set("seed", 7u64);
        m.set_params(&[ParamInfo::new("theta", &[3, 2]), ParamInfo::new("s", &[])]);
        m.add_digest(dir.path(), "data.csv").unwrap();
        let path = dir.path().join("manifest.json");
        m.write(&path).unwrap();
        let back = RunManifest::load(&path).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.params().unwrap()[0].shape, vec![3, 2]);
        assert_eq!(back.get_u64("seed"), Some(7));
        back.verify(dir.path()).unwrap();
        write(dir.path(), "data.csv", "x\n2\n");
        assert!(back.verify(dir.path()).is_err());
    }

    #[test]
    fn report_header_gains_error_column_with_truth() {
        use crate::diagnostics::diagnose;
        let mut set = SampleSet::new(vec![ParamInfo::new("a", &[1])], 1, 50);
        for d in 0..50 {
            set.set_value(0, d, 0, (d as f64).sin());
        }
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("report.csv");
        write_report(&p, &diagnose(&set, None).unwrap()).unwrap();
        assert!(fs::read_to_string(&p).unwrap().starts_with("name,index,mean,sd,q025,q50,q975,ess,rhat\n"));
        let truth: BTreeMap<String, Vec<f64>> = [("a".to_string(), vec![0.0])].into();
        write_report(&p, &diagnose(&set, Some(&truth)).unwrap()).unwrap();
        assert!(fs::read_to_string(&p).unwrap().starts_with("name,index,mean,sd,q025,q50,q975,ess,rhat,error\n"));
    }

    #[test]
    fn format_keeps_seventeen_digits() {
        assert_eq!(format_real(0.1), "1.0000000000000001e-1");
        for v in [std::f64::consts::PI, -1e-300, 123456789.123, f64::MIN_POSITIVE] {
            assert_eq!(format_real(v).parse::<f64>().unwrap(), v);
        }
    }
}
