use std::collections::BTreeMap;

use super::quantile::quantiles;
use super::{contract, ess, mean, split_rhat, DiagnosticsError};
use crate::samples::SampleSet;

#[derive(Debug, Clone, PartialEq)]
pub struct ParamRow {
    pub name: String,
    pub index: usize,
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub q50: f64,
    pub q975: f64,
    pub ess: f64,
    pub rhat: f64,
    pub ess_degenerate: bool,
    pub rhat_degenerate: bool,
    pub error: Option<f64>,
    /// Parameter is only identified up to a relabeling of topics, so its
    /// multi-chain R̂ may reflect label switching rather than non-convergence.
    pub label_symmetric: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DiagnosticsReport {
    pub rows: Vec<ParamRow>,
}

impl DiagnosticsReport {
    /// Rows whose parameter name is in `names`.
    pub fn filter(&self, names: &[&str]) -> DiagnosticsReport {
        DiagnosticsReport { rows: self.rows.iter().filter(|r| names.contains(&r.name.as_str())).cloned().collect() }
    }

    /// Sets the label-symmetry caveat on rows of the named parameters.
    pub fn flag_label_symmetric(&mut self, names: &[&str]) {
        for r in &mut self.rows {
            r.label_symmetric |= names.contains(&r.name.as_str());
        }
    }
}

/// Per-column summaries. R̂ below 1 is floored at 1. With `truth`, each row
/// whose parameter appears there carries `mean − truth`.
pub fn diagnose(
    set: &SampleSet,
    truth: Option<&BTreeMap<String, Vec<f64>>>,
) -> Result<DiagnosticsReport, DiagnosticsError> {
    let mut rows = Vec::with_capacity(set.width());
    for col in 0..set.width() {
        let (name, index) = set.column_label(col);
        let chains = set.by_chain(col);
        let pooled: Vec<f64> = chains.concat();
        let m = mean(&pooled);
        let sd = if pooled.len() > 1 {
            (pooled.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (pooled.len() - 1) as f64).sqrt()
        } else {
            0.0
        };
        let q = quantiles(&pooled, &[0.025, 0.5, 0.975]);
        let e = ess(&chains)?;
        let r = split_rhat(&chains)?;
        let error = truth.and_then(|t| t.get(name)).and_then(|v| v.get(index)).map(|t| m - t);
        rows.push(ParamRow {
            name: name.to_string(),
            index,
            mean: m,
            sd,
            q025: q[0],
            q50: q[1],
            q975: q[2],
            ess: e.value,
            rhat: r.value.max(1.0),
            ess_degenerate: e.degenerate,
            rhat_degenerate: r.degenerate,
            error,
            label_symmetric: false,
        });
    }
    Ok(DiagnosticsReport { rows })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantileRow {
    pub mean: f64,
    pub q05: f64,
    pub q50: f64,
    pub q95: f64,
}

impl QuantileRow {
    pub fn of(values: &[f64]) -> QuantileRow {
        if values.is_empty() {
            return QuantileRow { mean: f64::NAN, q05: f64::NAN, q50: f64::NAN, q95: f64::NAN };
        }
        let q = quantiles(values, &[0.05, 0.5, 0.95]);
        QuantileRow { mean: mean(values), q05: q[0], q50: q[1], q95: q[2] }
    }
}

/// Mean and 5/50/95% quantiles of errors, ESS and R̂, plus the fraction of R̂ above 1.1.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorSummary {
    pub error: QuantileRow,
    pub ess: QuantileRow,
    pub rhat: QuantileRow,
    pub frac_rhat_above: f64,
    pub count: usize,
}

pub const RHAT_THRESHOLD: f64 = 1.1;

pub fn error_summary(
    report: &DiagnosticsReport,
    truth: &BTreeMap<String, Vec<f64>>,
) -> Result<ErrorSummary, DiagnosticsError> {
    let mut errors = Vec::with_capacity(report.rows.len());
    for r in &report.rows {
        let t = truth
            .get(&r.name)
            .and_then(|v| v.get(r.index))
            .ok_or_else(|| contract("error_summary", format!("no truth for {}[{}]", r.name, r.index)))?;
        errors.push(r.mean - t);
    }
    Ok(summarize(report, errors))
}

/// Summary over several reports (for example one per replication), pooled.
pub fn pooled_error_summary(
    parts: &[(DiagnosticsReport, BTreeMap<String, Vec<f64>>)],
) -> Result<ErrorSummary, DiagnosticsError> {
    let mut all = DiagnosticsReport::default();
    let mut errors = Vec::new();
    for (report, truth) in parts {
        error_summary(report, truth)?;
        for r in &report.rows {
            errors.push(r.mean - truth[&r.name][r.index]);
        }
        all.rows.extend(report.rows.iter().cloned());
    }
    Ok(summarize(&all, errors))
}

fn summarize(report: &DiagnosticsReport, errors: Vec<f64>) -> ErrorSummary {
    let ess: Vec<f64> = report.rows.iter().map(|r| r.ess).collect();
    let rhat: Vec<f64> = report.rows.iter().map(|r| r.rhat).collect();
    let above = rhat.iter().filter(|&&r| r > RHAT_THRESHOLD).count();
    ErrorSummary {
        error: QuantileRow::of(&errors),
        ess: QuantileRow::of(&ess),
        rhat: QuantileRow::of(&rhat),
        frac_rhat_above: if rhat.is_empty() { 0.0 } else { above as f64 / rhat.len() as f64 },
        count: report.rows.len(),
    }
}
