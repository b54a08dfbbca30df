//! Convergence diagnostics, posterior summaries, topic matching and the
//! two-step regression bootstrap.

mod bootstrap;
mod ess;
mod matching;
mod quantile;
mod relabel;
mod report;
mod rhat;

pub use bootstrap::{ols, two_step_bootstrap, BootstrapResult, OlsFit};
pub use ess::{ess, EssResult};
pub use matching::{match_topics, Distance, TopicMatching};
pub use quantile::{credible_interval, quantile};
pub use report::{
    diagnose, error_summary, pooled_error_summary, DiagnosticsReport, ErrorSummary, ParamRow, QuantileRow,
    RHAT_THRESHOLD,
};
pub use relabel::{align_chains, label_axis, relabel, topic_profiles, LabelAxis};
pub use rhat::{split_rhat, RhatResult};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DiagnosticsError {
    #[error("{op}: {message}")]
    Contract { op: &'static str, message: String },
}

pub(crate) fn contract(op: &'static str, message: impl Into<String>) -> DiagnosticsError {
    DiagnosticsError::Contract { op, message: message.into() }
}

pub(crate) fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Unbiased sample variance.
pub(crate) fn variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() as f64 - 1.0)
}

fn check_chains(op: &'static str, chains: &[Vec<f64>], min_len: usize) -> Result<usize, DiagnosticsError> {
    let n = chains.first().map(Vec::len).ok_or_else(|| contract(op, "no chains"))?;
    if chains.iter().any(|c| c.len() != n) {
        return Err(contract(op, "chains differ in length"));
    }
    if n < min_len {
        return Err(contract(op, format!("need at least {min_len} draws per chain, got {n}")));
    }
    Ok(n)
}
