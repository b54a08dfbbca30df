use super::{contract, DiagnosticsError};

/// Linearly interpolated quantile of sorted data: h = (n − 1)p.
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn quantile(draws: &[f64], p: f64) -> Result<f64, DiagnosticsError> {
    if draws.is_empty() {
        return Err(contract("quantile", "no draws"));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(contract("quantile", format!("probability {p} outside [0, 1]")));
    }
    let mut sorted = draws.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(quantile_sorted(&sorted, p))
}

pub(crate) fn quantiles(draws: &[f64], ps: &[f64]) -> Vec<f64> {
    let mut sorted = draws.to_vec();
    sorted.sort_by(f64::total_cmp);
    ps.iter().map(|&p| quantile_sorted(&sorted, p)).collect()
}

/// Central interval with tail mass (1 − level)/2 on each side. Requires at
/// least 2/(1 − level) draws (40 for the default 0.95).
pub fn credible_interval(draws: &[f64], level: f64) -> Result<(f64, f64), DiagnosticsError> {
    if !(level > 0.0 && level < 1.0) {
        return Err(contract("credible_interval", format!("level {level} outside (0, 1)")));
    }
    let need = (2.0 / (1.0 - level) - 1e-9).ceil() as usize;
    if draws.len() < need {
        return Err(contract(
            "credible_interval",
            format!("{} draws, need at least {need} for level {level}", draws.len()),
        ));
    }
    let tail = (1.0 - level) / 2.0;
    let q = quantiles(draws, &[tail, 1.0 - tail]);
    Ok((q[0], q[1]))
}
