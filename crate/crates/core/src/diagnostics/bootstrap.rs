use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use super::quantile::quantiles;
use super::{contract, DiagnosticsError};

#[derive(Debug, Clone, PartialEq)]
pub struct OlsFit {
    pub coef: Vec<f64>,
    pub se: Vec<f64>,
    /// Residual variance with n − p degrees of freedom.
    pub sigma2: f64,
}

/// Least squares of `y` on the rows of `design` (include the intercept column yourself).
pub fn ols(y: &[f64], design: &[Vec<f64>]) -> Result<OlsFit, DiagnosticsError> {
    let n = y.len();
    let p = design.first().map(Vec::len).unwrap_or(0);
    if design.len() != n || design.iter().any(|r| r.len() != p) {
        return Err(contract("ols", "design rows do not match the outcome"));
    }
    if n <= p || p == 0 {
        return Err(contract("ols", format!("{n} observations for {p} coefficients")));
    }
    let x = DMatrix::from_fn(n, p, |i, j| design[i][j]);
    let yv = DVector::from_column_slice(y);
    let xtx = x.transpose() * &x;
    let diag: Vec<f64> = (0..p).map(|j| xtx[(j, j)]).collect();
    let chol = xtx.cholesky().ok_or_else(|| contract("ols", "rank-deficient design"))?;
    // a pivot that is tiny relative to its column norm means collinear columns
    let l = chol.l_dirty();
    if (0..p).any(|j| !(l[(j, j)] * l[(j, j)] > 1e-10 * diag[j])) {
        return Err(contract("ols", "rank-deficient design"));
    }
    let coef = chol.solve(&(x.transpose() * &yv));
    let resid = &yv - &x * &coef;
    let sigma2 = resid.norm_squared() / (n - p) as f64;
    let inv = chol.inverse();
    let se = (0..p).map(|j| (sigma2 * inv[(j, j)]).sqrt()).collect();
    Ok(OlsFit { coef: coef.iter().copied().collect(), se, sigma2 })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapResult {
    /// Coefficient from the regression on the across-draw mean shares.
    pub point: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Two-step interval for one regression coefficient of log(θ_topic / θ_reference)
/// on an intercept plus `covariates`.
///
/// `theta_draws[s][d]` is document d's share vector at draw s. `coefficient`
/// indexes the design `[1, g_1, …]`, so 1 is the first covariate's slope. Each
/// draw's OLS fit contributes `resamples` normal draws N(γ̂ˢ, σ̂ˢ); the interval
/// is the pooled 2.5%/97.5% quantiles.
pub fn two_step_bootstrap<R: Rng>(
    theta_draws: &[Vec<Vec<f64>>],
    covariates: &[Vec<f64>],
    topic: usize,
    reference: usize,
    coefficient: usize,
    resamples: usize,
    rng: &mut R,
) -> Result<BootstrapResult, DiagnosticsError> {
    let s = theta_draws.len();
    if s == 0 || resamples == 0 {
        return Err(contract("two_step_bootstrap", "need at least one draw and one resample"));
    }
    let d = covariates.len();
    if theta_draws.iter().any(|t| t.len() != d) {
        return Err(contract("two_step_bootstrap", "theta draws and covariates disagree on document count"));
    }
    let design: Vec<Vec<f64>> = covariates.iter().map(|g| std::iter::once(1.0).chain(g.iter().copied()).collect()).collect();
    if coefficient >= design.first().map(Vec::len).unwrap_or(0) {
        return Err(contract("two_step_bootstrap", format!("coefficient {coefficient} out of range")));
    }
    let log_ratio = |theta: &[Vec<f64>]| -> Result<Vec<f64>, DiagnosticsError> {
        theta
            .iter()
            .map(|row| {
                let (a, b) = (row.get(topic), row.get(reference));
                match (a, b) {
                    (Some(&a), Some(&b)) if a > 0.0 && b > 0.0 => Ok((a / b).ln()),
                    _ => Err(contract("two_step_bootstrap", "topic shares must be positive")),
                }
            })
            .collect()
    };

    let k = theta_draws[0].first().map(Vec::len).unwrap_or(0);
    let mut mean_theta = vec![vec![0.0; k]; d];
    for draw in theta_draws {
        for (m, row) in mean_theta.iter_mut().zip(draw) {
            for (a, b) in m.iter_mut().zip(row) {
                *a += b / s as f64;
            }
        }
    }
    let point = ols(&log_ratio(&mean_theta)?, &design)?.coef[coefficient];

    let mut pooled = Vec::with_capacity(s * resamples);
    for draw in theta_draws {
        let fit = ols(&log_ratio(draw)?, &design)?;
        let (m, sd) = (fit.coef[coefficient], fit.se[coefficient]);
        for _ in 0..resamples {
            let z: f64 = rng.sample(StandardNormal);
            pooled.push(m + sd * z);
        }
    }
    let q = quantiles(&pooled, &[0.025, 0.975]);
    Ok(BootstrapResult { point, lower: q[0], upper: q[1] })
}
