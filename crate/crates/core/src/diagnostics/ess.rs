use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::{check_chains, mean, variance, DiagnosticsError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EssResult {
    pub value: f64,
    /// Set when the pooled variance is zero; the value is then the draw count.
    pub degenerate: bool,
}

/// Σ_i x_i x_{i+t} for every lag t, via zero-padded FFT.
fn lagged_products(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let size = (2 * n).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(size);
    let inv = planner.plan_fft_inverse(size);
    let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
    buf.resize(size, Complex::new(0.0, 0.0));
    fwd.process(&mut buf);
    for c in buf.iter_mut() {
        *c = Complex::new(c.norm_sqr(), 0.0);
    }
    inv.process(&mut buf);
    buf[..n].iter().map(|c| c.re / size as f64).collect()
}

/// Variogram sums Σ_{i=t}^{n−1} (x_i − x_{i−t})² for t = 0..n−1.
fn variogram_sums(x: &[f64]) -> Vec<f64> {
    let m = mean(x);
    let c: Vec<f64> = x.iter().map(|v| v - m).collect();
    let n = c.len();
    let cross = lagged_products(&c);
    let mut prefix = vec![0.0; n + 1];
    for i in 0..n {
        prefix[i + 1] = prefix[i] + c[i] * c[i];
    }
    (0..n)
        .map(|t| {
            let tail = prefix[n] - prefix[t];
            let head = prefix[n - t];
            (tail + head - 2.0 * cross[t]).max(0.0)
        })
        .collect()
}

/// Multi-chain effective sample size from variogram autocorrelations with
/// Geyer's initial positive and monotone sequence truncation. Capped at C·S.
pub fn ess(chains: &[Vec<f64>]) -> Result<EssResult, DiagnosticsError> {
    let n = check_chains("ess", chains, 4)?;
    let m = chains.len();
    let total = (m * n) as f64;
    let nf = n as f64;

    let w = chains.iter().map(|c| variance(c)).sum::<f64>() / m as f64;
    let b_over_n = if m > 1 {
        let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
        variance(&means)
    } else {
        0.0
    };
    let var_plus = (nf - 1.0) / nf * w + b_over_n;
    if !(var_plus > 0.0) || !var_plus.is_finite() {
        return Ok(EssResult { value: total, degenerate: true });
    }

    let mut v = vec![0.0; n];
    for c in chains {
        for (acc, s) in v.iter_mut().zip(variogram_sums(c)) {
            *acc += s;
        }
    }
    let rho: Vec<f64> =
        (0..n).map(|t| 1.0 - v[t] / (m as f64 * (nf - t as f64)) / (2.0 * var_plus)).collect();

    // Geyer: pair sums Γ_k = ρ_2k + ρ_2k+1, truncated at the first negative,
    // then made monotone non-increasing.
    let mut sum_gamma = 0.0;
    let mut prev = f64::INFINITY;
    let mut k = 0;
    while 2 * k + 1 < n {
        let mut g = rho[2 * k] + rho[2 * k + 1];
        if g < 0.0 {
            break;
        }
        g = g.min(prev);
        prev = g;
        sum_gamma += g;
        k += 1;
    }
    let tau = (-1.0 + 2.0 * sum_gamma).max(1.0 / total);
    Ok(EssResult { value: (total / tau).min(total), degenerate: false })
}
