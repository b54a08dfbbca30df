//! Log-density kernels and constrained↔unconstrained transforms.
//!
//! The plain `f64` kernels here are used for evaluation, data generation checks
//! and tests. The [`ad`] submodule holds the same densities recorded on an
//! autodiff tape, which is what the model log-joints are built from.

pub mod ad;
mod transforms;

pub use transforms::{TransformKind, TransformSpec};

use std::f64::consts::PI;

use thiserror::Error;

use crate::special::{ln_gamma, ln_multivariate_beta};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DistributionError {
    #[error("{op}: {message}")]
    Contract { op: &'static str, message: String },
}

fn contract(op: &'static str, message: impl Into<String>) -> DistributionError {
    DistributionError::Contract { op, message: message.into() }
}

/// Probability vector whose entries lie in [0, 1] and sum to one within 1e-10.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexVector(Vec<f64>);

impl SimplexVector {
    pub const TOLERANCE: f64 = 1e-10;

    pub fn new(probs: Vec<f64>) -> Result<Self, DistributionError> {
        if probs.is_empty() {
            return Err(contract("simplex", "empty probability vector"));
        }
        if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(contract("simplex", format!("entry {p} outside [0, 1]")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > Self::TOLERANCE {
            return Err(contract("simplex", format!("entries sum to {total}")));
        }
        Ok(Self(probs))
    }

    pub fn uniform(k: usize) -> Self {
        Self(vec![1.0 / k as f64; k])
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// log Dir(x | concentration). Boundary points (x_k = 0) are outside the open
/// simplex and score −∞ unless concentration_k is exactly 1.
pub fn dirichlet_log_prob(x: &SimplexVector, concentration: &[f64]) -> Result<f64, DistributionError> {
    if x.len() != concentration.len() {
        return Err(contract(
            "dirichlet_log_prob",
            format!("simplex has {} entries, concentration {}", x.len(), concentration.len()),
        ));
    }
    if concentration.iter().any(|&a| !(a > 0.0)) {
        return Err(contract("dirichlet_log_prob", "concentrations must be positive"));
    }
    let mut lp = -ln_multivariate_beta(concentration);
    for (&xi, &a) in x.probs().iter().zip(concentration) {
        if xi == 0.0 {
            if a == 1.0 {
                continue;
            }
            return Ok(f64::NEG_INFINITY);
        }
        lp += (a - 1.0) * xi.ln();
    }
    Ok(lp)
}

/// log Multinomial(counts | total, probs), including the multinomial coefficient.
pub fn multinomial_log_prob(
    counts: &[u64],
    probs: &SimplexVector,
    total: u64,
) -> Result<f64, DistributionError> {
    if counts.len() != probs.len() {
        return Err(contract(
            "multinomial_log_prob",
            format!("{} counts for {} categories", counts.len(), probs.len()),
        ));
    }
    let sum: u64 = counts.iter().sum();
    if sum != total {
        return Err(contract("multinomial_log_prob", format!("counts sum to {sum}, expected {total}")));
    }
    let mut lp = ln_gamma(total as f64 + 1.0);
    for (&c, &p) in counts.iter().zip(probs.probs()) {
        if c == 0 {
            continue;
        }
        lp += c as f64 * p.ln() - ln_gamma(c as f64 + 1.0);
    }
    Ok(lp)
}

pub fn normal_log_prob(x: f64, mean: f64, sd: f64) -> Result<f64, DistributionError> {
    if !(sd > 0.0) {
        return Err(contract("normal_log_prob", format!("sd must be positive, got {sd}")));
    }
    let z = (x - mean) / sd;
    Ok(-0.5 * (2.0 * PI).ln() - sd.ln() - 0.5 * z * z)
}

/// Gamma density with shape/rate parameterization.
pub fn gamma_log_prob(x: f64, shape: f64, rate: f64) -> Result<f64, DistributionError> {
    if !(x > 0.0) || !(shape > 0.0) || !(rate > 0.0) {
        return Err(contract("gamma_log_prob", format!("x={x}, shape={shape}, rate={rate}")));
    }
    Ok(shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * x.ln() - rate * x)
}

/// Inverse-gamma density with shape/scale parameterization.
pub fn inverse_gamma_log_prob(x: f64, shape: f64, scale: f64) -> Result<f64, DistributionError> {
    if !(x > 0.0) || !(shape > 0.0) || !(scale > 0.0) {
        return Err(contract(
            "inverse_gamma_log_prob",
            format!("x={x}, shape={shape}, scale={scale}"),
        ));
    }
    Ok(shape * scale.ln() - ln_gamma(shape) - (shape + 1.0) * x.ln() - scale / x)
}

pub fn categorical_log_prob(index: usize, probs: &SimplexVector) -> Result<f64, DistributionError> {
    probs
        .probs()
        .get(index)
        .map(|p| p.ln())
        .ok_or_else(|| contract("categorical_log_prob", format!("index {index} out of {}", probs.len())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn simplex(p: &[f64]) -> SimplexVector {
        SimplexVector::new(p.to_vec()).unwrap()
    }

    #[test]
    fn dirichlet_examples() {
        let lp = dirichlet_log_prob(&simplex(&[0.2, 0.3, 0.5]), &[1.0, 1.0, 1.0]).unwrap();
        assert!((lp - 2f64.ln()).abs() < 1e-12);
        let lp = dirichlet_log_prob(&simplex(&[0.5, 0.5]), &[2.0, 1.0]).unwrap();
        assert!(lp.abs() < 1e-12);
        let lp = dirichlet_log_prob(&simplex(&[0.0, 1.0]), &[0.5, 0.5]).unwrap();
        assert_eq!(lp, f64::NEG_INFINITY);
        assert!(dirichlet_log_prob(&simplex(&[0.5, 0.5]), &[1.0, 1.0, 1.0]).is_err());
    }

    #[test]
    fn multinomial_examples() {
        let lp = multinomial_log_prob(&[1, 1], &simplex(&[0.5, 0.5]), 2).unwrap();
        assert!((lp - 0.5f64.ln()).abs() < 1e-12);
        let lp = multinomial_log_prob(&[2, 0], &simplex(&[0.5, 0.5]), 2).unwrap();
        assert!((lp - 0.25f64.ln()).abs() < 1e-12);
        let eps = 1e-3;
        let lp = multinomial_log_prob(&[7, 0], &simplex(&[1.0 - eps, eps]), 7).unwrap();
        assert!((lp - 7.0 * (1.0 - eps).ln()).abs() < 1e-12);
        assert!(multinomial_log_prob(&[1, 1], &simplex(&[0.5, 0.5]), 3).is_err());
    }

    #[test]
    fn normal_examples() {
        assert!((normal_log_prob(0.0, 0.0, 1.0).unwrap() + 0.918_938_533_204_672_7).abs() < 1e-12);
        assert!((normal_log_prob(1.0, 0.0, 1.0).unwrap() + 1.418_938_533_204_672_7).abs() < 1e-12);
        // −½ log 2π − log 2 − ⅛
        let want = -0.5 * (2.0 * PI).ln() - 2f64.ln() - 0.125;
        assert!((normal_log_prob(2.0, 1.0, 2.0).unwrap() - want).abs() < 1e-12);
        assert!((want + 1.737_085_713_764_618).abs() < 1e-9);
        assert!(normal_log_prob(0.0, 0.0, 0.0).is_err());
        assert!(normal_log_prob(0.0, 0.0, -1.0).is_err());
    }

    #[test]
    fn gamma_family_examples() {
        assert!((categorical_log_prob(1, &simplex(&[0.2, 0.8])).unwrap() - 0.8f64.ln()).abs() < 1e-15);
        assert!(categorical_log_prob(2, &simplex(&[0.2, 0.8])).is_err());
        assert!((gamma_log_prob(1.0, 1.0, 1.0).unwrap() + 1.0).abs() < 1e-12);
        assert!((inverse_gamma_log_prob(1.0, 2.0, 1.0).unwrap() + 1.0).abs() < 1e-12);
        assert!(gamma_log_prob(-1.0, 1.0, 1.0).is_err());
        assert!(inverse_gamma_log_prob(1.0, 0.0, 1.0).is_err());
    }

    fn compositions(total: u64, k: usize) -> Vec<Vec<u64>> {
        if k == 1 {
            return vec![vec![total]];
        }
        (0..=total)
            .flat_map(|first| {
                compositions(total - first, k - 1).into_iter().map(move |mut rest| {
                    rest.insert(0, first);
                    rest
                })
            })
            .collect()
    }

    #[test]
    fn multinomial_normalizes_by_enumeration() {
        let probs = [vec![0.3, 0.7], vec![0.2, 0.5, 0.3], vec![0.9, 0.05, 0.05]];
        for p in &probs {
            for total in 1..=4u64 {
                let s: f64 = compositions(total, p.len())
                    .iter()
                    .map(|c| multinomial_log_prob(c, &simplex(p), total).unwrap().exp())
                    .sum();
                assert!((s - 1.0).abs() < 1e-10, "p={p:?} total={total} sum={s}");
            }
        }
    }

    /// Trapezoid rule for ∫ f on [0, 1] with the endpoints dropped.
    fn quadrature(f: impl Fn(f64) -> f64) -> f64 {
        let n = 200_000;
        let h = 1.0 / n as f64;
        (1..n).map(|i| f(i as f64 * h)).sum::<f64>() * h
    }

    #[test]
    fn change_of_variables_importance_estimate() {
        let spec = TransformSpec::stick_breaking(2);
        for conc in [[2.0, 2.0], [2.0, 5.0]] {
            let beta_pdf = |x: f64| {
                dirichlet_log_prob(&simplex(&[x, 1.0 - x]), &conc).unwrap().exp()
            };
            let oracle_mean = quadrature(|x| x * beta_pdf(x));
            let oracle_mass = quadrature(beta_pdf);
            assert!((oracle_mass - 1.0).abs() < 1e-6);

            let mut rng = ChaCha8Rng::seed_from_u64(11);
            let n = 200_000;
            let (mut sw, mut swx, mut sw2) = (0.0, 0.0, 0.0);
            for _ in 0..n {
                let u: f64 = StandardNormal.sample(&mut rng);
                let (x, log_jac) = spec.forward(&[u]).unwrap();
                let log_target = dirichlet_log_prob(&simplex(&x), &conc).unwrap() + log_jac;
                let log_proposal = normal_log_prob(u, 0.0, 1.0).unwrap();
                let w = (log_target - log_proposal).exp();
                sw += w;
                sw2 += w * w;
                swx += w * x[0];
            }
            let mass = sw / n as f64;
            let mass_se = ((sw2 / n as f64 - mass * mass) / n as f64).sqrt();
            assert!((mass - oracle_mass).abs() < 4.0 * mass_se, "mass {mass} ± {mass_se}");
            let mean = swx / sw;
            assert!((mean - oracle_mean).abs() < 4.0 * mass_se, "mean {mean} vs {oracle_mean}");
        }
    }
}
