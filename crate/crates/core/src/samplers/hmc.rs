use rand::Rng;
use rand_distr::StandardNormal;

use super::Target;

/// Position, momentum and the cached log density and gradient at the position.
///
/// The metric is passed around as `inv_mass`, the elementwise inverse of the
/// diagonal mass matrix (the posterior variance scale).
#[derive(Debug, Clone, PartialEq)]
pub struct PhasePoint {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
    pub grad: Vec<f64>,
    pub log_density: f64,
}

impl PhasePoint {
    /// Evaluates the target at `q`; `None` if the density or gradient is not finite.
    pub fn at<T: Target + ?Sized>(target: &T, q: Vec<f64>) -> Option<Self> {
        let mut grad = vec![0.0; q.len()];
        let lp = target.log_density_gradient(&q, &mut grad).ok()?;
        if !lp.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return None;
        }
        let p = vec![0.0; q.len()];
        Some(Self { q, p, grad, log_density: lp })
    }

    /// Recomputes the density and gradient at the current position. Returns
    /// false (and sets the density to −∞) if either is not finite.
    pub fn refresh<T: Target + ?Sized>(&mut self, target: &T) -> bool {
        match target.log_density_gradient(&self.q, &mut self.grad) {
            Ok(lp) if lp.is_finite() && self.grad.iter().all(|g| g.is_finite()) => {
                self.log_density = lp;
                true
            }
            _ => {
                self.log_density = f64::NEG_INFINITY;
                false
            }
        }
    }

    /// Draws p ~ N(0, M) with M = diag(1 / inv_mass).
    pub fn sample_momentum<R: Rng>(&mut self, inv_mass: &[f64], rng: &mut R) {
        for (p, m) in self.p.iter_mut().zip(inv_mass) {
            let n: f64 = rng.sample(StandardNormal);
            *p = n / m.sqrt();
        }
    }

    /// M⁻¹p, the velocity.
    pub fn velocity(&self, inv_mass: &[f64]) -> Vec<f64> {
        self.p.iter().zip(inv_mass).map(|(p, m)| p * m).collect()
    }
}

/// ½ Σ p_i² / mass_i.
pub fn kinetic_energy(p: &[f64], inv_mass: &[f64]) -> f64 {
    0.5 * p.iter().zip(inv_mass).map(|(p, m)| p * p * m).sum::<f64>()
}

/// H = −log q(Φ) + ½ Σ r_i² / mass_i; +∞ where the density is not finite.
pub fn hamiltonian(z: &PhasePoint, inv_mass: &[f64]) -> f64 {
    if !z.log_density.is_finite() {
        return f64::INFINITY;
    }
    let h = -z.log_density + kinetic_energy(&z.p, inv_mass);
    if h.is_nan() {
        f64::INFINITY
    } else {
        h
    }
}

/// One half-kick, drift, half-kick step of size `eps` (negative steps run
/// backwards in time). Returns false if the new point is not finite.
pub fn leapfrog<T: Target + ?Sized>(target: &T, z: &mut PhasePoint, eps: f64, inv_mass: &[f64]) -> bool {
    let half = 0.5 * eps;
    for (p, g) in z.p.iter_mut().zip(&z.grad) {
        *p += half * g;
    }
    for ((q, p), m) in z.q.iter_mut().zip(&z.p).zip(inv_mass) {
        *q += eps * p * m;
    }
    if !z.refresh(target) {
        return false;
    }
    for (p, g) in z.p.iter_mut().zip(&z.grad) {
        *p += half * g;
    }
    true
}
