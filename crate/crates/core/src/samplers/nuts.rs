use rand::Rng;

use super::hmc::{hamiltonian, leapfrog, PhasePoint};
use super::Target;
use crate::samples::DrawStats;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NutsSettings {
    pub max_depth: u32,
    pub max_delta_h: f64,
    pub target_accept: f64,
    pub gamma: f64,
    pub t0: f64,
    pub kappa: f64,
    pub initial_step_size: f64,
}

impl Default for NutsSettings {
    fn default() -> Self {
        Self {
            max_depth: 10,
            max_delta_h: 1000.0,
            target_accept: 0.8,
            gamma: 0.05,
            t0: 10.0,
            kappa: 0.75,
            initial_step_size: 1.0,
        }
    }
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

/// Generalized no-U-turn check between two trajectory ends.
fn no_u_turn(p_sharp_minus: &[f64], p_sharp_plus: &[f64], rho: &[f64]) -> bool {
    dot(p_sharp_plus, rho) > 0.0 && dot(p_sharp_minus, rho) > 0.0
}

struct Walk<'a, T: ?Sized, R> {
    target: &'a T,
    inv_mass: &'a [f64],
    eps: f64,
    h0: f64,
    max_delta_h: f64,
    rng: &'a mut R,
    n_leapfrog: u32,
    sum_metro_prob: f64,
    divergent: bool,
}

/// Momenta and sharp momenta at the two ends of a subtree, plus its summed momentum.
struct Edge {
    p_beg: Vec<f64>,
    p_sharp_beg: Vec<f64>,
    p_end: Vec<f64>,
    p_sharp_end: Vec<f64>,
    rho: Vec<f64>,
}

impl<T: Target + ?Sized, R: Rng> Walk<'_, T, R> {
    /// Extends the trajectory from `z` by 2^depth steps of sign `dir`. On
    /// success returns the subtree's multinomial proposal, edge data and log
    /// total weight.
    fn build(&mut self, z: &mut PhasePoint, depth: u32, dir: f64) -> Option<(PhasePoint, Edge, f64)> {
        if depth == 0 {
            let ok = leapfrog(self.target, z, dir * self.eps, self.inv_mass);
            self.n_leapfrog += 1;
            let h = if ok { hamiltonian(z, self.inv_mass) } else { f64::INFINITY };
            if h - self.h0 > self.max_delta_h || !ok {
                self.divergent = true;
            }
            let log_w = self.h0 - h;
            self.sum_metro_prob += if log_w > 0.0 { 1.0 } else { log_w.exp() };
            if self.divergent {
                return None;
            }
            let p_sharp = z.velocity(self.inv_mass);
            let edge = Edge {
                p_beg: z.p.clone(),
                p_sharp_beg: p_sharp.clone(),
                p_end: z.p.clone(),
                p_sharp_end: p_sharp,
                rho: z.p.clone(),
            };
            return Some((z.clone(), edge, log_w));
        }

        let (init_prop, init, lw_init) = self.build(z, depth - 1, dir)?;
        let (final_prop, fin, lw_final) = self.build(z, depth - 1, dir)?;

        let lw_subtree = log_add(lw_init, lw_final);
        let proposal = if lw_final > lw_subtree {
            final_prop
        } else {
            let accept = (lw_final - lw_subtree).exp();
            if self.rng.gen::<f64>() < accept {
                final_prop
            } else {
                init_prop
            }
        };

        let rho = add(&init.rho, &fin.rho);
        let mut persist = no_u_turn(&init.p_sharp_beg, &fin.p_sharp_end, &rho);
        persist &= no_u_turn(&init.p_sharp_beg, &fin.p_sharp_beg, &add(&init.rho, &fin.p_beg));
        persist &= no_u_turn(&init.p_sharp_end, &fin.p_sharp_end, &add(&fin.rho, &init.p_end));
        if !persist {
            return None;
        }
        let edge = Edge {
            p_beg: init.p_beg,
            p_sharp_beg: init.p_sharp_beg,
            p_end: fin.p_end,
            p_sharp_end: fin.p_sharp_end,
            rho,
        };
        Some((proposal, edge, lw_subtree))
    }
}

/// One NUTS transition from `z` (momentum is resampled). Multinomial sampling
/// across the trajectory with the generalized U-turn criterion.
pub fn nuts_draw<T: Target + ?Sized, R: Rng>(
    target: &T,
    z: &mut PhasePoint,
    eps: f64,
    inv_mass: &[f64],
    settings: &NutsSettings,
    rng: &mut R,
) -> DrawStats {
    z.sample_momentum(inv_mass, rng);
    let h0 = hamiltonian(z, inv_mass);

    let mut z_fwd = z.clone();
    let mut z_bck = z.clone();
    let mut sample = z.clone();

    let p_sharp0 = z.velocity(inv_mass);
    // forward end: (p_fwd_bck, p_fwd_fwd); backward end: (p_bck_fwd, p_bck_bck)
    let mut p_fwd_bck = z.p.clone();
    let mut p_sharp_fwd_bck = p_sharp0.clone();
    let mut p_sharp_fwd_fwd = p_sharp0.clone();
    let mut p_bck_fwd = z.p.clone();
    let mut p_sharp_bck_fwd = p_sharp0.clone();
    let mut p_sharp_bck_bck = p_sharp0;
    let mut rho = z.p.clone();
    let mut log_sum_weight = 0.0;

    let mut walk = Walk {
        target,
        inv_mass,
        eps,
        h0,
        max_delta_h: settings.max_delta_h,
        rng,
        n_leapfrog: 0,
        sum_metro_prob: 0.0,
        divergent: false,
    };
    let mut depth = 0;
    while depth < settings.max_depth {
        let forward = walk.rng.gen::<f64>() > 0.5;
        let built = if forward {
            walk.build(&mut z_fwd, depth, 1.0)
        } else {
            walk.build(&mut z_bck, depth, -1.0)
        };
        let Some((proposal, edge, lw_subtree)) = built else { break };
        let (rho_fwd, rho_bck);
        if forward {
            rho_bck = rho.clone();
            p_bck_fwd = p_fwd_bck.clone();
            p_sharp_bck_fwd = p_sharp_fwd_bck.clone();
            p_fwd_bck = edge.p_beg;
            p_sharp_fwd_bck = edge.p_sharp_beg;
            p_sharp_fwd_fwd = edge.p_sharp_end;
            rho_fwd = edge.rho;
        } else {
            rho_fwd = rho.clone();
            p_fwd_bck = p_bck_fwd.clone();
            p_sharp_fwd_bck = p_sharp_bck_fwd.clone();
            p_bck_fwd = edge.p_beg;
            p_sharp_bck_fwd = edge.p_sharp_beg;
            p_sharp_bck_bck = edge.p_sharp_end;
            rho_bck = edge.rho;
        }
        depth += 1;

        if lw_subtree > log_sum_weight {
            sample = proposal;
        } else {
            let accept = (lw_subtree - log_sum_weight).exp();
            if walk.rng.gen::<f64>() < accept {
                sample = proposal;
            }
        }
        log_sum_weight = log_add(log_sum_weight, lw_subtree);

        rho = add(&rho_bck, &rho_fwd);
        let mut persist = no_u_turn(&p_sharp_bck_bck, &p_sharp_fwd_fwd, &rho);
        persist &= no_u_turn(&p_sharp_bck_bck, &p_sharp_fwd_bck, &add(&rho_bck, &p_fwd_bck));
        persist &= no_u_turn(&p_sharp_bck_fwd, &p_sharp_fwd_fwd, &add(&rho_fwd, &p_bck_fwd));
        if !persist {
            break;
        }
    }

    let stats = DrawStats {
        accept_stat: if walk.n_leapfrog > 0 { walk.sum_metro_prob / walk.n_leapfrog as f64 } else { 0.0 },
        step_size: eps,
        tree_depth: depth,
        n_leapfrog: walk.n_leapfrog,
        divergent: walk.divergent,
        energy: hamiltonian(&sample, inv_mass),
    };
    *z = sample;
    stats
}

#[cfg(test)]
mod tests {
    use super::super::test_targets::{flat, std_normal};
    use super::super::{chain_rng, run_chains, FnTarget, RunConfig};
    use super::*;
    use crate::diagnostics::ess;

    #[test]
    fn flat_target_accepts_everything() {
        let t = flat(1);
        let mut rng = chain_rng(3, 0);
        let mut z = PhasePoint::at(&t, vec![0.0]).unwrap();
        let settings = NutsSettings { max_depth: 4, ..NutsSettings::default() };
        for _ in 0..20 {
            let s = nuts_draw(&t, &mut z, 0.3, &[1.0], &settings, &mut rng);
            assert_eq!(s.accept_stat, 1.0);
            assert!(!s.divergent);
        }
    }

    #[test]
    fn standard_normal_moments() {
        let t = std_normal(1);
        let cfg = RunConfig { draws: 2000, warmup: 1000, chains: 1, seed: 42, ..RunConfig::default() };
        let s = run_chains(&t, &cfg).unwrap();
        let x = s.pooled(0);
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() < 0.1, "mean {mean}");
        assert!((0.85..=1.15).contains(&var), "var {var}");
    }

    #[test]
    fn correlated_gaussian_means_and_variances() {
        // Σ = 0.5 I + 0.5 11ᵀ; Σ⁻¹ = 2 (I − 11ᵀ/(d+1))
        let d = 10;
        let t = FnTarget::new(d, move |q: &[f64], g: &mut [f64]| {
            let s: f64 = q.iter().sum();
            let c = s / (d as f64 + 1.0);
            let mut lp = 0.0;
            for (gi, qi) in g.iter_mut().zip(q) {
                *gi = -2.0 * (qi - c);
                lp += qi * qi;
            }
            -(lp - s * c)
        });
        let cfg = RunConfig { draws: 1000, warmup: 1000, chains: 4, seed: 7, ..RunConfig::default() };
        let s = run_chains(&t, &cfg).unwrap();
        for col in 0..d {
            let chains = s.by_chain(col);
            let x = s.pooled(col);
            let n = x.len() as f64;
            let mean = x.iter().sum::<f64>() / n;
            let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            let e = ess(&chains).unwrap().value;
            let mcse = (var / e).sqrt();
            assert!(mean.abs() < 3.0 * mcse, "col {col}: mean {mean} mcse {mcse}");
            assert!((var - 1.0).abs() < 0.15, "col {col}: var {var}");
        }
    }

    #[test]
    fn divergence_is_flagged() {
        // funnel-like cliff: density collapses beyond |q| > 1
        let t = FnTarget::new(1, |q: &[f64], g: &mut [f64]| {
            if q[0].abs() > 1.0 {
                g[0] = -1e6 * q[0].signum();
                -1e6 * (q[0].abs() - 1.0)
            } else {
                g[0] = 0.0;
                0.0
            }
        });
        let mut rng = chain_rng(1, 0);
        let mut z = PhasePoint::at(&t, vec![0.0]).unwrap();
        let mut any = false;
        for _ in 0..50 {
            any |= nuts_draw(&t, &mut z, 0.5, &[1.0], &NutsSettings::default(), &mut rng).divergent;
            assert!(z.q[0].abs() <= 1.0 + 1e-9);
        }
        assert!(any);
    }
}
