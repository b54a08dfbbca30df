use rand::Rng;

use super::hmc::{hamiltonian, leapfrog, PhasePoint};
use super::Target;
use crate::samples::DrawStats;

/// One leapfrog step from fresh momentum, then a Metropolis correction on the
/// joint (Φ, r) density.
pub fn langevin_draw<T: Target + ?Sized, R: Rng>(
    target: &T,
    z: &mut PhasePoint,
    eps: f64,
    inv_mass: &[f64],
    rng: &mut R,
) -> DrawStats {
    z.sample_momentum(inv_mass, rng);
    let h0 = hamiltonian(z, inv_mass);
    let mut proposal = z.clone();
    let ok = leapfrog(target, &mut proposal, eps, inv_mass);
    let h = if ok { hamiltonian(&proposal, inv_mass) } else { f64::INFINITY };
    let log_ratio = h0 - h;
    let accept_stat = if log_ratio >= 0.0 { 1.0 } else { log_ratio.exp() };
    let u: f64 = rng.gen();
    if ok && u < accept_stat {
        *z = proposal;
    }
    DrawStats {
        accept_stat,
        step_size: eps,
        tree_depth: 0,
        n_leapfrog: 1,
        divergent: !ok,
        energy: hamiltonian(z, inv_mass),
    }
}

#[cfg(test)]
mod tests {
    use super::super::test_targets::{flat, std_normal};
    use super::super::{chain_rng, run_chains, RunConfig, SamplerKind};
    use super::*;
    use crate::diagnostics::ess;

    #[test]
    fn flat_target_always_moves_by_eps_r() {
        let t = flat(2);
        let mut rng = chain_rng(4, 0);
        let mut z = PhasePoint::at(&t, vec![0.0, 1.0]).unwrap();
        for _ in 0..10 {
            let before = z.q.clone();
            let s = langevin_draw(&t, &mut z, 0.01, &[1.0, 1.0], &mut rng);
            assert_eq!(s.accept_stat, 1.0);
            for i in 0..2 {
                assert!((z.q[i] - (before[i] + 0.01 * z.p[i])).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn tiny_steps_accept_almost_surely() {
        let t = std_normal(3);
        let mut rng = chain_rng(4, 0);
        let mut z = PhasePoint::at(&t, vec![0.5, -1.0, 2.0]).unwrap();
        for _ in 0..100 {
            let s = langevin_draw(&t, &mut z, 1e-4, &[1.0; 3], &mut rng);
            assert!(s.accept_stat > 1.0 - 1e-6);
        }
    }

    #[test]
    fn mixes_slower_than_nuts() {
        let t = std_normal(1);
        let ld = RunConfig {
            draws: 20_000,
            warmup: 1000,
            chains: 1,
            seed: 3,
            sampler: SamplerKind::Ld,
            ld_step_size: 0.5,
            ..RunConfig::default()
        };
        let s = run_chains(&t, &ld).unwrap();
        let x = s.pooled(0);
        let mean = x.iter().sum::<f64>() / x.len() as f64;
        assert!(mean.abs() < 0.1, "mean {mean}");
        let ess_ld = ess(&s.by_chain(0)).unwrap().value;

        let nuts = RunConfig { draws: 2000, warmup: 1000, chains: 1, seed: 3, ..RunConfig::default() };
        let s = run_chains(&t, &nuts).unwrap();
        let ess_nuts = ess(&s.by_chain(0)).unwrap().value;
        // per-draw efficiency
        assert!(ess_ld / 20_000.0 < ess_nuts / 2000.0 / 2.0, "ld {ess_ld} nuts {ess_nuts}");
        assert!(ess_ld < 0.25 * 20_000.0);
    }

    #[test]
    fn warmup_adaptation_reaches_target_acceptance() {
        let t = std_normal(50);
        let cfg = RunConfig {
            draws: 4000,
            warmup: 2000,
            chains: 1,
            seed: 9,
            sampler: SamplerKind::Ld,
            ld_step_size: 5.0,
            ld_target_accept: Some(0.6),
            ..RunConfig::default()
        };
        let s = run_chains(&t, &cfg).unwrap();
        let accept = s.stats[0].iter().map(|d| d.accept_stat).sum::<f64>() / 4000.0;
        assert!((accept - 0.6).abs() < 0.1, "acceptance {accept}");
        assert!(s.stats[0].iter().all(|d| d.step_size == s.stats[0][0].step_size));
        let bad = RunConfig { ld_target_accept: Some(1.5), ..cfg };
        assert!(run_chains(&t, &bad).is_err());
    }
}
