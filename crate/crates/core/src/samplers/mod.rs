//! NUTS and Langevin-dynamics samplers over an unconstrained differentiable target.

mod adapt;
mod hmc;
mod langevin;
mod nuts;

pub use adapt::{DualAveraging, WindowSchedule};
pub use hmc::{hamiltonian, kinetic_energy, leapfrog, PhasePoint};
pub use langevin::langevin_draw;
pub use nuts::{nuts_draw, NutsSettings};

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::samples::{DrawStats, ParamInfo, SampleSet};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SamplerError {
    #[error("{0}")]
    Contract(String),
    #[error("chain {chain}: no finite initial point after {attempts} attempts")]
    Initialization { chain: usize, attempts: usize },
    #[error("step size search failed: {0}")]
    StepSize(String),
}

/// A failed log-density evaluation. Samplers treat it as a rejected point.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("{0}")]
pub struct EvalError(pub String);

/// An unnormalized log density on ℝ^M with its gradient, plus the map from
/// unconstrained positions to recorded output values.
pub trait Target: Sync {
    fn dim(&self) -> usize;

    /// Returns log q(Φ) and writes ∂log q/∂Φ into `grad`.
    fn log_density_gradient(&self, position: &[f64], grad: &mut [f64]) -> Result<f64, EvalError>;

    /// Recorded outputs, in order. Defaults to the raw position as `x`.
    fn outputs(&self) -> Vec<ParamInfo> {
        vec![ParamInfo::new("x", &[self.dim()])]
    }

    /// Writes the recorded output values for `position` (flattened, in
    /// `outputs()` order) into `out`.
    fn constrain(&self, position: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend_from_slice(position);
    }

    /// Model-supplied starting point; `None` requests uniform jitter.
    fn initial_point(&self) -> Option<Vec<f64>> {
        None
    }
}

/// Closure-backed target, mostly for tests and small ad-hoc densities.
pub struct FnTarget<F> {
    dim: usize,
    f: F,
}

impl<F> FnTarget<F>
where
    F: Fn(&[f64], &mut [f64]) -> f64 + Sync,
{
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F> Target for FnTarget<F>
where
    F: Fn(&[f64], &mut [f64]) -> f64 + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn log_density_gradient(&self, position: &[f64], grad: &mut [f64]) -> Result<f64, EvalError> {
        Ok((self.f)(position, grad))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerKind {
    Nuts,
    Ld,
}

impl SamplerKind {
    pub fn name(self) -> &'static str {
        match self {
            SamplerKind::Nuts => "nuts",
            SamplerKind::Ld => "ld",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub draws: usize,
    pub warmup: usize,
    pub chains: usize,
    pub seed: u64,
    pub sampler: SamplerKind,
    pub nuts: NutsSettings,
    /// Langevin step size in unconstrained space; the starting value when adapted.
    pub ld_step_size: f64,
    /// Tune the Langevin step size during warmup toward this acceptance rate.
    pub ld_target_accept: Option<f64>,
    /// Keep every `thin`-th post-warmup iteration.
    pub thin: usize,
    /// Worker threads for chains; 0 uses the global pool.
    pub jobs: usize,
    /// Explicit starting position shared by all chains.
    pub init: Option<Vec<f64>>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            draws: 1000,
            warmup: 1000,
            chains: 4,
            seed: 1,
            sampler: SamplerKind::Nuts,
            nuts: NutsSettings::default(),
            ld_step_size: 0.01,
            ld_target_accept: None,
            thin: 1,
            jobs: 0,
            init: None,
        }
    }
}

pub const INIT_ATTEMPTS: usize = 100;
pub const INIT_RADIUS: f64 = 2.0;

/// RNG for one chain: a fixed seed with the chain index as stream id, so a
/// chain's draws do not depend on how many chains run.
pub fn chain_rng(seed: u64, chain: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chain as u64);
    rng
}

/// Finds a starting point with finite density and gradient.
pub fn initialize<T: Target + ?Sized>(
    target: &T,
    init: Option<&[f64]>,
    chain: usize,
    rng: &mut ChaCha8Rng,
) -> Result<PhasePoint, SamplerError> {
    let dim = target.dim();
    let fixed = init.map(|v| v.to_vec()).or_else(|| target.initial_point());
    if let Some(q) = &fixed {
        if q.len() != dim {
            return Err(SamplerError::Contract(format!("initial point has {} values, target {dim}", q.len())));
        }
    }
    for attempt in 0..INIT_ATTEMPTS {
        let q: Vec<f64> = match &fixed {
            Some(q) if attempt == 0 => q.clone(),
            _ => (0..dim).map(|_| rng.gen_range(-INIT_RADIUS..INIT_RADIUS)).collect(),
        };
        if let Some(z) = PhasePoint::at(target, q) {
            return Ok(z);
        }
    }
    Err(SamplerError::Initialization { chain, attempts: INIT_ATTEMPTS })
}

struct ChainOutput {
    values: Vec<f64>,
    stats: Vec<DrawStats>,
    step_size: f64,
    inv_mass: Vec<f64>,
}

fn run_chain<T: Target + ?Sized>(
    target: &T,
    config: &RunConfig,
    chain: usize,
) -> Result<ChainOutput, SamplerError> {
    let mut rng = chain_rng(config.seed, chain);
    let mut z = initialize(target, config.init.as_deref(), chain, &mut rng)?;
    let dim = target.dim();
    let width: usize = target.outputs().iter().map(ParamInfo::len).sum();
    let mut values = Vec::with_capacity(config.draws * width);
    let mut stats = Vec::with_capacity(config.draws);
    let mut buf = Vec::with_capacity(width);
    let total = config.warmup + config.draws * config.thin;

    match config.sampler {
        SamplerKind::Ld => {
            let inv_mass = vec![1.0; dim];
            let mut eps = config.ld_step_size;
            let mut dual = config.ld_target_accept.map(|target_accept| {
                DualAveraging::new(eps, &NutsSettings { target_accept, ..config.nuts })
            });
            for it in 0..total {
                let s = langevin_draw(target, &mut z, eps, &inv_mass, &mut rng);
                if it < config.warmup {
                    if let Some(dual) = dual.as_mut() {
                        eps = dual.learn(s.accept_stat);
                        if it + 1 == config.warmup {
                            eps = dual.final_step_size();
                        }
                    }
                } else if (it - config.warmup) % config.thin == 0 {
                    record(target, &z, &mut buf, &mut values, width);
                    stats.push(s);
                }
            }
            Ok(ChainOutput { values, stats, step_size: eps, inv_mass })
        }
        SamplerKind::Nuts => {
            let settings = &config.nuts;
            let mut inv_mass = vec![1.0; dim];
            let mut eps = adapt::init_step_size(target, &z, settings.initial_step_size, &inv_mass, &mut rng)?;
            let mut dual = DualAveraging::new(eps, settings);
            let mut windows = WindowSchedule::new(config.warmup, dim);
            for it in 0..total {
                let warm = it < config.warmup;
                let s = nuts_draw(target, &mut z, eps, &inv_mass, settings, &mut rng);
                if warm {
                    eps = dual.learn(s.accept_stat);
                    if windows.observe(&z.q, &mut inv_mass) {
                        eps = adapt::init_step_size(target, &z, eps, &inv_mass, &mut rng)?;
                        dual.restart(eps);
                    }
                    if it + 1 == config.warmup {
                        eps = dual.final_step_size();
                    }
                } else if (it - config.warmup) % config.thin == 0 {
                    record(target, &z, &mut buf, &mut values, width);
                    stats.push(s);
                }
            }
            Ok(ChainOutput { values, stats, step_size: eps, inv_mass })
        }
    }
}

fn record<T: Target + ?Sized>(target: &T, z: &PhasePoint, buf: &mut Vec<f64>, values: &mut Vec<f64>, width: usize) {
    target.constrain(&z.q, buf);
    debug_assert_eq!(buf.len(), width);
    values.extend_from_slice(buf);
}

/// Runs independent chains and merges their post-warmup draws.
pub fn run_chains<T: Target + ?Sized>(target: &T, config: &RunConfig) -> Result<SampleSet, SamplerError> {
    if config.draws == 0 {
        return Err(SamplerError::Contract("draws must be at least 1".into()));
    }
    if config.chains == 0 {
        return Err(SamplerError::Contract("chains must be at least 1".into()));
    }
    if config.thin == 0 {
        return Err(SamplerError::Contract("thin must be at least 1".into()));
    }
    if config.sampler == SamplerKind::Ld && !(config.ld_step_size > 0.0) {
        return Err(SamplerError::Contract("Langevin step size must be positive".into()));
    }
    if config.ld_target_accept.is_some_and(|a| !(a > 0.0 && a < 1.0)) {
        return Err(SamplerError::Contract("Langevin target acceptance must lie in (0, 1)".into()));
    }
    let start = Instant::now();
    let run = || -> Vec<Result<ChainOutput, SamplerError>> {
        (0..config.chains).into_par_iter().map(|c| run_chain(target, config, c)).collect()
    };
    let results = if config.jobs > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(config.jobs)
            .build()
            .map_err(|e| SamplerError::Contract(e.to_string()))?
            .install(run)
    } else {
        run()
    };
    let mut chain_values = Vec::with_capacity(config.chains);
    let mut chain_stats = Vec::with_capacity(config.chains);
    let mut step_sizes = Vec::new();
    for r in results {
        let out = r?;
        chain_values.push(out.values);
        chain_stats.push(out.stats);
        step_sizes.push(out.step_size);
        let _ = out.inv_mass;
    }
    let mut set = SampleSet::from_chains(target.outputs(), config.draws, chain_values);
    set.stats = chain_stats;
    set.metadata.insert("sampler".into(), config.sampler.name().into());
    set.metadata.insert("seed".into(), config.seed.to_string());
    set.metadata.insert("wall_time_s".into(), format!("{:.3}", start.elapsed().as_secs_f64()));
    set.metadata.insert(
        "step_size".into(),
        step_sizes.iter().map(|e| format!("{e:.6}")).collect::<Vec<_>>().join(";"),
    );
    Ok(set)
}

/// Fraction of recorded iterations flagged divergent.
pub fn divergence_rate(set: &SampleSet) -> f64 {
    let n: usize = set.stats.iter().map(Vec::len).sum();
    if n == 0 {
        return 0.0;
    }
    set.stats.iter().flatten().filter(|s| s.divergent).count() as f64 / n as f64
}

#[cfg(test)]
pub(crate) mod test_targets {
    use super::*;

    pub fn std_normal(dim: usize) -> FnTarget<impl Fn(&[f64], &mut [f64]) -> f64 + Sync> {
        FnTarget::new(dim, |q: &[f64], g: &mut [f64]| {
            let mut lp = 0.0;
            for (gi, qi) in g.iter_mut().zip(q) {
                *gi = -qi;
                lp -= 0.5 * qi * qi;
            }
            lp
        })
    }

    pub fn flat(dim: usize) -> FnTarget<impl Fn(&[f64], &mut [f64]) -> f64 + Sync> {
        FnTarget::new(dim, |_q: &[f64], g: &mut [f64]| {
            g.iter_mut().for_each(|x| *x = 0.0);
            0.0
        })
    }
}
