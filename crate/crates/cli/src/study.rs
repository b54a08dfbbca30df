//! Simulation studies: repeated simulate → fit → diagnose with aggregation.

use std::path::Path;
use std::time::Instant;

use latent_hmc::diagnostics::{
    credible_interval, diagnose, pooled_error_summary, two_step_bootstrap, DiagnosticsReport, ErrorSummary,
};
use latent_hmc::gibbs::{run_gibbs, GibbsConfig};
use latent_hmc::io::{self, format_real, RunManifest};
use latent_hmc::models::{Family, Model, ModelSpec, NamedParams};
use latent_hmc::samplers::{chain_rng, divergence_rate, run_chains, RunConfig, SamplerKind};
use latent_hmc::samples::SampleSet;
use latent_hmc::simgen::{self, SimTruth};
use rayon::prelude::*;

use crate::commands::{align_to_truth, VERSION};
use crate::error::CliError;

/// Largest share of failed replications a study tolerates.
pub const MAX_FAILURE_SHARE: f64 = 0.1;

fn in_pool<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T, CliError> {
    if jobs == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs).build().map_err(|e| CliError::runtime(e.to_string()))?;
    Ok(pool.install(f))
}

fn check_failures(failures: usize, replications: usize) -> Result<(), CliError> {
    if failures as f64 > MAX_FAILURE_SHARE * replications as f64 {
        return Err(CliError::runtime(format!("{failures} of {replications} replications failed")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntervalEstimate {
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
}

impl IntervalEstimate {
    pub fn covers(&self, value: f64) -> bool {
        self.lower <= value && value <= self.upper
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StmStudyConfig {
    pub replications: usize,
    pub seed: u64,
    pub hmc_draws: usize,
    pub hmc_warmup: usize,
    pub gibbs_draws: usize,
    pub gibbs_thin: usize,
    pub gibbs_alpha: f64,
    pub gibbs_eta: f64,
    pub resamples: usize,
    pub jobs: usize,
}

impl Default for StmStudyConfig {
    fn default() -> Self {
        Self {
            replications: 50,
            seed: 1,
            hmc_draws: 2000,
            hmc_warmup: 1000,
            gibbs_draws: 500,
            gibbs_thin: 10,
            gibbs_alpha: 1.0,
            gibbs_eta: 0.2,
            resamples: 1000,
            jobs: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StmReplication {
    pub replication: usize,
    pub seed: u64,
    pub truth: f64,
    pub hmc: IntervalEstimate,
    pub two_step: IntervalEstimate,
    pub hmc_divergence_rate: f64,
    pub hmc_step_size: String,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone)]
pub struct StmStudyReport {
    pub replications: Vec<(usize, Result<StmReplication, String>)>,
}

impl StmStudyReport {
    pub fn completed(&self) -> Vec<&StmReplication> {
        self.replications.iter().filter_map(|(_, r)| r.as_ref().ok()).collect()
    }

    pub fn failures(&self) -> usize {
        self.replications.iter().filter(|(_, r)| r.is_err()).count()
    }

    pub fn hmc_covered(&self) -> usize {
        self.completed().iter().filter(|r| r.hmc.covers(r.truth)).count()
    }

    pub fn two_step_covered(&self) -> usize {
        self.completed().iter().filter(|r| r.two_step.covers(r.truth)).count()
    }

    fn mae(&self, pick: impl Fn(&StmReplication) -> f64) -> f64 {
        let done = self.completed();
        done.iter().map(|r| (pick(r) - r.truth).abs()).sum::<f64>() / done.len() as f64
    }

    pub fn hmc_mae(&self) -> f64 {
        self.mae(|r| r.hmc.estimate)
    }

    pub fn two_step_mae(&self) -> f64 {
        self.mae(|r| r.two_step.estimate)
    }
}

/// Index of γ₁ in the flattened `gamma` of a two-topic STM with one covariate.
const GAMMA1: usize = 1;

/// Topic-share draws `[s][d][k]` of the first chain.
fn theta_draws(set: &SampleSet) -> Result<Vec<Vec<Vec<f64>>>, CliError> {
    let (info, start) = set.param("theta").ok_or_else(|| CliError::runtime("draws have no theta"))?;
    let k = info.shape[1];
    Ok((0..set.draws())
        .map(|s| set.draw(0, s)[start..start + info.len()].chunks(k).map(<[f64]>::to_vec).collect())
        .collect())
}

pub fn run_stm_replication(config: &StmStudyConfig, replication: usize) -> Result<StmReplication, CliError> {
    let start = Instant::now();
    let seed = config.seed + replication as u64;
    let (dtm, covariates, truth) = simgen::simulate_stm(seed)?;
    let gamma1 = truth.get("gamma").map(|g| g[GAMMA1]).ok_or_else(|| CliError::runtime("truth has no gamma"))?;

    let spec = ModelSpec::new(Family::Stm, 2);
    let model = Model::corpus(spec, &dtm, &covariates)?;
    let run = RunConfig {
        draws: config.hmc_draws,
        warmup: config.hmc_warmup,
        chains: 1,
        seed,
        sampler: SamplerKind::Nuts,
        ..RunConfig::default()
    };
    let set = run_chains(&model, &run)?;
    let (set_aligned, _) = align_to_truth(&set, &truth, None)?;
    let (_, g_start) = set_aligned.param("gamma").ok_or_else(|| CliError::runtime("draws have no gamma"))?;
    let draws = set_aligned.pooled(g_start + GAMMA1);
    let (lower, upper) = credible_interval(&draws, 0.95)?;
    let hmc = IntervalEstimate { estimate: draws.iter().sum::<f64>() / draws.len() as f64, lower, upper };

    let gibbs = GibbsConfig {
        draws: config.gibbs_draws,
        thin: config.gibbs_thin,
        seed,
        ..GibbsConfig::new(2, config.gibbs_alpha, config.gibbs_eta)
    };
    let lda = run_gibbs(&dtm, &gibbs)?;
    let (lda_aligned, _) = align_to_truth(&lda, &truth, None)?;
    let mut rng = chain_rng(seed, 1);
    let boot = two_step_bootstrap(&theta_draws(&lda_aligned)?, &covariates.g, 0, 1, 1, config.resamples, &mut rng)?;
    let two_step = IntervalEstimate { estimate: boot.point, lower: boot.lower, upper: boot.upper };

    Ok(StmReplication {
        replication,
        seed,
        truth: gamma1,
        hmc,
        two_step,
        hmc_divergence_rate: divergence_rate(&set),
        hmc_step_size: set.metadata.get("step_size").cloned().unwrap_or_default(),
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

/// Runs the STM study and, with `out`, writes its tables there.
pub fn run_stm_study(config: &StmStudyConfig, out: Option<&Path>) -> Result<StmStudyReport, CliError> {
    if config.replications == 0 {
        return Err(CliError::usage("a study needs at least one replication"));
    }
    let replications = in_pool(config.jobs, || {
        (0..config.replications)
            .into_par_iter()
            .map(|r| {
                let result = run_stm_replication(config, r).map_err(|e| e.to_string());
                match &result {
                    Ok(x) => eprintln!(
                        "stm-sim {r}: hmc {:.3} [{:.3}, {:.3}], two-step {:.3} [{:.3}, {:.3}], {:.0}s",
                        x.hmc.estimate, x.hmc.lower, x.hmc.upper, x.two_step.estimate, x.two_step.lower, x.two_step.upper, x.wall_time_s
                    ),
                    Err(e) => eprintln!("stm-sim {r}: failed: {e}"),
                }
                (r, result)
            })
            .collect()
    })?;
    let report = StmStudyReport { replications };
    if let Some(out) = out {
        write_stm_tables(out, config, &report)?;
    }
    check_failures(report.failures(), config.replications)?;
    Ok(report)
}

fn write_stm_tables(out: &Path, config: &StmStudyConfig, report: &StmStudyReport) -> Result<(), CliError> {
    let mut rows = Vec::new();
    for (r, result) in &report.replications {
        match result {
            Ok(x) => {
                for (method, e) in [("hmc", &x.hmc), ("two_step", &x.two_step)] {
                    rows.push(vec![
                        r.to_string(),
                        x.seed.to_string(),
                        method.to_string(),
                        format_real(e.estimate),
                        format_real(e.lower),
                        format_real(e.upper),
                        u8::from(e.covers(x.truth)).to_string(),
                        format_real((e.estimate - x.truth).abs()),
                        "ok".to_string(),
                    ]);
                }
            }
            Err(e) => rows.push(vec![
                r.to_string(),
                (config.seed + *r as u64).to_string(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                format!("failed: {e}"),
            ]),
        }
    }
    io::write_table(
        &out.join("stm_sim_replications.csv"),
        &["replication", "seed", "method", "estimate", "lower", "upper", "covers", "abs_error", "status"],
        &rows,
    )?;

    let done = report.completed();
    let summary_row = |method: &str, covered: usize, mae: f64, pick: &dyn Fn(&StmReplication) -> f64| {
        let est: Vec<f64> = done.iter().map(|r| pick(r)).collect();
        vec![
            method.to_string(),
            done.len().to_string(),
            covered.to_string(),
            format_real(covered as f64 / done.len().max(1) as f64),
            format_real(est.iter().sum::<f64>() / est.len().max(1) as f64),
            format_real(mae),
        ]
    };
    let rows = vec![
        summary_row("hmc", report.hmc_covered(), report.hmc_mae(), &|r| r.hmc.estimate),
        summary_row("two_step", report.two_step_covered(), report.two_step_mae(), &|r| r.two_step.estimate),
    ];
    io::write_table(
        &out.join("stm_sim_summary.csv"),
        &["method", "replications", "covered", "coverage", "mean_estimate", "mean_abs_error"],
        &rows,
    )?;

    let rows: Vec<Vec<String>> = (0..=60)
        .map(|i| {
            let g = i as f64 * 0.05;
            let share = |pick: &dyn Fn(&StmReplication) -> IntervalEstimate| {
                done.iter().filter(|r| pick(r).covers(g)).count() as f64 / done.len().max(1) as f64
            };
            vec![format_real(g), format_real(share(&|r| r.hmc)), format_real(share(&|r| r.two_step))]
        })
        .collect();
    io::write_table(&out.join("stm_sim_inclusion.csv"), &["gamma1", "hmc", "two_step"], &rows)?;

    let mut m = RunManifest::new();
    m.set("command", "study");
    m.set("study", "stm-sim");
    m.set("version", VERSION);
    m.set("replications", config.replications as u64);
    m.set("seed", config.seed);
    m.set("hmc.draws", config.hmc_draws as u64);
    m.set("hmc.warmup", config.hmc_warmup as u64);
    m.set("gibbs.draws", config.gibbs_draws as u64);
    m.set("gibbs.thin", config.gibbs_thin as u64);
    m.set("gibbs.alpha", config.gibbs_alpha);
    m.set("gibbs.eta", config.gibbs_eta);
    m.set("bootstrap.resamples", config.resamples as u64);
    m.set("failures", report.failures() as u64);
    m.write(&out.join("manifest.json"))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct DsrStudyConfig {
    pub replications: usize,
    pub seed: u64,
    pub scale: f64,
    pub hmc_draws: usize,
    pub hmc_warmup: usize,
    pub ld_draws: usize,
    pub ld_warmup: usize,
    pub ld_step_size: f64,
    /// Tunes the Langevin step during warmup when set.
    pub ld_target_accept: Option<f64>,
    pub jobs: usize,
}

impl Default for DsrStudyConfig {
    fn default() -> Self {
        Self {
            replications: 3,
            seed: 1,
            scale: 0.05,
            hmc_draws: 2000,
            hmc_warmup: 500,
            ld_draws: 20_000,
            ld_warmup: 5000,
            ld_step_size: 0.01,
            ld_target_accept: None,
            jobs: 0,
        }
    }
}

/// Diagnostics of one sampler on one replication, restricted to θ.
#[derive(Debug, Clone)]
pub struct MethodRun {
    pub report: DiagnosticsReport,
    pub draws: usize,
    pub step_size: String,
    pub divergence_rate: f64,
    pub wall_time_s: f64,
}

impl MethodRun {
    pub fn mean_ess(&self) -> f64 {
        self.report.rows.iter().map(|r| r.ess).sum::<f64>() / self.report.rows.len() as f64
    }

    pub fn frac_rhat_above(&self) -> f64 {
        let n = self.report.rows.iter().filter(|r| r.rhat > latent_hmc::diagnostics::RHAT_THRESHOLD).count();
        n as f64 / self.report.rows.len() as f64
    }
}

#[derive(Debug, Clone)]
pub struct DsrReplication {
    pub replication: usize,
    pub seed: u64,
    pub hmc: MethodRun,
    pub ld: MethodRun,
    pub truth: NamedParams,
}

#[derive(Debug, Clone)]
pub struct DsrStudyReport {
    pub replications: Vec<(usize, Result<DsrReplication, String>)>,
    pub hmc: Option<ErrorSummary>,
    pub ld: Option<ErrorSummary>,
}

impl DsrStudyReport {
    pub fn completed(&self) -> Vec<&DsrReplication> {
        self.replications.iter().filter_map(|(_, r)| r.as_ref().ok()).collect()
    }

    pub fn failures(&self) -> usize {
        self.replications.iter().filter(|(_, r)| r.is_err()).count()
    }

    /// (ESS per HMC draw) / (ESS per LD draw), pooled over replications.
    pub fn ess_per_draw_ratio(&self) -> f64 {
        let done = self.completed();
        let per_draw = |pick: &dyn Fn(&DsrReplication) -> &MethodRun| {
            done.iter().map(|r| pick(r).mean_ess() / pick(r).draws as f64).sum::<f64>() / done.len() as f64
        };
        per_draw(&|r| &r.hmc) / per_draw(&|r| &r.ld)
    }
}

fn dsr_method(
    model: &Model,
    truth: &SimTruth,
    values: &NamedParams,
    run: &RunConfig,
) -> Result<MethodRun, CliError> {
    let start = Instant::now();
    let set = run_chains(model, run)?;
    let (aligned, _) = align_to_truth(&set, truth, None)?;
    let report = diagnose(&aligned.select(&["theta"]), Some(values))?;
    Ok(MethodRun {
        report,
        draws: run.draws,
        step_size: set.metadata.get("step_size").cloned().unwrap_or_default(),
        divergence_rate: divergence_rate(&set),
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

pub fn run_dsr_replication(config: &DsrStudyConfig, replication: usize) -> Result<DsrReplication, CliError> {
    let seed = config.seed + replication as u64;
    let (panel, truth) = simgen::simulate_dsr(seed, config.scale)?;
    let k = truth.params.get("theta").map(|a| a.shape[1]).ok_or_else(|| CliError::runtime("truth has no theta"))?;
    let model = Model::survey(ModelSpec::new(Family::Dsr, k), &panel)?;
    let values = truth.values();
    let base = RunConfig { chains: 1, seed, ..RunConfig::default() };
    let hmc = RunConfig { draws: config.hmc_draws, warmup: config.hmc_warmup, sampler: SamplerKind::Nuts, ..base.clone() };
    let ld = RunConfig {
        draws: config.ld_draws,
        warmup: config.ld_warmup,
        sampler: SamplerKind::Ld,
        ld_step_size: config.ld_step_size,
        ld_target_accept: config.ld_target_accept,
        ..base
    };
    Ok(DsrReplication {
        replication,
        seed,
        hmc: dsr_method(&model, &truth, &values, &hmc)?,
        ld: dsr_method(&model, &truth, &values, &ld)?,
        truth: values,
    })
}

pub fn run_dsr_study(config: &DsrStudyConfig, out: Option<&Path>) -> Result<DsrStudyReport, CliError> {
    if config.replications == 0 {
        return Err(CliError::usage("a study needs at least one replication"));
    }
    if !(config.scale > 0.0 && config.scale.is_finite()) {
        return Err(CliError::usage(format!("scale must be positive, got {}", config.scale)));
    }
    let replications: Vec<(usize, Result<DsrReplication, String>)> = in_pool(config.jobs, || {
        (0..config.replications)
            .into_par_iter()
            .map(|r| {
                let result = run_dsr_replication(config, r).map_err(|e| e.to_string());
                match &result {
                    Ok(x) => eprintln!(
                        "dsr-sim {r}: hmc frac R̂>1.1 {:.3}, mean ESS {:.1} ({:.0}s); ld frac {:.3}, mean ESS {:.1} ({:.0}s)",
                        x.hmc.frac_rhat_above(),
                        x.hmc.mean_ess(),
                        x.hmc.wall_time_s,
                        x.ld.frac_rhat_above(),
                        x.ld.mean_ess(),
                        x.ld.wall_time_s
                    ),
                    Err(e) => eprintln!("dsr-sim {r}: failed: {e}"),
                }
                (r, result)
            })
            .collect()
    })?;
    let pooled = |pick: &dyn Fn(&DsrReplication) -> &MethodRun| -> Result<Option<ErrorSummary>, CliError> {
        let parts: Vec<(DiagnosticsReport, NamedParams)> = replications
            .iter()
            .filter_map(|(_, r)| r.as_ref().ok())
            .map(|r| (pick(r).report.clone(), r.truth.clone()))
            .collect();
        if parts.is_empty() {
            return Ok(None);
        }
        Ok(Some(pooled_error_summary(&parts)?))
    };
    let hmc = pooled(&|r| &r.hmc)?;
    let ld = pooled(&|r| &r.ld)?;
    let report = DsrStudyReport { replications, hmc, ld };
    if let Some(out) = out {
        write_dsr_tables(out, config, &report)?;
    }
    check_failures(report.failures(), config.replications)?;
    Ok(report)
}

fn write_dsr_tables(out: &Path, config: &DsrStudyConfig, report: &DsrStudyReport) -> Result<(), CliError> {
    let mut rows = Vec::new();
    for (r, result) in &report.replications {
        match result {
            Ok(x) => {
                for (method, m) in [("hmc", &x.hmc), ("ld", &x.ld)] {
                    let errors: Vec<f64> = m.report.rows.iter().filter_map(|row| row.error).collect();
                    rows.push(vec![
                        r.to_string(),
                        x.seed.to_string(),
                        method.to_string(),
                        m.draws.to_string(),
                        format_real(m.frac_rhat_above()),
                        format_real(m.mean_ess()),
                        format_real(errors.iter().map(|e| e.abs()).sum::<f64>() / errors.len().max(1) as f64),
                        m.step_size.clone(),
                        format_real(m.divergence_rate),
                        format_real(m.wall_time_s),
                        "ok".to_string(),
                    ]);
                }
            }
            Err(e) => {
                let mut row = vec![r.to_string(), (config.seed + *r as u64).to_string()];
                row.extend(std::iter::repeat(String::new()).take(8));
                row.push(format!("failed: {e}"));
                rows.push(row);
            }
        }
    }
    io::write_table(
        &out.join("dsr_sim_replications.csv"),
        &[
            "replication",
            "seed",
            "method",
            "draws",
            "frac_rhat_above_1.1",
            "mean_ess",
            "mean_abs_error",
            "step_size",
            "divergence_rate",
            "wall_time_s",
            "status",
        ],
        &rows,
    )?;

    let mut rows = Vec::new();
    for (method, summary) in [("HMC", &report.hmc), ("LD", &report.ld)] {
        let Some(s) = summary else { continue };
        for (quantity, q, frac) in [("Error", &s.error, Some(s.frac_rhat_above)), ("ESS", &s.ess, None), ("R-hat", &s.rhat, None)] {
            rows.push(vec![
                method.to_string(),
                quantity.to_string(),
                format_real(q.mean),
                format_real(q.q05),
                format_real(q.q50),
                format_real(q.q95),
                frac.map(format_real).unwrap_or_default(),
            ]);
        }
    }
    io::write_table(&out.join("dsr_sim_table.csv"), &["method", "quantity", "mean", "q05", "q50", "q95", "frac_rhat_above_1.1"], &rows)?;
    if !report.completed().is_empty() {
        let rows = vec![vec!["ess_per_draw_ratio_hmc_over_ld".to_string(), format_real(report.ess_per_draw_ratio())]];
        io::write_table(&out.join("dsr_sim_summary.csv"), &["statistic", "value"], &rows)?;
    }

    let mut m = RunManifest::new();
    m.set("command", "study");
    m.set("study", "dsr-sim");
    m.set("version", VERSION);
    m.set("replications", config.replications as u64);
    m.set("seed", config.seed);
    m.set("scale", config.scale);
    m.set("hmc.draws", config.hmc_draws as u64);
    m.set("hmc.warmup", config.hmc_warmup as u64);
    m.set("ld.draws", config.ld_draws as u64);
    m.set("ld.warmup", config.ld_warmup as u64);
    m.set("ld.step_size", config.ld_step_size);
    m.set("ld.target_accept", config.ld_target_accept.map_or(serde_json::Value::Null, serde_json::Value::from));
    m.set("failures", report.failures() as u64);
    m.write(&out.join("manifest.json"))?;
    Ok(())
}
