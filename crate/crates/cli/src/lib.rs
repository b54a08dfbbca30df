//! Command-line pipelines: simulate, fit, diagnose, compare, study and replay.

pub mod args;
pub mod commands;
pub mod data;
pub mod error;
pub mod study;

use args::{Cli, Command, StudyArgs, StudyName};
use commands::format_summary;
use error::CliError;
use study::{DsrStudyConfig, StmStudyConfig};

/// Runs one parsed command, printing its headline results to standard output.
pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate(a) => {
            let truth = commands::simulate(&a)?;
            println!("wrote {} dataset (seed {}) to {}", truth.generator, truth.seed, a.out.display());
        }
        Command::Fit(a) => {
            let out = commands::fit(&a)?;
            println!(
                "wrote {} chains × {} draws to {} (divergence rate {:.4})",
                out.set.chains(),
                out.set.draws(),
                a.out.display(),
                out.divergence_rate
            );
        }
        Command::Diagnose(a) => {
            let out = commands::diagnose(&a)?;
            let worst = out.report.rows.iter().map(|r| r.rhat).fold(1.0, f64::max);
            println!("{} entries, max R̂ {worst:.4}", out.report.rows.len());
            for (c, p) in out.permutations.iter().enumerate() {
                if p.iter().enumerate().any(|(i, &j)| i != j) {
                    println!("chain {c} relabeled to truth: {p:?}");
                }
            }
            if let Some(s) = &out.summary {
                print!("{}", format_summary(s));
            }
        }
        Command::Compare(a) => {
            let out = commands::compare(&a)?;
            println!("permutation {:?}", out.permutation);
            println!("distances {:?}", out.distances);
            println!("theta correlation {:.6}", out.theta_correlation);
        }
        Command::Study(a) => run_study(&a)?,
        Command::Replay(a) => {
            let out = commands::replay(&a)?;
            println!("samples digest matches manifest: {}", out.actual);
        }
    }
    Ok(())
}

fn run_study(a: &StudyArgs) -> Result<(), CliError> {
    match a.name {
        StudyName::StmSim => {
            let d = StmStudyConfig::default();
            let config = StmStudyConfig {
                replications: a.replications,
                seed: a.seed,
                hmc_draws: a.hmc_draws.unwrap_or(d.hmc_draws),
                hmc_warmup: a.hmc_warmup.unwrap_or(d.hmc_warmup),
                gibbs_draws: a.gibbs_draws.unwrap_or(d.gibbs_draws),
                jobs: a.jobs,
                ..d
            };
            let report = study::run_stm_study(&config, Some(&a.out))?;
            let n = report.completed().len();
            println!("hmc covers γ₁ in {}/{n}, mean |error| {:.4}", report.hmc_covered(), report.hmc_mae());
            println!("two-step covers γ₁ in {}/{n}, mean |error| {:.4}", report.two_step_covered(), report.two_step_mae());
        }
        StudyName::DsrSim => {
            let d = DsrStudyConfig::default();
            let config = DsrStudyConfig {
                replications: a.replications,
                seed: a.seed,
                scale: a.scale,
                hmc_draws: a.hmc_draws.unwrap_or(d.hmc_draws),
                hmc_warmup: a.hmc_warmup.unwrap_or(d.hmc_warmup),
                ld_draws: a.ld_draws.unwrap_or(d.ld_draws),
                ld_warmup: a.ld_warmup.unwrap_or(d.ld_warmup),
                jobs: a.jobs,
                ..d
            };
            let report = study::run_dsr_study(&config, Some(&a.out))?;
            for (name, s) in [("HMC", &report.hmc), ("LD", &report.ld)] {
                if let Some(s) = s {
                    println!("{name}");
                    print!("{}", format_summary(s));
                }
            }
            println!("ESS per draw, HMC / LD: {:.2}", report.ess_per_draw_ratio());
        }
    }
    Ok(())
}
