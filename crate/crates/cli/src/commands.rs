use std::path::{Path, PathBuf};

use latent_hmc::diagnostics::{
    align_chains, diagnose as summarize_draws, error_summary, label_axis, match_topics, topic_profiles, Distance,
    DiagnosticsReport, ErrorSummary, LabelAxis, RHAT_THRESHOLD,
};
use latent_hmc::gibbs::{run_gibbs, GibbsConfig};
use latent_hmc::io::{self, format_real, RunManifest};
use latent_hmc::models::{Dataset, Family, Model, ModelSpec};
use latent_hmc::samplers::{divergence_rate, run_chains, RunConfig, SamplerKind};
use latent_hmc::samples::SampleSet;
use latent_hmc::simgen::{self, SimTruth};
use serde_json::Value;

use crate::args::{CompareArgs, DiagnoseArgs, FitArgs, ReplayArgs, SamplerArg, SimModel, SimulateArgs};
use crate::data::{self, MANIFEST_FILE, REPORT_FILE, SAMPLES_FILE, STATS_FILE, SUMMARY_FILE, TRUTH_FILE};
use crate::error::CliError;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Share of divergent transitions above which `fit` warns.
pub const DIVERGENCE_WARNING: f64 = 0.25;

/// Acceptance rate the Langevin step size is tuned toward when not fixed.

pub fn simulate(args: &SimulateArgs) -> Result<SimTruth, CliError> {
    if !(args.scale > 0.0 && args.scale.is_finite()) {
        return Err(CliError::usage(format!("--scale must be positive, got {}", args.scale)));
    }
    let dir = &args.out;
    let (files, truth) = match args.model {
        SimModel::Stm => {
            let (dtm, cov, truth) = simgen::simulate_stm(args.seed)?;
            (data::write_corpus(dir, &dtm, Some(&cov))?, truth)
        }
        SimModel::Slda => {
            let (dtm, cov, truth) = simgen::simulate_slda(args.seed)?;
            (data::write_corpus(dir, &dtm, Some(&cov))?, truth)
        }
        SimModel::Lda => {
            let (dtm, truth) = simgen::simulate_lda(args.seed)?;
            (data::write_corpus(dir, &dtm, None)?, truth)
        }
        SimModel::Dsr => {
            let (panel, truth) = simgen::simulate_dsr(args.seed, args.scale)?;
            (data::write_panel(dir, &panel)?, truth)
        }
    };
    io::write_truth(&dir.join(TRUTH_FILE), &truth)?;
    let mut m = RunManifest::new();
    m.set("command", "simulate");
    m.set("version", VERSION);
    m.set("generator", truth.generator.clone());
    m.set("seed", args.seed);
    m.set("scale", args.scale);
    for f in files.iter().map(String::as_str).chain([TRUTH_FILE]) {
        m.add_digest(dir, f)?;
    }
    m.write(&dir.join(MANIFEST_FILE))?;
    Ok(truth)
}

/// Everything that determines a fit's draws.
#[derive(Debug, Clone, PartialEq)]
pub struct FitPlan {
    pub spec: ModelSpec,
    pub sampler: SamplerArg,
    pub data: PathBuf,
    pub draws: usize,
    pub warmup: usize,
    pub chains: usize,
    pub thin: usize,
    pub seed: u64,
    pub ld_step_size: f64,
    pub ld_target_accept: Option<f64>,
}

pub fn default_k(family: Family) -> usize {
    match family {
        Family::Lda => 5,
        Family::Dsr => 4,
        Family::Stm | Family::Slda | Family::Sslda => 2,
    }
}

impl FitPlan {
    pub fn from_args(args: &FitArgs) -> Result<Self, CliError> {
        let family = args.model.family();
        if args.sampler == SamplerArg::Gibbs && family != Family::Lda {
            return Err(CliError::usage(format!("the gibbs sampler only fits lda, not {}", family.name())));
        }
        let k = match args.k {
            Some(k) => k,
            None => data::load_truth_beside(&args.data)?
                .and_then(|t| t.params.get("theta").and_then(|a| a.shape.last().copied()))
                .unwrap_or_else(|| default_k(family)),
        };
        let mut spec = ModelSpec::new(family, k);
        for (key, value) in &args.overrides {
            spec.set(key, value)?;
        }
        spec.validate()?;
        if !(args.step_size > 0.0) {
            return Err(CliError::usage("--step-size must be positive"));
        }
        if args.target_accept.is_some_and(|a| !(a > 0.0 && a < 1.0)) {
            return Err(CliError::usage("--target-accept must lie in (0, 1)"));
        }
        Ok(FitPlan {
            spec,
            sampler: args.sampler,
            data: args.data.clone(),
            draws: args.draws,
            warmup: args.warmup,
            chains: args.chains,
            thin: args.thin,
            seed: args.seed,
            ld_step_size: args.step_size,
            ld_target_accept: if args.sampler == SamplerArg::Ld { args.target_accept } else { None },
        })
    }

    fn record(&self, m: &mut RunManifest) -> Result<(), CliError> {
        m.set("command", "fit");
        m.set("version", VERSION);
        m.set("family", self.spec.family.name());
        m.set("sampler", self.sampler.name());
        m.set("seed", self.seed);
        m.set("draws", self.draws as u64);
        m.set("warmup", self.warmup as u64);
        m.set("chains", self.chains as u64);
        m.set("thin", self.thin as u64);
        m.set("k", self.spec.k as u64);
        let spec = serde_json::to_value(&self.spec).map_err(|e| CliError::runtime(e.to_string()))?;
        for (key, value) in spec.as_object().into_iter().flatten() {
            m.set(format!("hyper.{key}"), value.clone());
        }
        if self.sampler == SamplerArg::Ld {
            m.set("ld.step_size", self.ld_step_size);
            m.set("ld.target_accept", self.ld_target_accept.map_or(Value::Null, Value::from));
        }
        let dir = std::fs::canonicalize(&self.data).unwrap_or_else(|_| self.data.clone());
        m.set("data.dir", dir.to_string_lossy().to_string());
        Ok(())
    }

    pub fn from_manifest(m: &RunManifest) -> Result<Self, CliError> {
        if m.get_str("command") != Some("fit") {
            return Err(CliError::usage("manifest does not describe a fit"));
        }
        let missing = |key: &str| CliError::usage(format!("manifest has no '{key}'"));
        let count = |key: &str| m.get_u64(key).map(|v| v as usize).ok_or_else(|| missing(key));
        let hyper: serde_json::Map<String, Value> = m
            .entries
            .iter()
            .filter_map(|(k, v)| k.strip_prefix("hyper.").map(|k| (k.to_string(), v.clone())))
            .collect();
        let spec: ModelSpec =
            serde_json::from_value(Value::Object(hyper)).map_err(|e| CliError::usage(format!("manifest hyperparameters: {e}")))?;
        let sampler = m.get_str("sampler").and_then(SamplerArg::parse).ok_or_else(|| missing("sampler"))?;
        Ok(FitPlan {
            spec,
            sampler,
            data: PathBuf::from(m.get_str("data.dir").ok_or_else(|| missing("data.dir"))?),
            draws: count("draws")?,
            warmup: count("warmup")?,
            chains: count("chains")?,
            thin: count("thin")?,
            seed: m.get_u64("seed").ok_or_else(|| missing("seed"))?,
            ld_step_size: m.get_f64("ld.step_size").unwrap_or(0.01),
            ld_target_accept: m.get_f64("ld.target_accept"),
        })
    }
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub set: SampleSet,
    pub manifest: RunManifest,
    pub divergence_rate: f64,
}

pub fn fit(args: &FitArgs) -> Result<FitOutcome, CliError> {
    let plan = FitPlan::from_args(args)?;
    run_plan(&plan, &args.out, args.jobs)
}

/// Samples according to `plan` and writes draws, per-draw statistics and
/// the manifest into `out`.
pub fn run_plan(plan: &FitPlan, out: &Path, jobs: usize) -> Result<FitOutcome, CliError> {
    let (dataset, files) = data::load_dataset(&plan.data, plan.spec.family)?;
    let set = match plan.sampler {
        SamplerArg::Gibbs => {
            let Dataset::Corpus { dtm, .. } = &dataset else {
                return Err(CliError::usage("gibbs needs a corpus"));
            };
            let config = GibbsConfig {
                k: plan.spec.k,
                alpha: plan.spec.alpha,
                eta: plan.spec.eta,
                draws: plan.draws,
                thin: plan.thin,
                burn: Some(plan.warmup),
                seed: plan.seed,
                chains: plan.chains,
                jobs,
            };
            run_gibbs(dtm, &config)?
        }
        SamplerArg::Nuts | SamplerArg::Ld => {
            let model = Model::new(plan.spec.clone(), &dataset)?;
            let config = RunConfig {
                draws: plan.draws,
                warmup: plan.warmup,
                chains: plan.chains,
                seed: plan.seed,
                sampler: if plan.sampler == SamplerArg::Ld { SamplerKind::Ld } else { SamplerKind::Nuts },
                ld_step_size: plan.ld_step_size,
                ld_target_accept: plan.ld_target_accept,
                thin: plan.thin,
                jobs,
                ..RunConfig::default()
            };
            run_chains(&model, &config)?
        }
    };
    let finite = (0..set.chains()).all(|c| (0..set.draws()).all(|d| set.draw(c, d).iter().all(|v| v.is_finite())));
    if !finite {
        return Err(CliError::runtime("sampler produced non-finite draws"));
    }
    io::write_samples(&out.join(SAMPLES_FILE), &set)?;
    let rate = divergence_rate(&set);
    let mut m = RunManifest::new();
    plan.record(&mut m)?;
    for f in &files {
        m.set(format!("data.digest.{f}"), io::file_digest(&plan.data.join(f))?);
    }
    m.set_params(set.params());
    m.add_digest(out, SAMPLES_FILE)?;
    if !set.stats.iter().all(Vec::is_empty) {
        write_stats(&out.join(STATS_FILE), &set)?;
    }
    for (key, value) in &set.metadata {
        if key != "sampler" && key != "seed" {
            m.set(key.clone(), value.clone());
        }
    }
    m.set("divergence_rate", rate);
    m.write(&out.join(MANIFEST_FILE))?;
    if rate > DIVERGENCE_WARNING {
        eprintln!(
            "WARNING: {:.1}% of post-warmup transitions diverged; the draws are unreliable",
            100.0 * rate
        );
    }
    Ok(FitOutcome { set, manifest: m, divergence_rate: rate })
}

fn write_stats(path: &Path, set: &SampleSet) -> Result<(), CliError> {
    let header = ["chain", "draw", "accept_stat", "step_size", "tree_depth", "n_leapfrog", "divergent", "energy"];
    let mut rows = Vec::new();
    for (c, chain) in set.stats.iter().enumerate() {
        for (d, s) in chain.iter().enumerate() {
            rows.push(vec![
                c.to_string(),
                d.to_string(),
                format_real(s.accept_stat),
                format_real(s.step_size),
                s.tree_depth.to_string(),
                s.n_leapfrog.to_string(),
                u8::from(s.divergent).to_string(),
                format_real(s.energy),
            ]);
        }
    }
    Ok(io::write_table(path, &header, &rows)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayOutcome {
    pub expected: String,
    pub actual: String,
}

/// Re-runs the fit a manifest records and compares the samples digest.
pub fn replay(args: &ReplayArgs) -> Result<ReplayOutcome, CliError> {
    let m = RunManifest::load(&args.manifest)?;
    let plan = FitPlan::from_manifest(&m)?;
    for (key, value) in &m.entries {
        if let Some(file) = key.strip_prefix("data.digest.") {
            let actual = io::file_digest(&plan.data.join(file))?;
            if Some(actual.as_str()) != value.as_str() {
                return Err(CliError::usage(format!("{}: {file} changed since the run", plan.data.display())));
            }
        }
    }
    let expected =
        m.get_str(&format!("digest.{SAMPLES_FILE}")).ok_or_else(|| CliError::usage("manifest has no samples digest"))?.to_string();
    let outcome = run_plan(&plan, &args.out, args.jobs)?;
    let actual = outcome.manifest.get_str(&format!("digest.{SAMPLES_FILE}")).unwrap_or_default().to_string();
    if actual != expected {
        return Err(CliError::runtime(format!("replayed draws differ: digest {actual}, manifest {expected}")));
    }
    Ok(ReplayOutcome { expected, actual })
}

/// Names of row-per-topic parameters (`beta`, `beta_j`) in parameter order.
pub fn topic_blocks(set: &SampleSet) -> Vec<String> {
    set.params().iter().filter(|p| label_axis(&p.name) == Some(LabelAxis::Rows)).map(|p| p.name.clone()).collect()
}

fn anchor_of(set: &SampleSet, manifest: Option<&RunManifest>, k: usize) -> usize {
    manifest
        .and_then(|m| m.get_u64("hyper.anchor"))
        .map(|a| a as usize)
        .unwrap_or(if set.param("theta_tilde").is_some() { 0 } else { k.saturating_sub(1) })
}

/// Truth profiles for the topic blocks present in both the draws and the truth.
fn truth_profiles(set: &SampleSet, truth: &SimTruth) -> Option<(Vec<String>, Vec<Vec<f64>>)> {
    let names: Vec<String> = topic_blocks(set)
        .into_iter()
        .filter(|n| truth.params.get(n).is_some_and(|a| Some(&a.shape) == set.param(n).map(|(p, _)| &p.shape)))
        .collect();
    let first = truth.params.get(names.first()?)?;
    let k = first.shape[0];
    let mut profiles = vec![Vec::new(); k];
    for n in &names {
        let a = &truth.params[n];
        let w = a.values.len() / k;
        for (t, p) in profiles.iter_mut().enumerate() {
            p.extend_from_slice(&a.values[t * w..(t + 1) * w]);
        }
    }
    Some((names, profiles))
}

/// Relabels each chain to its closest match with the truth's topics.
pub fn align_to_truth(set: &SampleSet, truth: &SimTruth, manifest: Option<&RunManifest>) -> Result<(SampleSet, Vec<Vec<usize>>), CliError> {
    match truth_profiles(set, truth) {
        Some((names, reference)) if reference.len() >= 2 => {
            let anchor = anchor_of(set, manifest, reference.len());
            let (aligned, matchings) = align_chains(set, &reference, &names, anchor)?;
            Ok((aligned, matchings.into_iter().map(|m| m.permutation).collect()))
        }
        _ => Ok((set.clone(), Vec::new())),
    }
}

#[derive(Debug, Clone)]
pub struct DiagnoseOutcome {
    pub report: DiagnosticsReport,
    pub summary: Option<ErrorSummary>,
    pub permutations: Vec<Vec<usize>>,
}

pub fn diagnose(args: &DiagnoseArgs) -> Result<DiagnoseOutcome, CliError> {
    let (set, manifest) = data::load_run(&args.samples)?;
    let out = match &args.out {
        Some(o) => o.clone(),
        None if args.samples.is_dir() => args.samples.clone(),
        None => args.samples.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    let truth = args.truth.as_deref().map(io::load_truth).transpose()?;
    let Some(truth) = truth else {
        let mut report = summarize_draws(&set, None)?;
        let mut symmetric = vec!["theta".to_string()];
        symmetric.extend(topic_blocks(&set));
        let names: Vec<&str> = symmetric.iter().map(String::as_str).collect();
        report.flag_label_symmetric(&names);
        io::write_report(&out.join(REPORT_FILE), &report)?;
        let flagged = report.rows.iter().filter(|r| r.label_symmetric && r.rhat > RHAT_THRESHOLD).count();
        if set.chains() > 1 && flagged > 0 {
            eprintln!(
                "note: {flagged} topic-labeled entries have R̂ > {RHAT_THRESHOLD}; chains may have settled on different topic labelings"
            );
        }
        return Ok(DiagnoseOutcome { report, summary: None, permutations: Vec::new() });
    };
    for name in &args.params {
        if set.param(name).is_none() {
            return Err(CliError::usage(format!("draws have no parameter '{name}'")));
        }
        if !truth.params.contains_key(name) {
            return Err(CliError::usage(format!("truth file has no parameter '{name}'")));
        }
    }
    let (aligned, permutations) = align_to_truth(&set, &truth, manifest.as_ref())?;
    let values = truth.values();
    let report = summarize_draws(&aligned, Some(&values))?;
    io::write_report(&out.join(REPORT_FILE), &report)?;
    let names: Vec<&str> = args.params.iter().map(String::as_str).collect();
    let summary = error_summary(&report.filter(&names), &values)?;
    io::write_summary(&out.join(SUMMARY_FILE), &summary)?;
    Ok(DiagnoseOutcome { report, summary: Some(summary), permutations })
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareOutcome {
    /// Topic i of run A matches topic `permutation[i]` of run B.
    pub permutation: Vec<usize>,
    pub distances: Vec<f64>,
    pub theta_correlation: f64,
}

/// Relabels every chain of `set` to the first chain's topics.
fn self_align(set: &SampleSet, names: &[String], anchor: usize) -> Result<SampleSet, CliError> {
    let reference = topic_profiles(set, names, Some(0))?;
    Ok(align_chains(set, &reference, names, anchor)?.0)
}

pub fn compare(args: &CompareArgs) -> Result<CompareOutcome, CliError> {
    let (a, ma) = data::load_run(&args.run_a)?;
    let (b, mb) = data::load_run(&args.run_b)?;
    let names = topic_blocks(&a);
    if names.is_empty() {
        return Err(CliError::usage("run A has no topic blocks to match"));
    }
    let shape = |s: &SampleSet, n: &str| s.param(n).map(|(p, _)| p.shape.clone());
    for n in names.iter().map(String::as_str).chain(["theta"]) {
        if shape(&a, n).is_none() || shape(&a, n) != shape(&b, n) {
            return Err(CliError::usage(format!("runs disagree on the shape of '{n}': {:?} vs {:?}", shape(&a, n), shape(&b, n))));
        }
    }
    let k = shape(&a, &names[0]).unwrap()[0];
    let a = self_align(&a, &names, anchor_of(&a, ma.as_ref(), k))?;
    let b = self_align(&b, &names, anchor_of(&b, mb.as_ref(), k))?;
    let pa = topic_profiles(&a, &names, None)?;
    let pb = topic_profiles(&b, &names, None)?;
    let matching = match_topics(&pa, &pb, Distance::Euclidean)?;
    let theta_a = a.param_mean("theta").expect("checked above");
    let theta_b = b.param_mean("theta").expect("checked above");
    let mut pairs = Vec::with_capacity(theta_a.len());
    for (row, (ra, rb)) in theta_a.chunks(k).zip(theta_b.chunks(k)).enumerate() {
        for (t, &p) in matching.permutation.iter().enumerate() {
            pairs.push((row, t, ra[t], rb[p]));
        }
    }
    let xa: Vec<f64> = pairs.iter().map(|p| p.2).collect();
    let xb: Vec<f64> = pairs.iter().map(|p| p.3).collect();
    let theta_correlation = pearson(&xa, &xb);
    if let Some(out) = &args.out {
        let rows: Vec<Vec<String>> = matching
            .permutation
            .iter()
            .zip(&matching.distances)
            .enumerate()
            .map(|(i, (p, d))| vec![i.to_string(), p.to_string(), format_real(*d)])
            .collect();
        io::write_table(&out.join("matching.csv"), &["topic_a", "topic_b", "distance"], &rows)?;
        let rows: Vec<Vec<String>> =
            pairs.iter().map(|p| vec![p.0.to_string(), p.1.to_string(), format_real(p.2), format_real(p.3)]).collect();
        io::write_table(&out.join("theta_pairs.csv"), &["row", "topic", "theta_a", "theta_b"], &rows)?;
        let rows = vec![
            vec!["theta_correlation".to_string(), format_real(theta_correlation)],
            vec!["total_distance".to_string(), format_real(matching.total)],
        ];
        io::write_table(&out.join("concordance.csv"), &["statistic", "value"], &rows)?;
    }
    Ok(CompareOutcome { permutation: matching.permutation, distances: matching.distances, theta_correlation })
}

/// One line per summary row, for the terminal.
pub fn format_summary(summary: &ErrorSummary) -> String {
    let mut s = format!("{:<8}{:>12}{:>12}{:>12}{:>12}{:>12}\n", "", "Mean", "Q05", "Q50", "Q95", "Frac>1.1");
    for (name, q, frac) in [
        ("Error", &summary.error, Some(summary.frac_rhat_above)),
        ("ESS", &summary.ess, None),
        ("R-hat", &summary.rhat, None),
    ] {
        s.push_str(&format!("{name:<8}{:>12.4}{:>12.4}{:>12.4}{:>12.4}", q.mean, q.q05, q.q50, q.q95));
        match frac {
            Some(f) => s.push_str(&format!("{f:>12.4}\n")),
            None => s.push('\n'),
        }
    }
    s
}
