//! Synthetic datasets with recorded ground truth.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use rand::distributions::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::models::{CovariateSet, Dataset, DocumentTermMatrix, ModelError, NamedParams, Response, SurveyPanel};
use crate::special::{log_sum_exp, sigmoid};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("{0}")]
    Contract(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

fn contract(message: impl Into<String>) -> SimError {
    SimError::Contract(message.into())
}

/// A named array of generating values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthArray {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// Everything needed to regenerate a dataset, plus the generating values in
/// the parameterization the matching model samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTruth {
    pub generator: String,
    pub seed: u64,
    pub settings: BTreeMap<String, f64>,
    pub params: BTreeMap<String, TruthArray>,
    /// Original ids of the vocabulary terms kept after dropping unused ones.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub term_ids: Vec<usize>,
}

impl SimTruth {
    fn new(generator: &str, seed: u64) -> Self {
        Self { generator: generator.into(), seed, settings: BTreeMap::new(), params: BTreeMap::new(), term_ids: Vec::new() }
    }

    fn put(&mut self, name: &str, shape: &[usize], values: Vec<f64>) {
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        self.params.insert(name.into(), TruthArray { shape: shape.to_vec(), values });
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.params.get(name).map(|a| a.values.as_slice())
    }

    /// Flat values keyed by name, as the diagnostics expect.
    pub fn values(&self) -> NamedParams {
        self.params.iter().map(|(k, a)| (k.clone(), a.values.clone())).collect()
    }
}

/// Reading of the "mean share 0.75 at g = 2σ_g" calibration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Calibration {
    /// E_ε[sigmoid(γ₀ + 2γ₁σ_g + ε)] = 0.75.
    Expectation,
    /// sigmoid(γ₀ + 2γ₁σ_g) = 0.75, i.e. ε = 0.
    PlugIn,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StmSimConfig {
    pub docs: usize,
    pub doc_length: usize,
    pub vocabulary: usize,
    pub gamma0: f64,
    pub gamma1: f64,
    pub eta: f64,
    pub calibration: Calibration,
}

impl Default for StmSimConfig {
    fn default() -> Self {
        Self { docs: 100, doc_length: 25, vocabulary: 500, gamma0: 1.0, gamma1: 1.0, eta: 0.2, calibration: Calibration::Expectation }
    }
}

const CALIBRATION_TARGET: f64 = 0.75;
const CALIBRATION_SAMPLES: usize = 1_000_000;
const CALIBRATION_SEED: u64 = 20_240_601;

/// σ_g for the given intercept and slope, by bisection. The expectation is a
/// Monte-Carlo average over a fixed set of 10⁶ standard normal draws.
pub fn calibrate_sigma_g(gamma0: f64, gamma1: f64, calibration: Calibration) -> f64 {
    match calibration {
        Calibration::PlugIn => ((CALIBRATION_TARGET / (1.0 - CALIBRATION_TARGET)).ln() - gamma0) / (2.0 * gamma1),
        Calibration::Expectation => {
            static EPS: OnceLock<Vec<f64>> = OnceLock::new();
            let eps = EPS.get_or_init(|| {
                let mut rng = ChaCha8Rng::seed_from_u64(CALIBRATION_SEED);
                (0..CALIBRATION_SAMPLES).map(|_| rng.sample(StandardNormal)).collect()
            });
            let mean_share = |s: f64| eps.iter().map(|e| sigmoid(gamma0 + 2.0 * gamma1 * s + e)).sum::<f64>() / eps.len() as f64;
            bisect(|s| mean_share(s) - CALIBRATION_TARGET, -20.0, 20.0)
        }
    }
}

/// Root of an increasing function on [lo, hi].
pub(crate) fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-12 {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// log of a Gamma(shape, 1) draw, accurate for small shapes.
fn ln_gamma_draw<R: Rng>(shape: f64, rng: &mut R) -> f64 {
    if shape < 1.0 {
        let g = Gamma::new(shape + 1.0, 1.0).expect("positive shape").sample(rng);
        let u: f64 = rng.gen();
        g.ln() + u.ln() / shape
    } else {
        Gamma::new(shape, 1.0).expect("positive shape").sample(rng).ln()
    }
}

/// Symmetric Dirichlet draw of length `n`.
pub fn dirichlet_draw<R: Rng>(concentration: f64, n: usize, rng: &mut R) -> Vec<f64> {
    let logs: Vec<f64> = (0..n).map(|_| ln_gamma_draw(concentration, rng)).collect();
    let z = log_sum_exp(&logs);
    logs.iter().map(|l| (l - z).exp()).collect()
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let z = log_sum_exp(logits);
    logits.iter().map(|l| (l - z).exp()).collect()
}

/// Draws `n` tokens per document from Σ_k θ_dk β_k and drops unused terms.
/// Returns the corpus and the kept term ids.
fn draw_corpus<R: Rng>(theta: &[f64], beta: &[f64], k: usize, lengths: &[usize], rng: &mut R) -> Result<(DocumentTermMatrix, Vec<usize>), SimError> {
    let v = beta.len() / k;
    let mut rows = Vec::with_capacity(lengths.len());
    for (d, &n) in lengths.iter().enumerate() {
        let probs: Vec<f64> = (0..v).map(|w| (0..k).map(|t| theta[d * k + t] * beta[t * v + w]).sum()).collect();
        let dist = WeightedIndex::new(&probs).map_err(|e| contract(e.to_string()))?;
        let mut row = vec![0u64; v];
        for _ in 0..n {
            row[dist.sample(rng)] += 1;
        }
        rows.push(row);
    }
    Ok(DocumentTermMatrix::from_dense(&rows)?.compact_terms())
}

/// β restricted to `kept` terms, rows renormalized.
fn restrict_rows(beta: &[f64], k: usize, kept: &[usize]) -> Vec<f64> {
    let v = beta.len() / k;
    let mut out = Vec::with_capacity(k * kept.len());
    for t in 0..k {
        let row: Vec<f64> = kept.iter().map(|&w| beta[t * v + w]).collect();
        let s: f64 = row.iter().sum();
        out.extend(row.iter().map(|p| p / s));
    }
    out
}

/// Two-topic structural topic model corpus with defaults
/// D = 100, N_d = 25, V = 500, γ₀ = γ₁ = 1, η = 0.2.
pub fn simulate_stm(seed: u64) -> Result<(DocumentTermMatrix, CovariateSet, SimTruth), SimError> {
    simulate_stm_with(&StmSimConfig::default(), seed)
}

pub fn simulate_stm_with(config: &StmSimConfig, seed: u64) -> Result<(DocumentTermMatrix, CovariateSet, SimTruth), SimError> {
    if config.docs == 0 || config.doc_length == 0 || config.vocabulary < 2 || !(config.eta > 0.0) {
        return Err(contract("stm simulation needs documents, tokens, V ≥ 2 and η > 0"));
    }
    let k = 2;
    let sigma_g = calibrate_sigma_g(config.gamma0, config.gamma1, config.calibration);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let beta: Vec<f64> = (0..k).flat_map(|_| dirichlet_draw(config.eta, config.vocabulary, &mut rng)).collect();
    let mut g = Vec::with_capacity(config.docs);
    let mut eps = Vec::with_capacity(config.docs);
    let mut theta = Vec::with_capacity(config.docs * k);
    for _ in 0..config.docs {
        let gd = sigma_g * rng.sample::<f64, _>(StandardNormal);
        let ed: f64 = rng.sample(StandardNormal);
        let p = sigmoid(config.gamma0 + config.gamma1 * gd + ed);
        g.push(gd);
        eps.push(ed);
        theta.extend([p, 1.0 - p]);
    }
    let (dtm, kept) = draw_corpus(&theta, &beta, k, &vec![config.doc_length; config.docs], &mut rng)?;
    let covariates = CovariateSet { g_names: vec!["g".into()], g: g.iter().map(|&x| vec![x]).collect(), ..CovariateSet::empty(config.docs) };

    let mut truth = SimTruth::new("stm", seed);
    truth.settings.extend([
        ("docs".into(), config.docs as f64),
        ("doc_length".into(), config.doc_length as f64),
        ("vocabulary".into(), config.vocabulary as f64),
        ("gamma0".into(), config.gamma0),
        ("gamma1".into(), config.gamma1),
        ("eta".into(), config.eta),
        ("plug_in".into(), f64::from(u8::from(config.calibration == Calibration::PlugIn))),
        ("sigma_g".into(), sigma_g),
    ]);
    truth.put("gamma", &[2, 1], vec![config.gamma0, config.gamma1]);
    truth.put("eps", &[config.docs, 1], eps);
    truth.put("theta", &[config.docs, k], theta);
    truth.put("beta", &[k, kept.len()], restrict_rows(&beta, k, &kept));
    truth.term_ids = kept;
    Ok((dtm, covariates, truth))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DsrSimConfig {
    pub periods: usize,
    pub respondents: usize,
    pub categories: Vec<usize>,
    pub k: usize,
    pub eta: f64,
    pub walk_sd: f64,
}

impl Default for DsrSimConfig {
    fn default() -> Self {
        Self { periods: 50, respondents: 10_000, categories: vec![5, 5, 5, 5, 6, 6, 6, 6], k: 4, eta: 0.1, walk_sd: 0.1 }
    }
}

/// Dynamic survey panel: T = 50 periods of N_t = 10 000 · `scale`
/// respondents, K = 4 types, eight questions.
pub fn simulate_dsr(seed: u64, scale: f64) -> Result<(SurveyPanel, SimTruth), SimError> {
    if !(scale > 0.0 && scale <= 1.0) {
        return Err(contract(format!("scale {scale} outside (0, 1]")));
    }
    let base = DsrSimConfig::default();
    let respondents = ((base.respondents as f64 * scale).round() as usize).max(1);
    let (panel, mut truth) = simulate_dsr_with(&DsrSimConfig { respondents, ..base }, seed)?;
    truth.settings.insert("scale".into(), scale);
    Ok((panel, truth))
}

pub fn simulate_dsr_with(config: &DsrSimConfig, seed: u64) -> Result<(SurveyPanel, SimTruth), SimError> {
    let k = config.k;
    if k < 2 || config.periods == 0 || config.respondents == 0 || config.categories.is_empty() {
        return Err(contract("dsr simulation needs K ≥ 2, periods, respondents and questions"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let betas: Vec<Vec<f64>> = config
        .categories
        .iter()
        .map(|&l| (0..k).flat_map(|_| dirichlet_draw(config.eta, l, &mut rng)).collect())
        .collect();
    let mut level: Vec<f64> = (0..k).map(|_| rng.sample(StandardNormal)).collect();
    let start = level.clone();
    let mut levels = Vec::with_capacity(config.periods * k);
    let mut theta = Vec::with_capacity(config.periods * k);
    let mut type_counts = vec![0.0; config.periods * k];
    let mut responses = Vec::with_capacity(config.periods * config.respondents);
    let answer_dists: Vec<Vec<WeightedIndex<f64>>> = betas
        .iter()
        .zip(&config.categories)
        .map(|(b, &l)| b.chunks(l).map(|row| WeightedIndex::new(row).map_err(|e| contract(e.to_string()))).collect())
        .collect::<Result<_, _>>()?;
    for t in 0..config.periods {
        for x in level.iter_mut() {
            *x += config.walk_sd * rng.sample::<f64, _>(StandardNormal);
        }
        let shares = softmax(&level);
        let types = WeightedIndex::new(&shares).map_err(|e| contract(e.to_string()))?;
        for i in 0..config.respondents {
            let z = types.sample(&mut rng);
            type_counts[t * k + z] += 1.0;
            let answers = answer_dists.iter().map(|rows| rows[z].sample(&mut rng)).collect();
            responses.push(Response { respondent: (t * config.respondents + i) as u64, period: t, answers });
        }
        levels.extend(level.iter().copied());
        theta.extend(shares);
    }
    let panel = SurveyPanel::new(config.periods, config.categories.clone(), responses)?;

    let anchor = 0;
    let relative = |row: &[f64]| -> Vec<f64> { (0..k).filter(|&i| i != anchor).map(|i| row[i] - row[anchor]).collect() };
    let mut truth = SimTruth::new("dsr", seed);
    truth.settings.extend([
        ("periods".into(), config.periods as f64),
        ("respondents".into(), config.respondents as f64),
        ("k".into(), k as f64),
        ("eta".into(), config.eta),
        ("walk_sd".into(), config.walk_sd),
    ]);
    for (j, l) in config.categories.iter().enumerate() {
        truth.settings.insert(format!("categories_{j}"), *l as f64);
    }
    truth.put("theta", &[config.periods, k], theta);
    truth.put("sigma_sq", &[k], vec![config.walk_sd * config.walk_sd; k]);
    truth.put("theta_tilde0", &[k - 1], relative(&start));
    truth.put("theta_tilde", &[config.periods, k - 1], levels.chunks(k).flat_map(relative).collect());
    truth.put("levels", &[config.periods, k], levels);
    truth.put("type_counts", &[config.periods, k], type_counts);
    for (j, (b, &l)) in betas.into_iter().zip(&config.categories).enumerate() {
        truth.put(&format!("beta_{j}"), &[k, l], b);
    }
    Ok((panel, truth))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SldaSimConfig {
    pub docs: usize,
    pub doc_length: usize,
    pub vocabulary: usize,
    pub k: usize,
    pub outcome_covariates: usize,
    pub eta: f64,
    /// Scale of the logistic-normal noise on the topic logits.
    pub sigma_theta: f64,
    pub sigma_y: f64,
}

impl Default for SldaSimConfig {
    fn default() -> Self {
        Self { docs: 200, doc_length: 50, vocabulary: 100, k: 2, outcome_covariates: 1, eta: 1.0, sigma_theta: 1.0, sigma_y: 0.5 }
    }
}

/// Supervised topic model corpus with D = 200, V = 100, K = 2, η = 1,
/// χ, ζ ~ N(0, 1) and σ_y = 0.5.
pub fn simulate_slda(seed: u64) -> Result<(DocumentTermMatrix, CovariateSet, SimTruth), SimError> {
    simulate_slda_with(&SldaSimConfig::default(), seed)
}

pub fn simulate_slda_with(config: &SldaSimConfig, seed: u64) -> Result<(DocumentTermMatrix, CovariateSet, SimTruth), SimError> {
    let (d, k, mq) = (config.docs, config.k, config.outcome_covariates);
    if k < 2 || d == 0 || config.doc_length == 0 || config.vocabulary < 2 {
        return Err(contract("slda simulation needs K ≥ 2, documents, tokens and V ≥ 2"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = |rng: &mut ChaCha8Rng| -> f64 { rng.sample(StandardNormal) };
    let beta: Vec<f64> = (0..k).flat_map(|_| dirichlet_draw(config.eta, config.vocabulary, &mut rng)).collect();
    let gamma0: Vec<f64> = (0..k - 1).map(|_| normal(&mut rng)).collect();
    let chi: Vec<f64> = (0..k).map(|_| normal(&mut rng)).collect();
    let zeta: Vec<f64> = (0..mq).map(|_| normal(&mut rng)).collect();
    let anchor = k - 1;
    let mut eps = Vec::with_capacity(d * (k - 1));
    let mut theta = Vec::with_capacity(d * k);
    let mut q = Vec::with_capacity(d);
    let mut y = Vec::with_capacity(d);
    for _ in 0..d {
        let e: Vec<f64> = (0..k - 1).map(|_| normal(&mut rng)).collect();
        let mut logits: Vec<f64> = gamma0.iter().zip(&e).map(|(g, e)| g + config.sigma_theta * e).collect();
        logits.insert(anchor, 0.0);
        let shares = softmax(&logits);
        let qd: Vec<f64> = (0..mq).map(|_| normal(&mut rng)).collect();
        let mean = shares.iter().zip(&chi).map(|(a, b)| a * b).sum::<f64>() + qd.iter().zip(&zeta).map(|(a, b)| a * b).sum::<f64>();
        y.push(mean + config.sigma_y * normal(&mut rng));
        eps.extend(e);
        theta.extend(shares);
        q.push(qd);
    }
    let (dtm, kept) = draw_corpus(&theta, &beta, k, &vec![config.doc_length; d], &mut rng)?;
    let covariates = CovariateSet {
        g_names: Vec::new(),
        g: vec![Vec::new(); d],
        q_names: (0..mq).map(|i| format!("q{}", i + 1)).collect(),
        q,
        y: Some(y),
    };

    let mut truth = SimTruth::new("slda", seed);
    truth.settings.extend([
        ("docs".into(), d as f64),
        ("doc_length".into(), config.doc_length as f64),
        ("vocabulary".into(), config.vocabulary as f64),
        ("k".into(), k as f64),
        ("outcome_covariates".into(), mq as f64),
        ("eta".into(), config.eta),
        ("sigma_theta".into(), config.sigma_theta),
        ("sigma_y".into(), config.sigma_y),
    ]);
    truth.put("gamma0", &[k - 1], gamma0);
    truth.put("eps", &[d, k - 1], eps);
    truth.put("chi", &[k], chi);
    if mq > 0 {
        truth.put("zeta", &[mq], zeta);
    }
    truth.put("sigma_y", &[], vec![config.sigma_y]);
    truth.put("theta", &[d, k], theta);
    truth.put("beta", &[k, kept.len()], restrict_rows(&beta, k, &kept));
    truth.term_ids = kept;
    Ok((dtm, covariates, truth))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LdaSimConfig {
    pub docs: usize,
    pub doc_length: usize,
    pub vocabulary: usize,
    pub k: usize,
    pub alpha: f64,
    pub eta: f64,
}

impl Default for LdaSimConfig {
    fn default() -> Self {
        Self { docs: 60, doc_length: 80, vocabulary: 150, k: 5, alpha: 0.5, eta: 0.1 }
    }
}

/// Plain LDA corpus from the Dirichlet generative process.
pub fn simulate_lda(seed: u64) -> Result<(DocumentTermMatrix, SimTruth), SimError> {
    simulate_lda_with(&LdaSimConfig::default(), seed)
}

pub fn simulate_lda_with(config: &LdaSimConfig, seed: u64) -> Result<(DocumentTermMatrix, SimTruth), SimError> {
    let (d, k) = (config.docs, config.k);
    if k < 2 || d == 0 || config.doc_length == 0 || config.vocabulary < 2 || !(config.alpha > 0.0 && config.eta > 0.0) {
        return Err(contract("lda simulation needs K ≥ 2, documents, tokens, V ≥ 2 and positive concentrations"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let beta: Vec<f64> = (0..k).flat_map(|_| dirichlet_draw(config.eta, config.vocabulary, &mut rng)).collect();
    let theta: Vec<f64> = (0..d).flat_map(|_| dirichlet_draw(config.alpha, k, &mut rng)).collect();
    let (dtm, kept) = draw_corpus(&theta, &beta, k, &vec![config.doc_length; d], &mut rng)?;
    let mut truth = SimTruth::new("lda", seed);
    truth.settings.extend([
        ("docs".into(), d as f64),
        ("doc_length".into(), config.doc_length as f64),
        ("vocabulary".into(), config.vocabulary as f64),
        ("k".into(), k as f64),
        ("alpha".into(), config.alpha),
        ("eta".into(), config.eta),
    ]);
    truth.put("theta", &[d, k], theta);
    truth.put("beta", &[k, kept.len()], restrict_rows(&beta, k, &kept));
    truth.term_ids = kept;
    Ok((dtm, truth))
}

/// Rebuilds the dataset recorded in `truth` from its generator, settings and seed.
pub fn regenerate(truth: &SimTruth) -> Result<(Dataset, SimTruth), SimError> {
    let s = |key: &str| truth.settings.get(key).copied().ok_or_else(|| contract(format!("truth lacks setting '{key}'")));
    let n = |key: &str| s(key).map(|v| v as usize);
    match truth.generator.as_str() {
        "stm" => {
            let config = StmSimConfig {
                docs: n("docs")?,
                doc_length: n("doc_length")?,
                vocabulary: n("vocabulary")?,
                gamma0: s("gamma0")?,
                gamma1: s("gamma1")?,
                eta: s("eta")?,
                calibration: if s("plug_in")? > 0.0 { Calibration::PlugIn } else { Calibration::Expectation },
            };
            let (dtm, covariates, t) = simulate_stm_with(&config, truth.seed)?;
            Ok((Dataset::Corpus { dtm, covariates }, t))
        }
        "dsr" => {
            let k = n("k")?;
            let categories = (0..).map_while(|j| truth.settings.get(&format!("categories_{j}")).map(|&l| l as usize)).collect();
            let config = DsrSimConfig {
                periods: n("periods")?,
                respondents: n("respondents")?,
                categories,
                k,
                eta: s("eta")?,
                walk_sd: s("walk_sd")?,
            };
            let (panel, mut t) = simulate_dsr_with(&config, truth.seed)?;
            if let Some(&scale) = truth.settings.get("scale") {
                t.settings.insert("scale".into(), scale);
            }
            Ok((Dataset::Survey(panel), t))
        }
        "slda" => {
            let config = SldaSimConfig {
                docs: n("docs")?,
                doc_length: n("doc_length")?,
                vocabulary: n("vocabulary")?,
                k: n("k")?,
                outcome_covariates: n("outcome_covariates")?,
                eta: s("eta")?,
                sigma_theta: s("sigma_theta")?,
                sigma_y: s("sigma_y")?,
            };
            let (dtm, covariates, t) = simulate_slda_with(&config, truth.seed)?;
            Ok((Dataset::Corpus { dtm, covariates }, t))
        }
        "lda" => {
            let config = LdaSimConfig {
                docs: n("docs")?,
                doc_length: n("doc_length")?,
                vocabulary: n("vocabulary")?,
                k: n("k")?,
                alpha: s("alpha")?,
                eta: s("eta")?,
            };
            let (dtm, t) = simulate_lda_with(&config, truth.seed)?;
            let covariates = CovariateSet::empty(dtm.docs());
            Ok((Dataset::Corpus { dtm, covariates }, t))
        }
        other => Err(contract(format!("unknown generator '{other}'"))),
    }
}
