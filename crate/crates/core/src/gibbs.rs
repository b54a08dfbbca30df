//! Collapsed Gibbs sampling for plain LDA.

use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::models::DocumentTermMatrix;
use crate::samplers::chain_rng;
use crate::samples::{ParamInfo, SampleSet};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GibbsError {
    #[error("{0}")]
    Contract(String),
}

fn contract(message: impl Into<String>) -> GibbsError {
    GibbsError::Contract(message.into())
}

/// Sufficient statistics of a topic assignment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountTables {
    pub k: usize,
    pub v: usize,
    /// `[D, K]`
    pub n_dk: Vec<u64>,
    /// `[K, V]`
    pub n_kv: Vec<u64>,
    pub n_k: Vec<u64>,
}

impl CountTables {
    fn zeros(d: usize, k: usize, v: usize) -> Self {
        Self { k, v, n_dk: vec![0; d * k], n_kv: vec![0; k * v], n_k: vec![0; k] }
    }

    fn add(&mut self, d: usize, term: usize, topic: usize) {
        self.n_dk[d * self.k + topic] += 1;
        self.n_kv[topic * self.v + term] += 1;
        self.n_k[topic] += 1;
    }

    fn remove(&mut self, d: usize, term: usize, topic: usize) {
        self.n_dk[d * self.k + topic] -= 1;
        self.n_kv[topic * self.v + term] -= 1;
        self.n_k[topic] -= 1;
    }
}

/// Token lists, their topic assignments and the matching count tables.
#[derive(Debug, Clone, PartialEq)]
pub struct GibbsState {
    /// Term id of each token, per document.
    tokens: Vec<Vec<usize>>,
    /// Topic of each token, per document.
    z: Vec<Vec<usize>>,
    counts: CountTables,
}

impl GibbsState {
    /// Expands the corpus into tokens with uniformly random topics.
    pub fn random<R: Rng>(dtm: &DocumentTermMatrix, k: usize, rng: &mut R) -> Result<Self, GibbsError> {
        let tokens = expand(dtm);
        let z = tokens.iter().map(|doc| doc.iter().map(|_| rng.gen_range(0..k)).collect()).collect();
        Self::with_assignments(dtm, k, z)
    }

    /// Builds a state from explicit assignments, one per expanded token.
    pub fn with_assignments(dtm: &DocumentTermMatrix, k: usize, z: Vec<Vec<usize>>) -> Result<Self, GibbsError> {
        if k == 0 {
            return Err(contract("K must be at least 1"));
        }
        let tokens = expand(dtm);
        if tokens.len() != z.len() || tokens.iter().zip(&z).any(|(t, a)| t.len() != a.len()) {
            return Err(contract("assignments do not match the token lists"));
        }
        if z.iter().flatten().any(|&t| t >= k) {
            return Err(contract(format!("topic outside 0..{k}")));
        }
        let counts = tally(&tokens, &z, k, dtm.terms());
        Ok(Self { tokens, z, counts })
    }

    pub fn assignments(&self) -> &[Vec<usize>] {
        &self.z
    }

    pub fn tokens(&self) -> &[Vec<usize>] {
        &self.tokens
    }

    pub fn counts(&self) -> &CountTables {
        &self.counts
    }

    /// Tables recomputed from scratch.
    pub fn recount(&self) -> CountTables {
        tally(&self.tokens, &self.z, self.counts.k, self.counts.v)
    }

    /// Collapsed conditional of token `n` in document `d`, normalized.
    pub fn conditional(&self, d: usize, n: usize, alpha: f64, eta: f64) -> Vec<f64> {
        let mut counts = self.counts.clone();
        counts.remove(d, self.tokens[d][n], self.z[d][n]);
        let mut w = vec![0.0; counts.k];
        weights(&counts, d, self.tokens[d][n], alpha, eta, &mut w);
        let s: f64 = w.iter().sum();
        w.iter().map(|x| x / s).collect()
    }

    /// θ̂ `[D, K]`: (n_dk + α) / (N_d + Kα).
    pub fn theta_hat(&self, alpha: f64) -> Vec<f64> {
        let k = self.counts.k;
        let mut out = Vec::with_capacity(self.tokens.len() * k);
        for (d, doc) in self.tokens.iter().enumerate() {
            let denom = doc.len() as f64 + k as f64 * alpha;
            out.extend((0..k).map(|t| (self.counts.n_dk[d * k + t] as f64 + alpha) / denom));
        }
        out
    }

    /// β̂ `[K, V]`: (n_kv + η) / (n_k + Vη).
    pub fn beta_hat(&self, eta: f64) -> Vec<f64> {
        let CountTables { k, v, .. } = self.counts;
        let mut out = Vec::with_capacity(k * v);
        for t in 0..k {
            let denom = self.counts.n_k[t] as f64 + v as f64 * eta;
            out.extend((0..v).map(|w| (self.counts.n_kv[t * v + w] as f64 + eta) / denom));
        }
        out
    }
}

fn expand(dtm: &DocumentTermMatrix) -> Vec<Vec<usize>> {
    let mut tokens = vec![Vec::new(); dtm.docs()];
    for &(d, term, count) in dtm.entries() {
        tokens[d].extend(std::iter::repeat(term).take(count as usize));
    }
    tokens
}

fn tally(tokens: &[Vec<usize>], z: &[Vec<usize>], k: usize, v: usize) -> CountTables {
    let mut counts = CountTables::zeros(tokens.len(), k, v);
    for (d, (doc, topics)) in tokens.iter().zip(z).enumerate() {
        for (&term, &topic) in doc.iter().zip(topics) {
            counts.add(d, term, topic);
        }
    }
    counts
}

fn weights(counts: &CountTables, d: usize, term: usize, alpha: f64, eta: f64, out: &mut [f64]) {
    let (k, v) = (counts.k, counts.v);
    let v_eta = v as f64 * eta;
    for (t, w) in out.iter_mut().enumerate() {
        *w = (counts.n_dk[d * k + t] as f64 + alpha) * (counts.n_kv[t * v + term] as f64 + eta)
            / (counts.n_k[t] as f64 + v_eta);
    }
}

/// Resamples every token once, documents and tokens in index order.
pub fn gibbs_sweep<R: Rng>(state: &mut GibbsState, alpha: f64, eta: f64, rng: &mut R) {
    let k = state.counts.k;
    let mut w = vec![0.0; k];
    for d in 0..state.tokens.len() {
        for n in 0..state.tokens[d].len() {
            let term = state.tokens[d][n];
            let old = state.z[d][n];
            state.counts.remove(d, term, old);
            weights(&state.counts, d, term, alpha, eta, &mut w);
            let total: f64 = w.iter().sum();
            let mut u = rng.gen::<f64>() * total;
            let mut new = k - 1;
            for (t, &wt) in w.iter().enumerate() {
                if u < wt {
                    new = t;
                    break;
                }
                u -= wt;
            }
            state.z[d][n] = new;
            state.counts.add(d, term, new);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GibbsConfig {
    pub k: usize,
    pub alpha: f64,
    pub eta: f64,
    pub draws: usize,
    pub thin: usize,
    /// Sweeps discarded first; `None` means draws · thin.
    pub burn: Option<usize>,
    pub seed: u64,
    pub chains: usize,
    /// Worker threads; 0 uses the global pool.
    pub jobs: usize,
}

impl GibbsConfig {
    pub fn new(k: usize, alpha: f64, eta: f64) -> Self {
        Self { k, alpha, eta, draws: 200, thin: 10, burn: None, seed: 0, chains: 1, jobs: 0 }
    }

    pub fn burn_in(&self) -> usize {
        self.burn.unwrap_or(self.draws * self.thin)
    }
}

/// Runs collapsed Gibbs chains and records smoothed `theta` `[D, K]` and
/// `beta` `[K, V]` every `thin` sweeps after burn-in.
pub fn run_gibbs(dtm: &DocumentTermMatrix, config: &GibbsConfig) -> Result<SampleSet, GibbsError> {
    if dtm.entries().is_empty() {
        return Err(contract("corpus has no tokens"));
    }
    if config.draws == 0 || config.thin == 0 || config.chains == 0 {
        return Err(contract("draws, thin and chains must be at least 1"));
    }
    if config.k == 0 {
        return Err(contract("K must be at least 1"));
    }
    if !(config.alpha > 0.0 && config.eta > 0.0) {
        return Err(contract("α and η must be positive"));
    }
    let start = Instant::now();
    let run_chain = |c: usize| -> Result<Vec<f64>, GibbsError> {
        let mut rng = chain_rng(config.seed, c);
        let mut state = GibbsState::random(dtm, config.k, &mut rng)?;
        for _ in 0..config.burn_in() {
            gibbs_sweep(&mut state, config.alpha, config.eta, &mut rng);
        }
        let mut values = Vec::with_capacity(config.draws * (dtm.docs() + dtm.terms()) * config.k);
        for _ in 0..config.draws {
            for _ in 0..config.thin {
                gibbs_sweep(&mut state, config.alpha, config.eta, &mut rng);
            }
            values.extend(state.theta_hat(config.alpha));
            values.extend(state.beta_hat(config.eta));
        }
        Ok(values)
    };
    let run = || (0..config.chains).into_par_iter().map(run_chain).collect::<Result<Vec<_>, _>>();
    let chains = if config.jobs > 0 {
        rayon::ThreadPoolBuilder::new().num_threads(config.jobs).build().map_err(|e| contract(e.to_string()))?.install(run)?
    } else {
        run()?
    };
    let params = vec![
        ParamInfo::new("theta", &[dtm.docs(), config.k]),
        ParamInfo::new("beta", &[config.k, dtm.terms()]),
    ];
    let mut set = SampleSet::from_chains(params, config.draws, chains);
    set.metadata.insert("sampler".into(), "gibbs".into());
    set.metadata.insert("seed".into(), config.seed.to_string());
    set.metadata.insert("wall_time_s".into(), format!("{:.3}", start.elapsed().as_secs_f64()));
    Ok(set)
}

#[cfg(test)]
mod tests {
    use std::collections::HashMap;

    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::special::ln_gamma;

    /// Collapsed log joint p(z, w | α, η) up to a constant.
    fn collapsed_log_joint(state: &GibbsState, alpha: f64, eta: f64) -> f64 {
        let c = state.counts();
        let (k, v) = (c.k, c.v);
        let mut lp = 0.0;
        for (d, doc) in state.tokens().iter().enumerate() {
            lp += ln_gamma(k as f64 * alpha) - ln_gamma(doc.len() as f64 + k as f64 * alpha);
            lp += (0..k).map(|t| ln_gamma(c.n_dk[d * k + t] as f64 + alpha) - ln_gamma(alpha)).sum::<f64>();
        }
        for t in 0..k {
            lp += ln_gamma(v as f64 * eta) - ln_gamma(c.n_k[t] as f64 + v as f64 * eta);
            lp += (0..v).map(|w| ln_gamma(c.n_kv[t * v + w] as f64 + eta) - ln_gamma(eta)).sum::<f64>();
        }
        lp
    }

    /// Every assignment of `n` tokens to `k` topics, in lexicographic order.
    fn configurations(n: usize, k: usize) -> Vec<Vec<usize>> {
        (0..k.pow(n as u32))
            .map(|mut i| {
                (0..n)
                    .map(|_| {
                        let t = i % k;
                        i /= k;
                        t
                    })
                    .collect()
            })
            .collect()
    }

    fn split(flat: &[usize], tokens: &[Vec<usize>]) -> Vec<Vec<usize>> {
        let mut it = flat.iter().copied();
        tokens.iter().map(|doc| doc.iter().map(|_| it.next().unwrap()).collect()).collect()
    }

    #[test]
    fn single_topic_is_degenerate() {
        let dtm = DocumentTermMatrix::from_dense(&[vec![2, 1], vec![0, 3]]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut state = GibbsState::random(&dtm, 1, &mut rng).unwrap();
        let before = state.assignments().to_vec();
        gibbs_sweep(&mut state, 0.5, 0.5, &mut rng);
        assert_eq!(state.assignments(), before.as_slice());
    }

    #[test]
    fn two_token_conditional_matches_enumeration() {
        let dtm = DocumentTermMatrix::from_dense(&[vec![2, 0, 0]]).unwrap();
        let a = 0.7;
        for first in 0..2 {
            let state = GibbsState::with_assignments(&dtm, 2, vec![vec![first, 0]]).unwrap();
            let cond = state.conditional(0, 1, a, a);
            let joint: Vec<f64> = (0..2)
                .map(|t| {
                    let s = GibbsState::with_assignments(&dtm, 2, vec![vec![first, t]]).unwrap();
                    collapsed_log_joint(&s, a, a).exp()
                })
                .collect();
            let total: f64 = joint.iter().sum();
            for t in 0..2 {
                assert!((cond[t] - joint[t] / total).abs() < 1e-12);
            }
            assert!(cond[first] > 0.5);
        }
    }

    #[test]
    fn tables_stay_consistent() {
        let dtm = DocumentTermMatrix::from_dense(&[vec![3, 0, 2, 1], vec![0, 4, 1, 0], vec![1, 1, 1, 1]]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut state = GibbsState::random(&dtm, 3, &mut rng).unwrap();
        for _ in 0..50 {
            gibbs_sweep(&mut state, 0.3, 0.2, &mut rng);
            assert_eq!(state.recount(), *state.counts());
            let c = state.counts();
            for (d, doc) in state.tokens().iter().enumerate() {
                assert_eq!(c.n_dk[d * 3..d * 3 + 3].iter().sum::<u64>(), doc.len() as u64);
            }
            for t in 0..3 {
                assert_eq!(c.n_kv[t * 4..t * 4 + 4].iter().sum::<u64>(), c.n_k[t]);
            }
        }
        assert_eq!(state.assignments().iter().map(Vec::len).sum::<usize>(), 15);
    }

    #[test]
    fn empty_document_gets_uniform_shares_and_rows_are_simplexes() {
        let dtm = DocumentTermMatrix::from_dense(&[vec![2, 1, 0], vec![0, 0, 0], vec![0, 1, 3]]).unwrap();
        let config = GibbsConfig { draws: 20, thin: 2, seed: 3, ..GibbsConfig::new(4, 0.5, 0.1) };
        let set = run_gibbs(&dtm, &config).unwrap();
        for draw in 0..20 {
            let row = set.draw(0, draw);
            assert!(row[4..8].iter().all(|&p| (p - 0.25).abs() < 1e-15));
            for chunk in row[..12].chunks(4).chain(row[12..].chunks(3)) {
                assert!((chunk.iter().sum::<f64>() - 1.0).abs() < 1e-12 && chunk.iter().all(|&p| p > 0.0));
            }
        }
    }

    #[test]
    fn single_term_corpus_is_symmetric() {
        let dtm = DocumentTermMatrix::from_dense(&[vec![4]]).unwrap();
        let config = GibbsConfig { draws: 500, thin: 1, seed: 4, ..GibbsConfig::new(2, 1.0, 1.0) };
        let set = run_gibbs(&dtm, &config).unwrap();
        let mean = set.param_mean("theta").unwrap()[0];
        assert!((mean - 0.5).abs() < 0.05, "{mean}");
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let dtm = DocumentTermMatrix::from_dense(&[vec![2, 1, 0], vec![0, 2, 3]]).unwrap();
        let config = GibbsConfig { draws: 30, thin: 3, seed: 9, chains: 2, ..GibbsConfig::new(2, 0.5, 0.5) };
        let a = run_gibbs(&dtm, &config).unwrap();
        let b = run_gibbs(&dtm, &config).unwrap();
        assert_eq!((0..a.width()).map(|c| a.pooled(c)).collect::<Vec<_>>(), (0..b.width()).map(|c| b.pooled(c)).collect::<Vec<_>>());
    }

    #[test]
    fn contract_violations() {
        let empty = DocumentTermMatrix::from_dense(&[vec![0, 0]]).unwrap();
        assert!(run_gibbs(&empty, &GibbsConfig::new(2, 1.0, 1.0)).is_err());
        let dtm = DocumentTermMatrix::from_dense(&[vec![1, 1]]).unwrap();
        assert!(run_gibbs(&dtm, &GibbsConfig { thin: 0, ..GibbsConfig::new(2, 1.0, 1.0) }).is_err());
        assert!(GibbsState::with_assignments(&dtm, 2, vec![vec![0, 2]]).is_err());
    }

    #[test]
    fn sweeps_sample_the_collapsed_posterior() {
        let dtm = DocumentTermMatrix::from_dense(&[vec![2, 1, 0], vec![0, 1, 1]]).unwrap();
        let (alpha, eta, k) = (0.8, 0.6, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut state = GibbsState::random(&dtm, k, &mut rng).unwrap();
        let n: usize = state.tokens().iter().map(Vec::len).sum();
        assert!(n <= 6);
        let configs = configurations(n, k);
        let log_p: Vec<f64> = configs
            .iter()
            .map(|flat| collapsed_log_joint(&GibbsState::with_assignments(&dtm, k, split(flat, state.tokens())).unwrap(), alpha, eta))
            .collect();
        let m = log_p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let norm: f64 = log_p.iter().map(|l| (l - m).exp()).sum();
        let exact: HashMap<Vec<usize>, f64> =
            configs.iter().cloned().zip(log_p.iter().map(|l| (l - m).exp() / norm)).collect();

        let sweeps = 50_000;
        let mut seen: HashMap<Vec<usize>, usize> = HashMap::new();
        for _ in 0..sweeps {
            gibbs_sweep(&mut state, alpha, eta, &mut rng);
            *seen.entry(state.assignments().concat()).or_default() += 1;
        }
        let tv: f64 = exact
            .iter()
            .map(|(cfg, p)| (p - *seen.get(cfg).unwrap_or(&0) as f64 / sweeps as f64).abs())
            .sum::<f64>()
            / 2.0;
        assert!(tv < 0.02, "total variation {tv}");
    }
}
