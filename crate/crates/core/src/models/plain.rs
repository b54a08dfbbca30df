//! Tape-free evaluation from constrained values: derived shares and the
//! observation likelihood.

use super::{contract, CorpusData, Data, DocumentTermMatrix, Family, ModelError, ModelSpec, NamedParams, SurveyPanel};
use crate::distributions::normal_log_prob;
use crate::special::ln_gamma;

pub(crate) fn has_derived_theta(family: Family) -> bool {
    family != Family::Lda
}

fn softmax_with_anchor(logits: &[f64], anchor: usize) -> Vec<f64> {
    let mut full = logits.to_vec();
    full.insert(anchor, 0.0);
    let m = full.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = full.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// θ rows implied by the sampled logit parameters.
pub(crate) fn derived_theta(spec: &ModelSpec, data: &Data, named: &NamedParams) -> Option<Vec<f64>> {
    let km1 = spec.k - 1;
    let rows: Vec<Vec<f64>> = match (spec.family, data) {
        (Family::Stm | Family::Sslda | Family::Slda, Data::Corpus(c)) => {
            let eps = &named["eps"];
            let design = c.covariates.topic_design();
            design
                .iter()
                .enumerate()
                .map(|(d, g)| {
                    (0..km1)
                        .map(|j| {
                            let mean = if spec.family == Family::Slda {
                                named["gamma0"][j]
                            } else {
                                g.iter().enumerate().map(|(p, gp)| gp * named["gamma"][p * km1 + j]).sum()
                            };
                            mean + spec.sigma * eps[d * km1 + j]
                        })
                        .collect()
                })
                .collect()
        }
        (Family::Dsr, Data::Survey(s)) => dsr_levels(spec, s.panel.periods(), named),
        _ => return None,
    };
    Some(rows.iter().flat_map(|r| softmax_with_anchor(r, spec.anchor)).collect())
}

/// Random-walk levels θ̃_t (free logits only) for t = 0..T.
pub(crate) fn dsr_levels(spec: &ModelSpec, periods: usize, named: &NamedParams) -> Vec<Vec<f64>> {
    let km1 = spec.k - 1;
    if !spec.noncentered_walk {
        return named["theta_tilde"].chunks(km1).map(<[f64]>::to_vec).collect();
    }
    let s2 = &named["sigma_sq"];
    let sd: Vec<f64> = (0..spec.k).filter(|&i| i != spec.anchor).map(|i| (s2[i] + s2[spec.anchor]).sqrt()).collect();
    let mut level = named["theta_tilde0"].clone();
    let z = &named["theta_tilde_z"];
    (0..periods)
        .map(|t| {
            for j in 0..km1 {
                level[j] += sd[j] * z[t * km1 + j];
            }
            level.clone()
        })
        .collect()
}

pub(crate) fn likelihood(spec: &ModelSpec, data: &Data, named: &NamedParams) -> Result<f64, ModelError> {
    let theta = named.get("theta").ok_or_else(|| contract("missing theta"))?;
    match data {
        Data::Corpus(c) => {
            let beta = named.get("beta").ok_or_else(|| contract("missing beta"))?;
            let mut ll = corpus_log_likelihood(&c.dtm, theta, beta, spec.k)?;
            if matches!(spec.family, Family::Slda | Family::Sslda) {
                ll += regression(spec, c, named, theta)?;
            }
            Ok(ll)
        }
        Data::Survey(s) => {
            let betas: Vec<&[f64]> = (0..s.panel.questions())
                .map(|j| named.get(&format!("beta_{j}")).map(Vec::as_slice).ok_or_else(|| contract(format!("missing beta_{j}"))))
                .collect::<Result<_, _>>()?;
            survey_log_likelihood(&s.panel, theta, &betas, spec.k)
        }
    }
}

fn regression(spec: &ModelSpec, c: &CorpusData, named: &NamedParams, theta: &[f64]) -> Result<f64, ModelError> {
    let y = c.covariates.y.as_ref().ok_or_else(|| contract("missing outcomes"))?;
    let sigma_y = named.get("sigma_y").ok_or_else(|| contract("missing sigma_y"))?[0];
    let mut ll = 0.0;
    for (yd, mean) in y.iter().zip(outcome_means(spec, c, named, theta)?) {
        ll += normal_log_prob(*yd, mean, sigma_y).map_err(|e| contract(e.to_string()))?;
    }
    Ok(ll)
}

/// Regression means θ_d·χ + q_d·ζ.
pub(crate) fn outcome_means(spec: &ModelSpec, c: &CorpusData, named: &NamedParams, theta: &[f64]) -> Result<Vec<f64>, ModelError> {
    let chi = named.get("chi").ok_or_else(|| contract("missing chi"))?;
    let zeta = named.get("zeta").cloned().unwrap_or_default();
    if theta.len() != c.dtm.docs() * spec.k || chi.len() != spec.k {
        return Err(contract("θ or χ does not match the corpus"));
    }
    Ok(theta
        .chunks(spec.k)
        .zip(&c.covariates.q)
        .map(|(t, q)| t.iter().zip(chi).map(|(a, b)| a * b).sum::<f64>() + q.iter().zip(&zeta).map(|(a, b)| a * b).sum::<f64>())
        .collect())
}

/// Σ_d log Multinomial(x_d | N_d, θ_d β), with θ `[D, K]` and β `[K, V]` row-major.
pub fn corpus_log_likelihood(dtm: &DocumentTermMatrix, theta: &[f64], beta: &[f64], k: usize) -> Result<f64, ModelError> {
    let (d, v) = (dtm.docs(), dtm.terms());
    if theta.len() != d * k || beta.len() != k * v {
        return Err(contract(format!("θ has {} and β {} values for D={d}, K={k}, V={v}", theta.len(), beta.len())));
    }
    let mut ll: f64 = dtm.totals().iter().map(|&n| ln_gamma(n as f64 + 1.0)).sum();
    for &(doc, term, count) in dtm.entries() {
        let p: f64 = (0..k).map(|j| theta[doc * k + j] * beta[j * v + term]).sum();
        ll += count as f64 * p.ln() - ln_gamma(count as f64 + 1.0);
    }
    Ok(ll)
}

/// Σ_respondents log Σ_k θ_{t,k} Π_j β^j_{k, x_j}, with θ `[T, K]` and each
/// β^j `[K, L_j]` row-major.
pub fn survey_log_likelihood(panel: &SurveyPanel, theta: &[f64], betas: &[&[f64]], k: usize) -> Result<f64, ModelError> {
    if theta.len() != panel.periods() * k || betas.len() != panel.questions() {
        return Err(contract("θ or β blocks do not match the panel"));
    }
    for (j, (b, &l)) in betas.iter().zip(panel.categories()).enumerate() {
        if b.len() != k * l {
            return Err(contract(format!("beta_{j} has {} values, expected {}", b.len(), k * l)));
        }
    }
    let mut ll = 0.0;
    for r in panel.responses() {
        let p: f64 = (0..k)
            .map(|c| {
                let answers: f64 =
                    r.answers.iter().enumerate().map(|(j, &x)| betas[j][c * panel.categories()[j] + x]).product();
                theta[r.period * k + c] * answers
            })
            .sum();
        ll += p.ln();
    }
    Ok(ll)
}
