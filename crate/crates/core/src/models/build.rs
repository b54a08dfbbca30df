use std::sync::Arc;

use super::layout::{LayoutEntry, ParameterLayout, Transform};
use super::{CorpusData, Data, Family, ModelError, ModelSpec, SurveyData};
use crate::autodiff::{Tensor, Var};
use crate::distributions::ad;

pub(crate) struct Parts<'t> {
    pub prior: Var<'t>,
    pub likelihood: Var<'t>,
    pub jacobian: Var<'t>,
}

pub(crate) fn layout(spec: &ModelSpec, data: &Data) -> ParameterLayout {
    let k = spec.k;
    let mut l = ParameterLayout::new();
    match data {
        Data::Corpus(c) => {
            let (d, v) = (c.dtm.docs(), c.dtm.terms());
            let p = c.design.shape()[1];
            match spec.family {
                Family::Lda => {
                    l.push("theta", &[d, k], Transform::StickBreaking);
                }
                Family::Stm | Family::Sslda => {
                    l.push("gamma", &[p, k - 1], Transform::Identity);
                    l.push("eps", &[d, k - 1], Transform::Identity);
                }
                Family::Slda => {
                    l.push("gamma0", &[k - 1], Transform::Identity);
                    l.push("eps", &[d, k - 1], Transform::Identity);
                }
                Family::Dsr => unreachable!("dsr uses a survey"),
            }
            l.push("beta", &[k, v], Transform::StickBreaking);
            if matches!(spec.family, Family::Slda | Family::Sslda) {
                l.push("chi", &[k], Transform::Identity);
                let mq = c.outcome_design.shape()[1];
                if mq > 0 {
                    l.push("zeta", &[mq], Transform::Identity);
                }
                l.push("sigma_y", &[], Transform::LogPositive);
            }
        }
        Data::Survey(s) => {
            let t = s.panel.periods();
            l.push("sigma_sq", &[k], Transform::LogPositive);
            l.push("theta_tilde0", &[k - 1], Transform::Identity);
            let walk = if spec.noncentered_walk { "theta_tilde_z" } else { "theta_tilde" };
            l.push(walk, &[t, k - 1], Transform::Identity);
            for (j, &lj) in s.panel.categories().iter().enumerate() {
                l.push(&format!("beta_{j}"), &[k, lj], Transform::StickBreaking);
            }
        }
    }
    l
}

fn block<'t>(x: Var<'t>, layout: &ParameterLayout, name: &str) -> Result<Var<'t>, ModelError> {
    let e: &LayoutEntry = layout.entry(name).ok_or_else(|| super::contract(format!("layout has no '{name}'")))?;
    Ok(x.segment(e.offset, &e.unconstrained_shape())?)
}

/// Log-simplex rows from a stick-breaking block, with its Dirichlet prior and Jacobian.
fn simplex_block<'t>(
    x: Var<'t>,
    layout: &ParameterLayout,
    name: &str,
    concentration: f64,
) -> Result<(Var<'t>, Var<'t>, Var<'t>), ModelError> {
    let u = block(x, layout, name)?;
    let (log_x, jac) = ad::stick_breaking(u)?;
    let k = *log_x.shape().last().expect("matrix");
    let prior = ad::dirichlet_log_simplex(log_x, &vec![concentration; k])?;
    Ok((log_x, prior, jac))
}

pub(crate) fn log_joint<'t>(
    spec: &ModelSpec,
    layout: &ParameterLayout,
    data: &Data,
    x: Var<'t>,
) -> Result<Parts<'t>, ModelError> {
    match data {
        Data::Corpus(c) => corpus(spec, layout, c, x),
        Data::Survey(s) => survey(spec, layout, s, x),
    }
}

/// Σ_d Σ_v x_dv log Σ_k θ_dk β_kv plus the multinomial coefficients.
fn mixture_likelihood<'t>(c: &CorpusData, log_theta: Var<'t>, log_beta: Var<'t>) -> Result<Var<'t>, ModelError> {
    let tape = log_theta.tape();
    let tables = [(log_theta, c.doc_index.clone(), 1), (log_beta.transpose()?, c.term_index.clone(), 1)];
    Ok(tape.log_mixture(&tables, c.counts.data())?.shift(c.log_coef))
}

fn corpus<'t>(spec: &ModelSpec, layout: &ParameterLayout, c: &CorpusData, x: Var<'t>) -> Result<Parts<'t>, ModelError> {
    let tape = x.tape();
    let (log_beta, beta_prior, beta_jac) = simplex_block(x, layout, "beta", spec.eta)?;

    let (log_theta, theta_prior, theta_jac) = match spec.family {
        Family::Lda => simplex_block(x, layout, "theta", spec.alpha)?,
        Family::Stm | Family::Slda | Family::Sslda => {
            let eps = block(x, layout, "eps")?;
            let noise = eps.scale(spec.sigma);
            let (logits, gamma_prior) = if spec.family == Family::Slda {
                let g0 = block(x, layout, "gamma0")?;
                (noise.add(g0)?, ad::normal(g0, 0.0, spec.sigma_gamma))
            } else {
                let gamma = block(x, layout, "gamma")?;
                let design = tape.constant(c.design.clone());
                (design.matmul(gamma)?.add(noise)?, ad::normal(gamma, 0.0, spec.sigma_gamma))
            };
            let log_theta = ad::anchored_log_softmax(logits, spec.anchor)?;
            let prior = gamma_prior.add(ad::normal(eps, 0.0, 1.0))?;
            (log_theta, prior, tape.scalar(0.0))
        }
        Family::Dsr => unreachable!("dsr uses a survey"),
    };

    let mut prior = theta_prior.add(beta_prior)?;
    let jacobian = theta_jac.add(beta_jac)?;
    let mut likelihood = mixture_likelihood(c, log_theta, log_beta)?;

    if matches!(spec.family, Family::Slda | Family::Sslda) {
        let d = c.dtm.docs();
        let k = spec.k;
        let chi = block(x, layout, "chi")?;
        let log_sy = block(x, layout, "sigma_y")?.reshape(&[1])?;
        prior = prior.add(ad::normal(chi, 0.0, spec.sigma_chi))?;
        let mut mean = log_theta.exp().matmul(chi.reshape(&[k, 1])?)?;
        if layout.entry("zeta").is_some() {
            let zeta = block(x, layout, "zeta")?;
            prior = prior.add(ad::normal(zeta, 0.0, spec.sigma_zeta))?;
            let q = tape.constant(c.outcome_design.clone());
            mean = mean.add(q.matmul(zeta.reshape(&[zeta.shape()[0], 1])?)?)?;
        }
        prior = prior.add(ad::gamma_from_log(log_sy, spec.sigma_y_shape, spec.sigma_y_rate))?;
        let y = tape.constant(c.y.clone());
        let regression = ad::normal_var(y, mean.reshape(&[d])?, log_sy.exp())?;
        likelihood = likelihood.add(regression)?;
        return Ok(Parts { prior, likelihood, jacobian: jacobian.add(log_sy.sum_all())? });
    }
    Ok(Parts { prior, likelihood, jacobian })
}

fn survey<'t>(spec: &ModelSpec, layout: &ParameterLayout, s: &SurveyData, x: Var<'t>) -> Result<Parts<'t>, ModelError> {
    let tape = x.tape();
    let k = spec.k;
    let t = s.panel.periods();

    let log_s2 = block(x, layout, "sigma_sq")?;
    let mut prior = ad::inverse_gamma_from_log(log_s2, spec.ig_shape, spec.ig_scale);
    let mut jacobian = log_s2.sum_all();

    // sd of each free logit's increment: sqrt(σ²_k + σ²_anchor)
    let free: Arc<[usize]> = (0..k).filter(|&i| i != spec.anchor).collect();
    let s2 = log_s2.exp();
    let pinned: Arc<[usize]> = vec![spec.anchor; k - 1].into();
    let sd = s2.gather(0, free)?.add(s2.gather(0, pinned)?)?.ln().scale(0.5).exp();

    let start = block(x, layout, "theta_tilde0")?;
    let zeros = tape.constant(Tensor::zeros(&[k - 1]));
    prior = prior.add(ad::normal_var(start, zeros, sd.scale(spec.init_scale))?)?;

    let levels = if spec.noncentered_walk {
        let z = block(x, layout, "theta_tilde_z")?;
        prior = prior.add(ad::normal(z, 0.0, 1.0))?;
        z.mul(sd)?.cumsum(0, false)?.add(start)?
    } else {
        let levels = block(x, layout, "theta_tilde")?;
        let prev = if t > 1 {
            tape.concat(&[start.reshape(&[1, k - 1])?, levels.segment(0, &[t - 1, k - 1])?], 0)?
        } else {
            start.reshape(&[1, k - 1])?
        };
        prior = prior.add(ad::normal_var(levels, prev, sd)?)?;
        levels
    };
    let log_theta = ad::anchored_log_softmax(levels, spec.anchor)?;

    let mut tables = Vec::with_capacity(s.panel.questions());
    for j in 0..s.panel.questions() {
        let (log_beta, p, jac) = simplex_block(x, layout, &format!("beta_{j}"), spec.eta)?;
        prior = prior.add(p)?;
        jacobian = jacobian.add(jac)?;
        tables.push(log_beta.transpose()?);
    }
    let table = tape.concat(&tables, 0)?;
    let likelihood = tape.log_mixture(
        &[(log_theta, s.period_index.clone(), 1), (table, s.answer_index.clone(), s.panel.questions())],
        s.weights.data(),
    )?;
    Ok(Parts { prior, likelihood, jacobian })
}
