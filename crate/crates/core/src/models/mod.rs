//! The model zoo: unconstrained log-joint densities for LDA, the structural
//! topic model, the dynamic survey-response model and (structural) supervised
//! LDA, with packing between named constrained parameters and Φ.

mod build;
mod data;
mod layout;
mod plain;
mod spec;

pub use data::{CovariateSet, DocumentTermMatrix, Response, SurveyPanel};
pub use layout::{LayoutEntry, NamedParams, ParameterLayout, Transform};
pub use plain::{corpus_log_likelihood, survey_log_likelihood};
pub use spec::{Family, ModelSpec};

use std::sync::Arc;

use thiserror::Error;

use crate::autodiff::{AutodiffError, Tape, Tensor};
use crate::samplers::{EvalError, Target};
use crate::samples::ParamInfo;
use crate::special::ln_gamma;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("{0}")]
    Contract(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

pub(crate) fn contract(message: impl Into<String>) -> ModelError {
    ModelError::Contract(message.into())
}

/// Observed data for any family.
#[derive(Debug, Clone, PartialEq)]
pub enum Dataset {
    Corpus { dtm: DocumentTermMatrix, covariates: CovariateSet },
    Survey(SurveyPanel),
}

/// Corpus nonzeros in the form the tape consumes.
#[derive(Debug, Clone)]
pub(crate) struct CorpusData {
    pub dtm: DocumentTermMatrix,
    pub covariates: CovariateSet,
    pub doc_index: Arc<[usize]>,
    pub term_index: Arc<[usize]>,
    pub counts: Tensor,
    /// Σ_d log multinomial coefficient.
    pub log_coef: f64,
    /// `[D, P]` topic design with intercept.
    pub design: Tensor,
    /// `[D, M_q]` outcome covariates.
    pub outcome_design: Tensor,
    pub y: Tensor,
}

/// Survey responses with identical (period, answers) rows merged.
#[derive(Debug, Clone)]
pub(crate) struct SurveyData {
    pub panel: SurveyPanel,
    pub period_index: Arc<[usize]>,
    /// Stacked answer rows, J per merged response.
    pub answer_index: Arc<[usize]>,
    pub weights: Tensor,
}

#[derive(Debug, Clone)]
pub(crate) enum Data {
    Corpus(CorpusData),
    Survey(SurveyData),
}

/// The three additive pieces of a log-joint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogJoint {
    pub prior: f64,
    pub likelihood: f64,
    pub jacobian: f64,
}

impl LogJoint {
    pub fn total(&self) -> f64 {
        self.prior + self.likelihood + self.jacobian
    }
}

/// A model bound to its data; implements [`Target`] over Φ.
#[derive(Debug, Clone)]
pub struct Model {
    spec: ModelSpec,
    layout: ParameterLayout,
    data: Data,
}

impl Model {
    pub fn new(spec: ModelSpec, dataset: &Dataset) -> Result<Model, ModelError> {
        spec.validate()?;
        let data = match (spec.family, dataset) {
            (Family::Dsr, Dataset::Survey(panel)) => Data::Survey(survey_data(panel)),
            (Family::Dsr, _) => return Err(contract("dsr needs a survey panel")),
            (_, Dataset::Corpus { dtm, covariates }) => Data::Corpus(corpus_data(&spec, dtm, covariates)?),
            (f, Dataset::Survey(_)) => return Err(contract(format!("{} needs a corpus", f.name()))),
        };
        let layout = build::layout(&spec, &data);
        Ok(Model { spec, layout, data })
    }

    pub fn lda(spec: ModelSpec, dtm: &DocumentTermMatrix) -> Result<Model, ModelError> {
        let covariates = CovariateSet::empty(dtm.docs());
        Model::new(spec, &Dataset::Corpus { dtm: dtm.clone(), covariates })
    }

    pub fn corpus(spec: ModelSpec, dtm: &DocumentTermMatrix, covariates: &CovariateSet) -> Result<Model, ModelError> {
        Model::new(spec, &Dataset::Corpus { dtm: dtm.clone(), covariates: covariates.clone() })
    }

    pub fn survey(spec: ModelSpec, panel: &SurveyPanel) -> Result<Model, ModelError> {
        Model::new(spec, &Dataset::Survey(panel.clone()))
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn layout(&self) -> &ParameterLayout {
        &self.layout
    }

    /// Prior, likelihood and Jacobian terms at Φ.
    pub fn log_joint_terms(&self, phi: &[f64]) -> Result<LogJoint, ModelError> {
        if phi.len() != self.layout.dim() {
            return Err(contract(format!("Φ has {} values, model expects {}", phi.len(), self.layout.dim())));
        }
        let tape = Tape::new();
        let x = tape.constant(Tensor::vector(phi.to_vec()));
        let parts = build::log_joint(&self.spec, &self.layout, &self.data, x)?;
        Ok(LogJoint { prior: parts.prior.item(), likelihood: parts.likelihood.item(), jacobian: parts.jacobian.item() })
    }

    pub fn log_joint(&self, phi: &[f64]) -> Result<f64, ModelError> {
        Ok(self.log_joint_terms(phi)?.total())
    }

    /// Sampled parameters plus the derived shares `theta` where θ is not itself sampled.
    pub fn unpack(&self, phi: &[f64]) -> Result<NamedParams, ModelError> {
        let mut named = self.layout.unpack(phi)?;
        if let Some(theta) = plain::derived_theta(&self.spec, &self.data, &named) {
            named.insert("theta".into(), theta);
        }
        Ok(named)
    }

    pub fn pack(&self, named: &NamedParams) -> Result<Vec<f64>, ModelError> {
        self.layout.pack(named)
    }

    /// Log likelihood recomputed without the tape from constrained values
    /// (`theta` and the `beta` blocks, plus regression terms where present).
    pub fn likelihood_from(&self, named: &NamedParams) -> Result<f64, ModelError> {
        plain::likelihood(&self.spec, &self.data, named)
    }

    /// Regression means of a supervised family from constrained values.
    pub fn outcome_means(&self, named: &NamedParams) -> Result<Vec<f64>, ModelError> {
        match (&self.data, self.spec.family) {
            (Data::Corpus(c), Family::Slda | Family::Sslda) => {
                let theta = named.get("theta").ok_or_else(|| contract("missing theta"))?;
                plain::outcome_means(&self.spec, c, named, theta)
            }
            _ => Err(contract(format!("{} has no outcome regression", self.spec.family.name()))),
        }
    }

    /// Shape of θ: `[D, K]` for corpora, `[T, K]` for surveys.
    pub fn theta_shape(&self) -> Vec<usize> {
        match &self.data {
            Data::Corpus(c) => vec![c.dtm.docs(), self.spec.k],
            Data::Survey(s) => vec![s.panel.periods(), self.spec.k],
        }
    }

    /// Names of the topic-term (or type-answer) blocks.
    pub fn beta_names(&self) -> Vec<String> {
        match &self.data {
            Data::Corpus(_) => vec!["beta".into()],
            Data::Survey(s) => (0..s.panel.questions()).map(|j| format!("beta_{j}")).collect(),
        }
    }
}

impl Target for Model {
    fn dim(&self) -> usize {
        self.layout.dim()
    }

    fn log_density_gradient(&self, position: &[f64], grad: &mut [f64]) -> Result<f64, EvalError> {
        let tape = Tape::new();
        let x = tape.var(Tensor::vector(position.to_vec()));
        let total = build::log_joint(&self.spec, &self.layout, &self.data, x)
            .and_then(|p| Ok(p.prior.add(p.likelihood)?.add(p.jacobian)?))
            .map_err(|e| EvalError(e.to_string()))?;
        let value = total.item();
        if !value.is_finite() {
            return Err(EvalError(format!("log density {value}")));
        }
        let g = tape.gradient(total).map_err(|e| EvalError(e.to_string()))?;
        grad.copy_from_slice(g.wrt_slice(x).ok_or_else(|| EvalError("missing gradient".into()))?);
        Ok(value)
    }

    fn outputs(&self) -> Vec<ParamInfo> {
        let mut out = self.layout.params();
        if plain::has_derived_theta(self.spec.family) {
            out.push(ParamInfo::new("theta", &self.theta_shape()));
        }
        out
    }

    fn constrain(&self, position: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for e in self.layout.entries() {
            self.layout.unpack_entry(e, position, out);
        }
        if plain::has_derived_theta(self.spec.family) {
            let named = self.layout.unpack(position).expect("position length fixed by sampler");
            out.extend(plain::derived_theta(&self.spec, &self.data, &named).expect("family has derived θ"));
        }
    }
}

fn corpus_data(spec: &ModelSpec, dtm: &DocumentTermMatrix, covariates: &CovariateSet) -> Result<CorpusData, ModelError> {
    covariates.validate(dtm.docs())?;
    let supervised = matches!(spec.family, Family::Slda | Family::Sslda);
    if supervised && covariates.y.is_none() {
        return Err(contract(format!("{} needs outcomes y", spec.family.name())));
    }
    let entries = dtm.entries();
    let doc_index: Arc<[usize]> = entries.iter().map(|e| e.0).collect();
    let term_index: Arc<[usize]> = entries.iter().map(|e| e.1).collect();
    let counts = Tensor::vector(entries.iter().map(|e| e.2 as f64).collect());
    let log_coef = dtm.totals().iter().map(|&n| ln_gamma(n as f64 + 1.0)).sum::<f64>()
        - entries.iter().map(|e| ln_gamma(e.2 as f64 + 1.0)).sum::<f64>();
    let d = dtm.docs();
    let rows = covariates.topic_design();
    let p = rows.first().map(Vec::len).unwrap_or(1);
    let design = Tensor::matrix(d, p, rows.concat())?;
    let mq = covariates.q_names.len();
    let outcome_design = Tensor::matrix(d, mq, covariates.q.concat())?;
    let y = Tensor::vector(covariates.y.clone().unwrap_or_default());
    Ok(CorpusData {
        dtm: dtm.clone(),
        covariates: covariates.clone(),
        doc_index,
        term_index,
        counts,
        log_coef,
        design,
        outcome_design,
        y,
    })
}

fn survey_data(panel: &SurveyPanel) -> SurveyData {
    let mut category_offset = Vec::with_capacity(panel.questions());
    let mut acc = 0;
    for &l in panel.categories() {
        category_offset.push(acc);
        acc += l;
    }
    let mut merged: std::collections::BTreeMap<(usize, &[usize]), f64> = std::collections::BTreeMap::new();
    for r in panel.responses() {
        *merged.entry((r.period, r.answers.as_slice())).or_insert(0.0) += 1.0;
    }
    let mut period_index = Vec::with_capacity(merged.len());
    let mut answer_index = Vec::with_capacity(merged.len() * panel.questions());
    let mut weights = Vec::with_capacity(merged.len());
    for ((t, answers), w) in merged {
        period_index.push(t);
        answer_index.extend(answers.iter().zip(&category_offset).map(|(x, o)| x + o));
        weights.push(w);
    }
    SurveyData {
        panel: panel.clone(),
        period_index: period_index.into(),
        answer_index: answer_index.into(),
        weights: Tensor::vector(weights),
    }
}
