//! Layout of dataset and run directories.

use std::path::Path;

use latent_hmc::io::{self, RunManifest, SurveyShape};
use latent_hmc::models::{CovariateSet, Dataset, DocumentTermMatrix, Family, SurveyPanel};
use latent_hmc::samples::SampleSet;
use latent_hmc::simgen::SimTruth;

use crate::error::CliError;

pub const DTM_FILE: &str = "dtm.csv";
pub const COVARIATES_FILE: &str = "covariates.csv";
pub const SURVEY_FILE: &str = "survey.csv";
pub const SURVEY_SHAPE_FILE: &str = "survey.json";
pub const TRUTH_FILE: &str = "truth.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const SAMPLES_FILE: &str = "samples.csv";
pub const STATS_FILE: &str = "stats.csv";
pub const REPORT_FILE: &str = "report.csv";
pub const SUMMARY_FILE: &str = "summary.csv";

fn require(path: &Path) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::usage(format!("{}: no such file", path.display())))
    }
}

/// Writes a corpus and returns the file names written.
pub fn write_corpus(dir: &Path, dtm: &DocumentTermMatrix, covariates: Option<&CovariateSet>) -> Result<Vec<String>, CliError> {
    io::write_dtm(&dir.join(DTM_FILE), dtm)?;
    let mut files = vec![DTM_FILE.to_string()];
    if let Some(c) = covariates {
        io::write_covariates(&dir.join(COVARIATES_FILE), c)?;
        files.push(COVARIATES_FILE.into());
    }
    Ok(files)
}

/// Writes a survey with a sidecar pinning its period and category counts.
pub fn write_panel(dir: &Path, panel: &SurveyPanel) -> Result<Vec<String>, CliError> {
    io::write_survey(&dir.join(SURVEY_FILE), panel)?;
    let shape = SurveyShape { periods: Some(panel.periods()), categories: Some(panel.categories().to_vec()) };
    let text = serde_json::to_string_pretty(&shape).map_err(|e| CliError::runtime(e.to_string()))?;
    io::write_atomic(&dir.join(SURVEY_SHAPE_FILE), text.as_bytes())?;
    Ok(vec![SURVEY_FILE.into(), SURVEY_SHAPE_FILE.into()])
}

/// Loads the dataset a family reads, with the names of the files used.
pub fn load_dataset(dir: &Path, family: Family) -> Result<(Dataset, Vec<String>), CliError> {
    if family.uses_corpus() {
        let dtm_path = dir.join(DTM_FILE);
        require(&dtm_path)?;
        let cov_path = dir.join(COVARIATES_FILE);
        let mut files = vec![DTM_FILE.to_string()];
        let covariates = if cov_path.is_file() {
            files.push(COVARIATES_FILE.into());
            Some(io::load_covariates(&cov_path)?)
        } else {
            None
        };
        let probe = io::load_dtm(&dtm_path)?;
        let docs = covariates.as_ref().map_or(probe.docs(), |c| c.docs().max(probe.docs()));
        let dtm = if docs == probe.docs() { probe } else { io::load_dtm_sized(&dtm_path, Some(docs), None)? };
        let covariates = covariates.unwrap_or_else(|| CovariateSet::empty(dtm.docs()));
        if covariates.docs() != dtm.docs() {
            return Err(CliError::usage(format!(
                "{}: {} covariate rows for {} documents",
                dir.display(),
                covariates.docs(),
                dtm.docs()
            )));
        }
        Ok((Dataset::Corpus { dtm, covariates }, files))
    } else {
        let survey_path = dir.join(SURVEY_FILE);
        require(&survey_path)?;
        let shape_path = dir.join(SURVEY_SHAPE_FILE);
        let mut files = vec![SURVEY_FILE.to_string()];
        let shape = if shape_path.is_file() {
            files.push(SURVEY_SHAPE_FILE.into());
            let text = std::fs::read_to_string(&shape_path).map_err(|e| CliError::usage(format!("{}: {e}", shape_path.display())))?;
            serde_json::from_str(&text).map_err(|e| CliError::usage(format!("{}: {e}", shape_path.display())))?
        } else {
            SurveyShape::default()
        };
        Ok((Dataset::Survey(io::load_survey(&survey_path, &shape)?), files))
    }
}

/// Ground truth stored next to a simulated dataset, if any.
pub fn load_truth_beside(dir: &Path) -> Result<Option<SimTruth>, CliError> {
    let p = dir.join(TRUTH_FILE);
    if p.is_file() {
        Ok(Some(io::load_truth(&p)?))
    } else {
        Ok(None)
    }
}

/// Draws of a run directory (or a samples.csv path) and its manifest when present.
pub fn load_run(path: &Path) -> Result<(SampleSet, Option<RunManifest>), CliError> {
    let (dir, samples) = if path.is_dir() { (path.to_path_buf(), path.join(SAMPLES_FILE)) } else {
        (path.parent().map(Path::to_path_buf).unwrap_or_default(), path.to_path_buf())
    };
    require(&samples)?;
    let manifest_path = dir.join(MANIFEST_FILE);
    let manifest = if manifest_path.is_file() { Some(RunManifest::load(&manifest_path)?) } else { None };
    let params = manifest.as_ref().and_then(RunManifest::params);
    let set = io::load_samples(&samples, params.as_deref())?;
    Ok((set, manifest))
}
