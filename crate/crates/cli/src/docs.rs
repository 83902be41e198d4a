//! JSON documents for models and merge paths.

use mixhmm_core::gaussian::GaussianParams;
use mixhmm_core::selection::count_free_parameters;
use mixhmm_core::{CovStructure, Matrix, MergePath, MixtureHmm, TransitionMatrix};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDoc {
    #[serde(rename = "D")]
    pub d: usize,
    pub component_counts: Vec<usize>,
    /// Row-major.
    pub trans: Vec<Vec<f64>>,
    pub weights: Vec<Vec<f64>>,
    pub means: Vec<Vec<Vec<f64>>>,
    /// Each covariance flattened row-major.
    pub covariances: Vec<Vec<Vec<f64>>>,
    pub cov_structure: String,
    pub loglik: Option<f64>,
}

fn bad(message: impl Into<String>) -> CliError {
    CliError::Document {
        what: "model",
        message: message.into(),
    }
}

impl ModelDoc {
    pub fn from_model(model: &MixtureHmm, loglik: Option<f64>) -> Self {
        let trans = model.trans().as_matrix();
        Self {
            d: model.n_states(),
            component_counts: model.component_counts(),
            trans: trans.iter_rows().map(<[f64]>::to_vec).collect(),
            weights: model.all_weights().to_vec(),
            means: model
                .all_components()
                .iter()
                .map(|s| s.iter().map(|g| g.mean().to_vec()).collect())
                .collect(),
            covariances: model
                .all_components()
                .iter()
                .map(|s| s.iter().map(|g| g.covariance().as_slice().to_vec()).collect())
                .collect(),
            cov_structure: model.cov_structure().as_str().to_string(),
            loglik,
        }
    }

    pub fn to_model(&self) -> Result<MixtureHmm> {
        let structure: CovStructure = self.cov_structure.parse().map_err(|e| bad(format!("{e}")))?;
        if self.trans.len() != self.d || self.weights.len() != self.d || self.means.len() != self.d || self.covariances.len() != self.d {
            return Err(bad(format!("expected {} states in every field", self.d)));
        }
        let trans = Matrix::from_rows(&self.trans).ok_or_else(|| bad("ragged transition matrix"))?;
        let trans = TransitionMatrix::new(trans).map_err(|e| bad(e.to_string()))?;
        let mut components = Vec::with_capacity(self.d);
        for (means, covs) in self.means.iter().zip(&self.covariances) {
            if means.len() != covs.len() {
                return Err(bad("means and covariances differ in length"));
            }
            let mut state = Vec::with_capacity(means.len());
            for (m, c) in means.iter().zip(covs) {
                let q = m.len();
                let cov = Matrix::from_vec(q, q, c.clone()).ok_or_else(|| bad("covariance size does not match mean"))?;
                state.push(GaussianParams::new(m.clone(), cov).map_err(|e| bad(e.to_string()))?);
            }
            components.push(state);
        }
        let model = MixtureHmm::new(trans, self.weights.clone(), components, structure).map_err(|e| bad(e.to_string()))?;
        if model.component_counts() != self.component_counts {
            return Err(bad("component_counts disagree with the component lists"));
        }
        Ok(model)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepDoc {
    #[serde(rename = "G")]
    pub clusters: usize,
    pub merged_pair: Option<[usize; 2]>,
    pub criterion_value: Option<f64>,
    pub plugin_loglik: Option<f64>,
    pub loglik: f64,
    #[serde(rename = "entropy_S")]
    pub entropy_s: f64,
    #[serde(rename = "entropy_Z_given_S")]
    pub entropy_z_given_s: f64,
    pub nu: usize,
    pub emptied_state: Option<usize>,
    pub model: ModelDoc,
}

pub const NU_CONVENTION: &str = "D(D-1) transitions + (K-D) weights + K per-component Gaussian parameters; initial law tied to the stationary law (0 parameters)";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathDoc {
    pub criterion: String,
    pub n: usize,
    pub candidates_evaluated: usize,
    pub nu_convention: String,
    pub steps: Vec<StepDoc>,
}

impl PathDoc {
    pub fn from_path(path: &MergePath, n: usize) -> Self {
        Self {
            criterion: path.criterion.as_str().to_string(),
            n,
            candidates_evaluated: path.candidates_evaluated,
            nu_convention: NU_CONVENTION.to_string(),
            steps: path
                .steps
                .iter()
                .map(|s| StepDoc {
                    clusters: s.clusters,
                    merged_pair: s.merged_pair.map(|(k, l)| [k, l]),
                    criterion_value: s.criterion_value,
                    plugin_loglik: s.plugin_loglik,
                    loglik: s.loglik,
                    entropy_s: s.entropy_s,
                    entropy_z_given_s: s.entropy_z_given_s,
                    nu: count_free_parameters(&s.model),
                    emptied_state: s.emptied_state,
                    model: ModelDoc::from_model(&s.model, Some(s.loglik)),
                })
                .collect(),
        }
    }
}
