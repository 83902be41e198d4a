//! Initial fit, merge path, selection and final refit in one call.

use crate::data::Dataset;
use crate::em::{init_k_components, run_em, EmConfig, InitConfig};
use crate::error::{Error, Result};
use crate::gaussian::CovStructure;
use crate::merge::{hierarchical_merge, MergeCriterion, MergeOptions, MergePath, PairScreen};
use crate::model::{e_step, FullPosterior, MixtureHmm, TransitionModel};
use crate::selection::{CriteriaReport, SelectionCriterion};

#[derive(Debug, Clone, Copy)]
pub struct FitConfig {
    pub k_init: usize,
    pub criterion: MergeCriterion,
    pub selection: SelectionCriterion,
    pub init: InitConfig,
    /// EM iterations after each merge.
    pub refine_iters: usize,
    pub seed: u64,
    /// Stop merging at this many clusters instead of selecting.
    pub fixed_d: Option<usize>,
    pub transitions: TransitionModel,
    pub screen: Option<PairScreen>,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            k_init: 10,
            criterion: MergeCriterion::X,
            selection: SelectionCriterion::IclS,
            init: InitConfig::default(),
            refine_iters: 10,
            seed: 0,
            fixed_d: None,
            transitions: TransitionModel::Markov,
            screen: None,
        }
    }
}

impl FitConfig {
    pub fn with_structure(mut self, structure: CovStructure) -> Self {
        self.init.structure = structure;
        self
    }

    /// Transition model applied in every EM run, merges included.
    pub fn with_transitions(mut self, transitions: TransitionModel) -> Self {
        self.transitions = transitions;
        self.init.em.transitions = transitions;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_init == 0 {
            return Err(Error::Parameter("k_init must be at least 1".into()));
        }
        if self.refine_iters == 0 {
            return Err(Error::Parameter("refine_iters must be at least 1".into()));
        }
        if let Some(d) = self.fixed_d {
            if d == 0 || d > self.k_init {
                return Err(Error::Parameter(alloc::format!("fixed_d = {d} must lie in 1..={}", self.k_init)));
            }
        }
        if !(self.init.em.tol > 0.0) || self.init.em.max_iter == 0 {
            return Err(Error::Parameter("EM needs tol > 0 and max_iter >= 1".into()));
        }
        Ok(())
    }

    fn em(&self) -> EmConfig {
        EmConfig {
            transitions: self.transitions,
            ..self.init.em
        }
    }

    pub fn merge_options(&self) -> MergeOptions {
        MergeOptions {
            criterion: self.criterion,
            refine: EmConfig {
                max_iter: self.refine_iters,
                ..self.em()
            },
            stop_at: self.fixed_d.unwrap_or(1),
            screen: self.screen,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub path: MergePath,
    pub report: CriteriaReport,
    pub selected: usize,
    /// Selected path model after a full EM run.
    pub model: MixtureHmm,
    pub posterior: FullPosterior,
}

/// Full EM from `start`; keeps `start` if a state empties.
pub fn refit(start: &MixtureHmm, data: &Dataset, config: &EmConfig) -> Result<MixtureHmm> {
    match run_em(start.clone(), data, config) {
        Ok(fit) => Ok(fit.model),
        Err(Error::EmptyState { .. }) => Ok(start.clone()),
        Err(e) => Err(e),
    }
}

pub fn fit(data: &Dataset, config: &FitConfig) -> Result<FitResult> {
    config.validate()?;
    let mut init = config.init;
    init.em.transitions = config.transitions;
    let initial = init_k_components(data, config.k_init, config.seed, &init)?;
    fit_from(initial, data, config)
}

/// Runs merging, selection and refit from an already fitted `K`-state model.
pub fn fit_from(initial: MixtureHmm, data: &Dataset, config: &FitConfig) -> Result<FitResult> {
    config.validate()?;
    let path = hierarchical_merge(initial, data, &config.merge_options())?;
    let report = CriteriaReport::from_path(&path, data.len());
    let selected = match config.fixed_d {
        Some(d) => d,
        None => report
            .select(config.selection)
            .ok_or_else(|| Error::Parameter("empty merge path".into()))?,
    };
    let step = path.step_with(selected).expect("selected level lies on the path");
    let model = refit(&step.model, data, &config.em())?;
    let posterior = e_step(&model, data)?;
    Ok(FitResult {
        path,
        report,
        selected,
        model,
        posterior,
    })
}
