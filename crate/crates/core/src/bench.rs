//! Replicated simulation studies over a grid of `(a, b)` benchmark cells.

use alloc::string::String;
use alloc::vec::Vec;

use crate::data::Dataset;
use crate::em::init_k_components;
use crate::error::Result;
use crate::gaussian::CovStructure;
use crate::hmm::map_classify;
use crate::math::{self, Matrix};
use crate::merge::{hierarchical_merge, MergeCriterion, MergePath};
use crate::metrics::{correct_rate, mse};
use crate::model::{e_step, MixtureHmm, TransitionModel};
use crate::pipeline::{refit, FitConfig};
use crate::seed::derive_seed;
use crate::selection::{CriteriaReport, SelectionCriterion};
use crate::sim::{benchmark_design, simulate, SimResult};

/// How clusters are merged in one benchmark arm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Merge(MergeCriterion),
    /// Transition rows forced equal in every fit (an independent mixture),
    /// merged by the state-entropy score.
    Independent,
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Method::Merge(c) => c.as_str(),
            Method::Independent => "independent",
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub cells: Vec<(f64, f64)>,
    pub replicates: usize,
    pub n: usize,
    pub k_init: usize,
    pub methods: Vec<Method>,
    pub seed: u64,
    /// Fitting settings; `k_init`, `criterion`, `seed` and the transition
    /// model are overridden per arm.
    pub fit: FitConfig,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            cells: full_grid(),
            replicates: 20,
            n: 800,
            k_init: 6,
            methods: alloc::vec![
                Method::Merge(MergeCriterion::X),
                Method::Merge(MergeCriterion::XS),
                Method::Merge(MergeCriterion::XZ),
            ],
            seed: 0,
            fit: FitConfig::default().with_structure(CovStructure::Spherical),
        }
    }
}

/// `a ∈ {0.25, 0.5, 0.75, 0.9}` × `b ∈ {1, 3, 5, 7}`.
pub fn full_grid() -> Vec<(f64, f64)> {
    let mut cells = Vec::new();
    for a in [0.25, 0.5, 0.75, 0.9] {
        for b in [1.0, 3.0, 5.0, 7.0] {
            cells.push((a, b));
        }
    }
    cells
}

/// Result of one method on one replicate.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    /// MAP agreement with the true states using the `G = D` model.
    pub rate: f64,
    /// Posterior error of the `G = D` model.
    pub mse: f64,
    /// Posterior error of the model chosen by ICL_S.
    pub mse_selected: f64,
    pub selected_bic: usize,
    pub selected_icl: usize,
    pub selected_icl_s: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateResult {
    pub a: f64,
    pub b: f64,
    pub replicate: usize,
    pub method: Method,
    pub outcome: core::result::Result<Outcome, String>,
}

/// Summary of one `(cell, method)` pair.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub a: f64,
    pub b: f64,
    pub method: Method,
    pub replicates: usize,
    pub failures: usize,
    pub mean_mse: f64,
    pub sd_mse: f64,
    pub mean_rate: f64,
    pub sd_rate: f64,
    pub mean_mse_selected: f64,
    pub sd_mse_selected: f64,
    /// Share of runs where ICL_S picked the true number of states.
    pub cluster_hit_rate: f64,
    pub icl_hit_rate: f64,
    pub bic_hit_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub replicates: Vec<ReplicateResult>,
}

impl BenchReport {
    pub fn row(&self, a: f64, b: f64, method: Method) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.a == a && r.b == b && r.method == method)
    }

    pub fn failures(&self) -> usize {
        self.rows.iter().map(|r| r.failures).sum()
    }
}

/// Seed of the simulated sequence for one replicate of one cell.
pub fn replicate_seed(master: u64, a: f64, b: f64, replicate: usize) -> u64 {
    derive_seed(master, &[a.to_bits(), b.to_bits(), replicate as u64])
}

fn tau_at(path: &MergePath, clusters: usize, data: &Dataset, config: &FitConfig, transitions: TransitionModel) -> Result<Matrix> {
    let step = path.step_with(clusters).expect("level lies on the path");
    let em = crate::em::EmConfig {
        transitions,
        ..config.init.em
    };
    let model = refit(&step.model, data, &em)?;
    Ok(e_step(&model, data)?.chain.tau)
}

fn evaluate(path: &MergePath, sim: &SimResult, truth_d: usize, config: &FitConfig, transitions: TransitionModel) -> Result<Outcome> {
    let data = &sim.data;
    let report = CriteriaReport::from_path(path, data.len());
    let pick = |w| report.select(w).expect("path is never empty");
    let (bic, icl, icl_s) = (pick(SelectionCriterion::Bic), pick(SelectionCriterion::Icl), pick(SelectionCriterion::IclS));
    let tau = tau_at(path, truth_d, data, config, transitions)?;
    let rate = correct_rate(&map_classify(&tau), &sim.states)?;
    let err = mse(&tau, &sim.true_tau)?;
    let err_selected = if icl_s == truth_d {
        err
    } else {
        mse(&tau_at(path, icl_s, data, config, transitions)?, &sim.true_tau)?
    };
    Ok(Outcome {
        rate,
        mse: err,
        mse_selected: err_selected,
        selected_bic: bic,
        selected_icl: icl,
        selected_icl_s: icl_s,
    })
}

/// Every method on one simulated replicate. Merge arms share the initial fit.
pub fn run_replicate(config: &BenchConfig, a: f64, b: f64, replicate: usize) -> Vec<ReplicateResult> {
    let seed = replicate_seed(config.seed, a, b, replicate);
    let make = |method, outcome| ReplicateResult {
        a,
        b,
        replicate,
        method,
        outcome,
    };
    let sim = benchmark_design(a, b).and_then(|s| simulate(&s.with_n(config.n).with_seed(seed)));
    let sim = match sim {
        Ok(s) => s,
        Err(e) => return config.methods.iter().map(|&m| make(m, Err(alloc::format!("{e}")))).collect(),
    };
    let truth_d = 4;
    let fit_seed = derive_seed(seed, &[1]);
    let mut shared: Option<Result<MixtureHmm>> = None;
    let mut out = Vec::with_capacity(config.methods.len());
    for &method in &config.methods {
        let (criterion, transitions) = match method {
            Method::Merge(c) => (c, TransitionModel::Markov),
            Method::Independent => (MergeCriterion::XS, TransitionModel::Independent),
        };
        let cfg = FitConfig {
            k_init: config.k_init,
            criterion,
            seed: fit_seed,
            fixed_d: None,
            ..config.fit
        }
        .with_transitions(transitions);
        let initial = match method {
            Method::Merge(_) => shared
                .get_or_insert_with(|| init_k_components(&sim.data, cfg.k_init, fit_seed, &cfg.init))
                .clone(),
            Method::Independent => init_k_components(&sim.data, cfg.k_init, fit_seed, &cfg.init),
        };
        let outcome = initial
            .and_then(|m| hierarchical_merge(m, &sim.data, &cfg.merge_options()))
            .and_then(|path| evaluate(&path, &sim, truth_d, &cfg, transitions))
            .map_err(|e| alloc::format!("{e}"));
        out.push(make(method, outcome));
    }
    out
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, math::sqrt(var))
}

/// Folds replicate results into one row per `(cell, method)`, in grid order.
pub fn summarize(config: &BenchConfig, replicates: &[ReplicateResult]) -> Vec<BenchRow> {
    let mut rows = Vec::new();
    for &(a, b) in &config.cells {
        for &method in &config.methods {
            let runs: Vec<&ReplicateResult> = replicates
                .iter()
                .filter(|r| r.a == a && r.b == b && r.method == method)
                .collect();
            let ok: Vec<&Outcome> = runs.iter().filter_map(|r| r.outcome.as_ref().ok()).collect();
            let col = |f: fn(&Outcome) -> f64| -> Vec<f64> { ok.iter().map(|o| f(o)).collect() };
            let hits = |f: fn(&Outcome) -> usize| -> f64 {
                if ok.is_empty() {
                    f64::NAN
                } else {
                    ok.iter().filter(|o| f(o) == 4).count() as f64 / ok.len() as f64
                }
            };
            let (mean_mse, sd_mse) = mean_sd(&col(|o| o.mse));
            let (mean_rate, sd_rate) = mean_sd(&col(|o| o.rate));
            let (mean_mse_selected, sd_mse_selected) = mean_sd(&col(|o| o.mse_selected));
            rows.push(BenchRow {
                a,
                b,
                method,
                replicates: runs.len(),
                failures: runs.len() - ok.len(),
                mean_mse,
                sd_mse,
                mean_rate,
                sd_rate,
                mean_mse_selected,
                sd_mse_selected,
                cluster_hit_rate: hits(|o| o.selected_icl_s),
                icl_hit_rate: hits(|o| o.selected_icl),
                bic_hit_rate: hits(|o| o.selected_bic),
            });
        }
    }
    rows
}

#[cfg(feature = "parallel")]
fn run_jobs(config: &BenchConfig, jobs: &[(f64, f64, usize)]) -> Vec<ReplicateResult> {
    use rayon::prelude::*;
    jobs.par_iter()
        .map(|&(a, b, r)| run_replicate(config, a, b, r))
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect()
}

#[cfg(not(feature = "parallel"))]
fn run_jobs(config: &BenchConfig, jobs: &[(f64, f64, usize)]) -> Vec<ReplicateResult> {
    jobs.iter().flat_map(|&(a, b, r)| run_replicate(config, a, b, r)).collect()
}

/// Runs every cell × replicate × method. Failed replicates are counted, not
/// fatal. Results do not depend on the order of jobs or the thread count.
pub fn run_benchmark(config: &BenchConfig) -> Result<BenchReport> {
    if config.replicates == 0 {
        return Err(crate::error::Error::Parameter("need at least one replicate".into()));
    }
    if config.methods.is_empty() || config.cells.is_empty() {
        return Err(crate::error::Error::Parameter("need at least one cell and one method".into()));
    }
    for &(a, b) in &config.cells {
        benchmark_design(a, b)?;
    }
    let jobs: Vec<(f64, f64, usize)> = config
        .cells
        .iter()
        .flat_map(|&(a, b)| (0..config.replicates).map(move |r| (a, b, r)))
        .collect();
    let replicates = run_jobs(config, &jobs);
    Ok(BenchReport {
        rows: summarize(config, &replicates),
        replicates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> BenchConfig {
        BenchConfig {
            cells: alloc::vec![(0.9, 1.0)],
            replicates: 2,
            n: 300,
            methods: alloc::vec![Method::Merge(MergeCriterion::X), Method::Independent],
            seed: 3,
            ..BenchConfig::default()
        }
    }

    #[test]
    fn report_shape_and_determinism() {
        let cfg = small();
        let a = run_benchmark(&cfg).unwrap();
        assert_eq!(a.rows.len(), 2);
        assert_eq!(a.replicates.len(), 4);
        assert_eq!(a.failures(), 0);
        let row = a.row(0.9, 1.0, Method::Merge(MergeCriterion::X)).unwrap();
        assert!(row.mean_rate > 0.9);
        assert_eq!(a, run_benchmark(&cfg).unwrap());
    }

    #[test]
    fn full_grid_has_sixteen_cells() {
        assert_eq!(full_grid().len(), 16);
    }

    #[test]
    fn mean_sd_basics() {
        assert_eq!(mean_sd(&[1.0, 3.0]), (2.0, math::sqrt(2.0)));
        assert_eq!(mean_sd(&[5.0]), (5.0, 0.0));
    }

    #[test]
    fn bad_grid_rejected() {
        let cfg = BenchConfig {
            cells: alloc::vec![(1.5, 1.0)],
            ..small()
        };
        assert!(run_benchmark(&cfg).is_err());
    }
}
