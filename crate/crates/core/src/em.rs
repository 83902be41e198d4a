//! EM iterations for [`MixtureHmm`] and the initial `K`-component fit.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::gaussian::{weighted_mle, CovStructure, GaussianParams};
use crate::hmm::{SmoothOptions, TransitionMatrix};
use crate::model::{e_stats, m_step_stats, EStats, MixtureHmm, TransitionModel};
use crate::seed::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmConfig {
    /// Stop once the relative log-likelihood gain drops below this.
    pub tol: f64,
    pub max_iter: usize,
    pub transitions: TransitionModel,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iter: 500,
            transitions: TransitionModel::Markov,
        }
    }
}

impl EmConfig {
    pub fn with_max_iter(self, max_iter: usize) -> Self {
        Self { max_iter, ..self }
    }
}

#[derive(Debug, Clone)]
pub struct EmFit {
    pub model: MixtureHmm,
    /// Observed log-likelihood before the first update and after each one.
    pub trace: Vec<f64>,
    pub converged: bool,
}

impl EmFit {
    pub fn loglik(&self) -> f64 {
        *self.trace.last().expect("trace is never empty")
    }
}

/// Stepwise EM state. Keeps the last valid model when an update fails, so
/// callers can recover from an emptied state.
pub struct EmDriver<'a> {
    data: &'a Dataset,
    config: EmConfig,
    model: MixtureHmm,
    stats: EStats,
    trace: Vec<f64>,
}

pub enum Step {
    Improved,
    Converged,
}

impl<'a> EmDriver<'a> {
    pub fn new(model: MixtureHmm, data: &'a Dataset, config: EmConfig) -> Result<Self> {
        if !(config.tol > 0.0) || config.max_iter == 0 {
            return Err(Error::Parameter("EM needs tol > 0 and max_iter >= 1".into()));
        }
        let (stats, _) = e_stats(&model, data, SmoothOptions::default())?;
        let trace = vec![stats.loglik];
        Ok(Self {
            data,
            config,
            model,
            stats,
            trace,
        })
    }

    /// One M-step followed by the E-step of the updated model.
    pub fn step(&mut self) -> Result<Step> {
        let next = m_step_stats(self.data, &self.stats, &self.model, self.config.transitions)?;
        let (stats, _) = e_stats(&next, self.data, SmoothOptions::default())?;
        let old = self.stats.loglik;
        let new = stats.loglik;
        self.model = next;
        self.stats = stats;
        self.trace.push(new);
        if new - old < self.config.tol * old.abs() {
            Ok(Step::Converged)
        } else {
            Ok(Step::Improved)
        }
    }

    pub fn model(&self) -> &MixtureHmm {
        &self.model
    }

    pub fn loglik(&self) -> f64 {
        self.stats.loglik
    }

    pub fn trace(&self) -> &[f64] {
        &self.trace
    }

    /// Runs until convergence or `max_iter` updates.
    pub fn run(mut self) -> Result<EmFit> {
        let mut converged = false;
        for _ in 0..self.config.max_iter {
            if let Step::Converged = self.step()? {
                converged = true;
                break;
            }
        }
        Ok(self.finish(converged))
    }

    /// Like [`run`](Self::run) but stops at the first failing update and
    /// returns the last valid fit together with the error.
    pub fn run_recoverable(mut self) -> (EmFit, Option<Error>) {
        for _ in 0..self.config.max_iter {
            match self.step() {
                Ok(Step::Improved) => {}
                Ok(Step::Converged) => return (self.finish(true), None),
                Err(e) => return (self.finish(false), Some(e)),
            }
        }
        (self.finish(false), None)
    }

    fn finish(self, converged: bool) -> EmFit {
        EmFit {
            model: self.model,
            trace: self.trace,
            converged,
        }
    }
}

/// Alternates E- and M-steps until the relative gain falls below `tol`.
pub fn run_em(model: MixtureHmm, data: &Dataset, config: &EmConfig) -> Result<EmFit> {
    EmDriver::new(model, data, *config)?.run()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitConfig {
    pub structure: CovStructure,
    /// Lloyd iterations after k-means++ seeding.
    pub kmeans_sweeps: usize,
    /// Independent seedings; the best final log-likelihood is kept.
    pub restarts: usize,
    /// Diagonal of the starting transition matrix.
    pub stay_probability: f64,
    pub em: EmConfig,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self {
            structure: CovStructure::Full,
            kmeans_sweeps: 10,
            restarts: 3,
            stay_probability: 0.8,
            em: EmConfig::default(),
        }
    }
}

/// Fits a `K`-state HMM with one Gaussian per state, seeded by k-means.
pub fn init_k_components(data: &Dataset, k: usize, seed: u64, config: &InitConfig) -> Result<MixtureHmm> {
    if k == 0 {
        return Err(Error::Parameter("need at least one component".into()));
    }
    if data.len() < k {
        return Err(Error::Size {
            needed: k,
            found: data.len(),
        });
    }
    let mut best: Option<EmFit> = None;
    let mut last_err = None;
    for restart in 0..config.restarts.max(1) {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[restart as u64]));
        let start = match kmeans_start(data, k, &mut rng, config) {
            Ok(m) => m,
            Err(e) => {
                last_err = Some(e);
                continue;
            }
        };
        match run_em(start, data, &config.em) {
            Ok(fit) => {
                if best.as_ref().is_none_or(|b| fit.loglik() > b.loglik()) {
                    best = Some(fit);
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    match best {
        Some(fit) => Ok(fit.model),
        None => Err(last_err.unwrap_or(Error::DegenerateResponsibility)),
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// k-means++ seeding followed by a fixed number of Lloyd sweeps.
/// Returns the cluster label of every observation.
pub fn kmeans(data: &Dataset, k: usize, sweeps: usize, rng: &mut impl Rng) -> Vec<usize> {
    let n = data.len();
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
    centers.push(data.point(rng.random_range(0..n)).to_vec());
    let mut nearest: Vec<f64> = (0..n).map(|t| sq_dist(data.point(t), &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut idx = n - 1;
            for (t, &w) in nearest.iter().enumerate() {
                if u < w {
                    idx = t;
                    break;
                }
                u -= w;
            }
            idx
        } else {
            rng.random_range(0..n)
        };
        let c = data.point(pick).to_vec();
        for (t, m) in nearest.iter_mut().enumerate() {
            *m = m.min(sq_dist(data.point(t), &c));
        }
        centers.push(c);
    }

    let q = data.dim();
    let mut labels = vec![0usize; n];
    let assign = |centers: &[Vec<f64>], labels: &mut [usize]| {
        for (t, l) in labels.iter_mut().enumerate() {
            let x = data.point(t);
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (j, c) in centers.iter().enumerate() {
                let dd = sq_dist(x, c);
                if dd < best_d {
                    best_d = dd;
                    best = j;
                }
            }
            *l = best;
        }
    };
    assign(&centers, &mut labels);
    for _ in 0..sweeps {
        let mut sums = vec![vec![0.0; q]; k];
        let mut counts = vec![0usize; k];
        for (t, &l) in labels.iter().enumerate() {
            counts[l] += 1;
            for (s, &v) in sums[l].iter_mut().zip(data.point(t)) {
                *s += v;
            }
        }
        for j in 0..k {
            if counts[j] > 0 {
                centers[j] = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            }
        }
        assign(&centers, &mut labels);
    }
    labels
}

fn kmeans_start(data: &Dataset, k: usize, rng: &mut impl Rng, config: &InitConfig) -> Result<MixtureHmm> {
    let labels = kmeans(data, k, config.kmeans_sweeps, rng);
    let floor = data.variance_floor();
    let global = weighted_mle(data.observations(), &vec![1.0; data.len()], config.structure, floor)?;
    let mut components: Vec<GaussianParams> = Vec::with_capacity(k);
    let mut w = vec![0.0; data.len()];
    for j in 0..k {
        for (wt, &l) in w.iter_mut().zip(&labels) {
            *wt = if l == j { 1.0 } else { 0.0 };
        }
        let size: f64 = w.iter().sum();
        let g = if size >= 2.0 {
            weighted_mle(data.observations(), &w, config.structure, floor)?
        } else {
            // Too few members for a scatter estimate: borrow the global spread.
            let mean = if size > 0.0 {
                data.point(labels.iter().position(|&l| l == j).unwrap_or(0)).to_vec()
            } else {
                global.mean().to_vec()
            };
            GaussianParams::new(mean, global.covariance().clone())?
        };
        components.push(g);
    }
    let stay = match config.em.transitions {
        _ if k == 1 => 1.0,
        TransitionModel::Markov => config.stay_probability,
        // Independent fits start inside their own family.
        TransitionModel::Independent => 1.0 / k as f64,
    };
    let trans = TransitionMatrix::sticky(k, stay)?;
    MixtureHmm::single_component(trans, components, config.structure)
}
