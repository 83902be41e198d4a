//! Hierarchical merging of clusters (hidden states) of a mixture HMM.
//!
//! Starting from a `K`-state fit with one component per state, the pair of
//! states whose merge maximises a likelihood-type score is fused, the reduced
//! model is refined by a few EM iterations, and the process repeats down to
//! a single state. Candidate merges are scored on plug-in models, with no
//! per-candidate refit.
//!
//! Scoring reuses the per-component densities of the current model: a merged
//! state's emission is the `q`-weighted average of the two parents'
//! emissions, so only one emission column and the transition matrix change
//! from candidate to candidate.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::data::Dataset;
use crate::em::{EmConfig, EmDriver};
use crate::error::{Error, Result};
use crate::hmm::{self, ScaledEmissions, SmoothOptions, TransitionMatrix};
use crate::math::{self, Matrix};
use crate::model::{e_stats, expand_to_component_chain, MixtureHmm, TransitionModel};

/// Likelihood-type score of a candidate merged model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum MergeCriterion {
    /// Observed log-likelihood, `E_X[ln P(X)]`.
    #[default]
    X,
    /// Expected state-completed log-likelihood, `ln P(X) - H_X(S)`.
    XS,
    /// Expected component-completed log-likelihood, `ln P(X) - H_X(Z)`.
    XZ,
}

impl MergeCriterion {
    pub const ALL: [MergeCriterion; 3] = [MergeCriterion::X, MergeCriterion::XS, MergeCriterion::XZ];

    pub fn as_str(self) -> &'static str {
        match self {
            MergeCriterion::X => "X",
            MergeCriterion::XS => "XS",
            MergeCriterion::XZ => "XZ",
        }
    }
}

impl core::str::FromStr for MergeCriterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().replace([',', '_', ' '], "").as_str() {
            "X" => Ok(MergeCriterion::X),
            "XS" => Ok(MergeCriterion::XS),
            "XZ" => Ok(MergeCriterion::XZ),
            other => Err(Error::Parameter(format!("unknown merge criterion {other:?}"))),
        }
    }
}

/// Optional filter deciding which pairs are scored at all.
pub type PairScreen = fn(&MixtureHmm, usize, usize) -> bool;

#[derive(Debug, Clone, Copy)]
pub struct MergeOptions {
    pub criterion: MergeCriterion,
    /// EM applied to each reduced model.
    pub refine: EmConfig,
    /// Stop once this many clusters remain.
    pub stop_at: usize,
    pub screen: Option<PairScreen>,
}

impl Default for MergeOptions {
    fn default() -> Self {
        Self {
            criterion: MergeCriterion::X,
            refine: EmConfig {
                tol: 1e-6,
                max_iter: 10,
                transitions: TransitionModel::Markov,
            },
            stop_at: 1,
            screen: None,
        }
    }
}

impl MergeOptions {
    pub fn with_criterion(self, criterion: MergeCriterion) -> Self {
        Self { criterion, ..self }
    }
}

/// Transition matrix after fusing states `a < b` into one state at index `a`.
///
/// Incoming mass adds up; the outgoing row is the `q`-weighted average of the
/// two parents' rows.
fn merged_transitions(trans: &TransitionMatrix, q: &[f64], a: usize, b: usize) -> Matrix {
    let d = trans.n_states();
    let map = |s: usize| -> usize {
        if s == b {
            a
        } else if s > b {
            s - 1
        } else {
            s
        }
    };
    let (qa, qb) = (q[a], q[b]);
    let qm = qa + qb;
    let mut out = Matrix::zeros(d - 1, d - 1);
    for from in 0..d {
        if from == a || from == b {
            continue;
        }
        let row = out.row_mut(map(from));
        for (to, &p) in trans.row(from).iter().enumerate() {
            row[map(to)] += p;
        }
    }
    let row = out.row_mut(a);
    for to in 0..d {
        row[map(to)] += (qa * trans.get(a, to) + qb * trans.get(b, to)) / qm;
    }
    out
}

fn ordered(k: usize, l: usize, d: usize) -> Result<(usize, usize)> {
    if k == l || k >= d || l >= d {
        return Err(Error::Index(format!("cannot merge clusters {k} and {l} of {d}")));
    }
    Ok((k.min(l), k.max(l)))
}

/// Fuses clusters `k` and `l`.
///
/// The merged cluster takes the smaller index and carries the union of both
/// component sets, with within-state weights `(q_k λ_k·, q_l λ_l·) / (q_k + q_l)`.
/// All Gaussian parameters are kept.
pub fn merge_pair(model: &MixtureHmm, k: usize, l: usize) -> Result<MixtureHmm> {
    let d = model.n_states();
    let (a, b) = ordered(k, l, d)?;
    let q = model.stationary()?;
    let trans = TransitionMatrix::from_weights(merged_transitions(model.trans(), &q, a, b))?;
    let qm = q[a] + q[b];
    let mut weights = Vec::with_capacity(d - 1);
    let mut components = Vec::with_capacity(d - 1);
    for s in 0..d {
        if s == b {
            continue;
        }
        if s == a {
            let mut w: Vec<f64> = model.weights(a).iter().map(|l| q[a] * l / qm).collect();
            w.extend(model.weights(b).iter().map(|l| q[b] * l / qm));
            let total: f64 = w.iter().sum();
            w.iter_mut().for_each(|v| *v = (*v / total).max(f64::MIN_POSITIVE));
            let mut c = model.components(a).to_vec();
            c.extend_from_slice(model.components(b));
            weights.push(w);
            components.push(c);
        } else {
            weights.push(model.weights(s).to_vec());
            components.push(model.components(s).to_vec());
        }
    }
    MixtureHmm::new(trans, weights, components, model.cov_structure())
}

/// Reference evaluation of a merging score on an explicit model.
///
/// `XZ` uses the entropy of the component chain's posterior, computed on the
/// expanded `K`-state chain.
pub fn criterion_value(model: &MixtureHmm, data: &Dataset, kind: MergeCriterion) -> Result<f64> {
    match kind {
        MergeCriterion::X => model.log_likelihood(data),
        MergeCriterion::XS => {
            let em = model.state_log_emissions(data)?;
            let post = hmm::forward_backward(&em, model.trans(), &model.stationary()?)?;
            Ok(post.loglik - hmm::posterior_entropy(&post))
        }
        MergeCriterion::XZ => {
            let chain = expand_to_component_chain(model)?;
            let comp = model.component_log_densities(data)?;
            let post = hmm::forward_backward(&comp, &chain.trans, &chain.init)?;
            Ok(post.loglik - hmm::posterior_entropy(&post))
        }
    }
}

/// Shared, read-only precomputation for scoring every pair of one model.
pub struct PairScorer<'m> {
    model: &'m MixtureHmm,
    q: Vec<f64>,
    offsets: Vec<usize>,
    flat_weights: Vec<f64>,
    /// `exp(ln φ_c(x_t) - shift_t)`.
    comp_probs: Matrix,
    shifts: Vec<f64>,
    /// Per-state scaled emission, `Σ_{c∈d} λ_c comp_probs[t][c]`.
    state_probs: Matrix,
    /// `H(δ_td·)` per observation and state (only for `XZ`).
    within_entropy: Option<Matrix>,
    kind: MergeCriterion,
}

impl<'m> PairScorer<'m> {
    pub fn new(model: &'m MixtureHmm, data: &Dataset, kind: MergeCriterion) -> Result<Self> {
        let comp = model.component_log_densities(data)?;
        let (n, k, d) = (data.len(), model.total_components(), model.n_states());
        let offsets = model.component_offsets();
        let flat_weights: Vec<f64> = model.all_weights().iter().flatten().copied().collect();
        let mut comp_probs = Matrix::zeros(n, k);
        let mut shifts = Vec::with_capacity(n);
        for t in 0..n {
            let row = comp.row(t);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if !max.is_finite() {
                return Err(Error::Parameter(format!("observation {t} has no finite component density")));
            }
            for (p, &v) in comp_probs.row_mut(t).iter_mut().zip(row) {
                *p = math::exp(v - max);
            }
            shifts.push(max);
        }
        let mut state_probs = Matrix::zeros(n, d);
        for t in 0..n {
            let cp = comp_probs.row(t);
            for s in 0..d {
                state_probs[(t, s)] = (offsets[s]..offsets[s + 1]).map(|c| flat_weights[c] * cp[c]).sum();
            }
        }
        let within_entropy = (kind == MergeCriterion::XZ).then(|| {
            let mut h = Matrix::zeros(n, d);
            for t in 0..n {
                for s in 0..d {
                    let range = offsets[s]..offsets[s + 1];
                    let w: Vec<f64> = range.clone().map(|c| flat_weights[c]).collect();
                    h[(t, s)] = mixture_entropy(&w, &comp_probs.row(t)[range]);
                }
            }
            h
        });
        Ok(Self {
            model,
            q: model.stationary()?,
            offsets,
            flat_weights,
            comp_probs,
            shifts,
            state_probs,
            within_entropy,
            kind,
        })
    }

    /// Plug-in score of merging `k` and `l`.
    pub fn score(&self, k: usize, l: usize) -> Result<f64> {
        let d = self.model.n_states();
        let (a, b) = ordered(k, l, d)?;
        let trans = TransitionMatrix::from_weights(merged_transitions(self.model.trans(), &self.q, a, b))?;
        let (qa, qb) = (self.q[a], self.q[b]);
        let qm = qa + qb;
        let n = self.shifts.len();

        let mut probs = Matrix::zeros(n, d - 1);
        for t in 0..n {
            let src = self.state_probs.row(t);
            let dst = probs.row_mut(t);
            let mut j = 0;
            for (s, &v) in src.iter().enumerate() {
                if s == b {
                    continue;
                }
                dst[j] = if s == a { (qa * src[a] + qb * src[b]) / qm } else { v };
                j += 1;
            }
        }
        let mut init: Vec<f64> = self.q.iter().enumerate().filter(|&(s, _)| s != b).map(|(_, &v)| v).collect();
        init[a] = qm;

        let em = ScaledEmissions {
            probs,
            shifts: self.shifts.clone(),
        };
        match self.kind {
            MergeCriterion::X => hmm::loglik_scaled(&em, &trans, &init),
            MergeCriterion::XS => {
                let s = hmm::smooth(&em, &trans, &init, SmoothOptions { keep_eta: false, entropy: true })?;
                Ok(s.loglik - s.entropy.unwrap_or(0.0))
            }
            MergeCriterion::XZ => {
                let s = hmm::smooth(&em, &trans, &init, SmoothOptions { keep_eta: false, entropy: true })?;
                let h_within = self.within_entropy.as_ref().expect("built for XZ");
                // merged state's within-state weights
                let mut w: Vec<f64> = Vec::new();
                let mut cols: Vec<usize> = Vec::new();
                for (src, qs) in [(a, qa), (b, qb)] {
                    for c in self.offsets[src]..self.offsets[src + 1] {
                        w.push(qs * self.flat_weights[c] / qm);
                        cols.push(c);
                    }
                }
                let mut probs_m = vec![0.0; cols.len()];
                let mut h_z = 0.0;
                for t in 0..n {
                    let tau = s.tau.row(t);
                    let mut j = 0;
                    for src in 0..d {
                        if src == b {
                            continue;
                        }
                        let ht = if src == a {
                            let cp = self.comp_probs.row(t);
                            for (p, &c) in probs_m.iter_mut().zip(&cols) {
                                *p = cp[c];
                            }
                            mixture_entropy(&w, &probs_m)
                        } else {
                            h_within[(t, src)]
                        };
                        h_z += tau[j] * ht;
                        j += 1;
                    }
                }
                Ok(s.loglik - s.entropy.unwrap_or(0.0) - h_z)
            }
        }
    }
}

/// Entropy of the responsibilities `w_c p_c / Σ w p`; prior weights if the
/// point has no support.
fn mixture_entropy(weights: &[f64], probs: &[f64]) -> f64 {
    if weights.len() < 2 {
        return 0.0;
    }
    let total: f64 = weights.iter().zip(probs).map(|(w, p)| w * p).sum();
    if !(total > 0.0) {
        return weights.iter().map(|&w| math::neg_plogp(w)).sum();
    }
    weights.iter().zip(probs).map(|(w, p)| math::neg_plogp(w * p / total)).sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairChoice {
    pub k: usize,
    pub l: usize,
    pub value: f64,
    /// Candidates actually scored.
    pub evaluated: usize,
}

fn candidate_pairs(model: &MixtureHmm, forced: Option<usize>, screen: Option<PairScreen>) -> Vec<(usize, usize)> {
    let d = model.n_states();
    let mut pairs: Vec<(usize, usize)> = (0..d)
        .flat_map(|k| (k + 1..d).map(move |l| (k, l)))
        .filter(|&(k, l)| forced.is_none_or(|f| k == f || l == f))
        .collect();
    if let Some(screen) = screen {
        let kept: Vec<(usize, usize)> = pairs.iter().copied().filter(|&(k, l)| screen(model, k, l)).collect();
        if !kept.is_empty() {
            pairs = kept;
        }
    }
    pairs
}

#[cfg(feature = "parallel")]
fn score_all(scorer: &PairScorer<'_>, pairs: &[(usize, usize)]) -> Vec<f64> {
    use rayon::prelude::*;
    pairs
        .par_iter()
        .map(|&(k, l)| scorer.score(k, l).unwrap_or(f64::NEG_INFINITY))
        .collect()
}

#[cfg(not(feature = "parallel"))]
fn score_all(scorer: &PairScorer<'_>, pairs: &[(usize, usize)]) -> Vec<f64> {
    pairs
        .iter()
        .map(|&(k, l)| scorer.score(k, l).unwrap_or(f64::NEG_INFINITY))
        .collect()
}

fn choose(model: &MixtureHmm, data: &Dataset, kind: MergeCriterion, forced: Option<usize>, screen: Option<PairScreen>) -> Result<PairChoice> {
    if model.n_states() < 2 {
        return Err(Error::Index("need at least two clusters to merge".into()));
    }
    let scorer = PairScorer::new(model, data, kind)?;
    let pairs = candidate_pairs(model, forced, screen);
    let values = score_all(&scorer, &pairs);
    // Lexicographic order of `pairs` makes the first maximum the tie-winner.
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    if !values[best].is_finite() {
        return Err(Error::Parameter("no candidate merge has a finite score".into()));
    }
    Ok(PairChoice {
        k: pairs[best].0,
        l: pairs[best].1,
        value: values[best],
        evaluated: pairs.len(),
    })
}

/// The pair `(k, l)`, `k < l`, whose plug-in merge maximises the criterion.
pub fn best_pair(model: &MixtureHmm, data: &Dataset, kind: MergeCriterion) -> Result<PairChoice> {
    choose(model, data, kind, None, None)
}

/// One level of the hierarchy.
#[derive(Debug, Clone, PartialEq)]
pub struct MergeStep {
    /// Number of clusters (hidden states) after this step.
    pub clusters: usize,
    pub model: MixtureHmm,
    /// Indices in the previous step's model; `None` for the starting fit.
    pub merged_pair: Option<(usize, usize)>,
    pub criterion_value: Option<f64>,
    /// Log-likelihood of the plug-in merge, before refinement.
    pub plugin_loglik: Option<f64>,
    /// Log-likelihood after refinement.
    pub loglik: f64,
    pub entropy_s: f64,
    pub entropy_z_given_s: f64,
    /// State that emptied during refinement and is merged next.
    pub emptied_state: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MergePath {
    pub criterion: MergeCriterion,
    pub steps: Vec<MergeStep>,
    pub candidates_evaluated: usize,
}

impl MergePath {
    pub fn step_with(&self, clusters: usize) -> Option<&MergeStep> {
        self.steps.iter().find(|s| s.clusters == clusters)
    }
}

fn describe(model: MixtureHmm, data: &Dataset) -> Result<(MixtureHmm, f64, f64, f64)> {
    let (stats, _) = e_stats(&model, data, SmoothOptions { keep_eta: false, entropy: true })?;
    let offsets = model.component_offsets();
    let h_z = crate::model::within_state_entropy(&stats.tau, &stats.delta, &offsets);
    Ok((model, stats.loglik, stats.entropy_s.unwrap_or(0.0), h_z))
}

/// Merges from `initial.n_states()` clusters down to `options.stop_at`.
///
/// If refinement empties a state, the refinement stops at the last valid
/// model and that state is forced into the next merge.
pub fn hierarchical_merge(initial: MixtureHmm, data: &Dataset, options: &MergeOptions) -> Result<MergePath> {
    let stop = options.stop_at.max(1);
    let (model, loglik, h_s, h_z) = describe(initial, data)?;
    let mut steps = vec![MergeStep {
        clusters: model.n_states(),
        model,
        merged_pair: None,
        criterion_value: None,
        plugin_loglik: None,
        loglik,
        entropy_s: h_s,
        entropy_z_given_s: h_z,
        emptied_state: None,
    }];
    let mut evaluated = 0;
    let mut forced: Option<usize> = None;
    while steps.last().expect("non-empty").clusters > stop {
        let current = &steps.last().expect("non-empty").model;
        let choice = choose(current, data, options.criterion, forced, options.screen)?;
        evaluated += choice.evaluated;
        let merged = merge_pair(current, choice.k, choice.l)?;
        let driver = EmDriver::new(merged, data, options.refine)?;
        let plugin_loglik = driver.loglik();
        let (fit, err) = driver.run_recoverable();
        forced = match err {
            None => None,
            Some(Error::EmptyState { state, .. }) => Some(state),
            Some(e) => return Err(e),
        };
        let (model, loglik, h_s, h_z) = describe(fit.model, data)?;
        steps.push(MergeStep {
            clusters: model.n_states(),
            model,
            merged_pair: Some((choice.k, choice.l)),
            criterion_value: Some(choice.value),
            plugin_loglik: Some(plugin_loglik),
            loglik,
            entropy_s: h_s,
            entropy_z_given_s: h_z,
            emptied_state: forced,
        });
    }
    Ok(MergePath {
        criterion: options.criterion,
        steps,
        candidates_evaluated: evaluated,
    })
}
