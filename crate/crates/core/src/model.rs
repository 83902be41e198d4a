//! HMM whose per-state emission law is a Gaussian mixture.
//!
//! Two latent layers are involved: the state chain `S` and, within each
//! state, the component `Z`. The E-step factors `P(S, Z | X)` as
//! `P(S | X) P(Z | S, X)`; the first factor comes from forward–backward on
//! the mixture emission densities, the second is an ordinary within-state
//! responsibility.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::gaussian::{weighted_mle, CovStructure, GaussianParams};
use crate::hmm::{self, ChainPosterior, ScaledEmissions, SmoothOptions, TransitionMatrix};
use crate::math::{self, Matrix};

/// Floor applied to re-estimated transition probabilities so the chain stays
/// primitive and its stationary law is defined.
pub const TRANSITION_FLOOR: f64 = 1e-10;

/// Posterior mass below which a state is reported empty.
pub const EMPTY_STATE_MASS: f64 = 1e-8;

const WEIGHT_SUM_TOL: f64 = 1e-12;

/// How the transition matrix is re-estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TransitionModel {
    /// Free transition matrix (hidden Markov chain).
    #[default]
    Markov,
    /// Every row equal to the state proportions (independent mixture).
    Independent,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixtureHmm {
    trans: TransitionMatrix,
    weights: Vec<Vec<f64>>,
    components: Vec<Vec<GaussianParams>>,
    cov_structure: CovStructure,
}

impl MixtureHmm {
    pub fn new(
        trans: TransitionMatrix,
        weights: Vec<Vec<f64>>,
        components: Vec<Vec<GaussianParams>>,
        cov_structure: CovStructure,
    ) -> Result<Self> {
        let d = trans.n_states();
        if weights.len() != d || components.len() != d {
            return Err(Error::Dimension {
                expected: d,
                found: weights.len().min(components.len()),
            });
        }
        let q = components
            .first()
            .and_then(|c| c.first())
            .map(GaussianParams::dim)
            .ok_or_else(|| Error::Parameter("state without components".into()))?;
        for (state, (w, c)) in weights.iter().zip(&components).enumerate() {
            if w.is_empty() || w.len() != c.len() {
                return Err(Error::Parameter(format!(
                    "state {state}: {} weights for {} components",
                    w.len(),
                    c.len()
                )));
            }
            if w.iter().any(|&l| !(l > 0.0 && l <= 1.0)) {
                return Err(Error::Parameter(format!("state {state}: mixing weight outside (0, 1]")));
            }
            let s: f64 = w.iter().sum();
            if (s - 1.0).abs() > WEIGHT_SUM_TOL * w.len() as f64 {
                return Err(Error::Parameter(format!("state {state}: mixing weights sum to {s}")));
            }
            if let Some(bad) = c.iter().find(|g| g.dim() != q) {
                return Err(Error::Dimension {
                    expected: q,
                    found: bad.dim(),
                });
            }
        }
        Ok(Self {
            trans,
            weights,
            components,
            cov_structure,
        })
    }

    /// One Gaussian per state.
    pub fn single_component(trans: TransitionMatrix, components: Vec<GaussianParams>, cov_structure: CovStructure) -> Result<Self> {
        let weights = vec![vec![1.0]; components.len()];
        let components = components.into_iter().map(|g| vec![g]).collect();
        Self::new(trans, weights, components, cov_structure)
    }

    pub fn n_states(&self) -> usize {
        self.trans.n_states()
    }

    pub fn component_counts(&self) -> Vec<usize> {
        self.components.iter().map(Vec::len).collect()
    }

    /// Total component budget `K = Σ_d K_d`.
    pub fn total_components(&self) -> usize {
        self.components.iter().map(Vec::len).sum()
    }

    pub fn dim(&self) -> usize {
        self.components[0][0].dim()
    }

    pub fn trans(&self) -> &TransitionMatrix {
        &self.trans
    }

    pub fn weights(&self, state: usize) -> &[f64] {
        &self.weights[state]
    }

    pub fn all_weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    pub fn components(&self, state: usize) -> &[GaussianParams] {
        &self.components[state]
    }

    pub fn all_components(&self) -> &[Vec<GaussianParams>] {
        &self.components
    }

    pub fn cov_structure(&self) -> CovStructure {
        self.cov_structure
    }

    /// Start of each state's block in the flat component numbering.
    pub fn component_offsets(&self) -> Vec<usize> {
        let mut off = Vec::with_capacity(self.n_states() + 1);
        let mut acc = 0;
        for c in &self.components {
            off.push(acc);
            acc += c.len();
        }
        off.push(acc);
        off
    }

    /// Components in flat order (state by state).
    pub fn flat_components(&self) -> impl Iterator<Item = &GaussianParams> {
        self.components.iter().flatten()
    }

    pub fn stationary(&self) -> Result<Vec<f64>> {
        hmm::stationary_distribution(&self.trans)
    }

    /// `ln ψ_d(x) = ln Σ_k λ_dk φ(x; γ_dk)`.
    pub fn emission_log_density(&self, x: &[f64], state: usize) -> f64 {
        let terms: Vec<f64> = self.weights[state]
            .iter()
            .zip(&self.components[state])
            .map(|(&l, g)| math::ln(l) + g.log_density(x))
            .collect();
        math::log_sum_exp(&terms)
    }

    /// `ln φ(x_t; γ_c)` for every observation and flat component `c`.
    pub fn component_log_densities(&self, data: &Dataset) -> Result<Matrix> {
        self.check_dim(data)?;
        let k = self.total_components();
        let mut out = Matrix::zeros(data.len(), k);
        for t in 0..data.len() {
            let x = data.point(t);
            for (o, g) in out.row_mut(t).iter_mut().zip(self.flat_components()) {
                *o = g.log_density(x);
            }
        }
        Ok(out)
    }

    /// `n × D` matrix of `ln ψ_d(x_t)`.
    pub fn state_log_emissions(&self, data: &Dataset) -> Result<Matrix> {
        let comp = self.component_log_densities(data)?;
        Ok(self.state_log_emissions_from(&comp))
    }

    pub(crate) fn state_log_emissions_from(&self, comp: &Matrix) -> Matrix {
        let offsets = self.component_offsets();
        let log_w: Vec<f64> = self.weights.iter().flatten().map(|&l| math::ln(l)).collect();
        let mut out = Matrix::zeros(comp.rows(), self.n_states());
        let mut buf = Vec::new();
        for t in 0..comp.rows() {
            let row = comp.row(t);
            for d in 0..self.n_states() {
                buf.clear();
                buf.extend((offsets[d]..offsets[d + 1]).map(|c| log_w[c] + row[c]));
                out[(t, d)] = math::log_sum_exp(&buf);
            }
        }
        out
    }

    pub fn log_likelihood(&self, data: &Dataset) -> Result<f64> {
        let em = self.state_log_emissions(data)?;
        hmm::log_likelihood(&em, &self.trans, &self.stationary()?)
    }

    fn check_dim(&self, data: &Dataset) -> Result<()> {
        if data.dim() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                found: data.dim(),
            });
        }
        Ok(())
    }
}

/// Free-function form of [`MixtureHmm::emission_log_density`].
pub fn emission_log_density(model: &MixtureHmm, x: &[f64], state: usize) -> f64 {
    model.emission_log_density(x, state)
}

/// The chain over components `Z` with `ω_(dk),(d'k') = π_dd' λ_d'k'`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentChain {
    pub trans: TransitionMatrix,
    pub components: Vec<GaussianParams>,
    /// Stationary law of the component chain, `q_d λ_dk`.
    pub init: Vec<f64>,
}

pub fn expand_to_component_chain(model: &MixtureHmm) -> Result<ComponentChain> {
    let q = model.stationary()?;
    let k = model.total_components();
    let offsets = model.component_offsets();
    let flat_w: Vec<f64> = model.weights.iter().flatten().copied().collect();
    let mut omega = Matrix::zeros(k, k);
    for d in 0..model.n_states() {
        for from in offsets[d]..offsets[d + 1] {
            let row = omega.row_mut(from);
            for d2 in 0..model.n_states() {
                let p = model.trans.get(d, d2);
                for to in offsets[d2]..offsets[d2 + 1] {
                    row[to] = p * flat_w[to];
                }
            }
        }
    }
    let init = (0..model.n_states())
        .flat_map(|d| model.weights[d].iter().map(move |&l| (d, l)))
        .map(|(d, l)| q[d] * l)
        .collect();
    Ok(ComponentChain {
        trans: TransitionMatrix::from_weights(omega)?,
        components: model.flat_components().cloned().collect(),
        init,
    })
}

/// Posterior over both latent layers.
#[derive(Debug, Clone, PartialEq)]
pub struct FullPosterior {
    pub chain: ChainPosterior,
    /// `δ_tdk = P(Z_t = dk | S_t = d, X)`, columns in flat component order.
    pub delta: Matrix,
    pub offsets: Vec<usize>,
}

impl FullPosterior {
    #[inline]
    pub fn delta(&self, t: usize, state: usize, k: usize) -> f64 {
        self.delta[(t, self.offsets[state] + k)]
    }

    pub fn loglik(&self) -> f64 {
        self.chain.loglik
    }

    /// `E_X[H_{X,S}(Z)] = Σ_t Σ_d τ_td H(δ_td·)`.
    pub fn within_state_entropy(&self) -> f64 {
        within_state_entropy(&self.chain.tau, &self.delta, &self.offsets)
    }
}

pub(crate) fn within_state_entropy(tau: &Matrix, delta: &Matrix, offsets: &[usize]) -> f64 {
    let mut h = 0.0;
    for t in 0..tau.rows() {
        let drow = delta.row(t);
        for (d, &w) in tau.row(t).iter().enumerate() {
            if offsets[d + 1] - offsets[d] < 2 || w <= 0.0 {
                continue;
            }
            let hd: f64 = drow[offsets[d]..offsets[d + 1]].iter().map(|&p| math::neg_plogp(p)).sum();
            h += w * hd;
        }
    }
    h
}

/// Sufficient statistics of one E-step, without the full `η` array.
#[derive(Debug, Clone)]
pub(crate) struct EStats {
    pub tau: Matrix,
    pub eta_sum: Matrix,
    pub delta: Matrix,
    pub loglik: f64,
    pub entropy_s: Option<f64>,
}

pub(crate) fn responsibilities(model: &MixtureHmm, comp: &Matrix, state_em: &Matrix) -> Matrix {
    let offsets = model.component_offsets();
    let log_w: Vec<f64> = model.weights.iter().flatten().map(|&l| math::ln(l)).collect();
    let mut delta = Matrix::zeros(comp.rows(), comp.cols());
    for t in 0..comp.rows() {
        let row = comp.row(t);
        let out = delta.row_mut(t);
        for d in 0..model.n_states() {
            let (lo, hi) = (offsets[d], offsets[d + 1]);
            if hi - lo == 1 {
                out[lo] = 1.0;
                continue;
            }
            let norm = state_em[(t, d)];
            if !norm.is_finite() {
                // no support at this point: fall back to the prior weights
                out[lo..hi].copy_from_slice(&model.weights[d]);
                continue;
            }
            let mut s = 0.0;
            for c in lo..hi {
                out[c] = math::exp(log_w[c] + row[c] - norm);
                s += out[c];
            }
            out[lo..hi].iter_mut().for_each(|v| *v /= s);
        }
    }
    delta
}

pub(crate) fn e_stats(model: &MixtureHmm, data: &Dataset, opts: SmoothOptions) -> Result<(EStats, Option<Vec<f64>>)> {
    let comp = model.component_log_densities(data)?;
    let state_em = model.state_log_emissions_from(&comp);
    let init = model.stationary()?;
    let scaled = ScaledEmissions::from_log(&state_em)?;
    let s = hmm::smooth(&scaled, &model.trans, &init, opts)?;
    let delta = responsibilities(model, &comp, &state_em);
    Ok((
        EStats {
            tau: s.tau,
            eta_sum: s.eta_sum,
            delta,
            loglik: s.loglik,
            entropy_s: s.entropy,
        },
        s.eta,
    ))
}

/// Posterior of `(S, Z)` under the current parameters, with the chain started
/// from its stationary law.
pub fn e_step(model: &MixtureHmm, data: &Dataset) -> Result<FullPosterior> {
    let (stats, eta) = e_stats(
        model,
        data,
        SmoothOptions {
            keep_eta: true,
            entropy: false,
        },
    )?;
    Ok(FullPosterior {
        chain: ChainPosterior {
            tau: stats.tau,
            eta: eta.unwrap_or_default(),
            loglik: stats.loglik,
        },
        delta: stats.delta,
        offsets: model.component_offsets(),
    })
}

/// Parameter update from a full posterior.
pub fn m_step(data: &Dataset, post: &FullPosterior, model: &MixtureHmm) -> Result<MixtureHmm> {
    m_step_with(data, post, model, TransitionModel::Markov)
}

pub fn m_step_with(data: &Dataset, post: &FullPosterior, model: &MixtureHmm, transitions: TransitionModel) -> Result<MixtureHmm> {
    let d = model.n_states();
    let n = post.chain.n_obs();
    if n != data.len() || post.chain.n_states() != d || post.delta.cols() != model.total_components() {
        return Err(Error::Dimension {
            expected: data.len(),
            found: n,
        });
    }
    let mut eta_sum = Matrix::zeros(d, d);
    for t in 0..n.saturating_sub(1) {
        for from in 0..d {
            for (acc, &e) in eta_sum.row_mut(from).iter_mut().zip(post.chain.eta_row(t, from)) {
                *acc += e;
            }
        }
    }
    let stats = EStats {
        tau: post.chain.tau.clone(),
        eta_sum,
        delta: post.delta.clone(),
        loglik: post.chain.loglik,
        entropy_s: None,
    };
    m_step_stats(data, &stats, model, transitions)
}

pub(crate) fn m_step_stats(data: &Dataset, stats: &EStats, model: &MixtureHmm, transitions: TransitionModel) -> Result<MixtureHmm> {
    let d = model.n_states();
    let n = data.len();
    let mass: Vec<f64> = (0..d).map(|s| (0..n).map(|t| stats.tau[(t, s)]).sum()).collect();
    if let Some((state, &m)) = mass.iter().enumerate().find(|(_, &m)| m < EMPTY_STATE_MASS) {
        return Err(Error::EmptyState { state, mass: m });
    }

    let trans = match transitions {
        TransitionModel::Markov => update_markov_transitions(stats, &model.trans)?,
        TransitionModel::Independent => {
            let row: Vec<f64> = mass.iter().map(|m| m / n as f64).collect();
            let rows: Vec<Vec<f64>> = vec![row; d];
            TransitionMatrix::from_weights(Matrix::from_rows(&rows).expect("square"))?
        }
    };

    let offsets = model.component_offsets();
    let floor = data.variance_floor();
    let mut weights = Vec::with_capacity(d);
    let mut components = Vec::with_capacity(d);
    let mut w = vec![0.0; n];
    for s in 0..d {
        let kd = offsets[s + 1] - offsets[s];
        let mut lambdas = Vec::with_capacity(kd);
        let mut gammas = Vec::with_capacity(kd);
        for k in 0..kd {
            let c = offsets[s] + k;
            for (t, wt) in w.iter_mut().enumerate() {
                *wt = stats.tau[(t, s)] * stats.delta[(t, c)];
            }
            let comp_mass: f64 = w.iter().sum();
            lambdas.push((comp_mass / mass[s]).max(f64::MIN_POSITIVE));
            if comp_mass > 0.0 {
                gammas.push(weighted_mle(data.observations(), &w, model.cov_structure, floor)?);
            } else {
                // Underflowed component: keep its parameters.
                gammas.push(model.components[s][k].clone());
            }
        }
        let total: f64 = lambdas.iter().sum();
        lambdas.iter_mut().for_each(|l| *l /= total);
        weights.push(lambdas);
        components.push(gammas);
    }
    MixtureHmm::new(trans, weights, components, model.cov_structure)
}

/// Transition part of the expected complete log-likelihood, including the
/// stationary initial law: `Σ_d τ_1d ln q_d(Π) + Σ_dd' N_dd' ln π_dd'`.
fn transition_objective(trans: &TransitionMatrix, tau0: &[f64], counts: &Matrix) -> f64 {
    let Ok(q) = hmm::stationary_distribution(trans) else {
        return f64::NEG_INFINITY;
    };
    let mut f = 0.0;
    for (&w, &qd) in tau0.iter().zip(&q) {
        if w > 0.0 {
            f += w * math::ln(qd);
        }
    }
    for (&c, &p) in counts.as_slice().iter().zip(trans.as_matrix().as_slice()) {
        if c > 0.0 {
            f += c * math::ln(p);
        }
    }
    f
}

/// Closed-form `π̂_dd' ∝ Σ_t η_tdd'`, accepted only if it does not lower the
/// transition objective (the stationary initial law couples it to `Π`);
/// otherwise the step toward it is halved until it does.
fn update_markov_transitions(stats: &EStats, old: &TransitionMatrix) -> Result<TransitionMatrix> {
    let d = old.n_states();
    if d == 1 {
        return Ok(old.clone());
    }
    let mut cand = stats.eta_sum.clone();
    for i in 0..d {
        let row = cand.row_mut(i);
        let s: f64 = row.iter().sum();
        if s > 0.0 {
            row.iter_mut().for_each(|p| *p = (*p / s).max(TRANSITION_FLOOR));
        } else {
            row.copy_from_slice(old.row(i));
        }
    }
    let candidate = TransitionMatrix::from_weights(cand)?;
    let tau0 = stats.tau.row(0);
    let f_old = transition_objective(old, tau0, &stats.eta_sum);
    let f_new = transition_objective(&candidate, tau0, &stats.eta_sum);
    if f_new >= f_old {
        return Ok(candidate);
    }
    let mut step = 0.5;
    for _ in 0..30 {
        let mut mixed = old.as_matrix().clone();
        for (m, &c) in mixed.as_mut_slice().iter_mut().zip(candidate.as_matrix().as_slice()) {
            *m = (1.0 - step) * *m + step * c;
        }
        let mixed = TransitionMatrix::from_weights(mixed)?;
        if transition_objective(&mixed, tau0, &stats.eta_sum) >= f_old {
            return Ok(mixed);
        }
        step *= 0.5;
    }
    Ok(old.clone())
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::hmm::tests::{random_simplex, random_stochastic};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub fn random_gaussian(rng: &mut impl Rng, q: usize, spread: f64) -> GaussianParams {
        let mean: Vec<f64> = (0..q).map(|_| rng.random_range(-spread..spread)).collect();
        let mut a = Matrix::zeros(q, q);
        a.as_mut_slice().iter_mut().for_each(|v| *v = rng.random_range(-0.8..0.8));
        let mut cov = a.matmul(&a.transpose());
        for i in 0..q {
            cov[(i, i)] += 0.3;
        }
        GaussianParams::new(mean, cov).unwrap()
    }

    pub fn random_model(rng: &mut impl Rng, counts: &[usize], q: usize) -> MixtureHmm {
        let d = counts.len();
        let trans = random_stochastic(rng, d);
        let weights = counts.iter().map(|&k| random_simplex(rng, k)).collect();
        let components = counts
            .iter()
            .map(|&k| (0..k).map(|_| random_gaussian(rng, q, 2.0)).collect())
            .collect();
        MixtureHmm::new(trans, weights, components, CovStructure::Full).unwrap()
    }

    pub fn random_data(rng: &mut impl Rng, n: usize, q: usize, spread: f64) -> Dataset {
        let mut m = Matrix::zeros(n, q);
        m.as_mut_slice().iter_mut().for_each(|v| *v = rng.random_range(-spread..spread));
        Dataset::new(m, "random").unwrap()
    }

    fn point(x: &[f64]) -> Dataset {
        let m = Matrix::from_rows(&[x.to_vec(), x.to_vec()]).unwrap();
        Dataset::new(m, "pt").unwrap()
    }

    fn appendix_component(i: usize) -> GaussianParams {
        let (mean, cov) = match i {
            1 => ([1.0, 5.0], [[0.1, 0.0], [0.0, 1.0]]),
            2 => ([1.0, 5.0], [[1.0, 0.0], [0.0, 0.1]]),
            _ => unreachable!(),
        };
        GaussianParams::new(mean.to_vec(), Matrix::from_rows(&cov).unwrap()).unwrap()
    }

    #[test]
    fn single_component_emission_equals_gaussian() {
        let g = appendix_component(1);
        let m = MixtureHmm::single_component(TransitionMatrix::sticky(1, 1.0).unwrap(), vec![g.clone()], CovStructure::Full).unwrap();
        for x in [[0.0, 0.0], [1.0, 5.0], [3.0, -2.0]] {
            assert_eq!(m.emission_log_density(&x, 0), g.log_density(&x));
        }
    }

    #[test]
    fn identical_parts_mixture() {
        let g = appendix_component(2);
        let m = MixtureHmm::new(
            TransitionMatrix::sticky(1, 1.0).unwrap(),
            vec![vec![0.3, 0.7]],
            vec![vec![g.clone(), g.clone()]],
            CovStructure::Full,
        )
        .unwrap();
        let x = [0.4, 4.0];
        assert!((m.emission_log_density(&x, 0) - g.log_density(&x)).abs() < 1e-14);
    }

    #[test]
    fn two_appendix_components_at_shared_mean() {
        let m = MixtureHmm::new(
            TransitionMatrix::sticky(1, 1.0).unwrap(),
            vec![vec![0.5, 0.5]],
            vec![vec![appendix_component(1), appendix_component(2)]],
            CovStructure::Full,
        )
        .unwrap();
        // Both densities at the mean equal 1/(2π √0.1); frozen with mpmath:
        // ln(0.5·φ1 + 0.5·φ2) = -0.68658451991232264
        assert!((m.emission_log_density(&[1.0, 5.0], 0) + 0.686_584_519_912_322_6).abs() < 1e-13);
        let d = point(&[1.0, 5.0]);
        assert_eq!(m.state_log_emissions(&d).unwrap()[(0, 0)], m.emission_log_density(&[1.0, 5.0], 0));
    }

    #[test]
    fn component_chain_shapes() {
        let g = appendix_component(1);
        let m = MixtureHmm::new(
            TransitionMatrix::sticky(1, 1.0).unwrap(),
            vec![vec![0.4, 0.6]],
            vec![vec![g.clone(), g.clone()]],
            CovStructure::Full,
        )
        .unwrap();
        let chain = expand_to_component_chain(&m).unwrap();
        let expected = Matrix::from_rows(&[[0.4, 0.6], [0.4, 0.6]]).unwrap();
        assert!(chain.trans.as_matrix().max_abs_diff(&expected) < 1e-15);

        let pi = TransitionMatrix::from_rows(&[[0.7, 0.3], [0.2, 0.8]]).unwrap();
        let m = MixtureHmm::single_component(pi.clone(), vec![g.clone(), g], CovStructure::Full).unwrap();
        let chain = expand_to_component_chain(&m).unwrap();
        assert_eq!(chain.trans.as_matrix(), pi.as_matrix());
    }

    #[test]
    fn component_chain_matches_nested_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let m = random_model(&mut rng, &[2, 1], 2);
        let chain = expand_to_component_chain(&m).unwrap();
        // (state, weight) for each flat component
        let flat: Vec<(usize, f64)> = vec![(0, m.weights(0)[0]), (0, m.weights(0)[1]), (1, 1.0)];
        for (i, &(di, _)) in flat.iter().enumerate() {
            let s: f64 = chain.trans.row(i).iter().sum();
            assert!((s - 1.0).abs() < 1e-14);
            for (j, &(dj, lj)) in flat.iter().enumerate() {
                assert!((chain.trans.get(i, j) - m.trans().get(di, dj) * lj).abs() < 1e-15);
            }
        }
        let q = m.stationary().unwrap();
        let q_omega = hmm::stationary_distribution(&chain.trans).unwrap();
        for (a, b) in q_omega.iter().zip(&chain.init) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((chain.init[2] - q[1]).abs() < 1e-15);
    }

    #[test]
    fn single_component_states_have_unit_delta() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = random_model(&mut rng, &[1, 1, 1], 2);
        let data = random_data(&mut rng, 20, 2, 3.0);
        let post = e_step(&m, &data).unwrap();
        assert!(post.delta.as_slice().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn single_state_reduces_to_plain_mixture() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let m = random_model(&mut rng, &[2], 2);
        let data = random_data(&mut rng, 15, 2, 3.0);
        let post = e_step(&m, &data).unwrap();
        for t in 0..15 {
            assert!((post.chain.tau[(t, 0)] - 1.0).abs() < 1e-15);
            let x = data.point(t);
            let a = m.weights(0)[0] * m.components(0)[0].log_density(x).exp();
            let b = m.weights(0)[1] * m.components(0)[1].log_density(x).exp();
            assert!((post.delta(t, 0, 0) - a / (a + b)).abs() < 1e-12);
        }
    }

    #[test]
    fn lumped_chain_loglik_matches_state_chain() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for counts in [vec![2, 1], vec![1, 3, 2], vec![2, 2]] {
            let m = random_model(&mut rng, &counts, 2);
            let data = random_data(&mut rng, 40, 2, 3.0);
            let post = e_step(&m, &data).unwrap();
            let chain = expand_to_component_chain(&m).unwrap();
            let comp = m.component_log_densities(&data).unwrap();
            let lumped = hmm::forward_backward(&comp, &chain.trans, &chain.init).unwrap();
            assert!((lumped.loglik - post.loglik()).abs() < 1e-8);
        }
    }

    #[test]
    fn m_step_supervised_limit_counts_transitions() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let m = random_model(&mut rng, &[1, 1], 2);
        let n = 60;
        let labels: Vec<usize> = (0..n).map(|t| usize::from((t / 7) % 2 == 1 || t % 11 == 0)).collect();
        let data = random_data(&mut rng, n, 2, 3.0);
        let mut tau = Matrix::zeros(n, 2);
        let mut eta = vec![0.0; (n - 1) * 4];
        let mut counts = [[0.0f64; 2]; 2];
        for t in 0..n {
            tau[(t, labels[t])] = 1.0;
            if t + 1 < n {
                eta[(t * 2 + labels[t]) * 2 + labels[t + 1]] = 1.0;
                counts[labels[t]][labels[t + 1]] += 1.0;
            }
        }
        let post = FullPosterior {
            chain: ChainPosterior { tau, eta, loglik: 0.0 },
            delta: Matrix::filled(n, 2, 1.0),
            offsets: vec![0, 1, 2],
        };
        let next = m_step(&data, &post, &m).unwrap();
        for i in 0..2 {
            let s = counts[i][0] + counts[i][1];
            for j in 0..2 {
                assert!((next.trans().get(i, j) - counts[i][j] / s).abs() < 1e-9);
            }
            assert_eq!(next.weights(i), &[1.0]);
        }
    }

    #[test]
    fn m_step_weights_match_direct_ratio() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let m = random_model(&mut rng, &[2, 3], 2);
        let data = random_data(&mut rng, 25, 2, 3.0);
        let post = e_step(&m, &data).unwrap();
        let next = m_step(&data, &post, &m).unwrap();
        for d in 0..2 {
            let denom: f64 = (0..25).map(|t| post.chain.tau[(t, d)]).sum();
            for k in 0..m.component_counts()[d] {
                let num: f64 = (0..25).map(|t| post.chain.tau[(t, d)] * post.delta(t, d, k)).sum();
                assert!((next.weights(d)[k] - num / denom).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn empty_state_is_signalled() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = random_model(&mut rng, &[1, 1], 2);
        let data = random_data(&mut rng, 10, 2, 3.0);
        let mut post = e_step(&m, &data).unwrap();
        for t in 0..10 {
            post.chain.tau[(t, 0)] = 1.0;
            post.chain.tau[(t, 1)] = 0.0;
        }
        assert!(matches!(m_step(&data, &post, &m), Err(Error::EmptyState { state: 1, .. })));
    }

    #[test]
    fn independent_transitions_have_identical_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = random_model(&mut rng, &[1, 2, 1], 2);
        let data = random_data(&mut rng, 30, 2, 3.0);
        let post = e_step(&m, &data).unwrap();
        let next = m_step_with(&data, &post, &m, TransitionModel::Independent).unwrap();
        for d in 1..3 {
            assert_eq!(next.trans().row(d), next.trans().row(0));
        }
        let p0: f64 = (0..30).map(|t| post.chain.tau[(t, 0)]).sum::<f64>() / 30.0;
        assert!((next.trans().get(2, 0) - p0).abs() < 1e-12);
    }

    #[test]
    fn invalid_models_are_rejected() {
        let g = appendix_component(1);
        let t = TransitionMatrix::sticky(1, 1.0).unwrap();
        assert!(MixtureHmm::new(t.clone(), vec![vec![0.5, 0.6]], vec![vec![g.clone(), g.clone()]], CovStructure::Full).is_err());
        assert!(MixtureHmm::new(t.clone(), vec![vec![1.0, 0.0]], vec![vec![g.clone(), g.clone()]], CovStructure::Full).is_err());
        assert!(MixtureHmm::new(t, vec![vec![1.0]], vec![vec![g.clone(), g]], CovStructure::Full).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]

            #[test]
            fn permuting_components_keeps_emission(seed in any::<u64>(), x in [-4.0f64..4.0, -4.0f64..4.0]) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let m = random_model(&mut rng, &[3], 2);
                let perm = [2usize, 0, 1];
                let w: Vec<f64> = perm.iter().map(|&i| m.weights(0)[i]).collect();
                let c: Vec<GaussianParams> = perm.iter().map(|&i| m.components(0)[i].clone()).collect();
                let p = MixtureHmm::new(m.trans().clone(), vec![w], vec![c], CovStructure::Full).unwrap();
                prop_assert!((p.emission_log_density(&x, 0) - m.emission_log_density(&x, 0)).abs() < 1e-12);
            }

            #[test]
            fn normalisations_hold_after_an_iteration(seed in any::<u64>()) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let m = random_model(&mut rng, &[2, 1, 2], 2);
                let data = random_data(&mut rng, 40, 2, 3.0);
                let post = e_step(&m, &data).unwrap();
                let next = m_step(&data, &post, &m).unwrap();
                let post2 = e_step(&next, &data).unwrap();
                for d in 0..3 {
                    let s: f64 = next.weights(d).iter().sum();
                    prop_assert!((s - 1.0).abs() < 1e-12);
                    let r: f64 = next.trans().row(d).iter().sum();
                    prop_assert!((r - 1.0).abs() < 1e-12);
                }
                for t in 0..40 {
                    let s: f64 = post2.chain.tau.row(t).iter().sum();
                    prop_assert!((s - 1.0).abs() < 1e-9);
                    for d in 0..3 {
                        let kd = next.component_counts()[d];
                        let s: f64 = (0..kd).map(|k| post2.delta(t, d, k)).sum();
                        prop_assert!((s - 1.0).abs() < 1e-9);
                    }
                }
                prop_assert!(post2.loglik() >= post.loglik() - 1e-8);
            }
        }
    }
}
