//! Finite-state HMM machinery: scaled forward–backward smoothing, exact
//! posterior entropy of the hidden chain, stationary laws and decoding.
//!
//! Emissions enter as an `n × D` matrix of log-densities. Internally each row
//! is shifted by its maximum and exponentiated, so the recursions run on
//! bounded linear-space quantities with per-step normalisers `c_t`; the
//! log-likelihood is `Σ_t (ln c_t + shift_t)`. Entries of `-inf` are allowed
//! as long as every row keeps at least one finite value.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math::{self, Matrix};

const ROW_SUM_TOL: f64 = 1e-12;

/// Row-stochastic `D × D` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix(Matrix);

impl TransitionMatrix {
    pub fn new(m: Matrix) -> Result<Self> {
        if m.rows() != m.cols() || m.rows() == 0 {
            return Err(Error::Parameter(format!(
                "transition matrix must be square and non-empty, got {}x{}",
                m.rows(),
                m.cols()
            )));
        }
        for (i, row) in m.iter_rows().enumerate() {
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::Parameter(format!("row {i} has entries outside [0, 1]")));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > ROW_SUM_TOL * row.len() as f64 {
                return Err(Error::Parameter(format!("row {i} sums to {s}")));
            }
        }
        Ok(Self(m))
    }

    /// Normalises each row of a non-negative matrix before validating.
    pub fn from_weights(mut m: Matrix) -> Result<Self> {
        for i in 0..m.rows() {
            let row = m.row_mut(i);
            let s: f64 = row.iter().sum();
            if !(s > 0.0) || !s.is_finite() {
                return Err(Error::Parameter(format!("row {i} has no positive mass")));
            }
            row.iter_mut().for_each(|p| *p /= s);
        }
        Self::new(m)
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let m = Matrix::from_rows(rows).ok_or_else(|| Error::Parameter("ragged transition rows".into()))?;
        Self::new(m)
    }

    /// `diag` on the diagonal, the remainder spread evenly off the diagonal.
    pub fn sticky(states: usize, diag: f64) -> Result<Self> {
        if states == 1 {
            return Self::new(Matrix::identity(1));
        }
        let off = (1.0 - diag) / (states - 1) as f64;
        let mut m = Matrix::filled(states, states, off);
        for i in 0..states {
            m[(i, i)] = diag;
        }
        Self::new(m)
    }

    pub fn n_states(&self) -> usize {
        self.0.rows()
    }

    #[inline]
    pub fn get(&self, from: usize, to: usize) -> f64 {
        self.0[(from, to)]
    }

    pub fn row(&self, from: usize) -> &[f64] {
        self.0.row(from)
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }
}

/// Smoothing posteriors of a hidden chain.
///
/// `eta` is stored flat as `(n - 1) × D × D`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainPosterior {
    pub tau: Matrix,
    pub eta: Vec<f64>,
    pub loglik: f64,
}

impl ChainPosterior {
    pub fn n_obs(&self) -> usize {
        self.tau.rows()
    }

    pub fn n_states(&self) -> usize {
        self.tau.cols()
    }

    #[inline]
    pub fn eta(&self, t: usize, from: usize, to: usize) -> f64 {
        let d = self.n_states();
        self.eta[(t * d + from) * d + to]
    }

    /// `P(S_t = from, S_{t+1} = ·)` as a slice.
    pub fn eta_row(&self, t: usize, from: usize) -> &[f64] {
        let d = self.n_states();
        &self.eta[(t * d + from) * d..(t * d + from + 1) * d]
    }
}

/// Emission likelihoods shifted per observation: `probs[t][d] = exp(log_b - shift_t)`.
#[derive(Debug, Clone)]
pub(crate) struct ScaledEmissions {
    pub probs: Matrix,
    pub shifts: Vec<f64>,
}

impl ScaledEmissions {
    pub fn from_log(log_emission: &Matrix) -> Result<Self> {
        let (n, d) = (log_emission.rows(), log_emission.cols());
        let mut probs = Matrix::zeros(n, d);
        let mut shifts = Vec::with_capacity(n);
        for t in 0..n {
            let row = log_emission.row(t);
            if row.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
                return Err(Error::Parameter(format!("invalid log-emission at observation {t}")));
            }
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if !max.is_finite() {
                return Err(Error::Parameter(format!(
                    "observation {t} has zero likelihood under every state"
                )));
            }
            for (p, &v) in probs.row_mut(t).iter_mut().zip(row) {
                *p = math::exp(v - max);
            }
            shifts.push(max);
        }
        Ok(Self { probs, shifts })
    }
}

/// Per-step normalised forward variables and their normalisers.
pub(crate) struct Forward {
    pub alpha: Matrix,
    pub scale: Vec<f64>,
}

fn check_shapes(em: &ScaledEmissions, trans: &TransitionMatrix, init: &[f64]) -> Result<()> {
    let d = trans.n_states();
    if em.probs.cols() != d {
        return Err(Error::Dimension {
            expected: d,
            found: em.probs.cols(),
        });
    }
    if init.len() != d {
        return Err(Error::Dimension {
            expected: d,
            found: init.len(),
        });
    }
    if em.probs.rows() == 0 {
        return Err(Error::Size { needed: 1, found: 0 });
    }
    Ok(())
}

#[inline]
fn propagate(prev: &[f64], trans: &TransitionMatrix, out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    for (from, &a) in prev.iter().enumerate() {
        if a == 0.0 {
            continue;
        }
        for (o, &p) in out.iter_mut().zip(trans.row(from)) {
            *o += a * p;
        }
    }
}

fn zero_likelihood(t: usize) -> Error {
    Error::Parameter(format!("observation {t} is impossible under the model"))
}

pub(crate) fn forward_scaled(em: &ScaledEmissions, trans: &TransitionMatrix, init: &[f64]) -> Result<Forward> {
    check_shapes(em, trans, init)?;
    let (n, d) = (em.probs.rows(), trans.n_states());
    let mut alpha = Matrix::zeros(n, d);
    let mut scale = Vec::with_capacity(n);
    let mut pred = vec![0.0; d];
    for t in 0..n {
        if t == 0 {
            pred.copy_from_slice(init);
        } else {
            propagate(alpha.row(t - 1), trans, &mut pred);
        }
        let b = em.probs.row(t);
        let row = alpha.row_mut(t);
        let mut c = 0.0;
        for ((a, &p), &e) in row.iter_mut().zip(&pred).zip(b) {
            *a = p * e;
            c += *a;
        }
        if !(c > 0.0) {
            return Err(zero_likelihood(t));
        }
        row.iter_mut().for_each(|a| *a /= c);
        scale.push(c);
    }
    Ok(Forward { alpha, scale })
}

/// Observed log-likelihood by the forward sweep only, in `O(D)` memory.
pub(crate) fn loglik_scaled(em: &ScaledEmissions, trans: &TransitionMatrix, init: &[f64]) -> Result<f64> {
    check_shapes(em, trans, init)?;
    let d = trans.n_states();
    let mut alpha = init.to_vec();
    let mut pred = vec![0.0; d];
    let mut ll = 0.0;
    for t in 0..em.probs.rows() {
        if t > 0 {
            propagate(&alpha, trans, &mut pred);
        } else {
            pred.copy_from_slice(init);
        }
        let mut c = 0.0;
        for ((a, &p), &e) in alpha.iter_mut().zip(&pred).zip(em.probs.row(t)) {
            *a = p * e;
            c += *a;
        }
        if !(c > 0.0) {
            return Err(zero_likelihood(t));
        }
        alpha.iter_mut().for_each(|a| *a /= c);
        ll += math::ln(c) + em.shifts[t];
    }
    Ok(ll)
}

/// Output of a full smoothing pass.
#[derive(Debug, Clone)]
pub(crate) struct Smoothed {
    pub tau: Matrix,
    /// `Σ_t η_t`, the expected transition counts.
    pub eta_sum: Matrix,
    /// Full `η`, only when requested.
    pub eta: Option<Vec<f64>>,
    /// `H(S | X)`, only when requested.
    pub entropy: Option<f64>,
    pub loglik: f64,
}

#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct SmoothOptions {
    pub keep_eta: bool,
    pub entropy: bool,
}

pub(crate) fn smooth(
    em: &ScaledEmissions,
    trans: &TransitionMatrix,
    init: &[f64],
    opts: SmoothOptions,
) -> Result<Smoothed> {
    let Forward { alpha, scale } = forward_scaled(em, trans, init)?;
    let (n, d) = (alpha.rows(), trans.n_states());
    let loglik = scale
        .iter()
        .zip(&em.shifts)
        .map(|(&c, &s)| math::ln(c) + s)
        .sum();

    let log_trans: Option<Matrix> = opts.entropy.then(|| {
        let mut m = trans.as_matrix().clone();
        m.as_mut_slice().iter_mut().for_each(|p| *p = if *p > 0.0 { math::ln(*p) } else { f64::NEG_INFINITY });
        m
    });

    let mut tau = Matrix::zeros(n, d);
    let mut eta_sum = Matrix::zeros(d, d);
    let mut eta = opts.keep_eta.then(|| vec![0.0; n.saturating_sub(1) * d * d]);
    let mut entropy = 0.0;

    // beta_next holds β̂_{t+1}; w[d'] = b_{t+1}(d') β̂_{t+1}(d') / c_{t+1}.
    let mut beta_next = vec![1.0; d];
    let mut beta = vec![0.0; d];
    let mut w = vec![0.0; d];
    let mut log_w = vec![0.0; d];

    tau.row_mut(n - 1).copy_from_slice(alpha.row(n - 1));
    for t in (0..n - 1).rev() {
        let c_next = scale[t + 1];
        for (k, wk) in w.iter_mut().enumerate() {
            *wk = em.probs[(t + 1, k)] * beta_next[k] / c_next;
        }
        for (from, b) in beta.iter_mut().enumerate() {
            *b = trans.row(from).iter().zip(&w).map(|(p, wk)| p * wk).sum();
        }
        if opts.entropy {
            for (lw, &wk) in log_w.iter_mut().zip(&w) {
                *lw = if wk > 0.0 { math::ln(wk) } else { f64::NEG_INFINITY };
            }
        }
        let alpha_t = alpha.row(t);
        let mut tau_row_sum = 0.0;
        for from in 0..d {
            let a = alpha_t[from];
            tau[(t, from)] = a * beta[from];
            tau_row_sum += tau[(t, from)];
            let trow = trans.row(from);
            let sum_row = eta_sum.row_mut(from);
            for to in 0..d {
                let e = a * trow[to] * w[to];
                sum_row[to] += e;
                if let Some(full) = eta.as_mut() {
                    full[(t * d + from) * d + to] = e;
                }
            }
            if let Some(lt) = &log_trans {
                // Conditional law of S_{t+1} given S_t = from and X.
                let tau_td = a * beta[from];
                if tau_td > 0.0 && beta[from] > 0.0 {
                    let log_norm = math::ln(beta[from]);
                    let lrow = lt.row(from);
                    let mut h = 0.0;
                    for to in 0..d {
                        let p = trow[to] * w[to] / beta[from];
                        if p > 0.0 {
                            h -= p * (lrow[to] + log_w[to] - log_norm);
                        }
                    }
                    entropy += tau_td * h;
                }
            }
        }
        // Guard against drift in long sequences.
        if tau_row_sum > 0.0 && (tau_row_sum - 1.0).abs() > 1e-13 {
            tau.row_mut(t).iter_mut().for_each(|v| *v /= tau_row_sum);
        }
        core::mem::swap(&mut beta, &mut beta_next);
    }
    if opts.entropy {
        entropy += tau.row(0).iter().map(|&p| math::neg_plogp(p)).sum::<f64>();
    }
    Ok(Smoothed {
        tau,
        eta_sum,
        eta,
        entropy: opts.entropy.then_some(entropy.max(0.0)),
        loglik,
    })
}

/// Scaled forward–backward smoothing.
///
/// Returns `τ_td = P(S_t = d | X)`, `η_tdd' = P(S_t = d, S_{t+1} = d' | X)`
/// and `ln P(X)`.
pub fn forward_backward(log_emission: &Matrix, trans: &TransitionMatrix, init: &[f64]) -> Result<ChainPosterior> {
    check_probability_vector(init)?;
    let em = ScaledEmissions::from_log(log_emission)?;
    let s = smooth(
        &em,
        trans,
        init,
        SmoothOptions {
            keep_eta: true,
            entropy: false,
        },
    )?;
    Ok(ChainPosterior {
        tau: s.tau,
        eta: s.eta.unwrap_or_default(),
        loglik: s.loglik,
    })
}

/// `ln P(X)` from the forward sweep alone.
pub fn log_likelihood(log_emission: &Matrix, trans: &TransitionMatrix, init: &[f64]) -> Result<f64> {
    check_probability_vector(init)?;
    let em = ScaledEmissions::from_log(log_emission)?;
    loglik_scaled(&em, trans, init)
}

fn check_probability_vector(p: &[f64]) -> Result<()> {
    let s: f64 = p.iter().sum();
    if p.iter().any(|v| !(0.0..=1.0).contains(v)) || (s - 1.0).abs() > 1e-9 {
        return Err(Error::Parameter("initial law is not a probability vector".into()));
    }
    Ok(())
}

/// Whether some power of the chain is entrywise positive (irreducible and
/// aperiodic). Uses Wielandt's bound `(D - 1)² + 1` on the exponent.
pub fn is_primitive(trans: &TransitionMatrix) -> bool {
    let d = trans.n_states();
    let mut reach: Vec<bool> = trans.as_matrix().as_slice().iter().map(|&p| p > 0.0).collect();
    let bound = (d - 1) * (d - 1) + 1;
    let mut power = 1usize;
    while power < bound {
        let mut next = vec![false; d * d];
        for i in 0..d {
            for k in 0..d {
                if reach[i * d + k] {
                    for j in 0..d {
                        next[i * d + j] |= reach[k * d + j];
                    }
                }
            }
        }
        reach = next;
        power *= 2;
    }
    reach.iter().all(|&b| b)
}

/// Stationary law `q` with `q Π = q`, `Σ q = 1`.
pub fn stationary_distribution(trans: &TransitionMatrix) -> Result<Vec<f64>> {
    let d = trans.n_states();
    if d == 1 {
        return Ok(vec![1.0]);
    }
    if !is_primitive(trans) {
        return Err(Error::Structure);
    }
    // (Πᵀ - I) q = 0 with the last row replaced by Σ q = 1.
    let mut a = trans.as_matrix().transpose();
    for i in 0..d {
        a[(i, i)] -= 1.0;
    }
    for j in 0..d {
        a[(d - 1, j)] = 1.0;
    }
    let mut rhs = vec![0.0; d];
    rhs[d - 1] = 1.0;
    let mut q = math::solve(&a, &rhs).ok_or(Error::Structure)?;
    q.iter_mut().for_each(|v| *v = v.max(0.0));
    let s: f64 = q.iter().sum();
    q.iter_mut().for_each(|v| *v /= s);
    Ok(q)
}

/// MAP state per observation; ties go to the lowest index.
pub fn map_classify(tau: &Matrix) -> Vec<usize> {
    tau.iter_rows().map(math::argmax).collect()
}

/// Exact conditional entropy `H(S | X)` of the hidden chain.
///
/// The posterior of `S` given `X` is itself Markov, so
/// `H = H(S_1 | X) + Σ_t Σ_d τ_td H(S_{t+1} | S_t = d, X)`.
pub fn posterior_entropy(post: &ChainPosterior) -> f64 {
    let (n, d) = (post.n_obs(), post.n_states());
    let mut h: f64 = post.tau.row(0).iter().map(|&p| math::neg_plogp(p)).sum();
    for t in 0..n.saturating_sub(1) {
        for from in 0..d {
            let tau_td = post.tau[(t, from)];
            if tau_td <= 0.0 {
                continue;
            }
            let row = post.eta_row(t, from);
            let mass: f64 = row.iter().sum();
            if mass <= 0.0 {
                continue;
            }
            let hc: f64 = row.iter().map(|&e| math::neg_plogp(e / mass)).sum();
            h += tau_td * hc;
        }
    }
    h.max(0.0)
}

/// Most probable state path (log-domain Viterbi); ties go to the lowest index.
pub fn viterbi(log_emission: &Matrix, trans: &TransitionMatrix, init: &[f64]) -> Result<Vec<usize>> {
    let (n, d) = (log_emission.rows(), trans.n_states());
    if log_emission.cols() != d || init.len() != d {
        return Err(Error::Dimension {
            expected: d,
            found: log_emission.cols(),
        });
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let ln0 = |p: f64| if p > 0.0 { math::ln(p) } else { f64::NEG_INFINITY };
    let mut log_trans = trans.as_matrix().clone();
    log_trans.as_mut_slice().iter_mut().for_each(|p| *p = ln0(*p));
    let mut score: Vec<f64> = (0..d).map(|k| ln0(init[k]) + log_emission[(0, k)]).collect();
    let mut back = vec![0usize; n * d];
    let mut next = vec![0.0; d];
    for t in 1..n {
        for to in 0..d {
            let mut best = 0;
            let mut best_v = f64::NEG_INFINITY;
            for from in 0..d {
                let v = score[from] + log_trans[(from, to)];
                if v > best_v {
                    best_v = v;
                    best = from;
                }
            }
            next[to] = best_v + log_emission[(t, to)];
            back[t * d + to] = best;
        }
        core::mem::swap(&mut score, &mut next);
    }
    let mut path = vec![0; n];
    path[n - 1] = math::argmax(&score);
    for t in (1..n).rev() {
        path[t - 1] = back[t * d + path[t]];
    }
    Ok(path)
}
