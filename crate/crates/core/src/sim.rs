//! Synthetic sequences with known hidden states.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::gaussian::{CovStructure, GaussianParams};
use crate::hmm::{self, TransitionMatrix};
use crate::math::{self, Matrix};
use crate::model::MixtureHmm;

/// Emission law of one hidden state.
#[derive(Debug, Clone, PartialEq)]
pub enum Emitter {
    Mixture {
        weights: Vec<f64>,
        components: Vec<GaussianParams>,
    },
    /// Uniform on `[-half, half]^2`.
    UniformSquare { half: f64 },
    /// Uniform on `[-outer, outer]^2` minus `[-inner, inner]^2`.
    UniformAnnulus { inner: f64, outer: f64 },
}

impl Emitter {
    pub fn n_components(&self) -> usize {
        match self {
            Emitter::Mixture { weights, .. } => weights.len(),
            _ => 1,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Emitter::Mixture { components, .. } => components[0].dim(),
            _ => 2,
        }
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        let sup = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        match self {
            Emitter::Mixture { weights, components } => {
                let terms: Vec<f64> = weights
                    .iter()
                    .zip(components)
                    .map(|(w, g)| math::ln(*w) + g.log_density(x))
                    .collect();
                math::log_sum_exp(&terms)
            }
            Emitter::UniformSquare { half } => {
                if sup <= *half {
                    -math::ln(4.0 * half * half)
                } else {
                    f64::NEG_INFINITY
                }
            }
            Emitter::UniformAnnulus { inner, outer } => {
                if sup > *inner && sup <= *outer {
                    -math::ln(4.0 * (outer * outer - inner * inner))
                } else {
                    f64::NEG_INFINITY
                }
            }
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            Emitter::Mixture { weights, components } => {
                if weights.is_empty() || weights.len() != components.len() {
                    return Err(Error::Parameter("mixture emitter needs one weight per component".into()));
                }
                let q = components[0].dim();
                if components.iter().any(|c| c.dim() != q) {
                    return Err(Error::Parameter("mixture components differ in dimension".into()));
                }
                if weights.iter().any(|w| !(*w > 0.0)) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
                    return Err(Error::Parameter("mixture weights must be positive and sum to 1".into()));
                }
            }
            Emitter::UniformSquare { half } => {
                if !(*half > 0.0) {
                    return Err(Error::Parameter("square half-side must be positive".into()));
                }
            }
            Emitter::UniformAnnulus { inner, outer } => {
                if !(*inner >= 0.0 && outer > inner) {
                    return Err(Error::Parameter("annulus needs 0 <= inner < outer".into()));
                }
            }
        }
        Ok(())
    }

    /// Draws `(component, point)`.
    fn sample(&self, picker: Option<&WeightedIndex<f64>>, rng: &mut impl Rng) -> (usize, Vec<f64>) {
        match self {
            Emitter::Mixture { components, .. } => {
                let k = picker.map_or(0, |p| p.sample(rng));
                let x = components[k].sample_with(|| StandardNormal.sample(rng));
                (k, x)
            }
            Emitter::UniformSquare { half } => (0, vec![rng.random_range(-half..=*half), rng.random_range(-half..=*half)]),
            Emitter::UniformAnnulus { inner, outer } => loop {
                let x = [rng.random_range(-outer..=*outer), rng.random_range(-outer..=*outer)];
                if x[0].abs().max(x[1].abs()) > *inner {
                    break (0, x.to_vec());
                }
            },
        }
    }
}

/// Generative description of a synthetic scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct SimSpec {
    pub name: String,
    pub trans: TransitionMatrix,
    pub emitters: Vec<Emitter>,
    pub n: usize,
    pub seed: u64,
}

impl SimSpec {
    pub fn new(name: impl Into<String>, trans: TransitionMatrix, emitters: Vec<Emitter>) -> Result<Self> {
        if emitters.len() != trans.n_states() {
            return Err(Error::Dimension {
                expected: trans.n_states(),
                found: emitters.len(),
            });
        }
        for e in &emitters {
            e.validate()?;
        }
        if emitters.iter().any(|e| e.dim() != emitters[0].dim()) {
            return Err(Error::Parameter("emitters differ in dimension".into()));
        }
        hmm::stationary_distribution(&trans)?;
        Ok(Self {
            name: name.into(),
            trans,
            emitters,
            n: 800,
            seed: 0,
        })
    }

    pub fn with_n(self, n: usize) -> Self {
        Self { n, ..self }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }

    pub fn n_states(&self) -> usize {
        self.emitters.len()
    }

    /// First global component index of every state, plus the total.
    pub fn component_offsets(&self) -> Vec<usize> {
        let mut off = vec![0];
        for e in &self.emitters {
            off.push(off.last().copied().unwrap_or(0) + e.n_components());
        }
        off
    }

    /// The generative model as a [`MixtureHmm`], when every emitter is Gaussian.
    pub fn true_model(&self) -> Option<MixtureHmm> {
        let mut weights = Vec::new();
        let mut comps = Vec::new();
        for e in &self.emitters {
            match e {
                Emitter::Mixture { weights: w, components } => {
                    weights.push(w.clone());
                    comps.push(components.clone());
                }
                _ => return None,
            }
        }
        MixtureHmm::new(self.trans.clone(), weights, comps, CovStructure::Full).ok()
    }

    /// `ln ψ_d(x_t)` for every observation and state.
    pub fn state_log_emissions(&self, data: &Dataset) -> Matrix {
        let mut out = Matrix::zeros(data.len(), self.n_states());
        for t in 0..data.len() {
            for (d, e) in self.emitters.iter().enumerate() {
                out[(t, d)] = e.log_density(data.point(t));
            }
        }
        out
    }
}

/// Four states, six components: states 0 and 1 each mix two Gaussians with a
/// common mean, states 2 and 3 are single Gaussians. `a` is the probability
/// of staying in a state, `b` scales every covariance.
pub fn benchmark_design(a: f64, b: f64) -> Result<SimSpec> {
    if !(a > 0.0 && a < 1.0) || !(b > 0.0 && b.is_finite()) {
        return Err(Error::Parameter(format!("benchmark design needs 0 < a < 1 and b > 0, got a={a}, b={b}")));
    }
    let base: [([f64; 2], [[f64; 2]; 2]); 6] = [
        ([1.0, 5.0], [[0.1, 0.0], [0.0, 1.0]]),
        ([1.0, 5.0], [[1.0, 0.0], [0.0, 0.1]]),
        ([8.0, 0.0], [[0.1, 0.0], [0.0, 1.0]]),
        ([8.0, 0.0], [[1.0, 0.0], [0.0, 0.1]]),
        ([0.0, 0.0], [[0.4, 0.5], [0.5, 1.0]]),
        ([8.0, 5.0], [[0.3, -0.4], [-0.4, 0.7]]),
    ];
    let comp = |i: usize| -> Result<GaussianParams> {
        let (mu, s) = base[i];
        let mut cov = Matrix::from_rows(&s).expect("2x2");
        cov.scale(b);
        GaussianParams::new(mu.to_vec(), cov)
    };
    let pair = |i: usize, j: usize| -> Result<Emitter> {
        Ok(Emitter::Mixture {
            weights: vec![0.5, 0.5],
            components: vec![comp(i)?, comp(j)?],
        })
    };
    let single = |i: usize| -> Result<Emitter> {
        Ok(Emitter::Mixture {
            weights: vec![1.0],
            components: vec![comp(i)?],
        })
    };
    let off = (1.0 - a) / 3.0;
    let mut t = Matrix::filled(4, 4, off);
    for d in 0..4 {
        t[(d, d)] = a;
    }
    SimSpec::new(
        format!("benchmark(a={a},b={b})"),
        TransitionMatrix::from_weights(t)?,
        vec![pair(0, 1)?, pair(2, 3)?, single(4)?, single(5)?],
    )
}

/// Two nested uniform clusters: state 0 on `[-1/2, 1/2]^2`, state 1 on the
/// square ring of width 0.2 whose inner edge lies `gap` outside state 0.
pub fn nested_squares_design(gap: f64) -> Result<SimSpec> {
    if !(gap > 0.0 && gap <= 0.2) {
        return Err(Error::Parameter(format!("gap must lie in (0, 0.2], got {gap}")));
    }
    let inner = 0.5 + gap;
    SimSpec::new(
        format!("nested(gap={gap})"),
        TransitionMatrix::from_rows(&[[2.0 / 3.0, 1.0 / 3.0], [1.0 / 3.0, 2.0 / 3.0]])?,
        vec![
            Emitter::UniformSquare { half: 0.5 },
            Emitter::UniformAnnulus {
                inner,
                outer: inner + 0.2,
            },
        ],
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    /// Carries the true states and global component indices as labels.
    pub data: Dataset,
    pub states: Vec<usize>,
    pub components: Vec<usize>,
    /// Smoothing posterior of the states under the generating model.
    pub true_tau: Matrix,
}

/// Draws a sequence: `S_1` from the stationary law, then the chain, the
/// within-state component and the point. Deterministic in `spec.seed`.
pub fn simulate(spec: &SimSpec) -> Result<SimResult> {
    if spec.n < 2 {
        return Err(Error::Size { needed: 2, found: spec.n });
    }
    let q = hmm::stationary_distribution(&spec.trans)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let weighted = |w: &[f64]| WeightedIndex::new(w.iter().copied()).map_err(|e| Error::Parameter(format!("{e}")));
    let initial = weighted(&q)?;
    let rows = (0..spec.n_states())
        .map(|d| weighted(spec.trans.row(d)))
        .collect::<Result<Vec<_>>>()?;
    let pickers = spec
        .emitters
        .iter()
        .map(|e| match e {
            Emitter::Mixture { weights, .. } if weights.len() > 1 => weighted(weights).map(Some),
            _ => Ok(None),
        })
        .collect::<Result<Vec<_>>>()?;
    let offsets = spec.component_offsets();

    let dim = spec.emitters[0].dim();
    let mut obs = Vec::with_capacity(spec.n * dim);
    let mut states = Vec::with_capacity(spec.n);
    let mut components = Vec::with_capacity(spec.n);
    let mut s = initial.sample(&mut rng);
    for t in 0..spec.n {
        if t > 0 {
            s = rows[s].sample(&mut rng);
        }
        let (k, x) = spec.emitters[s].sample(pickers[s].as_ref(), &mut rng);
        states.push(s);
        components.push(offsets[s] + k);
        obs.extend_from_slice(&x);
    }
    let data = Dataset::new(Matrix::from_vec(spec.n, dim, obs).expect("shape"), spec.name.clone())?
        .with_truth(Some(states.clone()), Some(components.clone()))?;
    let post = hmm::forward_backward(&spec.state_log_emissions(&data), &spec.trans, &q)?;
    Ok(SimResult {
        data,
        states,
        components,
        true_tau: post.tau,
    })
}
