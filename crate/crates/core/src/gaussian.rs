//! Multivariate Gaussian components: log-density evaluation and weighted
//! maximum-likelihood estimation under a full or spherical covariance.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math::{self, Matrix, LN_2PI};

/// Relative variance floor. Covariance eigenvalues are kept at or above
/// `VARIANCE_FLOOR_RATIO` times the data variance scale.
pub const VARIANCE_FLOOR_RATIO: f64 = 1e-6;

/// Covariance parameterisation used when estimating components.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum CovStructure {
    #[default]
    Full,
    /// `σ² I` with a single free variance.
    Spherical,
}

impl CovStructure {
    /// Free parameters of one component (mean plus covariance) in dimension `q`.
    pub fn params_per_component(self, q: usize) -> usize {
        match self {
            CovStructure::Full => q * (q + 3) / 2,
            CovStructure::Spherical => q + 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            CovStructure::Full => "full",
            CovStructure::Spherical => "spherical",
        }
    }
}

impl core::str::FromStr for CovStructure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "full" => Ok(CovStructure::Full),
            "spherical" => Ok(CovStructure::Spherical),
            other => Err(Error::Parameter(format!("unknown covariance structure {other:?}"))),
        }
    }
}

/// A density family usable as a mixture component. Only Gaussians are
/// implemented; the trait marks the extension point.
pub trait ComponentDensity {
    fn dim(&self) -> usize;
    fn log_density(&self, x: &[f64]) -> f64;
}

/// Mean and covariance of a Gaussian, with its Cholesky factor cached.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianParams {
    mean: Vec<f64>,
    cov: Matrix,
    chol: Matrix,
    log_norm: f64,
}

impl GaussianParams {
    /// Validates symmetry and positive-definiteness.
    pub fn new(mean: Vec<f64>, cov: Matrix) -> Result<Self> {
        let q = mean.len();
        if q == 0 {
            return Err(Error::Parameter("empty mean vector".into()));
        }
        if cov.rows() != q || cov.cols() != q {
            return Err(Error::Dimension {
                expected: q,
                found: cov.rows(),
            });
        }
        if mean.iter().chain(cov.as_slice()).any(|v| !v.is_finite()) {
            return Err(Error::Parameter("non-finite Gaussian parameter".into()));
        }
        let scale = cov.as_slice().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if !cov.is_symmetric(1e-12 * scale.max(1.0)) {
            return Err(Error::Parameter("covariance is not symmetric".into()));
        }
        let chol = math::cholesky(&cov)
            .ok_or_else(|| Error::Parameter("covariance is not positive definite".into()))?;
        let log_det: f64 = (0..q).map(|i| 2.0 * math::ln(chol[(i, i)])).sum();
        let log_norm = -0.5 * (q as f64 * LN_2PI + log_det);
        Ok(Self {
            mean,
            cov,
            chol,
            log_norm,
        })
    }

    pub fn spherical(mean: Vec<f64>, variance: f64) -> Result<Self> {
        let q = mean.len();
        Self::new(mean, Matrix::diagonal(&vec![variance; q]))
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn covariance(&self) -> &Matrix {
        &self.cov
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// `ln φ(x; μ, Σ)`.
    pub fn log_density(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.mean.len());
        let mut y: Vec<f64> = x.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        math::forward_substitute(&self.chol, &mut y);
        let maha: f64 = y.iter().map(|v| v * v).sum();
        self.log_norm - 0.5 * maha
    }

    /// Draws one point using a standard-normal source.
    pub fn sample_with(&self, mut standard_normal: impl FnMut() -> f64) -> Vec<f64> {
        let q = self.dim();
        let z: Vec<f64> = (0..q).map(|_| standard_normal()).collect();
        (0..q)
            .map(|i| self.mean[i] + (0..=i).map(|k| self.chol[(i, k)] * z[k]).sum::<f64>())
            .collect()
    }
}

impl ComponentDensity for GaussianParams {
    fn dim(&self) -> usize {
        self.dim()
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        GaussianParams::log_density(self, x)
    }
}

/// Free-function form of [`GaussianParams::log_density`].
pub fn log_density(x: &[f64], params: &GaussianParams) -> f64 {
    params.log_density(x)
}

/// Weighted maximum-likelihood Gaussian fit.
///
/// The covariance is the weighted scatter about the weighted mean, shaped
/// per `structure` and with every eigenvalue raised to at least `floor`.
/// For the spherical structure the single variance is the average of the
/// per-coordinate weighted variances.
pub fn weighted_mle(
    points: &Matrix,
    weights: &[f64],
    structure: CovStructure,
    floor: f64,
) -> Result<GaussianParams> {
    if weights.len() != points.rows() {
        return Err(Error::Dimension {
            expected: points.rows(),
            found: weights.len(),
        });
    }
    if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
        return Err(Error::Parameter("weights must be finite and non-negative".into()));
    }
    let q = points.cols();
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::DegenerateResponsibility);
    }

    let mut mean = vec![0.0; q];
    for (x, &w) in points.iter_rows().zip(weights) {
        if w == 0.0 {
            continue;
        }
        for (m, &v) in mean.iter_mut().zip(x) {
            *m += w * v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= total);

    let cov = match structure {
        CovStructure::Full => {
            let mut s = Matrix::zeros(q, q);
            for (x, &w) in points.iter_rows().zip(weights) {
                if w == 0.0 {
                    continue;
                }
                for i in 0..q {
                    let di = x[i] - mean[i];
                    for j in 0..=i {
                        s[(i, j)] += w * di * (x[j] - mean[j]);
                    }
                }
            }
            for i in 0..q {
                for j in 0..=i {
                    let v = s[(i, j)] / total;
                    s[(i, j)] = v;
                    s[(j, i)] = v;
                }
            }
            math::clamp_eigenvalues(&s, floor)
        }
        CovStructure::Spherical => {
            let mut acc = 0.0;
            for (x, &w) in points.iter_rows().zip(weights) {
                if w == 0.0 {
                    continue;
                }
                let d2: f64 = x.iter().zip(&mean).map(|(a, m)| (a - m) * (a - m)).sum();
                acc += w * d2;
            }
            let var = (acc / total / q as f64).max(floor);
            Matrix::diagonal(&vec![var; q])
        }
    };
    GaussianParams::new(mean, cov)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn eye2() -> Matrix {
        Matrix::identity(2)
    }

    #[test]
    fn standard_normal_at_mode() {
        let g = GaussianParams::new(vec![0.0, 0.0], eye2()).unwrap();
        assert!((log_density(&[0.0, 0.0], &g) + 1.837_877_066_409_345).abs() < 1e-12);
        assert!((log_density(&[1.0, 0.0], &g) + 1.837_877_066_409_345 + 0.5).abs() < 1e-12);
    }

    #[test]
    fn component_one_at_its_mean_matches_closed_form() {
        // Direct evaluation: det = 0.1, quadratic form = 0.
        let g = GaussianParams::new(vec![1.0, 5.0], Matrix::diagonal(&[0.1, 1.0])).unwrap();
        let expected = -core::f64::consts::LN_2 - core::f64::consts::PI.ln() - 0.5 * 0.1f64.ln();
        assert!((g.log_density(&[1.0, 5.0]) - expected).abs() < 1e-13);
        // frozen: -ln(2π) - ½ ln 0.1 = -0.68658451991232264 (mpmath, 30 digits)
        assert!((g.log_density(&[1.0, 5.0]) + 0.686_584_519_912_322_6).abs() < 1e-12);
    }

    #[test]
    fn correlated_density_matches_explicit_inverse() {
        let cov = Matrix::from_rows(&[[0.4, 0.5], [0.5, 1.0]]).unwrap();
        let g = GaussianParams::new(vec![0.0, 0.0], cov).unwrap();
        let x = [0.3, -0.2];
        let det: f64 = 0.4 * 1.0 - 0.25;
        let inv = [[1.0 / det, -0.5 / det], [-0.5 / det, 0.4 / det]];
        let maha = x[0] * (inv[0][0] * x[0] + inv[0][1] * x[1]) + x[1] * (inv[1][0] * x[0] + inv[1][1] * x[1]);
        let expected = -LN_2PI - 0.5 * det.ln() - 0.5 * maha;
        assert!((g.log_density(&x) - expected).abs() < 1e-12);
    }

    #[test]
    fn rejects_invalid_covariances() {
        let bad = Matrix::from_rows(&[[1.0, 2.0], [2.0, 1.0]]).unwrap();
        assert!(matches!(GaussianParams::new(vec![0.0, 0.0], bad), Err(Error::Parameter(_))));
        let asym = Matrix::from_rows(&[[1.0, 0.1], [0.0, 1.0]]).unwrap();
        assert!(GaussianParams::new(vec![0.0, 0.0], asym).is_err());
        assert!(GaussianParams::new(vec![0.0], eye2()).is_err());
    }

    #[test]
    fn density_integrates_to_one() {
        let cov = Matrix::from_rows(&[[0.4, 0.5], [0.5, 1.0]]).unwrap();
        let g = GaussianParams::new(vec![0.5, -0.5], cov).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (lo, hi) = (-8.0, 8.0);
        let n = 400_000;
        let mut acc = 0.0;
        for _ in 0..n {
            let x = [rng.random_range(lo..hi), rng.random_range(lo..hi)];
            acc += math::exp(g.log_density(&x));
        }
        let integral = acc / n as f64 * (hi - lo) * (hi - lo);
        assert!((integral - 1.0).abs() < 0.02, "integral {integral}");
    }

    #[test]
    fn two_point_full_fit() {
        let pts = Matrix::from_rows(&[[0.0, 0.0], [2.0, 0.0]]).unwrap();
        let g = weighted_mle(&pts, &[1.0, 1.0], CovStructure::Full, 0.0).unwrap_err();
        // Zero variance in the second coordinate needs a positive floor.
        assert!(matches!(g, Error::Parameter(_)));
        let g = weighted_mle(&pts, &[1.0, 1.0], CovStructure::Full, 1e-6).unwrap();
        assert_eq!(g.mean(), &[1.0, 0.0]);
        let c = g.covariance();
        assert!((c[(0, 0)] - 1.0).abs() < 1e-12);
        assert!(c[(0, 1)].abs() < 1e-12 && c[(1, 0)].abs() < 1e-12);
        assert!((c[(1, 1)] - 1e-6).abs() < 1e-15);
    }

    #[test]
    fn single_point_hits_floor() {
        let pts = Matrix::from_rows(&[[3.0, -1.0]]).unwrap();
        let g = weighted_mle(&pts, &[1.0], CovStructure::Full, 1e-4).unwrap();
        assert_eq!(g.mean(), &[3.0, -1.0]);
        assert!(g.covariance().max_abs_diff(&Matrix::diagonal(&[1e-4, 1e-4])) < 1e-18);
        let g = weighted_mle(&pts, &[1.0], CovStructure::Spherical, 1e-4).unwrap();
        assert_eq!(g.covariance(), &Matrix::diagonal(&[1e-4, 1e-4]));
    }

    #[test]
    fn zero_weights_are_degenerate() {
        let pts = Matrix::from_rows(&[[0.0, 0.0], [1.0, 1.0]]).unwrap();
        assert_eq!(
            weighted_mle(&pts, &[0.0, 0.0], CovStructure::Full, 1e-6).unwrap_err(),
            Error::DegenerateResponsibility
        );
    }

    #[test]
    fn recovers_component_five_mean() {
        let cov = Matrix::from_rows(&[[0.4, 0.5], [0.5, 1.0]]).unwrap();
        let truth = GaussianParams::new(vec![0.0, 0.0], cov).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rows: Vec<Vec<f64>> = (0..100)
            .map(|_| truth.sample_with(|| StandardNormal.sample(&mut rng)))
            .collect();
        let pts = Matrix::from_rows(&rows).unwrap();
        let fit = weighted_mle(&pts, &[1.0; 100], CovStructure::Full, 1e-9).unwrap();
        // Closed-form sample mean as the oracle, then a 3-standard-error window.
        for j in 0..2 {
            let sample_mean: f64 = rows.iter().map(|r| r[j]).sum::<f64>() / 100.0;
            assert!((fit.mean()[j] - sample_mean).abs() < 1e-12);
            let se = (truth.covariance()[(j, j)] / 100.0).sqrt();
            assert!(fit.mean()[j].abs() < 3.0 * se, "coord {j}: {}", fit.mean()[j]);
        }
    }

    #[test]
    fn spherical_pools_coordinate_variances() {
        let pts = Matrix::from_rows(&[[0.0, 0.0], [2.0, 0.0], [0.0, 4.0], [2.0, 4.0]]).unwrap();
        let g = weighted_mle(&pts, &[1.0; 4], CovStructure::Spherical, 1e-9).unwrap();
        // per-coordinate variances 1 and 4
        assert_eq!(g.covariance(), &Matrix::diagonal(&[2.5, 2.5]));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn cloud() -> impl Strategy<Value = Vec<[f64; 2]>> {
            prop::collection::vec([-10.0f64..10.0, -10.0f64..10.0], 2..40)
        }

        proptest! {
            #[test]
            fn uniform_weights_match_sample_moments(rows in cloud()) {
                let pts = Matrix::from_rows(&rows).unwrap();
                let n = rows.len() as f64;
                let fit = weighted_mle(&pts, &vec![1.0; rows.len()], CovStructure::Full, 1e-12).unwrap();
                let mx = rows.iter().map(|r| r[0]).sum::<f64>() / n;
                let my = rows.iter().map(|r| r[1]).sum::<f64>() / n;
                prop_assert!((fit.mean()[0] - mx).abs() < 1e-12 && (fit.mean()[1] - my).abs() < 1e-12);
                let sxy = rows.iter().map(|r| (r[0] - mx) * (r[1] - my)).sum::<f64>() / n;
                let sxx = rows.iter().map(|r| (r[0] - mx).powi(2)).sum::<f64>() / n;
                let syy = rows.iter().map(|r| (r[1] - my).powi(2)).sum::<f64>() / n;
                let c = fit.covariance();
                // Only compare when no eigenvalue was clamped.
                if sxx * syy - sxy * sxy > 1e-6 {
                    prop_assert!((c[(0, 0)] - sxx).abs() < 1e-9);
                    prop_assert!((c[(1, 1)] - syy).abs() < 1e-9);
                    prop_assert!((c[(0, 1)] - sxy).abs() < 1e-9);
                }
            }

            #[test]
            fn floor_is_never_violated(rows in cloud(), w in prop::collection::vec(0.0f64..1.0, 40), floor in 1e-6f64..1.0) {
                let pts = Matrix::from_rows(&rows).unwrap();
                let mut weights = w[..rows.len()].to_vec();
                weights[0] += 0.1;
                for s in [CovStructure::Full, CovStructure::Spherical] {
                    let fit = weighted_mle(&pts, &weights, s, floor).unwrap();
                    let (vals, _) = math::symmetric_eigen(fit.covariance());
                    prop_assert!(vals.iter().all(|&v| v >= floor * (1.0 - 1e-9)));
                    if s == CovStructure::Spherical {
                        let c = fit.covariance();
                        prop_assert_eq!(c[(0, 1)], 0.0);
                        prop_assert_eq!(c[(0, 0)], c[(1, 1)]);
                    }
                }
            }
        }
    }
}
