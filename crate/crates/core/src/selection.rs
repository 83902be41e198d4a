//! Penalised-likelihood criteria for the number of clusters.
//!
//! With `ν` free parameters and `n` observations:
//!
//! * `BIC   = ln P(X) - ν/2 ln n`
//! * `ICL_S = BIC - H_X(S)`
//! * `ICL   = BIC - H_X(S, Z) = ICL_S - E_X[H_{X,S}(Z)]`
//!
//! `ν` counts `D(D-1)` transition entries, `K - D` mixing weights and the
//! Gaussian parameters. The initial law is tied to the stationary law of the
//! chain and costs nothing.

use alloc::format;
use alloc::vec::Vec;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::hmm::SmoothOptions;
use crate::math;
use crate::merge::MergePath;
use crate::model::{e_stats, within_state_entropy, MixtureHmm};

/// Number of free parameters of `model`.
pub fn count_free_parameters(model: &MixtureHmm) -> usize {
    let d = model.n_states();
    let k = model.total_components();
    d * (d - 1) + (k - d) + k * model.cov_structure().params_per_component(model.dim())
}

/// Penalised log-likelihoods of one fitted model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Criteria {
    pub clusters: usize,
    pub loglik: f64,
    pub nu: usize,
    pub bic: f64,
    pub icl: f64,
    pub icl_s: f64,
    pub entropy_s: f64,
    pub entropy_z_given_s: f64,
}

impl Criteria {
    pub fn from_parts(clusters: usize, nu: usize, n: usize, loglik: f64, entropy_s: f64, entropy_z_given_s: f64) -> Self {
        let bic = loglik - 0.5 * nu as f64 * math::ln(n as f64);
        let icl_s = bic - entropy_s;
        Self {
            clusters,
            loglik,
            nu,
            bic,
            icl_s,
            icl: icl_s - entropy_z_given_s,
            entropy_s,
            entropy_z_given_s,
        }
    }

    /// Runs one E-step of `model` on `data`.
    pub fn evaluate(model: &MixtureHmm, data: &Dataset) -> Result<Self> {
        let (stats, _) = e_stats(model, data, SmoothOptions { keep_eta: false, entropy: true })?;
        let h_z = within_state_entropy(&stats.tau, &stats.delta, &model.component_offsets());
        Ok(Self::from_parts(
            model.n_states(),
            count_free_parameters(model),
            data.len(),
            stats.loglik,
            stats.entropy_s.unwrap_or(0.0),
            h_z,
        ))
    }

    pub fn get(&self, which: SelectionCriterion) -> f64 {
        match which {
            SelectionCriterion::Bic => self.bic,
            SelectionCriterion::Icl => self.icl,
            SelectionCriterion::IclS => self.icl_s,
        }
    }

    /// `H_X(S, Z)`.
    pub fn joint_entropy(&self) -> f64 {
        self.entropy_s + self.entropy_z_given_s
    }
}

pub fn bic(model: &MixtureHmm, data: &Dataset) -> Result<f64> {
    let ll = model.log_likelihood(data)?;
    Ok(ll - 0.5 * count_free_parameters(model) as f64 * math::ln(data.len() as f64))
}

pub fn icl(model: &MixtureHmm, data: &Dataset) -> Result<f64> {
    Ok(Criteria::evaluate(model, data)?.icl)
}

pub fn icl_s(model: &MixtureHmm, data: &Dataset) -> Result<f64> {
    Ok(Criteria::evaluate(model, data)?.icl_s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum SelectionCriterion {
    Bic,
    Icl,
    #[default]
    IclS,
}

impl SelectionCriterion {
    pub const ALL: [SelectionCriterion; 3] = [SelectionCriterion::Bic, SelectionCriterion::Icl, SelectionCriterion::IclS];

    pub fn as_str(self) -> &'static str {
        match self {
            SelectionCriterion::Bic => "BIC",
            SelectionCriterion::Icl => "ICL",
            SelectionCriterion::IclS => "ICL_S",
        }
    }
}

impl core::str::FromStr for SelectionCriterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().replace(['-', ' '], "_").as_str() {
            "BIC" => Ok(SelectionCriterion::Bic),
            "ICL" => Ok(SelectionCriterion::Icl),
            "ICL_S" | "ICLS" => Ok(SelectionCriterion::IclS),
            other => Err(Error::Parameter(format!("unknown selection criterion {other:?}"))),
        }
    }
}

/// Criteria at every level of a merge path, in path order (largest `G` first).
#[derive(Debug, Clone, PartialEq)]
pub struct CriteriaReport {
    pub records: Vec<Criteria>,
}

impl CriteriaReport {
    /// Uses the entropies stored on the path, which belong to the refined models.
    pub fn from_path(path: &MergePath, n: usize) -> Self {
        let records = path
            .steps
            .iter()
            .map(|s| Criteria::from_parts(s.clusters, count_free_parameters(&s.model), n, s.loglik, s.entropy_s, s.entropy_z_given_s))
            .collect();
        Self { records }
    }

    /// Index of the record maximising `which`; ties go to fewer clusters.
    pub fn best_index(&self, which: SelectionCriterion) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (i, r) in self.records.iter().enumerate() {
            best = match best {
                None => Some(i),
                Some(b) => {
                    let (v, bv) = (r.get(which), self.records[b].get(which));
                    if v > bv || (v == bv && r.clusters < self.records[b].clusters) {
                        Some(i)
                    } else {
                        Some(b)
                    }
                }
            };
        }
        best
    }

    pub fn select(&self, which: SelectionCriterion) -> Option<usize> {
        self.best_index(which).map(|i| self.records[i].clusters)
    }
}

/// Number of clusters chosen by `which` along `path`, with the full report.
pub fn select_by(path: &MergePath, data: &Dataset, which: SelectionCriterion) -> Result<(usize, CriteriaReport)> {
    let report = CriteriaReport::from_path(path, data.len());
    let d = report
        .select(which)
        .ok_or_else(|| Error::Parameter("empty merge path".into()))?;
    Ok((d, report))
}

/// `argmax_G ICL_S(G)` along the path.
pub fn select_clusters(path: &MergePath, data: &Dataset) -> Result<(usize, CriteriaReport)> {
    select_by(path, data, SelectionCriterion::IclS)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::{weighted_mle, CovStructure, GaussianParams};
    use crate::hmm::tests::enumerate;
    use crate::hmm::TransitionMatrix;
    use crate::math::Matrix;
    use crate::merge::{best_pair, criterion_value, hierarchical_merge, merge_pair, MergeCriterion, MergeOptions};
    use crate::model::expand_to_component_chain;
    use crate::model::tests::{random_data, random_model};
    use alloc::vec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn iso(mean: [f64; 2]) -> GaussianParams {
        GaussianParams::spherical(mean.to_vec(), 1.0).unwrap()
    }

    #[test]
    fn parameter_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(count_free_parameters(&random_model(&mut rng, &[1], 2)), 5);
        assert_eq!(count_free_parameters(&random_model(&mut rng, &[2, 2, 1, 1], 2)), 44);
        let t = TransitionMatrix::sticky(2, 0.5).unwrap();
        let m = MixtureHmm::single_component(t, vec![iso([0.0, 0.0]), iso([1.0, 1.0])], CovStructure::Spherical).unwrap();
        assert_eq!(count_free_parameters(&m), 8);
    }

    #[test]
    fn parameter_count_grows_with_states_at_fixed_k() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let layouts: [&[usize]; 6] = [&[6], &[3, 3], &[2, 2, 2], &[2, 2, 1, 1], &[2, 1, 1, 1, 1], &[1; 6]];
        let nus: Vec<usize> = layouts.iter().map(|c| count_free_parameters(&random_model(&mut rng, c, 2))).collect();
        assert!(nus.windows(2).all(|w| w[1] > w[0]), "{nus:?}");
    }

    #[test]
    fn bic_arithmetic() {
        let c1 = Criteria::from_parts(1, 5, 1, -3.0, 0.0, 0.0);
        assert_eq!(c1.bic, -3.0);
        let n = 7; // any n: difference scales with ln n
        let a = Criteria::from_parts(1, 5, n, -3.0, 0.0, 0.0);
        let b = Criteria::from_parts(1, 7, n, -3.0, 0.0, 0.0);
        assert!((a.bic - b.bic - math::ln(n as f64)).abs() < 1e-12);
    }

    #[test]
    fn single_gaussian_bic_is_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let rows: Vec<[f64; 2]> = (0..100)
            .map(|_| [StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng)])
            .collect();
        let data = Dataset::new(Matrix::from_rows(&rows).unwrap(), "x").unwrap();
        let g = weighted_mle(data.observations(), &vec![1.0; 100], CovStructure::Full, 0.0).unwrap();
        let c = g.covariance();
        let det = c[(0, 0)] * c[(1, 1)] - c[(0, 1)] * c[(1, 0)];
        // MLE log-likelihood: -n/2 (Q ln 2π + ln|Σ| + Q)
        let ll = -50.0 * (2.0 * math::LN_2PI + math::ln(det) + 2.0);
        let m = MixtureHmm::single_component(TransitionMatrix::sticky(1, 1.0).unwrap(), vec![g], CovStructure::Full).unwrap();
        assert!((bic(&m, &data).unwrap() - (ll - 2.5 * math::ln(100.0))).abs() < 1e-9);
    }

    #[test]
    fn icl_joint_entropy_matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for counts in [vec![2, 1], vec![1, 2, 1]] {
            let m = random_model(&mut rng, &counts, 2);
            let data = random_data(&mut rng, 5, 2, 2.0);
            let chain = expand_to_component_chain(&m).unwrap();
            let brute = enumerate(&m.component_log_densities(&data).unwrap(), &chain.trans, &chain.init);
            let c = Criteria::evaluate(&m, &data).unwrap();
            assert!((c.joint_entropy() - brute.entropy).abs() < 1e-9);
            assert!((c.icl - (c.bic - brute.entropy)).abs() < 1e-9);
        }
    }

    #[test]
    fn single_state_icl_subtracts_responsibility_entropy() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = random_model(&mut rng, &[2], 2);
        let data = random_data(&mut rng, 30, 2, 2.0);
        let c = Criteria::evaluate(&m, &data).unwrap();
        let comp = m.component_log_densities(&data).unwrap();
        let mut h = 0.0;
        for t in 0..data.len() {
            let l: Vec<f64> = (0..2).map(|k| math::ln(m.weights(0)[k]) + comp[(t, k)]).collect();
            let z = math::log_sum_exp(&l);
            h += l.iter().map(|v| math::neg_plogp(math::exp(v - z))).sum::<f64>();
        }
        assert!(c.entropy_s.abs() < 1e-12);
        assert!((c.icl - (c.bic - h)).abs() < 1e-9);
    }

    #[test]
    fn single_component_states_have_icl_equal_icl_s() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = random_model(&mut rng, &[1, 1, 1], 2);
        let data = random_data(&mut rng, 40, 2, 3.0);
        let c = Criteria::evaluate(&m, &data).unwrap();
        assert_eq!(c.icl, c.icl_s);
    }

    #[test]
    fn one_hot_posteriors_collapse_every_criterion_to_bic() {
        let t = TransitionMatrix::from_rows(&[[0.9, 0.1], [0.1, 0.9]]).unwrap();
        let m = MixtureHmm::single_component(t, vec![iso([0.0, 0.0]), iso([400.0, 0.0])], CovStructure::Full).unwrap();
        let rows: Vec<[f64; 2]> = (0..8).map(|i| if i % 3 == 0 { [400.0, 0.1] } else { [0.2, 0.0] }).collect();
        let data = Dataset::new(Matrix::from_rows(&rows).unwrap(), "x").unwrap();
        let c = Criteria::evaluate(&m, &data).unwrap();
        assert!((c.icl - c.bic).abs() < 1e-9 && (c.icl_s - c.bic).abs() < 1e-9);
    }

    #[test]
    fn criteria_ordering_on_fitted_paths() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..5 {
            let m = random_model(&mut rng, &[1, 1, 1, 1], 2);
            let data = random_data(&mut rng, 60, 2, 3.0);
            let path = hierarchical_merge(m, &data, &MergeOptions::default()).unwrap();
            let (_, report) = select_clusters(&path, &data).unwrap();
            for (r, s) in report.records.iter().zip(&path.steps) {
                let fresh = Criteria::evaluate(&s.model, &data).unwrap();
                assert!(r.icl <= r.icl_s && r.icl_s <= r.bic);
                assert!((r.bic - r.icl_s - fresh.entropy_s).abs() < 1e-6);
                assert!((r.icl_s - r.icl - fresh.entropy_z_given_s).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn ties_go_to_fewer_clusters() {
        let rec = |g| Criteria::from_parts(g, 0, 10, -1.0, 0.0, 0.0);
        let report = CriteriaReport {
            records: vec![rec(3), rec(2), rec(1)],
        };
        assert_eq!(report.select(SelectionCriterion::IclS), Some(1));
        assert_eq!(CriteriaReport { records: vec![] }.select(SelectionCriterion::Bic), None);
    }

    #[test]
    fn path_of_one_selects_its_model() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let m = random_model(&mut rng, &[2], 2);
        let data = random_data(&mut rng, 20, 2, 2.0);
        let path = hierarchical_merge(m, &data, &MergeOptions::default()).unwrap();
        assert_eq!(select_clusters(&path, &data).unwrap().0, 1);
    }

    #[test]
    fn merge_scores_agree_with_penalised_criteria() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..5 {
            let m = random_model(&mut rng, &[1, 2, 1, 1], 2);
            let data = random_data(&mut rng, 40, 2, 3.0);
            for (kind, which) in [
                (MergeCriterion::X, SelectionCriterion::Bic),
                (MergeCriterion::XS, SelectionCriterion::IclS),
                (MergeCriterion::XZ, SelectionCriterion::Icl),
            ] {
                let fast = best_pair(&m, &data, kind).unwrap();
                let mut best = (0, 0, f64::NEG_INFINITY);
                for k in 0..4 {
                    for l in k + 1..4 {
                        let merged = merge_pair(&m, k, l).unwrap();
                        let v = Criteria::evaluate(&merged, &data).unwrap().get(which);
                        if v > best.2 {
                            best = (k, l, v);
                        }
                        let penalty = 0.5 * count_free_parameters(&merged) as f64 * math::ln(40.0);
                        let grad = criterion_value(&merged, &data, kind).unwrap();
                        assert!((grad - penalty - v).abs() < 1e-6);
                    }
                }
                assert_eq!((fast.k, fast.l), (best.0, best.1), "{kind:?}");
            }
        }
    }

    #[test]
    fn parse_names() {
        for w in SelectionCriterion::ALL {
            assert_eq!(w.as_str().parse::<SelectionCriterion>().unwrap(), w);
        }
        assert!("AIC".parse::<SelectionCriterion>().is_err());
    }
}
