//! Agreement between estimated and true clusterings, up to relabelling.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math::{self, Matrix};

/// Largest cluster count for which [`mse`] tries every permutation.
pub const EXHAUSTIVE_LIMIT: usize = 6;

/// Minimum-cost perfect matching on a square cost matrix.
///
/// Returns `assign` with row `i` matched to column `assign[i]`.
pub fn hungarian(cost: &Matrix) -> Vec<usize> {
    let n = cost.rows();
    assert_eq!(n, cost.cols(), "cost matrix must be square");
    if n == 0 {
        return Vec::new();
    }
    // Potentials formulation, 1-based with a sentinel column 0.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1, j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0; n];
    for j in 1..=n {
        assign[p[j] - 1] = j - 1;
    }
    assign
}

/// Calls `f` on every permutation of `0..n` (Heap's algorithm).
fn for_each_permutation(n: usize, mut f: impl FnMut(&[usize])) {
    let mut perm: Vec<usize> = (0..n).collect();
    let mut c = vec![0usize; n];
    f(&perm);
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            f(&perm);
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
}

fn padded(m: &Matrix, width: usize) -> Matrix {
    let mut out = Matrix::zeros(m.rows(), width);
    for t in 0..m.rows() {
        out.row_mut(t)[..m.cols()].copy_from_slice(m.row(t));
    }
    out
}

/// `(1/n) Σ_t ||τ̂_t - τ_t||_2` with the columns of `tau_hat` matched to those
/// of `true_tau` by the best permutation.
///
/// If the column counts differ, the narrower matrix is padded with zero
/// columns. Up to [`EXHAUSTIVE_LIMIT`] columns every permutation is tried;
/// above that the matching minimises the summed squared differences.
pub fn mse(tau_hat: &Matrix, true_tau: &Matrix) -> Result<f64> {
    let n = tau_hat.rows();
    if n != true_tau.rows() {
        return Err(Error::Dimension {
            expected: true_tau.rows(),
            found: n,
        });
    }
    if n == 0 {
        return Err(Error::Size { needed: 1, found: 0 });
    }
    let d = tau_hat.cols().max(true_tau.cols());
    let (a, b) = (padded(tau_hat, d), padded(true_tau, d));
    let stat = |perm: &[usize]| -> f64 {
        let mut total = 0.0;
        for t in 0..n {
            let (ra, rb) = (a.row(t), b.row(t));
            let sq: f64 = perm.iter().enumerate().map(|(j, &i)| (ra[i] - rb[j]) * (ra[i] - rb[j])).sum();
            total += math::sqrt(sq);
        }
        total / n as f64
    };
    if d <= EXHAUSTIVE_LIMIT {
        let mut best = f64::INFINITY;
        for_each_permutation(d, |perm| best = best.min(stat(perm)));
        Ok(best)
    } else {
        // cost[j][i]: true column j against estimated column i
        let mut cost = Matrix::zeros(d, d);
        for t in 0..n {
            let (ra, rb) = (a.row(t), b.row(t));
            for j in 0..d {
                for i in 0..d {
                    cost[(j, i)] += (ra[i] - rb[j]) * (ra[i] - rb[j]);
                }
            }
        }
        Ok(stat(&hungarian(&cost)))
    }
}

/// Fraction of positions where the labels agree, maximised over relabellings
/// of `labels_hat`.
pub fn correct_rate(labels_hat: &[usize], truth: &[usize]) -> Result<f64> {
    if labels_hat.len() != truth.len() {
        return Err(Error::Dimension {
            expected: truth.len(),
            found: labels_hat.len(),
        });
    }
    if truth.is_empty() {
        return Err(Error::Size { needed: 1, found: 0 });
    }
    let width = labels_hat.iter().chain(truth).max().map_or(0, |m| m + 1);
    let mut overlap = Matrix::zeros(width, width);
    for (&h, &t) in labels_hat.iter().zip(truth) {
        overlap[(h, t)] += 1.0;
    }
    let mut cost = overlap.clone();
    cost.scale(-1.0);
    let assign = hungarian(&cost);
    let hits: f64 = assign.iter().enumerate().map(|(h, &t)| overlap[(h, t)]).sum();
    Ok(hits / truth.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hmm::tests::random_simplex;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tau(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Matrix {
        let rows: Vec<Vec<f64>> = (0..n).map(|_| random_simplex(rng, d)).collect();
        Matrix::from_rows(&rows).unwrap()
    }

    fn permute_cols(m: &Matrix, perm: &[usize]) -> Matrix {
        let mut out = Matrix::zeros(m.rows(), m.cols());
        for t in 0..m.rows() {
            for (j, &p) in perm.iter().enumerate() {
                out[(t, j)] = m[(t, p)];
            }
        }
        out
    }

    #[test]
    fn hungarian_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for n in 1..=6 {
            for _ in 0..20 {
                let data: Vec<f64> = (0..n * n).map(|_| rng.random_range(-5.0..5.0)).collect();
                let cost = Matrix::from_vec(n, n, data).unwrap();
                let assign = hungarian(&cost);
                let got: f64 = assign.iter().enumerate().map(|(i, &j)| cost[(i, j)]).sum();
                let mut best = f64::INFINITY;
                for_each_permutation(n, |p| best = best.min(p.iter().enumerate().map(|(i, &j)| cost[(i, j)]).sum()));
                assert!((got - best).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn permutations_are_complete() {
        let mut seen = Vec::new();
        for_each_permutation(4, |p| seen.push(p.to_vec()));
        seen.sort();
        seen.dedup();
        assert_eq!(seen.len(), 24);
    }

    #[test]
    fn mse_zero_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let tau = random_tau(&mut rng, 50, 3);
        assert_eq!(mse(&tau, &tau).unwrap(), 0.0);
        assert_eq!(mse(&permute_cols(&tau, &[2, 0, 1]), &tau).unwrap(), 0.0);
    }

    #[test]
    fn mse_handmade() {
        let a = Matrix::from_rows(&[[0.9, 0.1], [0.2, 0.8], [0.6, 0.4]]).unwrap();
        let b = Matrix::from_rows(&[[0.0, 1.0], [1.0, 0.0], [0.5, 0.5]]).unwrap();
        let identity = (libm::sqrt(2.0 * 0.81) + libm::sqrt(2.0 * 0.64) + libm::sqrt(2.0 * 0.01)) / 3.0;
        let swapped = (libm::sqrt(2.0 * 0.01) + libm::sqrt(2.0 * 0.04) + libm::sqrt(2.0 * 0.01)) / 3.0;
        assert!((mse(&a, &b).unwrap() - identity.min(swapped)).abs() < 1e-14);
        assert!(mse(&a, &Matrix::zeros(2, 2)).is_err());
    }

    #[test]
    fn mse_pads_missing_columns() {
        let a = Matrix::from_rows(&[[1.0], [1.0]]).unwrap();
        let b = Matrix::from_rows(&[[0.0, 1.0], [1.0, 0.0]]).unwrap();
        assert!((mse(&a, &b).unwrap() - libm::sqrt(2.0) / 2.0).abs() < 1e-14);
    }

    #[test]
    fn mse_large_d_uses_matching() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let tau = random_tau(&mut rng, 40, 8);
        let perm = [3, 7, 0, 1, 6, 2, 5, 4];
        assert!(mse(&permute_cols(&tau, &perm), &tau).unwrap() < 1e-15);
    }

    #[test]
    fn rate_cases() {
        let truth = [0, 0, 1, 1, 2];
        assert_eq!(correct_rate(&truth, &truth).unwrap(), 1.0);
        assert_eq!(correct_rate(&[1, 0, 1, 0], &[0, 1, 0, 1]).unwrap(), 1.0);
        assert_eq!(correct_rate(&[0, 0, 0, 0, 0], &truth).unwrap(), 0.4);
        assert!(correct_rate(&[0], &truth).is_err());
    }

    #[test]
    fn random_labels_score_near_chance() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let truth: Vec<usize> = (0..10_000).map(|_| rng.random_range(0..4)).collect();
        let guess: Vec<usize> = (0..10_000).map(|_| rng.random_range(0..4)).collect();
        let r = correct_rate(&guess, &truth).unwrap();
        assert!((r - 0.25).abs() < 0.02, "{r}");
    }

    proptest! {
        #[test]
        fn mse_invariant_under_joint_permutation(seed in any::<u64>(), d in 2usize..=5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_tau(&mut rng, 20, d);
            let b = random_tau(&mut rng, 20, d);
            let mut perm: Vec<usize> = (0..d).collect();
            perm.rotate_left(1);
            let base = mse(&a, &b).unwrap();
            let moved = mse(&permute_cols(&a, &perm), &permute_cols(&b, &perm)).unwrap();
            prop_assert!((base - moved).abs() < 1e-12);
        }

        #[test]
        fn rate_is_a_probability(labels in proptest::collection::vec((0usize..4, 0usize..3), 1..60)) {
            let (h, t): (Vec<usize>, Vec<usize>) = labels.into_iter().unzip();
            let r = correct_rate(&h, &t).unwrap();
            prop_assert!((0.0..=1.0).contains(&r));
        }
    }
}
