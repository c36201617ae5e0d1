//! Brute-force ground truth for small designs: enumerates the per-block
//! randomization distribution and computes exact means, variances,
//! covariances, and estimator expectations.
//!
//! This module must stay independent of the closed-form machinery it is
//! used to verify: it never calls into `variance` or `estimators`, and
//! derives every moment from direct table lookups over the enumerated
//! assignments. Cross-block moments are combined analytically through
//! block independence, so the cross-block assignment product is never
//! enumerated.

use crate::design::{Contrast, PotentialOutcomeTable};
use crate::error::Result;
use crate::matrix::SquareMatrix;
use crate::numeric::KahanSum;
use crate::randomizer::{enumerate_block_assignments, BlockAssignment};

/// Exact randomization moments of the observed outcomes of one block.
#[derive(Debug, Clone)]
pub struct BlockMoments {
    /// E{Y^obs(p, q)} in treatment order.
    pub mean_obs: Vec<f64>,
    /// cov{Y^obs(t1), Y^obs(t2)} as a PQ x PQ matrix.
    pub cov_obs: SquareMatrix,
    /// Number of per-block assignments enumerated (`P! * Q!`).
    pub assignment_count: usize,
}

/// Exact randomization moments of the contrast estimator over a whole
/// design.
#[derive(Debug, Clone)]
pub struct ExactMoments {
    /// E{Y^obs} per block, treatment order within block.
    pub mean_obs: Vec<Vec<f64>>,
    /// Per-block observed covariance matrices.
    pub cov_obs: Vec<SquareMatrix>,
    /// E(tau_hat_b) per block.
    pub mean_tau_blocks: Vec<f64>,
    /// E(tau_hat).
    pub mean_tau_hat: f64,
    /// var(tau_hat).
    pub var_tau_hat: f64,
    /// E{var0_hat}, defined only for designs with at least two blocks.
    pub mean_var0: Option<f64>,
    /// Per-block assignments enumerated.
    pub assignment_count: usize,
}

/// Observed value of treatment `(p, q)` in block `b` under a single-block
/// assignment, by direct table lookup.
#[inline]
fn observed(
    table: &PotentialOutcomeTable,
    b: usize,
    ba: &BlockAssignment,
    p: usize,
    q: usize,
) -> f64 {
    table.outcome(b, ba.row_perm[p], ba.col_perm[q], p, q)
}

/// Exact mean and covariance of the observed outcomes of block `b`,
/// averaged over all equiprobable per-block assignments.
///
/// Integer-valued tables take an exact integer-accumulation path with a
/// single final division; all other tables use two-pass centered
/// compensated summation.
pub fn exact_block_moments(table: &PotentialOutcomeTable, b: usize) -> Result<BlockMoments> {
    let dims = table.dims();
    dims.check_block(b)?;
    let assignments = enumerate_block_assignments(dims)?;
    let n = assignments.len();
    let t = dims.treatments();

    // Observed value per (assignment, treatment).
    let mut values = vec![0.0f64; n * t];
    for (a_idx, ba) in assignments.iter().enumerate() {
        for p in 0..dims.row_levels() {
            for q in 0..dims.col_levels() {
                values[a_idx * t + dims.treatment_index(p, q)] = observed(table, b, ba, p, q);
            }
        }
    }

    let (mean_obs, cov_obs) = if table.is_integral() {
        integer_moments(&values, n, t)
    } else {
        float_moments(&values, n, t)
    };

    Ok(BlockMoments {
        mean_obs,
        cov_obs,
        assignment_count: n,
    })
}

fn integer_moments(values: &[f64], n: usize, t: usize) -> (Vec<f64>, SquareMatrix) {
    let ints: Vec<i128> = values.iter().map(|&v| v as i128).collect();
    let mut sums = vec![0i128; t];
    for a in 0..n {
        for ti in 0..t {
            sums[ti] += ints[a * t + ti];
        }
    }
    let mean_obs: Vec<f64> = sums.iter().map(|&s| s as f64 / n as f64).collect();

    let mut cov_obs = SquareMatrix::zeros(t);
    let n_i = n as i128;
    for t1 in 0..t {
        for t2 in t1..t {
            let mut prod = 0i128;
            for a in 0..n {
                prod += ints[a * t + t1] * ints[a * t + t2];
            }
            // cov = (N * sum(xy) - sum(x) * sum(y)) / N^2, exact in i128.
            let numer = n_i * prod - sums[t1] * sums[t2];
            let cov = numer as f64 / (n as f64 * n as f64);
            cov_obs.set(t1, t2, cov);
            cov_obs.set(t2, t1, cov);
        }
    }
    (mean_obs, cov_obs)
}

fn float_moments(values: &[f64], n: usize, t: usize) -> (Vec<f64>, SquareMatrix) {
    let mean_obs: Vec<f64> = (0..t)
        .map(|ti| {
            let mut acc = KahanSum::new();
            for a in 0..n {
                acc.add(values[a * t + ti]);
            }
            acc.total() / n as f64
        })
        .collect();

    let mut cov_obs = SquareMatrix::zeros(t);
    for t1 in 0..t {
        for t2 in t1..t {
            let mut acc = KahanSum::new();
            for a in 0..n {
                acc.add((values[a * t + t1] - mean_obs[t1]) * (values[a * t + t2] - mean_obs[t2]));
            }
            let cov = acc.total() / n as f64;
            cov_obs.set(t1, t2, cov);
            cov_obs.set(t2, t1, cov);
        }
    }
    (mean_obs, cov_obs)
}

/// Exact moments of the contrast estimator: per-block expectations and
/// variances by enumeration, combined across blocks by independence.
pub fn exact_estimator_moments(table: &PotentialOutcomeTable, l: &Contrast) -> Result<ExactMoments> {
    let dims = table.dims();
    l.check_table(&dims)?;
    let assignments = enumerate_block_assignments(dims)?;
    let n = assignments.len();
    let nb = dims.blocks();

    let mut mean_obs = Vec::with_capacity(nb);
    let mut cov_obs = Vec::with_capacity(nb);
    let mut mean_tau_blocks = Vec::with_capacity(nb);
    let mut var_tau_blocks = Vec::with_capacity(nb);

    for b in 0..nb {
        let bm = exact_block_moments(table, b)?;
        mean_obs.push(bm.mean_obs);
        cov_obs.push(bm.cov_obs);

        // Per-assignment block contrast values, then two-pass moments.
        let taus: Vec<f64> = assignments
            .iter()
            .map(|ba| {
                let mut acc = KahanSum::new();
                for p in 0..dims.row_levels() {
                    for q in 0..dims.col_levels() {
                        acc.add(l.coeff(p, q) * observed(table, b, ba, p, q));
                    }
                }
                acc.total()
            })
            .collect();
        let mut macc = KahanSum::new();
        for &v in &taus {
            macc.add(v);
        }
        let mean = macc.total() / n as f64;
        let mut vacc = KahanSum::new();
        for &v in &taus {
            vacc.add((v - mean) * (v - mean));
        }
        mean_tau_blocks.push(mean);
        var_tau_blocks.push(vacc.total() / n as f64);
    }

    let mut acc = KahanSum::new();
    for &m in &mean_tau_blocks {
        acc.add(m);
    }
    let mean_tau_hat = acc.total() / nb as f64;

    let mut vacc = KahanSum::new();
    for &v in &var_tau_blocks {
        vacc.add(v);
    }
    let var_sum = vacc.total();
    let var_tau_hat = var_sum / (nb as f64 * nb as f64);

    // E{var0} = [(1 - 1/B) * sum_b var(tau_b) + sum_b (E tau_b - mean)^2]
    //           / {B (B - 1)},
    // the independence expansion of E{sum (tau_b - tau)^2} regrouped into
    // nonnegative terms.
    let mean_var0 = if nb >= 2 {
        let mut dacc = KahanSum::new();
        for &m in &mean_tau_blocks {
            dacc.add((m - mean_tau_hat) * (m - mean_tau_hat));
        }
        let spread = dacc.total();
        let scaled_var = (1.0 - 1.0 / nb as f64) * var_sum;
        Some((scaled_var + spread) / (nb as f64 * (nb - 1) as f64))
    } else {
        None
    };

    Ok(ExactMoments {
        mean_obs,
        cov_obs,
        mean_tau_blocks,
        mean_tau_hat,
        var_tau_hat,
        mean_var0,
        assignment_count: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::{compute_means, population_contrast, DesignDims};
    use approx::assert_abs_diff_eq;

    fn dims(b: usize, p: usize, q: usize) -> DesignDims {
        DesignDims::new(b, p, q).unwrap()
    }

    #[test]
    fn constant_table_has_constant_mean_zero_cov() {
        let d = dims(1, 2, 3);
        let table = PotentialOutcomeTable::from_fn(d, |_, _, _, _, _| 4.0).unwrap();
        let bm = exact_block_moments(&table, 0).unwrap();
        assert_eq!(bm.assignment_count, 12);
        assert!(bm.mean_obs.iter().all(|&m| m == 4.0));
        assert_eq!(bm.cov_obs.max_abs(), 0.0);
    }

    #[test]
    fn observed_mean_matches_block_mean() {
        // The enumeration average of Y^obs(pq) must equal the block mean
        // of treatment pq: every unit is selected equally often.
        let d = dims(2, 2, 3);
        let table = PotentialOutcomeTable::from_fn(d, |b, r, c, p, q| {
            ((b + 1) * 100 + (r + 2) * (c + 7) + 13 * p + 3 * q * q) as f64
        })
        .unwrap();
        let means = compute_means(&table);
        for b in 0..2 {
            let bm = exact_block_moments(&table, b).unwrap();
            for p in 0..2 {
                for q in 0..3 {
                    assert_eq!(bm.mean_obs[d.treatment_index(p, q)], means.block_mean(b, p, q));
                }
            }
        }
    }

    #[test]
    fn checkerboard_fixture_variance() {
        // Block 1: t1 on the (1,1) and (2,2) units of treatment (1,1),
        // t2 on (1,2) and (2,1); everything else at the midpoint. The
        // observed variance of treatment (1,1) is (t1 - t2)^2 / (PQ).
        let d = dims(1, 2, 2);
        let (t1, t2) = (2.0, 0.0);
        let mid = 0.5 * (t1 + t2);
        let table = PotentialOutcomeTable::from_fn(d, |_, r, c, p, q| {
            if (p, q) == (0, 0) {
                if r == c {
                    t1
                } else {
                    t2
                }
            } else {
                mid
            }
        })
        .unwrap();
        let bm = exact_block_moments(&table, 0).unwrap();
        assert_eq!(bm.cov_obs.get(0, 0), (t1 - t2) * (t1 - t2) / 4.0);
        // All other entries vanish.
        for t1i in 0..4 {
            for t2i in 0..4 {
                if (t1i, t2i) != (0, 0) {
                    assert_abs_diff_eq!(bm.cov_obs.get(t1i, t2i), 0.0, epsilon = 1e-15);
                }
            }
        }
    }

    #[test]
    fn estimator_mean_is_population_contrast() {
        let d = dims(3, 2, 2);
        let table = PotentialOutcomeTable::from_fn(d, |b, r, c, p, q| {
            (b * 7 + r * 3 + c * 5 + p * 2 + q * 11) as f64 % 13.0
        })
        .unwrap();
        let l = Contrast::new(2, 2, vec![0.5, -0.5, -0.5, 0.5]).unwrap();
        let em = exact_estimator_moments(&table, &l).unwrap();
        let tau = population_contrast(&table, &l).unwrap();
        assert_abs_diff_eq!(em.mean_tau_hat, tau, epsilon = 1e-12);
        assert_eq!(em.assignment_count, 4);
    }

    #[test]
    fn additive_table_has_unbiased_variance_estimator() {
        // Block means differ by a per-block constant only, so E{var0}
        // equals var(tau_hat).
        let d = dims(2, 2, 2);
        let table = PotentialOutcomeTable::from_fn(d, |b, r, c, p, q| {
            (100 * b + 4 * r + 4 * c + 2 * p + q) as f64
        })
        .unwrap();
        let l = Contrast::new(2, 2, vec![1.0, -1.0, -1.0, 1.0]).unwrap();
        let em = exact_estimator_moments(&table, &l).unwrap();
        assert_abs_diff_eq!(em.mean_var0.unwrap(), em.var_tau_hat, epsilon = 1e-12);
    }

    #[test]
    fn single_block_designs_have_no_var0() {
        let d = dims(1, 2, 2);
        let table = PotentialOutcomeTable::from_fn(d, |_, r, c, _, _| (r + c) as f64).unwrap();
        let l = Contrast::new(2, 2, vec![1.0, -1.0, -1.0, 1.0]).unwrap();
        assert!(exact_estimator_moments(&table, &l).unwrap().mean_var0.is_none());
    }

    #[test]
    fn integer_and_float_paths_agree() {
        let d = dims(1, 2, 3);
        let table = PotentialOutcomeTable::from_fn(d, |_, r, c, p, q| {
            ((r * 5 + c * 3 + p * 2 + q * 7) % 9) as f64
        })
        .unwrap();
        assert!(table.is_integral());
        let exact = exact_block_moments(&table, 0).unwrap();

        // Nudge the table off the integer lattice by a factor of 0.5 so
        // the float path runs; scale covariances back by 4.
        let shifted = PotentialOutcomeTable::new(
            d,
            table.values().iter().map(|v| v * 0.5).collect(),
        )
        .unwrap();
        assert!(!shifted.is_integral());
        let float = exact_block_moments(&shifted, 0).unwrap();
        for t1 in 0..6 {
            assert_abs_diff_eq!(float.mean_obs[t1] * 2.0, exact.mean_obs[t1], epsilon = 1e-12);
            for t2 in 0..6 {
                assert_abs_diff_eq!(
                    float.cov_obs.get(t1, t2) * 4.0,
                    exact.cov_obs.get(t1, t2),
                    epsilon = 1e-12
                );
            }
        }
    }
}
