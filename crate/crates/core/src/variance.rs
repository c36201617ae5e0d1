//! Sampling-variance machinery for the strip-plot estimator: mean
//! squares and products of the potential outcomes, the closed-form
//! covariance of the observed outcomes, the exact sampling variance of
//! the pooled estimator, the bias of the conservative variance
//! estimator, and the class of quadratic variance estimators that are
//! unbiased under between-block additivity, with its minimax member.

use crate::design::{
    block_contrast_from_means, compute_means, Contrast, MeanSummary, PotentialOutcomeTable,
};
use crate::error::{Error, Result};
use crate::estimators::ContrastEstimate;
use crate::matrix::SquareMatrix;
use crate::numeric::KahanSum;
use crate::randomizer::{SeedSpec, StreamKind};

/// Validation tolerance for the estimator-matrix class invariants.
const CLASS_TOL: f64 = 1e-10;

/// The three mean squares/products of one block and one treatment pair:
/// a row component, a column component, and the double-centered
/// row-by-column residual component. Symmetric in the treatment pair;
/// the diagonal (equal-pair) values are mean squares and never negative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanProducts {
    pub row: f64,
    pub col: f64,
    pub row_col: f64,
}

/// Mean products from a precomputed mean summary; `O(P Q)` per pair, so
/// assembling a full covariance block shares one summary pass.
pub fn mean_products_from(
    summary: &MeanSummary,
    table: &PotentialOutcomeTable,
    b: usize,
    t1: (usize, usize),
    t2: (usize, usize),
) -> Result<MeanProducts> {
    let dims = table.dims();
    if summary.dims() != dims {
        return Err(Error::DimensionMismatch(
            "mean summary does not belong to this table".into(),
        ));
    }
    dims.check_block(b)?;
    dims.check_treatment(t1.0, t1.1)?;
    dims.check_treatment(t2.0, t2.1)?;
    let (nr, nc) = (dims.row_levels(), dims.col_levels());
    let (p1, q1) = t1;
    let (p2, q2) = t2;

    let m1 = summary.block_mean(b, p1, q1);
    let m2 = summary.block_mean(b, p2, q2);

    let mut row_acc = KahanSum::new();
    for r in 0..nr {
        row_acc.add((summary.row_mean(b, r, p1, q1) - m1) * (summary.row_mean(b, r, p2, q2) - m2));
    }
    let row = nc as f64 * row_acc.total() / (nr - 1) as f64;

    let mut col_acc = KahanSum::new();
    for c in 0..nc {
        col_acc.add((summary.col_mean(b, c, p1, q1) - m1) * (summary.col_mean(b, c, p2, q2) - m2));
    }
    let col = nr as f64 * col_acc.total() / (nc - 1) as f64;

    let mut cross_acc = KahanSum::new();
    for r in 0..nr {
        for c in 0..nc {
            let r1 = table.outcome(b, r, c, p1, q1) - summary.row_mean(b, r, p1, q1)
                - summary.col_mean(b, c, p1, q1)
                + m1;
            let r2 = table.outcome(b, r, c, p2, q2) - summary.row_mean(b, r, p2, q2)
                - summary.col_mean(b, c, p2, q2)
                + m2;
            cross_acc.add(r1 * r2);
        }
    }
    let row_col = cross_acc.total() / ((nr - 1) * (nc - 1)) as f64;

    Ok(MeanProducts { row, col, row_col })
}

/// Mean products of block `b` for one treatment pair, computing the
/// mean summary on the fly. Treatment indices are 0-based `(p, q)`.
pub fn mean_products(
    table: &PotentialOutcomeTable,
    b: usize,
    t1: (usize, usize),
    t2: (usize, usize),
) -> Result<MeanProducts> {
    mean_products_from(&compute_means(table), table, b, t1, t2)
}

/// Closed-form covariance of two observed treatment values of one block
/// under the strip-plot randomization:
///
/// ```text
/// cov = [ (P d_p - 1) row + (Q d_q - 1) col
///         + (P d_p - 1)(Q d_q - 1) row_col ] / (PQ)
/// ```
///
/// with `d_p`, `d_q` the Kronecker deltas of the row and column levels.
/// The delta factors are formed in integer arithmetic; the only division
/// is the final one by `PQ`.
pub fn observed_covariance(
    table: &PotentialOutcomeTable,
    b: usize,
    t1: (usize, usize),
    t2: (usize, usize),
) -> Result<f64> {
    observed_covariance_from(&compute_means(table), table, b, t1, t2)
}

/// [`observed_covariance`] from a precomputed mean summary.
pub fn observed_covariance_from(
    summary: &MeanSummary,
    table: &PotentialOutcomeTable,
    b: usize,
    t1: (usize, usize),
    t2: (usize, usize),
) -> Result<f64> {
    let dims = table.dims();
    let mp = mean_products_from(summary, table, b, t1, t2)?;
    let row_factor = (dims.row_levels() as i64) * i64::from(t1.0 == t2.0) - 1;
    let col_factor = (dims.col_levels() as i64) * i64::from(t1.1 == t2.1) - 1;
    let numer = (row_factor as f64) * mp.row
        + (col_factor as f64) * mp.col
        + ((row_factor * col_factor) as f64) * mp.row_col;
    Ok(numer / dims.treatments() as f64)
}

/// Per-block covariance matrices of the observed outcome vector. The
/// observed vector is block-diagonal in these: randomization is
/// independent across blocks.
#[derive(Debug, Clone)]
pub struct CovarianceModel {
    blocks: Vec<SquareMatrix>,
}

impl CovarianceModel {
    pub fn block(&self, b: usize) -> &SquareMatrix {
        &self.blocks[b]
    }

    pub fn blocks(&self) -> &[SquareMatrix] {
        &self.blocks
    }
}

/// Assembles every block's observed-outcome covariance matrix from the
/// closed form, sharing a single mean-summary pass.
pub fn covariance_model(table: &PotentialOutcomeTable) -> CovarianceModel {
    let dims = table.dims();
    let summary = compute_means(table);
    let t = dims.treatments();
    let blocks = (0..dims.blocks())
        .map(|b| {
            let mut w = SquareMatrix::zeros(t);
            for t1 in 0..t {
                for t2 in t1..t {
                    let cov = observed_covariance_from(
                        &summary,
                        table,
                        b,
                        dims.treatment_levels(t1),
                        dims.treatment_levels(t2),
                    )
                    .expect("indices in range by construction");
                    w.set(t1, t2, cov);
                    w.set(t2, t1, cov);
                }
            }
            w
        })
        .collect();
    CovarianceModel { blocks }
}

/// Exact sampling variance of the pooled contrast estimator:
/// `sum_b l' W_b l / B^2` with `W_b` the per-block observed covariance.
pub fn sampling_variance(table: &PotentialOutcomeTable, l: &Contrast) -> Result<f64> {
    let dims = table.dims();
    l.check_table(&dims)?;
    let model = covariance_model(table);
    let nb = dims.blocks();
    let t = dims.treatments();
    let mut acc = KahanSum::new();
    for b in 0..nb {
        let w = model.block(b);
        for t1 in 0..t {
            for t2 in 0..t {
                acc.add(l.coeffs()[t1] * l.coeffs()[t2] * w.get(t1, t2));
            }
        }
    }
    Ok(acc.total() / (nb as f64 * nb as f64))
}

/// Bias of the pooled between-block variance estimator:
/// `sum_b (tau_b - tau)^2 / {B (B - 1)}` over the block-level contrast
/// values. Nonnegative, and zero exactly when all block-level contrasts
/// coincide (between-block additivity).
pub fn conservative_variance_bias(table: &PotentialOutcomeTable, l: &Contrast) -> Result<f64> {
    let dims = table.dims();
    l.check_table(&dims)?;
    let nb = dims.blocks();
    if nb < 2 {
        return Err(Error::TooFewBlocks {
            required: 2,
            actual: nb,
        });
    }
    let means = compute_means(table);
    let taus: Vec<f64> = (0..nb)
        .map(|b| block_contrast_from_means(&means, l, b))
        .collect();
    let mut macc = KahanSum::new();
    for &v in &taus {
        macc.add(v);
    }
    let tau = macc.total() / nb as f64;
    let mut acc = KahanSum::new();
    for &v in &taus {
        acc.add((v - tau) * (v - tau));
    }
    Ok(acc.total() / (nb as f64 * (nb - 1) as f64))
}

/// Covariance of two entries selected from `N` value pairs by a shared
/// uniform random permutation: position `k1` of the first coordinate
/// against position `k2` of the second,
///
/// ```text
/// cov = (N d(k1, k2) - 1) / {N (N - 1)} * sum_i (x_i - x_bar)(y_i - y_bar).
/// ```
///
/// Positions are 0-based.
pub fn permutation_covariance(pairs: &[(f64, f64)], k1: usize, k2: usize) -> Result<f64> {
    let n = pairs.len();
    if n < 2 {
        return Err(Error::InvalidInput(
            "permutation covariance needs at least two pairs".into(),
        ));
    }
    if k1 >= n || k2 >= n {
        return Err(Error::InvalidInput(format!(
            "positions ({k1}, {k2}) out of range for {n} pairs"
        )));
    }
    let mut xacc = KahanSum::new();
    let mut yacc = KahanSum::new();
    for &(x, y) in pairs {
        xacc.add(x);
        yacc.add(y);
    }
    let (xbar, ybar) = (xacc.total() / n as f64, yacc.total() / n as f64);
    let mut cross = KahanSum::new();
    for &(x, y) in pairs {
        cross.add((x - xbar) * (y - ybar));
    }
    let delta_factor = (n as i64) * i64::from(k1 == k2) - 1;
    Ok(delta_factor as f64 / (n as f64 * (n - 1) as f64) * cross.total())
}

/// A member of the class of quadratic variance estimators that are
/// nonnegative and unbiased under between-block additivity: a symmetric
/// nonnegative-definite `B x B` matrix with every diagonal element
/// `1/B^2` and every row summing to zero. The estimator it induces is
/// the quadratic form of the block-estimate vector.
#[derive(Debug, Clone, PartialEq)]
pub struct UEstimatorMatrix {
    matrix: SquareMatrix,
    is_centering: bool,
}

impl UEstimatorMatrix {
    /// Validates the class invariants (symmetry, diagonal, row sums,
    /// nonnegative definiteness) to tolerance 1e-10.
    pub fn new(matrix: SquareMatrix) -> Result<Self> {
        let b = matrix.order();
        if b < 2 {
            return Err(Error::InvalidMatrix(
                "estimator matrices need order at least 2".into(),
            ));
        }
        if matrix.asymmetry() > CLASS_TOL {
            return Err(Error::InvalidMatrix(format!(
                "matrix is not symmetric (asymmetry {})",
                matrix.asymmetry()
            )));
        }
        let want_diag = 1.0 / (b as f64 * b as f64);
        for i in 0..b {
            if (matrix.get(i, i) - want_diag).abs() > CLASS_TOL {
                return Err(Error::InvalidMatrix(format!(
                    "diagonal element {i} is {}, expected {want_diag}",
                    matrix.get(i, i)
                )));
            }
        }
        for (i, s) in matrix.row_sums().iter().enumerate() {
            if s.abs() > CLASS_TOL {
                return Err(Error::InvalidMatrix(format!("row {i} sums to {s}, not zero")));
            }
        }
        let min_eig = matrix.symmetric_eigenvalues()[0];
        if min_eig < -CLASS_TOL {
            return Err(Error::InvalidMatrix(format!(
                "matrix is not nonnegative definite (min eigenvalue {min_eig})"
            )));
        }
        Ok(Self {
            matrix,
            is_centering: false,
        })
    }

    /// The scaled centering matrix `(I - J/B) / {B (B - 1)}`: the class
    /// member whose quadratic form is the pooled between-block variance
    /// estimator, and the unique member minimizing the largest
    /// eigenvalue (hence the worst-case bias over spherical contours of
    /// the block-contrast vector).
    pub fn centering(blocks: usize) -> Result<Self> {
        if blocks < 2 {
            return Err(Error::TooFewBlocks {
                required: 2,
                actual: blocks,
            });
        }
        let bf = blocks as f64;
        let scale = bf * (bf - 1.0);
        let diag = (1.0 - 1.0 / bf) / scale;
        let off = (-1.0 / bf) / scale;
        let matrix = SquareMatrix::from_fn(blocks, |i, j| if i == j { diag } else { off });
        Ok(Self {
            matrix,
            is_centering: true,
        })
    }

    pub fn order(&self) -> usize {
        self.matrix.order()
    }

    pub fn matrix(&self) -> &SquareMatrix {
        &self.matrix
    }

    /// True for matrices built by [`centering`](Self::centering).
    pub fn is_centering(&self) -> bool {
        self.is_centering
    }

    /// Largest eigenvalue, the worst-case bias factor of the induced
    /// estimator over unit-norm block-contrast vectors. Bounded below by
    /// `1 / {B (B - 1)}` over the whole class, with equality only at the
    /// centering member.
    pub fn max_eigenvalue(&self) -> f64 {
        *self
            .matrix
            .symmetric_eigenvalues()
            .last()
            .expect("order >= 2")
    }
}

/// Quadratic-form variance estimate of a block-estimate vector.
///
/// The centering member routes through the same centered sum of squares
/// as [`conservative_variance`](crate::estimators::conservative_variance),
/// so the two agree bit-for-bit; general members evaluate the bilinear
/// form directly (clamped at zero, where valid matrices can land only by
/// round-off).
pub fn quadratic_variance_estimator(
    est: &ContrastEstimate,
    u: &UEstimatorMatrix,
) -> Result<f64> {
    if u.order() != est.blocks() {
        return Err(Error::DimensionMismatch(format!(
            "estimator matrix order {} does not match {} blocks",
            u.order(),
            est.blocks()
        )));
    }
    if u.is_centering() {
        return crate::estimators::conservative_variance(est);
    }
    let v = u.matrix().mul_vec(est.block_estimates());
    let mut acc = KahanSum::new();
    for (x, y) in est.block_estimates().iter().zip(&v) {
        acc.add(x * y);
    }
    Ok(acc.total().max(0.0))
}

/// Largest eigenvalue of a class matrix. See
/// [`UEstimatorMatrix::max_eigenvalue`].
pub fn max_eigenvalue(u: &UEstimatorMatrix) -> f64 {
    u.max_eigenvalue()
}

/// Draws a random member of the estimator-matrix class, deterministic in
/// the seed. Construction: a Gram matrix of row-centered random vectors
/// (nonnegative definite, annihilates the constant vector), averaged
/// over conjugation by all cyclic shifts (forces a constant diagonal
/// while preserving both properties), then rescaled so the diagonal is
/// exactly the class value `1/B^2`. No rejection step is needed beyond
/// regenerating the measure-zero all-zero draw.
pub fn random_class_matrix(blocks: usize, seed: SeedSpec) -> Result<UEstimatorMatrix> {
    if blocks < 2 {
        return Err(Error::TooFewBlocks {
            required: 2,
            actual: blocks,
        });
    }
    let mut attempt_seed = seed;
    for _ in 0..64 {
        let mut rng = attempt_seed.stream(0, StreamKind::Aux);
        let mut k = vec![0.0f64; blocks * blocks];
        for row in k.chunks_mut(blocks) {
            let mut acc = KahanSum::new();
            for v in row.iter_mut() {
                *v = 2.0 * crate::randomizer::uniform_unit(&mut rng) - 1.0;
                acc.add(*v);
            }
            let mean = acc.total() / blocks as f64;
            for v in row.iter_mut() {
                *v -= mean;
            }
        }
        // Gram matrix of the centered rows: A0 = K' K.
        let a0 = SquareMatrix::from_fn(blocks, |i, j| {
            let mut acc = KahanSum::new();
            for r in 0..blocks {
                acc.add(k[r * blocks + i] * k[r * blocks + j]);
            }
            acc.total()
        });
        // Average over cyclic conjugations.
        let averaged = SquareMatrix::from_fn(blocks, |i, j| {
            let mut acc = KahanSum::new();
            for s in 0..blocks {
                acc.add(a0.get((i + s) % blocks, (j + s) % blocks));
            }
            acc.total() / blocks as f64
        });
        let mut dacc = KahanSum::new();
        for i in 0..blocks {
            dacc.add(averaged.get(i, i));
        }
        let diag = dacc.total() / blocks as f64;
        if diag <= 1e-12 {
            attempt_seed = attempt_seed.fold(0xA55A);
            continue;
        }
        let target = 1.0 / (blocks as f64 * blocks as f64);
        let scale = target / diag;
        let scaled = SquareMatrix::from_fn(blocks, |i, j| averaged.get(i, j) * scale);
        return UEstimatorMatrix::new(scaled);
    }
    Err(Error::InvalidMatrix(
        "failed to generate a nondegenerate class matrix".into(),
    ))
}
