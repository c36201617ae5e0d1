//! Potential-outcomes data model for blocked two-factor strip-plot
//! experiments: design dimensions, the full science table, treatment
//! contrasts, mean summaries, and the two additivity predicates.
//!
//! Layout conventions used throughout the crate:
//! - every block is a `row_levels x col_levels` array of units;
//!   the row factor has `row_levels` levels, the column factor
//!   `col_levels`;
//! - all in-memory indices are 0-based; file formats are 1-based;
//! - a treatment `(p, q)` flattens to `p * col_levels + q`, so the
//!   2x3 treatment order is (1,1), (1,2), (1,3), (2,1), (2,2), (2,3)
//!   in 1-based terms.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{compensated_sum, KahanSum};

/// Design dimensions: number of blocks and factor levels.
///
/// Blocks >= 1 so that single-block tables can be analyzed in isolation;
/// operations that divide by `blocks - 1` (pooled variance estimation,
/// estimator-matrix construction) require two blocks and enforce that at
/// the call site.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DesignDims {
    blocks: usize,
    row_levels: usize,
    col_levels: usize,
}

impl DesignDims {
    pub fn new(blocks: usize, row_levels: usize, col_levels: usize) -> Result<Self> {
        if blocks < 1 {
            return Err(Error::InvalidDims("block count must be >= 1".into()));
        }
        if row_levels < 2 || col_levels < 2 {
            return Err(Error::InvalidDims(format!(
                "both factors need at least 2 levels, got {row_levels} x {col_levels}"
            )));
        }
        Ok(Self {
            blocks,
            row_levels,
            col_levels,
        })
    }

    pub fn blocks(&self) -> usize {
        self.blocks
    }

    pub fn row_levels(&self) -> usize {
        self.row_levels
    }

    pub fn col_levels(&self) -> usize {
        self.col_levels
    }

    /// Number of treatment combinations (and of units per block).
    pub fn treatments(&self) -> usize {
        self.row_levels * self.col_levels
    }

    /// Total unit count over all blocks.
    pub fn units(&self) -> usize {
        self.blocks * self.treatments()
    }

    /// Flat index of treatment `(p, q)`, row-major in `q`.
    #[inline]
    pub fn treatment_index(&self, p: usize, q: usize) -> usize {
        debug_assert!(p < self.row_levels && q < self.col_levels);
        p * self.col_levels + q
    }

    /// Inverse of [`treatment_index`](Self::treatment_index).
    #[inline]
    pub fn treatment_levels(&self, t: usize) -> (usize, usize) {
        debug_assert!(t < self.treatments());
        (t / self.col_levels, t % self.col_levels)
    }

    pub(crate) fn check_block(&self, b: usize) -> Result<()> {
        if b >= self.blocks {
            return Err(Error::BlockIndexOutOfRange {
                index: b,
                blocks: self.blocks,
            });
        }
        Ok(())
    }

    pub(crate) fn check_treatment(&self, p: usize, q: usize) -> Result<()> {
        if p >= self.row_levels || q >= self.col_levels {
            return Err(Error::TreatmentIndexOutOfRange {
                row_level: p,
                col_level: q,
                rows: self.row_levels,
                cols: self.col_levels,
            });
        }
        Ok(())
    }
}

/// Complete science table: the potential outcome of every unit under
/// every treatment combination, `blocks * (PQ)^2` finite values indexed
/// `(b, r, c, p, q)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialOutcomeTable {
    dims: DesignDims,
    // Flat, row-major in (b, r, c, p, q).
    y: Vec<f64>,
}

impl PotentialOutcomeTable {
    /// Builds from a flat vector in `(b, r, c, p, q)` row-major order.
    pub fn new(dims: DesignDims, y: Vec<f64>) -> Result<Self> {
        let expected = dims.blocks * dims.row_levels * dims.col_levels * dims.treatments();
        if y.len() != expected {
            return Err(Error::InvalidTable(format!(
                "expected {expected} outcomes, got {}",
                y.len()
            )));
        }
        if let Some(bad) = y.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidTable(format!(
                "all outcomes must be finite, found {bad}"
            )));
        }
        Ok(Self { dims, y })
    }

    /// Builds by evaluating `f(b, r, c, p, q)` over the whole index range.
    pub fn from_fn(
        dims: DesignDims,
        mut f: impl FnMut(usize, usize, usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut y =
            Vec::with_capacity(dims.blocks * dims.row_levels * dims.col_levels * dims.treatments());
        for b in 0..dims.blocks {
            for r in 0..dims.row_levels {
                for c in 0..dims.col_levels {
                    for p in 0..dims.row_levels {
                        for q in 0..dims.col_levels {
                            y.push(f(b, r, c, p, q));
                        }
                    }
                }
            }
        }
        Self::new(dims, y)
    }

    pub fn dims(&self) -> DesignDims {
        self.dims
    }

    #[inline]
    fn offset(&self, b: usize, r: usize, c: usize, p: usize, q: usize) -> usize {
        let d = &self.dims;
        ((((b * d.row_levels) + r) * d.col_levels + c) * d.row_levels + p) * d.col_levels + q
    }

    /// Potential outcome of the unit at `(r, c)` in block `b` under
    /// treatment `(p, q)`. All indices 0-based.
    #[inline]
    pub fn outcome(&self, b: usize, r: usize, c: usize, p: usize, q: usize) -> f64 {
        self.y[self.offset(b, r, c, p, q)]
    }

    pub fn values(&self) -> &[f64] {
        &self.y
    }

    pub fn max_abs(&self) -> f64 {
        self.y.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Default absolute tolerance for the additivity predicates:
    /// 1e-9 times the largest outcome magnitude. Generated tables never
    /// satisfy exact equality, so the predicates take an explicit slack.
    pub fn default_additivity_tol(&self) -> f64 {
        1e-9 * self.max_abs()
    }

    /// True when every outcome is an integer small enough for exact
    /// 64-bit accumulation; enables the exact paths in enumeration code.
    pub fn is_integral(&self) -> bool {
        self.y
            .iter()
            .all(|v| v.fract() == 0.0 && v.abs() <= (1u64 << 40) as f64)
    }
}

/// Zero-sum coefficient vector over the treatment combinations of a
/// `row_levels x col_levels` factorial. Deliberately independent of the
/// block count: the same contrast applies to designs of any size.
#[derive(Debug, Clone, PartialEq)]
pub struct Contrast {
    row_levels: usize,
    col_levels: usize,
    coeffs: Vec<f64>,
    label: Option<String>,
}

impl Contrast {
    /// Validates that the coefficients are finite, sum to zero (within
    /// 1e-12 of their L1 norm), and are not all zero.
    pub fn new(row_levels: usize, col_levels: usize, coeffs: Vec<f64>) -> Result<Self> {
        if row_levels < 2 || col_levels < 2 {
            return Err(Error::InvalidContrast(
                "both factors need at least 2 levels".into(),
            ));
        }
        if coeffs.len() != row_levels * col_levels {
            return Err(Error::InvalidContrast(format!(
                "expected {} coefficients, got {}",
                row_levels * col_levels,
                coeffs.len()
            )));
        }
        if coeffs.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidContrast(
                "coefficients must be finite".into(),
            ));
        }
        let l1: f64 = coeffs.iter().map(|v| v.abs()).sum();
        if l1 == 0.0 {
            return Err(Error::InvalidContrast(
                "coefficients must not all be zero".into(),
            ));
        }
        let total = compensated_sum(coeffs.iter().copied());
        if total.abs() > 1e-12 * l1 {
            return Err(Error::InvalidContrast(format!(
                "coefficients must sum to zero, got {total}"
            )));
        }
        Ok(Self {
            row_levels,
            col_levels,
            coeffs,
            label: None,
        })
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    pub fn label(&self) -> Option<&str> {
        self.label.as_deref()
    }

    pub fn row_levels(&self) -> usize {
        self.row_levels
    }

    pub fn col_levels(&self) -> usize {
        self.col_levels
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// Coefficient for treatment `(p, q)`, 0-based.
    #[inline]
    pub fn coeff(&self, p: usize, q: usize) -> f64 {
        self.coeffs[p * self.col_levels + q]
    }

    /// A basis of `PQ - 1` independent contrasts: each pits one
    /// treatment against the first. Block-mean differences are constant
    /// across blocks for every contrast exactly when they are constant
    /// for each basis element.
    pub fn basis(row_levels: usize, col_levels: usize) -> Vec<Contrast> {
        let t = row_levels * col_levels;
        (1..t)
            .map(|k| {
                let mut coeffs = vec![0.0; t];
                coeffs[k] = 1.0;
                coeffs[0] = -1.0;
                Contrast::new(row_levels, col_levels, coeffs)
                    .expect("basis contrasts are valid by construction")
            })
            .collect()
    }

    pub(crate) fn check_table(&self, dims: &DesignDims) -> Result<()> {
        if self.row_levels != dims.row_levels || self.col_levels != dims.col_levels {
            return Err(Error::DimensionMismatch(format!(
                "contrast is over a {}x{} factorial, table is {}x{}",
                self.row_levels, self.col_levels, dims.row_levels, dims.col_levels
            )));
        }
        Ok(())
    }
}

/// The four mean families of a science table: per-block treatment means,
/// row and column marginal means, and population means.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanSummary {
    dims: DesignDims,
    block_treatment: Vec<f64>, // [b][p][q]
    row_marginal: Vec<f64>,    // [b][r][p][q]
    col_marginal: Vec<f64>,    // [b][c][p][q]
    population: Vec<f64>,      // [p][q]
}

impl MeanSummary {
    pub fn dims(&self) -> DesignDims {
        self.dims
    }

    /// Block mean over the PQ units of block `b` under treatment `(p, q)`.
    #[inline]
    pub fn block_mean(&self, b: usize, p: usize, q: usize) -> f64 {
        let t = self.dims.treatments();
        self.block_treatment[b * t + self.dims.treatment_index(p, q)]
    }

    /// Mean over the columns of row `r` in block `b` under `(p, q)`.
    #[inline]
    pub fn row_mean(&self, b: usize, r: usize, p: usize, q: usize) -> f64 {
        let t = self.dims.treatments();
        self.row_marginal[(b * self.dims.row_levels + r) * t + self.dims.treatment_index(p, q)]
    }

    /// Mean over the rows of column `c` in block `b` under `(p, q)`.
    #[inline]
    pub fn col_mean(&self, b: usize, c: usize, p: usize, q: usize) -> f64 {
        let t = self.dims.treatments();
        self.col_marginal[(b * self.dims.col_levels + c) * t + self.dims.treatment_index(p, q)]
    }

    /// Mean over all `B * PQ` units under treatment `(p, q)`.
    #[inline]
    pub fn population_mean(&self, p: usize, q: usize) -> f64 {
        self.population[self.dims.treatment_index(p, q)]
    }
}

/// Computes all four mean families in one pass over the table.
///
/// The block mean equals the average of its row marginals and of its
/// column marginals; the population mean is the average of the block
/// means over blocks.
pub fn compute_means(table: &PotentialOutcomeTable) -> MeanSummary {
    let dims = table.dims();
    let (nb, nr, nc) = (dims.blocks, dims.row_levels, dims.col_levels);
    let t = dims.treatments();

    let mut row_marginal = vec![0.0; nb * nr * t];
    let mut col_marginal = vec![0.0; nb * nc * t];
    let mut block_treatment = vec![0.0; nb * t];
    let mut population = vec![0.0; t];

    for b in 0..nb {
        for p in 0..nr {
            for q in 0..nc {
                let ti = dims.treatment_index(p, q);
                let mut block_acc = KahanSum::new();
                for r in 0..nr {
                    let mut acc = KahanSum::new();
                    for c in 0..nc {
                        acc.add(table.outcome(b, r, c, p, q));
                    }
                    let sum = acc.total();
                    row_marginal[(b * nr + r) * t + ti] = sum / nc as f64;
                    block_acc.add(sum);
                }
                for c in 0..nc {
                    let mut acc = KahanSum::new();
                    for r in 0..nr {
                        acc.add(table.outcome(b, r, c, p, q));
                    }
                    col_marginal[(b * nc + c) * t + ti] = acc.total() / nr as f64;
                }
                block_treatment[b * t + ti] = block_acc.total() / t as f64;
            }
        }
    }
    for ti in 0..t {
        let mut acc = KahanSum::new();
        for b in 0..nb {
            acc.add(block_treatment[b * t + ti]);
        }
        population[ti] = acc.total() / nb as f64;
    }

    MeanSummary {
        dims,
        block_treatment,
        row_marginal,
        col_marginal,
        population,
    }
}

/// Block-level treatment contrast: the contrast applied to the block
/// means of block `b`.
pub fn block_contrast(table: &PotentialOutcomeTable, l: &Contrast, b: usize) -> Result<f64> {
    let dims = table.dims();
    l.check_table(&dims)?;
    dims.check_block(b)?;
    let means = compute_means(table);
    Ok(block_contrast_from_means(&means, l, b))
}

pub(crate) fn block_contrast_from_means(means: &MeanSummary, l: &Contrast, b: usize) -> f64 {
    let dims = means.dims();
    let mut acc = KahanSum::new();
    for p in 0..dims.row_levels {
        for q in 0..dims.col_levels {
            acc.add(l.coeff(p, q) * means.block_mean(b, p, q));
        }
    }
    acc.total()
}

/// Finite-population treatment contrast: the average of the block-level
/// contrasts, equivalently the contrast applied to the population means.
/// Computed by the block route; the population-mean route agrees to
/// round-off and is exercised by the test suite.
pub fn population_contrast(table: &PotentialOutcomeTable, l: &Contrast) -> Result<f64> {
    let dims = table.dims();
    l.check_table(&dims)?;
    let means = compute_means(table);
    let mut acc = KahanSum::new();
    for b in 0..dims.blocks {
        acc.add(block_contrast_from_means(&means, l, b));
    }
    Ok(acc.total() / dims.blocks as f64)
}

/// True when the difference of block means between any two treatments is
/// constant across blocks, up to the absolute tolerance `tol`. Under this
/// condition the pooled between-block variance estimator is unbiased.
///
/// Checked against the first treatment as reference: the difference
/// `block_mean(b, p, q) - block_mean(b, 0, 0)` may range over at most
/// `tol` as `b` varies, for every `(p, q)`.
pub fn is_between_block_additive(table: &PotentialOutcomeTable, tol: f64) -> bool {
    assert!(tol >= 0.0, "tolerance must be nonnegative");
    let dims = table.dims();
    let means = compute_means(table);
    for p in 0..dims.row_levels {
        for q in 0..dims.col_levels {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for b in 0..dims.blocks {
                let d = means.block_mean(b, p, q) - means.block_mean(b, 0, 0);
                lo = lo.min(d);
                hi = hi.max(d);
            }
            if hi - lo > tol {
                return false;
            }
        }
    }
    true
}

/// True when unit-level treatment differences are constant over every
/// unit of every block (strict additivity in the Neyman sense), up to
/// `tol`. Strictly stronger than [`is_between_block_additive`].
pub fn is_strictly_additive(table: &PotentialOutcomeTable, tol: f64) -> bool {
    assert!(tol >= 0.0, "tolerance must be nonnegative");
    let dims = table.dims();
    for p in 0..dims.row_levels {
        for q in 0..dims.col_levels {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for b in 0..dims.blocks {
                for r in 0..dims.row_levels {
                    for c in 0..dims.col_levels {
                        let d = table.outcome(b, r, c, p, q) - table.outcome(b, r, c, 0, 0);
                        lo = lo.min(d);
                        hi = hi.max(d);
                    }
                }
            }
            if hi - lo > tol {
                return false;
            }
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    pub(crate) fn constant_table(dims: DesignDims, v: f64) -> PotentialOutcomeTable {
        PotentialOutcomeTable::from_fn(dims, |_, _, _, _, _| v).unwrap()
    }

    /// Table whose block means are prescribed: every unit of block `b`
    /// under treatment index `t` carries `means[b][t]`.
    fn table_with_block_means(dims: DesignDims, means: &[Vec<f64>]) -> PotentialOutcomeTable {
        PotentialOutcomeTable::from_fn(dims, |b, _, _, p, q| {
            means[b][dims.treatment_index(p, q)]
        })
        .unwrap()
    }

    #[test]
    fn dims_validation() {
        assert!(DesignDims::new(0, 2, 2).is_err());
        assert!(DesignDims::new(1, 1, 2).is_err());
        assert!(DesignDims::new(1, 2, 1).is_err());
        let d = DesignDims::new(3, 2, 4).unwrap();
        assert_eq!(d.treatments(), 8);
        assert_eq!(d.units(), 24);
    }

    #[test]
    fn treatment_index_round_trips() {
        let d = DesignDims::new(1, 3, 4).unwrap();
        for t in 0..d.treatments() {
            let (p, q) = d.treatment_levels(t);
            assert_eq!(d.treatment_index(p, q), t);
        }
        // Row-major in q: (1,2) 0-based sits at 1*4+2.
        assert_eq!(d.treatment_index(1, 2), 6);
    }

    #[test]
    fn table_rejects_wrong_size_and_non_finite() {
        let d = DesignDims::new(1, 2, 2).unwrap();
        assert!(PotentialOutcomeTable::new(d, vec![0.0; 15]).is_err());
        let mut y = vec![0.0; 16];
        y[3] = f64::NAN;
        assert!(PotentialOutcomeTable::new(d, y).is_err());
    }

    #[test]
    fn means_of_constant_table() {
        let d = DesignDims::new(2, 2, 3).unwrap();
        let table = constant_table(d, 5.0);
        let m = compute_means(&table);
        for b in 0..2 {
            for p in 0..2 {
                for q in 0..3 {
                    assert_eq!(m.block_mean(b, p, q), 5.0);
                    assert_eq!(m.population_mean(p, q), 5.0);
                    for r in 0..2 {
                        assert_eq!(m.row_mean(b, r, p, q), 5.0);
                    }
                    for c in 0..3 {
                        assert_eq!(m.col_mean(b, c, p, q), 5.0);
                    }
                }
            }
        }
    }

    #[test]
    fn means_of_row_plus_column_table() {
        // Y(rc; pq) = r + c with 1-based r, c: values {2, 3, 3, 4}.
        let d = DesignDims::new(1, 2, 2).unwrap();
        let table = PotentialOutcomeTable::from_fn(d, |_, r, c, _, _| (r + 1 + c + 1) as f64)
            .unwrap();
        let m = compute_means(&table);
        for p in 0..2 {
            for q in 0..2 {
                assert_eq!(m.block_mean(0, p, q), 3.0);
                assert_eq!(m.row_mean(0, 0, p, q), 2.5);
                assert_eq!(m.col_mean(0, 0, p, q), 2.5);
            }
        }
    }

    #[test]
    fn population_mean_matches_direct_summation() {
        // Y_b(rc; pq) = 10 b + 2 r + c (1-based). Independent oracle:
        // naive summation over all 16 unit entries per block.
        let d = DesignDims::new(2, 2, 2).unwrap();
        let table = PotentialOutcomeTable::from_fn(d, |b, r, c, _, _| {
            10.0 * (b + 1) as f64 + 2.0 * (r + 1) as f64 + (c + 1) as f64
        })
        .unwrap();
        let m = compute_means(&table);

        let per_block: Vec<f64> = (0..2)
            .map(|b| {
                let mut s = 0.0;
                for r in 0..2 {
                    for c in 0..2 {
                        s += table.outcome(b, r, c, 0, 0);
                    }
                }
                s / 4.0
            })
            .collect();
        assert_eq!(per_block, vec![14.5, 24.5]);
        for p in 0..2 {
            for q in 0..2 {
                assert_eq!(m.population_mean(p, q), 19.5);
            }
        }
    }

    #[test]
    fn contrast_validation() {
        assert!(Contrast::new(2, 2, vec![1.0, -1.0, -1.0, 1.0]).is_ok());
        assert!(Contrast::new(2, 2, vec![0.0; 4]).is_err());
        assert!(Contrast::new(2, 2, vec![1.0, 1.0, -1.0, 1.0]).is_err());
        assert!(Contrast::new(2, 2, vec![1.0, -1.0]).is_err());
        assert!(Contrast::new(2, 2, vec![1.0, f64::NAN, -1.0, 0.0]).is_err());
    }

    #[test]
    fn block_contrast_on_prescribed_means() {
        let d = DesignDims::new(1, 2, 2).unwrap();
        let l = Contrast::new(2, 2, vec![1.0, -1.0, -1.0, 1.0]).unwrap();

        let t1 = table_with_block_means(d, &[vec![1.0, 2.0, 3.0, 4.0]]);
        assert_eq!(block_contrast(&t1, &l, 0).unwrap(), 0.0);

        let t2 = table_with_block_means(d, &[vec![1.0, 2.0, 3.0, 5.0]]);
        assert_eq!(block_contrast(&t2, &l, 0).unwrap(), 1.0);

        assert!(block_contrast(&t2, &l, 1).is_err());
    }

    #[test]
    fn block_contrast_of_equal_outcomes_vanishes() {
        let d = DesignDims::new(2, 2, 3).unwrap();
        let table = constant_table(d, 7.5);
        let l = Contrast::new(2, 3, vec![2.0, -1.0, -1.0, 0.5, 0.25, -0.75]).unwrap();
        for b in 0..2 {
            assert_abs_diff_eq!(block_contrast(&table, &l, b).unwrap(), 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn population_contrast_averages_blocks() {
        let d = DesignDims::new(2, 2, 2).unwrap();
        let l = Contrast::new(2, 2, vec![1.0, -1.0, -1.0, 1.0]).unwrap();
        // tau_1 = 0, tau_2 = 4.
        let table = table_with_block_means(
            d,
            &[vec![1.0, 2.0, 3.0, 4.0], vec![1.0, 2.0, 3.0, 8.0]],
        );
        assert_eq!(block_contrast(&table, &l, 1).unwrap(), 4.0);
        assert_eq!(population_contrast(&table, &l).unwrap(), 2.0);
    }

    #[test]
    fn between_block_additivity_examples() {
        let d = DesignDims::new(3, 2, 2).unwrap();
        // Same treatment pattern shifted by a per-block constant.
        let base = [1.0, 4.0, 2.0, -1.0];
        let shifted = PotentialOutcomeTable::from_fn(d, |b, _, _, p, q| {
            base[d.treatment_index(p, q)] + 10.0 * b as f64
        })
        .unwrap();
        assert!(is_between_block_additive(&shifted, 1e-12));

        // Treatment effects scaled by sqrt(b+1) break constancy.
        let scaled = PotentialOutcomeTable::from_fn(d, |b, _, _, p, q| {
            let s = ((b + 1) as f64).sqrt();
            (b + 1) as f64 + s * base[d.treatment_index(p, q)]
        })
        .unwrap();
        assert!(!is_between_block_additive(&scaled, 1e-6));
    }

    #[test]
    fn strict_additivity_examples() {
        let d = DesignDims::new(2, 2, 3).unwrap();
        // Unit effect + treatment effect decomposition.
        let additive = PotentialOutcomeTable::from_fn(d, |b, r, c, p, q| {
            (b * 100 + r * 10 + c) as f64 + [0.0, 1.0, -2.0, 3.0, 4.0, -1.5][d.treatment_index(p, q)]
        })
        .unwrap();
        assert!(is_strictly_additive(&additive, 1e-12));
        assert!(is_between_block_additive(&additive, 1e-12));

        assert!(is_strictly_additive(&constant_table(d, 3.0), 0.0));

        // A single perturbed unit response breaks strictness.
        let mut y = additive.values().to_vec();
        y[7] += 0.5;
        let broken = PotentialOutcomeTable::new(d, y).unwrap();
        assert!(!is_strictly_additive(&broken, 1e-6));
    }

    #[test]
    fn mean_families_are_mutually_consistent() {
        let d = DesignDims::new(3, 3, 2).unwrap();
        let table = PotentialOutcomeTable::from_fn(d, |b, r, c, p, q| {
            ((b * 97 + r * 31 + c * 17 + p * 11 + q * 5) % 23) as f64 - 7.5
        })
        .unwrap();
        let m = compute_means(&table);
        for p in 0..3 {
            for q in 0..2 {
                let mut pop = 0.0;
                for b in 0..3 {
                    let row_avg: f64 =
                        (0..3).map(|r| m.row_mean(b, r, p, q)).sum::<f64>() / 3.0;
                    let col_avg: f64 =
                        (0..2).map(|c| m.col_mean(b, c, p, q)).sum::<f64>() / 2.0;
                    assert_abs_diff_eq!(m.block_mean(b, p, q), row_avg, epsilon = 1e-12);
                    assert_abs_diff_eq!(m.block_mean(b, p, q), col_avg, epsilon = 1e-12);
                    pop += m.block_mean(b, p, q);
                }
                assert_abs_diff_eq!(m.population_mean(p, q), pop / 3.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn contrast_basis_spans_differences() {
        let basis = Contrast::basis(2, 3);
        assert_eq!(basis.len(), 5);
        for l in &basis {
            assert_eq!(l.coeffs().iter().sum::<f64>(), 0.0);
        }
    }

    proptest! {
        /// The two computation routes for the population contrast agree.
        #[test]
        fn population_contrast_two_routes(
            b in 1usize..4,
            p in 2usize..4,
            q in 2usize..4,
            values in proptest::collection::vec(-100.0f64..100.0, 243),
        ) {
            let dims = DesignDims::new(b, p, q).unwrap();
            let len = dims.units() * dims.treatments();
            let table = PotentialOutcomeTable::new(dims, values[..len].to_vec()).unwrap();
            let l = &Contrast::basis(dims.row_levels(), dims.col_levels())[0];
            let via_blocks = population_contrast(&table, l).unwrap();
            let means = compute_means(&table);
            let mut via_pop = KahanSum::new();
            for p in 0..dims.row_levels() {
                for q in 0..dims.col_levels() {
                    via_pop.add(l.coeff(p, q) * means.population_mean(p, q));
                }
            }
            let scale = table.max_abs().max(1.0);
            prop_assert!((via_blocks - via_pop.total()).abs() <= 10.0 * f64::EPSILON * scale);
        }

        /// Contrast evaluation is linear in the coefficient vector.
        #[test]
        fn contrast_linearity(
            vals in proptest::collection::vec(-50.0f64..50.0, 16),
            a in -3.0f64..3.0,
            a2 in -3.0f64..3.0,
        ) {
            let d = DesignDims::new(1, 2, 2).unwrap();
            let table = PotentialOutcomeTable::new(d, vals).unwrap();
            let l1 = Contrast::new(2, 2, vec![1.0, -1.0, 0.0, 0.0]).unwrap();
            let l2 = Contrast::new(2, 2, vec![0.0, 1.0, 0.0, -1.0]).unwrap();
            let combined: Vec<f64> = (0..4)
                .map(|i| a * l1.coeffs()[i] + a2 * l2.coeffs()[i])
                .collect();
            prop_assume!(combined.iter().map(|v| v.abs()).sum::<f64>() > 1e-6);
            let lc = Contrast::new(2, 2, combined).unwrap();
            let lhs = population_contrast(&table, &lc).unwrap();
            let rhs = a * population_contrast(&table, &l1).unwrap()
                + a2 * population_contrast(&table, &l2).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-9 * table.max_abs().max(1.0));
        }

        /// Strict additivity implies between-block additivity at the
        /// same tolerance.
        #[test]
        fn strict_implies_between_block(
            unit in proptest::collection::vec(-20.0f64..20.0, 12),
            effect in proptest::collection::vec(-5.0f64..5.0, 6),
        ) {
            let d = DesignDims::new(2, 2, 3).unwrap();
            let table = PotentialOutcomeTable::from_fn(d, |b, r, c, p, q| {
                unit[(b * 2 + r) * 3 + c] + effect[d.treatment_index(p, q)]
            }).unwrap();
            let tol = table.default_additivity_tol();
            prop_assert!(is_strictly_additive(&table, tol));
            prop_assert!(is_between_block_additive(&table, tol));
        }

        /// Between-block additivity holds exactly when every basis
        /// contrast has equal block-level values.
        #[test]
        fn between_block_iff_equal_block_contrasts(
            means in proptest::collection::vec(-10.0f64..10.0, 12),
            make_additive in proptest::bool::ANY,
        ) {
            let d = DesignDims::new(2, 2, 3).unwrap();
            let block_means: Vec<Vec<f64>> = if make_additive {
                let shift = means[6];
                vec![
                    means[..6].to_vec(),
                    means[..6].iter().map(|v| v + shift).collect(),
                ]
            } else {
                vec![means[..6].to_vec(), means[6..].to_vec()]
            };
            let table = table_with_block_means(d, &block_means);
            let tol = 1e-9 * table.max_abs().max(1.0);
            let additive = is_between_block_additive(&table, tol);
            let all_equal = Contrast::basis(2, 3).iter().all(|l| {
                let t0 = block_contrast(&table, l, 0).unwrap();
                let t1 = block_contrast(&table, l, 1).unwrap();
                (t0 - t1).abs() <= 2.0 * tol
            });
            // The basis check uses a doubled tolerance because each basis
            // contrast subtracts two block-mean differences.
            if additive {
                prop_assert!(all_equal);
            }
            if !all_equal {
                prop_assert!(!additive);
            }
        }
    }
}
