//! Point estimation of treatment contrasts from observed outcomes, the
//! pooled conservative variance estimator, and normal-quantile
//! confidence intervals.

use crate::design::Contrast;
use crate::error::{Error, Result};
use crate::numeric::{standard_normal_quantile, KahanSum};
use crate::randomizer::ObservedOutcomes;

/// Per-block contrast estimates and their pooled mean.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastEstimate {
    per_block: Vec<f64>,
    pooled: f64,
    contrast: Contrast,
}

impl ContrastEstimate {
    /// Builds from per-block estimates; the pooled value is their mean,
    /// accumulated in ascending block order so results are bit-stable.
    pub fn from_block_estimates(per_block: Vec<f64>, contrast: Contrast) -> Result<Self> {
        if per_block.is_empty() {
            return Err(Error::InvalidInput(
                "at least one block estimate is required".into(),
            ));
        }
        if per_block.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(
                "block estimates must be finite".into(),
            ));
        }
        let mut acc = KahanSum::new();
        for &v in &per_block {
            acc.add(v);
        }
        let pooled = acc.total() / per_block.len() as f64;
        Ok(Self {
            per_block,
            pooled,
            contrast,
        })
    }

    pub fn blocks(&self) -> usize {
        self.per_block.len()
    }

    /// Estimate for block `b`.
    pub fn block_estimate(&self, b: usize) -> f64 {
        self.per_block[b]
    }

    pub fn block_estimates(&self) -> &[f64] {
        &self.per_block
    }

    /// The pooled estimate: the mean of the per-block estimates.
    pub fn pooled(&self) -> f64 {
        self.pooled
    }

    pub fn contrast(&self) -> &Contrast {
        &self.contrast
    }
}

/// Two-sided normal-quantile confidence interval.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct ConfidenceInterval {
    pub center: f64,
    pub half_width: f64,
    pub level: f64,
    /// The (1 + level)/2 standard-normal quantile used for the width.
    pub z: f64,
}

impl ConfidenceInterval {
    pub fn lower(&self) -> f64 {
        self.center - self.half_width
    }

    pub fn upper(&self) -> f64 {
        self.center + self.half_width
    }

    pub fn contains(&self, x: f64) -> bool {
        (x - self.center).abs() <= self.half_width
    }
}

/// Applies a contrast to the observed outcomes: per block, the
/// coefficient-weighted sum of observed treatment values; pooled, their
/// mean over blocks. Unbiased for the population contrast under the
/// strip-plot randomization.
pub fn estimate_contrast(obs: &ObservedOutcomes, l: &Contrast) -> Result<ContrastEstimate> {
    let dims = obs.dims();
    l.check_table(&dims)?;
    let per_block: Vec<f64> = (0..dims.blocks())
        .map(|b| {
            let mut acc = KahanSum::new();
            for p in 0..dims.row_levels() {
                for q in 0..dims.col_levels() {
                    acc.add(l.coeff(p, q) * obs.value(b, p, q));
                }
            }
            acc.total()
        })
        .collect();
    ContrastEstimate::from_block_estimates(per_block, l.clone())
}

/// Pooled between-block variance estimator:
/// `sum_b (tau_b - tau)^2 / {B (B - 1)}`.
///
/// Its expectation exceeds the true sampling variance by the nonnegative
/// spread of the block-level contrasts, so intervals built on it are
/// conservative; the bias vanishes under between-block additivity.
/// The centered sum-of-squares form keeps the result exactly
/// nonnegative, and exactly zero when all block estimates coincide.
pub fn conservative_variance(est: &ContrastEstimate) -> Result<f64> {
    let b = est.blocks();
    if b < 2 {
        return Err(Error::TooFewBlocks {
            required: 2,
            actual: b,
        });
    }
    let pooled = est.pooled();
    let mut acc = KahanSum::new();
    for &v in est.block_estimates() {
        let d = v - pooled;
        acc.add(d * d);
    }
    Ok(acc.total() / (b as f64 * (b - 1) as f64))
}

/// Confidence interval centered at the pooled estimate with half-width
/// `z * sqrt(var0)`, `z` the (1 + level)/2 standard-normal quantile.
pub fn confidence_interval(est: &ContrastEstimate, level: f64) -> Result<ConfidenceInterval> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidLevel(level));
    }
    let variance = conservative_variance(est)?;
    let z = standard_normal_quantile((1.0 + level) / 2.0)
        .expect("(1 + level)/2 lies in (0, 1) for valid levels");
    Ok(ConfidenceInterval {
        center: est.pooled(),
        half_width: z * variance.sqrt(),
        level,
        z,
    })
}
