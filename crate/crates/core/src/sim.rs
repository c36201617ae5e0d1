//! Monte Carlo coverage study for the strip-plot confidence intervals,
//! plus the built-in outcome model it draws from and the standard
//! contrast set for the 2 x 3 factorial.
//!
//! The built-in model places block `b` (1-based) at
//!
//! ```text
//! Y_b(rc; pq) = b + b^h * { psi(pq) + noise_b(rc; pq) - mean noise }
//! ```
//!
//! with `psi(pq) = exp{ (p - 1.5)/2 + (q - 2)/3 + (p - 1.5)(q - 2) }` on
//! 1-based levels and iid uniform [-1, 1] noise centered within each
//! (block, treatment) cell. Centering makes every block mean exactly
//! `b + b^h psi(pq)`, so the population contrast and the bias of the
//! conservative variance estimator are known in closed form: the bias
//! scale factor grows from zero at `h = 0` toward 1/18 as the block
//! count grows at `h = 0.5`.

use rayon::prelude::*;
use serde::Serialize;

use crate::design::{Contrast, DesignDims, PotentialOutcomeTable};
use crate::error::{Error, Result};
use crate::estimators::{confidence_interval, estimate_contrast};
use crate::numeric::KahanSum;
use crate::randomizer::{draw_assignment, observe, uniform_below, uniform_unit, SeedSpec, StreamKind};
use crate::variance::conservative_variance_bias;

/// Environment variable overriding the replicate-level parallelism.
pub const THREADS_ENV_VAR: &str = "STRIP_RCT_THREADS";

const MODEL_ROWS: usize = 2;
const MODEL_COLS: usize = 3;

/// Treatment effect of the built-in outcome model at 0-based `(p, q)`:
/// `exp{ (p - 1.5)/2 + (q - 2)/3 + (p - 1.5)(q - 2) }` in 1-based levels.
pub fn treatment_effect(p: usize, q: usize) -> f64 {
    let pf = (p + 1) as f64;
    let qf = (q + 1) as f64;
    (0.5 * (pf - 1.5) + (qf - 2.0) / 3.0 + (pf - 1.5) * (qf - 2.0)).exp()
}

/// Generates a table from the built-in block-trend model with `blocks`
/// blocks and trend exponent `h >= 0`; dimensions are fixed at 2 x 3.
/// Deterministic in the seed: block `b` draws its noise from the
/// (block, noise) substream, 36 values in (p, q, r, c) order.
pub fn generate_outcome_table(
    blocks: usize,
    h: f64,
    seed: SeedSpec,
) -> Result<PotentialOutcomeTable> {
    if h.is_nan() || h < 0.0 {
        return Err(Error::InvalidScenario(format!(
            "trend exponent must be nonnegative, got {h}"
        )));
    }
    let dims = DesignDims::new(blocks, MODEL_ROWS, MODEL_COLS)?;
    let t = dims.treatments();
    let mut y = vec![0.0f64; blocks * t * t];
    let offset = |b: usize, r: usize, c: usize, p: usize, q: usize| {
        ((((b * MODEL_ROWS + r) * MODEL_COLS + c) * MODEL_ROWS) + p) * MODEL_COLS + q
    };
    for b in 0..blocks {
        let mut rng = seed.stream(b, StreamKind::Noise);
        let bf = (b + 1) as f64;
        let scale = bf.powf(h);
        for p in 0..MODEL_ROWS {
            for q in 0..MODEL_COLS {
                let mut noise = [0.0f64; MODEL_ROWS * MODEL_COLS];
                let mut acc = KahanSum::new();
                for v in noise.iter_mut() {
                    *v = 2.0 * uniform_unit(&mut rng) - 1.0;
                    acc.add(*v);
                }
                let mean = acc.total() / noise.len() as f64;
                let psi = treatment_effect(p, q);
                for r in 0..MODEL_ROWS {
                    for c in 0..MODEL_COLS {
                        let xi = noise[r * MODEL_COLS + c] - mean;
                        y[offset(b, r, c, p, q)] = bf + scale * (psi + xi);
                    }
                }
            }
        }
    }
    PotentialOutcomeTable::new(dims, y)
}

/// The five normalized contrasts of the 2 x 3 factorial used by the
/// coverage study, in treatment order (1,1), (1,2), (1,3), (2,1), (2,2),
/// (2,3): the row-factor main effect, two column-factor main-effect
/// contrasts, and two interaction contrasts. Each has zero sum and unit
/// Euclidean norm.
pub fn standard_contrasts() -> Vec<Contrast> {
    let s6 = 6.0f64.sqrt();
    let s12 = 12.0f64.sqrt();
    let defs: [(&str, [f64; 6]); 5] = [
        ("l1", [1.0, 1.0, 1.0, -1.0, -1.0, -1.0].map(|v| v / s6)),
        ("l2", [1.0, 0.0, -1.0, 1.0, 0.0, -1.0].map(|v| v / 2.0)),
        ("l3", [1.0, -2.0, 1.0, 1.0, -2.0, 1.0].map(|v| v / s12)),
        ("l4", [1.0, 0.0, -1.0, -1.0, 0.0, 1.0].map(|v| v / 2.0)),
        ("l5", [1.0, -2.0, 1.0, -1.0, 2.0, -1.0].map(|v| v / s12)),
    ];
    defs.into_iter()
        .map(|(label, coeffs)| {
            Contrast::new(MODEL_ROWS, MODEL_COLS, coeffs.to_vec())
                .expect("standard contrasts are valid")
                .with_label(label)
        })
        .collect()
}

/// Deterministic scale factor of the conservative-variance bias under
/// the built-in model: `sum_b (b^h - m)^2 / {B (B - 1)}` with `m` the
/// mean of `b^h` over blocks. The bias for a contrast is the squared
/// contrast applied to the treatment effects times this factor.
pub fn trend_bias_factor(blocks: usize, h: f64) -> Result<f64> {
    if blocks < 2 {
        return Err(Error::TooFewBlocks {
            required: 2,
            actual: blocks,
        });
    }
    let powers: Vec<f64> = (1..=blocks).map(|b| (b as f64).powf(h)).collect();
    let mut macc = KahanSum::new();
    for &v in &powers {
        macc.add(v);
    }
    let mean = macc.total() / blocks as f64;
    let mut acc = KahanSum::new();
    for &v in &powers {
        acc.add((v - mean) * (v - mean));
    }
    Ok(acc.total() / (blocks as f64 * (blocks - 1) as f64))
}

/// Uniform random integer-valued table on `[lo, hi]`, deterministic in
/// the seed; handy for exact-enumeration cross-checks.
pub fn random_integer_table(
    dims: DesignDims,
    seed: SeedSpec,
    lo: i64,
    hi: i64,
) -> Result<PotentialOutcomeTable> {
    if lo > hi {
        return Err(Error::InvalidInput(format!(
            "empty integer range [{lo}, {hi}]"
        )));
    }
    let span = (hi - lo + 1) as u64;
    let t = dims.treatments();
    let mut y = Vec::with_capacity(dims.blocks() * t * t);
    for b in 0..dims.blocks() {
        let mut rng = seed.stream(b, StreamKind::Noise);
        for _ in 0..t * t {
            y.push((lo + uniform_below(&mut rng, span) as i64) as f64);
        }
    }
    PotentialOutcomeTable::new(dims, y)
}

/// One coverage-study scenario: a block count and trend exponent for
/// the built-in model, a replicate budget, and the contrasts to track.
#[derive(Debug, Clone)]
pub struct SimScenario {
    pub blocks: usize,
    pub h: f64,
    pub reps: usize,
    pub level: f64,
    pub seed: SeedSpec,
    pub contrasts: Vec<Contrast>,
    /// Redraw the outcome noise for every replicate instead of holding
    /// one table fixed and repeating only the randomization.
    pub redraw_outcomes: bool,
}

impl SimScenario {
    /// Scenario with the standard contrasts at level 0.95.
    pub fn standard(blocks: usize, h: f64, reps: usize, seed: SeedSpec) -> Self {
        Self {
            blocks,
            h,
            reps,
            level: 0.95,
            seed,
            contrasts: standard_contrasts(),
            redraw_outcomes: false,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.blocks < 2 {
            return Err(Error::TooFewBlocks {
                required: 2,
                actual: self.blocks,
            });
        }
        if self.reps < 1 {
            return Err(Error::InvalidScenario("reps must be at least 1".into()));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::InvalidLevel(self.level));
        }
        if self.h.is_nan() || self.h < 0.0 {
            return Err(Error::InvalidScenario(format!(
                "trend exponent must be nonnegative, got {}",
                self.h
            )));
        }
        if self.contrasts.is_empty() {
            return Err(Error::InvalidScenario(
                "at least one contrast is required".into(),
            ));
        }
        for l in &self.contrasts {
            if l.row_levels() != MODEL_ROWS || l.col_levels() != MODEL_COLS {
                return Err(Error::InvalidScenario(
                    "contrasts must be over the 2x3 factorial of the built-in model".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Coverage results for one contrast within a scenario.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContrastCoverage {
    pub contrast_id: String,
    /// Fraction of replicates whose interval covered the true contrast.
    pub coverage: f64,
    /// True population contrast of the scenario table.
    pub tau_true: f64,
    /// Deterministic bias of the conservative variance estimator.
    pub delta0: f64,
    /// Average interval half-width over replicates.
    pub mean_ci_half_width: f64,
}

/// Full record of one scenario run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoverageReport {
    pub h: f64,
    pub blocks: usize,
    pub reps: usize,
    pub level: f64,
    pub seed: u64,
    pub redraw_outcomes: bool,
    pub per_contrast: Vec<ContrastCoverage>,
}

/// Runs one coverage scenario: generates the scenario table, draws
/// `reps` independent strip-plot assignments (replicate `i` folds `i`
/// into the seed), and tallies how often each contrast's interval
/// covers the true value.
///
/// Replicates run in parallel; per-replicate results are collected in
/// replicate order and reduced sequentially, so the report is identical
/// for every thread count. `STRIP_RCT_THREADS` overrides the pool size.
pub fn run_coverage(sc: &SimScenario) -> Result<CoverageReport> {
    sc.validate()?;
    let base_table = generate_outcome_table(sc.blocks, sc.h, sc.seed)?;
    let dims = base_table.dims();
    let nc = sc.contrasts.len();

    // Deterministic per-contrast targets, computed once from the base
    // table. With redrawn outcomes the noise re-centers within cells, so
    // block means and hence these targets are unchanged up to round-off.
    let mut tau_true = Vec::with_capacity(nc);
    let mut delta0 = Vec::with_capacity(nc);
    for l in &sc.contrasts {
        tau_true.push(crate::design::population_contrast(&base_table, l)?);
        delta0.push(conservative_variance_bias(&base_table, l)?);
    }

    let replicate = |rep: usize| -> Vec<(bool, f64)> {
        let rep_seed = sc.seed.fold(rep as u64);
        let table = if sc.redraw_outcomes {
            std::borrow::Cow::Owned(
                generate_outcome_table(sc.blocks, sc.h, rep_seed)
                    .expect("scenario validated"),
            )
        } else {
            std::borrow::Cow::Borrowed(&base_table)
        };
        let assignment = draw_assignment(dims, rep_seed);
        let obs = observe(&table, &assignment).expect("assignment matches table dims");
        sc.contrasts
            .iter()
            .enumerate()
            .map(|(s, l)| {
                let est = estimate_contrast(&obs, l).expect("contrast matches dims");
                let ci = confidence_interval(&est, sc.level).expect("level validated");
                (ci.contains(tau_true[s]), ci.half_width)
            })
            .collect()
    };

    let rows: Vec<Vec<(bool, f64)>> = match threads_override()? {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::InvalidScenario(format!("thread pool: {e}")))?
            .install(|| (0..sc.reps).into_par_iter().map(replicate).collect()),
        None => (0..sc.reps).into_par_iter().map(replicate).collect(),
    };

    // Sequential reduction in replicate order keeps the output
    // independent of scheduling.
    let mut hits = vec![0u64; nc];
    let mut width_acc = vec![KahanSum::new(); nc];
    for row in &rows {
        for (s, &(covered, hw)) in row.iter().enumerate() {
            if covered {
                hits[s] += 1;
            }
            width_acc[s].add(hw);
        }
    }

    let per_contrast = sc
        .contrasts
        .iter()
        .enumerate()
        .map(|(s, l)| ContrastCoverage {
            contrast_id: l
                .label()
                .map(str::to_owned)
                .unwrap_or_else(|| format!("c{}", s + 1)),
            coverage: hits[s] as f64 / sc.reps as f64,
            tau_true: tau_true[s],
            delta0: delta0[s],
            mean_ci_half_width: width_acc[s].total() / sc.reps as f64,
        })
        .collect();

    Ok(CoverageReport {
        h: sc.h,
        blocks: sc.blocks,
        reps: sc.reps,
        level: sc.level,
        seed: sc.seed.seed,
        redraw_outcomes: sc.redraw_outcomes,
        per_contrast,
    })
}

fn threads_override() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV_VAR) {
        Ok(v) => v
            .parse::<usize>()
            .map(Some)
            .map_err(|_| Error::InvalidScenario(format!("{THREADS_ENV_VAR} must be an integer"))),
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => Err(Error::InvalidScenario(format!("{THREADS_ENV_VAR}: {e}"))),
    }
}

/// Renders reports as an aligned text table: one row per scenario, one
/// coverage column per contrast.
pub fn render_table(reports: &[CoverageReport]) -> String {
    let mut out = String::new();
    if reports.is_empty() {
        return out;
    }
    let first = &reports[0];
    out.push_str(&format!(
        "Simulated coverage of nominal {:.0}% confidence intervals ({} replicates, seed {})\n\n",
        first.level * 100.0,
        first.reps,
        first.seed
    ));
    out.push_str(&format!("{:<16}", "scenario"));
    for cc in &first.per_contrast {
        out.push_str(&format!("{:>9}", cc.contrast_id));
    }
    out.push('\n');
    for report in reports {
        out.push_str(&format!(
            "{:<16}",
            format!("h={} B={}", report.h, report.blocks)
        ));
        for cc in &report.per_contrast {
            out.push_str(&format!("{:>9.4}", cc.coverage));
        }
        out.push('\n');
    }
    out
}

/// Writes reports as CSV, one row per (scenario, contrast).
pub fn write_csv<W: std::io::Write>(reports: &[CoverageReport], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "h",
        "B",
        "reps",
        "level",
        "contrast_id",
        "coverage",
        "delta0",
        "tau_true",
        "mean_ci_halfwidth",
        "seed",
    ])?;
    for report in reports {
        for cc in &report.per_contrast {
            w.write_record([
                format!("{}", report.h),
                format!("{}", report.blocks),
                format!("{}", report.reps),
                format!("{}", report.level),
                cc.contrast_id.clone(),
                format!("{}", cc.coverage),
                format!("{}", cc.delta0),
                format!("{}", cc.tau_true),
                format!("{}", cc.mean_ci_half_width),
                format!("{}", report.seed),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Serializes reports as pretty JSON with full per-scenario metadata.
pub fn to_json(reports: &[CoverageReport]) -> Result<String> {
    Ok(serde_json::to_string_pretty(reports)? + "\n")
}
