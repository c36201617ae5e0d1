//! Strip-plot randomization: independent uniform row and column
//! permutations per block, drawn from counter-based random streams so
//! that every draw is reproducible and blocks never perturb each other.

use rand_chacha::ChaCha12Rng;
use rand_core::{RngCore, SeedableRng};

use crate::design::{DesignDims, PotentialOutcomeTable};
use crate::error::{Error, Result};

/// Default cap on the per-block assignment count `P! * Q!` accepted by
/// [`enumerate_block_assignments`]; 40 320 covers both factors up to
/// four levels.
pub const DEFAULT_ENUMERATION_CAP: u64 = 40_320;

/// Seed for a reproducible family of random streams.
///
/// One independent substream is derived per (block, axis) pair, so a
/// design with more blocks reuses the exact draws of a smaller one for
/// the blocks they share. Identical `SeedSpec` and dimensions always
/// produce identical assignments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct SeedSpec {
    pub seed: u64,
}

/// Substream selector within one seed.
#[derive(Debug, Clone, Copy)]
pub(crate) enum StreamKind {
    RowPerm = 0,
    ColPerm = 1,
    Noise = 2,
    Aux = 3,
}

impl SeedSpec {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    /// Derives a statistically independent seed for a tagged subtask
    /// (e.g. one Monte Carlo replicate). The mapping is a fixed bijective
    /// mix, so distinct tags never collide for a given seed.
    pub fn fold(self, tag: u64) -> SeedSpec {
        SeedSpec {
            seed: splitmix64(self.seed ^ splitmix64(tag)),
        }
    }

    /// Counter-based generator for the substream of one (block, kind)
    /// pair: same ChaCha key, distinct stream number.
    pub(crate) fn stream(self, block: usize, kind: StreamKind) -> ChaCha12Rng {
        let mut rng = ChaCha12Rng::seed_from_u64(self.seed);
        rng.set_stream((block as u64) * 4 + kind as u64);
        rng
    }
}

/// SplitMix64 finalizer; full-period mixing of a 64-bit word.
fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Uniform integer in `[0, n)` by rejection from the top 64 bits.
pub(crate) fn uniform_below(rng: &mut impl RngCore, n: u64) -> u64 {
    debug_assert!(n > 0);
    let zone = u64::MAX - u64::MAX % n;
    loop {
        let v = rng.next_u64();
        if v < zone {
            return v % n;
        }
    }
}

/// Uniform double in `[0, 1)` from the top 53 bits.
pub(crate) fn uniform_unit(rng: &mut impl RngCore) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Unbiased Fisher-Yates shuffle.
pub(crate) fn shuffle(rng: &mut impl RngCore, items: &mut [usize]) {
    for i in (1..items.len()).rev() {
        let j = uniform_below(rng, (i + 1) as u64) as usize;
        items.swap(i, j);
    }
}

/// Row and column permutations for a single block: `row_perm[p]` is the
/// 0-based row assigned to row-factor level `p`, `col_perm[q]` the
/// column assigned to column-factor level `q`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockAssignment {
    pub row_perm: Vec<usize>,
    pub col_perm: Vec<usize>,
}

/// Per-block row and column permutations for a whole design.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assignment {
    dims: DesignDims,
    row_perm: Vec<Vec<usize>>, // [b][p] -> row
    col_perm: Vec<Vec<usize>>, // [b][q] -> column
}

impl Assignment {
    /// Validates bijectivity of every per-block permutation.
    pub fn new(
        dims: DesignDims,
        row_perm: Vec<Vec<usize>>,
        col_perm: Vec<Vec<usize>>,
    ) -> Result<Self> {
        if row_perm.len() != dims.blocks() || col_perm.len() != dims.blocks() {
            return Err(Error::InvalidAssignment(format!(
                "expected permutations for {} blocks, got {} row / {} column",
                dims.blocks(),
                row_perm.len(),
                col_perm.len()
            )));
        }
        for (b, perm) in row_perm.iter().enumerate() {
            check_permutation(perm, dims.row_levels(), b, "row")?;
        }
        for (b, perm) in col_perm.iter().enumerate() {
            check_permutation(perm, dims.col_levels(), b, "column")?;
        }
        Ok(Self {
            dims,
            row_perm,
            col_perm,
        })
    }

    /// The identity assignment: level `p` on row `p`, level `q` on
    /// column `q`, in every block.
    pub fn identity(dims: DesignDims) -> Self {
        Self {
            dims,
            row_perm: vec![(0..dims.row_levels()).collect(); dims.blocks()],
            col_perm: vec![(0..dims.col_levels()).collect(); dims.blocks()],
        }
    }

    /// Assembles a full assignment from per-block permutation pairs.
    pub fn from_blocks(dims: DesignDims, blocks: Vec<BlockAssignment>) -> Result<Self> {
        let (row_perm, col_perm) = blocks
            .into_iter()
            .map(|ba| (ba.row_perm, ba.col_perm))
            .unzip();
        Self::new(dims, row_perm, col_perm)
    }

    pub fn dims(&self) -> DesignDims {
        self.dims
    }

    /// Row of block `b` assigned to row-factor level `p` (0-based).
    #[inline]
    pub fn row_of_level(&self, b: usize, p: usize) -> usize {
        self.row_perm[b][p]
    }

    /// Column of block `b` assigned to column-factor level `q` (0-based).
    #[inline]
    pub fn col_of_level(&self, b: usize, q: usize) -> usize {
        self.col_perm[b][q]
    }

    pub fn row_perms(&self) -> &[Vec<usize>] {
        &self.row_perm
    }

    pub fn col_perms(&self) -> &[Vec<usize>] {
        &self.col_perm
    }
}

fn check_permutation(perm: &[usize], n: usize, block: usize, axis: &str) -> Result<()> {
    if perm.len() != n {
        return Err(Error::InvalidAssignment(format!(
            "block {block}: {axis} permutation has length {}, expected {n}",
            perm.len()
        )));
    }
    let mut seen = vec![false; n];
    for &v in perm {
        if v >= n || seen[v] {
            return Err(Error::InvalidAssignment(format!(
                "block {block}: {axis} permutation {perm:?} is not a bijection on 0..{n}"
            )));
        }
        seen[v] = true;
    }
    Ok(())
}

/// Observed outcomes `Y^obs` selected by an assignment: one value per
/// (block, treatment), indexed `(b, p, q)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservedOutcomes {
    dims: DesignDims,
    y_obs: Vec<f64>, // [b][p][q]
}

impl ObservedOutcomes {
    pub fn dims(&self) -> DesignDims {
        self.dims
    }

    #[inline]
    pub fn value(&self, b: usize, p: usize, q: usize) -> f64 {
        self.y_obs[b * self.dims.treatments() + self.dims.treatment_index(p, q)]
    }

    /// The PQ observed values of one block in treatment order.
    pub fn block_values(&self, b: usize) -> &[f64] {
        let t = self.dims.treatments();
        &self.y_obs[b * t..(b + 1) * t]
    }
}

/// Draws a strip-plot assignment: in each block, the row-factor levels
/// are permuted uniformly over the rows and the column-factor levels
/// uniformly over the columns, independently across blocks and axes.
pub fn draw_assignment(dims: DesignDims, seed: SeedSpec) -> Assignment {
    let mut row_perm = Vec::with_capacity(dims.blocks());
    let mut col_perm = Vec::with_capacity(dims.blocks());
    for b in 0..dims.blocks() {
        let mut rows: Vec<usize> = (0..dims.row_levels()).collect();
        shuffle(&mut seed.stream(b, StreamKind::RowPerm), &mut rows);
        row_perm.push(rows);

        let mut cols: Vec<usize> = (0..dims.col_levels()).collect();
        shuffle(&mut seed.stream(b, StreamKind::ColPerm), &mut cols);
        col_perm.push(cols);
    }
    Assignment {
        dims,
        row_perm,
        col_perm,
    }
}

/// Extracts the observed slice of a science table under an assignment:
/// treatment `(p, q)` in block `b` is observed on the unit at row
/// `row_of_level(b, p)`, column `col_of_level(b, q)`.
pub fn observe(table: &PotentialOutcomeTable, a: &Assignment) -> Result<ObservedOutcomes> {
    let dims = table.dims();
    if a.dims() != dims {
        return Err(Error::DimensionMismatch(
            "assignment and table dimensions differ".into(),
        ));
    }
    let mut y_obs = Vec::with_capacity(dims.blocks() * dims.treatments());
    for b in 0..dims.blocks() {
        for p in 0..dims.row_levels() {
            for q in 0..dims.col_levels() {
                let r = a.row_of_level(b, p);
                let c = a.col_of_level(b, q);
                y_obs.push(table.outcome(b, r, c, p, q));
            }
        }
    }
    Ok(ObservedOutcomes { dims, y_obs })
}

/// Enumerates all `P! * Q!` per-block (row, column) permutation pairs
/// exactly once, under the default cap. Cross-block products are never
/// enumerated: block independence lets exact computations combine
/// per-block moments analytically.
pub fn enumerate_block_assignments(dims: DesignDims) -> Result<Vec<BlockAssignment>> {
    enumerate_block_assignments_with_cap(dims, DEFAULT_ENUMERATION_CAP)
}

/// [`enumerate_block_assignments`] with an explicit cap on `P! * Q!`.
pub fn enumerate_block_assignments_with_cap(
    dims: DesignDims,
    cap: u64,
) -> Result<Vec<BlockAssignment>> {
    let count = factorial(dims.row_levels()) * factorial(dims.col_levels());
    if count > cap as u128 {
        return Err(Error::EnumerationCapExceeded { actual: count, cap });
    }
    let rows = permutations(dims.row_levels());
    let cols = permutations(dims.col_levels());
    let mut out = Vec::with_capacity(count as usize);
    for rp in &rows {
        for cp in &cols {
            out.push(BlockAssignment {
                row_perm: rp.clone(),
                col_perm: cp.clone(),
            });
        }
    }
    Ok(out)
}

fn factorial(n: usize) -> u128 {
    (1..=n as u128).product()
}

/// All permutations of `0..n` in lexicographic order.
fn permutations(n: usize) -> Vec<Vec<usize>> {
    use itertools::Itertools;
    (0..n).permutations(n).collect()
}
