//! Compressed scene state: per-Gaussian arrays plus the SH and SR codebooks.
//!
//! Each Gaussian owns its position and opacity logit and holds two row
//! indices (`g2sh`, `g2sr`) into shared codebooks. Codebook rows carry a
//! reference count, an optional split-lineage parent and live on a free list
//! once no Gaussian refers to them.

use std::collections::BTreeSet;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_distr::Normal;

use crate::error::{Error, Result};
use crate::ChainRng;

/// Width of an SR row: three log-scales followed by a `(w, x, y, z)` quaternion.
pub const SR_DIM: usize = 7;

/// Highest supported spherical-harmonics degree.
pub const MAX_SH_DEGREE: usize = 3;

/// Number of SH basis functions per colour channel for `degree`.
pub fn sh_coeff_count(degree: usize) -> usize {
    (degree + 1) * (degree + 1)
}

/// Width of an SH row for `degree`: `3 * (degree + 1)^2`, laid out coefficient-major
/// (`row[k * 3 + channel]`).
pub fn sh_dim(degree: usize) -> usize {
    3 * sh_coeff_count(degree)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CodebookKind {
    Sh,
    Sr,
}

impl CodebookKind {
    pub const ALL: [CodebookKind; 2] = [CodebookKind::Sh, CodebookKind::Sr];

    pub fn as_str(self) -> &'static str {
        match self {
            CodebookKind::Sh => "sh",
            CodebookKind::Sr => "sr",
        }
    }
}

impl std::fmt::Display for CodebookKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Axis-aligned box used for initialization and scene bounds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn new(min: [f64; 3], max: [f64; 3]) -> Self {
        Self { min, max }
    }

    pub fn cube(half_extent: f64) -> Self {
        Self::new([-half_extent; 3], [half_extent; 3])
    }

    pub fn diagonal(&self) -> f64 {
        (0..3)
            .map(|a| (self.max[a] - self.min[a]).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    pub fn center(&self) -> [f64; 3] {
        std::array::from_fn(|a| 0.5 * (self.min[a] + self.max[a]))
    }

    pub fn validate(&self) -> Result<()> {
        for a in 0..3 {
            if !(self.min[a].is_finite() && self.max[a].is_finite() && self.min[a] <= self.max[a]) {
                return Err(Error::invalid(format!("degenerate box axis {a}")));
            }
        }
        Ok(())
    }
}

/// Row store of shared parameter vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct Codebook {
    dim: usize,
    values: Vec<f32>,
    refcount: Vec<u32>,
    parent: Vec<Option<u32>>,
    free: BTreeSet<u32>,
    live: usize,
}

impl Codebook {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            values: Vec::new(),
            refcount: Vec::new(),
            parent: Vec::new(),
            free: BTreeSet::new(),
            live: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Allocated rows, live or free.
    pub fn capacity(&self) -> usize {
        self.refcount.len()
    }

    /// Rows with a positive reference count (`|SH|` or `|SR|`).
    pub fn live_count(&self) -> usize {
        self.live
    }

    pub fn is_live(&self, row: u32) -> bool {
        (row as usize) < self.capacity() && self.refcount[row as usize] > 0
    }

    pub fn refcount(&self, row: u32) -> u32 {
        self.refcount[row as usize]
    }

    pub fn parent(&self, row: u32) -> Option<u32> {
        self.parent[row as usize]
    }

    pub fn row(&self, row: u32) -> &[f32] {
        let r = row as usize;
        &self.values[r * self.dim..(r + 1) * self.dim]
    }

    /// Mutable access to a row's values. Structure (refcounts, lineage) is untouched.
    pub fn row_mut(&mut self, row: u32) -> &mut [f32] {
        let r = row as usize;
        &mut self.values[r * self.dim..(r + 1) * self.dim]
    }

    /// Flat `capacity × dim` storage, including dead rows.
    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn free_rows(&self) -> impl Iterator<Item = u32> + '_ {
        self.free.iter().copied()
    }

    pub fn live_rows(&self) -> impl Iterator<Item = u32> + '_ {
        (0..self.capacity() as u32).filter(|&r| self.refcount[r as usize] > 0)
    }

    /// Live `(child, parent)` split-lineage pairs in ascending child order.
    pub fn lineage_pairs(&self) -> Vec<(u32, u32)> {
        self.live_rows()
            .filter_map(|r| self.parent[r as usize].map(|p| (r, p)))
            .collect()
    }

    /// Reserves a row holding `values`. The row has refcount 0 until the caller
    /// attaches a Gaussian to it with [`Codebook::incref`].
    pub(crate) fn allocate(&mut self, values: &[f32], parent: Option<u32>) -> Result<u32> {
        if values.len() != self.dim {
            return Err(Error::Allocation(format!(
                "row width {} does not match codebook dim {}",
                values.len(),
                self.dim
            )));
        }
        if let Some(p) = parent {
            if !self.is_live(p) {
                return Err(Error::Allocation(format!("parent row {p} is not live")));
            }
        }
        let row = match self.free.pop_first() {
            Some(r) => r,
            None => {
                let r = u32::try_from(self.capacity())
                    .map_err(|_| Error::Allocation("codebook index space exhausted".into()))?;
                self.values.resize(self.values.len() + self.dim, 0.0);
                self.refcount.push(0);
                self.parent.push(None);
                r
            }
        };
        self.row_mut(row).copy_from_slice(values);
        self.parent[row as usize] = parent;
        Ok(row)
    }

    pub(crate) fn incref(&mut self, row: u32) {
        let rc = &mut self.refcount[row as usize];
        if *rc == 0 {
            self.live += 1;
        }
        *rc += 1;
    }

    /// Drops one reference; frees the row when it reaches zero.
    pub(crate) fn decref(&mut self, row: u32) {
        let r = row as usize;
        debug_assert!(self.refcount[r] > 0);
        self.refcount[r] -= 1;
        if self.refcount[r] == 0 {
            self.release(row);
        }
    }

    fn release(&mut self, row: u32) {
        let r = row as usize;
        self.live -= 1;
        // Children of a freed row inherit its parent so lineage always points at live rows.
        let grandparent = self.parent[r].take();
        for p in self.parent.iter_mut() {
            if *p == Some(row) {
                *p = grandparent;
            }
        }
        self.values[r * self.dim..(r + 1) * self.dim].fill(0.0);
        self.free.insert(row);
    }

    fn check(&self, name: &str, expected: &[u32]) -> Result<()> {
        let bad = |m: String| Err(Error::invalid(format!("{name} codebook: {m}")));
        if expected.len() != self.capacity() || self.values.len() != self.capacity() * self.dim {
            return bad("storage length mismatch".into());
        }
        let mut live = 0;
        for r in 0..self.capacity() {
            if self.refcount[r] != expected[r] {
                return bad(format!(
                    "row {r} refcount {} but {} referrers",
                    self.refcount[r], expected[r]
                ));
            }
            let freed = self.free.contains(&(r as u32));
            if (self.refcount[r] == 0) != freed {
                return bad(format!("row {r} free-list membership disagrees with refcount"));
            }
            if self.refcount[r] > 0 {
                live += 1;
            } else if self.parent[r].is_some() {
                return bad(format!("freed row {r} retains a parent"));
            }
            if let Some(p) = self.parent[r] {
                if !self.is_live(p) {
                    return bad(format!("row {r} has dead parent {p}"));
                }
            }
        }
        if live != self.live {
            return bad(format!("live count {} but {live} live rows", self.live));
        }
        for start in 0..self.capacity() {
            let mut cur = self.parent[start];
            let mut steps = 0;
            while let Some(p) = cur {
                steps += 1;
                if steps > self.capacity() {
                    return bad(format!("parent chain from row {start} is cyclic"));
                }
                cur = self.parent[p as usize];
            }
        }
        Ok(())
    }
}

/// Per-Gaussian arrays, all of length `N`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GaussianArrays {
    positions: Vec<[f32; 3]>,
    opacity_logits: Vec<f32>,
    g2sh: Vec<u32>,
    g2sr: Vec<u32>,
}

impl GaussianArrays {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[[f32; 3]] {
        &self.positions
    }

    pub fn opacity_logits(&self) -> &[f32] {
        &self.opacity_logits
    }

    pub fn opacity(&self, i: usize) -> f64 {
        sigmoid(self.opacity_logits[i] as f64)
    }

    pub fn g2sh(&self) -> &[u32] {
        &self.g2sh
    }

    pub fn g2sr(&self) -> &[u32] {
        &self.g2sr
    }

    pub fn index(&self, which: CodebookKind) -> &[u32] {
        match which {
            CodebookKind::Sh => &self.g2sh,
            CodebookKind::Sr => &self.g2sr,
        }
    }

    fn push(&mut self, position: [f32; 3], logit: f32, sh: u32, sr: u32) {
        self.positions.push(position);
        self.opacity_logits.push(logit);
        self.g2sh.push(sh);
        self.g2sr.push(sr);
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Byte accounting of the model arrays, float32 parameters and 32-bit indices.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MemoryReport {
    pub compressed_bytes: u64,
    pub dense_equivalent_bytes: u64,
    pub ratio: f64,
}

/// Flat per-codebook contents used to assemble a state from external data.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CodebookRows {
    /// `rows × dim` values.
    pub values: Vec<f32>,
    pub parents: Vec<Option<u32>>,
}

/// Full compressed scene `{G, C}`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelState {
    gaussians: GaussianArrays,
    sh: Codebook,
    sr: Codebook,
    sh_degree: usize,
    pub iteration: u64,
    pub rng_seed: u64,
}

impl ModelState {
    /// An empty scene with no Gaussians and empty codebooks.
    pub fn empty(sh_degree: usize) -> Result<Self> {
        check_degree(sh_degree)?;
        Ok(Self {
            gaussians: GaussianArrays::default(),
            sh: Codebook::new(sh_dim(sh_degree)),
            sr: Codebook::new(SR_DIM),
            sh_degree,
            iteration: 0,
            rng_seed: 0,
        })
    }

    /// Random scene with one private SH row and one private SR row per Gaussian.
    ///
    /// Positions are uniform in `bounds`, opacities start at 0.5, SH DC terms are
    /// uniform in `[-0.5, 0.5]` with zero higher orders, and every SR row is an
    /// isotropic scale of `0.01 * diagonal` with the identity rotation.
    pub fn init_one_to_one(n: usize, sh_degree: usize, seed: u64, bounds: Aabb) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("initial Gaussian count must be at least 1"));
        }
        bounds.validate()?;
        let mut state = Self::empty(sh_degree)?;
        state.rng_seed = seed;
        let mut rng = ChainRng::seed_from_u64(seed);
        let log_scale = (0.01 * bounds.diagonal()).max(f64::MIN_POSITIVE).ln() as f32;
        let sr_row = [log_scale, log_scale, log_scale, 1.0, 0.0, 0.0, 0.0];
        let mut sh_row = vec![0.0f32; sh_dim(sh_degree)];
        for _ in 0..n {
            let position: [f32; 3] =
                std::array::from_fn(|a| rng.random_range(bounds.min[a]..=bounds.max[a]) as f32);
            for c in sh_row.iter_mut().take(3) {
                *c = rng.random_range(-0.5..=0.5f64) as f32;
            }
            let sh = state.sh.allocate(&sh_row, None)?;
            let sr = state.sr.allocate(&sr_row, None)?;
            state.sh.incref(sh);
            state.sr.incref(sr);
            state.gaussians.push(position, 0.0, sh, sr);
        }
        Ok(state)
    }

    /// Builds a state from explicit arrays, recomputing reference counts.
    ///
    /// Every supplied row must be referenced by at least one Gaussian and every
    /// parent must name another supplied row without forming a cycle.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        sh_degree: usize,
        positions: Vec<[f32; 3]>,
        opacity_logits: Vec<f32>,
        g2sh: Vec<u32>,
        g2sr: Vec<u32>,
        sh_rows: CodebookRows,
        sr_rows: CodebookRows,
    ) -> Result<Self> {
        check_degree(sh_degree)?;
        let n = positions.len();
        if opacity_logits.len() != n || g2sh.len() != n || g2sr.len() != n {
            return Err(Error::invalid("Gaussian arrays differ in length"));
        }
        let sh = build_codebook("sh", sh_dim(sh_degree), sh_rows, &g2sh)?;
        let sr = build_codebook("sr", SR_DIM, sr_rows, &g2sr)?;
        let state = Self {
            gaussians: GaussianArrays {
                positions,
                opacity_logits,
                g2sh,
                g2sr,
            },
            sh,
            sr,
            sh_degree,
            iteration: 0,
            rng_seed: 0,
        };
        state.check_invariants()?;
        Ok(state)
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn sh_degree(&self) -> usize {
        self.sh_degree
    }

    pub fn gaussians(&self) -> &GaussianArrays {
        &self.gaussians
    }

    pub fn codebook(&self, which: CodebookKind) -> &Codebook {
        match which {
            CodebookKind::Sh => &self.sh,
            CodebookKind::Sr => &self.sr,
        }
    }

    /// Codebook access for value updates. Structural changes go through
    /// [`ModelState::remap_gaussian`], [`ModelState::split_row`] and
    /// [`ModelState::merge_rows`].
    pub fn codebook_mut(&mut self, which: CodebookKind) -> &mut Codebook {
        match which {
            CodebookKind::Sh => &mut self.sh,
            CodebookKind::Sr => &mut self.sr,
        }
    }

    pub fn sh(&self) -> &Codebook {
        &self.sh
    }

    pub fn sr(&self) -> &Codebook {
        &self.sr
    }

    pub fn positions(&self) -> &[[f32; 3]] {
        &self.gaussians.positions
    }

    pub fn positions_mut(&mut self) -> &mut [[f32; 3]] {
        &mut self.gaussians.positions
    }

    pub fn opacity_logits_mut(&mut self) -> &mut [f32] {
        &mut self.gaussians.opacity_logits
    }

    pub fn row_of(&self, i: usize, which: CodebookKind) -> u32 {
        self.gaussians.index(which)[i]
    }

    /// The SH and SR rows Gaussian `i` is mapped to.
    pub fn lookup(&self, i: usize) -> Result<(&[f32], &[f32])> {
        if i >= self.len() {
            return Err(Error::invalid(format!(
                "Gaussian {i} out of range for {} Gaussians",
                self.len()
            )));
        }
        Ok((
            self.sh.row(self.gaussians.g2sh[i]),
            self.sr.row(self.gaussians.g2sr[i]),
        ))
    }

    /// Points Gaussian `i` at `new_row`, freeing the old row if it loses its last referrer.
    pub fn remap_gaussian(&mut self, i: usize, which: CodebookKind, new_row: u32) -> Result<()> {
        if i >= self.len() {
            return Err(Error::invalid(format!("Gaussian {i} out of range")));
        }
        if !self.codebook(which).is_live(new_row) {
            return Err(Error::invalid(format!("{which} row {new_row} is not live")));
        }
        self.remap_unchecked(i, which, new_row);
        Ok(())
    }

    fn remap_unchecked(&mut self, i: usize, which: CodebookKind, new_row: u32) {
        let (index, book) = match which {
            CodebookKind::Sh => (&mut self.gaussians.g2sh, &mut self.sh),
            CodebookKind::Sr => (&mut self.gaussians.g2sr, &mut self.sr),
        };
        let old = index[i];
        if old == new_row {
            return;
        }
        book.incref(new_row);
        index[i] = new_row;
        book.decref(old);
    }

    /// Moves Gaussian `i` onto a fresh row holding `values` whose lineage parent
    /// is the row it leaves. Returns the new row index.
    pub fn split_row(&mut self, i: usize, which: CodebookKind, values: &[f32]) -> Result<u32> {
        if i >= self.len() {
            return Err(Error::invalid(format!("Gaussian {i} out of range")));
        }
        let old = self.row_of(i, which);
        let book = self.codebook_mut(which);
        let row = book.allocate(values, Some(old))?;
        book.incref(row);
        // Row is live through the provisional reference; hand it over to Gaussian i.
        self.remap_unchecked(i, which, row);
        self.codebook_mut(which).decref(row);
        Ok(row)
    }

    /// Remaps every Gaussian on `child` to `parent`, freeing `child`. The parent's
    /// values are left unchanged. Returns the number of Gaussians moved.
    pub fn merge_rows(&mut self, which: CodebookKind, child: u32, parent: u32) -> Result<usize> {
        let book = self.codebook(which);
        if child == parent || !book.is_live(child) || !book.is_live(parent) {
            return Err(Error::invalid(format!(
                "cannot merge {which} row {child} into {parent}"
            )));
        }
        let movers: Vec<usize> = self
            .gaussians
            .index(which)
            .iter()
            .enumerate()
            .filter(|&(_, &r)| r == child)
            .map(|(i, _)| i)
            .collect();
        for &i in &movers {
            self.remap_unchecked(i, which, parent);
        }
        Ok(movers.len())
    }

    /// Clones `min(floor(growth_rate * N), cap - N)` Gaussians. Sources are drawn with
    /// probability proportional to opacity; clones copy the source's opacity logit,
    /// jitter its position by isotropic noise of std `jitter`, and share its rows.
    pub fn densify(
        &mut self,
        growth_rate: f64,
        cap: usize,
        jitter: f64,
        rng: &mut impl Rng,
    ) -> Result<usize> {
        if !(growth_rate > 0.0) {
            return Err(Error::invalid("growth rate must be positive"));
        }
        let n = self.len();
        if cap < n {
            return Err(Error::invalid(format!("cap {cap} below current count {n}")));
        }
        let k = ((growth_rate * n as f64).floor() as usize).min(cap - n);
        if k == 0 {
            return Ok(0);
        }
        let weights: Vec<f64> = (0..n).map(|i| self.gaussians.opacity(i)).collect();
        let pick = WeightedIndex::new(&weights)
            .map_err(|e| Error::invalid(format!("densify weights: {e}")))?;
        let noise = Normal::new(0.0, jitter.max(0.0))
            .map_err(|e| Error::invalid(format!("densify jitter: {e}")))?;
        for _ in 0..k {
            let src = pick.sample(rng);
            let base = self.gaussians.positions[src];
            let position: [f32; 3] =
                std::array::from_fn(|a| (base[a] as f64 + noise.sample(rng)) as f32);
            let logit = self.gaussians.opacity_logits[src];
            let sh = self.gaussians.g2sh[src];
            let sr = self.gaussians.g2sr[src];
            self.sh.incref(sh);
            self.sr.incref(sr);
            self.gaussians.push(position, logit, sh, sr);
        }
        Ok(k)
    }

    pub fn model_bytes(&self) -> MemoryReport {
        let n = self.len() as u64;
        let dim_sh = self.sh.dim() as u64;
        let compressed = n * (3 * 4 + 4 + 4 + 4)
            + self.sh.live_count() as u64 * dim_sh * 4
            + self.sr.live_count() as u64 * SR_DIM as u64 * 4;
        let dense = n * (3 + 1 + dim_sh + SR_DIM as u64) * 4;
        let ratio = if compressed == 0 {
            1.0
        } else {
            dense as f64 / compressed as f64
        };
        MemoryReport {
            compressed_bytes: compressed,
            dense_equivalent_bytes: dense,
            ratio,
        }
    }

    /// Histogram of row reference counts: `(refcount, number of live rows)` ascending.
    pub fn refcount_histogram(&self, which: CodebookKind) -> Vec<(u32, usize)> {
        let book = self.codebook(which);
        let mut hist = std::collections::BTreeMap::new();
        for r in book.live_rows() {
            *hist.entry(book.refcount(r)).or_insert(0usize) += 1;
        }
        hist.into_iter().collect()
    }

    /// Full scan of every structural invariant.
    pub fn check_invariants(&self) -> Result<()> {
        let n = self.len();
        let g = &self.gaussians;
        if g.opacity_logits.len() != n || g.g2sh.len() != n || g.g2sr.len() != n {
            return Err(Error::invalid("Gaussian arrays differ in length"));
        }
        for (book, index, name) in [(&self.sh, &g.g2sh, "sh"), (&self.sr, &g.g2sr, "sr")] {
            let mut counts = vec![0u32; book.capacity()];
            for (i, &r) in index.iter().enumerate() {
                let Some(c) = counts.get_mut(r as usize) else {
                    return Err(Error::invalid(format!(
                        "Gaussian {i} {name} index {r} beyond capacity"
                    )));
                };
                *c += 1;
            }
            book.check(name, &counts)?;
        }
        Ok(())
    }
}

fn check_degree(sh_degree: usize) -> Result<()> {
    if sh_degree > MAX_SH_DEGREE {
        return Err(Error::invalid(format!(
            "SH degree {sh_degree} outside 0..={MAX_SH_DEGREE}"
        )));
    }
    Ok(())
}

fn build_codebook(name: &str, dim: usize, rows: CodebookRows, index: &[u32]) -> Result<Codebook> {
    if rows.values.len() != rows.parents.len() * dim {
        return Err(Error::invalid(format!(
            "{name} rows: {} values for {} rows of width {dim}",
            rows.values.len(),
            rows.parents.len()
        )));
    }
    let count = rows.parents.len();
    let mut refcount = vec![0u32; count];
    for (i, &r) in index.iter().enumerate() {
        match refcount.get_mut(r as usize) {
            Some(c) => *c += 1,
            None => {
                return Err(Error::invalid(format!(
                    "Gaussian {i} refers to missing {name} row {r}"
                )))
            }
        }
    }
    if let Some(r) = refcount.iter().position(|&c| c == 0) {
        return Err(Error::invalid(format!("{name} row {r} has no referrer")));
    }
    for (r, p) in rows.parents.iter().enumerate() {
        if let Some(p) = *p {
            if p as usize >= count || p as usize == r {
                return Err(Error::invalid(format!("{name} row {r} has invalid parent {p}")));
            }
        }
    }
    Ok(Codebook {
        dim,
        values: rows.values,
        refcount,
        parent: rows.parents,
        free: BTreeSet::new(),
        live: count,
    })
}
