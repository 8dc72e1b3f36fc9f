//! One sparse kernel for every chain-structured format.
//!
//! Every supported network evaluates an entry as `f⁰ᵀ · M¹ ⋯ M^{K-1} · f^K`.
//! The ends are rows (fibers) of the first and last cores, and each inner
//! core contributes one `r × r` slice. The formats only
//! differ in which fiber or slice an entry `(i, j)` selects. A [`ChainPlan`]
//! records that selection for every observed entry and groups entries by it,
//! once per core, so the ALS and gradient kernels never look at the format.

use crate::dense::{C64, ZERO};
use crate::entries::ObservedEntries;
use crate::index::MultiIndexMap;
use crate::network::{matrix_times_vec, row_times_matrix, Core};

/// Which tensorization produced the plan.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    Butterfly(MultiIndexMap),
    Qtt(MultiIndexMap),
}

impl Layout {
    pub fn num_cores(&self) -> usize {
        match self {
            Layout::Butterfly(m) => m.levels + 2,
            Layout::Qtt(m) => m.levels + 1,
        }
    }
}

/// Entries of one core partitioned by the fiber/slice they touch.
///
/// Keys are ascending; inside a group entries keep the store's `(row, col)`
/// order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupedView {
    keys: Vec<usize>,
    offsets: Vec<usize>,
    order: Vec<u32>,
}

impl GroupedView {
    fn build(keys_per_entry: impl Iterator<Item = usize> + Clone, key_space: usize) -> Self {
        let mut counts = vec![0usize; key_space + 1];
        for k in keys_per_entry.clone() {
            counts[k + 1] += 1;
        }
        for k in 0..key_space {
            counts[k + 1] += counts[k];
        }
        let total = counts[key_space];
        let mut cursor = counts.clone();
        let mut order = vec![0u32; total];
        for (e, k) in keys_per_entry.enumerate() {
            order[cursor[k]] = e as u32;
            cursor[k] += 1;
        }
        let mut keys = Vec::new();
        let mut offsets = vec![0];
        for k in 0..key_space {
            if counts[k + 1] > counts[k] {
                keys.push(k);
                offsets.push(counts[k + 1]);
            }
        }
        Self {
            keys,
            offsets,
            order,
        }
    }

    /// Number of nonempty groups.
    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn keys(&self) -> &[usize] {
        &self.keys
    }

    /// Entry ids of group `g`.
    pub fn members(&self, g: usize) -> &[u32] {
        &self.order[self.offsets[g]..self.offsets[g + 1]]
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &[u32])> + '_ {
        (0..self.len()).map(move |g| (self.keys[g], self.members(g)))
    }

    /// Total entries over all groups.
    pub fn total(&self) -> usize {
        self.order.len()
    }
}

/// Per-entry fiber/slice selections plus one grouping per core.
#[derive(Debug, Clone)]
pub struct ChainPlan {
    layout: Layout,
    num_cores: usize,
    positions: Vec<u32>,
    groups: Vec<GroupedView>,
}

impl ChainPlan {
    /// Butterfly selections. The outer cores take fiber `key(i_0…i_{L-1})·c + i_L`
    /// of `S¹` and the `j` fiber of `S^{L+2}`; inner core `S^{m+1}` takes slice
    /// `key(i_0…i_{L-m}, j_0…j_{m-1})`.
    pub fn butterfly(entries: &ObservedEntries, map: MultiIndexMap) -> Self {
        let levels = map.levels;
        let c = map.leaf;
        let num_cores = levels + 2;
        let mut positions = Vec::with_capacity(entries.len() * num_cores);
        for e in 0..entries.len() {
            let (i, j) = (entries.row(e), entries.col(e));
            positions.push((map.reversed_block(i) * c + map.leaf_digit(i)) as u32);
            for m in 1..=levels {
                positions.push(map.inner_key(m, i, j) as u32);
            }
            positions.push((map.reversed_block(j) * c + map.leaf_digit(j)) as u32);
        }
        let blocks = map.blocks();
        let spaces: Vec<usize> = (0..num_cores)
            .map(|k| {
                if k == 0 || k == levels + 1 {
                    blocks * c
                } else {
                    2 * blocks
                }
            })
            .collect();
        Self::finish(Layout::Butterfly(map), num_cores, positions, &spaces)
    }

    /// QTT selections: fiber `(i_0, j_0)` of the first core, slice
    /// `i_m + 2 j_m` of inner core `m`, fiber `(i_L, j_L)` of the last core.
    pub fn qtt(entries: &ObservedEntries, map: MultiIndexMap) -> Self {
        let levels = map.levels;
        assert!(levels >= 1, "QTT needs at least one level");
        let c = map.leaf;
        let num_cores = levels + 1;
        let digit = |x: usize, m: usize| (x / (c << (levels - m - 1))) & 1;
        let mut positions = Vec::with_capacity(entries.len() * num_cores);
        for e in 0..entries.len() {
            let (i, j) = (entries.row(e), entries.col(e));
            positions.push((digit(i, 0) * 2 + digit(j, 0)) as u32);
            for m in 1..levels {
                positions.push((digit(i, m) + 2 * digit(j, m)) as u32);
            }
            positions.push(((i % c) * c + j % c) as u32);
        }
        let spaces: Vec<usize> = (0..num_cores)
            .map(|k| if k == levels { c * c } else { 4 })
            .collect();
        Self::finish(Layout::Qtt(map), num_cores, positions, &spaces)
    }

    fn finish(layout: Layout, num_cores: usize, positions: Vec<u32>, spaces: &[usize]) -> Self {
        let groups = (0..num_cores)
            .map(|k| {
                let keys = positions
                    .iter()
                    .skip(k)
                    .step_by(num_cores)
                    .map(|&p| p as usize);
                GroupedView::build(keys, spaces[k])
            })
            .collect();
        Self {
            layout,
            num_cores,
            positions,
            groups,
        }
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn num_cores(&self) -> usize {
        self.num_cores
    }

    pub fn num_entries(&self) -> usize {
        self.positions.len() / self.num_cores.max(1)
    }

    /// Selections of entry `e`, one per core.
    #[inline]
    pub fn path(&self, e: usize) -> &[u32] {
        &self.positions[e * self.num_cores..(e + 1) * self.num_cores]
    }

    /// Grouping for core `k` (0-based).
    pub fn group(&self, k: usize) -> &GroupedView {
        &self.groups[k]
    }
}

/// Scratch buffers and contraction helpers along one entry's path.
pub(crate) struct ChainWalker {
    r: usize,
    a: Vec<C64>,
    b: Vec<C64>,
    /// Number of `r × r` mat-vecs performed.
    pub matvecs: u64,
}

impl ChainWalker {
    pub fn new(r: usize) -> Self {
        Self {
            r,
            a: vec![ZERO; r],
            b: vec![ZERO; r],
            matvecs: 0,
        }
    }

    /// `f⁰ᵀ M¹ ⋯ M^{k-1}` into `out` (`1 ≤ k ≤ K`).
    pub fn left(&mut self, cores: &[Core], path: &[u32], k: usize, out: &mut [C64]) {
        let r = self.r;
        self.a.copy_from_slice(cores[0].fiber(path[0] as usize));
        for m in 1..k {
            row_times_matrix(&self.a, cores[m].slice(path[m] as usize), r, &mut self.b);
            std::mem::swap(&mut self.a, &mut self.b);
            self.matvecs += 1;
        }
        out.copy_from_slice(&self.a);
    }

    /// `M^{k+1} ⋯ M^{K-1} f^K` into `out` (`0 ≤ k ≤ K-1`).
    pub fn right(&mut self, cores: &[Core], path: &[u32], k: usize, out: &mut [C64]) {
        let r = self.r;
        let last = cores.len() - 1;
        self.a
            .copy_from_slice(cores[last].fiber(path[last] as usize));
        for m in (k + 1..last).rev() {
            matrix_times_vec(cores[m].slice(path[m] as usize), &self.a, r, &mut self.b);
            std::mem::swap(&mut self.a, &mut self.b);
            self.matvecs += 1;
        }
        out.copy_from_slice(&self.a);
    }

    /// Design row of core `k` for one entry: the entry equals `row · vec(slice)`
    /// with the slice flattened row-major (`u_a v_b` at `a·r + b` for inner cores).
    pub fn design_row(
        &mut self,
        cores: &[Core],
        path: &[u32],
        k: usize,
        row: &mut [C64],
        u: &mut [C64],
        v: &mut [C64],
    ) {
        let last = cores.len() - 1;
        if k == 0 {
            self.right(cores, path, 0, row);
        } else if k == last {
            self.left(cores, path, last, row);
        } else {
            self.left(cores, path, k, u);
            self.right(cores, path, k, v);
            let r = self.r;
            for a in 0..r {
                let ua = u[a];
                for (dst, vb) in row[a * r..(a + 1) * r].iter_mut().zip(v.iter()) {
                    *dst = ua * vb;
                }
            }
        }
    }
}

/// Value of the chain at one entry path.
pub(crate) fn chain_entry(cores: &[Core], path: &[u32], walker: &mut ChainWalker) -> C64 {
    let last = cores.len() - 1;
    let r = walker.r;
    let mut u = vec![ZERO; r];
    walker.left(cores, path, last, &mut u);
    u.iter()
        .zip(cores[last].fiber(path[last] as usize))
        .map(|(a, b)| a * b)
        .sum()
}

/// Residual `x_e − t_e` for every entry, in entry order.
pub(crate) fn chain_residuals(
    cores: &[Core],
    plan: &ChainPlan,
    entries: &ObservedEntries,
    r: usize,
) -> Vec<C64> {
    let mut w = ChainWalker::new(r);
    (0..entries.len())
        .map(|e| chain_entry(cores, plan.path(e), &mut w) - entries.value(e))
        .collect()
}

/// `½‖P_Ω(T − X)‖² + (λ/2) Σ ‖core‖²`.
pub(crate) fn chain_objective(
    cores: &[Core],
    plan: &ChainPlan,
    entries: &ObservedEntries,
    r: usize,
    reg: f64,
) -> f64 {
    let misfit: f64 = chain_residuals(cores, plan, entries, r)
        .iter()
        .map(|z| z.norm_sqr())
        .sum();
    let norm: f64 = cores.iter().map(Core::squared_norm).sum();
    0.5 * misfit + 0.5 * reg * norm
}
