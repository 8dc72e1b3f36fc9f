//! Tensorized butterfly and QTT networks stored in the flattened slice layout.
//!
//! Every core is a stack of equally shaped frontal slices addressed by a block
//! key. For the butterfly network with `L` levels, leaf `c` and rank `r`:
//!
//! | core | slices | slice shape | key digits |
//! |------|--------|-------------|------------|
//! | `S^1` | `2^L` | `c × r` | `i_0 … i_{L-1}` |
//! | `S^{m+1}`, `1 ≤ m ≤ L` | `2^{L+1}` | `r × r` | `i_0 … i_{L-m}, j_0 … j_{m-1}` |
//! | `S^{L+2}` | `2^L` | `c × r` | `j_0 … j_{L-1}` |
//!
//! Rows of the outer slices are indexed by the leaf digit. An entry is
//! `x_ij = s¹ᵀ · S² ⋯ S^{L+1} · s^{L+2}` where `s¹` and `s^{L+2}` are the rows
//! of the outer slices picked by `(i_0 … i_L)` and `(j_0 … j_L)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dense::{check_dense_size, DenseMatrix, C64, ONE, ZERO};
use crate::error::{Error, Result};
use crate::index::MultiIndexMap;

/// One core: `slices` frontal slices of shape `rows × cols`, slice-major and
/// row-major inside each slice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Core {
    pub slices: usize,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<C64>,
}

impl Core {
    pub fn zeros(slices: usize, rows: usize, cols: usize) -> Self {
        Self {
            slices,
            rows,
            cols,
            data: vec![ZERO; slices * rows * cols],
        }
    }

    pub fn filled(slices: usize, rows: usize, cols: usize, value: C64) -> Self {
        Self {
            slices,
            rows,
            cols,
            data: vec![value; slices * rows * cols],
        }
    }

    pub fn from_data(slices: usize, rows: usize, cols: usize, data: Vec<C64>) -> Result<Self> {
        if data.len() != slices * rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "core of {slices}x{rows}x{cols} given {} values",
                data.len()
            )));
        }
        Ok(Self {
            slices,
            rows,
            cols,
            data,
        })
    }

    fn gaussian(slices: usize, rows: usize, cols: usize, scale: f64, rng: &mut ChaCha8Rng) -> Self {
        let data = (0..slices * rows * cols)
            .map(|_| {
                let re: f64 = StandardNormal.sample(rng);
                let im: f64 = StandardNormal.sample(rng);
                C64::new(re, im) * (scale / std::f64::consts::SQRT_2)
            })
            .collect();
        Self {
            slices,
            rows,
            cols,
            data,
        }
    }

    #[inline]
    pub fn slice_len(&self) -> usize {
        self.rows * self.cols
    }

    #[inline]
    pub fn slice(&self, k: usize) -> &[C64] {
        let len = self.slice_len();
        &self.data[k * len..(k + 1) * len]
    }

    #[inline]
    pub fn slice_mut(&mut self, k: usize) -> &mut [C64] {
        let len = self.slice_len();
        &mut self.data[k * len..(k + 1) * len]
    }

    /// Row `f` of the core viewed as a `(slices·rows) × cols` matrix.
    #[inline]
    pub fn fiber(&self, f: usize) -> &[C64] {
        &self.data[f * self.cols..(f + 1) * self.cols]
    }

    /// Number of rows of the `(slices·rows) × cols` view.
    #[inline]
    pub fn fibers(&self) -> usize {
        self.slices * self.rows
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.slices, self.rows, self.cols)
    }

    pub fn squared_norm(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum()
    }
}

/// Butterfly matrix of dimension `c·2^L` as a tensor network of `L+2` cores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ButterflyNetwork {
    pub levels: usize,
    pub leaf: usize,
    pub rank: usize,
    pub cores: Vec<Core>,
}

/// Expected `(slices, rows, cols)` of butterfly core `k` (0-based).
pub(crate) fn butterfly_core_shape(
    levels: usize,
    leaf: usize,
    rank: usize,
    k: usize,
) -> (usize, usize, usize) {
    if k == 0 || k == levels + 1 {
        (1 << levels, leaf, rank)
    } else {
        (1 << (levels + 1), rank, rank)
    }
}

fn check_sizes(levels: usize, leaf: usize, rank: usize) -> Result<MultiIndexMap> {
    if rank == 0 {
        return Err(Error::InvalidParameter("rank must be >= 1".into()));
    }
    MultiIndexMap::new(levels, leaf)
}

impl ButterflyNetwork {
    /// Validates core shapes against `(levels, leaf, rank)`.
    pub fn from_cores(levels: usize, leaf: usize, rank: usize, cores: Vec<Core>) -> Result<Self> {
        check_sizes(levels, leaf, rank)?;
        if cores.len() != levels + 2 {
            return Err(Error::ShapeMismatch(format!(
                "butterfly with {levels} levels needs {} cores, got {}",
                levels + 2,
                cores.len()
            )));
        }
        for (k, core) in cores.iter().enumerate() {
            let want = butterfly_core_shape(levels, leaf, rank, k);
            if core.shape() != want || core.data.len() != want.0 * want.1 * want.2 {
                return Err(Error::ShapeMismatch(format!(
                    "core {} has shape {:?}, expected {:?}",
                    k + 1,
                    core.shape(),
                    want
                )));
            }
        }
        Ok(Self {
            levels,
            leaf,
            rank,
            cores,
        })
    }

    /// Network with every core entry equal to `value`.
    pub fn constant(levels: usize, leaf: usize, rank: usize, value: C64) -> Result<Self> {
        check_sizes(levels, leaf, rank)?;
        let cores = (0..levels + 2)
            .map(|k| {
                let (s, r, c) = butterfly_core_shape(levels, leaf, rank, k);
                Core::filled(s, r, c, value)
            })
            .collect();
        Ok(Self {
            levels,
            leaf,
            rank,
            cores,
        })
    }

    pub fn zeros(levels: usize, leaf: usize, rank: usize) -> Result<Self> {
        Self::constant(levels, leaf, rank, ZERO)
    }

    /// Cores filled with seeded complex Gaussians of variance `scale²`.
    pub fn random(levels: usize, leaf: usize, rank: usize, seed: u64, scale: f64) -> Result<Self> {
        check_sizes(levels, leaf, rank)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cores = (0..levels + 2)
            .map(|k| {
                let (s, r, c) = butterfly_core_shape(levels, leaf, rank, k);
                Core::gaussian(s, r, c, scale, &mut rng)
            })
            .collect();
        Ok(Self {
            levels,
            leaf,
            rank,
            cores,
        })
    }

    pub fn index_map(&self) -> MultiIndexMap {
        MultiIndexMap {
            levels: self.levels,
            leaf: self.leaf,
        }
    }

    pub fn n(&self) -> usize {
        self.leaf << self.levels
    }

    pub fn parameter_count(&self) -> usize {
        self.cores.iter().map(|c| c.data.len()).sum()
    }

    pub fn squared_norm(&self) -> f64 {
        self.cores.iter().map(Core::squared_norm).sum()
    }

    /// Entry `(i, j)` as the chained product over the cores, `O(L r²)`.
    pub fn reconstruct_entry(&self, i: usize, j: usize) -> Result<C64> {
        let n = self.n();
        for idx in [i, j] {
            if idx >= n {
                return Err(Error::IndexOutOfRange {
                    index: idx,
                    bound: n,
                });
            }
        }
        let mut scratch = vec![ZERO; 2 * self.rank];
        Ok(self.entry_unchecked(i, j, &mut scratch))
    }

    pub(crate) fn entry_unchecked(&self, i: usize, j: usize, scratch: &mut [C64]) -> C64 {
        let map = self.index_map();
        let r = self.rank;
        let (u, w) = scratch.split_at_mut(r);
        let first = &self.cores[0];
        let fi = map.reversed_block(i) * self.leaf + map.leaf_digit(i);
        u.copy_from_slice(first.fiber(fi));
        for m in 1..=self.levels {
            let slice = self.cores[m].slice(map.inner_key(m, i, j));
            row_times_matrix(u, slice, r, &mut w[..r]);
            u.copy_from_slice(&w[..r]);
        }
        let last = &self.cores[self.levels + 1];
        let fj = map.reversed_block(j) * self.leaf + map.leaf_digit(j);
        u.iter().zip(last.fiber(fj)).map(|(a, b)| a * b).sum()
    }

    /// Full `n × n` matrix, entry by entry.
    pub fn reconstruct_dense(&self) -> Result<DenseMatrix> {
        let n = self.n();
        check_dense_size(n)?;
        let mut scratch = vec![ZERO; 2 * self.rank];
        let mut out = DenseMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                out[(i, j)] = self.entry_unchecked(i, j, &mut scratch);
            }
        }
        Ok(out)
    }

    /// `u = X v` by contracting the cores right to left, `O(n r² L)` work and
    /// `O(2^L r)` intermediate storage.
    pub fn matvec(&self, v: &[C64]) -> Result<Vec<C64>> {
        let n = self.n();
        if v.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "vector of length {} for a {n}x{n} butterfly",
                v.len()
            )));
        }
        let levels = self.levels;
        let leaf = self.leaf;
        let r = self.rank;
        let map = self.index_map();
        let blocks = 1usize << levels;

        // State after contracting S^{L+2}: indexed by (j_0 … j_{L-1}) key and r_{L+1}.
        let last = &self.cores[levels + 1];
        let mut state = vec![ZERO; blocks * r];
        for j in 0..n {
            let key = map.reversed_block(j);
            let row = last.fiber(key * leaf + map.leaf_digit(j));
            let dst = &mut state[key * r..(key + 1) * r];
            for (d, s) in dst.iter_mut().zip(row) {
                *d += s * v[j];
            }
        }
        // Inner cores S^{m+1}, m = L … 1. The state after S^{m+1} is keyed by
        // (i_0 … i_{L-m-1}, j_0 … j_{m-1}); the state after S^m by
        // (i_0 … i_{L-m}, j_0 … j_{m-2}).
        for m in (1..=levels).rev() {
            let core = &self.cores[m];
            let ibits = levels - m + 1;
            let mut next = vec![ZERO; blocks * r];
            for key in 0..core.slices {
                let ipart = key & ((1 << ibits) - 1);
                let jpart = key >> ibits;
                let left = ipart | ((jpart & ((1 << (m - 1)) - 1)) << ibits);
                let right = (ipart & ((1 << (ibits - 1)) - 1)) | (jpart << (ibits - 1));
                let slice = core.slice(key);
                let src = &state[right * r..(right + 1) * r];
                let dst = &mut next[left * r..(left + 1) * r];
                for a in 0..r {
                    let srow = &slice[a * r..(a + 1) * r];
                    dst[a] += srow.iter().zip(src).map(|(s, x)| s * x).sum::<C64>();
                }
            }
            state = next;
        }
        // S^1: the state is keyed by (i_0 … i_{L-1}).
        let first = &self.cores[0];
        let out = (0..n)
            .map(|i| {
                let key = map.reversed_block(i);
                let row = first.fiber(key * leaf + map.leaf_digit(i));
                row.iter()
                    .zip(&state[key * r..(key + 1) * r])
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect();
        Ok(out)
    }
}

/// `out = uᵀ M` for an `r × r` row-major `M`.
#[inline]
pub(crate) fn row_times_matrix(u: &[C64], m: &[C64], r: usize, out: &mut [C64]) {
    out.fill(ZERO);
    for (a, &ua) in u.iter().enumerate() {
        let row = &m[a * r..(a + 1) * r];
        for (o, &x) in out.iter_mut().zip(row) {
            *o += ua * x;
        }
    }
}

/// `out = M v` for an `r × r` row-major `M`.
#[inline]
pub(crate) fn matrix_times_vec(m: &[C64], v: &[C64], r: usize, out: &mut [C64]) {
    for (a, o) in out.iter_mut().enumerate() {
        *o = m[a * r..(a + 1) * r]
            .iter()
            .zip(v)
            .map(|(x, y)| x * y)
            .sum();
    }
}

/// Quantized tensor train of the same tensorized matrix: `L+1` cores.
///
/// Core 1 has shape `(2, 2, r)` indexed `(i_0, j_0, :)`; inner cores
/// `m = 2 … L` hold four `r × r` slices keyed by `i_{m-1} + 2 j_{m-1}`; the last
/// core has shape `(c, c, r)` indexed `(i_L, j_L, :)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QttNetwork {
    pub levels: usize,
    pub leaf: usize,
    pub rank: usize,
    pub cores: Vec<Core>,
}

pub(crate) fn qtt_core_shape(
    levels: usize,
    leaf: usize,
    rank: usize,
    k: usize,
) -> (usize, usize, usize) {
    if k == 0 {
        (2, 2, rank)
    } else if k == levels {
        (leaf, leaf, rank)
    } else {
        (4, rank, rank)
    }
}

impl QttNetwork {
    fn check(levels: usize, leaf: usize, rank: usize) -> Result<()> {
        if levels == 0 {
            return Err(Error::InvalidParameter(
                "QTT needs at least one level".into(),
            ));
        }
        check_sizes(levels, leaf, rank).map(|_| ())
    }

    pub fn from_cores(levels: usize, leaf: usize, rank: usize, cores: Vec<Core>) -> Result<Self> {
        Self::check(levels, leaf, rank)?;
        if cores.len() != levels + 1 {
            return Err(Error::ShapeMismatch(format!(
                "QTT with {levels} levels needs {} cores, got {}",
                levels + 1,
                cores.len()
            )));
        }
        for (k, core) in cores.iter().enumerate() {
            let want = qtt_core_shape(levels, leaf, rank, k);
            if core.shape() != want || core.data.len() != want.0 * want.1 * want.2 {
                return Err(Error::ShapeMismatch(format!(
                    "QTT core {} has shape {:?}, expected {:?}",
                    k + 1,
                    core.shape(),
                    want
                )));
            }
        }
        Ok(Self {
            levels,
            leaf,
            rank,
            cores,
        })
    }

    pub fn random(levels: usize, leaf: usize, rank: usize, seed: u64, scale: f64) -> Result<Self> {
        Self::check(levels, leaf, rank)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cores = (0..=levels)
            .map(|k| {
                let (s, r, c) = qtt_core_shape(levels, leaf, rank, k);
                Core::gaussian(s, r, c, scale, &mut rng)
            })
            .collect();
        Ok(Self {
            levels,
            leaf,
            rank,
            cores,
        })
    }

    pub fn n(&self) -> usize {
        self.leaf << self.levels
    }

    pub fn index_map(&self) -> MultiIndexMap {
        MultiIndexMap {
            levels: self.levels,
            leaf: self.leaf,
        }
    }

    pub fn reconstruct_entry(&self, i: usize, j: usize) -> Result<C64> {
        let n = self.n();
        for idx in [i, j] {
            if idx >= n {
                return Err(Error::IndexOutOfRange {
                    index: idx,
                    bound: n,
                });
            }
        }
        let map = self.index_map();
        let r = self.rank;
        let ti = map.index_to_tuple(i)?;
        let tj = map.index_to_tuple(j)?;
        let mut u = self.cores[0].fiber(ti[0] * 2 + tj[0]).to_vec();
        let mut w = vec![ZERO; r];
        for m in 1..self.levels {
            row_times_matrix(&u, self.cores[m].slice(ti[m] + 2 * tj[m]), r, &mut w);
            u.copy_from_slice(&w);
        }
        let last = self.cores[self.levels].fiber(ti[self.levels] * self.leaf + tj[self.levels]);
        Ok(u.iter().zip(last).map(|(a, b)| a * b).sum())
    }

    pub fn reconstruct_dense(&self) -> Result<DenseMatrix> {
        let n = self.n();
        check_dense_size(n)?;
        let mut out = DenseMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                out[(i, j)] = self.reconstruct_entry(i, j)?;
            }
        }
        Ok(out)
    }
}

/// All-ones rank-1 butterfly; represents the all-ones matrix.
pub fn ones_network(levels: usize, leaf: usize) -> Result<ButterflyNetwork> {
    ButterflyNetwork::constant(levels, leaf, 1, ONE)
}

/// Seeded random butterfly network.
pub fn random_network(
    levels: usize,
    leaf: usize,
    rank: usize,
    seed: u64,
    scale: f64,
) -> Result<ButterflyNetwork> {
    ButterflyNetwork::random(levels, leaf, rank, seed, scale)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn real(v: f64) -> C64 {
        C64::new(v, 0.0)
    }

    #[test]
    fn shapes_follow_layout() {
        let net = random_network(3, 4, 2, 1, 1.0).unwrap();
        assert_eq!(net.cores.len(), 5);
        assert_eq!(net.cores[0].shape(), (8, 4, 2));
        for k in 1..=3 {
            assert_eq!(net.cores[k].shape(), (16, 2, 2));
        }
        assert_eq!(net.cores[4].shape(), (8, 4, 2));
        assert_eq!(net.n(), 32);
        assert!(ButterflyNetwork::from_cores(3, 4, 2, net.cores[..4].to_vec()).is_err());
        assert!(random_network(1, 1, 0, 1, 1.0).is_err());
    }

    #[test]
    fn ones_network_is_all_ones() {
        let net = ones_network(2, 3).unwrap();
        assert_eq!(net.reconstruct_entry(5, 7).unwrap(), ONE);
        let d = net.reconstruct_dense().unwrap();
        assert!(d.values.iter().all(|&v| v == ONE));
    }

    #[test]
    fn level_zero_is_outer_product() {
        let s1 = Core::from_data(1, 2, 1, vec![real(1.0), real(2.0)]).unwrap();
        let s2 = Core::from_data(1, 2, 1, vec![real(3.0), real(4.0)]).unwrap();
        let net = ButterflyNetwork::from_cores(0, 2, 1, vec![s1, s2]).unwrap();
        assert_eq!(net.reconstruct_entry(1, 0).unwrap(), real(6.0));
        let d = net.reconstruct_dense().unwrap();
        assert_eq!(d, DenseMatrix::from_real_rows(&[&[3.0, 4.0], &[6.0, 8.0]]));
    }

    #[test]
    fn random_is_deterministic_and_scaled() {
        let a = random_network(2, 2, 2, 7, 1.0).unwrap();
        let b = random_network(2, 2, 2, 7, 1.0).unwrap();
        let c = random_network(2, 2, 2, 8, 1.0).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let z = random_network(2, 2, 2, 7, 0.0).unwrap();
        assert!(z
            .reconstruct_dense()
            .unwrap()
            .values
            .iter()
            .all(|v| *v == ZERO));
    }

    #[test]
    fn entry_range_checked() {
        let net = ones_network(1, 2).unwrap();
        assert!(net.reconstruct_entry(4, 0).is_err());
        assert!(net.matvec(&[ONE; 3]).is_err());
    }

    #[test]
    fn matvec_of_ones_sums_vector() {
        let net = ones_network(3, 2).unwrap();
        let v: Vec<C64> = (0..16)
            .map(|k| C64::new(k as f64, -(k as f64) / 2.0))
            .collect();
        let total: C64 = v.iter().sum();
        let u = net.matvec(&v).unwrap();
        assert!(u.iter().all(|x| (x - total).norm() < 1e-12));
        assert!(net
            .matvec(&vec![ZERO; 16])
            .unwrap()
            .iter()
            .all(|x| *x == ZERO));
    }

    #[test]
    fn qtt_shapes() {
        let q = QttNetwork::random(3, 4, 2, 1, 1.0).unwrap();
        assert_eq!(q.cores.len(), 4);
        assert_eq!(q.cores[0].shape(), (2, 2, 2));
        assert_eq!(q.cores[1].shape(), (4, 2, 2));
        assert_eq!(q.cores[3].shape(), (4, 4, 2));
        assert!(QttNetwork::random(0, 4, 2, 1, 1.0).is_err());
    }
}
