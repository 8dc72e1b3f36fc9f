//! Initial guesses: low-rank completion followed by a randomized conversion
//! of the rank-`R` factorization into butterfly cores.
//!
//! The conversion walks the row tree from the leaves up on the column side
//! and the column tree from the leaves up on the row side, `H = L/2` levels
//! each. At every step a small stacked factor is sketched from the right by a
//! Gaussian test matrix, and pivoted QR of the sketch yields the transfer
//! slice. The two halves meet in the middle, where the remaining `r × r`
//! couplings are folded into the core `S^{H+1}`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::als::{als_lowrank, AlsConfig};
use crate::dense::{DenseMatrix, C64};
use crate::entries::{EvalSplit, ObservedEntries};
use crate::error::{Error, Result};
use crate::index::block_key;
use crate::linalg::householder_qrcp;
use crate::network::{ButterflyNetwork, Core};
use crate::report::ConvergenceReport;

/// Factors of `X = A Bᵀ`, both `n × R`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LowRankPair {
    pub a: DenseMatrix,
    pub b: DenseMatrix,
}

impl LowRankPair {
    pub fn new(a: DenseMatrix, b: DenseMatrix) -> Result<Self> {
        if a.rows != b.rows || a.cols != b.cols {
            return Err(Error::ShapeMismatch(format!(
                "factors are {}x{} and {}x{}",
                a.rows, a.cols, b.rows, b.cols
            )));
        }
        Ok(Self { a, b })
    }

    pub(crate) fn from_row_major(n: usize, rank: usize, a: Vec<C64>, b: Vec<C64>) -> Result<Self> {
        Self::new(
            DenseMatrix::from_vec(n, rank, a)?,
            DenseMatrix::from_vec(n, rank, b)?,
        )
    }

    /// Complex Gaussian factors with entries of standard deviation `scale`.
    pub fn random(n: usize, rank: usize, seed: u64, scale: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = gaussian_matrix(n, rank, scale, &mut rng);
        let b = gaussian_matrix(n, rank, scale, &mut rng);
        Self { a, b }
    }

    pub fn n(&self) -> usize {
        self.a.rows
    }

    pub fn rank(&self) -> usize {
        self.a.cols
    }

    pub fn to_dense(&self) -> Result<DenseMatrix> {
        crate::dense::check_dense_size(self.n())?;
        self.a.matmul(&self.b.transpose())
    }

    pub fn entry(&self, i: usize, j: usize) -> C64 {
        self.a
            .row(i)
            .iter()
            .zip(self.b.row(j))
            .map(|(x, y)| x * y)
            .sum()
    }

    /// The same matrix as a zero-level butterfly network with leaf size `n`.
    pub fn into_network(self) -> Result<ButterflyNetwork> {
        let (n, rank) = (self.n(), self.rank());
        let cores = vec![
            Core::from_data(1, n, rank, self.a.values)?,
            Core::from_data(1, n, rank, self.b.values)?,
        ];
        ButterflyNetwork::from_cores(0, n, rank, cores)
    }
}

fn gaussian_matrix(rows: usize, cols: usize, scale: f64, rng: &mut ChaCha8Rng) -> DenseMatrix {
    let s = scale / std::f64::consts::SQRT_2;
    DenseMatrix::from_fn(rows, cols, |_, _| {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        C64::new(s * re, s * im)
    })
}

/// Orthonormal basis of a sketch plus the matching projection of a factor.
#[derive(Debug, Clone)]
pub struct QrcpResult {
    /// `rows × r`, orthonormal columns.
    pub q: DenseMatrix,
    /// `Qᴴ · factor`.
    pub v: DenseMatrix,
    pub pivots: Vec<usize>,
}

/// Pivoted QR of `sketch` truncated to `r` columns, and `V = Qᴴ factor`.
pub fn qrcp_truncate(sketch: &DenseMatrix, factor: &DenseMatrix, r: usize) -> Result<QrcpResult> {
    if r == 0 || r > sketch.rows.min(sketch.cols) {
        return Err(Error::InvalidParameter(format!(
            "QRCP rank {r} must lie in 1..={} for a {}x{} sketch",
            sketch.rows.min(sketch.cols),
            sketch.rows,
            sketch.cols
        )));
    }
    if factor.rows != sketch.rows {
        return Err(Error::ShapeMismatch(
            "factor and sketch row counts differ".into(),
        ));
    }
    let (q, pivots) = householder_qrcp(sketch, r);
    let v = q.adjoint().matmul(factor)?;
    Ok(QrcpResult { q, v, pivots })
}

/// [`qrcp_truncate`] at rank `min(r, rows, cols)`, with `Q` padded by zero
/// columns and `V` by zero rows up to `r`.
fn padded_basis(sketch: &DenseMatrix, factor: &DenseMatrix, r: usize) -> Result<QrcpResult> {
    let k = r.min(sketch.rows).min(sketch.cols);
    let mut res = qrcp_truncate(sketch, factor, k)?;
    if k < r {
        let q = &res.q;
        res.q = DenseMatrix::from_fn(q.rows, r, |i, j| {
            if j < k {
                q[(i, j)]
            } else {
                C64::new(0.0, 0.0)
            }
        });
        res.v.values.resize(r * factor.cols, C64::new(0.0, 0.0));
        res.v.rows = r;
    }
    Ok(res)
}

/// Settings for [`lr_to_butterfly`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConversionConfig {
    /// Extra sketch columns; `None` means `min(10, max(c − r, 0))`.
    pub oversampling: Option<usize>,
    pub seed: u64,
}

impl Default for ConversionConfig {
    fn default() -> Self {
        Self {
            oversampling: None,
            seed: 0,
        }
    }
}

/// Rows of `m` selected by `rows`.
fn take_rows(m: &DenseMatrix, start: usize, len: usize) -> DenseMatrix {
    DenseMatrix::from_vec(
        len,
        m.cols,
        m.values[start * m.cols..(start + len) * m.cols].to_vec(),
    )
    .expect("row range in bounds")
}

fn stack(top: &DenseMatrix, bottom: &DenseMatrix) -> DenseMatrix {
    let mut values = top.values.clone();
    values.extend_from_slice(&bottom.values);
    DenseMatrix::from_vec(top.rows + bottom.rows, top.cols, values).expect("same widths")
}

/// Digits of tree node `node` at depth `depth`, most significant first.
fn node_digits(node: usize, depth: usize) -> Vec<usize> {
    (0..depth).map(|t| (node >> (depth - 1 - t)) & 1).collect()
}

/// Converts `X = A Bᵀ` into an `L`-level butterfly of rank `r`.
///
/// Exact up to roundoff whenever every complementary block of `X` has rank at
/// most `r`. Requires even `L` and `r ≥ 1`. When `r > c` the leaf bases
/// cannot have `r` orthonormal columns; they are padded with zero columns.
pub fn lr_to_butterfly(
    pair: &LowRankPair,
    levels: usize,
    leaf: usize,
    rank: usize,
    cfg: &ConversionConfig,
) -> Result<ButterflyNetwork> {
    if levels % 2 != 0 {
        return Err(Error::InvalidParameter(format!(
            "conversion needs an even number of levels, got {levels}"
        )));
    }
    if rank == 0 {
        return Err(Error::InvalidParameter(
            "butterfly rank must be at least 1".into(),
        ));
    }
    let map = crate::index::MultiIndexMap::new(levels, leaf)?;
    let n = map.n();
    if pair.n() != n {
        return Err(Error::ShapeMismatch(format!(
            "factors have {} rows, network size is {n}",
            pair.n()
        )));
    }
    let p = cfg
        .oversampling
        .unwrap_or_else(|| 10.min(leaf.saturating_sub(rank)));
    let width = rank + p;
    let half = levels / 2;
    let blocks = map.blocks();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut net = ButterflyNetwork::zeros(levels, leaf, rank)?;
    let r = rank;

    // Column side, leaves: A_β ≈ Q_β V_β with Q_β from a sketch of A_β Bᵀ.
    let sketch_b = pair
        .b
        .transpose()
        .matmul(&gaussian_matrix(n, width, 1.0, &mut rng))?;
    // v[node at depth L−m][column node at depth m]
    let mut v: Vec<Vec<DenseMatrix>> = Vec::with_capacity(blocks);
    for beta in 0..blocks {
        let a_block = take_rows(&pair.a, beta * leaf, leaf);
        let res = padded_basis(&a_block.matmul(&sketch_b)?, &a_block, r)?;
        let key = block_key(levels, 1, &node_digits(beta, levels))?;
        net.cores[0].slice_mut(key).copy_from_slice(&res.q.values);
        v.push(vec![res.v]);
    }

    for m in 1..=half {
        let col_len = n >> m;
        let mut next = Vec::with_capacity(blocks >> m);
        let omega = gaussian_matrix(col_len, width, 1.0, &mut rng);
        for tau in 0..blocks >> m {
            let mut row = Vec::with_capacity(1 << m);
            for nu in 0..1usize << m {
                let parent = nu >> 1;
                let stacked = stack(&v[2 * tau][parent], &v[2 * tau + 1][parent]);
                let b_nu = take_rows(&pair.b, nu * col_len, col_len);
                let sketch = stacked.matmul(&b_nu.transpose())?.matmul(&omega)?;
                let res = padded_basis(&sketch, &stacked, r)?;
                for child in 0..2 {
                    let mut digits = node_digits(2 * tau + child, levels - m + 1);
                    digits.extend(node_digits(nu, m));
                    let key = block_key(levels, m + 1, &digits)?;
                    let src = &res.q.values[child * r * r..(child + 1) * r * r];
                    net.cores[m].slice_mut(key).copy_from_slice(src);
                }
                row.push(res.v);
            }
            next.push(row);
        }
        v = next;
    }

    // Row side, leaves: B_γ ≈ Q_γ W_γ.
    let sketch_a = pair
        .a
        .transpose()
        .matmul(&gaussian_matrix(n, width, 1.0, &mut rng))?;
    let last = levels + 1;
    let mut w: Vec<Vec<DenseMatrix>> = Vec::with_capacity(blocks);
    for gamma in 0..blocks {
        let b_block = take_rows(&pair.b, gamma * leaf, leaf);
        let res = padded_basis(&b_block.matmul(&sketch_a)?, &b_block, r)?;
        let key = block_key(levels, levels + 2, &node_digits(gamma, levels))?;
        net.cores[last]
            .slice_mut(key)
            .copy_from_slice(&res.q.values);
        w.push(vec![res.v]);
    }

    for l in 1..=half {
        let m = levels + 1 - l;
        let row_len = n >> l;
        let mut next = Vec::with_capacity(blocks >> l);
        let omega = gaussian_matrix(row_len, width, 1.0, &mut rng);
        for nu in 0..blocks >> l {
            let mut col = Vec::with_capacity(1 << l);
            for rho in 0..1usize << l {
                let parent = rho >> 1;
                let stacked = stack(&w[2 * nu][parent], &w[2 * nu + 1][parent]);
                let a_rho = take_rows(&pair.a, rho * row_len, row_len);
                let sketch = stacked.matmul(&a_rho.transpose())?.matmul(&omega)?;
                let res = padded_basis(&sketch, &stacked, r)?;
                for child in 0..2 {
                    // Left state (ρ, ν) at rank a, right state (ρ', child) at rank b.
                    let mut digits = node_digits(rho, l);
                    digits.extend(node_digits(2 * nu + child, levels - l + 1));
                    let key = block_key(levels, m + 1, &digits)?;
                    let slice = net.cores[m].slice_mut(key);
                    for a in 0..r {
                        for b in 0..r {
                            slice[a * r + b] = res.q[(child * r + b, a)];
                        }
                    }
                }
                col.push(res.v);
            }
            next.push(col);
        }
        w = next;
    }

    // Middle: fold C(τ, ν) = V(τ, ν) W(ν, τ)ᵀ into the core whose right state
    // is (τ, ν).
    for tau in 0..1usize << half {
        for nu in 0..1usize << half {
            let c = v[tau][nu].matmul(&w[nu][tau].transpose())?;
            if half == 0 {
                let core = &mut net.cores[0];
                let slice = DenseMatrix::from_vec(leaf, r, core.slice(0).to_vec())?;
                core.slice_mut(0).copy_from_slice(&slice.matmul(&c)?.values);
                continue;
            }
            for child in 0..2 {
                let mut digits = node_digits(2 * tau + child, half + 1);
                digits.extend(node_digits(nu, half));
                let key = block_key(levels, half + 1, &digits)?;
                let core = &mut net.cores[half];
                let slice = DenseMatrix::from_vec(r, r, core.slice(key).to_vec())?;
                core.slice_mut(key)
                    .copy_from_slice(&slice.matmul(&c)?.values);
            }
        }
    }
    Ok(net)
}

/// Settings for [`generate_initial_guess`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitConfig {
    /// Low-rank `R`; `None` uses the butterfly rank.
    pub init_rank: Option<usize>,
    pub iters: usize,
    pub seed: u64,
    pub oversampling: Option<usize>,
    pub reg: Option<f64>,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self {
            init_rank: None,
            iters: 10,
            seed: 0,
            oversampling: None,
            reg: None,
        }
    }
}

/// The initial network together with how the low-rank stage went.
#[derive(Debug, Clone)]
pub struct InitialGuess {
    pub network: ButterflyNetwork,
    pub lowrank_train_err: f64,
    pub lowrank_report: ConvergenceReport,
}

/// Low-rank ALS from seeded random factors, then conversion to a butterfly.
pub fn generate_initial_guess(
    entries: &ObservedEntries,
    levels: usize,
    leaf: usize,
    rank: usize,
    cfg: &InitConfig,
) -> Result<InitialGuess> {
    let map = crate::index::MultiIndexMap::new(levels, leaf)?;
    if entries.n() != map.n() {
        return Err(Error::ShapeMismatch(format!(
            "entries of size {} cannot be tensorized with L={levels}, c={leaf}",
            entries.n()
        )));
    }
    if entries.is_empty() {
        return Err(Error::InvalidParameter("no observed entries".into()));
    }
    let big_r = cfg.init_rank.unwrap_or(rank);
    if big_r == 0 {
        return Err(Error::InvalidParameter(
            "low rank R must be at least 1".into(),
        ));
    }
    let scale = (entries.squared_norm() / (entries.len() * big_r) as f64).sqrt();
    let start = LowRankPair::random(entries.n(), big_r, cfg.seed, scale);
    let als = AlsConfig {
        max_iters: cfg.iters.max(1),
        tol: 1e-14,
        reg: cfg.reg,
        record_test: false,
        track_objective: false,
    };
    let (pair, report) = als_lowrank(start, &EvalSplit::train_only(entries.clone()), &als)?;
    let conv = ConversionConfig {
        oversampling: cfg.oversampling,
        seed: cfg.seed.wrapping_add(0x9e37_79b9),
    };
    let network = lr_to_butterfly(&pair, levels, leaf, rank, &conv)?;
    Ok(InitialGuess {
        network,
        lowrank_train_err: report.final_train_err(),
        lowrank_report: report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ones(n: usize) -> DenseMatrix {
        DenseMatrix::from_fn(n, 1, |_, _| C64::new(1.0, 0.0))
    }

    #[test]
    fn qrcp_rank_one_projector() {
        let m = DenseMatrix::from_fn(4, 3, |i, j| {
            C64::new((i + 1) as f64, 0.0) * C64::new(1.0, j as f64)
        });
        let res = qrcp_truncate(&m, &m, 1).unwrap();
        let proj = res.q.matmul(&res.v).unwrap();
        assert!(proj.relative_distance(&m) < 1e-12);
        assert!(qrcp_truncate(&m, &m, 4).is_err());
        assert!(qrcp_truncate(&m, &m, 0).is_err());
    }

    #[test]
    fn qrcp_orthonormal_input_is_spanned() {
        let m = DenseMatrix::identity(3);
        let res = qrcp_truncate(&m, &m, 3).unwrap();
        let proj = res.q.matmul(&res.q.adjoint()).unwrap().matmul(&m).unwrap();
        assert!(proj.relative_distance(&m) < 1e-12);
    }

    #[test]
    fn ones_pair_converts_exactly() {
        let pair = LowRankPair::new(ones(16), ones(16)).unwrap();
        let cfg = ConversionConfig {
            oversampling: Some(2),
            seed: 1,
        };
        let net = lr_to_butterfly(&pair, 2, 4, 1, &cfg).unwrap();
        let x = net.reconstruct_dense().unwrap();
        assert!(x.relative_distance(&pair.to_dense().unwrap()) <= 1e-10);
    }

    #[test]
    fn level_zero_conversion() {
        let pair = LowRankPair::random(5, 2, 3, 1.0);
        let net = lr_to_butterfly(&pair, 0, 5, 2, &ConversionConfig::default()).unwrap();
        let x = net.reconstruct_dense().unwrap();
        assert!(x.relative_distance(&pair.to_dense().unwrap()) < 1e-12);
    }

    #[test]
    fn random_rank_two_converts() {
        for (levels, seed) in [(2, 0), (4, 1), (4, 2)] {
            let n = 4 << levels;
            let pair = LowRankPair::random(n, 2, seed, 1.0);
            let cfg = ConversionConfig {
                oversampling: Some(2),
                seed,
            };
            let net = lr_to_butterfly(&pair, levels, 4, 2, &cfg).unwrap();
            let x = net.reconstruct_dense().unwrap();
            let err = x.relative_distance(&pair.to_dense().unwrap());
            assert!(err <= 1e-8, "L={levels}: {err}");
        }
    }

    #[test]
    fn infeasible_requests_rejected() {
        let pair = LowRankPair::random(8, 1, 0, 1.0);
        let cfg = ConversionConfig::default();
        assert!(lr_to_butterfly(&pair, 1, 4, 1, &cfg).is_err());
        assert!(lr_to_butterfly(&pair, 2, 2, 0, &cfg).is_err());
    }

    #[test]
    fn rank_above_leaf_size_is_padded() {
        let pair = LowRankPair::random(16, 3, 4, 1.0);
        let net = lr_to_butterfly(&pair, 2, 4, 6, &ConversionConfig::default()).unwrap();
        let x = net.reconstruct_dense().unwrap();
        assert!(x.relative_distance(&pair.to_dense().unwrap()) < 1e-10);
        let pair = LowRankPair::random(8, 3, 4, 1.0);
        let net = lr_to_butterfly(&pair, 2, 2, 3, &ConversionConfig::default()).unwrap();
        let x = net.reconstruct_dense().unwrap();
        assert!(x.relative_distance(&pair.to_dense().unwrap()) < 1e-10);
    }
}
