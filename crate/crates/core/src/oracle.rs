//! Block-sparse matrix form of a butterfly network.
//!
//! Unstacks each core into its block-sparse factor matrix and multiplies the
//! `L+2` factors densely: `X = S¹ · S² ⋯ S^{L+1} · S^{L+2}`. Between factor
//! `m` and `m+1` the contracted index runs over the `L` shared tree digits
//! `(i_0 … i_{L-m-1}, j_0 … j_{m-1})` and one rank index, so every interior
//! dimension is `2^L · r`. Only meant for small `n`.

use crate::dense::{DenseMatrix, C64};
use crate::error::{Error, Result};
use crate::index::{block_key, index_to_tuple, psi, psi_inv};
use crate::network::ButterflyNetwork;

const ORACLE_LIMIT: usize = 1 << 12;

/// The `L+2` block-sparse factor matrices, left to right.
pub fn block_sparse_factors(net: &ButterflyNetwork) -> Result<Vec<DenseMatrix>> {
    let levels = net.levels;
    let leaf = net.leaf;
    let r = net.rank;
    let n = net.n();
    if n > ORACLE_LIMIT {
        return Err(Error::SizeGuard {
            n,
            limit: ORACLE_LIMIT * ORACLE_LIMIT,
        });
    }
    let inner_dim = (1usize << levels) * r;
    let mut factors = Vec::with_capacity(levels + 2);

    // S¹: block diagonal, one c × r block per leaf row cluster.
    let mut first = DenseMatrix::zeros(n, inner_dim);
    for i in 0..n {
        let t = index_to_tuple(i, levels, leaf)?;
        let key = block_key(levels, 1, &t[..levels])?;
        let slice = net.cores[0].slice(key);
        for b in 0..r {
            first[(i, key * r + b)] = slice[t[levels] * r + b];
        }
    }
    factors.push(first);

    // S^{m+1}: each slice couples the state (i_0 … i_{L-m}, j_0 … j_{m-2})
    // to the state (i_0 … i_{L-m-1}, j_0 … j_{m-1}).
    for m in 1..=levels {
        let mut f = DenseMatrix::zeros(inner_dim, inner_dim);
        let ilen = levels - m + 1;
        for ikey in 0..1usize << ilen {
            let idig = psi(ikey, ilen)?;
            for jkey in 0..1usize << m {
                let jdig = psi(jkey, m)?;
                let mut digits = idig.clone();
                digits.extend_from_slice(&jdig);
                let key = block_key(levels, m + 1, &digits)?;

                let mut left = idig.clone();
                left.extend_from_slice(&jdig[..m - 1]);
                let mut right = idig[..ilen - 1].to_vec();
                right.extend_from_slice(&jdig);
                let lrow = psi_inv(&left)?;
                let rcol = psi_inv(&right)?;

                let slice = net.cores[m].slice(key);
                for a in 0..r {
                    for b in 0..r {
                        f[(lrow * r + a, rcol * r + b)] = slice[a * r + b];
                    }
                }
            }
        }
        factors.push(f);
    }

    // S^{L+2}: transposed block diagonal.
    let mut last = DenseMatrix::zeros(inner_dim, n);
    for j in 0..n {
        let t = index_to_tuple(j, levels, leaf)?;
        let key = block_key(levels, levels + 2, &t[..levels])?;
        let slice = net.cores[levels + 1].slice(key);
        for b in 0..r {
            last[(key * r + b, j)] = slice[t[levels] * r + b];
        }
    }
    factors.push(last);
    Ok(factors)
}

/// Dense product of the block-sparse factors.
pub fn assemble_block_sparse_oracle(net: &ButterflyNetwork) -> Result<DenseMatrix> {
    let factors = block_sparse_factors(net)?;
    let mut iter = factors.into_iter();
    let mut acc = iter.next().expect("at least two factors");
    for f in iter {
        acc = acc.matmul(&f)?;
    }
    Ok(acc)
}

/// Nonzero count of each factor; each is `O(n)` for fixed `r` and `c`.
pub fn factor_nonzeros(factors: &[DenseMatrix]) -> Vec<usize> {
    factors
        .iter()
        .map(|f| {
            f.values
                .iter()
                .filter(|v| **v != C64::new(0.0, 0.0))
                .count()
        })
        .collect()
}
