//! Bijections between flat matrix indices, level digits and flattened block keys.
//!
//! A flat index `i < c·2^L` expands into `(i_0, …, i_L)`: the binary digits
//! `i_0 … i_{L-1}` select the path through the cluster tree (root split first)
//! and `i_L < c` is the position inside the leaf. Block keys flatten a digit
//! tuple with the first digit least significant.

use crate::error::{Error, Result};

/// Index geometry of an `n × n` matrix with `n = leaf · 2^levels`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MultiIndexMap {
    pub levels: usize,
    pub leaf: usize,
}

impl MultiIndexMap {
    pub fn new(levels: usize, leaf: usize) -> Result<Self> {
        if leaf == 0 {
            return Err(Error::InvalidParameter("leaf size must be >= 1".into()));
        }
        if levels >= usize::BITS as usize - 8 {
            return Err(Error::InvalidParameter(format!(
                "{levels} levels is too many"
            )));
        }
        Ok(Self { levels, leaf })
    }

    /// The map with leaf size `leaf` whose dimension is `n`, if `n / leaf` is
    /// a power of two.
    pub fn for_size(n: usize, leaf: usize) -> Result<Self> {
        if leaf == 0 || n % leaf != 0 || !(n / leaf).is_power_of_two() {
            return Err(Error::InvalidParameter(format!(
                "n = {n} is not of the form {leaf}·2^L"
            )));
        }
        Self::new((n / leaf).trailing_zeros() as usize, leaf)
    }

    /// Matrix dimension `n = c·2^L`.
    pub fn n(&self) -> usize {
        self.leaf << self.levels
    }

    /// Number of leaf blocks, `2^L`.
    pub fn blocks(&self) -> usize {
        1 << self.levels
    }

    pub fn index_to_tuple(&self, i: usize) -> Result<Vec<usize>> {
        index_to_tuple(i, self.levels, self.leaf)
    }

    pub fn tuple_to_flat(&self, tuple: &[usize]) -> Result<usize> {
        tuple_to_flat(tuple, self.levels, self.leaf)
    }

    /// Binary digits `i_0 … i_{L-1}` packed with `i_0` as bit 0.
    ///
    /// This is the bit reversal of `i / c` over `L` bits, and equals the block
    /// key of the outer factor fiber that holds row `i`.
    #[inline]
    pub fn reversed_block(&self, i: usize) -> usize {
        reverse_bits(i / self.leaf, self.levels)
    }

    /// Leaf digit `i_L`.
    #[inline]
    pub fn leaf_digit(&self, i: usize) -> usize {
        i % self.leaf
    }

    /// Slice key of inner core `S^{m+1}` (`1 ≤ m ≤ L`) addressed by entry `(i, j)`,
    /// i.e. `ψ⁻¹(i_0 … i_{L-m}, j_0 … j_{m-1})`.
    #[inline]
    pub fn inner_key(&self, m: usize, i: usize, j: usize) -> usize {
        debug_assert!(m >= 1 && m <= self.levels);
        let ibits = self.levels - m + 1;
        let ri = self.reversed_block(i) & low_mask(ibits);
        let rj = self.reversed_block(j) & low_mask(m);
        ri | (rj << ibits)
    }
}

#[inline]
pub(crate) fn low_mask(bits: usize) -> usize {
    if bits >= usize::BITS as usize {
        usize::MAX
    } else {
        (1usize << bits) - 1
    }
}

/// Reverses the lowest `bits` bits of `x`.
#[inline]
pub fn reverse_bits(x: usize, bits: usize) -> usize {
    if bits == 0 {
        return 0;
    }
    x.reverse_bits() >> (usize::BITS as usize - bits)
}

/// Expands a flat index into `(i_0, …, i_L)`.
pub fn index_to_tuple(i: usize, levels: usize, leaf: usize) -> Result<Vec<usize>> {
    let n = leaf << levels;
    if i >= n {
        return Err(Error::IndexOutOfRange { index: i, bound: n });
    }
    let mut tuple = Vec::with_capacity(levels + 1);
    for l in 0..levels {
        tuple.push((i / (leaf << (levels - l - 1))) % 2);
    }
    tuple.push(i % leaf);
    Ok(tuple)
}

/// Inverse of [`index_to_tuple`].
pub fn tuple_to_flat(tuple: &[usize], levels: usize, leaf: usize) -> Result<usize> {
    if tuple.len() != levels + 1 {
        return Err(Error::ArityMismatch {
            expected: levels + 1,
            got: tuple.len(),
        });
    }
    let mut block = 0usize;
    for (pos, &d) in tuple[..levels].iter().enumerate() {
        if d > 1 {
            return Err(Error::DigitOutOfRange {
                position: pos,
                value: d,
                radix: 2,
            });
        }
        block = 2 * block + d;
    }
    let last = tuple[levels];
    if last >= leaf {
        return Err(Error::DigitOutOfRange {
            position: levels,
            value: last,
            radix: leaf,
        });
    }
    Ok(block * leaf + last)
}

/// `ψ(i, l)`: binary digits of `i` with `b_m = ⌊i/2^m⌋ mod 2`.
pub fn psi(i: usize, bits: usize) -> Result<Vec<usize>> {
    if bits < usize::BITS as usize && i >> bits != 0 {
        return Err(Error::IndexOutOfRange {
            index: i,
            bound: 1 << bits,
        });
    }
    Ok((0..bits).map(|m| (i >> m) & 1).collect())
}

/// `ψ⁻¹(b_0, …, b_{p-1}) = Σ b_m 2^m`.
pub fn psi_inv(bits: &[usize]) -> Result<usize> {
    bits.iter().enumerate().try_fold(0usize, |acc, (m, &b)| {
        if b > 1 {
            Err(Error::DigitOutOfRange {
                position: m,
                value: b,
                radix: 2,
            })
        } else {
            Ok(acc | (b << m))
        }
    })
}

/// Slice key of butterfly factor `factor` (1-based, `1..=L+2`) for its binary
/// prefix digits.
///
/// Outer factors take the `L` digits `(i_0 … i_{L-1})` or `(j_0 … j_{L-1})`;
/// inner factor `S^{m+1}` takes `(i_0 … i_{L-m}, j_0 … j_{m-1})`, `L+1` digits.
pub fn block_key(levels: usize, factor: usize, digits: &[usize]) -> Result<usize> {
    if factor == 0 || factor > levels + 2 {
        return Err(Error::InvalidFactor {
            factor,
            max: levels + 2,
        });
    }
    let expected = if factor == 1 || factor == levels + 2 {
        levels
    } else {
        levels + 1
    };
    if digits.len() != expected {
        return Err(Error::ArityMismatch {
            expected,
            got: digits.len(),
        });
    }
    psi_inv(digits)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tuple_examples() {
        assert_eq!(index_to_tuple(0, 2, 4).unwrap(), vec![0, 0, 0]);
        assert_eq!(index_to_tuple(5, 2, 4).unwrap(), vec![0, 1, 1]);
        assert_eq!(index_to_tuple(15, 2, 4).unwrap(), vec![1, 1, 3]);
        assert_eq!(tuple_to_flat(&[0, 0, 0], 2, 4).unwrap(), 0);
        assert_eq!(tuple_to_flat(&[0, 1, 1], 2, 4).unwrap(), 5);
        assert_eq!(tuple_to_flat(&[1, 1, 3], 2, 4).unwrap(), 15);
    }

    #[test]
    fn tuple_errors() {
        assert!(matches!(
            index_to_tuple(16, 2, 4),
            Err(Error::IndexOutOfRange { .. })
        ));
        assert!(matches!(
            tuple_to_flat(&[0, 2, 0], 2, 4),
            Err(Error::DigitOutOfRange { .. })
        ));
        assert!(matches!(
            tuple_to_flat(&[0, 0, 4], 2, 4),
            Err(Error::DigitOutOfRange { .. })
        ));
        assert!(tuple_to_flat(&[0, 0], 2, 4).is_err());
    }

    #[test]
    fn psi_examples() {
        assert_eq!(psi(0, 3).unwrap(), vec![0, 0, 0]);
        assert_eq!(psi(5, 3).unwrap(), vec![1, 0, 1]);
        assert_eq!(psi_inv(&[1, 0, 1]).unwrap(), 5);
        assert!(psi(8, 3).is_err());
        assert!(psi_inv(&[2]).is_err());
    }

    #[test]
    fn block_key_examples() {
        assert_eq!(block_key(3, 1, &[0, 0, 0]).unwrap(), 0);
        assert_eq!(block_key(3, 1, &[1, 0, 1]).unwrap(), 5);
        assert_eq!(block_key(3, 5, &[1, 0, 1]).unwrap(), 5);
        // L = 1 inner factor S^2 over (i_0, j_0)
        assert_eq!(block_key(1, 2, &[1, 0]).unwrap(), 1);
        assert!(matches!(
            block_key(1, 2, &[1]),
            Err(Error::ArityMismatch { .. })
        ));
        assert!(block_key(1, 4, &[0]).is_err());
        assert!(block_key(1, 0, &[0]).is_err());
    }

    #[test]
    fn bijection_exhaustive() {
        for (levels, leaf) in [(0, 1), (0, 5), (3, 1), (4, 3), (10, 4), (12, 1)] {
            let map = MultiIndexMap::new(levels, leaf).unwrap();
            assert!(map.n() <= 4096);
            for i in 0..map.n() {
                let t = map.index_to_tuple(i).unwrap();
                assert_eq!(map.tuple_to_flat(&t).unwrap(), i);
            }
        }
    }

    #[test]
    fn fast_keys_match_digit_keys() {
        let map = MultiIndexMap::new(3, 2).unwrap();
        for i in 0..map.n() {
            let ti = map.index_to_tuple(i).unwrap();
            assert_eq!(map.reversed_block(i), block_key(3, 1, &ti[..3]).unwrap());
            for j in 0..map.n() {
                let tj = map.index_to_tuple(j).unwrap();
                for m in 1..=3 {
                    let mut digits = ti[..=3 - m].to_vec();
                    digits.extend_from_slice(&tj[..m]);
                    assert_eq!(
                        map.inner_key(m, i, j),
                        block_key(3, m + 1, &digits).unwrap()
                    );
                }
            }
        }
    }
}
