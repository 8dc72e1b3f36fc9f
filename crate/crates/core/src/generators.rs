//! Test matrices. The physical ones are a Helmholtz Green's function between
//! two parallel planes and a 1D generalized Radon transform; the synthetic
//! ones are exactly representable as butterfly or QTT networks.
//!
//! The physical formulas use 1-based indices; every function here takes and
//! returns 0-based matrix indices.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::dense::{check_dense_size, DenseMatrix, C64};
use crate::error::{Error, Result};
use crate::index::MultiIndexMap;
use crate::network::{ButterflyNetwork, QttNetwork};

fn exact_sqrt(n: usize) -> Option<usize> {
    let s = (n as f64).sqrt().round() as usize;
    (s * s == n).then_some(s)
}

/// `exp(−iωρ)/ρ` between source point `i` and observer point `j` in natural
/// (unreordered) order, with `ω` defaulting to `√n·π/5`.
pub fn green_entry(n: usize, omega: f64, i: usize, j: usize) -> C64 {
    let side = exact_sqrt(n).expect("n is a perfect square");
    let (i1, i2) = ((i / side) as f64, (i % side) as f64);
    let (j1, j2) = ((j / side) as f64, (j % side) as f64);
    let rho = (((i1 - j1).powi(2) + (i2 - j2).powi(2)) / n as f64 + 1.0).sqrt();
    C64::from_polar(1.0 / rho, -omega * rho)
}

pub fn default_omega(n: usize) -> f64 {
    (n as f64).sqrt() * PI / 5.0
}

/// Grid points `(i₁/√n, i₂/√n)` in natural order.
pub fn green_points(n: usize) -> Result<Vec<(f64, f64)>> {
    let side = exact_sqrt(n)
        .ok_or_else(|| Error::InvalidParameter(format!("n = {n} is not a perfect square")))?;
    let h = side as f64;
    Ok((0..n)
        .map(|i| ((i / side) as f64 / h, (i % side) as f64 / h))
        .collect())
}

/// The reordered Green's matrix `P T̄ Pᵀ` and the permutation, with
/// `T[a, b] = T̄[perm[a], perm[b]]`.
pub fn green_helmholtz(
    n: usize,
    leaf: usize,
    omega: Option<f64>,
) -> Result<(DenseMatrix, Vec<usize>)> {
    let perm = green_permutation(n, leaf)?;
    check_dense_size(n)?;
    let omega = omega.unwrap_or_else(|| default_omega(n));
    let t = DenseMatrix::from_fn(n, n, |a, b| green_entry(n, omega, perm[a], perm[b]));
    Ok((t, perm))
}

/// KD permutation of the Green's function grid.
pub fn green_permutation(n: usize, leaf: usize) -> Result<Vec<usize>> {
    MultiIndexMap::for_size(n, leaf)?;
    kd_reorder(&green_points(n)?, leaf)
}

/// Median bisection of a planar point set down to leaves of `leaf` points.
///
/// Each node is split across its axis of larger spread (x on ties) after
/// sorting by that coordinate, equal coordinates ordered by original index.
/// Leaves keep ascending original index. Returns the depth-first leaf order.
pub fn kd_reorder(points: &[(f64, f64)], leaf: usize) -> Result<Vec<usize>> {
    let map = MultiIndexMap::for_size(points.len(), leaf)?;
    let mut order: Vec<usize> = (0..points.len()).collect();
    bisect(points, &mut order, map.levels);
    Ok(order)
}

fn bisect(points: &[(f64, f64)], idx: &mut [usize], depth: usize) {
    if depth == 0 {
        idx.sort_unstable();
        return;
    }
    let spread = |f: fn(&(f64, f64)) -> f64| {
        let (lo, hi) = idx
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
                let v = f(&points[i]);
                (lo.min(v), hi.max(v))
            });
        hi - lo
    };
    let use_x = spread(|p| p.0) >= spread(|p| p.1);
    let coord = |i: usize| if use_x { points[i].0 } else { points[i].1 };
    idx.sort_by(|&a, &b| coord(a).total_cmp(&coord(b)).then(a.cmp(&b)));
    let (left, right) = idx.split_at_mut(idx.len() / 2);
    bisect(points, left, depth - 1);
    bisect(points, right, depth - 1);
}

/// `exp(2πi(x·y + c(x)|y|))` with `x = i/n`, `y = j − n/2`, `c(x) = (2 + sin 2πx)/8`
/// for 1-based `i, j`.
pub fn radon_entry(n: usize, i: usize, j: usize) -> C64 {
    let x = (i + 1) as f64 / n as f64;
    let y = (j + 1) as f64 - (n / 2) as f64;
    let c = (2.0 + (2.0 * PI * x).sin()) / 8.0;
    let phase = x * y + c * y.abs();
    // Reduce before scaling by 2π to keep large phases accurate.
    C64::from_polar(1.0, 2.0 * PI * (phase - phase.floor()))
}

pub fn radon_matrix(n: usize) -> Result<DenseMatrix> {
    if n % 2 != 0 || n == 0 {
        return Err(Error::InvalidParameter(format!(
            "Radon size must be even, got {n}"
        )));
    }
    check_dense_size(n)?;
    Ok(DenseMatrix::from_fn(n, n, |i, j| radon_entry(n, i, j)))
}

pub fn synthetic_butterfly_network(
    levels: usize,
    leaf: usize,
    rank: usize,
    seed: u64,
) -> Result<ButterflyNetwork> {
    ButterflyNetwork::random(levels, leaf, rank, seed, 1.0)
}

/// Dense matrix of a seeded random butterfly network.
pub fn synthetic_butterfly(
    levels: usize,
    leaf: usize,
    rank: usize,
    seed: u64,
) -> Result<DenseMatrix> {
    synthetic_butterfly_network(levels, leaf, rank, seed)?.reconstruct_dense()
}

pub fn synthetic_qtt(levels: usize, leaf: usize, rank: usize, seed: u64) -> Result<DenseMatrix> {
    QttNetwork::random(levels, leaf, rank, seed, 1.0)?.reconstruct_dense()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    GreenHelmholtz,
    Radon,
    SyntheticButterfly,
    SyntheticQtt,
}

impl std::str::FromStr for GeneratorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "green" | "green_helmholtz" => Ok(Self::GreenHelmholtz),
            "radon" => Ok(Self::Radon),
            "butterfly" | "synthetic_butterfly" => Ok(Self::SyntheticButterfly),
            "qtt" | "synthetic_qtt" => Ok(Self::SyntheticQtt),
            other => Err(Error::InvalidParameter(format!(
                "unknown generator '{other}'"
            ))),
        }
    }
}

/// Everything needed to regenerate a test matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSpec {
    pub kind: GeneratorKind,
    pub n: usize,
    pub leaf: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub omega: Option<f64>,
    #[serde(default)]
    pub rank: Option<usize>,
}

/// A matrix that can be queried entry by entry without forming it.
#[derive(Debug, Clone)]
pub enum Generated {
    Green {
        n: usize,
        omega: f64,
        perm: Vec<usize>,
    },
    Radon {
        n: usize,
    },
    Butterfly(ButterflyNetwork),
    Qtt(QttNetwork),
}

impl GeneratorSpec {
    pub fn build(&self) -> Result<Generated> {
        let map = MultiIndexMap::for_size(self.n, self.leaf)?;
        let rank = || {
            self.rank
                .filter(|&r| r > 0)
                .ok_or_else(|| Error::InvalidParameter("synthetic data needs a rank >= 1".into()))
        };
        Ok(match self.kind {
            GeneratorKind::GreenHelmholtz => Generated::Green {
                n: self.n,
                omega: self.omega.unwrap_or_else(|| default_omega(self.n)),
                perm: green_permutation(self.n, self.leaf)?,
            },
            GeneratorKind::Radon => {
                if self.n % 2 != 0 {
                    return Err(Error::InvalidParameter(format!(
                        "Radon size must be even, got {}",
                        self.n
                    )));
                }
                Generated::Radon { n: self.n }
            }
            GeneratorKind::SyntheticButterfly => Generated::Butterfly(synthetic_butterfly_network(
                map.levels,
                self.leaf,
                rank()?,
                self.seed,
            )?),
            GeneratorKind::SyntheticQtt => {
                if map.levels == 0 {
                    return Err(Error::InvalidParameter("QTT data needs n >= 2c".into()));
                }
                Generated::Qtt(QttNetwork::random(
                    map.levels,
                    self.leaf,
                    rank()?,
                    self.seed,
                    1.0,
                )?)
            }
        })
    }
}

impl Generated {
    pub fn n(&self) -> usize {
        match self {
            Generated::Green { n, .. } | Generated::Radon { n } => *n,
            Generated::Butterfly(net) => net.n(),
            Generated::Qtt(net) => net.n(),
        }
    }

    pub fn entry(&self, i: usize, j: usize) -> C64 {
        match self {
            Generated::Green { n, omega, perm } => green_entry(*n, *omega, perm[i], perm[j]),
            Generated::Radon { n } => radon_entry(*n, i, j),
            Generated::Butterfly(net) => net.reconstruct_entry(i, j).expect("index in range"),
            Generated::Qtt(net) => net.reconstruct_entry(i, j).expect("index in range"),
        }
    }

    pub fn to_dense(&self) -> Result<DenseMatrix> {
        match self {
            Generated::Butterfly(net) => net.reconstruct_dense(),
            Generated::Qtt(net) => net.reconstruct_dense(),
            _ => {
                check_dense_size(self.n())?;
                Ok(DenseMatrix::from_fn(self.n(), self.n(), |i, j| {
                    self.entry(i, j)
                }))
            }
        }
    }
}
