//! Observed entries Ω with their tensorized positions.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::chain::{ChainPlan, GroupedView};
use crate::dense::{DenseMatrix, C64};
use crate::error::{Error, Result};
use crate::index::MultiIndexMap;
use crate::network::ButterflyNetwork;

/// Sparse store of `(row, col, value)` triplets, sorted by `(row, col)` with
/// no duplicate pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservedEntries {
    n: usize,
    rows: Vec<u32>,
    cols: Vec<u32>,
    values: Vec<C64>,
}

impl ObservedEntries {
    pub fn new(n: usize, triplets: Vec<(usize, usize, C64)>) -> Result<Self> {
        let mut triplets = triplets;
        for &(i, j, _) in &triplets {
            if i >= n || j >= n {
                return Err(Error::IndexOutOfRange {
                    index: i.max(j),
                    bound: n,
                });
            }
        }
        if n > u32::MAX as usize {
            return Err(Error::InvalidParameter(format!("dimension {n} too large")));
        }
        triplets.sort_by_key(|&(i, j, _)| (i, j));
        for w in triplets.windows(2) {
            if (w[0].0, w[0].1) == (w[1].0, w[1].1) {
                return Err(Error::DuplicatePair {
                    row: w[0].0,
                    col: w[0].1,
                });
            }
        }
        Ok(Self {
            n,
            rows: triplets.iter().map(|t| t.0 as u32).collect(),
            cols: triplets.iter().map(|t| t.1 as u32).collect(),
            values: triplets.into_iter().map(|t| t.2).collect(),
        })
    }

    pub fn empty(n: usize) -> Self {
        Self {
            n,
            rows: Vec::new(),
            cols: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Observes `matrix` at `pairs`.
    pub fn from_dense(matrix: &DenseMatrix, pairs: &[(usize, usize)]) -> Result<Self> {
        if matrix.rows != matrix.cols {
            return Err(Error::ShapeMismatch("matrix must be square".into()));
        }
        let triplets = pairs.iter().map(|&(i, j)| (i, j, matrix[(i, j)])).collect();
        Self::new(matrix.rows, triplets)
    }

    /// Observes a function of the flat indices at `pairs`.
    pub fn from_fn(
        n: usize,
        pairs: &[(usize, usize)],
        f: impl Fn(usize, usize) -> C64,
    ) -> Result<Self> {
        Self::new(n, pairs.iter().map(|&(i, j)| (i, j, f(i, j))).collect())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn row(&self, e: usize) -> usize {
        self.rows[e] as usize
    }

    #[inline]
    pub fn col(&self, e: usize) -> usize {
        self.cols[e] as usize
    }

    #[inline]
    pub fn value(&self, e: usize) -> C64 {
        self.values[e]
    }

    pub fn values(&self) -> &[C64] {
        &self.values
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, C64)> + '_ {
        (0..self.len()).map(move |e| (self.row(e), self.col(e), self.values[e]))
    }

    pub fn pairs(&self) -> Vec<(usize, usize)> {
        (0..self.len())
            .map(|e| (self.row(e), self.col(e)))
            .collect()
    }

    pub fn pair_set(&self) -> HashSet<(usize, usize)> {
        self.pairs().into_iter().collect()
    }

    /// `‖P_Ω(T)‖_F²`.
    pub fn squared_norm(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum()
    }

    /// Same pairs with values mapped through `f`.
    pub fn map_values(&self, f: impl Fn(C64) -> C64) -> Self {
        Self {
            n: self.n,
            rows: self.rows.clone(),
            cols: self.cols.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Groups entries by the slice (or fiber) key of butterfly factor
    /// `factor` (1-based) for an `L`-level tensorization.
    pub fn group_for_factor(
        &self,
        levels: usize,
        leaf: usize,
        factor: usize,
    ) -> Result<GroupedView> {
        let map = MultiIndexMap::new(levels, leaf)?;
        if map.n() != self.n {
            return Err(Error::ShapeMismatch(format!(
                "entries of dimension {} do not tensorize as {leaf}·2^{levels}",
                self.n
            )));
        }
        if factor == 0 || factor > levels + 2 {
            return Err(Error::InvalidFactor {
                factor,
                max: levels + 2,
            });
        }
        let plan = ChainPlan::butterfly(self, map);
        Ok(plan.group(factor - 1).clone())
    }

    /// Writes `i,j,re,im` CSV, gzip-compressed when the path ends in `.gz`.
    pub fn save_triplets(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out: Box<dyn Write> = if is_gz(path) {
            Box::new(BufWriter::new(GzEncoder::new(file, Compression::default())))
        } else {
            Box::new(BufWriter::new(file))
        };
        let io = |e| Error::io(path, e);
        writeln!(out, "# n={}", self.n).map_err(io)?;
        writeln!(out, "i,j,re,im").map_err(io)?;
        for (i, j, v) in self.iter() {
            // `{:?}` prints the shortest representation that round-trips.
            writeln!(out, "{i},{j},{:?},{:?}", v.re, v.im).map_err(io)?;
        }
        out.flush().map_err(io)?;
        Ok(())
    }

    /// Reads a triplet file. The dimension comes from a `# n=` comment line
    /// when present, otherwise from `n_hint`, otherwise from the largest index.
    pub fn load_triplets(path: impl AsRef<Path>, n_hint: Option<usize>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let reader: Box<dyn Read> = if is_gz(path) {
            Box::new(GzDecoder::new(file))
        } else {
            Box::new(file)
        };
        let reader = BufReader::new(reader);
        let mut n_decl = None;
        let mut triplets = Vec::new();
        let parse_err = |line: usize, message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        for (lineno, line) in reader.lines().enumerate() {
            let lineno = lineno + 1;
            let line = line.map_err(|e| Error::io(path, e))?;
            let trimmed = line.trim();
            if trimmed.is_empty() {
                continue;
            }
            if let Some(rest) = trimmed.strip_prefix('#') {
                if let Some(v) = rest.trim().strip_prefix("n=") {
                    n_decl = Some(
                        v.trim()
                            .parse::<usize>()
                            .map_err(|e| parse_err(lineno, format!("bad dimension: {e}")))?,
                    );
                }
                continue;
            }
            if trimmed.replace(' ', "") == "i,j,re,im" {
                continue;
            }
            let fields: Vec<&str> = trimmed.split(',').map(str::trim).collect();
            if fields.len() != 4 {
                return Err(parse_err(
                    lineno,
                    format!("expected 4 fields, got {}", fields.len()),
                ));
            }
            let i: usize = fields[0]
                .parse()
                .map_err(|e| parse_err(lineno, format!("bad row index: {e}")))?;
            let j: usize = fields[1]
                .parse()
                .map_err(|e| parse_err(lineno, format!("bad column index: {e}")))?;
            let re: f64 = fields[2]
                .parse()
                .map_err(|e| parse_err(lineno, format!("bad real part: {e}")))?;
            let im: f64 = fields[3]
                .parse()
                .map_err(|e| parse_err(lineno, format!("bad imaginary part: {e}")))?;
            triplets.push((i, j, C64::new(re, im)));
        }
        let max_index = triplets.iter().map(|t| t.0.max(t.1) + 1).max().unwrap_or(0);
        let n = n_decl.or(n_hint).unwrap_or(max_index);
        Self::new(n, triplets)
    }
}

fn is_gz(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "gz")
}

/// Training and held-out entries with disjoint index pairs.
#[derive(Debug, Clone)]
pub struct EvalSplit {
    pub train: ObservedEntries,
    pub test: Option<ObservedEntries>,
}

impl EvalSplit {
    pub fn new(train: ObservedEntries, test: Option<ObservedEntries>) -> Result<Self> {
        if let Some(test) = &test {
            if test.n() != train.n() {
                return Err(Error::ShapeMismatch(
                    "train and test dimensions differ".into(),
                ));
            }
            let train_pairs = train.pair_set();
            if let Some((i, j)) = test.pairs().into_iter().find(|p| train_pairs.contains(p)) {
                return Err(Error::InvalidParameter(format!(
                    "pair ({i}, {j}) is in both train and test sets"
                )));
            }
        }
        Ok(Self { train, test })
    }

    pub fn train_only(train: ObservedEntries) -> Self {
        Self { train, test: None }
    }

    /// Draws test pairs first, then train pairs excluding them, from one seed.
    pub fn sample(
        matrix_n: usize,
        train_count: usize,
        test_count: usize,
        seed: u64,
        value: impl Fn(usize, usize) -> C64,
    ) -> Result<Self> {
        let test_pairs = sample_omega(matrix_n, test_count, seed, None)?;
        let exclude: HashSet<(usize, usize)> = test_pairs.iter().copied().collect();
        let train_pairs =
            sample_omega(matrix_n, train_count, seed.wrapping_add(1), Some(&exclude))?;
        let train = ObservedEntries::from_fn(matrix_n, &train_pairs, &value)?;
        let test = if test_count > 0 {
            Some(ObservedEntries::from_fn(matrix_n, &test_pairs, &value)?)
        } else {
            None
        };
        Ok(Self { train, test })
    }
}

/// `count` distinct uniformly random pairs of `{0..n}²`, avoiding `exclude`.
/// Returned in ascending `(row, col)` order.
pub fn sample_omega(
    n: usize,
    count: usize,
    seed: u64,
    exclude: Option<&HashSet<(usize, usize)>>,
) -> Result<Vec<(usize, usize)>> {
    let total = n
        .checked_mul(n)
        .ok_or_else(|| Error::InvalidParameter("n too large".into()))?;
    let excluded = exclude.map_or(0, |e| e.iter().filter(|&&(i, j)| i < n && j < n).count());
    let available = total - excluded;
    if count > available {
        return Err(Error::TooManySamples {
            requested: count,
            available,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked: Vec<(usize, usize)> = match exclude {
        None => index::sample(&mut rng, total, count)
            .into_iter()
            .map(|k| (k / n, k % n))
            .collect(),
        Some(ex) => {
            // Sample positions among the allowed pairs, then map them past the
            // excluded flat indices.
            let mut ex_flat: Vec<usize> = ex
                .iter()
                .filter(|&&(i, j)| i < n && j < n)
                .map(|&(i, j)| i * n + j)
                .collect();
            ex_flat.sort_unstable();
            let mut pos: Vec<usize> = index::sample(&mut rng, available, count).into_vec();
            pos.sort_unstable();
            let mut out = Vec::with_capacity(count);
            let mut skip = 0usize;
            for p in pos {
                // smallest flat k with k - #{excluded ≤ k} == p and k not excluded
                let mut k = p + skip;
                while skip < ex_flat.len() && ex_flat[skip] <= k {
                    skip += 1;
                    k = p + skip;
                }
                out.push((k / n, k % n));
            }
            out
        }
    };
    picked.sort_unstable();
    Ok(picked)
}

/// `‖P_Ω(T − X)‖_F / ‖P_Ω(T)‖_F` for a butterfly network.
pub fn relative_error(net: &ButterflyNetwork, entries: &ObservedEntries) -> Result<f64> {
    let mut scratch = vec![C64::new(0.0, 0.0); 2 * net.rank];
    if net.n() != entries.n() {
        return Err(Error::ShapeMismatch(format!(
            "network of size {} against entries of size {}",
            net.n(),
            entries.n()
        )));
    }
    relative_error_with(entries, |i, j| net.entry_unchecked(i, j, &mut scratch))
}

/// Relative error against a dense reconstruction.
pub fn relative_error_dense(x: &DenseMatrix, entries: &ObservedEntries) -> Result<f64> {
    if x.rows != entries.n() || x.cols != entries.n() {
        return Err(Error::ShapeMismatch(
            "dense matrix and entries differ in size".into(),
        ));
    }
    relative_error_with(entries, |i, j| x[(i, j)])
}

/// Relative error with approximations supplied by `approx(i, j)`.
pub fn relative_error_with(
    entries: &ObservedEntries,
    mut approx: impl FnMut(usize, usize) -> C64,
) -> Result<f64> {
    let den = entries.squared_norm();
    if den == 0.0 {
        return Err(Error::ZeroDenominator);
    }
    let num: f64 = entries
        .iter()
        .map(|(i, j, t)| (t - approx(i, j)).norm_sqr())
        .sum();
    Ok((num / den).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicates_rejected() {
        let one = C64::new(1.0, 0.0);
        let err = ObservedEntries::new(4, vec![(1, 2, one), (0, 0, one), (1, 2, one)]);
        assert!(matches!(err, Err(Error::DuplicatePair { row: 1, col: 2 })));
        assert!(ObservedEntries::new(2, vec![(2, 0, one)]).is_err());
    }

    #[test]
    fn entries_are_sorted() {
        let one = C64::new(1.0, 0.0);
        let e = ObservedEntries::new(4, vec![(3, 1, one), (0, 2, one), (3, 0, one)]).unwrap();
        assert_eq!(e.pairs(), vec![(0, 2), (3, 0), (3, 1)]);
    }

    #[test]
    fn sample_all_and_none() {
        let all = sample_omega(4, 16, 3, None).unwrap();
        assert_eq!(all.len(), 16);
        assert_eq!(all, (0..16).map(|k| (k / 4, k % 4)).collect::<Vec<_>>());
        assert!(sample_omega(4, 0, 3, None).unwrap().is_empty());
        assert!(matches!(
            sample_omega(4, 17, 3, None),
            Err(Error::TooManySamples { .. })
        ));
    }

    #[test]
    fn sample_with_exclusion() {
        let ex: HashSet<_> = sample_omega(8, 20, 1, None).unwrap().into_iter().collect();
        let rest = sample_omega(8, 44, 2, Some(&ex)).unwrap();
        assert_eq!(rest.len(), 44);
        assert!(rest.iter().all(|p| !ex.contains(p)));
        let uniq: HashSet<_> = rest.iter().collect();
        assert_eq!(uniq.len(), 44);
        assert!(sample_omega(8, 45, 2, Some(&ex)).is_err());
        assert_eq!(rest, sample_omega(8, 44, 2, Some(&ex)).unwrap());
    }

    #[test]
    fn split_sampling_is_disjoint() {
        let split = EvalSplit::sample(16, 100, 30, 9, |i, j| C64::new(i as f64, j as f64)).unwrap();
        let tr = split.train.pair_set();
        assert_eq!(split.train.len(), 100);
        let test = split.test.unwrap();
        assert_eq!(test.len(), 30);
        assert!(test.pairs().iter().all(|p| !tr.contains(p)));
    }

    #[test]
    fn relative_error_examples() {
        let t = DenseMatrix::from_fn(4, 4, |i, j| C64::new(i as f64 + 1.0, j as f64));
        let pairs = [(0, 1), (2, 3), (3, 3)];
        let e = ObservedEntries::from_dense(&t, &pairs).unwrap();
        assert_eq!(relative_error_dense(&t, &e).unwrap(), 0.0);
        assert_eq!(
            relative_error_dense(&DenseMatrix::zeros(4, 4), &e).unwrap(),
            1.0
        );
        let twice = DenseMatrix::from_fn(4, 4, |i, j| t[(i, j)] * 2.0);
        assert!((relative_error_dense(&twice, &e).unwrap() - 1.0).abs() < 1e-15);
        let zero_t = ObservedEntries::from_dense(&DenseMatrix::zeros(4, 4), &pairs).unwrap();
        assert!(matches!(
            relative_error_dense(&t, &zero_t),
            Err(Error::ZeroDenominator)
        ));
    }
}
