//! Small dense kernels: Hermitian Cholesky solves and Householder QR with
//! column pivoting. Sizes here are `r`, `r²` or a few leaf blocks, so plain
//! loops are enough.

use crate::dense::{DenseMatrix, C64, ONE, ZERO};

/// Solves `K s = y` in place for Hermitian positive definite `K` (row-major,
/// `dim × dim`). On success `y` holds `s`; returns `false` if `K` is not
/// numerically positive definite. `K` is overwritten by its Cholesky factor.
pub fn cholesky_solve_in_place(k: &mut [C64], dim: usize, y: &mut [C64]) -> bool {
    debug_assert_eq!(k.len(), dim * dim);
    debug_assert_eq!(y.len(), dim);
    // Lower factor L with K = L Lᴴ, stored in the lower triangle.
    let scale = (0..dim)
        .map(|i| k[i * dim + i].re.abs())
        .fold(0.0, f64::max);
    let floor = scale * 1e-15;
    for j in 0..dim {
        let mut d = k[j * dim + j].re;
        for p in 0..j {
            d -= k[j * dim + p].norm_sqr();
        }
        if !(d > floor) || !d.is_finite() {
            return false;
        }
        let d = d.sqrt();
        k[j * dim + j] = C64::new(d, 0.0);
        for i in j + 1..dim {
            let mut s = k[i * dim + j];
            for p in 0..j {
                s -= k[i * dim + p] * k[j * dim + p].conj();
            }
            k[i * dim + j] = s / d;
        }
    }
    // Forward: L z = y.
    for i in 0..dim {
        let mut s = y[i];
        for p in 0..i {
            s -= k[i * dim + p] * y[p];
        }
        y[i] = s / k[i * dim + i].re;
    }
    // Backward: Lᴴ s = z.
    for i in (0..dim).rev() {
        let mut s = y[i];
        for p in i + 1..dim {
            s -= k[p * dim + i].conj() * y[p];
        }
        y[i] = s / k[i * dim + i].re;
    }
    true
}

/// Householder QR with column pivoting, truncated to `rank` columns.
///
/// Returns the first `rank` columns of the orthonormal factor and the pivot
/// order. The factor has orthonormal columns even when `m` is numerically
/// rank deficient.
pub fn householder_qrcp(m: &DenseMatrix, rank: usize) -> (DenseMatrix, Vec<usize>) {
    let rows = m.rows;
    let cols = m.cols;
    assert!(rank <= rows, "rank {rank} exceeds {rows} rows");
    let mut a = m.clone();
    let mut pivots: Vec<usize> = (0..cols).collect();
    let steps = rank.min(cols);
    let mut reflectors: Vec<Vec<C64>> = Vec::with_capacity(rank);

    for k in 0..steps {
        // Pick the trailing column with the largest remaining norm; ties keep
        // the lowest index.
        let mut best = k;
        let mut best_norm = -1.0;
        for c in k..cols {
            let nrm: f64 = (k..rows).map(|i| a[(i, c)].norm_sqr()).sum();
            if nrm > best_norm {
                best_norm = nrm;
                best = c;
            }
        }
        if best != k {
            pivots.swap(k, best);
            for i in 0..rows {
                a.values.swap(i * cols + k, i * cols + best);
            }
        }
        let v = householder_vector(&a, k);
        if let Some(v) = &v {
            apply_reflector(&mut a, v, k, k);
        }
        reflectors.push(v.unwrap_or_default());
    }
    // Rank beyond the column count: identity reflectors.
    for _ in steps..rank {
        reflectors.push(Vec::new());
    }

    // Q = H_0 H_1 … H_{rank-1} [I; 0]
    let mut q = DenseMatrix::zeros(rows, rank);
    for j in 0..rank {
        q[(j, j)] = ONE;
    }
    for (k, v) in reflectors.iter().enumerate().rev() {
        if !v.is_empty() {
            apply_reflector(&mut q, v, k, 0);
        }
    }
    (q, pivots)
}

/// Reflector zeroing `a[k+1.., k]`, stored as the vector over rows `k..`
/// normalized so `H = I − 2 v vᴴ`. `None` when the column is already zero.
fn householder_vector(a: &DenseMatrix, k: usize) -> Option<Vec<C64>> {
    let rows = a.rows;
    let x: Vec<C64> = (k..rows).map(|i| a[(i, k)]).collect();
    let norm = x.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    if norm == 0.0 {
        return None;
    }
    let phase = if x[0] == ZERO {
        ONE
    } else {
        x[0] / x[0].norm()
    };
    let alpha = -phase * norm;
    let mut v = x;
    v[0] -= alpha;
    let vnorm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    if vnorm == 0.0 {
        return None;
    }
    for z in &mut v {
        *z /= vnorm;
    }
    Some(v)
}

/// `a[k.., c0..] ← (I − 2 v vᴴ) a[k.., c0..]`.
fn apply_reflector(a: &mut DenseMatrix, v: &[C64], k: usize, c0: usize) {
    let cols = a.cols;
    for c in c0..cols {
        let mut dot = ZERO;
        for (t, vi) in v.iter().enumerate() {
            dot += vi.conj() * a[(k + t, c)];
        }
        if dot == ZERO {
            continue;
        }
        let dot = dot * 2.0;
        for (t, vi) in v.iter().enumerate() {
            a[(k + t, c)] -= vi * dot;
        }
    }
}

/// Upper triangle of `K = R̄ Rᵀ` and `y = R̄ t` for a design matrix stored
/// transposed and split into parts: row `a` of `re`/`im` holds design element
/// `a` of every entry (`m` entries). Lower-triangle entries of `k` are left
/// untouched.
pub(crate) fn gram_upper(
    re: &[f64],
    im: &[f64],
    dim: usize,
    m: usize,
    t: &[C64],
    k: &mut [C64],
    y: &mut [C64],
) {
    #[cfg(target_arch = "x86_64")]
    {
        if std::is_x86_feature_detected!("avx2") && std::is_x86_feature_detected!("fma") {
            // SAFETY: the required CPU features were just detected.
            unsafe { gram_upper_fma(re, im, dim, m, t, k, y) };
            return;
        }
    }
    gram_upper_generic(re, im, dim, m, t, k, y);
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn gram_upper_fma(
    re: &[f64],
    im: &[f64],
    dim: usize,
    m: usize,
    t: &[C64],
    k: &mut [C64],
    y: &mut [C64],
) {
    gram_upper_generic(re, im, dim, m, t, k, y);
}

const LANES: usize = 4;

/// Split-complex row `a` of a transposed design matrix.
#[derive(Clone, Copy)]
struct Row<'a> {
    re: &'a [f64],
    im: &'a [f64],
}

/// `Σ ā b` for every pair in `{a0, a1} × {b0, b1}`, sharing loads across the
/// four products. Lane sums are independent so the loop vectorizes.
#[inline(always)]
fn conj_dot_2x2(a: [Row<'_>; 2], b: [Row<'_>; 2], out: &mut [[C64; 2]; 2]) {
    let m = a[0].re.len();
    let mut sr = [[[0.0f64; LANES]; 2]; 2];
    let mut si = [[[0.0f64; LANES]; 2]; 2];
    let chunks = m / LANES;
    let lanes =
        |x: &[f64], o: usize| -> [f64; LANES] { x[o..o + LANES].try_into().expect("full chunk") };
    for c in 0..chunks {
        let o = c * LANES;
        let (x0r, x0i, x1r, x1i) = (
            lanes(a[0].re, o),
            lanes(a[0].im, o),
            lanes(a[1].re, o),
            lanes(a[1].im, o),
        );
        let (z0r, z0i, z1r, z1i) = (
            lanes(b[0].re, o),
            lanes(b[0].im, o),
            lanes(b[1].re, o),
            lanes(b[1].im, o),
        );
        for l in 0..LANES {
            sr[0][0][l] += x0r[l] * z0r[l] + x0i[l] * z0i[l];
            si[0][0][l] += x0r[l] * z0i[l] - x0i[l] * z0r[l];
            sr[0][1][l] += x0r[l] * z1r[l] + x0i[l] * z1i[l];
            si[0][1][l] += x0r[l] * z1i[l] - x0i[l] * z1r[l];
            sr[1][0][l] += x1r[l] * z0r[l] + x1i[l] * z0i[l];
            si[1][0][l] += x1r[l] * z0i[l] - x1i[l] * z0r[l];
            sr[1][1][l] += x1r[l] * z1r[l] + x1i[l] * z1i[l];
            si[1][1][l] += x1r[l] * z1i[l] - x1i[l] * z1r[l];
        }
    }
    for p in 0..2 {
        for q in 0..2 {
            let (mut re, mut im) = (0.0, 0.0);
            for e in chunks * LANES..m {
                let (xr, xi, zr, zi) = (a[p].re[e], a[p].im[e], b[q].re[e], b[q].im[e]);
                re += xr * zr + xi * zi;
                im += xr * zi - xi * zr;
            }
            for l in 0..LANES {
                re += sr[p][q][l];
                im += si[p][q][l];
            }
            out[p][q] = C64::new(re, im);
        }
    }
}

#[inline(always)]
fn gram_upper_generic(
    re: &[f64],
    im: &[f64],
    dim: usize,
    m: usize,
    t: &[C64],
    k: &mut [C64],
    y: &mut [C64],
) {
    let row = |a: usize| Row {
        re: &re[a * m..(a + 1) * m],
        im: &im[a * m..(a + 1) * m],
    };
    let tr: Vec<f64> = t.iter().map(|z| z.re).collect();
    let ti: Vec<f64> = t.iter().map(|z| z.im).collect();
    let trow = Row { re: &tr, im: &ti };
    let mut out = [[C64::new(0.0, 0.0); 2]; 2];
    // Pad odd dimensions by repeating the last row; the duplicate results
    // are discarded.
    let clamp = |a: usize| a.min(dim - 1);
    for a in (0..dim).step_by(2) {
        let pa = [row(a), row(clamp(a + 1))];
        conj_dot_2x2(pa, [trow, trow], &mut out);
        y[a] += out[0][0];
        if a + 1 < dim {
            y[a + 1] += out[1][0];
        }
        for b in (a..dim).step_by(2) {
            conj_dot_2x2(pa, [row(b), row(clamp(b + 1))], &mut out);
            for p in 0..2 {
                for q in 0..2 {
                    let (i, j) = (a + p, b + q);
                    if i < dim && j < dim && i <= j {
                        k[i * dim + j] += out[p][q];
                    }
                }
            }
        }
    }
}
