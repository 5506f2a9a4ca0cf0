//! Register-blocked dense matrix multiply, `C += A · B`, all row-major.
//!
//! The summation order over the inner dimension is fixed, so results are
//! reproducible bit for bit.

const MR: usize = 4;
const NR: usize = 8;

/// `c (m×n) += a (m×k) · b (k×n)`.
pub(crate) fn gemm_acc(m: usize, n: usize, k: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let m_main = m - m % MR;
    let n_main = n - n % NR;
    for i in (0..m_main).step_by(MR) {
        for j in (0..n_main).step_by(NR) {
            let mut acc = [[0.0f64; NR]; MR];
            for kk in 0..k {
                let brow: &[f64; NR] = b[kk * n + j..kk * n + j + NR].try_into().expect("NR");
                for (ii, row) in acc.iter_mut().enumerate() {
                    let av = a[(i + ii) * k + kk];
                    for jj in 0..NR {
                        row[jj] += av * brow[jj];
                    }
                }
            }
            for (ii, row) in acc.iter().enumerate() {
                let dst = &mut c[(i + ii) * n + j..(i + ii) * n + j + NR];
                for jj in 0..NR {
                    dst[jj] += row[jj];
                }
            }
        }
        if n_main < n {
            edge(i, i + MR, n_main, n, n, k, a, b, c);
        }
    }
    if m_main < m {
        edge(m_main, m, 0, n, n, k, a, b, c);
    }
}

#[allow(clippy::too_many_arguments)]
fn edge(
    i0: usize,
    i1: usize,
    j0: usize,
    j1: usize,
    n: usize,
    k: usize,
    a: &[f64],
    b: &[f64],
    c: &mut [f64],
) {
    for i in i0..i1 {
        for j in j0..j1 {
            let mut acc = 0.0;
            for kk in 0..k {
                acc += a[i * k + kk] * b[kk * n + j];
            }
            c[i * n + j] += acc;
        }
    }
}

/// Row-major transpose of an `rows × cols` buffer into `out`.
pub(crate) fn transpose(rows: usize, cols: usize, src: &[f64], out: &mut [f64]) {
    for r in 0..rows {
        for (cidx, v) in src[r * cols..(r + 1) * cols].iter().enumerate() {
            out[cidx * rows + r] = *v;
        }
    }
}
