//! Dense f64 kernels for the trainer's hot loops.
//!
//! All matrices are row-major slices with explicit dimensions. `matmul_nn`
//! and `matmul_tn` accumulate (`C += ...`) so gradient passes can reuse them
//! without zeroing; `matmul_nn_over` overwrites. All three are
//! register-blocked (4x16 accumulator tile) and rely on hardware FMA: build
//! with a `target-cpu` that has it (the repository's `.cargo/config.toml`
//! sets `target-cpu=native`), otherwise `mul_add` falls back to a soft-float
//! call and training slows by an order of magnitude.

const MR: usize = 4;
const NR: usize = 16;

/// `C[m,n] += A[m,k] * B[k,n]`.
pub fn matmul_nn(c: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    matmul_nn_impl::<true>(c, a, b, m, k, n);
}

/// `C[m,n] = A[m,k] * B[k,n]`, ignoring C's prior contents. Saves the zero
/// fill and one read pass over C compared to `fill(0.0)` + [`matmul_nn`].
pub fn matmul_nn_over(c: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    matmul_nn_impl::<false>(c, a, b, m, k, n);
}

fn matmul_nn_impl<const ACC: bool>(
    c: &mut [f64],
    a: &[f64],
    b: &[f64],
    m: usize,
    k: usize,
    n: usize,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let mut i = 0;
    while i + MR <= m {
        let mut j = 0;
        while j + NR <= n {
            let mut acc = [[0.0f64; NR]; MR];
            for p in 0..k {
                let bq: &[f64; NR] = b[p * n + j..p * n + j + NR].try_into().unwrap();
                for (r, row) in acc.iter_mut().enumerate() {
                    let av = a[(i + r) * k + p];
                    for q in 0..NR {
                        row[q] = av.mul_add(bq[q], row[q]);
                    }
                }
            }
            for (r, row) in acc.iter().enumerate() {
                let crow = &mut c[(i + r) * n + j..(i + r) * n + j + NR];
                for q in 0..NR {
                    if ACC {
                        crow[q] += row[q];
                    } else {
                        crow[q] = row[q];
                    }
                }
            }
            j += NR;
        }
        if j < n {
            for r in 0..MR {
                let row = i + r;
                if !ACC {
                    c[row * n + j..(row + 1) * n].fill(0.0);
                }
                for p in 0..k {
                    let av = a[row * k + p];
                    let brow = &b[p * n..(p + 1) * n];
                    let crow = &mut c[row * n..(row + 1) * n];
                    for q in j..n {
                        crow[q] = av.mul_add(brow[q], crow[q]);
                    }
                }
            }
        }
        i += MR;
    }
    while i < m {
        if !ACC {
            c[i * n..(i + 1) * n].fill(0.0);
        }
        for p in 0..k {
            let av = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            let crow = &mut c[i * n..(i + 1) * n];
            for q in 0..n {
                crow[q] = av.mul_add(brow[q], crow[q]);
            }
        }
        i += 1;
    }
}

/// `C[k,n] += A^T * B` with `A[m,k]`, `B[m,n]` (the `dW += X^T dY` pattern).
///
/// Register-tiled like [`matmul_nn`]; the A tile reads `MR` adjacent columns,
/// which are contiguous within each row of A, so no explicit transpose is
/// needed. The reduction dimension `m` is blocked so the B panel stays
/// cache-resident across row tiles.
pub fn matmul_tn(c: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    debug_assert_eq!(c.len(), k * n);
    const KC: usize = 256;
    let mut p0 = 0;
    while p0 < m {
        let p1 = (p0 + KC).min(m);
        let mut i = 0;
        while i + MR <= k {
            let mut j = 0;
            while j + NR <= n {
                let mut acc = [[0.0f64; NR]; MR];
                for p in p0..p1 {
                    let bq: &[f64; NR] = b[p * n + j..p * n + j + NR].try_into().unwrap();
                    let aq: &[f64; MR] = a[p * k + i..p * k + i + MR].try_into().unwrap();
                    for (r, row) in acc.iter_mut().enumerate() {
                        let av = aq[r];
                        for q in 0..NR {
                            row[q] = av.mul_add(bq[q], row[q]);
                        }
                    }
                }
                for (r, row) in acc.iter().enumerate() {
                    let crow = &mut c[(i + r) * n + j..(i + r) * n + j + NR];
                    for q in 0..NR {
                        crow[q] += row[q];
                    }
                }
                j += NR;
            }
            if j < n {
                for p in p0..p1 {
                    let brow = &b[p * n..(p + 1) * n];
                    for r in 0..MR {
                        let av = a[p * k + i + r];
                        let crow = &mut c[(i + r) * n..(i + r + 1) * n];
                        for q in j..n {
                            crow[q] = av.mul_add(brow[q], crow[q]);
                        }
                    }
                }
            }
            i += MR;
        }
        while i < k {
            for p in p0..p1 {
                let av = a[p * k + i];
                let brow = &b[p * n..(p + 1) * n];
                let crow = &mut c[i * n..(i + 1) * n];
                for q in 0..n {
                    crow[q] = av.mul_add(brow[q], crow[q]);
                }
            }
            i += 1;
        }
        p0 = p1;
    }
}

/// `dst[cols,rows] = src[rows,cols]^T`, overwriting `dst`.
pub fn transpose(dst: &mut [f64], src: &[f64], rows: usize, cols: usize) {
    debug_assert_eq!(src.len(), rows * cols);
    debug_assert_eq!(dst.len(), rows * cols);
    const TILE: usize = 32;
    let mut r0 = 0;
    while r0 < rows {
        let r1 = (r0 + TILE).min(rows);
        let mut c0 = 0;
        while c0 < cols {
            let c1 = (c0 + TILE).min(cols);
            for r in r0..r1 {
                for c in c0..c1 {
                    dst[c * rows + r] = src[r * cols + c];
                }
            }
            c0 = c1;
        }
        r0 = r1;
    }
}
