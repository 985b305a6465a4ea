//! Minimal dense routines backing the incremental Gram factorisation:
//! a packed lower-triangular factor that grows by appended blocks, forward
//! substitution with one or many right-hand sides, and a small dense
//! Cholesky for Schur-complement blocks.

use rayon::prelude::*;

/// Dot product with four accumulators. Deterministic order, vectorises well.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (mut s0, mut s1, mut s2, mut s3) = (0.0, 0.0, 0.0, 0.0);
    let chunks = n / 4;
    for i in 0..chunks {
        let k = 4 * i;
        s0 += a[k] * b[k];
        s1 += a[k + 1] * b[k + 1];
        s2 += a[k + 2] * b[k + 2];
        s3 += a[k + 3] * b[k + 3];
    }
    let mut s = (s0 + s1) + (s2 + s3);
    for k in 4 * chunks..n {
        s += a[k] * b[k];
    }
    s
}

/// Lower-triangular matrix stored packed row-major; row `i` holds `i + 1`
/// entries. Grows by appending rows, which is exactly the access pattern of
/// a blockwise Cholesky extension.
#[derive(Debug, Clone, Default)]
pub(crate) struct PackedLower {
    n: usize,
    data: Vec<f64>,
}

impl PackedLower {
    pub fn new() -> Self {
        PackedLower::default()
    }

    #[inline]
    fn row_start(i: usize) -> usize {
        i * (i + 1) / 2
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[Self::row_start(i)..Self::row_start(i) + i + 1]
    }

    /// Appends one row of length `n() + 1`.
    pub fn push_row(&mut self, row: &[f64]) {
        debug_assert_eq!(row.len(), self.n + 1);
        self.data.extend_from_slice(row);
        self.n += 1;
    }

    /// Solves `L w = b` in place.
    #[cfg(test)]
    pub fn forward_solve(&self, b: &mut [f64]) {
        debug_assert_eq!(b.len(), self.n);
        for i in 0..self.n {
            let row = self.row(i);
            let s = dot(&row[..i], &b[..i]);
            b[i] = (b[i] - s) / row[i];
        }
    }

    /// Solves `L W = B` for many right-hand sides stored column-major in
    /// `cols` (each column has length `n()`), in place and in parallel over
    /// column slabs. Row tiles are the outer loop so each factor row segment
    /// is reused across a whole slab of columns while it is cache-hot.
    pub fn forward_solve_block(&self, cols: &mut [f64], ncols: usize) {
        let n = self.n;
        if n == 0 || ncols == 0 {
            return;
        }
        debug_assert_eq!(cols.len(), n * ncols);
        const TILE: usize = 256;
        const SLAB: usize = 48;
        cols.par_chunks_mut(n * SLAB).for_each(|chunk| {
            let k = chunk.len() / n;
            let mut a = 0;
            while a < n {
                let b = (a + TILE).min(n);
                // update rows [a, b) against the solved prefix, tile by tile
                let mut ka = 0;
                while ka < a {
                    let kb = (ka + TILE).min(a);
                    for i in a..b {
                        let row = &self.row(i)[ka..kb];
                        for c in 0..k {
                            let col = &mut chunk[c * n..(c + 1) * n];
                            col[i] -= dot(row, &col[ka..kb]);
                        }
                    }
                    ka = kb;
                }
                // triangular solve of the diagonal tile
                for i in a..b {
                    let row = self.row(i);
                    for c in 0..k {
                        let col = &mut chunk[c * n..(c + 1) * n];
                        let s = dot(&row[a..i], &col[a..i]);
                        col[i] = (col[i] - s) / row[i];
                    }
                }
                a = b;
            }
        });
    }

    /// Solves `L^T w = b` in place. Column access over the packed rows is
    /// strided; this runs once per batch, not per prediction functional.
    pub fn backward_solve(&self, b: &mut [f64]) {
        let n = self.n;
        debug_assert_eq!(b.len(), n);
        for i in (0..n).rev() {
            let mut s = b[i];
            for j in i + 1..n {
                s -= self.data[Self::row_start(j) + i] * b[j];
            }
            b[i] = s / self.data[Self::row_start(i) + i];
        }
    }
}

/// In-place Cholesky of a symmetric matrix stored row-major (`k x k`),
/// reading the lower triangle. Returns the packed lower factor rows, or
/// `None` if a pivot is not strictly positive.
pub(crate) fn cholesky_dense(a: &[f64], k: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; k * (k + 1) / 2];
    for i in 0..k {
        for j in 0..=i {
            let li = i * (i + 1) / 2;
            let lj = j * (j + 1) / 2;
            let s = {
                let (ri, rj) = (&l[li..li + j], &l[lj..lj + j]);
                dot(ri, rj)
            };
            let v = a[i * k + j] - s;
            if i == j {
                if v <= 0.0 || !v.is_finite() {
                    return None;
                }
                l[li + j] = v.sqrt();
            } else {
                l[li + j] = v / l[lj + j];
            }
        }
    }
    Some(l)
}

/// Forward substitution against a packed dense factor from [`cholesky_dense`].
pub(crate) fn packed_forward_solve(l: &[f64], k: usize, b: &mut [f64]) {
    for i in 0..k {
        let start = i * (i + 1) / 2;
        let row = &l[start..start + i + 1];
        let s = dot(&row[..i], &b[..i]);
        b[i] = (b[i] - s) / row[i];
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn forward_solves_agree_with_direct() {
        // L from a known SPD matrix
        let a = [4.0, 2.0, 1.0, 2.0, 5.0, 3.0, 1.0, 3.0, 6.0];
        let l = cholesky_dense(&a, 3).unwrap();
        let mut packed = PackedLower::new();
        packed.push_row(&l[0..1]);
        packed.push_row(&l[1..3]);
        packed.push_row(&l[3..6]);
        let b = vec![1.0, 2.0, 3.0];
        let mut w1 = b.clone();
        packed.forward_solve(&mut w1);
        let mut w2 = b.clone();
        packed_forward_solve(&l, 3, &mut w2);
        for i in 0..3 {
            assert_relative_eq!(w1[i], w2[i], max_relative = 1e-14);
        }
        // L w = b  =>  L L^T x = L b; check residual of L w directly
        let lw: Vec<f64> = (0..3)
            .map(|i| dot(&packed.row(i)[..i + 1], &w1[..i + 1]))
            .collect();
        for i in 0..3 {
            assert_relative_eq!(lw[i], b[i], max_relative = 1e-13);
        }
    }

    #[test]
    fn block_solve_matches_single() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let n = 300;
        // random SPD via A = M M^T + n I
        let mut a = vec![0.0; n * n];
        let m: Vec<f64> = (0..n * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        for i in 0..n {
            for j in 0..n {
                let mut s = 0.0;
                for k in 0..n {
                    s += m[i * n + k] * m[j * n + k];
                }
                a[i * n + j] = s + if i == j { n as f64 } else { 0.0 };
            }
        }
        let l = cholesky_dense(&a, n).unwrap();
        let mut packed = PackedLower::new();
        for i in 0..n {
            let start = i * (i + 1) / 2;
            packed.push_row(&l[start..start + i + 1]);
        }
        let ncols = 7;
        let mut block: Vec<f64> = (0..n * ncols).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let orig = block.clone();
        packed.forward_solve_block(&mut block, ncols);
        for c in 0..ncols {
            let mut single = orig[c * n..(c + 1) * n].to_vec();
            packed.forward_solve(&mut single);
            for i in 0..n {
                assert_relative_eq!(block[c * n + i], single[i], max_relative = 1e-11, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = [1.0, 2.0, 2.0, 1.0];
        assert!(cholesky_dense(&a, 2).is_none());
    }

    #[test]
    fn backward_solve_inverts_transpose() {
        let a = [4.0, 2.0, 1.0, 2.0, 5.0, 3.0, 1.0, 3.0, 6.0];
        let l = cholesky_dense(&a, 3).unwrap();
        let mut packed = PackedLower::new();
        packed.push_row(&l[0..1]);
        packed.push_row(&l[1..3]);
        packed.push_row(&l[3..6]);
        let b = vec![0.3, -1.0, 2.0];
        let mut w = b.clone();
        packed.backward_solve(&mut w);
        // check L^T w = b
        for i in 0..3 {
            let mut s = 0.0;
            for j in i..3 {
                s += packed.row(j)[i] * w[j];
            }
            assert_relative_eq!(s, b[i], max_relative = 1e-13);
        }
    }
}
