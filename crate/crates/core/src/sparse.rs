use alloc::vec::Vec;

/// Weighted sparse square operator stored as `(dst, src, weight)` triples.
///
/// Applying it to a dense `n x c` matrix computes `out[dst] += w * x[src]`
/// in triple order, so results are bitwise reproducible for a fixed order.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    n: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl SparseMatrix {
    pub fn from_entries(n: usize, entries: Vec<(usize, usize, f64)>) -> Self {
        debug_assert!(entries.iter().all(|&(d, s, _)| d < n && s < n));
        Self { n, entries }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_entries(n, (0..n).map(|i| (i, i, 1.0)).collect())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn entries(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    /// `out += M x` for row-major `x` with `cols` columns.
    pub fn apply_add(&self, x: &[f64], cols: usize, out: &mut [f64]) {
        for &(d, s, w) in &self.entries {
            let src = &x[s * cols..(s + 1) * cols];
            let dst = &mut out[d * cols..(d + 1) * cols];
            for (o, v) in dst.iter_mut().zip(src) {
                *o += w * v;
            }
        }
    }

    /// `out += M^T g`.
    pub fn apply_transpose_add(&self, g: &[f64], cols: usize, out: &mut [f64]) {
        for &(d, s, w) in &self.entries {
            let src = &g[d * cols..(d + 1) * cols];
            let dst = &mut out[s * cols..(s + 1) * cols];
            for (o, v) in dst.iter_mut().zip(src) {
                *o += w * v;
            }
        }
    }

    pub fn to_dense(&self) -> crate::Tensor {
        let mut t = crate::Tensor::zeros(&[self.n, self.n]);
        for &(d, s, w) in &self.entries {
            let cur = t.get(d, s);
            t.set(d, s, cur + w);
        }
        t
    }
}
