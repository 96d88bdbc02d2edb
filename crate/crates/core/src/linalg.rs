//! Small dense helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Maximum absolute column sum.
pub fn one_norm(a: &DMatrix<f64>) -> f64 {
    a.column_iter().map(|c| c.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
}

/// Frobenius norm.
pub fn fro(a: &DMatrix<f64>) -> f64 {
    a.norm()
}

pub fn sym(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Extreme eigenvalues (min, max) of the symmetric part of `a`.
pub fn sym_eig_range(a: &DMatrix<f64>) -> (f64, f64) {
    let e = SymmetricEigen::new(sym(a)).eigenvalues;
    let lo = e.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = e.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

pub fn lambda_min(a: &DMatrix<f64>) -> f64 {
    sym_eig_range(a).0
}

pub fn lambda_max(a: &DMatrix<f64>) -> f64 {
    sym_eig_range(a).1
}

/// Assembles a block matrix from rows of blocks. Blocks in one row share a
/// row count and blocks in one column share a column count.
pub fn block(rows: &[&[&DMatrix<f64>]]) -> DMatrix<f64> {
    let heights: Vec<usize> = rows.iter().map(|r| r[0].nrows()).collect();
    let widths: Vec<usize> = rows[0].iter().map(|b| b.ncols()).collect();
    let mut out = DMatrix::zeros(heights.iter().sum(), widths.iter().sum());
    let mut r0 = 0;
    for (row, h) in rows.iter().zip(&heights) {
        let mut c0 = 0;
        for (b, w) in row.iter().zip(&widths) {
            assert_eq!((b.nrows(), b.ncols()), (*h, *w), "block shape mismatch");
            out.view_mut((r0, c0), (*h, *w)).copy_from(*b);
            c0 += w;
        }
        r0 += h;
    }
    out
}

pub fn block_diag(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let n: usize = blocks.iter().map(|b| b.nrows()).sum();
    let m: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(n, m);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), (b.nrows(), b.ncols())).copy_from(*b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

pub fn vstack(a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(a.len() + b.len());
    out.rows_mut(0, a.len()).copy_from(a);
    out.rows_mut(a.len(), b.len()).copy_from(b);
    out
}

pub fn is_finite(a: &DMatrix<f64>) -> bool {
    a.iter().all(|v| v.is_finite())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    #[test]
    fn norms_and_blocks() {
        let a = dmatrix![1.0, -2.0; 3.0, 4.0];
        assert_eq!(one_norm(&a), 6.0);
        assert!((fro(&a) - 30f64.sqrt()).abs() < 1e-15);
        let i = DMatrix::identity(2, 2);
        let b = block(&[&[&a, &i], &[&i, &a]]);
        assert_eq!(b[(0, 2)], 1.0);
        assert_eq!(b[(3, 3)], 4.0);
        let d = block_diag(&[&a, &i]);
        assert_eq!(d[(1, 1)], 4.0);
        assert_eq!(d[(0, 2)], 0.0);
        let (lo, hi) = sym_eig_range(&dmatrix![2.0, 0.0; 0.0, -1.0]);
        assert_eq!((lo, hi), (-1.0, 2.0));
    }
}
