use super::tree::QuadTree;
use crate::{HstError, Real, Result};

/// Row-stochastic sparse matrix averaging point rows into cell rows, in CSR form.
/// One row per cell (in cell-id order), one column per point.
#[derive(Clone, Debug, PartialEq)]
pub struct PoolingMatrix<T> {
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    values: Vec<T>,
    num_points: usize,
}

impl<T: Real> PoolingMatrix<T> {
    pub fn new<S: Real>(tree: &QuadTree<S>) -> Self {
        let subtree = tree.subtree_points();
        let mut row_ptr = Vec::with_capacity(subtree.len() + 1);
        let total: usize = subtree.iter().map(Vec::len).sum();
        let mut cols = Vec::with_capacity(total);
        let mut values = Vec::with_capacity(total);
        row_ptr.push(0);
        for mut pts in subtree {
            pts.sort_unstable();
            let w = T::one() / T::from_usize_lossy(pts.len());
            values.extend(std::iter::repeat_n(w, pts.len()));
            cols.extend(pts);
            row_ptr.push(cols.len());
        }
        Self { row_ptr, cols, values, num_points: tree.num_points() }
    }

    pub fn rows(&self) -> usize {
        self.row_ptr.len() - 1
    }

    pub fn cols(&self) -> usize {
        self.num_points
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    /// Column indices and weights of row `r`.
    pub fn row(&self, r: usize) -> (&[usize], &[T]) {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        (&self.cols[span.clone()], &self.values[span])
    }

    /// `P * x` for a row-major `num_points x d` matrix.
    pub fn apply(&self, x: &[T], d: usize) -> Result<Vec<T>> {
        if x.len() != self.num_points * d {
            return Err(HstError::Shape(format!(
                "pooling expects {} x {d} input, got {} values",
                self.num_points,
                x.len()
            )));
        }
        let mut out = vec![T::zero(); self.rows() * d];
        for r in 0..self.rows() {
            let (cols, vals) = self.row(r);
            let dst = &mut out[r * d..(r + 1) * d];
            for (&c, &w) in cols.iter().zip(vals) {
                for (o, &v) in dst.iter_mut().zip(&x[c * d..(c + 1) * d]) {
                    *o += w * v;
                }
            }
        }
        Ok(out)
    }

    /// `P^T * g` for a row-major `rows x d` matrix.
    pub fn apply_transpose(&self, g: &[T], d: usize) -> Vec<T> {
        let mut out = vec![T::zero(); self.num_points * d];
        for r in 0..self.rows() {
            let (cols, vals) = self.row(r);
            let src = &g[r * d..(r + 1) * d];
            for (&c, &w) in cols.iter().zip(vals) {
                for (o, &v) in out[c * d..(c + 1) * d].iter_mut().zip(src) {
                    *o += w * v;
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::super::tree::tests::figure3_points;
    use super::*;

    #[test]
    fn figure3_rows() {
        let tree = QuadTree::build(&figure3_points(), 2).unwrap();
        let p = PoolingMatrix::<f64>::new(&tree);
        assert_eq!(p.rows(), 12);
        let (cols, vals) = p.row(0);
        assert_eq!(cols, (0..11).collect::<Vec<_>>().as_slice());
        assert!(vals.iter().all(|&v| v == 1.0 / 11.0));
        let (cols, vals) = p.row(4);
        assert_eq!(cols, &[7, 8, 9, 10]);
        assert!(vals.iter().all(|&v| v == 0.25));
        for r in 0..p.rows() {
            let s: f64 = p.row(r).1.iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn apply_averages_subtree_rows() {
        let tree = QuadTree::build(&figure3_points(), 2).unwrap();
        let p = PoolingMatrix::<f64>::new(&tree);
        let x: Vec<f64> = (0..22).map(|v| v as f64).collect();
        let y = p.apply(&x, 2).unwrap();
        // root: mean of rows 0..11
        assert!((y[0] - 10.0).abs() < 1e-12 && (y[1] - 11.0).abs() < 1e-12);
        assert!(p.apply(&x[..4], 2).is_err());
        // adjoint identity <Px, g> == <x, P^T g>
        let g: Vec<f64> = (0..24).map(|v| (v as f64).sin()).collect();
        let lhs: f64 = y.iter().zip(&g).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(p.apply_transpose(&g, 2)).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }
}
