//! Sparse linear operators over embedding matrices.
//!
//! Every aggregation in the model (normalized propagation, popularity-weighted
//! bundle pooling, neighbour means) is a fixed sparse matrix applied to a dense
//! embedding table. [`SparseOp`] keeps both the matrix and its transpose in CSR
//! form so the backward pass is another forward application.

use rayon::prelude::*;

use crate::graph::SparseBipartiteGraph;
use crate::matrix::Matrix;

#[derive(Clone, Debug, PartialEq)]
struct Csr {
    n_rows: usize,
    n_cols: usize,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<f64>,
}

impl Csr {
    fn from_triplets(n_rows: usize, n_cols: usize, mut t: Vec<(u32, u32, f64)>) -> Csr {
        t.sort_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0usize; n_rows + 1];
        for &(r, _, _) in &t {
            row_ptr[r as usize + 1] += 1;
        }
        for r in 0..n_rows {
            row_ptr[r + 1] += row_ptr[r];
        }
        Csr {
            n_rows,
            n_cols,
            row_ptr,
            cols: t.iter().map(|x| x.1).collect(),
            vals: t.iter().map(|x| x.2).collect(),
        }
    }

    fn apply(&self, x: &Matrix) -> Matrix {
        assert_eq!(x.rows(), self.n_cols, "operator/matrix shape mismatch");
        let d = x.cols();
        let mut out = Matrix::zeros(self.n_rows, d);
        if d == 0 {
            return out;
        }
        out.as_mut_slice()
            .par_chunks_mut(d)
            .enumerate()
            .for_each(|(r, dst)| {
                for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                    let w = self.vals[k];
                    let src = x.row(self.cols[k] as usize);
                    for (o, s) in dst.iter_mut().zip(src) {
                        *o += w * s;
                    }
                }
            });
        out
    }

    fn transpose(&self) -> Csr {
        let mut t = Vec::with_capacity(self.vals.len());
        for r in 0..self.n_rows {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                t.push((self.cols[k], r as u32, self.vals[k]));
            }
        }
        Csr::from_triplets(self.n_cols, self.n_rows, t)
    }
}

/// A sparse `rows × cols` matrix with its transpose.
///
/// Row sums are accumulated in a fixed column order, so results do not depend
/// on the number of worker threads.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseOp {
    fwd: Csr,
    bwd: Csr,
}

impl SparseOp {
    pub fn from_triplets(n_rows: usize, n_cols: usize, triplets: Vec<(u32, u32, f64)>) -> SparseOp {
        let fwd = Csr::from_triplets(n_rows, n_cols, triplets);
        let bwd = fwd.transpose();
        SparseOp { fwd, bwd }
    }

    /// Symmetric normalization `w_xy / √(deg(x)·deg(y))` with weighted degrees.
    /// Rows are left nodes, columns right nodes. Zero-weight edges are dropped.
    pub fn normalized(g: &SparseBipartiteGraph) -> SparseOp {
        let (ld, rd) = (g.left_degrees(), g.right_degrees());
        let t = g
            .edges()
            .filter(|&(_, _, w)| w > 0.0)
            .map(|(l, r, w)| (l, r, w / (ld[l as usize] * rd[r as usize]).sqrt()))
            .collect();
        SparseOp::from_triplets(g.n_left(), g.n_right(), t)
    }

    /// Uniform mean over each left node's neighbours, ignoring edge weights.
    pub fn row_mean(g: &SparseBipartiteGraph) -> SparseOp {
        let mut t = Vec::with_capacity(g.n_edges());
        for l in 0..g.n_left() {
            let nb = g.neighbors(l);
            let w = 1.0 / nb.len().max(1) as f64;
            t.extend(nb.iter().map(|&r| (l as u32, r, w)));
        }
        SparseOp::from_triplets(g.n_left(), g.n_right(), t)
    }

    /// Weight-proportional mean `w_xy / Σ_y w_xy`, restricted to the rows
    /// where `keep(row)` holds; other rows are empty.
    pub fn weighted_row_mean(g: &SparseBipartiteGraph, keep: impl Fn(usize) -> bool) -> SparseOp {
        let ld = g.left_degrees();
        let mut t = Vec::new();
        for l in (0..g.n_left()).filter(|&l| keep(l) && ld[l] > 0.0) {
            for (&r, &w) in g.neighbors(l).iter().zip(g.neighbor_weights(l)) {
                t.push((l as u32, r, w / ld[l]));
            }
        }
        SparseOp::from_triplets(g.n_left(), g.n_right(), t)
    }

    pub fn n_rows(&self) -> usize {
        self.fwd.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.fwd.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.fwd.vals.len()
    }

    /// `A·x`
    pub fn apply(&self, x: &Matrix) -> Matrix {
        self.fwd.apply(x)
    }

    /// `Aᵀ·y`
    pub fn apply_t(&self, y: &Matrix) -> Matrix {
        self.bwd.apply(y)
    }

    /// Dense copy, for tests and small oracles.
    pub fn to_dense(&self) -> Matrix {
        let mut m = Matrix::zeros(self.n_rows(), self.n_cols());
        for r in 0..self.fwd.n_rows {
            for k in self.fwd.row_ptr[r]..self.fwd.row_ptr[r + 1] {
                m.set(r, self.fwd.cols[k] as usize, self.fwd.vals[k]);
            }
        }
        m
    }
}
