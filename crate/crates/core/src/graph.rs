//! Entity index spaces and weighted bipartite interaction graphs.

use std::fmt;

use crate::error::{Error, Result};

/// Sizes of the user, bundle and item index spaces.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct EntitySpaces {
    pub n_users: usize,
    pub n_bundles: usize,
    pub n_items: usize,
}

impl EntitySpaces {
    pub fn new(n_users: usize, n_bundles: usize, n_items: usize) -> Result<Self> {
        if n_users == 0 || n_bundles == 0 || n_items == 0 {
            return Err(Error::Input(format!(
                "entity counts must be positive (users={n_users}, bundles={n_bundles}, items={n_items})"
            )));
        }
        Ok(EntitySpaces {
            n_users,
            n_bundles,
            n_items,
        })
    }

    /// `(left, right)` space sizes for a graph kind.
    pub fn dims(&self, kind: GraphKind) -> (usize, usize) {
        match kind {
            GraphKind::UserItem => (self.n_users, self.n_items),
            GraphKind::BundleItem => (self.n_bundles, self.n_items),
            GraphKind::UserBundle => (self.n_users, self.n_bundles),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum GraphKind {
    UserItem,
    BundleItem,
    UserBundle,
}

impl fmt::Display for GraphKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GraphKind::UserItem => "UI",
            GraphKind::BundleItem => "BI",
            GraphKind::UserBundle => "UB",
        })
    }
}

/// Weighted bipartite graph stored as a left-major CSR edge list.
///
/// Edges are sorted by `(left, right)` and unique. Degrees are weighted row
/// and column sums of the edge weights.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseBipartiteGraph {
    kind: GraphKind,
    n_left: usize,
    n_right: usize,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    weights: Vec<f64>,
    left_degrees: Vec<f64>,
    right_degrees: Vec<f64>,
}

impl SparseBipartiteGraph {
    /// Builds a binary graph from observed pairs; duplicates collapse to weight 1.
    pub fn from_pairs(
        kind: GraphKind,
        n_left: usize,
        n_right: usize,
        pairs: impl IntoIterator<Item = (u32, u32)>,
    ) -> Result<Self> {
        let mut pairs: Vec<(u32, u32)> = pairs.into_iter().collect();
        pairs.sort_unstable();
        pairs.dedup();
        Self::from_sorted(
            kind,
            n_left,
            n_right,
            pairs.into_iter().map(|(l, r)| (l, r, 1.0)).collect(),
        )
    }

    /// Builds a weighted graph. Duplicate `(left, right)` pairs and negative or
    /// non-finite weights are rejected.
    pub fn from_weighted(
        kind: GraphKind,
        n_left: usize,
        n_right: usize,
        mut edges: Vec<(u32, u32, f64)>,
    ) -> Result<Self> {
        edges.sort_unstable_by_key(|&(l, r, _)| (l, r));
        for w in edges.windows(2) {
            if (w[0].0, w[0].1) == (w[1].0, w[1].1) {
                return Err(Error::Input(format!(
                    "duplicate {kind} edge ({}, {})",
                    w[0].0, w[0].1
                )));
            }
        }
        Self::from_sorted(kind, n_left, n_right, edges)
    }

    fn from_sorted(
        kind: GraphKind,
        n_left: usize,
        n_right: usize,
        edges: Vec<(u32, u32, f64)>,
    ) -> Result<Self> {
        let mut row_ptr = vec![0usize; n_left + 1];
        let mut cols = Vec::with_capacity(edges.len());
        let mut weights = Vec::with_capacity(edges.len());
        let mut left_degrees = vec![0.0; n_left];
        let mut right_degrees = vec![0.0; n_right];
        for &(l, r, w) in &edges {
            let (li, ri) = (l as usize, r as usize);
            if li >= n_left || ri >= n_right {
                return Err(Error::Input(format!(
                    "{kind} edge ({l}, {r}) outside index space {n_left}x{n_right}"
                )));
            }
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::Input(format!(
                    "{kind} edge ({l}, {r}) has invalid weight {w}"
                )));
            }
            row_ptr[li + 1] += 1;
            cols.push(r);
            weights.push(w);
            left_degrees[li] += w;
            right_degrees[ri] += w;
        }
        for i in 0..n_left {
            row_ptr[i + 1] += row_ptr[i];
        }
        Ok(SparseBipartiteGraph {
            kind,
            n_left,
            n_right,
            row_ptr,
            cols,
            weights,
            left_degrees,
            right_degrees,
        })
    }

    pub fn kind(&self) -> GraphKind {
        self.kind
    }

    pub fn n_left(&self) -> usize {
        self.n_left
    }

    pub fn n_right(&self) -> usize {
        self.n_right
    }

    pub fn n_edges(&self) -> usize {
        self.cols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cols.is_empty()
    }

    pub fn left_degrees(&self) -> &[f64] {
        &self.left_degrees
    }

    pub fn right_degrees(&self) -> &[f64] {
        &self.right_degrees
    }

    /// Right-side neighbours of a left node, ascending.
    pub fn neighbors(&self, left: usize) -> &[u32] {
        &self.cols[self.row_ptr[left]..self.row_ptr[left + 1]]
    }

    pub fn neighbor_weights(&self, left: usize) -> &[f64] {
        &self.weights[self.row_ptr[left]..self.row_ptr[left + 1]]
    }

    pub fn out_degree(&self, left: usize) -> usize {
        self.row_ptr[left + 1] - self.row_ptr[left]
    }

    pub fn weight(&self, left: usize, right: usize) -> f64 {
        let nb = self.neighbors(left);
        match nb.binary_search(&(right as u32)) {
            Ok(k) => self.neighbor_weights(left)[k],
            Err(_) => 0.0,
        }
    }

    pub fn contains(&self, left: usize, right: usize) -> bool {
        self.neighbors(left).binary_search(&(right as u32)).is_ok()
    }

    /// Iterates `(left, right, weight)` in canonical order.
    pub fn edges(&self) -> impl Iterator<Item = (u32, u32, f64)> + '_ {
        (0..self.n_left).flat_map(move |l| {
            let lo = self.row_ptr[l];
            let hi = self.row_ptr[l + 1];
            (lo..hi).map(move |k| (l as u32, self.cols[k], self.weights[k]))
        })
    }

    /// Number of distinct right nodes incident to a left node, for every right node
    /// (unweighted column counts).
    pub fn right_counts(&self) -> Vec<u32> {
        let mut c = vec![0u32; self.n_right];
        for &r in &self.cols {
            c[r as usize] += 1;
        }
        c
    }

    /// Left-side neighbour lists of every right node, ascending.
    pub fn right_adjacency(&self) -> Vec<Vec<u32>> {
        let mut adj = vec![Vec::new(); self.n_right];
        for l in 0..self.n_left {
            for &r in self.neighbors(l) {
                adj[r as usize].push(l as u32);
            }
        }
        adj
    }

    /// Same edges with sides swapped (kind is preserved).
    pub fn transposed(&self) -> SparseBipartiteGraph {
        let edges: Vec<(u32, u32, f64)> = self.edges().map(|(l, r, w)| (r, l, w)).collect();
        // Unique by construction.
        let mut edges = edges;
        edges.sort_unstable_by_key(|&(l, r, _)| (l, r));
        Self::from_sorted(self.kind, self.n_right, self.n_left, edges)
            .expect("transpose of a valid graph is valid")
    }

    /// Copy with every weight replaced by `f(left, right, weight)`.
    pub fn map_weights(&self, f: impl Fn(u32, u32, f64) -> f64) -> Result<SparseBipartiteGraph> {
        let edges = self.edges().map(|(l, r, w)| (l, r, f(l, r, w))).collect();
        Self::from_sorted(self.kind, self.n_left, self.n_right, edges)
    }

    /// Interaction-file text: one `left\tright\n` line per edge.
    pub fn to_tsv(&self) -> String {
        let mut s = String::with_capacity(self.n_edges() * 12);
        for (l, r, _) in self.edges() {
            s.push_str(&format!("{l}\t{r}\n"));
        }
        s
    }

    /// Recomputes degrees from the edge list and checks them against the cache.
    pub fn degrees_consistent(&self) -> bool {
        let mut ld = vec![0.0; self.n_left];
        let mut rd = vec![0.0; self.n_right];
        for (l, r, w) in self.edges() {
            ld[l as usize] += w;
            rd[r as usize] += w;
        }
        ld == self.left_degrees && rd == self.right_degrees
    }
}
