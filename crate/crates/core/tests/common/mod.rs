//! Brute-force oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;

use coldbundle::config::{Config, ThresholdOverride};
use coldbundle::dataset::Dataset;
use coldbundle::graph::{GraphKind, SparseBipartiteGraph};
use coldbundle::matrix::Matrix;
use coldbundle::model::{init_embeddings, EmbeddingState};
use coldbundle::pipeline::{mine_relations, prepare, Prepared};
use coldbundle::relations::GraphThresholds;
use coldbundle::synthetic::{planted_dataset, PlantedSpec};

/// Bernoulli(p) edges; at least one edge.
pub fn random_graph<R: Rng>(rng: &mut R, kind: GraphKind, nl: usize, nr: usize, p: f64) -> SparseBipartiteGraph {
    let mut e = Vec::new();
    for l in 0..nl {
        for r in 0..nr {
            if rng.gen_bool(p) {
                e.push((l as u32, r as u32));
            }
        }
    }
    if e.is_empty() {
        e.push((rng.gen_range(0..nl) as u32, rng.gen_range(0..nr) as u32));
    }
    SparseBipartiteGraph::from_pairs(kind, nl, nr, e).unwrap()
}

/// Like [`random_graph`] with weights uniform in `[0.1, 3)`.
pub fn random_weighted_graph<R: Rng>(rng: &mut R, kind: GraphKind, nl: usize, nr: usize, p: f64) -> SparseBipartiteGraph {
    let g = random_graph(rng, kind, nl, nr, p);
    let w: Vec<(u32, u32, f64)> = g.edges().map(|(l, r, _)| (l, r, rng.gen_range(0.1..3.0))).collect();
    SparseBipartiteGraph::from_weighted(kind, nl, nr, w).unwrap()
}

/// Set-based co-occurrence: each item's set of left neighbours.
pub struct SetOracle {
    pub sets: Vec<BTreeSet<u32>>,
    pub min_freq: u32,
}

impl SetOracle {
    pub fn new(g: &SparseBipartiteGraph, min_freq: u32) -> Self {
        let mut sets = vec![BTreeSet::new(); g.n_right()];
        for (l, r, _) in g.edges() {
            sets[r as usize].insert(l);
        }
        SetOracle { sets, min_freq }
    }

    pub fn count(&self, i: usize) -> u32 {
        self.sets[i].len() as u32
    }

    pub fn qualified(&self, i: usize) -> bool {
        self.count(i) > self.min_freq
    }

    pub fn intersection(&self, i: usize, j: usize) -> u32 {
        self.sets[i].intersection(&self.sets[j]).count() as u32
    }

    pub fn jaccard(&self, i: usize, j: usize) -> f64 {
        let union = self.sets[i].union(&self.sets[j]).count();
        if union == 0 {
            return 0.0;
        }
        self.intersection(i, j) as f64 / union as f64
    }

    /// Qualified co-occurring pairs `i < j` with their intersection sizes.
    pub fn pairs(&self) -> BTreeMap<(u32, u32), u32> {
        let n = self.sets.len();
        let mut out = BTreeMap::new();
        for i in 0..n {
            for j in i + 1..n {
                if self.qualified(i) && self.qualified(j) {
                    let e = self.intersection(i, j);
                    if e > 0 {
                        out.insert((i as u32, j as u32), e);
                    }
                }
            }
        }
        out
    }
}

/// Nearest-rank percentile, computed with floating ceil.
pub fn percentile_oracle(values: &[f64], p: u32) -> f64 {
    let mut v: Vec<f64> = values.iter().copied().filter(|&x| x > 0.0).collect();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let rank = ((p as f64 / 100.0) * v.len() as f64).ceil().max(1.0) as usize;
    v[rank - 1]
}

pub fn dense(g: &SparseBipartiteGraph) -> Vec<Vec<f64>> {
    let mut m = vec![vec![0.0; g.n_right()]; g.n_left()];
    for (l, r, w) in g.edges() {
        m[l as usize][r as usize] = w;
    }
    m
}

/// `w_xy / √(Σ_y' w_xy' · Σ_x' w_x'y)` from the dense weight matrix.
pub fn dense_normalized(g: &SparseBipartiteGraph) -> Vec<Vec<f64>> {
    let w = dense(g);
    let (nl, nr) = (g.n_left(), g.n_right());
    let row: Vec<f64> = w.iter().map(|r| r.iter().sum()).collect();
    let col: Vec<f64> = (0..nr).map(|c| (0..nl).map(|r| w[r][c]).sum()).collect();
    let mut out = vec![vec![0.0; nr]; nl];
    for l in 0..nl {
        for r in 0..nr {
            if w[l][r] > 0.0 {
                out[l][r] = w[l][r] / (row[l] * col[r]).sqrt();
            }
        }
    }
    out
}

fn dense_mul(a: &[Vec<f64>], x: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(a.len(), x.cols());
    for (i, row) in a.iter().enumerate() {
        for (j, &w) in row.iter().enumerate() {
            for c in 0..x.cols() {
                out.set(i, c, out.get(i, c) + w * x.get(j, c));
            }
        }
    }
    out
}

fn dense_transpose(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let cols = a.first().map_or(0, |r| r.len());
    (0..cols).map(|c| a.iter().map(|r| r[c]).collect()).collect()
}

/// Layer mean of `T` rounds of dense bipartite propagation.
pub fn dense_propagate(n: &[Vec<f64>], l0: &Matrix, r0: &Matrix, layers: usize) -> (Matrix, Matrix) {
    let nt = dense_transpose(n);
    let (mut l, mut r) = (l0.clone(), r0.clone());
    let (mut sl, mut sr) = (l0.clone(), r0.clone());
    for _ in 0..layers {
        let nl = dense_mul(n, &r);
        let nr = dense_mul(&nt, &l);
        l = nl;
        r = nr;
        sl.add_assign(&l);
        sr.add_assign(&r);
    }
    let s = 1.0 / (layers + 1) as f64;
    (sl.scaled(s), sr.scaled(s))
}

/// `max|a−b| / max|b|`, or the absolute difference when `b` is zero.
pub fn matrix_rel_err(a: &Matrix, b: &Matrix) -> f64 {
    let diff = a.max_abs_diff(b);
    let scale = b.max_abs();
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// Relative error between an analytic and a numeric derivative, with an
/// absolute floor of `1e-6` on the denominator.
pub fn grad_rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Central difference of `f` at `x[idx]`.
pub fn central_diff(x: &mut [f64], idx: usize, h: f64, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
    let orig = x[idx];
    x[idx] = orig + h;
    let up = f(x);
    x[idx] = orig - h;
    let down = f(x);
    x[idx] = orig;
    (up - down) / (2.0 * h)
}

/// Hand computation of Recall@K and nDCG@K from the positions of the
/// relevant items in a ranking.
pub fn metric_oracle(ranking: &[usize], relevant: &BTreeSet<usize>, k: usize) -> (f64, f64) {
    let mut hits = 0usize;
    let mut dcg = 0.0;
    for (pos, b) in ranking.iter().enumerate().take(k) {
        if relevant.contains(b) {
            hits += 1;
            dcg += 1.0 / ((pos + 2) as f64).log2();
        }
    }
    let mut idcg = 0.0;
    for pos in 0..relevant.len().min(k) {
        idcg += 1.0 / ((pos + 2) as f64).log2();
    }
    (hits as f64 / relevant.len() as f64, dcg / idcg)
}

/// Calls `f` on every permutation of `items` (Heap's algorithm).
pub fn for_each_permutation(items: &mut [usize], f: &mut impl FnMut(&[usize])) {
    let n = items.len();
    let mut c = vec![0usize; n];
    f(items);
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                items.swap(0, i);
            } else {
                items.swap(c[i], i);
            }
            f(items);
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
}

/// A small planted dataset with fixed thresholds so relations of every class
/// exist regardless of the sample.
pub fn small_setup(seed: u64, dim: usize) -> (Dataset, Prepared, Config, EmbeddingState) {
    let spec = PlantedSpec {
        communities: 2,
        users_per_community: 5,
        items_per_community: 8,
        warm_bundles_per_community: 3,
        cold_bundles_per_community: 2,
        items_per_bundle: 4,
        items_per_user: 4,
        warm_bundles_per_user: 2,
        affinity: 0.8,
        warm_test_rate: 0.2,
    };
    let ds = planted_dataset(&spec, seed).unwrap();
    let mut cfg = Config::default();
    cfg.dim = dim;
    cfg.min_item_freq = 0;
    cfg.tau = 0.5;
    cfg.beta1 = 0.3;
    cfg.beta2 = 0.2;
    cfg.beta3 = 0.4;
    cfg.beta4 = 0.01;
    cfg.thresholds = Some(ThresholdOverride {
        ui: GraphThresholds {
            high: 0.3,
            low: 0.2,
            anti: 0.15,
        },
        bi: GraphThresholds {
            high: 0.4,
            low: 0.3,
            anti: 0.25,
        },
    });
    let (_, relations) = mine_relations(&ds, &cfg).unwrap();
    let prep = prepare(&ds, &relations, &cfg).unwrap();
    let state = init_embeddings(&ds.spaces, &prep.graphs.warm_bundles, dim, seed + 1).unwrap();
    (ds, prep, cfg, state)
}
