//! Item popularity from user and bundle interactions, long-tail rescaling and
//! the popularity-weighted bundle–item graph.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::SparseBipartiteGraph;
use crate::percentile::nearest_rank_sorted;

pub const DEFAULT_ALPHA_K: [f64; 5] = [0.2, 0.4, 0.6, 0.8, 1.0];

/// Percentile anchors of total item popularity: P50, P60, P70, P80, P90.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PopularityAnchors {
    pub p: [f64; 5],
    pub median: f64,
    pub max: f64,
}

impl PopularityAnchors {
    pub fn from_values(values: &[f64]) -> Option<Self> {
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let at = |q| nearest_rank_sorted(&v, q);
        Some(PopularityAnchors {
            p: [at(50)?, at(60)?, at(70)?, at(80)?, at(90)?],
            median: at(50)?,
            max: *v.last()?,
        })
    }

    /// `(lower, upper]` bounds of scaling interval `k` in `0..5`.
    pub fn interval(&self, k: usize) -> (f64, f64) {
        if k < 4 {
            (self.p[k], self.p[k + 1])
        } else {
            (self.p[4], self.max)
        }
    }
}

/// Piecewise-linear long-tail scaling of one popularity value.
///
/// Literal form: `M·(1 + Σ_k α_k·frac_k·[L_k < pop ≤ U_k]) + M·[pop > P90]`,
/// which restarts at `M` at the bottom of each interval. The cumulative form
/// `M·(1 + Σ_{j<k} α_j + α_k·frac_k)` is continuous and monotone.
pub fn longtail_value(pop: f64, anchors: &PopularityAnchors, alpha_k: &[f64; 5], cumulative: bool) -> f64 {
    let m = anchors.median;
    let mut acc = 1.0;
    for (k, &a) in alpha_k.iter().enumerate() {
        let (lo, hi) = anchors.interval(k);
        if lo < pop && pop <= hi {
            let frac = (pop - lo) / (hi - lo);
            if cumulative {
                acc += alpha_k[..k].iter().sum::<f64>();
            }
            acc += a * frac;
        }
    }
    let top = if !cumulative && pop > anchors.p[4] { m } else { 0.0 };
    m * acc + top
}

/// Raw and rescaled per-item popularity plus per-bundle weights.
#[derive(Clone, Debug, PartialEq)]
pub struct PopularityProfile {
    pub pop_ui: Vec<f64>,
    pub pop_bi: Vec<f64>,
    pub pop_total: Vec<f64>,
    pub pop_adj: Vec<f64>,
    /// `w_b = min(N_b / P90_bundle, 1)`.
    pub bundle_weights: Vec<f64>,
    pub bundle_p90: f64,
    pub anchors: PopularityAnchors,
    pub alpha_k: [f64; 5],
    pub cumulative: bool,
}

/// Computes UI popularity, bundle weights and weighted BI popularity from
/// training data. `pop_adj` is left equal to the median until
/// [`longtail_scale`] fills it.
pub fn item_popularity(
    ui: &SparseBipartiteGraph,
    bi: &SparseBipartiteGraph,
    ub_train: &SparseBipartiteGraph,
) -> Result<PopularityProfile> {
    if ui.n_right() != bi.n_right() || bi.n_left() != ub_train.n_right() {
        return Err(Error::Mismatch("popularity inputs disagree on entity counts".into()));
    }
    let pop_ui: Vec<f64> = ui.right_counts().into_iter().map(f64::from).collect();
    let n_b: Vec<f64> = ub_train.right_counts().into_iter().map(f64::from).collect();
    let mut sorted = n_b.clone();
    sorted.sort_by(f64::total_cmp);
    let bundle_p90 = nearest_rank_sorted(&sorted, 90).unwrap_or(0.0);
    if bundle_p90 <= 0.0 {
        return Err(Error::Input(
            "90th percentile of bundle interaction counts is zero; no bundle interactions to weight".into(),
        ));
    }
    let bundle_weights: Vec<f64> = n_b.iter().map(|&n| (n / bundle_p90).min(1.0)).collect();
    let mut pop_bi = vec![0.0; bi.n_right()];
    for (b, i, _) in bi.edges() {
        pop_bi[i as usize] += bundle_weights[b as usize];
    }
    let pop_total: Vec<f64> = pop_ui.iter().zip(&pop_bi).map(|(a, b)| a + b).collect();
    let anchors = PopularityAnchors::from_values(&pop_total)
        .ok_or_else(|| Error::Input("no items".into()))?;
    Ok(PopularityProfile {
        pop_adj: vec![anchors.median; pop_total.len()],
        pop_ui,
        pop_bi,
        pop_total,
        bundle_weights,
        bundle_p90,
        anchors,
        alpha_k: DEFAULT_ALPHA_K,
        cumulative: false,
    })
}

/// Fills `pop_adj` with the long-tail scaled popularity.
pub fn longtail_scale(mut profile: PopularityProfile, alpha_k: [f64; 5], cumulative: bool) -> PopularityProfile {
    profile.alpha_k = alpha_k;
    profile.cumulative = cumulative;
    profile.pop_adj = profile
        .pop_total
        .iter()
        .map(|&p| longtail_value(p, &profile.anchors, &alpha_k, cumulative))
        .collect();
    profile
}

/// Ablation profile: every item gets `pop_adj = 1`, so the weighted graph
/// reduces to the plain bundle–item graph.
pub fn uniform_scale(mut profile: PopularityProfile) -> PopularityProfile {
    profile.pop_adj = vec![1.0; profile.pop_total.len()];
    profile
}

impl PopularityProfile {
    /// `item\tpop_ui\tpop_bi\tpop_adj` lines, six decimals.
    pub fn to_tsv(&self) -> String {
        let mut s = String::with_capacity(self.pop_ui.len() * 32);
        for i in 0..self.pop_ui.len() {
            s.push_str(&format!(
                "{i}\t{:.6}\t{:.6}\t{:.6}\n",
                self.pop_ui[i], self.pop_bi[i], self.pop_adj[i]
            ));
        }
        s
    }

    /// Smallest positive `pop_adj`, used to floor zero-popularity items.
    pub fn positive_floor(&self) -> f64 {
        self.pop_adj
            .iter()
            .copied()
            .filter(|&p| p > 0.0)
            .fold(f64::INFINITY, f64::min)
    }
}

/// Bundle–item graph whose edge `(b, i)` carries the item's adjusted popularity.
#[derive(Clone, Debug, PartialEq)]
pub struct PopularityBiGraph {
    graph: SparseBipartiteGraph,
    floor: f64,
}

impl PopularityBiGraph {
    pub fn graph(&self) -> &SparseBipartiteGraph {
        &self.graph
    }

    /// Weight an item carries on each of its bundle edges.
    pub fn item_weight(&self, profile: &PopularityProfile, item: usize) -> f64 {
        let p = profile.pop_adj[item];
        if p > 0.0 {
            p
        } else {
            self.floor
        }
    }

    /// `D_b(b) = Σ_i w_bi`.
    pub fn bundle_degrees(&self) -> &[f64] {
        self.graph.left_degrees()
    }

    /// `D_i(i) = Σ_b w_bi`.
    pub fn item_degrees(&self) -> &[f64] {
        self.graph.right_degrees()
    }
}

pub fn build_popularity_bi(bi: &SparseBipartiteGraph, profile: &PopularityProfile) -> Result<PopularityBiGraph> {
    if profile.pop_adj.len() != bi.n_right() {
        return Err(Error::Mismatch("popularity profile and bundle-item graph disagree on item count".into()));
    }
    let mut floor = profile.positive_floor();
    if !floor.is_finite() {
        log::warn!("every adjusted popularity is zero; falling back to unit bundle-item weights");
        floor = 1.0;
    }
    let weight = |i: usize| {
        let p = profile.pop_adj[i];
        if p > 0.0 {
            p
        } else {
            floor
        }
    };
    let graph = bi.map_weights(|_, i, _| weight(i as usize))?;
    for b in 0..graph.n_left() {
        assert!(
            graph.out_degree(b) == 0 || graph.left_degrees()[b] > 0.0,
            "bundle {b} has items but zero popularity mass"
        );
    }
    Ok(PopularityBiGraph { graph, floor })
}
