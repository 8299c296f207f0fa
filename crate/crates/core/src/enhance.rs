//! Injection of cross-domain complementary (R2) item pairs into the
//! user–item graph.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::graph::SparseBipartiteGraph;
use crate::relations::RelationTable;

/// Symmetric item×item adjacency: identity plus unit entries at R2 pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct EnhancedItemAdjacency {
    partners: Vec<Vec<u32>>,
}

impl EnhancedItemAdjacency {
    pub fn n_items(&self) -> usize {
        self.partners.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let diag = if i == j { 1.0 } else { 0.0 };
        let off = if self.partners[i].binary_search(&(j as u32)).is_ok() {
            1.0
        } else {
            0.0
        };
        diag + off
    }

    /// Off-diagonal R2 partners of an item, ascending.
    pub fn partners(&self, i: usize) -> &[u32] {
        &self.partners[i]
    }

    pub fn offdiag_nnz(&self) -> usize {
        self.partners.iter().map(Vec::len).sum()
    }
}

pub fn build_enhanced_ii(relations: &RelationTable, n_items: usize) -> Result<EnhancedItemAdjacency> {
    if relations.n_items() != n_items {
        return Err(Error::Mismatch(format!(
            "relation table covers {} items, graph has {n_items}",
            relations.n_items()
        )));
    }
    let partners = (0..n_items)
        .map(|i| relations.r2_partners(i).to_vec())
        .collect();
    Ok(EnhancedItemAdjacency { partners })
}

/// `A' = A + α·(A·A_enh)`, or `A + α·(A·(A_enh − I))` when `exclude_identity`.
///
/// With the identity kept, every existing edge gains weight `(1 + α)·w`.
pub fn enhance_ui(
    ui: &SparseBipartiteGraph,
    enh: &EnhancedItemAdjacency,
    alpha: f64,
    exclude_identity: bool,
) -> Result<SparseBipartiteGraph> {
    if ui.n_right() != enh.n_items() {
        return Err(Error::Mismatch(format!(
            "user-item graph has {} items, enhanced adjacency {}",
            ui.n_right(),
            enh.n_items()
        )));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Config(format!("enhance.alpha must be in [0,1], got {alpha}")));
    }
    let self_weight = if exclude_identity { 1.0 } else { 1.0 + alpha };
    let mut edges = Vec::with_capacity(ui.n_edges());
    let mut row: BTreeMap<u32, f64> = BTreeMap::new();
    for u in 0..ui.n_left() {
        row.clear();
        for (&i, &w) in ui.neighbors(u).iter().zip(ui.neighbor_weights(u)) {
            *row.entry(i).or_insert(0.0) += self_weight * w;
        }
        if alpha > 0.0 {
            for (&i, &w) in ui.neighbors(u).iter().zip(ui.neighbor_weights(u)) {
                for &j in enh.partners(i as usize) {
                    *row.entry(j).or_insert(0.0) += alpha * w;
                }
            }
        }
        edges.extend(row.iter().map(|(&i, &w)| (u as u32, i, w)));
    }
    SparseBipartiteGraph::from_weighted(ui.kind(), ui.n_left(), ui.n_right(), edges)
}
