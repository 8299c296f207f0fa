//! Builds every derived structure the model needs from a dataset and config.

use crate::config::Config;
use crate::dataset::Dataset;
use crate::enhance::{build_enhanced_ii, enhance_ui};
use crate::error::Result;
use crate::graph::SparseBipartiteGraph;
use crate::model::ModelGraphs;
use crate::popularity::{build_popularity_bi, item_popularity, longtail_scale, uniform_scale, PopularityBiGraph, PopularityProfile};
use crate::relations::{self, cap_r4_negatives, RelationTable, ThresholdSet};

/// Mines R1–R4 relations with the configured frequency filter and thresholds.
pub fn mine_relations(ds: &Dataset, cfg: &Config) -> Result<(ThresholdSet, RelationTable)> {
    relations::mine(
        &ds.ui,
        &ds.bi,
        cfg.min_item_freq,
        cfg.threshold_percentiles(),
        cfg.thresholds.map(|t| (t.ui, t.bi)),
    )
}

/// Popularity profile from training interactions, scaled per config.
pub fn popularity_profile(ds: &Dataset, cfg: &Config) -> Result<PopularityProfile> {
    let raw = item_popularity(&ds.ui, &ds.bi, ds.ub_train())?;
    Ok(if cfg.uniform_popularity {
        uniform_scale(raw)
    } else {
        longtail_scale(raw, cfg.alpha_k, cfg.cumulative)
    })
}

/// Graphs and relation lists ready for training or scoring.
#[derive(Clone, Debug)]
pub struct Prepared {
    /// R4 lists capped to `mine.r4_cap`.
    pub relations: RelationTable,
    pub popularity: PopularityProfile,
    pub pop_bi: PopularityBiGraph,
    pub ui_enhanced: SparseBipartiteGraph,
    pub graphs: ModelGraphs,
}

pub fn prepare(ds: &Dataset, relations: &RelationTable, cfg: &Config) -> Result<Prepared> {
    let relations = cap_r4_negatives(relations, cfg.r4_cap, cfg.mine_seed)?;
    let popularity = popularity_profile(ds, cfg)?;
    let pop_bi = build_popularity_bi(&ds.bi, &popularity)?;
    let enh = build_enhanced_ii(&relations, ds.spaces.n_items)?;
    let ui_enhanced = enhance_ui(&ds.ui, &enh, cfg.alpha, cfg.exclude_identity)?;
    let graphs = ModelGraphs::new(ds.spaces, &ds.ui, &ui_enhanced, ds.ub_train(), &pop_bi)?;
    Ok(Prepared {
        relations,
        popularity,
        pop_bi,
        ui_enhanced,
        graphs,
    })
}
