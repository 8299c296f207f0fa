//! Item co-occurrence statistics, Jaccard screening and R1–R4 relation mining.
//!
//! Each interaction graph (users×items, bundles×items) is projected onto
//! item pairs by counting shared left-side neighbours. Two Jaccard scores per
//! pair, one per graph, are compared against percentile thresholds:
//!
//! | class | user–item Jaccard | bundle–item Jaccard |
//! |-------|-------------------|---------------------|
//! | R1    | > high            | > high              |
//! | R2    | > high            | < low               |
//! | R3    | < low             | > high              |
//! | R4    | < anti            | < anti              |
//!
//! Only items whose occurrence count exceeds the minimum frequency in *both*
//! graphs are eligible, and only pairs that co-occur in at least one graph are
//! considered, so the table never grows to all `n²` pairs.

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{GraphKind, SparseBipartiteGraph};
use crate::percentile::nearest_rank_sorted;

/// Occurrence counts and pairwise co-occurrence counts over one graph.
#[derive(Clone, Debug, PartialEq)]
pub struct CooccurrenceStats {
    kind: GraphKind,
    min_freq: u32,
    item_counts: Vec<u32>,
    qualified: Vec<bool>,
    /// `(i, j, |E_ij|)` with `i < j`, sorted, `|E_ij| > 0`.
    pairs: Vec<(u32, u32, u32)>,
}

impl CooccurrenceStats {
    pub fn kind(&self) -> GraphKind {
        self.kind
    }

    pub fn min_freq(&self) -> u32 {
        self.min_freq
    }

    pub fn n_items(&self) -> usize {
        self.item_counts.len()
    }

    pub fn count(&self, item: usize) -> u32 {
        self.item_counts[item]
    }

    pub fn is_qualified(&self, item: usize) -> bool {
        self.qualified[item]
    }

    pub fn pairs(&self) -> &[(u32, u32, u32)] {
        &self.pairs
    }

    /// Co-occurrence count of a qualified pair (0 when absent).
    pub fn pair_count(&self, i: u32, j: u32) -> u32 {
        let key = if i < j { (i, j) } else { (j, i) };
        self.pairs
            .binary_search_by_key(&key, |&(a, b, _)| (a, b))
            .map_or(0, |k| self.pairs[k].2)
    }

    /// Jaccard score of a pair of qualified items.
    pub fn jaccard(&self, i: u32, j: u32) -> f64 {
        let e = self.pair_count(i, j);
        jaccard(self.count(i as usize), self.count(j as usize), e)
            .expect("qualified items have positive counts")
    }

    /// Jaccard scores of every co-occurring pair, in pair order.
    pub fn jaccard_values(&self) -> Vec<f64> {
        self.pairs
            .iter()
            .map(|&(i, j, e)| {
                jaccard(self.item_counts[i as usize], self.item_counts[j as usize], e)
                    .expect("co-occurring items have positive counts")
            })
            .collect()
    }
}

/// Counts item occurrences and shared left-side neighbours of every item pair.
///
/// Items with occurrence count `<= min_freq` are dropped from the pair map.
/// The graph is read as binary incidence; weights are ignored.
pub fn cooccurrence(graph: &SparseBipartiteGraph, min_freq: u32) -> CooccurrenceStats {
    let n_items = graph.n_right();
    let item_counts = graph.right_counts();
    let qualified: Vec<bool> = item_counts.iter().map(|&c| c > min_freq).collect();
    let item_to_left = graph.right_adjacency();

    let rows: Vec<Vec<(u32, u32, u32)>> = (0..n_items)
        .into_par_iter()
        .map_init(
            || (vec![0u32; n_items], Vec::<u32>::new()),
            |(scratch, touched), i| {
                if !qualified[i] {
                    return Vec::new();
                }
                for &l in &item_to_left[i] {
                    for &j in graph.neighbors(l as usize) {
                        let ju = j as usize;
                        if ju > i && qualified[ju] {
                            if scratch[ju] == 0 {
                                touched.push(j);
                            }
                            scratch[ju] += 1;
                        }
                    }
                }
                touched.sort_unstable();
                let row = touched
                    .iter()
                    .map(|&j| (i as u32, j, scratch[j as usize]))
                    .collect();
                for &j in touched.iter() {
                    scratch[j as usize] = 0;
                }
                touched.clear();
                row
            },
        )
        .collect();

    CooccurrenceStats {
        kind: graph.kind(),
        min_freq,
        item_counts,
        qualified,
        pairs: rows.into_iter().flatten().collect(),
    }
}

/// `|E_ij| / (C_i + C_j − |E_ij|)`.
pub fn jaccard(c_i: u32, c_j: u32, e_ij: u32) -> Result<f64> {
    if e_ij > c_i.min(c_j) {
        return Err(Error::Input(format!(
            "co-occurrence {e_ij} exceeds occurrence counts ({c_i}, {c_j})"
        )));
    }
    let denom = c_i as u64 + c_j as u64 - e_ij as u64;
    if denom == 0 {
        return Err(Error::Input("jaccard of two never-occurring items".into()));
    }
    Ok(e_ij as f64 / denom as f64)
}

/// High/low/anti cut-offs for one graph.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphThresholds {
    pub high: f64,
    pub low: f64,
    pub anti: f64,
}

impl GraphThresholds {
    fn validate(&self, which: &str) -> Result<()> {
        let ok = [self.high, self.low, self.anti]
            .iter()
            .all(|v| (0.0..=1.0).contains(v))
            && self.high > self.low
            && self.low > self.anti;
        if ok {
            Ok(())
        } else {
            Err(Error::Input(format!(
                "{which} thresholds must satisfy 1 >= high > low > anti >= 0, got \
                 high={} low={} anti={}",
                self.high, self.low, self.anti
            )))
        }
    }
}

/// The seven screening thresholds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSet {
    pub ui: GraphThresholds,
    pub bi: GraphThresholds,
    pub min_item_freq: u32,
}

impl ThresholdSet {
    pub fn new(ui: GraphThresholds, bi: GraphThresholds, min_item_freq: u32) -> Result<Self> {
        ui.validate("user-item")?;
        bi.validate("bundle-item")?;
        Ok(ThresholdSet {
            ui,
            bi,
            min_item_freq,
        })
    }
}

/// Percentile ranks used to derive the high/low/anti thresholds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThresholdPercentiles {
    pub high: u32,
    pub low: u32,
    pub anti: u32,
}

impl Default for ThresholdPercentiles {
    fn default() -> Self {
        ThresholdPercentiles {
            high: 95,
            low: 20,
            anti: 5,
        }
    }
}

fn graph_thresholds(values: &[f64], p: ThresholdPercentiles, which: &str) -> Result<GraphThresholds> {
    let mut v: Vec<f64> = values.iter().copied().filter(|&x| x > 0.0).collect();
    if v.is_empty() {
        return Err(Error::Input(format!(
            "no co-occurring {which} item pairs above the frequency threshold; dataset too sparse to mine"
        )));
    }
    v.sort_by(f64::total_cmp);
    let at = |q| nearest_rank_sorted(&v, q).expect("nonempty");
    Ok(GraphThresholds {
        high: at(p.high),
        low: at(p.low),
        anti: at(p.anti),
    })
}

/// Derives per-graph thresholds as nearest-rank percentiles of the nonzero
/// Jaccard values. Fails when a population is empty or the resulting
/// thresholds are not strictly ordered.
pub fn compute_thresholds(
    j_values_ui: &[f64],
    j_values_bi: &[f64],
    percentiles: ThresholdPercentiles,
    min_item_freq: u32,
) -> Result<ThresholdSet> {
    let ui = graph_thresholds(j_values_ui, percentiles, "user-item")?;
    let bi = graph_thresholds(j_values_bi, percentiles, "bundle-item")?;
    ThresholdSet::new(ui, bi, min_item_freq)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RelationClass {
    /// Same-class: strong in both graphs.
    R1,
    /// Cross-domain complementary: users combine, bundles do not.
    R2,
    /// Design-driven: bundles combine, users do not.
    R3,
    /// Anti-class: weak in both graphs.
    R4,
}

impl RelationClass {
    /// Applies the four predicates with strict inequalities.
    pub fn classify(j_ui: f64, j_bi: f64, t: &ThresholdSet) -> Option<RelationClass> {
        let ui_high = j_ui > t.ui.high;
        let bi_high = j_bi > t.bi.high;
        if ui_high && bi_high {
            Some(RelationClass::R1)
        } else if ui_high && j_bi < t.bi.low {
            Some(RelationClass::R2)
        } else if bi_high && j_ui < t.ui.low {
            Some(RelationClass::R3)
        } else if j_ui < t.ui.anti && j_bi < t.bi.anti {
            Some(RelationClass::R4)
        } else {
            None
        }
    }

    pub fn holds(self, j_ui: f64, j_bi: f64, t: &ThresholdSet) -> bool {
        match self {
            RelationClass::R1 => j_ui > t.ui.high && j_bi > t.bi.high,
            RelationClass::R2 => j_ui > t.ui.high && j_bi < t.bi.low,
            RelationClass::R3 => j_bi > t.bi.high && j_ui < t.ui.low,
            RelationClass::R4 => j_ui < t.ui.anti && j_bi < t.bi.anti,
        }
    }
}

impl fmt::Display for RelationClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RelationClass::R1 => "R1",
            RelationClass::R2 => "R2",
            RelationClass::R3 => "R3",
            RelationClass::R4 => "R4",
        })
    }
}

impl FromStr for RelationClass {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "R1" => Ok(RelationClass::R1),
            "R2" => Ok(RelationClass::R2),
            "R3" => Ok(RelationClass::R3),
            "R4" => Ok(RelationClass::R4),
            other => Err(format!("unknown relation class {other:?}")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RelationEntry {
    pub i: u32,
    pub j: u32,
    pub class: RelationClass,
    pub j_ui: f64,
    pub j_bi: f64,
}

/// Classified item pairs with per-item R2 partner and R4 negative indexes.
#[derive(Clone, Debug, PartialEq)]
pub struct RelationTable {
    n_items: usize,
    entries: Vec<RelationEntry>,
    r2_partners: Vec<Vec<u32>>,
    r4_negatives: Vec<Vec<u32>>,
}

impl RelationTable {
    /// Builds the table from entries with `i < j`; entries are sorted canonically.
    pub fn from_entries(n_items: usize, mut entries: Vec<RelationEntry>) -> Result<Self> {
        entries.sort_by_key(|e| (e.i, e.j));
        let mut r2 = vec![Vec::new(); n_items];
        let mut r4 = vec![Vec::new(); n_items];
        for (k, e) in entries.iter().enumerate() {
            if e.i >= e.j || e.j as usize >= n_items {
                return Err(Error::Input(format!(
                    "relation pair ({}, {}) is not canonical or out of range",
                    e.i, e.j
                )));
            }
            if k > 0 && (entries[k - 1].i, entries[k - 1].j) == (e.i, e.j) {
                return Err(Error::Input(format!(
                    "relation pair ({}, {}) listed twice",
                    e.i, e.j
                )));
            }
            let lists = match e.class {
                RelationClass::R2 => &mut r2,
                RelationClass::R4 => &mut r4,
                _ => continue,
            };
            lists[e.i as usize].push(e.j);
            lists[e.j as usize].push(e.i);
        }
        for l in r2.iter_mut().chain(r4.iter_mut()) {
            l.sort_unstable();
        }
        Ok(RelationTable {
            n_items,
            entries,
            r2_partners: r2,
            r4_negatives: r4,
        })
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn entries(&self) -> &[RelationEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn count(&self, class: RelationClass) -> usize {
        self.entries.iter().filter(|e| e.class == class).count()
    }

    pub fn r2_partners(&self, item: usize) -> &[u32] {
        &self.r2_partners[item]
    }

    pub fn r4_negatives(&self, item: usize) -> &[u32] {
        &self.r4_negatives[item]
    }

    /// Entries whose stored scores no longer satisfy their class predicate.
    pub fn violations(&self, t: &ThresholdSet) -> Vec<RelationEntry> {
        self.entries
            .iter()
            .filter(|e| !e.class.holds(e.j_ui, e.j_bi, t))
            .copied()
            .collect()
    }

    /// `item_i\titem_j\tclass\tjaccard_ui\tjaccard_bi` lines, six decimals.
    pub fn to_tsv(&self) -> String {
        let mut s = String::with_capacity(self.entries.len() * 32);
        for e in &self.entries {
            s.push_str(&format!(
                "{}\t{}\t{}\t{:.6}\t{:.6}\n",
                e.i, e.j, e.class, e.j_ui, e.j_bi
            ));
        }
        s
    }

    pub fn from_tsv(text: &str, n_items: usize) -> Result<Self> {
        let mut entries = Vec::new();
        for (k, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let bad = |m: String| Error::Input(format!("relations line {}: {m}", k + 1));
            let toks: Vec<&str> = line.split('\t').collect();
            if toks.len() != 5 {
                return Err(bad(format!("expected 5 fields, found {}", toks.len())));
            }
            let i = toks[0].parse().map_err(|_| bad("bad item_i".into()))?;
            let j = toks[1].parse().map_err(|_| bad("bad item_j".into()))?;
            let class = toks[2].parse().map_err(bad)?;
            let j_ui = toks[3].parse().map_err(|_| bad("bad jaccard_ui".into()))?;
            let j_bi = toks[4].parse().map_err(|_| bad("bad jaccard_bi".into()))?;
            entries.push(RelationEntry {
                i,
                j,
                class,
                j_ui,
                j_bi,
            });
        }
        Self::from_entries(n_items, entries)
    }
}

/// Classifies every pair of doubly-qualified items that co-occurs in at least
/// one graph. Pairs matching no predicate are dropped.
pub fn classify_pairs(
    ui: &CooccurrenceStats,
    bi: &CooccurrenceStats,
    thresholds: &ThresholdSet,
) -> Result<RelationTable> {
    if ui.n_items() != bi.n_items() {
        return Err(Error::Input("co-occurrence stats cover different item spaces".into()));
    }
    if ui.min_freq() != bi.min_freq() {
        return Err(Error::Input(
            "co-occurrence stats computed with different frequency thresholds".into(),
        ));
    }
    let eligible = |i: u32, j: u32| {
        let (i, j) = (i as usize, j as usize);
        ui.is_qualified(i) && ui.is_qualified(j) && bi.is_qualified(i) && bi.is_qualified(j)
    };
    let (a, b) = (ui.pairs(), bi.pairs());
    let (mut x, mut y) = (0, 0);
    let mut entries = Vec::new();
    let mut push = |i: u32, j: u32, e_ui: u32, e_bi: u32| -> Result<()> {
        if !eligible(i, j) {
            return Ok(());
        }
        let j_ui = jaccard(ui.count(i as usize), ui.count(j as usize), e_ui)?;
        let j_bi = jaccard(bi.count(i as usize), bi.count(j as usize), e_bi)?;
        if let Some(class) = RelationClass::classify(j_ui, j_bi, thresholds) {
            entries.push(RelationEntry {
                i,
                j,
                class,
                j_ui,
                j_bi,
            });
        }
        Ok(())
    };
    // Merge the two sorted pair lists.
    while x < a.len() || y < b.len() {
        let ka = a.get(x).map(|p| (p.0, p.1));
        let kb = b.get(y).map(|p| (p.0, p.1));
        match (ka, kb) {
            (Some(p), Some(q)) if p == q => {
                push(p.0, p.1, a[x].2, b[y].2)?;
                x += 1;
                y += 1;
            }
            (Some(p), Some(q)) if p < q => {
                push(p.0, p.1, a[x].2, 0)?;
                x += 1;
            }
            (Some(p), None) => {
                push(p.0, p.1, a[x].2, 0)?;
                x += 1;
            }
            (_, Some(q)) => {
                push(q.0, q.1, 0, b[y].2)?;
                y += 1;
            }
            (None, None) => unreachable!(),
        }
    }
    RelationTable::from_entries(ui.n_items(), entries)
}

/// Truncates each item's R4 negative list to at most `max_per_item` partners
/// by seeded uniform sampling without replacement.
pub fn cap_r4_negatives(table: &RelationTable, max_per_item: usize, seed: u64) -> Result<RelationTable> {
    if max_per_item == 0 {
        return Err(Error::Config("R4 cap must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = table.clone();
    for list in out.r4_negatives.iter_mut() {
        if list.len() > max_per_item {
            let mut picked: Vec<u32> = index::sample(&mut rng, list.len(), max_per_item)
                .into_iter()
                .map(|k| list[k])
                .collect();
            picked.sort_unstable();
            *list = picked;
        }
    }
    Ok(out)
}

/// Full mining pass: co-occurrence on both graphs, thresholds (derived or
/// overridden), classification.
pub fn mine(
    ui: &SparseBipartiteGraph,
    bi: &SparseBipartiteGraph,
    min_item_freq: u32,
    percentiles: ThresholdPercentiles,
    overrides: Option<(GraphThresholds, GraphThresholds)>,
) -> Result<(ThresholdSet, RelationTable)> {
    let s_ui = cooccurrence(ui, min_item_freq);
    let s_bi = cooccurrence(bi, min_item_freq);
    let thresholds = match overrides {
        Some((t_ui, t_bi)) => ThresholdSet::new(t_ui, t_bi, min_item_freq)?,
        None => compute_thresholds(
            &s_ui.jaccard_values(),
            &s_bi.jaccard_values(),
            percentiles,
            min_item_freq,
        )?,
    };
    let table = classify_pairs(&s_ui, &s_bi, &thresholds)?;
    Ok((thresholds, table))
}
