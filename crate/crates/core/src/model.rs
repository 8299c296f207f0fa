//! Embedding tables, graph propagation, the cold and warm scenario forward
//! passes, scenario fusion and scoring.
//!
//! Everything between the trainable tables and the per-scenario user/bundle
//! embeddings is linear, so [`backward`] pushes output gradients through the
//! transposes of the same sparse operators used by the forward pass.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{EntitySpaces, SparseBipartiteGraph};
use crate::matrix::{dot, Matrix};
use crate::popularity::PopularityBiGraph;
use crate::sparse::SparseOp;

pub const TABLE_NAMES: [&str; 5] = ["user_warm", "item_warm", "bundle_warm", "user_cold", "item_cold"];

/// Trainable initial embeddings.
///
/// Only warm bundles (those with training interactions) own a row in
/// `bundle_warm`; cold bundles are always derived from their items.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingState {
    pub dim: usize,
    pub user_warm: Matrix,
    pub item_warm: Matrix,
    pub bundle_warm: Matrix,
    pub user_cold: Matrix,
    pub item_cold: Matrix,
    /// Bundle id of each `bundle_warm` row, ascending.
    pub warm_bundles: Vec<u32>,
}

impl EmbeddingState {
    pub fn tables(&self) -> [&Matrix; 5] {
        [
            &self.user_warm,
            &self.item_warm,
            &self.bundle_warm,
            &self.user_cold,
            &self.item_cold,
        ]
    }

    pub fn tables_mut(&mut self) -> [&mut Matrix; 5] {
        [
            &mut self.user_warm,
            &mut self.item_warm,
            &mut self.bundle_warm,
            &mut self.user_cold,
            &mut self.item_cold,
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.tables().iter().all(|t| t.is_finite())
    }
}

/// Seeded initialization with entries uniform of variance `1/d`, so each row
/// has expected squared norm 1.
pub fn init_embeddings(spaces: &EntitySpaces, warm_bundles: &[u32], dim: usize, seed: u64) -> Result<EmbeddingState> {
    if dim == 0 {
        return Err(Error::Config("embedding dimension must be positive".into()));
    }
    if spaces.n_users == 0 || spaces.n_items == 0 || spaces.n_bundles == 0 {
        return Err(Error::Input("cannot initialize embeddings for an empty entity space".into()));
    }
    if warm_bundles.windows(2).any(|w| w[0] >= w[1])
        || warm_bundles.last().is_some_and(|&b| b as usize >= spaces.n_bundles)
    {
        return Err(Error::Input("warm bundle list must be ascending and in range".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = 1.0 / (dim as f64).sqrt();
    let mut table = |rows| Matrix::random_uniform(rows, dim, scale, &mut rng);
    Ok(EmbeddingState {
        dim,
        user_warm: table(spaces.n_users),
        item_warm: table(spaces.n_items),
        bundle_warm: table(warm_bundles.len()),
        user_cold: table(spaces.n_users),
        item_cold: table(spaces.n_items),
        warm_bundles: warm_bundles.to_vec(),
    })
}

/// Layer-wise propagation on a bipartite operator `N` (left × right):
/// `left⁽ᵗ⁺¹⁾ = N·right⁽ᵗ⁾`, `right⁽ᵗ⁺¹⁾ = Nᵀ·left⁽ᵗ⁾`.
pub fn propagate(op: &SparseOp, left0: &Matrix, right0: &Matrix, layers: usize) -> (Vec<Matrix>, Vec<Matrix>) {
    let mut left = vec![left0.clone()];
    let mut right = vec![right0.clone()];
    for t in 0..layers {
        let l = op.apply(&right[t]);
        let r = op.apply_t(&left[t]);
        left.push(l);
        right.push(r);
    }
    (left, right)
}

/// Mean over all layers `0..=T`.
pub fn coalesce(layers: &[Matrix]) -> Matrix {
    let mut out = layers[0].clone();
    for l in &layers[1..] {
        out.add_assign(l);
    }
    out.scale(1.0 / layers.len() as f64);
    out
}

pub fn propagate_coalesced(op: &SparseOp, left0: &Matrix, right0: &Matrix, layers: usize) -> (Matrix, Matrix) {
    let (l, r) = propagate(op, left0, right0, layers);
    (coalesce(&l), coalesce(&r))
}

/// Adjoint of [`propagate_coalesced`]. The block operator `[[0, N], [Nᵀ, 0]]`
/// is symmetric, so the adjoint is the same map applied to the gradients.
pub fn propagate_coalesced_adjoint(op: &SparseOp, g_left: &Matrix, g_right: &Matrix, layers: usize) -> (Matrix, Matrix) {
    propagate_coalesced(op, g_left, g_right, layers)
}

/// Sparse operators for every view, built once per dataset.
#[derive(Clone, Debug)]
pub struct ModelGraphs {
    pub spaces: EntitySpaces,
    /// Normalized plain user–item graph.
    pub ui_plain: SparseOp,
    /// Normalized relation-enhanced user–item graph.
    pub ui_enhanced: SparseOp,
    /// Normalized training user–bundle graph.
    pub ub: SparseOp,
    /// Normalized popularity-weighted bundle–item graph; also the
    /// popularity-weighted bundle pooling operator.
    pub bi_pop: SparseOp,
    pub user_mean_plain: SparseOp,
    pub user_mean_enhanced: SparseOp,
    /// Popularity-weighted item mean for bundles without a warm table row.
    pub cold_init: SparseOp,
    /// Bundle id → row of `bundle_warm`.
    pub warm_row: Vec<Option<u32>>,
    pub warm_bundles: Vec<u32>,
    /// Member items of each bundle.
    pub bundle_items: Vec<Vec<u32>>,
}

impl ModelGraphs {
    pub fn new(
        spaces: EntitySpaces,
        ui: &SparseBipartiteGraph,
        ui_enhanced: &SparseBipartiteGraph,
        ub_train: &SparseBipartiteGraph,
        bi_pop: &PopularityBiGraph,
    ) -> Result<Self> {
        let expect = |g: &SparseBipartiteGraph| {
            if (g.n_left(), g.n_right()) != spaces.dims(g.kind()) {
                Err(Error::Mismatch(format!("{} graph does not match entity counts", g.kind())))
            } else {
                Ok(())
            }
        };
        expect(ui)?;
        expect(ui_enhanced)?;
        expect(ub_train)?;
        expect(bi_pop.graph())?;
        let counts = ub_train.right_counts();
        let warm_bundles: Vec<u32> = (0..spaces.n_bundles as u32).filter(|&b| counts[b as usize] > 0).collect();
        let mut warm_row = vec![None; spaces.n_bundles];
        for (row, &b) in warm_bundles.iter().enumerate() {
            warm_row[b as usize] = Some(row as u32);
        }
        for b in 0..spaces.n_bundles {
            if bi_pop.graph().out_degree(b) == 0 {
                log::debug!("bundle {b} has no items; its item-derived embeddings are zero");
            }
        }
        let cold_init = SparseOp::weighted_row_mean(bi_pop.graph(), |b| warm_row[b].is_none());
        Ok(ModelGraphs {
            spaces,
            ui_plain: SparseOp::normalized(ui),
            ui_enhanced: SparseOp::normalized(ui_enhanced),
            ub: SparseOp::normalized(ub_train),
            bi_pop: SparseOp::normalized(bi_pop.graph()),
            user_mean_plain: SparseOp::row_mean(ui),
            user_mean_enhanced: SparseOp::row_mean(ui_enhanced),
            cold_init,
            warm_row,
            warm_bundles,
            bundle_items: (0..spaces.n_bundles)
                .map(|b| bi_pop.graph().neighbors(b).to_vec())
                .collect(),
        })
    }

    /// Full bundle matrix with warm rows from the table and zeros elsewhere.
    fn scatter_warm(&self, table: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(self.spaces.n_bundles, table.cols());
        for (row, &b) in self.warm_bundles.iter().enumerate() {
            out.row_mut(b as usize).copy_from_slice(table.row(row));
        }
        out
    }

    fn gather_warm(&self, full: &Matrix) -> Matrix {
        let idx: Vec<usize> = self.warm_bundles.iter().map(|&b| b as usize).collect();
        full.select_rows(&idx)
    }
}

/// Forward-pass settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelOptions {
    pub layers: usize,
    /// Scenario weight `k`.
    pub k: f64,
    /// Early-fusion weights of the UB, UI and BI warm views.
    pub warm_view_weights: [f64; 3],
    /// Early-fusion weights of the user→item→bundle and bundle→item→user cold views.
    pub cold_view_weights: [f64; 2],
}

impl Default for ModelOptions {
    fn default() -> Self {
        ModelOptions {
            layers: 2,
            k: 0.5,
            warm_view_weights: [1.0 / 3.0; 3],
            cold_view_weights: [0.5; 2],
        }
    }
}

/// Per-view outputs of both scenarios.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewEmbeddings {
    /// User→item→bundle cold view on the enhanced UI graph.
    pub cold_ui_users: Matrix,
    pub cold_ui_items: Matrix,
    pub cold_ui_bundles: Matrix,
    /// Bundle→item→user cold view on the popularity BI graph.
    pub cold_bi_bundles: Matrix,
    pub cold_bi_items: Matrix,
    pub cold_bi_users: Matrix,
    pub warm_ub_users: Matrix,
    pub warm_ub_bundles: Matrix,
    pub warm_ui_users: Matrix,
    pub warm_ui_items: Matrix,
    pub warm_ui_bundles: Matrix,
    pub warm_bi_bundles: Matrix,
    pub warm_bi_items: Matrix,
    pub warm_bi_users: Matrix,
}

/// Early-fused user and bundle embeddings of one scenario.
#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioEmbeddings {
    pub users: Matrix,
    pub bundles: Matrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForwardOutput {
    pub warm: ScenarioEmbeddings,
    pub cold: ScenarioEmbeddings,
    /// Item embeddings of the cold user→item→bundle view.
    pub cold_items: Matrix,
}

pub fn cold_views(g: &ModelGraphs, s: &EmbeddingState, layers: usize) -> [Matrix; 6] {
    let (ui_users, ui_items) = propagate_coalesced(&g.ui_enhanced, &s.user_cold, &s.item_cold, layers);
    let ui_bundles = g.bi_pop.apply(&ui_items);
    let (bi_bundles, bi_items) = propagate_coalesced(&g.bi_pop, &ui_bundles, &s.item_cold, layers);
    let bi_users = g.user_mean_enhanced.apply(&bi_items);
    [ui_users, ui_items, ui_bundles, bi_bundles, bi_items, bi_users]
}

pub fn warm_views(g: &ModelGraphs, s: &EmbeddingState, layers: usize) -> [Matrix; 8] {
    let bundles0 = g.scatter_warm(&s.bundle_warm);
    let (ub_users, ub_bundles) = propagate_coalesced(&g.ub, &s.user_warm, &bundles0, layers);
    let (ui_users, ui_items) = propagate_coalesced(&g.ui_plain, &s.user_warm, &s.item_warm, layers);
    let ui_bundles = g.bi_pop.apply(&ui_items);
    let mut bi_bundles0 = bundles0;
    bi_bundles0.add_assign(&g.cold_init.apply(&s.item_warm));
    let (bi_bundles, bi_items) = propagate_coalesced(&g.bi_pop, &bi_bundles0, &s.item_warm, layers);
    let bi_users = g.user_mean_plain.apply(&bi_items);
    [ub_users, ub_bundles, ui_users, ui_items, ui_bundles, bi_bundles, bi_items, bi_users]
}

pub fn view_embeddings(g: &ModelGraphs, s: &EmbeddingState, opts: &ModelOptions) -> ViewEmbeddings {
    let [cold_ui_users, cold_ui_items, cold_ui_bundles, cold_bi_bundles, cold_bi_items, cold_bi_users] =
        cold_views(g, s, opts.layers);
    let [warm_ub_users, warm_ub_bundles, warm_ui_users, warm_ui_items, warm_ui_bundles, warm_bi_bundles, warm_bi_items, warm_bi_users] =
        warm_views(g, s, opts.layers);
    ViewEmbeddings {
        cold_ui_users,
        cold_ui_items,
        cold_ui_bundles,
        cold_bi_bundles,
        cold_bi_items,
        cold_bi_users,
        warm_ub_users,
        warm_ub_bundles,
        warm_ui_users,
        warm_ui_items,
        warm_ui_bundles,
        warm_bi_bundles,
        warm_bi_items,
        warm_bi_users,
    }
}

fn weighted_sum(parts: &[(&Matrix, f64)]) -> Matrix {
    let mut out = Matrix::zeros(parts[0].0.rows(), parts[0].0.cols());
    for &(m, w) in parts {
        if w != 0.0 {
            out.add_scaled(m, w);
        }
    }
    out
}

/// Early fusion of the views into per-scenario embeddings.
pub fn fuse_views(v: &ViewEmbeddings, opts: &ModelOptions) -> ForwardOutput {
    let [a, b] = opts.cold_view_weights;
    let [x, y, z] = opts.warm_view_weights;
    ForwardOutput {
        cold: ScenarioEmbeddings {
            users: weighted_sum(&[(&v.cold_ui_users, a), (&v.cold_bi_users, b)]),
            bundles: weighted_sum(&[(&v.cold_ui_bundles, a), (&v.cold_bi_bundles, b)]),
        },
        warm: ScenarioEmbeddings {
            users: weighted_sum(&[(&v.warm_ub_users, x), (&v.warm_ui_users, y), (&v.warm_bi_users, z)]),
            bundles: weighted_sum(&[(&v.warm_ub_bundles, x), (&v.warm_ui_bundles, y), (&v.warm_bi_bundles, z)]),
        },
        cold_items: v.cold_ui_items.clone(),
    }
}

pub fn forward(g: &ModelGraphs, s: &EmbeddingState, opts: &ModelOptions) -> ForwardOutput {
    fuse_views(&view_embeddings(g, s, opts), opts)
}

/// Gradients of a scalar loss with respect to the forward outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct OutputGrads {
    pub warm_users: Matrix,
    pub warm_bundles: Matrix,
    pub cold_users: Matrix,
    pub cold_bundles: Matrix,
    pub cold_items: Matrix,
}

impl OutputGrads {
    pub fn zeros(spaces: &EntitySpaces, dim: usize) -> Self {
        OutputGrads {
            warm_users: Matrix::zeros(spaces.n_users, dim),
            warm_bundles: Matrix::zeros(spaces.n_bundles, dim),
            cold_users: Matrix::zeros(spaces.n_users, dim),
            cold_bundles: Matrix::zeros(spaces.n_bundles, dim),
            cold_items: Matrix::zeros(spaces.n_items, dim),
        }
    }
}

/// Per-table gradient accumulators, shaped like [`EmbeddingState`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradientBuffer {
    pub tables: [Matrix; 5],
}

impl GradientBuffer {
    pub fn zeros_like(s: &EmbeddingState) -> Self {
        GradientBuffer {
            tables: s.tables().map(|t| Matrix::zeros(t.rows(), t.cols())),
        }
    }

    pub fn zero(&mut self) {
        for t in &mut self.tables {
            t.as_mut_slice().fill(0.0);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tables.iter().all(Matrix::is_finite)
    }
}

/// Backpropagates output gradients to the embedding tables, accumulating into `out`.
pub fn backward(g: &ModelGraphs, opts: &ModelOptions, grads: &OutputGrads, out: &mut GradientBuffer) {
    let t = opts.layers;
    let [a, b] = opts.cold_view_weights;
    let [x, y, z] = opts.warm_view_weights;
    let [g_user_warm, g_item_warm, g_bundle_warm, g_user_cold, g_item_cold] = &mut out.tables;

    // Cold scenario, walked in reverse.
    let g_bi_users = grads.cold_users.scaled(b);
    let g_bi_items = g.user_mean_enhanced.apply_t(&g_bi_users);
    let (g_ui_bundles_from_bi, g_item_cold_bi) =
        propagate_coalesced_adjoint(&g.bi_pop, &grads.cold_bundles.scaled(b), &g_bi_items, t);
    let mut g_ui_bundles = grads.cold_bundles.scaled(a);
    g_ui_bundles.add_assign(&g_ui_bundles_from_bi);
    let mut g_ui_items = g.bi_pop.apply_t(&g_ui_bundles);
    g_ui_items.add_assign(&grads.cold_items);
    let (gu, gi) = propagate_coalesced_adjoint(&g.ui_enhanced, &grads.cold_users.scaled(a), &g_ui_items, t);
    g_user_cold.add_assign(&gu);
    g_item_cold.add_assign(&gi);
    g_item_cold.add_assign(&g_item_cold_bi);

    // Warm scenario: user–bundle view.
    let (gu, gb0) = propagate_coalesced_adjoint(&g.ub, &grads.warm_users.scaled(x), &grads.warm_bundles.scaled(x), t);
    g_user_warm.add_assign(&gu);
    g_bundle_warm.add_assign(&g.gather_warm(&gb0));

    // User–item view.
    let g_items_ui = g.bi_pop.apply_t(&grads.warm_bundles.scaled(y));
    let (gu, gi) = propagate_coalesced_adjoint(&g.ui_plain, &grads.warm_users.scaled(y), &g_items_ui, t);
    g_user_warm.add_assign(&gu);
    g_item_warm.add_assign(&gi);

    // Bundle–item view, including the item-derived layer-0 of cold bundles.
    let g_items_bi = g.user_mean_plain.apply_t(&grads.warm_users.scaled(z));
    let (gb0, gi) = propagate_coalesced_adjoint(&g.bi_pop, &grads.warm_bundles.scaled(z), &g_items_bi, t);
    g_item_warm.add_assign(&gi);
    g_bundle_warm.add_assign(&g.gather_warm(&gb0));
    g_item_warm.add_assign(&g.cold_init.apply_t(&gb0));
}

/// Scenario-weighted concatenation `[k·e_warm | (1−k)·e_cold]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FusedEmbeddings {
    pub users: Matrix,
    pub bundles: Matrix,
    pub k: f64,
}

pub fn fuse(warm: &ScenarioEmbeddings, cold: &ScenarioEmbeddings, k: f64) -> FusedEmbeddings {
    FusedEmbeddings {
        users: Matrix::hconcat(&warm.users.scaled(k), &cold.users.scaled(1.0 - k)),
        bundles: Matrix::hconcat(&warm.bundles.scaled(k), &cold.bundles.scaled(1.0 - k)),
        k,
    }
}

impl FusedEmbeddings {
    pub fn score(&self, user: usize, bundle: usize) -> f64 {
        dot(self.users.row(user), self.bundles.row(bundle))
    }
}

pub fn score(user: usize, bundle: usize, fused: &FusedEmbeddings) -> f64 {
    fused.score(user, bundle)
}
