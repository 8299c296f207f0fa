//! Batch sampling, the joint objective with its gradients, and the
//! optimization loop.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::dataset::{Dataset, Holdout};
use crate::error::{Error, Result};
use crate::eval::evaluate;
use crate::graph::SparseBipartiteGraph;
use crate::loss::{bpr_loss, infonce_ub, item_pair_loss, noise_directions, perturb_with, scenario_loss, InfoNceGrads};
use crate::matrix::{dot, Matrix};
use crate::model::{backward, forward, fuse, init_embeddings, EmbeddingState, GradientBuffer, ModelGraphs, ModelOptions, OutputGrads};
use crate::pipeline::Prepared;
use crate::relations::RelationTable;

/// Training triples `(u, b⁺, b⁻)` with the sorted, deduplicated user and
/// bundle sets used for in-batch negatives.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainBatch {
    pub triples: Vec<(u32, u32, u32)>,
    pub users: Vec<u32>,
    pub bundles: Vec<u32>,
}

impl TrainBatch {
    pub fn new(triples: Vec<(u32, u32, u32)>) -> Self {
        let mut users: Vec<u32> = triples.iter().map(|t| t.0).collect();
        users.sort_unstable();
        users.dedup();
        let mut bundles: Vec<u32> = triples.iter().flat_map(|t| [t.1, t.2]).collect();
        bundles.sort_unstable();
        bundles.dedup();
        TrainBatch {
            triples,
            users,
            bundles,
        }
    }

    /// Checks `x[u,b⁺] = 1` and `x[u,b⁻] = 0` against the training graph.
    pub fn validate(&self, ub_train: &SparseBipartiteGraph) -> Result<()> {
        for &(u, p, n) in &self.triples {
            if !ub_train.contains(u as usize, p as usize) {
                return Err(Error::Input(format!("({u}, {p}) is not a training interaction")));
            }
            if ub_train.contains(u as usize, n as usize) {
                return Err(Error::Input(format!("negative ({u}, {n}) is a training interaction")));
            }
        }
        Ok(())
    }
}

/// Draws one negative per positive, uniformly from `pool` minus the user's
/// training bundles. Positives whose user has interacted with the whole pool
/// are dropped.
pub fn sample_negatives<R: Rng>(
    positives: &[(u32, u32)],
    ub_train: &SparseBipartiteGraph,
    pool: &[u32],
    rng: &mut R,
) -> Vec<(u32, u32, u32)> {
    const TRIES: usize = 32;
    let mut out = Vec::with_capacity(positives.len());
    for &(u, p) in positives {
        let mut found = None;
        for _ in 0..TRIES {
            let b = pool[rng.gen_range(0..pool.len())];
            if !ub_train.contains(u as usize, b as usize) {
                found = Some(b);
                break;
            }
        }
        if found.is_none() {
            let free: Vec<u32> = pool
                .iter()
                .copied()
                .filter(|&b| !ub_train.contains(u as usize, b as usize))
                .collect();
            found = free.choose(rng).copied();
        }
        if let Some(n) = found {
            out.push((u, p, n));
        }
    }
    out
}

/// Noise directions for the two augmented copies of each scenario's batch
/// users and bundles. Order: warm users, warm bundles, cold users, cold bundles.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNoise {
    pub dirs: [(Matrix, Matrix); 4],
}

impl BatchNoise {
    pub fn draw<R: Rng>(batch: &TrainBatch, dim: usize, rng: &mut R) -> Self {
        let (nu, nb) = (batch.users.len(), batch.bundles.len());
        let mut pair = |n| (noise_directions(n, dim, rng), noise_directions(n, dim, rng));
        let wu = pair(nu);
        let wb = pair(nb);
        let cu = pair(nu);
        let cb = pair(nb);
        BatchNoise { dirs: [wu, wb, cu, cb] }
    }
}

/// Loss coefficients and temperatures.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub tau: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub beta3: f64,
    pub beta4: f64,
    pub noise_eps: f64,
}

impl LossWeights {
    pub fn from_config(cfg: &Config) -> Self {
        LossWeights {
            tau: cfg.tau,
            beta1: cfg.effective_beta1(),
            beta2: cfg.beta2,
            beta3: cfg.beta3,
            beta4: cfg.beta4,
            noise_eps: cfg.noise_eps,
        }
    }
}

/// Unweighted loss terms and the weighted total.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub bpr: f64,
    pub augment: f64,
    pub scenario: f64,
    pub item_pair: f64,
    pub reg: f64,
    pub total: f64,
}

impl LossTerms {
    fn check(&self) -> Result<()> {
        for (name, v) in [
            ("bpr", self.bpr),
            ("augment", self.augment),
            ("scenario", self.scenario),
            ("item_pair", self.item_pair),
            ("reg", self.reg),
            ("total", self.total),
        ] {
            if !v.is_finite() {
                return Err(Error::Numeric(format!("{name} loss is {v}")));
            }
        }
        Ok(())
    }

    fn add_scaled(&mut self, o: &LossTerms, s: f64) {
        self.bpr += s * o.bpr;
        self.augment += s * o.augment;
        self.scenario += s * o.scenario;
        self.item_pair += s * o.item_pair;
        self.reg += s * o.reg;
        self.total += s * o.total;
    }
}

fn scatter_rows(dst: &mut Matrix, ids: &[u32], src: &Matrix, s: f64) {
    for (r, &id) in ids.iter().enumerate() {
        for (d, &x) in dst.row_mut(id as usize).iter_mut().zip(src.row(r)) {
            *d += s * x;
        }
    }
}

fn scatter_pair(dst: &mut Matrix, ids: &[u32], g: &InfoNceGrads, s: f64) {
    scatter_rows(dst, ids, &g.query, s);
    scatter_rows(dst, ids, &g.key, s);
}

fn select(m: &Matrix, ids: &[u32]) -> Matrix {
    let idx: Vec<usize> = ids.iter().map(|&i| i as usize).collect();
    m.select_rows(&idx)
}

/// Rows of each table touched by a batch.
fn touched_rows(batch: &TrainBatch, graphs: &ModelGraphs) -> [Vec<usize>; 5] {
    let users: Vec<usize> = batch.users.iter().map(|&u| u as usize).collect();
    let warm: Vec<usize> = batch
        .bundles
        .iter()
        .filter_map(|&b| graphs.warm_row[b as usize].map(|r| r as usize))
        .collect();
    let mut items: Vec<usize> = batch
        .bundles
        .iter()
        .flat_map(|&b| graphs.bundle_items[b as usize].iter().map(|&i| i as usize))
        .collect();
    items.sort_unstable();
    items.dedup();
    [users.clone(), items.clone(), warm, users, items]
}

/// Joint objective on one batch and its gradient with respect to every table.
///
/// `total = bpr + β₁·augment + β₂·scenario + β₃·item_pair + β₄·reg`, where
/// `reg` is the squared norm of the table rows the batch touches.
pub fn total_loss(
    batch: &TrainBatch,
    state: &EmbeddingState,
    graphs: &ModelGraphs,
    relations: &RelationTable,
    opts: &ModelOptions,
    w: &LossWeights,
    noise: &BatchNoise,
) -> Result<(LossTerms, GradientBuffer)> {
    let out = forward(graphs, state, opts);
    let mut og = OutputGrads::zeros(&graphs.spaces, state.dim);
    let k = opts.k;
    let (kw, kc) = (k * k, (1.0 - k) * (1.0 - k));
    let mut terms = LossTerms::default();

    let (uw, bw) = (&out.warm.users, &out.warm.bundles);
    let (uc, bc) = (&out.cold.users, &out.cold.bundles);
    let y = |u: u32, b: u32| {
        let (u, b) = (u as usize, b as usize);
        kw * dot(uw.row(u), bw.row(b)) + kc * dot(uc.row(u), bc.row(b))
    };
    let y_pos: Vec<f64> = batch.triples.iter().map(|&(u, p, _)| y(u, p)).collect();
    let y_neg: Vec<f64> = batch.triples.iter().map(|&(u, _, n)| y(u, n)).collect();
    let (bpr, g_pos) = bpr_loss(&y_pos, &y_neg);
    terms.bpr = bpr;
    for (&(u, p, n), &g) in batch.triples.iter().zip(&g_pos) {
        let (u, p, n) = (u as usize, p as usize, n as usize);
        for c in 0..state.dim {
            let du_w = kw * g * (bw.get(p, c) - bw.get(n, c));
            let du_c = kc * g * (bc.get(p, c) - bc.get(n, c));
            og.warm_users.set(u, c, og.warm_users.get(u, c) + du_w);
            og.cold_users.set(u, c, og.cold_users.get(u, c) + du_c);
            og.warm_bundles.set(p, c, og.warm_bundles.get(p, c) + kw * g * uw.get(u, c));
            og.warm_bundles.set(n, c, og.warm_bundles.get(n, c) - kw * g * uw.get(u, c));
            og.cold_bundles.set(p, c, og.cold_bundles.get(p, c) + kc * g * uc.get(u, c));
            og.cold_bundles.set(n, c, og.cold_bundles.get(n, c) - kc * g * uc.get(u, c));
        }
    }

    let bu_w = select(uw, &batch.users);
    let bb_w = select(bw, &batch.bundles);
    let bu_c = select(uc, &batch.users);
    let bb_c = select(bc, &batch.bundles);

    // Noise-augmented views; the perturbation has identity Jacobian, so
    // gradients of both copies flow straight back to the clean embeddings.
    let eps = w.noise_eps;
    let [(wu1, wu2), (wb1, wb2), (cu1, cu2), (cb1, cb2)] = &noise.dirs;
    let (l_w, gu_w, gb_w) = infonce_ub(
        &perturb_with(&bu_w, wu1, eps),
        &perturb_with(&bu_w, wu2, eps),
        &perturb_with(&bb_w, wb1, eps),
        &perturb_with(&bb_w, wb2, eps),
        w.tau,
    );
    let (l_c, gu_c, gb_c) = infonce_ub(
        &perturb_with(&bu_c, cu1, eps),
        &perturb_with(&bu_c, cu2, eps),
        &perturb_with(&bb_c, cb1, eps),
        &perturb_with(&bb_c, cb2, eps),
        w.tau,
    );
    terms.augment = l_w + l_c;
    if w.beta1 != 0.0 {
        scatter_pair(&mut og.warm_users, &batch.users, &gu_w, w.beta1);
        scatter_pair(&mut og.warm_bundles, &batch.bundles, &gb_w, w.beta1);
        scatter_pair(&mut og.cold_users, &batch.users, &gu_c, w.beta1);
        scatter_pair(&mut og.cold_bundles, &batch.bundles, &gb_c, w.beta1);
    }

    let (l_s, gu_s, gb_s) = scenario_loss(&bu_w, &bu_c, &bb_w, &bb_c, w.tau);
    terms.scenario = l_s;
    if w.beta2 != 0.0 {
        scatter_rows(&mut og.warm_users, &batch.users, &gu_s.query, w.beta2);
        scatter_rows(&mut og.cold_users, &batch.users, &gu_s.key, w.beta2);
        scatter_rows(&mut og.warm_bundles, &batch.bundles, &gb_s.query, w.beta2);
        scatter_rows(&mut og.cold_bundles, &batch.bundles, &gb_s.key, w.beta2);
    }

    let (l_i, g_items) = item_pair_loss(&out.cold_items, relations, w.tau);
    terms.item_pair = l_i;
    if w.beta3 != 0.0 {
        og.cold_items.add_scaled(&g_items, w.beta3);
    }

    let mut grads = GradientBuffer::zeros_like(state);
    backward(graphs, opts, &og, &mut grads);

    let touched = touched_rows(batch, graphs);
    let mut reg = 0.0;
    for ((table, rows), g) in state.tables().into_iter().zip(&touched).zip(grads.tables.iter_mut()) {
        for &r in rows {
            reg += dot(table.row(r), table.row(r));
            if w.beta4 != 0.0 {
                for (gx, &x) in g.row_mut(r).iter_mut().zip(table.row(r)) {
                    *gx += 2.0 * w.beta4 * x;
                }
            }
        }
    }
    terms.reg = reg;
    terms.total = terms.bpr
        + w.beta1 * terms.augment
        + w.beta2 * terms.scenario
        + w.beta3 * terms.item_pair
        + w.beta4 * terms.reg;
    terms.check()?;
    if !grads.is_finite() {
        return Err(Error::Numeric("non-finite gradient".into()));
    }
    Ok((terms, grads))
}

/// Adaptive-moment optimizer over all tables.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl Adam {
    pub fn new(state: &EmbeddingState, lr: f64) -> Self {
        let zeros: Vec<Matrix> = state.tables().iter().map(|t| Matrix::zeros(t.rows(), t.cols())).collect();
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step(&mut self, state: &mut EmbeddingState, grads: &GradientBuffer) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        for (((p, g), m), v) in state
            .tables_mut()
            .into_iter()
            .zip(&grads.tables)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            let it = p
                .as_mut_slice()
                .iter_mut()
                .zip(g.as_slice())
                .zip(m.as_mut_slice())
                .zip(v.as_mut_slice());
            for (((p, &g), m), v) in it {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            }
        }
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean over the epoch's successful steps.
    pub loss: LossTerms,
    pub steps: usize,
    pub skipped_steps: usize,
    pub val_metric: Option<f64>,
    pub is_best: bool,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BestRecord {
    pub epoch: usize,
    pub val_split: String,
    pub val_k: usize,
    pub val_metric: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub state: EmbeddingState,
    pub epochs: Vec<EpochRecord>,
    pub best: Option<BestRecord>,
    pub stopped_early: bool,
}

/// Validation Recall@K of a state, or `None` when no user has a validation
/// positive in the configured split.
pub fn validation_metric(ds: &Dataset, graphs: &ModelGraphs, state: &EmbeddingState, cfg: &Config) -> Result<Option<f64>> {
    let opts = cfg.model_options();
    let out = forward(graphs, state, &opts);
    let fused = fuse(&out.warm, &out.cold, opts.k);
    let report = evaluate(&fused, &ds.splits, Holdout::Valid, &[cfg.val_split], &[cfg.val_k], cfg.mask_train)?;
    Ok(report.metric(cfg.val_split, cfg.val_k).map(|m| m.recall))
}

/// Trains from a seeded initialization and returns the state with the best
/// validation metric. `on_epoch` sees every log record as it is produced.
pub fn train(ds: &Dataset, prep: &Prepared, cfg: &Config, mut on_epoch: impl FnMut(&EpochRecord)) -> Result<TrainOutcome> {
    cfg.validate()?;
    let graphs = &prep.graphs;
    let opts = cfg.model_options();
    let weights = LossWeights::from_config(cfg);
    let mut state = init_embeddings(&ds.spaces, &graphs.warm_bundles, cfg.dim, cfg.train_seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train_seed);
    rng.set_stream(1);
    let mut adam = Adam::new(&state, cfg.lr);
    let ub = ds.ub_train();
    let mut positives: Vec<(u32, u32)> = ub.edges().map(|(u, b, _)| (u, b)).collect();
    let pool = graphs.warm_bundles.clone();

    let mut best_state = state.clone();
    let mut best: Option<BestRecord> = None;
    let mut best_metric = f64::NEG_INFINITY;
    let mut since_best = 0;
    let mut non_finite = 0;
    let mut records = Vec::new();
    let mut stopped_early = false;

    for epoch in 1..=cfg.epochs {
        let t0 = Instant::now();
        positives.shuffle(&mut rng);
        let mut sum = LossTerms::default();
        let (mut steps, mut skipped) = (0, 0);
        for chunk in positives.chunks(cfg.batch_size) {
            let triples = sample_negatives(chunk, ub, &pool, &mut rng);
            if triples.is_empty() {
                continue;
            }
            let batch = TrainBatch::new(triples);
            debug_assert!(batch.validate(ub).is_ok());
            let noise = BatchNoise::draw(&batch, cfg.dim, &mut rng);
            match total_loss(&batch, &state, graphs, &prep.relations, &opts, &weights, &noise) {
                Ok((terms, grads)) => {
                    adam.step(&mut state, &grads);
                    if !state.is_finite() {
                        return Err(Error::Numeric(format!("parameters became non-finite in epoch {epoch}")));
                    }
                    sum.add_scaled(&terms, 1.0);
                    steps += 1;
                }
                Err(Error::Numeric(msg)) => {
                    non_finite += 1;
                    if non_finite >= 2 {
                        return Err(Error::Numeric(format!("training diverged in epoch {epoch}: {msg}")));
                    }
                    log::warn!("skipping step in epoch {epoch}: {msg}");
                    skipped += 1;
                }
                Err(e) => return Err(e),
            }
        }
        let mut loss = LossTerms::default();
        loss.add_scaled(&sum, 1.0 / steps.max(1) as f64);

        let val = validation_metric(ds, graphs, &state, cfg)?;
        let improved = match val {
            Some(m) => m > best_metric,
            None => true,
        };
        if improved {
            if let Some(m) = val {
                best_metric = m;
            }
            best_state = state.clone();
            best = Some(BestRecord {
                epoch,
                val_split: cfg.val_split.as_str().into(),
                val_k: cfg.val_k,
                val_metric: val,
            });
            since_best = 0;
        } else {
            since_best += 1;
        }
        let rec = EpochRecord {
            epoch,
            loss,
            steps,
            skipped_steps: skipped,
            val_metric: val,
            is_best: improved,
            seconds: t0.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: loss {:.5} val {:?}{}",
            rec.loss.total,
            rec.val_metric,
            if improved { " *" } else { "" }
        );
        on_epoch(&rec);
        records.push(rec);
        if cfg.patience > 0 && since_best >= cfg.patience {
            stopped_early = true;
            break;
        }
    }

    Ok(TrainOutcome {
        state: best_state,
        epochs: records,
        best,
        stopped_early,
    })
}
