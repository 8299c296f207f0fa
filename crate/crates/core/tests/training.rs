mod common;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use coldbundle::config::Config;
use coldbundle::dataset::Dataset;
use coldbundle::graph::{EntitySpaces, GraphKind, SparseBipartiteGraph};
use coldbundle::model::init_embeddings;
use coldbundle::pipeline::prepare;
use coldbundle::relations::RelationTable;
use coldbundle::train::{sample_negatives, total_loss, train, BatchNoise, LossWeights, TrainBatch};
use coldbundle::Error;

use common::small_setup;

fn g(kind: GraphKind, nl: usize, nr: usize, e: &[(u32, u32)]) -> SparseBipartiteGraph {
    SparseBipartiteGraph::from_pairs(kind, nl, nr, e.iter().copied()).unwrap()
}

/// Three users, four bundles; user `u` has trained on every bundle but `u`, so
/// each user has exactly one possible negative.
fn three_user_dataset() -> Dataset {
    let sp = EntitySpaces::new(3, 4, 6).unwrap();
    let train: Vec<(u32, u32)> = (0..3u32).flat_map(|u| (0..4u32).filter(move |&b| b != u).map(move |b| (u, b))).collect();
    Dataset::from_graphs(
        sp,
        g(GraphKind::UserItem, 3, 6, &[(0, 0), (0, 1), (1, 2), (1, 3), (2, 4), (2, 5), (0, 5)]),
        g(GraphKind::BundleItem, 4, 6, &[(0, 0), (0, 1), (1, 2), (1, 3), (2, 4), (2, 5), (3, 0), (3, 4)]),
        g(GraphKind::UserBundle, 3, 4, &train),
        g(GraphKind::UserBundle, 3, 4, &[]),
        g(GraphKind::UserBundle, 3, 4, &[]),
    )
    .unwrap()
}

fn quiet_config() -> Config {
    let mut c = Config::default();
    c.dim = 8;
    c.beta1 = 0.0;
    c.epochs = 10;
    c.batch_size = 64;
    c.patience = 0;
    c
}

#[test]
fn loss_decreases_on_three_users() {
    let ds = three_user_dataset();
    let cfg = quiet_config();
    let prep = prepare(&ds, &RelationTable::from_entries(6, vec![]).unwrap(), &cfg).unwrap();
    let out = train(&ds, &prep, &cfg, |_| {}).unwrap();
    let losses: Vec<f64> = out.epochs.iter().map(|r| r.loss.total).collect();
    assert_eq!(losses.len(), 10);
    for w in losses.windows(2) {
        assert!(w[1] < w[0], "{losses:?}");
    }
}

#[test]
fn zero_learning_rate_keeps_parameters() {
    let ds = three_user_dataset();
    let mut cfg = quiet_config();
    cfg.lr = 0.0;
    cfg.beta1 = 0.1;
    let prep = prepare(&ds, &RelationTable::from_entries(6, vec![]).unwrap(), &cfg).unwrap();
    let init = init_embeddings(&ds.spaces, &prep.graphs.warm_bundles, cfg.dim, cfg.train_seed).unwrap();
    let out = train(&ds, &prep, &cfg, |_| {}).unwrap();
    assert_eq!(out.state, init);
}

#[test]
fn zero_epochs_returns_initialization() {
    let (ds, prep, mut cfg, _) = small_setup(2, 4);
    cfg.epochs = 0;
    let init = init_embeddings(&ds.spaces, &prep.graphs.warm_bundles, cfg.dim, cfg.train_seed).unwrap();
    let out = train(&ds, &prep, &cfg, |_| {}).unwrap();
    assert_eq!(out.state, init);
    assert!(out.epochs.is_empty() && out.best.is_none());
}

#[test]
fn same_seed_same_state() {
    let (ds, prep, mut cfg, _) = small_setup(4, 6);
    cfg.epochs = 4;
    cfg.batch_size = 8;
    cfg.lr = 0.01;
    let a = train(&ds, &prep, &cfg, |_| {}).unwrap();
    let b = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap()
        .install(|| train(&ds, &prep, &cfg, |_| {}).unwrap());
    assert_eq!(a.state, b.state);
    let strip = |o: &coldbundle::train::TrainOutcome| -> Vec<_> { o.epochs.iter().map(|r| (r.loss, r.val_metric)).collect() };
    assert_eq!(strip(&a), strip(&b));
    cfg.train_seed += 1;
    let c = train(&ds, &prep, &cfg, |_| {}).unwrap();
    assert_ne!(a.state, c.state);
}

#[test]
fn early_stopping_respects_patience() {
    let (ds, prep, mut cfg, _) = small_setup(6, 4);
    cfg.epochs = 40;
    cfg.patience = 2;
    cfg.lr = 0.05;
    let out = train(&ds, &prep, &cfg, |_| {}).unwrap();
    let best = out.best.unwrap().epoch;
    if out.stopped_early {
        assert_eq!(out.epochs.len(), best + 2);
    } else {
        assert_eq!(out.epochs.len(), 40);
    }
}

#[test]
fn non_finite_parameters_abort_the_step() {
    let (ds, prep, cfg, mut state) = small_setup(8, 4);
    state.user_cold.set(0, 0, f64::NAN);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let pos: Vec<(u32, u32)> = ds.ub_train().edges().map(|(u, b, _)| (u, b)).collect();
    let batch = TrainBatch::new(sample_negatives(&pos, ds.ub_train(), &prep.graphs.warm_bundles, &mut rng));
    let noise = BatchNoise::draw(&batch, 4, &mut rng);
    let err = total_loss(
        &batch,
        &state,
        &prep.graphs,
        &prep.relations,
        &cfg.model_options(),
        &LossWeights::from_config(&cfg),
        &noise,
    )
    .unwrap_err();
    assert!(matches!(err, Error::Numeric(_)));
    assert_eq!(err.exit_code(), 4);
}

#[test]
fn sampled_negatives_are_valid() {
    let (ds, prep, _, _) = small_setup(10, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let pos: Vec<(u32, u32)> = ds.ub_train().edges().map(|(u, b, _)| (u, b)).collect();
    for _ in 0..50 {
        let batch = TrainBatch::new(sample_negatives(&pos, ds.ub_train(), &prep.graphs.warm_bundles, &mut rng));
        batch.validate(ds.ub_train()).unwrap();
    }
}
