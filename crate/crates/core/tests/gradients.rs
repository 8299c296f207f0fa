mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use coldbundle::dataset::Dataset;
use coldbundle::loss::{bpr_loss, info_nce, infonce_ub, item_pair_loss, scenario_loss};
use coldbundle::matrix::Matrix;
use coldbundle::model::EmbeddingState;
use coldbundle::pipeline::Prepared;
use coldbundle::relations::{RelationClass, RelationEntry, RelationTable};
use coldbundle::train::{sample_negatives, total_loss, BatchNoise, LossWeights, TrainBatch};

use common::{central_diff, grad_rel_err, small_setup};

const H: f64 = 1e-4;
const TOL: f64 = 1e-4;

/// Worst relative error over `probes` random coordinates of `mats`.
fn probe_matrices(
    mats: &[Matrix],
    grads: &[&Matrix],
    probes: usize,
    seed: u64,
    f: impl Fn(&[Matrix]) -> f64,
) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..probes {
        let m = rng.gen_range(0..mats.len());
        let idx = rng.gen_range(0..mats[m].as_slice().len());
        let mut work = mats.to_vec();
        let mut x = work[m].as_slice().to_vec();
        let num = central_diff(&mut x, idx, H, |x| {
            work[m].as_mut_slice().copy_from_slice(x);
            f(&work)
        });
        worst = worst.max(grad_rel_err(grads[m].as_slice()[idx], num));
    }
    worst
}

fn random_mats(rng: &mut ChaCha8Rng, n: usize, rows: usize, cols: usize) -> Vec<Matrix> {
    (0..n).map(|_| Matrix::random_uniform(rows, cols, 1.0, rng)).collect()
}

#[test]
fn bpr_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let pos: Vec<f64> = (0..12).map(|_| rng.gen_range(-3.0..3.0)).collect();
    let neg: Vec<f64> = (0..12).map(|_| rng.gen_range(-3.0..3.0)).collect();
    let (_, g) = bpr_loss(&pos, &neg);
    let mats = vec![Matrix::from_vec(1, 12, pos), Matrix::from_vec(1, 12, neg)];
    let g_pos = Matrix::from_vec(1, 12, g.clone());
    let g_neg = Matrix::from_vec(1, 12, g.iter().map(|x| -x).collect());
    let err = probe_matrices(&mats, &[&g_pos, &g_neg], 24, 2, |m| bpr_loss(m[0].as_slice(), m[1].as_slice()).0);
    assert!(err < TOL, "{err}");
}

#[test]
fn augmentation_infonce_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mats = random_mats(&mut rng, 4, 5, 4);
    let (_, gu, gb) = infonce_ub(&mats[0], &mats[1], &mats[2], &mats[3], 0.4);
    let err = probe_matrices(&mats, &[&gu.query, &gu.key, &gb.query, &gb.key], 40, 4, |m| {
        infonce_ub(&m[0], &m[1], &m[2], &m[3], 0.4).0
    });
    assert!(err < TOL, "{err}");
}

#[test]
fn scenario_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mats = random_mats(&mut rng, 4, 6, 3);
    let (_, gu, gb) = scenario_loss(&mats[0], &mats[1], &mats[2], &mats[3], 0.7);
    let err = probe_matrices(&mats, &[&gu.query, &gu.key, &gb.query, &gb.key], 40, 6, |m| {
        scenario_loss(&m[0], &m[1], &m[2], &m[3], 0.7).0
    });
    assert!(err < TOL, "{err}");
}

fn r4_table(n: usize, pairs: &[(u32, u32)]) -> RelationTable {
    let entries = pairs
        .iter()
        .map(|&(i, j)| RelationEntry {
            i,
            j,
            class: RelationClass::R4,
            j_ui: 0.0,
            j_bi: 0.0,
        })
        .collect();
    RelationTable::from_entries(n, entries).unwrap()
}

#[test]
fn item_pair_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let items = Matrix::random_uniform(6, 4, 1.0, &mut rng);
    let rel = r4_table(6, &[(0, 1), (0, 3), (1, 2), (2, 5), (3, 4)]);
    let (_, g) = item_pair_loss(&items, &rel, 0.3);
    let err = probe_matrices(&[items], &[&g], 24, 8, |m| item_pair_loss(&m[0], &rel, 0.3).0);
    assert!(err < TOL, "{err}");
}

struct Fixture {
    ds: Dataset,
    prep: Prepared,
    state: EmbeddingState,
    batch: TrainBatch,
    noise: BatchNoise,
    weights: LossWeights,
    opts: coldbundle::model::ModelOptions,
}

fn fixture(seed: u64) -> Fixture {
    let (ds, prep, cfg, state) = small_setup(seed, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pos: Vec<(u32, u32)> = ds.ub_train().edges().map(|(u, b, _)| (u, b)).collect();
    let batch = TrainBatch::new(sample_negatives(&pos[..8.min(pos.len())], ds.ub_train(), &prep.graphs.warm_bundles, &mut rng));
    let noise = BatchNoise::draw(&batch, 4, &mut rng);
    Fixture {
        weights: LossWeights::from_config(&cfg),
        opts: cfg.model_options(),
        ds,
        prep,
        state,
        batch,
        noise,
    }
}

impl Fixture {
    fn loss(&self, s: &EmbeddingState, w: &LossWeights) -> f64 {
        total_loss(&self.batch, s, &self.prep.graphs, &self.prep.relations, &self.opts, w, &self.noise)
            .unwrap()
            .0
            .total
    }

    /// Worst relative error over `probes` random table entries.
    fn check(&self, w: &LossWeights, probes: usize, seed: u64) -> f64 {
        let (_, grads) = total_loss(&self.batch, &self.state, &self.prep.graphs, &self.prep.relations, &self.opts, w, &self.noise).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst: f64 = 0.0;
        for _ in 0..probes {
            let t = rng.gen_range(0..5);
            let n = self.state.tables()[t].as_slice().len();
            let idx = rng.gen_range(0..n);
            let mut s = self.state.clone();
            let mut x = s.tables()[t].as_slice().to_vec();
            let num = central_diff(&mut x, idx, H, |x| {
                s.tables_mut()[t].as_mut_slice().copy_from_slice(x);
                self.loss(&s, w)
            });
            worst = worst.max(grad_rel_err(grads.tables[t].as_slice()[idx], num));
        }
        worst
    }
}

#[test]
fn total_gradient_through_model() {
    let f = fixture(11);
    assert!(f.ds.ub_train().n_edges() > 0);
    assert!(f.prep.relations.count(RelationClass::R4) > 0);
    let err = f.check(&f.weights, 40, 12);
    assert!(err < TOL, "{err}");
}

#[test]
fn each_term_through_model() {
    let f = fixture(13);
    let zero = LossWeights {
        beta1: 0.0,
        beta2: 0.0,
        beta3: 0.0,
        beta4: 0.0,
        ..f.weights
    };
    for (name, w) in [
        ("bpr", zero),
        ("augment", LossWeights { beta1: 1.0, ..zero }),
        ("scenario", LossWeights { beta2: 1.0, ..zero }),
        ("item_pair", LossWeights { beta3: 1.0, ..zero }),
        ("reg", LossWeights { beta4: 0.5, ..zero }),
    ] {
        let err = f.check(&w, 20, 14);
        assert!(err < TOL, "{name}: {err}");
    }
}

#[test]
fn zero_coefficients_leave_bpr() {
    let f = fixture(17);
    let zero = LossWeights {
        beta1: 0.0,
        beta2: 0.0,
        beta3: 0.0,
        beta4: 0.0,
        ..f.weights
    };
    let (t, _) = total_loss(&f.batch, &f.state, &f.prep.graphs, &f.prep.relations, &f.opts, &zero, &f.noise).unwrap();
    assert_eq!(t.total, t.bpr);
}

#[test]
fn duplicated_triples_keep_the_mean() {
    let f = fixture(19);
    let zero = LossWeights {
        beta1: 0.0,
        beta2: 0.0,
        beta3: 0.0,
        beta4: 0.0,
        ..f.weights
    };
    let mut doubled = f.batch.triples.clone();
    doubled.extend(f.batch.triples.iter().copied());
    let b2 = TrainBatch::new(doubled);
    assert_eq!((b2.users.clone(), b2.bundles.clone()), (f.batch.users.clone(), f.batch.bundles.clone()));
    let a = f.loss(&f.state, &zero);
    let b = total_loss(&b2, &f.state, &f.prep.graphs, &f.prep.relations, &f.opts, &zero, &f.noise)
        .unwrap()
        .0
        .total;
    assert!((a - b).abs() < 1e-12);
}

#[test]
fn contrastive_terms_ignore_scale() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let m = random_mats(&mut rng, 4, 5, 3);
    let s: Vec<Matrix> = m.iter().map(|x| x.scaled(3.7)).collect();
    let a = infonce_ub(&m[0], &m[1], &m[2], &m[3], 0.25).0;
    let b = infonce_ub(&s[0], &s[1], &s[2], &s[3], 0.25).0;
    assert!((a - b).abs() < 1e-12);
    let a = scenario_loss(&m[0], &m[1], &m[2], &m[3], 0.25).0;
    let b = scenario_loss(&s[0], &s[1], &s[2], &s[3], 0.25).0;
    assert!((a - b).abs() < 1e-12);
    let rel = r4_table(5, &[(0, 1), (2, 4)]);
    let a = item_pair_loss(&m[0], &rel, 0.25).0;
    let b = item_pair_loss(&s[0], &rel, 0.25).0;
    assert!((a - b).abs() < 1e-12);
}

#[test]
fn scenario_loss_orthogonal_rows() {
    // e^w = e^c, orthonormal rows, τ = 1: −log(e / (e + (n−1)))
    for n in 1..=4 {
        let mut m = Matrix::zeros(n, 4);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        let (l, _, _) = scenario_loss(&m, &m, &m, &m, 1.0);
        let e = 1f64.exp();
        let per = -(e / (e + (n - 1) as f64)).ln();
        assert!((l - 2.0 * per).abs() < 1e-12, "n={n}");
    }
}

#[test]
fn item_pair_negative_pushed_away_lowers_loss() {
    let items = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.6, 0.8]]);
    let farther = Matrix::from_rows(&[vec![1.0, 0.0], vec![-0.6, 0.8]]);
    let rel = r4_table(2, &[(0, 1)]);
    assert!(item_pair_loss(&farther, &rel, 0.5).0 < item_pair_loss(&items, &rel, 0.5).0);
}

proptest! {
    #[test]
    fn infonce_is_nonnegative(seed in any::<u64>(), n in 1usize..6, tau in 0.05f64..2.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = Matrix::random_uniform(n, 3, 1.0, &mut rng);
        let k = Matrix::random_uniform(n, 3, 1.0, &mut rng);
        let (l, _) = info_nce(&q, &k, tau);
        prop_assert!(l >= 0.0);
        if n == 1 {
            prop_assert_eq!(l, 0.0);
        }
    }
}
