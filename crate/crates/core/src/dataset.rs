//! Dataset directory ingestion, split bookkeeping and bundle-level cold splits.
//!
//! A dataset directory holds `data_size.txt` (`n_users\tn_bundles\tn_items`)
//! and five interaction files with one `left\tright` pair per line:
//! `user_item.txt`, `bundle_item.txt`, `user_bundle_train.txt`,
//! `user_bundle_valid.txt` and `user_bundle_test.txt`.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{EntitySpaces, GraphKind, SparseBipartiteGraph};

pub const SIZE_FILE: &str = "data_size.txt";
pub const USER_ITEM_FILE: &str = "user_item.txt";
pub const BUNDLE_ITEM_FILE: &str = "bundle_item.txt";
pub const UB_TRAIN_FILE: &str = "user_bundle_train.txt";
pub const UB_VALID_FILE: &str = "user_bundle_valid.txt";
pub const UB_TEST_FILE: &str = "user_bundle_test.txt";

pub const DATASET_FILES: [&str; 6] = [
    SIZE_FILE,
    USER_ITEM_FILE,
    BUNDLE_ITEM_FILE,
    UB_TRAIN_FILE,
    UB_VALID_FILE,
    UB_TEST_FILE,
];

/// Which held-out user–bundle interactions to score against.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Holdout {
    Valid,
    Test,
}

/// Train/valid/test user–bundle graphs plus the cold/warm bundle tagging.
#[derive(Clone, Debug)]
pub struct DatasetSplits {
    pub ub_train: SparseBipartiteGraph,
    pub ub_valid: SparseBipartiteGraph,
    pub ub_test: SparseBipartiteGraph,
    cold: Vec<bool>,
    warm: Vec<bool>,
}

impl DatasetSplits {
    /// Tags bundles: warm iff at least one training interaction; cold iff no
    /// training interaction and the bundle has items or held-out interactions.
    pub fn new(
        ub_train: SparseBipartiteGraph,
        ub_valid: SparseBipartiteGraph,
        ub_test: SparseBipartiteGraph,
        bi: Option<&SparseBipartiteGraph>,
    ) -> Self {
        let n_bundles = ub_train.n_right();
        let train_deg = ub_train.right_counts();
        let valid_deg = ub_valid.right_counts();
        let test_deg = ub_test.right_counts();
        let warm: Vec<bool> = train_deg.iter().map(|&d| d > 0).collect();
        let cold = (0..n_bundles)
            .map(|b| {
                let has_items = bi.is_some_and(|g| g.out_degree(b) > 0);
                !warm[b] && (has_items || valid_deg[b] > 0 || test_deg[b] > 0)
            })
            .collect();
        DatasetSplits {
            ub_train,
            ub_valid,
            ub_test,
            cold,
            warm,
        }
    }

    pub fn n_bundles(&self) -> usize {
        self.cold.len()
    }

    pub fn is_cold(&self, b: usize) -> bool {
        self.cold[b]
    }

    pub fn is_warm(&self, b: usize) -> bool {
        self.warm[b]
    }

    pub fn cold_mask(&self) -> &[bool] {
        &self.cold
    }

    pub fn warm_mask(&self) -> &[bool] {
        &self.warm
    }

    pub fn cold_bundles(&self) -> Vec<usize> {
        (0..self.cold.len()).filter(|&b| self.cold[b]).collect()
    }

    pub fn warm_bundles(&self) -> Vec<usize> {
        (0..self.warm.len()).filter(|&b| self.warm[b]).collect()
    }

    pub fn holdout(&self, which: Holdout) -> &SparseBipartiteGraph {
        match which {
            Holdout::Valid => &self.ub_valid,
            Holdout::Test => &self.ub_test,
        }
    }
}

/// A loaded dataset directory.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub spaces: EntitySpaces,
    pub ui: SparseBipartiteGraph,
    pub bi: SparseBipartiteGraph,
    pub splits: DatasetSplits,
}

impl Dataset {
    pub fn ub_train(&self) -> &SparseBipartiteGraph {
        &self.splits.ub_train
    }

    /// Assembles a dataset from in-memory graphs, validating dimensions.
    pub fn from_graphs(
        spaces: EntitySpaces,
        ui: SparseBipartiteGraph,
        bi: SparseBipartiteGraph,
        ub_train: SparseBipartiteGraph,
        ub_valid: SparseBipartiteGraph,
        ub_test: SparseBipartiteGraph,
    ) -> Result<Self> {
        for g in [&ui, &bi, &ub_train, &ub_valid, &ub_test] {
            if (g.n_left(), g.n_right()) != spaces.dims(g.kind()) {
                return Err(Error::Input(format!(
                    "{} graph has shape {}x{}, expected {:?}",
                    g.kind(),
                    g.n_left(),
                    g.n_right(),
                    spaces.dims(g.kind())
                )));
            }
        }
        if ub_train.is_empty() {
            return Err(Error::Input("user-bundle training interactions are empty".into()));
        }
        let splits = DatasetSplits::new(ub_train, ub_valid, ub_test, Some(&bi));
        Ok(Dataset {
            spaces,
            ui,
            bi,
            splits,
        })
    }

    /// Writes the dataset in the directory layout read by [`load_dataset`].
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let s = &self.spaces;
        write_file(
            &dir.join(SIZE_FILE),
            &format!("{}\t{}\t{}\n", s.n_users, s.n_bundles, s.n_items),
        )?;
        write_file(&dir.join(USER_ITEM_FILE), &self.ui.to_tsv())?;
        write_file(&dir.join(BUNDLE_ITEM_FILE), &self.bi.to_tsv())?;
        write_file(&dir.join(UB_TRAIN_FILE), &self.splits.ub_train.to_tsv())?;
        write_file(&dir.join(UB_VALID_FILE), &self.splits.ub_valid.to_tsv())?;
        write_file(&dir.join(UB_TEST_FILE), &self.splits.ub_test.to_tsv())?;
        Ok(())
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn read_required(path: &Path) -> Result<String> {
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_index(tok: &str, path: &Path, line: usize) -> Result<u32> {
    tok.trim().parse::<u32>().map_err(|_| Error::Parse {
        path: path.to_path_buf(),
        line,
        message: format!("expected a nonnegative integer, found {tok:?}"),
    })
}

fn parse_sizes(path: &Path) -> Result<EntitySpaces> {
    let text = read_required(path)?;
    let line = text.lines().next().unwrap_or("");
    let toks: Vec<&str> = line.split('\t').collect();
    if toks.len() != 3 {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: "expected n_users\\tn_bundles\\tn_items".into(),
        });
    }
    let n: Vec<usize> = toks
        .iter()
        .map(|t| parse_index(t, path, 1).map(|v| v as usize))
        .collect::<Result<_>>()?;
    EntitySpaces::new(n[0], n[1], n[2])
}

/// Reads an interaction file into a binary graph. Blank lines are skipped.
pub fn read_interactions(
    path: &Path,
    kind: GraphKind,
    n_left: usize,
    n_right: usize,
) -> Result<SparseBipartiteGraph> {
    let text = read_required(path)?;
    let mut pairs = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let lineno = k + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut toks = line.split('\t');
        let (Some(a), Some(b), None) = (toks.next(), toks.next(), toks.next()) else {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: lineno,
                message: "expected exactly two tab-separated indices".into(),
            });
        };
        let l = parse_index(a, path, lineno)?;
        let r = parse_index(b, path, lineno)?;
        if l as usize >= n_left || r as usize >= n_right {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: lineno,
                message: format!(
                    "index ({l}, {r}) out of range for {kind} space {n_left}x{n_right}"
                ),
            });
        }
        pairs.push((l, r));
    }
    SparseBipartiteGraph::from_pairs(kind, n_left, n_right, pairs)
}

/// Loads a dataset directory.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    if !dir.is_dir() {
        return Err(Error::MissingFile(dir.to_path_buf()));
    }
    for f in DATASET_FILES {
        let p = dir.join(f);
        if !p.is_file() {
            return Err(Error::MissingFile(p));
        }
    }
    let spaces = parse_sizes(&dir.join(SIZE_FILE))?;
    let s = spaces;
    let path = |f: &str| -> PathBuf { dir.join(f) };
    let ui = read_interactions(&path(USER_ITEM_FILE), GraphKind::UserItem, s.n_users, s.n_items)?;
    let bi = read_interactions(
        &path(BUNDLE_ITEM_FILE),
        GraphKind::BundleItem,
        s.n_bundles,
        s.n_items,
    )?;
    let ub = |f: &str| read_interactions(&path(f), GraphKind::UserBundle, s.n_users, s.n_bundles);
    let ub_train = ub(UB_TRAIN_FILE)?;
    let ub_valid = ub(UB_VALID_FILE)?;
    let ub_test = ub(UB_TEST_FILE)?;
    Dataset::from_graphs(spaces, ui, bi, ub_train, ub_valid, ub_test)
}

/// Split fractions for train, validation and test.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub valid: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.7,
            valid: 0.1,
            test: 0.2,
        }
    }
}

/// Partitions bundles (not edges) into train/valid/test by the given ratios.
///
/// Every interaction of a validation or test bundle leaves the training graph,
/// so held-out bundles are fully cold. Only bundles with at least one
/// interaction take part in the partition.
pub fn make_cold_split(
    ub_all: &SparseBipartiteGraph,
    bi: Option<&SparseBipartiteGraph>,
    ratios: SplitRatios,
    seed: u64,
) -> Result<DatasetSplits> {
    let SplitRatios { train, valid, test } = ratios;
    if [train, valid, test].iter().any(|r| !(0.0..=1.0).contains(r))
        || ((train + valid + test) - 1.0).abs() > 1e-9
    {
        return Err(Error::Config(format!(
            "split ratios must be in [0,1] and sum to 1, got ({train}, {valid}, {test})"
        )));
    }
    let counts = ub_all.right_counts();
    let mut bundles: Vec<usize> = (0..ub_all.n_right()).filter(|&b| counts[b] > 0).collect();
    if bundles.len() < 10 {
        return Err(Error::Input(format!(
            "cold split needs at least 10 bundles with interactions, found {}",
            bundles.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    bundles.shuffle(&mut rng);
    let n = bundles.len();
    let n_valid = (valid * n as f64).round() as usize;
    let n_test = ((test * n as f64).round() as usize).min(n - n_valid);
    // 0 = train, 1 = valid, 2 = test
    let mut part = vec![0u8; ub_all.n_right()];
    for &b in &bundles[..n_valid] {
        part[b] = 1;
    }
    for &b in &bundles[n_valid..n_valid + n_test] {
        part[b] = 2;
    }
    let mut sides: [Vec<(u32, u32)>; 3] = Default::default();
    for (u, b, _) in ub_all.edges() {
        sides[part[b as usize] as usize].push((u, b));
    }
    let [tr, va, te] = sides;
    let (nu, nb) = (ub_all.n_left(), ub_all.n_right());
    let mk = |p: Vec<(u32, u32)>| SparseBipartiteGraph::from_pairs(GraphKind::UserBundle, nu, nb, p);
    Ok(DatasetSplits::new(mk(tr)?, mk(va)?, mk(te)?, bi))
}

/// Merges all user–bundle interactions of a dataset and re-splits them cold.
pub fn resplit_cold(ds: &Dataset, ratios: SplitRatios, seed: u64) -> Result<Dataset> {
    let s = &ds.splits;
    let all: Vec<(u32, u32)> = s
        .ub_train
        .edges()
        .chain(s.ub_valid.edges())
        .chain(s.ub_test.edges())
        .map(|(u, b, _)| (u, b))
        .collect();
    let ub_all = SparseBipartiteGraph::from_pairs(
        GraphKind::UserBundle,
        ds.spaces.n_users,
        ds.spaces.n_bundles,
        all,
    )?;
    let splits = make_cold_split(&ub_all, Some(&ds.bi), ratios, seed)?;
    Dataset::from_graphs(
        ds.spaces,
        ds.ui.clone(),
        ds.bi.clone(),
        splits.ub_train,
        splits.ub_valid,
        splits.ub_test,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_min_dataset(dir: &Path) {
        fs::write(dir.join(SIZE_FILE), "2\t4\t3\n").unwrap();
        fs::write(dir.join(USER_ITEM_FILE), "0\t0\n1\t2\n").unwrap();
        fs::write(dir.join(BUNDLE_ITEM_FILE), "0\t0\n1\t1\n2\t2\n3\t1\n").unwrap();
        fs::write(dir.join(UB_TRAIN_FILE), "0\t1\n0\t2\n0\t1\n").unwrap();
        fs::write(dir.join(UB_VALID_FILE), "1\t3\n").unwrap();
        fs::write(dir.join(UB_TEST_FILE), "1\t0\n").unwrap();
    }

    #[test]
    fn loads_and_tags_cold_bundles() {
        let dir = tempfile::tempdir().unwrap();
        write_min_dataset(dir.path());
        let ds = load_dataset(dir.path()).unwrap();
        assert_eq!(ds.spaces, EntitySpaces::new(2, 4, 3).unwrap());
        assert_eq!(ds.ub_train().left_degrees()[0], 2.0);
        assert_eq!(ds.splits.cold_bundles(), vec![0, 3]);
        assert_eq!(ds.splits.warm_bundles(), vec![1, 2]);
        for b in ds.splits.cold_bundles() {
            assert_eq!(ds.ub_train().right_degrees()[b], 0.0);
        }
    }

    #[test]
    fn missing_file_is_named() {
        let dir = tempfile::tempdir().unwrap();
        write_min_dataset(dir.path());
        fs::remove_file(dir.path().join(BUNDLE_ITEM_FILE)).unwrap();
        let err = load_dataset(dir.path()).unwrap_err();
        assert!(matches!(err, Error::MissingFile(_)));
        assert!(err.to_string().contains(BUNDLE_ITEM_FILE));
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn out_of_range_index_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        write_min_dataset(dir.path());
        fs::write(dir.path().join(USER_ITEM_FILE), "0\t0\n1\t7\n").unwrap();
        match load_dataset(dir.path()).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn empty_train_is_fatal() {
        let dir = tempfile::tempdir().unwrap();
        write_min_dataset(dir.path());
        fs::write(dir.path().join(UB_TRAIN_FILE), "").unwrap();
        assert!(load_dataset(dir.path()).is_err());
    }

    #[test]
    fn round_trip_preserves_edges() {
        let dir = tempfile::tempdir().unwrap();
        write_min_dataset(dir.path());
        let ds = load_dataset(dir.path()).unwrap();
        let out = tempfile::tempdir().unwrap();
        ds.write_dir(out.path()).unwrap();
        let again = load_dataset(out.path()).unwrap();
        assert_eq!(again.ui, ds.ui);
        assert_eq!(again.bi, ds.bi);
        assert_eq!(again.splits.ub_train, ds.splits.ub_train);
        assert_eq!(again.splits.ub_test, ds.splits.ub_test);
    }

    fn ub_ten_bundles() -> SparseBipartiteGraph {
        let pairs = (0..10u32).flat_map(|b| (0..3u32).map(move |u| (u, b)));
        SparseBipartiteGraph::from_pairs(GraphKind::UserBundle, 3, 10, pairs).unwrap()
    }

    #[test]
    fn cold_split_ratio_and_safety() {
        let ub = ub_ten_bundles();
        let s = make_cold_split(&ub, None, SplitRatios::default(), 17).unwrap();
        let test_bundles: Vec<usize> = (0..10).filter(|&b| s.ub_test.right_degrees()[b] > 0.0).collect();
        assert_eq!(test_bundles.len(), 2);
        for b in test_bundles {
            assert!(s.is_cold(b));
            assert_eq!(s.ub_train.right_degrees()[b], 0.0);
        }
        assert_eq!(
            s.ub_train.n_edges() + s.ub_valid.n_edges() + s.ub_test.n_edges(),
            ub.n_edges()
        );
    }

    #[test]
    fn cold_split_is_deterministic() {
        let ub = ub_ten_bundles();
        let a = make_cold_split(&ub, None, SplitRatios::default(), 5).unwrap();
        let b = make_cold_split(&ub, None, SplitRatios::default(), 5).unwrap();
        assert_eq!(a.ub_train, b.ub_train);
        assert_eq!(a.ub_test, b.ub_test);
        assert_eq!(a.cold_mask(), b.cold_mask());
    }

    #[test]
    fn degenerate_ratios_and_small_inputs() {
        let ub = ub_ten_bundles();
        let all_train = SplitRatios {
            train: 1.0,
            valid: 0.0,
            test: 0.0,
        };
        let s = make_cold_split(&ub, None, all_train, 1).unwrap();
        assert!(s.ub_test.is_empty());
        let small =
            SparseBipartiteGraph::from_pairs(GraphKind::UserBundle, 1, 9, (0..9).map(|b| (0, b)))
                .unwrap();
        assert!(make_cold_split(&small, None, SplitRatios::default(), 1).is_err());
    }
}
