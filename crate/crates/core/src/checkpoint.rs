//! Checkpoint directory: `manifest.json`, one little-endian `f32` file per
//! embedding table (row-major), and copies of the config and relation table
//! needed to rebuild the graphs.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::{sha256_hex, Config};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::graph::EntitySpaces;
use crate::matrix::Matrix;
use crate::model::{EmbeddingState, TABLE_NAMES};
use crate::relations::RelationTable;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_FILE: &str = "config.json";
pub const RELATIONS_FILE: &str = "relations.tsv";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableEntry {
    pub name: String,
    pub file: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub dim: usize,
    pub layers: usize,
    pub k: f64,
    pub seed: u64,
    pub config_hash: String,
    /// Weight of each layer in the layer mean, `1/(T+1)`, identical for every view.
    pub coalesce_scale: f64,
    pub n_users: usize,
    pub n_bundles: usize,
    pub n_items: usize,
    /// Bundle id of each `bundle_warm` row.
    pub warm_bundles: Vec<u32>,
    pub tables: Vec<TableEntry>,
}

impl CheckpointManifest {
    /// Compares entity counts and the warm bundle set with a dataset.
    pub fn check_dataset(&self, ds: &Dataset, warm_bundles: &[u32]) -> Result<()> {
        let EntitySpaces {
            n_users,
            n_bundles,
            n_items,
        } = ds.spaces;
        for (space, ckpt, data) in [
            ("users", self.n_users, n_users),
            ("bundles", self.n_bundles, n_bundles),
            ("items", self.n_items, n_items),
        ] {
            if ckpt != data {
                return Err(Error::Mismatch(format!(
                    "checkpoint has {ckpt} {space}, dataset has {data}"
                )));
            }
        }
        if self.warm_bundles != warm_bundles {
            return Err(Error::Mismatch(
                "checkpoint warm bundles differ from the dataset's training bundles".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub manifest: CheckpointManifest,
    pub state: EmbeddingState,
    pub config: Config,
    pub relations_tsv: String,
}

impl Checkpoint {
    pub fn relations(&self) -> Result<RelationTable> {
        RelationTable::from_tsv(&self.relations_tsv, self.manifest.n_items)
    }
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn table_bytes(m: &Matrix) -> Vec<u8> {
    m.as_slice().iter().flat_map(|&x| (x as f32).to_le_bytes()).collect()
}

/// Writes a checkpoint and returns its hash.
pub fn save_checkpoint(
    dir: &Path,
    state: &EmbeddingState,
    spaces: &EntitySpaces,
    cfg: &Config,
    relations: &RelationTable,
) -> Result<String> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let tables = state
        .tables()
        .iter()
        .zip(TABLE_NAMES)
        .map(|(t, name)| TableEntry {
            name: name.into(),
            file: format!("{name}.f32"),
            rows: t.rows(),
            cols: t.cols(),
        })
        .collect();
    let manifest = CheckpointManifest {
        format_version: FORMAT_VERSION,
        dim: state.dim,
        layers: cfg.layers,
        k: cfg.k,
        seed: cfg.train_seed,
        config_hash: cfg.hash(),
        coalesce_scale: 1.0 / (cfg.layers + 1) as f64,
        n_users: spaces.n_users,
        n_bundles: spaces.n_bundles,
        n_items: spaces.n_items,
        warm_bundles: state.warm_bundles.clone(),
        tables,
    };
    let text = serde_json::to_string_pretty(&manifest)? + "\n";
    write(&dir.join(MANIFEST_FILE), text.as_bytes())?;
    for (t, name) in state.tables().iter().zip(TABLE_NAMES) {
        write(&dir.join(format!("{name}.f32")), &table_bytes(t))?;
    }
    write(&dir.join(CONFIG_FILE), (cfg.canonical_json() + "\n").as_bytes())?;
    write(&dir.join(RELATIONS_FILE), relations.to_tsv().as_bytes())?;
    checkpoint_hash(dir)
}

/// SHA-256 over the manifest, the table files in manifest order, the config
/// and the relation table.
pub fn checkpoint_hash(dir: &Path) -> Result<String> {
    let manifest_bytes = read(&dir.join(MANIFEST_FILE))?;
    let manifest: CheckpointManifest = serde_json::from_slice(&manifest_bytes)
        .map_err(|e| Error::Mismatch(format!("unreadable checkpoint manifest: {e}")))?;
    let mut all = manifest_bytes;
    for t in &manifest.tables {
        all.extend(read(&dir.join(&t.file))?);
    }
    all.extend(read(&dir.join(CONFIG_FILE))?);
    all.extend(read(&dir.join(RELATIONS_FILE))?);
    Ok(sha256_hex(&all))
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    if !dir.is_dir() {
        return Err(Error::MissingFile(dir.to_path_buf()));
    }
    let manifest: CheckpointManifest = serde_json::from_slice(&read(&dir.join(MANIFEST_FILE))?)
        .map_err(|e| Error::Mismatch(format!("unreadable checkpoint manifest: {e}")))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::Mismatch(format!(
            "checkpoint format {} is not supported",
            manifest.format_version
        )));
    }
    let names: Vec<&str> = manifest.tables.iter().map(|t| t.name.as_str()).collect();
    if names != TABLE_NAMES {
        return Err(Error::Mismatch(format!("unexpected checkpoint tables {names:?}")));
    }
    let expected_rows = [
        manifest.n_users,
        manifest.n_items,
        manifest.warm_bundles.len(),
        manifest.n_users,
        manifest.n_items,
    ];
    let mut mats = Vec::with_capacity(5);
    for (t, &rows) in manifest.tables.iter().zip(&expected_rows) {
        if t.rows != rows || t.cols != manifest.dim {
            return Err(Error::Mismatch(format!(
                "table {} is {}x{}, expected {}x{}",
                t.name, t.rows, t.cols, rows, manifest.dim
            )));
        }
        let bytes = read(&dir.join(&t.file))?;
        if bytes.len() != rows * t.cols * 4 {
            return Err(Error::Mismatch(format!(
                "{} holds {} bytes, expected {}",
                t.file,
                bytes.len(),
                rows * t.cols * 4
            )));
        }
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        mats.push(Matrix::from_vec(rows, t.cols, data));
    }
    let config_text = String::from_utf8(read(&dir.join(CONFIG_FILE))?)
        .map_err(|_| Error::Mismatch("checkpoint config is not UTF-8".into()))?;
    let config = Config::from_json(&config_text)?;
    if config.hash() != manifest.config_hash {
        return Err(Error::Mismatch("checkpoint config does not match its manifest hash".into()));
    }
    let relations_tsv = String::from_utf8(read(&dir.join(RELATIONS_FILE))?)
        .map_err(|_| Error::Mismatch("checkpoint relation table is not UTF-8".into()))?;
    let mut it = mats.into_iter();
    let mut next = || it.next().expect("five tables");
    let state = EmbeddingState {
        dim: manifest.dim,
        user_warm: next(),
        item_warm: next(),
        bundle_warm: next(),
        user_cold: next(),
        item_cold: next(),
        warm_bundles: manifest.warm_bundles.clone(),
    };
    Ok(Checkpoint {
        manifest,
        state,
        config,
        relations_tsv,
    })
}

/// Rounds every entry through `f32`, matching what a checkpoint stores.
pub fn round_to_stored(state: &EmbeddingState) -> EmbeddingState {
    let mut s = state.clone();
    for t in s.tables_mut() {
        t.as_mut_slice().iter_mut().for_each(|x| *x = *x as f32 as f64);
    }
    s
}
