//! Pipeline commands with their on-disk outputs and run manifests.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::checkpoint::{checkpoint_hash, load_checkpoint, save_checkpoint};
use crate::config::{sha256_hex, Config, SplitName};
use crate::dataset::{load_dataset, resplit_cold, Dataset, Holdout, SplitRatios, DATASET_FILES};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalReport};
use crate::model::{forward, fuse};
use crate::pipeline::{mine_relations, popularity_profile, prepare};
use crate::relations::RelationTable;
use crate::synthetic::{planted_dataset, PlantedSpec};
use crate::train::{train, BestRecord, EpochRecord};

pub const RELATIONS_FILE: &str = "relations.tsv";
pub const POPULARITY_FILE: &str = "popularity.tsv";
pub const THRESHOLDS_FILE: &str = "thresholds.json";
pub const RUN_MANIFEST_FILE: &str = "run.json";
pub const TRAIN_LOG_FILE: &str = "train_log.jsonl";
pub const BEST_FILE: &str = "best.json";

/// Record of one command invocation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub config_hash: String,
    pub mine_seed: u64,
    pub train_seed: u64,
    /// SHA-256 of each input file.
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
    pub wall_clock_secs: f64,
    pub version: String,
}

impl RunManifest {
    fn new(command: &str, cfg: &Config) -> Self {
        RunManifest {
            command: command.into(),
            config: serde_json::from_str(&cfg.canonical_json()).expect("canonical config is JSON"),
            config_hash: cfg.hash(),
            mine_seed: cfg.mine_seed,
            train_seed: cfg.train_seed,
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
            wall_clock_secs: 0.0,
            version: env!("CARGO_PKG_VERSION").into(),
        }
    }

    fn hash_input(&mut self, path: &Path) -> Result<()> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        self.inputs.insert(path.display().to_string(), sha256_hex(&bytes));
        Ok(())
    }

    fn hash_dataset(&mut self, dir: &Path) -> Result<()> {
        for f in DATASET_FILES {
            self.hash_input(&dir.join(f))?;
        }
        Ok(())
    }

    /// The config snapshot, re-parsed.
    pub fn config(&self) -> Result<Config> {
        Config::from_json(&self.config.to_string())
    }

    fn finish(mut self, t0: Instant, path: &Path) -> Result<Self> {
        self.wall_clock_secs = t0.elapsed().as_secs_f64();
        let text = serde_json::to_string_pretty(&self)? + "\n";
        write_text(path, &text)?;
        Ok(self)
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn out_path(dir: &Path, name: &str, outputs: &mut Vec<String>) -> PathBuf {
    let p = dir.join(name);
    outputs.push(p.display().to_string());
    p
}

/// Mines relations and popularity; writes relations, popularity, thresholds
/// and the run manifest into `out`.
pub fn cmd_mine(data: &Path, cfg: &Config, out: &Path) -> Result<RunManifest> {
    let t0 = Instant::now();
    let ds = load_dataset(data)?;
    let mut run = RunManifest::new("mine", cfg);
    run.hash_dataset(data)?;
    let (thresholds, relations) = mine_relations(&ds, cfg)?;
    let popularity = popularity_profile(&ds, cfg)?;
    create_dir(out)?;
    let p = out_path(out, RELATIONS_FILE, &mut run.outputs);
    write_text(&p, &relations.to_tsv())?;
    let p = out_path(out, POPULARITY_FILE, &mut run.outputs);
    write_text(&p, &popularity.to_tsv())?;
    let p = out_path(out, THRESHOLDS_FILE, &mut run.outputs);
    write_text(&p, &(serde_json::to_string_pretty(&thresholds)? + "\n"))?;
    log::info!(
        "mined {} relations (R1 {}, R2 {}, R3 {}, R4 {})",
        relations.len(),
        relations.count(crate::relations::RelationClass::R1),
        relations.count(crate::relations::RelationClass::R2),
        relations.count(crate::relations::RelationClass::R3),
        relations.count(crate::relations::RelationClass::R4),
    );
    let manifest_path = out.join(RUN_MANIFEST_FILE);
    run.outputs.push(manifest_path.display().to_string());
    run.finish(t0, &manifest_path)
}

/// Where training gets its relation table from.
#[derive(Clone, Debug)]
pub enum RelationSource {
    /// A `mine` output directory.
    Mined(PathBuf),
    /// Mine before training.
    Inline,
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub run: RunManifest,
    pub checkpoint_hash: String,
    pub best: Option<BestRecord>,
    pub epochs: Vec<EpochRecord>,
}

fn load_relations(dir: &Path, ds: &Dataset, run: &mut RunManifest) -> Result<RelationTable> {
    if !dir.is_dir() {
        return Err(Error::MissingFile(dir.to_path_buf()));
    }
    let path = dir.join(RELATIONS_FILE);
    if !path.is_file() {
        return Err(Error::MissingFile(path));
    }
    run.hash_input(&path)?;
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    RelationTable::from_tsv(&text, ds.spaces.n_items)
}

/// Trains and writes the checkpoint, training log, best-validation record and
/// run manifest into `out`.
pub fn cmd_train(data: &Path, cfg: &Config, relations: RelationSource, out: &Path) -> Result<TrainSummary> {
    let t0 = Instant::now();
    let ds = load_dataset(data)?;
    let mut run = RunManifest::new("train", cfg);
    run.hash_dataset(data)?;
    let relations = match relations {
        RelationSource::Mined(dir) => load_relations(&dir, &ds, &mut run)?,
        RelationSource::Inline => mine_relations(&ds, cfg)?.1,
    };
    let prep = prepare(&ds, &relations, cfg)?;
    create_dir(out)?;
    let log_path = out_path(out, TRAIN_LOG_FILE, &mut run.outputs);
    let mut log_file = fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    let mut log_err = None;
    let outcome = train(&ds, &prep, cfg, |rec| {
        let line = serde_json::to_string(rec).expect("record serializes");
        if let Err(e) = writeln!(log_file, "{line}") {
            log_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = log_err {
        return Err(Error::io(&log_path, e));
    }
    let hash = save_checkpoint(out, &outcome.state, &ds.spaces, cfg, &relations)?;
    run.outputs.push(out.display().to_string());
    let best_path = out_path(out, BEST_FILE, &mut run.outputs);
    let best_json = serde_json::json!({
        "best": outcome.best,
        "epochs_run": outcome.epochs.len(),
        "stopped_early": outcome.stopped_early,
        "checkpoint_hash": hash,
    });
    write_text(&best_path, &(serde_json::to_string_pretty(&best_json)? + "\n"))?;
    let manifest_path = out.join(RUN_MANIFEST_FILE);
    run.outputs.push(manifest_path.display().to_string());
    let run = run.finish(t0, &manifest_path)?;
    Ok(TrainSummary {
        run,
        checkpoint_hash: hash,
        best: outcome.best,
        epochs: outcome.epochs,
    })
}

/// Evaluation settings.
#[derive(Clone, Debug)]
pub struct EvalRequest {
    pub ks: Vec<usize>,
    pub splits: Vec<SplitName>,
    pub holdout: Holdout,
    /// `None` uses the checkpoint config's `eval.mask_train`.
    pub mask_train: Option<bool>,
}

impl Default for EvalRequest {
    fn default() -> Self {
        EvalRequest {
            ks: vec![5, 10, 20],
            splits: SplitName::ALL.to_vec(),
            holdout: Holdout::Test,
            mask_train: None,
        }
    }
}

/// Scores a checkpoint on a dataset. When `out` is given the report is written
/// there and the run manifest next to it as `<out>.run.json`.
pub fn cmd_eval(data: &Path, checkpoint: &Path, req: &EvalRequest, out: Option<&Path>) -> Result<EvalReport> {
    let t0 = Instant::now();
    let ckpt = load_checkpoint(checkpoint)?;
    let ds = load_dataset(data)?;
    let cfg = &ckpt.config;
    let mut run = RunManifest::new("eval", cfg);
    run.hash_dataset(data)?;
    let relations = ckpt.relations()?;
    let prep = prepare(&ds, &relations, cfg)?;
    ckpt.manifest.check_dataset(&ds, &prep.graphs.warm_bundles)?;
    let opts = cfg.model_options();
    let fwd = forward(&prep.graphs, &ckpt.state, &opts);
    let fused = fuse(&fwd.warm, &fwd.cold, opts.k);
    let mask = req.mask_train.unwrap_or(cfg.mask_train);
    let mut report = evaluate(&fused, &ds.splits, req.holdout, &req.splits, &req.ks, mask)?;
    report.config_hash = cfg.hash();
    report.checkpoint_hash = checkpoint_hash(checkpoint)?;
    if let Some(path) = out {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            create_dir(parent)?;
        }
        write_text(path, &(serde_json::to_string_pretty(&report)? + "\n"))?;
        run.outputs.push(path.display().to_string());
        let mut manifest_path = path.as_os_str().to_owned();
        manifest_path.push(".run.json");
        let manifest_path = PathBuf::from(manifest_path);
        run.outputs.push(manifest_path.display().to_string());
        run.finish(t0, &manifest_path)?;
    }
    Ok(report)
}

/// Writes a planted community dataset.
pub fn cmd_synth(spec: &PlantedSpec, seed: u64, out: &Path) -> Result<Dataset> {
    let ds = planted_dataset(spec, seed)?;
    ds.write_dir(out)?;
    Ok(ds)
}

/// Re-partitions a dataset's bundles into cold validation and test sets.
pub fn cmd_split(data: &Path, ratios: SplitRatios, seed: u64, out: &Path) -> Result<Dataset> {
    let ds = resplit_cold(&load_dataset(data)?, ratios, seed)?;
    ds.write_dir(out)?;
    Ok(ds)
}
