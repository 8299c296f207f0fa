//! Run configuration, read from a flat JSON object with dotted keys
//! (`"model.dim": 64`, `"loss.tau": 0.25`, ...). Missing keys take defaults.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::ModelOptions;
use crate::popularity::DEFAULT_ALPHA_K;
use crate::relations::{GraphThresholds, ThresholdPercentiles};

/// Explicit threshold values that replace the percentile-derived ones.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdOverride {
    pub ui: GraphThresholds,
    pub bi: GraphThresholds,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Cold,
    Warm,
    All,
}

impl SplitName {
    pub const ALL: [SplitName; 3] = [SplitName::Cold, SplitName::Warm, SplitName::All];

    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::Cold => "cold",
            SplitName::Warm => "warm",
            SplitName::All => "all",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "cold" => Ok(SplitName::Cold),
            "warm" => Ok(SplitName::Warm),
            "all" => Ok(SplitName::All),
            other => Err(Error::Config(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    #[serde(rename = "model.dim")]
    pub dim: usize,
    #[serde(rename = "model.layers")]
    pub layers: usize,

    #[serde(rename = "fusion.k")]
    pub k: f64,
    #[serde(rename = "fusion.warm_view_weights")]
    pub warm_view_weights: [f64; 3],
    #[serde(rename = "fusion.cold_view_weights")]
    pub cold_view_weights: [f64; 2],

    #[serde(rename = "loss.tau")]
    pub tau: f64,
    #[serde(rename = "loss.beta1")]
    pub beta1: f64,
    #[serde(rename = "loss.beta2")]
    pub beta2: f64,
    #[serde(rename = "loss.beta3")]
    pub beta3: f64,
    #[serde(rename = "loss.beta4")]
    pub beta4: f64,
    #[serde(rename = "loss.noise_eps")]
    pub noise_eps: f64,
    /// Multiplies `loss.beta1` by [`COLD_PROFILE_BETA1_FACTOR`].
    #[serde(rename = "loss.cold_profile")]
    pub cold_profile: bool,

    #[serde(rename = "train.lr")]
    pub lr: f64,
    #[serde(rename = "train.batch_size")]
    pub batch_size: usize,
    #[serde(rename = "train.epochs")]
    pub epochs: usize,
    #[serde(rename = "train.patience")]
    pub patience: usize,
    #[serde(rename = "train.seed")]
    pub train_seed: u64,
    #[serde(rename = "train.val_split")]
    pub val_split: SplitName,
    #[serde(rename = "train.val_k")]
    pub val_k: usize,

    #[serde(rename = "enhance.alpha")]
    pub alpha: f64,
    #[serde(rename = "enhance.exclude_identity")]
    pub exclude_identity: bool,

    #[serde(rename = "mine.min_item_freq")]
    pub min_item_freq: u32,
    #[serde(rename = "mine.percentiles")]
    pub percentiles: [u32; 3],
    #[serde(rename = "mine.r4_cap")]
    pub r4_cap: usize,
    #[serde(rename = "mine.seed")]
    pub mine_seed: u64,
    #[serde(rename = "mine.thresholds", skip_serializing_if = "Option::is_none")]
    pub thresholds: Option<ThresholdOverride>,

    #[serde(rename = "popularity.alpha_k")]
    pub alpha_k: [f64; 5],
    #[serde(rename = "popularity.cumulative")]
    pub cumulative: bool,
    /// Replaces adjusted popularity with 1 for every item.
    #[serde(rename = "popularity.uniform")]
    pub uniform_popularity: bool,

    #[serde(rename = "eval.ks")]
    pub eval_ks: Vec<usize>,
    #[serde(rename = "eval.mask_train")]
    pub mask_train: bool,
}

pub const COLD_PROFILE_BETA1_FACTOR: f64 = 5.0;

impl Default for Config {
    fn default() -> Self {
        Config {
            dim: 64,
            layers: 2,
            k: 0.5,
            warm_view_weights: [1.0 / 3.0; 3],
            cold_view_weights: [0.5; 2],
            tau: 0.25,
            beta1: 0.04,
            beta2: 0.02,
            beta3: 0.02,
            beta4: 1e-5,
            noise_eps: 0.1,
            cold_profile: false,
            lr: 1e-3,
            batch_size: 2048,
            epochs: 50,
            patience: 10,
            train_seed: 2024,
            val_split: SplitName::All,
            val_k: 20,
            alpha: 0.5,
            exclude_identity: false,
            min_item_freq: 5,
            percentiles: [95, 20, 5],
            r4_cap: 50,
            mine_seed: 2024,
            thresholds: None,
            alpha_k: DEFAULT_ALPHA_K,
            cumulative: false,
            uniform_popularity: false,
            eval_ks: vec![5, 10, 20],
            mask_train: true,
        }
    }
}

impl Config {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Config = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.is_file() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.dim == 0 {
            return fail("model.dim must be positive".into());
        }
        if self.layers == 0 {
            return fail("model.layers must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.k) {
            return fail(format!("fusion.k must be in [0,1], got {}", self.k));
        }
        if !(self.tau > 0.0) {
            return fail(format!("loss.tau must be positive, got {}", self.tau));
        }
        for (name, b) in [
            ("beta1", self.beta1),
            ("beta2", self.beta2),
            ("beta3", self.beta3),
            ("beta4", self.beta4),
        ] {
            if !(b >= 0.0 && b.is_finite()) {
                return fail(format!("loss.{name} must be nonnegative, got {b}"));
            }
        }
        if !(self.noise_eps > 0.0) {
            return fail("loss.noise_eps must be positive".into());
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return fail("train.lr must be nonnegative".into());
        }
        if self.batch_size == 0 {
            return fail("train.batch_size must be positive".into());
        }
        if self.val_k == 0 {
            return fail("train.val_k must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return fail(format!("enhance.alpha must be in [0,1], got {}", self.alpha));
        }
        let [h, l, a] = self.percentiles;
        if !(h <= 100 && h > l && l > a) {
            return fail(format!("mine.percentiles must be strictly decreasing within 0..=100, got {:?}", self.percentiles));
        }
        if self.r4_cap == 0 {
            return fail("mine.r4_cap must be positive".into());
        }
        if self.alpha_k.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return fail("popularity.alpha_k entries must be nonnegative".into());
        }
        if self.eval_ks.is_empty() || self.eval_ks.contains(&0) {
            return fail("eval.ks must list positive cut-offs".into());
        }
        if self
            .warm_view_weights
            .iter()
            .chain(&self.cold_view_weights)
            .any(|w| !w.is_finite())
        {
            return fail("view weights must be finite".into());
        }
        Ok(())
    }

    pub fn threshold_percentiles(&self) -> ThresholdPercentiles {
        let [high, low, anti] = self.percentiles;
        ThresholdPercentiles { high, low, anti }
    }

    pub fn model_options(&self) -> ModelOptions {
        ModelOptions {
            layers: self.layers,
            k: self.k,
            warm_view_weights: self.warm_view_weights,
            cold_view_weights: self.cold_view_weights,
        }
    }

    pub fn effective_beta1(&self) -> f64 {
        if self.cold_profile {
            self.beta1 * COLD_PROFILE_BETA1_FACTOR
        } else {
            self.beta1
        }
    }

    /// Canonical JSON: keys sorted, independent of input key order.
    pub fn canonical_json(&self) -> String {
        let v = serde_json::to_value(self).expect("config serializes");
        serde_json::to_string_pretty(&v).expect("value serializes")
    }

    pub fn hash(&self) -> String {
        sha256_hex(self.canonical_json().as_bytes())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}
