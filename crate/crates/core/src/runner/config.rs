//! Experiment configuration files.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::actions::{Mask0Action, Mask1Action};
use crate::criteria::{Criterion, PruneMode, PruneSchedule};
use crate::data::{LastBatch, SplitConfig, DEFAULT_VAL_SIZE};
use crate::error::{Error, Result};
use crate::nn::arch::ArchKind;
use crate::nn::optim::OptimizerKind;
use crate::pipeline::TrainConfig;
use crate::supermask::{LearnedMaskConfig, Treatment};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    /// Pixel bytes divided by 255.
    #[default]
    Unit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    #[serde(default)]
    pub split_seed: u64,
    #[serde(default = "default_val_size")]
    pub val_size: usize,
    #[serde(default)]
    pub normalization: Normalization,
    /// Records read from each CIFAR-10 batch file (10000 for the real files).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cifar_records: Option<usize>,
}

fn default_val_size() -> usize {
    DEFAULT_VAL_SIZE
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            dir: None,
            split_seed: 0,
            val_size: DEFAULT_VAL_SIZE,
            normalization: Normalization::Unit,
            cifar_records: None,
        }
    }
}

impl DataSection {
    pub fn split(&self) -> SplitConfig {
        SplitConfig {
            val_size: self.val_size,
            seed: self.split_seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerName {
    Adam,
    SgdMomentum,
}

/// Overrides of the per-architecture training defaults.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub iterations: Option<usize>,
    pub batch_size: Option<usize>,
    pub eval_interval: Option<usize>,
    pub optimizer: Option<OptimizerName>,
    pub lr: Option<f64>,
    pub last_batch: Option<LastBatch>,
}

impl TrainSection {
    pub fn resolve(&self, arch: ArchKind) -> TrainConfig {
        let mut t = TrainConfig::for_arch(arch);
        if let Some(v) = self.iterations {
            t.iterations = v;
        }
        if let Some(v) = self.batch_size {
            t.batch_size = v;
        }
        if let Some(v) = self.eval_interval {
            t.eval_interval = v;
        }
        if let Some(v) = self.last_batch {
            t.last_batch = v;
        }
        let lr = self.lr.unwrap_or(arch.adam_lr());
        t.optimizer = match self.optimizer.unwrap_or(OptimizerName::Adam) {
            OptimizerName::Adam => OptimizerKind::adam(lr),
            OptimizerName::SgdMomentum => OptimizerKind::sgd_momentum(lr),
        };
        t
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LtSection {
    pub criteria: Vec<String>,
    #[serde(default = "default_mask1")]
    pub mask1: Vec<String>,
    #[serde(default = "default_mask0")]
    pub mask0: Vec<String>,
    pub rounds: Option<usize>,
    #[serde(default)]
    pub mode: PruneMode,
    pub conv_rate: Option<f64>,
    pub fc_rate: Option<f64>,
    pub output_rate: Option<f64>,
    #[serde(default = "default_true")]
    pub rerandomize_each_round: bool,
}

fn default_mask1() -> Vec<String> {
    vec!["rewind".into()]
}

fn default_mask0() -> Vec<String> {
    vec!["freeze_zero".into()]
}

fn default_true() -> bool {
    true
}

impl LtSection {
    pub fn schedule(&self, arch: ArchKind) -> PruneSchedule {
        let mut s = PruneSchedule::for_arch(arch);
        if let Some(r) = self.rounds {
            s.rounds = r;
        }
        if let Some(r) = self.conv_rate {
            s.conv_rate = r;
        }
        if let Some(r) = self.fc_rate {
            s.fc_rate = r;
        }
        s.output_rate = self.output_rate;
        s.mode = self.mode;
        s
    }
}

/// One-shot heuristic Supermasks built from a trained dense network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SupermaskSection {
    #[serde(default = "default_supermask_criteria")]
    pub criteria: Vec<String>,
    #[serde(default = "default_treatments")]
    pub treatments: Vec<String>,
    /// Pruning depths: level `k` keeps `(1 - rate)^k` of each layer.
    pub levels: Option<Vec<usize>>,
    pub conv_rate: Option<f64>,
    pub fc_rate: Option<f64>,
}

fn default_supermask_criteria() -> Vec<String> {
    vec!["large_final_same_sign".into(), "random".into()]
}

fn default_treatments() -> Vec<String> {
    vec!["init".into(), "signed_constant".into()]
}

impl SupermaskSection {
    pub fn schedule(&self, arch: ArchKind) -> PruneSchedule {
        let mut s = PruneSchedule::for_arch(arch);
        if let Some(r) = self.conv_rate {
            s.conv_rate = r;
        }
        if let Some(r) = self.fc_rate {
            s.fc_rate = r;
        }
        s.mode = PruneMode::OneShot;
        s
    }

    pub fn levels(&self, arch: ArchKind) -> Vec<usize> {
        self.levels
            .clone()
            .unwrap_or_else(|| (1..=arch.default_rounds()).collect())
    }
}

/// Learned Supermasks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnedSection {
    #[serde(default = "default_treatments")]
    pub treatments: Vec<String>,
    #[serde(default = "default_dwr")]
    pub dwr: Vec<bool>,
    #[serde(default = "default_logits")]
    pub init_logits: Vec<f64>,
    pub iterations: Option<usize>,
    pub lr: Option<f64>,
    pub batch_size: Option<usize>,
    pub eval_interval: Option<usize>,
    pub early_stopping: Option<bool>,
    pub eval_samples: Option<usize>,
    pub val_samples: Option<usize>,
}

fn default_dwr() -> Vec<bool> {
    vec![false, true]
}

fn default_logits() -> Vec<f64> {
    (-5..=5).map(f64::from).collect()
}

impl LearnedSection {
    pub fn resolve(&self, arch: ArchKind, init_logit: f64, dwr: bool) -> LearnedMaskConfig {
        let mut c = LearnedMaskConfig::for_arch(arch, init_logit, dwr);
        if let Some(v) = self.iterations {
            c.iterations = v;
        }
        if let Some(v) = self.lr {
            c.lr = v;
        }
        if let Some(v) = self.batch_size {
            c.batch_size = v;
        }
        if let Some(v) = self.eval_interval {
            c.eval_interval = v;
        }
        if let Some(v) = self.early_stopping {
            c.early_stopping = v;
        }
        if let Some(v) = self.eval_samples {
            c.eval_samples = v;
        }
        if let Some(v) = self.val_samples {
            c.val_samples = v;
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub arch: ArchKind,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub precision: Precision,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub train: TrainSection,
    pub lt: Option<LtSection>,
    pub supermask: Option<SupermaskSection>,
    pub learned: Option<LearnedSection>,
}

fn default_trials() -> usize {
    5
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Names in the matrices must parse; rates must be in range.
    pub fn validate(&self) -> Result<()> {
        if let Some(lt) = &self.lt {
            if lt.criteria.is_empty() {
                return Err(Error::Config("lt.criteria is empty".into()));
            }
            self.lt_criteria()?;
            self.lt_actions()?;
            lt.schedule(self.arch).validate()?;
        }
        if let Some(sm) = &self.supermask {
            parse_all::<Criterion>(&sm.criteria)?;
            parse_all::<Treatment>(&sm.treatments)?;
            sm.schedule(self.arch).validate()?;
        }
        if let Some(l) = &self.learned {
            parse_all::<Treatment>(&l.treatments)?;
            if let Some(c) = l.init_logits.iter().find(|c| !c.is_finite()) {
                return Err(Error::Config(format!("init logit {c} is not finite")));
            }
        }
        self.train.resolve(self.arch).validate()
    }

    pub fn lt_criteria(&self) -> Result<Vec<Criterion>> {
        self.lt.as_ref().map_or(Ok(Vec::new()), |lt| parse_all(&lt.criteria))
    }

    pub fn lt_actions(&self) -> Result<(Vec<Mask1Action>, Vec<Mask0Action>)> {
        match &self.lt {
            Some(lt) => Ok((parse_all(&lt.mask1)?, parse_all(&lt.mask0)?)),
            None => Ok((Vec::new(), Vec::new())),
        }
    }
}

pub fn parse_all<T: std::str::FromStr<Err = Error>>(names: &[String]) -> Result<Vec<T>> {
    names.iter().map(|n| n.parse()).collect()
}

/// SHA-256 (hex) of the canonical JSON form of `value`. Object keys are
/// sorted, so key order in the source never changes the hash.
pub fn config_hash<S: Serialize>(value: &S) -> Result<String> {
    let canonical = serde_json::to_value(value)?;
    let bytes = serde_json::to_vec(&canonical)?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}
