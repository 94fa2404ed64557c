//! Experiment configuration, read from TOML.
//!
//! ```toml
//! experiment = "hierarchy_of_topology"
//! name = "hierarchy"
//! seed = 0
//!
//! [task]
//! kind = "extreme_modular"
//! dim = 512
//! groups = 8
//! scramble = true
//!
//! [train]
//! steps = 5000
//!
//! [[variants]]
//! name = "v3"
//! arch = "v3"
//! depth = 2
//! blocks = 8
//!
//! [[orderings]]
//! lhs = "v3.val_loss"
//! op = "<="
//! rhs = "v2.val_loss"
//! factor = 0.3333333333333333
//! ```
//!
//! Seeds: the task uses `seed`, weight initialization `seed + 1` and random
//! shuffles `seed + 2`.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use blockmix_core::nets::Activation;
use blockmix_core::synthgen::{TaskKind, TaskSpec};
use blockmix_core::training::{LossKind, Optimizer, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::{io_err, LabError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    SvdParadox,
    HierarchyOfTopology,
    KillShot,
    EmbeddingAblation,
    CorpusReport,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    /// Dense square layers.
    Dense,
    /// Contiguous blocks, no shuffles.
    V1,
    /// Contiguous blocks, a fresh random shuffle before every layer, order
    /// restored at the output.
    V2,
    /// Blocks from NMI clustering of the inputs, no shuffles.
    V3,
    /// Layer-0 partition from `partition`, one-block cyclic shifts after.
    V4,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionSource {
    Contiguous,
    Nmi,
}

fn default_depth() -> usize {
    2
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariantConfig {
    pub name: String,
    pub arch: Arch,
    /// Number of core layers at the internal width.
    #[serde(default = "default_depth")]
    pub depth: usize,
    /// Internal width; defaults to the task dimension. A wider net gets dense
    /// input and output projections around its core layers.
    #[serde(default)]
    pub width: Option<usize>,
    #[serde(default)]
    pub blocks: Option<usize>,
    /// Alternative to `blocks`: the block count becomes `width / block_width`.
    #[serde(default)]
    pub block_width: Option<usize>,
    #[serde(default = "default_activation")]
    pub activation: Activation,
    #[serde(default)]
    pub residual: bool,
    #[serde(default)]
    pub layernorm: bool,
    #[serde(default)]
    pub partition: Option<PartitionSource>,
}

fn default_activation() -> Activation {
    Activation::None
}

impl VariantConfig {
    pub fn width(&self, dim: usize) -> usize {
        self.width.unwrap_or(dim)
    }

    /// Block count at task dimension `dim`; `None` for dense variants.
    pub fn block_count(&self, dim: usize) -> Option<usize> {
        if self.arch == Arch::Dense {
            return None;
        }
        let w = self.width(dim);
        self.blocks.or_else(|| self.block_width.map(|b| w / b))
    }

    fn validate(&self, dim: usize) -> Result<()> {
        let bad = |m: String| Err(LabError::Config(format!("variant {:?}: {m}", self.name)));
        let w = self.width(dim);
        if self.depth == 0 {
            return bad("depth must be at least 1".into());
        }
        if w < dim {
            return bad(format!("width {w} is below the task dimension {dim}"));
        }
        if self.arch == Arch::Dense {
            if self.blocks.is_some() || self.block_width.is_some() {
                return bad("dense variants take no block settings".into());
            }
            return Ok(());
        }
        if self.blocks.is_some() == self.block_width.is_some() {
            return bad("set exactly one of blocks and block_width".into());
        }
        if let Some(bw) = self.block_width {
            if bw == 0 || !w.is_multiple_of(bw) {
                return bad(format!("block_width {bw} does not divide width {w}"));
            }
        }
        let k = self.block_count(dim).unwrap_or(0);
        if k == 0 || !w.is_multiple_of(k) {
            return bad(format!("{k} blocks do not split width {w} evenly"));
        }
        let uses_nmi = self.arch == Arch::V3 || (self.arch == Arch::V4 && self.partition == Some(PartitionSource::Nmi));
        if uses_nmi && w != dim {
            return bad("NMI partitions need the internal width to equal the task dimension".into());
        }
        if self.partition.is_some() && !matches!(self.arch, Arch::V4) {
            return bad("partition is only configurable for v4".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskConfig {
    pub kind: TaskKind,
    pub dim: usize,
    #[serde(default = "one")]
    pub groups: usize,
    #[serde(default = "default_sigma")]
    pub noise_sigma: f64,
    #[serde(default)]
    pub scramble: bool,
    #[serde(default)]
    pub train_n: usize,
    #[serde(default = "default_val_n")]
    pub val_n: usize,
    #[serde(default = "default_correlation")]
    pub correlation: f64,
}

fn one() -> usize {
    1
}
fn default_sigma() -> f64 {
    0.01
}
fn default_val_n() -> usize {
    1024
}
fn default_correlation() -> f64 {
    0.6
}

impl TaskConfig {
    pub fn to_spec(&self, dim: usize, seed: u64) -> TaskSpec {
        TaskSpec {
            kind: self.kind,
            dim,
            groups: self.groups,
            noise_sigma: self.noise_sigma,
            scramble: self.scramble,
            seed,
            train_n: self.train_n,
            val_n: self.val_n,
            correlation: self.correlation,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub steps: u64,
    pub batch: usize,
    pub lr: f64,
    pub optimizer: Optimizer,
    pub loss: LossKind,
    pub eval_every: u64,
    pub early_stop_patience: Option<usize>,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        Self {
            steps: d.steps,
            batch: d.batch,
            lr: d.lr,
            optimizer: d.optimizer,
            loss: d.loss,
            eval_every: d.eval_every,
            early_stop_patience: d.early_stop_patience,
        }
    }
}

impl TrainSection {
    pub fn to_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            steps: self.steps,
            batch: self.batch,
            lr: self.lr,
            optimizer: self.optimizer,
            loss: self.loss,
            eval_every: self.eval_every,
            early_stop_patience: self.early_stop_patience,
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NmiSection {
    pub bins: usize,
    /// Training-stream samples used to estimate pairwise NMI.
    pub samples: usize,
}

impl Default for NmiSection {
    fn default() -> Self {
        Self { bins: 16, samples: 10_000 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmbeddingSection {
    pub pitches: usize,
    pub hands: usize,
    pub d: usize,
    pub tokens: usize,
    pub held_out_pairs: usize,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub noise_sigma: f64,
}

impl Default for EmbeddingSection {
    fn default() -> Self {
        Self {
            pitches: 88,
            hands: 2,
            d: 64,
            tokens: 10_000,
            held_out_pairs: 8,
            epochs: 20,
            batch: 32,
            lr: 1e-2,
            noise_sigma: 0.01,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSection {
    pub path: PathBuf,
    #[serde(default = "default_chunk_len")]
    pub chunk_len: usize,
    #[serde(default = "default_stride")]
    pub stride: usize,
    #[serde(default = "default_embed_d")]
    pub d: usize,
}

fn default_chunk_len() -> usize {
    512
}
fn default_stride() -> usize {
    128
}
fn default_embed_d() -> usize {
    64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CompareOp {
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = ">")]
    Gt,
}

impl CompareOp {
    pub fn holds(self, a: f64, b: f64) -> bool {
        match self {
            Self::Le => a <= b,
            Self::Ge => a >= b,
            Self::Lt => a < b,
            Self::Gt => a > b,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Self::Le => "<=",
            Self::Ge => ">=",
            Self::Lt => "<",
            Self::Gt => ">",
        }
    }
}

/// Expected relation `lhs op factor * rhs` between two result metrics.
/// References read `variant.metric` or `variant@dim.metric`; metrics are
/// `val_loss`, `effrank_entropy`, `effrank_95`, `eta`, `nuclear_norm`,
/// `param_count`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ordering {
    pub lhs: String,
    pub op: CompareOp,
    pub rhs: String,
    #[serde(default = "unit")]
    pub factor: f64,
}

fn unit() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub task: Option<TaskConfig>,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub variants: Vec<VariantConfig>,
    /// Task dimensions to sweep; empty means `task.dim` only.
    #[serde(default)]
    pub dims: Vec<usize>,
    #[serde(default)]
    pub nmi: NmiSection,
    #[serde(default)]
    pub embedding: Option<EmbeddingSection>,
    #[serde(default)]
    pub corpus: Option<CorpusSection>,
    #[serde(default)]
    pub orderings: Vec<Ordering>,
    /// Also write each trained network as a JSON checkpoint.
    #[serde(default)]
    pub checkpoints: bool,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| LabError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file. A relative corpus path is taken relative to the
    /// config's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let mut cfg = Self::from_toml(&text)?;
        if let (Some(c), Some(base)) = (cfg.corpus.as_mut(), path.parent()) {
            if c.path.is_relative() {
                c.path = base.join(&c.path);
            }
        }
        Ok(cfg)
    }

    pub fn name(&self) -> String {
        self.name.clone().unwrap_or_else(|| {
            serde_json::to_value(self.experiment).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default()
        })
    }

    pub fn dims(&self) -> Vec<usize> {
        match (&self.task, self.dims.is_empty()) {
            (Some(t), true) => vec![t.dim],
            _ => self.dims.clone(),
        }
    }

    pub fn task_seed(&self) -> u64 {
        self.seed
    }

    pub fn init_seed(&self) -> u64 {
        self.seed.wrapping_add(1)
    }

    pub fn shuffle_seed(&self) -> u64 {
        self.seed.wrapping_add(2)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(LabError::Config(m.to_string()));
        match self.experiment {
            ExperimentKind::CorpusReport => {
                if self.corpus.is_none() {
                    return bad("corpus_report needs a [corpus] section");
                }
                return Ok(());
            }
            ExperimentKind::EmbeddingAblation => {
                let e = self.embedding.clone().unwrap_or_default();
                if e.pitches == 0 || e.hands == 0 || e.d == 0 || e.tokens == 0 || e.batch == 0 || e.epochs == 0 {
                    return bad("embedding sizes must be positive");
                }
                if e.held_out_pairs >= e.pitches * e.hands {
                    return bad("held_out_pairs must leave some pairs for training");
                }
                return self.validate_orderings(&["naive", "smart"]);
            }
            _ => {}
        }
        let Some(task) = &self.task else {
            return bad("this experiment needs a [task] section");
        };
        if self.variants.is_empty() {
            return bad("at least one [[variants]] entry is required");
        }
        let mut names = BTreeSet::new();
        for v in &self.variants {
            if !names.insert(v.name.as_str()) {
                return Err(LabError::Config(format!("duplicate variant name {:?}", v.name)));
            }
        }
        if self.train.batch == 0 || self.train.eval_every == 0 {
            return bad("train.batch and train.eval_every must be positive");
        }
        if self.train.lr.is_nan() || self.train.lr < 0.0 {
            return bad("train.lr must be non-negative");
        }
        for &dim in &self.dims() {
            if dim == 0 {
                return bad("task dimensions must be positive");
            }
            if task.kind != TaskKind::HighrankRecovery && dim % task.groups != 0 {
                return Err(LabError::Config(format!("dim {dim} does not split into {} groups", task.groups)));
            }
            for v in &self.variants {
                v.validate(dim)?;
            }
        }
        let owned: Vec<&str> = self.variants.iter().map(|v| v.name.as_str()).collect();
        self.validate_orderings(&owned)
    }

    fn validate_orderings(&self, names: &[&str]) -> Result<()> {
        for o in &self.orderings {
            for r in [&o.lhs, &o.rhs] {
                let m = MetricRef::parse(r)?;
                if !names.contains(&m.variant.as_str()) {
                    return Err(LabError::Config(format!("ordering refers to unknown variant {:?}", m.variant)));
                }
            }
        }
        Ok(())
    }
}

/// A parsed `variant[@dim].metric` reference.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MetricRef {
    pub variant: String,
    pub dim: Option<usize>,
    pub metric: String,
}

pub const METRICS: [&str; 6] = ["val_loss", "effrank_entropy", "effrank_95", "eta", "nuclear_norm", "param_count"];

impl MetricRef {
    pub fn parse(s: &str) -> Result<Self> {
        let bad = || LabError::Config(format!("bad metric reference {s:?}"));
        let (head, metric) = s.rsplit_once('.').ok_or_else(bad)?;
        if !METRICS.contains(&metric) {
            return Err(bad());
        }
        let (variant, dim) = match head.split_once('@') {
            Some((v, d)) => (v, Some(d.parse().map_err(|_| bad())?)),
            None => (head, None),
        };
        if variant.is_empty() {
            return Err(bad());
        }
        Ok(Self { variant: variant.to_string(), dim, metric: metric.to_string() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
experiment = "kill_shot"
dims = [16, 32]
[task]
kind = "factorized_manifold"
dim = 16
groups = 4
[[variants]]
name = "dense"
arch = "dense"
[[variants]]
name = "smart"
arch = "v2"
block_width = 8
[[orderings]]
lhs = "dense@32.val_loss"
op = ">="
rhs = "smart@32.val_loss"
factor = 2.0
"#;

    #[test]
    fn parses_minimal() {
        let c = ExperimentConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(c.dims(), vec![16, 32]);
        assert_eq!(c.variants[1].block_count(32), Some(4));
        assert_eq!(c.train.steps, 5000);
        assert_eq!(c.name(), "kill_shot");
    }

    #[test]
    fn rejects_unknown_keys() {
        let e = ExperimentConfig::from_toml(&MINIMAL.replace("dims =", "dimz =")).unwrap_err();
        assert!(e.to_string().contains("dimz"), "{e}");
    }

    #[test]
    fn rejects_bad_blocks() {
        let e = ExperimentConfig::from_toml(&MINIMAL.replace("block_width = 8", "block_width = 5")).unwrap_err();
        assert!(e.to_string().contains("block_width 5"), "{e}");
    }

    #[test]
    fn rejects_unknown_ordering_variant() {
        assert!(ExperimentConfig::from_toml(&MINIMAL.replace("smart@32", "wide@32")).is_err());
    }

    #[test]
    fn metric_refs() {
        let m = MetricRef::parse("v3@512.val_loss").unwrap();
        assert_eq!((m.variant.as_str(), m.dim, m.metric.as_str()), ("v3", Some(512), "val_loss"));
        assert!(MetricRef::parse("v3.loss").is_err());
        assert!(MetricRef::parse("val_loss").is_err());
    }
}
