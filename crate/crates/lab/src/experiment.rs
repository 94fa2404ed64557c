//! Runs a configured experiment and evaluates its expected orderings.

use std::path::Path;
use std::time::Instant;

use blockmix_core::dense::Matrix;
use blockmix_core::info::pairwise_nmi;
use blockmix_core::nets::{
    embed, end_to_end_linear_map, init_embedding, EmbeddingMode, EmbeddingSpec, LayerSpec, NetworkSpec, NetworkState,
    StackOptions,
};
use blockmix_core::spectral::SpectrumReport;
use blockmix_core::synthgen::{generate, SyntheticTask};
use blockmix_core::topology::{
    adjusted_rand_index, partition_nmi_ward, rebalance_equal, BlockPartition, ShuffleSchedule,
};
use blockmix_core::training::{train, train_embeddings, Optimizer, TrainHistory};
use blockmix_core::SeededRng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{
    Arch, EmbeddingSection, ExperimentConfig, ExperimentKind, MetricRef, PartitionSource, TrainSection, VariantConfig,
};
use crate::io::{history_to_csv, write_atomic, write_json, Checkpoint};
use crate::{corpus_report, LabError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    Fail,
}

/// Metrics of one trained variant at one task dimension.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub variant: String,
    pub arch: String,
    pub dim: usize,
    pub param_count: usize,
    /// Best validation loss.
    pub val_loss: f64,
    pub best_step: u64,
    pub effrank_entropy: Option<f64>,
    pub effrank_95: Option<usize>,
    pub eta: Option<f64>,
    pub nuclear_norm: Option<f64>,
    pub analyzed_matrix: String,
    /// Adjusted Rand index of a learned partition against the task's groups.
    pub partition_ari: Option<f64>,
    pub status: Status,
    /// Seconds; kept out of the CSV so reruns produce identical CSV bodies.
    pub wall_time: f64,
}

impl RunRecord {
    pub fn metric(&self, name: &str) -> Option<f64> {
        match name {
            "val_loss" => Some(self.val_loss),
            "effrank_entropy" => self.effrank_entropy,
            "effrank_95" => self.effrank_95.map(|v| v as f64),
            "eta" => self.eta,
            "nuclear_norm" => self.nuclear_norm,
            "param_count" => Some(self.param_count as f64),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderingOutcome {
    pub ordering: String,
    pub lhs: Option<f64>,
    pub rhs: Option<f64>,
    pub holds: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    /// SHA-256 of the canonical JSON form of `config` without `output_dir`.
    pub config_hash: String,
    pub seed: u64,
    pub task_seed: u64,
    pub init_seed: u64,
    pub shuffle_seed: u64,
    pub generator_laws: Vec<String>,
    pub train: TrainSection,
    pub tool_version: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub experiment: ExperimentKind,
    pub name: String,
    pub provenance: Provenance,
    pub config: ExperimentConfig,
    pub records: Vec<RunRecord>,
    pub orderings: Vec<OrderingOutcome>,
    pub wall_time: f64,
}

impl ExperimentResult {
    pub fn orderings_hold(&self) -> bool {
        self.orderings.iter().all(|o| o.holds)
    }

    /// Whether the stored hash matches the stored config.
    pub fn provenance_valid(&self) -> Result<bool> {
        Ok(config_hash(&self.config)? == self.provenance.config_hash)
    }
}

pub fn config_hash(cfg: &ExperimentConfig) -> Result<String> {
    let mut c = cfg.clone();
    c.output_dir = None;
    let text = serde_json::to_string(&c)?;
    Ok(hex::encode(Sha256::digest(text.as_bytes())))
}

/// Everything produced by [`run`], before it is written out.
pub struct RunOutput {
    pub result: ExperimentResult,
    pub histories: Vec<(String, usize, TrainHistory)>,
    pub checkpoints: Vec<(String, usize, Checkpoint)>,
    pub corpus: Option<corpus_report::CorpusReport>,
}

fn stack_options(v: &VariantConfig) -> StackOptions {
    StackOptions { activation: v.activation, residual: v.residual, layernorm: v.layernorm }
}

fn nmi_partition(task: &SyntheticTask, cfg: &ExperimentConfig, k: usize) -> Result<BlockPartition> {
    let (x, _) = task.analysis_sample(cfg.nmi.samples)?;
    let c = pairwise_nmi(&x, cfg.nmi.bins)?;
    let p = partition_nmi_ward(&c, k)?;
    Ok(if p.is_equal_sized() { p } else { rebalance_equal(&p, &c)? })
}

/// The network for variant `v` on `task`, the index range of its core
/// layers, and the learned partition when there is one.
pub fn build_network(
    v: &VariantConfig,
    task: &SyntheticTask,
    cfg: &ExperimentConfig,
) -> Result<(NetworkSpec, std::ops::Range<usize>, Option<BlockPartition>)> {
    let dim = task.spec().dim;
    let w = v.width(dim);
    let opts = stack_options(v);
    let square = w == dim;
    let mut learned = None;
    let core = match v.arch {
        Arch::Dense => NetworkSpec::dense_stack(w, v.depth, opts)?,
        arch => {
            let k = v.block_count(dim).expect("validated block count");
            let partition = match (arch, v.partition) {
                (Arch::V3, _) | (Arch::V4, Some(PartitionSource::Nmi)) => {
                    let p = nmi_partition(task, cfg, k)?;
                    learned = Some(p.clone());
                    p
                }
                _ => BlockPartition::contiguous(w, k)?,
            };
            let (schedule, restore) = match arch {
                Arch::V1 | Arch::V3 => (ShuffleSchedule::None, false),
                Arch::V2 => (ShuffleSchedule::Random { seed: cfg.shuffle_seed() }, square),
                _ => (ShuffleSchedule::Cyclic, square),
            };
            NetworkSpec::block_stack(&partition, v.depth, &schedule, opts, restore)?
        }
    };
    if square {
        let n = core.layers.len();
        return Ok((core, 0..n, learned));
    }
    let mut layers = vec![LayerSpec::dense(dim, w)];
    layers.extend(core.layers);
    layers.push(LayerSpec::dense(w, dim));
    let n = layers.len();
    Ok((NetworkSpec::new(layers, false)?, 1..n - 1, learned))
}

/// Jacobian at the origin of the core layers, which run at the widest
/// internal width.
fn analysis_matrix(spec: &NetworkSpec, state: &NetworkState, core: std::ops::Range<usize>) -> Result<(Matrix, String)> {
    let whole = core.start == 0 && core.end == spec.layers.len();
    if whole {
        let m = end_to_end_linear_map(state, spec)?;
        let label = format!("input-output Jacobian at the origin ({}x{})", m.rows(), m.cols());
        return Ok((m, label));
    }
    let sub = NetworkSpec::new(spec.layers[core.clone()].to_vec(), false)?;
    let sub_state = NetworkState::from_layers(&sub, state.layers()[core.clone()].to_vec())?;
    let m = end_to_end_linear_map(&sub_state, &sub)?;
    let label =
        format!("Jacobian at the origin of layers {}..={} ({}x{})", core.start, core.end - 1, m.rows(), m.cols());
    Ok((m, label))
}

fn arch_name(a: Arch) -> String {
    serde_json::to_value(a).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default()
}

fn run_networks(cfg: &ExperimentConfig, out: &mut RunOutput, laws: &mut Vec<String>) -> Result<()> {
    let task_cfg = cfg.task.as_ref().ok_or_else(|| LabError::Config("missing [task]".into()))?;
    let train_cfg = cfg.train.to_config(cfg.init_seed());
    for dim in cfg.dims() {
        let task = generate(&task_cfg.to_spec(dim, cfg.task_seed()))?;
        laws.push(format!("dim {dim}: {}", task.law()));
        for v in &cfg.variants {
            let t0 = Instant::now();
            let (spec, core, learned) = build_network(v, &task, cfg)?;
            let outcome = train(&spec, &task, &train_cfg)?;
            let (m, label) = analysis_matrix(&spec, &outcome.state, core.clone())?;
            let width = spec.layers[core.start].in_dim();
            let core_params: usize = spec.layers[core].iter().map(LayerSpec::param_count).sum();
            let report = SpectrumReport::analyze(&m, core_params, width).ok();
            let partition_ari = match (learned, task.ground_truth_partition()) {
                (Some(p), Some(truth)) => Some(adjusted_rand_index(p.assignment(), truth.assignment())?),
                _ => None,
            };
            let h = outcome.history;
            let status = if h.diverged || !h.best_val.is_finite() { Status::Fail } else { Status::Ok };
            let rec = RunRecord {
                variant: v.name.clone(),
                arch: arch_name(v.arch),
                dim,
                param_count: spec.param_count(),
                val_loss: h.best_val,
                best_step: h.best_step,
                effrank_entropy: report.as_ref().map(|r| r.effrank_entropy),
                effrank_95: report.as_ref().map(|r| r.effrank_95),
                eta: report.as_ref().map(|r| r.utilization_eta),
                nuclear_norm: report.as_ref().map(|r| r.nuclear_norm),
                analyzed_matrix: label,
                partition_ari,
                status,
                wall_time: t0.elapsed().as_secs_f64(),
            };
            eprintln!(
                "  {:<12} dim {:>5}  params {:>9}  val_loss {:.4e}  effrank {:>8.2}  ({:.1}s)",
                rec.variant,
                dim,
                rec.param_count,
                rec.val_loss,
                rec.effrank_entropy.unwrap_or(f64::NAN),
                rec.wall_time
            );
            out.result.records.push(rec);
            if cfg.checkpoints {
                out.checkpoints.push((v.name.clone(), dim, Checkpoint { spec, state: outcome.state }));
            }
            out.histories.push((v.name.clone(), dim, h));
        }
    }
    Ok(())
}

/// Factorized token regression: targets `a_p + b_h + noise`, a few
/// `(p, h)` pairs never seen in training and scored afterwards.
fn run_embeddings(cfg: &ExperimentConfig, out: &mut RunOutput, laws: &mut Vec<String>) -> Result<()> {
    let e: EmbeddingSection = cfg.embedding.clone().unwrap_or_default();
    let mut rng = SeededRng::with_stream(cfg.task_seed(), 0);
    let a = Matrix::from_vec(e.pitches, e.d, rng.normals(e.pitches * e.d))?;
    let b = Matrix::from_vec(e.hands, e.d, rng.normals(e.hands * e.d))?;
    let pitch_order = rng.permutation(e.pitches);
    // Held-out pairs use distinct pitches so each pitch and hand still
    // appears in training through some other pair.
    let held: Vec<(usize, usize)> =
        (0..e.held_out_pairs).map(|i| (pitch_order.mapping()[i % e.pitches], rng.below(e.hands))).collect();
    let id = |p: usize, h: usize| p * e.hands + h;
    let train_ids: Vec<usize> =
        (0..e.pitches * e.hands).filter(|&t| !held.iter().any(|&(p, h)| id(p, h) == t)).collect();
    let mut stream = SeededRng::with_stream(cfg.task_seed(), 1);
    let tokens: Vec<usize> = (0..e.tokens).map(|_| train_ids[stream.below(train_ids.len())]).collect();
    let clean =
        |t: usize| -> Vec<f64> { a.row(t / e.hands).iter().zip(b.row(t % e.hands)).map(|(x, y)| x + y).collect() };
    let mut targets = Matrix::zeros(tokens.len(), e.d);
    for (i, &t) in tokens.iter().enumerate() {
        for (o, c) in targets.row_mut(i).iter_mut().zip(clean(t)) {
            *o = c + e.noise_sigma * stream.normal();
        }
    }
    laws.push(format!(
        "{} pitches x {} hands, d = {}; target(p, h) = a_p + b_h + {} e with a, b ~ N(0, I); {} held-out pairs",
        e.pitches, e.hands, e.d, e.noise_sigma, e.held_out_pairs
    ));
    let pitch_map: Vec<usize> = (0..e.pitches * e.hands).map(|t| t / e.hands).collect();
    let hand_map: Vec<usize> = (0..e.pitches * e.hands).map(|t| t % e.hands).collect();
    let held_ids: Vec<usize> = held.iter().map(|&(p, h)| id(p, h)).collect();
    for (name, mode) in [("naive", EmbeddingMode::Naive), ("smart", EmbeddingMode::Smart)] {
        let t0 = Instant::now();
        let spec = EmbeddingSpec::new(mode, e.d, pitch_map.clone(), hand_map.clone(), e.pitches, e.hands)?;
        let mut tables = init_embedding(&spec, &mut SeededRng::new(cfg.init_seed()))?;
        for _ in 0..e.epochs {
            train_embeddings(&spec, &mut tables, &tokens, &targets, e.batch, e.lr, &Optimizer::default())?;
        }
        let got = embed(&spec, &tables, &held_ids)?;
        let want = Matrix::from_fn(held_ids.len(), e.d, |i, j| clean(held_ids[i])[j]);
        let val_loss = got.sub(&want)?.frobenius_norm_sq() / (held_ids.len() * e.d).max(1) as f64;
        let all: Vec<usize> = (0..spec.vocab_size()).collect();
        let m = embed(&spec, &tables, &all)?;
        let report = SpectrumReport::analyze(&m, spec.param_count(), e.d).ok();
        out.result.records.push(RunRecord {
            variant: name.into(),
            arch: "embedding".into(),
            dim: e.d,
            param_count: spec.param_count(),
            val_loss,
            best_step: 0,
            effrank_entropy: report.as_ref().map(|r| r.effrank_entropy),
            effrank_95: report.as_ref().map(|r| r.effrank_95),
            eta: report.as_ref().map(|r| r.utilization_eta),
            nuclear_norm: report.as_ref().map(|r| r.nuclear_norm),
            analyzed_matrix: format!("composed embedding table ({}x{})", m.rows(), m.cols()),
            partition_ari: None,
            status: if val_loss.is_finite() { Status::Ok } else { Status::Fail },
            wall_time: t0.elapsed().as_secs_f64(),
        });
    }
    Ok(())
}

fn lookup(records: &[RunRecord], r: &MetricRef) -> Option<f64> {
    let matches: Vec<&RunRecord> = records.iter().filter(|x| x.variant == r.variant).collect();
    let rec = match r.dim {
        Some(d) => matches.into_iter().find(|x| x.dim == d),
        None => matches.into_iter().max_by_key(|x| x.dim),
    }?;
    if rec.status == Status::Fail {
        return None;
    }
    rec.metric(&r.metric)
}

pub fn evaluate_orderings(cfg: &ExperimentConfig, records: &[RunRecord]) -> Result<Vec<OrderingOutcome>> {
    cfg.orderings
        .iter()
        .map(|o| {
            let lhs = lookup(records, &MetricRef::parse(&o.lhs)?);
            let rhs = lookup(records, &MetricRef::parse(&o.rhs)?);
            let holds = matches!((lhs, rhs), (Some(a), Some(b)) if o.op.holds(a, o.factor * b));
            let scale = if o.factor == 1.0 { String::new() } else { format!("{} * ", o.factor) };
            Ok(OrderingOutcome { ordering: format!("{} {} {scale}{}", o.lhs, o.op.symbol(), o.rhs), lhs, rhs, holds })
        })
        .collect()
}

/// Trains and evaluates everything in `cfg`. Nothing is written.
pub fn run(cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let t0 = Instant::now();
    let provenance = Provenance {
        config_hash: config_hash(cfg)?,
        seed: cfg.seed,
        task_seed: cfg.task_seed(),
        init_seed: cfg.init_seed(),
        shuffle_seed: cfg.shuffle_seed(),
        generator_laws: Vec::new(),
        train: cfg.train.clone(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
    };
    let mut out = RunOutput {
        result: ExperimentResult {
            experiment: cfg.experiment,
            name: cfg.name(),
            provenance,
            config: cfg.clone(),
            records: Vec::new(),
            orderings: Vec::new(),
            wall_time: 0.0,
        },
        histories: Vec::new(),
        checkpoints: Vec::new(),
        corpus: None,
    };
    let mut laws = Vec::new();
    match cfg.experiment {
        ExperimentKind::EmbeddingAblation => run_embeddings(cfg, &mut out, &mut laws)?,
        ExperimentKind::CorpusReport => {
            let c = cfg.corpus.as_ref().expect("validated corpus section");
            let pieces = crate::io::load_events_jsonl(&c.path)?;
            out.corpus = Some(corpus_report::build(&pieces, c.chunk_len, c.stride, c.d)?);
            laws.push(format!("corpus {}", c.path.display()));
        }
        _ => run_networks(cfg, &mut out, &mut laws)?,
    }
    out.result.provenance.generator_laws = laws;
    out.result.orderings = evaluate_orderings(cfg, &out.result.records)?;
    out.result.wall_time = t0.elapsed().as_secs_f64();
    Ok(out)
}

#[derive(Serialize)]
struct CsvRow<'a> {
    variant: &'a str,
    arch: &'a str,
    dim: usize,
    param_count: usize,
    val_loss: f64,
    best_step: u64,
    effrank_entropy: Option<f64>,
    effrank_95: Option<usize>,
    eta: Option<f64>,
    nuclear_norm: Option<f64>,
    partition_ari: Option<f64>,
    status: Status,
}

pub fn records_to_csv(records: &[RunRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in records {
        w.serialize(CsvRow {
            variant: &r.variant,
            arch: &r.arch,
            dim: r.dim,
            param_count: r.param_count,
            val_loss: r.val_loss,
            best_step: r.best_step,
            effrank_entropy: r.effrank_entropy,
            effrank_95: r.effrank_95,
            eta: r.eta,
            nuclear_norm: r.nuclear_norm,
            partition_ari: r.partition_ari,
            status: r.status,
        })?;
    }
    if records.is_empty() {
        w.write_record([
            "variant",
            "arch",
            "dim",
            "param_count",
            "val_loss",
            "best_step",
            "effrank_entropy",
            "effrank_95",
            "eta",
            "nuclear_norm",
            "partition_ari",
            "status",
        ])?;
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| LabError::Config(e.to_string()))?).expect("UTF-8"))
}

/// Writes `<name>.result.json`, `<name>.csv`, per-run history CSVs and any
/// checkpoints or corpus report into `dir`.
pub fn write_outputs(out: &RunOutput, dir: &Path) -> Result<()> {
    let name = &out.result.name;
    write_json(&dir.join(format!("{name}.result.json")), &out.result)?;
    write_atomic(&dir.join(format!("{name}.csv")), records_to_csv(&out.result.records)?.as_bytes())?;
    for (variant, dim, h) in &out.histories {
        write_atomic(&dir.join(format!("{name}.{variant}.{dim}.history.csv")), history_to_csv(h)?.as_bytes())?;
    }
    for (variant, dim, c) in &out.checkpoints {
        write_json(&dir.join(format!("{name}.{variant}.{dim}.ckpt.json")), c)?;
    }
    if let Some(c) = &out.corpus {
        write_json(&dir.join(format!("{name}.corpus.json")), c)?;
    }
    Ok(())
}

/// Records ranked by validation loss, as an aligned text table.
pub fn summary_table(records: &[RunRecord]) -> String {
    let mut rows: Vec<&RunRecord> = records.iter().collect();
    rows.sort_by(|a, b| a.val_loss.total_cmp(&b.val_loss));
    let mut s = format!(
        "{:<4} {:<14} {:<9} {:>6} {:>10} {:>12} {:>10} {:>7} {:>8} {:<4}\n",
        "rank", "variant", "arch", "dim", "params", "val_loss", "effrank", "eff95", "eta", "status"
    );
    let opt = |v: Option<f64>, p: usize| v.map_or("-".to_string(), |x| format!("{x:.p$}"));
    for (i, r) in rows.iter().enumerate() {
        s.push_str(&format!(
            "{:<4} {:<14} {:<9} {:>6} {:>10} {:>12.4e} {:>10} {:>7} {:>8} {:<4}\n",
            i + 1,
            r.variant,
            r.arch,
            r.dim,
            r.param_count,
            r.val_loss,
            opt(r.effrank_entropy, 2),
            r.effrank_95.map_or("-".into(), |v| v.to_string()),
            opt(r.eta, 3),
            if r.status == Status::Ok { "ok" } else { "FAIL" }
        ));
    }
    s
}
