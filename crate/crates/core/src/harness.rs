//! Experiment configuration, the four-phase run with checkpoint reuse,
//! grid sweeps and result emission.
//!
//! Layout under `output_dir`:
//!
//! ```text
//! ckpt/pretrain-<hash>.ckpt    unsplit pretrained backbone (stored at split 5)
//! ckpt/prune-<hash>.ckpt
//! ckpt/codec-<hash>.ckpt
//! ckpt/e2e-<hash>.ckpt
//! results.csv                  one row appended per evaluated SNR
//! results.json                 format = json only
//! frontier.<csv|json>          Pareto rows per SNR
//! frontier_plot.csv            x = device_flops, y = bandwidth, series = snr_db
//! ```
//!
//! Every checkpoint name hashes exactly the configuration that determines
//! its contents, so a pretrained backbone is shared by all cells of a sweep
//! that agree on dataset, backbone, seed and phase-1 settings.

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::checkpoint::{self, SaveOptions};
use crate::complexity::{device_flops, flops_vs_bandwidth_frontier, stack_flops, FlopReport};
use crate::data::{
    load_cifar100, load_spwd1, save_spwd1, synthetic_train_test, Dataset, SplitTag,
};
use crate::error::{Error, Result};
use crate::models::{bandwidth, BackboneConfig, CodecConfig, Phase, SplitModel, SplitPoint};
use crate::pruning::PruneMask;
use crate::report::{append_csv, read_csv, write_rows, Format, ResultRow};
use crate::tensor::{streams, Rng};
use crate::training::{
    evaluate, phase1_pretrain, phase2_prune, phase3_codec_pretrain, phase4_end_to_end, LrSchedule,
    Phase1Config, Phase2Config, Phase3Config, Phase4Config, PhaseLog, PipelineConfig,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    /// Directory holding `train.bin` and `test.bin`.
    Cifar100 { path: PathBuf },
    Synthetic {
        class_count: usize,
        train_per_class: usize,
        test_per_class: usize,
        /// Directory for SPWD1 copies of the generated splits.
        #[serde(default)]
        cache: Option<PathBuf>,
    },
}

impl DatasetSpec {
    pub fn class_count(&self) -> usize {
        match self {
            DatasetSpec::Cifar100 { .. } => 100,
            DatasetSpec::Synthetic { class_count, .. } => *class_count,
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            DatasetSpec::Cifar100 { path } => {
                for f in ["train.bin", "test.bin"] {
                    if !path.join(f).is_file() {
                        return Err(Error::Config(format!("{} not found", path.join(f).display())));
                    }
                }
            }
            DatasetSpec::Synthetic {
                class_count,
                train_per_class,
                test_per_class,
                ..
            } => {
                if *class_count < 2 || *train_per_class == 0 || *test_per_class == 0 {
                    return Err(Error::Config(
                        "synthetic dataset needs >= 2 classes and non-empty splits".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Train and test splits; synthetic data is drawn from `seed`.
    pub fn load(&self, seed: u64) -> Result<(Dataset, Dataset)> {
        match self {
            DatasetSpec::Cifar100 { path } => load_cifar100(path),
            DatasetSpec::Synthetic {
                class_count,
                train_per_class,
                test_per_class,
                cache,
            } => {
                let gen = || synthetic_train_test(*class_count, *train_per_class, *test_per_class, seed);
                let Some(dir) = cache else { return gen() };
                let stem = format!("synthetic-{class_count}-{train_per_class}-{test_per_class}-{seed}");
                let (tp, sp) = (dir.join(format!("{stem}-train.spwd")), dir.join(format!("{stem}-test.spwd")));
                if tp.is_file() && sp.is_file() {
                    let train = load_spwd1(&tp, SplitTag::Train)?;
                    let test = load_spwd1(&sp, SplitTag::Test)?.with_stats(train.channel_stats);
                    return Ok((train, test));
                }
                let (train, test) = gen()?;
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                save_spwd1(&tp, &train)?;
                save_spwd1(&sp, &test)?;
                Ok((train, test))
            }
        }
    }
}

/// Axes of a Cartesian sweep; every other field comes from the base config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    pub splits: Vec<SplitPoint>,
    pub ratios: Vec<f64>,
    pub c_encs: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    pub backbone: BackboneConfig,
    pub split: SplitPoint,
    pub pruning_ratio: f64,
    pub c_enc: usize,
    pub snr_db_list: Vec<f64>,
    pub pipeline: PipelineConfig,
    /// Replaces `pipeline.seed`.
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Channel realizations averaged per evaluated SNR.
    pub n_noise_draws: usize,
    /// Symbol count that `bandwidth_reduction` is relative to.
    pub reference_symbols: usize,
    pub frontier_floor: f64,
    pub format: Format,
    pub sweep: Option<SweepGrid>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: DatasetSpec::Cifar100 {
                path: PathBuf::from("data/cifar-100-binary"),
            },
            backbone: BackboneConfig::vgg16(100),
            split: SplitPoint::new(2).expect("valid split"),
            pruning_ratio: 0.0,
            c_enc: 32,
            snr_db_list: vec![-5.0, 0.0, 10.0, 20.0],
            pipeline: PipelineConfig::default(),
            seed: 0,
            output_dir: PathBuf::from("out"),
            n_noise_draws: 1,
            reference_symbols: 3072,
            frontier_floor: 0.02,
            format: Format::Csv,
            sweep: None,
        }
    }
}

/// Short schedules that train the 1/8-width backbone on the 4-class
/// synthetic set in about a minute.
pub fn toy_pipeline() -> PipelineConfig {
    PipelineConfig {
        phase1: Phase1Config {
            epochs: 4,
            schedule: LrSchedule {
                base: 0.01,
                milestones: vec![3],
                gamma: 0.1,
            },
        },
        phase2: Phase2Config {
            target_ratio: 0.0,
            n_remove: 512,
            finetune_epochs: 1,
            finetune_lr: 1e-3,
            saliency_batches: 4,
            min_filters: 1,
        },
        phase3: Phase3Config { epochs: 3, lr: 0.01 },
        phase4: Phase4Config { epochs: 2, lr: 1e-3 },
        batch_size: 32,
        augment: None,
        eval_each_epoch: false,
        ..PipelineConfig::default()
    }
}

impl ExperimentConfig {
    /// Split 2, ratio 0.25, c_enc 8 on a 1/8-width backbone and 4 synthetic
    /// classes (500 train / 100 test images each).
    pub fn toy() -> Self {
        ExperimentConfig {
            dataset: DatasetSpec::Synthetic {
                class_count: 4,
                train_per_class: 500,
                test_per_class: 100,
                cache: None,
            },
            backbone: BackboneConfig::vgg16(4).with_width_scale(0.125),
            pruning_ratio: 0.25,
            c_enc: 8,
            pipeline: toy_pipeline(),
            ..ExperimentConfig::default()
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.snr_db_list.is_empty() {
            return bad("snr_db_list is empty".into());
        }
        if self.snr_db_list.iter().any(|s| s.is_nan()) {
            return bad("snr_db_list contains NaN".into());
        }
        if !(0.0..1.0).contains(&self.pruning_ratio) {
            return bad(format!("pruning_ratio {} not in [0, 1)", self.pruning_ratio));
        }
        if self.c_enc == 0 || self.n_noise_draws == 0 || self.reference_symbols == 0 {
            return bad("c_enc, n_noise_draws and reference_symbols must be positive".into());
        }
        if !(self.frontier_floor >= 0.0) {
            return bad(format!("frontier_floor {} must be non-negative", self.frontier_floor));
        }
        self.backbone.validate()?;
        if self.backbone.num_classes != self.dataset.class_count() {
            return bad(format!(
                "backbone has {} classes, dataset {}",
                self.backbone.num_classes,
                self.dataset.class_count()
            ));
        }
        self.dataset.validate()?;
        self.pipeline().validate()?;
        if let Some(g) = &self.sweep {
            if g.splits.is_empty() || g.ratios.is_empty() || g.c_encs.is_empty() {
                return bad("sweep axes must be non-empty".into());
            }
            if g.ratios.iter().any(|r| !(0.0..1.0).contains(r)) || g.c_encs.contains(&0) {
                return bad("sweep ratios must lie in [0, 1) and c_encs be positive".into());
            }
        }
        Ok(())
    }

    /// The pipeline with this experiment's seed and pruning target.
    pub fn pipeline(&self) -> PipelineConfig {
        let mut p = self.pipeline.clone();
        p.seed = self.seed;
        p.phase2.target_ratio = self.pruning_ratio;
        p
    }

    /// One config per grid cell, or just `self` without a grid.
    pub fn cells(&self) -> Vec<ExperimentConfig> {
        let Some(g) = &self.sweep else {
            return vec![self.clone()];
        };
        let mut out = Vec::new();
        for &split in &g.splits {
            for &pruning_ratio in &g.ratios {
                for &c_enc in &g.c_encs {
                    out.push(ExperimentConfig {
                        split,
                        pruning_ratio,
                        c_enc,
                        sweep: None,
                        ..self.clone()
                    });
                }
            }
        }
        out
    }

    pub fn results_path(&self) -> PathBuf {
        self.output_dir.join("results.csv")
    }

    fn keys(&self) -> Keys {
        let p = self.pipeline();
        let pretrain = hash(&json!({
            "dataset": self.dataset,
            "backbone": self.backbone,
            "seed": self.seed,
            "phase1": p.phase1,
            "momentum": p.momentum,
            "weight_decay": p.weight_decay,
            "batch_size": p.batch_size,
            "augment": p.augment,
        }));
        let prune = (self.pruning_ratio > 0.0).then(|| {
            hash(&json!({"from": pretrain, "split": self.split, "phase2": p.phase2}))
        });
        let codec = hash(&json!({
            "from": prune.clone().unwrap_or_else(|| pretrain.clone()),
            "split": self.split,
            "c_enc": self.c_enc,
            "phase3": p.phase3,
            "snr_db": p.snr_db,
        }));
        let e2e = hash(&json!({"from": codec, "phase4": p.phase4}));
        let row = hash(&json!({"from": e2e, "n_noise_draws": self.n_noise_draws}));
        Keys {
            pretrain,
            prune,
            codec,
            e2e,
            row,
        }
    }
}

fn hash(v: &Value) -> String {
    format!("{:08x}", crc32fast::hash(v.to_string().as_bytes()))
}

struct Keys {
    pretrain: String,
    prune: Option<String>,
    codec: String,
    e2e: String,
    row: String,
}

/// How far [`run`] goes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Target {
    Pretrain,
    Prune,
    Codec,
    EndToEnd,
    /// Train through phase 4, then evaluate every SNR and write rows.
    Eval,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum StageKind {
    Pretrain,
    Prune,
    Codec,
    EndToEnd,
}

impl StageKind {
    fn name(self) -> &'static str {
        match self {
            StageKind::Pretrain => "pretrain",
            StageKind::Prune => "prune",
            StageKind::Codec => "codec",
            StageKind::EndToEnd => "e2e",
        }
    }

    fn phase(self) -> Phase {
        match self {
            StageKind::Pretrain => Phase::Pretrained,
            StageKind::Prune => Phase::Pruned,
            StageKind::Codec => Phase::CodecTrained,
            StageKind::EndToEnd => Phase::EndToEnd,
        }
    }
}

/// Carried from checkpoint to checkpoint in the manifest's `extra` field.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
struct Carry {
    baseline_accuracy: f64,
    split_accuracy: f64,
    pretrain_s: f64,
    prune_s: f64,
    codec_s: f64,
    e2e_s: f64,
}

/// State shared by the runs of one invocation.
#[derive(Debug, Default)]
pub struct RunContext {
    /// Reuse checkpoints and rows left by earlier invocations.
    pub resume: bool,
    /// Fail once this many rows have been written (simulated interruption).
    pub stop_after: Option<usize>,
    /// `<stage>-<hash>` of every phase trained, in order.
    pub trained: Vec<String>,
    fresh: HashSet<PathBuf>,
    done: HashSet<(String, u64)>,
    rows_written: usize,
    started: bool,
}

impl RunContext {
    pub fn new(resume: bool) -> Self {
        RunContext {
            resume,
            ..RunContext::default()
        }
    }

    fn loadable(&self, path: &Path) -> bool {
        path.is_file() && (self.resume || self.fresh.contains(path))
    }

    fn stopped(&self) -> bool {
        self.stop_after.is_some_and(|n| self.rows_written >= n)
    }

    /// Truncates or indexes the results file once per invocation.
    fn begin(&mut self, cfg: &ExperimentConfig) -> Result<()> {
        if self.started {
            return Ok(());
        }
        self.started = true;
        let dir = &cfg.output_dir;
        std::fs::create_dir_all(dir.join("ckpt")).map_err(|e| Error::io(dir, e))?;
        let path = cfg.results_path();
        if self.resume {
            self.done = read_csv(&path)?.iter().map(ResultRow::key).collect();
        } else if path.exists() {
            std::fs::remove_file(&path).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

#[derive(Debug, Default)]
pub struct RunOutcome {
    /// Rows for this config, including ones found on resume.
    pub rows: Vec<ResultRow>,
    /// Metrics of every phase up to the target, loaded or trained.
    pub log: PhaseLog,
    pub bandwidth: Option<usize>,
    pub device_flops: u64,
}

/// Runs one config up to `target`, then emits results when the target is
/// [`Target::Eval`].
pub fn run(cfg: &ExperimentConfig, target: Target, ctx: &mut RunContext) -> Result<RunOutcome> {
    cfg.validate()?;
    ctx.begin(cfg)?;
    let (train, test) = cfg.dataset.load(cfg.seed)?;
    let out = run_loaded(cfg, &train, &test, target, ctx)?;
    if target == Target::Eval {
        emit(&read_csv(&cfg.results_path())?, &cfg.output_dir, cfg.format, Some(cfg.frontier_floor))?;
    }
    Ok(out)
}

fn ckpt_path(cfg: &ExperimentConfig, kind: StageKind, hash: &str) -> PathBuf {
    cfg.output_dir.join("ckpt").join(format!("{}-{hash}.ckpt", kind.name()))
}

fn run_loaded(
    cfg: &ExperimentConfig,
    train: &Dataset,
    test: &Dataset,
    target: Target,
    ctx: &mut RunContext,
) -> Result<RunOutcome> {
    let keys = cfg.keys();
    let pipe = cfg.pipeline();
    let mut stages = vec![(StageKind::Pretrain, keys.pretrain.clone())];
    if let Some(h) = &keys.prune {
        if target >= Target::Prune {
            stages.push((StageKind::Prune, h.clone()));
        }
    }
    if target >= Target::Codec {
        stages.push((StageKind::Codec, keys.codec.clone()));
    }
    if target >= Target::EndToEnd {
        stages.push((StageKind::EndToEnd, keys.e2e.clone()));
    }

    // latest reusable checkpoint
    let mut state: Option<(SplitModel, Carry, PhaseLog)> = None;
    let mut start = 0;
    for (i, (kind, h)) in stages.iter().enumerate().rev() {
        let path = ckpt_path(cfg, *kind, h);
        if ctx.loadable(&path) {
            let ck = checkpoint::load_at_least(&path, kind.phase())?;
            if ck.manifest.backbone != cfg.backbone {
                return Err(Error::Checkpoint(format!("{} was saved for another backbone", path.display())));
            }
            let carry: Carry = serde_json::from_value(ck.manifest.extra.clone())?;
            log::info!("loaded {}", path.display());
            state = Some((ck.model, carry, ck.manifest.metrics));
            start = i + 1;
            break;
        }
    }

    for (kind, h) in &stages[start..] {
        let t = Instant::now();
        let (mut model, mut carry, mut log) = match state.take() {
            Some((m, c, l)) => (m, c, l),
            None => {
                let m = SplitModel::new(&cfg.backbone, SplitPoint::new(5)?, &mut Rng::derive(cfg.seed, streams::INIT))?;
                (m, Carry::default(), PhaseLog::default())
            }
        };
        if model.split != cfg.split && *kind != StageKind::Pretrain {
            model = model.resplit(cfg.split)?;
        }
        match kind {
            StageKind::Pretrain => {
                log.extend(phase1_pretrain(&mut model, train, test, &pipe)?);
                carry.baseline_accuracy = evaluate(&model, test, f64::INFINITY, 1, cfg.seed, pipe.eval_batch_size)?;
                carry.split_accuracy = carry.baseline_accuracy;
                carry.pretrain_s = t.elapsed().as_secs_f64();
            }
            StageKind::Prune => {
                log.extend(phase2_prune(&mut model, train, test, &pipe)?);
                carry.split_accuracy = evaluate(&model, test, f64::INFINITY, 1, cfg.seed, pipe.eval_batch_size)?;
                carry.prune_s = t.elapsed().as_secs_f64();
            }
            StageKind::Codec => {
                model.attach_codec(&CodecConfig::new(cfg.c_enc), &mut Rng::derive(cfg.seed, streams::CODEC_INIT))?;
                model.channel.set_snr_db(pipe.snr_db);
                log.extend(phase3_codec_pretrain(&mut model, train, &pipe, cfg.pruning_ratio)?);
                carry.codec_s = t.elapsed().as_secs_f64();
            }
            StageKind::EndToEnd => {
                log.extend(phase4_end_to_end(&mut model, train, test, &pipe)?);
                carry.e2e_s = t.elapsed().as_secs_f64();
            }
        }
        let path = ckpt_path(cfg, *kind, h);
        let opts = SaveOptions {
            metrics: log.clone(),
            extra: serde_json::to_value(&carry)?,
            ..SaveOptions::default()
        };
        checkpoint::save(&path, &model, &opts)?;
        ctx.fresh.insert(path);
        ctx.trained.push(format!("{}-{h}", kind.name()));
        state = Some((model, carry, log));
    }

    let (mut model, carry, log) = state.expect("at least the pretrain stage ran or loaded");
    if model.split != cfg.split {
        model = model.resplit(cfg.split)?;
    }
    let mut out = RunOutcome {
        rows: Vec::new(),
        log,
        bandwidth: model.bandwidth(),
        device_flops: device_flops(&model).device_total,
    };
    if target < Target::Eval {
        return Ok(out);
    }

    let b = model.bandwidth().ok_or_else(|| Error::State("evaluation needs a codec".into()))?;
    let results = cfg.results_path();
    for &snr in &cfg.snr_db_list {
        let key = (keys.row.clone(), snr.to_bits());
        if ctx.done.contains(&key) {
            continue;
        }
        if ctx.stopped() {
            return Err(Error::State(format!("stopped after {} rows", ctx.rows_written)));
        }
        let t = Instant::now();
        let accuracy = evaluate(&model, test, snr, cfg.n_noise_draws, cfg.seed, pipe.eval_batch_size)?;
        let row = ResultRow {
            split: cfg.split.pool_index(),
            ratio: cfg.pruning_ratio,
            c_enc: cfg.c_enc,
            bandwidth: b,
            snr_db: snr,
            accuracy,
            device_flops: out.device_flops,
            baseline_accuracy: carry.baseline_accuracy,
            seed: cfg.seed,
            split_accuracy: carry.split_accuracy,
            achieved_ratio: model.pruning_ratio(),
            digital_bits: crate::channel::digital_bits(snr, b),
            bandwidth_reduction: cfg.reference_symbols as f64 / b as f64,
            config_hash: keys.row.clone(),
            pretrain_s: carry.pretrain_s,
            prune_s: carry.prune_s,
            codec_s: carry.codec_s,
            e2e_s: carry.e2e_s,
            eval_s: t.elapsed().as_secs_f64(),
        };
        log::info!("split {} ratio {} c_enc {} snr {snr}: accuracy {accuracy:.4}", row.split, row.ratio, row.c_enc);
        append_csv(&results, &row)?;
        ctx.done.insert(key);
        ctx.rows_written += 1;
    }
    out.rows = read_csv(&results)?
        .into_iter()
        .filter(|r| r.config_hash == keys.row)
        .collect();
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CellFailure {
    pub split: usize,
    pub ratio: f64,
    pub c_enc: usize,
    pub error: String,
}

#[derive(Debug, Default)]
pub struct SweepOutcome {
    /// Everything in the results file after the sweep.
    pub rows: Vec<ResultRow>,
    pub failures: Vec<CellFailure>,
}

/// Runs every grid cell to [`Target::Eval`]. A failing cell is logged and
/// skipped; an interruption from `ctx.stop_after` aborts the sweep.
pub fn sweep(cfg: &ExperimentConfig, ctx: &mut RunContext) -> Result<SweepOutcome> {
    cfg.validate()?;
    ctx.begin(cfg)?;
    let (train, test) = cfg.dataset.load(cfg.seed)?;
    let mut failures = Vec::new();
    for cell in cfg.cells() {
        let res = cell.validate().and_then(|_| run_loaded(&cell, &train, &test, Target::Eval, ctx));
        if let Err(e) = res {
            if ctx.stopped() {
                return Err(e);
            }
            log::error!("cell split {} ratio {} c_enc {} failed: {e}", cell.split.pool_index(), cell.pruning_ratio, cell.c_enc);
            failures.push(CellFailure {
                split: cell.split.pool_index(),
                ratio: cell.pruning_ratio,
                c_enc: cell.c_enc,
                error: e.to_string(),
            });
        }
    }
    let rows = read_csv(&cfg.results_path())?;
    emit(&rows, &cfg.output_dir, cfg.format, Some(cfg.frontier_floor))?;
    Ok(SweepOutcome { rows, failures })
}

/// Writes `results.<ext>` and, with a floor, `frontier.<ext>` plus
/// `frontier_plot.csv`. Returns the paths written.
pub fn emit(rows: &[ResultRow], dir: &Path, format: Format, frontier_floor: Option<f64>) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    let results = dir.join(format!("results.{}", format.extension()));
    write_rows(&results, rows, format)?;
    written.push(results);
    if let Some(floor) = frontier_floor {
        let front = frontier(rows, floor);
        let path = dir.join(format!("frontier.{}", format.extension()));
        write_rows(&path, &front, format)?;
        written.push(path);
        let plot = dir.join("frontier_plot.csv");
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["x", "y", "series"]).map_err(|e| Error::Input(format!("csv: {e}")))?;
        for r in &front {
            w.write_record([r.device_flops.to_string(), r.bandwidth.to_string(), r.snr_db.to_string()])
                .map_err(|e| Error::Input(format!("csv: {e}")))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Input(format!("csv: {e}")))?;
        std::fs::write(&plot, bytes).map_err(|e| Error::io(&plot, e))?;
        written.push(plot);
    }
    Ok(written)
}

/// Pareto rows computed separately for each SNR, in order of first appearance.
pub fn frontier(rows: &[ResultRow], floor: f64) -> Vec<ResultRow> {
    let mut snrs: Vec<u64> = Vec::new();
    for r in rows {
        if !snrs.contains(&r.snr_db.to_bits()) {
            snrs.push(r.snr_db.to_bits());
        }
    }
    snrs.iter()
        .flat_map(|&s| {
            let group: Vec<ResultRow> = rows.iter().filter(|r| r.snr_db.to_bits() == s).cloned().collect();
            flops_vs_bandwidth_frontier(&group, floor)
        })
        .collect()
}

/// Device cost of `cfg` with the first `round(w · (1 − ratio))` filters of
/// every device conv kept, and the resulting bandwidth. No training.
pub fn uniform_flops(cfg: &ExperimentConfig) -> Result<(FlopReport, usize)> {
    cfg.backbone.validate()?;
    if !(0.0..1.0).contains(&cfg.pruning_ratio) || cfg.c_enc == 0 {
        return Err(Error::Config("pruning_ratio must lie in [0, 1) and c_enc be positive".into()));
    }
    let k = cfg.split.pool_index();
    let stages = &cfg.backbone.stage_widths()[..k];
    let flat: Vec<usize> = stages.concat();
    let mut kept = PruneMask::uniform(&flat, cfg.pruning_ratio).kept_widths().into_iter();
    let grouped: Vec<Vec<usize>> = stages
        .iter()
        .map(|s| kept.by_ref().take(s.len()).collect())
        .collect();
    let b = bandwidth(cfg.backbone.feature_shape(k), cfg.c_enc)?;
    Ok((stack_flops(&grouped, Some(cfg.c_enc)), b))
}
