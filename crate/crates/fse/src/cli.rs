//! Command-line interface.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use fse_core::bbox::{BboxModel, PredictionTask, Streams};
use fse_core::experiment::{
    evaluate_kalman_boxes, evaluate_odometry, evaluate_window, fit_kalman_boxes, fit_kalman_odometry, is_curved, split_windows,
    stream_tasks, train_bbox, train_odometry, BboxMetrics, BboxVariant, OdoMetrics, OdoPredictor, Profile,
};
use fse_core::odometry::{OdoModel, OdoTask};
use fse_core::simulator::{generate_dataset, Dataset, SimConfig, Split};
use fse_core::trainer::{scene_odometry_windows, StageReport};
use fse_core::uncertainty::calibration_splits;
use fse_core::gradient_suite::{self, SUITE_TOLERANCE};

use crate::checkpoint::{Checkpoint, Provenance};
use crate::config::{ExperimentConfig, ModelVariant, ProfileName};
use crate::dataset::{dataset_hash, load_dataset, simulate_to};
use crate::error::{FseError, Result};
use crate::fsutil::write_atomic;
use crate::report::{calibration_rows, calibration_summary, per_step_rows, write_csv, MetricsRow, PerStepRow};

pub const BBOX_CHECKPOINT: &str = "bbox.fse";
pub const ODOMETRY_CHECKPOINT: &str = "odometry.fse";

#[derive(Debug, Parser)]
#[command(name = "fse", version, about = "Bayesian pedestrian box forecasting from a moving vehicle")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset into --out.
    Simulate(Common),
    /// Train a model variant; writes checkpoints and train_log.json into --out.
    Train(Common),
    /// Evaluate a variant on the test split; writes metrics.csv and metrics_per_step.csv.
    Evaluate(Common),
    /// Uncertainty/error pairs and their envelope (fig3.csv).
    Calibration(Common),
    /// Finite-difference check of both streams.
    Gradcheck,
    /// Run every table of the comparison grid into --out.
    MakeAll(Common),
}

#[derive(Debug, Default, Args)]
pub struct Common {
    /// TOML experiment configuration; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Dataset directory written by `simulate`.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Dataset size divisor (1 = full size).
    #[arg(long)]
    pub scale: Option<usize>,
    #[arg(long)]
    pub variant: Option<ModelVariant>,
    /// one, two or oracle
    #[arg(long)]
    pub streams: Option<Streams>,
    #[arg(long)]
    pub past: Option<usize>,
    #[arg(long)]
    pub horizon: Option<usize>,
    #[arg(long)]
    pub mc_samples: Option<usize>,
    /// tiny, desk or full
    #[arg(long, value_parser = parse_profile)]
    pub profile: Option<ProfileName>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Box-stream checkpoint (default: <out>/bbox.fse).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

fn parse_profile(s: &str) -> std::result::Result<ProfileName, String> {
    match s {
        "tiny" => Ok(ProfileName::Tiny),
        "desk" => Ok(ProfileName::Desk),
        "full" => Ok(ProfileName::Full),
        _ => Err(format!("unknown profile {s:?}; valid profiles: tiny, desk, full")),
    }
}

impl Common {
    pub fn config(&self) -> Result<ExperimentConfig> {
        let mut c = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(p) = self.profile {
            // A profile flag brings its own schedule; explicit keys still win below.
            let t = p.profile().train;
            c.profile = p;
            c.mc_samples = t.mc_samples;
            c.curriculum = t.horizons;
            c.past = t.past;
            c.horizon = t.horizon;
        }
        macro_rules! set {
            ($($f:ident),*) => { $(if let Some(v) = self.$f.clone() { c.$f = v; })* };
        }
        set!(seed, scale, variant, streams, past, horizon, mc_samples, out);
        if self.dataset.is_some() {
            c.dataset = self.dataset.clone();
        }
        c.validate()?;
        Ok(c)
    }

    fn checkpoint_path(&self, c: &ExperimentConfig) -> PathBuf {
        self.checkpoint.clone().unwrap_or_else(|| c.out.join(BBOX_CHECKPOINT))
    }
}

/// Runs a parsed command; the caller maps errors to exit codes.
pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(a) => simulate(&a),
        Command::Train(a) => train(&a),
        Command::Evaluate(a) => evaluate(&a),
        Command::Calibration(a) => calibration(&a),
        Command::Gradcheck => gradcheck(),
        Command::MakeAll(a) => make_all(&a),
    }
}

fn simulate(a: &Common) -> Result<()> {
    let c = a.config()?;
    let (_, manifest) = simulate_to(&c.out, &SimConfig::default(), c.seed, c.scale)?;
    println!("{}", manifest.summary());
    println!("written to {}", c.out.display());
    Ok(())
}

/// The dataset named by the config, or the one its seed and scale generate.
fn dataset(c: &ExperimentConfig) -> Result<(Dataset, String)> {
    match &c.dataset {
        Some(dir) => {
            let (d, m) = load_dataset(dir)?;
            Ok((d, m.config_hash))
        }
        None => {
            let cfg = SimConfig::default();
            Ok((generate_dataset(&cfg, c.seed, c.scale)?, dataset_hash(&cfg, c.seed, c.scale)))
        }
    }
}

#[derive(serde::Serialize)]
struct TrainLog<'a> {
    config_hash: String,
    config: &'a ExperimentConfig,
    odometry: Option<&'a [StageReport]>,
    bbox: &'a [StageReport],
}

fn train(a: &Common) -> Result<()> {
    let c = a.config()?;
    let Some(variant) = c.variant.network() else {
        return Err(FseError::Usage(format!("{} has nothing to train; run `evaluate` directly", c.variant)));
    };
    let (data, dhash) = dataset(&c)?;
    let profile = c.profile()?;
    let hash = c.hash();
    let provenance = |stages: &[StageReport]| Provenance {
        experiment_hash: hash.clone(),
        dataset_hash: dhash.clone(),
        seed: c.seed,
        stages: stages.to_vec(),
    };
    let mut odo_log = None;
    let odo = if c.streams == Streams::Two {
        let (m, stages) = train_odometry(&data, true, &profile, c.seed)?;
        Checkpoint::from_odometry(&m, provenance(&stages)).save(&c.out.join(ODOMETRY_CHECKPOINT))?;
        println!("odometry stream trained ({} stages)", stages.len());
        odo_log = Some(stages);
        Some(m)
    } else {
        None
    };
    let spec = BboxVariant { variant, streams: c.streams, past: c.past };
    let (model, stages) = train_bbox(&data, spec, odo.as_ref(), &profile, c.seed)?;
    let path = a.checkpoint_path(&c);
    Checkpoint::from_bbox(&model, provenance(&stages)).save(&path)?;
    let log = TrainLog { config_hash: hash, config: &c, odometry: odo_log.as_deref(), bbox: &stages };
    let json = serde_json::to_vec_pretty(&log).expect("training log serializes");
    write_atomic(&c.out.join("train_log.json"), &json)?;
    println!("{} {}-stream trained; checkpoint {}", c.variant, c.streams, path.display());
    Ok(())
}

/// Fixed evaluation seed derived from the experiment seed.
pub fn eval_seed(seed: u64) -> u64 {
    seed ^ 0x5eed
}

/// Box metrics of a model over `tasks`, windows evaluated in parallel.
/// Each window has its own random stream, so the result does not depend
/// on the number of workers.
pub fn evaluate_model(model: &BboxModel, tasks: &[PredictionTask], mc: usize, seed: u64) -> Result<BboxMetrics> {
    let per = tasks
        .par_iter()
        .enumerate()
        .map(|(i, t)| evaluate_window(model, t, mc, seed, i as u64))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(BboxMetrics::aggregate(&per)?)
}

/// The box model at `path` and, for the two-stream model, the odometry
/// model saved beside it.
fn load_models(path: &Path, streams: Streams) -> Result<(BboxModel, Option<OdoModel>)> {
    let model = Checkpoint::load(path)?.bbox_model(path)?;
    let odo = if streams == Streams::Two {
        let p = path.with_file_name(ODOMETRY_CHECKPOINT);
        Some(Checkpoint::load(&p)?.odometry_model(&p)?)
    } else {
        None
    };
    Ok((model, odo))
}

fn check_matches(c: &ExperimentConfig, model: &BboxModel, path: &Path) -> Result<()> {
    let variant = model.config.variant;
    let future = if model.config.future_odometry { "with" } else { "without" };
    if c.variant.network() != Some(variant) || c.streams.uses_future_odometry() != model.config.future_odometry {
        return Err(FseError::Usage(format!(
            "{} holds a {variant} model {future} future odometry, but {} with --streams {} was requested",
            path.display(),
            c.variant,
            c.streams
        )));
    }
    Ok(())
}

/// Rows and per-step rows of one evaluated entry.
#[derive(Default)]
pub struct Rows {
    pub rows: Vec<MetricsRow>,
    pub per_step: Vec<PerStepRow>,
}

impl Rows {
    fn push(&mut self, row: MetricsRow, boxes: Option<&BboxMetrics>, odo: Option<&OdoMetrics>) {
        let mut row = row;
        if let Some(b) = boxes {
            row = row.with_boxes(b);
        }
        if let Some(o) = odo {
            row = row.with_odometry(o);
        }
        self.per_step.extend(per_step_rows(&row, boxes, odo));
        self.rows.push(row);
    }
}

fn key(c: &ExperimentConfig, method: &str, streams: &str, visual: &str, subset: &str) -> MetricsRow {
    MetricsRow {
        method: method.into(),
        streams: streams.into(),
        visual: visual.into(),
        past: c.past,
        subset: subset.into(),
        seed: c.seed,
        config_hash: c.hash(),
        ..Default::default()
    }
}

/// Test odometry windows, one per scene and start frame: all and curved.
fn odometry_subsets(data: &Dataset, p: &Profile, m: usize, n: usize) -> (Vec<OdoTask>, Vec<OdoTask>) {
    let all = scene_odometry_windows(data.split(Split::Test), m, n);
    let curved = all.iter().filter(|t| is_curved(t, p.curved_threshold)).cloned().collect();
    (all, curved)
}

fn odometry_rows(rows: &mut Rows, c: &ExperimentConfig, data: &Dataset, profile: &Profile, method: &str, visual: &str, pred: OdoPredictor<'_>) -> Result<()> {
    let (all, curved) = odometry_subsets(data, profile, c.past, c.horizon);
    for (subset, tasks) in [("curved", &curved), ("all", &all)] {
        if tasks.is_empty() {
            println!("no {subset} odometry test windows; row skipped");
            continue;
        }
        let refs: Vec<&OdoTask> = tasks.iter().collect();
        let m = evaluate_odometry(pred, &refs)?;
        rows.push(key(c, method, "odometry", visual, subset), None, Some(&m));
    }
    Ok(())
}

fn fitted_odometry_kalman(data: &Dataset, p: &Profile, m: usize, n: usize) -> Result<OdoPredictor<'static>> {
    let val = scene_odometry_windows(data.split(Split::Val), m, n);
    let refs: Vec<&OdoTask> = val.iter().collect();
    Ok(OdoPredictor::Kalman(fit_kalman_odometry(&refs, p.kalman_per_decade)?))
}

fn box_tasks(data: &Dataset, split: Split, c: &ExperimentConfig, streams: Streams, odo: Option<&OdoModel>) -> Result<Vec<PredictionTask>> {
    Ok(stream_tasks(&split_windows(data, split, c.past, c.horizon), streams, odo)?)
}

fn kalman_box_metrics(data: &Dataset, c: &ExperimentConfig, p: &Profile) -> Result<BboxMetrics> {
    let val = box_tasks(data, Split::Val, c, Streams::One, None)?;
    let params = fit_kalman_boxes(&val, p.kalman_per_decade)?;
    Ok(evaluate_kalman_boxes(&box_tasks(data, Split::Test, c, Streams::One, None)?, params)?)
}

fn evaluate(a: &Common) -> Result<()> {
    let c = a.config()?;
    let profile = c.profile()?;
    let (data, _) = dataset(&c)?;
    let mut rows = Rows::default();
    match c.variant {
        ModelVariant::Kalman => {
            let m = kalman_box_metrics(&data, &c, &profile)?;
            rows.push(key(&c, "kalman", "none", "none", "all"), Some(&m), None);
            let pred = fitted_odometry_kalman(&data, &profile, c.past, c.horizon)?;
            odometry_rows(&mut rows, &c, &data, &profile, "kalman", "none", pred)?;
        }
        ModelVariant::Constant => {
            odometry_rows(&mut rows, &c, &data, &profile, "constant", "none", OdoPredictor::Constant)?;
        }
        _ => {
            let path = a.checkpoint_path(&c);
            let (model, odo) = load_models(&path, c.streams)?;
            check_matches(&c, &model, &path)?;
            let tasks = box_tasks(&data, Split::Test, &c, c.streams, odo.as_ref())?;
            let m = evaluate_model(&model, &tasks, c.mc_samples, eval_seed(c.seed))?;
            let visual = if odo.is_some() { "raster" } else { "none" };
            rows.push(key(&c, c.variant.name(), c.streams.name(), visual, "all"), Some(&m), None);
            if let Some(o) = &odo {
                odometry_rows(&mut rows, &c, &data, &profile, "lstm", "raster", OdoPredictor::Model(o))?;
            }
        }
    }
    write_csv(&c.out.join("metrics.csv"), &rows.rows)?;
    write_csv(&c.out.join("metrics_per_step.csv"), &rows.per_step)?;
    for r in &rows.rows {
        println!("{}", describe(r));
    }
    Ok(())
}

fn describe(r: &MetricsRow) -> String {
    let mut s = format!("{:<15} {:<8} {:<7} m={} {:<7} n={:<5}", r.method, r.streams, r.visual, r.past, r.subset, r.windows);
    let mut cell = |name: &str, v: Option<f64>| {
        if let Some(v) = v {
            s.push_str(&format!(" {name} {v:.4}"));
        }
    };
    cell("mse", r.mse);
    cell("nll", r.nll);
    cell("speed", r.speed_mse);
    cell("angle", r.angle_mse);
    cell("ue", r.epistemic);
    cell("ua", r.aleatoric);
    cell("spearman", r.spearman);
    s
}

/// Writes fig3.csv and calibration_summary.csv for `metrics` into `out`.
fn write_calibration(out: &Path, metrics: &BboxMetrics, bins: usize, hash: &str) -> Result<()> {
    if metrics.sequences.is_empty() {
        return Err(FseError::Usage("calibration needs a model that reports uncertainty".into()));
    }
    let reports = calibration_splits(&metrics.sequences, bins)?;
    write_csv(&out.join("fig3.csv"), &calibration_rows(&reports, hash))?;
    let summary = calibration_summary(&reports, hash);
    write_csv(&out.join("calibration_summary.csv"), &summary)?;
    for s in &summary {
        let rho = s.spearman.map_or("undefined".into(), |r| format!("{r:.4}"));
        println!("calibration {:<5} pairs {:<6} spearman {rho}", s.split, s.pairs);
    }
    Ok(())
}

fn calibration(a: &Common) -> Result<()> {
    let c = a.config()?;
    if c.variant.network().is_none() {
        return Err(FseError::Usage(format!("{} reports no uncertainty; calibration needs a network variant", c.variant)));
    }
    let profile = c.profile()?;
    let (data, _) = dataset(&c)?;
    let path = a.checkpoint_path(&c);
    let (model, odo) = load_models(&path, c.streams)?;
    check_matches(&c, &model, &path)?;
    let tasks = box_tasks(&data, Split::Test, &c, c.streams, odo.as_ref())?;
    let m = evaluate_model(&model, &tasks, c.mc_samples, eval_seed(c.seed))?;
    write_calibration(&c.out, &m, profile.calibration_bins, &c.hash())
}

fn gradcheck() -> Result<()> {
    let mut worst = 0.0f64;
    for (stream, r) in gradient_suite::run(0)? {
        println!("{stream}: {} coordinates, max relative error {:.3e}", r.coordinates, r.max_rel_error);
        for (name, e) in &r.per_param {
            println!("  {name:<24} {e:.3e}");
        }
        worst = worst.max(r.max_rel_error);
    }
    if worst < SUITE_TOLERANCE {
        println!("PASS (tolerance {SUITE_TOLERANCE:e})");
        Ok(())
    } else {
        Err(FseError::Check(format!("max relative error {worst:.3e} ≥ {SUITE_TOLERANCE:e}")))
    }
}

/// Everything `make-all` needs to train and evaluate one grid cell.
struct Grid<'a> {
    base: ExperimentConfig,
    profile: Profile,
    data: &'a Dataset,
    start: std::time::Instant,
}

impl Grid<'_> {
    fn log(&self, msg: &str) {
        println!("[{:7.1}s] {msg}", self.start.elapsed().as_secs_f64());
    }

    fn cell(&self, variant: ModelVariant, streams: Streams, past: usize) -> ExperimentConfig {
        ExperimentConfig { variant, streams, past, ..self.base.clone() }
    }

    fn train_box(&self, c: &ExperimentConfig, odo: Option<&OdoModel>) -> Result<BboxModel> {
        let mut p = self.profile.clone();
        p.train.past = c.past;
        let spec = BboxVariant { variant: c.variant.network().expect("network variant"), streams: c.streams, past: c.past };
        let (model, _) = train_bbox(self.data, spec, odo, &p, c.seed)?;
        Ok(model)
    }

    fn eval_box(&self, c: &ExperimentConfig, model: &BboxModel, odo: Option<&OdoModel>) -> Result<BboxMetrics> {
        let tasks = box_tasks(self.data, Split::Test, c, c.streams, odo)?;
        evaluate_model(model, &tasks, c.mc_samples, eval_seed(c.seed))
    }

    /// Restricts per-window metrics to scenes with ego-motion.
    fn moving(&self, c: &ExperimentConfig, model: &BboxModel, odo: Option<&OdoModel>) -> Result<BboxMetrics> {
        let windows: Vec<_> = split_windows(self.data, Split::Test, c.past, c.horizon)
            .into_iter()
            .filter(|w| w.archetype.non_trivial())
            .collect();
        let tasks = stream_tasks(&windows, c.streams, odo)?;
        evaluate_model(model, &tasks, c.mc_samples, eval_seed(c.seed))
    }
}

fn make_all(a: &Common) -> Result<()> {
    let base = a.config()?;
    let out = base.out.clone();
    let start = std::time::Instant::now();
    let data = match &base.dataset {
        Some(dir) => load_dataset(dir)?.0,
        None => {
            let (d, m) = simulate_to(&out.join("dataset"), &SimConfig::default(), base.seed, base.scale)?;
            println!("{}", m.summary());
            d
        }
    };
    let grid = Grid { profile: base.profile()?, base, data: &data, start };
    let pasts = [4, 6, 8];

    // Odometry stream, shared by the odometry table and the two-stream models.
    let (odo_raster, _) = train_odometry(&data, true, &grid.profile, grid.base.seed)?;
    grid.log("odometry stream with raster trained");
    let (odo_plain, _) = train_odometry(&data, false, &grid.profile, grid.base.seed)?;
    grid.log("odometry stream without raster trained");

    let mut t1 = Rows::default();
    let mut one_stream = Vec::new();
    for &m in &pasts {
        let c = grid.cell(ModelVariant::Kalman, Streams::One, m);
        t1.push(key(&c, "kalman", "none", "none", "all"), Some(&kalman_box_metrics(&data, &c, &grid.profile)?), None);
        for v in [ModelVariant::Lstm, ModelVariant::LstmAleatoric, ModelVariant::LstmBayesian] {
            let c = grid.cell(v, Streams::One, m);
            let model = grid.train_box(&c, None)?;
            let metrics = grid.eval_box(&c, &model, None)?;
            t1.push(key(&c, v.name(), "one", "none", "all"), Some(&metrics), None);
            if v == ModelVariant::LstmBayesian {
                one_stream.push((m, metrics));
            }
            grid.log(&format!("table 1: {v} m={m}"));
        }
        let c = grid.cell(ModelVariant::LstmBayesian, Streams::Oracle, m);
        let model = grid.train_box(&c, None)?;
        t1.push(key(&c, "lstm-bayesian", "oracle", "none", "all"), Some(&grid.eval_box(&c, &model, None)?), None);
        grid.log(&format!("table 1: oracle m={m}"));
    }
    write_csv(&out.join("table1.csv"), &t1.rows)?;

    let mut t3 = Rows::default();
    let c = grid.cell(ModelVariant::Constant, Streams::One, 8);
    odometry_rows(&mut t3, &c, &data, &grid.profile, "constant", "none", OdoPredictor::Constant)?;
    let kalman = fitted_odometry_kalman(&data, &grid.profile, c.past, c.horizon)?;
    odometry_rows(&mut t3, &c, &data, &grid.profile, "kalman", "none", kalman)?;
    odometry_rows(&mut t3, &c, &data, &grid.profile, "lstm", "none", OdoPredictor::Model(&odo_plain))?;
    odometry_rows(&mut t3, &c, &data, &grid.profile, "lstm", "raster", OdoPredictor::Model(&odo_raster))?;
    write_csv(&out.join("table3.csv"), &t3.rows)?;
    grid.log("table 3 written");

    let mut t4 = Rows::default();
    let mut per_step = t1.per_step;
    per_step.extend(t3.per_step);
    for m in [4, 8] {
        let c = grid.cell(ModelVariant::Kalman, Streams::One, m);
        t4.push(key(&c, "kalman", "none", "none", "all"), Some(&kalman_box_metrics(&data, &c, &grid.profile)?), None);
        let c = grid.cell(ModelVariant::LstmBayesian, Streams::One, m);
        let one = &one_stream.iter().find(|(p, _)| *p == m).expect("trained in table 1").1;
        t4.push(key(&c, "lstm-bayesian", "one", "none", "all"), Some(one), None);
        let c = grid.cell(ModelVariant::LstmBayesian, Streams::Two, m);
        let two = grid.train_box(&c, Some(&odo_raster))?;
        let metrics = grid.eval_box(&c, &two, Some(&odo_raster))?;
        t4.push(key(&c, "lstm-bayesian", "two", "raster", "all"), Some(&metrics), None);
        let moving = grid.moving(&c, &two, Some(&odo_raster))?;
        t4.push(key(&c, "lstm-bayesian", "two", "raster", "non-trivial"), Some(&moving), None);
        grid.log(&format!("table 4: two-stream m={m}"));
        if m == 8 {
            let hash = c.hash();
            write_calibration(&out, &metrics, grid.profile.calibration_bins, &hash)?;
            if let Some(row) = t4.rows.iter_mut().rev().find(|r| r.subset == "all") {
                let reports = calibration_splits(&metrics.sequences, grid.profile.calibration_bins)?;
                row.spearman = reports.first().and_then(|r| r.spearman);
            }
        }
    }
    write_csv(&out.join("table4.csv"), &t4.rows)?;
    per_step.extend(t4.per_step);
    write_csv(&out.join("per_step.csv"), &per_step)?;
    for r in t1.rows.iter().chain(&t3.rows).chain(&t4.rows) {
        println!("{}", describe(r));
    }
    grid.log(&format!("done; reports in {}", out.display()));
    Ok(())
}
