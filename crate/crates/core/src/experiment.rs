//! The comparison grid: windows over a dataset, training of every model
//! variant, and the metrics behind the box and odometry tables.

use alloc::format;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::{self, grid_search, log_grid, KalmanParams};
use crate::bbox::{BboxConfig, BboxModel, BoundingBox, PredictionTask, Streams, Variant};
use crate::error::{Error, Result};
use crate::odometry::{augment_dataset, cnn::CnnConfig, OdoConfig, OdoModel, OdoTask, OdometryState, SPEED_SCALE, STEERING_SCALE};
use crate::simulator::{Archetype, Dataset, Split, Track};
use crate::trainer::{curriculum_train, odometry_windows, scene_odometry_windows, sliding_windows, StageReport, TrainConfig};
use crate::uncertainty::{moment_match, mse_per_step, nll_per_step, DensityFrame, SequenceErrors};

/// Model sizes, training schedule and evaluation settings of one run of the grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    pub bbox_embedding: usize,
    pub bbox_hidden: usize,
    pub odo_hidden: usize,
    pub cnn: CnnConfig,
    pub train: TrainConfig,
    /// Grid points per decade of the Kalman (q, r) search.
    pub kalman_per_decade: usize,
    /// Degrees of future steering that make an odometry window "curved".
    pub curved_threshold: f64,
    pub calibration_bins: usize,
}

impl Profile {
    /// Small networks and a short schedule that fit a single CPU core.
    pub fn desk() -> Self {
        Profile {
            bbox_embedding: 16,
            bbox_hidden: 32,
            odo_hidden: 32,
            cnn: CnnConfig::desk(),
            train: TrainConfig {
                epochs_per_stage: 4,
                mc_samples: 30,
                ..TrainConfig::default()
            },
            kalman_per_decade: 2,
            curved_threshold: 2.0,
            calibration_bins: 10,
        }
    }

    /// Seconds-long smoke-test profile.
    pub fn tiny() -> Self {
        Profile {
            bbox_embedding: 4,
            bbox_hidden: 6,
            odo_hidden: 4,
            cnn: CnnConfig {
                resolution: 32,
                channels: alloc::vec![2],
                pool_every: 1,
                dense: alloc::vec![4],
                output: 3,
            },
            train: TrainConfig {
                epochs_per_stage: 1,
                mc_samples: 3,
                max_windows: 64,
                past: 4,
                horizon: 6,
                horizons: alloc::vec![3, 6],
                ..TrainConfig::default()
            },
            kalman_per_decade: 1,
            curved_threshold: 2.0,
            calibration_bins: 4,
        }
    }

    /// Layer widths of the original architecture.
    pub fn full() -> Self {
        Profile {
            bbox_embedding: 64,
            bbox_hidden: 128,
            odo_hidden: 128,
            cnn: CnnConfig::paper_scale(),
            train: TrainConfig::default(),
            kalman_per_decade: 4,
            curved_threshold: 2.0,
            calibration_bins: 10,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.cnn.validate()?;
        if self.bbox_embedding == 0 || self.bbox_hidden == 0 || self.odo_hidden == 0 {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        if self.kalman_per_decade == 0 || self.calibration_bins == 0 {
            return Err(Error::Config("Kalman grid density and calibration bins must be positive".into()));
        }
        if !(self.curved_threshold >= 0.0) {
            return Err(Error::Config(format!("curved threshold {} must be ≥ 0", self.curved_threshold)));
        }
        Ok(())
    }

    pub fn bbox_config(&self, variant: Variant, streams: Streams) -> BboxConfig {
        BboxConfig {
            embedding: self.bbox_embedding,
            hidden: self.bbox_hidden,
            variant,
            keep_prob: self.train.keep_prob,
            lambda: self.train.lambda,
            ..BboxConfig::default()
        }
        .with_streams(streams)
    }

    pub fn odo_config(&self, visual: bool) -> OdoConfig {
        OdoConfig {
            hidden: self.odo_hidden,
            visual: visual.then(|| self.cnn.clone()),
            anchored: true,
        }
    }
}

/// One box window with the odometry window sharing its frames.
#[derive(Clone, Debug, PartialEq)]
pub struct Window {
    pub scene_id: u64,
    pub ped_id: usize,
    pub archetype: Archetype,
    pub task: PredictionTask,
    pub odo: OdoTask,
}

/// Longest conditioning length of the grid. Shorter histories skip the
/// first windows of a track so every length predicts the same frames.
pub const ALIGNED_PAST: usize = 8;

pub fn track_windows(track: &Track, m: usize, n: usize) -> Vec<Window> {
    sliding_windows(track, m, n)
        .into_iter()
        .zip(odometry_windows(track, m, n))
        .skip(ALIGNED_PAST.saturating_sub(m))
        .map(|(task, odo)| Window {
            scene_id: track.scene_id,
            ped_id: track.ped_id,
            archetype: track.archetype,
            task,
            odo,
        })
        .collect()
}

pub fn split_windows(dataset: &Dataset, split: Split, m: usize, n: usize) -> Vec<Window> {
    dataset.split(split).flat_map(|t| track_windows(t, m, n)).collect()
}

/// Any future steering magnitude reaching `threshold` degrees.
pub fn is_curved(task: &OdoTask, threshold: f64) -> bool {
    task.future
        .iter()
        .flatten()
        .any(|o| libm::fabs(o.steering) >= threshold)
}

fn odometry_batches(model: &OdoModel, tasks: &[&OdoTask], batch: usize) -> Result<Vec<Vec<OdometryState>>> {
    let mut out = Vec::with_capacity(tasks.len());
    for chunk in tasks.chunks(batch.max(1)) {
        out.extend(model.predict(chunk)?);
    }
    Ok(out)
}

/// Box tasks as the given stream configuration sees them: the two-stream
/// model replaces the true future odometry by the odometry stream's
/// prediction, the one-stream model drops it.
pub fn stream_tasks(windows: &[Window], streams: Streams, odo: Option<&OdoModel>) -> Result<Vec<PredictionTask>> {
    match streams {
        Streams::Oracle => Ok(windows.iter().map(|w| w.task.clone()).collect()),
        Streams::One => Ok(windows
            .iter()
            .map(|w| PredictionTask {
                future_odometry: Vec::new(),
                ..w.task.clone()
            })
            .collect()),
        Streams::Two => {
            let model = odo.ok_or_else(|| Error::Config("the two-stream model needs an odometry model".into()))?;
            let odo_tasks: Vec<&OdoTask> = windows.iter().map(|w| &w.odo).collect();
            let predicted = odometry_batches(model, &odo_tasks, 256)?;
            Ok(windows
                .iter()
                .zip(predicted)
                .map(|(w, future_odometry)| PredictionTask {
                    future_odometry,
                    ..w.task.clone()
                })
                .collect())
        }
    }
}

/// Curriculum-trains the odometry stream on the training scenes (one
/// window per scene and start frame, plus left/right mirrored copies).
pub fn train_odometry(dataset: &Dataset, visual: bool, profile: &Profile, seed: u64) -> Result<(OdoModel, Vec<StageReport>)> {
    profile.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = OdoModel::new(profile.odo_config(visual), &mut rng)?;
    let config = TrainConfig {
        seed,
        ..profile.train.clone()
    };
    let m = config.past;
    let reports = curriculum_train(
        &mut model,
        |h| {
            let train = augment_dataset(&scene_odometry_windows(dataset.split(Split::Train), m, h));
            let val = scene_odometry_windows(dataset.split(Split::Val), m, h);
            Ok((train, val))
        },
        &config,
    )?;
    Ok((model, reports))
}

/// What distinguishes the box models of the grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BboxVariant {
    pub variant: Variant,
    pub streams: Streams,
    pub past: usize,
}

/// Curriculum-trains a box model; the two-stream model trains on the
/// future odometry predicted by the (frozen) `odo` model.
pub fn train_bbox(
    dataset: &Dataset,
    spec: BboxVariant,
    odo: Option<&OdoModel>,
    profile: &Profile,
    seed: u64,
) -> Result<(BboxModel, Vec<StageReport>)> {
    profile.validate()?;
    if spec.streams == Streams::Two && odo.is_none() {
        return Err(Error::Config("the two-stream model needs a trained odometry model".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = BboxModel::new(profile.bbox_config(spec.variant, spec.streams), &mut rng)?;
    let config = TrainConfig {
        seed,
        past: spec.past,
        ..profile.train.clone()
    };
    let reports = curriculum_train(
        &mut model,
        |h| {
            let train = split_windows(dataset, Split::Train, spec.past, h);
            let val = split_windows(dataset, Split::Val, spec.past, h);
            Ok((stream_tasks(&train, spec.streams, odo)?, stream_tasks(&val, spec.streams, odo)?))
        },
        &config,
    )?;
    Ok((model, reports))
}

/// Errors of one box window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowMetrics {
    pub mse: Vec<f64>,
    pub nll: Option<Vec<f64>>,
    pub epistemic: Option<Vec<f64>>,
    pub aleatoric: Option<Vec<f64>>,
    /// Squared error per step, averaged over coordinates.
    pub sq_error: Vec<f64>,
    pub total: Option<Vec<f64>>,
}

/// Evaluates one window with `mc_samples` Monte-Carlo passes (one pass for
/// the variants without dropout, whose passes would all coincide). Window
/// `index` gets its own random stream so evaluation order is irrelevant.
pub fn evaluate_window(model: &BboxModel, task: &PredictionTask, mc_samples: usize, seed: u64, index: u64) -> Result<WindowMetrics> {
    let truth = task
        .future_boxes
        .as_ref()
        .ok_or_else(|| Error::Contract("evaluation window without future boxes".into()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let t = if model.config.effective_keep_prob() < 1.0 { mc_samples } else { 1 };
    let samples = model.sample_predictive(task, t, &mut rng)?;
    let u = moment_match(&samples)?;
    let mean = samples.mean_trajectory();
    let mse = mse_per_step(&mean, truth)?;
    let frame = DensityFrame::Normalized {
        width: model.config.image_width,
        height: model.config.image_height,
    };
    Ok(WindowMetrics {
        nll: Some(nll_per_step(&samples, truth, frame)?),
        sq_error: mse.clone(),
        mse,
        epistemic: Some(u.epistemic),
        aleatoric: Some(u.aleatoric),
        total: Some(u.total),
    })
}

pub fn kalman_window(task: &PredictionTask, params: KalmanParams) -> Result<WindowMetrics> {
    let truth = task
        .future_boxes
        .as_ref()
        .ok_or_else(|| Error::Contract("evaluation window without future boxes".into()))?;
    let pred = baselines::kalman_predict_boxes(&task.past_boxes, task.horizon, params)?;
    let mse = mse_per_step(&pred, truth)?;
    Ok(WindowMetrics {
        sq_error: mse.clone(),
        mse,
        nll: None,
        epistemic: None,
        aleatoric: None,
        total: None,
    })
}

/// Window metrics averaged over a test set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BboxMetrics {
    pub windows: usize,
    pub mse_per_step: Vec<f64>,
    pub nll_per_step: Option<Vec<f64>>,
    pub epistemic: Option<f64>,
    pub aleatoric: Option<f64>,
    pub sequences: Vec<SequenceErrors>,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len().max(1) as f64
}

fn mean_per_step<'a>(rows: impl Iterator<Item = &'a Vec<f64>>, n: usize) -> Vec<f64> {
    let mut acc = alloc::vec![0.0; n];
    let mut count = 0usize;
    for r in rows {
        for (a, v) in acc.iter_mut().zip(r) {
            *a += v;
        }
        count += 1;
    }
    acc.iter().map(|a| a / count.max(1) as f64).collect()
}

impl BboxMetrics {
    pub fn aggregate(windows: &[WindowMetrics]) -> Result<Self> {
        let first = windows
            .first()
            .ok_or_else(|| Error::Contract("no windows to aggregate".into()))?;
        let n = first.mse.len();
        if windows.iter().any(|w| w.mse.len() != n) {
            return Err(Error::Contract("windows of different horizons".into()));
        }
        let all_some = |f: fn(&WindowMetrics) -> Option<&Vec<f64>>| windows.iter().all(|w| f(w).is_some());
        let nll_per_step = all_some(|w| w.nll.as_ref()).then(|| mean_per_step(windows.iter().map(|w| w.nll.as_ref().unwrap()), n));
        let avg = |f: fn(&WindowMetrics) -> Option<&Vec<f64>>| {
            all_some(f).then(|| mean(&windows.iter().map(|w| mean(f(w).unwrap())).collect::<Vec<_>>()))
        };
        let sequences = if all_some(|w| w.total.as_ref()) {
            windows
                .iter()
                .map(|w| SequenceErrors {
                    total: w.total.clone().unwrap(),
                    sq_error: w.sq_error.clone(),
                })
                .collect()
        } else {
            Vec::new()
        };
        Ok(BboxMetrics {
            windows: windows.len(),
            mse_per_step: mean_per_step(windows.iter().map(|w| &w.mse), n),
            nll_per_step,
            epistemic: avg(|w| w.epistemic.as_ref()),
            aleatoric: avg(|w| w.aleatoric.as_ref()),
            sequences,
        })
    }

    pub fn mse(&self) -> f64 {
        mean(&self.mse_per_step)
    }

    pub fn nll(&self) -> Option<f64> {
        self.nll_per_step.as_deref().map(mean)
    }
}

pub fn evaluate_bbox(model: &BboxModel, tasks: &[PredictionTask], mc_samples: usize, seed: u64) -> Result<BboxMetrics> {
    let per: Vec<WindowMetrics> = tasks
        .iter()
        .enumerate()
        .map(|(i, t)| evaluate_window(model, t, mc_samples, seed, i as u64))
        .collect::<Result<_>>()?;
    BboxMetrics::aggregate(&per)
}

pub fn evaluate_kalman_boxes(tasks: &[PredictionTask], params: KalmanParams) -> Result<BboxMetrics> {
    let per: Vec<WindowMetrics> = tasks.iter().map(|t| kalman_window(t, params)).collect::<Result<_>>()?;
    BboxMetrics::aggregate(&per)
}

/// Kalman noise parameters minimizing box MSE on `val`.
pub fn fit_kalman_boxes(val: &[PredictionTask], per_decade: usize) -> Result<KalmanParams> {
    if val.is_empty() {
        return Err(Error::Contract("no validation windows to fit the Kalman filter".into()));
    }
    let grid = log_grid(1e-6, 1.0, per_decade)?;
    Ok(grid_search(&grid, |p| Ok(evaluate_kalman_boxes(val, p)?.mse()))?.0)
}

/// Odometry predictors compared on the odometry table.
#[derive(Clone, Copy, Debug)]
pub enum OdoPredictor<'a> {
    Model(&'a OdoModel),
    Kalman(KalmanParams),
    Constant,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OdoMetrics {
    pub windows: usize,
    pub speed_per_step: Vec<f64>,
    pub angle_per_step: Vec<f64>,
}

impl OdoMetrics {
    pub fn speed(&self) -> f64 {
        mean(&self.speed_per_step)
    }

    pub fn angle(&self) -> f64 {
        mean(&self.angle_per_step)
    }
}

pub fn evaluate_odometry(predictor: OdoPredictor<'_>, tasks: &[&OdoTask]) -> Result<OdoMetrics> {
    let first = tasks
        .first()
        .ok_or_else(|| Error::Contract("no odometry windows to evaluate".into()))?;
    let n = first.horizon;
    let preds = match predictor {
        OdoPredictor::Model(m) => odometry_batches(m, tasks, 256)?,
        OdoPredictor::Kalman(p) => tasks
            .iter()
            .map(|t| baselines::kalman_predict_odometry(&t.past, t.horizon, p))
            .collect::<Result<_>>()?,
        OdoPredictor::Constant => tasks
            .iter()
            .map(|t| baselines::constant_odometry(&t.past, t.horizon))
            .collect::<Result<_>>()?,
    };
    let mut speed = alloc::vec![0.0; n];
    let mut angle = alloc::vec![0.0; n];
    for (t, p) in tasks.iter().zip(&preds) {
        let truth = t
            .future
            .as_ref()
            .ok_or_else(|| Error::Contract("evaluation window without future odometry".into()))?;
        if truth.len() != n || p.len() != n {
            return Err(Error::Contract("odometry windows of different horizons".into()));
        }
        for j in 0..n {
            let ds = p[j].speed - truth[j].speed;
            let da = p[j].steering - truth[j].steering;
            speed[j] += ds * ds;
            angle[j] += da * da;
        }
    }
    let k = tasks.len() as f64;
    Ok(OdoMetrics {
        windows: tasks.len(),
        speed_per_step: speed.iter().map(|s| s / k).collect(),
        angle_per_step: angle.iter().map(|a| a / k).collect(),
    })
}

/// Kalman noise parameters minimizing the scale-normalized odometry MSE on `val`.
pub fn fit_kalman_odometry(val: &[&OdoTask], per_decade: usize) -> Result<KalmanParams> {
    let grid = log_grid(1e-6, 1.0, per_decade)?;
    let score = |p| {
        let m = evaluate_odometry(OdoPredictor::Kalman(p), val)?;
        Ok(m.speed() / (SPEED_SCALE * SPEED_SCALE) + m.angle() / (STEERING_SCALE * STEERING_SCALE))
    };
    Ok(grid_search(&grid, score)?.0)
}

/// Box predictions of the Kalman filter, for callers that need the boxes.
pub fn kalman_boxes(task: &PredictionTask, params: KalmanParams) -> Result<Vec<BoundingBox>> {
    baselines::kalman_predict_boxes(&task.past_boxes, task.horizon, params)
}

/// Everything the trend checks compare, for one seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrendResults {
    pub seed: u64,
    /// One-stream models with the default conditioning length, whole test split.
    pub homoscedastic: BboxMetrics,
    pub aleatoric: BboxMetrics,
    pub bayesian: BboxMetrics,
    /// Bayesian one-stream model with the short conditioning length.
    pub bayesian_short: BboxMetrics,
    pub kalman: BboxMetrics,
    /// Bayesian models on scenes with non-trivial ego-motion.
    pub one_stream: BboxMetrics,
    pub two_stream: BboxMetrics,
    pub oracle: BboxMetrics,
    /// Two-stream model over the whole test split, for calibration.
    pub two_stream_all: BboxMetrics,
    /// Odometry predictors on the curved test windows.
    pub odo_raster: OdoMetrics,
    pub odo_plain: OdoMetrics,
    pub odo_kalman: OdoMetrics,
    pub odo_constant: OdoMetrics,
}

/// Conditioning length of the short-history ablation.
pub const SHORT_PAST: usize = 4;

fn subset(per: &[WindowMetrics], windows: &[Window], keep: impl Fn(&Window) -> bool) -> Result<BboxMetrics> {
    let picked: Vec<WindowMetrics> = per
        .iter()
        .zip(windows)
        .filter(|(_, w)| keep(w))
        .map(|(m, _)| m.clone())
        .collect();
    BboxMetrics::aggregate(&picked)
}

fn evaluate_all(model: &BboxModel, tasks: &[PredictionTask], mc: usize, seed: u64) -> Result<Vec<WindowMetrics>> {
    tasks
        .iter()
        .enumerate()
        .map(|(i, t)| evaluate_window(model, t, mc, seed, i as u64))
        .collect()
}

/// Trains and evaluates every model the trend checks need on one seed;
/// `log` receives a line per finished step.
pub fn run_trend_grid(dataset: &Dataset, profile: &Profile, seed: u64, mut log: impl FnMut(&str)) -> Result<TrendResults> {
    profile.validate()?;
    let (m, n) = (profile.train.past, profile.train.horizon);
    let mc = profile.train.mc_samples;
    let eval_seed = seed ^ 0x5eed;
    let test = split_windows(dataset, Split::Test, m, n);
    let test_short = split_windows(dataset, Split::Test, SHORT_PAST, n);
    if test.is_empty() || test_short.is_empty() {
        return Err(Error::Contract("test split has no windows".into()));
    }

    let (odo_raster, _) = train_odometry(dataset, true, profile, seed)?;
    log("odometry with raster trained");
    let (odo_plain, _) = train_odometry(dataset, false, profile, seed)?;
    log("odometry without raster trained");

    let one = stream_tasks(&test, Streams::One, None)?;
    let mut by_variant = Vec::new();
    for variant in Variant::ALL {
        let spec = BboxVariant { variant, streams: Streams::One, past: m };
        let (model, _) = train_bbox(dataset, spec, None, profile, seed)?;
        by_variant.push(evaluate_all(&model, &one, mc, eval_seed)?);
        log(&format!("{variant} one-stream trained and evaluated"));
    }
    let bayes_one = by_variant.pop().unwrap();
    let aleatoric = by_variant.pop().unwrap();
    let homoscedastic = by_variant.pop().unwrap();

    let spec = BboxVariant { variant: Variant::Bayesian, streams: Streams::One, past: SHORT_PAST };
    let (short, _) = train_bbox(dataset, spec, None, profile, seed)?;
    let bayesian_short = evaluate_bbox(&short, &stream_tasks(&test_short, Streams::One, None)?, mc, eval_seed)?;
    log("short-history model trained and evaluated");

    let spec = BboxVariant { variant: Variant::Bayesian, streams: Streams::Oracle, past: m };
    let (oracle, _) = train_bbox(dataset, spec, None, profile, seed)?;
    let oracle_per = evaluate_all(&oracle, &stream_tasks(&test, Streams::Oracle, None)?, mc, eval_seed)?;
    log("oracle-odometry model trained and evaluated");

    let spec = BboxVariant { variant: Variant::Bayesian, streams: Streams::Two, past: m };
    let (two, _) = train_bbox(dataset, spec, Some(&odo_raster), profile, seed)?;
    let two_per = evaluate_all(&two, &stream_tasks(&test, Streams::Two, Some(&odo_raster))?, mc, eval_seed)?;
    log("two-stream model trained and evaluated");

    let val = stream_tasks(&split_windows(dataset, Split::Val, m, n), Streams::One, None)?;
    let kalman = evaluate_kalman_boxes(&one, fit_kalman_boxes(&val, profile.kalman_per_decade)?)?;

    let moving = |w: &Window| w.archetype.non_trivial();
    let odo_test = scene_odometry_windows(dataset.split(Split::Test), m, n);
    let curved: Vec<&OdoTask> = odo_test.iter().filter(|t| is_curved(t, profile.curved_threshold)).collect();
    let odo_val = scene_odometry_windows(dataset.split(Split::Val), m, n);
    let odo_val: Vec<&OdoTask> = odo_val.iter().collect();
    let kp = fit_kalman_odometry(&odo_val, profile.kalman_per_decade)?;
    log("baselines fitted");

    Ok(TrendResults {
        seed,
        homoscedastic: BboxMetrics::aggregate(&homoscedastic)?,
        aleatoric: BboxMetrics::aggregate(&aleatoric)?,
        bayesian: BboxMetrics::aggregate(&bayes_one)?,
        bayesian_short,
        kalman,
        one_stream: subset(&bayes_one, &test, moving)?,
        two_stream: subset(&two_per, &test, moving)?,
        oracle: subset(&oracle_per, &test, moving)?,
        two_stream_all: BboxMetrics::aggregate(&two_per)?,
        odo_raster: evaluate_odometry(OdoPredictor::Model(&odo_raster), &curved)?,
        odo_plain: evaluate_odometry(OdoPredictor::Model(&odo_plain), &curved)?,
        odo_kalman: evaluate_odometry(OdoPredictor::Kalman(kp), &curved)?,
        odo_constant: evaluate_odometry(OdoPredictor::Constant, &curved)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::{generate_dataset, SimConfig};

    fn dataset() -> Dataset {
        generate_dataset(&SimConfig::default(), 5, 200).unwrap()
    }

    #[test]
    fn windows_pair_boxes_with_odometry() {
        let d = dataset();
        let w = split_windows(&d, Split::Test, 4, 6);
        assert!(!w.is_empty());
        for x in &w {
            assert_eq!(x.task.past_odometry, x.odo.past);
            assert_eq!(Some(&x.task.future_odometry), x.odo.future.as_ref());
        }
    }

    #[test]
    fn every_history_length_predicts_the_same_frames() {
        let d = dataset();
        let futures = |m| -> Vec<_> {
            split_windows(&d, Split::Test, m, 6)
                .into_iter()
                .map(|w| (w.scene_id, w.ped_id, w.task.future_boxes))
                .collect()
        };
        let long = futures(8);
        assert!(!long.is_empty());
        assert_eq!(futures(4), long);
        assert_eq!(futures(6), long);
    }

    #[test]
    fn stream_tasks_follow_the_stream() {
        let d = dataset();
        let w = split_windows(&d, Split::Val, 4, 6);
        let one = stream_tasks(&w, Streams::One, None).unwrap();
        assert!(one.iter().all(|t| t.future_odometry.is_empty()));
        let oracle = stream_tasks(&w, Streams::Oracle, None).unwrap();
        assert_eq!(oracle[0], w[0].task);
        assert!(stream_tasks(&w, Streams::Two, None).is_err());
        let odo = OdoModel::new(Profile::tiny().odo_config(true), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let two = stream_tasks(&w, Streams::Two, Some(&odo)).unwrap();
        assert!(two.iter().all(|t| t.future_odometry.len() == 6));
        assert_ne!(two[0].future_odometry, w[0].task.future_odometry);
    }

    #[test]
    fn grid_trains_and_evaluates_deterministically() {
        let d = dataset();
        let p = Profile::tiny();
        let (odo, r) = train_odometry(&d, true, &p, 3).unwrap();
        assert_eq!(r.len(), 2);
        let spec = BboxVariant {
            variant: Variant::Bayesian,
            streams: Streams::Two,
            past: 4,
        };
        let (a, _) = train_bbox(&d, spec, Some(&odo), &p, 3).unwrap();
        let (b, _) = train_bbox(&d, spec, Some(&odo), &p, 3).unwrap();
        assert_eq!(a.params, b.params);
        let test = stream_tasks(&split_windows(&d, Split::Test, 4, 6), Streams::Two, Some(&odo)).unwrap();
        let m1 = evaluate_bbox(&a, &test, 3, 9).unwrap();
        let m2 = evaluate_bbox(&a, &test, 3, 9).unwrap();
        assert_eq!(m1, m2);
        assert_eq!(m1.mse_per_step.len(), 6);
        assert_eq!(m1.sequences.len(), test.len());
        assert!(m1.nll().unwrap().is_finite() && m1.epistemic.unwrap() >= 0.0);
        assert!(train_bbox(&d, spec, None, &p, 3).is_err());
    }

    #[test]
    fn window_order_does_not_change_metrics() {
        let d = dataset();
        let p = Profile::tiny();
        let model = BboxModel::new(p.bbox_config(Variant::Bayesian, Streams::One), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let tasks = stream_tasks(&split_windows(&d, Split::Test, 4, 6), Streams::One, None).unwrap();
        let fwd = evaluate_window(&model, &tasks[2], 5, 4, 2).unwrap();
        let again = evaluate_window(&model, &tasks[2], 5, 4, 2).unwrap();
        assert_eq!(fwd, again);
        let other = evaluate_window(&model, &tasks[2], 5, 4, 3).unwrap();
        assert_ne!(fwd.nll, other.nll);
    }

    #[test]
    fn baselines_on_the_grid() {
        let d = dataset();
        let val = stream_tasks(&split_windows(&d, Split::Val, 4, 6), Streams::One, None).unwrap();
        let kp = fit_kalman_boxes(&val, 1).unwrap();
        let default = evaluate_kalman_boxes(&val, KalmanParams::default()).unwrap().mse();
        assert!(evaluate_kalman_boxes(&val, kp).unwrap().mse() <= default);
        let w = split_windows(&d, Split::Test, 4, 6);
        let odo: Vec<&OdoTask> = w.iter().map(|x| &x.odo).collect();
        let c = evaluate_odometry(OdoPredictor::Constant, &odo).unwrap();
        let k = evaluate_odometry(OdoPredictor::Kalman(fit_kalman_odometry(&odo, 1).unwrap()), &odo).unwrap();
        assert_eq!(c.speed_per_step.len(), 6);
        assert!(c.speed().is_finite() && k.angle().is_finite());
        assert!(evaluate_odometry(OdoPredictor::Constant, &[]).is_err());
    }

    #[test]
    fn curved_windows() {
        let mut t = OdoTask {
            past: alloc::vec![OdometryState::new(5.0, 0.0)],
            raster: None,
            future: Some(alloc::vec![OdometryState::new(5.0, 0.5), OdometryState::new(5.0, -2.5)]),
            horizon: 2,
        };
        assert!(is_curved(&t, 2.0));
        assert!(!is_curved(&t, 3.0));
        t.future = None;
        assert!(!is_curved(&t, 0.0));
    }
}
