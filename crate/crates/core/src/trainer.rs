//! ADAM, sliding-window instances and curriculum training over horizons.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bbox::{BboxModel, PredictionTask, DEFAULT_MC_SAMPLES};
use crate::error::{Error, Result};
use crate::numerics::{Array, Gradients, ParamSet};
use crate::odometry::{OdoModel, OdoTask};
use crate::recurrent::{sample_mask_set, DEFAULT_KEEP_PROB};
use crate::simulator::Track;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub t: u64,
    pub m: ParamSet,
    pub v: ParamSet,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &ParamSet) -> Self {
        let mut zeros = ParamSet::new();
        for (k, a) in params.iter() {
            zeros.insert(k, Array::zeros(a.shape()));
        }
        AdamState {
            config,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }
}

/// Bias-corrected ADAM update. Parameters without a gradient entry are
/// left untouched.
pub fn adam_step(params: &mut ParamSet, grads: &Gradients, state: &mut AdamState) -> Result<()> {
    for (name, g) in grads.iter() {
        let p = params.get(name)?;
        if p.shape() != g.shape() || state.m.get(name)?.shape() != g.shape() {
            return Err(Error::dim("adam_step", p.shape(), g.shape()));
        }
    }
    state.t += 1;
    let AdamConfig { lr, beta1, beta2, eps } = state.config;
    let c1 = 1.0 - libm::pow(beta1, state.t as f64);
    let c2 = 1.0 - libm::pow(beta2, state.t as f64);
    for (name, g) in grads.iter() {
        let m = state.m.get_mut(name).unwrap().values_mut();
        let v = state.v.get_mut(name).unwrap().values_mut();
        let p = params.get_mut(name).unwrap().values_mut();
        for (((p, m), v), g) in p.iter_mut().zip(m).zip(v).zip(g.values()) {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (libm::sqrt(v_hat) + eps);
        }
    }
    Ok(())
}

/// Number of windows of length `m + n` in a track of length `len`.
pub fn window_count(len: usize, m: usize, n: usize) -> usize {
    (len + 1).saturating_sub(m + n)
}

/// Every contiguous `m + n` window of the track's noisy boxes, with the
/// true future odometry attached.
pub fn sliding_windows(track: &Track, m: usize, n: usize) -> Vec<PredictionTask> {
    if m == 0 || n == 0 {
        return Vec::new();
    }
    let f = &track.frames;
    (0..window_count(f.len(), m, n))
        .map(|s| PredictionTask {
            past_boxes: f[s..s + m].iter().map(|x| x.box_noisy).collect(),
            past_odometry: f[s..s + m].iter().map(|x| x.odometry()).collect(),
            future_odometry: f[s + m..s + m + n].iter().map(|x| x.odometry()).collect(),
            future_boxes: Some(f[s + m..s + m + n].iter().map(|x| x.box_noisy).collect()),
            horizon: n,
        })
        .collect()
}

/// Odometry windows of the track, with the raster at the last
/// conditioning frame.
pub fn odometry_windows(track: &Track, m: usize, n: usize) -> Vec<OdoTask> {
    if m == 0 || n == 0 {
        return Vec::new();
    }
    let f = &track.frames;
    (0..window_count(f.len(), m, n))
        .map(|s| OdoTask {
            past: f[s..s + m].iter().map(|x| x.odometry()).collect(),
            raster: track.rasters.get(s + m - 1).cloned(),
            future: Some(f[s + m..s + m + n].iter().map(|x| x.odometry()).collect()),
            horizon: n,
        })
        .collect()
}

/// Odometry windows of many tracks, keeping one per (scene, start frame):
/// pedestrians of one scene share the vehicle.
pub fn scene_odometry_windows<'a>(tracks: impl IntoIterator<Item = &'a Track>, m: usize, n: usize) -> Vec<OdoTask> {
    let mut seen = alloc::collections::BTreeSet::new();
    let mut out = Vec::new();
    for t in tracks {
        for (s, task) in odometry_windows(t, m, n).into_iter().enumerate() {
            if seen.insert((t.scene_id, t.frames[s].t)) {
                out.push(task);
            }
        }
    }
    out
}

/// A model the curriculum can train.
pub trait Trainable {
    type Task;

    fn params(&self) -> &ParamSet;
    fn params_mut(&mut self) -> &mut ParamSet;
    /// Mean loss and gradients on one minibatch; `rng` drives any
    /// stochastic masks.
    fn batch_gradients(&self, batch: &[&Self::Task], rng: &mut ChaCha8Rng) -> Result<(f64, Gradients)>;
    /// Average loss over `tasks`, deterministic given `seed`.
    fn evaluation_loss(&self, tasks: &[Self::Task], batch_size: usize, seed: u64) -> Result<f64>;
}

fn chunked_mean<T>(
    tasks: &[T],
    batch_size: usize,
    mut f: impl FnMut(&[&T]) -> Result<f64>,
) -> Result<f64> {
    if tasks.is_empty() {
        return Err(Error::Contract("no tasks to evaluate".into()));
    }
    let mut total = 0.0;
    for chunk in tasks.chunks(batch_size.max(1)) {
        let refs: Vec<&T> = chunk.iter().collect();
        total += f(&refs)? * chunk.len() as f64;
    }
    Ok(total / tasks.len() as f64)
}

impl Trainable for BboxModel {
    type Task = PredictionTask;

    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn batch_gradients(&self, batch: &[&PredictionTask], rng: &mut ChaCha8Rng) -> Result<(f64, Gradients)> {
        let inputs = self.prepare(batch)?;
        let keep = self.config.effective_keep_prob();
        // One independent mask set per example.
        let masks = if keep < 1.0 {
            Some(sample_mask_set(self.mask_dims(), keep, batch.len(), rng)?)
        } else {
            None
        };
        self.loss_and_gradients(&inputs, masks.as_ref())
    }

    fn evaluation_loss(&self, tasks: &[PredictionTask], batch_size: usize, seed: u64) -> Result<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let keep = self.config.effective_keep_prob();
        chunked_mean(tasks, batch_size, |batch| {
            let inputs = self.prepare(batch)?;
            let masks = if keep < 1.0 {
                Some(sample_mask_set(self.mask_dims(), keep, batch.len(), &mut rng)?)
            } else {
                None
            };
            self.loss(&inputs, masks.as_ref())
        })
    }
}

impl Trainable for OdoModel {
    type Task = OdoTask;

    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn batch_gradients(&self, batch: &[&OdoTask], _rng: &mut ChaCha8Rng) -> Result<(f64, Gradients)> {
        self.loss_and_gradients(&self.prepare(batch)?)
    }

    fn evaluation_loss(&self, tasks: &[OdoTask], batch_size: usize, _seed: u64) -> Result<f64> {
        chunked_mean(tasks, batch_size, |batch| self.loss(&self.prepare(batch)?))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub keep_prob: f64,
    pub lambda: f64,
    /// Monte-Carlo samples at inference.
    pub mc_samples: usize,
    pub past: usize,
    pub horizon: usize,
    pub batch_size: usize,
    pub horizons: Vec<usize>,
    pub seed: u64,
    pub epochs_per_stage: usize,
    pub adam: AdamConfig,
    /// Validation checks without improvement before a stage stops.
    pub patience: usize,
    /// Validation checks per epoch.
    pub checks_per_epoch: usize,
    /// Caps the windows used per stage (0 = all); a seeded subsample.
    pub max_windows: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            keep_prob: DEFAULT_KEEP_PROB,
            lambda: 1e-4,
            mc_samples: DEFAULT_MC_SAMPLES,
            past: 8,
            horizon: 15,
            batch_size: 32,
            horizons: alloc::vec![5, 10, 15],
            seed: 0,
            epochs_per_stage: 10,
            adam: AdamConfig::default(),
            patience: 5,
            checks_per_epoch: 1,
            max_windows: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.horizons.is_empty() || self.horizons.windows(2).any(|w| w[1] <= w[0]) {
            return err(format!("curriculum horizons {:?} must be strictly increasing", self.horizons));
        }
        if self.horizons.last() != Some(&self.horizon) {
            return err(format!("last curriculum horizon must equal n = {}", self.horizon));
        }
        if self.horizons[0] == 0 || self.past == 0 {
            return err("horizons and m must be positive".into());
        }
        if self.batch_size == 0 || self.mc_samples == 0 || self.checks_per_epoch == 0 {
            return err("batch size, Monte-Carlo samples and checks per epoch must be positive".into());
        }
        if !(self.keep_prob > 0.0 && self.keep_prob <= 1.0) {
            return err(format!("keep_prob {} outside (0, 1]", self.keep_prob));
        }
        if !(self.lambda >= 0.0 && self.adam.lr > 0.0) {
            return err("λ must be non-negative and lr positive".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub horizon: usize,
    pub train_windows: usize,
    pub val_windows: usize,
    pub steps: usize,
    /// Mean minibatch loss of each epoch.
    pub train_losses: Vec<f64>,
    pub val_losses: Vec<f64>,
    pub best_val: f64,
    pub stopped_early: bool,
}

fn subsample<T>(mut tasks: Vec<T>, cap: usize, rng: &mut ChaCha8Rng) -> Vec<T> {
    if cap > 0 && tasks.len() > cap {
        tasks.shuffle(rng);
        tasks.truncate(cap);
    }
    tasks
}

/// Trains one stage from the model's current parameters; keeps the
/// parameters of the best validation check.
pub fn train_stage<M: Trainable>(
    model: &mut M,
    train: Vec<M::Task>,
    val: Vec<M::Task>,
    horizon: usize,
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<StageReport> {
    if train.is_empty() {
        return Err(Error::Contract(format!("curriculum stage n = {horizon} has no training windows")));
    }
    let train = subsample(train, config.max_windows, rng);
    let val = subsample(val, config.max_windows, rng);
    let eval_seed: u64 = rng.random();
    let mut adam = AdamState::new(config.adam, model.params());
    let mut order: Vec<usize> = (0..train.len()).collect();
    let batches = train.len().div_ceil(config.batch_size);
    let check_at: Vec<usize> = (1..=config.checks_per_epoch)
        .map(|c| (c * batches).div_ceil(config.checks_per_epoch))
        .collect();
    let mut report = StageReport {
        horizon,
        train_windows: train.len(),
        val_windows: val.len(),
        steps: 0,
        train_losses: Vec::new(),
        val_losses: Vec::new(),
        best_val: f64::INFINITY,
        stopped_early: false,
    };
    let mut best = model.params().clone();
    let mut stale = 0;
    'epochs: for _ in 0..config.epochs_per_stage {
        order.shuffle(rng);
        let mut epoch_loss = 0.0;
        for (b, idx) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&M::Task> = idx.iter().map(|&i| &train[i]).collect();
            let (loss, grads) = model.batch_gradients(&batch, rng)?;
            if !loss.is_finite() {
                return Err(Error::Numerical(format!("non-finite training loss at stage n = {horizon}")));
            }
            adam_step(model.params_mut(), &grads, &mut adam)?;
            epoch_loss += loss * batch.len() as f64;
            report.steps += 1;
            if !val.is_empty() && check_at.contains(&(b + 1)) {
                let v = model.evaluation_loss(&val, config.batch_size.max(64), eval_seed)?;
                report.val_losses.push(v);
                if v < report.best_val {
                    report.best_val = v;
                    best = model.params().clone();
                    stale = 0;
                } else {
                    stale += 1;
                    if stale >= config.patience {
                        report.stopped_early = true;
                        report.train_losses.push(epoch_loss / ((b + 1) * config.batch_size).min(train.len()) as f64);
                        break 'epochs;
                    }
                }
            }
        }
        report.train_losses.push(epoch_loss / train.len() as f64);
    }
    if !val.is_empty() {
        *model.params_mut() = best;
    }
    Ok(report)
}

/// Runs every horizon of `config.horizons` in order, each stage starting
/// from the previous stage's parameters. `windows(h)` returns the train
/// and validation windows for horizon `h`.
pub fn curriculum_train<M: Trainable>(
    model: &mut M,
    mut windows: impl FnMut(usize) -> Result<(Vec<M::Task>, Vec<M::Task>)>,
    config: &TrainConfig,
) -> Result<Vec<StageReport>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut reports = Vec::with_capacity(config.horizons.len());
    for &h in &config.horizons {
        let (train, val) = windows(h)?;
        reports.push(train_stage(model, train, val, h, config, &mut rng)?);
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use crate::bbox::{BboxConfig, BoundingBox, Variant};
    use crate::odometry::OdometryState;
    use crate::simulator::{Archetype, Split, TrackFrame};
    use alloc::vec;
    use proptest::prelude::*;

    fn single(v: f64) -> (ParamSet, Gradients) {
        let mut p = ParamSet::new();
        p.insert("w", Array::scalar(0.0));
        let mut g = Gradients::default();
        g.insert("w".into(), Array::scalar(v));
        (p, g)
    }

    #[test]
    fn first_step_moves_by_lr() {
        let (mut p, g) = single(1.0);
        let mut s = AdamState::new(AdamConfig { lr: 0.1, ..AdamConfig::default() }, &p);
        adam_step(&mut p, &g, &mut s).unwrap();
        let dw = p.get("w").unwrap().values()[0];
        assert!((dw + 0.1 / (1.0 + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_does_not_move() {
        let (mut p, g) = single(0.0);
        let mut s = AdamState::new(AdamConfig::default(), &p);
        adam_step(&mut p, &g, &mut s).unwrap();
        assert_eq!(p.get("w").unwrap().values()[0], 0.0);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn shape_mismatch_is_error() {
        let (mut p, _) = single(0.0);
        let mut g = Gradients::default();
        g.insert("w".into(), Array::zeros(&[2, 2]));
        let mut s = AdamState::new(AdamConfig::default(), &p);
        assert!(adam_step(&mut p, &g, &mut s).is_err());
    }

    proptest! {
        #[test]
        fn first_step_opposes_gradient(g in -1e3f64..1e3) {
            prop_assume!(g != 0.0);
            let (mut p, gr) = single(g);
            let mut s = AdamState::new(AdamConfig::default(), &p);
            adam_step(&mut p, &gr, &mut s).unwrap();
            prop_assert_eq!(p.get("w").unwrap().values()[0].signum(), -g.signum());
        }

        #[test]
        fn matches_reference_adam(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cfg = AdamConfig { lr: 0.01, ..AdamConfig::default() };
            let mut p = ParamSet::new();
            p.insert("a", Array::row((0..5).map(|_| rng.random_range(-1.0..1.0)).collect()));
            let mut s = AdamState::new(cfg, &p);
            let (mut theta, mut m, mut v) = (p.get("a").unwrap().values().to_vec(), vec![0.0; 5], vec![0.0; 5]);
            for t in 1..=100 {
                let g: Vec<f64> = (0..5).map(|_| rng.random_range(-2.0..2.0)).collect();
                let mut gr = Gradients::default();
                gr.insert("a".into(), Array::row(g.clone()));
                adam_step(&mut p, &gr, &mut s).unwrap();
                for i in 0..5 {
                    m[i] = 0.9 * m[i] + 0.1 * g[i];
                    v[i] = 0.999 * v[i] + 0.001 * g[i] * g[i];
                    let mh = m[i] / (1.0 - 0.9f64.powi(t));
                    let vh = v[i] / (1.0 - 0.999f64.powi(t));
                    theta[i] -= 0.01 * mh / (vh.sqrt() + 1e-8);
                }
            }
            for (a, b) in p.get("a").unwrap().values().iter().zip(&theta) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn window_counts_shrink_with_horizon(len in 0usize..40, m in 1usize..9) {
            let counts: Vec<usize> = [5, 10, 15].iter().map(|&n| window_count(len, m, n)).collect();
            prop_assert!(counts.windows(2).all(|w| w[1] <= w[0]));
        }
    }

    pub(crate) fn synthetic_track(len: usize, seed: u64) -> Track {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (x0, y0) = (rng.random_range(50.0..400.0), rng.random_range(80.0..140.0));
        let (vx, vy) = (rng.random_range(-3.0..3.0), rng.random_range(-0.5..0.5));
        let steer = rng.random_range(-5.0..5.0);
        let frames = (0..len)
            .map(|t| {
                let tf = t as f64;
                let b = BoundingBox::new(x0 + vx * tf, y0 + vy * tf, x0 + vx * tf + 15.0, y0 + vy * tf + 40.0);
                TrackFrame { t, box_clean: b, box_noisy: b, speed: 8.0 - 0.1 * tf, steering: steer + 0.2 * tf }
            })
            .collect();
        Track { scene_id: seed, ped_id: 0, split: Split::Train, archetype: Archetype::Arc, frames, rasters: vec![] }
    }

    #[test]
    fn window_counts() {
        assert_eq!(sliding_windows(&synthetic_track(30, 0), 8, 15).len(), 8);
        assert_eq!(sliding_windows(&synthetic_track(23, 0), 8, 15).len(), 1);
        assert!(sliding_windows(&synthetic_track(22, 0), 8, 15).is_empty());
        let w = sliding_windows(&synthetic_track(30, 0), 4, 5);
        assert_eq!(w.len(), 22);
        assert_eq!(w[3].past_boxes.len(), 4);
        assert_eq!(w[3].future_odometry[0], OdometryState::new(8.0 - 0.7, w[3].future_odometry[0].steering));
    }

    #[test]
    fn odometry_windows_dedup_by_scene() {
        let t = synthetic_track(30, 3);
        let mut u = t.clone();
        u.ped_id = 1;
        assert_eq!(scene_odometry_windows([&t, &u], 8, 15).len(), 8);
    }

    fn tiny_bbox(keep: f64) -> BboxModel {
        let cfg = BboxConfig {
            variant: if keep < 1.0 { Variant::Bayesian } else { Variant::AleatoricOnly },
            keep_prob: keep,
            ..BboxConfig::tiny()
        };
        BboxModel::new(cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap()
    }

    fn windows_for(tracks: &[Track], m: usize) -> impl FnMut(usize) -> Result<(Vec<PredictionTask>, Vec<PredictionTask>)> + '_ {
        move |h| {
            let all: Vec<_> = tracks.iter().flat_map(|t| sliding_windows(t, m, h)).collect();
            let val = all.iter().step_by(4).cloned().collect();
            Ok((all, val))
        }
    }

    #[test]
    fn degenerate_curriculum_equals_plain_training() {
        let tracks: Vec<_> = (0..4).map(|s| synthetic_track(20, s)).collect();
        let cfg = TrainConfig { horizons: vec![5], horizon: 5, past: 4, epochs_per_stage: 2, batch_size: 8, ..TrainConfig::default() };
        let mut a = tiny_bbox(0.65);
        curriculum_train(&mut a, windows_for(&tracks, 4), &cfg).unwrap();
        let mut b = tiny_bbox(0.65);
        let (tr, va) = windows_for(&tracks, 4)(5).unwrap();
        train_stage(&mut b, tr, va, 5, &cfg, &mut ChaCha8Rng::seed_from_u64(cfg.seed)).unwrap();
        assert!(a.params.bitwise_eq(&b.params));
    }

    #[test]
    fn stages_chain_parameters() {
        let tracks: Vec<_> = (0..4).map(|s| synthetic_track(25, s)).collect();
        let cfg = TrainConfig { horizons: vec![5, 10], horizon: 10, past: 4, epochs_per_stage: 1, batch_size: 8, ..TrainConfig::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut model = tiny_bbox(0.65);
        let mut w = windows_for(&tracks, 4);
        let (tr, va) = w(5).unwrap();
        train_stage(&mut model, tr, va, 5, &cfg, &mut rng).unwrap();
        let after_first = model.params.clone();
        // A zero-epoch stage starts and ends at the same point.
        let zero = TrainConfig { epochs_per_stage: 0, ..cfg.clone() };
        let (tr, va) = w(10).unwrap();
        train_stage(&mut model, tr, va, 10, &zero, &mut rng).unwrap();
        assert!(model.params.bitwise_eq(&after_first));
    }

    #[test]
    fn training_is_deterministic_and_reports_stages() {
        let tracks: Vec<_> = (0..4).map(|s| synthetic_track(25, s)).collect();
        let cfg = TrainConfig { horizons: vec![5, 10], horizon: 10, past: 4, epochs_per_stage: 2, batch_size: 8, ..TrainConfig::default() };
        let run = || {
            let mut m = tiny_bbox(0.65);
            let r = curriculum_train(&mut m, windows_for(&tracks, 4), &cfg).unwrap();
            (m, r)
        };
        let ((a, ra), (b, rb)) = (run(), run());
        assert!(a.params.bitwise_eq(&b.params));
        assert_eq!(ra, rb);
        assert_eq!(ra.len(), 2);
        assert!(ra[0].train_windows >= ra[1].train_windows);
    }

    #[test]
    fn empty_stage_names_horizon() {
        let tracks = vec![synthetic_track(12, 0)];
        let cfg = TrainConfig { horizons: vec![5, 10], horizon: 10, past: 4, epochs_per_stage: 1, ..TrainConfig::default() };
        let err = curriculum_train(&mut tiny_bbox(0.65), windows_for(&tracks, 4), &cfg).unwrap_err();
        assert!(format!("{err}").contains("n = 10"), "{err}");
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { horizons: vec![10, 5, 15], ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { horizons: vec![5, 10], ..TrainConfig::default() }.validate().is_err());
    }

    #[test]
    fn overfits_small_set() {
        let tracks: Vec<_> = (0..16).map(|s| synthetic_track(9, s)).collect();
        let tasks: Vec<_> = tracks.iter().flat_map(|t| sliding_windows(t, 4, 5)).collect();
        assert_eq!(tasks.len(), 16);
        let mut model = tiny_bbox(1.0);
        let refs: Vec<&PredictionTask> = tasks.iter().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut adam = AdamState::new(AdamConfig { lr: 1e-2, ..AdamConfig::default() }, &model.params);
        let first = model.batch_gradients(&refs, &mut rng).unwrap().0;
        for _ in 0..300 {
            let (_, g) = model.batch_gradients(&refs, &mut rng).unwrap();
            adam_step(&mut model.params, &g, &mut adam).unwrap();
        }
        let last = model.batch_gradients(&refs, &mut rng).unwrap().0;
        assert!(last < first - 1.0, "{first} -> {last}");
    }
}
