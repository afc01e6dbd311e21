//! Point-estimate odometry stream: LSTM encoder over past odometry, optional
//! convolutional encoder over a scene raster, LSTM decoder emitting future
//! speed and steering.

use serde::{Deserialize, Serialize};

/// Speed divisor used for network inputs and outputs.
pub const SPEED_SCALE: f64 = 10.0;
/// Steering divisor used for network inputs and outputs.
pub const STEERING_SCALE: f64 = 10.0;

/// Vehicle odometry for one frame: speed in m/s, steering angle in degrees.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OdometryState {
    pub speed: f64,
    pub steering: f64,
}

impl OdometryState {
    pub fn new(speed: f64, steering: f64) -> Self {
        OdometryState { speed, steering }
    }

    pub fn normalized(&self) -> [f64; 2] {
        [self.speed / SPEED_SCALE, self.steering / STEERING_SCALE]
    }

    pub fn from_normalized(v: [f64; 2]) -> Self {
        OdometryState {
            speed: v[0] * SPEED_SCALE,
            steering: v[1] * STEERING_SCALE,
        }
    }
}

pub mod cnn;

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{Array, Gradients, ParamSet, Tape, Var};
use crate::recurrent::{lstm_cell, unroll, uniform, LstmVars, LstmWeights};
pub use cnn::{CnnConfig, SceneRaster};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OdoConfig {
    pub hidden: usize,
    /// `None` is the ablation without the visual pathway.
    pub visual: Option<CnnConfig>,
    /// Predict relative to the last observed odometry.
    pub anchored: bool,
}

impl Default for OdoConfig {
    fn default() -> Self {
        OdoConfig {
            hidden: 128,
            visual: Some(CnnConfig::desk()),
            anchored: true,
        }
    }
}

impl OdoConfig {
    pub fn tiny() -> Self {
        OdoConfig {
            hidden: 4,
            visual: Some(CnnConfig::tiny()),
            anchored: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 {
            return Err(Error::Config("odometry hidden width must be positive".into()));
        }
        if let Some(v) = &self.visual {
            v.validate()?;
        }
        Ok(())
    }

    pub fn visual_width(&self) -> usize {
        self.visual.as_ref().map_or(0, |v| v.output)
    }
}

/// Past odometry, optional raster at the last conditioning frame, optional target.
#[derive(Clone, Debug, PartialEq)]
pub struct OdoTask {
    pub past: Vec<OdometryState>,
    pub raster: Option<SceneRaster>,
    pub future: Option<Vec<OdometryState>>,
    pub horizon: usize,
}

/// Model-ready arrays, normalized units.
#[derive(Clone, Debug, PartialEq)]
pub struct OdoBatch {
    pub rows: usize,
    pub encoder: Vec<Array>,
    /// `(rows·r·r) × 1`; `None` when the model has no visual pathway or no
    /// task carries a raster.
    pub rasters: Option<Array>,
    pub anchors: Array,
    /// Relative to the anchors.
    pub targets: Option<Vec<Array>>,
    pub horizon: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OdoModel {
    pub config: OdoConfig,
    pub params: ParamSet,
}

/// Per-channel MSE in physical units.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OdoLoss {
    /// (m/s)²
    pub speed: f64,
    /// degrees²
    pub angle: f64,
}

impl OdoLoss {
    /// Mean over both channels.
    pub fn combined(&self) -> f64 {
        (self.speed + self.angle) / 2.0
    }
}

impl OdoModel {
    pub fn new(config: OdoConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let h = config.hidden;
        let mut params = ParamSet::new();
        let enc = LstmWeights::init(2, h, rng);
        let dec = LstmWeights::init(h + config.visual_width(), h, rng);
        params.insert("enc.w", enc.w);
        params.insert("enc.b", enc.bias);
        params.insert("dec.w", dec.w);
        params.insert("dec.b", dec.bias);
        params.insert("head.w", uniform(h, 2, rng));
        params.insert("head.b", Array::zeros(&[2]));
        if let Some(v) = &config.visual {
            params.extend_prefixed("cnn.", &v.init(rng, "")?);
        }
        Ok(OdoModel { config, params })
    }

    pub fn zeros(config: OdoConfig) -> Result<Self> {
        let mut m = Self::new(
            config,
            &mut <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0),
        )?;
        for (_, a) in m.params.iter_mut() {
            *a = Array::zeros(a.shape());
        }
        Ok(m)
    }

    pub fn from_params(config: OdoConfig, params: ParamSet) -> Result<Self> {
        config.validate()?;
        let reference = Self::zeros(config.clone())?;
        for (name, a) in reference.params.iter() {
            let got = params.get(name)?;
            if got.shape() != a.shape() {
                return Err(Error::dim("odometry parameters", a.shape(), got.shape()));
            }
        }
        if params.len() != reference.params.len() {
            return Err(Error::Config("unexpected odometry parameters".into()));
        }
        Ok(OdoModel { config, params })
    }

    pub fn prepare(&self, tasks: &[&OdoTask]) -> Result<OdoBatch> {
        let first = tasks.first().ok_or_else(|| Error::Contract("empty batch".into()))?;
        let (m, n) = (first.past.len(), first.horizon);
        if m == 0 {
            return Err(Error::Contract("empty past odometry".into()));
        }
        if n == 0 {
            return Err(Error::Contract("horizon n must be at least 1".into()));
        }
        let rows = tasks.len();
        for t in tasks {
            if t.past.len() != m || t.horizon != n {
                return Err(Error::Contract("batch mixes sequence lengths".into()));
            }
            if let Some(f) = &t.future {
                if f.len() != n {
                    return Err(Error::Contract(format!("|O_f| = {} but n = {n}", f.len())));
                }
            }
        }
        let encoder = (0..m)
            .map(|s| Array::matrix(rows, 2, tasks.iter().flat_map(|t| t.past[s].normalized()).collect()))
            .collect::<Result<Vec<_>>>()?;
        let anchors = Array::matrix(
            rows,
            2,
            tasks
                .iter()
                .flat_map(|t| {
                    if self.config.anchored {
                        t.past[m - 1].normalized()
                    } else {
                        [0.0, 0.0]
                    }
                })
                .collect(),
        )?;
        let rasters = match &self.config.visual {
            Some(v) if tasks.iter().any(|t| t.raster.is_some()) => {
                let blank = SceneRaster::filled(v.resolution, v.resolution, 0);
                let rs: Vec<&SceneRaster> =
                    tasks.iter().map(|t| t.raster.as_ref().unwrap_or(&blank)).collect();
                Some(cnn::stack_rasters(&rs, v.resolution)?)
            }
            _ => None,
        };
        let targets = if tasks.iter().all(|t| t.future.is_some()) {
            Some(
                (0..n)
                    .map(|j| {
                        let v = tasks
                            .iter()
                            .enumerate()
                            .flat_map(|(r, t)| {
                                let o = t.future.as_ref().unwrap()[j].normalized();
                                [o[0] - anchors.get(r, 0), o[1] - anchors.get(r, 1)]
                            })
                            .collect();
                        Array::matrix(rows, 2, v)
                    })
                    .collect::<Result<Vec<_>>>()?,
            )
        } else {
            None
        };
        Ok(OdoBatch {
            rows,
            encoder,
            rasters,
            anchors,
            targets,
            horizon: n,
        })
    }

    /// Records the forward pass; returns `n` predictions of `rows × 2` in
    /// normalized units relative to the anchors.
    pub fn forward_on_tape(
        &self,
        tape: &mut Tape,
        vars: &BTreeMap<String, Var>,
        batch: &OdoBatch,
    ) -> Result<Vec<Var>> {
        let get = |k: &str| {
            vars.get(k)
                .copied()
                .ok_or_else(|| Error::Contract(format!("missing parameter {k:?}")))
        };
        let enc = LstmVars {
            w: get("enc.w")?,
            bias: get("enc.b")?,
        };
        let dec = LstmVars {
            w: get("dec.w")?,
            bias: get("dec.b")?,
        };
        let xs = batch
            .encoder
            .iter()
            .map(|x| tape.constant(x.clone()))
            .collect::<Result<Vec<_>>>()?;
        let v_odo = *unroll(tape, &xs, enc, None, None)?.last().unwrap();
        let v = match &self.config.visual {
            Some(cfg) => {
                let v_vis = match &batch.rasters {
                    Some(r) => {
                        let r = tape.constant(r.clone())?;
                        let lookup = |k: &str| get(&format!("cnn.{k}"));
                        cnn::encode_visual_on_tape(tape, cfg, &lookup, r, batch.rows)?
                    }
                    None => tape.constant(Array::zeros(&[batch.rows, cfg.output]))?,
                };
                tape.concat(&[v_odo, v_vis])?
            }
            None => v_odo,
        };
        let h_dim = self.config.hidden;
        let mut h = tape.constant(Array::zeros(&[batch.rows, h_dim]))?;
        let mut c = tape.constant(Array::zeros(&[batch.rows, h_dim]))?;
        let mut out = Vec::with_capacity(batch.horizon);
        for _ in 0..batch.horizon {
            (h, c) = lstm_cell(tape, v, h, c, dec, None)?;
            let o = tape.matmul(h, get("head.w")?)?;
            let o = tape.add_row(o, get("head.b")?)?;
            out.push(o);
        }
        Ok(out)
    }

    /// Mean squared error over steps, channels and rows in normalized units.
    pub fn loss_on_tape(&self, tape: &mut Tape, preds: &[Var], targets: &[Array]) -> Result<Var> {
        if preds.len() != targets.len() || preds.is_empty() {
            return Err(Error::Contract("prediction/target length mismatch".into()));
        }
        let count = (targets.len() * targets[0].len()) as f64;
        let mut acc = None;
        for (p, t) in preds.iter().zip(targets) {
            let t = tape.constant(t.clone())?;
            let r = tape.sub(*p, t)?;
            let s = tape.sum_squares(r)?;
            acc = Some(match acc {
                None => s,
                Some(a) => tape.add(a, s)?,
            });
        }
        tape.scale(acc.unwrap(), 1.0 / count)
    }

    pub fn loss_and_gradients(&self, batch: &OdoBatch) -> Result<(f64, Gradients)> {
        let mut tape = Tape::new();
        let l = self.record_loss(&mut tape, batch)?;
        Ok((tape.value(l).values()[0], tape.backward(l)?))
    }

    pub fn loss(&self, batch: &OdoBatch) -> Result<f64> {
        let mut tape = Tape::new();
        let l = self.record_loss(&mut tape, batch)?;
        Ok(tape.value(l).values()[0])
    }

    fn record_loss(&self, tape: &mut Tape, batch: &OdoBatch) -> Result<Var> {
        let targets = batch
            .targets
            .as_ref()
            .ok_or_else(|| Error::Contract("training batch without targets".into()))?;
        let vars = tape.params(&self.params)?;
        let preds = self.forward_on_tape(tape, &vars, batch)?;
        self.loss_on_tape(tape, &preds, targets)
    }

    /// Point predictions for every task of the batch.
    pub fn predict_batch(&self, batch: &OdoBatch) -> Result<Vec<Vec<OdometryState>>> {
        let mut tape = Tape::new();
        let mut vars = BTreeMap::new();
        for (k, v) in self.params.iter() {
            vars.insert(String::from(k), tape.constant(v.clone())?);
        }
        let preds = self.forward_on_tape(&mut tape, &vars, batch)?;
        let mut out = vec![Vec::with_capacity(batch.horizon); batch.rows];
        for p in preds {
            let a = tape.value(p);
            for (r, row) in out.iter_mut().enumerate() {
                row.push(OdometryState::from_normalized([
                    a.get(r, 0) + batch.anchors.get(r, 0),
                    a.get(r, 1) + batch.anchors.get(r, 1),
                ]));
            }
        }
        Ok(out)
    }

    pub fn predict(&self, tasks: &[&OdoTask]) -> Result<Vec<Vec<OdometryState>>> {
        self.predict_batch(&self.prepare(tasks)?)
    }
}

/// Predicts `n` future states from `past` and an optional raster.
pub fn predict_odometry(
    model: &OdoModel,
    past: &[OdometryState],
    raster: Option<&SceneRaster>,
    n: usize,
) -> Result<Vec<OdometryState>> {
    let task = OdoTask {
        past: past.to_vec(),
        raster: raster.cloned(),
        future: None,
        horizon: n,
    };
    Ok(model.predict(&[&task])?.pop().unwrap())
}

/// Per-channel MSE between two odometry sequences.
pub fn odometry_loss(pred: &[OdometryState], target: &[OdometryState]) -> Result<OdoLoss> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(Error::Contract(format!(
            "odometry sequences of length {} and {}",
            pred.len(),
            target.len()
        )));
    }
    let n = pred.len() as f64;
    let (mut s, mut a) = (0.0, 0.0);
    for (p, t) in pred.iter().zip(target) {
        s += (p.speed - t.speed) * (p.speed - t.speed);
        a += (p.steering - t.steering) * (p.steering - t.steering);
    }
    Ok(OdoLoss {
        speed: s / n,
        angle: a / n,
    })
}

/// Negates steering everywhere and mirrors the raster.
pub fn augment_flip(task: &OdoTask) -> OdoTask {
    let flip = |o: &OdometryState| OdometryState::new(o.speed, -o.steering);
    OdoTask {
        past: task.past.iter().map(flip).collect(),
        raster: task.raster.as_ref().map(SceneRaster::mirrored),
        future: task.future.as_ref().map(|f| f.iter().map(flip).collect()),
        horizon: task.horizon,
    }
}

/// Mean steering over everything the task carries.
pub fn mean_steering(task: &OdoTask) -> f64 {
    let all: Vec<f64> = task
        .past
        .iter()
        .chain(task.future.iter().flatten())
        .map(|o| o.steering)
        .collect();
    all.iter().sum::<f64>() / all.len().max(1) as f64
}

/// Appends the flipped copy of every task with non-zero mean steering.
pub fn augment_dataset(tasks: &[OdoTask]) -> Vec<OdoTask> {
    let mut out = tasks.to_vec();
    out.extend(tasks.iter().filter(|t| mean_steering(t) != 0.0).map(augment_flip));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::recurrent::{lstm_step, LstmState};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_task(rng: &mut ChaCha8Rng, m: usize, n: usize, res: usize) -> OdoTask {
        let o = |rng: &mut ChaCha8Rng| {
            OdometryState::new(rng.random_range(0.0..12.0), rng.random_range(-15.0..15.0))
        };
        OdoTask {
            past: (0..m).map(|_| o(rng)).collect(),
            raster: Some(
                SceneRaster::new(res, res, (0..res * res).map(|_| rng.random::<u8>()).collect())
                    .unwrap(),
            ),
            future: Some((0..n).map(|_| o(rng)).collect()),
            horizon: n,
        }
    }

    #[test]
    fn zero_model_repeats_bias() {
        let cfg = OdoConfig {
            anchored: false,
            ..OdoConfig::tiny()
        };
        let mut model = OdoModel::zeros(cfg).unwrap();
        model.params.insert("head.b", Array::vector(vec![0.4, -0.2]));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = random_task(&mut rng, 4, 3, 8);
        let p = predict_odometry(&model, &t.past, t.raster.as_ref(), 3).unwrap();
        for o in p {
            assert!((o.speed - 4.0).abs() < 1e-12 && (o.steering + 2.0).abs() < 1e-12);
        }
        assert!(predict_odometry(&model, &[], None, 3).is_err());
    }

    #[test]
    fn raster_changes_prediction() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let model = OdoModel::new(OdoConfig::tiny(), &mut rng).unwrap();
        let t = random_task(&mut rng, 4, 3, 8);
        let with = predict_odometry(&model, &t.past, t.raster.as_ref(), 3).unwrap();
        let without = predict_odometry(&model, &t.past, None, 3).unwrap();
        let v = cnn::encode_visual(
            model.config.visual.as_ref().unwrap(),
            &model.params,
            "cnn.",
            &[t.raster.as_ref().unwrap()],
        )
        .unwrap();
        assert!(v.max_abs() > 0.0);
        assert_ne!(with, without);
    }

    #[test]
    fn matches_hand_unrolled_composition() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = OdoConfig {
            anchored: false,
            ..OdoConfig::tiny()
        };
        let model = OdoModel::new(cfg, &mut rng).unwrap();
        let t = random_task(&mut rng, 3, 2, 8);
        let got = predict_odometry(&model, &t.past, t.raster.as_ref(), 2).unwrap();

        let p = &model.params;
        let lw = |n: &str| {
            LstmWeights::new(p.get(&format!("{n}.w")).unwrap().clone(), p.get(&format!("{n}.b")).unwrap().clone())
                .unwrap()
        };
        let mut st = LstmState::zeros(1, 4);
        for o in &t.past {
            st = lstm_step(&Array::row(o.normalized().to_vec()), &st, &lw("enc"), None).unwrap();
        }
        let vis = cnn::encode_visual(
            model.config.visual.as_ref().unwrap(),
            p,
            "cnn.",
            &[t.raster.as_ref().unwrap()],
        )
        .unwrap();
        let mut v = st.h.values().to_vec();
        v.extend_from_slice(vis.values());
        let v = Array::row(v);
        let mut ds = LstmState::zeros(1, 4);
        for g in &got {
            ds = lstm_step(&v, &ds, &lw("dec"), None).unwrap();
            let o = ds.h.matmul(p.get("head.w").unwrap()).unwrap();
            let b = p.get("head.b").unwrap().values();
            let want = OdometryState::from_normalized([o.values()[0] + b[0], o.values()[1] + b[1]]);
            assert!((g.speed - want.speed).abs() < 1e-12);
            assert!((g.steering - want.steering).abs() < 1e-12);
        }
    }

    #[test]
    fn loss_examples() {
        let a = vec![OdometryState::new(3.0, 2.0), OdometryState::new(4.0, -1.0)];
        assert_eq!(odometry_loss(&a, &a).unwrap(), OdoLoss { speed: 0.0, angle: 0.0 });
        let b: Vec<_> = a.iter().map(|o| OdometryState::new(o.speed + 1.0, o.steering)).collect();
        assert_eq!(odometry_loss(&b, &a).unwrap(), OdoLoss { speed: 1.0, angle: 0.0 });
        assert!(odometry_loss(&a[..1], &a).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p: Vec<_> = (0..7).map(|_| OdometryState::new(rng.random(), rng.random())).collect();
        let q: Vec<_> = (0..7).map(|_| OdometryState::new(rng.random(), rng.random())).collect();
        let l = odometry_loss(&p, &q).unwrap();
        let mut s = 0.0;
        let mut d = 0.0;
        for i in 0..7 {
            s += libm::pow(p[i].speed - q[i].speed, 2.0) / 7.0;
            d += libm::pow(p[i].steering - q[i].steering, 2.0) / 7.0;
        }
        assert!((l.speed - s).abs() < 1e-12 && (l.angle - d).abs() < 1e-12);
    }

    #[test]
    fn flip_cases() {
        let t = OdoTask {
            past: vec![OdometryState::new(1.0, 5.0), OdometryState::new(2.0, -3.0)],
            raster: Some(SceneRaster::new(2, 1, vec![0, 255]).unwrap()),
            future: None,
            horizon: 1,
        };
        let f = augment_flip(&t);
        assert_eq!(f.past[0], OdometryState::new(1.0, -5.0));
        assert_eq!(f.past[1], OdometryState::new(2.0, 3.0));
        assert_eq!(f.raster.as_ref().unwrap().cells, vec![255, 0]);
        assert_eq!(augment_flip(&f), t);

        let mut zero = t.clone();
        zero.past = vec![OdometryState::new(1.0, 2.0), OdometryState::new(1.0, -2.0)];
        let set = vec![t.clone(), zero, t];
        assert_eq!(augment_dataset(&set).len(), 5);
    }

    #[test]
    fn visual_encoding_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let model = OdoModel::new(OdoConfig::tiny(), &mut rng).unwrap();
        let t = random_task(&mut rng, 3, 2, 8);
        let a = model.predict(&[&t]).unwrap();
        let b = model.predict(&[&t]).unwrap();
        assert_eq!(a, b);
    }
}
