//! Bayesian encoder-decoder over pedestrian bounding boxes with a
//! heteroscedastic Gaussian head and Monte-Carlo dropout sampling.
//!
//! The network works in "model coordinates": boxes divided by the image size
//! and, when `anchored`, shifted by the last observed box and multiplied by
//! `gain`. [`GaussianStepParams`] are always reported in pixels.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Array, Gradients, ParamSet, Tape, Var};
use crate::odometry::OdometryState;
use crate::recurrent::{
    self, embed_on_tape, lstm_cell, sample_mask_set, unroll, LstmVars, LstmWeights, MaskDims,
    MaskVars, VariationalMaskSet, DEFAULT_KEEP_PROB,
};

pub const DEFAULT_LAMBDA: f64 = 1e-4;
pub const DEFAULT_MC_SAMPLES: usize = 50;

/// Weight matrices that carry the L2 penalty (biases are excluded).
pub const WEIGHT_NAMES: [&str; 5] = ["dec.w", "emb.in", "emb.sum", "enc.w", "head.w"];

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x_tl: f64,
    pub y_tl: f64,
    pub x_br: f64,
    pub y_br: f64,
}

impl BoundingBox {
    pub fn new(x_tl: f64, y_tl: f64, x_br: f64, y_br: f64) -> Self {
        BoundingBox {
            x_tl,
            y_tl,
            x_br,
            y_br,
        }
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x_tl, self.y_tl, self.x_br, self.y_br]
    }

    /// Corners ordered; predicted means may violate this.
    pub fn is_well_formed(&self) -> bool {
        self.x_tl <= self.x_br && self.y_tl <= self.y_br
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x_tl + self.x_br) / 2.0, (self.y_tl + self.y_br) / 2.0)
    }

    pub fn height(&self) -> f64 {
        self.y_br - self.y_tl
    }
}

/// Conditioning sequences plus (optionally) the target.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionTask {
    pub past_boxes: Vec<BoundingBox>,
    pub past_odometry: Vec<OdometryState>,
    /// True or predicted; may be empty for models that ignore it.
    pub future_odometry: Vec<OdometryState>,
    pub future_boxes: Option<Vec<BoundingBox>>,
    pub horizon: usize,
}

impl PredictionTask {
    pub fn validate(&self) -> Result<()> {
        let m = self.past_boxes.len();
        if m == 0 {
            return Err(Error::Contract("empty conditioning sequence".into()));
        }
        if self.past_odometry.len() != m {
            return Err(Error::Contract(format!(
                "|B_p| = {m} but |O_p| = {}",
                self.past_odometry.len()
            )));
        }
        if self.horizon == 0 {
            return Err(Error::Contract("horizon n must be at least 1".into()));
        }
        if !self.future_odometry.is_empty() && self.future_odometry.len() != self.horizon {
            return Err(Error::Contract(format!(
                "|O_f| = {} but n = {}",
                self.future_odometry.len(),
                self.horizon
            )));
        }
        if let Some(f) = &self.future_boxes {
            if f.len() != self.horizon {
                return Err(Error::Contract(format!(
                    "|B_f| = {} but n = {}",
                    f.len(),
                    self.horizon
                )));
            }
        }
        Ok(())
    }
}

/// Table rows of the box stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    /// Point estimate, σ fixed at 1, no dropout.
    #[serde(rename = "lstm")]
    Homoscedastic,
    /// Predicted σ, no dropout.
    #[serde(rename = "lstm-aleatoric")]
    AleatoricOnly,
    /// Predicted σ and MC dropout.
    #[serde(rename = "lstm-bayesian")]
    Bayesian,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Homoscedastic, Variant::AleatoricOnly, Variant::Bayesian];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Homoscedastic => "lstm",
            Variant::AleatoricOnly => "lstm-aleatoric",
            Variant::Bayesian => "lstm-bayesian",
        }
    }

    pub fn heteroscedastic(self) -> bool {
        self != Variant::Homoscedastic
    }

    pub fn keep_prob(self, bayesian_keep: f64) -> f64 {
        match self {
            Variant::Bayesian => bayesian_keep,
            _ => 1.0,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown variant {s:?}; expected one of lstm, lstm-aleatoric, lstm-bayesian"
                ))
            })
    }
}

/// Which odometry the box stream sees.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Streams {
    /// Encoder sees past boxes and odometry; decoder sees no future odometry.
    #[serde(rename = "one")]
    One,
    /// Decoder additionally sees future odometry predicted by the odometry stream.
    #[serde(rename = "two")]
    Two,
    /// Decoder sees the true future odometry.
    #[serde(rename = "oracle")]
    Oracle,
}

impl Streams {
    pub const ALL: [Streams; 3] = [Streams::One, Streams::Two, Streams::Oracle];

    pub fn name(self) -> &'static str {
        match self {
            Streams::One => "one",
            Streams::Two => "two",
            Streams::Oracle => "oracle",
        }
    }

    pub fn uses_future_odometry(self) -> bool {
        self != Streams::One
    }
}

impl fmt::Display for Streams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Streams {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "one" => Ok(Streams::One),
            "two" => Ok(Streams::Two),
            "oracle" | "oracle-odometry" => Ok(Streams::Oracle),
            _ => Err(Error::Config(format!(
                "unknown streams {s:?}; expected one of one, two, oracle"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BboxConfig {
    pub embedding: usize,
    pub hidden: usize,
    pub variant: Variant,
    /// Keep probability of the Bayesian variant.
    pub keep_prob: f64,
    pub lambda: f64,
    pub encoder_odometry: bool,
    pub future_odometry: bool,
    /// Feed the previous predicted mean into the decoder input.
    pub autoregressive: bool,
    /// Predict relative to the last observed box.
    pub anchored: bool,
    /// Multiplier applied to anchored offsets.
    pub gain: f64,
    pub image_width: f64,
    pub image_height: f64,
}

impl Default for BboxConfig {
    fn default() -> Self {
        BboxConfig {
            embedding: 64,
            hidden: 128,
            variant: Variant::Bayesian,
            keep_prob: DEFAULT_KEEP_PROB,
            lambda: DEFAULT_LAMBDA,
            encoder_odometry: true,
            future_odometry: true,
            autoregressive: false,
            anchored: true,
            gain: 10.0,
            image_width: 512.0,
            image_height: 256.0,
        }
    }
}

impl BboxConfig {
    /// Small profile used by oracle and gradient tests.
    pub fn tiny() -> Self {
        BboxConfig {
            embedding: 8,
            hidden: 16,
            ..Default::default()
        }
    }

    pub fn with_streams(mut self, streams: Streams) -> Self {
        self.future_odometry = streams.uses_future_odometry();
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.embedding == 0 || self.hidden == 0 {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        recurrent::check_keep_prob(self.keep_prob)?;
        if !(self.lambda >= 0.0) {
            return Err(Error::Config(format!("lambda must be ≥ 0, got {}", self.lambda)));
        }
        if !(self.gain > 0.0) || !(self.image_width > 0.0) || !(self.image_height > 0.0) {
            return Err(Error::Config("gain and image size must be positive".into()));
        }
        Ok(())
    }

    pub fn effective_keep_prob(&self) -> f64 {
        self.variant.keep_prob(self.keep_prob)
    }

    pub fn input_dim(&self) -> usize {
        4 + if self.anchored { 4 } else { 0 } + if self.encoder_odometry { 2 } else { 0 }
    }

    pub fn summary_dim(&self) -> usize {
        self.hidden
            + if self.future_odometry { 2 } else { 0 }
            + if self.autoregressive { 4 } else { 0 }
    }

    fn scale(&self) -> [f64; 4] {
        let (w, h) = (self.image_width, self.image_height);
        [w, h, w, h]
    }

    fn gain(&self) -> f64 {
        if self.anchored {
            self.gain
        } else {
            1.0
        }
    }
}

/// Per-step Gaussian in pixels: covariance `diag(var_x, var_y, var_x, var_y)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianStepParams {
    pub mean: BoundingBox,
    pub var_x: f64,
    pub var_y: f64,
}

impl GaussianStepParams {
    pub fn sigma_x(&self) -> f64 {
        libm::sqrt(self.var_x)
    }

    pub fn sigma_y(&self) -> f64 {
        libm::sqrt(self.var_y)
    }

    /// Per-coordinate variances in box order.
    pub fn variances(&self) -> [f64; 4] {
        [self.var_x, self.var_y, self.var_x, self.var_y]
    }
}

/// `T` Monte-Carlo trajectories of one task.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictiveSampleSet {
    /// `params[i][j]`: sample `i`, step `j`.
    pub params: Vec<Vec<GaussianStepParams>>,
    /// One box drawn from each step's Gaussian.
    pub draws: Vec<Vec<BoundingBox>>,
    pub masks: Option<VariationalMaskSet>,
}

impl PredictiveSampleSet {
    pub fn samples(&self) -> usize {
        self.params.len()
    }

    pub fn horizon(&self) -> usize {
        self.params.first().map_or(0, |p| p.len())
    }

    /// Mean of the per-sample mean boxes at every step.
    pub fn mean_trajectory(&self) -> Vec<BoundingBox> {
        let t = self.samples() as f64;
        (0..self.horizon())
            .map(|j| {
                let mut acc = [0.0; 4];
                for s in &self.params {
                    for (a, v) in acc.iter_mut().zip(s[j].mean.to_array()) {
                        *a += v;
                    }
                }
                BoundingBox::from_array(acc.map(|a| a / t))
            })
            .collect()
    }
}

/// Model-ready arrays for a batch of tasks sharing `m` and `n`.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchInputs {
    pub rows: usize,
    /// `m` arrays of `rows × input_dim`.
    pub encoder: Vec<Array>,
    /// `n` arrays of `rows × 2`, empty when the model ignores future odometry.
    pub future_odometry: Vec<Array>,
    /// Anchor boxes in normalized coordinates, `rows × 4`.
    pub anchors: Array,
    /// `n` arrays of `rows × 4` in model coordinates.
    pub targets: Option<Vec<Array>>,
    pub horizon: usize,
}

/// Tape handles of the model parameters.
#[derive(Clone, Copy, Debug)]
pub struct BboxVars {
    pub emb_in: Var,
    pub emb_sum: Var,
    pub enc: LstmVars,
    pub dec: LstmVars,
    pub head_w: Var,
    pub head_b: Var,
}

impl BboxVars {
    pub fn from_map(vars: &BTreeMap<String, Var>) -> Result<Self> {
        let get = |k: &str| {
            vars.get(k)
                .copied()
                .ok_or_else(|| Error::Contract(format!("missing parameter {k:?}")))
        };
        Ok(BboxVars {
            emb_in: get("emb.in")?,
            emb_sum: get("emb.sum")?,
            enc: LstmVars {
                w: get("enc.w")?,
                bias: get("enc.b")?,
            },
            dec: LstmVars {
                w: get("dec.w")?,
                bias: get("dec.b")?,
            },
            head_w: get("head.w")?,
            head_b: get("head.b")?,
        })
    }
}

/// Head outputs of one decoder step, model coordinates, `rows × 4` / `rows × 2`.
#[derive(Clone, Copy, Debug)]
pub struct StepVars {
    pub mean: Var,
    pub logvar: Var,
}

/// Scalar pieces of the training objective on a tape.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub total: Var,
    pub data: Var,
    pub log_term: Option<Var>,
    pub regularizer: Var,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BboxModel {
    pub config: BboxConfig,
    pub params: ParamSet,
}

impl BboxModel {
    pub fn new(config: BboxConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let (e, h) = (config.embedding, config.hidden);
        let mut params = ParamSet::new();
        params.insert("emb.in", recurrent::uniform(config.input_dim(), e, rng));
        params.insert("emb.sum", recurrent::uniform(config.summary_dim(), e, rng));
        let enc = LstmWeights::init(e, h, rng);
        let dec = LstmWeights::init(e, h, rng);
        params.insert("enc.w", enc.w);
        params.insert("enc.b", enc.bias);
        params.insert("dec.w", dec.w);
        params.insert("dec.b", dec.bias);
        params.insert("head.w", recurrent::uniform(h, 6, rng));
        params.insert("head.b", Array::zeros(&[6]));
        Ok(BboxModel { config, params })
    }

    /// All weights and biases zero.
    pub fn zeros(config: BboxConfig) -> Result<Self> {
        let mut m = Self::new(config, &mut <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0))?;
        for (_, a) in m.params.iter_mut() {
            *a = Array::zeros(a.shape());
        }
        Ok(m)
    }

    pub fn from_params(config: BboxConfig, params: ParamSet) -> Result<Self> {
        config.validate()?;
        let model = BboxModel { config, params };
        let expect = [
            ("emb.in", vec![model.config.input_dim(), model.config.embedding]),
            ("emb.sum", vec![model.config.summary_dim(), model.config.embedding]),
            ("head.w", vec![model.config.hidden, 6]),
        ];
        for (name, shape) in expect {
            let a = model.params.get(name)?;
            if a.shape() != shape.as_slice() {
                return Err(Error::dim("bbox parameters", &shape, a.shape()));
            }
        }
        for name in ["enc", "dec"] {
            LstmWeights::new(
                model.params.get(&format!("{name}.w"))?.clone(),
                model.params.get(&format!("{name}.b"))?.clone(),
            )?;
        }
        Ok(model)
    }

    pub fn mask_dims(&self) -> MaskDims {
        MaskDims {
            embedding: self.config.embedding,
            hidden: self.config.hidden,
        }
    }

    /// Converts tasks into model-coordinate arrays.
    pub fn prepare(&self, tasks: &[&PredictionTask]) -> Result<BatchInputs> {
        let cfg = &self.config;
        let first = tasks
            .first()
            .ok_or_else(|| Error::Contract("empty batch".into()))?;
        let (m, n) = (first.past_boxes.len(), first.horizon);
        let rows = tasks.len();
        let scale = cfg.scale();
        let gain = cfg.gain();
        let d_in = cfg.input_dim();

        let mut anchors = Vec::with_capacity(rows * 4);
        for t in tasks {
            t.validate()?;
            if t.past_boxes.len() != m || t.horizon != n {
                return Err(Error::Contract(format!(
                    "batch mixes (m, n) = ({m}, {n}) with ({}, {})",
                    t.past_boxes.len(),
                    t.horizon
                )));
            }
            if cfg.future_odometry && t.future_odometry.len() != n {
                return Err(Error::Contract(
                    "model conditions on future odometry but the task has none".into(),
                ));
            }
            let last = t.past_boxes[m - 1].to_array();
            for c in 0..4 {
                anchors.push(if cfg.anchored { last[c] / scale[c] } else { 0.0 });
            }
        }
        let anchors = Array::matrix(rows, 4, anchors)?;
        let to_model = |b: &BoundingBox, r: usize| -> [f64; 4] {
            let a = b.to_array();
            core::array::from_fn(|c| (a[c] / scale[c] - anchors.get(r, c)) * gain)
        };

        let mut encoder = Vec::with_capacity(m);
        for s in 0..m {
            let mut v = Vec::with_capacity(rows * d_in);
            for (r, t) in tasks.iter().enumerate() {
                let b = &t.past_boxes[s];
                v.extend_from_slice(&to_model(b, r));
                if cfg.anchored {
                    let a = b.to_array();
                    v.extend((0..4).map(|c| a[c] / scale[c] - 0.5));
                }
                if cfg.encoder_odometry {
                    v.extend_from_slice(&t.past_odometry[s].normalized());
                }
            }
            encoder.push(Array::matrix(rows, d_in, v)?);
        }

        let future_odometry = if cfg.future_odometry {
            (0..n)
                .map(|j| {
                    let v = tasks
                        .iter()
                        .flat_map(|t| t.future_odometry[j].normalized())
                        .collect();
                    Array::matrix(rows, 2, v)
                })
                .collect::<Result<Vec<_>>>()?
        } else {
            Vec::new()
        };

        let targets = if tasks.iter().all(|t| t.future_boxes.is_some()) {
            Some(
                (0..n)
                    .map(|j| {
                        let mut v = Vec::with_capacity(rows * 4);
                        for (r, t) in tasks.iter().enumerate() {
                            v.extend_from_slice(&to_model(&t.future_boxes.as_ref().unwrap()[j], r));
                        }
                        Array::matrix(rows, 4, v)
                    })
                    .collect::<Result<Vec<_>>>()?,
            )
        } else {
            None
        };

        Ok(BatchInputs {
            rows,
            encoder,
            future_odometry,
            anchors,
            targets,
            horizon: n,
        })
    }

    /// Records the forward pass; `masks` must have `inputs.rows` rows.
    pub fn forward_on_tape(
        &self,
        tape: &mut Tape,
        vars: &BboxVars,
        inputs: &BatchInputs,
        masks: Option<&MaskVars>,
    ) -> Result<Vec<StepVars>> {
        let cfg = &self.config;
        let rows = inputs.rows;
        let embedded = inputs
            .encoder
            .iter()
            .map(|x| {
                let x = tape.constant(x.clone())?;
                embed_on_tape(tape, x, vars.emb_in, masks.map(|m| m.emi))
            })
            .collect::<Result<Vec<_>>>()?;
        let hs = unroll(tape, &embedded, vars.enc, masks.map(|m| m.enc), None)
            .map_err(|e| e.context("encoder"))?;
        let summary = *hs.last().unwrap();

        let mut h = tape.constant(Array::zeros(&[rows, cfg.hidden]))?;
        let mut c = tape.constant(Array::zeros(&[rows, cfg.hidden]))?;
        let mut prev = tape.constant(Array::zeros(&[rows, 4]))?;
        if cfg.autoregressive && !cfg.anchored {
            let last = inputs.encoder.last().unwrap();
            let v = (0..rows).flat_map(|r| last.row_slice(r)[..4].to_vec()).collect();
            prev = tape.constant(Array::matrix(rows, 4, v)?)?;
        }
        let mut out = Vec::with_capacity(inputs.horizon);
        for j in 0..inputs.horizon {
            let step = |tape: &mut Tape, h: Var, c: Var, prev: Var| -> Result<(Var, Var, StepVars)> {
                let mut parts = vec![summary];
                if cfg.future_odometry {
                    parts.push(tape.constant(inputs.future_odometry[j].clone())?);
                }
                if cfg.autoregressive {
                    parts.push(prev);
                }
                let d = tape.concat(&parts)?;
                let e = embed_on_tape(tape, d, vars.emb_sum, masks.map(|m| m.ems))?;
                let (h, c) = lstm_cell(tape, e, h, c, vars.dec, masks.map(|m| m.dec))?;
                let o = tape.matmul(h, vars.head_w)?;
                let o = tape.add_row(o, vars.head_b)?;
                let mean = tape.slice_cols(o, 0, 4)?;
                let logvar = tape.slice_cols(o, 4, 6)?;
                Ok((h, c, StepVars { mean, logvar }))
            };
            let (hn, cn, sv) =
                step(tape, h, c, prev).map_err(|e| e.context(&format!("decoder step {j}")))?;
            h = hn;
            c = cn;
            prev = sv.mean;
            out.push(sv);
        }
        Ok(out)
    }

    /// Records the training objective on the tape.
    pub fn loss_on_tape(
        &self,
        tape: &mut Tape,
        vars: &BTreeMap<String, Var>,
        steps: &[StepVars],
        targets: &[Array],
    ) -> Result<LossVars> {
        let lambda = self.config.lambda;
        if !(lambda >= 0.0) {
            return Err(Error::Config(format!("lambda must be ≥ 0, got {lambda}")));
        }
        if steps.len() != targets.len() || steps.is_empty() {
            return Err(Error::Contract(format!(
                "{} predicted steps vs {} targets",
                steps.len(),
                targets.len()
            )));
        }
        let rows = targets[0].rows();
        let hetero = self.config.variant.heteroscedastic();
        let expand: Vec<u32> = (0..rows as u32)
            .flat_map(|r| [2 * r, 2 * r + 1, 2 * r, 2 * r + 1])
            .collect();
        let mut data_terms = Vec::with_capacity(steps.len());
        let mut log_terms = Vec::with_capacity(steps.len());
        for (s, t) in steps.iter().zip(targets) {
            let t = tape.constant(t.clone())?;
            let r = tape.sub(s.mean, t)?;
            let r2 = tape.mul(r, r)?;
            let weighted = if hetero {
                let neg = tape.scale(s.logvar, -1.0)?;
                let inv = tape.exp(neg)?;
                let inv4 = tape.gather(inv, expand.clone(), vec![rows, 4])?;
                log_terms.push(tape.sum(s.logvar)?);
                tape.mul(r2, inv4)?
            } else {
                r2
            };
            data_terms.push(tape.sum(weighted)?);
        }
        let data = sum_vars(tape, &data_terms)?;
        let data = tape.scale(data, 1.0 / (4.0 * rows as f64))?;
        let log_term = if hetero {
            let l = sum_vars(tape, &log_terms)?;
            Some(tape.scale(l, 1.0 / rows as f64)?)
        } else {
            None
        };
        let mut sq = Vec::with_capacity(WEIGHT_NAMES.len());
        for name in WEIGHT_NAMES {
            let v = vars
                .get(name)
                .copied()
                .ok_or_else(|| Error::Contract(format!("missing parameter {name:?}")))?;
            sq.push(tape.sum_squares(v)?);
        }
        let reg = sum_vars(tape, &sq)?;
        let regularizer = tape.scale(reg, lambda)?;
        let mut total = tape.add(data, regularizer)?;
        if let Some(l) = log_term {
            total = tape.add(total, l)?;
        }
        Ok(LossVars {
            total,
            data,
            log_term,
            regularizer,
        })
    }

    /// Objective value and gradients for a batch with per-row masks.
    pub fn loss_and_gradients(
        &self,
        inputs: &BatchInputs,
        masks: Option<&VariationalMaskSet>,
    ) -> Result<(f64, Gradients)> {
        let mut tape = Tape::new();
        let loss = self.record_loss(&mut tape, inputs, masks)?;
        let value = tape.value(loss).values()[0];
        Ok((value, tape.backward(loss)?))
    }

    /// Objective value only.
    pub fn loss(&self, inputs: &BatchInputs, masks: Option<&VariationalMaskSet>) -> Result<f64> {
        let mut tape = Tape::new();
        let loss = self.record_loss(&mut tape, inputs, masks)?;
        Ok(tape.value(loss).values()[0])
    }

    fn record_loss(
        &self,
        tape: &mut Tape,
        inputs: &BatchInputs,
        masks: Option<&VariationalMaskSet>,
    ) -> Result<Var> {
        let targets = inputs
            .targets
            .as_ref()
            .ok_or_else(|| Error::Contract("training batch without targets".into()))?;
        let map = tape.params(&self.params)?;
        let vars = BboxVars::from_map(&map)?;
        let mv = masks.map(|m| m.on_tape(tape)).transpose()?;
        let steps = self.forward_on_tape(tape, &vars, inputs, mv.as_ref())?;
        let l = self.loss_on_tape(tape, &map, &steps, targets)?;
        Ok(l.total)
    }

    /// Pixel-space Gaussians for every row of the batch.
    pub fn forward_batch(
        &self,
        inputs: &BatchInputs,
        masks: Option<&VariationalMaskSet>,
    ) -> Result<Vec<Vec<GaussianStepParams>>> {
        if let Some(m) = masks {
            if m.rows() != inputs.rows {
                return Err(Error::Contract(format!(
                    "{} mask rows for {} sequences",
                    m.rows(),
                    inputs.rows
                )));
            }
        }
        let mut tape = Tape::new();
        let vars = BboxVars {
            emb_in: tape.constant(self.params.get("emb.in")?.clone())?,
            emb_sum: tape.constant(self.params.get("emb.sum")?.clone())?,
            enc: LstmVars {
                w: tape.constant(self.params.get("enc.w")?.clone())?,
                bias: tape.constant(self.params.get("enc.b")?.clone())?,
            },
            dec: LstmVars {
                w: tape.constant(self.params.get("dec.w")?.clone())?,
                bias: tape.constant(self.params.get("dec.b")?.clone())?,
            },
            head_w: tape.constant(self.params.get("head.w")?.clone())?,
            head_b: tape.constant(self.params.get("head.b")?.clone())?,
        };
        let mv = masks.map(|m| m.on_tape(&mut tape)).transpose()?;
        let steps = self.forward_on_tape(&mut tape, &vars, inputs, mv.as_ref())?;
        let scale = self.config.scale();
        let gain = self.config.gain();
        let hetero = self.config.variant.heteroscedastic();
        let mut out = vec![Vec::with_capacity(inputs.horizon); inputs.rows];
        for (j, s) in steps.iter().enumerate() {
            let mean = tape.value(s.mean);
            let logvar = tape.value(s.logvar);
            for (r, row) in out.iter_mut().enumerate() {
                let mu: [f64; 4] = core::array::from_fn(|c| {
                    (mean.get(r, c) / gain + inputs.anchors.get(r, c)) * scale[c]
                });
                let (lx, ly) = if hetero {
                    (logvar.get(r, 0), logvar.get(r, 1))
                } else {
                    (0.0, 0.0)
                };
                let var_x = libm::exp(lx) * (scale[0] / gain) * (scale[0] / gain);
                let var_y = libm::exp(ly) * (scale[1] / gain) * (scale[1] / gain);
                if !mu.iter().all(|v| v.is_finite()) || !(var_x > 0.0) || !(var_y > 0.0) {
                    return Err(Error::Numerical(format!(
                        "non-finite or degenerate head output at decoder step {j}"
                    )));
                }
                row.push(GaussianStepParams {
                    mean: BoundingBox::from_array(mu),
                    var_x,
                    var_y,
                });
            }
        }
        Ok(out)
    }

    /// Gaussians of one task under one mask draw (or none).
    pub fn forward_params(
        &self,
        task: &PredictionTask,
        masks: Option<&VariationalMaskSet>,
    ) -> Result<Vec<GaussianStepParams>> {
        let inputs = self.prepare(&[task])?;
        Ok(self.forward_batch(&inputs, masks)?.pop().unwrap())
    }

    /// Draws `t` mask sets (one per sample), runs them as one batch and
    /// samples a box per step from each Gaussian.
    pub fn sample_predictive(
        &self,
        task: &PredictionTask,
        t: usize,
        rng: &mut impl Rng,
    ) -> Result<PredictiveSampleSet> {
        if t == 0 {
            return Err(Error::Contract("need at least one Monte-Carlo sample".into()));
        }
        let keep = self.config.effective_keep_prob();
        let (params, masks) = if keep < 1.0 {
            let masks = sample_mask_set(self.mask_dims(), keep, t, rng)?;
            let inputs = self.prepare(&vec![task; t])?;
            (self.forward_batch(&inputs, Some(&masks))?, Some(masks))
        } else {
            let p = self.forward_params(task, None)?;
            (vec![p; t], None)
        };
        let draws = params
            .iter()
            .map(|seq| {
                seq.iter()
                    .map(|g| {
                        let v = g.variances();
                        let mu = g.mean.to_array();
                        BoundingBox::from_array(core::array::from_fn(|c| {
                            let z: f64 = StandardNormal.sample(rng);
                            mu[c] + libm::sqrt(v[c]) * z
                        }))
                    })
                    .collect()
            })
            .collect();
        Ok(PredictiveSampleSet {
            params,
            draws,
            masks,
        })
    }

    /// `Σ_k ||W_k||²` over the penalized matrices.
    pub fn weight_norm_sq(&self) -> Result<f64> {
        WEIGHT_NAMES
            .iter()
            .map(|n| self.params.get(n).map(|a| a.sum_squares()))
            .sum()
    }
}

fn sum_vars(tape: &mut Tape, xs: &[Var]) -> Result<Var> {
    let mut acc = xs[0];
    for &x in &xs[1..] {
        acc = tape.add(acc, x)?;
    }
    Ok(acc)
}

/// Direct evaluation of the objective.
///
/// `residuals[i][j]` and `logvars[i][j]` are sequence `i`, step `j`, in model
/// coordinates; `logvars = None` means σ = 1 and no log term.
pub fn training_loss(
    residuals: &[Vec<[f64; 4]>],
    logvars: Option<&[Vec<[f64; 2]>]>,
    weight_norm_sq: f64,
    lambda: f64,
) -> Result<f64> {
    if !(lambda >= 0.0) {
        return Err(Error::Config(format!("lambda must be ≥ 0, got {lambda}")));
    }
    let n = residuals.len() as f64;
    if residuals.is_empty() {
        return Err(Error::Contract("empty batch".into()));
    }
    let mut data = 0.0;
    let mut logs = 0.0;
    for (i, seq) in residuals.iter().enumerate() {
        for (j, r) in seq.iter().enumerate() {
            let (lx, ly) = match logvars {
                Some(l) => (l[i][j][0], l[i][j][1]),
                None => (0.0, 0.0),
            };
            let var = [libm::exp(lx), libm::exp(ly), libm::exp(lx), libm::exp(ly)];
            data += (0..4).map(|c| r[c] * r[c] / var[c]).sum::<f64>();
            logs += lx + ly;
        }
    }
    let loss = data / (4.0 * n) + lambda * weight_norm_sq + logs / n;
    if !loss.is_finite() {
        return Err(Error::Numerical(format!("loss is {loss}")));
    }
    Ok(loss)
}
