//! LSTM cell with a concatenated gate matrix, tied variational Bernoulli
//! masks, ReLU embeddings and sequence encoding.
//!
//! Gate column blocks are ordered input, forget, output, candidate. Masks are
//! drawn once per sequence and reused at every step of that sequence; a mask
//! array with `r` rows carries one independent mask per batch row.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Array, Tape, Var};

/// Default keep probability (dropout rate 0.35).
pub const DEFAULT_KEEP_PROB: f64 = 0.65;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LstmWeights {
    /// `(d_in + d_h) × 4·d_h`
    pub w: Array,
    /// `[4·d_h]`
    pub bias: Array,
}

impl LstmWeights {
    pub fn new(w: Array, bias: Array) -> Result<Self> {
        if w.cols() % 4 != 0 || w.cols() == 0 {
            return Err(Error::dim("lstm weights", w.shape(), &[4]));
        }
        let d_h = w.cols() / 4;
        if w.rows() <= d_h {
            return Err(Error::dim("lstm weights", w.shape(), &[d_h]));
        }
        if bias.len() != w.cols() {
            return Err(Error::dim("lstm bias", w.shape(), bias.shape()));
        }
        if !w.is_finite() || !bias.is_finite() {
            return Err(Error::Numerical("non-finite lstm weights".into()));
        }
        Ok(LstmWeights { w, bias })
    }

    /// Uniform in ±1/√fan_in, forget-gate bias +1, other biases 0.
    pub fn init(d_in: usize, d_h: usize, rng: &mut impl Rng) -> Self {
        let fan_in = d_in + d_h;
        let w = uniform(fan_in, 4 * d_h, rng);
        let mut b = alloc::vec![0.0; 4 * d_h];
        for v in &mut b[d_h..2 * d_h] {
            *v = 1.0;
        }
        LstmWeights {
            w,
            bias: Array::vector(b),
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.w.cols() / 4
    }

    pub fn input_dim(&self) -> usize {
        self.w.rows() - self.hidden_dim()
    }
}

/// Uniform `rows × cols` matrix in ±1/√rows.
pub fn uniform(rows: usize, cols: usize, rng: &mut impl Rng) -> Array {
    let bound = 1.0 / libm::sqrt(rows as f64);
    let v = (0..rows * cols)
        .map(|_| rng.random_range(-bound..bound))
        .collect();
    Array::matrix(rows, cols, v).expect("positive extents")
}

/// Hidden and cell state; one row per sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmState {
    pub h: Array,
    pub c: Array,
}

impl LstmState {
    pub fn zeros(rows: usize, d_h: usize) -> Self {
        LstmState {
            h: Array::zeros(&[rows, d_h]),
            c: Array::zeros(&[rows, d_h]),
        }
    }
}

/// Final encoder hidden state.
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryVector(pub Array);

/// The two embedding matrices of the box stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingWeights {
    /// Input embedding, `d_box+odo × d_emb`.
    pub input: Array,
    /// Summary embedding, `d_sum+odo × d_emb`.
    pub summary: Array,
}

/// Tape handles for one LSTM's parameters.
#[derive(Clone, Copy, Debug)]
pub struct LstmVars {
    pub w: Var,
    pub bias: Var,
}

/// Tape handles for the `(z_x, z_h)` pair of one LSTM.
#[derive(Clone, Copy, Debug)]
pub struct StepMasks {
    pub x: Var,
    pub h: Var,
}

/// Bernoulli masks realizing one draw from the variational distribution.
#[derive(Clone, Debug, PartialEq)]
pub struct VariationalMaskSet {
    pub keep_prob: f64,
    pub emi: Array,
    pub ems: Array,
    pub enc_x: Array,
    pub enc_h: Array,
    pub dec_x: Array,
    pub dec_h: Array,
}

/// Widths of the masked vectors.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MaskDims {
    pub embedding: usize,
    pub hidden: usize,
}

/// `rows × len` matrix of independent Bernoulli(keep_prob) entries.
pub fn sample_mask(rows: usize, len: usize, keep_prob: f64, rng: &mut impl Rng) -> Result<Array> {
    check_keep_prob(keep_prob)?;
    let v = (0..rows * len)
        .map(|_| if rng.random::<f64>() < keep_prob { 1.0 } else { 0.0 })
        .collect();
    Array::matrix(rows, len, v)
}

pub fn check_keep_prob(keep_prob: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&keep_prob) {
        return Err(Error::Config(format!(
            "keep_prob must lie in [0, 1], got {keep_prob}"
        )));
    }
    Ok(())
}

/// Draws a full mask set with `rows` independent sequences.
pub fn sample_mask_set(
    dims: MaskDims,
    keep_prob: f64,
    rows: usize,
    rng: &mut impl Rng,
) -> Result<VariationalMaskSet> {
    check_keep_prob(keep_prob)?;
    let (e, h) = (dims.embedding, dims.hidden);
    Ok(VariationalMaskSet {
        keep_prob,
        emi: sample_mask(rows, e, keep_prob, rng)?,
        ems: sample_mask(rows, e, keep_prob, rng)?,
        enc_x: sample_mask(rows, e, keep_prob, rng)?,
        enc_h: sample_mask(rows, h, keep_prob, rng)?,
        dec_x: sample_mask(rows, e, keep_prob, rng)?,
        dec_h: sample_mask(rows, h, keep_prob, rng)?,
    })
}

impl VariationalMaskSet {
    pub fn rows(&self) -> usize {
        self.emi.rows()
    }

    /// Stacks single-sequence sets row-wise.
    pub fn stack(sets: &[VariationalMaskSet]) -> Result<VariationalMaskSet> {
        let first = sets
            .first()
            .ok_or_else(|| Error::Contract("cannot stack zero mask sets".into()))?;
        let pick = |f: fn(&VariationalMaskSet) -> &Array| -> Result<Array> {
            let cols = f(first).cols();
            let mut v = Vec::new();
            let mut rows = 0;
            for s in sets {
                let a = f(s);
                if a.cols() != cols {
                    return Err(Error::dim("mask stack", f(first).shape(), a.shape()));
                }
                rows += a.rows();
                v.extend_from_slice(a.values());
            }
            Array::matrix(rows, cols, v)
        };
        Ok(VariationalMaskSet {
            keep_prob: first.keep_prob,
            emi: pick(|s| &s.emi)?,
            ems: pick(|s| &s.ems)?,
            enc_x: pick(|s| &s.enc_x)?,
            enc_h: pick(|s| &s.enc_h)?,
            dec_x: pick(|s| &s.dec_x)?,
            dec_h: pick(|s| &s.dec_h)?,
        })
    }

    /// Registers the masks as constants.
    pub fn on_tape(&self, tape: &mut Tape) -> Result<MaskVars> {
        Ok(MaskVars {
            emi: tape.constant(self.emi.clone())?,
            ems: tape.constant(self.ems.clone())?,
            enc: StepMasks {
                x: tape.constant(self.enc_x.clone())?,
                h: tape.constant(self.enc_h.clone())?,
            },
            dec: StepMasks {
                x: tape.constant(self.dec_x.clone())?,
                h: tape.constant(self.dec_h.clone())?,
            },
        })
    }
}

/// Tape handles for a [`VariationalMaskSet`].
#[derive(Clone, Copy, Debug)]
pub struct MaskVars {
    pub emi: Var,
    pub ems: Var,
    pub enc: StepMasks,
    pub dec: StepMasks,
}

/// One LSTM step on the tape. Returns `(h, c)`.
pub fn lstm_cell(
    tape: &mut Tape,
    x: Var,
    h: Var,
    c: Var,
    w: LstmVars,
    masks: Option<StepMasks>,
) -> Result<(Var, Var)> {
    let d_h = tape.value(h).cols();
    let need_rows = tape.value(w.w).rows();
    let have = tape.value(x).cols() + d_h;
    if have != need_rows || tape.value(w.w).cols() != 4 * d_h {
        return Err(Error::dim(
            "lstm_step",
            tape.value(w.w).shape(),
            &[tape.value(x).rows(), have],
        ));
    }
    let (xin, hin) = match masks {
        Some(m) => (tape.mul(x, m.x)?, tape.mul(h, m.h)?),
        None => (x, h),
    };
    let z = tape.concat(&[xin, hin])?;
    let a = tape.matmul(z, w.w)?;
    let a = tape.add_row(a, w.bias)?;
    let i = tape.slice_cols(a, 0, d_h)?;
    let f = tape.slice_cols(a, d_h, 2 * d_h)?;
    let o = tape.slice_cols(a, 2 * d_h, 3 * d_h)?;
    let g = tape.slice_cols(a, 3 * d_h, 4 * d_h)?;
    let i = tape.sigmoid(i)?;
    let f = tape.sigmoid(f)?;
    let o = tape.sigmoid(o)?;
    let g = tape.tanh(g)?;
    let fc = tape.mul(f, c)?;
    let ig = tape.mul(i, g)?;
    let c_next = tape.add(fc, ig)?;
    let tc = tape.tanh(c_next)?;
    let h_next = tape.mul(o, tc)?;
    Ok((h_next, c_next))
}

/// Unrolls an LSTM over `inputs` from the zero state (or `initial`), reusing
/// the same mask handles at every step. Returns the hidden state per step.
pub fn unroll(
    tape: &mut Tape,
    inputs: &[Var],
    w: LstmVars,
    masks: Option<StepMasks>,
    initial: Option<(Var, Var)>,
) -> Result<Vec<Var>> {
    let first = *inputs
        .first()
        .ok_or_else(|| Error::Contract("cannot encode an empty sequence".into()))?;
    let rows = tape.value(first).rows();
    let d_h = tape.value(w.w).cols() / 4;
    let (mut h, mut c) = match initial {
        Some(s) => s,
        None => (
            tape.constant(Array::zeros(&[rows, d_h]))?,
            tape.constant(Array::zeros(&[rows, d_h]))?,
        ),
    };
    let mut hs = Vec::with_capacity(inputs.len());
    for &x in inputs {
        let (hn, cn) = lstm_cell(tape, x, h, c, w, masks)?;
        h = hn;
        c = cn;
        hs.push(h);
    }
    Ok(hs)
}

/// `ReLU(x · W) ⊙ z` on the tape.
pub fn embed_on_tape(tape: &mut Tape, x: Var, w: Var, mask: Option<Var>) -> Result<Var> {
    let a = tape.matmul(x, w)?;
    let a = tape.relu(a)?;
    match mask {
        Some(z) => tape.mul(a, z),
        None => Ok(a),
    }
}

fn lstm_vars(tape: &mut Tape, w: &LstmWeights) -> Result<LstmVars> {
    Ok(LstmVars {
        w: tape.constant(w.w.clone())?,
        bias: tape.constant(w.bias.clone())?,
    })
}

fn step_masks(tape: &mut Tape, masks: Option<(&Array, &Array)>) -> Result<Option<StepMasks>> {
    masks
        .map(|(x, h)| {
            Ok(StepMasks {
                x: tape.constant(x.clone())?,
                h: tape.constant(h.clone())?,
            })
        })
        .transpose()
}

/// Single LSTM step on concrete arrays.
pub fn lstm_step(
    x: &Array,
    state: &LstmState,
    w: &LstmWeights,
    masks: Option<(&Array, &Array)>,
) -> Result<LstmState> {
    if let Some((zx, zh)) = masks {
        if zx.shape() != x.shape() && zx.len() != x.len() {
            return Err(Error::dim("lstm_step mask", x.shape(), zx.shape()));
        }
        if zh.len() != state.h.len() {
            return Err(Error::dim("lstm_step mask", state.h.shape(), zh.shape()));
        }
    }
    let mut tape = Tape::new();
    let xv = tape.constant(as_rows(x, state.h.rows())?)?;
    let h = tape.constant(state.h.clone())?;
    let c = tape.constant(state.c.clone())?;
    let wv = lstm_vars(&mut tape, w)?;
    let reshaped = masks
        .map(|(zx, zh)| Ok::<_, Error>((as_rows(zx, state.h.rows())?, as_rows(zh, state.h.rows())?)))
        .transpose()?;
    let m = step_masks(&mut tape, reshaped.as_ref().map(|(a, b)| (a, b)))?;
    let (hn, cn) = lstm_cell(&mut tape, xv, h, c, wv, m)?;
    Ok(LstmState {
        h: tape.value(hn).clone(),
        c: tape.value(cn).clone(),
    })
}

fn as_rows(a: &Array, rows: usize) -> Result<Array> {
    if a.rows() == rows && a.shape().len() == 2 {
        return Ok(a.clone());
    }
    let cols = a.len() / rows.max(1);
    Array::matrix(rows, cols, a.values().to_vec())
}

/// `ReLU(x · W) ⊙ z` on concrete arrays.
pub fn embed(x: &Array, w: &Array, mask: Option<&Array>) -> Result<Array> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone())?;
    let wv = tape.constant(w.clone())?;
    let z = mask
        .map(|z| as_rows(z, x.rows()).and_then(|z| tape.constant(z)))
        .transpose()?;
    let out = embed_on_tape(&mut tape, xv, wv, z)?;
    Ok(tape.value(out).clone())
}

/// Runs the encoder over `xs` from the zero state and returns the final `h`.
pub fn encode(
    xs: &[Array],
    w: &LstmWeights,
    masks: Option<(&Array, &Array)>,
) -> Result<SummaryVector> {
    if xs.is_empty() {
        return Err(Error::Contract("cannot encode an empty sequence".into()));
    }
    let rows = xs[0].rows();
    let mut tape = Tape::new();
    let inputs = xs
        .iter()
        .map(|x| tape.constant(x.clone()))
        .collect::<Result<Vec<_>>>()?;
    let wv = lstm_vars(&mut tape, w)?;
    let reshaped = masks
        .map(|(zx, zh)| Ok::<_, Error>((as_rows(zx, rows)?, as_rows(zh, rows)?)))
        .transpose()?;
    let m = step_masks(&mut tape, reshaped.as_ref().map(|(a, b)| (a, b)))?;
    let hs = unroll(&mut tape, &inputs, wv, m, None)?;
    Ok(SummaryVector(tape.value(*hs.last().unwrap()).clone()))
}
