//! Moment-matched uncertainty, predictive NLL, pixel MSE and calibration.
//!
//! The head's two uncertainty channels are variances throughout, so the
//! aleatoric term averages `var_x + var_y` over samples.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::bbox::{BoundingBox, PredictiveSampleSet};
use crate::error::{Error, Result};

/// Values this far below zero are rounding noise and get clamped.
pub const NEGATIVE_TOLERANCE: f64 = -1e-9;

/// Per-step epistemic and aleatoric variance in pixels².
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyEstimate {
    pub epistemic: Vec<f64>,
    pub aleatoric: Vec<f64>,
    pub total: Vec<f64>,
    /// `total` averaged across steps.
    pub mean_total: f64,
    /// Set when `T = 1`: the epistemic term is then identically zero.
    pub single_sample: bool,
}

fn clamp_non_negative(v: f64, what: &str) -> Result<f64> {
    if v >= 0.0 {
        Ok(v)
    } else if v >= NEGATIVE_TOLERANCE {
        Ok(0.0)
    } else {
        Err(Error::Numerical(format!("{what} variance {v} is negative")))
    }
}

fn check_rectangular(samples: &PredictiveSampleSet) -> Result<(usize, usize)> {
    let t = samples.samples();
    if t == 0 {
        return Err(Error::Contract("empty sample set".into()));
    }
    let n = samples.horizon();
    if samples.params.iter().any(|s| s.len() != n) {
        return Err(Error::Contract("samples have different horizons".into()));
    }
    Ok((t, n))
}

/// Epistemic: trace of the (biased) sample covariance of the per-sample
/// mean boxes. Aleatoric: `(1/T) Σ (var_x + var_y)`.
pub fn moment_match(samples: &PredictiveSampleSet) -> Result<UncertaintyEstimate> {
    let (t, n) = check_rectangular(samples)?;
    let tf = t as f64;
    let mut est = UncertaintyEstimate {
        epistemic: Vec::with_capacity(n),
        aleatoric: Vec::with_capacity(n),
        total: Vec::with_capacity(n),
        mean_total: 0.0,
        single_sample: t == 1,
    };
    for j in 0..n {
        let mut mean = [0.0; 4];
        let mut alea = 0.0;
        for s in &samples.params {
            let g = &s[j];
            for (m, v) in mean.iter_mut().zip(g.mean.to_array()) {
                *m += v;
            }
            alea += g.var_x + g.var_y;
        }
        let mean = mean.map(|m| m / tf);
        let mut epi = 0.0;
        for s in &samples.params {
            for (m, v) in mean.iter().zip(s[j].mean.to_array()) {
                epi += (v - m) * (v - m);
            }
        }
        let epi = clamp_non_negative(epi / tf, "epistemic")?;
        let alea = clamp_non_negative(alea / tf, "aleatoric")?;
        est.epistemic.push(epi);
        est.aleatoric.push(alea);
        est.total.push(epi + alea);
    }
    est.mean_total = if n == 0 { 0.0 } else { est.total.iter().sum::<f64>() / n as f64 };
    Ok(est)
}

/// Coordinate system in which the predictive density is evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum DensityFrame {
    /// Boxes divided by `[W, H, W, H]`.
    Normalized { width: f64, height: f64 },
    Pixels,
}

impl DensityFrame {
    fn scale(self) -> [f64; 4] {
        match self {
            DensityFrame::Normalized { width, height } => [width, height, width, height],
            DensityFrame::Pixels => [1.0; 4],
        }
    }
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + libm::log(xs.iter().map(|x| libm::exp(x - max)).sum::<f64>())
}

/// `−log((1/T) Σ_i N(truth_j | μ_ij, Σ_ij))` for every step `j`.
pub fn nll_per_step(
    samples: &PredictiveSampleSet,
    truth: &[BoundingBox],
    frame: DensityFrame,
) -> Result<Vec<f64>> {
    let (t, n) = check_rectangular(samples)?;
    if truth.len() != n {
        return Err(Error::Contract(format!("{} truth boxes for horizon {n}", truth.len())));
    }
    let scale = frame.scale();
    let ln_t = libm::log(t as f64);
    let mut logs = Vec::with_capacity(t);
    let mut out = Vec::with_capacity(n);
    for (j, b) in truth.iter().enumerate() {
        let y = b.to_array();
        logs.clear();
        for s in &samples.params {
            let g = &s[j];
            let var = g.variances();
            let mu = g.mean.to_array();
            let mut ld = 0.0;
            for c in 0..4 {
                if !(var[c] > 0.0) || !var[c].is_finite() {
                    return Err(Error::Contract(format!(
                        "non-positive variance {} at step {j}",
                        var[c]
                    )));
                }
                let v = var[c] / (scale[c] * scale[c]);
                let r = (y[c] - mu[c]) / scale[c];
                ld -= 0.5 * (libm::log(2.0 * PI * v) + r * r / v);
            }
            logs.push(ld);
        }
        out.push(ln_t - log_sum_exp(&logs));
    }
    Ok(out)
}

/// Step-averaged predictive negative log-likelihood.
pub fn nll(samples: &PredictiveSampleSet, truth: &[BoundingBox], frame: DensityFrame) -> Result<f64> {
    let per = nll_per_step(samples, truth, frame)?;
    Ok(per.iter().sum::<f64>() / per.len().max(1) as f64)
}

/// Squared pixel error per step, averaged over the 4 coordinates.
pub fn mse_per_step(mean: &[BoundingBox], truth: &[BoundingBox]) -> Result<Vec<f64>> {
    if mean.len() != truth.len() {
        return Err(Error::Contract(format!(
            "{} predicted boxes for {} truth boxes",
            mean.len(),
            truth.len()
        )));
    }
    Ok(mean
        .iter()
        .zip(truth)
        .map(|(a, b)| {
            let (a, b) = (a.to_array(), b.to_array());
            (0..4).map(|c| (a[c] - b[c]) * (a[c] - b[c])).sum::<f64>() / 4.0
        })
        .collect())
}

pub fn mse(mean: &[BoundingBox], truth: &[BoundingBox]) -> Result<f64> {
    let per = mse_per_step(mean, truth)?;
    Ok(per.iter().sum::<f64>() / per.len().max(1) as f64)
}

/// Average ranks (ties share the mean of their positions), 1-based.
pub fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut out = alloc::vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut k = i;
        while k + 1 < order.len() && xs[order[k + 1]] == xs[order[i]] {
            k += 1;
        }
        let r = (i + k) as f64 / 2.0 + 1.0;
        for &o in &order[i..=k] {
            out[o] = r;
        }
        i = k + 1;
    }
    out
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        None
    } else {
        Some(sxy / libm::sqrt(sxx * syy))
    }
}

/// Spearman rank correlation; `None` when either side is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<Option<f64>> {
    if x.len() != y.len() {
        return Err(Error::Contract(format!("{} vs {} values", x.len(), y.len())));
    }
    if x.len() < 2 {
        return Err(Error::Contract("rank correlation needs at least 2 pairs".into()));
    }
    Ok(pearson(&ranks(x), &ranks(y)))
}

/// One (uncertainty, squared error) observation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationPair {
    pub uncertainty: f64,
    pub sq_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeBin {
    /// Largest uncertainty in the bin.
    pub upper_uncertainty: f64,
    pub count: usize,
    /// Max of `ln(sq_error)` within the bin.
    pub max_log_sq_error: f64,
    /// Cumulative max over this and all lower bins.
    pub envelope: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub label: String,
    pub pairs: Vec<CalibrationPair>,
    pub spearman: Option<f64>,
    pub bins: Vec<EnvelopeBin>,
}

fn log_error(e: f64) -> f64 {
    libm::log(e.max(f64::MIN_POSITIVE))
}

/// Rank correlation plus a maximum-error envelope over equal-count
/// uncertainty bins.
pub fn calibration_report(
    label: &str,
    pairs: &[CalibrationPair],
    num_bins: usize,
) -> Result<CalibrationReport> {
    if pairs.len() < 2 {
        return Err(Error::Contract("calibration needs at least 2 pairs".into()));
    }
    if num_bins == 0 {
        return Err(Error::Contract("num_bins must be at least 1".into()));
    }
    if pairs.iter().any(|p| !p.uncertainty.is_finite() || !p.sq_error.is_finite()) {
        return Err(Error::Numerical("non-finite calibration pair".into()));
    }
    let u: Vec<f64> = pairs.iter().map(|p| p.uncertainty).collect();
    let e: Vec<f64> = pairs.iter().map(|p| p.sq_error).collect();
    let rho = spearman(&u, &e)?;

    let mut sorted = pairs.to_vec();
    sorted.sort_by(|a, b| a.uncertainty.total_cmp(&b.uncertainty));
    let bins = num_bins.min(sorted.len());
    let mut out = Vec::with_capacity(bins);
    let mut running = f64::NEG_INFINITY;
    for b in 0..bins {
        let lo = b * sorted.len() / bins;
        let hi = (b + 1) * sorted.len() / bins;
        let chunk = &sorted[lo..hi];
        let max = chunk.iter().map(|p| log_error(p.sq_error)).fold(f64::NEG_INFINITY, f64::max);
        running = running.max(max);
        out.push(EnvelopeBin {
            upper_uncertainty: chunk[chunk.len() - 1].uncertainty,
            count: chunk.len(),
            max_log_sq_error: max,
            envelope: running,
        });
    }
    Ok(CalibrationReport {
        label: label.into(),
        pairs: pairs.to_vec(),
        spearman: rho,
        bins: out,
    })
}

/// Steps (1-based offsets `t+k`) that get their own calibration report.
pub const CALIBRATION_STEPS: [usize; 3] = [5, 10, 15];

/// Per-sequence observations for calibration: step-wise total uncertainty
/// and step-wise squared error.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceErrors {
    pub total: Vec<f64>,
    pub sq_error: Vec<f64>,
}

/// `all` pairs sequence-averaged uncertainty with sequence MSE; `t+k`
/// pairs the values at step `k`. Splits beyond the horizon are skipped.
pub fn calibration_splits(seqs: &[SequenceErrors], num_bins: usize) -> Result<Vec<CalibrationReport>> {
    let avg = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
    let all: Vec<_> = seqs
        .iter()
        .map(|s| CalibrationPair {
            uncertainty: avg(&s.total),
            sq_error: avg(&s.sq_error),
        })
        .collect();
    let mut out = alloc::vec![calibration_report("all", &all, num_bins)?];
    for k in CALIBRATION_STEPS {
        let pairs: Vec<_> = seqs
            .iter()
            .filter(|s| s.total.len() >= k && s.sq_error.len() >= k)
            .map(|s| CalibrationPair {
                uncertainty: s.total[k - 1],
                sq_error: s.sq_error[k - 1],
            })
            .collect();
        if pairs.len() >= 2 {
            out.push(calibration_report(&format!("t+{k}"), &pairs, num_bins)?);
        }
    }
    Ok(out)
}
