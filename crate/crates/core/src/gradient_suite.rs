//! Finite-difference verification of both streams on fresh tiny models.
//!
//! Central differences lose roughly `u·|f|/eps` to rounding, so coordinates
//! whose true gradient is below ~1e-6 cannot meet a 1e-5 relative bound. The
//! problem shape (2 rows, 6 past and 6 future steps) and `eps = 1e-4` keep
//! recurrent paths well excited while staying clear of ReLU/max-pool kinks.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bbox::{BboxConfig, BboxModel, BboxVars, BoundingBox, PredictionTask, Variant};
use crate::error::Result;
use crate::numerics::{finite_difference_check, GradCheckReport};
use crate::odometry::{OdoConfig, OdoModel, OdoTask, OdometryState, SceneRaster};
use crate::recurrent::sample_mask_set;

pub const SUITE_EPS: f64 = 1e-4;
pub const SUITE_TOLERANCE: f64 = 1e-5;
const ROWS: usize = 2;
const PAST: usize = 6;
const FUTURE: usize = 6;

fn odometry(rng: &mut ChaCha8Rng) -> OdometryState {
    OdometryState::new(rng.random_range(0.0..12.0), rng.random_range(-15.0..15.0))
}

fn bbox_task(rng: &mut ChaCha8Rng) -> PredictionTask {
    let b = |rng: &mut ChaCha8Rng| {
        let x = rng.random_range(0.0..400.0);
        let y = rng.random_range(50.0..150.0);
        BoundingBox::new(x, y, x + rng.random_range(5.0..30.0), y + rng.random_range(20.0..80.0))
    };
    PredictionTask {
        past_boxes: (0..PAST).map(|_| b(rng)).collect(),
        past_odometry: (0..PAST).map(|_| odometry(rng)).collect(),
        future_odometry: (0..FUTURE).map(|_| odometry(rng)).collect(),
        future_boxes: Some((0..FUTURE).map(|_| b(rng)).collect()),
        horizon: FUTURE,
    }
}

fn odo_task(rng: &mut ChaCha8Rng, res: usize) -> OdoTask {
    OdoTask {
        past: (0..PAST).map(|_| odometry(rng)).collect(),
        raster: Some(
            SceneRaster::new(res, res, (0..res * res).map(|_| rng.random::<u8>()).collect())
                .expect("square raster"),
        ),
        future: Some((0..FUTURE).map(|_| odometry(rng)).collect()),
        horizon: FUTURE,
    }
}

/// Bayesian box stream with a fixed mask draw.
pub fn check_bbox_stream(seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = BboxConfig {
        embedding: 4,
        hidden: 3,
        variant: Variant::Bayesian,
        lambda: 1e-2,
        ..BboxConfig::tiny()
    };
    let model = BboxModel::new(cfg, &mut rng)?;
    let tasks: Vec<_> = (0..ROWS).map(|_| bbox_task(&mut rng)).collect();
    let inputs = model.prepare(&tasks.iter().collect::<Vec<_>>())?;
    let masks = sample_mask_set(model.mask_dims(), model.config.keep_prob, ROWS, &mut rng)?;
    let targets = inputs.targets.clone().expect("tasks carry targets");
    finite_difference_check(&model.params, SUITE_EPS, |tape, vars| {
        let bv = BboxVars::from_map(vars)?;
        let mv = masks.on_tape(tape)?;
        let steps = model.forward_on_tape(tape, &bv, &inputs, Some(&mv))?;
        Ok(model.loss_on_tape(tape, vars, &steps, &targets)?.total)
    })
}

/// Odometry stream including the convolutional encoder.
pub fn check_odometry_stream(seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = OdoModel::new(OdoConfig::tiny(), &mut rng)?;
    let res = model.config.visual.as_ref().map_or(8, |v| v.resolution);
    let tasks: Vec<_> = (0..ROWS).map(|_| odo_task(&mut rng, res)).collect();
    let batch = model.prepare(&tasks.iter().collect::<Vec<_>>())?;
    let targets = batch.targets.clone().expect("tasks carry targets");
    finite_difference_check(&model.params, SUITE_EPS, |tape, vars| {
        let preds = model.forward_on_tape(tape, vars, &batch)?;
        model.loss_on_tape(tape, &preds, &targets)
    })
}

/// `(stream, report)` for every stream.
pub fn run(seed: u64) -> Result<Vec<(&'static str, GradCheckReport)>> {
    Ok(alloc::vec![
        ("bbox", check_bbox_stream(seed)?),
        ("odometry", check_odometry_stream(seed)?),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn both_streams_pass_at_seed_zero() {
        for (name, r) in run(0).unwrap() {
            assert!(r.max_rel_error < SUITE_TOLERANCE, "{name}: {r:?}");
            assert!(r.coordinates > 100);
        }
    }

    #[test]
    fn homoscedastic_and_autoregressive_paths() {
        for (variant, autoregressive) in [(Variant::Homoscedastic, false), (Variant::Bayesian, true)] {
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let cfg = BboxConfig {
                embedding: 4,
                hidden: 3,
                variant,
                autoregressive,
                lambda: 1e-2,
                ..BboxConfig::tiny()
            };
            let model = BboxModel::new(cfg, &mut rng).unwrap();
            let tasks: Vec<_> = (0..ROWS).map(|_| bbox_task(&mut rng)).collect();
            let inputs = model.prepare(&tasks.iter().collect::<Vec<_>>()).unwrap();
            let targets = inputs.targets.clone().unwrap();
            let r = finite_difference_check(&model.params, SUITE_EPS, |tape, vars| {
                let bv = BboxVars::from_map(vars)?;
                let steps = model.forward_on_tape(tape, &bv, &inputs, None)?;
                Ok(model.loss_on_tape(tape, vars, &steps, &targets)?.total)
            })
            .unwrap();
            assert!(r.max_rel_error < SUITE_TOLERANCE, "{variant} ar={autoregressive}: {r:?}");
        }
    }
}
