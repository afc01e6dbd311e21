//! Randomized invariants of the gradient engine, the recurrent layers and
//! the odometry augmentation.

use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fse_core::numerics::{Array, Gradients, ParamSet, Tape, Var};
use fse_core::odometry::{augment_flip, OdoTask, OdometryState};
use fse_core::recurrent::{lstm_step, sample_mask, unroll, LstmState, LstmVars, LstmWeights, StepMasks};
use fse_core::Result;

fn random(rows: usize, cols: usize, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Array {
    let v = (0..rows * cols).map(|_| rng.random_range(lo..hi)).collect();
    Array::matrix(rows, cols, v).unwrap()
}

type Build = fn(&mut Tape, &BTreeMap<String, Var>) -> Result<Var>;

/// Each primitive, applied to parameters `a` (2×3), `b` (3×2) and `r` (1×3),
/// reduced by a fixed random weighting so every output coordinate matters.
fn primitives() -> Vec<(&'static str, Build)> {
    vec![
        ("matmul", |t, p| t.matmul(p["a"], p["b"])),
        ("add", |t, p| t.add(p["a"], p["a2"])),
        ("sub", |t, p| t.sub(p["a"], p["a2"])),
        ("mul", |t, p| t.mul(p["a"], p["a2"])),
        ("add_row", |t, p| t.add_row(p["a"], p["r"])),
        ("scale", |t, p| t.scale(p["a"], -1.7)),
        ("sigmoid", |t, p| t.sigmoid(p["a"])),
        ("tanh", |t, p| t.tanh(p["a"])),
        ("relu", |t, p| t.relu(p["a"])),
        ("exp", |t, p| t.exp(p["a"])),
        ("log", |t, p| {
            let e = t.exp(p["a"])?;
            t.log(e)
        }),
        ("concat", |t, p| t.concat(&[p["a"], p["a2"]])),
        ("slice_cols", |t, p| t.slice_cols(p["a"], 1, 3)),
        ("reshape", |t, p| t.reshape(p["a"], vec![3, 2])),
        ("sum", |t, p| t.sum(p["a"])),
        ("sum_squares", |t, p| t.sum_squares(p["a"])),
    ]
}

fn weighted_sum(t: &mut Tape, y: Var, seed: u64) -> Result<Var> {
    let shape = t.value(y).shape().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = shape.iter().product();
    let w = Array::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())?;
    let w = t.constant(w)?;
    let p = t.mul(y, w)?;
    t.sum(p)
}

/// Moves entries away from the ReLU kink so central differences stay on one side.
fn off_kink(a: Array) -> Array {
    a.map(|x| if x.abs() < 1e-3 { x + 2e-3f64.copysign(x) } else { x })
}

/// Central differences on every coordinate. Passes when
/// |analytic − numeric| ≤ rel·(|analytic| + |numeric|) + 1e-10: near-zero true
/// gradients (tiny weights, masked paths) leave only roundoff for a pure
/// relative error to measure.
fn coordinates_match<F>(params: &ParamSet, eps: f64, rel: f64, f: F) -> core::result::Result<(), String>
where
    F: Fn(&mut Tape, &BTreeMap<String, Var>) -> Result<Var>,
{
    let eval = |p: &ParamSet| -> (f64, Gradients) {
        let mut t = Tape::new();
        let vars = t.params(p).unwrap();
        let out = f(&mut t, &vars).unwrap();
        let value = t.value(out).values()[0];
        (value, t.backward(out).unwrap())
    };
    let (_, grads) = eval(params);
    for (name, base) in params.iter() {
        for i in 0..base.len() {
            let at = |d: f64| {
                let mut v = base.values().to_vec();
                v[i] += d;
                let mut moved = params.clone();
                moved.insert(name, Array::new(base.shape().to_vec(), v).unwrap());
                eval(&moved).0
            };
            let numeric = (at(eps) - at(-eps)) / (2.0 * eps);
            let analytic = grads.get(name).unwrap().values()[i];
            if (analytic - numeric).abs() > rel * (analytic.abs() + numeric.abs()) + 1e-10 {
                return Err(format!("{name}[{i}]: analytic {analytic} vs numeric {numeric}"));
            }
        }
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn every_primitive_matches_central_differences(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        params.insert("a", off_kink(random(2, 3, -2.0, 2.0, &mut rng)));
        params.insert("a2", random(2, 3, -2.0, 2.0, &mut rng));
        params.insert("b", random(3, 2, -2.0, 2.0, &mut rng));
        params.insert("r", random(1, 3, -2.0, 2.0, &mut rng));
        for (name, op) in primitives() {
            let checked = coordinates_match(&params, 1e-4, 1e-6, |t, p| {
                let y = op(t, p)?;
                weighted_sum(t, y, seed)
            });
            prop_assert!(checked.is_ok(), "{name}: {checked:?}");
        }
    }

    #[test]
    fn matmul_with_identity_is_exact(seed in any::<u64>(), rows in 1usize..6, cols in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random(rows, cols, -1e3, 1e3, &mut rng);
        prop_assert_eq!(a.matmul(&Array::identity(cols)).unwrap(), a);
    }

    #[test]
    fn replay_is_bitwise(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = Tape::new();
        let a = t.param("a", random(3, 4, -2.0, 2.0, &mut rng)).unwrap();
        let b = t.param("b", random(4, 4, -2.0, 2.0, &mut rng)).unwrap();
        let m = t.matmul(a, b).unwrap();
        let s = t.sigmoid(m).unwrap();
        let e = t.exp(s).unwrap();
        let _ = t.sum_squares(e).unwrap();
        prop_assert!(t.replay_is_bitwise_identical().unwrap());
    }

    #[test]
    fn hidden_state_stays_in_unit_box(seed in any::<u64>(), steps in 1usize..60, scale in 0.1f64..50.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (d_in, d_h) = (3, 5);
        let w = LstmWeights::new(
            random(d_in + d_h, 4 * d_h, -scale, scale, &mut rng),
            Array::vector((0..4 * d_h).map(|_| rng.random_range(-scale..scale)).collect()),
        )
        .unwrap();
        let mut s = LstmState::zeros(2, d_h);
        for _ in 0..steps {
            let x = random(2, d_in, -scale, scale, &mut rng);
            s = lstm_step(&x, &s, &w, None).unwrap();
            prop_assert!(s.h.values().iter().all(|h| h.abs() <= 1.0));
        }
    }

    #[test]
    fn unrolled_lstm_gradients_match(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (d_in, d_h, rows) = (2, 3, 2);
        let w = LstmWeights::init(d_in, d_h, &mut rng);
        let mut params = ParamSet::new();
        params.insert("w", w.w);
        params.insert("bias", w.bias);
        let xs: Vec<Array> = (0..5).map(|_| random(rows, d_in, -2.0, 2.0, &mut rng)).collect();
        let zx = sample_mask(rows, d_in, 0.65, &mut rng).unwrap();
        let zh = sample_mask(rows, d_h, 0.65, &mut rng).unwrap();
        let checked = coordinates_match(&params, 1e-5, 1e-5, |t, p| {
            let inputs = xs.iter().map(|x| t.constant(x.clone())).collect::<Result<Vec<_>>>()?;
            let masks = StepMasks { x: t.constant(zx.clone())?, h: t.constant(zh.clone())? };
            let hs = unroll(t, &inputs, LstmVars { w: p["w"], bias: p["bias"] }, Some(masks), None)?;
            weighted_sum(t, *hs.last().unwrap(), seed)
        });
        prop_assert!(checked.is_ok(), "{checked:?}");
    }

    #[test]
    fn flip_is_an_involution(seed in any::<u64>(), m in 1usize..10, n in 1usize..10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut odo = |k: usize| -> Vec<OdometryState> {
            (0..k).map(|_| OdometryState::new(rng.random_range(0.0..15.0), rng.random_range(-30.0..30.0))).collect()
        };
        let task = OdoTask { past: odo(m), raster: None, future: Some(odo(n)), horizon: n };
        let flipped = augment_flip(&task);
        prop_assert!(flipped.past.iter().zip(&task.past).all(|(a, b)| a.steering == -b.steering && a.speed == b.speed));
        prop_assert_eq!(augment_flip(&flipped), task);
    }
}
