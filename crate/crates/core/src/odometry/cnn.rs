//! Convolutional visual encoder over grayscale scene rasters.
//!
//! Activations are stored as `(batch·height·width) × channels` matrices.
//! Convolutions are an im2col gather followed by a matmul; max pooling is a
//! gather of the per-window argmax, which routes gradients to the winner.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Array, ParamSet, Tape, Var, GATHER_ZERO};

/// Fixed kernel size.
pub const KERNEL: usize = 3;

const RELU_BIAS: f64 = 0.01;

/// Grayscale raster, row-major 8-bit cells; cell value is `u8 / 255`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SceneRaster {
    pub width: usize,
    pub height: usize,
    pub cells: Vec<u8>,
}

impl SceneRaster {
    pub fn new(width: usize, height: usize, cells: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || cells.len() != width * height {
            return Err(Error::dim("raster", &[height, width], &[cells.len()]));
        }
        Ok(SceneRaster {
            width,
            height,
            cells,
        })
    }

    pub fn filled(width: usize, height: usize, cell: u8) -> Self {
        SceneRaster {
            width,
            height,
            cells: vec![cell; width * height],
        }
    }

    pub fn value(&self, row: usize, col: usize) -> f64 {
        self.cells[row * self.width + col] as f64 / 255.0
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.cells.iter().map(|&c| c as f64 / 255.0)
    }

    /// Left-right mirror image.
    pub fn mirrored(&self) -> Self {
        let mut cells = Vec::with_capacity(self.cells.len());
        for row in self.cells.chunks(self.width) {
            cells.extend(row.iter().rev());
        }
        SceneRaster {
            width: self.width,
            height: self.height,
            cells,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CnnConfig {
    pub resolution: usize,
    /// Output channels of each 3×3 conv layer.
    pub channels: Vec<usize>,
    /// A 2×2 max pool follows every `pool_every` conv layers.
    pub pool_every: usize,
    /// Hidden dense widths (ReLU).
    pub dense: Vec<usize>,
    /// Width of the final tanh layer, i.e. of `v_vis`.
    pub output: usize,
}

impl CnnConfig {
    /// Desk scale: 2 conv layers, each pooled, one dense hidden layer.
    pub fn desk() -> Self {
        CnnConfig {
            resolution: 32,
            channels: vec![4, 8],
            pool_every: 1,
            dense: vec![32],
            output: 16,
        }
    }

    /// Ten conv layers with doubling filters and three dense layers.
    pub fn paper_scale() -> Self {
        CnnConfig {
            resolution: 32,
            channels: vec![32, 32, 64, 64, 128, 128, 256, 256, 512, 512],
            pool_every: 2,
            dense: vec![1024, 256],
            output: 128,
        }
    }

    /// Small profile for oracle and gradient tests.
    pub fn tiny() -> Self {
        CnnConfig {
            resolution: 8,
            channels: vec![2, 2],
            pool_every: 2,
            dense: vec![4],
            output: 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() || self.pool_every == 0 || self.output == 0 {
            return Err(Error::Config("cnn needs conv layers, a pool interval and an output".into()));
        }
        let pools = self.channels.len() / self.pool_every;
        if self.resolution >> pools == 0 || self.resolution % (1 << pools) != 0 {
            return Err(Error::Config(format!(
                "resolution {} cannot be pooled {pools} times",
                self.resolution
            )));
        }
        Ok(())
    }

    fn flat_width(&self) -> usize {
        let pools = self.channels.len() / self.pool_every;
        let side = self.resolution >> pools;
        side * side * self.channels.last().unwrap()
    }

    /// He-uniform for ReLU layers, Glorot-uniform for the final tanh layer.
    /// ReLU biases start slightly positive so no unit sits exactly at the kink.
    pub fn init(&self, rng: &mut impl Rng, prefix: &str) -> Result<ParamSet> {
        self.validate()?;
        let mut p = ParamSet::new();
        let mut c_in = 1;
        for (i, &c) in self.channels.iter().enumerate() {
            let fan_in = KERNEL * KERNEL * c_in;
            p.insert(format!("{prefix}conv{i}.w"), uniform(fan_in, c, libm::sqrt(6.0 / fan_in as f64), rng));
            p.insert(format!("{prefix}conv{i}.b"), Array::filled(&[c], RELU_BIAS));
            c_in = c;
        }
        let mut w_in = self.flat_width();
        for (i, &d) in self.dense.iter().chain([&self.output]).enumerate() {
            let bound = if i == self.dense.len() {
                libm::sqrt(6.0 / (w_in + d) as f64)
            } else {
                libm::sqrt(6.0 / w_in as f64)
            };
            p.insert(format!("{prefix}fc{i}.w"), uniform(w_in, d, bound, rng));
            let b = if i == self.dense.len() { 0.0 } else { RELU_BIAS };
            p.insert(format!("{prefix}fc{i}.b"), Array::filled(&[d], b));
            w_in = d;
        }
        Ok(p)
    }

    /// Names of matrices (not biases) in this encoder.
    pub fn weight_names(&self, prefix: &str) -> Vec<String> {
        let conv = (0..self.channels.len()).map(|i| format!("{prefix}conv{i}.w"));
        let fc = (0..=self.dense.len()).map(|i| format!("{prefix}fc{i}.w"));
        conv.chain(fc).collect()
    }
}

fn uniform(rows: usize, cols: usize, bound: f64, rng: &mut impl Rng) -> Array {
    let v = (0..rows * cols).map(|_| rng.random_range(-bound..bound)).collect();
    Array::matrix(rows, cols, v).expect("positive extents")
}

/// Stacks rasters into a `(batch·h·w) × 1` array.
pub fn stack_rasters(rasters: &[&SceneRaster], resolution: usize) -> Result<Array> {
    let mut v = Vec::with_capacity(rasters.len() * resolution * resolution);
    for r in rasters {
        if r.width != resolution || r.height != resolution {
            return Err(Error::dim(
                "encode_visual",
                &[resolution, resolution],
                &[r.height, r.width],
            ));
        }
        v.extend(r.values());
    }
    Array::matrix(rasters.len() * resolution * resolution, 1, v)
}

fn im2col_index(batch: usize, side: usize, c_in: usize) -> Vec<u32> {
    let mut idx = Vec::with_capacity(batch * side * side * KERNEL * KERNEL * c_in);
    for b in 0..batch {
        for y in 0..side {
            for x in 0..side {
                for ky in 0..KERNEL {
                    for kx in 0..KERNEL {
                        let yy = y as isize + ky as isize - 1;
                        let xx = x as isize + kx as isize - 1;
                        let inside = yy >= 0 && xx >= 0 && (yy as usize) < side && (xx as usize) < side;
                        for c in 0..c_in {
                            idx.push(if inside {
                                (((b * side + yy as usize) * side + xx as usize) * c_in + c) as u32
                            } else {
                                GATHER_ZERO
                            });
                        }
                    }
                }
            }
        }
    }
    idx
}

/// 3×3 same-padding cross-correlation plus bias; no activation.
pub fn conv_on_tape(
    tape: &mut Tape,
    x: Var,
    batch: usize,
    side: usize,
    w: Var,
    b: Var,
) -> Result<Var> {
    let c_in = tape.value(x).cols();
    let rows = batch * side * side;
    if tape.value(x).rows() != rows || tape.value(w).rows() != KERNEL * KERNEL * c_in {
        return Err(Error::dim("conv", tape.value(x).shape(), tape.value(w).shape()));
    }
    let cols = tape.gather(x, im2col_index(batch, side, c_in), vec![rows, KERNEL * KERNEL * c_in])?;
    let y = tape.matmul(cols, w)?;
    tape.add_row(y, b)
}

/// 2×2 stride-2 max pool.
pub fn max_pool_on_tape(tape: &mut Tape, x: Var, batch: usize, side: usize) -> Result<Var> {
    let xv = tape.value(x);
    let c = xv.cols();
    let half = side / 2;
    let vals = xv.values();
    let mut idx = Vec::with_capacity(batch * half * half * c);
    for b in 0..batch {
        for y in 0..half {
            for xq in 0..half {
                for ch in 0..c {
                    let mut best = usize::MAX;
                    for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                        let i = ((b * side + 2 * y + dy) * side + 2 * xq + dx) * c + ch;
                        if best == usize::MAX || vals[i] > vals[best] {
                            best = i;
                        }
                    }
                    idx.push(best as u32);
                }
            }
        }
    }
    tape.gather(x, idx, vec![batch * half * half, c])
}

/// Records the visual encoder; `rasters` is `(batch·r·r) × 1`.
pub fn encode_visual_on_tape(
    tape: &mut Tape,
    config: &CnnConfig,
    params: &dyn Fn(&str) -> Result<Var>,
    rasters: Var,
    batch: usize,
) -> Result<Var> {
    let mut side = config.resolution;
    let mut x = rasters;
    for i in 0..config.channels.len() {
        let y = conv_on_tape(tape, x, batch, side, params(&format!("conv{i}.w"))?, params(&format!("conv{i}.b"))?)?;
        x = tape.relu(y)?;
        if (i + 1) % config.pool_every == 0 {
            x = max_pool_on_tape(tape, x, batch, side)?;
            side /= 2;
        }
    }
    let flat = side * side * tape.value(x).cols();
    x = tape.reshape(x, vec![batch, flat])?;
    let layers = config.dense.len() + 1;
    for i in 0..layers {
        let y = tape.matmul(x, params(&format!("fc{i}.w"))?)?;
        let y = tape.add_row(y, params(&format!("fc{i}.b"))?)?;
        x = if i + 1 == layers { tape.tanh(y)? } else { tape.relu(y)? };
    }
    Ok(x)
}

/// `v_vis` for each raster, evaluated directly.
pub fn encode_visual(config: &CnnConfig, params: &ParamSet, prefix: &str, rasters: &[&SceneRaster]) -> Result<Array> {
    let mut tape = Tape::new();
    let x = tape.constant(stack_rasters(rasters, config.resolution)?)?;
    let mut cache = alloc::collections::BTreeMap::new();
    for (k, v) in params.iter() {
        if let Some(s) = k.strip_prefix(prefix) {
            cache.insert(String::from(s), tape.constant(v.clone())?);
        }
    }
    let lookup = |name: &str| {
        cache
            .get(name)
            .copied()
            .ok_or_else(|| Error::Contract(format!("missing parameter {prefix}{name}")))
    };
    let out = encode_visual_on_tape(&mut tape, config, &lookup, x, rasters.len())?;
    Ok(tape.value(out).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn conv_oracle(img: &[f64], side: usize, k: &[f64; 9], bias: f64) -> Vec<f64> {
        let mut out = vec![0.0; side * side];
        for y in 0..side {
            for x in 0..side {
                let mut acc = bias;
                for ky in 0..3 {
                    for kx in 0..3 {
                        let (yy, xx) = (y as isize + ky as isize - 1, x as isize + kx as isize - 1);
                        if yy >= 0 && xx >= 0 && (yy as usize) < side && (xx as usize) < side {
                            acc += k[ky * 3 + kx] * img[yy as usize * side + xx as usize];
                        }
                    }
                }
                out[y * side + x] = acc;
            }
        }
        out
    }

    #[test]
    fn conv_matches_sliding_window() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let img: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
            let k: [f64; 9] = core::array::from_fn(|_| rng.random_range(-1.0..1.0));
            let bias = rng.random_range(-1.0..1.0);
            let mut tape = Tape::new();
            let x = tape.constant(Array::matrix(16, 1, img.clone()).unwrap()).unwrap();
            let w = tape.constant(Array::matrix(9, 1, k.to_vec()).unwrap()).unwrap();
            let b = tape.constant(Array::scalar(bias)).unwrap();
            let y = conv_on_tape(&mut tape, x, 1, 4, w, b).unwrap();
            let want = conv_oracle(&img, 4, &k, bias);
            for (a, b) in tape.value(y).values().iter().zip(&want) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn pool_picks_window_max() {
        let mut tape = Tape::new();
        let v: Vec<f64> = (0..16).map(|i| ((i * 7) % 16) as f64).collect();
        let x = tape.constant(Array::matrix(16, 1, v.clone()).unwrap()).unwrap();
        let y = max_pool_on_tape(&mut tape, x, 1, 4).unwrap();
        let want: Vec<f64> = (0..4)
            .map(|q| {
                let (qy, qx) = (q / 2, q % 2);
                [(0, 0), (0, 1), (1, 0), (1, 1)]
                    .iter()
                    .map(|(dy, dx)| v[(2 * qy + dy) * 4 + 2 * qx + dx])
                    .fold(f64::MIN, f64::max)
            })
            .collect();
        assert_eq!(tape.value(y).values(), want.as_slice());
    }

    #[test]
    fn zero_image_zero_bias_gives_zero_features() {
        let cfg = CnnConfig::desk();
        let mut p = cfg.init(&mut ChaCha8Rng::seed_from_u64(2), "").unwrap();
        for (name, a) in p.iter_mut() {
            if name.ends_with(".b") {
                *a = Array::zeros(a.shape());
            }
        }
        let img = SceneRaster::filled(32, 32, 0);
        let v = encode_visual(&cfg, &p, "", &[&img]).unwrap();
        assert_eq!(v.shape(), &[1, 16]);
        assert!(v.values().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn resolution_mismatch_rejected() {
        let cfg = CnnConfig::desk();
        let p = cfg.init(&mut ChaCha8Rng::seed_from_u64(3), "").unwrap();
        let img = SceneRaster::filled(16, 16, 3);
        assert!(matches!(
            encode_visual(&cfg, &p, "", &[&img]),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn paper_scale_profile_is_consistent() {
        let cfg = CnnConfig::paper_scale();
        cfg.validate().unwrap();
        assert_eq!(cfg.channels.len(), 10);
        assert_eq!(cfg.flat_width(), 512);
    }

    #[test]
    fn mirror_is_involution() {
        let r = SceneRaster::new(3, 2, vec![1, 2, 3, 4, 5, 6]).unwrap();
        assert_eq!(r.mirrored().cells, vec![3, 2, 1, 6, 5, 4]);
        assert_eq!(r.mirrored().mirrored(), r);
    }
}
