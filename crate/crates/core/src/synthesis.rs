//! Synthetic hazy-clean pair generation through the Atmospheric Scattering
//! Model: `I = J·t + A·(1 − t)` with transmission `t = exp(−β·d)` over a
//! procedural depth map.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::rng_from_seed;
use crate::tensor::ImageTensor;

/// Procedural depth source for the scattering model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DepthKind {
    LinearRamp,
    Radial,
    ValueNoise,
}

/// Per-image haze parameters. `atmospheric_light` is nominally near-white
/// (each component sampled in [0.7, 1.0] by default) and `beta` is the
/// scattering coefficient per unit depth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HazeParams {
    pub atmospheric_light: [f64; 3],
    pub beta: f64,
    pub depth_kind: DepthKind,
    pub seed: u64,
}

impl HazeParams {
    pub fn validate(&self) -> Result<()> {
        if self.beta < 0.0 || !self.beta.is_finite() {
            return Err(Error::InvalidRange(format!("beta {} < 0", self.beta)));
        }
        for (i, &a) in self.atmospheric_light.iter().enumerate() {
            if !(0.0..=1.0).contains(&a) {
                return Err(Error::InvalidRange(format!(
                    "atmospheric light component {i} = {a} outside [0, 1]"
                )));
            }
        }
        Ok(())
    }
}

/// Sampling ranges for [`sample_haze_params`]. `tint` multiplies the sampled
/// atmospheric base per channel, which yields a global color cast when it is
/// not all ones (the color-shift probe set uses this).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HazeRanges {
    pub beta: (f64, f64),
    pub atmospheric: (f64, f64),
    pub tint: [f64; 3],
    /// Randomly permute the tint channels per image. A fixed cast is
    /// learnable by a static per-channel bias; a shuffled cast forces any
    /// color correction to come from per-image statistics.
    pub tint_shuffle: bool,
    pub depth_kinds: Vec<DepthKind>,
}

impl Default for HazeRanges {
    fn default() -> Self {
        Self {
            beta: (0.6, 1.8),
            atmospheric: (0.7, 1.0),
            tint: [1.0, 1.0, 1.0],
            tint_shuffle: false,
            depth_kinds: vec![DepthKind::LinearRamp, DepthKind::Radial, DepthKind::ValueNoise],
        }
    }
}

fn check_range(lo: f64, hi: f64, what: &str) -> Result<()> {
    if !(lo.is_finite() && hi.is_finite()) || lo > hi {
        return Err(Error::InvalidRange(format!("{what}: [{lo}, {hi}]")));
    }
    Ok(())
}

/// Seeded multi-octave value noise in [0, 1] (min 0, max 1 after
/// normalization, unless the field is constant). Used for depth maps and
/// for procedural clean images.
pub fn value_noise_field(
    height: usize,
    width: usize,
    seed: u64,
    cell: usize,
    octaves: usize,
) -> ImageTensor {
    let cell = cell.max(1);
    let mut field = vec![0.0f64; height * width];
    let mut amplitude = 1.0;
    for octave in 0..octaves.max(1) {
        let spacing = (cell >> octave).max(1);
        let gw = width / spacing + 2;
        let gh = height / spacing + 2;
        let mut rng = rng_from_seed(seed.wrapping_add(octave as u64).wrapping_mul(0x9e37_79b9));
        let lattice: Vec<f64> = (0..gw * gh).map(|_| rng.gen::<f64>()).collect();
        for y in 0..height {
            for x in 0..width {
                let fy = y as f64 / spacing as f64;
                let fx = x as f64 / spacing as f64;
                let (y0, x0) = (fy as usize, fx as usize);
                let (ty, tx) = (fy - y0 as f64, fx - x0 as f64);
                let v00 = lattice[y0 * gw + x0];
                let v01 = lattice[y0 * gw + x0 + 1];
                let v10 = lattice[(y0 + 1) * gw + x0];
                let v11 = lattice[(y0 + 1) * gw + x0 + 1];
                let top = v00 * (1.0 - tx) + v01 * tx;
                let bot = v10 * (1.0 - tx) + v11 * tx;
                field[y * width + x] += amplitude * (top * (1.0 - ty) + bot * ty);
            }
        }
        amplitude *= 0.5;
    }
    normalize_unit(height, width, field)
}

fn normalize_unit(height: usize, width: usize, raw: Vec<f64>) -> ImageTensor {
    let lo = raw.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let data = if hi > lo {
        raw.iter().map(|v| (v - lo) / (hi - lo)).collect()
    } else {
        vec![0.0; raw.len()] // constant field: degenerate, all zeros
    };
    ImageTensor::new(height, width, 1, data).expect("normalized field is finite")
}

/// Deterministic single-channel depth map in [0, 1].
pub fn generate_depth(kind: DepthKind, height: usize, width: usize, seed: u64) -> Result<ImageTensor> {
    if height == 0 || width == 0 {
        return Err(Error::InvalidParameter("depth map needs height, width >= 1".into()));
    }
    let raw: Vec<f64> = match kind {
        DepthKind::LinearRamp => (0..height)
            .flat_map(|y| (0..width).map(move |x| (x + y) as f64))
            .collect(),
        DepthKind::Radial => {
            let cy = (height as f64 - 1.0) / 2.0;
            let cx = (width as f64 - 1.0) / 2.0;
            (0..height)
                .flat_map(|y| {
                    (0..width).map(move |x| {
                        let dy = y as f64 - cy;
                        let dx = x as f64 - cx;
                        (dy * dy + dx * dx).sqrt()
                    })
                })
                .collect()
        }
        DepthKind::ValueNoise => {
            let cell = (height.min(width) / 4).max(2);
            return Ok(value_noise_field(height, width, seed, cell, 3));
        }
    };
    Ok(normalize_unit(height, width, raw))
}

/// `t(x) = exp(−β · d(x))`, strictly positive, 1 where depth is zero.
pub fn synthesize_transmission(depth: &ImageTensor, beta: f64) -> Result<ImageTensor> {
    if beta < 0.0 || !beta.is_finite() {
        return Err(Error::InvalidRange(format!("beta {beta} < 0")));
    }
    if depth.channels() != 1 {
        return Err(Error::BadChannelCount {
            expected: "1".into(),
            got: depth.channels(),
        });
    }
    depth.map(|d| (-beta * d).exp())
}

/// Composites haze: per pixel and channel `I = J·t + A·(1 − t)`, clamped to
/// [0, 1] afterwards (the composition itself is a convex combination, so the
/// clamp only absorbs rounding).
pub fn apply_asm(clean: &ImageTensor, t: &ImageTensor, a: [f64; 3]) -> Result<ImageTensor> {
    if clean.channels() != 3 {
        return Err(Error::BadChannelCount {
            expected: "3".into(),
            got: clean.channels(),
        });
    }
    if t.height() != clean.height() || t.width() != clean.width() || t.channels() != 1 {
        return Err(Error::ShapeMismatch(format!(
            "transmission {:?} vs image {:?}",
            t.shape(),
            clean.shape()
        )));
    }
    let out = ImageTensor::from_fn(clean.height(), clean.width(), 3, |y, x, c| {
        let tv = t.get(y, x, 0);
        clean.get(y, x, c) * tv + a[c] * (1.0 - tv)
    })?;
    Ok(out.clamp01())
}

/// Uniformly samples haze parameters within the configured ranges.
/// Deterministic for a given seed; draw order is fixed (depth kind, beta,
/// atmospheric base, depth seed).
pub fn sample_haze_params(seed: u64, ranges: &HazeRanges) -> Result<HazeParams> {
    check_range(ranges.beta.0, ranges.beta.1, "beta")?;
    check_range(ranges.atmospheric.0, ranges.atmospheric.1, "atmospheric")?;
    if ranges.beta.0 < 0.0 {
        return Err(Error::InvalidRange("beta range below 0".into()));
    }
    if ranges.depth_kinds.is_empty() {
        return Err(Error::InvalidRange("no depth kinds configured".into()));
    }
    let mut rng = rng_from_seed(seed);
    let kind = ranges.depth_kinds[rng.gen_range(0..ranges.depth_kinds.len())];
    let beta = rng.gen_range(ranges.beta.0..=ranges.beta.1);
    let base = rng.gen_range(ranges.atmospheric.0..=ranges.atmospheric.1);
    let mut tint = ranges.tint;
    if ranges.tint_shuffle {
        // Fisher-Yates over the three channels
        for i in (1..3).rev() {
            tint.swap(i, rng.gen_range(0..=i));
        }
    }
    let atmospheric_light = [
        (base * tint[0]).clamp(0.0, 1.0),
        (base * tint[1]).clamp(0.0, 1.0),
        (base * tint[2]).clamp(0.0, 1.0),
    ];
    let params = HazeParams {
        atmospheric_light,
        beta,
        depth_kind: kind,
        seed: rng.gen::<u64>(),
    };
    params.validate()?;
    Ok(params)
}

/// Full pair synthesis: depth from `params.seed`, transmission, composition.
pub fn synthesize_hazy(clean: &ImageTensor, params: &HazeParams) -> Result<ImageTensor> {
    params.validate()?;
    let depth = generate_depth(params.depth_kind, clean.height(), clean.width(), params.seed)?;
    let t = synthesize_transmission(&depth, params.beta)?;
    apply_asm(clean, &t, params.atmospheric_light)
}
