//! Structural prompt extraction and the toy latent encoder.
//!
//! The prompt is the channel concatenation of the three Haar high-frequency
//! subbands (order LH, HH, HL) reduced back to the input channel count by a
//! learnable point-wise mixing kernel. The latent encoder stands in for a
//! pretrained VAE: space-to-depth followed by a fixed seeded channel basis
//! whose first three directions carry per-channel block means, so smooth
//! images survive the round trip.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::rng_from_seed;
use crate::tensor::ImageTensor;
use crate::wavelet::haar_dwt;

/// Seed for the fixed default encoders; changing it changes every latent in
/// the pipeline, so it is a crate constant rather than a config knob.
pub const DEFAULT_ENCODER_SEED: u64 = 0x70_64_68_7a; // "pdhz"

/// Number of latent channels produced by the toy encoder.
pub const LATENT_CHANNELS: usize = 4;

/// Point-wise (1×1) mixing kernel, `in_channels -> out_channels`.
/// Weights are stored row-major: `weights[i * out_channels + o]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptKernel {
    pub in_channels: usize,
    pub out_channels: usize,
    pub weights: Vec<f64>,
}

impl PromptKernel {
    pub fn new(in_channels: usize, out_channels: usize, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != in_channels * out_channels {
            return Err(Error::LengthMismatch(format!(
                "kernel weights {} != {in_channels}x{out_channels}",
                weights.len()
            )));
        }
        Ok(Self {
            in_channels,
            out_channels,
            weights,
        })
    }

    /// Unbiased fusion start: each output channel averages the matching
    /// channel of the three stacked subbands with weight 1/3.
    pub fn averaging(channels: usize) -> Self {
        let mut weights = vec![0.0; 3 * channels * channels];
        for band in 0..3 {
            for c in 0..channels {
                weights[(band * channels + c) * channels + c] = 1.0 / 3.0;
            }
        }
        Self {
            in_channels: 3 * channels,
            out_channels: channels,
            weights,
        }
    }

    /// Selects one of the three stacked subbands (0 = LH, 1 = HH, 2 = HL).
    pub fn selector(channels: usize, band: usize) -> Self {
        let mut weights = vec![0.0; 3 * channels * channels];
        for c in 0..channels {
            weights[(band * channels + c) * channels + c] = 1.0;
        }
        Self {
            in_channels: 3 * channels,
            out_channels: channels,
            weights,
        }
    }

    pub fn apply(&self, stacked: &ImageTensor) -> Result<ImageTensor> {
        if stacked.channels() != self.in_channels {
            return Err(Error::LengthMismatch(format!(
                "kernel expects {} input channels, got {}",
                self.in_channels,
                stacked.channels()
            )));
        }
        ImageTensor::from_fn(stacked.height(), stacked.width(), self.out_channels, |y, x, o| {
            (0..self.in_channels)
                .map(|i| stacked.get(y, x, i) * self.weights[i * self.out_channels + o])
                .sum()
        })
    }
}

/// High-frequency structural prompt: `x_high` at half resolution plus the
/// kernel that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct StructuralPrompt {
    pub x_high: ImageTensor,
    pub kernel_weights: PromptKernel,
}

/// Concatenates the LH, HH, HL subbands channel-wise (in that order) and
/// reduces them with the point-wise kernel.
pub fn extract_high_freq_prompt(
    img: &ImageTensor,
    kernel: &PromptKernel,
) -> Result<StructuralPrompt> {
    if kernel.in_channels != 3 * img.channels() || kernel.out_channels != img.channels() {
        return Err(Error::LengthMismatch(format!(
            "kernel {}x{} incompatible with {} image channels",
            kernel.in_channels,
            kernel.out_channels,
            img.channels()
        )));
    }
    let sub = haar_dwt(img)?;
    let stacked = sub.lh.concat_channels(&sub.hh)?.concat_channels(&sub.hl)?;
    let x_high = kernel.apply(&stacked)?;
    Ok(StructuralPrompt {
        x_high,
        kernel_weights: kernel.clone(),
    })
}

/// Fixed linear encoder: space-to-depth by `factor`, then projection onto a
/// small channel basis. Invertible up to the basis pseudo-inverse.
///
/// Basis layout (for `in_channels = 3`): columns 0..3 read the block mean of
/// one color channel each (entries `1/factor²` on that channel's positions),
/// column 3 is a seeded random unit direction orthogonalized against the
/// first three. Block means therefore pass through `encode -> decode`
/// exactly; only within-block detail is lost.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentEncoder {
    pub factor: usize,
    pub in_channels: usize,
    pub latent_channels: usize,
    basis: Vec<f64>,     // column-major: basis[col * in_dim + i]
    inv_diag: Vec<f64>,  // (B^T B)^-1 diagonal, for the pseudo-inverse
}

impl LatentEncoder {
    pub fn new(factor: usize, in_channels: usize, seed: u64) -> Self {
        assert!(factor >= 1 && in_channels >= 1);
        let in_dim = factor * factor * in_channels;
        let latent_channels = LATENT_CHANNELS;
        let mut basis = vec![0.0; latent_channels * in_dim];
        let dc = 1.0 / (factor * factor) as f64;
        let mean_cols = in_channels.min(latent_channels);
        for c in 0..mean_cols {
            for pos in 0..factor * factor {
                basis[c * in_dim + pos * in_channels + c] = dc;
            }
        }
        // remaining columns: random directions, orthogonalized against all
        // previous columns and unit-normalized
        let mut rng = rng_from_seed(seed);
        for col in mean_cols..latent_channels {
            loop {
                let mut v: Vec<f64> = (0..in_dim).map(|_| rng.gen::<f64>() - 0.5).collect();
                for prev in 0..col {
                    let pcol = &basis[prev * in_dim..(prev + 1) * in_dim];
                    let pnorm2: f64 = pcol.iter().map(|x| x * x).sum();
                    let dot: f64 = v.iter().zip(pcol).map(|(a, b)| a * b).sum();
                    for (vi, pi) in v.iter_mut().zip(pcol) {
                        *vi -= dot / pnorm2 * pi;
                    }
                }
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm > 1e-9 {
                    for (i, vi) in v.iter().enumerate() {
                        basis[col * in_dim + i] = vi / norm;
                    }
                    break;
                }
            }
        }
        let inv_diag = (0..latent_channels)
            .map(|col| {
                let norm2: f64 = basis[col * in_dim..(col + 1) * in_dim]
                    .iter()
                    .map(|x| x * x)
                    .sum();
                1.0 / norm2
            })
            .collect();
        Self {
            factor,
            in_channels,
            latent_channels,
            basis,
            inv_diag,
        }
    }

    /// Encoder for full-resolution RGB images (×8 downsampling).
    pub fn for_images(seed: u64) -> Self {
        Self::new(8, 3, seed)
    }

    /// Stride-adjusted encoder for the half-resolution prompt (×4), so the
    /// prompt latent matches the image latent spatially.
    pub fn for_prompts(seed: u64) -> Self {
        Self::new(4, 3, seed)
    }

    fn check_input(&self, img: &ImageTensor) -> Result<()> {
        if img.channels() != self.in_channels {
            return Err(Error::BadChannelCount {
                expected: self.in_channels.to_string(),
                got: img.channels(),
            });
        }
        if img.height() % self.factor != 0 || img.width() % self.factor != 0 {
            return Err(Error::NonDivisibleDimensions {
                height: img.height(),
                width: img.width(),
                factor: self.factor,
            });
        }
        Ok(())
    }

    /// Space-to-depth block vector order: `(dy * factor + dx) * channels + c`.
    pub fn encode(&self, img: &ImageTensor) -> Result<ImageTensor> {
        self.check_input(img)?;
        let f = self.factor;
        let in_dim = f * f * self.in_channels;
        let (oh, ow) = (img.height() / f, img.width() / f);
        ImageTensor::from_fn(oh, ow, self.latent_channels, |by, bx, k| {
            let col = &self.basis[k * in_dim..(k + 1) * in_dim];
            let mut acc = 0.0;
            for dy in 0..f {
                for dx in 0..f {
                    for c in 0..self.in_channels {
                        let i = (dy * f + dx) * self.in_channels + c;
                        acc += img.get(by * f + dy, bx * f + dx, c) * col[i];
                    }
                }
            }
            acc
        })
    }

    /// Pseudo-inverse reconstruction (minimum-norm preimage).
    pub fn decode(&self, latent: &ImageTensor) -> Result<ImageTensor> {
        if latent.channels() != self.latent_channels {
            return Err(Error::BadChannelCount {
                expected: self.latent_channels.to_string(),
                got: latent.channels(),
            });
        }
        let f = self.factor;
        let in_dim = f * f * self.in_channels;
        ImageTensor::from_fn(
            latent.height() * f,
            latent.width() * f,
            self.in_channels,
            |y, x, c| {
                let (by, bx) = (y / f, x / f);
                let i = ((y % f) * f + (x % f)) * self.in_channels + c;
                (0..self.latent_channels)
                    .map(|k| self.basis[k * in_dim + i] * self.inv_diag[k] * latent.get(by, bx, k))
                    .sum()
            },
        )
    }
}

/// Encodes a full-resolution image with the fixed default encoder
/// (H and W must be divisible by 8).
pub fn encode_latent(img: &ImageTensor) -> Result<ImageTensor> {
    LatentEncoder::for_images(DEFAULT_ENCODER_SEED).encode(img)
}

/// Pseudo-inverse of [`encode_latent`].
pub fn decode_latent(latent: &ImageTensor) -> Result<ImageTensor> {
    LatentEncoder::for_images(DEFAULT_ENCODER_SEED).decode(latent)
}

/// Diffusion condition: channel concatenation of the encoded input and the
/// encoded prompt, input first.
#[derive(Debug, Clone, PartialEq)]
pub struct Condition {
    pub c_f: ImageTensor,
}

pub fn build_condition(latent_in: &ImageTensor, latent_high: &ImageTensor) -> Result<Condition> {
    if latent_in.height() != latent_high.height() || latent_in.width() != latent_high.width() {
        return Err(Error::ShapeMismatch(format!(
            "latent {:?} vs prompt latent {:?}",
            latent_in.shape(),
            latent_high.shape()
        )));
    }
    Ok(Condition {
        c_f: latent_in.concat_channels(latent_high)?,
    })
}

/// Full condition construction for one hazy input: encode the image, extract
/// and encode the prompt, concatenate.
pub fn condition_for_input(
    x_in: &ImageTensor,
    kernel: &PromptKernel,
    use_prompt: bool,
) -> Result<Condition> {
    let latent_in = encode_latent(x_in)?;
    let latent_high = if use_prompt {
        let prompt = extract_high_freq_prompt(x_in, kernel)?;
        LatentEncoder::for_prompts(DEFAULT_ENCODER_SEED).encode(&prompt.x_high)?
    } else {
        ImageTensor::zeros(latent_in.height(), latent_in.width(), latent_in.channels())
    };
    build_condition(&latent_in, &latent_high)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthesis::{apply_asm, generate_depth, DepthKind};
    use rand::{Rng, SeedableRng};

    fn random_image(h: usize, w: usize, seed: u64) -> ImageTensor {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        ImageTensor::from_fn(h, w, 3, |_, _, _| rng.gen::<f64>()).unwrap()
    }

    /// Bilinear upsampling of low-resolution noise: a smooth test image.
    fn smooth_image(h: usize, w: usize, seed: u64) -> ImageTensor {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let (gh, gw) = (2, 2);
        let grid: Vec<f64> = (0..gh * gw * 3).map(|_| rng.gen::<f64>()).collect();
        ImageTensor::from_fn(h, w, 3, |y, x, c| {
            let fy = y as f64 / (h - 1) as f64 * (gh - 1) as f64;
            let fx = x as f64 / (w - 1) as f64 * (gw - 1) as f64;
            let (y0, x0) = ((fy as usize).min(gh - 2), (fx as usize).min(gw - 2));
            let (ty, tx) = (fy - y0 as f64, fx - x0 as f64);
            let at = |yy: usize, xx: usize| grid[(yy * gw + xx) * 3 + c];
            let top = at(y0, x0) * (1.0 - tx) + at(y0, x0 + 1) * tx;
            let bot = at(y0 + 1, x0) * (1.0 - tx) + at(y0 + 1, x0 + 1) * tx;
            top * (1.0 - ty) + bot * ty
        })
        .unwrap()
    }

    #[test]
    fn constant_input_has_zero_prompt() {
        let img = ImageTensor::new(4, 4, 3, vec![0.6; 48]).unwrap();
        let kernel = PromptKernel::averaging(3);
        let p = extract_high_freq_prompt(&img, &kernel).unwrap();
        assert!(p.x_high.data().iter().all(|&v| v.abs() < 1e-15));
    }

    #[test]
    fn selector_kernel_returns_lh_subband() {
        let img = random_image(4, 4, 7);
        let kernel = PromptKernel::selector(3, 0);
        let p = extract_high_freq_prompt(&img, &kernel).unwrap();
        let sub = haar_dwt(&img).unwrap();
        assert_eq!(p.x_high, sub.lh);
    }

    #[test]
    fn prompt_matches_per_pixel_matmul_oracle() {
        let img = random_image(4, 4, 13);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(14);
        let weights: Vec<f64> = (0..9 * 3).map(|_| rng.gen::<f64>() - 0.5).collect();
        let kernel = PromptKernel::new(9, 3, weights.clone()).unwrap();
        let p = extract_high_freq_prompt(&img, &kernel).unwrap();

        // independent path: concat subbands, multiply per pixel by hand
        let sub = haar_dwt(&img).unwrap();
        for y in 0..2 {
            for x in 0..2 {
                let mut stacked = Vec::new();
                for band in [&sub.lh, &sub.hh, &sub.hl] {
                    for c in 0..3 {
                        stacked.push(band.get(y, x, c));
                    }
                }
                for o in 0..3 {
                    let want: f64 = (0..9).map(|i| stacked[i] * weights[i * 3 + o]).sum();
                    assert!((p.x_high.get(y, x, o) - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn prompt_ignores_constant_offset() {
        let img = random_image(8, 8, 21);
        let shifted = img.map(|v| v + 0.37).unwrap();
        let kernel = PromptKernel::averaging(3);
        let a = extract_high_freq_prompt(&img, &kernel).unwrap();
        let b = extract_high_freq_prompt(&shifted, &kernel).unwrap();
        for (u, v) in a.x_high.data().iter().zip(b.x_high.data()) {
            assert!((u - v).abs() < 1e-9);
        }
    }

    #[test]
    fn constant_transmission_haze_scales_prompt() {
        // hazy = t*J + A(1-t) with constant t is an affine map of J, so the
        // high-pass prompt scales by exactly t
        let img = random_image(8, 8, 22);
        let t = 0.4;
        let tmap = ImageTensor::new(8, 8, 1, vec![t; 64]).unwrap();
        let hazy = apply_asm(&img, &tmap, [0.95, 0.95, 0.95]).unwrap();
        let kernel = PromptKernel::averaging(3);
        let clean_p = extract_high_freq_prompt(&img, &kernel).unwrap();
        let hazy_p = extract_high_freq_prompt(&hazy, &kernel).unwrap();
        for (h, c) in hazy_p.x_high.data().iter().zip(clean_p.x_high.data()) {
            assert!((h - t * c).abs() < 1e-9);
        }
    }

    #[test]
    fn swapping_lh_hl_changes_output_for_asymmetric_kernel() {
        // vertical edge: lh = 0 but hl != 0, so an LH-selector kernel sees
        // a different stack when the bands are swapped
        let img = ImageTensor::from_fn(4, 4, 3, |_, x, _| if x < 1 { 1.0 } else { 0.0 }).unwrap();
        let sub = haar_dwt(&img).unwrap();
        let kernel = PromptKernel::selector(3, 0);
        let normal = kernel
            .apply(&sub.lh.concat_channels(&sub.hh).unwrap().concat_channels(&sub.hl).unwrap())
            .unwrap();
        let swapped = kernel
            .apply(&sub.hl.concat_channels(&sub.hh).unwrap().concat_channels(&sub.lh).unwrap())
            .unwrap();
        assert_ne!(normal, swapped);
    }

    #[test]
    fn encode_shape_contract() {
        let img = random_image(8, 8, 30);
        let z = encode_latent(&img).unwrap();
        assert_eq!(z.shape(), (1, 1, 4));
        assert!(encode_latent(&random_image(12, 8, 31)).is_err());
    }

    #[test]
    fn zero_image_encodes_to_zero_latent() {
        let z = encode_latent(&ImageTensor::zeros(16, 16, 3)).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn block_means_survive_round_trip_exactly() {
        let img = random_image(16, 16, 33);
        let enc = LatentEncoder::for_images(DEFAULT_ENCODER_SEED);
        let z = enc.encode(&img).unwrap();
        // latent channels 0..3 are per-channel block means by construction
        for by in 0..2 {
            for bx in 0..2 {
                for c in 0..3 {
                    let mut mean = 0.0;
                    for dy in 0..8 {
                        for dx in 0..8 {
                            mean += img.get(by * 8 + dy, bx * 8 + dx, c);
                        }
                    }
                    mean /= 64.0;
                    assert!((z.get(by, bx, c) - mean).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn smooth_round_trip_rms_below_threshold() {
        let mut worst: f64 = 0.0;
        for seed in 0..8 {
            let img = smooth_image(32, 32, 100 + seed);
            let back = decode_latent(&encode_latent(&img).unwrap()).unwrap();
            let mse: f64 = img
                .data()
                .iter()
                .zip(back.data())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                / img.len() as f64;
            worst = worst.max(mse.sqrt());
        }
        assert!(worst < 0.05, "worst smooth-image RMS {worst}");
    }

    #[test]
    fn condition_concat_contract() {
        let a = ImageTensor::from_fn(1, 1, 4, |_, _, c| c as f64).unwrap();
        let b = ImageTensor::from_fn(1, 1, 4, |_, _, c| 10.0 + c as f64).unwrap();
        let cond = build_condition(&a, &b).unwrap();
        assert_eq!(cond.c_f.shape(), (1, 1, 8));
        assert_eq!(cond.c_f.slice_channels(0, 4).unwrap(), a);

        let zeros = ImageTensor::zeros(1, 1, 4);
        let cond = build_condition(&a, &zeros).unwrap();
        assert!(cond.c_f.slice_channels(4, 8).unwrap().data().iter().all(|&v| v == 0.0));

        let tall = ImageTensor::zeros(2, 1, 4);
        assert!(build_condition(&a, &tall).is_err());
    }

    #[test]
    fn prompt_encoder_aligns_with_image_encoder() {
        // 16x16 image -> latent 2x2; prompt is 8x8 -> stride-4 latent 2x2
        let img = random_image(16, 16, 55);
        let kernel = PromptKernel::averaging(3);
        let cond = condition_for_input(&img, &kernel, true).unwrap();
        assert_eq!(cond.c_f.shape(), (2, 2, 8));
    }

    #[test]
    fn depth_probe_is_unrelated_to_prompt() {
        // regression guard: prompts on a pure ramp depth image exist but are
        // tiny away from block boundaries
        let d = generate_depth(DepthKind::LinearRamp, 8, 8, 0).unwrap();
        let rgb = ImageTensor::from_fn(8, 8, 3, |y, x, _| d.get(y, x, 0)).unwrap();
        let kernel = PromptKernel::averaging(3);
        let p = extract_high_freq_prompt(&rgb, &kernel).unwrap();
        assert!(p.x_high.data().iter().all(|v| v.abs() < 0.2));
    }
}
