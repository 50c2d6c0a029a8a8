//! Haze-aware self-correcting refiner: a toy decoder that inverts the
//! latent encoder through three ×2 upsampling stages, with window attention
//! blocks at the two lowest-resolution stages (modulated by the sparse
//! haze mask) and a residual refine network fusing fixed encoder skip
//! features at each stage.
//!
//! Every inserted component is zero-initialized at its output, so at
//! initialization the full decode equals the plain upsampling decoder
//! bit for bit.

use crate::attention::{
    window_merge, window_partition, wst_backward, wst_forward_cached, AttentionParams, WindowGrid,
    WstCache,
};
use crate::dcp::{dark_channel, DcpMask};
use crate::diffusion::{sample, Denoiser, NoiseSchedule, ToyDenoiser, TrainReport};
use crate::error::{Error, Result};
use crate::mask::{neutral_weights, ones_mask, window_masks};
use crate::nn::{relu, relu_backward, sgd_step, upsample2, upsample2_backward, Conv2d, Mat};
use crate::prompt::{
    condition_for_input, encode_latent, LatentEncoder, PromptKernel, DEFAULT_ENCODER_SEED,
    LATENT_CHANNELS,
};
use crate::seed::{derive_seed, rng_from_seed};
use crate::tensor::ImageTensor;
use rand::Rng;

/// Residual 1×1-conv refine network: `F_RN = f_dec + R(concat(f_enc, f_dec))`
/// with a zero-initialized output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct RefineNet {
    pub conv1: Conv2d, // 1x1, 2D -> 2D
    pub conv2: Conv2d, // 1x1, 2D -> D, zero-initialized
}

impl RefineNet {
    pub fn new_seeded(dim: usize, seed: u64) -> Self {
        let mut rng = rng_from_seed(seed);
        Self {
            conv1: Conv2d::seeded(1, 2 * dim, 2 * dim, (1.0 / (2 * dim) as f64).sqrt(), &mut rng),
            conv2: Conv2d::zeros(1, 2 * dim, dim),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            conv1: Conv2d::zeros(1, self.conv1.cin, self.conv1.cout),
            conv2: Conv2d::zeros(1, self.conv2.cin, self.conv2.cout),
        }
    }
}

pub struct RefineCache {
    cat: ImageTensor,
    pre1: ImageTensor,
    act1: ImageTensor,
}

/// `F_RN = f_dec + R(concat(f_enc, f_dec))`.
pub fn refine_features(
    f_enc: &ImageTensor,
    f_dec: &ImageTensor,
    r: &RefineNet,
) -> Result<ImageTensor> {
    Ok(refine_forward_cached(f_enc, f_dec, r)?.0)
}

fn refine_forward_cached(
    f_enc: &ImageTensor,
    f_dec: &ImageTensor,
    r: &RefineNet,
) -> Result<(ImageTensor, RefineCache)> {
    if !f_enc.same_shape(f_dec) {
        return Err(Error::ShapeMismatch(format!(
            "encoder feature {:?} vs decoder feature {:?}",
            f_enc.shape(),
            f_dec.shape()
        )));
    }
    let cat = f_enc.concat_channels(f_dec)?;
    let pre1 = r.conv1.forward(&cat)?;
    let act1 = relu(&pre1);
    let delta = r.conv2.forward(&act1)?;
    let out = f_dec.zip_map(&delta, |a, b| a + b)?;
    Ok((out, RefineCache { cat, pre1, act1 }))
}

/// Returns the gradient w.r.t. `f_dec`; the encoder path is fixed so its
/// gradient is dropped.
fn refine_backward(
    grad_out: &ImageTensor,
    cache: &RefineCache,
    r: &RefineNet,
    grads: &mut RefineNet,
) -> Result<ImageTensor> {
    let d_act1 = r.conv2.backward(&cache.act1, grad_out, &mut grads.conv2)?;
    let d_pre1 = relu_backward(&cache.pre1, &d_act1);
    let d_cat = r.conv1.backward(&cache.cat, &d_pre1, &mut grads.conv1)?;
    let dim = grad_out.channels();
    let d_dec_via_cat = d_cat.slice_channels(dim, 2 * dim)?;
    grad_out.zip_map(&d_dec_via_cat, |a, b| a + b)
}

/// All trainable decoder weights: two refine networks, two WST blocks, the
/// per-stage 3×3 convs and the final projection conv.
#[derive(Debug, Clone, PartialEq)]
pub struct RefinerParams {
    pub dim: usize,
    pub r0: RefineNet,
    pub wst0: AttentionParams,
    pub conv0: Conv2d,
    pub r1: RefineNet,
    pub wst1: AttentionParams,
    pub conv1: Conv2d,
    pub r2: RefineNet,
    pub final_conv: Conv2d,
}

impl RefinerParams {
    /// Insertion-free initialization: stage convs are center-tap identities,
    /// the final conv copies the three mean-carrying latent channels to RGB,
    /// WST blocks and refine networks are zero at their outputs.
    pub fn identity_init(seed: u64) -> Self {
        let dim = LATENT_CHANNELS;
        Self {
            dim,
            r0: RefineNet::new_seeded(dim, derive_seed(seed, "refine/0")),
            wst0: AttentionParams::identity_init(dim, derive_seed(seed, "wst/0")),
            conv0: Conv2d::identity_center(3, dim, dim, 1.0),
            r1: RefineNet::new_seeded(dim, derive_seed(seed, "refine/1")),
            wst1: AttentionParams::identity_init(dim, derive_seed(seed, "wst/1")),
            conv1: Conv2d::identity_center(3, dim, dim, 1.0),
            r2: RefineNet::new_seeded(dim, derive_seed(seed, "refine/2")),
            final_conv: Conv2d::identity_center(3, dim, 3, 1.0),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            dim: self.dim,
            r0: self.r0.zeros_like(),
            wst0: self.wst0.zeros_like(),
            conv0: Conv2d::zeros(3, self.conv0.cin, self.conv0.cout),
            r1: self.r1.zeros_like(),
            wst1: self.wst1.zeros_like(),
            conv1: Conv2d::zeros(3, self.conv1.cin, self.conv1.cout),
            r2: self.r2.zeros_like(),
            final_conv: Conv2d::zeros(3, self.final_conv.cin, self.final_conv.cout),
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.r0.conv1.flatten_into(&mut out);
        self.r0.conv2.flatten_into(&mut out);
        self.wst0.flatten_into(&mut out);
        self.conv0.flatten_into(&mut out);
        self.r1.conv1.flatten_into(&mut out);
        self.r1.conv2.flatten_into(&mut out);
        self.wst1.flatten_into(&mut out);
        self.conv1.flatten_into(&mut out);
        self.r2.conv1.flatten_into(&mut out);
        self.r2.conv2.flatten_into(&mut out);
        self.final_conv.flatten_into(&mut out);
        out
    }

    pub fn from_flat(&mut self, src: &[f64]) -> Result<()> {
        if src.len() != self.param_count() {
            return Err(Error::LengthMismatch(format!(
                "refiner expects {} params, got {}",
                self.param_count(),
                src.len()
            )));
        }
        let mut pos = 0;
        self.r0.conv1.unflatten_from(src, &mut pos);
        self.r0.conv2.unflatten_from(src, &mut pos);
        self.wst0.unflatten_from(src, &mut pos);
        self.conv0.unflatten_from(src, &mut pos);
        self.r1.conv1.unflatten_from(src, &mut pos);
        self.r1.conv2.unflatten_from(src, &mut pos);
        self.wst1.unflatten_from(src, &mut pos);
        self.conv1.unflatten_from(src, &mut pos);
        self.r2.conv1.unflatten_from(src, &mut pos);
        self.r2.conv2.unflatten_from(src, &mut pos);
        self.final_conv.unflatten_from(src, &mut pos);
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.to_flat().len()
    }
}

/// Decode-time configuration: window geometry, sparsification strength,
/// and the ablation switch for mask modulation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodeConfig {
    pub window: (usize, usize),
    pub k_fraction: f64,
    pub use_mask: bool,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            window: (4, 4),
            k_fraction: 0.25,
            use_mask: true,
        }
    }
}

/// Fixed multi-scale skip features of the input, one per decoder stage.
#[derive(Debug, Clone, PartialEq)]
pub struct EncFeatures {
    pub s8: ImageTensor,
    pub s4: ImageTensor,
    pub s2: ImageTensor,
}

/// Encodes the input at strides 8, 4, and 2 with the fixed encoders.
pub fn encoder_features(x_in: &ImageTensor) -> Result<EncFeatures> {
    Ok(EncFeatures {
        s8: LatentEncoder::new(8, 3, DEFAULT_ENCODER_SEED).encode(x_in)?,
        s4: LatentEncoder::new(4, 3, DEFAULT_ENCODER_SEED).encode(x_in)?,
        s2: LatentEncoder::new(2, 3, DEFAULT_ENCODER_SEED).encode(x_in)?,
    })
}

struct StageCache {
    refine: RefineCache,
    grid_in: WindowGrid,
    wst: Vec<WstCache>,
    masks: Vec<Mat>,
    conv_in: ImageTensor,
}

struct DecodeTrace {
    stage0: StageCache,
    stage1: StageCache,
    refine2: RefineCache,
    final_conv_in: ImageTensor,
    pre_clamp: ImageTensor,
}

fn stage_masks(
    dcp: &DcpMask,
    pool_factor: usize,
    cfg: &DecodeConfig,
    n_windows: usize,
    n_tokens: usize,
) -> Result<Vec<Mat>> {
    if cfg.use_mask {
        let w = neutral_weights(n_tokens);
        Ok(
            window_masks(dcp, pool_factor, cfg.window, &w, &w, cfg.k_fraction)?
                .into_iter()
                .map(|m| m.sparse)
                .collect(),
        )
    } else {
        Ok(vec![ones_mask(n_tokens); n_windows])
    }
}

fn stage_forward(
    f: &ImageTensor,
    f_enc: &ImageTensor,
    r: &RefineNet,
    wst: &AttentionParams,
    masks: Vec<Mat>,
    conv: &Conv2d,
    window: (usize, usize),
) -> Result<(ImageTensor, StageCache)> {
    let (refined, refine_cache) = refine_forward_cached(f_enc, f, r)?;
    let grid_in = window_partition(&refined, window)?;
    if masks.len() != grid_in.windows.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} masks vs {} windows",
            masks.len(),
            grid_in.windows.len()
        )));
    }
    let mut out_grid = grid_in.clone();
    let mut wst_caches = Vec::with_capacity(grid_in.windows.len());
    for (i, tokens) in grid_in.windows.iter().enumerate() {
        let (out, cache) = wst_forward_cached(tokens, &masks[i], wst)?;
        out_grid.windows[i] = out;
        wst_caches.push(cache);
    }
    let merged = window_merge(&out_grid)?;
    let upsampled = upsample2(&merged);
    let out = conv.forward(&upsampled)?;
    Ok((
        out,
        StageCache {
            refine: refine_cache,
            grid_in,
            wst: wst_caches,
            masks,
            conv_in: upsampled,
        },
    ))
}

#[allow(clippy::too_many_arguments)]
fn stage_backward(
    grad_out: &ImageTensor,
    cache: &StageCache,
    r: &RefineNet,
    wst: &AttentionParams,
    conv: &Conv2d,
    g_r: &mut RefineNet,
    g_wst: &mut AttentionParams,
    g_conv: &mut Conv2d,
) -> Result<ImageTensor> {
    let d_upsampled = conv.backward(&cache.conv_in, grad_out, g_conv)?;
    let d_merged = upsample2_backward(&d_upsampled);
    let d_grid = window_partition(&d_merged, (cache.grid_in.win_h, cache.grid_in.win_w))?;
    let mut d_in_grid = d_grid.clone();
    for (i, d_tokens) in d_grid.windows.iter().enumerate() {
        d_in_grid.windows[i] = wst_backward(d_tokens, &cache.masks[i], wst, &cache.wst[i], g_wst);
    }
    let d_refined = window_merge(&d_in_grid)?;
    refine_backward(&d_refined, &cache.refine, r, g_r)
}

fn decode_traced(
    z0: &ImageTensor,
    enc: &EncFeatures,
    dcp: &DcpMask,
    p: &RefinerParams,
    cfg: &DecodeConfig,
) -> Result<(ImageTensor, DecodeTrace)> {
    if z0.channels() != p.dim {
        return Err(Error::BadChannelCount {
            expected: p.dim.to_string(),
            got: z0.channels(),
        });
    }
    if !enc.s8.same_shape(z0) {
        return Err(Error::ShapeMismatch(format!(
            "stride-8 skip {:?} vs latent {:?}",
            enc.s8.shape(),
            z0.shape()
        )));
    }
    if enc.s2.height() != z0.height() * 4 || enc.s4.height() != z0.height() * 2 {
        return Err(Error::ShapeMismatch(
            "stride-4/stride-2 skip features do not match the latent".into(),
        ));
    }
    let full_h = z0.height() * 8;
    let full_w = z0.width() * 8;
    if dcp.values.height() != full_h || dcp.values.width() != full_w {
        return Err(Error::ShapeMismatch(format!(
            "haze mask {:?} vs full resolution {full_h}x{full_w}",
            dcp.values.shape()
        )));
    }
    let n_tokens = cfg.window.0 * cfg.window.1;

    let windows0 = (z0.height() / cfg.window.0).max(1) * (z0.width() / cfg.window.1).max(1);
    let masks0 = stage_masks(dcp, 8, cfg, windows0, n_tokens)?;
    let (f1, stage0) = stage_forward(z0, &enc.s8, &p.r0, &p.wst0, masks0, &p.conv0, cfg.window)?;

    let windows1 = (f1.height() / cfg.window.0).max(1) * (f1.width() / cfg.window.1).max(1);
    let masks1 = stage_masks(dcp, 4, cfg, windows1, n_tokens)?;
    let (f2, stage1) = stage_forward(&f1, &enc.s4, &p.r1, &p.wst1, masks1, &p.conv1, cfg.window)?;

    let (f2r, refine2) = refine_forward_cached(&enc.s2, &f2, &p.r2)?;
    let up = upsample2(&f2r);
    let pre_clamp = p.final_conv.forward(&up)?;
    let out = pre_clamp.clamp01();
    Ok((
        out,
        DecodeTrace {
            stage0,
            stage1,
            refine2,
            final_conv_in: up,
            pre_clamp,
        },
    ))
}

/// Full refiner decode: two attention-and-refine stages followed by the
/// final upsample and RGB projection, clamped to [0, 1].
pub fn decode(
    z0: &ImageTensor,
    enc: &EncFeatures,
    dcp: &DcpMask,
    p: &RefinerParams,
    cfg: &DecodeConfig,
) -> Result<ImageTensor> {
    Ok(decode_traced(z0, enc, dcp, p, cfg)?.0)
}

/// The plain toy-autoencoder decode path: the same upsample/conv pipeline
/// with no refine networks and no attention blocks.
pub fn decode_plain(z0: &ImageTensor, p: &RefinerParams) -> Result<ImageTensor> {
    let f1 = p.conv0.forward(&upsample2(z0))?;
    let f2 = p.conv1.forward(&upsample2(&f1))?;
    let pre = p.final_conv.forward(&upsample2(&f2))?;
    Ok(pre.clamp01())
}

fn decode_backward(
    grad_xr: &ImageTensor,
    trace: &DecodeTrace,
    p: &RefinerParams,
    grads: &mut RefinerParams,
) -> Result<()> {
    // clamp subgradient: pass-through inside [0, 1]
    let d_pre = trace
        .pre_clamp
        .zip_map(grad_xr, |pre, g| if (0.0..=1.0).contains(&pre) { g } else { 0.0 })?;
    let d_up = p
        .final_conv
        .backward(&trace.final_conv_in, &d_pre, &mut grads.final_conv)?;
    let d_f2r = upsample2_backward(&d_up);
    let d_f2 = refine_backward(&d_f2r, &trace.refine2, &p.r2, &mut grads.r2)?;
    let d_f1 = stage_backward(
        &d_f2,
        &trace.stage1,
        &p.r1,
        &p.wst1,
        &p.conv1,
        &mut grads.r1,
        &mut grads.wst1,
        &mut grads.conv1,
    )?;
    stage_backward(
        &d_f1,
        &trace.stage0,
        &p.r0,
        &p.wst0,
        &p.conv0,
        &mut grads.r0,
        &mut grads.wst0,
        &mut grads.conv0,
    )?;
    Ok(())
}

/// Fixed random two-layer conv feature bank standing in for a pretrained
/// perceptual network: it penalizes structured error without any learned
/// weights.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBank {
    pub conv1: Conv2d,
    pub conv2: Conv2d,
}

pub const BANK_CHANNELS: usize = 8;

impl FeatureBank {
    pub fn new_seeded(seed: u64) -> Self {
        let mut rng = rng_from_seed(seed);
        Self {
            conv1: Conv2d::seeded(3, 3, BANK_CHANNELS, (2.0 / 27.0f64).sqrt(), &mut rng),
            conv2: Conv2d::seeded(
                3,
                BANK_CHANNELS,
                BANK_CHANNELS,
                (2.0 / (9.0 * BANK_CHANNELS as f64)).sqrt(),
                &mut rng,
            ),
        }
    }

    fn responses_cached(&self, x: &ImageTensor) -> Result<(ImageTensor, BankCache)> {
        let pre1 = self.conv1.forward(x)?;
        let act1 = relu(&pre1);
        let out = self.conv2.forward(&act1)?;
        Ok((
            out,
            BankCache {
                x: x.clone(),
                pre1,
                act1,
            },
        ))
    }

    pub fn responses(&self, x: &ImageTensor) -> Result<ImageTensor> {
        Ok(self.responses_cached(x)?.0)
    }

    /// Gradient of a functional of the responses w.r.t. the input image;
    /// the bank weights are fixed so their gradients are discarded.
    fn input_gradient(&self, cache: &BankCache, grad_out: &ImageTensor) -> Result<ImageTensor> {
        let mut scratch2 = Conv2d::zeros(3, self.conv2.cin, self.conv2.cout);
        let d_act1 = self.conv2.backward(&cache.act1, grad_out, &mut scratch2)?;
        let d_pre1 = relu_backward(&cache.pre1, &d_act1);
        let mut scratch1 = Conv2d::zeros(3, self.conv1.cin, self.conv1.cout);
        self.conv1.backward(&cache.x, &d_pre1, &mut scratch1)
    }
}

struct BankCache {
    x: ImageTensor,
    pre1: ImageTensor,
    act1: ImageTensor,
}

/// Loss breakdown: `total = l1 + λ_p · perceptual`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HcrLoss {
    pub l1: f64,
    pub perceptual: f64,
    pub total: f64,
}

pub const LAMBDA_PERCEPTUAL: f64 = 0.1;

/// Mean absolute pixel error plus the mean squared distance between fixed
/// feature-bank responses.
pub fn hcr_loss(x_r: &ImageTensor, x_gt: &ImageTensor, bank: &FeatureBank) -> Result<HcrLoss> {
    if !x_r.same_shape(x_gt) {
        return Err(Error::ShapeMismatch(format!(
            "{:?} vs {:?}",
            x_r.shape(),
            x_gt.shape()
        )));
    }
    let l1 = x_r
        .data()
        .iter()
        .zip(x_gt.data())
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / x_r.len() as f64;
    let fr = bank.responses(x_r)?;
    let fg = bank.responses(x_gt)?;
    let perceptual = fr
        .data()
        .iter()
        .zip(fg.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / fr.len() as f64;
    Ok(HcrLoss {
        l1,
        perceptual,
        total: l1 + LAMBDA_PERCEPTUAL * perceptual,
    })
}

/// Gradient of [`hcr_loss`] w.r.t. `x_r`.
pub fn hcr_loss_backward(
    x_r: &ImageTensor,
    x_gt: &ImageTensor,
    bank: &FeatureBank,
) -> Result<ImageTensor> {
    let n = x_r.len() as f64;
    let d_l1 = x_r.zip_map(x_gt, |a, b| {
        if a > b {
            1.0 / n
        } else if a < b {
            -1.0 / n
        } else {
            0.0
        }
    })?;
    let (fr, cache) = bank.responses_cached(x_r)?;
    let fg = bank.responses(x_gt)?;
    let nf = fr.len() as f64;
    let d_resp = fr.zip_map(&fg, |a, b| LAMBDA_PERCEPTUAL * 2.0 * (a - b) / nf)?;
    let d_perc = bank.input_gradient(&cache, &d_resp)?;
    d_l1.zip_map(&d_perc, |a, b| a + b)
}

/// Everything `train_hcr` needs besides the dataset.
#[derive(Debug, Clone)]
pub struct HcrTrainConfig {
    pub steps: usize,
    pub lr: f64,
    /// Heavy-ball momentum; the L1 term yields constant-magnitude sign
    /// gradients, which descend far faster with an accumulated velocity.
    pub momentum: f64,
    pub seed: u64,
    pub teacher_forced: bool,
    pub use_prompt: bool,
    pub decode: DecodeConfig,
    pub dcp_patch: usize,
}

impl Default for HcrTrainConfig {
    fn default() -> Self {
        Self {
            steps: 200,
            lr: 0.05,
            momentum: 0.9,
            seed: 0,
            teacher_forced: false,
            use_prompt: true,
            decode: DecodeConfig::default(),
            dcp_patch: 3,
        }
    }
}

struct HcrSample {
    z0: ImageTensor,
    enc: EncFeatures,
    dcp: DcpMask,
    x_gt: ImageTensor,
}

const HCR_BATCH: usize = 8;

/// Gradient descent on the decoder, WST, and refine-network weights.
///
/// Latents come from the finetuned restorer's sampler (one deterministic
/// draw per sample, fixed for the whole run) or from the clean-image
/// encoder when `teacher_forced` is set. The trace records the mean loss
/// over the full dataset each step, which is deterministic given the
/// weights.
pub fn train_hcr(
    params: &mut RefinerParams,
    dataset: &[(ImageTensor, ImageTensor)],
    spr: Option<&ToyDenoiser>,
    schedule: &NoiseSchedule,
    kernel: &PromptKernel,
    bank: &FeatureBank,
    cfg: &HcrTrainConfig,
) -> Result<TrainReport> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if !cfg.teacher_forced && spr.is_none() {
        return Err(Error::InvalidParameter(
            "a trained restorer is required unless teacher forcing is enabled".into(),
        ));
    }
    let samples: Vec<HcrSample> = dataset
        .iter()
        .enumerate()
        .map(|(i, (x_in, x_gt))| -> Result<HcrSample> {
            let z0 = if cfg.teacher_forced {
                encode_latent(x_gt)?
            } else {
                let cond = condition_for_input(x_in, kernel, cfg.use_prompt)?;
                let denoiser = spr.expect("presence checked above");
                sample(
                    denoiser as &dyn Denoiser,
                    &cond.c_f,
                    schedule,
                    derive_seed(cfg.seed, &format!("latent/{i}")),
                )?
            };
            Ok(HcrSample {
                z0,
                enc: encoder_features(x_in)?,
                dcp: dark_channel(x_in, cfg.dcp_patch)?,
                x_gt: x_gt.clone(),
            })
        })
        .collect::<Result<_>>()?;

    let eval = |p: &RefinerParams| -> Result<f64> {
        let mut total = 0.0;
        for s in &samples {
            let x_r = decode(&s.z0, &s.enc, &s.dcp, p, &cfg.decode)?;
            total += hcr_loss(&x_r, &s.x_gt, bank)?.total;
        }
        Ok(total / samples.len() as f64)
    };

    let mut trace = Vec::with_capacity(cfg.steps);
    let mut velocity = vec![0.0; params.param_count()];
    let warmup = (cfg.steps / 10).max(1);
    for step in 0..cfg.steps {
        trace.push(eval(params)?);
        // linear warmup, then cosine decay to a tenth of the peak rate
        let ramp = ((step + 1) as f64 / warmup as f64).min(1.0);
        let progress = step as f64 / cfg.steps.max(1) as f64;
        let decay = 0.55 + 0.45 * (std::f64::consts::PI * progress).cos();
        let lr = cfg.lr * ramp * decay;
        let mut step_rng = rng_from_seed(derive_seed(cfg.seed, &format!("step/{step}")));
        let mut grads = params.zeros_like();
        for _ in 0..HCR_BATCH {
            let s = &samples[step_rng.gen_range(0..samples.len())];
            let (x_r, dtrace) = decode_traced(&s.z0, &s.enc, &s.dcp, params, &cfg.decode)?;
            let mut d_xr = hcr_loss_backward(&x_r, &s.x_gt, bank)?;
            d_xr = d_xr.map(|v| v / HCR_BATCH as f64)?;
            decode_backward(&d_xr, &dtrace, params, &mut grads)?;
        }
        let gflat = grads.to_flat();
        for (v, g) in velocity.iter_mut().zip(&gflat) {
            *v = cfg.momentum * *v + g;
        }
        let mut flat = params.to_flat();
        sgd_step(&mut flat, &velocity, lr);
        params.from_flat(&flat)?;
    }
    Ok(TrainReport { trace })
}
