//! Window partitioning and sparse-mask-modulated self-attention.
//!
//! Logits are `(Q·Kᵀ) ⊙ M_s / sqrt(N)` where `N` is the token count of the
//! window. A `-inf` mask entry forces the logit to `-inf` directly
//! (absorbing), regardless of the sign of the raw score: multiplying a
//! negative score by `-inf` would otherwise promote the pair instead of
//! suppressing it. Rows whose logits are all `-inf` produce the zero vector.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{layer_norm_backward, layer_norm_forward, LnCache, Mat};
use crate::seed::rng_from_seed;
use crate::tensor::ImageTensor;

/// Non-overlapping window tiling of a feature map: row-major window order,
/// row-major tokens within each window. `merge` is the exact inverse.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowGrid {
    pub windows: Vec<Mat>,
    pub grid_h: usize,
    pub grid_w: usize,
    pub win_h: usize,
    pub win_w: usize,
    pub channels: usize,
}

pub fn window_partition(feature: &ImageTensor, win: (usize, usize)) -> Result<WindowGrid> {
    let (win_h, win_w) = win;
    if win_h == 0
        || win_w == 0
        || feature.height() % win_h != 0
        || feature.width() % win_w != 0
    {
        return Err(Error::NonDivisibleDimensions {
            height: feature.height(),
            width: feature.width(),
            factor: win_h.max(win_w).max(1),
        });
    }
    let grid_h = feature.height() / win_h;
    let grid_w = feature.width() / win_w;
    let channels = feature.channels();
    let mut windows = Vec::with_capacity(grid_h * grid_w);
    for gy in 0..grid_h {
        for gx in 0..grid_w {
            let mut m = Mat::zeros(win_h * win_w, channels);
            for wy in 0..win_h {
                for wx in 0..win_w {
                    for c in 0..channels {
                        m.set(
                            wy * win_w + wx,
                            c,
                            feature.get(gy * win_h + wy, gx * win_w + wx, c),
                        );
                    }
                }
            }
            windows.push(m);
        }
    }
    Ok(WindowGrid {
        windows,
        grid_h,
        grid_w,
        win_h,
        win_w,
        channels,
    })
}

pub fn window_merge(grid: &WindowGrid) -> Result<ImageTensor> {
    let height = grid.grid_h * grid.win_h;
    let width = grid.grid_w * grid.win_w;
    if grid.windows.len() != grid.grid_h * grid.grid_w {
        return Err(Error::ShapeMismatch("window count vs grid".into()));
    }
    ImageTensor::from_fn(height, width, grid.channels, |y, x, c| {
        let (gy, gx) = (y / grid.win_h, x / grid.win_w);
        let (wy, wx) = (y % grid.win_h, x % grid.win_w);
        grid.windows[gy * grid.grid_w + gx].get(wy * grid.win_w + wx, c)
    })
}

/// Single-head attention block parameters: Q/K/V/output projections
/// (no biases), pre-norm gains/biases, and a D→4D→D MLP.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub dim: usize,
    pub wq: Mat,
    pub wk: Mat,
    pub wv: Mat,
    pub wo: Mat,
    pub ln1_gain: Vec<f64>,
    pub ln1_bias: Vec<f64>,
    pub ln2_gain: Vec<f64>,
    pub ln2_bias: Vec<f64>,
    pub mlp_w1: Mat,
    pub mlp_b1: Vec<f64>,
    pub mlp_w2: Mat,
    pub mlp_b2: Vec<f64>,
}

impl AttentionParams {
    /// Residual-identity initialization: random Q/K/V and first MLP layer,
    /// zero output projection and zero MLP output layer, so the whole block
    /// is the identity until training moves it.
    pub fn identity_init(dim: usize, seed: u64) -> Self {
        let mut rng: ChaCha8Rng = rng_from_seed(seed);
        let scale = 1.0 / (dim as f64).sqrt();
        Self {
            dim,
            wq: Mat::random(dim, dim, scale, &mut rng),
            wk: Mat::random(dim, dim, scale, &mut rng),
            wv: Mat::random(dim, dim, scale, &mut rng),
            wo: Mat::zeros(dim, dim),
            ln1_gain: vec![1.0; dim],
            ln1_bias: vec![0.0; dim],
            ln2_gain: vec![1.0; dim],
            ln2_bias: vec![0.0; dim],
            mlp_w1: Mat::random(dim, 4 * dim, scale, &mut rng),
            mlp_b1: vec![0.0; 4 * dim],
            mlp_w2: Mat::zeros(4 * dim, dim),
            mlp_b2: vec![0.0; dim],
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            dim: self.dim,
            wq: Mat::zeros(self.dim, self.dim),
            wk: Mat::zeros(self.dim, self.dim),
            wv: Mat::zeros(self.dim, self.dim),
            wo: Mat::zeros(self.dim, self.dim),
            ln1_gain: vec![0.0; self.dim],
            ln1_bias: vec![0.0; self.dim],
            ln2_gain: vec![0.0; self.dim],
            ln2_bias: vec![0.0; self.dim],
            mlp_w1: Mat::zeros(self.dim, 4 * self.dim),
            mlp_b1: vec![0.0; 4 * self.dim],
            mlp_w2: Mat::zeros(4 * self.dim, self.dim),
            mlp_b2: vec![0.0; self.dim],
        }
    }

    pub fn flatten_into(&self, out: &mut Vec<f64>) {
        for m in [&self.wq, &self.wk, &self.wv, &self.wo, &self.mlp_w1, &self.mlp_w2] {
            out.extend_from_slice(&m.data);
        }
        for v in [
            &self.ln1_gain,
            &self.ln1_bias,
            &self.ln2_gain,
            &self.ln2_bias,
            &self.mlp_b1,
            &self.mlp_b2,
        ] {
            out.extend_from_slice(v);
        }
    }

    pub fn unflatten_from(&mut self, src: &[f64], pos: &mut usize) {
        for m in [
            &mut self.wq,
            &mut self.wk,
            &mut self.wv,
            &mut self.wo,
            &mut self.mlp_w1,
            &mut self.mlp_w2,
        ] {
            let n = m.data.len();
            m.data.copy_from_slice(&src[*pos..*pos + n]);
            *pos += n;
        }
        for v in [
            &mut self.ln1_gain,
            &mut self.ln1_bias,
            &mut self.ln2_gain,
            &mut self.ln2_bias,
            &mut self.mlp_b1,
            &mut self.mlp_b2,
        ] {
            let n = v.len();
            v.copy_from_slice(&src[*pos..*pos + n]);
            *pos += n;
        }
    }

    pub fn param_count(&self) -> usize {
        let mut v = Vec::new();
        self.flatten_into(&mut v);
        v.len()
    }

    pub fn accumulate(&mut self, other: &Self) {
        let mut a = Vec::new();
        self.flatten_into(&mut a);
        let mut b = Vec::new();
        other.flatten_into(&mut b);
        for (x, y) in a.iter_mut().zip(&b) {
            *x += y;
        }
        let mut pos = 0;
        self.unflatten_from(&a, &mut pos);
    }
}

fn validate_mask(m_s: &Mat, n: usize) -> Result<()> {
    if m_s.rows != n || m_s.cols != n {
        return Err(Error::ShapeMismatch(format!(
            "mask {}x{} vs {n} tokens",
            m_s.rows, m_s.cols
        )));
    }
    for &v in &m_s.data {
        if v == f64::NEG_INFINITY || (0.0..=1.0).contains(&v) {
            continue;
        }
        return Err(Error::InvalidParameter(format!(
            "mask entries must be in [0,1] or -inf, got {v}"
        )));
    }
    Ok(())
}

struct SoftmaxCache {
    weights: Mat,
}

/// Masked, modulated row softmax over logits. Returns attention weights.
fn masked_softmax(scores: &Mat, m_s: &Mat, scale: f64) -> Mat {
    let n = scores.rows;
    let mut weights = Mat::zeros(n, scores.cols);
    for r in 0..n {
        let mut max_logit = f64::NEG_INFINITY;
        let mut logits = vec![f64::NEG_INFINITY; scores.cols];
        for c in 0..scores.cols {
            let m = m_s.get(r, c);
            if m != f64::NEG_INFINITY {
                let l = scores.get(r, c) * m * scale;
                logits[c] = l;
                max_logit = max_logit.max(l);
            }
        }
        if max_logit == f64::NEG_INFINITY {
            continue; // fully masked row: zero weights by definition
        }
        let mut denom = 0.0;
        for l in &mut logits {
            if *l != f64::NEG_INFINITY {
                *l = (*l - max_logit).exp();
                denom += *l;
            } else {
                *l = 0.0;
            }
        }
        for c in 0..scores.cols {
            weights.set(r, c, logits[c] / denom);
        }
    }
    weights
}

/// `softmax((Q·Kᵀ) ⊙ M_s / sqrt(N)) · V` with the absorbing `-inf`
/// convention described in the module docs.
pub fn modulated_attention(q: &Mat, k: &Mat, v: &Mat, m_s: &Mat) -> Result<Mat> {
    let n = q.rows;
    if k.rows != n || v.rows != n || k.cols != q.cols {
        return Err(Error::ShapeMismatch(format!(
            "Q {}x{}, K {}x{}, V {}x{}",
            q.rows, q.cols, k.rows, k.cols, v.rows, v.cols
        )));
    }
    validate_mask(m_s, n)?;
    let scores = q.matmul_nt(k);
    let weights = masked_softmax(&scores, m_s, 1.0 / (n as f64).sqrt());
    Ok(weights.matmul(v))
}

/// Forward cache for one WST block application.
pub struct WstCache {
    x: Mat,
    ln1: LnCache,
    h1: Mat,
    q: Mat,
    k: Mat,
    v: Mat,
    softmax: SoftmaxCache,
    attn_out: Mat,
    ln2: LnCache,
    h2: Mat,
    mlp_pre: Mat,
    mlp_act: Mat,
}

/// Pre-norm residual transformer block:
/// `x + Wo·Attn(LN1(x))`, then `+ MLP(LN2(·))`.
pub fn wst_block(tokens: &Mat, m_s: &Mat, p: &AttentionParams) -> Result<Mat> {
    Ok(wst_forward_cached(tokens, m_s, p)?.0)
}

pub fn wst_forward_cached(tokens: &Mat, m_s: &Mat, p: &AttentionParams) -> Result<(Mat, WstCache)> {
    let n = tokens.rows;
    if tokens.cols != p.dim {
        return Err(Error::ShapeMismatch(format!(
            "tokens {}x{} vs dim {}",
            tokens.rows, tokens.cols, p.dim
        )));
    }
    validate_mask(m_s, n)?;
    let (h1, ln1) = layer_norm_forward(tokens, &p.ln1_gain, &p.ln1_bias);
    let q = h1.matmul(&p.wq);
    let k = h1.matmul(&p.wk);
    let v = h1.matmul(&p.wv);
    let scores = q.matmul_nt(&k);
    let weights = masked_softmax(&scores, m_s, 1.0 / (n as f64).sqrt());
    let attn_out = weights.matmul(&v);
    let projected = attn_out.matmul(&p.wo);
    let mut x2 = tokens.clone();
    x2.add_assign(&projected);

    let (h2, ln2) = layer_norm_forward(&x2, &p.ln2_gain, &p.ln2_bias);
    let mut mlp_pre = h2.matmul(&p.mlp_w1);
    for r in 0..mlp_pre.rows {
        for c in 0..mlp_pre.cols {
            let v = mlp_pre.get(r, c) + p.mlp_b1[c];
            mlp_pre.set(r, c, v);
        }
    }
    let mut mlp_act = mlp_pre.clone();
    for v in &mut mlp_act.data {
        *v = v.max(0.0);
    }
    let mut mlp_out = mlp_act.matmul(&p.mlp_w2);
    for r in 0..mlp_out.rows {
        for c in 0..mlp_out.cols {
            let v = mlp_out.get(r, c) + p.mlp_b2[c];
            mlp_out.set(r, c, v);
        }
    }
    let mut y = x2.clone();
    y.add_assign(&mlp_out);

    let cache = WstCache {
        x: tokens.clone(),
        ln1,
        h1,
        q,
        k,
        v,
        softmax: SoftmaxCache { weights },
        attn_out,
        ln2,
        h2,
        mlp_pre,
        mlp_act,
    };
    Ok((y, cache))
}

/// Backward pass of [`wst_forward_cached`]; accumulates parameter gradients
/// into `grads` and returns the gradient w.r.t. the input tokens.
pub fn wst_backward(
    grad_y: &Mat,
    m_s: &Mat,
    p: &AttentionParams,
    cache: &WstCache,
    grads: &mut AttentionParams,
) -> Mat {
    let n = cache.x.rows;
    let scale = 1.0 / (n as f64).sqrt();

    // MLP branch
    let d_mlp_out = grad_y; // residual: dy flows to both x2 and mlp path
    for c in 0..p.dim {
        for r in 0..grad_y.rows {
            grads.mlp_b2[c] += d_mlp_out.get(r, c);
        }
    }
    grads.mlp_w2.add_assign(&cache.mlp_act.matmul_tn(d_mlp_out));
    let mut d_act = d_mlp_out.matmul_nt(&p.mlp_w2);
    for (da, pre) in d_act.data.iter_mut().zip(&cache.mlp_pre.data) {
        if *pre <= 0.0 {
            *da = 0.0;
        }
    }
    for c in 0..4 * p.dim {
        for r in 0..d_act.rows {
            grads.mlp_b1[c] += d_act.get(r, c);
        }
    }
    grads.mlp_w1.add_assign(&cache.h2.matmul_tn(&d_act));
    let d_h2 = d_act.matmul_nt(&p.mlp_w1);
    let (d_x2_ln, dg2, db2) = layer_norm_backward(&d_h2, &cache.ln2, &p.ln2_gain);
    for (a, b) in grads.ln2_gain.iter_mut().zip(&dg2) {
        *a += b;
    }
    for (a, b) in grads.ln2_bias.iter_mut().zip(&db2) {
        *a += b;
    }
    let mut d_x2 = grad_y.clone();
    d_x2.add_assign(&d_x2_ln);

    // attention branch
    let d_projected = &d_x2;
    grads.wo.add_assign(&cache.attn_out.matmul_tn(d_projected));
    let d_attn_out = d_projected.matmul_nt(&p.wo);
    let weights = &cache.softmax.weights;
    let d_weights = d_attn_out.matmul_nt(&cache.v);
    let d_v = weights.matmul_tn(&d_attn_out);
    // softmax backward per row, zero on masked or fully-masked entries
    let mut d_logits = Mat::zeros(n, n);
    for r in 0..n {
        let mut dot = 0.0;
        for c in 0..n {
            dot += d_weights.get(r, c) * weights.get(r, c);
        }
        for c in 0..n {
            let w = weights.get(r, c);
            if w > 0.0 || m_s.get(r, c) != f64::NEG_INFINITY {
                d_logits.set(r, c, w * (d_weights.get(r, c) - dot));
            }
        }
    }
    // logit = score * m * scale on unmasked entries
    let mut d_scores = Mat::zeros(n, n);
    for r in 0..n {
        for c in 0..n {
            let m = m_s.get(r, c);
            if m != f64::NEG_INFINITY {
                d_scores.set(r, c, d_logits.get(r, c) * m * scale);
            }
        }
    }
    let d_q = d_scores.matmul(&cache.k);
    let d_k = d_scores.matmul_tn(&cache.q);
    grads.wq.add_assign(&cache.h1.matmul_tn(&d_q));
    grads.wk.add_assign(&cache.h1.matmul_tn(&d_k));
    grads.wv.add_assign(&cache.h1.matmul_tn(&d_v));
    let mut d_h1 = d_q.matmul_nt(&p.wq);
    d_h1.add_assign(&d_k.matmul_nt(&p.wk));
    d_h1.add_assign(&d_v.matmul_nt(&p.wv));
    let (d_x_ln, dg1, db1) = layer_norm_backward(&d_h1, &cache.ln1, &p.ln1_gain);
    for (a, b) in grads.ln1_gain.iter_mut().zip(&dg1) {
        *a += b;
    }
    for (a, b) in grads.ln1_bias.iter_mut().zip(&db1) {
        *a += b;
    }
    let mut d_x = d_x2;
    d_x.add_assign(&d_x_ln);
    d_x
}
