//! Small dense linear-algebra and layer primitives with explicit
//! forward/backward pairs. Everything is f64 and single-threaded; gradients
//! are verified against central finite differences in the tests.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::ImageTensor;

/// Dense row-major matrix. Unlike [`ImageTensor`] it may carry `-inf`
/// sentinels (attention masks live here).
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Self { rows, cols, data }
    }

    pub fn filled(rows: usize, cols: usize, v: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![v; rows * cols],
        }
    }

    pub fn random(rows: usize, cols: usize, scale: f64, rng: &mut ChaCha8Rng) -> Self {
        let data = (0..rows * cols)
            .map(|_| (rng.gen::<f64>() * 2.0 - 1.0) * scale)
            .collect();
        Self { rows, cols, data }
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// `self · other`
    pub fn matmul(&self, other: &Mat) -> Mat {
        assert_eq!(self.cols, other.rows, "matmul shapes");
        let mut out = Mat::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(r, k);
                if a == 0.0 {
                    continue;
                }
                for c in 0..other.cols {
                    out.data[r * other.cols + c] += a * other.get(k, c);
                }
            }
        }
        out
    }

    /// `selfᵀ · other`
    pub fn matmul_tn(&self, other: &Mat) -> Mat {
        assert_eq!(self.rows, other.rows, "matmul_tn shapes");
        let mut out = Mat::zeros(self.cols, other.cols);
        for k in 0..self.rows {
            for r in 0..self.cols {
                let a = self.get(k, r);
                if a == 0.0 {
                    continue;
                }
                for c in 0..other.cols {
                    out.data[r * other.cols + c] += a * other.get(k, c);
                }
            }
        }
        out
    }

    /// `self · otherᵀ`
    pub fn matmul_nt(&self, other: &Mat) -> Mat {
        assert_eq!(self.cols, other.cols, "matmul_nt shapes");
        let mut out = Mat::zeros(self.rows, other.rows);
        for r in 0..self.rows {
            for c in 0..other.rows {
                let mut acc = 0.0;
                for k in 0..self.cols {
                    acc += self.get(r, k) * other.get(c, k);
                }
                out.data[r * other.rows + c] = acc;
            }
        }
        out
    }

    pub fn add_assign(&mut self, other: &Mat) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// 2D convolution with odd square kernels and zero "same" padding.
/// Weights are stored `[ky][kx][cin][cout]`, biases per output channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub ksize: usize,
    pub cin: usize,
    pub cout: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv2d {
    pub fn zeros(ksize: usize, cin: usize, cout: usize) -> Self {
        assert!(ksize % 2 == 1, "kernel size must be odd");
        Self {
            ksize,
            cin,
            cout,
            weight: vec![0.0; ksize * ksize * cin * cout],
            bias: vec![0.0; cout],
        }
    }

    pub fn seeded(ksize: usize, cin: usize, cout: usize, scale: f64, rng: &mut ChaCha8Rng) -> Self {
        let mut conv = Self::zeros(ksize, cin, cout);
        for w in conv.weight.iter_mut() {
            *w = (rng.gen::<f64>() * 2.0 - 1.0) * scale;
        }
        conv
    }

    /// Center-tap pass-through: output channel `o` copies input channel `o`
    /// scaled by `gain` (channels beyond `cin` are dropped).
    pub fn identity_center(ksize: usize, cin: usize, cout: usize, gain: f64) -> Self {
        let mut conv = Self::zeros(ksize, cin, cout);
        let center = ksize / 2;
        for o in 0..cout.min(cin) {
            conv.set_w(center, center, o, o, gain);
        }
        conv
    }

    #[inline]
    fn w_idx(&self, ky: usize, kx: usize, ci: usize, co: usize) -> usize {
        ((ky * self.ksize + kx) * self.cin + ci) * self.cout + co
    }

    pub fn set_w(&mut self, ky: usize, kx: usize, ci: usize, co: usize, v: f64) {
        let i = self.w_idx(ky, kx, ci, co);
        self.weight[i] = v;
    }

    pub fn forward(&self, x: &ImageTensor) -> Result<ImageTensor> {
        if x.channels() != self.cin {
            return Err(Error::BadChannelCount {
                expected: self.cin.to_string(),
                got: x.channels(),
            });
        }
        let (h, w) = (x.height(), x.width());
        let r = (self.ksize / 2) as isize;
        ImageTensor::from_fn(h, w, self.cout, |y, x_, co| {
            let mut acc = self.bias[co];
            for ky in 0..self.ksize {
                let yy = y as isize + ky as isize - r;
                if yy < 0 || yy >= h as isize {
                    continue;
                }
                for kx in 0..self.ksize {
                    let xx = x_ as isize + kx as isize - r;
                    if xx < 0 || xx >= w as isize {
                        continue;
                    }
                    for ci in 0..self.cin {
                        acc += x.get(yy as usize, xx as usize, ci)
                            * self.weight[self.w_idx(ky, kx, ci, co)];
                    }
                }
            }
            acc
        })
    }

    /// Accumulates weight/bias gradients into `grads` and returns the
    /// gradient w.r.t. the input.
    pub fn backward(
        &self,
        x: &ImageTensor,
        grad_out: &ImageTensor,
        grads: &mut Conv2d,
    ) -> Result<ImageTensor> {
        assert_eq!(grad_out.channels(), self.cout);
        assert_eq!(grads.weight.len(), self.weight.len());
        let (h, w) = (x.height(), x.width());
        let r = (self.ksize / 2) as isize;
        let mut gin = vec![0.0; h * w * self.cin];
        for y in 0..h {
            for x_ in 0..w {
                for co in 0..self.cout {
                    let go = grad_out.get(y, x_, co);
                    if go == 0.0 {
                        continue;
                    }
                    grads.bias[co] += go;
                    for ky in 0..self.ksize {
                        let yy = y as isize + ky as isize - r;
                        if yy < 0 || yy >= h as isize {
                            continue;
                        }
                        for kx in 0..self.ksize {
                            let xx = x_ as isize + kx as isize - r;
                            if xx < 0 || xx >= w as isize {
                                continue;
                            }
                            for ci in 0..self.cin {
                                let wi = self.w_idx(ky, kx, ci, co);
                                grads.weight[wi] += go * x.get(yy as usize, xx as usize, ci);
                                gin[(yy as usize * w + xx as usize) * self.cin + ci] +=
                                    go * self.weight[wi];
                            }
                        }
                    }
                }
            }
        }
        ImageTensor::new(h, w, self.cin, gin)
    }

    pub fn flatten_into(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(&self.weight);
        out.extend_from_slice(&self.bias);
    }

    pub fn unflatten_from(&mut self, src: &[f64], pos: &mut usize) {
        let nw = self.weight.len();
        self.weight.copy_from_slice(&src[*pos..*pos + nw]);
        *pos += nw;
        let nb = self.bias.len();
        self.bias.copy_from_slice(&src[*pos..*pos + nb]);
        *pos += nb;
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

pub fn relu(x: &ImageTensor) -> ImageTensor {
    x.map(|v| v.max(0.0)).expect("relu preserves finiteness")
}

/// ReLU gradient gate: passes `grad_out` where the pre-activation was
/// strictly positive.
pub fn relu_backward(pre: &ImageTensor, grad_out: &ImageTensor) -> ImageTensor {
    pre.zip_map(grad_out, |p, g| if p > 0.0 { g } else { 0.0 })
        .expect("matching shapes")
}

/// Nearest-neighbor ×2 upsampling.
pub fn upsample2(x: &ImageTensor) -> ImageTensor {
    ImageTensor::from_fn(x.height() * 2, x.width() * 2, x.channels(), |y, xx, c| {
        x.get(y / 2, xx / 2, c)
    })
    .expect("upsample preserves finiteness")
}

/// Gradient of [`upsample2`]: each source cell collects its 2×2 children.
pub fn upsample2_backward(grad_out: &ImageTensor) -> ImageTensor {
    let (h, w, c) = (
        grad_out.height() / 2,
        grad_out.width() / 2,
        grad_out.channels(),
    );
    ImageTensor::from_fn(h, w, c, |y, x, ch| {
        grad_out.get(2 * y, 2 * x, ch)
            + grad_out.get(2 * y, 2 * x + 1, ch)
            + grad_out.get(2 * y + 1, 2 * x, ch)
            + grad_out.get(2 * y + 1, 2 * x + 1, ch)
    })
    .expect("pool preserves finiteness")
}

pub const LN_EPS: f64 = 1e-5;

pub struct LnCache {
    pub xhat: Mat,
    pub rstd: Vec<f64>,
}

/// Per-row layer normalization with gain and bias.
pub fn layer_norm_forward(x: &Mat, gain: &[f64], bias: &[f64]) -> (Mat, LnCache) {
    assert_eq!(gain.len(), x.cols);
    assert_eq!(bias.len(), x.cols);
    let mut out = Mat::zeros(x.rows, x.cols);
    let mut xhat = Mat::zeros(x.rows, x.cols);
    let mut rstd = vec![0.0; x.rows];
    let d = x.cols as f64;
    for r in 0..x.rows {
        let row = x.row(r);
        let mean = row.iter().sum::<f64>() / d;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
        let rs = 1.0 / (var + LN_EPS).sqrt();
        rstd[r] = rs;
        for c in 0..x.cols {
            let xh = (row[c] - mean) * rs;
            xhat.set(r, c, xh);
            out.set(r, c, gain[c] * xh + bias[c]);
        }
    }
    (out, LnCache { xhat, rstd })
}

/// Returns (grad_in, grad_gain, grad_bias).
pub fn layer_norm_backward(
    grad_out: &Mat,
    cache: &LnCache,
    gain: &[f64],
) -> (Mat, Vec<f64>, Vec<f64>) {
    let (rows, cols) = (grad_out.rows, grad_out.cols);
    let mut gin = Mat::zeros(rows, cols);
    let mut dgain = vec![0.0; cols];
    let mut dbias = vec![0.0; cols];
    let d = cols as f64;
    for r in 0..rows {
        let mut sum_gy = 0.0;
        let mut sum_gy_xhat = 0.0;
        for c in 0..cols {
            let gy = grad_out.get(r, c) * gain[c];
            sum_gy += gy;
            sum_gy_xhat += gy * cache.xhat.get(r, c);
            dgain[c] += grad_out.get(r, c) * cache.xhat.get(r, c);
            dbias[c] += grad_out.get(r, c);
        }
        for c in 0..cols {
            let gy = grad_out.get(r, c) * gain[c];
            let xh = cache.xhat.get(r, c);
            gin.set(r, c, cache.rstd[r] * (gy - sum_gy / d - xh * sum_gy_xhat / d));
        }
    }
    (gin, dgain, dbias)
}

/// Elementwise SGD step on a flattened parameter view.
pub fn sgd_step(params: &mut [f64], grads: &[f64], lr: f64) {
    assert_eq!(params.len(), grads.len());
    for (p, g) in params.iter_mut().zip(grads) {
        *p -= lr * g;
    }
}
