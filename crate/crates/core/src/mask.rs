//! Correlation map, top-k selection, and sparse attention-mask construction
//! from a flattened haze-density window.
//!
//! The correlation map `(m·wq)(m·wk)ᵀ = (wq·wkᵀ)·m mᵀ` is rank one by
//! construction. Its raw values are unbounded, so the finite mask weights
//! `1 − corr` use a copy clamped to [0, 1]; top-k selection runs on the
//! unclamped map so that positive rescaling of the weight vectors cannot
//! reshuffle the selected set through clamp-induced ties.

use crate::attention::window_partition;
use crate::dcp::DcpMask;
use crate::error::{Error, Result};
use crate::nn::Mat;
use crate::tensor::avg_pool;

/// Per-window mask bundle: the (clamped) correlation map, the selected
/// index set, and the sparse mask with `-inf` on selected pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskMatrix {
    pub n: usize,
    pub corr: Mat,
    pub corr_raw: Mat,
    pub topk_set: Vec<(usize, usize)>,
    pub sparse: Mat,
    pub wq: Vec<f64>,
    pub wk: Vec<f64>,
}

/// Neutral weight vector: all ones scaled by `1/sqrt(n_l)`, so the initial
/// scalar product `wq·wkᵀ` is 1.
pub fn neutral_weights(n_l: usize) -> Vec<f64> {
    vec![1.0 / (n_l as f64).sqrt(); n_l]
}

fn weight_dot(wq: &[f64], wk: &[f64]) -> Result<f64> {
    if wq.is_empty() || wq.len() != wk.len() {
        return Err(Error::LengthMismatch(format!(
            "wq len {} vs wk len {}",
            wq.len(),
            wk.len()
        )));
    }
    Ok(wq.iter().zip(wk).map(|(a, b)| a * b).sum())
}

fn outer_scaled(m_flat: &[f64], scale: f64) -> Mat {
    let n = m_flat.len();
    let mut out = Mat::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            out.set(i, j, scale * (m_flat[i] * m_flat[j]));
        }
    }
    out
}

fn check_unit_interval(m_flat: &[f64]) -> Result<()> {
    for &v in m_flat {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::InvalidParameter(format!(
                "mask vector entry {v} outside [0, 1]"
            )));
        }
    }
    Ok(())
}

/// Unclamped correlation map `(wq·wkᵀ) · m mᵀ`.
pub fn correlation_map_unclamped(m_flat: &[f64], wq: &[f64], wk: &[f64]) -> Result<Mat> {
    check_unit_interval(m_flat)?;
    Ok(outer_scaled(m_flat, weight_dot(wq, wk)?))
}

/// Correlation map clamped elementwise to [0, 1].
pub fn correlation_map(m_flat: &[f64], wq: &[f64], wk: &[f64]) -> Result<Mat> {
    let mut m = correlation_map_unclamped(m_flat, wq, wk)?;
    for v in &mut m.data {
        *v = v.clamp(0.0, 1.0);
    }
    Ok(m)
}

/// Indices of the `k` largest entries; ties break toward the smallest
/// row-major position. The returned set is listed in row-major order.
pub fn topk_indices(corr: &Mat, k: usize) -> Result<Vec<(usize, usize)>> {
    let total = corr.rows * corr.cols;
    if k > total {
        return Err(Error::KOutOfRange { k, max: total });
    }
    let mut order: Vec<usize> = (0..total).collect();
    order.sort_by(|&a, &b| {
        corr.data[b]
            .partial_cmp(&corr.data[a])
            .expect("correlation map is finite")
            .then(a.cmp(&b))
    });
    let mut picked: Vec<usize> = order.into_iter().take(k).collect();
    picked.sort_unstable();
    Ok(picked
        .into_iter()
        .map(|i| (i / corr.cols, i % corr.cols))
        .collect())
}

/// Sparse mask: `-inf` on the selected pairs, `1 − corr` elsewhere.
pub fn build_sparse_mask(corr: &Mat, topk: &[(usize, usize)]) -> Mat {
    let mut sparse = Mat::zeros(corr.rows, corr.cols);
    for i in 0..corr.rows {
        for j in 0..corr.cols {
            sparse.set(i, j, 1.0 - corr.get(i, j));
        }
    }
    for &(i, j) in topk {
        sparse.set(i, j, f64::NEG_INFINITY);
    }
    sparse
}

/// Full per-window pipeline: correlation, top-k on the unclamped map,
/// sparse mask from the clamped map.
pub fn build_mask_matrix(m_flat: &[f64], wq: &[f64], wk: &[f64], k: usize) -> Result<MaskMatrix> {
    let corr_raw = correlation_map_unclamped(m_flat, wq, wk)?;
    let mut corr = corr_raw.clone();
    for v in &mut corr.data {
        *v = v.clamp(0.0, 1.0);
    }
    let topk_set = topk_indices(&corr_raw, k)?;
    let sparse = build_sparse_mask(&corr, &topk_set);
    Ok(MaskMatrix {
        n: m_flat.len(),
        corr,
        corr_raw,
        topk_set,
        sparse,
        wq: wq.to_vec(),
        wk: wk.to_vec(),
    })
}

/// Builds one [`MaskMatrix`] per attention window: the full-resolution DCP
/// mask is mean-pooled to the feature resolution, tiled into windows
/// (row-major, matching [`window_partition`]), and each window is flattened
/// row-major into the density vector.
pub fn window_masks(
    dcp: &DcpMask,
    pool_factor: usize,
    window: (usize, usize),
    wq: &[f64],
    wk: &[f64],
    k_fraction: f64,
) -> Result<Vec<MaskMatrix>> {
    if !(0.0..=1.0).contains(&k_fraction) {
        return Err(Error::InvalidRange(format!(
            "k fraction {k_fraction} outside [0, 1]"
        )));
    }
    let pooled = avg_pool(&dcp.values, pool_factor)?;
    let grid = window_partition(&pooled, window)?;
    let n = window.0 * window.1;
    let k = ((k_fraction * (n * n) as f64).ceil() as usize).min(n * n);
    grid.windows
        .iter()
        .map(|w| {
            let m_flat: Vec<f64> = (0..n).map(|i| w.get(i, 0).clamp(0.0, 1.0)).collect();
            build_mask_matrix(&m_flat, wq, wk, k)
        })
        .collect()
}

/// All-ones mask of the same shape, for the unmodulated ablation arm.
pub fn ones_mask(n: usize) -> Mat {
    Mat::filled(n, n, 1.0)
}
