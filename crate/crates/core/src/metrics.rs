//! Full-reference image quality metrics: PSNR, SSIM (on luma, 11×11
//! Gaussian window σ = 1.5), and mean per-pixel CIEDE2000 in CIELAB under
//! D65, plus a directory-level evaluation harness.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::load_image;
use crate::tensor::ImageTensor;

/// PSNR in dB over all channels, capped at 99 dB (identical images).
pub fn psnr(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::ShapeMismatch(format!(
            "{:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.len() as f64;
    if mse == 0.0 {
        return Ok(99.0);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(99.0))
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn luma(img: &ImageTensor) -> Vec<f64> {
    let (h, w) = (img.height(), img.width());
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            if img.channels() == 1 {
                out.push(img.get(y, x, 0));
            } else {
                out.push(
                    0.299 * img.get(y, x, 0) + 0.587 * img.get(y, x, 1) + 0.114 * img.get(y, x, 2),
                );
            }
        }
    }
    out
}

fn gaussian_kernel(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size / 2) as f64;
    let mut k: Vec<f64> = (0..size * size)
        .map(|i| {
            let y = (i / size) as f64 - c;
            let x = (i % size) as f64 - c;
            (-(x * x + y * y) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let sum: f64 = k.iter().sum();
    for v in &mut k {
        *v /= sum;
    }
    k
}

/// Mean SSIM over all valid (fully interior) window positions, computed on
/// luma with `L = 1`.
pub fn ssim(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::ShapeMismatch(format!(
            "{:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let (h, w) = (a.height(), a.width());
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::InvalidParameter(format!(
            "image {h}x{w} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window"
        )));
    }
    let (ya, yb) = (luma(a), luma(b));
    let kernel = gaussian_kernel(SSIM_WINDOW, SSIM_SIGMA);
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let mut total = 0.0;
    let mut count = 0usize;
    for oy in 0..=h - SSIM_WINDOW {
        for ox in 0..=w - SSIM_WINDOW {
            let mut mu_x = 0.0;
            let mut mu_y = 0.0;
            for ky in 0..SSIM_WINDOW {
                for kx in 0..SSIM_WINDOW {
                    let kv = kernel[ky * SSIM_WINDOW + kx];
                    mu_x += kv * ya[(oy + ky) * w + ox + kx];
                    mu_y += kv * yb[(oy + ky) * w + ox + kx];
                }
            }
            let mut var_x = 0.0;
            let mut var_y = 0.0;
            let mut cov = 0.0;
            for ky in 0..SSIM_WINDOW {
                for kx in 0..SSIM_WINDOW {
                    let kv = kernel[ky * SSIM_WINDOW + kx];
                    let dx = ya[(oy + ky) * w + ox + kx] - mu_x;
                    let dy = yb[(oy + ky) * w + ox + kx] - mu_y;
                    var_x += kv * dx * dx;
                    var_y += kv * dy * dy;
                    cov += kv * (dx * dy);
                }
            }
            let num = (2.0 * (mu_x * mu_y) + c1) * (2.0 * cov + c2);
            let den = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2);
            total += num / den;
            count += 1;
        }
    }
    Ok(total / count as f64)
}

fn srgb_to_linear(v: f64) -> f64 {
    if v <= 0.04045 {
        v / 12.92
    } else {
        ((v + 0.055) / 1.055).powf(2.4)
    }
}

/// sRGB in [0, 1] to CIELAB under D65.
pub fn rgb_to_lab(rgb: [f64; 3]) -> [f64; 3] {
    let r = srgb_to_linear(rgb[0]);
    let g = srgb_to_linear(rgb[1]);
    let b = srgb_to_linear(rgb[2]);
    let x = 0.4124564 * r + 0.3575761 * g + 0.1804375 * b;
    let y = 0.2126729 * r + 0.7151522 * g + 0.0721750 * b;
    let z = 0.0193339 * r + 0.1191920 * g + 0.9503041 * b;
    let (xn, yn, zn) = (0.95047, 1.0, 1.08883);
    let f = |t: f64| {
        let delta: f64 = 6.0 / 29.0;
        if t > delta.powi(3) {
            t.cbrt()
        } else {
            t / (3.0 * delta * delta) + 4.0 / 29.0
        }
    };
    let (fx, fy, fz) = (f(x / xn), f(y / yn), f(z / zn));
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

/// CIEDE2000 color difference between two Lab triples (kL = kC = kH = 1),
/// following the Sharma-Wang-Dalal formulation.
pub fn ciede2000_lab(lab1: [f64; 3], lab2: [f64; 3]) -> f64 {
    let (l1, a1, b1) = (lab1[0], lab1[1], lab1[2]);
    let (l2, a2, b2) = (lab2[0], lab2[1], lab2[2]);

    let c1 = (a1 * a1 + b1 * b1).sqrt();
    let c2 = (a2 * a2 + b2 * b2).sqrt();
    let c_bar = (c1 + c2) / 2.0;
    let c_bar7 = c_bar.powi(7);
    let g = 0.5 * (1.0 - (c_bar7 / (c_bar7 + 25.0f64.powi(7))).sqrt());
    let a1p = (1.0 + g) * a1;
    let a2p = (1.0 + g) * a2;
    let c1p = (a1p * a1p + b1 * b1).sqrt();
    let c2p = (a2p * a2p + b2 * b2).sqrt();

    let hp = |a: f64, b: f64| -> f64 {
        if a == 0.0 && b == 0.0 {
            0.0
        } else {
            let h = b.atan2(a).to_degrees();
            if h < 0.0 {
                h + 360.0
            } else {
                h
            }
        }
    };
    let h1p = hp(a1p, b1);
    let h2p = hp(a2p, b2);

    let dl = l2 - l1;
    let dc = c2p - c1p;
    let dh = if c1p * c2p == 0.0 {
        0.0
    } else {
        let diff = h2p - h1p;
        if diff.abs() <= 180.0 {
            diff
        } else if diff > 180.0 {
            diff - 360.0
        } else {
            diff + 360.0
        }
    };
    let dh_big = 2.0 * (c1p * c2p).sqrt() * (dh.to_radians() / 2.0).sin();

    let l_bar = (l1 + l2) / 2.0;
    let c_bar_p = (c1p + c2p) / 2.0;
    let h_bar = if c1p * c2p == 0.0 {
        h1p + h2p
    } else {
        let sum = h1p + h2p;
        let diff = (h1p - h2p).abs();
        if diff <= 180.0 {
            sum / 2.0
        } else if sum < 360.0 {
            (sum + 360.0) / 2.0
        } else {
            (sum - 360.0) / 2.0
        }
    };

    let t = 1.0 - 0.17 * ((h_bar - 30.0).to_radians()).cos()
        + 0.24 * ((2.0 * h_bar).to_radians()).cos()
        + 0.32 * ((3.0 * h_bar + 6.0).to_radians()).cos()
        - 0.20 * ((4.0 * h_bar - 63.0).to_radians()).cos();
    let dtheta = 30.0 * (-((h_bar - 275.0) / 25.0).powi(2)).exp();
    let c_bar_p7 = c_bar_p.powi(7);
    let rc = 2.0 * (c_bar_p7 / (c_bar_p7 + 25.0f64.powi(7))).sqrt();
    let sl = 1.0 + 0.015 * (l_bar - 50.0).powi(2) / (20.0 + (l_bar - 50.0).powi(2)).sqrt();
    let sc = 1.0 + 0.045 * c_bar_p;
    let sh = 1.0 + 0.015 * c_bar_p * t;
    let rt = -(2.0 * dtheta * PI / 180.0).sin() * rc;

    let (tl, tc, th) = (dl / sl, dc / sc, dh_big / sh);
    (tl * tl + tc * tc + th * th + rt * tc * th).sqrt()
}

/// Mean per-pixel CIEDE2000 between two RGB images.
pub fn ciede2000(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::ShapeMismatch(format!(
            "{:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    if a.channels() != 3 {
        return Err(Error::BadChannelCount {
            expected: "3".into(),
            got: a.channels(),
        });
    }
    let mut total = 0.0;
    for y in 0..a.height() {
        for x in 0..a.width() {
            let lab_a = rgb_to_lab([a.get(y, x, 0), a.get(y, x, 1), a.get(y, x, 2)]);
            let lab_b = rgb_to_lab([b.get(y, x, 0), b.get(y, x, 1), b.get(y, x, 2)]);
            total += ciede2000_lab(lab_a, lab_b);
        }
    }
    Ok(total / (a.height() * a.width()) as f64)
}

/// One evaluated image pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub name: String,
    pub psnr_db: f64,
    pub ssim: f64,
    pub ciede2000: f64,
}

/// Configuration echo carried in every report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricConfig {
    pub ssim_window: usize,
    pub ssim_sigma: f64,
    pub lab_illuminant: String,
    pub ciede_aggregation: String,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            ssim_window: SSIM_WINDOW,
            ssim_sigma: SSIM_SIGMA,
            lab_illuminant: "D65".into(),
            ciede_aggregation: "per-pixel mean, then per-image mean".into(),
        }
    }
}

/// Dataset evaluation result: per-image rows in filename order, aggregate
/// means, and the list of files present on only one side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub rows: Vec<MetricRow>,
    pub mean_psnr_db: f64,
    pub mean_ssim: f64,
    pub mean_ciede2000: f64,
    pub skipped: Vec<String>,
    pub config: MetricConfig,
}

impl MetricReport {
    pub fn to_csv_string(&self) -> Result<String> {
        let mut wtr = csv::Writer::from_writer(Vec::new());
        wtr.write_record(["name", "psnr_db", "ssim", "ciede2000"])
            .map_err(|e| Error::InvalidParameter(e.to_string()))?;
        for row in &self.rows {
            wtr.write_record([
                row.name.as_str(),
                &format!("{:.6}", row.psnr_db),
                &format!("{:.6}", row.ssim),
                &format!("{:.6}", row.ciede2000),
            ])
            .map_err(|e| Error::InvalidParameter(e.to_string()))?;
        }
        wtr.write_record([
            "aggregate_mean",
            &format!("{:.6}", self.mean_psnr_db),
            &format!("{:.6}", self.mean_ssim),
            &format!("{:.6}", self.mean_ciede2000),
        ])
        .map_err(|e| Error::InvalidParameter(e.to_string()))?;
        String::from_utf8(
            wtr.into_inner()
                .map_err(|e| Error::InvalidParameter(e.to_string()))?,
        )
        .map_err(|e| Error::InvalidParameter(e.to_string()))
    }
}

fn image_files(dir: &Path) -> Result<BTreeMap<String, std::path::PathBuf>> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir)? {
        let entry = entry?;
        let path = entry.path();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase())
            .unwrap_or_default();
        if path.is_file() && (ext == "png" || ext == "ppm") {
            if let Some(name) = path.file_name().and_then(|n| n.to_str()) {
                out.insert(name.to_string(), path.clone());
            }
        }
    }
    Ok(out)
}

/// Evaluates every filename present in both directories, in sorted order.
/// Files present on only one side are listed in `skipped`.
pub fn evaluate_dataset<P: AsRef<Path>>(pred_dir: P, gt_dir: P) -> Result<MetricReport> {
    let preds = image_files(pred_dir.as_ref())?;
    let gts = image_files(gt_dir.as_ref())?;
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for name in preds.keys() {
        if !gts.contains_key(name) {
            skipped.push(format!("{name} (prediction only)"));
        }
    }
    for name in gts.keys() {
        if !preds.contains_key(name) {
            skipped.push(format!("{name} (reference only)"));
        }
    }
    skipped.sort();
    for (name, pred_path) in &preds {
        let Some(gt_path) = gts.get(name) else {
            continue;
        };
        let pred = load_image(pred_path)?;
        let gt = load_image(gt_path)?;
        rows.push(MetricRow {
            name: name.clone(),
            psnr_db: psnr(&pred, &gt)?,
            ssim: ssim(&pred, &gt)?,
            ciede2000: ciede2000(&pred, &gt)?,
        });
    }
    let n = rows.len().max(1) as f64;
    Ok(MetricReport {
        mean_psnr_db: rows.iter().map(|r| r.psnr_db).sum::<f64>() / n,
        mean_ssim: rows.iter().map(|r| r.ssim).sum::<f64>() / n,
        mean_ciede2000: rows.iter().map(|r| r.ciede2000).sum::<f64>() / n,
        rows,
        skipped,
        config: MetricConfig::default(),
    })
}
