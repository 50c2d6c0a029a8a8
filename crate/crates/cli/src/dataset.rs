//! Procedural clean-image generation and dataset directory handling.
//!
//! Clean images are saturated HSV noise fields with a few hard-edged
//! rectangles: the saturation keeps per-patch channel minima low (so the
//! dark channel behaves like it does on natural outdoor images) and the
//! rectangle edges provide high-frequency structure for the wavelet prompt.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::Rng;

use prodehaze_core::io::{load_image, save_image};
use prodehaze_core::seed::{derive_seed, rng_from_seed};
use prodehaze_core::synthesis::{sample_haze_params, synthesize_hazy, value_noise_field, HazeParams, HazeRanges};
use prodehaze_core::tensor::ImageTensor;

use crate::error::{CliError, Result};

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h = (h.rem_euclid(1.0)) * 6.0;
    let i = h.floor() as usize % 6;
    let f = h - h.floor();
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match i {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// Deterministic procedural clean image.
pub fn generate_clean_image(height: usize, width: usize, seed: u64) -> ImageTensor {
    let cell = (height.min(width) / 4).max(2);
    let hue = value_noise_field(height, width, derive_seed(seed, "hue"), cell, 2);
    let sat = value_noise_field(height, width, derive_seed(seed, "sat"), cell, 2);
    let val = value_noise_field(height, width, derive_seed(seed, "val"), cell, 3);
    let mut img = ImageTensor::from_fn(height, width, 3, |y, x, c| {
        let rgb = hsv_to_rgb(
            hue.get(y, x, 0),
            0.55 + 0.4 * sat.get(y, x, 0),
            0.25 + 0.65 * val.get(y, x, 0),
        );
        rgb[c]
    })
    .expect("finite hsv values");

    // a few hard-edged rectangles for wavelet-visible structure
    let mut rng = rng_from_seed(derive_seed(seed, "rects"));
    let n_rects = 2 + (rng.gen::<u64>() % 3) as usize;
    let mut data: Vec<f64> = img.data().to_vec();
    for _ in 0..n_rects {
        let rw = rng.gen_range(width / 6..=width / 2).max(1);
        let rh = rng.gen_range(height / 6..=height / 2).max(1);
        let x0 = rng.gen_range(0..width.saturating_sub(rw).max(1));
        let y0 = rng.gen_range(0..height.saturating_sub(rh).max(1));
        let color = hsv_to_rgb(rng.gen::<f64>(), 0.9, 0.3 + 0.6 * rng.gen::<f64>());
        for y in y0..(y0 + rh).min(height) {
            for x in x0..(x0 + rw).min(width) {
                for c in 0..3 {
                    data[(y * width + x) * 3 + c] = color[c];
                }
            }
        }
    }
    img = ImageTensor::new(height, width, 3, data).expect("finite rectangle paint");
    img
}

pub fn file_stem(index: usize) -> String {
    format!("img_{index:04}")
}

/// One synthesized pair written to `<root>/{clean,hazy,meta}`.
pub struct SynthesizedPair {
    pub name: String,
    pub clean: ImageTensor,
    pub hazy: ImageTensor,
    pub params: HazeParams,
}

pub fn synthesize_pair_for_index(
    seed: u64,
    index: usize,
    height: usize,
    width: usize,
    ranges: &HazeRanges,
) -> Result<SynthesizedPair> {
    let clean = generate_clean_image(height, width, derive_seed(seed, &format!("synth/clean/{index}")));
    let params = sample_haze_params(derive_seed(seed, &format!("synth/params/{index}")), ranges)?;
    let hazy = synthesize_hazy(&clean, &params)?;
    Ok(SynthesizedPair {
        name: file_stem(index),
        clean,
        hazy,
        params,
    })
}

pub fn write_pair(root: &Path, pair: &SynthesizedPair) -> Result<()> {
    save_image(&pair.clean, root.join("clean").join(format!("{}.png", pair.name)))?;
    save_image(&pair.hazy, root.join("hazy").join(format!("{}.png", pair.name)))?;
    let meta = serde_json::to_string_pretty(&pair.params)
        .map_err(prodehaze_core::Error::Json)?;
    std::fs::write(
        root.join("meta").join(format!("{}.json", pair.name)),
        meta + "\n",
    )?;
    Ok(())
}

/// Sorted (name, hazy, clean) triples from a dataset root.
pub fn load_dataset(root: &Path) -> Result<Vec<(String, ImageTensor, ImageTensor)>> {
    let hazy_dir = root.join("hazy");
    let clean_dir = root.join("clean");
    if !hazy_dir.is_dir() || !clean_dir.is_dir() {
        return Err(CliError::Dataset(format!(
            "{} does not contain hazy/ and clean/ (run `synth` first)",
            root.display()
        )));
    }
    let mut by_name: BTreeMap<String, PathBuf> = BTreeMap::new();
    for entry in std::fs::read_dir(&hazy_dir)? {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) == Some("png") {
            if let Some(name) = path.file_stem().and_then(|n| n.to_str()) {
                by_name.insert(name.to_string(), path.clone());
            }
        }
    }
    if by_name.is_empty() {
        return Err(CliError::Dataset(format!(
            "no PNG inputs under {}",
            hazy_dir.display()
        )));
    }
    let mut out = Vec::with_capacity(by_name.len());
    for (name, hazy_path) in by_name {
        let clean_path = clean_dir.join(format!("{name}.png"));
        if !clean_path.is_file() {
            return Err(CliError::Dataset(format!(
                "missing clean counterpart for {name}"
            )));
        }
        out.push((name.clone(), load_image(&hazy_path)?, load_image(&clean_path)?));
    }
    Ok(out)
}

/// Sorted hazy inputs only (for `prompt`, `mask`, `dehaze`).
pub fn load_hazy_inputs(root: &Path) -> Result<Vec<(String, ImageTensor)>> {
    Ok(load_dataset(root)?
        .into_iter()
        .map(|(name, hazy, _)| (name, hazy))
        .collect())
}
