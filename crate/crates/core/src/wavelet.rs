//! Single-level 2D orthonormal Haar transform.
//!
//! Per 2×2 block `[a b; c d]` (a top-left, d bottom-right) the four
//! coefficients are
//!
//! ```text
//! ll = (a + b + c + d) / 2      lh = (a + b - c - d) / 2
//! hl = (a - b + c - d) / 2      hh = (a - b - c + d) / 2
//! ```
//!
//! which is orthonormal: the sum of squared coefficients over all subbands
//! equals the sum of squared input values, and reconstruction is exact.

use crate::error::{Error, Result};
use crate::tensor::ImageTensor;

/// The four subbands of a single-level Haar decomposition, each at half
/// resolution. `lh` carries vertical detail (difference between rows),
/// `hl` horizontal detail, `hh` diagonal detail.
#[derive(Debug, Clone, PartialEq)]
pub struct HaarSubbands {
    pub ll: ImageTensor,
    pub lh: ImageTensor,
    pub hl: ImageTensor,
    pub hh: ImageTensor,
}

impl HaarSubbands {
    /// Sum of squared coefficients across all four subbands.
    pub fn energy(&self) -> f64 {
        [&self.ll, &self.lh, &self.hl, &self.hh]
            .iter()
            .map(|b| b.data().iter().map(|v| v * v).sum::<f64>())
            .sum()
    }
}

fn require_even(img: &ImageTensor) -> Result<()> {
    if img.height() % 2 != 0 || img.width() % 2 != 0 || img.height() == 0 || img.width() == 0 {
        return Err(Error::OddDimensions {
            height: img.height(),
            width: img.width(),
        });
    }
    Ok(())
}

/// Forward transform; requires even spatial dimensions.
pub fn haar_dwt(img: &ImageTensor) -> Result<HaarSubbands> {
    require_even(img)?;
    let (oh, ow, ch) = (img.height() / 2, img.width() / 2, img.channels());
    let mut ll = vec![0.0; oh * ow * ch];
    let mut lh = vec![0.0; oh * ow * ch];
    let mut hl = vec![0.0; oh * ow * ch];
    let mut hh = vec![0.0; oh * ow * ch];
    for y in 0..oh {
        for x in 0..ow {
            for c in 0..ch {
                let a = img.get(2 * y, 2 * x, c);
                let b = img.get(2 * y, 2 * x + 1, c);
                let cc = img.get(2 * y + 1, 2 * x, c);
                let d = img.get(2 * y + 1, 2 * x + 1, c);
                let i = (y * ow + x) * ch + c;
                ll[i] = (a + b + cc + d) / 2.0;
                lh[i] = (a + b - cc - d) / 2.0;
                hl[i] = (a - b + cc - d) / 2.0;
                hh[i] = (a - b - cc + d) / 2.0;
            }
        }
    }
    Ok(HaarSubbands {
        ll: ImageTensor::new(oh, ow, ch, ll)?,
        lh: ImageTensor::new(oh, ow, ch, lh)?,
        hl: ImageTensor::new(oh, ow, ch, hl)?,
        hh: ImageTensor::new(oh, ow, ch, hh)?,
    })
}

/// Exact inverse of [`haar_dwt`].
pub fn inverse_haar(sub: &HaarSubbands) -> Result<ImageTensor> {
    let (oh, ow, ch) = sub.ll.shape();
    for band in [&sub.lh, &sub.hl, &sub.hh] {
        if band.shape() != (oh, ow, ch) {
            return Err(Error::ShapeMismatch(format!(
                "subband {:?} vs {:?}",
                band.shape(),
                sub.ll.shape()
            )));
        }
    }
    ImageTensor::from_fn(oh * 2, ow * 2, ch, |y, x, c| {
        let (by, bx) = (y / 2, x / 2);
        let ll = sub.ll.get(by, bx, c);
        let lh = sub.lh.get(by, bx, c);
        let hl = sub.hl.get(by, bx, c);
        let hh = sub.hh.get(by, bx, c);
        match (y % 2, x % 2) {
            (0, 0) => (ll + lh + hl + hh) / 2.0,
            (0, 1) => (ll + lh - hl - hh) / 2.0,
            (1, 0) => (ll - lh + hl - hh) / 2.0,
            _ => (ll - lh - hl + hh) / 2.0,
        }
    })
}
