use crate::error::{Error, Result};

/// Row-major interleaved H×W×C tensor of finite f64 values.
///
/// Images carry values in the nominal range [0, 1]; latent features are
/// unbounded but always finite. Sentinel `-inf` masks never live here
/// (see [`crate::nn::Mat`] for attention masks).
///
/// Values are immutable after construction; every operation in this crate
/// builds a fresh tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ImageTensor {
    /// Builds a tensor, checking the length and finiteness invariants.
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::BadDataLength {
                height,
                width,
                channels,
                got: data.len(),
            });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue(i));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    /// Fills from a per-element closure `(y, x, c) -> value`.
    pub fn from_fn<F: FnMut(usize, usize, usize) -> f64>(
        height: usize,
        width: usize,
        channels: usize,
        mut f: F,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Self::new(height, width, channels, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn idx(&self, y: usize, x: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[self.idx(y, x, c)]
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.height == other.height
            && self.width == other.width
            && self.channels == other.channels
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn map<F: Fn(f64) -> f64>(&self, f: F) -> Result<Self> {
        Self::new(
            self.height,
            self.width,
            self.channels,
            self.data.iter().map(|&v| f(v)).collect(),
        )
    }

    pub fn zip_map<F: Fn(f64, f64) -> f64>(&self, other: &Self, f: F) -> Result<Self> {
        if !self.same_shape(other) {
            return Err(Error::ShapeMismatch(format!(
                "{:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Self::new(
            self.height,
            self.width,
            self.channels,
            self.data
                .iter()
                .zip(other.data.iter())
                .map(|(&a, &b)| f(a, b))
                .collect(),
        )
    }

    /// Channel-wise concatenation, `self` first.
    pub fn concat_channels(&self, other: &Self) -> Result<Self> {
        if self.height != other.height || self.width != other.width {
            return Err(Error::ShapeMismatch(format!(
                "spatial {}x{} vs {}x{}",
                self.height, self.width, other.height, other.width
            )));
        }
        let channels = self.channels + other.channels;
        Self::from_fn(self.height, self.width, channels, |y, x, c| {
            if c < self.channels {
                self.get(y, x, c)
            } else {
                other.get(y, x, c - self.channels)
            }
        })
    }

    /// Channel slice `[from, to)`.
    pub fn slice_channels(&self, from: usize, to: usize) -> Result<Self> {
        if from > to || to > self.channels {
            return Err(Error::InvalidParameter(format!(
                "channel slice [{from}, {to}) out of 0..{}",
                self.channels
            )));
        }
        Self::from_fn(self.height, self.width, to - from, |y, x, c| {
            self.get(y, x, from + c)
        })
    }

    pub fn clamp01(&self) -> Self {
        // clamp cannot introduce non-finite values; construct directly
        Self {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|v| v.clamp(0.0, 1.0)).collect(),
        }
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }
}

/// Block-mean downsampling by an integer factor that must divide both
/// spatial dimensions. Factor 1 is the identity.
pub fn avg_pool(img: &ImageTensor, factor: usize) -> Result<ImageTensor> {
    if factor == 0 || img.height() % factor != 0 || img.width() % factor != 0 {
        return Err(Error::NonDivisibleDimensions {
            height: img.height(),
            width: img.width(),
            factor,
        });
    }
    if factor == 1 {
        return Ok(img.clone());
    }
    let (oh, ow) = (img.height() / factor, img.width() / factor);
    let norm = 1.0 / (factor * factor) as f64;
    ImageTensor::from_fn(oh, ow, img.channels(), |y, x, c| {
        let mut acc = 0.0;
        for dy in 0..factor {
            for dx in 0..factor {
                acc += img.get(y * factor + dy, x * factor + dx, c);
            }
        }
        acc * norm
    })
}
