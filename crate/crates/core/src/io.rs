//! Image file I/O: 8-bit RGB/grayscale PNG and binary PPM (P6), nothing else.
//!
//! Values are quantized only at the file boundary (`round(v * 255)` on save,
//! `v / 255` on load), so a save/load round trip moves each value by at most
//! 1/255.

use std::fs;
use std::io::BufWriter;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::ImageTensor;

const PNG_SIGNATURE: [u8; 8] = [0x89, b'P', b'N', b'G', b'\r', b'\n', 0x1a, b'\n'];

/// Loads an 8-bit PNG or binary PPM into a 3-channel tensor scaled to [0, 1].
/// Grayscale PNG is replicated across the three channels.
pub fn load_image<P: AsRef<Path>>(path: P) -> Result<ImageTensor> {
    let path = path.as_ref();
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(Error::FileNotFound(path.to_path_buf()))
        }
        Err(e) => return Err(Error::Io(e)),
    };
    if bytes.starts_with(&PNG_SIGNATURE) {
        decode_png(&bytes)
    } else if bytes.starts_with(b"P6") {
        decode_ppm(&bytes)
    } else {
        Err(Error::UnsupportedFormat(format!(
            "{}: not a PNG or binary PPM (P6) file",
            path.display()
        )))
    }
}

/// Saves a 1- or 3-channel tensor. The extension selects the format
/// (`.png` or `.ppm`); values are clamped to [0, 1] before quantization.
pub fn save_image<P: AsRef<Path>>(img: &ImageTensor, path: P) -> Result<()> {
    let path = path.as_ref();
    if img.channels() != 1 && img.channels() != 3 {
        return Err(Error::BadChannelCount {
            expected: "1 or 3".into(),
            got: img.channels(),
        });
    }
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .unwrap_or_default();
    match ext.as_str() {
        "png" => save_png(img, path),
        "ppm" => save_ppm(img, path),
        other => Err(Error::UnsupportedFormat(format!(
            "cannot write extension {other:?}; use .png or .ppm"
        ))),
    }
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn decode_png(bytes: &[u8]) -> Result<ImageTensor> {
    let decoder = png::Decoder::new(bytes);
    let mut reader = decoder.read_info().map_err(map_png_err)?;
    let info = reader.info();
    if info.bit_depth != png::BitDepth::Eight {
        return Err(Error::UnsupportedFormat(format!(
            "PNG bit depth {:?}; only 8-bit supported",
            info.bit_depth
        )));
    }
    let color = info.color_type;
    let src_channels = match color {
        png::ColorType::Rgb => 3,
        png::ColorType::Grayscale => 1,
        other => {
            return Err(Error::UnsupportedFormat(format!(
                "PNG color type {other:?}; only RGB and grayscale supported"
            )))
        }
    };
    let mut buf = vec![0u8; reader.output_buffer_size()];
    let frame = reader.next_frame(&mut buf).map_err(map_png_err)?;
    let (w, h) = (frame.width as usize, frame.height as usize);
    let raw = &buf[..frame.buffer_size()];
    let mut data = Vec::with_capacity(h * w * 3);
    for px in 0..h * w {
        for c in 0..3 {
            let v = raw[px * src_channels + c.min(src_channels - 1)];
            data.push(v as f64 / 255.0);
        }
    }
    ImageTensor::new(h, w, 3, data)
}

fn map_png_err(e: png::DecodingError) -> Error {
    match e {
        png::DecodingError::Format(f) => Error::CorruptHeader(f.to_string()),
        png::DecodingError::IoError(io) => Error::CorruptPayload(io.to_string()),
        other => Error::CorruptPayload(other.to_string()),
    }
}

fn save_png(img: &ImageTensor, path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::UnwritablePath {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut encoder = png::Encoder::new(
        BufWriter::new(file),
        img.width() as u32,
        img.height() as u32,
    );
    encoder.set_color(if img.channels() == 1 {
        png::ColorType::Grayscale
    } else {
        png::ColorType::Rgb
    });
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder
        .write_header()
        .map_err(|e| Error::CorruptPayload(e.to_string()))?;
    let bytes: Vec<u8> = img.data().iter().map(|&v| quantize(v)).collect();
    writer
        .write_image_data(&bytes)
        .map_err(|e| Error::CorruptPayload(e.to_string()))?;
    Ok(())
}

fn save_ppm(img: &ImageTensor, path: &Path) -> Result<()> {
    let mut out = Vec::with_capacity(img.height() * img.width() * 3 + 32);
    out.extend_from_slice(format!("P6\n{} {}\n255\n", img.width(), img.height()).as_bytes());
    for y in 0..img.height() {
        for x in 0..img.width() {
            for c in 0..3 {
                out.push(quantize(img.get(y, x, c.min(img.channels() - 1))));
            }
        }
    }
    fs::write(path, out).map_err(|e| Error::UnwritablePath {
        path: path.to_path_buf(),
        source: e,
    })
}

/// PPM tokenizer: skips whitespace and `#` comments between header fields.
struct PpmScanner<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> PpmScanner<'a> {
    fn skip_separators(&mut self) {
        loop {
            while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
                self.pos += 1;
            }
            if self.pos < self.bytes.len() && self.bytes[self.pos] == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else {
                return;
            }
        }
    }

    fn read_number(&mut self) -> Result<usize> {
        self.skip_separators();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if self.pos == start {
            return Err(Error::CorruptHeader("expected ASCII integer".into()));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::CorruptHeader("unparsable integer".into()))
    }
}

fn decode_ppm(bytes: &[u8]) -> Result<ImageTensor> {
    let mut t = PpmScanner { bytes, pos: 2 }; // skip the "P6" magic
    let width = t.read_number()?;
    let height = t.read_number()?;
    let maxval = t.read_number()?;
    if maxval != 255 {
        return Err(Error::UnsupportedFormat(format!(
            "PPM maxval {maxval}; only 255 supported"
        )));
    }
    if width == 0 || height == 0 {
        return Err(Error::CorruptHeader("zero dimension".into()));
    }
    // exactly one whitespace byte separates the header from the payload
    if t.pos >= bytes.len() || !bytes[t.pos].is_ascii_whitespace() {
        return Err(Error::CorruptHeader("missing separator after maxval".into()));
    }
    t.pos += 1;
    let need = width * height * 3;
    let body = &bytes[t.pos..];
    if body.len() < need {
        return Err(Error::CorruptPayload(format!(
            "expected {need} pixel bytes, found {}",
            body.len()
        )));
    }
    let data = body[..need].iter().map(|&b| b as f64 / 255.0).collect();
    ImageTensor::new(height, width, 3, data)
}
