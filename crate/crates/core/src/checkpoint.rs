//! Checkpoint and raw-tensor sidecar containers. Both use the same layout:
//! a little-endian u32 header length, a JSON header, then a flat f64
//! little-endian payload.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diffusion::NoiseSchedule;
use crate::error::{Error, Result};
use crate::tensor::ImageTensor;

pub const CHECKPOINT_MAGIC: &str = "prodehaze-ckpt-v1";
pub const SIDECAR_MAGIC: &str = "prodehaze-raw-v1";

/// Named parameter-group shapes let the loader sanity-check a payload
/// before reconstructing weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub magic: String,
    pub stage: String,
    pub seed: u64,
    pub schedule: NoiseSchedule,
    pub shapes: Vec<(String, Vec<usize>)>,
    pub param_count: usize,
}

fn write_container(path: &Path, header_json: &[u8], payload: &[f64]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::UnwritablePath {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut w = std::io::BufWriter::new(file);
    w.write_all(&(header_json.len() as u32).to_le_bytes())?;
    w.write_all(header_json)?;
    for v in payload {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_container(path: &Path) -> Result<(Vec<u8>, Vec<f64>)> {
    let bytes = match std::fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(Error::MissingCheckpoint(path.to_path_buf()))
        }
        Err(e) => return Err(Error::Io(e)),
    };
    if bytes.len() < 4 {
        return Err(Error::BadCheckpoint("file shorter than header length".into()));
    }
    let header_len = u32::from_le_bytes(bytes[..4].try_into().expect("4 bytes")) as usize;
    if bytes.len() < 4 + header_len {
        return Err(Error::BadCheckpoint("truncated header".into()));
    }
    let header = bytes[4..4 + header_len].to_vec();
    let body = &bytes[4 + header_len..];
    if body.len() % 8 != 0 {
        return Err(Error::BadCheckpoint("payload not a whole number of f64".into()));
    }
    let mut payload = Vec::with_capacity(body.len() / 8);
    let mut rdr = body;
    let mut buf = [0u8; 8];
    while !rdr.is_empty() {
        rdr.read_exact(&mut buf)?;
        payload.push(f64::from_le_bytes(buf));
    }
    Ok((header, payload))
}

pub fn save_checkpoint<P: AsRef<Path>>(
    path: P,
    header: &CheckpointHeader,
    weights: &[f64],
) -> Result<()> {
    if header.param_count != weights.len() {
        return Err(Error::LengthMismatch(format!(
            "header says {} params, payload has {}",
            header.param_count,
            weights.len()
        )));
    }
    let json = serde_json::to_vec(header)?;
    write_container(path.as_ref(), &json, weights)
}

pub fn load_checkpoint<P: AsRef<Path>>(path: P) -> Result<(CheckpointHeader, Vec<f64>)> {
    let (header_bytes, payload) = read_container(path.as_ref())?;
    let header: CheckpointHeader = serde_json::from_slice(&header_bytes)?;
    if header.magic != CHECKPOINT_MAGIC {
        return Err(Error::BadCheckpoint(format!(
            "unexpected magic {:?}",
            header.magic
        )));
    }
    if header.param_count != payload.len() {
        return Err(Error::BadCheckpoint(format!(
            "header says {} params, payload has {}",
            header.param_count,
            payload.len()
        )));
    }
    Ok((header, payload))
}

/// Sidecar header: `{h, w, c, dtype: "f64"}` plus a magic tag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SidecarHeader {
    pub magic: String,
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub dtype: String,
}

/// Writes raw row-major values with a JSON `{h, w, c, dtype}` header.
/// `h`, `w`, `c` describe whatever tensor layout the producer documents;
/// for per-window masks `h` is the window count and `w = c = N`.
pub fn save_sidecar_raw<P: AsRef<Path>>(
    path: P,
    h: usize,
    w: usize,
    c: usize,
    data: &[f64],
) -> Result<()> {
    if data.len() != h * w * c {
        return Err(Error::BadDataLength {
            height: h,
            width: w,
            channels: c,
            got: data.len(),
        });
    }
    let header = SidecarHeader {
        magic: SIDECAR_MAGIC.into(),
        h,
        w,
        c,
        dtype: "f64".into(),
    };
    write_container(path.as_ref(), &serde_json::to_vec(&header)?, data)
}

pub fn save_sidecar<P: AsRef<Path>>(path: P, img: &ImageTensor) -> Result<()> {
    save_sidecar_raw(path, img.height(), img.width(), img.channels(), img.data())
}

pub fn load_sidecar<P: AsRef<Path>>(path: P) -> Result<(SidecarHeader, Vec<f64>)> {
    let (header_bytes, payload) = read_container(path.as_ref())?;
    let header: SidecarHeader = serde_json::from_slice(&header_bytes)?;
    if header.magic != SIDECAR_MAGIC {
        return Err(Error::BadCheckpoint(format!(
            "unexpected magic {:?}",
            header.magic
        )));
    }
    if header.dtype != "f64" || payload.len() != header.h * header.w * header.c {
        return Err(Error::BadCheckpoint("sidecar shape mismatch".into()));
    }
    Ok((header, payload))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::ToyDenoiser;

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("spr.ckpt");
        let denoiser = ToyDenoiser::new_seeded(4, 8, 7);
        let weights = denoiser.to_flat();
        let header = CheckpointHeader {
            magic: CHECKPOINT_MAGIC.into(),
            stage: "spr".into(),
            seed: 7,
            schedule: NoiseSchedule::default_toy(),
            shapes: vec![("denoiser".into(), vec![weights.len()])],
            param_count: weights.len(),
        };
        save_checkpoint(&path, &header, &weights).unwrap();
        let (h2, w2) = load_checkpoint(&path).unwrap();
        assert_eq!(h2, header);
        assert_eq!(w2, weights);
    }

    #[test]
    fn missing_checkpoint_names_path() {
        let err = load_checkpoint("/tmp/definitely-not-here.ckpt").unwrap_err();
        match err {
            Error::MissingCheckpoint(p) => {
                assert!(p.to_string_lossy().contains("definitely-not-here"))
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn truncated_checkpoint_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        std::fs::write(&path, [1, 2, 3]).unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(Error::BadCheckpoint(_))
        ));
    }

    #[test]
    fn sidecar_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.bin");
        let img = ImageTensor::from_fn(3, 4, 2, |y, x, c| (y * 8 + x * 2 + c) as f64 * 0.5)
            .unwrap();
        save_sidecar(&path, &img).unwrap();
        let (h, data) = load_sidecar(&path).unwrap();
        assert_eq!((h.h, h.w, h.c), (3, 4, 2));
        assert_eq!(h.dtype, "f64");
        assert_eq!(data, img.data());
    }
}
