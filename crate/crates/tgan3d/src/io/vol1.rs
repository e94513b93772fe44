//! VOL1 volume files: a 4-byte magic, little-endian header and a raw
//! payload, W fastest, then H, then D.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::volume::Volume;

const MAGIC: &[u8; 4] = b"VOL1";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Vol1Dtype {
    /// f32 intensities.
    F32,
    /// u8 binary mask, values restricted to {0, 1}.
    MaskU8,
}

impl Vol1Dtype {
    fn code(self) -> u32 {
        match self {
            Vol1Dtype::F32 => 0,
            Vol1Dtype::MaskU8 => 1,
        }
    }

    fn from_code(code: u32, path: &Path) -> Result<Self> {
        match code {
            0 => Ok(Vol1Dtype::F32),
            1 => Ok(Vol1Dtype::MaskU8),
            other => Err(Error::format(path, format!("unknown dtype code {other}"))),
        }
    }

    fn elem_size(self) -> usize {
        match self {
            Vol1Dtype::F32 => 4,
            Vol1Dtype::MaskU8 => 1,
        }
    }
}

pub fn encode_vol1(volume: &Volume, dtype: Vol1Dtype) -> Result<Vec<u8>> {
    if dtype == Vol1Dtype::MaskU8 && !volume.is_binary(1e-6) {
        return Err(Error::invalid("mask dtype requires {0, 1} voxels"));
    }
    let mut out = Vec::with_capacity(36 + volume.num_voxels() * dtype.elem_size());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&dtype.code().to_le_bytes());
    for d in [volume.width, volume.height, volume.depth] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out.extend_from_slice(&1u32.to_le_bytes()); // channels
    for v in volume.voxel_size_mm {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    // volume data is already z-major with x fastest
    match dtype {
        Vol1Dtype::F32 => {
            for &v in &volume.data {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        Vol1Dtype::MaskU8 => {
            for &v in &volume.data {
                out.push((v > 0.5) as u8);
            }
        }
    }
    Ok(out)
}

pub fn write_vol1(path: &Path, volume: &Volume, dtype: Vol1Dtype) -> Result<()> {
    fs::write(path, encode_vol1(volume, dtype)?)?;
    Ok(())
}

pub fn decode_vol1(bytes: &[u8], path: &Path) -> Result<(Volume, Vol1Dtype)> {
    let need = |n: usize| -> Result<()> {
        if bytes.len() < n {
            Err(Error::format(path, "truncated file"))
        } else {
            Ok(())
        }
    };
    need(36)?;
    if &bytes[0..4] != MAGIC {
        return Err(Error::format(path, "bad magic"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let f32_at = |o: usize| f32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let version = u32_at(4);
    if version != VERSION {
        return Err(Error::format(path, format!("unsupported version {version}")));
    }
    let dtype = Vol1Dtype::from_code(u32_at(8), path)?;
    let (w, h, d) = (u32_at(12) as usize, u32_at(16) as usize, u32_at(20) as usize);
    let channels = u32_at(24) as usize;
    if channels != 1 {
        return Err(Error::format(path, format!("unsupported channel count {channels}")));
    }
    let voxel = [f32_at(28) as f64, f32_at(32) as f64];
    need(40)?;
    let voxel = [voxel[0], voxel[1], f32_at(36) as f64];
    let n = w * h * d;
    let expected = 40 + n * dtype.elem_size();
    if bytes.len() < expected {
        return Err(Error::format(path, "truncated payload"));
    }
    if bytes.len() > expected {
        return Err(Error::format(path, "trailing bytes after payload"));
    }
    let payload = &bytes[40..];
    let data: Vec<f64> = match dtype {
        Vol1Dtype::F32 => payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
        Vol1Dtype::MaskU8 => {
            if let Some(&bad) = payload.iter().find(|&&b| b > 1) {
                return Err(Error::format(path, format!("mask voxel value {bad} not in {{0, 1}}")));
            }
            payload.iter().map(|&b| b as f64).collect()
        }
    };
    Ok((Volume::from_data(d, h, w, voxel, data)?, dtype))
}

pub fn read_vol1(path: &Path) -> Result<(Volume, Vol1Dtype)> {
    let bytes = fs::read(path)
        .map_err(|e| Error::format(path, format!("cannot read: {e}")))?;
    decode_vol1(&bytes, path)
}
