//! Minimal NIfTI-1 reader (uncompressed, 3-D, dtypes u8/i16/f32) and a
//! matching writer used to produce golden files.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::volume::Volume;

const HDR_SIZE: usize = 348;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NiftiDtype {
    U8 = 2,
    I16 = 4,
    F32 = 16,
}

impl NiftiDtype {
    fn from_code(code: i16, path: &Path) -> Result<Self> {
        match code {
            2 => Ok(NiftiDtype::U8),
            4 => Ok(NiftiDtype::I16),
            16 => Ok(NiftiDtype::F32),
            other => Err(Error::format(
                path,
                format!("unsupported nifti datatype code {other}"),
            )),
        }
    }

    fn bitpix(self) -> i16 {
        match self {
            NiftiDtype::U8 => 8,
            NiftiDtype::I16 => 16,
            NiftiDtype::F32 => 32,
        }
    }

    fn elem_size(self) -> usize {
        (self.bitpix() / 8) as usize
    }
}

struct Header {
    w: usize,
    h: usize,
    d: usize,
    dtype: NiftiDtype,
    voxel: [f64; 3],
    vox_offset: usize,
    slope: f64,
    inter: f64,
    swap: bool,
    two_file: bool,
}

fn parse_header(bytes: &[u8], path: &Path) -> Result<Header> {
    if bytes.len() < HDR_SIZE {
        return Err(Error::format(path, "truncated header"));
    }
    let swap = match i32::from_le_bytes(bytes[0..4].try_into().unwrap()) {
        348 => false,
        _ if i32::from_be_bytes(bytes[0..4].try_into().unwrap()) == 348 => true,
        other => {
            return Err(Error::format(
                path,
                format!("sizeof_hdr is {other}, expected 348 in either endianness"),
            ))
        }
    };
    let i16_at = |o: usize| -> i16 {
        let raw: [u8; 2] = bytes[o..o + 2].try_into().unwrap();
        if swap { i16::from_be_bytes(raw) } else { i16::from_le_bytes(raw) }
    };
    let f32_at = |o: usize| -> f32 {
        let raw: [u8; 4] = bytes[o..o + 4].try_into().unwrap();
        if swap { f32::from_be_bytes(raw) } else { f32::from_le_bytes(raw) }
    };
    let magic = &bytes[344..348];
    let two_file = match magic {
        b"n+1\0" => false,
        b"ni1\0" => true,
        _ => return Err(Error::format(path, "bad magic (expected n+1 or ni1)")),
    };
    let ndim = i16_at(40);
    if !(1..=7).contains(&ndim) {
        return Err(Error::format(path, format!("dim[0] = {ndim} out of range")));
    }
    let mut dims = [1usize; 7];
    for (i, d) in dims.iter_mut().enumerate().take(ndim as usize) {
        let v = i16_at(40 + 2 * (i + 1));
        if v < 1 {
            return Err(Error::format(path, format!("dim[{}] = {v} invalid", i + 1)));
        }
        *d = v as usize;
    }
    if dims[3..].iter().any(|&d| d != 1) {
        return Err(Error::format(path, "only 3-D volumes are supported"));
    }
    let dtype = NiftiDtype::from_code(i16_at(70), path)?;
    let slope = {
        let s = f32_at(112) as f64;
        if s == 0.0 { 1.0 } else { s }
    };
    Ok(Header {
        w: dims[0],
        h: dims[1],
        d: dims[2],
        dtype,
        voxel: [f32_at(80) as f64, f32_at(84) as f64, f32_at(88) as f64],
        vox_offset: f32_at(108) as usize,
        slope,
        inter: f32_at(116) as f64,
        swap,
        two_file,
    })
}

fn decode_payload(hdr: &Header, data_bytes: &[u8], path: &Path) -> Result<Volume> {
    let n = hdr.w * hdr.h * hdr.d;
    if data_bytes.len() < n * hdr.dtype.elem_size() {
        return Err(Error::format(path, "truncated voxel data"));
    }
    let mut data = Vec::with_capacity(n);
    for i in 0..n {
        let o = i * hdr.dtype.elem_size();
        let raw = match hdr.dtype {
            NiftiDtype::U8 => data_bytes[o] as f64,
            NiftiDtype::I16 => {
                let b: [u8; 2] = data_bytes[o..o + 2].try_into().unwrap();
                (if hdr.swap { i16::from_be_bytes(b) } else { i16::from_le_bytes(b) }) as f64
            }
            NiftiDtype::F32 => {
                let b: [u8; 4] = data_bytes[o..o + 4].try_into().unwrap();
                (if hdr.swap { f32::from_be_bytes(b) } else { f32::from_le_bytes(b) }) as f64
            }
        };
        data.push(raw * hdr.slope + hdr.inter);
    }
    // nifti stores x fastest, then y, then z, matching the volume layout
    Volume::from_data(hdr.d, hdr.h, hdr.w, hdr.voxel, data)
}

/// Decode a single-file (.nii) image held in memory.
pub fn decode_nifti(bytes: &[u8], path: &Path) -> Result<Volume> {
    let hdr = parse_header(bytes, path)?;
    if hdr.two_file {
        return Err(Error::format(
            path,
            "ni1 two-file layout requires read_nifti with the header path",
        ));
    }
    if hdr.vox_offset < HDR_SIZE || hdr.vox_offset > bytes.len() {
        return Err(Error::format(
            path,
            format!("vox_offset {} out of range", hdr.vox_offset),
        ));
    }
    decode_payload(&hdr, &bytes[hdr.vox_offset..], path)
}

pub fn read_nifti(path: &Path) -> Result<Volume> {
    let bytes = fs::read(path)
        .map_err(|e| Error::format(path, format!("cannot read: {e}")))?;
    let hdr = parse_header(&bytes, path)?;
    if hdr.two_file {
        let img_path = path.with_extension("img");
        let img = fs::read(&img_path)
            .map_err(|e| Error::format(&img_path, format!("cannot read: {e}")))?;
        return decode_payload(&hdr, &img, path);
    }
    decode_nifti(&bytes, path)
}

/// Write a single-file (.nii) NIfTI-1 volume; raw values are cast to the
/// dtype and readers will apply `slope`/`inter`.
pub fn write_nifti(
    path: &Path,
    volume: &Volume,
    dtype: NiftiDtype,
    slope: f64,
    inter: f64,
    big_endian: bool,
) -> Result<()> {
    fs::write(path, encode_nifti(volume, dtype, slope, inter, big_endian))?;
    Ok(())
}

pub fn encode_nifti(
    volume: &Volume,
    dtype: NiftiDtype,
    slope: f64,
    inter: f64,
    big_endian: bool,
) -> Vec<u8> {
    let vox_offset = 352usize;
    let mut hdr = vec![0u8; vox_offset];
    let put_i32 = |h: &mut [u8], o: usize, v: i32| {
        h[o..o + 4].copy_from_slice(&if big_endian { v.to_be_bytes() } else { v.to_le_bytes() });
    };
    let put_i16 = |h: &mut [u8], o: usize, v: i16| {
        h[o..o + 2].copy_from_slice(&if big_endian { v.to_be_bytes() } else { v.to_le_bytes() });
    };
    let put_f32 = |h: &mut [u8], o: usize, v: f32| {
        h[o..o + 4].copy_from_slice(&if big_endian { v.to_be_bytes() } else { v.to_le_bytes() });
    };
    put_i32(&mut hdr, 0, 348);
    put_i16(&mut hdr, 40, 3);
    put_i16(&mut hdr, 42, volume.width as i16);
    put_i16(&mut hdr, 44, volume.height as i16);
    put_i16(&mut hdr, 46, volume.depth as i16);
    for i in 4..8 {
        put_i16(&mut hdr, 40 + 2 * i, 1);
    }
    put_i16(&mut hdr, 70, dtype as i16);
    put_i16(&mut hdr, 72, dtype.bitpix());
    put_f32(&mut hdr, 76, 1.0);
    put_f32(&mut hdr, 80, volume.voxel_size_mm[0] as f32);
    put_f32(&mut hdr, 84, volume.voxel_size_mm[1] as f32);
    put_f32(&mut hdr, 88, volume.voxel_size_mm[2] as f32);
    put_f32(&mut hdr, 108, vox_offset as f32);
    put_f32(&mut hdr, 112, slope as f32);
    put_f32(&mut hdr, 116, inter as f32);
    hdr[344..348].copy_from_slice(b"n+1\0");
    for &v in &volume.data {
        match dtype {
            NiftiDtype::U8 => hdr.push(v as u8),
            NiftiDtype::I16 => {
                let x = v as i16;
                hdr.extend_from_slice(&if big_endian { x.to_be_bytes() } else { x.to_le_bytes() });
            }
            NiftiDtype::F32 => {
                let x = v as f32;
                hdr.extend_from_slice(&if big_endian { x.to_be_bytes() } else { x.to_le_bytes() });
            }
        }
    }
    hdr
}
