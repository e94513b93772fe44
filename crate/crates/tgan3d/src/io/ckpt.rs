//! CKPT checkpoint files: named f32 tensors with a trailing CRC32.

use std::fs;
use std::path::Path;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::tgan::ModelParams;

const MAGIC: &[u8; 4] = b"CKPT";
const VERSION: u32 = 1;

/// CRC32 (IEEE, reflected) over a byte stream.
pub fn crc32(bytes: &[u8]) -> u32 {
    let mut table = [0u32; 256];
    for (i, e) in table.iter_mut().enumerate() {
        let mut c = i as u32;
        for _ in 0..8 {
            c = if c & 1 != 0 { 0xEDB8_8320 ^ (c >> 1) } else { c >> 1 };
        }
        *e = c;
    }
    let mut crc = 0xFFFF_FFFFu32;
    for &b in bytes {
        crc = table[((crc ^ b as u32) & 0xFF) as usize] ^ (crc >> 8);
    }
    crc ^ 0xFFFF_FFFF
}

pub fn encode_ckpt(params: &ModelParams) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, t) in params.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let crc = crc32(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

pub fn write_ckpt(path: &Path, params: &ModelParams) -> Result<()> {
    fs::write(path, encode_ckpt(params))?;
    Ok(())
}

pub fn decode_ckpt(bytes: &[u8], path: &Path) -> Result<ModelParams> {
    if bytes.len() < 16 {
        return Err(Error::format(path, "truncated file"));
    }
    if &bytes[0..4] != MAGIC {
        return Err(Error::format(path, "bad magic"));
    }
    let body = &bytes[..bytes.len() - 4];
    let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
    let actual = crc32(body);
    if stored != actual {
        return Err(Error::format(
            path,
            format!("crc mismatch: stored {stored:#010x}, computed {actual:#010x}"),
        ));
    }
    let mut pos = 4usize;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
        if *pos + n > body.len() {
            return Err(Error::format(path, "truncated entry"));
        }
        let s = &body[*pos..*pos + n];
        *pos += n;
        Ok(s)
    };
    let read_u32 = |pos: &mut usize| -> Result<u32> {
        Ok(u32::from_le_bytes(take(pos, 4)?.try_into().unwrap()))
    };
    let version = read_u32(&mut pos)?;
    if version != VERSION {
        return Err(Error::format(path, format!("unsupported version {version}")));
    }
    let count = read_u32(&mut pos)? as usize;
    let mut params = ModelParams::new();
    for _ in 0..count {
        let name_len = read_u32(&mut pos)? as usize;
        let name = std::str::from_utf8(take(&mut pos, name_len)?)
            .map_err(|_| Error::format(path, "entry name is not UTF-8"))?
            .to_string();
        let rank = read_u32(&mut pos)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u32(&mut pos)? as usize);
        }
        let n: usize = shape.iter().product();
        let raw = take(&mut pos, n * 4)?;
        let data: Vec<f64> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        let t = Tensor::from_vec(&shape, data)?;
        params
            .insert(&name, t)
            .map_err(|_| Error::format(path, format!("duplicate entry {name}")))?;
    }
    if pos != body.len() {
        return Err(Error::format(path, "trailing bytes after entries"));
    }
    Ok(params)
}

pub fn read_ckpt(path: &Path) -> Result<ModelParams> {
    let bytes = fs::read(path)
        .map_err(|e| Error::format(path, format!("cannot read: {e}")))?;
    decode_ckpt(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prng::Prng;

    #[test]
    fn crc32_known_vectors() {
        // standard check value for "123456789"
        assert_eq!(crc32(b"123456789"), 0xCBF4_3926);
        assert_eq!(crc32(b""), 0);
    }

    fn sample_params() -> ModelParams {
        let mut prng = Prng::new(3);
        let mut p = ModelParams::new();
        p.insert("a.w", Tensor::randn(&mut prng, &[2, 3])).unwrap();
        p.insert("a.b", Tensor::randn(&mut prng, &[3])).unwrap();
        p.insert("z.conv.w", Tensor::randn(&mut prng, &[2, 1, 2, 2, 2])).unwrap();
        p
    }

    #[test]
    fn round_trip_bitwise() {
        let p = sample_params();
        let bytes = encode_ckpt(&p);
        let back = decode_ckpt(&bytes, Path::new("mem")).unwrap();
        assert_eq!(back.len(), 3);
        // f64 -> f32 quantization happens once; re-encoding is stable
        assert_eq!(encode_ckpt(&back), bytes);
        for (name, t) in p.iter() {
            let b = back.get(name).unwrap();
            assert_eq!(b.shape(), t.shape());
            for (x, y) in t.data().iter().zip(b.data()) {
                assert_eq!(*x as f32, *y as f32);
            }
        }
    }

    #[test]
    fn corruption_rejected() {
        let bytes = encode_ckpt(&sample_params());
        let mut flipped = bytes.clone();
        flipped[20] ^= 0x40;
        let err = decode_ckpt(&flipped, Path::new("c.ckpt")).unwrap_err();
        assert!(err.to_string().contains("crc"));
        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        assert!(decode_ckpt(&bad_magic, Path::new("c.ckpt")).is_err());
        assert!(decode_ckpt(&bytes[..bytes.len() - 9], Path::new("c.ckpt")).is_err());
        assert!(decode_ckpt(&bytes[..8], Path::new("c.ckpt")).is_err());
    }
}
