//! 8-bit PGM (P5) mosaics of volume slices with shared window/level so
//! different volumes render with the same intensity mapping.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::volume::Volume;

/// Mosaic layout: rows = floor(sqrt(T)), cols = ceil(T / rows).
pub fn mosaic_dims(slices: usize) -> (usize, usize) {
    let rows = ((slices as f64).sqrt().floor() as usize).max(1);
    let cols = slices.div_ceil(rows);
    (rows, cols)
}

/// Map an intensity window [lo, hi] to [0, 255]; a degenerate window renders
/// mid-gray.
fn gray_of(v: f64, lo: f64, hi: f64) -> u8 {
    if hi <= lo {
        return 128;
    }
    (((v - lo) / (hi - lo) * 255.0).clamp(0.0, 255.0)) as u8
}

/// Render the slice mosaic. `window` is (lo, hi); None spans the volume's
/// own range. The optional mask burns its in-plane contour in at max gray.
pub fn render_mosaic(
    volume: &Volume,
    mask: Option<&Volume>,
    window: Option<(f64, f64)>,
) -> Result<(Vec<u8>, usize, usize)> {
    if let Some(m) = mask {
        if !m.same_shape(volume) {
            return Err(Error::shape(
                &[volume.depth, volume.height, volume.width],
                &[m.depth, m.height, m.width],
                "mosaic mask",
            ));
        }
        if !m.is_binary(1e-6) {
            return Err(Error::invalid("mosaic mask must be binary"));
        }
    }
    let (lo, hi) = window.unwrap_or_else(|| {
        let lo = volume.data.iter().cloned().fold(f64::INFINITY, f64::min);
        (lo, volume.max_value())
    });
    let (rows, cols) = mosaic_dims(volume.depth);
    let (w, h) = (cols * volume.width, rows * volume.height);
    let mut pixels = vec![0u8; w * h];
    for z in 0..volume.depth {
        let (tile_r, tile_c) = (z / cols, z % cols);
        for y in 0..volume.height {
            for x in 0..volume.width {
                let mut g = gray_of(volume.get(z, y, x), lo, hi);
                if let Some(m) = mask {
                    if m.get(z, y, x) > 0.5 && on_contour(m, z, y, x) {
                        g = 255;
                    }
                }
                let py = tile_r * volume.height + y;
                let px = tile_c * volume.width + x;
                pixels[py * w + px] = g;
            }
        }
    }
    Ok((pixels, w, h))
}

/// In-plane 4-neighborhood boundary test; volume borders count as outside.
fn on_contour(mask: &Volume, z: usize, y: usize, x: usize) -> bool {
    let neighbors = [
        (y.wrapping_sub(1), x),
        (y + 1, x),
        (y, x.wrapping_sub(1)),
        (y, x + 1),
    ];
    neighbors.iter().any(|&(ny, nx)| {
        ny >= mask.height || nx >= mask.width || mask.get(z, ny, nx) <= 0.5
    })
}

pub fn encode_pgm(pixels: &[u8], width: usize, height: usize) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

pub fn write_mosaic_pgm(
    path: &Path,
    volume: &Volume,
    mask: Option<&Volume>,
    window: Option<(f64, f64)>,
) -> Result<()> {
    let (pixels, w, h) = render_mosaic(volume, mask, window)?;
    fs::write(path, encode_pgm(&pixels, w, h))?;
    Ok(())
}
