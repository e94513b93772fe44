//! Dense 3-D scalar grid with voxel spacing.

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Volume data is stored z-major: index (z, y, x) with x fastest, matching
/// both the tensor layout [.., D, H, W] and the VOL1 payload order.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    pub depth: usize,
    pub height: usize,
    pub width: usize,
    /// (x, y, z) spacing in millimetres.
    pub voxel_size_mm: [f64; 3],
    pub data: Vec<f64>,
}

impl Volume {
    pub fn zeros(depth: usize, height: usize, width: usize, voxel_size_mm: [f64; 3]) -> Self {
        Volume {
            depth,
            height,
            width,
            voxel_size_mm,
            data: vec![0.0; depth * height * width],
        }
    }

    pub fn from_data(
        depth: usize,
        height: usize,
        width: usize,
        voxel_size_mm: [f64; 3],
        data: Vec<f64>,
    ) -> Result<Self> {
        if data.len() != depth * height * width {
            return Err(Error::invalid(format!(
                "volume {depth}x{height}x{width} needs {} voxels, got {}",
                depth * height * width,
                data.len()
            )));
        }
        Ok(Volume {
            depth,
            height,
            width,
            voxel_size_mm,
            data,
        })
    }

    #[inline]
    pub fn idx(&self, z: usize, y: usize, x: usize) -> usize {
        (z * self.height + y) * self.width + x
    }

    #[inline]
    pub fn get(&self, z: usize, y: usize, x: usize) -> f64 {
        self.data[self.idx(z, y, x)]
    }

    #[inline]
    pub fn set(&mut self, z: usize, y: usize, x: usize, v: f64) {
        let i = self.idx(z, y, x);
        self.data[i] = v;
    }

    pub fn num_voxels(&self) -> usize {
        self.data.len()
    }

    pub fn voxel_volume_mm3(&self) -> f64 {
        self.voxel_size_mm[0] * self.voxel_size_mm[1] * self.voxel_size_mm[2]
    }

    pub fn max_value(&self) -> f64 {
        self.data.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v))
    }

    pub fn same_shape(&self, other: &Volume) -> bool {
        self.depth == other.depth && self.height == other.height && self.width == other.width
    }

    /// True when every voxel is within `tol` of 0 or 1.
    pub fn is_binary(&self, tol: f64) -> bool {
        self.data
            .iter()
            .all(|&v| v.abs() <= tol || (v - 1.0).abs() <= tol)
    }

    pub fn count_nonzero(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0.0).count()
    }

    /// View as a [1, 1, D, H, W] tensor.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_vec(
            &[1, 1, self.depth, self.height, self.width],
            self.data.clone(),
        )
        .expect("volume layout")
    }

    /// Build from a tensor whose trailing three axes are D, H, W.
    pub fn from_tensor(t: &Tensor, voxel_size_mm: [f64; 3]) -> Result<Volume> {
        let r = t.rank();
        if r < 3 {
            return Err(Error::invalid("volume tensor needs rank >= 3"));
        }
        let lead: usize = t.shape()[..r - 3].iter().product();
        if lead != 1 {
            return Err(Error::invalid("volume tensor leading axes must be 1"));
        }
        Volume::from_data(
            t.shape()[r - 3],
            t.shape()[r - 2],
            t.shape()[r - 1],
            voxel_size_mm,
            t.data().to_vec(),
        )
    }

    /// Linear map of [0, max] onto [-1, 1]. Returns the scale used, so the
    /// mapping can be inverted on export. All-zero volumes use scale 1.
    pub fn normalize_to_unit(&self) -> (Volume, f64) {
        let max = self.max_value().max(0.0);
        let scale = if max > 0.0 { max } else { 1.0 };
        let mut out = self.clone();
        for v in &mut out.data {
            *v = 2.0 * (*v / scale) - 1.0;
        }
        (out, scale)
    }

    /// Inverse of `normalize_to_unit`.
    pub fn denormalize_from_unit(&self, scale: f64) -> Volume {
        let mut out = self.clone();
        for v in &mut out.data {
            *v = (*v + 1.0) / 2.0 * scale;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_round_trip() {
        let v = Volume::from_data(1, 1, 4, [1.0; 3], vec![0.0, 1.0, 2.0, 4.0]).unwrap();
        let (n, scale) = v.normalize_to_unit();
        assert_eq!(scale, 4.0);
        assert_eq!(n.data, vec![-1.0, -0.5, 0.0, 1.0]);
        let back = n.denormalize_from_unit(scale);
        assert_eq!(back.data, v.data);
    }

    #[test]
    fn binary_detection() {
        let m = Volume::from_data(1, 1, 3, [1.0; 3], vec![0.0, 1.0, 1.0]).unwrap();
        assert!(m.is_binary(1e-6));
        let m2 = Volume::from_data(1, 1, 3, [1.0; 3], vec![0.0, 0.5, 1.0]).unwrap();
        assert!(!m2.is_binary(1e-6));
    }

    #[test]
    fn tensor_round_trip() {
        let v = Volume::from_data(2, 2, 2, [1.0; 3], (0..8).map(|x| x as f64).collect()).unwrap();
        let t = v.to_tensor();
        assert_eq!(t.shape(), &[1, 1, 2, 2, 2]);
        let back = Volume::from_tensor(&t, [1.0; 3]).unwrap();
        assert_eq!(back.data, v.data);
    }
}
