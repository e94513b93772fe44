//! Radiomic features of a segmented lesion: first-order SUV statistics and
//! grey level co-occurrence texture.
//!
//! Intensities are treated directly as SUV; no calibration is applied. The
//! GLCM uses equal-width bins over the ROI intensity range, the 13 unique
//! distance-1 3-D offsets, and is symmetrized (each pair counted in both
//! orders) then normalized.

use crate::error::{Error, Result};
use crate::stats::StatsConfig;
use crate::volume::Volume;

pub const FEATURE_NAMES: [&str; 8] = [
    "mtv_ml",
    "suv_mean",
    "suv_max",
    "suv_peak",
    "tlg",
    "glcm_entropy",
    "glcm_energy",
    "glcm_homogeneity",
];

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    /// Metabolic tumour volume in mL.
    pub mtv_ml: f64,
    pub suv_mean: f64,
    pub suv_max: f64,
    /// Mean over the border-clipped 3x3x3 cube, maximized over mask voxels.
    pub suv_peak: f64,
    /// Total lesion glycolysis, exactly mtv * suv_mean.
    pub tlg: f64,
    pub glcm_entropy: f64,
    pub glcm_energy: f64,
    pub glcm_homogeneity: f64,
}

impl FeatureVector {
    pub fn as_array(&self) -> [f64; 8] {
        [
            self.mtv_ml,
            self.suv_mean,
            self.suv_max,
            self.suv_peak,
            self.tlg,
            self.glcm_entropy,
            self.glcm_energy,
            self.glcm_homogeneity,
        ]
    }
}

fn check_pair(volume: &Volume, mask: &Volume) -> Result<()> {
    if !volume.same_shape(mask) {
        return Err(Error::shape(
            &[volume.depth, volume.height, volume.width],
            &[mask.depth, mask.height, mask.width],
            "feature mask",
        ));
    }
    if !mask.is_binary(1e-6) {
        return Err(Error::invalid("feature mask must be binary"));
    }
    if mask.count_nonzero() == 0 {
        return Err(Error::invalid("feature mask is empty"));
    }
    Ok(())
}

/// Mean intensity of the 3x3x3 cube around (z, y, x), clipped at borders.
fn cube_mean(volume: &Volume, z: usize, y: usize, x: usize) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for dz in -1i64..=1 {
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                let (zz, yy, xx) = (z as i64 + dz, y as i64 + dy, x as i64 + dx);
                if zz < 0
                    || yy < 0
                    || xx < 0
                    || zz >= volume.depth as i64
                    || yy >= volume.height as i64
                    || xx >= volume.width as i64
                {
                    continue;
                }
                sum += volume.get(zz as usize, yy as usize, xx as usize);
                n += 1;
            }
        }
    }
    sum / n as f64
}

/// (mtv mL, suv_mean, suv_max, suv_peak, tlg) over the masked lesion.
pub fn first_order_features(volume: &Volume, mask: &Volume) -> Result<(f64, f64, f64, f64, f64)> {
    check_pair(volume, mask)?;
    let mut count = 0usize;
    let mut sum = 0.0;
    let mut max = f64::NEG_INFINITY;
    let mut peak = f64::NEG_INFINITY;
    for z in 0..volume.depth {
        for y in 0..volume.height {
            for x in 0..volume.width {
                if mask.get(z, y, x) > 0.5 {
                    let v = volume.get(z, y, x);
                    count += 1;
                    sum += v;
                    max = max.max(v);
                    peak = peak.max(cube_mean(volume, z, y, x));
                }
            }
        }
    }
    let mtv = count as f64 * volume.voxel_volume_mm3() / 1000.0;
    let mean = sum / count as f64;
    Ok((mtv, mean, max, peak, mtv * mean))
}

/// Symmetric, normalized co-occurrence matrix.
#[derive(Debug, Clone)]
pub struct GlcmMatrix {
    pub levels: usize,
    /// Row-major levels x levels probabilities.
    pub p: Vec<f64>,
    /// ROI intensity range the bins span.
    pub intensity_range: (f64, f64),
}

impl GlcmMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.p[i * self.levels + j]
    }
}

/// The 13 unique distance-1 3-D offsets (half of the 26-neighborhood).
pub const GLCM_OFFSETS: [(i64, i64, i64); 13] = [
    (0, 0, 1),
    (0, 1, -1),
    (0, 1, 0),
    (0, 1, 1),
    (1, -1, -1),
    (1, -1, 0),
    (1, -1, 1),
    (1, 0, -1),
    (1, 0, 0),
    (1, 0, 1),
    (1, 1, -1),
    (1, 1, 0),
    (1, 1, 1),
];

/// Quantize a ROI intensity to its bin. The ROI maximum maps to the top bin.
fn bin_of(v: f64, min: f64, max: f64, levels: usize) -> usize {
    if max <= min {
        return 0;
    }
    let b = ((v - min) / (max - min) * levels as f64) as usize;
    b.min(levels - 1)
}

/// Co-occurrence matrix over the default 13-offset neighborhood.
pub fn glcm(volume: &Volume, mask: &Volume, cfg: &StatsConfig) -> Result<GlcmMatrix> {
    cfg.validate()?;
    glcm_with_offsets(volume, mask, cfg.glcm_bins, &GLCM_OFFSETS)
}

/// Co-occurrence matrix over an explicit offset set (each offset is also
/// applied in reverse by symmetrization).
pub fn glcm_with_offsets(
    volume: &Volume,
    mask: &Volume,
    levels: usize,
    offsets: &[(i64, i64, i64)],
) -> Result<GlcmMatrix> {
    if levels < 2 {
        return Err(Error::invalid("glcm bins must be >= 2"));
    }
    if offsets.is_empty() {
        return Err(Error::invalid("glcm needs at least one offset"));
    }
    check_pair(volume, mask)?;
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for (v, m) in volume.data.iter().zip(&mask.data) {
        if *m > 0.5 {
            min = min.min(*v);
            max = max.max(*v);
        }
    }
    let mut counts = vec![0.0f64; levels * levels];
    let mut total = 0.0f64;
    for z in 0..volume.depth {
        for y in 0..volume.height {
            for x in 0..volume.width {
                if mask.get(z, y, x) <= 0.5 {
                    continue;
                }
                let bi = bin_of(volume.get(z, y, x), min, max, levels);
                for &(dz, dy, dx) in offsets {
                    let (zz, yy, xx) = (z as i64 + dz, y as i64 + dy, x as i64 + dx);
                    if zz < 0
                        || yy < 0
                        || xx < 0
                        || zz >= volume.depth as i64
                        || yy >= volume.height as i64
                        || xx >= volume.width as i64
                    {
                        continue;
                    }
                    let (zz, yy, xx) = (zz as usize, yy as usize, xx as usize);
                    if mask.get(zz, yy, xx) <= 0.5 {
                        continue;
                    }
                    let bj = bin_of(volume.get(zz, yy, xx), min, max, levels);
                    counts[bi * levels + bj] += 1.0;
                    counts[bj * levels + bi] += 1.0;
                    total += 2.0;
                }
            }
        }
    }
    if total == 0.0 {
        // no in-mask pairs (isolated voxels): degenerate single-cell matrix
        counts[0] = 1.0;
        total = 1.0;
    }
    for c in &mut counts {
        *c /= total;
    }
    Ok(GlcmMatrix {
        levels,
        p: counts,
        intensity_range: (min, max),
    })
}

/// (entropy bits, energy, homogeneity) of a co-occurrence matrix.
pub fn glcm_features(m: &GlcmMatrix) -> (f64, f64, f64) {
    let mut entropy = 0.0;
    let mut energy = 0.0;
    let mut homogeneity = 0.0;
    for i in 0..m.levels {
        for j in 0..m.levels {
            let p = m.get(i, j);
            if p > 0.0 {
                entropy -= p * p.log2();
            }
            energy += p * p;
            homogeneity += p / (1.0 + (i as f64 - j as f64).abs());
        }
    }
    (entropy, energy, homogeneity)
}

/// All eight features of one lesion.
pub fn extract_features(volume: &Volume, mask: &Volume, cfg: &StatsConfig) -> Result<FeatureVector> {
    let (mtv_ml, suv_mean, suv_max, suv_peak, tlg) = first_order_features(volume, mask)?;
    let m = glcm(volume, mask, cfg)?;
    let (glcm_entropy, glcm_energy, glcm_homogeneity) = glcm_features(&m);
    Ok(FeatureVector {
        mtv_ml,
        suv_mean,
        suv_max,
        suv_peak,
        tlg,
        glcm_entropy,
        glcm_energy,
        glcm_homogeneity,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prng::Prng;

    fn vol(d: usize, h: usize, w: usize, vox: f64, data: Vec<f64>) -> Volume {
        Volume::from_data(d, h, w, [vox; 3], data).unwrap()
    }

    #[test]
    fn constant_lesion_arithmetic() {
        // 10 voxels at 4x4x4 mm, all intensity 5
        let mut data = vec![0.0; 4 * 4 * 4];
        let mut m = vec![0.0; 4 * 4 * 4];
        for i in 0..10 {
            data[i] = 5.0;
            m[i] = 1.0;
        }
        let v = vol(4, 4, 4, 4.0, data);
        let mask = vol(4, 4, 4, 4.0, m);
        let (mtv, mean, max, peak, tlg) = first_order_features(&v, &mask).unwrap();
        assert!((mtv - 0.64).abs() < 1e-12);
        assert_eq!(mean, 5.0);
        assert_eq!(max, 5.0);
        // cube around a lesion voxel mixes in background zeros
        assert!(peak <= 5.0);
        assert!((tlg - mtv * mean).abs() == 0.0);
        assert!((tlg - 0.64 * 5.0).abs() < 1e-12);
    }

    #[test]
    fn hot_voxel_peak_matches_brute_force() {
        // single hot voxel at a corner: cube clips to 8 voxels
        let mut data = vec![0.0; 3 * 3 * 3];
        data[0] = 10.0;
        let mut m = vec![0.0; 3 * 3 * 3];
        m[0] = 1.0;
        let v = vol(3, 3, 3, 1.0, data);
        let mask = vol(3, 3, 3, 1.0, m);
        let (_, _, max, peak, _) = first_order_features(&v, &mask).unwrap();
        assert_eq!(max, 10.0);
        assert!((peak - 10.0 / 8.0).abs() < 1e-12);
    }

    #[test]
    fn peak_never_exceeds_max() {
        let mut prng = Prng::new(1);
        for _ in 0..20 {
            let n = 4 * 5 * 5;
            let data: Vec<f64> = (0..n).map(|_| prng.uniform() * 10.0).collect();
            let m: Vec<f64> = (0..n).map(|_| (prng.uniform() < 0.5) as u8 as f64).collect();
            if m.iter().sum::<f64>() == 0.0 {
                continue;
            }
            let v = vol(4, 5, 5, 1.0, data);
            let mask = vol(4, 5, 5, 1.0, m);
            let (_, mean, max, peak, _) = first_order_features(&v, &mask).unwrap();
            assert!(peak <= max + 1e-12);
            assert!(mean <= max + 1e-12);
        }
    }

    #[test]
    fn empty_mask_rejected() {
        let v = vol(2, 2, 2, 1.0, vec![1.0; 8]);
        let mask = vol(2, 2, 2, 1.0, vec![0.0; 8]);
        assert!(first_order_features(&v, &mask).is_err());
        assert!(glcm(&v, &mask, &StatsConfig::default()).is_err());
    }

    #[test]
    fn glcm_hand_case_two_levels() {
        // 2x2x1 ROI [[0,1],[1,0]]: every distance-1 in-plane pair joins the
        // two levels except the diagonals which join equal levels
        let v = vol(1, 2, 2, 1.0, vec![0.0, 1.0, 1.0, 0.0]);
        let mask = vol(1, 2, 2, 1.0, vec![1.0; 4]);
        let cfg = StatsConfig {
            glcm_bins: 2,
            ..StatsConfig::default()
        };
        let m = glcm(&v, &mask, &cfg).unwrap();
        // pairs: (0,1)x4 from axis offsets, (0,0) and (1,1) from diagonals
        let (entropy, energy, homogeneity) = glcm_features(&m);
        assert!((m.get(0, 1) - m.get(1, 0)).abs() < 1e-15);
        let total: f64 = m.p.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        // axis-only variant from the spec example needs the diagonal
        // offsets excluded; verify the full-offset arithmetic instead
        let off_diag = m.get(0, 1) + m.get(1, 0);
        let on_diag = m.get(0, 0) + m.get(1, 1);
        assert!((off_diag - 4.0 / 6.0).abs() < 1e-12);
        assert!((on_diag - 2.0 / 6.0).abs() < 1e-12);
        assert!(entropy > 0.0 && energy > 0.0 && homogeneity > 0.0);
        // with only the two in-plane axis offsets, every pair joins the two
        // levels: p(0,1)=p(1,0)=0.5
        let ax = glcm_with_offsets(&v, &mask, 2, &[(0, 1, 0), (0, 0, 1)]).unwrap();
        assert!((ax.get(0, 1) - 0.5).abs() < 1e-15);
        assert!((ax.get(1, 0) - 0.5).abs() < 1e-15);
        let (entropy, energy, homogeneity) = glcm_features(&ax);
        assert!((entropy - 1.0).abs() < 1e-12);
        assert!((energy - 0.5).abs() < 1e-12);
        assert!((homogeneity - 0.5).abs() < 1e-12);
    }

    #[test]
    fn glcm_axis_offsets_match_hand_case() {
        // restrict to a single z-slice of thickness 1 with only axis pairs:
        // lay the four voxels along x so diagonal offsets leave the row
        let v = vol(1, 1, 4, 1.0, vec![0.0, 1.0, 0.0, 1.0]);
        let mask = vol(1, 1, 4, 1.0, vec![1.0; 4]);
        let cfg = StatsConfig {
            glcm_bins: 2,
            ..StatsConfig::default()
        };
        let m = glcm(&v, &mask, &cfg).unwrap();
        // three (0,1) adjacencies, symmetrized: p(0,1)=p(1,0)=0.5
        assert!((m.get(0, 1) - 0.5).abs() < 1e-12);
        assert!((m.get(1, 0) - 0.5).abs() < 1e-12);
        let (entropy, energy, homogeneity) = glcm_features(&m);
        assert!((entropy - 1.0).abs() < 1e-12);
        assert!((energy - 0.5).abs() < 1e-12);
        assert!((homogeneity - 0.5).abs() < 1e-12);
    }

    #[test]
    fn constant_roi_single_cell() {
        let v = vol(2, 2, 2, 1.0, vec![3.0; 8]);
        let mask = vol(2, 2, 2, 1.0, vec![1.0; 8]);
        let m = glcm(&v, &mask, &StatsConfig::default()).unwrap();
        assert_eq!(m.get(0, 0), 1.0);
        let (entropy, energy, homogeneity) = glcm_features(&m);
        assert_eq!(entropy, 0.0);
        assert_eq!(energy, 1.0);
        assert_eq!(homogeneity, 1.0);
    }

    #[test]
    fn isolated_voxel_degenerates_gracefully() {
        let mut m = vec![0.0; 27];
        m[13] = 1.0;
        let v = vol(3, 3, 3, 1.0, (0..27).map(|i| i as f64).collect());
        let mask = vol(3, 3, 3, 1.0, m);
        let g = glcm(&v, &mask, &StatsConfig::default()).unwrap();
        assert_eq!(g.get(0, 0), 1.0);
    }

    /// Naive oracle: enumerate all ordered in-mask voxel pairs at the 26
    /// distance-1 displacements and count co-occurrences directly.
    pub fn glcm_oracle(volume: &Volume, mask: &Volume, levels: usize) -> Vec<f64> {
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        for (v, m) in volume.data.iter().zip(&mask.data) {
            if *m > 0.5 {
                min = min.min(*v);
                max = max.max(*v);
            }
        }
        let mut counts = vec![0.0f64; levels * levels];
        let mut total = 0.0;
        for z in 0..volume.depth as i64 {
            for y in 0..volume.height as i64 {
                for x in 0..volume.width as i64 {
                    for dz in -1i64..=1 {
                        for dy in -1i64..=1 {
                            for dx in -1i64..=1 {
                                if (dz, dy, dx) == (0, 0, 0) {
                                    continue;
                                }
                                let (zz, yy, xx) = (z + dz, y + dy, x + dx);
                                if zz < 0
                                    || yy < 0
                                    || xx < 0
                                    || zz >= volume.depth as i64
                                    || yy >= volume.height as i64
                                    || xx >= volume.width as i64
                                {
                                    continue;
                                }
                                let a = (z as usize, y as usize, x as usize);
                                let b = (zz as usize, yy as usize, xx as usize);
                                if mask.get(a.0, a.1, a.2) <= 0.5 || mask.get(b.0, b.1, b.2) <= 0.5
                                {
                                    continue;
                                }
                                let bi = bin_of(volume.get(a.0, a.1, a.2), min, max, levels);
                                let bj = bin_of(volume.get(b.0, b.1, b.2), min, max, levels);
                                counts[bi * levels + bj] += 1.0;
                                total += 1.0;
                            }
                        }
                    }
                }
            }
        }
        if total == 0.0 {
            counts[0] = 1.0;
            total = 1.0;
        }
        for c in &mut counts {
            *c /= total;
        }
        counts
    }

    #[test]
    fn glcm_matches_pair_enumeration_oracle() {
        let mut prng = Prng::new(7);
        let cfg = StatsConfig {
            glcm_bins: 4,
            ..StatsConfig::default()
        };
        let mut tested = 0;
        while tested < 50 {
            let (d, h, w) = (
                1 + prng.below(3),
                1 + prng.below(5),
                1 + prng.below(5),
            );
            let n = d * h * w;
            let data: Vec<f64> = (0..n).map(|_| prng.uniform() * 9.0).collect();
            let m: Vec<f64> = (0..n).map(|_| (prng.uniform() < 0.7) as u8 as f64).collect();
            if m.iter().sum::<f64>() == 0.0 {
                continue;
            }
            let v = vol(d, h, w, 1.0, data);
            let mask = vol(d, h, w, 1.0, m);
            let got = glcm(&v, &mask, &cfg).unwrap();
            let want = glcm_oracle(&v, &mask, cfg.glcm_bins);
            for (a, b) in got.p.iter().zip(&want) {
                assert!((a - b).abs() < 1e-12, "glcm deviates from oracle");
            }
            tested += 1;
        }
    }

    #[test]
    fn glcm_probability_invariants() {
        let mut prng = Prng::new(9);
        let cfg = StatsConfig::default();
        for _ in 0..10 {
            let n = 4 * 6 * 6;
            let data: Vec<f64> = (0..n).map(|_| prng.normal()).collect();
            let mut m: Vec<f64> = (0..n).map(|_| (prng.uniform() < 0.6) as u8 as f64).collect();
            m[0] = 1.0;
            let v = vol(4, 6, 6, 1.0, data);
            let mask = vol(4, 6, 6, 1.0, m);
            let g = glcm(&v, &mask, &cfg).unwrap();
            let total: f64 = g.p.iter().sum();
            assert!((total - 1.0).abs() < 1e-12);
            for i in 0..g.levels {
                for j in 0..g.levels {
                    assert!(g.get(i, j) >= 0.0);
                    assert!((g.get(i, j) - g.get(j, i)).abs() < 1e-15);
                }
            }
            let (entropy, energy, homogeneity) = glcm_features(&g);
            assert!(entropy >= 0.0 && entropy <= 2.0 * (g.levels as f64).log2());
            assert!(energy > 0.0 && energy <= 1.0);
            assert!(homogeneity > 0.0 && homogeneity <= 1.0);
        }
    }

    #[test]
    fn glcm_features_match_naive_sums() {
        let mut prng = Prng::new(11);
        for _ in 0..10 {
            let levels = 5;
            let mut p: Vec<f64> = (0..levels * levels).map(|_| prng.uniform()).collect();
            // symmetrize and normalize like a real matrix
            for i in 0..levels {
                for j in 0..i {
                    let avg = (p[i * levels + j] + p[j * levels + i]) / 2.0;
                    p[i * levels + j] = avg;
                    p[j * levels + i] = avg;
                }
            }
            let total: f64 = p.iter().sum();
            for v in &mut p {
                *v /= total;
            }
            let m = GlcmMatrix {
                levels,
                p: p.clone(),
                intensity_range: (0.0, 1.0),
            };
            let (entropy, energy, homogeneity) = glcm_features(&m);
            let mut e2 = 0.0;
            let mut en2 = 0.0;
            let mut h2 = 0.0;
            for i in 0..levels {
                for j in 0..levels {
                    let q = p[i * levels + j];
                    if q > 0.0 {
                        e2 -= q * q.log2();
                    }
                    en2 += q * q;
                    h2 += q / (1.0 + (i as f64 - j as f64).abs());
                }
            }
            assert!((entropy - e2).abs() < 1e-12);
            assert!((energy - en2).abs() < 1e-12);
            assert!((homogeneity - h2).abs() < 1e-12);
        }
    }
}
