//! Procedural PET-like head phantoms with ellipsoidal lesions.
//!
//! The renderer is a pure function of its spec and seed: head ellipsoid at a
//! background intensity, Gaussian tissue noise, lesion voxels at a hotter
//! intensity, then an optional Gaussian blur and a clamp at zero. Four fixed
//! "center" profiles modulate contrast, noise and lesion size so that a
//! multi-center dataset can be faked at desk scale.

use crate::error::{Error, Result};
use crate::prng::Prng;
use crate::volume::Volume;

#[derive(Debug, Clone)]
pub struct PhantomSpec {
    pub depth: usize,
    pub height: usize,
    pub width: usize,
    pub voxel_size_mm: [f64; 3],
    /// Head ellipsoid semi-axes in voxels, (x, y, z).
    pub head_semi_axes: [f64; 3],
    pub background_intensity: f64,
    pub tissue_noise_sigma: f64,
    pub lesion_mean: f64,
    pub lesion_sigma: f64,
    /// Blur kernel sigma in voxels; 0 disables blurring.
    pub blur_sigma: f64,
}

impl PhantomSpec {
    /// Desk-scale default: 8x16x16, SUV-like contrast of 6 over 1.
    pub fn desk(depth: usize, height: usize, width: usize) -> Self {
        PhantomSpec {
            depth,
            height,
            width,
            voxel_size_mm: [3.7, 3.7, 3.7],
            head_semi_axes: [
                width as f64 * 0.42,
                height as f64 * 0.42,
                depth as f64 * 0.46,
            ],
            background_intensity: 1.0,
            tissue_noise_sigma: 0.05,
            lesion_mean: 6.0,
            lesion_sigma: 0.2,
            blur_sigma: 0.6,
        }
    }

    pub fn noiseless(depth: usize, height: usize, width: usize) -> Self {
        PhantomSpec {
            tissue_noise_sigma: 0.0,
            lesion_sigma: 0.0,
            blur_sigma: 0.0,
            ..PhantomSpec::desk(depth, height, width)
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LesionSizeParams {
    /// Semi-axis range in voxels, (x, y, z), drawn uniformly per axis.
    pub min_semi_axes: [f64; 3],
    pub max_semi_axes: [f64; 3],
}

impl LesionSizeParams {
    pub fn fixed(semi_axes: [f64; 3]) -> Self {
        LesionSizeParams {
            min_semi_axes: semi_axes,
            max_semi_axes: semi_axes,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CenterId {
    A,
    B,
    C,
    D,
}

impl CenterId {
    pub fn as_char(&self) -> char {
        match self {
            CenterId::A => 'A',
            CenterId::B => 'B',
            CenterId::C => 'C',
            CenterId::D => 'D',
        }
    }

    pub fn from_char(c: char) -> Result<Self> {
        match c {
            'A' => Ok(CenterId::A),
            'B' => Ok(CenterId::B),
            'C' => Ok(CenterId::C),
            'D' => Ok(CenterId::D),
            other => Err(Error::invalid(format!("unknown center id '{other}'"))),
        }
    }
}

/// Per-center acquisition variation. The four default profiles are fixed
/// constants; their contrast factors are spaced so center intensity means
/// are separable on modest sample counts.
#[derive(Debug, Clone)]
pub struct CenterProfile {
    pub id: CenterId,
    /// Multiplies every rendered intensity.
    pub contrast_factor: f64,
    /// Extra additive Gaussian noise sigma, applied before blurring.
    pub noise_sigma: f64,
    pub lesion_size: LesionSizeParams,
}

pub fn default_center_profiles() -> Vec<CenterProfile> {
    vec![
        CenterProfile {
            id: CenterId::A,
            contrast_factor: 1.0,
            noise_sigma: 0.05,
            lesion_size: LesionSizeParams {
                min_semi_axes: [2.0, 2.0, 1.5],
                max_semi_axes: [3.5, 3.5, 2.5],
            },
        },
        CenterProfile {
            id: CenterId::B,
            contrast_factor: 1.3,
            noise_sigma: 0.08,
            lesion_size: LesionSizeParams {
                min_semi_axes: [2.5, 2.5, 1.5],
                max_semi_axes: [4.0, 4.0, 2.5],
            },
        },
        CenterProfile {
            id: CenterId::C,
            contrast_factor: 0.75,
            noise_sigma: 0.03,
            lesion_size: LesionSizeParams {
                min_semi_axes: [1.5, 1.5, 1.0],
                max_semi_axes: [3.0, 3.0, 2.0],
            },
        },
        CenterProfile {
            id: CenterId::D,
            contrast_factor: 1.6,
            noise_sigma: 0.10,
            lesion_size: LesionSizeParams {
                min_semi_axes: [2.0, 2.0, 1.5],
                max_semi_axes: [4.5, 4.5, 3.0],
            },
        },
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone)]
pub struct Sample {
    pub volume: Volume,
    pub mask: Volume,
    pub center: CenterId,
    pub split: Split,
}

#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn train(&self) -> impl Iterator<Item = &Sample> {
        self.samples.iter().filter(|s| s.split == Split::Train)
    }

    pub fn test(&self) -> impl Iterator<Item = &Sample> {
        self.samples.iter().filter(|s| s.split == Split::Test)
    }
}

#[derive(Debug, Clone, Copy)]
pub enum SplitRule {
    /// Withhold a fixed number of cases for testing.
    WithholdCount(usize),
    /// Withhold this fraction of cases for testing.
    WithholdFraction(f64),
}

/// Draw a single ellipsoidal lesion, fully inside the head ellipsoid of
/// `spec`, as a {0,1} mask. Discrete membership: sum((d_i/r_i)^2) <= 1.
pub fn random_lesion_mask(
    prng: &mut Prng,
    spec: &PhantomSpec,
    size: &LesionSizeParams,
) -> Result<Volume> {
    let semi = [
        prng.uniform_in(size.min_semi_axes[0], size.max_semi_axes[0].max(size.min_semi_axes[0])),
        prng.uniform_in(size.min_semi_axes[1], size.max_semi_axes[1].max(size.min_semi_axes[1])),
        prng.uniform_in(size.min_semi_axes[2], size.max_semi_axes[2].max(size.min_semi_axes[2])),
    ];
    if semi.iter().any(|&s| s <= 0.0) {
        return Err(Error::invalid("lesion semi-axes must be positive"));
    }
    lesion_mask_at_random_center(prng, spec, semi)
}

fn lesion_mask_at_random_center(
    prng: &mut Prng,
    spec: &PhantomSpec,
    semi: [f64; 3],
) -> Result<Volume> {
    let head_center = [
        spec.width as f64 / 2.0,
        spec.height as f64 / 2.0,
        spec.depth as f64 / 2.0,
    ];
    for _ in 0..200 {
        let cx = prng.uniform_in(semi[0], spec.width as f64 - semi[0]);
        let cy = prng.uniform_in(semi[1], spec.height as f64 - semi[1]);
        let cz = prng.uniform_in(semi[2], spec.depth as f64 - semi[2]);
        let mask = rasterize_ellipsoid(spec, [cx, cy, cz], semi);
        if mask.count_nonzero() == 0 {
            continue;
        }
        if mask_inside_head(&mask, spec, head_center) {
            return Ok(mask);
        }
    }
    Err(Error::invalid(
        "lesion of requested size cannot be placed inside the head",
    ))
}

/// Lesion mask with an explicit center, used where tests need exact voxel
/// counts.
pub fn ellipsoid_mask(spec: &PhantomSpec, center: [f64; 3], semi_axes: [f64; 3]) -> Result<Volume> {
    if semi_axes.iter().any(|&s| s <= 0.0) {
        return Err(Error::invalid("lesion semi-axes must be positive"));
    }
    let m = rasterize_ellipsoid(spec, center, semi_axes);
    if m.count_nonzero() == 0 {
        return Err(Error::invalid("ellipsoid contains no voxels"));
    }
    Ok(m)
}

fn rasterize_ellipsoid(spec: &PhantomSpec, center: [f64; 3], semi: [f64; 3]) -> Volume {
    let mut mask = Volume::zeros(spec.depth, spec.height, spec.width, spec.voxel_size_mm);
    for z in 0..spec.depth {
        for y in 0..spec.height {
            for x in 0..spec.width {
                let dx = (x as f64 - center[0]) / semi[0];
                let dy = (y as f64 - center[1]) / semi[1];
                let dz = (z as f64 - center[2]) / semi[2];
                if dx * dx + dy * dy + dz * dz <= 1.0 {
                    mask.set(z, y, x, 1.0);
                }
            }
        }
    }
    mask
}

fn inside_head(spec: &PhantomSpec, head_center: [f64; 3], x: usize, y: usize, z: usize) -> bool {
    let dx = (x as f64 - head_center[0]) / spec.head_semi_axes[0];
    let dy = (y as f64 - head_center[1]) / spec.head_semi_axes[1];
    let dz = (z as f64 - head_center[2]) / spec.head_semi_axes[2];
    dx * dx + dy * dy + dz * dz <= 1.0
}

fn mask_inside_head(mask: &Volume, spec: &PhantomSpec, head_center: [f64; 3]) -> bool {
    for z in 0..mask.depth {
        for y in 0..mask.height {
            for x in 0..mask.width {
                if mask.get(z, y, x) != 0.0 && !inside_head(spec, head_center, x, y, z) {
                    return false;
                }
            }
        }
    }
    true
}

/// Render a phantom for a given lesion mask. Pipeline order is fixed:
/// intensities, then noise, then blur, then clamp at zero.
pub fn render_phantom(spec: &PhantomSpec, mask: &Volume, prng: &mut Prng) -> Result<Volume> {
    render_with_profile(spec, mask, prng, 1.0, 0.0)
}

fn render_with_profile(
    spec: &PhantomSpec,
    mask: &Volume,
    prng: &mut Prng,
    contrast: f64,
    extra_noise: f64,
) -> Result<Volume> {
    if mask.depth != spec.depth || mask.height != spec.height || mask.width != spec.width {
        return Err(Error::shape(
            &[spec.depth, spec.height, spec.width],
            &[mask.depth, mask.height, mask.width],
            "render_phantom mask",
        ));
    }
    let head_center = [
        spec.width as f64 / 2.0,
        spec.height as f64 / 2.0,
        spec.depth as f64 / 2.0,
    ];
    let mut vol = Volume::zeros(spec.depth, spec.height, spec.width, spec.voxel_size_mm);
    for z in 0..spec.depth {
        for y in 0..spec.height {
            for x in 0..spec.width {
                let mut v = 0.0;
                if mask.get(z, y, x) != 0.0 {
                    v = spec.lesion_mean + spec.lesion_sigma * prng.normal();
                } else if inside_head(spec, head_center, x, y, z) {
                    v = spec.background_intensity + spec.tissue_noise_sigma * prng.normal();
                }
                if v != 0.0 && extra_noise > 0.0 {
                    v += extra_noise * prng.normal();
                }
                vol.set(z, y, x, v * contrast);
            }
        }
    }
    if spec.blur_sigma > 0.0 {
        vol = gaussian_blur(&vol, spec.blur_sigma);
    }
    for v in &mut vol.data {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    Ok(vol)
}

/// Separable Gaussian blur with kernel radius ceil(3 sigma).
pub fn gaussian_blur(vol: &Volume, sigma: f64) -> Volume {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel = Vec::with_capacity((2 * radius + 1) as usize);
    for i in -radius..=radius {
        kernel.push((-(i * i) as f64 / (2.0 * sigma * sigma)).exp());
    }
    let ksum: f64 = kernel.iter().sum();
    for k in &mut kernel {
        *k /= ksum;
    }
    let dims = [vol.width, vol.height, vol.depth];
    let mut cur = vol.clone();
    for axis in 0..3 {
        let mut next = cur.clone();
        for z in 0..vol.depth {
            for y in 0..vol.height {
                for x in 0..vol.width {
                    let mut acc = 0.0;
                    for (ki, k) in kernel.iter().enumerate() {
                        let off = ki as isize - radius;
                        let pos = [x as isize, y as isize, z as isize];
                        let mut p = pos;
                        p[axis] += off;
                        if p[axis] < 0 || p[axis] >= dims[axis] as isize {
                            continue;
                        }
                        acc += k * cur.get(p[2] as usize, p[1] as usize, p[0] as usize);
                    }
                    next.set(z, y, x, acc);
                }
            }
        }
        cur = next;
    }
    cur
}

/// Per-center dataset generation with deterministic per-sample streams.
pub fn build_dataset(
    n_per_center: usize,
    profiles: &[CenterProfile],
    spec: &PhantomSpec,
    seed: u64,
    split_rule: SplitRule,
) -> Result<Dataset> {
    if n_per_center == 0 {
        return Err(Error::invalid("n_per_center must be >= 1"));
    }
    let mut samples = Vec::with_capacity(n_per_center * profiles.len());
    for (ci, profile) in profiles.iter().enumerate() {
        for i in 0..n_per_center {
            let mut prng = Prng::new(
                seed ^ (0x9e3779b97f4a7c15u64
                    .wrapping_mul(1 + ci as u64)
                    .wrapping_add(i as u64)),
            );
            let mask = random_lesion_mask(&mut prng, spec, &profile.lesion_size)?;
            let volume = render_with_profile(
                spec,
                &mask,
                &mut prng,
                profile.contrast_factor,
                profile.noise_sigma,
            )?;
            samples.push(Sample {
                volume,
                mask,
                center: profile.id,
                split: Split::Train,
            });
        }
    }
    let n_test = match split_rule {
        SplitRule::WithholdCount(c) => c.min(samples.len()),
        SplitRule::WithholdFraction(f) => ((samples.len() as f64) * f).round() as usize,
    };
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut split_prng = Prng::new(seed.wrapping_add(0xdead_beef));
    split_prng.shuffle(&mut order);
    for &i in order.iter().take(n_test) {
        samples[i].split = Split::Test;
    }
    Ok(Dataset { samples })
}

#[derive(Debug, Clone, Copy)]
pub struct CropBox {
    pub z0: usize,
    pub y0: usize,
    pub x0: usize,
    pub depth: usize,
    pub height: usize,
    pub width: usize,
}

/// Crop volume and mask identically to the given box.
pub fn crop_to_box(volume: &Volume, mask: &Volume, b: &CropBox) -> Result<(Volume, Volume)> {
    if !volume.same_shape(mask) {
        return Err(Error::shape(
            &[volume.depth, volume.height, volume.width],
            &[mask.depth, mask.height, mask.width],
            "crop_to_box",
        ));
    }
    if b.z0 + b.depth > volume.depth
        || b.y0 + b.height > volume.height
        || b.x0 + b.width > volume.width
    {
        return Err(Error::invalid(format!(
            "crop box out of bounds: origin ({},{},{}) extent {}x{}x{} in {}x{}x{}",
            b.z0, b.y0, b.x0, b.depth, b.height, b.width, volume.depth, volume.height, volume.width
        )));
    }
    let crop_one = |src: &Volume| {
        let mut out = Volume::zeros(b.depth, b.height, b.width, src.voxel_size_mm);
        for z in 0..b.depth {
            for y in 0..b.height {
                for x in 0..b.width {
                    out.set(z, y, x, src.get(b.z0 + z, b.y0 + y, b.x0 + x));
                }
            }
        }
        out
    };
    Ok((crop_one(volume), crop_one(mask)))
}

/// Number of 6-connected components among the nonzero voxels.
pub fn connected_components(mask: &Volume) -> usize {
    let mut visited = vec![false; mask.data.len()];
    let mut components = 0;
    let mut stack = Vec::new();
    for start in 0..mask.data.len() {
        if visited[start] || mask.data[start] == 0.0 {
            continue;
        }
        components += 1;
        stack.push(start);
        visited[start] = true;
        while let Some(i) = stack.pop() {
            let x = i % mask.width;
            let y = (i / mask.width) % mask.height;
            let z = i / (mask.width * mask.height);
            let neighbors = [
                (z.wrapping_sub(1), y, x),
                (z + 1, y, x),
                (z, y.wrapping_sub(1), x),
                (z, y + 1, x),
                (z, y, x.wrapping_sub(1)),
                (z, y, x + 1),
            ];
            for (nz, ny, nx) in neighbors {
                if nz < mask.depth && ny < mask.height && nx < mask.width {
                    let j = mask.idx(nz, ny, nx);
                    if !visited[j] && mask.data[j] != 0.0 {
                        visited[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
    }
    components
}
