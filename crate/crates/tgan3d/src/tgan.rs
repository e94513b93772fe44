//! Temporal-GAN architecture: temporal generator G0, per-slice image
//! generator G1, mask encoder E and a fully 3-D Wasserstein critic D.
//!
//! A volume of depth T is generated as T stacked frames; G0 expands a single
//! latent z0 into per-slice latents z1(t) with 1-D transposed convolutions,
//! and G1 decodes [z0, z1(t)] (plus a mask code in conditional mode) into
//! one slice. The critic sees the whole volume, with the mask weighted in
//! as a second channel: I' = (1-omega) I, M' = omega M.

use std::collections::BTreeMap;

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::prng::Prng;
use crate::volume::Volume;

pub const LEAKY_SLOPE: f64 = 0.2;
const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VolumeShape {
    pub depth: usize,
    pub height: usize,
    pub width: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GanConfig {
    pub k0: usize,
    pub k1: usize,
    pub km: usize,
    pub base_channels: usize,
    pub shape: VolumeShape,
    pub omega: f64,
    pub conditional: bool,
}

impl GanConfig {
    /// Small configuration for laptop-scale runs: 8x16x16 volumes.
    pub fn desk(conditional: bool) -> Self {
        GanConfig {
            k0: 16,
            k1: 16,
            km: 8,
            base_channels: 8,
            shape: VolumeShape {
                depth: 8,
                height: 16,
                width: 16,
            },
            omega: 0.01,
            conditional,
        }
    }

    /// 32x64x64 single-channel volumes.
    pub fn full_scale(conditional: bool) -> Self {
        GanConfig {
            k0: 50,
            k1: 50,
            km: 16,
            base_channels: 32,
            shape: VolumeShape {
                depth: 32,
                height: 64,
                width: 64,
            },
            omega: 0.01,
            conditional,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.shape;
        if s.height != s.width {
            return Err(Error::invalid("height and width must match"));
        }
        if !s.height.is_power_of_two() || s.height < 8 {
            return Err(Error::invalid("height/width must be a power of two >= 8"));
        }
        if ![4, 8, 16, 32].contains(&s.depth) {
            return Err(Error::invalid("depth must be one of 4, 8, 16, 32"));
        }
        if s.depth * 4 < s.height {
            return Err(Error::invalid(
                "depth too small for the critic stack (need depth >= height/4)",
            ));
        }
        if !(0.0..=1.0).contains(&self.omega) {
            return Err(Error::invalid("omega must lie in [0, 1]"));
        }
        if self.k0 == 0 || self.k1 == 0 || self.base_channels == 0 {
            return Err(Error::invalid("latent dims and base channels must be positive"));
        }
        Ok(())
    }

    /// Transposed-conv stages in G0: doublings from 1 slice to depth.
    pub fn g0_layers(&self) -> usize {
        self.shape.depth.trailing_zeros() as usize
    }

    /// Transposed-conv stages in G1 (and conv stages in E and D): doublings
    /// from the 4x4 seed map to the slice extent.
    pub fn g1_layers(&self) -> usize {
        (self.shape.height / 4).trailing_zeros() as usize
    }

    pub fn g1_input_dim(&self) -> usize {
        self.k0 + self.k1 + if self.conditional { self.km } else { 0 }
    }

    fn g1_seed_channels(&self) -> usize {
        self.base_channels << (self.g1_layers() - 1)
    }
}

/// Named parameter set for all networks, ordered for deterministic
/// iteration.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ModelParams {
    map: BTreeMap<String, Tensor>,
}

impl ModelParams {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, t: Tensor) -> Result<()> {
        if self.map.contains_key(name) {
            return Err(Error::invalid(format!("duplicate parameter name {name}")));
        }
        self.map.insert(name.to_string(), t);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.map
            .get(name)
            .ok_or_else(|| Error::invalid(format!("missing parameter {name}")))
    }

    pub fn set(&mut self, name: &str, t: Tensor) {
        self.map.insert(name.to_string(), t);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.map.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.map.keys()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn all_finite(&self) -> bool {
        self.map.values().all(|t| t.all_finite())
    }
}

/// Initialize all parameters for the configured networks. Creation order is
/// fixed, so a given seed always produces the same weights.
pub fn init_params(cfg: &GanConfig, prng: &mut Prng) -> Result<ModelParams> {
    cfg.validate()?;
    let mut p = ModelParams::new();
    let w = |p: &mut ModelParams, name: &str, shape: &[usize], prng: &mut Prng| -> Result<()> {
        let mut t = Tensor::randn(prng, shape);
        for v in t.data_mut() {
            *v *= INIT_STD;
        }
        p.insert(name, t)
    };
    let b = |p: &mut ModelParams, name: &str, n: usize| -> Result<()> {
        p.insert(name, Tensor::zeros(&[n]))
    };

    // G0: linear lift then stride-2 1-D deconvolutions over the slice axis
    w(&mut p, "g0.lift.w", &[cfg.k1, cfg.k0], prng)?;
    b(&mut p, "g0.lift.b", cfg.k1)?;
    for i in 0..cfg.g0_layers() {
        w(&mut p, &format!("g0.deconv{i}.w"), &[cfg.k1, cfg.k1, 4], prng)?;
        b(&mut p, &format!("g0.deconv{i}.b"), cfg.k1)?;
    }

    // G1: linear lift to a 4x4 seed map, then stride-2 2-D deconvolutions
    let c1 = cfg.g1_seed_channels();
    w(&mut p, "g1.lift.w", &[c1 * 16, cfg.g1_input_dim()], prng)?;
    b(&mut p, "g1.lift.b", c1 * 16)?;
    for i in 0..cfg.g1_layers() {
        let cin = c1 >> i;
        let cout = if i == cfg.g1_layers() - 1 { 1 } else { c1 >> (i + 1) };
        w(&mut p, &format!("g1.deconv{i}.w"), &[cin, cout, 4, 4], prng)?;
        b(&mut p, &format!("g1.deconv{i}.b"), cout)?;
    }

    // E: stride-2 2-D convolutions ending in km channels, pooled to a code
    if cfg.conditional {
        for i in 0..cfg.g1_layers() {
            let cin = if i == 0 { 1 } else { cfg.base_channels << (i - 1) };
            let cout = if i == cfg.g1_layers() - 1 {
                cfg.km
            } else {
                cfg.base_channels << i
            };
            w(&mut p, &format!("e.conv{i}.w"), &[cout, cin, 4, 4], prng)?;
            b(&mut p, &format!("e.conv{i}.b"), cout)?;
        }
    }

    // D: stride-2 3-D convolutions then a linear head
    let d_cin = if cfg.conditional { 2 } else { 1 };
    let mut cin = d_cin;
    for i in 0..cfg.g1_layers() {
        let cout = cfg.base_channels << i;
        w(&mut p, &format!("d.conv{i}.w"), &[cout, cin, 4, 4, 4], prng)?;
        b(&mut p, &format!("d.conv{i}.b"), cout)?;
        cin = cout;
    }
    let feat_depth = cfg.shape.depth >> cfg.g1_layers();
    let flat = cin * feat_depth * 4 * 4;
    w(&mut p, "d.out.w", &[1, flat], prng)?;
    b(&mut p, "d.out.b", 1)?;

    Ok(p)
}

/// Parameter leaves bound onto a tape.
pub struct BoundParams {
    vars: BTreeMap<String, Var>,
}

impl BoundParams {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::invalid(format!("unbound parameter {name}")))
    }

    pub fn var_names(&self) -> impl Iterator<Item = (&String, Var)> {
        self.vars.iter().map(|(k, v)| (k, *v))
    }
}

/// Insert every parameter as a tape leaf, in name order.
pub fn bind_params(tape: &mut Tape, params: &ModelParams, requires_grad: bool) -> BoundParams {
    let mut vars = BTreeMap::new();
    for (name, t) in params.iter() {
        vars.insert(name.clone(), tape.leaf(t.clone(), requires_grad));
    }
    BoundParams { vars }
}

fn add_channel_bias(tape: &mut Tape, x: Var, bias: Var, spatial_rank: usize) -> Result<Var> {
    let c = tape.value(bias).shape()[0];
    let mut shape = vec![c];
    shape.extend(std::iter::repeat(1).take(spatial_rank));
    let rb = tape.reshape(bias, &shape)?;
    tape.add(x, rb)
}

/// G0 graph: z0 [B, K0] -> z1 [B, K1, T].
pub fn g0_graph(tape: &mut Tape, vars: &BoundParams, cfg: &GanConfig, z0: Var) -> Result<Var> {
    let w = vars.get("g0.lift.w")?;
    let b = vars.get("g0.lift.b")?;
    let lifted = tape.linear(z0, w, b)?;
    let batch = tape.value(lifted).shape()[0];
    let mut h = tape.reshape(lifted, &[batch, cfg.k1, 1])?;
    for i in 0..cfg.g0_layers() {
        let w = vars.get(&format!("g0.deconv{i}.w"))?;
        let b = vars.get(&format!("g0.deconv{i}.b"))?;
        let c = tape.conv1d_transpose(h, w, 2, 1)?;
        let c = add_channel_bias(tape, c, b, 1)?;
        h = if i == cfg.g0_layers() - 1 {
            tape.tanh(c)
        } else {
            tape.leaky_relu(c, LEAKY_SLOPE)
        };
    }
    Ok(h)
}

/// G1 graph: concatenated latent [B, g1_input_dim] -> frame [B, 1, H, W]
/// with every value in (-1, 1).
pub fn g1_graph(tape: &mut Tape, vars: &BoundParams, cfg: &GanConfig, z: Var) -> Result<Var> {
    let got = tape.value(z).shape().to_vec();
    if got.len() != 2 || got[1] != cfg.g1_input_dim() {
        return Err(Error::shape(&[0, cfg.g1_input_dim()], &got, "g1 latent"));
    }
    let w = vars.get("g1.lift.w")?;
    let b = vars.get("g1.lift.b")?;
    let lifted = tape.linear(z, w, b)?;
    let batch = got[0];
    let c1 = cfg.g1_seed_channels();
    let mut h = tape.reshape(lifted, &[batch, c1, 4, 4])?;
    for i in 0..cfg.g1_layers() {
        let w = vars.get(&format!("g1.deconv{i}.w"))?;
        let b = vars.get(&format!("g1.deconv{i}.b"))?;
        let c = tape.conv_transpose2d(h, w, 2, 1)?;
        let c = add_channel_bias(tape, c, b, 2)?;
        h = if i == cfg.g1_layers() - 1 {
            tape.tanh(c)
        } else {
            tape.leaky_relu(c, LEAKY_SLOPE)
        };
    }
    Ok(h)
}

/// Mask-encoder graph: slice [B, 1, H, W] -> code [B, Km].
pub fn encoder_graph(tape: &mut Tape, vars: &BoundParams, cfg: &GanConfig, slice: Var) -> Result<Var> {
    let mut h = slice;
    for i in 0..cfg.g1_layers() {
        let w = vars.get(&format!("e.conv{i}.w"))?;
        let b = vars.get(&format!("e.conv{i}.b"))?;
        let c = tape.conv2d(h, w, 2, 1)?;
        let c = add_channel_bias(tape, c, b, 2)?;
        h = tape.leaky_relu(c, LEAKY_SLOPE);
    }
    tape.global_avg_pool(h)
}

/// Critic graph over a pre-assembled input [B, C, T, H, W] -> [B, 1].
/// No output activation: this is a Wasserstein critic.
pub fn critic_graph(tape: &mut Tape, vars: &BoundParams, cfg: &GanConfig, input: Var) -> Result<Var> {
    let mut h = input;
    for i in 0..cfg.g1_layers() {
        let w = vars.get(&format!("d.conv{i}.w"))?;
        let b = vars.get(&format!("d.conv{i}.b"))?;
        let c = tape.conv3d(h, w, 2, 1)?;
        let c = add_channel_bias(tape, c, b, 3)?;
        h = tape.leaky_relu(c, LEAKY_SLOPE);
    }
    let shape = tape.value(h).shape().to_vec();
    let flat: usize = shape[1..].iter().product();
    let hf = tape.reshape(h, &[shape[0], flat])?;
    let w = vars.get("d.out.w")?;
    let b = vars.get("d.out.b")?;
    tape.linear(hf, w, b)
}

/// Build the critic input channels. Conditional mode weights the image and
/// mask exactly as I' = (1-omega) I and M' = omega M (plain scalar
/// multiplies), stacked as two channels.
pub fn critic_input(
    tape: &mut Tape,
    cfg: &GanConfig,
    image: Var,
    mask: Option<Var>,
    omega: f64,
) -> Result<Var> {
    if !cfg.conditional {
        return Ok(image);
    }
    let mask = mask.ok_or_else(|| Error::invalid("conditional critic needs a mask"))?;
    if tape.value(image).shape() != tape.value(mask).shape() {
        return Err(Error::shape(
            tape.value(image).shape(),
            tape.value(mask).shape(),
            "critic mask",
        ));
    }
    let wi = tape.scalar(1.0 - omega);
    let wm = tape.scalar(omega);
    let iw = tape.mul(image, wi)?;
    let mw = tape.mul(mask, wm)?;
    tape.concat(&[iw, mw], 1)
}

/// Full generator graph: z0 [B, K0] (+ masks [B, 1, T, H, W] when
/// conditional) -> volumes [B, 1, T, H, W].
pub fn generator_graph(
    tape: &mut Tape,
    vars: &BoundParams,
    cfg: &GanConfig,
    z0: Var,
    masks: Option<Var>,
) -> Result<Var> {
    if cfg.conditional && masks.is_none() {
        return Err(Error::invalid("conditional generation needs a mask"));
    }
    let t_slices = cfg.shape.depth;
    let z1 = g0_graph(tape, vars, cfg, z0)?;
    let batch = tape.value(z0).shape()[0];
    let (h, w) = (cfg.shape.height, cfg.shape.width);
    let mut frames = Vec::with_capacity(t_slices);
    for t in 0..t_slices {
        let z1_t = tape.slice(z1, 2, t, 1)?;
        let z1_t = tape.reshape(z1_t, &[batch, cfg.k1])?;
        let mut parts = vec![z0, z1_t];
        if let Some(masks) = masks {
            let m_t = tape.slice(masks, 2, t, 1)?;
            let m_t = tape.reshape(m_t, &[batch, 1, h, w])?;
            let code = encoder_graph(tape, vars, cfg, m_t)?;
            parts.push(code);
        }
        let z = tape.concat(&parts, 1)?;
        let frame = g1_graph(tape, vars, cfg, z)?;
        let frame = tape.reshape(frame, &[batch, 1, 1, h, w])?;
        frames.push(frame);
    }
    tape.concat(&frames, 2)
}

// ---- tensor-level wrappers --------------------------------------------------

/// z0 -> the T per-slice latents z1(t).
pub fn temporal_generate(params: &ModelParams, cfg: &GanConfig, z0: &Tensor) -> Result<Vec<Tensor>> {
    if z0.shape() != [cfg.k0] {
        return Err(Error::shape(&[cfg.k0], z0.shape(), "z0"));
    }
    let mut tape = Tape::new();
    let vars = bind_params(&mut tape, params, false);
    let z0v = tape.leaf(z0.reshaped(&[1, cfg.k0])?, false);
    let z1 = g0_graph(&mut tape, &vars, cfg, z0v)?;
    let t_slices = cfg.shape.depth;
    let mut out = Vec::with_capacity(t_slices);
    for t in 0..t_slices {
        let s = tape.slice(z1, 2, t, 1)?;
        out.push(tape.value(s).reshaped(&[cfg.k1])?);
    }
    Ok(out)
}

/// One generated frame from (z0, z1(t)) and an optional mask code.
pub fn image_generate(
    params: &ModelParams,
    cfg: &GanConfig,
    z0: &Tensor,
    z1_t: &Tensor,
    mask_code: Option<&Tensor>,
) -> Result<Tensor> {
    if cfg.conditional != mask_code.is_some() {
        return Err(Error::invalid(
            "mask code must be supplied exactly in conditional mode",
        ));
    }
    let mut data = z0.data().to_vec();
    data.extend_from_slice(z1_t.data());
    if let Some(code) = mask_code {
        data.extend_from_slice(code.data());
    }
    let z = Tensor::from_vec(&[1, cfg.g1_input_dim()], data)
        .map_err(|_| Error::shape(&[cfg.g1_input_dim()], &[z0.len() + z1_t.len()], "g1 latent"))?;
    let mut tape = Tape::new();
    let vars = bind_params(&mut tape, params, false);
    let zv = tape.leaf(z, false);
    let frame = g1_graph(&mut tape, &vars, cfg, zv)?;
    tape.value(frame)
        .reshaped(&[cfg.shape.height, cfg.shape.width])
}

/// Encode one binary mask slice (H x W) to its Km-dim code.
pub fn encode_mask_slice(params: &ModelParams, cfg: &GanConfig, slice: &Tensor) -> Result<Tensor> {
    if slice.shape() != [cfg.shape.height, cfg.shape.width] {
        return Err(Error::shape(
            &[cfg.shape.height, cfg.shape.width],
            slice.shape(),
            "mask slice",
        ));
    }
    if !slice
        .data()
        .iter()
        .all(|&v| v.abs() <= 1e-6 || (v - 1.0).abs() <= 1e-6)
    {
        return Err(Error::invalid("mask slice must be binary (0/1)"));
    }
    let mut tape = Tape::new();
    let vars = bind_params(&mut tape, params, false);
    let s = tape.leaf(
        slice.reshaped(&[1, 1, cfg.shape.height, cfg.shape.width])?,
        false,
    );
    let code = encoder_graph(&mut tape, &vars, cfg, s)?;
    tape.value(code).reshaped(&[cfg.km])
}

/// Generate one volume; values lie in (-1, 1). Deterministic in
/// (params, prng state, mask).
pub fn generate_volume(
    params: &ModelParams,
    cfg: &GanConfig,
    prng: &mut Prng,
    mask: Option<&Volume>,
) -> Result<Volume> {
    if cfg.conditional && mask.is_none() {
        return Err(Error::invalid("conditional generation needs a mask"));
    }
    let s = cfg.shape;
    if let Some(m) = mask {
        if m.depth != s.depth || m.height != s.height || m.width != s.width {
            return Err(Error::shape(
                &[s.depth, s.height, s.width],
                &[m.depth, m.height, m.width],
                "conditioning mask",
            ));
        }
    }
    let z0 = Tensor::randn(prng, &[1, cfg.k0]);
    let mut tape = Tape::new();
    let vars = bind_params(&mut tape, params, false);
    let z0v = tape.leaf(z0, false);
    let mask_var = match mask {
        Some(m) if cfg.conditional => Some(tape.leaf(m.to_tensor(), false)),
        _ => None,
    };
    let vol = generator_graph(&mut tape, &vars, cfg, z0v, mask_var)?;
    let voxel = mask.map(|m| m.voxel_size_mm).unwrap_or([3.7, 3.7, 3.7]);
    Volume::from_tensor(tape.value(vol), voxel)
}

/// Critic score of a volume (optionally with its conditioning mask).
pub fn critic_score(
    params: &ModelParams,
    cfg: &GanConfig,
    volume: &Volume,
    mask: Option<&Volume>,
    omega: f64,
) -> Result<f64> {
    let mut tape = Tape::new();
    let vars = bind_params(&mut tape, params, false);
    let img = tape.leaf(volume.to_tensor(), false);
    let mask_var = mask.map(|m| tape.leaf(m.to_tensor(), false));
    let input = critic_input(&mut tape, cfg, img, mask_var, omega)?;
    let score = critic_graph(&mut tape, &vars, cfg, input)?;
    Ok(tape.value(score).item())
}
