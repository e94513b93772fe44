//! Wasserstein adversarial training with RMSProp and scheduled singular
//! value clipping.
//!
//! The loop's unit is the iteration (one batch). Critic weights are clipped
//! every `svc_period` iterations; by default only the critic is clipped,
//! which is where the Lipschitz constraint matters. Everything is a pure
//! function of (config, seed, data), so two runs agree bit for bit.

use std::collections::BTreeMap;
use std::time::Instant;

use crate::autodiff::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::phantom::{Dataset, Sample};
use crate::prng::Prng;
use crate::spectral::{clip_singular_values, spectral_norm, ClipPolicy};
use crate::tgan::{
    bind_params, critic_graph, critic_input, generator_graph, init_params, GanConfig, ModelParams,
};

pub const RMSPROP_DECAY: f64 = 0.9;
pub const RMSPROP_EPS: f64 = 1e-8;

/// Name of the rank-1 metadata entry holding the intensity scale used to map
/// volumes into [-1, 1]; stored with the parameters so generation can invert
/// the mapping.
pub const NORM_SCALE_PARAM: &str = "meta.norm_scale";

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub iterations: usize,
    pub critic_steps_per_gen_step: usize,
    pub svc_period: usize,
    pub omega: f64,
    pub seed: u64,
    /// Clip only the critic (default) or every network.
    pub clip_all_networks: bool,
    /// Emit a checkpoint every this many iterations; 0 means final only.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 5e-5,
            batch_size: 32,
            iterations: 5000,
            critic_steps_per_gen_step: 1,
            svc_period: 5,
            omega: 0.01,
            seed: 0,
            clip_all_networks: false,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn desk(seed: u64) -> Self {
        TrainConfig {
            batch_size: 8,
            iterations: 200,
            seed,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if self.svc_period == 0 {
            return Err(Error::invalid("svc period must be >= 1"));
        }
        if self.batch_size == 0 || self.iterations == 0 {
            return Err(Error::invalid("batch size and iterations must be >= 1"));
        }
        Ok(())
    }
}

/// Per-parameter running mean square for RMSProp.
#[derive(Debug, Clone, Default)]
pub struct OptimizerState {
    s: BTreeMap<String, Vec<f64>>,
}

impl OptimizerState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn slot(&mut self, name: &str, len: usize) -> &mut Vec<f64> {
        self.s
            .entry(name.to_string())
            .or_insert_with(|| vec![0.0; len])
    }
}

/// One RMSProp update: s <- 0.9 s + 0.1 g^2; theta <- theta - lr g / (sqrt(s) + 1e-8).
pub fn rmsprop_step(
    param: &mut Tensor,
    grad: &Tensor,
    state: &mut Vec<f64>,
    lr: f64,
) -> Result<()> {
    if param.shape() != grad.shape() {
        return Err(Error::shape(param.shape(), grad.shape(), "rmsprop"));
    }
    if !grad.all_finite() {
        return Err(Error::NonFinite("rmsprop gradient".into()));
    }
    for ((p, &g), s) in param
        .data_mut()
        .iter_mut()
        .zip(grad.data())
        .zip(state.iter_mut())
    {
        *s = RMSPROP_DECAY * *s + (1.0 - RMSPROP_DECAY) * g * g;
        *p -= lr * g / (s.sqrt() + RMSPROP_EPS);
    }
    Ok(())
}

/// Wasserstein losses from critic scores: loss_D = mean(D(F)) - mean(D(R)),
/// loss_G = -mean(D(F)).
pub fn wgan_losses(d_real: &[f64], d_fake: &[f64]) -> Result<(f64, f64)> {
    if d_real.is_empty() || d_fake.is_empty() {
        return Err(Error::invalid("wgan losses need non-empty batches"));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (mr, mf) = (mean(d_real), mean(d_fake));
    if !mr.is_finite() || !mf.is_finite() {
        return Err(Error::NonFinite("critic scores".into()));
    }
    Ok((mf - mr, -mf))
}

#[derive(Debug, Clone)]
pub struct TrainRecord {
    pub iteration: usize,
    pub loss_d: f64,
    pub loss_g: f64,
    pub max_sigma: f64,
    pub millis: u64,
    pub clipped: bool,
}

#[derive(Debug, Clone, Default)]
pub struct TrainLog {
    pub records: Vec<TrainRecord>,
}

impl TrainLog {
    /// CSV with columns iter, loss_d, loss_g, max_sigma, millis.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iter,loss_d,loss_g,max_sigma,millis\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.iteration, r.loss_d, r.loss_g, r.max_sigma, r.millis
            ));
        }
        out
    }

    pub fn clip_iterations(&self) -> Vec<usize> {
        self.records
            .iter()
            .filter(|r| r.clipped)
            .map(|r| r.iteration)
            .collect()
    }
}

fn is_critic_param(name: &str) -> bool {
    name.starts_with("d.")
}

fn is_generator_param(name: &str) -> bool {
    name.starts_with("g0.") || name.starts_with("g1.") || name.starts_with("e.")
}

fn assemble_batch(
    samples: &[&Sample],
    indices: &[usize],
    normalize_scale: f64,
) -> (Tensor, Tensor) {
    let first = samples[indices[0]];
    let (d, h, w) = (first.volume.depth, first.volume.height, first.volume.width);
    let b = indices.len();
    let mut imgs = Vec::with_capacity(b * d * h * w);
    let mut masks = Vec::with_capacity(b * d * h * w);
    for &i in indices {
        imgs.extend(
            samples[i]
                .volume
                .data
                .iter()
                .map(|&v| 2.0 * (v / normalize_scale) - 1.0),
        );
        masks.extend_from_slice(&samples[i].mask.data);
    }
    (
        Tensor::from_vec(&[b, 1, d, h, w], imgs).expect("batch layout"),
        Tensor::from_vec(&[b, 1, d, h, w], masks).expect("batch layout"),
    )
}

/// Largest spectral norm over the critic's weight matrices.
pub fn max_critic_sigma(params: &ModelParams) -> Result<f64> {
    let mut max = 0.0f64;
    for (name, t) in params.iter() {
        if is_critic_param(name) && t.rank() >= 2 {
            max = max.max(spectral_norm(t)?);
        }
    }
    Ok(max)
}

/// Clip every eligible (rank >= 2) weight of the critic, or of all networks
/// when configured. Rank-1 parameters (biases, norm scales) are exempt.
pub fn apply_svc(params: &mut ModelParams, policy: &ClipPolicy, all_networks: bool) -> Result<()> {
    let names: Vec<String> = params
        .names()
        .filter(|n| {
            (is_critic_param(n) || (all_networks && is_generator_param(n)))
                && params.get(n).map(|t| t.rank() >= 2).unwrap_or(false)
        })
        .cloned()
        .collect();
    for name in names {
        let clipped = clip_singular_values(params.get(&name)?, policy)?;
        params.set(&name, clipped);
    }
    Ok(())
}

/// Callback invoked at the checkpoint cadence and after the final iteration.
pub type CheckpointSink<'a> = &'a mut dyn FnMut(usize, &ModelParams) -> Result<()>;

pub fn train(
    data: &Dataset,
    gan_cfg: &GanConfig,
    cfg: &TrainConfig,
    mut checkpoint: Option<CheckpointSink<'_>>,
) -> Result<(ModelParams, TrainLog)> {
    cfg.validate()?;
    gan_cfg.validate()?;
    let train_samples: Vec<&Sample> = data.train().collect();
    if train_samples.is_empty() {
        return Err(Error::invalid("training dataset is empty"));
    }
    for s in &train_samples {
        if s.volume.depth != gan_cfg.shape.depth
            || s.volume.height != gan_cfg.shape.height
            || s.volume.width != gan_cfg.shape.width
        {
            return Err(Error::shape(
                &[gan_cfg.shape.depth, gan_cfg.shape.height, gan_cfg.shape.width],
                &[s.volume.depth, s.volume.height, s.volume.width],
                "training sample",
            ));
        }
    }

    let mut prng = Prng::new(cfg.seed);
    let mut params = init_params(gan_cfg, &mut prng)?;
    // dataset-wide intensity scale: mean of per-volume maxima
    let scale = {
        let s: f64 = train_samples.iter().map(|s| s.volume.max_value()).sum();
        let s = s / train_samples.len() as f64;
        if s > 0.0 {
            s
        } else {
            1.0
        }
    };
    params.insert(NORM_SCALE_PARAM, Tensor::from_vec(&[1], vec![scale])?)?;

    let mut opt = OptimizerState::new();
    let policy = ClipPolicy {
        max_singular_value: 1.0,
        period_iterations: cfg.svc_period,
    };
    let mut log = TrainLog::default();
    let start = Instant::now();

    for iteration in 1..=cfg.iterations {
        let mut loss_d_last = 0.0;
        for _ in 0..cfg.critic_steps_per_gen_step {
            loss_d_last = critic_step(&train_samples, &mut params, gan_cfg, cfg, &mut prng, &mut opt, scale)?;
        }
        let loss_g = generator_step(&train_samples, &mut params, gan_cfg, cfg, &mut prng, &mut opt, scale)?;

        if !loss_d_last.is_finite() || !loss_g.is_finite() {
            return Err(Error::NonFinite(format!(
                "loss at iteration {iteration} (d={loss_d_last}, g={loss_g})"
            )));
        }
        if !params.all_finite() {
            return Err(Error::NonFinite(format!(
                "parameters after iteration {iteration}"
            )));
        }

        let clipped = iteration % cfg.svc_period == 0;
        if clipped {
            apply_svc(&mut params, &policy, cfg.clip_all_networks)?;
        }
        let max_sigma = max_critic_sigma(&params)?;
        log.records.push(TrainRecord {
            iteration,
            loss_d: loss_d_last,
            loss_g,
            max_sigma,
            millis: start.elapsed().as_millis() as u64,
            clipped,
        });

        if let Some(sink) = checkpoint.as_mut() {
            let cadence_hit = cfg.checkpoint_every != 0 && iteration % cfg.checkpoint_every == 0;
            if cadence_hit || iteration == cfg.iterations {
                sink(iteration, &params)?;
            }
        }
    }
    Ok((params, log))
}

fn critic_step(
    samples: &[&Sample],
    params: &mut ModelParams,
    gan_cfg: &GanConfig,
    cfg: &TrainConfig,
    prng: &mut Prng,
    opt: &mut OptimizerState,
    scale: f64,
) -> Result<f64> {
    let indices: Vec<usize> = (0..cfg.batch_size).map(|_| prng.below(samples.len())).collect();
    let (real, masks) = assemble_batch(samples, &indices, scale);
    let z0 = Tensor::randn(prng, &[cfg.batch_size, gan_cfg.k0]);

    let mut tape = Tape::new();
    let vars = bind_params(&mut tape, params, true);
    let real_v = tape.leaf(real, false);
    let masks_v = if gan_cfg.conditional {
        Some(tape.leaf(masks, false))
    } else {
        None
    };
    let z0_v = tape.leaf(z0, false);
    let fake = generator_graph(&mut tape, &vars, gan_cfg, z0_v, masks_v)?;
    let real_in = critic_input(&mut tape, gan_cfg, real_v, masks_v, cfg.omega)?;
    let fake_in = critic_input(&mut tape, gan_cfg, fake, masks_v, cfg.omega)?;
    let d_real = critic_graph(&mut tape, &vars, gan_cfg, real_in)?;
    let d_fake = critic_graph(&mut tape, &vars, gan_cfg, fake_in)?;
    let mr = tape.mean(d_real);
    let mf = tape.mean(d_fake);
    let loss = tape.sub(mf, mr)?;
    let loss_val = tape.value(loss).item();
    let grads = tape.backward(loss)?;
    for (name, var) in vars.var_names() {
        if !is_critic_param(name) {
            continue;
        }
        if let Some(g) = grads.get(var) {
            let mut p = params.get(name)?.clone();
            let slot = opt.slot(name, p.len());
            rmsprop_step(&mut p, g, slot, cfg.learning_rate)?;
            params.set(name, p);
        }
    }
    Ok(loss_val)
}

fn generator_step(
    samples: &[&Sample],
    params: &mut ModelParams,
    gan_cfg: &GanConfig,
    cfg: &TrainConfig,
    prng: &mut Prng,
    opt: &mut OptimizerState,
    scale: f64,
) -> Result<f64> {
    let indices: Vec<usize> = (0..cfg.batch_size).map(|_| prng.below(samples.len())).collect();
    let (_, masks) = assemble_batch(samples, &indices, scale);
    let z0 = Tensor::randn(prng, &[cfg.batch_size, gan_cfg.k0]);

    let mut tape = Tape::new();
    let vars = bind_params(&mut tape, params, true);
    let masks_v = if gan_cfg.conditional {
        Some(tape.leaf(masks, false))
    } else {
        None
    };
    let z0_v = tape.leaf(z0, false);
    let fake = generator_graph(&mut tape, &vars, gan_cfg, z0_v, masks_v)?;
    let fake_in = critic_input(&mut tape, gan_cfg, fake, masks_v, cfg.omega)?;
    let d_fake = critic_graph(&mut tape, &vars, gan_cfg, fake_in)?;
    let mf = tape.mean(d_fake);
    let neg = tape.scalar(-1.0);
    let loss = tape.mul(mf, neg)?;
    let loss_val = tape.value(loss).item();
    let grads = tape.backward(loss)?;
    for (name, var) in vars.var_names() {
        if !is_generator_param(name) {
            continue;
        }
        if let Some(g) = grads.get(var) {
            let mut p = params.get(name)?.clone();
            let slot = opt.slot(name, p.len());
            rmsprop_step(&mut p, g, slot, cfg.learning_rate)?;
            params.set(name, p);
        }
    }
    Ok(loss_val)
}
