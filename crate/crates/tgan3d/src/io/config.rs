//! Flat key=value run configuration covering every tunable of the training,
//! segmentation and statistics pipelines plus paths and the master seed.
//!
//! Unknown keys are errors so typos fail loudly. Relative paths are resolved
//! against the directory containing the config file.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::seg::SegConfig;
use crate::stats::StatsConfig;
use crate::tgan::GanConfig;
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Master seed for dataset generation.
    pub seed: u64,
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    pub checkpoint: Option<PathBuf>,
    pub gan: GanConfig,
    pub train: TrainConfig,
    pub seg: SegConfig,
    pub stats: StatsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            data_dir: PathBuf::from("data"),
            out_dir: PathBuf::from("out"),
            checkpoint: None,
            gan: GanConfig::desk(false),
            train: TrainConfig::default(),
            seg: SegConfig::default(),
            stats: StatsConfig::default(),
        }
    }
}

fn parse_scalar<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("cannot parse value {value:?} for key {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::Config(format!(
            "key {key} expects true or false, got {value:?}"
        ))),
    }
}

fn resolve(base: &Path, value: &str) -> PathBuf {
    let p = PathBuf::from(value);
    if p.is_absolute() {
        p
    } else {
        base.join(p)
    }
}

pub fn parse_run_config(text: &str, base: &Path) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("line {}: expected key=value, got {raw:?}", lineno + 1))
        })?;
        let (key, value) = (key.trim(), value.trim().trim_matches('"'));
        match key {
            "seed" => cfg.seed = parse_scalar(key, value)?,
            "paths.data_dir" => cfg.data_dir = resolve(base, value),
            "paths.out_dir" => cfg.out_dir = resolve(base, value),
            "paths.checkpoint" => cfg.checkpoint = Some(resolve(base, value)),
            "gan.k0" => cfg.gan.k0 = parse_scalar(key, value)?,
            "gan.k1" => cfg.gan.k1 = parse_scalar(key, value)?,
            "gan.km" => cfg.gan.km = parse_scalar(key, value)?,
            "gan.base_channels" => cfg.gan.base_channels = parse_scalar(key, value)?,
            "gan.depth" => cfg.gan.shape.depth = parse_scalar(key, value)?,
            "gan.height" => cfg.gan.shape.height = parse_scalar(key, value)?,
            "gan.width" => cfg.gan.shape.width = parse_scalar(key, value)?,
            "gan.omega" => cfg.gan.omega = parse_scalar(key, value)?,
            "gan.conditional" => cfg.gan.conditional = parse_bool(key, value)?,
            "train.learning_rate" => cfg.train.learning_rate = parse_scalar(key, value)?,
            "train.batch_size" => cfg.train.batch_size = parse_scalar(key, value)?,
            "train.iterations" => cfg.train.iterations = parse_scalar(key, value)?,
            "train.critic_steps_per_gen_step" => {
                cfg.train.critic_steps_per_gen_step = parse_scalar(key, value)?
            }
            "train.svc_period" => cfg.train.svc_period = parse_scalar(key, value)?,
            "train.omega" => cfg.train.omega = parse_scalar(key, value)?,
            "train.seed" => cfg.train.seed = parse_scalar(key, value)?,
            "train.clip_all_networks" => cfg.train.clip_all_networks = parse_bool(key, value)?,
            "train.checkpoint_every" => cfg.train.checkpoint_every = parse_scalar(key, value)?,
            "seg.depth" => cfg.seg.depth = parse_scalar(key, value)?,
            "seg.base_channels" => cfg.seg.base_channels = parse_scalar(key, value)?,
            "seg.se_reduction" => cfg.seg.se_reduction = parse_scalar(key, value)?,
            "seg.threshold" => cfg.seg.threshold = parse_scalar(key, value)?,
            "seg.epochs" => cfg.seg.epochs = parse_scalar(key, value)?,
            "seg.batch_size" => cfg.seg.batch_size = parse_scalar(key, value)?,
            "seg.learning_rate" => cfg.seg.learning_rate = parse_scalar(key, value)?,
            "seg.seed" => cfg.seg.seed = parse_scalar(key, value)?,
            "stats.alpha" => cfg.stats.alpha = parse_scalar(key, value)?,
            "stats.glcm_bins" => cfg.stats.glcm_bins = parse_scalar(key, value)?,
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
    }
    // default paths are relative; anchor them too so a reparse from any
    // directory yields the same config
    if !cfg.data_dir.is_absolute() {
        cfg.data_dir = base.join(&cfg.data_dir);
    }
    if !cfg.out_dir.is_absolute() {
        cfg.out_dir = base.join(&cfg.out_dir);
    }
    Ok(cfg)
}

pub fn serialize_run_config(cfg: &RunConfig) -> String {
    let mut s = String::new();
    let w = &mut s;
    let _ = writeln!(w, "seed = {}", cfg.seed);
    let _ = writeln!(w, "paths.data_dir = \"{}\"", cfg.data_dir.display());
    let _ = writeln!(w, "paths.out_dir = \"{}\"", cfg.out_dir.display());
    if let Some(c) = &cfg.checkpoint {
        let _ = writeln!(w, "paths.checkpoint = \"{}\"", c.display());
    }
    let _ = writeln!(w, "gan.k0 = {}", cfg.gan.k0);
    let _ = writeln!(w, "gan.k1 = {}", cfg.gan.k1);
    let _ = writeln!(w, "gan.km = {}", cfg.gan.km);
    let _ = writeln!(w, "gan.base_channels = {}", cfg.gan.base_channels);
    let _ = writeln!(w, "gan.depth = {}", cfg.gan.shape.depth);
    let _ = writeln!(w, "gan.height = {}", cfg.gan.shape.height);
    let _ = writeln!(w, "gan.width = {}", cfg.gan.shape.width);
    let _ = writeln!(w, "gan.omega = {}", cfg.gan.omega);
    let _ = writeln!(w, "gan.conditional = {}", cfg.gan.conditional);
    let _ = writeln!(w, "train.learning_rate = {}", cfg.train.learning_rate);
    let _ = writeln!(w, "train.batch_size = {}", cfg.train.batch_size);
    let _ = writeln!(w, "train.iterations = {}", cfg.train.iterations);
    let _ = writeln!(
        w,
        "train.critic_steps_per_gen_step = {}",
        cfg.train.critic_steps_per_gen_step
    );
    let _ = writeln!(w, "train.svc_period = {}", cfg.train.svc_period);
    let _ = writeln!(w, "train.omega = {}", cfg.train.omega);
    let _ = writeln!(w, "train.seed = {}", cfg.train.seed);
    let _ = writeln!(w, "train.clip_all_networks = {}", cfg.train.clip_all_networks);
    let _ = writeln!(w, "train.checkpoint_every = {}", cfg.train.checkpoint_every);
    let _ = writeln!(w, "seg.depth = {}", cfg.seg.depth);
    let _ = writeln!(w, "seg.base_channels = {}", cfg.seg.base_channels);
    let _ = writeln!(w, "seg.se_reduction = {}", cfg.seg.se_reduction);
    let _ = writeln!(w, "seg.threshold = {}", cfg.seg.threshold);
    let _ = writeln!(w, "seg.epochs = {}", cfg.seg.epochs);
    let _ = writeln!(w, "seg.batch_size = {}", cfg.seg.batch_size);
    let _ = writeln!(w, "seg.learning_rate = {}", cfg.seg.learning_rate);
    let _ = writeln!(w, "seg.seed = {}", cfg.seg.seed);
    let _ = writeln!(w, "stats.alpha = {}", cfg.stats.alpha);
    let _ = writeln!(w, "stats.glcm_bins = {}", cfg.stats.glcm_bins);
    s
}

pub fn load_run_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_run_config(&text, base)
}
