//! End-to-end experiment drivers shared by the CLI binary and the
//! integration tests: dataset emission, GAN and segmenter training,
//! generation, evaluation, the cross-center augmentation study and slice
//! export. Every driver is a plain function so tests can call it in-process.
//!
//! Checkpoints written here carry their architecture configuration as extra
//! `meta.cfg.*` single-value tensors, so `generate` and `segment` need no
//! separate config file.

use std::fs;
use std::path::{Path, PathBuf};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::io::ckpt::{read_ckpt, write_ckpt};
use crate::io::pgm::write_mosaic_pgm;
use crate::io::vol1::{read_vol1, write_vol1, Vol1Dtype};
use crate::phantom::{
    build_dataset, default_center_profiles, CenterId, Dataset, PhantomSpec, Sample, Split,
    SplitRule,
};
use crate::prng::Prng;
use crate::radiomics::{extract_features, FeatureVector, FEATURE_NAMES};
use crate::seg::{segment, train_seg, train_seg_with, SegConfig};
use crate::stats::{table1_report, StatsConfig, StatsReport};
use crate::tgan::{generate_volume, init_params, GanConfig, ModelParams, VolumeShape};
use crate::trainer::{train, TrainConfig, NORM_SCALE_PARAM};
use crate::volume::Volume;

// --- checkpoint-embedded configuration ---

fn meta_scalar(params: &mut ModelParams, name: &str, v: f64) -> Result<()> {
    params.set(name, Tensor::from_vec(&[1], vec![v])?);
    Ok(())
}

fn meta_value(params: &ModelParams, name: &str) -> Result<f64> {
    Ok(params.get(name)?.data()[0])
}

/// Record the generator architecture inside a checkpoint.
pub fn embed_gan_config(params: &mut ModelParams, cfg: &GanConfig) -> Result<()> {
    meta_scalar(params, "meta.cfg.gan.k0", cfg.k0 as f64)?;
    meta_scalar(params, "meta.cfg.gan.k1", cfg.k1 as f64)?;
    meta_scalar(params, "meta.cfg.gan.km", cfg.km as f64)?;
    meta_scalar(params, "meta.cfg.gan.base_channels", cfg.base_channels as f64)?;
    meta_scalar(params, "meta.cfg.gan.depth", cfg.shape.depth as f64)?;
    meta_scalar(params, "meta.cfg.gan.height", cfg.shape.height as f64)?;
    meta_scalar(params, "meta.cfg.gan.width", cfg.shape.width as f64)?;
    meta_scalar(params, "meta.cfg.gan.omega", cfg.omega)?;
    meta_scalar(
        params,
        "meta.cfg.gan.conditional",
        if cfg.conditional { 1.0 } else { 0.0 },
    )
}

pub fn extract_gan_config(params: &ModelParams) -> Result<GanConfig> {
    Ok(GanConfig {
        k0: meta_value(params, "meta.cfg.gan.k0")? as usize,
        k1: meta_value(params, "meta.cfg.gan.k1")? as usize,
        km: meta_value(params, "meta.cfg.gan.km")? as usize,
        base_channels: meta_value(params, "meta.cfg.gan.base_channels")? as usize,
        shape: VolumeShape {
            depth: meta_value(params, "meta.cfg.gan.depth")? as usize,
            height: meta_value(params, "meta.cfg.gan.height")? as usize,
            width: meta_value(params, "meta.cfg.gan.width")? as usize,
        },
        omega: meta_value(params, "meta.cfg.gan.omega")?,
        conditional: meta_value(params, "meta.cfg.gan.conditional")? != 0.0,
    })
}

pub fn embed_seg_config(params: &mut ModelParams, cfg: &SegConfig) -> Result<()> {
    meta_scalar(params, "meta.cfg.seg.depth", cfg.depth as f64)?;
    meta_scalar(params, "meta.cfg.seg.base_channels", cfg.base_channels as f64)?;
    meta_scalar(params, "meta.cfg.seg.se_reduction", cfg.se_reduction as f64)?;
    meta_scalar(params, "meta.cfg.seg.threshold", cfg.threshold)?;
    meta_scalar(params, "meta.cfg.seg.epochs", cfg.epochs as f64)?;
    meta_scalar(params, "meta.cfg.seg.batch_size", cfg.batch_size as f64)?;
    meta_scalar(params, "meta.cfg.seg.learning_rate", cfg.learning_rate)?;
    meta_scalar(params, "meta.cfg.seg.seed", cfg.seed as f64)
}

pub fn extract_seg_config(params: &ModelParams) -> Result<SegConfig> {
    Ok(SegConfig {
        depth: meta_value(params, "meta.cfg.seg.depth")? as usize,
        base_channels: meta_value(params, "meta.cfg.seg.base_channels")? as usize,
        se_reduction: meta_value(params, "meta.cfg.seg.se_reduction")? as usize,
        threshold: meta_value(params, "meta.cfg.seg.threshold")?,
        epochs: meta_value(params, "meta.cfg.seg.epochs")? as usize,
        batch_size: meta_value(params, "meta.cfg.seg.batch_size")? as usize,
        learning_rate: meta_value(params, "meta.cfg.seg.learning_rate")?,
        seed: meta_value(params, "meta.cfg.seg.seed")? as u64,
    })
}

// --- dataset directories with a manifest ---

/// A dataset on disk keeps its per-sample ids so reports can name cases.
#[derive(Debug, Clone, Default)]
pub struct LoadedDataset {
    pub data: Dataset,
    pub ids: Vec<String>,
}

fn split_str(s: Split) -> &'static str {
    match s {
        Split::Train => "train",
        Split::Test => "test",
    }
}

fn split_of(s: &str) -> Result<Split> {
    match s {
        "train" => Ok(Split::Train),
        "test" => Ok(Split::Test),
        other => Err(Error::invalid(format!("unknown split {other:?}"))),
    }
}

/// Write volumes, masks and a manifest CSV
/// (columns: id, center, split, volume_path, mask_path) under `dir`.
pub fn write_dataset(dir: &Path, data: &Dataset) -> Result<()> {
    fs::create_dir_all(dir.join("volumes"))?;
    fs::create_dir_all(dir.join("masks"))?;
    let mut manifest = String::from("id,center,split,volume_path,mask_path\n");
    let mut per_center = std::collections::BTreeMap::new();
    for s in &data.samples {
        let c = s.center.as_char();
        let n = per_center.entry(c).or_insert(0usize);
        let id = format!("{c}{n:03}");
        *n += 1;
        let vol_rel = format!("volumes/{id}.vol1");
        let mask_rel = format!("masks/{id}.vol1");
        write_vol1(&dir.join(&vol_rel), &s.volume, Vol1Dtype::F32)?;
        write_vol1(&dir.join(&mask_rel), &s.mask, Vol1Dtype::MaskU8)?;
        manifest.push_str(&format!(
            "{id},{c},{},{vol_rel},{mask_rel}\n",
            split_str(s.split)
        ));
    }
    fs::write(dir.join("manifest.csv"), manifest)?;
    Ok(())
}

pub fn read_dataset(dir: &Path) -> Result<LoadedDataset> {
    let manifest = dir.join("manifest.csv");
    let text = fs::read_to_string(&manifest)
        .map_err(|e| Error::format(&manifest, format!("cannot read manifest: {e}")))?;
    let mut out = LoadedDataset::default();
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            if line != "id,center,split,volume_path,mask_path" {
                return Err(Error::format(&manifest, "unexpected manifest header"));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(Error::format(&manifest, format!("bad row {}", i + 1)));
        }
        let center = CenterId::from_char(f[1].chars().next().unwrap_or('?'))?;
        let (volume, _) = read_vol1(&dir.join(f[3]))?;
        let (mask, dtype) = read_vol1(&dir.join(f[4]))?;
        if dtype != Vol1Dtype::MaskU8 {
            return Err(Error::format(&manifest, format!("{} is not a mask", f[4])));
        }
        out.ids.push(f[0].to_string());
        out.data.samples.push(Sample {
            volume,
            mask,
            center,
            split: split_of(f[2])?,
        });
    }
    Ok(out)
}

// --- commands ---

/// Generate a multi-center phantom dataset and write it with a manifest.
pub fn cmd_phantom(
    out_dir: &Path,
    per_center: usize,
    shape: (usize, usize, usize),
    seed: u64,
    withhold: usize,
    noiseless: bool,
) -> Result<()> {
    let (d, h, w) = shape;
    let spec = if noiseless {
        PhantomSpec::noiseless(d, h, w)
    } else {
        PhantomSpec::desk(d, h, w)
    };
    let data = build_dataset(
        per_center,
        &default_center_profiles(),
        &spec,
        seed,
        SplitRule::WithholdCount(withhold),
    )?;
    write_dataset(out_dir, &data)
}

fn write_final_ckpt(path: &Path, params: &ModelParams, gan: &GanConfig) -> Result<()> {
    let mut with_meta = params.clone();
    embed_gan_config(&mut with_meta, gan)?;
    write_ckpt(path, &with_meta)
}

/// Train the (optionally conditional) temporal GAN on a dataset directory.
/// Writes `model.ckpt`, `train_log.csv` and periodic `ckpt_NNNNNN.ckpt`.
pub fn cmd_train_gan(
    data_dir: &Path,
    out_dir: &Path,
    mut gan: GanConfig,
    cfg: &TrainConfig,
) -> Result<()> {
    let loaded = read_dataset(data_dir)?;
    let first = loaded
        .data
        .samples
        .first()
        .ok_or_else(|| Error::invalid("dataset is empty"))?;
    gan.shape = VolumeShape {
        depth: first.volume.depth,
        height: first.volume.height,
        width: first.volume.width,
    };
    gan.validate()?;
    fs::create_dir_all(out_dir)?;
    let gan_for_sink = gan.clone();
    let out_for_sink = out_dir.to_path_buf();
    let mut sink = |iter: usize, p: &ModelParams| -> Result<()> {
        write_final_ckpt(
            &out_for_sink.join(format!("ckpt_{iter:06}.ckpt")),
            p,
            &gan_for_sink,
        )
    };
    let sink_opt = if cfg.checkpoint_every > 0 {
        Some(&mut sink as crate::trainer::CheckpointSink<'_>)
    } else {
        None
    };
    let (params, log) = train(&loaded.data, &gan, cfg, sink_opt)?;
    write_final_ckpt(&out_dir.join("model.ckpt"), &params, &gan)?;
    fs::write(out_dir.join("train_log.csv"), log.to_csv())?;
    Ok(())
}

/// Map a generator output in [-1, 1] back to intensity units using the
/// normalization scale stored at training time.
fn denormalize(vol: &Volume, scale: f64) -> Volume {
    let mut out = vol.clone();
    for v in out.data.iter_mut() {
        *v = ((*v + 1.0) * 0.5 * scale).max(0.0);
    }
    out
}

/// Generate synthetic volumes from a checkpoint. Unconditional mode draws
/// `count` volumes from fresh latents; conditional mode produces one volume
/// per mask in `mask_dir`'s manifest.
pub fn cmd_generate(
    checkpoint: &Path,
    out_dir: &Path,
    count: usize,
    mask_dir: Option<&Path>,
    seed: u64,
) -> Result<()> {
    let params = read_ckpt(checkpoint)?;
    let gan = extract_gan_config(&params)?;
    let scale = meta_value(&params, NORM_SCALE_PARAM)?;
    let mut prng = Prng::new(seed);
    let mut out = Dataset::default();
    if gan.conditional {
        let mask_dir =
            mask_dir.ok_or_else(|| Error::invalid("conditional generation needs --masks"))?;
        let loaded = read_dataset(mask_dir)?;
        for s in &loaded.data.samples {
            let vol = generate_volume(&params, &gan, &mut prng, Some(&s.mask))?;
            out.samples.push(Sample {
                volume: denormalize(&vol, scale),
                mask: s.mask.clone(),
                center: s.center,
                split: s.split,
            });
        }
    } else {
        if count == 0 {
            return Err(Error::invalid("count must be >= 1"));
        }
        for _ in 0..count {
            let vol = generate_volume(&params, &gan, &mut prng, None)?;
            // unconditional output has no paired lesion mask; store an empty one
            let mask = Volume::zeros(
                vol.depth,
                vol.height,
                vol.width,
                vol.voxel_size_mm,
            );
            out.samples.push(Sample {
                volume: denormalize(&vol, scale),
                mask,
                center: CenterId::A,
                split: Split::Test,
            });
        }
    }
    write_dataset(out_dir, &out)
}

/// Train the segmenter on a dataset directory. Writes `seg.ckpt`,
/// `seg_log.csv` (per-iteration loss) and `seg_dice.csv` (per-epoch Dice).
pub fn cmd_train_seg(data_dir: &Path, out_dir: &Path, cfg: &SegConfig) -> Result<()> {
    let loaded = read_dataset(data_dir)?;
    let (params, log) = train_seg(&loaded.data, cfg)?;
    fs::create_dir_all(out_dir)?;
    let mut with_meta = params.clone();
    embed_seg_config(&mut with_meta, cfg)?;
    write_ckpt(&out_dir.join("seg.ckpt"), &with_meta)?;
    fs::write(out_dir.join("seg_log.csv"), log.to_csv())?;
    let mut dice_csv = String::from("epoch,train_dice\n");
    for (i, d) in log.epoch_dice.iter().enumerate() {
        dice_csv.push_str(&format!("{},{d}\n", i + 1));
    }
    fs::write(out_dir.join("seg_dice.csv"), dice_csv)?;
    Ok(())
}

/// Segment one VOL1 volume; writes the binary mask and returns Dice against
/// the optional ground truth.
pub fn cmd_segment(
    checkpoint: &Path,
    volume_path: &Path,
    out_path: &Path,
    truth_path: Option<&Path>,
) -> Result<Option<f64>> {
    let params = read_ckpt(checkpoint)?;
    let cfg = extract_seg_config(&params)?;
    let (pet, _) = read_vol1(volume_path)?;
    let truth = match truth_path {
        Some(p) => Some(read_vol1(p)?.0),
        None => None,
    };
    let r = segment(&params, &cfg, &pet, truth.as_ref())?;
    write_vol1(out_path, &r.binary, Vol1Dtype::MaskU8)?;
    Ok(r.dice)
}

/// One evaluated case: Dice vs truth and, when the predicted lesion is
/// non-empty, its radiomic features.
#[derive(Debug, Clone)]
pub struct CaseResult {
    pub id: String,
    pub dice: f64,
    pub features: Option<FeatureVector>,
}

#[derive(Debug)]
pub struct EvaluateSummary {
    pub real: Vec<CaseResult>,
    pub synthetic: Vec<CaseResult>,
    pub mean_dice_real: f64,
    pub mean_dice_syn: f64,
    pub report: StatsReport,
}

fn evaluate_set(
    loaded: &LoadedDataset,
    params: &ModelParams,
    cfg: &SegConfig,
    stats_cfg: &StatsConfig,
) -> Result<Vec<CaseResult>> {
    let mut out = Vec::new();
    for (s, id) in loaded.data.samples.iter().zip(&loaded.ids) {
        let r = segment(params, cfg, &s.volume, Some(&s.mask))?;
        let features = if r.binary.count_nonzero() > 0 {
            Some(extract_features(&s.volume, &r.binary, stats_cfg)?)
        } else {
            None
        };
        out.push(CaseResult {
            id: id.clone(),
            dice: r.dice.expect("truth given"),
            features,
        });
    }
    Ok(out)
}

fn mean_dice(cases: &[CaseResult]) -> f64 {
    if cases.is_empty() {
        return 0.0;
    }
    cases.iter().map(|c| c.dice).sum::<f64>() / cases.len() as f64
}

fn feature_csv(real: &[CaseResult], syn: &[CaseResult]) -> String {
    let mut out = format!("id,source,{}\n", FEATURE_NAMES.join(","));
    for (source, cases) in [("real", real), ("synthetic", syn)] {
        for c in cases {
            if let Some(f) = &c.features {
                let row: Vec<String> = f.as_array().iter().map(|v| v.to_string()).collect();
                out.push_str(&format!("{},{source},{}\n", c.id, row.join(",")));
            }
        }
    }
    out
}

/// 20 equal bins over [0, 1]; Dice 1.0 falls in the top bin.
pub fn dice_histogram_csv(real: &[f64], syn: &[f64]) -> String {
    let mut counts = [[0usize; 20]; 2];
    for (k, set) in [real, syn].iter().enumerate() {
        for &d in set.iter() {
            let bin = ((d * 20.0).floor() as usize).min(19);
            counts[k][bin] += 1;
        }
    }
    let mut out = String::from("bin_lo,bin_hi,real_count,synthetic_count\n");
    for b in 0..20 {
        out.push_str(&format!(
            "{},{},{},{}\n",
            b as f64 / 20.0,
            (b + 1) as f64 / 20.0,
            counts[0][b],
            counts[1][b]
        ));
    }
    out
}

/// Full fidelity/utility evaluation of a synthetic set against a real set:
/// segments both with the given segmenter, then emits `features.csv`,
/// `stats.csv`, `stats.txt`, `dice_histogram.csv` and `dice_summary.csv`.
pub fn cmd_evaluate(
    real_dir: &Path,
    syn_dir: &Path,
    seg_checkpoint: &Path,
    out_dir: &Path,
    stats_cfg: &StatsConfig,
) -> Result<EvaluateSummary> {
    let params = read_ckpt(seg_checkpoint)?;
    let cfg = extract_seg_config(&params)?;
    let real_set = read_dataset(real_dir)?;
    let syn_set = read_dataset(syn_dir)?;
    let real = evaluate_set(&real_set, &params, &cfg, stats_cfg)?;
    let syn = evaluate_set(&syn_set, &params, &cfg, stats_cfg)?;

    let real_fv: Vec<FeatureVector> = real.iter().filter_map(|c| c.features.clone()).collect();
    let syn_fv: Vec<FeatureVector> = syn.iter().filter_map(|c| c.features.clone()).collect();
    let report = table1_report(&real_fv, &syn_fv, stats_cfg)?;

    fs::create_dir_all(out_dir)?;
    fs::write(out_dir.join("features.csv"), feature_csv(&real, &syn))?;
    fs::write(out_dir.join("stats.csv"), report.to_csv())?;
    fs::write(out_dir.join("stats.txt"), report.to_text())?;
    let real_dice: Vec<f64> = real.iter().map(|c| c.dice).collect();
    let syn_dice: Vec<f64> = syn.iter().map(|c| c.dice).collect();
    fs::write(
        out_dir.join("dice_histogram.csv"),
        dice_histogram_csv(&real_dice, &syn_dice),
    )?;
    let summary = EvaluateSummary {
        mean_dice_real: mean_dice(&real),
        mean_dice_syn: mean_dice(&syn),
        real,
        synthetic: syn,
        report,
    };
    let mut s = String::from("set,cases,mean_dice,empty_segmentations\n");
    for (name, cases, m) in [
        ("real", &summary.real, summary.mean_dice_real),
        ("synthetic", &summary.synthetic, summary.mean_dice_syn),
    ] {
        let empty = cases.iter().filter(|c| c.features.is_none()).count();
        s.push_str(&format!("{name},{},{m},{empty}\n", cases.len()));
    }
    fs::write(out_dir.join("dice_summary.csv"), s)?;
    Ok(summary)
}

/// Cross-center augmentation study: trains the segmenter on center-A real
/// data alone and on center-A real data plus `k` synthetic volumes, then
/// tracks Dice on an in-center and an out-of-center validation set at fixed
/// epoch checkpoints. Returns the curve CSV
/// (columns: iter, condition, validation_set, dice).
pub fn cmd_augment_experiment(
    data_dir: &Path,
    gan_checkpoint: Option<&Path>,
    k: usize,
    cfg: &SegConfig,
    eval_every: usize,
    out_csv: &Path,
) -> Result<String> {
    if eval_every == 0 {
        return Err(Error::invalid("eval_every must be >= 1"));
    }
    let loaded = read_dataset(data_dir)?;
    let mut centers: Vec<char> = loaded
        .data
        .samples
        .iter()
        .map(|s| s.center.as_char())
        .collect();
    centers.sort_unstable();
    centers.dedup();
    if centers.len() < 2 {
        return Err(Error::invalid("augmentation study needs >= 2 centers"));
    }

    let base: Vec<Sample> = loaded
        .data
        .samples
        .iter()
        .filter(|s| s.center == CenterId::A && s.split == Split::Train)
        .cloned()
        .collect();
    let in_center: Vec<Sample> = loaded
        .data
        .samples
        .iter()
        .filter(|s| s.center == CenterId::A && s.split == Split::Test)
        .cloned()
        .collect();
    let out_center: Vec<Sample> = loaded
        .data
        .samples
        .iter()
        .filter(|s| s.center != CenterId::A)
        .cloned()
        .collect();
    if base.is_empty() || in_center.is_empty() || out_center.is_empty() {
        return Err(Error::invalid(
            "need center-A train, center-A test and out-of-center samples",
        ));
    }

    let mut augmented = base.clone();
    if k > 0 {
        let ckpt = gan_checkpoint
            .ok_or_else(|| Error::invalid("k > 0 needs a generator checkpoint"))?;
        let params = read_ckpt(ckpt)?;
        let gan = extract_gan_config(&params)?;
        if !gan.conditional {
            return Err(Error::invalid("augmentation needs a conditional generator"));
        }
        let scale = meta_value(&params, NORM_SCALE_PARAM)?;
        let mut prng = Prng::new(cfg.seed ^ 0x9e3779b97f4a7c15);
        for i in 0..k {
            let mask = base[i % base.len()].mask.clone();
            let vol = generate_volume(&params, &gan, &mut prng, Some(&mask))?;
            augmented.push(Sample {
                volume: denormalize(&vol, scale),
                mask,
                center: CenterId::A,
                split: Split::Train,
            });
        }
    }

    let mut csv = String::from("iter,condition,validation_set,dice\n");
    for (condition, samples) in [("real", &base), ("augmented", &augmented)] {
        let data = Dataset {
            samples: samples.to_vec(),
        };
        let mut rows: Vec<(usize, &str, f64)> = Vec::new();
        let mut sink = |epoch: usize, params: &ModelParams| -> Result<()> {
            if epoch % eval_every != 0 && epoch != cfg.epochs {
                return Ok(());
            }
            for (set_name, set) in [("in_center", &in_center), ("out_of_center", &out_center)] {
                let mut sum = 0.0;
                for s in set.iter() {
                    let r = segment(params, cfg, &s.volume, Some(&s.mask))?;
                    sum += r.dice.expect("truth given");
                }
                rows.push((epoch, set_name, sum / set.len() as f64));
            }
            Ok(())
        };
        train_seg_with(&data, cfg, Some(&mut sink))?;
        for (epoch, set_name, d) in rows {
            csv.push_str(&format!("{epoch},{condition},{set_name},{d}\n"));
        }
    }
    if let Some(parent) = out_csv.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    fs::write(out_csv, &csv)?;
    Ok(csv)
}

/// Export a volume as a PGM slice mosaic with an optional mask contour and
/// an explicit window so different volumes share one intensity mapping.
pub fn cmd_export_slices(
    volume_path: &Path,
    mask_path: Option<&Path>,
    out_path: &Path,
    window: Option<(f64, f64)>,
) -> Result<()> {
    let (vol, _) = read_vol1(volume_path)?;
    let mask = match mask_path {
        Some(p) => Some(read_vol1(p)?.0),
        None => None,
    };
    write_mosaic_pgm(out_path, &vol, mask.as_ref(), window)
}

/// Fresh untrained GAN checkpoint; useful for smoke tests of the generate
/// path without a full training run.
pub fn init_gan_checkpoint(path: &Path, gan: &GanConfig, seed: u64) -> Result<()> {
    let mut params = init_params(gan, &mut Prng::new(seed))?;
    params.set(NORM_SCALE_PARAM, Tensor::from_vec(&[1], vec![1.0])?);
    embed_gan_config(&mut params, gan)?;
    write_ckpt(path, &params)
}

pub fn default_out_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn tiny_dataset() -> Dataset {
        let spec = PhantomSpec::desk(8, 16, 16);
        build_dataset(
            3,
            &default_center_profiles(),
            &spec,
            7,
            SplitRule::WithholdCount(1),
        )
        .unwrap()
    }

    #[test]
    fn dataset_round_trip_preserves_everything() {
        let dir = tempdir().unwrap();
        let data = tiny_dataset();
        write_dataset(dir.path(), &data).unwrap();
        let loaded = read_dataset(dir.path()).unwrap();
        assert_eq!(loaded.data.samples.len(), data.samples.len());
        assert_eq!(loaded.ids.len(), data.samples.len());
        for (a, b) in loaded.data.samples.iter().zip(&data.samples) {
            // volumes pass through f32 storage; masks are exact
            for (&x, &y) in a.volume.data.iter().zip(&b.volume.data) {
                assert_eq!(x, y as f32 as f64);
            }
            assert_eq!(a.mask.data, b.mask.data);
            assert_eq!(a.center, b.center);
            assert_eq!(a.split, b.split);
        }
        // ids are per-center counters
        assert!(loaded.ids.iter().any(|i| i == "A000"));
    }

    #[test]
    fn gan_config_survives_checkpoint_meta() {
        let gan = GanConfig::desk(true);
        let mut params = ModelParams::new();
        embed_gan_config(&mut params, &gan).unwrap();
        assert_eq!(extract_gan_config(&params).unwrap(), gan);
        let seg = SegConfig::desk(3);
        let mut params = ModelParams::new();
        embed_seg_config(&mut params, &seg).unwrap();
        assert_eq!(extract_seg_config(&params).unwrap(), seg);
    }

    #[test]
    fn generate_is_deterministic_and_counts_files() {
        let dir = tempdir().unwrap();
        let ckpt = dir.path().join("g.ckpt");
        init_gan_checkpoint(&ckpt, &GanConfig::desk(false), 3).unwrap();
        let out1 = dir.path().join("a");
        let out2 = dir.path().join("b");
        cmd_generate(&ckpt, &out1, 4, None, 11).unwrap();
        cmd_generate(&ckpt, &out2, 4, None, 11).unwrap();
        let l1 = read_dataset(&out1).unwrap();
        let l2 = read_dataset(&out2).unwrap();
        assert_eq!(l1.data.samples.len(), 4);
        for (a, b) in l1.data.samples.iter().zip(&l2.data.samples) {
            assert_eq!(a.volume.data, b.volume.data);
        }
        // all denormalized intensities are non-negative
        assert!(l1
            .data
            .samples
            .iter()
            .all(|s| s.volume.data.iter().all(|&v| v >= 0.0)));
    }

    #[test]
    fn conditional_generate_needs_masks() {
        let dir = tempdir().unwrap();
        let ckpt = dir.path().join("g.ckpt");
        init_gan_checkpoint(&ckpt, &GanConfig::desk(true), 3).unwrap();
        let err = cmd_generate(&ckpt, &dir.path().join("o"), 1, None, 1).unwrap_err();
        assert!(err.to_string().contains("--masks"));
    }

    #[test]
    fn conditional_generate_one_per_mask() {
        let dir = tempdir().unwrap();
        let data_dir = dir.path().join("data");
        write_dataset(&data_dir, &tiny_dataset()).unwrap();
        let ckpt = dir.path().join("g.ckpt");
        init_gan_checkpoint(&ckpt, &GanConfig::desk(true), 3).unwrap();
        let out = dir.path().join("syn");
        cmd_generate(&ckpt, &out, 0, Some(&data_dir), 5).unwrap();
        let loaded = read_dataset(&out).unwrap();
        assert_eq!(loaded.data.samples.len(), 12);
    }

    #[test]
    fn dice_histogram_shape_and_counts() {
        let csv = dice_histogram_csv(&[0.0, 0.5, 1.0, 0.999], &[0.049]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 21);
        assert_eq!(lines[0], "bin_lo,bin_hi,real_count,synthetic_count");
        // dice 1.0 lands in the top bin, 0.049 in the bottom
        assert!(lines[20].ends_with(",2,0"));
        assert!(lines[1].ends_with(",1,1"));
    }
}
