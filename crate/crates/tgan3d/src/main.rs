//! Command-line front end: phantom dataset generation, GAN and segmenter
//! training, synthesis, evaluation, the cross-center augmentation study and
//! slice export. Every error exits nonzero with a single-line message.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use tgan3d::commands::{
    cmd_augment_experiment, cmd_evaluate, cmd_export_slices, cmd_generate, cmd_phantom,
    cmd_segment, cmd_train_gan, cmd_train_seg,
};
use tgan3d::seg::SegConfig;
use tgan3d::stats::StatsConfig;
use tgan3d::tgan::GanConfig;
use tgan3d::trainer::TrainConfig;

#[derive(Parser)]
#[command(
    name = "tgan3d",
    about = "Conditional temporal-GAN toolkit for 3-D PET-like volume synthesis, segmentation and radiomic evaluation",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GanArgs {
    /// Temporal latent dimension
    #[arg(long, default_value_t = 16)]
    k0: usize,
    /// Per-slice latent dimension
    #[arg(long, default_value_t = 16)]
    k1: usize,
    /// Mask code dimension
    #[arg(long, default_value_t = 8)]
    km: usize,
    /// Base channel width of generator and critic
    #[arg(long, default_value_t = 8)]
    base_channels: usize,
    /// Mask channel weight in the critic input
    #[arg(long, default_value_t = 0.01)]
    omega: f64,
}

#[derive(Args)]
struct TrainArgs {
    /// RMSProp learning rate
    #[arg(long, default_value_t = 5e-5)]
    learning_rate: f64,
    /// Mini-batch size
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    /// Training iterations
    #[arg(long, default_value_t = 5000)]
    iterations: usize,
    /// Critic updates per generator update
    #[arg(long, default_value_t = 1)]
    critic_steps: usize,
    /// Clip singular values every this many iterations
    #[arg(long, default_value_t = 5)]
    svc_period: usize,
    /// Master seed
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Clip all networks instead of the critic only
    #[arg(long, default_value_t = false)]
    clip_all_networks: bool,
    /// Write an intermediate checkpoint every this many iterations (0 = off)
    #[arg(long, default_value_t = 0)]
    checkpoint_every: usize,
}

#[derive(Args)]
struct SegArgs {
    /// Encoder/decoder levels
    #[arg(long, default_value_t = 3)]
    depth: usize,
    /// Channels at the first level
    #[arg(long, default_value_t = 8)]
    base_channels: usize,
    /// Squeeze-and-excitation bottleneck reduction
    #[arg(long, default_value_t = 4)]
    se_reduction: usize,
    /// Probability threshold for the binary mask
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    /// Training epochs
    #[arg(long, default_value_t = 150)]
    epochs: usize,
    /// Mini-batch size
    #[arg(long, default_value_t = 2)]
    batch_size: usize,
    /// RMSProp learning rate
    #[arg(long, default_value_t = 1e-3)]
    learning_rate: f64,
    /// Seed for weight init and batch order
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a multi-center procedural PET phantom dataset
    Phantom {
        /// Output dataset directory
        #[arg(long)]
        out: PathBuf,
        /// Samples per center
        #[arg(long, default_value_t = 16)]
        per_center: usize,
        /// Volume depth (slices)
        #[arg(long, default_value_t = 8)]
        depth: usize,
        /// Volume height
        #[arg(long, default_value_t = 16)]
        height: usize,
        /// Volume width
        #[arg(long, default_value_t = 16)]
        width: usize,
        /// Dataset seed
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Cases withheld for testing, per center
        #[arg(long, default_value_t = 2)]
        withhold: usize,
        /// Disable noise and blur (analytic contrast)
        #[arg(long, default_value_t = false)]
        noiseless: bool,
    },
    /// Train the unconditional temporal GAN
    TrainTgan {
        /// Dataset directory with a manifest
        #[arg(long)]
        data: PathBuf,
        /// Output directory for checkpoint and logs
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        gan: GanArgs,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Train the mask-conditioned temporal GAN
    TrainCtgan {
        /// Dataset directory with a manifest
        #[arg(long)]
        data: PathBuf,
        /// Output directory for checkpoint and logs
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        gan: GanArgs,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Generate synthetic volumes from a trained checkpoint
    Generate {
        /// Generator checkpoint
        #[arg(long)]
        checkpoint: PathBuf,
        /// Output dataset directory
        #[arg(long)]
        out: PathBuf,
        /// Number of volumes (unconditional mode)
        #[arg(long, default_value_t = 1)]
        count: usize,
        /// Dataset directory supplying conditioning masks (conditional mode)
        #[arg(long)]
        masks: Option<PathBuf>,
        /// Sampling seed
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train the residual U-Net segmenter
    TrainSeg {
        /// Dataset directory with a manifest
        #[arg(long)]
        data: PathBuf,
        /// Output directory for checkpoint and logs
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        seg: SegArgs,
    },
    /// Segment a single VOL1 volume
    Segment {
        /// Segmenter checkpoint
        #[arg(long)]
        checkpoint: PathBuf,
        /// Input PET volume (VOL1)
        #[arg(long)]
        volume: PathBuf,
        /// Output binary mask (VOL1)
        #[arg(long)]
        out: PathBuf,
        /// Ground-truth mask; prints Dice when given
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Segment and compare a real and a synthetic set: Dice, radiomics, t-tests
    Evaluate {
        /// Real dataset directory
        #[arg(long)]
        real: PathBuf,
        /// Synthetic dataset directory
        #[arg(long)]
        synthetic: PathBuf,
        /// Segmenter checkpoint
        #[arg(long)]
        seg_checkpoint: PathBuf,
        /// Output directory for CSV and text reports
        #[arg(long)]
        out: PathBuf,
        /// Significance level for the t-tests
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        /// Gray levels for the co-occurrence features
        #[arg(long, default_value_t = 32)]
        glcm_bins: usize,
    },
    /// Cross-center augmentation study: real-only vs real+synthetic training
    AugmentExperiment {
        /// Dataset directory with >= 2 centers
        #[arg(long)]
        data: PathBuf,
        /// Conditional generator checkpoint (needed when k > 0)
        #[arg(long)]
        gan_checkpoint: Option<PathBuf>,
        /// Synthetic volumes added to the training set
        #[arg(long, default_value_t = 0)]
        k: usize,
        /// Evaluate validation Dice every this many epochs
        #[arg(long, default_value_t = 1)]
        eval_every: usize,
        /// Output curve CSV path
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        seg: SegArgs,
    },
    /// Export a volume as an 8-bit PGM slice mosaic
    ExportSlices {
        /// Input volume (VOL1)
        #[arg(long)]
        volume: PathBuf,
        /// Optional mask whose contour is burned in
        #[arg(long)]
        mask: Option<PathBuf>,
        /// Output PGM path
        #[arg(long)]
        out: PathBuf,
        /// Window low intensity (with --window-hi fixes the mapping)
        #[arg(long)]
        window_lo: Option<f64>,
        /// Window high intensity
        #[arg(long)]
        window_hi: Option<f64>,
    },
}

impl GanArgs {
    fn to_config(&self, conditional: bool) -> GanConfig {
        let mut cfg = GanConfig::desk(conditional);
        cfg.k0 = self.k0;
        cfg.k1 = self.k1;
        cfg.km = self.km;
        cfg.base_channels = self.base_channels;
        cfg.omega = self.omega;
        cfg
    }
}

impl TrainArgs {
    fn to_config(&self, omega: f64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            iterations: self.iterations,
            critic_steps_per_gen_step: self.critic_steps,
            svc_period: self.svc_period,
            omega,
            seed: self.seed,
            clip_all_networks: self.clip_all_networks,
            checkpoint_every: self.checkpoint_every,
        }
    }
}

impl SegArgs {
    fn to_config(&self) -> SegConfig {
        SegConfig {
            depth: self.depth,
            base_channels: self.base_channels,
            se_reduction: self.se_reduction,
            threshold: self.threshold,
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            seed: self.seed,
        }
    }
}

fn run(cli: Cli) -> tgan3d::Result<()> {
    match cli.command {
        Command::Phantom {
            out,
            per_center,
            depth,
            height,
            width,
            seed,
            withhold,
            noiseless,
        } => cmd_phantom(&out, per_center, (depth, height, width), seed, withhold, noiseless),
        Command::TrainTgan { data, out, gan, train } => {
            let g = gan.to_config(false);
            let t = train.to_config(g.omega);
            cmd_train_gan(&data, &out, g, &t)
        }
        Command::TrainCtgan { data, out, gan, train } => {
            let g = gan.to_config(true);
            let t = train.to_config(g.omega);
            cmd_train_gan(&data, &out, g, &t)
        }
        Command::Generate {
            checkpoint,
            out,
            count,
            masks,
            seed,
        } => cmd_generate(&checkpoint, &out, count, masks.as_deref(), seed),
        Command::TrainSeg { data, out, seg } => cmd_train_seg(&data, &out, &seg.to_config()),
        Command::Segment {
            checkpoint,
            volume,
            out,
            truth,
        } => {
            let d = cmd_segment(&checkpoint, &volume, &out, truth.as_deref())?;
            if let Some(d) = d {
                println!("dice={d}");
            }
            Ok(())
        }
        Command::Evaluate {
            real,
            synthetic,
            seg_checkpoint,
            out,
            alpha,
            glcm_bins,
        } => {
            let cfg = StatsConfig { alpha, glcm_bins };
            let summary = cmd_evaluate(&real, &synthetic, &seg_checkpoint, &out, &cfg)?;
            println!(
                "mean_dice real={} synthetic={}",
                summary.mean_dice_real, summary.mean_dice_syn
            );
            Ok(())
        }
        Command::AugmentExperiment {
            data,
            gan_checkpoint,
            k,
            eval_every,
            out,
            seg,
        } => {
            cmd_augment_experiment(
                &data,
                gan_checkpoint.as_deref(),
                k,
                &seg.to_config(),
                eval_every,
                &out,
            )?;
            Ok(())
        }
        Command::ExportSlices {
            volume,
            mask,
            out,
            window_lo,
            window_hi,
        } => {
            let window = match (window_lo, window_hi) {
                (Some(lo), Some(hi)) => Some((lo, hi)),
                (None, None) => None,
                _ => {
                    return Err(tgan3d::Error::invalid(
                        "--window-lo and --window-hi must be given together",
                    ))
                }
            };
            cmd_export_slices(&volume, mask.as_deref(), &out, window)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
