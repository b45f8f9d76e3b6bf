use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use detkit::metrics::Interpolation;
use detkit::postprocess::NmsMode;

#[derive(Debug, Parser)]
#[command(
    name = "detkit",
    version,
    about = "Detection post-processing and evaluation toolkit"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Evaluate detections against a labeled dataset (AP, mAP, F1, FPS)
    Eval(EvalArgs),
    /// Apply hard or soft non-maximum suppression to a detection file
    Nms(NmsArgs),
    /// Compose a four-image mosaic with remapped labels
    Mosaic(MosaicArgs),
    /// Verify attention-module gradients against finite differences
    AttnCheck(AttnCheckArgs),
    /// Time suppression on synthetic detections and report FPS
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub detections: PathBuf,
    /// Single IoU threshold
    #[arg(long, conflicts_with = "iou_range")]
    pub iou: Option<f64>,
    /// Inclusive threshold sweep LO:HI:STEP
    #[arg(long, value_name = "LO:HI:STEP", default_value = "0.5:0.95:0.05")]
    pub iou_range: String,
    #[arg(long, default_value = "all-point")]
    pub interp: Interpolation,
    /// IoU threshold for the F1-confidence sweep
    #[arg(long, default_value_t = 0.5)]
    pub f1_iou: f64,
    /// Number of images timed, for the FPS line
    #[arg(long, requires = "seconds")]
    pub frames: Option<u64>,
    /// Total detection time in seconds, for the FPS line
    #[arg(long, requires = "frames")]
    pub seconds: Option<f64>,
    /// Directory for report.txt, pr_curve.csv and f1_curve.csv
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub sequential: bool,
}

#[derive(Debug, Args)]
pub struct NmsArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Output file; stdout when omitted
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long, default_value = "soft-gaussian")]
    pub mode: NmsMode,
    #[arg(long, default_value_t = 0.3)]
    pub iou_threshold: f64,
    /// Gaussian decay denominator (default 0.5)
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long, default_value_t = 0.001)]
    pub score_threshold: f64,
    #[arg(long)]
    pub class_agnostic: bool,
    #[arg(long)]
    pub sequential: bool,
}

#[derive(Debug, Args)]
pub struct MosaicArgs {
    /// Four P6 images: top-left, top-right, bottom-left, bottom-right
    #[arg(long, num_args = 4, required = true)]
    pub images: Vec<PathBuf>,
    /// Four YOLO label files matching --images
    #[arg(long, num_args = 4, required = true)]
    pub labels: Vec<PathBuf>,
    /// Tile size S; the canvas is 2S x 2S
    #[arg(long, default_value_t = 320)]
    pub size: u32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1.0)]
    pub min_box_pixels: f64,
    #[arg(long, default_value_t = 0.1)]
    pub min_area_ratio: f64,
    /// Writes PREFIX.ppm and PREFIX.txt
    #[arg(long)]
    pub out: PathBuf,
    /// Fixed center X,Y instead of a seeded draw
    #[arg(long, hide = true, value_parser = parse_center)]
    pub center: Option<(u32, u32)>,
}

fn parse_center(s: &str) -> Result<(u32, u32), String> {
    let (x, y) = s.split_once(',').ok_or("expected X,Y")?;
    Ok((
        x.trim().parse().map_err(|_| "bad X")?,
        y.trim().parse().map_err(|_| "bad Y")?,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum AttnModule {
    Cbam,
    Swin,
    All,
}

#[derive(Debug, Args)]
pub struct AttnCheckArgs {
    #[arg(long, value_enum, default_value = "all")]
    pub module: AttnModule,
    /// Seeds 0..N are checked
    #[arg(long, default_value_t = 5)]
    pub seeds: u64,
    /// Central-difference step
    #[arg(long, default_value_t = detkit::attention::gradcheck::DEFAULT_STEP)]
    pub step: f64,
    #[arg(long, default_value_t = detkit::attention::gradcheck::DEFAULT_TOLERANCE)]
    pub tol: f64,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, default_value_t = 1000)]
    pub boxes: usize,
    #[arg(long, default_value_t = 50)]
    pub images: usize,
    #[arg(long, default_value = "soft-gaussian")]
    pub mode: NmsMode,
    /// Timed runs; the median is reported
    #[arg(long, default_value_t = 3)]
    pub repetitions: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Spread images across threads
    #[arg(long)]
    pub parallel: bool,
}
