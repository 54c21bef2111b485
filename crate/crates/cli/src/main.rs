//! `frk`: dataset generation, rendering, calibration, localization,
//! reconstruction, evaluation, experiments and the HTTP service.

mod commands;
mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "frk",
    version,
    about = "Few-view X-ray calibration and vertebra reconstruction"
)]
pub struct Cli {
    /// Seed recorded in every output.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output file or directory, depending on the command.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads; all cores by default.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// JSON file with default options (see README).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Default data root for outputs.
    #[arg(long, env = "FRK_DATA_DIR", global = true, hide_env_values = true)]
    pub data_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render the 28-pose DRR/mask/camera dataset of every labelled vertebra.
    GenDataset(GenDatasetArgs),
    /// Render one DRR or label silhouette.
    Render(RenderArgs),
    /// Detect fiducials and solve the camera of one image.
    Calibrate(CalibrateArgs),
    /// Crop vertebrae and write crop-adjusted cameras.
    Localize(LocalizeArgs),
    /// Carve a reconstruction cube from calibrated views.
    Reconstruct(ReconstructArgs),
    /// Score a reconstruction against ground truth.
    Evaluate(EvaluateArgs),
    /// View-count ablation over the 2..8 view plans.
    AblateViews(AblateArgs),
    /// View-combination ablation over the four 4-view plans.
    AblateCombos(AblateArgs),
    /// View-angle sensitivity heatmap.
    Heatmap(HeatmapArgs),
    /// Residual statistics over calibration reports.
    PairedQa(PairedQaArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PhantomKind {
    Lumbar,
    Sphere,
    LShape,
}

/// Where the anatomy comes from: a phantom, a volume pair or a dataset.
#[derive(Debug, Clone, Args)]
pub struct SceneArgs {
    #[arg(long, value_enum)]
    pub phantom: Option<PhantomKind>,
    /// Vertebra count of the lumbar phantom.
    #[arg(long, default_value_t = 5)]
    pub levels: usize,
    /// Sphere phantom radius.
    #[arg(long, default_value_t = 15.0)]
    pub radius_mm: f64,
    /// Phantom voxel spacing.
    #[arg(long)]
    pub spacing_mm: Option<f64>,
    /// HU volume header (`.vjson`).
    #[arg(long)]
    pub hu: Option<PathBuf>,
    /// Label volume header (`.vjson`).
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Dataset directory holding `manifest.json`.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct DetectorArgs {
    #[arg(long)]
    pub detector_px: Option<usize>,
    #[arg(long)]
    pub pitch_mm: Option<f64>,
    #[arg(long)]
    pub focal_mm: Option<f64>,
    #[arg(long)]
    pub step_mm: Option<f64>,
    #[arg(long)]
    pub hu_threshold: Option<f64>,
}

#[derive(Debug, Args)]
pub struct GenDatasetArgs {
    #[command(flatten)]
    pub scene: SceneArgs,
    #[command(flatten)]
    pub detector: DetectorArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    Drr,
    Mask,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    /// Volume header (`.vjson`); int16 volumes are HU, uint8 are labels.
    #[arg(long)]
    pub volume: PathBuf,
    /// Camera JSON; replaces the pose flags.
    #[arg(long, conflicts_with_all = ["orbit_deg", "tilt_deg", "focal_mm", "source_to_center_mm", "center_mm", "view_class"])]
    pub camera: Option<PathBuf>,
    #[arg(long, allow_hyphen_values = true)]
    pub orbit_deg: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub tilt_deg: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub focal_mm: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub source_to_center_mm: Option<f64>,
    /// Isocentre as `x,y,z`.
    #[arg(long, value_parser = parse_point, allow_hyphen_values = true)]
    pub center_mm: Option<[f64; 3]>,
    #[arg(long)]
    pub view_class: Option<String>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub height: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    pub pitch_mm: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub step_mm: Option<f64>,
    #[arg(long, value_enum, default_value = "drr")]
    pub kind: KindArg,
    #[arg(long)]
    pub label: Option<u8>,
    #[arg(long, allow_hyphen_values = true)]
    pub hu_threshold: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PolarityArg {
    Bright,
    Dark,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub image: PathBuf,
    /// Fiducial layout JSON.
    #[arg(long)]
    pub fiducials: PathBuf,
    #[arg(long)]
    pub pitch_mm: f64,
    /// Bead radius range `min,max`; derived from the pitch by default.
    #[arg(long, value_delimiter = ',', num_args = 2)]
    pub radii_px: Option<Vec<f64>>,
    #[arg(long)]
    pub magnification: Option<f64>,
    #[arg(long, value_enum)]
    pub polarity: Option<PolarityArg>,
    #[arg(long)]
    pub gate_px: Option<f64>,
    /// Also write the image with beads inpainted.
    #[arg(long)]
    pub inpainted: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LocalizeArgs {
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub camera: PathBuf,
    /// Label volume whose projections give the boxes.
    #[arg(long, required_unless_present = "mask")]
    pub labels: Option<PathBuf>,
    /// Silhouette PGM giving the box of `--label`.
    #[arg(long, requires = "label")]
    pub mask: Option<PathBuf>,
    #[arg(long)]
    pub label: Option<u8>,
    #[arg(long)]
    pub pitch_mm: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Hull,
    MeanThresh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SourceArg {
    Mask,
    Drr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OriginArg {
    Triangulated,
    GroundTruth,
}

#[derive(Debug, Args)]
pub struct ReconstructArgs {
    /// View images, comma separated.
    #[arg(long, value_delimiter = ',', required_unless_present = "manifest")]
    pub views: Vec<PathBuf>,
    /// Camera JSON per view, comma separated.
    #[arg(long, value_delimiter = ',', required_unless_present = "manifest")]
    pub cams: Vec<PathBuf>,
    /// Dataset directory; views are picked by `--items`.
    #[arg(long, requires = "items")]
    pub manifest: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub items: Vec<String>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// Mean-threshold level.
    #[arg(long)]
    pub tau: Option<f64>,
    /// Views a voxel must be seen in (mean-threshold mode).
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long, value_enum)]
    pub source: Option<SourceArg>,
    #[arg(long, value_enum)]
    pub origin: Option<OriginArg>,
    /// Ground-truth label volume; enables scoring.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long, requires = "labels")]
    pub label: Option<u8>,
    #[arg(long)]
    pub tau_mm: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Predicted grid (`.vjson`).
    #[arg(long)]
    pub pred: PathBuf,
    /// Ground-truth grid on the same lattice.
    #[arg(long, conflicts_with = "labels")]
    pub gt: Option<PathBuf>,
    /// Ground-truth label volume, resampled around the label centre.
    #[arg(long, requires = "label")]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub label: Option<u8>,
    #[arg(long)]
    pub tau_mm: Option<f64>,
    #[arg(long)]
    pub clip_mm: Option<f64>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub scene: SceneArgs,
    #[command(flatten)]
    pub detector: DetectorArgs,
    #[arg(long)]
    pub trials: Option<usize>,
    /// Restrict to one label.
    #[arg(long)]
    pub label: Option<u8>,
    /// Also compare triangulated and ground-truth origins on this plan
    /// (e.g. `1/1/1/1`).
    #[arg(long)]
    pub compare_origin: Option<String>,
}

#[derive(Debug, Args)]
pub struct HeatmapArgs {
    #[command(flatten)]
    pub scene: SceneArgs,
    #[arg(long)]
    pub label: Option<u8>,
    /// Index of the swept base view.
    #[arg(long)]
    pub varied: Option<usize>,
    #[arg(long)]
    pub upsample: Option<usize>,
}

#[derive(Debug, Args)]
pub struct PairedQaArgs {
    /// Calibration report JSON files.
    #[arg(required_unless_present = "synthetic")]
    pub reports: Vec<PathBuf>,
    /// Summarize this many synthetic reports instead.
    #[arg(long)]
    pub synthetic: Option<usize>,
    #[arg(long, default_value_t = 14)]
    pub points: usize,
    #[arg(long, default_value_t = 0.5)]
    pub noise_px: f64,
    #[arg(long, default_value_t = 0.152)]
    pub pitch_mm: f64,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value_t = frk_service::DEFAULT_PORT)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    /// Artifact directory; `FRK_DATA_DIR` by default.
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    /// Skip loading the demo phantom.
    #[arg(long)]
    pub no_demo: bool,
    #[arg(long)]
    pub workers: Option<usize>,
}

fn parse_point(text: &str) -> Result<[f64; 3], String> {
    let v: Vec<f64> = text
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| format!("`{t}`: {e}")))
        .collect::<Result<_, _>>()?;
    <[f64; 3]>::try_from(v).map_err(|v| format!("expected x,y,z, got {} values", v.len()))
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Err(e) = commands::run(cli) {
        match e.downcast_ref::<frk_core::Error>() {
            Some(core) => {
                let body = frk_service::ErrorBody::from_core(core);
                eprintln!("{}", serde_json::to_string(&body).expect("error serializes"));
            }
            None => eprintln!("error: {e:#}"),
        }
        std::process::exit(1);
    }
}
