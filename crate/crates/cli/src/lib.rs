//! `omnisync` command-line front end.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use omnisync::bench::{run_ablation_study, run_density_study, run_flops_study, AblationStudyConfig, DensityStudyConfig, FlopsStudyConfig};
use omnisync::depth::{euclidean_to_z, z_to_euclidean, DepthConvention};
use omnisync::diffusion::{ddim_sample, synthetic_scene, train, NoiseSchedule, ToyUNet, TrainConfig, UNetConfig};
use omnisync::encoding::{EncodingKind, PositionalEncoding};
use omnisync::geometry::{cubemap_to_erp, erp_to_cubemap, perspective_view, CubeFace, CubemapGrid, ErpGrid, FaceUV, Filter, ViewSpec};
use omnisync::io;
use omnisync::metrics::{depth_metrics, evaluate_rgbd_panorama, seam_discontinuity, Alignment, FileReference, ProjectedReference, RefDepthProvider};
use omnisync::numeric::Conv2dKernel;
use omnisync::scene::{lift_cubemap, lift_erp, mesh_from_cubemap, write_obj, write_ply, DEFAULT_EDGE_RATIO};
use omnisync::sync::{estimate_flops, synced_conv2d_with, unsynced_conv2d, ArchSpec, HaloPlan, MultiPlaneTensor, SyncFlags, PLANES};
use omnisync::Error;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Resolved parameters of one invocation, written next to its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub subcommand: String,
    pub params: Value,
    pub seed: u64,
    pub version: String,
}

impl RunConfig {
    pub fn new(subcommand: &str, params: &impl Serialize, seed: u64) -> Result<Self> {
        Ok(Self {
            subcommand: subcommand.into(),
            params: serde_json::to_value(params).map_err(Error::from)?,
            seed,
            version: VERSION.into(),
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self).map_err(Error::from)?).map_err(Error::from)?;
        Ok(())
    }
}

/// `out.png` -> `out.run.json`; directories get `run.json` inside.
pub fn run_config_path(output: &Path) -> PathBuf {
    if output.is_dir() {
        output.join("run.json")
    } else {
        output.with_extension("run.json")
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Core(Error::InvalidArgument(_)) => 2,
            CliError::Core(_) => 1,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Core(e) => match e {
                Error::EmptyRaster | Error::Shape(_) => "shape",
                Error::InvalidArgument(_) => "invalid_argument",
                Error::Convention { .. } => "convention",
                Error::NonPositiveDepth { .. } => "non_positive_depth",
                Error::NonFinite { .. } => "non_finite",
                Error::MissingFiles(_) => "missing_files",
                Error::Format(_) | Error::Json(_) => "format",
                Error::Io(_) | Error::Image(_) => "io",
            },
        }
    }

    pub fn to_json(&self) -> Value {
        json!({"error": self.kind(), "message": self.to_string()})
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

#[derive(Debug, Parser)]
#[command(name = "omnisync", version, about = "Cubemap panoramas: conversion, seam-synchronized operators, toy RGB-D diffusion, 3D lifting")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Equirectangular image to a FRBLUD cube strip, or back.
    Convert(ConvertArgs),
    /// Render a pinhole view from a cube strip.
    View(ViewArgs),
    /// Render a positional encoding as a strip image.
    Posenc(PosencArgs),
    /// Depth image utilities.
    #[command(subcommand)]
    Depth(DepthCommand),
    /// Compare seam continuity of synced and zero-padded convolution.
    SyncCheck(SyncCheckArgs),
    /// Lift an RGB-D panorama to a point cloud or mesh.
    Lift(LiftArgs),
    /// Train the toy RGB-D denoiser on synthetic panoramas.
    DemoTrain(DemoTrainArgs),
    /// Complete a panorama from one face with a trained toy denoiser.
    DemoSample(DemoSampleArgs),
    /// Depth accuracy metrics.
    Metrics(MetricsArgs),
    /// Analytic FLOPs with and without synchronization.
    Flops(FlopsArgs),
    /// Run the reproducible studies and write Markdown + JSON reports.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterArg {
    Nearest,
    Bilinear,
}

impl From<FilterArg> for Filter {
    fn from(f: FilterArg) -> Self {
        match f {
            FilterArg::Nearest => Filter::Nearest,
            FilterArg::Bilinear => Filter::Bilinear,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct ConvertArgs {
    /// Equirectangular input (2:1).
    #[arg(long, conflicts_with = "strip", required_unless_present = "strip")]
    pub erp: Option<PathBuf>,
    /// Cube strip input (6:1).
    #[arg(long)]
    pub strip: Option<PathBuf>,
    /// Face size of the output strip.
    #[arg(long, default_value_t = 256)]
    pub face_size: usize,
    /// Height of the output equirectangular image.
    #[arg(long, default_value_t = 512)]
    pub erp_height: usize,
    #[arg(long, value_enum, default_value = "bilinear")]
    pub filter: FilterArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ViewArgs {
    #[arg(long)]
    pub strip: PathBuf,
    /// Degrees, from Front toward Right.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub yaw: f64,
    /// Degrees, toward Up.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub pitch: f64,
    /// Degrees.
    #[arg(long, default_value_t = 90.0)]
    pub fov: f64,
    #[arg(long, default_value_t = 256)]
    pub size: usize,
    #[arg(long, value_enum, default_value = "bilinear")]
    pub filter: FilterArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum EncodingArg {
    Xyz,
    Uv,
}

#[derive(Debug, Args, Serialize)]
pub struct PosencArgs {
    #[arg(long, value_enum, default_value = "xyz")]
    pub kind: EncodingArg,
    #[arg(long, default_value_t = 64)]
    pub face_size: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum DepthCommand {
    /// Switch a 16-bit depth strip between Z-depth and Euclidean depth.
    Convert(DepthConvertArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ConventionArg {
    Z,
    Euclidean,
}

#[derive(Debug, Args, Serialize)]
pub struct DepthConvertArgs {
    /// 16-bit depth strip with its JSON sidecar.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum)]
    pub to: ConventionArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelArg {
    Avg3,
    Avg5,
}

#[derive(Debug, Args, Serialize)]
pub struct SyncCheckArgs {
    #[arg(long)]
    pub strip: PathBuf,
    #[arg(long, value_enum, default_value = "avg3")]
    pub kernel: KernelArg,
    #[arg(long, value_enum, default_value = "bilinear")]
    pub filter: FilterArg,
    /// Also write the report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct LiftArgs {
    /// Color: cube strip, or equirectangular image with `--erp`.
    #[arg(long)]
    pub rgb: PathBuf,
    /// 16-bit depth (strip, or equirectangular with `--erp`) with sidecar.
    #[arg(long)]
    pub depth: PathBuf,
    /// Inputs are equirectangular; depth must be Euclidean.
    #[arg(long)]
    pub erp: bool,
    /// Write a binary PLY point cloud.
    #[arg(long, required_unless_present = "mesh")]
    pub points: Option<PathBuf>,
    /// Write a stitched OBJ mesh (cube strips only).
    #[arg(long)]
    pub mesh: Option<PathBuf>,
    /// Largest allowed depth ratio inside one triangle.
    #[arg(long, default_value_t = DEFAULT_EDGE_RATIO)]
    pub tau: f64,
}

/// Shared demo configuration, stored next to checkpoints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DemoConfig {
    #[serde(rename = "H")]
    pub h: usize,
    #[serde(rename = "T")]
    pub t: usize,
    /// DDIM sampling steps.
    pub steps: usize,
    pub seed: u64,
    pub sync: DemoSync,
    pub channels: usize,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_batch")]
    pub batch: usize,
}

fn default_iterations() -> usize {
    500
}

fn default_lr() -> f64 {
    0.4
}

fn default_batch() -> usize {
    4
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DemoSync {
    pub sa: bool,
    pub conv: bool,
    pub gn: bool,
}

impl From<DemoSync> for SyncFlags {
    fn from(s: DemoSync) -> Self {
        SyncFlags {
            attention: s.sa,
            conv: s.conv,
            group_norm: s.gn,
        }
    }
}

impl Default for DemoConfig {
    fn default() -> Self {
        Self {
            h: 32,
            t: 1000,
            steps: 50,
            seed: 0,
            sync: DemoSync { sa: true, conv: true, gn: true },
            channels: 8,
            iterations: default_iterations(),
            lr: default_lr(),
            batch: default_batch(),
        }
    }
}

impl DemoConfig {
    fn train_config(&self) -> TrainConfig {
        TrainConfig {
            face_size: self.h,
            timesteps: self.t,
            iterations: self.iterations,
            batch: self.batch,
            lr: self.lr,
            seed: self.seed,
            unet: UNetConfig {
                channels: self.channels,
                sync: self.sync.into(),
                ..UNetConfig::default()
            },
            ..TrainConfig::default()
        }
    }
}

fn demo_config_path(stem: &Path) -> PathBuf {
    stem.with_extension("demo.json")
}

#[derive(Debug, Args, Serialize)]
pub struct DemoTrainArgs {
    /// Config JSON; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub face_size: Option<usize>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub channels: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub no_sync: bool,
    /// Checkpoint stem.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct DemoSampleArgs {
    /// Checkpoint stem written by `demo-train`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub steps: Option<usize>,
    /// Condition color strip; a synthetic scene is drawn from the seed
    /// when absent.
    #[arg(long, requires = "depth")]
    pub rgb: Option<PathBuf>,
    /// Condition 16-bit depth strip.
    #[arg(long, requires = "rgb")]
    pub depth: Option<PathBuf>,
    #[arg(long, default_value = "front")]
    pub condition: String,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AlignArg {
    None,
    MedianScale,
}

#[derive(Debug, Args, Serialize)]
pub struct MetricsArgs {
    /// Predicted 16-bit depth images (pairwise mode) or one depth strip
    /// (panorama mode).
    #[arg(long, num_args = 1.., required = true)]
    pub pred: Vec<PathBuf>,
    /// Reference images, one per prediction.
    #[arg(long, num_args = 1.., conflicts_with_all = ["ref_dir", "self_ref"])]
    pub r#ref: Vec<PathBuf>,
    /// Panorama mode: directory of ref_000.png, ref_001.png, ...
    #[arg(long)]
    pub ref_dir: Option<PathBuf>,
    /// Panorama mode against the prediction's own projections.
    #[arg(long, conflicts_with = "ref_dir")]
    pub self_ref: bool,
    #[arg(long, default_value_t = 8)]
    pub views: usize,
    #[arg(long, default_value_t = 128)]
    pub view_size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "median-scale")]
    pub align: AlignArg,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct FlopsArgs {
    /// Architecture JSON; defaults to the toy denoiser.
    #[arg(long)]
    pub arch: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_values_t = [16, 32, 64])]
    pub sizes: Vec<u64>,
    #[arg(long, default_value_t = 1)]
    pub batch: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum StudyArg {
    Flops,
    Density,
    Ablation,
    All,
}

#[derive(Debug, Args, Serialize)]
pub struct BenchArgs {
    #[arg(long, value_enum, default_value = "all")]
    pub study: StudyArg,
    /// Smaller grids and budgets for a fast smoke run.
    #[arg(long)]
    pub quick: bool,
    #[arg(long, default_value = "results")]
    pub out: PathBuf,
}

/// Parse and run; returns the process exit code. Errors are reported as
/// JSON on stderr.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand) {
                let _ = e.print();
                return if e.kind() == ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand { 2 } else { 0 };
            }
            let _ = e.print();
            eprintln!("{}", usage(e.kind().to_string()).to_json());
            return 2;
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("{}", e.to_json());
        return e.exit_code();
    }
    match run(cli.command) {
        Ok(report) => {
            println!("{}", serde_json::to_string_pretty(&report).unwrap_or_default());
            0
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            e.exit_code()
        }
    }
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("OMNISYNC_THREADS") {
        let n: usize = v.trim().parse().map_err(|_| usage(format!("OMNISYNC_THREADS must be a positive integer, got {v:?}")))?;
        if n == 0 {
            return Err(usage("OMNISYNC_THREADS must be positive"));
        }
        // A pool may already exist when called twice in one process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

/// Execute one command; returns the JSON report printed on success.
pub fn run(command: Command) -> Result<Value> {
    match command {
        Command::Convert(a) => convert(a),
        Command::View(a) => view(a),
        Command::Posenc(a) => posenc(a),
        Command::Depth(DepthCommand::Convert(a)) => depth_convert(a),
        Command::SyncCheck(a) => sync_check(a),
        Command::Lift(a) => lift(a),
        Command::DemoTrain(a) => demo_train(a),
        Command::DemoSample(a) => demo_sample(a),
        Command::Metrics(a) => metrics(a),
        Command::Flops(a) => flops(a),
        Command::Bench(a) => bench(a),
    }
}

fn finish(name: &str, params: &impl Serialize, seed: u64, output: &Path, mut report: Value) -> Result<Value> {
    let rc = RunConfig::new(name, params, seed)?;
    let path = run_config_path(output);
    rc.write(&path)?;
    report["run_config"] = json!(path);
    Ok(report)
}

fn convert(a: ConvertArgs) -> Result<Value> {
    let filter = a.filter.into();
    if let Some(src) = &a.erp {
        let erp = io::load_erp_png(src)?;
        let cube = erp_to_cubemap(&erp, a.face_size, filter)?;
        io::save_strip_png(&a.out, &cube)?;
        let report = json!({"output": a.out, "face_size": a.face_size, "layout": "FRBLUD"});
        finish("convert", &a, 0, &a.out, report)
    } else {
        let src = a.strip.as_ref().ok_or_else(|| usage("one of --erp or --strip is required"))?;
        let cube = io::load_strip_png(src)?;
        let erp = cubemap_to_erp(&cube, a.erp_height, filter)?;
        io::save_erp_png(&a.out, &erp)?;
        let report = json!({"output": a.out, "height": a.erp_height, "width": 2 * a.erp_height});
        finish("convert", &a, 0, &a.out, report)
    }
}

fn view(a: ViewArgs) -> Result<Value> {
    let cube = io::load_strip_png(&a.strip)?;
    let spec = ViewSpec {
        yaw: a.yaw.to_radians(),
        pitch: a.pitch.to_radians(),
        fov: a.fov.to_radians(),
        size: a.size,
    };
    let r = perspective_view(&cube, spec, a.filter.into())?;
    io::save_png8(&a.out, &r)?;
    finish("view", &a, 0, &a.out, json!({"output": a.out, "view": spec}))
}

fn posenc(a: PosencArgs) -> Result<Value> {
    let kind = match a.kind {
        EncodingArg::Xyz => EncodingKind::Xyz,
        EncodingArg::Uv => EncodingKind::Uv,
    };
    let enc = PositionalEncoding::new(kind, a.face_size)?;
    let g = enc.to_cubemap();
    let n = a.face_size;
    // XYZ lives in [-1, 1]; UV in [0, 1] gets a zero third channel.
    let img = CubemapGrid::from_data(
        n,
        3,
        CubeFace::ALL
            .iter()
            .flat_map(|&f| {
                let g = &g;
                (0..3).flat_map(move |c| {
                    (0..n * n).map(move |k| match kind {
                        EncodingKind::Xyz => 0.5 * (g.get(f, c, k / n, k % n) + 1.0),
                        EncodingKind::Uv if c < 2 => g.get(f, c, k / n, k % n),
                        EncodingKind::Uv => 0.0,
                    })
                })
            })
            .collect(),
    )?;
    io::save_strip_png(&a.out, &img)?;
    let report = json!({
        "output": a.out,
        "max_seam_jump": enc.max_seam_jump(),
        "max_interior_jump": enc.max_interior_jump(),
    });
    finish("posenc", &a, 0, &a.out, report)
}

fn depth_convert(a: DepthConvertArgs) -> Result<Value> {
    let loaded = io::load_depth_png16(&a.input)?;
    let target = match a.to {
        ConventionArg::Z => DepthConvention::ZDepth,
        ConventionArg::Euclidean => DepthConvention::Euclidean,
    };
    let out = match (loaded.depth.convention(), target) {
        (from, to) if from == to => loaded.depth,
        (DepthConvention::Euclidean, _) => euclidean_to_z(&loaded.depth)?,
        (DepthConvention::ZDepth, _) => z_to_euclidean(&loaded.depth)?,
    };
    let meta = io::save_depth_png16(&a.out, &out)?;
    finish("depth convert", &a, 0, &a.out, json!({"output": a.out, "sidecar": io::sidecar_path(&a.out), "meta": meta}))
}

/// Largest difference between the planned halo and direct per-pixel
/// projection of every halo pixel into the cubemap.
fn halo_error(cube: &CubemapGrid, halo: usize, filter: Filter) -> Result<f64> {
    let n = cube.size();
    let plan = HaloPlan::new(n, halo, filter)?;
    let x = MultiPlaneTensor::from_cubemaps(std::slice::from_ref(cube))?;
    let c = cube.channels();
    let padded = plan.pad(x.sample(0), c);
    let np = plan.padded_size();
    let mut worst: f64 = 0.0;
    let mut buf = vec![0.0; c];
    for face in CubeFace::ALL {
        for pi in 0..np {
            for pj in 0..np {
                if (halo..halo + n).contains(&pi) && (halo..halo + n).contains(&pj) {
                    continue;
                }
                let virt = FaceUV::new(
                    face,
                    omnisync::geometry::uv_of_pixel(pj as f64 - halo as f64, n),
                    omnisync::geometry::uv_of_pixel(pi as f64 - halo as f64, n),
                );
                let (ta, tb) = virt.tangent();
                cube.sample(face.ray(ta, tb), filter, &mut buf);
                for (ch, v) in buf.iter().enumerate() {
                    let got = padded[((face.index() * c + ch) * np + pi) * np + pj];
                    worst = worst.max((got - v).abs());
                }
            }
        }
    }
    Ok(worst)
}

fn sync_check(a: SyncCheckArgs) -> Result<Value> {
    let cube = io::load_strip_png(&a.strip)?;
    let k = match a.kernel {
        KernelArg::Avg3 => 3,
        KernelArg::Avg5 => 5,
    };
    let kernel = Conv2dKernel::box_filter(cube.channels(), k)?;
    let x = MultiPlaneTensor::from_cubemaps(std::slice::from_ref(&cube))?;
    let filter: Filter = a.filter.into();
    let synced = seam_discontinuity(&synced_conv2d_with(&x, &kernel, filter)?);
    let unsynced = seam_discontinuity(&unsynced_conv2d(&x, &kernel)?);
    let input = seam_discontinuity(&x);
    let report = json!({
        "seam_jump_synced": synced.mean,
        "seam_jump_unsynced": unsynced.mean,
        "halo_max_err": halo_error(&cube, k / 2, filter)?,
        "seam_jump_input": input.mean,
        "seam_max_synced": synced.max,
        "seam_max_unsynced": unsynced.max,
        "seam_kink_synced": synced.kink_max,
        "seam_kink_unsynced": unsynced.kink_max,
    });
    match &a.out {
        Some(out) => {
            std::fs::write(out, serde_json::to_string_pretty(&report).map_err(Error::from)?).map_err(Error::from)?;
            finish("sync-check", &a, 0, out, report)
        }
        None => Ok(report),
    }
}

fn lift(a: LiftArgs) -> Result<Value> {
    if !(a.tau > 1.0) {
        return Err(usage(format!("--tau must exceed 1, got {}", a.tau)));
    }
    let primary = a.points.clone().or(a.mesh.clone()).ok_or_else(|| usage("one of --points or --mesh is required"))?;
    let mut report = json!({});
    if a.erp {
        if a.mesh.is_some() {
            return Err(usage("--mesh needs cube strip inputs"));
        }
        let rgb = io::load_erp_png(&a.rgb)?;
        let d = io::load_depth_raster_png16(&a.depth)?;
        if d.meta.convention != DepthConvention::Euclidean {
            return Err(Error::Convention {
                expected: DepthConvention::Euclidean.name(),
                actual: d.meta.convention.name(),
                hint: "; equirectangular depth is distance along the ray",
            }
            .into());
        }
        let depth = ErpGrid::new(d.raster)?;
        let pc = lift_erp(&rgb, &depth)?;
        let path = a.points.as_ref().expect("checked above");
        write_ply(path, &pc)?;
        report["points"] = json!({"path": path, "count": pc.len()});
    } else {
        let rgb = io::load_strip_png(&a.rgb)?;
        let loaded = io::load_depth_png16(&a.depth)?;
        let depth = match loaded.depth.convention() {
            DepthConvention::ZDepth => loaded.depth,
            DepthConvention::Euclidean => euclidean_to_z(&loaded.depth)?,
        };
        if let Some(path) = &a.points {
            let pc = lift_cubemap(&rgb, &depth)?;
            write_ply(path, &pc)?;
            report["points"] = json!({"path": path, "count": pc.len()});
        }
        if let Some(path) = &a.mesh {
            let mesh = mesh_from_cubemap(&rgb, &depth, a.tau)?;
            write_obj(path, &mesh)?;
            report["mesh"] = json!({
                "path": path,
                "vertices": mesh.vertices.len(),
                "triangles": mesh.triangles.len(),
                "euler_characteristic": mesh.euler_characteristic(),
            });
        }
    }
    finish("lift", &a, 0, &primary, report)
}

fn resolve_demo_config(a: &DemoTrainArgs) -> Result<DemoConfig> {
    let mut c = match &a.config {
        Some(p) => serde_json::from_str(&std::fs::read_to_string(p).map_err(Error::from)?).map_err(|e| usage(format!("bad demo config: {e}")))?,
        None => DemoConfig::default(),
    };
    if let Some(v) = a.face_size {
        c.h = v;
    }
    if let Some(v) = a.iterations {
        c.iterations = v;
    }
    if let Some(v) = a.seed {
        c.seed = v;
    }
    if let Some(v) = a.channels {
        c.channels = v;
    }
    if let Some(v) = a.lr {
        c.lr = v;
    }
    if a.no_sync {
        c.sync = DemoSync { sa: false, conv: false, gn: false };
    }
    Ok(c)
}

fn demo_train(a: DemoTrainArgs) -> Result<Value> {
    let config = resolve_demo_config(&a)?;
    let outcome = train(config.train_config(), |i, l| {
        if i % 50 == 0 {
            eprintln!("iter {i} loss {l:.4}");
        }
    })?;
    outcome.model.save(&a.out)?;
    let cfg_path = demo_config_path(&a.out);
    std::fs::write(&cfg_path, serde_json::to_string_pretty(&config).map_err(Error::from)?).map_err(Error::from)?;
    let report = json!({
        "checkpoint": a.out,
        "config": config,
        "initial_loss": outcome.initial_loss,
        "final_loss": outcome.final_loss,
    });
    finish("demo-train", &config, config.seed, &a.out, report)
}

fn parse_face(s: &str) -> Result<CubeFace> {
    CubeFace::ALL
        .into_iter()
        .find(|f| f.name().eq_ignore_ascii_case(s))
        .ok_or_else(|| usage(format!("unknown face {s:?}; expected one of front, right, back, left, up, down")))
}

#[derive(Serialize)]
struct DemoSampleParams<'a> {
    args: &'a DemoSampleArgs,
    config: DemoConfig,
    steps: usize,
}

fn demo_sample(a: DemoSampleArgs) -> Result<Value> {
    let config: DemoConfig = serde_json::from_str(&std::fs::read_to_string(demo_config_path(&a.checkpoint)).map_err(Error::from)?).map_err(Error::from)?;
    let model = ToyUNet::load(&a.checkpoint)?;
    let condition = parse_face(&a.condition)?;
    let steps = a.steps.unwrap_or(config.steps);
    let schedule = NoiseSchedule::new(config.t, Default::default())?;
    let n = config.h;
    let posenc = omnisync::encoding::xyz_encoding(n)?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let (rgb, depth) = match (&a.rgb, &a.depth) {
        (Some(r), Some(d)) => {
            let rgb = io::load_strip_png(r)?.select_channels(&[0, 1, 2])?;
            let loaded = io::load_depth_png16(d)?;
            let depth = match loaded.depth.convention() {
                DepthConvention::ZDepth => loaded.depth,
                DepthConvention::Euclidean => euclidean_to_z(&loaded.depth)?,
            };
            (rgb, depth)
        }
        _ => {
            let s = synthetic_scene(n, &mut rng)?;
            (s.rgb, s.depth)
        }
    };
    if rgb.size() != n {
        return Err(usage(format!("input face size {} does not match the checkpoint's {n}", rgb.size())));
    }
    let out = ddim_sample(&model, &rgb, &depth, condition, &schedule, &posenc, steps, &mut rng)?;
    std::fs::create_dir_all(&a.out).map_err(Error::from)?;
    let rgb_path = a.out.join("rgb.png");
    let depth_path = a.out.join("depth.png");
    io::save_strip_png(&rgb_path, &out.rgb)?;
    io::save_depth_png16(&depth_path, &out.depth)?;
    let seams = seam_discontinuity(&MultiPlaneTensor::from_cubemaps(&[out.to_rgbd()?])?);
    let report = json!({
        "rgb": rgb_path,
        "depth": depth_path,
        "condition": condition.name(),
        "steps": steps,
        "seam_mean": seams.mean,
    });
    let params = DemoSampleParams { args: &a, config, steps };
    finish("demo-sample", &params, a.seed, &a.out, report)
}

fn metrics(a: MetricsArgs) -> Result<Value> {
    let align = match a.align {
        AlignArg::None => Alignment::None,
        AlignArg::MedianScale => Alignment::MedianScale,
    };
    let report = if !a.r#ref.is_empty() {
        if a.r#ref.len() != a.pred.len() {
            return Err(usage(format!("{} predictions but {} references", a.pred.len(), a.r#ref.len())));
        }
        let mut per_pair = Vec::new();
        let mut pred_all = Vec::new();
        let mut ref_all = Vec::new();
        for (p, r) in a.pred.iter().zip(&a.r#ref) {
            let pr = io::load_depth_raster_png16(p)?.raster;
            let rr = io::load_depth_raster_png16(r)?.raster;
            per_pair.push(depth_metrics(&pr.data, &rr.data, align)?);
            pred_all.extend(pr.data);
            ref_all.extend(rr.data);
        }
        json!({"per_pair": per_pair, "pooled": depth_metrics(&pred_all, &ref_all, align)?})
    } else {
        let [pred] = &a.pred[..] else {
            return Err(usage("panorama mode takes exactly one --pred depth strip"));
        };
        let loaded = io::load_depth_png16(pred)?;
        let provider: Box<dyn RefDepthProvider> = match (&a.ref_dir, a.self_ref) {
            (Some(dir), _) => Box::new(FileReference::open(dir, a.views)?),
            (None, true) => Box::new(ProjectedReference { depth: loaded.depth.clone() }),
            (None, false) => return Err(usage("give --ref files, --ref-dir, or --self-ref")),
        };
        if align != Alignment::MedianScale {
            return Err(usage("panorama evaluation always median-scales"));
        }
        serde_json::to_value(evaluate_rgbd_panorama(&loaded.depth, provider.as_ref(), a.views, a.view_size, a.seed)?).map_err(Error::from)?
    };
    match &a.out {
        Some(out) => {
            std::fs::write(out, serde_json::to_string_pretty(&report).map_err(Error::from)?).map_err(Error::from)?;
            finish("metrics", &a, a.seed, out, report)
        }
        None => Ok(report),
    }
}

fn flops(a: FlopsArgs) -> Result<Value> {
    let arch = match &a.arch {
        Some(p) => ArchSpec::from_json(&std::fs::read_to_string(p).map_err(Error::from)?)?,
        None => UNetConfig::default().arch_spec(),
    };
    let mut rows = Vec::new();
    for &h in &a.sizes {
        let on = estimate_flops(&arch, a.batch, PLANES as u64, h, h, SyncFlags::ALL)?;
        let off = estimate_flops(&arch, a.batch, PLANES as u64, h, h, SyncFlags::NONE)?;
        rows.push(json!({
            "H": h,
            "sync": on,
            "no_sync": off,
            "attention_quadratic_ratio": if off.attention_quadratic > 0 { json!(on.attention_quadratic as f64 / off.attention_quadratic as f64) } else { Value::Null },
            "total_increase": on.total as f64 / off.total as f64 - 1.0,
        }));
    }
    let report = json!({"rows": rows});
    match &a.out {
        Some(out) => {
            std::fs::write(out, serde_json::to_string_pretty(&report).map_err(Error::from)?).map_err(Error::from)?;
            finish("flops", &a, 0, out, report)
        }
        None => Ok(report),
    }
}

fn bench(a: BenchArgs) -> Result<Value> {
    let mut written = Vec::new();
    let want = |s: StudyArg| a.study == s || a.study == StudyArg::All;
    if want(StudyArg::Flops) {
        let config = if a.quick {
            FlopsStudyConfig {
                sizes: vec![8, 16],
                ..Default::default()
            }
        } else {
            FlopsStudyConfig::default()
        };
        written.push(run_flops_study(&config)?.write(&a.out)?);
    }
    if want(StudyArg::Density) {
        let config = if a.quick {
            DensityStudyConfig {
                erp_height: 64,
                face_size: 32,
                k: 8,
            }
        } else {
            DensityStudyConfig::default()
        };
        written.push(run_density_study(&config)?.write(&a.out)?);
    }
    if want(StudyArg::Ablation) {
        let mut config = AblationStudyConfig::default();
        if a.quick {
            config.ablation.train.face_size = 8;
            config.ablation.train.iterations = 4;
            config.ablation.train.timesteps = 50;
            config.ablation.train.eval_batch = 2;
            config.ablation.samples = 2;
            config.ablation.sample_steps = 4;
        }
        written.push(run_ablation_study(&config, |s| eprintln!("{s}"))?.write(&a.out)?);
    }
    let report = json!({"reports": written});
    finish("bench", &a, 0, &a.out, report)
}
