use std::collections::HashMap;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::Vector3;

use splatsketch::camera::{orbit_to_extrinsics, CameraIntrinsics, Circle, OrbitPose};
use splatsketch::config::RunConfig;
use splatsketch::gradcheck::{acceptance_scene, finite_diff_check};
use splatsketch::guidance::{
    load_guidance, DirectoryGuidance, GuidanceProvider, GuidanceSet, SyntheticGuidance,
};
use splatsketch::io::{load_scene, read_image, read_point_cloud, save_scene, write_image};
use splatsketch::losses::{CommandNoiseProvider, MockNoiseProvider, NoiseProvider};
use splatsketch::metrics::{psnr, ssim};
use splatsketch::optim::{fit, init_from_pointcloud, init_sphere};
use splatsketch::render::{render, RenderConfig};

#[derive(Parser)]
#[command(name = "splatsketch", version, about = "Gaussian splatting scenes fitted to multi-view guidance")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Create a scene from a point cloud or a random ball.
    Init(InitArgs),
    /// Render a scene from one orbit pose to a PNG.
    Render(RenderArgs),
    /// Optimize a scene against guidance images.
    Fit(FitArgs),
    /// Compare analytic gradients with finite differences.
    Gradcheck(GradcheckArgs),
    /// Re-encode a scene file.
    Export(ExportArgs),
    /// PSNR and SSIM between two images.
    Metrics(MetricsArgs),
}

#[derive(Args)]
struct InitArgs {
    /// PLY point cloud (x, y, z and optional red, green, blue).
    #[arg(long, conflicts_with = "sphere")]
    points: Option<PathBuf>,
    /// Number of Gaussians sampled uniformly in a ball.
    #[arg(long)]
    sphere: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    radius: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum CircleArg {
    H,
    V,
}

#[derive(Args)]
struct PoseArgs {
    #[arg(long, value_enum, default_value = "h")]
    circle: CircleArg,
    /// Orbit angle in degrees.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    angle: f64,
    #[arg(long, default_value_t = 3.0)]
    distance: f64,
    /// Vertical field of view in degrees.
    #[arg(long, default_value_t = 50.0)]
    fov: f64,
    #[arg(long, default_value_t = 512)]
    width: usize,
    #[arg(long, default_value_t = 512)]
    height: usize,
}

impl PoseArgs {
    fn pose(&self) -> Result<OrbitPose> {
        let circle = match self.circle {
            CircleArg::H => Circle::Horizontal,
            CircleArg::V => Circle::Vertical,
        };
        Ok(OrbitPose::new(circle, self.angle, self.distance)?)
    }

    fn intrinsics(&self) -> Result<CameraIntrinsics> {
        Ok(CameraIntrinsics::new(self.fov, self.width, self.height)?)
    }
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    scene: PathBuf,
    #[command(flatten)]
    pose: PoseArgs,
    /// Background color as r,g,b in [0, 1].
    #[arg(long, value_delimiter = ',', num_args = 3, default_values_t = [1.0, 1.0, 1.0])]
    background: Vec<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    /// Run configuration (key = value lines); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Initial scene.
    #[arg(long)]
    scene: PathBuf,
    /// Directory of guidance images (h_000.png ... v_330.png).
    #[arg(long, conflicts_with = "synthetic")]
    guidance_dir: Option<PathBuf>,
    /// Ground-truth scene rendered as guidance.
    #[arg(long)]
    synthetic: Option<PathBuf>,
    /// External noise predictor, run once per request.
    #[arg(long, conflicts_with = "mock_noise")]
    noise_cmd: Option<String>,
    /// Use the analytic test denoiser pulling toward the guidance images.
    #[arg(long)]
    mock_noise: bool,
    /// Sketch image for the edge term.
    #[arg(long)]
    sketch: Option<PathBuf>,
    /// Overrides the seed from the configuration.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    /// Metrics log, one JSON record per step.
    #[arg(long)]
    metrics: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Scene to check; the built-in 8-Gaussian scene when omitted.
    #[arg(long)]
    scene: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    pose: SmallPose,
}

#[derive(Args)]
struct SmallPose {
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    angle: f64,
    #[arg(long, default_value_t = 16)]
    size: usize,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MetricsArgs {
    a: PathBuf,
    b: PathBuf,
}

fn cmd_init(a: InitArgs) -> Result<()> {
    let scene = match (&a.points, a.sphere) {
        (Some(p), _) => {
            let (pts, colors) = read_point_cloud(p).with_context(|| format!("reading {}", p.display()))?;
            init_from_pointcloud(&pts, colors.as_deref())?
        }
        (None, Some(n)) => init_sphere(n, a.radius, a.seed)?,
        (None, None) => bail!("init needs --points <ply> or --sphere <count>"),
    };
    save_scene(&scene, &a.out)?;
    println!("wrote {} Gaussians to {}", scene.len(), a.out.display());
    Ok(())
}

fn cmd_render(a: RenderArgs) -> Result<()> {
    let scene = load_scene(&a.scene).with_context(|| format!("reading {}", a.scene.display()))?;
    let config = RenderConfig {
        background: Vector3::new(a.background[0], a.background[1], a.background[2]),
        ..RenderConfig::default()
    };
    let ext = orbit_to_extrinsics(&a.pose.pose()?);
    let out = render(&scene, &ext, &a.pose.intrinsics()?, &config)?;
    write_image(&out.rgb, &a.out)?;
    Ok(())
}

fn cmd_fit(a: FitArgs) -> Result<()> {
    if a.guidance_dir.is_none() && a.synthetic.is_none() {
        bail!("fit needs a guidance source: pass --guidance-dir <dir> or --synthetic <scene.ply>");
    }
    let mut config = match &a.config {
        Some(p) => RunConfig::load(p).with_context(|| format!("reading {}", p.display()))?,
        None => RunConfig::default(),
    };
    if let Some(seed) = a.seed {
        config.train.seed = seed;
    }
    config.validate()?;
    let intrinsics = config.train.intrinsics()?;
    let schedule = config.train.schedule()?;
    let initial = load_scene(&a.scene).with_context(|| format!("reading {}", a.scene.display()))?;

    let mut provider: Box<dyn GuidanceProvider> = match (&a.guidance_dir, &a.synthetic) {
        (Some(dir), _) => {
            Box::new(DirectoryGuidance { dir: dir.clone(), intrinsics, schedule: schedule.clone() })
        }
        (None, Some(truth)) => Box::new(SyntheticGuidance {
            truth: load_scene(truth).with_context(|| format!("reading {}", truth.display()))?,
            schedule: schedule.clone(),
            intrinsics,
            config: config.render.clone(),
        }),
        (None, None) => unreachable!("checked above"),
    };

    let noise: Option<Box<dyn NoiseProvider>> = if let Some(cmd) = &a.noise_cmd {
        let mut parts = cmd.split_whitespace().map(str::to_string);
        let program = parts.next().context("--noise-cmd is empty")?;
        Some(Box::new(CommandNoiseProvider { program, args: parts.collect() }))
    } else if a.mock_noise {
        let set: GuidanceSet = match &a.guidance_dir {
            Some(dir) => load_guidance(dir, &intrinsics, &schedule)?,
            None => provider.guidance(0)?,
        };
        let targets: HashMap<String, _> = set
            .entries
            .into_iter()
            .map(|(pose, img)| (splatsketch::guidance::guidance_filename(&pose).replace(".png", ""), img))
            .collect();
        Some(Box::new(MockNoiseProvider::per_tag(targets, 1.0)))
    } else {
        None
    };
    if config.train.use_sds && noise.is_none() {
        bail!("SDS term is enabled: pass --noise-cmd <program> or --mock-noise, or set use_sds = false");
    }
    let sketch = match &a.sketch {
        Some(p) => Some(read_image(p).with_context(|| format!("reading {}", p.display()))?),
        None => None,
    };
    if config.train.use_sketch && sketch.is_none() {
        bail!("sketch term is enabled: pass --sketch <png>, or set use_sketch = false");
    }

    let out = fit(&initial, provider.as_mut(), noise.as_deref(), sketch.as_ref(), &config)?;
    save_scene(&out.scene, &a.out)?;
    if let Some(m) = &a.metrics {
        std::fs::write(m, out.log_text())?;
    }
    if let Some(last) = out.log.last() {
        println!("step {} psnr {:.2}", last.step, last.psnr);
    }
    Ok(())
}

fn cmd_gradcheck(a: GradcheckArgs) -> Result<bool> {
    let scene = match &a.scene {
        Some(p) => load_scene(p).with_context(|| format!("reading {}", p.display()))?,
        None => acceptance_scene(),
    };
    let intr = CameraIntrinsics::new(50.0, a.pose.size, a.pose.size)?;
    let ext = orbit_to_extrinsics(&OrbitPose::horizontal(a.pose.angle, 3.0));
    let report = finite_diff_check(&scene, &ext, &intr, &RenderConfig::default(), a.seed)?;
    print!("{report}");
    Ok(report.passed())
}

fn cmd_export(a: ExportArgs) -> Result<()> {
    let scene = load_scene(&a.scene).with_context(|| format!("reading {}", a.scene.display()))?;
    save_scene(&scene, &a.out)?;
    Ok(())
}

fn cmd_metrics(a: MetricsArgs) -> Result<()> {
    let x = read_image(&a.a).with_context(|| format!("reading {}", a.a.display()))?;
    let y = read_image(&a.b).with_context(|| format!("reading {}", a.b.display()))?;
    println!("psnr={:.2} ssim={:.4}", psnr(&x, &y)?, ssim(&x, &y)?);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Cmd::Init(a) => cmd_init(a).map(|_| true),
        Cmd::Render(a) => cmd_render(a).map(|_| true),
        Cmd::Fit(a) => cmd_fit(a).map(|_| true),
        Cmd::Gradcheck(a) => cmd_gradcheck(a),
        Cmd::Export(a) => cmd_export(a).map(|_| true),
        Cmd::Metrics(a) => cmd_metrics(a).map(|_| true),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
