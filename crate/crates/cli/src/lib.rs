//! Command implementations behind the `sphere-center` binary.
//!
//! Every command writes one JSON document carrying `"schema": 1`. Failures are
//! reported as `{"schema": 1, "error": {...}}` with a matching exit code.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use sphere_center::geometry::{CameraIntrinsics, EllipseGeom};
use sphere_center::image::GrayImage;
use sphere_center::pipeline::{detect_ellipse, Detection, DetectorConfig, StageTimings};
use sphere_center::sphere3d::{estimate_sphere, EstimationMethod, SphereEstimate};
use sphere_center::synth::{
    evaluate, render_disk, standard_grid, summarize, BatchSummary, EvalReport, SceneConfig, SyntheticScene,
};
use sphere_center::Error;

pub const SCHEMA: u32 = 1;

pub mod exit {
    pub const OK: i32 = 0;
    pub const USAGE: i32 = 2;
    pub const PARSE: i32 = 3;
    pub const NO_DETECTION: i32 = 4;
    pub const ESTIMATION: i32 = 5;
}

#[derive(Debug, Parser)]
#[command(name = "sphere-center", version, about = "Detect a sphere in a calibrated image and locate its center")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Detect the sphere silhouette and report the ellipse.
    Detect(ImageArgs),
    /// Detect the silhouette and estimate the 3-D sphere center.
    Estimate(ImageArgs),
    /// Render a synthetic scene (or the standard grid) with ground truth.
    Synth(SynthArgs),
    /// Estimate every synthetic scene in a directory and aggregate errors.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// RANSAC seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Circle RANSAC iterations.
    #[arg(long, default_value_t = 1_000_000)]
    pub iterations: usize,
    /// Write the JSON result here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Print nothing but the JSON result.
    #[arg(long)]
    pub json_only: bool,
    /// Include wall-clock stage timings (makes output run-dependent).
    #[arg(long)]
    pub timings: bool,
}

#[derive(Debug, Args)]
pub struct ImageArgs {
    /// Binary PGM (P5) or PPM (P6) image.
    #[arg(long)]
    pub image: PathBuf,
    /// Intrinsics JSON: {fu, fv, u0, v0, us, vs}.
    #[arg(long)]
    pub intrinsics: PathBuf,
    /// Sphere radius in world units.
    #[arg(long)]
    pub radius: f64,
    /// Write intermediate point lists as JSON to this path.
    #[arg(long)]
    pub debug_dump: Option<PathBuf>,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Scene JSON. Renders `<out>.pgm` and `<out>.gt.json`.
    #[arg(long, conflicts_with = "grid", required_unless_present = "grid")]
    pub config: Option<PathBuf>,
    /// Render the 100-scene standard grid into the directory `<out>`.
    #[arg(long)]
    pub grid: bool,
    /// Intensity noise sigma for `--grid`.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub json_only: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Directory of `<name>.pgm` + `<name>.gt.json` pairs.
    #[arg(long)]
    pub dir: PathBuf,
    #[command(flatten)]
    pub run: RunArgs,
}

/// A failure with its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub kind: &'static str,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Self { code: exit::USAGE, kind: "usage", message: message.into() }
    }

    pub fn parse(message: impl Into<String>) -> Self {
        Self { code: exit::PARSE, kind: "parse", message: message.into() }
    }

    fn io(path: &Path, e: std::io::Error) -> Self {
        Self::usage(format!("{}: {e}", path.display()))
    }

    /// Classifies a pipeline error raised during detection.
    pub fn detection(e: Error) -> Self {
        match e {
            Error::Parse(_) | Error::ImageTooSmall { .. } | Error::InvalidIntrinsics(_) => Self::parse(e.to_string()),
            _ => Self { code: exit::NO_DETECTION, kind: "no_detection", message: e.to_string() },
        }
    }

    /// Classifies a pipeline error raised while estimating the center.
    pub fn estimation(e: Error) -> Self {
        Self { code: exit::ESTIMATION, kind: "estimation_failure", message: e.to_string() }
    }
}

#[derive(Debug, Serialize)]
pub struct ErrorBody {
    pub code: i32,
    pub kind: &'static str,
    pub message: String,
}

#[derive(Debug, Serialize)]
struct ErrorOutput {
    schema: u32,
    error: ErrorBody,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct EllipseJson {
    pub cx: f64,
    pub cy: f64,
    pub a: f64,
    pub b: f64,
    pub angle: f64,
}

impl From<EllipseGeom> for EllipseJson {
    fn from(g: EllipseGeom) -> Self {
        Self { cx: g.cx, cy: g.cy, a: g.a, b: g.b, angle: g.angle }
    }
}

#[derive(Debug, Serialize)]
pub struct DetectOutput {
    pub schema: u32,
    pub ellipse: EllipseJson,
    pub support: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timings: Option<StageTimings>,
}

#[derive(Debug, Serialize)]
pub struct EstimateOutput {
    pub schema: u32,
    pub center: [f64; 3],
    pub residual_rms: f64,
    pub method: EstimationMethod,
    pub converged: bool,
    pub iterations: usize,
    pub ellipse: EllipseJson,
    pub support: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timings: Option<StageTimings>,
}

/// Ground-truth sidecar written next to each synthetic image.
#[derive(Debug, Serialize, serde::Deserialize)]
pub struct GroundTruth {
    pub schema: u32,
    pub scene: SceneConfig,
    pub center: [f64; 3],
    pub radius: f64,
}

#[derive(Debug, Serialize)]
pub struct SynthOutput {
    pub schema: u32,
    pub images: Vec<String>,
}

#[derive(Debug, Serialize)]
pub struct SceneResult {
    pub name: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub report: Option<EvalReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorBody>,
}

#[derive(Debug, Serialize)]
pub struct EvalOutput {
    pub schema: u32,
    pub summary: BatchSummary,
    pub scenes: Vec<SceneResult>,
}

#[derive(Debug, Serialize)]
struct DebugDump<'a> {
    schema: u32,
    edge_threshold: f64,
    edge_points: &'a [sphere_center::edges::EdgePoint],
    candidates: &'a [sphere_center::pipeline::CandidateTrace],
    merged: &'a [usize],
    contour: &'a [sphere_center::geometry::PixelPoint],
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("output types serialize");
    s.push('\n');
    s
}

fn read(path: &Path) -> Result<Vec<u8>, Failure> {
    fs::read(path).map_err(|e| Failure::io(path, e))
}

pub fn load_image(path: &Path) -> Result<GrayImage, Failure> {
    GrayImage::from_pnm(&read(path)?).map_err(|e| Failure::parse(format!("{}: {e}", path.display())))
}

pub fn load_intrinsics(path: &Path) -> Result<CameraIntrinsics, Failure> {
    let k: CameraIntrinsics =
        serde_json::from_slice(&read(path)?).map_err(|e| Failure::parse(format!("{}: {e}", path.display())))?;
    k.validate().map_err(|e| Failure::parse(format!("{}: {e}", path.display())))?;
    Ok(k)
}

fn check_radius(r: f64) -> Result<(), Failure> {
    if r > 0.0 && r.is_finite() {
        Ok(())
    } else {
        Err(Failure::usage(format!("--radius must be a positive number, got {r}")))
    }
}

fn detector(run: &RunArgs) -> Result<DetectorConfig, Failure> {
    if run.iterations == 0 {
        return Err(Failure::usage("--iterations must be positive"));
    }
    Ok(DetectorConfig::default().with_seed(run.seed).with_iterations(run.iterations))
}

fn dump_debug(path: &Path, d: &Detection) -> Result<(), Failure> {
    let dump = DebugDump {
        schema: SCHEMA,
        edge_threshold: d.edge_threshold,
        edge_points: &d.edge_points,
        candidates: &d.candidates,
        merged: &d.merged,
        contour: &d.contour,
    };
    fs::write(path, to_json(&dump)).map_err(|e| Failure::io(path, e))
}

pub fn cmd_detect(args: &ImageArgs) -> Result<(String, String), Failure> {
    check_radius(args.radius)?;
    let cfg = detector(&args.run)?;
    let img = load_image(&args.image)?;
    let k = load_intrinsics(&args.intrinsics)?;
    let d = detect_ellipse(&img, &k, args.radius, &cfg).map_err(Failure::detection)?;
    if let Some(path) = &args.debug_dump {
        dump_debug(path, &d)?;
    }
    let out = DetectOutput {
        schema: SCHEMA,
        ellipse: d.ellipse.into(),
        support: d.support,
        timings: args.run.timings.then_some(d.timings),
    };
    let summary = format!(
        "ellipse center ({:.2}, {:.2}) axes {:.2} x {:.2} angle {:.4} support {}",
        d.ellipse.cx, d.ellipse.cy, d.ellipse.a, d.ellipse.b, d.ellipse.angle, d.support
    );
    Ok((to_json(&out), summary))
}

fn estimate_image(
    img: &GrayImage,
    k: &CameraIntrinsics,
    radius: f64,
    cfg: &DetectorConfig,
) -> Result<(Detection, SphereEstimate), Failure> {
    let mut d = detect_ellipse(img, k, radius, cfg).map_err(Failure::detection)?;
    let t = Instant::now();
    let est = estimate_sphere(&d.ellipse, k, radius, &d.contour).map_err(Failure::estimation)?;
    d.timings.estimate_ms = t.elapsed().as_secs_f64() * 1e3;
    Ok((d, est))
}

pub fn cmd_estimate(args: &ImageArgs) -> Result<(String, String), Failure> {
    check_radius(args.radius)?;
    let cfg = detector(&args.run)?;
    let img = load_image(&args.image)?;
    let k = load_intrinsics(&args.intrinsics)?;
    let (d, est) = estimate_image(&img, &k, args.radius, &cfg)?;
    if let Some(path) = &args.debug_dump {
        dump_debug(path, &d)?;
    }
    let out = EstimateOutput {
        schema: SCHEMA,
        center: est.center.into(),
        residual_rms: est.residual_rms,
        method: est.method,
        converged: est.converged,
        iterations: est.iterations,
        ellipse: d.ellipse.into(),
        support: d.support,
        timings: args.run.timings.then_some(d.timings),
    };
    let c = est.center;
    let summary = format!("center ({:.6}, {:.6}, {:.6}) residual {:.3} px", c.x, c.y, c.z, est.residual_rms);
    Ok((to_json(&out), summary))
}

fn write_scene(scene: &SyntheticScene, stem: &Path) -> Result<String, Failure> {
    let img = render_disk(scene).map_err(|e| Failure::parse(e.to_string()))?;
    let pgm = stem.with_extension("pgm");
    let gt_path = stem.with_extension("gt.json");
    fs::write(&pgm, img.to_pgm()).map_err(|e| Failure::io(&pgm, e))?;
    let gt = GroundTruth {
        schema: SCHEMA,
        scene: SceneConfig::from(scene),
        center: scene.sphere.center.into(),
        radius: scene.sphere.radius,
    };
    fs::write(&gt_path, to_json(&gt)).map_err(|e| Failure::io(&gt_path, e))?;
    Ok(pgm.display().to_string())
}

pub fn cmd_synth(args: &SynthArgs) -> Result<(String, String), Failure> {
    let images = if args.grid {
        if !(args.noise >= 0.0 && args.noise.is_finite()) {
            return Err(Failure::usage("--noise must be a non-negative number"));
        }
        fs::create_dir_all(&args.out).map_err(|e| Failure::io(&args.out, e))?;
        standard_grid(args.noise)
            .iter()
            .enumerate()
            .map(|(i, s)| write_scene(s, &args.out.join(format!("scene_{i:03}"))))
            .collect::<Result<Vec<_>, _>>()?
    } else {
        let path = args.config.as_ref().expect("clap requires --config without --grid");
        let cfg: SceneConfig =
            serde_json::from_slice(&read(path)?).map_err(|e| Failure::parse(format!("{}: {e}", path.display())))?;
        let scene = cfg.to_scene().map_err(|e| Failure::parse(format!("{}: {e}", path.display())))?;
        vec![write_scene(&scene, &args.out)?]
    };
    let summary = format!("wrote {} image(s)", images.len());
    Ok((to_json(&SynthOutput { schema: SCHEMA, images }), summary))
}

fn eval_scene(pgm: &Path, gt_path: &Path, run: &RunArgs, cfg: &DetectorConfig) -> Result<EvalReport, Failure> {
    let gt: GroundTruth =
        serde_json::from_slice(&read(gt_path)?).map_err(|e| Failure::parse(format!("{}: {e}", gt_path.display())))?;
    let scene = gt.scene.to_scene().map_err(|e| Failure::parse(e.to_string()))?;
    let img = load_image(pgm)?;
    let (d, est) = estimate_image(&img, &scene.intrinsics, scene.sphere.radius, cfg)?;
    let timings = run.timings.then_some(d.timings);
    evaluate(&scene, &est.center, Some(d.ellipse), timings).map_err(|e| Failure::parse(e.to_string()))
}

pub fn cmd_eval(args: &EvalArgs) -> Result<(String, String), Failure> {
    let cfg = detector(&args.run)?;
    let entries = fs::read_dir(&args.dir).map_err(|e| Failure::io(&args.dir, e))?;
    let mut stems: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "pgm"))
        .filter(|p| p.with_extension("gt.json").is_file())
        .collect();
    stems.sort();
    if stems.is_empty() {
        return Err(Failure::usage(format!("{}: no <name>.pgm + <name>.gt.json pairs", args.dir.display())));
    }
    let mut scenes = Vec::with_capacity(stems.len());
    let mut reports = Vec::new();
    let mut failures = 0;
    for pgm in &stems {
        let name = pgm.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        match eval_scene(pgm, &pgm.with_extension("gt.json"), &args.run, &cfg) {
            Ok(report) => {
                reports.push(report.clone());
                scenes.push(SceneResult { name, report: Some(report), error: None });
            }
            Err(f) => {
                failures += 1;
                let error = ErrorBody { code: f.code, kind: f.kind, message: f.message };
                scenes.push(SceneResult { name, report: None, error: Some(error) });
            }
        }
    }
    let summary = summarize(&reports, failures);
    let line = match &summary.relative_error {
        Some(s) => format!(
            "{} scenes, {} failed, relative error median {:.3e} mean {:.3e} max {:.3e}",
            summary.scenes, summary.failures, s.median, s.mean, s.max
        ),
        None => format!("{} scenes, all failed", summary.scenes),
    };
    Ok((to_json(&EvalOutput { schema: SCHEMA, summary, scenes }), line))
}

fn emit(json: &str, out: Option<&Path>) -> Result<(), Failure> {
    match out {
        Some(path) => fs::write(path, json).map_err(|e| Failure::io(path, e)),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(json.as_bytes()).and_then(|_| stdout.flush()).map_err(|e| Failure::usage(e.to_string()))
        }
    }
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let (result, out, quiet) = match &cli.command {
        Command::Detect(a) => (cmd_detect(a), a.run.out.as_deref(), a.run.json_only),
        Command::Estimate(a) => (cmd_estimate(a), a.run.out.as_deref(), a.run.json_only),
        Command::Synth(a) => (cmd_synth(a), None, a.json_only),
        Command::Eval(a) => (cmd_eval(a), a.run.out.as_deref(), a.run.json_only),
    };
    match result {
        Ok((json, summary)) => match emit(&json, out) {
            Ok(()) => {
                if !quiet {
                    eprintln!("{summary}");
                }
                exit::OK
            }
            Err(f) => {
                eprintln!("error: {}", f.message);
                f.code
            }
        },
        Err(f) => {
            if !quiet {
                eprintln!("error: {}", f.message);
            }
            let body =
                ErrorOutput { schema: SCHEMA, error: ErrorBody { code: f.code, kind: f.kind, message: f.message } };
            let _ = emit(&to_json(&body), out);
            body.error.code
        }
    }
}
