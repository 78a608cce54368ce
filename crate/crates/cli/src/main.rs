//! `boxgt`: ground-truth rendering, evaluation, IoU and decoding from the
//! command line.

use std::ffi::OsString;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use boxgt_core::capture::{provenance, render_capture, write_debug_renders, CaptureError};
use boxgt_core::decode::{decode, depth_stats, DepthStats};
use boxgt_core::eval::{evaluate, Detection, EvalConfig};
use boxgt_core::geometry::{GravityBox, Vec3};
use boxgt_core::io::{
    detections_text, format_number, load_annotations, load_depth_png, load_manifest, read_detections, read_ground_truth_path, read_predictions,
    report_text, report_tsv, write_detections, write_ground_truth, write_text, IoError,
};
use boxgt_core::metrics::{iou_gravity, iou_monte_carlo};
use boxgt_core::pipeline::PipelineParams;
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

const THREADS_ENV: &str = "CUBIFY_THREADS";

#[derive(Debug, Parser)]
#[command(name = "boxgt", version, about = "Cut-box ground truth, evaluation and decoding")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render cut-box ground truth for every frame of a capture.
    RenderGt(RenderGtArgs),
    /// Score detections against ground truth.
    Eval(EvalArgs),
    /// IoU of two gravity-aligned boxes.
    Iou(IouArgs),
    /// Decode raw predictions into gravity-aligned detections.
    Decode(DecodeArgs),
}

#[derive(Debug, Args)]
struct RenderGtArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Render resolution, WIDTHxHEIGHT.
    #[arg(long, default_value = "320x240", value_parser = parse_resolution)]
    mask_res: (u32, u32),
    #[arg(long, default_value_t = 0.25)]
    keep_ratio: f64,
    /// Meters past the measured scene depth before a ray counts as occluded.
    #[arg(long, default_value_t = 0.05)]
    occlusion_margin: f64,
    /// Worker threads; 0 uses all cores. CUBIFY_THREADS takes precedence.
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Also write per-box masks and depth renders here.
    #[arg(long)]
    debug_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Ground-truth file, or directory of *.gt.jsonl files.
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    dets: PathBuf,
    #[arg(long, default_value = "0.25,0.5", value_delimiter = ',')]
    iou: Vec<f64>,
    #[arg(long, default_value_t = 100)]
    max_dets: usize,
    /// Distance buckets in meters, LO-HI,...
    #[arg(long, default_value = "0-2,2-4,4-5", value_delimiter = ',', value_parser = parse_bucket)]
    buckets: Vec<(f64, f64)>,
    #[arg(long)]
    class_agnostic: bool,
    /// Recall points for interpolated AP; 0 integrates exactly.
    #[arg(long, default_value_t = 101)]
    ap_points: usize,
    /// Write report.txt and report.tsv here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct IouArgs {
    /// cx,cy,cz,l,w,h,yaw
    #[arg(long, allow_hyphen_values = true, value_parser = parse_box)]
    a: GravityBox,
    #[arg(long, allow_hyphen_values = true, value_parser = parse_box)]
    b: GravityBox,
    #[arg(long)]
    mc_samples: Option<u64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum StatsSource {
    /// Predictions are already metric.
    None,
    /// Normalize with each frame's sensor depth.
    FromSensor,
}

#[derive(Debug, Args)]
struct DecodeArgs {
    #[arg(long)]
    preds: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, value_enum, default_value_t = StatsSource::None)]
    depth_stats: StatsSource,
    /// Detections file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug)]
enum CliError {
    Validation(String),
    Io(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Io(_) => 2,
        }
    }

    fn invalid(msg: impl Display) -> Self {
        CliError::Validation(msg.to_string())
    }
}

impl Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Validation(m) | CliError::Io(m) => f.write_str(m),
        }
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        if e.is_io() {
            CliError::Io(e.to_string())
        } else {
            CliError::Validation(e.to_string())
        }
    }
}

impl From<CaptureError> for CliError {
    fn from(e: CaptureError) -> Self {
        if e.is_io() {
            CliError::Io(e.to_string())
        } else {
            CliError::Validation(e.to_string())
        }
    }
}

fn parse_resolution(s: &str) -> Result<(u32, u32), String> {
    let (w, h) = s.split_once('x').ok_or("expected WIDTHxHEIGHT")?;
    let w: u32 = w.parse().map_err(|e| format!("width: {e}"))?;
    let h: u32 = h.parse().map_err(|e| format!("height: {e}"))?;
    Ok((w, h))
}

fn parse_bucket(s: &str) -> Result<(f64, f64), String> {
    let (lo, hi) = s.split_once('-').ok_or("expected LO-HI")?;
    Ok((lo.parse().map_err(|e| format!("{e}"))?, hi.parse().map_err(|e| format!("{e}"))?))
}

fn parse_box(s: &str) -> Result<GravityBox, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| f64::from_str(p.trim()).map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<_, _>>()?;
    let [cx, cy, cz, l, w, h, yaw] = v[..] else {
        return Err(format!("expected 7 values cx,cy,cz,l,w,h,yaw, got {}", v.len()));
    };
    GravityBox::new(Vec3::new(cx, cy, cz), Vec3::new(l, w, h), yaw).map_err(|e| e.to_string())
}

fn thread_count(flag: usize) -> Result<usize, CliError> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| CliError::invalid(format!("{THREADS_ENV}={v:?} is not a thread count"))),
        Err(_) => Ok(flag),
    }
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))
}

fn render_gt(args: RenderGtArgs) -> Result<(), CliError> {
    let params = PipelineParams {
        render_resolution: args.mask_res,
        keep_ratio: args.keep_ratio,
        occlusion_margin: args.occlusion_margin,
        ..PipelineParams::default()
    };
    params.validate().map_err(CliError::invalid)?;
    let threads = thread_count(args.threads)?;
    let manifest = load_manifest(&args.manifest)?;
    let annotations = load_annotations(&manifest.annotations)?;
    log::info!(
        "capture {}: {} frames, {} boxes, {threads} threads",
        manifest.capture_id,
        manifest.frames.len(),
        annotations.boxes().len()
    );
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::invalid(format!("thread pool: {e}")))?;
    let outputs = pool.install(|| render_capture(&manifest, &annotations, &params))?;

    for (frame, out) in manifest.frames.iter().zip(&outputs) {
        let s = out.stats;
        eprintln!(
            "{}",
            json!({
                "frame_id": frame.frame_id,
                "elapsed_ms": out.elapsed.as_secs_f64() * 1e3,
                "boxes": s.boxes,
                "culled": s.culled,
                "empty_render": s.empty_render,
                "dropped_cut": s.dropped_cut,
                "dropped_visibility": s.dropped_visibility,
                "retained": s.retained,
            })
        );
    }

    create_dir(&args.out)?;
    let path = args.out.join(format!("{}.gt.jsonl", manifest.capture_id));
    let frames: Vec<_> = outputs.into_iter().map(|o| o.gt).collect();
    write_ground_truth(&path, &provenance(&manifest, &annotations, &params), &frames)?;

    if let Some(dir) = &args.debug_dir {
        create_dir(dir)?;
        let written = pool.install(|| {
            manifest
                .frames
                .iter()
                .map(|f| write_debug_renders(dir, &annotations, f, &params))
                .sum::<Result<usize, CaptureError>>()
        })?;
        log::info!("{written} debug renders in {}", dir.display());
    }
    Ok(())
}

fn eval(args: EvalArgs) -> Result<(), CliError> {
    let config = EvalConfig {
        iou_thresholds: args.iou,
        max_detections_per_frame: args.max_dets,
        class_agnostic: args.class_agnostic,
        distance_buckets: args.buckets,
        interpolation_points: args.ap_points,
        ..EvalConfig::default()
    };
    config.validate().map_err(CliError::invalid)?;
    let gt = read_ground_truth_path(&args.gt)?;
    let dets = read_detections(&args.dets)?;
    let report = evaluate(&dets, &gt, &config).map_err(CliError::invalid)?;
    let text = report_text(&report);
    print!("{text}");
    if let Some(dir) = &args.out {
        create_dir(dir)?;
        let config_json = serde_json::to_string(&config).expect("config serializes");
        write_text(&dir.join("report.txt"), &format!("{text}config {config_json}\n"))?;
        write_text(&dir.join("report.tsv"), &format!("# config {config_json}\n{}", report_tsv(&report)))?;
    }
    Ok(())
}

fn iou(args: IouArgs) -> Result<(), CliError> {
    println!("iou {}", format_number(iou_gravity(&args.a, &args.b)));
    if let Some(n) = args.mc_samples {
        if n == 0 {
            return Err(CliError::invalid("--mc-samples must be positive"));
        }
        let mc = iou_monte_carlo(&args.a.to_box3d(), &args.b.to_box3d(), n, args.seed);
        println!("iou_mc {}", format_number(mc.iou));
        println!("iou_mc_std_err {}", format_number(mc.std_err));
    }
    Ok(())
}

fn decode_cmd(args: DecodeArgs) -> Result<(), CliError> {
    let manifest = load_manifest(&args.manifest)?;
    let preds = read_predictions(&args.preds)?;
    let mut stats: Vec<Option<DepthStats>> = vec![None; manifest.frames.len()];
    if args.depth_stats == StatsSource::FromSensor {
        for (slot, frame) in stats.iter_mut().zip(&manifest.frames) {
            let path = frame
                .sensor_depth
                .as_ref()
                .ok_or_else(|| CliError::invalid(format!("frame {:?} has no sensor depth", frame.frame_id)))?;
            let s = depth_stats(&load_depth_png(path)?).map_err(|e| CliError::invalid(format!("frame {:?}: {e}", frame.frame_id)))?;
            *slot = Some(s);
        }
    }

    let mut dets = Vec::with_capacity(preds.len());
    let mut rejected = 0;
    for (frame_id, class_id, p) in &preds {
        let i = manifest
            .frames
            .iter()
            .position(|f| &f.frame_id == frame_id)
            .ok_or_else(|| CliError::invalid(format!("prediction for unknown frame {frame_id:?}")))?;
        match decode(p, &manifest.frames[i].camera, stats[i].as_ref()) {
            Ok(bbox) => dets.push(Detection {
                frame_id: frame_id.clone(),
                score: p.score,
                bbox,
                box2d: None,
                class_id: *class_id,
            }),
            Err(e) if e.is_rejection() => {
                log::warn!("frame {frame_id}: rejected prediction: {e}");
                rejected += 1;
            }
            Err(e) => return Err(CliError::invalid(format!("frame {frame_id:?}: {e}"))),
        }
    }
    log::info!("decoded {} predictions, rejected {rejected}", dets.len());

    let prov = json!({
        "generator": concat!("boxgt ", env!("CARGO_PKG_VERSION")),
        "capture_id": manifest.capture_id,
        "predictions": args.preds.display().to_string(),
        "depth_stats": match args.depth_stats {
            StatsSource::None => "none",
            StatsSource::FromSensor => "from-sensor",
        },
    });
    match &args.out {
        Some(path) => write_detections(path, Some(&prov), &dets)?,
        None => print!("{}", detections_text(Some(&prov), &dets)),
    }
    Ok(())
}

fn run(argv: impl IntoIterator<Item = OsString>) -> Result<(), CliError> {
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return Ok(());
        }
        Err(e) => {
            let _ = e.print();
            return Err(CliError::Validation(String::new()));
        }
    };
    match cli.command {
        Command::RenderGt(a) => render_gt(a),
        Command::Eval(a) => eval(a),
        Command::Iou(a) => iou(a),
        Command::Decode(a) => decode_cmd(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(std::env::args_os()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if !e.to_string().is_empty() {
                eprintln!("error: {e}");
            }
            ExitCode::from(e.exit_code())
        }
    }
}
