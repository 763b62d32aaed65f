//! `groundloc`: calibrate a fixed camera, fit the ground-pixel regressor,
//! localize detections on the field and evaluate the result.
//!
//! Machine-readable output goes to stdout (or `--out`), diagnostics to
//! stderr. Exit codes: 0 success, 2 invalid input, 1 internal error.

use std::fs::File;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use groundloc_core::eval::{
    compare_sources, comparison_csv, evaluate, join_localizations, read_pairs_csv, read_truth_csv,
    report_csv, scatter_csv, split_sources, EvalPair, Source, DEFAULT_BUCKETS_MM,
};
use groundloc_core::extrinsics::{reprojection_report, solve_pnp};
use groundloc_core::intrinsics::calibrate;
use groundloc_core::io::{
    read_json, read_text, read_training_samples, to_json_lines, to_json_pretty, CalibrationFile,
    LandmarksFile, ViewsFile,
};
use groundloc_core::pipeline::{
    ingest_detections, localize, FrameConvention, LocalizationRecord, DEFAULT_MIN_SCORE,
};
use groundloc_core::regression::GroundRegressor;
use groundloc_core::synth::{generate_scene, SceneConfig};
use groundloc_core::Error;

mod fixed_json;

#[derive(Parser, Debug)]
#[command(
    name = "groundloc",
    version,
    about = "Monocular ground-plane localization toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Intrinsic calibration from planar-pattern views.
    CalibrateIntrinsics(CalibrateIntrinsicsArgs),
    /// Camera pose from hand-marked field landmarks.
    CalibrateExtrinsics(CalibrateExtrinsicsArgs),
    /// Per-class linear map from bounding box to ground pixel.
    FitRegressor(FitRegressorArgs),
    /// Place detections on the field plane.
    Localize(LocalizeArgs),
    /// RMSE and error statistics against ground truth.
    Evaluate(EvaluateArgs),
    /// Generate a synthetic scene directory.
    Synth(SynthArgs),
}

#[derive(Args, Debug)]
struct Output {
    /// Write the primary output here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CalibrateIntrinsicsArgs {
    /// Views file (JSON).
    views: PathBuf,
    /// Estimate the skew instead of fixing it to zero.
    #[arg(long)]
    estimate_skew: bool,
    /// Estimate the third radial coefficient.
    #[arg(long)]
    estimate_k3: bool,
    #[command(flatten)]
    output: Output,
}

#[derive(Args, Debug)]
struct CalibrateExtrinsicsArgs {
    /// Landmark markings (JSON).
    landmarks: PathBuf,
    /// Calibration file providing the intrinsics.
    #[arg(long)]
    intrinsics: PathBuf,
    /// Also write the per-landmark reprojection report (JSON).
    #[arg(long)]
    report: Option<PathBuf>,
    #[command(flatten)]
    output: Output,
}

#[derive(Args, Debug)]
struct FitRegressorArgs {
    /// Training samples (JSON lines).
    samples: PathBuf,
    /// Add bottom-center models for classes absent from the samples.
    #[arg(long)]
    with_defaults: bool,
    #[command(flatten)]
    output: Output,
}

#[derive(Args, Debug)]
struct LocalizeArgs {
    /// Detections (JSON lines).
    detections: PathBuf,
    /// Calibration file with intrinsics and pose.
    #[arg(long)]
    calibration: PathBuf,
    /// Regressor model from `fit-regressor`.
    #[arg(long)]
    model: PathBuf,
    /// Reporting frame: field or camera.
    #[arg(long, default_value = "camera")]
    frame: String,
    /// Detections scoring below this are skipped.
    #[arg(long, default_value_t = DEFAULT_MIN_SCORE)]
    min_score: f64,
    #[command(flatten)]
    output: Output,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    /// Pairs file (CSV: gt_x,gt_y,gt_theta,est_x,est_y,est_theta,source).
    pairs: Option<PathBuf>,
    /// Scene truth (CSV) to join with --localizations instead of a pairs file.
    #[arg(long, requires = "localizations", conflicts_with = "pairs")]
    truth: Option<PathBuf>,
    /// Output of `localize` (JSON lines).
    #[arg(long, requires = "truth")]
    localizations: Option<PathBuf>,
    /// Frame the localizations were reported in: field or camera.
    #[arg(long, default_value = "camera")]
    frame: String,
    /// Distance bucket boundaries, mm.
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_BUCKETS_MM)]
    buckets: Vec<f64>,
    /// Point from which bucket distances are measured, "x,y" mm.
    #[arg(long, value_delimiter = ',', num_args = 2, value_names = ["X", "Y"], default_values_t = [0.0, 0.0], allow_negative_numbers = true)]
    origin: Vec<f64>,
    /// Also write the report as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Also write a scatter CSV (x,y,series).
    #[arg(long)]
    scatter: Option<PathBuf>,
    #[command(flatten)]
    output: Output,
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Scene configuration (JSON); defaults are used for missing fields.
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Override the pixel noise standard deviation.
    #[arg(long)]
    noise_px: Option<f64>,
    /// Scene directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug)]
enum CliError {
    Input(String),
    Internal(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Input(e.to_string())
    }
}

type CliResult<T = ()> = Result<T, CliError>;

fn emit(out: Option<&Path>, content: &str) -> CliResult {
    match out {
        Some(path) => std::fs::write(path, content)
            .map_err(|e| CliError::Input(format!("{}: {e}", path.display()))),
        None => {
            let mut stdout = io::stdout().lock();
            stdout
                .write_all(content.as_bytes())
                .and_then(|_| stdout.flush())
                .map_err(|e| CliError::Internal(format!("stdout: {e}")))
        }
    }
}

fn open(path: &Path) -> CliResult<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn cmd_calibrate_intrinsics(args: &CalibrateIntrinsicsArgs) -> CliResult {
    let file: ViewsFile = read_json(&args.views)?;
    let mut flags = file.flags();
    if args.estimate_skew {
        flags.fix_skew = false;
    }
    if args.estimate_k3 {
        flags.fix_k3 = false;
    }
    let views = file.to_views()?;
    let sol = calibrate(&views, flags)?;
    eprintln!("views: {}  rmse_px: {:.9}", views.len(), sol.rmse);
    let out = CalibrationFile::new(sol.intrinsics, None, Some(sol.rmse));
    emit(args.output.out.as_deref(), &to_json_pretty(&out))
}

fn cmd_calibrate_extrinsics(args: &CalibrateExtrinsicsArgs) -> CliResult {
    let calib: CalibrationFile = read_json(&args.intrinsics)?;
    let k = calib.intrinsics()?;
    let marks: LandmarksFile = read_json(&args.landmarks)?;
    let corr = marks.correspondences()?;
    let sol = solve_pnp(&corr, &k)?;
    let report = reprojection_report(&sol.pose, &k, &corr);
    for e in &report.entries {
        eprintln!(
            "{:<24} du {:>12.6}  dv {:>12.6}  |e| {:>12.6}",
            e.name, e.residual[0], e.residual[1], e.error_px
        );
    }
    for e in report.flagged() {
        eprintln!(
            "warning: landmark '{}' may be mismarked ({:.3} px)",
            e.name, e.error_px
        );
    }
    let out = CalibrationFile::new(k, Some(&sol.pose), Some(sol.rmse));
    if let (Some(c), Some(a)) = (out.camera_center_mm, out.euler_deg) {
        eprintln!(
            "camera center mm: {:.6} {:.6} {:.6}  euler deg: {:.6} {:.6} {:.6}  rmse_px: {:.6}",
            c[0], c[1], c[2], a.omega, a.phi, a.kappa, sol.rmse
        );
    }
    if let Some(path) = &args.report {
        emit(Some(path), &to_json_pretty(&report))?;
    }
    emit(args.output.out.as_deref(), &to_json_pretty(&out))
}

fn cmd_fit_regressor(args: &FitRegressorArgs) -> CliResult {
    let samples = read_training_samples(open(&args.samples)?)?;
    let mut model = GroundRegressor::fit(&samples)?;
    if args.with_defaults {
        model = model.with_defaults();
    }
    for (class, m) in &model.classes {
        match m.rmse_px {
            Some(r) => eprintln!("{class}: rmse_px {r:.9}"),
            None => eprintln!("{class}: bottom-center default"),
        }
    }
    emit(args.output.out.as_deref(), &to_json_pretty(&model))
}

fn cmd_localize(args: &LocalizeArgs) -> CliResult {
    let conv: FrameConvention = args.frame.parse()?;
    if !(0.0..=1.0).contains(&args.min_score) {
        return Err(CliError::Input(format!(
            "--min-score {} outside [0, 1]",
            args.min_score
        )));
    }
    let calib: CalibrationFile = read_json(&args.calibration)?;
    let k = calib.intrinsics()?;
    let pose = calib.pose()?;
    let model: GroundRegressor = read_json(&args.model)?;
    let ingest = ingest_detections(open(&args.detections)?, args.min_score);
    for d in &ingest.diagnostics {
        eprintln!("{}:{}: {}", args.detections.display(), d.line, d.message);
    }
    if ingest.filtered > 0 {
        eprintln!("{} detections below --min-score", ingest.filtered);
    }
    // Pure per-detection work; collect keeps input order.
    let records: Vec<LocalizationRecord> = ingest
        .detections
        .par_iter()
        .map(|d| LocalizationRecord::from_outcome(&localize(d, &model, &k, &pose, conv)))
        .collect();
    let failed = records.iter().filter(|r| !r.is_ok()).count();
    if failed > 0 {
        eprintln!("{failed} detections could not be localized");
    }
    emit(args.output.out.as_deref(), &to_json_lines(&records))
}

fn read_localizations(path: &Path) -> CliResult<Vec<LocalizationRecord>> {
    let text = read_text(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| CliError::Input(format!("{}:{}: {e}", path.display(), i + 1)))
        })
        .collect()
}

fn load_pairs(args: &EvaluateArgs) -> CliResult<Vec<EvalPair>> {
    if let Some(path) = &args.pairs {
        return Ok(read_pairs_csv(open(path)?)
            .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?);
    }
    let (Some(truth), Some(locs)) = (&args.truth, &args.localizations) else {
        return Err(CliError::Input(
            "give a pairs file or --truth with --localizations".into(),
        ));
    };
    let conv: FrameConvention = args.frame.parse()?;
    let truth_rows = read_truth_csv(open(truth)?)
        .map_err(|e| CliError::Input(format!("{}: {e}", truth.display())))?;
    let joined = join_localizations(&truth_rows, &read_localizations(locs)?, conv)?;
    for m in &joined.missing {
        eprintln!("warning: no localization for {m}");
    }
    for m in &joined.unmatched {
        eprintln!("warning: no ground truth for {m}");
    }
    Ok(joined.pairs)
}

fn cmd_evaluate(args: &EvaluateArgs) -> CliResult {
    let pairs = load_pairs(args)?;
    let origin = (args.origin[0], args.origin[1]);
    let (ours, reference) = split_sources(&pairs);
    let (json, csv) = if !ours.is_empty() && !reference.is_empty() {
        let c = compare_sources(&ours, &reference, &args.buckets, origin)?;
        (fixed_json::to_string(&c), comparison_csv(&c)?)
    } else {
        let source = if ours.is_empty() {
            Source::Reference
        } else {
            Source::Ours
        };
        let r = evaluate(&pairs, &args.buckets, origin)?;
        eprintln!("{source}: n {}  rmse_mm {:.6}", r.count, r.rmse_mm);
        (fixed_json::to_string(&r), report_csv(source, &r)?)
    };
    if let Some(path) = &args.csv {
        emit(Some(path), &csv)?;
    }
    if let Some(path) = &args.scatter {
        emit(Some(path), &scatter_csv(&pairs)?)?;
    }
    emit(args.output.out.as_deref(), &json)
}

fn cmd_synth(args: &SynthArgs) -> CliResult {
    let mut config: SceneConfig = match &args.config {
        Some(path) => read_json(path)?,
        None => SceneConfig::default(),
    };
    if let Some(n) = args.noise_px {
        config.noise_px = n;
    }
    let scene = generate_scene(&config, args.seed)?;
    scene
        .write_to(&args.out)
        .map_err(|e| CliError::Input(format!("{}: {e}", args.out.display())))?;
    eprintln!(
        "scene written to {} ({} views, {} landmarks, {} objects)",
        args.out.display(),
        scene.views.len(),
        scene.landmarks.points.len(),
        scene.truth.len()
    );
    Ok(())
}

fn run(cli: Cli) -> CliResult {
    match &cli.command {
        Command::CalibrateIntrinsics(a) => cmd_calibrate_intrinsics(a),
        Command::CalibrateExtrinsics(a) => cmd_calibrate_extrinsics(a),
        Command::FitRegressor(a) => cmd_fit_regressor(a),
        Command::Localize(a) => cmd_localize(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Synth(a) => cmd_synth(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match std::panic::catch_unwind(|| run(cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(CliError::Input(msg))) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Ok(Err(CliError::Internal(msg))) => {
            eprintln!("internal error: {msg}");
            ExitCode::from(1)
        }
        Err(_) => ExitCode::from(1),
    }
}
