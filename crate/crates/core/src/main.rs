use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Deserialize;

use croprow::config::{self, ConfigError};
use croprow::eval::{self, Category, FrameError, Normalizer};
use croprow::field::{generate_field, render_mask};
use croprow::io::{self as fio, IoError};
use croprow::mask::{encode_pgm, load_mask, PgmError};
use croprow::scan::detect;
use croprow::sim::{run_batch, RobotPose, SimConfig};

/// Crop-row detection, closed-loop simulation and scoring on binary masks.
#[derive(Parser)]
#[command(name = "croprow", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct ConfigArgs {
    /// Config file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set scan.s=0.2`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the triangle scan on PGM masks and write one CSV row per mask.
    Detect {
        /// Mask files, processed in the given order.
        #[arg(required = true)]
        masks: Vec<PathBuf>,
        /// Output CSV.
        #[arg(short, long)]
        output: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Run closed-loop trials and write per-trial CSVs plus summary.json.
    Simulate {
        /// Output directory.
        #[arg(short, long)]
        output: PathBuf,
        /// Master seed for the batch.
        #[arg(long)]
        seed: Option<u64>,
        /// Number of trials.
        #[arg(long)]
        trials: Option<usize>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Render masks and ground truth for a list of robot poses.
    Generate {
        /// Output directory.
        #[arg(short, long)]
        output: PathBuf,
        /// CSV with columns `x,y,theta_deg`. Without it, poses are spaced
        /// along the centre row.
        #[arg(long)]
        poses: Option<PathBuf>,
        /// Number of poses when no pose file is given.
        #[arg(long, default_value_t = 10)]
        frames: usize,
        /// First pose position along the rows, m.
        #[arg(long, default_value_t = 0.0)]
        x0: f64,
        /// Spacing between poses, m.
        #[arg(long, default_value_t = 0.5)]
        dx: f64,
        /// Lateral position of every pose, m.
        #[arg(long, default_value_t = 0.0)]
        y: f64,
        /// Heading of every pose, degrees.
        #[arg(long, default_value_t = 0.0)]
        heading: f64,
        /// Field seed.
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Score detections against ground truth.
    Evaluate {
        #[arg(long)]
        detections: PathBuf,
        #[arg(long = "ground-truth")]
        ground_truth: PathBuf,
        /// CSV with columns `frame,class_id,categories`.
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Mode::DatasetMax)]
        mode: Mode,
        /// Angle normalizer for fixed mode, degrees.
        #[arg(long, default_value_t = 20.0)]
        theta_max: f64,
        /// Offset normalizer for fixed mode, px. Defaults to half of
        /// `--image-width`.
        #[arg(long)]
        p_max: Option<f64>,
        #[arg(long, default_value_t = 512)]
        image_width: usize,
        /// Require a label with at least one category for every frame.
        #[arg(long)]
        strict: bool,
        /// Output directory.
        #[arg(short, long)]
        output: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    DatasetMax,
    Fixed,
}

/// Validation failures exit with 1, I/O failures with 2.
enum Failure {
    Validation(String),
    Io(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Validation(_) => 1,
            Failure::Io(_) => 2,
        }
    }
}

fn invalid(e: impl std::fmt::Display) -> Failure {
    Failure::Validation(e.to_string())
}

impl From<IoError> for Failure {
    fn from(e: IoError) -> Self {
        if e.is_io() {
            Failure::Io(e.to_string())
        } else {
            Failure::Validation(e.to_string())
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Io { .. } => Failure::Io(e.to_string()),
            _ => Failure::Validation(e.to_string()),
        }
    }
}

fn load_config(args: &ConfigArgs) -> Result<SimConfig, Failure> {
    let mut cfg = SimConfig::default();
    if let Some(path) = &args.config {
        config::apply_file(&mut cfg, path)?;
    }
    for kv in &args.set {
        config::apply_override(&mut cfg, kv)?;
    }
    Ok(cfg)
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).map_err(|e| Failure::Io(format!("{}: {e}", dir.display())))
}

fn cmd_detect(masks: &[PathBuf], output: &Path, args: &ConfigArgs) -> Result<(), Failure> {
    let cfg = load_config(args)?;
    cfg.scan.validate().map_err(invalid)?;
    let results: Vec<Result<Vec<String>, PgmError>> = masks
        .par_iter()
        .map(|path| {
            let mask = load_mask(path)?;
            let det = detect(&mask, &cfg.scan);
            Ok(fio::detection_record(&fio::frame_key(path), &path.display().to_string(), &det))
        })
        .collect();

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (path, r) in masks.iter().zip(results) {
        match r {
            Ok(row) => rows.push(row),
            Err(e) => failures.push((path, e)),
        }
    }
    fio::write_csv(output, &fio::DETECT_HEADER, rows.iter().cloned())?;
    let misses = rows.iter().filter(|r| r.last().is_some_and(|f| f == "1")).count();
    println!("{} masks, {} detections, {} without detection", rows.len(), rows.len() - misses, misses);
    if failures.is_empty() {
        return Ok(());
    }
    for (path, e) in &failures {
        eprintln!("error: {}: {e}", path.display());
    }
    let msg = format!("{} of {} masks could not be processed", failures.len(), masks.len());
    if failures.iter().any(|(_, e)| matches!(e, PgmError::Io(_))) {
        Err(Failure::Io(msg))
    } else {
        Err(Failure::Validation(msg))
    }
}

fn cmd_simulate(output: &Path, seed: Option<u64>, trials: Option<usize>, args: &ConfigArgs) -> Result<(), Failure> {
    let mut cfg = load_config(args)?;
    if let Some(s) = seed {
        cfg.trial.seed = s;
    }
    if let Some(t) = trials {
        cfg.trial.trials = t;
    }
    cfg.validate().map_err(invalid)?;
    let (logs, summary) = run_batch(&cfg).map_err(invalid)?;

    create_dir(output)?;
    for (i, log) in logs.iter().enumerate() {
        fio::write_atomic(&output.join(format!("trial_{i:03}.csv")), &fio::trial_csv_bytes(log))?;
    }
    fio::write_atomic(&output.join("config.txt"), config::render(&cfg).as_bytes())?;
    fio::write_json(&output.join("summary.json"), "simulate", &summary)?;

    let show = |v: Option<f64>| v.map_or("n/a".to_string(), fio::f6);
    println!("trials {} completed {} aborted {}", summary.trials, summary.completed, summary.aborted);
    println!(
        "epsilon start {} end {}",
        show(summary.mean_start_epsilon),
        show(summary.mean_end_epsilon)
    );
    println!(
        "heading offset deg mean {} max {}",
        show(summary.mean_heading_offset_deg),
        show(summary.max_heading_offset_deg)
    );
    println!(
        "displacement cm mean {} max {}",
        show(summary.mean_displacement_cm),
        show(summary.max_displacement_cm)
    );
    Ok(())
}

#[derive(Deserialize)]
struct PoseRow {
    x: f64,
    y: f64,
    theta_deg: f64,
}

fn read_poses(path: &Path) -> Result<Vec<RobotPose>, Failure> {
    let mut r = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
    r.deserialize::<PoseRow>()
        .map(|row| {
            let row = row.map_err(|e| invalid(format!("{}: {e}", path.display())))?;
            Ok(RobotPose::new(row.x, row.y, row.theta_deg.to_radians()))
        })
        .collect()
}

struct PoseLine {
    frames: usize,
    x0: f64,
    dx: f64,
    y: f64,
    heading: f64,
}

fn cmd_generate(
    output: &Path,
    poses: Option<&Path>,
    line: PoseLine,
    seed: Option<u64>,
    args: &ConfigArgs,
) -> Result<(), Failure> {
    let mut cfg = load_config(args)?;
    if let Some(s) = seed {
        cfg.field.seed = s;
    }
    cfg.field.validate().map_err(invalid)?;
    cfg.camera.validate().map_err(invalid)?;
    let poses = match poses {
        Some(p) => read_poses(p)?,
        None => (0..line.frames)
            .map(|i| RobotPose::new(line.x0 + i as f64 * line.dx, line.y, line.heading.to_radians()))
            .collect(),
    };
    let field = generate_field(&cfg.field).map_err(invalid)?;
    create_dir(output)?;

    let cam = &cfg.camera;
    let rows: Vec<Result<Vec<String>, Failure>> = poses
        .par_iter()
        .enumerate()
        .map(|(i, pose)| {
            let (mask, gt) = render_mask(&field, pose, cam).map_err(invalid)?;
            let key = format!("frame_{i:04}");
            let file = format!("{key}.pgm");
            fio::write_atomic(&output.join(&file), &encode_pgm(&mask))?;
            Ok(fio::gt_record(&key, &file, pose, gt.as_ref(), cam.image_w, cam.image_h))
        })
        .collect();
    let rows = rows.into_iter().collect::<Result<Vec<_>, _>>()?;
    fio::write_csv(&output.join("ground_truth.csv"), &fio::GT_HEADER, rows)?;
    println!("{} masks written to {}", poses.len(), output.display());
    Ok(())
}

struct EvalArgs<'a> {
    detections: &'a Path,
    ground_truth: &'a Path,
    labels: Option<&'a Path>,
    mode: Normalizer,
    strict: bool,
    output: &'a Path,
}

#[derive(serde::Serialize)]
struct EvalSummary {
    mode: &'static str,
    frames: usize,
    skipped_without_ground_truth: usize,
    failed_detections: usize,
    report: eval::EpsilonReport,
}

fn cmd_evaluate(a: EvalArgs<'_>) -> Result<(), Failure> {
    let dets = fio::read_detections(a.detections)?;
    let gts = fio::read_ground_truth(a.ground_truth)?;
    let gt_by = fio::by_frame(&gts, |r| &r.frame);
    let det_by = fio::by_frame(&dets, |r| &r.frame);
    if let Some(d) = dets.iter().find(|d| !gt_by.contains_key(&d.frame)) {
        return Err(invalid(format!("frame {:?} has no ground-truth row", d.frame)));
    }
    if let Some(g) = gts.iter().find(|g| !det_by.contains_key(&g.frame)) {
        return Err(invalid(format!("frame {:?} has no detection row", g.frame)));
    }
    let labels = match a.labels {
        Some(p) => Some(fio::read_labels(p)?),
        None => None,
    };
    let label_by = labels.as_ref().map(|l| fio::by_frame(l, |r| &r.frame));

    let mut frames = Vec::new();
    let mut skipped = 0;
    for d in &dets {
        let g = gt_by[&d.frame];
        let (Some(gt_theta), Some(gt_p)) = (g.delta_theta_gt, g.delta_p_gt) else {
            skipped += 1;
            continue;
        };
        let mut f = match (d.no_detection, d.delta_theta, d.delta_p) {
            (0, Some(t), Some(p)) => FrameError::new((t - gt_theta).abs(), (p - gt_p).abs()),
            (0, _, _) => return Err(invalid(format!("frame {:?}: missing detection values", d.frame))),
            _ => FrameError::failed(),
        };
        if let Some(by) = &label_by {
            match by.get(&d.frame) {
                Some(l) => {
                    let cats = eval::parse_categories(l.categories.as_deref().unwrap_or(""))
                        .map_err(|e| invalid(format!("frame {:?}: {e}", d.frame)))?;
                    f = f.with_labels(cats, l.class_id);
                }
                None if a.strict => return Err(invalid(format!("frame {:?} has no label row", d.frame))),
                None => {}
            }
        }
        frames.push(f);
    }
    if a.strict && label_by.is_none() {
        return Err(invalid("--strict needs --labels"));
    }
    if a.strict {
        eval::per_category_report(&frames, a.mode, true).map_err(invalid)?;
    }
    let report = eval::epsilon(&frames, a.mode).map_err(invalid)?;
    let table = eval::per_category_report(&frames, a.mode, false).map_err(invalid)?;

    create_dir(a.output)?;
    let mode = match a.mode {
        Normalizer::DatasetMax => "dataset-max",
        Normalizer::Fixed { .. } => "fixed",
    };
    let failed = frames.iter().filter(|f| f.failed).count();
    fio::write_csv(
        &a.output.join("overall.csv"),
        &["mode", "frames", "skipped", "failed", "theta_max", "p_max", "epsilon"],
        [vec![
            mode.to_string(),
            report.n.to_string(),
            skipped.to_string(),
            failed.to_string(),
            fio::f6(report.theta_max_used),
            fio::f6(report.p_max_used),
            fio::f6(report.epsilon),
        ]],
    )?;
    fio::write_csv(
        &a.output.join("per_class.csv"),
        &["class", "categories", "epsilon"],
        table.per_class.iter().map(|(k, e)| {
            let cats: String = table.class_categories[k].iter().map(|c| c.letter()).collect();
            vec![k.clone(), cats, fio::f6(*e)]
        }),
    )?;
    fio::write_csv(
        &a.output.join("per_category.csv"),
        &["category", "field_variation", "classes", "epsilon"],
        Category::ALL.iter().filter_map(|c| {
            let e = table.per_category.get(c)?;
            let classes = table.class_categories.values().filter(|s| s.contains(c)).count();
            Some(vec![c.letter().to_string(), c.name().to_string(), classes.to_string(), fio::f6(*e)])
        }),
    )?;
    fio::write_json(
        &a.output.join("summary.json"),
        "evaluate",
        &EvalSummary {
            mode,
            frames: report.n,
            skipped_without_ground_truth: skipped,
            failed_detections: failed,
            report: report.clone(),
        },
    )?;
    println!("epsilon {} over {} frames ({mode})", fio::f6(report.epsilon), report.n);
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Detect { masks, output, cfg } => cmd_detect(&masks, &output, &cfg),
        Command::Simulate {
            output,
            seed,
            trials,
            cfg,
        } => cmd_simulate(&output, seed, trials, &cfg),
        Command::Generate {
            output,
            poses,
            frames,
            x0,
            dx,
            y,
            heading,
            seed,
            cfg,
        } => cmd_generate(
            &output,
            poses.as_deref(),
            PoseLine {
                frames,
                x0,
                dx,
                y,
                heading,
            },
            seed,
            &cfg,
        ),
        Command::Evaluate {
            detections,
            ground_truth,
            labels,
            mode,
            theta_max,
            p_max,
            image_width,
            strict,
            output,
        } => {
            let mode = match mode {
                Mode::DatasetMax => Normalizer::DatasetMax,
                Mode::Fixed => Normalizer::Fixed {
                    theta_max,
                    p_max: p_max.unwrap_or(image_width as f64 / 2.0),
                },
            };
            cmd_evaluate(EvalArgs {
                detections: &detections,
                ground_truth: &ground_truth,
                labels: labels.as_deref(),
                mode,
                strict,
                output: &output,
            })
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Validation(m) | Failure::Io(m) => eprintln!("error: {m}"),
            }
            ExitCode::from(f.code())
        }
    }
}
