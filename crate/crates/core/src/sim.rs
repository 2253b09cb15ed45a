//! Closed-loop row following on synthetic fields.
//!
//! Every frame renders the mask seen from the current pose, runs the
//! triangle scan, scores the detection against the analytic ground truth
//! and steers a unicycle robot at constant speed. Once the end-of-row
//! trigger fires, the robot switches to the open-loop exit manoeuvre and
//! halts after its duration; the final heading and lateral offsets relative
//! to the followed row are recorded.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::control::{exit_omega, steer_saturated, ControlError, ControllerConfig, ExitCommand, ExitConfig};
use crate::eor::{eor_scan, EorState, DEFAULT_BETA};
use crate::eval::{frame_epsilon, FrameError, Normalizer};
use crate::field::{
    centreline_heading, centreline_point, generate_field, render_mask, CameraSpec, Field, FieldError,
    FieldSpec,
};
use crate::scan::{detect, ScanConfig, ScanError};

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Scan(#[from] ScanError),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error("trial.{0} is invalid: {1}")]
    Trial(&'static str, String),
}

/// Planar pose in the field frame. `theta = 0` points down the rows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RobotPose {
    pub x: f64,
    pub y: f64,
    /// Radians, counter-clockwise.
    pub theta: f64,
}

impl RobotPose {
    pub const fn new(x: f64, y: f64, theta: f64) -> Self {
        Self { x, y, theta }
    }
}

/// Wraps an angle to `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    w
}

/// One explicit-Euler unicycle step.
pub fn step_kinematics(pose: &RobotPose, v: f64, omega: f64, dt: f64) -> RobotPose {
    let (s, c) = pose.theta.sin_cos();
    RobotPose {
        x: pose.x + v * c * dt,
        y: pose.y + v * s * dt,
        theta: wrap_angle(pose.theta + omega * dt),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialConfig {
    pub frames_max: usize,
    /// Control period, s.
    pub dt: f64,
    /// Initial headings are drawn uniformly from `±initial_heading_range` degrees.
    pub initial_heading_range: f64,
    pub trials: usize,
    pub seed: u64,
    /// Consecutive frames without a detection before the trial is aborted.
    pub abort_after: usize,
    pub eor_beta: f64,
    /// Consecutive first-band frames needed before end-of-row scanning is
    /// armed.
    pub eor_arm_after: usize,
    /// Start position, m along the rows and laterally.
    pub start_x: f64,
    pub start_y: f64,
}

impl Default for TrialConfig {
    fn default() -> Self {
        Self {
            frames_max: 200,
            dt: 0.1,
            initial_heading_range: 20.0,
            trials: 20,
            seed: 0,
            abort_after: 10,
            eor_beta: DEFAULT_BETA,
            eor_arm_after: 10,
            start_x: 4.0,
            start_y: 0.0,
        }
    }
}

impl TrialConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.frames_max == 0 {
            return Err(SimError::Trial("frames_max", "must be at least 1".into()));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(SimError::Trial("dt", format!("must be positive, got {}", self.dt)));
        }
        if self.trials == 0 {
            return Err(SimError::Trial("trials", "must be at least 1".into()));
        }
        if !(self.initial_heading_range >= 0.0 && self.initial_heading_range < 90.0) {
            return Err(SimError::Trial(
                "initial_heading_range",
                format!("must lie in [0, 90), got {}", self.initial_heading_range),
            ));
        }
        if self.abort_after == 0 {
            return Err(SimError::Trial("abort_after", "must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.eor_beta) {
            return Err(SimError::Trial("eor_beta", format!("must lie in [0, 1), got {}", self.eor_beta)));
        }
        Ok(())
    }
}

/// Everything a trial needs.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SimConfig {
    pub field: FieldSpec,
    pub camera: CameraSpec,
    pub scan: ScanConfig,
    pub control: ControllerConfig,
    pub exit: ExitConfig,
    pub trial: TrialConfig,
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        self.field.validate()?;
        self.camera.validate()?;
        self.scan.validate_for(self.camera.image_h)?;
        self.control.validate()?;
        self.exit.validate()?;
        self.trial.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// Anchor found in the first band.
    Follow,
    /// Anchor band shifted or lost; the end-of-row detector is running.
    Approach,
    /// Open-loop exit manoeuvre.
    Exit,
    /// Stopped.
    Halt,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Follow => "follow",
            Phase::Approach => "approach",
            Phase::Exit => "exit",
            Phase::Halt => "halt",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrameRecord {
    pub frame: usize,
    /// Seconds since the trial started.
    pub t: f64,
    pub phase: Phase,
    pub pose: RobotPose,
    pub detected: bool,
    pub anchor_x: Option<usize>,
    pub shifts: Option<usize>,
    pub pr_x: Option<usize>,
    pub delta_theta: Option<f64>,
    pub delta_p: Option<f64>,
    pub delta_theta_gt: Option<f64>,
    pub delta_p_gt: Option<f64>,
    /// Score of the ground-truth tracking error against the fixed
    /// normalizers: 1 when the robot sits on the row, pointing along it.
    pub epsilon: Option<f64>,
    /// Score of the detected errors against the ground-truth errors.
    pub detection_epsilon: Option<f64>,
    /// Steering command in controller convention (positive turns right).
    pub omega: f64,
    pub eor_filtered_y: Option<f64>,
    pub eor_triggered: bool,
    /// Seconds since the exit manoeuvre started.
    pub exit_t: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum TrialOutcome {
    /// Exit manoeuvre executed and the robot halted.
    Completed,
    /// `frames_max` reached before the end-of-row trigger.
    NotFinished,
    /// Too many consecutive frames without a detection.
    Aborted { frame: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TerminalOffsets {
    /// Absolute heading relative to the row direction, degrees.
    pub heading_deg: f64,
    /// Absolute lateral distance from the followed row's centreline
    /// extension, cm.
    pub displacement_cm: f64,
    /// Seconds between the exit trigger and the halt.
    pub halt_after: f64,
    /// Steering command captured at the trigger.
    pub omega_eor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialLog {
    pub initial_heading_deg: f64,
    pub records: Vec<FrameRecord>,
    pub outcome: TrialOutcome,
    pub exit_executed: bool,
    pub terminal: Option<TerminalOffsets>,
}

impl TrialLog {
    /// Scores of the row-following part of the trial: every frame before
    /// the final uninterrupted run of end-of-row approach frames.
    pub fn servo_epsilons(&self) -> Vec<f64> {
        let closed: Vec<&FrameRecord> = self
            .records
            .iter()
            .take_while(|r| matches!(r.phase, Phase::Follow | Phase::Approach))
            .collect();
        let tail = closed.iter().rev().take_while(|r| r.phase == Phase::Approach).count();
        closed[..closed.len() - tail]
            .iter()
            .filter_map(|r| r.epsilon)
            .collect()
    }

    /// First servo frame after which the score never drops below `level`.
    pub fn settle_frame(&self, level: f64) -> Option<usize> {
        let eps = self.servo_epsilons();
        let last_bad = eps.iter().rposition(|&e| e < level);
        match last_bad {
            None if eps.is_empty() => None,
            None => Some(0),
            Some(i) if i + 1 < eps.len() => Some(i + 1),
            Some(_) => None,
        }
    }
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Mean of the first and last `k` servo scores.
pub fn start_end_epsilon(log: &TrialLog, k: usize) -> (Option<f64>, Option<f64>) {
    let eps = log.servo_epsilons();
    let k = k.min(eps.len());
    (mean(&eps[..k]), mean(&eps[eps.len() - k..]))
}

/// Initial heading, degrees, drawn from the trial seed.
pub fn initial_heading(trial: &TrialConfig) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(trial.seed);
    let r = trial.initial_heading_range;
    if r == 0.0 {
        0.0
    } else {
        rng.random_range(-r..=r)
    }
}

/// Runs one trial with the heading drawn from `cfg.trial.seed`.
pub fn run_trial(cfg: &SimConfig) -> Result<TrialLog, SimError> {
    run_trial_from(cfg, initial_heading(&cfg.trial))
}

/// Runs one trial from an explicit initial heading in degrees.
pub fn run_trial_from(cfg: &SimConfig, heading_deg: f64) -> Result<TrialLog, SimError> {
    cfg.validate()?;
    let field = generate_field(&cfg.field)?;
    Ok(simulate(&field, cfg, heading_deg))
}

fn simulate(field: &Field, cfg: &SimConfig, heading_deg: f64) -> TrialLog {
    let trial = &cfg.trial;
    let (w, h) = (cfg.camera.image_w, cfg.camera.image_h);
    let normalizer = Normalizer::live(w);
    let (theta_max, p_max) = match normalizer {
        Normalizer::Fixed { theta_max, p_max } => (theta_max, p_max),
        Normalizer::DatasetMax => unreachable!(),
    };
    let roi_h = cfg.scan.roi_height(h);

    let mut pose = RobotPose::new(trial.start_x, trial.start_y, wrap_angle(heading_deg.to_radians()));
    let mut eor = EorState::new(trial.eor_beta, roi_h);
    let mut records = Vec::new();
    let mut command = 0.0;
    let mut misses = 0usize;
    let mut follow_run = 0usize;
    let mut armed = false;
    let mut followed_row: Option<usize> = None;
    let mut trigger: Option<(usize, f64)> = None;
    let mut outcome = TrialOutcome::NotFinished;

    for frame in 0..trial.frames_max {
        let t = frame as f64 * trial.dt;
        let (mask, gt) = render_mask(field, &pose, &cfg.camera).expect("validated camera");
        let det = detect(&mask, &cfg.scan);
        if let Some(g) = gt.filter(|g| g.visible) {
            followed_row = Some(g.row_index);
        }

        let in_first_band = det.anchor.valid && det.anchor.n == 0;
        if in_first_band && !armed {
            follow_run += 1;
            armed = follow_run >= trial.eor_arm_after;
        } else if !armed {
            follow_run = 0;
        }
        let engaged = armed && !in_first_band;
        if engaged {
            // Bands that failed the anchor test; all of them when none passed.
            let failed = if det.anchor.valid { det.anchor.n } else { cfg.scan.n_max + 1 };
            eor.last_n = failed;
            if let Ok(Some(y)) = eor_scan(&mask, failed, roi_h) {
                eor.update(y as f64);
            }
        }

        let gt_errors = gt
            .filter(|g| g.visible)
            .map(|g| (g.delta_theta(h), g.delta_p(w)));
        // How far the robot is from the ideal pose, as seen by the camera.
        let epsilon = gt_errors.map(|(gt_theta, gt_p)| {
            frame_epsilon(&FrameError::new(gt_theta.abs(), gt_p.abs()), theta_max, p_max)
        });
        // How well the detector reproduced the ground truth.
        let detection_epsilon = gt_errors.map(|(gt_theta, gt_p)| match det.found {
            Some(found) => frame_epsilon(
                &FrameError::new(
                    (found.error.delta_theta - gt_theta).abs(),
                    (found.error.delta_p - gt_p).abs(),
                ),
                theta_max,
                p_max,
            ),
            None => frame_epsilon(&FrameError::failed(), theta_max, p_max),
        });

        match det.found {
            Some(found) => {
                misses = 0;
                command = steer_saturated(&found.error, &cfg.control);
            }
            None => misses += 1,
        }

        let phase = if engaged { Phase::Approach } else { Phase::Follow };
        let mut record = FrameRecord {
            frame,
            t,
            phase,
            pose,
            detected: det.is_found(),
            anchor_x: det.found.map(|f| f.row.anchor.x),
            shifts: det.found.map(|f| f.row.knee.y / roi_h.max(1)),
            pr_x: det.found.map(|f| f.row.p_r.x),
            delta_theta: det.found.map(|f| f.error.delta_theta),
            delta_p: det.found.map(|f| f.error.delta_p),
            delta_theta_gt: gt_errors.map(|e| e.0),
            delta_p_gt: gt_errors.map(|e| e.1),
            epsilon,
            detection_epsilon,
            omega: command,
            eor_filtered_y: eor.filtered_y,
            eor_triggered: eor.triggered,
            exit_t: None,
        };

        if eor.triggered {
            // The command in force at the trigger seeds the exit profile.
            record.phase = Phase::Exit;
            record.exit_t = Some(0.0);
            trigger = Some((frame, command));
            records.push(record);
            break;
        }
        if misses >= trial.abort_after {
            records.push(record);
            outcome = TrialOutcome::Aborted { frame };
            break;
        }
        records.push(record);
        // Positive commands turn right, i.e. clockwise in the field frame.
        pose = step_kinematics(&pose, cfg.control.v, -command, trial.dt);
    }

    let mut terminal = None;
    if let Some((trigger_frame, omega_eor)) = trigger {
        let exit = ExitConfig {
            omega_eor,
            ..cfg.exit.clone()
        };
        let t0 = trigger_frame as f64 * trial.dt;
        let mut exit_t = 0.0;
        let mut frame = trigger_frame;
        loop {
            let cmd = exit_omega(exit_t, &exit);
            match cmd {
                ExitCommand::Turn(omega) => {
                    let step = trial.dt.min(exit.t_e - exit_t);
                    if frame != trigger_frame {
                        records.push(exit_record(frame, t0 + exit_t, Phase::Exit, pose, omega, &eor, exit_t));
                    }
                    pose = step_kinematics(&pose, cfg.control.v, -omega, step);
                    exit_t += step;
                    // Land exactly on the halt time despite rounding.
                    if (exit.t_e - exit_t).abs() < 1e-9 {
                        exit_t = exit.t_e;
                    }
                    frame += 1;
                }
                ExitCommand::Halt => {
                    records.push(exit_record(frame, t0 + exit_t, Phase::Halt, pose, 0.0, &eor, exit_t));
                    break;
                }
            }
        }
        let row = followed_row.unwrap_or_else(|| nearest_row(field, &pose));
        let (heading_deg, displacement_cm) = offsets_from_row(field, row, &pose);
        terminal = Some(TerminalOffsets {
            heading_deg,
            displacement_cm,
            halt_after: exit_t,
            omega_eor,
        });
        outcome = TrialOutcome::Completed;
    }

    TrialLog {
        initial_heading_deg: heading_deg,
        records,
        outcome,
        exit_executed: terminal.is_some(),
        terminal,
    }
}

fn exit_record(
    frame: usize,
    t: f64,
    phase: Phase,
    pose: RobotPose,
    omega: f64,
    eor: &EorState,
    exit_t: f64,
) -> FrameRecord {
    FrameRecord {
        frame,
        t,
        phase,
        pose,
        detected: false,
        anchor_x: None,
        shifts: None,
        pr_x: None,
        delta_theta: None,
        delta_p: None,
        delta_theta_gt: None,
        delta_p_gt: None,
        epsilon: None,
        detection_epsilon: None,
        omega,
        eor_filtered_y: eor.filtered_y,
        eor_triggered: eor.triggered,
        exit_t: Some(exit_t),
    }
}

fn nearest_row(field: &Field, pose: &RobotPose) -> usize {
    (0..field.rows.len())
        .min_by(|&a, &b| {
            let da = (field.rows[a].offset - pose.y).abs();
            let db = (field.rows[b].offset - pose.y).abs();
            da.total_cmp(&db)
        })
        .unwrap_or(0)
}

/// Heading (deg) and lateral distance (cm) from the tangent extension of
/// `row` beyond its far end.
pub fn offsets_from_row(field: &Field, row: usize, pose: &RobotPose) -> (f64, f64) {
    let spec = &field.spec;
    let end = centreline_point(spec.curvature, field.rows[row].offset, spec.row_length);
    let dir = centreline_heading(spec.curvature, spec.row_length);
    let heading = wrap_angle(pose.theta - dir).abs().to_degrees();
    let (s, c) = dir.sin_cos();
    let lateral = (pose.x - end.0) * -s + (pose.y - end.1) * c;
    (heading, lateral.abs() * 100.0)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialSummary {
    pub trial: usize,
    pub seed: u64,
    pub initial_heading_deg: f64,
    pub outcome: TrialOutcome,
    pub frames: usize,
    pub start_epsilon: Option<f64>,
    pub end_epsilon: Option<f64>,
    pub settle_frame: Option<usize>,
    pub terminal: Option<TerminalOffsets>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BatchSummary {
    pub trials: usize,
    pub completed: usize,
    pub aborted: usize,
    pub mean_start_epsilon: Option<f64>,
    pub mean_end_epsilon: Option<f64>,
    pub mean_heading_offset_deg: Option<f64>,
    pub max_heading_offset_deg: Option<f64>,
    pub mean_displacement_cm: Option<f64>,
    pub max_displacement_cm: Option<f64>,
    pub per_trial: Vec<TrialSummary>,
}

/// Frames averaged for the start and end scores.
pub const EDGE_FRAMES: usize = 10;
/// Score a trial must hold to count as settled.
pub const SETTLE_LEVEL: f64 = 0.80;

/// Per-trial seeds derived from the master seed.
pub fn trial_seeds(master: u64, trials: usize) -> Vec<(u64, u64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    (0..trials).map(|_| (rng.random(), rng.random())).collect()
}

/// Runs `cfg.trial.trials` independent trials (each on its own field
/// instance) and summarizes them.
pub fn run_batch(cfg: &SimConfig) -> Result<(Vec<TrialLog>, BatchSummary), SimError> {
    cfg.validate()?;
    let seeds = trial_seeds(cfg.trial.seed, cfg.trial.trials);
    let logs: Vec<Result<(TrialLog, u64), SimError>> = seeds
        .par_iter()
        .map(|&(field_seed, trial_seed)| {
            let mut c = cfg.clone();
            c.field.seed = field_seed;
            c.trial.seed = trial_seed;
            run_trial(&c).map(|log| (log, trial_seed))
        })
        .collect();
    let mut out = Vec::with_capacity(logs.len());
    let mut per_trial = Vec::with_capacity(logs.len());
    for (i, r) in logs.into_iter().enumerate() {
        let (log, seed) = r?;
        let (start, end) = start_end_epsilon(&log, EDGE_FRAMES);
        per_trial.push(TrialSummary {
            trial: i,
            seed,
            initial_heading_deg: log.initial_heading_deg,
            outcome: log.outcome,
            frames: log.records.len(),
            start_epsilon: start,
            end_epsilon: end,
            settle_frame: log.settle_frame(SETTLE_LEVEL),
            terminal: log.terminal,
        });
        out.push(log);
    }
    Ok((out, summarize(per_trial)))
}

pub fn summarize(per_trial: Vec<TrialSummary>) -> BatchSummary {
    let starts: Vec<f64> = per_trial.iter().filter_map(|t| t.start_epsilon).collect();
    let ends: Vec<f64> = per_trial.iter().filter_map(|t| t.end_epsilon).collect();
    let headings: Vec<f64> = per_trial.iter().filter_map(|t| t.terminal.map(|o| o.heading_deg)).collect();
    let disps: Vec<f64> = per_trial
        .iter()
        .filter_map(|t| t.terminal.map(|o| o.displacement_cm))
        .collect();
    let max = |v: &[f64]| v.iter().copied().reduce(f64::max);
    BatchSummary {
        trials: per_trial.len(),
        completed: per_trial.iter().filter(|t| t.outcome == TrialOutcome::Completed).count(),
        aborted: per_trial
            .iter()
            .filter(|t| matches!(t.outcome, TrialOutcome::Aborted { .. }))
            .count(),
        mean_start_epsilon: mean(&starts),
        mean_end_epsilon: mean(&ends),
        mean_heading_offset_deg: mean(&headings),
        max_heading_offset_deg: max(&headings),
        mean_displacement_cm: mean(&disps),
        max_displacement_cm: max(&disps),
        per_trial,
    }
}
