//! Flat `key = value` configuration.
//!
//! One assignment per line, `#` starts a comment. Keys are namespaced by
//! section (`field.`, `camera.`, `scan.`, `control.`, `exit.`, `trial.`);
//! values are decimal numbers. Unknown keys are rejected so typos do not
//! silently fall back to defaults.

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::sim::SimConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: expected `key = value`, got {text:?}")]
    Syntax { line: usize, text: String },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("config key `{key}`: cannot parse {value:?} as {kind}")]
    BadValue {
        key: String,
        value: String,
        kind: &'static str,
    },
    #[error("expected `key=value`, got {0:?}")]
    BadOverride(String),
}

fn parse_f64(key: &str, value: &str) -> Result<f64, ConfigError> {
    value
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| ConfigError::BadValue {
            key: key.into(),
            value: value.into(),
            kind: "a finite number",
        })
}

fn parse_usize(key: &str, value: &str) -> Result<usize, ConfigError> {
    value.parse().map_err(|_| ConfigError::BadValue {
        key: key.into(),
        value: value.into(),
        kind: "a non-negative integer",
    })
}

fn parse_u64(key: &str, value: &str) -> Result<u64, ConfigError> {
    value.parse().map_err(|_| ConfigError::BadValue {
        key: key.into(),
        value: value.into(),
        kind: "a non-negative integer",
    })
}

macro_rules! keys {
    ($( $key:literal => $($field:ident).+ : $kind:ident ),* $(,)?) => {
        /// Every accepted key, in documentation order.
        pub const KEYS: &[&str] = &[$($key),*];

        /// Applies one assignment. Values are not range-checked here; call
        /// [`SimConfig::validate`] afterwards.
        pub fn set(cfg: &mut SimConfig, key: &str, value: &str) -> Result<(), ConfigError> {
            let value = value.trim();
            match key.trim() {
                $($key => cfg.$($field).+ = keys!(@parse $kind, $key, value)?,)*
                other => return Err(ConfigError::UnknownKey(other.to_string())),
            }
            Ok(())
        }

        /// Renders the full configuration in the file format.
        pub fn render(cfg: &SimConfig) -> String {
            let mut out = String::new();
            $(let _ = writeln!(out, "{} = {}", $key, cfg.$($field).+);)*
            out
        }
    };
    (@parse f64, $key:expr, $v:expr) => { parse_f64($key, $v) };
    (@parse usize, $key:expr, $v:expr) => { parse_usize($key, $v) };
    (@parse u64, $key:expr, $v:expr) => { parse_u64($key, $v) };
}

keys! {
    "field.num_rows" => field.num_rows: usize,
    "field.row_spacing" => field.row_spacing: f64,
    "field.row_length" => field.row_length: f64,
    "field.curvature" => field.curvature: f64,
    "field.gap_rate" => field.gap_rate: f64,
    "field.gap_length" => field.gap_length: f64,
    "field.weed_density" => field.weed_density: f64,
    "field.width_min" => field.width_min: f64,
    "field.width_max" => field.width_max: f64,
    "field.seed" => field.seed: u64,
    "camera.height_m" => camera.height_m: f64,
    "camera.tilt_deg" => camera.tilt_deg: f64,
    "camera.focal_px" => camera.focal_px: f64,
    "camera.image_w" => camera.image_w: usize,
    "camera.image_h" => camera.image_h: usize,
    "scan.s" => scan.s: f64,
    "scan.anchor_x_min_frac" => scan.anchor_x_min_frac: f64,
    "scan.anchor_x_max_frac" => scan.anchor_x_max_frac: f64,
    "scan.anchor_threshold_frac" => scan.anchor_threshold_frac: f64,
    "scan.n_max" => scan.n_max: usize,
    "scan.pr_offset_frac" => scan.pr_offset_frac: f64,
    "scan.pr_min_frac" => scan.pr_min_frac: f64,
    "scan.pr_max_frac" => scan.pr_max_frac: f64,
    "control.alpha" => control.alpha: f64,
    "control.w1" => control.w1: f64,
    "control.w2" => control.w2: f64,
    "control.v" => control.v: f64,
    "control.omega_max" => control.omega_max: f64,
    "exit.lambda" => exit.lambda: f64,
    "exit.t_e" => exit.t_e: f64,
    "trial.frames_max" => trial.frames_max: usize,
    "trial.dt" => trial.dt: f64,
    "trial.initial_heading_range" => trial.initial_heading_range: f64,
    "trial.trials" => trial.trials: usize,
    "trial.seed" => trial.seed: u64,
    "trial.abort_after" => trial.abort_after: usize,
    "trial.eor_beta" => trial.eor_beta: f64,
    "trial.eor_arm_after" => trial.eor_arm_after: usize,
    "trial.start_x" => trial.start_x: f64,
    "trial.start_y" => trial.start_y: f64,
}

/// Applies every assignment in `text` on top of `cfg`.
pub fn apply_str(cfg: &mut SimConfig, text: &str) -> Result<(), ConfigError> {
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
            line: i + 1,
            text: raw.to_string(),
        })?;
        set(cfg, k, v)?;
    }
    Ok(())
}

pub fn apply_file(cfg: &mut SimConfig, path: &Path) -> Result<(), ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    apply_str(cfg, &text)
}

/// Applies a command-line `key=value` override.
pub fn apply_override(cfg: &mut SimConfig, kv: &str) -> Result<(), ConfigError> {
    let (k, v) = kv
        .split_once('=')
        .ok_or_else(|| ConfigError::BadOverride(kv.to_string()))?;
    set(cfg, k, v)
}
