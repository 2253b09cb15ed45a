//! CSV and JSON files read and written by the command-line tool.
//!
//! Numbers are written with six decimals. Every output file is written to
//! a temporary sibling first and renamed into place.
//!
//! Detection CSV (`detect`):
//! `frame,file,anchor_x,n,pr_x,b_x,c_x,delta_theta,delta_p,line_score,no_detection`.
//! Row fields are empty when nothing was detected.
//!
//! Ground-truth CSV (`generate`):
//! `frame,file,x,y,theta_deg,anchor_x_gt,pr_x_gt,delta_theta_gt,delta_p_gt,visible,eor_y_gt,row_index`.
//!
//! Labels CSV (input to `evaluate`): `frame,class_id,categories`, where
//! `categories` holds category letters such as `ef` or `e;f`.
//!
//! Frames are matched across files by the `frame` column, which the tool
//! fills with the mask file stem.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::field::GroundTruthRow;
use crate::scan::Detection;
use crate::sim::{FrameRecord, RobotPose, TrialLog};

pub const SCHEMA_VERSION: u32 = 1;

pub const DETECT_HEADER: [&str; 11] = [
    "frame",
    "file",
    "anchor_x",
    "n",
    "pr_x",
    "b_x",
    "c_x",
    "delta_theta",
    "delta_p",
    "line_score",
    "no_detection",
];

pub const GT_HEADER: [&str; 12] = [
    "frame",
    "file",
    "x",
    "y",
    "theta_deg",
    "anchor_x_gt",
    "pr_x_gt",
    "delta_theta_gt",
    "delta_p_gt",
    "visible",
    "eor_y_gt",
    "row_index",
];

pub const TRIAL_HEADER: [&str; 20] = [
    "frame",
    "t",
    "phase",
    "x",
    "y",
    "theta_deg",
    "detected",
    "anchor_x",
    "shifts",
    "pr_x",
    "delta_theta",
    "delta_p",
    "delta_theta_gt",
    "delta_p_gt",
    "epsilon",
    "detection_epsilon",
    "omega",
    "eor_filtered_y",
    "eor_triggered",
    "exit_t",
];

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

impl IoError {
    /// The file could not be read or written at all, as opposed to being
    /// malformed.
    pub fn is_io(&self) -> bool {
        match self {
            IoError::Io { .. } => true,
            IoError::Csv { source, .. } => source.is_io_error(),
        }
    }
}

pub fn f6(v: f64) -> String {
    format!("{v:.6}")
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn opt6(v: Option<f64>) -> String {
    v.map(f6).unwrap_or_default()
}

fn flag(b: bool) -> String {
    u8::from(b).to_string()
}

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    let err = |source| IoError::Io {
        path: path.to_path_buf(),
        source,
    };
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(err)?;
    tmp.write_all(bytes).map_err(err)?;
    tmp.as_file().sync_all().map_err(err)?;
    tmp.persist(path).map_err(|e| err(e.error))?;
    Ok(())
}

/// Renders a CSV table to bytes.
pub fn csv_bytes<I, R>(header: &[&str], rows: I) -> Vec<u8>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for row in rows {
        w.write_record(row.into_iter().collect::<Vec<_>>()).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

pub fn write_csv<I, R>(path: &Path, header: &[&str], rows: I) -> Result<(), IoError>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    write_atomic(path, &csv_bytes(header, rows))
}

/// Rounds every float in a JSON tree to six decimals.
fn round_floats(v: Value) -> Value {
    match v {
        Value::Number(n) if n.is_f64() => {
            let x = n.as_f64().unwrap_or(0.0);
            let r = (x * 1e6).round() / 1e6;
            serde_json::Number::from_f64(r).map(Value::Number).unwrap_or(Value::Null)
        }
        Value::Array(a) => Value::Array(a.into_iter().map(round_floats).collect()),
        Value::Object(o) => Value::Object(o.into_iter().map(|(k, v)| (k, round_floats(v))).collect()),
        other => other,
    }
}

/// Pretty JSON with a `schema_version` field and six-decimal floats.
pub fn json_bytes<T: Serialize>(kind: &str, body: &T) -> Vec<u8> {
    let mut root = serde_json::Map::new();
    root.insert("schema_version".into(), SCHEMA_VERSION.into());
    root.insert("kind".into(), kind.into());
    root.insert("data".into(), round_floats(serde_json::to_value(body).expect("serializable")));
    let mut out = serde_json::to_vec_pretty(&Value::Object(root)).expect("serializable");
    out.push(b'\n');
    out
}

pub fn write_json<T: Serialize>(path: &Path, kind: &str, body: &T) -> Result<(), IoError> {
    write_atomic(path, &json_bytes(kind, body))
}

pub fn detection_record(frame: &str, file: &str, det: &Detection) -> Vec<String> {
    let a = &det.anchor;
    let mut row = vec![frame.to_string(), file.to_string()];
    match &det.found {
        Some(f) => row.extend([
            a.a_x.to_string(),
            a.n.to_string(),
            f.row.p_r.x.to_string(),
            f.row.b_x.to_string(),
            f.row.c_x.to_string(),
            f6(f.error.delta_theta),
            f6(f.error.delta_p),
            f.row.line_score.to_string(),
            flag(false),
        ]),
        None => {
            row.extend(std::iter::repeat_n(String::new(), 8));
            row.push(flag(true));
        }
    }
    row
}

pub fn gt_record(frame: &str, file: &str, pose: &RobotPose, gt: Option<&GroundTruthRow>, w: usize, h: usize) -> Vec<String> {
    let mut row = vec![
        frame.to_string(),
        file.to_string(),
        f6(pose.x),
        f6(pose.y),
        f6(pose.theta.to_degrees()),
    ];
    match gt {
        Some(g) => row.extend([
            f6(g.anchor_x_gt),
            f6(g.pr_x_gt),
            f6(g.delta_theta(h)),
            f6(g.delta_p(w)),
            flag(g.visible),
            opt6(g.eor_y_gt),
            g.row_index.to_string(),
        ]),
        None => {
            row.extend(std::iter::repeat_n(String::new(), 4));
            row.push(flag(false));
            row.extend(std::iter::repeat_n(String::new(), 2));
        }
    }
    row
}

pub fn trial_record(r: &FrameRecord) -> Vec<String> {
    vec![
        r.frame.to_string(),
        f6(r.t),
        r.phase.as_str().to_string(),
        f6(r.pose.x),
        f6(r.pose.y),
        f6(r.pose.theta.to_degrees()),
        flag(r.detected),
        opt(r.anchor_x),
        opt(r.shifts),
        opt(r.pr_x),
        opt6(r.delta_theta),
        opt6(r.delta_p),
        opt6(r.delta_theta_gt),
        opt6(r.delta_p_gt),
        opt6(r.epsilon),
        opt6(r.detection_epsilon),
        f6(r.omega),
        opt6(r.eor_filtered_y),
        flag(r.eor_triggered),
        opt6(r.exit_t),
    ]
}

pub fn trial_csv_bytes(log: &TrialLog) -> Vec<u8> {
    csv_bytes(&TRIAL_HEADER, log.records.iter().map(trial_record))
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct DetectionRow {
    pub frame: String,
    #[serde(default)]
    pub file: Option<String>,
    #[serde(default)]
    pub delta_theta: Option<f64>,
    #[serde(default)]
    pub delta_p: Option<f64>,
    pub no_detection: u8,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct GtRow {
    pub frame: String,
    #[serde(default)]
    pub delta_theta_gt: Option<f64>,
    #[serde(default)]
    pub delta_p_gt: Option<f64>,
    #[serde(default)]
    pub visible: Option<u8>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct LabelRow {
    pub frame: String,
    #[serde(default)]
    pub class_id: Option<u32>,
    #[serde(default)]
    pub categories: Option<String>,
}

fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, IoError> {
    let csv_err = |source| IoError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut r = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(csv_err)?;
    r.deserialize().collect::<Result<Vec<T>, _>>().map_err(csv_err)
}

pub fn read_detections(path: &Path) -> Result<Vec<DetectionRow>, IoError> {
    read_rows(path)
}

pub fn read_ground_truth(path: &Path) -> Result<Vec<GtRow>, IoError> {
    read_rows(path)
}

pub fn read_labels(path: &Path) -> Result<Vec<LabelRow>, IoError> {
    read_rows(path)
}

/// Indexes rows by frame key, keeping the first occurrence.
pub fn by_frame<T, F: Fn(&T) -> &str>(rows: &[T], key: F) -> BTreeMap<String, &T> {
    let mut map = BTreeMap::new();
    for r in rows {
        map.entry(key(r).to_string()).or_insert(r);
    }
    map
}

/// Frame key for a mask path: the file stem.
pub fn frame_key(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::Mask;
    use crate::scan::{detect, ScanConfig};

    #[test]
    fn detection_rows_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = Mask::from_fn(64, 64, |x, _| x == 32).unwrap();
        let hit = detect(&m, &ScanConfig::default());
        let miss = detect(&Mask::zeros(64, 64).unwrap(), &ScanConfig::default());
        let path = dir.path().join("d.csv");
        write_csv(
            &path,
            &DETECT_HEADER,
            [detection_record("a", "a.pgm", &hit), detection_record("b", "b.pgm", &miss)],
        )
        .unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with(&DETECT_HEADER.join(",")));
        assert!(text.contains("0.000000,0.000000,64,0"), "{text}");
        let rows = read_detections(&path).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!((rows[0].delta_theta, rows[0].no_detection), (Some(0.0), 0));
        assert_eq!((rows[1].delta_theta, rows[1].no_detection), (None, 1));
    }

    #[test]
    fn json_has_schema_and_rounded_floats() {
        let bytes = json_bytes("test", &serde_json::json!({ "x": 1.0 / 3.0 }));
        let v: Value = serde_json::from_slice(&bytes).unwrap();
        assert_eq!(v["schema_version"], SCHEMA_VERSION);
        assert_eq!(v["data"]["x"].as_f64().unwrap(), 0.333333);
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("out.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), b"two");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn missing_file_is_io() {
        let err = read_detections(Path::new("/nonexistent/d.csv")).unwrap_err();
        assert!(err.is_io());
    }
}
