//! Detection score: one minus the mean of the normalized angle and
//! displacement errors, with per-class and per-category aggregation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("no frames to evaluate")]
    Empty,
    #[error("frame {0} carries no field-variation label")]
    Unlabelled(usize),
    #[error("unknown field-variation label {0:?}")]
    UnknownCategory(String),
    #[error("normalizers must be positive, got theta_max={0} p_max={1}")]
    BadNormalizer(f64, f64),
    #[error("negative or non-finite error at frame {0}")]
    BadError(usize),
}

/// The eleven labelled field variations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Category {
    HorizontalShadow,
    FrontShadow,
    SmallCrops,
    LargeCrops,
    SparseWeed,
    DenseWeed,
    Sunny,
    Cloudy,
    Discontinuities,
    SlopeCurve,
    TyreTracks,
}

impl Category {
    pub const ALL: [Category; 11] = [
        Category::HorizontalShadow,
        Category::FrontShadow,
        Category::SmallCrops,
        Category::LargeCrops,
        Category::SparseWeed,
        Category::DenseWeed,
        Category::Sunny,
        Category::Cloudy,
        Category::Discontinuities,
        Category::SlopeCurve,
        Category::TyreTracks,
    ];

    pub fn letter(self) -> char {
        (b'a' + Self::ALL.iter().position(|&c| c == self).unwrap() as u8) as char
    }

    pub fn from_letter(c: char) -> Option<Self> {
        let i = (c.to_ascii_lowercase() as u8).checked_sub(b'a')? as usize;
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Category::HorizontalShadow => "Horizontal Shadow",
            Category::FrontShadow => "Front Shadow",
            Category::SmallCrops => "Small Crops",
            Category::LargeCrops => "Large Crops",
            Category::SparseWeed => "Sparse Weed",
            Category::DenseWeed => "Dense Weed",
            Category::Sunny => "Sunny",
            Category::Cloudy => "Cloudy",
            Category::Discontinuities => "Discontinuities",
            Category::SlopeCurve => "Slope/ Curve",
            Category::TyreTracks => "Tyre Tracks",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.letter())
    }
}

/// Parses a label string such as `"ef"` or `"e;f"`.
pub fn parse_categories(s: &str) -> Result<BTreeSet<Category>, EvalError> {
    s.chars()
        .filter(|c| !matches!(c, ';' | ',' | ' ' | '|' | '+'))
        .map(|c| Category::from_letter(c).ok_or_else(|| EvalError::UnknownCategory(c.to_string())))
        .collect()
}

impl FromStr for Category {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut chars = s.trim().chars();
        match (chars.next(), chars.next()) {
            (Some(c), None) => Self::from_letter(c),
            _ => None,
        }
        .ok_or_else(|| EvalError::UnknownCategory(s.to_string()))
    }
}

/// Absolute detection errors of one frame.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrameError {
    /// Degrees.
    pub delta_theta_abs: f64,
    /// Pixels.
    pub delta_p_abs: f64,
    pub categories: BTreeSet<Category>,
    pub class_id: Option<u32>,
    /// No row was detected; scored at both normalizers.
    pub failed: bool,
}

impl FrameError {
    pub fn new(delta_theta_abs: f64, delta_p_abs: f64) -> Self {
        Self {
            delta_theta_abs,
            delta_p_abs,
            categories: BTreeSet::new(),
            class_id: None,
            failed: false,
        }
    }

    pub fn failed() -> Self {
        Self {
            failed: true,
            ..Self::new(0.0, 0.0)
        }
    }

    pub fn with_labels(mut self, categories: impl IntoIterator<Item = Category>, class_id: Option<u32>) -> Self {
        self.categories = categories.into_iter().collect();
        self.class_id = class_id;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Normalizer {
    /// Largest errors found in the evaluated set.
    DatasetMax,
    /// Supplied maxima; normalized terms saturate at 1.
    Fixed { theta_max: f64, p_max: f64 },
}

impl Normalizer {
    /// 20 degrees and half the image width.
    pub fn live(image_w: usize) -> Self {
        Normalizer::Fixed {
            theta_max: 20.0,
            p_max: image_w as f64 / 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpsilonReport {
    pub epsilon: f64,
    pub n: usize,
    pub theta_max_used: f64,
    pub p_max_used: f64,
    pub per_category: BTreeMap<Category, f64>,
    pub per_class: BTreeMap<String, f64>,
}

fn validate(frames: &[FrameError]) -> Result<(), EvalError> {
    if frames.is_empty() {
        return Err(EvalError::Empty);
    }
    for (i, f) in frames.iter().enumerate() {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !(ok(f.delta_theta_abs) && ok(f.delta_p_abs)) {
            return Err(EvalError::BadError(i));
        }
    }
    Ok(())
}

/// Normalizers for a frame set; a zero maximum becomes 1.
pub fn normalizers(frames: &[FrameError], mode: Normalizer) -> Result<(f64, f64), EvalError> {
    match mode {
        Normalizer::Fixed { theta_max, p_max } => {
            if !(theta_max > 0.0 && p_max > 0.0) {
                return Err(EvalError::BadNormalizer(theta_max, p_max));
            }
            Ok((theta_max, p_max))
        }
        Normalizer::DatasetMax => {
            let scored = frames.iter().filter(|f| !f.failed);
            let (t, p) = scored.fold((0.0f64, 0.0f64), |(t, p), f| {
                (t.max(f.delta_theta_abs), p.max(f.delta_p_abs))
            });
            Ok((if t > 0.0 { t } else { 1.0 }, if p > 0.0 { p } else { 1.0 }))
        }
    }
}

/// Per-frame loss in `[0, 1]`: the mean of the two normalized errors.
fn frame_loss(f: &FrameError, theta_max: f64, p_max: f64) -> f64 {
    if f.failed {
        return 1.0;
    }
    let t = (f.delta_theta_abs / theta_max).min(1.0);
    let p = (f.delta_p_abs / p_max).min(1.0);
    0.5 * (t + p)
}

fn score(frames: &[&FrameError], theta_max: f64, p_max: f64) -> f64 {
    let n = frames.len() as f64;
    // Summed in input order for bit-stable output.
    1.0 - frames.iter().map(|f| frame_loss(f, theta_max, p_max)).sum::<f64>() / n
}

/// Score of a single frame against fixed normalizers.
pub fn frame_epsilon(f: &FrameError, theta_max: f64, p_max: f64) -> f64 {
    1.0 - frame_loss(f, theta_max, p_max)
}

fn class_key(f: &FrameError) -> String {
    match f.class_id {
        Some(id) => id.to_string(),
        None => f.categories.iter().map(|c| c.letter()).collect(),
    }
}

/// Overall score plus the per-class and per-category tables. Frames
/// without labels count towards the overall score only.
pub fn epsilon(frames: &[FrameError], mode: Normalizer) -> Result<EpsilonReport, EvalError> {
    validate(frames)?;
    let (theta_max, p_max) = normalizers(frames, mode)?;
    let all: Vec<&FrameError> = frames.iter().collect();
    let table = aggregate(frames, theta_max, p_max);
    Ok(EpsilonReport {
        epsilon: score(&all, theta_max, p_max),
        n: frames.len(),
        theta_max_used: theta_max,
        p_max_used: p_max,
        per_category: table.per_category,
        per_class: table.per_class,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CategoryTable {
    pub per_class: BTreeMap<String, f64>,
    /// Categories carried by each class.
    pub class_categories: BTreeMap<String, BTreeSet<Category>>,
    /// Mean of the class scores of every class carrying the category.
    pub per_category: BTreeMap<Category, f64>,
}

fn aggregate(frames: &[FrameError], theta_max: f64, p_max: f64) -> CategoryTable {
    let mut classes: BTreeMap<String, (Vec<&FrameError>, BTreeSet<Category>)> = BTreeMap::new();
    for f in frames.iter().filter(|f| !f.categories.is_empty() || f.class_id.is_some()) {
        let entry = classes.entry(class_key(f)).or_default();
        entry.0.push(f);
        entry.1.extend(f.categories.iter().copied());
    }
    let per_class: BTreeMap<String, f64> = classes
        .iter()
        .map(|(k, (fs, _))| (k.clone(), score(fs, theta_max, p_max)))
        .collect();
    let mut sums: BTreeMap<Category, (f64, usize)> = BTreeMap::new();
    for (k, (_, cats)) in &classes {
        for &c in cats {
            let e = sums.entry(c).or_default();
            e.0 += per_class[k];
            e.1 += 1;
        }
    }
    CategoryTable {
        per_class,
        class_categories: classes.into_iter().map(|(k, (_, c))| (k, c)).collect(),
        per_category: sums.into_iter().map(|(c, (s, n))| (c, s / n as f64)).collect(),
    }
}

/// Class scores averaged per category. In strict mode every frame must
/// carry at least one category label.
pub fn per_category_report(
    frames: &[FrameError],
    mode: Normalizer,
    strict: bool,
) -> Result<CategoryTable, EvalError> {
    validate(frames)?;
    if strict {
        if let Some(i) = frames.iter().position(|f| f.categories.is_empty()) {
            return Err(EvalError::Unlabelled(i));
        }
    }
    let (theta_max, p_max) = normalizers(frames, mode)?;
    Ok(aggregate(frames, theta_max, p_max))
}
