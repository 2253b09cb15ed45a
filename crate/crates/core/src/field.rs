//! Parametric crop fields rendered to binary masks through a pinhole camera.
//!
//! Field frame: `x` runs along the rows (rows start at `x = 0`), `y` points
//! to the left when looking down the rows, headings are counter-clockwise.
//! Rows are parallel arcs of constant curvature (straight lines when the
//! curvature is zero) spaced `row_spacing` apart and centred on `y = 0`.
//!
//! Rows are drawn with a constant pixel width per 10 cm segment, sampled
//! from the configured jitter range, independent of distance. Weeds are
//! filled discs with a pixel radius of 2 to 10.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::Serialize;
use thiserror::Error;

use crate::mask::Mask;
use crate::sim::RobotPose;

/// Arc length of one rendered row segment, m.
pub const SEGMENT_LEN: f64 = 0.1;
/// Points closer than this to the image plane are clipped, m.
const NEAR_CLIP: f64 = 0.05;
/// How far past either end a row is extended when locating ground truth, m.
const GT_EXTENSION: f64 = 60.0;
const WEED_RADIUS_PX: (f64, f64) = (2.0, 10.0);

#[derive(Debug, Error, PartialEq)]
pub enum FieldError {
    #[error("field.num_rows must be at least 1")]
    NoRows,
    #[error("field.{0} must be positive, got {1}")]
    NonPositive(&'static str, f64),
    #[error("field.{0} must be non-negative, got {1}")]
    Negative(&'static str, f64),
    #[error("width jitter [{0}, {1}] must satisfy 1 <= min <= max <= 16")]
    WidthJitter(f64, f64),
    #[error("camera.height_m must be positive, got {0}")]
    CameraBelowGround(f64),
    #[error("camera.tilt_deg must lie in (0, 90), got {0}")]
    Tilt(f64),
    #[error("camera.focal_px must be positive, got {0}")]
    Focal(f64),
    #[error("camera image {0}x{1} is smaller than 16x16")]
    ImageSize(usize, usize),
    #[error("camera horizon falls inside the image; increase tilt_deg or focal_px")]
    HorizonInView,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FieldSpec {
    pub num_rows: usize,
    /// m
    pub row_spacing: f64,
    /// m
    pub row_length: f64,
    /// 1/m, positive bends left.
    pub curvature: f64,
    /// Expected discontinuities per metre of row.
    pub gap_rate: f64,
    /// m
    pub gap_length: f64,
    /// Weed blobs per square metre.
    pub weed_density: f64,
    /// Rendered row width range, px.
    pub width_min: f64,
    pub width_max: f64,
    pub seed: u64,
}

impl Default for FieldSpec {
    fn default() -> Self {
        Self {
            num_rows: 5,
            row_spacing: 0.5,
            row_length: 6.0,
            curvature: 0.0,
            gap_rate: 0.0,
            gap_length: 0.3,
            weed_density: 0.0,
            width_min: 3.0,
            width_max: 8.0,
            seed: 0,
        }
    }
}

impl FieldSpec {
    pub fn validate(&self) -> Result<(), FieldError> {
        if self.num_rows == 0 {
            return Err(FieldError::NoRows);
        }
        for (name, v) in [("row_spacing", self.row_spacing), ("row_length", self.row_length)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(FieldError::NonPositive(name, v));
            }
        }
        for (name, v) in [
            ("gap_rate", self.gap_rate),
            ("gap_length", self.gap_length),
            ("weed_density", self.weed_density),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(FieldError::Negative(name, v));
            }
        }
        if !self.curvature.is_finite() {
            return Err(FieldError::NonPositive("curvature", self.curvature));
        }
        let (lo, hi) = (self.width_min, self.width_max);
        if !(lo >= 1.0 && lo <= hi && hi <= 16.0) {
            return Err(FieldError::WidthJitter(lo, hi));
        }
        Ok(())
    }

    /// Lateral offset of row `k` from the field centreline.
    pub fn row_offset(&self, k: usize) -> f64 {
        (k as f64 - (self.num_rows as f64 - 1.0) / 2.0) * self.row_spacing
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CameraSpec {
    pub height_m: f64,
    pub tilt_deg: f64,
    pub focal_px: f64,
    pub image_w: usize,
    pub image_h: usize,
}

impl Default for CameraSpec {
    fn default() -> Self {
        Self {
            height_m: 0.7,
            tilt_deg: 60.0,
            focal_px: 420.0,
            image_w: 512,
            image_h: 512,
        }
    }
}

impl CameraSpec {
    pub fn validate(&self) -> Result<(), FieldError> {
        if !(self.height_m > 0.0) {
            return Err(FieldError::CameraBelowGround(self.height_m));
        }
        if !(self.tilt_deg > 0.0 && self.tilt_deg < 90.0) {
            return Err(FieldError::Tilt(self.tilt_deg));
        }
        if !(self.focal_px > 0.0 && self.focal_px.is_finite()) {
            return Err(FieldError::Focal(self.focal_px));
        }
        if self.image_w < 16 || self.image_h < 16 {
            return Err(FieldError::ImageSize(self.image_w, self.image_h));
        }
        if self.horizon_v() >= 0.0 {
            return Err(FieldError::HorizonInView);
        }
        Ok(())
    }

    fn cx(&self) -> f64 {
        self.image_w as f64 / 2.0
    }

    fn cy(&self) -> f64 {
        self.image_h as f64 / 2.0
    }

    /// Image row of the ground-plane horizon.
    pub fn horizon_v(&self) -> f64 {
        self.cy() - self.focal_px * self.tilt_deg.to_radians().tan()
    }
}

/// A present (non-gap) piece of a row with its rendered width.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RowPiece {
    pub s0: f64,
    pub s1: f64,
    pub width_px: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CropRow {
    /// Lateral offset from the field centreline, m.
    pub offset: f64,
    pub pieces: Vec<RowPiece>,
    /// Start of every discontinuity, by arc length.
    pub gaps: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Weed {
    pub x: f64,
    pub y: f64,
    pub radius_px: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Field {
    pub spec: FieldSpec,
    pub rows: Vec<CropRow>,
    pub weeds: Vec<Weed>,
}

/// Deterministic field from `spec.seed`.
pub fn generate_field(spec: &FieldSpec) -> Result<Field, FieldError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let length = spec.row_length;
    let n_seg = (length / SEGMENT_LEN).ceil() as usize;

    let mut rows = Vec::with_capacity(spec.num_rows);
    for k in 0..spec.num_rows {
        let widths: Vec<f64> = (0..n_seg)
            .map(|_| rng.random_range(spec.width_min..=spec.width_max))
            .collect();
        let mut gaps: Vec<f64> = if spec.gap_rate > 0.0 {
            let count = Poisson::new(spec.gap_rate * length)
                .expect("positive mean")
                .sample(&mut rng) as usize;
            (0..count).map(|_| rng.random_range(0.0..length)).collect()
        } else {
            Vec::new()
        };
        gaps.sort_by(f64::total_cmp);

        let mut pieces = Vec::new();
        for (i, &width_px) in widths.iter().enumerate() {
            let s0 = i as f64 * SEGMENT_LEN;
            let s1 = ((i + 1) as f64 * SEGMENT_LEN).min(length);
            let mut kept = vec![(s0, s1)];
            for &g in &gaps {
                let (g0, g1) = (g, g + spec.gap_length);
                kept = kept
                    .into_iter()
                    .flat_map(|(a, b)| {
                        let mut out = Vec::with_capacity(2);
                        if g0 > a {
                            out.push((a, b.min(g0)));
                        }
                        if g1 < b {
                            out.push((a.max(g1), b));
                        }
                        out.into_iter().filter(|(a, b)| b - a > 1e-9)
                    })
                    .collect();
            }
            pieces.extend(kept.into_iter().map(|(s0, s1)| RowPiece { s0, s1, width_px }));
        }
        rows.push(CropRow {
            offset: spec.row_offset(k),
            pieces,
            gaps,
        });
    }

    let mut weeds = Vec::new();
    if spec.weed_density > 0.0 {
        let half = spec.row_offset(spec.num_rows - 1) + spec.row_spacing;
        let (s_lo, s_hi) = (-1.0, length + 1.0);
        let area = (s_hi - s_lo) * 2.0 * half;
        let count = Poisson::new(spec.weed_density * area)
            .expect("positive mean")
            .sample(&mut rng) as usize;
        for _ in 0..count {
            let s = rng.random_range(s_lo..s_hi);
            let lateral = rng.random_range(-half..half);
            let (x, y) = centreline_point(spec.curvature, lateral, s);
            let radius_px = rng.random_range(WEED_RADIUS_PX.0..=WEED_RADIUS_PX.1);
            weeds.push(Weed { x, y, radius_px });
        }
    }

    Ok(Field {
        spec: spec.clone(),
        rows,
        weeds,
    })
}

/// Point at arc length `s` on the row with lateral `offset`.
pub fn centreline_point(curvature: f64, offset: f64, s: f64) -> (f64, f64) {
    if curvature.abs() < 1e-12 {
        return (s, offset);
    }
    let phi = curvature * s;
    let (sin, cos) = phi.sin_cos();
    (
        sin / curvature - offset * sin,
        (1.0 - cos) / curvature + offset * cos,
    )
}

/// Row direction at arc length `s`, radians.
pub fn centreline_heading(curvature: f64, s: f64) -> f64 {
    curvature * s
}

impl Field {
    pub fn point(&self, row: usize, s: f64) -> (f64, f64) {
        centreline_point(self.spec.curvature, self.rows[row].offset, s)
    }

    pub fn gap_count(&self, row: usize) -> usize {
        self.rows[row].gaps.len()
    }
}

/// Pinhole camera on the robot: optical centre above the robot reference
/// point, pitched down by `tilt_deg`, no roll.
#[derive(Debug, Clone)]
pub struct Camera {
    spec: CameraSpec,
    pos: (f64, f64),
    fwd: (f64, f64),
    left: (f64, f64),
    sin_t: f64,
    cos_t: f64,
}

impl Camera {
    pub fn new(spec: &CameraSpec, pose: &RobotPose) -> Result<Self, FieldError> {
        spec.validate()?;
        let (sin_t, cos_t) = spec.tilt_deg.to_radians().sin_cos();
        let (s, c) = pose.theta.sin_cos();
        Ok(Self {
            spec: spec.clone(),
            pos: (pose.x, pose.y),
            fwd: (c, s),
            left: (-s, c),
            sin_t,
            cos_t,
        })
    }

    /// Camera-frame coordinates (right, down, depth) of a ground point.
    fn to_camera(&self, p: (f64, f64)) -> (f64, f64, f64) {
        let d = (p.0 - self.pos.0, p.1 - self.pos.1);
        let fwd = d.0 * self.fwd.0 + d.1 * self.fwd.1;
        let left = d.0 * self.left.0 + d.1 * self.left.1;
        let h = self.spec.height_m;
        (
            -left,
            -fwd * self.sin_t + h * self.cos_t,
            fwd * self.cos_t + h * self.sin_t,
        )
    }

    /// Pixel coordinates `(u, v)` of a ground point, `None` behind the camera.
    pub fn project(&self, p: (f64, f64)) -> Option<(f64, f64)> {
        let (xc, yc, zc) = self.to_camera(p);
        (zc > NEAR_CLIP).then(|| {
            (
                self.spec.cx() + self.spec.focal_px * xc / zc,
                self.spec.cy() + self.spec.focal_px * yc / zc,
            )
        })
    }

    /// Clips the ground segment `a -> b` to the part in front of the near
    /// plane and projects it.
    fn project_segment(&self, a: (f64, f64), b: (f64, f64)) -> Option<((f64, f64), (f64, f64))> {
        let za = self.to_camera(a).2;
        let zb = self.to_camera(b).2;
        if za <= NEAR_CLIP && zb <= NEAR_CLIP {
            return None;
        }
        let lerp = |t: f64| (a.0 + (b.0 - a.0) * t, a.1 + (b.1 - a.1) * t);
        let (mut a, mut b) = (a, b);
        if za <= NEAR_CLIP {
            a = lerp((NEAR_CLIP * 1.0001 - za) / (zb - za));
        } else if zb <= NEAR_CLIP {
            b = lerp((NEAR_CLIP * 1.0001 - za) / (zb - za));
        }
        Some((self.project(a)?, self.project(b)?))
    }

    pub fn spec(&self) -> &CameraSpec {
        &self.spec
    }
}

/// Analytic reference for the central row of a rendered frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GroundTruthRow {
    /// Column where the (extended) central row crosses the top image row.
    pub anchor_x_gt: f64,
    /// Column where it crosses the bottom image row.
    pub pr_x_gt: f64,
    /// The row physically exists at the bottom of the image.
    pub visible: bool,
    /// Image row of the central row's far end, when in view.
    pub eor_y_gt: Option<f64>,
    /// Index of the central row within the field.
    pub row_index: usize,
}

impl GroundTruthRow {
    /// Same conventions as [`crate::scan::TrackingError`].
    pub fn delta_theta(&self, image_h: usize) -> f64 {
        (self.anchor_x_gt - self.pr_x_gt)
            .atan2(image_h as f64 - 1.0)
            .to_degrees()
    }

    pub fn delta_p(&self, image_w: usize) -> f64 {
        self.pr_x_gt - image_w as f64 / 2.0
    }
}

pub fn render_mask(
    field: &Field,
    pose: &RobotPose,
    cam: &CameraSpec,
) -> Result<(Mask, Option<GroundTruthRow>), FieldError> {
    let camera = Camera::new(cam, pose)?;
    let mut mask = Mask::zeros(cam.image_w, cam.image_h).map_err(|_| {
        FieldError::ImageSize(cam.image_w, cam.image_h)
    })?;
    let kappa = field.spec.curvature;

    for row in &field.rows {
        for piece in &row.pieces {
            let a = centreline_point(kappa, row.offset, piece.s0);
            let b = centreline_point(kappa, row.offset, piece.s1);
            if let Some((pa, pb)) = camera.project_segment(a, b) {
                draw_thick_segment(&mut mask, pa, pb, piece.width_px / 2.0);
            }
        }
    }
    for weed in &field.weeds {
        if let Some(c) = camera.project((weed.x, weed.y)) {
            draw_disc(&mut mask, c, weed.radius_px);
        }
    }
    Ok((mask, ground_truth(field, &camera)))
}

/// Pixels whose centre lies within `radius` of the segment `a -> b`.
fn draw_thick_segment(mask: &mut Mask, a: (f64, f64), b: (f64, f64), radius: f64) {
    let (w, h) = (mask.width() as f64, mask.height() as f64);
    let x_lo = (a.0.min(b.0) - radius).floor().max(0.0);
    let x_hi = (a.0.max(b.0) + radius).ceil().min(w - 1.0);
    let y_lo = (a.1.min(b.1) - radius).floor().max(0.0);
    let y_hi = (a.1.max(b.1) + radius).ceil().min(h - 1.0);
    if x_lo > x_hi || y_lo > y_hi {
        return;
    }
    let d = (b.0 - a.0, b.1 - a.1);
    let len2 = d.0 * d.0 + d.1 * d.1;
    let r2 = radius * radius;
    for y in y_lo as usize..=y_hi as usize {
        for x in x_lo as usize..=x_hi as usize {
            let p = (x as f64 - a.0, y as f64 - a.1);
            let t = if len2 > 0.0 {
                ((p.0 * d.0 + p.1 * d.1) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let q = (p.0 - t * d.0, p.1 - t * d.1);
            if q.0 * q.0 + q.1 * q.1 <= r2 {
                mask.set(x, y, true);
            }
        }
    }
}

fn draw_disc(mask: &mut Mask, c: (f64, f64), radius: f64) {
    draw_thick_segment(mask, c, c, radius);
}

/// Column and arc length where the projection of `row` crosses image row
/// `v`, nearest the camera first. Searches the row extended well past both
/// ends.
fn crossing(field: &Field, camera: &Camera, row: usize, v: f64) -> Option<(f64, f64)> {
    let kappa = field.spec.curvature;
    let offset = field.rows[row].offset;
    let lo = -GT_EXTENSION;
    let hi = field.spec.row_length + GT_EXTENSION;
    let step = 0.05;
    let n = ((hi - lo) / step).ceil() as usize;
    let proj_v = |s: f64| camera.project(centreline_point(kappa, offset, s)).map(|p| p.1);

    // (u, depth, s)
    let mut best: Option<(f64, f64, f64)> = None;
    let mut prev: Option<(f64, f64)> = None;
    for i in 0..=n {
        let s = lo + i as f64 * step;
        let cur = proj_v(s).map(|pv| (s, pv));
        if let (Some((s0, v0)), Some((s1, v1))) = (prev, cur) {
            if (v0 - v) * (v1 - v) <= 0.0 && v0 != v1 {
                let (mut a, mut b) = (s0, s1);
                for _ in 0..60 {
                    let m = 0.5 * (a + b);
                    let vm = proj_v(m).unwrap_or(v1);
                    if (v0 - v) * (vm - v) <= 0.0 {
                        b = m;
                    } else {
                        a = m;
                    }
                }
                let s_hit = 0.5 * (a + b);
                let p = centreline_point(kappa, offset, s_hit);
                if let Some((u, _)) = camera.project(p) {
                    let depth = camera.to_camera(p).2;
                    if best.is_none_or(|(_, d, _)| depth < d) {
                        best = Some((u, depth, s_hit));
                    }
                }
            }
        }
        prev = cur;
    }
    best.map(|(u, _, s)| (u, s))
}

fn ground_truth(field: &Field, camera: &Camera) -> Option<GroundTruthRow> {
    let spec = camera.spec();
    let bottom = spec.image_h as f64 - 1.0;
    let centre = spec.image_w as f64 / 2.0;

    let mut best: Option<(usize, f64, f64)> = None;
    for k in 0..field.rows.len() {
        if let Some((u, s)) = crossing(field, camera, k, bottom) {
            if best.is_none_or(|(_, bu, _)| (u - centre).abs() < (bu - centre).abs()) {
                best = Some((k, u, s));
            }
        }
    }
    let (k, pr_x_gt, s_bottom) = best?;
    let (anchor_x_gt, _) = crossing(field, camera, k, 0.0)?;
    let visible = (0.0..=field.spec.row_length).contains(&s_bottom);
    let end = field.point(k, field.spec.row_length);
    let eor_y_gt = camera.project(end).and_then(|(u, v)| {
        let inside = (0.0..spec.image_w as f64).contains(&u) && (0.0..spec.image_h as f64).contains(&v);
        inside.then_some(v)
    });
    Some(GroundTruthRow {
        anchor_x_gt,
        pr_x_gt,
        visible,
        eor_y_gt,
        row_index: k,
    })
}
