//! Triangle scan: central crop-row detection on a binary mask.
//!
//! The anchor scan takes a column-sum argmax inside a full-width band at the
//! top of the mask, shifting the band down by its own height when the best
//! column is too weak. The line scan then fixes the anchor and searches the
//! bottom edge between the begin and cease columns for the end point whose
//! one-pixel-per-row segment collects the most crop pixels.
//!
//! Fractional pixel quantities are floored. Column windows that the
//! original formulation writes in terms of image height are evaluated
//! against the mask width; the two agree on square masks.

use serde::Serialize;
use thiserror::Error;

use crate::mask::{ImagePoint, Mask};

#[derive(Debug, Error, PartialEq)]
pub enum ScanError {
    #[error("scan.s must lie in (0, 1), got {0}")]
    RoiScale(f64),
    #[error("anchor column window [{min}, {max}] is invalid")]
    AnchorWindow { min: f64, max: f64 },
    #[error("scan.anchor_threshold_frac must lie in (0, 1], got {0}")]
    Threshold(f64),
    #[error("begin/cease fractions are inconsistent: min {min}, max {max}, offset {offset}")]
    BeginCease { min: f64, max: f64, offset: f64 },
    #[error("roi height {h} px with {n_max} shifts does not fit in {height} rows")]
    RoiOverflow { h: usize, n_max: usize, height: usize },
}

/// Triangle scan parameters.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanConfig {
    /// Anchor ROI height as a fraction of the image height.
    pub s: f64,
    pub anchor_x_min_frac: f64,
    pub anchor_x_max_frac: f64,
    /// Fraction of the ROI height the winning column must fill.
    pub anchor_threshold_frac: f64,
    /// Maximum number of downward ROI shifts.
    pub n_max: usize,
    pub pr_offset_frac: f64,
    pub pr_min_frac: f64,
    pub pr_max_frac: f64,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self {
            s: 0.2,
            anchor_x_min_frac: 0.2,
            anchor_x_max_frac: 0.7,
            anchor_threshold_frac: 0.2,
            n_max: 2,
            pr_offset_frac: 0.2,
            pr_min_frac: 0.4,
            pr_max_frac: 0.9,
        }
    }
}

impl ScanConfig {
    pub fn validate(&self) -> Result<(), ScanError> {
        if !(self.s > 0.0 && self.s < 1.0) {
            return Err(ScanError::RoiScale(self.s));
        }
        let (min, max) = (self.anchor_x_min_frac, self.anchor_x_max_frac);
        if !(min >= 0.0 && min < max && max <= 1.0) {
            return Err(ScanError::AnchorWindow { min, max });
        }
        if !(self.anchor_threshold_frac > 0.0 && self.anchor_threshold_frac <= 1.0) {
            return Err(ScanError::Threshold(self.anchor_threshold_frac));
        }
        let (lo, hi, off) = (self.pr_min_frac, self.pr_max_frac, self.pr_offset_frac);
        if !(lo >= 0.0 && lo <= hi && hi <= 1.0 && off >= 0.0) {
            return Err(ScanError::BeginCease {
                min: lo,
                max: hi,
                offset: off,
            });
        }
        Ok(())
    }

    /// Validates against a concrete mask height as well.
    pub fn validate_for(&self, height: usize) -> Result<(), ScanError> {
        self.validate()?;
        let h = self.roi_height(height);
        if h == 0 || (self.n_max + 1) * h > height {
            return Err(ScanError::RoiOverflow {
                h,
                n_max: self.n_max,
                height,
            });
        }
        Ok(())
    }

    /// `h = floor(s * H)`.
    pub fn roi_height(&self, height: usize) -> usize {
        (self.s * height as f64).floor() as usize
    }

    /// Inclusive column window searched by the anchor scan.
    pub fn anchor_columns(&self, width: usize) -> (usize, usize) {
        let lo = (self.anchor_x_min_frac * width as f64).ceil() as usize;
        let hi = ((self.anchor_x_max_frac * width as f64).floor() as usize).min(width - 1);
        (lo.min(hi), hi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct AnchorResult {
    pub a_x: usize,
    /// ROI shifts applied; the winning band covers rows `[n*h, (n+1)*h)`.
    pub n: usize,
    pub valid: bool,
    pub score: usize,
    /// ROI height used for this scan.
    pub h: usize,
}

impl AnchorResult {
    /// Top row of the band the anchor was found in.
    pub fn band_top(&self) -> usize {
        self.n * self.h
    }
}

/// Column-sum argmax over the anchor window, retried on lower bands.
/// A plateau of equal sums resolves to its middle column.
pub fn anchor_scan(mask: &Mask, cfg: &ScanConfig) -> AnchorResult {
    let h = cfg.roi_height(mask.height());
    let (lo, hi) = cfg.anchor_columns(mask.width());
    let need = cfg.anchor_threshold_frac * h as f64;
    let mut last = AnchorResult {
        a_x: lo,
        n: 0,
        valid: false,
        score: 0,
        h,
    };
    for n in 0..=cfg.n_max {
        let top = (n * h).min(mask.height());
        let bottom = ((n + 1) * h).min(mask.height());
        let mut sums = vec![0usize; hi + 1 - lo];
        for y in top..bottom {
            let row = mask.row(y);
            for (sum, &p) in sums.iter_mut().zip(&row[lo..=hi]) {
                *sum += p as usize;
            }
        }
        let (best, score) = argmax_centre(&sums);
        last = AnchorResult {
            a_x: lo + best,
            n,
            valid: score as f64 >= need && score > 0,
            score,
            h,
        };
        if last.valid {
            break;
        }
    }
    last
}

/// Index and value of the maximum. A run of equal maxima resolves to its
/// middle (rounded down); only the leftmost run counts. `values` must be
/// non-empty.
pub(crate) fn argmax_centre(values: &[usize]) -> (usize, usize) {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    let max = values[best];
    let end = best + values[best..].iter().take_while(|&&v| v == max).count() - 1;
    ((best + end) / 2, max)
}

/// One pixel per row from `p0` to `p1` (inclusive), column found by
/// round-half-up linear interpolation. Requires `p0.y <= p1.y`.
pub fn rasterize_segment(p0: ImagePoint, p1: ImagePoint) -> Vec<ImagePoint> {
    assert!(p0.y <= p1.y, "segment must run downward");
    let dy = (p1.y - p0.y) as i64;
    if dy == 0 {
        return vec![p0];
    }
    let x0 = p0.x as i64;
    let dx = p1.x as i64 - x0;
    (0..=dy)
        .map(|t| {
            let x = x0 + (2 * dx * t + dy).div_euclid(2 * dy);
            ImagePoint::new(x as usize, p0.y + t as usize)
        })
        .collect()
}

/// Begin and cease columns on the bottom edge for an anchor column.
pub fn compute_bc(a_x: usize, width: usize, cfg: &ScanConfig) -> (usize, usize) {
    let w = width as f64;
    let a = a_x as f64;
    let offset = cfg.pr_offset_frac * w;
    let b = if a <= (cfg.pr_min_frac + cfg.pr_offset_frac) * w {
        (cfg.pr_min_frac * w).floor()
    } else {
        (a - offset).floor()
    };
    let c = if a >= (cfg.pr_max_frac - cfg.pr_offset_frac) * w {
        (cfg.pr_max_frac * w).floor()
    } else {
        (a + offset).floor()
    };
    let last = (width - 1) as f64;
    let c = c.clamp(0.0, last) as usize;
    let b = (b.clamp(0.0, last) as usize).min(c);
    (b, c)
}

/// Detected central crop row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CentralRow {
    /// Anchor column projected to the top edge (`y = 0`).
    pub anchor: ImagePoint,
    /// Where the scanned segment starts: the anchor at the top of its band.
    /// Equal to `anchor` when no shift was needed.
    pub knee: ImagePoint,
    /// End point on the bottom edge (`y = H - 1`).
    pub p_r: ImagePoint,
    pub b_x: usize,
    pub c_x: usize,
    /// Crop pixels collected along the full top-to-bottom path.
    pub line_score: usize,
}

impl CentralRow {
    /// Pixels visited by the scoring path: a vertical run from the top edge
    /// down to the knee, then the rasterized knee-to-`p_r` segment.
    pub fn path(&self) -> Vec<ImagePoint> {
        let mut out: Vec<ImagePoint> = (0..self.knee.y)
            .map(|y| ImagePoint::new(self.knee.x, y))
            .collect();
        out.extend(rasterize_segment(self.knee, self.p_r));
        out
    }
}

/// Line scan over the triangle spanned by the anchor and the bottom-edge
/// window `[b_x, c_x]`. A plateau of equal
/// scores resolves to its middle end column.
pub fn line_scan(mask: &Mask, anchor: &AnchorResult, cfg: &ScanConfig) -> CentralRow {
    let bottom = mask.height() - 1;
    let knee = ImagePoint::new(anchor.a_x, anchor.band_top().min(bottom));
    let (b_x, c_x) = compute_bc(anchor.a_x, mask.width(), cfg);
    // The vertical run above the knee is common to every candidate.
    let stem = mask
        .column_sum(knee.x, 0, knee.y)
        .expect("anchor column inside mask");

    let dy = (bottom - knee.y) as i64;
    let x0 = knee.x as i64;
    let scores: Vec<usize> = (b_x..=c_x)
        .map(|p| {
            if dy == 0 {
                return mask.get(knee.x, knee.y) as usize;
            }
            let dx = p as i64 - x0;
            // Walk the segment with an integer accumulator instead of
            // re-evaluating the interpolation per row.
            let (mut x, mut acc) = (x0, dy);
            let (step, rem) = ((2 * dx).div_euclid(2 * dy), (2 * dx).rem_euclid(2 * dy));
            let mut sum = 0usize;
            for y in knee.y..=bottom {
                sum += mask.get(x as usize, y) as usize;
                x += step;
                acc += rem;
                if acc >= 2 * dy {
                    acc -= 2 * dy;
                    x += 1;
                }
            }
            sum
        })
        .collect();
    let (best, score) = argmax_centre(&scores);
    CentralRow {
        anchor: ImagePoint::new(anchor.a_x, 0),
        knee,
        p_r: ImagePoint::new(b_x + best, bottom),
        b_x,
        c_x,
        line_score: stem + score,
    }
}

/// Angular and lateral error of a detected row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrackingError {
    /// Degrees from the image vertical; positive when the far (upper) end of
    /// the row lies to the right of its near end.
    pub delta_theta: f64,
    /// `p_r.x - desired_x` in pixels.
    pub delta_p: f64,
}

/// Angle measured on the scanned segment (knee to `p_r`).
pub fn tracking_error(row: &CentralRow, desired_x: f64) -> TrackingError {
    let dx = row.knee.x as f64 - row.p_r.x as f64;
    let dy = row.p_r.y as f64 - row.knee.y as f64;
    let delta_theta = if dx == 0.0 && dy == 0.0 {
        0.0
    } else {
        dx.atan2(dy).to_degrees()
    };
    TrackingError {
        delta_theta,
        delta_p: row.p_r.x as f64 - desired_x,
    }
}

/// Default desired column: half the mask width.
pub fn default_desired_x(mask: &Mask) -> f64 {
    mask.width() as f64 / 2.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RowDetection {
    pub row: CentralRow,
    pub error: TrackingError,
}

/// Output of [`detect`]. `found` is `None` when no anchor could be validated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Detection {
    pub anchor: AnchorResult,
    pub found: Option<RowDetection>,
}

impl Detection {
    pub fn is_found(&self) -> bool {
        self.found.is_some()
    }
}

pub fn detect(mask: &Mask, cfg: &ScanConfig) -> Detection {
    detect_with_target(mask, cfg, default_desired_x(mask))
}

pub fn detect_with_target(mask: &Mask, cfg: &ScanConfig, desired_x: f64) -> Detection {
    let anchor = anchor_scan(mask, cfg);
    let found = anchor.valid.then(|| {
        let row = line_scan(mask, &anchor, cfg);
        RowDetection {
            row,
            error: tracking_error(&row, desired_x),
        }
    });
    Detection { anchor, found }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn vertical_line(w: usize, h: usize, x: usize) -> Mask {
        Mask::from_fn(w, h, |cx, _| cx == x).unwrap()
    }

    /// Exhaustive column-sum argmax, written independently of `anchor_scan`.
    fn anchor_oracle(mask: &Mask, cfg: &ScanConfig) -> (usize, usize, bool) {
        let h = (cfg.s * mask.height() as f64).floor() as usize;
        let w = mask.width() as f64;
        let lo = (cfg.anchor_x_min_frac * w).ceil() as usize;
        let hi = ((cfg.anchor_x_max_frac * w).floor() as usize).min(mask.width() - 1);
        let mut last = (lo, cfg.n_max, false);
        for n in 0..=cfg.n_max {
            let sums: Vec<usize> = (lo..=hi)
                .map(|x| (n * h..(n + 1) * h).filter(|&y| mask.get(x, y) == 1).count())
                .collect();
            let s = *sums.iter().max().unwrap();
            let first = sums.iter().position(|&v| v == s).unwrap();
            let mut last_max = first;
            while last_max + 1 < sums.len() && sums[last_max + 1] == s {
                last_max += 1;
            }
            let x = lo + (first + last_max) / 2;
            let ok = s > 0 && s as f64 >= cfg.anchor_threshold_frac * h as f64;
            last = (x, n, ok);
            if ok {
                break;
            }
        }
        last
    }

    #[test]
    fn anchor_on_vertical_line() {
        let m = vertical_line(512, 512, 256);
        let a = anchor_scan(&m, &ScanConfig::default());
        assert_eq!((a.a_x, a.n, a.score, a.valid), (256, 0, 102, true));
        assert_eq!(anchor_oracle(&m, &ScanConfig::default()), (256, 0, true));
    }

    #[test]
    fn anchor_on_empty_mask_exhausts_shifts() {
        let a = anchor_scan(&Mask::zeros(512, 512).unwrap(), &ScanConfig::default());
        assert!(!a.valid);
        assert_eq!(a.n, 2);
    }

    #[test]
    fn anchor_shifts_into_second_band() {
        let m = Mask::from_fn(512, 512, |x, y| x == 300 && (102..204).contains(&y)).unwrap();
        let a = anchor_scan(&m, &ScanConfig::default());
        assert_eq!((a.a_x, a.n, a.valid), (300, 1, true));
        assert_eq!(a.score, 102);
    }

    #[test]
    fn anchor_window_respects_fractions() {
        let cfg = ScanConfig::default();
        let (lo, hi) = cfg.anchor_columns(512);
        assert!(lo as f64 >= 0.2 * 512.0 && hi as f64 <= 0.7 * 512.0);
        assert_eq!((lo, hi), (103, 358));
        // A strong line outside the window is ignored.
        let m = Mask::from_fn(512, 512, |x, _| x == 50 || x == 200).unwrap();
        assert_eq!(anchor_scan(&m, &cfg).a_x, 200);
    }

    #[test]
    fn rasterize_examples() {
        let v = rasterize_segment(ImagePoint::new(10, 0), ImagePoint::new(10, 9));
        assert_eq!(v.len(), 10);
        assert!(v.iter().all(|p| p.x == 10));

        let d = rasterize_segment(ImagePoint::new(0, 0), ImagePoint::new(9, 9));
        assert_eq!(d, (0..10).map(|i| ImagePoint::new(i, i)).collect::<Vec<_>>());

        // round_half_up(t / 2) for t = 0..=10
        let s = rasterize_segment(ImagePoint::new(0, 0), ImagePoint::new(5, 10));
        let xs: Vec<usize> = s.iter().map(|p| p.x).collect();
        assert_eq!(xs, vec![0, 1, 1, 2, 2, 3, 3, 4, 4, 5, 5]);

        let single = rasterize_segment(ImagePoint::new(4, 7), ImagePoint::new(9, 7));
        assert_eq!(single, vec![ImagePoint::new(4, 7)]);
    }

    #[test]
    fn rasterize_leftward_rounds_half_up() {
        // x(t) = 10 - t/2: 10, 9.5 -> 10, 9, 8.5 -> 9, 8
        let s = rasterize_segment(ImagePoint::new(10, 0), ImagePoint::new(8, 4));
        let xs: Vec<usize> = s.iter().map(|p| p.x).collect();
        assert_eq!(xs, vec![10, 10, 9, 9, 8]);
    }

    #[test]
    fn begin_cease_worked_cases() {
        let cfg = ScanConfig::default();
        assert_eq!(compute_bc(256, 512, &cfg), (204, 358));
        assert_eq!(compute_bc(359, 512, &cfg), (256, 460));
        assert_eq!(compute_bc(328, 512, &cfg), (225, 430));
    }

    #[test]
    fn line_scan_vertical_line() {
        let cfg = ScanConfig::default();
        let m = vertical_line(512, 512, 256);
        let a = anchor_scan(&m, &cfg);
        let row = line_scan(&m, &a, &cfg);
        assert_eq!(row.p_r, ImagePoint::new(256, 511));
        assert_eq!(row.line_score, 512);
        assert_eq!((row.b_x, row.c_x), (204, 358));
    }

    #[test]
    fn line_scan_all_ones_ties_to_middle() {
        let cfg = ScanConfig::default();
        let m = Mask::ones(512, 512).unwrap();
        let a = anchor_scan(&m, &cfg);
        assert_eq!(a.a_x, (103 + 358) / 2);
        let row = line_scan(&m, &a, &cfg);
        assert_eq!(row.p_r.x, (row.b_x + row.c_x) / 2);
        assert_eq!(row.line_score, 512);
    }

    #[test]
    fn line_scan_slanted_row() {
        let cfg = ScanConfig::default();
        // Nine pixels wide, centre drifting from 256 to 300.
        let m = Mask::from_fn(512, 512, |x, y| {
            let c = 256.0 + 44.0 * y as f64 / 511.0;
            (x as f64 - c).abs() <= 4.5
        })
        .unwrap();
        let a = anchor_scan(&m, &cfg);
        assert!(a.valid && a.n == 0);
        assert!((252..=266).contains(&a.a_x), "a_x = {}", a.a_x);
        let row = line_scan(&m, &a, &cfg);
        assert!((row.p_r.x as i64 - 300).abs() <= 4, "p_r = {:?}", row.p_r);
    }

    #[test]
    fn tracking_error_examples() {
        let m = vertical_line(512, 512, 256);
        let d = detect(&m, &ScanConfig::default());
        let e = d.found.unwrap().error;
        assert_eq!((e.delta_theta, e.delta_p), (0.0, 0.0));

        // Bottom end 512 * tan(10 deg) to the right of the top end.
        let p = (256.0 + 512.0 * 10f64.to_radians().tan()).round() as usize;
        let row = CentralRow {
            anchor: ImagePoint::new(256, 0),
            knee: ImagePoint::new(256, 0),
            p_r: ImagePoint::new(p, 511),
            b_x: 204,
            c_x: 358,
            line_score: 0,
        };
        let e = tracking_error(&row, 256.0);
        assert!((e.delta_theta + 10.0).abs() < 0.2, "{}", e.delta_theta);

        let row = CentralRow {
            p_r: ImagePoint::new(300, 511),
            ..row
        };
        assert_eq!(tracking_error(&row, 256.0).delta_p, 44.0);
    }

    #[test]
    fn tracking_error_degenerate_segment() {
        let pt = ImagePoint::new(5, 5);
        let row = CentralRow {
            anchor: pt,
            knee: pt,
            p_r: pt,
            b_x: 5,
            c_x: 5,
            line_score: 0,
        };
        assert_eq!(tracking_error(&row, 5.0).delta_theta, 0.0);
    }

    #[test]
    fn detect_reports_no_detection_on_empty_mask() {
        let d = detect(&Mask::zeros(128, 128).unwrap(), &ScanConfig::default());
        assert!(!d.is_found());
        assert!(!d.anchor.valid);
    }

    #[test]
    fn config_validation() {
        let cfg = ScanConfig {
            s: 1.0,
            ..ScanConfig::default()
        };
        assert_eq!(cfg.validate(), Err(ScanError::RoiScale(1.0)));
        let cfg = ScanConfig {
            anchor_x_min_frac: 0.8,
            ..ScanConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(ScanError::AnchorWindow { .. })));
        let cfg = ScanConfig {
            s: 0.4,
            ..ScanConfig::default()
        };
        assert!(matches!(cfg.validate_for(512), Err(ScanError::RoiOverflow { .. })));
        assert!(ScanConfig::default().validate_for(512).is_ok());
    }

    fn arb_mask(w: usize, h: usize) -> impl Strategy<Value = Mask> {
        proptest::collection::vec(prop::bool::weighted(0.3), w * h).prop_map(move |bits| {
            Mask::from_pixels(w, h, bits.into_iter().map(u8::from).collect()).unwrap()
        })
    }

    proptest! {
        #[test]
        fn anchor_matches_oracle(m in arb_mask(40, 40), thr in 0.05f64..1.0) {
            let cfg = ScanConfig { anchor_threshold_frac: thr, ..ScanConfig::default() };
            let a = anchor_scan(&m, &cfg);
            prop_assert_eq!((a.a_x, a.n, a.valid), anchor_oracle(&m, &cfg));
        }

        #[test]
        fn rasterize_matches_formula(x0 in 0usize..200, y0 in 0usize..100, x1 in 0usize..200, dy in 0usize..100) {
            let p0 = ImagePoint::new(x0, y0);
            let p1 = ImagePoint::new(x1, y0 + dy);
            let pts = rasterize_segment(p0, p1);
            prop_assert_eq!(pts.len(), dy + 1);
            for (t, p) in pts.iter().enumerate() {
                prop_assert_eq!(p.y, y0 + t);
                if dy > 0 {
                    let exact = x0 as f64 + ((x1 as f64 - x0 as f64) * t as f64) / dy as f64;
                    prop_assert_eq!(p.x, (exact + 0.5).floor() as usize);
                }
            }
        }

        #[test]
        fn begin_cease_ordered_and_in_bounds(a in 0usize..512, w in 16usize..1024) {
            let a = a % w;
            let (b, c) = compute_bc(a, w, &ScanConfig::default());
            prop_assert!(b <= c && c < w);
        }

        #[test]
        fn path_length_spans_image(m in arb_mask(32, 32)) {
            let d = detect(&m, &ScanConfig::default());
            if let Some(found) = d.found {
                let row = found.row;
                prop_assert_eq!(row.path().len(), row.p_r.y - row.anchor.y + 1);
                prop_assert!(row.b_x <= row.p_r.x && row.p_r.x <= row.c_x);
            }
        }

        #[test]
        fn detect_is_deterministic(m in arb_mask(32, 32)) {
            let cfg = ScanConfig::default();
            prop_assert_eq!(detect(&m, &cfg), detect(&m, &cfg));
        }

        #[test]
        fn mirror_symmetry(top in 210usize..300, bottom in 210usize..300) {
            // Rasterized row plus a full-height stub in the first band at
            // the top column, so neither argmax has ties. Odd segment
            // height means no half-pixel roundings, so the mirrored
            // raster equals the raster of the mirrored segment.
            let seg = rasterize_segment(ImagePoint::new(top, 0), ImagePoint::new(bottom, 511));
            let m = Mask::from_fn(512, 512, |x, y| {
                seg[y].x == x || (x == top && y < 102)
            }).unwrap();
            let cfg = ScanConfig::default();
            let centre = (512.0 - 1.0) / 2.0;
            let d = detect_with_target(&m, &cfg, centre);
            let f = detect_with_target(&m.flip_horizontal(), &cfg, centre);
            let (d, f) = (d.found.unwrap(), f.found.unwrap());
            prop_assert_eq!(f.row.anchor.x, 511 - d.row.anchor.x);
            prop_assert_eq!(f.row.p_r.x, 511 - d.row.p_r.x);
            prop_assert!((f.error.delta_theta + d.error.delta_theta).abs() < 1e-12);
            prop_assert!((f.error.delta_p + d.error.delta_p).abs() < 1e-12);
        }
    }
}
