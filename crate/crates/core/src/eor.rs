//! End-of-row detection.
//!
//! Once the anchor band has moved down, the band it left behind holds the
//! top of the visible crop rows. The row of that band with the largest
//! full-width crop count is the end-of-row measurement. Measurements are
//! smoothed with a first-order complementary filter and the exit trigger
//! fires when the filtered row reaches the third band, `[2h, 3h)`.

use serde::Serialize;
use thiserror::Error;

use crate::mask::Mask;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EorError {
    #[error("end-of-row scan needs at least one band shift (n >= 1)")]
    NoShift,
    #[error("roi height must be positive")]
    ZeroHeight,
}

/// Row with the largest full-width crop count inside `[(n-1)h, nh)`, or
/// `None` when the band is empty. Ties go to the smallest row.
pub fn eor_scan(mask: &Mask, n: usize, h: usize) -> Result<Option<usize>, EorError> {
    if n == 0 {
        return Err(EorError::NoShift);
    }
    if h == 0 {
        return Err(EorError::ZeroHeight);
    }
    let top = ((n - 1) * h).min(mask.height());
    let bottom = (n * h).min(mask.height());
    let mut best: Option<(usize, usize)> = None;
    for y in top..bottom {
        let sum = mask.row_sum(y).expect("row inside mask");
        if sum > 0 && best.is_none_or(|(_, s)| sum > s) {
            best = Some((y, sum));
        }
    }
    Ok(best.map(|(y, _)| y))
}

/// Filtered end-of-row estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EorState {
    pub filtered_y: Option<f64>,
    /// Weight kept on the previous estimate, in `[0, 1)`.
    pub beta: f64,
    pub triggered: bool,
    pub last_n: usize,
    /// Anchor band height the trigger window is expressed in.
    pub h: usize,
}

pub const DEFAULT_BETA: f64 = 0.8;

impl EorState {
    pub fn new(beta: f64, h: usize) -> Self {
        assert!((0.0..1.0).contains(&beta), "beta must lie in [0, 1)");
        Self {
            filtered_y: None,
            beta,
            triggered: false,
            last_n: 0,
            h,
        }
    }

    /// Trigger window `[2h, 3h)`.
    pub fn trigger_window(&self) -> (f64, f64) {
        (2.0 * self.h as f64, 3.0 * self.h as f64)
    }

    /// Feeds one measurement; the first one initializes the filter.
    pub fn update(&mut self, measurement: f64) {
        let y = match self.filtered_y {
            None => measurement,
            Some(prev) => self.beta * prev + (1.0 - self.beta) * measurement,
        };
        self.filtered_y = Some(y);
        let (lo, hi) = self.trigger_window();
        if y >= lo && y < hi {
            self.triggered = true;
        }
    }

    /// Forgets everything, e.g. when a new row is entered.
    pub fn reset(&mut self) {
        *self = Self::new(self.beta, self.h);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn eor_oracle(mask: &Mask, n: usize, h: usize) -> Option<usize> {
        let mut best = None;
        let mut best_sum = 0;
        for y in (n - 1) * h..n * h {
            let mut s = 0;
            for x in 0..mask.width() {
                s += mask.get(x, y) as usize;
            }
            if s > best_sum {
                best_sum = s;
                best = Some(y);
            }
        }
        best
    }

    #[test]
    fn horizontal_band_is_found() {
        let m = Mask::from_fn(512, 512, |_, y| y == 150).unwrap();
        assert_eq!(eor_scan(&m, 2, 102).unwrap(), Some(150));
        assert_eq!(eor_oracle(&m, 2, 102), Some(150));
        // Outside the band.
        assert_eq!(eor_scan(&m, 1, 102).unwrap(), None);
    }

    #[test]
    fn empty_band_is_absent() {
        let m = Mask::zeros(64, 64).unwrap();
        assert_eq!(eor_scan(&m, 1, 12).unwrap(), None);
    }

    #[test]
    fn uniform_band_ties_to_top() {
        let m = Mask::ones(64, 64).unwrap();
        assert_eq!(eor_scan(&m, 3, 12).unwrap(), Some(24));
    }

    #[test]
    fn zero_shift_is_rejected() {
        let m = Mask::ones(64, 64).unwrap();
        assert_eq!(eor_scan(&m, 0, 12), Err(EorError::NoShift));
    }

    #[test]
    fn filter_examples() {
        let mut s = EorState::new(0.8, 102);
        s.update(120.0);
        assert_eq!(s.filtered_y, Some(120.0));

        let mut s = EorState::new(0.8, 102);
        s.filtered_y = Some(100.0);
        s.update(200.0);
        assert!((s.filtered_y.unwrap() - 120.0).abs() < 1e-12);
        assert!(!s.triggered);
    }

    #[test]
    fn trigger_window_is_third_band() {
        let mut s = EorState::new(0.8, 102);
        s.update(210.0);
        assert!(s.triggered);

        let mut s = EorState::new(0.8, 102);
        s.update(306.0);
        assert!(!s.triggered, "3h is outside the half-open window");

        let mut s = EorState::new(0.8, 102);
        s.update(203.9);
        assert!(!s.triggered);
    }

    #[test]
    fn reset_clears_state() {
        let mut s = EorState::new(0.5, 10);
        s.update(25.0);
        assert!(s.triggered);
        s.reset();
        assert_eq!(s, EorState::new(0.5, 10));
    }

    proptest! {
        #[test]
        fn scan_matches_oracle(
            bits in proptest::collection::vec(prop::bool::weighted(0.1), 32 * 48),
            n in 1usize..=3,
        ) {
            let m = Mask::from_pixels(32, 48, bits.into_iter().map(u8::from).collect()).unwrap();
            prop_assert_eq!(eor_scan(&m, n, 16).unwrap(), eor_oracle(&m, n, 16));
        }

        #[test]
        fn filtered_value_stays_in_hull(
            ms in proptest::collection::vec(0.0f64..500.0, 1..40), beta in 0.0f64..0.99
        ) {
            let mut s = EorState::new(beta, 102);
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            let mut was_triggered = false;
            for m in ms {
                lo = lo.min(m);
                hi = hi.max(m);
                s.update(m);
                let y = s.filtered_y.unwrap();
                prop_assert!(y >= lo - 1e-9 && y <= hi + 1e-9);
                prop_assert!(!was_triggered || s.triggered);
                was_triggered = s.triggered;
            }
        }

        #[test]
        fn constant_input_gap_shrinks_geometrically(
            start in 0.0f64..500.0, target in 0.0f64..500.0, beta in 0.0f64..0.99, k in 1usize..30
        ) {
            let mut s = EorState::new(beta, 102);
            s.update(start);
            let mut prev_gap = (start - target).abs();
            for _ in 0..k {
                s.update(target);
                let gap = (s.filtered_y.unwrap() - target).abs();
                prop_assert!(gap <= prev_gap + 1e-12);
                prev_gap = gap;
            }
            let expected = (start - target).abs() * beta.powi(k as i32);
            prop_assert!((prev_gap - expected).abs() < 1e-9);
        }
    }
}
