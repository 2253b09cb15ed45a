//! Proportional steering law and the timed exit manoeuvre.

use serde::Serialize;
use thiserror::Error;

use crate::scan::TrackingError;

#[derive(Debug, Error, PartialEq)]
pub enum ControlError {
    #[error("control.alpha must be positive, got {0}")]
    Gain(f64),
    #[error("control weights must be non-negative with a positive sum, got w1={w1} w2={w2}")]
    Weights { w1: f64, w2: f64 },
    #[error("control.v must be positive, got {0}")]
    Speed(f64),
    #[error("control.omega_max must be positive, got {0}")]
    Clamp(f64),
    #[error("exit.lambda must be non-negative, got {0}")]
    Decay(f64),
    #[error("exit.t_e must be positive, got {0}")]
    Duration(f64),
}

/// Gains for `omega = alpha * (w1 * dtheta + w2 * dp)`.
///
/// `dtheta` is in degrees and `dp` in pixels; the weights carry the units.
/// A positive command steers toward the right of the image.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ControllerConfig {
    pub alpha: f64,
    /// Per degree.
    pub w1: f64,
    /// Per pixel.
    pub w2: f64,
    /// Forward speed, m/s. Constant while following a row.
    pub v: f64,
    /// Command saturation, rad/s.
    pub omega_max: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            alpha: 0.02,
            w1: 1.0,
            w2: 0.2,
            v: 0.1,
            omega_max: 1.0,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<(), ControlError> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(ControlError::Gain(self.alpha));
        }
        if !(self.w1 >= 0.0 && self.w2 >= 0.0 && self.w1 + self.w2 > 0.0) {
            return Err(ControlError::Weights {
                w1: self.w1,
                w2: self.w2,
            });
        }
        if !(self.v > 0.0 && self.v.is_finite()) {
            return Err(ControlError::Speed(self.v));
        }
        if !(self.omega_max > 0.0) {
            return Err(ControlError::Clamp(self.omega_max));
        }
        Ok(())
    }

    pub fn saturate(&self, omega: f64) -> f64 {
        omega.clamp(-self.omega_max, self.omega_max)
    }
}

/// Unsaturated proportional law.
pub fn steer(err: &TrackingError, cfg: &ControllerConfig) -> f64 {
    cfg.alpha * (cfg.w1 * err.delta_theta + cfg.w2 * err.delta_p)
}

/// [`steer`] followed by saturation at `omega_max`.
pub fn steer_saturated(err: &TrackingError, cfg: &ControllerConfig) -> f64 {
    cfg.saturate(steer(err, cfg))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExitConfig {
    /// Decay rate, 1/s.
    pub lambda: f64,
    /// Manoeuvre duration before the halt, s.
    pub t_e: f64,
    /// Steering command captured when the exit trigger fired, rad/s.
    pub omega_eor: f64,
}

impl Default for ExitConfig {
    fn default() -> Self {
        Self {
            lambda: 0.01,
            t_e: 20.0,
            omega_eor: 0.0,
        }
    }
}

impl ExitConfig {
    pub fn validate(&self) -> Result<(), ControlError> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(ControlError::Decay(self.lambda));
        }
        if !(self.t_e > 0.0 && self.t_e.is_finite()) {
            return Err(ControlError::Duration(self.t_e));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum ExitCommand {
    /// Keep driving forward with this steering command.
    Turn(f64),
    /// Zero linear and angular velocity.
    Halt,
}

impl ExitCommand {
    pub fn omega(self) -> f64 {
        match self {
            ExitCommand::Turn(w) => w,
            ExitCommand::Halt => 0.0,
        }
    }
}

/// `omega_eor * exp(-lambda * t)` until `t_e`, then a halt.
pub fn exit_omega(t: f64, cfg: &ExitConfig) -> ExitCommand {
    if t >= cfg.t_e {
        ExitCommand::Halt
    } else {
        ExitCommand::Turn(cfg.omega_eor * (-cfg.lambda * t).exp())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn err(dt: f64, dp: f64) -> TrackingError {
        TrackingError {
            delta_theta: dt,
            delta_p: dp,
        }
    }

    #[test]
    fn steer_examples() {
        let cfg = ControllerConfig::default();
        assert_eq!(steer(&err(0.0, 0.0), &cfg), 0.0);
        let cfg = ControllerConfig {
            alpha: 0.01,
            w1: 1.0,
            w2: 0.0,
            ..cfg
        };
        assert!((steer(&err(10.0, 0.0), &cfg) - 0.1).abs() < 1e-15);
        let double = ControllerConfig {
            alpha: 0.02,
            ..cfg.clone()
        };
        let e = err(3.5, -12.0);
        assert_eq!(steer(&e, &double), 2.0 * steer(&e, &cfg));
    }

    #[test]
    fn saturation() {
        let cfg = ControllerConfig::default();
        assert_eq!(steer_saturated(&err(1000.0, 0.0), &cfg), 1.0);
        assert_eq!(steer_saturated(&err(-1000.0, 0.0), &cfg), -1.0);
    }

    #[test]
    fn exit_examples() {
        let cfg = ExitConfig {
            omega_eor: 0.3,
            ..ExitConfig::default()
        };
        assert_eq!(exit_omega(0.0, &cfg), ExitCommand::Turn(0.3));
        let w = exit_omega(100.0, &ExitConfig { t_e: 200.0, ..cfg.clone() }).omega();
        assert!((w - 0.3 * (-1f64).exp()).abs() < 1e-15);
        assert!((w / 0.3 - 0.3679).abs() < 1e-4);
        assert_eq!(exit_omega(20.0, &cfg), ExitCommand::Halt);
        assert_eq!(exit_omega(25.0, &cfg), ExitCommand::Halt);
    }

    #[test]
    fn validation() {
        assert!(ControllerConfig::default().validate().is_ok());
        let bad = ControllerConfig {
            w1: 0.0,
            w2: 0.0,
            ..ControllerConfig::default()
        };
        assert!(matches!(bad.validate(), Err(ControlError::Weights { .. })));
        let bad = ExitConfig {
            t_e: 0.0,
            ..ExitConfig::default()
        };
        assert_eq!(bad.validate(), Err(ControlError::Duration(0.0)));
    }

    proptest! {
        #[test]
        fn steer_superposition(
            a in -90.0f64..90.0, b in -256.0f64..256.0,
            c in -90.0f64..90.0, d in -256.0f64..256.0,
            alpha in 0.001f64..1.0, w1 in 0.0f64..2.0, w2 in 0.0f64..2.0,
        ) {
            let cfg = ControllerConfig { alpha, w1, w2, ..ControllerConfig::default() };
            let sum = steer(&err(a + c, b + d), &cfg);
            let parts = steer(&err(a, b), &cfg) + steer(&err(c, d), &cfg);
            prop_assert!((sum - parts).abs() < 1e-12);
        }

        #[test]
        fn exit_semigroup(lambda in 0.0f64..0.5, t1 in 0.0f64..10.0, t2 in 0.0f64..10.0, w in -1.0f64..1.0) {
            let cfg = ExitConfig { lambda, t_e: 1e6, omega_eor: w };
            let lhs = exit_omega(t1 + t2, &cfg).omega();
            let rhs = exit_omega(t1, &cfg).omega() * (-lambda * t2).exp();
            prop_assert!((lhs - rhs).abs() < 1e-12);
        }

        #[test]
        fn exit_decreasing(lambda in 0.001f64..0.5, t in 0.0f64..19.0, dt in 0.01f64..1.0) {
            let cfg = ExitConfig { lambda, omega_eor: 0.5, ..ExitConfig::default() };
            prop_assert!(exit_omega(t + dt, &cfg).omega() < exit_omega(t, &cfg).omega());
        }
    }
}
