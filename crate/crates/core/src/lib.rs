//! Multi-model predictive attitude control for quadrotors.
//!
//! The crate is organized bottom-up:
//!
//! - [`linsys`]: state-space types and the robust-control numerics (Riccati,
//!   H∞ norm, normalized coprime factors, discretization).
//! - [`gap`]: directed gap, gap metric, pairwise gap matrix and bank reduction.
//! - [`dynamics`]: the nonlinear rigid-body plant and rotor mixing.
//! - [`bank`]: operating-point grid, attitude linearization, model selection.
//! - [`mpc`]: condensed QP, the dual active-set solver, soft switching and
//!   the multi-model controller.
//! - [`cascade`]: outer position loop and the baseline attitude controllers.
//! - [`sim`]: closed-loop scenarios, traces and RMS metrics.

pub mod bank;
pub mod cascade;
pub mod dynamics;
pub mod error;
pub mod gap;
pub mod linsys;
pub mod mpc;
pub mod sim;

pub use error::{Error, Result};

/// Wrap an angle to the half-open interval (−π, π].
pub fn wrap_angle(angle: f64) -> f64 {
    use std::f64::consts::PI;
    let mut a = angle % (2.0 * PI);
    if a <= -PI {
        a += 2.0 * PI;
    } else if a > PI {
        a -= 2.0 * PI;
    }
    a
}

#[cfg(test)]
mod tests {
    use super::wrap_angle;
    use std::f64::consts::PI;

    #[test]
    fn wrap_angle_range() {
        assert_eq!(wrap_angle(PI), PI);
        assert_eq!(wrap_angle(-PI), PI);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
        assert!((wrap_angle(-7.0) - (-7.0 + 2.0 * PI)).abs() < 1e-12);
        assert_eq!(wrap_angle(0.25), 0.25);
    }
}
