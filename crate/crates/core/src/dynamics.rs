//! Rigid-body quadrotor model: rotor mixing, Euler-angle kinematics and
//! Newton–Euler dynamics, integrated with classical RK4.
//!
//! Conventions: `z` points up and gravity enters as `ξ̈ = −g e₃ + R f / m`;
//! `η = [φ, θ, ψ]` are roll, pitch and yaw in the yaw-pitch-roll sequence.

use crate::{wrap_angle, Error, Result};
use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};
use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_PI_2;
use std::ops::{Add, Mul};

/// Rejection margin (rad) around |θ| = π/2.
pub const GIMBAL_EPS: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VehicleParams {
    /// kg
    pub mass: f64,
    /// Diagonal of the inertia matrix, kg·m²
    pub inertia: [f64; 3],
    /// m
    pub arm_length: f64,
    /// N·s²
    pub k_thrust: f64,
    /// N·m·s²
    pub k_torque: f64,
    /// m/s²
    pub gravity: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            mass: 0.65,
            inertia: [0.021, 0.023, 0.032],
            arm_length: 0.225,
            k_thrust: 1.22e-5,
            k_torque: 6.89e-5,
            gravity: 9.81,
        }
    }
}

impl VehicleParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("mass", self.mass),
            ("inertia[0]", self.inertia[0]),
            ("inertia[1]", self.inertia[1]),
            ("inertia[2]", self.inertia[2]),
            ("arm_length", self.arm_length),
            ("k_thrust", self.k_thrust),
            ("k_torque", self.k_torque),
            ("gravity", self.gravity),
        ];
        for (name, v) in fields {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "vehicle parameter {name} must be positive, got {v}"
                )));
            }
        }
        Ok(())
    }

    pub fn inertia_matrix(&self) -> Matrix3<f64> {
        Matrix3::from_diagonal(&Vector3::from(self.inertia))
    }

    pub fn gravity_vector(&self) -> Vector3<f64> {
        Vector3::new(0.0, 0.0, self.gravity)
    }

    pub fn hover_thrust(&self) -> f64 {
        self.mass * self.gravity
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VehicleState {
    /// Position ξ (m)
    pub xi: Vector3<f64>,
    /// Velocity (m/s)
    pub v: Vector3<f64>,
    /// Euler angles η = [φ, θ, ψ] (rad)
    pub eta: Vector3<f64>,
    /// Body rates ω = [p, q, r] (rad/s)
    pub omega: Vector3<f64>,
}

impl VehicleState {
    pub fn hover() -> Self {
        Self::default()
    }

    /// Wrap φ and ψ into (−π, π].
    pub fn wrapped(mut self) -> Self {
        self.eta.x = wrap_angle(self.eta.x);
        self.eta.z = wrap_angle(self.eta.z);
        self
    }
}

/// Time derivative of a [`VehicleState`], also used as an RK4 increment.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StateDerivative {
    pub xi: Vector3<f64>,
    pub v: Vector3<f64>,
    pub eta: Vector3<f64>,
    pub omega: Vector3<f64>,
}

impl Add for StateDerivative {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self {
            xi: self.xi + o.xi,
            v: self.v + o.v,
            eta: self.eta + o.eta,
            omega: self.omega + o.omega,
        }
    }
}

impl Mul<f64> for StateDerivative {
    type Output = Self;
    fn mul(self, k: f64) -> Self {
        Self {
            xi: self.xi * k,
            v: self.v * k,
            eta: self.eta * k,
            omega: self.omega * k,
        }
    }
}

impl Add<StateDerivative> for VehicleState {
    type Output = VehicleState;
    fn add(self, d: StateDerivative) -> VehicleState {
        VehicleState {
            xi: self.xi + d.xi,
            v: self.v + d.v,
            eta: self.eta + d.eta,
            omega: self.omega + d.omega,
        }
    }
}

/// Collective thrust (N) and body torques (N·m).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct WrenchCmd {
    pub thrust: f64,
    pub torque: Vector3<f64>,
}

impl WrenchCmd {
    pub fn new(thrust: f64, torque: Vector3<f64>) -> Self {
        Self { thrust, torque }
    }

    pub fn hover(params: &VehicleParams) -> Self {
        Self {
            thrust: params.hover_thrust(),
            torque: Vector3::zeros(),
        }
    }
}

/// Signed rotor rates Ω₁..Ω₄ (rad/s); rotors 1 and 3 spin positive, 2 and 4 negative.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RotorSpeeds(pub [f64; 4]);

const ROTOR_SIGNS: [f64; 4] = [1.0, -1.0, 1.0, -1.0];

/// Map from squared rotor speeds to (T, τx, τy, τz).
fn mixer(params: &VehicleParams) -> Matrix4<f64> {
    let (kt, kq, l) = (params.k_thrust, params.k_torque, params.arm_length);
    Matrix4::new(
        kt,
        kt,
        kt,
        kt,
        0.0,
        l * kt,
        0.0,
        -l * kt,
        -l * kt,
        0.0,
        l * kt,
        0.0,
        -kq,
        kq,
        -kq,
        kq,
    )
}

pub fn mix_rotors_to_wrench(rotors: &RotorSpeeds, params: &VehicleParams) -> WrenchCmd {
    let sq = Vector4::from(rotors.0.map(|w| w * w));
    let w = mixer(params) * sq;
    WrenchCmd {
        thrust: w[0],
        torque: Vector3::new(w[1], w[2], w[3]),
    }
}

/// Inverse mixing. Negative squared speeds are clamped to zero and reported
/// through the returned saturation flag.
pub fn wrench_to_rotors(cmd: &WrenchCmd, params: &VehicleParams) -> (RotorSpeeds, bool) {
    let a = cmd.thrust / params.k_thrust;
    let bx = cmd.torque.x / (params.arm_length * params.k_thrust);
    let by = cmd.torque.y / (params.arm_length * params.k_thrust);
    let cz = cmd.torque.z / params.k_torque;
    let odd = 0.5 * (a - cz);
    let even = 0.5 * (a + cz);
    let sq = [
        0.5 * (odd - by),
        0.5 * (even + bx),
        0.5 * (odd + by),
        0.5 * (even - bx),
    ];
    let saturated = sq.iter().any(|&s| s < 0.0);
    let mut out = [0.0; 4];
    for i in 0..4 {
        out[i] = ROTOR_SIGNS[i] * sq[i].max(0.0).sqrt();
    }
    (RotorSpeeds(out), saturated)
}

/// Body-to-inertial rotation for η = [φ, θ, ψ].
pub fn rotation_matrix(eta: &Vector3<f64>) -> Matrix3<f64> {
    let (sf, cf) = eta.x.sin_cos();
    let (st, ct) = eta.y.sin_cos();
    let (sp, cp) = eta.z.sin_cos();
    Matrix3::new(
        ct * cp,
        sf * st * cp - cf * sp,
        cf * st * cp + sf * sp,
        ct * sp,
        sf * st * sp + cf * cp,
        cf * st * sp - sf * cp,
        -st,
        sf * ct,
        cf * ct,
    )
}

pub fn check_gimbal(theta: f64) -> Result<()> {
    if theta.abs() >= FRAC_PI_2 - GIMBAL_EPS || !theta.is_finite() {
        return Err(Error::GimbalLock { theta });
    }
    Ok(())
}

/// `H(η)` with `η̇ = H(η) ω`.
pub fn euler_kinematics_matrix(eta: &Vector3<f64>) -> Result<Matrix3<f64>> {
    check_gimbal(eta.y)?;
    let (sf, cf) = eta.x.sin_cos();
    let (tt, ct) = (eta.y.tan(), eta.y.cos());
    Ok(Matrix3::new(
        1.0,
        sf * tt,
        cf * tt,
        0.0,
        cf,
        -sf,
        0.0,
        sf / ct,
        cf / ct,
    ))
}

pub fn state_derivative(
    state: &VehicleState,
    cmd: &WrenchCmd,
    params: &VehicleParams,
) -> Result<StateDerivative> {
    let h = euler_kinematics_matrix(&state.eta)?;
    let r = rotation_matrix(&state.eta);
    let force = Vector3::new(0.0, 0.0, cmd.thrust);
    let accel = -params.gravity_vector() + r * force / params.mass;
    let j = Vector3::from(params.inertia);
    let w = state.omega;
    let jw = w.component_mul(&j);
    let omega_dot = (-w.cross(&jw) + cmd.torque).component_div(&j);
    Ok(StateDerivative {
        xi: state.v,
        v: accel,
        eta: h * w,
        omega: omega_dot,
    })
}

/// One RK4 step with the command held constant over `dt`; φ and ψ are
/// wrapped afterwards.
pub fn integrate_rk4(
    state: &VehicleState,
    cmd: &WrenchCmd,
    params: &VehicleParams,
    dt: f64,
) -> Result<VehicleState> {
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "integration step must be positive, got {dt}"
        )));
    }
    let k1 = state_derivative(state, cmd, params)?;
    let k2 = state_derivative(&(*state + k1 * (0.5 * dt)), cmd, params)?;
    let k3 = state_derivative(&(*state + k2 * (0.5 * dt)), cmd, params)?;
    let k4 = state_derivative(&(*state + k3 * dt), cmd, params)?;
    let incr = (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
    let next = (*state + incr).wrapped();
    check_gimbal(next.eta.y)?;
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_4, PI};

    #[test]
    fn rotation_identity_and_yaw() {
        assert_eq!(rotation_matrix(&Vector3::zeros()), Matrix3::identity());
        let r = rotation_matrix(&Vector3::new(0.0, 0.0, FRAC_PI_2));
        let x = r * Vector3::x();
        assert!((x - Vector3::y()).norm() < 1e-15);
    }

    proptest! {
        #[test]
        fn rotation_is_orthonormal(phi in -PI..PI, theta in -FRAC_PI_2..FRAC_PI_2, psi in -PI..PI) {
            let r = rotation_matrix(&Vector3::new(phi, theta, psi));
            prop_assert!((r.transpose() * r - Matrix3::identity()).norm() < 1e-12);
            prop_assert!((r.determinant() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn kinematics_matrix_values() {
        assert_eq!(
            euler_kinematics_matrix(&Vector3::new(0.0, 0.0, 1.3)).unwrap(),
            Matrix3::identity()
        );
        let h = euler_kinematics_matrix(&Vector3::new(FRAC_PI_4, 0.0, 0.0)).unwrap();
        let s = 2f64.sqrt() / 2.0;
        let expected = Matrix3::new(1.0, 0.0, 0.0, 0.0, s, -s, 0.0, s, s);
        assert!((h - expected).amax() < 1e-15);
        assert!(matches!(
            euler_kinematics_matrix(&Vector3::new(0.0, FRAC_PI_2 - 1e-4, 0.0)),
            Err(Error::GimbalLock { .. })
        ));
    }

    #[test]
    fn equal_rotors_give_pure_thrust() {
        let p = VehicleParams::default();
        let w = mix_rotors_to_wrench(&RotorSpeeds([300.0, -300.0, 300.0, -300.0]), &p);
        assert_eq!(w.torque, Vector3::zeros());
        assert_relative_eq!(
            w.thrust,
            4.0 * p.k_thrust * 300.0 * 300.0,
            max_relative = 1e-15
        );
    }

    #[test]
    fn hover_rotor_speed() {
        let p = VehicleParams::default();
        let omega = (p.mass * p.gravity / p.k_thrust / 4.0).sqrt();
        assert!((omega - 361.5).abs() < 0.05);
        let w = mix_rotors_to_wrench(&RotorSpeeds([omega, -omega, omega, -omega]), &p);
        assert!((w.thrust - p.mass * p.gravity).abs() < 1e-9);
        let (rotors, sat) = wrench_to_rotors(&WrenchCmd::hover(&p), &p);
        assert!(!sat);
        for (i, r) in rotors.0.iter().enumerate() {
            assert!((r.abs() - omega).abs() < 1e-9);
            assert_eq!(r.signum(), ROTOR_SIGNS[i]);
        }
    }

    #[test]
    fn roll_torque_from_differential() {
        let p = VehicleParams::default();
        let base = 300.0f64;
        let w2 = (base * base + 1000.0).sqrt();
        let w = mix_rotors_to_wrench(&RotorSpeeds([base, -w2, base, -base]), &p);
        assert!((w.torque.x - 0.225 * 1.22e-5 * 1000.0).abs() < 1e-15);
        assert!((w.torque.x - 2.745e-3).abs() < 1e-9);
    }

    #[test]
    fn zero_wrench_zero_rotors() {
        let (r, sat) = wrench_to_rotors(&WrenchCmd::default(), &VehicleParams::default());
        assert_eq!(r.0.map(f64::abs), [0.0; 4]);
        assert!(!sat);
    }

    #[test]
    fn infeasible_wrench_is_flagged() {
        let p = VehicleParams::default();
        let (_, sat) = wrench_to_rotors(&WrenchCmd::new(1.0, Vector3::new(1.0, 0.0, 0.0)), &p);
        assert!(sat);
    }

    #[test]
    fn hover_is_equilibrium() {
        let p = VehicleParams::default();
        let d = state_derivative(&VehicleState::hover(), &WrenchCmd::hover(&p), &p).unwrap();
        assert_eq!(d, StateDerivative::default());
        let next = integrate_rk4(&VehicleState::hover(), &WrenchCmd::hover(&p), &p, 0.004).unwrap();
        assert!((next.xi.norm() + next.v.norm() + next.eta.norm() + next.omega.norm()) < 1e-12);
    }

    #[test]
    fn double_thrust_accelerates_up() {
        let p = VehicleParams::default();
        let d = state_derivative(
            &VehicleState::hover(),
            &WrenchCmd::new(2.0 * p.hover_thrust(), Vector3::zeros()),
            &p,
        )
        .unwrap();
        assert!((d.v - Vector3::new(0.0, 0.0, p.gravity)).norm() < 1e-12);
    }

    #[test]
    fn axis_aligned_spin_has_no_gyroscopic_torque() {
        let p = VehicleParams::default();
        let s = VehicleState {
            omega: Vector3::new(1.0, 0.0, 0.0),
            ..Default::default()
        };
        let d = state_derivative(&s, &WrenchCmd::hover(&p), &p).unwrap();
        assert_eq!(d.omega, Vector3::zeros());
    }

    #[test]
    fn free_fall_matches_ballistics() {
        let p = VehicleParams::default();
        let mut s = VehicleState::hover();
        let dt = 0.004;
        for _ in 0..250 {
            s = integrate_rk4(&s, &WrenchCmd::default(), &p, dt).unwrap();
        }
        assert!((s.v.z + p.gravity).abs() < 1e-9);
        assert!((s.xi.z + 0.5 * p.gravity).abs() < 1e-6);
    }

    #[test]
    fn rotational_energy_is_conserved_without_torque() {
        let p = VehicleParams::default();
        let j = Vector3::from(p.inertia);
        let mut s = VehicleState {
            omega: Vector3::new(1.0, -2.0, 0.7),
            eta: Vector3::new(0.1, 0.2, 0.3),
            ..Default::default()
        };
        let energy = |s: &VehicleState| s.omega.dot(&s.omega.component_mul(&j));
        let e0 = energy(&s);
        // analytic rate is zero: ωᵀ(−ω×Jω) = 0
        let d = state_derivative(&s, &WrenchCmd::default(), &p).unwrap();
        assert!((2.0 * s.omega.dot(&d.omega.component_mul(&j))).abs() < 1e-12);
        for _ in 0..250 {
            s = integrate_rk4(&s, &WrenchCmd::default(), &p, 0.004).unwrap();
        }
        assert!((energy(&s) - e0).abs() < 1e-8);
    }

    fn torque_pulse(dt: f64) -> VehicleState {
        let p = VehicleParams::default();
        let mut s = VehicleState::hover();
        let steps = (0.5 / dt).round() as usize;
        for k in 0..steps {
            let t = k as f64 * dt;
            let tau = if t < 0.1 {
                Vector3::new(0.02, -0.015, 0.01)
            } else {
                Vector3::zeros()
            };
            s = integrate_rk4(&s, &WrenchCmd::new(p.hover_thrust() * 1.1, tau), &p, dt).unwrap();
        }
        s
    }

    #[test]
    fn rk4_fourth_order_convergence() {
        let err = |s: VehicleState, r: &VehicleState| {
            ((s.xi - r.xi).norm_squared()
                + (s.v - r.v).norm_squared()
                + (s.eta - r.eta).norm_squared()
                + (s.omega - r.omega).norm_squared())
            .sqrt()
        };
        let reference = torque_pulse(0.002);
        let coarse = err(torque_pulse(0.02), &reference);
        let fine = err(torque_pulse(0.01), &reference);
        let ratio = coarse / fine;
        assert!(ratio > 12.0 && ratio < 20.0, "ratio {ratio}");
    }

    #[test]
    fn gimbal_guard_propagates() {
        let p = VehicleParams::default();
        let s = VehicleState {
            eta: Vector3::new(0.0, FRAC_PI_2 - 1e-4, 0.0),
            ..Default::default()
        };
        assert!(integrate_rk4(&s, &WrenchCmd::hover(&p), &p, 0.001).is_err());
        assert!(integrate_rk4(&VehicleState::hover(), &WrenchCmd::hover(&p), &p, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn mixing_round_trip(t in 1.0..12.0f64, tx in -0.3..0.3f64, ty in -0.3..0.3f64, tz in -0.5..0.5f64) {
            let p = VehicleParams::default();
            let cmd = WrenchCmd::new(t, Vector3::new(tx, ty, tz));
            let (rotors, sat) = wrench_to_rotors(&cmd, &p);
            prop_assume!(!sat);
            let back = mix_rotors_to_wrench(&rotors, &p);
            prop_assert!((back.thrust - cmd.thrust).abs() < 1e-9);
            prop_assert!((back.torque - cmd.torque).amax() < 1e-9);
        }
    }
}
