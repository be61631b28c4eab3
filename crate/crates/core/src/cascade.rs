//! Outer position loop, the acceleration-to-attitude mapping and the
//! attitude controllers compared against each other.

use crate::bank::{attitude_jacobian, ModelBank};
use crate::dynamics::{check_gimbal, euler_kinematics_matrix, VehicleParams, VehicleState};
use crate::mpc::{
    attitude_error, build_qp_from_prediction, solve_qp_warm, ConstraintKey, MmpcController,
    MpcOutput, MpcParams, Prediction,
};
use crate::{Error, Result};
use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

/// Largest commanded pitch magnitude, rad.
pub const THETA_LIMIT: f64 = 1.3;
/// Smallest `‖a + g‖` for which a thrust direction is defined, m/s².
pub const MIN_SPECIFIC_FORCE: f64 = 0.1;

/// Helix `ξ_d = [r sin(wt), r cos(wt), c t]` with a piecewise-constant yaw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionRef {
    pub radius: f64,
    pub rate: f64,
    pub climb: f64,
    /// Yaw values cycled through, rad.
    pub yaw_values: Vec<f64>,
    /// Time each yaw value is held, s.
    pub yaw_period: f64,
}

impl Default for PositionRef {
    fn default() -> Self {
        let d = 50f64.to_radians();
        Self {
            radius: 5.0,
            rate: 0.5,
            climb: 1.0,
            yaw_values: vec![0.0, d, -d],
            yaw_period: 8.0,
        }
    }
}

impl PositionRef {
    /// Validates the parameters and checks the analytic derivatives against
    /// central differences.
    pub fn new(
        radius: f64,
        rate: f64,
        climb: f64,
        yaw_values: Vec<f64>,
        yaw_period: f64,
    ) -> Result<Self> {
        let r = Self {
            radius,
            rate,
            climb,
            yaw_values,
            yaw_period,
        };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        if ![self.radius, self.rate, self.climb]
            .iter()
            .all(|v| v.is_finite())
        {
            return Err(Error::Cascade("helix parameters must be finite".into()));
        }
        if self.yaw_values.is_empty() || !(self.yaw_period > 0.0) {
            return Err(Error::Cascade(
                "yaw schedule needs at least one value and a positive period".into(),
            ));
        }
        let h = 1e-4;
        for i in 0..20 {
            let t = 0.37 * i as f64;
            let fd_v = (self.xi_d(t + h) - self.xi_d(t - h)) / (2.0 * h);
            let fd_a = (self.xi_d_dot(t + h) - self.xi_d_dot(t - h)) / (2.0 * h);
            if (fd_v - self.xi_d_dot(t)).amax() > 1e-3 || (fd_a - self.xi_d_ddot(t)).amax() > 1e-3 {
                return Err(Error::Cascade(format!(
                    "reference derivatives are inconsistent at t = {t}"
                )));
            }
        }
        Ok(())
    }

    pub fn xi_d(&self, t: f64) -> Vector3<f64> {
        let (s, c) = (self.rate * t).sin_cos();
        Vector3::new(self.radius * s, self.radius * c, self.climb * t)
    }

    pub fn xi_d_dot(&self, t: f64) -> Vector3<f64> {
        let (s, c) = (self.rate * t).sin_cos();
        Vector3::new(
            self.radius * self.rate * c,
            -self.radius * self.rate * s,
            self.climb,
        )
    }

    pub fn xi_d_ddot(&self, t: f64) -> Vector3<f64> {
        let (s, c) = (self.rate * t).sin_cos();
        let w2 = self.rate * self.rate;
        Vector3::new(-self.radius * w2 * s, -self.radius * w2 * c, 0.0)
    }

    pub fn psi_d(&self, t: f64) -> f64 {
        let slot = (t.max(0.0) / self.yaw_period).floor() as usize;
        self.yaw_values[slot % self.yaw_values.len()]
    }
}

/// Attitude setpoint and collective thrust handed to the attitude loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttitudeRef {
    pub eta_d: Vector3<f64>,
    /// N
    pub thrust: f64,
}

impl AttitudeRef {
    pub fn new(eta_d: Vector3<f64>, thrust: f64) -> Self {
        Self {
            eta_d: Vector3::new(eta_d.x, eta_d.y.clamp(-THETA_LIMIT, THETA_LIMIT), eta_d.z),
            thrust: thrust.max(0.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmcGains {
    pub lambda: Vector3<f64>,
    pub k: Vector3<f64>,
    /// Boundary-layer width.
    pub boundary: f64,
}

impl Default for SmcGains {
    fn default() -> Self {
        Self {
            lambda: Vector3::repeat(1.5),
            k: Vector3::repeat(4.0),
            boundary: 0.5,
        }
    }
}

impl SmcGains {
    pub fn validate(&self) -> Result<()> {
        if self.lambda.iter().chain(self.k.iter()).any(|&g| !(g > 0.0)) || !(self.boundary > 0.0) {
            return Err(Error::Cascade(
                "sliding-mode gains and boundary layer must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Sliding-mode position law with a saturated boundary layer.
pub fn position_control_smc(
    state: &VehicleState,
    reference: &PositionRef,
    t: f64,
    gains: &SmcGains,
) -> Vector3<f64> {
    let ev = state.v - reference.xi_d_dot(t);
    let ep = state.xi - reference.xi_d(t);
    let s = ev + gains.lambda.component_mul(&ep);
    let sat = s.map(|x| (x / gains.boundary).clamp(-1.0, 1.0));
    reference.xi_d_ddot(t) - gains.lambda.component_mul(&ev) - gains.k.component_mul(&sat)
}

/// Roll, pitch and thrust that point the thrust axis along `a_cmd + g e₃`.
pub fn accel_to_attitude(
    a_cmd: &Vector3<f64>,
    psi_d: f64,
    params: &VehicleParams,
) -> Result<AttitudeRef> {
    let f = a_cmd + params.gravity_vector();
    let norm = f.norm();
    if !(norm > MIN_SPECIFIC_FORCE) {
        return Err(Error::Cascade(format!(
            "commanded specific force {norm} m/s² leaves the thrust direction undefined"
        )));
    }
    let u = f / norm;
    let (sp, cp) = psi_d.sin_cos();
    let phi = (u.x * sp - u.y * cp).clamp(-1.0, 1.0).asin();
    let theta = (u.x * cp + u.y * sp).atan2(u.z);
    Ok(AttitudeRef::new(
        Vector3::new(phi, theta, psi_d),
        params.mass * norm,
    ))
}

/// Uniform interface of the compared attitude controllers.
pub trait AttitudeController {
    fn step(&mut self, state: &VehicleState, reference: &AttitudeRef, k: u64) -> MpcOutput;
}

impl AttitudeController for MmpcController {
    fn step(&mut self, state: &VehicleState, reference: &AttitudeRef, k: u64) -> MpcOutput {
        MmpcController::step(self, &state.eta, &state.omega, &reference.eta_d, k)
    }
}

/// Linear MPC: the multi-model controller restricted to the hover model.
pub fn lmpc_controller(
    vehicle: &VehicleParams,
    params: MpcParams,
    sample_period: f64,
) -> Result<MmpcController> {
    MmpcController::new(ModelBank::hover(vehicle, sample_period)?, params, 0.0)
}

/// MPC that relinearizes the attitude dynamics at the current state every step.
#[derive(Debug, Clone)]
pub struct NmpcController {
    vehicle: VehicleParams,
    params: MpcParams,
    sample_period: f64,
    warm: Vec<ConstraintKey>,
    last_tau: Vector3<f64>,
    pub tol: f64,
}

impl NmpcController {
    pub fn new(vehicle: VehicleParams, params: MpcParams, sample_period: f64) -> Result<Self> {
        vehicle.validate()?;
        params.validate()?;
        if !(sample_period > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "sample period must be positive, got {sample_period}"
            )));
        }
        Ok(Self {
            vehicle,
            params,
            sample_period,
            warm: Vec::new(),
            last_tau: Vector3::zeros(),
            tol: 1e-9,
        })
    }

    /// Discrete model `e⁺ = A e + B τ + c` of the tracking error about the
    /// current state, exact for constant drift over one sample.
    pub fn local_model(
        &self,
        state: &VehicleState,
        chi0: &DVector<f64>,
    ) -> Result<(DMatrix<f64>, DMatrix<f64>, DVector<f64>)> {
        check_gimbal(state.eta.y)?;
        let (a, b) = attitude_jacobian(&state.eta, &state.omega, &self.vehicle)?;
        let h = euler_kinematics_matrix(&state.eta)?;
        let j = Vector3::from(self.vehicle.inertia);
        let w = state.omega;
        let eta_dot = h * w;
        let omega_dot = (-w.cross(&w.component_mul(&j))).component_div(&j);
        let mut aug = DMatrix::zeros(10, 10);
        aug.view_mut((0, 0), (6, 6)).copy_from(&a);
        aug.view_mut((0, 6), (6, 3)).copy_from(&b);
        for i in 0..3 {
            aug[(i, 9)] = eta_dot[i];
            aug[(3 + i, 9)] = omega_dot[i];
        }
        let e = (aug * self.sample_period).exp();
        let ad = e.view((0, 0), (6, 6)).into_owned();
        let bd = e.view((0, 6), (6, 3)).into_owned();
        let cd = e.view((0, 9), (6, 1)).column(0).into_owned();
        let c = cd + chi0 - &ad * chi0;
        Ok((ad, bd, c))
    }

    fn solve(&mut self, state: &VehicleState, reference: &AttitudeRef) -> Result<MpcOutput> {
        let chi0 = attitude_error(
            &state.eta,
            &state.omega,
            &reference.eta_d,
            &Vector3::zeros(),
        );
        let (a, b, c) = self.local_model(state, &chi0)?;
        let pred = Prediction::affine(&a, &b, &c, self.params.horizon)?;
        let weights = vec![self.params.weights(); self.params.horizon + 1];
        let qp = build_qp_from_prediction(&pred, &weights, &chi0, &self.params, None)?;
        let sol = solve_qp_warm(&qp, self.tol, &self.warm)?;
        let tau = Vector3::new(sol.u[0], sol.u[1], sol.u[2]);
        self.warm = sol
            .diagnostics
            .active
            .iter()
            .filter_map(|k| k.shifted())
            .collect();
        Ok(MpcOutput {
            tau,
            active: 0,
            alpha0: 0.0,
            solve_time: 0.0,
            diagnostics: Some(sol.diagnostics),
            failed: false,
        })
    }
}

impl AttitudeController for NmpcController {
    fn step(&mut self, state: &VehicleState, reference: &AttitudeRef, _k: u64) -> MpcOutput {
        let started = Instant::now();
        let out = match self.solve(state, reference) {
            Ok(out) => {
                self.last_tau = out.tau;
                out
            }
            Err(_) => {
                self.warm.clear();
                MpcOutput {
                    tau: self.last_tau,
                    active: 0,
                    alpha0: 0.0,
                    solve_time: 0.0,
                    diagnostics: None,
                    failed: true,
                }
            }
        };
        MpcOutput {
            solve_time: started.elapsed().as_secs_f64(),
            ..out
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControllerKind {
    Mmpc,
    Lmpc,
    Nmpc,
}

impl ControllerKind {
    pub const ALL: [ControllerKind; 3] = [
        ControllerKind::Mmpc,
        ControllerKind::Lmpc,
        ControllerKind::Nmpc,
    ];

    pub fn id(&self) -> &'static str {
        match self {
            ControllerKind::Mmpc => "mmpc",
            ControllerKind::Lmpc => "lmpc",
            ControllerKind::Nmpc => "nmpc",
        }
    }

    /// Instantiate the controller; the bank is used by MMPC only and sets
    /// the sample period for all three.
    pub fn build(
        &self,
        bank: &ModelBank,
        vehicle: &VehicleParams,
        params: &MpcParams,
        lambda: f64,
    ) -> Result<Box<dyn AttitudeController>> {
        Ok(match self {
            ControllerKind::Mmpc => {
                Box::new(MmpcController::new(bank.clone(), params.clone(), lambda)?)
            }
            ControllerKind::Lmpc => Box::new(lmpc_controller(
                vehicle,
                params.clone(),
                bank.sample_period,
            )?),
            ControllerKind::Nmpc => Box::new(NmpcController::new(
                *vehicle,
                params.clone(),
                bank.sample_period,
            )?),
        })
    }
}

impl fmt::Display for ControllerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for ControllerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ControllerKind::ALL
            .into_iter()
            .find(|k| k.id() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "unknown controller '{s}' (expected mmpc, lmpc or nmpc)"
                ))
            })
    }
}
