//! Closed-loop simulation of the two scenarios, traces, RMS metrics and
//! controller comparison.

use crate::cascade::{
    accel_to_attitude, position_control_smc, AttitudeController, AttitudeRef, PositionRef, SmcGains,
};
use crate::dynamics::{integrate_rk4, VehicleParams, VehicleState, WrenchCmd};
use crate::{wrap_angle, Error, Result};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use std::io::Write;

/// Samples discarded before the position metrics after a transient, s.
pub const POSITION_TRANSIENT: f64 = 2.0;

/// Attitude setpoint that takes effect at time `t`; angles in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Setpoint {
    pub t: f64,
    pub eta_d: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScenarioKind {
    AttitudeSetpoints {
        schedule: Vec<Setpoint>,
    },
    Trajectory {
        reference: PositionRef,
        gains: SmcGains,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: ScenarioKind,
    /// s
    pub duration: f64,
    /// Recorded with the outputs; the simulation itself draws no random numbers.
    pub seed: u64,
}

impl ScenarioSpec {
    /// Staggered steps of 3 s: each axis goes 0 → +a → −a → 0 with
    /// a = 30°, 20°, 50° for roll, pitch and yaw.
    pub fn attitude_default() -> Self {
        let (r, p, y) = (30f64.to_radians(), 20f64.to_radians(), 50f64.to_radians());
        let schedule = vec![
            Setpoint {
                t: 0.0,
                eta_d: [0.0, 0.0, 0.0],
            },
            Setpoint {
                t: 3.0,
                eta_d: [r, 0.0, 0.0],
            },
            Setpoint {
                t: 6.0,
                eta_d: [-r, p, 0.0],
            },
            Setpoint {
                t: 9.0,
                eta_d: [0.0, -p, y],
            },
            Setpoint {
                t: 12.0,
                eta_d: [0.0, 0.0, -y],
            },
            Setpoint {
                t: 15.0,
                eta_d: [0.0, 0.0, 0.0],
            },
        ];
        Self {
            name: "attitude".into(),
            kind: ScenarioKind::AttitudeSetpoints { schedule },
            duration: 18.0,
            seed: 0,
        }
    }

    /// Helix with yaw cycling 0, +50°, −50° every 8 s.
    pub fn trajectory_default() -> Self {
        Self {
            name: "trajectory".into(),
            kind: ScenarioKind::Trajectory {
                reference: PositionRef::default(),
                gains: SmcGains::default(),
            },
            duration: 24.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duration >= 0.0) || !self.duration.is_finite() {
            return Err(Error::Sim(format!(
                "duration must be nonnegative, got {}",
                self.duration
            )));
        }
        match &self.kind {
            ScenarioKind::AttitudeSetpoints { schedule } => {
                if schedule.is_empty() {
                    return Err(Error::Sim("setpoint schedule is empty".into()));
                }
                if schedule.windows(2).any(|w| !(w[1].t > w[0].t)) {
                    return Err(Error::Sim("setpoint times must be increasing".into()));
                }
                if schedule.iter().any(|s| {
                    s.eta_d.iter().any(|v| !v.is_finite())
                        || s.eta_d[1].abs() > crate::cascade::THETA_LIMIT
                }) {
                    return Err(Error::Sim(
                        "setpoints must be finite with |θ| ≤ 1.3 rad".into(),
                    ));
                }
            }
            ScenarioKind::Trajectory { reference, gains } => {
                reference.validate()?;
                gains.validate()?;
            }
        }
        Ok(())
    }

    /// Setpoint in force at `t` (the first entry applies before its own time).
    pub fn setpoint_at(schedule: &[Setpoint], t: f64) -> Vector3<f64> {
        let s = schedule
            .iter()
            .rev()
            .find(|s| s.t <= t)
            .unwrap_or(&schedule[0]);
        Vector3::from(s.eta_d)
    }
}

/// Loop rates and logging switches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimOptions {
    /// Plant integration step, s.
    pub plant_dt: f64,
    /// Plant steps per attitude-control step.
    pub attitude_substeps: usize,
    /// Attitude steps per position-control step.
    pub position_divider: u64,
    /// Log measured step times; otherwise they are written as zero so that
    /// outputs are reproducible byte for byte.
    pub record_timing: bool,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            plant_dt: 0.001,
            attitude_substeps: 4,
            position_divider: 5,
            record_timing: false,
        }
    }
}

impl SimOptions {
    pub fn control_period(&self) -> f64 {
        self.plant_dt * self.attitude_substeps as f64
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.plant_dt > 0.0) || self.attitude_substeps == 0 || self.position_divider == 0 {
            return Err(Error::Sim("loop rates must be positive".into()));
        }
        Ok(())
    }
}

/// One attitude-rate sample, taken before the control is applied.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceSample {
    pub t: f64,
    pub state: VehicleState,
    pub eta_d: Vector3<f64>,
    pub xi_d: Vector3<f64>,
    pub thrust: f64,
    pub tau: Vector3<f64>,
    pub model_idx: usize,
    pub alpha0: f64,
    pub solve_us: f64,
    /// NaN when the solve failed.
    pub kkt_res: f64,
    pub failed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimTrace {
    pub scenario: String,
    pub tracks_position: bool,
    pub samples: Vec<TraceSample>,
    /// Reason the run stopped early, if it did.
    pub aborted: Option<String>,
}

pub const TRACE_COLUMNS: [&str; 24] = [
    "t",
    "x",
    "y",
    "z",
    "u",
    "v",
    "w",
    "phi",
    "theta",
    "psi",
    "p",
    "q",
    "r",
    "phi_d",
    "theta_d",
    "psi_d",
    "T",
    "tau_x",
    "tau_y",
    "tau_z",
    "model_idx",
    "alpha0",
    "solve_us",
    "kkt_res",
];

impl SimTrace {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{}", TRACE_COLUMNS.join(","))?;
        for s in &self.samples {
            let st = &s.state;
            let vals = [
                s.t, st.xi.x, st.xi.y, st.xi.z, st.v.x, st.v.y, st.v.z, st.eta.x, st.eta.y,
                st.eta.z, st.omega.x, st.omega.y, st.omega.z, s.eta_d.x, s.eta_d.y, s.eta_d.z,
                s.thrust, s.tau.x, s.tau.y, s.tau.z,
            ];
            let mut row: Vec<String> = vals.iter().map(|v| v.to_string()).collect();
            row.push(s.model_idx.to_string());
            row.push(s.alpha0.to_string());
            row.push(s.solve_us.to_string());
            row.push(s.kkt_res.to_string());
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }

    /// Long-format `time,series,value` rows for external plotting.
    pub fn write_plot_data<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "time,series,value")?;
        for s in &self.samples {
            let mut series = vec![
                ("phi_deg", s.state.eta.x.to_degrees()),
                ("theta_deg", s.state.eta.y.to_degrees()),
                ("psi_deg", s.state.eta.z.to_degrees()),
                ("phi_d_deg", s.eta_d.x.to_degrees()),
                ("theta_d_deg", s.eta_d.y.to_degrees()),
                ("psi_d_deg", s.eta_d.z.to_degrees()),
                ("tau_x", s.tau.x),
                ("tau_y", s.tau.y),
                ("tau_z", s.tau.z),
                ("thrust", s.thrust),
                ("model_idx", s.model_idx as f64),
                ("alpha0", s.alpha0),
            ];
            if self.tracks_position {
                series.extend([
                    ("x", s.state.xi.x),
                    ("y", s.state.xi.y),
                    ("z", s.state.xi.z),
                    ("x_d", s.xi_d.x),
                    ("y_d", s.xi_d.y),
                    ("z_d", s.xi_d.z),
                ]);
            }
            for (name, v) in series {
                writeln!(out, "{},{},{}", s.t, name, v)?;
            }
        }
        Ok(())
    }
}

/// Thrust that keeps the vertical force balanced at the current tilt.
fn altitude_hold_thrust(state: &VehicleState, params: &VehicleParams) -> f64 {
    let tilt = (state.eta.x.cos() * state.eta.y.cos()).max(0.5);
    params.hover_thrust() / tilt
}

/// Run one scenario from rest at the origin. A gimbal violation or a
/// nonfinite state stops the run and returns the trace recorded so far.
pub fn run_scenario(
    spec: &ScenarioSpec,
    vehicle: &VehicleParams,
    controller: &mut dyn AttitudeController,
    options: &SimOptions,
) -> Result<SimTrace> {
    spec.validate()?;
    vehicle.validate()?;
    options.validate()?;
    let period = options.control_period();
    let steps = (spec.duration / period).round() as u64;
    let mut trace = SimTrace {
        scenario: spec.name.clone(),
        tracks_position: matches!(spec.kind, ScenarioKind::Trajectory { .. }),
        samples: Vec::with_capacity(steps as usize),
        aborted: None,
    };
    let mut state = VehicleState::hover();
    let mut reference = AttitudeRef::new(Vector3::zeros(), vehicle.hover_thrust());
    let mut xi_d = Vector3::zeros();
    for k in 0..steps {
        let t = k as f64 * period;
        match &spec.kind {
            ScenarioKind::AttitudeSetpoints { schedule } => {
                reference = AttitudeRef::new(
                    ScenarioSpec::setpoint_at(schedule, t),
                    altitude_hold_thrust(&state, vehicle),
                );
            }
            ScenarioKind::Trajectory {
                reference: path,
                gains,
            } => {
                if k % options.position_divider == 0 {
                    xi_d = path.xi_d(t);
                    let a_cmd = position_control_smc(&state, path, t, gains);
                    // an undefined thrust direction keeps the previous reference
                    if let Ok(r) = accel_to_attitude(&a_cmd, path.psi_d(t), vehicle) {
                        reference = r;
                    }
                }
            }
        }
        let out = controller.step(&state, &reference, k);
        trace.samples.push(TraceSample {
            t,
            state,
            eta_d: reference.eta_d,
            xi_d,
            thrust: reference.thrust,
            tau: out.tau,
            model_idx: out.active,
            alpha0: out.alpha0,
            solve_us: if options.record_timing {
                out.solve_time * 1e6
            } else {
                0.0
            },
            kkt_res: out
                .diagnostics
                .as_ref()
                .map_or(f64::NAN, |d| d.kkt_residual),
            failed: out.failed,
        });
        let cmd = WrenchCmd::new(reference.thrust, out.tau);
        for _ in 0..options.attitude_substeps {
            match integrate_rk4(&state, &cmd, vehicle, options.plant_dt) {
                Ok(next)
                    if next
                        .xi
                        .iter()
                        .chain(next.v.iter())
                        .chain(next.omega.iter())
                        .all(|v| v.is_finite()) =>
                {
                    state = next
                }
                Ok(_) => {
                    trace.aborted = Some(format!("state became nonfinite at t = {t}"));
                    return Ok(trace);
                }
                Err(e) => {
                    trace.aborted = Some(format!("t = {t}: {e}"));
                    return Ok(trace);
                }
            }
        }
    }
    Ok(trace)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveTimeStats {
    pub median_us: f64,
    pub p95_us: f64,
    pub max_us: f64,
}

impl SolveTimeStats {
    pub fn from_samples(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self {
                median_us: 0.0,
                p95_us: 0.0,
                max_us: 0.0,
            };
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        let median_us = if n % 2 == 1 {
            v[n / 2]
        } else {
            0.5 * (v[n / 2 - 1] + v[n / 2])
        };
        let rank = ((0.95 * n as f64).ceil() as usize).clamp(1, n);
        Self {
            median_us,
            p95_us: v[rank - 1],
            max_us: v[n - 1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub samples: usize,
    /// deg, per axis φ, θ, ψ
    pub rms_attitude_error: [f64; 3],
    /// N·m
    pub rms_torque: [f64; 3],
    /// m, whole run; trajectory scenarios only
    pub rms_position_error: Option<[f64; 3]>,
    /// m, samples after the initial transient; trajectory scenarios only
    pub rms_position_error_after_transient: Option<[f64; 3]>,
    pub solve_time: SolveTimeStats,
    pub switch_count: usize,
    pub failed_steps: usize,
    pub aborted: bool,
}

fn rms<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let (sum, n) = values
        .into_iter()
        .fold((0.0, 0usize), |(s, n), v| (s + v * v, n + 1));
    if n == 0 {
        0.0
    } else {
        (sum / n as f64).sqrt()
    }
}

fn per_axis<F: Fn(&TraceSample) -> Vector3<f64>>(samples: &[TraceSample], f: F) -> [f64; 3] {
    [0, 1, 2].map(|i| rms(samples.iter().map(|s| f(s)[i])))
}

pub fn compute_metrics(trace: &SimTrace) -> Result<MetricsReport> {
    if trace.is_empty() {
        return Err(Error::Sim(
            "cannot compute metrics of an empty trace".into(),
        ));
    }
    let s = &trace.samples;
    let rms_attitude_error = per_axis(s, |x| {
        (x.state.eta - x.eta_d).map(|e| wrap_angle(e).to_degrees())
    });
    let rms_torque = per_axis(s, |x| x.tau);
    let (rms_position_error, rms_position_error_after_transient) = if trace.tracks_position {
        let settled: Vec<TraceSample> = s
            .iter()
            .filter(|x| x.t >= POSITION_TRANSIENT)
            .copied()
            .collect();
        (
            Some(per_axis(s, |x| x.state.xi - x.xi_d)),
            Some(per_axis(&settled, |x| x.state.xi - x.xi_d)),
        )
    } else {
        (None, None)
    };
    let times: Vec<f64> = s.iter().map(|x| x.solve_us).collect();
    Ok(MetricsReport {
        samples: s.len(),
        rms_attitude_error,
        rms_torque,
        rms_position_error,
        rms_position_error_after_transient,
        solve_time: SolveTimeStats::from_samples(&times),
        switch_count: s
            .windows(2)
            .filter(|w| w[0].model_idx != w[1].model_idx)
            .count(),
        failed_steps: s.iter().filter(|x| x.failed).count(),
        aborted: trace.aborted.is_some(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub controller: String,
    pub metrics: Option<MetricsReport>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRatio {
    pub numerator: String,
    pub denominator: String,
    /// Ratio of median step times.
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub scenario: String,
    pub seed: u64,
    pub rows: Vec<ComparisonRow>,
    pub solve_time_ratios: Vec<TimingRatio>,
    #[serde(skip)]
    pub traces: Vec<Option<SimTrace>>,
}

/// Run the same scenario for each controller in turn. A failing
/// controller is recorded and the rest still run.
pub fn compare_controllers(
    spec: &ScenarioSpec,
    vehicle: &VehicleParams,
    controllers: Vec<(String, Box<dyn AttitudeController>)>,
    options: &SimOptions,
) -> Result<Comparison> {
    spec.validate()?;
    let mut rows = Vec::new();
    let mut traces = Vec::new();
    for (name, mut ctl) in controllers {
        let result = run_scenario(spec, vehicle, ctl.as_mut(), options)
            .and_then(|tr| compute_metrics(&tr).map(|m| (tr, m)));
        match result {
            Ok((trace, metrics)) => {
                let error = trace.aborted.clone();
                rows.push(ComparisonRow {
                    controller: name,
                    metrics: Some(metrics),
                    error,
                });
                traces.push(Some(trace));
            }
            Err(e) => {
                rows.push(ComparisonRow {
                    controller: name,
                    metrics: None,
                    error: Some(e.to_string()),
                });
                traces.push(None);
            }
        }
    }
    let mut solve_time_ratios = Vec::new();
    for a in &rows {
        for b in &rows {
            if a.controller == b.controller {
                continue;
            }
            if let (Some(ma), Some(mb)) = (&a.metrics, &b.metrics) {
                let ratio = if mb.solve_time.median_us > 0.0 {
                    ma.solve_time.median_us / mb.solve_time.median_us
                } else {
                    f64::NAN
                };
                solve_time_ratios.push(TimingRatio {
                    numerator: a.controller.clone(),
                    denominator: b.controller.clone(),
                    ratio,
                });
            }
        }
    }
    Ok(Comparison {
        scenario: spec.name.clone(),
        seed: spec.seed,
        rows,
        solve_time_ratios,
        traces,
    })
}

impl Comparison {
    /// Text table with one row per metric and one column per controller.
    pub fn render_table(&self) -> String {
        let mut lines = Vec::new();
        let mut header = format!("{:<22}", "metric");
        for r in &self.rows {
            header.push_str(&format!("{:>14}", r.controller));
        }
        lines.push(header);
        let mut row = |label: &str, f: &dyn Fn(&MetricsReport) -> Option<f64>| {
            let mut line = format!("{label:<22}");
            for r in &self.rows {
                let cell = r
                    .metrics
                    .as_ref()
                    .and_then(f)
                    .map_or("-".to_string(), |v| format!("{v:.4}"));
                line.push_str(&format!("{cell:>14}"));
            }
            lines.push(line);
        };
        for (i, axis) in ["phi", "theta", "psi"].iter().enumerate() {
            row(&format!("rms {axis} [deg]"), &|m| {
                Some(m.rms_attitude_error[i])
            });
        }
        for (i, axis) in ["tau_x", "tau_y", "tau_z"].iter().enumerate() {
            row(&format!("rms {axis} [N m]"), &|m| Some(m.rms_torque[i]));
        }
        for (i, axis) in ["x", "y", "z"].iter().enumerate() {
            row(&format!("rms {axis} [m]"), &|m| {
                m.rms_position_error.map(|p| p[i])
            });
        }
        row("solve median [us]", &|m| Some(m.solve_time.median_us));
        row("solve p95 [us]", &|m| Some(m.solve_time.p95_us));
        row("solve max [us]", &|m| Some(m.solve_time.max_us));
        row("model switches", &|m| Some(m.switch_count as f64));
        lines.join("\n")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bank::ModelBank;
    use crate::cascade::lmpc_controller;
    use crate::mpc::{MmpcController, MpcParams};

    fn lmpc() -> MmpcController {
        lmpc_controller(&VehicleParams::default(), MpcParams::default(), 0.004).unwrap()
    }

    fn hover_spec(duration: f64) -> ScenarioSpec {
        ScenarioSpec {
            name: "hover".into(),
            kind: ScenarioKind::AttitudeSetpoints {
                schedule: vec![Setpoint {
                    t: 0.0,
                    eta_d: [0.0; 3],
                }],
            },
            duration,
            seed: 0,
        }
    }

    fn sample(t: f64, phi_err_deg: f64) -> TraceSample {
        TraceSample {
            t,
            state: VehicleState {
                eta: Vector3::new(phi_err_deg.to_radians(), 0.0, 0.0),
                ..VehicleState::hover()
            },
            eta_d: Vector3::zeros(),
            xi_d: Vector3::zeros(),
            thrust: 0.0,
            tau: Vector3::zeros(),
            model_idx: 0,
            alpha0: 0.0,
            solve_us: 0.0,
            kkt_res: 0.0,
            failed: false,
        }
    }

    fn synthetic(errors: impl Iterator<Item = (f64, f64)>) -> SimTrace {
        SimTrace {
            scenario: "x".into(),
            tracks_position: false,
            samples: errors.map(|(t, e)| sample(t, e)).collect(),
            aborted: None,
        }
    }

    #[test]
    fn zero_duration_gives_empty_trace() {
        let trace = run_scenario(
            &hover_spec(0.0),
            &VehicleParams::default(),
            &mut lmpc(),
            &SimOptions::default(),
        )
        .unwrap();
        assert!(trace.is_empty());
        assert!(compute_metrics(&trace).is_err());
    }

    #[test]
    fn hover_is_an_equilibrium() {
        let trace = run_scenario(
            &hover_spec(2.0),
            &VehicleParams::default(),
            &mut lmpc(),
            &SimOptions::default(),
        )
        .unwrap();
        assert_eq!(trace.len(), 500);
        for s in &trace.samples {
            assert!(s.state.eta.amax() < 1e-9 && s.state.xi.amax() < 1e-9 && s.tau.amax() < 1e-9);
        }
        let m = compute_metrics(&trace).unwrap();
        assert!(m
            .rms_attitude_error
            .iter()
            .chain(m.rms_torque.iter())
            .all(|&v| v < 1e-9));
    }

    #[test]
    fn trace_length_matches_rate() {
        let trace = run_scenario(
            &hover_spec(1.0),
            &VehicleParams::default(),
            &mut lmpc(),
            &SimOptions::default(),
        )
        .unwrap();
        assert_eq!(trace.len(), 250);
        for (k, s) in trace.samples.iter().enumerate() {
            assert_eq!(s.t, k as f64 * 0.004);
        }
    }

    #[test]
    fn identical_runs_are_bitwise_identical() {
        let spec = ScenarioSpec {
            duration: 4.0,
            ..ScenarioSpec::attitude_default()
        };
        let p = VehicleParams::default();
        let run = || {
            let mut buf = Vec::new();
            let trace = run_scenario(&spec, &p, &mut lmpc(), &SimOptions::default()).unwrap();
            trace.write_csv(&mut buf).unwrap();
            buf
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn constant_error_rms() {
        let m = compute_metrics(&synthetic((0..100).map(|k| (k as f64, 2.0)))).unwrap();
        assert!((m.rms_attitude_error[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn sinusoid_rms() {
        let n = 100_000;
        let period = 2.0 * std::f64::consts::PI;
        let m = compute_metrics(&synthetic((0..n).map(|k| {
            let t = 4.0 * period * k as f64 / n as f64;
            (t, t.sin().to_degrees())
        })))
        .unwrap();
        // error of sin(t) rad reported in degrees
        assert!((m.rms_attitude_error[0].to_radians() - 0.5f64.sqrt()).abs() < 1e-3);
    }

    #[test]
    fn yaw_error_is_wrapped() {
        let mut s = sample(0.0, 0.0);
        s.state.eta.z = 179f64.to_radians();
        s.eta_d.z = -179f64.to_radians();
        let tr = SimTrace {
            scenario: "x".into(),
            tracks_position: false,
            samples: vec![s],
            aborted: None,
        };
        assert!((compute_metrics(&tr).unwrap().rms_attitude_error[2] - 2.0).abs() < 1e-9);
    }

    #[test]
    fn solve_time_percentiles() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        let s = SolveTimeStats::from_samples(&v);
        assert_eq!((s.median_us, s.p95_us, s.max_us), (50.5, 95.0, 100.0));
    }

    #[test]
    fn setpoint_lookup() {
        let spec = ScenarioSpec::attitude_default();
        let ScenarioKind::AttitudeSetpoints { schedule } = &spec.kind else {
            unreachable!()
        };
        assert_eq!(ScenarioSpec::setpoint_at(schedule, 0.0), Vector3::zeros());
        assert_eq!(
            ScenarioSpec::setpoint_at(schedule, 3.0).x,
            30f64.to_radians()
        );
        assert_eq!(ScenarioSpec::setpoint_at(schedule, 17.9), Vector3::zeros());
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut s = ScenarioSpec::attitude_default();
        s.duration = -1.0;
        assert!(s.validate().is_err());
        let bad = ScenarioSpec {
            kind: ScenarioKind::AttitudeSetpoints {
                schedule: vec![
                    Setpoint {
                        t: 1.0,
                        eta_d: [0.0; 3],
                    },
                    Setpoint {
                        t: 1.0,
                        eta_d: [0.0; 3],
                    },
                ],
            },
            ..ScenarioSpec::attitude_default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn comparing_a_controller_with_itself() {
        let spec = ScenarioSpec {
            duration: 2.0,
            ..ScenarioSpec::attitude_default()
        };
        let p = VehicleParams::default();
        let bank = ModelBank::hover(&p, 0.004).unwrap();
        let make = || -> Box<dyn AttitudeController> {
            Box::new(MmpcController::new(bank.clone(), MpcParams::default(), 0.5).unwrap())
        };
        let cmp = compare_controllers(
            &spec,
            &p,
            vec![("a".into(), make()), ("b".into(), make())],
            &SimOptions::default(),
        )
        .unwrap();
        assert_eq!(cmp.rows[0].metrics, cmp.rows[1].metrics);
        assert!(cmp.render_table().contains("rms phi [deg]"));
    }

    #[test]
    fn csv_has_declared_columns() {
        let trace = run_scenario(
            &hover_spec(0.02),
            &VehicleParams::default(),
            &mut lmpc(),
            &SimOptions::default(),
        )
        .unwrap();
        let mut buf = Vec::new();
        trace.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), TRACE_COLUMNS.join(","));
        assert!(lines.all(|l| l.split(',').count() == 24));
    }
}
