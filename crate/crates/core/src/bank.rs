//! Operating-point grid, attitude linearization, gap-based reduction and
//! runtime nearest-model selection.

use crate::dynamics::{euler_kinematics_matrix, VehicleParams};
use crate::gap::{gap_matrix, reduce_bank, GapMatrix, DEFAULT_TOL};
use crate::linsys::{c2d, Discretization, StateSpace, TimeDomain};
use crate::{wrap_angle, Error, Result};
use nalgebra::{DMatrix, Vector3};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::f64::consts::{FRAC_PI_2, PI};
use std::io::{Read, Write};

pub const BANK_FORMAT: &str = "mmpc-model-bank";
pub const BANK_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub phi: f64,
    pub theta: f64,
}

impl OperatingPoint {
    pub fn new(phi: f64, theta: f64) -> Self {
        Self { phi, theta }
    }

    /// Squared distance with the roll difference wrapped to (−π, π].
    pub fn distance_sq(&self, phi: f64, theta: f64) -> f64 {
        let dphi = wrap_angle(phi - self.phi);
        let dtheta = theta - self.theta;
        dphi * dphi + dtheta * dtheta
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSpec {
    pub n_phi: usize,
    pub n_theta: usize,
    pub theta_max: f64,
    /// Half-width of the roll range; `π` covers the full circle.
    pub phi_max: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            n_phi: 10,
            n_theta: 10,
            theta_max: 1.3,
            phi_max: PI,
        }
    }
}

impl GridSpec {
    pub fn new(n_phi: usize, n_theta: usize, theta_max: f64) -> Self {
        Self {
            n_phi,
            n_theta,
            theta_max,
            phi_max: PI,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_phi == 0 || self.n_theta == 0 {
            return Err(Error::InvalidArgument(format!(
                "grid needs at least one point per axis, got {}×{}",
                self.n_phi, self.n_theta
            )));
        }
        if !(self.theta_max > 0.0 && self.theta_max < FRAC_PI_2) {
            return Err(Error::InvalidArgument(format!(
                "theta_max must lie in (0, π/2), got {}",
                self.theta_max
            )));
        }
        if !(self.phi_max > 0.0 && self.phi_max <= PI) {
            return Err(Error::InvalidArgument(format!(
                "phi_max must lie in (0, π], got {}",
                self.phi_max
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.n_phi * self.n_theta
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Roll values. The full circle gets `n_phi` equally spaced values in
    /// (−π, π] that include 0; a partial range is sampled like θ.
    pub fn phi_values(&self) -> Vec<f64> {
        if self.phi_max >= PI {
            let off = ((self.n_phi - 1) / 2) as f64;
            let n = self.n_phi as f64;
            (0..self.n_phi)
                .map(|i| 2.0 * PI * (i as f64 - off) / n)
                .collect()
        } else {
            symmetric_linspace(self.n_phi, self.phi_max)
        }
    }

    pub fn theta_values(&self) -> Vec<f64> {
        symmetric_linspace(self.n_theta, self.theta_max)
    }

    /// Row-major points, θ outer and φ inner.
    pub fn points(&self) -> Result<Vec<OperatingPoint>> {
        self.validate()?;
        let phis = self.phi_values();
        Ok(self
            .theta_values()
            .into_iter()
            .flat_map(|t| phis.iter().map(move |&p| OperatingPoint::new(p, t)))
            .collect())
    }
}

/// `n` evenly spaced values from `−max` to `max`; `[0]` when `n = 1`.
fn symmetric_linspace(n: usize, max: f64) -> Vec<f64> {
    if n == 1 {
        return vec![0.0];
    }
    let step = 2.0 * max / (n - 1) as f64;
    (0..n)
        .map(|j| (-max + step * j as f64).clamp(-max, max))
        .collect()
}

pub fn generate_grid(n_phi: usize, n_theta: usize, theta_max: f64) -> Result<Vec<OperatingPoint>> {
    GridSpec::new(n_phi, n_theta, theta_max).points()
}

/// Attitude model `χ̇ = A χ + B u` with `χ = [Δφ, Δθ, Δψ, Δp, Δq, Δr]`, `u = Δτ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub op: OperatingPoint,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub domain: TimeDomain,
}

impl LinearModel {
    /// State-space form with all six states measured.
    pub fn state_space(&self) -> Result<StateSpace> {
        StateSpace::new(
            self.a.clone(),
            self.b.clone(),
            DMatrix::identity(6, 6),
            DMatrix::zeros(6, 3),
            self.domain,
        )
    }

    pub fn discretize(&self, sample_period: f64) -> Result<LinearModel> {
        let d = c2d(&self.state_space()?, sample_period, Discretization::Zoh)?;
        Ok(LinearModel {
            op: self.op,
            a: d.a,
            b: d.b,
            domain: d.domain,
        })
    }
}

/// Jacobians of the attitude subsystem `η̇ = H(η)ω`, `ω̇ = J⁻¹(−ω×Jω + τ)`
/// at an arbitrary `(η, ω)`.
pub fn attitude_jacobian(
    eta: &Vector3<f64>,
    omega: &Vector3<f64>,
    params: &VehicleParams,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let h = euler_kinematics_matrix(eta)?;
    let (sf, cf) = eta.x.sin_cos();
    let (st, ct) = eta.y.sin_cos();
    let tt = st / ct;
    let (_, q, r) = (omega.x, omega.y, omega.z);
    let sec2 = 1.0 / (ct * ct);
    let u = sf * q + cf * r;
    let v = cf * q - sf * r;
    let mut a = DMatrix::zeros(6, 6);
    a[(0, 0)] = v * tt;
    a[(0, 1)] = u * sec2;
    a[(1, 0)] = -u;
    a[(2, 0)] = v / ct;
    a[(2, 1)] = u * st * sec2;
    for i in 0..3 {
        for j in 0..3 {
            a[(i, 3 + j)] = h[(i, j)];
        }
    }
    let [j1, j2, j3] = params.inertia;
    let (p, q, r) = (omega.x, omega.y, omega.z);
    a[(3, 4)] = (j2 - j3) * r / j1;
    a[(3, 5)] = (j2 - j3) * q / j1;
    a[(4, 3)] = (j3 - j1) * r / j2;
    a[(4, 5)] = (j3 - j1) * p / j2;
    a[(5, 3)] = (j1 - j2) * q / j3;
    a[(5, 4)] = (j1 - j2) * p / j3;
    let mut b = DMatrix::zeros(6, 3);
    for i in 0..3 {
        b[(3 + i, i)] = 1.0 / params.inertia[i];
    }
    Ok((a, b))
}

/// Continuous-time linearization at the trim `(φ₀, θ₀, ω = 0, τ = 0)`.
pub fn linearize_attitude(op: &OperatingPoint, params: &VehicleParams) -> Result<LinearModel> {
    let (a, b) = attitude_jacobian(
        &Vector3::new(op.phi, op.theta, 0.0),
        &Vector3::zeros(),
        params,
    )?;
    Ok(LinearModel {
        op: *op,
        a,
        b,
        domain: TimeDomain::Continuous,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBank {
    pub grid: GridSpec,
    pub points: Vec<OperatingPoint>,
    /// Discrete-time representative models.
    pub models: Vec<LinearModel>,
    /// Grid index of each representative.
    pub representatives: Vec<usize>,
    /// For every grid point, the position of its representative in `models`.
    pub assignment: Vec<usize>,
    /// Gap from every grid point to its representative.
    pub gap_to_representative: Vec<f64>,
    pub delta_th: f64,
    pub sample_period: f64,
    pub params_hash: String,
}

pub fn params_hash(params: &VehicleParams) -> String {
    let json = serde_json::to_string(params).expect("vehicle parameters serialize");
    Sha256::digest(json.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Bank together with the full gap matrix it was reduced from.
#[derive(Debug, Clone)]
pub struct BankBuild {
    pub bank: ModelBank,
    pub gaps: GapMatrix,
}

pub fn build_bank(
    grid: &GridSpec,
    params: &VehicleParams,
    delta_th: f64,
    sample_period: f64,
) -> Result<BankBuild> {
    build_bank_with_tol(grid, params, delta_th, sample_period, DEFAULT_TOL)
}

pub fn build_bank_with_tol(
    grid: &GridSpec,
    params: &VehicleParams,
    delta_th: f64,
    sample_period: f64,
    tol: f64,
) -> Result<BankBuild> {
    params.validate()?;
    if !(sample_period > 0.0) {
        return Err(Error::Bank(format!(
            "sample period must be positive, got {sample_period}"
        )));
    }
    let points = grid.points()?;
    let continuous: Vec<LinearModel> = points
        .iter()
        .map(|op| linearize_attitude(op, params))
        .collect::<Result<_>>()?;
    let systems: Vec<StateSpace> = continuous
        .iter()
        .map(LinearModel::state_space)
        .collect::<Result<_>>()?;
    let gaps = gap_matrix(&systems, tol)?;
    let reduction = reduce_bank(&gaps, delta_th)?;
    let models = reduction
        .representatives
        .iter()
        .map(|&r| continuous[r].discretize(sample_period))
        .collect::<Result<Vec<_>>>()?;
    let position = |grid_index: usize| {
        reduction
            .representatives
            .binary_search(&grid_index)
            .expect("representative is listed")
    };
    let assignment: Vec<usize> = reduction.assignment.iter().map(|&r| position(r)).collect();
    let gap_to_representative = reduction
        .assignment
        .iter()
        .enumerate()
        .map(|(i, &r)| gaps.get(i, r))
        .collect();
    let bank = ModelBank {
        grid: *grid,
        points,
        models,
        representatives: reduction.representatives,
        assignment,
        gap_to_representative,
        delta_th,
        sample_period,
        params_hash: params_hash(params),
    };
    bank.validate()?;
    Ok(BankBuild { bank, gaps })
}

#[derive(Serialize, Deserialize)]
struct MatrixRecord {
    rows: usize,
    cols: usize,
    /// Row-major entries.
    data: Vec<f64>,
}

impl MatrixRecord {
    fn from_matrix(m: &DMatrix<f64>) -> Self {
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            data: m.transpose().iter().copied().collect(),
        }
    }

    fn to_matrix(&self) -> Result<DMatrix<f64>> {
        if self.data.len() != self.rows * self.cols {
            return Err(Error::Format(format!(
                "matrix record holds {} values for {}×{}",
                self.data.len(),
                self.rows,
                self.cols
            )));
        }
        Ok(DMatrix::from_row_slice(self.rows, self.cols, &self.data))
    }
}

#[derive(Serialize, Deserialize)]
struct ModelRecord {
    op: OperatingPoint,
    a: MatrixRecord,
    b: MatrixRecord,
}

#[derive(Serialize, Deserialize)]
struct BankFile {
    format: String,
    version: u32,
    params_hash: String,
    grid: GridSpec,
    delta_th: f64,
    sample_period: f64,
    points: Vec<OperatingPoint>,
    representatives: Vec<usize>,
    assignment: Vec<usize>,
    gap_to_representative: Vec<f64>,
    models: Vec<ModelRecord>,
}

impl ModelBank {
    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    /// Singleton bank holding the hover linearization, used by linear MPC.
    pub fn hover(params: &VehicleParams, sample_period: f64) -> Result<Self> {
        let grid = GridSpec::new(1, 1, 1.3);
        let op = OperatingPoint::new(0.0, 0.0);
        let model = linearize_attitude(&op, params)?.discretize(sample_period)?;
        Ok(Self {
            grid,
            points: vec![op],
            models: vec![model],
            representatives: vec![0],
            assignment: vec![0],
            gap_to_representative: vec![0.0],
            delta_th: 0.0,
            sample_period,
            params_hash: params_hash(params),
        })
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.points.len();
        if self.models.is_empty() || n == 0 {
            return Err(Error::Bank("model bank is empty".into()));
        }
        if self.assignment.len() != n || self.gap_to_representative.len() != n {
            return Err(Error::Bank(format!(
                "assignment covers {} of {} grid points",
                self.assignment.len(),
                n
            )));
        }
        if self.representatives.len() != self.models.len() {
            return Err(Error::Bank(
                "representative list and model list differ in length".into(),
            ));
        }
        if let Some(&bad) = self.assignment.iter().find(|&&m| m >= self.models.len()) {
            return Err(Error::Bank(format!(
                "assignment refers to missing model {bad}"
            )));
        }
        for (k, &r) in self.representatives.iter().enumerate() {
            if r >= n || self.assignment[r] != k {
                return Err(Error::Bank(format!(
                    "representative {r} is not assigned to itself"
                )));
            }
        }
        for m in &self.models {
            if m.a.shape() != (6, 6)
                || m.b.shape() != (6, 3)
                || !matches!(m.domain, TimeDomain::Discrete { .. })
            {
                return Err(Error::Bank("bank models must be discrete 6×6 / 6×3".into()));
            }
        }
        Ok(())
    }

    /// Position in `models` of the representative of the grid point nearest
    /// to `(φ, θ)`; ties go to the lowest grid index.
    pub fn select_model(&self, phi: f64, theta: f64) -> usize {
        self.assignment[self.nearest_point(phi, theta)]
    }

    pub fn nearest_point(&self, phi: f64, theta: f64) -> usize {
        let mut best = (0, f64::INFINITY);
        for (i, p) in self.points.iter().enumerate() {
            let d = p.distance_sq(phi, theta);
            if d < best.1 {
                best = (i, d);
            }
        }
        best.0
    }

    pub fn write_json<W: Write>(&self, out: W) -> Result<()> {
        let file = BankFile {
            format: BANK_FORMAT.into(),
            version: BANK_VERSION,
            params_hash: self.params_hash.clone(),
            grid: self.grid,
            delta_th: self.delta_th,
            sample_period: self.sample_period,
            points: self.points.clone(),
            representatives: self.representatives.clone(),
            assignment: self.assignment.clone(),
            gap_to_representative: self.gap_to_representative.clone(),
            models: self
                .models
                .iter()
                .map(|m| ModelRecord {
                    op: m.op,
                    a: MatrixRecord::from_matrix(&m.a),
                    b: MatrixRecord::from_matrix(&m.b),
                })
                .collect(),
        };
        serde_json::to_writer_pretty(out, &file)?;
        Ok(())
    }

    pub fn read_json<R: Read>(input: R) -> Result<Self> {
        let file: BankFile = serde_json::from_reader(input)?;
        if file.format != BANK_FORMAT || file.version != BANK_VERSION {
            return Err(Error::Format(format!(
                "unsupported bank file {} v{}",
                file.format, file.version
            )));
        }
        let domain = TimeDomain::Discrete {
            sample_period: file.sample_period,
        };
        let models = file
            .models
            .iter()
            .map(|m| {
                Ok(LinearModel {
                    op: m.op,
                    a: m.a.to_matrix()?,
                    b: m.b.to_matrix()?,
                    domain,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let bank = ModelBank {
            grid: file.grid,
            points: file.points,
            models,
            representatives: file.representatives,
            assignment: file.assignment,
            gap_to_representative: file.gap_to_representative,
            delta_th: file.delta_th,
            sample_period: file.sample_period,
            params_hash: file.params_hash,
        };
        bank.validate()?;
        Ok(bank)
    }
}
