//! Linear time-invariant systems and the numerics the gap metric is built on.

mod coprime;
mod hinf;
mod matrix_eq;
mod riccati;

pub use coprime::{
    normalized_coprime, normalized_left_coprime, CoprimeFactors, LeftCoprimeFactors,
};
pub use hinf::{hinf_norm, hinf_norm_with_peak};
pub use matrix_eq::{solve_lyapunov, solve_sylvester};
pub(crate) use matrix_eq::{sylvester_with_schur, ComplexSchur};
pub use riccati::{solve_care, solve_riccati_hamiltonian};

use crate::{Error, Result};
use nalgebra::{Complex, DMatrix};
use serde::{Deserialize, Serialize};

/// Eigenvalues of a real square matrix from its complex Schur form; NaN
/// entries signal a non-converged iteration.
pub fn eigenvalues(m: &DMatrix<f64>) -> Vec<Complex<f64>> {
    matrix_eq::complex_eigenvalues_of(m)
        .unwrap_or_else(|_| vec![Complex::new(f64::NAN, f64::NAN); m.nrows()])
}

pub type CMatrix = DMatrix<Complex<f64>>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TimeDomain {
    Continuous,
    Discrete { sample_period: f64 },
}

impl TimeDomain {
    pub fn is_continuous(&self) -> bool {
        matches!(self, TimeDomain::Continuous)
    }
}

/// A state-space realization `x' = Ax + Bu, y = Cx + Du`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSpace {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub domain: TimeDomain,
}

impl StateSpace {
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        d: DMatrix<f64>,
        domain: TimeDomain,
    ) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n || b.nrows() != n || c.ncols() != n {
            return Err(Error::Dimension(format!(
                "A is {}x{}, B is {}x{}, C is {}x{}",
                a.nrows(),
                a.ncols(),
                b.nrows(),
                b.ncols(),
                c.nrows(),
                c.ncols()
            )));
        }
        if d.nrows() != c.nrows() || d.ncols() != b.ncols() {
            return Err(Error::Dimension(format!(
                "D is {}x{}, expected {}x{}",
                d.nrows(),
                d.ncols(),
                c.nrows(),
                b.ncols()
            )));
        }
        if let TimeDomain::Discrete { sample_period } = domain {
            if !(sample_period > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "sample period must be positive, got {sample_period}"
                )));
            }
        }
        Ok(Self { a, b, c, d, domain })
    }

    pub fn continuous(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        d: DMatrix<f64>,
    ) -> Result<Self> {
        Self::new(a, b, c, d, TimeDomain::Continuous)
    }

    /// A memoryless gain `y = Du`.
    pub fn static_gain(d: DMatrix<f64>, domain: TimeDomain) -> Self {
        let (p, m) = d.shape();
        Self {
            a: DMatrix::zeros(0, 0),
            b: DMatrix::zeros(0, m),
            c: DMatrix::zeros(p, 0),
            d,
            domain,
        }
    }

    pub fn states(&self) -> usize {
        self.a.nrows()
    }

    pub fn inputs(&self) -> usize {
        self.b.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.c.nrows()
    }

    /// Poles strictly inside the stability region (open LHP or open unit disc).
    pub fn is_stable(&self) -> bool {
        if self.states() == 0 {
            return true;
        }
        let eig = eigenvalues(&self.a);
        match self.domain {
            TimeDomain::Continuous => eig.iter().all(|l| l.re < 0.0),
            TimeDomain::Discrete { .. } => eig.iter().all(|l| l.norm() < 1.0),
        }
    }

    fn check_same_domain(&self, other: &StateSpace) -> Result<()> {
        if self.domain != other.domain {
            return Err(Error::InvalidArgument(
                "systems have different time domains".into(),
            ));
        }
        Ok(())
    }

    /// Cascade `other ∘ self`: the output of `self` feeds the input of `other`.
    pub fn then(&self, other: &StateSpace) -> Result<StateSpace> {
        self.check_same_domain(other)?;
        if self.outputs() != other.inputs() {
            return Err(Error::Dimension(format!(
                "cascade: {} outputs into {} inputs",
                self.outputs(),
                other.inputs()
            )));
        }
        let (n1, n2) = (self.states(), other.states());
        let mut a = DMatrix::zeros(n1 + n2, n1 + n2);
        a.view_mut((0, 0), (n1, n1)).copy_from(&self.a);
        a.view_mut((n1, 0), (n2, n1))
            .copy_from(&(&other.b * &self.c));
        a.view_mut((n1, n1), (n2, n2)).copy_from(&other.a);
        let mut b = DMatrix::zeros(n1 + n2, self.inputs());
        b.view_mut((0, 0), (n1, self.inputs())).copy_from(&self.b);
        b.view_mut((n1, 0), (n2, self.inputs()))
            .copy_from(&(&other.b * &self.d));
        let mut c = DMatrix::zeros(other.outputs(), n1 + n2);
        c.view_mut((0, 0), (other.outputs(), n1))
            .copy_from(&(&other.d * &self.c));
        c.view_mut((0, n1), (other.outputs(), n2))
            .copy_from(&other.c);
        let d = &other.d * &self.d;
        Ok(StateSpace {
            a,
            b,
            c,
            d,
            domain: self.domain,
        })
    }

    /// Para-Hermitian conjugate `G~(s) = G(-s)ᵀ` (continuous time only).
    pub fn conjugate(&self) -> Result<StateSpace> {
        if !self.domain.is_continuous() {
            return Err(Error::InvalidArgument(
                "conjugate system requires continuous time".into(),
            ));
        }
        Ok(StateSpace {
            a: -self.a.transpose(),
            b: -self.c.transpose(),
            c: self.b.transpose(),
            d: self.d.transpose(),
            domain: self.domain,
        })
    }

    /// Evaluate `C (zI - A)^{-1} B + D` at a complex point.
    pub fn eval(&self, z: Complex<f64>) -> Option<CMatrix> {
        let d = self.d.map(Complex::from);
        let n = self.states();
        if n == 0 {
            return Some(d);
        }
        let mut resolvent = self.a.map(|v| -Complex::from(v));
        for i in 0..n {
            resolvent[(i, i)] += z;
        }
        let lu = resolvent.lu();
        let x = lu.solve(&self.b.map(Complex::from))?;
        if x.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return None;
        }
        Some(self.c.map(Complex::from) * x + d)
    }

    /// Evaluation point on the stability boundary for angular frequency `omega`.
    pub fn boundary_point(&self, omega: f64) -> Complex<f64> {
        match self.domain {
            TimeDomain::Continuous => Complex::new(0.0, omega),
            TimeDomain::Discrete { sample_period } => {
                Complex::from_polar(1.0, omega * sample_period)
            }
        }
    }
}

/// Strictly increasing positive angular frequencies (rad/s).
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyGrid {
    points: Vec<f64>,
}

impl FrequencyGrid {
    pub fn new(points: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidArgument("frequency grid is empty".into()));
        }
        if points.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
            return Err(Error::InvalidArgument(
                "frequency grid points must be positive".into(),
            ));
        }
        if points.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument(
                "frequency grid must be strictly increasing".into(),
            ));
        }
        Ok(Self { points })
    }

    pub fn logspace(lo: f64, hi: f64, count: usize) -> Result<Self> {
        if count == 0 || !(lo > 0.0) || !(hi > lo) {
            return Self::new(vec![]);
        }
        if count == 1 {
            return Self::new(vec![lo]);
        }
        let (l0, l1) = (lo.log10(), hi.log10());
        let step = (l1 - l0) / (count - 1) as f64;
        Self::new(
            (0..count)
                .map(|k| 10f64.powf(l0 + step * k as f64))
                .collect(),
        )
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }
}

impl Default for FrequencyGrid {
    /// 400 log-spaced points over [1e-2, 1e4] rad/s.
    fn default() -> Self {
        Self::logspace(1e-2, 1e4, 400).expect("static grid is valid")
    }
}

pub fn freq_response(sys: &StateSpace, grid: &FrequencyGrid) -> Result<Vec<CMatrix>> {
    grid.points()
        .iter()
        .map(|&omega| {
            sys.eval(sys.boundary_point(omega))
                .ok_or(Error::SingularResolvent { omega })
        })
        .collect()
}

/// Largest singular value of a complex matrix.
pub fn sigma_max(m: &CMatrix) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().singular_values().max()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Discretization {
    Zoh,
    Euler,
}

pub fn c2d(sys: &StateSpace, sample_period: f64, method: Discretization) -> Result<StateSpace> {
    if !sys.domain.is_continuous() {
        return Err(Error::InvalidArgument(
            "c2d expects a continuous-time system".into(),
        ));
    }
    if !(sample_period > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "sample period must be positive, got {sample_period}"
        )));
    }
    let (n, m) = (sys.states(), sys.inputs());
    let (a, b) = match method {
        Discretization::Zoh => {
            let mut aug = DMatrix::zeros(n + m, n + m);
            aug.view_mut((0, 0), (n, n))
                .copy_from(&(&sys.a * sample_period));
            aug.view_mut((0, n), (n, m))
                .copy_from(&(&sys.b * sample_period));
            let e = aug.exp();
            (
                e.view((0, 0), (n, n)).into_owned(),
                e.view((0, n), (n, m)).into_owned(),
            )
        }
        Discretization::Euler => (
            DMatrix::identity(n, n) + &sys.a * sample_period,
            &sys.b * sample_period,
        ),
    };
    StateSpace::new(
        a,
        b,
        sys.c.clone(),
        sys.d.clone(),
        TimeDomain::Discrete { sample_period },
    )
}

/// Square-root balanced truncation of a stable continuous system. Drops
/// the weakest states while twice the sum of their Hankel singular values,
/// an upper bound on the H∞ error, stays within `bound`.
pub fn balanced_truncation(sys: &StateSpace, bound: f64) -> Result<StateSpace> {
    let n = sys.states();
    if n == 0 {
        return Ok(sys.clone());
    }
    if !sys.domain.is_continuous() {
        return Err(Error::InvalidArgument(
            "balanced truncation is implemented for continuous-time systems".into(),
        ));
    }
    let lp = psd_factor(&solve_lyapunov(&sys.a, &(&sys.b * sys.b.transpose()))?);
    let lq = psd_factor(&solve_lyapunov(
        &sys.a.transpose(),
        &(sys.c.transpose() * &sys.c),
    )?);
    let svd = (lq.transpose() * &lp).svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(Error::Numerical("balanced truncation: SVD failed".into())),
    };
    let sv = svd.singular_values;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| sv[j].total_cmp(&sv[i]));
    let mut keep = n;
    let mut tail = 0.0;
    while keep > 0 && tail + 2.0 * sv[order[keep - 1]] <= bound {
        tail += 2.0 * sv[order[keep - 1]];
        keep -= 1;
    }
    if keep == n {
        return Ok(sys.clone());
    }
    if keep == 0 {
        return Ok(StateSpace::static_gain(sys.d.clone(), sys.domain));
    }
    let mut left = DMatrix::zeros(keep, n);
    let mut right = DMatrix::zeros(n, keep);
    for (k, &i) in order[..keep].iter().enumerate() {
        let scale = 1.0 / sv[i].sqrt();
        left.row_mut(k)
            .copy_from(&((u.column(i).transpose() * lq.transpose()) * scale));
        right
            .column_mut(k)
            .copy_from(&((&lp * v_t.row(i).transpose()) * scale));
    }
    StateSpace::new(
        &left * &sys.a * &right,
        &left * &sys.b,
        &sys.c * &right,
        sys.d.clone(),
        sys.domain,
    )
}

/// `L` with `L Lᵀ = M` for symmetric positive semidefinite `M`.
fn psd_factor(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = symmetrize(m).symmetric_eigen();
    &eig.eigenvectors * DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt()))
}

/// Symmetric part `(M + Mᵀ)/2`.
pub(crate) fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub(crate) fn is_symmetric(m: &DMatrix<f64>) -> bool {
    let scale = 1.0 + m.amax();
    (m - m.transpose()).amax() <= 1e-10 * scale
}

/// Inverse square root of a symmetric positive definite matrix.
pub(crate) fn inv_sqrt_spd(m: &DMatrix<f64>, what: &'static str) -> Result<DMatrix<f64>> {
    let eig = symmetrize(m).symmetric_eigen();
    if eig.eigenvalues.iter().any(|&l| !(l > 0.0)) {
        return Err(Error::NotPositiveDefinite(what));
    }
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()));
    Ok(&eig.eigenvectors * d * eig.eigenvectors.transpose())
}

/// Inverse square root of a Hermitian positive definite matrix.
pub(crate) fn inv_sqrt_spd_complex(m: &CMatrix) -> Result<CMatrix> {
    let herm = (m + m.adjoint()) * Complex::new(0.5, 0.0);
    let eig = herm.symmetric_eigen();
    if eig.eigenvalues.iter().any(|&l| !(l > 0.0)) {
        return Err(Error::NotPositiveDefinite("Hermitian matrix"));
    }
    let d = CMatrix::from_diagonal(&eig.eigenvalues.map(|l| Complex::new(1.0 / l.sqrt(), 0.0)));
    Ok(&eig.eigenvectors * d * eig.eigenvectors.adjoint())
}
