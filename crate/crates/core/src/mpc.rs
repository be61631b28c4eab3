//! Condensed MPC for the attitude models, a dual active-set QP solver, the
//! soft-switching weight schedule and the multi-model controller.

use crate::bank::ModelBank;
use crate::{wrap_angle, Error, Result};
use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::time::Instant;

pub const STATE_DIM: usize = 6;
pub const INPUT_DIM: usize = 3;

/// Degrees per radian squared; the angle weights act on errors in degrees.
const DEG2: f64 = (180.0 / PI) * (180.0 / PI);

/// Terminal, stage and input weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSet {
    pub p: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
}

impl WeightSet {
    /// `α·self + (1 − α)·other`.
    pub fn blend(&self, other: &WeightSet, alpha: f64) -> WeightSet {
        let beta = 1.0 - alpha;
        WeightSet {
            p: &self.p * alpha + &other.p * beta,
            q: &self.q * alpha + &other.q * beta,
            r: &self.r * alpha + &other.r * beta,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MpcParams {
    pub horizon: usize,
    pub p: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub x_lower: DVector<f64>,
    pub x_upper: DVector<f64>,
    pub u_lower: DVector<f64>,
    pub u_upper: DVector<f64>,
}

impl Default for MpcParams {
    fn default() -> Self {
        let q = DMatrix::from_diagonal(&DVector::from_vec(vec![
            10.0 * DEG2,
            10.0 * DEG2,
            10.0 * DEG2,
            150.0,
            150.0,
            150.0,
        ]));
        let inf = f64::INFINITY;
        Self {
            horizon: 5,
            p: q.clone(),
            q,
            r: DMatrix::identity(INPUT_DIM, INPUT_DIM),
            x_lower: DVector::from_vec(vec![-PI, -1.3, -PI, -inf, -inf, -inf]),
            x_upper: DVector::from_vec(vec![PI, 1.3, PI, inf, inf, inf]),
            u_lower: DVector::from_element(INPUT_DIM, -1.0),
            u_upper: DVector::from_element(INPUT_DIM, 1.0),
        }
    }
}

fn check_psd(m: &DMatrix<f64>, name: &'static str, definite: bool) -> Result<()> {
    if !m.is_square() || (m - m.transpose()).amax() > 1e-12 * (1.0 + m.amax()) {
        return Err(Error::NotSymmetric(name));
    }
    let min = m.clone().symmetric_eigenvalues().min();
    let ok = if definite {
        min > 0.0
    } else {
        min >= -1e-12 * (1.0 + m.amax())
    };
    if ok {
        Ok(())
    } else {
        Err(Error::NotPositiveDefinite(name))
    }
}

impl MpcParams {
    pub fn weights(&self) -> WeightSet {
        WeightSet {
            p: self.p.clone(),
            q: self.q.clone(),
            r: self.r.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::Mpc("horizon must be at least one step".into()));
        }
        let (n, m) = (self.q.nrows(), self.r.nrows());
        if self.p.shape() != (n, n) || self.x_lower.len() != n || self.x_upper.len() != n {
            return Err(Error::Dimension(format!(
                "state weights and bounds must be {n}-dimensional"
            )));
        }
        if self.u_lower.len() != m || self.u_upper.len() != m {
            return Err(Error::Dimension(format!(
                "input bounds must be {m}-dimensional"
            )));
        }
        check_psd(&self.p, "P", false)?;
        check_psd(&self.q, "Q", false)?;
        check_psd(&self.r, "R", true)?;
        let ordered = |lo: &DVector<f64>, hi: &DVector<f64>| {
            lo.iter()
                .zip(hi.iter())
                .all(|(l, h)| l <= h && !l.is_nan() && !h.is_nan())
        };
        if !ordered(&self.x_lower, &self.x_upper) || !ordered(&self.u_lower, &self.u_upper) {
            return Err(Error::Mpc("bounds must satisfy lower ≤ upper".into()));
        }
        Ok(())
    }
}

/// Weight of the outgoing controller at horizon index `i`, step `k`, for a
/// transition that began at `k_s`. `λ⁰ = 1` for every `λ`.
pub fn alpha(k: u64, k_s: u64, i: usize, lambda: f64, horizon: usize) -> f64 {
    debug_assert!(k >= k_s);
    let i = if i >= horizon {
        horizon.saturating_sub(1)
    } else {
        i
    };
    let elapsed = k - k_s;
    if elapsed + (i as u64) < horizon as u64 {
        lambda.powi((elapsed + i as u64) as i32)
    } else {
        0.0
    }
}

/// Blended `(P, Q, R)` for horizon index `i`: `α·w1 + β·w2`.
pub fn blend_weights(
    w1: &WeightSet,
    w2: &WeightSet,
    k: u64,
    k_s: u64,
    i: usize,
    lambda: f64,
    horizon: usize,
) -> WeightSet {
    w1.blend(w2, alpha(k, k_s, i, lambda, horizon))
}

/// Stacked prediction `e = Φ e₀ + Γ v + o` over indices `0..=N`.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub horizon: usize,
    pub phi: DMatrix<f64>,
    pub gamma: DMatrix<f64>,
    pub offset: DVector<f64>,
}

impl Prediction {
    pub fn lti(a: &DMatrix<f64>, b: &DMatrix<f64>, horizon: usize) -> Result<Self> {
        Self::affine(a, b, &DVector::zeros(a.nrows()), horizon)
    }

    /// `e_{i+1} = A e_i + B v_i + c`.
    pub fn affine(
        a: &DMatrix<f64>,
        b: &DMatrix<f64>,
        c: &DVector<f64>,
        horizon: usize,
    ) -> Result<Self> {
        let (n, m) = (a.nrows(), b.ncols());
        if !a.is_square() || b.nrows() != n || c.len() != n {
            return Err(Error::Dimension(format!(
                "prediction model: A {:?}, B {:?}, c {}",
                a.shape(),
                b.shape(),
                c.len()
            )));
        }
        if horizon == 0 {
            return Err(Error::Mpc("horizon must be at least one step".into()));
        }
        let mut phi = DMatrix::zeros((horizon + 1) * n, n);
        let mut gamma = DMatrix::zeros((horizon + 1) * n, horizon * m);
        let mut offset = DVector::zeros((horizon + 1) * n);
        phi.view_mut((0, 0), (n, n)).fill_with_identity();
        // powers[j] = A^j B
        let mut apb = Vec::with_capacity(horizon);
        apb.push(b.clone());
        for j in 1..horizon {
            let next = a * &apb[j - 1];
            apb.push(next);
        }
        for i in 1..=horizon {
            let prev = phi.view(((i - 1) * n, 0), (n, n)).into_owned();
            phi.view_mut((i * n, 0), (n, n)).copy_from(&(a * prev));
            for j in 0..i {
                gamma
                    .view_mut((i * n, j * m), (n, m))
                    .copy_from(&apb[i - 1 - j]);
            }
            let prev_off = offset.rows((i - 1) * n, n).into_owned();
            offset.rows_mut(i * n, n).copy_from(&(a * prev_off + c));
        }
        Ok(Self {
            horizon,
            phi,
            gamma,
            offset,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.phi.ncols()
    }

    pub fn input_dim(&self) -> usize {
        self.gamma.ncols() / self.horizon
    }
}

/// Identifies a constraint independently of its row position, so active
/// sets can be carried over between steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ConstraintKey {
    InputLower { stage: usize, input: usize },
    InputUpper { stage: usize, input: usize },
    StateLower { stage: usize, state: usize },
    StateUpper { stage: usize, state: usize },
}

impl ConstraintKey {
    /// The same constraint one step later in the horizon, if it still exists.
    pub fn shifted(self) -> Option<ConstraintKey> {
        use ConstraintKey::*;
        match self {
            InputLower { stage, input } if stage > 0 => Some(InputLower {
                stage: stage - 1,
                input,
            }),
            InputUpper { stage, input } if stage > 0 => Some(InputUpper {
                stage: stage - 1,
                input,
            }),
            StateLower { stage, state } if stage > 1 => Some(StateLower {
                stage: stage - 1,
                state,
            }),
            StateUpper { stage, state } if stage > 1 => Some(StateUpper {
                stage: stage - 1,
                state,
            }),
            _ => None,
        }
    }
}

/// `min ½ uᵀHu + fᵀu` subject to `lower ≤ u ≤ upper` and `G u ≤ g_upper`.
#[derive(Debug, Clone)]
pub struct QpProblem {
    pub h: DMatrix<f64>,
    pub f: DVector<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
    pub g: DMatrix<f64>,
    pub g_upper: DVector<f64>,
    /// One key per row of `g`.
    pub row_keys: Vec<ConstraintKey>,
    /// Inputs per stage, used to label box constraints.
    pub input_dim: usize,
    /// Violation of the index-0 state bounds, which do not depend on `u`.
    pub initial_violation: f64,
}

impl QpProblem {
    pub fn objective(&self, u: &DVector<f64>) -> f64 {
        0.5 * u.dot(&(&self.h * u)) + self.f.dot(u)
    }

    /// Largest violation of any box or row constraint.
    pub fn violation(&self, u: &DVector<f64>) -> f64 {
        let mut v = 0.0f64;
        for i in 0..u.len() {
            v = v.max(self.lower[i] - u[i]).max(u[i] - self.upper[i]);
        }
        if self.g.nrows() > 0 {
            let gu = &self.g * u;
            for j in 0..gu.len() {
                v = v.max(gu[j] - self.g_upper[j]);
            }
        }
        v
    }

    fn without_rows(&self) -> QpProblem {
        QpProblem {
            g: DMatrix::zeros(0, self.h.ncols()),
            g_upper: DVector::zeros(0),
            row_keys: Vec::new(),
            ..self.clone()
        }
    }
}

/// Condensed QP for per-index weights `weights[0..=N]` (the last entry holds
/// the terminal weight). `u_nominal` shifts the penalized input to
/// `u_nominal + v` and the input box applies to that sum.
pub fn build_qp_from_prediction(
    pred: &Prediction,
    weights: &[WeightSet],
    e0: &DVector<f64>,
    params: &MpcParams,
    u_nominal: Option<&DVector<f64>>,
) -> Result<QpProblem> {
    let (n, m, horizon) = (pred.state_dim(), pred.input_dim(), pred.horizon);
    if weights.len() != horizon + 1 {
        return Err(Error::Dimension(format!(
            "expected {} weight sets, got {}",
            horizon + 1,
            weights.len()
        )));
    }
    if e0.len() != n || params.x_lower.len() != n || params.u_lower.len() != m {
        return Err(Error::Dimension(
            "initial state or bounds do not match the model".into(),
        ));
    }
    if e0.iter().any(|v| !v.is_finite()) {
        return Err(Error::Mpc("initial state is not finite".into()));
    }
    let nv = horizon * m;
    let free = &pred.phi * e0 + &pred.offset;
    let mut h = DMatrix::zeros(nv, nv);
    let mut f = DVector::zeros(nv);
    for i in 1..=horizon {
        let w = if i == horizon {
            &weights[horizon].p
        } else {
            &weights[i].q
        };
        if w.shape() != (n, n) {
            return Err(Error::Dimension("state weight has the wrong size".into()));
        }
        let gi = pred.gamma.view((i * n, 0), (n, i * m));
        let wg = w * gi;
        let mut hb = h.view_mut((0, 0), (i * m, i * m));
        hb += gi.transpose() * &wg;
        let mut fb = f.rows_mut(0, i * m);
        fb += wg.transpose() * free.rows(i * n, n);
    }
    let nominal = u_nominal.cloned().unwrap_or_else(|| DVector::zeros(nv));
    if nominal.len() != nv {
        return Err(Error::Dimension(
            "nominal input sequence has the wrong length".into(),
        ));
    }
    for i in 0..horizon {
        let r = &weights[i].r;
        if r.shape() != (m, m) {
            return Err(Error::Dimension("input weight has the wrong size".into()));
        }
        let mut hb = h.view_mut((i * m, i * m), (m, m));
        hb += r;
        let mut fb = f.rows_mut(i * m, m);
        fb += r * nominal.rows(i * m, m);
    }
    let h = (&h + h.transpose()) * 0.5;

    let mut lower = DVector::zeros(nv);
    let mut upper = DVector::zeros(nv);
    for i in 0..horizon {
        for j in 0..m {
            lower[i * m + j] = params.u_lower[j] - nominal[i * m + j];
            upper[i * m + j] = params.u_upper[j] - nominal[i * m + j];
        }
    }

    let mut rows: Vec<(DVector<f64>, f64, ConstraintKey)> = Vec::new();
    for i in 1..horizon {
        let gi = pred.gamma.view((i * n, 0), (n, nv));
        for s in 0..n {
            let e_free = free[i * n + s];
            if params.x_upper[s].is_finite() {
                rows.push((
                    gi.row(s).transpose(),
                    params.x_upper[s] - e_free,
                    ConstraintKey::StateUpper { stage: i, state: s },
                ));
            }
            if params.x_lower[s].is_finite() {
                rows.push((
                    -gi.row(s).transpose(),
                    e_free - params.x_lower[s],
                    ConstraintKey::StateLower { stage: i, state: s },
                ));
            }
        }
    }
    let mut g = DMatrix::zeros(rows.len(), nv);
    let mut g_upper = DVector::zeros(rows.len());
    let mut row_keys = Vec::with_capacity(rows.len());
    for (j, (row, bound, key)) in rows.into_iter().enumerate() {
        g.row_mut(j).copy_from(&row.transpose());
        g_upper[j] = bound;
        row_keys.push(key);
    }
    let mut initial_violation = 0.0f64;
    for s in 0..n {
        initial_violation = initial_violation
            .max(e0[s] - params.x_upper[s])
            .max(params.x_lower[s] - e0[s]);
    }
    Ok(QpProblem {
        h,
        f,
        lower,
        upper,
        g,
        g_upper,
        row_keys,
        input_dim: m,
        initial_violation,
    })
}

/// Condensed QP data that do not depend on the initial error, together with
/// the linear maps that complete it for a given `e₀`.
#[derive(Debug, Clone)]
pub struct CondensedQp {
    base: QpProblem,
    f_map: DMatrix<f64>,
    g_map: DMatrix<f64>,
    linv: DMatrix<f64>,
    x_lower: DVector<f64>,
    x_upper: DVector<f64>,
}

impl CondensedQp {
    pub fn new(pred: &Prediction, weights: &[WeightSet], params: &MpcParams) -> Result<Self> {
        let (n, m, horizon) = (pred.state_dim(), pred.input_dim(), pred.horizon);
        let base = build_qp_from_prediction(pred, weights, &DVector::zeros(n), params, None)?;
        let mut f_map = DMatrix::zeros(horizon * m, n);
        for i in 1..=horizon {
            let w = if i == horizon {
                &weights[horizon].p
            } else {
                &weights[i].q
            };
            let wg = w * pred.gamma.view((i * n, 0), (n, i * m));
            let mut fb = f_map.rows_mut(0, i * m);
            fb += wg.transpose() * pred.phi.view((i * n, 0), (n, n));
        }
        let mut g_map = DMatrix::zeros(base.row_keys.len(), n);
        for (j, key) in base.row_keys.iter().enumerate() {
            match *key {
                ConstraintKey::StateUpper { stage, state } => {
                    g_map.row_mut(j).copy_from(&pred.phi.row(stage * n + state))
                }
                ConstraintKey::StateLower { stage, state } => g_map
                    .row_mut(j)
                    .copy_from(&(-pred.phi.row(stage * n + state))),
                _ => {
                    return Err(Error::Mpc(
                        "unexpected input row in the state constraints".into(),
                    ))
                }
            }
        }
        let linv = hessian_factor(&base.h)?;
        Ok(Self {
            base,
            f_map,
            g_map,
            linv,
            x_lower: params.x_lower.clone(),
            x_upper: params.x_upper.clone(),
        })
    }

    pub fn instantiate(&self, e0: &DVector<f64>) -> Result<QpProblem> {
        if e0.len() != self.f_map.ncols() {
            return Err(Error::Dimension(
                "initial state does not match the model".into(),
            ));
        }
        if e0.iter().any(|v| !v.is_finite()) {
            return Err(Error::Mpc("initial state is not finite".into()));
        }
        let mut qp = self.base.clone();
        qp.f += &self.f_map * e0;
        qp.g_upper -= &self.g_map * e0;
        qp.initial_violation = (0..e0.len()).fold(0.0f64, |v, s| {
            v.max(e0[s] - self.x_upper[s]).max(self.x_lower[s] - e0[s])
        });
        Ok(qp)
    }

    pub fn solve(&self, e0: &DVector<f64>, tol: f64, warm: &[ConstraintKey]) -> Result<QpSolution> {
        solve_qp_factored(&self.instantiate(e0)?, &self.linv, tol, warm)
    }
}

/// Condensed QP of a discrete linear model with per-index weights.
pub fn build_qp(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    weights: &[WeightSet],
    chi0: &DVector<f64>,
    params: &MpcParams,
) -> Result<QpProblem> {
    let horizon = weights
        .len()
        .checked_sub(1)
        .ok_or_else(|| Error::Mpc("empty weight schedule".into()))?;
    let pred = Prediction::lti(a, b, horizon)?;
    build_qp_from_prediction(&pred, weights, chi0, params, None)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QpDiagnostics {
    pub iterations: usize,
    pub kkt_residual: f64,
    pub active: Vec<ConstraintKey>,
    /// Largest constraint violation of the returned point.
    pub constraint_violation: f64,
    /// The state rows were infeasible and only the input box was enforced.
    pub fallback: bool,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub u: DVector<f64>,
    pub diagnostics: QpDiagnostics,
}

/// Inequality `nᵀu ≥ b`.
struct Row {
    n: DVector<f64>,
    b: f64,
    key: ConstraintKey,
}

fn inequality_rows(qp: &QpProblem) -> Vec<Row> {
    let nv = qp.h.ncols();
    let m = qp.input_dim.max(1);
    let mut rows = Vec::with_capacity(2 * nv + qp.g.nrows());
    for i in 0..nv {
        let (stage, input) = (i / m, i % m);
        if qp.lower[i].is_finite() {
            let mut n = DVector::zeros(nv);
            n[i] = 1.0;
            rows.push(Row {
                n,
                b: qp.lower[i],
                key: ConstraintKey::InputLower { stage, input },
            });
        }
        if qp.upper[i].is_finite() {
            let mut n = DVector::zeros(nv);
            n[i] = -1.0;
            rows.push(Row {
                n,
                b: -qp.upper[i],
                key: ConstraintKey::InputUpper { stage, input },
            });
        }
    }
    for j in 0..qp.g.nrows() {
        if qp.g_upper[j].is_finite() {
            rows.push(Row {
                n: -qp.g.row(j).transpose(),
                b: -qp.g_upper[j],
                key: qp.row_keys[j],
            });
        }
    }
    rows
}

enum DualOutcome {
    Solved {
        x: DVector<f64>,
        active: Vec<usize>,
        mult: Vec<f64>,
        iterations: usize,
    },
    Infeasible,
}

/// Active-set data: `M = L⁻¹ Nₐ` and its thin QR.
struct ActiveBasis {
    qr_q: DMatrix<f64>,
    qr_r: DMatrix<f64>,
}

impl ActiveBasis {
    fn new(linv: &DMatrix<f64>, rows: &[Row], active: &[usize]) -> Option<Self> {
        let n = linv.nrows();
        if active.is_empty() {
            return Some(Self {
                qr_q: DMatrix::zeros(n, 0),
                qr_r: DMatrix::zeros(0, 0),
            });
        }
        let mut m = DMatrix::zeros(n, active.len());
        for (c, &j) in active.iter().enumerate() {
            m.set_column(c, &(linv * &rows[j].n));
        }
        let qr = m.qr();
        let (q, r) = (qr.q(), qr.r());
        let scale = r.diagonal().amax().max(1e-300);
        if r.diagonal().iter().any(|d| d.abs() <= 1e-12 * scale) {
            return None;
        }
        Some(Self { qr_q: q, qr_r: r })
    }

    /// `(z, r)` with `r = M⁺ w` and `z = L⁻ᵀ (w − M r)`.
    fn directions(&self, linv: &DMatrix<f64>, w: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let qtw = self.qr_q.transpose() * w;
        let r = if qtw.is_empty() {
            DVector::zeros(0)
        } else {
            self.qr_r
                .solve_upper_triangular(&qtw)
                .unwrap_or_else(|| DVector::zeros(qtw.len()))
        };
        let resid = w - &self.qr_q * &qtw;
        (linv.transpose() * resid, r)
    }
}

/// Goldfarb–Idnani dual active-set method started from the given working set.
/// `L⁻¹` for the Cholesky factor `H = L Lᵀ`.
pub fn hessian_factor(h: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let chol = h
        .clone()
        .cholesky()
        .ok_or(Error::NotPositiveDefinite("QP Hessian"))?;
    chol.l()
        .solve_lower_triangular(&DMatrix::identity(h.nrows(), h.nrows()))
        .ok_or_else(|| Error::Numerical("QP Hessian factor is singular".into()))
}

fn dual_active_set(
    qp: &QpProblem,
    linv: &DMatrix<f64>,
    rows: &[Row],
    warm: &[usize],
    tol: f64,
    max_iter: usize,
) -> Result<DualOutcome> {
    let lf = linv * &qp.f;
    let unconstrained = -(linv.transpose() * &lf);

    // Equality-constrained solve on the warm set, dropping negative multipliers.
    let mut active: Vec<usize> = Vec::new();
    for &j in warm {
        if !active.contains(&j) {
            active.push(j);
            if ActiveBasis::new(linv, rows, &active).is_none() {
                active.pop();
            }
        }
    }
    let (mut x, mut mult) = loop {
        if active.is_empty() {
            break (unconstrained.clone(), Vec::new());
        }
        let basis = ActiveBasis::new(linv, rows, &active).expect("independent working set");
        // MᵀM u = b + Mᵀ L⁻¹ f
        let b: DVector<f64> =
            DVector::from_iterator(active.len(), active.iter().map(|&j| rows[j].b));
        let rhs = &b + basis.qr_r.transpose() * (basis.qr_q.transpose() * &lf);
        let y = basis
            .qr_r
            .transpose()
            .solve_lower_triangular(&rhs)
            .ok_or_else(|| Error::Numerical("working-set system is singular".into()))?;
        let u = basis
            .qr_r
            .solve_upper_triangular(&y)
            .ok_or_else(|| Error::Numerical("working-set system is singular".into()))?;
        let (worst, &min) = u
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .expect("nonempty");
        if min < 0.0 {
            active.remove(worst);
            continue;
        }
        // x = G⁻¹(Nₐᵀu − f)
        let mut nu = -qp.f.clone();
        for (c, &j) in active.iter().enumerate() {
            nu.axpy(u[c], &rows[j].n, 1.0);
        }
        let x = linv.transpose() * (linv * nu);
        break (x, u.iter().copied().collect());
    };

    let mut iterations = 0;
    loop {
        // Most violated inactive constraint.
        let mut pick: Option<(usize, f64)> = None;
        for (j, row) in rows.iter().enumerate() {
            if active.contains(&j) {
                continue;
            }
            let s = row.n.dot(&x) - row.b;
            let scaled = s / (1.0 + row.b.abs());
            if s < -tol && pick.map_or(true, |(_, v)| scaled < v) {
                pick = Some((j, scaled));
            }
        }
        let Some((p, _)) = pick else {
            return Ok(DualOutcome::Solved {
                x,
                active,
                mult,
                iterations,
            });
        };
        let mut mult_p = 0.0;
        loop {
            iterations += 1;
            if iterations > max_iter {
                return Err(Error::Mpc(format!(
                    "QP did not converge in {max_iter} iterations"
                )));
            }
            let basis = ActiveBasis::new(linv, rows, &active)
                .ok_or_else(|| Error::Numerical("active set became dependent".into()))?;
            let w = linv * &rows[p].n;
            let (z, r) = basis.directions(linv, &w);
            let mut t1 = f64::INFINITY;
            let mut drop = None;
            for (c, &rc) in r.iter().enumerate() {
                if rc > 1e-14 {
                    let t = mult[c] / rc;
                    if t < t1 {
                        t1 = t;
                        drop = Some(c);
                    }
                }
            }
            let zn = z.dot(&rows[p].n);
            let sp = rows[p].n.dot(&x) - rows[p].b;
            let t2 = if zn > 1e-14 * (1.0 + w.norm_squared()) {
                -sp / zn
            } else {
                f64::INFINITY
            };
            let t = t1.min(t2);
            if !t.is_finite() {
                return Ok(DualOutcome::Infeasible);
            }
            for (c, rc) in r.iter().enumerate() {
                mult[c] -= t * rc;
            }
            mult_p += t;
            if t2.is_finite() {
                x.axpy(t, &z, 1.0);
            }
            if t2 <= t1 {
                active.push(p);
                mult.push(mult_p);
                break;
            }
            let c = drop.expect("partial step has a blocking multiplier");
            active.remove(c);
            mult.remove(c);
        }
    }
}

fn kkt_residual(
    qp: &QpProblem,
    rows: &[Row],
    x: &DVector<f64>,
    active: &[usize],
    mult: &[f64],
) -> f64 {
    let mut grad = &qp.h * x + &qp.f;
    for (c, &j) in active.iter().enumerate() {
        grad.axpy(-mult[c], &rows[j].n, 1.0);
    }
    let mut res = grad.amax();
    for (c, &j) in active.iter().enumerate() {
        let s = rows[j].n.dot(x) - rows[j].b;
        res = res.max((mult[c] * s).abs()).max(-mult[c]);
    }
    for row in rows {
        res = res.max(row.b - row.n.dot(x));
    }
    res
}

pub fn solve_qp(qp: &QpProblem, tol: f64) -> Result<QpSolution> {
    solve_qp_warm(qp, tol, &[])
}

/// Solve with an initial working set given by constraint keys (unknown keys
/// are ignored). Infeasible state rows fall back to the input box alone.
pub fn solve_qp_warm(qp: &QpProblem, tol: f64, warm: &[ConstraintKey]) -> Result<QpSolution> {
    if qp.h.shape() != (qp.f.len(), qp.f.len()) {
        return Err(Error::Dimension("QP data sizes disagree".into()));
    }
    solve_qp_factored(qp, &hessian_factor(&qp.h)?, tol, warm)
}

/// As [`solve_qp_warm`] with `L⁻¹` from [`hessian_factor`] supplied.
pub fn solve_qp_factored(
    qp: &QpProblem,
    linv: &DMatrix<f64>,
    tol: f64,
    warm: &[ConstraintKey],
) -> Result<QpSolution> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "QP tolerance must be positive, got {tol}"
        )));
    }
    let nv = qp.h.nrows();
    if qp.h.ncols() != nv
        || linv.shape() != (nv, nv)
        || qp.f.len() != nv
        || qp.lower.len() != nv
        || qp.upper.len() != nv
        || qp.g.ncols() != nv
    {
        return Err(Error::Dimension("QP data sizes disagree".into()));
    }
    if qp.lower.iter().zip(qp.upper.iter()).any(|(l, u)| l > u) {
        return Err(Error::Mpc("input box is empty".into()));
    }
    let feas_tol = 0.1 * tol;
    let max_iter = 50 * (nv + qp.g.nrows()).max(10);
    let attempt = |problem: &QpProblem| -> Result<Option<(QpSolution, Vec<Row>)>> {
        let rows = inequality_rows(problem);
        let warm_idx: Vec<usize> = warm
            .iter()
            .filter_map(|k| rows.iter().position(|r| r.key == *k))
            .collect();
        match dual_active_set(problem, linv, &rows, &warm_idx, feas_tol, max_iter)? {
            DualOutcome::Infeasible => Ok(None),
            DualOutcome::Solved {
                x,
                active,
                mult,
                iterations,
            } => {
                let kkt = kkt_residual(problem, &rows, &x, &active, &mult);
                let keys = active.iter().map(|&j| rows[j].key).collect();
                let diagnostics = QpDiagnostics {
                    iterations,
                    kkt_residual: kkt,
                    active: keys,
                    constraint_violation: 0.0,
                    fallback: false,
                };
                Ok(Some((QpSolution { u: x, diagnostics }, rows)))
            }
        }
    };
    if let Some((mut sol, _)) = attempt(qp)? {
        sol.diagnostics.constraint_violation =
            qp.violation(&sol.u).max(qp.initial_violation).max(0.0);
        return Ok(sol);
    }
    let boxed = qp.without_rows();
    match attempt(&boxed)? {
        Some((mut sol, _)) => {
            sol.diagnostics.constraint_violation =
                qp.violation(&sol.u).max(qp.initial_violation).max(0.0);
            sol.diagnostics.fallback = true;
            Ok(sol)
        }
        None => Err(Error::Mpc("input box constraints are infeasible".into())),
    }
}

/// Soft-switching bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwitchState {
    pub active: usize,
    pub outgoing: Option<usize>,
    /// Weights of the outgoing controller, possibly a snapshot of an earlier blend.
    pub outgoing_weights: Option<WeightSet>,
    pub k_s: u64,
    pub lambda: f64,
    pub transition_len: usize,
}

impl SwitchState {
    pub fn new(active: usize, lambda: f64, transition_len: usize) -> Self {
        Self {
            active,
            outgoing: None,
            outgoing_weights: None,
            k_s: 0,
            lambda,
            transition_len,
        }
    }

    pub fn in_transition(&self, k: u64) -> bool {
        self.outgoing.is_some() && k >= self.k_s && k - self.k_s < self.transition_len as u64
    }

    /// Weights for horizon indices `0..=N` at step `k`.
    pub fn schedule(&self, active_weights: &WeightSet, k: u64, horizon: usize) -> Vec<WeightSet> {
        match (&self.outgoing_weights, self.in_transition(k)) {
            (Some(out), true) => (0..=horizon)
                .map(|i| blend_weights(out, active_weights, k, self.k_s, i, self.lambda, horizon))
                .collect(),
            _ => vec![active_weights.clone(); horizon + 1],
        }
    }

    pub fn alpha0(&self, k: u64, horizon: usize) -> f64 {
        if self.in_transition(k) {
            alpha(k, self.k_s, 0, self.lambda, horizon)
        } else {
            0.0
        }
    }

    /// Begin a transition to `next` at step `k`. A transition already in
    /// progress is frozen at its current `i = 0` blend.
    pub fn switch_to(&mut self, next: usize, k: u64, per_model: &[WeightSet], horizon: usize) {
        let current = &per_model[self.active];
        let outgoing = match (&self.outgoing_weights, self.in_transition(k)) {
            (Some(out), true) => blend_weights(out, current, k, self.k_s, 0, self.lambda, horizon),
            _ => current.clone(),
        };
        self.outgoing = Some(self.active);
        self.outgoing_weights = Some(outgoing);
        self.k_s = k;
        self.active = next;
    }

    fn expire(&mut self, k: u64) {
        if self.outgoing.is_some() && !self.in_transition(k) {
            self.outgoing = None;
            self.outgoing_weights = None;
        }
    }
}

/// Result of one controller step.
#[derive(Debug, Clone, PartialEq)]
pub struct MpcOutput {
    pub tau: Vector3<f64>,
    pub active: usize,
    pub alpha0: f64,
    /// Wall-clock time of the step in seconds.
    pub solve_time: f64,
    pub diagnostics: Option<QpDiagnostics>,
    /// The QP failed and the previous torque was held.
    pub failed: bool,
}

/// `χ = [η − η_d; ω − ω_d]` with roll and yaw errors wrapped.
pub fn attitude_error(
    eta: &Vector3<f64>,
    omega: &Vector3<f64>,
    eta_d: &Vector3<f64>,
    omega_d: &Vector3<f64>,
) -> DVector<f64> {
    DVector::from_vec(vec![
        wrap_angle(eta.x - eta_d.x),
        eta.y - eta_d.y,
        wrap_angle(eta.z - eta_d.z),
        omega.x - omega_d.x,
        omega.y - omega_d.y,
        omega.z - omega_d.z,
    ])
}

fn first_input(u: &DVector<f64>) -> Vector3<f64> {
    Vector3::new(u[0], u[1], u[2])
}

/// Multi-model predictive attitude controller.
#[derive(Debug, Clone)]
pub struct MmpcController {
    bank: ModelBank,
    params: MpcParams,
    per_model: Vec<WeightSet>,
    predictions: Vec<Prediction>,
    /// Steady-state QP data per model, used outside transitions.
    condensed: Vec<CondensedQp>,
    switch: Option<SwitchState>,
    lambda: f64,
    warm: Vec<ConstraintKey>,
    last_tau: Vector3<f64>,
    pub tol: f64,
}

impl MmpcController {
    pub fn new(bank: ModelBank, params: MpcParams, lambda: f64) -> Result<Self> {
        let per_model = vec![params.weights(); bank.len()];
        Self::with_weights(bank, params, per_model, lambda)
    }

    pub fn with_weights(
        bank: ModelBank,
        params: MpcParams,
        per_model: Vec<WeightSet>,
        lambda: f64,
    ) -> Result<Self> {
        params.validate()?;
        bank.validate()?;
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::InvalidArgument(format!(
                "switching parameter must lie in [0, 1], got {lambda}"
            )));
        }
        if per_model.len() != bank.len() {
            return Err(Error::Dimension(format!(
                "{} weight sets for {} models",
                per_model.len(),
                bank.len()
            )));
        }
        let predictions: Vec<Prediction> = bank
            .models
            .iter()
            .map(|m| Prediction::lti(&m.a, &m.b, params.horizon))
            .collect::<Result<_>>()?;
        let condensed = predictions
            .iter()
            .zip(&per_model)
            .map(|(p, w)| CondensedQp::new(p, &vec![w.clone(); params.horizon + 1], &params))
            .collect::<Result<_>>()?;
        Ok(Self {
            bank,
            params,
            per_model,
            predictions,
            condensed,
            switch: None,
            lambda,
            warm: Vec::new(),
            last_tau: Vector3::zeros(),
            tol: 1e-9,
        })
    }

    pub fn bank(&self) -> &ModelBank {
        &self.bank
    }

    pub fn params(&self) -> &MpcParams {
        &self.params
    }

    pub fn switch_state(&self) -> Option<&SwitchState> {
        self.switch.as_ref()
    }

    /// Selection, switching and one QP solve. Never returns an error: a
    /// failed solve holds the previous torque and sets `failed`.
    pub fn step(
        &mut self,
        eta: &Vector3<f64>,
        omega: &Vector3<f64>,
        eta_d: &Vector3<f64>,
        k: u64,
    ) -> MpcOutput {
        let started = Instant::now();
        let selected = self.bank.select_model(eta.x, eta.y);
        self.step_with_selection(selected, eta, omega, eta_d, k, started)
    }

    /// As [`step`](Self::step) but with the model index forced.
    pub fn step_forced(
        &mut self,
        selected: usize,
        eta: &Vector3<f64>,
        omega: &Vector3<f64>,
        eta_d: &Vector3<f64>,
        k: u64,
    ) -> MpcOutput {
        self.step_with_selection(
            selected.min(self.bank.len() - 1),
            eta,
            omega,
            eta_d,
            k,
            Instant::now(),
        )
    }

    fn step_with_selection(
        &mut self,
        selected: usize,
        eta: &Vector3<f64>,
        omega: &Vector3<f64>,
        eta_d: &Vector3<f64>,
        k: u64,
        started: Instant,
    ) -> MpcOutput {
        let horizon = self.params.horizon;
        let lambda = self.lambda;
        let switch = self
            .switch
            .get_or_insert_with(|| SwitchState::new(selected, lambda, horizon));
        switch.expire(k);
        if selected != switch.active {
            switch.switch_to(selected, k, &self.per_model, horizon);
        }
        let active = switch.active;
        let alpha0 = switch.alpha0(k, horizon);
        let chi0 = attitude_error(eta, omega, eta_d, &Vector3::zeros());
        let solved = if switch.in_transition(k) {
            let schedule = switch.schedule(&self.per_model[active], k, horizon);
            build_qp_from_prediction(
                &self.predictions[active],
                &schedule,
                &chi0,
                &self.params,
                None,
            )
            .and_then(|qp| solve_qp_warm(&qp, self.tol, &self.warm))
        } else {
            self.condensed[active].solve(&chi0, self.tol, &self.warm)
        };
        let out = match solved {
            Ok(sol) => {
                let tau = first_input(&sol.u);
                self.warm = sol
                    .diagnostics
                    .active
                    .iter()
                    .filter_map(|k| k.shifted())
                    .collect();
                self.last_tau = tau;
                MpcOutput {
                    tau,
                    active,
                    alpha0,
                    solve_time: 0.0,
                    diagnostics: Some(sol.diagnostics),
                    failed: false,
                }
            }
            Err(_) => {
                self.warm.clear();
                MpcOutput {
                    tau: self.last_tau,
                    active,
                    alpha0,
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
