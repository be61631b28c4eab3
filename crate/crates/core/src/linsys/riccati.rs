//! Continuous-time algebraic Riccati equations via the ordered Schur form of
//! the Hamiltonian matrix.

use super::matrix_eq::{solve_lyapunov, ComplexSchur};
use super::{is_symmetric, symmetrize};
use crate::{Error, Result};
use nalgebra::{Complex, DMatrix};

/// Stabilizing solution of `AᵀX + XA − XGX + Q = 0` with `G`, `Q` symmetric.
///
/// `G` need not be semidefinite, which covers the bounded-real equations used
/// by spectral factorization. The closed loop `A − GX` is Hurwitz on success.
pub fn solve_riccati_hamiltonian(
    a: &DMatrix<f64>,
    g: &DMatrix<f64>,
    q: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if !a.is_square() || g.shape() != (n, n) || q.shape() != (n, n) {
        return Err(Error::Dimension(
            "Riccati: A, G, Q must be square and equal size".into(),
        ));
    }
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let mut h = DMatrix::zeros(2 * n, 2 * n);
    h.view_mut((0, 0), (n, n)).copy_from(a);
    h.view_mut((0, n), (n, n)).copy_from(&(-g));
    h.view_mut((n, 0), (n, n)).copy_from(&(-q));
    h.view_mut((n, n), (n, n)).copy_from(&(-a.transpose()));

    let scale = 1.0 + h.amax();
    let mut schur = ComplexSchur::of_real(&h)?;
    let axis_tol = 1e-9 * scale;
    if schur.eigenvalues().iter().any(|l| l.re.abs() <= axis_tol) {
        return Err(Error::Riccati(
            "Hamiltonian has eigenvalues on the imaginary axis".into(),
        ));
    }
    let stable = schur.reorder(|l| l.re < 0.0);
    if stable != n {
        return Err(Error::Riccati(format!(
            "expected {n} stable eigenvalues, found {stable}"
        )));
    }
    let u1 = schur.u.view((0, 0), (n, n)).into_owned();
    let u2 = schur.u.view((n, 0), (n, n)).into_owned();
    let u1_inv = u1
        .try_inverse()
        .ok_or_else(|| Error::Riccati("stable invariant subspace is not a graph".into()))?;
    let x_complex = u2 * u1_inv;
    let x = symmetrize(&x_complex.map(|v: Complex<f64>| v.re));
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Riccati("non-finite solution".into()));
    }
    Ok(refine(a, g, q, x))
}

fn residual(
    a: &DMatrix<f64>,
    g: &DMatrix<f64>,
    q: &DMatrix<f64>,
    x: &DMatrix<f64>,
) -> DMatrix<f64> {
    a.transpose() * x + x * a - x * g * x + q
}

/// Newton (Kleinman) correction steps; the Schur solution is already close.
fn refine(
    a: &DMatrix<f64>,
    g: &DMatrix<f64>,
    q: &DMatrix<f64>,
    mut x: DMatrix<f64>,
) -> DMatrix<f64> {
    for _ in 0..3 {
        let res = residual(a, g, q, &x);
        let target = 1e-13 * (1.0 + x.norm());
        if res.norm() <= target {
            break;
        }
        let closed = a - g * &x;
        // closedᵀ Δ + Δ closed + res = 0
        match solve_lyapunov(&closed.transpose(), &res) {
            Ok(delta) => {
                let candidate = symmetrize(&(&x + delta));
                if residual(a, g, q, &candidate).norm() < res.norm() {
                    x = candidate;
                } else {
                    break;
                }
            }
            Err(_) => break,
        }
    }
    x
}

/// Stabilizing solution of `AᵀX + XA − XBR⁻¹BᵀX + Q = 0`.
pub fn solve_care(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let m = b.ncols();
    if !a.is_square() || b.nrows() != n || q.shape() != (n, n) || r.shape() != (m, m) {
        return Err(Error::Dimension("CARE: inconsistent A, B, Q, R".into()));
    }
    if !is_symmetric(q) {
        return Err(Error::NotSymmetric("Q"));
    }
    if !is_symmetric(r) {
        return Err(Error::NotSymmetric("R"));
    }
    let chol = symmetrize(r)
        .cholesky()
        .ok_or(Error::NotPositiveDefinite("R"))?;
    let g = b * chol.solve(&b.transpose());
    let x = solve_riccati_hamiltonian(a, &symmetrize(&g), &symmetrize(q))?;
    let closed = a - &g * &x;
    if super::eigenvalues(&closed).iter().any(|l| l.re >= 0.0) {
        return Err(Error::Riccati("closed loop is not stable".into()));
    }
    Ok(x)
}
