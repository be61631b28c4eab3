//! Sylvester and Lyapunov equations by the Bartels–Stewart method on the
//! complex Schur form.

use super::CMatrix;
use crate::{Error, Result};
use nalgebra::{Complex, DMatrix};

/// Complex Schur form by Hessenberg reduction followed by single-shift QR
/// with Wilkinson shifts and periodic exceptional shifts.
fn complex_schur(m: CMatrix, want_t: bool) -> Result<(CMatrix, CMatrix)> {
    let n = m.nrows();
    let scale = m.iter().fold(0.0f64, |acc, v| acc.max(v.norm()));
    if scale == 0.0 || n == 1 {
        return Ok((CMatrix::identity(n, n), m));
    }
    let hess = nalgebra::linalg::Hessenberg::new(m);
    let (mut q, mut h) = if want_t {
        hess.unpack()
    } else {
        (CMatrix::zeros(0, 0), hess.unpack_h())
    };
    for j in 0..n {
        for i in j + 2..n {
            h[(i, j)] = Complex::new(0.0, 0.0);
        }
    }
    let eps = f64::EPSILON;
    let tiny = f64::MIN_POSITIVE * n as f64 / eps;
    let max_iter = 30 * n.max(10);
    let mut ihi = n - 1;
    let mut iter = 0usize;
    let mut total = 0usize;
    while ihi > 0 {
        // Find the start of the active unreduced block.
        let mut l = ihi;
        while l > 0 {
            let sub = h[(l, l - 1)].norm();
            let mut diag = h[(l - 1, l - 1)].norm() + h[(l, l)].norm();
            if diag == 0.0 {
                diag = scale;
            }
            if sub <= eps * diag || sub <= tiny {
                h[(l, l - 1)] = Complex::new(0.0, 0.0);
                break;
            }
            l -= 1;
        }
        if l == ihi {
            ihi -= 1;
            iter = 0;
            continue;
        }
        iter += 1;
        total += 1;
        if total > max_iter * n {
            return Err(Error::Numerical("Schur iteration did not converge".into()));
        }
        let shift = if iter % 10 == 0 {
            let k = if iter % 20 == 0 { ihi } else { l + 1 };
            let anchor = if iter % 20 == 0 { ihi } else { l };
            h[(anchor, anchor)] + Complex::from(0.75 * h[(k, k - 1)].re.abs())
        } else {
            let (a, b, c, d) = (
                h[(ihi - 1, ihi - 1)],
                h[(ihi - 1, ihi)],
                h[(ihi, ihi - 1)],
                h[(ihi, ihi)],
            );
            let half = (a - d) * 0.5;
            let root = (half * half + b * c).sqrt();
            let mid = (a + d) * 0.5;
            let (c1, c2) = (mid + root, mid - root);
            if (c1 - d).norm() <= (c2 - d).norm() {
                c1
            } else {
                c2
            }
        };
        let mut x = h[(l, l)] - shift;
        let mut y = h[(l + 1, l)];
        for k in l..ihi {
            let r = (x.norm_sqr() + y.norm_sqr()).sqrt();
            let (c, s) = if r == 0.0 {
                (1.0, Complex::new(0.0, 0.0))
            } else if x.norm() == 0.0 {
                (0.0, y.conj() / y.norm())
            } else {
                let xn = x.norm();
                (xn / r, (x / xn) * y.conj() / r)
            };
            let col0 = if k > l { k - 1 } else { l };
            let col_end = if want_t { n } else { ihi + 1 };
            for j in col0..col_end {
                let (a, b) = (h[(k, j)], h[(k + 1, j)]);
                h[(k, j)] = a * c + s * b;
                h[(k + 1, j)] = -s.conj() * a + b * c;
            }
            let rows = (k + 2).min(ihi) + 1;
            for i in (if want_t { 0 } else { l })..rows {
                let (a, b) = (h[(i, k)], h[(i, k + 1)]);
                h[(i, k)] = a * c + s.conj() * b;
                h[(i, k + 1)] = -s * a + b * c;
            }
            for i in 0..if want_t { n } else { 0 } {
                let (a, b) = (q[(i, k)], q[(i, k + 1)]);
                q[(i, k)] = a * c + s.conj() * b;
                q[(i, k + 1)] = -s * a + b * c;
            }
            if k > l {
                h[(k + 1, k - 1)] = Complex::new(0.0, 0.0);
            }
            if k + 1 < ihi {
                x = h[(k + 1, k)];
                y = h[(k + 2, k)];
            }
        }
    }
    if h.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(Error::Numerical("Schur form is not finite".into()));
    }
    Ok((q, h))
}

/// Eigenvalues only, skipping the Schur vectors and off-block updates.
pub(crate) fn complex_eigenvalues_of(m: &DMatrix<f64>) -> Result<Vec<Complex<f64>>> {
    let n = m.nrows();
    if n == 0 {
        return Ok(Vec::new());
    }
    let (_, t) = complex_schur(m.map(Complex::from), false)?;
    Ok((0..n).map(|i| t[(i, i)]).collect())
}

/// Complex Schur decomposition `M = U T Uᴴ` with `T` upper triangular.
#[derive(Debug, Clone)]
pub struct ComplexSchur {
    pub u: CMatrix,
    pub t: CMatrix,
}

impl ComplexSchur {
    pub fn of_complex(m: CMatrix) -> Result<Self> {
        let n = m.nrows();
        if n == 0 {
            return Ok(Self {
                u: CMatrix::zeros(0, 0),
                t: CMatrix::zeros(0, 0),
            });
        }
        let (u, mut t) = complex_schur(m, true)?;
        for j in 0..n {
            for i in j + 1..n {
                t[(i, j)] = Complex::new(0.0, 0.0);
            }
        }
        Ok(Self { u, t })
    }

    pub fn of_real(m: &DMatrix<f64>) -> Result<Self> {
        Self::of_complex(m.map(Complex::from))
    }

    pub fn eigenvalues(&self) -> Vec<Complex<f64>> {
        (0..self.t.nrows()).map(|i| self.t[(i, i)]).collect()
    }

    /// Swap the adjacent diagonal entries `k` and `k+1` with a Givens rotation.
    fn swap(&mut self, k: usize) {
        let t11 = self.t[(k, k)];
        let t22 = self.t[(k + 1, k + 1)];
        let x = self.t[(k, k + 1)];
        let y = t22 - t11;
        let norm = (x.norm_sqr() + y.norm_sqr()).sqrt();
        if norm == 0.0 {
            return;
        }
        // First column of the rotation is the eigenvector of t22.
        let (a, b) = (x / norm, y / norm);
        let n = self.t.nrows();
        // Rows: T <- Qᴴ T
        for j in 0..n {
            let r1 = self.t[(k, j)];
            let r2 = self.t[(k + 1, j)];
            self.t[(k, j)] = a.conj() * r1 + b.conj() * r2;
            self.t[(k + 1, j)] = -b * r1 + a * r2;
        }
        // Columns: T <- T Q, U <- U Q
        for i in 0..n {
            let c1 = self.t[(i, k)];
            let c2 = self.t[(i, k + 1)];
            self.t[(i, k)] = c1 * a + c2 * b;
            self.t[(i, k + 1)] = -c1 * b.conj() + c2 * a.conj();
            let u1 = self.u[(i, k)];
            let u2 = self.u[(i, k + 1)];
            self.u[(i, k)] = u1 * a + u2 * b;
            self.u[(i, k + 1)] = -u1 * b.conj() + u2 * a.conj();
        }
        self.t[(k + 1, k)] = Complex::new(0.0, 0.0);
        self.t[(k, k)] = t22;
        self.t[(k + 1, k + 1)] = t11;
    }

    /// Reorder so that every eigenvalue satisfying `select` precedes the rest.
    /// Returns the number of selected eigenvalues.
    pub fn reorder(&mut self, select: impl Fn(Complex<f64>) -> bool) -> usize {
        let n = self.t.nrows();
        let mut target = 0;
        for j in 0..n {
            if select(self.t[(j, j)]) {
                let mut k = j;
                while k > target {
                    self.swap(k - 1);
                    k -= 1;
                }
                target += 1;
            }
        }
        target
    }
}

/// Solve the triangular Sylvester equation `Ta Y + Y Tb = F`.
fn triangular_sylvester(ta: &CMatrix, tb: &CMatrix, f: &CMatrix) -> Result<CMatrix> {
    let (m, n) = f.shape();
    let mut y = CMatrix::zeros(m, n);
    let scale = 1.0
        + ta.iter()
            .chain(tb.iter())
            .map(|v| v.norm())
            .fold(0.0, f64::max);
    for j in 0..n {
        let mut rhs = f.column(j).into_owned();
        for k in 0..j {
            let coeff = tb[(k, j)];
            if coeff != Complex::new(0.0, 0.0) {
                rhs -= y.column(k) * coeff;
            }
        }
        let shift = tb[(j, j)];
        for i in (0..m).rev() {
            let mut acc = rhs[i];
            for l in i + 1..m {
                acc -= ta[(i, l)] * y[(l, j)];
            }
            let diag = ta[(i, i)] + shift;
            if diag.norm() <= 1e-14 * scale {
                return Err(Error::Numerical(
                    "Sylvester operator is singular (A and -B share an eigenvalue)".into(),
                ));
            }
            y[(i, j)] = acc / diag;
        }
    }
    Ok(y)
}

pub(crate) fn sylvester_with_schur(
    sa: &ComplexSchur,
    sb: &ComplexSchur,
    c: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let f = sa.u.adjoint() * c.map(Complex::from) * &sb.u;
    let y = triangular_sylvester(&sa.t, &sb.t, &f)?;
    Ok((&sa.u * y * sb.u.adjoint()).map(|v| v.re))
}

/// Solve `A X + X B = C` for real `X`.
pub fn solve_sylvester(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    c: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    if !a.is_square() || !b.is_square() || c.nrows() != a.nrows() || c.ncols() != b.nrows() {
        return Err(Error::Dimension(
            "Sylvester: A, B must be square and C must be rows(A) x rows(B)".into(),
        ));
    }
    sylvester_with_schur(&ComplexSchur::of_real(a)?, &ComplexSchur::of_real(b)?, c)
}

/// Solve `A X + X Aᵀ + Q = 0`.
pub fn solve_lyapunov(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let x = solve_sylvester(a, &a.transpose(), &(-q))?;
    Ok(super::symmetrize(&x))
}
