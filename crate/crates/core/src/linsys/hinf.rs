//! H∞ norm from the imaginary-axis eigenvalues of the Hamiltonian
//! associated with `‖G‖∞ < γ`, using the two-step lower-bound iteration.

use super::{sigma_max, StateSpace, TimeDomain};
use crate::{Error, Result};
use nalgebra::{Complex, DMatrix};

fn sigma_at(sys: &StateSpace, omega: f64) -> f64 {
    sys.eval(Complex::new(0.0, omega))
        .map(|g| sigma_max(&g))
        .unwrap_or(f64::INFINITY)
}

/// Sorted nonnegative frequencies where some singular value of `G(jω)`
/// equals `γ`, read off the imaginary-axis eigenvalues of the Hamiltonian.
fn crossing_frequencies(sys: &StateSpace, gamma: f64) -> Result<Vec<f64>> {
    let n = sys.states();
    let m = sys.inputs();
    let p = sys.outputs();
    let (a, b, c, d) = (&sys.a, &sys.b, &sys.c, &sys.d);
    let r = DMatrix::identity(m, m) * (gamma * gamma) - d.transpose() * d;
    let r_inv = r
        .try_inverse()
        .ok_or_else(|| Error::Numerical("γ²I − DᵀD is singular".into()))?;
    let a_hat = a + b * &r_inv * d.transpose() * c;
    let mut h = DMatrix::zeros(2 * n, 2 * n);
    h.view_mut((0, 0), (n, n)).copy_from(&a_hat);
    h.view_mut((0, n), (n, n))
        .copy_from(&(b * &r_inv * b.transpose()));
    let lower = c.transpose() * (DMatrix::identity(p, p) + d * &r_inv * d.transpose()) * c;
    h.view_mut((n, 0), (n, n)).copy_from(&(-lower));
    h.view_mut((n, n), (n, n)).copy_from(&(-a_hat.transpose()));

    let mut omegas: Vec<f64> = super::eigenvalues(&h)
        .iter()
        .filter(|l| l.re.abs() <= 1e-6 * l.norm().max(1.0))
        .map(|l| l.im.abs())
        .collect();
    omegas.sort_by(f64::total_cmp);
    omegas.dedup_by(|x, y| (*x - *y).abs() <= 1e-12 * y.max(1.0));
    Ok(omegas)
}

/// Map a stable discrete system to a continuous one with the same H∞ norm
/// through the bilinear transform `z = (1 + s)/(1 − s)`.
fn bilinear_to_continuous(sys: &StateSpace) -> Result<StateSpace> {
    let n = sys.states();
    let ai = (&sys.a + DMatrix::identity(n, n))
        .try_inverse()
        .ok_or_else(|| Error::Numerical("bilinear transform: A has an eigenvalue at -1".into()))?;
    let s2 = 2f64.sqrt();
    let a = &ai * (&sys.a - DMatrix::identity(n, n));
    let b = &ai * &sys.b * s2;
    let c = &sys.c * &ai * s2;
    let d = &sys.d - &sys.c * &ai * &sys.b;
    StateSpace::continuous(a, b, c, d)
}

/// `‖sys‖∞` to relative accuracy `tol`.
pub fn hinf_norm(sys: &StateSpace, tol: f64) -> Result<f64> {
    hinf_norm_with_peak(sys, tol).map(|(norm, _)| norm)
}

/// `‖sys‖∞` together with a frequency (rad/s) at which the peak is attained.
pub fn hinf_norm_with_peak(sys: &StateSpace, tol: f64) -> Result<(f64, f64)> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    if !sys.is_stable() {
        return Err(Error::Unstable);
    }
    match sys.domain {
        TimeDomain::Continuous => hinf_continuous(sys, tol),
        TimeDomain::Discrete { sample_period } => {
            let (norm, w) = hinf_continuous(&bilinear_to_continuous(sys)?, tol)?;
            // s = jw maps to z = e^{jθ} with θ = 2 atan(w)
            Ok((norm, 2.0 * w.atan() / sample_period))
        }
    }
}

fn hinf_continuous(sys: &StateSpace, tol: f64) -> Result<(f64, f64)> {
    let d_norm = if sys.d.is_empty() {
        0.0
    } else {
        sys.d.clone().singular_values().max()
    };
    if sys.states() == 0 || sys.inputs() == 0 || sys.outputs() == 0 {
        return Ok((d_norm, f64::INFINITY));
    }

    // Lower bound from D, DC and the pole frequencies.
    let mut peak = f64::INFINITY;
    let mut lo = d_norm;
    let probe = |omega: f64, lo: &mut f64, peak: &mut f64| {
        let s = sigma_at(sys, omega);
        if s > *lo {
            *lo = s;
            *peak = omega;
        }
    };
    probe(0.0, &mut lo, &mut peak);
    for lambda in super::eigenvalues(&sys.a).iter() {
        for omega in [lambda.im.abs(), lambda.norm()] {
            probe(omega, &mut lo, &mut peak);
        }
    }
    if !lo.is_finite() {
        return Err(Error::Numerical("frequency response is not finite".into()));
    }

    let floor = 1e-14 * (1.0 + sys.b.amax()) * (1.0 + sys.c.amax());
    if lo <= floor {
        if crossing_frequencies(sys, floor)?.is_empty() {
            return Ok((0.0, 0.0));
        }
        lo = floor;
    }
    // Two-step iteration: raise the lower bound to the largest singular
    // value found at the midpoints between consecutive level crossings.
    for _ in 0..200 {
        let gamma = lo * (1.0 + 2.0 * tol);
        let omegas = crossing_frequencies(sys, gamma)?;
        if omegas.is_empty() {
            return Ok((lo * (1.0 + tol), peak));
        }
        let previous = lo;
        let mut candidates = omegas.clone();
        candidates.extend(omegas.windows(2).map(|w| 0.5 * (w[0] + w[1])));
        if omegas.len() == 1 {
            candidates.push(0.5 * omegas[0]);
        }
        for omega in candidates {
            probe(omega, &mut lo, &mut peak);
        }
        if !lo.is_finite() {
            return Err(Error::Numerical("frequency response is not finite".into()));
        }
        if lo <= previous {
            // crossings detected but no larger value found: γ sits within
            // rounding of the peak
            return Ok((gamma.min(lo * (1.0 + tol)), peak));
        }
    }
    Err(Error::Numerical("H∞ iteration did not converge".into()))
}
