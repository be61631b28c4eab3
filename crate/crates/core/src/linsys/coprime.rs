//! Normalized coprime factorizations built from stabilizing Riccati solutions.

use super::riccati::solve_riccati_hamiltonian;
use super::{inv_sqrt_spd, symmetrize, StateSpace};
use crate::{Error, Result};
use nalgebra::DMatrix;

/// Normalized right coprime factors `G = N D⁻¹` with `[D; N]` inner.
#[derive(Debug, Clone)]
pub struct CoprimeFactors {
    pub n: StateSpace,
    pub d: StateSpace,
}

impl CoprimeFactors {
    /// The stacked graph symbol `[D; N]`.
    pub fn graph(&self) -> StateSpace {
        let m = self.d.outputs();
        let p = self.n.outputs();
        let nx = self.d.states();
        let mut c = DMatrix::zeros(m + p, nx);
        c.view_mut((0, 0), (m, nx)).copy_from(&self.d.c);
        c.view_mut((m, 0), (p, nx)).copy_from(&self.n.c);
        let mut d = DMatrix::zeros(m + p, m);
        d.view_mut((0, 0), (m, m)).copy_from(&self.d.d);
        d.view_mut((m, 0), (p, m)).copy_from(&self.n.d);
        StateSpace {
            a: self.d.a.clone(),
            b: self.d.b.clone(),
            c,
            d,
            domain: self.d.domain,
        }
    }
}

/// Normalized left coprime factors `G = D̃⁻¹ Ñ` with `[Ñ D̃]` co-inner.
#[derive(Debug, Clone)]
pub struct LeftCoprimeFactors {
    pub n: StateSpace,
    pub d: StateSpace,
}

impl LeftCoprimeFactors {
    /// `[−Ñ, D̃]`, whose kernel on the imaginary axis is the graph of `G`.
    pub fn graph_complement(&self) -> StateSpace {
        let m = self.n.inputs();
        let p = self.d.inputs();
        let nx = self.d.states();
        let mut b = DMatrix::zeros(nx, m + p);
        b.view_mut((0, 0), (nx, m)).copy_from(&(-&self.n.b));
        b.view_mut((0, m), (nx, p)).copy_from(&self.d.b);
        let mut d = DMatrix::zeros(self.d.outputs(), m + p);
        d.view_mut((0, 0), (self.d.outputs(), m))
            .copy_from(&(-&self.n.d));
        d.view_mut((0, m), (self.d.outputs(), p))
            .copy_from(&self.d.d);
        StateSpace {
            a: self.d.a.clone(),
            b,
            c: self.d.c.clone(),
            d,
            domain: self.d.domain,
        }
    }
}

fn require_continuous(sys: &StateSpace) -> Result<()> {
    if !sys.domain.is_continuous() {
        return Err(Error::InvalidArgument(
            "coprime factorization is implemented for continuous-time systems".into(),
        ));
    }
    Ok(())
}

pub fn normalized_coprime(sys: &StateSpace) -> Result<CoprimeFactors> {
    require_continuous(sys)?;
    let (a, b, c, d) = (&sys.a, &sys.b, &sys.c, &sys.d);
    let (m, p) = (sys.inputs(), sys.outputs());
    let r = DMatrix::identity(m, m) + d.transpose() * d;
    let rt = DMatrix::identity(p, p) + d * d.transpose();
    let r_inv = r
        .clone()
        .try_inverse()
        .ok_or(Error::NotPositiveDefinite("I + DᵀD"))?;
    let rt_inv = rt
        .try_inverse()
        .ok_or(Error::NotPositiveDefinite("I + DDᵀ"))?;

    let a_r = a - b * &r_inv * d.transpose() * c;
    let g = symmetrize(&(b * &r_inv * b.transpose()));
    let q = symmetrize(&(c.transpose() * &rt_inv * c));
    let x = solve_riccati_hamiltonian(&a_r, &g, &q)?;
    let f = -&r_inv * (b.transpose() * &x + d.transpose() * c);
    let r_half = inv_sqrt_spd(&r, "I + DᵀD")?;
    let a_cl = a + b * &f;
    let b_cl = b * &r_half;
    let den = StateSpace {
        a: a_cl.clone(),
        b: b_cl.clone(),
        c: f.clone(),
        d: r_half.clone(),
        domain: sys.domain,
    };
    let num = StateSpace {
        a: a_cl,
        b: b_cl,
        c: c + d * &f,
        d: d * &r_half,
        domain: sys.domain,
    };
    Ok(CoprimeFactors { n: num, d: den })
}

pub fn normalized_left_coprime(sys: &StateSpace) -> Result<LeftCoprimeFactors> {
    require_continuous(sys)?;
    let (a, b, c, d) = (&sys.a, &sys.b, &sys.c, &sys.d);
    let (m, p) = (sys.inputs(), sys.outputs());
    let r = DMatrix::identity(m, m) + d.transpose() * d;
    let rt = DMatrix::identity(p, p) + d * d.transpose();
    let r_inv = r
        .try_inverse()
        .ok_or(Error::NotPositiveDefinite("I + DᵀD"))?;
    let rt_inv = rt
        .clone()
        .try_inverse()
        .ok_or(Error::NotPositiveDefinite("I + DDᵀ"))?;

    let a_f = a - b * d.transpose() * &rt_inv * c;
    let g = symmetrize(&(c.transpose() * &rt_inv * c));
    let q = symmetrize(&(b * &r_inv * b.transpose()));
    let y = solve_riccati_hamiltonian(&a_f.transpose(), &g, &q)?;
    let l = -(b * d.transpose() + &y * c.transpose()) * &rt_inv;
    let rt_half = inv_sqrt_spd(&rt, "I + DDᵀ")?;
    let a_cl = a + &l * c;
    let c_cl = &rt_half * c;
    let num = StateSpace {
        a: a_cl.clone(),
        b: b + &l * d,
        c: c_cl.clone(),
        d: &rt_half * d,
        domain: sys.domain,
    };
    let den = StateSpace {
        a: a_cl,
        b: l,
        c: c_cl,
        d: rt_half,
        domain: sys.domain,
    };
    Ok(LeftCoprimeFactors { n: num, d: den })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linsys::{freq_response, FrequencyGrid};
    use nalgebra::{dmatrix, Complex};

    fn stacked_sv_error(f: &CoprimeFactors, grid: &FrequencyGrid) -> f64 {
        freq_response(&f.graph(), grid)
            .unwrap()
            .iter()
            .flat_map(|g| {
                g.clone()
                    .singular_values()
                    .iter()
                    .map(|s| (s - 1.0).abs())
                    .collect::<Vec<_>>()
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn first_order_is_normalized() {
        let g = StateSpace::continuous(dmatrix![-1.0], dmatrix![1.0], dmatrix![1.0], dmatrix![0.0])
            .unwrap();
        let f = normalized_coprime(&g).unwrap();
        let grid = FrequencyGrid::new(vec![0.01, 1.0, 100.0]).unwrap();
        assert!(stacked_sv_error(&f, &grid) < 1e-6);
        assert!(f.n.is_stable() && f.d.is_stable());
    }

    #[test]
    fn zero_system() {
        let g = StateSpace::continuous(dmatrix![-2.0], dmatrix![1.0], dmatrix![0.0], dmatrix![0.0])
            .unwrap();
        let f = normalized_coprime(&g).unwrap();
        let grid = FrequencyGrid::default();
        for n in freq_response(&f.n, &grid).unwrap() {
            assert!(n.camax() < 1e-14);
        }
        assert!(stacked_sv_error(&f, &grid) < 1e-6);
    }

    #[test]
    fn unstable_plant_with_feedthrough() {
        let g = StateSpace::continuous(
            dmatrix![1.0, 2.0; 0.0, -3.0],
            dmatrix![0.0, 1.0; 1.0, 0.5],
            dmatrix![1.0, 0.0],
            dmatrix![0.2, -0.1],
        )
        .unwrap();
        let f = normalized_coprime(&g).unwrap();
        let grid = FrequencyGrid::default();
        assert!(stacked_sv_error(&f, &grid) < 1e-6);
        for w in [0.1, 2.0, 30.0] {
            let z = Complex::new(0.0, w);
            let recon = f.n.eval(z).unwrap() * f.d.eval(z).unwrap().try_inverse().unwrap();
            assert!((recon - g.eval(z).unwrap()).camax() < 1e-10);
        }
        let left = normalized_left_coprime(&g).unwrap();
        for w in [0.1, 2.0, 30.0] {
            let z = Complex::new(0.0, w);
            let comp = left.graph_complement().eval(z).unwrap();
            // co-inner and annihilates the graph
            let gram = &comp * comp.adjoint();
            assert!((gram.map(|v| v.re) - DMatrix::<f64>::identity(1, 1)).amax() < 1e-10);
            assert!((comp * f.graph().eval(z).unwrap()).camax() < 1e-10);
        }
    }

    #[test]
    fn rejects_discrete() {
        let g = StateSpace::new(
            dmatrix![0.5],
            dmatrix![1.0],
            dmatrix![1.0],
            dmatrix![0.0],
            crate::linsys::TimeDomain::Discrete { sample_period: 0.1 },
        )
        .unwrap();
        assert!(normalized_coprime(&g).is_err());
    }
}
