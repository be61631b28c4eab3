//! Directed gap, gap metric and threshold-based model-bank reduction.
//!
//! The directed gap `δ⃗(G1, G2) = inf_{Q ∈ H∞} ‖G̃1 − G̃2 Q‖∞` between the
//! normalized graph symbols `G̃i = [Di; Ni]` is computed as a two-block
//! model-matching problem. Multiplying by the all-pass `[G̃2~; [−Ñ2 D̃2]]`
//! splits the error into `[G̃2~G̃1 − Q; R2]` with `R2 = −Ñ2 D1 + D̃2 N1`
//! stable. Then `‖R2‖∞` is a lower bound, and for `γ > ‖R2‖∞` the
//! level `γ` is achievable iff the Hankel norm of `G̃2~ G̃1 W⁻¹` is below one,
//! where `W~W = γ²I − R2~R2` is a bistable spectral factorization.

use crate::linsys::{
    balanced_truncation, freq_response, hinf_norm_with_peak, inv_sqrt_spd_complex,
    normalized_coprime, normalized_left_coprime, solve_lyapunov, solve_riccati_hamiltonian,
    sylvester_with_schur, symmetrize, ComplexSchur, FrequencyGrid, StateSpace,
};
use crate::{Error, Result};
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};

pub const DEFAULT_TOL: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GapMethod {
    TwoBlock,
    NuGapSurrogate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapValue {
    pub value: f64,
    pub method: GapMethod,
    /// Frequency where the pointwise lower bound peaks (diagnostic only).
    pub frequency_at_sup: f64,
}

/// Per-model data reused across every pair the model takes part in.
#[derive(Debug, Clone)]
pub struct GraphData {
    /// `[D; N]`, stable and inner.
    graph: StateSpace,
    /// `[−Ñ, D̃]`, stable and co-inner.
    complement: StateSpace,
    /// Schur form of the (antistable) state matrix of `graph~`.
    conj_schur: ComplexSchur,
    /// Observability Gramian of `graph~`.
    conj_obs_gramian: DMatrix<f64>,
}

impl GraphData {
    pub fn new(sys: &StateSpace) -> Result<Self> {
        let graph = normalized_coprime(sys)?.graph();
        let complement = normalized_left_coprime(sys)?.graph_complement();
        let conj = graph.conjugate()?;
        let conj_schur = ComplexSchur::of_real(&conj.a)?;
        // Aaᵀ Q + Q Aa = Caᵀ Ca
        let conj_obs_gramian =
            solve_lyapunov(&conj.a.transpose(), &(-(conj.c.transpose() * &conj.c)))?;
        Ok(Self {
            graph,
            complement,
            conj_schur,
            conj_obs_gramian,
        })
    }

    pub fn graph(&self) -> &StateSpace {
        &self.graph
    }

    fn dims(&self) -> (usize, usize) {
        (self.graph.inputs(), self.graph.outputs())
    }
}

/// Is `inf_Q ‖G̃1 − G̃2 Q‖∞ < γ`? Requires `γ > ‖R2‖∞`.
fn level_achievable(g1: &GraphData, g2: &GraphData, r2: &StateSpace, gamma: f64) -> Result<bool> {
    let m = r2.inputs();
    let (a, b, c, d) = (&r2.a, &r2.b, &r2.c, &r2.d);
    let rg = DMatrix::identity(m, m) * (gamma * gamma) - d.transpose() * d;
    let chol = match rg.clone().cholesky() {
        Some(c) => c,
        None => return Ok(false),
    };
    let ri = chol.inverse();
    let a_hat = a + b * &ri * d.transpose() * c;
    let g = symmetrize(&(-(b * &ri * b.transpose())));
    let q = symmetrize(&(c.transpose() * c + c.transpose() * d * &ri * d.transpose() * c));
    let x = match solve_riccati_hamiltonian(&a_hat, &g, &q) {
        Ok(x) => x,
        Err(Error::Riccati(_)) => return Ok(false),
        Err(e) => return Err(e),
    };
    let fw = &ri * (b.transpose() * &x + d.transpose() * c);
    // rg = Lᵀ... with L lower: rg = L Lᵀ, so W = Lᵀ(I − Fw(sI − A)⁻¹B)
    let lt_inv = chol
        .l()
        .transpose()
        .try_inverse()
        .ok_or_else(|| Error::Numerical("spectral factor is singular".into()))?;
    let w_inv = StateSpace {
        a: a + b * &fw,
        b: b * &lt_inv,
        c: fw.clone(),
        d: lt_inv,
        domain: r2.domain,
    };
    let s = w_inv.then(&g1.graph)?;

    // Antistable part of graph2~ ∘ s: Aa X − X As = Ba Cs.
    let aa_b = -g2.graph.c.transpose();
    let as_schur = ComplexSchur::of_real(&(-&s.a))?;
    let xm = sylvester_with_schur(&g2.conj_schur, &as_schur, &(&aa_b * &s.c))?;
    let bz = &aa_b * &s.d + &xm * &s.b;
    let aa = -g2.graph.a.transpose();
    let p = solve_lyapunov(&aa, &(-(&bz * bz.transpose())))?;
    let hankel_sq = max_eig_product(&p, &g2.conj_obs_gramian)?;
    Ok(hankel_sq < 1.0)
}

/// Largest eigenvalue of `P Q` for symmetric PSD `P`, `Q`.
fn max_eig_product(p: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<f64> {
    let eig = symmetrize(p).symmetric_eigen();
    let sqrt_p = &eig.eigenvectors
        * DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt()))
        * eig.eigenvectors.transpose();
    let m = symmetrize(&(&sqrt_p * q * &sqrt_p));
    Ok(m.symmetric_eigenvalues().max())
}

fn check_pair(g1: &StateSpace, g2: &StateSpace) -> Result<()> {
    if g1.inputs() != g2.inputs() || g1.outputs() != g2.outputs() {
        return Err(Error::Dimension(format!(
            "gap: {}x{} vs {}x{} systems",
            g1.outputs(),
            g1.inputs(),
            g2.outputs(),
            g2.inputs()
        )));
    }
    if g1.domain != g2.domain {
        return Err(Error::InvalidArgument(
            "gap: systems have different time domains".into(),
        ));
    }
    Ok(())
}

/// Directed gap from prepared graph data; returns (value, peak frequency of the lower bound).
pub fn directed_gap_prepared(g1: &GraphData, g2: &GraphData, tol: f64) -> Result<(f64, f64)> {
    if g1.dims() != g2.dims() {
        return Err(Error::Dimension("gap: graph symbols differ in size".into()));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "gap tolerance must be positive, got {tol}"
        )));
    }
    let r2 = g1.graph.then(&g2.complement)?;
    let (bound, peak) = hinf_norm_with_peak(&r2, 1e-9)?;
    // The cascade is far from minimal when the models are close, which
    // spoils the spectral factor at small levels.
    let r2 = balanced_truncation(&r2, 1e-2 * tol)?;
    let mut lo = bound.min(1.0);
    let mut hi = 1.0;
    if hi - lo <= tol {
        return Ok((0.5 * (lo + hi), peak));
    }
    // The gap usually sits at or just above the lower bound: gallop upward
    // from it before bisecting.
    let mut step = 0.5 * tol;
    loop {
        let gamma = lo + step;
        if gamma >= hi {
            break;
        }
        if level_achievable(g1, g2, &r2, gamma)? {
            hi = gamma;
            break;
        }
        lo = gamma;
        step *= 4.0;
    }
    while hi - lo > 0.5 * tol {
        let gamma = 0.5 * (lo + hi);
        if level_achievable(g1, g2, &r2, gamma)? {
            hi = gamma;
        } else {
            lo = gamma;
        }
    }
    Ok((0.5 * (lo + hi), peak))
}

pub fn directed_gap(g1: &StateSpace, g2: &StateSpace, tol: f64) -> Result<f64> {
    check_pair(g1, g2)?;
    directed_gap_prepared(&GraphData::new(g1)?, &GraphData::new(g2)?, tol).map(|(v, _)| v)
}

pub fn gap_metric_prepared(g1: &GraphData, g2: &GraphData, tol: f64) -> Result<GapValue> {
    let (forward, w_f) = directed_gap_prepared(g1, g2, tol)?;
    let (backward, w_b) = directed_gap_prepared(g2, g1, tol)?;
    let (value, frequency_at_sup) = if forward >= backward {
        (forward, w_f)
    } else {
        (backward, w_b)
    };
    Ok(GapValue {
        value: value.clamp(0.0, 1.0),
        method: GapMethod::TwoBlock,
        frequency_at_sup,
    })
}

pub fn gap_metric(g1: &StateSpace, g2: &StateSpace, tol: f64) -> Result<GapValue> {
    check_pair(g1, g2)?;
    gap_metric_prepared(&GraphData::new(g1)?, &GraphData::new(g2)?, tol)
}

/// ν-gap by a frequency sweep of the pointwise chordal distance
/// `σ̄((I + G2G2ᴴ)^{-1/2} (G1 − G2) (I + G1ᴴG1)^{-1/2})`.
///
/// The winding-number condition is not checked; this is a cross-check
/// oracle for stable, minimum-phase pairs and never the production path.
pub fn nu_gap_surrogate(
    g1: &StateSpace,
    g2: &StateSpace,
    grid: &FrequencyGrid,
) -> Result<GapValue> {
    check_pair(g1, g2)?;
    let f1 = freq_response(g1, grid)?;
    let f2 = freq_response(g2, grid)?;
    let mut best = (0.0, grid.points()[0]);
    for ((a, b), &w) in f1.iter().zip(&f2).zip(grid.points()) {
        let (p, m) = a.shape();
        let left = inv_sqrt_spd_complex(&(DMatrix::identity(p, p) + b * b.adjoint()))?;
        let right = inv_sqrt_spd_complex(&(DMatrix::identity(m, m) + a.adjoint() * a))?;
        let k = crate::linsys::sigma_max(&(left * (a - b) * right));
        if k > best.0 {
            best = (k, w);
        }
    }
    Ok(GapValue {
        value: best.0.min(1.0),
        method: GapMethod::NuGapSurrogate,
        frequency_at_sup: best.1,
    })
}

/// Symmetric pairwise gap matrix with zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct GapMatrix {
    entries: DMatrix<f64>,
}

impl GapMatrix {
    pub fn from_entries(entries: DMatrix<f64>) -> Result<Self> {
        let m = entries.nrows();
        if !entries.is_square() || m == 0 {
            return Err(Error::InvalidArgument(
                "gap matrix must be square and nonempty".into(),
            ));
        }
        for i in 0..m {
            if entries[(i, i)] != 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "gap matrix diagonal ({i},{i}) is nonzero"
                )));
            }
            for j in 0..m {
                let v = entries[(i, j)];
                if !(0.0..=1.0).contains(&v) || v != entries[(j, i)] {
                    return Err(Error::InvalidArgument(format!(
                        "gap matrix entry ({i},{j}) = {v} is out of range or asymmetric"
                    )));
                }
            }
        }
        Ok(Self { entries })
    }

    pub fn size(&self) -> usize {
        self.entries.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[(i, j)]
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    /// (min, max, mean) over off-diagonal entries; zeros for a 1x1 matrix.
    pub fn off_diagonal_stats(&self) -> (f64, f64, f64) {
        let m = self.size();
        let vals: Vec<f64> = (0..m)
            .flat_map(|i| (0..m).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| self.get(i, j))
            .collect();
        if vals.is_empty() {
            return (0.0, 0.0, 0.0);
        }
        let min = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = vals.iter().cloned().fold(0.0, f64::max);
        (min, max, vals.iter().sum::<f64>() / vals.len() as f64)
    }

    /// Header row of model indices, then one row per model.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let m = self.size();
        let header: Vec<String> = (0..m).map(|i| i.to_string()).collect();
        writeln!(out, "{}", header.join(","))?;
        for i in 0..m {
            let row: Vec<String> = (0..m).map(|j| format!("{}", self.get(i, j))).collect();
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Format("empty gap CSV".into()))??;
        let m = header.split(',').count();
        let mut entries = DMatrix::zeros(m, m);
        for i in 0..m {
            let line = lines
                .next()
                .ok_or_else(|| Error::Format(format!("gap CSV is missing row {i}")))??;
            let vals: Vec<&str> = line.split(',').collect();
            if vals.len() != m {
                return Err(Error::Format(format!(
                    "gap CSV row {i} has {} cells, expected {m}",
                    vals.len()
                )));
            }
            for (j, v) in vals.iter().enumerate() {
                entries[(i, j)] = v
                    .trim()
                    .parse()
                    .map_err(|e| Error::Format(format!("cell ({i},{j}): {e}")))?;
            }
        }
        Self::from_entries(entries)
    }
}

pub fn gap_matrix(models: &[StateSpace], tol: f64) -> Result<GapMatrix> {
    if models.is_empty() {
        return Err(Error::InvalidArgument(
            "gap matrix of an empty model list".into(),
        ));
    }
    for (j, g) in models.iter().enumerate().skip(1) {
        check_pair(&models[0], g).map_err(|e| Error::GapPair {
            i: 0,
            j,
            source: Box::new(e),
        })?;
    }
    let prepared: Vec<GraphData> = models
        .par_iter()
        .enumerate()
        .map(|(i, g)| {
            GraphData::new(g).map_err(|e| Error::GapPair {
                i,
                j: i,
                source: Box::new(e),
            })
        })
        .collect::<Result<_>>()?;
    let m = models.len();
    let pairs: Vec<(usize, usize)> = (0..m)
        .flat_map(|i| (i + 1..m).map(move |j| (i, j)))
        .collect();
    let values: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, j)| {
            gap_metric_prepared(&prepared[i], &prepared[j], tol)
                .map(|g| g.value)
                .map_err(|e| Error::GapPair {
                    i,
                    j,
                    source: Box::new(e),
                })
        })
        .collect::<Result<_>>()?;
    let mut entries = DMatrix::zeros(m, m);
    for (&(i, j), v) in pairs.iter().zip(values) {
        entries[(i, j)] = v;
        entries[(j, i)] = v;
    }
    GapMatrix::from_entries(entries)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reduction {
    /// Representative model indices in ascending order.
    pub representatives: Vec<usize>,
    /// For every model, the index of its representative.
    pub assignment: Vec<usize>,
}

/// Greedy covering in ascending index order.
pub fn reduce_bank(matrix: &GapMatrix, threshold: f64) -> Result<Reduction> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "gap threshold must lie in (0, 1), got {threshold}"
        )));
    }
    let mut representatives: Vec<usize> = Vec::new();
    let mut assignment = Vec::with_capacity(matrix.size());
    for i in 0..matrix.size() {
        // strict < keeps ties on the lower representative index
        let nearest = representatives
            .iter()
            .fold(None, |best: Option<usize>, &r| match best {
                Some(b) if matrix.get(i, b) <= matrix.get(i, r) => Some(b),
                _ => Some(r),
            });
        match nearest {
            Some(r) if matrix.get(i, r) < threshold => assignment.push(r),
            _ => {
                representatives.push(i);
                assignment.push(i);
            }
        }
    }
    Ok(Reduction {
        representatives,
        assignment,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    fn first_order(pole: f64, gain: f64) -> StateSpace {
        StateSpace::continuous(
            dmatrix![-pole],
            dmatrix![1.0],
            dmatrix![gain],
            dmatrix![0.0],
        )
        .unwrap()
    }

    #[test]
    fn self_gap_is_zero() {
        let g = first_order(1.0, 1.0);
        assert!(directed_gap(&g, &g, DEFAULT_TOL).unwrap() <= DEFAULT_TOL);
        assert!(gap_metric(&g, &g, DEFAULT_TOL).unwrap().value <= DEFAULT_TOL);
    }

    #[test]
    fn first_order_pair_matches_nu_gap() {
        let (a, b) = (first_order(1.0, 1.0), first_order(2.0, 1.0));
        let d = directed_gap(&a, &b, DEFAULT_TOL).unwrap();
        let nu =
            nu_gap_surrogate(&a, &b, &FrequencyGrid::logspace(1e-4, 1e5, 4000).unwrap()).unwrap();
        assert!(d > 0.0 && d < 1.0);
        assert!(
            (d - nu.value).abs() <= 2.0 * DEFAULT_TOL,
            "{d} vs {}",
            nu.value
        );
    }

    #[test]
    fn gain_scaling_is_monotone() {
        let g = first_order(1.0, 1.0);
        let mut last = -1.0;
        for k in [1.0, 2.0, 5.0, 10.0] {
            let d = directed_gap(&g, &first_order(1.0, k), DEFAULT_TOL).unwrap();
            assert!(d >= last - DEFAULT_TOL, "k = {k}: {d} < {last}");
            last = d;
        }
    }

    #[test]
    fn metric_is_exactly_symmetric() {
        let (a, b) = (first_order(1.0, 1.0), first_order(3.0, 2.0));
        assert_eq!(
            gap_metric(&a, &b, DEFAULT_TOL).unwrap().value,
            gap_metric(&b, &a, DEFAULT_TOL).unwrap().value
        );
    }

    #[test]
    fn mismatched_dimensions_rejected() {
        let a = first_order(1.0, 1.0);
        let b = StateSpace::continuous(
            dmatrix![-1.0],
            dmatrix![1.0, 0.0],
            dmatrix![1.0],
            dmatrix![0.0, 0.0],
        )
        .unwrap();
        assert!(matches!(
            directed_gap(&a, &b, DEFAULT_TOL),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn small_matrices() {
        let g = first_order(1.0, 1.0);
        let one = gap_matrix(std::slice::from_ref(&g), DEFAULT_TOL).unwrap();
        assert_eq!(one.size(), 1);
        assert_eq!(one.get(0, 0), 0.0);
        let two = gap_matrix(&[g.clone(), g], DEFAULT_TOL).unwrap();
        assert!(two.entries().iter().all(|&v| v <= DEFAULT_TOL));
    }

    #[test]
    fn reduce_identical_models() {
        let m = GapMatrix::from_entries(DMatrix::zeros(4, 4)).unwrap();
        let r = reduce_bank(&m, 0.2).unwrap();
        assert_eq!(r.representatives, vec![0]);
        assert_eq!(r.assignment, vec![0; 4]);
    }

    #[test]
    fn reduce_far_apart_models() {
        let mut e = DMatrix::from_element(3, 3, 0.5);
        e.fill_diagonal(0.0);
        let r = reduce_bank(&GapMatrix::from_entries(e).unwrap(), 0.2).unwrap();
        assert_eq!(r.representatives, vec![0, 1, 2]);
        assert_eq!(r.assignment, vec![0, 1, 2]);
    }

    #[test]
    fn reduce_ties_prefer_lower_representative() {
        let e = dmatrix![
            0.0, 0.5, 0.1;
            0.5, 0.0, 0.1;
            0.1, 0.1, 0.0
        ];
        let r = reduce_bank(&GapMatrix::from_entries(e).unwrap(), 0.2).unwrap();
        assert_eq!(r.representatives, vec![0, 1]);
        assert_eq!(r.assignment, vec![0, 1, 0]);
    }

    #[test]
    fn threshold_out_of_range() {
        let m = GapMatrix::from_entries(DMatrix::zeros(1, 1)).unwrap();
        assert!(reduce_bank(&m, 0.0).is_err());
        assert!(reduce_bank(&m, 1.0).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let e =
            dmatrix![0.0, 0.25, 0.1; 0.25, 0.0, 0.3333333333333333; 0.1, 0.3333333333333333, 0.0];
        let m = GapMatrix::from_entries(e).unwrap();
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf.clone())
            .unwrap()
            .starts_with("0,1,2\n"));
        assert_eq!(GapMatrix::read_csv(&buf[..]).unwrap(), m);
    }
}
