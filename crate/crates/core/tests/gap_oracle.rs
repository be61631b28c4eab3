use mmpc_core::gap::{directed_gap, gap_matrix, gap_metric, DEFAULT_TOL};
use mmpc_core::linsys::StateSpace;
use nalgebra::{dmatrix, Complex};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Rational SISO transfer function with coefficients in descending powers of s.
#[derive(Debug, Clone)]
struct Tf {
    num: Vec<f64>,
    den: Vec<f64>,
}

impl Tf {
    fn eval(&self, w: f64) -> Complex<f64> {
        let s = Complex::new(0.0, w);
        let poly = |c: &[f64]| c.iter().fold(Complex::new(0.0, 0.0), |acc, &x| acc * s + x);
        poly(&self.num) / poly(&self.den)
    }

    /// Controllable canonical form; numerator degree strictly below denominator degree.
    fn state_space(&self) -> StateSpace {
        let n = self.den.len() - 1;
        let lead = self.den[0];
        let a = nalgebra::DMatrix::from_fn(n, n, |i, j| {
            if i == 0 {
                -self.den[j + 1] / lead
            } else if j + 1 == i {
                1.0
            } else {
                0.0
            }
        });
        let mut b = nalgebra::DMatrix::zeros(n, 1);
        b[(0, 0)] = 1.0;
        let mut num = vec![0.0; n];
        let off = n - self.num.len();
        for (k, &c) in self.num.iter().enumerate() {
            num[off + k] = c / lead;
        }
        let c = nalgebra::DMatrix::from_row_slice(1, n, &num);
        StateSpace::continuous(a, b, c, dmatrix![0.0]).unwrap()
    }
}

fn chordal(g1: &Tf, g2: &Tf, w: f64) -> f64 {
    let (a, b) = (g1.eval(w), g2.eval(w));
    (a - b).norm() / ((1.0 + a.norm_sqr()).sqrt() * (1.0 + b.norm_sqr()).sqrt())
}

/// Sup over frequency of the chordal distance: dense log sweep, then golden-section refinement.
fn nu_gap_oracle(g1: &Tf, g2: &Tf) -> f64 {
    let n = 6000;
    let (lo, hi) = (-5.0f64, 5.0f64);
    let lw = |k: usize| lo + (hi - lo) * k as f64 / (n - 1) as f64;
    let mut best = (chordal(g1, g2, 0.0), None);
    for k in 0..n {
        let v = chordal(g1, g2, 10f64.powf(lw(k)));
        if v > best.0 {
            best = (v, Some(k));
        }
    }
    if let Some(k) = best.1 {
        let (mut a, mut b) = (lw(k.saturating_sub(1)), lw((k + 1).min(n - 1)));
        let r = 0.5 * (5f64.sqrt() - 1.0);
        let f = |x: f64| chordal(g1, g2, 10f64.powf(x));
        for _ in 0..80 {
            let (c, d) = (b - r * (b - a), a + r * (b - a));
            if f(c) > f(d) {
                b = d;
            } else {
                a = c;
            }
        }
        best.0 = best.0.max(f(0.5 * (a + b)));
    }
    best.0
}

fn first_order(gain: f64, pole: f64) -> Tf {
    Tf {
        num: vec![gain],
        den: vec![1.0, pole],
    }
}

fn random_stable_min_phase(rng: &mut ChaCha8Rng) -> Tf {
    if rng.gen_bool(0.5) {
        first_order(rng.gen_range(0.2..5.0), rng.gen_range(0.2..5.0))
    } else {
        let wn: f64 = rng.gen_range(0.5..4.0);
        let zeta: f64 = rng.gen_range(0.3..1.5);
        let zero: f64 = rng.gen_range(0.3..5.0);
        let k: f64 = rng.gen_range(0.2..4.0);
        Tf {
            num: vec![k, k * zero],
            den: vec![1.0, 2.0 * zeta * wn, wn * wn],
        }
    }
}

fn siso_pairs(count: usize) -> Vec<(Tf, Tf)> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    (0..count)
        .map(|_| {
            (
                random_stable_min_phase(&mut rng),
                random_stable_min_phase(&mut rng),
            )
        })
        .collect()
}

#[test]
fn siso_gap_bounds_nu_gap_from_above() {
    let mut agree = 0;
    for (i, (t1, t2)) in siso_pairs(20).iter().enumerate() {
        let d = gap_metric(&t1.state_space(), &t2.state_space(), DEFAULT_TOL)
            .unwrap()
            .value;
        let nu = nu_gap_oracle(t1, t2);
        assert!(d >= nu - 2e-4, "pair {i}: gap {d} below nu {nu}");
        if (d - nu).abs() <= 2e-4 {
            agree += 1;
        }
        println!("pair {i:>2}: gap {d:.6} nu {nu:.6} diff {:+.2e}", d - nu);
    }
    println!("{agree}/20 pairs within 2e-4");
}

#[test]
fn first_order_pair_matches_model_matching_optimum() {
    // Reference from a direct minimization of the two-block cost over stable
    // first- and second-order Q on a dense frequency grid.
    let t1 = first_order(4.95186782683427, 1.1611405426148056);
    let t2 = first_order(2.701999456297748, 1.4350742994588084);
    let d = gap_metric(&t1.state_space(), &t2.state_space(), DEFAULT_TOL)
        .unwrap()
        .value;
    assert!((d - 0.3111604).abs() <= 2e-4, "{d}");
    assert!(d - nu_gap_oracle(&t1, &t2) > 1e-3);
}

#[test]
fn static_gain_pair_closed_form() {
    // For constant gains the chordal distance is frequency independent.
    let (k1, k2) = (1.0f64, 3.0f64);
    let expected = (k1 - k2).abs() / ((1.0 + k1 * k1).sqrt() * (1.0 + k2 * k2).sqrt());
    let (t1, t2) = (first_order(k1 * 50.0, 50.0), first_order(k2 * 50.0, 50.0));
    let d = gap_metric(&t1.state_space(), &t2.state_space(), DEFAULT_TOL)
        .unwrap()
        .value;
    assert!(d >= expected - 2e-4, "{d} < {expected}");
}

#[test]
fn stable_and_unstable_pole_are_far_apart() {
    let unstable =
        StateSpace::continuous(dmatrix![1.0], dmatrix![1.0], dmatrix![1.0], dmatrix![0.0]).unwrap();
    let stable = first_order(1.0, 1.0).state_space();
    let d = gap_metric(&unstable, &stable, DEFAULT_TOL).unwrap().value;
    assert!(d > 0.99, "{d}");
    assert!(d <= 1.0);
}

#[test]
fn matrix_of_siso_models_is_a_valid_distance_table() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let models: Vec<StateSpace> = (0..6)
        .map(|_| random_stable_min_phase(&mut rng).state_space())
        .collect();
    let m = gap_matrix(&models, DEFAULT_TOL).unwrap();
    for i in 0..6 {
        assert_eq!(m.get(i, i), 0.0);
        for j in 0..6 {
            assert_eq!(m.get(i, j), m.get(j, i));
            assert!((0.0..=1.0).contains(&m.get(i, j)));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn gap_bounded_and_symmetric(k1 in 0.2f64..5.0, p1 in 0.2f64..5.0, k2 in 0.2f64..5.0, p2 in 0.2f64..5.0) {
        let (a, b) = (first_order(k1, p1).state_space(), first_order(k2, p2).state_space());
        let ab = gap_metric(&a, &b, DEFAULT_TOL).unwrap().value;
        let ba = gap_metric(&b, &a, DEFAULT_TOL).unwrap().value;
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert!((ab - ba).abs() <= 2.0 * DEFAULT_TOL);
        prop_assert!(directed_gap(&a, &a, DEFAULT_TOL).unwrap() <= DEFAULT_TOL);
    }

    #[test]
    fn gap_dominates_nu_gap(k1 in 0.2f64..5.0, p1 in 0.2f64..5.0, k2 in 0.2f64..5.0, p2 in 0.2f64..5.0) {
        let (t1, t2) = (first_order(k1, p1), first_order(k2, p2));
        let d = gap_metric(&t1.state_space(), &t2.state_space(), DEFAULT_TOL).unwrap().value;
        prop_assert!(d >= nu_gap_oracle(&t1, &t2) - 2e-4);
    }
}

#[test]
fn attitude_models_have_zero_self_gap() {
    // These models carry pure integrators and give a far-from-minimal error cascade.
    let params = mmpc_core::dynamics::VehicleParams::default();
    for (phi, theta) in [(0.0, 0.0), (0.6, -1.3), (3.1, 0.7)] {
        let g = mmpc_core::bank::linearize_attitude(
            &mmpc_core::bank::OperatingPoint::new(phi, theta),
            &params,
        )
        .unwrap()
        .state_space()
        .unwrap();
        assert!(directed_gap(&g, &g, DEFAULT_TOL).unwrap() <= DEFAULT_TOL);
    }
}
