//! Library results against independent reference computations.

use std::f64::consts::PI;

use afree_core::euler::{self, PressureLaw, SecondStateRule, SubsolutionState};
use afree_core::field::PeriodicField;
use afree_core::linalg;
use afree_core::operator::{self, LinearOperator};
use afree_core::oscillation::{self, LaminateSpec, Profile};
use afree_core::young::{self, Atom, DiscreteYoungMeasure};
use nalgebra::DMatrix;
use proptest::prelude::*;

/// Determinant by the permutation (Leibniz) sum.
fn leibniz_det(m: &[[f64; 4]; 4]) -> f64 {
    let mut total = 0.0;
    let mut perm = [0usize, 1, 2, 3];
    permute(&mut perm, 0, &mut |p| {
        let inversions = (0..4)
            .flat_map(|i| (i + 1..4).map(move |j| (i, j)))
            .filter(|&(i, j)| p[i] > p[j])
            .count();
        let sign = if inversions % 2 == 0 { 1.0 } else { -1.0 };
        total += sign * (0..4).map(|r| m[r][p[r]]).product::<f64>();
    });
    total
}

fn permute(p: &mut [usize; 4], k: usize, visit: &mut impl FnMut(&[usize; 4])) {
    if k == p.len() {
        visit(p);
        return;
    }
    for i in k..p.len() {
        p.swap(k, i);
        permute(p, k + 1, visit);
        p.swap(k, i);
    }
}

/// Z-matrix written out from the block form of the Euler constraint.
fn euler_rows(z: &[f64]) -> [[f64; 4]; 4] {
    let (rho, m1, m2, m3) = (z[0], z[1], z[2], z[3]);
    let (u11, u12, u13, u22, u23, q) = (z[4], z[5], z[6], z[7], z[8], z[9]);
    [
        [rho, m1, m2, m3],
        [m1, u11 + q, u12, u13],
        [m2, u12, u22 + q, u23],
        [m3, u13, u23, -u11 - u22 + q],
    ]
}

fn state() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0f64..3.0, 10)
}

/// W1 on the line as the integral of `|F_a - F_b|`.
fn cdf_distance(a: &[(f64, f64)], b: &[(f64, f64)]) -> f64 {
    let mut events: Vec<(f64, f64)> = a.iter().copied().chain(b.iter().map(|&(x, w)| (x, -w))).collect();
    events.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut acc = 0.0;
    let mut total = 0.0;
    for pair in events.windows(2) {
        acc += pair[0].1;
        total += acc.abs() * (pair[1].0 - pair[0].0);
    }
    total
}

fn measure_1d(points: &[(f64, f64)]) -> DiscreteYoungMeasure {
    let total: f64 = points.iter().map(|p| p.1).sum();
    DiscreteYoungMeasure::new(
        1,
        points
            .iter()
            .map(|&(x, w)| Atom {
                point: vec![x],
                weight: w / total,
            })
            .collect(),
    )
    .unwrap()
}

fn normalized(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let total: f64 = points.iter().map(|p| p.1).sum();
    points.iter().map(|&(x, w)| (x, w / total)).collect()
}

proptest! {
    #[test]
    fn euler_determinant_matches_permutation_sum(z in state()) {
        let s = SubsolutionState::unpack(&z).unwrap();
        let oracle = leibniz_det(&euler_rows(&z));
        let explicit = euler::z_matrix_euler(&s).determinant();
        let generic = operator::z_matrix(&euler::build_euler_operator(), &z).unwrap().entries;
        let cofactor = linalg::cofactor_det(&generic);
        let scale = oracle.abs().max(1.0);
        prop_assert!((explicit - oracle).abs() <= 1e-10 * scale);
        prop_assert!((cofactor - oracle).abs() <= 1e-10 * scale);
    }

    #[test]
    fn line_transport_matches_cdf_distance(
        a in prop::collection::vec((-5.0f64..5.0, 0.05f64..1.0), 1..7),
        b in prop::collection::vec((-5.0f64..5.0, 0.05f64..1.0), 1..7),
    ) {
        let exact = cdf_distance(&normalized(&a), &normalized(&b));
        let got = young::measure_distance(&measure_1d(&a), &measure_1d(&b)).unwrap();
        prop_assert!((got - exact).abs() <= 1e-9 * exact.max(1.0), "{got} vs {exact}");
    }
}

#[test]
fn counterexample_determinant_matches_permutation_sum() {
    for &(kappa, g) in &[(1.0, 2.0), (0.5, 1.4), (2.0, 3.0)] {
        let p = PressureLaw::new(kappa, g).unwrap();
        for &gamma in &[0.3, 1.7, 2.0, 3.9] {
            for rule in [SecondStateRule::LiftConsistent, SecondStateRule::AsPrinted] {
                let c = euler::counterexample_states_with(&p, gamma, rule, euler::DEFAULT_DET_TOL).unwrap();
                let oracle = leibniz_det(&euler_rows(&c.zdiff));
                assert!((c.det_numeric - oracle).abs() <= 1e-10 * oracle.abs().max(1.0));
            }
        }
    }
}

#[test]
fn lifted_states_satisfy_trace_and_pressure_relations() {
    let p = PressureLaw::new(1.3, 1.7).unwrap();
    let e = euler::EulerPointState::new(0.7, [0.4, -1.1, 0.3]).unwrap();
    let s = euler::lift(&e, &p).unwrap();
    let v2: f64 = e.v.iter().map(|x| x * x).sum();
    assert!((s.q - (1.3 * 0.7f64.powf(1.7) + 0.7 * v2 / 3.0)).abs() < 1e-12);
    let u = s.u_matrix();
    assert!((u[0][0] + u[1][1] + u[2][2]).abs() < 1e-12);
    for i in 0..3 {
        assert!((s.m[i] - 0.7 * e.v[i]).abs() < 1e-12);
        for j in 0..3 {
            let delta = if i == j { v2 / 3.0 } else { 0.0 };
            assert!((u[i][j] - 0.7 * (e.v[i] * e.v[j] - delta)).abs() < 1e-12);
        }
    }
}

/// `z(x) = a cos(2 pi k.x) + b sin(2 pi j.x)` on a 2-d grid.
fn trig_field(dims: &[usize], a: [f64; 2], k: [i64; 2], b: [f64; 2], j: [i64; 2]) -> PeriodicField {
    PeriodicField::from_fn(dims.to_vec(), 2, |idx, out| {
        let x: Vec<f64> = idx.iter().zip(dims).map(|(&i, &n)| i as f64 / n as f64).collect();
        let pk = 2.0 * PI * (k[0] as f64 * x[0] + k[1] as f64 * x[1]);
        let pj = 2.0 * PI * (j[0] as f64 * x[0] + j[1] as f64 * x[1]);
        for c in 0..2 {
            out[c] = a[c] * pk.cos() + b[c] * pj.sin();
        }
    })
    .unwrap()
}

#[test]
fn divergence_residual_matches_analytic_derivative() {
    let dims = [12, 10];
    let (a, k, b, j) = ([0.7, -1.2], [2, 1], [0.3, 0.9], [-1, 3]);
    let field = trig_field(&dims, a, k, b, j);
    // div z = -2 pi (k.a) sin(pk) + 2 pi (j.b) cos(pj); RMS over the grid
    let mut sum = 0.0;
    let mut count = 0;
    for i0 in 0..dims[0] {
        for i1 in 0..dims[1] {
            let x = [i0 as f64 / dims[0] as f64, i1 as f64 / dims[1] as f64];
            let pk = 2.0 * PI * (k[0] as f64 * x[0] + k[1] as f64 * x[1]);
            let pj = 2.0 * PI * (j[0] as f64 * x[0] + j[1] as f64 * x[1]);
            let ka = k[0] as f64 * a[0] + k[1] as f64 * a[1];
            let jb = j[0] as f64 * b[0] + j[1] as f64 * b[1];
            let div = -2.0 * PI * ka * pk.sin() + 2.0 * PI * jb * pj.cos();
            sum += div * div;
            count += 1;
        }
    }
    let oracle = (sum / count as f64).sqrt();
    let r = oscillation::constraint_residual(&LinearOperator::divergence(2).unwrap(), &field).unwrap();
    assert!((r.l2 - oracle).abs() < 1e-10 * oracle, "{} vs {oracle}", r.l2);
}

#[test]
fn nyquist_mode_carries_no_residual() {
    // alternating sign along x: the Nyquist component, treated as zero frequency
    let field = PeriodicField::from_fn(vec![8, 8], 2, |idx, out| {
        let s = if idx[0] % 2 == 0 { 1.0 } else { -1.0 };
        out.copy_from_slice(&[s, 0.5 * s]);
    })
    .unwrap();
    let r = oscillation::constraint_residual(&LinearOperator::divergence(2).unwrap(), &field).unwrap();
    assert_eq!(r.l2, 0.0);
}

fn random_field(dims: &[usize], d: usize, values: &[f64]) -> PeriodicField {
    PeriodicField::new(dims.to_vec(), d, values.to_vec()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn projection_is_idempotent_and_nonexpansive(
        values in prop::collection::vec(-2.0f64..2.0, 6 * 5 * 3),
        other in prop::collection::vec(-2.0f64..2.0, 6 * 5 * 3),
    ) {
        let op = LinearOperator::from_rows(&[
            vec![vec![1.0, 0.0, 2.0]],
            vec![vec![0.0, -1.0, 1.0]],
        ]).unwrap();
        let dims = [6, 5];
        let a = random_field(&dims, 3, &values);
        let b = random_field(&dims, 3, &other);
        let pa = oscillation::project_afree(&op, &a).unwrap();
        let ppa = oscillation::project_afree(&op, &pa).unwrap();
        let pb = oscillation::project_afree(&op, &b).unwrap();
        prop_assert!(pa.l2_distance(&ppa) <= 1e-12);
        prop_assert!(pa.l2_distance(&pb) <= a.l2_distance(&b) + 1e-12);
        prop_assert!(oscillation::constraint_residual(&op, &pa).unwrap().l2 <= 1e-10);
        let (ma, mpa) = (a.mean(), pa.mean());
        for (x, y) in ma.iter().zip(&mpa) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
    }
}

#[test]
fn square_laminate_fractions_match_lambda() {
    let op = LinearOperator::divergence(2).unwrap();
    for &(lambda, n) in &[(0.25, 1usize), (0.5, 2), (1.0 / 3.0, 3)] {
        let spec = LaminateSpec {
            z1: vec![1.0, -1.0],
            z2: vec![0.0, 0.0],
            lambda,
            xi: vec![1, 1],
            oscillations: n,
            profile: Profile::Square,
        };
        let field = oscillation::synthesize_laminate(&op, &spec, &[96, 96]).unwrap();
        let (empirical, w1) = oscillation::laminate_measure_distance(&field, &spec).unwrap();
        assert!(w1 <= 2.0 * 2f64.sqrt() / 96.0, "lambda {lambda}: W1 {w1}");
        let near_z1: f64 = empirical
            .atoms()
            .iter()
            .filter(|a| linalg::norm(&linalg::sub(&a.point, &spec.z1)) < 0.5)
            .map(|a| a.weight)
            .sum();
        assert!((near_z1 - lambda).abs() <= 1.0 / 96.0 + 1e-12);
        // the field varies only along xi: x -> x + (1, -1) / 96 is a symmetry
        let shifted = PeriodicField::from_fn(vec![96, 96], 2, |idx, out| {
            let j = [(idx[0] + 1) % 96, (idx[1] + 95) % 96];
            out.copy_from_slice(field.node(j[0] * 96 + j[1]));
        })
        .unwrap();
        assert!(field.l2_distance(&shifted) < 1e-12);
    }
}

#[test]
fn rigidity_recovers_exact_segment_fields() {
    // two decoupled transport equations in 2-d have no one-dimensional wave cone
    let op = LinearOperator::from_rows(&[
        vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]],
        vec![vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]],
    ])
    .unwrap();
    // Z-matrix of z2 - z1 = (1, 0, 1) is the identity
    let (z1, z2) = (vec![1.0, 0.0, 0.5], vec![2.0, 0.0, 1.5]);
    let field = PeriodicField::constant(vec![16, 16], &z1).unwrap();
    let r = oscillation::rigidity_reconstruct(&op, &z1, &z2, &field).unwrap();
    assert!((r.lambda_mean - 1.0).abs() < 1e-12);
    assert!(r.lambda_oscillation < 1e-12);
    assert!(r.e_norm < 1e-12);
    let zt = operator::z_matrix(&op, &linalg::sub(&z2, &z1)).unwrap().entries;
    let sv = linalg::singular_values(&DMatrix::from_fn(zt.nrows(), zt.ncols(), |r, c| zt[(r, c)]));
    assert!(sv.iter().all(|&s| s > 1e-6));
}
