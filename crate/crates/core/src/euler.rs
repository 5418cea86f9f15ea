//! The compressible Euler system in subsolution variables `(rho, m, U, q)`:
//! its constraint operator, Z-matrix, the lift of phase-space points,
//! the two-state counterexample measure, and weak-form residual checks.

use nalgebra::{DMatrix, Matrix4};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, check_finite, Error, Result};
use crate::functions::ScalarFunction;
use crate::linalg;
use crate::operator::{self, LinearOperator, WaveConeVerdict};
use crate::young::{DiscreteYoungMeasure, ParametrizedMeasure};

/// Relative determinant threshold for wave-cone membership of Euler states.
pub const DEFAULT_DET_TOL: f64 = 1e-10;

/// `p(rho) = kappa * rho^gamma_exp`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PressureLaw {
    kappa: f64,
    gamma_exp: f64,
}

impl PressureLaw {
    pub fn new(kappa: f64, gamma_exp: f64) -> Result<Self> {
        if !(kappa > 0.0 && kappa.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "pressure coefficient must be positive, got {kappa}"
            )));
        }
        if !(gamma_exp >= 1.0 && gamma_exp.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "pressure exponent must be >= 1, got {gamma_exp}"
            )));
        }
        Ok(Self { kappa, gamma_exp })
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn gamma_exp(&self) -> f64 {
        self.gamma_exp
    }

    pub fn pressure(&self, rho: f64) -> f64 {
        self.kappa * rho.max(0.0).powf(self.gamma_exp)
    }

    pub fn derivative(&self, rho: f64) -> f64 {
        self.kappa * self.gamma_exp * rho.max(0.0).powf(self.gamma_exp - 1.0)
    }
}

/// Subsolution state. `U` is symmetric trace-free and stored through
/// `(U11, U12, U13, U22, U23)`; `U33 = -U11 - U22`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubsolutionState {
    pub rho: f64,
    pub m: [f64; 3],
    pub u: [f64; 5],
    pub q: f64,
}

impl SubsolutionState {
    pub const DIM: usize = 10;

    /// `(rho, m1, m2, m3, U11, U12, U13, U22, U23, q)`
    pub fn pack(&self) -> [f64; 10] {
        let [u11, u12, u13, u22, u23] = self.u;
        [
            self.rho, self.m[0], self.m[1], self.m[2], u11, u12, u13, u22, u23, self.q,
        ]
    }

    pub fn unpack(z: &[f64]) -> Result<Self> {
        check_dim("subsolution state", Self::DIM, z.len())?;
        Ok(Self {
            rho: z[0],
            m: [z[1], z[2], z[3]],
            u: [z[4], z[5], z[6], z[7], z[8]],
            q: z[9],
        })
    }

    pub fn u33(&self) -> f64 {
        -self.u[0] - self.u[3]
    }

    pub fn u_matrix(&self) -> [[f64; 3]; 3] {
        let [u11, u12, u13, u22, u23] = self.u;
        [[u11, u12, u13], [u12, u22, u23], [u13, u23, self.u33()]]
    }

    pub fn sub(&self, other: &Self) -> Self {
        let a = self.pack();
        let b = other.pack();
        let d: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
        Self::unpack(&d).expect("length 10")
    }
}

/// Euler point `(rho, v)`; its phase-space coordinates are `(rho, sqrt(rho) v)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EulerPointState {
    pub rho: f64,
    pub v: [f64; 3],
}

impl EulerPointState {
    pub fn new(rho: f64, v: [f64; 3]) -> Result<Self> {
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(Error::InvalidArgument(format!("density must be positive, got {rho}")));
        }
        check_finite("velocity", &v)?;
        Ok(Self { rho, v })
    }

    /// From `(xi0, xi')` with `xi' = sqrt(rho) v`.
    pub fn from_phase(xi0: f64, xi_prime: [f64; 3]) -> Result<Self> {
        if !(xi0 > 0.0) {
            return Err(Error::InvalidArgument(format!("density must be positive, got {xi0}")));
        }
        let s = xi0.sqrt();
        Self::new(xi0, xi_prime.map(|x| x / s))
    }

    pub fn phase(&self) -> [f64; 4] {
        let s = self.rho.sqrt();
        [self.rho, s * self.v[0], s * self.v[1], s * self.v[2]]
    }
}

/// The operator of `d_t rho + div m = 0`, `d_t m + div U + grad q = 0` in the
/// packed variables, with `x_0 = t`.
pub fn build_euler_operator() -> LinearOperator {
    #[rustfmt::skip]
    let a0 = [
        [1, 0, 0, 0, 0, 0, 0, 0, 0, 0],
        [0, 1, 0, 0, 0, 0, 0, 0, 0, 0],
        [0, 0, 1, 0, 0, 0, 0, 0, 0, 0],
        [0, 0, 0, 1, 0, 0, 0, 0, 0, 0],
    ];
    #[rustfmt::skip]
    let a1 = [
        [0, 1, 0, 0, 0, 0, 0, 0, 0, 0],
        [0, 0, 0, 0, 1, 0, 0, 0, 0, 1],
        [0, 0, 0, 0, 0, 1, 0, 0, 0, 0],
        [0, 0, 0, 0, 0, 0, 1, 0, 0, 0],
    ];
    #[rustfmt::skip]
    let a2 = [
        [0, 0, 1, 0, 0, 0, 0, 0, 0, 0],
        [0, 0, 0, 0, 0, 1, 0, 0, 0, 0],
        [0, 0, 0, 0, 0, 0, 0, 1, 0, 1],
        [0, 0, 0, 0, 0, 0, 0, 0, 1, 0],
    ];
    #[rustfmt::skip]
    let a3 = [
        [0, 0, 0, 1, 0, 0, 0, 0, 0, 0],
        [0, 0, 0, 0, 0, 0, 1, 0, 0, 0],
        [0, 0, 0, 0, 0, 0, 0, 0, 1, 0],
        [0, 0, 0, 0, -1, 0, 0, -1, 0, 1],
    ];
    let to_mat = |a: [[i32; 10]; 4]| DMatrix::from_fn(4, 10, |r, c| f64::from(a[r][c]));
    LinearOperator::new(vec![to_mat(a0), to_mat(a1), to_mat(a2), to_mat(a3)])
        .expect("Euler coefficients are valid")
}

/// Explicit symmetric Z-matrix of a subsolution state.
pub fn z_matrix_euler(s: &SubsolutionState) -> Matrix4<f64> {
    let [m1, m2, m3] = s.m;
    let [u11, u12, u13, u22, u23] = s.u;
    let q = s.q;
    #[rustfmt::skip]
    let z = Matrix4::new(
        s.rho, m1,        m2,        m3,
        m1,    u11 + q,   u12,       u13,
        m2,    u12,       u22 + q,   u23,
        m3,    u13,       u23,       -u11 - u22 + q,
    );
    z
}

fn row_norm_product(z: &Matrix4<f64>) -> f64 {
    (0..4).map(|r| z.row(r).norm()).product()
}

/// Membership in the Euler wave cone by `|det Z| <= tol * prod_r |row_r|`.
pub fn wave_cone_euler(s: &SubsolutionState, tol: f64) -> Result<WaveConeVerdict> {
    let packed = s.pack();
    check_finite("state", &packed)?;
    if packed.iter().all(|&x| x == 0.0) {
        return Err(Error::ZeroState);
    }
    let z = z_matrix_euler(s);
    let dz = DMatrix::from_fn(4, 4, |r, c| z[(r, c)]);
    let det = linalg::cofactor_det(&dz);
    let member = det.abs() <= tol * row_norm_product(&z);
    let rank_tol = tol.clamp(f64::EPSILON, 0.5);
    Ok(WaveConeVerdict {
        member,
        z_rank: linalg::numeric_rank(&dz, rank_tol)?,
        directions: if member {
            linalg::null_space(&dz, rank_tol.max(1e-8))
        } else {
            Vec::new()
        },
        tolerance_used: tol,
    })
}

/// `Q(xi) = (xi0, sqrt(xi0) xi', xi' (x) xi' - |xi'|^2 I / 3, p(xi0) + |xi'|^2 / 3)`.
pub fn lift(s: &EulerPointState, p: &PressureLaw) -> Result<SubsolutionState> {
    if !(s.rho > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "lift requires positive density, got {}",
            s.rho
        )));
    }
    let [_, x1, x2, x3] = s.phase();
    Ok(lift_phase_unchecked(s.rho, [x1, x2, x3], p))
}

fn lift_phase_unchecked(xi0: f64, xi: [f64; 3], p: &PressureLaw) -> SubsolutionState {
    let root = xi0.sqrt();
    let third = (xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2]) / 3.0;
    SubsolutionState {
        rho: xi0,
        m: xi.map(|x| root * x),
        u: [
            xi[0] * xi[0] - third,
            xi[0] * xi[1],
            xi[0] * xi[2],
            xi[1] * xi[1] - third,
            xi[1] * xi[2],
        ],
        q: p.pressure(xi0) + third,
    }
}

/// Lift of a phase-space point `(xi0, xi1, xi2, xi3)`; the vacuum `(0, 0)` maps
/// to the zero-momentum state with pressure `p(0)`.
pub fn lift_phase(xi: &[f64], p: &PressureLaw) -> Result<SubsolutionState> {
    check_dim("phase-space point", 4, xi.len())?;
    check_finite("phase-space point", xi)?;
    let xp = [xi[1], xi[2], xi[3]];
    if xi[0] > 0.0 {
        Ok(lift_phase_unchecked(xi[0], xp, p))
    } else if xi[0] == 0.0 && xp.iter().all(|&x| x == 0.0) {
        Ok(lift_phase_unchecked(0.0, xp, p))
    } else {
        Err(Error::InvalidMeasure(format!(
            "phase-space atom {xi:?} has zero or negative density"
        )))
    }
}

/// Push-forward of a phase-space measure through the lift.
pub fn lift_measure(nu: &DiscreteYoungMeasure, p: &PressureLaw) -> Result<DiscreteYoungMeasure> {
    check_dim("phase-space measure dimension", 4, nu.dim())?;
    nu.push_forward(|xi| Ok(lift_phase(xi, p)?.pack().to_vec()))
}

/// Which second state the counterexample uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SecondStateRule {
    /// `z2 = Q(gamma, e1 / sqrt(gamma))`, i.e. `q2 = p(gamma) + 1 / (3 gamma)`.
    #[default]
    LiftConsistent,
    /// `q2 = p(gamma) + gamma / 3`, other components unchanged.
    AsPrinted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CounterexampleVerdict {
    Rigid,
    Degenerate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterexampleStates {
    pub gamma: f64,
    pub rule: SecondStateRule,
    pub z1: SubsolutionState,
    pub z2: SubsolutionState,
    pub zdiff: [f64; 10],
    /// Cofactor-expansion determinant of the Z-matrix of `z2 - z1`.
    pub det_numeric: f64,
    /// `(1 - 1/gamma + p(1) - p(gamma)) (p(1) - p(gamma))^2`
    pub det_formula: f64,
    /// `det_numeric / det_formula` (NaN when the formula vanishes)
    pub ratio: f64,
    /// `det_numeric / (gamma - 1)`, which agrees with `-det_formula` for the lift-consistent rule
    pub det_over_gamma_minus_one: f64,
    pub det_scale: f64,
    pub verdict: CounterexampleVerdict,
}

fn second_state(gamma: f64, p_gamma: f64, rule: SecondStateRule) -> SubsolutionState {
    let q = match rule {
        SecondStateRule::LiftConsistent => p_gamma + 1.0 / (3.0 * gamma),
        SecondStateRule::AsPrinted => p_gamma + gamma / 3.0,
    };
    SubsolutionState {
        rho: gamma,
        m: [1.0, 0.0, 0.0],
        u: [2.0 / (3.0 * gamma), 0.0, 0.0, -1.0 / (3.0 * gamma), 0.0],
        q,
    }
}

fn first_state(p1: f64) -> SubsolutionState {
    SubsolutionState {
        rho: 1.0,
        m: [1.0, 0.0, 0.0],
        u: [2.0 / 3.0, 0.0, 0.0, -1.0 / 3.0, 0.0],
        q: p1 + 1.0 / 3.0,
    }
}

/// Determinant of the difference Z-matrix for an arbitrary pressure function.
pub fn difference_determinant(p: impl Fn(f64) -> f64, gamma: f64, rule: SecondStateRule) -> f64 {
    let z1 = first_state(p(1.0));
    let z2 = second_state(gamma, p(gamma), rule);
    let z = z_matrix_euler(&z2.sub(&z1));
    linalg::cofactor_det(&DMatrix::from_fn(4, 4, |r, c| z[(r, c)]))
}

pub fn counterexample_states(p: &PressureLaw, gamma: f64) -> Result<CounterexampleStates> {
    counterexample_states_with(p, gamma, SecondStateRule::LiftConsistent, DEFAULT_DET_TOL)
}

/// The two-state counterexample at parameter `gamma`.
pub fn counterexample_states_with(
    p: &PressureLaw,
    gamma: f64,
    rule: SecondStateRule,
    tol: f64,
) -> Result<CounterexampleStates> {
    if !(gamma > 0.0 && gamma.is_finite()) || gamma == 1.0 {
        return Err(Error::InvalidArgument(format!(
            "gamma must be positive and different from 1, got {gamma}"
        )));
    }
    let z1 = lift(&EulerPointState::new(1.0, [1.0, 0.0, 0.0])?, p)?;
    let z2 = match rule {
        SecondStateRule::LiftConsistent => {
            lift(&EulerPointState::new(gamma, [1.0 / gamma, 0.0, 0.0])?, p)?
        }
        SecondStateRule::AsPrinted => second_state(gamma, p.pressure(gamma), rule),
    };
    let diff = z2.sub(&z1);
    let z = z_matrix_euler(&diff);
    let det_numeric = linalg::cofactor_det(&DMatrix::from_fn(4, 4, |r, c| z[(r, c)]));
    let (p1, pg) = (p.pressure(1.0), p.pressure(gamma));
    let det_formula = (1.0 - 1.0 / gamma + p1 - pg) * (p1 - pg) * (p1 - pg);
    let det_scale = row_norm_product(&z);
    let verdict = if det_numeric.abs() > tol * det_scale {
        CounterexampleVerdict::Rigid
    } else {
        CounterexampleVerdict::Degenerate
    };
    Ok(CounterexampleStates {
        gamma,
        rule,
        z1,
        z2,
        zdiff: diff.pack(),
        det_numeric,
        det_formula,
        ratio: if det_formula == 0.0 {
            f64::NAN
        } else {
            det_numeric / det_formula
        },
        det_over_gamma_minus_one: det_numeric / (gamma - 1.0),
        det_scale,
        verdict,
    })
}

impl CounterexampleStates {
    /// `(z1 + z2) / 2` weighted homogeneous measure `nu~` on subsolution space.
    pub fn lifted_measure(&self) -> DiscreteYoungMeasure {
        DiscreteYoungMeasure::two_point(&self.z1.pack(), &self.z2.pack(), 0.5)
            .expect("valid two-point measure")
    }

    /// Phase-space preimage `(1/2) delta_(rho1, m1/sqrt(rho1)) + (1/2) delta_(rho2, m2/sqrt(rho2))`.
    pub fn phase_measure(&self) -> DiscreteYoungMeasure {
        let point = |s: &SubsolutionState| {
            let r = s.rho.sqrt();
            vec![s.rho, s.m[0] / r, s.m[1] / r, s.m[2] / r]
        };
        DiscreteYoungMeasure::two_point(&point(&self.z1), &point(&self.z2), 0.5)
            .expect("valid two-point measure")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub gamma: f64,
    pub abs_det: f64,
    pub n_grid: usize,
    pub states: CounterexampleStates,
}

/// Grid scan of `|det|` over the open interval `range`, refined by
/// golden-section search around the best grid point.
pub fn counterexample_search(p: &PressureLaw, range: (f64, f64), n_steps: usize) -> Result<SearchResult> {
    let (lo, hi) = range;
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::InvalidArgument(format!("empty gamma range [{lo}, {hi}]")));
    }
    if lo <= 0.0 || (lo <= 1.0 && 1.0 <= hi) {
        return Err(Error::InvalidArgument(format!(
            "gamma range [{lo}, {hi}] must exclude 0 and 1"
        )));
    }
    let n = n_steps.max(2);
    let abs_det = |g: f64| difference_determinant(|r| p.pressure(r), g, SecondStateRule::LiftConsistent).abs();
    // cell midpoints: the open interval is searched
    let grid: Vec<f64> = (0..n)
        .map(|i| lo + (hi - lo) * (i as f64 + 0.5) / n as f64)
        .collect();
    let (best, _) = grid
        .iter()
        .enumerate()
        .map(|(i, &g)| (i, abs_det(g)))
        .fold((0, f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc });
    let mut a = grid[best.saturating_sub(1)];
    let mut b = grid[(best + 1).min(n - 1)];
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    for _ in 0..80 {
        if abs_det(c) > abs_det(d) {
            b = d;
        } else {
            a = c;
        }
        c = b - phi * (b - a);
        d = a + phi * (b - a);
    }
    let candidates = [grid[best], (a + b) / 2.0];
    let gamma = candidates
        .into_iter()
        .fold(grid[best], |acc, g| if abs_det(g) > abs_det(acc) { g } else { acc });
    let states = counterexample_states(p, gamma)?;
    Ok(SearchResult {
        gamma,
        abs_det: states.det_numeric.abs(),
        n_grid: n,
        states,
    })
}

/// Initial density and momentum per spatial cell (row-major over the spatial
/// part of the cell grid).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialData {
    pub rho0: Vec<f64>,
    pub m0: Vec<[f64; 3]>,
}

impl InitialData {
    pub fn uniform(rho: f64, m: [f64; 3], n_cells: usize) -> Self {
        Self {
            rho0: vec![rho; n_cells],
            m0: vec![m; n_cells],
        }
    }

    /// Barycentric density and momentum of the first time layer.
    pub fn from_first_layer(nu: &ParametrizedMeasure) -> Result<Self> {
        check_dim("cell grid rank", 4, nu.shape().len())?;
        check_dim("subsolution measure dimension", 10, nu.dim())?;
        let n_space: usize = nu.shape()[1..].iter().product();
        let mut out = Self {
            rho0: Vec::with_capacity(n_space),
            m0: Vec::with_capacity(n_space),
        };
        for m in &nu.measures()[..n_space] {
            let b = m.barycenter();
            out.rho0.push(b[0]);
            out.m0.push([b[1], b[2], b[3]]);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeakFormReport {
    pub test_degree: usize,
    /// Number of (complex) test functions `(1 - t/T)^a exp(2 pi i k.x)` evaluated.
    pub n_test_functions: usize,
    pub max_residual: f64,
    pub max_continuity: f64,
    pub max_momentum: f64,
    pub worst_time_exponent: u32,
    pub worst_frequency: [i64; 3],
}

fn exp_integral(k: i64, a: f64, b: f64) -> num_complex_like::C {
    use num_complex_like::C;
    if k == 0 {
        return C::new(b - a, 0.0);
    }
    let w = 2.0 * std::f64::consts::PI * k as f64;
    // (e^{i w b} - e^{i w a}) / (i w)
    let (sb, cb) = (w * b).sin_cos();
    let (sa, ca) = (w * a).sin_cos();
    C::new((sb - sa) / w, -(cb - ca) / w)
}

mod num_complex_like {
    pub type C = rustfft::num_complex::Complex64;
}

/// Weak-form residual of the subsolution system for a measure that is
/// piecewise constant over the cells of `[0, T] x T^3`.
///
/// Test functions are `(1 - t/T)^a exp(2 pi i k.x)` for `a` in `{1, 2}` and
/// `|k|_1 <= test_degree`; real and imaginary parts give the cosine and sine
/// families. All integrals are exact per cell.
pub fn weak_form_residual(
    nu: &ParametrizedMeasure,
    initial: &InitialData,
    test_degree: usize,
) -> Result<WeakFormReport> {
    use num_complex_like::C;
    let shape = nu.shape();
    if shape.len() != 4 {
        return Err(Error::Unsupported(format!(
            "cell grid must be (nt, nx, ny, nz), got {shape:?}"
        )));
    }
    check_dim("subsolution measure dimension", 10, nu.dim())?;
    let (nt, ns) = (shape[0], [shape[1], shape[2], shape[3]]);
    let n_space = ns.iter().product::<usize>();
    check_dim("initial density cells", n_space, initial.rho0.len())?;
    check_dim("initial momentum cells", n_space, initial.m0.len())?;
    let horizon = nu.horizon();

    let bary: Vec<SubsolutionState> = nu
        .measures()
        .iter()
        .map(|m| SubsolutionState::unpack(&m.barycenter()))
        .collect::<Result<_>>()?;

    let deg = test_degree as i64;
    let mut freqs = Vec::new();
    for k0 in -deg..=deg {
        for k1 in -deg..=deg {
            for k2 in -deg..=deg {
                if k0.abs() + k1.abs() + k2.abs() <= deg {
                    freqs.push([k0, k1, k2]);
                }
            }
        }
    }
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut report = WeakFormReport {
        test_degree,
        n_test_functions: 0,
        max_residual: 0.0,
        max_continuity: 0.0,
        max_momentum: 0.0,
        worst_time_exponent: 1,
        worst_frequency: [0, 0, 0],
    };
    for a in [1u32, 2] {
        let tau = |t: f64| (1.0 - t / horizon).powi(a as i32);
        let (dtau, itau): (Vec<f64>, Vec<f64>) = (0..nt)
            .map(|it| {
                let (t0, t1) = (horizon * it as f64 / nt as f64, horizon * (it + 1) as f64 / nt as f64);
                let integral = horizon / f64::from(a + 1)
                    * ((1.0 - t0 / horizon).powi(a as i32 + 1) - (1.0 - t1 / horizon).powi(a as i32 + 1));
                (tau(t1) - tau(t0), integral)
            })
            .unzip();
        for k in &freqs {
            let axis: Vec<Vec<C>> = (0..3)
                .map(|i| {
                    (0..ns[i])
                        .map(|j| exp_integral(k[i], j as f64 / ns[i] as f64, (j + 1) as f64 / ns[i] as f64))
                        .collect()
                })
                .collect();
            let grad = [k[0], k[1], k[2]].map(|x| C::new(0.0, two_pi * x as f64));
            let mut cont = C::new(0.0, 0.0);
            let mut mom = [C::new(0.0, 0.0); 3];
            for sx in 0..n_space {
                let idx = [sx / (ns[1] * ns[2]), (sx / ns[2]) % ns[1], sx % ns[2]];
                let e = axis[0][idx[0]] * axis[1][idx[1]] * axis[2][idx[2]];
                cont += e * initial.rho0[sx];
                for j in 0..3 {
                    mom[j] += e * initial.m0[sx][j];
                }
                for it in 0..nt {
                    let s = &bary[it * n_space + sx];
                    let u = s.u_matrix();
                    let div_m: C = (0..3).map(|l| grad[l] * s.m[l]).sum();
                    cont += e * (dtau[it] * s.rho) + e * div_m * itau[it];
                    for j in 0..3 {
                        let flux: C = (0..3).map(|l| grad[l] * u[j][l]).sum::<C>() + grad[j] * s.q;
                        mom[j] += e * (dtau[it] * s.m[j]) + e * flux * itau[it];
                    }
                }
            }
            report.n_test_functions += 1;
            let c_res = cont.re.abs().max(cont.im.abs());
            let m_res = mom
                .iter()
                .map(|x| x.re.abs().max(x.im.abs()))
                .fold(0.0, f64::max);
            report.max_continuity = report.max_continuity.max(c_res);
            report.max_momentum = report.max_momentum.max(m_res);
            if c_res.max(m_res) > report.max_residual {
                report.max_residual = c_res.max(m_res);
                report.worst_time_exponent = a;
                report.worst_frequency = *k;
            }
        }
    }
    Ok(report)
}

/// Weak-form residual of the Euler equations for a phase-space measure
/// `(xi0, xi')`; the averaged fluxes are those of the lifted measure.
pub fn weak_form_residual_euler(
    nu: &ParametrizedMeasure,
    p: &PressureLaw,
    initial: &InitialData,
    test_degree: usize,
) -> Result<WeakFormReport> {
    let lifted = nu.map(|m| lift_measure(m, p))?;
    weak_form_residual(&lifted, initial, test_degree)
}

/// `g(z) = |d|^2 s (1 - s) - dist(z, [z1, z2])^2` with `d = z2 - z1` and
/// `s` the (unclamped) projection parameter of `z` onto the line through the pair.
///
/// `g` vanishes at both states and equals `|d|^2 / 4` at their midpoint, so the
/// Jensen gap of the equal-weight two-point measure is `-|d|^2 / 4`.
#[derive(Debug, Clone, PartialEq)]
pub struct SeparatingFunction {
    z1: Vec<f64>,
    d: Vec<f64>,
    d2: f64,
}

pub fn separating_function(z1: &SubsolutionState, z2: &SubsolutionState) -> Result<SeparatingFunction> {
    let diff = z2.sub(z1);
    if wave_cone_euler(&diff, DEFAULT_DET_TOL)?.member {
        return Err(Error::DifferenceInWaveCone);
    }
    SeparatingFunction::from_pair(&z1.pack(), &z2.pack())
}

impl SeparatingFunction {
    /// The same construction for an arbitrary pair, without the wave-cone check.
    pub fn from_pair(z1: &[f64], z2: &[f64]) -> Result<Self> {
        check_dim("z2", z1.len(), z2.len())?;
        let d = linalg::sub(z2, z1);
        let d2 = linalg::dot(&d, &d);
        if d2 == 0.0 {
            return Err(Error::InvalidArgument("z1 and z2 coincide".into()));
        }
        Ok(Self {
            z1: z1.to_vec(),
            d,
            d2,
        })
    }

    fn parameter(&self, z: &[f64]) -> f64 {
        linalg::dot(&linalg::sub(z, &self.z1), &self.d) / self.d2
    }
}

impl ScalarFunction for SeparatingFunction {
    fn dim(&self) -> usize {
        self.d.len()
    }

    fn value(&self, z: &[f64]) -> f64 {
        let s = self.parameter(z);
        let sc = s.clamp(0.0, 1.0);
        let dist2: f64 = z
            .iter()
            .zip(&self.z1)
            .zip(&self.d)
            .map(|((x, a), d)| (x - a - sc * d).powi(2))
            .sum();
        self.d2 * s * (1.0 - s) - dist2
    }

    fn gradient(&self, z: &[f64], grad: &mut [f64]) {
        let s = self.parameter(z);
        let sc = s.clamp(0.0, 1.0);
        for i in 0..z.len() {
            let foot = self.z1[i] + sc * self.d[i];
            grad[i] = (1.0 - 2.0 * s) * self.d[i] - 2.0 * (z[i] - foot);
        }
    }
}

/// Random subsolution state with standard normal components.
pub fn random_state(rng: &mut impl rand::Rng) -> SubsolutionState {
    let z: Vec<f64> = (0..10).map(|_| rng.sample(rand_distr::StandardNormal)).collect();
    SubsolutionState::unpack(&z).expect("length 10")
}

/// Sanity link between the explicit and generic Z-matrices.
pub fn generic_z_matrix(s: &SubsolutionState) -> DMatrix<f64> {
    operator::z_matrix(&build_euler_operator(), &s.pack())
        .expect("dimension 10")
        .entries
}
