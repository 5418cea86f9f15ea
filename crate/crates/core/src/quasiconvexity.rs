//! Probing `A`-quasiconvexity: minimize the average of `g(z + w)` over
//! zero-mean `A`-free trigonometric test fields `w`, plus laminate-type
//! directional checks and the generability conditions report.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, check_finite, Error, Result};
use crate::field::{ravel, PeriodicField, Spectrum};
use crate::functions::{LibraryEntry, ScalarFunction};
use crate::linalg;
use crate::operator::{self, LinearOperator, DEFAULT_RANK_TOL};
use crate::oscillation::{constraint_residual, KERNEL_TOL};
use crate::young::{DiscreteYoungMeasure, ParametrizedMeasure};

/// Kernel vectors of the symbol at one frequency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisMode {
    pub k: Vec<i64>,
    /// Orthonormal real basis of `ker A(2 pi k)`; it spans the complex kernel
    /// as well, and the same vectors serve `-k` (conjugate symmetry).
    pub vectors: Vec<Vec<f64>>,
}

/// Test-field space: one representative `k` of each pair `{k, -k}` with
/// `0 < |k|_inf <= cutoff`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AFreeBasis {
    pub cutoff: usize,
    pub modes: Vec<BasisMode>,
}

impl AFreeBasis {
    /// Number of real coefficients (a cosine and a sine one per vector).
    pub fn n_coefficients(&self) -> usize {
        2 * self.modes.iter().map(|m| m.vectors.len()).sum::<usize>()
    }
}

fn half_space_representative(k: &[i64]) -> bool {
    k.iter().find(|&&x| x != 0).is_some_and(|&x| x > 0)
}

pub fn afree_basis(op: &LinearOperator, cutoff: usize) -> Result<AFreeBasis> {
    if cutoff == 0 {
        return Err(Error::InvalidArgument("cutoff must be at least 1".into()));
    }
    let n = op.n();
    let side = 2 * cutoff + 1;
    let k_max = cutoff as i64;
    let mut modes = Vec::new();
    for code in 0..side.pow(n as u32) {
        let mut c = code;
        let k: Vec<i64> = (0..n)
            .map(|_| {
                let v = (c % side) as i64 - k_max;
                c /= side;
                v
            })
            .rev()
            .collect();
        if !half_space_representative(&k) {
            continue;
        }
        let w: Vec<f64> = k.iter().map(|&x| 2.0 * PI * x as f64).collect();
        let vectors = linalg::null_space(&op.symbol_matrix(&w), KERNEL_TOL);
        if !vectors.is_empty() {
            modes.push(BasisMode { k, vectors });
        }
    }
    Ok(AFreeBasis { cutoff, modes })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub cutoff: usize,
    pub dims: Vec<usize>,
    pub restarts: usize,
    pub max_iters: usize,
    /// Radius of the Euclidean ball of admissible coefficient vectors.
    pub amplitude: f64,
    /// Armijo sufficient-decrease constant.
    pub armijo: f64,
    pub seed: u64,
    pub tol: f64,
}

impl ProbeConfig {
    pub fn new(n: usize) -> Self {
        Self {
            cutoff: 3,
            dims: vec![16; n],
            restarts: 16,
            max_iters: 200,
            amplitude: 1.0,
            armijo: 1e-4,
            seed: 0,
            tol: 1e-8,
        }
    }
}

/// `J(theta) = mean_x g(z + w_theta(x))` on a fixed grid.
pub struct ProbeObjective<'a> {
    g: &'a dyn ScalarFunction,
    z: Vec<f64>,
    basis: AFreeBasis,
    dims: Vec<usize>,
    /// Flat node index of `+k` and `-k` for each mode.
    slots: Vec<(usize, usize)>,
}

impl<'a> ProbeObjective<'a> {
    pub fn new(g: &'a dyn ScalarFunction, z: &[f64], op: &LinearOperator, cutoff: usize, dims: &[usize]) -> Result<Self> {
        check_dim("state", op.d(), z.len())?;
        check_dim("function dimension", op.d(), g.dim())?;
        check_dim("probe grid rank", op.n(), dims.len())?;
        check_finite("state", z)?;
        if let Some(&n) = dims.iter().find(|&&n| n < 4 * cutoff) {
            return Err(Error::InvalidArgument(format!(
                "probe grid size {n} does not resolve cutoff {cutoff} (needs {} per axis)",
                4 * cutoff
            )));
        }
        let basis = afree_basis(op, cutoff)?;
        let slot = |k: &[i64], sign: i64| {
            let idx: Vec<usize> = k
                .iter()
                .zip(dims)
                .map(|(&x, &n)| (sign * x).rem_euclid(n as i64) as usize)
                .collect();
            ravel(dims, &idx)
        };
        let slots = basis.modes.iter().map(|m| (slot(&m.k, 1), slot(&m.k, -1))).collect();
        Ok(Self {
            g,
            z: z.to_vec(),
            basis,
            dims: dims.to_vec(),
            slots,
        })
    }

    pub fn basis(&self) -> &AFreeBasis {
        &self.basis
    }

    pub fn n_coefficients(&self) -> usize {
        self.basis.n_coefficients()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    /// The test field `w = sum (a cos(2 pi k.x) + b sin(2 pi k.x)) v`.
    /// Coefficients are laid out as all cosine ones, then all sine ones.
    pub fn field(&self, theta: &[f64]) -> PeriodicField {
        let d = self.z.len();
        let m: usize = self.dims.iter().product();
        let half = theta.len() / 2;
        let mut spec = Spectrum {
            dims: self.dims.clone(),
            d,
            coeffs: vec![Complex64::new(0.0, 0.0); m * d],
        };
        let mut pos = 0;
        for (mode, &(plus, minus)) in self.basis.modes.iter().zip(&self.slots) {
            for v in &mode.vectors {
                let c = Complex64::new(theta[pos], -theta[half + pos]) * 0.5;
                for (comp, &vc) in v.iter().enumerate() {
                    spec.coeffs[comp * m + plus] += c * vc;
                    spec.coeffs[comp * m + minus] += c.conj() * vc;
                }
                pos += 1;
            }
        }
        spec.to_field().expect("finite coefficients")
    }

    /// Inverse of [`field`](Self::field) on the span of the basis.
    pub fn coefficients_of(&self, w: &PeriodicField) -> Result<Vec<f64>> {
        check_dim("test field components", self.z.len(), w.d())?;
        if w.dims() != self.dims.as_slice() {
            return Err(Error::InvalidArgument(format!(
                "test field grid {:?} differs from probe grid {:?}",
                w.dims(),
                self.dims
            )));
        }
        let spec = w.spectrum();
        let half = self.n_coefficients() / 2;
        let mut theta = vec![0.0; 2 * half];
        let mut pos = 0;
        for (mode, &(plus, _)) in self.basis.modes.iter().zip(&self.slots) {
            for v in &mode.vectors {
                let inner: Complex64 = v.iter().enumerate().map(|(c, &vc)| spec.get(plus, c) * vc).sum();
                theta[pos] = 2.0 * inner.re;
                theta[half + pos] = -2.0 * inner.im;
                pos += 1;
            }
        }
        Ok(theta)
    }

    fn shifted_values(&self, w: &PeriodicField) -> Vec<f64> {
        let d = self.z.len();
        let mut v = w.values().to_vec();
        v.chunks_mut(d).for_each(|c| c.iter_mut().zip(&self.z).for_each(|(x, z)| *x += z));
        v
    }

    pub fn value(&self, theta: &[f64]) -> f64 {
        let y = self.shifted_values(&self.field(theta));
        let vals: Vec<f64> = y.par_chunks(self.z.len()).map(|p| self.g.value(p)).collect();
        vals.iter().sum::<f64>() / vals.len() as f64
    }

    /// `(J, dJ/dtheta)`.
    pub fn value_and_gradient(&self, theta: &[f64]) -> (f64, Vec<f64>) {
        let d = self.z.len();
        let w = self.field(theta);
        let y = self.shifted_values(&w);
        let evals: Vec<(f64, Vec<f64>)> = y
            .par_chunks(d)
            .map(|p| {
                let mut grad = vec![0.0; d];
                self.g.gradient(p, &mut grad);
                (self.g.value(p), grad)
            })
            .collect();
        let m = evals.len();
        let value = evals.iter().map(|e| e.0).sum::<f64>() / m as f64;
        let gfield = PeriodicField::new(
            self.dims.clone(),
            d,
            evals.into_iter().flat_map(|e| e.1).collect(),
        );
        let Ok(gfield) = gfield else {
            return (f64::NAN, vec![f64::NAN; theta.len()]);
        };
        let ghat = gfield.spectrum();
        let half = theta.len() / 2;
        let mut grad = vec![0.0; theta.len()];
        let mut pos = 0;
        for (mode, &(plus, _)) in self.basis.modes.iter().zip(&self.slots) {
            for v in &mode.vectors {
                let inner: Complex64 = v.iter().enumerate().map(|(c, &vc)| ghat.get(plus, c) * vc).sum();
                // mean(G cos) = Re Ghat(k), mean(G sin) = -Im Ghat(k)
                grad[pos] = inner.re;
                grad[half + pos] = -inner.im;
                pos += 1;
            }
        }
        (value, grad)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeResult {
    pub base_value: f64,
    pub best_value: f64,
    /// `best_value - base_value`, never positive.
    pub gap: f64,
    #[serde(skip)]
    pub witness: Option<PeriodicField>,
    pub witness_coefficient_norm: f64,
    pub witness_residual: f64,
    pub restarts_used: usize,
    pub restarts_abandoned: usize,
    /// Index of the start that produced the best value (0 is the zero field,
    /// `restarts + 1` the warm start).
    pub best_start: usize,
    pub iterations: usize,
    pub converged: bool,
    /// `gap < -tol`: the function is certified not `A`-quasiconvex at `z`
    /// (up to discretization). Otherwise the result is evidence only.
    pub certified_violation: bool,
    pub n_coefficients: usize,
}

struct RunOutcome {
    theta: Vec<f64>,
    value: f64,
    iterations: usize,
    converged: bool,
}

fn project_ball(theta: &mut [f64], radius: f64) {
    let n = linalg::norm(theta);
    if n > radius {
        theta.iter_mut().for_each(|x| *x *= radius / n);
    }
}

/// Projected gradient descent with Armijo backtracking inside the
/// coefficient ball. `None` if a non-finite value is met.
fn descend(obj: &ProbeObjective<'_>, mut theta: Vec<f64>, cfg: &ProbeConfig) -> Option<RunOutcome> {
    project_ball(&mut theta, cfg.amplitude);
    let (mut value, mut grad) = obj.value_and_gradient(&theta);
    if !value.is_finite() || grad.iter().any(|x| !x.is_finite()) {
        return None;
    }
    let mut step = 1.0;
    for it in 0..cfg.max_iters {
        let mut accepted = None;
        let mut s = step;
        while s > 1e-14 {
            let mut trial: Vec<f64> = theta.iter().zip(&grad).map(|(t, g)| t - s * g).collect();
            project_ball(&mut trial, cfg.amplitude);
            let decrease: f64 = grad.iter().zip(theta.iter().zip(&trial)).map(|(g, (a, b))| g * (a - b)).sum();
            if decrease <= 0.0 {
                break;
            }
            let v = obj.value(&trial);
            if !v.is_finite() {
                return None;
            }
            if v <= value - cfg.armijo * decrease {
                accepted = Some((trial, v, s));
                break;
            }
            s *= 0.5;
        }
        let Some((trial, v, s)) = accepted else {
            return Some(RunOutcome { theta, value, iterations: it, converged: true });
        };
        let moved = linalg::norm(&linalg::sub(&trial, &theta));
        let gain = value - v;
        theta = trial;
        value = v;
        step = (2.0 * s).min(1e6);
        if moved <= cfg.tol * (1.0 + linalg::norm(&theta)) || gain <= cfg.tol * 1e-3 * (1.0 + value.abs()) {
            return Some(RunOutcome { theta, value, iterations: it + 1, converged: true });
        }
        let (v2, g2) = obj.value_and_gradient(&theta);
        if !v2.is_finite() || g2.iter().any(|x| !x.is_finite()) {
            return None;
        }
        value = v2;
        grad = g2;
    }
    Some(RunOutcome { theta, value, iterations: cfg.max_iters, converged: false })
}

/// Minimizes `J` from the zero field, `restarts` random starts (restart `i`
/// seeded by `seed + i`), and an optional warm-start field.
pub fn probe_quasiconvexity(
    g: &dyn ScalarFunction,
    z: &[f64],
    op: &LinearOperator,
    cfg: &ProbeConfig,
    warm_start: Option<&PeriodicField>,
) -> Result<ProbeResult> {
    if !(cfg.amplitude > 0.0 && cfg.amplitude.is_finite()) {
        return Err(Error::InvalidArgument("amplitude must be positive".into()));
    }
    let obj = ProbeObjective::new(g, z, op, cfg.cutoff, &cfg.dims)?;
    let base_value = g.value(z);
    if !base_value.is_finite() {
        return Err(Error::NonFinite("g at the base point"));
    }
    let nc = obj.n_coefficients();
    let mut starts: Vec<Vec<f64>> = vec![vec![0.0; nc]];
    for i in 0..cfg.restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(i as u64));
        let dir: Vec<f64> = (0..nc).map(|_| rng.sample(StandardNormal)).collect();
        let n = linalg::norm(&dir);
        let r: f64 = cfg.amplitude * rng.random::<f64>().sqrt();
        starts.push(if n > 0.0 { dir.iter().map(|x| x * r / n).collect() } else { dir });
    }
    if let Some(w) = warm_start {
        starts.push(obj.coefficients_of(w)?);
    }
    let outcomes: Vec<Option<RunOutcome>> = starts
        .into_par_iter()
        .map(|theta| if nc == 0 { None } else { descend(&obj, theta, cfg) })
        .collect();
    let abandoned = if nc == 0 { 0 } else { outcomes.iter().filter(|o| o.is_none()).count() };
    let mut best: Option<(usize, RunOutcome)> = None;
    for (i, o) in outcomes.into_iter().enumerate() {
        if let Some(o) = o {
            if best.as_ref().is_none_or(|(_, b)| o.value < b.value) {
                best = Some((i, o));
            }
        }
    }
    let (best_start, theta, best_value, iterations, converged) = match best {
        Some((i, o)) if o.value < base_value => (i, o.theta, o.value, o.iterations, o.converged),
        Some((_, o)) => (0, vec![0.0; nc], base_value, o.iterations, o.converged),
        None => (0, vec![0.0; nc], base_value, 0, nc == 0),
    };
    let witness = obj.field(&theta);
    let gap = best_value - base_value;
    Ok(ProbeResult {
        base_value,
        best_value,
        gap,
        witness_coefficient_norm: linalg::norm(&theta),
        witness_residual: constraint_residual(op, &witness)?.l2,
        witness: Some(witness),
        restarts_used: cfg.restarts,
        restarts_abandoned: abandoned,
        best_start,
        iterations,
        converged,
        certified_violation: gap < -cfg.tol,
        n_coefficients: nc,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DirectionalCheck {
    pub min_slack: f64,
    pub worst_lambda: f64,
    pub worst_t: f64,
}

/// `min over (lambda, t)` of
/// `lambda g(z + (1 - lambda) t zbar) + (1 - lambda) g(z - lambda t zbar) - g(z)`.
pub fn lambda_convexity_check(
    g: &dyn ScalarFunction,
    z: &[f64],
    op: &LinearOperator,
    zbar: &[f64],
    t_grid: &[f64],
    lambda_grid: &[f64],
) -> Result<DirectionalCheck> {
    check_dim("state", op.d(), z.len())?;
    if !operator::in_wave_cone(op, zbar, DEFAULT_RANK_TOL)?.member {
        return Err(Error::InvalidArgument("zbar is not in the wave cone".into()));
    }
    let g0 = g.value(z);
    let mut out = DirectionalCheck {
        min_slack: f64::INFINITY,
        worst_lambda: f64::NAN,
        worst_t: f64::NAN,
    };
    let shifted = |s: f64| -> Vec<f64> { z.iter().zip(zbar).map(|(a, b)| a + s * b).collect() };
    for &lam in lambda_grid {
        for &t in t_grid {
            let slack = lam * g.value(&shifted((1.0 - lam) * t)) + (1.0 - lam) * g.value(&shifted(-lam * t)) - g0;
            if slack < out.min_slack {
                out = DirectionalCheck {
                    min_slack: slack,
                    worst_lambda: lam,
                    worst_t: t,
                };
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JensenStatus {
    /// Jensen gap is nonnegative.
    Holds,
    /// Negative gap, and the probe found no violation of quasiconvexity for
    /// this function: condition (iii) fails if the function is quasiconvex.
    ViolatedPendingQuasiconvexity,
    /// Negative gap, but the function is certified not quasiconvex, so the
    /// gap carries no information about the measure.
    NotApplicable,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JensenEntry {
    pub name: String,
    pub growth_p: f64,
    pub jensen_gap: f64,
    pub status: JensenStatus,
    pub probe: Option<ProbeResult>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConditionsReport {
    pub barycenter: Vec<f64>,
    pub barycenter_afree: bool,
    pub barycenter_justification: String,
    pub p: f64,
    pub p_moment: f64,
    pub jensen: Vec<JensenEntry>,
    /// Some library function has a negative Jensen gap.
    pub condition_iii_flagged: bool,
    pub caveat: String,
}

pub const QUASICONVEXITY_CAVEAT: &str = "a negative Jensen gap rules out generation by A-free sequences only \
if the function is A-quasiconvex; the probe can certify that it is not, but can only give evidence that it is";

/// Generability conditions for a homogeneous measure against a function library.
pub fn check_fonseca_muller(
    nu: &DiscreteYoungMeasure,
    op: &LinearOperator,
    p: f64,
    library: &[LibraryEntry],
    probe: &ProbeConfig,
) -> Result<ConditionsReport> {
    check_dim("measure dimension", op.d(), nu.dim())?;
    let barycenter = nu.barycenter();
    let mut jensen = Vec::with_capacity(library.len());
    for entry in library {
        let f = entry.function.as_ref();
        let gap = nu.jensen_gap(|w| f.value(w))?;
        let (status, probe_result) = if gap >= -probe.tol {
            (JensenStatus::Holds, None)
        } else {
            let r = probe_quasiconvexity(f, &barycenter, op, probe, None)?;
            let status = if r.certified_violation {
                JensenStatus::NotApplicable
            } else {
                JensenStatus::ViolatedPendingQuasiconvexity
            };
            (status, Some(r))
        };
        jensen.push(JensenEntry {
            name: entry.name.clone(),
            growth_p: entry.growth_p,
            jensen_gap: gap,
            status,
            probe: probe_result,
        });
    }
    Ok(ConditionsReport {
        barycenter,
        barycenter_afree: true,
        barycenter_justification: "homogeneous measure: the barycenter is constant, hence A-free".into(),
        p,
        p_moment: nu.p_moment(p)?,
        condition_iii_flagged: jensen.iter().any(|e| e.status != JensenStatus::Holds),
        jensen,
        caveat: QUASICONVEXITY_CAVEAT.into(),
    })
}

/// As [`check_fonseca_muller`], for a measure given on a cell grid; only
/// homogeneous measures are supported.
pub fn check_fonseca_muller_parametrized(
    nu: &ParametrizedMeasure,
    op: &LinearOperator,
    p: f64,
    library: &[LibraryEntry],
    probe: &ProbeConfig,
) -> Result<ConditionsReport> {
    if !nu.is_homogeneous() {
        return Err(Error::Unsupported(
            "generability check for non-homogeneous measures".into(),
        ));
    }
    check_fonseca_muller(&nu.measures()[0], op, p, library, probe)
}
