//! Laminates on periodic grids, spectral constraint residuals, projection
//! onto `A`-free fields, and the segment-decomposition rigidity estimate.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, check_finite, Error, Result};
use crate::field::{derivative_frequency, PeriodicField};
use crate::linalg;
use crate::operator::{self, LinearOperator, DEFAULT_RANK_TOL};
use crate::young::{empirical_measure, measure_distance, DiscreteYoungMeasure};

/// Relative plane-wave residual accepted for a laminate direction.
pub const WAVE_DIRECTION_TOL: f64 = 1e-9;

/// Rank tolerance for symbol kernels.
pub const KERNEL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    #[default]
    Square,
    Sine,
}

/// `z(x) = z2 + h(n x.xi) (z1 - z2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaminateSpec {
    pub z1: Vec<f64>,
    pub z2: Vec<f64>,
    /// Volume fraction of `z1`.
    pub lambda: f64,
    pub xi: Vec<i64>,
    pub oscillations: usize,
    pub profile: Profile,
}

impl LaminateSpec {
    /// `lambda delta_z1 + (1 - lambda) delta_z2`
    pub fn target_measure(&self) -> Result<DiscreteYoungMeasure> {
        DiscreteYoungMeasure::two_point(&self.z1, &self.z2, self.lambda)
    }
}

/// Refuses `xi` unless `A(xi)(z1 - z2) = 0`; a difference outside the wave
/// cone is reported as a rigid pair.
pub fn check_wave_direction(op: &LinearOperator, diff: &[f64], xi: &[i64]) -> Result<()> {
    check_dim("frequency", op.n(), xi.len())?;
    if !operator::in_wave_cone(op, diff, DEFAULT_RANK_TOL)?.member {
        return Err(Error::NotWaveDirection { xi: xi.to_vec() });
    }
    let xf: Vec<f64> = xi.iter().map(|&x| x as f64).collect();
    let r = operator::plane_wave_residual(op, diff, &xf);
    if r > WAVE_DIRECTION_TOL {
        return Err(Error::InvalidArgument(format!(
            "xi = {xi:?} does not annihilate z1 - z2 (relative residual {r:.3e})"
        )));
    }
    Ok(())
}

fn validate_spec(op: &LinearOperator, spec: &LaminateSpec, dims: &[usize]) -> Result<Vec<f64>> {
    check_dim("z1", op.d(), spec.z1.len())?;
    check_dim("z2", op.d(), spec.z2.len())?;
    check_finite("z1", &spec.z1)?;
    check_finite("z2", &spec.z2)?;
    check_dim("grid rank", op.n(), dims.len())?;
    if !(0.0..=1.0).contains(&spec.lambda) {
        return Err(Error::InvalidArgument(format!(
            "lambda must lie in [0, 1], got {}",
            spec.lambda
        )));
    }
    if spec.oscillations == 0 {
        return Err(Error::InvalidArgument("oscillations must be positive".into()));
    }
    if spec.xi.iter().all(|&x| x == 0) {
        return Err(Error::InvalidArgument("xi must be nonzero".into()));
    }
    for (i, (&n, &x)) in dims.iter().zip(&spec.xi).enumerate() {
        if n < 2 {
            return Err(Error::InvalidArgument(format!("grid axis {i} has fewer than 2 nodes")));
        }
        let need = 8 * spec.oscillations * x.unsigned_abs() as usize;
        if x != 0 && n < need {
            return Err(Error::InvalidArgument(format!(
                "grid axis {i} has {n} nodes, needs at least {need} to resolve the oscillation"
            )));
        }
    }
    let diff = linalg::sub(&spec.z1, &spec.z2);
    if diff.iter().all(|&x| x == 0.0) {
        return Err(Error::InvalidArgument("z1 and z2 coincide".into()));
    }
    check_wave_direction(op, &diff, &spec.xi)?;
    Ok(diff)
}

/// Nodes per unit of `x.xi` for a square laminate: every axis with
/// `xi_i != 0` must have `n_i = c |xi_i|` for one common integer `c`, so the
/// sampled profile is a function of `x.xi` alone.
fn square_period(dims: &[usize], xi: &[i64]) -> Result<usize> {
    let mut c = None;
    for (&n, &x) in dims.iter().zip(xi) {
        if x == 0 {
            continue;
        }
        let a = x.unsigned_abs() as usize;
        if n % a != 0 || c.is_some_and(|c| c != n / a) {
            return Err(Error::InvalidArgument(format!(
                "square laminate needs grid sizes proportional to |xi| (dims {dims:?}, xi {xi:?})"
            )));
        }
        c = Some(n / a);
    }
    Ok(c.expect("xi is nonzero"))
}

/// Samples the laminate on the grid `dims` (nodes `x_i = j_i / n_i`).
///
/// The square profile is evaluated at node centers shifted by half a node
/// along `xi`, so the `z1` phase occupies `round(lambda c)` of every `c` nodes.
pub fn synthesize_laminate(op: &LinearOperator, spec: &LaminateSpec, dims: &[usize]) -> Result<PeriodicField> {
    let diff = validate_spec(op, spec, dims)?;
    let n = spec.oscillations as i64;
    let z2 = &spec.z2;
    match spec.profile {
        Profile::Square => {
            let c = square_period(dims, &spec.xi)? as i64;
            let threshold = 2.0 * spec.lambda * c as f64;
            PeriodicField::from_fn(dims.to_vec(), op.d(), |idx, out| {
                let m: i64 = idx
                    .iter()
                    .zip(&spec.xi)
                    .map(|(&j, &x)| x.signum() * j as i64)
                    .sum();
                let phase = (n * (2 * m + 1)).rem_euclid(2 * c);
                let h = if (phase as f64) < threshold { 1.0 } else { 0.0 };
                for ((o, a), d) in out.iter_mut().zip(z2).zip(&diff) {
                    *o = a + h * d;
                }
            })
        }
        Profile::Sine => {
            let amp = spec.lambda.min(1.0 - spec.lambda);
            PeriodicField::from_fn(dims.to_vec(), op.d(), |idx, out| {
                let s: f64 = idx
                    .iter()
                    .zip(&spec.xi)
                    .zip(dims)
                    .map(|((&j, &x), &nn)| ((x * j as i64).rem_euclid(nn as i64)) as f64 / nn as f64)
                    .sum();
                let h = spec.lambda + amp * (2.0 * PI * n as f64 * s).sin();
                for ((o, a), d) in out.iter_mut().zip(z2).zip(&diff) {
                    *o = a + h * d;
                }
            })
        }
    }
}

/// Empirical measure of a field's node values and its exact 1-Wasserstein
/// distance to the laminate's two-point target.
pub fn laminate_measure_distance(field: &PeriodicField, spec: &LaminateSpec) -> Result<(DiscreteYoungMeasure, f64)> {
    let scale = linalg::norm(&linalg::sub(&spec.z1, &spec.z2));
    let empirical = empirical_measure(field.nodes(), 1e-12 * scale.max(1.0))?;
    let dist = measure_distance(&empirical, &spec.target_measure()?)?;
    Ok((empirical, dist))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualNorms {
    pub l2: f64,
    pub negative_sobolev: f64,
}

fn check_field(op: &LinearOperator, field: &PeriodicField) -> Result<()> {
    check_dim("grid rank", op.n(), field.ndim())?;
    check_dim("field components", op.d(), field.d())?;
    Ok(())
}

fn node_major(spec: &crate::field::Spectrum) -> Vec<Complex64> {
    let (m, d) = (spec.n_nodes(), spec.d);
    let mut out = vec![Complex64::new(0.0, 0.0); m * d];
    for c in 0..d {
        for node in 0..m {
            out[node * d + c] = spec.coeffs[c * m + node];
        }
    }
    out
}

fn apply_real(a: &DMatrix<f64>, v: &[Complex64]) -> Vec<Complex64> {
    (0..a.nrows())
        .map(|r| (0..a.ncols()).map(|c| v[c] * a[(r, c)]).sum())
        .collect()
}

/// Spectral residual `rhat(k) = A(2 pi k) zhat(k)` summed in `l^2` and in the
/// `H^{-1}` weighting `|2 pi k|^{-2}`.
///
/// First derivatives use [`derivative_frequency`]: Nyquist components of
/// even-length axes are treated as zero.
pub fn constraint_residual(op: &LinearOperator, field: &PeriodicField) -> Result<ResidualNorms> {
    check_field(op, field)?;
    if field.dims().iter().any(|&n| n < 2) {
        return Err(Error::InvalidArgument("all grid sizes must be at least 2".into()));
    }
    let spec = field.spectrum();
    let modes = node_major(&spec);
    let d = op.d();
    let dims = field.dims();
    let (l2, hm1) = modes
        .par_chunks(d)
        .enumerate()
        .map(|(node, zhat)| {
            let w: Vec<f64> = derivative_frequency(dims, node)
                .into_iter()
                .map(|k| 2.0 * PI * k)
                .collect();
            let w2: f64 = w.iter().map(|x| x * x).sum();
            if w2 == 0.0 {
                return (0.0, 0.0);
            }
            let r: f64 = apply_real(&op.symbol_matrix(&w), zhat)
                .iter()
                .map(|x| x.norm_sqr())
                .sum();
            (r, r / w2)
        })
        .reduce(|| (0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
    Ok(ResidualNorms {
        l2: l2.sqrt(),
        negative_sobolev: hm1.sqrt(),
    })
}

/// Primitive integer direction of the derivative frequency, sign-normalized;
/// `None` when the derivative frequency vanishes.
fn direction_key(dims: &[usize], node: usize) -> Option<Vec<i64>> {
    let k: Vec<i64> = derivative_frequency(dims, node)
        .into_iter()
        .map(|x| x as i64)
        .collect();
    let g = k.iter().fold(0i64, |g, &x| gcd(g, x.abs()));
    if g == 0 {
        return None;
    }
    let sign = k.iter().find(|&&x| x != 0).map_or(1, |x| x.signum());
    Some(k.iter().map(|x| sign * x / g).collect())
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Orthogonal projection of every Fourier mode onto `ker A(2 pi k)`; the mean
/// (and any mode with vanishing derivative frequency) is kept.
pub fn project_afree(op: &LinearOperator, field: &PeriodicField) -> Result<PeriodicField> {
    check_field(op, field)?;
    let dims = field.dims();
    let m = field.n_nodes();
    let keys: Vec<Option<Vec<i64>>> = (0..m).map(|node| direction_key(dims, node)).collect();
    let distinct: Vec<Vec<i64>> = keys
        .iter()
        .flatten()
        .cloned()
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    let projectors: BTreeMap<Vec<i64>, DMatrix<f64>> = distinct
        .into_par_iter()
        .map(|k| {
            let w: Vec<f64> = k.iter().map(|&x| x as f64).collect();
            let p = linalg::null_projector(&op.symbol_matrix(&w), KERNEL_TOL);
            (k, p)
        })
        .collect();
    let mut spec = field.spectrum();
    let d = op.d();
    let mut modes = node_major(&spec);
    modes
        .par_chunks_mut(d)
        .zip(keys.par_iter())
        .for_each(|(zhat, key)| {
            if let Some(k) = key {
                let projected = apply_real(&projectors[k], zhat);
                zhat.copy_from_slice(&projected);
            }
        });
    for node in 0..m {
        spec.set_mode(node, &modes[node * d..(node + 1) * d]);
    }
    spec.to_field()
}

/// `lambda(x)` and `e(x) = z(x) - lambda z1 - (1 - lambda) z2`.
#[derive(Debug, Clone)]
pub struct SegmentDecomposition {
    pub lambda_field: PeriodicField,
    pub e_field: PeriodicField,
}

/// Nodewise projection onto the segment `[z2, z1]`, parametrized by the
/// weight of `z1` and clamped to `[0, 1]`.
pub fn segment_decompose(field: &PeriodicField, z1: &[f64], z2: &[f64]) -> Result<SegmentDecomposition> {
    check_dim("z1", field.d(), z1.len())?;
    check_dim("z2", field.d(), z2.len())?;
    let diff = linalg::sub(z1, z2);
    let d2 = linalg::dot(&diff, &diff);
    if d2 == 0.0 {
        return Err(Error::InvalidArgument("z1 and z2 coincide".into()));
    }
    let d = field.d();
    let mut lambda = Vec::with_capacity(field.n_nodes());
    let mut e = Vec::with_capacity(field.values().len());
    for z in field.nodes() {
        let s = (linalg::dot(&linalg::sub(z, z2), &diff) / d2).clamp(0.0, 1.0);
        lambda.push(s);
        for c in 0..d {
            e.push(z[c] - z2[c] - s * diff[c]);
        }
    }
    Ok(SegmentDecomposition {
        lambda_field: PeriodicField::new(field.dims().to_vec(), 1, lambda)?,
        e_field: PeriodicField::new(field.dims().to_vec(), d, e)?,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RigidityReport {
    /// Smallest singular value of the Z-matrix of `z2 - z1`.
    pub left_inverse_min_sv: f64,
    pub condition_number: f64,
    #[serde(skip)]
    pub lambda_field: Option<PeriodicField>,
    pub lambda_mean: f64,
    /// `|lambda - <lambda>|` on the grid.
    pub lambda_oscillation: f64,
    /// `|(lambda - <lambda>) - lambda_rec|` on the grid.
    pub reconstruction_error: f64,
    pub e_norm: f64,
    pub residual_norm: f64,
    pub grid_spacing: f64,
}

/// Recovers the oscillation of `lambda` from `div E` through the left inverse
/// of `Z(z2 - z1)`, per Fourier mode.
pub fn rigidity_reconstruct(
    op: &LinearOperator,
    z1: &[f64],
    z2: &[f64],
    field: &PeriodicField,
) -> Result<RigidityReport> {
    check_field(op, field)?;
    check_dim("z1", op.d(), z1.len())?;
    check_dim("z2", op.d(), z2.len())?;
    if field.dims().iter().any(|&n| n < 4) {
        return Err(Error::InvalidArgument("rigidity needs at least 4 nodes per axis".into()));
    }
    let diff = linalg::sub(z2, z1);
    if operator::in_wave_cone(op, &diff, DEFAULT_RANK_TOL)?.member {
        return Err(Error::DifferenceInWaveCone);
    }
    let zt = operator::z_matrix(op, &diff)?.entries;
    let sv = linalg::singular_values(&zt);
    let smax = sv.iter().copied().fold(0.0, f64::max);
    let smin = sv.iter().copied().fold(f64::INFINITY, f64::min);
    let ztt = zt.transpose();
    let left = (&ztt * &zt)
        .try_inverse()
        .ok_or(Error::DifferenceInWaveCone)?
        * ztt;

    let dec = segment_decompose(field, z1, z2)?;
    let dims = field.dims();
    let lam_hat = dec.lambda_field.spectrum();
    let e_modes = node_major(&dec.e_field.spectrum());
    let d = op.d();
    let err2: f64 = (0..field.n_nodes())
        .into_par_iter()
        .map(|node| {
            if node == 0 {
                return 0.0;
            }
            let w: Vec<f64> = derivative_frequency(dims, node)
                .into_iter()
                .map(|k| 2.0 * PI * k)
                .collect();
            let w2: f64 = w.iter().map(|x| x * x).sum();
            let lam = lam_hat.get(node, 0);
            if w2 == 0.0 {
                return lam.norm_sqr();
            }
            // (div E)^(k) = i A(w) e^(k)
            let i = Complex64::new(0.0, 1.0);
            let div_e: Vec<Complex64> = apply_real(&op.symbol_matrix(&w), &e_modes[node * d..(node + 1) * d])
                .into_iter()
                .map(|x| i * x)
                .collect();
            let v = apply_real(&left, &div_e);
            let rec: Complex64 = v.iter().zip(&w).map(|(vi, wi)| vi * (-i * wi)).sum::<Complex64>() / w2;
            (lam - rec).norm_sqr()
        })
        .sum();
    let lambda_mean = dec.lambda_field.mean()[0];
    let lambda_oscillation = dec
        .lambda_field
        .values()
        .iter()
        .map(|x| (x - lambda_mean).powi(2))
        .sum::<f64>()
        / field.n_nodes() as f64;
    Ok(RigidityReport {
        left_inverse_min_sv: smin,
        condition_number: smax / smin,
        lambda_mean,
        lambda_oscillation: lambda_oscillation.sqrt(),
        reconstruction_error: err2.sqrt(),
        e_norm: dec.e_field.l2_norm(),
        residual_norm: constraint_residual(op, field)?.l2,
        grid_spacing: field.spacing(),
        lambda_field: Some(dec.lambda_field),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feasibility {
    OscillationConstructible,
    Rigid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub verdict: Feasibility,
    /// Integer wave direction for `z1 - z2`, when one was found.
    pub direction: Option<Vec<i64>>,
    pub laminate: Option<LaminateSpec>,
}

/// Whether `z1` and `z2` can be laminated, with a ready square-laminate spec
/// (`lambda = 1/2`, one oscillation) when an integer direction exists.
pub fn oscillation_feasibility(
    op: &LinearOperator,
    z1: &[f64],
    z2: &[f64],
    rel_tol: f64,
) -> Result<FeasibilityReport> {
    check_dim("z1", op.d(), z1.len())?;
    check_dim("z2", op.d(), z2.len())?;
    let diff = linalg::sub(z2, z1);
    if diff.iter().all(|&x| x == 0.0) {
        return Err(Error::InvalidArgument("z1 and z2 coincide".into()));
    }
    if !operator::in_wave_cone(op, &diff, rel_tol)?.member {
        return Ok(FeasibilityReport {
            verdict: Feasibility::Rigid,
            direction: None,
            laminate: None,
        });
    }
    let direction = operator::rationalize_direction(op, &diff, WAVE_DIRECTION_TOL);
    let laminate = direction.clone().map(|xi| LaminateSpec {
        z1: z1.to_vec(),
        z2: z2.to_vec(),
        lambda: 0.5,
        xi,
        oscillations: 1,
        profile: Profile::Square,
    });
    Ok(FeasibilityReport {
        verdict: Feasibility::OscillationConstructible,
        direction,
        laminate,
    })
}

/// Random `A`-free-friendly test data: a state projected onto `ker A(xi)`.
pub fn kernel_state(op: &LinearOperator, xi: &[i64], seed_state: &[f64]) -> Result<Vec<f64>> {
    check_dim("frequency", op.n(), xi.len())?;
    check_dim("state", op.d(), seed_state.len())?;
    let w: Vec<f64> = xi.iter().map(|&x| x as f64).collect();
    let p = linalg::null_projector(&op.symbol_matrix(&w), KERNEL_TOL);
    Ok((p * DVector::from_column_slice(seed_state)).iter().copied().collect())
}

/// `z(x) = lambda(x) z1 + (1 - lambda(x)) z2` with a smooth random
/// `lambda` in `[0.1, 0.9]`, built from `modes` random low Fourier modes per axis.
pub fn smooth_segment_field(
    dims: &[usize],
    z1: &[f64],
    z2: &[f64],
    modes: usize,
    rng: &mut impl rand::Rng,
) -> Result<PeriodicField> {
    check_dim("z2", z1.len(), z2.len())?;
    let terms: Vec<(Vec<f64>, f64, f64)> = (0..modes.max(1))
        .map(|_| {
            let k: Vec<f64> = dims
                .iter()
                .map(|&n| rng.random_range(-2i64..=2).clamp(-(n as i64 / 4), n as i64 / 4) as f64)
                .collect();
            (k, rng.random_range(-1.0..1.0), rng.random_range(0.0..2.0 * PI))
        })
        .collect();
    let raw = PeriodicField::from_fn(dims.to_vec(), 1, |idx, out| {
        out[0] = terms
            .iter()
            .map(|(k, a, phi)| {
                let s: f64 = idx.iter().zip(k).zip(dims).map(|((&j, &kk), &n)| kk * j as f64 / n as f64).sum();
                a * (2.0 * PI * s + phi).cos()
            })
            .sum();
    })?;
    let mean = raw.mean()[0];
    let spread = raw.values().iter().fold(0.0f64, |m, x| m.max((x - mean).abs()));
    let scale = if spread > 0.0 { 0.4 / spread } else { 0.0 };
    PeriodicField::from_fn(dims.to_vec(), z1.len(), |idx, out| {
        let lam = 0.5 + scale * (raw.values()[crate::field::ravel(dims, idx)] - mean);
        for ((o, a), b) in out.iter_mut().zip(z1).zip(z2) {
            *o = lam * a + (1.0 - lam) * b;
        }
    })
}
