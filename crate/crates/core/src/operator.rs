//! Constant-coefficient first-order operators `z -> sum_i A_i dz/dx_i`,
//! their symbols, Z-matrices and wave cones.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use num_rational::BigRational;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, check_finite, Error, Result};
use crate::linalg;

/// Default relative tolerance for singular-value thresholding.
pub const DEFAULT_RANK_TOL: f64 = 1e-8;

/// `A z = sum_i A_i dz/dx_i` with `N` coefficient matrices of shape `l x d`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearOperator {
    n: usize,
    d: usize,
    l: usize,
    coeffs: Vec<DMatrix<f64>>,
}

/// On-disk operator description. `coeffs[i]` is the row-major `l x d` matrix `A_i`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OperatorFile {
    #[serde(rename = "N")]
    pub n: usize,
    pub d: usize,
    pub l: usize,
    pub coeffs: Vec<Vec<Vec<f64>>>,
}

impl LinearOperator {
    pub fn new(coeffs: Vec<DMatrix<f64>>) -> Result<Self> {
        let Some(first) = coeffs.first() else {
            return Err(Error::InvalidOperator("no coefficient matrices".into()));
        };
        let (l, d) = first.shape();
        if l == 0 || d == 0 {
            return Err(Error::InvalidOperator("empty coefficient matrix".into()));
        }
        for (i, a) in coeffs.iter().enumerate() {
            if a.shape() != (l, d) {
                return Err(Error::InvalidOperator(format!(
                    "coefficient {i} has shape {:?}, expected {:?}",
                    a.shape(),
                    (l, d)
                )));
            }
            check_finite("operator coefficients", a.as_slice())?;
        }
        if coeffs.iter().all(|a| a.iter().all(|&x| x == 0.0)) {
            return Err(Error::InvalidOperator(
                "all coefficient matrices are zero".into(),
            ));
        }
        Ok(Self {
            n: coeffs.len(),
            d,
            l,
            coeffs,
        })
    }

    /// Builds an operator from nested row-major arrays, `coeffs[i][row][col]`.
    pub fn from_rows(coeffs: &[Vec<Vec<f64>>]) -> Result<Self> {
        let mats = coeffs
            .iter()
            .enumerate()
            .map(|(i, rows)| {
                let l = rows.len();
                let d = rows.first().map_or(0, Vec::len);
                if rows.iter().any(|r| r.len() != d) {
                    return Err(Error::InvalidOperator(format!(
                        "coefficient {i} has ragged rows"
                    )));
                }
                Ok(DMatrix::from_fn(l, d, |r, c| rows[r][c]))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(mats)
    }

    pub fn from_file_spec(spec: &OperatorFile) -> Result<Self> {
        let op = Self::from_rows(&spec.coeffs)?;
        check_dim("operator N", spec.n, op.n)?;
        check_dim("operator d", spec.d, op.d)?;
        check_dim("operator l", spec.l, op.l)?;
        Ok(op)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let spec: OperatorFile = serde_json::from_str(&text)?;
        Self::from_file_spec(&spec)
    }

    pub fn to_file_spec(&self) -> OperatorFile {
        OperatorFile {
            n: self.n,
            d: self.d,
            l: self.l,
            coeffs: self.coeffs.iter().map(matrix_rows).collect(),
        }
    }

    /// Divergence on `R^k`: `l = 1`, `d = N = k`, `A_i = e_i^T`.
    pub fn divergence(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidArgument("divergence needs k >= 1".into()));
        }
        Self::new(
            (0..k)
                .map(|i| DMatrix::from_fn(1, k, |_, c| if c == i { 1.0 } else { 0.0 }))
                .collect(),
        )
    }

    /// Number of independent variables.
    pub fn n(&self) -> usize {
        self.n
    }

    /// State dimension.
    pub fn d(&self) -> usize {
        self.d
    }

    /// Number of equations.
    pub fn l(&self) -> usize {
        self.l
    }

    pub fn coeffs(&self) -> &[DMatrix<f64>] {
        &self.coeffs
    }

    /// `sum_i |A_i|_F`, the scale used for relative residuals.
    pub fn coefficient_scale(&self) -> f64 {
        self.coeffs.iter().map(|a| a.norm()).sum()
    }

    /// Symbol `sum_i w_i A_i` without allocation of a wrapper.
    pub fn symbol_matrix(&self, w: &[f64]) -> DMatrix<f64> {
        let mut s = DMatrix::<f64>::zeros(self.l, self.d);
        for (wi, a) in w.iter().zip(&self.coeffs) {
            if *wi != 0.0 {
                s += a * *wi;
            }
        }
        s
    }

    /// Exact rational symbol at a rational frequency.
    pub fn symbol_exact(&self, w: &[BigRational]) -> Result<Vec<Vec<BigRational>>> {
        check_dim("frequency", self.n, w.len())?;
        let mut rows = vec![vec![BigRational::from_integer(0.into()); self.d]; self.l];
        for (wi, a) in w.iter().zip(&self.coeffs) {
            if !linalg::is_nonzero_rational(wi) {
                continue;
            }
            for (r, row) in rows.iter_mut().enumerate() {
                for (c, entry) in row.iter_mut().enumerate() {
                    let x = a[(r, c)];
                    if x != 0.0 {
                        *entry += wi * linalg::rational_from_f64(x)?;
                    }
                }
            }
        }
        Ok(rows)
    }
}

pub(crate) fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|r| m.row(r).iter().copied().collect())
        .collect()
}

/// `sum_i w_i A_i` together with the frequency it was evaluated at.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolMatrix {
    pub entries: DMatrix<f64>,
    pub frequency: Vec<f64>,
}

pub fn symbol(op: &LinearOperator, w: &[f64]) -> Result<SymbolMatrix> {
    check_dim("frequency", op.n, w.len())?;
    Ok(SymbolMatrix {
        entries: op.symbol_matrix(w),
        frequency: w.to_vec(),
    })
}

pub fn numeric_rank(m: &DMatrix<f64>, rel_tol: f64) -> Result<usize> {
    linalg::numeric_rank(m, rel_tol)
}

/// Two frequencies at which the symbol rank differs.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RankWitness {
    pub frequency_a: Vec<f64>,
    pub rank_a: usize,
    pub frequency_b: Vec<f64>,
    pub rank_b: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ConstantRankReport {
    pub n_random: usize,
    pub n_coordinate: usize,
    pub rel_tol: f64,
    pub seed: u64,
    /// rank -> number of sampled frequencies with that rank
    pub observed_ranks: BTreeMap<usize, usize>,
    pub constant: bool,
    pub rank: Option<usize>,
    pub witness: Option<RankWitness>,
    /// Sampling cannot prove the property; a passing report is evidence only.
    pub evidence_only: bool,
}

pub(crate) fn random_unit(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let nv = linalg::norm(&v);
        if nv > 1e-12 {
            return v.into_iter().map(|x| x / nv).collect();
        }
    }
}

fn coordinate_directions(n: usize) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(2 * n);
    for i in 0..n {
        for s in [1.0, -1.0] {
            let mut e = vec![0.0; n];
            e[i] = s;
            out.push(e);
        }
    }
    out
}

/// Samples the symbol rank over the unit sphere (random points plus the
/// signed coordinate directions).
pub fn check_constant_rank(
    op: &LinearOperator,
    n_samples: usize,
    rel_tol: f64,
    seed: u64,
) -> Result<ConstantRankReport> {
    if n_samples == 0 {
        return Err(Error::InvalidArgument("n_samples must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coords = coordinate_directions(op.n);
    let randoms: Vec<Vec<f64>> = (0..n_samples).map(|_| random_unit(&mut rng, op.n)).collect();

    let mut observed = BTreeMap::new();
    let mut first: Option<(Vec<f64>, usize)> = None;
    let mut witness = None;
    for w in coords.iter().chain(&randoms) {
        let r = linalg::numeric_rank(&op.symbol_matrix(w), rel_tol)?;
        *observed.entry(r).or_insert(0) += 1;
        match &first {
            None => first = Some((w.clone(), r)),
            Some((wa, ra)) if witness.is_none() && *ra != r => {
                witness = Some(RankWitness {
                    frequency_a: wa.clone(),
                    rank_a: *ra,
                    frequency_b: w.clone(),
                    rank_b: r,
                });
            }
            _ => {}
        }
    }
    let constant = observed.len() == 1;
    Ok(ConstantRankReport {
        n_random: n_samples,
        n_coordinate: coords.len(),
        rel_tol,
        seed,
        rank: if constant {
            observed.keys().next().copied()
        } else {
            None
        },
        observed_ranks: observed,
        constant,
        witness,
        evidence_only: true,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ExactRankReport {
    pub n_samples: usize,
    pub seed: u64,
    pub observed_ranks: BTreeMap<usize, usize>,
    pub constant: bool,
    pub rank: Option<usize>,
}

/// Exact symbol ranks at random nonzero rational frequencies with numerators
/// and denominators bounded by `max_int`.
pub fn check_constant_rank_exact(
    op: &LinearOperator,
    n_samples: usize,
    max_int: i64,
    seed: u64,
) -> Result<ExactRankReport> {
    if max_int < 1 {
        return Err(Error::InvalidArgument("max_int must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut observed = BTreeMap::new();
    let mut done = 0;
    while done < n_samples {
        let nums: Vec<i64> = (0..op.n)
            .map(|_| rng.random_range(-max_int..=max_int))
            .collect();
        if nums.iter().all(|&x| x == 0) {
            continue;
        }
        let w: Vec<BigRational> = nums
            .iter()
            .map(|&p| linalg::rational(p, rng.random_range(1..=max_int)))
            .collect();
        let r = linalg::exact_rank(&op.symbol_exact(&w)?);
        *observed.entry(r).or_insert(0) += 1;
        done += 1;
    }
    let constant = observed.len() == 1;
    Ok(ExactRankReport {
        n_samples,
        seed,
        rank: if constant {
            observed.keys().next().copied()
        } else {
            None
        },
        observed_ranks: observed,
        constant,
    })
}

/// `(Z)_{ji} = sum_k (A_i)_{jk} z_k`, an `l x N` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ZMatrix {
    pub entries: DMatrix<f64>,
    pub source_state: Vec<f64>,
}

pub fn z_matrix(op: &LinearOperator, z: &[f64]) -> Result<ZMatrix> {
    check_dim("state", op.d, z.len())?;
    Ok(ZMatrix {
        entries: z_matrix_entries(op, z),
        source_state: z.to_vec(),
    })
}

pub(crate) fn z_matrix_entries(op: &LinearOperator, z: &[f64]) -> DMatrix<f64> {
    let zv = DVector::from_column_slice(z);
    let mut m = DMatrix::<f64>::zeros(op.l, op.n);
    for (i, a) in op.coeffs.iter().enumerate() {
        m.set_column(i, &(a * &zv));
    }
    m
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct WaveConeVerdict {
    pub member: bool,
    pub z_rank: usize,
    /// Orthonormal basis of the numeric null space of the Z-matrix.
    pub directions: Vec<Vec<f64>>,
    pub tolerance_used: f64,
}

/// Wave-cone membership via the rank of the Z-matrix.
pub fn in_wave_cone(op: &LinearOperator, z: &[f64], rel_tol: f64) -> Result<WaveConeVerdict> {
    check_dim("state", op.d, z.len())?;
    check_finite("state", z)?;
    if z.iter().all(|&x| x == 0.0) {
        return Err(Error::ZeroState);
    }
    let zm = z_matrix_entries(op, z);
    let z_rank = linalg::numeric_rank(&zm, rel_tol)?;
    let member = z_rank < op.n;
    let directions = if member {
        linalg::null_space(&zm, rel_tol)
    } else {
        Vec::new()
    };
    Ok(WaveConeVerdict {
        member,
        z_rank,
        directions,
        tolerance_used: rel_tol,
    })
}

/// `|A(xi) z| / (|z| |xi| sum_i |A_i|)`.
pub fn plane_wave_residual(op: &LinearOperator, z: &[f64], xi: &[f64]) -> f64 {
    let r = op.symbol_matrix(xi) * DVector::from_column_slice(z);
    let scale = linalg::norm(z) * linalg::norm(xi) * op.coefficient_scale();
    if scale == 0.0 {
        0.0
    } else {
        r.norm() / scale
    }
}

/// Integer wave direction for `zbar`, if one exists within `rel_tol`.
///
/// Small integer vectors (sup-norm at most 2) are tried first in order of
/// length, then each real null direction is scaled and rounded.
pub fn rationalize_direction(op: &LinearOperator, zbar: &[f64], rel_tol: f64) -> Option<Vec<i64>> {
    let n = op.n;
    let mut candidates: Vec<Vec<i64>> = Vec::new();
    let total = 5usize.pow(n as u32);
    for code in 0..total {
        let mut c = code;
        let v: Vec<i64> = (0..n)
            .map(|_| {
                let digit = (c % 5) as i64 - 2;
                c /= 5;
                digit
            })
            .collect();
        if v.iter().any(|&x| x != 0) && canonical_sign(&v) {
            candidates.push(v);
        }
    }
    candidates.sort_by_key(|v| (v.iter().map(|x| x * x).sum::<i64>(), v.clone()));
    let accept = |v: &[i64]| {
        let xi: Vec<f64> = v.iter().map(|&x| x as f64).collect();
        plane_wave_residual(op, zbar, &xi) <= rel_tol
    };
    if let Some(v) = candidates.into_iter().find(|v| accept(v)) {
        return Some(v);
    }
    let verdict = in_wave_cone(op, zbar, rel_tol).ok()?;
    for dir in &verdict.directions {
        let big = dir.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        for scale in 1..=16 {
            let v: Vec<i64> = dir
                .iter()
                .map(|x| (x / big * scale as f64).round() as i64)
                .collect();
            if v.iter().any(|&x| x != 0) && accept(&v) {
                let sign = if canonical_sign(&v) { 1 } else { -1 };
                return Some(v.into_iter().map(|x| sign * x).collect());
            }
        }
    }
    None
}

fn canonical_sign(v: &[i64]) -> bool {
    v.iter().find(|&&x| x != 0).is_some_and(|&x| x > 0)
}

/// Random element of the wave cone: a random state projected onto the kernel
/// of the symbol at a random unit frequency. Returns `(state, frequency)`.
pub fn sample_wave_cone_state(op: &LinearOperator, rng: &mut impl Rng) -> Option<(Vec<f64>, Vec<f64>)> {
    for _ in 0..64 {
        let xi = random_unit(rng, op.n);
        let p = linalg::null_projector(&op.symbol_matrix(&xi), 1e-10);
        let z: Vec<f64> = (0..op.d).map(|_| rng.sample(StandardNormal)).collect();
        let zp = &p * DVector::from_column_slice(&z);
        let nz = zp.norm();
        if nz > 1e-6 {
            let zp = zp / nz;
            return Some((zp.iter().copied().collect(), xi));
        }
    }
    None
}
