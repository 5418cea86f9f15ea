//! Finitely supported Young measures.
//!
//! A [`DiscreteYoungMeasure`] is a probability measure with finitely many
//! atoms. Families indexed by `(t, x)` are represented as piecewise constant
//! over a uniform cell grid ([`ParametrizedMeasure`]).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg;

/// Tolerance on `|sum of weights - 1|`.
pub const WEIGHT_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub point: Vec<f64>,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteYoungMeasure {
    dim: usize,
    atoms: Vec<Atom>,
    /// Parameter cell this measure belongs to; `None` for homogeneous measures.
    pub cell: Option<Vec<usize>>,
}

impl DiscreteYoungMeasure {
    /// Validates weights (nonnegative, summing to one) and merges coincident atoms.
    pub fn new(dim: usize, atoms: Vec<Atom>) -> Result<Self> {
        let total = validate_atoms(dim, &atoms)?;
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::InvalidMeasure(format!(
                "weights sum to {total}, expected 1"
            )));
        }
        Ok(Self::build(dim, atoms, total))
    }

    /// Like [`DiscreteYoungMeasure::new`] but rescales positive weights to sum to one.
    pub fn normalized(dim: usize, atoms: Vec<Atom>) -> Result<Self> {
        let total = validate_atoms(dim, &atoms)?;
        if total <= 0.0 {
            return Err(Error::InvalidMeasure("total weight is zero".into()));
        }
        Ok(Self::build(dim, atoms, total))
    }

    fn build(dim: usize, atoms: Vec<Atom>, total: f64) -> Self {
        let mut merged: Vec<Atom> = Vec::with_capacity(atoms.len());
        for a in atoms {
            match merged.iter_mut().find(|m| m.point == a.point) {
                Some(m) => m.weight += a.weight,
                None => merged.push(a),
            }
        }
        for m in &mut merged {
            m.weight /= total;
        }
        Self {
            dim,
            atoms: merged,
            cell: None,
        }
    }

    pub fn dirac(point: Vec<f64>) -> Self {
        Self {
            dim: point.len(),
            atoms: vec![Atom { point, weight: 1.0 }],
            cell: None,
        }
    }

    /// `lambda * delta_{z1} + (1 - lambda) * delta_{z2}`.
    pub fn two_point(z1: &[f64], z2: &[f64], lambda: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::InvalidMeasure(format!("lambda {lambda} not in [0, 1]")));
        }
        Self::new(
            z1.len(),
            vec![
                Atom {
                    point: z1.to_vec(),
                    weight: lambda,
                },
                Atom {
                    point: z2.to_vec(),
                    weight: 1.0 - lambda,
                },
            ],
        )
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn barycenter(&self) -> Vec<f64> {
        let mut b = vec![0.0; self.dim];
        for a in &self.atoms {
            for (s, x) in b.iter_mut().zip(&a.point) {
                *s += a.weight * x;
            }
        }
        b
    }

    /// `<nu, f> = sum_i w_i f(z_i)`.
    pub fn expectation(&self, f: impl Fn(&[f64]) -> Vec<f64>) -> Result<Vec<f64>> {
        let mut acc: Option<Vec<f64>> = None;
        for a in &self.atoms {
            let v = f(&a.point);
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite("integrand at an atom"));
            }
            match &mut acc {
                None => acc = Some(v.iter().map(|x| a.weight * x).collect()),
                Some(s) => {
                    check_dim("integrand output", s.len(), v.len())?;
                    for (si, x) in s.iter_mut().zip(&v) {
                        *si += a.weight * x;
                    }
                }
            }
        }
        Ok(acc.unwrap_or_default())
    }

    /// `sum_i w_i |z_i|^p`; finite for every discrete measure.
    pub fn p_moment(&self, p: f64) -> Result<f64> {
        if !(p >= 1.0) || !p.is_finite() {
            return Err(Error::InvalidArgument(format!("moment exponent {p} must be >= 1")));
        }
        Ok(self
            .atoms
            .iter()
            .map(|a| a.weight * linalg::norm(&a.point).powf(p))
            .sum())
    }

    /// `<nu, g> - g(barycenter)`; nonnegative when Jensen's inequality holds for `g`.
    pub fn jensen_gap(&self, g: impl Fn(&[f64]) -> f64) -> Result<f64> {
        let avg = self.expectation(|z| vec![g(z)])?[0];
        let at_bary = g(&self.barycenter());
        if !at_bary.is_finite() {
            return Err(Error::NonFinite("integrand at the barycenter"));
        }
        Ok(avg - at_bary)
    }

    /// Push-forward through `f`, weights unchanged.
    pub fn push_forward(&self, f: impl Fn(&[f64]) -> Result<Vec<f64>>) -> Result<Self> {
        let atoms = self
            .atoms
            .iter()
            .map(|a| {
                Ok(Atom {
                    point: f(&a.point)?,
                    weight: a.weight,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let dim = atoms.first().map_or(0, |a| a.point.len());
        let mut out = Self::new(dim, atoms)?;
        out.cell = self.cell.clone();
        Ok(out)
    }

    pub fn to_file(&self) -> MeasureFile {
        MeasureFile {
            d: self.dim,
            atoms: self.atoms.clone(),
            cells: None,
        }
    }
}

fn validate_atoms(dim: usize, atoms: &[Atom]) -> Result<f64> {
    if dim == 0 {
        return Err(Error::InvalidMeasure("state dimension must be >= 1".into()));
    }
    if atoms.is_empty() {
        return Err(Error::InvalidMeasure("no atoms".into()));
    }
    let mut total = 0.0;
    for a in atoms {
        check_dim("atom point", dim, a.point.len())?;
        if a.point.iter().any(|x| !x.is_finite()) || !a.weight.is_finite() {
            return Err(Error::NonFinite("atom"));
        }
        if a.weight < 0.0 {
            return Err(Error::InvalidMeasure(format!("negative weight {}", a.weight)));
        }
        total += a.weight;
    }
    Ok(total)
}

/// Greedy first-fit clustering of samples into a discrete measure.
///
/// A sample within `cluster_tol` of an existing atom joins it and the atom
/// moves to the running mean of its members.
pub fn empirical_measure<'a>(
    samples: impl IntoIterator<Item = &'a [f64]>,
    cluster_tol: f64,
) -> Result<DiscreteYoungMeasure> {
    let mut centers: Vec<(Vec<f64>, usize)> = Vec::new();
    let mut n = 0usize;
    let mut dim = None;
    for s in samples {
        match dim {
            None => dim = Some(s.len()),
            Some(d) => check_dim("sample", d, s.len())?,
        }
        n += 1;
        let hit = centers
            .iter_mut()
            .find(|(c, _)| linalg::norm(&linalg::sub(c, s)) <= cluster_tol);
        match hit {
            Some((c, count)) => {
                *count += 1;
                let k = *count as f64;
                for (ci, si) in c.iter_mut().zip(s) {
                    *ci += (si - *ci) / k;
                }
            }
            None => centers.push((s.to_vec(), 1)),
        }
    }
    let Some(dim) = dim else {
        return Err(Error::InvalidMeasure("no samples".into()));
    };
    DiscreteYoungMeasure::normalized(
        dim,
        centers
            .into_iter()
            .map(|(point, count)| Atom {
                point,
                weight: count as f64 / n as f64,
            })
            .collect(),
    )
}

/// Exact 1-Wasserstein distance (Euclidean ground cost) between two discrete measures.
pub fn measure_distance(a: &DiscreteYoungMeasure, b: &DiscreteYoungMeasure) -> Result<f64> {
    check_dim("measure dimension", a.dim, b.dim)?;
    let supply: Vec<f64> = a.atoms.iter().map(|x| x.weight).collect();
    let demand: Vec<f64> = b.atoms.iter().map(|x| x.weight).collect();
    let cost: Vec<Vec<f64>> = a
        .atoms
        .iter()
        .map(|x| {
            b.atoms
                .iter()
                .map(|y| linalg::norm(&linalg::sub(&x.point, &y.point)))
                .collect()
        })
        .collect();
    Ok(transport_cost(&supply, &demand, &cost))
}

/// Minimum cost of the balanced transportation problem, by the
/// transportation simplex (north-west corner start, u-v potentials).
pub fn transport_cost(supply: &[f64], demand: &[f64], cost: &[Vec<f64>]) -> f64 {
    let (n, m) = (supply.len(), demand.len());
    // rebalance tiny mismatches so the north-west corner ends on the last cell
    let total_b: f64 = demand.iter().sum();
    let total_a: f64 = supply.iter().sum();
    let mut rb: Vec<f64> = demand.iter().map(|x| x * total_a / total_b).collect();
    let mut ra = supply.to_vec();

    let mut flow = vec![vec![0.0; m]; n];
    let mut basis: Vec<(usize, usize)> = Vec::with_capacity(n + m - 1);
    let (mut i, mut j) = (0, 0);
    loop {
        let x = ra[i].min(rb[j]).max(0.0);
        flow[i][j] = x;
        basis.push((i, j));
        ra[i] -= x;
        rb[j] -= x;
        if i == n - 1 && j == m - 1 {
            break;
        }
        if i == n - 1 {
            j += 1;
        } else if j == m - 1 || ra[i] <= rb[j] {
            i += 1;
        } else {
            j += 1;
        }
    }

    let scale = cost
        .iter()
        .flatten()
        .fold(0.0f64, |s, c| s.max(c.abs()))
        .max(1e-300);
    let eps = 1e-12 * scale;
    let mut degenerate_run = 0usize;
    let max_iter = 100 * (n + m) * (n + m) + 1000;
    for _ in 0..max_iter {
        let (u, v) = potentials(n, m, &basis, cost);
        let bland = degenerate_run > 50;
        let mut entering: Option<(usize, usize, f64)> = None;
        'scan: for (p, row) in cost.iter().enumerate() {
            for (q, c) in row.iter().enumerate() {
                let r = c - u[p] - v[q];
                if r < -eps && !basis.contains(&(p, q)) {
                    if bland {
                        entering = Some((p, q, r));
                        break 'scan;
                    }
                    if entering.is_none_or(|(_, _, best)| r < best) {
                        entering = Some((p, q, r));
                    }
                }
            }
        }
        let Some((p, q, _)) = entering else { break };
        let path = tree_path(n, m, &basis, p, q);
        // path edges alternate -, +, -, ... starting next to row p
        let (mut theta, mut leave) = (f64::INFINITY, usize::MAX);
        for &b in path.iter().step_by(2) {
            let (bi, bj) = basis[b];
            if flow[bi][bj] < theta || (bland && flow[bi][bj] == theta && b < leave) {
                theta = flow[bi][bj];
                leave = b;
            }
        }
        for (k, &b) in path.iter().enumerate() {
            let (bi, bj) = basis[b];
            if k % 2 == 0 {
                flow[bi][bj] -= theta;
            } else {
                flow[bi][bj] += theta;
            }
        }
        flow[p][q] += theta;
        let (li, lj) = basis[leave];
        flow[li][lj] = 0.0;
        basis[leave] = (p, q);
        degenerate_run = if theta == 0.0 { degenerate_run + 1 } else { 0 };
    }
    basis
        .iter()
        .map(|&(bi, bj)| flow[bi][bj].max(0.0) * cost[bi][bj])
        .sum()
}

fn adjacency(n: usize, m: usize, basis: &[(usize, usize)]) -> Vec<Vec<(usize, usize)>> {
    // node ids: rows 0..n, columns n..n+m; entries (neighbor, basis index)
    let mut adj = vec![Vec::new(); n + m];
    for (b, &(i, j)) in basis.iter().enumerate() {
        adj[i].push((n + j, b));
        adj[n + j].push((i, b));
    }
    adj
}

fn potentials(n: usize, m: usize, basis: &[(usize, usize)], cost: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let adj = adjacency(n, m, basis);
    let mut pot = vec![f64::NAN; n + m];
    pot[0] = 0.0;
    let mut stack = vec![0];
    while let Some(node) = stack.pop() {
        for &(next, b) in &adj[node] {
            if pot[next].is_nan() {
                let (i, j) = basis[b];
                pot[next] = cost[i][j] - pot[node];
                stack.push(next);
            }
        }
    }
    (pot[..n].to_vec(), pot[n..].to_vec())
}

/// Basis indices along the tree path from row `p` to column `q`.
fn tree_path(n: usize, m: usize, basis: &[(usize, usize)], p: usize, q: usize) -> Vec<usize> {
    let adj = adjacency(n, m, basis);
    let mut parent: Vec<Option<(usize, usize)>> = vec![None; n + m];
    let mut seen = vec![false; n + m];
    seen[p] = true;
    let mut queue = std::collections::VecDeque::from([p]);
    while let Some(node) = queue.pop_front() {
        if node == n + q {
            break;
        }
        for &(next, b) in &adj[node] {
            if !seen[next] {
                seen[next] = true;
                parent[next] = Some((node, b));
                queue.push_back(next);
            }
        }
    }
    let mut path = Vec::new();
    let mut node = n + q;
    while node != p {
        let (prev, b) = parent[node].expect("basis is a spanning tree");
        path.push(b);
        node = prev;
    }
    path.reverse();
    path
}

/// Homogeneous measures, or families piecewise constant over a uniform grid
/// of parameter cells (axis 0 is time on `[0, horizon]`, remaining axes
/// split the unit torus).
#[derive(Debug, Clone, PartialEq)]
pub struct ParametrizedMeasure {
    shape: Vec<usize>,
    horizon: f64,
    measures: Vec<DiscreteYoungMeasure>,
}

impl ParametrizedMeasure {
    pub fn homogeneous(shape: Vec<usize>, horizon: f64, measure: DiscreteYoungMeasure) -> Result<Self> {
        let count = validate_shape(&shape, horizon)?;
        let measures = (0..count)
            .map(|c| {
                let mut m = measure.clone();
                m.cell = Some(cell_index(&shape, c));
                m
            })
            .collect();
        Ok(Self {
            shape,
            horizon,
            measures,
        })
    }

    /// `measures` in row-major cell order.
    pub fn new(shape: Vec<usize>, horizon: f64, measures: Vec<DiscreteYoungMeasure>) -> Result<Self> {
        let count = validate_shape(&shape, horizon)?;
        check_dim("cell measures", count, measures.len())?;
        let dim = measures[0].dim;
        for m in &measures {
            check_dim("cell measure dimension", dim, m.dim)?;
        }
        let measures = measures
            .into_iter()
            .enumerate()
            .map(|(c, mut m)| {
                m.cell = Some(cell_index(&shape, c));
                m
            })
            .collect();
        Ok(Self {
            shape,
            horizon,
            measures,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn dim(&self) -> usize {
        self.measures[0].dim
    }

    pub fn measures(&self) -> &[DiscreteYoungMeasure] {
        &self.measures
    }

    pub fn get(&self, cell: &[usize]) -> &DiscreteYoungMeasure {
        &self.measures[crate::field::ravel(&self.shape, cell)]
    }

    pub fn is_homogeneous(&self) -> bool {
        self.measures
            .iter()
            .all(|m| m.atoms == self.measures[0].atoms && m.dim == self.measures[0].dim)
    }

    pub fn map(&self, f: impl Fn(&DiscreteYoungMeasure) -> Result<DiscreteYoungMeasure>) -> Result<Self> {
        let measures = self.measures.iter().map(f).collect::<Result<Vec<_>>>()?;
        Self::new(self.shape.clone(), self.horizon, measures)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let file: MeasureFile = serde_json::from_str(&text)?;
        file.into_parametrized()
    }
}

fn validate_shape(shape: &[usize], horizon: f64) -> Result<usize> {
    if shape.is_empty() || shape.contains(&0) {
        return Err(Error::InvalidMeasure(format!("invalid cell shape {shape:?}")));
    }
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::InvalidMeasure(format!("invalid time horizon {horizon}")));
    }
    Ok(shape.iter().product())
}

fn cell_index(shape: &[usize], c: usize) -> Vec<usize> {
    let mut idx = vec![0; shape.len()];
    crate::field::unravel(shape, c, &mut idx);
    idx
}

/// Measure file: `{"d": .., "atoms": [{"point": [..], "weight": ..}], "cells": ..}`.
///
/// Without `cells` the file describes one homogeneous measure. With `cells`,
/// every cell of the grid carries `atoms` unless listed in `overrides`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureFile {
    pub d: usize,
    pub atoms: Vec<Atom>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cells: Option<CellsFile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellsFile {
    pub shape: Vec<usize>,
    pub horizon: f64,
    #[serde(default)]
    pub overrides: Vec<CellOverride>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellOverride {
    pub cell: Vec<usize>,
    pub atoms: Vec<Atom>,
}

impl MeasureFile {
    pub fn to_measure(&self) -> Result<DiscreteYoungMeasure> {
        DiscreteYoungMeasure::new(self.d, self.atoms.clone())
    }

    /// Homogeneous files become a single-cell family on `[0, 1]`.
    pub fn into_parametrized(self) -> Result<ParametrizedMeasure> {
        let base = self.to_measure()?;
        let Some(cells) = self.cells else {
            return ParametrizedMeasure::homogeneous(vec![1, 1, 1, 1], 1.0, base);
        };
        let count = validate_shape(&cells.shape, cells.horizon)?;
        let mut measures = vec![base; count];
        for o in cells.overrides {
            check_dim("override cell index", cells.shape.len(), o.cell.len())?;
            if o.cell.iter().zip(&cells.shape).any(|(i, n)| i >= n) {
                return Err(Error::InvalidMeasure(format!("cell {:?} out of range", o.cell)));
            }
            measures[crate::field::ravel(&cells.shape, &o.cell)] =
                DiscreteYoungMeasure::new(self.d, o.atoms)?;
        }
        ParametrizedMeasure::new(cells.shape, cells.horizon, measures)
    }
}
