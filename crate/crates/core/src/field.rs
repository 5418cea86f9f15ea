//! Vector fields sampled on the uniform grid of the unit torus `(0,1)^N`, and
//! their discrete Fourier transforms.

use std::io::{Read, Write};

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{check_finite, Error, Result};

/// Values of a map `(0,1)^N -> R^d` at the nodes `x_i = j_i / n_i`.
///
/// Nodes are stored in row-major order (last axis fastest), and each node
/// holds `d` consecutive values.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodicField {
    dims: Vec<usize>,
    d: usize,
    values: Vec<f64>,
}

impl PeriodicField {
    pub fn new(dims: Vec<usize>, d: usize, values: Vec<f64>) -> Result<Self> {
        if dims.is_empty() || dims.contains(&0) {
            return Err(Error::InvalidArgument(format!("invalid grid dims {dims:?}")));
        }
        if d == 0 {
            return Err(Error::InvalidArgument("field dimension must be >= 1".into()));
        }
        let nodes: usize = dims.iter().product();
        if values.len() != nodes * d {
            return Err(Error::Dimension {
                what: "field values",
                expected: nodes * d,
                got: values.len(),
            });
        }
        check_finite("field values", &values)?;
        Ok(Self { dims, d, values })
    }

    pub fn zeros(dims: Vec<usize>, d: usize) -> Result<Self> {
        let nodes: usize = dims.iter().product();
        Self::new(dims, d, vec![0.0; nodes * d])
    }

    /// Builds a field from a function of the multi-index of each node.
    pub fn from_fn(
        dims: Vec<usize>,
        d: usize,
        mut f: impl FnMut(&[usize], &mut [f64]),
    ) -> Result<Self> {
        let mut field = Self::zeros(dims, d)?;
        let mut idx = vec![0; field.dims.len()];
        for node in 0..field.n_nodes() {
            field.unravel_into(node, &mut idx);
            f(&idx, &mut field.values[node * d..(node + 1) * d]);
        }
        check_finite("field values", &field.values)?;
        Ok(field)
    }

    pub fn constant(dims: Vec<usize>, value: &[f64]) -> Result<Self> {
        Self::from_fn(dims, value.len(), |_, out| out.copy_from_slice(value))
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    /// Number of grid axes `N`.
    pub fn ndim(&self) -> usize {
        self.dims.len()
    }

    /// Value dimension `d`.
    pub fn d(&self) -> usize {
        self.d
    }

    pub fn n_nodes(&self) -> usize {
        self.values.len() / self.d
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn node(&self, node: usize) -> &[f64] {
        &self.values[node * self.d..(node + 1) * self.d]
    }

    pub fn nodes(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.d)
    }

    pub fn unravel_into(&self, node: usize, idx: &mut [usize]) {
        unravel(&self.dims, node, idx);
    }

    /// Largest grid spacing `max_i 1/n_i`.
    pub fn spacing(&self) -> f64 {
        self.dims.iter().map(|&n| 1.0 / n as f64).fold(0.0, f64::max)
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.d];
        for v in self.nodes() {
            for (a, b) in m.iter_mut().zip(v) {
                *a += b;
            }
        }
        let n = self.n_nodes() as f64;
        m.iter_mut().for_each(|a| *a /= n);
        m
    }

    /// Grid `L^2` norm on the unit torus: `sqrt(mean |z(x)|^2)`.
    pub fn l2_norm(&self) -> f64 {
        (self.values.iter().map(|x| x * x).sum::<f64>() / self.n_nodes() as f64).sqrt()
    }

    /// Grid `L^2` distance to another field on the same grid.
    pub fn l2_distance(&self, other: &Self) -> f64 {
        assert_eq!(self.dims, other.dims);
        assert_eq!(self.d, other.d);
        let s: f64 = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        (s / self.n_nodes() as f64).sqrt()
    }

    /// Normalized spectrum: `zhat(k) = (1/M) sum_x z(x) exp(-2 pi i k.x)`.
    pub fn spectrum(&self) -> Spectrum {
        let m = self.n_nodes();
        let mut coeffs = vec![Complex64::new(0.0, 0.0); m * self.d];
        for c in 0..self.d {
            let comp = &mut coeffs[c * m..(c + 1) * m];
            for (node, slot) in comp.iter_mut().enumerate() {
                *slot = Complex64::new(self.values[node * self.d + c], 0.0);
            }
            fft_nd(comp, &self.dims, false);
            let inv = 1.0 / m as f64;
            comp.iter_mut().for_each(|x| *x *= inv);
        }
        Spectrum {
            dims: self.dims.clone(),
            d: self.d,
            coeffs,
        }
    }

    pub fn write_csv(&self, writer: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let header: Vec<String> = (0..self.ndim())
            .map(|i| format!("i{i}"))
            .chain((0..self.d).map(|c| format!("v{c}")))
            .collect();
        w.write_record(&header)?;
        let mut idx = vec![0; self.ndim()];
        for node in 0..self.n_nodes() {
            self.unravel_into(node, &mut idx);
            let row: Vec<String> = idx
                .iter()
                .map(usize::to_string)
                .chain(self.node(node).iter().map(|v| format!("{v:.16e}")))
                .collect();
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the CSV written by [`PeriodicField::write_csv`]; rows may come in any order.
    pub fn read_csv(reader: impl Read) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let header = r.headers()?.clone();
        let n_axes = header.iter().take_while(|h| h.starts_with('i')).count();
        let d = header.len() - n_axes;
        if n_axes == 0 || d == 0 {
            return Err(Error::InvalidArgument(
                "field csv needs index columns i* followed by value columns v*".into(),
            ));
        }
        let mut rows: Vec<(Vec<usize>, Vec<f64>)> = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let idx = (0..n_axes)
                .map(|i| rec[i].trim().parse::<usize>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::InvalidArgument(format!("bad index in field csv: {e}")))?;
            let vals = (n_axes..n_axes + d)
                .map(|i| rec[i].trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::InvalidArgument(format!("bad value in field csv: {e}")))?;
            rows.push((idx, vals));
        }
        let dims: Vec<usize> = (0..n_axes)
            .map(|a| rows.iter().map(|(i, _)| i[a] + 1).max().unwrap_or(0))
            .collect();
        let mut field = Self::zeros(dims, d)?;
        if rows.len() != field.n_nodes() {
            return Err(Error::InvalidArgument(format!(
                "field csv has {} rows for a grid of {} nodes",
                rows.len(),
                field.n_nodes()
            )));
        }
        let mut seen = vec![false; field.n_nodes()];
        for (idx, vals) in rows {
            let node = ravel(&field.dims, &idx);
            if seen[node] {
                return Err(Error::InvalidArgument(format!("duplicate node {idx:?}")));
            }
            seen[node] = true;
            field.values[node * d..(node + 1) * d].copy_from_slice(&vals);
        }
        check_finite("field values", &field.values)?;
        Ok(field)
    }
}

/// Component-major normalized Fourier coefficients of a [`PeriodicField`].
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub dims: Vec<usize>,
    pub d: usize,
    /// `coeffs[c * M + node]`
    pub coeffs: Vec<Complex64>,
}

impl Spectrum {
    pub fn n_nodes(&self) -> usize {
        self.coeffs.len() / self.d
    }

    pub fn get(&self, node: usize, c: usize) -> Complex64 {
        self.coeffs[c * self.n_nodes() + node]
    }

    pub fn set(&mut self, node: usize, c: usize, v: Complex64) {
        let m = self.n_nodes();
        self.coeffs[c * m + node] = v;
    }

    /// The `d` coefficients at one frequency.
    pub fn mode(&self, node: usize) -> Vec<Complex64> {
        (0..self.d).map(|c| self.get(node, c)).collect()
    }

    pub fn set_mode(&mut self, node: usize, v: &[Complex64]) {
        for (c, x) in v.iter().enumerate() {
            self.set(node, c, *x);
        }
    }

    /// Inverse transform; the imaginary part is dropped.
    pub fn to_field(&self) -> Result<PeriodicField> {
        let m = self.n_nodes();
        let mut values = vec![0.0; m * self.d];
        let mut buf = vec![Complex64::new(0.0, 0.0); m];
        for c in 0..self.d {
            buf.copy_from_slice(&self.coeffs[c * m..(c + 1) * m]);
            fft_nd(&mut buf, &self.dims, true);
            for (node, x) in buf.iter().enumerate() {
                values[node * self.d + c] = x.re;
            }
        }
        PeriodicField::new(self.dims.clone(), self.d, values)
    }
}

pub(crate) fn unravel(dims: &[usize], mut node: usize, idx: &mut [usize]) {
    for a in (0..dims.len()).rev() {
        idx[a] = node % dims[a];
        node /= dims[a];
    }
}

pub(crate) fn ravel(dims: &[usize], idx: &[usize]) -> usize {
    idx.iter().zip(dims).fold(0, |acc, (&i, &n)| acc * n + i)
}

/// Signed frequency of FFT index `j` on an axis of length `n`, in `(-n/2, n/2]`.
pub fn signed_frequency(j: usize, n: usize) -> i64 {
    if 2 * j <= n {
        j as i64
    } else {
        j as i64 - n as i64
    }
}

/// Integer frequency vector of a spectral node.
pub fn frequency(dims: &[usize], node: usize) -> Vec<i64> {
    let mut idx = vec![0; dims.len()];
    unravel(dims, node, &mut idx);
    idx.iter()
        .zip(dims)
        .map(|(&j, &n)| signed_frequency(j, n))
        .collect()
}

/// Frequency used for first derivatives: as [`frequency`] but with the
/// Nyquist component of even-length axes set to zero.
pub fn derivative_frequency(dims: &[usize], node: usize) -> Vec<f64> {
    let mut idx = vec![0; dims.len()];
    unravel(dims, node, &mut idx);
    idx.iter()
        .zip(dims)
        .map(|(&j, &n)| {
            if n % 2 == 0 && 2 * j == n {
                0.0
            } else {
                signed_frequency(j, n) as f64
            }
        })
        .collect()
}

/// Unnormalized in-place N-dimensional FFT (`inverse` uses `exp(+2 pi i k.x)`).
pub fn fft_nd(data: &mut [Complex64], dims: &[usize], inverse: bool) {
    let total: usize = dims.iter().product();
    assert_eq!(data.len(), total);
    let mut planner = FftPlanner::<f64>::new();
    let mut line = Vec::new();
    for (axis, &n) in dims.iter().enumerate() {
        if n == 1 {
            continue;
        }
        let fft = if inverse {
            planner.plan_fft_inverse(n)
        } else {
            planner.plan_fft_forward(n)
        };
        let stride: usize = dims[axis + 1..].iter().product();
        let outer = total / (n * stride);
        line.resize(n, Complex64::new(0.0, 0.0));
        for o in 0..outer {
            for i in 0..stride {
                let start = o * n * stride + i;
                for (k, slot) in line.iter_mut().enumerate() {
                    *slot = data[start + k * stride];
                }
                fft.process(&mut line);
                for (k, v) in line.iter().enumerate() {
                    data[start + k * stride] = *v;
                }
            }
        }
    }
}
