//! Scalar integrands `g: R^d -> R` with gradients, and the library manifest
//! used to declare them from files.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// A differentiable function on state space. Implementations must be pure:
/// probes may call them from several threads.
pub trait ScalarFunction: Send + Sync {
    fn dim(&self) -> usize;
    fn value(&self, z: &[f64]) -> f64;
    /// Writes the gradient at `z` into `grad` (length `dim`).
    fn gradient(&self, z: &[f64], grad: &mut [f64]);
}

/// `g(z) = z^T H z + a.z + c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Quadratic {
    pub hessian: Vec<Vec<f64>>,
    pub linear: Vec<f64>,
    #[serde(default)]
    pub constant: f64,
}

impl Quadratic {
    pub fn new(hessian: Vec<Vec<f64>>, linear: Vec<f64>, constant: f64) -> Result<Self> {
        let d = linear.len();
        check_dim("quadratic hessian rows", d, hessian.len())?;
        for row in &hessian {
            check_dim("quadratic hessian columns", d, row.len())?;
        }
        Ok(Self {
            hessian,
            linear,
            constant,
        })
    }

    pub fn affine(linear: Vec<f64>, constant: f64) -> Self {
        let d = linear.len();
        Self {
            hessian: vec![vec![0.0; d]; d],
            linear,
            constant,
        }
    }

    /// `|M z + b|^2`, convex for every `M`.
    pub fn squared_affine(m: &[Vec<f64>], b: &[f64]) -> Result<Self> {
        let rows = b.len();
        check_dim("affine map rows", rows, m.len())?;
        let d = m.first().map_or(0, Vec::len);
        let mut hessian = vec![vec![0.0; d]; d];
        let mut linear = vec![0.0; d];
        for (row, bi) in m.iter().zip(b) {
            check_dim("affine map columns", d, row.len())?;
            for i in 0..d {
                linear[i] += 2.0 * bi * row[i];
                for j in 0..d {
                    hessian[i][j] += row[i] * row[j];
                }
            }
        }
        Self::new(hessian, linear, b.iter().map(|x| x * x).sum())
    }

    /// `scale * |z|^2`.
    pub fn norm_squared(d: usize, scale: f64) -> Self {
        let hessian = (0..d)
            .map(|i| (0..d).map(|j| if i == j { scale } else { 0.0 }).collect())
            .collect();
        Self {
            hessian,
            linear: vec![0.0; d],
            constant: 0.0,
        }
    }

    /// `-<c, z>^2`.
    pub fn negative_directional_square(c: &[f64]) -> Self {
        let hessian = c
            .iter()
            .map(|ci| c.iter().map(|cj| -ci * cj).collect())
            .collect();
        Self {
            hessian,
            linear: vec![0.0; c.len()],
            constant: 0.0,
        }
    }
}

impl ScalarFunction for Quadratic {
    fn dim(&self) -> usize {
        self.linear.len()
    }

    fn value(&self, z: &[f64]) -> f64 {
        let mut v = self.constant;
        for (i, row) in self.hessian.iter().enumerate() {
            v += self.linear[i] * z[i];
            let hz: f64 = row.iter().zip(z).map(|(h, x)| h * x).sum();
            v += z[i] * hz;
        }
        v
    }

    fn gradient(&self, z: &[f64], grad: &mut [f64]) {
        let d = self.dim();
        for i in 0..d {
            let mut g = self.linear[i];
            for j in 0..d {
                g += (self.hessian[i][j] + self.hessian[j][i]) * z[j];
            }
            grad[i] = g;
        }
    }
}

/// A library entry: a function with the growth exponent `p` declared by the
/// user (`|g(w)| <= C (1 + |w|^p)`, not verified).
pub struct LibraryEntry {
    pub name: String,
    pub growth_p: f64,
    pub function: Box<dyn ScalarFunction>,
}

impl std::fmt::Debug for LibraryEntry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LibraryEntry")
            .field("name", &self.name)
            .field("growth_p", &self.growth_p)
            .field("dim", &self.function.dim())
            .finish()
    }
}

/// Manifest entry describing a library function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionSpec {
    pub name: String,
    pub growth_p: f64,
    #[serde(flatten)]
    pub kind: FunctionKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FunctionKind {
    /// Builtins: `norm_squared`, `neg_norm_squared`, `zero`.
    Builtin { builtin: String },
    /// Quadratic polynomial coefficient table.
    Quadratic {
        hessian: Vec<Vec<f64>>,
        linear: Vec<f64>,
        #[serde(default)]
        constant: f64,
    },
    /// `-<c, z>^2`.
    NegDirectionalSquare { c: Vec<f64> },
    /// Concave bump across the segment `[z1, z2]` minus the squared distance
    /// to it; its Jensen gap on `(delta_z1 + delta_z2) / 2` is negative.
    Separating { z1: Vec<f64>, z2: Vec<f64> },
}

impl FunctionSpec {
    pub fn build(&self, d: usize) -> Result<LibraryEntry> {
        if !(self.growth_p >= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "growth exponent of {} must be >= 1",
                self.name
            )));
        }
        let function: Box<dyn ScalarFunction> = match &self.kind {
            FunctionKind::Builtin { builtin } => match builtin.as_str() {
                "norm_squared" => Box::new(Quadratic::norm_squared(d, 1.0)),
                "neg_norm_squared" => Box::new(Quadratic::norm_squared(d, -1.0)),
                "zero" => Box::new(Quadratic::affine(vec![0.0; d], 0.0)),
                other => {
                    return Err(Error::InvalidArgument(format!("unknown builtin function {other}")))
                }
            },
            FunctionKind::Quadratic {
                hessian,
                linear,
                constant,
            } => Box::new(Quadratic::new(hessian.clone(), linear.clone(), *constant)?),
            FunctionKind::NegDirectionalSquare { c } => {
                Box::new(Quadratic::negative_directional_square(c))
            }
            FunctionKind::Separating { z1, z2 } => {
                Box::new(crate::euler::SeparatingFunction::from_pair(z1, z2)?)
            }
        };
        check_dim("library function dimension", d, function.dim())?;
        Ok(LibraryEntry {
            name: self.name.clone(),
            growth_p: self.growth_p,
            function,
        })
    }
}

/// `{"functions": [FunctionSpec, ...]}`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LibraryManifest {
    pub functions: Vec<FunctionSpec>,
}

impl LibraryManifest {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn build(&self, d: usize) -> Result<Vec<LibraryEntry>> {
        self.functions.iter().map(|f| f.build(d)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_gradient(f: &dyn ScalarFunction, z: &[f64]) -> Vec<f64> {
        let h = 1e-6;
        (0..z.len())
            .map(|i| {
                let mut a = z.to_vec();
                let mut b = z.to_vec();
                a[i] += h;
                b[i] -= h;
                (f.value(&a) - f.value(&b)) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn quadratic_gradient_matches_differences() {
        let q = Quadratic::new(
            vec![vec![1.0, 2.0, 0.0], vec![-1.0, 0.5, 0.3], vec![0.0, 0.0, -2.0]],
            vec![0.1, -0.2, 0.7],
            3.0,
        )
        .unwrap();
        let z = [0.3, -1.2, 0.8];
        let mut g = vec![0.0; 3];
        q.gradient(&z, &mut g);
        for (a, b) in g.iter().zip(fd_gradient(&q, &z)) {
            assert!((a - b).abs() < 1e-7);
        }
    }

    #[test]
    fn squared_affine_values() {
        let m = vec![vec![1.0, 2.0], vec![0.0, -1.0], vec![3.0, 1.0]];
        let b = vec![0.5, 1.0, -2.0];
        let q = Quadratic::squared_affine(&m, &b).unwrap();
        let z = [0.7, -0.4];
        let direct: f64 = m
            .iter()
            .zip(&b)
            .map(|(r, bi)| (r[0] * z[0] + r[1] * z[1] + bi).powi(2))
            .sum();
        assert!((q.value(&z) - direct).abs() < 1e-13);
    }

    #[test]
    fn manifest_parsing() {
        let json = r#"{"functions": [
            {"name": "sq", "growth_p": 2, "kind": "builtin", "builtin": "norm_squared"},
            {"name": "lin", "growth_p": 1, "kind": "quadratic",
             "hessian": [[0, 0], [0, 0]], "linear": [1, -1]},
            {"name": "dir", "growth_p": 2, "kind": "neg_directional_square", "c": [1, 0]}
        ]}"#;
        let m: LibraryManifest = serde_json::from_str(json).unwrap();
        let lib = m.build(2).unwrap();
        assert_eq!(lib.len(), 3);
        assert_eq!(lib[0].function.value(&[1.0, 2.0]), 5.0);
        assert_eq!(lib[1].function.value(&[1.0, 2.0]), -1.0);
        assert_eq!(lib[2].function.value(&[3.0, 2.0]), -9.0);
        assert!(m.build(3).is_err());
    }
}
