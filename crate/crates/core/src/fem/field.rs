use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{Locator, Mesh, Point};
use crate::io::{fmt17, read_id_value_csv, write_atomic};

/// Nodal coefficients of a piecewise-linear function on a [`Mesh`].
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub values: Vec<f64>,
}

impl Field {
    pub fn zeros(n: usize) -> Self {
        Field { values: vec![0.0; n] }
    }

    pub fn from_fn(mesh: &Mesh, f: impl Fn(Point) -> f64) -> Self {
        Field { values: mesh.nodes.iter().map(|&p| f(p)).collect() }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn trace<'a>(&'a self, mesh: &Mesh) -> &'a [f64] {
        &self.values[..mesh.n_boundary]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn scaled(&self, s: f64) -> Field {
        Field { values: self.values.iter().map(|v| s * v).collect() }
    }

    pub fn add(&self, other: &Field) -> Field {
        Field { values: self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect() }
    }

    pub fn sub(&self, other: &Field) -> Field {
        Field { values: self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect() }
    }

    /// Barycentric interpolation; `None` outside the mesh.
    pub fn eval(&self, mesh: &Mesh, locator: &Locator, p: Point) -> Option<f64> {
        let (t, bc) = locator.locate(mesh, p)?;
        let tri = mesh.triangles[t];
        Some(bc[0] * self.values[tri[0]] + bc[1] * self.values[tri[1]] + bc[2] * self.values[tri[2]])
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::with_capacity(self.values.len() * 28);
        s.push_str("node_id,value\n");
        for (i, v) in self.values.iter().enumerate() {
            s.push_str(&i.to_string());
            s.push(',');
            s.push_str(&fmt17(*v));
            s.push('\n');
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_csv().as_bytes())
    }

    pub fn from_csv(text: &str) -> Result<Field> {
        let rows = read_id_value_csv(text)?;
        let mut values = vec![f64::NAN; rows.len()];
        for (id, v) in rows {
            if id >= values.len() {
                return Err(Error::InvalidInput(format!("node id {id} out of range")));
            }
            values[id] = v;
        }
        if values.iter().any(|v| v.is_nan()) {
            return Err(Error::InvalidInput("field CSV has missing node ids".into()));
        }
        Ok(Field { values })
    }
}

/// Extends boundary values by zero to a full nodal vector.
pub fn boundary_to_full(mesh: &Mesh, trace: &[f64]) -> Vec<f64> {
    let mut v = vec![0.0; mesh.n_nodes()];
    v[..mesh.n_boundary].copy_from_slice(trace);
    v
}
