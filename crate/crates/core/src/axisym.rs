use std::path::Path;

use nalgebra::{Matrix6, Vector6};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::Field;
use crate::geometry::{BoundaryCurve, Mesh, Point, WeightField};
use crate::io::{fmt17, write_json, Table};

/// Cross-section of an axially symmetric body in the half-plane `x1 > 0`, rotated about the `x2` axis.
#[derive(Debug, Clone, PartialEq)]
pub struct TorusDomain {
    pub cross: BoundaryCurve,
}

impl TorusDomain {
    pub fn new(cross: BoundaryCurve) -> Result<Self> {
        let min = cross.sample(4096).iter().map(|p| p[0]).fold(f64::INFINITY, f64::min);
        if !(min > 0.0) {
            return Err(Error::InvalidInput(format!("cross-section reaches x1 = {min}; it must stay off the axis")));
        }
        Ok(TorusDomain { cross })
    }
}

/// The weight `a = x1` with `a0 = min x1`, `a1 = max x1` over the cross-section.
pub fn torus_problem(domain: &TorusDomain) -> Result<WeightField> {
    let a = WeightField::x1().with_bounds_on(&domain.cross);
    a.check_bounds(&domain.cross)?;
    Ok(a)
}

/// Uniform Cartesian sample grid in `(y1, y2, y3)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid3 {
    pub origin: [f64; 3],
    pub step: f64,
    pub dims: [usize; 3],
}

impl Grid3 {
    /// Cube of `n` points per side centred at `c`.
    pub fn cube(c: [f64; 3], half: f64, n: usize) -> Result<Grid3> {
        if n < 3 || !(half > 0.0) {
            return Err(Error::InvalidInput("grid needs at least 3 points per side and a positive size".into()));
        }
        let step = 2.0 * half / (n - 1) as f64;
        Ok(Grid3 { origin: [c[0] - half, c[1] - half, c[2] - half], step, dims: [n; 3] })
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.dims[1] + j) * self.dims[0] + i
    }

    pub fn point(&self, i: usize, j: usize, k: usize) -> [f64; 3] {
        [self.origin[0] + i as f64 * self.step, self.origin[1] + j as f64 * self.step, self.origin[2] + k as f64 * self.step]
    }
}

/// Moving least-squares quadratic reconstruction of nodal values with a fixed support radius,
/// smooth wherever the support is fully populated.
pub struct Reconstruction<'a> {
    mesh: &'a Mesh,
    values: &'a [f64],
    radius: f64,
    lo: Point,
    nx: usize,
    ny: usize,
    buckets: Vec<Vec<usize>>,
}

impl<'a> Reconstruction<'a> {
    pub fn new(mesh: &'a Mesh, u: &'a Field, radius: f64) -> Result<Self> {
        if u.len() != mesh.n_nodes() || !(radius > 0.0) {
            return Err(Error::InvalidInput("reconstruction needs a nodal field and a positive radius".into()));
        }
        let (mut lo, mut hi) = ([f64::MAX; 2], [f64::MIN; 2]);
        for p in &mesh.nodes {
            for d in 0..2 {
                lo[d] = lo[d].min(p[d]);
                hi[d] = hi[d].max(p[d]);
            }
        }
        let nx = (((hi[0] - lo[0]) / radius).floor() as usize) + 1;
        let ny = (((hi[1] - lo[1]) / radius).floor() as usize) + 1;
        let mut buckets = vec![Vec::new(); nx * ny];
        for (i, p) in mesh.nodes.iter().enumerate() {
            let bx = ((p[0] - lo[0]) / radius) as usize;
            let by = ((p[1] - lo[1]) / radius) as usize;
            buckets[by.min(ny - 1) * nx + bx.min(nx - 1)].push(i);
        }
        Ok(Reconstruction { mesh, values: &u.values, radius, lo, nx, ny, buckets })
    }

    /// Value at `x`, which must lie inside the domain.
    pub fn value(&self, x: Point) -> Result<f64> {
        if !self.mesh.curve.contains(x) {
            return Err(Error::OutsideDomain { x: x[0], y: x[1] });
        }
        let r = self.radius;
        let bx = ((x[0] - self.lo[0]) / r).floor() as isize;
        let by = ((x[1] - self.lo[1]) / r).floor() as isize;
        let mut m = Matrix6::<f64>::zeros();
        let mut rhs = Vector6::<f64>::zeros();
        let mut count = 0;
        for j in by - 1..=by + 1 {
            for i in bx - 1..=bx + 1 {
                if i < 0 || j < 0 || i as usize >= self.nx || j as usize >= self.ny {
                    continue;
                }
                for &n in &self.buckets[j as usize * self.nx + i as usize] {
                    let p = self.mesh.nodes[n];
                    let (dx, dy) = ((p[0] - x[0]) / r, (p[1] - x[1]) / r);
                    let d = dx.hypot(dy);
                    if d >= 1.0 {
                        continue;
                    }
                    // Wendland C² weight.
                    let w = (1.0 - d).powi(4) * (4.0 * d + 1.0);
                    let b = Vector6::new(1.0, dx, dy, dx * dx, dx * dy, dy * dy);
                    m += w * b * b.transpose();
                    rhs += w * self.values[n] * b;
                    count += 1;
                }
            }
        }
        if count < 6 {
            return Err(Error::InvalidInput(format!("only {count} nodes within the reconstruction radius")));
        }
        let c = m.cholesky().ok_or_else(|| Error::InvalidInput("degenerate reconstruction stencil".into()))?.solve(&rhs);
        Ok(c[0])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Geodesic {
    pub radius: f64,
    pub height: f64,
    pub sign: i32,
}

impl Geodesic {
    pub fn point(&self, theta: f64) -> [f64; 3] {
        [self.radius * theta.cos(), self.radius * theta.sin(), self.height]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lift {
    pub grid: Grid3,
    /// `𝔲(y) = u(√(y1² + y2²), y3)` in grid order.
    pub values: Vec<f64>,
    pub geodesics: Vec<Geodesic>,
}

/// Samples the rotated field on `grid`; each concentration point `(x1*, x2*)` becomes the circle
/// of radius `x1*` at height `x2*`.
pub fn lift_to_3d(rec: &Reconstruction, grid: &Grid3, concentration: &[(Point, i32)]) -> Result<Lift> {
    let [nx, ny, nz] = grid.dims;
    let slabs: Vec<Vec<f64>> = (0..nz)
        .into_par_iter()
        .map(|k| {
            let mut out = Vec::with_capacity(nx * ny);
            for j in 0..ny {
                for i in 0..nx {
                    let y = grid.point(i, j, k);
                    let x = [y[0].hypot(y[1]), y[2]];
                    out.push(rec.value(x).map_err(|e| match e {
                        Error::OutsideDomain { .. } => {
                            Error::InvalidInput(format!("grid point ({}, {}, {}) lies outside the body", y[0], y[1], y[2]))
                        }
                        e => e,
                    })?);
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let geodesics = concentration.iter().map(|&(p, sign)| Geodesic { radius: p[0], height: p[1], sign }).collect();
    Ok(Lift { grid: *grid, values: slabs.concat(), geodesics })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FdReport {
    pub max_residual: f64,
    pub checked: usize,
    pub excluded: usize,
}

/// Max of the 7-point Laplacian over interior grid points farther than `exclude` from every
/// concentration circle.
pub fn fd_residual(lift: &Lift, exclude: f64) -> FdReport {
    let g = &lift.grid;
    let [nx, ny, nz] = g.dims;
    let v = |i, j, k| lift.values[g.index(i, j, k)];
    let (mut max_residual, mut checked, mut excluded) = (0.0f64, 0, 0);
    for k in 1..nz.saturating_sub(1) {
        for j in 1..ny.saturating_sub(1) {
            for i in 1..nx.saturating_sub(1) {
                let y = g.point(i, j, k);
                let near = lift.geodesics.iter().any(|c| (y[0].hypot(y[1]) - c.radius).hypot(y[2] - c.height) < exclude);
                if near {
                    excluded += 1;
                    continue;
                }
                let lap = (v(i + 1, j, k) + v(i - 1, j, k) + v(i, j + 1, k) + v(i, j - 1, k) + v(i, j, k + 1) + v(i, j, k - 1)
                    - 6.0 * v(i, j, k))
                    / (g.step * g.step);
                max_residual = max_residual.max(lap.abs());
                checked += 1;
            }
        }
    }
    FdReport { max_residual, checked, excluded }
}

impl Lift {
    /// Writes `lift.csv` ("y1,y2,y3,value") and `geodesics.json`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let g = &self.grid;
        let mut t = Table::new(&["y1", "y2", "y3", "value"]);
        for k in 0..g.dims[2] {
            for j in 0..g.dims[1] {
                for i in 0..g.dims[0] {
                    let y = g.point(i, j, k);
                    t.push(vec![fmt17(y[0]), fmt17(y[1]), fmt17(y[2]), fmt17(self.values[g.index(i, j, k)])]);
                }
            }
        }
        t.write(&dir.join("lift.csv"))?;
        write_json(&dir.join("geodesics.json"), &self.geodesics)
    }
}
