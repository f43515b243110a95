use rayon::prelude::*;
use sprs::{CsMat, TriMat};

use crate::error::{Error, Result};
use crate::geometry::{Mesh, WeightField};

/// Sparse symmetric matrix with entries `∫ a ∇φ_i·∇φ_j`.
#[derive(Debug, Clone)]
pub struct Stiffness {
    pub matrix: CsMat<f64>,
}

/// Lumped (trapezoid) boundary mass, diagonal on the boundary nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryMass {
    /// `a(x_k)·w_k`.
    pub weighted: Vec<f64>,
    /// `w_k`, half the lengths of the two boundary edges at node `k`.
    pub unweighted: Vec<f64>,
}

// Interior 3-point rule, degree 2.
const QUAD: [[f64; 3]; 3] = [[2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0], [1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0], [1.0 / 6.0, 1.0 / 6.0, 2.0 / 3.0]];

/// Gradients of the three hat functions on triangle `t` and its area.
pub fn hat_gradients(mesh: &Mesh, t: usize) -> ([[f64; 2]; 3], f64) {
    let [a, b, c] = mesh.triangles[t].map(|i| mesh.nodes[i]);
    let det = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
    let g = [
        [(b[1] - c[1]) / det, (c[0] - b[0]) / det],
        [(c[1] - a[1]) / det, (a[0] - c[0]) / det],
        [(a[1] - b[1]) / det, (b[0] - a[0]) / det],
    ];
    (g, 0.5 * det)
}

/// Quadrature points (physical) and weights of triangle `t`.
pub fn triangle_quadrature(mesh: &Mesh, t: usize) -> [([f64; 2], [f64; 3], f64); 3] {
    let [a, b, c] = mesh.triangles[t].map(|i| mesh.nodes[i]);
    let area = mesh.triangle_area(t);
    QUAD.map(|l| {
        let p = [l[0] * a[0] + l[1] * b[0] + l[2] * c[0], l[0] * a[1] + l[1] * b[1] + l[2] * c[1]];
        (p, l, area / 3.0)
    })
}

pub fn assemble_stiffness(mesh: &Mesh, a: &WeightField) -> Result<Stiffness> {
    let locals: Vec<Result<[[f64; 3]; 3]>> = (0..mesh.triangles.len())
        .into_par_iter()
        .map(|t| {
            let (g, _) = hat_gradients(mesh, t);
            let mut int_a = 0.0;
            for (p, _, w) in triangle_quadrature(mesh, t) {
                let v = a.value(p);
                if !(v > 0.0) {
                    return Err(Error::NonpositiveWeight { x: p[0], y: p[1], value: v });
                }
                int_a += w * v;
            }
            let mut k = [[0.0; 3]; 3];
            for i in 0..3 {
                for j in 0..3 {
                    k[i][j] = int_a * (g[i][0] * g[j][0] + g[i][1] * g[j][1]);
                }
            }
            Ok(k)
        })
        .collect();
    let n = mesh.n_nodes();
    let mut tri = TriMat::with_capacity((n, n), 9 * mesh.triangles.len());
    for (t, local) in locals.into_iter().enumerate() {
        let k = local?;
        let ids = mesh.triangles[t];
        for i in 0..3 {
            for j in 0..3 {
                tri.add_triplet(ids[i], ids[j], k[i][j]);
            }
        }
    }
    Ok(Stiffness { matrix: tri.to_csr() })
}

pub fn assemble_boundary_mass(mesh: &Mesh, a: &WeightField) -> BoundaryMass {
    let unweighted = mesh.boundary_weights();
    let weighted = unweighted.iter().enumerate().map(|(k, w)| a.value(mesh.nodes[k]) * w).collect();
    BoundaryMass { weighted, unweighted }
}

impl Stiffness {
    pub fn n(&self) -> usize {
        self.matrix.rows()
    }

    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n()];
        for (i, row) in self.matrix.outer_iterator().enumerate() {
            let mut s = 0.0;
            for (j, v) in row.iter() {
                s += v * u[j];
            }
            out[i] = s;
        }
        out
    }

    /// `uᵀKu`.
    pub fn energy(&self, u: &[f64]) -> f64 {
        self.apply(u).iter().zip(u).map(|(a, b)| a * b).sum()
    }

    /// Largest absolute row sum.
    pub fn norm_inf(&self) -> f64 {
        self.matrix.outer_iterator().map(|r| r.iter().map(|(_, v)| v.abs()).sum::<f64>()).fold(0.0, f64::max)
    }

    pub fn asymmetry(&self) -> f64 {
        let t = self.matrix.transpose_view().to_csr();
        let mut worst = 0.0f64;
        for (i, row) in self.matrix.outer_iterator().enumerate() {
            for (j, v) in row.iter() {
                let w = t.get(i, j).copied().unwrap_or(0.0);
                worst = worst.max((v - w).abs());
            }
        }
        worst
    }
}

impl BoundaryMass {
    pub fn total_weighted(&self) -> f64 {
        self.weighted.iter().sum()
    }

    pub fn total_unweighted(&self) -> f64 {
        self.unweighted.iter().sum()
    }

    /// `∫_∂Ω a f`.
    pub fn weighted_integral(&self, f: &[f64]) -> f64 {
        self.weighted.iter().zip(f).map(|(w, v)| w * v).sum()
    }

    /// `∫_∂Ω f`.
    pub fn integral(&self, f: &[f64]) -> f64 {
        self.unweighted.iter().zip(f).map(|(w, v)| w * v).sum()
    }

    /// Boundary values of `a` at the nodes.
    pub fn a_values(&self) -> Vec<f64> {
        self.weighted.iter().zip(&self.unweighted).map(|(a, w)| a / w).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_mesh, BoundaryCurve, MeshOptions};

    #[test]
    fn constants_in_kernel() {
        let m = build_mesh(&BoundaryCurve::unit_disk(), &MeshOptions::uniform(0.15)).unwrap();
        let a = WeightField::parse("1 + 0.3*x1*x2").unwrap();
        let k = assemble_stiffness(&m, &a).unwrap();
        let r = k.apply(&vec![1.0; m.n_nodes()]);
        let worst = r.iter().fold(0.0f64, |w, v| w.max(v.abs()));
        assert!(worst <= 1e-10 * k.norm_inf());
        assert!(k.asymmetry() <= 1e-12 * k.norm_inf());
    }

    #[test]
    fn weighted_square_energy() {
        let c = BoundaryCurve::rectangle(1.0, 2.0, 0.0, 1.0);
        let m = build_mesh(&c, &MeshOptions::uniform(0.2)).unwrap();
        let k = assemble_stiffness(&m, &WeightField::x1()).unwrap();
        let u: Vec<f64> = m.nodes.iter().map(|p| p[1]).collect();
        assert!((k.energy(&u) - 1.5).abs() < 1e-12);
    }

    #[test]
    fn boundary_mass_linear_in_a() {
        let m = build_mesh(&BoundaryCurve::unit_disk(), &MeshOptions::uniform(0.2)).unwrap();
        let b1 = assemble_boundary_mass(&m, &WeightField::constant(1.0));
        let b2 = assemble_boundary_mass(&m, &WeightField::constant(2.0));
        for (x, y) in b1.weighted.iter().zip(&b2.weighted) {
            assert_eq!(2.0 * x, *y);
        }
    }
}
