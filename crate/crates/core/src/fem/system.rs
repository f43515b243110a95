use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use sprs::{CsMat, FillInReduction, TriMat};
use sprs_ldl::{Ldl, LdlNumeric};

use super::assembly::{BoundaryMass, Stiffness};
use crate::error::{Error, Result};
use crate::geometry::Mesh;

/// Static condensation of the stiffness onto the boundary nodes.
///
/// Boundary nodes are `0..nb`, interior nodes `nb..n`. The interior block is factored
/// once; the Schur complement `S = K_bb − K_bi K_ii⁻¹ K_ib` is formed densely.
pub struct Condensed {
    pub nb: usize,
    pub n: usize,
    kii: Option<LdlNumeric<f64, usize>>,
    /// Interior–boundary coupling, `(n − nb) × nb`, CSR.
    kib: CsMat<f64>,
    /// Boundary–interior coupling, `nb × (n − nb)`, CSR.
    kbi: CsMat<f64>,
    pub schur: DMatrix<f64>,
    /// Constraint row `c_k = a_k w_k` for `∫_∂Ω a u = 0`.
    pub constraint: Vec<f64>,
    augmented: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl Condensed {
    pub fn new(mesh: &Mesh, k: &Stiffness, mass: &BoundaryMass) -> Result<Self> {
        let n = mesh.n_nodes();
        let nb = mesh.n_boundary;
        let ni = n - nb;
        let mut tii = TriMat::new((ni, ni));
        let mut tib = TriMat::new((ni, nb));
        let mut tbi = TriMat::new((nb, ni));
        let mut kbb = DMatrix::<f64>::zeros(nb, nb);
        for (i, row) in k.matrix.outer_iterator().enumerate() {
            for (j, &v) in row.iter() {
                match (i < nb, j < nb) {
                    (true, true) => kbb[(i, j)] += v,
                    (true, false) => tbi.add_triplet(i, j - nb, v),
                    (false, true) => tib.add_triplet(i - nb, j, v),
                    (false, false) => tii.add_triplet(i - nb, j - nb, v),
                }
            }
        }
        let kib: CsMat<f64> = tib.to_csr();
        let kbi: CsMat<f64> = tbi.to_csr();
        let kii = if ni > 0 {
            let mat: CsMat<f64> = tii.to_csc();
            let f = Ldl::new()
                .fill_in_reduction(FillInReduction::ReverseCuthillMcKee)
                .numeric(mat.view())
                .map_err(|e| Error::SolverBreakdown(format!("interior factorization: {e:?}")))?;
            Some(f)
        } else {
            None
        };

        let kib_csc = kib.to_csc();
        let columns: Vec<Vec<f64>> = (0..nb)
            .into_par_iter()
            .map(|j| {
                let mut col = vec![0.0; ni];
                if let Some(c) = kib_csc.outer_view(j) {
                    for (i, &v) in c.iter() {
                        col[i] = v;
                    }
                }
                let x = match &kii {
                    Some(f) => f.solve(&col),
                    None => col,
                };
                let kx = spmv(&kbi, &x);
                (0..nb).map(|i| kbb[(i, j)] - kx[i]).collect()
            })
            .collect();
        let mut schur = DMatrix::zeros(nb, nb);
        for (j, col) in columns.iter().enumerate() {
            for i in 0..nb {
                schur[(i, j)] = col[i];
            }
        }
        let st = schur.transpose();
        schur = (&schur + &st) * 0.5;

        let constraint = mass.weighted.clone();
        let augmented = augmented_matrix(&schur, &constraint).lu();
        Ok(Condensed { nb, n, kii, kib, kbi, schur, constraint, augmented })
    }

    /// `K_ii⁻¹ v` for an interior vector.
    pub fn interior_solve(&self, v: &[f64]) -> Vec<f64> {
        match &self.kii {
            Some(f) => f.solve(&v.to_vec()),
            None => vec![],
        }
    }

    /// Full nodal vector from boundary values and an interior load.
    pub fn extend(&self, ub: &[f64], fi: Option<&[f64]>) -> Vec<f64> {
        let ni = self.n - self.nb;
        let mut rhs = spmv(&self.kib, ub);
        for r in rhs.iter_mut() {
            *r = -*r;
        }
        if let Some(fi) = fi {
            for i in 0..ni {
                rhs[i] += fi[i];
            }
        }
        let ui = self.interior_solve(&rhs);
        let mut u = ub.to_vec();
        u.extend(ui);
        u
    }

    /// Boundary load after eliminating an interior load: `F_b − K_bi K_ii⁻¹ F_i`.
    pub fn condense_load(&self, f: &[f64]) -> Vec<f64> {
        let (fb, fi) = f.split_at(self.nb);
        if fi.iter().all(|&v| v == 0.0) {
            return fb.to_vec();
        }
        let y = self.interior_solve(fi);
        let ky = spmv(&self.kbi, &y);
        fb.iter().zip(&ky).map(|(a, b)| a - b).collect()
    }

    /// Solves `K u = f` subject to `∫_∂Ω a u = 0`; returns `u` and the Lagrange multiplier.
    ///
    /// For compatible loads the multiplier vanishes up to round-off.
    pub fn solve_constrained(&self, f: &[f64]) -> Result<(Vec<f64>, f64)> {
        let g = self.condense_load(f);
        let mut rhs = DVector::zeros(self.nb + 1);
        for i in 0..self.nb {
            rhs[i] = g[i];
        }
        let x = self.augmented.solve(&rhs).ok_or_else(|| Error::SolverBreakdown("singular constrained boundary system".into()))?;
        let ub: Vec<f64> = x.iter().take(self.nb).copied().collect();
        let u = self.extend(&ub, Some(&f[self.nb..]));
        Ok((u, x[self.nb]))
    }

    pub fn schur_apply(&self, ub: &[f64]) -> Vec<f64> {
        let v = DVector::from_column_slice(ub);
        (&self.schur * v).iter().copied().collect()
    }
}

fn augmented_matrix(s: &DMatrix<f64>, c: &[f64]) -> DMatrix<f64> {
    let nb = s.nrows();
    let mut m = DMatrix::zeros(nb + 1, nb + 1);
    m.view_mut((0, 0), (nb, nb)).copy_from(s);
    for i in 0..nb {
        m[(i, nb)] = c[i];
        m[(nb, i)] = c[i];
    }
    m
}

pub fn spmv(m: &CsMat<f64>, x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; m.rows()];
    for (i, row) in m.outer_iterator().enumerate() {
        let mut s = 0.0;
        for (j, v) in row.iter() {
            s += v * x[j];
        }
        out[i] = s;
    }
    out
}
