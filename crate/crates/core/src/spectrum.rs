use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::fem::{FemProblem, Field};
use crate::io::{fmt17, Table};

/// Eigenpairs of `∫ a∇u∇φ = λ ∫_∂Ω a u φ`, orthonormal in
/// `‖u‖_a² = ∫ a|∇u|² + (∫_∂Ω a u)²`.
#[derive(Debug, Clone)]
pub struct SteklovSpectrum {
    pub eigenvalues: Vec<f64>,
    pub fields: Vec<Field>,
    /// `‖Kv − λB^a v‖ / ‖Kv‖` per pair (absolute for the constant mode).
    pub residuals: Vec<f64>,
    pub gram: DMatrix<f64>,
}

pub const DEFAULT_CLUSTER_GAP: f64 = 1e-6;

/// Relative gap for multiplicity detection on a mesh of size `h`: exactly degenerate pairs
/// split at the discretization level, roughly `h²`.
pub fn cluster_gap(h: f64) -> f64 {
    DEFAULT_CLUSTER_GAP.max(h * h)
}

/// Inner product associated with `‖·‖_a`.
pub fn energy_inner(p: &FemProblem, u: &[f64], v: &[f64]) -> f64 {
    let kv = p.k.apply(v);
    let dir: f64 = u.iter().zip(&kv).map(|(a, b)| a * b).sum();
    let nb = p.nb();
    dir + p.mass.weighted_integral(&u[..nb]) * p.mass.weighted_integral(&v[..nb])
}

pub fn steklov_spectrum(p: &FemProblem, k: usize) -> Result<SteklovSpectrum> {
    let nb = p.nb();
    if k + 1 > nb {
        return Err(Error::InvalidInput(format!("requested {} eigenpairs but only {nb} boundary unknowns", k + 1)));
    }
    let isq: Vec<f64> = p.mass.weighted.iter().map(|b| 1.0 / b.sqrt()).collect();
    let mut m = p.sys.schur.clone();
    for j in 0..nb {
        for i in 0..nb {
            m[(i, j)] *= isq[i] * isq[j];
        }
    }
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..nb).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));

    let total_a = p.mass.total_weighted();
    let mut eigenvalues = vec![0.0];
    let mut fields = vec![Field { values: vec![1.0 / total_a; p.mesh.n_nodes()] }];
    for &idx in order.iter().skip(1).take(k) {
        let lam = eig.eigenvalues[idx];
        if !(lam > 0.0) {
            return Err(Error::EigenNonConvergence { worst_residual: lam.abs() });
        }
        let xb: Vec<f64> = (0..nb).map(|i| eig.eigenvectors[(i, idx)] * isq[i]).collect();
        let u = p.sys.extend(&xb, None);
        eigenvalues.push(lam);
        fields.push(Field { values: u });
    }

    // Modified Gram–Schmidt in the energy product, then a sign convention.
    for i in 0..fields.len() {
        for j in 0..i {
            let c = energy_inner(p, &fields[i].values, &fields[j].values);
            let fj = fields[j].values.clone();
            for (a, b) in fields[i].values.iter_mut().zip(&fj) {
                *a -= c * b;
            }
        }
        let nrm = energy_inner(p, &fields[i].values, &fields[i].values).sqrt();
        let first = fields[i].values[..nb].iter().copied().find(|v| v.abs() > 1e-8 * nrm).unwrap_or(1.0);
        let s = first.signum() / nrm;
        for a in fields[i].values.iter_mut() {
            *a *= s;
        }
    }

    let mut residuals = Vec::with_capacity(fields.len());
    for (lam, f) in eigenvalues.iter().zip(&fields) {
        let kv = p.k.apply(&f.values);
        let mut r = 0.0f64;
        for (i, v) in kv.iter().enumerate() {
            let bv = if i < nb { lam * p.mass.weighted[i] * f.values[i] } else { 0.0 };
            r += (v - bv).powi(2);
        }
        let scale = kv.iter().map(|v| v * v).sum::<f64>().sqrt();
        residuals.push(if *lam == 0.0 { r.sqrt() } else { r.sqrt() / scale });
    }
    let worst = residuals.iter().copied().fold(0.0, f64::max);
    if worst > 1e-8 {
        return Err(Error::EigenNonConvergence { worst_residual: worst });
    }

    let n = fields.len();
    let mut gram = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            gram[(i, j)] = energy_inner(p, &fields[i].values, &fields[j].values);
        }
    }
    Ok(SteklovSpectrum { eigenvalues, fields, residuals, gram })
}

impl SteklovSpectrum {
    /// Groups eigenvalues whose relative gap is below `rel_gap`.
    pub fn clusters(&self, rel_gap: f64) -> Vec<Vec<usize>> {
        let mut out: Vec<Vec<usize>> = Vec::new();
        for (i, &l) in self.eigenvalues.iter().enumerate() {
            if let Some(last) = out.last_mut() {
                let prev = self.eigenvalues[*last.last().unwrap()];
                if (l - prev).abs() <= rel_gap * l.abs().max(prev.abs()) {
                    last.push(i);
                    continue;
                }
            }
            out.push(vec![i]);
        }
        out
    }

    pub fn multiplicities(&self, rel_gap: f64) -> Vec<usize> {
        self.clusters(rel_gap).iter().map(|c| c.len()).collect()
    }

    pub fn gram_defect(&self) -> f64 {
        let n = self.gram.nrows();
        (self.gram.clone() - DMatrix::identity(n, n)).amax()
    }

    pub fn to_table(&self) -> Table {
        let mut t = Table::new(&["n", "lambda", "residual"]);
        for (n, (l, r)) in self.eigenvalues.iter().zip(&self.residuals).enumerate() {
            t.push(vec![n.to_string(), fmt17(*l), fmt17(*r)]);
        }
        t
    }
}

/// Sign changes of a cyclic sequence, ignoring entries below `tol·max|v|`.
pub fn cyclic_sign_changes(values: &[f64], tol: f64) -> usize {
    let scale = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let signs: Vec<f64> = values.iter().filter(|v| v.abs() > tol * scale).map(|v| v.signum()).collect();
    if signs.is_empty() {
        return 0;
    }
    (0..signs.len()).filter(|&i| signs[i] != signs[(i + 1) % signs.len()]).count()
}
