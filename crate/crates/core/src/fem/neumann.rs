use super::field::{boundary_to_full, Field};
use super::FemProblem;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeumannOptions {
    /// Relative compatibility tolerance on `|∫ a f| / ∫ a |f|`.
    pub tol: f64,
    /// Subtract the weighted mean of incompatible data instead of rejecting it.
    pub project: bool,
}

impl Default for NeumannOptions {
    fn default() -> Self {
        NeumannOptions { tol: 1e-8, project: false }
    }
}

/// Weak solution of `div(a∇w) = 0`, `∂_ν w = f` with `∫_∂Ω a w = 0`.
pub fn solve_neumann(p: &FemProblem, f: &[f64], opts: NeumannOptions) -> Result<Field> {
    let nb = p.mesh.n_boundary;
    if f.len() != nb {
        return Err(Error::InvalidInput(format!("boundary data has {} values, mesh has {nb} boundary nodes", f.len())));
    }
    let defect = p.mass.weighted_integral(f).abs();
    let scale: f64 = p.mass.weighted.iter().zip(f).map(|(w, v)| w * v.abs()).sum();
    if defect > opts.tol * scale && !opts.project {
        return Err(Error::Incompatible { defect, allowed: opts.tol * scale });
    }
    let mean = p.mass.weighted_integral(f) / p.mass.total_weighted();
    let load: Vec<f64> = f.iter().zip(&p.mass.weighted).map(|(v, w)| w * (v - mean)).collect();
    solve_load(p, &boundary_to_full(&p.mesh, &load))
}

/// Solves `K w = F` for a compatible nodal load, with `∫_∂Ω a w = 0`.
pub fn solve_load(p: &FemProblem, load: &[f64]) -> Result<Field> {
    solve_load_scaled(p, load, 0.0)
}

/// As [`solve_load`], judging the residual against at least `reference`, the size of the
/// load before any cancellation.
pub fn solve_load_scaled(p: &FemProblem, load: &[f64], reference: f64) -> Result<Field> {
    let (w, _) = p.sys.solve_constrained(load)?;
    let kw = p.k.apply(&w);
    let res = kw.iter().zip(load).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    let scale = load.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(p.k.norm_inf() * max_abs(&w)).max(reference);
    if res > 1e-10 * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::SolverBreakdown(format!("Neumann residual {res:e} exceeds 1e-10 relative to {scale:e}")));
    }
    Ok(Field { values: w })
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// `u − ∫a u/∫a`; returns the projected field and the removed mean.
pub fn project_mean_free(p: &FemProblem, u: &Field) -> (Field, f64) {
    let s = p.mass.weighted_integral(u.trace(&p.mesh)) / p.mass.total_weighted();
    (Field { values: u.values.iter().map(|v| v - s).collect() }, s)
}
