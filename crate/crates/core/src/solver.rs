use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::asymptotics::{build_ansatz, AnsatzConfig};
use crate::error::{Error, Result};
use crate::fem::{FemProblem, Field};
use crate::geometry::Point;
use crate::greens::Normalization;
use crate::io::write_json;
use crate::spectrum::steklov_spectrum;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NewtonOptions {
    /// Relative residual tolerance.
    pub tol: f64,
    pub max_iter: usize,
    pub backtrack: f64,
    pub min_step: f64,
    /// Armijo sufficient-decrease constant on the residual norm.
    pub armijo: f64,
    /// Largest admissible `|u|` on the boundary.
    pub guard: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions { tol: 1e-10, max_iter: 50, backtrack: 0.5, min_step: 1.0 / 1024.0, armijo: 1e-4, guard: 700.0 }
    }
}

impl NewtonOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::InvalidInput("Newton tolerance must be positive".into()));
        }
        if !(self.guard > 0.0 && self.guard <= 700.0) {
            return Err(Error::InvalidInput(format!("overflow guard {} outside (0, 700]", self.guard)));
        }
        if !(self.backtrack > 0.0 && self.backtrack < 1.0) || !(self.min_step > 0.0 && self.min_step <= 1.0) {
            return Err(Error::InvalidInput("backtracking factor and minimum step must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewtonReport {
    pub iterations: usize,
    /// Final `‖Ku − λN(u)‖ / (‖Ku‖ + λ‖N(u)‖)`.
    pub residual: f64,
    /// Absolute residual norm per iterate, starting with the initial guess.
    pub history: Vec<f64>,
    /// Ratio of the last two absolute residuals.
    pub tail_ratio: Option<f64>,
    /// Converged in at most two steps, or with a tail ratio ≤ 0.1.
    pub quadratic: bool,
}

/// `N(u)_k = a_k w_k sinh u_k` on the boundary nodes.
fn nonlinearity(p: &FemProblem, ub: &[f64]) -> Vec<f64> {
    ub.iter().zip(&p.mass.weighted).map(|(u, w)| w * u.sinh()).collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Boundary residual `S u_b − λN(u_b)` and its relative size.
pub fn boundary_residual(p: &FemProblem, lambda: f64, ub: &[f64]) -> (Vec<f64>, f64) {
    let su = p.sys.schur_apply(ub);
    let n = nonlinearity(p, ub);
    let r: Vec<f64> = su.iter().zip(&n).map(|(a, b)| a - lambda * b).collect();
    let scale = norm(&su) + lambda * norm(&n);
    let rn = norm(&r);
    (r, if scale > 0.0 { rn / scale } else { rn })
}

/// Relative residual of a full nodal field (interior rows included).
pub fn residual_norm(p: &FemProblem, lambda: f64, u: &Field) -> f64 {
    let ku = p.k.apply(&u.values);
    let nb = p.nb();
    let n = nonlinearity(p, &u.values[..nb]);
    let mut r = ku.clone();
    for k in 0..nb {
        r[k] -= lambda * n[k];
    }
    let scale = norm(&ku) + lambda * norm(&n);
    if scale > 0.0 {
        norm(&r) / scale
    } else {
        norm(&r)
    }
}

/// `S − λ diag(a_k w_k cosh u_k)`.
pub fn jacobian(p: &FemProblem, lambda: f64, ub: &[f64]) -> DMatrix<f64> {
    let mut j = p.sys.schur.clone();
    for k in 0..ub.len() {
        j[(k, k)] -= lambda * p.mass.weighted[k] * ub[k].cosh();
    }
    j
}

/// Known solutions repelled by the shifted-norm deflation operator
/// `M(u) = Π_i (‖u − u_i‖_a^{−p} + shift)`.
#[derive(Debug, Clone)]
pub struct Deflation {
    pub known: Vec<Vec<f64>>,
    pub power: f64,
    pub shift: f64,
}

impl Deflation {
    pub fn new(known: Vec<Vec<f64>>) -> Self {
        Deflation { known, power: 2.0, shift: 1.0 }
    }

    pub fn is_empty(&self) -> bool {
        self.known.is_empty()
    }

    /// `M(u)` and `∇M(u)` with respect to the boundary values.
    fn factor(&self, p: &FemProblem, ub: &[f64]) -> (f64, Vec<f64>) {
        let mut m = 1.0;
        let mut grad_log = vec![0.0; ub.len()];
        for k in &self.known {
            let e: Vec<f64> = ub.iter().zip(k).map(|(a, b)| a - b).collect();
            let se = p.sys.schur_apply(&e);
            let ce = p.mass.weighted_integral(&e);
            let d2 = e.iter().zip(&se).map(|(a, b)| a * b).sum::<f64>() + ce * ce;
            let d = d2.sqrt().max(f64::MIN_POSITIVE);
            let mi = d.powf(-self.power) + self.shift;
            m *= mi;
            // ∂m_i = −(p/2) d^{−p−2} ∂(d²), ∂(d²) = 2(S e + c (cᵀe)).
            let coef = -0.5 * self.power * d.powf(-self.power - 2.0) / mi;
            for j in 0..ub.len() {
                grad_log[j] += coef * 2.0 * (se[j] + p.mass.weighted[j] * ce);
            }
        }
        let grad = grad_log.iter().map(|g| g * m).collect();
        (m, grad)
    }
}

/// Distance `‖u − v‖_a` between boundary traces, via the condensed energy.
pub fn energy_distance(p: &FemProblem, u: &[f64], v: &[f64]) -> f64 {
    let e: Vec<f64> = u.iter().zip(v).map(|(a, b)| a - b).collect();
    let se = p.sys.schur_apply(&e);
    let ce = p.mass.weighted_integral(&e);
    (e.iter().zip(&se).map(|(a, b)| a * b).sum::<f64>() + ce * ce).max(0.0).sqrt()
}

pub fn newton_solve(p: &FemProblem, lambda: f64, u0: &Field, opts: &NewtonOptions) -> Result<(Field, NewtonReport)> {
    newton_solve_deflated(p, lambda, u0, opts, &Deflation::new(vec![]))
}

/// Damped Newton for `K u = λN(u)`; with a non-empty deflation the step is the Newton step of
/// `M(u)·F(u)`, obtained from the undeflated one by a Sherman–Morrison scaling.
pub fn newton_solve_deflated(
    p: &FemProblem,
    lambda: f64,
    u0: &Field,
    opts: &NewtonOptions,
    deflation: &Deflation,
) -> Result<(Field, NewtonReport)> {
    opts.validate()?;
    if !(lambda > 0.0) {
        return Err(Error::InvalidInput(format!("λ must be positive, got {lambda}")));
    }
    if u0.len() != p.mesh.n_nodes() || !u0.is_finite() {
        return Err(Error::InvalidInput("initial guess must be a finite nodal field on the mesh".into()));
    }
    let nb = p.nb();
    let mut ub = u0.values[..nb].to_vec();
    let start = ub.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if start > opts.guard {
        return Err(Error::OverflowGuard { max_abs: start, guard: opts.guard });
    }
    let merit = |ub: &[f64], r: &[f64]| -> f64 {
        if deflation.is_empty() {
            norm(r)
        } else {
            deflation.factor(p, ub).0 * norm(r)
        }
    };
    let (mut r, mut rel) = boundary_residual(p, lambda, &ub);
    let mut history = vec![norm(&r)];
    let mut iterations = 0;
    while rel > opts.tol {
        if iterations == opts.max_iter {
            return Err(Error::NewtonDiverged { iterations, residual: rel });
        }
        let lu = jacobian(p, lambda, &ub).lu();
        let diag = lu.u().diagonal();
        let (dmin, dmax) = diag.iter().fold((f64::INFINITY, 0.0f64), |(a, b), v| (a.min(v.abs()), b.max(v.abs())));
        let pivot_ratio = if dmax > 0.0 { dmin / dmax } else { 0.0 };
        if !(pivot_ratio > 1e-14) {
            return Err(Error::SingularJacobian { pivot_ratio });
        }
        let rhs = DVector::from_iterator(nb, r.iter().map(|v| -v));
        let mut delta: Vec<f64> = lu.solve(&rhs).ok_or(Error::SingularJacobian { pivot_ratio })?.iter().copied().collect();
        if !deflation.is_empty() {
            let (m, g) = deflation.factor(p, &ub);
            let gd: f64 = g.iter().zip(&delta).map(|(a, b)| a * b).sum();
            let denom = m - gd;
            if denom.abs() > f64::MIN_POSITIVE {
                let tau = m / denom;
                for d in delta.iter_mut() {
                    *d *= tau;
                }
            }
        }
        let m0 = merit(&ub, &r);
        let mut t = 1.0;
        let mut overflowed = false;
        let accepted = loop {
            let trial: Vec<f64> = ub.iter().zip(&delta).map(|(u, d)| u + t * d).collect();
            let peak = trial.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if peak <= opts.guard && peak.is_finite() {
                let (rt, relt) = boundary_residual(p, lambda, &trial);
                if merit(&trial, &rt) <= (1.0 - opts.armijo * t) * m0 || relt <= opts.tol {
                    break Some((trial, rt, relt));
                }
            } else {
                overflowed = true;
            }
            t *= opts.backtrack;
            if t < opts.min_step {
                break None;
            }
        };
        iterations += 1;
        match accepted {
            Some((u_new, r_new, rel_new)) => {
                ub = u_new;
                r = r_new;
                rel = rel_new;
                history.push(norm(&r));
            }
            None if overflowed => {
                let max_abs = ub.iter().zip(&delta).map(|(u, d)| (u + d).abs()).fold(0.0, f64::max);
                return Err(Error::OverflowGuard { max_abs, guard: opts.guard });
            }
            None => return Err(Error::NewtonDiverged { iterations, residual: rel }),
        }
    }
    let n = history.len();
    let tail_ratio = if n >= 2 && history[n - 2] > 0.0 { Some(history[n - 1] / history[n - 2]) } else { None };
    let quadratic = iterations <= 2 || tail_ratio.is_some_and(|q| q <= 0.1);
    let u = Field { values: p.sys.extend(&ub, None) };
    Ok((u, NewtonReport { iterations, residual: rel, history, tail_ratio, quadratic }))
}

/// How a branch is started.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Seed {
    Trivial,
    /// `u0 = t·v_n`, with `v_n` scaled to unit maximum on the boundary.
    Eigen {
        index: usize,
        amplitude: f64,
    },
    /// The two-bubble ansatz at the first scheduled `λ`.
    Ansatz {
        xi: [Point; 2],
        mu: [f64; 2],
        #[serde(default)]
        normalization: Normalization,
    },
}

/// Geometric schedule from `start` down to `end` (inclusive) with ratio `factor`.
pub fn lambda_schedule(start: f64, end: f64, factor: f64) -> Result<Vec<f64>> {
    if !(start > 0.0 && end > 0.0 && end <= start) || !(factor > 0.0 && factor < 1.0) {
        return Err(Error::InvalidInput(format!("bad λ schedule: start {start}, end {end}, factor {factor}")));
    }
    let mut out = vec![start];
    let mut l = start;
    while l * factor > end * (1.0 + 1e-12) {
        l *= factor;
        out.push(l);
    }
    if end < start && (out[out.len() - 1] - end).abs() > 1e-12 * end {
        out.push(end);
    }
    Ok(out)
}

/// Initial guess for the first scheduled `λ`.
///
/// Ansatz seeds use the bubble parameter `λ/2`: the profile `u_j^λ` solves `∂_ν u = λe^u`
/// near `ξ_j`, which matches `λ sinh u` only after halving.
pub fn seed_field(p: &FemProblem, seed: &Seed, lambda: f64) -> Result<Field> {
    match seed {
        Seed::Trivial => Ok(Field::zeros(p.mesh.n_nodes())),
        Seed::Eigen { index, amplitude } => {
            if *index == 0 {
                return Err(Error::InvalidInput("eigen seeds need n ≥ 1 (n = 0 is the constant mode)".into()));
            }
            let spec = steklov_spectrum(p, *index)?;
            let v = &spec.fields[*index];
            let m = v.trace(&p.mesh).iter().fold(0.0f64, |m, x| m.max(x.abs()));
            Ok(v.scaled(amplitude / m))
        }
        Seed::Ansatz { xi, mu, normalization } => {
            let mut cfg = AnsatzConfig::new(*xi, *mu, 0.5 * lambda);
            cfg.normalization = *normalization;
            Ok(build_ansatz(p, &cfg)?.u)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContinuationOptions {
    pub newton: NewtonOptions,
    pub max_bisections: usize,
    /// Relative `‖·‖_a` distance below which a solution counts as a deflated one.
    pub deflation_threshold: f64,
    /// Extrapolate the last two solutions in `log λ` before falling back to the previous one.
    pub secant_predictor: bool,
}

impl Default for ContinuationOptions {
    fn default() -> Self {
        ContinuationOptions { newton: NewtonOptions::default(), max_bisections: 6, deflation_threshold: 1e-3, secant_predictor: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BranchPoint {
    pub lambda: f64,
    pub u: Field,
    pub iterations: usize,
    pub residual: f64,
    pub tail_ratio: Option<f64>,
    /// Intermediate `λ` values needed to reach this point.
    pub substeps: usize,
    /// Re-solved with deflation after landing on a known solution.
    pub deflated: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub seed: Seed,
    pub points: Vec<BranchPoint>,
    /// Why the branch stopped before the end of the schedule.
    pub terminated: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct PointIndex {
    lambda: f64,
    iterations: usize,
    residual: f64,
    tail_ratio: Option<f64>,
    substeps: usize,
    deflated: bool,
    file: String,
}

#[derive(Serialize, Deserialize)]
struct BranchIndex {
    seed: Seed,
    terminated: Option<String>,
    points: Vec<PointIndex>,
}

impl Branch {
    pub fn lambdas(&self) -> Vec<f64> {
        self.points.iter().map(|q| q.lambda).collect()
    }

    /// Point at `lambda` (relative tolerance 1e-12).
    pub fn at(&self, lambda: f64) -> Option<&BranchPoint> {
        self.points.iter().find(|q| (q.lambda - lambda).abs() <= 1e-12 * lambda)
    }

    pub fn negated(&self) -> Branch {
        Branch {
            seed: self.seed.clone(),
            points: self.points.iter().map(|q| BranchPoint { u: q.u.scaled(-1.0), ..q.clone() }).collect(),
            terminated: self.terminated.clone(),
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut points = vec![];
        for (k, q) in self.points.iter().enumerate() {
            let file = format!("u_{k:03}.csv");
            q.u.write_csv(&dir.join(&file))?;
            points.push(PointIndex {
                lambda: q.lambda,
                iterations: q.iterations,
                residual: q.residual,
                tail_ratio: q.tail_ratio,
                substeps: q.substeps,
                deflated: q.deflated,
                file,
            });
        }
        write_json(&dir.join("branch.json"), &BranchIndex { seed: self.seed.clone(), terminated: self.terminated.clone(), points })
    }

    pub fn load(dir: &Path) -> Result<Branch> {
        let index: BranchIndex = serde_json::from_str(&std::fs::read_to_string(dir.join("branch.json"))?)?;
        let points = index
            .points
            .into_iter()
            .map(|q| -> Result<BranchPoint> {
                Ok(BranchPoint {
                    lambda: q.lambda,
                    u: Field::from_csv(&std::fs::read_to_string(dir.join(&q.file))?)?,
                    iterations: q.iterations,
                    residual: q.residual,
                    tail_ratio: q.tail_ratio,
                    substeps: q.substeps,
                    deflated: q.deflated,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Branch { seed: index.seed, points, terminated: index.terminated })
    }
}

struct Stepper<'a> {
    p: &'a FemProblem,
    opts: &'a ContinuationOptions,
    deflate: &'a [Branch],
    trivial: bool,
}

impl Stepper<'_> {
    fn deflation_at(&self, lambda: f64) -> Deflation {
        let nb = self.p.nb();
        let mut known: Vec<Vec<f64>> = self.deflate.iter().filter_map(|b| b.at(lambda)).map(|q| q.u.values[..nb].to_vec()).collect();
        if self.trivial {
            known.push(vec![0.0; nb]);
        }
        Deflation::new(known)
    }

    fn is_known(&self, u: &Field, d: &Deflation) -> bool {
        let nb = self.p.nb();
        d.known.iter().any(|k| {
            let scale = energy_distance(self.p, k, &vec![0.0; nb]).max(1.0);
            energy_distance(self.p, &u.values[..nb], k) <= self.opts.deflation_threshold * scale
        })
    }

    /// One converged solve at `lambda` from `guess`, deflating if it lands on a known solution.
    fn solve(&self, lambda: f64, guess: &Field) -> Result<(Field, NewtonReport, bool)> {
        let d = self.deflation_at(lambda);
        let first = newton_solve(self.p, lambda, guess, &self.opts.newton);
        if let Ok((u, rep)) = &first {
            if d.is_empty() || !self.is_known(u, &d) {
                return Ok((u.clone(), rep.clone(), false));
            }
        }
        if d.is_empty() {
            return first.map(|(u, r)| (u, r, false));
        }
        let (u, rep) = newton_solve_deflated(self.p, lambda, guess, &self.opts.newton, &d)?;
        if self.is_known(&u, &d) {
            return Err(Error::NewtonDiverged { iterations: rep.iterations, residual: rep.residual });
        }
        Ok((u, rep, true))
    }

    /// Reaches `to` from the converged `(from, u)`, bisecting in `log λ` on failure.
    fn step(&self, from: f64, u: &Field, predictor: &Field, to: f64, depth: usize) -> Result<(Field, NewtonReport, bool, usize)> {
        let mut last_err = None;
        for guess in [predictor, u] {
            match self.solve(to, guess) {
                Ok((v, rep, defl)) => return Ok((v, rep, defl, 0)),
                Err(e) => last_err = Some(e),
            }
            if std::ptr::eq(predictor, u) {
                break;
            }
        }
        if depth >= self.opts.max_bisections {
            return Err(last_err.unwrap());
        }
        let mid = (from * to).sqrt();
        let (um, _, _, s1) = self.step(from, u, u, mid, depth + 1)?;
        let (v, rep, defl, s2) = self.step(mid, &um, &um, to, depth + 1)?;
        Ok((v, rep, defl, s1 + s2 + 1))
    }
}

fn secant(prev: &BranchPoint, last: &BranchPoint, to: f64) -> Field {
    let s = (to / last.lambda).ln() / (last.lambda / prev.lambda).ln();
    Field { values: last.u.values.iter().zip(&prev.u.values).map(|(a, b)| a + s * (a - b)).collect() }
}

/// Natural continuation along a strictly decreasing `λ` schedule.
///
/// Eigen seeds also deflate the trivial solution, which otherwise attracts small-amplitude guesses.
pub fn continuation(p: &FemProblem, seed: &Seed, schedule: &[f64], opts: &ContinuationOptions, deflate: &[Branch]) -> Result<Branch> {
    if schedule.is_empty() || schedule.windows(2).any(|w| w[1] >= w[0]) || schedule[schedule.len() - 1] <= 0.0 {
        return Err(Error::InvalidInput("λ schedule must be positive and strictly decreasing".into()));
    }
    let stepper = Stepper { p, opts, deflate, trivial: matches!(seed, Seed::Eigen { .. }) };
    let u0 = seed_field(p, seed, schedule[0])?;
    let (u, rep, deflated) = stepper.solve(schedule[0], &u0)?;
    let mut branch = Branch {
        seed: seed.clone(),
        points: vec![BranchPoint {
            lambda: schedule[0],
            u,
            iterations: rep.iterations,
            residual: rep.residual,
            tail_ratio: rep.tail_ratio,
            substeps: 0,
            deflated,
        }],
        terminated: None,
    };
    for &l in &schedule[1..] {
        let n = branch.points.len();
        let last = &branch.points[n - 1];
        let predictor = if opts.secant_predictor && n >= 2 { secant(&branch.points[n - 2], last, l) } else { last.u.clone() };
        match stepper.step(last.lambda, &last.u, &predictor, l, 0) {
            Ok((u, rep, deflated, substeps)) => branch.points.push(BranchPoint {
                lambda: l,
                u,
                iterations: rep.iterations,
                residual: rep.residual,
                tail_ratio: rep.tail_ratio,
                substeps,
                deflated,
            }),
            Err(e) => {
                branch.terminated = Some(format!("no convergence at λ = {l:e}: {e}"));
                break;
            }
        }
    }
    Ok(branch)
}
