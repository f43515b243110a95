use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::assembly::triangle_quadrature;
use crate::fem::{solve_load, solve_load_scaled, FemProblem, Field};
use crate::geometry::{build_mesh, BoundaryCurve, Grading, Locator, Mesh, MeshOptions, Point, WeightField};
use crate::io::write_json;

/// Boundary measure used to fix the additive constant of `G_a` and `H_j^λ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    #[default]
    Unweighted,
    Weighted,
}

fn dist2(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

/// Boundary node at `y`; fails when `y` is not on the boundary.
pub fn snap_to_boundary(p: &FemProblem, y: Point) -> Result<usize> {
    let (_, d) = p.mesh.curve.closest_param(y);
    if d > 1e-8 * p.mesh.curve.length() {
        return Err(Error::InvalidInput(format!("source ({}, {}) is not on the boundary (distance {d:e})", y[0], y[1])));
    }
    Ok(p.mesh.nearest_boundary_node(y))
}

/// Shifts `u` by a constant so that `∫_∂Ω u` (or `∫_∂Ω a u`) equals `target`.
fn normalize(p: &FemProblem, u: &mut [f64], norm: Normalization, target: f64) {
    let nb = p.nb();
    let (integral, measure) = match norm {
        Normalization::Unweighted => (p.mass.integral(&u[..nb]), p.mass.total_unweighted()),
        Normalization::Weighted => (p.mass.weighted_integral(&u[..nb]), p.mass.total_weighted()),
    };
    let c = (target - integral) / measure;
    for v in u.iter_mut() {
        *v += c;
    }
}

/// Discrete `G_a(·, y)`: a nodal flux `2π a(y)` at the node nearest `y`, balanced by the
/// weighted average, then shifted to zero boundary mean.
pub fn green_function(p: &FemProblem, y: Point, norm: Normalization) -> Result<(Field, usize)> {
    let j = snap_to_boundary(p, y)?;
    let ay = p.a.value(p.mesh.nodes[j]);
    let total = p.mass.total_weighted();
    let mut load = vec![0.0; p.mesh.n_nodes()];
    for (l, w) in load.iter_mut().zip(&p.mass.weighted) {
        *l = -2.0 * PI * ay * w / total;
    }
    load[j] += 2.0 * PI * ay;
    let mut g = solve_load(p, &load)?;
    normalize(p, &mut g.values, norm, 0.0);
    Ok((g, j))
}

fn node_neighbors(p: &FemProblem) -> Vec<BTreeSet<usize>> {
    let mut nbr = vec![BTreeSet::new(); p.mesh.n_nodes()];
    for t in &p.mesh.triangles {
        for k in 0..3 {
            nbr[t[k]].insert(t[(k + 1) % 3]);
            nbr[t[(k + 1) % 3]].insert(t[k]);
        }
    }
    nbr
}

/// `G + log|x − y|²`, with the value at the source node extrapolated linearly in distance
/// from the means over the first two graph rings around it.
pub fn regular_part(p: &FemProblem, g: &Field, node: usize) -> Field {
    let y = p.mesh.nodes[node];
    let mut h: Vec<f64> = p.mesh.nodes.iter().zip(&g.values).map(|(&x, v)| v + dist2(x, y).ln()).collect();
    let nbr = node_neighbors(p);
    let ring1: BTreeSet<usize> = nbr[node].clone();
    let mut ring2 = BTreeSet::new();
    for &i in &ring1 {
        for &k in &nbr[i] {
            if k != node && !ring1.contains(&k) {
                ring2.insert(k);
            }
        }
    }
    let mean = |ring: &BTreeSet<usize>| -> (f64, f64) {
        let n = ring.len() as f64;
        let hv = ring.iter().map(|&i| h[i]).sum::<f64>() / n;
        let d = ring.iter().map(|&i| dist2(p.mesh.nodes[i], y).sqrt()).sum::<f64>() / n;
        (hv, d)
    };
    let (h1, d1) = mean(&ring1);
    let (h2, d2) = mean(&ring2);
    h[node] = h1 - d1 * (h2 - h1) / (d2 - d1);
    Field { values: h }
}

/// `∫_∂Ω log|x − y|² φ` along the exact curve with `y = γ(t0)`, where `φ = 1` or `a`.
///
/// The logarithmic singularity is removed with `log(4 sin²(π(t − t0)))`, whose integral over a
/// period vanishes; the remaining integrands are continuous and the periodic trapezoid rule applies.
pub fn boundary_log_integral(curve: &BoundaryCurve, a: &WeightField, t0: f64, norm: Normalization) -> f64 {
    let n = 1 << 14;
    let y = curve.point(t0);
    let density = |t: f64| -> f64 {
        let s = curve.speed(t);
        match norm {
            Normalization::Unweighted => s,
            Normalization::Weighted => s * a.value(curve.point(t)),
        }
    };
    let d0 = density(t0);
    let s0 = curve.speed(t0);
    let mut total = 0.0;
    for k in 0..n {
        let tau = k as f64 / n as f64;
        let t = t0 + tau;
        let d = density(t);
        let term = if k == 0 {
            (s0 * s0 / (4.0 * PI * PI)).ln() * d0
        } else {
            let sn = 4.0 * (PI * tau).sin().powi(2);
            (dist2(curve.point(t), y) / sn).ln() * d + sn.ln() * (d - d0)
        };
        total += term;
    }
    total / n as f64
}

/// Result of a direct regular-part solve.
#[derive(Debug, Clone)]
pub struct RegularPart {
    pub field: Field,
    pub node: usize,
    /// Flux-balance defect removed before the solve, relative to the total absolute load.
    pub compatibility_defect: f64,
}

/// Sub-triangle quadrature near the pole: the interior load behaves like `1/|x − y|`.
fn singular_load(p: &FemProblem, t: usize, f: &dyn Fn(Point) -> f64, levels: u32) -> [f64; 3] {
    let tri = p.mesh.triangles[t];
    let v = tri.map(|i| p.mesh.nodes[i]);
    let area = p.mesh.triangle_area(t);
    let n = 1usize << levels;
    let mut out = [0.0; 3];
    // Uniform subdivision into n² sub-triangles in barycentric coordinates.
    let bary = |i: f64, j: f64| -> [f64; 3] {
        let l1 = i / n as f64;
        let l2 = j / n as f64;
        [1.0 - l1 - l2, l1, l2]
    };
    let mut subs: Vec<[[f64; 3]; 3]> = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n - i {
            let (fi, fj) = (i as f64, j as f64);
            subs.push([bary(fi, fj), bary(fi + 1.0, fj), bary(fi, fj + 1.0)]);
            if i + j + 1 < n {
                subs.push([bary(fi + 1.0, fj), bary(fi + 1.0, fj + 1.0), bary(fi, fj + 1.0)]);
            }
        }
    }
    let w = area / (subs.len() as f64) / 3.0;
    for s in subs {
        for q in [[2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0], [1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0], [1.0 / 6.0, 1.0 / 6.0, 2.0 / 3.0]] {
            let mut l = [0.0; 3];
            for k in 0..3 {
                l[k] = q[0] * s[0][k] + q[1] * s[1][k] + q[2] * s[2][k];
            }
            let x = [l[0] * v[0][0] + l[1] * v[1][0] + l[2] * v[2][0], l[0] * v[0][1] + l[1] * v[1][1] + l[2] * v[2][1]];
            let fx = f(x);
            for k in 0..3 {
                out[k] += w * fx * l[k];
            }
        }
    }
    out
}

/// Assembles `∫ f φ_i` with the standard rule, refining triangles within `radius` of `pole`.
pub fn interior_load(p: &FemProblem, f: &(dyn Fn(Point) -> f64 + Sync), pole: Point, radius: f64) -> Vec<f64> {
    let contributions: Vec<[f64; 3]> = (0..p.mesh.triangles.len())
        .into_par_iter()
        .map(|t| {
            let tri = p.mesh.triangles[t];
            let near = tri.iter().any(|&i| dist2(p.mesh.nodes[i], pole) <= radius * radius);
            if near {
                singular_load(p, t, f, 3)
            } else {
                let mut out = [0.0; 3];
                for (x, l, w) in triangle_quadrature(&p.mesh, t) {
                    let fx = f(x);
                    for k in 0..3 {
                        out[k] += w * fx * l[k];
                    }
                }
                out
            }
        })
        .collect();
    let mut load = vec![0.0; p.mesh.n_nodes()];
    for (t, c) in contributions.iter().enumerate() {
        for k in 0..3 {
            load[p.mesh.triangles[t][k]] += c[k];
        }
    }
    load
}

/// Removes the net flux of a nodal load by adjusting its boundary part proportionally to `a w_k`.
pub fn balance_load(p: &FemProblem, load: &mut [f64]) -> f64 {
    let net: f64 = load.iter().sum();
    let scale: f64 = load.iter().map(|v| v.abs()).sum();
    let total = p.mass.total_weighted();
    for (l, w) in load.iter_mut().zip(&p.mass.weighted) {
        *l -= net * w / total;
    }
    if scale > 0.0 {
        net.abs() / scale
    } else {
        0.0
    }
}

/// `H_a(·, y)` from its own boundary-value problem: `div(a∇H) = 2∇a·(x−y)/|x−y|²`,
/// `∂_ν H = −2π a(y)/∫a + 2(x−y)·ν/|x−y|²`, normalized so that `G = log(1/|x−y|²) + H`
/// has zero boundary mean.
pub fn regular_part_direct(p: &FemProblem, y: Point, norm: Normalization) -> Result<RegularPart> {
    let j = snap_to_boundary(p, y)?;
    let y = p.mesh.nodes[j];
    let ay = p.a.value(y);
    let total = p.mass.total_weighted();
    let mut load = vec![0.0; p.mesh.n_nodes()];
    for (k, l) in load.iter_mut().enumerate().take(p.nb()) {
        let x = p.mesh.nodes[k];
        let g = if k == j {
            p.mesh.curve.curvature(p.mesh.boundary_params[k])
        } else {
            let nu = p.mesh.boundary_normal(k);
            2.0 * ((x[0] - y[0]) * nu[0] + (x[1] - y[1]) * nu[1]) / dist2(x, y)
        };
        *l = p.mass.weighted[k] * (g - 2.0 * PI * ay / total);
    }
    if !p.a.is_constant() {
        let a = &p.a;
        let f = move |x: Point| -> f64 {
            let r2 = dist2(x, y);
            if r2 == 0.0 {
                return 0.0;
            }
            let g = a.gradient(x);
            -2.0 * (g[0] * (x[0] - y[0]) + g[1] * (x[1] - y[1])) / r2
        };
        let near = 3.0 * p.mesh.h;
        let li = interior_load(p, &f, y, near);
        for (l, v) in load.iter_mut().zip(li) {
            *l += v;
        }
    }
    let reference = load.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(2.0 * PI * ay * p.mesh.h / total);
    let defect = balance_load(p, &mut load);
    let mut h = solve_load_scaled(p, &load, reference)?;
    let target = boundary_log_integral(&p.mesh.curve, &p.a, p.mesh.boundary_params[j], norm);
    normalize(p, &mut h.values, norm, target);
    Ok(RegularPart { field: h, node: j, compatibility_defect: defect })
}

/// Richardson estimate of `H_a(ξ, ξ)` over a mesh ladder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobinEstimate {
    pub xi: Point,
    pub value: f64,
    pub error: f64,
    /// Raw values on each ladder level, coarse to fine.
    pub raw: Vec<f64>,
    pub ladder: Vec<f64>,
    /// Ratio of successive ladder differences.
    pub ratio: f64,
    pub extrapolated: bool,
}

/// Richardson extrapolation of the last three values of a ladder refined by a constant factor.
pub fn richardson(raw: &[f64]) -> (f64, f64, f64, bool) {
    let n = raw.len();
    if n < 3 {
        let v = raw[n - 1];
        let err = if n == 2 { (raw[1] - raw[0]).abs() } else { f64::NAN };
        return (v, err, f64::NAN, false);
    }
    let (v1, v2, v3) = (raw[n - 3], raw[n - 2], raw[n - 1]);
    let (d1, d2) = (v1 - v2, v2 - v3);
    if d2 == 0.0 {
        return (v3, 0.0, f64::INFINITY, true);
    }
    let q = d1 / d2;
    if !(q > 1.0) {
        return (v3, 3.0 * d2.abs(), q, false);
    }
    let tail = d2 / (q - 1.0);
    (v3 - tail, tail.abs().min(3.0 * d2.abs()), q, true)
}

/// Mesh options for one ladder level: `base` with `h_max = h` and grading sizes scaled by `h/h0`.
pub fn ladder_options(base: &MeshOptions, h0: f64, h: f64, xi: &[Point]) -> MeshOptions {
    let mut o = base.clone();
    o.h_max = h;
    o.grading = base.grading.iter().map(|g| Grading { point: g.point, local_h: g.local_h * h / h0 }).collect();
    for &p in xi {
        if !o.pinned.contains(&p) {
            o.pinned.push(p);
        }
    }
    o
}

pub fn robin_diagonal(
    curve: &BoundaryCurve,
    a: &WeightField,
    xi: Point,
    ladder: &[f64],
    base: &MeshOptions,
    norm: Normalization,
) -> Result<RobinEstimate> {
    if ladder.is_empty() || ladder.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidInput("mesh ladder must be non-empty and strictly decreasing".into()));
    }
    let meshes: Vec<Mesh> = ladder.iter().map(|&h| build_mesh(curve, &ladder_options(base, ladder[0], h, &[xi]))).collect::<Result<_>>()?;
    robin_diagonal_on(meshes, a, xi, norm)
}

/// [`robin_diagonal`] on prebuilt ladder meshes, coarse to fine, each containing `ξ` as a node.
pub fn robin_diagonal_on(meshes: Vec<Mesh>, a: &WeightField, xi: Point, norm: Normalization) -> Result<RobinEstimate> {
    let ladder: Vec<f64> = meshes.iter().map(|m| m.h).collect();
    let raw: Vec<f64> = meshes
        .into_iter()
        .map(|mesh| -> Result<f64> {
            let p = FemProblem::new(mesh, a.clone())?;
            let r = regular_part_direct(&p, xi, norm)?;
            Ok(r.field.values[r.node])
        })
        .collect::<Result<_>>()?;
    let (value, error, ratio, extrapolated) = richardson(&raw);
    Ok(RobinEstimate { xi, value, error, raw, ladder, ratio, extrapolated })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GreenSource {
    pub point: Point,
    pub node: usize,
    pub t: f64,
}

/// Green's functions and regular parts for a set of boundary sources on one mesh.
#[derive(Debug, Clone)]
pub struct GreenTable {
    pub h: f64,
    pub normalization: Normalization,
    pub sources: Vec<GreenSource>,
    /// Nodal-load `G_a(·, y_m)`.
    pub green: Vec<Field>,
    /// Directly computed `H_a(·, y_m)`.
    pub regular: Vec<Field>,
    pub compatibility_defects: Vec<f64>,
    /// Ladder estimates of `H_a(y_m, y_m)`, when computed.
    pub robin: Vec<Option<RobinEstimate>>,
    pub mesh_ladder: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct GreenIndex {
    sources: Vec<GreenSource>,
    normalization: Normalization,
    h: f64,
    robin_diagonals: Vec<Option<f64>>,
    error_estimates: Vec<Option<f64>>,
    robin: Vec<Option<RobinEstimate>>,
    mesh_ladder: Vec<f64>,
    compatibility_defects: Vec<f64>,
    green_files: Vec<String>,
    regular_files: Vec<String>,
}

impl GreenTable {
    pub fn build(p: &FemProblem, sources: &[Point], norm: Normalization) -> Result<GreenTable> {
        let per: Vec<Result<(GreenSource, Field, RegularPart)>> = sources
            .par_iter()
            .map(|&y| {
                let (g, node) = green_function(p, y, norm)?;
                let r = regular_part_direct(p, y, norm)?;
                let src = GreenSource { point: p.mesh.nodes[node], node, t: p.mesh.boundary_params[node] };
                Ok((src, g, r))
            })
            .collect();
        let mut table = GreenTable {
            h: p.mesh.h,
            normalization: norm,
            sources: vec![],
            green: vec![],
            regular: vec![],
            compatibility_defects: vec![],
            robin: vec![],
            mesh_ladder: vec![p.mesh.h],
        };
        for r in per {
            let (s, g, h) = r?;
            table.sources.push(s);
            table.green.push(g);
            table.compatibility_defects.push(h.compatibility_defect);
            table.regular.push(h.field);
            table.robin.push(None);
        }
        Ok(table)
    }

    /// Index of the source at `y` (within `tol`).
    pub fn source_index(&self, y: Point, tol: f64) -> Option<usize> {
        self.sources.iter().position(|s| dist2(s.point, y).sqrt() <= tol)
    }

    /// `H_a(y_m, y_m)`: the ladder estimate when present, else the single-mesh value.
    pub fn robin_value(&self, m: usize) -> f64 {
        match &self.robin[m] {
            Some(r) => r.value,
            None => self.regular[m].values[self.sources[m].node],
        }
    }

    /// `G_a(x, y_m)` for `x ≠ y_m`, as `log(1/|x−y|²) + H_a(x, y_m)`.
    pub fn green_at(&self, p: &FemProblem, locator: &Locator, m: usize, x: Point) -> Result<f64> {
        let y = self.sources[m].point;
        let r2 = dist2(x, y);
        if r2 == 0.0 {
            return Err(Error::InvalidInput("G_a is singular on its diagonal".into()));
        }
        let h = self.regular[m].eval(&p.mesh, locator, x).ok_or(Error::OutsideDomain { x: x[0], y: x[1] })?;
        Ok(-r2.ln() + h)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut green_files = vec![];
        let mut regular_files = vec![];
        for m in 0..self.sources.len() {
            let g = format!("green_{m:03}.csv");
            let h = format!("regular_{m:03}.csv");
            self.green[m].write_csv(&dir.join(&g))?;
            self.regular[m].write_csv(&dir.join(&h))?;
            green_files.push(g);
            regular_files.push(h);
        }
        let index = GreenIndex {
            sources: self.sources.clone(),
            normalization: self.normalization,
            h: self.h,
            robin_diagonals: self.robin.iter().map(|r| r.as_ref().map(|r| r.value)).collect(),
            error_estimates: self.robin.iter().map(|r| r.as_ref().map(|r| r.error)).collect(),
            robin: self.robin.clone(),
            mesh_ladder: self.mesh_ladder.clone(),
            compatibility_defects: self.compatibility_defects.clone(),
            green_files,
            regular_files,
        };
        write_json(&dir.join("index.json"), &index)
    }

    pub fn load(dir: &Path) -> Result<GreenTable> {
        let index: GreenIndex = serde_json::from_str(&std::fs::read_to_string(dir.join("index.json"))?)?;
        let read = |f: &String| -> Result<Field> { Field::from_csv(&std::fs::read_to_string(dir.join(f))?) };
        Ok(GreenTable {
            h: index.h,
            normalization: index.normalization,
            sources: index.sources,
            green: index.green_files.iter().map(read).collect::<Result<_>>()?,
            regular: index.regular_files.iter().map(read).collect::<Result<_>>()?,
            compatibility_defects: index.compatibility_defects,
            robin: index.robin,
            mesh_ladder: index.mesh_ladder,
        })
    }
}

/// `μ_1 = ½ exp(H_a(ξ_1,ξ_1) − G_a(ξ_1,ξ_2))` and symmetrically for `μ_2`.
pub fn mu_parameters(p: &FemProblem, table: &GreenTable, xi1: Point, xi2: Point) -> Result<(f64, f64)> {
    if dist2(xi1, xi2) == 0.0 {
        return Err(Error::InvalidInput("concentration points must differ".into()));
    }
    let tol = 1e-9 * p.mesh.curve.length();
    let m1 = table.source_index(xi1, tol).ok_or_else(|| Error::InvalidInput("ξ1 is not a table source".into()))?;
    let m2 = table.source_index(xi2, tol).ok_or_else(|| Error::InvalidInput("ξ2 is not a table source".into()))?;
    let loc = Locator::new(&p.mesh);
    let g12 = table.green_at(p, &loc, m2, table.sources[m1].point)?;
    let g21 = table.green_at(p, &loc, m1, table.sources[m2].point)?;
    let mu1 = 0.5 * (table.robin_value(m1) - g12).exp();
    let mu2 = 0.5 * (table.robin_value(m2) - g21).exp();
    Ok((mu1, mu2))
}

/// `w(y) = (1/(2π a(y))) Σ_σ a(σ) G_a(σ, y) f(σ) w_σ` at every table source.
pub fn represent_neumann(p: &FemProblem, table: &GreenTable, f: &[f64]) -> Result<Vec<f64>> {
    if f.len() != p.nb() {
        return Err(Error::InvalidInput("boundary data does not match the table mesh".into()));
    }
    table
        .sources
        .iter()
        .enumerate()
        .map(|(m, s)| {
            if s.node >= p.nb() || dist2(p.mesh.nodes[s.node], s.point) > 0.0 {
                return Err(Error::InvalidInput("table was built on a different mesh".into()));
            }
            let g = table.green[m].trace(&p.mesh);
            let sum: f64 = (0..p.nb()).map(|k| p.mass.weighted[k] * g[k] * f[k]).sum();
            Ok(sum / (2.0 * PI * p.a.value(s.point)))
        })
        .collect()
}
