use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use spade::{ConstrainedDelaunayTriangulation, Point2, Triangulation};

use super::curve::{point_in_polygon, segment_distance, BoundaryCurve, Point};
use crate::error::{Error, Result};

/// Local refinement request: mesh size `local_h` near `point`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grading {
    pub point: Point,
    pub local_h: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshOptions {
    pub h_max: f64,
    #[serde(default)]
    pub grading: Vec<Grading>,
    /// Boundary points that must coincide with mesh nodes.
    #[serde(default)]
    pub pinned: Vec<Point>,
    /// Mesh the upper half and reflect it across the horizontal line through `γ(0)`.
    #[serde(default)]
    pub mirror: bool,
    #[serde(default = "default_smoothing")]
    pub smoothing_passes: usize,
}

fn default_smoothing() -> usize {
    3
}

impl MeshOptions {
    pub fn uniform(h_max: f64) -> Self {
        MeshOptions { h_max, grading: vec![], pinned: vec![], mirror: false, smoothing_passes: 3 }
    }

    pub fn with_grading(mut self, point: Point, local_h: f64) -> Self {
        self.grading.push(Grading { point, local_h });
        self
    }

    pub fn with_pinned(mut self, point: Point) -> Self {
        self.pinned.push(point);
        self
    }

    pub fn mirrored(mut self) -> Self {
        self.mirror = true;
        self
    }
}

/// Conforming P1 triangulation. Boundary nodes come first, numbered `0..n_boundary`
/// in the order of increasing curve parameter.
#[derive(Debug, Clone)]
pub struct Mesh {
    pub nodes: Vec<Point>,
    pub triangles: Vec<[usize; 3]>,
    pub n_boundary: usize,
    pub boundary_params: Vec<f64>,
    pub curve: BoundaryCurve,
    pub h: f64,
}

/// Mesh-size field `h(x) = min(h_max, min_k φ_k(|x − p_k|))`, Lipschitz with constant 0.3.
#[derive(Debug, Clone)]
pub struct SizeField {
    h_max: f64,
    grading: Vec<Grading>,
}

const GRADE_SLOPE: f64 = 0.3;
const GRADE_PLATEAU: f64 = 4.0;

impl SizeField {
    pub fn new(h_max: f64, grading: &[Grading]) -> Self {
        SizeField { h_max, grading: grading.to_vec() }
    }

    pub fn at(&self, x: Point) -> f64 {
        let mut h = self.h_max;
        for g in &self.grading {
            let d = dist(x, g.point);
            let l = g.local_h;
            let phi = if d <= GRADE_PLATEAU * l { l } else { l + GRADE_SLOPE * (d - GRADE_PLATEAU * l) };
            h = h.min(phi);
        }
        h
    }

    fn lower_bound(&self, center: Point, radius: f64) -> f64 {
        (self.at(center) - GRADE_SLOPE * radius).max(self.min_h())
    }

    fn min_h(&self) -> f64 {
        self.grading.iter().map(|g| g.local_h).fold(self.h_max, f64::min)
    }
}

fn dist(a: Point, b: Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

fn mid(a: Point, b: Point) -> Point {
    [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])]
}

/// Node positions along `[t0, t1]` (both ends included) with spacing following `size`.
fn march(curve: &BoundaryCurve, size: &SizeField, t0: f64, t1: f64) -> Vec<f64> {
    let mut ts = vec![t0];
    let mut acc = vec![0.0];
    let mut t = t0;
    let mut total = 0.0;
    let density = |t: f64| curve.speed(t) / size.at(curve.point(t));
    while t < t1 {
        let step = (0.2 * size.at(curve.point(t)) / curve.speed(t)).min(t1 - t).max(1e-14);
        let tn = (t + step).min(t1);
        total += 0.5 * (density(t) + density(tn)) * (tn - t);
        t = tn;
        ts.push(t);
        acc.push(total);
    }
    let n = ((total / 0.9).ceil() as usize).max(1);
    let mut out = Vec::with_capacity(n + 1);
    out.push(t0);
    let mut j = 0;
    for k in 1..n {
        let target = total * k as f64 / n as f64;
        while acc[j + 1] < target {
            j += 1;
        }
        let f = (target - acc[j]) / (acc[j + 1] - acc[j]);
        out.push(ts[j] + f * (ts[j + 1] - ts[j]));
    }
    out.push(t1);
    out
}

fn boundary_distance(p: Point, poly: &[Point]) -> f64 {
    let n = poly.len();
    (0..n).map(|i| segment_distance(p, poly[i], poly[(i + 1) % n])).fold(f64::INFINITY, f64::min)
}

/// Quadtree leaf centres, refined until cells are no larger than `0.7·h`.
fn quadtree_points(size: &SizeField, lo: Point, side: f64, out: &mut Vec<Point>) {
    let center = [lo[0] + 0.5 * side, lo[1] + 0.5 * side];
    let radius = side * std::f64::consts::FRAC_1_SQRT_2;
    if side > 0.7 * size.lower_bound(center, radius) {
        let s = 0.5 * side;
        quadtree_points(size, lo, s, out);
        quadtree_points(size, [lo[0] + s, lo[1]], s, out);
        quadtree_points(size, [lo[0], lo[1] + s], s, out);
        quadtree_points(size, [lo[0] + s, lo[1] + s], s, out);
    } else {
        out.push(center);
    }
}

struct Region {
    /// Closed polygon bounding the region to be triangulated, counter-clockwise.
    poly: Vec<Point>,
    /// Leading points that smoothing must not move.
    n_fixed: usize,
    /// Extra admissibility test for interior points.
    above: Option<f64>,
}

fn triangulate(points: &[Point], poly_len: usize) -> Result<Vec<[usize; 3]>> {
    let verts: Vec<Point2<f64>> = points.iter().map(|p| Point2::new(p[0], p[1])).collect();
    let edges: Vec<[usize; 2]> = (0..poly_len).map(|i| [i, (i + 1) % poly_len]).collect();
    let cdt = ConstrainedDelaunayTriangulation::<Point2<f64>>::bulk_load_cdt(verts, edges)
        .map_err(|e| Error::InvalidMesh(format!("triangulation failed: {e:?}")))?;
    if cdt.num_vertices() != points.len() {
        return Err(Error::InvalidMesh("duplicate mesh vertices".into()));
    }
    let poly: Vec<Point> = points[..poly_len].to_vec();
    let mut tris = Vec::new();
    for f in cdt.inner_faces() {
        let v = f.vertices();
        let ids = [v[0].fix().index(), v[1].fix().index(), v[2].fix().index()];
        let c = [
            (points[ids[0]][0] + points[ids[1]][0] + points[ids[2]][0]) / 3.0,
            (points[ids[0]][1] + points[ids[1]][1] + points[ids[2]][1]) / 3.0,
        ];
        if point_in_polygon(c, &poly) {
            tris.push(ids);
        }
    }
    Ok(tris)
}

fn orient(points: &[Point], t: [usize; 3]) -> f64 {
    let (a, b, c) = (points[t[0]], points[t[1]], points[t[2]]);
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

/// Triangulates a region whose first `region.poly.len()` points are the fixed polygon.
fn mesh_region(region: &Region, size: &SizeField, passes: usize) -> Result<(Vec<Point>, Vec<[usize; 3]>)> {
    let poly = &region.poly;
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for p in poly {
        x0 = x0.min(p[0]);
        x1 = x1.max(p[0]);
        y0 = y0.min(p[1]);
        y1 = y1.max(p[1]);
    }
    let extent = (x1 - x0).max(y1 - y0);
    let root = 0.7 * size.h_max * 2f64.powi((extent / (0.7 * size.h_max)).log2().ceil().max(0.0) as i32);
    let cx = 0.5 * (x0 + x1) - 0.5 * root;
    let cy = match region.above {
        Some(axis) => axis,
        None => 0.5 * (y0 + y1) - 0.5 * root,
    };
    let mut candidates = Vec::new();
    quadtree_points(size, [cx, cy], root, &mut candidates);

    let admissible = |p: Point| -> bool {
        if let Some(axis) = region.above {
            if p[1] - axis < 0.5 * size.at(p) {
                return false;
            }
        }
        point_in_polygon(p, poly) && boundary_distance(p, poly) >= 0.5 * size.at(p)
    };
    let keep: Vec<bool> = candidates.par_iter().map(|&p| admissible(p)).collect();
    let mut points: Vec<Point> = poly.clone();
    points.extend(candidates.iter().zip(&keep).filter(|(_, &k)| k).map(|(p, _)| *p));

    let n_fixed = region.n_fixed;
    let mut tris = triangulate(&points, poly.len())?;

    for _ in 0..passes {
        let mut sum = vec![[0.0f64; 2]; points.len()];
        let mut cnt = vec![0usize; points.len()];
        for t in &tris {
            for k in 0..3 {
                let (i, j) = (t[k], t[(k + 1) % 3]);
                for (a, b) in [(i, j), (j, i)] {
                    sum[a][0] += points[b][0];
                    sum[a][1] += points[b][1];
                    cnt[a] += 1;
                }
            }
        }
        for i in n_fixed..points.len() {
            if cnt[i] == 0 {
                continue;
            }
            let q = [sum[i][0] / cnt[i] as f64, sum[i][1] / cnt[i] as f64];
            if admissible_relaxed(q, poly, size, region.above) {
                points[i] = q;
            }
        }
        tris = triangulate(&points, poly.len())?;
    }

    // Split interior edges that exceed the local size.
    for _ in 0..8 {
        let mut new_pts: Vec<Point> = Vec::new();
        let mut seen = std::collections::BTreeSet::new();
        for t in &tris {
            for k in 0..3 {
                let (i, j) = (t[k].min(t[(k + 1) % 3]), t[k].max(t[(k + 1) % 3]));
                if !seen.insert((i, j)) {
                    continue;
                }
                let is_poly_edge = j < poly.len() && (j == i + 1 || (i == 0 && j == poly.len() - 1));
                if is_poly_edge {
                    continue;
                }
                let m = mid(points[i], points[j]);
                if dist(points[i], points[j]) > size.at(m) && admissible_split(m, poly, size, region.above) {
                    new_pts.push(m);
                }
            }
        }
        if new_pts.is_empty() {
            break;
        }
        points.extend(new_pts);
        tris = triangulate(&points, poly.len())?;
    }

    // Drop points not referenced by any triangle (possible only for stray interior points).
    let mut used = vec![false; points.len()];
    for t in &tris {
        for &i in t {
            used[i] = true;
        }
    }
    for (i, u) in used.iter().enumerate().take(poly.len()) {
        if !u {
            return Err(Error::InvalidMesh(format!("boundary vertex {i} not covered by any triangle")));
        }
    }
    let mut remap = vec![usize::MAX; points.len()];
    let mut kept = Vec::new();
    for (i, p) in points.iter().enumerate() {
        if used[i] {
            remap[i] = kept.len();
            kept.push(*p);
        }
    }
    let tris = tris
        .into_iter()
        .map(|t| {
            let mut t = [remap[t[0]], remap[t[1]], remap[t[2]]];
            if orient(&kept, t) < 0.0 {
                t.swap(1, 2);
            }
            t
        })
        .collect();
    Ok((kept, tris))
}

fn admissible_split(p: Point, poly: &[Point], size: &SizeField, above: Option<f64>) -> bool {
    if let Some(axis) = above {
        if p[1] - axis < 0.1 * size.at(p) {
            return false;
        }
    }
    point_in_polygon(p, poly) && boundary_distance(p, poly) >= 0.1 * size.at(p)
}

fn admissible_relaxed(p: Point, poly: &[Point], size: &SizeField, above: Option<f64>) -> bool {
    if let Some(axis) = above {
        if p[1] - axis < 0.25 * size.at(p) {
            return false;
        }
    }
    point_in_polygon(p, poly) && boundary_distance(p, poly) >= 0.25 * size.at(p)
}

/// Builds a graded triangulation of the region enclosed by `curve`.
const BREAK_MERGE: f64 = 1e-9;

pub fn build_mesh(curve: &BoundaryCurve, opts: &MeshOptions) -> Result<Mesh> {
    if !(opts.h_max > 0.0) {
        return Err(Error::InvalidInput(format!("h_max must be positive, got {}", opts.h_max)));
    }
    curve.validate()?;
    let length = curve.length();
    for g in &opts.grading {
        if !(g.local_h > 0.0) || g.local_h > opts.h_max {
            return Err(Error::InvalidInput(format!("grading size {} must lie in (0, h_max = {}]", g.local_h, opts.h_max)));
        }
        let (_, d) = curve.closest_param(g.point);
        if !curve.contains(g.point) && d > 1e-9 * length {
            return Err(Error::OutsideDomain { x: g.point[0], y: g.point[1] });
        }
    }
    let size = SizeField::new(opts.h_max, &opts.grading);

    let mut breaks: Vec<f64> = curve.breakpoints();
    let mut pins: Vec<Point> = opts.pinned.clone();
    for g in &opts.grading {
        let (_, d) = curve.closest_param(g.point);
        if d <= 1e-9 * length {
            pins.push(g.point);
        }
    }
    for p in &pins {
        let (t, d) = curve.closest_param(*p);
        if d > 1e-6 * length {
            return Err(Error::InvalidInput(format!("pinned point ({}, {}) is not on the boundary", p[0], p[1])));
        }
        breaks.push(t);
    }
    if opts.mirror {
        check_mirror(curve)?;
        breaks.push(0.0);
        breaks.push(0.5);
        // Mirror images of every break keep the two halves identical.
        let mirrored: Vec<f64> = breaks.iter().map(|&t| (1.0 - t).rem_euclid(1.0)).collect();
        breaks.extend(mirrored);
    }
    breaks.push(0.0);
    let mut breaks: Vec<f64> = breaks.into_iter().map(|t| t.rem_euclid(1.0)).collect();
    breaks.sort_by(f64::total_cmp);
    // Breaks this close would leave near-duplicate nodes; a pin merges into the existing break.
    breaks.dedup_by(|a, b| (*a - *b).abs() < BREAK_MERGE);
    if breaks.len() > 1 && (1.0 - breaks[breaks.len() - 1]) < BREAK_MERGE {
        breaks.pop();
    }

    if !opts.mirror {
        let mut params = Vec::new();
        for k in 0..breaks.len() {
            let t0 = breaks[k];
            let t1 = if k + 1 < breaks.len() { breaks[k + 1] } else { 1.0 };
            let seg = march(curve, &size, t0, t1);
            params.extend_from_slice(&seg[..seg.len() - 1]);
        }
        let poly: Vec<Point> = params.iter().map(|&t| curve.point(t)).collect();
        let n_fixed = poly.len();
        let region = Region { poly, n_fixed, above: None };
        let (nodes, triangles) = mesh_region(&region, &size, opts.smoothing_passes)?;
        let mesh = Mesh { nodes, triangles, n_boundary: params.len(), boundary_params: params, curve: curve.clone(), h: opts.h_max };
        mesh.validate()?;
        return Ok(mesh);
    }

    // Upper half: parameters in [0, 0.5], then the axis chord from γ(0.5) back to γ(0).
    let mut upper = Vec::new();
    let half: Vec<f64> = breaks.iter().copied().filter(|&t| t <= 0.5 + 1e-12).collect();
    for k in 0..half.len() {
        let t0 = half[k];
        let t1 = if k + 1 < half.len() { half[k + 1] } else { 0.5 };
        if t1 - t0 < 1e-14 {
            continue;
        }
        let seg = march(curve, &size, t0, t1);
        upper.extend_from_slice(&seg[..seg.len() - 1]);
    }
    upper.push(0.5);
    let axis = curve.point(0.0)[1];
    let left = [curve.point(0.5)[0], axis];
    let right = curve.point(0.0);
    let chord = march_segment(&size, left, right);
    let mut poly: Vec<Point> = upper.iter().map(|&t| curve.point(t)).collect();
    let n_upper = upper.len();
    poly[n_upper - 1] = left;
    poly.extend_from_slice(&chord);
    let n_fixed = poly.len();
    for p in &chord {
        if !curve.contains(*p) {
            return Err(Error::InvalidMesh("mirror axis chord leaves the domain".into()));
        }
    }
    let region = Region { poly, n_fixed, above: Some(axis) };
    let (half_nodes, half_tris) = mesh_region(&region, &size, opts.smoothing_passes)?;

    // Assemble the full mesh: boundary nodes (upper then lower), axis nodes, upper interior, lower interior.
    let n_lower = n_upper - 2;
    let nb = n_upper + n_lower;
    let mut params: Vec<f64> = upper.clone();
    for k in (1..n_upper - 1).rev() {
        params.push(1.0 - upper[k]);
    }
    let n_half = half_nodes.len();
    let n_axis = chord.len();
    let n_int = n_half - n_fixed;
    let mut nodes: Vec<Point> = Vec::with_capacity(nb + n_axis + 2 * n_int);
    let mut map_up = vec![0usize; n_half];
    let mut map_lo = vec![0usize; n_half];
    nodes.resize(nb, [0.0, 0.0]);
    for k in 0..n_upper {
        nodes[k] = half_nodes[k];
        map_up[k] = k;
    }
    map_lo[0] = 0;
    map_lo[n_upper - 1] = n_upper - 1;
    for k in 1..n_upper - 1 {
        let idx = nb - k;
        let p = half_nodes[k];
        nodes[idx] = [p[0], 2.0 * axis - p[1]];
        map_lo[k] = idx;
    }
    for k in 0..n_axis {
        let id = nodes.len();
        nodes.push(half_nodes[n_upper + k]);
        map_up[n_upper + k] = id;
        map_lo[n_upper + k] = id;
    }
    for k in n_fixed..n_half {
        let id = nodes.len();
        nodes.push(half_nodes[k]);
        map_up[k] = id;
    }
    for k in n_fixed..n_half {
        let id = nodes.len();
        let p = half_nodes[k];
        nodes.push([p[0], 2.0 * axis - p[1]]);
        map_lo[k] = id;
    }
    let mut triangles = Vec::with_capacity(2 * half_tris.len());
    for t in &half_tris {
        triangles.push([map_up[t[0]], map_up[t[1]], map_up[t[2]]]);
    }
    for t in &half_tris {
        // Reflection flips orientation.
        triangles.push([map_lo[t[0]], map_lo[t[2]], map_lo[t[1]]]);
    }
    let mesh = Mesh { nodes, triangles, n_boundary: nb, boundary_params: params, curve: curve.clone(), h: opts.h_max };
    mesh.validate()?;
    Ok(mesh)
}

fn march_segment(size: &SizeField, a: Point, b: Point) -> Vec<Point> {
    let len = dist(a, b);
    let mut s = 0.0;
    let mut acc = vec![0.0];
    let mut ss = vec![0.0];
    let mut total = 0.0;
    let at = |s: f64| [a[0] + (b[0] - a[0]) * s / len, a[1] + (b[1] - a[1]) * (s / len)];
    while s < len {
        let step = (0.2 * size.at(at(s))).min(len - s);
        let sn = (s + step).min(len);
        total += 0.5 * (1.0 / size.at(at(s)) + 1.0 / size.at(at(sn))) * (sn - s);
        s = sn;
        ss.push(s);
        acc.push(total);
    }
    let n = ((total / 0.9).ceil() as usize).max(1);
    let mut out = Vec::new();
    let mut j = 0;
    for k in 1..n {
        let target = total * k as f64 / n as f64;
        while acc[j + 1] < target {
            j += 1;
        }
        let f = (target - acc[j]) / (acc[j + 1] - acc[j]);
        out.push(at(ss[j] + f * (ss[j + 1] - ss[j])));
    }
    out
}

fn check_mirror(curve: &BoundaryCurve) -> Result<()> {
    let axis = curve.point(0.0)[1];
    for k in 0..512 {
        let t = k as f64 / 512.0;
        let p = curve.point(t);
        let q = curve.point((1.0 - t).rem_euclid(1.0));
        if (p[0] - q[0]).abs() > 1e-10 || (p[1] + q[1] - 2.0 * axis).abs() > 1e-10 {
            return Err(Error::InvalidInput("curve is not mirror symmetric about the axis through γ(0)".into()));
        }
    }
    Ok(())
}

impl Mesh {
    /// The same mesh moved rigidly by `(dx, dy)`.
    pub fn translated(&self, dx: f64, dy: f64) -> Mesh {
        Mesh {
            nodes: self.nodes.iter().map(|p| [p[0] + dx, p[1] + dy]).collect(),
            triangles: self.triangles.clone(),
            n_boundary: self.n_boundary,
            boundary_params: self.boundary_params.clone(),
            curve: self.curve.translated(dx, dy),
            h: self.h,
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_boundary(&self, i: usize) -> bool {
        i < self.n_boundary
    }

    pub fn boundary_points(&self) -> &[Point] {
        &self.nodes[..self.n_boundary]
    }

    /// Length of the boundary edge from node `k` to node `k+1` (cyclic).
    pub fn boundary_edge(&self, k: usize) -> f64 {
        dist(self.nodes[k], self.nodes[(k + 1) % self.n_boundary])
    }

    /// Trapezoid weight of boundary node `k`: half the lengths of its two edges.
    pub fn boundary_weight(&self, k: usize) -> f64 {
        let nb = self.n_boundary;
        0.5 * (self.boundary_edge(k) + self.boundary_edge((k + nb - 1) % nb))
    }

    pub fn boundary_weights(&self) -> Vec<f64> {
        (0..self.n_boundary).map(|k| self.boundary_weight(k)).collect()
    }

    /// Outward unit normal of the exact curve at boundary node `k`.
    pub fn boundary_normal(&self, k: usize) -> Point {
        self.curve.normal(self.boundary_params[k])
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        0.5 * orient(&self.nodes, self.triangles[t])
    }

    pub fn max_edge(&self) -> f64 {
        let mut m = 0.0f64;
        for t in &self.triangles {
            for k in 0..3 {
                m = m.max(dist(self.nodes[t[k]], self.nodes[t[(k + 1) % 3]]));
            }
        }
        m
    }

    /// Index of the boundary node closest to `p`.
    pub fn nearest_boundary_node(&self, p: Point) -> usize {
        let mut best = (0, f64::INFINITY);
        for (k, q) in self.boundary_points().iter().enumerate() {
            let d = dist(p, *q);
            if d < best.1 {
                best = (k, d);
            }
        }
        best.0
    }

    pub fn validate(&self) -> Result<()> {
        let nb = self.n_boundary;
        if nb < 3 || self.boundary_params.len() != nb {
            return Err(Error::InvalidMesh("boundary loop must have at least 3 nodes".into()));
        }
        for (t, tri) in self.triangles.iter().enumerate() {
            if tri.iter().any(|&i| i >= self.nodes.len()) {
                return Err(Error::InvalidMesh(format!("triangle {t} references a missing node")));
            }
            if !(orient(&self.nodes, *tri) > 0.0) {
                return Err(Error::InvalidMesh(format!("triangle {t} has nonpositive area: {:?}", tri.map(|i| (i, self.nodes[i])))));
            }
        }
        for k in 1..nb {
            if !(self.boundary_params[k] > self.boundary_params[k - 1]) {
                return Err(Error::InvalidMesh("boundary parameters are not increasing".into()));
            }
        }
        for k in 0..nb {
            let p = self.curve.point(self.boundary_params[k]);
            if dist(p, self.nodes[k]) > 1e-10 {
                return Err(Error::InvalidMesh(format!("boundary node {k} is off the curve")));
            }
        }
        // Every edge is shared by at most two triangles; edges used once form the boundary loop.
        let mut edges: std::collections::BTreeMap<(usize, usize), (usize, bool)> = Default::default();
        for tri in &self.triangles {
            for k in 0..3 {
                let (i, j) = (tri[k], tri[(k + 1) % 3]);
                let e = edges.entry((i.min(j), i.max(j))).or_insert((0, i < j));
                e.0 += 1;
                e.1 = i < j;
            }
        }
        let mut outer = 0;
        for (&(i, j), &(count, forward)) in &edges {
            match count {
                1 => {
                    outer += 1;
                    let consecutive = (j == i + 1 && j < nb) || (i == 0 && j == nb - 1);
                    if !consecutive {
                        return Err(Error::InvalidMesh(format!("edge ({i}, {j}) is on the hull but not on the boundary loop")));
                    }
                    let ccw = if i == 0 && j == nb - 1 { !forward } else { forward };
                    if !ccw {
                        return Err(Error::InvalidMesh(format!("boundary edge ({i}, {j}) traversed against the curve")));
                    }
                }
                2 => {}
                _ => return Err(Error::InvalidMesh(format!("edge ({i}, {j}) shared by {count} triangles"))),
            }
        }
        if outer != nb {
            return Err(Error::InvalidMesh(format!("{outer} hull edges for {nb} boundary nodes")));
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "nodes {} triangles {} boundary {}", self.nodes.len(), self.triangles.len(), self.n_boundary);
        for (i, p) in self.nodes.iter().enumerate() {
            let _ = writeln!(s, "{i} {:.17e} {:.17e}", p[0], p[1]);
        }
        for (i, t) in self.triangles.iter().enumerate() {
            let _ = writeln!(s, "{i} {} {} {}", t[0], t[1], t[2]);
        }
        for k in 0..self.n_boundary {
            let _ = writeln!(s, "{k} {k} {:.17e}", self.boundary_params[k]);
        }
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn from_text(text: &str, curve: BoundaryCurve, h: f64) -> Result<Mesh> {
        let bad = |m: &str| Error::InvalidMesh(format!("mesh file: {m}"));
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: Vec<&str> = lines.next().ok_or_else(|| bad("empty"))?.split_whitespace().collect();
        if header.len() != 6 || header[0] != "nodes" || header[2] != "triangles" || header[4] != "boundary" {
            return Err(bad("malformed header"));
        }
        let parse_n = |s: &str| s.parse::<usize>().map_err(|_| bad("bad count"));
        let (n, t, b) = (parse_n(header[1])?, parse_n(header[3])?, parse_n(header[5])?);
        let mut nodes = Vec::with_capacity(n);
        for _ in 0..n {
            let f: Vec<&str> = lines.next().ok_or_else(|| bad("truncated nodes"))?.split_whitespace().collect();
            if f.len() != 3 {
                return Err(bad("node line"));
            }
            let x: f64 = f[1].parse().map_err(|_| bad("node x"))?;
            let y: f64 = f[2].parse().map_err(|_| bad("node y"))?;
            nodes.push([x, y]);
        }
        let mut triangles = Vec::with_capacity(t);
        for _ in 0..t {
            let f: Vec<&str> = lines.next().ok_or_else(|| bad("truncated triangles"))?.split_whitespace().collect();
            if f.len() != 4 {
                return Err(bad("triangle line"));
            }
            triangles.push([parse_n(f[1])?, parse_n(f[2])?, parse_n(f[3])?]);
        }
        let mut params = Vec::with_capacity(b);
        for k in 0..b {
            let f: Vec<&str> = lines.next().ok_or_else(|| bad("truncated boundary"))?.split_whitespace().collect();
            if f.len() != 3 || parse_n(f[1])? != k {
                return Err(bad("boundary nodes must be numbered first, in loop order"));
            }
            params.push(f[2].parse::<f64>().map_err(|_| bad("boundary parameter"))?);
        }
        let mesh = Mesh { nodes, triangles, n_boundary: b, boundary_params: params, curve, h };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn read(path: &Path, curve: BoundaryCurve, h: f64) -> Result<Mesh> {
        Mesh::from_text(&std::fs::read_to_string(path)?, curve, h)
    }
}

/// Bucket grid for point location.
#[derive(Debug, Clone)]
pub struct Locator {
    lo: Point,
    cell: f64,
    nx: usize,
    ny: usize,
    buckets: Vec<Vec<usize>>,
}

impl Locator {
    pub fn new(mesh: &Mesh) -> Self {
        let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
        for p in &mesh.nodes {
            x0 = x0.min(p[0]);
            x1 = x1.max(p[0]);
            y0 = y0.min(p[1]);
            y1 = y1.max(p[1]);
        }
        let area = ((x1 - x0) * (y1 - y0)).max(1e-300);
        let cell = (area / mesh.triangles.len().max(1) as f64).sqrt() * 1.5;
        let nx = (((x1 - x0) / cell).ceil() as usize).max(1);
        let ny = (((y1 - y0) / cell).ceil() as usize).max(1);
        let mut buckets = vec![Vec::new(); nx * ny];
        for (t, tri) in mesh.triangles.iter().enumerate() {
            let ps = tri.map(|i| mesh.nodes[i]);
            let bx0 = ps.iter().map(|p| p[0]).fold(f64::MAX, f64::min);
            let bx1 = ps.iter().map(|p| p[0]).fold(f64::MIN, f64::max);
            let by0 = ps.iter().map(|p| p[1]).fold(f64::MAX, f64::min);
            let by1 = ps.iter().map(|p| p[1]).fold(f64::MIN, f64::max);
            let i0 = (((bx0 - x0) / cell).floor().max(0.0) as usize).min(nx - 1);
            let i1 = (((bx1 - x0) / cell).floor().max(0.0) as usize).min(nx - 1);
            let j0 = (((by0 - y0) / cell).floor().max(0.0) as usize).min(ny - 1);
            let j1 = (((by1 - y0) / cell).floor().max(0.0) as usize).min(ny - 1);
            for j in j0..=j1 {
                for i in i0..=i1 {
                    buckets[j * nx + i].push(t);
                }
            }
        }
        Locator { lo: [x0, y0], cell, nx, ny, buckets }
    }

    /// Triangle containing `p` and its barycentric coordinates (tolerant to round-off on edges).
    pub fn locate(&self, mesh: &Mesh, p: Point) -> Option<(usize, [f64; 3])> {
        let i = ((p[0] - self.lo[0]) / self.cell).floor();
        let j = ((p[1] - self.lo[1]) / self.cell).floor();
        if i < -1.0 || j < -1.0 || i > self.nx as f64 || j > self.ny as f64 {
            return None;
        }
        let i = (i.max(0.0) as usize).min(self.nx - 1);
        let j = (j.max(0.0) as usize).min(self.ny - 1);
        let mut best: Option<(usize, [f64; 3], f64)> = None;
        for &t in &self.buckets[j * self.nx + i] {
            let bc = barycentric(mesh, t, p);
            let worst = bc.iter().copied().fold(f64::INFINITY, f64::min);
            if worst >= -1e-12 {
                return Some((t, bc));
            }
            if best.as_ref().is_none_or(|b| worst > b.2) {
                best = Some((t, bc, worst));
            }
        }
        match best {
            Some((t, bc, worst)) if worst > -1e-9 => Some((t, bc)),
            _ => None,
        }
    }
}

pub fn barycentric(mesh: &Mesh, t: usize, p: Point) -> [f64; 3] {
    let [a, b, c] = mesh.triangles[t].map(|i| mesh.nodes[i]);
    let det = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
    let l1 = ((p[0] - a[0]) * (c[1] - a[1]) - (p[1] - a[1]) * (c[0] - a[0])) / det;
    let l2 = ((b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])) / det;
    [1.0 - l1 - l2, l1, l2]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn disk_mesh_is_valid() {
        let m = build_mesh(&BoundaryCurve::unit_disk(), &MeshOptions::uniform(0.1)).unwrap();
        assert!(m.max_edge() <= 0.1 + 1e-12, "max edge {}", m.max_edge());
        let area: f64 = (0..m.triangles.len()).map(|t| m.triangle_area(t)).sum();
        assert!((area - std::f64::consts::PI).abs() < 0.02);
    }

    #[test]
    fn grading_refines_boundary() {
        let opts = MeshOptions::uniform(0.1).with_grading([1.0, 0.0], 0.01);
        let m = build_mesh(&BoundaryCurve::unit_disk(), &opts).unwrap();
        let nb = m.n_boundary;
        for k in 0..nb {
            let c = mid(m.nodes[k], m.nodes[(k + 1) % nb]);
            if dist(c, [1.0, 0.0]) <= 0.03 {
                assert!(m.boundary_edge(k) <= 0.01, "edge {k} length {}", m.boundary_edge(k));
            }
        }
        assert_eq!(m.nodes[0], [1.0, 0.0]);
    }

    #[test]
    fn mirror_mesh_is_symmetric() {
        let opts = MeshOptions::uniform(0.15).mirrored();
        let m = build_mesh(&BoundaryCurve::circle([2.0, 0.0], 1.0), &opts).unwrap();
        let mut a: Vec<(i64, i64)> = m.nodes.iter().map(|p| ((p[0] * 1e9).round() as i64, (p[1] * 1e9).round() as i64)).collect();
        let mut b: Vec<(i64, i64)> = a.iter().map(|&(x, y)| (x, -y)).collect();
        a.sort();
        b.sort();
        assert_eq!(a, b);
    }

    #[test]
    fn outside_grading_rejected() {
        let opts = MeshOptions::uniform(0.1).with_grading([3.0, 0.0], 0.01);
        assert!(matches!(build_mesh(&BoundaryCurve::unit_disk(), &opts), Err(Error::OutsideDomain { .. })));
    }

    #[test]
    fn text_roundtrip() {
        let m = build_mesh(&BoundaryCurve::unit_disk(), &MeshOptions::uniform(0.3)).unwrap();
        let back = Mesh::from_text(&m.to_text(), m.curve.clone(), m.h).unwrap();
        assert_eq!(back.nodes, m.nodes);
        assert_eq!(back.triangles, m.triangles);
        assert_eq!(back.boundary_params, m.boundary_params);
    }

    #[test]
    fn locator_finds_nodes() {
        let m = build_mesh(&BoundaryCurve::unit_disk(), &MeshOptions::uniform(0.2)).unwrap();
        let loc = Locator::new(&m);
        for (i, p) in m.nodes.iter().enumerate().step_by(5) {
            let (t, bc) = loc.locate(&m, *p).unwrap();
            let k = m.triangles[t].iter().position(|&v| v == i);
            if let Some(k) = k {
                assert!((bc[k] - 1.0).abs() < 1e-12);
            }
        }
        assert!(loc.locate(&m, [2.0, 2.0]).is_none());
    }
}
