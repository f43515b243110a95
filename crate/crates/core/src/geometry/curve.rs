//! Closed, counter-clockwise boundary curves parametrized over `t ∈ [0, 1)`.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point = [f64; 2];

/// Periodic cubic spline through `n` control points at uniform parameters `k/n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodicSpline {
    xs: Vec<f64>,
    ys: Vec<f64>,
    // second derivatives with respect to t at the knots
    mx: Vec<f64>,
    my: Vec<f64>,
}

impl PeriodicSpline {
    pub fn new(points: &[Point]) -> Result<Self> {
        let n = points.len();
        if n < 4 {
            return Err(Error::InvalidInput(format!("periodic spline needs at least 4 points, got {n}")));
        }
        let mut pts = points.to_vec();
        if signed_area(&pts) < 0.0 {
            pts.reverse();
        }
        let xs: Vec<f64> = pts.iter().map(|p| p[0]).collect();
        let ys: Vec<f64> = pts.iter().map(|p| p[1]).collect();
        let mx = Self::second_derivatives(&xs)?;
        let my = Self::second_derivatives(&ys)?;
        Ok(Self { xs, ys, mx, my })
    }

    /// Reads whitespace-separated `x y` lines; blank lines and `#` comments are skipped.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut pts = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let vals: Vec<f64> = line
                .split(|c: char| c.is_whitespace() || c == ',')
                .filter(|s| !s.is_empty())
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::InvalidInput(format!("{}:{}: {e}", path.display(), lineno + 1)))?;
            if vals.len() != 2 {
                return Err(Error::InvalidInput(format!("{}:{}: expected two coordinates", path.display(), lineno + 1)));
            }
            pts.push([vals[0], vals[1]]);
        }
        Self::new(&pts)
    }

    fn second_derivatives(v: &[f64]) -> Result<Vec<f64>> {
        let n = v.len();
        let h = 1.0 / n as f64;
        let mut a = DMatrix::<f64>::zeros(n, n);
        let mut rhs = DVector::<f64>::zeros(n);
        for k in 0..n {
            let km = (k + n - 1) % n;
            let kp = (k + 1) % n;
            a[(k, km)] += 1.0;
            a[(k, k)] += 4.0;
            a[(k, kp)] += 1.0;
            rhs[k] = 6.0 * (v[kp] - 2.0 * v[k] + v[km]) / (h * h);
        }
        let sol = a.lu().solve(&rhs).ok_or_else(|| Error::SolverBreakdown("periodic spline system".into()))?;
        Ok(sol.iter().copied().collect())
    }

    fn eval(&self, t: f64, order: usize) -> Point {
        let n = self.xs.len();
        let h = 1.0 / n as f64;
        let s = t.rem_euclid(1.0) * n as f64;
        let k = (s.floor() as usize).min(n - 1);
        let kp = (k + 1) % n;
        let u = (s - k as f64) * h; // local offset in t
        let w = h - u;
        let comp = |y: &[f64], m: &[f64]| -> f64 {
            match order {
                0 => {
                    m[k] * w.powi(3) / (6.0 * h)
                        + m[kp] * u.powi(3) / (6.0 * h)
                        + (y[k] / h - m[k] * h / 6.0) * w
                        + (y[kp] / h - m[kp] * h / 6.0) * u
                }
                1 => -m[k] * w * w / (2.0 * h) + m[kp] * u * u / (2.0 * h) - (y[k] / h - m[k] * h / 6.0) + (y[kp] / h - m[kp] * h / 6.0),
                _ => m[k] * w / h + m[kp] * u / h,
            }
        };
        [comp(&self.xs, &self.mx), comp(&self.ys, &self.my)]
    }
}

/// A smooth (or, for `Polygon`, piecewise-linear) closed curve, oriented counter-clockwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BoundaryCurve {
    Circle {
        center: Point,
        radius: f64,
    },
    Ellipse {
        center: Point,
        semi_x: f64,
        semi_y: f64,
    },
    /// r(θ) = radius·(1 + amplitude·cos(lobes·θ)).
    Star {
        center: Point,
        radius: f64,
        amplitude: f64,
        lobes: u32,
    },
    Spline(PeriodicSpline),
    /// Parametrized by normalized arclength; vertices are breakpoints.
    Polygon {
        vertices: Vec<Point>,
    },
}

impl BoundaryCurve {
    pub fn unit_disk() -> Self {
        BoundaryCurve::Circle { center: [0.0, 0.0], radius: 1.0 }
    }

    pub fn circle(center: Point, radius: f64) -> Self {
        BoundaryCurve::Circle { center, radius }
    }

    pub fn rectangle(x0: f64, x1: f64, y0: f64, y1: f64) -> Self {
        BoundaryCurve::Polygon { vertices: vec![[x0, y0], [x1, y0], [x1, y1], [x0, y1]] }
    }

    pub fn point(&self, t: f64) -> Point {
        self.eval(t, 0)
    }

    pub fn tangent(&self, t: f64) -> Point {
        self.eval(t, 1)
    }

    pub fn second_derivative(&self, t: f64) -> Point {
        self.eval(t, 2)
    }

    pub fn speed(&self, t: f64) -> f64 {
        let d = self.tangent(t);
        d[0].hypot(d[1])
    }

    /// Outward unit normal (the curve is counter-clockwise).
    pub fn normal(&self, t: f64) -> Point {
        let d = self.tangent(t);
        let s = d[0].hypot(d[1]);
        [d[1] / s, -d[0] / s]
    }

    /// Signed curvature, positive for convex arcs.
    pub fn curvature(&self, t: f64) -> f64 {
        let d = self.tangent(t);
        let dd = self.second_derivative(t);
        (d[0] * dd[1] - d[1] * dd[0]) / d[0].hypot(d[1]).powi(3)
    }

    /// Parameters that must appear as mesh nodes (polygon corners).
    pub fn breakpoints(&self) -> Vec<f64> {
        match self {
            BoundaryCurve::Polygon { vertices } => {
                let (cum, total) = polygon_lengths(vertices);
                cum.iter().take(vertices.len()).map(|c| c / total).collect()
            }
            _ => Vec::new(),
        }
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        let sh = |p: &Point| [p[0] + dx, p[1] + dy];
        match self {
            BoundaryCurve::Circle { center, radius } => BoundaryCurve::Circle { center: sh(center), radius: *radius },
            BoundaryCurve::Ellipse { center, semi_x, semi_y } => {
                BoundaryCurve::Ellipse { center: sh(center), semi_x: *semi_x, semi_y: *semi_y }
            }
            BoundaryCurve::Star { center, radius, amplitude, lobes } => {
                BoundaryCurve::Star { center: sh(center), radius: *radius, amplitude: *amplitude, lobes: *lobes }
            }
            BoundaryCurve::Spline(s) => BoundaryCurve::Spline(PeriodicSpline {
                xs: s.xs.iter().map(|x| x + dx).collect(),
                ys: s.ys.iter().map(|y| y + dy).collect(),
                mx: s.mx.clone(),
                my: s.my.clone(),
            }),
            BoundaryCurve::Polygon { vertices } => BoundaryCurve::Polygon { vertices: vertices.iter().map(sh).collect() },
        }
    }

    fn eval(&self, t: f64, order: usize) -> Point {
        let tw = t.rem_euclid(1.0);
        match self {
            BoundaryCurve::Circle { center, radius } => ellipse_eval(*center, *radius, *radius, tw, order),
            BoundaryCurve::Ellipse { center, semi_x, semi_y } => ellipse_eval(*center, *semi_x, *semi_y, tw, order),
            BoundaryCurve::Star { center, radius, amplitude, lobes } => {
                let th = 2.0 * PI * tw;
                let k = *lobes as f64;
                let r = radius * (1.0 + amplitude * (k * th).cos());
                let dr = -radius * amplitude * k * (k * th).sin();
                let ddr = -radius * amplitude * k * k * (k * th).cos();
                let (s, c) = th.sin_cos();
                let w = 2.0 * PI;
                match order {
                    0 => [center[0] + r * c, center[1] + r * s],
                    1 => [w * (dr * c - r * s), w * (dr * s + r * c)],
                    _ => [w * w * (ddr * c - 2.0 * dr * s - r * c), w * w * (ddr * s + 2.0 * dr * c - r * s)],
                }
            }
            BoundaryCurve::Spline(s) => s.eval(tw, order),
            BoundaryCurve::Polygon { vertices } => {
                let (cum, total) = polygon_lengths(vertices);
                let n = vertices.len();
                let s = tw * total;
                let mut k = match cum.binary_search_by(|c| c.partial_cmp(&s).unwrap()) {
                    Ok(i) => i,
                    Err(i) => i.saturating_sub(1),
                };
                k = k.min(n - 1);
                let a = vertices[k];
                let b = vertices[(k + 1) % n];
                let len = cum[k + 1] - cum[k];
                match order {
                    0 => {
                        let u = (s - cum[k]) / len;
                        [a[0] + u * (b[0] - a[0]), a[1] + u * (b[1] - a[1])]
                    }
                    1 => [(b[0] - a[0]) / len * total, (b[1] - a[1]) / len * total],
                    _ => [0.0, 0.0],
                }
            }
        }
    }

    /// Total arclength by composite Gauss–Legendre quadrature.
    pub fn length(&self) -> f64 {
        if let BoundaryCurve::Polygon { vertices } = self {
            return polygon_lengths(vertices).1;
        }
        let n = 4096;
        let (gx, gw) = gauss3();
        let mut total = 0.0;
        for k in 0..n {
            let a = k as f64 / n as f64;
            let h = 1.0 / n as f64;
            for (x, w) in gx.iter().zip(gw.iter()) {
                total += w * h * self.speed(a + h * x);
            }
        }
        total
    }

    /// Uniform parameter sample of the curve.
    pub fn sample(&self, n: usize) -> Vec<Point> {
        (0..n).map(|k| self.point(k as f64 / n as f64)).collect()
    }

    /// Strict interior test.
    pub fn contains(&self, p: Point) -> bool {
        match self {
            BoundaryCurve::Circle { center, radius } => (p[0] - center[0]).hypot(p[1] - center[1]) < *radius,
            BoundaryCurve::Ellipse { center, semi_x, semi_y } => {
                let u = (p[0] - center[0]) / semi_x;
                let v = (p[1] - center[1]) / semi_y;
                u * u + v * v < 1.0
            }
            BoundaryCurve::Star { center, radius, amplitude, lobes } => {
                let dx = p[0] - center[0];
                let dy = p[1] - center[1];
                let th = dy.atan2(dx);
                let r = radius * (1.0 + amplitude * (*lobes as f64 * th).cos());
                dx.hypot(dy) < r
            }
            BoundaryCurve::Polygon { vertices } => point_in_polygon(p, vertices),
            BoundaryCurve::Spline(_) => point_in_polygon(p, &self.sample(4096)),
        }
    }

    /// Closest parameter to `p` and the distance to it.
    pub fn closest_param(&self, p: Point) -> (f64, f64) {
        let n = 4096;
        let dist2 = |t: f64| {
            let q = self.point(t);
            (q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2)
        };
        let mut best = (0.0, f64::INFINITY);
        for k in 0..n {
            let t = k as f64 / n as f64;
            let d = dist2(t);
            if d < best.1 {
                best = (t, d);
            }
        }
        // golden-section refinement on the bracketing cell
        let h = 1.0 / n as f64;
        let (mut lo, mut hi) = (best.0 - h, best.0 + h);
        let g = 0.5 * (5f64.sqrt() - 1.0);
        let mut c = hi - g * (hi - lo);
        let mut d = lo + g * (hi - lo);
        for _ in 0..80 {
            if dist2(c) < dist2(d) {
                hi = d;
            } else {
                lo = c;
            }
            c = hi - g * (hi - lo);
            d = lo + g * (hi - lo);
        }
        let t = 0.5 * (lo + hi);
        (t.rem_euclid(1.0), dist2(t).sqrt())
    }

    /// Checks closedness, regularity and simplicity on a dense sample.
    pub fn validate(&self) -> Result<()> {
        let a = self.point(0.0);
        let b = self.point(1.0 - 1e-12);
        let scale = self.length();
        if (a[0] - b[0]).hypot(a[1] - b[1]) > 1e-9 * scale.max(1.0) {
            return Err(Error::InvalidInput("curve is not closed".into()));
        }
        let n = 2048;
        let min_speed = 1e-9 * scale.max(1e-300);
        for k in 0..n {
            let t = (k as f64 + 0.5) / n as f64;
            let s = self.speed(t);
            if !(s > min_speed) {
                return Err(Error::DegenerateCurve { t, speed: s });
            }
        }
        let pts = self.sample(512);
        if polygon_self_intersects(&pts) {
            return Err(Error::InvalidInput("curve self-intersects".into()));
        }
        Ok(())
    }
}

fn ellipse_eval(c: Point, ax: f64, ay: f64, t: f64, order: usize) -> Point {
    let w = 2.0 * PI;
    let (s, co) = (w * t).sin_cos();
    match order {
        0 => [c[0] + ax * co, c[1] + ay * s],
        1 => [-w * ax * s, w * ay * co],
        _ => [-w * w * ax * co, -w * w * ay * s],
    }
}

fn polygon_lengths(v: &[Point]) -> (Vec<f64>, f64) {
    let n = v.len();
    let mut cum = Vec::with_capacity(n + 1);
    let mut acc = 0.0;
    cum.push(0.0);
    for k in 0..n {
        let a = v[k];
        let b = v[(k + 1) % n];
        acc += (b[0] - a[0]).hypot(b[1] - a[1]);
        cum.push(acc);
    }
    (cum, acc)
}

fn gauss3() -> ([f64; 3], [f64; 3]) {
    let r = (0.6f64).sqrt();
    ([0.5 * (1.0 - r), 0.5, 0.5 * (1.0 + r)], [5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0])
}

pub fn signed_area(poly: &[Point]) -> f64 {
    let n = poly.len();
    (0..n)
        .map(|k| {
            let a = poly[k];
            let b = poly[(k + 1) % n];
            a[0] * b[1] - b[0] * a[1]
        })
        .sum::<f64>()
        * 0.5
}

/// Even-odd rule.
pub fn point_in_polygon(p: Point, poly: &[Point]) -> bool {
    let n = poly.len();
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (poly[i], poly[j]);
        if (a[1] > p[1]) != (b[1] > p[1]) {
            let x = a[0] + (p[1] - a[1]) / (b[1] - a[1]) * (b[0] - a[0]);
            if p[0] < x {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

/// Distance from `p` to the segment `[a, b]`.
pub fn segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let d = [b[0] - a[0], b[1] - a[1]];
    let len2 = d[0] * d[0] + d[1] * d[1];
    let u = if len2 > 0.0 { (((p[0] - a[0]) * d[0] + (p[1] - a[1]) * d[1]) / len2).clamp(0.0, 1.0) } else { 0.0 };
    (p[0] - a[0] - u * d[0]).hypot(p[1] - a[1] - u * d[1])
}

fn polygon_self_intersects(p: &[Point]) -> bool {
    let n = p.len();
    let orient = |a: Point, b: Point, c: Point| (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
    for i in 0..n {
        let (a, b) = (p[i], p[(i + 1) % n]);
        for j in (i + 2)..n {
            if i == 0 && j == n - 1 {
                continue;
            }
            let (c, d) = (p[j], p[(j + 1) % n]);
            let o1 = orient(a, b, c);
            let o2 = orient(a, b, d);
            let o3 = orient(c, d, a);
            let o4 = orient(c, d, b);
            if o1 * o2 < 0.0 && o3 * o4 < 0.0 {
                return true;
            }
        }
    }
    false
}
