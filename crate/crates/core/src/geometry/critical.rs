use serde::{Deserialize, Serialize};

use super::curve::{BoundaryCurve, Point};
use super::weight::WeightField;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CriticalKind {
    Min,
    Max,
    NondegenerateSaddle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalPoint {
    pub xi: Point,
    pub t: f64,
    pub kind: CriticalKind,
    pub degree_sign: i32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalScan {
    pub points: Vec<CriticalPoint>,
    /// Parameter intervals on which the tangential derivative vanishes to tolerance.
    pub plateaus: Vec<(f64, f64)>,
}

impl CriticalScan {
    pub fn has_degenerate_plateau(&self) -> bool {
        !self.plateaus.is_empty()
    }

    /// The stable point nearest to `p`, if any.
    pub fn nearest(&self, p: Point) -> Option<&CriticalPoint> {
        self.points.iter().min_by(|a, b| {
            let da = (a.xi[0] - p[0]).hypot(a.xi[1] - p[1]);
            let db = (b.xi[0] - p[0]).hypot(b.xi[1] - p[1]);
            da.total_cmp(&db)
        })
    }
}

const SAMPLES: usize = 2048;

/// `d/dt a(γ(t))`.
pub fn tangential_derivative(a: &WeightField, curve: &BoundaryCurve, t: f64) -> f64 {
    let g = a.gradient(curve.point(t));
    let d = curve.tangent(t);
    g[0] * d[0] + g[1] * d[1]
}

/// Sign changes of the tangential derivative of `a` along the curve, refined by bisection.
pub fn boundary_critical_points(a: &WeightField, curve: &BoundaryCurve, tol: f64) -> CriticalScan {
    let ts: Vec<f64> = (0..SAMPLES).map(|k| k as f64 / SAMPLES as f64).collect();
    let ds: Vec<f64> = ts.iter().map(|&t| tangential_derivative(a, curve, t)).collect();
    let scale = ds.iter().fold(0.0f64, |m, d| m.max(d.abs()));
    let flat = |d: f64| d.abs() <= tol * scale.max(1.0) || scale == 0.0;

    let mut plateaus = Vec::new();
    if ds.iter().all(|&d| flat(d)) {
        plateaus.push((0.0, 1.0));
        return CriticalScan { points: vec![], plateaus };
    }
    // Runs of at least two consecutive flat samples are plateaus.
    let mut k = 0;
    while k < SAMPLES {
        if flat(ds[k]) && flat(ds[(k + 1) % SAMPLES]) {
            let start = k;
            while k < SAMPLES && flat(ds[k]) {
                k += 1;
            }
            plateaus.push((ts[start], if k < SAMPLES { ts[k - 1] } else { 1.0 }));
        } else {
            k += 1;
        }
    }
    let in_plateau = |t: f64| plateaus.iter().any(|&(a, b)| t >= a - 1.0 / SAMPLES as f64 && t <= b + 1.0 / SAMPLES as f64);

    let mut points = Vec::new();
    // Start from a sample with a clearly nonzero derivative so the cyclic scan sees each change once.
    let first = (0..SAMPLES).find(|&k| !flat(ds[k])).unwrap_or(0);
    let mut prev = first;
    for step in 1..=SAMPLES {
        let k = (first + step) % SAMPLES;
        if flat(ds[k]) && k != first {
            continue;
        }
        let (dp, dk) = (ds[prev], ds[k]);
        if dp.signum() != dk.signum() {
            let t0 = ts[prev];
            let mut t1 = ts[k];
            if t1 <= t0 {
                t1 += 1.0;
            }
            let (mut lo, mut hi) = (t0, t1);
            let f = |t: f64| tangential_derivative(a, curve, t.rem_euclid(1.0));
            let flo = f(lo);
            for _ in 0..200 {
                let m = 0.5 * (lo + hi);
                let step_len = curve.speed(m.rem_euclid(1.0)) * (hi - lo);
                if step_len <= tol {
                    break;
                }
                if f(m).signum() == flo.signum() {
                    lo = m;
                } else {
                    hi = m;
                }
            }
            let t = (0.5 * (lo + hi)).rem_euclid(1.0);
            if !in_plateau(t) {
                let (kind, degree_sign) = if dp < 0.0 { (CriticalKind::Min, 1) } else { (CriticalKind::Max, -1) };
                points.push(CriticalPoint { xi: curve.point(t), t, kind, degree_sign });
            }
        }
        prev = k;
    }
    points.sort_by(|a, b| a.t.total_cmp(&b.t));
    CriticalScan { points, plateaus }
}
