use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::curve::{BoundaryCurve, Point};
use super::expr::Expr;
use crate::error::{Error, Result};

/// The anisotropy `a(x)` with declared bounds `0 < a0 ≤ a ≤ a1`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightField {
    expr: Expr,
    source: String,
    pub a0: f64,
    pub a1: f64,
}

impl WeightField {
    pub fn constant(c: f64) -> Self {
        WeightField { expr: Expr::Num(c), source: format!("{c:?}"), a0: c, a1: c }
    }

    /// `a(x) = x1`, the axisymmetric torus weight. Bounds must be set for the domain.
    pub fn x1() -> Self {
        WeightField { expr: Expr::X1, source: "x1".into(), a0: f64::NAN, a1: f64::NAN }
    }

    /// Parses an expression; bounds are left undeclared until [`WeightField::with_bounds_on`].
    pub fn parse(src: &str) -> Result<Self> {
        Ok(WeightField { expr: Expr::parse(src)?, source: src.trim().to_string(), a0: f64::NAN, a1: f64::NAN })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn is_constant(&self) -> bool {
        matches!(self.expr, Expr::Num(_))
    }

    pub fn value(&self, x: Point) -> f64 {
        self.expr.eval(x)
    }

    pub fn gradient(&self, x: Point) -> [f64; 2] {
        self.expr.eval_dual(x).g
    }

    pub fn grad_log(&self, x: Point) -> [f64; 2] {
        let d = self.expr.eval_dual(x);
        [d.g[0] / d.v, d.g[1] / d.v]
    }

    pub fn with_bounds(mut self, a0: f64, a1: f64) -> Self {
        self.a0 = a0;
        self.a1 = a1;
        self
    }

    /// Declares bounds as the min/max over a dense sample of the closed domain.
    pub fn with_bounds_on(self, curve: &BoundaryCurve) -> Self {
        let (lo, hi) = self.sample_range(curve);
        self.with_bounds(lo, hi)
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        WeightField { expr: self.expr.shifted(dx, dy), source: format!("{}", self.expr.shifted(dx, dy)), a0: self.a0, a1: self.a1 }
    }

    fn dense_sample(curve: &BoundaryCurve) -> Vec<Point> {
        let mut pts = curve.sample(4096);
        let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
        for p in &pts {
            x0 = x0.min(p[0]);
            x1 = x1.max(p[0]);
            y0 = y0.min(p[1]);
            y1 = y1.max(p[1]);
        }
        let n = 160;
        for i in 0..=n {
            for j in 0..=n {
                let p = [x0 + (x1 - x0) * i as f64 / n as f64, y0 + (y1 - y0) * j as f64 / n as f64];
                if curve.contains(p) {
                    pts.push(p);
                }
            }
        }
        pts
    }

    fn sample_range(&self, curve: &BoundaryCurve) -> (f64, f64) {
        Self::dense_sample(curve)
            .iter()
            .map(|&p| self.value(p))
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
    }

    /// Verifies `0 < a0 ≤ a(x) ≤ a1` on a dense sample of the closed domain.
    pub fn check_bounds(&self, curve: &BoundaryCurve) -> Result<()> {
        if !(self.a0 > 0.0) || !(self.a1 >= self.a0) || !self.a1.is_finite() {
            return Err(Error::InvalidInput(format!("weight bounds must satisfy 0 < a0 <= a1 < inf, got a0={}, a1={}", self.a0, self.a1)));
        }
        let tol = 1e-12 * self.a1;
        for p in Self::dense_sample(curve) {
            let v = self.value(p);
            if !(v > 0.0) {
                return Err(Error::NonpositiveWeight { x: p[0], y: p[1], value: v });
            }
            if v < self.a0 - tol || v > self.a1 + tol {
                return Err(Error::InvalidInput(format!("a({}, {}) = {v} outside declared bounds [{}, {}]", p[0], p[1], self.a0, self.a1)));
            }
        }
        Ok(())
    }

    /// Largest discrepancy between central differences and the exact gradient on the sample.
    pub fn gradient_consistency(&self, curve: &BoundaryCurve, step: f64) -> f64 {
        let mut worst = 0.0f64;
        for p in Self::dense_sample(curve).iter().step_by(7) {
            let g = self.gradient(*p);
            let fx = (self.value([p[0] + step, p[1]]) - self.value([p[0] - step, p[1]])) / (2.0 * step);
            let fy = (self.value([p[0], p[1] + step]) - self.value([p[0], p[1] - step])) / (2.0 * step);
            worst = worst.max((g[0] - fx).abs()).max((g[1] - fy).abs());
        }
        worst
    }
}

#[derive(Serialize, Deserialize)]
struct WeightRepr {
    expr: String,
    a0: f64,
    a1: f64,
}

impl Serialize for WeightField {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        WeightRepr { expr: self.source.clone(), a0: self.a0, a1: self.a1 }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for WeightField {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = WeightRepr::deserialize(d)?;
        let w = WeightField::parse(&r.expr).map_err(serde::de::Error::custom)?;
        Ok(w.with_bounds(r.a0, r.a1))
    }
}
