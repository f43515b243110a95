use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{solve_load_scaled, FemProblem, Field};
use crate::geometry::{BoundaryCurve, Point};
use crate::greens::{balance_load, interior_load, snap_to_boundary, Normalization};

fn dist2(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

/// Half-plane solution `w_{t,μ}(x) = log(2μ / ((x₁−t)² + (x₂+μ)²))` of `Δw = 0`, `∂_ν w = e^w`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bubble {
    pub t: f64,
    pub mu: f64,
}

impl Bubble {
    pub fn new(t: f64, mu: f64) -> Result<Self> {
        if !(mu > 0.0) || !t.is_finite() {
            return Err(Error::InvalidInput(format!("bubble needs finite t and μ > 0, got t={t}, μ={mu}")));
        }
        Ok(Bubble { t, mu })
    }

    pub fn value(&self, x: Point) -> f64 {
        (2.0 * self.mu / ((x[0] - self.t).powi(2) + (x[1] + self.mu).powi(2))).ln()
    }

    pub fn gradient(&self, x: Point) -> Point {
        let d = (x[0] - self.t).powi(2) + (x[1] + self.mu).powi(2);
        [-2.0 * (x[0] - self.t) / d, -2.0 * (x[1] + self.mu) / d]
    }

    /// Value at the top of the bubble, `log(2/μ)`, attained at `(t, 0)`.
    pub fn peak(&self) -> f64 {
        (2.0 / self.mu).ln()
    }
}

/// `max |−∂_{x₂} w(x₁, 0) − e^{w(x₁, 0)}|` over the sample abscissae.
pub fn bubble_boundary_identity(b: &Bubble, sample: &[f64]) -> f64 {
    sample
        .iter()
        .map(|&x1| {
            let x = [x1, 0.0];
            (-b.gradient(x)[1] - b.value(x).exp()).abs()
        })
        .fold(0.0, f64::max)
}

/// Bounded kernel of the linearized half-plane problem `∂_ν φ = 2μ/(x₁²+μ²) φ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelPair {
    pub mu: f64,
}

impl KernelPair {
    fn d(&self, x: Point) -> f64 {
        x[0] * x[0] + (x[1] + self.mu).powi(2)
    }

    pub fn z0(&self, x: Point) -> f64 {
        1.0 - 2.0 * self.mu * (x[1] + self.mu) / self.d(x)
    }

    pub fn z1(&self, x: Point) -> f64 {
        -2.0 * x[0] / self.d(x)
    }

    pub fn z(&self, i: usize, x: Point) -> f64 {
        if i == 0 {
            self.z0(x)
        } else {
            self.z1(x)
        }
    }

    /// `∂_{x₂} z_i`, analytic.
    pub fn dz_dx2(&self, i: usize, x: Point) -> f64 {
        let d = self.d(x);
        let s = x[1] + self.mu;
        if i == 0 {
            -2.0 * self.mu * (x[0] * x[0] - s * s) / (d * d)
        } else {
            4.0 * x[0] * s / (d * d)
        }
    }

    /// Robin coefficient `2μ/(x₁² + μ²)` on the line `x₂ = 0`.
    pub fn potential(&self, x1: f64) -> f64 {
        2.0 * self.mu / (x1 * x1 + self.mu * self.mu)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelResidual {
    /// Max 5-point Laplacian of `z₀`, `z₁` over the interior grid.
    pub laplacian: [f64; 2],
    /// Max `|−∂_{x₂} z_i − 2μ/(x₁²+μ²) z_i|` on the boundary samples.
    pub boundary: [f64; 2],
}

/// Residuals of both kernel functions: 5-point Laplacian with step `step` at `interior`
/// points (which must lie at least `step` above the line) and the analytic boundary condition
/// at the `boundary` abscissae.
pub fn kernel_residual(k: &KernelPair, interior: &[Point], step: f64, boundary: &[f64]) -> Result<KernelResidual> {
    if interior.iter().any(|p| p[1] < step) {
        return Err(Error::InvalidInput("finite-difference stencil leaves the half-plane".into()));
    }
    let mut out = KernelResidual { laplacian: [0.0; 2], boundary: [0.0; 2] };
    for i in 0..2 {
        for &p in interior {
            let c = k.z(i, p);
            let lap =
                (k.z(i, [p[0] + step, p[1]]) + k.z(i, [p[0] - step, p[1]]) + k.z(i, [p[0], p[1] + step]) + k.z(i, [p[0], p[1] - step])
                    - 4.0 * c)
                    / (step * step);
            out.laplacian[i] = out.laplacian[i].max(lap.abs());
        }
        for &x1 in boundary {
            let x = [x1, 0.0];
            let r = (-k.dz_dx2(i, x) - k.potential(x1) * k.z(i, x)).abs();
            out.boundary[i] = out.boundary[i].max(r);
        }
    }
    Ok(out)
}

/// Two concentration points, their scales, and the parameter `λ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnsatzConfig {
    pub xi: [Point; 2],
    pub mu: [f64; 2],
    pub lambda: f64,
    #[serde(default)]
    pub normalization: Normalization,
    /// Minimum number of boundary edges across the bubble width `λμ_j`.
    #[serde(default = "default_edges")]
    pub min_edges_across: f64,
}

fn default_edges() -> f64 {
    8.0
}

impl AnsatzConfig {
    pub fn new(xi: [Point; 2], mu: [f64; 2], lambda: f64) -> Self {
        AnsatzConfig { xi, mu, lambda, normalization: Normalization::Unweighted, min_edges_across: default_edges() }
    }

    pub fn swapped(&self) -> Self {
        AnsatzConfig { xi: [self.xi[1], self.xi[0]], mu: [self.mu[1], self.mu[0]], ..*self }
    }
}

/// `u_j^λ(x) = log(2μ_j / |x − ξ_j − λμ_jν_j|²)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShiftedBubble {
    pub xi: Point,
    pub normal: Point,
    pub mu: f64,
    pub lambda: f64,
}

impl ShiftedBubble {
    pub fn center(&self) -> Point {
        let s = self.lambda * self.mu;
        [self.xi[0] + s * self.normal[0], self.xi[1] + s * self.normal[1]]
    }

    pub fn value(&self, x: Point) -> f64 {
        (2.0 * self.mu / dist2(x, self.center())).ln()
    }

    pub fn gradient(&self, x: Point) -> Point {
        let c = self.center();
        let d = dist2(x, c);
        [-2.0 * (x[0] - c[0]) / d, -2.0 * (x[1] - c[1]) / d]
    }

    /// `−∂_ν u + λe^u` at a boundary point with outward normal `nu`, without cancellation.
    pub fn flux_defect(&self, x: Point, nu: Point) -> f64 {
        let d = dist2(x, self.center());
        let s = self.lambda * self.mu;
        let cos = self.normal[0] * nu[0] + self.normal[1] * nu[1];
        (2.0 * s * (1.0 - cos) + 2.0 * ((x[0] - self.xi[0]) * nu[0] + (x[1] - self.xi[1]) * nu[1])) / d
    }
}

const GL5: [(f64, f64); 5] = [
    (0.0, 0.568_888_888_888_888_9),
    (-0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (-0.906_179_845_938_664, 0.236_926_885_056_189_1),
    (0.906_179_845_938_664, 0.236_926_885_056_189_1),
];

/// `∫_∂Ω f` along the exact curve, with panels graded geometrically toward `γ(t0)` down to
/// `width` (a near-singular feature of that size sits there).
pub fn curve_integral(curve: &BoundaryCurve, f: impl Fn(Point, f64) -> f64, t0: f64, width: f64) -> f64 {
    let w = (width / curve.speed(t0)).clamp(1e-14, 0.5);
    let mut edges = vec![0.0];
    let mut e = w / 8.0;
    while e < 0.5 {
        edges.push(e);
        e *= 2.0;
    }
    edges.push(0.5);
    let max_panel = 1.0 / 512.0;
    let mut total = 0.0;
    for side in [-1.0, 1.0] {
        for k in 0..edges.len() - 1 {
            let (a, b) = (edges[k], edges[k + 1]);
            let n = ((b - a) / max_panel).ceil().max(1.0) as usize;
            let hp = (b - a) / n as f64;
            for m in 0..n {
                let lo = a + m as f64 * hp;
                for (s, wq) in GL5 {
                    let tau = lo + 0.5 * hp * (s + 1.0);
                    let t = t0 + side * tau;
                    total += 0.5 * hp * wq * f(curve.point(t), t) * curve.speed(t);
                }
            }
        }
    }
    total
}

/// Relative flux imbalance of the `H_j^λ` data tolerated as quadrature error.
pub const COMPATIBILITY_TOL: f64 = 1e-2;

fn local_edge(p: &FemProblem, node: usize) -> f64 {
    let nb = p.nb();
    0.5 * (p.mesh.boundary_edge(node) + p.mesh.boundary_edge((node + nb - 1) % nb))
}

/// `H_j^λ`: `−Δ_a H = ∇log a·∇u_j^λ` in Ω, `∂_ν H = −∂_ν u + λe^u − (λ/∫a)∫a e^u` on ∂Ω,
/// normalized by `∫_∂Ω H = −∫_∂Ω u` (or the weighted analogue).
pub fn correction_field(p: &FemProblem, b: &ShiftedBubble, norm: Normalization, min_edges_across: f64) -> Result<Field> {
    let node = snap_to_boundary(p, b.xi)?;
    let width = b.lambda * b.mu;
    let edges_across = width / local_edge(p, node);
    if edges_across < min_edges_across {
        return Err(Error::UnderResolved { width, edges_across });
    }
    let c = b.center();
    if p.mesh.curve.contains(c) || p.mesh.boundary_points().iter().any(|&x| dist2(x, c) < 0.25 * width * width) {
        return Err(Error::InvalidInput("shifted bubble centre must lie outside the closed domain".into()));
    }
    let nb = p.nb();
    let n = p.mesh.n_nodes();
    let mut load = vec![0.0; n];
    // Exponential part: λe^u minus its weighted average, so it is balanced under the lumped mass.
    let e: Vec<f64> = (0..nb).map(|k| b.lambda * b.value(p.mesh.nodes[k]).exp()).collect();
    let mean_e = p.mass.weighted_integral(&e) / p.mass.total_weighted();
    // Size of the individual flux terms before they cancel, for the compatibility check.
    let mut magnitude = 0.0;
    for k in 0..nb {
        let x = p.mesh.nodes[k];
        let g = b.flux_defect(x, p.mesh.boundary_normal(k)) - mean_e;
        load[k] = p.mass.weighted[k] * g;
        let gu = b.gradient(x);
        let nu = p.mesh.boundary_normal(k);
        magnitude += p.mass.weighted[k] * ((gu[0] * nu[0] + gu[1] * nu[1]).abs() + e[k]);
    }
    if !p.a.is_constant() {
        let a = &p.a;
        let f = |x: Point| -> f64 {
            let ga = a.gradient(x);
            let gu = b.gradient(x);
            ga[0] * gu[0] + ga[1] * gu[1]
        };
        let li = interior_load(p, &f, b.xi, 10.0 * width);
        for (l, v) in load.iter_mut().zip(li) {
            magnitude += v.abs();
            *l += v;
        }
    }
    let reference = load.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let net: f64 = load.iter().sum();
    balance_load(p, &mut load);
    let defect = net.abs() / magnitude;
    if defect > COMPATIBILITY_TOL {
        return Err(Error::Incompatible { defect, allowed: COMPATIBILITY_TOL });
    }
    let mut h = solve_load_scaled(p, &load, reference)?;

    let t0 = p.mesh.boundary_params[node];
    let (target, integral, measure) = match norm {
        Normalization::Unweighted => {
            (-curve_integral(&p.mesh.curve, |x, _| b.value(x), t0, width), p.mass.integral(&h.values[..nb]), p.mass.total_unweighted())
        }
        Normalization::Weighted => (
            -curve_integral(&p.mesh.curve, |x, _| p.a.value(x) * b.value(x), t0, width),
            p.mass.weighted_integral(&h.values[..nb]),
            p.mass.total_weighted(),
        ),
    };
    let shift = (target - integral) / measure;
    for v in h.values.iter_mut() {
        *v += shift;
    }
    Ok(h)
}

/// `U_λ = [u₁ + H₁] − [u₂ + H₂]` on the mesh, with its ingredients.
#[derive(Debug, Clone)]
pub struct Ansatz {
    pub config: AnsatzConfig,
    pub bubbles: [ShiftedBubble; 2],
    pub corrections: [Field; 2],
    pub u: Field,
    /// `(λ/∫a) ∫a e^{u_j}` under the lumped boundary mass.
    pub flux_means: [f64; 2],
}

pub fn shifted_bubbles(p: &FemProblem, cfg: &AnsatzConfig) -> Result<[ShiftedBubble; 2]> {
    if !(cfg.lambda > 0.0) || cfg.mu.iter().any(|m| !(*m > 0.0)) {
        return Err(Error::InvalidInput("λ and μ_j must be positive".into()));
    }
    if dist2(cfg.xi[0], cfg.xi[1]) == 0.0 {
        return Err(Error::InvalidInput("concentration points must differ".into()));
    }
    let mk = |j: usize| -> Result<ShiftedBubble> {
        snap_to_boundary(p, cfg.xi[j])?;
        let (t, _) = p.mesh.curve.closest_param(cfg.xi[j]);
        Ok(ShiftedBubble { xi: cfg.xi[j], normal: p.mesh.curve.normal(t), mu: cfg.mu[j], lambda: cfg.lambda })
    };
    Ok([mk(0)?, mk(1)?])
}

pub fn build_ansatz(p: &FemProblem, cfg: &AnsatzConfig) -> Result<Ansatz> {
    let bubbles = shifted_bubbles(p, cfg)?;
    let (h1, h2) = rayon::join(
        || correction_field(p, &bubbles[0], cfg.normalization, cfg.min_edges_across),
        || correction_field(p, &bubbles[1], cfg.normalization, cfg.min_edges_across),
    );
    let corrections = [h1?, h2?];
    let u: Vec<f64> = p
        .mesh
        .nodes
        .iter()
        .enumerate()
        .map(|(i, &x)| (bubbles[0].value(x) + corrections[0].values[i]) - (bubbles[1].value(x) + corrections[1].values[i]))
        .collect();
    let nb = p.nb();
    let flux_means = bubbles.map(|b| {
        let e: Vec<f64> = (0..nb).map(|k| b.lambda * b.value(p.mesh.nodes[k]).exp()).collect();
        p.mass.weighted_integral(&e) / p.mass.total_weighted()
    });
    Ok(Ansatz { config: *cfg, bubbles, corrections, u: Field { values: u }, flux_means })
}

impl Ansatz {
    /// Node coordinates of the expanded domain `Ω/λ`, on which `V(y) = U_λ(λy)` takes the nodal values of `u`.
    pub fn scaled_nodes(&self, p: &FemProblem) -> Vec<Point> {
        let l = self.config.lambda;
        p.mesh.nodes.iter().map(|x| [x[0] / l, x[1] / l]).collect()
    }

    /// Exact normal derivative of `U_λ` at boundary node `k` (both `H_j^λ` satisfy their data exactly).
    pub fn normal_derivative(&self, p: &FemProblem, k: usize) -> f64 {
        let x = p.mesh.nodes[k];
        let [b1, b2] = self.bubbles;
        (b1.lambda * b1.value(x).exp() - self.flux_means[0]) - (b2.lambda * b2.value(x).exp() - self.flux_means[1])
    }
}

/// `‖h‖_* = sup |h| / Σ_j (1+|y−ξ'_j|)^{−1−σ}` and `‖f‖_**` with exponent `−2−σ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightedNorms {
    pub sigma: f64,
    pub centers: [Point; 2],
}

impl WeightedNorms {
    pub fn new(sigma: f64, centers: [Point; 2]) -> Result<Self> {
        if !(sigma > 0.0) {
            return Err(Error::InvalidInput("σ must be positive".into()));
        }
        Ok(WeightedNorms { sigma, centers })
    }

    /// Scaled centres `ξ_j/λ` of a configuration.
    pub fn for_config(sigma: f64, cfg: &AnsatzConfig) -> Result<Self> {
        let l = cfg.lambda;
        WeightedNorms::new(sigma, cfg.xi.map(|x| [x[0] / l, x[1] / l]))
    }

    fn weight(&self, y: Point, exponent: f64) -> f64 {
        self.centers.iter().map(|c| (1.0 + dist2(y, *c).sqrt()).powf(-exponent)).sum()
    }

    pub fn star(&self, values: &[f64], points: &[Point]) -> f64 {
        self.norm(values, points, 1.0 + self.sigma)
    }

    pub fn star_star(&self, values: &[f64], points: &[Point]) -> f64 {
        self.norm(values, points, 2.0 + self.sigma)
    }

    fn norm(&self, values: &[f64], points: &[Point], exponent: f64) -> f64 {
        values.iter().zip(points).map(|(v, &y)| v.abs() / self.weight(y, exponent)).fold(0.0, f64::max)
    }
}

pub const OVERFLOW_GUARD: f64 = 700.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnsatzResidual {
    pub lambda: f64,
    pub mu1: f64,
    pub mu2: f64,
    /// `R(y) = −[∂_ν V − 2λ² sinh V]` at the boundary nodes (scaled variables).
    #[serde(skip)]
    pub r: Vec<f64>,
    /// `W(y) = 2λ² cosh V` at the boundary nodes.
    #[serde(skip)]
    pub w: Vec<f64>,
    /// `W / Σ_j 2μ_j/|y − ξ'_j − μ_jν'_j|² − 1` at the boundary nodes.
    #[serde(skip)]
    pub theta: Vec<f64>,
    pub r_star_norm: f64,
    /// Sup of `|θ_λ|` over the boundary.
    pub theta_sup: f64,
    /// Sup of `|θ_λ|` where `|x − ξ_j| ≤ √λ` for some `j`.
    pub theta_sup_local: f64,
}

pub fn ansatz_residual(p: &FemProblem, ans: &Ansatz, norms: &WeightedNorms) -> Result<AnsatzResidual> {
    let nb = p.nb();
    let l = ans.config.lambda;
    let vmax = ans.u.values[..nb].iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if vmax > OVERFLOW_GUARD {
        return Err(Error::OverflowGuard { max_abs: vmax, guard: OVERFLOW_GUARD });
    }
    let mut r = Vec::with_capacity(nb);
    let mut w = Vec::with_capacity(nb);
    let mut theta = Vec::with_capacity(nb);
    let mut theta_sup_local = 0.0f64;
    let window = l.sqrt();
    for k in 0..nb {
        let x = p.mesh.nodes[k];
        let v = ans.u.values[k];
        // ∂_ν in y = x/λ is λ∂_ν in x.
        r.push(-(l * ans.normal_derivative(p, k) - 2.0 * l * l * v.sinh()));
        let wk = 2.0 * l * l * v.cosh();
        w.push(wk);
        let lead: f64 = ans.bubbles.iter().map(|b| 2.0 * b.mu * l * l / dist2(x, b.center())).sum();
        let th = wk / lead - 1.0;
        theta.push(th);
        if ans.bubbles.iter().any(|b| dist2(x, b.xi).sqrt() <= window) {
            theta_sup_local = theta_sup_local.max(th.abs());
        }
    }
    let scaled = ans.scaled_nodes(p);
    let r_star_norm = norms.star(&r, &scaled[..nb]);
    let theta_sup = theta.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    Ok(AnsatzResidual { lambda: l, mu1: ans.config.mu[0], mu2: ans.config.mu[1], r, w, theta, r_star_norm, theta_sup, theta_sup_local })
}

/// Least-squares slope of `log y` against `log x`.
pub fn fit_rate(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::InvalidInput("rate fit needs at least two matching samples".into()));
    }
    if x.iter().chain(y).any(|v| !(*v > 0.0)) {
        return Err(Error::InvalidInput("rate fit needs positive samples".into()));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    Ok(sxy / sxx)
}

/// Residual report written next to an ansatz run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub lambda: f64,
    pub mu1: f64,
    pub mu2: f64,
    pub r_star_norm: f64,
    pub theta_sup: f64,
    pub alpha_fit: Option<f64>,
}

impl From<&AnsatzResidual> for ResidualReport {
    fn from(r: &AnsatzResidual) -> Self {
        ResidualReport { lambda: r.lambda, mu1: r.mu1, mu2: r.mu2, r_star_norm: r.r_star_norm, theta_sup: r.theta_sup, alpha_fit: None }
    }
}
