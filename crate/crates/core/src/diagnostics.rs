use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{FemProblem, Field};
use crate::geometry::{CriticalPoint, Point};
use crate::io::{fmt17, write_atomic, write_json, Table};
use crate::plot::{line_chart, Series};
use crate::solver::{residual_norm, Branch};

/// Same threshold as the solver's guard.
pub const OVERFLOW_GUARD: f64 = 700.0;

/// Residual below which a field counts as a converged solution for reporting.
pub const CONVERGED_RESIDUAL: f64 = 1e-8;

fn guard(ub: &[f64]) -> Result<()> {
    let m = ub.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if !(m <= OVERFLOW_GUARD) {
        return Err(Error::OverflowGuard { max_abs: m, guard: OVERFLOW_GUARD });
    }
    Ok(())
}

/// `∫ a|∇u|² = uᵀKu`.
pub fn dirichlet(p: &FemProblem, u: &Field) -> f64 {
    p.k.energy(&u.values)
}

/// `E_λ(u) = ½uᵀKu − λ Σ_k a_k w_k (cosh u_k − 1)`.
pub fn energy(p: &FemProblem, u: &Field, lambda: f64) -> Result<f64> {
    let ub = u.trace(&p.mesh);
    guard(ub)?;
    // cosh u − 1 = 2 sinh²(u/2) keeps small amplitudes exact.
    let c: Vec<f64> = ub.iter().map(|v| 2.0 * (0.5 * v).sinh().powi(2)).collect();
    Ok(0.5 * dirichlet(p, u) - lambda * p.mass.weighted_integral(&c))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeanSplit {
    pub u0: Field,
    pub s: f64,
    /// `|s − ½ log(∫a e^{−u⁰} / ∫a e^{u⁰})|`.
    pub defect: f64,
}

fn log_weighted_exp(w: &[f64], v: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = v.clone().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = w.iter().zip(v).map(|(w, x)| w * (x - m).exp()).sum();
    m + s.ln()
}

pub fn mean_split(p: &FemProblem, u: &Field) -> MeanSplit {
    let ub = u.trace(&p.mesh);
    let s = p.mass.weighted_integral(ub) / p.mass.total_weighted();
    let u0 = Field { values: u.values.iter().map(|v| v - s).collect() };
    let b0 = u0.trace(&p.mesh);
    let w = &p.mass.weighted;
    let formula = 0.5 * (log_weighted_exp(w, b0.iter().map(|v| -v)) - log_weighted_exp(w, b0.iter().copied()));
    MeanSplit { u0, s, defect: (s - formula).abs() }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PeakOptions {
    /// Peaks must exceed this multiple of the median `|density|`.
    pub median_factor: f64,
    /// The mass window is the arc where `|density|` stays above this fraction of the peak.
    pub support_fraction: f64,
    /// The `μ̂` fit uses boundary nodes within this multiple of `λ` of the peak.
    pub fit_radius: f64,
}

impl Default for PeakOptions {
    fn default() -> Self {
        PeakOptions { median_factor: 5.0, support_fraction: 1e-3, fit_radius: 10.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub node: usize,
    pub location: Point,
    pub t: f64,
    pub sign: i32,
    pub density: f64,
    pub mass_unweighted: f64,
    pub mass_weighted: f64,
    /// Boundary nodes in the mass window.
    pub support: usize,
    pub mu_fit: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FluxMeasure {
    pub lambda: f64,
    /// `λ sinh u` at the boundary nodes.
    pub density: Vec<f64>,
    /// Arclength of each boundary node along the boundary polygon.
    pub arclength: Vec<f64>,
    pub total_unweighted: f64,
    pub total_weighted: f64,
    pub signed_unweighted: f64,
    pub signed_weighted: f64,
    pub peaks: Vec<Peak>,
    /// False when `u` does not solve the discrete problem; the numbers are still reported.
    pub converged: bool,
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Least-squares `μ̂` of `±u ≈ log(2μ / |x − ξ̂ − (λ/2)μν|²)` over the boundary nodes within
/// `radius` of the peak node.
pub fn fit_mu(p: &FemProblem, u: &Field, lambda: f64, node: usize, sign: i32, radius: f64) -> Option<f64> {
    let xi = p.mesh.nodes[node];
    let nu = p.mesh.boundary_normal(node);
    let pts: Vec<(Point, f64)> = (0..p.nb())
        .filter(|&k| (p.mesh.nodes[k][0] - xi[0]).hypot(p.mesh.nodes[k][1] - xi[1]) <= radius)
        .map(|k| (p.mesh.nodes[k], sign as f64 * u.values[k]))
        .collect();
    if pts.len() < 3 {
        return None;
    }
    let shift = 0.5 * lambda;
    let cost = |lm: f64| -> f64 {
        let mu = lm.exp();
        let c = [xi[0] + shift * mu * nu[0], xi[1] + shift * mu * nu[1]];
        pts.iter()
            .map(|(x, v)| {
                let d2 = (x[0] - c[0]).powi(2) + (x[1] - c[1]).powi(2);
                (v - (2.0 * mu / d2).ln()).powi(2)
            })
            .sum()
    };
    let (lo, hi) = ((1e-3f64).ln(), (1e3f64).ln());
    let n = 240;
    let grid: Vec<f64> = (0..=n).map(|i| lo + (hi - lo) * i as f64 / n as f64).collect();
    let best = (0..=n).min_by(|&a, &b| cost(grid[a]).total_cmp(&cost(grid[b])))?;
    if best == 0 || best == n {
        return None;
    }
    let (mut a, mut b) = (grid[best - 1], grid[best + 1]);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let (mut c, mut d) = (b - g * (b - a), a + g * (b - a));
    for _ in 0..80 {
        if cost(c) < cost(d) {
            b = d;
        } else {
            a = c;
        }
        c = b - g * (b - a);
        d = a + g * (b - a);
    }
    Some((0.5 * (a + b)).exp())
}

pub fn flux_measure(p: &FemProblem, u: &Field, lambda: f64, opts: &PeakOptions) -> Result<FluxMeasure> {
    let nb = p.nb();
    let ub = u.trace(&p.mesh);
    guard(ub)?;
    let density: Vec<f64> = ub.iter().map(|v| lambda * v.sinh()).collect();
    let abs: Vec<f64> = density.iter().map(|v| v.abs()).collect();
    let mut arclength = vec![0.0; nb];
    for k in 1..nb {
        arclength[k] = arclength[k - 1] + p.mesh.boundary_edge(k - 1);
    }
    let threshold = opts.median_factor * median(abs.clone());
    let prev = |k: usize| (k + nb - 1) % nb;
    let next = |k: usize| (k + 1) % nb;
    let mut peaks: Vec<Peak> = vec![];
    let mut claimed = vec![false; nb];
    let mut candidates: Vec<usize> = (0..nb).filter(|&k| abs[k] > threshold && abs[k] > abs[prev(k)] && abs[k] >= abs[next(k)]).collect();
    candidates.sort_by(|&a, &b| abs[b].total_cmp(&abs[a]).then(a.cmp(&b)));
    for k in candidates {
        if claimed[k] {
            continue;
        }
        let sign = if density[k] > 0.0 { 1 } else { -1 };
        let cut = opts.support_fraction * abs[k];
        let inside = |j: usize| density[j] * sign as f64 >= cut;
        let mut nodes = vec![k];
        let mut j = prev(k);
        while inside(j) && j != k && nodes.len() < nb {
            nodes.push(j);
            j = prev(j);
        }
        let mut j = next(k);
        while inside(j) && !nodes.contains(&j) && nodes.len() < nb {
            nodes.push(j);
            j = next(j);
        }
        nodes.sort_unstable();
        for &j in &nodes {
            claimed[j] = true;
        }
        let mass_unweighted: f64 = nodes.iter().map(|&j| density[j] * p.mass.unweighted[j]).sum();
        let mass_weighted: f64 = nodes.iter().map(|&j| density[j] * p.mass.weighted[j]).sum();
        peaks.push(Peak {
            node: k,
            location: p.mesh.nodes[k],
            t: p.mesh.boundary_params[k],
            sign,
            density: density[k],
            mass_unweighted,
            mass_weighted,
            support: nodes.len(),
            mu_fit: fit_mu(p, u, lambda, k, sign, opts.fit_radius * lambda),
        });
    }
    peaks.sort_by_key(|q| q.node);
    Ok(FluxMeasure {
        lambda,
        total_unweighted: p.mass.integral(&abs),
        total_weighted: p.mass.weighted_integral(&abs),
        signed_unweighted: p.mass.integral(&density),
        signed_weighted: p.mass.weighted_integral(&density),
        density,
        arclength,
        peaks,
        converged: residual_norm(p, lambda, u) <= CONVERGED_RESIDUAL,
    })
}

/// Predicted concentration data the observations are compared with.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitTargets {
    /// Stable critical points of `a` on the boundary.
    pub critical: Vec<CriticalPoint>,
    /// `(μ₁, μ₂)` from the Green's function for the positive and negative peak.
    pub mu: Option<[f64; 2]>,
}

impl FitTargets {
    fn distance(&self, x: Point) -> Option<f64> {
        self.critical.iter().map(|c| (c.xi[0] - x[0]).hypot(c.xi[1] - x[1])).min_by(f64::total_cmp)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsRecord {
    pub lambda: f64,
    pub energy: f64,
    pub dirichlet: f64,
    pub mean: f64,
    pub mean_split_defect: f64,
    pub flux_total_unweighted: f64,
    pub flux_total_weighted: f64,
    pub flux_signed_weighted: f64,
    pub converged: bool,
    pub peaks: Vec<Peak>,
    pub targets: FitTargets,
}

impl DiagnosticsRecord {
    /// Largest positive and most negative peak by unweighted mass.
    pub fn dominant_pair(&self) -> (Option<&Peak>, Option<&Peak>) {
        let pos = self.peaks.iter().filter(|q| q.sign > 0).max_by(|a, b| a.mass_unweighted.total_cmp(&b.mass_unweighted));
        let neg = self.peaks.iter().filter(|q| q.sign < 0).min_by(|a, b| a.mass_unweighted.total_cmp(&b.mass_unweighted));
        (pos, neg)
    }
}

pub fn diagnose(p: &FemProblem, u: &Field, lambda: f64, targets: &FitTargets, opts: &PeakOptions) -> Result<DiagnosticsRecord> {
    let flux = flux_measure(p, u, lambda, opts)?;
    let split = mean_split(p, u);
    Ok(DiagnosticsRecord {
        lambda,
        energy: energy(p, u, lambda)?,
        dirichlet: dirichlet(p, u),
        mean: split.s,
        mean_split_defect: split.defect,
        flux_total_unweighted: flux.total_unweighted,
        flux_total_weighted: flux.total_weighted,
        flux_signed_weighted: flux.signed_weighted,
        converged: flux.converged,
        peaks: flux.peaks,
        targets: targets.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationRow {
    pub lambda: f64,
    pub energy: f64,
    pub energy_over_log: f64,
    pub flux_total: f64,
    /// Distance of the positive / negative peak to the nearest critical point.
    pub xi_err: [Option<f64>; 2],
    pub mu_fit: [Option<f64>; 2],
    /// `|μ̂ − μ| / μ` against the Green's function prediction.
    pub mu_gap: [Option<f64>; 2],
    pub peaks: usize,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationReport {
    pub rows: Vec<ConcentrationRow>,
    pub records: Vec<DiagnosticsRecord>,
    /// Density of the last branch point against arclength.
    pub final_density: Vec<(f64, f64)>,
}

pub const SUMMARY_HEADER: [&str; 8] = ["lambda", "energy", "energy_over_log", "flux_total", "xi1_err", "xi2_err", "mu1_fit", "mu2_fit"];

fn opt(x: Option<f64>) -> String {
    fmt17(x.unwrap_or(f64::NAN))
}

pub fn concentration_report(p: &FemProblem, branch: &Branch, targets: &FitTargets, opts: &PeakOptions) -> Result<ConcentrationReport> {
    if branch.points.is_empty() {
        return Err(Error::InvalidInput("empty branch".into()));
    }
    let records: Vec<DiagnosticsRecord> =
        branch.points.par_iter().map(|q| diagnose(p, &q.u, q.lambda, targets, opts)).collect::<Result<_>>()?;
    let rows = records
        .iter()
        .map(|r| {
            let (pos, neg) = r.dominant_pair();
            let note =
                if pos.is_none() || neg.is_none() { Some(format!("{} peak(s), two-sided fit skipped", r.peaks.len())) } else { None };
            let pair = [pos, neg];
            let xi_err = pair.map(|q| q.and_then(|q| targets.distance(q.location)));
            let mu_fit = pair.map(|q| q.and_then(|q| q.mu_fit));
            let mut mu_gap = [None, None];
            if let Some(m) = targets.mu {
                for j in 0..2 {
                    mu_gap[j] = mu_fit[j].map(|f| (f - m[j]).abs() / m[j]);
                }
            }
            ConcentrationRow {
                lambda: r.lambda,
                energy: r.energy,
                energy_over_log: r.energy / (1.0 / r.lambda).ln(),
                flux_total: r.flux_total_unweighted,
                xi_err,
                mu_fit,
                mu_gap,
                peaks: r.peaks.len(),
                note,
            }
        })
        .collect();
    let last = branch.points.last().unwrap();
    let flux = flux_measure(p, &last.u, last.lambda, opts)?;
    let final_density = flux.arclength.iter().copied().zip(flux.density.iter().copied()).collect();
    Ok(ConcentrationReport { rows, records, final_density })
}

impl ConcentrationReport {
    pub fn summary(&self) -> Table {
        let mut t = Table::new(&SUMMARY_HEADER);
        for r in &self.rows {
            t.push(vec![
                fmt17(r.lambda),
                fmt17(r.energy),
                fmt17(r.energy_over_log),
                fmt17(r.flux_total),
                opt(r.xi_err[0]),
                opt(r.xi_err[1]),
                opt(r.mu_fit[0]),
                opt(r.mu_fit[1]),
            ]);
        }
        t
    }

    pub fn energy_chart(&self) -> String {
        let pts = self.rows.iter().map(|r| ((1.0 / r.lambda).ln(), r.energy)).collect();
        line_chart("Energy along the branch", "log(1/λ)", "E_λ", &[Series { name: "E_λ".into(), points: pts }])
    }

    pub fn density_chart(&self) -> String {
        let lambda = self.rows.last().map(|r| r.lambda).unwrap_or(f64::NAN);
        line_chart(
            &format!("Boundary flux density at λ = {lambda:e}"),
            "arclength",
            "λ sinh u",
            &[Series { name: "λ sinh u".into(), points: self.final_density.clone() }],
        )
    }

    /// Writes `report.json`, `summary.csv`, `energy.svg` and `flux_density.svg`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        write_json(&dir.join("report.json"), self)?;
        self.summary().write(&dir.join("summary.csv"))?;
        write_atomic(&dir.join("energy.svg"), self.energy_chart().as_bytes())?;
        write_atomic(&dir.join("flux_density.svg"), self.density_chart().as_bytes())
    }
}
