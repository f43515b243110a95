use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::asymptotics::{ansatz_residual, build_ansatz, AnsatzConfig, ResidualReport, WeightedNorms};
use crate::axisym::{fd_residual, lift_to_3d, FdReport, Grid3, Reconstruction, TorusDomain};
use crate::config::{AssertSpec, ExperimentConfig, SeedSpec, SolveSpec};
use crate::diagnostics::{concentration_report, ConcentrationReport, FitTargets, PeakOptions, CONVERGED_RESIDUAL};
use crate::error::{Error, Result};
use crate::fem::FemProblem;
use crate::geometry::{boundary_critical_points, build_mesh, BoundaryCurve, CriticalKind, CriticalPoint, MeshOptions, Point, WeightField};
use crate::greens::{mu_parameters, robin_diagonal, GreenTable};
use crate::io::{sha256_hex, write_atomic, write_json};
use crate::solver::{continuation, lambda_schedule, Branch, ContinuationOptions, Seed};
use crate::spectrum::{cluster_gap, steklov_spectrum, SteklovSpectrum};

/// Pipeline stages in dependency order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Step {
    Mesh,
    Spectrum,
    Green,
    Ansatz,
    Solve,
    Continue,
    Diagnose,
    Axisym,
    Report,
}

impl Step {
    pub const ALL: [Step; 9] =
        [Step::Mesh, Step::Spectrum, Step::Green, Step::Ansatz, Step::Solve, Step::Continue, Step::Diagnose, Step::Axisym, Step::Report];

    pub fn name(self) -> &'static str {
        match self {
            Step::Mesh => "mesh",
            Step::Spectrum => "spectrum",
            Step::Green => "green",
            Step::Ansatz => "ansatz",
            Step::Solve => "solve",
            Step::Continue => "continue",
            Step::Diagnose => "diagnose",
            Step::Axisym => "axisym",
            Step::Report => "report",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub check: String,
    pub passed: bool,
    pub value: Option<f64>,
    pub bound: Option<f64>,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepStatus {
    pub step: Step,
    /// `ok`, `skipped: …` or `failed: …`.
    pub status: String,
}

/// What a run produced.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub out: PathBuf,
    pub steps: Vec<StepStatus>,
    pub checks: Vec<CheckResult>,
    /// First step error; downstream steps were not run.
    pub error: Option<String>,
}

impl RunOutcome {
    pub fn success(&self) -> bool {
        self.error.is_none() && self.checks.iter().all(|c| c.passed)
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    name: &'a str,
    version: &'a str,
    config_sha256: String,
    config: &'a ExperimentConfig,
    /// Hashes of files the config refers to.
    inputs: BTreeMap<String, String>,
    tolerances: Tolerances,
    steps: &'a [StepStatus],
    files: BTreeMap<String, String>,
}

#[derive(Serialize)]
struct Tolerances {
    continuation: ContinuationOptions,
    converged_residual: f64,
    cluster_gap: f64,
    peaks: PeakOptions,
}

/// State shared by the steps of one run.
struct Run<'a> {
    cfg: &'a ExperimentConfig,
    out: &'a Path,
    curve: BoundaryCurve,
    a: WeightField,
    xi: Option<[Point; 2]>,
    problem: Option<FemProblem>,
    spectrum: Option<SteklovSpectrum>,
    mu: Option<[f64; 2]>,
    solved: Option<Branch>,
    branch: Option<Branch>,
    report: Option<ConcentrationReport>,
    fd: Option<(FdReport, f64)>,
}

/// Runs every step up to and including `target`, writes `checks.json` and `manifest.json`.
///
/// A failing step is recorded and aborts the steps after it; asserts are then evaluated on
/// whatever was computed.
pub fn run(cfg: &ExperimentConfig, out: &Path, target: Step) -> Result<RunOutcome> {
    cfg.validate()?;
    std::fs::create_dir_all(out)?;
    let mut r = Run {
        cfg,
        out,
        curve: cfg.curve()?,
        a: cfg.weight()?,
        xi: None,
        problem: None,
        spectrum: None,
        mu: None,
        solved: None,
        branch: None,
        report: None,
        fd: None,
    };
    r.xi = r.concentration_points();
    let mut steps = vec![];
    let mut error = None;
    for step in Step::ALL.into_iter().filter(|s| *s <= target) {
        if error.is_some() {
            steps.push(StepStatus { step, status: "skipped: upstream failure".into() });
            continue;
        }
        match r.step(step) {
            Ok(None) => steps.push(StepStatus { step, status: "ok".into() }),
            Ok(Some(why)) => steps.push(StepStatus { step, status: format!("skipped: {why}") }),
            Err(e) => {
                steps.push(StepStatus { step, status: format!("failed: {e}") });
                error = Some(format!("{}: {e}", step.name()));
            }
        }
    }
    let checks: Vec<CheckResult> = cfg.asserts.iter().map(|a| r.check(a)).collect();
    write_json(&out.join("checks.json"), &checks)?;
    write_manifest(cfg, out, &steps)?;
    Ok(RunOutcome { out: out.to_path_buf(), steps, checks, error })
}

fn write_manifest(cfg: &ExperimentConfig, out: &Path, steps: &[StepStatus]) -> Result<()> {
    let mut inputs = BTreeMap::new();
    if let crate::config::DomainSpec::Spline { file } = &cfg.domain {
        inputs.insert(file.display().to_string(), sha256_hex(&std::fs::read(file)?));
    }
    if let Some(s) = &cfg.solve {
        for d in &s.deflate {
            let f = d.join("branch.json");
            inputs.insert(f.display().to_string(), sha256_hex(&std::fs::read(&f)?));
        }
    }
    let mut files = BTreeMap::new();
    collect_hashes(out, out, &mut files)?;
    files.remove("manifest.json");
    let solve = cfg.solve.clone().unwrap_or_default();
    let manifest = Manifest {
        name: &cfg.name,
        version: env!("CARGO_PKG_VERSION"),
        config_sha256: sha256_hex(serde_json::to_string(cfg)?.as_bytes()),
        config: cfg,
        inputs,
        tolerances: Tolerances {
            continuation: continuation_options(&solve),
            converged_residual: CONVERGED_RESIDUAL,
            cluster_gap: cluster_gap(cfg.mesh.h),
            peaks: PeakOptions::default(),
        },
        steps,
        files,
    };
    write_json(&out.join("manifest.json"), &manifest)
}

fn collect_hashes(root: &Path, dir: &Path, files: &mut BTreeMap<String, String>) -> Result<()> {
    let mut entries: Vec<_> = std::fs::read_dir(dir)?.collect::<std::io::Result<_>>()?;
    entries.sort_by_key(|e| e.file_name());
    for e in entries {
        let path = e.path();
        if path.is_dir() {
            collect_hashes(root, &path, files)?;
        } else if !path.to_string_lossy().ends_with(".partial") {
            let rel = path.strip_prefix(root).unwrap_or(&path).to_string_lossy().replace('\\', "/");
            files.insert(rel, sha256_hex(&std::fs::read(&path)?));
        }
    }
    Ok(())
}

fn continuation_options(s: &SolveSpec) -> ContinuationOptions {
    ContinuationOptions { newton: s.newton, max_bisections: s.max_bisections, ..ContinuationOptions::default() }
}

impl Run<'_> {
    fn solve_spec(&self) -> Option<&SolveSpec> {
        self.cfg.solve.as_ref()
    }

    fn seed_spec(&self) -> Option<SeedSpec> {
        self.solve_spec().and_then(|s| SeedSpec::parse(&s.seed).ok())
    }

    /// Explicit points, else the boundary maximum and minimum of `a`.
    fn concentration_points(&self) -> Option<[Point; 2]> {
        if let Some(xi) = self.solve_spec().and_then(SolveSpec::explicit_xi) {
            return Some(xi);
        }
        let scan = boundary_critical_points(&self.a, &self.curve, 1e-10);
        if scan.has_degenerate_plateau() {
            return None;
        }
        let at = |p: &CriticalPoint| self.a.value(p.xi);
        let max = scan.points.iter().filter(|p| p.kind == CriticalKind::Max).max_by(|x, y| at(x).total_cmp(&at(y)))?;
        let min = scan.points.iter().filter(|p| p.kind == CriticalKind::Min).min_by(|x, y| at(x).total_cmp(&at(y)))?;
        Some([max.xi, min.xi])
    }

    fn problem(&self) -> Result<&FemProblem> {
        self.problem.as_ref().ok_or_else(|| Error::InvalidInput("mesh step has not run".into()))
    }

    fn mesh_options(&self) -> MeshOptions {
        let m = &self.cfg.mesh;
        let mut o = MeshOptions::uniform(m.h);
        o.smoothing_passes = m.smoothing_passes;
        o.mirror = m.mirror;
        if let Some(xi) = self.xi {
            for p in xi {
                o = o.with_pinned(p);
                if let Some(l) = m.local_h {
                    o = o.with_grading(p, l);
                }
            }
        }
        o
    }

    /// `Ok(Some(reason))` when the step does not apply to this config.
    fn step(&mut self, step: Step) -> Result<Option<String>> {
        let dir = self.out.join(step.name());
        match step {
            Step::Mesh => {
                let opts = self.mesh_options();
                let mesh = build_mesh(&self.curve, &opts)?;
                std::fs::create_dir_all(&dir)?;
                mesh.write(&dir.join("mesh.txt"))?;
                write_json(
                    &dir.join("summary.json"),
                    &serde_json::json!({
                        "options": opts,
                        "nodes": mesh.n_nodes(),
                        "boundary_nodes": mesh.n_boundary,
                        "triangles": mesh.triangles.len(),
                        "max_edge": mesh.max_edge(),
                        "concentration_points": self.xi,
                    }),
                )?;
                self.problem = Some(FemProblem::new(mesh, self.a.clone())?);
            }
            Step::Spectrum => {
                if !self.cfg.spectrum.enabled {
                    return Ok(Some("disabled".into()));
                }
                let p = self.problem()?;
                let s = steklov_spectrum(p, self.cfg.spectrum.count)?;
                s.to_table().write(&dir.join("spectrum.csv"))?;
                let gap = cluster_gap(p.mesh.h);
                write_json(
                    &dir.join("clusters.json"),
                    &serde_json::json!({ "relative_gap": gap, "clusters": s.clusters(gap), "gram_defect": s.gram_defect() }),
                )?;
                self.spectrum = Some(s);
            }
            Step::Green => {
                let Some(solve) = self.solve_spec() else { return Ok(Some("no solve section".into())) };
                let Some([x1, x2]) = self.xi else { return Ok(Some("no concentration points".into())) };
                let norm = solve.normalization;
                let p = self.problem()?;
                let mut table = GreenTable::build(p, &[x1, x2], norm)?;
                let ladder = &self.cfg.mesh.ladder;
                if !ladder.is_empty() {
                    let base = self.mesh_options();
                    let (r1, r2) = rayon::join(
                        || robin_diagonal(&self.curve, &self.a, x1, ladder, &base, norm),
                        || robin_diagonal(&self.curve, &self.a, x2, ladder, &base, norm),
                    );
                    table.robin = vec![Some(r1?), Some(r2?)];
                    table.mesh_ladder = ladder.clone();
                }
                table.save(&dir)?;
                let (m1, m2) = mu_parameters(p, &table, x1, x2)?;
                write_json(&dir.join("mu.json"), &serde_json::json!({ "xi": [x1, x2], "mu": [m1, m2] }))?;
                self.mu = Some(solve.mu.unwrap_or([m1, m2]));
            }
            Step::Ansatz => {
                let Some(solve) = self.solve_spec() else { return Ok(Some("no solve section".into())) };
                if !matches!(self.seed_spec(), Some(SeedSpec::Ansatz { .. })) {
                    return Ok(Some("seed is not an ansatz".into()));
                }
                let (xi, mu) = self.ansatz_data()?;
                let p = self.problem()?;
                let mut cfg = AnsatzConfig::new(xi, mu, 0.5 * solve.lambda_start);
                cfg.normalization = solve.normalization;
                let ans = build_ansatz(p, &cfg)?;
                let res = ansatz_residual(p, &ans, &WeightedNorms::for_config(self.cfg.norms.sigma, &cfg)?)?;
                ans.u.write_csv(&dir.join("u.csv"))?;
                write_json(&dir.join("config.json"), &cfg)?;
                write_json(&dir.join("residual.json"), &ResidualReport::from(&res))?;
            }
            Step::Solve | Step::Continue => {
                let Some(solve) = self.solve_spec() else { return Ok(Some("no solve section".into())) };
                let schedule = if step == Step::Solve {
                    vec![solve.lambda_start]
                } else {
                    lambda_schedule(solve.lambda_start, solve.lambda_end, solve.lambda_factor)?
                };
                if step == Step::Continue && schedule.len() == 1 {
                    return Ok(Some("single-point schedule".into()));
                }
                let seed = self.seed()?;
                let deflate: Vec<Branch> = solve.deflate.iter().map(|d| Branch::load(d)).collect::<Result<_>>()?;
                let b = continuation(self.problem()?, &seed, &schedule, &continuation_options(solve), &deflate)?;
                b.save(&dir)?;
                if step == Step::Solve {
                    self.solved = Some(b);
                } else {
                    self.branch = Some(b);
                }
            }
            Step::Diagnose => {
                let Some(b) = self.branch.as_ref().or(self.solved.as_ref()) else { return Ok(Some("nothing solved".into())) };
                let p = self.problem()?;
                let critical = self.xi.map(|xi| self.targets(xi)).unwrap_or_default();
                let targets = FitTargets { critical, mu: self.mu.or(self.solve_spec().and_then(|s| s.mu)) };
                let rep = concentration_report(p, b, &targets, &PeakOptions::default())?;
                rep.save(&dir)?;
                self.report = Some(rep);
            }
            Step::Axisym => {
                let ax = &self.cfg.axisym;
                if !ax.enabled {
                    return Ok(Some("disabled".into()));
                }
                let Some(b) = self.branch.as_ref().or(self.solved.as_ref()) else { return Ok(Some("nothing solved".into())) };
                TorusDomain::new(self.curve.clone())?;
                let p = self.problem()?;
                let u = &b.points.last().ok_or_else(|| Error::InvalidInput("empty branch".into()))?.u;
                let grid = Grid3::cube(ax.center, ax.half_width, ax.points)?;
                let rec = Reconstruction::new(&p.mesh, u, ax.radius_factor * p.mesh.h)?;
                let lift = lift_to_3d(&rec, &grid, &self.lift_circles())?;
                let fd = fd_residual(&lift, ax.exclude);
                lift.save(&dir)?;
                write_json(&dir.join("fd.json"), &fd)?;
                self.fd = Some((fd, p.mesh.h + grid.step * grid.step));
            }
            Step::Report => self.write_report(&dir)?,
        }
        Ok(None)
    }

    fn ansatz_data(&self) -> Result<([Point; 2], [f64; 2])> {
        let xi = self.xi.ok_or_else(|| Error::Config("ansatz seed needs concentration points (solve.xi)".into()))?;
        let mu = self
            .mu
            .or(self.solve_spec().and_then(|s| s.mu))
            .ok_or_else(|| Error::Config("ansatz seed needs μ: set solve.mu or let the green step compute it".into()))?;
        Ok((xi, mu))
    }

    fn seed(&self) -> Result<Seed> {
        let solve = self.solve_spec().ok_or_else(|| Error::Config("no solve section".into()))?;
        Ok(match SeedSpec::parse(&solve.seed)? {
            SeedSpec::Trivial => Seed::Trivial,
            SeedSpec::Eigen { index, amplitude } => Seed::Eigen { index, amplitude },
            SeedSpec::Ansatz { .. } => {
                let (xi, mu) = self.ansatz_data()?;
                Seed::Ansatz { xi, mu, normalization: solve.normalization }
            }
        })
    }

    /// The concentration points as fit targets; the first is where `u` is expected positive.
    fn targets(&self, xi: [Point; 2]) -> Vec<CriticalPoint> {
        let scan = boundary_critical_points(&self.a, &self.curve, 1e-10);
        xi.iter()
            .zip([CriticalKind::Max, CriticalKind::Min])
            .map(|(&p, kind)| {
                let near = scan.nearest(p).filter(|c| (c.xi[0] - p[0]).hypot(c.xi[1] - p[1]) <= 1e-9 * self.curve.length());
                near.cloned().unwrap_or_else(|| CriticalPoint {
                    xi: p,
                    t: self.curve.closest_param(p).0,
                    kind,
                    degree_sign: if kind == CriticalKind::Max { -1 } else { 1 },
                })
            })
            .collect()
    }

    /// Detected peaks of the last diagnosed point, else the configured concentration points.
    fn lift_circles(&self) -> Vec<(Point, i32)> {
        if let Some(rec) = self.report.as_ref().and_then(|r| r.records.last()) {
            if let (Some(pos), Some(neg)) = rec.dominant_pair() {
                return vec![(pos.location, 1), (neg.location, -1)];
            }
        }
        self.xi.map(|[a, b]| vec![(a, 1), (b, -1)]).unwrap_or_default()
    }

    fn write_report(&self, dir: &Path) -> Result<()> {
        let mut s = String::new();
        let _ = writeln!(s, "# {}\n", self.cfg.name);
        if let Some(p) = &self.problem {
            let _ = writeln!(s, "mesh: {} nodes, {} on the boundary, h = {}", p.mesh.n_nodes(), p.mesh.n_boundary, p.mesh.h);
        }
        if let Some(sp) = &self.spectrum {
            let ev: Vec<String> = sp.eigenvalues.iter().map(|v| format!("{v:.6}")).collect();
            let _ = writeln!(s, "eigenvalues: {}", ev.join(", "));
        }
        if let Some(mu) = self.mu {
            let _ = writeln!(s, "mu: {:.6}, {:.6}", mu[0], mu[1]);
        }
        if let Some(b) = self.branch.as_ref().or(self.solved.as_ref()) {
            let _ = writeln!(s, "branch: {} points, terminated: {}", b.points.len(), b.terminated.as_deref().unwrap_or("no"));
        }
        if let Some(rep) = &self.report {
            let _ = writeln!(s, "\n| lambda | E/log(1/lambda) | flux | peaks |\n|---|---|---|---|");
            for r in &rep.rows {
                let _ = writeln!(s, "| {:.4e} | {:.4} | {:.4} | {} |", r.lambda, r.energy_over_log, r.flux_total, r.peaks);
            }
        }
        if let Some((fd, scale)) = &self.fd {
            let _ = writeln!(s, "\nlift residual: {:.3e} (h + g^2 = {scale:.3e}) over {} points", fd.max_residual, fd.checked);
        }
        write_atomic(&dir.join("report.md"), s.as_bytes())
    }

    fn check(&self, a: &AssertSpec) -> CheckResult {
        let res = |passed: bool, value: Option<f64>, bound: Option<f64>, detail: String| CheckResult {
            check: a.check.clone(),
            passed,
            value,
            bound,
            detail,
        };
        let missing = |what: &str| res(false, None, None, format!("{what} was not computed"));
        let lmax = a.lambda_max.unwrap_or(1e-2);
        let records = || self.report.iter().flat_map(|r| r.rows.iter().zip(&r.records)).filter(move |(row, _)| row.lambda <= lmax);
        let two_pi = 2.0 * std::f64::consts::PI;
        match a.check.as_str() {
            "spectrum_lambda1" => {
                let Some(sp) = &self.spectrum else { return missing("spectrum") };
                let Some(target) = a.target else { return res(false, None, None, "needs a target".into()) };
                let tol = a.tolerance.unwrap_or(0.02);
                let v = sp.eigenvalues.get(1).copied().unwrap_or(f64::NAN);
                let err = (v - target).abs() / target.abs();
                res(err <= tol, Some(v), Some(tol), format!("relative error {err:.3e}"))
            }
            "branch_complete" => {
                let Some(b) = self.branch.as_ref().or(self.solved.as_ref()) else { return missing("branch") };
                let worst = b.points.iter().map(|q| q.residual).fold(0.0, f64::max);
                let ok = b.terminated.is_none() && worst <= CONVERGED_RESIDUAL;
                res(ok, Some(worst), Some(CONVERGED_RESIDUAL), b.terminated.clone().unwrap_or_else(|| format!("{} points", b.points.len())))
            }
            "two_peaks" => {
                if self.report.is_none() {
                    return missing("diagnostics");
                }
                let bad: Vec<f64> = records()
                    .filter(|(_, rec)| {
                        let (p, n) = rec.dominant_pair();
                        rec.peaks.len() != 2 || p.is_none() || n.is_none()
                    })
                    .map(|(row, _)| row.lambda)
                    .collect();
                let n = records().count();
                res(n > 0 && bad.is_empty(), Some(bad.len() as f64), Some(0.0), format!("{n} points checked, failing λ: {bad:?}"))
            }
            "flux_mass" => {
                if self.report.is_none() {
                    return missing("diagnostics");
                }
                let tol = a.tolerance.unwrap_or(0.1);
                let mut worst = 0.0f64;
                let mut n = 0;
                for (_, rec) in records() {
                    n += 1;
                    let (p, q) = rec.dominant_pair();
                    let e = match (p, q) {
                        (Some(p), Some(q)) => ((p.mass_unweighted - two_pi).abs()).max((q.mass_unweighted + two_pi).abs()) / two_pi,
                        _ => f64::INFINITY,
                    };
                    worst = worst.max(e);
                }
                res(n > 0 && worst <= tol, Some(worst), Some(tol), format!("{n} points, worst relative mass error"))
            }
            "peak_location" => {
                if self.report.is_none() {
                    return missing("diagnostics");
                }
                let tol = a.tolerance.unwrap_or(self.cfg.mesh.local_h.unwrap_or(self.cfg.mesh.h));
                let mut worst = 0.0f64;
                let mut n = 0;
                for (row, _) in records() {
                    n += 1;
                    for e in row.xi_err {
                        worst = worst.max(e.unwrap_or(f64::INFINITY));
                    }
                }
                res(n > 0 && worst <= tol, Some(worst), Some(tol), format!("{n} points, largest peak distance"))
            }
            "mean_split" => {
                let Some(rep) = &self.report else { return missing("diagnostics") };
                let tol = a.tolerance.unwrap_or(1e-8);
                let worst = rep.records.iter().filter(|r| r.converged).map(|r| r.mean_split_defect).fold(0.0, f64::max);
                res(worst <= tol, Some(worst), Some(tol), "largest defect".into())
            }
            "energy_over_log" => {
                let Some(rep) = &self.report else { return missing("diagnostics") };
                let (lo, hi) = (a.min.unwrap_or(0.0), a.max.unwrap_or(f64::INFINITY));
                let v: Vec<f64> = rep.rows.iter().map(|r| r.energy_over_log).collect();
                let ok = !v.is_empty() && v.iter().all(|x| *x > lo && *x < hi);
                let (mn, mx) = (v.iter().copied().fold(f64::INFINITY, f64::min), v.iter().copied().fold(f64::NEG_INFINITY, f64::max));
                res(ok, Some(mx), Some(hi), format!("range [{mn:.4}, {mx:.4}] against ({lo}, {hi})"))
            }
            "fd_residual" => {
                let Some((fd, scale)) = &self.fd else { return missing("axisymmetric lift") };
                let bound = a.tolerance.unwrap_or(5.0) * scale;
                res(fd.checked > 0 && fd.max_residual <= bound, Some(fd.max_residual), Some(bound), format!("{} grid points", fd.checked))
            }
            other => res(false, None, None, format!("unknown check `{other}`")),
        }
    }
}
