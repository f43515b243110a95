use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BoundaryCurve, PeriodicSpline, Point, WeightField};
use crate::greens::Normalization;
use crate::solver::NewtonOptions;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DomainSpec {
    Disk,
    Circle {
        center: Point,
        radius: f64,
    },
    Ellipse {
        center: Point,
        semi_x: f64,
        semi_y: f64,
    },
    Star {
        center: Point,
        radius: f64,
        amplitude: f64,
        lobes: u32,
    },
    Rectangle {
        x0: f64,
        x1: f64,
        y0: f64,
        y1: f64,
    },
    /// Control points, one `x y` pair per line.
    Spline {
        file: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightSpec {
    /// `"one"`, `"x1"`, or an arithmetic expression in `x1`, `x2`.
    pub expr: String,
}

impl Default for WeightSpec {
    fn default() -> Self {
        WeightSpec { expr: "one".into() }
    }
}

fn default_smoothing() -> usize {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshSpec {
    pub h: f64,
    /// Decreasing mesh sizes for the Robin diagonal extrapolation; empty uses the main mesh only.
    #[serde(default)]
    pub ladder: Vec<f64>,
    /// Local size at the concentration points.
    #[serde(default)]
    pub local_h: Option<f64>,
    #[serde(default)]
    pub mirror: bool,
    #[serde(default = "default_smoothing")]
    pub smoothing_passes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectrumSpec {
    pub enabled: bool,
    pub count: usize,
}

impl Default for SpectrumSpec {
    fn default() -> Self {
        SpectrumSpec { enabled: true, count: 8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveSpec {
    pub lambda_start: f64,
    pub lambda_end: f64,
    pub lambda_factor: f64,
    /// `trivial`, `eigen:n:amplitude`, `ansatz` or `ansatz:x,y:x,y`.
    pub seed: String,
    /// Concentration points; defaults to the maximum and minimum of `a` on the boundary.
    pub xi: Option<[Point; 2]>,
    /// Concentration scales; defaults to the Green's function prediction.
    pub mu: Option<[f64; 2]>,
    pub normalization: Normalization,
    /// Branch directories whose solutions are deflated.
    pub deflate: Vec<PathBuf>,
    pub newton: NewtonOptions,
    pub max_bisections: usize,
}

impl Default for SolveSpec {
    fn default() -> Self {
        SolveSpec {
            lambda_start: 0.1,
            lambda_end: 0.001,
            lambda_factor: 0.5,
            seed: "ansatz".into(),
            xi: None,
            mu: None,
            normalization: Normalization::Unweighted,
            deflate: vec![],
            newton: NewtonOptions::default(),
            max_bisections: 6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NormSpec {
    pub sigma: f64,
}

impl Default for NormSpec {
    fn default() -> Self {
        NormSpec { sigma: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AxisymSpec {
    pub enabled: bool,
    pub center: [f64; 3],
    pub half_width: f64,
    pub points: usize,
    /// Reconstruction radius in units of the mesh size.
    pub radius_factor: f64,
    /// Grid points closer than this to a concentration circle are skipped in the residual.
    pub exclude: f64,
}

impl Default for AxisymSpec {
    fn default() -> Self {
        AxisymSpec { enabled: false, center: [2.0, 0.0, 0.0], half_width: 0.5, points: 21, radius_factor: 2.5, exclude: 0.2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssertSpec {
    /// One of `spectrum_lambda1`, `branch_complete`, `two_peaks`, `flux_mass`, `peak_location`,
    /// `mean_split`, `energy_over_log`, `fd_residual`.
    pub check: String,
    #[serde(default)]
    pub tolerance: Option<f64>,
    #[serde(default)]
    pub target: Option<f64>,
    #[serde(default)]
    pub min: Option<f64>,
    #[serde(default)]
    pub max: Option<f64>,
    /// Peak checks only look at branch points with `λ ≤ lambda_max`.
    #[serde(default)]
    pub lambda_max: Option<f64>,
}

pub const CHECKS: [&str; 8] =
    ["spectrum_lambda1", "branch_complete", "two_peaks", "flux_mass", "peak_location", "mean_split", "energy_over_log", "fd_residual"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub domain: DomainSpec,
    #[serde(default)]
    pub weight: WeightSpec,
    pub mesh: MeshSpec,
    #[serde(default)]
    pub spectrum: SpectrumSpec,
    /// Absent for spectrum-only runs.
    #[serde(default)]
    pub solve: Option<SolveSpec>,
    #[serde(default)]
    pub norms: NormSpec,
    #[serde(default)]
    pub axisym: AxisymSpec,
    #[serde(default, rename = "assert")]
    pub asserts: Vec<AssertSpec>,
}

fn default_name() -> String {
    "experiment".into()
}

/// Parsed `--seed-spec` / `solve.seed`.
#[derive(Debug, Clone, PartialEq)]
pub enum SeedSpec {
    Trivial,
    Eigen { index: usize, amplitude: f64 },
    Ansatz { xi: Option<[Point; 2]> },
}

fn parse_point(s: &str) -> Option<Point> {
    let (a, b) = s.split_once(',')?;
    Some([a.trim().parse().ok()?, b.trim().parse().ok()?])
}

impl SeedSpec {
    pub fn parse(s: &str) -> Result<SeedSpec> {
        let bad = || Error::Config(format!("seed `{s}`: expected trivial, eigen:n:amp, ansatz or ansatz:x,y:x,y"));
        let parts: Vec<&str> = s.trim().split(':').collect();
        match parts.as_slice() {
            ["trivial"] => Ok(SeedSpec::Trivial),
            ["eigen", n, amp] => Ok(SeedSpec::Eigen { index: n.parse().map_err(|_| bad())?, amplitude: amp.parse().map_err(|_| bad())? }),
            ["ansatz"] => Ok(SeedSpec::Ansatz { xi: None }),
            ["ansatz", a, b] => Ok(SeedSpec::Ansatz { xi: Some([parse_point(a).ok_or_else(bad)?, parse_point(b).ok_or_else(bad)?]) }),
            _ => Err(bad()),
        }
    }
}

impl SolveSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_start > 0.0 && self.lambda_end > 0.0) {
            return Err(Error::Config("solve: λ values must be positive".into()));
        }
        if self.lambda_end > self.lambda_start {
            return Err(Error::Config(format!(
                "solve: λ schedule must decrease (lambda_start = {}, lambda_end = {})",
                self.lambda_start, self.lambda_end
            )));
        }
        if !(self.lambda_factor > 0.0 && self.lambda_factor < 1.0) {
            return Err(Error::Config(format!("solve.lambda_factor = {} must lie in (0, 1)", self.lambda_factor)));
        }
        if let (Some(xi), SeedSpec::Ansatz { xi: Some(seed_xi) }) = (self.xi, SeedSpec::parse(&self.seed)?) {
            if xi != seed_xi {
                return Err(Error::Config("solve.xi disagrees with the points in solve.seed".into()));
            }
        }
        if self.mu.is_some_and(|m| m.iter().any(|v| !(*v > 0.0))) {
            return Err(Error::Config("solve.mu must be positive".into()));
        }
        self.newton.validate().map_err(|e| Error::Config(format!("solve.newton: {e}")))?;
        for d in &self.deflate {
            if !d.join("branch.json").exists() {
                return Err(Error::Config(format!("solve.deflate: no branch at {}", d.display())));
            }
        }
        Ok(())
    }

    /// Concentration points from `xi` or from an `ansatz:x,y:x,y` seed.
    pub fn explicit_xi(&self) -> Option<[Point; 2]> {
        match SeedSpec::parse(&self.seed) {
            Ok(SeedSpec::Ansatz { xi: Some(xi) }) => Some(xi),
            _ => self.xi,
        }
    }
}

impl ExperimentConfig {
    /// Parses TOML; relative paths are resolved against `base`.
    pub fn from_toml(text: &str, base: &Path) -> Result<ExperimentConfig> {
        let mut cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.resolve(base);
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a TOML config, or the `config` entry of a run manifest (`.json`).
    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        if path.extension().is_some_and(|e| e == "json") {
            let v: serde_json::Value = serde_json::from_str(&text)?;
            let cfg: ExperimentConfig = serde_json::from_value(
                v.get("config").cloned().ok_or_else(|| Error::Config(format!("{}: no `config` entry", path.display())))?,
            )
            .map_err(|e| Error::Config(e.to_string()))?;
            cfg.validate()?;
            return Ok(cfg);
        }
        ExperimentConfig::from_toml(&text, base)
    }

    fn resolve(&mut self, base: &Path) {
        if let DomainSpec::Spline { file } = &mut self.domain {
            if file.is_relative() {
                *file = base.join(&*file);
            }
        }
        if let Some(s) = &mut self.solve {
            for d in &mut s.deflate {
                if d.is_relative() {
                    *d = base.join(&*d);
                }
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(s) = &self.solve {
            s.validate()?;
        }
        if !(self.mesh.h > 0.0) {
            return Err(Error::Config("mesh.h must be positive".into()));
        }
        if self.mesh.ladder.windows(2).any(|w| w[1] >= w[0]) || self.mesh.ladder.iter().any(|&h| !(h > 0.0)) {
            return Err(Error::Config("mesh.ladder must be positive and strictly decreasing".into()));
        }
        if self.mesh.local_h.is_some_and(|l| !(l > 0.0 && l <= self.mesh.h)) {
            return Err(Error::Config("mesh.local_h must lie in (0, mesh.h]".into()));
        }
        if self.spectrum.count == 0 {
            return Err(Error::Config("spectrum.count must be at least 1".into()));
        }
        if !(self.norms.sigma > 0.0 && self.norms.sigma < 1.0) {
            return Err(Error::Config("norms.sigma must lie in (0, 1)".into()));
        }
        if let DomainSpec::Spline { file } = &self.domain {
            if !file.exists() {
                return Err(Error::Config(format!("domain.file {} does not exist", file.display())));
            }
        }
        for a in &self.asserts {
            if !CHECKS.contains(&a.check.as_str()) {
                return Err(Error::Config(format!("assert: unknown check `{}`", a.check)));
            }
        }
        self.curve()?;
        self.weight()?;
        Ok(())
    }

    pub fn curve(&self) -> Result<BoundaryCurve> {
        let c = match &self.domain {
            DomainSpec::Disk => BoundaryCurve::unit_disk(),
            DomainSpec::Circle { center, radius } => BoundaryCurve::circle(*center, *radius),
            DomainSpec::Ellipse { center, semi_x, semi_y } => BoundaryCurve::Ellipse { center: *center, semi_x: *semi_x, semi_y: *semi_y },
            DomainSpec::Star { center, radius, amplitude, lobes } => {
                BoundaryCurve::Star { center: *center, radius: *radius, amplitude: *amplitude, lobes: *lobes }
            }
            DomainSpec::Rectangle { x0, x1, y0, y1 } => BoundaryCurve::rectangle(*x0, *x1, *y0, *y1),
            DomainSpec::Spline { file } => BoundaryCurve::Spline(PeriodicSpline::from_file(file)?),
        };
        c.validate().map_err(|e| Error::Config(format!("domain: {e}")))?;
        Ok(c)
    }

    pub fn weight(&self) -> Result<WeightField> {
        let curve = self.curve()?;
        let a = match self.weight.expr.trim() {
            "one" => WeightField::constant(1.0),
            "x1" => WeightField::x1().with_bounds_on(&curve),
            e => WeightField::parse(e).map_err(|err| Error::Config(format!("weight.expr: {err}")))?.with_bounds_on(&curve),
        };
        a.check_bounds(&curve).map_err(|e| Error::Config(format!("weight: {e}")))?;
        Ok(a)
    }
}
