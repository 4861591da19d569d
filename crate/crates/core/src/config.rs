//! Run configuration. Every field is validated before any computation and
//! unknown keys are rejected.

use std::fs::{self, File};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::CylinderGrid;
use crate::geometry::TargetKind;
use crate::heatflow::{BoundaryTrace, FlowParams};
use crate::neck::WindowPolicy;
use crate::obstruct::{check_sweep_lambdas, SweepSettings};
use crate::planes::{PlaneQuadruple, FITTED_TOL, SYNTHETIC_TOL};
use crate::rational::{FactorSpec, RationalFamily};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FamilyConfig {
    Named(String),
    Custom { factors: Vec<FactorSpec> },
}

impl FamilyConfig {
    pub fn build(&self) -> Result<RationalFamily> {
        match self {
            Self::Named(name) => RationalFamily::named(name),
            Self::Custom { factors } => RationalFamily::from_specs(factors),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(default = "default_n_t_per_unit")]
    pub n_t_per_unit: usize,
    #[serde(default = "default_n_theta")]
    pub n_theta: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            n_t_per_unit: default_n_t_per_unit(),
            n_theta: default_n_theta(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowConfig {
    #[serde(default = "default_min_half_width")]
    pub min_half_width: f64,
    #[serde(default = "default_center_fraction")]
    pub center_fraction: f64,
    #[serde(default = "default_true")]
    pub higher_order_columns: bool,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            min_half_width: default_min_half_width(),
            center_fraction: default_center_fraction(),
            higher_order_columns: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    /// Classification tolerance for synthetic plane quadruples.
    #[serde(default = "default_planes_synthetic")]
    pub planes_synthetic: f64,
    /// Classification tolerance for quadruples taken from a fit.
    #[serde(default = "default_planes_fitted")]
    pub planes_fitted: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            planes_synthetic: SYNTHETIC_TOL,
            planes_fitted: FITTED_TOL,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_out_dir")]
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: default_out_dir() }
    }
}

/// Non-harmonic detector input: `project(u + ε (t − t_ref) B u)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbConfig {
    pub amplitude: f64,
    /// Index into the isometry algebra basis.
    #[serde(default)]
    pub generator: usize,
    /// Defaults to the neck centre.
    #[serde(default)]
    pub t_ref: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Gate {
    pub check: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BoundarySpec {
    Family {
        family: FamilyConfig,
        #[serde(default)]
        lambda: f64,
    },
    Csv {
        csv: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleSpec {
    pub family: FamilyConfig,
    #[serde(default)]
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeatflowConfig {
    pub t_min: f64,
    pub t_max: f64,
    pub n_t: usize,
    pub n_theta: usize,
    pub inner: BoundarySpec,
    pub outer: BoundarySpec,
    /// Exact solution to compare against, when known.
    #[serde(default)]
    pub oracle: Option<OracleSpec>,
    #[serde(default)]
    pub tau: Option<f64>,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default = "default_flow_tol")]
    pub tol: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanesConfig {
    /// Dimensions for the constrained sampler.
    #[serde(default)]
    pub dims: Vec<usize>,
    #[serde(default = "default_plane_count")]
    pub count: usize,
    #[serde(default)]
    pub quadruples: Vec<PlaneQuadruple>,
    /// Also classify `(a, b, c, d)` fitted for every λ.
    #[serde(default)]
    pub from_fit: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub target: Option<TargetKind>,
    #[serde(default)]
    pub family: Option<FamilyConfig>,
    #[serde(default)]
    pub lambdas: Vec<f64>,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub window: WindowConfig,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub perturb: Option<PerturbConfig>,
    #[serde(default)]
    pub gates: Option<Vec<Gate>>,
    #[serde(default)]
    pub heatflow: Option<HeatflowConfig>,
    #[serde(default)]
    pub planes: Option<PlanesConfig>,
    /// Directory that relative CSV paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_n_t_per_unit() -> usize {
    100
}
fn default_n_theta() -> usize {
    256
}
fn default_min_half_width() -> f64 {
    1.0
}
fn default_center_fraction() -> f64 {
    1.0 / 3.0
}
fn default_true() -> bool {
    true
}
fn default_planes_synthetic() -> f64 {
    SYNTHETIC_TOL
}
fn default_planes_fitted() -> f64 {
    FITTED_TOL
}
fn default_out_dir() -> PathBuf {
    PathBuf::from("necklab-out")
}
fn default_max_iters() -> usize {
    200_000
}
fn default_flow_tol() -> f64 {
    1e-7
}
fn default_plane_count() -> usize {
    10_000
}
fn default_delta() -> f64 {
    0.1
}
fn default_alpha() -> f64 {
    0.5
}

fn positive(name: &str, x: f64) -> Result<()> {
    if x.is_finite() && x > 0.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must be positive and finite, got {x}")))
    }
}

/// What a subcommand needs from the config.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Needs {
    Analysis { min_lambdas: usize },
    Heatflow,
    Planes,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Self::parse(text, "config")
    }

    fn parse(text: &str, origin: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("{origin}: {e}")))
    }

    /// Reads and parses a config file; CSV paths inside it are resolved
    /// relative to the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text =
            fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text, &path.display().to_string())?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn policy(&self) -> WindowPolicy {
        WindowPolicy {
            delta: self.delta,
            min_half_width: self.window.min_half_width,
            center_fraction: self.window.center_fraction,
            higher_order_columns: self.window.higher_order_columns,
        }
    }

    pub fn sweep_settings(&self) -> SweepSettings {
        SweepSettings {
            policy: self.policy(),
            dt: 1.0 / self.grid.n_t_per_unit as f64,
            n_theta: self.grid.n_theta,
        }
    }

    pub fn family(&self) -> Result<RationalFamily> {
        let spec = self
            .family
            .as_ref()
            .ok_or_else(|| Error::Config("missing \"family\"".into()))?;
        spec.build().map_err(|e| Error::Config(e.to_string()))
    }

    /// Checks everything a subcommand will use. Errors are `Error::Config`.
    pub fn validate(&self, needs: &[Needs]) -> Result<()> {
        positive("delta", self.delta)?;
        positive("alpha", self.alpha)?;
        positive("tolerances.planes_synthetic", self.tolerances.planes_synthetic)?;
        positive("tolerances.planes_fitted", self.tolerances.planes_fitted)?;
        positive("window.min_half_width", self.window.min_half_width)?;
        if !(self.window.center_fraction > 0.0 && self.window.center_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "window.center_fraction must lie in (0, 1], got {}",
                self.window.center_fraction
            )));
        }
        if self.grid.n_t_per_unit < 10 {
            return Err(Error::Config(format!(
                "grid.n_t_per_unit must be >= 10, got {}",
                self.grid.n_t_per_unit
            )));
        }
        CylinderGrid::new(0.0, 1.0, 2, self.grid.n_theta).map_err(|e| Error::Config(e.to_string()))?;
        if let Some(gates) = &self.gates {
            for g in gates {
                if g.max.is_some() == g.min.is_some() {
                    return Err(Error::Config(format!(
                        "gate {:?} needs exactly one of \"max\" or \"min\"",
                        g.check
                    )));
                }
                if !g.max.or(g.min).unwrap().is_finite() {
                    return Err(Error::Config(format!("gate {:?} has a non-finite bound", g.check)));
                }
            }
        }
        for need in needs {
            match *need {
                Needs::Analysis { min_lambdas } => self.validate_analysis(min_lambdas)?,
                Needs::Heatflow => {
                    self.flow_params()?;
                    self.boundaries()?;
                    self.oracle()?;
                }
                Needs::Planes => self.validate_planes()?,
            }
        }
        Ok(())
    }

    fn validate_analysis(&self, min_lambdas: usize) -> Result<()> {
        let family = self.family()?;
        if let Some(t) = self.target {
            if t != family.target_kind() {
                return Err(Error::Config(format!(
                    "target {t:?} does not match the family's target {:?}",
                    family.target_kind()
                )));
            }
        }
        if self.lambdas.len() < min_lambdas {
            return Err(Error::Config(format!(
                "need at least {min_lambdas} lambda values, got {}",
                self.lambdas.len()
            )));
        }
        check_sweep_lambdas(&self.lambdas, self.delta)?;
        let lo = self.lambdas.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = self.lambdas.iter().cloned().fold(0.0, f64::max);
        family
            .validate_lambda_range(lo, hi)
            .map_err(|e| Error::Config(e.to_string()))?;
        let settings = self.sweep_settings();
        for &l in &self.lambdas {
            settings.grid(l).map_err(|e| Error::Config(e.to_string()))?;
        }
        if let Some(p) = &self.perturb {
            if !p.amplitude.is_finite() {
                return Err(Error::Config("perturb.amplitude must be finite".into()));
            }
            let n = family.target().isometry_algebra_basis().len();
            if p.generator >= n {
                return Err(Error::Config(format!(
                    "perturb.generator = {} but the isometry algebra has {n} generators",
                    p.generator
                )));
            }
        }
        Ok(())
    }

    fn validate_planes(&self) -> Result<()> {
        let planes = self.planes_config()?;
        if planes.dims.is_empty() && planes.quadruples.is_empty() && !planes.from_fit {
            return Err(Error::Config("planes section selects nothing".into()));
        }
        if planes.dims.iter().any(|&n| n < 2) {
            return Err(Error::Config("planes.dims entries must be >= 2".into()));
        }
        if !planes.dims.is_empty() && planes.count == 0 {
            return Err(Error::Config("planes.count must be >= 1".into()));
        }
        for (i, q) in planes.quadruples.iter().enumerate() {
            let n = q.a.len();
            if n < 2 || q.b.len() != n || q.c.len() != n || q.d.len() != n {
                return Err(Error::Config(format!(
                    "planes.quadruples[{i}]: vectors must share one length >= 2"
                )));
            }
        }
        if planes.from_fit {
            self.validate_analysis(1)?;
        }
        Ok(())
    }

    pub fn planes_config(&self) -> Result<&PlanesConfig> {
        self.planes
            .as_ref()
            .ok_or_else(|| Error::Config("missing \"planes\" section".into()))
    }

    pub fn heatflow_config(&self) -> Result<&HeatflowConfig> {
        self.heatflow
            .as_ref()
            .ok_or_else(|| Error::Config("missing \"heatflow\" section".into()))
    }

    pub fn flow_grid(&self) -> Result<CylinderGrid> {
        let h = self.heatflow_config()?;
        CylinderGrid::new(h.t_min, h.t_max, h.n_t, h.n_theta).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn flow_params(&self) -> Result<FlowParams> {
        let h = self.heatflow_config()?;
        FlowParams::new(self.flow_grid()?, h.tau, h.max_iters, h.tol).map_err(|e| Error::Config(e.to_string()))
    }

    fn trace(&self, spec: &BoundarySpec, t: f64) -> Result<(BoundaryTrace, RationalFamily)> {
        let g = self.flow_grid()?;
        let (trace, family) = match spec {
            BoundarySpec::Family { family, lambda } => {
                let f = family.build()?;
                f.validate_lambda_range(*lambda, *lambda)?;
                (BoundaryTrace::from_family(&f, *lambda, t, g.n_theta)?, f)
            }
            BoundarySpec::Csv { csv } => {
                let path = self.base_dir.join(csv);
                let file =
                    File::open(&path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
                let f = self.family().unwrap_or_else(|_| RationalFamily::identity());
                (BoundaryTrace::from_csv(file, f.ambient_dim())?, f)
            }
        };
        if trace.len() != g.n_theta {
            return Err(Error::Config(format!(
                "boundary trace has {} points but heatflow.n_theta = {}",
                trace.len(),
                g.n_theta
            )));
        }
        Ok((trace, family))
    }

    /// Inner (`t_min`) and outer (`t_max`) traces; CSV traces take their
    /// dimension from `family` when present and default to `S²`.
    pub fn boundaries(&self) -> Result<(BoundaryTrace, BoundaryTrace)> {
        let g = self.flow_grid()?;
        let h = self.heatflow_config()?;
        let wrap = |e: Error| match e {
            Error::Config(_) => e,
            other => Error::Config(other.to_string()),
        };
        let (inner, fi) = self.trace(&h.inner, g.t_min).map_err(wrap)?;
        let (outer, fo) = self.trace(&h.outer, g.t_max).map_err(wrap)?;
        if fi.ambient_dim() != fo.ambient_dim() {
            return Err(Error::Config("inner and outer traces live in different targets".into()));
        }
        Ok((inner, outer))
    }

    pub fn flow_target(&self) -> Result<crate::geometry::TargetManifold> {
        let h = self.heatflow_config()?;
        let dim = match &h.inner {
            BoundarySpec::Family { family, .. } => family.build()?.ambient_dim(),
            BoundarySpec::Csv { .. } => self.family().map(|f| f.ambient_dim()).unwrap_or(3),
        };
        Ok(if dim == 3 {
            crate::geometry::TargetManifold::sphere(2)
        } else {
            crate::geometry::TargetManifold::product(2, 2)
        })
    }

    pub fn oracle(&self) -> Result<Option<(RationalFamily, f64)>> {
        let h = self.heatflow_config()?;
        match &h.oracle {
            None => Ok(None),
            Some(o) => {
                let f = o.family.build().map_err(|e| Error::Config(e.to_string()))?;
                f.validate_lambda_range(o.lambda, o.lambda)
                    .map_err(|e| Error::Config(e.to_string()))?;
                Ok(Some((f, o.lambda)))
            }
        }
    }
}
