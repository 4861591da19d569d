//! Orchestration shared by the command-line front end and the test suites:
//! family → sample → fit → reports, heat-flow runs, plane surveys and gates.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Needs, RunConfig};
use crate::error::{Error, Result};
use crate::field::{CylinderGrid, FieldSample};
use crate::geometry::{AlgebraGenerator, TargetManifold};
use crate::heatflow::{gradient_sup, harmonic_residual, solve_annulus, FlowDiagnostics, FlowSolution};
use crate::linalg::{norm, sub};
use crate::neck::{
    fit_first_order, neck_center, residual_decay, residual_profile, second_order_correction, DecayReport,
    ExpansionModel, NeckExpansion, ResidualPoint, WindowPolicy,
};
use crate::obstruct::{
    analyze_member, conservation_max_row, conservation_row, perturbed_sample, pohozaev_row, ObstructionReport,
    SweepSettings,
};
use crate::planes::{classify, sample_constrained, Classification, PlaneQuadruple, PlaneReport};
use crate::rational::{cylinder_sample, RationalFamily};

/// Number of circles the conservation and Pohozaev checks look at.
pub const CHECK_CIRCLES: usize = 10;

/// Everything computed for one family member.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub sample: FieldSample,
    pub expansion: NeckExpansion,
    pub report: ObstructionReport,
    pub first_order: DecayReport,
    pub corrected: DecayReport,
    /// Remainder profile against the first-order model.
    pub profile: Vec<ResidualPoint>,
}

/// Remainder slopes with and without the second-order correction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecaySummary {
    pub lambda: f64,
    pub first_order: DecayReport,
    pub corrected: DecayReport,
}

impl Analysis {
    pub fn decay_summary(&self) -> DecaySummary {
        DecaySummary {
            lambda: self.expansion.lambda,
            first_order: self.first_order,
            corrected: self.corrected,
        }
    }
}

pub fn analyze(family: &RationalFamily, lambda: f64, settings: &SweepSettings) -> Result<Analysis> {
    let (sample, mut expansion, report) = analyze_member(family, lambda, settings)?;
    let grid = *sample.grid();
    let first = ExpansionModel::first_order(&expansion).sample(&grid)?;
    let corrected = second_order_correction(&expansion, &family.target(), &grid)?;
    let first_order = residual_decay(&sample, &first, lambda)?;
    let corrected = residual_decay(&sample, &corrected, lambda)?;
    let profile = residual_profile(&sample, &first, lambda)?;
    if first_order.alpha_hat.is_finite() {
        expansion.alpha_hat = Some(first_order.alpha_hat);
    }
    Ok(Analysis {
        sample,
        expansion,
        report,
        first_order,
        corrected,
        profile,
    })
}

/// Analyses every configured λ, in order.
pub fn analyze_all(cfg: &RunConfig) -> Result<Vec<Analysis>> {
    let family = cfg.family()?;
    let settings = cfg.sweep_settings();
    cfg.lambdas
        .par_iter()
        .map(|&l| analyze(&family, l, &settings))
        .collect::<Vec<_>>()
        .into_iter()
        .collect()
}

/// `count` rows evenly spread over the interior rows of the grid. The end
/// rows are skipped because finite-difference derivatives are one-sided
/// there.
pub fn spanning_rows(grid: &CylinderGrid, count: usize) -> Vec<usize> {
    let (lo, hi) = (1, grid.n_t.saturating_sub(2).max(1));
    if count <= 1 || hi <= lo {
        return vec![(lo + hi) / 2];
    }
    let mut rows: Vec<usize> = (0..count)
        .map(|i| lo + ((hi - lo) as f64 * i as f64 / (count - 1) as f64).round() as usize)
        .collect();
    rows.dedup();
    rows
}

/// Largest `|∫ ∂_t u · B u dθ|` over the generators and the spanning rows.
pub fn conservation_over_neck(s: &FieldSample, basis: &[AlgebraGenerator]) -> Result<f64> {
    spanning_rows(s.grid(), CHECK_CIRCLES)
        .into_iter()
        .map(|j| conservation_max_row(s, basis, j))
        .try_fold(0.0, |m, v| Ok(f64::max(m, v?)))
}

/// Largest spread `(max − min)` over the spanning rows of the conservation
/// integral, over the generators. Zero for harmonic maps even when the
/// integral itself is not.
pub fn conservation_variation(s: &FieldSample, basis: &[AlgebraGenerator]) -> Result<f64> {
    let rows = spanning_rows(s.grid(), CHECK_CIRCLES);
    let mut worst = 0.0_f64;
    for b in basis {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for &j in &rows {
            let v = conservation_row(s, b, j)?;
            lo = lo.min(v);
            hi = hi.max(v);
        }
        worst = worst.max(hi - lo);
    }
    Ok(worst)
}

/// Spread `(max − min)` of `P1(t)` and `P2(t)` over the interior rows.
pub fn pohozaev_variation(s: &FieldSample) -> (f64, f64) {
    let n = s.grid().n_t;
    let rows = if n > 2 { 1..n - 1 } else { 0..n };
    let (mut lo1, mut hi1, mut lo2, mut hi2) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for j in rows {
        let (p1, p2) = pohozaev_row(s, j);
        lo1 = lo1.min(p1);
        hi1 = hi1.max(p1);
        lo2 = lo2.min(p2);
        hi2 = hi2.max(p2);
    }
    (hi1 - lo1, hi2 - lo2)
}

/// `max |u − v|` over the grid.
pub fn sup_distance(u: &FieldSample, v: &FieldSample) -> f64 {
    let dim = u.dim();
    u.values()
        .chunks(dim)
        .zip(v.values().chunks(dim))
        .map(|(x, y)| norm(&sub(x, y)))
        .fold(0.0, f64::max)
}

/// Outcome of a configured heat-flow solve.
#[derive(Debug, Clone)]
pub struct FlowRun {
    pub solution: FlowSolution,
    /// Set when the flow stopped without converging; `solution` is then the
    /// best iterate.
    pub failure: Option<String>,
    pub metrics: FlowMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowMetrics {
    pub iterations: usize,
    pub converged: bool,
    pub energy_monotone: bool,
    pub residual_reduction: f64,
    /// Tangential residual relative to `‖∇u‖∞`.
    pub relative_residual: f64,
    pub conservation_max: f64,
    pub conservation_variation: f64,
    pub pohozaev_variation: (f64, f64),
    pub oracle_error: Option<f64>,
    pub dirichlet_energy: f64,
}

pub fn run_flow(cfg: &RunConfig) -> Result<FlowRun> {
    let params = cfg.flow_params()?;
    let (inner, outer) = cfg.boundaries()?;
    let target = cfg.flow_target()?;
    let (solution, failure) = match solve_annulus(&target, &inner, &outer, &params, None) {
        Ok(s) => (s, None),
        Err(f) => match (f.error, f.best) {
            (e @ Error::NotConverged { .. }, Some(best)) => (*best, Some(e.to_string())),
            (e, _) => return Err(e),
        },
    };
    let s = &solution.sample;
    let basis = target.isometry_algebra_basis();
    let oracle_error = match cfg.oracle()? {
        Some((family, lambda)) => Some(sup_distance(s, &cylinder_sample(&family, lambda, s.grid())?)),
        None => None,
    };
    let hr = harmonic_residual(&target, s)?;
    let d: &FlowDiagnostics = &solution.diagnostics;
    let metrics = FlowMetrics {
        iterations: d.iterations,
        converged: d.converged,
        energy_monotone: d.energy_monotone,
        residual_reduction: d.residual_reduction(),
        relative_residual: hr.sup / gradient_sup(s),
        conservation_max: conservation_over_neck(s, &basis)?,
        conservation_variation: conservation_variation(s, &basis)?,
        pohozaev_variation: pohozaev_variation(s),
        oracle_error,
        dirichlet_energy: s.dirichlet_energy(),
    };
    Ok(FlowRun {
        solution,
        failure,
        metrics,
    })
}

/// Classification counts for one sampler dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionSummary {
    pub n: usize,
    pub count: usize,
    pub seed: u64,
    pub coincident: usize,
    pub isoclinic: usize,
    pub generic: usize,
    pub not_admissible: usize,
    /// `max |α₁ − α₂|`.
    pub max_angle_gap: f64,
    /// `max |cos α₁ − cos α|` against the adapted-frame value.
    pub max_cos_alpha_error: f64,
}

impl DimensionSummary {
    /// Samples that contradict the dichotomy for their dimension.
    pub fn failures(&self) -> usize {
        if self.n <= 3 {
            self.count - self.coincident
        } else {
            self.generic + self.not_admissible
        }
    }
}

/// Per-dimension sampler seed.
pub fn dimension_seed(seed: u64, n: usize) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(n as u64)
}

pub fn survey_dimension(n: usize, count: usize, seed: u64, tol: f64) -> Result<DimensionSummary> {
    let seed = dimension_seed(seed, n);
    let samples = sample_constrained(n, count, seed)?;
    let reports: Vec<(PlaneReport, f64)> = samples
        .par_iter()
        .map(|s| classify(&s.quadruple, tol).map(|r| (r, s.cos_alpha)))
        .collect::<Result<_>>()?;
    let mut out = DimensionSummary {
        n,
        count,
        seed,
        coincident: 0,
        isoclinic: 0,
        generic: 0,
        not_admissible: 0,
        max_angle_gap: 0.0,
        max_cos_alpha_error: 0.0,
    };
    for (r, cos_alpha) in &reports {
        match r.classification {
            Classification::CoincidentOppositeOrientation => out.coincident += 1,
            Classification::Isoclinic { .. } => out.isoclinic += 1,
            Classification::Generic => out.generic += 1,
            Classification::NotAdmissible { .. } => out.not_admissible += 1,
        }
        match r.angles {
            Some((a1, a2)) => {
                out.max_angle_gap = out.max_angle_gap.max((a2 - a1).abs());
                out.max_cos_alpha_error = out.max_cos_alpha_error.max((a1.cos() - cos_alpha).abs());
            }
            None => {
                out.max_angle_gap = f64::INFINITY;
                out.max_cos_alpha_error = f64::INFINITY;
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedPlanes {
    pub lambda: f64,
    pub report: PlaneReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanesSurvey {
    pub dims: Vec<DimensionSummary>,
    pub quadruples: Vec<PlaneReport>,
    pub fitted: Vec<FittedPlanes>,
}

impl PlanesSurvey {
    /// Quadruples classified `Generic` or `NotAdmissible`, all sources.
    pub fn generic_count(&self) -> usize {
        let bad = |r: &PlaneReport| {
            matches!(
                r.classification,
                Classification::Generic | Classification::NotAdmissible { .. }
            )
        };
        self.dims.iter().map(|d| d.generic + d.not_admissible).sum::<usize>()
            + self.quadruples.iter().filter(|r| bad(r)).count()
            + self.fitted.iter().filter(|f| bad(&f.report)).count()
    }
}

fn fitted_quadruple(e: &NeckExpansion) -> PlaneQuadruple {
    PlaneQuadruple::new(e.a.clone(), e.b.clone(), e.c.clone(), e.d.clone())
}

pub fn survey_planes(cfg: &RunConfig, analyses: Option<&[Analysis]>) -> Result<PlanesSurvey> {
    let pc = cfg.planes_config()?;
    let dims = pc
        .dims
        .iter()
        .map(|&n| survey_dimension(n, pc.count, cfg.seed, cfg.tolerances.planes_synthetic))
        .collect::<Result<_>>()?;
    let quadruples = pc
        .quadruples
        .iter()
        .map(|q| classify(q, cfg.tolerances.planes_synthetic))
        .collect::<Result<_>>()?;
    let fitted = if pc.from_fit {
        let owned;
        let analyses = match analyses {
            Some(a) => a,
            None => {
                owned = analyze_all(cfg)?;
                &owned
            }
        };
        analyses
            .iter()
            .map(|a| {
                Ok(FittedPlanes {
                    lambda: a.expansion.lambda,
                    report: classify(&fitted_quadruple(&a.expansion), cfg.tolerances.planes_fitted)?,
                })
            })
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };
    Ok(PlanesSurvey {
        dims,
        quadruples,
        fitted,
    })
}

/// Which computation a check draws on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Source {
    Analysis,
    Heatflow,
    Planes,
}

/// Direction a check is naturally bounded in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bound {
    Max,
    Min,
}

/// Every gate check: name, source, natural bound and description.
const CHECKS: &[(&str, Source, Bound, &str)] = &[
    ("eq15", Source::Analysis, Bound::Max, "max over lambda of |a.c + b.d|"),
    ("eq16", Source::Analysis, Bound::Max, "max over lambda of |a.d - b.c|"),
    ("q_over_lambda", Source::Analysis, Bound::Max, "max |q| / lambda"),
    (
        "q_over_sqrt_lambda",
        Source::Analysis,
        Bound::Max,
        "max |q| / sqrt(lambda)",
    ),
    (
        "q_normal_over_lambda",
        Source::Analysis,
        Bound::Max,
        "max |q_norm| / lambda",
    ),
    (
        "dist_p_over_lambda",
        Source::Analysis,
        Bound::Max,
        "max dist(p, N) / lambda",
    ),
    (
        "tangent_identity_over_lambda",
        Source::Analysis,
        Bound::Max,
        "max |q.Bp + lambda(a.Bc + b.Bd)| / lambda",
    ),
    (
        "conservation",
        Source::Analysis,
        Bound::Max,
        "max |int d_t u . Bu| over generators and circles",
    ),
    (
        "pohozaev_variation",
        Source::Analysis,
        Bound::Max,
        "max spread of P1(t), P2(t) across rows",
    ),
    (
        "poho1_bound_ratio",
        Source::Analysis,
        Bound::Max,
        "|poho1| / (4 lambda^(alpha/2+1) + 10 fit residual)",
    ),
    (
        "slope_left",
        Source::Analysis,
        Bound::Min,
        "min remainder slope left of t0",
    ),
    (
        "slope_right",
        Source::Analysis,
        Bound::Min,
        "min remainder slope right of t0",
    ),
    (
        "correction_slope_gain",
        Source::Analysis,
        Bound::Min,
        "min slope change from adding the correction",
    ),
    (
        "window_stability",
        Source::Analysis,
        Bound::Max,
        "max change of a, b, c, d when delta is halved",
    ),
    (
        "heatflow_oracle_error",
        Source::Heatflow,
        Bound::Max,
        "sup distance to the oracle map",
    ),
    (
        "heatflow_residual_reduction",
        Source::Heatflow,
        Bound::Min,
        "initial over final harmonic residual",
    ),
    (
        "heatflow_relative_residual",
        Source::Heatflow,
        Bound::Max,
        "final harmonic residual over |grad u|",
    ),
    (
        "heatflow_energy_monotone",
        Source::Heatflow,
        Bound::Min,
        "1 if the energy never increased after the transient",
    ),
    (
        "heatflow_converged",
        Source::Heatflow,
        Bound::Min,
        "1 if the flow met its tolerance",
    ),
    (
        "heatflow_conservation",
        Source::Heatflow,
        Bound::Max,
        "conservation check on the flow solution",
    ),
    (
        "heatflow_conservation_variation",
        Source::Heatflow,
        Bound::Max,
        "spread of the conservation integral across circles",
    ),
    (
        "heatflow_pohozaev_variation",
        Source::Heatflow,
        Bound::Max,
        "Pohozaev spread on the flow solution",
    ),
    (
        "planes_generic_count",
        Source::Planes,
        Bound::Max,
        "quadruples classified generic or not admissible",
    ),
    (
        "planes_dichotomy_failures",
        Source::Planes,
        Bound::Max,
        "samples off the coincident (n<=3) / isoclinic (n>=4) branch",
    ),
    (
        "planes_isoclinic_defect",
        Source::Planes,
        Bound::Max,
        "max |alpha1 - alpha2| over sampled n >= 4",
    ),
    (
        "planes_cos_alpha_error",
        Source::Planes,
        Bound::Max,
        "max |cos alpha1 - adapted-frame cos alpha|",
    ),
];

/// `(name, natural bound, description)` for every available check.
pub fn available_checks() -> impl Iterator<Item = (&'static str, Bound, &'static str)> {
    CHECKS.iter().map(|&(n, _, b, d)| (n, b, d))
}

fn source_of(check: &str) -> Option<Source> {
    CHECKS.iter().find(|c| c.0 == check).map(|c| c.1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateResult {
    pub check: String,
    pub value: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min: Option<f64>,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateReport {
    pub pass: bool,
    pub gates: Vec<GateResult>,
}

impl GateReport {
    pub fn failed(&self) -> impl Iterator<Item = &GateResult> {
        self.gates.iter().filter(|g| !g.pass)
    }
}

fn fold_max(xs: impl Iterator<Item = f64>) -> f64 {
    xs.fold(f64::NEG_INFINITY, |m, x| {
        if x.is_nan() || m.is_nan() {
            f64::NAN
        } else {
            m.max(x)
        }
    })
}

fn fold_min(xs: impl Iterator<Item = f64>) -> f64 {
    xs.fold(f64::INFINITY, |m, x| {
        if x.is_nan() || m.is_nan() {
            f64::NAN
        } else {
            m.min(x)
        }
    })
}

fn max_coefficient_change(a: &NeckExpansion, b: &NeckExpansion) -> f64 {
    [(&a.a, &b.a), (&a.b, &b.b), (&a.c, &b.c), (&a.d, &b.d)]
        .iter()
        .flat_map(|(x, y)| x.iter().zip(y.iter()).map(|(u, v)| (u - v).abs()))
        .fold(0.0, f64::max)
}

/// The sample the conservation and Pohozaev checks see: the analytic one,
/// or its configured perturbation.
fn checked_sample(cfg: &RunConfig, a: &Analysis, target: &TargetManifold) -> Result<FieldSample> {
    match &cfg.perturb {
        None => Ok(a.sample.clone()),
        Some(p) => {
            let basis = target.isometry_algebra_basis();
            let t_ref = p.t_ref.unwrap_or_else(|| neck_center(a.expansion.lambda));
            perturbed_sample(&a.sample, target, &basis[p.generator], p.amplitude, t_ref)
        }
    }
}

fn analysis_value(check: &str, cfg: &RunConfig, analyses: &[Analysis], target: &TargetManifold) -> Result<f64> {
    let rows = || analyses.iter().map(|a| &a.report);
    Ok(match check {
        "eq15" => fold_max(rows().map(|r| r.eq15.abs())),
        "eq16" => fold_max(rows().map(|r| r.eq16.abs())),
        "q_over_lambda" => fold_max(rows().map(|r| r.q_norm / r.lambda)),
        "q_over_sqrt_lambda" => fold_max(rows().map(|r| r.q_norm / r.lambda.sqrt())),
        "q_normal_over_lambda" => fold_max(rows().map(|r| r.q_norm_part / r.lambda)),
        "dist_p_over_lambda" => fold_max(rows().map(|r| r.dist_p / r.lambda)),
        "tangent_identity_over_lambda" => fold_max(rows().map(|r| r.tangent_identity_max / r.lambda)),
        "poho1_bound_ratio" => fold_max(analyses.iter().map(|a| {
            let l = a.report.lambda;
            let fit = a.expansion.residual_sup.iter().cloned().fold(0.0, f64::max);
            a.report.poho1.abs() / (4.0 * l.powf(cfg.alpha / 2.0 + 1.0) + 10.0 * fit)
        })),
        "slope_left" => fold_min(analyses.iter().map(|a| a.first_order.slope_left)),
        "slope_right" => fold_min(analyses.iter().map(|a| a.first_order.slope_right)),
        "correction_slope_gain" => fold_min(analyses.iter().map(|a| {
            (a.corrected.slope_left - a.first_order.slope_left).min(a.corrected.slope_right - a.first_order.slope_right)
        })),
        "conservation" => {
            let basis = target.isometry_algebra_basis();
            let mut m = f64::NEG_INFINITY;
            for a in analyses {
                m = m.max(conservation_over_neck(&checked_sample(cfg, a, target)?, &basis)?);
            }
            m
        }
        "pohozaev_variation" => {
            let mut m = f64::NEG_INFINITY;
            for a in analyses {
                let (v1, v2) = pohozaev_variation(&checked_sample(cfg, a, target)?);
                m = m.max(v1).max(v2);
            }
            m
        }
        "window_stability" => {
            let mut m = f64::NEG_INFINITY;
            for a in analyses {
                let policy = WindowPolicy {
                    delta: cfg.delta / 2.0,
                    ..cfg.policy()
                };
                let narrow = fit_first_order(&a.sample, a.expansion.lambda, &policy)?;
                m = m.max(max_coefficient_change(&a.expansion, &narrow));
            }
            m
        }
        _ => unreachable!("unknown analysis check {check}"),
    })
}

fn flow_value(check: &str, m: &FlowMetrics) -> Result<f64> {
    let flag = |b: bool| if b { 1.0 } else { 0.0 };
    Ok(match check {
        "heatflow_oracle_error" => m
            .oracle_error
            .ok_or_else(|| Error::Config("heatflow_oracle_error needs heatflow.oracle".into()))?,
        "heatflow_residual_reduction" => m.residual_reduction,
        "heatflow_relative_residual" => m.relative_residual,
        "heatflow_energy_monotone" => flag(m.energy_monotone),
        "heatflow_converged" => flag(m.converged),
        "heatflow_conservation" => m.conservation_max,
        "heatflow_conservation_variation" => m.conservation_variation,
        "heatflow_pohozaev_variation" => m.pohozaev_variation.0.max(m.pohozaev_variation.1),
        _ => unreachable!("unknown heat-flow check {check}"),
    })
}

fn planes_value(check: &str, s: &PlanesSurvey) -> f64 {
    match check {
        "planes_generic_count" => s.generic_count() as f64,
        "planes_dichotomy_failures" => s.dims.iter().map(|d| d.failures()).sum::<usize>() as f64,
        "planes_isoclinic_defect" => fold_max(s.dims.iter().filter(|d| d.n >= 4).map(|d| d.max_angle_gap)).max(0.0),
        "planes_cos_alpha_error" => fold_max(s.dims.iter().map(|d| d.max_cos_alpha_error)).max(0.0),
        _ => unreachable!("unknown planes check {check}"),
    }
}

/// Validates the gate list and the sections it draws on.
pub fn validate_gates(cfg: &RunConfig) -> Result<()> {
    let gates = cfg
        .gates
        .as_ref()
        .ok_or_else(|| Error::Config("missing \"gates\" section".into()))?;
    if gates.is_empty() {
        return Err(Error::Config("\"gates\" must list at least one check".into()));
    }
    let mut needs = Vec::new();
    for g in gates {
        let need = match source_of(&g.check) {
            Some(Source::Analysis) => Needs::Analysis { min_lambdas: 1 },
            Some(Source::Heatflow) => Needs::Heatflow,
            Some(Source::Planes) => Needs::Planes,
            None => return Err(Error::Config(format!("unknown gate check {:?}", g.check))),
        };
        if g.check == "heatflow_oracle_error" && cfg.heatflow.as_ref().is_some_and(|h| h.oracle.is_none()) {
            return Err(Error::Config("heatflow_oracle_error needs heatflow.oracle".into()));
        }
        if !needs.contains(&need) {
            needs.push(need);
        }
    }
    cfg.validate(&needs)
}

/// Runs the computations the gates draw on and evaluates every gate, in the
/// configured order.
pub fn evaluate_gates(cfg: &RunConfig) -> Result<GateReport> {
    validate_gates(cfg)?;
    let gates = cfg.gates.as_deref().unwrap_or_default();
    let uses = |s: Source| gates.iter().any(|g| source_of(&g.check) == Some(s));
    let analyses = if uses(Source::Analysis) {
        Some(analyze_all(cfg)?)
    } else {
        None
    };
    let flow = if uses(Source::Heatflow) {
        Some(run_flow(cfg)?)
    } else {
        None
    };
    let planes = if uses(Source::Planes) {
        Some(survey_planes(cfg, analyses.as_deref())?)
    } else {
        None
    };
    let target = cfg.family().map(|f| f.target()).ok();
    let mut results = Vec::with_capacity(gates.len());
    for g in gates {
        let value = match source_of(&g.check).expect("validated") {
            Source::Analysis => analysis_value(
                &g.check,
                cfg,
                analyses.as_deref().expect("computed"),
                target.as_ref().expect("validated"),
            )?,
            Source::Heatflow => flow_value(&g.check, &flow.as_ref().expect("computed").metrics)?,
            Source::Planes => planes_value(&g.check, planes.as_ref().expect("computed")),
        };
        let pass = match (g.max, g.min) {
            (Some(hi), _) => value <= hi,
            (_, Some(lo)) => value >= lo,
            _ => false,
        };
        results.push(GateResult {
            check: g.check.clone(),
            value,
            max: g.max,
            min: g.min,
            pass,
        });
    }
    Ok(GateReport {
        pass: results.iter().all(|r| r.pass),
        gates: results,
    })
}
