//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails.

use std::fs;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use necklab::config::RunConfig;
use necklab::neck::WindowPolicy;
use necklab::obstruct::{lambda_sweep, perturbed_sample, SweepSettings};
use necklab::pipeline::{analyze, conservation_over_neck, pohozaev_variation, run_flow, survey_dimension, FlowRun};
use necklab::{cylinder_sample, Error, RationalFamily, Result};

const SWEEP: [f64; 3] = [1e-2, 1e-3, 1e-4];

fn settings(delta: f64) -> SweepSettings {
    SweepSettings {
        policy: WindowPolicy::new(delta),
        dt: 0.01,
        n_theta: 256,
    }
}

fn max_dev(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Result<Verdict> {
    Ok(Verdict { pass, detail })
}

/// Heat-flow solutions shared by several criteria.
struct Flows {
    oracle: Option<FlowRun>,
    twisted: Option<FlowRun>,
}

impl Flows {
    /// `σ(z)` traces on `[−2, 0] × S¹`, 128 × 256 nodes.
    fn oracle(&mut self) -> Result<&FlowRun> {
        if self.oracle.is_none() {
            let cfg = RunConfig::from_json(
                r#"{"heatflow": {"t_min": -2, "t_max": 0, "n_t": 128, "n_theta": 256,
                    "inner": {"family": "identity"}, "outer": {"family": "identity"},
                    "oracle": {"family": "identity"}, "tol": 1e-7, "max_iters": 400000}}"#,
            )?;
            self.oracle = Some(run_flow(&cfg)?);
        }
        Ok(self.oracle.as_ref().unwrap())
    }

    /// Non-conformal data: the inner circle carries `σ(c z)` with
    /// `c = 1.6 + 0.6i`, twisted and rescaled against the outer `σ(z)`.
    fn twisted(&mut self) -> Result<&FlowRun> {
        if self.twisted.is_none() {
            let cfg = RunConfig::from_json(TWISTED_FLOW)?;
            self.twisted = Some(run_flow(&cfg)?);
        }
        Ok(self.twisted.as_ref().unwrap())
    }
}

const TWISTED_FLOW: &str = r#"{"heatflow": {"t_min": -1, "t_max": 0, "n_t": 65, "n_theta": 128,
    "inner": {"family": {"factors": [{"P": [[0, 0, 0, 0], [1.6, 0.6, 0, 0]], "Q": [[1, 0, 0, 0]]}]}},
    "outer": {"family": "identity"}, "tol": 1e-7}}"#;

fn expansion_recovery() -> Result<Verdict> {
    let fam = RationalFamily::bubble1();
    let oracle = [[2.0, 0.0, 0.0], [0.0, 2.0, 0.0], [2.0, 0.0, 0.0], [0.0, -2.0, 0.0]];
    let (mut worst, mut worst_p) = (0.0_f64, 0.0_f64);
    for l in SWEEP {
        let a = analyze(&fam, l, &settings(0.1))?;
        let e = &a.expansion;
        for (fit, exact) in [&e.a, &e.b, &e.c, &e.d].iter().zip(&oracle) {
            worst = worst.max(max_dev(fit, exact));
        }
        worst_p = worst_p.max(max_dev(&e.p, &[0.0, 0.0, -1.0]));
    }
    verdict(
        worst <= 0.05 && worst_p <= 0.05,
        format!("max |abcd - oracle| = {worst:.3e}, max |p - (0,0,-1)| = {worst_p:.3e}"),
    )
}

fn remainder_decay() -> Result<Verdict> {
    let a = analyze(&RationalFamily::bubble1(), 1e-4, &settings(0.1))?;
    let (f, c) = (a.first_order, a.corrected);
    verdict(
        f.slope_left >= 1.9 && f.slope_right >= 1.9 && c.slope_left >= f.slope_left && c.slope_right >= f.slope_right,
        format!(
            "first order slopes ({:.4}, {:.4}), with correction ({:.4}, {:.4})",
            f.slope_left, f.slope_right, c.slope_left, c.slope_right
        ),
    )
}

fn obstruction_equalities() -> Result<Verdict> {
    let families = [
        ("bubble1", RationalFamily::bubble1()),
        ("kappa=-1", RationalFamily::bubble_kappa(-1.0)),
        ("kappa=0", RationalFamily::bubble_kappa(0.0)),
        ("kappa=1", RationalFamily::bubble_kappa(1.0)),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, fam) in &families {
        let a = analyze(fam, 1e-4, &settings(0.1))?;
        let (e15, e16) = (a.report.eq15.abs(), a.report.eq16.abs());
        pass &= e15 <= 0.05 && e16 <= 0.05;
        parts.push(format!("{name}: ({e15:.2e}, {e16:.2e})"));
    }
    verdict(pass, parts.join(", "))
}

fn q_scaling() -> Result<Verdict> {
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, fam) in [
        ("bubble1", RationalFamily::bubble1()),
        ("kappa=-1", RationalFamily::bubble_kappa(-1.0)),
    ] {
        let sweep = lambda_sweep(&fam, &SWEEP, &settings(0.1))?;
        pass &= sweep.rows.len() == SWEEP.len();
        let ratio = sweep.rows.iter().map(|r| r.q_norm / r.lambda).fold(0.0, f64::max);
        let sqrt_ratio = sweep
            .rows
            .iter()
            .map(|r| r.q_norm / r.lambda.sqrt())
            .fold(0.0, f64::max);
        pass &= ratio <= 10.0 && sqrt_ratio <= 0.01;
        parts.push(format!(
            "{name}: max |q|/lambda = {ratio:.2e}, max |q|/sqrt(lambda) = {sqrt_ratio:.2e}"
        ));
    }
    verdict(pass, parts.join("; "))
}

fn conservation(flows: &mut Flows) -> Result<Verdict> {
    let mut analytic = 0.0_f64;
    let mut detector = f64::INFINITY;
    for fam in [
        RationalFamily::bubble1(),
        RationalFamily::bubble_kappa(-1.0),
        RationalFamily::bubble_kappa(1.0),
    ] {
        let target = fam.target();
        let basis = target.isometry_algebra_basis();
        let s = cylinder_sample(&fam, 1e-4, &settings(0.1).grid(1e-4)?)?;
        analytic = analytic.max(conservation_over_neck(&s, &basis)?);
        let t0 = 0.5 * 1e-4_f64.ln();
        for b in &basis {
            let p = perturbed_sample(&s, &target, b, 0.01, t0)?;
            detector = detector.min(conservation_over_neck(&p, &basis)?);
        }
    }
    let oracle = flows.oracle()?.metrics.conservation_max;
    let twisted = &flows.twisted()?.metrics;
    let pass = analytic <= 1e-8 && oracle <= 1e-3 && twisted.conservation_variation <= 1e-3 && detector > 1e-4;
    verdict(
        pass,
        format!(
            "analytic {analytic:.2e}, sigma(z) flow {oracle:.2e}, twisted flow spread {:.2e} (value {:.3}), perturbed min {detector:.2e}",
            twisted.conservation_variation, twisted.conservation_max
        ),
    )
}

fn pohozaev_constancy(flows: &mut Flows) -> Result<Verdict> {
    let mut analytic = 0.0_f64;
    for fam in [RationalFamily::bubble1(), RationalFamily::bubble_kappa(-1.0)] {
        for l in SWEEP {
            let s = cylinder_sample(&fam, l, &settings(0.1).grid(l)?)?;
            let (v1, v2) = pohozaev_variation(&s);
            analytic = analytic.max(v1).max(v2);
        }
    }
    let run = flows.twisted()?;
    let (v1, v2) = run.metrics.pohozaev_variation;
    let g = run.solution.sample.grid();
    let (p1, p2) = necklab::obstruct::pohozaev_row(&run.solution.sample, g.n_t / 2);
    verdict(
        analytic <= 1e-8 && v1 <= 1e-3 && v2 <= 1e-3,
        format!(
            "analytic spread {analytic:.2e}; twisted flow spread ({v1:.2e}, {v2:.2e}) at (P1, P2) = ({p1:.3}, {p2:.3})"
        ),
    )
}

fn normal_parts() -> Result<Verdict> {
    let mut pass = true;
    let (mut dist, mut qn) = (0.0_f64, 0.0_f64);
    for fam in [
        RationalFamily::bubble1(),
        RationalFamily::bubble_kappa(-1.0),
        RationalFamily::bubble_kappa(1.0),
    ] {
        let sweep = lambda_sweep(&fam, &SWEEP, &settings(0.1))?;
        pass &= sweep.rows.len() == SWEEP.len();
        for r in &sweep.rows {
            dist = dist.max(r.dist_p / r.lambda);
            qn = qn.max(r.q_norm_part / r.lambda);
        }
    }
    verdict(
        pass && dist <= 10.0 && qn <= 10.0,
        format!("max dist(p, N)/lambda = {dist:.2e}, max |q_norm|/lambda = {qn:.2e}"),
    )
}

fn isoclinic_planes() -> Result<Verdict> {
    let start = Instant::now();
    let mut pass = true;
    let mut parts = Vec::new();
    for n in [2, 3, 4, 6] {
        let s = survey_dimension(n, 10_000, 0, 1e-9)?;
        let ok = if n <= 3 {
            s.coincident == s.count
        } else {
            s.isoclinic == s.count && s.max_angle_gap <= 1e-9
        };
        pass &= ok && s.max_cos_alpha_error <= 1e-9;
        parts.push(format!(
            "n={n}: {}/{} on branch, gap {:.1e}, cos err {:.1e}",
            if n <= 3 { s.coincident } else { s.isoclinic },
            s.count,
            s.max_angle_gap,
            s.max_cos_alpha_error
        ));
    }
    let secs = start.elapsed().as_secs_f64();
    parts.push(format!("{secs:.2}s"));
    verdict(pass && secs <= 10.0, parts.join(", "))
}

fn heat_flow_oracle(flows: &mut Flows) -> Result<Verdict> {
    let m = &flows.oracle()?.metrics;
    let err = m.oracle_error.ok_or_else(|| Error::Config("oracle missing".into()))?;
    verdict(
        m.converged && err <= 5e-3 && m.energy_monotone && m.residual_reduction >= 1e6,
        format!(
            "sup error {err:.2e}, energy monotone {}, residual reduction {:.2e}, {} iterations",
            m.energy_monotone, m.residual_reduction, m.iterations
        ),
    )
}

const VERIFY_SUITE: &str = r#"{
  "family": "bubble1",
  "lambdas": [1e-3, 1e-4],
  "seed": 7,
  "planes": {"dims": [2, 3, 4, 6], "count": 10000, "from_fit": true},
  "heatflow": {"t_min": -1, "t_max": 0, "n_t": 65, "n_theta": 128,
    "inner": {"family": {"factors": [{"P": [[0, 0, 0, 0], [1.6, 0.6, 0, 0]], "Q": [[1, 0, 0, 0]]}]}},
    "outer": {"family": "identity"}, "tol": 1e-7},
  "gates": [
    {"check": "eq15", "max": 0.05},
    {"check": "eq16", "max": 0.05},
    {"check": "q_over_lambda", "max": 10},
    {"check": "q_over_sqrt_lambda", "max": 0.01},
    {"check": "q_normal_over_lambda", "max": 10},
    {"check": "dist_p_over_lambda", "max": 10},
    {"check": "conservation", "max": 1e-8},
    {"check": "pohozaev_variation", "max": 1e-8},
    {"check": "poho1_bound_ratio", "max": 1},
    {"check": "window_stability", "max": 0.2},
    {"check": "heatflow_converged", "min": 1},
    {"check": "heatflow_energy_monotone", "min": 1},
    {"check": "heatflow_conservation_variation", "max": 1e-3},
    {"check": "heatflow_pohozaev_variation", "max": 1e-3},
    {"check": "planes_generic_count", "max": 0},
    {"check": "planes_dichotomy_failures", "max": 0},
    {"check": "planes_isoclinic_defect", "max": 1e-9},
    {"check": "planes_cos_alpha_error", "max": 1e-9}
  ]
}"#;

fn read_dir_sorted(dir: &Path) -> Result<Vec<(String, Vec<u8>)>> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)?
        .map(|e| {
            let e = e?;
            Ok((e.file_name().to_string_lossy().into_owned(), fs::read(e.path())?))
        })
        .collect::<std::io::Result<_>>()?;
    files.sort();
    Ok(files)
}

fn determinism() -> Result<Verdict> {
    let tmp = std::env::temp_dir().join(format!("necklab-acceptance-{}", std::process::id()));
    fs::create_dir_all(&tmp)?;
    let config = tmp.join("verify.json");
    fs::write(&config, VERIFY_SUITE)?;
    let mut outputs = Vec::new();
    let mut codes = Vec::new();
    for run in ["a", "b"] {
        let out = tmp.join(run);
        let status = Command::new(env!("CARGO_BIN_EXE_necklab"))
            .arg("verify")
            .arg("--config")
            .arg(&config)
            .arg("--out")
            .arg(&out)
            .output()?;
        codes.push(status.status.code());
        outputs.push((read_dir_sorted(&out)?, status.stdout));
    }
    let _ = fs::remove_dir_all(&tmp);
    let identical = outputs[0] == outputs[1];
    let files = outputs[0].0.len();
    verdict(
        identical && files > 0 && codes == [Some(0), Some(0)],
        format!("{files} artifact(s), identical bytes {identical}, exit codes {codes:?}"),
    )
}

type Criterion = Box<dyn FnOnce(&mut Flows) -> Result<Verdict>>;

fn main() -> ExitCode {
    let mut flows = Flows {
        oracle: None,
        twisted: None,
    };
    let criteria: Vec<(&str, Criterion)> = vec![
        ("expansion recovery", Box::new(|_| expansion_recovery())),
        ("remainder decay", Box::new(|_| remainder_decay())),
        ("obstruction equalities", Box::new(|_| obstruction_equalities())),
        ("q scaling", Box::new(|_| q_scaling())),
        ("conservation law", Box::new(conservation)),
        ("pohozaev constancy", Box::new(pohozaev_constancy)),
        ("normal parts of p and q", Box::new(|_| normal_parts())),
        ("isoclinic planes", Box::new(|_| isoclinic_planes())),
        ("heat-flow oracle", Box::new(heat_flow_oracle)),
        ("determinism", Box::new(|_| determinism())),
    ];
    let start = Instant::now();
    let mut failed = 0;
    for (i, (name, check)) in criteria.into_iter().enumerate() {
        let (pass, detail) = match check(&mut flows) {
            Ok(v) => (v.pass, v.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        if !pass {
            failed += 1;
        }
        println!(
            "criterion {:>2} {:<24} {}  {detail}",
            i + 1,
            name,
            if pass { "PASS" } else { "FAIL" }
        );
    }
    println!(
        "acceptance: {} of 10 criteria passed in {:.1}s",
        10 - failed,
        start.elapsed().as_secs_f64()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
