//! Experiment runner: `check`, `run`, `compare`, `reduce` and `report` over TOML configs.
//!
//! Exit codes: 0 success, 1 failed check or deviation above tolerance, 2 degenerate-only
//! pass, 3 certificate violation, 64 usage or config error, 70 numerical failure, 74 IO error.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::diagnostics::{self, GapBoxes, GapSeries, RateCertificate};
use crate::error::{Error, Result};
use crate::linops::{self, BlockName, Mat, StackedPoint, Vector};
use crate::ppa::{self, DegenerateCase, DrsState};
use crate::problems::{self, matrix_from_rows, ProblemSpec, SaddleCertificate};
use crate::proxlib::ExtReal;
use crate::schemes::{
    self, ConditionReport, EquivalentForm, Family, PreparedScheme, RecordFlags, SchemeId,
    SchemeSpec, SplitProblem, Trace,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_DEGENERATE: i32 = 2;
pub const EXIT_VIOLATION: i32 = 3;
pub const EXIT_USAGE: i32 = 64;
pub const EXIT_NUMERIC: i32 = 70;
pub const EXIT_IO: i32 = 74;

/// Largest trajectory deviation accepted by `compare` and `reduce`.
pub const LINK_TOL: f64 = 1e-9;
/// Environment variable overriding every seed of a config.
pub const SEED_ENV: &str = "SPLITKIT_SEED";

const START_STREAM: u64 = 0x5354_4152;

fn default_k() -> usize {
    1000
}

fn default_half_width() -> f64 {
    2.0
}

/// Starting point: `"zero"`, `"random"` (seeded) or explicit values in the scheme layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StartSpec {
    Named(String),
    Values(Vec<f64>),
}

impl Default for StartSpec {
    fn default() -> Self {
        StartSpec::Named("random".into())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub timestamps: bool,
    #[serde(default)]
    pub start: StartSpec,
    /// Seed of the random start; defaults to the problem seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Half-width of the gap boxes around the reference saddle.
    #[serde(default = "default_half_width")]
    pub gap_half_width: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            k: default_k(),
            timestamps: false,
            start: StartSpec::default(),
            seed: None,
            gap_half_width: default_half_width(),
        }
    }
}

/// Scheme section: unset metric parameters fall back to [`problems::suggest_metrics`];
/// scalars set `s·I`, the `*_matrix` fields set full matrices.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeConfig {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m_matrix: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega_matrix: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_matrix: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_matrix: Option<Vec<Vec<f64>>>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemSpec,
    pub scheme: SchemeConfig,
    #[serde(default)]
    pub run: RunConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Argument(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Io(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Argument(format!("config: {e}")))
    }

    /// Replaces the problem seed and the start seed.
    pub fn override_seed(&mut self, seed: u64) {
        self.problem.set_seed(seed);
        self.run.seed = Some(seed);
    }

    pub fn scheme_id(&self) -> Result<SchemeId> {
        self.scheme.id.parse()
    }

    pub fn spec_for(&self, problem: &SplitProblem) -> Result<SchemeSpec> {
        let id = self.scheme_id()?;
        let mut spec = problems::suggest_metrics(problem, id)?;
        let s = &self.scheme;
        let mt = &mut spec.metrics;
        let sized = |target: &Mat, v: f64| linops::scaled_identity(target.nrows(), v);
        if let Some(v) = s.mu {
            mt.m = sized(&mt.m, v);
        }
        if let Some(v) = s.gamma {
            mt.gamma = sized(&mt.gamma, v);
        }
        if let Some(v) = s.omega {
            let om = mt
                .omega
                .as_mut()
                .ok_or_else(|| Error::Argument(format!("{id} has no Ω")))?;
            *om = sized(om, v);
        }
        if let Some(v) = s.theta {
            let th = mt
                .theta
                .as_mut()
                .ok_or_else(|| Error::Argument(format!("{id} has no Θ")))?;
            *th = sized(th, v);
        }
        if let Some(rows) = &s.m_matrix {
            mt.m = matrix_from_rows(rows, "m_matrix")?;
        }
        if let Some(rows) = &s.gamma_matrix {
            mt.gamma = matrix_from_rows(rows, "gamma_matrix")?;
        }
        if let Some(rows) = &s.omega_matrix {
            if mt.omega.is_none() {
                return Err(Error::Argument(format!("{id} has no Ω")));
            }
            mt.omega = Some(matrix_from_rows(rows, "omega_matrix")?);
        }
        if let Some(rows) = &s.theta_matrix {
            if mt.theta.is_none() {
                return Err(Error::Argument(format!("{id} has no Θ")));
            }
            mt.theta = Some(matrix_from_rows(rows, "theta_matrix")?);
        }
        spec.validate(problem)?;
        Ok(spec)
    }

    fn start_seed(&self) -> u64 {
        self.run.seed.or(self.problem.seed()).unwrap_or(0)
    }

    /// Starting point in the layout of `family`.
    pub fn start_point(&self, problem: &SplitProblem, family: Family) -> Result<StackedPoint> {
        let layout = problem.layout(family)?;
        match &self.run.start {
            StartSpec::Named(name) if name == "zero" => Ok(StackedPoint::zeros(&layout)),
            StartSpec::Named(name) if name == "random" => {
                let mut rng = ChaCha20Rng::seed_from_u64(self.start_seed());
                rng.set_stream(START_STREAM);
                let vals = random_vector(&mut rng, layout.total());
                StackedPoint::new(layout, vals)
            }
            StartSpec::Named(other) => Err(Error::Argument(format!(
                "start must be \"zero\", \"random\" or a list of numbers, got \"{other}\""
            ))),
            StartSpec::Values(v) => StackedPoint::new(layout, Vector::from_vec(v.clone())),
        }
    }

    fn random_block(&self, len: usize, stream: u64) -> Vector {
        let mut rng = ChaCha20Rng::seed_from_u64(self.start_seed());
        rng.set_stream(START_STREAM + stream);
        random_vector(&mut rng, len)
    }
}

fn random_vector(rng: &mut ChaCha20Rng, n: usize) -> Vector {
    Vector::from_iterator(
        n,
        (0..n).map(|_| {
            let z: f64 = StandardNormal.sample(&mut *rng);
            z
        }),
    )
}

/// 17 significant digits, `inf`/`-inf`/`nan` for non-finite values.
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        }
    } else {
        format!("{x:.16e}")
    }
}

fn fmt_ext(x: ExtReal) -> String {
    match x {
        ExtReal::Finite(v) => fmt_f64(v),
        ExtReal::PosInf => "inf".into(),
        ExtReal::NegInf => "-inf".into(),
    }
}

/// JSON number with 17 significant digits; non-finite values become strings.
pub fn num(x: f64) -> Value {
    if x.is_finite() {
        serde_json::from_str(&fmt_f64(x)).unwrap_or(Value::Null)
    } else {
        Value::String(fmt_f64(x))
    }
}

fn num_opt(x: Option<f64>) -> Value {
    x.map_or(Value::Null, num)
}

pub fn report_json(rep: &ConditionReport) -> Value {
    json!({
        "scheme": rep.scheme.name(),
        "verdict": rep.verdict,
        "exit_code": rep.verdict.exit_code(),
        "strict_pass": rep.strict_pass,
        "degenerate_pass": rep.degenerate_pass,
        "entries": rep.entries.iter().map(|e| json!({
            "name": e.name,
            "relation": e.relation,
            "requirement": e.requirement,
            "margin": num_opt(e.margin),
            "tol": num(e.tol),
            "strict": e.strict,
            "weak": e.weak,
        })).collect::<Vec<_>>(),
        "notes": rep.notes,
    })
}

fn certificate_json(cert: &RateCertificate) -> Value {
    json!({
        "passed": cert.passed,
        "pointwise_constant": num_opt(cert.pointwise_constant),
        "checks": cert.checks.iter().map(|c| json!({
            "name": c.name,
            "evaluated": c.evaluated,
            "violations": c.violations,
            "worst_margin": if c.evaluated > 0 { num(c.worst_margin) } else { Value::Null },
            "first_violation": c.first_violation,
            "skipped": c.skipped,
        })).collect::<Vec<_>>(),
    })
}

fn reference_json(cert: &SaddleCertificate) -> Value {
    json!({
        "method": cert.method,
        "iterations": cert.iterations,
        "tol": num(cert.tol),
        "max_residual": num(cert.max_residual()),
    })
}

fn residuals_json(res: &[(String, f64)]) -> Value {
    Value::Object(res.iter().map(|(k, v)| (k.clone(), num(*v))).collect())
}

/// Result of a `compare` link.
#[derive(Clone, Debug, PartialEq)]
pub struct LinkReport {
    pub link: String,
    pub steps: usize,
    pub deviation: f64,
    pub detail: String,
}

impl LinkReport {
    pub fn passed(&self) -> bool {
        self.deviation <= LINK_TOL
    }
}

/// Catalogued links between a scheme and an equivalent or reduced iteration.
pub const LINKS: [&str; 9] = [
    "self",
    "prop1",
    "prop2",
    "pdhg",
    "arrow-hurwicz",
    "admm-drs",
    "admm-reduced",
    "lag2-reduced",
    "pds1-drs",
];

/// Largest `‖u_k - v_k‖∞` over paired trajectories.
pub fn trajectory_deviation(a: &[Vector], b: &[Vector]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!(
            "trajectories have {} and {} points",
            a.len(),
            b.len()
        )));
    }
    let mut worst: f64 = 0.0;
    for (u, v) in a.iter().zip(b) {
        if u.len() != v.len() {
            return Err(Error::Dimension("trajectory points differ in size".into()));
        }
        let d = (u - v).amax();
        worst = if d.is_nan() {
            f64::INFINITY
        } else {
            worst.max(d)
        };
    }
    Ok(worst)
}

fn values(points: &[StackedPoint]) -> Vec<Vector> {
    points.iter().map(|p| p.values().clone()).collect()
}

fn equivalent_link(
    problem: &SplitProblem,
    spec: &SchemeSpec,
    form: EquivalentForm,
    c0: &StackedPoint,
    k: usize,
) -> Result<(f64, String)> {
    let eq = schemes::require_equivalence(problem, spec, form)?;
    let trace = schemes::run(problem, spec, c0, k, RecordFlags::default())?;
    let other = schemes::run_equivalent(problem, spec, eq.form, c0, k)?;
    let dev = trajectory_deviation(&values(&trace.states), &values(&other))?;
    Ok((
        dev,
        format!("{} ({}); {}", eq.form.name(), eq.parameters, eq.state_link),
    ))
}

fn reduced_link(
    problem: &SplitProblem,
    spec: &SchemeSpec,
    case: DegenerateCase,
    c0: &StackedPoint,
    k: usize,
) -> Result<(f64, String)> {
    let red = ppa::reduce(problem, spec, case)?;
    let v0 = red.project(c0.values());
    let reduced = red.run(&v0, k)?;
    let trace = schemes::run(problem, spec, c0, k, RecordFlags::default())?;
    let projected: Vec<Vector> = trace
        .states
        .iter()
        .map(|c| red.project(c.values()))
        .collect();
    let mut dev = trajectory_deviation(&projected, &reduced)?;
    let composition: Option<fn(&SplitProblem, &Vector) -> Result<Vector>> = match case {
        DegenerateCase::Lag2Drs => Some(ppa::lag2_drs_composition),
        DegenerateCase::Pds1Drs => Some(ppa::pds1_drs_composition),
        _ => None,
    };
    if let Some(step) = composition {
        let mut v = v0;
        let mut seq = vec![v.clone()];
        for _ in 0..k {
            v = step(problem, &v)?;
            seq.push(v.clone());
        }
        dev = dev.max(trajectory_deviation(&seq, &reduced)?);
    }
    Ok((
        dev,
        format!("{} (rank {}; {})", case.name(), red.rank, red.state_link),
    ))
}

fn admm_gamma(problem: &SplitProblem, spec: &SchemeSpec) -> Result<f64> {
    match schemes::require_equivalence(problem, spec, EquivalentForm::Admm { gamma: 0.0 })?.form {
        EquivalentForm::Admm { gamma } => Ok(gamma),
        _ => unreachable!(),
    }
}

/// Runs a catalogued link for `k` steps and reports the largest trajectory deviation.
/// `start` supplies the random blocks the link needs.
pub fn compare_link(
    problem: &SplitProblem,
    spec: &SchemeSpec,
    link: &str,
    k: usize,
    start: &dyn Fn(usize, u64) -> Vector,
) -> Result<LinkReport> {
    if k == 0 {
        return Err(Error::Argument("k must be >= 1".into()));
    }
    let family = spec.id.family();
    let layout = problem.layout(family)?;
    let c0 = StackedPoint::new(layout.clone(), start(layout.total(), 0))?;
    let (deviation, detail) = match link {
        "self" => {
            let a = schemes::run(problem, spec, &c0, k, RecordFlags::default())?;
            let b = schemes::run(problem, spec, &c0, k, RecordFlags::default())?;
            (
                trajectory_deviation(&values(&a.states), &values(&b.states))?,
                "repeat run".to_string(),
            )
        }
        "prop1" => equivalent_link(problem, spec, EquivalentForm::ConjugateSplit, &c0, k)?,
        "prop2" => equivalent_link(problem, spec, EquivalentForm::ExtrapolatedDual, &c0, k)?,
        "pdhg" => equivalent_link(
            problem,
            spec,
            EquivalentForm::Pdhg {
                tau: 0.0,
                gamma: 0.0,
            },
            &c0,
            k,
        )?,
        "arrow-hurwicz" => equivalent_link(problem, spec, EquivalentForm::ArrowHurwicz, &c0, k)?,
        "admm-drs" | "admm-reduced" => {
            let gamma = admm_gamma(problem, spec)?;
            let z0 = start(problem.m1(), 1);
            let x0 = start(problem.n(), 2);
            let c0 = ppa::admm_start_from_z(problem, &z0, gamma, &x0)?;
            let trace = schemes::run(problem, spec, &c0, k, RecordFlags::default())?;
            let admm_z: Vec<Vector> = trace
                .states
                .iter()
                .map(|c| Ok(c.block(BlockName::P)? + c.block(BlockName::A)? * gamma))
                .collect::<Result<_>>()?;
            if link == "admm-drs" {
                let mut st = DrsState::new(z0, gamma)?;
                let mut zs = vec![st.z.clone()];
                for _ in 0..k {
                    st = ppa::drs_step(problem, &st)?;
                    zs.push(st.z.clone());
                }
                (
                    trajectory_deviation(&admm_z, &zs)?,
                    format!("ADMM z = p + γa against Douglas-Rachford z, γ = {gamma}"),
                )
            } else {
                let red = ppa::reduce(problem, spec, DegenerateCase::AdmmReduced)?;
                let vs = red.run(&(&z0 / gamma.sqrt()), k)?;
                let scaled: Vec<Vector> = admm_z.iter().map(|z| z / gamma.sqrt()).collect();
                (
                    trajectory_deviation(&scaled, &vs)?,
                    format!("rank {}; {}", red.rank, red.state_link),
                )
            }
        }
        "lag2-reduced" => {
            let case = match ppa::detect_case(problem, spec) {
                Some(DegenerateCase::Lag2Drs) => DegenerateCase::Lag2Drs,
                _ => DegenerateCase::Lag2Reduced,
            };
            reduced_link(problem, spec, case, &c0, k)?
        }
        "pds1-drs" => reduced_link(problem, spec, DegenerateCase::Pds1Drs, &c0, k)?,
        other => {
            return Err(Error::Argument(format!(
                "unknown link '{other}' (known: {})",
                LINKS.join(", ")
            )))
        }
    };
    Ok(LinkReport {
        link: link.to_string(),
        steps: k,
        deviation,
        detail,
    })
}

/// Link name of a degenerate case, for `reduce`.
fn case_link(case: DegenerateCase) -> &'static str {
    match case {
        DegenerateCase::Lag2Reduced | DegenerateCase::Lag2Drs => "lag2-reduced",
        DegenerateCase::AdmmReduced => "admm-reduced",
        DegenerateCase::Pds1Drs => "pds1-drs",
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "splitkit",
    version,
    about = "Operator-splitting schemes as proximal point iterations"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Experiment config (TOML); repeat to sweep several configs
    #[arg(long = "config", value_name = "PATH", required = true)]
    config: Vec<PathBuf>,
    /// Output directory
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Iteration count, overriding the config
    #[arg(long, value_name = "INT")]
    k: Option<usize>,
    /// Run even if the convergence conditions fail
    #[arg(long)]
    override_conditions: bool,
    /// Configs processed concurrently
    #[arg(long, value_name = "INT", default_value_t = 1)]
    jobs: usize,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Evaluate the convergence conditions of the configured scheme
    Check(Common),
    /// Run the scheme and write trace.csv and summary.json
    Run(Common),
    /// Compare a scheme with an equivalent or reduced iteration
    Compare {
        #[command(flatten)]
        common: Common,
        /// One of: self, prop1, prop2, pdhg, arrow-hurwicz, admm-drs, admm-reduced, lag2-reduced, pds1-drs
        #[arg(long)]
        link: String,
    },
    /// Run the degenerate reduction of the configured scheme
    Reduce {
        #[command(flatten)]
        common: Common,
        /// Degenerate case (lag2-reduced, lag2-drs, admm-reduced, pds1-drs); detected if omitted
        #[arg(long)]
        case: Option<String>,
    },
    /// Describe the problem, reference, PPA matrices, conditions and applicable forms
    Report(Common),
}

/// Outcome of one config: exit code plus the text destined for stdout/stderr.
struct JobOutput {
    code: i32,
    stdout: String,
    stderr: String,
}

fn error_code(e: &Error) -> i32 {
    match e {
        Error::Argument(_) | Error::UnknownScheme(_) | Error::Shape(_) | Error::Dimension(_) => {
            EXIT_USAGE
        }
        Error::Precondition(_) | Error::Unsupported(_) => EXIT_FAIL,
        Error::Io(_) => EXIT_IO,
        _ => EXIT_NUMERIC,
    }
}

fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Ok(raw) = std::env::var(SEED_ENV) {
        let seed = raw.trim().parse::<u64>().map_err(|_| {
            Error::Argument(format!(
                "{SEED_ENV} must be an unsigned integer, got '{raw}'"
            ))
        })?;
        cfg.override_seed(seed);
    }
    Ok(cfg)
}

fn write_file(path: &Path, contents: &str) -> std::result::Result<(), String> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| format!("cannot create {}: {e}", dir.display()))?;
    }
    fs::write(path, contents).map_err(|e| format!("cannot write {}: {e}", path.display()))
}

fn pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

struct Ctx<'a> {
    common: &'a Common,
    /// Output directory of this config, if any.
    out: Option<PathBuf>,
}

fn out_dir(common: &Common, cfg: &ExperimentConfig, path: &Path) -> Option<PathBuf> {
    let base = common.out.clone().or_else(|| cfg.output.dir.clone())?;
    if common.config.len() > 1 {
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "config".into());
        Some(base.join(stem))
    } else {
        Some(base)
    }
}

fn cmd_check(cfg: &ExperimentConfig, ctx: &Ctx, out: &mut JobOutput) -> Result<()> {
    let problem = cfg.problem.build_problem()?;
    let spec = cfg.spec_for(&problem)?;
    let rep = schemes::check_conditions(&problem, &spec)?;
    let verdict = match rep.verdict {
        schemes::Verdict::StrictPass => "strict pass",
        schemes::Verdict::DegeneratePass => "degenerate pass",
        schemes::Verdict::Fail => "fail",
    };
    let _ = writeln!(out.stdout, "{}: {verdict}", rep.scheme);
    for e in &rep.entries {
        let margin = e.margin.map_or("n/a".to_string(), fmt_f64);
        let status = if e.strict {
            "ok"
        } else if e.weak {
            "weak"
        } else {
            "FAIL"
        };
        let _ = writeln!(
            out.stdout,
            "  {:<14} {:<28} margin {margin:>24}  {status}",
            e.name, e.relation
        );
    }
    for n in &rep.notes {
        let _ = writeln!(out.stdout, "  note: {n}");
    }
    if let Some(dir) = &ctx.out {
        write_file(&dir.join("check.json"), &pretty(&report_json(&rep)))
            .map_err(Error::Argument)?;
    }
    out.code = rep.verdict.exit_code();
    Ok(())
}

/// Per-row derived columns of a run.
struct RunSeries {
    trace: Trace,
    cert: Option<RateCertificate>,
    gaps: Option<GapSeries>,
    gap_note: Option<String>,
}

fn cmd_run(cfg: &ExperimentConfig, ctx: &Ctx, out: &mut JobOutput) -> Result<()> {
    let k = ctx.common.k.unwrap_or(cfg.run.k);
    if k == 0 {
        return Err(Error::Argument("k must be >= 1".into()));
    }
    let (problem, reference) = cfg.problem.build()?;
    let spec = cfg.spec_for(&problem)?;
    let rep = schemes::check_conditions(&problem, &spec)?;
    if rep.verdict == schemes::Verdict::Fail && !ctx.common.override_conditions {
        let _ = writeln!(
            out.stderr,
            "{}: convergence conditions fail; pass --override-conditions to run anyway",
            spec.id
        );
        out.code = EXIT_FAIL;
        return Ok(());
    }
    let family = spec.id.family();
    let prepared = PreparedScheme::new(&problem, &spec)?;
    let c0 = cfg.start_point(&problem, family)?;
    let trace = prepared.run(
        &c0,
        k,
        RecordFlags {
            timestamps: cfg.run.timestamps,
        },
    )?;
    let c_star = match &reference {
        Some(r) => Some(r.point_for(&problem, family)?),
        None => None,
    };
    let cert = diagnostics::rate_certificate(&problem, &trace, prepared.ppa(), c_star.as_ref())?;
    let (gaps, gap_note) = match &c_star {
        Some(cs) => {
            let boxes = GapBoxes::around(cs, cfg.run.gap_half_width)?;
            match diagnostics::gap_series(&problem, &trace, prepared.ppa(), &boxes) {
                Ok(g) => (Some(g), None),
                Err(e @ (Error::Unsupported(_) | Error::Domain(_))) => (None, Some(e.to_string())),
                Err(e) => return Err(e),
            }
        }
        None => (None, Some("no reference saddle point".into())),
    };
    let series = RunSeries {
        trace,
        cert: Some(cert),
        gaps,
        gap_note,
    };
    let dir = ctx
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("splitkit-out"));
    let csv_text = trace_csv(&problem, &series)?;
    write_file(&dir.join("trace.csv"), &csv_text)
        .map_err(|e| Error::Io(e.to_string()))?;

    let last = series.trace.states.last().expect("nonempty trace");
    let final_full = full_point(&problem, family, last)?;
    let final_residuals = problems::kkt_residuals(&problem, &final_full, 1e-9)?;
    let cert = series.cert.as_ref().expect("certificate");
    let gap_violations = series.gaps.as_ref().map_or(0, |g| {
        g.slack()
            .iter()
            .zip(&g.bound)
            .filter(|(s, b)| !(**s >= -diagnostics::ERGODIC_TOL * (1.0 + b.abs())))
            .count()
    });
    let violated = !cert.passed || gap_violations > 0;
    let summary = json!({
        "scheme": spec.id.name(),
        "problem": serde_json::to_value(&cfg.problem).unwrap_or(Value::Null),
        "k": k,
        "conditions": report_json(&rep),
        "reference": reference.as_ref().map(reference_json),
        "certificate": certificate_json(cert),
        "gap": match &series.gaps {
            Some(g) => json!({
                "half_width": num(cfg.run.gap_half_width),
                "sup_sqnorm": num(g.sup.value),
                "exact_sup": g.sup.exact,
                "violations": gap_violations,
                "worst_slack": num(g.slack().into_iter().fold(f64::INFINITY, f64::min)),
            }),
            None => json!({ "skipped": series.gap_note }),
        },
        "final": {
            "dist_s": cert.dist_s.last().copied().map_or(Value::Null, num),
            "step_s": cert.step_s.last().copied().map_or(Value::Null, num),
            "kkt_residuals": residuals_json(&final_residuals),
        },
        "violated": violated,
    });
    write_file(&dir.join("summary.json"), &pretty(&summary))
        .map_err(|e| Error::Io(e.to_string()))?;
    let _ = writeln!(
        out.stdout,
        "{}: {k} steps, final ‖c - c⋆‖_S = {}, certificate {}",
        spec.id,
        cert.dist_s.last().copied().map_or("n/a".into(), fmt_f64),
        if violated { "VIOLATED" } else { "ok" }
    );
    let _ = writeln!(out.stdout, "  wrote {}", dir.display());
    out.code = if violated { EXIT_VIOLATION } else { EXIT_OK };
    Ok(())
}

/// `(x, a, p)` or `(x, a, b, p)` from a family state; PDS points get `a = Ax`.
fn full_point(problem: &SplitProblem, family: Family, c: &StackedPoint) -> Result<StackedPoint> {
    let layout = problem.layout(if problem.has_third() {
        Family::Mix
    } else {
        Family::Lag
    })?;
    let mut out = StackedPoint::zeros(&layout);
    let x = c.block(BlockName::X)?;
    out.set_block(BlockName::X, &x)?;
    out.set_block(BlockName::P, &c.block(BlockName::P)?)?;
    match family {
        Family::Pds => out.set_block(BlockName::A, &(&problem.a * &x))?,
        Family::Lag => out.set_block(BlockName::A, &c.block(BlockName::A)?)?,
        Family::Mix => {
            out.set_block(BlockName::A, &c.block(BlockName::A)?)?;
            out.set_block(BlockName::B, &c.block(BlockName::B)?)?;
        }
    }
    Ok(out)
}

fn trace_csv(problem: &SplitProblem, series: &RunSeries) -> Result<String> {
    let trace = &series.trace;
    let layout = trace.states[0].layout().clone();
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::CRLF)
        .from_writer(Vec::new());
    let mut header = vec!["k".to_string()];
    for (name, dim) in layout.entries() {
        for i in 0..*dim {
            header.push(format!("{}[{i}]", name.as_str()));
        }
    }
    header.extend(["dist_s", "step_s", "pi_ergodic", "gap_slack"].map(String::from));
    let io = |e: csv::Error| Error::Io(e.to_string());
    w.write_record(&header).map_err(io)?;
    let cert = series.cert.as_ref();
    let slack = series.gaps.as_ref().map(|g| g.slack());
    for (k, state) in trace.states.iter().enumerate() {
        let mut row = vec![k.to_string()];
        row.extend(state.values().iter().map(|v| fmt_f64(*v)));
        let pick = |v: Option<&Vec<f64>>, i: Option<usize>| -> String {
            match (v, i) {
                (Some(v), Some(i)) if i < v.len() => fmt_f64(v[i]),
                _ => String::new(),
            }
        };
        row.push(pick(cert.map(|c| &c.dist_s), Some(k)));
        row.push(pick(cert.map(|c| &c.step_s), Some(k)));
        row.push(match (cert, k.checked_sub(1)) {
            (Some(c), Some(i)) if i < c.pi_ergodic.len() => fmt_ext(c.pi_ergodic[i]),
            _ => String::new(),
        });
        row.push(pick(slack.as_ref(), k.checked_sub(1)));
        w.write_record(&row).map_err(io)?;
    }
    let _ = problem;
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Io(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Io(e.to_string()))
}

fn link_start(
    cfg: &ExperimentConfig,
    family_point: Option<StackedPoint>,
) -> impl Fn(usize, u64) -> Vector + '_ {
    move |len, stream| {
        if stream == 0 {
            if let Some(p) = &family_point {
                if p.values().len() == len {
                    return p.values().clone();
                }
            }
        }
        cfg.random_block(len, stream)
    }
}

fn cmd_compare(
    cfgs: &[ExperimentConfig],
    link: &str,
    ctx: &Ctx,
    out: &mut JobOutput,
) -> Result<()> {
    if !LINKS.contains(&link) {
        return Err(Error::Argument(format!(
            "unknown link '{link}' (known: {})",
            LINKS.join(", ")
        )));
    }
    let a = &cfgs[0];
    let k = ctx.common.k.unwrap_or(a.run.k);
    if k == 0 {
        return Err(Error::Argument("k must be >= 1".into()));
    }
    let problem = a.problem.build_problem()?;
    let spec = a.spec_for(&problem)?;
    let report = match cfgs.get(1) {
        Some(b) => {
            let problem_b = b.problem.build_problem()?;
            if problem_b != problem {
                return Err(Error::Argument(
                    "compared configs describe different problems".into(),
                ));
            }
            if link == "self" {
                let spec_b = b.spec_for(&problem_b)?;
                let fa = spec.id.family();
                let ta = schemes::run(
                    &problem,
                    &spec,
                    &a.start_point(&problem, fa)?,
                    k,
                    RecordFlags::default(),
                )?;
                let tb = schemes::run(
                    &problem,
                    &spec_b,
                    &b.start_point(&problem, spec_b.id.family())?,
                    k,
                    RecordFlags::default(),
                )?;
                LinkReport {
                    link: link.into(),
                    steps: k,
                    deviation: trajectory_deviation(&values(&ta.states), &values(&tb.states))?,
                    detail: format!("{} against {}", spec.id, spec_b.id),
                }
            } else {
                compare_with_start(a, &problem, &spec, link, k)?
            }
        }
        None => compare_with_start(a, &problem, &spec, link, k)?,
    };
    let _ = writeln!(
        out.stdout,
        "{}: {} over {} steps, deviation {} ({})",
        spec.id,
        report.link,
        report.steps,
        fmt_f64(report.deviation),
        if report.passed() {
            "ok"
        } else {
            "ABOVE TOLERANCE"
        }
    );
    let _ = writeln!(out.stdout, "  {}", report.detail);
    if let Some(dir) = &ctx.out {
        let v = json!({
            "scheme": spec.id.name(),
            "link": report.link,
            "k": report.steps,
            "deviation": num(report.deviation),
            "tolerance": num(LINK_TOL),
            "passed": report.passed(),
            "detail": report.detail,
        });
        write_file(&dir.join("compare.json"), &pretty(&v))
            .map_err(|e| Error::Io(e.to_string()))?;
    }
    out.code = if report.passed() { EXIT_OK } else { EXIT_FAIL };
    Ok(())
}

fn compare_with_start(
    cfg: &ExperimentConfig,
    problem: &SplitProblem,
    spec: &SchemeSpec,
    link: &str,
    k: usize,
) -> Result<LinkReport> {
    let start = cfg.start_point(problem, spec.id.family())?;
    let f = link_start(cfg, Some(start));
    compare_link(problem, spec, link, k, &f)
}

fn cmd_reduce(
    cfg: &ExperimentConfig,
    case: Option<&str>,
    ctx: &Ctx,
    out: &mut JobOutput,
) -> Result<()> {
    let k = ctx.common.k.unwrap_or(cfg.run.k);
    let problem = cfg.problem.build_problem()?;
    let spec = cfg.spec_for(&problem)?;
    let case = match case {
        Some(name) => DegenerateCase::parse(name).map_err(|_| {
            Error::Argument(format!(
                "unknown case '{name}' (known: {})",
                DegenerateCase::ALL.map(|c| c.name()).join(", ")
            ))
        })?,
        None => ppa::detect_case(&problem, &spec).ok_or_else(|| {
            Error::Unsupported(format!("{} matches no catalogued degenerate case", spec.id))
        })?,
    };
    let red = ppa::reduce(&problem, &spec, case)?;
    let report = compare_with_start(cfg, &problem, &spec, case_link(case), k)?;
    let _ = writeln!(
        out.stdout,
        "{}: {} reduces to rank {} ({})",
        spec.id,
        case.name(),
        red.rank,
        red.state_link
    );
    let _ = writeln!(
        out.stdout,
        "  deviation over {k} steps {} ({})",
        fmt_f64(report.deviation),
        if report.passed() {
            "ok"
        } else {
            "ABOVE TOLERANCE"
        }
    );
    if let Some(dir) = &ctx.out {
        let v = json!({
            "scheme": spec.id.name(),
            "case": case,
            "rank": red.rank,
            "state_link": red.state_link,
            "k": k,
            "deviation": num(report.deviation),
            "passed": report.passed(),
        });
        write_file(&dir.join("reduce.json"), &pretty(&v))
            .map_err(|e| Error::Io(e.to_string()))?;
    }
    out.code = if report.passed() { EXIT_OK } else { EXIT_FAIL };
    Ok(())
}

fn spectrum_json(m: &Mat) -> Value {
    match linops::spectral_bounds(m) {
        Ok((lo, hi)) => json!({ "lambda_min": num(lo), "lambda_max": num(hi) }),
        Err(e) => json!({ "error": e.to_string() }),
    }
}

fn cmd_report(cfg: &ExperimentConfig, ctx: &Ctx, out: &mut JobOutput) -> Result<()> {
    let (problem, reference) = cfg.problem.build()?;
    let spec = cfg.spec_for(&problem)?;
    let rep = schemes::check_conditions(&problem, &spec)?;
    let ppa_m = schemes::build_ppa(&problem, &spec)?;
    let forms = schemes::equivalent_form(&problem, &spec)?;
    let case = ppa::detect_case(&problem, &spec);
    let v = json!({
        "scheme": spec.id.name(),
        "problem": serde_json::to_value(ProblemSpec::explicit(&problem)).unwrap_or(Value::Null),
        "dimensions": { "n": problem.n(), "m1": problem.m1(), "m2": problem.m2() },
        "reference": reference.as_ref().map(|r| {
            let mut v = reference_json(r);
            v["point"] = Value::Array(r.point.values().iter().map(|x| num(*x)).collect());
            v
        }),
        "ppa": {
            "relaxation_is_identity": spec.id.relaxation_is_identity(),
            "S": spectrum_json(&linops::symmetric_part(ppa_m.s.dense())),
            "G": spectrum_json(&linops::symmetric_part(ppa_m.g.dense())),
            "H": spectrum_json(&linops::symmetric_part(&ppa_m.h())),
        },
        "conditions": report_json(&rep),
        "equivalent_forms": forms.iter().map(|e| json!({
            "form": e.form.name(),
            "parameters": e.parameters,
            "state_link": e.state_link,
        })).collect::<Vec<_>>(),
        "degenerate_case": case.map(|c| c.name()),
    });
    let text = pretty(&v);
    if let Some(dir) = &ctx.out {
        write_file(&dir.join("report.json"), &text)
            .map_err(|e| Error::Io(e.to_string()))?;
    }
    out.stdout.push_str(&text);
    out.code = EXIT_OK;
    Ok(())
}

fn run_job(command: &Command, path: &Path, all: &[PathBuf]) -> JobOutput {
    let mut out = JobOutput {
        code: EXIT_OK,
        stdout: String::new(),
        stderr: String::new(),
    };
    let common = match command {
        Command::Check(c) | Command::Run(c) | Command::Report(c) => c,
        Command::Compare { common, .. } | Command::Reduce { common, .. } => common,
    };
    let cfg = match load_config(path) {
        Ok(c) => c,
        Err(e) => {
            out.code = error_code(&e);
            out.stderr = format!("error: {e}\n");
            return out;
        }
    };
    let ctx = Ctx {
        common,
        out: out_dir(common, &cfg, path),
    };
    let res = match command {
        Command::Check(_) => cmd_check(&cfg, &ctx, &mut out),
        Command::Run(_) => cmd_run(&cfg, &ctx, &mut out),
        Command::Report(_) => cmd_report(&cfg, &ctx, &mut out),
        Command::Reduce { case, .. } => cmd_reduce(&cfg, case.as_deref(), &ctx, &mut out),
        Command::Compare { link, .. } => {
            let mut cfgs = vec![cfg];
            for p in all.iter().skip(1) {
                match load_config(p) {
                    Ok(c) => cfgs.push(c),
                    Err(e) => {
                        out.code = error_code(&e);
                        out.stderr = format!("error: {e}\n");
                        return out;
                    }
                }
            }
            cmd_compare(&cfgs, link, &ctx, &mut out)
        }
    };
    if let Err(e) = res {
        out.code = error_code(&e);
        let _ = writeln!(out.stderr, "error: {e}");
    }
    out
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let common = match &cli.command {
        Command::Check(c) | Command::Run(c) | Command::Report(c) => c.clone(),
        Command::Compare { common, .. } | Command::Reduce { common, .. } => common.clone(),
    };
    if common.jobs == 0 {
        eprintln!("error: --jobs must be >= 1");
        return EXIT_USAGE;
    }
    // compare takes its configs as a pair; everything else sweeps them
    let paths: Vec<PathBuf> = match &cli.command {
        Command::Compare { .. } => {
            if common.config.len() > 2 {
                eprintln!("error: compare takes one or two --config values");
                return EXIT_USAGE;
            }
            vec![common.config[0].clone()]
        }
        _ => common.config.clone(),
    };
    let results: Vec<Mutex<Option<JobOutput>>> = paths.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = common.jobs.min(paths.len()).max(1);
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= paths.len() {
                    break;
                }
                let r = run_job(&cli.command, &paths[i], &common.config);
                *results[i].lock().expect("result slot") = Some(r);
            });
        }
    });
    let mut code = EXIT_OK;
    for (i, slot) in results.into_iter().enumerate() {
        let r = slot.into_inner().expect("result slot").expect("job ran");
        if paths.len() > 1 {
            println!("== {}", paths[i].display());
        }
        print!("{}", r.stdout);
        eprint!("{}", r.stderr);
        code = code.max(r.code);
    }
    code
}
