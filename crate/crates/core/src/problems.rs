//! Seeded test-problem factories with independently computed reference saddle points.
//!
//! Randomness comes from `ChaCha20Rng` seeded with the 64-bit problem seed; every factory
//! draws from its own stream (`set_stream(tag)`), so two factories with the same seed are
//! independent and each is reproducible bit for bit.

use nalgebra::SVD;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linops::{self, BlockName, Mat, StackedPoint, Vector};
use crate::proxlib::{FunctionKind, ProxFunction};
use crate::schemes::{self, Family, Metrics, PreparedScheme, SchemeId, SchemeSpec, SplitProblem};

/// Default bound on every KKT residual of an emitted certificate.
pub const CERTIFICATE_TOL: f64 = 1e-10;
/// Looser bound accepted for long-run references that could not be polished.
pub const LONG_RUN_TOL: f64 = 1e-8;
/// Kink detection slack used when reading off active sets from an approximate saddle.
const ACTIVE_SET_TOL: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OracleMethod {
    ClosedForm,
    LongRun,
    LinearKkt,
}

impl OracleMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            OracleMethod::ClosedForm => "closed-form",
            OracleMethod::LongRun => "long-run",
            OracleMethod::LinearKkt => "linear-KKT",
        }
    }
}

/// Reference saddle point with its KKT residuals.
#[derive(Clone, Debug, PartialEq)]
pub struct SaddleCertificate {
    /// `(x, a, p)` or `(x, a, b, p)` for three-function problems.
    pub point: StackedPoint,
    pub residuals: Vec<(String, f64)>,
    pub method: OracleMethod,
    pub tol: f64,
    /// Iterations spent by the long-run oracle (0 otherwise).
    pub iterations: usize,
}

impl SaddleCertificate {
    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().map(|r| r.1).fold(0.0, f64::max)
    }

    pub fn block(&self, name: BlockName) -> Result<Vector> {
        self.point.block(name)
    }

    /// The reference in the stacked layout of a family.
    pub fn point_for(&self, problem: &SplitProblem, family: Family) -> Result<StackedPoint> {
        let layout = problem.layout(family)?;
        let mut out = StackedPoint::zeros(&layout);
        for (name, _) in layout.entries() {
            out.set_block(*name, &self.point.block(*name)?)?;
        }
        Ok(out)
    }

    /// Certificate for a point supplied by hand; fails if its residuals exceed `tol`.
    pub fn closed_form(problem: &SplitProblem, point: StackedPoint, tol: f64) -> Result<Self> {
        let residuals = kkt_residuals(problem, &point, 1e-12)?;
        Self::checked(point, residuals, OracleMethod::ClosedForm, tol, 0)
    }

    fn checked(
        point: StackedPoint,
        residuals: Vec<(String, f64)>,
        method: OracleMethod,
        tol: f64,
        iterations: usize,
    ) -> Result<Self> {
        let cert = Self {
            point,
            residuals,
            method,
            tol,
            iterations,
        };
        let worst = cert.max_residual();
        if !(worst <= tol) {
            return Err(Error::Oracle(format!(
                "{} reference has KKT residual {worst:.3e} > {tol:.1e}",
                method.as_str()
            )));
        }
        Ok(cert)
    }
}

fn full_layout(problem: &SplitProblem) -> Result<linops::BlockLayout> {
    problem.layout(if problem.has_third() {
        Family::Mix
    } else {
        Family::Lag
    })
}

/// Distance from `y` to `∂φ(u)`, or the distance from `u` to `dom φ` when `u` lies outside.
fn subgradient_gap(func: &ProxFunction, u: &Vector, y: &Vector, kink_tol: f64) -> f64 {
    let (lo, hi) = func.domain_bounds();
    let outside = (0..u.len())
        .map(|i| (lo[i] - u[i]).max(u[i] - hi[i]).max(0.0))
        .fold(0.0, f64::max);
    match func.subdiff_box_tol(u, kink_tol) {
        Ok(b) => b.distance(y),
        Err(_) => outside.max(f64::MIN_POSITIVE),
    }
}

/// `dist(-Aᵀp - Bᵀb, ∂f(x))`, `dist(p, ∂g(a))`, `dist(b, ∂h(Bx))` and `‖a - Ax‖∞` at a full point.
pub fn kkt_residuals(
    problem: &SplitProblem,
    c: &StackedPoint,
    kink_tol: f64,
) -> Result<Vec<(String, f64)>> {
    let x = c.block(BlockName::X)?;
    let a = c.block(BlockName::A)?;
    let p = c.block(BlockName::P)?;
    let mut dual = -(problem.a.transpose() * &p);
    let mut out = Vec::new();
    let mut h_term = None;
    if problem.has_third() {
        let (h, bm) = problem.h_b()?;
        let b = c.block(BlockName::B)?;
        dual -= bm.transpose() * &b;
        h_term = Some(subgradient_gap(h, &(bm * &x), &b, kink_tol));
    }
    out.push((
        "stationarity".to_string(),
        subgradient_gap(&problem.f, &x, &dual, kink_tol),
    ));
    out.push((
        "dual_g".to_string(),
        subgradient_gap(&problem.g, &a, &p, kink_tol),
    ));
    if let Some(r) = h_term {
        out.push(("dual_h".to_string(), r));
    }
    out.push(("link".to_string(), (&a - &problem.a * &x).amax()));
    Ok(out)
}

enum Piece {
    Fixed(f64),
    Slope(f64),
}

/// Active piece of a nonsmooth separable coordinate at `u`.
fn piece(func: &ProxFunction, i: usize, u: f64) -> Result<Piece> {
    let t = func.tilt().map(|t| t[i]).unwrap_or(0.0);
    let near = |k: f64| (u - k).abs() <= ACTIVE_SET_TOL * (1.0 + k.abs());
    match func.kind() {
        FunctionKind::L1 { weight } => Ok(if near(0.0) {
            Piece::Fixed(0.0)
        } else {
            Piece::Slope(weight * u.signum() + t)
        }),
        FunctionKind::Box { lo, hi } => Ok(if near(lo[i]) {
            Piece::Fixed(lo[i])
        } else if near(hi[i]) {
            Piece::Fixed(hi[i])
        } else {
            Piece::Slope(t)
        }),
        _ => Err(Error::Unsupported(
            "active pieces exist only for l1 and box kinds".into(),
        )),
    }
}

/// Solves the KKT system restricted to the active pieces identified at `c0`, moving
/// `(x, duals)` by the least-norm correction. Exact for all-smooth problems.
fn polish(problem: &SplitProblem, c0: &StackedPoint) -> Result<StackedPoint> {
    let n = problem.n();
    let x0 = c0.block(BlockName::X)?;
    // constraint blocks: (function, linear map, dual block name)
    let mut cons: Vec<(&ProxFunction, &Mat, BlockName)> =
        vec![(&problem.g, &problem.a, BlockName::P)];
    if problem.has_third() {
        let (h, bm) = problem.h_b()?;
        cons.push((h, bm, BlockName::B));
    }
    let dims: Vec<usize> = cons.iter().map(|c| c.1.nrows()).collect();
    let total = n + dims.iter().sum::<usize>();
    let mut offsets = Vec::new();
    let mut off = n;
    for d in &dims {
        offsets.push(off);
        off += d;
    }
    let mut z0 = Vector::zeros(total);
    z0.rows_mut(0, n).copy_from(&x0);
    for (j, c) in cons.iter().enumerate() {
        z0.rows_mut(offsets[j], dims[j]).copy_from(&c0.block(c.2)?);
    }
    let mut jac = Mat::zeros(total, total);
    let mut rhs = Vector::zeros(total);
    // stationarity in x
    let mut lt = Mat::zeros(n, total - n);
    for (j, c) in cons.iter().enumerate() {
        lt.view_mut((0, offsets[j] - n), (n, dims[j]))
            .copy_from(&c.1.transpose());
    }
    match problem.f.affine_gradient() {
        Some((h, cvec)) => {
            jac.view_mut((0, 0), (n, n)).copy_from(&h);
            jac.view_mut((0, n), (n, total - n)).copy_from(&lt);
            rhs.rows_mut(0, n).copy_from(&(-cvec));
        }
        None => {
            for i in 0..n {
                match piece(&problem.f, i, x0[i])? {
                    Piece::Fixed(k) => {
                        jac[(i, i)] = 1.0;
                        rhs[i] = k;
                    }
                    Piece::Slope(d) => {
                        jac.view_mut((i, n), (1, total - n)).copy_from(&lt.row(i));
                        rhs[i] = -d;
                    }
                }
            }
        }
    }
    for (j, (func, lmap, _)) in cons.iter().enumerate() {
        let (o, d) = (offsets[j], dims[j]);
        let u0 = *lmap * &x0;
        match func.affine_gradient() {
            Some((h, cvec)) => {
                jac.view_mut((o, 0), (d, n)).copy_from(&(&h * *lmap));
                for i in 0..d {
                    jac[(o + i, o + i)] -= 1.0;
                }
                rhs.rows_mut(o, d).copy_from(&(-cvec));
            }
            None => {
                for i in 0..d {
                    match piece(func, i, u0[i])? {
                        Piece::Fixed(k) => {
                            jac.view_mut((o + i, 0), (1, n)).copy_from(&lmap.row(i));
                            rhs[o + i] = k;
                        }
                        Piece::Slope(s) => {
                            jac[(o + i, o + i)] = 1.0;
                            rhs[o + i] = s;
                        }
                    }
                }
            }
        }
    }
    let resid = &rhs - &jac * &z0;
    let svd = SVD::new(jac, true, true);
    let eps = 1e-12 * svd.singular_values.max().max(1.0);
    let delta = svd
        .solve(&resid, eps)
        .map_err(|e| Error::Oracle(format!("active-set solve failed: {e}")))?;
    let z = z0 + delta;
    let x = z.rows(0, n).into_owned();
    let layout = full_layout(problem)?;
    let mut out = StackedPoint::zeros(&layout);
    out.set_block(BlockName::X, &x)?;
    out.set_block(BlockName::A, &(&problem.a * &x))?;
    for (j, c) in cons.iter().enumerate() {
        out.set_block(c.2, &z.rows(offsets[j], dims[j]).into_owned())?;
    }
    Ok(out)
}

/// Scalar metrics meeting the scheme's strict conditions with margin at least a tenth of
/// the largest eigenvalue involved.
pub fn suggest_metrics(problem: &SplitProblem, id: SchemeId) -> Result<SchemeSpec> {
    let norm_sq = |m: &Mat| -> Result<f64> {
        let (_, hi) = linops::spectral_bounds(&(m.transpose() * m))?;
        Ok(hi.max(1e-3))
    };
    let alpha = norm_sq(&problem.a)?;
    let beta = match &problem.b {
        Some(b) => norm_sq(b)?,
        None => 0.0,
    };
    use SchemeId::*;
    // (mu, omega, gamma, theta)
    let (mu, omega, gamma, theta) = match id {
        Lag1 | Lag7 => (4.0 * alpha, 4.0, 1.0, 1.0),
        Lag2 | Lag3 => (1.0, 2.0, 1.0, 1.0),
        Lag4 => (2.0 * alpha, 1.0, 1.0, 1.0),
        Lag5 => (2.0 * alpha, 1.0, 1.0, 1.0),
        Lag6 => (1.0, 1.0, 1.0, 1.0),
        Pds1 | Pds2 | Pds3 | Pds4 | Pds5 => (2.0 * alpha, 1.0, 1.0, 1.0),
        Pds6 => (1.0, 1.0, 2.0 * alpha, 1.0),
        Pds7 => (2.0 * alpha.sqrt(), 1.0, 2.0 * alpha.sqrt(), 1.0),
        Mix1 | Mix2 | Mix3 | Mix5 | Mix6 => (2.0 * (alpha + beta), 2.0, 1.0, 1.0),
        Mix4 => (2.0 * (alpha + beta), 1.0, 1.0, 1.0),
    };
    Ok(SchemeSpec::new(
        id,
        Metrics::scalar(problem, id, mu, omega, gamma, theta)?,
    ))
}

/// Stopping rule and budget of the long-run oracle.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LongRunOptions {
    pub max_iter: usize,
    pub check_every: usize,
    /// Residual (with kink slack of the same size) at which the run stops.
    pub target: f64,
    /// Snap to the active-set solution after the run.
    pub polish: bool,
}

impl Default for LongRunOptions {
    fn default() -> Self {
        Self {
            max_iter: 1_000_000,
            check_every: 25,
            target: 1e-10,
            polish: true,
        }
    }
}

fn lift_state(
    problem: &SplitProblem,
    family: Family,
    state: &StackedPoint,
) -> Result<StackedPoint> {
    let layout = full_layout(problem)?;
    let mut out = StackedPoint::zeros(&layout);
    let x = state.block(BlockName::X)?;
    out.set_block(BlockName::X, &x)?;
    out.set_block(BlockName::P, &state.block(BlockName::P)?)?;
    match family {
        Family::Pds => out.set_block(BlockName::A, &(&problem.a * &x))?,
        _ => {
            out.set_block(BlockName::A, &state.block(BlockName::A)?)?;
            if family == Family::Mix {
                out.set_block(BlockName::B, &state.block(BlockName::B)?)?;
            }
        }
    }
    Ok(out)
}

/// Reference saddle from a long run of PDS-I (MIX-I for three-function problems) under
/// [`suggest_metrics`], optionally polished on the identified active set.
pub fn long_run_oracle(problem: &SplitProblem, opts: LongRunOptions) -> Result<SaddleCertificate> {
    let id = if problem.has_third() {
        SchemeId::Mix1
    } else {
        SchemeId::Pds1
    };
    let spec = suggest_metrics(problem, id)?;
    let report = schemes::check_conditions(problem, &spec)?;
    if !report.strict_pass {
        return Err(Error::Oracle(format!(
            "oracle scheme {id} fails its own conditions"
        )));
    }
    let prepared = PreparedScheme::new(problem, &spec)?;
    let mut state = StackedPoint::zeros(prepared.layout());
    let worst = |c: &StackedPoint| -> Result<f64> {
        Ok(kkt_residuals(problem, c, opts.target)?
            .iter()
            .map(|r| r.1)
            .fold(0.0, f64::max))
    };
    let mut iters = 0;
    let mut best = lift_state(problem, id.family(), &state)?;
    while iters < opts.max_iter {
        for _ in 0..opts.check_every.max(1) {
            state = prepared.step(&state)?.0;
        }
        iters += opts.check_every.max(1);
        best = lift_state(problem, id.family(), &state)?;
        if !best.values().iter().all(|v| v.is_finite()) {
            return Err(Error::Oracle("long run diverged".into()));
        }
        if worst(&best)? <= opts.target {
            break;
        }
    }
    if opts.polish {
        if let Ok(polished) = polish(problem, &best) {
            let residuals = kkt_residuals(problem, &polished, 1e-12)?;
            if residuals.iter().all(|r| r.1 <= CERTIFICATE_TOL) {
                return SaddleCertificate::checked(
                    polished,
                    residuals,
                    OracleMethod::LongRun,
                    CERTIFICATE_TOL,
                    iters,
                );
            }
        }
    }
    let residuals = kkt_residuals(problem, &best, 1e-9)?;
    SaddleCertificate::checked(best, residuals, OracleMethod::LongRun, LONG_RUN_TOL, iters)
}

/// Saddle of a problem whose functions all have affine gradients, by one linear KKT solve.
pub fn linear_kkt_oracle(problem: &SplitProblem) -> Result<SaddleCertificate> {
    let smooth = problem.f.is_smooth()
        && problem.g.is_smooth()
        && problem.h.as_ref().map_or(true, |h| h.is_smooth());
    if !smooth {
        return Err(Error::Unsupported(
            "linear KKT oracle needs affine gradients".into(),
        ));
    }
    let start = StackedPoint::zeros(&full_layout(problem)?);
    let point = polish(problem, &start)?;
    let residuals = kkt_residuals(problem, &point, 1e-12)?;
    SaddleCertificate::checked(
        point,
        residuals,
        OracleMethod::LinearKkt,
        CERTIFICATE_TOL,
        0,
    )
}

/// Linear KKT solve when possible, otherwise the long-run oracle.
pub fn reference_saddle(problem: &SplitProblem) -> Result<SaddleCertificate> {
    match linear_kkt_oracle(problem) {
        Err(Error::Unsupported(_)) => long_run_oracle(problem, LongRunOptions::default()),
        other => other,
    }
}

const TAG_QUADRATIC: u64 = 1;
const TAG_LASSO: u64 = 2;
const TAG_BOUNDED: u64 = 3;
const TAG_COMPACT: u64 = 4;
const TAG_MIX: u64 = 5;
const TAG_MIX_L1: u64 = 6;

/// Generator for one factory: the seed picks the key, the factory tag picks the stream.
pub fn factory_rng(seed: u64, tag: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(tag);
    rng
}

fn normal_vec(rng: &mut ChaCha20Rng, n: usize, scale: f64) -> Vector {
    Vector::from_iterator(
        n,
        (0..n).map(|_| {
            let z: f64 = StandardNormal.sample(&mut *rng);
            scale * z
        }),
    )
}

fn uniform_vec(rng: &mut ChaCha20Rng, n: usize, lo: f64, hi: f64) -> Vector {
    Vector::from_iterator(n, (0..n).map(|_| rng.gen_range(lo..hi)))
}

/// Gaussian matrix with unit-variance rows scaled by `1/√cols`.
fn random_matrix(rng: &mut ChaCha20Rng, rows: usize, cols: usize) -> Mat {
    let s = 1.0 / (cols as f64).sqrt();
    Mat::from_fn(rows, cols, |_, _| {
        let z: f64 = StandardNormal.sample(&mut *rng);
        s * z
    })
}

fn diag_quadratic(rng: &mut ChaCha20Rng, n: usize) -> Result<ProxFunction> {
    let p = Mat::from_diagonal(&uniform_vec(rng, n, 1.0, 3.0));
    ProxFunction::quadratic(p, normal_vec(rng, n, 1.0))
}

fn check_dims(pairs: &[(usize, &str)]) -> Result<()> {
    for (d, what) in pairs {
        if *d == 0 {
            return Err(Error::Argument(format!("{what} must be >= 1")));
        }
    }
    Ok(())
}

/// Strongly convex diagonal quadratics `f`, `g` with a Gaussian `A`; linear KKT reference.
pub fn make_quadratic_saddle(
    n: usize,
    m1: usize,
    seed: u64,
) -> Result<(SplitProblem, SaddleCertificate)> {
    check_dims(&[(n, "N"), (m1, "M1")])?;
    let mut rng = factory_rng(seed, TAG_QUADRATIC);
    let f = diag_quadratic(&mut rng, n)?;
    let g = diag_quadratic(&mut rng, m1)?;
    let a = random_matrix(&mut rng, m1, n);
    let problem = SplitProblem::new(f, g, a)?;
    let cert = linear_kkt_oracle(&problem)?;
    Ok((problem, cert))
}

/// `f = ½‖x - d‖²`, `g = λ‖·‖₁`; long-run reference.
pub fn make_lasso(
    n: usize,
    m1: usize,
    lambda: f64,
    seed: u64,
) -> Result<(SplitProblem, SaddleCertificate)> {
    check_dims(&[(n, "N"), (m1, "M1")])?;
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::Argument("lambda must be finite and > 0".into()));
    }
    let mut rng = factory_rng(seed, TAG_LASSO);
    let d = normal_vec(&mut rng, n, 2.0);
    let f = ProxFunction::quadratic(linops::identity(n), -d)?;
    let g = ProxFunction::l1(m1, lambda)?;
    let a = random_matrix(&mut rng, m1, n);
    let problem = SplitProblem::new(f, g, a)?;
    let cert = reference_saddle(&problem)?;
    Ok((problem, cert))
}

/// `f = ι_[-1,1]^N + ⟨t, ·⟩`, `g = ‖·‖₁`: bounded `dom f` and bounded `dom g*`.
pub fn make_bounded_domain(
    n: usize,
    m1: usize,
    seed: u64,
) -> Result<(SplitProblem, SaddleCertificate)> {
    check_dims(&[(n, "N"), (m1, "M1")])?;
    let mut rng = factory_rng(seed, TAG_BOUNDED);
    let t = normal_vec(&mut rng, n, 1.0);
    let f =
        ProxFunction::box_indicator(Vector::from_element(n, -1.0), Vector::from_element(n, 1.0))?
            .with_tilt(t)?;
    let g = ProxFunction::l1(m1, 1.0)?;
    let a = random_matrix(&mut rng, m1, n);
    let problem = SplitProblem::new(f, g, a)?;
    let cert = reference_saddle(&problem)?;
    Ok((problem, cert))
}

/// Tilted boxes for both `f` and `g`: bounded `dom f` and `dom g`.
pub fn make_compact(n: usize, m1: usize, seed: u64) -> Result<(SplitProblem, SaddleCertificate)> {
    check_dims(&[(n, "N"), (m1, "M1")])?;
    let mut rng = factory_rng(seed, TAG_COMPACT);
    let t = normal_vec(&mut rng, n, 1.0);
    let s = normal_vec(&mut rng, m1, 1.0);
    let half = uniform_vec(&mut rng, m1, 0.2, 0.6);
    let f =
        ProxFunction::box_indicator(Vector::from_element(n, -1.0), Vector::from_element(n, 1.0))?
            .with_tilt(t)?;
    let g = ProxFunction::box_indicator(-&half, half)?.with_tilt(s)?;
    let a = random_matrix(&mut rng, m1, n);
    let problem = SplitProblem::new(f, g, a)?;
    let cert = reference_saddle(&problem)?;
    Ok((problem, cert))
}

/// Three diagonal quadratics with Gaussian `A`, `B`; linear KKT reference.
pub fn make_mix(
    n: usize,
    m1: usize,
    m2: usize,
    seed: u64,
) -> Result<(SplitProblem, SaddleCertificate)> {
    check_dims(&[(n, "N"), (m1, "M1"), (m2, "M2")])?;
    let mut rng = factory_rng(seed, TAG_MIX);
    let f = diag_quadratic(&mut rng, n)?;
    let g = diag_quadratic(&mut rng, m1)?;
    let h = diag_quadratic(&mut rng, m2)?;
    let a = random_matrix(&mut rng, m1, n);
    let b = random_matrix(&mut rng, m2, n);
    let problem = SplitProblem::with_third(f, g, h, a, b)?;
    let cert = linear_kkt_oracle(&problem)?;
    Ok((problem, cert))
}

/// As [`make_mix`] with `h = ½‖·‖₁`; long-run reference.
pub fn make_mix_l1(
    n: usize,
    m1: usize,
    m2: usize,
    seed: u64,
) -> Result<(SplitProblem, SaddleCertificate)> {
    check_dims(&[(n, "N"), (m1, "M1"), (m2, "M2")])?;
    let mut rng = factory_rng(seed, TAG_MIX_L1);
    let f = diag_quadratic(&mut rng, n)?;
    let g = diag_quadratic(&mut rng, m1)?;
    let h = ProxFunction::l1(m2, 0.5)?;
    let a = random_matrix(&mut rng, m1, n);
    let b = random_matrix(&mut rng, m2, n);
    let problem = SplitProblem::with_third(f, g, h, a, b)?;
    let cert = reference_saddle(&problem)?;
    Ok((problem, cert))
}

/// One convex function in config form. `kind` is one of `zero`, `linear`, `quadratic`,
/// `l1`, `box`, `l2_squared`; `tilt` adds a linear term to any kind.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FunctionSpec {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lo: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hi: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tilt: Option<Vec<f64>>,
}

pub fn matrix_from_rows(rows: &[Vec<f64>], what: &str) -> Result<Mat> {
    let r = rows.len();
    let c = rows.first().map_or(0, |row| row.len());
    if r == 0 || c == 0 || rows.iter().any(|row| row.len() != c) {
        return Err(Error::Shape(format!(
            "{what} must be a nonempty rectangular array"
        )));
    }
    Ok(Mat::from_fn(r, c, |i, j| rows[i][j]))
}

pub fn matrix_to_rows(m: &Mat) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

impl FunctionSpec {
    fn need<T: Clone>(v: &Option<T>, field: &str, kind: &str) -> Result<T> {
        v.clone()
            .ok_or_else(|| Error::Argument(format!("function kind '{kind}' needs '{field}'")))
    }

    pub fn build(&self) -> Result<ProxFunction> {
        let k = self.kind.as_str();
        let vec = |v: Vec<f64>| Vector::from_vec(v);
        let base = match k {
            "zero" => ProxFunction::zero(Self::need(&self.dim, "dim", k)?),
            "linear" => ProxFunction::linear(vec(Self::need(&self.q, "q", k)?)),
            "quadratic" => {
                let p = matrix_from_rows(&Self::need(&self.p, "p", k)?, "p")?;
                let q = match &self.q {
                    Some(q) => vec(q.clone()),
                    None => Vector::zeros(p.nrows()),
                };
                ProxFunction::quadratic(p, q)?
            }
            "l1" => ProxFunction::l1(
                Self::need(&self.dim, "dim", k)?,
                Self::need(&self.weight, "weight", k)?,
            )?,
            "box" => ProxFunction::box_indicator(
                vec(Self::need(&self.lo, "lo", k)?),
                vec(Self::need(&self.hi, "hi", k)?),
            )?,
            "l2_squared" => ProxFunction::l2_squared(
                Self::need(&self.dim, "dim", k)?,
                Self::need(&self.weight, "weight", k)?,
            )?,
            other => return Err(Error::Argument(format!("unknown function kind '{other}'"))),
        };
        match &self.tilt {
            Some(t) => base.with_tilt(vec(t.clone())),
            None => Ok(base),
        }
    }

    pub fn from_function(func: &ProxFunction) -> Self {
        let list = |v: &Vector| v.iter().copied().collect::<Vec<f64>>();
        let mut spec = FunctionSpec {
            tilt: func.tilt().map(list),
            ..Default::default()
        };
        match func.kind() {
            FunctionKind::Zero => {
                spec.kind = "zero".into();
                spec.dim = Some(func.dim());
            }
            FunctionKind::Linear { q } => {
                spec.kind = "linear".into();
                spec.q = Some(list(q));
            }
            FunctionKind::Quadratic { p, q } => {
                spec.kind = "quadratic".into();
                spec.p = Some(matrix_to_rows(p));
                spec.q = Some(list(q));
            }
            FunctionKind::L1 { weight } => {
                spec.kind = "l1".into();
                spec.dim = Some(func.dim());
                spec.weight = Some(*weight);
            }
            FunctionKind::Box { lo, hi } => {
                spec.kind = "box".into();
                spec.lo = Some(list(lo));
                spec.hi = Some(list(hi));
            }
            FunctionKind::L2Squared { weight } => {
                spec.kind = "l2_squared".into();
                spec.dim = Some(func.dim());
                spec.weight = Some(*weight);
            }
        }
        spec
    }
}

fn default_seed() -> u64 {
    0
}

/// Problem section of an experiment config: a factory with its parameters, or an explicit
/// problem.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "factory", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemSpec {
    QuadraticSaddle {
        n: usize,
        m1: usize,
        #[serde(default = "default_seed")]
        seed: u64,
    },
    Lasso {
        n: usize,
        m1: usize,
        lambda: f64,
        #[serde(default = "default_seed")]
        seed: u64,
    },
    BoundedDomain {
        n: usize,
        m1: usize,
        #[serde(default = "default_seed")]
        seed: u64,
    },
    Compact {
        n: usize,
        m1: usize,
        #[serde(default = "default_seed")]
        seed: u64,
    },
    Mix {
        n: usize,
        m1: usize,
        m2: usize,
        #[serde(default = "default_seed")]
        seed: u64,
    },
    MixL1 {
        n: usize,
        m1: usize,
        m2: usize,
        #[serde(default = "default_seed")]
        seed: u64,
    },
    Explicit {
        f: FunctionSpec,
        g: FunctionSpec,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        h: Option<FunctionSpec>,
        a: Vec<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        b: Option<Vec<Vec<f64>>>,
    },
}

impl ProblemSpec {
    pub fn seed(&self) -> Option<u64> {
        match self {
            ProblemSpec::QuadraticSaddle { seed, .. }
            | ProblemSpec::Lasso { seed, .. }
            | ProblemSpec::BoundedDomain { seed, .. }
            | ProblemSpec::Compact { seed, .. }
            | ProblemSpec::Mix { seed, .. }
            | ProblemSpec::MixL1 { seed, .. } => Some(*seed),
            ProblemSpec::Explicit { .. } => None,
        }
    }

    /// Replaces the seed of factory problems; explicit problems are unchanged.
    pub fn set_seed(&mut self, value: u64) {
        match self {
            ProblemSpec::QuadraticSaddle { seed, .. }
            | ProblemSpec::Lasso { seed, .. }
            | ProblemSpec::BoundedDomain { seed, .. }
            | ProblemSpec::Compact { seed, .. }
            | ProblemSpec::Mix { seed, .. }
            | ProblemSpec::MixL1 { seed, .. } => *seed = value,
            ProblemSpec::Explicit { .. } => {}
        }
    }

    /// Builds the problem only, without a reference.
    pub fn build_problem(&self) -> Result<SplitProblem> {
        match self {
            ProblemSpec::Explicit { f, g, h, a, b } => {
                let (f, g) = (f.build()?, g.build()?);
                let a = matrix_from_rows(a, "a")?;
                match (h, b) {
                    (None, None) => SplitProblem::new(f, g, a),
                    (Some(h), Some(b)) => {
                        SplitProblem::with_third(f, g, h.build()?, a, matrix_from_rows(b, "b")?)
                    }
                    _ => Err(Error::Argument("'h' and 'b' must be given together".into())),
                }
            }
            _ => Ok(self.build()?.0),
        }
    }

    /// Builds the problem with its reference saddle. Explicit problems get a reference when
    /// one of the oracles succeeds.
    pub fn build(&self) -> Result<(SplitProblem, Option<SaddleCertificate>)> {
        let wrap = |r: Result<(SplitProblem, SaddleCertificate)>| r.map(|(p, c)| (p, Some(c)));
        match *self {
            ProblemSpec::QuadraticSaddle { n, m1, seed } => {
                wrap(make_quadratic_saddle(n, m1, seed))
            }
            ProblemSpec::Lasso {
                n,
                m1,
                lambda,
                seed,
            } => wrap(make_lasso(n, m1, lambda, seed)),
            ProblemSpec::BoundedDomain { n, m1, seed } => wrap(make_bounded_domain(n, m1, seed)),
            ProblemSpec::Compact { n, m1, seed } => wrap(make_compact(n, m1, seed)),
            ProblemSpec::Mix { n, m1, m2, seed } => wrap(make_mix(n, m1, m2, seed)),
            ProblemSpec::MixL1 { n, m1, m2, seed } => wrap(make_mix_l1(n, m1, m2, seed)),
            ProblemSpec::Explicit { .. } => {
                let problem = self.build_problem()?;
                let cert = reference_saddle(&problem).ok();
                Ok((problem, cert))
            }
        }
    }

    /// Explicit form of a built problem.
    pub fn explicit(problem: &SplitProblem) -> Self {
        ProblemSpec::Explicit {
            f: FunctionSpec::from_function(&problem.f),
            g: FunctionSpec::from_function(&problem.g),
            h: problem.h.as_ref().map(FunctionSpec::from_function),
            a: matrix_to_rows(&problem.a),
            b: problem.b.as_ref().map(matrix_to_rows),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_vec(xs.to_vec())
    }

    fn m1(x: f64) -> Mat {
        Mat::from_element(1, 1, x)
    }

    fn shifted_half_sq(c: f64) -> ProxFunction {
        ProxFunction::quadratic(m1(1.0), v(&[-c])).unwrap()
    }

    #[test]
    fn one_dimensional_quadratic_saddle() {
        let pr = SplitProblem::new(shifted_half_sq(1.0), shifted_half_sq(0.0), m1(1.0)).unwrap();
        let cert = linear_kkt_oracle(&pr).unwrap();
        assert!((cert.point.values() - v(&[0.5, 0.5, 0.5])).amax() < 1e-14);
        assert!(cert.max_residual() <= 1e-12);
        assert_eq!(cert.method, OracleMethod::LinearKkt);
    }

    #[test]
    fn centered_quadratics_have_zero_saddle() {
        let pr = SplitProblem::new(shifted_half_sq(0.0), shifted_half_sq(0.0), m1(3.0)).unwrap();
        assert_eq!(linear_kkt_oracle(&pr).unwrap().point.values().amax(), 0.0);
    }

    #[test]
    fn random_quadratic_saddle_certificate() {
        let (_, cert) = make_quadratic_saddle(6, 4, 7).unwrap();
        assert!(cert.max_residual() <= 1e-12);
        let (_, again) = make_quadratic_saddle(6, 4, 7).unwrap();
        assert_eq!(cert.point, again.point);
    }

    #[test]
    fn one_dimensional_lasso() {
        let pr = SplitProblem::new(
            shifted_half_sq(2.0),
            ProxFunction::l1(1, 1.0).unwrap(),
            m1(1.0),
        )
        .unwrap();
        let cert = reference_saddle(&pr).unwrap();
        assert!((cert.point.values() - v(&[1.0, 1.0, 1.0])).amax() < 1e-10);
    }

    #[test]
    fn lasso_deadzone_for_large_lambda() {
        let (pr, cert) = make_lasso(5, 4, 100.0, 3).unwrap();
        assert!(cert.block(BlockName::A).unwrap().amax() < 1e-10);
        assert!(cert.max_residual() <= 1e-8);
        let _ = pr;
    }

    #[test]
    fn random_lasso_certificate() {
        let (_, cert) = make_lasso(8, 6, 0.5, 11).unwrap();
        assert!(cert.max_residual() <= 1e-8);
        assert_eq!(cert.method, OracleMethod::LongRun);
    }

    #[test]
    fn box_interior_and_boundary() {
        // f = ι_[-1,1] + 0.5x, g = ½(a - 2)², A = 1: interior solution x = 1.5 is cut to the box
        let f = ProxFunction::box_indicator(v(&[-1.0]), v(&[1.0]))
            .unwrap()
            .with_tilt(v(&[0.5]))
            .unwrap();
        let pr = SplitProblem::new(f.clone(), shifted_half_sq(2.0), m1(1.0)).unwrap();
        let cert = reference_saddle(&pr).unwrap();
        // boundary: x = 1, p = a - 2 = -1, -p - 0.5 = 0.5 ∈ N_[-1,1](1)
        assert!((cert.point.values() - v(&[1.0, 1.0, -1.0])).amax() < 1e-10);
        // interior: g = ½(a - 0.2)² gives x = 0.2 - 0.5 = -0.3, matching the unconstrained KKT
        let pr = SplitProblem::new(f, shifted_half_sq(0.2), m1(1.0)).unwrap();
        let cert = reference_saddle(&pr).unwrap();
        let unconstrained = linear_kkt_oracle(
            &SplitProblem::new(
                ProxFunction::linear(v(&[0.5])),
                shifted_half_sq(0.2),
                m1(1.0),
            )
            .unwrap(),
        )
        .unwrap();
        assert!((cert.point.values() - unconstrained.point.values()).amax() < 1e-10);
    }

    #[test]
    fn bounded_domain_flags() {
        let (pr, cert) = make_bounded_domain(5, 3, 1).unwrap();
        assert!(pr.f.domain_bounds().1.iter().all(|v| v.is_finite()));
        assert!(pr.g.conj_domain_bounds().1.iter().all(|v| v.is_finite()));
        assert!(cert.max_residual() <= 1e-8);
        let (pr, cert) = make_compact(5, 3, 1).unwrap();
        assert!(pr.g.domain_bounds().0.iter().all(|v| v.is_finite()));
        assert!(cert.max_residual() <= 1e-8);
    }

    #[test]
    fn one_dimensional_mix() {
        let pr = SplitProblem::with_third(
            shifted_half_sq(1.0),
            shifted_half_sq(0.0),
            shifted_half_sq(0.0),
            m1(1.0),
            m1(1.0),
        )
        .unwrap();
        let cert = linear_kkt_oracle(&pr).unwrap();
        let third = 1.0 / 3.0;
        assert!((cert.point.values() - v(&[third; 4])).amax() < 1e-14);
    }

    #[test]
    fn mix_with_zero_third_term_is_lag() {
        let (pr, lag) = make_quadratic_saddle(4, 3, 5).unwrap();
        let mix = SplitProblem::with_third(
            pr.f.clone(),
            pr.g.clone(),
            ProxFunction::zero(2),
            pr.a.clone(),
            Mat::from_element(2, 4, 0.3),
        )
        .unwrap();
        let cert = linear_kkt_oracle(&mix).unwrap();
        assert!(cert.block(BlockName::B).unwrap().amax() < 1e-12);
        assert!(
            (cert.point_for(&mix, Family::Lag).unwrap().values() - lag.point.values()).amax()
                < 1e-12
        );
        let (_, c) = make_mix(5, 3, 2, 9).unwrap();
        assert!(c.max_residual() <= 1e-10);
        let (_, c) = make_mix_l1(5, 3, 2, 9).unwrap();
        assert!(c.max_residual() <= 1e-8);
    }

    #[test]
    fn suggested_metrics_pass_strictly() {
        let (pr, _) = make_quadratic_saddle(5, 3, 2).unwrap();
        let (prm, _) = make_mix(5, 3, 2, 2).unwrap();
        for id in SchemeId::ALL {
            let p = if id.family() == Family::Mix {
                &prm
            } else {
                &pr
            };
            let spec = suggest_metrics(p, id).unwrap();
            let rep = schemes::check_conditions(p, &spec).unwrap();
            assert!(rep.strict_pass, "{id}: {:?}", rep.entries);
        }
    }

    #[test]
    fn config_round_trip() {
        let (pr, _) = make_lasso(3, 2, 0.7, 4).unwrap();
        let spec = ProblemSpec::explicit(&pr);
        let text = toml::to_string(&spec).unwrap();
        let back: ProblemSpec = toml::from_str(&text).unwrap();
        assert_eq!(back.build_problem().unwrap(), pr);
        let bad = "factory = \"lasso\"\nn = 2\nm1 = 2\nlambda = 1.0\ncolour = 3\n";
        assert!(toml::from_str::<ProblemSpec>(bad).is_err());
    }
}
