//! The abstract proximal-point layer: inclusion residuals, the resolvent form, reductions
//! through degenerate metrics and the Douglas-Rachford link.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linops::{self, BlockName, Mat, StackedPoint, Vector};
use crate::proxlib::{self, ProxFunction, SubdiffBox};
use crate::schemes::{
    build_ppa, DiagTerm, Family, PpaMatrices, PreparedScheme, SchemeId, SchemeSpec, SplitProblem,
};

/// Slack used when deciding that a proximal output sits on a kink or boundary.
pub const KINK_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InclusionResidual {
    pub rows: Vec<(BlockName, f64)>,
    pub total: f64,
}

fn diag_box(problem: &SplitProblem, term: DiagTerm, point: &Vector) -> Result<Option<SubdiffBox>> {
    Ok(match term {
        DiagTerm::None => None,
        DiagTerm::SubF => Some(problem.f.subdiff_box_tol(point, KINK_TOL)?),
        DiagTerm::SubG => Some(problem.g.subdiff_box_tol(point, KINK_TOL)?),
        DiagTerm::SubGConj => Some(problem.g.conj_subdiff_box_tol(point, KINK_TOL)?),
        DiagTerm::SubHConj => {
            let h = problem
                .h
                .as_ref()
                .ok_or_else(|| Error::Argument("problem has no h".into()))?;
            Some(h.conj_subdiff_box_tol(point, KINK_TOL)?)
        }
    })
}

/// Residual of `0 ∈ 𝒜c̃ + Q(c̃ - c)` row by row, using precomputed PPA matrices.
pub fn inclusion_residual_with(
    problem: &SplitProblem,
    ppa: &PpaMatrices,
    c: &StackedPoint,
    tilde: &StackedPoint,
) -> Result<InclusionResidual> {
    if c.layout() != &ppa.layout || tilde.layout() != &ppa.layout {
        return Err(Error::Dimension(
            "points do not match the scheme layout".into(),
        ));
    }
    let lin =
        ppa.q.dense() * (tilde.values() - c.values()) + ppa.operator.skew.dense() * tilde.values();
    let lin = tilde.with_values(lin)?;
    let mut rows = Vec::new();
    for &(name, term) in &ppa.operator.diag {
        let v = -lin.block(name)?;
        let r = match diag_box(problem, term, &tilde.block(name)?)? {
            Some(b) => b.distance(&v),
            None => v.norm(),
        };
        rows.push((name, r));
    }
    let total = rows.iter().map(|r| r.1).fold(0.0, f64::max);
    Ok(InclusionResidual { rows, total })
}

pub fn inclusion_residual(
    problem: &SplitProblem,
    spec: &SchemeSpec,
    c: &StackedPoint,
    tilde: &StackedPoint,
) -> Result<InclusionResidual> {
    let ppa = build_ppa(problem, spec)?;
    inclusion_residual_with(problem, &ppa, c, tilde)
}

/// Result of the resolvent step with the optional symmetric cross-check.
#[derive(Clone, Debug, PartialEq)]
pub struct ResolventOutput {
    pub point: StackedPoint,
    /// `Q^{-1/2}(I + Q^{-1/2}𝒜Q^{-1/2})⁻¹Q^{1/2}c`, available for positive definite `Q`
    /// when every set-valued term is affine.
    pub symmetric: Option<StackedPoint>,
    pub deviation: Option<f64>,
}

/// Affine form `𝒜c = L c + d` when every diagonal term is single-valued and affine.
fn affine_operator(problem: &SplitProblem, ppa: &PpaMatrices) -> Option<(Mat, Vector)> {
    let layout = &ppa.layout;
    let n = layout.total();
    let mut l = ppa.operator.skew.dense().clone();
    let mut d = Vector::zeros(n);
    for &(name, term) in &ppa.operator.diag {
        let r = layout.range(name)?;
        let piece = match term {
            DiagTerm::None => continue,
            DiagTerm::SubF => problem.f.affine_gradient()?,
            DiagTerm::SubG => problem.g.affine_gradient()?,
            DiagTerm::SubGConj => problem.g.conj_affine_gradient()?,
            DiagTerm::SubHConj => problem.h.as_ref()?.conj_affine_gradient()?,
        };
        let mut view = l.view_mut((r.start, r.start), (r.len(), r.len()));
        view += &piece.0;
        d.rows_mut(r.start, r.len()).copy_from(&piece.1);
    }
    Some((l, d))
}

/// `c⁺ = (𝒜 + Q)⁻¹ Q c` for schemes without relaxation, computed by the catalog step and,
/// where possible, also through the symmetric resolvent form.
pub fn resolvent_step(
    problem: &SplitProblem,
    spec: &SchemeSpec,
    c: &StackedPoint,
) -> Result<ResolventOutput> {
    if !spec.id.relaxation_is_identity() {
        return Err(Error::Unsupported(format!(
            "{} has a nontrivial relaxation matrix",
            spec.id
        )));
    }
    let prepared = PreparedScheme::new(problem, spec)?;
    let (point, _) = prepared.step(c)?;
    let ppa = prepared.ppa();
    let q = ppa.q.dense();
    let symmetric_q = (q - q.transpose()).amax() <= 1e-12 * (1.0 + q.amax());
    let pd = symmetric_q && linops::definiteness_default(q)?.is_pd();
    let (symmetric, deviation) = match (pd, affine_operator(problem, ppa)) {
        (true, Some((l, d))) => {
            let q_half = linops::sym_sqrt(q)?;
            let q_mhalf = linops::sym_inv_sqrt(q)?;
            let n = q.nrows();
            let lhs = linops::identity(n) + &q_mhalf * l * &q_mhalf;
            let rhs = &q_half * c.values() - &q_mhalf * d;
            let y = linops::solve(&lhs, &rhs, "I + Q^{-1/2} L Q^{-1/2}")?;
            let sym = c.with_values(&q_mhalf * y)?;
            let dev = linops::max_abs_diff(sym.values(), point.values());
            let scale = 1.0 + point.values().amax();
            if dev > 1e-10 * scale {
                return Err(Error::Consistency(format!(
                    "resolvent forms disagree by {dev:e}"
                )));
            }
            (Some(sym), Some(dev))
        }
        _ => (None, None),
    };
    Ok(ResolventOutput {
        point,
        symmetric,
        deviation,
    })
}

/// Catalogued degenerate metrics that admit a reduced resolvent.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum DegenerateCase {
    /// LAG-II with `M = 0` and `Ω ≻ Γ`.
    Lag2Reduced,
    /// LAG-II with `M = 0`, `Ω = Γ = I`: a Douglas-Rachford iteration on `v = a - p`.
    Lag2Drs,
    /// LAG-VI with `M = 0`, `Ω = 0`, `Γ = γI` (ADMM) as a resolvent on `v = z/√γ`.
    AdmmReduced,
    /// PDS-I with `A = M = Γ = I`: a Douglas-Rachford iteration on `v = x - p`.
    Pds1Drs,
}

impl DegenerateCase {
    pub const ALL: [DegenerateCase; 4] = [
        DegenerateCase::Lag2Reduced,
        DegenerateCase::Lag2Drs,
        DegenerateCase::AdmmReduced,
        DegenerateCase::Pds1Drs,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DegenerateCase::Lag2Reduced => "lag2-reduced",
            DegenerateCase::Lag2Drs => "lag2-drs",
            DegenerateCase::AdmmReduced => "admm-reduced",
            DegenerateCase::Pds1Drs => "pds1-drs",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Unsupported(format!("unknown degenerate case '{s}'")))
    }
}

fn close(a: &Mat, b: &Mat) -> bool {
    a.shape() == b.shape() && (a - b).amax() <= 1e-12 * (1.0 + a.amax().max(b.amax()))
}

fn scalar_of(m: &Mat) -> Option<f64> {
    let s = *m.get((0, 0))?;
    close(m, &linops::scaled_identity(m.nrows(), s)).then_some(s)
}

fn check_case(
    problem: &SplitProblem,
    spec: &SchemeSpec,
    case: DegenerateCase,
) -> std::result::Result<(), String> {
    let mt = &spec.metrics;
    let zero_m = mt.m.amax() == 0.0;
    let omega = mt.omega.as_ref();
    match case {
        DegenerateCase::Lag2Reduced => {
            if spec.id != SchemeId::Lag2 {
                return Err("needs LAG-II".into());
            }
            if !zero_m {
                return Err("needs M = 0".into());
            }
            let om = omega.ok_or("needs Ω")?;
            let margin = linops::lambda_min(&(om - &mt.gamma)).map_err(|e| e.to_string())?;
            if margin <= linops::DEFAULT_REL_TOL {
                return Err("needs Ω ≻ Γ".into());
            }
            Ok(())
        }
        DegenerateCase::Lag2Drs => {
            if spec.id != SchemeId::Lag2 {
                return Err("needs LAG-II".into());
            }
            if !zero_m {
                return Err("needs M = 0".into());
            }
            let one = |m: &Mat| scalar_of(m) == Some(1.0);
            if !omega.map_or(false, one) || !one(&mt.gamma) {
                return Err("needs Ω = Γ = I".into());
            }
            Ok(())
        }
        DegenerateCase::AdmmReduced => {
            if spec.id != SchemeId::Lag6 {
                return Err("needs LAG-VI".into());
            }
            if !zero_m || omega.map_or(true, |o| o.amax() != 0.0) {
                return Err("needs M = 0 and Ω = 0".into());
            }
            if !scalar_of(&mt.gamma).map_or(false, |g| g > 0.0) {
                return Err("needs Γ = γI with γ > 0".into());
            }
            Ok(())
        }
        DegenerateCase::Pds1Drs => {
            if spec.id != SchemeId::Pds1 {
                return Err("needs PDS-I".into());
            }
            let n = problem.n();
            if problem.m1() != n || !close(&problem.a, &linops::identity(n)) {
                return Err("needs A = I".into());
            }
            if scalar_of(&mt.m) != Some(1.0) || scalar_of(&mt.gamma) != Some(1.0) {
                return Err("needs M = Γ = I".into());
            }
            Ok(())
        }
    }
}

/// Reduced iteration `v⁺ = Dᵀ · step(lift(v))` of a degenerate scheme.
#[derive(Clone, Debug)]
pub struct ReducedScheme {
    pub case: DegenerateCase,
    /// Rank-revealing factor of the full-space `Q`.
    pub d: Mat,
    /// Factor in which the state link is stated; `d_link d_linkᵀ = Q`.
    pub d_link: Mat,
    pub rank: usize,
    pub state_link: String,
    problem: SplitProblem,
    spec: SchemeSpec,
    full: Option<PreparedScheme>,
    lift_map: Mat,
    gamma: f64,
}

/// Reduces the scheme through `Q = DDᵀ`.
pub fn reduce(
    problem: &SplitProblem,
    spec: &SchemeSpec,
    case: DegenerateCase,
) -> Result<ReducedScheme> {
    spec.validate(problem)?;
    check_case(problem, spec, case)
        .map_err(|why| Error::Unsupported(format!("{} does not apply: {why}", case.name())))?;
    let n = problem.n();
    let m1 = problem.m1();
    let (q, d_link, state_link, gamma, full) = match case {
        DegenerateCase::AdmmReduced => {
            let gamma = spec.metrics.gamma[(0, 0)];
            // metric of the reordered ADMM on (x, a^{k-1}, z)
            let total = n + 2 * m1;
            let mut q = Mat::zeros(total, total);
            q.view_mut((n + m1, n + m1), (m1, m1))
                .copy_from(&linops::scaled_identity(m1, 1.0 / gamma));
            let mut dl = Mat::zeros(total, m1);
            dl.view_mut((n + m1, 0), (m1, m1))
                .copy_from(&linops::scaled_identity(m1, 1.0 / gamma.sqrt()));
            (q, dl, "v = z/√γ = p/√γ + √γ a".to_string(), gamma, None)
        }
        _ => {
            let prepared = PreparedScheme::new(problem, spec)?;
            let q = prepared.ppa().q.dense().clone();
            let total = q.nrows();
            let (dl, link) = match case {
                DegenerateCase::Lag2Reduced => {
                    let tail = q.view((n, n), (2 * m1, 2 * m1)).into_owned();
                    let root = linops::sym_sqrt(&tail)?;
                    let mut dl = Mat::zeros(total, 2 * m1);
                    dl.view_mut((n, 0), (2 * m1, 2 * m1)).copy_from(&root);
                    (dl, "v = [[Ω, -I], [-I, Γ⁻¹]]^{1/2} [a; p]")
                }
                DegenerateCase::Lag2Drs => {
                    let mut dl = Mat::zeros(total, m1);
                    dl.view_mut((n, 0), (m1, m1))
                        .copy_from(&linops::identity(m1));
                    dl.view_mut((n + m1, 0), (m1, m1))
                        .copy_from(&(-linops::identity(m1)));
                    (dl, "v = a - p")
                }
                DegenerateCase::Pds1Drs => {
                    let mut dl = Mat::zeros(total, n);
                    dl.view_mut((0, 0), (n, n)).copy_from(&linops::identity(n));
                    dl.view_mut((n, 0), (n, n))
                        .copy_from(&(-linops::identity(n)));
                    (dl, "v = x - p")
                }
                DegenerateCase::AdmmReduced => unreachable!(),
            };
            (q, dl, link.to_string(), 0.0, Some(prepared))
        }
    };
    let tol = linops::default_tolerance(&q)?;
    let d = linops::factor_ddt(&q, tol)?;
    if (&d_link * d_link.transpose() - &q).norm() > 1e-10 * (1.0 + q.norm()) {
        return Err(Error::Consistency(
            "state-link factor does not reproduce Q".into(),
        ));
    }
    if d.ncols() != d_link.ncols() {
        return Err(Error::Consistency(
            "rank of Q differs from the catalogued reduction".into(),
        ));
    }
    // D (DᵀD)⁻¹, a right inverse of Dᵀ
    let gram = d_link.transpose() * &d_link;
    let lift_map = &d_link * linops::spd_inverse(&gram, "DᵀD")?;
    Ok(ReducedScheme {
        case,
        rank: d.ncols(),
        d,
        d_link,
        state_link,
        problem: problem.clone(),
        spec: spec.clone(),
        full,
        lift_map,
        gamma,
    })
}

impl ReducedScheme {
    pub fn spec(&self) -> &SchemeSpec {
        &self.spec
    }

    /// `v = d_linkᵀ c` for a full-space point.
    pub fn project(&self, c: &Vector) -> Vector {
        self.d_link.transpose() * c
    }

    /// A full-space point with `d_linkᵀ c = v`.
    pub fn lift(&self, v: &Vector) -> Vector {
        &self.lift_map * v
    }

    /// Reduced variable of an ADMM state `(x, a, p)`.
    pub fn project_admm(&self, p: &Vector, a: &Vector) -> Vector {
        (p + a * self.gamma) / self.gamma.sqrt()
    }

    pub fn step(&self, v: &Vector) -> Result<Vector> {
        let c = self.lift(v);
        let next = match &self.full {
            Some(prepared) => {
                let point = StackedPoint::new(prepared.layout().clone(), c)?;
                prepared.step(&point)?.0.into_values()
            }
            None => self.admm_reordered_step(&c)?,
        };
        Ok(self.project(&next))
    }

    /// ADMM on `(x, a^{k-1}, z)`: `a = prox_{g/γ}(z/γ)`, `x⁺ = argmin f + γ/2‖Ax - 2a + z/γ‖²`,
    /// `z⁺ = z + γ(Ax⁺ - a)`.
    fn admm_reordered_step(&self, c: &Vector) -> Result<Vector> {
        let pr = &self.problem;
        let (n, m1, gamma) = (pr.n(), pr.m1(), self.gamma);
        let z = c.rows(n + m1, m1).into_owned();
        let a = pr.g.prox_scalar(&(&z / gamma), 1.0 / gamma)?;
        let at = pr.a.transpose();
        let x1 =
            pr.f.prox_metric_affine(&(&at * &pr.a * gamma), &(&at * (&a * (2.0 * gamma) - &z)))?;
        let z1 = &z + (&pr.a * &x1 - &a) * gamma;
        let mut out = Vector::zeros(n + 2 * m1);
        out.rows_mut(0, n).copy_from(&x1);
        out.rows_mut(n, m1).copy_from(&a);
        out.rows_mut(n + m1, m1).copy_from(&z1);
        Ok(out)
    }

    pub fn run(&self, v0: &Vector, k: usize) -> Result<Vec<Vector>> {
        let mut out = Vec::with_capacity(k + 1);
        out.push(v0.clone());
        for _ in 0..k {
            let next = self.step(out.last().expect("nonempty"))?;
            out.push(next);
        }
        Ok(out)
    }
}

/// Finds the first catalogued degenerate case matching the scheme.
pub fn detect_case(problem: &SplitProblem, spec: &SchemeSpec) -> Option<DegenerateCase> {
    // the unit case is more specific than the general LAG-II reduction
    [
        DegenerateCase::Lag2Drs,
        DegenerateCase::Lag2Reduced,
        DegenerateCase::AdmmReduced,
        DegenerateCase::Pds1Drs,
    ]
    .into_iter()
    .find(|&c| check_case(problem, spec, c).is_ok())
}

/// `v⁺ = prox_g(v - 2s) + s` with `s = prox_{f*∘Aᵀ}(v)` from the conjugate-side solver.
pub fn lag2_drs_composition(problem: &SplitProblem, v: &Vector) -> Result<Vector> {
    let s = proxlib::prox_conjugate_composition(&problem.f, &problem.a, v, 1e-14)?;
    Ok(problem.g.prox_scalar(&(v - &s * 2.0), 1.0)? + s)
}

/// `v⁺ = v - prox_f(v) + prox_g(2 prox_f(v) - v)`.
pub fn pds1_drs_composition(problem: &SplitProblem, v: &Vector) -> Result<Vector> {
    let pf = problem.f.prox_scalar(v, 1.0)?;
    let pg = problem.g.prox_scalar(&(&pf * 2.0 - v), 1.0)?;
    Ok(v - pf + pg)
}

/// Douglas-Rachford iterate on the dual problem.
#[derive(Clone, Debug, PartialEq)]
pub struct DrsState {
    pub z: Vector,
    pub gamma: f64,
}

impl DrsState {
    pub fn new(z: Vector, gamma: f64) -> Result<Self> {
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(Error::Argument("DRS parameter must be positive".into()));
        }
        Ok(Self { z, gamma })
    }

    /// `p = prox_{γg*}(z) = z - γ prox_{g/γ}(z/γ)`.
    pub fn dual(&self, g: &ProxFunction) -> Result<Vector> {
        Ok(&self.z - g.prox_scalar(&(&self.z / self.gamma), 1.0 / self.gamma)? * self.gamma)
    }
}

/// One Douglas-Rachford step on `min_p f*(-Aᵀp) + g*(p)`.
pub fn drs_step(problem: &SplitProblem, st: &DrsState) -> Result<DrsState> {
    if st.z.len() != problem.m1() {
        return Err(Error::Dimension(
            "z must live in the range space of A".into(),
        ));
    }
    let gamma = st.gamma;
    let p = st.dual(&problem.g)?;
    let at = problem.a.transpose();
    // x = argmin f + γ/2 ‖Ax + (2p - z)/γ‖²
    let shift = (&p * 2.0 - &st.z) / gamma;
    let x = problem
        .f
        .prox_metric_affine(&(&at * &problem.a * gamma), &(-(&at * shift) * gamma))?;
    let w = &p * 2.0 - &st.z + &problem.a * x * gamma;
    DrsState::new(&st.z + w - p, gamma)
}

/// ADMM start linked to a DRS point: `a⁰ = prox_{g/γ}(z⁰/γ)`, `p⁰ = z⁰ - γa⁰`.
pub fn admm_start_from_z(
    problem: &SplitProblem,
    z0: &Vector,
    gamma: f64,
    x0: &Vector,
) -> Result<StackedPoint> {
    let a0 = problem.g.prox_scalar(&(z0 / gamma), 1.0 / gamma)?;
    let p0 = z0 - &a0 * gamma;
    StackedPoint::from_blocks(&problem.layout(Family::Lag)?, &[x0, &a0, &p0])
}
