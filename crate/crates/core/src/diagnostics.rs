//! Lagrangians, the Π difference, generalized Bregman bounds, ergodic averages,
//! restricted primal-dual gaps and rate certificates.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linops::{self, BlockName, Mat, StackedPoint, Vector};
use crate::proxlib::{ExtReal, ProxFunction, SubdiffBox};
use crate::schemes::{Family, PpaMatrices, SplitProblem};

pub use crate::schemes::Trace;

use BlockName::{A as BA, B as BB, P as BP, X as BX};

/// Slack for locating kinks of the subdifferential at a reference saddle point.
pub const SADDLE_KINK_TOL: f64 = 1e-8;

fn ext_add(a: ExtReal, b: ExtReal) -> Result<ExtReal> {
    a.add(b)
        .ok_or_else(|| Error::Domain("expression of the form +inf - inf".into()))
}

fn h_of(problem: &SplitProblem) -> Result<(&ProxFunction, &Mat)> {
    match (&problem.h, &problem.b) {
        (Some(h), Some(b)) => Ok((h, b)),
        _ => Err(Error::Argument("problem has no third term".into())),
    }
}

/// `f(x) + g(a) + pᵀ(Ax - a)`.
pub fn lagrangian(problem: &SplitProblem, x: &Vector, a: &Vector, p: &Vector) -> Result<ExtReal> {
    let fx = problem.f.value(x)?;
    let ga = problem.g.value(a)?;
    Ok(ext_add(fx, ga)?.add_f(p.dot(&(&problem.a * x - a))))
}

/// `L(x, a, p) + ½‖Ax - a‖²_Γ`.
pub fn aug_lagrangian(
    problem: &SplitProblem,
    x: &Vector,
    a: &Vector,
    p: &Vector,
    gamma: &Mat,
) -> Result<ExtReal> {
    let r = &problem.a * x - a;
    Ok(lagrangian(problem, x, a, p)?.add_f(0.5 * linops::quad_form(&r, gamma)))
}

/// `f(x) + pᵀAx - g*(p)`.
pub fn pd_lagrangian(problem: &SplitProblem, x: &Vector, p: &Vector) -> Result<ExtReal> {
    let fx = problem.f.value(x)?;
    let gs = problem.g.conj_value(p)?;
    Ok(ext_add(fx, gs.neg())?.add_f(p.dot(&(&problem.a * x))))
}

/// `f(x) + g(a) + pᵀ(Ax - a) + bᵀBx - h*(b)`.
pub fn mix_lagrangian(
    problem: &SplitProblem,
    x: &Vector,
    a: &Vector,
    b: &Vector,
    p: &Vector,
) -> Result<ExtReal> {
    let (h, bm) = h_of(problem)?;
    let base = lagrangian(problem, x, a, p)?;
    let hs = h.conj_value(b)?;
    Ok(ext_add(base, hs.neg())?.add_f(b.dot(&(bm * x))))
}

/// `Π(c, c') = L(x, a, p') - L(x', a', p)` with the family's Lagrangian
/// (for the three-function family the dual pair is `(b, p)`).
pub fn pi_difference(
    problem: &SplitProblem,
    family: Family,
    c: &StackedPoint,
    cp: &StackedPoint,
) -> Result<ExtReal> {
    let left;
    let right;
    match family {
        Family::Lag => {
            left = lagrangian(problem, &c.block(BX)?, &c.block(BA)?, &cp.block(BP)?)?;
            right = lagrangian(problem, &cp.block(BX)?, &cp.block(BA)?, &c.block(BP)?)?;
        }
        Family::Pds => {
            left = pd_lagrangian(problem, &c.block(BX)?, &cp.block(BP)?)?;
            right = pd_lagrangian(problem, &cp.block(BX)?, &c.block(BP)?)?;
        }
        Family::Mix => {
            left = mix_lagrangian(
                problem,
                &c.block(BX)?,
                &c.block(BA)?,
                &cp.block(BB)?,
                &cp.block(BP)?,
            )?;
            right = mix_lagrangian(
                problem,
                &cp.block(BX)?,
                &cp.block(BA)?,
                &c.block(BB)?,
                &c.block(BP)?,
            )?;
        }
    }
    left.sub(right)
        .ok_or_else(|| Error::Domain("Π is undefined (+inf - inf)".into()))
}

/// Primal blocks `u` of the family's `q`, with the function acting on each block.
fn q_parts(
    problem: &SplitProblem,
    family: Family,
) -> Result<Vec<(BlockName, &ProxFunction, bool)>> {
    Ok(match family {
        Family::Lag => vec![(BX, &problem.f, false), (BA, &problem.g, false)],
        Family::Pds => vec![(BX, &problem.f, false), (BP, &problem.g, true)],
        Family::Mix => vec![
            (BX, &problem.f, false),
            (BA, &problem.g, false),
            (BB, h_of(problem)?.0, true),
        ],
    })
}

fn part_value(func: &ProxFunction, conj: bool, v: &Vector) -> Result<ExtReal> {
    if conj {
        func.conj_value(v)
    } else {
        func.value(v)
    }
}

fn part_box(func: &ProxFunction, conj: bool, v: &Vector, tol: f64) -> Result<SubdiffBox> {
    if conj {
        func.conj_subdiff_box_tol(v, tol)
    } else {
        func.subdiff_box_tol(v, tol)
    }
}

/// `(D♭_q(u, u⋆), D♯_q(u, u⋆))` with `q = f + g` (LAG), `f + g*` (PDS) or `f + g + h*` (MIX),
/// `u` the primal part of `c` and the infimum/supremum taken over `∂q(u⋆)`.
pub fn bregman_bounds(
    problem: &SplitProblem,
    family: Family,
    c: &StackedPoint,
    c_star: &StackedPoint,
) -> Result<(ExtReal, ExtReal)> {
    let mut dq = ExtReal::ZERO;
    let mut sup = ExtReal::ZERO;
    let mut inf = ExtReal::ZERO;
    for (name, func, conj) in q_parts(problem, family)? {
        let u = c.block(name)?;
        let us = c_star.block(name)?;
        let qu = part_value(func, conj, &u)?;
        let qs = part_value(func, conj, &us)?;
        let qs = qs
            .finite()
            .ok_or_else(|| Error::Domain("reference point lies outside dom q".into()))?;
        dq = ext_add(dq, qu.add_f(-qs))?;
        let bx = part_box(func, conj, &us, SADDLE_KINK_TOL)?;
        let d = &u - &us;
        sup = ext_add(sup, bx.sup_dot(&d))?;
        inf = ext_add(inf, bx.inf_dot(&d))?;
    }
    let flat = dq.sub(sup).unwrap_or(ExtReal::NegInf);
    let sharp = dq.sub(inf).unwrap_or(ExtReal::PosInf);
    Ok((flat, sharp))
}

/// Mean of the proximal outputs `c̃^0..c̃^{k-1}`.
pub fn ergodic_average(trace: &Trace, k: usize) -> Result<StackedPoint> {
    if k == 0 {
        return Err(Error::Argument("ergodic average needs k >= 1".into()));
    }
    if k > trace.tildes.len() {
        return Err(Error::Argument(format!(
            "k = {k} exceeds the trace length {}",
            trace.tildes.len()
        )));
    }
    let mut sum = Vector::zeros(trace.tildes[0].values().len());
    for t in &trace.tildes[..k] {
        sum += t.values();
    }
    trace.tildes[0].with_values(sum / k as f64)
}

/// Running ergodic averages for every `k = 1..=K`.
pub fn ergodic_series(trace: &Trace) -> Result<Vec<StackedPoint>> {
    let mut out = Vec::with_capacity(trace.tildes.len());
    let Some(first) = trace.tildes.first() else {
        return Ok(out);
    };
    let mut sum = Vector::zeros(first.values().len());
    for (i, t) in trace.tildes.iter().enumerate() {
        sum += t.values();
        out.push(first.with_values(&sum / (i + 1) as f64)?);
    }
    Ok(out)
}

/// Componentwise box `lo ≤ c ≤ hi` over the family layout.
#[derive(Clone, Debug, PartialEq)]
pub struct GapBoxes {
    pub lo: StackedPoint,
    pub hi: StackedPoint,
}

impl GapBoxes {
    pub fn new(lo: StackedPoint, hi: StackedPoint) -> Result<Self> {
        if lo.layout() != hi.layout() {
            return Err(Error::Dimension("box bounds use different layouts".into()));
        }
        if lo
            .values()
            .iter()
            .zip(hi.values().iter())
            .any(|(l, h)| !(l <= h))
        {
            return Err(Error::Argument("box needs lo <= hi".into()));
        }
        Ok(Self { lo, hi })
    }

    /// `center ± half_width` in every coordinate.
    pub fn around(center: &StackedPoint, half_width: f64) -> Result<Self> {
        if !(half_width >= 0.0) || !half_width.is_finite() {
            return Err(Error::Argument("half width must be finite and >= 0".into()));
        }
        let lo = center.with_values(center.values().add_scalar(-half_width))?;
        let hi = center.with_values(center.values().add_scalar(half_width))?;
        Self::new(lo, hi)
    }

    pub fn point(c: &StackedPoint) -> Self {
        Self {
            lo: c.clone(),
            hi: c.clone(),
        }
    }

    /// Domain-based boxes of the value-rate remarks: primal blocks are the domains of the
    /// primal functions, dual blocks the domains of the conjugates, and blocks without a
    /// bounded domain are pinned to the reference point.
    pub fn from_domains(
        problem: &SplitProblem,
        family: Family,
        c_star: &StackedPoint,
    ) -> Result<Self> {
        let mut lo = c_star.clone();
        let mut hi = c_star.clone();
        let mut set = |name: BlockName, bounds: (Vector, Vector)| -> Result<()> {
            if bounds
                .0
                .iter()
                .chain(bounds.1.iter())
                .any(|v| !v.is_finite())
            {
                return Err(Error::Precondition(format!(
                    "the domain attached to block '{name}' is unbounded"
                )));
            }
            lo.set_block(name, &bounds.0)?;
            hi.set_block(name, &bounds.1)
        };
        match family {
            Family::Lag => {
                set(BX, problem.f.domain_bounds())?;
                set(BA, problem.g.domain_bounds())?;
            }
            Family::Pds => {
                set(BX, problem.f.domain_bounds())?;
                set(BP, problem.g.conj_domain_bounds())?;
            }
            Family::Mix => {
                set(BX, problem.f.domain_bounds())?;
                set(BA, problem.g.domain_bounds())?;
                set(BB, h_of(problem)?.0.conj_domain_bounds())?;
            }
        }
        Self::new(lo, hi)
    }

    pub fn contains(&self, c: &StackedPoint, tol: f64) -> bool {
        c.values()
            .iter()
            .zip(self.lo.values().iter().zip(self.hi.values().iter()))
            .all(|(v, (l, h))| *v >= l - tol && *v <= h + tol)
    }

    fn block(&self, name: BlockName) -> Result<(Vector, Vector)> {
        Ok((self.lo.block(name)?, self.hi.block(name)?))
    }

    fn require_finite(&self) -> Result<()> {
        if self
            .lo
            .values()
            .iter()
            .chain(self.hi.values().iter())
            .any(|v| !v.is_finite())
        {
            return Err(Error::Argument("gap boxes must be bounded".into()));
        }
        Ok(())
    }
}

/// `Σ_i min_{t ∈ [lo_i, hi_i]} φ_i(t) + slope_i t` for a separable function or its conjugate.
fn inf_separable(
    func: &ProxFunction,
    conj: bool,
    slope: &Vector,
    lo: &Vector,
    hi: &Vector,
) -> Result<ExtReal> {
    let mut acc = ExtReal::ZERO;
    for i in 0..func.dim() {
        let piece = if conj {
            func.conj_coord(i)?
        } else {
            func.coord(i)?
        };
        acc = ext_add(acc, piece.min_with_slope(slope[i], lo[i], hi[i]))?;
    }
    Ok(acc)
}

/// `sup_{v ∈ [lo, hi]} vᵀ r`.
fn sup_linear(r: &Vector, lo: &Vector, hi: &Vector) -> f64 {
    (0..r.len()).map(|i| (lo[i] * r[i]).max(hi[i] * r[i])).sum()
}

/// Restricted primal-dual gap `Ψ_B(c)`: sup of the Lagrangian over the dual blocks of the
/// box minus its inf over the primal blocks.
pub fn restricted_gap(
    problem: &SplitProblem,
    family: Family,
    c: &StackedPoint,
    boxes: &GapBoxes,
) -> Result<ExtReal> {
    boxes.require_finite()?;
    let am = &problem.a;
    let at = am.transpose();
    let x = c.block(BX)?;
    let (xlo, xhi) = boxes.block(BX)?;
    match family {
        Family::Lag => {
            let (a, p) = (c.block(BA)?, c.block(BP)?);
            let (alo, ahi) = boxes.block(BA)?;
            let (plo, phi) = boxes.block(BP)?;
            let fg = ext_add(problem.f.value(&x)?, problem.g.value(&a)?)?;
            let upper = fg.add_f(sup_linear(&(am * &x - &a), &plo, &phi));
            let lower = ext_add(
                inf_separable(&problem.f, false, &(&at * &p), &xlo, &xhi)?,
                inf_separable(&problem.g, false, &(-&p), &alo, &ahi)?,
            )?;
            upper
                .sub(lower)
                .ok_or_else(|| Error::Domain("gap is undefined".into()))
        }
        Family::Pds => {
            let p = c.block(BP)?;
            let (plo, phi) = boxes.block(BP)?;
            // sup_{p'} p'ᵀAx - g*(p') = -inf_{p'} g*(p') - (Ax)ᵀp'
            let sup_dual = inf_separable(&problem.g, true, &-(am * &x), &plo, &phi)?.neg();
            let upper = ext_add(problem.f.value(&x)?, sup_dual)?;
            let inf_primal = inf_separable(&problem.f, false, &(&at * &p), &xlo, &xhi)?;
            let lower = ext_add(inf_primal, problem.g.conj_value(&p)?.neg())?;
            upper
                .sub(lower)
                .ok_or_else(|| Error::Domain("gap is undefined".into()))
        }
        Family::Mix => {
            let (h, bm) = h_of(problem)?;
            let (a, b, p) = (c.block(BA)?, c.block(BB)?, c.block(BP)?);
            let (alo, ahi) = boxes.block(BA)?;
            let (blo, bhi) = boxes.block(BB)?;
            let (plo, phi) = boxes.block(BP)?;
            let fg = ext_add(problem.f.value(&x)?, problem.g.value(&a)?)?;
            let sup_b = inf_separable(h, true, &-(bm * &x), &blo, &bhi)?.neg();
            let upper = ext_add(fg, sup_b)?.add_f(sup_linear(&(am * &x - &a), &plo, &phi));
            let slope_x = &at * &p + bm.transpose() * &b;
            let lower = ext_add(
                ext_add(
                    inf_separable(&problem.f, false, &slope_x, &xlo, &xhi)?,
                    inf_separable(&problem.g, false, &(-&p), &alo, &ahi)?,
                )?,
                h.conj_value(&b)?.neg(),
            )?;
            upper
                .sub(lower)
                .ok_or_else(|| Error::Domain("gap is undefined".into()))
        }
    }
}

/// Golden-section minimizer of a unimodal function on `[lo, hi]`; returns `(t, φ(t))`.
pub fn golden_section_min(phi: impl Fn(f64) -> f64, lo: f64, hi: f64, tol: f64) -> (f64, f64) {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (phi(c), phi(d));
    while (b - a).abs() > tol * (1.0 + a.abs().max(b.abs())) {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = phi(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = phi(d);
        }
    }
    let candidates = [(lo, phi(lo)), (hi, phi(hi)), (c, fc), (d, fd)];
    candidates
        .into_iter()
        .min_by(|x, y| x.1.total_cmp(&y.1))
        .expect("nonempty")
}

/// Supremum of `‖c0 - c‖²_S` over a box.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BoxSup {
    pub value: f64,
    /// `true` when every corner was enumerated; otherwise `value` is the upper bound
    /// `λ_max(S) · sup ‖c0 - c‖²`.
    pub exact: bool,
}

/// Free coordinates beyond which corner enumeration is replaced by an eigenvalue bound.
pub const MAX_ENUMERATED_CORNERS_LOG2: usize = 22;

/// `sup_{c ∈ box} ‖c0 - c‖²_S`; the function is convex so the sup sits at a corner.
pub fn box_sup_sqnorm(c0: &StackedPoint, boxes: &GapBoxes, s: &Mat) -> Result<BoxSup> {
    boxes.require_finite()?;
    let lo = boxes.lo.values();
    let hi = boxes.hi.values();
    let c0v = c0.values();
    let sym = linops::symmetric_part(s);
    let free: Vec<usize> = (0..lo.len()).filter(|&i| lo[i] < hi[i]).collect();
    let base = Vector::from_iterator(lo.len(), (0..lo.len()).map(|i| c0v[i] - lo[i]));
    if free.len() > MAX_ENUMERATED_CORNERS_LOG2 {
        let (_, lmax) = linops::spectral_bounds(&sym)?;
        let far: f64 = (0..lo.len())
            .map(|i| (c0v[i] - lo[i]).powi(2).max((c0v[i] - hi[i]).powi(2)))
            .sum();
        return Ok(BoxSup {
            value: lmax.max(0.0) * far,
            exact: false,
        });
    }
    // walk the corners in Gray-code order, updating d = c0 - c and S d incrementally
    let mut d = base;
    let mut sd = &sym * &d;
    let mut val = d.dot(&sd);
    let mut best = val;
    let mut at_hi = vec![false; free.len()];
    for k in 1u64..(1u64 << free.len()) {
        let j = k.trailing_zeros() as usize;
        let i = free[j];
        at_hi[j] = !at_hi[j];
        let delta = if at_hi[j] {
            lo[i] - hi[i]
        } else {
            hi[i] - lo[i]
        };
        // d_i changes by delta
        let col = sym.column(i);
        val += 2.0 * delta * sd[i] + delta * delta * sym[(i, i)];
        d[i] += delta;
        sd.axpy(delta, &col, 1.0);
        best = best.max(val);
    }
    Ok(BoxSup {
        value: best,
        exact: true,
    })
}

/// Outcome of one certified inequality over a run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub evaluated: usize,
    pub violations: usize,
    /// Smallest observed `rhs - lhs`.
    pub worst_margin: f64,
    pub first_violation: Option<usize>,
    pub skipped: Option<String>,
    #[serde(skip)]
    pub margins: Vec<f64>,
}

impl CheckResult {
    fn new(name: &str) -> Self {
        Self {
            name: name.to_string(),
            evaluated: 0,
            violations: 0,
            worst_margin: f64::INFINITY,
            first_violation: None,
            skipped: None,
            margins: Vec::new(),
        }
    }

    fn skipped(name: &str, why: &str) -> Self {
        let mut c = Self::new(name);
        c.skipped = Some(why.to_string());
        c
    }

    fn record(&mut self, k: usize, margin: f64, tol: f64) {
        self.evaluated += 1;
        self.margins.push(margin);
        if margin.is_nan() || margin < self.worst_margin {
            self.worst_margin = if margin.is_nan() {
                f64::NEG_INFINITY
            } else {
                margin
            };
        }
        if !(margin >= -tol) {
            self.violations += 1;
            self.first_violation.get_or_insert(k);
        }
    }

    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RateCertificate {
    pub checks: Vec<CheckResult>,
    /// `‖c^k - c⋆‖_S` for `k = 0..=K` (empty without a reference).
    pub dist_s: Vec<f64>,
    /// `‖c^k - c^{k+1}‖_S` for `k = 0..K`.
    pub step_s: Vec<f64>,
    /// `Π(c̄_k, c⋆)` for `k = 1..=K`.
    pub pi_ergodic: Vec<ExtReal>,
    /// `√(λ_max(S)/λ_min(H))` of the pointwise bound, when `H` is positive definite.
    pub pointwise_constant: Option<f64>,
    pub passed: bool,
}

impl RateCertificate {
    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Absolute slack of the Fejér, monotonicity and pointwise checks (relative to their scale).
pub const FEJER_TOL: f64 = 1e-10;
/// Absolute slack of the ergodic checks (relative to their scale).
pub const ERGODIC_TOL: f64 = 1e-8;

fn sqnorm_s(v: &Vector, s: &Mat) -> f64 {
    linops::quad_form(v, s)
}

/// Certifies a run against the monotonicity and rate inequalities of the relaxed PPA.
pub fn rate_certificate(
    problem: &SplitProblem,
    trace: &Trace,
    ppa: &PpaMatrices,
    c_star: Option<&StackedPoint>,
) -> Result<RateCertificate> {
    let family = ppa.id.family();
    let s = linops::symmetric_part(ppa.s.dense());
    let h = linops::symmetric_part(&ppa.h());
    let k_steps = trace.len();
    let states = &trace.states;
    let step_sq: Vec<f64> = (0..k_steps)
        .map(|k| sqnorm_s(&(states[k].values() - states[k + 1].values()), &s))
        .collect();
    let step_h: Vec<f64> = (0..k_steps)
        .map(|k| sqnorm_s(&(states[k].values() - states[k + 1].values()), &h))
        .collect();
    let step_s: Vec<f64> = step_sq.iter().map(|v| v.max(0.0).sqrt()).collect();

    // a negative quadratic form means ‖·‖_S is not a norm along this run; the monotonicity
    // statements are then void, so those steps count against the checks
    let mut mono = CheckResult::new("step_nonincrease");
    for k in 0..k_steps.saturating_sub(1) {
        let margin = (step_s[k] - step_s[k + 1]).min(step_sq[k + 1]);
        mono.record(k, margin, FEJER_TOL * (1.0 + step_s[k]));
    }

    let (s_lo, s_hi) = linops::spectral_bounds(&s)?;
    let (h_lo, _) = linops::spectral_bounds(&h)?;
    let s_ok = s_lo > linops::DEFAULT_REL_TOL * (1.0 + s_hi.abs());
    let pointwise_constant =
        (h_lo > linops::DEFAULT_REL_TOL * (1.0 + s_hi.abs()) && s_ok).then(|| (s_hi / h_lo).sqrt());

    let mut checks = Vec::new();
    let mut dist_s = Vec::new();
    let mut pi_ergodic = Vec::new();
    match c_star {
        None => {
            checks.push(CheckResult::skipped("fejer", "no reference saddle point"));
            checks.push(mono);
            checks.push(CheckResult::skipped(
                "pointwise_rate",
                "no reference saddle point",
            ));
            checks.push(CheckResult::skipped(
                "ergodic_rate",
                "no reference saddle point",
            ));
        }
        Some(cs) => {
            let dist_sq: Vec<f64> = states
                .iter()
                .map(|c| sqnorm_s(&(c.values() - cs.values()), &s))
                .collect();
            dist_s = dist_sq.iter().map(|v| v.max(0.0).sqrt()).collect();
            let mut fejer = CheckResult::new("fejer");
            for k in 0..k_steps {
                let margin = (dist_sq[k] - step_h[k] - dist_sq[k + 1]).min(dist_sq[k + 1]);
                fejer.record(k, margin, FEJER_TOL * (1.0 + dist_sq[k].abs()));
            }
            let pointwise = match pointwise_constant {
                Some(cst) => {
                    let mut chk = CheckResult::new("pointwise_rate");
                    for k in 0..k_steps {
                        let bound = cst * dist_s[0] / ((k + 1) as f64).sqrt();
                        chk.record(k, bound - step_s[k], FEJER_TOL * (1.0 + bound));
                    }
                    chk
                }
                None => {
                    CheckResult::skipped("pointwise_rate", "S or M⁻ᵀGM⁻¹ is not positive definite")
                }
            };
            let mut ergodic = CheckResult::new("ergodic_rate");
            let averages = ergodic_series(trace)?;
            for (i, avg) in averages.iter().enumerate() {
                let k = i + 1;
                let bound = dist_sq[0] / (2.0 * k as f64);
                let pi = pi_difference(problem, family, avg, cs).unwrap_or(ExtReal::PosInf);
                pi_ergodic.push(pi);
                let margin = match pi {
                    ExtReal::Finite(v) => bound - v,
                    ExtReal::NegInf => f64::INFINITY,
                    ExtReal::PosInf => f64::NEG_INFINITY,
                };
                ergodic.record(k, margin, ERGODIC_TOL * (1.0 + bound));
            }
            checks.push(fejer);
            checks.push(mono);
            checks.push(pointwise);
            checks.push(ergodic);
        }
    }
    let passed = checks.iter().all(|c| c.passed());
    Ok(RateCertificate {
        checks,
        dist_s,
        step_s,
        pi_ergodic,
        pointwise_constant,
        passed,
    })
}

/// `Ψ_B(c̄_k)` and its bound `sup_B ‖c⁰ - c‖²_S / (2k)` for `k = 1..=K`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GapSeries {
    pub psi: Vec<ExtReal>,
    pub bound: Vec<f64>,
    pub sup: BoxSup,
}

impl GapSeries {
    /// `bound - Ψ` per `k`, `-inf` where `Ψ` is `+inf`.
    pub fn slack(&self) -> Vec<f64> {
        self.psi
            .iter()
            .zip(&self.bound)
            .map(|(p, b)| match p {
                ExtReal::Finite(v) => b - v,
                ExtReal::PosInf => f64::NEG_INFINITY,
                ExtReal::NegInf => f64::INFINITY,
            })
            .collect()
    }
}

pub fn gap_series(
    problem: &SplitProblem,
    trace: &Trace,
    ppa: &PpaMatrices,
    boxes: &GapBoxes,
) -> Result<GapSeries> {
    let family = ppa.id.family();
    let sup = box_sup_sqnorm(&trace.states[0], boxes, ppa.s.dense())?;
    let mut psi = Vec::with_capacity(trace.len());
    let mut bound = Vec::with_capacity(trace.len());
    for (i, avg) in ergodic_series(trace)?.iter().enumerate() {
        psi.push(restricted_gap(problem, family, avg, boxes)?);
        bound.push(sup.value / (2.0 * (i + 1) as f64));
    }
    Ok(GapSeries { psi, bound, sup })
}

/// Value gap at the ergodic points with its scaled series `k · gap_k`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ValueRate {
    pub gap: Vec<ExtReal>,
    pub k_gap: Vec<ExtReal>,
    /// Whether the domains named by the hypothesis of the bound are bounded.
    pub hypotheses_hold: bool,
    /// `½ sup_B ‖c⁰ - c‖²_S` with the domain boxes, when they are bounded.
    pub constant: Option<f64>,
}

fn scaled(gaps: &[ExtReal]) -> Vec<ExtReal> {
    gaps.iter()
        .enumerate()
        .map(|(i, g)| g.scale((i + 1) as f64))
        .collect()
}

fn domain_constant(
    problem: &SplitProblem,
    family: Family,
    trace: &Trace,
    ppa: &PpaMatrices,
    c_star: &StackedPoint,
) -> Option<f64> {
    let boxes = GapBoxes::from_domains(problem, family, c_star).ok()?;
    let sup = box_sup_sqnorm(&trace.states[0], &boxes, ppa.s.dense()).ok()?;
    Some(0.5 * sup.value)
}

fn bounded(lo_hi: (Vector, Vector)) -> bool {
    lo_hi.0.iter().chain(lo_hi.1.iter()).all(|v| v.is_finite())
}

/// Dual objective `f*(-Aᵀp) + g*(p)` at the ergodic multipliers minus its value at `p⋆`.
///
/// `f*(-Aᵀp)` is evaluated coordinatewise for separable `f`.
pub fn dual_value_rate(
    problem: &SplitProblem,
    trace: &Trace,
    ppa: &PpaMatrices,
    c_star: &StackedPoint,
) -> Result<ValueRate> {
    let dual = |p: &Vector| -> Result<ExtReal> {
        let fs = problem.f.conj_value(&-(problem.a.transpose() * p))?;
        ext_add(fs, problem.g.conj_value(p)?)
    };
    let star = dual(&c_star.block(BP)?)?;
    let mut gap = Vec::with_capacity(trace.len());
    for avg in ergodic_series(trace)? {
        let d = dual(&avg.block(BP)?)?;
        gap.push(
            d.sub(star)
                .ok_or_else(|| Error::Domain("dual gap undefined".into()))?,
        );
    }
    let hypotheses_hold = bounded(problem.f.domain_bounds()) && bounded(problem.g.domain_bounds());
    Ok(ValueRate {
        k_gap: scaled(&gap),
        gap,
        hypotheses_hold,
        constant: domain_constant(problem, Family::Lag, trace, ppa, c_star),
    })
}

/// `f(x̂) + g(Ax̂) - f(x⋆) - g(Ax⋆)` at the ergodic primal points.
pub fn primal_value_rate(
    problem: &SplitProblem,
    trace: &Trace,
    ppa: &PpaMatrices,
    c_star: &StackedPoint,
) -> Result<ValueRate> {
    let primal = |x: &Vector| -> Result<ExtReal> {
        ext_add(problem.f.value(x)?, problem.g.value(&(&problem.a * x))?)
    };
    let star = primal(&c_star.block(BX)?)?;
    let mut gap = Vec::with_capacity(trace.len());
    for avg in ergodic_series(trace)? {
        let v = primal(&avg.block(BX)?)?;
        gap.push(
            v.sub(star)
                .ok_or_else(|| Error::Domain("primal gap undefined".into()))?,
        );
    }
    let hypotheses_hold =
        bounded(problem.f.domain_bounds()) && bounded(problem.g.conj_domain_bounds());
    Ok(ValueRate {
        k_gap: scaled(&gap),
        gap,
        hypotheses_hold,
        constant: domain_constant(problem, Family::Pds, trace, ppa, c_star),
    })
}

/// `f(x̂) + g(â) + h(Bx̂) - f(x⋆) - g(a⋆) - h(Bx⋆)`; reported as a series only, it may be
/// negative since `â` need not equal `Ax̂`.
pub fn mix_value_rate(
    problem: &SplitProblem,
    trace: &Trace,
    ppa: &PpaMatrices,
    c_star: &StackedPoint,
) -> Result<ValueRate> {
    let (h, bm) = h_of(problem)?;
    let value = |c: &StackedPoint| -> Result<ExtReal> {
        let x = c.block(BX)?;
        let fg = ext_add(problem.f.value(&x)?, problem.g.value(&c.block(BA)?)?)?;
        ext_add(fg, h.value(&(bm * &x))?)
    };
    let star = value(c_star)?;
    let mut gap = Vec::with_capacity(trace.len());
    for avg in ergodic_series(trace)? {
        gap.push(
            value(&avg)?
                .sub(star)
                .ok_or_else(|| Error::Domain("value gap undefined".into()))?,
        );
    }
    let hypotheses_hold = bounded(problem.f.domain_bounds())
        && bounded(problem.g.domain_bounds())
        && bounded(h.conj_domain_bounds());
    let _ = ppa;
    Ok(ValueRate {
        k_gap: scaled(&gap),
        gap,
        hypotheses_hold,
        constant: None,
    })
}
