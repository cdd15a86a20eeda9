//! Convex function objects: values, proximity operators under general metrics,
//! conjugates and componentwise subdifferential boxes.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linops::{self, Mat, Vector};

/// Default tolerance of inner solvers.
pub const INNER_TOL: f64 = 1e-12;
/// Default iteration cap of inner solvers.
pub const INNER_MAX_ITER: usize = 100_000;
/// Slack used when deciding set membership of computed points (box and ball indicators).
pub const DOMAIN_TOL: f64 = 1e-12;

/// Real number extended with both infinities.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum ExtReal {
    Finite(f64),
    PosInf,
    NegInf,
}

impl ExtReal {
    pub const ZERO: ExtReal = ExtReal::Finite(0.0);

    pub fn finite(self) -> Option<f64> {
        match self {
            ExtReal::Finite(v) => Some(v),
            _ => None,
        }
    }

    pub fn is_finite(self) -> bool {
        matches!(self, ExtReal::Finite(_))
    }

    pub fn neg(self) -> ExtReal {
        match self {
            ExtReal::Finite(v) => ExtReal::Finite(-v),
            ExtReal::PosInf => ExtReal::NegInf,
            ExtReal::NegInf => ExtReal::PosInf,
        }
    }

    /// Sum; `None` for `+inf + -inf`.
    pub fn add(self, other: ExtReal) -> Option<ExtReal> {
        use ExtReal::*;
        match (self, other) {
            (Finite(a), Finite(b)) => Some(Finite(a + b)),
            (PosInf, NegInf) | (NegInf, PosInf) => None,
            (PosInf, _) | (_, PosInf) => Some(PosInf),
            (NegInf, _) | (_, NegInf) => Some(NegInf),
        }
    }

    pub fn sub(self, other: ExtReal) -> Option<ExtReal> {
        self.add(other.neg())
    }

    pub fn add_f(self, v: f64) -> ExtReal {
        match self {
            ExtReal::Finite(a) => ExtReal::Finite(a + v),
            other => other,
        }
    }

    pub fn scale(self, s: f64) -> ExtReal {
        match self {
            ExtReal::Finite(a) => ExtReal::Finite(a * s),
            _ if s == 0.0 => ExtReal::ZERO,
            inf if s > 0.0 => inf,
            inf => inf.neg(),
        }
    }

    /// `self <= other` in the extended order.
    pub fn le(self, other: ExtReal) -> bool {
        use ExtReal::*;
        match (self, other) {
            (NegInf, _) | (_, PosInf) => true,
            (PosInf, _) | (_, NegInf) => false,
            (Finite(a), Finite(b)) => a <= b,
        }
    }

    pub fn min(self, other: ExtReal) -> ExtReal {
        if self.le(other) {
            self
        } else {
            other
        }
    }

    pub fn max(self, other: ExtReal) -> ExtReal {
        if self.le(other) {
            other
        } else {
            self
        }
    }

    /// Float image, used only when printing.
    pub fn to_f64_lossy(self) -> f64 {
        match self {
            ExtReal::Finite(v) => v,
            ExtReal::PosInf => f64::INFINITY,
            ExtReal::NegInf => f64::NEG_INFINITY,
        }
    }
}

impl fmt::Display for ExtReal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExtReal::Finite(v) => write!(f, "{v}"),
            ExtReal::PosInf => f.write_str("+inf"),
            ExtReal::NegInf => f.write_str("-inf"),
        }
    }
}

fn ext_sum(items: impl IntoIterator<Item = ExtReal>) -> ExtReal {
    // Terms here never mix +inf and -inf: callers sum values of one function.
    items.into_iter().fold(ExtReal::ZERO, |acc, v| {
        acc.add(v).unwrap_or(ExtReal::PosInf)
    })
}

/// Built-in convex function families.
#[derive(Clone, Debug, PartialEq)]
pub enum FunctionKind {
    Zero,
    /// `<q, x>`
    Linear {
        q: Vector,
    },
    /// `1/2 xᵀPx + qᵀx`
    Quadratic {
        p: Mat,
        q: Vector,
    },
    /// `w * ||x||_1`
    L1 {
        weight: f64,
    },
    /// indicator of `[lo, hi]`
    Box {
        lo: Vector,
        hi: Vector,
    },
    /// `weight/2 * ||x||²`
    L2Squared {
        weight: f64,
    },
}

/// Componentwise interval enclosing a subdifferential. Infinite ends are allowed.
#[derive(Clone, Debug, PartialEq)]
pub struct SubdiffBox {
    pub lo: Vector,
    pub hi: Vector,
}

impl SubdiffBox {
    pub fn singleton(v: Vector) -> Self {
        Self {
            lo: v.clone(),
            hi: v,
        }
    }

    pub fn len(&self) -> usize {
        self.lo.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lo.is_empty()
    }

    /// Euclidean distance from `v` to the box.
    pub fn distance(&self, v: &Vector) -> f64 {
        v.iter()
            .enumerate()
            .map(|(i, &x)| {
                let d = if x < self.lo[i] {
                    self.lo[i] - x
                } else if x > self.hi[i] {
                    x - self.hi[i]
                } else {
                    0.0
                };
                d * d
            })
            .sum::<f64>()
            .sqrt()
    }

    pub fn contains(&self, v: &Vector, tol: f64) -> bool {
        self.distance(v) <= tol
    }

    /// `sup_{v in box} <v, d>` with the convention `0 * inf = 0`.
    pub fn sup_dot(&self, d: &Vector) -> ExtReal {
        let mut acc = ExtReal::ZERO;
        for i in 0..d.len() {
            let term = if d[i] > 0.0 {
                ext_from_float(self.hi[i] * d[i])
            } else if d[i] < 0.0 {
                ext_from_float(self.lo[i] * d[i])
            } else {
                ExtReal::ZERO
            };
            acc = acc.add(term).unwrap_or(ExtReal::PosInf);
        }
        acc
    }

    /// `inf_{v in box} <v, d>`.
    pub fn inf_dot(&self, d: &Vector) -> ExtReal {
        let neg = SubdiffBox {
            lo: -&self.hi,
            hi: -&self.lo,
        };
        neg.sup_dot(d).neg()
    }

    /// Concatenation of boxes, for stacked variables.
    pub fn stack(parts: &[SubdiffBox]) -> SubdiffBox {
        let lo: Vec<f64> = parts.iter().flat_map(|b| b.lo.iter().copied()).collect();
        let hi: Vec<f64> = parts.iter().flat_map(|b| b.hi.iter().copied()).collect();
        SubdiffBox {
            lo: Vector::from_vec(lo),
            hi: Vector::from_vec(hi),
        }
    }
}

fn ext_from_float(v: f64) -> ExtReal {
    if v == f64::INFINITY {
        ExtReal::PosInf
    } else if v == f64::NEG_INFINITY {
        ExtReal::NegInf
    } else {
        ExtReal::Finite(v)
    }
}

/// One coordinate of a separable function: a convex piecewise quadratic on the line.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Coord1D {
    /// `a/2 t² + b t + c`
    Quad { a: f64, b: f64, c: f64 },
    /// `w |t| + b t`
    Abs { w: f64, b: f64 },
    /// indicator of `[lo, hi]` plus `b t`
    Interval { lo: f64, hi: f64, b: f64 },
    /// `max(lo (t - s), hi (t - s))`, the support function of `[lo, hi]` shifted by `s`
    Support { lo: f64, hi: f64, s: f64 },
}

impl Coord1D {
    pub fn value(&self, t: f64) -> ExtReal {
        match *self {
            Coord1D::Quad { a, b, c } => ExtReal::Finite(0.5 * a * t * t + b * t + c),
            Coord1D::Abs { w, b } => ExtReal::Finite(w * t.abs() + b * t),
            Coord1D::Interval { lo, hi, b } => {
                if t >= lo - DOMAIN_TOL * (1.0 + lo.abs())
                    && t <= hi + DOMAIN_TOL * (1.0 + hi.abs())
                {
                    ExtReal::Finite(b * t)
                } else {
                    ExtReal::PosInf
                }
            }
            Coord1D::Support { lo, hi, s } => {
                let d = t - s;
                if d > 0.0 {
                    ext_from_float(hi * d)
                } else if d < 0.0 {
                    ext_from_float(lo * d)
                } else {
                    ExtReal::ZERO
                }
            }
        }
    }

    /// `min_{t in [lo, hi]} phi(t) + slope t` over a finite interval, by candidate enumeration.
    pub fn min_with_slope(&self, slope: f64, lo: f64, hi: f64) -> ExtReal {
        let mut cands = vec![lo, hi];
        match *self {
            Coord1D::Quad { a, b, .. } => {
                if a > 0.0 {
                    cands.push(-(b + slope) / a);
                }
            }
            Coord1D::Abs { .. } => cands.push(0.0),
            Coord1D::Interval { lo: l, hi: h, .. } => {
                cands.push(l);
                cands.push(h);
            }
            Coord1D::Support { s, .. } => cands.push(s),
        }
        let mut best = ExtReal::PosInf;
        for t in cands {
            if !t.is_finite() || t < lo || t > hi {
                continue;
            }
            best = best.min(self.value(t).add_f(slope * t));
        }
        best
    }
}

/// Convex function with an optional linear tilt `<t, x>` added to its kind.
#[derive(Clone, Debug, PartialEq)]
pub struct ProxFunction {
    kind: FunctionKind,
    dim: usize,
    tilt: Option<Vector>,
}

fn check_len(v: &Vector, n: usize, what: &str) -> Result<()> {
    if v.len() != n {
        return Err(Error::Dimension(format!(
            "{what}: expected length {n}, got {}",
            v.len()
        )));
    }
    Ok(())
}

fn soft(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

impl ProxFunction {
    pub fn zero(dim: usize) -> Self {
        Self {
            kind: FunctionKind::Zero,
            dim,
            tilt: None,
        }
    }

    pub fn linear(q: Vector) -> Self {
        Self {
            dim: q.len(),
            kind: FunctionKind::Linear { q },
            tilt: None,
        }
    }

    pub fn quadratic(p: Mat, q: Vector) -> Result<Self> {
        if p.nrows() != p.ncols() || p.nrows() != q.len() {
            return Err(Error::Shape(
                "quadratic: P must be n x n with q of length n".into(),
            ));
        }
        if (&p - p.transpose()).norm() > 1e-12 * (1.0 + p.norm()) {
            return Err(Error::Argument("quadratic: P must be symmetric".into()));
        }
        if !linops::definiteness_default(&p)?.is_psd() {
            return Err(Error::Argument(
                "quadratic: P must be positive semidefinite".into(),
            ));
        }
        Ok(Self {
            dim: q.len(),
            kind: FunctionKind::Quadratic { p, q },
            tilt: None,
        })
    }

    pub fn l1(dim: usize, weight: f64) -> Result<Self> {
        if !(weight >= 0.0) || !weight.is_finite() {
            return Err(Error::Argument("l1 weight must be finite and >= 0".into()));
        }
        Ok(Self {
            kind: FunctionKind::L1 { weight },
            dim,
            tilt: None,
        })
    }

    pub fn box_indicator(lo: Vector, hi: Vector) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::Shape("box bounds differ in length".into()));
        }
        if lo
            .iter()
            .zip(hi.iter())
            .any(|(l, h)| !(l <= h) || l.is_nan())
        {
            return Err(Error::Argument("box bounds need lo <= hi".into()));
        }
        Ok(Self {
            dim: lo.len(),
            kind: FunctionKind::Box { lo, hi },
            tilt: None,
        })
    }

    pub fn l2_squared(dim: usize, weight: f64) -> Result<Self> {
        if !(weight >= 0.0) || !weight.is_finite() {
            return Err(Error::Argument(
                "l2_squared weight must be finite and >= 0".into(),
            ));
        }
        Ok(Self {
            kind: FunctionKind::L2Squared { weight },
            dim,
            tilt: None,
        })
    }

    /// Adds `<t, x>` to the function.
    pub fn with_tilt(mut self, t: Vector) -> Result<Self> {
        check_len(&t, self.dim, "tilt")?;
        self.tilt = Some(match self.tilt.take() {
            Some(old) => old + t,
            None => t,
        });
        Ok(self)
    }

    pub fn kind(&self) -> &FunctionKind {
        &self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn tilt(&self) -> Option<&Vector> {
        self.tilt.as_ref()
    }

    fn tilt_or_zero(&self) -> Vector {
        self.tilt.clone().unwrap_or_else(|| Vector::zeros(self.dim))
    }

    fn check(&self, x: &Vector) -> Result<()> {
        check_len(x, self.dim, "function argument")
    }

    /// `f(x)`, possibly `+inf`.
    pub fn value(&self, x: &Vector) -> Result<ExtReal> {
        self.check(x)?;
        let tilt = self.tilt.as_ref().map_or(0.0, |t| t.dot(x));
        let base = match &self.kind {
            FunctionKind::Zero => ExtReal::ZERO,
            FunctionKind::Linear { q } => ExtReal::Finite(q.dot(x)),
            FunctionKind::Quadratic { p, q } => {
                ExtReal::Finite(0.5 * linops::quad_form(x, p) + q.dot(x))
            }
            FunctionKind::L1 { weight } => {
                ExtReal::Finite(weight * x.iter().map(|v| v.abs()).sum::<f64>())
            }
            FunctionKind::Box { lo, hi } => {
                let inside = (0..self.dim).all(|i| {
                    x[i] >= lo[i] - DOMAIN_TOL * (1.0 + lo[i].abs())
                        && x[i] <= hi[i] + DOMAIN_TOL * (1.0 + hi[i].abs())
                });
                if inside {
                    ExtReal::ZERO
                } else {
                    ExtReal::PosInf
                }
            }
            FunctionKind::L2Squared { weight } => ExtReal::Finite(0.5 * weight * x.norm_squared()),
        };
        Ok(base.add_f(tilt))
    }

    /// Affine gradient `(H, c)` with `grad f(x) = H x + c`, for the smooth kinds.
    pub fn affine_gradient(&self) -> Option<(Mat, Vector)> {
        let n = self.dim;
        let t = self.tilt_or_zero();
        match &self.kind {
            FunctionKind::Zero => Some((Mat::zeros(n, n), t)),
            FunctionKind::Linear { q } => Some((Mat::zeros(n, n), q + t)),
            FunctionKind::Quadratic { p, q } => Some((p.clone(), q + t)),
            FunctionKind::L2Squared { weight } => Some((linops::scaled_identity(n, *weight), t)),
            _ => None,
        }
    }

    /// Affine gradient of the conjugate, available when the Hessian is positive definite.
    pub fn conj_affine_gradient(&self) -> Option<(Mat, Vector)> {
        let (h, c) = self.affine_gradient()?;
        let hinv = linops::spd_inverse(&h, "Hessian").ok()?;
        let shift = -(&hinv * c);
        Some((hinv, shift))
    }

    pub fn is_smooth(&self) -> bool {
        self.affine_gradient().is_some()
    }

    /// Separable kinds decompose per coordinate (quadratics only with diagonal P).
    pub fn is_separable(&self) -> bool {
        match &self.kind {
            FunctionKind::Quadratic { p, .. } => linops::is_diagonal(p),
            _ => true,
        }
    }

    /// Componentwise bounds of the domain (infinite where unbounded).
    pub fn domain_bounds(&self) -> (Vector, Vector) {
        match &self.kind {
            FunctionKind::Box { lo, hi } => (lo.clone(), hi.clone()),
            _ => (
                Vector::from_element(self.dim, f64::NEG_INFINITY),
                Vector::from_element(self.dim, f64::INFINITY),
            ),
        }
    }

    /// Componentwise bounds of the domain of the conjugate.
    pub fn conj_domain_bounds(&self) -> (Vector, Vector) {
        let t = self.tilt_or_zero();
        let n = self.dim;
        let all = (
            Vector::from_element(n, f64::NEG_INFINITY),
            Vector::from_element(n, f64::INFINITY),
        );
        match &self.kind {
            FunctionKind::Zero => (t.clone(), t),
            FunctionKind::Linear { q } => (q + &t, q + &t),
            FunctionKind::L1 { weight } => (t.add_scalar(-weight), t.add_scalar(*weight)),
            FunctionKind::L2Squared { weight } if *weight == 0.0 => (t.clone(), t),
            FunctionKind::Box { lo, hi } => {
                // support function is finite iff the box bound on the relevant side is finite
                let mut l = all.0.clone();
                let mut h = all.1.clone();
                for i in 0..n {
                    if hi[i].is_infinite() {
                        h[i] = t[i];
                    }
                    if lo[i].is_infinite() {
                        l[i] = t[i];
                    }
                }
                (l, h)
            }
            _ => all,
        }
    }

    /// `f*(y)`, possibly `+inf`.
    pub fn conj_value(&self, y: &Vector) -> Result<ExtReal> {
        self.check(y)?;
        let z = y - self.tilt_or_zero();
        let near = |a: f64, b: f64| (a - b).abs() <= DOMAIN_TOL * (1.0 + b.abs());
        Ok(match &self.kind {
            FunctionKind::Zero => {
                if z.iter().all(|&v| near(v, 0.0)) {
                    ExtReal::ZERO
                } else {
                    ExtReal::PosInf
                }
            }
            FunctionKind::Linear { q } => {
                if (0..self.dim).all(|i| near(z[i], q[i])) {
                    ExtReal::ZERO
                } else {
                    ExtReal::PosInf
                }
            }
            FunctionKind::Quadratic { p, q } => {
                let d = &z - q;
                let (vals, vecs) = linops::sym_eigen(p)?;
                let tol = linops::DEFAULT_REL_TOL * (1.0 + vals.max().max(0.0));
                let coef = vecs.transpose() * &d;
                let mut acc = 0.0;
                for i in 0..self.dim {
                    if vals[i] > tol {
                        acc += 0.5 * coef[i] * coef[i] / vals[i];
                    } else if coef[i].abs() > 1e-9 * (1.0 + d.norm()) {
                        return Ok(ExtReal::PosInf);
                    }
                }
                ExtReal::Finite(acc)
            }
            FunctionKind::L1 { weight } => {
                if z.iter()
                    .all(|v| v.abs() <= weight + DOMAIN_TOL * (1.0 + weight))
                {
                    ExtReal::ZERO
                } else {
                    ExtReal::PosInf
                }
            }
            FunctionKind::Box { lo, hi } => ext_sum((0..self.dim).map(|i| {
                Coord1D::Support {
                    lo: lo[i],
                    hi: hi[i],
                    s: 0.0,
                }
                .value(z[i])
            })),
            FunctionKind::L2Squared { weight } => {
                if *weight > 0.0 {
                    ExtReal::Finite(0.5 * z.norm_squared() / weight)
                } else if z.iter().all(|&v| near(v, 0.0)) {
                    ExtReal::ZERO
                } else {
                    ExtReal::PosInf
                }
            }
        })
    }

    /// Coordinate `i` of a separable function, tilt included.
    pub fn coord(&self, i: usize) -> Result<Coord1D> {
        if !self.is_separable() {
            return Err(Error::Unsupported("function is not separable".into()));
        }
        let t = self.tilt.as_ref().map_or(0.0, |t| t[i]);
        Ok(match &self.kind {
            FunctionKind::Zero => Coord1D::Quad {
                a: 0.0,
                b: t,
                c: 0.0,
            },
            FunctionKind::Linear { q } => Coord1D::Quad {
                a: 0.0,
                b: q[i] + t,
                c: 0.0,
            },
            FunctionKind::Quadratic { p, q } => Coord1D::Quad {
                a: p[(i, i)],
                b: q[i] + t,
                c: 0.0,
            },
            FunctionKind::L1 { weight } => Coord1D::Abs { w: *weight, b: t },
            FunctionKind::Box { lo, hi } => Coord1D::Interval {
                lo: lo[i],
                hi: hi[i],
                b: t,
            },
            FunctionKind::L2Squared { weight } => Coord1D::Quad {
                a: *weight,
                b: t,
                c: 0.0,
            },
        })
    }

    /// Coordinate `i` of the conjugate of a separable function.
    pub fn conj_coord(&self, i: usize) -> Result<Coord1D> {
        if !self.is_separable() {
            return Err(Error::Unsupported("function is not separable".into()));
        }
        let t = self.tilt.as_ref().map_or(0.0, |t| t[i]);
        let point = |c: f64| Coord1D::Interval {
            lo: c,
            hi: c,
            b: 0.0,
        };
        // (s - m)² / (2a) written as a/2 s² + b s + c with a -> 1/a
        let quad = |a: f64, m: f64| Coord1D::Quad {
            a: 1.0 / a,
            b: -m / a,
            c: 0.5 * m * m / a,
        };
        Ok(match &self.kind {
            FunctionKind::Zero => point(t),
            FunctionKind::Linear { q } => point(q[i] + t),
            FunctionKind::Quadratic { p, q } => {
                if p[(i, i)] > 0.0 {
                    quad(p[(i, i)], q[i] + t)
                } else {
                    point(q[i] + t)
                }
            }
            FunctionKind::L1 { weight } => Coord1D::Interval {
                lo: t - weight,
                hi: t + weight,
                b: 0.0,
            },
            FunctionKind::Box { lo, hi } => Coord1D::Support {
                lo: lo[i],
                hi: hi[i],
                s: t,
            },
            FunctionKind::L2Squared { weight } => {
                if *weight > 0.0 {
                    quad(*weight, t)
                } else {
                    point(t)
                }
            }
        })
    }

    /// Scalar prox of coordinate `i` of a separable nonsmooth kind (tilt excluded).
    fn coord_prox_base(&self, i: usize, z: f64, tau: f64) -> f64 {
        match &self.kind {
            FunctionKind::L1 { weight } => soft(z, tau * weight),
            FunctionKind::Box { lo, hi } => z.clamp(lo[i], hi[i]),
            FunctionKind::Zero => z,
            FunctionKind::Linear { q } => z - tau * q[i],
            FunctionKind::L2Squared { weight } => z / (1.0 + tau * weight),
            FunctionKind::Quadratic { p, q } => (z - tau * q[i]) / (1.0 + tau * p[(i, i)]),
        }
    }

    fn coord_prox(&self, i: usize, z: f64, tau: f64) -> f64 {
        let shift = self.tilt.as_ref().map_or(0.0, |t| t[i]);
        self.coord_prox_base(i, z - tau * shift, tau)
    }

    /// `prox_{tau f}(x)`.
    pub fn prox_scalar(&self, x: &Vector, tau: f64) -> Result<Vector> {
        self.check(x)?;
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(Error::Argument(
                "prox step must be positive and finite".into(),
            ));
        }
        let shifted = match &self.tilt {
            Some(t) => x - t * tau,
            None => x.clone(),
        };
        Ok(match &self.kind {
            FunctionKind::Quadratic { p, q } => {
                let m = linops::identity(self.dim) + p * tau;
                linops::solve(&m, &(shifted - q * tau), "I + tau P")?
            }
            _ => Vector::from_iterator(
                self.dim,
                (0..self.dim).map(|i| self.coord_prox_base(i, shifted[i], tau)),
            ),
        })
    }

    /// `prox_{tau f*}(x) = x - tau prox_{f/tau}(x/tau)`.
    pub fn prox_conjugate(&self, x: &Vector, tau: f64) -> Result<Vector> {
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(Error::Argument(
                "prox step must be positive and finite".into(),
            ));
        }
        let inner = self.prox_scalar(&(x / tau), 1.0 / tau)?;
        Ok(x - inner * tau)
    }

    /// `prox_f^M(x) = argmin_u f(u) + 1/2 ||u - x||²_M` for symmetric PD `M`.
    pub fn prox_metric(&self, x: &Vector, m: &Mat) -> Result<Vector> {
        self.check(x)?;
        check_metric_shape(m, self.dim)?;
        if m.clone().cholesky().is_none() || !linops::definiteness_default(m)?.is_pd() {
            return Err(Error::Metric(
                "prox metric must be symmetric positive definite".into(),
            ));
        }
        self.prox_metric_affine(m, &(m * x))
    }

    /// `argmin_u f(u) + 1/2 uᵀWu - rᵀu`.
    ///
    /// For positive definite `W` this is `prox_f^W(W⁻¹ r)`. Smooth kinds are solved
    /// exactly by a linear solve (which also accepts singular `W` when `H + W` is
    /// invertible); separable nonsmooth kinds use a closed form for diagonal `W` and
    /// exact cyclic coordinate minimization otherwise.
    pub fn prox_metric_affine(&self, w: &Mat, r: &Vector) -> Result<Vector> {
        self.argmin_affine(w, r, INNER_TOL, INNER_MAX_ITER)
    }

    fn argmin_affine(&self, w: &Mat, r: &Vector, tol: f64, max_iter: usize) -> Result<Vector> {
        check_metric_shape(w, self.dim)?;
        check_len(r, self.dim, "affine term")?;
        if let Some((h, c)) = self.affine_gradient() {
            return linops::solve(&(h + w), &(r - c), "H + W").map_err(|_| {
                Error::Metric("metric prox of a smooth function: H + W is singular".into())
            });
        }
        let n = self.dim;
        if (0..n).any(|i| !(w[(i, i)] > 0.0)) {
            return Err(Error::Metric(
                "metric prox of a nonsmooth function needs a positive diagonal".into(),
            ));
        }
        let coord = |i: usize, u: &Vector| {
            let mut g = r[i];
            for j in 0..n {
                if j != i {
                    g -= w[(i, j)] * u[j];
                }
            }
            self.coord_prox(i, g / w[(i, i)], 1.0 / w[(i, i)])
        };
        let mut u = Vector::from_iterator(
            n,
            (0..n).map(|i| self.coord_prox(i, r[i] / w[(i, i)], 1.0 / w[(i, i)])),
        );
        if linops::is_diagonal(w) {
            return Ok(u);
        }
        let (lo, hi) = linops::spectral_bounds(w)?;
        if lo < -linops::DEFAULT_REL_TOL * (1.0 + hi) {
            return Err(Error::Metric("metric is indefinite".into()));
        }
        let ratio = (lo / hi).max(0.0);
        for _ in 0..max_iter {
            let mut change: f64 = 0.0;
            for i in 0..n {
                let new = coord(i, &u);
                change = change.max((new - u[i]).abs());
                u[i] = new;
            }
            let scale = 1.0 + u.amax();
            if change == 0.0 || change <= tol * scale * ratio {
                return Ok(u);
            }
        }
        Err(Error::Convergence(format!(
            "coordinate minimization did not reach tolerance {tol:e} in {max_iter} sweeps"
        )))
    }

    /// `prox_{f*}^W(y) = y - W⁻¹ prox_f^{W⁻¹}(W y)` with `W⁻¹` supplied.
    pub fn prox_conjugate_metric_with_inverse(&self, y: &Vector, w_inv: &Mat) -> Result<Vector> {
        self.check(y)?;
        let u = self.prox_metric_affine(w_inv, y)?;
        Ok(y - w_inv * u)
    }

    /// `prox_{f*}^W(y)` for symmetric PD `W`.
    pub fn prox_conjugate_metric(&self, y: &Vector, w: &Mat) -> Result<Vector> {
        check_metric_shape(w, self.dim)?;
        let w_inv = linops::spd_inverse(w, "conjugate prox metric")?;
        self.prox_conjugate_metric_with_inverse(y, &w_inv)
    }

    /// Componentwise box equal to `∂f(x)`.
    pub fn subdiff_box(&self, x: &Vector) -> Result<SubdiffBox> {
        self.subdiff_box_tol(x, 0.0)
    }

    /// As `subdiff_box`, treating points within `tol` of a kink or boundary as on it.
    pub fn subdiff_box_tol(&self, x: &Vector, tol: f64) -> Result<SubdiffBox> {
        self.check(x)?;
        let n = self.dim;
        let t = self.tilt_or_zero();
        let inf = f64::INFINITY;
        let (lo, hi): (Vector, Vector) = match &self.kind {
            FunctionKind::L1 { weight } => {
                let mut lo = Vector::zeros(n);
                let mut hi = Vector::zeros(n);
                for i in 0..n {
                    if x[i].abs() <= tol {
                        lo[i] = -weight;
                        hi[i] = *weight;
                    } else {
                        lo[i] = weight * x[i].signum();
                        hi[i] = lo[i];
                    }
                }
                (lo, hi)
            }
            FunctionKind::Box { lo: bl, hi: bh } => {
                let mut lo = Vector::zeros(n);
                let mut hi = Vector::zeros(n);
                for i in 0..n {
                    let slack_l = tol * (1.0 + bl[i].abs());
                    let slack_h = tol * (1.0 + bh[i].abs());
                    if x[i] < bl[i] - slack_l - DOMAIN_TOL * (1.0 + bl[i].abs())
                        || x[i] > bh[i] + slack_h + DOMAIN_TOL * (1.0 + bh[i].abs())
                    {
                        return Err(Error::Domain(format!(
                            "coordinate {i} = {} lies outside [{}, {}]",
                            x[i], bl[i], bh[i]
                        )));
                    }
                    let at_lo = x[i] <= bl[i] + slack_l;
                    let at_hi = x[i] >= bh[i] - slack_h;
                    lo[i] = if at_lo { -inf } else { 0.0 };
                    hi[i] = if at_hi { inf } else { 0.0 };
                }
                (lo, hi)
            }
            _ => {
                let (h, c) = self.affine_gradient().expect("smooth kind");
                let g = h * x + &c;
                return Ok(SubdiffBox::singleton(g));
            }
        };
        Ok(SubdiffBox {
            lo: lo + &t,
            hi: hi + &t,
        })
    }

    /// Componentwise box equal to `∂f*(y)` for the separable kinds and positive definite quadratics.
    pub fn conj_subdiff_box_tol(&self, y: &Vector, tol: f64) -> Result<SubdiffBox> {
        self.check(y)?;
        let n = self.dim;
        let z = y - self.tilt_or_zero();
        let inf = f64::INFINITY;
        let everything = |point: &Vector, z: &Vector| -> Result<SubdiffBox> {
            for i in 0..n {
                if (z[i] - point[i]).abs()
                    > tol * (1.0 + point[i].abs()) + DOMAIN_TOL * (1.0 + point[i].abs())
                {
                    return Err(Error::Domain(format!(
                        "conjugate argument {} differs from its single admissible value {}",
                        z[i], point[i]
                    )));
                }
            }
            Ok(SubdiffBox {
                lo: Vector::from_element(n, -inf),
                hi: Vector::from_element(n, inf),
            })
        };
        match &self.kind {
            FunctionKind::Zero => everything(&Vector::zeros(n), &z),
            FunctionKind::Linear { q } => everything(q, &z),
            FunctionKind::L2Squared { weight } => {
                if *weight > 0.0 {
                    Ok(SubdiffBox::singleton(z / *weight))
                } else {
                    everything(&Vector::zeros(n), &z)
                }
            }
            FunctionKind::Quadratic { .. } => {
                let (hinv, shift) = self.conj_affine_gradient().ok_or_else(|| {
                    Error::Unsupported("conjugate subdifferential of a singular quadratic".into())
                })?;
                Ok(SubdiffBox::singleton(hinv * y + shift))
            }
            FunctionKind::L1 { weight } => {
                let mut lo = Vector::zeros(n);
                let mut hi = Vector::zeros(n);
                let slack = tol * (1.0 + weight);
                for i in 0..n {
                    if z[i].abs() > weight + slack + DOMAIN_TOL * (1.0 + weight) {
                        return Err(Error::Domain(format!(
                            "conjugate argument {} outside [-{weight}, {weight}]",
                            z[i]
                        )));
                    }
                    if z[i] >= weight - slack {
                        hi[i] = inf;
                    }
                    if z[i] <= -weight + slack {
                        lo[i] = -inf;
                    }
                }
                Ok(SubdiffBox { lo, hi })
            }
            FunctionKind::Box { lo: bl, hi: bh } => {
                let mut lo = Vector::zeros(n);
                let mut hi = Vector::zeros(n);
                for i in 0..n {
                    if z[i] > tol {
                        lo[i] = bh[i];
                        hi[i] = bh[i];
                    } else if z[i] < -tol {
                        lo[i] = bl[i];
                        hi[i] = bl[i];
                    } else {
                        lo[i] = bl[i];
                        hi[i] = bh[i];
                    }
                    if lo[i].is_infinite() && lo[i] == hi[i] {
                        return Err(Error::Domain("support function is infinite here".into()));
                    }
                }
                Ok(SubdiffBox { lo, hi })
            }
        }
    }
}

fn check_metric_shape(m: &Mat, n: usize) -> Result<()> {
    if m.nrows() != n || m.ncols() != n {
        return Err(Error::Shape(format!(
            "metric must be {n}x{n}, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

fn check_operator(f: &ProxFunction, a: &Mat, u: &Vector) -> Result<()> {
    if a.ncols() != f.dim() || a.nrows() != u.len() {
        return Err(Error::Dimension(format!(
            "operator is {}x{}, function has dimension {} and point length {}",
            a.nrows(),
            a.ncols(),
            f.dim(),
            u.len()
        )));
    }
    Ok(())
}

/// `A x*` with `x* = argmin_x f(x) + 1/2 ||A x - u||²`, the prox of the infimal postcomposition.
pub fn prox_postcomposition(
    f: &ProxFunction,
    a: &Mat,
    u: &Vector,
    inner_tol: f64,
) -> Result<Vector> {
    check_operator(f, a, u)?;
    let w = a.transpose() * a;
    let r = a.transpose() * u;
    let x = f
        .argmin_affine(&w, &r, inner_tol, INNER_MAX_ITER)
        .map_err(|e| match e {
            Error::Metric(m) => Error::Convergence(format!("postcomposition: {m}")),
            other => other,
        })?;
    Ok(a * x)
}

/// `prox_{f* o Aᵀ}(u) = argmin_s f*(Aᵀ s) + 1/2 ||s - u||²`, solved on the conjugate side.
///
/// Smooth `f` with positive definite Hessian uses the linear system
/// `(I + A H⁻¹ Aᵀ) s = u + A H⁻¹ c`; otherwise ADMM on the split `z = Aᵀ s`, which only
/// needs `prox_{f*}`.
pub fn prox_conjugate_composition(
    f: &ProxFunction,
    a: &Mat,
    u: &Vector,
    tol: f64,
) -> Result<Vector> {
    check_operator(f, a, u)?;
    let m = a.nrows();
    if let Some((h, c)) = f.affine_gradient() {
        if let Ok(hinv) = linops::spd_inverse(&h, "Hessian") {
            let lhs = linops::identity(m) + a * &hinv * a.transpose();
            return linops::solve(&lhs, &(u + a * (&hinv * c)), "I + A H^-1 A^T");
        }
    }
    let rho = 1.0;
    let lhs = linops::identity(m) + a * a.transpose() * rho;
    let lhs_inv = linops::spd_inverse(&lhs, "I + rho A A^T")?;
    let mut z = Vector::zeros(f.dim());
    let mut y = Vector::zeros(f.dim());
    let max_iter = 20 * INNER_MAX_ITER;
    for _ in 0..max_iter {
        let s = &lhs_inv * (u + a * (&z - &y) * rho);
        let ats = a.transpose() * &s;
        let z_new = f.prox_conjugate(&(&ats + &y), 1.0 / rho)?;
        let primal = (&ats - &z_new).norm();
        let dual = rho * (a * (&z_new - &z)).norm();
        y += &ats - &z_new;
        z = z_new;
        let scale = 1.0 + s.norm();
        if primal <= tol * scale && dual <= tol * scale {
            return Ok(s);
        }
    }
    Err(Error::Convergence(format!(
        "conjugate-side ADMM did not reach {tol:e} in {max_iter} iterations"
    )))
}

/// `|| prox_{A▷f}(u) + prox_{f* o Aᵀ}(u) - u ||`, with both terms from independent solves.
pub fn moreau_extended_residual(f: &ProxFunction, a: &Mat, u: &Vector) -> Result<f64> {
    let t = prox_postcomposition(f, a, u, 1e-14)?;
    let s = prox_conjugate_composition(f, a, u, 1e-13)?;
    Ok((t + s - u).norm())
}
