//! The twenty-scheme catalog: direct update steps, their proximal-point matrices and
//! convergence-condition checks.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linops::{self, BlockLayout, BlockMatrix, BlockName, Mat, StackedPoint, Vector};
use crate::proxlib::ProxFunction;

use BlockName::{A as BA, B as BB, P as BP, X as BX};

/// Problem family, fixing the stacked variable and the monotone operator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum Family {
    /// `min f(x) + g(Ax)` through the Lagrangian, state `(x, a, p)`.
    Lag,
    /// the same problem through its primal-dual form, state `(x, p)`.
    Pds,
    /// `min f(x) + g(Ax) + h(Bx)`, state `(x, a, b, p)`.
    Mix,
}

impl Family {
    pub fn as_str(self) -> &'static str {
        match self {
            Family::Lag => "LAG",
            Family::Pds => "PDS",
            Family::Mix => "MIX",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SchemeId {
    Lag1,
    Lag2,
    Lag3,
    Lag4,
    Lag5,
    Lag6,
    Lag7,
    Pds1,
    Pds2,
    Pds3,
    Pds4,
    Pds5,
    Pds6,
    Pds7,
    Mix1,
    Mix2,
    Mix3,
    Mix4,
    Mix5,
    Mix6,
}

const ROMAN: [&str; 7] = ["I", "II", "III", "IV", "V", "VI", "VII"];

impl SchemeId {
    pub const ALL: [SchemeId; 20] = [
        SchemeId::Lag1,
        SchemeId::Lag2,
        SchemeId::Lag3,
        SchemeId::Lag4,
        SchemeId::Lag5,
        SchemeId::Lag6,
        SchemeId::Lag7,
        SchemeId::Pds1,
        SchemeId::Pds2,
        SchemeId::Pds3,
        SchemeId::Pds4,
        SchemeId::Pds5,
        SchemeId::Pds6,
        SchemeId::Pds7,
        SchemeId::Mix1,
        SchemeId::Mix2,
        SchemeId::Mix3,
        SchemeId::Mix4,
        SchemeId::Mix5,
        SchemeId::Mix6,
    ];

    pub fn family(self) -> Family {
        let i = self as usize;
        if i < 7 {
            Family::Lag
        } else if i < 14 {
            Family::Pds
        } else {
            Family::Mix
        }
    }

    /// 1-based position within the family.
    pub fn number(self) -> usize {
        (self as usize) % 7 + 1
    }

    pub fn name(self) -> String {
        format!("{}-{}", self.family(), ROMAN[self.number() - 1])
    }

    /// Schemes whose relaxation matrix is the identity.
    pub fn relaxation_is_identity(self) -> bool {
        matches!(
            self,
            SchemeId::Lag1
                | SchemeId::Lag2
                | SchemeId::Pds1
                | SchemeId::Pds2
                | SchemeId::Mix1
                | SchemeId::Mix2
                | SchemeId::Mix3
        )
    }

    pub fn uses_omega(self) -> bool {
        self.family() != Family::Pds
    }

    pub fn uses_theta(self) -> bool {
        self.family() == Family::Mix
    }
}

impl fmt::Display for SchemeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for SchemeId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let up = s.trim().to_ascii_uppercase();
        SchemeId::ALL
            .iter()
            .copied()
            .find(|id| id.name() == up)
            .ok_or_else(|| Error::UnknownScheme(s.to_string()))
    }
}

impl Serialize for SchemeId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.name())
    }
}

/// `min f(x) + g(Ax)` with an optional third term `h(Bx)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitProblem {
    pub f: ProxFunction,
    pub g: ProxFunction,
    pub h: Option<ProxFunction>,
    pub a: Mat,
    pub b: Option<Mat>,
}

impl SplitProblem {
    pub fn new(f: ProxFunction, g: ProxFunction, a: Mat) -> Result<Self> {
        let p = Self {
            f,
            g,
            h: None,
            a,
            b: None,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_third(
        f: ProxFunction,
        g: ProxFunction,
        h: ProxFunction,
        a: Mat,
        b: Mat,
    ) -> Result<Self> {
        let p = Self {
            f,
            g,
            h: Some(h),
            a,
            b: Some(b),
        };
        p.validate()?;
        Ok(p)
    }

    fn validate(&self) -> Result<()> {
        let n = self.f.dim();
        if self.a.ncols() != n || self.a.nrows() != self.g.dim() {
            return Err(Error::Dimension(format!(
                "A is {}x{}, but f has dimension {n} and g has dimension {}",
                self.a.nrows(),
                self.a.ncols(),
                self.g.dim()
            )));
        }
        match (&self.h, &self.b) {
            (None, None) => Ok(()),
            (Some(h), Some(b)) => {
                if b.ncols() != n || b.nrows() != h.dim() {
                    return Err(Error::Dimension(format!(
                        "B is {}x{}, but f has dimension {n} and h has dimension {}",
                        b.nrows(),
                        b.ncols(),
                        h.dim()
                    )));
                }
                Ok(())
            }
            _ => Err(Error::Argument("h and B must be given together".into())),
        }
    }

    pub fn n(&self) -> usize {
        self.f.dim()
    }

    pub fn m1(&self) -> usize {
        self.g.dim()
    }

    pub fn m2(&self) -> Option<usize> {
        self.h.as_ref().map(|h| h.dim())
    }

    pub fn has_third(&self) -> bool {
        self.h.is_some()
    }

    pub fn h_b(&self) -> Result<(&ProxFunction, &Mat)> {
        match (&self.h, &self.b) {
            (Some(h), Some(b)) => Ok((h, b)),
            _ => Err(Error::Argument(
                "three-function schemes need h and B in the problem".into(),
            )),
        }
    }

    /// Stacked layout of the family.
    pub fn layout(&self, family: Family) -> Result<BlockLayout> {
        let (n, m1) = (self.n(), self.m1());
        match family {
            Family::Lag => BlockLayout::new(vec![(BX, n), (BA, m1), (BP, m1)]),
            Family::Pds => BlockLayout::new(vec![(BX, n), (BP, m1)]),
            Family::Mix => {
                let m2 = self.m2().ok_or_else(|| {
                    Error::Argument("three-function schemes need h and B in the problem".into())
                })?;
                BlockLayout::new(vec![(BX, n), (BA, m1), (BB, m2), (BP, m1)])
            }
        }
    }
}

/// Metric parameters. `omega` is unused by the primal-dual family; `theta` is used only by
/// the three-function family, where `gamma` weights the `b` block and `theta` the `p` block.
#[derive(Clone, Debug, PartialEq)]
pub struct Metrics {
    pub m: Mat,
    pub omega: Option<Mat>,
    pub gamma: Mat,
    pub theta: Option<Mat>,
}

impl Metrics {
    /// Scalar multiples of identities shaped for the problem and scheme.
    pub fn scalar(
        problem: &SplitProblem,
        id: SchemeId,
        mu: f64,
        omega: f64,
        gamma: f64,
        theta: f64,
    ) -> Result<Self> {
        let (n, m1) = (problem.n(), problem.m1());
        let id_m = |k: usize, s: f64| linops::scaled_identity(k, s);
        Ok(match id.family() {
            Family::Lag => Metrics {
                m: id_m(n, mu),
                omega: Some(id_m(m1, omega)),
                gamma: id_m(m1, gamma),
                theta: None,
            },
            Family::Pds => Metrics {
                m: id_m(n, mu),
                omega: None,
                gamma: id_m(m1, gamma),
                theta: None,
            },
            Family::Mix => {
                let m2 = problem.h_b()?.0.dim();
                Metrics {
                    m: id_m(n, mu),
                    omega: Some(id_m(m1, omega)),
                    gamma: id_m(m2, gamma),
                    theta: Some(id_m(m1, theta)),
                }
            }
        })
    }
}

/// Scheme identifier with its metric parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct SchemeSpec {
    pub id: SchemeId,
    pub metrics: Metrics,
}

fn check_sym(m: &Mat, k: usize, what: &str) -> Result<()> {
    if m.nrows() != k || m.ncols() != k {
        return Err(Error::Shape(format!(
            "{what} must be {k}x{k}, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if (m - m.transpose()).amax() > 1e-12 * (1.0 + m.amax()) {
        return Err(Error::Argument(format!("{what} must be symmetric")));
    }
    Ok(())
}

impl SchemeSpec {
    pub fn new(id: SchemeId, metrics: Metrics) -> Self {
        Self { id, metrics }
    }

    /// Checks that the metrics are symmetric and shaped for the problem.
    pub fn validate(&self, problem: &SplitProblem) -> Result<()> {
        let (n, m1) = (problem.n(), problem.m1());
        let mt = &self.metrics;
        check_sym(&mt.m, n, "M")?;
        match self.id.family() {
            Family::Lag | Family::Pds => check_sym(&mt.gamma, m1, "Gamma")?,
            Family::Mix => {
                let m2 = problem.h_b()?.0.dim();
                check_sym(&mt.gamma, m2, "Gamma")?;
                let th = mt
                    .theta
                    .as_ref()
                    .ok_or_else(|| Error::Argument("Theta is required".into()))?;
                check_sym(th, m1, "Theta")?;
            }
        }
        if self.id.uses_omega() {
            let om = mt
                .omega
                .as_ref()
                .ok_or_else(|| Error::Argument("Omega is required".into()))?;
            check_sym(om, m1, "Omega")?;
        }
        Ok(())
    }

    fn omega(&self) -> &Mat {
        self.metrics.omega.as_ref().expect("validated")
    }

    fn theta(&self) -> &Mat {
        self.metrics.theta.as_ref().expect("validated")
    }
}

/// Diagonal (set-valued) part of the monotone operator on one block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum DiagTerm {
    None,
    /// `∂f`
    SubF,
    /// `∂g`
    SubG,
    /// `∂g*`
    SubGConj,
    /// `∂h*`
    SubHConj,
}

/// Operator `c ↦ diag(∂·)(c) + K c` shared by a family.
#[derive(Clone, Debug, PartialEq)]
pub struct OperatorStructure {
    pub diag: Vec<(BlockName, DiagTerm)>,
    pub skew: BlockMatrix,
}

impl OperatorStructure {
    pub fn of(problem: &SplitProblem, family: Family) -> Result<Self> {
        let layout = problem.layout(family)?;
        let a = &problem.a;
        let at = a.transpose();
        let i1 = linops::identity(problem.m1());
        let (diag, blocks) = match family {
            Family::Lag => (
                vec![
                    (BX, DiagTerm::SubF),
                    (BA, DiagTerm::SubG),
                    (BP, DiagTerm::None),
                ],
                vec![(BX, BP, at), (BA, BP, -&i1), (BP, BX, -a), (BP, BA, i1)],
            ),
            Family::Pds => (
                vec![(BX, DiagTerm::SubF), (BP, DiagTerm::SubGConj)],
                vec![(BX, BP, at), (BP, BX, -a)],
            ),
            Family::Mix => {
                let b = problem.h_b()?.1;
                (
                    vec![
                        (BX, DiagTerm::SubF),
                        (BA, DiagTerm::SubG),
                        (BB, DiagTerm::SubHConj),
                        (BP, DiagTerm::None),
                    ],
                    vec![
                        (BX, BB, b.transpose()),
                        (BX, BP, at),
                        (BA, BP, -&i1),
                        (BB, BX, -b),
                        (BP, BX, -a),
                        (BP, BA, i1),
                    ],
                )
            }
        };
        Ok(Self {
            diag,
            skew: BlockMatrix::from_blocks(&layout, &blocks)?,
        })
    }
}

/// The matrices realizing a scheme as a relaxed proximal point iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct PpaMatrices {
    pub id: SchemeId,
    pub layout: BlockLayout,
    pub q: BlockMatrix,
    pub relax: BlockMatrix,
    pub relax_inv: Mat,
    pub s: BlockMatrix,
    pub g: BlockMatrix,
    pub operator: OperatorStructure,
}

impl PpaMatrices {
    /// `H = M⁻ᵀ G M⁻¹`, the metric of the step-length decrease.
    pub fn h(&self) -> Mat {
        self.relax_inv.transpose() * self.g.dense() * &self.relax_inv
    }
}

struct Inverses {
    m: Option<Mat>,
    omega: Option<Mat>,
    gamma: Option<Mat>,
    theta: Option<Mat>,
}

impl Inverses {
    fn of(spec: &SchemeSpec) -> Self {
        let inv = |m: &Mat| linops::inverse(m, "metric").ok();
        Self {
            m: inv(&spec.metrics.m),
            omega: spec.metrics.omega.as_ref().and_then(inv),
            gamma: inv(&spec.metrics.gamma),
            theta: spec.metrics.theta.as_ref().and_then(inv),
        }
    }

    fn need<'a>(m: &'a Option<Mat>, what: &str, id: SchemeId) -> Result<&'a Mat> {
        m.as_ref()
            .ok_or_else(|| Error::Metric(format!("{id} needs an invertible {what}")))
    }
}

/// Assembles `Q` and the relaxation matrix exactly as catalogued, then `S` and `G`.
pub fn build_ppa(problem: &SplitProblem, spec: &SchemeSpec) -> Result<PpaMatrices> {
    spec.validate(problem)?;
    let id = spec.id;
    let family = id.family();
    let layout = problem.layout(family)?;
    let inv = Inverses::of(spec);
    let mt = &spec.metrics;
    let m = &mt.m;
    let a = &problem.a;
    let at = a.transpose();
    let n = problem.n();
    let m1 = problem.m1();
    let i1 = linops::identity(m1);
    let (q_blocks, r_blocks): (
        Vec<(BlockName, BlockName, Mat)>,
        Vec<(BlockName, BlockName, Mat)>,
    ) = match family {
        Family::Lag => {
            let om = spec.omega();
            let ga = &mt.gamma;
            let gi = || Inverses::need(&inv.gamma, "Gamma", id).cloned();
            let base_r = || {
                vec![
                    (BX, BX, linops::identity(n)),
                    (BA, BA, i1.clone()),
                    (BP, BP, i1.clone()),
                ]
            };
            match id {
                SchemeId::Lag1 => (
                    vec![
                        (BX, BX, m.clone()),
                        (BX, BP, -&at),
                        (BA, BA, om.clone()),
                        (BA, BP, i1.clone()),
                        (BP, BX, -a),
                        (BP, BA, i1.clone()),
                        (BP, BP, gi()?),
                    ],
                    base_r(),
                ),
                SchemeId::Lag2 => (
                    vec![
                        (BX, BX, m.clone()),
                        (BA, BA, om.clone()),
                        (BA, BP, -&i1),
                        (BP, BA, -&i1),
                        (BP, BP, gi()?),
                    ],
                    base_r(),
                ),
                SchemeId::Lag3 => {
                    let mut r = base_r();
                    r.push((BP, BA, -ga));
                    (
                        vec![
                            (BX, BX, m.clone()),
                            (BA, BA, om.clone()),
                            (BA, BP, i1.clone()),
                            (BP, BP, gi()?),
                        ],
                        r,
                    )
                }
                SchemeId::Lag4 => {
                    let mut r = base_r();
                    r.push((BP, BX, ga * a));
                    (
                        vec![
                            (BX, BX, m.clone()),
                            (BX, BP, -&at),
                            (BA, BA, om.clone()),
                            (BP, BP, gi()?),
                        ],
                        r,
                    )
                }
                SchemeId::Lag5 => {
                    let mut r = base_r();
                    r.push((BP, BX, ga * a));
                    r.push((BP, BA, -ga));
                    (
                        vec![
                            (BX, BX, m + &at * ga * a),
                            (BA, BA, om + ga),
                            (BP, BX, a.clone()),
                            (BP, BA, -&i1),
                            (BP, BP, gi()?),
                        ],
                        r,
                    )
                }
                SchemeId::Lag6 => {
                    let mut r = base_r();
                    r.push((BP, BA, -ga));
                    (
                        vec![
                            (BX, BX, m.clone()),
                            (BA, BA, om + ga),
                            (BP, BA, -&i1),
                            (BP, BP, gi()?),
                        ],
                        r,
                    )
                }
                SchemeId::Lag7 => {
                    let mi = Inverses::need(&inv.m, "M", id)?;
                    let oi = Inverses::need(&inv.omega, "Omega", id)?;
                    let mut r = base_r();
                    r.push((BX, BP, -(mi * &at)));
                    r.push((BA, BP, oi.clone()));
                    r.push((BP, BX, ga * a));
                    r.push((BP, BA, -ga));
                    (
                        vec![
                            (BX, BX, m.clone()),
                            (BX, BP, -&at),
                            (BA, BA, om.clone()),
                            (BA, BP, i1.clone()),
                            (BP, BX, a.clone()),
                            (BP, BA, -&i1),
                            (BP, BP, gi()?),
                        ],
                        r,
                    )
                }
                _ => unreachable!(),
            }
        }
        Family::Pds => {
            let ga = &mt.gamma;
            let base_r = || vec![(BX, BX, linops::identity(n)), (BP, BP, i1.clone())];
            let mi = || Inverses::need(&inv.m, "M", id);
            let gi = || Inverses::need(&inv.gamma, "Gamma", id);
            match id {
                SchemeId::Pds1 => (
                    vec![
                        (BX, BX, m.clone()),
                        (BX, BP, -&at),
                        (BP, BX, -a),
                        (BP, BP, ga.clone()),
                    ],
                    base_r(),
                ),
                SchemeId::Pds2 => (
                    vec![
                        (BX, BX, m.clone()),
                        (BX, BP, at.clone()),
                        (BP, BX, a.clone()),
                        (BP, BP, ga.clone()),
                    ],
                    base_r(),
                ),
                SchemeId::Pds3 => {
                    let (mi, gi) = (mi()?, gi()?);
                    (
                        vec![
                            (BX, BX, m.clone()),
                            (BP, BX, a.clone()),
                            (BP, BP, ga.clone()),
                        ],
                        vec![
                            (BX, BX, linops::identity(n) - mi * &at * gi * a),
                            (BX, BP, -(mi * &at)),
                            (BP, BP, i1.clone()),
                        ],
                    )
                }
                SchemeId::Pds4 => {
                    let (mi, gi) = (mi()?, gi()?);
                    (
                        vec![(BX, BX, m.clone()), (BX, BP, -&at), (BP, BP, ga.clone())],
                        vec![
                            (BX, BX, linops::identity(n)),
                            (BP, BX, gi * a),
                            (BP, BP, &i1 - gi * a * mi * &at),
                        ],
                    )
                }
                SchemeId::Pds5 => {
                    let gi = gi()?;
                    let mut r = base_r();
                    r.push((BP, BX, gi * a));
                    (
                        vec![
                            (BX, BX, m.clone()),
                            (BP, BX, a.clone()),
                            (BP, BP, ga.clone()),
                        ],
                        r,
                    )
                }
                SchemeId::Pds6 => {
                    let mi = mi()?;
                    let mut r = base_r();
                    r.push((BX, BP, -(mi * &at)));
                    (
                        vec![(BX, BX, m.clone()), (BX, BP, -&at), (BP, BP, ga.clone())],
                        r,
                    )
                }
                SchemeId::Pds7 => {
                    let (mi, gi) = (mi()?, gi()?);
                    let mut r = base_r();
                    r.push((BX, BP, -(mi * &at)));
                    r.push((BP, BX, gi * a));
                    (
                        vec![
                            (BX, BX, m.clone()),
                            (BX, BP, -&at),
                            (BP, BX, a.clone()),
                            (BP, BP, ga.clone()),
                        ],
                        r,
                    )
                }
                _ => unreachable!(),
            }
        }
        Family::Mix => {
            let (_, b) = problem.h_b()?;
            let bt = b.transpose();
            let m2 = b.nrows();
            let i2 = linops::identity(m2);
            let om = spec.omega();
            let ga = &mt.gamma;
            let th = spec.theta();
            let gi = Inverses::need(&inv.gamma, "Gamma", id)?.clone();
            let ti = Inverses::need(&inv.theta, "Theta", id)?.clone();
            let base_r = || {
                vec![
                    (BX, BX, linops::identity(n)),
                    (BA, BA, i1.clone()),
                    (BB, BB, i2.clone()),
                    (BP, BP, i1.clone()),
                ]
            };
            match id {
                SchemeId::Mix1 => (
                    vec![
                        (BX, BX, m.clone()),
                        (BX, BB, -&bt),
                        (BX, BP, -&at),
                        (BA, BA, om.clone()),
                        (BA, BP, i1.clone()),
                        (BB, BX, -b),
                        (BB, BB, gi),
                        (BP, BX, -a),
                        (BP, BA, i1.clone()),
                        (BP, BP, ti),
                    ],
                    base_r(),
                ),
                SchemeId::Mix2 => (
                    vec![
                        (BX, BX, m.clone()),
                        (BX, BB, -&bt),
                        (BX, BP, -&at),
                        (BA, BA, om.clone()),
                        (BA, BP, -&i1),
                        (BB, BX, -b),
                        (BB, BB, gi),
                        (BP, BX, -a),
                        (BP, BA, -&i1),
                        (BP, BP, ti),
                    ],
                    base_r(),
                ),
                SchemeId::Mix3 => (
                    vec![
                        (BX, BX, m.clone()),
                        (BX, BB, -&bt),
                        (BA, BA, om.clone()),
                        (BA, BP, -&i1),
                        (BB, BX, -b),
                        (BB, BB, gi),
                        (BP, BA, -&i1),
                        (BP, BP, ti),
                    ],
                    base_r(),
                ),
                SchemeId::Mix4 => {
                    let mut r = base_r();
                    r.push((BB, BX, ga * b));
                    r.push((BP, BX, th * a));
                    (
                        vec![
                            (BX, BX, m.clone()),
                            (BX, BB, -&bt),
                            (BX, BP, -&at),
                            (BA, BA, om.clone()),
                            (BB, BB, gi),
                            (BP, BP, ti),
                        ],
                        r,
                    )
                }
                SchemeId::Mix5 => {
                    let mut r = base_r();
                    r.push((BB, BX, ga * b));
                    r.push((BP, BX, th * a));
                    r.push((BP, BA, -th));
                    (
                        vec![
                            (BX, BX, m.clone()),
                            (BX, BB, -&bt),
                            (BX, BP, -&at),
                            (BA, BA, om.clone()),
                            (BA, BP, i1.clone()),
                            (BB, BB, gi),
                            (BP, BP, ti),
                        ],
                        r,
                    )
                }
                SchemeId::Mix6 => {
                    let mut r = base_r();
                    r.push((BP, BA, -th));
                    (
                        vec![
                            (BX, BX, m.clone()),
                            (BX, BB, -&bt),
                            (BA, BA, om.clone()),
                            (BB, BX, -b),
                            (BB, BB, gi),
                            (BP, BA, -&i1),
                            (BP, BP, ti),
                        ],
                        r,
                    )
                }
                _ => unreachable!(),
            }
        }
    };
    let q = BlockMatrix::from_blocks(&layout, &q_blocks)?;
    let relax = BlockMatrix::from_blocks(&layout, &r_blocks)?;
    let relax_inv = if id.relaxation_is_identity() {
        linops::identity(layout.total())
    } else {
        linops::inverse(relax.dense(), "relaxation matrix")?
    };
    let s_dense = q.dense() * &relax_inv;
    let g_dense = q.dense() + q.dense().transpose() - relax.dense().transpose() * q.dense();
    Ok(PpaMatrices {
        id,
        s: BlockMatrix::from_dense(layout.clone(), layout.clone(), s_dense)?,
        g: BlockMatrix::from_dense(layout.clone(), layout.clone(), g_dense)?,
        operator: OperatorStructure::of(problem, family)?,
        layout,
        q,
        relax,
        relax_inv,
    })
}

/// Required strength of one condition.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Requirement {
    /// positive definite, or a strict Loewner inequality
    Definite,
    /// positive semidefinite
    Semidefinite,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    StrictPass,
    DegeneratePass,
    Fail,
}

impl Verdict {
    pub fn exit_code(self) -> i32 {
        match self {
            Verdict::StrictPass => 0,
            Verdict::DegeneratePass => 2,
            Verdict::Fail => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConditionEntry {
    pub name: String,
    pub relation: String,
    pub requirement: Requirement,
    /// Smallest eigenvalue of the symmetric part of the relevant difference; `None` if it
    /// cannot be formed (e.g. a needed inverse does not exist).
    pub margin: Option<f64>,
    pub tol: f64,
    pub strict: bool,
    pub weak: bool,
}

impl ConditionEntry {
    fn evaluate(name: &str, relation: &str, requirement: Requirement, diff: Option<Mat>) -> Self {
        let spectrum = diff.as_ref().and_then(|d| linops::spectral_bounds(d).ok());
        let (margin, tol) = match spectrum {
            Some((lo, hi)) => (
                Some(lo),
                linops::DEFAULT_REL_TOL * (1.0 + hi.abs().max(lo.abs())),
            ),
            None => (None, linops::DEFAULT_REL_TOL),
        };
        let weak = margin.map_or(false, |m| m >= -tol);
        let strict = match requirement {
            Requirement::Definite => margin.map_or(false, |m| m > tol),
            Requirement::Semidefinite => weak,
        };
        Self {
            name: name.to_string(),
            relation: relation.to_string(),
            requirement,
            margin,
            tol,
            strict,
            weak,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConditionReport {
    pub scheme: SchemeId,
    pub entries: Vec<ConditionEntry>,
    pub verdict: Verdict,
    pub strict_pass: bool,
    pub degenerate_pass: bool,
    pub notes: Vec<String>,
}

/// Evaluates the catalogued conditions of the scheme plus positive definiteness of `S`, `G`.
pub fn check_conditions(problem: &SplitProblem, spec: &SchemeSpec) -> Result<ConditionReport> {
    spec.validate(problem)?;
    let id = spec.id;
    let mt = &spec.metrics;
    let inv = Inverses::of(spec);
    let a = &problem.a;
    let at = a.transpose();
    let m = &mt.m;
    let ga = &mt.gamma;
    let mut entries = Vec::new();
    let mut push = |name: &str, rel: &str, req: Requirement, d: Option<Mat>| {
        entries.push(ConditionEntry::evaluate(name, rel, req, d));
    };
    use Requirement::{Definite as Def, Semidefinite as Semi};
    match id.family() {
        Family::Lag => {
            let om = spec.omega();
            match id {
                SchemeId::Lag1 | SchemeId::Lag7 => {
                    push("M", "M ∈ S++", Def, Some(m.clone()));
                    push("Omega", "Ω ∈ S++", Def, Some(om.clone()));
                    push("Gamma", "Γ ∈ S++", Def, Some(ga.clone()));
                    let d = match (&inv.gamma, &inv.m, &inv.omega) {
                        (Some(gi), Some(mi), Some(oi)) => Some(gi - a * mi * &at - oi),
                        _ => None,
                    };
                    push("coupling", "Γ⁻¹ ≻ A M⁻¹ Aᵀ + Ω⁻¹", Def, d);
                }
                SchemeId::Lag2 | SchemeId::Lag3 => {
                    push("M", "M ∈ S+", Semi, Some(m.clone()));
                    push("Omega", "Ω ∈ S++", Def, Some(om.clone()));
                    push("Gamma", "Γ ∈ S++", Def, Some(ga.clone()));
                    push("coupling", "Ω ≻ Γ", Def, Some(om - ga));
                }
                SchemeId::Lag4 => {
                    push("M", "M ∈ S++", Def, Some(m.clone()));
                    push("Gamma", "Γ ∈ S++", Def, Some(ga.clone()));
                    push("Omega", "Ω ∈ S+", Semi, Some(om.clone()));
                    push("coupling", "M ≻ Aᵀ Γ A", Def, Some(m - &at * ga * a));
                }
                SchemeId::Lag5 => {
                    push("M", "M ∈ S++", Def, Some(m.clone()));
                    push("Omega", "Ω ∈ S++", Def, Some(om.clone()));
                    push("Gamma", "Γ ∈ S++", Def, Some(ga.clone()));
                    let d = inv.omega.as_ref().map(|oi| m - &at * ga * oi * ga * a);
                    push("coupling", "M ≻ Aᵀ Γ Ω⁻¹ Γ A", Def, d);
                }
                SchemeId::Lag6 => {
                    push("M", "M ∈ S+", Semi, Some(m.clone()));
                    push("Omega", "Ω ∈ S+", Semi, Some(om.clone()));
                    push("Gamma", "Γ ∈ S++", Def, Some(ga.clone()));
                }
                _ => unreachable!(),
            }
        }
        Family::Pds => {
            let primal = inv.gamma.as_ref().map(|gi| m - &at * gi * a);
            let dual = inv.m.as_ref().map(|mi| ga - a * mi * &at);
            match id {
                SchemeId::Pds1 | SchemeId::Pds2 | SchemeId::Pds3 | SchemeId::Pds4 => {
                    push("M", "M ∈ S++", Def, Some(m.clone()));
                    push("Gamma", "Γ ∈ S++", Def, Some(ga.clone()));
                    push("coupling", "M ≻ Aᵀ Γ⁻¹ A", Def, primal);
                }
                SchemeId::Pds5 => push("coupling", "M ≻ Aᵀ Γ⁻¹ A", Def, primal),
                SchemeId::Pds6 => push("coupling", "Γ ≻ A M⁻¹ Aᵀ", Def, dual),
                SchemeId::Pds7 => {
                    push("primal coupling", "M ≻ Aᵀ Γ⁻¹ A", Def, primal);
                    push("dual coupling", "Γ ≻ A M⁻¹ Aᵀ", Def, dual);
                }
                _ => unreachable!(),
            }
        }
        Family::Mix => {
            let (_, b) = problem.h_b()?;
            let bt = b.transpose();
            let om = spec.omega();
            let th = spec.theta();
            let both = m - &at * th * a - &bt * ga * b;
            let third = m - &bt * ga * b;
            match id {
                SchemeId::Mix4 => {
                    push("M", "M ∈ S++", Def, Some(m.clone()));
                    push("Theta", "Θ ∈ S++", Def, Some(th.clone()));
                    push("Gamma", "Γ ∈ S++", Def, Some(ga.clone()));
                    push("Omega", "Ω ∈ S+", Semi, Some(om.clone()));
                    push("coupling", "M ≻ Aᵀ Θ A + Bᵀ Γ B", Def, Some(both));
                }
                _ => {
                    push("M", "M ∈ S++", Def, Some(m.clone()));
                    push("Omega", "Ω ∈ S++", Def, Some(om.clone()));
                    push("Theta", "Θ ∈ S++", Def, Some(th.clone()));
                    push("Gamma", "Γ ∈ S++", Def, Some(ga.clone()));
                    if matches!(id, SchemeId::Mix3 | SchemeId::Mix6) {
                        push("coupling", "M ≻ Bᵀ Γ B", Def, Some(third));
                    } else {
                        push("coupling", "M ≻ Aᵀ Θ A + Bᵀ Γ B", Def, Some(both));
                    }
                    push("dual coupling", "Ω ≻ Θ", Def, Some(om - th));
                }
            }
        }
    }
    let mut notes = Vec::new();
    match build_ppa(problem, spec) {
        Ok(ppa) => {
            push("S", "S ∈ S++", Def, Some(ppa.s.dense().clone()));
            push("G", "G ∈ S++", Def, Some(ppa.g.dense().clone()));
        }
        Err(e) => {
            notes.push(format!("PPA matrices unavailable: {e}"));
            push("S", "S ∈ S++", Def, None);
            push("G", "G ∈ S++", Def, None);
        }
    }
    let strict_pass = entries.iter().all(|e| e.strict);
    let degenerate_pass = entries.iter().all(|e| e.weak);
    let verdict = if strict_pass {
        Verdict::StrictPass
    } else if degenerate_pass {
        Verdict::DegeneratePass
    } else {
        Verdict::Fail
    };
    for e in entries.iter().filter(|e| !e.strict && e.weak) {
        notes.push(format!("{} holds only semidefinitely (degenerate)", e.name));
    }
    Ok(ConditionReport {
        scheme: id,
        entries,
        verdict,
        strict_pass,
        degenerate_pass,
        notes,
    })
}

/// Iterates `c^0..c^K` and the proximal outputs `c̃^0..c̃^{K-1}`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trace {
    pub states: Vec<StackedPoint>,
    pub tildes: Vec<StackedPoint>,
    /// Seconds since the start of the run, one per completed step.
    pub timestamps: Option<Vec<f64>>,
}

impl Trace {
    /// Number of steps.
    pub fn len(&self) -> usize {
        self.tildes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tildes.is_empty()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RecordFlags {
    pub timestamps: bool,
}

/// Scheme bound to a problem, with the factorizations its steps reuse.
#[derive(Clone, Debug)]
pub struct PreparedScheme {
    problem: SplitProblem,
    spec: SchemeSpec,
    ppa: PpaMatrices,
    layout: BlockLayout,
    m_inv: Option<Mat>,
    gamma_inv: Option<Mat>,
    omega_inv: Option<Mat>,
    /// `M + AᵀΓA` (LAG) or `M + AᵀΘA` (MIX)
    w: Mat,
    /// `Ω + Γ` (LAG) or `Ω + Θ` (MIX)
    omega_plus: Option<Mat>,
}

fn conj_step(func: &ProxFunction, y: &Vector, w_inv: &Mat) -> Result<Vector> {
    func.prox_conjugate_metric_with_inverse(y, w_inv)
}

impl PreparedScheme {
    pub fn new(problem: &SplitProblem, spec: &SchemeSpec) -> Result<Self> {
        let ppa = build_ppa(problem, spec)?;
        let inv = Inverses::of(spec);
        let a = &problem.a;
        let at = a.transpose();
        let mt = &spec.metrics;
        let (w, omega_plus) = match spec.id.family() {
            Family::Lag => (&mt.m + &at * &mt.gamma * a, Some(spec.omega() + &mt.gamma)),
            Family::Pds => (mt.m.clone(), None),
            Family::Mix => (
                &mt.m + &at * spec.theta() * a,
                Some(spec.omega() + spec.theta()),
            ),
        };
        Ok(Self {
            layout: ppa.layout.clone(),
            problem: problem.clone(),
            spec: spec.clone(),
            ppa,
            m_inv: inv.m,
            gamma_inv: inv.gamma,
            omega_inv: inv.omega,
            w,
            omega_plus,
        })
    }

    pub fn ppa(&self) -> &PpaMatrices {
        &self.ppa
    }

    pub fn problem(&self) -> &SplitProblem {
        &self.problem
    }

    pub fn spec(&self) -> &SchemeSpec {
        &self.spec
    }

    pub fn layout(&self) -> &BlockLayout {
        &self.layout
    }

    fn need<'a>(&self, m: &'a Option<Mat>, what: &str) -> Result<&'a Mat> {
        Inverses::need(m, what, self.spec.id)
    }

    /// One step: `(c^{k+1}, c̃^k)`.
    pub fn step(&self, state: &StackedPoint) -> Result<(StackedPoint, StackedPoint)> {
        if state.layout() != &self.layout {
            return Err(Error::Dimension(format!(
                "state layout does not match {}",
                self.spec.id
            )));
        }
        let next = match self.spec.id.family() {
            Family::Lag => self.step_lag(state)?,
            Family::Pds => self.step_pds(state)?,
            Family::Mix => self.step_mix(state)?,
        };
        let tilde = if self.spec.id.relaxation_is_identity() {
            next.clone()
        } else {
            let c = state.values();
            let d = next.values() - c;
            state.with_values(c + &self.ppa.relax_inv * d)?
        };
        Ok((next, tilde))
    }

    fn step_lag(&self, c: &StackedPoint) -> Result<StackedPoint> {
        let (x, a, p) = (c.block(BX)?, c.block(BA)?, c.block(BP)?);
        let pr = &self.problem;
        let (f, g, am) = (&pr.f, &pr.g, &pr.a);
        let at = am.transpose();
        let mt = &self.spec.metrics;
        let (m, om, ga) = (&mt.m, self.spec.omega(), &mt.gamma);
        let op = || self.omega_plus.as_ref().expect("lag");
        let (x1, a1, p1) = match self.spec.id {
            SchemeId::Lag1 => {
                let x1 = f.prox_metric_affine(m, &(m * &x - &at * &p))?;
                let a1 = g.prox_metric_affine(om, &(om * &a + &p))?;
                let p1 = &p + ga * (am * (&x1 * 2.0 - &x) - (&a1 * 2.0 - &a));
                (x1, a1, p1)
            }
            SchemeId::Lag2 => {
                let x1 = f.prox_metric_affine(&self.w, &(m * &x + &at * (ga * &a) - &at * &p))?;
                let p1 = &p + ga * (am * &x1 - &a);
                let a1 = g.prox_metric_affine(om, &(om * &a + &p1 * 2.0 - &p))?;
                (x1, a1, p1)
            }
            SchemeId::Lag3 => {
                let a1 = g.prox_metric_affine(om, &(om * &a + &p))?;
                let x1 = f.prox_metric_affine(&self.w, &(m * &x - &at * &p + &at * (ga * &a1)))?;
                let p1 = &p + ga * (am * &x1 + &a - &a1 * 2.0);
                (x1, a1, p1)
            }
            SchemeId::Lag4 => {
                let x1 = f.prox_metric_affine(m, &(m * &x - &at * &p))?;
                let a1 = g.prox_metric_affine(op(), &(om * &a + ga * (am * &x1) + &p))?;
                let p1 = &p + ga * (am * (&x1 * 2.0 - &x) - &a1);
                (x1, a1, p1)
            }
            SchemeId::Lag5 | SchemeId::Lag6 => {
                let x1 = f.prox_metric_affine(&self.w, &(m * &x + &at * (ga * &a) - &at * &p))?;
                let x_for_a = if self.spec.id == SchemeId::Lag5 {
                    &x
                } else {
                    &x1
                };
                let a1 = g.prox_metric_affine(op(), &(om * &a + ga * (am * x_for_a) + &p))?;
                let p1 = &p + ga * (am * &x1 - &a1);
                (x1, a1, p1)
            }
            SchemeId::Lag7 => {
                let mi = self.need(&self.m_inv, "M")?;
                let oi = self.need(&self.omega_inv, "Omega")?;
                let xt = f.prox_metric_affine(m, &(m * &x - &at * &p))?;
                let at_ = g.prox_metric_affine(om, &(om * &a + &p))?;
                let r = ga * (am * &x - &a);
                let x1 = &xt - mi * (&at * &r);
                let a1 = &at_ + oi * &r;
                let p1 = &p + ga * (am * &xt - &at_);
                (x1, a1, p1)
            }
            _ => unreachable!(),
        };
        StackedPoint::from_blocks(&self.layout, &[&x1, &a1, &p1])
    }

    fn step_pds(&self, c: &StackedPoint) -> Result<StackedPoint> {
        let (x, p) = (c.block(BX)?, c.block(BP)?);
        let pr = &self.problem;
        let (f, g, am) = (&pr.f, &pr.g, &pr.a);
        let at = am.transpose();
        let m = &self.spec.metrics.m;
        let gi = self.need(&self.gamma_inv, "Gamma")?;
        // p-step: prox_{g*}^Γ(p + Γ⁻¹ A z)
        let pstep = |z: &Vector| conj_step(g, &(&p + gi * (am * z)), gi);
        let xstep = |q: &Vector| f.prox_metric_affine(m, &(m * &x - &at * q));
        let (x1, p1) = match self.spec.id {
            SchemeId::Pds1 => {
                let x1 = xstep(&p)?;
                let p1 = pstep(&(&x1 * 2.0 - &x))?;
                (x1, p1)
            }
            SchemeId::Pds2 => {
                let p1 = pstep(&x)?;
                let x1 = xstep(&(&p1 * 2.0 - &p))?;
                (x1, p1)
            }
            SchemeId::Pds3 => {
                let mi = self.need(&self.m_inv, "M")?;
                let p1 = pstep(&x)?;
                let xt = xstep(&p1)?;
                let x1 = &xt - mi * (&at * (gi * (am * (&xt - &x)))) - mi * (&at * (&p1 - &p));
                (x1, p1)
            }
            SchemeId::Pds4 => {
                let mi = self.need(&self.m_inv, "M")?;
                let x1 = xstep(&p)?;
                let pt = pstep(&x1)?;
                let p1 = &pt - gi * (am * (mi * (&at * (&pt - &p)))) + gi * (am * (&x1 - &x));
                (x1, p1)
            }
            SchemeId::Pds5 => {
                let pt = pstep(&x)?;
                let x1 = xstep(&pt)?;
                let p1 = &pt + gi * (am * (&x1 - &x));
                (x1, p1)
            }
            SchemeId::Pds6 => {
                let mi = self.need(&self.m_inv, "M")?;
                let xt = xstep(&p)?;
                let p1 = pstep(&xt)?;
                let x1 = &xt - mi * (&at * (&p1 - &p));
                (x1, p1)
            }
            SchemeId::Pds7 => {
                let mi = self.need(&self.m_inv, "M")?;
                let xt = xstep(&p)?;
                let pt = pstep(&x)?;
                let x1 = &xt - mi * (&at * (&pt - &p));
                let p1 = &pt + gi * (am * (&xt - &x));
                (x1, p1)
            }
            _ => unreachable!(),
        };
        StackedPoint::from_blocks(&self.layout, &[&x1, &p1])
    }

    fn step_mix(&self, c: &StackedPoint) -> Result<StackedPoint> {
        let (x, a, b, p) = (c.block(BX)?, c.block(BA)?, c.block(BB)?, c.block(BP)?);
        let pr = &self.problem;
        let (h, bm) = pr.h_b()?;
        let (f, g, am) = (&pr.f, &pr.g, &pr.a);
        let (at, bt) = (am.transpose(), bm.transpose());
        let mt = &self.spec.metrics;
        let (m, om, ga, th) = (&mt.m, self.spec.omega(), &mt.gamma, self.spec.theta());
        // b-step: prox_{h*}^{Γ⁻¹}(b + Γ B z)
        let bstep = |z: &Vector| conj_step(h, &(&b + ga * (bm * z)), ga);
        let x_plain = || f.prox_metric_affine(m, &(m * &x - &at * &p - &bt * &b));
        let x_pre =
            || f.prox_metric_affine(&self.w, &(m * &x + &at * (th * &a) - &bt * &b - &at * &p));
        let (x1, a1, b1, p1) = match self.spec.id {
            SchemeId::Mix1 => {
                let x1 = x_plain()?;
                let a1 = g.prox_metric_affine(om, &(om * &a + &p))?;
                let e = &x1 * 2.0 - &x;
                let b1 = bstep(&e)?;
                let p1 = &p + th * (am * &e - (&a1 * 2.0 - &a));
                (x1, a1, b1, p1)
            }
            SchemeId::Mix2 => {
                let x1 = x_plain()?;
                let e = &x1 * 2.0 - &x;
                let p1 = &p + th * (am * &e - &a);
                let a1 = g.prox_metric_affine(om, &(om * &a + &p1 * 2.0 - &p))?;
                let b1 = bstep(&e)?;
                (x1, a1, b1, p1)
            }
            SchemeId::Mix3 => {
                let x1 = x_pre()?;
                let p1 = &p + th * (am * &x1 - &a);
                let a1 = g.prox_metric_affine(om, &(om * &a + &p1 * 2.0 - &p))?;
                let b1 = bstep(&(&x1 * 2.0 - &x))?;
                (x1, a1, b1, p1)
            }
            SchemeId::Mix4 => {
                let x1 = x_plain()?;
                let opl = self.omega_plus.as_ref().expect("mix");
                let a1 = g.prox_metric_affine(opl, &(om * &a + &p + th * (am * &x1)))?;
                let b1 = bstep(&x1)? + ga * (bm * (&x1 - &x));
                let p1 = &p + th * (am * (&x1 * 2.0 - &x) - &a1);
                (x1, a1, b1, p1)
            }
            SchemeId::Mix5 => {
                let x1 = x_plain()?;
                let a1 = g.prox_metric_affine(om, &(om * &a + &p))?;
                let b1 = bstep(&x1)? + ga * (bm * (&x1 - &x));
                let p1 = &p + th * (am * (&x1 * 2.0 - &x) - (&a1 * 2.0 - &a));
                (x1, a1, b1, p1)
            }
            SchemeId::Mix6 => {
                let x1 = x_pre()?;
                let a1 = g.prox_metric_affine(om, &(om * &a + th * (am * &x1) - th * &a + &p))?;
                let b1 = bstep(&(&x1 * 2.0 - &x))?;
                let p1 = &p + th * (am * &x1 - &a1);
                (x1, a1, b1, p1)
            }
            _ => unreachable!(),
        };
        StackedPoint::from_blocks(&self.layout, &[&x1, &a1, &b1, &p1])
    }

    /// Runs `k` steps from `c0`.
    pub fn run(&self, c0: &StackedPoint, k: usize, record: RecordFlags) -> Result<Trace> {
        if k == 0 {
            return Err(Error::Argument("iteration count must be at least 1".into()));
        }
        let start = Instant::now();
        let mut states = Vec::with_capacity(k + 1);
        let mut tildes = Vec::with_capacity(k);
        let mut stamps = record.timestamps.then(|| Vec::with_capacity(k));
        states.push(c0.clone());
        for _ in 0..k {
            let (next, tilde) = self.step(states.last().expect("nonempty"))?;
            states.push(next);
            tildes.push(tilde);
            if let Some(s) = stamps.as_mut() {
                s.push(start.elapsed().as_secs_f64());
            }
        }
        Ok(Trace {
            states,
            tildes,
            timestamps: stamps,
        })
    }
}

/// One step of the scheme.
pub fn step(
    problem: &SplitProblem,
    spec: &SchemeSpec,
    state: &StackedPoint,
) -> Result<(StackedPoint, StackedPoint)> {
    PreparedScheme::new(problem, spec)?.step(state)
}

/// `k` steps of the scheme from `c0`.
pub fn run(
    problem: &SplitProblem,
    spec: &SchemeSpec,
    c0: &StackedPoint,
    k: usize,
    record: RecordFlags,
) -> Result<Trace> {
    PreparedScheme::new(problem, spec)?.run(c0, k, record)
}

/// Catalogued rewritings of a scheme under parameter relations.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum EquivalentForm {
    /// LAG-I with the `a`-update written through `prox_{g*}` of an auxiliary `s`.
    ConjugateSplit,
    /// LAG-I with `Ω = 2Γ` written with `s^k = p^k`; description only.
    SymmetricSplit,
    /// LAG-VI with `Ω = 0` as a primal-dual iteration with extrapolated multiplier.
    ExtrapolatedDual,
    /// LAG-VI with `M = I/τ - γAᵀA`, `Ω = 0`, `Γ = γI`: primal-dual hybrid gradient.
    Pdhg { tau: f64, gamma: f64 },
    /// LAG-V as a semi-implicit Arrow-Hurwicz step on `u = (x, a)`.
    ArrowHurwicz,
    /// LAG-VI with `M = 0`, `Ω = 0`, `Γ = γI`: classical ADMM.
    Admm { gamma: f64 },
}

impl EquivalentForm {
    pub fn name(self) -> &'static str {
        match self {
            EquivalentForm::ConjugateSplit => "conjugate-split",
            EquivalentForm::SymmetricSplit => "symmetric-split",
            EquivalentForm::ExtrapolatedDual => "extrapolated-dual",
            EquivalentForm::Pdhg { .. } => "pdhg",
            EquivalentForm::ArrowHurwicz => "arrow-hurwicz",
            EquivalentForm::Admm { .. } => "admm",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Equivalence {
    pub form: EquivalentForm,
    pub parameters: String,
    pub state_link: String,
}

const REL_EQ: f64 = 1e-12;

fn mat_close(a: &Mat, b: &Mat) -> bool {
    a.shape() == b.shape() && (a - b).amax() <= REL_EQ * (1.0 + a.amax().max(b.amax()))
}

/// `Some(s)` when `m = s I`.
fn identity_multiple(m: &Mat) -> Option<f64> {
    if m.nrows() != m.ncols() || m.nrows() == 0 {
        return None;
    }
    let s = m[(0, 0)];
    mat_close(m, &linops::scaled_identity(m.nrows(), s)).then_some(s)
}

fn is_zero(m: &Mat) -> bool {
    m.amax() <= REL_EQ
}

fn equivalence(
    problem: &SplitProblem,
    spec: &SchemeSpec,
    form: EquivalentForm,
) -> std::result::Result<Equivalence, String> {
    let mt = &spec.metrics;
    let want = |id: SchemeId| {
        if spec.id == id {
            Ok(())
        } else {
            Err(format!("{} applies to {id}, not {}", form.name(), spec.id))
        }
    };
    match form {
        EquivalentForm::ConjugateSplit => {
            want(SchemeId::Lag1)?;
            Ok(Equivalence {
                form,
                parameters: "same M, Ω, Γ".into(),
                state_link: "identical (x, a, p); auxiliary s^{k+1} = Ω a^k + p^k - Ω a^{k+1}"
                    .into(),
            })
        }
        EquivalentForm::SymmetricSplit => {
            want(SchemeId::Lag1)?;
            let om = spec.omega();
            if !mat_close(om, &(&mt.gamma * 2.0)) {
                return Err("relation Ω = 2Γ does not hold".into());
            }
            Ok(Equivalence {
                form,
                parameters: "Ω = 2Γ".into(),
                state_link:
                    "requires s^k = p^k at every step; no initialization recipe is catalogued"
                        .into(),
            })
        }
        EquivalentForm::ExtrapolatedDual => {
            want(SchemeId::Lag6)?;
            if !is_zero(spec.omega()) {
                return Err("relation Ω = 0 does not hold".into());
            }
            Ok(Equivalence {
                form,
                parameters: "Ω = 0, W = M + AᵀΓA".into(),
                state_link: "a^k = A x^k + Γ⁻¹(p^{k-1} - p^k); start p^{-1} = p^0 + Γ(a^0 - A x^0)"
                    .into(),
            })
        }
        EquivalentForm::Pdhg { .. } => {
            want(SchemeId::Lag6)?;
            if !is_zero(spec.omega()) {
                return Err("relation Ω = 0 does not hold".into());
            }
            let gamma = identity_multiple(&mt.gamma)
                .filter(|g| *g > 0.0)
                .ok_or("relation Γ = γI with γ > 0 does not hold")?;
            let at = problem.a.transpose();
            let w = &mt.m + &at * &problem.a * gamma;
            let inv_tau = identity_multiple(&w)
                .filter(|s| *s > 0.0)
                .ok_or("relation M = I/τ - γAᵀA with τ > 0 does not hold")?;
            Ok(Equivalence {
                form: EquivalentForm::Pdhg {
                    tau: 1.0 / inv_tau,
                    gamma,
                },
                parameters: format!("τ = {}, γ = {gamma}", 1.0 / inv_tau),
                state_link: "a^k = A x^k + (p^{k-1} - p^k)/γ; start p^{-1} = p^0 + γ(a^0 - A x^0)"
                    .into(),
            })
        }
        EquivalentForm::ArrowHurwicz => {
            want(SchemeId::Lag5)?;
            Ok(Equivalence {
                form,
                parameters: "R = [[M, AᵀΓ], [ΓA, Ω]], U = [A, -I]".into(),
                state_link: "u^k = (x^k, a^k), identical p^k".into(),
            })
        }
        EquivalentForm::Admm { .. } => {
            want(SchemeId::Lag6)?;
            if !is_zero(&mt.m) {
                return Err("relation M = 0 does not hold".into());
            }
            if !is_zero(spec.omega()) {
                return Err("relation Ω = 0 does not hold".into());
            }
            let gamma = identity_multiple(&mt.gamma)
                .filter(|g| *g > 0.0)
                .ok_or("relation Γ = γI with γ > 0 does not hold")?;
            Ok(Equivalence {
                form: EquivalentForm::Admm { gamma },
                parameters: format!("γ = {gamma}"),
                state_link: "identical (x, a, p); z^k = p^k + γ a^k".into(),
            })
        }
    }
}

const ALL_FORMS: [EquivalentForm; 6] = [
    EquivalentForm::ConjugateSplit,
    EquivalentForm::SymmetricSplit,
    EquivalentForm::ExtrapolatedDual,
    EquivalentForm::Pdhg {
        tau: 0.0,
        gamma: 0.0,
    },
    EquivalentForm::ArrowHurwicz,
    EquivalentForm::Admm { gamma: 0.0 },
];

/// All catalogued equivalent forms whose parameter relations hold.
pub fn equivalent_form(problem: &SplitProblem, spec: &SchemeSpec) -> Result<Vec<Equivalence>> {
    spec.validate(problem)?;
    Ok(ALL_FORMS
        .iter()
        .filter_map(|&f| equivalence(problem, spec, f).ok())
        .collect())
}

/// The named equivalent form, or a precondition error naming the violated relation.
pub fn require_equivalence(
    problem: &SplitProblem,
    spec: &SchemeSpec,
    form: EquivalentForm,
) -> Result<Equivalence> {
    spec.validate(problem)?;
    equivalence(problem, spec, form).map_err(Error::Precondition)
}

/// Runs the equivalent form for `k` steps from the scheme's own starting point; returns the
/// iterates mapped into the scheme's `(x, a, p)` layout.
pub fn run_equivalent(
    problem: &SplitProblem,
    spec: &SchemeSpec,
    form: EquivalentForm,
    c0: &StackedPoint,
    k: usize,
) -> Result<Vec<StackedPoint>> {
    let eq = require_equivalence(problem, spec, form)?;
    let layout = problem.layout(Family::Lag)?;
    if c0.layout() != &layout {
        return Err(Error::Dimension(
            "equivalent forms start from an (x, a, p) point".into(),
        ));
    }
    let (f, g, am) = (&problem.f, &problem.g, &problem.a);
    let at = am.transpose();
    let mt = &spec.metrics;
    let (m, ga) = (&mt.m, &mt.gamma);
    let mut x = c0.block(BX)?;
    let mut a = c0.block(BA)?;
    let mut p = c0.block(BP)?;
    let mut out = vec![c0.clone()];
    let pack = |x: &Vector, a: &Vector, p: &Vector| StackedPoint::from_blocks(&layout, &[x, a, p]);
    match eq.form {
        EquivalentForm::ConjugateSplit => {
            let om = spec.omega();
            let oi = linops::inverse(om, "Omega")?;
            for _ in 0..k {
                let s1 = conj_step(g, &(om * &a + &p), om)?;
                let a1 = &a + &oi * (&p - &s1);
                let x1 = f.prox_metric_affine(m, &(m * &x - &at * &p))?;
                let p1 = &p + ga * (am * (&x1 * 2.0 - &x) - (&a1 * 2.0 - &a));
                x = x1;
                a = a1;
                p = p1;
                out.push(pack(&x, &a, &p)?);
            }
        }
        EquivalentForm::SymmetricSplit => {
            return Err(Error::Unsupported(
                "the symmetric split is catalogued as a description only".into(),
            ))
        }
        EquivalentForm::ExtrapolatedDual => {
            let w = m + &at * ga * am;
            let mut p_prev = &p + ga * (&a - am * &x);
            for _ in 0..k {
                let x1 = f.prox_metric_affine(&w, &(&w * &x - &at * (&p * 2.0 - &p_prev)))?;
                let p1 = conj_step(g, &(ga * (am * &x1) + &p), ga)?;
                let gi = linops::inverse(ga, "Gamma")?;
                let a1 = am * &x1 + gi * (&p - &p1);
                p_prev = std::mem::replace(&mut p, p1);
                x = x1;
                out.push(pack(&x, &a1, &p)?);
            }
        }
        EquivalentForm::Pdhg { tau, gamma } => {
            let mut p_prev = &p + (&a - am * &x) * gamma;
            for _ in 0..k {
                let x1 = f.prox_scalar(&(&x - &at * (&p * 2.0 - &p_prev) * tau), tau)?;
                let p1 = g.prox_conjugate(&(&p + am * &x1 * gamma), gamma)?;
                let a1 = am * &x1 + (&p - &p1) / gamma;
                p_prev = std::mem::replace(&mut p, p1);
                x = x1;
                out.push(pack(&x, &a1, &p)?);
            }
        }
        EquivalentForm::ArrowHurwicz => {
            let n = problem.n();
            let m1 = problem.m1();
            let om = spec.omega();
            let mut r = Mat::zeros(n + m1, n + m1);
            r.view_mut((0, 0), (n, n)).copy_from(m);
            r.view_mut((0, n), (n, m1)).copy_from(&(&at * ga));
            r.view_mut((n, 0), (m1, n)).copy_from(&(ga * am));
            r.view_mut((n, n), (m1, m1)).copy_from(om);
            let mut u_op = Mat::zeros(m1, n + m1);
            u_op.view_mut((0, 0), (m1, n)).copy_from(am);
            u_op.view_mut((0, n), (m1, m1))
                .copy_from(&(-linops::identity(m1)));
            let rt = &r + u_op.transpose() * ga * &u_op;
            let off = rt
                .view((0, n), (n, m1))
                .amax()
                .max(rt.view((n, 0), (m1, n)).amax());
            if off > 1e-12 * (1.0 + rt.amax()) {
                return Err(Error::Consistency("R + UᵀΓU is not block diagonal".into()));
            }
            let rxx = rt.view((0, 0), (n, n)).into_owned();
            let raa = rt.view((n, n), (m1, m1)).into_owned();
            for _ in 0..k {
                let mut u = Vector::zeros(n + m1);
                u.rows_mut(0, n).copy_from(&x);
                u.rows_mut(n, m1).copy_from(&a);
                let rhs = &r * &u - u_op.transpose() * &p;
                let x1 = f.prox_metric_affine(&rxx, &rhs.rows(0, n).into_owned())?;
                let a1 = g.prox_metric_affine(&raa, &rhs.rows(n, m1).into_owned())?;
                let mut u1 = Vector::zeros(n + m1);
                u1.rows_mut(0, n).copy_from(&x1);
                u1.rows_mut(n, m1).copy_from(&a1);
                p = &p + ga * (&u_op * &u1);
                x = x1;
                a = a1;
                out.push(pack(&x, &a, &p)?);
            }
        }
        EquivalentForm::Admm { gamma } => {
            let ata = &at * am * gamma;
            for _ in 0..k {
                let x1 = f.prox_metric_affine(&ata, &(&at * (&a * gamma - &p)))?;
                let a1 = g.prox_scalar(&(am * &x1 + &p / gamma), 1.0 / gamma)?;
                p = &p + (am * &x1 - &a1) * gamma;
                x = x1;
                a = a1;
                out.push(pack(&x, &a, &p)?);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m1(v: f64) -> Mat {
        Mat::from_element(1, 1, v)
    }

    fn v(xs: &[f64]) -> Vector {
        Vector::from_vec(xs.to_vec())
    }

    fn scalar_lag() -> SplitProblem {
        let f = ProxFunction::quadratic(m1(1.0), v(&[-1.0])).unwrap();
        let g = ProxFunction::quadratic(m1(1.0), v(&[0.0])).unwrap();
        SplitProblem::new(f, g, m1(1.0)).unwrap()
    }

    fn pds_example(mu: f64) -> (SplitProblem, SchemeSpec) {
        let f = ProxFunction::quadratic(m1(1.0), v(&[-1.0])).unwrap();
        let g = ProxFunction::quadratic(m1(1.0), v(&[0.0])).unwrap();
        let pr = SplitProblem::new(f, g, m1(2.0)).unwrap();
        let spec = SchemeSpec::new(
            SchemeId::Pds1,
            Metrics::scalar(&pr, SchemeId::Pds1, mu, 0.0, 1.0, 0.0).unwrap(),
        );
        (pr, spec)
    }

    #[test]
    fn ids_roundtrip() {
        for id in SchemeId::ALL {
            assert_eq!(id.name().parse::<SchemeId>().unwrap(), id);
        }
        assert_eq!("pds-iv".parse::<SchemeId>().unwrap(), SchemeId::Pds4);
        assert!(matches!(
            "LAG-VIII".parse::<SchemeId>(),
            Err(Error::UnknownScheme(_))
        ));
    }

    #[test]
    fn lag6_matrices() {
        let pr = scalar_lag();
        let spec = SchemeSpec::new(
            SchemeId::Lag6,
            Metrics::scalar(&pr, SchemeId::Lag6, 2.0, 1.0, 3.0, 0.0).unwrap(),
        );
        let ppa = build_ppa(&pr, &spec).unwrap();
        let q = Mat::from_row_slice(3, 3, &[2.0, 0.0, 0.0, 0.0, 4.0, 0.0, 0.0, -1.0, 1.0 / 3.0]);
        let r = Mat::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, -3.0, 1.0]);
        assert!((ppa.q.dense() - q).amax() < 1e-15);
        assert!((ppa.relax.dense() - r).amax() < 1e-15);
        let s = Mat::from_diagonal(&v(&[2.0, 4.0, 1.0 / 3.0]));
        let g = Mat::from_diagonal(&v(&[2.0, 1.0, 1.0 / 3.0]));
        assert!((ppa.s.dense() - s).amax() < 1e-14);
        assert!((ppa.g.dense() - g).amax() < 1e-14);
        let (lo, hi) = linops::spectral_bounds(&ppa.s).unwrap();
        assert!((lo - 1.0 / 3.0).abs() < 1e-14 && (hi - 4.0).abs() < 1e-14);
    }

    #[test]
    fn pds1_matrices_and_conditions() {
        let (pr, spec) = pds_example(5.0);
        let ppa = build_ppa(&pr, &spec).unwrap();
        assert_eq!(
            ppa.q.dense(),
            &Mat::from_row_slice(2, 2, &[5.0, -2.0, -2.0, 1.0])
        );
        assert_eq!(ppa.relax.dense(), &linops::identity(2));
        let rep = check_conditions(&pr, &spec).unwrap();
        assert_eq!(rep.verdict, Verdict::StrictPass);
        let c = rep.entries.iter().find(|e| e.name == "coupling").unwrap();
        assert!((c.margin.unwrap() - 1.0).abs() < 1e-14);
        let (pr, spec) = pds_example(3.0);
        let rep = check_conditions(&pr, &spec).unwrap();
        assert_eq!(rep.verdict, Verdict::Fail);
        let c = rep.entries.iter().find(|e| e.name == "coupling").unwrap();
        assert!((c.margin.unwrap() + 1.0).abs() < 1e-14);
    }

    #[test]
    fn lag6_degenerate_report() {
        let pr = scalar_lag();
        let spec = SchemeSpec::new(
            SchemeId::Lag6,
            Metrics::scalar(&pr, SchemeId::Lag6, 0.0, 0.0, 1.0, 0.0).unwrap(),
        );
        let rep = check_conditions(&pr, &spec).unwrap();
        assert!(!rep.strict_pass);
        assert!(rep.degenerate_pass);
        assert_eq!(rep.verdict, Verdict::DegeneratePass);
        assert!(rep.notes.iter().any(|n| n.starts_with("S ")));
    }

    #[test]
    fn pds1_step_example() {
        let (pr, spec) = pds_example(5.0);
        let layout = pr.layout(Family::Pds).unwrap();
        let (next, tilde) = step(&pr, &spec, &StackedPoint::zeros(&layout)).unwrap();
        assert!((next.values() - v(&[1.0 / 6.0, 1.0 / 3.0])).amax() < 1e-15);
        assert_eq!(next, tilde);
    }

    #[test]
    fn saddle_is_fixed_for_all_lag_schemes() {
        // f = ½(x-1)², g = ½a², A = 1: saddle (½, ½, ½)
        let pr = scalar_lag();
        let layout = pr.layout(Family::Lag).unwrap();
        let star = StackedPoint::new(layout, v(&[0.5, 0.5, 0.5])).unwrap();
        for id in SchemeId::ALL.iter().filter(|i| i.family() == Family::Lag) {
            let spec =
                SchemeSpec::new(*id, Metrics::scalar(&pr, *id, 4.0, 3.0, 0.25, 0.0).unwrap());
            let (next, _) = step(&pr, &spec, &star).unwrap();
            assert!((next.values() - star.values()).amax() < 1e-14, "{id}");
        }
    }

    #[test]
    fn run_rejects_zero_steps() {
        let (pr, spec) = pds_example(5.0);
        let layout = pr.layout(Family::Pds).unwrap();
        let err = run(
            &pr,
            &spec,
            &StackedPoint::zeros(&layout),
            0,
            RecordFlags::default(),
        );
        assert!(matches!(err, Err(Error::Argument(_))));
    }

    #[test]
    fn equivalences_detected() {
        let pr = scalar_lag();
        let spec = SchemeSpec::new(
            SchemeId::Lag6,
            Metrics::scalar(&pr, SchemeId::Lag6, 0.0, 0.0, 2.0, 0.0).unwrap(),
        );
        let forms: Vec<_> = equivalent_form(&pr, &spec)
            .unwrap()
            .into_iter()
            .map(|e| e.form.name())
            .collect();
        assert!(forms.contains(&"admm") && forms.contains(&"extrapolated-dual"));
        let spec = SchemeSpec::new(
            SchemeId::Lag1,
            Metrics::scalar(&pr, SchemeId::Lag1, 3.0, 1.0, 1.0, 0.0).unwrap(),
        );
        let err = require_equivalence(&pr, &spec, EquivalentForm::SymmetricSplit).unwrap_err();
        assert!(matches!(err, Error::Precondition(ref s) if s.contains("Ω = 2Γ")));
        let spec = SchemeSpec::new(
            SchemeId::Pds1,
            Metrics::scalar(&pr, SchemeId::Pds1, 3.0, 1.0, 1.0, 0.0).unwrap(),
        );
        assert!(equivalent_form(&pr, &spec).unwrap().is_empty());
    }
}
