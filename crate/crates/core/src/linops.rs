//! Dense linear algebra over named variable blocks.

use std::fmt;
use std::ops::Range;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Relative factor in the default definiteness tolerance `1e-10 * (1 + lambda_max)`.
pub const DEFAULT_REL_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlockName {
    X,
    A,
    B,
    P,
}

impl BlockName {
    pub fn as_str(self) -> &'static str {
        match self {
            BlockName::X => "x",
            BlockName::A => "a",
            BlockName::B => "b",
            BlockName::P => "p",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "x" => Ok(BlockName::X),
            "a" => Ok(BlockName::A),
            "b" => Ok(BlockName::B),
            "p" => Ok(BlockName::P),
            other => Err(Error::Argument(format!("unknown block name '{other}'"))),
        }
    }
}

impl fmt::Display for BlockName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Ordered list of named blocks with their dimensions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockLayout {
    entries: Vec<(BlockName, usize)>,
}

impl BlockLayout {
    pub fn new(entries: Vec<(BlockName, usize)>) -> Result<Self> {
        for (i, (name, dim)) in entries.iter().enumerate() {
            if *dim == 0 {
                return Err(Error::Dimension(format!("block '{name}' has dimension 0")));
            }
            if entries[..i].iter().any(|(n, _)| n == name) {
                return Err(Error::Dimension(format!("block '{name}' appears twice")));
            }
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[(BlockName, usize)] {
        &self.entries
    }

    pub fn names(&self) -> impl Iterator<Item = BlockName> + '_ {
        self.entries.iter().map(|(n, _)| *n)
    }

    pub fn total(&self) -> usize {
        self.entries.iter().map(|(_, d)| d).sum()
    }

    pub fn contains(&self, name: BlockName) -> bool {
        self.entries.iter().any(|(n, _)| *n == name)
    }

    pub fn dim(&self, name: BlockName) -> Option<usize> {
        self.entries
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, d)| *d)
    }

    pub fn range(&self, name: BlockName) -> Option<Range<usize>> {
        let mut off = 0;
        for (n, d) in &self.entries {
            if *n == name {
                return Some(off..off + d);
            }
            off += d;
        }
        None
    }

    fn require(&self, name: BlockName) -> Result<Range<usize>> {
        self.range(name)
            .ok_or_else(|| Error::Dimension(format!("layout has no block '{name}'")))
    }

    /// Same blocks in a different order; used for permutation checks.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        if order.len() != self.entries.len() {
            return Err(Error::Argument("permutation length mismatch".into()));
        }
        Self::new(order.iter().map(|&i| self.entries[i]).collect())
    }
}

/// Access to a dense square or rectangular matrix.
pub trait AsDense {
    fn as_dense(&self) -> &Mat;
}

impl AsDense for Mat {
    fn as_dense(&self) -> &Mat {
        self
    }
}

/// Matrix partitioned by row and column layouts. Stored densely; absent blocks are zero.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockMatrix {
    row: BlockLayout,
    col: BlockLayout,
    dense: Mat,
}

impl AsDense for BlockMatrix {
    fn as_dense(&self) -> &Mat {
        &self.dense
    }
}

impl BlockMatrix {
    pub fn zeros(row: BlockLayout, col: BlockLayout) -> Self {
        let dense = Mat::zeros(row.total(), col.total());
        Self { row, col, dense }
    }

    pub fn square_zeros(layout: &BlockLayout) -> Self {
        Self::zeros(layout.clone(), layout.clone())
    }

    pub fn from_dense(row: BlockLayout, col: BlockLayout, dense: Mat) -> Result<Self> {
        if dense.nrows() != row.total() || dense.ncols() != col.total() {
            return Err(Error::Shape(format!(
                "dense matrix is {}x{}, layouts need {}x{}",
                dense.nrows(),
                dense.ncols(),
                row.total(),
                col.total()
            )));
        }
        Ok(Self { row, col, dense })
    }

    /// Square block matrix assembled from a list of (row, col, block) entries.
    pub fn from_blocks(
        layout: &BlockLayout,
        blocks: &[(BlockName, BlockName, Mat)],
    ) -> Result<Self> {
        let mut out = Self::square_zeros(layout);
        for (r, c, m) in blocks {
            out.add_block(*r, *c, m)?;
        }
        Ok(out)
    }

    pub fn row_layout(&self) -> &BlockLayout {
        &self.row
    }

    pub fn col_layout(&self) -> &BlockLayout {
        &self.col
    }

    pub fn dense(&self) -> &Mat {
        &self.dense
    }

    pub fn into_dense(self) -> Mat {
        self.dense
    }

    pub fn is_square(&self) -> bool {
        self.row == self.col
    }

    pub fn set_block(&mut self, r: BlockName, c: BlockName, m: &Mat) -> Result<()> {
        let (rr, cr) = (self.row.require(r)?, self.col.require(c)?);
        if m.nrows() != rr.len() || m.ncols() != cr.len() {
            return Err(Error::Shape(format!(
                "block ({r},{c}) expects {}x{}, got {}x{}",
                rr.len(),
                cr.len(),
                m.nrows(),
                m.ncols()
            )));
        }
        self.dense
            .view_mut((rr.start, cr.start), (rr.len(), cr.len()))
            .copy_from(m);
        Ok(())
    }

    pub fn add_block(&mut self, r: BlockName, c: BlockName, m: &Mat) -> Result<()> {
        let cur = self.block(r, c)?;
        if cur.shape() != m.shape() {
            return Err(Error::Shape(format!(
                "block ({r},{c}) expects {:?}, got {:?}",
                cur.shape(),
                m.shape()
            )));
        }
        self.set_block(r, c, &(cur + m))
    }

    pub fn block(&self, r: BlockName, c: BlockName) -> Result<Mat> {
        let (rr, cr) = (self.row.require(r)?, self.col.require(c)?);
        Ok(self
            .dense
            .view((rr.start, cr.start), (rr.len(), cr.len()))
            .into_owned())
    }

    pub fn transpose(&self) -> Self {
        Self {
            row: self.col.clone(),
            col: self.row.clone(),
            dense: self.dense.transpose(),
        }
    }

    /// Symmetric permutation of a square block matrix into `layout` (same blocks, new order).
    pub fn reorder(&self, layout: &BlockLayout) -> Result<Self> {
        if !self.is_square() {
            return Err(Error::Shape("reorder needs a square block matrix".into()));
        }
        let mut out = Self::square_zeros(layout);
        for r in layout.names() {
            for c in layout.names() {
                out.set_block(r, c, &self.block(r, c)?)?;
            }
        }
        Ok(out)
    }
}

/// Vector over a block layout.
#[derive(Clone, Debug, PartialEq)]
pub struct StackedPoint {
    layout: BlockLayout,
    values: Vector,
}

impl StackedPoint {
    pub fn new(layout: BlockLayout, values: Vector) -> Result<Self> {
        if values.len() != layout.total() {
            return Err(Error::Dimension(format!(
                "point has length {}, layout needs {}",
                values.len(),
                layout.total()
            )));
        }
        Ok(Self { layout, values })
    }

    pub fn zeros(layout: &BlockLayout) -> Self {
        Self {
            values: Vector::zeros(layout.total()),
            layout: layout.clone(),
        }
    }

    /// Builds a point from per-block vectors given in layout order.
    pub fn from_blocks(layout: &BlockLayout, blocks: &[&Vector]) -> Result<Self> {
        if blocks.len() != layout.entries().len() {
            return Err(Error::Dimension("wrong number of blocks".into()));
        }
        let mut out = Self::zeros(layout);
        for ((name, _), v) in layout.entries().iter().zip(blocks) {
            out.set_block(*name, v)?;
        }
        Ok(out)
    }

    pub fn layout(&self) -> &BlockLayout {
        &self.layout
    }

    pub fn values(&self) -> &Vector {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut Vector {
        &mut self.values
    }

    pub fn into_values(self) -> Vector {
        self.values
    }

    pub fn block(&self, name: BlockName) -> Result<Vector> {
        let r = self.layout.require(name)?;
        Ok(self.values.rows(r.start, r.len()).into_owned())
    }

    pub fn set_block(&mut self, name: BlockName, v: &Vector) -> Result<()> {
        let r = self.layout.require(name)?;
        if v.len() != r.len() {
            return Err(Error::Dimension(format!(
                "block '{name}' has length {}, got {}",
                r.len(),
                v.len()
            )));
        }
        self.values.rows_mut(r.start, r.len()).copy_from(v);
        Ok(())
    }

    pub fn with_values(&self, values: Vector) -> Result<Self> {
        Self::new(self.layout.clone(), values)
    }

    pub fn reorder(&self, layout: &BlockLayout) -> Result<Self> {
        let mut out = Self::zeros(layout);
        for name in layout.names() {
            out.set_block(name, &self.block(name)?)?;
        }
        Ok(out)
    }
}

/// `<v | S v>` for a block point and a square block matrix over the same layout.
pub fn metric_sqnorm(v: &StackedPoint, s: &BlockMatrix) -> Result<f64> {
    if s.row_layout() != v.layout() || s.col_layout() != v.layout() {
        return Err(Error::Dimension(
            "metric layout does not match the point layout".into(),
        ));
    }
    Ok(quad_form(v.values(), s.dense()))
}

/// `<v | S v>` on plain vectors.
pub fn quad_form(v: &Vector, s: &Mat) -> f64 {
    v.dot(&(s * v))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Definiteness {
    #[serde(rename = "PD")]
    PositiveDefinite,
    #[serde(rename = "PSD")]
    PositiveSemidefinite,
    #[serde(rename = "indefinite")]
    Indefinite,
}

impl Definiteness {
    pub fn is_psd(self) -> bool {
        !matches!(self, Definiteness::Indefinite)
    }

    pub fn is_pd(self) -> bool {
        matches!(self, Definiteness::PositiveDefinite)
    }
}

fn require_square(m: &Mat) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::Shape(format!(
            "expected a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

pub fn symmetric_part(m: &Mat) -> Mat {
    (m + m.transpose()) * 0.5
}

/// Eigenvalues (ascending) and matching eigenvectors of the symmetric part.
pub fn sym_eigen(m: &Mat) -> Result<(Vector, Mat)> {
    require_square(m)?;
    let n = m.nrows();
    if n == 0 {
        return Ok((Vector::zeros(0), Mat::zeros(0, 0)));
    }
    let eig = SymmetricEigen::new(symmetric_part(m));
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let vals = Vector::from_iterator(n, idx.iter().map(|&i| eig.eigenvalues[i]));
    let mut vecs = Mat::zeros(n, n);
    for (k, &i) in idx.iter().enumerate() {
        vecs.set_column(k, &eig.eigenvectors.column(i));
    }
    Ok((vals, vecs))
}

pub fn spectral_bounds<M: AsDense + ?Sized>(m: &M) -> Result<(f64, f64)> {
    let (vals, _) = sym_eigen(m.as_dense())?;
    if vals.is_empty() {
        return Err(Error::Shape("empty matrix".into()));
    }
    Ok((vals[0], vals[vals.len() - 1]))
}

pub fn lambda_min(m: &Mat) -> Result<f64> {
    spectral_bounds(m).map(|(lo, _)| lo)
}

/// Default tolerance `1e-10 * (1 + lambda_max)` of the symmetric part.
pub fn default_tolerance<M: AsDense + ?Sized>(m: &M) -> Result<f64> {
    let (_, hi) = spectral_bounds(m)?;
    Ok(DEFAULT_REL_TOL * (1.0 + hi.max(0.0)))
}

pub fn classify(lambda_min: f64, tol: f64) -> Definiteness {
    if lambda_min > tol {
        Definiteness::PositiveDefinite
    } else if lambda_min > -tol {
        Definiteness::PositiveSemidefinite
    } else {
        Definiteness::Indefinite
    }
}

pub fn definiteness<M: AsDense + ?Sized>(m: &M, tol: f64) -> Result<Definiteness> {
    let (lo, _) = spectral_bounds(m)?;
    Ok(classify(lo, tol))
}

pub fn definiteness_default<M: AsDense + ?Sized>(m: &M) -> Result<Definiteness> {
    let (lo, hi) = spectral_bounds(m)?;
    Ok(classify(lo, DEFAULT_REL_TOL * (1.0 + hi.max(0.0))))
}

fn asymmetry(m: &Mat) -> f64 {
    (m - m.transpose()).norm()
}

/// Rank-revealing factor `D` with `D Dᵀ = Q`, built from eigenpairs with eigenvalue above `tol`.
///
/// Columns are ordered by decreasing eigenvalue and each column's largest-magnitude
/// entry is made positive, so the result is deterministic.
pub fn factor_ddt<M: AsDense + ?Sized>(q: &M, tol: f64) -> Result<Mat> {
    let q = q.as_dense();
    require_square(q)?;
    if asymmetry(q) > 1e-12 * (1.0 + q.norm()) {
        return Err(Error::Definiteness(
            "factor_ddt needs a symmetric matrix".into(),
        ));
    }
    let (vals, vecs) = sym_eigen(q)?;
    let n = q.nrows();
    if vals.iter().any(|&l| l < -tol) {
        return Err(Error::Definiteness(format!(
            "matrix is indefinite (lambda_min = {:e})",
            vals[0]
        )));
    }
    let keep: Vec<usize> = (0..n).rev().filter(|&i| vals[i] > tol).collect();
    let mut d = Mat::zeros(n, keep.len());
    for (k, &i) in keep.iter().enumerate() {
        let mut col = vecs.column(i).into_owned() * vals[i].sqrt();
        let lead = col.iter().fold(
            0.0_f64,
            |acc, &v| if v.abs() > acc.abs() + 1e-14 { v } else { acc },
        );
        if lead < 0.0 {
            col = -col;
        }
        d.set_column(k, &col);
    }
    Ok(d)
}

/// Principal square root of a symmetric PSD matrix.
pub fn sym_sqrt(m: &Mat) -> Result<Mat> {
    let tol = default_tolerance(m)?;
    let (vals, vecs) = sym_eigen(m)?;
    if vals.iter().any(|&l| l < -tol) {
        return Err(Error::Definiteness(
            "square root of an indefinite matrix".into(),
        ));
    }
    let s = Vector::from_iterator(vals.len(), vals.iter().map(|&l| l.max(0.0).sqrt()));
    Ok(&vecs * Mat::from_diagonal(&s) * vecs.transpose())
}

/// Inverse principal square root of a symmetric PD matrix.
pub fn sym_inv_sqrt(m: &Mat) -> Result<Mat> {
    let tol = default_tolerance(m)?;
    let (vals, vecs) = sym_eigen(m)?;
    if vals.iter().any(|&l| l <= tol) {
        return Err(Error::Definiteness(
            "inverse square root needs a positive definite matrix".into(),
        ));
    }
    let s = Vector::from_iterator(vals.len(), vals.iter().map(|&l| 1.0 / l.sqrt()));
    Ok(&vecs * Mat::from_diagonal(&s) * vecs.transpose())
}

/// General inverse by LU; `what` names the matrix in the error.
pub fn inverse(m: &Mat, what: &str) -> Result<Mat> {
    require_square(m)?;
    let inv = m
        .clone()
        .lu()
        .try_inverse()
        .ok_or_else(|| Error::Definiteness(format!("{what} is singular")))?;
    if inv.iter().any(|v| !v.is_finite()) {
        return Err(Error::Definiteness(format!(
            "{what} is numerically singular"
        )));
    }
    Ok(inv)
}

/// Inverse of a symmetric PD matrix via Cholesky.
pub fn spd_inverse(m: &Mat, what: &str) -> Result<Mat> {
    require_square(m)?;
    symmetric_part(m)
        .cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| Error::Metric(format!("{what} is not positive definite")))
}

/// Solves `m u = b` by LU.
pub fn solve(m: &Mat, b: &Vector, what: &str) -> Result<Vector> {
    require_square(m)?;
    if m.nrows() != b.len() {
        return Err(Error::Dimension(format!("{what}: rhs length mismatch")));
    }
    let u = m
        .clone()
        .lu()
        .solve(b)
        .ok_or_else(|| Error::Definiteness(format!("{what} is singular")))?;
    if u.iter().any(|v| !v.is_finite()) {
        return Err(Error::Definiteness(format!(
            "{what} is numerically singular"
        )));
    }
    Ok(u)
}

pub fn is_diagonal(m: &Mat) -> bool {
    m.nrows() == m.ncols()
        && (0..m.nrows()).all(|i| (0..m.ncols()).all(|j| i == j || m[(i, j)] == 0.0))
}

pub fn identity(n: usize) -> Mat {
    Mat::identity(n, n)
}

pub fn scaled_identity(n: usize, s: f64) -> Mat {
    Mat::identity(n, n) * s
}

/// Max-abs entry distance, handy for trajectory comparisons.
pub fn max_abs_diff(a: &Vector, b: &Vector) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
