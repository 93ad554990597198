//! Uniform square grids, nodal fields, the 5-point Laplacian and the discrete residual.

use crate::holo::EntireFunction;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::{self, BufRead, Write};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("invalid domain: {0}")]
    Domain(String),
    #[error("field does not match domain")]
    Mismatch,
    #[error("non-finite value at node ({0}, {1})")]
    NonFinite(usize, usize),
    #[error("k must be at least 2, got {0}")]
    BadK(u32),
    #[error("boundary data: {0}")]
    Boundary(String),
    #[error("csv: {0}")]
    Csv(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// The square `[-R, R]^2` sampled by `n × n` nodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridDomain {
    half_width: f64,
    n: usize,
    spacing: f64,
}

impl GridDomain {
    pub fn new(half_width: f64, n: usize) -> Result<Self, GridError> {
        if !(half_width.is_finite() && half_width > 0.0) {
            return Err(GridError::Domain(format!("half width must be positive, got {half_width}")));
        }
        if n < 3 {
            return Err(GridError::Domain(format!("need at least 3 nodes per side, got {n}")));
        }
        Ok(Self { half_width, n, spacing: 2.0 * half_width / (n - 1) as f64 })
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> f64 {
        self.spacing
    }

    pub fn len(&self) -> usize {
        self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        j * self.n + i
    }

    #[inline]
    pub fn coord(&self, i: usize) -> f64 {
        -self.half_width + i as f64 * self.spacing
    }

    /// Node `(x_i, y_j)`.
    #[inline]
    pub fn node(&self, i: usize, j: usize) -> (f64, f64) {
        (self.coord(i), self.coord(j))
    }

    #[inline]
    pub fn z(&self, i: usize, j: usize) -> Complex64 {
        Complex64::new(self.coord(i), self.coord(j))
    }

    #[inline]
    pub fn is_boundary(&self, i: usize, j: usize) -> bool {
        i == 0 || j == 0 || i + 1 == self.n || j + 1 == self.n
    }

    /// Boundary nodes in a fixed order: bottom row, top row, then left and right columns.
    pub fn boundary_nodes(&self) -> Vec<(usize, usize)> {
        let n = self.n;
        let mut out = Vec::with_capacity(4 * (n - 1));
        for i in 0..n {
            out.push((i, 0));
        }
        for i in 0..n {
            out.push((i, n - 1));
        }
        for j in 1..n - 1 {
            out.push((0, j));
            out.push((n - 1, j));
        }
        out
    }

    /// Index range `lo..=hi` (per axis) of the concentric square of half the width.
    pub fn inner_range(&self) -> (usize, usize) {
        let c = (self.n - 1) / 2;
        let q = ((0.5 * self.half_width) / self.spacing + 1e-9).floor() as usize;
        let q = q.min(c);
        (c - q, c + q)
    }

    pub fn in_inner(&self, i: usize, j: usize) -> bool {
        let (lo, hi) = self.inner_range();
        (lo..=hi).contains(&i) && (lo..=hi).contains(&j)
    }

    /// The inner half-square as a grid of its own (shares nodes with `self`).
    pub fn inner_domain(&self) -> Result<GridDomain, GridError> {
        let (lo, hi) = self.inner_range();
        GridDomain::new((hi - lo) as f64 * 0.5 * self.spacing, hi - lo + 1)
    }

    /// Center index when `n` is odd.
    pub fn center(&self) -> Option<usize> {
        (self.n % 2 == 1).then_some((self.n - 1) / 2)
    }

    /// Euclidean distance from `z` to the boundary of the square.
    pub fn distance_to_boundary(&self, z: Complex64) -> f64 {
        let r = self.half_width;
        let (ax, ay) = (z.re.abs(), z.im.abs());
        if ax <= r && ay <= r {
            r - ax.max(ay)
        } else {
            let dx = (ax - r).max(0.0);
            let dy = (ay - r).max(0.0);
            dx.hypot(dy)
        }
    }
}

/// Real nodal samples on a grid, row-major (`y` outer, `x` inner).
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    domain: GridDomain,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(domain: GridDomain, values: Vec<f64>) -> Result<Self, GridError> {
        if values.len() != domain.len() {
            return Err(GridError::Mismatch);
        }
        let f = Self { domain, values };
        f.check_finite()?;
        Ok(f)
    }

    pub fn constant(domain: GridDomain, value: f64) -> Self {
        Self { domain, values: vec![value; domain.len()] }
    }

    pub fn from_fn(domain: GridDomain, f: impl Fn(f64, f64) -> f64 + Sync) -> Self {
        let n = domain.n();
        let mut values = vec![0.0; domain.len()];
        values.par_chunks_mut(n).enumerate().for_each(|(j, row)| {
            let y = domain.coord(j);
            for (i, v) in row.iter_mut().enumerate() {
                *v = f(domain.coord(i), y);
            }
        });
        Self { domain, values }
    }

    pub(crate) fn from_vec_unchecked(domain: GridDomain, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), domain.len());
        Self { domain, values }
    }

    pub fn domain(&self) -> &GridDomain {
        &self.domain
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[self.domain.idx(i, j)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let k = self.domain.idx(i, j);
        self.values[k] = v;
    }

    pub fn check_finite(&self) -> Result<(), GridError> {
        match self.values.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(k) => Err(GridError::NonFinite(k % self.domain.n(), k / self.domain.n())),
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64 + Sync) -> Self {
        Self { domain: self.domain, values: self.values.par_iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &ScalarField, f: impl Fn(f64, f64) -> f64 + Sync) -> Result<Self, GridError> {
        if self.domain != other.domain {
            return Err(GridError::Mismatch);
        }
        let values = self.values.par_iter().zip(other.values.par_iter()).map(|(&a, &b)| f(a, b)).collect();
        Ok(Self { domain: self.domain, values })
    }

    /// Copy of the inner half-square as a field on its own grid.
    pub fn restrict_inner(&self) -> Result<ScalarField, GridError> {
        let sub = self.domain.inner_domain()?;
        let (lo, _) = self.domain.inner_range();
        let m = sub.n();
        let mut values = Vec::with_capacity(sub.len());
        for j in 0..m {
            for i in 0..m {
                values.push(self.at(lo + i, lo + j));
            }
        }
        Ok(Self { domain: sub, values })
    }

    /// Interpolated value at `(x, y)` (bilinear, clamped to the square).
    pub fn bilinear(&self, x: f64, y: f64) -> f64 {
        let d = &self.domain;
        let h = d.h();
        let n = d.n();
        let fx = ((x + d.half_width()) / h).clamp(0.0, (n - 1) as f64);
        let fy = ((y + d.half_width()) / h).clamp(0.0, (n - 1) as f64);
        let i = (fx.floor() as usize).min(n - 2);
        let j = (fy.floor() as usize).min(n - 2);
        let (tx, ty) = (fx - i as f64, fy - j as f64);
        let a = self.at(i, j);
        let b = self.at(i + 1, j);
        let c = self.at(i, j + 1);
        let e = self.at(i + 1, j + 1);
        (1.0 - ty) * ((1.0 - tx) * a + tx * b) + ty * ((1.0 - tx) * c + tx * e)
    }

    /// Max |value| over interior nodes of the inner half-square.
    pub fn inner_max_abs(&self) -> f64 {
        let (lo, hi) = self.domain.inner_range();
        let mut m = 0.0_f64;
        for j in lo..=hi {
            for i in lo..=hi {
                if !self.domain.is_boundary(i, j) {
                    m = m.max(self.at(i, j).abs());
                }
            }
        }
        m
    }

    /// CSV with header `x,y,value`, row-major, 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "x,y,value")?;
        let n = self.domain.n();
        for j in 0..n {
            for i in 0..n {
                let (x, y) = self.domain.node(i, j);
                writeln!(out, "{:.16e},{:.16e},{:.16e}", x, y, self.at(i, j))?;
            }
        }
        Ok(())
    }

    /// Inverse of [`write_csv`](Self::write_csv); the grid is inferred from the coordinates.
    pub fn read_csv<R: BufRead>(input: R) -> Result<Self, GridError> {
        let mut rows = Vec::new();
        for (ln, line) in input.lines().enumerate() {
            let line = line?;
            if ln == 0 {
                if line.trim() != "x,y,value" {
                    return Err(GridError::Csv(format!("unexpected header {line:?}")));
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let parts: Vec<f64> = line
                .split(',')
                .map(|s| s.trim().parse::<f64>().map_err(|e| GridError::Csv(format!("line {}: {e}", ln + 1))))
                .collect::<Result<_, _>>()?;
            if parts.len() != 3 {
                return Err(GridError::Csv(format!("line {}: expected 3 columns", ln + 1)));
            }
            rows.push(parts);
        }
        let n = (rows.len() as f64).sqrt().round() as usize;
        if n * n != rows.len() || n < 3 {
            return Err(GridError::Csv(format!("{} rows is not a square grid", rows.len())));
        }
        let domain = GridDomain::new(-rows[0][0], n)?;
        ScalarField::new(domain, rows.into_iter().map(|r| r[2]).collect())
    }
}

/// 5-point Laplacian; boundary nodes carry 0.
pub fn laplacian(u: &ScalarField) -> ScalarField {
    let d = *u.domain();
    let mut out = vec![0.0; d.len()];
    apply_laplacian(&d, u.values(), &mut out);
    ScalarField::from_vec_unchecked(d, out)
}

pub(crate) fn apply_laplacian(d: &GridDomain, u: &[f64], out: &mut [f64]) {
    let n = d.n();
    let inv_h2 = 1.0 / (d.h() * d.h());
    out.par_chunks_mut(n).enumerate().for_each(|(j, row)| {
        if j == 0 || j + 1 == n {
            row.iter_mut().for_each(|v| *v = 0.0);
            return;
        }
        row[0] = 0.0;
        row[n - 1] = 0.0;
        let c = j * n;
        for i in 1..n - 1 {
            let k = c + i;
            row[i] = (u[k - 1] + u[k + 1] + u[k - n] + u[k + n] - 4.0 * u[k]) * inv_h2;
        }
    });
}

/// Max |u| over interior nodes.
pub fn interior_max_norm(u: &ScalarField) -> f64 {
    let n = u.domain().n();
    u.values()
        .par_chunks(n)
        .enumerate()
        .filter(|(j, _)| *j > 0 && *j + 1 < n)
        .map(|(_, row)| row[1..n - 1].iter().fold(0.0_f64, |m, v| m.max(v.abs())))
        .reduce(|| 0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum BoundaryKind {
    CompleteApprox,
    SubsolutionProfile,
    Explicit,
}

/// Dirichlet data, one value per node of [`GridDomain::boundary_nodes`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryData {
    pub kind: BoundaryKind,
    pub values: Vec<f64>,
    /// Offset `M` for complete-branch data.
    pub offset: Option<f64>,
}

impl BoundaryData {
    pub fn explicit(domain: &GridDomain, values: Vec<f64>) -> Result<Self, GridError> {
        let b = Self { kind: BoundaryKind::Explicit, values, offset: None };
        b.validate(domain)?;
        Ok(b)
    }

    /// Boundary values taken from a field.
    pub fn from_field(w: &ScalarField) -> Self {
        let values = w.domain().boundary_nodes().iter().map(|&(i, j)| w.at(i, j)).collect();
        Self { kind: BoundaryKind::Explicit, values, offset: None }
    }

    pub fn validate(&self, domain: &GridDomain) -> Result<(), GridError> {
        if self.values.len() != 4 * (domain.n() - 1) {
            return Err(GridError::Boundary(format!(
                "expected {} values, got {}",
                4 * (domain.n() - 1),
                self.values.len()
            )));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(GridError::Boundary("non-finite boundary value".into()));
        }
        if self.kind == BoundaryKind::CompleteApprox && !matches!(self.offset, Some(m) if m >= 0.0) {
            return Err(GridError::Boundary("complete-branch data needs an offset M >= 0".into()));
        }
        Ok(())
    }

    /// Overwrite the boundary nodes of `w`.
    pub fn apply(&self, w: &mut ScalarField) {
        let nodes = w.domain().boundary_nodes();
        for (&(i, j), &v) in nodes.iter().zip(&self.values) {
            w.set(i, j, v);
        }
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// One discretized instance of `Δw = e^w − |φ|² e^{−(k−1)w}`.
#[derive(Debug, Clone)]
pub struct VortexProblem {
    phi: EntireFunction,
    k: u32,
    domain: GridDomain,
    boundary: BoundaryData,
    /// `2·log|φ|` at every node (`-inf` at zeros).
    log_mod_sq: Vec<f64>,
}

impl VortexProblem {
    pub fn new(phi: EntireFunction, k: u32, domain: GridDomain, boundary: BoundaryData) -> Result<Self, GridError> {
        if k < 2 {
            return Err(GridError::BadK(k));
        }
        boundary.validate(&domain)?;
        let log_mod_sq = log_mod_sq(&phi, &domain);
        Ok(Self { phi, k, domain, boundary, log_mod_sq })
    }

    pub fn phi(&self) -> &EntireFunction {
        &self.phi
    }

    pub fn k(&self) -> u32 {
        self.k
    }

    pub fn domain(&self) -> &GridDomain {
        &self.domain
    }

    pub fn boundary(&self) -> &BoundaryData {
        &self.boundary
    }

    pub fn log_mod_sq(&self) -> &[f64] {
        &self.log_mod_sq
    }

    pub fn with_boundary(&self, boundary: BoundaryData) -> Result<Self, GridError> {
        boundary.validate(&self.domain)?;
        Ok(Self { boundary, ..self.clone() })
    }

    /// `F(w) = e^w − |φ|² e^{−(k−1)w}` at node `idx`.
    #[inline]
    pub fn nonlinearity(&self, idx: usize, w: f64) -> f64 {
        w.exp() - (self.log_mod_sq[idx] - (self.k - 1) as f64 * w).exp()
    }

    /// `∂F/∂w` at node `idx`.
    #[inline]
    pub fn nonlinearity_slope(&self, idx: usize, w: f64) -> f64 {
        w.exp() + (self.k - 1) as f64 * (self.log_mod_sq[idx] - (self.k - 1) as f64 * w).exp()
    }
}

pub(crate) fn log_mod_sq(phi: &EntireFunction, d: &GridDomain) -> Vec<f64> {
    let n = d.n();
    let mut v = vec![0.0; d.len()];
    v.par_chunks_mut(n).enumerate().for_each(|(j, row)| {
        for (i, x) in row.iter_mut().enumerate() {
            *x = 2.0 * phi.log_abs(d.z(i, j));
        }
    });
    v
}

/// `Δ_h w − e^w + |φ|² e^{−(k−1)w}` at interior nodes; boundary nodes carry 0.
pub fn residual(w: &ScalarField, prob: &VortexProblem) -> Result<ScalarField, GridError> {
    if w.domain() != prob.domain() {
        return Err(GridError::Mismatch);
    }
    let mut out = laplacian(w);
    subtract_nonlinearity(w, prob, out.values_mut());
    Ok(out)
}

pub(crate) fn subtract_nonlinearity(w: &ScalarField, prob: &VortexProblem, out: &mut [f64]) {
    let d = prob.domain();
    let n = d.n();
    let wv = w.values();
    out.par_chunks_mut(n).enumerate().for_each(|(j, row)| {
        if j == 0 || j + 1 == n {
            return;
        }
        for i in 1..n - 1 {
            let k = j * n + i;
            row[i] -= prob.nonlinearity(k, wv[k]);
        }
    });
}

/// Interior max of `|G_i| / max(1, e^{w_i})`, the residual in units of the dominant term.
pub fn scaled_residual_norm(w: &ScalarField, prob: &VortexProblem) -> Result<f64, GridError> {
    let g = residual(w, prob)?;
    Ok(scaled_norm(&g, w))
}

pub(crate) fn scaled_norm(g: &ScalarField, w: &ScalarField) -> f64 {
    let n = g.domain().n();
    g.values()
        .par_chunks(n)
        .zip(w.values().par_chunks(n))
        .enumerate()
        .filter(|(j, _)| *j > 0 && *j + 1 < n)
        .map(|(_, (gr, wr))| {
            (1..n - 1).fold(0.0_f64, |m, i| m.max(gr[i].abs() / wr[i].exp().max(1.0)))
        })
        .reduce(|| 0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn node_layout() {
        let d = GridDomain::new(1.0, 5).unwrap();
        assert_eq!(d.h(), 0.5);
        assert_eq!(d.node(0, 0), (-1.0, -1.0));
        assert_eq!(d.node(4, 2), (1.0, 0.0));
        assert_eq!(d.boundary_nodes().len(), 16);
        assert_eq!(d.inner_range(), (1, 3));
        assert!(GridDomain::new(1.0, 2).is_err());
        assert!(GridDomain::new(0.0, 5).is_err());
    }

    #[test]
    fn inner_domain_shares_nodes() {
        let d = GridDomain::new(8.0, 161).unwrap();
        let s = d.inner_domain().unwrap();
        assert_eq!(s.n(), 81);
        assert_abs_diff_eq!(s.half_width(), 4.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.h(), d.h(), epsilon = 1e-15);
    }

    #[test]
    fn laplacian_exact_on_quadratics() {
        let d = GridDomain::new(1.0, 21).unwrap();
        let aff = ScalarField::from_fn(d, |x, y| 3.0 * x - 2.0 * y + 0.5);
        assert!(interior_max_norm(&laplacian(&aff)) < 1e-12);
        let q = laplacian(&ScalarField::from_fn(d, |x, _| x * x));
        for j in 1..20 {
            for i in 1..20 {
                assert_abs_diff_eq!(q.at(i, j), 2.0, epsilon = 1e-11);
            }
        }
        assert_eq!(q.at(0, 5), 0.0);
    }

    #[test]
    fn laplacian_sine_truncation() {
        let d = GridDomain::new(1.0, 41).unwrap();
        let l = laplacian(&ScalarField::from_fn(d, |x, _| x.sin()));
        let err = ScalarField::from_fn(d, |x, _| -x.sin());
        let e = interior_max_norm(&l.zip_map(&err, |a, b| a - b).unwrap());
        let bound = d.h() * d.h() / 12.0 * 1f64.sin();
        assert!(e <= bound * 1.01, "{e} > {bound}");
    }

    #[test]
    fn norm_examples() {
        let d = GridDomain::new(1.0, 11).unwrap();
        assert_eq!(interior_max_norm(&ScalarField::constant(d, 0.0)), 0.0);
        let mut u = ScalarField::constant(d, 0.0);
        u.set(4, 6, -3.0);
        u.set(0, 0, 100.0);
        assert_eq!(interior_max_norm(&u), 3.0);
        let x = ScalarField::from_fn(d, |x, _| x);
        assert_abs_diff_eq!(interior_max_norm(&x), 1.0 - d.h(), epsilon = 1e-15);
    }

    #[test]
    fn exact_residuals() {
        let d = GridDomain::new(6.0, 201).unwrap();
        let e = EntireFunction::exp_z();
        let w = ScalarField::from_fn(d, |x, _| 2.0 * x / 3.0);
        let prob = VortexProblem::new(e, 3, d, BoundaryData::from_field(&w)).unwrap();
        assert!(interior_max_norm(&residual(&w, &prob).unwrap()) <= 1e-11);
        for k in 2..=4 {
            let c = EntireFunction::real_polynomial(&[-1.7]).unwrap();
            let w = ScalarField::constant(d, 2.0 / k as f64 * 1.7f64.ln());
            let prob = VortexProblem::new(c, k, d, BoundaryData::from_field(&w)).unwrap();
            assert!(interior_max_norm(&residual(&w, &prob).unwrap()) <= 1e-12);
        }
    }

    #[test]
    fn csv_roundtrip() {
        let d = GridDomain::new(2.0, 7).unwrap();
        let f = ScalarField::from_fn(d, |x, y| (x * 1.3).sin() + y.exp() / 7.0);
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("x,y,value\n"));
        let g = ScalarField::read_csv(&buf[..]).unwrap();
        assert_eq!(g.domain().n(), 7);
        for (a, b) in f.values().iter().zip(g.values()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn bilinear_reproduces_affine() {
        let d = GridDomain::new(3.0, 13).unwrap();
        let f = ScalarField::from_fn(d, |x, y| 2.0 * x - y + 1.0);
        assert_abs_diff_eq!(f.bilinear(0.37, -1.91), 2.0 * 0.37 + 1.91 + 1.0, epsilon = 1e-12);
    }
}
