//! Geometric developments of normalized solutions: the hyperbolic affine sphere in ℝ³ (k = 3)
//! and the spacelike CMC surface in ℝ^{2,1} with its Gauss map into ℍ² (k = 2).
//!
//! Frames are carried across each grid edge by the exact exponential of the connection matrix
//! frozen at the edge midpoint. The fill follows a fixed spanning tree: along the x-axis from
//! the origin, then up and down each column.

use crate::grid::{laplacian, GridDomain, GridError, ScalarField, VortexProblem};
use crate::holo::{EntireFunction, HoloError};
use nalgebra::{Matrix3, Matrix4};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::{self, BufRead, Write};
use std::ops::{Mul, Sub};
use thiserror::Error;

/// Largest normalized residual accepted by the developments.
pub const DEVELOP_RESIDUAL_TOLERANCE: f64 = 1e-7;
/// Largest `|Im f| / max(1, |f|)` tolerated in the affine development.
pub const REALITY_TOLERANCE: f64 = 1e-6;
/// Largest `|⟨N,N⟩ + 1|` tolerated in the CMC development.
pub const NORMAL_DRIFT_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Error)]
pub enum DevelopError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Holo(#[from] HoloError),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("frame propagation produced non-finite values at ({x}, {y})")]
    NonFinite { x: f64, y: f64 },
    #[error("developed immersion is not real: |Im f| reaches {0:e}")]
    Reality(f64),
    #[error("Gauss map left the hyperboloid: |<N,N> + 1| = {value:e} at ({x}, {y})")]
    NormalDrift { x: f64, y: f64, value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Mode {
    Eq1,
    WangK3,
    HarmonicK2,
}

impl Mode {
    /// The `k` of the base equation, if the mode fixes one.
    pub fn required_k(self) -> Option<u32> {
        match self {
            Mode::Eq1 => None,
            Mode::WangK3 => Some(3),
            Mode::HarmonicK2 => Some(2),
        }
    }

    /// `φ = s·U` (affine) or `φ = s·q` (CMC) in the base equation.
    pub fn phi_scale(self) -> f64 {
        match self {
            Mode::Eq1 => 1.0,
            Mode::WangK3 => 4.0,
            Mode::HarmonicK2 => 2.0,
        }
    }

    /// `v = c·w + log d` for a base solution `w`, as `(c, log d)`.
    pub fn substitution(self) -> (f64, f64) {
        let ln2 = std::f64::consts::LN_2;
        match self {
            Mode::Eq1 => (1.0, 0.0),
            Mode::WangK3 => (1.0, -ln2),
            Mode::HarmonicK2 => (0.5, -0.5 * ln2),
        }
    }

    /// Base-equation `φ` for a given differential.
    pub fn base_phi(self, differential: &EntireFunction) -> EntireFunction {
        differential.scaled(Complex64::new(self.phi_scale(), 0.0))
    }
}

/// A solution of `Δv = 2e^v − 4|U|²e^{−2v}` (WANG_K3) or `Δv = e^{2v} − |q|²e^{−2v}` (HARMONIC_K2).
#[derive(Debug, Clone)]
pub struct NormalizedSolution {
    pub w: ScalarField,
    pub mode: Mode,
    pub differential: EntireFunction,
}

impl NormalizedSolution {
    pub fn new(w: ScalarField, mode: Mode, differential: EntireFunction) -> Result<Self, DevelopError> {
        if mode == Mode::Eq1 {
            return Err(DevelopError::Precondition("EQ1 has no geometric normalization".into()));
        }
        Ok(Self { w, mode, differential })
    }

    pub fn domain(&self) -> &GridDomain {
        self.w.domain()
    }

    pub fn restrict_inner(&self) -> Result<Self, DevelopError> {
        Ok(Self { w: self.w.restrict_inner()?, mode: self.mode, differential: self.differential.clone() })
    }

    fn log_diff_sq(&self) -> Vec<f64> {
        let d = self.domain();
        (0..d.len()).map(|k| 2.0 * self.differential.log_abs(d.z(k % d.n(), k / d.n()))).collect()
    }

    /// Right-hand side and its dominant exponential term at a node.
    fn rhs(&self, v: f64, log_sq: f64) -> (f64, f64) {
        match self.mode {
            Mode::WangK3 => {
                let lead = 2.0 * v.exp();
                (lead - (4f64.ln() + log_sq - 2.0 * v).exp(), lead)
            }
            _ => {
                let lead = (2.0 * v).exp();
                (lead - (log_sq - 2.0 * v).exp(), lead)
            }
        }
    }

    /// Interior residual `Δ_h v − RHS(v)`, zero on the boundary.
    pub fn residual(&self) -> ScalarField {
        let d = *self.domain();
        let lap = laplacian(&self.w);
        let log_sq = self.log_diff_sq();
        let mut out = ScalarField::constant(d, 0.0);
        for j in 1..d.n() - 1 {
            for i in 1..d.n() - 1 {
                let (rhs, _) = self.rhs(self.w.at(i, j), log_sq[d.idx(i, j)]);
                out.set(i, j, lap.at(i, j) - rhs);
            }
        }
        out
    }

    /// Max interior residual divided by `max(1, leading exponential)`.
    pub fn residual_norm(&self) -> f64 {
        let d = *self.domain();
        let g = self.residual();
        let log_sq = self.log_diff_sq();
        let mut worst = 0.0_f64;
        for j in 1..d.n() - 1 {
            for i in 1..d.n() - 1 {
                let (_, lead) = self.rhs(self.w.at(i, j), log_sq[d.idx(i, j)]);
                worst = worst.max(g.at(i, j).abs() / lead.max(1.0));
            }
        }
        worst
    }
}

/// Map a converged base solution into the mode's normalization. `prob.phi()` must be the
/// base `φ` (`4U` or `2q`).
pub fn normalize(w_eq1: &ScalarField, prob: &VortexProblem, mode: Mode) -> Result<NormalizedSolution, DevelopError> {
    let k = mode
        .required_k()
        .ok_or_else(|| DevelopError::Precondition("EQ1 has no geometric normalization".into()))?;
    if prob.k() != k {
        return Err(DevelopError::Precondition(format!("{mode:?} needs k = {k}, problem has k = {}", prob.k())));
    }
    if w_eq1.domain() != prob.domain() {
        return Err(GridError::Mismatch.into());
    }
    let (c, log_d) = mode.substitution();
    let differential = prob.phi().scaled(Complex64::new(1.0 / mode.phi_scale(), 0.0));
    NormalizedSolution::new(w_eq1.map(|w| c * w + log_d), mode, differential)
}

/// Connection matrices that can be exponentiated and composed around loops.
trait FrameMatrix: Copy + Send + Sync + Mul<Output = Self> + Sub<Output = Self> {
    const DIM: usize;
    fn identity() -> Self;
    fn expm(&self) -> Self;
    fn scale(&self, s: f64) -> Self;
    fn entry_abs(&self, r: usize, c: usize) -> f64;
    fn is_finite(&self) -> bool;
}

impl FrameMatrix for Matrix3<Complex64> {
    const DIM: usize = 3;
    fn identity() -> Self {
        Matrix3::identity()
    }
    fn expm(&self) -> Self {
        self.exp()
    }
    fn scale(&self, s: f64) -> Self {
        self * Complex64::new(s, 0.0)
    }
    fn entry_abs(&self, r: usize, c: usize) -> f64 {
        self[(r, c)].norm()
    }
    fn is_finite(&self) -> bool {
        self.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }
}

impl FrameMatrix for Matrix4<f64> {
    const DIM: usize = 4;
    fn identity() -> Self {
        Matrix4::identity()
    }
    fn expm(&self) -> Self {
        self.exp()
    }
    fn scale(&self, s: f64) -> Self {
        self * s
    }
    fn entry_abs(&self, r: usize, c: usize) -> f64 {
        self[(r, c)].abs()
    }
    fn is_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Axis {
    X,
    Y,
}

/// Structure equations `∂_x F = A_x F`, `∂_y F = A_y F` for a frame `F` stored row-wise.
trait Structure: Sync {
    type M: FrameMatrix;
    fn generator(&self, axis: Axis, w: f64, wx: f64, wy: f64, diff: Complex64) -> Self::M;
    /// Diagonal gauge in which the loop defect is measured.
    fn gauge(&self, w: f64) -> [f64; 4];
    fn initial(&self, w: f64) -> Self::M;
}

/// Rows `(f, f_z, f_z̄)`.
struct Wang;

impl Structure for Wang {
    type M = Matrix3<Complex64>;

    fn generator(&self, axis: Axis, w: f64, wx: f64, wy: f64, u: Complex64) -> Self::M {
        let zero = Complex64::new(0.0, 0.0);
        let one = Complex64::new(1.0, 0.0);
        let half_e = Complex64::new(0.5 * w.exp(), 0.0);
        let wz = Complex64::new(0.5 * wx, -0.5 * wy);
        let ue = u * (-w).exp();
        let a = Matrix3::new(zero, one, zero, zero, wz, ue, half_e, zero, zero);
        let b = Matrix3::new(zero, zero, one, half_e, zero, zero, zero, ue.conj(), wz.conj());
        match axis {
            Axis::X => a + b,
            Axis::Y => (a - b) * Complex64::new(0.0, 1.0),
        }
    }

    fn gauge(&self, w: f64) -> [f64; 4] {
        let s = (-0.5 * w).exp();
        [1.0, s, s, 1.0]
    }

    fn initial(&self, w: f64) -> Self::M {
        let a = 0.5 * (0.5 * w).exp();
        let zero = Complex64::new(0.0, 0.0);
        Matrix3::new(
            zero,
            zero,
            Complex64::new(1.0, 0.0),
            Complex64::new(a, 0.0),
            Complex64::new(0.0, -a),
            zero,
            Complex64::new(a, 0.0),
            Complex64::new(0.0, a),
            zero,
        )
    }
}

/// Rows `(f, e1, e2, N)` with `f_x = e^w e1`, `f_y = e^w e2`, `N` the future unit normal.
struct Cmc;

impl Structure for Cmc {
    type M = Matrix4<f64>;

    fn generator(&self, axis: Axis, w: f64, wx: f64, wy: f64, q: Complex64) -> Self::M {
        let e = w.exp();
        let lam = e * e;
        let a = (lam + q.re) / e;
        let b = -q.im / e;
        let c = (lam - q.re) / e;
        let mut m = Matrix4::zeros();
        match axis {
            Axis::X => {
                m[(0, 1)] = e;
                m[(1, 2)] = -wy;
                m[(1, 3)] = a;
                m[(2, 1)] = wy;
                m[(2, 3)] = b;
                m[(3, 1)] = a;
                m[(3, 2)] = b;
            }
            Axis::Y => {
                m[(0, 2)] = e;
                m[(1, 2)] = wx;
                m[(1, 3)] = b;
                m[(2, 1)] = -wx;
                m[(2, 3)] = c;
                m[(3, 1)] = b;
                m[(3, 2)] = c;
            }
        }
        m
    }

    fn gauge(&self, w: f64) -> [f64; 4] {
        [(-w).exp(), 1.0, 1.0, 1.0]
    }

    fn initial(&self, _w: f64) -> Self::M {
        let mut m = Matrix4::zeros();
        m[(1, 0)] = 1.0;
        m[(2, 1)] = 1.0;
        m[(3, 2)] = 1.0;
        m
    }
}

/// Second-order nodal gradient: centered inside, one-sided at the ends.
fn nodal_gradient(w: &ScalarField, axis: Axis) -> Vec<f64> {
    let d = w.domain();
    let n = d.n();
    let inv = 1.0 / (2.0 * d.h());
    let mut out = vec![0.0; d.len()];
    for j in 0..n {
        for i in 0..n {
            let (m, at): (usize, Box<dyn Fn(usize) -> f64>) = match axis {
                Axis::X => (i, Box::new(|t| w.at(t, j))),
                Axis::Y => (j, Box::new(|t| w.at(i, t))),
            };
            out[d.idx(i, j)] = if m == 0 {
                (-3.0 * at(0) + 4.0 * at(1) - at(2)) * inv
            } else if m == n - 1 {
                (3.0 * at(n - 1) - 4.0 * at(n - 2) + at(n - 3)) * inv
            } else {
                (at(m + 1) - at(m - 1)) * inv
            };
        }
    }
    out
}

struct Edges<'a, S: Structure> {
    sol: &'a NormalizedSolution,
    structure: S,
    gx: Vec<f64>,
    gy: Vec<f64>,
}

impl<'a, S: Structure> Edges<'a, S> {
    fn new(sol: &'a NormalizedSolution, structure: S) -> Self {
        Self { sol, structure, gx: nodal_gradient(&sol.w, Axis::X), gy: nodal_gradient(&sol.w, Axis::Y) }
    }

    /// Transport across one edge from `(i0, j0)` to the neighbouring node `(i1, j1)`.
    fn transport(&self, (i0, j0): (usize, usize), (i1, j1): (usize, usize)) -> Result<S::M, DevelopError> {
        let d = self.sol.domain();
        let h = d.h();
        let (a, b) = (d.idx(i0, j0), d.idx(i1, j1));
        let w = self.sol.w.values();
        let wm = 0.5 * (w[a] + w[b]);
        let (x0, y0) = d.node(i0, j0);
        let (x1, y1) = d.node(i1, j1);
        let zm = Complex64::new(0.5 * (x0 + x1), 0.5 * (y0 + y1));
        let diff = self.sol.differential.eval(zm)?;
        let (axis, step, wx, wy) = if j0 == j1 {
            let s = i1 as f64 - i0 as f64;
            (Axis::X, s * h, (w[b] - w[a]) / (s * h), 0.5 * (self.gy[a] + self.gy[b]))
        } else {
            let s = j1 as f64 - j0 as f64;
            (Axis::Y, s * h, 0.5 * (self.gx[a] + self.gx[b]), (w[b] - w[a]) / (s * h))
        };
        Ok(self.structure.generator(axis, wm, wx, wy, diff).scale(step).expm())
    }

    /// Frames at every node along the spanning tree rooted at the origin.
    fn fill(&self) -> Result<Vec<S::M>, DevelopError> {
        let d = *self.sol.domain();
        let n = d.n();
        if n.is_multiple_of(2) {
            return Err(DevelopError::Precondition(format!("n = {n} must be odd so the origin is a node")));
        }
        let c = n / 2;
        let mut axis = vec![self.structure.initial(self.sol.w.at(c, c)); n];
        for i in c + 1..n {
            axis[i] = self.transport((i - 1, c), (i, c))? * axis[i - 1];
        }
        for i in (0..c).rev() {
            axis[i] = self.transport((i + 1, c), (i, c))? * axis[i + 1];
        }
        let columns: Vec<Vec<S::M>> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut col = vec![axis[i]; n];
                for j in c + 1..n {
                    col[j] = self.transport((i, j - 1), (i, j))? * col[j - 1];
                }
                for j in (0..c).rev() {
                    col[j] = self.transport((i, j + 1), (i, j))? * col[j + 1];
                }
                Ok(col)
            })
            .collect::<Result<_, DevelopError>>()?;
        let mut frames = vec![axis[c]; d.len()];
        for (i, col) in columns.into_iter().enumerate() {
            for (j, m) in col.into_iter().enumerate() {
                if !m.is_finite() {
                    let (x, y) = d.node(i, j);
                    return Err(DevelopError::NonFinite { x, y });
                }
                frames[d.idx(i, j)] = m;
            }
        }
        Ok(frames)
    }

    /// Gauge-balanced loop defect of the plaquette with lower-left corner `(i, j)`, over `h²`.
    fn plaquette(&self, i: usize, j: usize) -> Result<f64, DevelopError> {
        let d = self.sol.domain();
        let bottom = self.transport((i, j), (i + 1, j))?;
        let right = self.transport((i + 1, j), (i + 1, j + 1))?;
        let top = self.transport((i + 1, j + 1), (i, j + 1))?;
        let left = self.transport((i, j + 1), (i, j))?;
        let defect = left * top * right * bottom - S::M::identity();
        let g = self.structure.gauge(self.sol.w.at(i, j));
        let mut worst = 0.0_f64;
        for r in 0..S::M::DIM {
            for c in 0..S::M::DIM {
                worst = worst.max(defect.entry_abs(r, c) * g[r] / g[c]);
            }
        }
        Ok(worst / (d.h() * d.h()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Window {
    Full,
    /// Plaquettes whose corners all lie in the inner half-square.
    Inner,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HolonomyReport {
    /// Max over plaquettes of `‖D(T − I)D⁻¹‖_max / h²`.
    pub max_density: f64,
    pub x: f64,
    pub y: f64,
    pub window: Window,
}

/// Path-dependence of the frame system: the loop transport around each plaquette, measured in
/// the balanced gauge and divided by its area. Vanishes at second order when `w` solves the
/// normalized equation.
pub fn holonomy_defect(sol: &NormalizedSolution, window: Window) -> Result<HolonomyReport, DevelopError> {
    match sol.mode {
        Mode::WangK3 => holonomy_with(Edges::new(sol, Wang), window),
        Mode::HarmonicK2 => holonomy_with(Edges::new(sol, Cmc), window),
        Mode::Eq1 => Err(DevelopError::Precondition("EQ1 has no frame system".into())),
    }
}

fn holonomy_with<S: Structure>(edges: Edges<'_, S>, window: Window) -> Result<HolonomyReport, DevelopError> {
    let d = *edges.sol.domain();
    let (lo, hi) = match window {
        Window::Full => (0, d.n() - 1),
        Window::Inner => d.inner_range(),
    };
    let rows: Vec<(f64, usize, usize)> = (lo..hi)
        .into_par_iter()
        .map(|j| {
            let mut best = (f64::NEG_INFINITY, lo, j);
            for i in lo..hi {
                let v = edges.plaquette(i, j)?;
                if v > best.0 {
                    best = (v, i, j);
                }
            }
            Ok(best)
        })
        .collect::<Result<_, DevelopError>>()?;
    let mut best = (0.0, lo, lo);
    for r in rows {
        if r.0 > best.0 {
            best = r;
        }
    }
    let (x, y) = d.node(best.1, best.2);
    Ok(HolonomyReport { max_density: best.0, x, y, window })
}

#[derive(Debug, Clone)]
pub struct DevelopedSurface {
    pub domain: GridDomain,
    pub mode: Mode,
    /// Immersion at each node, row-major.
    pub positions: Vec<[f64; 3]>,
    /// `(f_z, f_z̄)` at each node.
    pub frames: Vec<[[Complex64; 3]; 2]>,
    /// Largest `|Im f| / max(1, |f|)` over nodes (zero for the CMC mode).
    pub max_imag: f64,
}

impl DevelopedSurface {
    /// `f_x = f_z + f_z̄`.
    pub fn fx(&self, k: usize) -> [f64; 3] {
        let [a, b] = &self.frames[k];
        [0, 1, 2].map(|c| (a[c] + b[c]).re)
    }

    /// `f_y = i(f_z − f_z̄)`.
    pub fn fy(&self, k: usize) -> [f64; 3] {
        let [a, b] = &self.frames[k];
        [0, 1, 2].map(|c| ((a[c] - b[c]) * Complex64::new(0.0, 1.0)).re)
    }

    /// Componentwise `(min, max)` of the positions.
    pub fn bounding_box(&self) -> ([f64; 3], [f64; 3]) {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in &self.positions {
            for c in 0..3 {
                lo[c] = lo[c].min(p[c]);
                hi[c] = hi[c].max(p[c]);
            }
        }
        (lo, hi)
    }

    /// Largest `|f_z̄ − conj(f_z)|` over nodes.
    pub fn conjugacy_defect(&self) -> f64 {
        self.frames
            .iter()
            .flat_map(|[a, b]| (0..3).map(move |c| (b[c] - a[c].conj()).norm()))
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone)]
pub struct GaussMapField {
    pub domain: GridDomain,
    /// Points of the hyperboloid `⟨N,N⟩ = −1`, `N³ > 0`.
    pub normals: Vec<[f64; 3]>,
    /// `e^{2w} − |q|²e^{−2w}` from the solution.
    pub jacobian: ScalarField,
    /// `det(N_x, N_y, N)` from fourth-order differences of the normals.
    pub jacobian_fd: ScalarField,
    /// Largest `|⟨N, e_a⟩|` over nodes and unit tangents.
    pub orthogonality: f64,
}

impl GaussMapField {
    /// Largest `|⟨N,N⟩ + 1|`.
    pub fn hyperboloid_defect(&self) -> f64 {
        self.normals.iter().map(|n| (minkowski(n, n) + 1.0).abs()).fold(0.0, f64::max)
    }

    pub fn min_height(&self) -> f64 {
        self.normals.iter().map(|n| n[2]).fold(f64::INFINITY, f64::min)
    }
}

/// `diag(1, 1, −1)` inner product.
pub fn minkowski(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] - a[2] * b[2]
}

fn det3(a: &[f64; 3], b: &[f64; 3], c: &[f64; 3]) -> f64 {
    a[0] * (b[1] * c[2] - b[2] * c[1]) - a[1] * (b[0] * c[2] - b[2] * c[0]) + a[2] * (b[0] * c[1] - b[1] * c[0])
}

fn require_mode(sol: &NormalizedSolution, mode: Mode) -> Result<(), DevelopError> {
    if sol.mode != mode {
        return Err(DevelopError::Precondition(format!("expected a {mode:?} solution, got {:?}", sol.mode)));
    }
    let r = sol.residual_norm();
    if !(r <= DEVELOP_RESIDUAL_TOLERANCE) {
        return Err(DevelopError::Precondition(format!(
            "normalized residual {r:e} exceeds {DEVELOP_RESIDUAL_TOLERANCE:e}"
        )));
    }
    Ok(())
}

/// Hyperbolic affine sphere with Blaschke metric `e^v|dz|²` and Pick differential `U dz³`.
/// Base frame: `f = (0,0,1)`, `f_z = e^{v(0)/2}(1, −i, 0)/2`.
pub fn develop_affine_sphere(sol: &NormalizedSolution) -> Result<DevelopedSurface, DevelopError> {
    require_mode(sol, Mode::WangK3)?;
    let frames = Edges::new(sol, Wang).fill()?;
    let mut max_imag = 0.0_f64;
    let mut positions = Vec::with_capacity(frames.len());
    let mut pairs = Vec::with_capacity(frames.len());
    for m in &frames {
        let scale = [0, 1, 2].iter().map(|&c| m[(0, c)].norm_sqr()).sum::<f64>().sqrt().max(1.0);
        max_imag = [0, 1, 2].iter().fold(max_imag, |acc, &c| acc.max(m[(0, c)].im.abs() / scale));
        positions.push([0, 1, 2].map(|c| m[(0, c)].re));
        pairs.push([[0, 1, 2].map(|c| m[(1, c)]), [0, 1, 2].map(|c| m[(2, c)])]);
    }
    if max_imag > REALITY_TOLERANCE {
        return Err(DevelopError::Reality(max_imag));
    }
    Ok(DevelopedSurface { domain: *sol.domain(), mode: Mode::WangK3, positions, frames: pairs, max_imag })
}

/// Spacelike CMC immersion with `I = e^{2v}|dz|²`, Hopf differential `q`, and its Gauss map.
/// Base frame: `f = 0`, `f_x = e^{v(0)}(1,0,0)`, `f_y = e^{v(0)}(0,1,0)`, `N = (0,0,1)`.
pub fn develop_cmc(sol: &NormalizedSolution) -> Result<(DevelopedSurface, GaussMapField), DevelopError> {
    require_mode(sol, Mode::HarmonicK2)?;
    let d = *sol.domain();
    let frames = Edges::new(sol, Cmc).fill()?;
    let row = |m: &Matrix4<f64>, r: usize| [m[(r, 0)], m[(r, 1)], m[(r, 2)]];
    let mut positions = Vec::with_capacity(d.len());
    let mut pairs = Vec::with_capacity(d.len());
    let mut normals = Vec::with_capacity(d.len());
    let mut orthogonality = 0.0_f64;
    for (k, m) in frames.iter().enumerate() {
        let (e1, e2, nrm) = (row(m, 1), row(m, 2), row(m, 3));
        let drift = (minkowski(&nrm, &nrm) + 1.0).abs();
        if drift > NORMAL_DRIFT_TOLERANCE {
            let (x, y) = d.node(k % d.n(), k / d.n());
            return Err(DevelopError::NormalDrift { x, y, value: drift });
        }
        orthogonality = orthogonality.max(minkowski(&nrm, &e1).abs()).max(minkowski(&nrm, &e2).abs());
        let s = 0.5 * sol.w.values()[k].exp();
        let fz = [0, 1, 2].map(|c| Complex64::new(s * e1[c], -s * e2[c]));
        positions.push(row(m, 0));
        pairs.push([fz, fz.map(|z| z.conj())]);
        normals.push(nrm);
    }
    let jacobian = gauss_jacobian(sol);
    let nx = vector_diff(&normals, &d, Axis::X, 1);
    let ny = vector_diff(&normals, &d, Axis::Y, 1);
    let jfd = (0..d.len()).map(|k| det3(&nx[k], &ny[k], &normals[k])).collect();
    let gauss = GaussMapField {
        domain: d,
        normals,
        jacobian,
        jacobian_fd: ScalarField::new(d, jfd)?,
        orthogonality,
    };
    let surface = DevelopedSurface { domain: d, mode: Mode::HarmonicK2, positions, frames: pairs, max_imag: 0.0 };
    Ok((surface, gauss))
}

/// Gauss-map Jacobian `e^{2v} − |q|²e^{−2v}`, evaluated as `−e^{2v}·expm1(log|q|² − 4v)` so the
/// flat case `|q| = e^{2v}` gives zero exactly.
pub fn gauss_jacobian(sol: &NormalizedSolution) -> ScalarField {
    let d = *sol.domain();
    let mut out = ScalarField::constant(d, 0.0);
    for j in 0..d.n() {
        for i in 0..d.n() {
            let (v, log_q_sq) = (sol.w.at(i, j), 2.0 * sol.differential.log_abs(d.z(i, j)));
            out.set(i, j, -(2.0 * v).exp() * (log_q_sq - 4.0 * v).exp_m1());
        }
    }
    out
}

/// First (`order = 1`) or second (`order = 2`) derivative along one axis: fourth-order centered
/// where five points fit, second order next to the edge.
fn scalar_diff(values: &[f64], d: &GridDomain, axis: Axis, order: u8) -> Vec<f64> {
    let n = d.n();
    let h = d.h();
    let mut out = vec![0.0; d.len()];
    for j in 0..n {
        for i in 0..n {
            let m = if axis == Axis::X { i } else { j };
            let at = |t: usize| if axis == Axis::X { values[d.idx(t, j)] } else { values[d.idx(i, t)] };
            out[d.idx(i, j)] = match order {
                1 => {
                    if m >= 2 && m + 2 < n {
                        (-at(m + 2) + 8.0 * at(m + 1) - 8.0 * at(m - 1) + at(m - 2)) / (12.0 * h)
                    } else if m == 0 {
                        (-3.0 * at(0) + 4.0 * at(1) - at(2)) / (2.0 * h)
                    } else if m == n - 1 {
                        (3.0 * at(n - 1) - 4.0 * at(n - 2) + at(n - 3)) / (2.0 * h)
                    } else {
                        (at(m + 1) - at(m - 1)) / (2.0 * h)
                    }
                }
                _ => {
                    if m >= 2 && m + 2 < n {
                        (-at(m + 2) + 16.0 * at(m + 1) - 30.0 * at(m) + 16.0 * at(m - 1) - at(m - 2)) / (12.0 * h * h)
                    } else if m > 0 && m + 1 < n {
                        (at(m + 1) - 2.0 * at(m) + at(m - 1)) / (h * h)
                    } else if n >= 4 {
                        let s = |t: usize| if m == 0 { at(t) } else { at(n - 1 - t) };
                        (2.0 * s(0) - 5.0 * s(1) + 4.0 * s(2) - s(3)) / (h * h)
                    } else {
                        let s = |t: usize| if m == 0 { at(t) } else { at(n - 1 - t) };
                        (s(0) - 2.0 * s(1) + s(2)) / (h * h)
                    }
                }
            };
        }
    }
    out
}

fn vector_diff(values: &[[f64; 3]], d: &GridDomain, axis: Axis, order: u8) -> Vec<[f64; 3]> {
    let comps: Vec<Vec<f64>> = (0..3)
        .map(|c| {
            let comp: Vec<f64> = values.iter().map(|v| v[c]).collect();
            scalar_diff(&comp, d, axis, order)
        })
        .collect();
    (0..values.len()).map(|k| [comps[0][k], comps[1][k], comps[2][k]]).collect()
}

/// Log-density of the induced metric, reconstructed from the developed surface.
///
/// WANG_K3: `¼ log|det G|` with `G_ij = det(f_x, f_y, f_ij)`, which equals `v` for the Blaschke
/// metric `e^v|dz|²`. HARMONIC_K2: `½ log det g` for the Minkowski first fundamental form,
/// which equals `2v`. Position derivatives are fourth-order differences.
pub fn reconstruct_metric(surface: &DevelopedSurface) -> ScalarField {
    let d = surface.domain;
    let values = match surface.mode {
        Mode::HarmonicK2 => {
            let fx = vector_diff(&surface.positions, &d, Axis::X, 1);
            let fy = vector_diff(&surface.positions, &d, Axis::Y, 1);
            (0..d.len())
                .map(|k| {
                    let det = minkowski(&fx[k], &fx[k]) * minkowski(&fy[k], &fy[k]) - minkowski(&fx[k], &fy[k]).powi(2);
                    0.5 * det.ln()
                })
                .collect()
        }
        _ => {
            let fxx = vector_diff(&surface.positions, &d, Axis::X, 2);
            let fyy = vector_diff(&surface.positions, &d, Axis::Y, 2);
            let fpx = vector_diff(&surface.positions, &d, Axis::X, 1);
            let fxy = vector_diff(&fpx, &d, Axis::Y, 1);
            (0..d.len())
                .map(|k| {
                    let (fx, fy) = (surface.fx(k), surface.fy(k));
                    let g11 = det3(&fx, &fy, &fxx[k]);
                    let g22 = det3(&fx, &fy, &fyy[k]);
                    let g12 = det3(&fx, &fy, &fxy[k]);
                    0.25 * (g11 * g22 - g12 * g12).abs().ln()
                })
                .collect()
        }
    };
    ScalarField::from_vec_unchecked(d, values)
}

/// Max over inner half-square nodes of `|reconstructed − expected|`, where the expectation is
/// `v` (affine) or `2v` (CMC).
pub fn metric_error(surface: &DevelopedSurface, sol: &NormalizedSolution) -> Result<f64, DevelopError> {
    if surface.domain != *sol.domain() {
        return Err(GridError::Mismatch.into());
    }
    let factor = if surface.mode == Mode::HarmonicK2 { 2.0 } else { 1.0 };
    let rec = reconstruct_metric(surface);
    let d = surface.domain;
    let (lo, hi) = d.inner_range();
    let mut worst = 0.0_f64;
    for j in lo..=hi {
        for i in lo..=hi {
            let e = (rec.at(i, j) - factor * sol.w.at(i, j)).abs();
            worst = if e.is_nan() { f64::INFINITY } else { worst.max(e) };
        }
    }
    Ok(worst)
}

/// Wavefront OBJ: one vertex per node (row-major), two triangles per grid cell, 1-based.
pub fn write_obj<W: Write>(n: usize, positions: &[[f64; 3]], mut out: W) -> io::Result<()> {
    if positions.len() != n * n || positions.iter().flatten().any(|v| !v.is_finite()) {
        return Err(io::Error::new(io::ErrorKind::InvalidInput, "positions must be a finite n×n array"));
    }
    for p in positions {
        writeln!(out, "v {:.8e} {:.8e} {:.8e}", p[0], p[1], p[2])?;
    }
    for j in 0..n.saturating_sub(1) {
        for i in 0..n - 1 {
            let a = j * n + i + 1;
            let (b, c, e) = (a + 1, a + n + 1, a + n);
            writeln!(out, "f {a} {b} {c}")?;
            writeln!(out, "f {a} {c} {e}")?;
        }
    }
    Ok(())
}

pub fn export_mesh<W: Write>(surface: &DevelopedSurface, out: W) -> io::Result<()> {
    write_obj(surface.domain.n(), &surface.positions, out)
}

/// Vertices and face count of an OBJ file.
pub fn read_obj<R: BufRead>(input: R) -> io::Result<(Vec<[f64; 3]>, usize)> {
    let bad = |msg: String| io::Error::new(io::ErrorKind::InvalidData, msg);
    let mut vertices = Vec::new();
    let mut faces = 0;
    for line in input.lines() {
        let line = line?;
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some("v") => {
                let coords: Vec<f64> = parts
                    .map(|t| t.parse::<f64>().map_err(|e| bad(format!("{line}: {e}"))))
                    .collect::<Result<_, _>>()?;
                if coords.len() != 3 {
                    return Err(bad(format!("vertex needs three coordinates: {line}")));
                }
                vertices.push([coords[0], coords[1], coords[2]]);
            }
            Some("f") => faces += 1,
            _ => {}
        }
    }
    Ok((vertices, faces))
}

/// CSV `x,y,N1,N2,N3`.
pub fn write_gauss_csv<W: Write>(gauss: &GaussMapField, mut out: W) -> io::Result<()> {
    let d = gauss.domain;
    writeln!(out, "x,y,N1,N2,N3")?;
    for j in 0..d.n() {
        for i in 0..d.n() {
            let (x, y) = d.node(i, j);
            let v = gauss.normals[d.idx(i, j)];
            writeln!(out, "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}", x, y, v[0], v[1], v[2])?;
        }
    }
    Ok(())
}
