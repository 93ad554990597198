//! Solvers for the discretized vortex equation.
//!
//! [`solve_newton`] produces the reported fields; [`monotone_solve`] is the slower
//! order-preserving iteration between a sub- and a supersolution used to certify them.

use crate::grid::{
    log_mod_sq, residual, scaled_norm, BoundaryData, BoundaryKind, GridDomain, GridError, ScalarField, VortexProblem,
};
use crate::holo::{EntireFunction, HoloError};
use crate::linalg::{solve_shifted, CgError};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Tolerances {
    /// Monotone iteration target on the scaled residual.
    pub solve: f64,
    /// Newton target on the scaled residual.
    pub newton: f64,
    pub cg_relative: f64,
    pub cg_max_iterations: usize,
    pub max_halvings: u32,
    pub max_newton: usize,
    pub max_outer: usize,
    /// Slack for the sub/supersolution sign tests.
    pub weak: f64,
    /// Inner-square change that stops the boundary continuation.
    pub continuation: f64,
    pub clip: f64,
    pub lambda_factor: f64,
    pub offsets: Vec<f64>,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            solve: 1e-9,
            newton: 1e-10,
            cg_relative: 1e-10,
            cg_max_iterations: 50_000,
            max_halvings: 40,
            max_newton: 200,
            max_outer: 10_000,
            weak: 1e-6,
            continuation: 1e-6,
            clip: -40.0,
            lambda_factor: 1.1,
            offsets: (2..=12).map(|m| 2.0 * m as f64).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuationStep {
    pub offset: f64,
    pub newton_iterations: usize,
    pub final_residual: f64,
    /// Max change on the inner half-square against the previous offset.
    pub inner_change: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuationTrace {
    pub steps: Vec<ContinuationStep>,
    pub stabilized: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub iterations: usize,
    pub converged: bool,
    pub final_residual: f64,
    pub residual_history: Vec<f64>,
    pub boundary_kind: BoundaryKind,
    pub monotone_violations: usize,
    pub continuation_trace: Option<ContinuationTrace>,
}

#[derive(Debug, Error)]
pub enum SolveError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Holo(#[from] HoloError),
    #[error(transparent)]
    Cg(#[from] CgError),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("line search failed after {halvings} halvings at iteration {iteration} (residual {residual:e})")]
    LineSearch { iteration: usize, halvings: u32, residual: f64 },
    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("continuation did not stabilise by M = {offset} (last inner change {change:e}); domain too small")]
    ContinuationStall { offset: f64, change: f64 },
}

impl SolveError {
    /// Contract violations, as opposed to numerical failure.
    pub fn is_precondition(&self) -> bool {
        matches!(self, SolveError::Precondition(_) | SolveError::Holo(_) | SolveError::Grid(_))
    }
}

fn zeros_of(phi: &EntireFunction) -> Result<Vec<num_complex::Complex64>, SolveError> {
    if phi.degree() == 0 {
        Ok(vec![])
    } else {
        Ok(phi.zeros()?)
    }
}

/// Boundary values `(2/k)·log|φ|`; zeros of φ must stay `2h` away from the boundary.
pub fn make_boundary_subsolution(phi: &EntireFunction, k: u32, domain: &GridDomain) -> Result<BoundaryData, SolveError> {
    for z in zeros_of(phi)? {
        let d = domain.distance_to_boundary(z);
        if d < 2.0 * domain.h() {
            return Err(SolveError::Precondition(format!(
                "zero of phi at {z} lies within 2h of the boundary (distance {d:.3e})"
            )));
        }
    }
    let values: Vec<f64> =
        domain.boundary_nodes().iter().map(|&(i, j)| phi.subsolution_profile(k, domain.z(i, j))).collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(SolveError::Precondition("profile not finite on the boundary".into()));
    }
    Ok(BoundaryData { kind: BoundaryKind::SubsolutionProfile, values, offset: None })
}

/// Boundary values `max((2/k)·log|φ|, 0) + M`.
pub fn make_boundary_complete(phi: &EntireFunction, k: u32, domain: &GridDomain, offset: f64) -> BoundaryData {
    let values = domain
        .boundary_nodes()
        .iter()
        .map(|&(i, j)| phi.subsolution_profile(k, domain.z(i, j)).max(0.0) + offset)
        .collect();
    BoundaryData { kind: BoundaryKind::CompleteApprox, values, offset: Some(offset) }
}

/// `(2/k)·log|φ|` with values below `clip` (including `-inf`) raised to `clip`.
pub fn clipped_profile(phi: &EntireFunction, k: u32, domain: &GridDomain, clip: f64) -> ScalarField {
    ScalarField::from_fn(*domain, |x, y| phi.subsolution_profile(k, num_complex::Complex64::new(x, y)).max(clip))
}

/// Clipped profile in the interior, the problem's data on the boundary.
pub fn initial_guess(prob: &VortexProblem, tol: &Tolerances) -> ScalarField {
    let mut w = clipped_profile(prob.phi(), prob.k(), prob.domain(), tol.clip);
    prob.boundary().apply(&mut w);
    w
}

/// A discrete sub/supersolution pair compatible with the problem's boundary data.
///
/// Upper: the constant `max(boundary data, interior profile)`. Lower: the regularized profile
/// `(1/k)·log(|φ|² + ε²)` shifted down until the discrete subsolution test passes.
pub fn default_band(prob: &VortexProblem, tol: &Tolerances) -> Result<(ScalarField, ScalarField), SolveError> {
    let d = *prob.domain();
    let k = prob.k() as f64;
    let la2 = prob.log_mod_sq();
    let eps2: f64 = if prob.phi().degree() == 0 { 0.0 } else { 1.0 };
    let reg: Vec<f64> = la2
        .iter()
        .map(|&a| {
            if eps2 == 0.0 {
                a / k
            } else {
                let m = a.max(0.0);
                (m + ((a - m).exp() + eps2 * (-m).exp()).ln()) / k
            }
        })
        .collect();
    let profile_max = la2.iter().filter(|a| a.is_finite()).map(|a| a / k).fold(f64::NEG_INFINITY, f64::max);
    let top = prob.boundary().max().max(profile_max);
    let mut upper = ScalarField::constant(d, top);
    prob.boundary().apply(&mut upper);
    if !is_supersolution(prob, &upper, tol.weak)? {
        return Err(SolveError::Precondition("constant upper barrier is not a supersolution".into()));
    }
    // Max of two subsolutions: the regularized profile handles zeros of φ, the slightly
    // lowered exact profile keeps the band tight (and Λ small) where |φ| is large.
    for far in [0.0, 0.01, 0.05, 0.25, 1.0, 4.0] {
        for near in [0.0, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0] {
            let values = reg.iter().zip(la2).map(|(r, a)| (r - near).max(a / k - far)).collect();
            let mut lower = ScalarField::from_vec_unchecked(d, values);
            prob.boundary().apply(&mut lower);
            let ordered = lower.values().iter().zip(upper.values()).all(|(a, b)| *a <= b + 1e-10);
            if ordered && is_subsolution(prob, &lower, tol.weak)? {
                return Ok((lower, upper));
            }
        }
    }
    Err(SolveError::Precondition("no discrete subsolution found below the upper barrier".into()))
}

fn scaled_interior(prob: &VortexProblem, w: &ScalarField) -> Result<Vec<f64>, SolveError> {
    let g = residual(w, prob)?;
    Ok(g.values().iter().zip(w.values()).map(|(gi, wi)| gi / wi.exp().max(1.0)).collect())
}

/// Interior residual nonnegative up to `slack` (scaled units).
pub fn is_subsolution(prob: &VortexProblem, w: &ScalarField, slack: f64) -> Result<bool, SolveError> {
    Ok(scaled_interior(prob, w)?.iter().all(|&r| r >= -slack))
}

/// Interior residual nonpositive up to `slack` (scaled units).
pub fn is_supersolution(prob: &VortexProblem, w: &ScalarField, slack: f64) -> Result<bool, SolveError> {
    Ok(scaled_interior(prob, w)?.iter().all(|&r| r <= slack))
}

fn boundary_matches(prob: &VortexProblem, w: &ScalarField) -> bool {
    let nodes = prob.domain().boundary_nodes();
    nodes.iter().zip(&prob.boundary().values).all(|(&(i, j), &b)| (w.at(i, j) - b).abs() <= 1e-10 * (1.0 + b.abs()))
}

/// Order-preserving iteration between the barriers.
///
/// The decreasing sequence starts at `w_plus` and the increasing one at `w_minus`; each sweep
/// solves `(Λ − Δ_h) d = G(v)` for both with node-wise `Λ_i = factor·max(F'(u_i), F'(w_i))`,
/// `u ≤ w` the current lower and upper iterates. Every later iterate of either sequence stays in
/// `[u, w]`, so `F(v) − Λv` is non-increasing where it is evaluated and the map preserves order.
/// The returned field is the upper sequence.
pub fn monotone_solve(
    prob: &VortexProblem,
    w_minus: &ScalarField,
    w_plus: &ScalarField,
    tol: &Tolerances,
) -> Result<(ScalarField, SolveReport), SolveError> {
    let d = *prob.domain();
    if w_minus.domain() != &d || w_plus.domain() != &d {
        return Err(GridError::Mismatch.into());
    }
    if w_minus.values().iter().zip(w_plus.values()).any(|(a, b)| *a > b + 1e-10) {
        return Err(SolveError::Precondition("w_minus must not exceed w_plus".into()));
    }
    if !boundary_matches(prob, w_minus) || !boundary_matches(prob, w_plus) {
        return Err(SolveError::Precondition("barriers must carry the problem's boundary data".into()));
    }
    if !is_subsolution(prob, w_minus, tol.weak)? {
        return Err(SolveError::Precondition("w_minus is not a discrete subsolution".into()));
    }
    if !is_supersolution(prob, w_plus, tol.weak)? {
        return Err(SolveError::Precondition("w_plus is not a discrete supersolution".into()));
    }

    let mut upper = w_plus.clone();
    let mut lower = w_minus.clone();
    let mut history = Vec::new();
    let mut violations = 0usize;
    for it in 0..tol.max_outer {
        let gu = residual(&upper, prob)?;
        let r = scaled_norm(&gu, &upper);
        history.push(r);
        if r <= tol.solve {
            let report = SolveReport {
                iterations: it,
                converged: true,
                final_residual: r,
                residual_history: history,
                boundary_kind: prob.boundary().kind,
                monotone_violations: violations,
                continuation_trace: None,
            };
            return Ok((upper, report));
        }
        let gl = residual(&lower, prob)?;
        let lam: Vec<f64> = (0..d.len())
            .into_par_iter()
            .map(|k| {
                tol.lambda_factor
                    * prob.nonlinearity_slope(k, lower.values()[k]).max(prob.nonlinearity_slope(k, upper.values()[k]))
            })
            .collect();
        let (du, _) = solve_shifted(&d, &lam, gu.values(), tol.cg_relative, tol.cg_max_iterations)?;
        let (dl, _) = solve_shifted(&d, &lam, gl.values(), tol.cg_relative, tol.cg_max_iterations)?;
        let (uv, lv) = (upper.values_mut(), lower.values_mut());
        for k in 0..d.len() {
            let nu = uv[k] + du[k];
            let nl = lv[k] + dl[k];
            let slack = 1e-10 * (1.0 + uv[k].abs());
            let unordered = nu > uv[k] + slack || nl < lv[k] - slack || nl > nu + slack;
            let outside = nu < w_minus.values()[k] - slack || nu > w_plus.values()[k] + slack;
            if unordered || outside {
                violations += 1;
            }
            uv[k] = nu;
            lv[k] = nl;
        }
        upper.check_finite()?;
        lower.check_finite()?;
    }
    let r = scaled_norm(&residual(&upper, prob)?, &upper);
    Err(SolveError::NotConverged { iterations: tol.max_outer, residual: r })
}

/// Damped Newton iteration; each step solves `(diag F'(w) − Δ_h) δ = G(w)` by CG and halves
/// `δ` until the scaled residual decreases.
pub fn solve_newton(prob: &VortexProblem, w0: &ScalarField, tol: &Tolerances) -> Result<(ScalarField, SolveReport), SolveError> {
    let d = *prob.domain();
    if w0.domain() != &d {
        return Err(GridError::Mismatch.into());
    }
    w0.check_finite()?;
    let mut w = w0.clone();
    prob.boundary().apply(&mut w);
    let mut g = residual(&w, prob)?;
    let mut r = scaled_norm(&g, &w);
    let mut history = vec![r];
    for it in 0..tol.max_newton {
        if r <= tol.newton {
            let report = SolveReport {
                iterations: it,
                converged: true,
                final_residual: r,
                residual_history: history,
                boundary_kind: prob.boundary().kind,
                monotone_violations: 0,
                continuation_trace: None,
            };
            return Ok((w, report));
        }
        let slope: Vec<f64> = (0..d.len()).into_par_iter().map(|k| prob.nonlinearity_slope(k, w.values()[k])).collect();
        let (step, _) = solve_shifted(&d, &slope, g.values(), tol.cg_relative, tol.cg_max_iterations)?;
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..=tol.max_halvings {
            let trial: Vec<f64> = w.values().par_iter().zip(step.par_iter()).map(|(a, s)| a + t * s).collect();
            let trial = ScalarField::from_vec_unchecked(d, trial);
            let gt = residual(&trial, prob)?;
            let rt = scaled_norm(&gt, &trial);
            if rt < r {
                accepted = Some((trial, gt, rt));
                break;
            }
            t *= 0.5;
        }
        match accepted {
            Some((trial, gt, rt)) => {
                w = trial;
                g = gt;
                r = rt;
                history.push(r);
            }
            None => {
                return Err(SolveError::LineSearch { iteration: it, halvings: tol.max_halvings, residual: r });
            }
        }
    }
    if r <= tol.newton {
        let report = SolveReport {
            iterations: tol.max_newton,
            converged: true,
            final_residual: r,
            residual_history: history,
            boundary_kind: prob.boundary().kind,
            monotone_violations: 0,
            continuation_trace: None,
        };
        return Ok((w, report));
    }
    Err(SolveError::NotConverged { iterations: tol.max_newton, residual: r })
}

/// What to do when the continuation reaches the last offset without stabilising.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StallPolicy {
    Fail,
    AcceptLast,
}

impl StallPolicy {
    /// Polynomial φ must stabilise; for non-polynomial φ no finite offset can, since |φ| → 0 in a sector.
    pub fn for_phi(phi: &EntireFunction) -> Self {
        if phi.is_polynomial() {
            StallPolicy::Fail
        } else {
            StallPolicy::AcceptLast
        }
    }
}

fn inner_change(a: &ScalarField, b: &ScalarField) -> f64 {
    let d = a.domain();
    let (lo, hi) = d.inner_range();
    let mut m = 0.0_f64;
    for j in lo..=hi {
        for i in lo..=hi {
            m = m.max((a.at(i, j) - b.at(i, j)).abs());
        }
    }
    m
}

/// Complete-branch solution: Newton solves with boundary data `max(profile, 0) + M` for the
/// offsets in `tol.offsets`, stopping once the inner half-square changes by at most
/// `tol.continuation` between consecutive offsets.
pub fn solve_complete(
    phi: &EntireFunction,
    k: u32,
    domain: &GridDomain,
    tol: &Tolerances,
    policy: StallPolicy,
) -> Result<(ScalarField, SolveReport), SolveError> {
    if tol.offsets.is_empty() {
        return Err(SolveError::Precondition("empty continuation schedule".into()));
    }
    let la2 = log_mod_sq(phi, domain);
    let mut prev: Option<ScalarField> = None;
    let mut steps = Vec::new();
    let mut history = Vec::new();
    let mut iterations = 0;
    let mut last_change = f64::INFINITY;
    for &m in &tol.offsets {
        let prob = VortexProblem::new(phi.clone(), k, *domain, make_boundary_complete(phi, k, domain, m))?;
        debug_assert_eq!(prob.log_mod_sq().len(), la2.len());
        let w0 = match &prev {
            Some(p) => {
                let mut w = p.clone();
                prob.boundary().apply(&mut w);
                w
            }
            None => initial_guess(&prob, tol),
        };
        let (w, rep) = solve_newton(&prob, &w0, tol)?;
        iterations += rep.iterations;
        history.extend_from_slice(&rep.residual_history);
        let change = prev.as_ref().map(|p| inner_change(p, &w));
        steps.push(ContinuationStep {
            offset: m,
            newton_iterations: rep.iterations,
            final_residual: rep.final_residual,
            inner_change: change,
        });
        let done = matches!(change, Some(c) if c <= tol.continuation);
        if let Some(c) = change {
            last_change = c;
        }
        if done || m == *tol.offsets.last().unwrap() {
            if !done && policy == StallPolicy::Fail {
                return Err(SolveError::ContinuationStall { offset: m, change: last_change });
            }
            let report = SolveReport {
                iterations,
                converged: true,
                final_residual: rep.final_residual,
                residual_history: history,
                boundary_kind: BoundaryKind::CompleteApprox,
                monotone_violations: 0,
                continuation_trace: Some(ContinuationTrace { steps, stabilized: done }),
            };
            return Ok((w, report));
        }
        prev = Some(w);
    }
    unreachable!("loop returns on the last offset")
}

/// Incomplete-branch solution: profile boundary data, Newton from the clipped profile.
pub fn solve_incomplete(
    phi: &EntireFunction,
    k: u32,
    domain: &GridDomain,
    tol: &Tolerances,
) -> Result<(ScalarField, SolveReport), SolveError> {
    let prob = VortexProblem::new(phi.clone(), k, *domain, make_boundary_subsolution(phi, k, domain)?)?;
    let w0 = initial_guess(&prob, tol);
    solve_newton(&prob, &w0, tol)
}

#[derive(Debug, Clone)]
pub struct TwoSolutions {
    pub complete: ScalarField,
    pub incomplete: ScalarField,
    pub complete_report: SolveReport,
    pub incomplete_report: SolveReport,
}

/// The complete and the incomplete solution for non-polynomial φ.
pub fn two_solutions(phi: &EntireFunction, k: u32, domain: &GridDomain, tol: &Tolerances) -> Result<TwoSolutions, SolveError> {
    if phi.is_polynomial() {
        return Err(SolveError::Precondition("two-solution pipeline needs a non-polynomial phi".into()));
    }
    for z in zeros_of(phi)? {
        let inside = domain.half_width() - z.re.abs().max(z.im.abs());
        if inside < 4.0 * domain.h() {
            return Err(SolveError::Precondition(format!("zero of phi at {z} is not 4h inside the domain")));
        }
    }
    let (complete, complete_report) = solve_complete(phi, k, domain, tol, StallPolicy::AcceptLast)?;
    let (incomplete, incomplete_report) = solve_incomplete(phi, k, domain, tol)?;
    Ok(TwoSolutions { complete, incomplete, complete_report, incomplete_report })
}
