//! Pointwise invariants of computed solutions: the subunity field, curvature, ordering,
//! ray lengths and the derived diagnostic fields.

use crate::grid::{laplacian, GridDomain, GridError, ScalarField, VortexProblem};
use crate::holo::EntireFunction;
use serde::{Deserialize, Serialize};
use std::io::{self, Write};
use thiserror::Error;

/// Slack on `max h ≤ 1` for complete-branch solutions.
pub const SUBUNITY_TOLERANCE: f64 = 1e-6;
/// Window increment below which a ray is declared to have converged.
pub const EPS_LENGTH: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("algebraic and stencil curvature differ by {diff:e} at ({x}, {y}) (allowed {allowed:e}); input not converged")]
    CurvatureMismatch { x: f64, y: f64, diff: f64, allowed: f64 },
    #[error("identity Δσ·e^(-w) = k(e^σ − 1) violated by {diff:e} at ({x}, {y}); input not converged")]
    SigmaIdentity { x: f64, y: f64, diff: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub x: f64,
    pub y: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvariantReport {
    pub name: String,
    pub passed: bool,
    pub witness: Option<Witness>,
    pub margin: f64,
    pub tolerance: f64,
    /// Why a check could not be evaluated.
    pub detail: Option<String>,
}

impl InvariantReport {
    /// Passed when `margin ≥ −tolerance`.
    pub fn tolerant(name: &str, witness: Option<Witness>, margin: f64, tolerance: f64) -> Self {
        Self { name: name.into(), passed: margin >= -tolerance, witness, margin, tolerance, detail: None }
    }

    /// Passed only when `margin > 0`.
    pub fn strict(name: &str, witness: Option<Witness>, margin: f64) -> Self {
        Self { name: name.into(), passed: margin > 0.0, witness, margin, tolerance: 0.0, detail: None }
    }

    /// Pass/fail of a check without a margin; failures carry the error text.
    pub fn outcome<E: std::fmt::Display>(name: &str, result: Result<(), E>) -> Self {
        let detail = result.err().map(|e| e.to_string());
        Self { name: name.into(), passed: detail.is_none(), witness: None, margin: 0.0, tolerance: 0.0, detail }
    }
}

/// Interior nodes of the inner half-square.
pub fn inner_nodes(d: &GridDomain) -> impl Iterator<Item = (usize, usize)> + '_ {
    let (lo, hi) = d.inner_range();
    (lo..=hi).flat_map(move |j| (lo..=hi).map(move |i| (i, j))).filter(move |&(i, j)| !d.is_boundary(i, j))
}

fn extreme(f: &ScalarField, largest: bool) -> Option<Witness> {
    let d = f.domain();
    let mut best: Option<Witness> = None;
    for (i, j) in inner_nodes(d) {
        let v = f.at(i, j);
        let better = match best {
            None => true,
            Some(b) => (largest && v > b.value) || (!largest && v < b.value),
        };
        if better {
            let (x, y) = d.node(i, j);
            best = Some(Witness { x, y, value: v });
        }
    }
    best
}

/// Largest value over the inner half-square.
pub fn inner_max(f: &ScalarField) -> Option<Witness> {
    extreme(f, true)
}

/// Smallest value over the inner half-square.
pub fn inner_min(f: &ScalarField) -> Option<Witness> {
    extreme(f, false)
}

/// `h = |φ|² e^{−kw}`, evaluated in log space.
pub fn subunity_field(w: &ScalarField, prob: &VortexProblem) -> Result<ScalarField, GridError> {
    if w.domain() != prob.domain() {
        return Err(GridError::Mismatch);
    }
    let k = prob.k() as f64;
    let values = w.values().iter().zip(prob.log_mod_sq()).map(|(wi, a)| (a - k * wi).exp()).collect();
    ScalarField::new(*w.domain(), values)
}

/// `max h ≤ 1 + 1e−6` on the inner half-square; the margin is `1 − max h`.
pub fn subunity_check(w: &ScalarField, prob: &VortexProblem) -> Result<InvariantReport, GridError> {
    let h = subunity_field(w, prob)?;
    let top = inner_max(&h);
    let margin = top.map_or(0.0, |t| 1.0 - t.value);
    Ok(InvariantReport::tolerant("subunity", top, margin, SUBUNITY_TOLERANCE))
}

/// Gaussian curvature `K = (h − 1)/2` of `e^w|dz|²` at interior nodes, cross-checked against
/// `−½ e^{−w} Δ_h w`. The two differ by `½ e^{−w} G(w)`, bounded through the solve tolerance.
pub fn curvature_field(w: &ScalarField, prob: &VortexProblem, solve_tol: f64) -> Result<ScalarField, VerifyError> {
    let h = subunity_field(w, prob)?;
    let lap = laplacian(w);
    let d = *w.domain();
    let mut out = ScalarField::constant(d, 0.0);
    for j in 1..d.n() - 1 {
        for i in 1..d.n() - 1 {
            let wi = w.at(i, j);
            let alg = 0.5 * (h.at(i, j) - 1.0);
            let stencil = -0.5 * (-wi).exp() * lap.at(i, j);
            let allowed = 10.0 * solve_tol * (-wi).exp().max(1.0);
            let diff = (alg - stencil).abs();
            if diff > allowed {
                let (x, y) = d.node(i, j);
                return Err(VerifyError::CurvatureMismatch { x, y, diff, allowed });
            }
            out.set(i, j, alg);
        }
    }
    Ok(out)
}

/// Blaschke curvature `−1 + 2|U|² e^{−3v}` for a solution of `Δv = 2e^v − 4|U|² e^{−2v}`.
pub fn blaschke_curvature(v: &ScalarField, pick: &EntireFunction) -> ScalarField {
    let d = *v.domain();
    let mut out = ScalarField::constant(d, 0.0);
    for j in 1..d.n() - 1 {
        for i in 1..d.n() - 1 {
            let a = 2.0 * pick.log_abs(d.z(i, j));
            out.set(i, j, -1.0 + 2.0 * (a - 3.0 * v.at(i, j)).exp());
        }
    }
    out
}

/// Strictly negative on the inner half-square; margin is `−max`.
pub fn negativity_check(name: &str, f: &ScalarField) -> InvariantReport {
    let top = inner_max(f);
    InvariantReport::strict(name, top, top.map_or(0.0, |t| -t.value))
}

/// Strictly positive on the inner half-square; margin is `min`.
pub fn positivity_check(name: &str, f: &ScalarField) -> InvariantReport {
    let low = inner_min(f);
    InvariantReport::strict(name, low, low.map_or(0.0, |t| t.value))
}

/// `w1 > w2` on the inner half-square.
pub fn ordering_check(w1: &ScalarField, w2: &ScalarField) -> Result<InvariantReport, GridError> {
    let eta = w1.zip_map(w2, |a, b| a - b)?;
    Ok(positivity_check("ordering", &eta))
}

/// `max h > δ` on the inner half-square: the solution is not δ-separated from the bound.
pub fn no_gap_check(w: &ScalarField, prob: &VortexProblem, delta: f64) -> Result<InvariantReport, GridError> {
    let h = subunity_field(w, prob)?;
    let top = inner_max(&h);
    Ok(InvariantReport::strict("no_gap", top, top.map_or(-delta, |t| t.value - delta)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RayVerdict {
    Divergent,
    Convergent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TailModel {
    /// `log ρ ≈ a + b·t`
    Exponential,
    /// `log ρ ≈ a + b·log t`
    Power,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailFit {
    pub model: TailModel,
    pub intercept: f64,
    pub rate: f64,
    pub rss: f64,
}

impl TailFit {
    pub fn integrable(&self) -> bool {
        match self.model {
            TailModel::Exponential => self.rate < 0.0,
            TailModel::Power => self.rate < -1.0,
        }
    }

    /// `∫_t^∞ ρ` under the fitted model.
    pub fn tail_integral(&self, t: f64) -> f64 {
        match self.model {
            TailModel::Exponential => (self.intercept + self.rate * t).exp() / -self.rate,
            TailModel::Power => (self.intercept + self.rate * t.ln()).exp() * t / (-self.rate - 1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RayProfile {
    pub theta: f64,
    pub r: Vec<f64>,
    pub length: Vec<f64>,
    pub verdict: RayVerdict,
    pub fit: TailFit,
    /// Length at the inscribed radius.
    pub final_length: f64,
    /// Extrapolated total length for convergent rays.
    pub limit: Option<f64>,
}

fn least_squares(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let b = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let a = my - b * mx;
    let rss = xs.iter().zip(ys).map(|(x, y)| (y - a - b * x).powi(2)).sum();
    (a, b, rss)
}

/// Metric length `∫ e^{w/2} ds` along rays from the origin up to the inscribed radius,
/// sampled every `h/2` with bilinear interpolation and the trapezoid rule.
///
/// On the last dyadic window `[R/2, R]`, `log e^{w/2}` is fitted with an exponential and a
/// power law in `t`; the better fit decides whether the tail is integrable.
pub fn completeness_probe(w: &ScalarField, thetas: &[f64]) -> Vec<RayProfile> {
    let d = w.domain();
    let step = 0.5 * d.h();
    let steps = (d.half_width() / step + 1e-9).floor() as usize;
    thetas
        .iter()
        .map(|&theta| {
            let (c, s) = (theta.cos(), theta.sin());
            let r: Vec<f64> = (0..=steps).map(|j| j as f64 * step).collect();
            let half_log_rho: Vec<f64> = r.iter().map(|&t| 0.5 * w.bilinear(t * c, t * s)).collect();
            let mut length = Vec::with_capacity(r.len());
            length.push(0.0);
            for j in 1..r.len() {
                let seg = 0.5 * step * (half_log_rho[j - 1].exp() + half_log_rho[j].exp());
                length.push(length[j - 1] + seg);
            }
            let mid = steps / 2;
            let ts = &r[mid..];
            let ys = &half_log_rho[mid..];
            let logs: Vec<f64> = ts.iter().map(|t| t.ln()).collect();
            let (ae, be, re) = least_squares(ts, ys);
            let (ap, bp, rp) = least_squares(&logs, ys);
            let fit = if re <= rp {
                TailFit { model: TailModel::Exponential, intercept: ae, rate: be, rss: re }
            } else {
                TailFit { model: TailModel::Power, intercept: ap, rate: bp, rss: rp }
            };
            let final_length = *length.last().unwrap();
            let increment = final_length - length[mid];
            let t_end = *r.last().unwrap();
            let (verdict, limit) = if fit.integrable() {
                (RayVerdict::Convergent, Some(final_length + fit.tail_integral(t_end)))
            } else if increment < EPS_LENGTH {
                (RayVerdict::Convergent, Some(final_length))
            } else {
                (RayVerdict::Divergent, None)
            };
            RayProfile { theta, r, length, verdict, fit, final_length, limit }
        })
        .collect()
}

/// CSV `theta,r,length`.
pub fn write_rays_csv<W: Write>(rays: &[RayProfile], mut out: W) -> io::Result<()> {
    writeln!(out, "theta,r,length")?;
    for ray in rays {
        for (r, l) in ray.r.iter().zip(&ray.length) {
            writeln!(out, "{:.16e},{:.16e},{:.16e}", ray.theta, r, l)?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct DiagnosticFields {
    /// `|φ|² e^{−kw}`
    pub h: ScalarField,
    /// `log(h + 1)`
    pub tau: ScalarField,
    /// `log h`; zero where masked.
    pub sigma: ScalarField,
    /// False within `2h` of a zero of φ.
    pub sigma_valid: Vec<bool>,
    /// `w − w_other`
    pub eta: Option<ScalarField>,
    /// Max over unmasked interior nodes of `|Δσ·e^{−w} − k(e^σ − 1)|`.
    pub identity_residual: f64,
}

/// Proof-diagnostic fields and the identity `Δσ = k e^w (e^σ − 1)`.
///
/// `Δσ` is taken as `−k Δ_h w`: `log|φ|²` is harmonic away from zeros, and its own stencil
/// truncation next to the mask would swamp the check.
pub fn diagnostics(
    w: &ScalarField,
    prob: &VortexProblem,
    other: Option<&ScalarField>,
    solve_tol: f64,
) -> Result<DiagnosticFields, VerifyError> {
    let d = *w.domain();
    let k = prob.k() as f64;
    let h = subunity_field(w, prob)?;
    let tau = h.map(f64::ln_1p);
    let zeros = if prob.phi().degree() == 0 { vec![] } else { prob.phi().zeros().unwrap_or_default() };
    let mut sigma_valid = vec![true; d.len()];
    let mut sigma = ScalarField::constant(d, 0.0);
    for j in 0..d.n() {
        for i in 0..d.n() {
            let z = d.z(i, j);
            let near = zeros.iter().any(|r| (r - z).norm() < 2.0 * d.h());
            let s = prob.log_mod_sq()[d.idx(i, j)] - k * w.at(i, j);
            if near || !s.is_finite() {
                sigma_valid[d.idx(i, j)] = false;
            } else {
                sigma.set(i, j, s);
            }
        }
    }
    let lap = laplacian(w);
    let mut worst = 0.0_f64;
    for j in 1..d.n() - 1 {
        for i in 1..d.n() - 1 {
            if !sigma_valid[d.idx(i, j)] {
                continue;
            }
            let wi = w.at(i, j);
            let lhs = -k * lap.at(i, j) * (-wi).exp();
            let rhs = k * (sigma.at(i, j).exp() - 1.0);
            let diff = (lhs - rhs).abs();
            if diff > 10.0 * k * solve_tol * (-wi).exp().max(1.0) {
                let (x, y) = d.node(i, j);
                return Err(VerifyError::SigmaIdentity { x, y, diff });
            }
            worst = worst.max(diff);
        }
    }
    let eta = other.map(|o| w.zip_map(o, |a, b| a - b)).transpose()?;
    Ok(DiagnosticFields { h, tau, sigma, sigma_valid, eta, identity_residual: worst })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::BoundaryData;

    fn profile_problem(phi: EntireFunction, k: u32, d: GridDomain) -> (ScalarField, VortexProblem) {
        let w = ScalarField::from_fn(d, |x, y| phi.subsolution_profile(k, num_complex::Complex64::new(x, y)));
        let prob = VortexProblem::new(phi, k, d, BoundaryData::from_field(&w)).unwrap();
        (w, prob)
    }

    #[test]
    fn constant_solution_is_on_the_bound() {
        let d = GridDomain::new(2.0, 21).unwrap();
        let (w, prob) = profile_problem(EntireFunction::real_polynomial(&[2.5]).unwrap(), 3, d);
        let rep = subunity_check(&w, &prob).unwrap();
        assert!(rep.passed && rep.margin.abs() < 1e-14);
        let k = curvature_field(&w, &prob, 1e-9).unwrap();
        assert!(k.values().iter().all(|v| v.abs() < 1e-14));
        let diag = diagnostics(&w, &prob, None, 1e-9).unwrap();
        assert!(diag.sigma.values().iter().all(|v| v.abs() < 1e-14));
        assert!(diag.identity_residual < 1e-12);
        assert!(no_gap_check(&w, &prob, 0.3).unwrap().passed);
    }

    #[test]
    fn exponential_profile_is_flat() {
        let d = GridDomain::new(3.0, 31).unwrap();
        let (w, prob) = profile_problem(EntireFunction::exp_z(), 3, d);
        let k = curvature_field(&w, &prob, 1e-9).unwrap();
        assert!(k.values().iter().all(|v| v.abs() < 1e-12));
        let h = subunity_field(&w, &prob).unwrap();
        assert!(h.values().iter().all(|v| (v - 1.0).abs() < 1e-12));
        assert!(no_gap_check(&w, &prob, 0.9).unwrap().passed);
    }

    #[test]
    fn curvature_detects_unconverged_input() {
        let d = GridDomain::new(3.0, 31).unwrap();
        let (w, prob) = profile_problem(EntireFunction::exp_z(), 3, d);
        let bumped = w.zip_map(&ScalarField::from_fn(d, |x, y| 0.1 * (-(x * x + y * y)).exp()), |a, b| a + b).unwrap();
        assert!(matches!(curvature_field(&bumped, &prob, 1e-9), Err(VerifyError::CurvatureMismatch { .. })));
    }

    #[test]
    fn ordering_examples() {
        let d = GridDomain::new(1.0, 11).unwrap();
        let a = ScalarField::from_fn(d, |x, y| x * y);
        let rep = ordering_check(&a, &a).unwrap();
        assert!(!rep.passed && rep.margin == 0.0);
        let b = a.map(|v| v + 1.0);
        let rep = ordering_check(&b, &a).unwrap();
        assert!(rep.passed && (rep.margin - 1.0).abs() < 1e-15);
    }

    #[test]
    fn leftward_ray_of_the_flat_profile() {
        // e^{w/2} = e^{x/3}: leftward length tends to 3.
        let d = GridDomain::new(6.0, 121).unwrap();
        let w = ScalarField::from_fn(d, |x, _| 2.0 * x / 3.0);
        let rays = completeness_probe(&w, &[std::f64::consts::PI, 0.0]);
        let left = &rays[0];
        assert_eq!(left.verdict, RayVerdict::Convergent);
        assert_eq!(left.fit.model, TailModel::Exponential);
        assert!((left.fit.rate + 1.0 / 3.0).abs() < 1e-6);
        assert!((left.limit.unwrap() - 3.0).abs() < 1e-3, "{:?}", left.limit);
        assert_eq!(rays[1].verdict, RayVerdict::Divergent);
    }

    #[test]
    fn power_law_ray() {
        // e^{w/2} = t: L(r) = r²/2, divergent.
        let d = GridDomain::new(8.0, 161).unwrap();
        let w = ScalarField::from_fn(d, |x, y| (x * x + y * y + 1e-300).ln());
        let rays = completeness_probe(&w, &[0.0]);
        assert_eq!(rays[0].verdict, RayVerdict::Divergent);
        assert_eq!(rays[0].fit.model, TailModel::Power);
        assert!((rays[0].final_length - 32.0).abs() < 0.1);
    }

    #[test]
    fn rays_csv_header() {
        let d = GridDomain::new(1.0, 5).unwrap();
        let rays = completeness_probe(&ScalarField::constant(d, 0.0), &[0.0]);
        let mut buf = Vec::new();
        write_rays_csv(&rays, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("theta,r,length\n"));
        assert_eq!(text.lines().count(), 1 + rays[0].r.len());
    }
}
