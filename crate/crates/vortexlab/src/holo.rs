//! Entire functions of the form `P(z)·exp(Q(z))` with polynomial `P` and `Q`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Residual tolerance for accepted roots, scaled by `(1+|z|)^deg`.
pub const TOL_ROOT: f64 = 1e-10;
/// Iteration cap for the simultaneous root iteration.
pub const MAX_ROOT_ITERATIONS: usize = 500;

#[derive(Debug, Error, PartialEq)]
pub enum HoloError {
    #[error("P must not be the zero polynomial")]
    ZeroPolynomial,
    #[error("non-finite coefficient")]
    NonFinite,
    #[error("exp(Q(z)) overflows at z = {0}")]
    Overflow(Complex64),
    #[error("root iteration did not converge after {0} iterations")]
    RootsNotConverged(usize),
}

/// `φ = P·e^Q` with ascending-degree coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntireFunction {
    p: Vec<Complex64>,
    q: Vec<Complex64>,
}

fn trim(mut c: Vec<Complex64>) -> Vec<Complex64> {
    while c.len() > 1 && *c.last().unwrap() == Complex64::new(0.0, 0.0) {
        c.pop();
    }
    c
}

fn horner(c: &[Complex64], z: Complex64) -> Complex64 {
    c.iter().rev().fold(Complex64::new(0.0, 0.0), |acc, &a| acc * z + a)
}

/// Value and derivative in one pass.
fn horner_d(c: &[Complex64], z: Complex64) -> (Complex64, Complex64) {
    let zero = Complex64::new(0.0, 0.0);
    let mut p = zero;
    let mut dp = zero;
    for &a in c.iter().rev() {
        dp = dp * z + p;
        p = p * z + a;
    }
    (p, dp)
}

impl EntireFunction {
    pub fn new(p: Vec<Complex64>, q: Vec<Complex64>) -> Result<Self, HoloError> {
        if p.iter().chain(q.iter()).any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(HoloError::NonFinite);
        }
        let p = trim(p);
        if p.iter().all(|c| *c == Complex64::new(0.0, 0.0)) {
            return Err(HoloError::ZeroPolynomial);
        }
        let q = if q.is_empty() { vec![Complex64::new(0.0, 0.0)] } else { trim(q) };
        Ok(Self { p, q })
    }

    /// Polynomial with real coefficients, ascending degree.
    pub fn real_polynomial(p: &[f64]) -> Result<Self, HoloError> {
        Self::new(p.iter().map(|&a| Complex64::new(a, 0.0)).collect(), vec![])
    }

    /// `exp(z)`.
    pub fn exp_z() -> Self {
        Self::new(vec![Complex64::new(1.0, 0.0)], vec![Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0)])
            .expect("valid")
    }

    pub fn p_coeffs(&self) -> &[Complex64] {
        &self.p
    }

    pub fn q_coeffs(&self) -> &[Complex64] {
        &self.q
    }

    pub fn degree(&self) -> usize {
        self.p.len() - 1
    }

    pub fn is_polynomial(&self) -> bool {
        self.q.len() == 1
    }

    /// Nonzero constant.
    pub fn is_constant(&self) -> bool {
        self.is_polynomial() && self.p.len() == 1
    }

    /// Multiply by a complex constant.
    pub fn scaled(&self, s: Complex64) -> Self {
        Self::new(self.p.iter().map(|&a| a * s).collect(), self.q.clone()).expect("nonzero scale")
    }

    /// Complex value `P(z)·e^{Q(z)}`. Fails when `Re Q(z)` leaves the exponent range.
    pub fn eval(&self, z: Complex64) -> Result<Complex64, HoloError> {
        let pz = horner(&self.p, z);
        let qz = horner(&self.q, z);
        if qz.re > f64::MAX_EXP as f64 * std::f64::consts::LN_2 {
            return Err(HoloError::Overflow(z));
        }
        Ok(pz * qz.exp())
    }

    /// `log|P(z)| + Re Q(z)`; `-inf` at zeros of `P`.
    pub fn log_abs(&self, z: Complex64) -> f64 {
        horner(&self.p, z).norm().ln() + horner(&self.q, z).re
    }

    /// `(2/k)·log|φ(z)|`.
    pub fn subsolution_profile(&self, k: u32, z: Complex64) -> f64 {
        2.0 / k as f64 * self.log_abs(z)
    }

    /// Roots of `P` with multiplicity (Aberth–Ehrlich).
    pub fn zeros(&self) -> Result<Vec<Complex64>, HoloError> {
        aberth(&self.p, TOL_ROOT, MAX_ROOT_ITERATIONS)
    }
}

/// Simultaneous root iteration. `coeffs` ascending, leading coefficient nonzero.
pub fn aberth(coeffs: &[Complex64], tol: f64, max_iter: usize) -> Result<Vec<Complex64>, HoloError> {
    let coeffs = trim(coeffs.to_vec());
    let deg = coeffs.len() - 1;
    if deg == 0 {
        return Ok(vec![]);
    }
    let lead = coeffs[deg];
    // Fujiwara-type bound for the initial circle.
    let radius = (0..deg)
        .map(|i| (coeffs[i] / lead).norm().powf(1.0 / (deg - i) as f64))
        .fold(0.0_f64, f64::max)
        .max(1e-3);
    let mut z: Vec<Complex64> = (0..deg)
        .map(|j| {
            let t = 2.0 * std::f64::consts::PI * j as f64 / deg as f64 + 0.4;
            Complex64::from_polar(radius, t)
        })
        .collect();

    let accepted = |r: Complex64| horner(&coeffs, r).norm() <= tol * lead.norm().max(1.0) * (1.0 + r.norm()).powi(deg as i32);

    for _ in 0..max_iter {
        let mut moved = 0.0_f64;
        for i in 0..deg {
            let (p, dp) = horner_d(&coeffs, z[i]);
            if p.norm() == 0.0 {
                continue;
            }
            let ratio = p / dp;
            let repulsion: Complex64 = (0..deg)
                .filter(|&j| j != i)
                .map(|j| {
                    let d = z[i] - z[j];
                    if d.norm() == 0.0 {
                        Complex64::new(0.0, 0.0)
                    } else {
                        d.inv()
                    }
                })
                .sum();
            let step = ratio / (Complex64::new(1.0, 0.0) - ratio * repulsion);
            if step.re.is_finite() && step.im.is_finite() {
                z[i] -= step;
                moved = moved.max(step.norm() / (1.0 + z[i].norm()));
            }
        }
        if z.iter().all(|&r| accepted(r)) && moved < 1e-6 {
            return Ok(z);
        }
        if moved < 1e-15 && z.iter().all(|&r| accepted(r)) {
            return Ok(z);
        }
    }
    if z.iter().all(|&r| accepted(r)) {
        return Ok(z);
    }
    Err(HoloError::RootsNotConverged(max_iter))
}

/// Coefficients of `lead·Π(z − r)`, ascending.
pub fn from_roots(roots: &[Complex64], lead: Complex64) -> Vec<Complex64> {
    let mut c = vec![lead];
    for &r in roots {
        let mut next = vec![Complex64::new(0.0, 0.0); c.len() + 1];
        for (i, &a) in c.iter().enumerate() {
            next[i + 1] += a;
            next[i] -= a * r;
        }
        c = next;
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn eval_examples() {
        let id = EntireFunction::real_polynomial(&[0.0, 1.0]).unwrap();
        assert_eq!(id.eval(c(2.0, 0.0)).unwrap(), c(2.0, 0.0));
        assert_eq!(EntireFunction::exp_z().eval(c(0.0, 0.0)).unwrap(), c(1.0, 0.0));
        let f = EntireFunction::new(vec![c(-1.0, 0.0), c(1.0, 0.0)], vec![c(0.0, 0.0), c(0.0, 0.0), c(1.0, 0.0)]).unwrap();
        assert_eq!(f.eval(c(1.0, 0.0)).unwrap(), c(0.0, 0.0));
        assert!(matches!(EntireFunction::exp_z().eval(c(800.0, 0.0)), Err(HoloError::Overflow(_))));
    }

    #[test]
    fn log_abs_examples() {
        assert!((EntireFunction::exp_z().log_abs(c(3.0, 4.0)) - 3.0).abs() < 1e-15);
        let two = EntireFunction::real_polynomial(&[2.0]).unwrap();
        assert!((two.log_abs(c(-5.0, 1.0)) - 2f64.ln()).abs() < 1e-15);
        let sq = EntireFunction::real_polynomial(&[0.0, 0.0, 1.0]).unwrap();
        assert!((sq.log_abs(c(10.0, 0.0)) - 2.0 * 10f64.ln()).abs() < 1e-14);
        assert_eq!(sq.log_abs(c(0.0, 0.0)), f64::NEG_INFINITY);
        // far beyond the range of eval
        assert_eq!(EntireFunction::exp_z().log_abs(c(1e4, 0.0)), 1e4);
    }

    #[test]
    fn profile_examples() {
        let e = EntireFunction::exp_z();
        assert!((e.subsolution_profile(3, c(1.5, -2.0)) - 1.0).abs() < 1e-15);
        let z = EntireFunction::real_polynomial(&[0.0, 1.0]).unwrap();
        assert!((z.subsolution_profile(2, c(4.0, 0.0)) - 2f64.ln() * 2.0).abs() < 1e-15);
        let k = 4;
        let cst = EntireFunction::real_polynomial(&[3.0]).unwrap();
        assert!((cst.subsolution_profile(k, c(0.3, 0.1)) - 0.5 * 3f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn zeros_examples() {
        let mut r = EntireFunction::real_polynomial(&[-1.0, 0.0, 1.0]).unwrap().zeros().unwrap();
        r.sort_by(|a, b| a.re.partial_cmp(&b.re).unwrap());
        assert!((r[0] - c(-1.0, 0.0)).norm() < 1e-12 && (r[1] - c(1.0, 0.0)).norm() < 1e-12);

        let r = EntireFunction::real_polynomial(&[0.0, 0.0, 0.0, 1.0]).unwrap().zeros().unwrap();
        assert_eq!(r.len(), 3);
        assert!(r.iter().all(|z| z.norm() < 1e-3));

        // quadratic formula: 1 ± 2i
        let mut r = EntireFunction::real_polynomial(&[5.0, -2.0, 1.0]).unwrap().zeros().unwrap();
        r.sort_by(|a, b| a.im.partial_cmp(&b.im).unwrap());
        let disc = Complex64::new(4.0 - 20.0, 0.0).sqrt();
        let lo = (c(2.0, 0.0) - disc) / 2.0;
        let hi = (c(2.0, 0.0) + disc) / 2.0;
        let (lo, hi) = if lo.im < hi.im { (lo, hi) } else { (hi, lo) };
        assert!((r[0] - lo).norm() < 1e-12 && (r[1] - hi).norm() < 1e-12);
    }

    #[test]
    fn polynomial_flags() {
        assert!(EntireFunction::real_polynomial(&[0.0, 0.0, 0.0, 0.0, 0.0, 3.0]).unwrap().is_polynomial());
        assert!(!EntireFunction::exp_z().is_polynomial());
        let f = EntireFunction::new(vec![c(-1.0, 0.0), c(1.0, 0.0)], vec![c(0.0, 0.0), c(2.0, 0.0)]).unwrap();
        assert!(!f.is_polynomial());
        // trailing zeros in Q are trimmed exactly
        let g = EntireFunction::new(vec![c(1.0, 0.0)], vec![c(1.0, 0.0), c(0.0, 0.0)]).unwrap();
        assert!(g.is_polynomial());
        assert_eq!(EntireFunction::new(vec![c(0.0, 0.0)], vec![]), Err(HoloError::ZeroPolynomial));
    }

    #[test]
    fn reconstruct_from_roots() {
        let roots = [c(1.0, 0.5), c(-2.0, 0.0), c(0.0, 3.0), c(2.5, -1.0), c(-1.0, -2.0)];
        let coeffs = from_roots(&roots, c(2.0, -1.0));
        let f = EntireFunction::new(coeffs.clone(), vec![]).unwrap();
        let back = from_roots(&f.zeros().unwrap(), coeffs[coeffs.len() - 1]);
        let scale = coeffs.iter().map(|a| a.norm()).fold(0.0, f64::max);
        for (a, b) in coeffs.iter().zip(&back) {
            assert!((a - b).norm() <= 1e-8 * scale);
        }
    }
}
