//! Truncated Fourier representation of mean-zero, `L`-periodic real functions.
//!
//! A field stores complex amplitudes `c_k` for `k = 1..=K` and represents
//!
//! ```text
//! u(x) = sum_{k=1}^{K} ( c_k e^{i q_k x} + conj(c_k) e^{-i q_k x} ),   q_k = 2 pi k / L
//! ```
//!
//! so that `|u|_{L2}^2 = 2 L sum_k |c_k|^2`. The zero mode is never stored and
//! the Nyquist mode is excluded (`K = N/2 - 1`). Physical samples live on the
//! uniform grid `x_j = j L / N`; quadratic products are formed on the `2N`
//! grid, which is alias-free for every retained mode.

use std::f64::consts::PI;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Domain length, resolution and the spectrum of `A = -d^4/dx^4`.
pub struct Grid {
    length: f64,
    n: usize,
    wavenumbers: Vec<f64>,
    eigenvalues: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    forward_fine: Arc<dyn Fft<f64>>,
    inverse_fine: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Grid")
            .field("length", &self.length)
            .field("n", &self.n)
            .field("modes", &self.modes())
            .finish()
    }
}

impl PartialEq for Grid {
    fn eq(&self, other: &Self) -> bool {
        self.n == other.n && self.length == other.length
    }
}

impl Grid {
    pub fn new(length: f64, n: usize) -> Result<Arc<Grid>> {
        if !(length.is_finite() && length > 0.0) {
            return Err(Error::InvalidGrid(format!("length must be positive, got {length}")));
        }
        if n < 16 || !n.is_multiple_of(2) {
            return Err(Error::InvalidGrid(format!(
                "grid size must be an even integer >= 16, got {n}"
            )));
        }
        let modes = n / 2 - 1;
        let wavenumbers: Vec<f64> = (1..=modes).map(|k| 2.0 * PI * k as f64 / length).collect();
        let eigenvalues = wavenumbers.iter().map(|q| -q.powi(4)).collect();
        let mut planner = FftPlanner::new();
        Ok(Arc::new(Grid {
            length,
            n,
            wavenumbers,
            eigenvalues,
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
            forward_fine: planner.plan_fft_forward(2 * n),
            inverse_fine: planner.plan_fft_inverse(2 * n),
        }))
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    /// Physical grid size `N`.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Retained mode count `K = N/2 - 1`.
    pub fn modes(&self) -> usize {
        self.n / 2 - 1
    }

    /// Size of the refined (dealiasing / quadrature) grid.
    pub fn fine_n(&self) -> usize {
        2 * self.n
    }

    /// `q_k` for `k = 1..=K` (index `k - 1`).
    pub fn wavenumbers(&self) -> &[f64] {
        &self.wavenumbers
    }

    /// Eigenvalues `lambda_k = -q_k^4` of `A`.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Spectral gap `q_1^4`, the Poincare constant in `|v_xx|^2 >= lambda |v|^2`.
    pub fn poincare_lambda(&self) -> f64 {
        self.eigenvalues
            .iter()
            .map(|l| l.abs())
            .fold(f64::INFINITY, f64::min)
    }

    /// Per-mode linear rates `mu_k = lambda_k - damping (+ q_k^2 with the instability)`.
    pub fn linear_rates(&self, damping: f64, instability: bool) -> Vec<f64> {
        self.wavenumbers
            .iter()
            .zip(&self.eigenvalues)
            .map(|(q, l)| l - damping + if instability { q * q } else { 0.0 })
            .collect()
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.n)
            .map(|j| j as f64 * self.length / self.n as f64)
            .collect()
    }

    pub(crate) fn check_same(&self, other: &Grid) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::GridMismatch(self.length, self.n, other.length, other.n))
        }
    }

    fn plans(&self, m: usize) -> (&Arc<dyn Fft<f64>>, &Arc<dyn Fft<f64>>) {
        if m == self.n {
            (&self.forward, &self.inverse)
        } else {
            debug_assert_eq!(m, 2 * self.n);
            (&self.forward_fine, &self.inverse_fine)
        }
    }

    fn synthesize_into(&self, coeffs: &[Complex64], m: usize) -> Vec<f64> {
        let mut buf = vec![Complex64::new(0.0, 0.0); m];
        for (i, c) in coeffs.iter().enumerate() {
            buf[i + 1] = *c;
            buf[m - i - 1] = c.conj();
        }
        self.plans(m).1.process(&mut buf);
        buf.into_iter().map(|c| c.re).collect()
    }

    fn analyze_from(&self, samples: &[f64]) -> Vec<Complex64> {
        let m = samples.len();
        let mut buf: Vec<Complex64> = samples.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        self.plans(m).0.process(&mut buf);
        let scale = 1.0 / m as f64;
        buf[1..=self.modes()].iter().map(|c| c * scale).collect()
    }
}

/// Norms used throughout the crate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Norm {
    L2,
    /// `H^s` with weights `(1 + q_k^2)^s`, `s` in `[-4, 2]`.
    Sobolev(f64),
    L4,
    /// `(|u|_{L4}^4 + |u_x|_{L4}^4)^{1/4}`.
    W14,
    LInf,
}

#[derive(Clone)]
pub struct SpectralField {
    grid: Arc<Grid>,
    coeffs: Vec<Complex64>,
}

impl fmt::Debug for SpectralField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SpectralField")
            .field("grid", &self.grid)
            .field("coeffs", &self.coeffs)
            .finish()
    }
}

impl PartialEq for SpectralField {
    fn eq(&self, other: &Self) -> bool {
        *self.grid == *other.grid && self.coeffs == other.coeffs
    }
}

impl SpectralField {
    pub fn zeros(grid: &Arc<Grid>) -> Self {
        SpectralField {
            grid: grid.clone(),
            coeffs: vec![Complex64::new(0.0, 0.0); grid.modes()],
        }
    }

    pub fn from_coeffs(grid: &Arc<Grid>, coeffs: Vec<Complex64>) -> Result<Self> {
        if coeffs.len() != grid.modes() {
            return Err(Error::InvalidParameter(format!(
                "expected {} coefficients, got {}",
                grid.modes(),
                coeffs.len()
            )));
        }
        Ok(SpectralField {
            grid: grid.clone(),
            coeffs,
        })
    }

    /// Field with a single nonzero amplitude `c_k`.
    pub fn single_mode(grid: &Arc<Grid>, k: usize, c: Complex64) -> Result<Self> {
        if k == 0 || k > grid.modes() {
            return Err(Error::InvalidParameter(format!(
                "mode {k} outside 1..={}",
                grid.modes()
            )));
        }
        let mut f = SpectralField::zeros(grid);
        f.coeffs[k - 1] = c;
        Ok(f)
    }

    /// Projection of `N` (or `2N`) physical samples onto the retained modes.
    pub fn analyze(grid: &Arc<Grid>, samples: &[f64]) -> Result<Self> {
        if samples.len() != grid.n() && samples.len() != grid.fine_n() {
            return Err(Error::InvalidParameter(format!(
                "expected {} or {} samples, got {}",
                grid.n(),
                grid.fine_n(),
                samples.len()
            )));
        }
        Ok(SpectralField {
            grid: grid.clone(),
            coeffs: grid.analyze_from(samples),
        })
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [Complex64] {
        &mut self.coeffs
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|c| c.re.is_finite() && c.im.is_finite())
    }

    /// Samples on the base grid `x_j = j L / N`.
    pub fn synthesize(&self) -> Vec<f64> {
        self.grid.synthesize_into(&self.coeffs, self.grid.n())
    }

    /// Samples on the refined `2N` grid.
    pub fn synthesize_fine(&self) -> Vec<f64> {
        self.grid.synthesize_into(&self.coeffs, self.grid.fine_n())
    }

    pub fn map_modes(&self, mut f: impl FnMut(usize, Complex64) -> Complex64) -> Self {
        SpectralField {
            grid: self.grid.clone(),
            coeffs: self.coeffs.iter().enumerate().map(|(i, &c)| f(i, c)).collect(),
        }
    }

    /// `d^order/dx^order`, i.e. `c_k <- (i q_k)^order c_k`.
    pub fn derivative(&self, order: u32) -> Result<Self> {
        if order > 4 {
            return Err(Error::InvalidParameter(format!(
                "derivative order {order} exceeds 4"
            )));
        }
        let q = self.grid.wavenumbers();
        Ok(self.map_modes(|i, c| c * ik_pow(q[i], order)))
    }

    /// `e^{t (A - damping [+ instability])}` applied mode by mode.
    pub fn apply_linear_semigroup(&self, t: f64, damping: f64, instability: bool) -> Self {
        let mu = self.grid.linear_rates(damping, instability);
        self.map_modes(|i, c| c * (mu[i] * t).exp())
    }

    pub fn scale(&self, a: f64) -> Self {
        self.map_modes(|_, c| c * a)
    }

    /// `self + a * other`.
    pub fn axpy(&self, a: f64, other: &SpectralField) -> Result<Self> {
        self.grid.check_same(&other.grid)?;
        Ok(self.map_modes(|i, c| c + other.coeffs[i] * a))
    }

    pub fn norm_sq_l2(&self) -> f64 {
        2.0 * self.grid.length() * self.coeffs.iter().map(|c| c.norm_sqr()).sum::<f64>()
    }

    pub fn sobolev_norm_sq(&self, s: f64) -> Result<f64> {
        if !(-4.0..=2.0).contains(&s) {
            return Err(Error::UnsupportedNorm(s));
        }
        let q = self.grid.wavenumbers();
        let sum: f64 = self
            .coeffs
            .iter()
            .zip(q)
            .map(|(c, q)| (1.0 + q * q).powf(s) * c.norm_sqr())
            .sum();
        Ok(2.0 * self.grid.length() * sum)
    }

    /// `|u|^2_{H^1}` with the `(1 + q^2)` weight.
    pub fn h1_norm_sq(&self) -> f64 {
        let q = self.grid.wavenumbers();
        let sum: f64 = self
            .coeffs
            .iter()
            .zip(q)
            .map(|(c, q)| (1.0 + q * q) * c.norm_sqr())
            .sum();
        2.0 * self.grid.length() * sum
    }

    pub fn norm(&self, kind: Norm) -> Result<f64> {
        match kind {
            Norm::L2 => Ok(self.norm_sq_l2().sqrt()),
            Norm::Sobolev(s) => Ok(self.sobolev_norm_sq(s)?.sqrt()),
            Norm::L4 => Ok(self.lp_power_fine(4).powf(0.25)),
            Norm::W14 => {
                let ux = self.derivative(1)?;
                Ok((self.lp_power_fine(4) + ux.lp_power_fine(4)).powf(0.25))
            }
            Norm::LInf => Ok(self
                .synthesize_fine()
                .iter()
                .fold(0.0_f64, |m, x| m.max(x.abs()))),
        }
    }

    /// `int |u|^p dx` by the refined-grid trapezoidal rule.
    pub fn lp_power_fine(&self, p: i32) -> f64 {
        let samples = self.synthesize_fine();
        let h = self.grid.length() / samples.len() as f64;
        samples.iter().map(|x| x.abs().powi(p)).sum::<f64>() * h
    }

    /// `<d^a u, d^b v>_{L2}`, computed spectrally.
    pub fn inner_product(&self, other: &SpectralField, orders: (u32, u32)) -> Result<f64> {
        self.grid.check_same(&other.grid)?;
        let q = self.grid.wavenumbers();
        let sum: f64 = self
            .coeffs
            .iter()
            .zip(&other.coeffs)
            .zip(q)
            .map(|((c, d), &q)| (c * ik_pow(q, orders.0) * (d * ik_pow(q, orders.1)).conj()).re)
            .sum();
        Ok(2.0 * self.grid.length() * sum)
    }

    /// `<u, v>_{H^1}` with the `(1 + q^2)` weight.
    pub fn h1_inner(&self, other: &SpectralField) -> Result<f64> {
        self.grid.check_same(&other.grid)?;
        let q = self.grid.wavenumbers();
        let sum: f64 = self
            .coeffs
            .iter()
            .zip(&other.coeffs)
            .zip(q)
            .map(|((c, d), q)| (1.0 + q * q) * (c * d.conj()).re)
            .sum();
        Ok(2.0 * self.grid.length() * sum)
    }

    /// `<u, w>_{L2}` where `w` is given by samples on the refined `2N` grid
    /// (typically a pointwise product of synthesized fields).
    pub fn inner_product_physical(&self, fine_samples: &[f64]) -> Result<f64> {
        let m = self.grid.fine_n();
        if fine_samples.len() != m {
            return Err(Error::InvalidParameter(format!(
                "expected {m} refined samples, got {}",
                fine_samples.len()
            )));
        }
        let u = self.synthesize_fine();
        let h = self.grid.length() / m as f64;
        Ok(u.iter().zip(fine_samples).map(|(a, b)| a * b).sum::<f64>() * h)
    }
}

fn ik_pow(q: f64, order: u32) -> Complex64 {
    let m = q.powi(order as i32);
    match order % 4 {
        0 => Complex64::new(m, 0.0),
        1 => Complex64::new(0.0, m),
        2 => Complex64::new(-m, 0.0),
        _ => Complex64::new(0.0, -m),
    }
}

/// Pointwise product of two refined-grid sample vectors.
pub(crate) fn pointwise(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x * y).collect()
}

/// `B(u, v) = + d^2/dx^2 (u_x v_x)`, truncated to the retained modes.
///
/// The product is formed on the `2N` grid, so every retained coefficient is exact.
pub fn nonlinearity_b(u: &SpectralField, v: &SpectralField) -> Result<SpectralField> {
    u.grid.check_same(&v.grid)?;
    let ux = u.derivative(1)?.synthesize_fine();
    let prod = if std::ptr::eq(u, v) || u.coeffs == v.coeffs {
        ux.iter().map(|x| x * x).collect::<Vec<_>>()
    } else {
        pointwise(&ux, &v.derivative(1)?.synthesize_fine())
    };
    let p = SpectralField::analyze(&u.grid, &prod)?;
    p.derivative(2)
}

/// `d^2/dx^2 (u_x^2)`, the quadratic term of the growth equation.
pub fn quadratic_term(u: &SpectralField) -> SpectralField {
    nonlinearity_b(u, u).expect("same grid")
}

impl Add for &SpectralField {
    type Output = SpectralField;
    fn add(self, rhs: &SpectralField) -> SpectralField {
        self.axpy(1.0, rhs).expect("grid mismatch in field addition")
    }
}

impl Sub for &SpectralField {
    type Output = SpectralField;
    fn sub(self, rhs: &SpectralField) -> SpectralField {
        self.axpy(-1.0, rhs).expect("grid mismatch in field subtraction")
    }
}

impl Mul<f64> for &SpectralField {
    type Output = SpectralField;
    fn mul(self, a: f64) -> SpectralField {
        self.scale(a)
    }
}

impl Neg for &SpectralField {
    type Output = SpectralField;
    fn neg(self) -> SpectralField {
        self.scale(-1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn two_pi(n: usize) -> Arc<Grid> {
        Grid::new(2.0 * PI, n).unwrap()
    }

    fn random_field(grid: &Arc<Grid>, rng: &mut ChaCha8Rng, decay: f64) -> SpectralField {
        let coeffs = (1..=grid.modes())
            .map(|k| {
                let s = (k as f64).powf(-decay);
                Complex64::new(rng.random_range(-1.0..1.0) * s, rng.random_range(-1.0..1.0) * s)
            })
            .collect();
        SpectralField::from_coeffs(grid, coeffs).unwrap()
    }

    fn cos_x(grid: &Arc<Grid>) -> SpectralField {
        SpectralField::single_mode(grid, 1, Complex64::new(0.5, 0.0)).unwrap()
    }

    #[test]
    fn grid_rejects_bad_sizes() {
        assert!(Grid::new(1.0, 15).is_err());
        assert!(Grid::new(1.0, 14).is_err());
        assert!(Grid::new(0.0, 32).is_err());
        let g = Grid::new(1.0, 32).unwrap();
        assert_eq!(g.modes(), 15);
    }

    #[test]
    fn eigenvalues_and_poincare() {
        let g = Grid::new(3.0, 32).unwrap();
        let s = (2.0 * PI / 3.0).powi(4);
        for (i, l) in g.eigenvalues().iter().enumerate() {
            assert!(*l < 0.0);
            let k = (i + 1) as f64;
            assert_relative_eq!(l / -k.powi(4), s, max_relative = 1e-14);
        }
        assert_relative_eq!(g.poincare_lambda(), s, max_relative = 1e-14);
    }

    #[test]
    fn single_mode_synthesis_is_cosine() {
        let g = two_pi(32);
        let f = cos_x(&g);
        for (x, u) in g.points().iter().zip(f.synthesize()) {
            assert!((u - x.cos()).abs() < 1e-14);
        }
        assert!(SpectralField::zeros(&g).synthesize().iter().all(|&u| u == 0.0));
    }

    #[test]
    fn synthesis_matches_direct_summation() {
        let g = Grid::new(1.7, 16).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = random_field(&g, &mut rng, 0.0);
        let xs = g.points();
        for (x, u) in xs.iter().zip(f.synthesize()) {
            let direct: f64 = f
                .coeffs()
                .iter()
                .zip(g.wavenumbers())
                .map(|(c, q)| 2.0 * (c * Complex64::new(0.0, q * x).exp()).re)
                .sum();
            assert!((u - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn derivatives_of_cosine() {
        let g = two_pi(32);
        let f = cos_x(&g);
        let d1 = f.derivative(1).unwrap().synthesize();
        let d4 = f.derivative(4).unwrap().synthesize();
        for ((x, a), b) in g.points().iter().zip(d1).zip(d4) {
            assert!((a + x.sin()).abs() < 1e-14);
            assert!((b - x.cos()).abs() < 1e-14);
        }
        assert!(f.derivative(5).is_err());
    }

    #[test]
    fn semigroup_single_mode_and_marginal_mode() {
        let g = two_pi(32);
        let f = cos_x(&g);
        let decayed = f.apply_linear_semigroup(1.0, 0.0, false);
        assert_relative_eq!(decayed.coeffs()[0].re, 0.5 * (-1.0f64).exp(), max_relative = 1e-15);
        let marginal = f.apply_linear_semigroup(3.0, 0.0, true);
        assert_eq!(marginal.coeffs()[0].norm(), 0.5);
        assert_eq!(f.apply_linear_semigroup(0.0, 0.3, true), f);
    }

    #[test]
    fn nonlinearity_of_cosine() {
        let g = two_pi(32);
        let f = cos_x(&g);
        let b = quadratic_term(&f);
        for (x, v) in g.points().iter().zip(b.synthesize()) {
            assert!((v - 2.0 * (2.0 * x).cos()).abs() < 1e-13);
        }
        let zero = SpectralField::zeros(&g);
        assert!(quadratic_term(&zero).coeffs().iter().all(|c| c.norm() == 0.0));
    }

    #[test]
    fn nonlinearity_rejects_grid_mismatch() {
        let a = SpectralField::zeros(&two_pi(32));
        let b = SpectralField::zeros(&two_pi(64));
        assert!(matches!(nonlinearity_b(&a, &b), Err(Error::GridMismatch(..))));
    }

    #[test]
    fn norms_of_cosine() {
        let g = two_pi(32);
        let f = cos_x(&g);
        assert_relative_eq!(f.norm(Norm::L2).unwrap(), PI.sqrt(), max_relative = 1e-14);
        assert_relative_eq!(f.norm(Norm::Sobolev(2.0)).unwrap(), 2.0 * PI.sqrt(), max_relative = 1e-14);
        assert_relative_eq!(f.norm(Norm::Sobolev(0.0)).unwrap(), f.norm(Norm::L2).unwrap(), max_relative = 1e-12);
        assert_relative_eq!(f.norm(Norm::LInf).unwrap(), 1.0, max_relative = 1e-14);
        // int cos^4 = 3 pi / 4 on [0, 2 pi]
        assert_relative_eq!(f.norm(Norm::L4).unwrap(), (0.75 * PI).powf(0.25), max_relative = 1e-13);
        assert!(matches!(f.norm(Norm::Sobolev(2.5)), Err(Error::UnsupportedNorm(_))));
        assert!(f.norm(Norm::Sobolev(-4.0)).is_ok());
    }

    #[test]
    fn w14_refined_quadrature_is_converged_for_smooth_fields() {
        let g = two_pi(32);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let f = random_field(&g, &mut rng, 3.0);
        let fine = f.norm(Norm::W14).unwrap();
        // base-grid quadrature of the same integrand
        let base = |u: &SpectralField| {
            let s = u.synthesize();
            s.iter().map(|x| x.powi(4)).sum::<f64>() * g.length() / s.len() as f64
        };
        let coarse = (base(&f) + base(&f.derivative(1).unwrap())).powf(0.25);
        assert!((fine - coarse).abs() / fine < 1e-3);
        assert!(fine >= 0.0);
    }

    #[test]
    fn inner_products_of_trig_functions() {
        let g = two_pi(32);
        let c = cos_x(&g);
        let s = SpectralField::single_mode(&g, 1, Complex64::new(0.0, -0.5)).unwrap();
        assert_relative_eq!(c.inner_product(&c, (0, 0)).unwrap(), PI, max_relative = 1e-14);
        assert!(c.inner_product(&s, (0, 0)).unwrap().abs() < 1e-15);
    }

    #[test]
    fn triple_products_on_refined_grid() {
        let g = two_pi(32);
        let c = cos_x(&g);
        let sq = pointwise(&c.synthesize_fine(), &c.synthesize_fine());
        // int cos^3 = 0 and int cos^2 cos 2x = pi/2
        assert!(c.inner_product_physical(&sq).unwrap().abs() < 1e-13);
        let c2 = SpectralField::single_mode(&g, 2, Complex64::new(0.5, 0.0)).unwrap();
        assert_relative_eq!(c2.inner_product_physical(&sq).unwrap(), PI / 2.0, max_relative = 1e-13);
    }

    #[test]
    fn parseval_against_quadrature() {
        let g = Grid::new(5.0, 64).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10 {
            let f = random_field(&g, &mut rng, 0.5);
            let s = f.synthesize();
            let quad = s.iter().map(|x| x * x).sum::<f64>() * g.length() / s.len() as f64;
            assert_relative_eq!(f.norm_sq_l2(), quad, max_relative = 1e-10);
            let mean: f64 = s.iter().sum::<f64>() / s.len() as f64;
            assert!(mean.abs() < 1e-13);
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn field_strategy(n: usize) -> impl Strategy<Value = SpectralField> {
            let k = n / 2 - 1;
            (prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), k), 0.5f64..20.0).prop_map(
                move |(c, len)| {
                    let g = Grid::new(len, n).unwrap();
                    let coeffs = c.into_iter().map(|(a, b)| Complex64::new(a, b)).collect();
                    SpectralField::from_coeffs(&g, coeffs).unwrap()
                },
            )
        }

        proptest! {
            #[test]
            fn analyze_inverts_synthesize(f in field_strategy(32)) {
                let back = SpectralField::analyze(f.grid(), &f.synthesize()).unwrap();
                let scale = f.norm_sq_l2().sqrt().max(1e-300);
                prop_assert!((&back - &f).norm_sq_l2().sqrt() / scale < 1e-12);
                let fine = SpectralField::analyze(f.grid(), &f.synthesize_fine()).unwrap();
                prop_assert!((&fine - &f).norm_sq_l2().sqrt() / scale < 1e-12);
            }

            #[test]
            fn cancellation_of_the_nonlinearity(f in field_strategy(64)) {
                let b = quadratic_term(&f);
                let ip = f.inner_product(&b, (0, 0)).unwrap();
                let scale = f.norm(Norm::L2).unwrap() * b.norm(Norm::L2).unwrap();
                prop_assert!(ip.abs() <= 1e-10 * scale.max(1e-300));
            }

            #[test]
            fn integration_by_parts_is_exact(u in field_strategy(32), seed in 0u64..1000) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let v = random_field(u.grid(), &mut rng, 0.0);
                let lhs = u.inner_product(&v, (1, 0)).unwrap();
                let rhs = -u.inner_product(&v, (0, 1)).unwrap();
                prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
                let lhs2 = u.derivative(1).unwrap().inner_product(&v.derivative(1).unwrap(), (0, 0)).unwrap();
                let rhs2 = -u.inner_product(&v.derivative(2).unwrap(), (0, 0)).unwrap();
                prop_assert!((lhs2 - rhs2).abs() <= 1e-12 * (1.0 + lhs2.abs()));
            }

            #[test]
            fn derivative_composition(f in field_strategy(32)) {
                let twice = f.derivative(1).unwrap().derivative(1).unwrap();
                let once = f.derivative(2).unwrap();
                let scale = once.norm_sq_l2().sqrt().max(1e-300);
                prop_assert!((&twice - &once).norm_sq_l2().sqrt() / scale <= 1e-14);
            }

            #[test]
            fn semigroup_property(f in field_strategy(16), t in 0.0f64..0.5, s in 0.0f64..0.5, a in 0.0f64..2.0, inst: bool) {
                let once = f.apply_linear_semigroup(t + s, a, inst);
                let twice = f.apply_linear_semigroup(s, a, inst).apply_linear_semigroup(t, a, inst);
                let scale = f.norm_sq_l2().sqrt().max(1e-300);
                prop_assert!((&once - &twice).norm_sq_l2().sqrt() / scale <= 1e-12);
            }
        }
    }
}
