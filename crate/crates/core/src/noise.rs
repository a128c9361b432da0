//! Q-Wiener increments and exact Ornstein-Uhlenbeck updates.
//!
//! Noise is diagonal in the Fourier basis: `Q e_k = alpha_k^2 e_k` for both the
//! cosine and the sine basis function of mode `k`. With the storage convention
//! of [`SpectralField`], the real and imaginary parts of a Wiener increment
//! over `dt` are independent `N(0, alpha_k^2 dt / (2L))`, which gives
//! `Var <W(t), phi> = t |Q^{1/2} phi|^2` for every test function `phi`.
//!
//! Randomness is counter based: the standard normals of fine increment `j` of
//! a path are a pure function of `(seed, j)`. A path advanced with step `dt`
//! and `s` substeps reads fine increments of length `dt / s`, so paths with
//! `(dt, 2s)` and `(dt / 2, s)` are driven by the same Brownian motion. Every
//! step carries two normals per mode component: `xi1` builds the Wiener
//! increment and `(xi1, xi2)` together build the exact stochastic convolution
//! `int e^{mu (dt - s)} dW(s)` for any rate `mu`, jointly Gaussian with the
//! increment. That is the coupling contract shared by every integrator.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};
use crate::spectral::{Grid, SpectralField};

/// SplitMix64 finalizer; used to derive independent seeds from `(base, index)`.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base
        .wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `(e^z - 1) / z`.
pub fn phi1(z: f64) -> f64 {
    if z.abs() < 1e-4 {
        1.0 + z / 2.0 * (1.0 + z / 3.0 * (1.0 + z / 4.0))
    } else {
        z.exp_m1() / z
    }
}

/// `(e^z - 1 - z) / z^2`.
pub fn phi2(z: f64) -> f64 {
    if z.abs() < 1e-3 {
        0.5 + z / 6.0 * (1.0 + z / 4.0 * (1.0 + z / 5.0))
    } else {
        (z.exp_m1() - z) / (z * z)
    }
}

/// `phi1(2z) - phi1(z)^2`: conditional variance factor of the stochastic
/// convolution given the Wiener increment.
fn conditional_factor(z: f64) -> f64 {
    if z.abs() < 0.5 {
        // Taylor coefficients of phi1(2z) - phi1(z)^2, starting at z^2 / 12.
        let mut fact = vec![1.0f64; 40];
        for i in 1..40 {
            fact[i] = fact[i - 1] * i as f64;
        }
        let mut sum = 0.0;
        let mut zn = z * z;
        for n in 2..30usize {
            let a = 2f64.powi(n as i32) / fact[n + 1];
            let b: f64 = (0..=n).map(|j| 1.0 / (fact[j + 1] * fact[n - j + 1])).sum();
            sum += (a - b) * zn;
            zn *= z;
        }
        sum.max(0.0)
    } else {
        (phi1(2.0 * z) - phi1(z).powi(2)).max(0.0)
    }
}

/// Diagonal covariance `Q e_k = alpha_k^2 e_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSpec {
    alpha: Vec<f64>,
    white: bool,
    delta: Option<f64>,
}

impl NoiseSpec {
    /// Space-time white noise, `alpha_k = 1`.
    pub fn white(grid: &Grid) -> Self {
        NoiseSpec {
            alpha: vec![1.0; grid.modes()],
            white: true,
            delta: Some(1.0),
        }
    }

    /// `alpha_k = k^{-decay}`.
    pub fn decaying(grid: &Grid, decay: f64, delta: Option<f64>) -> Result<Self> {
        if !(decay.is_finite() && decay >= 0.0) {
            return Err(Error::InvalidParameter(format!("alpha_decay must be >= 0, got {decay}")));
        }
        let alpha = (1..=grid.modes()).map(|k| (k as f64).powf(-decay)).collect();
        let spec = NoiseSpec {
            alpha,
            white: decay == 0.0,
            delta,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_amplitudes(alpha: Vec<f64>, delta: Option<f64>) -> Result<Self> {
        if alpha.iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
            return Err(Error::InvalidParameter("noise amplitudes must be finite and >= 0".into()));
        }
        let white = alpha.iter().all(|&a| a == 1.0);
        let spec = NoiseSpec { alpha, white, delta };
        spec.validate()?;
        Ok(spec)
    }

    fn validate(&self) -> Result<()> {
        if let Some(d) = self.delta {
            if !(d > 0.0) {
                return Err(Error::InvalidParameter(format!("delta must be > 0, got {d}")));
            }
            self.check_nondegenerate()?;
        }
        Ok(())
    }

    pub fn amplitudes(&self) -> &[f64] {
        &self.alpha
    }

    pub fn is_white(&self) -> bool {
        self.white
    }

    pub fn delta(&self) -> Option<f64> {
        self.delta
    }

    /// Non-degeneracy `alpha_k >= delta > 0` on every retained mode, which makes
    /// `Q^{-1}` bounded.
    pub fn check_nondegenerate(&self) -> Result<()> {
        let delta = self.delta.unwrap_or(0.0);
        for (i, &a) in self.alpha.iter().enumerate() {
            if a <= 0.0 || a < delta {
                return Err(Error::DegenerateNoise { mode: i + 1, alpha: a });
            }
        }
        Ok(())
    }

    /// `|Q^{1/2} phi|^2_{L2}`.
    pub fn q_half_norm_sq(&self, phi: &SpectralField) -> f64 {
        let l = phi.grid().length();
        2.0 * l
            * phi
                .coeffs()
                .iter()
                .zip(&self.alpha)
                .map(|(c, a)| a * a * c.norm_sqr())
                .sum::<f64>()
    }

    /// `Q^{-1} phi`; requires non-degenerate noise.
    pub fn apply_q_inverse(&self, phi: &SpectralField) -> Result<SpectralField> {
        self.check_nondegenerate()?;
        Ok(phi.map_modes(|i, c| c / (self.alpha[i] * self.alpha[i])))
    }
}

/// Variance of each real component of a unit-amplitude Wiener increment per unit time.
pub fn component_variance(grid: &Grid) -> f64 {
    0.5 / grid.length()
}

/// Standard normals driving one integrator step.
#[derive(Debug, Clone)]
pub struct StepNormals {
    substeps: usize,
    modes: usize,
    /// `xi1[j * modes + k]`: normals of the Wiener increment, substep `j`, mode `k`.
    xi1: Vec<Complex64>,
    xi2: Vec<Complex64>,
}

/// A replayable Q-Wiener path sampled on a uniform time grid.
#[derive(Debug, Clone)]
pub struct NoisePath {
    seed: u64,
    dt: f64,
    substeps: usize,
    grid: Arc<Grid>,
    spec: NoiseSpec,
}

impl NoisePath {
    pub fn new(grid: &Arc<Grid>, spec: NoiseSpec, seed: u64, dt: f64) -> Result<Self> {
        Self::with_substeps(grid, spec, seed, dt, 1)
    }

    /// A path whose steps of length `dt` are each assembled from `substeps`
    /// fine increments.
    pub fn with_substeps(
        grid: &Arc<Grid>,
        spec: NoiseSpec,
        seed: u64,
        dt: f64,
        substeps: usize,
    ) -> Result<Self> {
        if !(dt.is_finite() && dt >= 0.0) {
            return Err(Error::InvalidParameter(format!("dt must be >= 0, got {dt}")));
        }
        if substeps == 0 {
            return Err(Error::InvalidParameter("substeps must be >= 1".into()));
        }
        if spec.alpha.len() != grid.modes() {
            return Err(Error::InvalidParameter("noise spec does not match grid".into()));
        }
        Ok(NoisePath {
            seed,
            dt,
            substeps,
            grid: grid.clone(),
            spec,
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn substeps(&self) -> usize {
        self.substeps
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn spec(&self) -> &NoiseSpec {
        &self.spec
    }

    /// The same Brownian path, read with a different step and substep count.
    /// `dt / substeps` must be unchanged.
    pub fn resampled(&self, dt: f64, substeps: usize) -> Result<Self> {
        let fine = self.dt / self.substeps as f64;
        let new_fine = dt / substeps as f64;
        if (fine - new_fine).abs() > 1e-12 * fine.max(1e-300) {
            return Err(Error::InvalidParameter(format!(
                "fine increment changes from {fine} to {new_fine}"
            )));
        }
        Self::with_substeps(&self.grid, self.spec.clone(), self.seed, dt, substeps)
    }

    pub fn step_normals(&self, step: u64) -> StepNormals {
        let k = self.grid.modes();
        let mut xi1 = Vec::with_capacity(self.substeps * k);
        let mut xi2 = Vec::with_capacity(self.substeps * k);
        for j in 0..self.substeps {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            rng.set_stream(step * self.substeps as u64 + j as u64);
            for _ in 0..k {
                let v: [f64; 4] = [
                    StandardNormal.sample(&mut rng),
                    StandardNormal.sample(&mut rng),
                    StandardNormal.sample(&mut rng),
                    StandardNormal.sample(&mut rng),
                ];
                xi1.push(Complex64::new(v[0], v[1]));
                xi2.push(Complex64::new(v[2], v[3]));
            }
        }
        StepNormals {
            substeps: self.substeps,
            modes: k,
            xi1,
            xi2,
        }
    }

    /// Wiener increment `W(t_{n+1}) - W(t_n)` built from given normals.
    pub fn increment_from(&self, normals: &StepNormals) -> SpectralField {
        let fine = self.dt / self.substeps as f64;
        let base = (fine * component_variance(&self.grid)).sqrt();
        let mut coeffs = vec![Complex64::new(0.0, 0.0); normals.modes];
        for j in 0..normals.substeps {
            for (k, c) in coeffs.iter_mut().enumerate() {
                *c += normals.xi1[j * normals.modes + k] * (base * self.spec.alpha[k]);
            }
        }
        SpectralField::from_coeffs(&self.grid, coeffs).expect("mode count")
    }

    /// The Wiener increment of step `step_index`.
    pub fn sample_increment(&self, step_index: u64) -> SpectralField {
        self.increment_from(&self.step_normals(step_index))
    }
}

/// Per-mode coefficients of the exact stochastic convolution over one step,
/// `g_k = int_0^dt e^{mu_k (dt - s)} alpha_k dbeta_k(s)`, for fixed rates.
#[derive(Debug, Clone)]
pub struct Convolution {
    substeps: usize,
    modes: usize,
    c1: Vec<f64>,
    c2: Vec<f64>,
    /// `weights[j * modes + k] = e^{mu_k (substeps - 1 - j) dt_fine}`.
    weights: Vec<f64>,
}

impl Convolution {
    pub fn new(path: &NoisePath, mu: &[f64]) -> Self {
        let modes = mu.len();
        let sub = path.substeps;
        let fine = path.dt / sub as f64;
        let base = component_variance(&path.grid).sqrt();
        let mut c1 = Vec::with_capacity(modes);
        let mut c2 = Vec::with_capacity(modes);
        for (k, &m) in mu.iter().enumerate() {
            let a = path.spec.alpha[k] * base;
            let z = m * fine;
            c1.push(a * fine.sqrt() * phi1(z));
            c2.push(a * (fine * conditional_factor(z)).sqrt());
        }
        let mut weights = Vec::with_capacity(sub * modes);
        for j in 0..sub {
            for &m in mu {
                weights.push((m * (sub - 1 - j) as f64 * fine).exp());
            }
        }
        Convolution {
            substeps: sub,
            modes,
            c1,
            c2,
            weights,
        }
    }

    pub fn sample(&self, grid: &Arc<Grid>, normals: &StepNormals) -> SpectralField {
        debug_assert_eq!(normals.substeps, self.substeps);
        let mut coeffs = vec![Complex64::new(0.0, 0.0); self.modes];
        for j in 0..self.substeps {
            for (k, c) in coeffs.iter_mut().enumerate() {
                let idx = j * self.modes + k;
                *c += (normals.xi1[idx] * self.c1[k] + normals.xi2[idx] * self.c2[k])
                    * self.weights[idx];
            }
        }
        SpectralField::from_coeffs(grid, coeffs).expect("mode count")
    }
}

/// Variance of one real component of the stochastic convolution over `t`
/// for rate `mu` and amplitude `alpha`.
pub fn convolution_component_variance(grid: &Grid, alpha: f64, mu: f64, t: f64) -> f64 {
    alpha * alpha * component_variance(grid) * t * phi1(2.0 * mu * t)
}

/// State of `dZ = (A - alpha) Z dt + dW`.
#[derive(Debug, Clone, PartialEq)]
pub struct OuState {
    pub z: SpectralField,
    pub alpha: f64,
    pub t: f64,
}

impl OuState {
    pub fn new(z: SpectralField, alpha: f64) -> Result<Self> {
        if !(alpha >= 0.0) {
            return Err(Error::InvalidParameter(format!("damping must be >= 0, got {alpha}")));
        }
        Ok(OuState { z, alpha, t: 0.0 })
    }
}

/// Exact one-step OU propagator for a fixed path and damping.
#[derive(Debug, Clone)]
pub struct OuStepper {
    decay: Vec<f64>,
    conv: Convolution,
    alpha: f64,
    dt: f64,
}

impl OuStepper {
    pub fn new(path: &NoisePath, alpha: f64) -> Result<Self> {
        if !(alpha >= 0.0) {
            return Err(Error::InvalidParameter(format!("damping must be >= 0, got {alpha}")));
        }
        let mu = path.grid.linear_rates(alpha, false);
        Ok(OuStepper {
            decay: mu.iter().map(|m| (m * path.dt).exp()).collect(),
            conv: Convolution::new(path, &mu),
            alpha,
            dt: path.dt,
        })
    }

    pub fn step_with(&self, z: &SpectralField, normals: &StepNormals) -> SpectralField {
        let g = self.conv.sample(z.grid(), normals);
        z.map_modes(|i, c| c * self.decay[i] + g.coeffs()[i])
    }

    pub fn step(&self, state: &OuState, path: &NoisePath, step_index: u64) -> OuState {
        debug_assert_eq!(state.alpha, self.alpha);
        OuState {
            z: self.step_with(&state.z, &path.step_normals(step_index)),
            alpha: state.alpha,
            t: state.t + self.dt,
        }
    }
}

/// Advance `state` over one step of `path` with the exact OU transition.
pub fn ou_step_exact(state: &OuState, path: &NoisePath, step_index: u64) -> Result<OuState> {
    Ok(OuStepper::new(path, state.alpha)?.step(state, path, step_index))
}

/// Per-component stationary variance `alpha_k^2 / (2L) / (-2 mu_k)`.
pub fn stationary_component_variance(spec: &NoiseSpec, grid: &Grid, alpha: f64) -> Result<Vec<f64>> {
    if !(alpha >= 0.0) {
        return Err(Error::InvalidParameter(format!("damping must be >= 0, got {alpha}")));
    }
    let mu = grid.linear_rates(alpha, false);
    let s = component_variance(grid);
    mu.iter()
        .zip(spec.amplitudes())
        .enumerate()
        .map(|(i, (&m, &a))| {
            if a == 0.0 {
                Ok(0.0)
            } else if m >= 0.0 {
                Err(Error::InvalidParameter(format!(
                    "mode {} has no damping; stationary law does not exist",
                    i + 1
                )))
            } else {
                Ok(a * a * s / (-2.0 * m))
            }
        })
        .collect()
}

/// A draw from the stationary law of `dZ = (A - alpha) Z dt + dW`.
pub fn sample_stationary_ou(
    spec: &NoiseSpec,
    grid: &Arc<Grid>,
    alpha: f64,
    seed: u64,
) -> Result<SpectralField> {
    let var = stationary_component_variance(spec, grid, alpha)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, u64::MAX));
    let coeffs = var
        .iter()
        .map(|v| {
            let s = v.sqrt();
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            Complex64::new(re * s, im * s)
        })
        .collect();
    SpectralField::from_coeffs(grid, coeffs)
}

/// `E |Z|^2_{L2}` under the stationary law.
pub fn stationary_l2_expectation(spec: &NoiseSpec, grid: &Grid, alpha: f64) -> Result<f64> {
    let var = stationary_component_variance(spec, grid, alpha)?;
    Ok(2.0 * grid.length() * var.iter().map(|v| 2.0 * v).sum::<f64>())
}

/// `E int (Z_x)^4 dx` under the stationary law: `Z_x(x)` is centred Gaussian
/// with variance `s^2 = sum_k 4 q_k^2 v_k`, so Isserlis gives `3 L s^4`.
pub fn stationary_zx_fourth_moment(spec: &NoiseSpec, grid: &Grid, alpha: f64) -> Result<f64> {
    let var = stationary_component_variance(spec, grid, alpha)?;
    let s2: f64 = var.iter().zip(grid.wavenumbers()).map(|(v, q)| 4.0 * q * q * v).sum();
    Ok(3.0 * grid.length() * s2 * s2)
}

/// Result of the exponential-moment search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FerniqueMoment {
    pub lambda: f64,
    /// `mean exp(lambda x)` over the first half and over all samples.
    pub half: f64,
    pub full: f64,
}

/// Largest `lambda` (by bisection on `[0, hi]`) at which the empirical mean of
/// `exp(lambda x)` changes by at most `rel_tol` when the sample is doubled.
pub fn fernique_exponent(xs: &[f64], hi: f64, rel_tol: f64) -> Result<FerniqueMoment> {
    if xs.len() < 4 || xs.iter().any(|x| !x.is_finite()) {
        return Err(Error::InsufficientData("need at least 4 finite samples".into()));
    }
    let half = &xs[..xs.len() / 2];
    let mean = |s: &[f64], l: f64| s.iter().map(|x| (l * x).exp()).sum::<f64>() / s.len() as f64;
    let stable = |l: f64| {
        let (a, b) = (mean(half, l), mean(xs, l));
        a.is_finite() && b.is_finite() && (a - b).abs() <= rel_tol * b
    };
    let (mut lo, mut up) = (0.0, hi);
    if stable(up) {
        lo = up;
    } else {
        for _ in 0..60 {
            let mid = 0.5 * (lo + up);
            if stable(mid) {
                lo = mid;
            } else {
                up = mid;
            }
        }
    }
    if lo == 0.0 {
        return Err(Error::InsufficientData("no positive exponent with a stable mean".into()));
    }
    Ok(FerniqueMoment { lambda: lo, half: mean(half, lo), full: mean(xs, lo) })
}
