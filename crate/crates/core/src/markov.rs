//! Monte Carlo estimators for the transition semigroup.
//!
//! Every estimator draws path `i` of seed block `b` from
//! `derive_seed(derive_seed(seed, b), i)`, so results depend only on the
//! configuration and not on the thread count. Difference estimators reuse the
//! same paths for both starting points.

use std::sync::Arc;

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::dynamics::{CutoffSpec, FullStepper, IntegratorConfig, RegularizedStepper, StepForcing};
use crate::error::{Error, Result};
use crate::noise::{derive_seed, NoisePath, NoiseSpec, OuStepper};
use crate::spectral::{Grid, Norm, SpectralField};
use crate::stats::{ks_two_sample, log_log_slope, wilson_interval, KsResult, Summary};

/// What a functional measures.
#[derive(Debug, Clone, PartialEq)]
pub enum FunctionalKind {
    Constant(f64),
    /// `scale * <u, cos(q_k x)> / |cos(q_k x)|` (or the sine part).
    Mode { k: usize, sine: bool, scale: f64 },
    Norm { norm: Norm, scale: f64 },
}

/// A real functional of the state, optionally clipped to `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Functional {
    pub name: String,
    pub kind: FunctionalKind,
    pub bounded: bool,
}

impl Functional {
    pub fn constant(c: f64) -> Self {
        Functional { name: format!("const({c})"), kind: FunctionalKind::Constant(c), bounded: c.abs() <= 1.0 }
    }

    pub fn mode(k: usize, scale: f64, bounded: bool) -> Self {
        Functional {
            name: format!("{}mode{k}", if bounded { "clip_" } else { "" }),
            kind: FunctionalKind::Mode { k, sine: false, scale },
            bounded,
        }
    }

    pub fn sine_mode(k: usize, scale: f64, bounded: bool) -> Self {
        Functional {
            name: format!("{}sine{k}", if bounded { "clip_" } else { "" }),
            kind: FunctionalKind::Mode { k, sine: true, scale },
            bounded,
        }
    }

    pub fn norm(norm: Norm, scale: f64, bounded: bool) -> Self {
        let label = match norm {
            Norm::L2 => "l2".to_string(),
            Norm::Sobolev(s) => format!("h{s}"),
            Norm::L4 => "l4".to_string(),
            Norm::W14 => "w14".to_string(),
            Norm::LInf => "linf".to_string(),
        };
        Functional {
            name: format!("{}{label}", if bounded { "clip_" } else { "" }),
            kind: FunctionalKind::Norm { norm, scale },
            bounded,
        }
    }

    /// Default bounded set: clipped projections on the first two modes and a clipped L2 norm.
    pub fn default_set() -> Vec<Functional> {
        vec![
            Functional::mode(1, 1.0, true),
            Functional::sine_mode(1, 1.0, true),
            Functional::mode(2, 1.0, true),
            Functional::norm(Norm::L2, 1.0, true),
        ]
    }

    pub fn eval(&self, u: &SpectralField) -> f64 {
        let raw = match &self.kind {
            FunctionalKind::Constant(c) => *c,
            FunctionalKind::Mode { k, sine, scale } => match u.coeffs().get(k.wrapping_sub(1)) {
                // <u, cos> = L Re c, |cos| = sqrt(L / 2); the sine part carries -Im c.
                Some(c) => {
                    let l = u.grid().length();
                    let part = if *sine { -c.im } else { c.re };
                    scale * (2.0 * l).sqrt() * part
                }
                None => 0.0,
            },
            FunctionalKind::Norm { norm, scale } => scale * u.norm(*norm).unwrap_or(f64::NAN),
        };
        if self.bounded {
            raw.clamp(-1.0, 1.0)
        } else {
            raw
        }
    }
}

/// Monte Carlo estimate with provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct SemigroupEstimate {
    pub value: f64,
    pub stderr: f64,
    pub paths: usize,
    pub t: f64,
    pub x_hash: String,
    pub seed_block: u64,
    /// Paths lost to non-finite states.
    pub blowups: usize,
}

impl SemigroupEstimate {
    fn from_samples(samples: Vec<Result<f64>>, t: f64, x: &SpectralField, block: u64) -> Result<Self> {
        let total = samples.len();
        let mut ok = Vec::with_capacity(total);
        let mut blowups = 0;
        for s in samples {
            match s {
                Ok(v) => ok.push(v),
                Err(Error::NonFinite { .. }) => blowups += 1,
                Err(e) => return Err(e),
            }
        }
        if blowups * 100 >= total.max(1) && blowups > 0 {
            return Err(Error::InsufficientData(format!(
                "{blowups} of {total} paths blew up; refusing to drop more than 1%"
            )));
        }
        let s = Summary::of(&ok);
        Ok(SemigroupEstimate {
            value: s.mean,
            stderr: if ok.len() > 1 { s.std_error() } else { 0.0 },
            paths: ok.len(),
            t,
            x_hash: field_hash(x),
            seed_block: block,
            blowups,
        })
    }

    /// `|a - b| <= k sqrt(se_a^2 + se_b^2)`.
    pub fn agrees_with(&self, other: &SemigroupEstimate, k: f64) -> bool {
        (self.value - other.value).abs() <= k * self.stderr.hypot(other.stderr)
    }
}

/// First 16 hex digits of the SHA-256 of the coefficients.
pub fn field_hash(x: &SpectralField) -> String {
    let mut h = Sha256::new();
    h.update(x.grid().length().to_le_bytes());
    h.update((x.grid().n() as u64).to_le_bytes());
    for c in x.coeffs() {
        h.update(c.re.to_le_bytes());
        h.update(c.im.to_le_bytes());
    }
    h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// Dynamics and randomness shared by all estimators.
#[derive(Debug, Clone)]
pub struct Ensemble {
    pub grid: Arc<Grid>,
    pub spec: NoiseSpec,
    pub dt: f64,
    pub instability: bool,
    pub nonlinearity: f64,
    /// Use the cut-off dynamics when set.
    pub cutoff: Option<CutoffSpec>,
    pub seed: u64,
}

enum Stepper {
    Full(FullStepper),
    Reg(RegularizedStepper),
}

impl Ensemble {
    pub fn new(grid: &Arc<Grid>, spec: NoiseSpec, dt: f64, seed: u64) -> Self {
        Ensemble {
            grid: grid.clone(),
            spec,
            dt,
            instability: true,
            nonlinearity: 1.0,
            cutoff: None,
            seed,
        }
    }

    pub fn with_cutoff(mut self, cutoff: Option<CutoffSpec>) -> Self {
        self.cutoff = cutoff;
        self
    }

    pub fn with_instability(mut self, on: bool) -> Self {
        self.instability = on;
        self
    }

    pub fn with_nonlinearity(mut self, c: f64) -> Self {
        self.nonlinearity = c;
        self
    }

    pub fn path(&self, block: u64, index: u64) -> Result<NoisePath> {
        NoisePath::new(&self.grid, self.spec.clone(), derive_seed(derive_seed(self.seed, block), index), self.dt)
    }

    fn steps(&self, t: f64) -> Result<usize> {
        if !(t >= 0.0) {
            return Err(Error::InvalidParameter(format!("t must be >= 0, got {t}")));
        }
        let n = (t / self.dt).round();
        if (n * self.dt - t).abs() > 1e-9 * t.max(1.0) {
            return Err(Error::InvalidParameter(format!("t = {t} is not a multiple of dt = {}", self.dt)));
        }
        Ok(n as usize)
    }

    fn cfg(&self) -> Result<IntegratorConfig> {
        Ok(IntegratorConfig::new(self.dt, self.dt, self.instability)?.with_nonlinearity(self.nonlinearity))
    }

    fn stepper(&self, path: &NoisePath) -> Result<Stepper> {
        let cfg = self.cfg()?;
        Ok(match self.cutoff {
            Some(c) => Stepper::Reg(RegularizedStepper::new(&self.grid, c, Some(path), &cfg)?),
            None => Stepper::Full(FullStepper::new(path, &cfg)?),
        })
    }

    /// State at `start + steps` steps of `path`, from `x` at step `start`.
    pub fn evolve(&self, x: &SpectralField, path: &NoisePath, start: u64, steps: usize) -> Result<SpectralField> {
        let stepper = self.stepper(path)?;
        let mut u = x.clone();
        for n in start..start + steps as u64 {
            let normals = path.step_normals(n);
            let t = n as f64 * self.dt;
            u = match &stepper {
                Stepper::Full(s) => s.step_with(&u, Some(&normals), t)?,
                Stepper::Reg(s) => s.step_with(&u, StepForcing::Noise(&normals), t)?,
            };
        }
        Ok(u)
    }

    /// Runs `steps` steps from `x`, calling `visit(n, u)` on the initial state
    /// (`n = 0`) and after every step.
    pub fn walk<F>(&self, x: &SpectralField, path: &NoisePath, steps: usize, mut visit: F) -> Result<SpectralField>
    where
        F: FnMut(usize, &SpectralField) -> Result<()>,
    {
        let stepper = self.stepper(path)?;
        let mut u = x.clone();
        visit(0, &u)?;
        for n in 0..steps {
            let normals = path.step_normals(n as u64);
            let t = n as f64 * self.dt;
            u = match &stepper {
                Stepper::Full(s) => s.step_with(&u, Some(&normals), t)?,
                Stepper::Reg(s) => s.step_with(&u, StepForcing::Noise(&normals), t)?,
            };
            visit(n + 1, &u)?;
        }
        Ok(u)
    }

    /// Number of steps covering `t`; errors when `t` is not on the step grid.
    pub fn steps_for(&self, t: f64) -> Result<usize> {
        self.steps(t)
    }

    /// Terminal states from several starting points driven by one path.
    fn evolve_many(&self, xs: &[&SpectralField], path: &NoisePath, steps: usize) -> Result<Vec<SpectralField>> {
        let stepper = self.stepper(path)?;
        let mut us: Vec<SpectralField> = xs.iter().map(|x| (*x).clone()).collect();
        for n in 0..steps as u64 {
            let normals = path.step_normals(n);
            let t = n as f64 * self.dt;
            for u in us.iter_mut() {
                *u = match &stepper {
                    Stepper::Full(s) => s.step_with(u, Some(&normals), t)?,
                    Stepper::Reg(s) => s.step_with(u, StepForcing::Noise(&normals), t)?,
                };
            }
        }
        Ok(us)
    }
}

fn check_paths(m: usize, min: usize) -> Result<()> {
    if m < min {
        return Err(Error::InvalidParameter(format!("need at least {min} paths, got {m}")));
    }
    Ok(())
}

/// `P_t phi(x)` from `m` independent paths of block `block`.
pub fn estimate_semigroup(
    ens: &Ensemble,
    phi: &Functional,
    x: &SpectralField,
    t: f64,
    m: usize,
    block: u64,
) -> Result<SemigroupEstimate> {
    check_paths(m, 100)?;
    let steps = ens.steps(t)?;
    let samples: Vec<Result<f64>> = (0..m as u64)
        .into_par_iter()
        .map(|i| Ok(phi.eval(&ens.evolve(x, &ens.path(block, i)?, 0, steps)?)))
        .collect();
    SemigroupEstimate::from_samples(samples, t, x, block)
}

/// `(P_t phi(x + eps h) - P_t phi(x)) / eps` with common random numbers.
#[allow(clippy::too_many_arguments)]
pub fn crn_difference(
    ens: &Ensemble,
    phi: &Functional,
    x: &SpectralField,
    h: &SpectralField,
    eps: f64,
    t: f64,
    m: usize,
    block: u64,
) -> Result<SemigroupEstimate> {
    check_paths(m, 2)?;
    let steps = ens.steps(t)?;
    let xh = x.axpy(eps, h)?;
    let samples: Vec<Result<f64>> = (0..m as u64)
        .into_par_iter()
        .map(|i| {
            let out = ens.evolve_many(&[x, &xh], &ens.path(block, i)?, steps)?;
            Ok((phi.eval(&out[1]) - phi.eval(&out[0])) / eps)
        })
        .collect();
    SemigroupEstimate::from_samples(samples, t, x, block)
}

/// Bismut-Elworthy-Li estimate of `D(P_t phi)(x)[h]` for the cut-off dynamics:
/// `(1/t) E[phi(u(t)) sum_n <Q^{-1} psi_n, dW_n>]` with `psi` the tangent
/// process started at `h` and the Ito sum taken at left points.
pub fn bel_gradient(
    ens: &Ensemble,
    phi: &Functional,
    x: &SpectralField,
    h: &SpectralField,
    t: f64,
    m: usize,
    block: u64,
) -> Result<SemigroupEstimate> {
    check_paths(m, 2)?;
    ens.spec.check_nondegenerate()?;
    let cutoff = ens
        .cutoff
        .ok_or_else(|| Error::InvalidParameter("the gradient estimator needs a cut-off radius".into()))?;
    if t <= 0.0 {
        return Err(Error::InvalidParameter("t must be > 0".into()));
    }
    let steps = ens.steps(t)?;
    let cfg = ens.cfg()?;
    let samples: Vec<Result<f64>> = (0..m as u64)
        .into_par_iter()
        .map(|i| {
            let path = ens.path(block, i)?;
            let st = RegularizedStepper::new(&ens.grid, cutoff, Some(&path), &cfg)?;
            let mut u = x.clone();
            let mut psi = h.clone();
            let mut integral = 0.0;
            for n in 0..steps as u64 {
                let normals = path.step_normals(n);
                let dw = path.increment_from(&normals);
                integral += ens.spec.apply_q_inverse(&psi)?.inner_product(&dw, (0, 0))?;
                let tn = n as f64 * ens.dt;
                psi = st.step_tangent(&psi, &u, tn)?;
                u = st.step_with(&u, StepForcing::Noise(&normals), tn)?;
            }
            Ok(phi.eval(&u) * integral / t)
        })
        .collect();
    SemigroupEstimate::from_samples(samples, t, x, block)
}

/// One row of the strong-Feller modulus table.
#[derive(Debug, Clone, PartialEq)]
pub struct ModulusRow {
    pub h_norm: f64,
    /// `sup_phi |P_t phi(x + h) - P_t phi(x)|`.
    pub difference: f64,
    pub stderr: f64,
    pub worst: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModulusTable {
    /// Sorted by decreasing `|h|`.
    pub rows: Vec<ModulusRow>,
    /// Least-squares `C` in `difference = C |h| log(1/|h|)`.
    pub fit_constant: f64,
    /// RMS relative residual of that fit.
    pub fit_residual: f64,
    /// Log-log slope of `difference` against `|h|`.
    pub slope: f64,
    /// Nonincreasing as `|h|` decreases, up to 3 standard errors.
    pub monotone: bool,
}

/// Strong-Feller modulus along `direction` (normalized in `H1`) at the given `|h|_{H1}` scales.
#[allow(clippy::too_many_arguments)]
pub fn strong_feller_modulus(
    ens: &Ensemble,
    phis: &[Functional],
    x: &SpectralField,
    direction: &SpectralField,
    t: f64,
    scales: &[f64],
    m: usize,
    block: u64,
) -> Result<ModulusTable> {
    check_paths(m, 2)?;
    if phis.is_empty() || scales.is_empty() {
        return Err(Error::InvalidParameter("need functionals and scales".into()));
    }
    let dn = direction.h1_norm_sq().sqrt();
    if dn == 0.0 {
        return Err(Error::InvalidParameter("direction must be nonzero".into()));
    }
    let unit = direction.scale(1.0 / dn);
    let mut scales = scales.to_vec();
    scales.sort_by(|a, b| b.total_cmp(a));
    let steps = ens.steps(t)?;
    let starts: Vec<SpectralField> = scales.iter().map(|s| x.axpy(*s, &unit)).collect::<Result<_>>()?;
    let per_path: Vec<Result<Vec<Vec<f64>>>> = (0..m as u64)
        .into_par_iter()
        .map(|i| {
            let mut all: Vec<&SpectralField> = vec![x];
            all.extend(starts.iter());
            let out = ens.evolve_many(&all, &ens.path(block, i)?, steps)?;
            Ok(phis
                .iter()
                .map(|phi| {
                    let base = phi.eval(&out[0]);
                    out[1..].iter().map(|u| phi.eval(u) - base).collect()
                })
                .collect())
        })
        .collect();
    let mut data = Vec::with_capacity(m);
    for r in per_path {
        data.push(r?);
    }
    let mut rows = Vec::with_capacity(scales.len());
    for (j, &s) in scales.iter().enumerate() {
        let mut best = (0.0, 0.0, String::new());
        for (p, phi) in phis.iter().enumerate() {
            let xs: Vec<f64> = data.iter().map(|d| d[p][j]).collect();
            let sm = Summary::of(&xs);
            if sm.mean.abs() >= best.0 {
                best = (sm.mean.abs(), sm.std_error(), phi.name.clone());
            }
        }
        rows.push(ModulusRow { h_norm: s, difference: best.0, stderr: best.1, worst: best.2 });
    }
    let monotone = rows.windows(2).all(|w| w[1].difference <= w[0].difference + 3.0 * w[0].stderr.hypot(w[1].stderr));
    let basis: Vec<f64> = rows.iter().map(|r| r.h_norm * (1.0 / r.h_norm).ln().max(f64::MIN_POSITIVE)).collect();
    let num: f64 = rows.iter().zip(&basis).map(|(r, b)| r.difference * b).sum();
    let den: f64 = basis.iter().map(|b| b * b).sum();
    let fit_constant = if den > 0.0 { num / den } else { f64::NAN };
    let fit_residual = (rows
        .iter()
        .zip(&basis)
        .map(|(r, b)| {
            let pred = fit_constant * b;
            if pred > 0.0 { ((r.difference - pred) / pred).powi(2) } else { 0.0 }
        })
        .sum::<f64>()
        / rows.len() as f64)
        .sqrt();
    let positive: Vec<&ModulusRow> = rows.iter().filter(|r| r.difference > 0.0).collect();
    let slope = if positive.len() >= 2 {
        let hs: Vec<f64> = positive.iter().map(|r| r.h_norm).collect();
        let ds: Vec<f64> = positive.iter().map(|r| r.difference).collect();
        log_log_slope(&hs, &ds)?.slope
    } else {
        f64::NAN
    };
    Ok(ModulusTable { rows, fit_constant, fit_residual, slope, monotone })
}

/// One `(rho, eps)` cell of the exit-time table.
#[derive(Debug, Clone, PartialEq)]
pub struct TauCell {
    pub rho: f64,
    pub eps: f64,
    /// Number of paths with `tau_rho < eps`.
    pub exits: usize,
    /// Number of paths with `sup_{t <= eps} |Z(t)|_{H1} <= rho / 4`.
    pub z_small: usize,
    pub paths: usize,
}

impl TauCell {
    pub fn p_exit(&self) -> f64 {
        self.exits as f64 / self.paths as f64
    }

    pub fn p_stay(&self) -> f64 {
        1.0 - self.p_exit()
    }

    pub fn p_z_small(&self) -> f64 {
        self.z_small as f64 / self.paths as f64
    }

    /// Wilson interval of `P[tau >= eps]` at 3 sigma.
    pub fn stay_interval(&self) -> (f64, f64) {
        wilson_interval(self.paths - self.exits, self.paths, 3.0)
    }

    pub fn z_interval(&self) -> (f64, f64) {
        wilson_interval(self.z_small, self.paths, 3.0)
    }

    /// `P[tau >= eps] >= P[sup |Z| <= rho / 4]` up to Wilson-interval overlap.
    pub fn lower_bound_holds(&self) -> bool {
        self.stay_interval().1 >= self.z_interval().0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TauTable {
    pub cells: Vec<TauCell>,
    pub rhos: Vec<f64>,
    pub epss: Vec<f64>,
    /// `P[tau < eps]` nonincreasing in `rho` and nondecreasing in `eps`.
    pub monotone: bool,
    /// Lower bound satisfied at every cell.
    pub lower_bound_everywhere: bool,
    /// Smallest `eps rho^{2/gamma}` over cells where the point estimates violate the
    /// lower bound; infinite when none do.
    pub c_tau: f64,
    pub gamma: f64,
    /// Largest `c` with `P[tau < eps] <= exp(-c rho^2 / eps)` at every cell.
    pub exit_rate: f64,
    /// Largest `c` with `P[tau >= eps] <= exp(-c rho^2 / eps)` at every cell.
    pub stay_rate: f64,
}

impl TauTable {
    pub fn cell(&self, rho_index: usize, eps_index: usize) -> &TauCell {
        &self.cells[rho_index * self.epss.len() + eps_index]
    }
}

/// Exponent used for the `eps <= c_tau rho^{-2/gamma}` scale.
pub const TAU_GAMMA: f64 = 1.0 / 16.0;

/// Exit-time frequencies from the full dynamics started at `x`.
///
/// `tau_rho` is read off the running maximum of `|u|_{H1}` on the step grid,
/// so the table is monotone pathwise.
pub fn tau_tail(ens: &Ensemble, x: &SpectralField, rhos: &[f64], epss: &[f64], m: usize, block: u64) -> Result<TauTable> {
    check_paths(m, 1)?;
    if rhos.is_empty() || epss.is_empty() || rhos.iter().chain(epss).any(|v| !(*v > 0.0)) {
        return Err(Error::InvalidParameter("rho and eps grids must be nonempty and positive".into()));
    }
    let mut rhos = rhos.to_vec();
    let mut epss = epss.to_vec();
    rhos.sort_by(f64::total_cmp);
    epss.sort_by(f64::total_cmp);
    let eps_steps: Vec<usize> = epss.iter().map(|e| ens.steps(*e)).collect::<Result<_>>()?;
    let total = *eps_steps.last().expect("nonempty");
    let plain = Ensemble { cutoff: None, ..ens.clone() };
    let x0 = x.h1_norm_sq().sqrt();
    // per path: (running max of |u|, running max of |Z|) at each eps
    let runs: Vec<Result<Vec<(f64, f64)>>> = (0..m as u64)
        .into_par_iter()
        .map(|i| {
            let path = plain.path(block, i)?;
            let Stepper::Full(st) = plain.stepper(&path)? else { unreachable!() };
            let ou = OuStepper::new(&path, 0.0)?;
            let mut u = x.clone();
            let mut z = SpectralField::zeros(&ens.grid);
            let (mut umax, mut zmax) = (x0, 0.0f64);
            let mut out = Vec::with_capacity(eps_steps.len());
            let mut next = 0;
            for n in 0..total {
                let normals = path.step_normals(n as u64);
                match st.step_with(&u, Some(&normals), n as f64 * ens.dt) {
                    Ok(v) => u = v,
                    Err(Error::NonFinite { .. }) => {
                        umax = f64::INFINITY;
                    }
                    Err(e) => return Err(e),
                }
                z = ou.step_with(&z, &normals);
                if umax.is_finite() {
                    umax = umax.max(u.h1_norm_sq().sqrt());
                }
                zmax = zmax.max(z.h1_norm_sq().sqrt());
                while next < eps_steps.len() && eps_steps[next] == n + 1 {
                    out.push((umax, zmax));
                    next += 1;
                }
            }
            while out.len() < eps_steps.len() {
                out.push((umax, zmax));
            }
            Ok(out)
        })
        .collect();
    let mut maxima = Vec::with_capacity(m);
    for r in runs {
        maxima.push(r?);
    }
    let mut cells = Vec::with_capacity(rhos.len() * epss.len());
    for &rho in &rhos {
        for (j, &eps) in epss.iter().enumerate() {
            let exits = maxima.iter().filter(|p| p[j].0 > rho).count();
            let z_small = maxima.iter().filter(|p| p[j].1 <= rho / 4.0).count();
            cells.push(TauCell { rho, eps, exits, z_small, paths: m });
        }
    }
    let ne = epss.len();
    let mut monotone = true;
    for a in 0..rhos.len() {
        for b in 0..ne {
            let c = &cells[a * ne + b];
            if b + 1 < ne && cells[a * ne + b + 1].exits < c.exits {
                monotone = false;
            }
            if a + 1 < rhos.len() && cells[(a + 1) * ne + b].exits > c.exits {
                monotone = false;
            }
        }
    }
    let lower_bound_everywhere = cells.iter().all(TauCell::lower_bound_holds);
    let c_tau = cells
        .iter()
        .filter(|c| c.p_stay() < c.p_z_small())
        .map(|c| c.eps * c.rho.powf(2.0 / TAU_GAMMA))
        .fold(f64::INFINITY, f64::min);
    let rate = |p: f64, c: &TauCell| if p <= 0.0 { f64::INFINITY } else { -c.eps * p.ln() / (c.rho * c.rho) };
    let exit_rate = cells.iter().map(|c| rate(c.p_exit(), c)).fold(f64::INFINITY, f64::min);
    let stay_rate = cells.iter().map(|c| rate(c.p_stay(), c)).fold(f64::INFINITY, f64::min);
    Ok(TauTable { cells, rhos, epss, monotone, lower_bound_everywhere, c_tau, gamma: TAU_GAMMA, exit_rate, stay_rate })
}

/// Two-sample comparison for one functional and one `(s, t)` pair.
#[derive(Debug, Clone, PartialEq)]
pub struct RestartResult {
    pub functional: String,
    pub s: f64,
    pub t: f64,
    pub ks: KsResult,
    /// Samples agree value by value.
    pub identical: bool,
}

/// Compares `phi(h(t))` from uninterrupted runs with `phi(h~(t - s))`, where
/// `h~` restarts at an independent copy of `h(s)` with fresh noise.
pub fn markov_restart_test(
    ens: &Ensemble,
    x: &SpectralField,
    s: f64,
    t: f64,
    m: usize,
    functionals: &[Functional],
    block: u64,
) -> Result<Vec<RestartResult>> {
    if !(s >= 0.0 && s < t) {
        return Err(Error::InvalidParameter(format!("need 0 <= s < t, got s={s}, t={t}")));
    }
    check_paths(m, 2)?;
    let (ss, ts) = (ens.steps(s)?, ens.steps(t)?);
    let pairs: Vec<Result<(SpectralField, SpectralField)>> = (0..m as u64)
        .into_par_iter()
        .map(|i| {
            let a = ens.evolve(x, &ens.path(3 * block, i)?, 0, ts)?;
            let mid = ens.evolve(x, &ens.path(3 * block + 1, i)?, 0, ss)?;
            let b = ens.evolve(&mid, &ens.path(3 * block + 2, i)?, 0, ts - ss)?;
            Ok((a, b))
        })
        .collect();
    let mut a = Vec::with_capacity(m);
    let mut b = Vec::with_capacity(m);
    for p in pairs {
        let (x1, x2) = p?;
        a.push(x1);
        b.push(x2);
    }
    functionals
        .iter()
        .map(|phi| {
            let fa: Vec<f64> = a.iter().map(|u| phi.eval(u)).collect();
            let fb: Vec<f64> = b.iter().map(|u| phi.eval(u)).collect();
            Ok(RestartResult {
                functional: phi.name.clone(),
                s,
                t,
                ks: ks_two_sample(&fa, &fb)?,
                identical: fa == fb,
            })
        })
        .collect()
}
