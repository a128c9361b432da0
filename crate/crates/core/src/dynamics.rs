//! Exponential-Euler integrators for the growth equation and its relatives.
//!
//! All schemes share one shape: for per-mode rates `mu` and step `dt`,
//! `u <- e^{mu dt} u + dt phi1(mu dt) N(u) + g`, where `N` is the explicit
//! drift and `g` is the exact stochastic convolution of the step, built from
//! the normals of [`NoisePath::step_normals`]. Solvers that are compared
//! pathwise therefore see the same Brownian motion.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::noise::{phi1, phi2, Convolution, NoisePath, StepNormals};
use crate::spectral::{nonlinearity_b, Grid, SpectralField};

/// Time-stepping parameters shared by all integrators.
#[derive(Debug, Clone, PartialEq)]
pub struct IntegratorConfig {
    pub dt: f64,
    pub horizon: f64,
    /// Include the destabilising `-h_xx` term.
    pub instability: bool,
    /// Snapshot stride in steps.
    pub store_every: usize,
    /// Coefficient of the quadratic term; 0 gives the linear equation.
    pub nonlinearity: f64,
}

impl IntegratorConfig {
    pub fn new(dt: f64, horizon: f64, instability: bool) -> Result<Self> {
        let cfg = IntegratorConfig {
            dt,
            horizon,
            instability,
            store_every: 1,
            nonlinearity: 1.0,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_store_every(mut self, stride: usize) -> Self {
        self.store_every = stride;
        self
    }

    pub fn with_nonlinearity(mut self, coefficient: f64) -> Self {
        self.nonlinearity = coefficient;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::InvalidParameter(format!("dt must be > 0, got {}", self.dt)));
        }
        if !(self.horizon.is_finite() && self.horizon >= self.dt * (1.0 - 1e-9)) {
            return Err(Error::InvalidParameter(format!(
                "horizon {} must be >= dt {}",
                self.horizon, self.dt
            )));
        }
        if self.store_every == 0 {
            return Err(Error::InvalidParameter("store_every must be >= 1".into()));
        }
        if !self.nonlinearity.is_finite() {
            return Err(Error::InvalidParameter("nonlinearity must be finite".into()));
        }
        Ok(())
    }

    /// Number of steps to reach the horizon.
    pub fn steps(&self) -> usize {
        (self.horizon / self.dt).round().max(1.0) as usize
    }
}

/// Smooth cut-off `chi_rho` acting on `zeta = |u|^2_{H1}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CutoffSpec {
    pub rho: f64,
}

fn bump_g(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        (-1.0 / x).exp()
    }
}

impl CutoffSpec {
    pub fn new(rho: f64) -> Result<Self> {
        if !(rho.is_finite() && rho > 0.0) {
            return Err(Error::InvalidParameter(format!("rho must be > 0, got {rho}")));
        }
        Ok(CutoffSpec { rho })
    }

    /// Equal to 1 on `[0, rho^2]`, 0 on `[2 rho^2, inf)`, smooth and monotone between.
    pub fn chi(&self, zeta: f64) -> f64 {
        let r2 = self.rho * self.rho;
        let s = (zeta - r2) / r2;
        if s <= 0.0 {
            1.0
        } else if s >= 1.0 {
            0.0
        } else {
            let a = bump_g(1.0 - s);
            let b = bump_g(s);
            a / (a + b)
        }
    }

    pub fn chi_prime(&self, zeta: f64) -> f64 {
        let r2 = self.rho * self.rho;
        let s = (zeta - r2) / r2;
        if s <= 0.0 || s >= 1.0 {
            return 0.0;
        }
        let a = bump_g(1.0 - s);
        let b = bump_g(s);
        if a == 0.0 || b == 0.0 {
            return 0.0;
        }
        let ds = -a * b * (1.0 / (1.0 - s).powi(2) + 1.0 / (s * s)) / (a + b).powi(2);
        ds / r2
    }
}

/// Stored snapshots of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    /// `h` for the full equation, `u` for the regularized one.
    pub h: Vec<SpectralField>,
    pub v: Option<Vec<SpectralField>>,
    pub z: Option<Vec<SpectralField>>,
    pub seed: Option<u64>,
    pub config_hash: Option<String>,
}

impl Trajectory {
    fn new(seed: Option<u64>, with_v: bool, with_z: bool) -> Self {
        Trajectory {
            times: Vec::new(),
            h: Vec::new(),
            v: with_v.then(Vec::new),
            z: with_z.then(Vec::new),
            seed,
            config_hash: None,
        }
    }

    fn push(&mut self, t: f64, h: &SpectralField, v: Option<&SpectralField>, z: Option<&SpectralField>) {
        self.times.push(t);
        self.h.push(h.clone());
        if let (Some(vs), Some(v)) = (self.v.as_mut(), v) {
            vs.push(v.clone());
        }
        if let (Some(zs), Some(z)) = (self.z.as_mut(), z) {
            zs.push(z.clone());
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last(&self) -> Option<&SpectralField> {
        self.h.last()
    }

    /// `max_m |h_m - v_m - z_m|_{L2}` for co-evolved runs.
    pub fn splitting_defect(&self) -> Option<f64> {
        let (v, z) = (self.v.as_ref()?, self.z.as_ref()?);
        Some(
            self.h
                .iter()
                .zip(v)
                .zip(z)
                .map(|((h, v), z)| (&(h - v) - z).norm_sq_l2().sqrt())
                .fold(0.0, f64::max),
        )
    }
}

/// Per-mode ETD1 weights for fixed rates and step.
#[derive(Debug, Clone)]
pub(crate) struct Propagator {
    pub(crate) decay: Vec<f64>,
    pub(crate) phi1dt: Vec<f64>,
    pub(crate) phi2dt: Vec<f64>,
}

impl Propagator {
    pub(crate) fn new(mu: &[f64], dt: f64) -> Self {
        Propagator {
            decay: mu.iter().map(|m| (m * dt).exp()).collect(),
            phi1dt: mu.iter().map(|m| dt * phi1(m * dt)).collect(),
            phi2dt: mu.iter().map(|m| dt * phi2(m * dt)).collect(),
        }
    }

    /// `e^{mu dt} u + dt phi1 n`.
    pub(crate) fn advance(&self, u: &SpectralField, n: &SpectralField) -> SpectralField {
        let nc = n.coeffs();
        u.map_modes(|i, c| c * self.decay[i] + nc[i] * self.phi1dt[i])
    }
}

fn add_into(target: &mut SpectralField, g: &SpectralField) {
    for (c, d) in target.coeffs_mut().iter_mut().zip(g.coeffs()) {
        *c += d;
    }
}

fn check_finite(u: SpectralField, t: f64) -> Result<SpectralField> {
    if u.is_finite() {
        Ok(u)
    } else {
        Err(Error::NonFinite { t })
    }
}

fn quadratic(u: &SpectralField, coefficient: f64) -> SpectralField {
    if coefficient == 0.0 {
        SpectralField::zeros(u.grid())
    } else {
        nonlinearity_b(u, u).expect("same grid").scale(coefficient)
    }
}

/// Stepper for `h' = -h_xxxx [- h_xx] + c (h_x^2)_xx + dW`.
#[derive(Debug, Clone)]
pub struct FullStepper {
    prop: Propagator,
    conv: Convolution,
    nonlinearity: f64,
    dt: f64,
}

impl FullStepper {
    pub fn new(path: &NoisePath, cfg: &IntegratorConfig) -> Result<Self> {
        cfg.validate()?;
        check_dt(path, cfg)?;
        let mu = path.grid().linear_rates(0.0, cfg.instability);
        Ok(FullStepper {
            prop: Propagator::new(&mu, cfg.dt),
            conv: Convolution::new(path, &mu),
            nonlinearity: cfg.nonlinearity,
            dt: cfg.dt,
        })
    }

    pub fn step_with(&self, h: &SpectralField, normals: Option<&StepNormals>, t: f64) -> Result<SpectralField> {
        let mut next = self.prop.advance(h, &quadratic(h, self.nonlinearity));
        if let Some(n) = normals {
            add_into(&mut next, &self.conv.sample(h.grid(), n));
        }
        check_finite(next, t + self.dt)
    }
}

fn check_dt(path: &NoisePath, cfg: &IntegratorConfig) -> Result<()> {
    if (path.dt() - cfg.dt).abs() > 1e-12 * cfg.dt {
        return Err(Error::InvalidParameter(format!(
            "noise path step {} differs from integrator step {}",
            path.dt(),
            cfg.dt
        )));
    }
    Ok(())
}

/// One ETD1 step of the full equation driven by step `step_index` of `path`.
pub fn step_full(h: &SpectralField, path: &NoisePath, step_index: u64, cfg: &IntegratorConfig) -> Result<SpectralField> {
    FullStepper::new(path, cfg)?.step_with(h, Some(&path.step_normals(step_index)), step_index as f64 * cfg.dt)
}

/// Full equation from `h0` over `cfg.horizon`.
pub fn run_full(h0: &SpectralField, path: &NoisePath, cfg: &IntegratorConfig) -> Result<Trajectory> {
    let stepper = FullStepper::new(path, cfg)?;
    let mut traj = Trajectory::new(Some(path.seed()), false, false);
    let mut h = h0.clone();
    traj.push(0.0, &h, None, None);
    let steps = cfg.steps();
    for n in 0..steps {
        h = stepper.step_with(&h, Some(&path.step_normals(n as u64)), n as f64 * cfg.dt)?;
        if (n + 1) % cfg.store_every == 0 || n + 1 == steps {
            traj.push((n + 1) as f64 * cfg.dt, &h, None, None);
        }
    }
    Ok(traj)
}

/// Stepper for `V' = AV [- (V + Z)_xx] + alpha Z + c B(V + Z, V + Z)` with `Z`
/// the OU process of `A - alpha`.
#[derive(Debug, Clone)]
pub struct VStepper {
    prop: Propagator,
    /// Coefficient of `Z_k` in the linear forcing.
    forcing: Vec<f64>,
    nonlinearity: f64,
    dt: f64,
}

impl VStepper {
    pub fn new(grid: &Arc<Grid>, cfg: &IntegratorConfig, damping: f64) -> Result<Self> {
        cfg.validate()?;
        if !(damping >= 0.0) {
            return Err(Error::InvalidParameter(format!("damping must be >= 0, got {damping}")));
        }
        let mu = grid.linear_rates(0.0, cfg.instability);
        let inst = if cfg.instability { 1.0 } else { 0.0 };
        Ok(VStepper {
            prop: Propagator::new(&mu, cfg.dt),
            forcing: grid.wavenumbers().iter().map(|q| inst * q * q + damping).collect(),
            nonlinearity: cfg.nonlinearity,
            dt: cfg.dt,
        })
    }

    /// `Z` enters linearly interpolated between `z_now` and `z_next`; the
    /// quadratic term is explicit at the left point.
    pub fn step(&self, v: &SpectralField, z_now: &SpectralField, z_next: &SpectralField, t: f64) -> Result<SpectralField> {
        v.grid().check_same(z_now.grid())?;
        v.grid().check_same(z_next.grid())?;
        let b = quadratic(&(v + z_now), self.nonlinearity);
        let (bc, z0, z1) = (b.coeffs(), z_now.coeffs(), z_next.coeffs());
        let p = &self.prop;
        let next = v.map_modes(|i, c| {
            c * p.decay[i]
                + bc[i] * p.phi1dt[i]
                + (z0[i] * p.phi1dt[i] + (z1[i] - z0[i]) * p.phi2dt[i]) * self.forcing[i]
        });
        check_finite(next, t + self.dt)
    }
}

/// One step of the V-equation for the undamped splitting `h = V + Z`.
pub fn step_v(
    v: &SpectralField,
    z_now: &SpectralField,
    z_next: &SpectralField,
    cfg: &IntegratorConfig,
) -> Result<SpectralField> {
    VStepper::new(v.grid(), cfg, 0.0)?.step(v, z_now, z_next, 0.0)
}

/// Co-evolves `Z` (exact OU with damping `damping`, started at `z0`) and `V`
/// from `V(0) = h0 - z0`; stores `h = V + Z`, `V` and `Z`.
pub fn run_split(
    h0: &SpectralField,
    z0: &SpectralField,
    damping: f64,
    path: &NoisePath,
    cfg: &IntegratorConfig,
) -> Result<Trajectory> {
    check_dt(path, cfg)?;
    let vs = VStepper::new(path.grid(), cfg, damping)?;
    let ou = crate::noise::OuStepper::new(path, damping)?;
    let mut traj = Trajectory::new(Some(path.seed()), true, true);
    let mut z = z0.clone();
    let mut v = h0 - z0;
    traj.push(0.0, h0, Some(&v), Some(&z));
    let steps = cfg.steps();
    for n in 0..steps {
        let z_next = ou.step_with(&z, &path.step_normals(n as u64));
        v = vs.step(&v, &z, &z_next, n as f64 * cfg.dt)?;
        z = z_next;
        if (n + 1) % cfg.store_every == 0 || n + 1 == steps {
            traj.push((n + 1) as f64 * cfg.dt, &(&v + &z), Some(&v), Some(&z));
        }
    }
    Ok(traj)
}

/// A control given by its time derivative, constant on each step.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlPath {
    pub dt: f64,
    pub wdot: Vec<SpectralField>,
}

impl ControlPath {
    /// `w(t_n)`, piecewise linear in time with `w(0) = 0`.
    pub fn w_at(&self, step: usize) -> Option<SpectralField> {
        let first = self.wdot.first()?;
        let mut w = SpectralField::zeros(first.grid());
        for wd in self.wdot.iter().take(step) {
            w = w.axpy(self.dt, wd).ok()?;
        }
        Some(w)
    }

    pub fn is_zero(&self) -> bool {
        self.wdot.iter().all(|w| w.coeffs().iter().all(|c| c.norm() == 0.0))
    }
}

/// Forcing of the regularized equation.
#[derive(Debug, Clone, Copy)]
pub enum Forcing<'a> {
    None,
    Noise(&'a NoisePath),
    Control(&'a ControlPath),
}

/// Stepper for `u' = -u_xxxx + d_x^2 F(u) + forcing` with
/// `F(u) = (-u + c u_x^2) chi_rho(|u|^2_{H1})` (the `-u` only with the instability).
#[derive(Debug, Clone)]
pub struct RegularizedStepper {
    prop: Propagator,
    conv: Option<Convolution>,
    cutoff: CutoffSpec,
    instability: f64,
    nonlinearity: f64,
    dt: f64,
}

impl RegularizedStepper {
    pub fn new(grid: &Arc<Grid>, cutoff: CutoffSpec, path: Option<&NoisePath>, cfg: &IntegratorConfig) -> Result<Self> {
        cfg.validate()?;
        let mu = grid.linear_rates(0.0, false);
        if let Some(p) = path {
            check_dt(p, cfg)?;
        }
        Ok(RegularizedStepper {
            prop: Propagator::new(&mu, cfg.dt),
            conv: path.map(|p| Convolution::new(p, &mu)),
            cutoff,
            instability: if cfg.instability { 1.0 } else { 0.0 },
            nonlinearity: cfg.nonlinearity,
            dt: cfg.dt,
        })
    }

    pub fn cutoff(&self) -> CutoffSpec {
        self.cutoff
    }

    /// `d_x^2 F(u)` without the cut-off factor.
    fn raw_drift(&self, u: &SpectralField) -> SpectralField {
        let q = u.grid().wavenumbers();
        let b = quadratic(u, self.nonlinearity);
        let inst = self.instability;
        b.map_modes(|i, c| c + u.coeffs()[i] * (inst * q[i] * q[i]))
    }

    /// `d_x^2 F(u)`.
    pub fn drift(&self, u: &SpectralField) -> SpectralField {
        let chi = self.cutoff.chi(u.h1_norm_sq());
        if chi == 0.0 {
            return SpectralField::zeros(u.grid());
        }
        self.raw_drift(u).scale(chi)
    }

    /// `d_x^2 DF(u)[psi]`.
    pub fn tangent_drift(&self, u: &SpectralField, psi: &SpectralField) -> SpectralField {
        let zeta = u.h1_norm_sq();
        let chi = self.cutoff.chi(zeta);
        let dchi = self.cutoff.chi_prime(zeta);
        let q = u.grid().wavenumbers();
        let mut out = SpectralField::zeros(u.grid());
        if chi != 0.0 {
            let lin = if self.nonlinearity != 0.0 {
                nonlinearity_b(u, psi).expect("same grid").scale(2.0 * self.nonlinearity)
            } else {
                SpectralField::zeros(u.grid())
            };
            let inst = self.instability;
            out = lin.map_modes(|i, c| (c + psi.coeffs()[i] * (inst * q[i] * q[i])) * chi);
        }
        if dchi != 0.0 {
            let d = 2.0 * dchi * u.h1_inner(psi).expect("same grid");
            out = out.axpy(d, &self.raw_drift(u)).expect("same grid");
        }
        out
    }

    pub fn step_with(&self, u: &SpectralField, forcing: StepForcing<'_>, t: f64) -> Result<SpectralField> {
        let mut next = self.prop.advance(u, &self.drift(u));
        match forcing {
            StepForcing::None => {}
            StepForcing::Noise(n) => {
                let conv = self.conv.as_ref().ok_or_else(|| {
                    Error::InvalidParameter("stepper was built without a noise path".into())
                })?;
                add_into(&mut next, &conv.sample(u.grid(), n));
            }
            StepForcing::Control(wd) => {
                let p = &self.prop;
                let wc = wd.coeffs();
                for (i, c) in next.coeffs_mut().iter_mut().enumerate() {
                    *c += wc[i] * p.phi1dt[i];
                }
            }
        }
        check_finite(next, t + self.dt)
    }

    /// Linear OU part `Z' = AZ + dW` on the same normals.
    pub fn step_linear(&self, z: &SpectralField, normals: &StepNormals) -> SpectralField {
        let mut next = z.map_modes(|i, c| c * self.prop.decay[i]);
        if let Some(conv) = &self.conv {
            add_into(&mut next, &conv.sample(z.grid(), normals));
        }
        next
    }

    /// ETD1 step of the variational equation along `u`; the exact derivative
    /// of [`RegularizedStepper::step_with`] in its state argument.
    pub fn step_tangent(&self, psi: &SpectralField, u: &SpectralField, t: f64) -> Result<SpectralField> {
        check_finite(self.prop.advance(psi, &self.tangent_drift(u, psi)), t + self.dt)
    }

    /// The control that moves `from` to `to` in one step.
    pub fn control_between(&self, from: &SpectralField, to: &SpectralField) -> SpectralField {
        let f = self.drift(from);
        let p = &self.prop;
        to.map_modes(|i, c| (c - from.coeffs()[i] * p.decay[i]) / p.phi1dt[i] - f.coeffs()[i])
    }
}

/// Forcing of a single regularized step.
#[derive(Debug, Clone, Copy)]
pub enum StepForcing<'a> {
    None,
    Noise(&'a StepNormals),
    Control(&'a SpectralField),
}

/// One step of the tangent equation.
pub fn step_tangent(
    psi: &SpectralField,
    u: &SpectralField,
    cutoff: CutoffSpec,
    cfg: &IntegratorConfig,
) -> Result<SpectralField> {
    RegularizedStepper::new(u.grid(), cutoff, None, cfg)?.step_tangent(psi, u, 0.0)
}

/// Result of a regularized run.
#[derive(Debug, Clone)]
pub struct RegularizedRun {
    pub trajectory: Trajectory,
    /// Exit time from the `H1` ball of radius `rho`; `None` if the run never leaves it.
    pub tau_rho: Option<f64>,
    pub max_h1: f64,
}

/// Integrates the cut-off equation. `Z` is stored alongside `u` (zero without noise).
///
/// `tau_rho` is the left endpoint of the first step whose end state has
/// `|u|_{H1} > rho`, and 0 when `|u0|_{H1} > rho`.
pub fn run_regularized(
    u0: &SpectralField,
    cutoff: CutoffSpec,
    forcing: Forcing<'_>,
    cfg: &IntegratorConfig,
) -> Result<RegularizedRun> {
    let path = match forcing {
        Forcing::Noise(p) => Some(p),
        _ => None,
    };
    let stepper = RegularizedStepper::new(u0.grid(), cutoff, path, cfg)?;
    let steps = cfg.steps();
    if let Forcing::Control(c) = forcing {
        if c.wdot.len() < steps {
            return Err(Error::InvalidParameter(format!(
                "control has {} steps, run needs {steps}",
                c.wdot.len()
            )));
        }
    }
    let mut traj = Trajectory::new(path.map(|p| p.seed()), false, true);
    let mut u = u0.clone();
    let mut z = SpectralField::zeros(u0.grid());
    traj.push(0.0, &u, None, Some(&z));
    let mut max_h1 = u.h1_norm_sq().sqrt();
    let mut tau = (max_h1 > cutoff.rho).then_some(0.0);
    for n in 0..steps {
        let t = n as f64 * cfg.dt;
        match forcing {
            Forcing::None => u = stepper.step_with(&u, StepForcing::None, t)?,
            Forcing::Noise(p) => {
                let normals = p.step_normals(n as u64);
                u = stepper.step_with(&u, StepForcing::Noise(&normals), t)?;
                z = stepper.step_linear(&z, &normals);
            }
            Forcing::Control(c) => u = stepper.step_with(&u, StepForcing::Control(&c.wdot[n]), t)?,
        }
        let norm = u.h1_norm_sq().sqrt();
        max_h1 = max_h1.max(norm);
        if tau.is_none() && norm > cutoff.rho {
            tau = Some(t);
        }
        if (n + 1) % cfg.store_every == 0 || n + 1 == steps {
            traj.push((n + 1) as f64 * cfg.dt, &u, None, Some(&z));
        }
    }
    Ok(RegularizedRun {
        trajectory: traj,
        tau_rho: tau,
        max_h1,
    })
}

/// Largest `L2` norm over stored times of
/// `u(t) - e^{tA} u(0) - int_0^t e^{(t-s)A} d_x^2 F(u(s)) ds - Z(t)`,
/// with `d_x^2 F` interpolated linearly between snapshots and the kernel
/// integrated exactly.
pub fn mild_residual(traj: &Trajectory, cutoff: CutoffSpec, cfg: &IntegratorConfig) -> Result<f64> {
    let zs = traj
        .z
        .as_ref()
        .ok_or_else(|| Error::InvalidParameter("trajectory has no Z component".into()))?;
    let Some(u0) = traj.h.first() else {
        return Ok(0.0);
    };
    let grid = u0.grid().clone();
    let stepper = RegularizedStepper::new(&grid, cutoff, None, cfg)?;
    let mu = grid.linear_rates(0.0, false);
    let mut integral = SpectralField::zeros(&grid);
    let mut drift_prev = stepper.drift(u0);
    let mut worst = (&(&traj.h[0] - u0) - &zs[0]).norm_sq_l2().sqrt();
    for m in 1..traj.len() {
        let dt = traj.times[m] - traj.times[m - 1];
        let prop = Propagator::new(&mu, dt);
        let drift = stepper.drift(&traj.h[m]);
        let (a, b) = (drift_prev.coeffs(), drift.coeffs());
        integral = integral.map_modes(|i, c| {
            c * prop.decay[i] + a[i] * prop.phi1dt[i] + (b[i] - a[i]) * prop.phi2dt[i]
        });
        let free = u0.apply_linear_semigroup(traj.times[m], 0.0, false);
        let r = traj.h[m].map_modes(|i, c| c - free.coeffs()[i] - integral.coeffs()[i] - zs[m].coeffs()[i]);
        worst = worst.max(r.norm_sq_l2().sqrt());
        drift_prev = drift;
    }
    Ok(worst)
}

/// Ratio `lambda` with `|x|, |y| <= lambda rho` required by [`steer_control`].
pub const STEERING_BALL: f64 = 0.25;

/// A steering control and its audit.
#[derive(Debug, Clone)]
pub struct Steering {
    pub control: ControlPath,
    /// Planned state at every step, `path[0] = x`, `path[steps] = y`.
    pub path: Vec<SpectralField>,
    pub max_h1: f64,
    pub t_star: f64,
}

/// Builds a control driving the deterministic regularized dynamics from `x`
/// to `y` over `[0, cfg.horizon]`: free evolution up to `T/2`, then linear
/// interpolation to `y`.
pub fn steer_control(
    x: &SpectralField,
    y: &SpectralField,
    cutoff: CutoffSpec,
    cfg: &IntegratorConfig,
) -> Result<Steering> {
    x.grid().check_same(y.grid())?;
    let limit = STEERING_BALL * cutoff.rho;
    for (name, f) in [("x", x), ("y", y)] {
        if !f.is_finite() {
            return Err(Error::InvalidParameter(format!("{name} is not finite")));
        }
        let n = f.h1_norm_sq().sqrt();
        if n > limit {
            return Err(Error::InvalidParameter(format!(
                "|{name}|_H1 = {n} exceeds {STEERING_BALL} rho = {limit}"
            )));
        }
    }
    let stepper = RegularizedStepper::new(x.grid(), cutoff, None, cfg)?;
    let steps = cfg.steps();
    let mid = steps / 2;
    let mut path = Vec::with_capacity(steps + 1);
    path.push(x.clone());
    let mut h = x.clone();
    for n in 0..mid {
        h = stepper.step_with(&h, StepForcing::None, n as f64 * cfg.dt)?;
        path.push(h.clone());
    }
    let h_star = h;
    let span = (steps - mid) as f64;
    for m in 1..=(steps - mid) {
        let s = m as f64 / span;
        path.push(h_star.scale(1.0 - s).axpy(s, y)?);
    }
    let mut wdot = vec![SpectralField::zeros(x.grid()); mid];
    for n in mid..steps {
        wdot.push(stepper.control_between(&path[n], &path[n + 1]));
    }
    let max_h1 = path.iter().map(|f| f.h1_norm_sq().sqrt()).fold(0.0, f64::max);
    if max_h1 > cutoff.rho {
        return Err(Error::Steering(format!(
            "H1 excursion {max_h1} exceeds rho = {}",
            cutoff.rho
        )));
    }
    Ok(Steering {
        control: ControlPath { dt: cfg.dt, wdot },
        path,
        max_h1,
        t_star: mid as f64 * cfg.dt,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rustfft::num_complex::Complex64;
    use crate::noise::{NoiseSpec, OuState, OuStepper};
    use std::f64::consts::PI;

    fn grid(n: usize) -> Arc<Grid> {
        Grid::new(2.0 * PI, n).unwrap()
    }

    fn smooth(g: &Arc<Grid>, amp: f64) -> SpectralField {
        SpectralField::from_coeffs(
            g,
            (1..=g.modes())
                .map(|k| Complex64::new(amp / (k * k) as f64, -0.5 * amp / (k * k * k) as f64))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn linear_deterministic_step_is_the_semigroup() {
        let g = grid(32);
        for inst in [false, true] {
            let cfg = IntegratorConfig::new(0.01, 0.01, inst).unwrap().with_nonlinearity(0.0);
            let h = smooth(&g, 0.3);
            let stepper = FullStepper::new(&NoisePath::new(&g, NoiseSpec::white(&g), 0, 0.01).unwrap(), &cfg).unwrap();
            let next = stepper.step_with(&h, None, 0.0).unwrap();
            let exact = h.apply_linear_semigroup(0.01, 0.0, inst);
            assert!((&next - &exact).norm_sq_l2().sqrt() < 1e-12);
        }
    }

    #[test]
    fn linear_noisy_step_is_the_ou_process() {
        let g = grid(32);
        let path = NoisePath::new(&g, NoiseSpec::white(&g), 5, 0.01).unwrap();
        let cfg = IntegratorConfig::new(0.01, 0.1, false).unwrap().with_nonlinearity(0.0);
        let h = smooth(&g, 0.2);
        let ou = OuStepper::new(&path, 0.0).unwrap();
        let mut z = OuState::new(h.clone(), 0.0).unwrap();
        let mut hh = h;
        for n in 0..10 {
            hh = step_full(&hh, &path, n, &cfg).unwrap();
            z = ou.step(&z, &path, n);
        }
        assert!((&hh - &z.z).norm_sq_l2().sqrt() < 1e-12);
    }

    #[test]
    fn deterministic_full_equation_converges_at_first_order() {
        let g = grid(32);
        let h0 = smooth(&g, 0.5);
        let run = |dt: f64| {
            let cfg = IntegratorConfig::new(dt, 0.5, true).unwrap();
            let stepper = FullStepper::new(&NoisePath::new(&g, NoiseSpec::white(&g), 0, dt).unwrap(), &cfg).unwrap();
            let mut h = h0.clone();
            for n in 0..cfg.steps() {
                h = stepper.step_with(&h, None, n as f64 * dt).unwrap();
            }
            h
        };
        let reference = run(1e-5);
        let e1 = (&run(4e-4) - &reference).norm_sq_l2().sqrt();
        let e2 = (&run(2e-4) - &reference).norm_sq_l2().sqrt();
        assert!(e1 / e2 >= 1.9, "ratio {}", e1 / e2);
    }

    #[test]
    fn v_step_trivial_cases() {
        let g = grid(32);
        let cfg = IntegratorConfig::new(0.01, 0.01, true).unwrap().with_nonlinearity(0.0);
        let z = SpectralField::zeros(&g);
        let v = SpectralField::single_mode(&g, 3, Complex64::new(0.2, 0.1)).unwrap();
        let next = step_v(&v, &z, &z, &cfg).unwrap();
        let mu = -81.0 + 9.0;
        assert!((next.coeffs()[2] - Complex64::new(0.2, 0.1) * (mu * 0.01f64).exp()).norm() < 1e-14);
        let cfg = IntegratorConfig::new(0.01, 0.01, true).unwrap();
        assert_eq!(step_v(&z, &z, &z, &cfg).unwrap(), z);
    }

    #[test]
    fn stable_splitting_reproduces_the_direct_solution() {
        let g = grid(16);
        let path = NoisePath::new(&g, NoiseSpec::white(&g), 3, 1e-3).unwrap();
        let cfg = IntegratorConfig::new(1e-3, 0.2, false).unwrap().with_store_every(50);
        let h0 = smooth(&g, 0.3);
        let direct = run_full(&h0, &path, &cfg).unwrap();
        let split = run_split(&h0, &SpectralField::zeros(&g), 0.0, &path, &cfg).unwrap();
        for (a, b) in direct.h.iter().zip(&split.h) {
            assert!((a - b).norm_sq_l2().sqrt() < 1e-12);
        }
        assert!(split.splitting_defect().unwrap() < 1e-12);
    }

    #[test]
    fn cutoff_shape() {
        let c = CutoffSpec::new(2.0).unwrap();
        assert_eq!(c.chi(0.0), 1.0);
        assert_eq!(c.chi(4.0), 1.0);
        assert_eq!(c.chi(8.0), 0.0);
        assert!((c.chi(6.0) - 0.5).abs() < 1e-15);
        let mut prev = 1.0;
        let mut worst: f64 = 0.0;
        for i in 0..=2000 {
            let zeta = 4.0 + 4.0 * i as f64 / 2000.0;
            let x = c.chi(zeta);
            assert!(x <= prev + 1e-15 && (0.0..=1.0).contains(&x));
            prev = x;
            worst = worst.max(c.chi_prime(zeta).abs() * 4.0);
            let h = 1e-6;
            if zeta > 4.0 + h && zeta < 8.0 - h {
                let fd = (c.chi(zeta + h) - c.chi(zeta - h)) / (2.0 * h);
                assert!((fd - c.chi_prime(zeta)).abs() < 1e-6);
            }
        }
        // rho^2 |chi'| is bounded independently of rho
        assert!(worst < 3.0, "{worst}");
        assert!(CutoffSpec::new(0.0).is_err());
    }

    #[test]
    fn exit_time_is_zero_outside_the_ball() {
        let g = grid(16);
        let u0 = smooth(&g, 5.0);
        let cfg = IntegratorConfig::new(1e-3, 0.01, true).unwrap();
        let run = run_regularized(&u0, CutoffSpec::new(1.0).unwrap(), Forcing::None, &cfg).unwrap();
        assert_eq!(run.tau_rho, Some(0.0));
    }

    #[test]
    fn small_data_never_exits_without_noise() {
        let g = grid(32);
        let rho = 1.0;
        let mut u0 = smooth(&g, 1.0);
        u0 = u0.scale(rho / 8.0 / u0.h1_norm_sq().sqrt());
        let cfg = IntegratorConfig::new(1e-3, 1.0, true).unwrap();
        let run = run_regularized(&u0, CutoffSpec::new(rho).unwrap(), Forcing::None, &cfg).unwrap();
        assert_eq!(run.tau_rho, None);
    }

    #[test]
    fn regularized_matches_full_before_exit() {
        let g = grid(16);
        let u0 = smooth(&g, 0.3);
        let err = |dt: f64| {
            let path = NoisePath::new(&g, NoiseSpec::white(&g), 8, dt).unwrap();
            let cfg = IntegratorConfig::new(dt, 0.2, true).unwrap();
            let reg = run_regularized(&u0, CutoffSpec::new(100.0).unwrap(), Forcing::Noise(&path), &cfg).unwrap();
            let full = run_full(&u0, &path, &cfg).unwrap();
            (&reg.trajectory.h[reg.trajectory.len() - 1] - full.last().unwrap()).norm_sq_l2().sqrt()
        };
        let e = err(1e-3);
        assert!(e < 1e-2, "{e}");
    }

    fn in_transition(g: &Arc<Grid>, cut: CutoffSpec) -> SpectralField {
        let u = smooth(g, 1.0);
        let target = 1.2 * cut.rho * cut.rho;
        let u = u.scale((target / u.h1_norm_sq()).sqrt());
        assert!(cut.chi_prime(u.h1_norm_sq()) < 0.0);
        u
    }

    #[test]
    fn tangent_is_linear_and_trivial_cases_hold() {
        let g = grid(16);
        let cut = CutoffSpec::new(0.9).unwrap();
        let cfg = IntegratorConfig::new(1e-3, 1e-3, true).unwrap();
        let u = in_transition(&g, cut);
        let a = smooth(&g, 0.1).map_modes(|_, c| c * Complex64::new(0.0, 1.0));
        let b = SpectralField::single_mode(&g, 2, Complex64::new(0.3, 0.2)).unwrap();
        let lhs = step_tangent(&a.axpy(2.5, &b).unwrap(), &u, cut, &cfg).unwrap();
        let rhs = step_tangent(&a, &u, cut, &cfg).unwrap().axpy(2.5, &step_tangent(&b, &u, cut, &cfg).unwrap()).unwrap();
        assert!((&lhs - &rhs).norm_sq_l2().sqrt() < 1e-10);
        let zero = SpectralField::zeros(&g);
        assert_eq!(step_tangent(&zero, &u, cut, &cfg).unwrap(), zero);
        let cfg_lin = cfg.clone().with_nonlinearity(0.0);
        let stable = IntegratorConfig { instability: false, ..cfg_lin };
        let small = smooth(&g, 0.01);
        let psi = step_tangent(&b, &small, cut, &stable).unwrap();
        assert!((&psi - &b.apply_linear_semigroup(1e-3, 0.0, false)).norm_sq_l2().sqrt() < 1e-14);
    }

    #[test]
    fn tangent_matches_finite_differences() {
        let g = grid(16);
        let cut = CutoffSpec::new(0.9).unwrap();
        let cfg = IntegratorConfig::new(1e-3, 0.05, true).unwrap();
        let path = NoisePath::new(&g, NoiseSpec::white(&g), 21, 1e-3).unwrap();
        let st = RegularizedStepper::new(&g, cut, Some(&path), &cfg).unwrap();
        let v = in_transition(&g, cut);
        let dir = SpectralField::single_mode(&g, 1, Complex64::new(0.05, 0.0)).unwrap();
        let run = |x: &SpectralField| {
            let mut u = x.clone();
            for n in 0..cfg.steps() {
                u = st.step_with(&u, StepForcing::Noise(&path.step_normals(n as u64)), 0.0).unwrap();
            }
            u
        };
        let mut u = v.clone();
        let mut psi = dir.clone();
        for n in 0..cfg.steps() {
            psi = st.step_tangent(&psi, &u, 0.0).unwrap();
            u = st.step_with(&u, StepForcing::Noise(&path.step_normals(n as u64)), 0.0).unwrap();
        }
        let base = run(&v);
        let errs: Vec<f64> = [1e-3, 1e-4]
            .iter()
            .map(|&eps| {
                let fd = (&run(&v.axpy(eps, &dir).unwrap()) - &base).scale(1.0 / eps);
                (&fd - &psi).norm_sq_l2().sqrt()
            })
            .collect();
        assert!(errs[1] < errs[0] / 5.0 && errs[0] > 1e-8, "{errs:?}");
    }

    #[test]
    fn mild_residual_linear_and_nonlinear() {
        let g = grid(16);
        let cut = CutoffSpec::new(5.0).unwrap();
        let u0 = smooth(&g, 0.5);
        let lin = IntegratorConfig::new(1e-3, 0.2, false).unwrap().with_nonlinearity(0.0);
        let path = NoisePath::new(&g, NoiseSpec::white(&g), 4, 1e-3).unwrap();
        let run = run_regularized(&u0, cut, Forcing::Noise(&path), &lin).unwrap();
        assert!(mild_residual(&run.trajectory, cut, &lin).unwrap() < 1e-10);
        let single = Trajectory { times: vec![0.0], h: vec![u0.clone()], v: None, z: Some(vec![SpectralField::zeros(&g)]), seed: None, config_hash: None };
        assert_eq!(mild_residual(&single, cut, &lin).unwrap(), 0.0);

        let res = |dt: f64| {
            let cfg = IntegratorConfig::new(dt, 0.2, true).unwrap();
            let run = run_regularized(&u0, cut, Forcing::None, &cfg).unwrap();
            mild_residual(&run.trajectory, cut, &cfg).unwrap()
        };
        let ratio = res(2e-3) / res(1e-3);
        assert!((ratio - 2.0).abs() <= 0.4, "ratio {ratio}");
    }

    #[test]
    fn steering_trivial_and_replay() {
        let g = grid(32);
        let cut = CutoffSpec::new(10.0).unwrap();
        let cfg = IntegratorConfig::new(1e-3, 1.0, true).unwrap();
        let zero = SpectralField::zeros(&g);
        let s = steer_control(&zero, &zero, cut, &cfg).unwrap();
        assert!(s.control.is_zero());

        let y = SpectralField::single_mode(&g, 1, Complex64::new(0.005, 0.0)).unwrap();
        let s = steer_control(&zero, &y, cut, &cfg).unwrap();
        let replay = run_regularized(&zero, cut, Forcing::Control(&s.control), &cfg).unwrap();
        let end = replay.trajectory.last().unwrap();
        assert!((end - &y).h1_norm_sq().sqrt() <= 1e-6);
        assert_eq!(replay.tau_rho, None);

        let big = SpectralField::single_mode(&g, 1, Complex64::new(5.0, 0.0)).unwrap();
        assert!(steer_control(&zero, &big, cut, &cfg).is_err());
    }
}
