//! Energy functionals, comparison ODEs and pathwise bounds for the splitting
//! `h = V + Z`.

use std::sync::Arc;

use crate::dynamics::Trajectory;
use crate::error::{Error, Result};
use crate::noise::{phi1, phi2, sample_stationary_ou, derive_seed, NoiseSpec};
use crate::spectral::{pointwise, Grid, Norm, SpectralField};
use crate::stats::trapezoid;

/// Parameters of the energy functional `E_t^alpha`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyModel {
    pub alpha: f64,
    pub instability: bool,
    pub nonlinearity: f64,
}

impl EnergyModel {
    pub fn new(alpha: f64, instability: bool) -> Self {
        EnergyModel { alpha, instability, nonlinearity: 1.0 }
    }
}

/// One sample of `E_t^alpha = kinetic + accum`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyRecord {
    pub t: f64,
    pub kinetic: f64,
    pub accum: f64,
    pub alpha: f64,
}

impl EnergyRecord {
    pub fn energy(&self) -> f64 {
        self.kinetic + self.accum
    }
}

/// `|v_xx|^2 - |v_x|^2 - alpha <v, z> - <v_x, z_x> - c <2 v_x z_x + z_x^2, v_xx>`;
/// the two instability terms drop out in the stable model.
pub fn energy_integrand(v: &SpectralField, z: &SpectralField, model: &EnergyModel) -> Result<f64> {
    v.grid().check_same(z.grid())?;
    let mut out = v.inner_product(v, (2, 2))? - model.alpha * v.inner_product(z, (0, 0))?;
    if model.instability {
        out -= v.inner_product(v, (1, 1))? + v.inner_product(z, (1, 1))?;
    }
    if model.nonlinearity != 0.0 {
        let vx = v.derivative(1)?.synthesize_fine();
        let zx = z.derivative(1)?.synthesize_fine();
        let w: Vec<f64> = vx.iter().zip(&zx).map(|(a, b)| 2.0 * a * b + b * b).collect();
        out -= model.nonlinearity * v.derivative(2)?.inner_product_physical(&w)?;
    }
    Ok(out)
}

/// `E_t^alpha` at every snapshot, time integral by the trapezoidal rule.
pub fn energy_series(
    times: &[f64],
    v_path: &[SpectralField],
    z_path: &[SpectralField],
    model: &EnergyModel,
) -> Result<Vec<EnergyRecord>> {
    if times.len() != v_path.len() || times.len() != z_path.len() {
        return Err(Error::InvalidParameter(format!(
            "misaligned snapshots: {} times, {} V, {} Z",
            times.len(),
            v_path.len(),
            z_path.len()
        )));
    }
    if times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidParameter("snapshot times must increase".into()));
    }
    let mut out = Vec::with_capacity(times.len());
    let mut accum = 0.0;
    let mut prev: Option<f64> = None;
    for (i, (v, z)) in v_path.iter().zip(z_path).enumerate() {
        let f = energy_integrand(v, z, model)?;
        if let Some(p) = prev {
            accum += 0.5 * (times[i] - times[i - 1]) * (p + f);
        }
        prev = Some(f);
        out.push(EnergyRecord {
            t: times[i],
            kinetic: 0.5 * v.norm_sq_l2(),
            accum,
            alpha: model.alpha,
        });
    }
    Ok(out)
}

/// Energy series of a co-evolved trajectory.
pub fn trajectory_energy(traj: &Trajectory, model: &EnergyModel) -> Result<Vec<EnergyRecord>> {
    let v = traj.v.as_ref().ok_or_else(|| Error::InvalidParameter("trajectory has no V".into()))?;
    let z = traj.z.as_ref().ok_or_else(|| Error::InvalidParameter("trajectory has no Z".into()))?;
    energy_series(&traj.times, v, z, model)
}

/// `max_t |E_t - E_0|`.
pub fn energy_drift(records: &[EnergyRecord]) -> f64 {
    let Some(first) = records.first() else { return 0.0 };
    let e0 = first.energy();
    records.iter().map(|r| (r.energy() - e0).abs()).fold(0.0, f64::max)
}

/// A pair of snapshot times with `E_t > E_s + tol`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Violation {
    pub s: f64,
    pub t: f64,
    pub e_s: f64,
    pub e_t: f64,
}

pub fn audit_monotone(records: &[EnergyRecord], tol: f64) -> Vec<Violation> {
    let mut out = Vec::new();
    for (i, rs) in records.iter().enumerate() {
        for rt in &records[i + 1..] {
            if rt.energy() > rs.energy() + tol {
                out.push(Violation { s: rs.t, t: rt.t, e_s: rs.energy(), e_t: rt.energy() });
            }
        }
    }
    out
}

/// Output of [`w_balance`].
#[derive(Debug, Clone)]
pub struct WBalance {
    pub times: Vec<f64>,
    pub w: Vec<SpectralField>,
    pub residual: Vec<f64>,
}

impl WBalance {
    pub fn max_residual(&self) -> f64 {
        self.residual.iter().map(|r| r.abs()).fold(0.0, f64::max)
    }
}

/// Integrates `w' = -w_xxxx - alpha (Z + w)`, `w(0) = z0`, along the given
/// undamped OU snapshots and returns the residual of
/// `1/2 |w(t)|^2 + int_0^t (|w_xx|^2 + alpha <Z + w, w>) - 1/2 |w(0)|^2`.
///
/// The dissipation integral is exact along the free exponential motion
/// between snapshots; the coupling term uses the trapezoidal rule.
pub fn w_balance(z0: &SpectralField, alpha: f64, times: &[f64], z_path: &[SpectralField]) -> Result<WBalance> {
    if times.len() != z_path.len() || times.is_empty() {
        return Err(Error::InvalidParameter("misaligned Z snapshots".into()));
    }
    if !(alpha >= 0.0) {
        return Err(Error::InvalidParameter(format!("alpha must be >= 0, got {alpha}")));
    }
    let grid = z0.grid();
    let mu = grid.linear_rates(alpha, false);
    let q = grid.wavenumbers();
    let two_l = 2.0 * grid.length();
    let coupling = |w: &SpectralField, z: &SpectralField| -> f64 {
        alpha * (z.inner_product(w, (0, 0)).unwrap_or(f64::NAN) + w.norm_sq_l2())
    };
    let mut w = z0.clone();
    let half0 = 0.5 * z0.norm_sq_l2();
    let mut ws = vec![w.clone()];
    let mut residual = vec![0.0];
    let mut integral = 0.0;
    let mut prev_coupling = coupling(&w, &z_path[0]);
    for m in 1..times.len() {
        let dt = times[m] - times[m - 1];
        let dissipation: f64 = w
            .coeffs()
            .iter()
            .zip(q)
            .zip(&mu)
            .map(|((c, q), m)| two_l * q.powi(4) * c.norm_sqr() * dt * phi1(2.0 * m * dt))
            .sum();
        let (z0c, z1c) = (z_path[m - 1].coeffs(), z_path[m].coeffs());
        w = w.map_modes(|i, c| {
            let z = mu[i] * dt;
            c * z.exp() - (z0c[i] * dt * phi1(z) + (z1c[i] - z0c[i]) * dt * phi2(z)) * alpha
        });
        let cpl = coupling(&w, &z_path[m]);
        integral += dissipation + 0.5 * dt * (prev_coupling + cpl);
        prev_coupling = cpl;
        residual.push(0.5 * w.norm_sq_l2() + integral - half0);
        ws.push(w.clone());
    }
    Ok(WBalance { times: times.to_vec(), w: ws, residual })
}

/// Raw norms of `Z~` along a path, from which `a`, `b`, `theta` follow.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientPath {
    pub times: Vec<f64>,
    /// `|Z~_x|_{L4}`.
    pub zx_l4: Vec<f64>,
    /// `|Z~|_{L2}`.
    pub z_l2: Vec<f64>,
    pub alpha: f64,
    pub c: f64,
    pub c_star: f64,
}

/// Default for the unquantified constants `C` and `C_*`; audits report the
/// smallest value that passes.
pub const DEFAULT_CONSTANT: f64 = 1.0;

impl CoefficientPath {
    pub fn from_fields(times: &[f64], z: &[SpectralField], alpha: f64) -> Result<Self> {
        if times.len() != z.len() {
            return Err(Error::InvalidParameter("misaligned Z snapshots".into()));
        }
        let mut zx_l4 = Vec::with_capacity(z.len());
        for f in z {
            zx_l4.push(f.derivative(1)?.norm(Norm::L4)?);
        }
        Ok(CoefficientPath {
            times: times.to_vec(),
            zx_l4,
            z_l2: z.iter().map(|f| f.norm_sq_l2().sqrt()).collect(),
            alpha,
            c: DEFAULT_CONSTANT,
            c_star: DEFAULT_CONSTANT,
        })
    }

    pub fn with_constants(mut self, c: f64, c_star: f64) -> Self {
        self.c = c;
        self.c_star = c_star;
        self
    }

    /// `a(t) = C |Z~_x|^{16/3}_{L4}`.
    pub fn a(&self) -> Vec<f64> {
        self.zx_l4.iter().map(|x| self.c * x.powf(16.0 / 3.0)).collect()
    }

    /// `b(t) = C (|Z~_x|^4_{L4} + alpha^2 |Z~|^2_{L2})`.
    pub fn b(&self) -> Vec<f64> {
        self.zx_l4
            .iter()
            .zip(&self.z_l2)
            .map(|(x, z)| self.c * (x.powi(4) + self.alpha.powi(2) * z * z))
            .collect()
    }

    /// `a* = 2a`.
    pub fn a_star(&self) -> Vec<f64> {
        self.a().iter().map(|a| 2.0 * a).collect()
    }

    /// `b* = b^2 / lambda`, the constant from `2ub <= lambda u^2 + b^2 / lambda`.
    pub fn b_star(&self, lambda: f64) -> Vec<f64> {
        self.b().iter().map(|b| b * b / lambda).collect()
    }

    /// `theta(t) = C_* (|Z~_x|^{16/3}_{L4} + |Z~_x|^8_{L4} + |Z~|^4_{L2})`.
    pub fn theta(&self) -> Vec<f64> {
        self.zx_l4
            .iter()
            .zip(&self.z_l2)
            .map(|(x, z)| self.c_star * (x.powf(16.0 / 3.0) + x.powi(8) + z.powi(4)))
            .collect()
    }
}

fn check_coefficients(times: &[f64], a: &[f64], b: &[f64]) -> Result<()> {
    if times.len() != a.len() || times.len() != b.len() || times.is_empty() {
        return Err(Error::InvalidParameter("coefficient paths must align with times".into()));
    }
    if b.iter().any(|x| !(*x >= 0.0)) {
        return Err(Error::InvalidParameter("b must be nonnegative".into()));
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidParameter("a must be finite".into()));
    }
    Ok(())
}

/// Solves `u' + (lambda - a) u = b` exactly for coefficients held at their
/// interval midpoint averages.
pub fn solve_comparison(u0: f64, times: &[f64], a: &[f64], b: &[f64], lambda: f64) -> Result<Vec<f64>> {
    check_coefficients(times, a, b)?;
    if !(u0 >= 0.0) {
        return Err(Error::InvalidParameter(format!("u0 must be >= 0, got {u0}")));
    }
    let mut u = Vec::with_capacity(times.len());
    u.push(u0);
    let mut cur = u0;
    for j in 1..times.len() {
        let dt = times[j] - times[j - 1];
        let growth = 0.5 * (a[j - 1] + a[j]) - lambda;
        let force = 0.5 * (b[j - 1] + b[j]);
        cur = cur * (growth * dt).exp() + force * dt * phi1(growth * dt);
        u.push(cur);
    }
    Ok(u)
}

/// `u0 e^{int_0^T a} + int_0^T b(s) e^{int_s^T a} ds` for the same piecewise
/// constant data as [`solve_comparison`] (with `lambda` folded into `a`).
pub fn gronwall_bound(u0: f64, times: &[f64], a: &[f64], b: &[f64]) -> Result<f64> {
    check_coefficients(times, a, b)?;
    let mut bound = u0;
    for j in 1..times.len() {
        let dt = times[j] - times[j - 1];
        let g = 0.5 * (a[j - 1] + a[j]);
        bound = bound * (g * dt).exp() + 0.5 * (b[j - 1] + b[j]) * dt * phi1(g * dt);
    }
    Ok(bound)
}

/// Pathwise audit of the `V` bounds along a co-evolved stable trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct VBoundReport {
    pub c: f64,
    /// `sup_t |V|^2 + int |V_xx|^2`.
    pub lhs: f64,
    /// `C exp(C int |Z|^{16/3}_{W14}) (|V(0)|^2 + int |Z|^4_{W14})`.
    pub rhs: f64,
    /// `max_t [|V(t)|^2 + int_0^t (lambda - a)|V|^2 - |V(0)|^2 - int_0^t b]`.
    pub premise_excess: f64,
    /// `max_t (|V(t)|^2 - u(t))`.
    pub comparison_excess: f64,
    /// `max_t (u(t)^2 - u*(t))`.
    pub u_star_excess: f64,
}

impl VBoundReport {
    pub fn passes(&self) -> bool {
        self.lhs <= self.rhs && self.comparison_excess <= 0.0 && self.u_star_excess <= 0.0
    }
}

fn tz(traj: &Trajectory) -> Result<(&[SpectralField], &[SpectralField])> {
    let v = traj.v.as_deref().ok_or_else(|| Error::InvalidParameter("trajectory has no V".into()))?;
    let z = traj.z.as_deref().ok_or_else(|| Error::InvalidParameter("trajectory has no Z".into()))?;
    Ok((v, z))
}

/// Norm data of a trajectory reused across constants.
#[derive(Debug, Clone)]
pub struct VBoundData {
    pub times: Vec<f64>,
    pub v_sq: Vec<f64>,
    pub vxx_sq: Vec<f64>,
    pub z_w14: Vec<f64>,
    pub coefficients: CoefficientPath,
}

impl VBoundData {
    pub fn new(traj: &Trajectory, alpha: f64) -> Result<Self> {
        let (v, z) = tz(traj)?;
        let mut z_w14 = Vec::with_capacity(z.len());
        for f in z {
            z_w14.push(f.norm(Norm::W14)?);
        }
        Ok(VBoundData {
            times: traj.times.clone(),
            v_sq: v.iter().map(SpectralField::norm_sq_l2).collect(),
            vxx_sq: v.iter().map(|f| f.inner_product(f, (2, 2)).unwrap_or(f64::NAN)).collect(),
            z_w14,
            coefficients: CoefficientPath::from_fields(&traj.times, z, alpha)?,
        })
    }

    /// `u(t)` with constant `c`.
    pub fn comparison(&self, c: f64, lambda: f64) -> Result<Vec<f64>> {
        let coef = self.coefficients.clone().with_constants(c, c);
        solve_comparison(self.v_sq[0], &self.times, &coef.a(), &coef.b(), lambda)
    }

    pub fn comparison_excess(&self, c: f64, lambda: f64) -> Result<f64> {
        let u = self.comparison(c, lambda)?;
        Ok(self.v_sq.iter().zip(&u).map(|(v, u)| v - u).fold(f64::NEG_INFINITY, f64::max))
    }

    pub fn report(&self, c: f64, lambda: f64) -> Result<VBoundReport> {
        let coef = self.coefficients.clone().with_constants(c, c);
        let (a, b) = (coef.a(), coef.b());
        let t = &self.times;
        let sup_v = self.v_sq.iter().cloned().fold(0.0, f64::max);
        let lhs = sup_v + trapezoid(t, &self.vxx_sq);
        let e1 = trapezoid(t, &self.z_w14.iter().map(|x| x.powf(16.0 / 3.0)).collect::<Vec<_>>());
        let e2 = trapezoid(t, &self.z_w14.iter().map(|x| x.powi(4)).collect::<Vec<_>>());
        let rhs = c * (c * e1).exp() * (self.v_sq[0] + e2);

        let mut premise_excess = f64::NEG_INFINITY;
        let mut int_av = 0.0;
        let mut int_b = 0.0;
        for j in 0..t.len() {
            if j > 0 {
                let dt = t[j] - t[j - 1];
                int_av += 0.5 * dt * ((lambda - a[j - 1]) * self.v_sq[j - 1] + (lambda - a[j]) * self.v_sq[j]);
                int_b += 0.5 * dt * (b[j - 1] + b[j]);
            }
            premise_excess = premise_excess.max(self.v_sq[j] + int_av - self.v_sq[0] - int_b);
        }
        let u = solve_comparison(self.v_sq[0], t, &a, &b, lambda)?;
        let u_star = solve_comparison(self.v_sq[0].powi(2), t, &coef.a_star(), &coef.b_star(lambda), lambda)?;
        Ok(VBoundReport {
            c,
            lhs,
            rhs,
            premise_excess,
            comparison_excess: self.v_sq.iter().zip(&u).map(|(v, u)| v - u).fold(f64::NEG_INFINITY, f64::max),
            u_star_excess: u.iter().zip(&u_star).map(|(u, s)| u * u - s).fold(f64::NEG_INFINITY, f64::max),
        })
    }

    /// Smallest `c` in `[lo, hi]` with `|V(t)|^2 <= u(t)` at every snapshot,
    /// by bisection in `log c`; `None` if `hi` fails.
    pub fn smallest_comparison_constant(&self, lambda: f64, lo: f64, hi: f64) -> Result<Option<f64>> {
        if self.comparison_excess(hi, lambda)? > 0.0 {
            return Ok(None);
        }
        if self.comparison_excess(lo, lambda)? <= 0.0 {
            return Ok(Some(lo));
        }
        let (mut a, mut b) = (lo.ln(), hi.ln());
        for _ in 0..60 {
            let m = 0.5 * (a + b);
            if self.comparison_excess(m.exp(), lambda)? <= 0.0 {
                b = m;
            } else {
                a = m;
            }
        }
        Ok(Some(b.exp()))
    }
}

pub fn vbound_check(traj: &Trajectory, alpha: f64, c: f64, lambda: f64) -> Result<VBoundReport> {
    VBoundData::new(traj, alpha)?.report(c, lambda)
}

/// `||d_t V||_{L2 H^-3}` against `||V||_{L2 H2} (1 + ||V||_{Linf L2}) + ||Z||_{L4 H1}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TderVReport {
    pub lhs: f64,
    /// Right-hand side with unit constant.
    pub rhs_unit: f64,
}

impl TderVReport {
    pub fn ratio(&self) -> f64 {
        self.lhs / self.rhs_unit
    }
}

pub fn tder_v_bound(traj: &Trajectory) -> Result<TderVReport> {
    let (v, z) = tz(traj)?;
    let t = &traj.times;
    if t.len() < 3 {
        return Err(Error::InsufficientData("time derivative needs >= 3 snapshots".into()));
    }
    let mut dv = Vec::with_capacity(t.len() - 2);
    for m in 1..t.len() - 1 {
        let d = (&v[m + 1] - &v[m - 1]).scale(1.0 / (t[m + 1] - t[m - 1]));
        dv.push(d.sobolev_norm_sq(-3.0)?);
    }
    let lhs = trapezoid(&t[1..t.len() - 1], &dv).sqrt();
    let mut h2 = Vec::with_capacity(t.len());
    let mut z4 = Vec::with_capacity(t.len());
    for (vf, zf) in v.iter().zip(z) {
        h2.push(vf.sobolev_norm_sq(2.0)?);
        z4.push(zf.h1_norm_sq().powi(2));
    }
    let sup_l2 = v.iter().map(|f| f.norm_sq_l2().sqrt()).fold(0.0, f64::max);
    let rhs_unit = trapezoid(t, &h2).sqrt() * (1.0 + sup_l2) + trapezoid(t, &z4).powf(0.25);
    Ok(TderVReport { lhs, rhs_unit })
}

/// Result of the adaptive damping search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlphaChoice {
    pub alpha: f64,
    pub mean_theta: f64,
}

/// Smallest `alpha` in `start * 2^j` whose stationary `E[theta] <= lambda / 4`,
/// estimated from `samples` stationary draws.
pub fn adaptive_alpha(
    spec: &NoiseSpec,
    grid: &Arc<Grid>,
    c_star: f64,
    start: f64,
    samples: usize,
    seed: u64,
) -> Result<AlphaChoice> {
    if !(start > 0.0) || samples == 0 {
        return Err(Error::InvalidParameter("start must be > 0 and samples >= 1".into()));
    }
    let lambda = grid.poincare_lambda();
    let mut alpha = start;
    for _ in 0..60 {
        let mut total = 0.0;
        for i in 0..samples {
            let z = sample_stationary_ou(spec, grid, alpha, derive_seed(seed, i as u64))?;
            let coef = CoefficientPath::from_fields(&[0.0], std::slice::from_ref(&z), alpha)?
                .with_constants(c_star, c_star);
            total += coef.theta()[0];
        }
        let mean = total / samples as f64;
        if mean <= lambda / 4.0 {
            return Ok(AlphaChoice { alpha, mean_theta: mean });
        }
        alpha *= 2.0;
    }
    Err(Error::InvalidParameter("no damping up to 2^60 meets E[theta] <= lambda / 4".into()))
}

/// `<a, b c>` triple product on the refined grid; exported for diagnostics.
pub fn triple_product(a: &SpectralField, b: &SpectralField, c: &SpectralField) -> Result<f64> {
    a.grid().check_same(b.grid())?;
    a.inner_product_physical(&pointwise(&b.synthesize_fine(), &c.synthesize_fine()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{run_split, IntegratorConfig};
    use crate::noise::{NoisePath, OuStepper};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rustfft::num_complex::Complex64;
    use std::f64::consts::PI;

    fn grid(n: usize) -> Arc<Grid> {
        Grid::new(2.0 * PI, n).unwrap()
    }

    #[test]
    fn zero_v_has_zero_energy() {
        let g = grid(16);
        let z = SpectralField::single_mode(&g, 2, Complex64::new(0.3, 0.1)).unwrap();
        let v = SpectralField::zeros(&g);
        let rec = energy_series(&[0.0, 0.5], &[v.clone(), v], &[z.clone(), z], &EnergyModel::new(1.0, true)).unwrap();
        assert!(rec.iter().all(|r| r.energy() == 0.0));
    }

    #[test]
    fn misaligned_snapshots_are_rejected() {
        let g = grid(16);
        let v = SpectralField::zeros(&g);
        assert!(energy_series(&[0.0, 1.0], std::slice::from_ref(&v), std::slice::from_ref(&v), &EnergyModel::new(0.0, true)).is_err());
    }

    #[test]
    fn linear_single_mode_closed_form() {
        // v = e^{At} v0 on mode k: E_t = 1/2|v0|^2 e^{2 lambda t} + (q^4 - q^2) int |v|^2
        let g = grid(16);
        let k = 2;
        let q4 = 16.0;
        let q2 = 4.0;
        let v0 = SpectralField::single_mode(&g, k, Complex64::new(0.2, 0.0)).unwrap();
        let dt = 1e-5;
        let times: Vec<f64> = (0..=20000).map(|i| i as f64 * dt).collect();
        let vs: Vec<SpectralField> = times.iter().map(|&t| v0.apply_linear_semigroup(t, 0.0, false)).collect();
        let zs = vec![SpectralField::zeros(&g); times.len()];
        let rec = energy_series(&times, &vs, &zs, &EnergyModel::new(0.0, true)).unwrap();
        let n0 = v0.norm_sq_l2();
        for r in rec.iter().step_by(2000) {
            let decay = (-2.0 * q4 * r.t).exp();
            let exact = 0.5 * n0 * decay + (q4 - q2) * n0 * (1.0 - decay) / (2.0 * q4);
            assert!((r.energy() - exact).abs() < 1e-8, "t={} {} vs {}", r.t, r.energy(), exact);
        }
    }

    #[test]
    fn alpha_zero_reduces_to_plain_energy() {
        let g = grid(16);
        let v = SpectralField::single_mode(&g, 1, Complex64::new(0.2, 0.1)).unwrap();
        let z = SpectralField::single_mode(&g, 1, Complex64::new(-0.1, 0.3)).unwrap();
        let a = energy_integrand(&v, &z, &EnergyModel::new(0.0, true)).unwrap();
        let b = energy_integrand(&v, &z, &EnergyModel { alpha: 0.0, instability: true, nonlinearity: 1.0 }).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn galerkin_energy_error_shrinks_with_dt() {
        let g = grid(16);
        let spec = NoiseSpec::decaying(&g, 2.0, None).unwrap();
        let drift = |dt: f64| {
            let cfg = IntegratorConfig::new(dt, 0.5, true).unwrap();
            let h0 = SpectralField::single_mode(&g, 1, Complex64::new(0.2, 0.0)).unwrap();
            (0..4)
                .map(|seed| {
                    let path = NoisePath::with_substeps(&g, spec.clone(), seed, dt, (dt / 2.5e-5).round() as usize).unwrap();
                    let traj = run_split(&h0, &SpectralField::zeros(&g), 0.0, &path, &cfg).unwrap();
                    energy_drift(&trajectory_energy(&traj, &EnergyModel::new(0.0, true)).unwrap())
                })
                .sum::<f64>()
        };
        let (e1, e2) = (drift(2e-4), drift(1e-4));
        assert!(e2 < e1 / 1.8, "{e1} {e2}");
    }

    fn rec(es: &[f64]) -> Vec<EnergyRecord> {
        es.iter().enumerate().map(|(i, &e)| EnergyRecord { t: i as f64, kinetic: e, accum: 0.0, alpha: 0.0 }).collect()
    }

    #[test]
    fn audit_monotone_trivial_cases() {
        assert!(audit_monotone(&rec(&[1.0, 1.0, 1.0]), 0.0).is_empty());
        let v = audit_monotone(&rec(&[1.0, 2.0, 3.0]), 0.0);
        assert_eq!(v.len(), 3);
        assert!(v.iter().any(|x| x.s == 0.0 && x.t == 1.0) && v.iter().any(|x| x.s == 1.0 && x.t == 2.0));
        assert!(audit_monotone(&rec(&[1.0, 1.05]), 0.1).is_empty());
    }

    fn ou_path(g: &Arc<Grid>, dt: f64, steps: usize, seed: u64, substeps: usize) -> (Vec<f64>, Vec<SpectralField>) {
        let path = NoisePath::with_substeps(g, NoiseSpec::white(g), seed, dt, substeps).unwrap();
        let ou = OuStepper::new(&path, 0.0).unwrap();
        let mut z = SpectralField::zeros(g);
        let mut zs = vec![z.clone()];
        for n in 0..steps {
            z = ou.step_with(&z, &path.step_normals(n as u64));
            zs.push(z.clone());
        }
        ((0..=steps).map(|i| i as f64 * dt).collect(), zs)
    }

    #[test]
    fn w_balance_trivial_and_closed_form() {
        let g = grid(16);
        let (t, zs) = ou_path(&g, 1e-3, 500, 1, 1);
        let zero = w_balance(&SpectralField::zeros(&g), 0.0, &t, &zs).unwrap();
        assert_eq!(zero.max_residual(), 0.0);
        let z0 = SpectralField::single_mode(&g, 1, Complex64::new(0.5, 0.0)).unwrap();
        let wb = w_balance(&z0, 0.0, &t, &zs).unwrap();
        assert!(wb.max_residual() <= 1e-8, "{}", wb.max_residual());
        let last = z0.apply_linear_semigroup(0.5, 0.0, false);
        assert!((wb.w.last().unwrap() - &last).norm_sq_l2() < 1e-24);
    }

    #[test]
    fn w_balance_residual_converges() {
        let g = grid(16);
        let z0 = SpectralField::from_coeffs(&g, (1..=g.modes()).map(|k| Complex64::new(0.3 / k as f64, 0.1)).collect()).unwrap();
        let res = |dt: f64, sub: usize| {
            let steps = (0.5 / dt).round() as usize;
            let (t, zs) = ou_path(&g, dt, steps, 3, sub);
            w_balance(&z0, 1.0, &t, &zs).unwrap().max_residual()
        };
        let (r1, r2) = (res(2e-3, 2), res(1e-3, 1));
        assert!(r2 <= r1 / 1.6, "{r1} {r2}");
    }

    #[test]
    fn comparison_trivial_cases() {
        let t: Vec<f64> = (0..=100).map(|i| i as f64 * 0.01).collect();
        let zero = vec![0.0; t.len()];
        let lam = 2.0;
        let u = solve_comparison(3.0, &t, &zero, &zero, lam).unwrap();
        assert!((u.last().unwrap() - 3.0 * (-2.0f64).exp()).abs() < 1e-12);
        let u = solve_comparison(3.0, &t, &vec![lam; t.len()], &vec![1.0; t.len()], lam).unwrap();
        assert!((u.last().unwrap() - 4.0).abs() < 1e-12);
        assert_eq!(gronwall_bound(2.0, &t, &zero, &zero).unwrap(), 2.0);
        let g = gronwall_bound(2.0, &t, &vec![0.7; t.len()], &zero).unwrap();
        assert!((g - 2.0 * 0.7f64.exp()).abs() < 1e-12);
        assert!(solve_comparison(1.0, &t, &zero, &vec![-1.0; t.len()], lam).is_err());
    }

    fn rk4(u0: f64, t: &[f64], a: &[f64], b: &[f64], slack: impl Fn(f64) -> f64, sub: usize) -> f64 {
        let mut u = u0;
        for j in 1..t.len() {
            let h = (t[j] - t[j - 1]) / sub as f64;
            let (aa, bb) = (0.5 * (a[j - 1] + a[j]), 0.5 * (b[j - 1] + b[j]));
            let mut s = t[j - 1];
            let f = |s: f64, u: f64| aa * u + bb - slack(s);
            for _ in 0..sub {
                let k1 = f(s, u);
                let k2 = f(s + h / 2.0, u + h / 2.0 * k1);
                let k3 = f(s + h / 2.0, u + h / 2.0 * k2);
                let k4 = f(s + h, u + h * k3);
                u += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
                s += h;
            }
        }
        u
    }

    #[test]
    fn gronwall_dominates_brute_force_solutions() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..100 {
            let n = 20;
            let t: Vec<f64> = (0..=n).map(|i| i as f64 * 0.1).collect();
            let a: Vec<f64> = (0..=n).map(|_| rng.random_range(-3.0..2.0)).collect();
            let b: Vec<f64> = (0..=n).map(|_| rng.random_range(0.0..1.5)).collect();
            let u0 = rng.random_range(0.0..2.0);
            let amp = rng.random_range(0.0..0.5);
            let bound = gronwall_bound(u0, &t, &a, &b).unwrap();
            let exact = rk4(u0, &t, &a, &b, |_| 0.0, 50);
            assert!((bound - exact).abs() <= 1e-8 * bound.max(1.0));
            let slackened = rk4(u0, &t, &a, &b, |s| amp * (1.0 + (3.0 * s).sin()), 50);
            assert!(slackened <= bound * (1.0 + 1e-10));
        }
    }

    #[test]
    fn comparison_is_monotone_in_data() {
        let t: Vec<f64> = (0..=50).map(|i| i as f64 * 0.02).collect();
        let a: Vec<f64> = t.iter().map(|s| (5.0 * s).sin()).collect();
        let b1: Vec<f64> = t.iter().map(|s| s * s).collect();
        let b2: Vec<f64> = b1.iter().map(|x| x + 0.1).collect();
        let u1 = solve_comparison(1.0, &t, &a, &b1, 1.0).unwrap();
        let u2 = solve_comparison(1.0, &t, &a, &b2, 1.0).unwrap();
        let u3 = solve_comparison(1.5, &t, &a, &b1, 1.0).unwrap();
        for i in 0..t.len() {
            assert!(u2[i] >= u1[i] && u3[i] >= u1[i]);
        }
    }

    #[test]
    fn vbound_trivial_and_decay_cases() {
        let g = grid(16);
        let path = NoisePath::new(&g, NoiseSpec::white(&g), 0, 1e-3).unwrap();
        let cfg = IntegratorConfig::new(1e-3, 0.2, false).unwrap().with_store_every(10);
        let zero = SpectralField::zeros(&g);
        let traj = crate::dynamics::Trajectory {
            times: vec![0.0, 0.1, 0.2],
            h: vec![zero.clone(); 3],
            v: Some(vec![zero.clone(); 3]),
            z: Some(vec![zero.clone(); 3]),
            seed: None,
            config_hash: None,
        };
        let r = vbound_check(&traj, 0.0, 1.0, g.poincare_lambda()).unwrap();
        assert!(r.lhs <= r.rhs && r.passes());

        // noise off: V decays linearly, u solves the same ODE with a = b = 0
        let h0 = SpectralField::single_mode(&g, 1, Complex64::new(0.3, 0.0)).unwrap();
        let mut traj = run_split(&h0, &zero, 0.0, &path, &cfg.clone().with_nonlinearity(0.0)).unwrap();
        traj.z = Some(vec![zero.clone(); traj.len()]);
        traj.v = Some(traj.times.iter().map(|&t| h0.apply_linear_semigroup(t, 0.0, false)).collect());
        let r = vbound_check(&traj, 0.0, 1.0, g.poincare_lambda()).unwrap();
        assert!(r.comparison_excess <= 1e-15, "{}", r.comparison_excess);
    }

    #[test]
    fn smallest_constant_is_found_by_bisection() {
        let g = grid(16);
        let path = NoisePath::new(&g, NoiseSpec::white(&g), 5, 1e-3).unwrap();
        let cfg = IntegratorConfig::new(1e-3, 1.0, false).unwrap().with_store_every(10);
        let z0 = crate::noise::sample_stationary_ou(&NoiseSpec::white(&g), &g, 1.0, 5).unwrap();
        let traj = run_split(&SpectralField::zeros(&g), &z0, 1.0, &path, &cfg).unwrap();
        let data = VBoundData::new(&traj, 1.0).unwrap();
        let c = data.smallest_comparison_constant(1.0, 1e-6, 1e6).unwrap().unwrap();
        assert!(data.comparison_excess(c, 1.0).unwrap() <= 0.0);
        if c > 1e-6 {
            assert!(data.comparison_excess(c * 0.99, 1.0).unwrap() > 0.0);
        }
    }

    #[test]
    fn tder_v_static_and_linear_decay() {
        let g = grid(16);
        let v0 = SpectralField::single_mode(&g, 1, Complex64::new(0.3, 0.0)).unwrap();
        let zero = SpectralField::zeros(&g);
        let mk = |vs: Vec<SpectralField>, times: Vec<f64>| crate::dynamics::Trajectory {
            h: vs.clone(),
            z: Some(vec![zero.clone(); vs.len()]),
            v: Some(vs),
            times,
            seed: None,
            config_hash: None,
        };
        let t: Vec<f64> = (0..=1000).map(|i| i as f64 * 1e-3).collect();
        let r = tder_v_bound(&mk(vec![v0.clone(); t.len()], t.clone())).unwrap();
        assert_eq!(r.lhs, 0.0);
        let vs: Vec<SpectralField> = t.iter().map(|&s| v0.apply_linear_semigroup(s, 0.0, false)).collect();
        let r = tder_v_bound(&mk(vs, t.clone())).unwrap();
        // |d_t v|^2_{H^-3} = |v0|^2 2^{-3} e^{-2t} on mode 1; integrate over [t_1, t_{M-1}]
        let (a, b) = (t[1], t[t.len() - 2]);
        let exact = (v0.norm_sq_l2() / 8.0 * ((-2.0 * a).exp() - (-2.0 * b).exp()) / 2.0).sqrt();
        assert!((r.lhs - exact).abs() < 1e-6 * exact, "{} {}", r.lhs, exact);
        assert!(tder_v_bound(&mk(vec![v0.clone(); 2], vec![0.0, 1.0])).is_err());
    }

    #[test]
    fn adaptive_alpha_meets_the_threshold() {
        let g = grid(16);
        let spec = NoiseSpec::white(&g);
        let choice = adaptive_alpha(&spec, &g, 1.0, 0.25, 400, 1).unwrap();
        assert!(choice.mean_theta <= g.poincare_lambda() / 4.0);
        if choice.alpha > 0.25 {
            let prev = adaptive_alpha(&spec, &g, 1.0, choice.alpha / 2.0, 400, 1).unwrap();
            assert_eq!(prev.alpha, choice.alpha);
        }
    }

    #[test]
    fn triple_product_matches_spectral_form() {
        let g = grid(16);
        let u = SpectralField::single_mode(&g, 2, Complex64::new(0.5, 0.0)).unwrap();
        let v = SpectralField::single_mode(&g, 1, Complex64::new(0.5, 0.0)).unwrap();
        // <cos 2x, cos x cos x> = pi / 2
        assert!((triple_product(&u, &v, &v).unwrap() - PI / 2.0).abs() < 1e-12);
    }
}
