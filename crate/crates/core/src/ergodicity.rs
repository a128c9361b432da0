//! Time-averaged laws of the stable equation, tail audits, uniqueness probes,
//! the `u**` excursion bound and the concave moment construction.

use std::sync::Arc;

use rayon::prelude::*;

use crate::energy::{solve_comparison, CoefficientPath};
use crate::error::{Error, Result};
use crate::markov::{Ensemble, Functional};
use crate::noise::{derive_seed, sample_stationary_ou, NoisePath, NoiseSpec, OuStepper};
use crate::spectral::{Grid, Norm, SpectralField};
use crate::stats::{ks_two_sample, quantile, KsResult, Summary};

/// Admissible range for the tail-norm exponent.
pub const GAMMA_RANGE: (f64, f64) = (1.25, 1.5);

#[derive(Debug, Clone, PartialEq)]
pub struct ErgodicityConfig {
    pub gamma: f64,
    pub t_grid: Vec<f64>,
    pub burn_in: f64,
    pub r_grid: Vec<f64>,
    /// Damping of the auxiliary OU process.
    pub alpha: f64,
    pub functionals: Vec<Functional>,
    /// Paths per seed block.
    pub paths: usize,
    /// Snapshot spacing in steps.
    pub sample_every: usize,
    pub tail_eps: f64,
}

impl ErgodicityConfig {
    pub fn new(gamma: f64, t_grid: Vec<f64>) -> Result<Self> {
        let cfg = ErgodicityConfig {
            gamma,
            t_grid,
            burn_in: 0.0,
            r_grid: vec![1.0, 2.0, 4.0, 8.0, 16.0],
            alpha: 1.0,
            functionals: vec![
                Functional::norm(Norm::L2, 1.0, false),
                Functional::norm(Norm::Sobolev(1.0), 1.0, false),
                Functional::mode(1, 1.0, false),
                Functional::mode(2, 1.0, false),
            ],
            paths: 8,
            sample_every: 10,
            tail_eps: 0.05,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > GAMMA_RANGE.0 && self.gamma < GAMMA_RANGE.1) {
            return Err(Error::InvalidParameter(format!(
                "gamma must lie in (5/4, 3/2), got {}",
                self.gamma
            )));
        }
        if self.t_grid.is_empty() || self.t_grid.iter().any(|t| !(*t > 0.0)) {
            return Err(Error::InvalidParameter("T-grid must be nonempty and positive".into()));
        }
        if self.paths == 0 || self.sample_every == 0 {
            return Err(Error::InvalidParameter("paths and sample_every must be >= 1".into()));
        }
        if !(self.burn_in >= 0.0) || !(self.alpha >= 0.0) {
            return Err(Error::InvalidParameter("burn-in and alpha must be >= 0".into()));
        }
        Ok(())
    }

    /// The recorded functionals: `|.|_{H^gamma}` first, then the configured set.
    pub fn recorded(&self) -> Vec<Functional> {
        let mut f = vec![Functional {
            name: "hgamma".into(),
            ..Functional::norm(Norm::Sobolev(self.gamma), 1.0, false)
        }];
        f.extend(self.functionals.iter().cloned());
        f
    }
}

/// Functional samples of `mu_T`, equally weighted over paths and snapshots.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMeasure {
    pub t: f64,
    /// Time between snapshots.
    pub sample_dt: f64,
    /// Time of the first snapshot kept.
    pub origin: f64,
    pub names: Vec<String>,
    /// `[path][functional][snapshot]`.
    pub samples: Vec<Vec<Vec<f64>>>,
}

impl EmpiricalMeasure {
    pub fn paths(&self) -> usize {
        self.samples.len()
    }

    pub fn snapshots(&self) -> usize {
        self.samples.first().and_then(|p| p.first()).map_or(0, Vec::len)
    }

    pub fn weights(&self) -> Vec<f64> {
        let n = self.paths() * self.snapshots();
        vec![1.0 / n as f64; n]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// All samples of functional `j`.
    pub fn values(&self, j: usize) -> Vec<f64> {
        self.samples.iter().flat_map(|p| p[j].iter().copied()).collect()
    }

    /// `int f^p d mu_T` with a standard error from the spread of per-path averages.
    pub fn moment(&self, j: usize, p: i32) -> Summary {
        let per_path: Vec<f64> = self
            .samples
            .iter()
            .map(|s| s[j].iter().map(|v| v.powi(p)).sum::<f64>() / s[j].len() as f64)
            .collect();
        Summary::of(&per_path)
    }

    /// `mu_T[f > r]`.
    pub fn tail(&self, j: usize, r: f64) -> f64 {
        let v = self.values(j);
        v.iter().filter(|x| **x > r).count() as f64 / v.len() as f64
    }

    /// Drops snapshots taken before `burn_in`.
    pub fn without_burn_in(&self, burn_in: f64) -> EmpiricalMeasure {
        let skip = ((burn_in - self.origin) / self.sample_dt - 1e-9).ceil().max(0.0) as usize;
        EmpiricalMeasure {
            origin: self.origin + skip as f64 * self.sample_dt,
            samples: self
                .samples
                .iter()
                .map(|p| p.iter().map(|f| f[skip.min(f.len())..].to_vec()).collect())
                .collect(),
            ..self.clone()
        }
    }
}

fn require_stable(ens: &Ensemble) -> Result<()> {
    if ens.instability {
        return Err(Error::InvalidParameter("this experiment needs the stable equation".into()));
    }
    Ok(())
}

/// Snapshots `[functional][snapshot]` of one path at steps `0, every, 2 every, ...` below `steps`.
fn record_path(
    ens: &Ensemble,
    x: &SpectralField,
    path: &NoisePath,
    steps: usize,
    every: usize,
    funcs: &[Functional],
) -> Result<Vec<Vec<f64>>> {
    let mut out = vec![Vec::with_capacity(steps / every + 1); funcs.len()];
    ens.walk(x, path, steps.saturating_sub(1), |n, u| {
        if n % every == 0 {
            for (o, f) in out.iter_mut().zip(funcs) {
                o.push(f.eval(u));
            }
        }
        Ok(())
    })?;
    Ok(out)
}

/// `mu_T = (1/T) int_0^T P_0[u(s) in .] ds` for every `T` in the grid, as left
/// Riemann sums over snapshots of trajectories started at 0.
pub fn krylov_bogoliubov(ens: &Ensemble, cfg: &ErgodicityConfig, block: u64) -> Result<Vec<EmpiricalMeasure>> {
    cfg.validate()?;
    require_stable(ens)?;
    let sample_dt = cfg.sample_every as f64 * ens.dt;
    let counts: Vec<usize> = cfg
        .t_grid
        .iter()
        .map(|t| {
            let n = (t / sample_dt).round();
            if (n * sample_dt - t).abs() > 1e-9 * t.max(1.0) {
                return Err(Error::InvalidParameter(format!("T = {t} is not a multiple of the snapshot spacing")));
            }
            Ok(n as usize)
        })
        .collect::<Result<_>>()?;
    let max = *counts.iter().max().expect("nonempty");
    let funcs = cfg.recorded();
    let x0 = SpectralField::zeros(&ens.grid);
    let runs: Vec<Result<Vec<Vec<f64>>>> = (0..cfg.paths as u64)
        .into_par_iter()
        .map(|i| record_path(ens, &x0, &ens.path(block, i)?, max * cfg.sample_every, cfg.sample_every, &funcs))
        .collect();
    let mut all = Vec::with_capacity(cfg.paths);
    for r in runs {
        all.push(r?);
    }
    let names: Vec<String> = funcs.iter().map(|f| f.name.clone()).collect();
    Ok(cfg
        .t_grid
        .iter()
        .zip(&counts)
        .map(|(&t, &n)| EmpiricalMeasure {
            t,
            sample_dt,
            origin: 0.0,
            names: names.clone(),
            samples: all.iter().map(|p| p.iter().map(|f| f[..n].to_vec()).collect()).collect(),
        })
        .collect())
}

/// Differences of a moment between consecutive grid times.
#[derive(Debug, Clone, PartialEq)]
pub struct CauchyCheck {
    pub moments: Vec<Summary>,
    /// `|m(T_{j+1}) - m(T_j)|` with the standard error of the paired difference.
    pub differences: Vec<(f64, f64)>,
    /// Each difference is at most the previous one plus three of its standard errors.
    pub passes: bool,
}

/// Cauchy diagnostic for `int f^p d mu_T` along the grid.
pub fn cauchy_in_t(measures: &[EmpiricalMeasure], j: usize, p: i32) -> CauchyCheck {
    let moments: Vec<Summary> = measures.iter().map(|m| m.moment(j, p)).collect();
    let per_path = |m: &EmpiricalMeasure| -> Vec<f64> {
        m.samples
            .iter()
            .map(|s| s[j].iter().map(|v| v.powi(p)).sum::<f64>() / s[j].len() as f64)
            .collect()
    };
    let differences: Vec<(f64, f64)> = measures
        .windows(2)
        .map(|w| {
            let (a, b) = (per_path(&w[0]), per_path(&w[1]));
            let d: Vec<f64> = a.iter().zip(&b).map(|(x, y)| y - x).collect();
            let s = Summary::of(&d);
            (s.mean.abs(), s.std_error())
        })
        .collect();
    let passes = differences.windows(2).all(|w| w[1].0 <= w[0].0 + 3.0 * w[1].1);
    CauchyCheck { moments, differences, passes }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TailTable {
    pub ts: Vec<f64>,
    pub rs: Vec<f64>,
    /// `[T][R]`.
    pub freq: Vec<Vec<f64>>,
    /// Nonincreasing in `R` for every `T`.
    pub monotone: bool,
    /// `sup_T mu_T[f > R]` per `R`.
    pub sup_over_t: Vec<f64>,
    /// The sup over `T` at the largest `R` is at most `eps`.
    pub passes: bool,
}

/// Tail frequencies `mu_T[f_j > R]`.
pub fn tail_tightness(measures: &[EmpiricalMeasure], r_grid: &[f64], j: usize, eps: f64) -> TailTable {
    let mut rs = r_grid.to_vec();
    rs.sort_by(f64::total_cmp);
    let freq: Vec<Vec<f64>> = measures.iter().map(|m| rs.iter().map(|r| m.tail(j, *r)).collect()).collect();
    let monotone = freq.iter().all(|row| row.windows(2).all(|w| w[1] <= w[0]));
    let sup_over_t: Vec<f64> = (0..rs.len())
        .map(|k| freq.iter().map(|row| row[k]).fold(0.0, f64::max))
        .collect();
    let passes = sup_over_t.last().is_some_and(|s| *s <= eps);
    TailTable { ts: measures.iter().map(|m| m.t).collect(), rs, freq, monotone, sup_over_t, passes }
}

/// Pooled snapshots `[functional][sample]` from `m` paths started at `x`,
/// taken every `every` steps after `burn_in` up to `t`.
#[allow(clippy::too_many_arguments)]
pub fn long_run_samples(
    ens: &Ensemble,
    x: &SpectralField,
    t: f64,
    burn_in: f64,
    every: usize,
    m: usize,
    funcs: &[Functional],
    block: u64,
) -> Result<Vec<Vec<f64>>> {
    if every == 0 || !(burn_in >= 0.0 && burn_in < t) {
        return Err(Error::InvalidParameter("need every >= 1 and 0 <= burn_in < t".into()));
    }
    let steps = ens.steps_for(t)?;
    let skip = (burn_in / ens.dt).ceil() as usize;
    let runs: Vec<Result<Vec<Vec<f64>>>> = (0..m as u64)
        .into_par_iter()
        .map(|i| {
            let mut out = vec![Vec::new(); funcs.len()];
            ens.walk(x, &ens.path(block, i)?, steps, |n, u| {
                if n >= skip && (n - skip).is_multiple_of(every) {
                    for (o, f) in out.iter_mut().zip(funcs) {
                        o.push(f.eval(u));
                    }
                }
                Ok(())
            })?;
            Ok(out)
        })
        .collect();
    let mut pooled = vec![Vec::new(); funcs.len()];
    for r in runs {
        for (p, v) in pooled.iter_mut().zip(r?) {
            p.extend(v);
        }
    }
    Ok(pooled)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairDistance {
    pub i: usize,
    pub j: usize,
    pub functional: String,
    pub ks: KsResult,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UniquenessReport {
    pub pairs: Vec<PairDistance>,
    /// Two independent runs from the first starting point.
    pub baseline: Vec<PairDistance>,
    /// Every pairwise p-value exceeds `0.01`.
    pub passes: bool,
    /// Largest pairwise KS statistic over the largest baseline statistic.
    pub max_ratio_to_baseline: f64,
}

/// Pairwise KS distances between long-run samples from each starting point.
#[allow(clippy::too_many_arguments)]
pub fn uniqueness_probe(
    ens: &Ensemble,
    xs: &[SpectralField],
    t: f64,
    burn_in: f64,
    every: usize,
    m: usize,
    funcs: &[Functional],
    block: u64,
) -> Result<UniquenessReport> {
    require_stable(ens)?;
    if xs.len() < 2 {
        return Err(Error::InvalidParameter("need at least two starting points".into()));
    }
    let blocks: Vec<u64> = (0..=xs.len() as u64).map(|i| derive_seed(block, i)).collect();
    let mut runs = Vec::with_capacity(xs.len() + 1);
    for (x, b) in xs.iter().chain(std::iter::once(&xs[0])).zip(&blocks) {
        runs.push(long_run_samples(ens, x, t, burn_in, every, m, funcs, *b)?);
    }
    let compare = |a: usize, b: usize| -> Result<Vec<PairDistance>> {
        funcs
            .iter()
            .enumerate()
            .map(|(k, f)| {
                Ok(PairDistance {
                    i: a,
                    j: b,
                    functional: f.name.clone(),
                    ks: ks_two_sample(&runs[a][k], &runs[b][k])?,
                })
            })
            .collect()
    };
    let mut pairs = Vec::new();
    for a in 0..xs.len() {
        for b in a + 1..xs.len() {
            pairs.extend(compare(a, b)?);
        }
    }
    let mut baseline = compare(0, xs.len())?;
    for d in &mut baseline {
        d.j = 0;
    }
    let passes = pairs.iter().all(|d| d.ks.p_value > 0.01);
    let worst = pairs.iter().map(|d| d.ks.statistic).fold(0.0, f64::max);
    let base = baseline.iter().map(|d| d.ks.statistic).fold(0.0, f64::max);
    Ok(UniquenessReport { pairs, baseline, passes, max_ratio_to_baseline: worst / base })
}

/// `u**` and its exponential excursion bound along one `theta` path.
#[derive(Debug, Clone, PartialEq)]
pub struct Excursion {
    pub times: Vec<f64>,
    pub u_ss: Vec<f64>,
    /// `(2 / lambda) exp(sup_{s <= t} int_s^t (-lambda/2 + theta))`.
    pub bound: Vec<f64>,
    /// `sup_{s in [0, k+1]} int_s^{k+1} (-lambda/2 + theta)` for each integer `k + 1 <= T`.
    pub windows: Vec<f64>,
    pub holds: bool,
}

/// Solves `u' + (lambda - theta) u = 1`, `u(0) = 0`, and checks the excursion bound pathwise.
pub fn excursion_functional(times: &[f64], theta: &[f64], lambda: f64) -> Result<Excursion> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidParameter("lambda must be > 0".into()));
    }
    if theta.iter().any(|x| !(*x >= 0.0)) {
        return Err(Error::InvalidParameter("theta must be nonnegative".into()));
    }
    let ones = vec![1.0; times.len()];
    let u_ss = solve_comparison(0.0, times, theta, &ones, lambda)?;
    let mut f = 0.0;
    let mut fmin = 0.0f64;
    let mut bound = Vec::with_capacity(times.len());
    let mut windows = Vec::new();
    bound.push(2.0 / lambda);
    for j in 1..times.len() {
        f += (times[j] - times[j - 1]) * (-0.5 * lambda + 0.5 * (theta[j - 1] + theta[j]));
        fmin = fmin.min(f);
        bound.push(2.0 / lambda * (f - fmin).exp());
        let k = times[j].round();
        if k >= 1.0 && (times[j] - k).abs() < 1e-9 {
            windows.push(f - fmin);
        }
    }
    let holds = u_ss.iter().zip(&bound).all(|(u, b)| *u <= b * (1.0 + 1e-12));
    Ok(Excursion { times: times.to_vec(), u_ss, bound, windows, holds })
}

/// Excursion statistics along a stationary `Z~` path with damping `alpha`.
pub fn excursion_from_ou(
    spec: &NoiseSpec,
    grid: &Arc<Grid>,
    alpha: f64,
    c_star: f64,
    dt: f64,
    horizon: f64,
    seed: u64,
) -> Result<Excursion> {
    let path = NoisePath::new(grid, spec.clone(), seed, dt)?;
    let ou = OuStepper::new(&path, alpha)?;
    let steps = (horizon / dt).round() as usize;
    let mut z = sample_stationary_ou(spec, grid, alpha, seed)?;
    let mut times = Vec::with_capacity(steps + 1);
    let mut zs = Vec::with_capacity(steps + 1);
    times.push(0.0);
    zs.push(z.clone());
    for n in 0..steps {
        z = ou.step_with(&z, &path.step_normals(n as u64));
        times.push((n + 1) as f64 * dt);
        zs.push(z.clone());
    }
    let theta = CoefficientPath::from_fields(&times, &zs, alpha)?.with_constants(c_star, c_star).theta();
    excursion_functional(&times, &theta, grid.poincare_lambda())
}

/// `E[(log(1 + int_0^T |h_x|^2))^kappa]` over `m` paths.
pub fn log_moment(ens: &Ensemble, x: &SpectralField, t: f64, kappa: f64, m: usize, block: u64) -> Result<Summary> {
    let steps = ens.steps_for(t)?;
    let vals: Vec<Result<f64>> = (0..m as u64)
        .into_par_iter()
        .map(|i| {
            let mut prev = None;
            let mut integral = 0.0;
            ens.walk(x, &ens.path(block, i)?, steps, |_, u| {
                let e = u.derivative(1)?.norm_sq_l2();
                if let Some(p) = prev {
                    integral += 0.5 * ens.dt * (p + e);
                }
                prev = Some(e);
                Ok(())
            })?;
            Ok((1.0 + integral).ln().powf(kappa))
        })
        .collect();
    let vals: Vec<f64> = vals.into_iter().collect::<Result<_>>()?;
    Ok(Summary::of(&vals))
}

/// Concave, nondecreasing, unbounded piecewise-linear `phi` with `E[phi(X)]` finite.
#[derive(Debug, Clone, PartialEq)]
pub struct ConcaveMoment {
    /// Cell boundaries `x_n` of the step function.
    pub thresholds: Vec<f64>,
    /// Knots `y_n` with `u(y_n) = n`.
    pub knots: Vec<f64>,
    pub values: Vec<f64>,
    /// Slope on `[y_n, y_{n+1}]`; the last slope continues past the last knot.
    pub slopes: Vec<f64>,
    /// `u(y_n)` at each knot.
    pub u_at_knots: Vec<f64>,
}

/// Default knot budget.
pub const DEFAULT_KNOTS: usize = 20;

/// Builds `phi` from samples of a nonnegative variable. Thresholds are empirical
/// quantiles leaving mass `4^{-n}` above `x_n`.
pub fn phi_construct(samples: &[f64], knots: usize) -> Result<ConcaveMoment> {
    if samples.len() < 1000 || samples.len() < knots {
        return Err(Error::InsufficientData(format!(
            "need at least max(1000, knots) samples, got {}",
            samples.len()
        )));
    }
    if knots < 2 {
        return Err(Error::InvalidParameter("need at least 2 knots".into()));
    }
    if samples.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) {
        return Err(Error::InvalidParameter("samples must be finite and nonnegative".into()));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let levels = (n.ln() / 4f64.ln()).floor() as usize;
    let mut thresholds = vec![0.0];
    for j in 1..=levels {
        thresholds.push(quantile(&sorted, 1.0 - 4f64.powi(-(j as i32))));
    }
    // step function: value 2^j on [x_j, x_{j+1}), duplicates collapse to the highest level
    let mut starts: Vec<(f64, f64)> = Vec::new();
    for (j, &x) in thresholds.iter().enumerate() {
        let v = 2f64.powi(j as i32);
        match starts.last_mut() {
            Some(last) if last.0 == x => last.1 = v,
            _ => starts.push((x, v)),
        }
    }
    let floor = starts.iter().map(|s| s.1).fold(f64::INFINITY, f64::min);
    // running integral I(t) of (u~ - inf u~) at each segment start
    let seg: Vec<(f64, f64, f64)> = {
        let mut acc = 0.0;
        let mut out = Vec::with_capacity(starts.len());
        for (k, &(x, v)) in starts.iter().enumerate() {
            if k > 0 {
                let (px, pv) = starts[k - 1];
                acc += (pv - floor) * (x - px);
            }
            out.push((x, v - floor, acc));
        }
        out
    };
    let u_of = |t: f64| -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        let k = seg.iter().rposition(|s| s.0 <= t).unwrap_or(0);
        let (x, v, i) = seg[k];
        (i + v * (t - x)) / t
    };
    let cap = seg.last().expect("nonempty").1;
    // y_level = sup{t : u(t) <= level}
    let solve = |level: f64| -> Option<f64> {
        if level >= cap {
            return None;
        }
        for k in 0..seg.len() {
            let (x, v, i) = seg[k];
            let end = seg.get(k + 1).map(|s| s.0);
            let u_end = end.map_or(v, u_of);
            if u_end > level || (end.is_none() && v > level) {
                // (i + v (t - x)) / t = level on this segment; u is increasing here
                return Some((v * x - i) / (v - level));
            }
        }
        None
    };
    let mut ys = vec![0.0];
    for lvl in 1..knots {
        match solve(lvl as f64) {
            Some(y) if y > *ys.last().expect("nonempty") => ys.push(y),
            _ => break,
        }
    }
    if ys.len() < 2 {
        return Err(Error::InsufficientData("samples too concentrated to place a second knot".into()));
    }
    let mut values = vec![0.0, 1.0];
    for k in 2..ys.len() {
        let slope = (values[k - 1] - values[k - 2]) / (ys[k - 1] - ys[k - 2]);
        values.push((k as f64).min(values[k - 2] + slope * (ys[k] - ys[k - 2])));
    }
    values.truncate(ys.len());
    let slopes: Vec<f64> = ys
        .windows(2)
        .zip(values.windows(2))
        .map(|(y, v)| (v[1] - v[0]) / (y[1] - y[0]))
        .collect();
    let u_at_knots = ys.iter().map(|y| u_of(*y)).collect();
    Ok(ConcaveMoment { thresholds, knots: ys, values, slopes, u_at_knots })
}

impl ConcaveMoment {
    pub fn eval(&self, x: f64) -> f64 {
        let x = x.max(0.0);
        let k = match self.knots.iter().rposition(|y| *y <= x) {
            Some(k) => k.min(self.slopes.len() - 1),
            None => 0,
        };
        self.values[k] + self.slopes[k] * (x - self.knots[k])
    }

    /// `phi(log(1 + x))`, which satisfies `phi(x + y) <= phi(x) + C log(1 + y)`.
    pub fn eval_log(&self, x: f64) -> f64 {
        self.eval(x.max(0.0).ln_1p())
    }

    /// `phi'(0+)`.
    pub fn initial_slope(&self) -> f64 {
        self.slopes[0]
    }

    pub fn final_slope(&self) -> f64 {
        *self.slopes.last().expect("at least one slope")
    }

    pub fn is_concave(&self) -> bool {
        self.slopes.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12))
    }

    pub fn is_nondecreasing(&self) -> bool {
        self.values.windows(2).all(|w| w[1] >= w[0])
    }

    /// `sup (phi(x + y) - phi(x) - C y)` over the grid `xs x ys`.
    pub fn increment_excess(&self, xs: &[f64], ys: &[f64], c: f64) -> f64 {
        let mut worst = f64::NEG_INFINITY;
        for &x in xs {
            let base = self.eval(x);
            for &y in ys {
                worst = worst.max(self.eval(x + y) - base - c * y);
            }
        }
        worst
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Pareto};
    use std::f64::consts::PI;

    fn grid(n: usize) -> Arc<Grid> {
        Grid::new(2.0 * PI, n).unwrap()
    }

    #[test]
    fn gamma_range_is_enforced() {
        assert!(ErgodicityConfig::new(1.1, vec![1.0]).is_err());
        assert!(ErgodicityConfig::new(1.5, vec![1.0]).is_err());
        assert!(ErgodicityConfig::new(1.3, vec![1.0]).is_ok());
    }

    #[test]
    fn noise_off_gives_point_mass_at_zero() {
        let g = grid(16);
        let quiet = NoiseSpec::from_amplitudes(vec![0.0; g.modes()], None).unwrap();
        let ens = Ensemble::new(&g, quiet, 1e-2, 0).with_instability(false);
        let cfg = ErgodicityConfig { paths: 2, ..ErgodicityConfig::new(1.3, vec![0.5, 1.0]).unwrap() };
        let ms = krylov_bogoliubov(&ens, &cfg, 0).unwrap();
        assert_eq!(ms.len(), 2);
        for m in &ms {
            assert!((m.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for j in 0..m.names.len() {
                assert!(m.values(j).iter().all(|v| *v == 0.0));
            }
            assert_eq!(m.tail(0, 0.0), 0.0);
        }
        assert_eq!(ms[1].snapshots(), 10);
        let unstable = Ensemble { instability: true, ..ens };
        assert!(krylov_bogoliubov(&unstable, &cfg, 0).is_err());
    }

    #[test]
    fn tail_at_zero_radius_is_one() {
        let g = grid(16);
        let ens = Ensemble::new(&g, NoiseSpec::white(&g), 1e-2, 1).with_instability(false);
        let cfg = ErgodicityConfig { paths: 2, ..ErgodicityConfig::new(1.3, vec![1.0, 2.0]).unwrap() };
        let ms: Vec<EmpiricalMeasure> =
            krylov_bogoliubov(&ens, &cfg, 0).unwrap().into_iter().map(|m| m.without_burn_in(0.05)).collect();
        let table = tail_tightness(&ms, &[0.0, 0.1, 1.0, 10.0], 0, 0.05);
        assert!(table.freq.iter().all(|row| row[0] == 1.0));
        assert!(table.monotone);
    }

    #[test]
    fn identical_runs_have_zero_distance() {
        let g = grid(16);
        let ens = Ensemble::new(&g, NoiseSpec::white(&g), 1e-2, 2).with_instability(false);
        let f = [Functional::norm(Norm::L2, 1.0, false)];
        let x = SpectralField::zeros(&g);
        let a = long_run_samples(&ens, &x, 1.0, 0.5, 5, 4, &f, 7).unwrap();
        let b = long_run_samples(&ens, &x, 1.0, 0.5, 5, 4, &f, 7).unwrap();
        assert_eq!(ks_two_sample(&a[0], &b[0]).unwrap().statistic, 0.0);
    }

    #[test]
    fn excursion_constant_theta() {
        let lambda = 1.0;
        let times: Vec<f64> = (0..=400).map(|i| i as f64 * 0.025).collect();
        let zero = excursion_functional(&times, &vec![0.0; times.len()], lambda).unwrap();
        for (t, u) in times.iter().zip(&zero.u_ss) {
            assert!((u - (1.0 - (-lambda * t).exp()) / lambda).abs() < 1e-12);
            assert!(*u <= 2.0 / lambda);
        }
        assert!(zero.holds);
        assert_eq!(zero.windows.len(), 10);
        let quarter = excursion_functional(&times, &vec![lambda / 4.0; times.len()], lambda).unwrap();
        let r = 0.75 * lambda;
        for (t, u) in times.iter().zip(&quarter.u_ss) {
            assert!((u - (1.0 - (-r * t).exp()) / r).abs() < 1e-12);
        }
        assert!(quarter.holds);
        assert!(quarter.u_ss.last().unwrap() < &(0.9 * quarter.bound.last().unwrap()));
    }

    #[test]
    fn excursion_along_ou_path_respects_bound() {
        let g = grid(16);
        let e = excursion_from_ou(&NoiseSpec::white(&g), &g, 4.0, 1.0, 1e-2, 5.0, 3).unwrap();
        assert!(e.holds);
        assert_eq!(e.windows.len(), 5);
    }

    #[test]
    fn phi_for_constant_samples() {
        let phi = phi_construct(&vec![2.0; 1000], DEFAULT_KNOTS).unwrap();
        assert!(phi.is_concave() && phi.is_nondecreasing());
        assert!(phi.final_slope() > 0.0);
        assert!(phi.eval(2.0).is_finite());
        assert!(phi_construct(&[2.0; 10], 5).is_err());
    }

    #[test]
    fn phi_for_pareto_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let dist = Pareto::new(1.0, 1.1).unwrap();
        let xs: Vec<f64> = (0..100_000).map(|_| dist.sample(&mut rng) - 1.0).collect();
        let phi = phi_construct(&xs, DEFAULT_KNOTS).unwrap();
        assert!(phi.is_concave() && phi.is_nondecreasing());
        assert!(phi.final_slope() > 0.0);
        for (v, u) in phi.values.iter().zip(&phi.u_at_knots) {
            assert!(*v <= 1.0 + u + 1e-9);
        }
        let grid: Vec<f64> = (0..100).map(|i| i as f64 * 0.5).collect();
        assert!(phi.increment_excess(&grid, &grid, phi.initial_slope()) <= 1e-9);
        let lg = phi.eval_log(3.0);
        assert!((lg - phi.eval(4f64.ln())).abs() < 1e-15);
    }
}
