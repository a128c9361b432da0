//! Argument handling and experiment drivers behind the `growth-spde` binary.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use growth_spde::config::{build_state, load_config_with, override_value, ExperimentConfig};
use growth_spde::dynamics::{run_full, run_regularized, run_split, steer_control, CutoffSpec, Forcing, Trajectory};
use growth_spde::energy::{adaptive_alpha, audit_monotone, energy_drift, trajectory_energy, EnergyModel};
use growth_spde::ergodicity::{
    cauchy_in_t, excursion_from_ou, krylov_bogoliubov, phi_construct, tail_tightness, uniqueness_probe,
};
use growth_spde::io::{read_samples, read_trajectory, write_report, write_trajectory, Report, RunManifest, Table, Verdict};
use growth_spde::markov::{bel_gradient, crn_difference, markov_restart_test, strong_feller_modulus, tau_tail};
use growth_spde::noise::{derive_seed, NoisePath};
use growth_spde::stats::quantile;
use growth_spde::{Error, SpectralField};

#[derive(Debug, Parser)]
#[command(name = "growth-spde", version, about = "Stochastic surface-growth experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON experiment config.
    #[arg(long)]
    pub config: PathBuf,
    /// Override a config value, e.g. `--set grid.n=32`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Directory for reports (overrides `output_dir` and the environment).
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Integrate one trajectory and write it to a file.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        length: Option<f64>,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long)]
        horizon: Option<f64>,
        #[arg(long, conflicts_with = "unstable")]
        stable: bool,
        #[arg(long)]
        unstable: bool,
        /// Enables the cut-off dynamics with this radius.
        #[arg(long)]
        rho: Option<f64>,
        /// Store the `V + Z` splitting instead of the direct run.
        #[arg(long)]
        split: bool,
        /// Trajectory file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Energy equality audit of split runs or of a stored trajectory.
    EnergyAudit {
        #[command(flatten)]
        common: Common,
        #[arg(long = "in")]
        input: Option<PathBuf>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        tol_scale: Option<f64>,
    },
    /// Modulus of continuity of `x -> P_t phi(x)` along a direction.
    StrongFeller {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        paths: Option<usize>,
    },
    /// Gradient estimator against common-random-number differences.
    BelGradient {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        paths: Option<usize>,
    },
    /// Exit-time frequencies of the H1 ball.
    TauTail {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        paths: Option<usize>,
    },
    /// Two-sample restart test of the Markov property.
    MarkovTest {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        paths: Option<usize>,
    },
    /// Time-averaged measures, tails, uniqueness probe and excursions.
    Ergodicity {
        #[command(flatten)]
        common: Common,
    },
    /// Concave moment function from samples.
    PhiConstruct {
        #[command(flatten)]
        common: Common,
        #[arg(long = "in")]
        input: Option<PathBuf>,
        #[arg(long)]
        knots: Option<usize>,
    },
    /// Control steering the deterministic cut-off dynamics between two states.
    Steer {
        #[command(flatten)]
        common: Common,
    },
}

/// Process exit status for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::ConfigParse { .. }
        | Error::ConfigSchema { .. }
        | Error::InvalidParameter(_)
        | Error::InvalidGrid(_)
        | Error::UnsupportedNorm(_)
        | Error::DegenerateNoise { .. }
        | Error::Io { .. }
        | Error::Format(_) => 2,
        _ => 1,
    }
}

fn overrides(common: &Common, extra: Vec<(&str, Option<Value>)>) -> Result<Vec<(String, Value)>, Error> {
    let mut out = Vec::new();
    for s in &common.set {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| Error::ConfigSchema { field: s.clone(), message: "expected KEY=VALUE".into() })?;
        out.push((k.trim().to_string(), override_value(v.trim())));
    }
    if let Some(seed) = common.seed {
        out.push(("seed".into(), json!(seed)));
    }
    for (k, v) in extra {
        if let Some(v) = v {
            out.push((k.to_string(), v));
        }
    }
    Ok(out)
}

fn load(common: &Common, extra: Vec<(&str, Option<Value>)>) -> Result<ExperimentConfig, Error> {
    load_config_with(&common.config, &overrides(common, extra)?)
}

fn out_dir(common: &Common, cfg: &ExperimentConfig) -> PathBuf {
    common.out_dir.clone().unwrap_or_else(|| PathBuf::from(cfg.output_dir()))
}

/// Parses arguments, runs the experiment and returns the exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(pass) => i32::from(!pass),
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn execute(command: Command) -> Result<bool, Error> {
    let started = Instant::now();
    let (name, common, cfg, report) = match command {
        Command::Simulate { common, n, length, dt, horizon, stable, unstable, rho, split, out } => {
            let instability = if stable { Some(json!(false)) } else if unstable { Some(json!(true)) } else { None };
            let cfg = load(
                &common,
                vec![
                    ("grid.n", n.map(|v| json!(v))),
                    ("grid.length", length.map(|v| json!(v))),
                    ("integrator.dt", dt.map(|v| json!(v))),
                    ("integrator.horizon", horizon.map(|v| json!(v))),
                    ("integrator.instability", instability),
                    ("cutoff.rho", rho.map(|v| json!(v))),
                ],
            )?;
            let dir = out_dir(&common, &cfg);
            let file = out.unwrap_or_else(|| dir.join("simulate.gstj"));
            let report = simulate(&cfg, split, &file)?;
            ("simulate", common, cfg, report)
        }
        Command::EnergyAudit { common, input, alpha, tol_scale } => {
            let cfg = load(
                &common,
                vec![
                    ("energy.alpha", alpha.map(|v| json!(v))),
                    ("energy.tol_scale", tol_scale.map(|v| json!(v))),
                ],
            )?;
            let report = energy_audit(&cfg, input.as_deref())?;
            ("energy-audit", common, cfg, report)
        }
        Command::StrongFeller { common, paths } => {
            let cfg = load(&common, vec![("markov.paths", paths.map(|v| json!(v)))])?;
            let report = strong_feller(&cfg)?;
            ("strong-feller", common, cfg, report)
        }
        Command::BelGradient { common, paths } => {
            let cfg = load(&common, vec![("markov.paths", paths.map(|v| json!(v)))])?;
            let report = bel(&cfg)?;
            ("bel-gradient", common, cfg, report)
        }
        Command::TauTail { common, paths } => {
            let cfg = load(&common, vec![("markov.paths", paths.map(|v| json!(v)))])?;
            let report = tau(&cfg)?;
            ("tau-tail", common, cfg, report)
        }
        Command::MarkovTest { common, paths } => {
            let cfg = load(&common, vec![("markov.paths", paths.map(|v| json!(v)))])?;
            let report = restart(&cfg)?;
            ("markov-test", common, cfg, report)
        }
        Command::Ergodicity { common } => {
            let cfg = load(&common, vec![])?;
            let report = ergodicity(&cfg)?;
            ("ergodicity", common, cfg, report)
        }
        Command::PhiConstruct { common, input, knots } => {
            let cfg = load(
                &common,
                vec![
                    ("phi.knots", knots.map(|v| json!(v))),
                    ("phi.input", input.map(|p| json!(p.to_string_lossy()))),
                ],
            )?;
            let report = phi(&cfg)?;
            ("phi-construct", common, cfg, report)
        }
        Command::Steer { common } => {
            let cfg = load(&common, vec![])?;
            let report = steer(&cfg)?;
            ("steer", common, cfg, report)
        }
    };
    let dir = out_dir(&common, &cfg);
    let mut manifest = RunManifest::new(name, &cfg.hash(), cfg.seed);
    manifest.wall_clock_seconds = started.elapsed().as_secs_f64();
    write_report(&dir, &report, &mut manifest)?;
    for v in &report.verdicts {
        println!("{} {}: {}", if v.pass { "PASS" } else { "FAIL" }, v.name, v.detail);
    }
    println!(
        "overall: {} ({} written to {})",
        if manifest.overall { "PASS" } else { "FAIL" },
        manifest.outputs.len() + 1,
        dir.display()
    );
    Ok(manifest.overall)
}

fn norm_table(traj: &Trajectory) -> Table {
    let mut t = Table::new(["t", "l2", "h1"]);
    for (time, h) in traj.times.iter().zip(&traj.h) {
        t.push(vec![*time, h.norm_sq_l2().sqrt(), h.h1_norm_sq().sqrt()]);
    }
    t
}

fn simulate(cfg: &ExperimentConfig, split: bool, file: &Path) -> Result<Report, Error> {
    let grid = cfg.grid()?;
    let icfg = cfg.integrator()?;
    let path = NoisePath::new(&grid, cfg.noise_spec(&grid)?, cfg.seed, icfg.dt)?;
    let h0 = build_state(&grid, &cfg.initial)?;
    let mut details = json!({});
    let mut traj = match cfg.cutoff_spec()? {
        Some(cut) => {
            let run = run_regularized(&h0, cut, Forcing::Noise(&path), &icfg)?;
            details = json!({ "tau_rho": run.tau_rho, "max_h1": run.max_h1, "rho": cut.rho });
            run.trajectory
        }
        None if split => run_split(&h0, &SpectralField::zeros(&grid), 0.0, &path, &icfg)?,
        None => run_full(&h0, &path, &icfg)?,
    };
    traj.config_hash = Some(cfg.hash());
    if let Some(parent) = file.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::Io { path: parent.into(), source: e })?;
    }
    let config_value: Value = serde_json::from_str(&cfg.normalized_json()).expect("canonical JSON");
    write_trajectory(file, &traj, &config_value)?;
    details["trajectory"] = json!(file.to_string_lossy());
    let finite = traj.h.iter().all(SpectralField::is_finite);
    Ok(Report {
        tables: vec![("norms".into(), norm_table(&traj))],
        verdicts: vec![Verdict::new("finite", finite, format!("{} snapshots", traj.len()))],
        details,
    })
}

fn energy_audit(cfg: &ExperimentConfig, input: Option<&Path>) -> Result<Report, Error> {
    let settings = cfg.energy.clone().unwrap_or_default();
    let mut runs = Vec::new();
    let mut instability = cfg.integrator.instability;
    match input {
        Some(p) => {
            let (traj, header) = read_trajectory(p)?;
            if let Some(b) = header.config.pointer("/integrator/instability").and_then(Value::as_bool) {
                instability = b;
            }
            runs.push(traj);
        }
        None => {
            let grid = cfg.grid()?;
            let icfg = cfg.integrator()?;
            let x = build_state(&grid, &settings.x)?;
            for r in 0..settings.runs {
                let path = NoisePath::new(&grid, cfg.noise_spec(&grid)?, derive_seed(cfg.seed, r as u64), icfg.dt)?;
                runs.push(run_split(&x, &SpectralField::zeros(&grid), settings.alpha, &path, &icfg)?);
            }
        }
    }
    let mut model = EnergyModel::new(settings.alpha, instability);
    model.nonlinearity = cfg.integrator.nonlinearity;
    let mut records = Vec::new();
    let mut max_drift = 0.0f64;
    let mut dt = f64::INFINITY;
    for traj in &runs {
        if traj.v.is_none() || traj.z.is_none() {
            return Err(Error::Format("energy audit needs a trajectory with V and Z (simulate --split)".into()));
        }
        if traj.times.len() >= 2 {
            dt = dt.min(traj.times[1] - traj.times[0]);
        }
        let rec = trajectory_energy(traj, &model)?;
        max_drift = max_drift.max(energy_drift(&rec));
        records.push(rec);
    }
    let (scale, fitted) = match settings.tol_scale {
        Some(c) => (c, false),
        None => (2.0 * max_drift / dt, true),
    };
    let tol = scale * dt;
    let mut series = Table::new(["run", "t", "kinetic", "accum", "energy"]);
    let mut violations = Table::new(["run", "s", "t", "e_s", "e_t"]);
    let mut count = 0;
    for (r, rec) in records.iter().enumerate() {
        for e in rec {
            series.push(vec![r as f64, e.t, e.kinetic, e.accum, e.energy()]);
        }
        for v in audit_monotone(rec, tol) {
            violations.push(vec![r as f64, v.s, v.t, v.e_s, v.e_t]);
            count += 1;
        }
    }
    Ok(Report {
        tables: vec![("series".into(), series), ("violations".into(), violations)],
        verdicts: vec![Verdict::new(
            "energy_monotone",
            count == 0,
            format!("{count} violations at tol {tol:.3e} (C = {scale:.3e}{}), max drift {max_drift:.3e}", if fitted { ", fitted" } else { "" }),
        )],
        details: json!({ "max_drift": max_drift, "tol": tol, "tol_scale": scale, "tol_scale_fitted": fitted, "runs": runs.len() }),
    })
}

struct MarkovSetup {
    ens: growth_spde::markov::Ensemble,
    x: SpectralField,
    dir: SpectralField,
    phis: Vec<growth_spde::markov::Functional>,
    m: growth_spde::config::MarkovConfig,
}

fn markov_setup(cfg: &ExperimentConfig) -> Result<MarkovSetup, Error> {
    let grid = cfg.grid()?;
    let m = cfg.markov.clone().unwrap_or_default();
    Ok(MarkovSetup {
        ens: cfg.ensemble(&grid)?,
        x: build_state(&grid, &m.x)?,
        dir: build_state(&grid, &m.direction)?,
        phis: m.functionals.iter().map(|f| f.build()).collect(),
        m,
    })
}

fn strong_feller(cfg: &ExperimentConfig) -> Result<Report, Error> {
    let s = markov_setup(cfg)?;
    let table = strong_feller_modulus(&s.ens, &s.phis, &s.x, &s.dir, s.m.t, &s.m.scales, s.m.paths, 0)?;
    let mut t = Table::new(["h_norm", "difference", "stderr", "h_log_inv_h"]);
    for r in &table.rows {
        t.push(vec![r.h_norm, r.difference, r.stderr, r.h_norm * (1.0 / r.h_norm).ln()]);
    }
    Ok(Report {
        tables: vec![("modulus".into(), t)],
        verdicts: vec![Verdict::new(
            "modulus_monotone",
            table.monotone,
            format!("C = {:.4e}, log-log slope {:.3}", table.fit_constant, table.slope),
        )],
        details: json!({
            "fit_constant": table.fit_constant,
            "fit_residual": table.fit_residual,
            "slope": table.slope,
            "worst_functional": table.rows.iter().map(|r| r.worst.clone()).collect::<Vec<_>>(),
            "paths": s.m.paths,
            "t": s.m.t,
        }),
    })
}

fn bel(cfg: &ExperimentConfig) -> Result<Report, Error> {
    let s = markov_setup(cfg)?;
    if s.ens.cutoff.is_none() {
        return Err(Error::ConfigSchema {
            field: "cutoff".into(),
            message: "bel-gradient runs the cut-off dynamics; set cutoff.rho".into(),
        });
    }
    let mut t = Table::new(["functional", "bel", "bel_stderr", "fd", "fd_stderr"]);
    let mut verdicts = Vec::new();
    for (j, phi) in s.phis.iter().enumerate() {
        let b = bel_gradient(&s.ens, phi, &s.x, &s.dir, s.m.t, s.m.paths, 2 * j as u64)?;
        let fd = crn_difference(&s.ens, phi, &s.x, &s.dir, s.m.fd_eps, s.m.t, s.m.paths, 2 * j as u64 + 1)?;
        t.push(vec![j as f64, b.value, b.stderr, fd.value, fd.stderr]);
        verdicts.push(Verdict::new(
            format!("bel_vs_fd[{}]", phi.name),
            b.agrees_with(&fd, 3.0),
            format!("{:.4e} ± {:.1e} vs {:.4e} ± {:.1e}", b.value, b.stderr, fd.value, fd.stderr),
        ));
    }
    let names: Vec<&str> = s.phis.iter().map(|p| p.name.as_str()).collect();
    Ok(Report { tables: vec![("gradient".into(), t)], verdicts, details: json!({ "functionals": names, "paths": s.m.paths }) })
}

fn tau(cfg: &ExperimentConfig) -> Result<Report, Error> {
    let s = markov_setup(cfg)?;
    let table = tau_tail(&s.ens, &s.x, &s.m.rho_grid, &s.m.eps_grid, s.m.paths, 0)?;
    let mut t = Table::new(["rho", "eps", "p_exit", "p_stay", "p_z_small", "stay_lo", "stay_hi", "z_lo", "z_hi"]);
    for c in &table.cells {
        let (sl, sh) = c.stay_interval();
        let (zl, zh) = c.z_interval();
        t.push(vec![c.rho, c.eps, c.p_exit(), c.p_stay(), c.p_z_small(), sl, sh, zl, zh]);
    }
    Ok(Report {
        tables: vec![("tau".into(), t)],
        verdicts: vec![
            Verdict::new("tail_monotone", table.monotone, "P[tau < eps] in rho and eps"),
            Verdict::new(
                "stop_lower_bound",
                table.lower_bound_everywhere,
                "P[tau >= eps] >= P[sup |Z|_H1 <= rho/4] up to Wilson overlap",
            ),
        ],
        details: json!({
            "exit_rate": table.exit_rate,
            "stay_rate": table.stay_rate,
            "c_tau": table.c_tau,
            "gamma": table.gamma,
            "paths": s.m.paths,
        }),
    })
}

fn restart(cfg: &ExperimentConfig) -> Result<Report, Error> {
    let s = markov_setup(cfg)?;
    let mut t = Table::new(["s", "t", "functional", "ks_statistic", "p_value"]);
    let mut verdicts = Vec::new();
    for (j, pair) in s.m.restart.iter().enumerate() {
        let res = markov_restart_test(&s.ens, &s.x, pair[0], pair[1], s.m.paths, &s.phis, j as u64)?;
        for (k, r) in res.iter().enumerate() {
            t.push(vec![r.s, r.t, k as f64, r.ks.statistic, r.ks.p_value]);
            verdicts.push(Verdict::new(
                format!("restart[s={},t={},{}]", r.s, r.t, r.functional),
                r.ks.p_value > 0.01,
                format!("D = {:.4}, p = {:.3}", r.ks.statistic, r.ks.p_value),
            ));
        }
    }
    Ok(Report { tables: vec![("restart".into(), t)], verdicts, details: json!({ "paths": s.m.paths }) })
}

fn ergodicity(cfg: &ExperimentConfig) -> Result<Report, Error> {
    let grid = cfg.grid()?;
    let e = cfg.ergodicity.clone().unwrap_or_default();
    let spec = cfg.noise_spec(&grid)?;
    let ens = cfg.ensemble(&grid)?.with_instability(false).with_cutoff(None);
    let (alpha, adaptive) = match e.alpha {
        Some(a) => (a, false),
        None => (adaptive_alpha(&spec, &grid, e.c_star, 0.5, 200, cfg.seed)?.alpha, true),
    };
    let ecfg = e.to_config(alpha)?;
    let measures = krylov_bogoliubov(&ens, &ecfg, 0)?;
    let names = measures[0].names.clone();
    let mut moments = Table::new(["T", "functional", "m1", "m1_stderr", "m2", "m2_stderr"]);
    for m in &measures {
        for j in 0..names.len() {
            let (a, b) = (m.moment(j, 1), m.moment(j, 2));
            moments.push(vec![m.t, j as f64, a.mean, a.std_error(), b.mean, b.std_error()]);
        }
    }
    let mut verdicts = Vec::new();
    for (j, n) in names.iter().enumerate() {
        let c = cauchy_in_t(&measures, j, 2);
        let d: Vec<String> = c.differences.iter().map(|(d, s)| format!("{d:.2e}±{s:.1e}")).collect();
        verdicts.push(Verdict::new(format!("cauchy[{n}]"), c.passes, d.join(", ")));
    }
    let tails = tail_tightness(&measures, &e.r_grid, 0, e.tail_eps);
    let mut tail_table = Table::new(["T", "R", "frequency"]);
    for (t, row) in tails.ts.iter().zip(&tails.freq) {
        for (r, f) in tails.rs.iter().zip(row) {
            tail_table.push(vec![*t, *r, *f]);
        }
    }
    verdicts.push(Verdict::new("tail_monotone", tails.monotone, "mu_T[|.|_H^gamma > R] nonincreasing in R"));
    verdicts.push(Verdict::new(
        "tail_bounded",
        tails.passes,
        format!("sup_T tail at R = {} is {:.4}", tails.rs.last().copied().unwrap_or(f64::NAN), tails.sup_over_t.last().copied().unwrap_or(f64::NAN)),
    ));
    let starts: Vec<SpectralField> = e.starts.iter().map(|s| build_state(&grid, s)).collect::<Result<_, _>>()?;
    let mut uniq_table = Table::new(["i", "j", "functional", "ks_statistic", "p_value"]);
    let mut uniq_detail = Value::Null;
    if starts.len() >= 2 {
        let u = uniqueness_probe(&ens, &starts, e.uniqueness_t, e.burn_in, e.uniqueness_every, e.paths, &ecfg.functionals, 1)?;
        for d in &u.pairs {
            let k = ecfg.functionals.iter().position(|f| f.name == d.functional).unwrap_or(0);
            uniq_table.push(vec![d.i as f64, d.j as f64, k as f64, d.ks.statistic, d.ks.p_value]);
        }
        verdicts.push(Verdict::new(
            "uniqueness",
            u.passes,
            format!("min p = {:.3}, max D / baseline D = {:.2}", u.pairs.iter().map(|d| d.ks.p_value).fold(1.0, f64::min), u.max_ratio_to_baseline),
        ));
        uniq_detail = json!({ "baseline": u.baseline.iter().map(|d| json!({"functional": d.functional, "statistic": d.ks.statistic, "p": d.ks.p_value})).collect::<Vec<_>>() });
    }
    let ex = excursion_from_ou(&spec, &grid, alpha, e.c_star, cfg.integrator.dt, e.excursion_horizon, cfg.seed)?;
    let mut w = ex.windows.clone();
    w.sort_by(f64::total_cmp);
    let window_q: Vec<f64> = [0.5, 0.9, 0.99].iter().map(|p| quantile(&w, *p)).collect();
    verdicts.push(Verdict::new("excursion_bound", ex.holds, format!("{} windows", w.len())));
    Ok(Report {
        tables: vec![("moments".into(), moments), ("tails".into(), tail_table), ("uniqueness".into(), uniq_table)],
        verdicts,
        details: json!({
            "alpha": alpha,
            "alpha_adaptive": adaptive,
            "gamma": e.gamma,
            "functionals": names,
            "uniqueness": uniq_detail,
            "excursion_window_quantiles": window_q,
        }),
    })
}

fn phi(cfg: &ExperimentConfig) -> Result<Report, Error> {
    let p = cfg.phi.clone().unwrap_or_default();
    let input = p
        .input
        .as_ref()
        .ok_or_else(|| Error::ConfigSchema { field: "phi.input".into(), message: "samples file required (--in)".into() })?;
    let samples = read_samples(Path::new(input))?;
    let phi = phi_construct(&samples, p.knots)?;
    let mut t = Table::new(["knot", "value", "slope", "u"]);
    for (j, (y, v)) in phi.knots.iter().zip(&phi.values).enumerate() {
        let s = phi.slopes.get(j).copied().unwrap_or(phi.final_slope());
        t.push(vec![*y, *v, s, phi.u_at_knots[j]]);
    }
    let top = phi.knots.last().copied().unwrap_or(1.0) * 2.0;
    let grid: Vec<f64> = (0..100).map(|i| top * i as f64 / 99.0).collect();
    let excess = phi.increment_excess(&grid, &grid, phi.initial_slope());
    let mean = samples.iter().map(|x| phi.eval(*x)).sum::<f64>() / samples.len() as f64;
    Ok(Report {
        tables: vec![("phi".into(), t)],
        verdicts: vec![
            Verdict::new("concave", phi.is_concave(), "slopes nonincreasing"),
            Verdict::new("nondecreasing", phi.is_nondecreasing(), "knot values nondecreasing"),
            Verdict::new("unbounded", phi.final_slope() > 0.0, format!("final slope {:.3e}", phi.final_slope())),
            Verdict::new("increment_bound", excess <= 1e-9, format!("max excess {excess:.2e} with C = phi'(0+)")),
        ],
        details: json!({
            "knots": phi.knots,
            "values": phi.values,
            "slopes": phi.slopes,
            "thresholds": phi.thresholds,
            "samples": samples.len(),
            "mean_phi": mean,
            "log_variant": "phi(log(1 + x))",
        }),
    })
}

fn steer(cfg: &ExperimentConfig) -> Result<Report, Error> {
    let grid = cfg.grid()?;
    let s = cfg.steer.clone().unwrap_or_default();
    let icfg = cfg.integrator()?;
    let cut = CutoffSpec::new(s.rho)?;
    let x = build_state(&grid, &s.x)?;
    let y = build_state(&grid, &s.y)?;
    let plan = steer_control(&x, &y, cut, &icfg)?;
    let replay = run_regularized(&x, cut, Forcing::Control(&plan.control), &icfg)?;
    let end = replay.trajectory.last().expect("nonempty run");
    let err = (end - &y).h1_norm_sq().sqrt();
    Ok(Report {
        tables: vec![("replay".into(), norm_table(&replay.trajectory))],
        verdicts: vec![
            Verdict::new("endpoint", err <= s.tolerance, format!("|h(T) - y|_H1 = {err:.3e}")),
            Verdict::new("inside_ball", replay.tau_rho.is_none(), format!("max |h|_H1 = {:.4e}, rho = {}", replay.max_h1, s.rho)),
        ],
        details: json!({ "t_star": plan.t_star, "planned_max_h1": plan.max_h1, "endpoint_error": err }),
    })
}
