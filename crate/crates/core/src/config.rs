//! Experiment configuration: JSON schema, defaults, validation and overrides.

use std::path::Path;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::dynamics::{CutoffSpec, IntegratorConfig};
use crate::ergodicity::{ErgodicityConfig, GAMMA_RANGE};
use crate::error::{Error, Result};
use crate::markov::{Ensemble, Functional, FunctionalKind};
use crate::noise::NoiseSpec;
use crate::spectral::{Grid, Norm, SpectralField};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(default = "default_length")]
    pub length: f64,
    #[serde(default = "default_n")]
    pub n: usize,
}

fn default_length() -> f64 {
    2.0 * std::f64::consts::PI
}

fn default_n() -> usize {
    64
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig { length: default_length(), n: default_n() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    #[serde(default = "yes")]
    pub white: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_decay: Option<f64>,
}

fn yes() -> bool {
    true
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig { white: true, delta: None, alpha_decay: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorSettings {
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "one")]
    pub horizon: f64,
    #[serde(default = "yes")]
    pub instability: bool,
    #[serde(default = "one")]
    pub nonlinearity: f64,
    #[serde(default = "one_usize")]
    pub store_every: usize,
}

fn default_dt() -> f64 {
    1e-3
}

fn one() -> f64 {
    1.0
}

fn one_usize() -> usize {
    1
}

impl Default for IntegratorSettings {
    fn default() -> Self {
        IntegratorSettings { dt: default_dt(), horizon: 1.0, instability: true, nonlinearity: 1.0, store_every: 1 }
    }
}

/// One Fourier coefficient `c_k` of a configured state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeValue {
    pub k: usize,
    #[serde(default)]
    pub re: f64,
    #[serde(default)]
    pub im: f64,
}

pub fn build_state(grid: &Arc<Grid>, modes: &[ModeValue]) -> Result<SpectralField> {
    let mut f = SpectralField::zeros(grid);
    for m in modes {
        if m.k == 0 || m.k > grid.modes() {
            return Err(Error::InvalidParameter(format!("mode {} outside 1..={}", m.k, grid.modes())));
        }
        f.coeffs_mut()[m.k - 1] += Complex64::new(m.re, m.im);
    }
    Ok(f)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CutoffConfig {
    pub rho: f64,
}

/// Norm names accepted in functional specs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormName {
    L2,
    H1,
    L4,
    W14,
    Linf,
    Sobolev(f64),
}

impl NormName {
    pub fn to_norm(self) -> Norm {
        match self {
            NormName::L2 => Norm::L2,
            NormName::H1 => Norm::Sobolev(1.0),
            NormName::L4 => Norm::L4,
            NormName::W14 => Norm::W14,
            NormName::Linf => Norm::LInf,
            NormName::Sobolev(s) => Norm::Sobolev(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum FunctionalSpec {
    Constant {
        value: f64,
    },
    Mode {
        k: usize,
        #[serde(default)]
        sine: bool,
        #[serde(default = "one")]
        scale: f64,
        #[serde(default = "yes")]
        bounded: bool,
    },
    Norm {
        norm: NormName,
        #[serde(default = "one")]
        scale: f64,
        #[serde(default = "yes")]
        bounded: bool,
    },
}

impl FunctionalSpec {
    pub fn build(&self) -> Functional {
        match *self {
            FunctionalSpec::Constant { value } => Functional::constant(value),
            FunctionalSpec::Mode { k, sine, scale, bounded } => {
                if sine {
                    Functional::sine_mode(k, scale, bounded)
                } else {
                    Functional::mode(k, scale, bounded)
                }
            }
            FunctionalSpec::Norm { norm, scale, bounded } => Functional::norm(norm.to_norm(), scale, bounded),
        }
    }

    pub fn from_functional(f: &Functional) -> Self {
        match &f.kind {
            FunctionalKind::Constant(v) => FunctionalSpec::Constant { value: *v },
            FunctionalKind::Mode { k, sine, scale } => {
                FunctionalSpec::Mode { k: *k, sine: *sine, scale: *scale, bounded: f.bounded }
            }
            FunctionalKind::Norm { norm, scale } => FunctionalSpec::Norm {
                norm: match norm {
                    Norm::L2 => NormName::L2,
                    Norm::Sobolev(s) if *s == 1.0 => NormName::H1,
                    Norm::Sobolev(s) => NormName::Sobolev(*s),
                    Norm::L4 => NormName::L4,
                    Norm::W14 => NormName::W14,
                    Norm::LInf => NormName::Linf,
                },
                scale: *scale,
                bounded: f.bounded,
            },
        }
    }
}

fn default_functionals() -> Vec<FunctionalSpec> {
    Functional::default_set().iter().map(FunctionalSpec::from_functional).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarkovConfig {
    #[serde(default = "default_paths")]
    pub paths: usize,
    #[serde(default = "default_markov_t")]
    pub t: f64,
    #[serde(default = "default_x")]
    pub x: Vec<ModeValue>,
    #[serde(default = "default_direction")]
    pub direction: Vec<ModeValue>,
    #[serde(default = "default_fd_eps")]
    pub fd_eps: f64,
    #[serde(default = "default_scales")]
    pub scales: Vec<f64>,
    #[serde(default = "default_rho_grid")]
    pub rho_grid: Vec<f64>,
    #[serde(default = "default_eps_grid")]
    pub eps_grid: Vec<f64>,
    #[serde(default = "default_restart")]
    pub restart: Vec<[f64; 2]>,
    #[serde(default = "default_functionals")]
    pub functionals: Vec<FunctionalSpec>,
}

fn default_paths() -> usize {
    1000
}
fn default_markov_t() -> f64 {
    0.5
}
fn default_x() -> Vec<ModeValue> {
    vec![ModeValue { k: 1, re: 0.05, im: 0.0 }]
}
fn default_direction() -> Vec<ModeValue> {
    vec![ModeValue { k: 1, re: 0.5, im: 0.0 }]
}
fn default_fd_eps() -> f64 {
    1e-3
}
fn default_scales() -> Vec<f64> {
    vec![1e-1, 1e-2, 1e-3, 1e-4]
}
fn default_rho_grid() -> Vec<f64> {
    vec![1.0, 2.0, 4.0]
}
fn default_eps_grid() -> Vec<f64> {
    vec![0.01, 0.05, 0.1]
}
fn default_restart() -> Vec<[f64; 2]> {
    vec![[0.25, 0.5], [0.5, 1.0], [0.2, 1.0]]
}

impl Default for MarkovConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields default")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErgodicitySettings {
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_t_grid")]
    pub t_grid: Vec<f64>,
    #[serde(default = "default_burn_in")]
    pub burn_in: f64,
    #[serde(default = "default_r_grid")]
    pub r_grid: Vec<f64>,
    /// Damping of the auxiliary OU process; chosen adaptively when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default = "one")]
    pub c_star: f64,
    #[serde(default = "default_erg_paths")]
    pub paths: usize,
    #[serde(default = "default_sample_every")]
    pub sample_every: usize,
    #[serde(default = "default_tail_eps")]
    pub tail_eps: f64,
    #[serde(default = "default_starts")]
    pub starts: Vec<Vec<ModeValue>>,
    #[serde(default = "default_uniqueness_t")]
    pub uniqueness_t: f64,
    #[serde(default = "default_uniqueness_every")]
    pub uniqueness_every: usize,
    #[serde(default = "default_erg_functionals")]
    pub functionals: Vec<FunctionalSpec>,
    #[serde(default = "default_excursion_horizon")]
    pub excursion_horizon: f64,
}

fn default_gamma() -> f64 {
    1.3
}
fn default_t_grid() -> Vec<f64> {
    vec![50.0, 100.0, 200.0]
}
fn default_burn_in() -> f64 {
    20.0
}
fn default_r_grid() -> Vec<f64> {
    vec![1.0, 2.0, 4.0, 8.0, 16.0]
}
fn default_erg_paths() -> usize {
    8
}
fn default_sample_every() -> usize {
    50
}
fn default_tail_eps() -> f64 {
    0.05
}
fn default_starts() -> Vec<Vec<ModeValue>> {
    vec![
        vec![],
        vec![ModeValue { k: 1, re: 1.0, im: 0.0 }],
        vec![ModeValue { k: 2, re: 0.0, im: 1.0 }],
    ]
}
fn default_uniqueness_t() -> f64 {
    200.0
}
fn default_uniqueness_every() -> usize {
    2000
}
fn default_erg_functionals() -> Vec<FunctionalSpec> {
    vec![
        FunctionalSpec::Norm { norm: NormName::L2, scale: 1.0, bounded: false },
        FunctionalSpec::Norm { norm: NormName::H1, scale: 1.0, bounded: false },
        FunctionalSpec::Mode { k: 1, sine: false, scale: 1.0, bounded: false },
        FunctionalSpec::Mode { k: 2, sine: false, scale: 1.0, bounded: false },
    ]
}
fn default_excursion_horizon() -> f64 {
    100.0
}

impl Default for ErgodicitySettings {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields default")
    }
}

impl ErgodicitySettings {
    pub fn to_config(&self, alpha: f64) -> Result<ErgodicityConfig> {
        let cfg = ErgodicityConfig {
            gamma: self.gamma,
            t_grid: self.t_grid.clone(),
            burn_in: self.burn_in,
            r_grid: self.r_grid.clone(),
            alpha,
            functionals: self.functionals.iter().map(FunctionalSpec::build).collect(),
            paths: self.paths,
            sample_every: self.sample_every,
            tail_eps: self.tail_eps,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnergySettings {
    #[serde(default)]
    pub alpha: f64,
    /// Tolerance is `tol_scale * dt`; fitted from the data when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol_scale: Option<f64>,
    #[serde(default = "default_energy_runs")]
    pub runs: usize,
    #[serde(default)]
    pub x: Vec<ModeValue>,
}

fn default_energy_runs() -> usize {
    4
}

impl Default for EnergySettings {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields default")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SteerSettings {
    #[serde(default)]
    pub x: Vec<ModeValue>,
    #[serde(default = "default_target")]
    pub y: Vec<ModeValue>,
    #[serde(default = "default_steer_rho")]
    pub rho: f64,
    #[serde(default = "default_steer_tol")]
    pub tolerance: f64,
}

fn default_target() -> Vec<ModeValue> {
    vec![ModeValue { k: 1, re: 0.01, im: 0.0 }]
}
fn default_steer_rho() -> f64 {
    10.0
}
fn default_steer_tol() -> f64 {
    1e-6
}

impl Default for SteerSettings {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields default")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhiSettings {
    #[serde(default = "default_knots")]
    pub knots: usize,
    /// CSV of nonnegative samples, one per line or in the first column.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<String>,
}

fn default_knots() -> usize {
    crate::ergodicity::DEFAULT_KNOTS
}

impl Default for PhiSettings {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields default")
    }
}

/// Full experiment configuration. Only `seed` is mandatory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default)]
    pub integrator: IntegratorSettings,
    #[serde(default)]
    pub initial: Vec<ModeValue>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cutoff: Option<CutoffConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub markov: Option<MarkovConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ergodicity: Option<ErgodicitySettings>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub energy: Option<EnergySettings>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steer: Option<SteerSettings>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi: Option<PhiSettings>,
    #[serde(default = "default_output_dir")]
    pub output_dir: String,
}

fn default_output_dir() -> String {
    "out".into()
}

/// Environment variable overriding `output_dir`.
pub const OUTPUT_DIR_ENV: &str = "GROWTH_SPDE_OUT";

impl ExperimentConfig {
    /// Parses JSON text, fills defaults and validates.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text).map_err(parse_error)?;
        Self::from_value(value)
    }

    pub fn from_value(value: Value) -> Result<Self> {
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(value).map_err(|e| {
            let path = e.path().to_string();
            Error::schema(if path == "." { "<root>".to_string() } else { path }, e.into_inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical JSON: every default written out, fields in schema order.
    pub fn normalized_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the canonical JSON.
    pub fn hash(&self) -> String {
        crate::io::sha256_hex(self.normalized_json().as_bytes())
    }

    pub fn validate(&self) -> Result<()> {
        let g = &self.grid;
        if !(g.length.is_finite() && g.length > 0.0) {
            return Err(Error::schema("grid.length", "must be > 0"));
        }
        if g.n < 16 || !g.n.is_multiple_of(2) {
            return Err(Error::schema("grid.n", "must be even and >= 16"));
        }
        let i = &self.integrator;
        if !(i.dt > 0.0 && i.dt.is_finite()) {
            return Err(Error::schema("integrator.dt", "must be > 0"));
        }
        if !(i.horizon > 0.0 && i.horizon.is_finite()) {
            return Err(Error::schema("integrator.horizon", "must be > 0"));
        }
        if i.store_every == 0 {
            return Err(Error::schema("integrator.store_every", "must be >= 1"));
        }
        if let Some(d) = self.noise.delta {
            if !(d > 0.0) {
                return Err(Error::schema("noise.delta", "must be > 0 (alpha_k >= delta > 0)"));
            }
        }
        if let Some(p) = self.noise.alpha_decay {
            if !(p >= 0.0 && p.is_finite()) {
                return Err(Error::schema("noise.alpha_decay", "must be >= 0"));
            }
        } else if !self.noise.white {
            return Err(Error::schema("noise", "non-white noise needs alpha_decay"));
        }
        let assumption = self.markov.is_some() || self.ergodicity.is_some();
        if assumption && !self.noise.white && self.noise.delta.is_none() {
            return Err(Error::schema(
                "noise.delta",
                "markov and ergodicity experiments need a lower bound delta > 0 on the amplitudes",
            ));
        }
        if let Some(c) = &self.cutoff {
            if !(c.rho > 0.0) {
                return Err(Error::schema("cutoff.rho", "must be > 0"));
            }
        }
        if let Some(e) = &self.ergodicity {
            if !(e.gamma > GAMMA_RANGE.0 && e.gamma < GAMMA_RANGE.1) {
                return Err(Error::schema("ergodicity.gamma", format!("must lie in (5/4, 3/2), got {}", e.gamma)));
            }
            if e.t_grid.is_empty() || e.t_grid.iter().any(|t| !(*t > 0.0)) {
                return Err(Error::schema("ergodicity.t_grid", "must be nonempty and positive"));
            }
            if e.paths == 0 || e.sample_every == 0 || e.uniqueness_every == 0 {
                return Err(Error::schema("ergodicity", "paths and sample spacings must be >= 1"));
            }
            if let Some(a) = e.alpha {
                if !(a >= 0.0) {
                    return Err(Error::schema("ergodicity.alpha", "must be >= 0"));
                }
            }
        }
        if let Some(m) = &self.markov {
            if m.paths < 2 {
                return Err(Error::schema("markov.paths", "must be >= 2"));
            }
            if !(m.t > 0.0) {
                return Err(Error::schema("markov.t", "must be > 0"));
            }
            for (j, p) in m.restart.iter().enumerate() {
                if !(p[0] >= 0.0 && p[0] < p[1]) {
                    return Err(Error::schema(format!("markov.restart[{j}]"), "need 0 <= s < t"));
                }
            }
        }
        if let Some(p) = &self.phi {
            if p.knots < 2 {
                return Err(Error::schema("phi.knots", "must be >= 2"));
            }
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<Arc<Grid>> {
        Grid::new(self.grid.length, self.grid.n)
    }

    pub fn noise_spec(&self, grid: &Grid) -> Result<NoiseSpec> {
        match self.noise.alpha_decay {
            Some(p) => NoiseSpec::decaying(grid, p, self.noise.delta),
            None => Ok(NoiseSpec::white(grid)),
        }
    }

    pub fn integrator(&self) -> Result<IntegratorConfig> {
        let i = &self.integrator;
        Ok(IntegratorConfig::new(i.dt, i.horizon, i.instability)?
            .with_nonlinearity(i.nonlinearity)
            .with_store_every(i.store_every))
    }

    pub fn cutoff_spec(&self) -> Result<Option<CutoffSpec>> {
        self.cutoff.map(|c| CutoffSpec::new(c.rho)).transpose()
    }

    pub fn ensemble(&self, grid: &Arc<Grid>) -> Result<Ensemble> {
        Ok(Ensemble::new(grid, self.noise_spec(grid)?, self.integrator.dt, self.seed)
            .with_instability(self.integrator.instability)
            .with_nonlinearity(self.integrator.nonlinearity)
            .with_cutoff(self.cutoff_spec()?))
    }

    /// `output_dir`, unless overridden by the environment.
    pub fn output_dir(&self) -> String {
        std::env::var(OUTPUT_DIR_ENV).unwrap_or_else(|_| self.output_dir.clone())
    }
}

fn parse_error(e: serde_json::Error) -> Error {
    Error::ConfigParse { line: e.line(), column: e.column(), message: e.to_string() }
}

/// Sets `key.path = value` inside a JSON object, creating objects as needed.
pub fn apply_override(root: &mut Value, key: &str, value: Value) -> Result<()> {
    let mut cur = root;
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::schema(key, "empty path segment in override"));
    }
    for (j, part) in parts.iter().enumerate() {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| Error::schema(parts[..j].join("."), "override target is not an object"))?;
        if j + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        cur = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("loop returns on the last segment")
}

/// Parses an override value as JSON, falling back to a plain string.
pub fn override_value(text: &str) -> Value {
    serde_json::from_str(text).unwrap_or_else(|_| Value::String(text.to_string()))
}

/// Reads, overrides, parses and validates a config file.
pub fn load_config_with(path: &Path, overrides: &[(String, Value)]) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut value: Value = serde_json::from_str(&text).map_err(parse_error)?;
    if !value.is_object() {
        return Err(Error::schema("<root>", "config must be a JSON object"));
    }
    for (k, v) in overrides {
        apply_override(&mut value, k, v.clone())?;
    }
    ExperimentConfig::from_value(value)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    load_config_with(path, &[])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = ExperimentConfig::from_json(r#"{"seed": 7}"#).unwrap();
        assert_eq!(c.grid.n, 64);
        assert_eq!(c.grid.length, 2.0 * std::f64::consts::PI);
        assert_eq!(c.integrator.dt, 1e-3);
        assert!(c.noise.white);
    }

    #[test]
    fn missing_seed_is_rejected() {
        match ExperimentConfig::from_json("{}") {
            Err(Error::ConfigSchema { message, .. }) => assert!(message.contains("seed")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn gamma_outside_range_names_constraint() {
        let e = ExperimentConfig::from_json(r#"{"seed": 1, "ergodicity": {"gamma": 1.1}}"#).unwrap_err();
        match e {
            Error::ConfigSchema { field, message } => {
                assert_eq!(field, "ergodicity.gamma");
                assert!(message.contains("(5/4, 3/2)"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn syntax_errors_carry_position() {
        match ExperimentConfig::from_json("{\n  \"seed\": 1,\n  oops\n}") {
            Err(Error::ConfigParse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn schema_errors_carry_field_path() {
        match ExperimentConfig::from_json(r#"{"seed": 1, "grid": {"n": "many"}}"#) {
            Err(Error::ConfigSchema { field, .. }) => assert_eq!(field, "grid.n"),
            other => panic!("{other:?}"),
        }
        assert!(ExperimentConfig::from_json(r#"{"seed": 1, "gird": {}}"#).is_err());
    }

    #[test]
    fn nonpositive_delta_is_rejected() {
        assert!(ExperimentConfig::from_json(r#"{"seed": 1, "noise": {"delta": 0.0}}"#).is_err());
        let e = ExperimentConfig::from_json(r#"{"seed": 1, "noise": {"white": false, "alpha_decay": 1.0}, "markov": {}}"#);
        assert!(matches!(e, Err(Error::ConfigSchema { .. })));
    }

    #[test]
    fn round_trip_is_normalizing() {
        let text = r#"{"seed": 3, "markov": {"paths": 50}, "ergodicity": {}, "cutoff": {"rho": 5}}"#;
        let a = ExperimentConfig::from_json(text).unwrap();
        let b = ExperimentConfig::from_json(&a.normalized_json()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.normalized_json(), b.normalized_json());
        assert_eq!(a.hash(), b.hash());
    }

    #[test]
    fn overrides_apply_dotted_paths() {
        let mut v: Value = serde_json::from_str(r#"{"seed": 1}"#).unwrap();
        apply_override(&mut v, "grid.n", override_value("32")).unwrap();
        apply_override(&mut v, "integrator.instability", override_value("false")).unwrap();
        let c = ExperimentConfig::from_value(v).unwrap();
        assert_eq!(c.grid.n, 32);
        assert!(!c.integrator.instability);
    }

    #[test]
    fn states_are_built_from_modes() {
        let g = Grid::new(1.0, 16).unwrap();
        let f = build_state(&g, &[ModeValue { k: 2, re: 0.5, im: -1.0 }]).unwrap();
        assert_eq!(f.coeffs()[1], Complex64::new(0.5, -1.0));
        assert!(build_state(&g, &[ModeValue { k: 8, re: 1.0, im: 0.0 }]).is_err());
    }
}
