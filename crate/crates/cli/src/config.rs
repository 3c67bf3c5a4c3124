use std::fmt;
use std::path::Path;

use momenta_core::model::DEFAULT_RELATIVE_ENERGY_WIDTH;
use momenta_core::quadrature::{McOracleSpec, QuadratureSpec};
use serde::{Deserialize, Serialize};

/// Input that fails to parse or validate. Maps to exit status 2.
#[derive(Debug)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "config error at line {l}: {}", self.message),
            None => write!(f, "config error: {}", self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

fn one() -> f64 {
    1.0
}
fn default_delta_p0() -> f64 {
    0.05
}
fn default_t() -> f64 {
    1000.0
}
fn default_gamma_cells() -> usize {
    512
}
fn default_sample_count() -> usize {
    100_000
}

/// Everything a run needs. Missing keys take the documented defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "one")]
    pub m1: f64,
    #[serde(default = "one")]
    pub m2: f64,
    #[serde(rename = "E0", default = "one")]
    pub e0: f64,
    #[serde(rename = "deltaP0", default = "default_delta_p0")]
    pub delta_p0: f64,
    /// Defaults to 0.05·E0.
    #[serde(rename = "deltaE", default, skip_serializing_if = "Option::is_none")]
    pub delta_e: Option<f64>,
    /// Fixed spectrum prefactor N; by default N makes the total probability 1.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalization: Option<f64>,
    #[serde(default = "default_t")]
    pub t: f64,
    /// Detection radii; default to v_j·t.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r2: Option<f64>,
    #[serde(default = "default_gamma_cells")]
    pub gamma_cells: usize,
    #[serde(default)]
    pub radial_grid: RadialGridConfig,
    #[serde(default)]
    pub quadrature: QuadratureSpec,
    #[serde(default)]
    pub oracle: McOracleSpec,
    #[serde(default)]
    pub shell_grid: ShellGridConfig,
    #[serde(default = "default_sample_count")]
    pub sample_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Output directory; `--out` takes precedence.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
    #[serde(default)]
    pub single: SingleConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scan: Option<ScanConfig>,
    #[serde(default)]
    pub validate: ValidateConfig,
}

/// Radii for the back-to-back radial profile; the range defaults to
/// 0.8–1.2 times v1·t.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct RadialGridConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max: Option<f64>,
    pub points: usize,
}

impl Default for RadialGridConfig {
    fn default() -> Self {
        RadialGridConfig {
            min: None,
            max: None,
            points: 201,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields, default)]
pub struct ShellGridConfig {
    pub radial_cells: usize,
    pub angular_cells: usize,
}

impl Default for ShellGridConfig {
    fn default() -> Self {
        ShellGridConfig {
            radial_cells: 160,
            angular_cells: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields, default)]
pub struct SingleConfig {
    pub sigma0: f64,
    pub k: f64,
    pub m: f64,
    pub r0: f64,
    pub times: Vec<f64>,
    pub points: usize,
}

impl Default for SingleConfig {
    fn default() -> Self {
        SingleConfig {
            sigma0: 1.0,
            k: 1.0,
            m: 1.0,
            r0: 0.0,
            times: vec![0.0, 1.0, 10.0, 100.0],
            points: 4096,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum ScanKind {
    Radius,
    #[serde(rename = "deltaP0")]
    DeltaP0,
    Crossover,
}

fn default_crossover_points() -> usize {
    9
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct ScanConfig {
    pub variable: ScanKind,
    /// Radii for a radius scan, Δp₀ values for a deltaP0 scan.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub values: Vec<f64>,
    /// Fixed radius of a deltaP0 scan.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    /// Log-spaced radii from r*/10 to 10·r* in a crossover scan.
    #[serde(default = "default_crossover_points")]
    pub points: usize,
}

fn default_norm_times() -> Vec<f64> {
    vec![500.0, 1000.0, 2000.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct ValidateConfig {
    /// Time of the oracle comparison; defaults to min(t, 10).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle_t: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle_r1: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle_r2: Option<[f64; 3]>,
    #[serde(default = "default_norm_times")]
    pub norm_times: Vec<f64>,
}

impl Default for ValidateConfig {
    fn default() -> Self {
        ValidateConfig {
            oracle_t: None,
            oracle_r1: None,
            oracle_r2: None,
            norm_times: default_norm_times(),
        }
    }
}

impl RunConfig {
    pub fn delta_e(&self) -> f64 {
        self.delta_e.unwrap_or(DEFAULT_RELATIVE_ENERGY_WIDTH * self.e0)
    }

    /// The config with defaults that depend on other fields filled in and
    /// the output location removed, as embedded in summaries.
    pub fn resolved(&self) -> RunConfig {
        RunConfig {
            delta_e: Some(self.delta_e()),
            output: None,
            ..self.clone()
        }
    }
}

/// Reads, parses and validates a config file.
pub fn load_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
        line: None,
        message: format!("cannot read {}: {e}", path.display()),
    })?;
    parse_config(&text)
}

pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let cfg: RunConfig = serde_json::from_str(text).map_err(|e| {
        let line = (e.line() > 0).then_some(e.line());
        let mut message = strip_position(&e.to_string());
        if let Some(hint) = suggestion(&message) {
            message = format!("{message}; did you mean `{hint}`?");
        }
        ConfigError { line, message }
    })?;
    validate(&cfg).map_err(|(key, message)| ConfigError {
        line: line_of_key(text, key),
        message: format!("`{key}` {message}"),
    })?;
    Ok(cfg)
}

fn strip_position(msg: &str) -> String {
    match msg.rfind(" at line ") {
        Some(i) => msg[..i].to_string(),
        None => msg.to_string(),
    }
}

/// For "unknown field `x`, expected one of `a`, `b`" picks the closest name.
fn suggestion(message: &str) -> Option<String> {
    if !message.starts_with("unknown field") && !message.starts_with("unknown variant") {
        return None;
    }
    let names: Vec<&str> = message.split('`').skip(1).step_by(2).collect();
    let (unknown, candidates) = names.split_first()?;
    candidates
        .iter()
        .map(|c| (strsim::damerau_levenshtein(unknown, c), *c))
        .filter(|(d, c)| *d <= 2.max(c.len() / 3))
        .min()
        .map(|(_, c)| c.to_string())
}

fn line_of_key(text: &str, key: &str) -> Option<usize> {
    let needle = format!("\"{key}\"");
    text.find(&needle).map(|i| text[..i].lines().count().max(1) + usize::from(text[..i].ends_with('\n')))
}

type Invalid = (&'static str, String);

fn positive(key: &'static str, v: f64) -> Result<(), Invalid> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err((key, format!("must be finite and > 0, got {v}")))
    }
}

fn increasing(key: &'static str, v: &[f64]) -> Result<(), Invalid> {
    if v.windows(2).any(|w| !(w[1] > w[0])) {
        Err((key, "must be strictly increasing".to_string()))
    } else {
        Ok(())
    }
}

fn validate(c: &RunConfig) -> Result<(), Invalid> {
    positive("m1", c.m1)?;
    positive("m2", c.m2)?;
    positive("E0", c.e0)?;
    // a nonpositive width would leave the zero spectrum, which has nothing to simulate
    positive("deltaP0", c.delta_p0)?;
    positive("deltaE", c.delta_e())?;
    if let Some(n) = c.normalization {
        if n == 0.0 {
            return Err(("normalization", "is zero, so the spectrum vanishes and there is nothing to simulate".to_string()));
        }
        positive("normalization", n)?;
    }
    positive("t", c.t)?;
    if let Some(r) = c.r1 {
        positive("r1", r)?;
    }
    if let Some(r) = c.r2 {
        positive("r2", r)?;
    }
    if c.gamma_cells < 2 {
        return Err(("gammaCells", format!("must be >= 2, got {}", c.gamma_cells)));
    }
    let rg = &c.radial_grid;
    if rg.points < 3 {
        return Err(("points", format!("radial grid needs >= 3 points, got {}", rg.points)));
    }
    if let (Some(lo), Some(hi)) = (rg.min, rg.max) {
        if !(lo >= 0.0 && hi > lo) {
            return Err(("max", format!("radial grid needs 0 <= min < max, got [{lo}, {hi}]")));
        }
    }
    if let Err(momenta_core::Error::Domain { field, reason }) = c.quadrature.validate() {
        return Err((field, reason));
    }
    if let Err(momenta_core::Error::Domain { field, reason }) = c.oracle.validate() {
        return Err((field, reason));
    }
    if c.shell_grid.radial_cells < 4 || c.shell_grid.angular_cells < 4 {
        return Err(("shellGrid", "needs at least 4 cells per axis".to_string()));
    }
    if c.sample_count < momenta_core::correlation_stats::MIN_EVENTS {
        return Err((
            "sampleCount",
            format!("must be >= {}, got {}", momenta_core::correlation_stats::MIN_EVENTS, c.sample_count),
        ));
    }
    let s = &c.single;
    positive("sigma0", s.sigma0)?;
    positive("m", s.m)?;
    if s.times.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
        return Err(("times", "must be finite and >= 0".to_string()));
    }
    increasing("times", &s.times)?;
    if s.points < 16 {
        return Err(("points", format!("single-particle grid needs >= 16 points, got {}", s.points)));
    }
    if let Some(scan) = &c.scan {
        match scan.variable {
            ScanKind::Radius | ScanKind::DeltaP0 => {
                if scan.values.len() < 4 {
                    return Err(("values", "a scan needs at least 4 values".to_string()));
                }
                for v in &scan.values {
                    positive("values", *v)?;
                }
                increasing("values", &scan.values)?;
                if scan.variable == ScanKind::DeltaP0 {
                    match scan.radius {
                        Some(r) => positive("radius", r)?,
                        None => return Err(("radius", "is required for a deltaP0 scan".to_string())),
                    }
                }
            }
            ScanKind::Crossover => {
                if scan.points < 3 {
                    return Err(("points", "a crossover scan needs at least 3 radii".to_string()));
                }
            }
        }
    }
    let v = &c.validate;
    if let Some(t) = v.oracle_t {
        positive("oracleT", t)?;
    }
    for t in &v.norm_times {
        positive("normTimes", *t)?;
    }
    increasing("normTimes", &v.norm_times)?;
    Ok(())
}
