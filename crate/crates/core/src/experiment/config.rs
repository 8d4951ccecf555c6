//! JSON experiment configuration, dotted-path overrides, and validation with
//! errors located by line.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::fit::FitTarget;
use super::phantom::PhantomKind;
use crate::error::Result;
use crate::forward_ops::ForwardOperator;
use crate::grid::Grid;
use crate::mdp::{IndexFunction, MdpConfig};
use crate::solver::{InitialGuess, LineSearch, SolveConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Discrepancy principle.
    #[default]
    Mdp,
    /// `α = δ² / (2Ψ(δ))`.
    Index,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Mdp => "mdp",
            Self::Index => "index",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub dims: Vec<usize>,
    /// Defaults to `1/n` per axis.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spacing: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum OperatorConfig {
    Identity,
    Blur {
        #[serde(default = "default_kernel")]
        kernel: Vec<f64>,
    },
    Matrix {
        rows: usize,
        entries: Vec<f64>,
        /// Defaults to the domain cell volume.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        range_weight: Option<f64>,
    },
}

fn default_kernel() -> Vec<f64> {
    vec![0.25, 0.5, 0.25]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PsiConfig {
    pub c: f64,
    pub kappa: f64,
    #[serde(default = "yes")]
    pub concave: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default = "default_grad_tol")]
    pub grad_tol: f64,
    #[serde(default = "default_c1")]
    pub c1: f64,
    #[serde(default = "default_backtrack")]
    pub backtrack: f64,
    #[serde(default = "default_initial_step")]
    pub initial_step: f64,
    #[serde(default = "yes")]
    pub bb_steps: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iters: default_max_iters(),
            grad_tol: default_grad_tol(),
            c1: default_c1(),
            backtrack: default_backtrack(),
            initial_step: default_initial_step(),
            bb_steps: true,
        }
    }
}

impl SolverConfig {
    pub fn to_solve_config(&self) -> SolveConfig<f64> {
        SolveConfig {
            max_iters: self.max_iters,
            grad_tol: self.grad_tol,
            line_search: LineSearch {
                c1: self.c1,
                backtrack: self.backtrack,
                initial_step: self.initial_step,
            },
            initial_guess: InitialGuess::AdjointOfData,
            bb_steps: self.bb_steps,
            record_history: false,
        }
    }
}

fn yes() -> bool {
    true
}
fn default_max_iters() -> usize {
    20_000
}
fn default_grad_tol() -> f64 {
    1e-8
}
fn default_c1() -> f64 {
    1e-4
}
fn default_backtrack() -> f64 {
    0.5
}
fn default_initial_step() -> f64 {
    1.0
}
fn default_tau_low() -> f64 {
    1.1
}
fn default_tau_high() -> f64 {
    1.5
}
fn default_bracket() -> [f64; 2] {
    [1e-8, 1e4]
}
fn default_max_solves() -> usize {
    60
}
fn default_output_dir() -> String {
    "out".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub grid: GridConfig,
    pub operator: OperatorConfig,
    pub phantom: PhantomKind,
    pub beta: f64,
    /// Noise levels, strictly decreasing.
    pub deltas: Vec<f64>,
    #[serde(default)]
    pub strategy: Strategy,
    #[serde(default = "default_tau_low")]
    pub tau_low: f64,
    #[serde(default = "default_tau_high")]
    pub tau_high: f64,
    #[serde(default = "default_bracket")]
    pub alpha_bracket: [f64; 2],
    #[serde(default = "default_max_solves")]
    pub max_solves: usize,
    /// Required by the index strategy; otherwise only used for reporting.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub psi: Option<PsiConfig>,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub fit_target: FitTarget,
    #[serde(default = "default_output_dir")]
    pub output_dir: String,
    /// Measured data CSV for `solve`, replacing the phantom and synthetic noise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub measurement: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn build_grid(&self) -> Result<Grid<f64>> {
        match &self.grid.spacing {
            Some(h) => Grid::new(self.grid.dims.clone(), h.clone()),
            None => Grid::unit(self.grid.dims.clone()),
        }
    }

    pub fn build_operator(&self, grid: &Grid<f64>) -> Result<ForwardOperator<f64>> {
        match &self.operator {
            OperatorConfig::Identity => Ok(ForwardOperator::identity(grid)),
            OperatorConfig::Blur { kernel } => ForwardOperator::blur(grid, kernel.clone()),
            OperatorConfig::Matrix {
                rows,
                entries,
                range_weight,
            } => ForwardOperator::matrix(grid, *rows, entries.clone(), range_weight.unwrap_or(grid.cell_volume())),
        }
    }

    pub fn index_function(&self) -> Option<IndexFunction<f64>> {
        self.psi.map(|p| IndexFunction::PowerLaw { c: p.c, kappa: p.kappa })
    }

    pub fn mdp_config(&self, delta: f64) -> MdpConfig<f64> {
        MdpConfig {
            tau_low: self.tau_low,
            tau_high: self.tau_high,
            delta,
            alpha_bracket: (self.alpha_bracket[0], self.alpha_bracket[1]),
            max_solves: self.max_solves,
            solve_cfg: self.solver.to_solve_config(),
        }
    }

    /// Checks every semantic constraint, reporting the first violation as
    /// `(field path, message)`.
    pub fn validate(&self) -> std::result::Result<(), (String, String)> {
        let fail = |field: &str, msg: String| Err((field.to_string(), msg));
        let dims = &self.grid.dims;
        if dims.is_empty() || dims.len() > 2 {
            return fail("grid.dims", format!("expected 1 or 2 axes, got {}", dims.len()));
        }
        if let Some(&d) = dims.iter().find(|&&d| d < 2) {
            return fail("grid.dims", format!("every axis needs at least 2 cells, got {d}"));
        }
        if let Some(h) = &self.grid.spacing {
            if h.len() != dims.len() || h.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
                return fail("grid.spacing", "needs one positive spacing per axis".into());
            }
        }
        let grid = self.build_grid().map_err(|e| ("grid".to_string(), e.to_string()))?;
        if let Err(e) = self.build_operator(&grid) {
            return fail("operator", e.to_string());
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return fail("beta", format!("must satisfy 0 < beta < 1, got {}", self.beta));
        }
        if self.deltas.is_empty() {
            return fail("deltas", "at least one noise level is required".into());
        }
        if let Some(d) = self.deltas.iter().find(|&&d| !(d > 0.0 && d.is_finite())) {
            return fail("deltas", format!("every delta must be positive, got {d}"));
        }
        if self.deltas.windows(2).any(|w| w[1] >= w[0]) {
            return fail("deltas", "noise levels must be strictly decreasing".into());
        }
        if !(self.tau_low >= 1.0 && self.tau_low.is_finite()) {
            return fail("tau_low", format!("must be at least 1, got {}", self.tau_low));
        }
        if !(self.tau_high >= self.tau_low && self.tau_high.is_finite()) {
            return fail(
                "tau_high",
                format!(
                    "tau ordering violated: need 1 <= tau_low <= tau_high, got tau_low = {}, tau_high = {}",
                    self.tau_low, self.tau_high
                ),
            );
        }
        let [lo, hi] = self.alpha_bracket;
        if !(lo > 0.0 && lo < hi && hi.is_finite()) {
            return fail(
                "alpha_bracket",
                format!("need 0 < alpha_min < alpha_max, got [{lo}, {hi}]"),
            );
        }
        if self.max_solves < 2 {
            return fail("max_solves", format!("must be at least 2, got {}", self.max_solves));
        }
        match (&self.psi, self.strategy) {
            (None, Strategy::Index) => return fail("psi", "the index strategy requires psi = {c, kappa}".into()),
            (Some(p), _) => {
                if let Err(e) = IndexFunction::power_law(p.c, p.kappa, p.concave) {
                    return fail("psi", e.to_string());
                }
            }
            _ => {}
        }
        if let Err(e) = self.solver.to_solve_config().validate() {
            return fail("solver", e.to_string());
        }
        Ok(())
    }
}

/// A configuration that failed to parse or validate, located in its source.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    /// `path:line`, `path`, or the override responsible.
    pub location: String,
    pub field: Option<String>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.field {
            Some(field) => write!(f, "{}: {}: {}", self.location, field, self.message),
            None => write!(f, "{}: {}", self.location, self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

/// A parsed and validated configuration together with its source path and overrides.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub path: PathBuf,
    /// Overrides as given, `key=value`.
    pub overrides: Vec<String>,
}

impl LoadedConfig {
    /// The effective configuration as JSON, defaults filled in.
    pub fn echo(&self) -> Value {
        serde_json::to_value(&self.config).expect("configuration serializes")
    }

    /// `measurement` resolved against the configuration file's directory.
    pub fn measurement_path(&self) -> Option<PathBuf> {
        let m = self.config.measurement.as_ref()?;
        if m.is_absolute() {
            Some(m.clone())
        } else {
            Some(self.path.parent().unwrap_or(Path::new("")).join(m))
        }
    }
}

/// Splits `key=value`; `value` is parsed as JSON and falls back to a string.
pub fn parse_override(raw: &str) -> std::result::Result<(String, Value), String> {
    let (key, value) = raw
        .split_once('=')
        .ok_or_else(|| format!("override {raw:?} is not of the form key=value"))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(format!("override {raw:?} has an empty key segment"));
    }
    let value = serde_json::from_str(value.trim()).unwrap_or_else(|_| Value::String(value.trim().to_string()));
    Ok((key.to_string(), value))
}

/// Sets `root[a][b]... = value` for the dotted `key`, creating objects as needed.
pub fn apply_override(root: &mut Value, key: &str, value: Value) -> std::result::Result<(), String> {
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (k, part) in parts.iter().enumerate() {
        let Value::Object(map) = node else {
            return Err(format!("cannot set {key:?}: {:?} is not an object", parts[..k].join(".")));
        };
        if k + 1 == parts.len() {
            map.insert(part.to_string(), value);
            return Ok(());
        }
        node = map
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("split yields at least one segment")
}

fn strip_position(msg: &str) -> &str {
    match msg.rfind(" at line ") {
        Some(i) => &msg[..i],
        None => msg,
    }
}

/// 1-based line of the first `"key":` occurrence in `text`.
fn find_key_line(text: &str, key: &str) -> Option<usize> {
    let needle = format!("\"{key}\"");
    text.lines().enumerate().find_map(|(i, line)| {
        let at = line.find(&needle)?;
        line[at + needle.len()..].trim_start().starts_with(':').then_some(i + 1)
    })
}

/// Parses `text` (read from `path`), applies `overrides`, and validates.
pub fn parse_config(text: &str, path: &Path, overrides: &[String]) -> std::result::Result<LoadedConfig, ConfigError> {
    let shown = path.display().to_string();
    let at_file = |line: usize| format!("{shown}:{line}");
    let mut value: Value = serde_json::from_str(text).map_err(|e| ConfigError {
        location: at_file(e.line()),
        field: None,
        message: strip_position(&e.to_string()).to_string(),
    })?;
    let mut parsed = Vec::new();
    for raw in overrides {
        let (key, v) = parse_override(raw).map_err(|m| ConfigError {
            location: format!("--set {raw}"),
            field: None,
            message: m,
        })?;
        apply_override(&mut value, &key, v).map_err(|m| ConfigError {
            location: format!("--set {raw}"),
            field: Some(key.clone()),
            message: m,
        })?;
        parsed.push((key, raw.clone()));
    }

    let locate = |field: &str| -> String {
        let hit = parsed
            .iter()
            .rev()
            .find(|(k, _)| k == field || field.starts_with(&format!("{k}.")) || k.starts_with(&format!("{field}.")));
        if let Some((_, raw)) = hit {
            return format!("--set {raw}");
        }
        let leaf = field.rsplit('.').next().unwrap_or(field);
        find_key_line(text, leaf).map(at_file).unwrap_or_else(|| shown.clone())
    };

    let config: ExperimentConfig = match serde_json::from_value(value) {
        Ok(c) => c,
        Err(e) => {
            let msg = strip_position(&e.to_string()).to_string();
            // The file's own error carries a line number; use it unless an override caused the failure.
            let err = match serde_json::from_str::<ExperimentConfig>(text) {
                Err(orig) if strip_position(&orig.to_string()) == msg => ConfigError {
                    location: at_file(orig.line()),
                    field: None,
                    message: msg,
                },
                _ => ConfigError {
                    location: parsed
                        .iter()
                        .map(|(_, r)| format!("--set {r}"))
                        .collect::<Vec<_>>()
                        .join(" "),
                    field: None,
                    message: msg,
                },
            };
            return Err(err);
        }
    };
    config.validate().map_err(|(field, message)| ConfigError {
        location: locate(&field),
        field: Some(field),
        message,
    })?;
    Ok(LoadedConfig {
        config,
        path: path.to_path_buf(),
        overrides: overrides.to_vec(),
    })
}

/// Reads and parses the configuration file at `path`.
pub fn load_config(path: &Path, overrides: &[String]) -> std::result::Result<LoadedConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
        location: path.display().to_string(),
        field: None,
        message: format!("cannot read configuration: {e}"),
    })?;
    parse_config(&text, path, overrides)
}
