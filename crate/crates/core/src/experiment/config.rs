//! Flat `key=value` experiment configuration with dotted section prefixes.
//!
//! ```text
//! # comment
//! seed=7
//! population.mu=2.1
//! drift_analysis.levels=1.8,1.95,2.1,2.25,2.4
//! scenario.adversary.server_keys=true
//! ```
//!
//! Every key is optional and unknown or repeated keys are errors. Adversary
//! fields only take effect with `scenario.adversary.enabled=true`.
//! [`ExperimentConfig::to_text`] writes every key, so parsing its output
//! yields an equal config.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::netsim::{AdversaryConfig, ScenarioConfig};
use crate::protocol::CipherKind;
use crate::reram_model::{DriftLaw, PopulationParams, SigmaLaw};

#[derive(Debug, Clone, PartialEq)]
pub struct TernaryStudy {
    pub margins: Vec<f64>,
    pub trials: usize,
    pub cells: usize,
    /// Decision threshold; the population mean when unset.
    pub threshold: Option<f64>,
}

impl Default for TernaryStudy {
    fn default() -> Self {
        Self { margins: vec![0.0, 0.1, 0.2, 0.3], trials: 1000, cells: 128, threshold: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output: Option<String>,
    pub population: PopulationParams,
    pub drift: DriftLaw,
    pub n_states: usize,
    /// Effective population means analyzed by the drift command, volts.
    pub drift_levels: Vec<f64>,
    /// `(sigma_pop, sigma_cell)` pairs for the sigma-ratio command.
    pub sigma_grid: Vec<(f64, f64)>,
    pub ternary: TernaryStudy,
    pub scenario: ScenarioConfig,
}

pub fn default_sigma_grid() -> Vec<(f64, f64)> {
    [0.54, 0.4, 0.3, 0.2, 0.1, 0.05].iter().map(|p| (*p, 0.05)).collect()
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            output: None,
            population: PopulationParams::default(),
            drift: DriftLaw::default(),
            n_states: 8,
            drift_levels: vec![1.8, 1.95, 2.1, 2.25, 2.4],
            sigma_grid: default_sigma_grid(),
            ternary: TernaryStudy::default(),
            scenario: ScenarioConfig::default(),
        }
    }
}

fn bad(key: &str, value: &str, what: &str) -> Error {
    Error::Config(format!("{key}={value}: expected {what}"))
}

fn num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| bad(key, value, std::any::type_name::<T>()))
}

fn flag(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(bad(key, value, "true or false")),
    }
}

fn list(key: &str, value: &str) -> Result<Vec<f64>> {
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| num(key, v.trim())).collect()
}

fn pairs(key: &str, value: &str) -> Result<Vec<(f64, f64)>> {
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value
        .split(',')
        .map(|p| {
            let (a, b) = p.trim().split_once(':').ok_or_else(|| bad(key, value, "a:b pairs"))?;
            Ok((num(key, a)?, num(key, b)?))
        })
        .collect()
}

fn optional(key: &str, value: &str) -> Result<Option<f64>> {
    if value == "auto" {
        Ok(None)
    } else {
        num(key, value).map(Some)
    }
}

fn join(values: &[f64]) -> String {
    values.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
}

fn join_pairs(values: &[(f64, f64)]) -> String {
    values.iter().map(|(a, b)| format!("{a}:{b}")).collect::<Vec<_>>().join(",")
}

fn opt(value: Option<f64>) -> String {
    value.map_or_else(|| "auto".to_string(), |v| v.to_string())
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut config = Self::default();
        let mut seen = BTreeSet::new();
        let mut adversary = AdversaryConfig::default();
        let mut enabled = false;
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", n + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("line {}: duplicate key {key}", n + 1)));
            }
            if key == "scenario.adversary.enabled" {
                enabled = flag(key, value)?;
            } else if let Some(field) = key.strip_prefix("scenario.adversary.") {
                set_adversary(&mut adversary, field, key, value)?;
            } else {
                config.set(key, value)?;
            }
        }
        config.scenario.adversary = enabled.then_some(adversary);
        config.validate()?;
        Ok(config)
    }

    fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let s = &mut self.scenario;
        match key {
            "seed" => self.seed = num(key, v)?,
            "output" => self.output = (!v.is_empty()).then(|| v.to_string()),
            "population.mu" => self.population.mu_pop = num(key, v)?,
            "population.sigma" => self.population.sigma_pop = num(key, v)?,
            "population.cells" => self.population.cell_count = num(key, v)?,
            "population.sigma_cell" => self.population.sigma_law = SigmaLaw::Constant(num(key, v)?),
            "population.sigma_table" => self.population.sigma_law = SigmaLaw::Table(pairs(key, v)?),
            "drift.temp_coefficient" => self.drift.temp_coefficient = num(key, v)?,
            "drift.reference_temp_c" => self.drift.reference_temp_c = num(key, v)?,
            "quantizer.n_states" => self.n_states = num(key, v)?,
            "drift_analysis.levels" => self.drift_levels = list(key, v)?,
            "sigma_ratio.grid" => self.sigma_grid = pairs(key, v)?,
            "ternary.margins" => self.ternary.margins = list(key, v)?,
            "ternary.trials" => self.ternary.trials = num(key, v)?,
            "ternary.cells" => self.ternary.cells = num(key, v)?,
            "ternary.threshold" => self.ternary.threshold = optional(key, v)?,
            "scenario.devices" => s.devices = num(key, v)?,
            "scenario.rounds" => s.rounds = num(key, v)?,
            "scenario.cells_per_device" => s.cells_per_device = num(key, v)?,
            "scenario.n_states" => s.n_states = num(key, v)?,
            "scenario.temperature_min" => s.temperature_range.0 = num(key, v)?,
            "scenario.temperature_max" => s.temperature_range.1 = num(key, v)?,
            "scenario.bias_min" => s.bias_range.0 = num(key, v)?,
            "scenario.bias_max" => s.bias_range.1 = num(key, v)?,
            "scenario.warmup_temperatures" => s.warmup_temperatures = list(key, v)?,
            "scenario.threshold" => s.threshold = optional(key, v)?,
            "scenario.calibration_trials" => s.calibration_trials = num(key, v)?,
            "scenario.drop_probability" => s.drop_probability = num(key, v)?,
            "scenario.latency_ticks" => s.latency_ticks = num(key, v)?,
            "scenario.retry_limit" => s.retry_limit = num(key, v)?,
            "scenario.cipher" => {
                s.cipher = CipherKind::parse(v).ok_or_else(|| bad(key, v, "keystream or x25519"))?
            }
            _ => return Err(Error::Config(format!("unknown key {key}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |e: Error| match e {
            Error::Config(m) => Error::Config(m),
            other => Error::Config(other.to_string()),
        };
        self.population.validate().map_err(cfg)?;
        self.drift.validate().map_err(cfg)?;
        if !(2..=crate::multistate::MAX_STATES).contains(&self.n_states) {
            return Err(Error::Config(format!("quantizer.n_states {} outside 2..=256", self.n_states)));
        }
        if self.n_states > self.population.cell_count {
            return Err(Error::Config("quantizer.n_states exceeds population.cells".into()));
        }
        if self.drift_levels.iter().any(|l| !l.is_finite()) {
            return Err(Error::Config("drift levels must be finite".into()));
        }
        if self.sigma_grid.iter().any(|(p, c)| !(p.is_finite() && *p > 0.0 && c.is_finite() && *c >= 0.0)) {
            return Err(Error::Config("sigma_ratio.grid needs sigma_pop > 0 and sigma_cell >= 0".into()));
        }
        let t = &self.ternary;
        if t.trials == 0 || t.cells == 0 || t.margins.iter().any(|m| !(m.is_finite() && *m >= 0.0)) {
            return Err(Error::Config("ternary study needs trials, cells and margins >= 0".into()));
        }
        self.scenario_config().validate().map_err(cfg)
    }

    /// The netsim scenario with the experiment's population, drift and seed.
    pub fn scenario_config(&self) -> ScenarioConfig {
        ScenarioConfig {
            population: self.population.clone(),
            drift: self.drift,
            seed: self.seed,
            ..self.scenario.clone()
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(out, "{k}={v}");
        };
        let p = &self.population;
        put("seed", self.seed.to_string());
        put("output", self.output.clone().unwrap_or_default());
        put("population.mu", p.mu_pop.to_string());
        put("population.sigma", p.sigma_pop.to_string());
        put("population.cells", p.cell_count.to_string());
        match &p.sigma_law {
            SigmaLaw::Constant(s) => put("population.sigma_cell", s.to_string()),
            SigmaLaw::Table(knots) => put("population.sigma_table", join_pairs(knots)),
        }
        put("drift.temp_coefficient", self.drift.temp_coefficient.to_string());
        put("drift.reference_temp_c", self.drift.reference_temp_c.to_string());
        put("quantizer.n_states", self.n_states.to_string());
        put("drift_analysis.levels", join(&self.drift_levels));
        put("sigma_ratio.grid", join_pairs(&self.sigma_grid));
        put("ternary.margins", join(&self.ternary.margins));
        put("ternary.trials", self.ternary.trials.to_string());
        put("ternary.cells", self.ternary.cells.to_string());
        put("ternary.threshold", opt(self.ternary.threshold));
        let s = &self.scenario;
        put("scenario.devices", s.devices.to_string());
        put("scenario.rounds", s.rounds.to_string());
        put("scenario.cells_per_device", s.cells_per_device.to_string());
        put("scenario.n_states", s.n_states.to_string());
        put("scenario.temperature_min", s.temperature_range.0.to_string());
        put("scenario.temperature_max", s.temperature_range.1.to_string());
        put("scenario.bias_min", s.bias_range.0.to_string());
        put("scenario.bias_max", s.bias_range.1.to_string());
        put("scenario.warmup_temperatures", join(&s.warmup_temperatures));
        put("scenario.threshold", opt(s.threshold));
        put("scenario.calibration_trials", s.calibration_trials.to_string());
        put("scenario.drop_probability", s.drop_probability.to_string());
        put("scenario.latency_ticks", s.latency_ticks.to_string());
        put("scenario.retry_limit", s.retry_limit.to_string());
        put("scenario.cipher", s.cipher.name().to_string());
        put("scenario.adversary.enabled", s.adversary.is_some().to_string());
        if let Some(a) = &s.adversary {
            let c = a.capabilities;
            put("scenario.adversary.server_keys", c.server_keys.to_string());
            put("scenario.adversary.device_keys", c.device_keys.to_string());
            put("scenario.adversary.c1", c.c1.to_string());
            put("scenario.adversary.c2", c.c2.to_string());
            put("scenario.adversary.replay", c.replay.to_string());
            put("scenario.adversary.tamper", c.tamper.to_string());
            put("scenario.adversary.target", a.target.to_string());
            put("scenario.adversary.attempts_per_round", a.attempts_per_round.to_string());
            put("scenario.adversary.all_devices", a.all_devices.to_string());
        }
        out
    }
}

fn set_adversary(adv: &mut AdversaryConfig, field: &str, key: &str, v: &str) -> Result<()> {
    let c = &mut adv.capabilities;
    match field {
        "server_keys" => c.server_keys = flag(key, v)?,
        "device_keys" => c.device_keys = flag(key, v)?,
        "c1" => c.c1 = flag(key, v)?,
        "c2" => c.c2 = flag(key, v)?,
        "replay" => c.replay = flag(key, v)?,
        "tamper" => c.tamper = flag(key, v)?,
        "target" => adv.target = num(key, v)?,
        "attempts_per_round" => adv.attempts_per_round = num(key, v)?,
        "all_devices" => adv.all_devices = flag(key, v)?,
        _ => return Err(Error::Config(format!("unknown key {key}"))),
    }
    Ok(())
}
