//! Statistical reproductions and protocol scenarios behind the command-line
//! front end. Every command is a pure function of its config and returns
//! the bytes of the files it would write.

pub mod config;

use std::fs;
use std::path::{Path, PathBuf};

pub use config::{ExperimentConfig, TernaryStudy};

use crate::error::{Error, Result};
use crate::multistate::{error_vector, StateQuantizer};
use crate::netsim::run_scenario;
use crate::reram_model::{mean_sd, DriftLaw, Environment, PopulationParams, PufArray, SigmaLaw};
use crate::seeding::{derive_seed, domain};
use crate::ternary::{ternary_crp_error, ternary_encode};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Distribution,
    Drift,
    SigmaRatio,
    Ternary,
    Protocol,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Distribution => "distribution",
            Command::Drift => "drift",
            Command::SigmaRatio => "sigma-ratio",
            Command::Ternary => "ternary",
            Command::Protocol => "protocol",
        }
    }
}

/// Files produced by one command. The first file is the primary CSV; any
/// others are written next to it with `suffix` appended to the stem.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommandOutput {
    pub files: Vec<(String, Vec<u8>)>,
}

impl CommandOutput {
    fn single(csv: String) -> Self {
        Self { files: vec![(String::new(), csv.into_bytes())] }
    }

    pub fn primary(&self) -> &[u8] {
        &self.files[0].1
    }

    pub fn file(&self, suffix: &str) -> Option<&[u8]> {
        self.files.iter().find(|(s, _)| s == suffix).map(|(_, b)| b.as_slice())
    }

    /// Path of each file when the primary output goes to `out`.
    pub fn paths(&self, out: &Path) -> Vec<PathBuf> {
        let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        self.files
            .iter()
            .map(|(suffix, _)| {
                if suffix.is_empty() {
                    out.to_path_buf()
                } else {
                    out.with_file_name(format!("{stem}{suffix}"))
                }
            })
            .collect()
    }

    pub fn write(&self, out: &Path) -> Result<Vec<PathBuf>> {
        let paths = self.paths(out);
        for (path, (_, bytes)) in paths.iter().zip(&self.files) {
            fs::write(path, bytes)?;
        }
        Ok(paths)
    }
}

pub fn run(command: Command, config: &ExperimentConfig) -> Result<CommandOutput> {
    Ok(match command {
        Command::Distribution => CommandOutput::single(cmd_distribution(config)?),
        Command::Drift => CommandOutput::single(cmd_drift_analysis(config)?),
        Command::SigmaRatio => CommandOutput::single(cmd_sigma_ratio(config)?),
        Command::Ternary => CommandOutput::single(cmd_ternary(config)?),
        Command::Protocol => cmd_protocol(config)?,
    })
}

fn csv_writer() -> csv::Writer<Vec<u8>> {
    csv::Writer::from_writer(Vec::new())
}

fn finish(w: csv::Writer<Vec<u8>>) -> String {
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii csv")
}

fn row<const N: usize>(w: &mut csv::Writer<Vec<u8>>, fields: [String; N]) {
    w.write_record(fields).expect("in-memory write");
}

fn f(v: f64) -> String {
    format!("{v:.6}")
}

/// Sorted measured `V_set` with its empirical cumulative fraction, then a
/// summary row with the sample mean and SD.
///
/// Columns: `record,vset_volts,cumulative_fraction,mean_volts,sd_volts`.
pub fn cmd_distribution(config: &ExperimentConfig) -> Result<String> {
    let array = PufArray::sample(&config.population, &config.drift, derive_seed(config.seed, domain::POPULATION, 0))?;
    let reference = Environment::reference(&config.drift);
    let mut sweep = array.measure_sweep(&reference, derive_seed(config.seed, domain::MEASUREMENT, 0))?;
    let (mean, sd) = mean_sd(&sweep);
    sweep.sort_by(f64::total_cmp);
    let n = sweep.len() as f64;
    let mut w = csv_writer();
    row(&mut w, ["record", "vset_volts", "cumulative_fraction", "mean_volts", "sd_volts"].map(String::from));
    for (i, v) in sweep.iter().enumerate() {
        row(&mut w, ["point".into(), f(*v), f((i + 1) as f64 / n), String::new(), String::new()]);
    }
    row(&mut w, ["summary".into(), String::new(), String::new(), f(mean), f(sd)]);
    Ok(finish(w))
}

/// Reads `(mean, sd)` back from the summary row of [`cmd_distribution`].
pub fn distribution_summary(csv_text: &str) -> Option<(f64, f64)> {
    let line = csv_text.lines().rev().find(|l| l.starts_with("summary,"))?;
    let fields: Vec<&str> = line.split(',').collect();
    Some((fields.get(3)?.parse().ok()?, fields.get(4)?.parse().ok()?))
}

/// Per drift level and state, the error vector of a response taken with
/// every cell shifted so that the population mean sits at the level.
/// Challenges are enrolled at the reference condition; every level reuses
/// the same array and the same measurement noise draws.
///
/// Columns: `drift_level_volts,state_index,error,occupancy`.
pub fn cmd_drift_analysis(config: &ExperimentConfig) -> Result<String> {
    let array = PufArray::sample(&config.population, &config.drift, derive_seed(config.seed, domain::POPULATION, 0))?;
    let reference = Environment::reference(&config.drift);
    let enrolled = array.measure_sweep(&reference, derive_seed(config.seed, domain::MEASUREMENT, 0))?;
    let quantizer = StateQuantizer::calibrate(&enrolled, config.n_states)?;
    let challenge = quantizer.encode(&enrolled);
    let response_seed = derive_seed(config.seed, domain::MEASUREMENT, 1);

    let mut w = csv_writer();
    row(&mut w, ["drift_level_volts", "state_index", "error", "occupancy"].map(String::from));
    for level in &config.drift_levels {
        let env = Environment { temperature_c: config.drift.reference_temp_c, bias_offset_v: level - config.population.mu_pop };
        let response = quantizer.encode(&array.measure_sweep(&env, response_seed)?);
        let ve = error_vector(&challenge, &response)?;
        for (i, (e, n)) in ve.errors().iter().zip(ve.occupancies()).enumerate() {
            row(&mut w, [f(*level), i.to_string(), f(*e), n.to_string()]);
        }
    }
    Ok(finish(w))
}

/// Parses [`cmd_drift_analysis`] output into `(level, errors)` rows.
pub fn drift_table(csv_text: &str) -> Result<Vec<(f64, Vec<f64>)>> {
    let mut out: Vec<(f64, Vec<f64>)> = Vec::new();
    for line in csv_text.lines().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        let parse = |i: usize| -> Result<f64> {
            fields.get(i).and_then(|v| v.parse().ok()).ok_or_else(|| Error::Malformed(format!("drift row {line}")))
        };
        let (level, error) = (parse(0)?, parse(2)?);
        match out.last_mut() {
            Some((l, errors)) if *l == level => errors.push(error),
            _ => out.push((level, vec![error])),
        }
    }
    Ok(out)
}

/// Mean error of the n-state vector for each `(sigma_pop, sigma_cell)`
/// pair, rows ordered by `sigma_pop / sigma_cell`. All pairs share one set
/// of standard-normal draws.
///
/// Columns: `sigma_pop,sigma_cell,ratio,mean_error`.
pub fn cmd_sigma_ratio(config: &ExperimentConfig) -> Result<String> {
    let reference = Environment::reference(&config.drift);
    let mut rows = Vec::with_capacity(config.sigma_grid.len());
    for (sigma_pop, sigma_cell) in &config.sigma_grid {
        let params = PopulationParams {
            sigma_pop: *sigma_pop,
            sigma_law: SigmaLaw::Constant(*sigma_cell),
            ..config.population.clone()
        };
        let mean = mean_state_error(&params, &config.drift, &reference, config.n_states, config.seed)?;
        let ratio = if *sigma_cell > 0.0 { sigma_pop / sigma_cell } else { f64::INFINITY };
        rows.push((ratio, *sigma_pop, *sigma_cell, mean));
    }
    rows.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut w = csv_writer();
    row(&mut w, ["sigma_pop", "sigma_cell", "ratio", "mean_error"].map(String::from));
    for (ratio, p, c, mean) in rows {
        row(&mut w, [f(p), f(c), f(ratio), f(mean)]);
    }
    Ok(finish(w))
}

fn mean_state_error(
    params: &PopulationParams,
    drift: &DriftLaw,
    env: &Environment,
    n_states: usize,
    seed: u64,
) -> Result<f64> {
    let array = PufArray::sample(params, drift, derive_seed(seed, domain::POPULATION, 0))?;
    let enrolled = array.measure_sweep(env, derive_seed(seed, domain::MEASUREMENT, 0))?;
    let quantizer = StateQuantizer::calibrate(&enrolled, n_states)?;
    let response = array.measure_sweep(env, derive_seed(seed, domain::MEASUREMENT, 1))?;
    Ok(error_vector(&quantizer.encode(&enrolled), &quantizer.encode(&response))?.mean_error())
}

/// Parses the `(ratio, mean_error)` columns of [`cmd_sigma_ratio`] output.
pub fn sigma_ratio_table(csv_text: &str) -> Result<Vec<(f64, f64)>> {
    csv_text
        .lines()
        .skip(1)
        .map(|line| {
            let fields: Vec<&str> = line.split(',').collect();
            match (fields.get(2).and_then(|v| v.parse().ok()), fields.get(3).and_then(|v| v.parse().ok())) {
                (Some(r), Some(e)) => Ok((r, e)),
                _ => Err(Error::Malformed(format!("sigma-ratio row {line}"))),
            }
        })
        .collect()
}

/// Mean ternary CRP error per margin. Each trial samples a fresh word of
/// `cells` cells, enrolls it with the margin's X mask and answers with a
/// plain threshold reading; all margins see the same trials.
///
/// Columns: `margin_volts,mean_error,mean_x_fraction`.
pub fn cmd_ternary(config: &ExperimentConfig) -> Result<String> {
    Ok(render_ternary(&ternary_study(config)?))
}

/// `(margin, mean_error, mean_x_fraction)` per configured margin.
pub fn ternary_study(config: &ExperimentConfig) -> Result<Vec<(f64, f64, f64)>> {
    let study = &config.ternary;
    let params = PopulationParams { cell_count: study.cells, ..config.population.clone() };
    let reference = Environment::reference(&config.drift);
    let threshold = study.threshold.unwrap_or(config.population.mu_pop);
    let mut sums = vec![(0.0, 0.0); study.margins.len()];
    for t in 0..study.trials as u64 {
        let array = PufArray::sample(&params, &config.drift, derive_seed(config.seed, domain::TRIAL, t))?;
        let enrolled = array.measure_sweep(&reference, derive_seed(config.seed, domain::MEASUREMENT, 2 * t))?;
        let later = array.measure_sweep(&reference, derive_seed(config.seed, domain::MEASUREMENT, 2 * t + 1))?;
        let response = ternary_encode(&later, threshold, 0.0)?;
        for (sum, margin) in sums.iter_mut().zip(&study.margins) {
            let challenge = ternary_encode(&enrolled, threshold, *margin)?;
            sum.0 += ternary_crp_error(&challenge, &response)?;
            sum.1 += challenge.x_fraction();
        }
    }
    let n = study.trials as f64;
    Ok(study.margins.iter().zip(sums).map(|(m, (e, x))| (*m, e / n, x / n)).collect())
}

fn render_ternary(rows: &[(f64, f64, f64)]) -> String {
    let mut w = csv_writer();
    row(&mut w, ["margin_volts", "mean_error", "mean_x_fraction"].map(String::from));
    for (m, e, x) in rows {
        row(&mut w, [f(*m), f(*e), f(*x)]);
    }
    finish(w)
}

/// Runs the configured scenario. Files: the per-round CSV, then
/// `.attempts.csv`, `.summary.csv` and `.transcript`.
pub fn cmd_protocol(config: &ExperimentConfig) -> Result<CommandOutput> {
    let report = run_scenario(&config.scenario_config())?;
    Ok(CommandOutput {
        files: vec![
            (String::new(), report.rounds_csv().into_bytes()),
            (".attempts.csv".into(), report.attempts_csv().into_bytes()),
            (".summary.csv".into(), report.summary_csv().into_bytes()),
            (".transcript".into(), report.transcript),
        ],
    })
}
