//! Parametric model of a ReRAM array's set-voltage behavior.
//!
//! Each cell has a true mean `V_set` drawn from the population distribution
//! and its own measurement noise. Temperature and bias move every cell by
//! the same affine shift, so a zero-noise measurement is exactly
//! `mu + temp_coefficient * (T - T_ref) + bias_offset`.

use std::ops::Range;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::seeding::{self, domain};

/// Validity window for simulated operating temperature, in degrees Celsius.
pub const TEMPERATURE_RANGE_C: (f64, f64) = (-55.0, 150.0);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellModel {
    pub cell_id: usize,
    /// True mean set voltage, volts.
    pub mu: f64,
    /// Intra-cell measurement noise standard deviation, volts.
    pub sigma: f64,
}

/// Maps a cell's mean `V_set` to its intra-cell noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SigmaLaw {
    Constant(f64),
    /// Piecewise-linear `(mu, sigma)` knots sorted by `mu`; clamped outside
    /// the first and last knot.
    Table(Vec<(f64, f64)>),
}

impl SigmaLaw {
    pub fn sigma_at(&self, mu: f64) -> f64 {
        match self {
            SigmaLaw::Constant(s) => *s,
            SigmaLaw::Table(knots) => {
                let (first, last) = (knots[0], knots[knots.len() - 1]);
                if mu <= first.0 {
                    return first.1;
                }
                if mu >= last.0 {
                    return last.1;
                }
                let hi = knots.partition_point(|k| k.0 < mu);
                let (x0, y0) = knots[hi - 1];
                let (x1, y1) = knots[hi];
                y0 + (y1 - y0) * (mu - x0) / (x1 - x0)
            }
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            SigmaLaw::Constant(s) if s.is_finite() && *s >= 0.0 => Ok(()),
            SigmaLaw::Constant(s) => Err(param(format!("sigma_cell must be >= 0, got {s}"))),
            SigmaLaw::Table(knots) => {
                if knots.is_empty() {
                    return Err(param("sigma table is empty"));
                }
                if knots.iter().any(|(x, y)| !x.is_finite() || !y.is_finite() || *y < 0.0) {
                    return Err(param("sigma table entries must be finite with sigma >= 0"));
                }
                if knots.windows(2).any(|w| w[0].0 >= w[1].0) {
                    return Err(param("sigma table knots must be strictly increasing in mu"));
                }
                // Non-negative knots and linear interpolation keep every
                // value in the hull non-negative.
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationParams {
    pub mu_pop: f64,
    pub sigma_pop: f64,
    pub cell_count: usize,
    pub sigma_law: SigmaLaw,
}

impl Default for PopulationParams {
    fn default() -> Self {
        Self {
            mu_pop: 2.1,
            sigma_pop: 0.54,
            cell_count: 10_000,
            sigma_law: SigmaLaw::Constant(0.05),
        }
    }
}

impl PopulationParams {
    pub fn validate(&self) -> Result<()> {
        if !self.mu_pop.is_finite() {
            return Err(param("mu_pop must be finite"));
        }
        if !(self.sigma_pop.is_finite() && self.sigma_pop > 0.0) {
            return Err(param(format!("sigma_pop must be > 0, got {}", self.sigma_pop)));
        }
        if self.cell_count == 0 {
            return Err(param("cell_count must be >= 1"));
        }
        self.sigma_law.validate()
    }
}

/// Operating conditions at measurement time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub temperature_c: f64,
    pub bias_offset_v: f64,
}

impl Environment {
    pub fn new(temperature_c: f64, bias_offset_v: f64) -> Result<Self> {
        let env = Self { temperature_c, bias_offset_v };
        env.validate()?;
        Ok(env)
    }

    /// Reference temperature with no bias shift.
    pub fn reference(drift: &DriftLaw) -> Self {
        Self { temperature_c: drift.reference_temp_c, bias_offset_v: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = TEMPERATURE_RANGE_C;
        if !(lo..=hi).contains(&self.temperature_c) {
            return Err(param(format!(
                "temperature {} C outside [{lo}, {hi}]",
                self.temperature_c
            )));
        }
        if !self.bias_offset_v.is_finite() {
            return Err(param("bias offset must be finite"));
        }
        Ok(())
    }

    /// Inputs fed to the drift predictor.
    pub fn inputs(&self) -> Vec<f64> {
        vec![self.temperature_c, self.bias_offset_v]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftLaw {
    /// Volts per degree Celsius; negative (hotter cells set at lower voltage).
    pub temp_coefficient: f64,
    pub reference_temp_c: f64,
}

impl Default for DriftLaw {
    fn default() -> Self {
        Self { temp_coefficient: -0.005, reference_temp_c: 25.0 }
    }
}

impl DriftLaw {
    pub fn validate(&self) -> Result<()> {
        if !(self.temp_coefficient.is_finite() && self.temp_coefficient < 0.0) {
            return Err(param(format!(
                "temp_coefficient must be negative, got {}",
                self.temp_coefficient
            )));
        }
        if !self.reference_temp_c.is_finite() {
            return Err(param("reference temperature must be finite"));
        }
        Ok(())
    }

    /// Mean shift applied to every cell under `env`.
    pub fn shift(&self, env: &Environment) -> f64 {
        self.temp_coefficient * (env.temperature_c - self.reference_temp_c) + env.bias_offset_v
    }
}

/// An addressable population of simulated cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PufArray {
    cells: Vec<CellModel>,
    params: PopulationParams,
    drift: DriftLaw,
}

impl PufArray {
    /// Draws every cell mean from `Normal(mu_pop, sigma_pop^2)`.
    ///
    /// Cell `k` uses its own stream derived from `(seed, k)`, so the array is
    /// bit-for-bit reproducible and a prefix of a larger array equals the
    /// smaller array sampled with the same seed.
    pub fn sample(params: &PopulationParams, drift: &DriftLaw, seed: u64) -> Result<Self> {
        params.validate()?;
        drift.validate()?;
        let cells = (0..params.cell_count)
            .map(|cell_id| {
                let mut rng = seeding::stream(seed, domain::POPULATION, cell_id as u64);
                let z: f64 = StandardNormal.sample(&mut rng);
                let mu = params.mu_pop + params.sigma_pop * z;
                CellModel { cell_id, mu, sigma: params.sigma_law.sigma_at(mu).max(0.0) }
            })
            .collect();
        Ok(Self { cells, params: params.clone(), drift: *drift })
    }

    /// Builds an array from explicit cells; ids are reassigned to positions.
    pub fn from_cells(
        cells: Vec<(f64, f64)>,
        params: &PopulationParams,
        drift: &DriftLaw,
    ) -> Result<Self> {
        drift.validate()?;
        if cells.is_empty() {
            return Err(param("array needs at least one cell"));
        }
        let cells = cells
            .into_iter()
            .enumerate()
            .map(|(cell_id, (mu, sigma))| {
                if !(mu.is_finite() && mu > 0.0) || !(sigma.is_finite() && sigma >= 0.0) {
                    return Err(param(format!("cell {cell_id}: need mu > 0 and sigma >= 0")));
                }
                Ok(CellModel { cell_id, mu, sigma })
            })
            .collect::<Result<Vec<_>>>()?;
        let params = PopulationParams { cell_count: cells.len(), ..params.clone() };
        Ok(Self { cells, params, drift: *drift })
    }

    pub fn cells(&self) -> &[CellModel] {
        &self.cells
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn params(&self) -> &PopulationParams {
        &self.params
    }

    pub fn drift(&self) -> &DriftLaw {
        &self.drift
    }

    /// One noisy `V_set` reading of `cell_id` under `env`.
    ///
    /// The noise draw depends only on `(seed, cell_id)`, so the same reading
    /// is produced whether the cell is measured alone or in a sweep.
    pub fn measure_vset(&self, cell_id: usize, env: &Environment, seed: u64) -> Result<f64> {
        env.validate()?;
        let cell = self.cells.get(cell_id).ok_or(Error::UnknownCell(cell_id))?;
        Ok(self.read(cell, self.drift.shift(env), seed))
    }

    /// Measures every cell in order.
    pub fn measure_sweep(&self, env: &Environment, seed: u64) -> Result<Vec<f64>> {
        self.measure_range(0..self.cells.len(), env, seed)
    }

    /// Measures a contiguous block of cells in order.
    pub fn measure_range(&self, range: Range<usize>, env: &Environment, seed: u64) -> Result<Vec<f64>> {
        env.validate()?;
        if range.start > range.end || range.end > self.cells.len() {
            return Err(Error::UnknownCell(range.end.saturating_sub(1).max(range.start)));
        }
        let shift = self.drift.shift(env);
        Ok(self.cells[range].iter().map(|c| self.read(c, shift, seed)).collect())
    }

    fn read(&self, cell: &CellModel, shift: f64, seed: u64) -> f64 {
        let base = cell.mu + shift;
        if cell.sigma == 0.0 {
            return base;
        }
        let mut rng = seeding::stream(seed, domain::MEASUREMENT, cell.cell_id as u64);
        let z: f64 = StandardNormal.sample(&mut rng);
        base + cell.sigma * z
    }
}

/// Renders a sweep as CSV with columns `cell_id,vset_volts`.
pub fn sweep_csv(sweep: &[f64]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["cell_id", "vset_volts"]).expect("in-memory write");
    for (id, v) in sweep.iter().enumerate() {
        w.write_record([id.to_string(), v.to_string()]).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii csv")
}

/// Sample mean and (n-1) standard deviation; SD is 0 for fewer than 2 values.
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
