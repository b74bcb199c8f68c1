//! Threshold calibration from simulated genuine and impostor sessions.

use std::ops::Range;

use rand::Rng;

use super::{ModelConfig, ObservationRecord, PredictorModel};
use crate::error::{param, Result};
use crate::multistate::{error_vector, StateQuantizer, StateWord};
use crate::reram_model::{DriftLaw, Environment, PopulationParams, PufArray};
use crate::seeding::{self, derive_seed, domain};

/// Genuine observations of one enrolled cell range, one per environment.
pub fn warmup_history(
    array: &PufArray,
    range: Range<usize>,
    quantizer: &StateQuantizer,
    challenge: &StateWord,
    envs: &[Environment],
    seed: u64,
) -> Result<Vec<ObservationRecord>> {
    envs.iter()
        .enumerate()
        .map(|(j, env)| {
            let sweep = array.measure_range(range.clone(), env, derive_seed(seed, domain::TRIAL, j as u64))?;
            let ve = error_vector(challenge, &quantizer.encode(&sweep))?;
            Ok(ObservationRecord { inputs: env.inputs(), ve, timestamp: j as u64 })
        })
        .collect()
}

/// Linear-interpolation percentile, `p` in `[0, 100]`.
pub fn percentile(values: &[f64], p: f64) -> f64 {
    assert!(!values.is_empty(), "percentile of empty sample");
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = (p / 100.0).clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (rank - lo as f64)
}

/// Midpoint between the 99th percentile of genuine distances and the 1st
/// percentile of impostor distances.
pub fn calibrate_threshold(genuine: &[f64], impostor: &[f64]) -> f64 {
    0.5 * (percentile(genuine, 99.0) + percentile(impostor, 1.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationSetup {
    pub population: PopulationParams,
    pub drift: DriftLaw,
    pub n_states: usize,
    /// Cells per challenge word.
    pub cells: usize,
    pub warmup_temperatures: Vec<f64>,
    /// Test temperatures are drawn uniformly from this interval.
    pub test_temperatures: (f64, f64),
    pub trials: usize,
    pub seed: u64,
}

impl Default for CalibrationSetup {
    fn default() -> Self {
        Self {
            population: PopulationParams::default(),
            drift: DriftLaw::default(),
            n_states: 8,
            cells: 128,
            warmup_temperatures: default_warmup_temperatures(),
            test_temperatures: (-25.0, 85.0),
            trials: 200,
            seed: 0,
        }
    }
}

/// -25 C to 85 C in 10 degree steps.
pub fn default_warmup_temperatures() -> Vec<f64> {
    (0..12).map(|i| -25.0 + 10.0 * i as f64).collect()
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DistanceSamples {
    pub genuine: Vec<f64>,
    pub impostor: Vec<f64>,
}

impl DistanceSamples {
    pub fn threshold(&self) -> f64 {
        calibrate_threshold(&self.genuine, &self.impostor)
    }

    pub fn false_reject_rate(&self, threshold: f64) -> f64 {
        self.genuine.iter().filter(|d| **d > threshold).count() as f64 / self.genuine.len() as f64
    }

    pub fn false_accept_rate(&self, threshold: f64) -> f64 {
        self.impostor.iter().filter(|d| **d <= threshold).count() as f64 / self.impostor.len() as f64
    }
}

/// Runs `trials` independent enrollments. Each trial trains a predictor on
/// a warm-up sweep of the genuine array, then scores one genuine response
/// and one response from a freshly sampled impostor array, both taken at the
/// same random test temperature.
pub fn sample_distances(setup: &CalibrationSetup) -> Result<DistanceSamples> {
    if setup.trials == 0 {
        return Err(param("calibration needs at least one trial"));
    }
    let mut out = DistanceSamples::default();
    for t in 0..setup.trials {
        let (genuine, impostor) = trial(setup, derive_seed(setup.seed, domain::CALIBRATION, t as u64))?;
        out.genuine.push(genuine);
        out.impostor.push(impostor);
    }
    Ok(out)
}

fn trial(setup: &CalibrationSetup, seed: u64) -> Result<(f64, f64)> {
    let params = PopulationParams { cell_count: setup.cells, ..setup.population.clone() };
    let array = PufArray::sample(&params, &setup.drift, derive_seed(seed, domain::DEVICE, 0))?;
    let impostor = PufArray::sample(&params, &setup.drift, derive_seed(seed, domain::DEVICE, 1))?;
    let reference = Environment::reference(&setup.drift);
    let range = 0..setup.cells;

    let enrolled = array.measure_sweep(&reference, derive_seed(seed, domain::MEASUREMENT, 0))?;
    let quantizer = StateQuantizer::calibrate(&enrolled, setup.n_states)?;
    let challenge = quantizer.encode(&enrolled);

    let warm_envs = setup
        .warmup_temperatures
        .iter()
        .map(|t| Environment::new(*t, 0.0))
        .collect::<Result<Vec<_>>>()?;
    let history = warmup_history(&array, range, &quantizer, &challenge, &warm_envs, seed)?;
    let model = PredictorModel::fit(ModelConfig::new(setup.n_states, 2), history)?;

    let mut rng = seeding::stream(seed, domain::TRIAL, u64::MAX);
    let (lo, hi) = setup.test_temperatures;
    let temp = if hi > lo { rng.random_range(lo..=hi) } else { lo };
    let env = Environment::new(temp, 0.0)?;

    let score = |a: &PufArray, stream: u64| -> Result<f64> {
        let sweep = a.measure_sweep(&env, derive_seed(seed, domain::MEASUREMENT, stream))?;
        let ve = error_vector(&challenge, &quantizer.encode(&sweep))?;
        Ok(model.decide(&ve, &env.inputs(), 0.0)?.distance)
    };
    Ok((score(&array, 1)?, score(&impostor, 2)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percentile_interpolates() {
        let v = [4.0, 1.0, 3.0, 2.0, 5.0];
        assert_eq!(percentile(&v, 0.0), 1.0);
        assert_eq!(percentile(&v, 50.0), 3.0);
        assert_eq!(percentile(&v, 100.0), 5.0);
        assert!((percentile(&v, 12.5) - 1.5).abs() < 1e-12);
    }

    #[test]
    fn threshold_is_midpoint() {
        let genuine: Vec<f64> = (0..101).map(|i| i as f64 * 0.01).collect();
        let impostor: Vec<f64> = (0..101).map(|i| 2.0 + i as f64 * 0.01).collect();
        assert!((calibrate_threshold(&genuine, &impostor) - 0.5 * (0.99 + 2.01)).abs() < 1e-12);
    }

    #[test]
    fn genuine_and_impostor_separate() {
        let setup = CalibrationSetup { trials: 60, seed: 3, ..Default::default() };
        let s = sample_distances(&setup).unwrap();
        let max_genuine = s.genuine.iter().cloned().fold(0.0, f64::max);
        let min_impostor = s.impostor.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(max_genuine < min_impostor, "{max_genuine} vs {min_impostor}");
        let th = s.threshold();
        assert_eq!(s.false_reject_rate(th), 0.0);
        assert_eq!(s.false_accept_rate(th), 0.0);
    }

    #[test]
    fn calibration_is_deterministic() {
        let setup = CalibrationSetup { trials: 5, seed: 9, ..Default::default() };
        assert_eq!(sample_distances(&setup).unwrap(), sample_distances(&setup).unwrap());
    }
}
