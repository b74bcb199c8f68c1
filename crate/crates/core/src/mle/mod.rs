//! Drift-predicting authentication engine.
//!
//! A [`PredictorModel`] learns, per state, an affine law from environmental
//! inputs (temperature, bias) to the expected error vector of a genuine
//! response. Authentication compares an observed error vector with the
//! prediction for the reported conditions.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{param, shape, Error, Result};
use crate::multistate::ErrorVector;

pub mod calibration;

pub use calibration::{calibrate_threshold, percentile, warmup_history, DistanceSamples};

pub const DEFAULT_MIN_HISTORY: usize = 3;
pub const DEFAULT_CAPACITY: usize = 256;
pub const EXPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationRecord {
    pub inputs: Vec<f64>,
    pub ve: ErrorVector,
    pub timestamp: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_states: usize,
    pub input_dim: usize,
    /// Records needed before a state switches from its mean to an affine fit.
    pub min_history: usize,
    /// Ring capacity of the retained history.
    pub capacity: usize,
}

impl ModelConfig {
    pub fn new(n_states: usize, input_dim: usize) -> Self {
        Self { n_states, input_dim, min_history: DEFAULT_MIN_HISTORY, capacity: DEFAULT_CAPACITY }
    }

    fn validate(&self) -> Result<()> {
        if self.n_states == 0 || self.capacity == 0 || self.min_history == 0 {
            return Err(param("n_states, capacity and min_history must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateFit {
    pub intercept: f64,
    pub slopes: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictorModel {
    config: ModelConfig,
    coefficients: Vec<StateFit>,
    history: VecDeque<ObservationRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuthDecision {
    pub accepted: bool,
    pub distance: f64,
    pub threshold: f64,
    pub predicted_ve: ErrorVector,
    pub observed_ve: ErrorVector,
}

impl AuthDecision {
    /// Rejection for a message that could not be read at all.
    pub fn unreadable(threshold: f64, n_states: usize) -> Self {
        Self {
            accepted: false,
            distance: f64::INFINITY,
            threshold,
            predicted_ve: ErrorVector::zeros(n_states),
            observed_ve: ErrorVector::zeros(n_states),
        }
    }
}

impl PredictorModel {
    pub fn empty(config: ModelConfig) -> Result<Self> {
        Self::fit(config, Vec::new())
    }

    /// Least-squares fit of every state's error against the inputs.
    ///
    /// Per state, only records where that state was occupied take part. With
    /// fewer than `min_history` such records the state predicts its mean
    /// error; with none it predicts 0. Only the newest `capacity` records are
    /// retained.
    pub fn fit(config: ModelConfig, history: Vec<ObservationRecord>) -> Result<Self> {
        config.validate()?;
        for r in &history {
            check_record(&config, r)?;
        }
        let skip = history.len().saturating_sub(config.capacity);
        let history: VecDeque<_> = history.into_iter().skip(skip).collect();
        let coefficients = (0..config.n_states)
            .map(|state| fit_state(&config, &history, state))
            .collect();
        Ok(Self { config, coefficients, history })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn coefficients(&self) -> &[StateFit] {
        &self.coefficients
    }

    pub fn history(&self) -> impl ExactSizeIterator<Item = &ObservationRecord> {
        self.history.iter()
    }

    /// Expected error vector under `inputs`, clamped below at 0.
    pub fn predict(&self, inputs: &[f64]) -> Result<ErrorVector> {
        self.check_inputs(inputs)?;
        let errors = self
            .coefficients
            .iter()
            .map(|f| {
                let v = f.intercept + f.slopes.iter().zip(inputs).map(|(b, x)| b * x).sum::<f64>();
                v.max(0.0)
            })
            .collect();
        let occupancies = match self.history.back() {
            Some(r) => r.ve.occupancies().to_vec(),
            None => vec![0; self.config.n_states],
        };
        ErrorVector::new(errors, occupancies)
    }

    /// Occupancy-weighted L1 distance between `observed` and the prediction,
    /// normalised by total occupancy; accept iff `distance <= threshold`.
    pub fn decide(&self, observed: &ErrorVector, inputs: &[f64], threshold: f64) -> Result<AuthDecision> {
        if !(threshold.is_finite() && threshold >= 0.0) {
            return Err(param(format!("threshold must be finite and >= 0, got {threshold}")));
        }
        if observed.n_states() != self.config.n_states {
            return Err(shape(format!(
                "observed vector has {} states, model {}",
                observed.n_states(),
                self.config.n_states
            )));
        }
        let predicted = self.predict(inputs)?;
        let distance = weighted_l1(observed, &predicted);
        Ok(AuthDecision {
            accepted: distance <= threshold,
            distance,
            threshold,
            predicted_ve: predicted,
            observed_ve: observed.clone(),
        })
    }

    /// Returns a refit model with `record` appended, evicting the oldest
    /// record once the history is at capacity.
    pub fn update(&self, record: ObservationRecord) -> Result<Self> {
        check_record(&self.config, &record)?;
        let mut history: Vec<_> = self.history.iter().cloned().collect();
        history.push(record);
        Self::fit(self.config, history)
    }

    pub fn to_json(&self) -> String {
        let doc = ModelDocument {
            version: EXPORT_VERSION,
            n_states: self.config.n_states,
            m: self.config.input_dim,
            min_history: self.config.min_history,
            capacity: self.config.capacity,
            coefficients: self.coefficients.clone(),
            history: self.history.iter().cloned().collect(),
        };
        serde_json::to_string_pretty(&doc).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ModelDocument =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("model document: {e}")))?;
        if doc.version != EXPORT_VERSION {
            return Err(Error::Config(format!("unsupported model version {}", doc.version)));
        }
        let config = ModelConfig {
            n_states: doc.n_states,
            input_dim: doc.m,
            min_history: doc.min_history,
            capacity: doc.capacity,
        };
        config.validate()?;
        if doc.coefficients.len() != config.n_states
            || doc.coefficients.iter().any(|c| c.slopes.len() != config.input_dim)
        {
            return Err(shape("coefficients do not match n_states/m"));
        }
        for r in &doc.history {
            check_record(&config, r)?;
        }
        Ok(Self { config, coefficients: doc.coefficients, history: doc.history.into() })
    }

    fn check_inputs(&self, inputs: &[f64]) -> Result<()> {
        if inputs.len() != self.config.input_dim {
            return Err(shape(format!(
                "expected {} inputs, got {}",
                self.config.input_dim,
                inputs.len()
            )));
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct ModelDocument {
    version: u32,
    n_states: usize,
    m: usize,
    min_history: usize,
    capacity: usize,
    coefficients: Vec<StateFit>,
    history: Vec<ObservationRecord>,
}

fn check_record(config: &ModelConfig, r: &ObservationRecord) -> Result<()> {
    if r.inputs.len() != config.input_dim {
        return Err(shape(format!(
            "record has {} inputs, model expects {}",
            r.inputs.len(),
            config.input_dim
        )));
    }
    if r.ve.n_states() != config.n_states {
        return Err(shape(format!(
            "record has {} states, model expects {}",
            r.ve.n_states(),
            config.n_states
        )));
    }
    Ok(())
}

fn fit_state(config: &ModelConfig, history: &VecDeque<ObservationRecord>, state: usize) -> StateFit {
    let m = config.input_dim;
    let rows: Vec<&ObservationRecord> =
        history.iter().filter(|r| r.ve.occupancies()[state] > 0).collect();
    if rows.is_empty() {
        return StateFit { intercept: 0.0, slopes: vec![0.0; m] };
    }
    let y = DVector::from_iterator(rows.len(), rows.iter().map(|r| r.ve.errors()[state]));
    let mean_y = y.mean();
    if rows.len() < config.min_history || m == 0 {
        return StateFit { intercept: mean_y, slopes: vec![0.0; m] };
    }

    // Centre the inputs so the intercept column is orthogonal to the rest;
    // the SVD solve then returns the minimum-norm solution when an input
    // never varies.
    let mut centers = vec![0.0; m];
    for r in &rows {
        for (c, x) in centers.iter_mut().zip(&r.inputs) {
            *c += x;
        }
    }
    centers.iter_mut().for_each(|c| *c /= rows.len() as f64);
    let x = DMatrix::from_fn(rows.len(), m, |i, j| rows[i].inputs[j] - centers[j]);
    let yc = y.add_scalar(-mean_y);
    let svd = x.svd(true, true);
    let eps = svd.singular_values.max() * 1e-10;
    let slopes = match svd.solve(&yc, eps) {
        Ok(b) if b.iter().all(|v| v.is_finite()) => b.iter().copied().collect::<Vec<_>>(),
        _ => vec![0.0; m],
    };
    let intercept = mean_y - slopes.iter().zip(&centers).map(|(b, c)| b * c).sum::<f64>();
    StateFit { intercept, slopes }
}

fn weighted_l1(observed: &ErrorVector, predicted: &ErrorVector) -> f64 {
    let total = observed.total_occupancy();
    if total == 0 {
        return 0.0;
    }
    let sum: f64 = observed
        .errors()
        .iter()
        .zip(predicted.errors())
        .zip(observed.occupancies())
        .filter(|(_, n)| **n > 0)
        .map(|((o, p), n)| *n as f64 * (o - p).abs())
        .sum();
    sum / total as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ve(errors: &[f64], occ: &[usize]) -> ErrorVector {
        ErrorVector::new(errors.to_vec(), occ.to_vec()).unwrap()
    }

    fn record(t: f64, errors: &[f64], stamp: u64) -> ObservationRecord {
        ObservationRecord { inputs: vec![t, 0.0], ve: ve(errors, &vec![16; errors.len()]), timestamp: stamp }
    }

    fn affine_history() -> Vec<ObservationRecord> {
        [0.0, 10.0, 20.0, 35.0]
            .iter()
            .enumerate()
            .map(|(i, dt)| record(*dt, &[0.1 + 0.002 * dt; 8], i as u64))
            .collect()
    }

    #[test]
    fn empty_history_predicts_zero() {
        let m = PredictorModel::empty(ModelConfig::new(8, 2)).unwrap();
        assert_eq!(m.predict(&[55.0, 0.1]).unwrap().errors(), &[0.0; 8]);
    }

    #[test]
    fn single_record_predicts_itself() {
        let r = record(10.0, &[0.1, 0.5, 0.2, 0.0], 0);
        let m = PredictorModel::fit(ModelConfig::new(4, 2), vec![r.clone()]).unwrap();
        for t in [-20.0, 10.0, 80.0] {
            assert_eq!(m.predict(&[t, 0.3]).unwrap().errors(), r.ve.errors());
        }
    }

    #[test]
    fn recovers_exact_affine_law() {
        let m = PredictorModel::fit(ModelConfig::new(8, 2), affine_history()).unwrap();
        for f in m.coefficients() {
            assert!((f.slopes[0] - 0.002).abs() < 1e-6, "{:?}", f);
            assert!(f.slopes[1].abs() < 1e-9);
            assert!((f.intercept - 0.1).abs() < 1e-6);
        }
        for e in m.predict(&[50.0, 0.0]).unwrap().errors() {
            assert!((e - 0.2).abs() < 1e-6);
        }
    }

    #[test]
    fn negative_predictions_clamp() {
        let hist = [0.0, 10.0, 20.0]
            .iter()
            .enumerate()
            .map(|(i, t)| record(*t, &[0.5 - 0.02 * t], i as u64))
            .collect();
        let m = PredictorModel::fit(ModelConfig::new(1, 2), hist).unwrap();
        assert_eq!(m.predict(&[100.0, 0.0]).unwrap().errors(), &[0.0]);
    }

    #[test]
    fn dimension_mismatches() {
        let m = PredictorModel::empty(ModelConfig::new(8, 2)).unwrap();
        assert!(matches!(m.predict(&[1.0]), Err(Error::Shape(_))));
        let bad = ObservationRecord { inputs: vec![1.0], ve: ErrorVector::zeros(8), timestamp: 0 };
        assert!(PredictorModel::fit(ModelConfig::new(8, 2), vec![bad.clone()]).is_err());
        assert!(m.update(bad).is_err());
        assert!(m.decide(&ErrorVector::zeros(4), &[0.0, 0.0], 0.1).is_err());
        assert!(m.decide(&ErrorVector::zeros(8), &[0.0, 0.0], -0.1).is_err());
    }

    #[test]
    fn identical_vectors_always_accept() {
        let m = PredictorModel::fit(ModelConfig::new(8, 2), affine_history()).unwrap();
        let observed = m.predict(&[30.0, 0.0]).unwrap();
        let d = m.decide(&observed, &[30.0, 0.0], 0.0).unwrap();
        assert_eq!(d.distance, 0.0);
        assert!(d.accepted);
    }

    #[test]
    fn uniform_half_error_against_zero_prediction() {
        let m = PredictorModel::empty(ModelConfig::new(4, 2)).unwrap();
        let d = m.decide(&ve(&[0.5; 4], &[3, 3, 3, 3]), &[25.0, 0.0], 0.3).unwrap();
        assert!((d.distance - 0.5).abs() < 1e-12);
        assert!(!d.accepted);
    }

    #[test]
    fn zero_occupancy_states_are_ignored() {
        let m = PredictorModel::empty(ModelConfig::new(3, 2)).unwrap();
        let d = m.decide(&ve(&[1.0, 0.0, 0.0], &[2, 0, 2]), &[0.0, 0.0], 1.0).unwrap();
        assert!((d.distance - 0.5).abs() < 1e-12);
    }

    #[test]
    fn update_on_empty_model() {
        let m = PredictorModel::empty(ModelConfig::new(2, 2)).unwrap();
        let r = record(0.0, &[0.3, 0.7], 1);
        let m = m.update(r.clone()).unwrap();
        assert_eq!(m.predict(&[12.0, 0.0]).unwrap().errors(), r.ve.errors());
    }

    #[test]
    fn update_evicts_oldest_at_capacity() {
        let config = ModelConfig { capacity: 2, ..ModelConfig::new(1, 2) };
        let mut m = PredictorModel::empty(config).unwrap();
        for stamp in 0..3 {
            m = m.update(record(stamp as f64, &[0.1], stamp)).unwrap();
        }
        let stamps: Vec<u64> = m.history().map(|r| r.timestamp).collect();
        assert_eq!(stamps, vec![1, 2]);
    }

    #[test]
    fn repeated_identical_records_do_not_move_predictions() {
        let r = record(5.0, &[0.2, 0.4], 0);
        let mut m = PredictorModel::fit(ModelConfig::new(2, 2), vec![r.clone(); 4]).unwrap();
        let before = m.predict(&[60.0, 0.0]).unwrap();
        m = m.update(r).unwrap();
        let after = m.predict(&[60.0, 0.0]).unwrap();
        for (a, b) in before.errors().iter().zip(after.errors()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn json_round_trip() {
        let m = PredictorModel::fit(ModelConfig::new(8, 2), affine_history()).unwrap();
        let back = PredictorModel::from_json(&m.to_json()).unwrap();
        assert_eq!(back, m);
        let text = m.to_json().replace("\"version\": 1", "\"version\": 9");
        assert!(matches!(PredictorModel::from_json(&text), Err(Error::Config(_))));
    }

    proptest! {
        #[test]
        fn exact_recovery_of_random_affine_laws(
            a in -1.0f64..1.0,
            b_t in -0.01f64..0.01,
            b_v in -1.0f64..1.0,
        ) {
            let samples = [(-25.0, 0.0), (0.0, 0.1), (30.0, -0.05), (60.0, 0.2), (85.0, 0.0)];
            let hist = samples
                .iter()
                .enumerate()
                .map(|(i, (t, v))| ObservationRecord {
                    inputs: vec![*t, *v],
                    ve: ve(&[a + b_t * t + b_v * v + 5.0], &[4]),
                    timestamp: i as u64,
                })
                .collect();
            let m = PredictorModel::fit(ModelConfig::new(1, 2), hist).unwrap();
            for (t, v) in [(-10.0, 0.05), (70.0, 0.15)] {
                let got = m.predict(&[t, v]).unwrap().errors()[0];
                prop_assert!((got - (a + b_t * t + b_v * v + 5.0)).abs() < 1e-6);
            }
        }

        #[test]
        fn empty_model_decision_is_mean_error_thresholding(
            errs in prop::collection::vec(0.0f64..4.0, 8),
            occ in prop::collection::vec(0usize..20, 8),
            threshold in 0.0f64..3.0,
        ) {
            let observed = ve(&errs, &occ);
            let m = PredictorModel::empty(ModelConfig::new(8, 2)).unwrap();
            let d = m.decide(&observed, &[25.0, 0.0], threshold).unwrap();
            let total: usize = occ.iter().sum();
            let magnitude = if total == 0 {
                0.0
            } else {
                errs.iter().zip(&occ).map(|(e, n)| e * *n as f64).sum::<f64>() / total as f64
            };
            prop_assert!((d.distance - magnitude).abs() < 1e-12);
            prop_assert_eq!(d.accepted, magnitude <= threshold);
        }
    }
}
