//! Multi-state challenge/response words and per-state error vectors.
//!
//! Cells are sorted into `n` ordered states by their measured `V_set`, with
//! state boundaries at the empirical quantiles of a calibration sweep. For a
//! challenge `C` and response `R`, the error of state `i` is the mean
//! `|R_k - C_k|` over the cells whose challenge state is `i`.

use serde::{Deserialize, Serialize};

use crate::error::{param, shape, Result};

/// Largest supported state count (states are stored as `u8`).
pub const MAX_STATES: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateQuantizer {
    n_states: usize,
    boundaries: Vec<f64>,
}

impl StateQuantizer {
    pub fn new(n_states: usize, boundaries: Vec<f64>) -> Result<Self> {
        check_states(n_states)?;
        if boundaries.len() != n_states - 1 {
            return Err(param(format!(
                "{n_states} states need {} boundaries, got {}",
                n_states - 1,
                boundaries.len()
            )));
        }
        if boundaries.iter().any(|b| !b.is_finite()) {
            return Err(param("boundaries must be finite"));
        }
        if boundaries.windows(2).any(|w| w[0] >= w[1]) {
            return Err(param("boundaries must be strictly increasing"));
        }
        Ok(Self { n_states, boundaries })
    }

    /// Places boundaries between the `j*N/n`-th order statistics of `sweep`.
    ///
    /// Each boundary is the midpoint of the two neighbouring sorted values,
    /// so for a sweep of distinct values every state receives either
    /// `floor(N/n)` or `ceil(N/n)` cells when the sweep itself is encoded.
    pub fn calibrate(sweep: &[f64], n_states: usize) -> Result<Self> {
        check_states(n_states)?;
        if sweep.len() < n_states {
            return Err(param(format!(
                "calibration sweep of {} values is shorter than {n_states} states",
                sweep.len()
            )));
        }
        if sweep.iter().any(|v| !v.is_finite()) {
            return Err(param("calibration sweep contains non-finite values"));
        }
        let mut sorted = sweep.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let boundaries = (1..n_states)
            .map(|j| {
                let idx = j * n / n_states;
                0.5 * (sorted[idx - 1] + sorted[idx])
            })
            .collect();
        Self::new(n_states, boundaries)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn boundaries(&self) -> &[f64] {
        &self.boundaries
    }

    /// State index of one reading; a value equal to a boundary goes low.
    pub fn state_of(&self, v: f64) -> u8 {
        self.boundaries.partition_point(|b| *b < v) as u8
    }

    pub fn encode(&self, sweep: &[f64]) -> StateWord {
        StateWord {
            n_states: self.n_states,
            states: sweep.iter().map(|v| self.state_of(*v)).collect(),
        }
    }
}

fn check_states(n_states: usize) -> Result<()> {
    if !(2..=MAX_STATES).contains(&n_states) {
        return Err(param(format!("n_states must be in [2, {MAX_STATES}], got {n_states}")));
    }
    Ok(())
}

/// A challenge or response: one state index per cell, in cell order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StateWord {
    n_states: usize,
    states: Vec<u8>,
}

impl StateWord {
    pub fn new(n_states: usize, states: Vec<u8>) -> Result<Self> {
        check_states(n_states)?;
        if let Some(bad) = states.iter().find(|s| usize::from(**s) >= n_states) {
            return Err(param(format!("state {bad} out of range for {n_states} states")));
        }
        Ok(Self { n_states, states })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn states(&self) -> &[u8] {
        &self.states
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Number of cells in each state.
    pub fn occupancies(&self) -> Vec<usize> {
        let mut occ = vec![0; self.n_states];
        for s in &self.states {
            occ[usize::from(*s)] += 1;
        }
        occ
    }

    /// CSV rows `cell_id,state`.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["cell_id", "state"]).expect("in-memory write");
        for (k, s) in self.states.iter().enumerate() {
            w.write_record([k.to_string(), s.to_string()]).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii csv")
    }
}

/// Per-state average CRP error and the challenge-state occupancies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorVector {
    errors: Vec<f64>,
    occupancies: Vec<usize>,
}

impl ErrorVector {
    pub fn new(errors: Vec<f64>, occupancies: Vec<usize>) -> Result<Self> {
        if errors.len() != occupancies.len() {
            return Err(shape("errors and occupancies differ in length"));
        }
        if errors.iter().any(|e| !(e.is_finite() && *e >= 0.0)) {
            return Err(param("errors must be finite and non-negative"));
        }
        Ok(Self { errors, occupancies })
    }

    pub fn zeros(n_states: usize) -> Self {
        Self { errors: vec![0.0; n_states], occupancies: vec![0; n_states] }
    }

    pub fn errors(&self) -> &[f64] {
        &self.errors
    }

    pub fn occupancies(&self) -> &[usize] {
        &self.occupancies
    }

    pub fn n_states(&self) -> usize {
        self.errors.len()
    }

    pub fn total_occupancy(&self) -> usize {
        self.occupancies.iter().sum()
    }

    /// Unweighted mean of the per-state errors.
    pub fn mean_error(&self) -> f64 {
        self.errors.iter().sum::<f64>() / self.errors.len() as f64
    }

    /// CSV rows `state_index,error,occupancy`.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["state_index", "error", "occupancy"]).expect("in-memory write");
        for (i, (e, n)) in self.errors.iter().zip(&self.occupancies).enumerate() {
            w.write_record([i.to_string(), e.to_string(), n.to_string()])
                .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii csv")
    }
}

/// Per-state average CRP error, grouping cells by their challenge state.
///
/// States with no challenge cells report error 0 and occupancy 0.
pub fn error_vector(challenge: &StateWord, response: &StateWord) -> Result<ErrorVector> {
    if challenge.n_states != response.n_states {
        return Err(shape(format!(
            "challenge has {} states, response {}",
            challenge.n_states, response.n_states
        )));
    }
    if challenge.len() != response.len() {
        return Err(shape(format!(
            "challenge has {} cells, response {}",
            challenge.len(),
            response.len()
        )));
    }
    let n = challenge.n_states;
    let mut sums = vec![0u64; n];
    let mut occupancies = vec![0usize; n];
    for (c, r) in challenge.states.iter().zip(&response.states) {
        let i = usize::from(*c);
        sums[i] += u64::from(c.abs_diff(*r));
        occupancies[i] += 1;
    }
    let errors = sums
        .iter()
        .zip(&occupancies)
        .map(|(s, n)| if *n == 0 { 0.0 } else { *s as f64 / *n as f64 })
        .collect();
    Ok(ErrorVector { errors, occupancies })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reram_model::{DriftLaw, Environment, PopulationParams, PufArray, SigmaLaw};
    use proptest::prelude::*;

    fn word(n: usize, s: &[u8]) -> StateWord {
        StateWord::new(n, s.to_vec()).unwrap()
    }

    /// Direct transcription of the per-state average: for every state scan all
    /// cells, keep those whose challenge is in that state.
    fn naive_error_vector(c: &[u8], r: &[u8], n: usize) -> (Vec<f64>, Vec<usize>) {
        let mut errors = vec![0.0; n];
        let mut occ = vec![0; n];
        for i in 0..n {
            let mut total: i64 = 0;
            for k in 0..c.len() {
                if c[k] as usize == i {
                    total += (r[k] as i64 - c[k] as i64).abs();
                    occ[i] += 1;
                }
            }
            if occ[i] > 0 {
                errors[i] = total as f64 / occ[i] as f64;
            }
        }
        (errors, occ)
    }

    #[test]
    fn median_split_of_four_values() {
        let q = StateQuantizer::calibrate(&[1.0, 2.0, 3.0, 4.0], 2).unwrap();
        let b = q.boundaries()[0];
        assert!(b > 2.0 && b <= 3.0);
        assert_eq!(q.encode(&[1.0, 2.0, 3.0, 4.0]).occupancies(), vec![2, 2]);
    }

    #[test]
    fn eight_values_eight_states() {
        let sweep = [5.0, 1.0, 7.0, 3.0, 8.0, 2.0, 6.0, 4.0];
        let q = StateQuantizer::calibrate(&sweep, 8).unwrap();
        assert_eq!(q.encode(&sweep).occupancies(), vec![1; 8]);
    }

    #[test]
    fn gaussian_calibration_balances_states() {
        let p = PopulationParams { sigma_law: SigmaLaw::Constant(0.0), ..Default::default() };
        let a = PufArray::sample(&p, &DriftLaw::default(), 4).unwrap();
        let sweep = a.measure_sweep(&Environment::reference(a.drift()), 0).unwrap();
        let q = StateQuantizer::calibrate(&sweep, 8).unwrap();
        for occ in q.encode(&sweep).occupancies() {
            assert!((1150..=1350).contains(&occ), "{occ}");
            assert_eq!(occ, 1250);
        }
    }

    #[test]
    fn calibration_rejects_bad_input() {
        assert!(StateQuantizer::calibrate(&[1.0, 2.0], 1).is_err());
        assert!(StateQuantizer::calibrate(&[1.0, 2.0], 3).is_err());
        assert!(StateQuantizer::calibrate(&[1.0, 1.0, 1.0, 1.0], 4).is_err());
        assert!(StateQuantizer::calibrate(&[1.0, f64::NAN], 2).is_err());
        assert!(StateQuantizer::new(3, vec![2.0, 1.0]).is_err());
    }

    #[test]
    fn tails_and_ties() {
        let q = StateQuantizer::new(8, (1..8).map(|i| i as f64).collect()).unwrap();
        assert_eq!(q.encode(&[-1e3]).states(), &[0]);
        assert_eq!(q.encode(&[1e3]).states(), &[7]);
        // exactly on a boundary goes to the lower state
        assert_eq!(q.encode(&[3.0]).states(), &[2]);
    }

    #[test]
    fn eq1_worked_examples() {
        let ve = error_vector(&word(8, &[3, 3, 3]), &word(8, &[3, 4, 1])).unwrap();
        assert_eq!(ve.errors()[3], 1.0);
        assert!(ve.errors().iter().enumerate().all(|(i, e)| i == 3 || *e == 0.0));
        assert_eq!(ve.occupancies()[3], 3);

        let same = word(4, &[0, 1, 2, 3, 3]);
        assert!(error_vector(&same, &same).unwrap().errors().iter().all(|e| *e == 0.0));

        let ve = error_vector(&word(2, &[0, 1]), &word(2, &[1, 0])).unwrap();
        assert_eq!(ve.errors(), &[1.0, 1.0]);
    }

    #[test]
    fn shape_errors() {
        assert!(error_vector(&word(8, &[0, 1]), &word(8, &[0])).is_err());
        assert!(error_vector(&word(8, &[0]), &word(4, &[0])).is_err());
        assert!(StateWord::new(4, vec![4]).is_err());
    }

    #[test]
    fn csv_exports() {
        assert_eq!(word(2, &[1, 0]).to_csv(), "cell_id,state\n0,1\n1,0\n");
        let ve = error_vector(&word(2, &[0, 0]), &word(2, &[1, 0])).unwrap();
        assert_eq!(ve.to_csv(), "state_index,error,occupancy\n0,0.5,2\n1,0,0\n");
    }

    /// Zero-noise responses after a uniform shift: cells on the drift side of
    /// the distribution saturate in the extreme state while cells on the
    /// opposite side cross the narrow central bins.
    #[test]
    fn drift_errors_concentrate_away_from_drift_direction() {
        let p = PopulationParams { sigma_law: SigmaLaw::Constant(0.0), ..Default::default() };
        let a = PufArray::sample(&p, &DriftLaw::default(), 77).unwrap();
        let base = a.measure_sweep(&Environment::reference(a.drift()), 0).unwrap();
        let q = StateQuantizer::calibrate(&base, 8).unwrap();
        let c = q.encode(&base);
        let lower = |v: &ErrorVector| v.errors()[..4].iter().sum::<f64>() / 4.0;
        let upper = |v: &ErrorVector| v.errors()[4..].iter().sum::<f64>() / 4.0;
        for shift in [0.15, 0.3] {
            let up = q.encode(&a.measure_sweep(&Environment::new(25.0, shift).unwrap(), 0).unwrap());
            let ve = error_vector(&c, &up).unwrap();
            assert_eq!(ve.errors()[7], 0.0);
            assert!(lower(&ve) > upper(&ve));
            let down = q.encode(&a.measure_sweep(&Environment::new(25.0, -shift).unwrap(), 0).unwrap());
            let ve = error_vector(&c, &down).unwrap();
            assert_eq!(ve.errors()[0], 0.0);
            assert!(upper(&ve) > lower(&ve));
        }
    }

    fn word_pair() -> impl Strategy<Value = (usize, Vec<u8>, Vec<u8>)> {
        prop::sample::select(vec![2usize, 4, 8]).prop_flat_map(|n| {
            (1usize..=512).prop_flat_map(move |len| {
                (
                    Just(n),
                    prop::collection::vec(0u8..n as u8, len),
                    prop::collection::vec(0u8..n as u8, len),
                )
            })
        })
    }

    proptest! {
        #[test]
        fn matches_naive_oracle((n, c, r) in word_pair()) {
            let ve = error_vector(&word(n, &c), &word(n, &r)).unwrap();
            let (errors, occ) = naive_error_vector(&c, &r, n);
            prop_assert_eq!(ve.errors(), errors.as_slice());
            prop_assert_eq!(ve.occupancies(), occ.as_slice());
            prop_assert_eq!(ve.total_occupancy(), c.len());
        }

        #[test]
        fn calibration_is_balanced(
            values in prop::collection::hash_set(-1_000_000i64..1_000_000, 8..400),
            n in prop::sample::select(vec![2usize, 3, 4, 8]),
        ) {
            let sweep: Vec<f64> = values.into_iter().map(|v| v as f64 * 1e-3).collect();
            let q = StateQuantizer::calibrate(&sweep, n).unwrap();
            let target = sweep.len() as f64 / n as f64;
            for occ in q.encode(&sweep).occupancies() {
                prop_assert!((occ as f64 - target).abs() <= 1.0);
            }
        }
    }
}
