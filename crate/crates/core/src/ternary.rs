//! Ternary 0/1/X classification around a single threshold.
//!
//! Cells whose reading falls within `margin` of the threshold are marked `X`
//! and carry no identification weight; only solid 0 and 1 cells of the
//! challenge are scored.

use serde::{Deserialize, Serialize};

use crate::error::{param, shape, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Trit {
    Zero,
    One,
    X,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TernaryWord {
    symbols: Vec<Trit>,
    threshold: f64,
    margin: f64,
}

impl TernaryWord {
    pub fn symbols(&self) -> &[Trit] {
        &self.symbols
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn margin(&self) -> f64 {
        self.margin
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn x_fraction(&self) -> f64 {
        if self.symbols.is_empty() {
            return 0.0;
        }
        self.symbols.iter().filter(|s| **s == Trit::X).count() as f64 / self.symbols.len() as f64
    }
}

/// `Zero` iff `v <= t - margin`, `One` iff `v >= t + margin`, `X` otherwise.
/// With zero margin a reading equal to the threshold is `Zero`.
pub fn ternary_encode(sweep: &[f64], threshold: f64, margin: f64) -> Result<TernaryWord> {
    if !(margin.is_finite() && margin >= 0.0) {
        return Err(param(format!("margin must be >= 0, got {margin}")));
    }
    if !threshold.is_finite() {
        return Err(param("threshold must be finite"));
    }
    let symbols = sweep
        .iter()
        .map(|v| {
            if *v <= threshold - margin {
                Trit::Zero
            } else if *v >= threshold + margin {
                Trit::One
            } else {
                Trit::X
            }
        })
        .collect();
    Ok(TernaryWord { symbols, threshold, margin })
}

/// Fraction of solid (non-X) challenge cells whose response symbol differs.
/// Returns 0 when the challenge has no solid cells.
pub fn ternary_crp_error(challenge: &TernaryWord, response: &TernaryWord) -> Result<f64> {
    if challenge.len() != response.len() {
        return Err(shape(format!(
            "challenge has {} cells, response {}",
            challenge.len(),
            response.len()
        )));
    }
    let (scored, mismatched) = challenge
        .symbols
        .iter()
        .zip(&response.symbols)
        .filter(|(c, _)| **c != Trit::X)
        .fold((0usize, 0usize), |(n, m), (c, r)| (n + 1, m + usize::from(c != r)));
    Ok(if scored == 0 { 0.0 } else { mismatched as f64 / scored as f64 })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn word(symbols: &[Trit]) -> TernaryWord {
        TernaryWord { symbols: symbols.to_vec(), threshold: 2.1, margin: 0.1 }
    }

    #[test]
    fn classification() {
        let w = ternary_encode(&[1.5, 2.15, 2.5], 2.1, 0.2).unwrap();
        assert_eq!(w.symbols(), &[Trit::Zero, Trit::X, Trit::One]);
        assert_eq!(ternary_encode(&[2.1], 2.1, 0.0).unwrap().symbols(), &[Trit::Zero]);
        assert!(ternary_encode(&[2.1], 2.1, -0.1).is_err());
    }

    #[test]
    fn scoring_ignores_x_challenges() {
        use Trit::*;
        let e = ternary_crp_error(&word(&[Zero, One, X]), &word(&[Zero, Zero, One])).unwrap();
        assert_eq!(e, 0.5);
        assert_eq!(ternary_crp_error(&word(&[X, X]), &word(&[Zero, One])).unwrap(), 0.0);
        assert_eq!(ternary_crp_error(&word(&[Zero, One]), &word(&[Zero, One])).unwrap(), 0.0);
        assert!(ternary_crp_error(&word(&[Zero]), &word(&[Zero, One])).is_err());
    }

    #[test]
    fn x_fraction_grows_with_margin() {
        let sweep: Vec<f64> = (0..100).map(|i| 1.6 + i as f64 * 0.01).collect();
        let narrow = ternary_encode(&sweep, 2.1, 0.05).unwrap().x_fraction();
        let wide = ternary_encode(&sweep, 2.1, 0.2).unwrap().x_fraction();
        assert!(wide > narrow);
    }
}
