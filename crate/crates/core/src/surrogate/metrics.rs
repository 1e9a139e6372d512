use serde::{Deserialize, Serialize};

use super::SurrogateError;

/// Entries with `|y_true|` below this are left out of MAPE.
pub const MAPE_EPS: f64 = 1e-6;

/// Mean absolute error.
pub fn mae(pred: &[f64], truth: &[f64]) -> Result<f64, SurrogateError> {
    check(pred, truth)?;
    if pred.is_empty() {
        return Ok(0.0);
    }
    let s: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).sum();
    Ok(s / pred.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mape {
    /// Fraction, not percent.
    pub value: f64,
    /// Entries skipped because the true value is below the cutoff.
    pub excluded: usize,
}

/// Mean absolute percentage error as a fraction, over entries with
/// `|y_true| >= eps`.
pub fn mape_eps(pred: &[f64], truth: &[f64], eps: f64) -> Result<Mape, SurrogateError> {
    check(pred, truth)?;
    let mut sum = 0.0;
    let mut n = 0usize;
    for (p, t) in pred.iter().zip(truth) {
        if t.abs() < eps {
            continue;
        }
        sum += ((p - t) / t).abs();
        n += 1;
    }
    Ok(Mape {
        value: if n == 0 { 0.0 } else { sum / n as f64 },
        excluded: pred.len() - n,
    })
}

pub fn mape(pred: &[f64], truth: &[f64]) -> Result<Mape, SurrogateError> {
    mape_eps(pred, truth, MAPE_EPS)
}

fn check(pred: &[f64], truth: &[f64]) -> Result<(), SurrogateError> {
    if pred.len() != truth.len() {
        return Err(SurrogateError::LengthMismatch {
            pred: pred.len(),
            truth: truth.len(),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_example() {
        assert_eq!(mae(&[2.0, 4.0], &[1.0, 4.0]).unwrap(), 0.5);
        let m = mape(&[2.0, 4.0], &[1.0, 4.0]).unwrap();
        assert_eq!(m.value, 0.5);
        assert_eq!(m.excluded, 0);
        let m = mape(&[1.0, 4.0], &[0.0, 2.0]).unwrap();
        assert_eq!((m.value, m.excluded), (1.0, 1));
        assert!(mae(&[1.0], &[]).is_err());
    }
}
