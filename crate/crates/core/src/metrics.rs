//! Mean absolute percentage error and directional prediction accuracy.

use chrono::NaiveDate;

use crate::error::{Error, Result};
use crate::forecaster::PredictionRecord;

/// Sign with an exact zero: `sign(0.0) == 0`.
pub fn sign(x: f64) -> i8 {
    if x > 0.0 {
        1
    } else if x < 0.0 {
        -1
    } else {
        0
    }
}

fn actual(r: &PredictionRecord) -> Result<f64> {
    r.actual_close
        .ok_or_else(|| Error::invalid(format!("record for {} has no actual close", r.date)))
}

/// Whether predicted and actual close sit on the same side of the open
/// (a flat prediction only matches a flat day).
pub fn direction_hit(r: &PredictionRecord) -> Result<bool> {
    let c = actual(r)?;
    Ok(sign(r.predicted_close - r.open) == sign(c - r.open))
}

fn absolute_pct_error(r: &PredictionRecord) -> Result<f64> {
    let c = actual(r)?;
    Ok((r.predicted_close - c).abs() / c.abs() * 100.0)
}

pub fn mape(records: &[PredictionRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::invalid("MAPE of an empty prediction set"));
    }
    let total = records.iter().map(absolute_pct_error).sum::<Result<f64>>()?;
    Ok(total / records.len() as f64)
}

pub fn dpa(records: &[PredictionRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::invalid("DPA of an empty prediction set"));
    }
    let mut hits = 0usize;
    for r in records {
        hits += usize::from(direction_hit(r)?);
    }
    Ok(hits as f64 / records.len() as f64 * 100.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DayContribution {
    pub date: NaiveDate,
    pub abs_pct_error: f64,
    pub direction_hit: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationReport {
    /// Scored predictions; no-prediction days are not counted.
    pub n_p: usize,
    /// `None` when `n_p == 0`.
    pub mape: Option<f64>,
    pub dpa: Option<f64>,
    pub no_prediction_count: usize,
    pub per_day: Vec<DayContribution>,
}

pub fn evaluate(records: &[PredictionRecord], no_prediction_count: usize) -> Result<EvaluationReport> {
    let per_day = records
        .iter()
        .map(|r| {
            Ok(DayContribution {
                date: r.date,
                abs_pct_error: absolute_pct_error(r)?,
                direction_hit: direction_hit(r)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let (mape, dpa) = if records.is_empty() {
        (None, None)
    } else {
        (Some(mape(records)?), Some(dpa(records)?))
    };
    Ok(EvaluationReport {
        n_p: records.len(),
        mape,
        dpa,
        no_prediction_count,
        per_day,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(s: f64, p: f64, c: f64) -> PredictionRecord {
        PredictionRecord {
            date: NaiveDate::from_ymd_opt(2020, 1, 2).unwrap(),
            open: s,
            predicted_close: p,
            actual_close: Some(c),
            chosen_symbol: 1,
            frac_change: p / s - 1.0,
            latency_used: 10,
            log_likelihood: 0.0,
        }
    }

    #[test]
    fn mape_examples() {
        assert_eq!(mape(&[rec(100.0, 100.0, 100.0), rec(50.0, 51.0, 51.0)]).unwrap(), 0.0);
        assert!((mape(&[rec(100.0, 101.0, 100.0)]).unwrap() - 1.0).abs() < 1e-12);
        let two = [rec(100.0, 101.0, 100.0), rec(100.0, 97.0, 100.0)];
        assert!((mape(&two).unwrap() - 2.0).abs() < 1e-12);
        assert!(mape(&[]).is_err());
    }

    #[test]
    fn dpa_examples() {
        let all = [rec(100.0, 101.0, 105.0), rec(100.0, 98.0, 99.0)];
        assert_eq!(dpa(&all).unwrap(), 100.0);
        let none = [rec(100.0, 101.0, 95.0), rec(100.0, 98.0, 101.0)];
        assert_eq!(dpa(&none).unwrap(), 0.0);
        let mixed = [
            rec(100.0, 101.0, 102.0),
            rec(100.0, 99.0, 101.0),
            rec(100.0, 100.0, 100.0),
        ];
        assert!((dpa(&mixed).unwrap() - 200.0 / 3.0).abs() < 1e-12);
        assert!(dpa(&[]).is_err());
    }

    #[test]
    fn flat_prediction_misses_moving_day() {
        assert!(!direction_hit(&rec(100.0, 100.0, 100.5)).unwrap());
        assert!(!direction_hit(&rec(100.0, 100.5, 100.0)).unwrap());
    }

    #[test]
    fn missing_actual_is_an_error() {
        let mut r = rec(1.0, 1.0, 1.0);
        r.actual_close = None;
        assert!(mape(&[r.clone()]).is_err());
        assert!(evaluate(&[r], 0).is_err());
    }

    #[test]
    fn empty_report() {
        let rep = evaluate(&[], 3).unwrap();
        assert_eq!(rep.n_p, 0);
        assert_eq!(rep.mape, None);
        assert_eq!(rep.no_prediction_count, 3);
    }
}
