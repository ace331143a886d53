//! The predictions CSV written by `backtest` and read by `report`.
//!
//! Prices use the shortest decimal form that parses back to the same
//! `f64`, so metrics recomputed from the file match the in-memory values
//! exactly.

use std::fmt::Write as _;

use chrono::NaiveDate;
use stockhmm::metrics;
use stockhmm::PredictionRecord;

pub const HEADER: &str = "date,open,predicted_close,actual_close,chosen_symbol,latency_used,direction_hit";

pub fn to_csv(records: &[PredictionRecord]) -> Result<String, String> {
    let mut s = String::from(HEADER);
    s.push('\n');
    for r in records {
        let actual = r
            .actual_close
            .ok_or_else(|| format!("record for {} has no actual close", r.date))?;
        let hit = metrics::direction_hit(r).map_err(|e| e.to_string())?;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.date,
            r.open,
            r.predicted_close,
            actual,
            r.chosen_symbol,
            r.latency_used,
            u8::from(hit)
        );
    }
    Ok(s)
}

/// One parsed line of a predictions file.
#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub date: NaiveDate,
    pub open: f64,
    pub predicted_close: f64,
    pub actual_close: f64,
    pub chosen_symbol: usize,
    pub latency_used: usize,
    pub direction_hit: bool,
}

impl Row {
    /// A record carrying what the metrics need. The file does not store the
    /// winning log-likelihood, so it is left as NaN.
    pub fn to_record(&self) -> PredictionRecord {
        PredictionRecord {
            date: self.date,
            open: self.open,
            predicted_close: self.predicted_close,
            actual_close: Some(self.actual_close),
            chosen_symbol: self.chosen_symbol,
            frac_change: self.predicted_close / self.open - 1.0,
            latency_used: self.latency_used,
            log_likelihood: f64::NAN,
        }
    }
}

/// Parses a predictions file; errors carry the 1-based line number.
pub fn parse(text: &str) -> Result<Vec<Row>, String> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == HEADER => {}
        Some((_, h)) => return Err(format!("line 1: unexpected header `{h}`")),
        None => return Err("empty predictions file".into()),
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let lineno = i + 1;
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 7 {
            return Err(format!("line {lineno}: expected 7 fields, found {}", f.len()));
        }
        let bad = |what: &str| format!("line {lineno}: bad {what}");
        let real = |s: &str, what: &str| s.parse::<f64>().map_err(|_| bad(what));
        rows.push(Row {
            date: f[0].parse().map_err(|_| bad("date"))?,
            open: real(f[1], "open")?,
            predicted_close: real(f[2], "predicted_close")?,
            actual_close: real(f[3], "actual_close")?,
            chosen_symbol: f[4].parse().map_err(|_| bad("chosen_symbol"))?,
            latency_used: f[5].parse().map_err(|_| bad("latency_used"))?,
            direction_hit: match f[6] {
                "1" => true,
                "0" => false,
                _ => return Err(bad("direction_hit")),
            },
        });
    }
    Ok(rows)
}
