//! Daily OHLC bars, their fractional features and rolling training windows.

use std::io::Read;

use chrono::NaiveDate;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OhlcBar {
    pub date: NaiveDate,
    pub open: f64,
    pub high: f64,
    pub low: f64,
    pub close: f64,
}

impl OhlcBar {
    pub fn new(date: NaiveDate, open: f64, high: f64, low: f64, close: f64) -> Result<Self> {
        let bar = Self {
            date,
            open,
            high,
            low,
            close,
        };
        bar.validate()?;
        Ok(bar)
    }

    pub fn validate(&self) -> Result<()> {
        let prices = [self.open, self.high, self.low, self.close];
        if prices.iter().any(|p| !p.is_finite() || *p <= 0.0) {
            return Err(Error::invalid(format!(
                "{}: prices must be positive and finite",
                self.date
            )));
        }
        if self.low > self.open.min(self.close) {
            return Err(Error::invalid(format!(
                "{}: low {} is above min(open, close)",
                self.date, self.low
            )));
        }
        if self.high < self.open.max(self.close) {
            return Err(Error::invalid(format!(
                "{}: high {} is below max(open, close)",
                self.date, self.high
            )));
        }
        Ok(())
    }

    pub fn observation(&self) -> ObservationTriple {
        ObservationTriple {
            frac_change: (self.close - self.open) / self.open,
            frac_high: (self.high - self.open) / self.open,
            frac_low: (self.open - self.low) / self.open,
        }
    }
}

/// A trading day relative to its open.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObservationTriple {
    /// `(close - open) / open`
    pub frac_change: f64,
    /// `(high - open) / open`
    pub frac_high: f64,
    /// `(open - low) / open`
    pub frac_low: f64,
}

impl ObservationTriple {
    pub const FEATURE_NAMES: [&'static str; 3] = ["fracChange", "fracHigh", "fracLow"];

    pub fn new(frac_change: f64, frac_high: f64, frac_low: f64) -> Self {
        Self {
            frac_change,
            frac_high,
            frac_low,
        }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.frac_change, self.frac_high, self.frac_low]
    }

    pub fn from_array(v: [f64; 3]) -> Self {
        Self::new(v[0], v[1], v[2])
    }
}

/// Header names used to locate the required columns. Matching is
/// case-insensitive; unlisted columns are ignored.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnMap {
    pub date: String,
    pub open: String,
    pub high: String,
    pub low: String,
    pub close: String,
}

impl Default for ColumnMap {
    fn default() -> Self {
        Self {
            date: "Date".into(),
            open: "Open".into(),
            high: "High".into(),
            low: "Low".into(),
            close: "Close".into(),
        }
    }
}

impl ColumnMap {
    /// Parses `role=name` pairs separated by commas, e.g. `close=Adj Close`.
    /// Roles not mentioned keep their defaults.
    pub fn parse(spec: &str) -> Result<Self> {
        let mut map = Self::default();
        for pair in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let (role, name) = pair
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("column mapping `{pair}` is not role=name")))?;
            let slot = match role.trim().to_ascii_lowercase().as_str() {
                "date" => &mut map.date,
                "open" => &mut map.open,
                "high" => &mut map.high,
                "low" => &mut map.low,
                "close" => &mut map.close,
                other => return Err(Error::invalid(format!("unknown column role `{other}`"))),
            };
            *slot = name.trim().to_string();
        }
        Ok(map)
    }
}

/// Accepts `YYYY-MM-DD`, optionally followed by an ISO-8601 time part.
pub fn parse_date(s: &str) -> Option<NaiveDate> {
    let s = s.trim();
    let day = s.get(..10).unwrap_or(s);
    let rest = &s[day.len()..];
    if !(rest.is_empty() || rest.starts_with('T') || rest.starts_with(' ')) {
        return None;
    }
    NaiveDate::parse_from_str(day, "%Y-%m-%d").ok()
}

/// Reads comma-separated bars with a header row. The result is sorted by
/// date; duplicate dates and bars violating the OHLC ordering are rejected.
pub fn parse_csv<R: Read>(reader: R, columns: &ColumnMap) -> Result<Vec<OhlcBar>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::data(Some(1), format!("cannot read header: {e}")))?
        .clone();
    let find = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h.trim_start_matches('\u{feff}').eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::data(Some(1), format!("missing column `{name}`")))
    };
    let idx = [
        find(&columns.date)?,
        find(&columns.open)?,
        find(&columns.high)?,
        find(&columns.low)?,
        find(&columns.close)?,
    ];

    let mut bars = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let row = i + 2;
        let record = record.map_err(|e| Error::data(Some(row), e.to_string()))?;
        let field = |k: usize| record.get(idx[k]).unwrap_or("");
        let date = parse_date(field(0))
            .ok_or_else(|| Error::data(Some(row), format!("unparseable date `{}`", field(0))))?;
        let mut prices = [0.0; 4];
        for (k, p) in prices.iter_mut().enumerate() {
            let raw = field(k + 1);
            *p = raw.parse().map_err(|_| {
                Error::data(Some(row), format!("unparseable number `{raw}` in column {}", k + 1))
            })?;
        }
        let bar = OhlcBar::new(date, prices[0], prices[1], prices[2], prices[3])
            .map_err(|e| Error::data(Some(row), e.to_string().replace("invalid argument: ", "")))?;
        bars.push((row, bar));
    }
    bars.sort_by_key(|(_, b)| b.date);
    if let Some(w) = bars.windows(2).find(|w| w[0].1.date == w[1].1.date) {
        return Err(Error::data(
            Some(w[0].0.max(w[1].0)),
            format!("duplicate date {}", w[1].1.date),
        ));
    }
    Ok(bars.into_iter().map(|(_, b)| b).collect())
}

pub fn to_observations(bars: &[OhlcBar]) -> Vec<(NaiveDate, ObservationTriple)> {
    bars.iter().map(|b| (b.date, b.observation())).collect()
}

/// Bars dated within `[start, end]` (inclusive), either bound optional.
pub fn slice_dates(bars: &[OhlcBar], start: Option<NaiveDate>, end: Option<NaiveDate>) -> &[OhlcBar] {
    let lo = start.map_or(0, |s| bars.partition_point(|b| b.date < s));
    let hi = end.map_or(bars.len(), |e| bars.partition_point(|b| b.date <= e));
    &bars[lo..hi.max(lo)]
}

/// Overlapping windows of `latency` consecutive symbols, sliding by one.
pub fn rolling_windows(symbols: &[usize], latency: usize) -> Result<Vec<Vec<usize>>> {
    if latency == 0 {
        return Err(Error::invalid("latency must be positive"));
    }
    if symbols.len() < latency {
        return Err(Error::invalid(format!(
            "{} observations cannot fill a window of {latency}; need at least {latency}",
            symbols.len()
        )));
    }
    Ok(symbols.windows(latency).map(<[usize]>::to_vec).collect())
}
