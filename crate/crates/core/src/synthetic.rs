//! Seeded generator of daily bars driven by a hidden regime chain.
//!
//! Each regime fixes the distribution of the day's fractional change; wicks
//! above and below the body are drawn independently. Opens equal the previous
//! close and prices are rounded to cents. Used for fixtures and tests.

use chrono::{Datelike, Days, NaiveDate, Weekday};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::hmm::draw;
use crate::market::OhlcBar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Regime {
    /// Center of the fractional change.
    pub drift: f64,
    /// fracChange is uniform on `drift ± spread`.
    pub spread: f64,
    /// Upper and lower wicks are uniform on `[0, wick]` as a fraction of the open.
    pub wick: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegimeGenerator {
    pub regimes: Vec<Regime>,
    /// Row-major regime transition matrix.
    pub transition: Vec<f64>,
    pub start_price: f64,
    pub start_date: NaiveDate,
}

impl RegimeGenerator {
    /// Two sticky regimes, one rising and one falling, each kept with
    /// probability 0.9 per day.
    pub fn two_regime(start_date: NaiveDate) -> Self {
        Self {
            regimes: vec![
                Regime {
                    drift: 0.012,
                    spread: 0.008,
                    wick: 0.008,
                },
                Regime {
                    drift: -0.012,
                    spread: 0.008,
                    wick: 0.008,
                },
            ],
            transition: vec![0.9, 0.1, 0.1, 0.9],
            start_price: 100.0,
            start_date,
        }
    }

    /// Bars on consecutive weekdays from `start_date`, with their regimes.
    pub fn generate(&self, count: usize, seed: u64) -> Result<(Vec<OhlcBar>, Vec<usize>)> {
        let k = self.regimes.len();
        if k == 0 || self.transition.len() != k * k {
            return Err(Error::invalid("regime transition matrix does not match the regimes"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut date = next_weekday(self.start_date);
        let mut close = self.start_price;
        let mut regime = rng.random_range(0..k);
        let mut bars = Vec::with_capacity(count);
        let mut regimes = Vec::with_capacity(count);
        for t in 0..count {
            if t > 0 {
                regime = draw(&self.transition[regime * k..(regime + 1) * k], &mut rng);
                date = next_weekday(date + Days::new(1));
            }
            let r = self.regimes[regime];
            let fc = r.drift + r.spread * rng.random_range(-1.0..=1.0);
            let up: f64 = r.wick * rng.random::<f64>();
            let down: f64 = r.wick * rng.random::<f64>();
            let open = cents(close);
            let c = cents(open * (1.0 + fc));
            let high = cents(open.max(c) * (1.0 + up));
            let low = cents(open.min(c) * (1.0 - down));
            bars.push(OhlcBar::new(date, open, high, low, c)?);
            regimes.push(regime);
            close = c;
        }
        Ok((bars, regimes))
    }
}

fn cents(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

fn next_weekday(mut d: NaiveDate) -> NaiveDate {
    while matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
        d = d + Days::new(1);
    }
    d
}

/// Writes bars as `Date,Open,High,Low,Close`.
pub fn to_csv(bars: &[OhlcBar]) -> String {
    let mut s = String::from("Date,Open,High,Low,Close\n");
    for b in bars {
        s.push_str(&format!("{},{},{},{},{}\n", b.date, b.open, b.high, b.low, b.close));
    }
    s
}
