//! Plain-text model files, format `mqv1`.
//!
//! Each line is a key followed by whitespace-separated values; matrices are
//! introduced by a line carrying their dimensions and followed by one line
//! per row. Keys appear in a fixed order. Reals are written with 17
//! significant digits so a load reproduces the saved model bit for bit.
//!
//! ```text
//! format mqv1
//! num_states 4
//! ...
//! edges fracChange 51
//! <51 values>
//! ...
//! transition 4 4
//! <row>
//! ...
//! end
//! ```

use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::str::FromStr;

use chrono::NaiveDate;

use crate::discretizer::{BinCounts, DiscretizationGrid, EmissionSeeding};
use crate::error::{Error, Result};
use crate::forecaster::{ForecastConfig, TrainedModel, TrainingSummary};
use crate::hmm::{BaumWelchConfig, HmmParameters};
use crate::market::ObservationTriple;

pub const FORMAT_VERSION: &str = "mqv1";

fn real(x: f64) -> String {
    format!("{x:.16e}")
}

fn row(values: &[f64]) -> String {
    let mut s = String::with_capacity(values.len() * 24);
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        let _ = write!(s, "{v:.16e}");
    }
    s
}

/// Serializes a model to its text form.
pub fn to_string(model: &TrainedModel) -> String {
    let c = &model.config;
    let t = &model.training;
    let h = &model.hmm;
    let b = c.bins;
    let mut out = String::new();
    let mut line = |s: String| {
        out.push_str(&s);
        out.push('\n');
    };
    line(format!("format {FORMAT_VERSION}"));
    line(format!("num_states {}", c.num_states));
    line(format!("num_mixtures {}", c.num_mixtures));
    line(format!("latency {}", c.latency));
    line(format!("min_latency {}", c.min_latency));
    line(format!("bins {} {} {}", b.frac_change, b.frac_high, b.frac_low));
    line(format!("seed {}", c.seed));
    line(format!("emission_jitter {}", real(c.emission_jitter)));
    line(format!("emission_seeding {}", c.emission_seeding.as_str()));
    line(format!("gmm_max_iters {}", c.gmm_max_iters));
    line(format!("gmm_rel_tol {}", real(c.gmm_rel_tol)));
    line(format!("gmm_ridge {}", real(c.gmm_ridge)));
    line(format!("bw_max_iters {}", c.baum_welch.max_iters));
    line(format!("bw_rel_tol {}", real(c.baum_welch.log_likelihood_rel_tol)));
    line(format!("bw_estimate_initial {}", c.baum_welch.estimate_initial));
    line(format!("train_start {}", t.start));
    line(format!("train_end {}", t.end));
    line(format!("train_bars {}", t.num_bars));
    line(format!("train_windows {}", t.num_windows));
    line(format!("bw_iterations {}", t.iterations));
    line(format!("bw_converged {}", t.converged));
    for (name, e) in ObservationTriple::FEATURE_NAMES.iter().zip(model.grid.edges()) {
        line(format!("edges {name} {}", e.len()));
        line(row(e));
    }
    line(format!("initial {}", h.num_states()));
    line(row(h.initial()));
    line(format!("transition {} {}", h.num_states(), h.num_states()));
    for i in 0..h.num_states() {
        line(row(h.transition_row(i)));
    }
    line(format!("emission {} {}", h.num_states(), h.num_symbols()));
    for i in 0..h.num_states() {
        line(row(h.emission_row(i)));
    }
    line(format!("trace {}", t.log_likelihood_trace.len()));
    line(row(&t.log_likelihood_trace));
    line("end".to_string());
    out
}

pub fn save<W: Write>(model: &TrainedModel, mut w: W) -> Result<()> {
    w.write_all(to_string(model).as_bytes())
        .map_err(|e| Error::data(None, format!("cannot write model: {e}")))
}

struct Lines<R> {
    inner: std::io::Lines<R>,
    number: usize,
}

impl<R: BufRead> Lines<R> {
    fn next_line(&mut self) -> Result<String> {
        self.number += 1;
        match self.inner.next() {
            Some(Ok(l)) => Ok(l),
            Some(Err(e)) => Err(self.err(format!("read failure: {e}"))),
            None => Err(self.err("unexpected end of model file")),
        }
    }

    fn err(&self, msg: impl Into<String>) -> Error {
        Error::data(Some(self.number), msg)
    }

    /// Reads `key v1 v2 ...` and returns the values.
    fn keyed(&mut self, key: &str) -> Result<Vec<String>> {
        let l = self.next_line()?;
        let mut it = l.split_whitespace();
        match it.next() {
            Some(k) if k == key => Ok(it.map(str::to_string).collect()),
            other => Err(self.err(format!("expected `{key}`, found `{}`", other.unwrap_or("")))),
        }
    }

    fn scalar<T: FromStr>(&mut self, key: &str) -> Result<T> {
        let v = self.keyed(key)?;
        match v.as_slice() {
            [one] => one
                .parse()
                .map_err(|_| self.err(format!("bad value `{one}` for `{key}`"))),
            _ => Err(self.err(format!("`{key}` takes exactly one value"))),
        }
    }

    fn dims(&mut self, key: &str, expect: usize) -> Result<Vec<usize>> {
        let v = self.keyed(key)?;
        let dims: Vec<usize> = v
            .iter()
            .map(|s| s.parse())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| self.err(format!("bad dimensions for `{key}`")))?;
        if dims.len() != expect {
            return Err(self.err(format!("`{key}` needs {expect} dimension(s)")));
        }
        Ok(dims)
    }

    fn reals(&mut self, count: usize) -> Result<Vec<f64>> {
        let l = self.next_line()?;
        let v: Vec<f64> = l
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| self.err("unparseable real"))?;
        if v.len() != count {
            return Err(self.err(format!("expected {count} values, found {}", v.len())));
        }
        Ok(v)
    }
}

pub fn load<R: BufRead>(reader: R) -> Result<TrainedModel> {
    let mut r = Lines {
        inner: reader.lines(),
        number: 0,
    };
    let version: String = r.scalar("format")?;
    if version != FORMAT_VERSION {
        return Err(r.err(format!(
            "model format `{version}` is not supported (expected {FORMAT_VERSION})"
        )));
    }
    let num_states: usize = r.scalar("num_states")?;
    let num_mixtures: usize = r.scalar("num_mixtures")?;
    let latency: usize = r.scalar("latency")?;
    let min_latency: usize = r.scalar("min_latency")?;
    let bins = r.dims("bins", 3)?;
    let bins = BinCounts::new(bins[0], bins[1], bins[2]);
    let seed: u64 = r.scalar("seed")?;
    let emission_jitter: f64 = r.scalar("emission_jitter")?;
    let seeding: String = r.scalar("emission_seeding")?;
    let emission_seeding = EmissionSeeding::parse(&seeding).map_err(|e| r.err(e.to_string()))?;
    let gmm_max_iters: usize = r.scalar("gmm_max_iters")?;
    let gmm_rel_tol: f64 = r.scalar("gmm_rel_tol")?;
    let gmm_ridge: f64 = r.scalar("gmm_ridge")?;
    let baum_welch = BaumWelchConfig {
        max_iters: r.scalar("bw_max_iters")?,
        log_likelihood_rel_tol: r.scalar("bw_rel_tol")?,
        estimate_initial: r.scalar("bw_estimate_initial")?,
    };
    let config = ForecastConfig {
        num_states,
        num_mixtures,
        latency,
        min_latency,
        bins,
        seed,
        emission_jitter,
        emission_seeding,
        gmm_max_iters,
        gmm_rel_tol,
        gmm_ridge,
        baum_welch,
    };
    let start: NaiveDate = r.scalar("train_start")?;
    let end: NaiveDate = r.scalar("train_end")?;
    let num_bars = r.scalar("train_bars")?;
    let num_windows = r.scalar("train_windows")?;
    let iterations = r.scalar("bw_iterations")?;
    let converged = r.scalar("bw_converged")?;

    let mut edges: [Vec<f64>; 3] = Default::default();
    for (k, e) in edges.iter_mut().enumerate() {
        let name = ObservationTriple::FEATURE_NAMES[k];
        let v = r.keyed("edges")?;
        let len: usize = match v.as_slice() {
            [n, len] if n == name => len.parse().map_err(|_| r.err("bad edge count"))?,
            _ => return Err(r.err(format!("expected `edges {name} <count>`"))),
        };
        *e = r.reals(len)?;
    }
    let grid = DiscretizationGrid::from_edges(bins, edges).map_err(|e| r.err(e.to_string()))?;

    let n = r.dims("initial", 1)?[0];
    let initial = r.reals(n)?;
    let d = r.dims("transition", 2)?;
    let mut transition = Vec::with_capacity(d[0] * d[1]);
    for _ in 0..d[0] {
        transition.extend(r.reals(d[1])?);
    }
    let d = r.dims("emission", 2)?;
    let (states, symbols) = (d[0], d[1]);
    let mut emission = Vec::with_capacity(states * symbols);
    for _ in 0..states {
        emission.extend(r.reals(symbols)?);
    }
    let hmm = HmmParameters::new(n, symbols, initial, transition, emission)
        .map_err(|e| r.err(e.to_string()))?;
    let len = r.dims("trace", 1)?[0];
    let log_likelihood_trace = r.reals(len)?;
    r.keyed("end")?;

    let training = TrainingSummary {
        start,
        end,
        num_bars,
        num_windows,
        iterations,
        converged,
        log_likelihood_trace,
    };
    TrainedModel::new(hmm, grid, config, training).map_err(|e| r.err(e.to_string()))
}

pub fn from_str(s: &str) -> Result<TrainedModel> {
    load(s.as_bytes())
}
