//! Training pipeline and next-close prediction.
//!
//! A day is predicted by appending every possible symbol to the most recent
//! `latency - 1` observed symbols and keeping the candidate whose sequence is
//! most likely under the trained HMM. When every candidate has probability
//! exactly zero the oldest history symbol is dropped and the scan repeated,
//! down to `min_latency` total symbols.

use chrono::NaiveDate;

use crate::discretizer::{
    init_emission, init_emission_per_component, BinCounts, DiscretizationGrid, EmissionSeeding,
    DEFAULT_EMISSION_JITTER,
};
use crate::error::{Error, Result, StageExt};
use crate::gmm::{self, GmmConfig};
use crate::hmm::{self, BaumWelchConfig, HmmParameters};
use crate::market::{rolling_windows, OhlcBar, ObservationTriple};

/// Mixed into `seed` to derive the emission jitter stream.
const JITTER_SEED_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForecastConfig {
    pub num_states: usize,
    pub num_mixtures: usize,
    pub latency: usize,
    pub min_latency: usize,
    pub bins: BinCounts,
    /// Seeds k-means++ directly and the emission jitter through a salt.
    pub seed: u64,
    pub emission_jitter: f64,
    pub emission_seeding: EmissionSeeding,
    pub gmm_max_iters: usize,
    pub gmm_rel_tol: f64,
    pub gmm_ridge: f64,
    pub baum_welch: BaumWelchConfig,
}

impl Default for ForecastConfig {
    fn default() -> Self {
        let gmm = GmmConfig::default();
        Self {
            num_states: 4,
            num_mixtures: 4,
            latency: 10,
            min_latency: 4,
            bins: BinCounts::default(),
            seed: 0,
            emission_jitter: DEFAULT_EMISSION_JITTER,
            emission_seeding: EmissionSeeding::default(),
            gmm_max_iters: gmm.max_iters,
            gmm_rel_tol: gmm.rel_tol,
            gmm_ridge: gmm.ridge,
            baum_welch: BaumWelchConfig::default(),
        }
    }
}

impl ForecastConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_states == 0 || self.num_mixtures == 0 {
            return Err(Error::invalid("states and mixture components must be positive"));
        }
        if self.min_latency == 0 || self.latency < self.min_latency {
            return Err(Error::invalid(format!(
                "need latency ({}) >= min latency ({}) >= 1",
                self.latency, self.min_latency
            )));
        }
        if self.bins.as_array().contains(&0) {
            return Err(Error::invalid("bin counts must be positive"));
        }
        Ok(())
    }

    pub fn gmm_config(&self) -> GmmConfig {
        GmmConfig {
            max_iters: self.gmm_max_iters,
            rel_tol: self.gmm_rel_tol,
            ridge: self.gmm_ridge,
            seed: self.seed,
        }
    }

    pub fn jitter_seed(&self) -> u64 {
        self.seed ^ JITTER_SEED_SALT
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSummary {
    pub start: NaiveDate,
    pub end: NaiveDate,
    pub num_bars: usize,
    pub num_windows: usize,
    pub iterations: usize,
    pub converged: bool,
    pub log_likelihood_trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub hmm: HmmParameters,
    pub grid: DiscretizationGrid,
    pub config: ForecastConfig,
    pub training: TrainingSummary,
}

impl TrainedModel {
    pub fn new(
        hmm: HmmParameters,
        grid: DiscretizationGrid,
        config: ForecastConfig,
        training: TrainingSummary,
    ) -> Result<Self> {
        config.validate()?;
        if hmm.num_symbols() != grid.num_symbols() {
            return Err(Error::invalid(format!(
                "HMM has {} symbols but the grid defines {}",
                hmm.num_symbols(),
                grid.num_symbols()
            )));
        }
        if hmm.num_states() != config.num_states {
            return Err(Error::invalid("HMM state count differs from the configuration"));
        }
        if grid.counts() != config.bins {
            return Err(Error::invalid("grid bin counts differ from the configuration"));
        }
        Ok(Self {
            hmm,
            grid,
            config,
            training,
        })
    }

    /// 1-based symbol of a bar under this model's grid, plus a clamping flag.
    pub fn symbol_of(&self, bar: &OhlcBar) -> Result<(usize, bool)> {
        self.grid.symbol(&bar.observation())
    }
}

/// A trained model together with diagnostics produced along the way.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: TrainedModel,
    pub initial_hmm: HmmParameters,
    pub gmm_log_likelihood_trace: Vec<f64>,
    pub warnings: Vec<String>,
}

/// Runs the full pipeline on `bars`, which must already be restricted to
/// the training period.
pub fn train(bars: &[OhlcBar], config: &ForecastConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let (first, last) = match (bars.first(), bars.last()) {
        (Some(f), Some(l)) if bars.len() >= config.latency.max(2) => (f.date, l.date),
        _ => {
            return Err(Error::invalid(format!(
                "{} training bars; at least {} are needed for one window",
                bars.len(),
                config.latency.max(2)
            )))
        }
    };
    let mut warnings = Vec::new();
    if config.num_states == 1 {
        warnings.push("a single hidden state makes the transition matrix trivial".to_string());
    }

    let observations: Vec<ObservationTriple> = bars.iter().map(OhlcBar::observation).collect();
    let grid = DiscretizationGrid::fit(&observations, config.bins).stage("discretization")?;
    let symbols = observations
        .iter()
        .map(|o| grid.symbol(o).map(|(n, _)| n - 1))
        .collect::<Result<Vec<_>>>()
        .stage("discretization")?;

    let points: Vec<[f64; 3]> = observations.iter().map(|o| o.to_array()).collect();
    let mixture = gmm::fit(&points, config.num_mixtures, &config.gmm_config()).stage("mixture fit")?;
    warnings.extend(mixture.warnings.iter().map(|w| format!("mixture fit: {w}")));

    let n = config.num_states;
    let m = grid.num_symbols();
    let seed_rows = match config.emission_seeding {
        EmissionSeeding::Shared => init_emission,
        EmissionSeeding::PerComponent => init_emission_per_component,
    };
    let emission = seed_rows(
        &mixture.model,
        &grid,
        n,
        config.jitter_seed(),
        config.emission_jitter,
    )
    .stage("emission initialization")?;
    warnings.extend(emission.warnings.iter().map(|w| format!("emission initialization: {w}")));
    let initial_hmm = HmmParameters::new(
        n,
        m,
        vec![1.0 / n as f64; n],
        vec![1.0 / n as f64; n * n],
        emission.matrix,
    )
    .stage("emission initialization")?;

    let windows = rolling_windows(&symbols, config.latency).stage("windows")?;
    let bw = hmm::baum_welch(&initial_hmm, &windows, &config.baum_welch).stage("baum-welch")?;
    warnings.extend(bw.warnings.iter().map(|w| format!("baum-welch: {w}")));

    let training = TrainingSummary {
        start: first,
        end: last,
        num_bars: bars.len(),
        num_windows: windows.len(),
        iterations: bw.iterations,
        converged: bw.converged,
        log_likelihood_trace: bw.log_likelihood_trace,
    };
    Ok(TrainOutcome {
        model: TrainedModel::new(bw.model, grid, *config, training)?,
        initial_hmm,
        gmm_log_likelihood_trace: mixture.log_likelihood_trace,
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRecord {
    pub date: NaiveDate,
    pub open: f64,
    pub predicted_close: f64,
    pub actual_close: Option<f64>,
    /// 1-based flattened symbol of the winning candidate.
    pub chosen_symbol: usize,
    /// fracChange at the center of the winning symbol's bin.
    pub frac_change: f64,
    /// Total sequence length (history plus candidate) that produced the winner.
    pub latency_used: usize,
    pub log_likelihood: f64,
}

/// `ln P(history ⊕ m)` for every candidate symbol `m` (0-based), computed
/// with one forward pass over the history and a one-step extension per
/// candidate. Candidates with zero probability get `-inf`; all entries are
/// `-inf` when the history itself is impossible.
pub fn candidate_log_likelihoods(model: &HmmParameters, history: &[usize]) -> Result<Vec<f64>> {
    let m = model.num_symbols();
    let (predictive, base) = if history.is_empty() {
        (model.initial().to_vec(), 0.0)
    } else {
        let fwd = hmm::forward(model, history)?;
        if fwd.degenerate {
            return Ok(vec![f64::NEG_INFINITY; m]);
        }
        (model.propagate(fwd.last_alpha()), fwd.log_likelihood)
    };
    Ok((0..m)
        .map(|o| {
            let s: f64 = predictive
                .iter()
                .enumerate()
                .map(|(j, p)| p * model.emission_prob(j, o))
                .sum();
            if s > 0.0 {
                base + s.ln()
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect())
}

/// `ln P(symbol | history)` for a 0-based symbol.
pub fn conditional_log_likelihood(model: &HmmParameters, history: &[usize], symbol: usize) -> Result<f64> {
    let all = candidate_log_likelihoods(model, history)?;
    let base = if history.is_empty() {
        0.0
    } else {
        hmm::forward(model, history)?.log_likelihood
    };
    let v = *all
        .get(symbol)
        .ok_or_else(|| Error::invalid(format!("symbol {symbol} outside the alphabet")))?;
    Ok(v - base)
}

/// Most likely candidate (0-based symbol, log-likelihood); ties go to the
/// smallest symbol. `None` when every candidate is impossible.
fn best_candidate(model: &HmmParameters, history: &[usize]) -> Result<Option<(usize, f64)>> {
    let lls = candidate_log_likelihoods(model, history)?;
    let (arg, best) = hmm::argmax_first(&lls);
    Ok((best > f64::NEG_INFINITY).then_some((arg, best)))
}

/// Predicts the close of `date` from the `latency - 1` preceding symbols
/// (1-based, oldest first) and the day's open.
pub fn predict_day(
    model: &TrainedModel,
    date: NaiveDate,
    history: &[usize],
    open: f64,
) -> Result<PredictionRecord> {
    let cfg = &model.config;
    if history.len() != cfg.latency - 1 {
        return Err(Error::invalid(format!(
            "history has {} symbols, expected {}",
            history.len(),
            cfg.latency - 1
        )));
    }
    if !(open.is_finite() && open > 0.0) {
        return Err(Error::invalid(format!("open price {open} must be positive")));
    }
    let m = model.grid.num_symbols();
    let hist0 = history
        .iter()
        .map(|&s| {
            if (1..=m).contains(&s) {
                Ok(s - 1)
            } else {
                Err(Error::invalid(format!("history symbol {s} outside [1, {m}]")))
            }
        })
        .collect::<Result<Vec<_>>>()?;

    for latency_used in (cfg.min_latency..=cfg.latency).rev() {
        let window = &hist0[cfg.latency - latency_used..];
        if let Some((sym, ll)) = best_candidate(&model.hmm, window)? {
            let chosen_symbol = sym + 1;
            let frac_change = model.grid.bin_center(chosen_symbol)?.frac_change;
            return Ok(PredictionRecord {
                date,
                open,
                predicted_close: open * (1.0 + frac_change),
                actual_close: None,
                chosen_symbol,
                frac_change,
                latency_used,
                log_likelihood: ll,
            });
        }
    }
    Err(Error::NoPrediction {
        date,
        min_latency: cfg.min_latency,
    })
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BacktestOutcome {
    pub records: Vec<PredictionRecord>,
    /// Days on which no candidate had non-zero probability.
    pub no_prediction: Vec<NaiveDate>,
    /// Bars (history or test) with at least one feature outside the grid.
    pub clamped_bars: usize,
}

/// Day-ahead predictions for every bar dated in `[start, end]`. Histories
/// always consist of actually observed bars strictly before the predicted
/// day; only the day's open is taken from the day itself.
pub fn backtest(
    model: &TrainedModel,
    bars: &[OhlcBar],
    start: NaiveDate,
    end: NaiveDate,
) -> Result<BacktestOutcome> {
    let lo = bars.partition_point(|b| b.date < start);
    let hi = bars.partition_point(|b| b.date <= end).max(lo);
    if lo == hi {
        return Ok(BacktestOutcome::default());
    }
    let need = model.config.latency - 1;
    if lo < need {
        return Err(match bars.get(need) {
            Some(b) => Error::invalid(format!(
                "{} needs {need} earlier bars; the first feasible date is {}",
                bars[lo].date, b.date
            )),
            None => Error::invalid(format!(
                "the data has {} bars but {} are needed for a single prediction",
                bars.len(),
                need + 1
            )),
        });
    }

    let mut symbols = Vec::with_capacity(hi - lo + need);
    let mut clamped_bars = 0;
    for bar in &bars[lo - need..hi] {
        let (s, c) = model.symbol_of(bar)?;
        symbols.push(s);
        clamped_bars += usize::from(c);
    }

    let mut out = BacktestOutcome {
        clamped_bars,
        ..Default::default()
    };
    for (k, bar) in bars[lo..hi].iter().enumerate() {
        let history = &symbols[k..k + need];
        match predict_day(model, bar.date, history, bar.open) {
            Ok(mut rec) => {
                rec.actual_close = Some(bar.close);
                out.records.push(rec);
            }
            Err(Error::NoPrediction { date, .. }) => out.no_prediction.push(date),
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// `latency - 1` symbols immediately preceding `date`, or an error naming
/// how many are available.
pub fn history_before(model: &TrainedModel, bars: &[OhlcBar], date: NaiveDate) -> Result<Vec<usize>> {
    let need = model.config.latency - 1;
    let idx = bars.partition_point(|b| b.date < date);
    if idx < need {
        return Err(Error::invalid(format!(
            "{date} has {idx} earlier bars; {need} are required"
        )));
    }
    bars[idx - need..idx]
        .iter()
        .map(|b| model.symbol_of(b).map(|(s, _)| s))
        .collect()
}
