use chrono::{Days, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stockhmm::discretizer::BinCounts;
use stockhmm::forecaster::{self, ForecastConfig, TrainedModel};
use stockhmm::hmm::{self, HmmParameters};
use stockhmm::synthetic::RegimeGenerator;
use stockhmm::{Error, OhlcBar};

fn start() -> NaiveDate {
    NaiveDate::from_ymd_opt(2021, 1, 4).unwrap()
}

fn small_config() -> ForecastConfig {
    ForecastConfig {
        num_states: 2,
        num_mixtures: 2,
        bins: BinCounts::new(10, 4, 4),
        seed: 5,
        ..Default::default()
    }
}

fn regime_bars(n: usize, seed: u64) -> Vec<OhlcBar> {
    RegimeGenerator::two_regime(start()).generate(n, seed).unwrap().0
}

fn trained(bars: &[OhlcBar]) -> TrainedModel {
    forecaster::train(bars, &small_config()).unwrap().model
}

#[test]
fn training_is_deterministic() {
    let bars = regime_bars(200, 1);
    let a = forecaster::train(&bars, &small_config()).unwrap();
    let b = forecaster::train(&bars, &small_config()).unwrap();
    assert_eq!(a.model, b.model);
    assert_eq!(a.model.hmm.num_symbols(), 160);
    assert_eq!(a.model.training.num_windows, 191);
}

/// Bars whose triples fall in cells of a 2×2×2 lattice chosen by a planted
/// 2-state HMM over 8 symbols.
fn planted_lattice_bars(len: usize, seed: u64) -> Vec<OhlcBar> {
    let planted = HmmParameters::from_rows(
        &[0.5, 0.5],
        &[&[0.9, 0.1], &[0.15, 0.85]],
        &[
            &[0.4, 0.05, 0.3, 0.05, 0.1, 0.02, 0.06, 0.02],
            &[0.02, 0.3, 0.03, 0.4, 0.02, 0.1, 0.03, 0.1],
        ],
    )
    .unwrap();
    let (_, symbols) = hmm::sample(&planted, len, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
    symbols
        .iter()
        .enumerate()
        .map(|(t, &s)| {
            let (x, y, z) = (s % 2, (s / 2) % 2, s / 4);
            let fc = -0.02 + 0.02 * (x as f64 + rng.random::<f64>());
            let fh = 0.02 + 0.01 * (y as f64 + rng.random::<f64>());
            let fl = 0.02 + 0.01 * (z as f64 + rng.random::<f64>());
            let open = 50.0;
            OhlcBar::new(
                start() + Days::new(t as u64),
                open,
                open * (1.0 + fh),
                open * (1.0 - fl),
                open * (1.0 + fc),
            )
            .unwrap()
        })
        .collect()
}

#[test]
fn training_improves_window_likelihood() {
    let bars = planted_lattice_bars(300, 8);
    let cfg = ForecastConfig {
        num_states: 2,
        num_mixtures: 2,
        bins: BinCounts::new(2, 2, 2),
        seed: 3,
        ..Default::default()
    };
    let out = forecaster::train(&bars, &cfg).unwrap();
    let windows = out.model.training.num_windows as f64;
    let trace = &out.model.training.log_likelihood_trace;
    let init_mean = trace[0] / windows;
    let final_mean = trace.last().unwrap() / windows;
    assert!(final_mean >= init_mean, "{init_mean} -> {final_mean}");
    assert!(trace.windows(2).all(|w| w[1] >= w[0] - 1e-9));

    // Same quantity recomputed independently from the two models.
    let symbols: Vec<usize> = bars.iter().map(|b| out.model.symbol_of(b).unwrap().0 - 1).collect();
    let mean_ll = |m: &HmmParameters| {
        symbols
            .windows(10)
            .map(|w| hmm::forward(m, w).unwrap().log_likelihood)
            .sum::<f64>()
            / windows
    };
    assert!(mean_ll(&out.model.hmm) >= mean_ll(&out.initial_hmm));
}

#[test]
fn single_state_predicts_emission_argmax() {
    let bars = regime_bars(120, 2);
    let cfg = ForecastConfig {
        num_states: 1,
        ..small_config()
    };
    let out = forecaster::train(&bars, &cfg).unwrap();
    assert!(out.warnings.iter().any(|w| w.contains("single hidden state")));
    let m = out.model;
    assert_eq!(m.hmm.transition(), &[1.0]);
    let (arg, _) = m
        .hmm
        .emission_row(0)
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, &p)| if p > acc.1 { (i, p) } else { acc });
    let history = forecaster::history_before(&m, &bars, bars[100].date).unwrap();
    let rec = forecaster::predict_day(&m, bars[100].date, &history, bars[100].open).unwrap();
    assert_eq!(rec.chosen_symbol, arg + 1);
}

#[test]
fn shared_prefix_scan_equals_full_rescan() {
    let bars = regime_bars(220, 4);
    let model = trained(&bars[..180]);
    for day in 180..200 {
        let history = forecaster::history_before(&model, &bars, bars[day].date).unwrap();
        let hist0: Vec<usize> = history.iter().map(|s| s - 1).collect();
        let fast = forecaster::candidate_log_likelihoods(&model.hmm, &hist0).unwrap();
        let mut seq = hist0.clone();
        seq.push(0);
        for (m, f) in fast.iter().enumerate() {
            *seq.last_mut().unwrap() = m;
            let slow = hmm::forward(&model.hmm, &seq).unwrap().log_likelihood;
            if slow == f64::NEG_INFINITY {
                assert_eq!(*f, slow);
            } else {
                assert!((f - slow).abs() < 1e-12, "candidate {m}: {f} vs {slow}");
            }
        }
    }
}

#[test]
fn candidate_scan_matches_path_enumeration() {
    // 2 states, 8 symbols, 3-symbol history.
    let model = HmmParameters::from_rows(
        &[0.5, 0.5],
        &[&[0.8, 0.2], &[0.3, 0.7]],
        &[
            &[0.3, 0.2, 0.1, 0.1, 0.1, 0.1, 0.05, 0.05],
            &[0.02, 0.08, 0.1, 0.1, 0.1, 0.1, 0.2, 0.3],
        ],
    )
    .unwrap();
    for history in [[0usize, 0, 1], [7, 6, 7], [3, 0, 7], [2, 2, 2]] {
        let mut best = (0, 0.0);
        for m in 0..8 {
            let seq = [history[0], history[1], history[2], m];
            let mut p = 0.0;
            for code in 0..16usize {
                let path: Vec<usize> = (0..4).map(|t| (code >> (3 - t)) & 1).collect();
                let mut q = model.initial()[path[0]] * model.emission_prob(path[0], seq[0]);
                for t in 1..4 {
                    q *= model.transition_prob(path[t - 1], path[t]) * model.emission_prob(path[t], seq[t]);
                }
                p += q;
            }
            if p > best.1 {
                best = (m, p);
            }
        }
        let lls = forecaster::candidate_log_likelihoods(&model, &history).unwrap();
        let (arg, ll) = lls
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
        assert_eq!(arg, best.0, "history {history:?}");
        assert!((ll.exp() - best.1).abs() < 1e-12 * best.1);
    }
}

#[test]
fn winner_independent_of_scan_order() {
    let bars = regime_bars(220, 6);
    let model = trained(&bars[..180]);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for day in 180..190 {
        let history = forecaster::history_before(&model, &bars, bars[day].date).unwrap();
        let hist0: Vec<usize> = history.iter().map(|s| s - 1).collect();
        let lls = forecaster::candidate_log_likelihoods(&model.hmm, &hist0).unwrap();
        let rec = forecaster::predict_day(&model, bars[day].date, &history, bars[day].open).unwrap();
        if rec.latency_used != model.config.latency {
            continue;
        }
        let mut order: Vec<usize> = (0..lls.len()).collect();
        for i in (1..order.len()).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        // Reduce by (log-likelihood, -index).
        let winner = order
            .iter()
            .copied()
            .max_by(|&a, &b| lls[a].total_cmp(&lls[b]).then(b.cmp(&a)))
            .unwrap();
        assert_eq!(winner + 1, rec.chosen_symbol);
    }
}

#[test]
fn backtest_contracts() {
    let bars = regime_bars(260, 9);
    let model = trained(&bars[..200]);
    let empty = forecaster::backtest(&model, &bars, bars[210].date + Days::new(400), bars[259].date + Days::new(500)).unwrap();
    assert!(empty.records.is_empty() && empty.no_prediction.is_empty());

    let five = forecaster::backtest(&model, &bars, bars[220].date, bars[224].date).unwrap();
    assert!(five.records.len() + five.no_prediction.len() == 5);
    assert!(five.records.windows(2).all(|w| w[0].date < w[1].date));

    let full = forecaster::backtest(&model, &bars, bars[200].date, bars[259].date).unwrap();
    for r in &full.records {
        assert_eq!(r.predicted_close, r.open * (1.0 + r.frac_change));
        assert!((model.config.min_latency..=model.config.latency).contains(&r.latency_used));
        let center = model.grid.bin_center(r.chosen_symbol).unwrap().frac_change;
        assert_eq!(center, r.frac_change);
        assert!(r.actual_close.is_some());
    }

    let err = forecaster::backtest(&model, &bars, bars[3].date, bars[20].date).unwrap_err();
    assert!(err.to_string().contains(&bars[9].date.to_string()), "{err}");
}

#[test]
fn predictions_ignore_the_future() {
    let bars = regime_bars(260, 10);
    let model = trained(&bars[..200]);
    let base = forecaster::backtest(&model, &bars, bars[200].date, bars[259].date).unwrap();
    let cut = 230;
    let mut altered = bars.clone();
    // Scramble the target day's close/high/low and everything after it.
    for b in altered[cut..].iter_mut() {
        b.close *= 1.07;
        b.high = b.high.max(b.close) * 1.05;
        b.low *= 0.9;
    }
    for b in altered[cut + 1..].iter_mut() {
        b.open *= 1.03;
        b.high = b.high.max(b.open);
    }
    let alt = forecaster::backtest(&model, &altered, bars[200].date, bars[259].date).unwrap();
    let before = |o: &forecaster::BacktestOutcome| -> Vec<(NaiveDate, f64, usize)> {
        o.records
            .iter()
            .filter(|r| r.date <= bars[cut].date)
            .map(|r| (r.date, r.predicted_close, r.chosen_symbol))
            .collect()
    };
    assert_eq!(before(&base), before(&alt));
}

#[test]
fn history_shortage_reported() {
    let bars = regime_bars(50, 3);
    let model = trained(&bars);
    let err = forecaster::history_before(&model, &bars, bars[4].date).unwrap_err();
    assert!(matches!(err, Error::InvalidArgument(_)));
    assert_eq!(forecaster::history_before(&model, &bars, bars[9].date).unwrap().len(), 9);
}

#[test]
fn too_few_training_bars() {
    let bars = regime_bars(5, 3);
    assert!(forecaster::train(&bars, &small_config()).is_err());
}
