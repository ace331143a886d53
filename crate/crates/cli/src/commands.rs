use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::Path;

use chrono::NaiveDate;
use stockhmm::forecaster::{self, ForecastConfig, TrainedModel};
use stockhmm::market::{self, ColumnMap};
use stockhmm::metrics::{self, EvaluationReport};
use stockhmm::synthetic::{self, RegimeGenerator};
use stockhmm::{model_file, BinCounts, EmissionSeeding, Error, OhlcBar};

use crate::{chart, predictions, BacktestArgs, CmdResult, Failure, OutputFormat, PredictArgs, ReportArgs, SynthArgs, TrainArgs};

pub fn load_bars(path: &Path, columns: Option<&str>) -> Result<Vec<OhlcBar>, Failure> {
    let map = match columns {
        Some(spec) => ColumnMap::parse(spec).map_err(|e| Failure::usage(e.to_string()))?,
        None => ColumnMap::default(),
    };
    let file = fs::File::open(path).map_err(|e| Failure::data(format!("{}: {e}", path.display())))?;
    market::parse_csv(std::io::BufReader::new(file), &map)
        .map_err(|e| Failure::data(format!("{}: {e}", path.display())))
}

pub fn load_model(path: &Path) -> Result<TrainedModel, Failure> {
    let file = fs::File::open(path).map_err(|e| Failure::data(format!("{}: {e}", path.display())))?;
    model_file::load(std::io::BufReader::new(file))
        .map_err(|e| Failure::data(format!("{}: {e}", path.display())))
}

pub fn config_from(args: &TrainArgs) -> Result<ForecastConfig, Failure> {
    let config = ForecastConfig {
        num_states: args.states,
        num_mixtures: args.mixtures,
        latency: args.latency,
        min_latency: args.min_latency,
        bins: BinCounts::parse(&args.bins).map_err(|e| Failure::usage(e.to_string()))?,
        seed: args.seed,
        emission_seeding: EmissionSeeding::parse(&args.emission_init).map_err(|e| Failure::usage(e.to_string()))?,
        ..Default::default()
    };
    config.validate().map_err(|e| Failure::usage(e.to_string()))?;
    Ok(config)
}

/// Exit code for a failed training run: unusable input data is a data
/// error, everything past that point is a training failure.
fn training_failure(e: Error) -> Failure {
    let data_side = match &e {
        Error::Stage { stage, .. } => matches!(*stage, "discretization" | "windows"),
        Error::InvalidArgument(_) | Error::Data { .. } => true,
        _ => false,
    };
    if data_side {
        Failure::data(e.to_string())
    } else {
        Failure::training(e.to_string())
    }
}

pub fn train(args: &TrainArgs, out: &mut dyn Write, err: &mut dyn Write) -> CmdResult {
    if let (Some(s), Some(e)) = (args.train_start, args.train_end) {
        if e < s {
            return Err(Failure::usage(format!("--train-end {e} is before --train-start {s}")));
        }
    }
    let config = config_from(args)?;
    let bars = load_bars(&args.data.csv, args.data.columns.as_deref())?;
    let range = market::slice_dates(&bars, args.train_start, args.train_end);
    if range.is_empty() {
        return Err(Failure::data("no bars fall in the training range"));
    }
    let outcome = forecaster::train(range, &config).map_err(training_failure)?;
    for w in &outcome.warnings {
        writeln!(err, "warning: {w}")?;
    }
    let text = model_file::to_string(&outcome.model);
    fs::write(&args.out, text).map_err(|e| Failure::data(format!("{}: {e}", args.out.display())))?;

    let t = &outcome.model.training;
    let final_ll = t.log_likelihood_trace.last().copied().unwrap_or(f64::NAN);
    writeln!(out, "training bars: {} ({} .. {})", t.num_bars, t.start, t.end)?;
    writeln!(out, "windows: {}", t.num_windows)?;
    writeln!(
        out,
        "baum-welch: {} iterations, {}",
        t.iterations,
        if t.converged { "converged" } else { "not converged" }
    )?;
    writeln!(out, "final log-likelihood: {final_ll:.10e}")?;
    writeln!(out, "model written to {}", args.out.display())?;
    Ok(())
}

pub fn backtest(args: &BacktestArgs, out: &mut dyn Write, err: &mut dyn Write) -> CmdResult {
    if args.test_end < args.test_start {
        return Err(Failure::usage(format!(
            "--test-end {} is before --test-start {}",
            args.test_end, args.test_start
        )));
    }
    let model = load_model(&args.model)?;
    let bars = load_bars(&args.data.csv, args.data.columns.as_deref())?;
    let outcome = forecaster::backtest(&model, &bars, args.test_start, args.test_end).map_err(|e| match e {
        Error::InvalidArgument(m) => Failure::data(m),
        Error::Data { .. } => Failure::data(e.to_string()),
        other => Failure::training(other.to_string()),
    })?;
    if outcome.clamped_bars > 0 {
        writeln!(
            err,
            "warning: {} bar(s) fell outside the training grid and were clamped",
            outcome.clamped_bars
        )?;
    }
    for d in &outcome.no_prediction {
        writeln!(err, "warning: no prediction for {d}")?;
    }
    let report = metrics::evaluate(&outcome.records, outcome.no_prediction.len())
        .map_err(|e| Failure::data(e.to_string()))?;

    fs::create_dir_all(&args.report_dir)?;
    let csv = predictions::to_csv(&outcome.records).map_err(Failure::data)?;
    fs::write(args.report_dir.join("predictions.csv"), csv)?;
    let report_text = render_report(&report, &model, args.test_start, args.test_end, &outcome.no_prediction, outcome.clamped_bars);
    fs::write(args.report_dir.join("report.txt"), report_text)?;
    let in_range = market::slice_dates(&bars, Some(args.test_start), Some(args.test_end));
    fs::write(args.report_dir.join("chart.svg"), chart::render(in_range, &outcome.records))?;

    out.write_all(summary_lines(&report).as_bytes())?;
    writeln!(out, "wrote predictions.csv, report.txt and chart.svg to {}", args.report_dir.display())?;
    Ok(())
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x}%"))
}

/// `n_p`, MAPE, DPA and the no-prediction count. Percentages are printed
/// in full precision.
pub fn summary_lines(report: &EvaluationReport) -> String {
    format!(
        "n_p: {}\nMAPE: {}\nDPA: {}\nno-prediction days: {}\n",
        report.n_p,
        pct(report.mape),
        pct(report.dpa),
        report.no_prediction_count
    )
}

fn per_day_table(report: &EvaluationReport) -> String {
    let mut s = String::from("date        abs_pct_error  direction_hit\n");
    for d in &report.per_day {
        let _ = writeln!(s, "{}  {:>13.6}  {}", d.date, d.abs_pct_error, u8::from(d.direction_hit));
    }
    s
}

pub fn render_report(
    report: &EvaluationReport,
    model: &TrainedModel,
    start: NaiveDate,
    end: NaiveDate,
    no_prediction: &[NaiveDate],
    clamped_bars: usize,
) -> String {
    let c = &model.config;
    let t = &model.training;
    let mut s = String::new();
    let _ = writeln!(s, "test range: {start} .. {end}");
    s.push_str(&summary_lines(report));
    let _ = writeln!(s, "clamped bars: {clamped_bars}");
    for d in no_prediction {
        let _ = writeln!(s, "no prediction: {d}");
    }
    s.push('\n');
    let _ = writeln!(s, "states: {}", c.num_states);
    let _ = writeln!(s, "mixtures: {}", c.num_mixtures);
    let _ = writeln!(s, "latency: {} (min {})", c.latency, c.min_latency);
    let _ = writeln!(s, "bins: {}", c.bins);
    let _ = writeln!(s, "seed: {}", c.seed);
    let _ = writeln!(s, "emission seeding: {}", c.emission_seeding.as_str());
    let _ = writeln!(
        s,
        "trained on: {} .. {} ({} bars, {} windows, {} iterations)",
        t.start, t.end, t.num_bars, t.num_windows, t.iterations
    );
    s.push('\n');
    s.push_str(&per_day_table(report));
    s
}

pub fn predict(args: &PredictArgs, out: &mut dyn Write) -> CmdResult {
    if !(args.open.is_finite() && args.open > 0.0) {
        return Err(Failure::usage(format!("--open must be a positive price, got {}", args.open)));
    }
    let model = load_model(&args.model)?;
    let bars = load_bars(&args.data.csv, args.data.columns.as_deref())?;
    let history = forecaster::history_before(&model, &bars, args.date).map_err(|e| Failure::data(e.to_string()))?;
    let r = forecaster::predict_day(&model, args.date, &history, args.open).map_err(|e| match e {
        Error::NoPrediction { .. } => Failure::training(e.to_string()),
        other => Failure::data(other.to_string()),
    })?;
    match args.format {
        OutputFormat::Text => writeln!(
            out,
            "{} open={} predicted_close={} frac_change={} latency_used={} log_likelihood={}",
            r.date, r.open, r.predicted_close, r.frac_change, r.latency_used, r.log_likelihood
        )?,
        OutputFormat::Csv => writeln!(
            out,
            "{},{},{},{},{},{}",
            r.date, r.open, r.predicted_close, r.frac_change, r.latency_used, r.log_likelihood
        )?,
    }
    Ok(())
}

pub fn report(args: &ReportArgs, out: &mut dyn Write) -> CmdResult {
    let text = fs::read_to_string(&args.predictions)
        .map_err(|e| Failure::data(format!("{}: {e}", args.predictions.display())))?;
    let rows = predictions::parse(&text).map_err(|e| Failure::data(format!("{}: {e}", args.predictions.display())))?;
    let records: Vec<_> = rows.iter().map(predictions::Row::to_record).collect();
    let report = metrics::evaluate(&records, 0).map_err(|e| Failure::data(e.to_string()))?;
    // The file holds scored days only, so there is no no-prediction count to show.
    writeln!(out, "n_p: {}\nMAPE: {}\nDPA: {}\n", report.n_p, pct(report.mape), pct(report.dpa))?;
    out.write_all(per_day_table(&report).as_bytes())?;
    Ok(())
}

pub fn synth(args: &SynthArgs, out: &mut dyn Write) -> CmdResult {
    let (bars, _) = RegimeGenerator::two_regime(args.start)
        .generate(args.bars, args.seed)
        .map_err(|e| Failure::usage(e.to_string()))?;
    let csv = synthetic::to_csv(&bars);
    match &args.out {
        Some(p) => fs::write(p, csv).map_err(|e| Failure::data(format!("{}: {e}", p.display())))?,
        None => out.write_all(csv.as_bytes())?,
    }
    Ok(())
}
