//! Static SVG chart of actual closes with predicted closes overlaid.
//!
//! Actual closes form a line; each prediction is a dot, green when the
//! predicted direction from the open matched the actual one, red otherwise.

use std::fmt::Write as _;

use stockhmm::metrics;
use stockhmm::{OhlcBar, PredictionRecord};

const WIDTH: f64 = 960.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;

pub const HIT_COLOR: &str = "#2e9e44";
pub const MISS_COLOR: &str = "#d2352b";
const LINE_COLOR: &str = "#1f3b73";

/// Renders `bars` (the test period, date-ordered) and the predictions made
/// on those dates.
pub fn render(bars: &[OhlcBar], records: &[PredictionRecord]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    s.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    let _ = writeln!(
        s,
        r#"<text x="{LEFT}" y="24" font-size="15">Actual vs predicted close</text>"#
    );
    if bars.is_empty() {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">no trading days in range</text>"#,
            WIDTH / 2.0,
            HEIGHT / 2.0
        );
        s.push_str("</svg>\n");
        return s;
    }

    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in bars.iter().map(|b| b.close).chain(records.iter().map(|r| r.predicted_close)) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let pad = ((hi - lo) * 0.05).max(hi.abs() * 1e-3).max(1e-9);
    let (lo, hi) = (lo - pad, hi + pad);
    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let step = if bars.len() > 1 {
        plot_w / (bars.len() - 1) as f64
    } else {
        0.0
    };
    let x = |i: usize| LEFT + if bars.len() > 1 { i as f64 * step } else { plot_w / 2.0 };
    let y = |v: f64| TOP + (hi - v) / (hi - lo) * plot_h;

    // Axes and price gridlines.
    let _ = writeln!(
        s,
        r##"<path d="M{LEFT} {TOP} V{b} H{r}" fill="none" stroke="#444"/>"##,
        b = TOP + plot_h,
        r = LEFT + plot_w
    );
    for k in 0..=4 {
        let v = lo + (hi - lo) * k as f64 / 4.0;
        let yy = y(v);
        let _ = writeln!(
            s,
            r##"<line x1="{LEFT}" y1="{yy:.2}" x2="{:.2}" y2="{yy:.2}" stroke="#ddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">{v:.2}</text>"##,
            LEFT + plot_w,
            LEFT - 6.0,
            yy + 4.0
        );
    }
    let label_every = (bars.len() / 6).max(1);
    for (i, b) in bars.iter().enumerate().step_by(label_every) {
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            x(i),
            TOP + plot_h + 18.0,
            b.date
        );
    }

    let points: Vec<String> = bars
        .iter()
        .enumerate()
        .map(|(i, b)| format!("{:.2},{:.2}", x(i), y(b.close)))
        .collect();
    let _ = writeln!(
        s,
        r#"<polyline fill="none" stroke="{LINE_COLOR}" stroke-width="1.5" points="{}"/>"#,
        points.join(" ")
    );

    for r in records {
        let Ok(i) = bars.binary_search_by_key(&r.date, |b| b.date) else {
            continue;
        };
        let color = match metrics::direction_hit(r) {
            Ok(true) => HIT_COLOR,
            _ => MISS_COLOR,
        };
        let _ = writeln!(
            s,
            r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"><title>{} predicted {}</title></circle>"#,
            x(i),
            y(r.predicted_close),
            r.date,
            r.predicted_close
        );
    }

    let ly = HEIGHT - 12.0;
    let _ = writeln!(
        s,
        r#"<line x1="{LEFT}" y1="{a:.2}" x2="{b:.2}" y2="{a:.2}" stroke="{LINE_COLOR}" stroke-width="1.5"/><text x="{c:.2}" y="{ly:.2}">actual close</text>"#,
        a = ly - 4.0,
        b = LEFT + 24.0,
        c = LEFT + 30.0
    );
    let _ = writeln!(
        s,
        r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{HIT_COLOR}"/><text x="{:.2}" y="{ly:.2}">direction hit</text>"#,
        LEFT + 150.0,
        ly - 4.0,
        LEFT + 158.0
    );
    let _ = writeln!(
        s,
        r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{MISS_COLOR}"/><text x="{:.2}" y="{ly:.2}">direction miss</text>"#,
        LEFT + 270.0,
        ly - 4.0,
        LEFT + 278.0
    );
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;

    fn bar(day: u32, open: f64, close: f64) -> OhlcBar {
        let d = NaiveDate::from_ymd_opt(2021, 6, day).unwrap();
        OhlcBar::new(d, open, open.max(close) + 1.0, open.min(close) - 1.0, close).unwrap()
    }

    fn rec(b: &OhlcBar, pred: f64) -> PredictionRecord {
        PredictionRecord {
            date: b.date,
            open: b.open,
            predicted_close: pred,
            actual_close: Some(b.close),
            chosen_symbol: 1,
            frac_change: pred / b.open - 1.0,
            latency_used: 10,
            log_likelihood: -1.0,
        }
    }

    #[test]
    fn markers_colored_by_direction() {
        let bars = [bar(1, 10.0, 11.0), bar(2, 11.0, 10.5), bar(3, 10.5, 10.8)];
        let records = [rec(&bars[0], 10.4), rec(&bars[1], 11.2), rec(&bars[2], 10.6)];
        let svg = render(&bars, &records);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<polyline").count(), 1);
        let dots: Vec<&str> = svg.lines().filter(|l| l.starts_with("<circle") && l.contains("<title>")).collect();
        assert_eq!(dots.len(), 3);
        assert!(dots[0].contains(HIT_COLOR));
        assert!(dots[1].contains(MISS_COLOR));
        assert!(dots[2].contains(HIT_COLOR));
    }

    #[test]
    fn empty_range_still_valid() {
        let svg = render(&[], &[]);
        assert!(svg.contains("no trading days"));
        assert!(svg.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn single_bar_and_flat_prices() {
        let bars = [bar(1, 10.0, 10.0)];
        let svg = render(&bars, &[rec(&bars[0], 10.0)]);
        assert!(!svg.contains("NaN") && !svg.contains("inf"));
    }
}
