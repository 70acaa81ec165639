//! Report and plot-data emission for detection runs.

use std::collections::HashMap;
use std::io::Write;

use chrono::{DateTime, Utc};

use crate::timeseries::Series;

use super::AnomalyRecord;

/// Header of the anomaly report CSV.
pub const REPORT_HEADER: &str = "timestamp,anomalous,score,\
ch1_viol,ch1_dev,ch2_viol,ch2_dev,ch3_viol,ch3_dev,ch4_viol,ch4_dev,ch5_viol,ch5_dev,\
lower1,upper1,lower2,upper2,lower3,upper3,lower4,upper4,lower5,upper5,scored";

fn fmt(x: f64) -> String {
    format!("{x}")
}

/// Writes one row per record. Unscored rows keep their timestamp and the
/// `scored=false` marker; every scored-only cell stays empty.
pub fn write_report_csv(
    records: &[AnomalyRecord],
    mut writer: impl Write,
) -> std::io::Result<()> {
    writeln!(writer, "{REPORT_HEADER}")?;
    for r in records {
        let ts = r.timestamp.format("%Y-%m-%dT%H:%M:%SZ");
        match &r.point {
            Some(p) => {
                let mut row = format!("{ts},{},{}", p.anomalous, fmt(p.score));
                for v in &p.verdicts {
                    row.push_str(&format!(",{},{}", v.violated, fmt(v.deviation)));
                }
                for v in &p.verdicts {
                    row.push_str(&format!(",{},{}", fmt(v.lower), fmt(v.upper)));
                }
                row.push_str(",true");
                writeln!(writer, "{row}")?;
            }
            None => {
                // 2 empty (anomalous, score) + 10 verdicts + 10 bounds
                writeln!(writer, "{ts},false,{}false", ",".repeat(21))?;
            }
        }
    }
    Ok(())
}

/// Reads a report written by [`write_report_csv`] back into evaluation
/// summaries (timestamp, scored, anomalous, score).
pub fn parse_report_csv(
    reader: impl std::io::Read,
) -> Result<Vec<super::RecordSummary>, super::DetectError> {
    use super::{DetectError, RecordSummary};
    use std::io::BufRead;
    let reader = std::io::BufReader::new(reader);
    let mut lines = reader.lines();
    let header = lines
        .next()
        .ok_or_else(|| DetectError::BadFile("empty report".into()))?
        .map_err(|e| DetectError::BadFile(e.to_string()))?;
    if header.trim_end() != REPORT_HEADER {
        return Err(DetectError::BadFile("unexpected report header".into()));
    }
    let n_cols = REPORT_HEADER.split(',').count();
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| DetectError::BadFile(e.to_string()))?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != n_cols {
            return Err(DetectError::BadFile(format!(
                "line {}: expected {n_cols} columns",
                i + 2
            )));
        }
        let bad = |what: &str| DetectError::BadFile(format!("line {}: bad {what}", i + 2));
        let timestamp = chrono::DateTime::parse_from_rfc3339(cells[0])
            .map_err(|_| bad("timestamp"))?
            .with_timezone(&Utc);
        let scored: bool = cells[n_cols - 1].parse().map_err(|_| bad("scored flag"))?;
        let anomalous: bool = cells[1].parse().map_err(|_| bad("anomalous flag"))?;
        let score: f64 = if scored {
            cells[2].parse().map_err(|_| bad("score"))?
        } else {
            0.0
        };
        out.push(RecordSummary {
            timestamp,
            scored,
            anomalous,
            score,
        });
    }
    Ok(out)
}

/// Reads a per-channel plot CSV back into rows (scores and flags are not
/// part of that file; the caller joins them from the report if needed).
pub fn parse_plot_csv(reader: impl std::io::Read) -> Result<Vec<PlotRow>, super::DetectError> {
    use super::DetectError;
    use std::io::BufRead;
    let reader = std::io::BufReader::new(reader);
    let mut lines = reader.lines();
    let header = lines
        .next()
        .ok_or_else(|| DetectError::BadFile("empty plot file".into()))?
        .map_err(|e| DetectError::BadFile(e.to_string()))?;
    if header.trim_end() != "timestamp,observed,mean,p01,p99" {
        return Err(DetectError::BadFile("unexpected plot header".into()));
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| DetectError::BadFile(e.to_string()))?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != 5 {
            return Err(DetectError::BadFile(format!("line {}: bad row", i + 2)));
        }
        let bad = |what: &str| DetectError::BadFile(format!("line {}: bad {what}", i + 2));
        let timestamp = chrono::DateTime::parse_from_rfc3339(cells[0])
            .map_err(|_| bad("timestamp"))?
            .with_timezone(&Utc);
        let opt = |cell: &str, what: &str| -> Result<Option<f64>, DetectError> {
            if cell.is_empty() {
                Ok(None)
            } else {
                cell.parse().map(Some).map_err(|_| bad(what))
            }
        };
        out.push(PlotRow {
            timestamp,
            observed: opt(cells[1], "observed")?,
            mean: opt(cells[2], "mean")?,
            p01: opt(cells[3], "p01")?,
            p99: opt(cells[4], "p99")?,
            score: 0.0,
            anomalous: false,
        });
    }
    Ok(out)
}

/// One line of per-channel plot data.
#[derive(Debug, Clone, Copy)]
pub struct PlotRow {
    pub timestamp: DateTime<Utc>,
    pub observed: Option<f64>,
    pub mean: Option<f64>,
    pub p01: Option<f64>,
    pub p99: Option<f64>,
    pub score: f64,
    pub anomalous: bool,
}

/// Assembles plot rows for `channel` (0-based) by joining records with the
/// observations in `series`; enough to redraw the prediction/observation
/// figures.
pub fn plot_rows(series: &Series, records: &[AnomalyRecord], channel: usize) -> Vec<PlotRow> {
    let observed_at: HashMap<DateTime<Utc>, f64> = series
        .samples()
        .iter()
        .filter_map(|s| s.targets[channel].get().map(|v| (s.timestamp, v)))
        .collect();
    records
        .iter()
        .map(|r| {
            let (mean, p01, p99) = match &r.point {
                Some(p) => (Some(p.means[channel]), Some(p.p01[channel]), Some(p.p99[channel])),
                None => (None, None, None),
            };
            PlotRow {
                timestamp: r.timestamp,
                observed: observed_at.get(&r.timestamp).copied(),
                mean,
                p01,
                p99,
                score: r.score(),
                anomalous: r.anomalous(),
            }
        })
        .collect()
}

/// Writes `timestamp,observed,mean,p01,p99` rows for one channel.
pub fn plot_channel_csv(rows: &[PlotRow], mut writer: impl Write) -> std::io::Result<()> {
    writeln!(writer, "timestamp,observed,mean,p01,p99")?;
    let cell = |v: Option<f64>| v.map(fmt).unwrap_or_default();
    for r in rows {
        writeln!(
            writer,
            "{},{},{},{},{}",
            r.timestamp.format("%Y-%m-%dT%H:%M:%SZ"),
            cell(r.observed),
            cell(r.mean),
            cell(r.p01),
            cell(r.p99),
        )?;
    }
    Ok(())
}

const SVG_WIDTH: f64 = 1200.0;
const SVG_HEIGHT: f64 = 320.0;
const MARGIN_LEFT: f64 = 60.0;
const MARGIN_RIGHT: f64 = 20.0;
const MARGIN_TOP: f64 = 24.0;
const MARGIN_BOTTOM: f64 = 30.0;

/// Renders one channel as a static SVG: the predicted band, the predicted
/// mean (dashed), the observations, and a vertical bar per anomalous
/// timestep whose yellow-to-red intensity is the score normalized min-max
/// over the reporting period (presentation only, not part of the scoring).
pub fn render_svg(rows: &[PlotRow], title: &str) -> String {
    let xs = |i: usize| -> f64 {
        let n = rows.len().max(2) as f64;
        MARGIN_LEFT + (i as f64 / (n - 1.0)) * (SVG_WIDTH - MARGIN_LEFT - MARGIN_RIGHT)
    };

    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for r in rows {
        for v in [r.observed, r.mean, r.p01, r.p99].into_iter().flatten() {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    if !lo.is_finite() || !hi.is_finite() {
        lo = 0.0;
        hi = 1.0;
    }
    if hi - lo < 1e-9 {
        hi = lo + 1e-9;
    }
    let pad = 0.05 * (hi - lo);
    let (lo, hi) = (lo - pad, hi + pad);
    let ys = |v: f64| -> f64 {
        MARGIN_TOP + (1.0 - (v - lo) / (hi - lo)) * (SVG_HEIGHT - MARGIN_TOP - MARGIN_BOTTOM)
    };

    let max_score = rows
        .iter()
        .filter(|r| r.anomalous)
        .map(|r| r.score)
        .fold(0.0f64, f64::max);
    let min_score = rows
        .iter()
        .filter(|r| r.anomalous)
        .map(|r| r.score)
        .fold(f64::INFINITY, f64::min);

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SVG_WIDTH}\" height=\"{SVG_HEIGHT}\" viewBox=\"0 0 {SVG_WIDTH} {SVG_HEIGHT}\">\n"
    ));
    svg.push_str("<desc>anomaly bar intensity: score normalized min-max over this period; presentation only</desc>\n");
    svg.push_str(&format!(
        "<text x=\"{MARGIN_LEFT}\" y=\"16\" font-family=\"sans-serif\" font-size=\"13\">{title}</text>\n"
    ));

    // anomaly bars underneath everything else
    for (i, r) in rows.iter().enumerate() {
        if !r.anomalous {
            continue;
        }
        let t = if max_score > min_score {
            (r.score - min_score) / (max_score - min_score)
        } else {
            1.0
        };
        // yellow (255,213,0) -> red (212,0,0)
        let red = (255.0 + t * (212.0 - 255.0)) as u8;
        let green = (213.0 * (1.0 - t)) as u8;
        svg.push_str(&format!(
            "<line x1=\"{x:.2}\" y1=\"{y1:.2}\" x2=\"{x:.2}\" y2=\"{y2:.2}\" stroke=\"rgb({red},{green},0)\" stroke-width=\"2\" opacity=\"0.8\"/>\n",
            x = xs(i),
            y1 = MARGIN_TOP,
            y2 = SVG_HEIGHT - MARGIN_BOTTOM,
        ));
    }

    // predicted band as one polygon per contiguous scored stretch
    let mut run: Vec<(usize, f64, f64)> = Vec::new();
    let flush_band = |svg: &mut String, run: &mut Vec<(usize, f64, f64)>| {
        if run.len() >= 2 {
            let mut points = String::new();
            for (i, _, p99) in run.iter() {
                points.push_str(&format!("{:.2},{:.2} ", xs(*i), ys(*p99)));
            }
            for (i, p01, _) in run.iter().rev() {
                points.push_str(&format!("{:.2},{:.2} ", xs(*i), ys(*p01)));
            }
            svg.push_str(&format!(
                "<polygon points=\"{}\" fill=\"#9ecae1\" opacity=\"0.45\" stroke=\"none\"/>\n",
                points.trim_end()
            ));
        }
        run.clear();
    };
    for (i, r) in rows.iter().enumerate() {
        match (r.p01, r.p99) {
            (Some(a), Some(b)) => run.push((i, a, b)),
            _ => flush_band(&mut svg, &mut run),
        }
    }
    flush_band(&mut svg, &mut run);

    let polyline = |svg: &mut String, pick: &dyn Fn(&PlotRow) -> Option<f64>, style: &str| {
        let mut points = String::new();
        let flush = |svg: &mut String, points: &mut String| {
            if points.split_whitespace().count() >= 2 {
                svg.push_str(&format!("<polyline points=\"{}\" {style}/>\n", points.trim_end()));
            }
            points.clear();
        };
        for (i, r) in rows.iter().enumerate() {
            match pick(r) {
                Some(v) => points.push_str(&format!("{:.2},{:.2} ", xs(i), ys(v))),
                None => flush(svg, &mut points),
            }
        }
        flush(svg, &mut points);
    };
    polyline(
        &mut svg,
        &|r| r.mean,
        "fill=\"none\" stroke=\"#2171b5\" stroke-width=\"1\" stroke-dasharray=\"4 3\"",
    );
    polyline(
        &mut svg,
        &|r| r.observed,
        "fill=\"none\" stroke=\"#252525\" stroke-width=\"1\"",
    );

    // y-axis labels
    for k in 0..=4 {
        let v = lo + (hi - lo) * (k as f64) / 4.0;
        svg.push_str(&format!(
            "<text x=\"4\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"10\">{v:.4}</text>\n",
            ys(v) + 3.0
        ));
    }
    if let (Some(first), Some(last)) = (rows.first(), rows.last()) {
        svg.push_str(&format!(
            "<text x=\"{MARGIN_LEFT}\" y=\"{y}\" font-family=\"sans-serif\" font-size=\"10\">{}</text>\n",
            first.timestamp.format("%Y-%m-%d %H:%M"),
            y = SVG_HEIGHT - 8.0,
        ));
        svg.push_str(&format!(
            "<text x=\"{x}\" y=\"{y}\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"end\">{}</text>\n",
            last.timestamp.format("%Y-%m-%d %H:%M"),
            x = SVG_WIDTH - MARGIN_RIGHT,
            y = SVG_HEIGHT - 8.0,
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::anomaly::{run_sliding, DetectorConfig};
    use crate::forecaster::testutil::{small_config, test_series, test_stats};
    use crate::forecaster::ModelState;

    fn fixture() -> (Series, Vec<AnomalyRecord>) {
        let config = small_config();
        let model = ModelState::init(&config, &test_stats(), 3).unwrap();
        let series = test_series(30, 12);
        let det = DetectorConfig {
            window: config.window,
            ..DetectorConfig::default()
        };
        let records = run_sliding(&model, &series, &det).unwrap();
        (series, records)
    }

    #[test]
    fn report_has_one_row_per_record_and_fixed_column_count() {
        let (_, records) = fixture();
        let mut buf = Vec::new();
        write_report_csv(&records, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), records.len() + 1);
        let expect_cols = REPORT_HEADER.split(',').count();
        for line in &lines {
            assert_eq!(line.split(',').count(), expect_cols, "bad row: {line}");
        }
        // unscored rows end with false, scored with true
        assert!(lines[1].ends_with(",false"));
        assert!(lines[lines.len() - 1].ends_with(",true"));
    }

    #[test]
    fn plot_rows_join_observations_and_predictions() {
        let (series, records) = fixture();
        let rows = plot_rows(&series, &records, 1);
        assert_eq!(rows.len(), records.len());
        // observations exist everywhere in this fixture
        assert!(rows.iter().all(|r| r.observed.is_some()));
        // predictions only after warm-up
        assert!(rows[0].mean.is_none());
        assert!(rows.last().unwrap().mean.is_some());
        let mut buf = Vec::new();
        plot_channel_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("timestamp,observed,mean,p01,p99\n"));
        assert_eq!(text.lines().count(), rows.len() + 1);
    }

    #[test]
    fn report_parses_back_to_matching_summaries() {
        let (_, records) = fixture();
        let mut buf = Vec::new();
        write_report_csv(&records, &mut buf).unwrap();
        let summaries = parse_report_csv(buf.as_slice()).unwrap();
        assert_eq!(summaries.len(), records.len());
        for (s, r) in summaries.iter().zip(&records) {
            assert_eq!(*s, r.summary());
        }
    }

    #[test]
    fn plot_csv_parses_back() {
        let (series, records) = fixture();
        let rows = plot_rows(&series, &records, 2);
        let mut buf = Vec::new();
        plot_channel_csv(&rows, &mut buf).unwrap();
        let back = parse_plot_csv(buf.as_slice()).unwrap();
        assert_eq!(back.len(), rows.len());
        for (a, b) in back.iter().zip(&rows) {
            assert_eq!(a.timestamp, b.timestamp);
            assert_eq!(a.observed, b.observed);
            assert_eq!(a.mean, b.mean);
            assert_eq!(a.p01, b.p01);
            assert_eq!(a.p99, b.p99);
        }
    }

    #[test]
    fn svg_is_well_formed_enough() {
        let (series, records) = fixture();
        let rows = plot_rows(&series, &records, 0);
        let svg = render_svg(&rows, "f1");
        assert!(svg.starts_with("<svg"));
        assert!(svg.ends_with("</svg>\n"));
        assert!(svg.contains("polyline"));
        assert!(svg.contains("polygon"));
    }
}
