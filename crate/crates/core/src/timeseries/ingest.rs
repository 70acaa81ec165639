//! CSV ingestion and emission for monitoring series.
//!
//! The canonical layout is fixed: one header row, ISO-8601 UTC timestamps at
//! hourly resolution, empty cells for missing values, decimal point, no
//! quoting. LF and CRLF are both accepted.

use std::io::{Read, Write};

use chrono::{DateTime, Utc};

use super::{
    DataError, MonitoringSample, Series, Value, COVARIATE_CHANNELS, COVARIATE_NAMES,
    TARGET_CHANNELS, TARGET_NAMES,
};

/// The canonical column list, in order.
pub const CSV_HEADER: [&str; 12] = [
    "timestamp",
    "f1",
    "f2",
    "f3",
    "f4",
    "f5",
    "temp_c",
    "rain_mm",
    "humidity_pct",
    "wind_avg_ms",
    "wind_peak_ms",
    "wind_dir_deg",
];

/// Parses a monitoring CSV stream into a [`Series`].
///
/// Rows may arrive out of order; the result is sorted by timestamp.
/// Duplicate timestamps are rejected.
pub fn parse_csv(reader: impl Read) -> Result<Series, DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(reader);

    let headers = rdr
        .headers()
        .map_err(|e| DataError::MalformedRow {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let found: Vec<&str> = headers.iter().collect();
    if found != CSV_HEADER {
        for name in &found {
            if !CSV_HEADER.contains(name) {
                return Err(DataError::UnknownColumn((*name).to_string()));
            }
        }
        return Err(DataError::HeaderMismatch {
            expected: CSV_HEADER.join(","),
            found: found.join(","),
        });
    }

    let mut samples = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| DataError::MalformedRow {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());

        let timestamp = parse_timestamp(record.get(0).unwrap_or(""), line)?;

        let mut targets = [Value::Missing; TARGET_CHANNELS];
        for (c, slot) in targets.iter_mut().enumerate() {
            *slot = parse_cell(record.get(1 + c).unwrap_or(""), TARGET_NAMES[c], line)?;
        }
        let mut covariates = [Value::Missing; COVARIATE_CHANNELS];
        for (c, slot) in covariates.iter_mut().enumerate() {
            *slot = parse_cell(
                record.get(1 + TARGET_CHANNELS + c).unwrap_or(""),
                COVARIATE_NAMES[c],
                line,
            )?;
        }

        let sample = MonitoringSample::new(timestamp, targets, covariates)
            .map_err(|message| DataError::MalformedRow { line, message })?;
        samples.push(sample);
    }

    samples.sort_by_key(|s| s.timestamp);
    Series::new(samples, "csv")
}

fn parse_timestamp(cell: &str, line: u64) -> Result<DateTime<Utc>, DataError> {
    let parsed = DateTime::parse_from_rfc3339(cell).map_err(|e| DataError::MalformedRow {
        line,
        message: format!("bad timestamp `{cell}`: {e}"),
    })?;
    if parsed.offset().local_minus_utc() != 0 {
        return Err(DataError::MalformedRow {
            line,
            message: format!("timestamp `{cell}` must be UTC"),
        });
    }
    let utc = parsed.with_timezone(&Utc);
    if chrono::Timelike::minute(&utc) != 0
        || chrono::Timelike::second(&utc) != 0
        || chrono::Timelike::nanosecond(&utc) != 0
    {
        return Err(DataError::NonHourlyTimestamp {
            line,
            timestamp: cell.to_string(),
        });
    }
    Ok(utc)
}

fn parse_cell(cell: &str, column: &str, line: u64) -> Result<Value, DataError> {
    if cell.is_empty() {
        return Ok(Value::Missing);
    }
    let v: f64 = cell.parse().map_err(|_| DataError::MalformedRow {
        line,
        message: format!("column {column}: cannot parse `{cell}` as a number"),
    })?;
    Ok(Value::Observed(v))
}

/// Writes a series in the canonical CSV layout.
///
/// Numbers are printed with the shortest representation that parses back to
/// the same value, so a parse/write round trip is exact. Filled values are
/// written like observed ones; the synthetic flag is not part of the format.
pub fn write_csv(series: &Series, mut writer: impl Write) -> Result<(), DataError> {
    writeln!(writer, "{}", CSV_HEADER.join(","))?;
    let mut row = String::new();
    for sample in series.samples() {
        row.clear();
        row.push_str(&sample.timestamp.format("%Y-%m-%dT%H:%M:%SZ").to_string());
        for v in sample.targets.iter().chain(sample.covariates.iter()) {
            row.push(',');
            if let Some(x) = v.get() {
                row.push_str(&format_number(x));
            }
        }
        writeln!(writer, "{row}")?;
    }
    Ok(())
}

fn format_number(x: f64) -> String {
    // f64 Display is shortest-round-trip and never uses exponent notation.
    format!("{x}")
}
