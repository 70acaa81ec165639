//! Detection metrics against ground-truth labels.

use chrono::{DateTime, Duration, Utc};
use serde::Serialize;
use thiserror::Error;

use crate::anomaly::{AnomalyRecord, RecordSummary};

use super::LabelPoint;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("timeline mismatch: {0}")]
    TimelineMismatch(String),
    #[error("no records to evaluate")]
    Empty,
}

/// One labelled event and whether the detector caught it.
#[derive(Debug, Clone, Serialize)]
pub struct EventOutcome {
    pub id: u32,
    pub start: DateTime<Utc>,
    /// Exclusive end of the event span.
    pub end: DateTime<Utc>,
    pub hit: bool,
    /// Highest flagged score within the tolerated span, if any.
    pub peak_score: Option<f64>,
}

/// Precision/recall summary at one score threshold.
#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub threshold: f64,
    pub tolerance_hours: u32,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Flagged records on clean stretches over clean scored records.
    pub false_positive_rate: f64,
    pub events: Vec<EventOutcome>,
    pub flagged_records: usize,
    pub false_positives: usize,
    pub clean_scored_records: usize,
    /// True when nothing was flagged; precision is 1 by convention then.
    pub zero_flags: bool,
    /// Events outside the records' coverage, excluded from recall.
    pub excluded_events: usize,
}

fn event_spans(labels: &[LabelPoint]) -> Vec<(u32, DateTime<Utc>, DateTime<Utc>)> {
    let mut spans: Vec<(u32, DateTime<Utc>, DateTime<Utc>)> = Vec::new();
    for l in labels {
        if let Some(id) = l.event {
            match spans.last_mut() {
                Some((last_id, _, end))
                    if *last_id == id && *end == l.timestamp =>
                {
                    *end = l.timestamp + Duration::hours(1);
                }
                _ => spans.push((id, l.timestamp, l.timestamp + Duration::hours(1))),
            }
        }
    }
    spans
}

/// Scores a detection run against ground truth.
///
/// An event counts as a hit when any flagged record (anomalous with score at
/// or above `threshold`) falls within `tolerance_hours` of its span. Flagged
/// records outside every tolerated span are false positives; the
/// false-positive rate is taken over scored records on clean stretches.
/// Events wholly outside the records' time coverage are excluded from recall
/// and reported.
pub fn evaluate(
    records: &[AnomalyRecord],
    labels: &[LabelPoint],
    tolerance_hours: u32,
    threshold: f64,
) -> Result<EvalReport, EvalError> {
    let summaries: Vec<RecordSummary> = records.iter().map(|r| r.summary()).collect();
    evaluate_summaries(&summaries, labels, tolerance_hours, threshold)
}

/// [`evaluate`] on report-level summaries, e.g. parsed back from a report
/// CSV.
pub fn evaluate_summaries(
    records: &[RecordSummary],
    labels: &[LabelPoint],
    tolerance_hours: u32,
    threshold: f64,
) -> Result<EvalReport, EvalError> {
    if records.is_empty() {
        return Err(EvalError::Empty);
    }
    // records must live on the labelled timeline
    let mut label_iter = labels.iter();
    for r in records {
        if !label_iter.by_ref().any(|l| l.timestamp == r.timestamp) {
            return Err(EvalError::TimelineMismatch(format!(
                "record at {} has no label",
                r.timestamp
            )));
        }
    }

    let tol = Duration::hours(tolerance_hours as i64);
    let spans = event_spans(labels);
    let coverage_start = records.first().unwrap().timestamp - tol;
    let coverage_end = records.last().unwrap().timestamp + tol;

    let flagged: Vec<&RecordSummary> = records
        .iter()
        .filter(|r| r.anomalous && r.score >= threshold)
        .collect();

    let in_tolerated_zone = |t: DateTime<Utc>| {
        spans
            .iter()
            .any(|(_, start, end)| t >= *start - tol && t < *end + tol)
    };

    let mut events = Vec::new();
    let mut excluded_events = 0usize;
    let mut hits = 0usize;
    for (id, start, end) in &spans {
        if *end <= coverage_start || *start >= coverage_end {
            excluded_events += 1;
            continue;
        }
        let window = (*start - tol, *end + tol);
        let peak_score = flagged
            .iter()
            .filter(|r| r.timestamp >= window.0 && r.timestamp < window.1)
            .map(|r| r.score)
            .fold(None, |acc: Option<f64>, s| {
                Some(acc.map_or(s, |a| a.max(s)))
            });
        let hit = peak_score.is_some();
        if hit {
            hits += 1;
        }
        events.push(EventOutcome {
            id: *id,
            start: *start,
            end: *end,
            hit,
            peak_score,
        });
    }

    let true_positive_records = flagged
        .iter()
        .filter(|r| in_tolerated_zone(r.timestamp))
        .count();
    let false_positives = flagged.len() - true_positive_records;
    let clean_scored_records = records
        .iter()
        .filter(|r| r.scored && !in_tolerated_zone(r.timestamp))
        .count();

    let zero_flags = flagged.is_empty();
    let precision = if zero_flags {
        1.0
    } else {
        true_positive_records as f64 / flagged.len() as f64
    };
    let recall = if events.is_empty() {
        1.0
    } else {
        hits as f64 / events.len() as f64
    };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    let false_positive_rate = if clean_scored_records > 0 {
        false_positives as f64 / clean_scored_records as f64
    } else {
        0.0
    };

    Ok(EvalReport {
        threshold,
        tolerance_hours,
        precision,
        recall,
        f1,
        false_positive_rate,
        events,
        flagged_records: flagged.len(),
        false_positives,
        clean_scored_records,
        zero_flags,
        excluded_events,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::anomaly::{ChannelVerdict, ScoredPoint};
    use chrono::TimeZone;

    fn ts(h: i64) -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2021, 1, 1, 0, 0, 0).unwrap() + Duration::hours(h)
    }

    fn scored_record(h: i64, score: f64) -> AnomalyRecord {
        let verdict = ChannelVerdict {
            channel: 1,
            observed: 1.0,
            lower: 0.9,
            upper: 1.1,
            violated: score > 0.0,
            deviation: score,
        };
        AnomalyRecord {
            timestamp: ts(h),
            point: Some(ScoredPoint {
                verdicts: [verdict; 5],
                means: [1.0; 5],
                p01: [0.9; 5],
                p99: [1.1; 5],
                score,
                anomalous: score > 0.0,
            }),
        }
    }

    fn labels_with_event(n: i64, event_hours: std::ops::Range<i64>, id: u32) -> Vec<LabelPoint> {
        (0..n)
            .map(|h| LabelPoint {
                timestamp: ts(h),
                event: event_hours.contains(&h).then_some(id),
            })
            .collect()
    }

    #[test]
    fn perfect_detector_scores_one() {
        let labels = labels_with_event(50, 20..24, 0);
        let records: Vec<_> = (0..50)
            .map(|h| scored_record(h, if (20..24).contains(&h) { 1.0 } else { 0.0 }))
            .collect();
        let report = evaluate(&records, &labels, 0, 0.0).unwrap();
        assert_eq!(report.precision, 1.0);
        assert_eq!(report.recall, 1.0);
        assert_eq!(report.f1, 1.0);
        assert_eq!(report.false_positives, 0);
    }

    #[test]
    fn no_flags_reports_zero_recall_with_note() {
        let labels = labels_with_event(50, 20..24, 0);
        let records: Vec<_> = (0..50).map(|h| scored_record(h, 0.0)).collect();
        let report = evaluate(&records, &labels, 2, 0.0).unwrap();
        assert_eq!(report.recall, 0.0);
        assert_eq!(report.precision, 1.0);
        assert!(report.zero_flags);
    }

    #[test]
    fn single_stray_flag_gives_counting_fpr() {
        let n = 1004;
        let labels = labels_with_event(n, 0..4, 0);
        let records: Vec<_> = (0..n)
            .map(|h| scored_record(h, if h == 500 { 0.5 } else { 0.0 }))
            .collect();
        let report = evaluate(&records, &labels, 0, 0.0).unwrap();
        assert_eq!(report.clean_scored_records, 1000);
        assert_eq!(report.false_positives, 1);
        assert!((report.false_positive_rate - 0.001).abs() < 1e-12);
    }

    #[test]
    fn tolerance_extends_the_hit_zone() {
        let labels = labels_with_event(50, 20..22, 0);
        // flag 2 hours before the event only
        let records: Vec<_> = (0..50)
            .map(|h| scored_record(h, if h == 18 { 1.0 } else { 0.0 }))
            .collect();
        let strict = evaluate(&records, &labels, 0, 0.0).unwrap();
        assert_eq!(strict.recall, 0.0);
        assert_eq!(strict.false_positives, 1);
        let tolerant = evaluate(&records, &labels, 2, 0.0).unwrap();
        assert_eq!(tolerant.recall, 1.0);
        assert_eq!(tolerant.false_positives, 0);
    }

    #[test]
    fn raising_threshold_never_raises_recall() {
        let labels = labels_with_event(100, 40..44, 0);
        let records: Vec<_> = (0..100)
            .map(|h| {
                scored_record(
                    h,
                    match h {
                        40 => 0.2,
                        41 => 0.5,
                        70 => 0.9,
                        _ => 0.0,
                    },
                )
            })
            .collect();
        let mut last = f64::INFINITY;
        for threshold in [0.0, 0.1, 0.3, 0.6, 1.0] {
            let r = evaluate(&records, &labels, 0, threshold).unwrap();
            assert!(r.recall <= last);
            last = r.recall;
        }
    }

    #[test]
    fn events_outside_coverage_are_excluded() {
        let labels = labels_with_event(200, 10..12, 0);
        // records start at hour 100: the event cannot be seen
        let records: Vec<_> = (100..200).map(|h| scored_record(h, 0.0)).collect();
        let report = evaluate(&records, &labels, 2, 0.0).unwrap();
        assert_eq!(report.excluded_events, 1);
        assert!(report.events.is_empty());
        assert_eq!(report.recall, 1.0);
    }

    #[test]
    fn unlabelled_record_is_a_timeline_mismatch() {
        let labels = labels_with_event(10, 2..3, 0);
        let records = vec![scored_record(50, 0.0)];
        assert!(matches!(
            evaluate(&records, &labels, 0, 0.0),
            Err(EvalError::TimelineMismatch(_))
        ));
    }
}
