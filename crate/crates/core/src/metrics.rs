//! Trace analysis: failure-event detection and confidence-regime
//! segmentation.
//!
//! A sampling step is one [`StepRecord`]. Detectors read the record's
//! confidence snapshot, masked set and block bounds; they never need the
//! predictor.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::predictor::argmax_lowest;
use crate::trace::{DecodeTrace, StepRecord};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("trace has no records")]
    EmptyTrace,
    #[error("tau_lo ({lo}) must be below tau_hi ({hi})")]
    Thresholds { lo: f64, hi: f64 },
    #[error("persistence must be at least 1")]
    Persistence,
}

/// Masked positions outside the block at or above `tau`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LateOverheadEvent {
    pub step: usize,
    /// `(position, confidence)` pairs, ascending by position.
    pub positions: Vec<(usize, f64)>,
}

/// A sub-threshold in-block commit made while a masked position outside the
/// block was more confident.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrematureEvent {
    pub step: usize,
    pub forced: (usize, f64),
    /// Most confident masked position outside the block.
    pub outside: (usize, f64),
}

pub fn detect_late_overhead(record: &StepRecord, tau: f64) -> Option<LateOverheadEvent> {
    let positions: Vec<(usize, f64)> = record
        .masked
        .iter()
        .filter(|&&j| !record.in_block(j))
        .map(|&j| (j, record.confidence[j]))
        .filter(|&(_, c)| c >= tau)
        .collect();
    (!positions.is_empty()).then_some(LateOverheadEvent { step: record.index, positions })
}

pub fn detect_premature(record: &StepRecord, tau: f64) -> Option<PrematureEvent> {
    let conf = |j: usize| (j, record.confidence[j]);
    let forced = argmax_lowest(record.masked.iter().copied().filter(|&j| record.in_block(j)).map(conf))?;
    if forced.1 >= tau || !record.sampled.contains(&forced.0) {
        return None;
    }
    let outside = argmax_lowest(record.masked.iter().copied().filter(|&j| !record.in_block(j)).map(conf))?;
    (outside.1 > forced.1).then_some(PrematureEvent { step: record.index, forced, outside })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepEvents {
    pub step: usize,
    pub late_overhead: Option<LateOverheadEvent>,
    pub premature: Option<PrematureEvent>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureReport {
    pub total_steps: usize,
    pub late_overhead_steps: usize,
    pub premature_steps: usize,
    pub late_overhead_rate: f64,
    pub premature_rate: f64,
    pub events: Vec<StepEvents>,
}

pub fn failure_rates(trace: &DecodeTrace, tau: f64) -> Result<FailureReport, MetricsError> {
    if trace.is_empty() {
        return Err(MetricsError::EmptyTrace);
    }
    let events: Vec<StepEvents> = trace
        .records
        .iter()
        .map(|r| StepEvents {
            step: r.index,
            late_overhead: detect_late_overhead(r, tau),
            premature: detect_premature(r, tau),
        })
        .collect();
    let total = events.len();
    let late = events.iter().filter(|e| e.late_overhead.is_some()).count();
    let premature = events.iter().filter(|e| e.premature.is_some()).count();
    Ok(FailureReport {
        total_steps: total,
        late_overhead_steps: late,
        premature_steps: premature,
        late_overhead_rate: late as f64 / total as f64,
        premature_rate: premature as f64 / total as f64,
        events,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RegimeLabel {
    Plateau,
    VolatilityBand,
    Floor,
    Decoded,
}

impl RegimeLabel {
    pub fn code(self) -> char {
        match self {
            Self::Plateau => 'P',
            Self::VolatilityBand => 'V',
            Self::Floor => 'F',
            Self::Decoded => 'D',
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegimeThresholds {
    pub tau_hi: f64,
    pub tau_lo: f64,
    pub persistence: usize,
}

impl Default for RegimeThresholds {
    fn default() -> Self {
        Self { tau_hi: 0.9, tau_lo: 0.1, persistence: 3 }
    }
}

/// Labels indexed `[step][generation position]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegimeMap {
    pub labels: Vec<Vec<RegimeLabel>>,
}

/// Labels every generation position at every recorded step. The persistence
/// window looks back over the last `persistence` snapshots, or fewer near the
/// start of the trace.
pub fn segment_regimes(trace: &DecodeTrace, th: RegimeThresholds) -> Result<RegimeMap, MetricsError> {
    if th.tau_lo >= th.tau_hi {
        return Err(MetricsError::Thresholds { lo: th.tau_lo, hi: th.tau_hi });
    }
    if th.persistence == 0 {
        return Err(MetricsError::Persistence);
    }
    if trace.is_empty() {
        return Err(MetricsError::EmptyTrace);
    }
    let l = trace.gen_budget;
    let mut labels = Vec::with_capacity(trace.len());
    for (t, rec) in trace.records.iter().enumerate() {
        let mut row = vec![RegimeLabel::Decoded; l];
        let window = &trace.records[(t + 1).saturating_sub(th.persistence)..=t];
        for &j in &rec.masked {
            row[j] = if window.iter().all(|r| r.confidence[j] >= th.tau_hi) {
                RegimeLabel::Plateau
            } else if window.iter().all(|r| r.confidence[j] <= th.tau_lo) {
                RegimeLabel::Floor
            } else {
                RegimeLabel::VolatilityBand
            };
        }
        labels.push(row);
    }
    Ok(RegimeMap { labels })
}

pub fn vb_width_series(map: &RegimeMap) -> Vec<usize> {
    map.labels.iter().map(|row| row.iter().filter(|&&l| l == RegimeLabel::VolatilityBand).count()).collect()
}

/// One row per step: `step,g,B,late_overhead,premature,vb_width`.
pub fn step_report_csv(trace: &DecodeTrace, report: &FailureReport, vb_width: &[usize]) -> String {
    let mut out = String::from("step,g,B,late_overhead,premature,vb_width\n");
    for ((r, e), w) in trace.records.iter().zip(&report.events).zip(vb_width) {
        let late = e.late_overhead.as_ref().map_or(0, |ev| ev.positions.len());
        let pre = u8::from(e.premature.is_some());
        let _ = writeln!(out, "{},{},{},{},{},{}", r.index, r.g, r.block_size, late, pre, w);
    }
    out
}

/// Step-by-position confidence matrix; first column is the step.
pub fn heatmap_csv(trace: &DecodeTrace) -> String {
    let mut out = String::from("step");
    for j in 0..trace.gen_budget {
        let _ = write!(out, ",p{j}");
    }
    out.push('\n');
    for r in &trace.records {
        let _ = write!(out, "{}", r.index);
        for c in &r.confidence {
            let _ = write!(out, ",{c}");
        }
        out.push('\n');
    }
    out
}

/// Step-by-position label matrix using the one-letter codes.
pub fn regimes_csv(map: &RegimeMap) -> String {
    let width = map.labels.first().map_or(0, Vec::len);
    let mut out = String::from("step");
    for j in 0..width {
        let _ = write!(out, ",p{j}");
    }
    out.push('\n');
    for (t, row) in map.labels.iter().enumerate() {
        let _ = write!(out, "{t}");
        for l in row {
            out.push(',');
            out.push(l.code());
        }
        out.push('\n');
    }
    out
}
