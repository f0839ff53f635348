//! Expected Calibration Error over equal-width confidence bins.
//!
//! Bins are half-open `(lo, hi]`; a confidence of exactly 0 goes to the
//! first bin. Only detections are binned: missed ground truths carry no
//! confidence and do not contribute.

use serde::Serialize;

use crate::error::{Error, Result};

pub const DEFAULT_BINS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BinStatistics {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    /// Mean confidence of the bin's samples, 0 when empty.
    pub mean_confidence: f64,
    /// Fraction of the bin's samples that are correct, 0 when empty.
    pub precision: f64,
}

impl BinStatistics {
    pub fn gap(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.precision - self.mean_confidence
        }
    }
}

fn bin_bounds(m: usize, k: usize) -> (f64, f64) {
    (k as f64 / m as f64, (k + 1) as f64 / m as f64)
}

/// Index of the `(lo, hi]` bin holding `c`, consistent with [`bin_bounds`].
pub fn bin_index(c: f64, m: usize) -> usize {
    if c <= 0.0 {
        return 0;
    }
    let mut k = ((c * m as f64).ceil() as usize).clamp(1, m) - 1;
    while k > 0 && c <= bin_bounds(m, k).0 {
        k -= 1;
    }
    while k + 1 < m && c > bin_bounds(m, k).1 {
        k += 1;
    }
    k
}

/// Running per-bin sums. Partial accumulators over disjoint chunks can be
/// merged; counts merge exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct BinAccumulator {
    counts: Vec<usize>,
    correct: Vec<usize>,
    confidence_sums: Vec<f64>,
}

impl BinAccumulator {
    pub fn new(m_bins: usize) -> Self {
        assert!(m_bins >= 1, "need at least one bin");
        BinAccumulator {
            counts: vec![0; m_bins],
            correct: vec![0; m_bins],
            confidence_sums: vec![0.0; m_bins],
        }
    }

    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    pub fn add(&mut self, confidence: f64, correct: bool) {
        let k = bin_index(confidence, self.bins());
        self.counts[k] += 1;
        self.correct[k] += correct as usize;
        self.confidence_sums[k] += confidence;
    }

    pub fn merge(&mut self, other: &BinAccumulator) {
        assert_eq!(self.bins(), other.bins(), "bin count mismatch");
        for k in 0..self.bins() {
            self.counts[k] += other.counts[k];
            self.correct[k] += other.correct[k];
            self.confidence_sums[k] += other.confidence_sums[k];
        }
    }

    pub fn finish(&self) -> Vec<BinStatistics> {
        let m = self.bins();
        (0..m)
            .map(|k| {
                let (lower, upper) = bin_bounds(m, k);
                let n = self.counts[k];
                let (mean_confidence, precision) = if n == 0 {
                    (0.0, 0.0)
                } else {
                    (
                        self.confidence_sums[k] / n as f64,
                        self.correct[k] as f64 / n as f64,
                    )
                };
                BinStatistics {
                    lower,
                    upper,
                    count: n,
                    mean_confidence,
                    precision,
                }
            })
            .collect()
    }
}

/// Bin `(confidence, correct)` pairs into `m_bins` equal-width bins.
///
/// # Panics
/// If `m_bins == 0`.
pub fn bin_outcomes(labeled: &[(f64, bool)], m_bins: usize) -> Vec<BinStatistics> {
    let mut acc = BinAccumulator::new(m_bins);
    for &(c, ok) in labeled {
        acc.add(c, ok);
    }
    acc.finish()
}

/// `Σ (count/N) |precision − mean_confidence|` over the bins.
pub fn expected_calibration_error(bins: &[BinStatistics]) -> Result<f64> {
    let n: usize = bins.iter().map(|b| b.count).sum();
    if n == 0 {
        return Err(Error::EmptyInput("ECE needs at least one sample".into()));
    }
    let total = n as f64;
    let ece = bins
        .iter()
        .filter(|b| b.count > 0)
        .map(|b| b.count as f64 / total * (b.precision - b.mean_confidence).abs())
        .sum::<f64>();
    Ok(ece.clamp(0.0, 1.0))
}

/// Bin and score in one step.
pub fn ece(labeled: &[(f64, bool)], m_bins: usize) -> Result<f64> {
    expected_calibration_error(&bin_outcomes(labeled, m_bins))
}

/// One reliability-diagram row per bin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReliabilityRow {
    pub bin_lower: f64,
    pub bin_upper: f64,
    pub count: usize,
    pub mean_confidence: f64,
    pub precision: f64,
    pub gap: f64,
}

pub fn reliability_table(bins: &[BinStatistics]) -> Vec<ReliabilityRow> {
    bins.iter()
        .map(|b| ReliabilityRow {
            bin_lower: b.lower,
            bin_upper: b.upper,
            count: b.count,
            mean_confidence: b.mean_confidence,
            precision: b.precision,
            gap: b.gap(),
        })
        .collect()
}
