//! Pixel confusion counts, accuracy/precision/recall/F1 and mean average
//! precision over a threshold sweep.

use std::fmt;

use crate::error::{Error, Result};
use crate::mask::LaneMask;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn merge(&mut self, other: &ConfusionCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
        self.tn += other.tn;
    }
}

pub fn confusion(pred: &LaneMask, gt: &LaneMask) -> Result<ConfusionCounts> {
    if !pred.same_shape(gt) {
        return Err(Error::shape(
            "confusion",
            format!(
                "prediction {}×{} vs ground truth {}×{}",
                pred.height(),
                pred.width(),
                gt.height(),
                gt.width()
            ),
        ));
    }
    let mut c = ConfusionCounts::default();
    for (&p, &g) in pred.pixels().iter().zip(gt.pixels()) {
        match (p, g) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

/// Confusion restricted to pixels where `region` is set.
pub fn confusion_in_region(pred: &LaneMask, gt: &LaneMask, region: &LaneMask) -> Result<ConfusionCounts> {
    if !pred.same_shape(gt) || !pred.same_shape(region) {
        return Err(Error::shape("confusion", "prediction, ground truth and region differ in size"));
    }
    let mut c = ConfusionCounts::default();
    for ((&p, &g), &r) in pred.pixels().iter().zip(gt.pixels()).zip(region.pixels()) {
        if !r {
            continue;
        }
        match (p, g) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Precision and recall are 0 on a zero denominator; F1 is 0 when
/// precision + recall is 0.
pub fn metrics(c: &ConfusionCounts) -> Metrics {
    let precision = ratio(c.tp, c.tp + c.fp);
    let recall = ratio(c.tp, c.tp + c.fn_);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Metrics {
        accuracy: ratio(c.tp + c.tn, c.total()),
        precision,
        recall,
        f1,
    }
}

impl fmt::Display for Metrics {
    /// `key=value` lines.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "accuracy={:.6}", self.accuracy)?;
        writeln!(f, "precision={:.6}", self.precision)?;
        writeln!(f, "recall={:.6}", self.recall)?;
        write!(f, "f1={:.6}", self.f1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThresholdMode {
    /// Thresholds at evenly spaced order statistics of each frame's map.
    Quantile,
    /// Thresholds evenly spaced on `[0, 1]`.
    Grid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PrCurveConfig {
    /// Thresholds per frame; the sweep visits `V + 1` points.
    pub thresholds: usize,
    pub mode: ThresholdMode,
}

impl Default for PrCurveConfig {
    fn default() -> Self {
        Self {
            thresholds: 100,
            mode: ThresholdMode::Quantile,
        }
    }
}

/// Thresholds for sample `q = 1..=V+1`, descending.
///
/// Quantile mode takes the order statistic at index `⌊(V+1−q)(M−1)/V⌋` of the
/// ascending-sorted map, so `q = 1` is the maximum and `q = V+1` the minimum.
fn thresholds(probs: &[f64], cfg: &PrCurveConfig) -> Vec<f64> {
    let v = cfg.thresholds;
    match cfg.mode {
        ThresholdMode::Grid => (1..=v + 1).map(|q| (v + 1 - q) as f64 / v as f64).collect(),
        ThresholdMode::Quantile => {
            let mut sorted = probs.to_vec();
            sorted.sort_by(|a, b| a.total_cmp(b));
            let m = sorted.len();
            (1..=v + 1).map(|q| sorted[(v + 1 - q) * (m - 1) / v]).collect()
        }
    }
}

/// Area under one frame's precision/recall sweep, anchored at
/// recall₀ = 0, precision₀ = 1. A pixel counts as lane when `p ≥ τ`.
pub fn average_precision(probs: &[f64], gt: &LaneMask, cfg: &PrCurveConfig) -> Result<f64> {
    if probs.len() != gt.pixels().len() {
        return Err(Error::shape("average_precision", "probability map and mask differ in size"));
    }
    if probs.is_empty() {
        return Err(Error::InvalidArgument("empty probability map".into()));
    }
    if cfg.thresholds == 0 {
        return Err(Error::InvalidArgument("need at least one threshold".into()));
    }
    let positives = gt.lane_pixels() as u64;
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    for tau in thresholds(probs, cfg) {
        let (mut tp, mut fp) = (0u64, 0u64);
        for (&p, &g) in probs.iter().zip(gt.pixels()) {
            if p >= tau {
                if g {
                    tp += 1;
                } else {
                    fp += 1;
                }
            }
        }
        let precision = if tp + fp == 0 { 1.0 } else { tp as f64 / (tp + fp) as f64 };
        let recall = ratio(tp, positives);
        ap += precision * (recall - prev_recall);
        prev_recall = recall;
    }
    Ok(ap)
}

/// Mean of per-frame average precision.
pub fn mean_average_precision(prob_maps: &[Vec<f64>], gts: &[LaneMask], cfg: &PrCurveConfig) -> Result<f64> {
    if prob_maps.is_empty() {
        return Err(Error::InvalidArgument("mAP over an empty list".into()));
    }
    if prob_maps.len() != gts.len() {
        return Err(Error::InvalidArgument(format!(
            "{} probability maps vs {} ground truths",
            prob_maps.len(),
            gts.len()
        )));
    }
    let mut total = 0.0;
    for (p, g) in prob_maps.iter().zip(gts) {
        total += average_precision(p, g, cfg)?;
    }
    Ok(total / prob_maps.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(bits: &[u8], h: usize, w: usize) -> LaneMask {
        LaneMask::new(h, w, bits.iter().map(|&b| b != 0).collect()).unwrap()
    }

    #[test]
    fn hand_counted_two_by_two() {
        let pred = mask(&[1, 0, 0, 1], 2, 2);
        let gt = mask(&[1, 1, 0, 0], 2, 2);
        let c = confusion(&pred, &gt).unwrap();
        assert_eq!(c, ConfusionCounts { tp: 1, fp: 1, fn_: 1, tn: 1 });
        let m = metrics(&c);
        assert_eq!((m.accuracy, m.precision, m.recall, m.f1), (0.5, 0.5, 0.5, 0.5));
    }

    #[test]
    fn identical_masks_are_perfect() {
        let m = mask(&[0, 1, 1, 0, 0, 1], 2, 3);
        let c = confusion(&m, &m).unwrap();
        assert_eq!((c.fp, c.fn_), (0, 0));
        let r = metrics(&c);
        assert_eq!((r.accuracy, r.precision, r.recall, r.f1), (1.0, 1.0, 1.0, 1.0));
    }

    #[test]
    fn zero_denominator_conventions() {
        let m = metrics(&ConfusionCounts { tp: 0, fp: 0, fn_: 3, tn: 5 });
        assert_eq!((m.precision, m.recall, m.f1), (0.0, 0.0, 0.0));
        assert_eq!(metrics(&ConfusionCounts::default()).accuracy, 0.0);
    }

    #[test]
    fn shape_mismatch_rejected() {
        assert!(confusion(&mask(&[1, 0], 1, 2), &mask(&[1, 0], 2, 1)).is_err());
    }

    #[test]
    fn perfect_probabilities_give_unit_map() {
        let gt = mask(&[0, 1, 0, 0, 1, 1, 0, 0, 0], 3, 3);
        let probs: Vec<f64> = gt.pixels().iter().map(|&g| if g { 1.0 } else { 0.0 }).collect();
        for mode in [ThresholdMode::Quantile, ThresholdMode::Grid] {
            let cfg = PrCurveConfig { thresholds: 100, mode };
            assert_eq!(mean_average_precision(&[probs.clone()], &[gt.clone()], &cfg).unwrap(), 1.0);
        }
    }

    #[test]
    fn empty_list_rejected() {
        assert!(mean_average_precision(&[], &[], &PrCurveConfig::default()).is_err());
    }

    #[test]
    fn grid_thresholds_descend_from_one_to_zero() {
        let t = thresholds(&[0.3], &PrCurveConfig { thresholds: 4, mode: ThresholdMode::Grid });
        assert_eq!(t, vec![1.0, 0.75, 0.5, 0.25, 0.0]);
    }

    #[test]
    fn metrics_report_lines() {
        let text = metrics(&ConfusionCounts { tp: 1, fp: 1, fn_: 1, tn: 1 }).to_string();
        assert_eq!(text.lines().count(), 4);
        assert!(text.contains("f1=0.500000"));
    }
}
