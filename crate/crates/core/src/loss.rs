//! Class-weighted binary cross-entropy on the lane probability.

use crate::error::{Error, Result};
use crate::mask::LaneMask;
use crate::nn::sigmoid;
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub w_lane: f64,
    pub w_background: f64,
    /// Probabilities are clamped to `[epsilon, 1 - epsilon]` before the log.
    pub epsilon: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            w_lane: 1.0,
            w_background: 1.0,
            epsilon: 1e-7,
        }
    }
}

impl LossConfig {
    pub fn new(w_lane: f64, w_background: f64) -> Result<Self> {
        if !(w_lane > 0.0 && w_background > 0.0 && w_lane.is_finite() && w_background.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "class weights must be positive, got lane={w_lane} background={w_background}"
            )));
        }
        Ok(Self {
            w_lane,
            w_background,
            ..Self::default()
        })
    }
}

/// Loss on already-computed lane probabilities.
pub fn weighted_bce_probs<T: Real>(probs: &[T], target: &LaneMask, cfg: &LossConfig) -> Result<T> {
    if probs.len() != target.pixels().len() {
        return Err(Error::shape(
            "loss",
            format!("{} probabilities vs {} mask pixels", probs.len(), target.pixels().len()),
        ));
    }
    let eps = T::lit(cfg.epsilon);
    let (wl, wb) = (T::lit(cfg.w_lane), T::lit(cfg.w_background));
    let total: T = probs
        .iter()
        .zip(target.pixels())
        .map(|(&p, &y)| {
            let pc = p.max(eps).min(T::one() - eps);
            if y {
                -wl * pc.ln()
            } else {
                -wb * (T::one() - pc).ln()
            }
        })
        .sum();
    Ok(total / T::lit(probs.len() as f64))
}

/// Loss and its gradient with respect to `2×H×W` logits, where the lane
/// probability is the channel softmax `σ(l₁ − l₀)`.
pub fn weighted_bce<T: Real>(logits: &Tensor<T>, target: &LaneMask, cfg: &LossConfig) -> Result<(T, Tensor<T>)> {
    let (c, h, w) = logits
        .chw()
        .ok_or_else(|| Error::shape("loss", "expected 2×H×W logits"))?;
    if c != 2 || h != target.height() || w != target.width() {
        return Err(Error::shape(
            "loss",
            format!("logits {:?} vs mask {}×{}", logits.shape(), target.height(), target.width()),
        ));
    }
    let m = h * w;
    let bg = logits.channel(0);
    let lane = logits.channel(1);
    let probs: Vec<T> = bg.iter().zip(lane).map(|(&b, &l)| sigmoid(l - b)).collect();
    let loss = weighted_bce_probs(&probs, target, cfg)?;

    let eps = T::lit(cfg.epsilon);
    let (wl, wb) = (T::lit(cfg.w_lane), T::lit(cfg.w_background));
    let scale = T::one() / T::lit(m as f64);
    let mut grad = vec![T::zero(); 2 * m];
    for (k, (&p, &y)) in probs.iter().zip(target.pixels()).enumerate() {
        let clamped = p < eps || p > T::one() - eps;
        let d_lane = if clamped {
            T::zero()
        } else if y {
            -wl * (T::one() - p)
        } else {
            wb * p
        };
        grad[m + k] = d_lane * scale;
        grad[k] = -d_lane * scale;
    }
    Ok((loss, Tensor::new(&[2, h, w], grad)?))
}

/// Normalised inverse-frequency class weights:
/// `w_lane = P / (2 P_lane)`, `w_background = P / (2 P_background)`.
pub fn class_weights_from_masks<'a>(masks: impl IntoIterator<Item = &'a LaneMask>) -> Result<LossConfig> {
    let (mut total, mut lane) = (0usize, 0usize);
    for m in masks {
        total += m.pixels().len();
        lane += m.lane_pixels();
    }
    if total == 0 {
        return Err(Error::Dataset("no masks to derive class weights from".into()));
    }
    if lane == 0 {
        return Err(Error::Dataset("dataset has no lane pixels".into()));
    }
    let background = total - lane;
    if background == 0 {
        return Err(Error::Dataset("dataset has no background pixels".into()));
    }
    LossConfig::new(
        total as f64 / (2.0 * lane as f64),
        total as f64 / (2.0 * background as f64),
    )
}
