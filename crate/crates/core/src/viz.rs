//! Activation and attention heatmaps, prediction overlays.

use std::path::Path;

use image::{GrayImage, ImageBuffer, Luma, Rgb, RgbImage};

use crate::attention::AttentionTrace;
use crate::error::{Error, Result};
use crate::mask::LaneMask;
use crate::model::ForwardPass;
use crate::tensor::Tensor;

/// Encoder stages come first; they yield one heatmap per frame.
pub const STAGES: [&str; 9] = [
    "In_ConvBlock",
    "Down_ConvBlock_1",
    "Down_ConvBlock_2",
    "Down_ConvBlock_3",
    "Down_ConvBlock_4",
    "Up_ConvBlock_4",
    "Up_ConvBlock_3",
    "Up_ConvBlock_2",
    "Up_ConvBlock_1",
];

/// Values mapped linearly so the minimum is 0 and the maximum 255; a
/// constant map is all 0.
fn to_gray(values: &[f32], h: usize, w: usize, out_h: usize, out_w: usize) -> GrayImage {
    let lo = values.iter().copied().fold(f32::INFINITY, f32::min);
    let hi = values.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let span = hi - lo;
    ImageBuffer::from_fn(out_w as u32, out_h as u32, |x, y| {
        let sy = y as usize * h / out_h;
        let sx = x as usize * w / out_w;
        let v = values[sy * w + sx];
        let g = if span > 0.0 { ((v - lo) / span * 255.0).round() } else { 0.0 };
        Luma([g as u8])
    })
}

fn channel_mean(t: &Tensor<f32>) -> (Vec<f32>, usize, usize) {
    let (c, h, w) = t.chw().expect("activations are C×H×W");
    let mut mean = vec![0.0f32; h * w];
    for ch in 0..c {
        for (m, v) in mean.iter_mut().zip(t.channel(ch)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= c as f32);
    (mean, h, w)
}

/// Channel-mean heatmaps of `stage`, nearest-upscaled to `out_h×out_w`.
pub fn stage_heatmaps(pass: &ForwardPass<f32>, stage: &str, out_h: usize, out_w: usize) -> Result<Vec<GrayImage>> {
    let idx = STAGES
        .iter()
        .position(|s| *s == stage)
        .ok_or_else(|| Error::UnknownStage(stage.to_string()))?;
    let maps: Vec<&Tensor<f32>> = if idx < 5 {
        (0..pass.trace.frames()).map(|f| pass.encoder(f).block_output(idx)).collect()
    } else {
        vec![pass.decoder().block_output(idx - 5)]
    };
    Ok(maps
        .into_iter()
        .map(|t| {
            let (m, h, w) = channel_mean(t);
            to_gray(&m, h, w, out_h, out_w)
        })
        .collect())
}

/// One heatmap per frame of the attention weights over the bottleneck grid,
/// each pixel of the grid drawn as a `scale×scale` block.
pub fn attention_heatmaps(trace: &AttentionTrace<f32>, scale: usize) -> Vec<GrayImage> {
    let (h, w) = trace.grid;
    let scale = scale.max(1);
    trace.w.iter().map(|wv| to_gray(wv, h, w, h * scale, w * scale)).collect()
}

/// The frame with predicted lane pixels painted red.
pub fn red_overlay(frame: &Tensor<f32>, mask: &LaneMask) -> Result<RgbImage> {
    let (c, h, w) = frame
        .chw()
        .filter(|&(c, _, _)| c == 3)
        .ok_or_else(|| Error::shape("overlay", format!("expected 3×H×W frame, got {:?}", frame.shape())))?;
    if h != mask.height() || w != mask.width() {
        return Err(Error::shape("overlay", "frame and mask differ in size"));
    }
    let d = frame.data();
    let q = |v: f32| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    debug_assert_eq!(c, 3);
    Ok(ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        let (x, y) = (x as usize, y as usize);
        if mask.get(y, x) {
            Rgb([255, 0, 0])
        } else {
            let k = y * w + x;
            Rgb([q(d[k]), q(d[h * w + k]), q(d[2 * h * w + k])])
        }
    }))
}

pub fn save_gray(path: &Path, img: &GrayImage) -> Result<()> {
    img.save(path).map_err(|e| Error::Image {
        path: path.into(),
        source: e,
    })
}

pub fn save_rgb(path: &Path, img: &RgbImage) -> Result<()> {
    img.save(path).map_err(|e| Error::Image {
        path: path.into(),
        source: e,
    })
}
