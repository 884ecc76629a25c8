//! Geometric augmentation applied identically to every frame and the mask.
//! Resampling is nearest-neighbour so masks stay binary.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ImageSequence;
use crate::error::{Error, Result};
use crate::mask::LaneMask;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AugmentOp {
    HFlip,
    /// Counter-clockwise rotation about the image centre, in degrees.
    /// Uncovered pixels become 0.
    Rotate(f64),
    /// Crop the window and resize it back to the full frame.
    CropResize {
        top: usize,
        left: usize,
        height: usize,
        width: usize,
    },
}

impl AugmentOp {
    /// One of the three operations with parameters in modest ranges.
    pub fn random(rng: &mut impl Rng, height: usize, width: usize) -> Self {
        match rng.random_range(0..3) {
            0 => AugmentOp::HFlip,
            1 => AugmentOp::Rotate(rng.random_range(-5.0..5.0)),
            _ => {
                let frac = rng.random_range(0.8..1.0);
                let ch = ((height as f64 * frac).round() as usize).clamp(1, height);
                let cw = ((width as f64 * frac).round() as usize).clamp(1, width);
                AugmentOp::CropResize {
                    top: rng.random_range(0..=height - ch),
                    left: rng.random_range(0..=width - cw),
                    height: ch,
                    width: cw,
                }
            }
        }
    }
}

/// Source pixel `(y, x)` for each destination pixel, `None` if uncovered.
fn source_map(op: AugmentOp, h: usize, w: usize) -> Result<Vec<Option<(usize, usize)>>> {
    let mut map = Vec::with_capacity(h * w);
    match op {
        AugmentOp::HFlip => {
            for y in 0..h {
                for x in 0..w {
                    map.push(Some((y, w - 1 - x)));
                }
            }
        }
        AugmentOp::Rotate(deg) => {
            if !deg.is_finite() {
                return Err(Error::InvalidArgument(format!("rotation angle {deg}")));
            }
            let (s, c) = deg.to_radians().sin_cos();
            let (cy, cx) = (h as f64 / 2.0, w as f64 / 2.0);
            for y in 0..h {
                for x in 0..w {
                    let (dy, dx) = (y as f64 + 0.5 - cy, x as f64 + 0.5 - cx);
                    // inverse rotation of the destination centre
                    let sx = c * dx - s * dy + cx;
                    let sy = s * dx + c * dy + cy;
                    let (fy, fx) = (sy.floor(), sx.floor());
                    map.push(if fy >= 0.0 && fx >= 0.0 && fy < h as f64 && fx < w as f64 {
                        Some((fy as usize, fx as usize))
                    } else {
                        None
                    });
                }
            }
        }
        AugmentOp::CropResize {
            top,
            left,
            height,
            width,
        } => {
            if height == 0 || width == 0 || top + height > h || left + width > w {
                return Err(Error::InvalidArgument(format!(
                    "crop {height}×{width} at ({top},{left}) outside {h}×{w}"
                )));
            }
            for y in 0..h {
                for x in 0..w {
                    let sy = top + (y * height) / h;
                    let sx = left + (x * width) / w;
                    map.push(Some((sy, sx)));
                }
            }
        }
    }
    Ok(map)
}

/// Errors when the transformed mask has no lane pixels left.
pub fn augment(seq: &ImageSequence, op: AugmentOp) -> Result<ImageSequence> {
    let (h, w) = (seq.height(), seq.width());
    let map = source_map(op, h, w)?;
    let frames = seq
        .frames
        .iter()
        .map(|f| {
            let src = f.data();
            let mut out = vec![0.0f32; 3 * h * w];
            for c in 0..3 {
                for (k, m) in map.iter().enumerate() {
                    if let Some((sy, sx)) = *m {
                        out[c * h * w + k] = src[c * h * w + sy * w + sx];
                    }
                }
            }
            Tensor::new(&[3, h, w], out)
        })
        .collect::<Result<Vec<_>>>()?;
    let bits = map
        .iter()
        .map(|m| m.is_some_and(|(sy, sx)| seq.mask.get(sy, sx)))
        .collect();
    let mask = LaneMask::new(h, w, bits)?;
    if seq.mask.lane_pixels() > 0 && mask.lane_pixels() == 0 {
        return Err(Error::Dataset(format!("{}: augmentation {op:?} removed every lane pixel", seq.source_id)));
    }
    ImageSequence::new(frames, mask, seq.source_id.clone())
}

/// Draws an operation from `seed` and applies it.
pub fn augment_random(seq: &ImageSequence, seed: u64) -> Result<ImageSequence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let op = AugmentOp::random(&mut rng, seq.height(), seq.width());
    augment(seq, op)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_sequence, ChallengeMix, SceneSpec};

    fn scene(seed: u64) -> ImageSequence {
        generate_sequence(&SceneSpec::random(seed, 64, 64, 3, &ChallengeMix::none()).unwrap()).unwrap()
    }

    #[test]
    fn double_flip_is_identity() {
        let s = scene(1);
        let back = augment(&augment(&s, AugmentOp::HFlip).unwrap(), AugmentOp::HFlip).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn flip_reflects_mask_columns() {
        let s = scene(2);
        let f = augment(&s, AugmentOp::HFlip).unwrap();
        for y in 0..64 {
            for x in 0..64 {
                assert_eq!(f.mask.get(y, x), s.mask.get(y, 63 - x));
            }
        }
    }

    #[test]
    fn small_rotation_roughly_preserves_lane_area() {
        for seed in 0..10 {
            let s = scene(seed);
            let r = augment(&s, AugmentOp::Rotate(5.0)).unwrap();
            let (a, b) = (s.mask.lane_pixels() as f64, r.mask.lane_pixels() as f64);
            assert!((b - a).abs() <= 0.1 * a, "seed {seed}: {a} -> {b}");
        }
    }

    #[test]
    fn zero_rotation_and_full_crop_are_identity() {
        let s = scene(3);
        assert_eq!(augment(&s, AugmentOp::Rotate(0.0)).unwrap(), s);
        let full = AugmentOp::CropResize {
            top: 0,
            left: 0,
            height: 64,
            width: 64,
        };
        assert_eq!(augment(&s, full).unwrap(), s);
    }

    #[test]
    fn crop_that_misses_every_lane_is_rejected() {
        let s = scene(4);
        // find a 1×1 window without lane pixels
        let (y, x) = (0..64)
            .flat_map(|y| (0..64).map(move |x| (y, x)))
            .find(|&(y, x)| !s.mask.get(y, x))
            .unwrap();
        let op = AugmentOp::CropResize {
            top: y,
            left: x,
            height: 1,
            width: 1,
        };
        assert!(matches!(augment(&s, op), Err(Error::Dataset(_))));
    }

    #[test]
    fn random_ops_keep_mask_binary_and_shape() {
        let s = scene(5);
        for seed in 0..20 {
            if let Ok(a) = augment_random(&s, seed) {
                assert_eq!((a.height(), a.width(), a.len()), (64, 64, 3));
            }
        }
    }
}
