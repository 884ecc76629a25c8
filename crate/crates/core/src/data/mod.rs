//! Image sequences, the synthetic scene generator, stride sampling,
//! geometric augmentation and the on-disk dataset format.

mod augment;
mod io;
mod stride;
mod synth;

pub use augment::{augment, augment_random, AugmentOp};
pub use io::{
    load_dataset, load_sequence, read_mask_png, read_rgb_png, write_mask_png, write_rgb_png, write_synth_dataset,
    DatasetIndex, IndexEntry, LoadConfig, LoadReport, SynthConfig, INDEX_FILE,
};
pub use stride::sample_with_stride;
pub use synth::{
    generate_clip, generate_sequence, ChallengeMix, Challenges, Dash, LaneSpec, Motion, Occluder, Rect, RoadStyle,
    SceneSpec, ShadowBand,
};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mask::LaneMask;
use crate::tensor::Tensor;

/// `N` RGB frames in `[0, 1]` and the lane mask of the last one.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSequence {
    /// Each `3×H×W`.
    pub frames: Vec<Tensor<f32>>,
    pub mask: LaneMask,
    pub source_id: String,
}

impl ImageSequence {
    pub fn new(frames: Vec<Tensor<f32>>, mask: LaneMask, source_id: impl Into<String>) -> Result<Self> {
        let source_id = source_id.into();
        let first = frames
            .first()
            .ok_or_else(|| Error::Dataset(format!("{source_id}: sequence has no frames")))?;
        let shape = first.shape().to_vec();
        if shape.len() != 3 || shape[0] != 3 {
            return Err(Error::Dataset(format!("{source_id}: frame 0 has shape {shape:?}, expected 3×H×W")));
        }
        for (i, f) in frames.iter().enumerate() {
            if f.shape() != shape.as_slice() {
                return Err(Error::Dataset(format!(
                    "{source_id}: frame {i} has shape {:?}, frame 0 has {shape:?}",
                    f.shape()
                )));
            }
        }
        if mask.height() != shape[1] || mask.width() != shape[2] {
            return Err(Error::Dataset(format!(
                "{source_id}: mask {}×{} does not match frames {}×{}",
                mask.height(),
                mask.width(),
                shape[1],
                shape[2]
            )));
        }
        Ok(Self {
            frames,
            mask,
            source_id,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn height(&self) -> usize {
        self.mask.height()
    }

    pub fn width(&self) -> usize {
        self.mask.width()
    }

    /// Keeps the frames at the given 0-based positions, labeled frame last.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let frames = indices
            .iter()
            .map(|&i| {
                self.frames.get(i).cloned().ok_or_else(|| {
                    Error::Dataset(format!("{}: frame index {i} out of range", self.source_id))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(frames, self.mask.clone(), self.source_id.clone())
    }

    /// The last `n` frames.
    pub fn tail(&self, n: usize) -> Result<Self> {
        if n == 0 || n > self.len() {
            return Err(Error::Dataset(format!(
                "{}: cannot take the last {n} of {} frames",
                self.source_id,
                self.len()
            )));
        }
        let start = self.len() - n;
        self.select(&(start..self.len()).collect::<Vec<_>>())
    }
}

/// Deterministic in-place shuffle.
pub fn shuffle_by_seed<T>(items: &mut [T], seed: u64) {
    items.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(n: usize) -> ImageSequence {
        let frames = (0..n).map(|i| Tensor::full(&[3, 4, 4], i as f32 / 10.0)).collect();
        ImageSequence::new(frames, LaneMask::empty(4, 4), "t").unwrap()
    }

    #[test]
    fn rejects_ragged_frames_and_bad_mask() {
        let frames = vec![Tensor::<f32>::zeros(&[3, 4, 4]), Tensor::zeros(&[3, 4, 5])];
        assert!(ImageSequence::new(frames, LaneMask::empty(4, 4), "x").is_err());
        let frames = vec![Tensor::<f32>::zeros(&[3, 4, 4])];
        assert!(ImageSequence::new(frames, LaneMask::empty(4, 5), "x").is_err());
        assert!(ImageSequence::new(vec![], LaneMask::empty(4, 4), "x").is_err());
    }

    #[test]
    fn tail_keeps_labeled_frame_last() {
        let s = seq(5).tail(2).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.frames[1].data()[0], 0.4);
        assert!(seq(3).tail(4).is_err());
    }

    #[test]
    fn shuffle_is_seeded() {
        let mut a: Vec<usize> = (0..20).collect();
        let mut b = a.clone();
        shuffle_by_seed(&mut a, 3);
        shuffle_by_seed(&mut b, 3);
        assert_eq!(a, b);
        assert_ne!(a, (0..20).collect::<Vec<_>>());
    }
}
