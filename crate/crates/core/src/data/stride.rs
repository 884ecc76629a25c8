use crate::error::{Error, Result};

/// 1-based frame indices `{L − (N−1)s, …, L − s, L}` of a clip whose labeled
/// frame is `L`.
pub fn sample_with_stride(labeled: usize, frames: usize, stride: usize) -> Result<Vec<usize>> {
    if stride == 0 {
        return Err(Error::InvalidArgument("stride must be at least 1".into()));
    }
    if frames == 0 {
        return Err(Error::InvalidArgument("need at least one frame".into()));
    }
    let span = (frames - 1) * stride;
    if labeled < span + 1 {
        return Err(Error::Dataset(format!(
            "clip too short: labeled frame {labeled} cannot supply {frames} frames at stride {stride}"
        )));
    }
    Ok((0..frames).map(|i| labeled - span + i * stride).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn stride_one_and_three() {
        assert_eq!(sample_with_stride(20, 5, 1).unwrap(), vec![16, 17, 18, 19, 20]);
        assert_eq!(sample_with_stride(20, 5, 3).unwrap(), vec![8, 11, 14, 17, 20]);
    }

    #[test]
    fn zero_stride_and_short_clip_rejected() {
        assert!(matches!(sample_with_stride(20, 5, 0), Err(Error::InvalidArgument(_))));
        assert!(matches!(sample_with_stride(12, 5, 3), Err(Error::Dataset(_))));
        assert_eq!(sample_with_stride(13, 5, 3).unwrap()[0], 1);
    }

    proptest! {
        #[test]
        fn always_ends_at_labeled_frame(l in 1usize..200, n in 1usize..8, s in 1usize..4) {
            match sample_with_stride(l, n, s) {
                Ok(idx) => {
                    prop_assert_eq!(idx.len(), n);
                    prop_assert_eq!(*idx.last().unwrap(), l);
                    prop_assert!(idx[0] >= 1);
                    prop_assert!(idx.windows(2).all(|w| w[1] - w[0] == s));
                }
                Err(_) => prop_assert!(l < (n - 1) * s + 1),
            }
        }
    }
}
