use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Source taps for one output coordinate along one axis.
#[derive(Debug, Clone, Copy)]
struct Tap<T> {
    lo: usize,
    hi: usize,
    frac: T,
}

/// Half-pixel centres: output `i` samples the input at `(i + 0.5) / 2 - 0.5`,
/// clamped to the valid range.
fn taps<T: Real>(n_in: usize) -> Vec<Tap<T>> {
    (0..2 * n_in)
        .map(|i| {
            let src = ((i as f64 + 0.5) / 2.0 - 0.5).clamp(0.0, (n_in - 1) as f64);
            let lo = src.floor() as usize;
            let hi = (lo + 1).min(n_in - 1);
            Tap {
                lo,
                hi,
                frac: T::lit(src - lo as f64),
            }
        })
        .collect()
}

/// Bilinear ×2 upsampling of a `C×H×W` tensor.
pub fn upsample_bilinear_2x<T: Real>(layer: &str, input: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, h, w) = input
        .chw()
        .ok_or_else(|| Error::shape(layer, format!("expected C×H×W, got {:?}", input.shape())))?;
    let ty = taps::<T>(h);
    let tx = taps::<T>(w);
    let (ho, wo) = (2 * h, 2 * w);
    let x = input.data();
    let mut out = vec![T::zero(); c * ho * wo];
    for ci in 0..c {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        let dst = &mut out[ci * ho * wo..(ci + 1) * ho * wo];
        for (oy, a) in ty.iter().enumerate() {
            let r0 = &plane[a.lo * w..(a.lo + 1) * w];
            let r1 = &plane[a.hi * w..(a.hi + 1) * w];
            for (ox, b) in tx.iter().enumerate() {
                let top = r0[b.lo] + b.frac * (r0[b.hi] - r0[b.lo]);
                let bot = r1[b.lo] + b.frac * (r1[b.hi] - r1[b.lo]);
                dst[oy * wo + ox] = top + a.frac * (bot - top);
            }
        }
    }
    Tensor::new(&[c, ho, wo], out)
}

/// Transpose of the interpolation map.
pub fn upsample_bilinear_2x_backward<T: Real>(grad_out: &Tensor<T>, input_shape: &[usize]) -> Tensor<T> {
    let (c, h, w) = (input_shape[0], input_shape[1], input_shape[2]);
    let ty = taps::<T>(h);
    let tx = taps::<T>(w);
    let wo = 2 * w;
    let g = grad_out.data();
    let mut grad = Tensor::zeros(input_shape);
    let gi = grad.data_mut();
    for ci in 0..c {
        let src = &g[ci * 4 * h * w..(ci + 1) * 4 * h * w];
        let dst = &mut gi[ci * h * w..(ci + 1) * h * w];
        for (oy, a) in ty.iter().enumerate() {
            for (ox, b) in tx.iter().enumerate() {
                let v = src[oy * wo + ox];
                let top = v * (T::one() - a.frac);
                let bot = v * a.frac;
                dst[a.lo * w + b.lo] += top * (T::one() - b.frac);
                dst[a.lo * w + b.hi] += top * b.frac;
                dst[a.hi * w + b.lo] += bot * (T::one() - b.frac);
                dst[a.hi * w + b.hi] += bot * b.frac;
            }
        }
    }
    grad
}
