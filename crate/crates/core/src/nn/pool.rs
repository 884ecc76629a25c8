use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// 2×2 max pooling with stride 2.
///
/// Returns the pooled tensor and, for every output element, the flat index
/// of the input element that won. Ties go to the first element in scan
/// order (row-major within the window).
pub fn maxpool2x2<T: Real>(layer: &str, input: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    let (c, h, w) = input
        .chw()
        .ok_or_else(|| Error::shape(layer, format!("expected C×H×W, got {:?}", input.shape())))?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::shape(layer, format!("{h}×{w} is not divisible by 2")));
    }
    let (ho, wo) = (h / 2, w / 2);
    let x = input.data();
    let mut out = Vec::with_capacity(c * ho * wo);
    let mut argmax = Vec::with_capacity(c * ho * wo);
    for ci in 0..c {
        for oy in 0..ho {
            for ox in 0..wo {
                let base = (ci * h + 2 * oy) * w + 2 * ox;
                let mut best = base;
                for idx in [base + 1, base + w, base + w + 1] {
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                out.push(x[best]);
                argmax.push(best);
            }
        }
    }
    Ok((Tensor::new(&[c, ho, wo], out)?, argmax))
}

/// Route each upstream gradient element to the recorded argmax position.
pub fn maxpool2x2_backward<T: Real>(grad_out: &Tensor<T>, argmax: &[usize], input_shape: &[usize]) -> Tensor<T> {
    let mut grad = Tensor::zeros(input_shape);
    let g = grad.data_mut();
    for (&idx, &v) in argmax.iter().zip(grad_out.data()) {
        g[idx] += v;
    }
    grad
}
