//! 2-D convolution (cross-correlation, no kernel flip) lowered to a single
//! matrix product through im2col.

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub padding: (usize, usize),
    pub stride: usize,
    pub has_bias: bool,
    pub activation: Activation,
}

impl ConvSpec {
    /// 3×3, padding 1, stride 1, bias, ReLU.
    pub fn conv3x3_relu(in_channels: usize, out_channels: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel: (3, 3),
            padding: (1, 1),
            stride: 1,
            has_bias: true,
            activation: Activation::Relu,
        }
    }

    /// 1×1, no padding, stride 1, bias, no activation.
    pub fn conv1x1(in_channels: usize, out_channels: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel: (1, 1),
            padding: (0, 0),
            stride: 1,
            has_bias: true,
            activation: Activation::None,
        }
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [self.out_channels, self.in_channels, self.kernel.0, self.kernel.1]
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let (kh, kw) = self.kernel;
        let (ph, pw) = self.padding;
        let hp = h + 2 * ph;
        let wp = w + 2 * pw;
        if self.stride == 0 || hp < kh || wp < kw {
            return None;
        }
        Some(((hp - kh) / self.stride + 1, (wp - kw) / self.stride + 1))
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == (1, 1) && self.padding == (0, 0) && self.stride == 1
    }
}

/// Gradients produced by [`conv2d_backward`].
#[derive(Debug, Clone)]
pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
}

fn check<T: Real>(
    layer: &str,
    input: &Tensor<T>,
    spec: &ConvSpec,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
) -> Result<(usize, usize, usize, usize)> {
    let (c, h, w) = input
        .chw()
        .ok_or_else(|| Error::shape(layer, format!("expected C×H×W input, got {:?}", input.shape())))?;
    if c != spec.in_channels {
        return Err(Error::shape(
            layer,
            format!("input has {c} channels, layer expects {}", spec.in_channels),
        ));
    }
    if weight.shape() != spec.weight_shape() {
        return Err(Error::shape(
            layer,
            format!("weight {:?}, expected {:?}", weight.shape(), spec.weight_shape()),
        ));
    }
    match (spec.has_bias, bias) {
        (true, Some(b)) if b.shape() == [spec.out_channels] => {}
        (false, None) => {}
        _ => return Err(Error::shape(layer, "bias presence or shape does not match spec")),
    }
    let (ho, wo) = spec
        .output_hw(h, w)
        .ok_or_else(|| Error::shape(layer, format!("{h}×{w} input smaller than kernel")))?;
    Ok((h, w, ho, wo))
}

/// Unfold `C×H×W` into a `(C·kh·kw) × (Ho·Wo)` column matrix.
fn im2col<T: Real>(input: &[T], c: usize, h: usize, w: usize, spec: &ConvSpec, ho: usize, wo: usize) -> Vec<T> {
    let (kh, kw) = spec.kernel;
    let (ph, pw) = spec.padding;
    let s = spec.stride;
    let p = ho * wo;
    let mut cols = vec![T::zero(); c * kh * kw * p];
    for ci in 0..c {
        let plane = &input[ci * h * w..(ci + 1) * h * w];
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (ci * kh + ki) * kw + kj;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..ho {
                    let iy = (oy * s + ki) as isize - ph as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src_row = &plane[iy as usize * w..(iy as usize + 1) * w];
                    let dst_row = &mut dst[oy * wo..(oy + 1) * wo];
                    for (ox, d) in dst_row.iter_mut().enumerate() {
                        let ix = (ox * s + kj) as isize - pw as isize;
                        if ix >= 0 && ix < w as isize {
                            *d = src_row[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-add columns back onto the input grid.
fn col2im<T: Real>(cols: &[T], c: usize, h: usize, w: usize, spec: &ConvSpec, ho: usize, wo: usize) -> Vec<T> {
    let (kh, kw) = spec.kernel;
    let (ph, pw) = spec.padding;
    let s = spec.stride;
    let p = ho * wo;
    let mut out = vec![T::zero(); c * h * w];
    for ci in 0..c {
        let plane = &mut out[ci * h * w..(ci + 1) * h * w];
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (ci * kh + ki) * kw + kj;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..ho {
                    let iy = (oy * s + ki) as isize - ph as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst_row = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, &v) in src[oy * wo..(oy + 1) * wo].iter().enumerate() {
                        let ix = (ox * s + kj) as isize - pw as isize;
                        if ix >= 0 && ix < w as isize {
                            dst_row[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Forward convolution. Returns the post-activation output.
pub fn conv2d<T: Real>(
    layer: &str,
    input: &Tensor<T>,
    spec: &ConvSpec,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    let (h, w, ho, wo) = check(layer, input, spec, weight, bias)?;
    input.ensure_finite(&format!("input of {layer}"))?;
    let k = spec.in_channels * spec.kernel.0 * spec.kernel.1;
    let p = ho * wo;
    let cout = spec.out_channels;
    let mut out = vec![T::zero(); cout * p];
    if let Some(b) = bias {
        for (o, &bv) in b.data().iter().enumerate() {
            out[o * p..(o + 1) * p].iter_mut().for_each(|v| *v = bv);
        }
    }
    let beta = if bias.is_some() { T::one() } else { T::zero() };
    if spec.is_pointwise() {
        T::gemm(cout, k, p, T::one(), weight.data(), k as isize, 1, input.data(), p as isize, 1, beta, &mut out, p as isize, 1);
    } else {
        let cols = im2col(input.data(), spec.in_channels, h, w, spec, ho, wo);
        T::gemm(cout, k, p, T::one(), weight.data(), k as isize, 1, &cols, p as isize, 1, beta, &mut out, p as isize, 1);
    }
    if spec.activation == Activation::Relu {
        out.iter_mut().for_each(|v| {
            if *v < T::zero() {
                *v = T::zero()
            }
        });
    }
    Tensor::new(&[cout, ho, wo], out)
}

/// Backward convolution.
///
/// `output` is the post-activation forward result; for ReLU layers the
/// upstream gradient is masked where the output is not positive.
pub fn conv2d_backward<T: Real>(
    layer: &str,
    input: &Tensor<T>,
    spec: &ConvSpec,
    weight: &Tensor<T>,
    output: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let (c, h, w) = input
        .chw()
        .ok_or_else(|| Error::shape(layer, "expected C×H×W input"))?;
    let (ho, wo) = spec
        .output_hw(h, w)
        .ok_or_else(|| Error::shape(layer, "input smaller than kernel"))?;
    let out_shape = [spec.out_channels, ho, wo];
    if grad_out.shape() != out_shape || output.shape() != out_shape {
        return Err(Error::shape(
            layer,
            format!("upstream gradient {:?}, expected {out_shape:?}", grad_out.shape()),
        ));
    }
    grad_out.ensure_finite(&format!("gradient into {layer}"))?;
    let k = c * spec.kernel.0 * spec.kernel.1;
    let p = ho * wo;
    let cout = spec.out_channels;

    let grad_pre: Vec<T> = match spec.activation {
        Activation::Relu => grad_out
            .data()
            .iter()
            .zip(output.data())
            .map(|(&g, &y)| if y > T::zero() { g } else { T::zero() })
            .collect(),
        Activation::None => grad_out.data().to_vec(),
    };

    let bias = spec.has_bias.then(|| {
        let sums = (0..cout).map(|o| grad_pre[o * p..(o + 1) * p].iter().copied().sum()).collect();
        Tensor::vector(sums)
    });

    let mut grad_w = vec![T::zero(); cout * k];
    let mut grad_cols = vec![T::zero(); k * p];
    let grad_in = if spec.is_pointwise() {
        // dW = dY · Xᵀ, dX = Wᵀ · dY
        T::gemm(cout, p, k, T::one(), &grad_pre, p as isize, 1, input.data(), 1, p as isize, T::zero(), &mut grad_w, k as isize, 1);
        T::gemm(k, cout, p, T::one(), weight.data(), 1, k as isize, &grad_pre, p as isize, 1, T::zero(), &mut grad_cols, p as isize, 1);
        grad_cols
    } else {
        let cols = im2col(input.data(), c, h, w, spec, ho, wo);
        T::gemm(cout, p, k, T::one(), &grad_pre, p as isize, 1, &cols, 1, p as isize, T::zero(), &mut grad_w, k as isize, 1);
        T::gemm(k, cout, p, T::one(), weight.data(), 1, k as isize, &grad_pre, p as isize, 1, T::zero(), &mut grad_cols, p as isize, 1);
        col2im(&grad_cols, c, h, w, spec, ho, wo)
    };

    Ok(ConvGrads {
        input: Tensor::new(&[c, h, w], grad_in)?,
        weight: Tensor::new(&spec.weight_shape(), grad_w)?,
        bias,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    /// Six nested loops straight from the definition of cross-correlation.
    fn naive_conv(input: &Tensor<f64>, spec: &ConvSpec, weight: &Tensor<f64>, bias: &Tensor<f64>) -> Vec<f64> {
        let (c, h, w) = input.chw().unwrap();
        let (ho, wo) = spec.output_hw(h, w).unwrap();
        let (kh, kw) = spec.kernel;
        let mut out = vec![0.0; spec.out_channels * ho * wo];
        for o in 0..spec.out_channels {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = bias.data()[o];
                    for ci in 0..c {
                        for ki in 0..kh {
                            for kj in 0..kw {
                                let iy = (oy * spec.stride + ki) as isize - spec.padding.0 as isize;
                                let ix = (ox * spec.stride + kj) as isize - spec.padding.1 as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                    acc += weight.data()[((o * c + ci) * kh + ki) * kw + kj]
                                        * input.data()[(ci * h + iy as usize) * w + ix as usize];
                                }
                            }
                        }
                    }
                    out[(o * ho + oy) * wo + ox] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn matches_nested_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let spec = ConvSpec {
            activation: Activation::None,
            ..ConvSpec::conv3x3_relu(2, 3)
        };
        let x = random(&[2, 5, 5], &mut rng);
        let wt = random(&spec.weight_shape(), &mut rng);
        let b = random(&[3], &mut rng);
        let y = conv2d("test", &x, &spec, &wt, Some(&b)).unwrap();
        assert_eq!(y.shape(), &[3, 5, 5]);
        for (a, e) in y.data().iter().zip(naive_conv(&x, &spec, &wt, &b)) {
            assert!((a - e).abs() <= 1e-12, "{a} vs {e}");
        }
    }

    #[test]
    fn strided_unpadded_matches_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let spec = ConvSpec {
            in_channels: 2,
            out_channels: 2,
            kernel: (2, 3),
            padding: (0, 1),
            stride: 2,
            has_bias: true,
            activation: Activation::None,
        };
        let x = random(&[2, 7, 6], &mut rng);
        let wt = random(&spec.weight_shape(), &mut rng);
        let b = random(&[2], &mut rng);
        let y = conv2d("test", &x, &spec, &wt, Some(&b)).unwrap();
        for (a, e) in y.data().iter().zip(naive_conv(&x, &spec, &wt, &b)) {
            assert!((a - e).abs() <= 1e-12);
        }
    }

    #[test]
    fn zero_input_gives_zero_output() {
        let spec = ConvSpec {
            activation: Activation::None,
            ..ConvSpec::conv3x3_relu(1, 1)
        };
        let x = Tensor::<f64>::zeros(&[1, 3, 3]);
        let wt = Tensor::full(&spec.weight_shape(), 0.7);
        let b = Tensor::zeros(&[1]);
        let y = conv2d("test", &x, &spec, &wt, Some(&b)).unwrap();
        assert_eq!(y.shape(), &[1, 3, 3]);
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_channel_mismatch_naming_layer() {
        let spec = ConvSpec::conv3x3_relu(3, 4);
        let x = Tensor::<f32>::zeros(&[2, 4, 4]);
        let err = conv2d("Down_Conv_1_1", &x, &spec, &Tensor::zeros(&spec.weight_shape()), Some(&Tensor::zeros(&[4])))
            .unwrap_err();
        assert!(err.to_string().contains("Down_Conv_1_1"));
    }

    #[test]
    fn rejects_non_finite_input() {
        let spec = ConvSpec::conv1x1(1, 1);
        let mut x = Tensor::<f32>::zeros(&[1, 2, 2]);
        x.data_mut()[1] = f32::NAN;
        assert!(matches!(
            conv2d("k", &x, &spec, &Tensor::zeros(&spec.weight_shape()), Some(&Tensor::zeros(&[1]))),
            Err(Error::NonFinite { .. })
        ));
    }

    #[test]
    fn linear_in_input_without_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let spec = ConvSpec {
            has_bias: false,
            activation: Activation::None,
            ..ConvSpec::conv3x3_relu(2, 2)
        };
        let wt = random(&spec.weight_shape(), &mut rng);
        let x = random(&[2, 4, 4], &mut rng);
        let y = random(&[2, 4, 4], &mut rng);
        let (a, b) = (0.7, -1.3);
        let mut mix = x.map(|v| a * v);
        mix.axpy(b, &y);
        let lhs = conv2d("t", &mix, &spec, &wt, None).unwrap();
        let fx = conv2d("t", &x, &spec, &wt, None).unwrap();
        let fy = conv2d("t", &y, &spec, &wt, None).unwrap();
        for ((l, u), v) in lhs.data().iter().zip(fx.data()).zip(fy.data()) {
            assert!((l - (a * u + b * v)).abs() <= 1e-10);
        }
    }
}
