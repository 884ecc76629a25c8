use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Numerically shifted softmax of a slice.
pub fn softmax_slice<T: Real>(x: &[T]) -> Vec<T> {
    let max = x.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = x.iter().map(|&v| (v - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Backward of softmax given its output `y` and upstream gradient `g`:
/// `dx = y ⊙ (g − ⟨g, y⟩)`.
pub fn softmax_slice_backward<T: Real>(y: &[T], g: &[T]) -> Vec<T> {
    let dot: T = y.iter().zip(g).map(|(&a, &b)| a * b).sum();
    y.iter().zip(g).map(|(&yi, &gi)| yi * (gi - dot)).collect()
}

/// Softmax along `axis` of an arbitrary-rank tensor.
pub fn softmax<T: Real>(input: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    let shape = input.shape();
    if axis >= shape.len() {
        return Err(Error::shape("softmax", format!("axis {axis} out of range for {shape:?}")));
    }
    input.ensure_finite("softmax input")?;
    let n = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let x = input.data();
    let mut out = vec![T::zero(); x.len()];
    let mut lane = vec![T::zero(); n];
    for o in 0..outer {
        for i in 0..inner {
            for (k, v) in lane.iter_mut().enumerate() {
                *v = x[(o * n + k) * inner + i];
            }
            for (k, v) in softmax_slice(&lane).into_iter().enumerate() {
                out[(o * n + k) * inner + i] = v;
            }
        }
    }
    Tensor::new(shape, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_input_gives_uniform_weights() {
        let y = softmax_slice(&[0.37f64; 128]);
        assert!(y.iter().all(|&v| (v - 1.0 / 128.0).abs() < 1e-15));
    }

    #[test]
    fn analytic_pair() {
        let y = softmax_slice(&[0.0f64, 3.0f64.ln()]);
        assert!((y[0] - 0.25).abs() < 1e-15);
        assert!((y[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn matches_direct_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..7).map(|_| rng.random_range(-3.0..3.0)).collect();
        let denom: f64 = x.iter().map(|v| v.exp()).sum();
        for (y, xi) in softmax_slice(&x).iter().zip(&x) {
            assert!((y - xi.exp() / denom).abs() < 1e-15);
        }
    }

    #[test]
    fn axis_selects_normalisation_direction() {
        let t = Tensor::<f64>::new(&[2, 3], vec![1.0, 2.0, 3.0, -1.0, 0.0, 4.0]).unwrap();
        let rows = softmax(&t, 1).unwrap();
        for r in 0..2 {
            let s: f64 = rows.data()[r * 3..r * 3 + 3].iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        let cols = softmax(&t, 0).unwrap();
        for c in 0..3 {
            assert!((cols.data()[c] + cols.data()[3 + c] - 1.0).abs() < 1e-12);
        }
        assert!(softmax(&t, 2).is_err());
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid(0.0f64), 0.5);
        assert!(sigmoid(-800.0f64) >= 0.0);
        assert!(sigmoid(800.0f64) <= 1.0);
    }
}
