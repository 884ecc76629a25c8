use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// `y = W x + b` with `W` of shape `D_out×D_in`.
pub fn linear<T: Real>(layer: &str, input: &[T], weight: &Tensor<T>, bias: Option<&Tensor<T>>) -> Result<Vec<T>> {
    let (d_out, d_in) = match weight.shape() {
        [o, i] => (*o, *i),
        s => return Err(Error::shape(layer, format!("weight must be 2-D, got {s:?}"))),
    };
    if input.len() != d_in {
        return Err(Error::shape(layer, format!("input length {} vs {d_in}", input.len())));
    }
    if let Some(b) = bias {
        if b.shape() != [d_out] {
            return Err(Error::shape(layer, format!("bias {:?} vs {d_out}", b.shape())));
        }
    }
    let mut out = match bias {
        Some(b) => b.data().to_vec(),
        None => vec![T::zero(); d_out],
    };
    T::gemm(d_out, d_in, 1, T::one(), weight.data(), d_in as isize, 1, input, 1, 1, T::one(), &mut out, 1, 1);
    Ok(out)
}

pub struct LinearGrads<T> {
    pub input: Vec<T>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

pub fn linear_backward<T: Real>(input: &[T], weight: &Tensor<T>, grad_out: &[T]) -> LinearGrads<T> {
    let (d_out, d_in) = (weight.shape()[0], weight.shape()[1]);
    let mut gw = vec![T::zero(); d_out * d_in];
    for (o, &g) in grad_out.iter().enumerate() {
        for (w, &x) in gw[o * d_in..(o + 1) * d_in].iter_mut().zip(input) {
            *w = g * x;
        }
    }
    let mut gx = vec![T::zero(); d_in];
    T::gemm(d_in, d_out, 1, T::one(), weight.data(), 1, d_in as isize, grad_out, 1, 1, T::zero(), &mut gx, 1, 1);
    LinearGrads {
        input: gx,
        weight: Tensor::new(&[d_out, d_in], gw).expect("shape"),
        bias: Tensor::vector(grad_out.to_vec()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_map() {
        let x: Vec<f64> = (0..128).map(|i| i as f64 * 0.1).collect();
        let eye = Tensor::from_fn(&[128, 128], |k| if k / 128 == k % 128 { 1.0 } else { 0.0 });
        let y = linear("Linear_i", &x, &eye, Some(&Tensor::zeros(&[128]))).unwrap();
        assert_eq!(y.len(), 128);
        assert_eq!(y, x);
    }

    #[test]
    fn matches_dot_product_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let w = Tensor::<f64>::from_fn(&[3, 4], |_| rng.random_range(-1.0..1.0));
        let b = Tensor::<f64>::from_fn(&[3], |_| rng.random_range(-1.0..1.0));
        let x: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y = linear("l", &x, &w, Some(&b)).unwrap();
        for o in 0..3 {
            let e: f64 = b.data()[o] + (0..4).map(|i| w.data()[o * 4 + i] * x[i]).sum::<f64>();
            assert!((y[o] - e).abs() < 1e-14);
        }
    }

    #[test]
    fn length_mismatch_rejected() {
        let w = Tensor::<f32>::zeros(&[3, 4]);
        assert!(linear("l", &[0.0; 5], &w, None).is_err());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let w = Tensor::<f64>::from_fn(&[3, 4], |_| rng.random_range(-1.0..1.0));
        let x: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let g: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let loss = |x: &[f64], w: &Tensor<f64>| -> f64 {
            linear("l", x, w, None).unwrap().iter().zip(&g).map(|(a, b)| a * b).sum()
        };
        let grads = linear_backward(&x, &w, &g);
        let h = 1e-6;
        for i in 0..4 {
            let mut xp = x.clone();
            xp[i] += h;
            let mut xm = x.clone();
            xm[i] -= h;
            let fd = (loss(&xp, &w) - loss(&xm, &w)) / (2.0 * h);
            assert!((fd - grads.input[i]).abs() < 1e-8);
        }
        for k in 0..12 {
            let mut wp = w.clone();
            wp.data_mut()[k] += h;
            let mut wm = w.clone();
            wm.data_mut()[k] -= h;
            let fd = (loss(&x, &wp) - loss(&x, &wm)) / (2.0 * h);
            assert!((fd - grads.weight.data()[k]).abs() < 1e-8);
        }
    }
}
