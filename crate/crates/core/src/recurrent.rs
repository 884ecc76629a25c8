//! The temporal feature extractor inside the attention module: a single-layer
//! LSTM cell, and a GRU cell as the alternative.

use crate::error::Result;
use crate::nn::{linear, linear_backward, sigmoid, ParamStore};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct RecurrentState<T> {
    pub h: Vec<T>,
    /// Cell state. Stays zero for the GRU.
    pub c: Vec<T>,
}

impl<T: Real> RecurrentState<T> {
    pub fn zeros(hidden: usize) -> Self {
        Self {
            h: vec![T::zero(); hidden],
            c: vec![T::zero(); hidden],
        }
    }
}

/// Input map, recurrent map and bias of one gate.
#[derive(Debug, Clone, Copy)]
pub struct GateParams<'a, T> {
    pub input: &'a Tensor<T>,
    pub recurrent: &'a Tensor<T>,
    pub bias: &'a Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct GateGrads<T> {
    pub input: Tensor<T>,
    pub recurrent: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<'a, T: Real> GateParams<'a, T> {
    pub fn from_store(store: &'a ParamStore<T>, prefix: &str) -> Result<Self> {
        Ok(Self {
            input: store.get(&format!("{prefix}.input"))?,
            recurrent: store.get(&format!("{prefix}.recurrent"))?,
            bias: store.get(&format!("{prefix}.bias"))?,
        })
    }

    /// `b + P x + Q h`
    fn preactivation(&self, name: &str, x: &[T], h: &[T]) -> Result<Vec<T>> {
        let mut pre = linear(name, x, self.input, Some(self.bias))?;
        let rec = linear(name, h, self.recurrent, None)?;
        pre.iter_mut().zip(rec).for_each(|(a, b)| *a += b);
        Ok(pre)
    }

    /// Gradients of `b + P x + Q h` given the upstream gradient of the
    /// pre-activation. Adds the input/hidden gradients into `dx`/`dh`.
    fn backward(&self, x: &[T], h: &[T], dpre: &[T], dx: &mut [T], dh: &mut [T]) -> GateGrads<T> {
        let through_x = linear_backward(x, self.input, dpre);
        let through_h = linear_backward(h, self.recurrent, dpre);
        dx.iter_mut().zip(&through_x.input).for_each(|(a, &b)| *a += b);
        dh.iter_mut().zip(&through_h.input).for_each(|(a, &b)| *a += b);
        GateGrads {
            input: through_x.weight,
            recurrent: through_h.weight,
            bias: through_x.bias,
        }
    }
}

impl<T: Real> GateGrads<T> {
    pub fn accumulate_into(&self, store: &mut ParamStore<T>, prefix: &str) -> Result<()> {
        store.accumulate(&format!("{prefix}.input"), &self.input)?;
        store.accumulate(&format!("{prefix}.recurrent"), &self.recurrent)?;
        store.accumulate(&format!("{prefix}.bias"), &self.bias)
    }
}

pub const LSTM_GATES: [&str; 4] = ["forget", "input", "cell", "output"];
pub const GRU_GATES: [&str; 3] = ["update", "reset", "candidate"];

#[derive(Debug, Clone, Copy)]
pub struct LstmParams<'a, T> {
    pub forget: GateParams<'a, T>,
    pub input: GateParams<'a, T>,
    pub cell: GateParams<'a, T>,
    pub output: GateParams<'a, T>,
}

impl<'a, T: Real> LstmParams<'a, T> {
    pub fn from_store(store: &'a ParamStore<T>, prefix: &str) -> Result<Self> {
        Ok(Self {
            forget: GateParams::from_store(store, &format!("{prefix}.forget"))?,
            input: GateParams::from_store(store, &format!("{prefix}.input"))?,
            cell: GateParams::from_store(store, &format!("{prefix}.cell"))?,
            output: GateParams::from_store(store, &format!("{prefix}.output"))?,
        })
    }
}

/// Everything the LSTM backward pass needs from one step.
#[derive(Debug, Clone)]
pub struct LstmCache<T> {
    pub x: Vec<T>,
    pub h_prev: Vec<T>,
    pub c_prev: Vec<T>,
    pub f: Vec<T>,
    pub i: Vec<T>,
    pub candidate: Vec<T>,
    pub o: Vec<T>,
    pub c: Vec<T>,
    pub tanh_c: Vec<T>,
}

pub fn lstm_step<T: Real>(x: &[T], state: &RecurrentState<T>, p: &LstmParams<'_, T>) -> Result<(RecurrentState<T>, LstmCache<T>)> {
    let f: Vec<T> = p.forget.preactivation("LSTM.forget", x, &state.h)?.into_iter().map(sigmoid).collect();
    let i: Vec<T> = p.input.preactivation("LSTM.input", x, &state.h)?.into_iter().map(sigmoid).collect();
    let candidate: Vec<T> = p.cell.preactivation("LSTM.cell", x, &state.h)?.into_iter().map(T::tanh).collect();
    let o: Vec<T> = p.output.preactivation("LSTM.output", x, &state.h)?.into_iter().map(sigmoid).collect();
    let c: Vec<T> = (0..f.len()).map(|k| f[k] * state.c[k] + i[k] * candidate[k]).collect();
    let tanh_c: Vec<T> = c.iter().map(|v| v.tanh()).collect();
    let h: Vec<T> = o.iter().zip(&tanh_c).map(|(&a, &b)| a * b).collect();
    let next = RecurrentState { h, c: c.clone() };
    let cache = LstmCache {
        x: x.to_vec(),
        h_prev: state.h.clone(),
        c_prev: state.c.clone(),
        f,
        i,
        candidate,
        o,
        c,
        tanh_c,
    };
    Ok((next, cache))
}

/// Gradients flowing out of one LSTM step.
#[derive(Debug, Clone)]
pub struct LstmStepGrads<T> {
    pub x: Vec<T>,
    pub h_prev: Vec<T>,
    pub c_prev: Vec<T>,
    /// In gate order forget, input, cell, output.
    pub gates: [GateGrads<T>; 4],
}

pub fn lstm_step_backward<T: Real>(cache: &LstmCache<T>, p: &LstmParams<'_, T>, dh: &[T], dc: &[T]) -> LstmStepGrads<T> {
    let n = cache.c.len();
    let one = T::one();
    let mut d_f = vec![T::zero(); n];
    let mut d_i = vec![T::zero(); n];
    let mut d_cand = vec![T::zero(); n];
    let mut d_o = vec![T::zero(); n];
    let mut dc_prev = vec![T::zero(); n];
    for k in 0..n {
        let tc = cache.tanh_c[k];
        let dct = dc[k] + dh[k] * cache.o[k] * (one - tc * tc);
        let (f, i, g, o) = (cache.f[k], cache.i[k], cache.candidate[k], cache.o[k]);
        d_o[k] = dh[k] * tc * o * (one - o);
        d_f[k] = dct * cache.c_prev[k] * f * (one - f);
        d_i[k] = dct * g * i * (one - i);
        d_cand[k] = dct * i * (one - g * g);
        dc_prev[k] = dct * f;
    }
    let mut dx = vec![T::zero(); cache.x.len()];
    let mut dh_prev = vec![T::zero(); n];
    let gf = p.forget.backward(&cache.x, &cache.h_prev, &d_f, &mut dx, &mut dh_prev);
    let gi = p.input.backward(&cache.x, &cache.h_prev, &d_i, &mut dx, &mut dh_prev);
    let gc = p.cell.backward(&cache.x, &cache.h_prev, &d_cand, &mut dx, &mut dh_prev);
    let go = p.output.backward(&cache.x, &cache.h_prev, &d_o, &mut dx, &mut dh_prev);
    LstmStepGrads {
        x: dx,
        h_prev: dh_prev,
        c_prev: dc_prev,
        gates: [gf, gi, gc, go],
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GruParams<'a, T> {
    pub update: GateParams<'a, T>,
    pub reset: GateParams<'a, T>,
    pub candidate: GateParams<'a, T>,
}

impl<'a, T: Real> GruParams<'a, T> {
    pub fn from_store(store: &'a ParamStore<T>, prefix: &str) -> Result<Self> {
        Ok(Self {
            update: GateParams::from_store(store, &format!("{prefix}.update"))?,
            reset: GateParams::from_store(store, &format!("{prefix}.reset"))?,
            candidate: GateParams::from_store(store, &format!("{prefix}.candidate"))?,
        })
    }
}

#[derive(Debug, Clone)]
pub struct GruCache<T> {
    pub x: Vec<T>,
    pub h_prev: Vec<T>,
    pub z: Vec<T>,
    pub r: Vec<T>,
    pub reset_h: Vec<T>,
    pub n: Vec<T>,
}

/// Gated recurrent unit:
/// `z = σ(..)`, `r = σ(..)`, `n = tanh(b + P x + Q (r ⊙ h))`,
/// `h' = (1 − z) ⊙ h + z ⊙ n`.
pub fn gru_step<T: Real>(x: &[T], h_prev: &[T], p: &GruParams<'_, T>) -> Result<(Vec<T>, GruCache<T>)> {
    let z: Vec<T> = p.update.preactivation("GRU.update", x, h_prev)?.into_iter().map(sigmoid).collect();
    let r: Vec<T> = p.reset.preactivation("GRU.reset", x, h_prev)?.into_iter().map(sigmoid).collect();
    let reset_h: Vec<T> = r.iter().zip(h_prev).map(|(&a, &b)| a * b).collect();
    let n: Vec<T> = p
        .candidate
        .preactivation("GRU.candidate", x, &reset_h)?
        .into_iter()
        .map(T::tanh)
        .collect();
    let h: Vec<T> = (0..n.len()).map(|k| (T::one() - z[k]) * h_prev[k] + z[k] * n[k]).collect();
    Ok((
        h,
        GruCache {
            x: x.to_vec(),
            h_prev: h_prev.to_vec(),
            z,
            r,
            reset_h,
            n,
        },
    ))
}

#[derive(Debug, Clone)]
pub struct GruStepGrads<T> {
    pub x: Vec<T>,
    pub h_prev: Vec<T>,
    /// In gate order update, reset, candidate.
    pub gates: [GateGrads<T>; 3],
}

pub fn gru_step_backward<T: Real>(cache: &GruCache<T>, p: &GruParams<'_, T>, dh: &[T]) -> GruStepGrads<T> {
    let n = cache.n.len();
    let one = T::one();
    let mut dx = vec![T::zero(); cache.x.len()];
    let mut dh_prev: Vec<T> = (0..n).map(|k| dh[k] * (one - cache.z[k])).collect();
    let d_n: Vec<T> = (0..n)
        .map(|k| dh[k] * cache.z[k] * (one - cache.n[k] * cache.n[k]))
        .collect();
    let d_z: Vec<T> = (0..n)
        .map(|k| dh[k] * (cache.n[k] - cache.h_prev[k]) * cache.z[k] * (one - cache.z[k]))
        .collect();

    // candidate gate sees r ⊙ h as its recurrent input
    let mut d_reset_h = vec![T::zero(); n];
    let gn = p.candidate.backward(&cache.x, &cache.reset_h, &d_n, &mut dx, &mut d_reset_h);
    let d_r: Vec<T> = (0..n)
        .map(|k| d_reset_h[k] * cache.h_prev[k] * cache.r[k] * (one - cache.r[k]))
        .collect();
    for k in 0..n {
        dh_prev[k] += d_reset_h[k] * cache.r[k];
    }
    let gz = p.update.backward(&cache.x, &cache.h_prev, &d_z, &mut dx, &mut dh_prev);
    let gr = p.reset.backward(&cache.x, &cache.h_prev, &d_r, &mut dx, &mut dh_prev);
    GruStepGrads {
        x: dx,
        h_prev: dh_prev,
        gates: [gz, gr, gn],
    }
}

/// Trainable scalars in a single-layer LSTM with equal input and hidden size.
pub fn lstm_param_count(hidden: usize) -> usize {
    4 * (hidden * hidden + hidden * hidden + hidden)
}

pub fn gru_param_count(hidden: usize) -> usize {
    3 * (hidden * hidden + hidden * hidden + hidden)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn store_with(prefix: &str, gates: &[&str], hidden: usize, mut fill: impl FnMut() -> f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        for g in gates {
            s.insert(format!("{prefix}.{g}.input"), Tensor::from_fn(&[hidden, hidden], |_| fill())).unwrap();
            s.insert(format!("{prefix}.{g}.recurrent"), Tensor::from_fn(&[hidden, hidden], |_| fill())).unwrap();
            s.insert(format!("{prefix}.{g}.bias"), Tensor::from_fn(&[hidden], |_| fill())).unwrap();
        }
        s
    }

    #[test]
    fn zero_lstm_from_zero_state() {
        let s = store_with("LSTM", &LSTM_GATES, 4, || 0.0);
        let p = LstmParams::from_store(&s, "LSTM").unwrap();
        let (next, cache) = lstm_step(&[0.0; 4], &RecurrentState::zeros(4), &p).unwrap();
        assert!(cache.f.iter().chain(&cache.i).chain(&cache.o).all(|&v| v == 0.5));
        assert!(cache.candidate.iter().all(|&v| v == 0.0));
        assert!(next.c.iter().chain(&next.h).all(|&v| v == 0.0));
    }

    #[test]
    fn hidden_one_hand_calculation() {
        // P = (0.5, -1, 2, 1), Q = (0.1, 0.2, -0.3, 0.4), b = (0, 0.5, 0, -0.5)
        // x = 1, h = 0.5, c = -0.2
        let mut s = ParamStore::<f64>::new();
        let vals = [
            ("forget", 0.5, 0.1, 0.0),
            ("input", -1.0, 0.2, 0.5),
            ("cell", 2.0, -0.3, 0.0),
            ("output", 1.0, 0.4, -0.5),
        ];
        for (g, pv, qv, bv) in vals {
            s.insert(format!("LSTM.{g}.input"), Tensor::new(&[1, 1], vec![pv]).unwrap()).unwrap();
            s.insert(format!("LSTM.{g}.recurrent"), Tensor::new(&[1, 1], vec![qv]).unwrap()).unwrap();
            s.insert(format!("LSTM.{g}.bias"), Tensor::vector(vec![bv])).unwrap();
        }
        let p = LstmParams::from_store(&s, "LSTM").unwrap();
        let state = RecurrentState { h: vec![0.5], c: vec![-0.2] };
        let (next, _) = lstm_step(&[1.0], &state, &p).unwrap();

        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let f = sig(0.0 + 0.5 * 1.0 + 0.1 * 0.5); // σ(0.55)
        let i = sig(0.5 - 1.0 + 0.2 * 0.5); // σ(-0.4)
        let g = (0.0 + 2.0 - 0.3 * 0.5f64).tanh(); // tanh(1.85)
        let o = sig(-0.5 + 1.0 + 0.4 * 0.5); // σ(0.7)
        let c = f * -0.2 + i * g;
        let h = o * c.tanh();
        assert!((next.c[0] - c).abs() < 1e-14);
        assert!((next.h[0] - h).abs() < 1e-14);
    }

    #[test]
    fn hidden_output_is_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = store_with("LSTM", &LSTM_GATES, 8, || rng.random_range(-3.0..3.0));
        let p = LstmParams::from_store(&s, "LSTM").unwrap();
        let mut state = RecurrentState::zeros(8);
        for _ in 0..20 {
            let x: Vec<f64> = (0..8).map(|_| rng.random_range(-50.0..50.0)).collect();
            state = lstm_step(&x, &state, &p).unwrap().0;
            assert!(state.h.iter().all(|v| v.abs() < 1.0));
        }
    }

    #[test]
    fn large_forget_bias_retains_memory() {
        let mut s = store_with("LSTM", &LSTM_GATES, 3, || 0.0);
        s.param_mut("LSTM.forget.bias").unwrap().value = Tensor::full(&[3], 20.0);
        s.param_mut("LSTM.input.bias").unwrap().value = Tensor::full(&[3], -20.0);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for name in ["LSTM.cell.input", "LSTM.output.input", "LSTM.cell.recurrent"] {
            s.param_mut(name).unwrap().value = Tensor::from_fn(&[3, 3], |_| rng.random_range(-1.0..1.0));
        }
        let p = LstmParams::from_store(&s, "LSTM").unwrap();
        let state = RecurrentState { h: vec![0.3, -0.1, 0.2], c: vec![0.7, -1.2, 0.05] };
        let (next, _) = lstm_step(&[0.4, -0.9, 1.1], &state, &p).unwrap();
        for (a, b) in next.c.iter().zip(&state.c) {
            assert!((a - b).abs() < 1e-3);
        }
    }

    #[test]
    fn zero_gru_from_zero_state() {
        let s = store_with("GRU", &GRU_GATES, 4, || 0.0);
        let p = GruParams::from_store(&s, "GRU").unwrap();
        let (h, _) = gru_step(&[0.0; 4], &[0.0; 4], &p).unwrap();
        assert!(h.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gru_hidden_one_hand_calculation() {
        let mut s = ParamStore::<f64>::new();
        for (g, pv, qv, bv) in [("update", 1.0, -0.5, 0.2), ("reset", 0.3, 0.8, 0.0), ("candidate", -1.5, 2.0, 0.1)] {
            s.insert(format!("GRU.{g}.input"), Tensor::new(&[1, 1], vec![pv]).unwrap()).unwrap();
            s.insert(format!("GRU.{g}.recurrent"), Tensor::new(&[1, 1], vec![qv]).unwrap()).unwrap();
            s.insert(format!("GRU.{g}.bias"), Tensor::vector(vec![bv])).unwrap();
        }
        let p = GruParams::from_store(&s, "GRU").unwrap();
        let (x, h) = (0.6, -0.4);
        let (out, _) = gru_step(&[x], &[h], &p).unwrap();
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let z = sig(0.2 + 1.0 * x - 0.5 * h);
        let r = sig(0.3 * x + 0.8 * h);
        let n = (0.1 - 1.5 * x + 2.0 * (r * h)).tanh();
        let expected = (1.0 - z) * h + z * n;
        assert!((out[0] - expected).abs() < 1e-14);
    }

    #[test]
    fn gru_to_lstm_parameter_ratio() {
        assert_eq!(lstm_param_count(128), 4 * (128 * 128 * 2 + 128));
        assert_eq!(gru_param_count(128) * 4, lstm_param_count(128) * 3);
    }

    fn fd_check(f: &dyn Fn(&ParamStore<f64>, &[f64]) -> f64, s: &ParamStore<f64>, x: &[f64], grads: &ParamStore<f64>, dx: &[f64]) {
        let h = 1e-6;
        for p in s.iter() {
            for k in 0..p.value.numel() {
                let mut sp = s.clone();
                sp.param_mut(&p.name).unwrap().value.data_mut()[k] += h;
                let mut sm = s.clone();
                sm.param_mut(&p.name).unwrap().value.data_mut()[k] -= h;
                let fd = (f(&sp, x) - f(&sm, x)) / (2.0 * h);
                let an = grads.param(&p.name).unwrap().grad.data()[k];
                assert!((fd - an).abs() <= 1e-6 * (1.0 + fd.abs()), "{} [{k}]: {fd} vs {an}", p.name);
            }
        }
        for k in 0..x.len() {
            let mut xp = x.to_vec();
            xp[k] += h;
            let mut xm = x.to_vec();
            xm[k] -= h;
            let fd = (f(s, &xp) - f(s, &xm)) / (2.0 * h);
            assert!((fd - dx[k]).abs() <= 1e-6 * (1.0 + fd.abs()));
        }
    }

    #[test]
    fn lstm_three_step_gradients_match_finite_differences() {
        let hidden = 3;
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let s = store_with("LSTM", &LSTM_GATES, hidden, || rng.random_range(-0.8..0.8));
        let xs: Vec<f64> = (0..3 * hidden).map(|_| rng.random_range(-1.0..1.0)).collect();
        let weights: Vec<f64> = (0..hidden).map(|_| rng.random_range(-1.0..1.0)).collect();
        let loss = |s: &ParamStore<f64>, xs: &[f64]| -> f64 {
            let p = LstmParams::from_store(s, "LSTM").unwrap();
            let mut st = RecurrentState::zeros(hidden);
            for t in 0..3 {
                st = lstm_step(&xs[t * hidden..(t + 1) * hidden], &st, &p).unwrap().0;
            }
            st.h.iter().zip(&weights).map(|(a, b)| a * b).sum::<f64>() + st.c.iter().sum::<f64>() * 0.3
        };
        let p = LstmParams::from_store(&s, "LSTM").unwrap();
        let mut st = RecurrentState::zeros(hidden);
        let mut caches = Vec::new();
        for t in 0..3 {
            let (n, c) = lstm_step(&xs[t * hidden..(t + 1) * hidden], &st, &p).unwrap();
            caches.push(c);
            st = n;
        }
        let mut grads = s.clone();
        grads.zero_grad();
        let mut dh = weights.clone();
        let mut dc = vec![0.3; hidden];
        let mut dx = vec![0.0; 3 * hidden];
        for t in (0..3).rev() {
            let g = lstm_step_backward(&caches[t], &p, &dh, &dc);
            for (gate, gg) in LSTM_GATES.iter().zip(&g.gates) {
                gg.accumulate_into(&mut grads, &format!("LSTM.{gate}")).unwrap();
            }
            dx[t * hidden..(t + 1) * hidden].copy_from_slice(&g.x);
            dh = g.h_prev;
            dc = g.c_prev;
        }
        fd_check(&loss, &s, &xs, &grads, &dx);
    }

    #[test]
    fn gru_three_step_gradients_match_finite_differences() {
        let hidden = 3;
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let s = store_with("GRU", &GRU_GATES, hidden, || rng.random_range(-0.8..0.8));
        let xs: Vec<f64> = (0..3 * hidden).map(|_| rng.random_range(-1.0..1.0)).collect();
        let weights: Vec<f64> = (0..hidden).map(|_| rng.random_range(-1.0..1.0)).collect();
        let h0: Vec<f64> = (0..hidden).map(|_| rng.random_range(-0.5..0.5)).collect();
        let loss = |s: &ParamStore<f64>, xs: &[f64]| -> f64 {
            let p = GruParams::from_store(s, "GRU").unwrap();
            let mut h = h0.clone();
            for t in 0..3 {
                h = gru_step(&xs[t * hidden..(t + 1) * hidden], &h, &p).unwrap().0;
            }
            h.iter().zip(&weights).map(|(a, b)| a * b).sum()
        };
        let p = GruParams::from_store(&s, "GRU").unwrap();
        let mut h = h0.clone();
        let mut caches = Vec::new();
        for t in 0..3 {
            let (n, c) = gru_step(&xs[t * hidden..(t + 1) * hidden], &h, &p).unwrap();
            caches.push(c);
            h = n;
        }
        let mut grads = s.clone();
        grads.zero_grad();
        let mut dh = weights.clone();
        let mut dx = vec![0.0; 3 * hidden];
        for t in (0..3).rev() {
            let g = gru_step_backward(&caches[t], &p, &dh);
            for (gate, gg) in GRU_GATES.iter().zip(&g.gates) {
                gg.accumulate_into(&mut grads, &format!("GRU.{gate}")).unwrap();
            }
            dx[t * hidden..(t + 1) * hidden].copy_from_slice(&g.x);
            dh = g.h_prev;
        }
        fd_check(&loss, &s, &xs, &grads, &dx);
    }
}
