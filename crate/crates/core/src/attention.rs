//! Spatial-temporal attention between encoder and decoder.
//!
//! Per frame `n` the bottleneck is reduced to a vector `x` by a 1×1
//! convolution, then
//!
//! ```text
//! z = U(x) + H(h_{n-1})
//! w = softmax(W(z))          over the flattened positions
//! x̄ = w ⊙ x
//! h_n = F(x̄, h_{n-1})       LSTM or GRU
//! ```
//!
//! and after the last frame `h_N` is reshaped to the bottleneck grid and
//! expanded back to the bottleneck channel count by another 1×1 convolution.
//! `U`, `H`, `W` are scalars (TemAtt), per-position vectors (StAtt) or affine
//! maps (StfcAtt).

use crate::config::{AttentionVariant, ConvLayer, ExtractorKind, ModelConfig};
use crate::error::{Error, Result};
use crate::nn::{conv2d, conv2d_backward, linear, linear_backward, softmax_slice, softmax_slice_backward, ParamStore};
use crate::recurrent::{
    gru_step, gru_step_backward, lstm_step, lstm_step_backward, GruCache, GruParams, LstmCache, LstmParams,
    RecurrentState, GRU_GATES, LSTM_GATES,
};
use crate::tensor::{Real, Tensor};

/// Parameter names of the three attention layers, in the order input map
/// (`U`), hidden map (`H`), attention map (`W`).
pub const ATTENTION_LAYERS: [&str; 3] = ["AttentionLayer_1", "AttentionLayer_2", "AttentionLayer_3"];

/// One of the three learnable maps, borrowed from the parameter store.
#[derive(Debug, Clone, Copy)]
pub enum AttentionMap<'a, T> {
    Scalar(T),
    Vector(&'a [T]),
    Affine { weight: &'a Tensor<T>, bias: &'a Tensor<T> },
}

impl<'a, T: Real> AttentionMap<'a, T> {
    pub fn from_store(store: &'a ParamStore<T>, variant: AttentionVariant, layer: &str) -> Result<Self> {
        let w = store.get(&format!("{layer}.weight"))?;
        Ok(match variant {
            AttentionVariant::TemAtt => Self::Scalar(w.data()[0]),
            AttentionVariant::StAtt => Self::Vector(w.data()),
            AttentionVariant::StfcAtt => Self::Affine {
                weight: w,
                bias: store.get(&format!("{layer}.bias"))?,
            },
        })
    }

    pub fn apply(&self, layer: &str, v: &[T]) -> Result<Vec<T>> {
        match *self {
            Self::Scalar(a) => Ok(v.iter().map(|&x| a * x).collect()),
            Self::Vector(a) => {
                if a.len() != v.len() {
                    return Err(Error::shape(layer, format!("weight length {} vs input {}", a.len(), v.len())));
                }
                Ok(a.iter().zip(v).map(|(&p, &x)| p * x).collect())
            }
            Self::Affine { weight, bias } => linear(layer, v, weight, Some(bias)),
        }
    }

    /// Returns the input gradient plus `(weight grad, optional bias grad)`.
    pub fn backward(&self, v: &[T], g: &[T]) -> (Vec<T>, Tensor<T>, Option<Tensor<T>>) {
        match *self {
            Self::Scalar(a) => {
                let dv = g.iter().map(|&gi| a * gi).collect();
                let da: T = g.iter().zip(v).map(|(&gi, &x)| gi * x).sum();
                (dv, Tensor::vector(vec![da]), None)
            }
            Self::Vector(a) => {
                let dv = a.iter().zip(g).map(|(&p, &gi)| p * gi).collect();
                let da = g.iter().zip(v).map(|(&gi, &x)| gi * x).collect();
                (dv, Tensor::vector(da), None)
            }
            Self::Affine { weight, .. } => {
                let gr = linear_backward(v, weight, g);
                (gr.input, gr.weight, Some(gr.bias))
            }
        }
    }
}

/// The three maps of one variant.
#[derive(Debug, Clone, Copy)]
pub struct AttentionMaps<'a, T> {
    pub input: AttentionMap<'a, T>,
    pub hidden: AttentionMap<'a, T>,
    pub score: AttentionMap<'a, T>,
}

impl<'a, T: Real> AttentionMaps<'a, T> {
    pub fn from_store(store: &'a ParamStore<T>, variant: AttentionVariant) -> Result<Self> {
        Ok(Self {
            input: AttentionMap::from_store(store, variant, ATTENTION_LAYERS[0])?,
            hidden: AttentionMap::from_store(store, variant, ATTENTION_LAYERS[1])?,
            score: AttentionMap::from_store(store, variant, ATTENTION_LAYERS[2])?,
        })
    }
}

/// Intermediates of a single attention step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput<T> {
    pub z: Vec<T>,
    /// Pre-softmax scores `W(z)`.
    pub scores: Vec<T>,
    pub w: Vec<T>,
    pub x_bar: Vec<T>,
}

/// One attention step for frame `frame` (used in diagnostics).
pub fn attention_step<T: Real>(frame: usize, x: &[T], h_prev: &[T], maps: &AttentionMaps<'_, T>) -> Result<StepOutput<T>> {
    if x.len() != h_prev.len() {
        return Err(Error::shape(
            "attention",
            format!("feature length {} vs hidden {}", x.len(), h_prev.len()),
        ));
    }
    let mut z = maps.input.apply(ATTENTION_LAYERS[0], x)?;
    let zh = maps.hidden.apply(ATTENTION_LAYERS[1], h_prev)?;
    z.iter_mut().zip(zh).for_each(|(a, b)| *a += b);
    let scores = maps.score.apply(ATTENTION_LAYERS[2], &z)?;
    if !scores.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite {
            context: format!("attention scores of frame {frame}"),
        });
    }
    let w = softmax_slice(&scores);
    let x_bar = w.iter().zip(x).map(|(&a, &b)| a * b).collect();
    Ok(StepOutput { z, scores, w, x_bar })
}

/// 1×1 convolution of the bottleneck to one channel, flattened row-major.
pub fn reduce_bottleneck<T: Real>(params: &ParamStore<T>, layer: &ConvLayer, x_down: &Tensor<T>) -> Result<Vec<T>> {
    let y = conv2d(
        &layer.name,
        x_down,
        &layer.spec,
        params.get(&format!("{}.weight", layer.name))?,
        Some(params.get(&format!("{}.bias", layer.name))?),
    )?;
    Ok(y.into_data())
}

/// Per-frame attention quantities plus the hidden-state history.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionTrace<T> {
    pub x: Vec<Vec<T>>,
    pub z: Vec<Vec<T>>,
    pub w: Vec<Vec<T>>,
    pub x_bar: Vec<Vec<T>>,
    /// Hidden state after each frame.
    pub h: Vec<Vec<T>>,
    pub final_state: RecurrentState<T>,
    pub x_out: Tensor<T>,
    /// Bottleneck grid the length-`D` vectors fold back onto.
    pub grid: (usize, usize),
}

impl<T: Real> AttentionTrace<T> {
    pub fn frames(&self) -> usize {
        self.w.len()
    }
}

#[derive(Debug, Clone)]
enum StepCache<T> {
    Lstm(LstmCache<T>),
    Gru(GruCache<T>),
}

/// Everything the backward pass needs.
#[derive(Debug, Clone)]
pub struct AttentionCache<T> {
    bottlenecks: Vec<Tensor<T>>,
    reduced: Vec<Tensor<T>>,
    steps: Vec<StepOutput<T>>,
    h_prev: Vec<Vec<T>>,
    extractor: Vec<StepCache<T>>,
    h_map: Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct AttentionModule {
    variant: AttentionVariant,
    extractor: ExtractorKind,
    k_in: ConvLayer,
    k_out: ConvLayer,
    grid: (usize, usize),
}

impl AttentionModule {
    pub fn new(config: &ModelConfig) -> Self {
        Self {
            variant: config.variant,
            extractor: config.extractor,
            k_in: config.attention_in_layer(),
            k_out: config.attention_out_layer(),
            grid: config.bottleneck_hw(),
        }
    }

    pub fn hidden_size(&self) -> usize {
        self.grid.0 * self.grid.1
    }

    /// Run the attention module over `N` bottlenecks starting from `init`.
    pub fn forward<T: Real>(
        &self,
        params: &ParamStore<T>,
        bottlenecks: &[Tensor<T>],
        init: RecurrentState<T>,
    ) -> Result<(AttentionTrace<T>, AttentionCache<T>)> {
        if bottlenecks.is_empty() {
            return Err(Error::InvalidArgument("attention needs at least one frame".into()));
        }
        let d = self.hidden_size();
        if init.h.len() != d || init.c.len() != d {
            return Err(Error::shape("attention", format!("initial state length {} vs {d}", init.h.len())));
        }
        let maps = AttentionMaps::from_store(params, self.variant)?;
        let n = bottlenecks.len();
        let mut trace = AttentionTrace {
            x: Vec::with_capacity(n),
            z: Vec::with_capacity(n),
            w: Vec::with_capacity(n),
            x_bar: Vec::with_capacity(n),
            h: Vec::with_capacity(n),
            final_state: init.clone(),
            x_out: Tensor::zeros(&[1]),
            grid: self.grid,
        };
        let mut cache = AttentionCache {
            bottlenecks: bottlenecks.to_vec(),
            reduced: Vec::with_capacity(n),
            steps: Vec::with_capacity(n),
            h_prev: Vec::with_capacity(n),
            extractor: Vec::with_capacity(n),
            h_map: Tensor::zeros(&[1]),
        };
        let mut state = init;
        for (frame, b) in bottlenecks.iter().enumerate() {
            let x = reduce_bottleneck(params, &self.k_in, b)?;
            let step = attention_step(frame, &x, &state.h, &maps)?;
            let (next, sc) = match self.extractor {
                ExtractorKind::Lstm => {
                    let p = LstmParams::from_store(params, "LSTM")?;
                    let (next, c) = lstm_step(&step.x_bar, &state, &p)?;
                    (next, StepCache::Lstm(c))
                }
                ExtractorKind::Gru => {
                    let p = GruParams::from_store(params, "GRU")?;
                    let (h, c) = gru_step(&step.x_bar, &state.h, &p)?;
                    (
                        RecurrentState {
                            h,
                            c: state.c.clone(),
                        },
                        StepCache::Gru(c),
                    )
                }
            };
            if !next.h.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite {
                    context: format!("hidden state after frame {frame}"),
                });
            }
            trace.x.push(x.clone());
            trace.z.push(step.z.clone());
            trace.w.push(step.w.clone());
            trace.x_bar.push(step.x_bar.clone());
            trace.h.push(next.h.clone());
            cache.reduced.push(Tensor::new(&[1, self.grid.0, self.grid.1], x)?);
            cache.h_prev.push(std::mem::replace(&mut state, next).h);
            cache.steps.push(step);
            cache.extractor.push(sc);
        }
        let h_map = Tensor::new(&[1, self.grid.0, self.grid.1], state.h.clone())?;
        let x_out = conv2d(
            &self.k_out.name,
            &h_map,
            &self.k_out.spec,
            params.get(&format!("{}.weight", self.k_out.name))?,
            Some(params.get(&format!("{}.bias", self.k_out.name))?),
        )?;
        trace.final_state = state;
        trace.x_out = x_out;
        cache.h_map = h_map;
        Ok((trace, cache))
    }

    /// Backpropagate through the unrolled module. Returns the gradient with
    /// respect to each input bottleneck.
    pub fn backward<T: Real>(
        &self,
        params: &mut ParamStore<T>,
        trace: &AttentionTrace<T>,
        cache: &AttentionCache<T>,
        grad_x_out: &Tensor<T>,
    ) -> Result<Vec<Tensor<T>>> {
        let d = self.hidden_size();
        let k_out_w = format!("{}.weight", self.k_out.name);
        let g = conv2d_backward(
            &self.k_out.name,
            &cache.h_map,
            &self.k_out.spec,
            params.get(&k_out_w)?,
            &trace.x_out,
            grad_x_out,
        )?;
        let mut dh = g.input.into_data();
        let mut dc = vec![T::zero(); d];

        // Gradients are collected locally and written to the store at the end
        // so that the borrowed parameter views stay valid.
        let mut map_grads: Vec<(String, Tensor<T>)> = vec![(k_out_w, g.weight)];
        if let Some(b) = g.bias {
            map_grads.push((format!("{}.bias", self.k_out.name), b));
        }
        let mut grad_bottlenecks = vec![Tensor::zeros(&[1]); cache.steps.len()];
        {
            let maps = AttentionMaps::from_store(params, self.variant)?;
            let k_in_w = params.get(&format!("{}.weight", self.k_in.name))?;
            for n in (0..cache.steps.len()).rev() {
                let step = &cache.steps[n];
                let x = &trace.x[n];
                let h_prev = &cache.h_prev[n];
                let dx_bar = match &cache.extractor[n] {
                    StepCache::Lstm(c) => {
                        let p = LstmParams::from_store(params, "LSTM")?;
                        let sg = lstm_step_backward(c, &p, &dh, &dc);
                        for (gate, gg) in LSTM_GATES.iter().zip(sg.gates) {
                            map_grads.push((format!("LSTM.{gate}.input"), gg.input));
                            map_grads.push((format!("LSTM.{gate}.recurrent"), gg.recurrent));
                            map_grads.push((format!("LSTM.{gate}.bias"), gg.bias));
                        }
                        dh = sg.h_prev;
                        dc = sg.c_prev;
                        sg.x
                    }
                    StepCache::Gru(c) => {
                        let p = GruParams::from_store(params, "GRU")?;
                        let sg = gru_step_backward(c, &p, &dh);
                        for (gate, gg) in GRU_GATES.iter().zip(sg.gates) {
                            map_grads.push((format!("GRU.{gate}.input"), gg.input));
                            map_grads.push((format!("GRU.{gate}.recurrent"), gg.recurrent));
                            map_grads.push((format!("GRU.{gate}.bias"), gg.bias));
                        }
                        dh = sg.h_prev;
                        sg.x
                    }
                };
                // x̄ = w ⊙ x
                let dw: Vec<T> = dx_bar.iter().zip(x).map(|(&a, &b)| a * b).collect();
                let mut dx: Vec<T> = dx_bar.iter().zip(&step.w).map(|(&a, &b)| a * b).collect();
                let dscores = softmax_slice_backward(&step.w, &dw);
                let (dz, gw, gb) = maps.score.backward(&step.z, &dscores);
                push_map(&mut map_grads, ATTENTION_LAYERS[2], gw, gb);
                let (dx_u, gw, gb) = maps.input.backward(x, &dz);
                push_map(&mut map_grads, ATTENTION_LAYERS[0], gw, gb);
                let (dh_h, gw, gb) = maps.hidden.backward(h_prev, &dz);
                push_map(&mut map_grads, ATTENTION_LAYERS[1], gw, gb);
                dx.iter_mut().zip(dx_u).for_each(|(a, b)| *a += b);
                dh.iter_mut().zip(dh_h).for_each(|(a, b)| *a += b);

                let gk = conv2d_backward(
                    &self.k_in.name,
                    &cache.bottlenecks[n],
                    &self.k_in.spec,
                    k_in_w,
                    &cache.reduced[n],
                    &Tensor::new(&[1, self.grid.0, self.grid.1], dx)?,
                )?;
                map_grads.push((format!("{}.weight", self.k_in.name), gk.weight));
                if let Some(b) = gk.bias {
                    map_grads.push((format!("{}.bias", self.k_in.name), b));
                }
                grad_bottlenecks[n] = gk.input;
            }
        }
        for (name, grad) in &map_grads {
            params.accumulate(name, grad)?;
        }
        Ok(grad_bottlenecks)
    }
}

fn push_map<T: Real>(out: &mut Vec<(String, Tensor<T>)>, layer: &str, weight: Tensor<T>, bias: Option<Tensor<T>>) {
    out.push((format!("{layer}.weight"), weight));
    if let Some(b) = bias {
        out.push((format!("{layer}.bias"), b));
    }
}

/// Trainable scalars in AttentionLayer_1..3 for a variant at hidden size `d`.
pub fn attention_param_count(variant: AttentionVariant, d: usize) -> usize {
    match variant {
        AttentionVariant::TemAtt => 3,
        AttentionVariant::StAtt => 3 * d,
        AttentionVariant::StfcAtt => 3 * (d * d + d),
    }
}
