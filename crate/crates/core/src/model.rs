//! Sequence-to-one assembly: encode every frame, run the attention module over
//! the bottlenecks, decode the last frame with its own skips.

use crate::attention::{AttentionCache, AttentionModule, AttentionTrace};
use crate::backbone::{Backbone, DecoderCache, EncoderCache};
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::mask::LaneMask;
use crate::nn::ParamStore;
use crate::recurrent::RecurrentState;
use crate::tensor::{Real, Tensor};

/// A forward pass with everything needed for backward and inspection.
#[derive(Debug, Clone)]
pub struct ForwardPass<T> {
    /// `2×H×W`, channel 0 background, channel 1 lane.
    pub logits: Tensor<T>,
    pub trace: AttentionTrace<T>,
    encoders: Vec<EncoderCache<T>>,
    attention: AttentionCache<T>,
    decoder: DecoderCache<T>,
}

impl<T: Real> ForwardPass<T> {
    pub fn encoder(&self, frame: usize) -> &EncoderCache<T> {
        &self.encoders[frame]
    }

    pub fn decoder(&self) -> &DecoderCache<T> {
        &self.decoder
    }
}

#[derive(Debug, Clone)]
pub struct SequenceModel {
    config: ModelConfig,
    backbone: Backbone,
    attention: AttentionModule,
}

impl SequenceModel {
    pub fn new(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config: config.clone(),
            backbone: Backbone::new(config)?,
            attention: AttentionModule::new(config),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn backbone(&self) -> &Backbone {
        &self.backbone
    }

    pub fn validate_frames<T: Real>(&self, frames: &[Tensor<T>]) -> Result<()> {
        let c = &self.config;
        if frames.len() != c.frames {
            return Err(Error::InvalidArgument(format!(
                "sequence has {} frames, model expects {}",
                frames.len(),
                c.frames
            )));
        }
        for (i, f) in frames.iter().enumerate() {
            if f.shape() != [3, c.height, c.width] {
                return Err(Error::InvalidArgument(format!(
                    "frame {i} has shape {:?}, expected [3, {}, {}]",
                    f.shape(),
                    c.height,
                    c.width
                )));
            }
            if f.data().iter().any(|v| !(*v >= T::zero() && *v <= T::one())) {
                return Err(Error::InvalidArgument(format!("frame {i} has values outside [0, 1]")));
            }
        }
        Ok(())
    }

    /// Forward pass from a fresh zero hidden state.
    pub fn forward<T: Real>(&self, params: &ParamStore<T>, frames: &[Tensor<T>]) -> Result<ForwardPass<T>> {
        self.forward_from(params, frames, RecurrentState::zeros(self.config.hidden_size()))
    }

    pub fn forward_from<T: Real>(
        &self,
        params: &ParamStore<T>,
        frames: &[Tensor<T>],
        init: RecurrentState<T>,
    ) -> Result<ForwardPass<T>> {
        self.validate_frames(frames)?;
        let mut bottlenecks = Vec::with_capacity(frames.len());
        let mut encoders = Vec::with_capacity(frames.len());
        let mut last_skips = Vec::new();
        for frame in frames {
            let (out, cache) = self.backbone.encode_frame(params, frame)?;
            bottlenecks.push(out.bottleneck);
            last_skips = out.skips;
            encoders.push(cache);
        }
        let (trace, attention) = self.attention.forward(params, &bottlenecks, init)?;
        let (logits, decoder) = self.backbone.decode(params, &trace.x_out, &last_skips)?;
        Ok(ForwardPass {
            logits,
            trace,
            encoders,
            attention,
            decoder,
        })
    }

    /// Accumulate parameter gradients of a scalar loss given `dL/dlogits`.
    pub fn backward<T: Real>(&self, params: &mut ParamStore<T>, pass: &ForwardPass<T>, grad_logits: &Tensor<T>) -> Result<()> {
        if grad_logits.shape() != pass.logits.shape() {
            return Err(Error::shape("Out_Conv", "gradient shape differs from logits"));
        }
        let (grad_x_out, grad_skips) = self.backbone.decode_backward(params, &pass.decoder, grad_logits)?;
        let grad_bottlenecks = self.attention.backward(params, &pass.trace, &pass.attention, &grad_x_out)?;
        let last = pass.encoders.len() - 1;
        for (i, (cache, g)) in pass.encoders.iter().zip(&grad_bottlenecks).enumerate() {
            let skips = (i == last).then_some(grad_skips.as_slice());
            self.backbone.encode_backward(params, cache, g, skips)?;
        }
        Ok(())
    }
}

/// Per-pixel argmax over the two logit channels; ties go to background.
pub fn predict_mask<T: Real>(logits: &Tensor<T>) -> Result<LaneMask> {
    let (c, h, w) = logits
        .chw()
        .filter(|(c, _, _)| *c == 2)
        .ok_or_else(|| Error::shape("predict_mask", format!("expected 2×H×W logits, got {:?}", logits.shape())))?;
    debug_assert_eq!(c, 2);
    let bg = logits.channel(0);
    let lane = logits.channel(1);
    LaneMask::new(h, w, bg.iter().zip(lane).map(|(b, l)| l > b).collect())
}

/// Lane probability per pixel (softmax over the two channels).
pub fn lane_probabilities<T: Real>(logits: &Tensor<T>) -> Vec<T> {
    let bg = logits.channel(0);
    let lane = logits.channel(1);
    bg.iter().zip(lane).map(|(&b, &l)| crate::nn::sigmoid(l - b)).collect()
}

/// Carries the hidden state from one sequence to the next when the model is
/// configured for streaming inference.
#[derive(Debug, Clone)]
pub struct StreamingPredictor<'a> {
    model: &'a SequenceModel,
    params: &'a ParamStore<f32>,
    state: RecurrentState<f32>,
}

impl<'a> StreamingPredictor<'a> {
    pub fn new(model: &'a SequenceModel, params: &'a ParamStore<f32>) -> Self {
        Self {
            model,
            params,
            state: RecurrentState::zeros(model.config.hidden_size()),
        }
    }

    pub fn step(&mut self, frames: &[Tensor<f32>]) -> Result<ForwardPass<f32>> {
        let init = if self.model.config.stream_hidden {
            self.state.clone()
        } else {
            RecurrentState::zeros(self.model.config.hidden_size())
        };
        let pass = self.model.forward_from(self.params, frames, init)?;
        self.state = pass.trace.final_state.clone();
        Ok(pass)
    }

    pub fn reset(&mut self) {
        self.state = RecurrentState::zeros(self.model.config.hidden_size());
    }
}
