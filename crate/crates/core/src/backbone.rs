//! UNet encoder and decoder with skip concatenation.

use crate::config::{ConvLayer, ModelConfig};
use crate::error::{Error, Result};
use crate::nn::{
    conv2d, conv2d_backward, maxpool2x2, maxpool2x2_backward, upsample_bilinear_2x, upsample_bilinear_2x_backward,
    ParamStore,
};
use crate::tensor::{Real, Tensor};

/// Encoder result for one frame.
#[derive(Debug, Clone)]
pub struct EncoderOutput<T> {
    /// Output of Down_ConvBlock_4.
    pub bottleneck: Tensor<T>,
    /// Outputs of In_ConvBlock and Down_ConvBlock_1..3, finest first.
    pub skips: Vec<Tensor<T>>,
}

/// Activations kept for the encoder backward pass.
#[derive(Debug, Clone)]
pub struct EncoderCache<T> {
    inputs: Vec<Tensor<T>>,
    outputs: Vec<Tensor<T>>,
    argmax: Vec<Vec<usize>>,
}

impl<T: Real> EncoderCache<T> {
    /// Output of `In_ConvBlock` or `Down_ConvBlock_{1..4}`.
    pub fn block_output(&self, block: usize) -> &Tensor<T> {
        &self.outputs[2 * block + 1]
    }
}

#[derive(Debug, Clone)]
pub struct DecoderCache<T> {
    up_inputs: Vec<Vec<usize>>,
    inputs: Vec<Tensor<T>>,
    outputs: Vec<Tensor<T>>,
}

impl<T: Real> DecoderCache<T> {
    /// Output of `Up_ConvBlock_{4,3,2,1}` for `stage` 0..4, in that order.
    pub fn block_output(&self, stage: usize) -> &Tensor<T> {
        &self.outputs[2 * stage + 1]
    }

    pub fn logits(&self) -> &Tensor<T> {
        &self.outputs[8]
    }
}

fn apply<T: Real>(params: &ParamStore<T>, layer: &ConvLayer, x: &Tensor<T>) -> Result<Tensor<T>> {
    let w = params.get(&format!("{}.weight", layer.name))?;
    let b = if layer.spec.has_bias {
        Some(params.get(&format!("{}.bias", layer.name))?)
    } else {
        None
    };
    conv2d(&layer.name, x, &layer.spec, w, b)
}

/// Accumulates the layer's parameter gradients and returns the input gradient.
fn back<T: Real>(
    params: &mut ParamStore<T>,
    layer: &ConvLayer,
    x: &Tensor<T>,
    y: &Tensor<T>,
    gy: &Tensor<T>,
) -> Result<Tensor<T>> {
    let wname = format!("{}.weight", layer.name);
    let grads = conv2d_backward(&layer.name, x, &layer.spec, params.get(&wname)?, y, gy)?;
    params.accumulate(&wname, &grads.weight)?;
    if let Some(gb) = &grads.bias {
        params.accumulate(&format!("{}.bias", layer.name), gb)?;
    }
    Ok(grads.input)
}

/// Layer tables for the encoder and decoder of one configuration.
#[derive(Debug, Clone)]
pub struct Backbone {
    encoder: Vec<ConvLayer>,
    decoder: Vec<ConvLayer>,
    channels: [usize; 4],
    height: usize,
    width: usize,
}

impl Backbone {
    pub fn new(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            encoder: config.encoder_layers(),
            decoder: config.decoder_layers(),
            channels: config.channels(),
            height: config.height,
            width: config.width,
        })
    }

    pub fn encode_frame<T: Real>(
        &self,
        params: &ParamStore<T>,
        frame: &Tensor<T>,
    ) -> Result<(EncoderOutput<T>, EncoderCache<T>)> {
        if frame.shape() != [3, self.height, self.width] {
            return Err(Error::shape(
                "In_Conv_1",
                format!("frame {:?}, expected [3, {}, {}]", frame.shape(), self.height, self.width),
            ));
        }
        let mut inputs = Vec::with_capacity(10);
        let mut outputs: Vec<Tensor<T>> = Vec::with_capacity(10);
        let mut argmax = Vec::with_capacity(4);
        let mut x = frame.clone();
        for (i, layer) in self.encoder.iter().enumerate() {
            if i >= 2 && i % 2 == 0 {
                let (pooled, idx) = maxpool2x2(&format!("Maxpool_{}", i / 2), &x)?;
                argmax.push(idx);
                x = pooled;
            }
            let y = apply(params, layer, &x)?;
            inputs.push(x);
            outputs.push(y.clone());
            x = y;
        }
        let out = EncoderOutput {
            bottleneck: x,
            skips: vec![outputs[1].clone(), outputs[3].clone(), outputs[5].clone(), outputs[7].clone()],
        };
        Ok((out, EncoderCache { inputs, outputs, argmax }))
    }

    /// Backward through the encoder of one frame. `grad_skips` is present for
    /// the frame whose skips fed the decoder.
    pub fn encode_backward<T: Real>(
        &self,
        params: &mut ParamStore<T>,
        cache: &EncoderCache<T>,
        grad_bottleneck: &Tensor<T>,
        grad_skips: Option<&[Tensor<T>]>,
    ) -> Result<()> {
        let mut gy = grad_bottleneck.clone();
        for i in (0..self.encoder.len()).rev() {
            let g_in = back(params, &self.encoder[i], &cache.inputs[i], &cache.outputs[i], &gy)?;
            if i == 0 {
                break;
            }
            gy = if i % 2 == 0 {
                let k = i / 2;
                let mut g = maxpool2x2_backward(&g_in, &cache.argmax[k - 1], cache.outputs[i - 1].shape());
                if let Some(gs) = grad_skips {
                    g.add_assign(&gs[k - 1]);
                }
                g
            } else {
                g_in
            };
        }
        Ok(())
    }

    pub fn decode<T: Real>(
        &self,
        params: &ParamStore<T>,
        features: &Tensor<T>,
        skips: &[Tensor<T>],
    ) -> Result<(Tensor<T>, DecoderCache<T>)> {
        let (bh, bw) = (self.height / 16, self.width / 16);
        if features.shape() != [self.channels[3], bh, bw] {
            return Err(Error::shape(
                "Up_ConvBlock_4",
                format!("features {:?}, expected [{}, {bh}, {bw}]", features.shape(), self.channels[3]),
            ));
        }
        if skips.len() != 4 {
            return Err(Error::shape("decoder", format!("expected 4 skips, got {}", skips.len())));
        }
        let mut up_inputs = Vec::with_capacity(4);
        let mut inputs = Vec::with_capacity(9);
        let mut outputs: Vec<Tensor<T>> = Vec::with_capacity(9);
        let mut x = features.clone();
        for stage in 0..4 {
            let block = 4 - stage;
            let skip = &skips[3 - stage];
            up_inputs.push(x.shape().to_vec());
            let up = upsample_bilinear_2x(&format!("UpsamplingBilinear2D_{}", stage + 1), &x)?;
            let cat = Tensor::concat_channels(&[&up, skip])
                .map_err(|e| Error::shape(format!("Up_ConvBlock_{block}"), e.to_string()))?;
            let y1 = apply(params, &self.decoder[2 * stage], &cat)?;
            let y2 = apply(params, &self.decoder[2 * stage + 1], &y1)?;
            inputs.push(cat);
            inputs.push(y1.clone());
            outputs.push(y1);
            outputs.push(y2.clone());
            x = y2;
        }
        let logits = apply(params, &self.decoder[8], &x)?;
        inputs.push(x);
        outputs.push(logits.clone());
        Ok((
            logits,
            DecoderCache {
                up_inputs,
                inputs,
                outputs,
            },
        ))
    }

    /// Returns the gradient with respect to the decoder features and the four
    /// skips (finest first).
    pub fn decode_backward<T: Real>(
        &self,
        params: &mut ParamStore<T>,
        cache: &DecoderCache<T>,
        grad_logits: &Tensor<T>,
    ) -> Result<(Tensor<T>, Vec<Tensor<T>>)> {
        let mut gy = back(params, &self.decoder[8], &cache.inputs[8], &cache.outputs[8], grad_logits)?;
        let mut grad_skips: Vec<Option<Tensor<T>>> = vec![None, None, None, None];
        for stage in (0..4).rev() {
            let g1 = back(
                params,
                &self.decoder[2 * stage + 1],
                &cache.inputs[2 * stage + 1],
                &cache.outputs[2 * stage + 1],
                &gy,
            )?;
            let gcat = back(params, &self.decoder[2 * stage], &cache.inputs[2 * stage], &cache.outputs[2 * stage], &g1)?;
            let up_c = cache.up_inputs[stage][0];
            let skip_c = gcat.shape()[0] - up_c;
            let mut parts = gcat.split_channels(&[up_c, skip_c]);
            grad_skips[3 - stage] = parts.pop();
            gy = upsample_bilinear_2x_backward(&parts[0], &cache.up_inputs[stage]);
        }
        Ok((gy, grad_skips.into_iter().map(|g| g.expect("every stage sets its skip")).collect()))
    }
}
