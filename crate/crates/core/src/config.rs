//! Model configuration and the full layer schedule derived from it.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::nn::ConvSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AttentionVariant {
    /// Scalar weights on input, hidden state and attention logits.
    TemAtt,
    /// One weight per flattened spatial position.
    StAtt,
    /// Full affine maps between all positions.
    StfcAtt,
}

impl AttentionVariant {
    pub const ALL: [AttentionVariant; 3] = [Self::TemAtt, Self::StAtt, Self::StfcAtt];

    pub fn short_name(self) -> &'static str {
        match self {
            Self::TemAtt => "tem",
            Self::StAtt => "st",
            Self::StfcAtt => "stfc",
        }
    }

    pub fn model_name(self) -> &'static str {
        match self {
            Self::TemAtt => "Tem_Att-UNet_LSTM",
            Self::StAtt => "ST_Att-UNet_LSTM",
            Self::StfcAtt => "STFC_Att-UNet_LSTM",
        }
    }
}

impl fmt::Display for AttentionVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

impl FromStr for AttentionVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tem" | "tem_att" | "temporal" => Ok(Self::TemAtt),
            "st" | "st_att" => Ok(Self::StAtt),
            "stfc" | "stfc_att" => Ok(Self::StfcAtt),
            _ => Err(Error::Config(format!("unknown attention variant `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ExtractorKind {
    Lstm,
    Gru,
}

impl ExtractorKind {
    pub fn prefix(self) -> &'static str {
        match self {
            Self::Lstm => "LSTM",
            Self::Gru => "GRU",
        }
    }
}

impl fmt::Display for ExtractorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Lstm => "lstm",
            Self::Gru => "gru",
        })
    }
}

impl FromStr for ExtractorKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lstm" => Ok(Self::Lstm),
            "gru" => Ok(Self::Gru),
            _ => Err(Error::Config(format!("unknown extractor `{s}`"))),
        }
    }
}

/// Everything that determines the network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    pub variant: AttentionVariant,
    pub extractor: ExtractorKind,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    /// Divides the 64/128/256/512 channel schedule. 1 is the full network.
    pub channel_div: usize,
    /// Carry the hidden state across consecutive sequences at inference.
    pub stream_hidden: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            variant: AttentionVariant::StAtt,
            extractor: ExtractorKind::Lstm,
            frames: 5,
            height: 128,
            width: 256,
            channel_div: 1,
            stream_hidden: false,
        }
    }
}

pub const BASE_CHANNELS: [usize; 4] = [64, 128, 256, 512];

/// One convolution of the backbone or attention module.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConvLayer {
    pub name: String,
    pub spec: ConvSpec,
}

impl ConvLayer {
    fn new(name: impl Into<String>, spec: ConvSpec) -> Self {
        Self {
            name: name.into(),
            spec,
        }
    }
}

/// How a parameter tensor is initialised.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Normal with standard deviation `sqrt(gain / fan_in)`.
    ScaledNormal { fan_in: usize, gain: f64 },
    Constant(f64),
    Identity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    /// The Table-I style layer the parameter belongs to.
    pub layer: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ModelConfig {
    pub fn paper(variant: AttentionVariant) -> Self {
        Self {
            variant,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames == 0 {
            return Err(Error::Config("frames must be at least 1".into()));
        }
        if self.height == 0 || self.width == 0 || self.height % 16 != 0 || self.width % 16 != 0 {
            return Err(Error::Config(format!(
                "frame size {}×{} must be positive and divisible by 16",
                self.height, self.width
            )));
        }
        if self.channel_div == 0 || BASE_CHANNELS.iter().any(|c| c % self.channel_div != 0) {
            return Err(Error::Config(format!(
                "channel divisor {} must divide 64",
                self.channel_div
            )));
        }
        Ok(())
    }

    pub fn channels(&self) -> [usize; 4] {
        BASE_CHANNELS.map(|c| c / self.channel_div)
    }

    pub fn bottleneck_hw(&self) -> (usize, usize) {
        (self.height / 16, self.width / 16)
    }

    /// Flattened bottleneck size, which is also the recurrent hidden size.
    pub fn hidden_size(&self) -> usize {
        let (h, w) = self.bottleneck_hw();
        h * w
    }

    pub fn encoder_layers(&self) -> Vec<ConvLayer> {
        let [c0, c1, c2, c3] = self.channels();
        vec![
            ConvLayer::new("In_Conv_1", ConvSpec::conv3x3_relu(3, c0)),
            ConvLayer::new("In_Conv_2", ConvSpec::conv3x3_relu(c0, c0)),
            ConvLayer::new("Down_Conv_1_1", ConvSpec::conv3x3_relu(c0, c1)),
            ConvLayer::new("Down_Conv_1_2", ConvSpec::conv3x3_relu(c1, c1)),
            ConvLayer::new("Down_Conv_2_1", ConvSpec::conv3x3_relu(c1, c2)),
            ConvLayer::new("Down_Conv_2_2", ConvSpec::conv3x3_relu(c2, c2)),
            ConvLayer::new("Down_Conv_3_1", ConvSpec::conv3x3_relu(c2, c3)),
            ConvLayer::new("Down_Conv_3_2", ConvSpec::conv3x3_relu(c3, c3)),
            ConvLayer::new("Down_Conv_4_1", ConvSpec::conv3x3_relu(c3, c3)),
            ConvLayer::new("Down_Conv_4_2", ConvSpec::conv3x3_relu(c3, c3)),
        ]
    }

    /// Decoder convolutions in execution order (Up_ConvBlock_4 first).
    pub fn decoder_layers(&self) -> Vec<ConvLayer> {
        let [c0, c1, c2, c3] = self.channels();
        vec![
            ConvLayer::new("Up_Conv_4_1", ConvSpec::conv3x3_relu(2 * c3, c2)),
            ConvLayer::new("Up_Conv_4_2", ConvSpec::conv3x3_relu(c2, c2)),
            ConvLayer::new("Up_Conv_3_1", ConvSpec::conv3x3_relu(2 * c2, c1)),
            ConvLayer::new("Up_Conv_3_2", ConvSpec::conv3x3_relu(c1, c1)),
            ConvLayer::new("Up_Conv_2_1", ConvSpec::conv3x3_relu(2 * c1, c0)),
            ConvLayer::new("Up_Conv_2_2", ConvSpec::conv3x3_relu(c0, c0)),
            ConvLayer::new("Up_Conv_1_1", ConvSpec::conv3x3_relu(2 * c0, c0)),
            ConvLayer::new("Up_Conv_1_2", ConvSpec::conv3x3_relu(c0, c0)),
            ConvLayer::new("Out_Conv", ConvSpec::conv1x1(c0, 2)),
        ]
    }

    pub fn attention_in_layer(&self) -> ConvLayer {
        ConvLayer::new("In_Attention_Conv_5_1", ConvSpec::conv1x1(self.channels()[3], 1))
    }

    pub fn attention_out_layer(&self) -> ConvLayer {
        ConvLayer::new("Out_Attention_Conv_5_2", ConvSpec::conv1x1(1, self.channels()[3]))
    }

    /// Shape of the parameters of AttentionLayer_1..3 (weight, optional bias).
    pub fn attention_layer_shapes(&self) -> (Vec<usize>, Option<Vec<usize>>) {
        let d = self.hidden_size();
        match self.variant {
            AttentionVariant::TemAtt => (vec![1], None),
            AttentionVariant::StAtt => (vec![d], None),
            AttentionVariant::StfcAtt => (vec![d, d], Some(vec![d])),
        }
    }

    /// Every trainable tensor of the model in network order.
    pub fn param_layout(&self) -> Vec<ParamSpec> {
        let mut out = Vec::new();
        let push_conv = |layer: &ConvLayer, out: &mut Vec<ParamSpec>| {
            let s = &layer.spec;
            let fan_in = s.in_channels * s.kernel.0 * s.kernel.1;
            let gain = match s.activation {
                crate::nn::Activation::Relu => 2.0,
                crate::nn::Activation::None => 1.0,
            };
            out.push(ParamSpec {
                name: format!("{}.weight", layer.name),
                layer: layer.name.clone(),
                shape: s.weight_shape().to_vec(),
                init: Init::ScaledNormal { fan_in, gain },
            });
            if s.has_bias {
                out.push(ParamSpec {
                    name: format!("{}.bias", layer.name),
                    layer: layer.name.clone(),
                    shape: vec![s.out_channels],
                    init: Init::Constant(0.0),
                });
            }
        };
        for l in self.encoder_layers() {
            push_conv(&l, &mut out);
        }
        push_conv(&self.attention_in_layer(), &mut out);
        let (wshape, bshape) = self.attention_layer_shapes();
        for k in 1..=3 {
            let layer = format!("AttentionLayer_{k}");
            out.push(ParamSpec {
                name: format!("{layer}.weight"),
                layer: layer.clone(),
                init: if wshape.len() == 2 {
                    Init::Identity
                } else {
                    Init::Constant(1.0)
                },
                shape: wshape.clone(),
            });
            if let Some(b) = &bshape {
                out.push(ParamSpec {
                    name: format!("{layer}.bias"),
                    layer,
                    shape: b.clone(),
                    init: Init::Constant(0.0),
                });
            }
        }
        let d = self.hidden_size();
        let prefix = self.extractor.prefix();
        let gates: &[&str] = match self.extractor {
            ExtractorKind::Lstm => &crate::recurrent::LSTM_GATES,
            ExtractorKind::Gru => &crate::recurrent::GRU_GATES,
        };
        for gate in gates {
            for part in ["input", "recurrent"] {
                out.push(ParamSpec {
                    name: format!("{prefix}.{gate}.{part}"),
                    layer: prefix.to_string(),
                    shape: vec![d, d],
                    init: Init::ScaledNormal { fan_in: d, gain: 1.0 },
                });
            }
            let forget = self.extractor == ExtractorKind::Lstm && *gate == "forget";
            out.push(ParamSpec {
                name: format!("{prefix}.{gate}.bias"),
                layer: prefix.to_string(),
                shape: vec![d],
                init: Init::Constant(if forget { 1.0 } else { 0.0 }),
            });
        }
        push_conv(&self.attention_out_layer(), &mut out);
        for l in self.decoder_layers() {
            push_conv(&l, &mut out);
        }
        out
    }

    /// Distinct layer names in network order.
    pub fn layer_names(&self) -> Vec<String> {
        let mut names: Vec<String> = Vec::new();
        for p in self.param_layout() {
            if names.last() != Some(&p.layer) {
                names.push(p.layer);
            }
        }
        names
    }

    /// `key=value` pairs, used by checkpoints and the CLI config file.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        vec![
            ("variant".into(), self.variant.to_string()),
            ("extractor".into(), self.extractor.to_string()),
            ("frames".into(), self.frames.to_string()),
            ("height".into(), self.height.to_string()),
            ("width".into(), self.width.to_string()),
            ("channel_div".into(), self.channel_div.to_string()),
            ("stream_hidden".into(), (self.stream_hidden as u8).to_string()),
        ]
    }

    /// Apply one `key=value` override.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let num = |v: &str| {
            v.parse::<usize>()
                .map_err(|_| Error::Config(format!("`{key}` expects an unsigned integer, got `{v}`")))
        };
        match key {
            "variant" => self.variant = value.parse()?,
            "extractor" => self.extractor = value.parse()?,
            "frames" => self.frames = num(value)?,
            "height" => self.height = num(value)?,
            "width" => self.width = num(value)?,
            "channel_div" => self.channel_div = num(value)?,
            "stream_hidden" => {
                self.stream_hidden = match value {
                    "1" | "true" => true,
                    "0" | "false" => false,
                    _ => return Err(Error::Config(format!("stream_hidden expects 0/1, got `{value}`"))),
                }
            }
            _ => return Err(Error::Config(format!("unknown model key `{key}`"))),
        }
        Ok(())
    }
}
