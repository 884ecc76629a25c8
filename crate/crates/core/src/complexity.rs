//! Analytic parameter and multiply-accumulate counts.
//!
//! Conventions: a convolution costs `H_out·W_out·C_out·C_in·kh·kw` MACs;
//! bias, activations, pooling and upsampling cost nothing. Encoder and
//! attention-input layers run once per frame, the attention step and
//! recurrent cell once per frame, the attention output and decoder once.

use std::fmt;

use crate::attention::attention_param_count;
use crate::config::{AttentionVariant, ConvLayer, ExtractorKind, ModelConfig};
use crate::error::Result;
use crate::recurrent::{gru_param_count, lstm_param_count};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComplexityRow {
    pub name: String,
    pub params: u64,
    /// Total over all repeats.
    pub macs: u64,
    /// Times the layer runs per forward pass.
    pub repeats: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComplexityReport {
    pub model: String,
    pub rows: Vec<ComplexityRow>,
    pub total_params: u64,
    pub total_macs: u64,
}

impl ComplexityReport {
    fn from_rows(model: String, rows: Vec<ComplexityRow>) -> Self {
        let total_params = rows.iter().map(|r| r.params).sum();
        let total_macs = rows.iter().map(|r| r.macs).sum();
        Self {
            model,
            rows,
            total_params,
            total_macs,
        }
    }

    pub fn params_m(&self) -> f64 {
        self.total_params as f64 / 1e6
    }

    pub fn macs_g(&self) -> f64 {
        self.total_macs as f64 / 1e9
    }

    pub fn row(&self, name: &str) -> Option<&ComplexityRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    /// Machine-readable `key=value` lines.
    pub fn key_values(&self) -> String {
        let mut s = format!("model={}\n", self.model);
        for r in &self.rows {
            s.push_str(&format!("layer.{}.params={}\n", r.name, r.params));
            s.push_str(&format!("layer.{}.macs={}\n", r.name, r.macs));
        }
        s.push_str(&format!("params={}\n", self.total_params));
        s.push_str(&format!("params_m={:.3}\n", self.params_m()));
        s.push_str(&format!("macs={}\n", self.total_macs));
        s.push_str(&format!("macs_g={:.3}\n", self.macs_g()));
        s
    }
}

impl fmt::Display for ComplexityReport {
    /// Aligned plain-text table.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{}", self.model)?;
        writeln!(
            f,
            "MACs: conv H'W'·Cout·Cin·k², encoder ×frames, attention ×frames, decoder ×1; bias/pool/upsample/activation 0"
        )?;
        writeln!(f, "{:<26} {:>7} {:>12} {:>16}", "layer", "runs", "params", "MACs")?;
        for r in &self.rows {
            writeln!(f, "{:<26} {:>7} {:>12} {:>16}", r.name, r.repeats, r.params, r.macs)?;
        }
        writeln!(
            f,
            "{:<26} {:>7} {:>12} {:>16}",
            "total", "", self.total_params, self.total_macs
        )?;
        write!(f, "params {:.3} M, MACs {:.3} G", self.params_m(), self.macs_g())
    }
}

fn conv_params(layer: &ConvLayer) -> u64 {
    let s = &layer.spec;
    let (kh, kw) = s.kernel;
    ((s.in_channels * kh * kw + s.has_bias as usize) * s.out_channels) as u64
}

fn conv_macs(layer: &ConvLayer, h: usize, w: usize) -> u64 {
    let s = &layer.spec;
    let (kh, kw) = s.kernel;
    let (ho, wo) = s.output_hw(h, w).unwrap_or((0, 0));
    (ho * wo * s.out_channels * s.in_channels * kh * kw) as u64
}

fn conv_row(layer: &ConvLayer, h: usize, w: usize, repeats: usize) -> ComplexityRow {
    ComplexityRow {
        name: layer.name.clone(),
        params: conv_params(layer),
        macs: conv_macs(layer, h, w) * repeats as u64,
        repeats: repeats as u64,
    }
}

/// Input resolution of each encoder convolution, in layer order.
fn encoder_resolutions(cfg: &ModelConfig) -> Vec<(usize, usize)> {
    let mut r = Vec::new();
    for level in 0..5 {
        let hw = (cfg.height >> level, cfg.width >> level);
        r.push(hw);
        r.push(hw);
    }
    r
}

/// Input resolution of each decoder convolution, `Out_Conv` last.
fn decoder_resolutions(cfg: &ModelConfig) -> Vec<(usize, usize)> {
    let mut r = Vec::new();
    for level in (0..4).rev() {
        let hw = (cfg.height >> level, cfg.width >> level);
        r.push(hw);
        r.push(hw);
    }
    r.push((cfg.height, cfg.width));
    r
}

/// Per-frame MACs of each attention layer: `U⊙x`, `H⊙h`, then `W⊙z` plus
/// the `w⊙x` reweighting. Affine maps cost `D²`.
fn attention_macs(variant: AttentionVariant, d: usize) -> [u64; 3] {
    let map = match variant {
        AttentionVariant::StfcAtt => d * d,
        _ => d,
    } as u64;
    [map, map, map + d as u64]
}

/// Rows for the layers that run once per frame.
fn per_frame_rows(cfg: &ModelConfig, frames: usize) -> Vec<ComplexityRow> {
    let mut rows: Vec<ComplexityRow> = cfg
        .encoder_layers()
        .iter()
        .zip(encoder_resolutions(cfg))
        .map(|(l, (h, w))| conv_row(l, h, w, frames))
        .collect();
    let (bh, bw) = cfg.bottleneck_hw();
    let d = cfg.hidden_size();
    rows.push(conv_row(&cfg.attention_in_layer(), bh, bw, frames));
    let per_layer = attention_param_count(cfg.variant, d) as u64 / 3;
    for (k, macs) in attention_macs(cfg.variant, d).into_iter().enumerate() {
        rows.push(ComplexityRow {
            name: format!("AttentionLayer_{}", k + 1),
            params: per_layer,
            macs: macs * frames as u64,
            repeats: frames as u64,
        });
    }
    let (params, gates) = match cfg.extractor {
        ExtractorKind::Lstm => (lstm_param_count(d), 4),
        ExtractorKind::Gru => (gru_param_count(d), 3),
    };
    rows.push(ComplexityRow {
        name: cfg.extractor.prefix().to_string(),
        params: params as u64,
        macs: (gates * 2 * d * d * frames) as u64,
        repeats: frames as u64,
    });
    rows
}

fn full_rows(cfg: &ModelConfig) -> Vec<ComplexityRow> {
    let mut rows = per_frame_rows(cfg, cfg.frames);
    let (bh, bw) = cfg.bottleneck_hw();
    rows.push(conv_row(&cfg.attention_out_layer(), bh, bw, 1));
    rows.extend(
        cfg.decoder_layers()
            .iter()
            .zip(decoder_resolutions(cfg))
            .map(|(l, (h, w))| conv_row(l, h, w, 1)),
    );
    rows
}

fn model_label(cfg: &ModelConfig) -> String {
    let name = cfg.variant.model_name().replace("LSTM", cfg.extractor.prefix());
    format!("{name} {}x{} frames={}", cfg.height, cfg.width, cfg.frames)
}

/// Full-model parameter and MAC report.
pub fn complexity_report(cfg: &ModelConfig) -> Result<ComplexityReport> {
    cfg.validate()?;
    Ok(ComplexityReport::from_rows(model_label(cfg), full_rows(cfg)))
}

pub fn count_params(cfg: &ModelConfig) -> Result<ComplexityReport> {
    complexity_report(cfg)
}

pub fn count_macs(cfg: &ModelConfig) -> Result<ComplexityReport> {
    complexity_report(cfg)
}

/// The plain UNet: encoder and decoder once, no attention module.
pub fn backbone_report(cfg: &ModelConfig) -> Result<ComplexityReport> {
    cfg.validate()?;
    let mut rows: Vec<ComplexityRow> = cfg
        .encoder_layers()
        .iter()
        .zip(encoder_resolutions(cfg))
        .map(|(l, (h, w))| conv_row(l, h, w, 1))
        .collect();
    rows.extend(
        cfg.decoder_layers()
            .iter()
            .zip(decoder_resolutions(cfg))
            .map(|(l, (h, w))| conv_row(l, h, w, 1)),
    );
    Ok(ComplexityReport::from_rows(
        format!("UNet {}x{}", cfg.height, cfg.width),
        rows,
    ))
}
