//! Binary checkpoint format.
//!
//! ```text
//! "STLANE01"
//! u64 LE   manifest length in bytes
//! UTF-8    manifest:
//!            config key=value key=value ...
//!            param <name> <d0>x<d1>x... <byte offset into payload>
//! u64 LE   payload length in bytes
//! f32 LE   parameter values, manifest order
//! ```

use std::fs;
use std::path::Path;

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"STLANE01";

pub fn encode_checkpoint(params: &ParamStore<f32>, config: &ModelConfig) -> Vec<u8> {
    let mut manifest = String::from("config");
    for (k, v) in config.to_pairs() {
        manifest.push_str(&format!(" {k}={v}"));
    }
    manifest.push('\n');
    let mut payload = Vec::new();
    for p in params.iter() {
        let dims: Vec<String> = p.value.shape().iter().map(usize::to_string).collect();
        manifest.push_str(&format!("param {} {} {}\n", p.name, dims.join("x"), payload.len()));
        for v in p.value.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut out = Vec::with_capacity(8 + 8 + manifest.len() + 8 + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
    out.extend_from_slice(manifest.as_bytes());
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(&payload);
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Truncated(format!(
                "{what}: need {n} bytes at offset {}, file has {}",
                self.pos,
                self.bytes.len()
            ))),
        }
    }

    fn u64(&mut self, what: &str) -> Result<usize> {
        let b = self.take(8, what)?;
        let v = u64::from_le_bytes(b.try_into().expect("8 bytes"));
        usize::try_from(v).map_err(|_| Error::Truncated(format!("{what}: length {v} overflows")))
    }
}

fn parse_config(line: &str) -> Result<ModelConfig> {
    let rest = line
        .strip_prefix("config")
        .ok_or_else(|| Error::Manifest("first line must start with `config`".into()))?;
    let mut cfg = ModelConfig::default();
    for pair in rest.split_whitespace() {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| Error::Manifest(format!("config entry `{pair}` is not key=value")))?;
        cfg.set(k, v).map_err(|e| Error::Manifest(e.to_string()))?;
    }
    cfg.validate().map_err(|e| Error::Manifest(e.to_string()))?;
    Ok(cfg)
}

struct Entry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

fn parse_param(line: &str) -> Result<Entry> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() != 4 || fields[0] != "param" {
        return Err(Error::Manifest(format!("bad parameter line `{line}`")));
    }
    let shape = fields[2]
        .split('x')
        .map(|d| d.parse::<usize>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|_| Error::Manifest(format!("bad shape `{}` for `{}`", fields[2], fields[1])))?;
    let offset = fields[3]
        .parse()
        .map_err(|_| Error::Manifest(format!("bad offset `{}` for `{}`", fields[3], fields[1])))?;
    Ok(Entry {
        name: fields[1].to_string(),
        shape,
        offset,
    })
}

/// Parses and validates a checkpoint against the architecture its config
/// describes. Parameters come back in network order.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<(ParamStore<f32>, ModelConfig)> {
    let mut r = Reader { bytes, pos: 0 };
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::BadMagic);
    }
    r.pos = MAGIC.len();
    let mlen = r.u64("manifest length")?;
    let manifest = std::str::from_utf8(r.take(mlen, "manifest")?)
        .map_err(|_| Error::Manifest("manifest is not UTF-8".into()))?;
    let plen = r.u64("payload length")?;
    let payload = r.take(plen, "payload")?;

    let mut lines = manifest.lines();
    let config = parse_config(lines.next().unwrap_or(""))?;
    let layout = config.param_layout();
    let mut found: Vec<Option<Tensor<f32>>> = vec![None; layout.len()];
    for line in lines.filter(|l| !l.trim().is_empty()) {
        let e = parse_param(line)?;
        let slot = layout
            .iter()
            .position(|s| s.name == e.name)
            .ok_or_else(|| Error::UnknownParameter(e.name.clone()))?;
        if layout[slot].shape != e.shape {
            return Err(Error::Manifest(format!(
                "`{}` has shape {:?}, architecture expects {:?}",
                e.name, e.shape, layout[slot].shape
            )));
        }
        if found[slot].is_some() {
            return Err(Error::Manifest(format!("`{}` listed twice", e.name)));
        }
        let n: usize = e.shape.iter().product();
        let end = e.offset.saturating_add(4 * n);
        if end > payload.len() {
            return Err(Error::Truncated(format!(
                "payload: `{}` needs bytes {}..{end}, payload has {}",
                e.name,
                e.offset,
                payload.len()
            )));
        }
        let data = payload[e.offset..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        found[slot] = Some(Tensor::new(&e.shape, data)?);
    }
    let mut store = ParamStore::new();
    for (spec, t) in layout.iter().zip(found) {
        let t = t.ok_or_else(|| Error::MissingParameter(spec.layer.clone()))?;
        store.insert(spec.name.clone(), t)?;
    }
    Ok((store, config))
}

pub fn save_checkpoint(params: &ParamStore<f32>, config: &ModelConfig, path: &Path) -> Result<()> {
    fs::write(path, encode_checkpoint(params, config)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(ParamStore<f32>, ModelConfig)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
