//! Model checkpoints: a short text header naming every tensor and its
//! shape, followed by little-endian `f32` payload in header order
//! (parameters, then Adam first moments, then second moments).

use std::fs;
use std::path::Path;

use super::adam::AdamState;
use super::model::{forward, ModelConfig};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::image::Image;

const MAGIC: &str = "simusr-checkpoint 1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub step: u64,
    pub params: Vec<Tensor<f32>>,
    pub adam: Option<AdamState>,
}

impl Checkpoint {
    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.numel()).sum()
    }

    /// Runs the network on one image; output is not clamped.
    pub fn forward_image(&self, lr: &Image) -> Result<Image> {
        let y = forward(&self.config, &self.params, &Tensor::from_image(lr))?;
        if !y.is_finite() {
            return Err(Error::NonFinite("network output".into()));
        }
        y.to_image(0)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let c = &self.config;
        let mut head = format!(
            "{MAGIC}\nin_channels={}\nfeature_channels={}\nresidual_blocks={}\nscale={}\nstep={}\n",
            c.in_channels, c.feature_channels, c.residual_blocks, c.scale, self.step
        );
        match &self.adam {
            Some(a) => head.push_str(&format!("optimizer=adam\nadam_t={}\n", a.t)),
            None => head.push_str("optimizer=none\n"),
        }
        for spec in c.param_specs() {
            let [a, b, h, w] = spec.shape;
            head.push_str(&format!("tensor {} {a} {b} {h} {w}\n", spec.name));
        }
        head.push_str("end\n");
        let mut out = head.into_bytes();
        let mut put = |vals: &[f32]| vals.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
        for p in &self.params {
            put(p.data());
        }
        if let Some(a) = &self.adam {
            a.m.iter().for_each(|m| put(m));
            a.v.iter().for_each(|v| put(v));
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |reason: String| Error::corrupt(path, reason);
        let end = find_header_end(bytes).ok_or_else(|| bad("no header terminator".into()))?;
        let header = std::str::from_utf8(&bytes[..end]).map_err(|_| bad("header is not UTF-8".into()))?;
        let mut lines = header.lines();
        if lines.next() != Some(MAGIC) {
            return Err(bad("not a checkpoint file".into()));
        }
        let mut field = |key: &str| -> Result<String> {
            let line = lines.next().ok_or_else(|| bad(format!("missing {key}")))?;
            line.strip_prefix(key)
                .and_then(|r| r.strip_prefix('='))
                .map(str::to_owned)
                .ok_or_else(|| bad(format!("expected {key}=..., found {line:?}")))
        };
        let num = |s: String, key: &str| -> Result<u64> { s.parse().map_err(|_| bad(format!("bad {key} value {s:?}"))) };
        let config = ModelConfig {
            in_channels: num(field("in_channels")?, "in_channels")? as usize,
            feature_channels: num(field("feature_channels")?, "feature_channels")? as usize,
            residual_blocks: num(field("residual_blocks")?, "residual_blocks")? as usize,
            scale: num(field("scale")?, "scale")? as u32,
        };
        config.validate().map_err(|e| bad(format!("invalid model config: {e}")))?;
        let step = num(field("step")?, "step")?;
        let adam_t = match field("optimizer")?.as_str() {
            "adam" => Some(num(field("adam_t")?, "adam_t")?),
            "none" => None,
            other => return Err(bad(format!("unknown optimizer {other:?}"))),
        };
        let specs = config.param_specs();
        for spec in &specs {
            let line = lines.next().ok_or_else(|| bad(format!("missing tensor {}", spec.name)))?;
            let [a, b, h, w] = spec.shape;
            if line != format!("tensor {} {a} {b} {h} {w}", spec.name) {
                return Err(bad(format!("tensor line {line:?} does not match {}", spec.name)));
            }
        }
        if lines.next() != Some("end") || lines.next().is_some() {
            return Err(bad("malformed header end".into()));
        }

        let payload = &bytes[end..];
        let sizes: Vec<usize> = specs.iter().map(|s| s.shape.iter().product()).collect();
        let total: usize = sizes.iter().sum();
        let expected = total * 4 * if adam_t.is_some() { 3 } else { 1 };
        if payload.len() != expected {
            return Err(bad(format!(
                "payload is {} bytes, expected {expected}",
                payload.len()
            )));
        }
        let floats: Vec<f32> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        if floats.iter().any(|v| !v.is_finite()) {
            return Err(bad("non-finite value in payload".into()));
        }
        let mut rest = floats.as_slice();
        let mut take = |n: usize| {
            let (a, b) = rest.split_at(n);
            rest = b;
            a.to_vec()
        };
        let params = specs
            .iter()
            .zip(&sizes)
            .map(|(s, &n)| Tensor::from_vec(s.shape, take(n)))
            .collect::<Result<Vec<_>>>()?;
        let adam = adam_t.map(|t| {
            let m = sizes.iter().map(|&n| take(n)).collect();
            let v = sizes.iter().map(|&n| take(n)).collect();
            AdamState { t, m, v }
        });
        Ok(Self {
            config,
            step,
            params,
            adam,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

fn find_header_end(bytes: &[u8]) -> Option<usize> {
    const END: &[u8] = b"\nend\n";
    // the header is small; do not scan a whole corrupt payload for it
    let limit = bytes.len().min(1 << 16);
    bytes[..limit]
        .windows(END.len())
        .position(|w| w == END)
        .map(|p| p + END.len())
}
