//! JSON model manifest with base64 little-endian weight blobs.

use std::fs;
use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ConvLayer, DenseLayer, Layer, LayerOp, QModel};
use crate::engine::{LayerShape, Padding, QParams, QTensor};
use crate::error::{Error, Result};

pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    version: u32,
    input: InputEntry,
    layers: Vec<LayerEntry>,
    /// SHA-256 over the canonical JSON of `input` and `layers`.
    digest: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InputEntry {
    height: usize,
    width: usize,
    channels: usize,
    scale: f64,
    zero_point: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Kind {
    Conv,
    Dense,
    Relu,
    MaxPool,
    AvgPool,
    GlobalAvgPool,
    Add,
    Argmax,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ShapeEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    filters: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    channels: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    kernel_h: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    kernel_w: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    stride: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    padding: Option<Padding>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    units: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    inputs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    size: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerEntry {
    kind: Kind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    shape: Option<ShapeEntry>,
    scale_in: f64,
    zp_in: u8,
    scale_out: f64,
    zp_out: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    weight_scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    weight_zp: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    weights_b64: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bias_b64: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    shortcut_from: Option<usize>,
}

fn digest_of(input: &InputEntry, layers: &[LayerEntry]) -> String {
    let canonical = serde_json::to_vec(&(input, layers)).expect("manifest serializes");
    hex::encode(Sha256::digest(canonical))
}

fn encode_bias(bias: &[i32]) -> String {
    let bytes: Vec<u8> = bias.iter().flat_map(|b| b.to_le_bytes()).collect();
    B64.encode(bytes)
}

fn entry_of(layer: &Layer) -> LayerEntry {
    let mut entry = LayerEntry {
        kind: Kind::Relu,
        shape: None,
        scale_in: layer.input.scale,
        zp_in: layer.input.zero_point,
        scale_out: layer.output.scale,
        zp_out: layer.output.zero_point,
        weight_scale: None,
        weight_zp: None,
        weights_b64: None,
        bias_b64: None,
        shortcut_from: None,
    };
    let mut weights = |t: &QTensor, bias: &[i32]| {
        entry.weight_scale = Some(t.scale);
        entry.weight_zp = Some(t.zero_point);
        entry.weights_b64 = Some(B64.encode(&t.data));
        entry.bias_b64 = Some(encode_bias(bias));
    };
    let (kind, shape) = match &layer.op {
        LayerOp::Conv(c) => {
            weights(&c.weights, &c.bias);
            let s = c.shape;
            (
                Kind::Conv,
                Some(ShapeEntry {
                    filters: Some(s.filters),
                    channels: Some(s.channels),
                    kernel_h: Some(s.kernel_h),
                    kernel_w: Some(s.kernel_w),
                    stride: Some(s.stride),
                    padding: Some(s.padding),
                    ..Default::default()
                }),
            )
        }
        LayerOp::Dense(d) => {
            weights(&d.weights, &d.bias);
            (
                Kind::Dense,
                Some(ShapeEntry {
                    units: Some(d.units),
                    inputs: Some(d.inputs),
                    ..Default::default()
                }),
            )
        }
        LayerOp::Relu => (Kind::Relu, None),
        LayerOp::MaxPool { size, stride } | LayerOp::AvgPool { size, stride } => {
            let kind = if matches!(layer.op, LayerOp::MaxPool { .. }) {
                Kind::MaxPool
            } else {
                Kind::AvgPool
            };
            (
                kind,
                Some(ShapeEntry {
                    size: Some(*size),
                    stride: Some(*stride),
                    ..Default::default()
                }),
            )
        }
        LayerOp::GlobalAvgPool => (Kind::GlobalAvgPool, None),
        LayerOp::Add { shortcut_from } => {
            entry.shortcut_from = Some(*shortcut_from);
            (Kind::Add, None)
        }
        LayerOp::Argmax => (Kind::Argmax, None),
    };
    entry.kind = kind;
    entry.shape = shape;
    entry
}

fn input_entry(model: &QModel) -> InputEntry {
    InputEntry {
        height: model.input_height,
        width: model.input_width,
        channels: model.input_channels,
        scale: model.input.scale,
        zero_point: model.input.zero_point,
    }
}

/// Content digest of a model (the one stored in its manifest).
pub fn model_digest(model: &QModel) -> String {
    let layers: Vec<LayerEntry> = model.layers.iter().map(entry_of).collect();
    digest_of(&input_entry(model), &layers)
}

pub fn to_manifest_string(model: &QModel) -> Result<String> {
    model.validate()?;
    let input = input_entry(model);
    let layers: Vec<LayerEntry> = model.layers.iter().map(entry_of).collect();
    let digest = digest_of(&input, &layers);
    let manifest = Manifest {
        version: MODEL_VERSION,
        input,
        layers,
        digest,
    };
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    Ok(text)
}

pub fn save_model(model: &QModel, path: &Path) -> Result<()> {
    let text = to_manifest_string(model)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<QModel> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_model(&text).map_err(|e| match e {
        Error::Model(msg) => Error::Model(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn parse_model(text: &str) -> Result<QModel> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let manifest: Manifest = serde_path_to_error::deserialize(de)
        .map_err(|e| Error::Model(format!("schema violation at `{}`: {}", e.path(), e.inner())))?;
    if manifest.version != MODEL_VERSION {
        return Err(Error::Model(format!(
            "version: unsupported manifest version {} (expected {MODEL_VERSION})",
            manifest.version
        )));
    }
    let digest = digest_of(&manifest.input, &manifest.layers);
    if digest != manifest.digest {
        return Err(Error::Model(format!(
            "digest: content hashes to {digest}, manifest records {}",
            manifest.digest
        )));
    }
    let layers = manifest
        .layers
        .iter()
        .enumerate()
        .map(|(i, entry)| {
            layer_of(entry).map_err(|msg| Error::Model(format!("layers[{i}].{msg}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let input = &manifest.input;
    let model = QModel {
        input_height: input.height,
        input_width: input.width,
        input_channels: input.channels,
        input: QParams::new(input.scale, input.zero_point)
            .map_err(|e| Error::Model(format!("input.scale: {e}")))?,
        layers,
    };
    model.validate()?;
    Ok(model)
}

fn layer_of(entry: &LayerEntry) -> std::result::Result<Layer, String> {
    let params = |scale: f64, zp: u8, field: &str| {
        QParams::new(scale, zp).map_err(|e| format!("{field}: {e}"))
    };
    let input = params(entry.scale_in, entry.zp_in, "scale_in")?;
    let output = params(entry.scale_out, entry.zp_out, "scale_out")?;
    let shape = || entry.shape.as_ref().ok_or_else(|| "shape: missing".to_string());
    let need = |value: Option<usize>, field: &str| value.ok_or_else(|| format!("shape.{field}: missing"));
    let weights = |dims: Vec<usize>| -> std::result::Result<(QTensor, Vec<i32>), String> {
        let scale = entry.weight_scale.ok_or("weight_scale: missing")?;
        let zp = entry.weight_zp.ok_or("weight_zp: missing")?;
        let raw = B64
            .decode(entry.weights_b64.as_deref().ok_or("weights_b64: missing")?)
            .map_err(|e| format!("weights_b64: {e}"))?;
        let tensor = QTensor::new(dims, raw, params(scale, zp, "weight_scale")?)
            .map_err(|e| format!("weights_b64: {e}"))?;
        let bias_raw = B64
            .decode(entry.bias_b64.as_deref().ok_or("bias_b64: missing")?)
            .map_err(|e| format!("bias_b64: {e}"))?;
        if bias_raw.len() % 4 != 0 {
            return Err(format!("bias_b64: {} bytes is not a whole number of i32", bias_raw.len()));
        }
        let bias = bias_raw
            .chunks_exact(4)
            .map(|c| i32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok((tensor, bias))
    };
    let op = match entry.kind {
        Kind::Conv => {
            let s = shape()?;
            let shape = LayerShape {
                filters: need(s.filters, "filters")?,
                channels: need(s.channels, "channels")?,
                kernel_h: need(s.kernel_h, "kernel_h")?,
                kernel_w: need(s.kernel_w, "kernel_w")?,
                stride: need(s.stride, "stride")?,
                padding: s.padding.ok_or("shape.padding: missing")?,
            };
            let (weights, bias) =
                weights(vec![shape.filters, shape.kernel_h, shape.kernel_w, shape.channels])?;
            LayerOp::Conv(ConvLayer { shape, weights, bias })
        }
        Kind::Dense => {
            let s = shape()?;
            let units = need(s.units, "units")?;
            let inputs = need(s.inputs, "inputs")?;
            let (weights, bias) = weights(vec![units, inputs])?;
            LayerOp::Dense(DenseLayer { units, inputs, weights, bias })
        }
        Kind::MaxPool | Kind::AvgPool => {
            let s = shape()?;
            let size = need(s.size, "size")?;
            let stride = need(s.stride, "stride")?;
            if entry.kind == Kind::MaxPool {
                LayerOp::MaxPool { size, stride }
            } else {
                LayerOp::AvgPool { size, stride }
            }
        }
        Kind::Relu => LayerOp::Relu,
        Kind::GlobalAvgPool => LayerOp::GlobalAvgPool,
        Kind::Add => LayerOp::Add {
            shortcut_from: entry.shortcut_from.ok_or("shortcut_from: missing")?,
        },
        Kind::Argmax => LayerOp::Argmax,
    };
    Ok(Layer { op, input, output })
}
