//! Quantized model graph, its on-disk manifest, datasets and the synthetic
//! fixture generator.

mod dataset;
mod fixture;
mod manifest;

pub use dataset::{load_cifar10, load_dataset, parse_cifar10, save_cifar10, save_dataset, Dataset};
pub use fixture::{generate_fixture, FixturePreset};
pub use manifest::{load_model, model_digest, parse_model, save_model, to_manifest_string, MODEL_VERSION};

use crate::engine::{LayerShape, QParams, QTensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub shape: LayerShape,
    /// `[filters, kernel_h, kernel_w, channels]`.
    pub weights: QTensor,
    pub bias: Vec<i32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub units: usize,
    pub inputs: usize,
    /// `[units, inputs]`, inputs in flattened HWC order.
    pub weights: QTensor,
    pub bias: Vec<i32>,
}

impl DenseLayer {
    pub fn shape(&self) -> LayerShape {
        LayerShape::dense(self.units, self.inputs)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerOp {
    Conv(ConvLayer),
    Dense(DenseLayer),
    Relu,
    MaxPool { size: usize, stride: usize },
    AvgPool { size: usize, stride: usize },
    GlobalAvgPool,
    /// Adds the previous layer's output and the output of `shortcut_from`.
    Add { shortcut_from: usize },
    /// Terminal marker: classification is the argmax of its input.
    Argmax,
}

impl LayerOp {
    pub fn kind(&self) -> &'static str {
        match self {
            LayerOp::Conv(_) => "conv",
            LayerOp::Dense(_) => "dense",
            LayerOp::Relu => "relu",
            LayerOp::MaxPool { .. } => "maxpool",
            LayerOp::AvgPool { .. } => "avgpool",
            LayerOp::GlobalAvgPool => "globalavgpool",
            LayerOp::Add { .. } => "add",
            LayerOp::Argmax => "argmax",
        }
    }
}

/// One node of the graph with the quantization of its (primary) input and output.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub op: LayerOp,
    pub input: QParams,
    pub output: QParams,
}

/// A sequential graph; `Add` layers reach back to an earlier layer's output.
#[derive(Debug, Clone, PartialEq)]
pub struct QModel {
    pub input_height: usize,
    pub input_width: usize,
    pub input_channels: usize,
    pub input: QParams,
    pub layers: Vec<Layer>,
}

/// (height, width, channels) of a layer output.
pub type Dims = (usize, usize, usize);

impl QModel {
    pub fn input_len(&self) -> usize {
        self.input_height * self.input_width * self.input_channels
    }

    /// Layer indices of the convolutions, in order. Approximation plans assign
    /// multipliers to exactly these layers.
    pub fn conv_layers(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| matches!(l.op, LayerOp::Conv(_)))
            .map(|(i, _)| i)
            .collect()
    }

    /// Number of output classes (width of the final layer).
    pub fn classes(&self) -> Result<usize> {
        Ok(self.validate()?.last().map_or(0, |d| d.0 * d.1 * d.2))
    }

    /// Checks wiring, shapes and quantization parameters; returns every layer's output dims.
    pub fn validate(&self) -> Result<Vec<Dims>> {
        let err = |i: usize, msg: String| Error::Model(format!("layers[{i}]: {msg}"));
        QParams::new(self.input.scale, self.input.zero_point)
            .map_err(|e| Error::Model(format!("input: {e}")))?;
        if self.input_len() == 0 {
            return Err(Error::Model("input: dimensions must be positive".into()));
        }
        if self.layers.is_empty() {
            return Err(Error::Model("layers: model has no layers".into()));
        }
        let mut dims: Vec<Dims> = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let (in_dims, in_q) = if i == 0 {
                ((self.input_height, self.input_width, self.input_channels), self.input)
            } else {
                (dims[i - 1], self.layers[i - 1].output)
            };
            if layer.input != in_q {
                return Err(err(i, format!(
                    "input quantization {:?} does not match the producer's output {:?}",
                    layer.input, in_q
                )));
            }
            QParams::new(layer.output.scale, layer.output.zero_point).map_err(|e| err(i, e.to_string()))?;
            let same_q = |what: &str| -> Result<()> {
                if layer.output != layer.input {
                    Err(err(i, format!("{what} must keep its input quantization")))
                } else {
                    Ok(())
                }
            };
            let (h, w, c) = in_dims;
            let out = match &layer.op {
                LayerOp::Conv(conv) => {
                    let s = conv.shape;
                    s.validate().map_err(|e| err(i, e.to_string()))?;
                    if s.channels != c {
                        return Err(err(i, format!("conv expects {} channels, input has {c}", s.channels)));
                    }
                    let expected = vec![s.filters, s.kernel_h, s.kernel_w, s.channels];
                    if conv.weights.shape != expected || conv.weights.data.len() != s.weight_count() {
                        return Err(err(i, format!("weights shape {:?}, expected {expected:?}", conv.weights.shape)));
                    }
                    if conv.bias.len() != s.filters {
                        return Err(err(i, format!("{} biases for {} filters", conv.bias.len(), s.filters)));
                    }
                    QParams::new(conv.weights.scale, conv.weights.zero_point).map_err(|e| err(i, format!("weights: {e}")))?;
                    let (oh, ow) = s.output_dims(h, w).map_err(|e| err(i, e.to_string()))?;
                    (oh, ow, s.filters)
                }
                LayerOp::Dense(dense) => {
                    if dense.inputs != h * w * c {
                        return Err(err(i, format!("dense expects {} inputs, previous layer yields {}", dense.inputs, h * w * c)));
                    }
                    if dense.units == 0 || dense.weights.shape != vec![dense.units, dense.inputs] || dense.weights.data.len() != dense.units * dense.inputs {
                        return Err(err(i, format!("weights shape {:?}, expected [{}, {}]", dense.weights.shape, dense.units, dense.inputs)));
                    }
                    if dense.bias.len() != dense.units {
                        return Err(err(i, format!("{} biases for {} units", dense.bias.len(), dense.units)));
                    }
                    QParams::new(dense.weights.scale, dense.weights.zero_point).map_err(|e| err(i, format!("weights: {e}")))?;
                    (1, 1, dense.units)
                }
                LayerOp::Relu => {
                    same_q("relu")?;
                    in_dims
                }
                LayerOp::MaxPool { size, stride } | LayerOp::AvgPool { size, stride } => {
                    if matches!(layer.op, LayerOp::MaxPool { .. }) {
                        same_q("maxpool")?;
                    }
                    if *size == 0 || *stride == 0 || h < *size || w < *size {
                        return Err(err(i, format!("{size}x{size}/{stride} pool does not fit {h}x{w}")));
                    }
                    ((h - size) / stride + 1, (w - size) / stride + 1, c)
                }
                LayerOp::GlobalAvgPool => (1, 1, c),
                LayerOp::Add { shortcut_from } => {
                    if *shortcut_from >= i {
                        return Err(err(i, format!("shortcut_from {shortcut_from} must name an earlier layer")));
                    }
                    if dims[*shortcut_from] != in_dims {
                        return Err(err(i, format!(
                            "add operands differ: {:?} vs shortcut {:?}",
                            in_dims, dims[*shortcut_from]
                        )));
                    }
                    in_dims
                }
                LayerOp::Argmax => {
                    if i + 1 != self.layers.len() {
                        return Err(err(i, "argmax must be the last layer".into()));
                    }
                    same_q("argmax")?;
                    in_dims
                }
            };
            dims.push(out);
        }
        Ok(dims)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::Padding;

    fn q(scale: f64, zp: u8) -> QParams {
        QParams::new(scale, zp).unwrap()
    }

    fn one_conv() -> QModel {
        let shape = LayerShape {
            filters: 2,
            channels: 1,
            kernel_h: 3,
            kernel_w: 3,
            stride: 1,
            padding: Padding::Same,
        };
        QModel {
            input_height: 4,
            input_width: 4,
            input_channels: 1,
            input: q(0.1, 0),
            layers: vec![
                Layer {
                    op: LayerOp::Conv(ConvLayer {
                        shape,
                        weights: QTensor::new(vec![2, 3, 3, 1], vec![130; 18], q(0.05, 128)).unwrap(),
                        bias: vec![5, -5],
                    }),
                    input: q(0.1, 0),
                    output: q(0.2, 100),
                },
                Layer { op: LayerOp::Add { shortcut_from: 0 }, input: q(0.2, 100), output: q(0.3, 90) },
            ],
        }
    }

    #[test]
    fn shortcut_must_point_backwards() {
        let mut m = one_conv();
        // add reading the layer right before it would be x + x; allowed
        assert!(m.validate().is_ok());
        m.layers[1].op = LayerOp::Add { shortcut_from: 1 };
        assert!(m.validate().is_err());
    }

    #[test]
    fn validation_catches_mismatches() {
        let mut m = one_conv();
        assert_eq!(m.validate().unwrap(), vec![(4, 4, 2), (4, 4, 2)]);
        m.layers[1].input = q(0.2, 99);
        assert!(m.validate().unwrap_err().to_string().contains("layers[1]"));
        let mut m = one_conv();
        if let LayerOp::Conv(c) = &mut m.layers[0].op {
            c.bias.pop();
        }
        assert!(m.validate().is_err());
        let mut m = one_conv();
        m.layers.insert(0, Layer { op: LayerOp::Argmax, input: q(0.1, 0), output: q(0.1, 0) });
        assert!(m.validate().is_err());
    }
}
