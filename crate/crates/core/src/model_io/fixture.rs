//! Deterministic synthetic models and self-labeled datasets.
//!
//! Weights are He-initialized Gaussians quantized per tensor with min/max
//! asymmetric parameters. Biases center each filter's pre-activation over the
//! calibration images (a folded batch-norm stand-in), and every layer's output
//! quantization is fitted to the range it actually produces. Labels are the
//! exact network's own predictions.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{ConvLayer, Dataset, DenseLayer, Layer, LayerOp, QModel};
use crate::axmult::MultTable;
use crate::engine::{
    add, global_avg_pool, quantize_value, relu, requantize, round_half_away, CompiledConv, FeatureMap, LayerShape,
    Network, Padding, ProductSlab, QParams, QTensor,
};
use crate::error::{Error, Result};

/// Images used to fit biases and activation ranges.
const CALIBRATION_IMAGES: usize = 32;
const CLASSES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FixturePreset {
    /// 8x8 input, three convolutions, global pooling and a dense classifier.
    Tiny,
    /// The ResNet-8 graph at 8x8 input with 4/8/16 filters per stage.
    Resnet8Mini,
    /// ResNet-8 shaped: 32x32x3 input, 16/32/64 filters, seven convolutions,
    /// three shortcut adds, global pooling and a dense classifier.
    Resnet8,
}

impl FixturePreset {
    pub const ALL: [FixturePreset; 3] = [FixturePreset::Tiny, FixturePreset::Resnet8Mini, FixturePreset::Resnet8];

    pub fn name(self) -> &'static str {
        match self {
            FixturePreset::Tiny => "tiny",
            FixturePreset::Resnet8Mini => "resnet8-mini",
            FixturePreset::Resnet8 => "resnet8",
        }
    }

    fn input_side(self) -> usize {
        match self {
            FixturePreset::Resnet8 => 32,
            _ => 8,
        }
    }

    fn topology(self) -> Vec<Node> {
        use Node::*;
        match self {
            FixturePreset::Tiny => vec![
                Conv { filters: 8, stride: 1 },
                Relu,
                Conv { filters: 8, stride: 2 },
                Relu,
                Conv { filters: 16, stride: 2 },
                Relu,
                GlobalAvgPool,
                Dense { units: CLASSES },
                Argmax,
            ],
            FixturePreset::Resnet8Mini | FixturePreset::Resnet8 => {
                let w = if self == FixturePreset::Resnet8 { 16 } else { 4 };
                vec![
                    Conv { filters: w, stride: 1 },
                    Relu,
                    Conv { filters: w, stride: 1 },
                    Relu,
                    Conv { filters: w, stride: 1 },
                    Add { shortcut_from: 1 },
                    Relu,
                    Conv { filters: 2 * w, stride: 2 },
                    Relu,
                    Conv { filters: 2 * w, stride: 1 },
                    Add { shortcut_from: 8 },
                    Relu,
                    Conv { filters: 4 * w, stride: 2 },
                    Relu,
                    Conv { filters: 4 * w, stride: 1 },
                    Add { shortcut_from: 13 },
                    Relu,
                    GlobalAvgPool,
                    Dense { units: CLASSES },
                    Argmax,
                ]
            }
        }
    }
}

impl fmt::Display for FixturePreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FixturePreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FixturePreset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown fixture preset `{s}` (expected tiny, resnet8-mini or resnet8)")))
    }
}

enum Node {
    Conv { filters: usize, stride: usize },
    Dense { units: usize },
    Relu,
    Add { shortcut_from: usize },
    GlobalAvgPool,
    Argmax,
}

/// Quantization covering `[lo, hi]` (widened to include 0).
fn fit_params(lo: f64, hi: f64) -> QParams {
    let (lo, hi) = (lo.min(0.0), hi.max(0.0));
    let scale = ((hi - lo) / 255.0).max(1e-6);
    let zp = round_half_away(-lo / scale).clamp(0, 255) as u8;
    QParams { scale, zero_point: zp }
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

fn gaussian_weights(rng: &mut ChaCha8Rng, shape: Vec<usize>, fan_in: usize) -> QTensor {
    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
    let count: usize = shape.iter().product();
    let mut real: Vec<f64> = (0..count).map(|_| normal.sample(rng)).collect();
    // small layers get an exactly zero sample mean
    let mean = real.iter().sum::<f64>() / count as f64;
    real.iter_mut().for_each(|x| *x -= mean);
    let (lo, hi) = range(real.iter().copied());
    let params = fit_params(lo, hi);
    let data = real.iter().map(|&x| quantize_value(x, params)).collect();
    QTensor::new(shape, data, params).expect("consistent shape")
}

/// Smooth random patterns (two sinusoids per channel) plus noise, in [-1, 1].
fn synthetic_images(rng: &mut ChaCha8Rng, count: usize, side: usize, params: QParams) -> Vec<u8> {
    let noise = Normal::new(0.0, 0.15).expect("positive std");
    let mut data = Vec::with_capacity(count * side * side * 3);
    for _ in 0..count {
        let waves: Vec<[f64; 4]> = (0..6)
            .map(|_| {
                [
                    rng.gen_range(0.2..1.6),
                    rng.gen_range(0.2..1.6),
                    rng.gen_range(0.0..std::f64::consts::TAU),
                    rng.gen_range(0.2..0.6),
                ]
            })
            .collect();
        for y in 0..side {
            for x in 0..side {
                for c in 0..3 {
                    let v: f64 = waves[2 * c..2 * c + 2]
                        .iter()
                        .map(|[fy, fx, phase, amp]| amp * (fy * y as f64 + fx * x as f64 + phase).sin())
                        .sum::<f64>()
                        + noise.sample(rng);
                    data.push(quantize_value(v.clamp(-1.0, 1.0), params));
                }
            }
        }
    }
    data
}

/// Builds a model of the given preset and a dataset of `images` samples labeled
/// by that model's exact predictions. The model depends only on `seed` and `preset`.
pub fn generate_fixture(seed: u64, preset: FixturePreset, images: usize) -> Result<(QModel, Dataset)> {
    let stream = |id: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(id);
        rng
    };
    let mut rng = stream(0);
    let side = preset.input_side();
    let input_q = QParams { scale: 2.0 / 255.0, zero_point: 128 };
    let pixels = synthetic_images(&mut stream(2), images, side, input_q);

    // calibration images are independent of the dataset size
    let calib_pixels = synthetic_images(&mut stream(1), CALIBRATION_IMAGES, side, input_q);
    let mut current: Vec<FeatureMap> = calib_pixels
        .chunks_exact(side * side * 3)
        .map(|img| FeatureMap::new(side, side, 3, img.to_vec()))
        .collect::<Result<_>>()?;

    let slab = ProductSlab::new(&[MultTable::exact()]);
    let mut outputs: Vec<Vec<FeatureMap>> = Vec::new();
    let mut layers: Vec<Layer> = Vec::new();
    let mut q = input_q;

    for node in preset.topology() {
        let (op, out_q, next) = match node {
            Node::Conv { filters, stride } => {
                let channels = current[0].channels;
                let shape = LayerShape { filters, channels, kernel_h: 3, kernel_w: 3, stride, padding: Padding::Same };
                let weights = gaussian_weights(&mut rng, vec![filters, 3, 3, channels], shape.kernel_len());
                let (bias, acc) = centered(&slab, shape, &weights, &current, q.zero_point)?;
                let real = q.scale * weights.scale;
                let (lo, hi) = range(acc.iter().flat_map(|(_, _, a)| a.iter()).map(|&a| a as f64 * real));
                let out_q = fit_params(lo, hi);
                let next = requantized(&acc, real / out_q.scale, out_q, filters)?;
                (LayerOp::Conv(ConvLayer { shape, weights, bias }), out_q, next)
            }
            Node::Dense { units } => {
                let flat: Vec<FeatureMap> = current
                    .iter()
                    .map(|m| FeatureMap::new(1, 1, m.data.len(), m.data.clone()))
                    .collect::<Result<_>>()?;
                let inputs = flat[0].channels;
                let shape = LayerShape::dense(units, inputs);
                let weights = gaussian_weights(&mut rng, vec![units, inputs], inputs);
                let (bias, acc) = centered(&slab, shape, &weights, &flat, q.zero_point)?;
                let real = q.scale * weights.scale;
                let (lo, hi) = range(acc.iter().flat_map(|(_, _, a)| a.iter()).map(|&a| a as f64 * real));
                let out_q = fit_params(lo, hi);
                let next = requantized(&acc, real / out_q.scale, out_q, units)?;
                (LayerOp::Dense(DenseLayer { units, inputs, weights, bias }), out_q, next)
            }
            Node::Relu => (LayerOp::Relu, q, current.iter().map(|m| relu(m, q)).collect()),
            Node::Add { shortcut_from } => {
                let short_q = layers[shortcut_from].output;
                let shortcut = &outputs[shortcut_from];
                let real = |m: &FeatureMap, p: QParams| -> Vec<f64> {
                    m.data.iter().map(|&v| p.scale * (v as f64 - p.zero_point as f64)).collect()
                };
                let (lo, hi) = range(current.iter().zip(shortcut).flat_map(|(a, b)| {
                    real(a, q).into_iter().zip(real(b, short_q)).map(|(x, y)| x + y).collect::<Vec<_>>()
                }));
                let out_q = fit_params(lo, hi);
                let next = current
                    .iter()
                    .zip(shortcut)
                    .map(|(a, b)| add(a, q, b, short_q, out_q))
                    .collect::<Result<_>>()?;
                (LayerOp::Add { shortcut_from }, out_q, next)
            }
            Node::GlobalAvgPool => (LayerOp::GlobalAvgPool, q, current.iter().map(|m| global_avg_pool(m, q, q)).collect()),
            Node::Argmax => (LayerOp::Argmax, q, current.clone()),
        };
        layers.push(Layer { op, input: q, output: out_q });
        outputs.push(current);
        current = next;
        q = out_q;
    }

    let model = QModel {
        input_height: side,
        input_width: side,
        input_channels: 3,
        input: input_q,
        layers,
    };
    model.validate()?;
    let network = Network::exact(&model)?;
    let labels = pixels
        .chunks_exact(side * side * 3)
        .map(|img| network.classify(img).map(|c| c as u8))
        .collect::<Result<Vec<_>>>()?;
    let dataset = Dataset::new(side, side, 3, pixels, labels)?;
    Ok((model, dataset))
}

type Accumulators = Vec<(usize, usize, Vec<i32>)>;

/// Bias that zeroes each filter's mean accumulator over `inputs`, and the
/// accumulators with that bias applied.
fn centered(
    slab: &ProductSlab,
    shape: LayerShape,
    weights: &QTensor,
    inputs: &[FeatureMap],
    input_zp: u8,
) -> Result<(Vec<i32>, Accumulators)> {
    let filters = shape.filters;
    let zero = vec![0; filters];
    let conv = CompiledConv::new(shape, weights, &zero, None, slab, |_, _, _, _| Ok(0), None)?;
    let mut acc: Accumulators = inputs
        .iter()
        .map(|m| conv.accumulate(slab, m, input_zp))
        .collect::<Result<_>>()?;
    let mut sums = vec![0f64; filters];
    let mut count = 0usize;
    for (_, _, a) in &acc {
        for (i, &v) in a.iter().enumerate() {
            sums[i % filters] += v as f64;
        }
        count += a.len() / filters;
    }
    let bias: Vec<i32> = sums.iter().map(|s| -round_half_away(s / count as f64) as i32).collect();
    for (_, _, a) in &mut acc {
        for (i, v) in a.iter_mut().enumerate() {
            *v += bias[i % filters];
        }
    }
    Ok((bias, acc))
}

fn requantized(acc: &Accumulators, multiplier: f64, out_q: QParams, channels: usize) -> Result<Vec<FeatureMap>> {
    acc.iter()
        .map(|(oh, ow, a)| {
            let data = a.iter().map(|&v| requantize(v, multiplier, out_q.zero_point)).collect();
            FeatureMap::new(*oh, *ow, channels, data)
        })
        .collect()
}
