//! Quantized uint8 inference where every product inside a convolution or
//! dense layer is looked up in a per-weight multiplier table.
//!
//! Operands are recentered to signed 8-bit (`sx = qx - 128`, `sw = qw - 128`)
//! so the 2's-complement multipliers apply directly; the zero-point cross
//! terms are exact sums:
//!
//! ```text
//! acc = sum T(sx, sw*) + (128 - w_zp) * sum sx + (128 - x_zp) * sum sw
//!     + K (128 - x_zp)(128 - w_zp) + bias
//! ```
//!
//! `sw*` is the (possibly tuned) weight operand; `sum sw` always uses the
//! stored weights. Tensors are NHWC, row-major. Conv weights are laid out
//! `[filter][kernel row][kernel col][channel]`.

use std::sync::Arc;

use crate::axmult::{MultTable, TABLE_LEN};
use crate::error::{Error, Result};
use crate::model_io::{LayerOp, QModel};

/// Affine quantization parameters: `real = scale * (q - zero_point)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QParams {
    pub scale: f64,
    pub zero_point: u8,
}

impl QParams {
    pub fn new(scale: f64, zero_point: u8) -> Result<Self> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::Shape(format!("scale must be positive, got {scale}")));
        }
        Ok(Self { scale, zero_point })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QTensor {
    pub shape: Vec<usize>,
    pub data: Vec<u8>,
    pub scale: f64,
    pub zero_point: u8,
}

impl QTensor {
    pub fn new(shape: Vec<usize>, data: Vec<u8>, params: QParams) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Shape(format!(
                "tensor shape {shape:?} holds {expected} elements, data has {}",
                data.len()
            )));
        }
        QParams::new(params.scale, params.zero_point)?;
        Ok(Self {
            shape,
            data,
            scale: params.scale,
            zero_point: params.zero_point,
        })
    }

    pub fn params(&self) -> QParams {
        QParams {
            scale: self.scale,
            zero_point: self.zero_point,
        }
    }

    /// Elements recentered to signed 8-bit (`q - 128`).
    pub fn signed(&self) -> Vec<i8> {
        self.data.iter().map(|&q| (q as i16 - 128) as i8).collect()
    }
}

/// Round half away from zero, the single rounding rule of the engine.
#[inline]
pub fn round_half_away(x: f64) -> i64 {
    x.round() as i64
}

#[inline]
fn saturate(value: i64) -> u8 {
    value.clamp(0, 255) as u8
}

pub fn quantize_value(x: f64, params: QParams) -> u8 {
    saturate(round_half_away(x / params.scale) + params.zero_point as i64)
}

pub fn quantize(values: &[f64], shape: Vec<usize>, params: QParams) -> Result<QTensor> {
    let data = values.iter().map(|&x| quantize_value(x, params)).collect();
    QTensor::new(shape, data, params)
}

pub fn dequantize(tensor: &QTensor) -> Vec<f64> {
    tensor
        .data
        .iter()
        .map(|&q| tensor.scale * (q as f64 - tensor.zero_point as f64))
        .collect()
}

/// Scales a 32-bit accumulator into the output quantization.
#[inline]
pub fn requantize(acc: i32, multiplier: f64, zero_point: u8) -> u8 {
    saturate(round_half_away(acc as f64 * multiplier) + zero_point as i64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    Same,
    Valid,
}

/// Geometry of one convolution: `filters` filters of `channels` kernels each.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerShape {
    pub filters: usize,
    pub channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: Padding,
}

impl LayerShape {
    /// Dense layers are 1x1 convolutions over a 1x1 map of `inputs` channels.
    pub fn dense(units: usize, inputs: usize) -> Self {
        Self {
            filters: units,
            channels: inputs,
            kernel_h: 1,
            kernel_w: 1,
            stride: 1,
            padding: Padding::Valid,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.filters == 0
            || self.channels == 0
            || self.kernel_h == 0
            || self.kernel_w == 0
            || self.stride == 0
        {
            return Err(Error::Shape(format!("layer dimensions must be positive: {self:?}")));
        }
        Ok(())
    }

    /// Weights per filter.
    pub fn kernel_len(&self) -> usize {
        self.kernel_h * self.kernel_w * self.channels
    }

    pub fn weight_count(&self) -> usize {
        self.filters * self.kernel_len()
    }

    pub fn output_dims(&self, height: usize, width: usize) -> Result<(usize, usize)> {
        match self.padding {
            Padding::Same => Ok((height.div_ceil(self.stride), width.div_ceil(self.stride))),
            Padding::Valid => {
                if height < self.kernel_h || width < self.kernel_w {
                    return Err(Error::Shape(format!(
                        "{}x{} kernel does not fit a {height}x{width} input",
                        self.kernel_h, self.kernel_w
                    )));
                }
                Ok((
                    (height - self.kernel_h) / self.stride + 1,
                    (width - self.kernel_w) / self.stride + 1,
                ))
            }
        }
    }

    /// Top/left zero padding (TensorFlow convention: extra padding goes bottom/right).
    fn pad_before(&self, height: usize, width: usize) -> (usize, usize) {
        match self.padding {
            Padding::Valid => (0, 0),
            Padding::Same => {
                let (oh, ow) = (height.div_ceil(self.stride), width.div_ceil(self.stride));
                let total_h = ((oh - 1) * self.stride + self.kernel_h).saturating_sub(height);
                let total_w = ((ow - 1) * self.stride + self.kernel_w).saturating_sub(width);
                (total_h / 2, total_w / 2)
            }
        }
    }

    /// `(filter, channel, row, col)` of a flat weight index.
    pub fn coordinates(&self, index: usize) -> (usize, usize, usize, usize) {
        let channel = index % self.channels;
        let rest = index / self.channels;
        let col = rest % self.kernel_w;
        let rest = rest / self.kernel_w;
        let row = rest % self.kernel_h;
        (rest / self.kernel_h, channel, row, col)
    }
}

/// Kernel-level multiplication skip: only weights inside `[mean - k std, mean + k std]`
/// are multiplied. Statistics are over a layer's signed quantized weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KlmsRule {
    pub k: f64,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

impl KlmsRule {
    pub fn from_weights(k: f64, signed_weights: &[i8]) -> Result<Self> {
        if !(k.is_finite() && k > 0.0) {
            return Err(Error::InvalidArgument(format!("KLMS width k must be positive, got {k}")));
        }
        if signed_weights.is_empty() {
            return Err(Error::Shape("KLMS statistics of an empty layer".into()));
        }
        let n = signed_weights.len() as f64;
        let mean = signed_weights.iter().map(|&w| w as f64).sum::<f64>() / n;
        let var = signed_weights
            .iter()
            .map(|&w| (w as f64 - mean).powi(2))
            .sum::<f64>()
            / n;
        Ok(Self {
            k,
            mean,
            std: var.sqrt(),
        })
    }

    pub fn keeps(&self, signed_weight: i8) -> bool {
        let w = signed_weight as f64;
        w >= self.mean - self.k * self.std && w <= self.mean + self.k * self.std
    }
}

/// Number of products a layer performs: every output position times every kept weight.
pub fn count_multiplications(
    shape: &LayerShape,
    output_dims: (usize, usize),
    klms: Option<&KlmsRule>,
    signed_weights: &[i8],
) -> u64 {
    let positions = (output_dims.0 * output_dims.1) as u64;
    let kept = match klms {
        None => shape.weight_count() as u64,
        Some(rule) => signed_weights.iter().filter(|&&w| rule.keeps(w)).count() as u64,
    };
    positions * kept
}

/// All product tables of one network side by side, plus a trailing all-zero
/// table that skipped multiplications point into.
#[derive(Debug, Clone)]
pub struct ProductSlab {
    data: Vec<i32>,
    energies: Vec<f64>,
}

impl ProductSlab {
    pub fn new(tables: &[Arc<MultTable>]) -> Self {
        let mut data = Vec::with_capacity((tables.len() + 1) * TABLE_LEN);
        for table in tables {
            data.extend_from_slice(table.products());
        }
        data.resize((tables.len() + 1) * TABLE_LEN, 0);
        let mut energies: Vec<f64> = tables.iter().map(|t| t.energy()).collect();
        energies.push(0.0);
        Self { data, energies }
    }

    pub fn table_count(&self) -> usize {
        self.energies.len() - 1
    }

    fn skip_slot(&self) -> usize {
        self.energies.len() - 1
    }
}

/// Activation map of one image, HWC.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureMap {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<u8>,
}

impl FeatureMap {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::Shape(format!(
                "{height}x{width}x{channels} map needs {} bytes, got {}",
                height * width * channels,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    fn flattened(&self) -> FeatureMap {
        FeatureMap {
            height: 1,
            width: 1,
            channels: self.data.len(),
            data: self.data.clone(),
        }
    }
}

/// A convolution (or dense layer) with every weight bound to a table slot.
#[derive(Debug, Clone)]
pub struct CompiledConv {
    shape: LayerShape,
    weight_zp: i32,
    filter_weight_sums: Vec<i32>,
    bias: Vec<i32>,
    /// Slab offset of `T(0 - 128, sw*)` for each weight; the activation adds `qx << 8`.
    routes: Vec<u32>,
    slots: Vec<u16>,
    skip: u16,
}

impl CompiledConv {
    /// `slot_of(filter, channel, row, col)` picks the slab table of each weight;
    /// weights rejected by `klms` are routed to the zero table.
    pub fn new(
        shape: LayerShape,
        weights: &QTensor,
        bias: &[i32],
        operands: Option<&[i8]>,
        slab: &ProductSlab,
        slot_of: impl Fn(usize, usize, usize, usize) -> Result<usize>,
        klms: Option<&KlmsRule>,
    ) -> Result<Self> {
        shape.validate()?;
        let count = shape.weight_count();
        if weights.data.len() != count {
            return Err(Error::Shape(format!(
                "layer expects {count} weights, tensor holds {}",
                weights.data.len()
            )));
        }
        if bias.len() != shape.filters {
            return Err(Error::Shape(format!(
                "layer has {} filters but {} biases",
                shape.filters,
                bias.len()
            )));
        }
        let signed = weights.signed();
        let operands = operands.unwrap_or(&signed);
        if operands.len() != count {
            return Err(Error::Shape(format!(
                "{} weight operands for {count} weights",
                operands.len()
            )));
        }
        let mut routes = Vec::with_capacity(count);
        let mut slots = Vec::with_capacity(count);
        for (index, (&sw, &operand)) in signed.iter().zip(operands).enumerate() {
            let (f, c, r, col) = shape.coordinates(index);
            let slot = if klms.is_some_and(|rule| !rule.keeps(sw)) {
                slab.skip_slot()
            } else {
                let slot = slot_of(f, c, r, col)?;
                if slot >= slab.table_count() {
                    return Err(Error::Plan(format!(
                        "weight ({f},{c},{r},{col}) resolved to table {slot}, only {} loaded",
                        slab.table_count()
                    )));
                }
                slot
            };
            routes.push((slot * TABLE_LEN + (operand as i32 + 128) as usize) as u32);
            slots.push(slot as u16);
        }
        let filter_weight_sums = signed
            .chunks_exact(shape.kernel_len())
            .map(|f| f.iter().map(|&w| w as i32).sum())
            .collect();
        Ok(Self {
            shape,
            weight_zp: weights.zero_point as i32,
            filter_weight_sums,
            bias: bias.to_vec(),
            routes,
            slots,
            skip: slab.skip_slot() as u16,
        })
    }

    pub fn shape(&self) -> &LayerShape {
        &self.shape
    }

    /// Weights not skipped by KLMS.
    pub fn kept_weights(&self) -> usize {
        self.slots.iter().filter(|&&slot| slot != self.skip).count()
    }

    /// Products and their summed table energy, per output position.
    fn per_position(&self, slab: &ProductSlab) -> (u64, f64) {
        let mut kept = 0u64;
        let mut energy = 0.0f64;
        for &slot in &self.slots {
            if slot != self.skip {
                kept += 1;
                energy += slab.energies[slot as usize];
            }
        }
        (kept, energy)
    }

    /// Multiplication count and energy for an `out_h x out_w` output.
    pub fn cost(&self, slab: &ProductSlab, output_dims: (usize, usize)) -> (u64, f64) {
        let positions = (output_dims.0 * output_dims.1) as u64;
        let (kept, energy) = self.per_position(slab);
        (positions * kept, positions as f64 * energy)
    }

    /// Raw 32-bit accumulators, laid out `[out row][out col][filter]`.
    pub fn accumulate(
        &self,
        slab: &ProductSlab,
        input: &FeatureMap,
        input_zp: u8,
    ) -> Result<(usize, usize, Vec<i32>)> {
        let s = &self.shape;
        if input.channels != s.channels {
            return Err(Error::Shape(format!(
                "layer expects {} input channels, got {}",
                s.channels, input.channels
            )));
        }
        let (oh, ow) = s.output_dims(input.height, input.width)?;
        let (pad_top, pad_left) = s.pad_before(input.height, input.width);
        let k = s.kernel_len();
        let x_off = 128 - input_zp as i32;
        let w_off = 128 - self.weight_zp;
        let constant = k as i32 * x_off * w_off;

        let mut patch_rows = vec![0u32; k];
        let mut out = Vec::with_capacity(oh * ow * s.filters);
        for oy in 0..oh {
            for ox in 0..ow {
                let mut sum_sx = 0i32;
                let mut idx = 0;
                for ky in 0..s.kernel_h {
                    let iy = (oy * s.stride + ky) as isize - pad_top as isize;
                    for kx in 0..s.kernel_w {
                        let ix = (ox * s.stride + kx) as isize - pad_left as isize;
                        let inside = iy >= 0
                            && ix >= 0
                            && (iy as usize) < input.height
                            && (ix as usize) < input.width;
                        if inside {
                            let base = (iy as usize * input.width + ix as usize) * s.channels;
                            for &q in &input.data[base..base + s.channels] {
                                sum_sx += q as i32 - 128;
                                patch_rows[idx] = (q as u32) << 8;
                                idx += 1;
                            }
                        } else {
                            // padding carries the zero point, i.e. real 0
                            for _ in 0..s.channels {
                                sum_sx += input_zp as i32 - 128;
                                patch_rows[idx] = (input_zp as u32) << 8;
                                idx += 1;
                            }
                        }
                    }
                }
                for f in 0..s.filters {
                    let routes = &self.routes[f * k..(f + 1) * k];
                    let products: i32 = routes
                        .iter()
                        .zip(&patch_rows)
                        .map(|(&route, &row)| slab.data[(route + row) as usize])
                        .sum();
                    out.push(
                        products
                            + w_off * sum_sx
                            + x_off * self.filter_weight_sums[f]
                            + constant
                            + self.bias[f],
                    );
                }
            }
        }
        Ok((oh, ow, out))
    }
}

fn pool(input: &FeatureMap, size: usize, stride: usize, reduce: impl Fn(&[u8]) -> u8) -> Result<FeatureMap> {
    if size == 0 || stride == 0 || input.height < size || input.width < size {
        return Err(Error::Shape(format!(
            "{size}x{size} pool does not fit a {}x{} map",
            input.height, input.width
        )));
    }
    let oh = (input.height - size) / stride + 1;
    let ow = (input.width - size) / stride + 1;
    let c = input.channels;
    let mut window = Vec::with_capacity(size * size);
    let mut data = Vec::with_capacity(oh * ow * c);
    for oy in 0..oh {
        for ox in 0..ow {
            for ch in 0..c {
                window.clear();
                for ky in 0..size {
                    for kx in 0..size {
                        let (y, x) = (oy * stride + ky, ox * stride + kx);
                        window.push(input.data[(y * input.width + x) * c + ch]);
                    }
                }
                data.push(reduce(&window));
            }
        }
    }
    FeatureMap::new(oh, ow, c, data)
}

fn mean_requantized(values: &[u8], input: QParams, output: QParams) -> u8 {
    let sum: i64 = values.iter().map(|&q| q as i64 - input.zero_point as i64).sum();
    let real_ratio = input.scale / output.scale;
    saturate(
        round_half_away(sum as f64 / values.len() as f64 * real_ratio) + output.zero_point as i64,
    )
}

pub fn relu(input: &FeatureMap, params: QParams) -> FeatureMap {
    FeatureMap {
        data: input.data.iter().map(|&q| q.max(params.zero_point)).collect(),
        ..input.clone()
    }
}

pub fn max_pool(input: &FeatureMap, size: usize, stride: usize) -> Result<FeatureMap> {
    pool(input, size, stride, |w| *w.iter().max().expect("non-empty window"))
}

pub fn avg_pool(
    input: &FeatureMap,
    size: usize,
    stride: usize,
    in_q: QParams,
    out_q: QParams,
) -> Result<FeatureMap> {
    pool(input, size, stride, |w| mean_requantized(w, in_q, out_q))
}

pub fn global_avg_pool(input: &FeatureMap, in_q: QParams, out_q: QParams) -> FeatureMap {
    let c = input.channels;
    let data = (0..c)
        .map(|ch| {
            let column: Vec<u8> = input.data.iter().skip(ch).step_by(c).copied().collect();
            mean_requantized(&column, in_q, out_q)
        })
        .collect();
    FeatureMap {
        height: 1,
        width: 1,
        channels: c,
        data,
    }
}

/// Residual add with both operands realigned to the output scale.
pub fn add(
    a: &FeatureMap,
    a_q: QParams,
    b: &FeatureMap,
    b_q: QParams,
    out_q: QParams,
) -> Result<FeatureMap> {
    if (a.height, a.width, a.channels) != (b.height, b.width, b.channels) {
        return Err(Error::Shape(format!(
            "add operands differ: {}x{}x{} vs {}x{}x{}",
            a.height, a.width, a.channels, b.height, b.width, b.channels
        )));
    }
    let ra = a_q.scale / out_q.scale;
    let rb = b_q.scale / out_q.scale;
    let data = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(&qa, &qb)| {
            let real = ra * (qa as f64 - a_q.zero_point as f64) + rb * (qb as f64 - b_q.zero_point as f64);
            saturate(round_half_away(real) + out_q.zero_point as i64)
        })
        .collect();
    Ok(FeatureMap { data, ..a.clone() })
}

/// First index of the largest value.
pub fn argmax(values: &[u8]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Convolution with per-coordinate table selection, as a standalone call.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_approx(
    input: &QTensor,
    weights: &QTensor,
    bias: &[i32],
    shape: &LayerShape,
    tables: &[Arc<MultTable>],
    resolver: impl Fn(usize, usize, usize, usize) -> usize,
    klms: Option<&KlmsRule>,
    output: QParams,
) -> Result<QTensor> {
    let [1, h, w, c] = input.shape[..] else {
        return Err(Error::Shape(format!(
            "conv input must be 1xHxWxC, got {:?}",
            input.shape
        )));
    };
    let slab = ProductSlab::new(tables);
    let conv = CompiledConv::new(*shape, weights, bias, None, &slab, |f, ch, r, col| Ok(resolver(f, ch, r, col)), klms)?;
    let map = FeatureMap::new(h, w, c, input.data.clone())?;
    let (oh, ow, acc) = conv.accumulate(&slab, &map, input.zero_point)?;
    let multiplier = input.scale * weights.scale / output.scale;
    let data = acc
        .iter()
        .map(|&a| requantize(a, multiplier, output.zero_point))
        .collect();
    QTensor::new(vec![1, oh, ow, shape.filters], data, output)
}

/// Per-layer cost of one forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LayerCost {
    pub multiplications: u64,
    pub energy: f64,
}

/// A model with every conv/dense layer compiled against a product slab.
#[derive(Debug)]
pub struct Network<'m> {
    model: &'m QModel,
    slab: ProductSlab,
    layers: Vec<Option<CompiledConv>>,
    costs: Vec<LayerCost>,
}

impl<'m> Network<'m> {
    /// `layers[i]` must be `Some` exactly for the model's conv and dense layers.
    pub fn new(model: &'m QModel, slab: ProductSlab, layers: Vec<Option<CompiledConv>>) -> Result<Self> {
        if layers.len() != model.layers.len() {
            return Err(Error::Shape(format!(
                "{} compiled layers for a {}-layer model",
                layers.len(),
                model.layers.len()
            )));
        }
        let dims = model.validate()?;
        let mut costs = Vec::with_capacity(layers.len());
        for (i, (layer, compiled)) in model.layers.iter().zip(&layers).enumerate() {
            let needs = matches!(layer.op, LayerOp::Conv(_) | LayerOp::Dense(_));
            match (needs, compiled) {
                (true, Some(conv)) => {
                    let (oh, ow, _) = dims[i];
                    let (multiplications, energy) = conv.cost(&slab, (oh, ow));
                    costs.push(LayerCost {
                        multiplications,
                        energy,
                    });
                }
                (false, None) => costs.push(LayerCost::default()),
                _ => {
                    return Err(Error::Shape(format!(
                        "layer {i}: compiled kernel presence does not match its kind"
                    )))
                }
            }
        }
        Ok(Self {
            model,
            slab,
            layers,
            costs,
        })
    }

    /// Every product through the exact table.
    pub fn exact(model: &'m QModel) -> Result<Self> {
        let slab = ProductSlab::new(&[MultTable::exact()]);
        let layers = model
            .layers
            .iter()
            .map(|layer| match &layer.op {
                LayerOp::Conv(conv) => CompiledConv::new(conv.shape, &conv.weights, &conv.bias, None, &slab, |_, _, _, _| Ok(0), None).map(Some),
                LayerOp::Dense(dense) => CompiledConv::new(dense.shape(), &dense.weights, &dense.bias, None, &slab, |_, _, _, _| Ok(0), None).map(Some),
                _ => Ok(None),
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(model, slab, layers)
    }

    pub fn model(&self) -> &QModel {
        self.model
    }

    pub fn costs(&self) -> &[LayerCost] {
        &self.costs
    }

    /// Runs one HWC image and returns every layer's output map.
    pub fn forward_all(&self, image: &[u8]) -> Result<Vec<FeatureMap>> {
        let m = self.model;
        let mut outputs: Vec<FeatureMap> = Vec::with_capacity(m.layers.len());
        let input = FeatureMap::new(m.input_height, m.input_width, m.input_channels, image.to_vec())?;
        for (i, layer) in m.layers.iter().enumerate() {
            let x = if i == 0 { &input } else { &outputs[i - 1] };
            let out = match &layer.op {
                LayerOp::Conv(conv) => {
                    let kernel = self.layers[i].as_ref().expect("compiled");
                    let (oh, ow, acc) = kernel.accumulate(&self.slab, x, layer.input.zero_point)?;
                    let multiplier = layer.input.scale * conv.weights.scale / layer.output.scale;
                    let data = acc.iter().map(|&a| requantize(a, multiplier, layer.output.zero_point)).collect();
                    FeatureMap::new(oh, ow, conv.shape.filters, data)?
                }
                LayerOp::Dense(dense) => {
                    let kernel = self.layers[i].as_ref().expect("compiled");
                    let (_, _, acc) = kernel.accumulate(&self.slab, &x.flattened(), layer.input.zero_point)?;
                    let multiplier = layer.input.scale * dense.weights.scale / layer.output.scale;
                    let data = acc.iter().map(|&a| requantize(a, multiplier, layer.output.zero_point)).collect();
                    FeatureMap::new(1, 1, dense.units, data)?
                }
                LayerOp::Relu => relu(x, layer.output),
                LayerOp::MaxPool { size, stride } => max_pool(x, *size, *stride)?,
                LayerOp::AvgPool { size, stride } => avg_pool(x, *size, *stride, layer.input, layer.output)?,
                LayerOp::GlobalAvgPool => global_avg_pool(x, layer.input, layer.output),
                LayerOp::Add { shortcut_from } => {
                    let shortcut = &outputs[*shortcut_from];
                    let shortcut_q = m.layers[*shortcut_from].output;
                    add(x, layer.input, shortcut, shortcut_q, layer.output)?
                }
                LayerOp::Argmax => x.clone(),
            };
            outputs.push(out);
        }
        Ok(outputs)
    }

    /// Quantized logits of one image.
    pub fn forward(&self, image: &[u8]) -> Result<Vec<u8>> {
        Ok(self
            .forward_all(image)?
            .pop()
            .map(|last| last.data)
            .unwrap_or_default())
    }

    pub fn classify(&self, image: &[u8]) -> Result<usize> {
        Ok(argmax(&self.forward(image)?))
    }
}
