//! Multiplier placement: which palette table serves each weight of each
//! convolution, plus weight tuning against the assigned tables.
//!
//! Plan files are TOML:
//!
//! ```toml
//! approach = "klam"
//! flavor = "channel"
//! palette = ["ROUP_L", "ROUP_M", "ROUP_H"]
//!
//! [[layers]]
//! mult = [0, 1, 2]
//! ```
//!
//! `layers` has one entry per convolution of the model, in order. `mult`
//! holds one palette index for LLAM and KLMS, the per-group indices for FLAM
//! and the cyclic list for KLAM.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::sync::{Arc, Mutex};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::axmult::{EnergyModel, MultTable, MultiplierSpec, TABLE_LEN};
use crate::engine::{CompiledConv, KlmsRule, LayerShape, Network, ProductSlab};
use crate::error::{Error, Result};
use crate::model_io::{LayerOp, QModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Approach {
    /// One multiplier per layer.
    Llam,
    /// Contiguous filter groups, one multiplier each.
    Flam,
    /// Multipliers cycled over kernel channels, rows or columns.
    Klam,
    /// Exact multipliers with statistical weight skipping.
    Klms,
}

impl Approach {
    pub fn name(self) -> &'static str {
        match self {
            Approach::Llam => "llam",
            Approach::Flam => "flam",
            Approach::Klam => "klam",
            Approach::Klms => "klms",
        }
    }
}

impl fmt::Display for Approach {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Flavor {
    Channel,
    Row,
    Column,
}

impl Flavor {
    pub fn name(self) -> &'static str {
        match self {
            Flavor::Channel => "channel",
            Flavor::Row => "row",
            Flavor::Column => "column",
        }
    }
}

impl fmt::Display for Flavor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Palette indices of one convolution; their meaning depends on the approach.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LayerAssignment(pub Vec<usize>);

#[derive(Debug, Clone, PartialEq)]
pub struct ApproxPlan {
    pub approach: Approach,
    pub flavor: Option<Flavor>,
    pub palette: Vec<MultiplierSpec>,
    pub layers: Vec<LayerAssignment>,
    /// Skip products whose weight lies outside `mean ± k std` of its layer.
    pub klms_k: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PlanFile {
    approach: Approach,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    flavor: Option<Flavor>,
    palette: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    klms_k: Option<f64>,
    layers: Vec<LayerEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerEntry {
    mult: Vec<usize>,
}

impl ApproxPlan {
    /// Exact multiplication everywhere.
    pub fn identity(conv_layers: usize) -> Self {
        Self::uniform(MultiplierSpec::Exact, conv_layers)
    }

    /// LLAM with `spec` in every layer.
    pub fn uniform(spec: MultiplierSpec, conv_layers: usize) -> Self {
        Self::llam(vec![spec], vec![0; conv_layers])
    }

    /// LLAM from per-layer palette indices.
    pub fn llam(palette: Vec<MultiplierSpec>, indices: Vec<usize>) -> Self {
        Self {
            approach: Approach::Llam,
            flavor: None,
            palette,
            layers: indices.into_iter().map(|i| LayerAssignment(vec![i])).collect(),
            klms_k: None,
        }
    }

    /// True when every product is exact and nothing is skipped.
    pub fn is_identity(&self) -> bool {
        self.klms_k.is_none() && self.palette.iter().all(|s| *s == MultiplierSpec::Exact)
    }

    pub fn validate(&self) -> Result<()> {
        if self.palette.is_empty() {
            return Err(Error::Plan("palette is empty".into()));
        }
        match (self.approach, self.flavor) {
            (Approach::Klam, None) => return Err(Error::Plan("klam plans need a flavor".into())),
            (Approach::Klam, Some(_)) | (_, None) => {}
            (a, Some(_)) => return Err(Error::Plan(format!("flavor is only valid for klam, not {a}"))),
        }
        if let Some(k) = self.klms_k {
            if !(k.is_finite() && k > 0.0) {
                return Err(Error::Plan(format!("klms_k must be positive, got {k}")));
            }
        }
        if self.approach == Approach::Klms {
            if self.klms_k.is_none() {
                return Err(Error::Plan("klms plans need klms_k".into()));
            }
            if let Some(s) = self.palette.iter().find(|s| **s != MultiplierSpec::Exact) {
                return Err(Error::Plan(format!("klms plans use exact multipliers only, palette has `{s}`")));
            }
        }
        for (i, LayerAssignment(mult)) in self.layers.iter().enumerate() {
            let err = |msg: String| Error::Plan(format!("layers[{i}]: {msg}"));
            if mult.is_empty() {
                return Err(err("mult is empty".into()));
            }
            if matches!(self.approach, Approach::Llam | Approach::Klms) && mult.len() != 1 {
                return Err(err(format!("{} assigns exactly one multiplier per layer, got {}", self.approach, mult.len())));
            }
            if let Some(&bad) = mult.iter().find(|&&m| m >= self.palette.len()) {
                return Err(err(format!(
                    "palette index {bad} out of range (palette has {} entries)",
                    self.palette.len()
                )));
            }
        }
        Ok(())
    }

    /// Palette index serving weight `(filter, channel, row, col)` of conv layer `layer`.
    pub fn resolve(
        &self,
        layer: usize,
        shape: &LayerShape,
        filter: usize,
        channel: usize,
        row: usize,
        col: usize,
    ) -> Result<usize> {
        let LayerAssignment(mult) = self.layers.get(layer).ok_or_else(|| {
            Error::Plan(format!("layer {layer} out of range (plan has {} layers)", self.layers.len()))
        })?;
        Ok(match self.approach {
            Approach::Llam | Approach::Klms => mult[0],
            Approach::Flam => {
                let groups = mult.len();
                let size = (shape.filters / groups).max(1);
                mult[(filter / size).min(groups - 1)]
            }
            Approach::Klam => {
                let axis = match self.flavor {
                    Some(Flavor::Channel) => channel,
                    Some(Flavor::Row) => row,
                    Some(Flavor::Column) => col,
                    None => return Err(Error::Plan("klam plans need a flavor".into())),
                };
                mult[axis % mult.len()]
            }
        })
    }

    /// Compact, deterministic name: approach, flavor, per-layer indices, `_k` suffix.
    pub fn plan_id(&self) -> String {
        let mut id = self.approach.name().to_string();
        if let Some(flavor) = self.flavor {
            id.push('-');
            id.push_str(flavor.name());
        }
        let layers: Vec<String> = self
            .layers
            .iter()
            .map(|LayerAssignment(m)| m.iter().map(|i| i.to_string()).collect::<Vec<_>>().join("."))
            .collect();
        id.push('_');
        id.push_str(&layers.join("-"));
        if let Some(k) = self.klms_k {
            id.push_str(&format!("_k{k}"));
        }
        id
    }

    pub fn to_toml(&self) -> Result<String> {
        self.validate()?;
        let file = PlanFile {
            approach: self.approach,
            flavor: self.flavor,
            palette: self.palette.iter().map(|s| s.id()).collect(),
            klms_k: self.klms_k,
            layers: self.layers.iter().map(|LayerAssignment(m)| LayerEntry { mult: m.clone() }).collect(),
        };
        toml::to_string(&file).map_err(|e| Error::Plan(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_toml()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        text.parse().map_err(|e| match e {
            Error::Plan(msg) => Error::Plan(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Product tables of the palette, in palette order.
    pub fn build_tables(&self, energy: &EnergyModel) -> Result<Vec<Arc<MultTable>>> {
        self.palette
            .iter()
            .map(|spec| match spec {
                MultiplierSpec::Exact if energy.energy_of(spec)? == 1.0 => Ok(MultTable::exact()),
                _ => MultTable::build(spec, energy).map(Arc::new),
            })
            .collect()
    }
}

impl FromStr for ApproxPlan {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let file: PlanFile = toml::from_str(text).map_err(|e| Error::Plan(e.to_string().trim_end().to_string()))?;
        let palette = file
            .palette
            .iter()
            .enumerate()
            .map(|(i, id)| id.parse().map_err(|e| Error::Plan(format!("palette[{i}]: {e}"))))
            .collect::<Result<Vec<MultiplierSpec>>>()?;
        let plan = ApproxPlan {
            approach: file.approach,
            flavor: file.flavor,
            palette,
            layers: file.layers.into_iter().map(|l| LayerAssignment(l.mult)).collect(),
            klms_k: file.klms_k,
        };
        plan.validate()?;
        Ok(plan)
    }
}

/// Sum over all activations `a` of `|T(a, v) - a w|`.
pub fn tuning_objective(table: &MultTable, v: i8, w: i8) -> i64 {
    let products = table.products();
    let col = (v as i32 + 128) as usize;
    (-128i64..128)
        .map(|a| {
            let approx = products[((a + 128) as usize) << 8 | col] as i64;
            (approx - a * w as i64).abs()
        })
        .sum()
}

/// Best operand for every weight: `tuned[w + 128]` minimizes [`tuning_objective`],
/// ties going to the smallest `|v - w|`, then the smallest `v`.
pub fn tuning_map(table: &MultTable) -> Vec<i8> {
    if table.is_exact() {
        return (-128..=127).collect();
    }
    let products = table.products();
    debug_assert_eq!(products.len(), TABLE_LEN);
    (-128i32..128)
        .into_par_iter()
        .map(|w| {
            let w = w as i8;
            let mut best = (i64::MAX, u32::MAX, i8::MAX);
            for v in -128i32..128 {
                let v = v as i8;
                let key = (tuning_objective(table, v, w), (v as i32 - w as i32).unsigned_abs(), v);
                if key < best {
                    best = key;
                }
            }
            best.2
        })
        .collect()
}

/// Tuning maps shared across plans, keyed by multiplier id.
#[derive(Debug, Default)]
pub struct TuningCache {
    maps: Mutex<HashMap<String, Arc<Vec<i8>>>>,
}

impl TuningCache {
    pub fn get(&self, table: &MultTable) -> Arc<Vec<i8>> {
        let id = table.spec().id();
        if let Some(map) = self.maps.lock().expect("tuning cache").get(&id) {
            return map.clone();
        }
        let map = Arc::new(tuning_map(table));
        self.maps.lock().expect("tuning cache").entry(id).or_insert(map).clone()
    }
}

/// Weight operands fed to the multipliers, one vector per conv layer in
/// `[filter][row][col][channel]` order. Stored weights stay untouched.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WeightOperands(pub Vec<Vec<i8>>);

/// Replaces each weight operand by its best value for the table serving it.
pub fn tune_weights(
    model: &QModel,
    plan: &ApproxPlan,
    tables: &[Arc<MultTable>],
    cache: &TuningCache,
) -> Result<WeightOperands> {
    check_plan(model, plan, tables)?;
    let maps: Vec<Arc<Vec<i8>>> = tables.iter().map(|t| cache.get(t)).collect();
    let layers = model
        .conv_layers()
        .into_iter()
        .enumerate()
        .map(|(l, index)| {
            let LayerOp::Conv(conv) = &model.layers[index].op else { unreachable!("conv_layers") };
            conv.weights
                .signed()
                .iter()
                .enumerate()
                .map(|(i, &w)| {
                    let (f, c, r, col) = conv.shape.coordinates(i);
                    let slot = plan.resolve(l, &conv.shape, f, c, r, col)?;
                    Ok(maps[slot][(w as i32 + 128) as usize])
                })
                .collect::<Result<Vec<i8>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(WeightOperands(layers))
}

fn check_plan(model: &QModel, plan: &ApproxPlan, tables: &[Arc<MultTable>]) -> Result<()> {
    plan.validate()?;
    let convs = model.conv_layers().len();
    if plan.layers.len() != convs {
        return Err(Error::Mismatch(format!(
            "plan assigns {} layers, model has {convs} convolutions",
            plan.layers.len()
        )));
    }
    if tables.len() != plan.palette.len() {
        return Err(Error::Mismatch(format!(
            "{} tables for a palette of {}",
            tables.len(),
            plan.palette.len()
        )));
    }
    for (i, (table, spec)) in tables.iter().zip(&plan.palette).enumerate() {
        if table.spec() != spec {
            return Err(Error::Mismatch(format!(
                "table {i} is `{}`, palette names `{spec}`",
                table.spec()
            )));
        }
    }
    Ok(())
}

/// Binds every conv weight to its palette table (dense layers stay exact) and
/// applies KLMS skipping with statistics of the stored weights.
pub fn compile<'m>(
    model: &'m QModel,
    plan: &ApproxPlan,
    tables: &[Arc<MultTable>],
    operands: Option<&WeightOperands>,
) -> Result<Network<'m>> {
    check_plan(model, plan, tables)?;
    let convs = model.conv_layers();
    if let Some(WeightOperands(ops)) = operands {
        if ops.len() != convs.len() {
            return Err(Error::Mismatch(format!(
                "{} tuned layers for {} convolutions",
                ops.len(),
                convs.len()
            )));
        }
    }
    let mut slab_tables = tables.to_vec();
    slab_tables.push(MultTable::exact());
    let exact_slot = tables.len();
    let slab = ProductSlab::new(&slab_tables);
    let mut conv_index = 0;
    let layers = model
        .layers
        .iter()
        .map(|layer| match &layer.op {
            LayerOp::Conv(conv) => {
                let l = conv_index;
                conv_index += 1;
                let klms = plan
                    .klms_k
                    .map(|k| KlmsRule::from_weights(k, &conv.weights.signed()))
                    .transpose()?;
                let ops = operands.map(|WeightOperands(o)| o[l].as_slice());
                CompiledConv::new(
                    conv.shape,
                    &conv.weights,
                    &conv.bias,
                    ops,
                    &slab,
                    |f, c, r, col| plan.resolve(l, &conv.shape, f, c, r, col),
                    klms.as_ref(),
                )
                .map(Some)
            }
            LayerOp::Dense(dense) => CompiledConv::new(
                dense.shape(),
                &dense.weights,
                &dense.bias,
                None,
                &slab,
                |_, _, _, _| Ok(exact_slot),
                None,
            )
            .map(Some),
            _ => Ok(None),
        })
        .collect::<Result<Vec<_>>>()?;
    Network::new(model, slab, layers)
}
