//! Accuracy/energy evaluation of plans, layer-sensitivity sweeps and the
//! searches that build Pareto fronts from them.
//!
//! Energy is per inference in units of one exact multiplication: every kept
//! product of a convolution costs its table's energy. The dense classifier is
//! always exact and is left out of the accounting.

mod nsga;
mod pareto;
mod space;

pub use nsga::{crowding_distances, non_dominated_ranks, nsga2, NsgaConfig, SearchResult};
pub use pareto::{dominates, pareto_filter, pareto_indices, verify_front};
pub use space::{enumerate_space, DesignSpace, DEFAULT_CAP};

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use rayon::prelude::*;

use crate::axmult::{EnergyModel, MultTable, MultiplierSpec};
use crate::engine::argmax;
use crate::error::{Error, Result};
use crate::model_io::{Dataset, QModel};
use crate::plan::{compile, tune_weights, ApproxPlan, TuningCache};

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub plan_id: String,
    pub plan: ApproxPlan,
    pub tuned: bool,
    pub images: usize,
    pub accuracy: f64,
    /// Baseline accuracy minus this plan's accuracy.
    pub accuracy_loss: f64,
    pub energy: f64,
    /// `1 - energy / baseline energy`.
    pub energy_gain: f64,
    /// One entry per convolution.
    pub per_layer_energy: Vec<f64>,
    pub multiplications: Vec<u64>,
    /// Mean absolute difference of the quantized logits from the baseline's.
    pub logit_deviation: f64,
}

impl EvalRecord {
    /// `(accuracy_loss, energy)`, both minimized.
    pub fn objectives(&self) -> (f64, f64) {
        (self.accuracy_loss, self.energy)
    }
}

#[derive(Debug, Clone)]
struct Baseline {
    accuracy: f64,
    energy: f64,
    logits: Vec<Vec<u8>>,
}

/// Evaluates plans of one model on one data slice, caching tables and tuning maps.
pub struct Evaluator<'a> {
    model: &'a QModel,
    data: &'a Dataset,
    energy: EnergyModel,
    tables: Mutex<HashMap<MultiplierSpec, Arc<MultTable>>>,
    tuning: TuningCache,
    baseline: Baseline,
}

impl<'a> Evaluator<'a> {
    pub fn new(model: &'a QModel, data: &'a Dataset, energy: EnergyModel) -> Result<Self> {
        let classes = model.classes()?;
        if data.is_empty() {
            return Err(Error::InvalidArgument("evaluation needs at least one image".into()));
        }
        let dims = (data.height, data.width, data.channels);
        let input = (model.input_height, model.input_width, model.input_channels);
        if dims != input {
            return Err(Error::Mismatch(format!("dataset images are {dims:?}, model expects {input:?}")));
        }
        if let Some(&label) = data.labels.iter().find(|&&l| l as usize >= classes) {
            return Err(Error::Mismatch(format!("label {label} exceeds the model's {classes} classes")));
        }
        let mut evaluator = Self {
            model,
            data,
            energy,
            tables: Mutex::new(HashMap::new()),
            tuning: TuningCache::default(),
            baseline: Baseline { accuracy: 0.0, energy: 0.0, logits: Vec::new() },
        };
        let identity = ApproxPlan::identity(model.conv_layers().len());
        let (correct, logits, per_layer, _) = evaluator.run(&identity, false)?;
        evaluator.baseline = Baseline {
            accuracy: correct as f64 / data.len() as f64,
            energy: per_layer.iter().sum(),
            logits,
        };
        Ok(evaluator)
    }

    pub fn model(&self) -> &QModel {
        self.model
    }

    pub fn data(&self) -> &Dataset {
        self.data
    }

    pub fn energy_model(&self) -> &EnergyModel {
        &self.energy
    }

    pub fn baseline_accuracy(&self) -> f64 {
        self.baseline.accuracy
    }

    pub fn baseline_energy(&self) -> f64 {
        self.baseline.energy
    }

    pub fn conv_layers(&self) -> usize {
        self.model.conv_layers().len()
    }

    /// Table of `spec`, built once.
    pub fn table(&self, spec: &MultiplierSpec) -> Result<Arc<MultTable>> {
        if let Some(t) = self.tables.lock().expect("table cache").get(spec) {
            return Ok(t.clone());
        }
        let table = match spec {
            MultiplierSpec::Exact if self.energy.energy_of(spec)? == 1.0 => MultTable::exact(),
            _ => Arc::new(MultTable::build(spec, &self.energy)?),
        };
        Ok(self
            .tables
            .lock()
            .expect("table cache")
            .entry(spec.clone())
            .or_insert(table)
            .clone())
    }

    pub fn tables(&self, palette: &[MultiplierSpec]) -> Result<Vec<Arc<MultTable>>> {
        palette.iter().map(|s| self.table(s)).collect()
    }

    /// Correct predictions, logits, per-conv energy and multiplication counts.
    fn run(&self, plan: &ApproxPlan, tune: bool) -> Result<(usize, Vec<Vec<u8>>, Vec<f64>, Vec<u64>)> {
        let tables = self.tables(&plan.palette)?;
        let operands = if tune {
            Some(tune_weights(self.model, plan, &tables, &self.tuning)?)
        } else {
            None
        };
        let network = compile(self.model, plan, &tables, operands.as_ref())?;
        let logits = (0..self.data.len())
            .into_par_iter()
            .map(|i| network.forward(self.data.image(i)))
            .collect::<Result<Vec<_>>>()?;
        let correct = logits
            .iter()
            .zip(&self.data.labels)
            .filter(|(l, &label)| argmax(l) == label as usize)
            .count();
        let costs = network.costs();
        let convs = self.model.conv_layers();
        let energy = convs.iter().map(|&i| costs[i].energy).collect();
        let mults = convs.iter().map(|&i| costs[i].multiplications).collect();
        Ok((correct, logits, energy, mults))
    }

    pub fn evaluate(&self, plan: &ApproxPlan, tune: bool) -> Result<EvalRecord> {
        let (correct, logits, per_layer_energy, multiplications) = self.run(plan, tune)?;
        let accuracy = correct as f64 / self.data.len() as f64;
        let energy: f64 = per_layer_energy.iter().sum();
        let (mut diff, mut count) = (0u64, 0u64);
        for (a, b) in logits.iter().zip(&self.baseline.logits) {
            for (&x, &y) in a.iter().zip(b) {
                diff += x.abs_diff(y) as u64;
                count += 1;
            }
        }
        Ok(EvalRecord {
            plan_id: plan.plan_id(),
            plan: plan.clone(),
            tuned: tune,
            images: self.data.len(),
            accuracy,
            accuracy_loss: self.baseline.accuracy - accuracy,
            energy,
            energy_gain: 1.0 - energy / self.baseline.energy,
            per_layer_energy,
            multiplications,
            logit_deviation: diff as f64 / count.max(1) as f64,
        })
    }
}

/// Row 0 is the baseline; row `m` approximates conv layer `m` alone.
pub fn sweep_single_layer(evaluator: &Evaluator, spec: &MultiplierSpec, tune: bool) -> Result<Vec<EvalRecord>> {
    let layers = evaluator.conv_layers();
    let palette = vec![MultiplierSpec::Exact, spec.clone()];
    (0..=layers)
        .map(|m| {
            let indices = (0..layers).map(|l| usize::from(m > 0 && l + 1 == m)).collect();
            evaluator.evaluate(&ApproxPlan::llam(palette.clone(), indices), tune)
        })
        .collect()
}

/// Row 0 is the baseline; row `m` approximates conv layers `1..=m`.
pub fn sweep_prefix(evaluator: &Evaluator, spec: &MultiplierSpec, tune: bool) -> Result<Vec<EvalRecord>> {
    let layers = evaluator.conv_layers();
    let palette = vec![MultiplierSpec::Exact, spec.clone()];
    (0..=layers)
        .map(|m| {
            let indices = (0..layers).map(|l| usize::from(l < m)).collect();
            evaluator.evaluate(&ApproxPlan::llam(palette.clone(), indices), tune)
        })
        .collect()
}

/// Evaluates every plan of the space and extracts the front.
pub fn exhaustive(evaluator: &Evaluator, space: &DesignSpace, tune: bool) -> Result<SearchResult> {
    let plans: Vec<ApproxPlan> = enumerate_space(space)?.collect();
    let archive = plans
        .par_iter()
        .map(|p| evaluator.evaluate(p, tune))
        .collect::<Result<Vec<_>>>()?;
    let front = pareto_filter(&archive);
    Ok(SearchResult { archive, front })
}
