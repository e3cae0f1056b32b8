use std::path::Path;

use axnn::axmult::{EnergyModel, MultiplierSpec, Preset};
use axnn::dse::{enumerate_space, exhaustive, DesignSpace, Evaluator};
use axnn::model_io::{generate_fixture, load_model, save_model, FixturePreset};
use axnn::plan::{Approach, ApproxPlan, Flavor};

fn fixture_plan() -> ApproxPlan {
    ApproxPlan::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/klam-chan_L-M-H.toml")).unwrap()
}

#[test]
fn sample_plan_round_trips() {
    let plan = fixture_plan();
    assert_eq!(plan.approach, Approach::Klam);
    assert_eq!(plan.flavor, Some(Flavor::Channel));
    let presets: Vec<MultiplierSpec> = Preset::ALL.iter().map(|p| p.spec()).collect();
    assert_eq!(plan.palette, presets);
    assert_eq!(plan.plan_id(), "klam-channel_0.1.2-0.1.2-0.1.2-0.1.2-0.1.2-0.1.2-0.1.2");
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("again.toml");
    plan.save(&path).unwrap();
    assert_eq!(ApproxPlan::load(&path).unwrap(), plan);
}

#[test]
fn sample_plan_sits_between_uniform_extremes() {
    let (model, data) = generate_fixture(42, FixturePreset::Resnet8Mini, 32).unwrap();
    let ev = Evaluator::new(&model, &data, EnergyModel::proxy()).unwrap();
    let mixed = ev.evaluate(&fixture_plan(), false).unwrap();
    let low = ev.evaluate(&ApproxPlan::uniform(Preset::Low.spec(), 7), false).unwrap();
    let high = ev.evaluate(&ApproxPlan::uniform(Preset::High.spec(), 7), false).unwrap();
    assert!(high.energy < mixed.energy && mixed.energy < low.energy);
    assert!(mixed.energy_gain > 0.0);
}

#[test]
fn saved_model_evaluates_identically() {
    let (model, data) = generate_fixture(9, FixturePreset::Tiny, 16).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    save_model(&model, &path).unwrap();
    let loaded = load_model(&path).unwrap();
    let plan = ApproxPlan::uniform(Preset::Medium.spec(), 3);
    let a = Evaluator::new(&model, &data, EnergyModel::proxy()).unwrap().evaluate(&plan, true).unwrap();
    let b = Evaluator::new(&loaded, &data, EnergyModel::proxy()).unwrap().evaluate(&plan, true).unwrap();
    assert_eq!(a, b);
}

#[test]
fn exhaustive_front_over_tiny_llam_space() {
    let (model, data) = generate_fixture(42, FixturePreset::Tiny, 48).unwrap();
    let ev = Evaluator::new(&model, &data, EnergyModel::proxy()).unwrap();
    let palette: Vec<MultiplierSpec> = Preset::ALL.iter().map(|p| p.spec()).collect();
    let space = DesignSpace::llam(palette, 3);
    assert_eq!(enumerate_space(&space).unwrap().count(), 27);
    let result = exhaustive(&ev, &space, false).unwrap();
    assert_eq!(result.archive.len(), 27);
    let all: Vec<_> = result.archive.iter().map(|r| r.objectives()).collect();
    let front: Vec<_> = result.front.iter().map(|r| r.objectives()).collect();
    axnn::dse::verify_front(&all, &front).unwrap();
    assert_eq!(result.front[0].plan_id, "llam_2-2-2");
}

#[test]
fn tuning_leaves_cost_unchanged() {
    let (model, data) = generate_fixture(42, FixturePreset::Tiny, 16).unwrap();
    let ev = Evaluator::new(&model, &data, EnergyModel::proxy()).unwrap();
    let plan = ApproxPlan::uniform(Preset::High.spec(), 3);
    let plain = ev.evaluate(&plan, false).unwrap();
    let tuned = ev.evaluate(&plan, true).unwrap();
    assert_eq!(plain.energy, tuned.energy);
    assert_eq!(plain.multiplications, tuned.multiplications);
}
