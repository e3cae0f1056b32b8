use std::sync::OnceLock;

use axnn::axmult::{booth_digits, round_operand, EnergyModel, MultTable, MultiplierSpec, RoupConfig};
use axnn::dse::{pareto_indices, verify_front, Evaluator};
use axnn::engine::{dequantize, quantize, KlmsRule, LayerShape, Padding, QParams};
use axnn::model_io::{generate_fixture, load_dataset, save_dataset, Dataset, FixturePreset, QModel};
use axnn::plan::{Approach, ApproxPlan, Flavor, LayerAssignment};
use proptest::prelude::*;

fn roup_spec() -> impl Strategy<Value = MultiplierSpec> {
    prop_oneof![
        (0u32..=4, 0u32..8).prop_map(|(p, r)| MultiplierSpec::roup(p, r).unwrap()),
        (0u32..=4, prop::collection::vec(0u32..8, 4))
            .prop_map(|(p, r)| MultiplierSpec::Roup(RoupConfig::explicit(8, p, r).unwrap())),
    ]
}

fn plan_strategy(layers: usize) -> impl Strategy<Value = ApproxPlan> {
    let palette = prop::collection::vec(roup_spec(), 1..4);
    (palette, 0usize..3, prop::option::of(0.25f64..4.0)).prop_flat_map(move |(palette, kind, k)| {
        let n = palette.len();
        let (approach, flavor, width) = match kind {
            0 => (Approach::Llam, None, 1..2usize),
            1 => (Approach::Flam, None, 1..6usize),
            _ => (Approach::Klam, Some(Flavor::Channel), 1..5usize),
        };
        prop::collection::vec(prop::collection::vec(0..n, width), layers).prop_map(move |mult| ApproxPlan {
            approach,
            flavor,
            palette: palette.clone(),
            layers: mult.into_iter().map(LayerAssignment).collect(),
            klms_k: k,
        })
    })
}

fn tiny() -> &'static (QModel, Dataset) {
    static FIXTURE: OnceLock<(QModel, Dataset)> = OnceLock::new();
    FIXTURE.get_or_init(|| generate_fixture(11, FixturePreset::Tiny, 24).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn spec_ids_round_trip(spec in roup_spec()) {
        let parsed: MultiplierSpec = spec.id().parse().unwrap();
        prop_assert_eq!(parsed, spec);
    }

    #[test]
    fn booth_digits_reconstruct(b in any::<i8>()) {
        let digits = booth_digits(b as i64, 8);
        prop_assert_eq!(digits.len(), 4);
        prop_assert!(digits.iter().all(|d| (-2..=2).contains(d)));
        let value: i64 = digits.iter().enumerate().map(|(j, &d)| d as i64 * 4i64.pow(j as u32)).sum();
        prop_assert_eq!(value, b as i64);
    }

    #[test]
    fn rounding_is_nearest_multiple(a in any::<i8>(), r in 0u32..8) {
        let rounded = round_operand(a as i64, r);
        prop_assert_eq!(rounded.rem_euclid(1 << r), 0);
        prop_assert!((rounded - a as i64).abs() <= (1i64 << r) / 2);
    }

    #[test]
    fn error_profile_zero_iff_exact(spec in roup_spec()) {
        let table = MultTable::build(&spec, &EnergyModel::proxy()).unwrap();
        let exact = table.products() == MultTable::exact().products();
        let p = table.characterize();
        let zero = p.mred == 0.0 && p.mae == 0.0 && p.max_abs_err == 0 && p.error_rate == 0.0;
        prop_assert_eq!(zero, exact);
        prop_assert!((0.0..=1.0).contains(&p.error_rate) && p.mred >= 0.0 && p.mae >= 0.0);
        prop_assert!(table.energy() > 0.0 && table.energy() <= 1.0);
    }

    #[test]
    fn quantization_error_within_half_step(
        values in prop::collection::vec(-1.0f64..1.0, 1..64),
        scale in 0.005f64..0.05,
        zp in 64u8..192,
    ) {
        let params = QParams::new(scale, zp).unwrap();
        let t = quantize(&values, vec![values.len()], params).unwrap();
        for (x, y) in values.iter().zip(dequantize(&t)) {
            let lo = scale * (0.0 - zp as f64);
            let hi = scale * (255.0 - zp as f64);
            if (lo..=hi).contains(x) {
                prop_assert!((x - y).abs() <= scale / 2.0 + 1e-12);
            }
        }
    }

    #[test]
    fn klms_keeps_exactly_the_interval(weights in prop::collection::vec(any::<i8>(), 1..200), k in 0.1f64..3.0) {
        let rule = KlmsRule::from_weights(k, &weights).unwrap();
        for &w in &weights {
            let inside = (w as f64 - rule.mean).abs() <= k * rule.std;
            prop_assert_eq!(rule.keeps(w), inside);
        }
    }

    #[test]
    fn resolve_stays_in_palette(
        plan in plan_strategy(1),
        filters in 1usize..20, channels in 1usize..9, kh in 1usize..4, kw in 1usize..4,
    ) {
        let shape = LayerShape { filters, channels, kernel_h: kh, kernel_w: kw, stride: 1, padding: Padding::Same };
        prop_assert!(plan.validate().is_ok());
        let mut last_group = 0;
        for f in 0..filters {
            for c in 0..channels {
                for r in 0..kh {
                    for col in 0..kw {
                        let i = plan.resolve(0, &shape, f, c, r, col).unwrap();
                        prop_assert!(i < plan.palette.len());
                    }
                }
            }
            if plan.approach == Approach::Flam {
                let groups = plan.layers[0].0.len();
                let group = (f / (filters / groups).max(1)).min(groups - 1);
                prop_assert!(group >= last_group);
                last_group = group;
                prop_assert_eq!(plan.resolve(0, &shape, f, 0, 0, 0).unwrap(), plan.layers[0].0[group]);
            }
        }
    }

    #[test]
    fn plan_files_round_trip(plan in plan_strategy(3)) {
        let text = plan.to_toml().unwrap();
        let back: ApproxPlan = text.parse().unwrap();
        prop_assert_eq!(&back, &plan);
        prop_assert_eq!(back.plan_id(), plan.plan_id());
    }

    #[test]
    fn pareto_front_is_maximal(points in prop::collection::vec((0u8..20, 0u8..20), 1..60)) {
        let points: Vec<(f64, f64)> = points.into_iter().map(|(a, b)| (a as f64 / 20.0, b as f64)).collect();
        let ids: Vec<String> = (0..points.len()).map(|i| format!("{i:03}")).collect();
        let ids: Vec<&str> = ids.iter().map(String::as_str).collect();
        let front: Vec<(f64, f64)> = pareto_indices(&points, &ids).into_iter().map(|i| points[i]).collect();
        prop_assert_eq!(verify_front(&points, &front), Ok(()));
    }

    #[test]
    fn dataset_container_round_trips(images in prop::collection::vec((prop::collection::vec(any::<u8>(), 12), 0u8..10), 0..20)) {
        let (pixels, labels): (Vec<Vec<u8>>, Vec<u8>) = images.into_iter().unzip();
        let data = Dataset::new(2, 2, 3, pixels.concat(), labels).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.axds");
        save_dataset(&data, &path).unwrap();
        prop_assert_eq!(load_dataset(&path).unwrap(), data);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn energy_accounting_adds_up(plan in plan_strategy(3), tune in any::<bool>()) {
        let (model, data) = tiny();
        let ev = Evaluator::new(model, data, EnergyModel::proxy()).unwrap();
        let r = ev.evaluate(&plan, tune).unwrap();
        prop_assert_eq!(r.energy, r.per_layer_energy.iter().sum::<f64>());
        prop_assert!(r.energy <= ev.baseline_energy());
        prop_assert!((0.0..=1.0).contains(&r.accuracy));
        prop_assert_eq!(r.accuracy_loss, ev.baseline_accuracy() - r.accuracy);
    }
}

#[test]
fn exact_kind_matches_unapproximated_roup() {
    let roup = MultTable::build(&MultiplierSpec::roup(0, 0).unwrap(), &EnergyModel::proxy()).unwrap();
    assert_eq!(roup.products(), MultTable::exact().products());
}

#[test]
fn single_exact_palette_is_identity() {
    let (model, data) = tiny();
    let plan = ApproxPlan::identity(3);
    assert!(plan.is_identity());
    let ev = Evaluator::new(model, data, EnergyModel::proxy()).unwrap();
    let r = ev.evaluate(&plan, true).unwrap();
    assert_eq!((r.accuracy_loss, r.energy_gain, r.logit_deviation), (0.0, 0.0, 0.0));
}
