//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any failure.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use axnn::axmult::{roup_multiply, EnergyModel, MultTable, MultiplierSpec, Preset, RoupConfig};
use axnn::dse::{exhaustive, nsga2, pareto_filter, sweep_prefix, sweep_single_layer, verify_front, DesignSpace, Evaluator, NsgaConfig};
use axnn::engine::{conv2d_approx, LayerShape, Padding, QParams, QTensor};
use axnn::model_io::{generate_fixture, Dataset, FixturePreset, LayerOp, QModel};
use axnn::plan::{compile, tune_weights, tuning_map, tuning_objective, Approach, ApproxPlan, TuningCache};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit_s: f64, what: &str) -> Result<(), String> {
    ensure(elapsed.as_secs_f64() < limit_s, || {
        format!("{what} took {:.2}s, limit {limit_s}s", elapsed.as_secs_f64())
    })
}

fn pairs() -> impl Iterator<Item = (i8, i8)> {
    (i8::MIN..=i8::MAX).flat_map(|a| (i8::MIN..=i8::MAX).map(move |b| (a, b)))
}

fn exact_roup_table() -> Outcome {
    let start = Instant::now();
    let spec = MultiplierSpec::Roup(RoupConfig::explicit(8, 0, vec![0; 4]).map_err(|e| e.to_string())?);
    let table = MultTable::build(&spec, &EnergyModel::proxy()).map_err(|e| e.to_string())?;
    let mismatches = pairs().filter(|&(a, b)| table.get(a, b) != a as i32 * b as i32).count();
    let elapsed = start.elapsed();
    ensure(mismatches == 0, || format!("{mismatches} mismatches"))?;
    within(elapsed, 5.0, "table build and check")?;
    Ok(format!("65536 pairs, 0 mismatches, {:.3}s", elapsed.as_secs_f64()))
}

/// Per-pair evaluation of the rounded, perforated radix-4 product sum, written
/// from the bit-level definition with Euclidean arithmetic.
fn reference_product(a: i8, b: i8, perforation: u32, rounding: &[u32]) -> i64 {
    let bits = b as u8;
    let bit = |i: i32| -> i64 {
        if i < 0 {
            0
        } else {
            ((bits >> i) & 1) as i64
        }
    };
    let a = a as i64;
    let mut sum = 0i64;
    for j in perforation as i32..4 {
        let digit = -2 * bit(2 * j + 1) + bit(2 * j) + bit(2 * j - 1);
        let r = rounding[j as usize];
        let rounded = if r == 0 {
            a
        } else {
            let step = 1i64 << r;
            let carry = i64::from(a.rem_euclid(step) >= step / 2);
            (a.div_euclid(step) + carry) * step
        };
        sum += digit * rounded * 4i64.pow(j as u32);
    }
    sum
}

fn oracle_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0001);
    let mut ids = Vec::new();
    for _ in 0..10 {
        let perforation = rng.gen_range(0..=4u32);
        let rounding: Vec<u32> = (0..4).map(|_| rng.gen_range(0..8u32)).collect();
        let cfg = RoupConfig::explicit(8, perforation, rounding.clone()).map_err(|e| e.to_string())?;
        let spec = MultiplierSpec::Roup(cfg);
        let table = MultTable::build(&spec, &EnergyModel::proxy()).map_err(|e| e.to_string())?;
        let mismatches = pairs()
            .filter(|&(a, b)| table.get(a, b) as i64 != reference_product(a, b, perforation, &rounding))
            .count();
        ensure(mismatches == 0, || format!("{spec}: {mismatches} mismatches"))?;
        ids.push(spec.id());
    }
    Ok(format!("10 specs x 65536 pairs, 0 mismatches ({})", ids.join(" ")))
}

fn annihilation() -> Outcome {
    for preset in Preset::ALL {
        let spec = preset.spec();
        for a in i8::MIN..=i8::MAX {
            let left = roup_multiply(a, 0, &spec).map_err(|e| e.to_string())?;
            let right = roup_multiply(0, a, &spec).map_err(|e| e.to_string())?;
            ensure(left == 0 && right == 0, || format!("{spec}: {a}*0={left}, 0*{a}={right}"))?;
        }
    }
    let full = MultiplierSpec::roup(4, 0).map_err(|e| e.to_string())?;
    let table = MultTable::build(&full, &EnergyModel::proxy()).map_err(|e| e.to_string())?;
    let nonzero = table.products().iter().filter(|&&p| p != 0).count();
    ensure(nonzero == 0, || format!("full perforation left {nonzero} non-zero products"))?;
    let rate = table.characterize().error_rate;
    let expected = (255.0f64 / 256.0).powi(2);
    ensure((rate - expected).abs() < 5e-7, || format!("error rate {rate:.8}, expected {expected:.8}"))?;
    Ok(format!("3 presets annihilate, full perforation error rate {rate:.6}"))
}

fn naive_conv(
    input: &QTensor,
    weights: &QTensor,
    bias: &[i32],
    shape: &LayerShape,
    out: QParams,
) -> Vec<u8> {
    let (h, w, c) = (input.shape[1], input.shape[2], input.shape[3]);
    let s = shape.stride;
    let (oh, ow, top, left) = match shape.padding {
        Padding::Valid => ((h - shape.kernel_h) / s + 1, (w - shape.kernel_w) / s + 1, 0, 0),
        Padding::Same => {
            let (oh, ow) = ((h + s - 1) / s, (w + s - 1) / s);
            let th = ((oh - 1) * s + shape.kernel_h).saturating_sub(h);
            let tw = ((ow - 1) * s + shape.kernel_w).saturating_sub(w);
            (oh, ow, th / 2, tw / 2)
        }
    };
    let zx = input.zero_point as i64;
    let zw = weights.zero_point as i64;
    let m = input.scale * weights.scale / out.scale;
    let mut result = Vec::new();
    for oy in 0..oh {
        for ox in 0..ow {
            for f in 0..shape.filters {
                let mut acc = bias[f] as i64;
                for r in 0..shape.kernel_h {
                    for q in 0..shape.kernel_w {
                        let iy = (oy * s + r) as i64 - top as i64;
                        let ix = (ox * s + q) as i64 - left as i64;
                        if iy < 0 || ix < 0 || iy >= h as i64 || ix >= w as i64 {
                            continue;
                        }
                        for ch in 0..c {
                            let x = input.data[(iy as usize * w + ix as usize) * c + ch] as i64;
                            let wt = weights.data[((f * shape.kernel_h + r) * shape.kernel_w + q) * c + ch] as i64;
                            acc += (x - zx) * (wt - zw);
                        }
                    }
                }
                let v = (acc as f64 * m).round() as i64 + out.zero_point as i64;
                result.push(v.clamp(0, 255) as u8);
            }
        }
    }
    result
}

fn conv_decomposition() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0004);
    let exact = vec![MultTable::exact(), MultTable::exact(), MultTable::exact()];
    let mut outputs = 0usize;
    let cases = 150;
    for case in 0..cases {
        let kernel_h = rng.gen_range(1..=5);
        let kernel_w = rng.gen_range(1..=5);
        let padding = if rng.gen_bool(0.5) { Padding::Same } else { Padding::Valid };
        let h = rng.gen_range(kernel_h..=12);
        let w = rng.gen_range(kernel_w..=12);
        let shape = LayerShape {
            filters: rng.gen_range(1..=8),
            channels: rng.gen_range(1..=6),
            kernel_h,
            kernel_w,
            stride: rng.gen_range(1..=3),
            padding,
        };
        let in_q = QParams::new(rng.gen_range(0.001..0.1), rng.gen())
            .map_err(|e| e.to_string())?;
        let w_q = QParams::new(rng.gen_range(0.001..0.1), rng.gen()).map_err(|e| e.to_string())?;
        let out_q = QParams::new(rng.gen_range(0.01..2.0), rng.gen()).map_err(|e| e.to_string())?;
        let input = QTensor::new(
            vec![1, h, w, shape.channels],
            (0..h * w * shape.channels).map(|_| rng.gen()).collect(),
            in_q,
        )
        .map_err(|e| e.to_string())?;
        let weights = QTensor::new(
            vec![shape.filters, kernel_h, kernel_w, shape.channels],
            (0..shape.weight_count()).map(|_| rng.gen()).collect(),
            w_q,
        )
        .map_err(|e| e.to_string())?;
        let bias: Vec<i32> = (0..shape.filters).map(|_| rng.gen_range(-20_000..20_000)).collect();
        let got = conv2d_approx(
            &input,
            &weights,
            &bias,
            &shape,
            &exact,
            |f, c, r, col| (f + c + r + col) % 3,
            None,
            out_q,
        )
        .map_err(|e| format!("case {case}: {e}"))?;
        let want = naive_conv(&input, &weights, &bias, &shape, out_q);
        let mismatches = got.data.iter().zip(&want).filter(|(a, b)| a != b).count();
        ensure(got.data.len() == want.len() && mismatches == 0, || {
            format!("case {case} {shape:?}: {mismatches} mismatches of {}", want.len())
        })?;
        outputs += want.len();
    }
    let elapsed = start.elapsed();
    within(elapsed, 30.0, "conv comparison")?;
    Ok(format!("{cases} random convolutions, {outputs} outputs, 0 mismatches, {:.2}s", elapsed.as_secs_f64()))
}

fn klms_plan(conv_layers: usize, k: f64) -> ApproxPlan {
    ApproxPlan {
        approach: Approach::Klms,
        klms_k: Some(k),
        ..ApproxPlan::identity(conv_layers)
    }
}

fn all_logits(model: &QModel, data: &Dataset, plan: &ApproxPlan) -> Result<Vec<Vec<u8>>, String> {
    let tables = plan.build_tables(&EnergyModel::proxy()).map_err(|e| e.to_string())?;
    let network = compile(model, plan, &tables, None).map_err(|e| e.to_string())?;
    (0..data.len())
        .map(|i| network.forward(data.image(i)).map_err(|e| e.to_string()))
        .collect()
}

fn klms_coverage() -> Outcome {
    let (mini, data) = generate_fixture(42, FixturePreset::Resnet8Mini, 64).map_err(|e| e.to_string())?;
    let convs = mini.conv_layers().len();
    let plain = all_logits(&mini, &data, &ApproxPlan::identity(convs))?;
    let huge = all_logits(&mini, &data, &klms_plan(convs, 1e6))?;
    ensure(plain == huge, || "k=1e6 logits differ from the unskipped network".into())?;

    let (model, data) = generate_fixture(42, FixturePreset::Resnet8, 1).map_err(|e| e.to_string())?;
    let convs = model.conv_layers().len();
    let ev = Evaluator::new(&model, &data, EnergyModel::proxy()).map_err(|e| e.to_string())?;
    let total: u64 = ev
        .evaluate(&ApproxPlan::identity(convs), false)
        .map_err(|e| e.to_string())?
        .multiplications
        .iter()
        .sum();
    let mut fractions = Vec::new();
    for (k, centre, tol) in [(1.0, 0.683, 0.05), (2.0, 0.954, 0.03)] {
        let kept: u64 = ev
            .evaluate(&klms_plan(convs, k), false)
            .map_err(|e| e.to_string())?
            .multiplications
            .iter()
            .sum();
        let fraction = kept as f64 / total as f64;
        ensure((fraction - centre).abs() <= tol, || {
            format!("k={k}: kept fraction {fraction:.4} outside {centre}±{tol}")
        })?;
        fractions.push(format!("k={k} kept {fraction:.4}"));
    }
    Ok(format!("k=1e6 bit-exact on 64 images; {}", fractions.join(", ")))
}

fn tuning() -> Outcome {
    let (model, _) = generate_fixture(42, FixturePreset::Resnet8Mini, 1).map_err(|e| e.to_string())?;
    let convs = model.conv_layers();
    let plan = ApproxPlan::identity(convs.len());
    let tables = plan.build_tables(&EnergyModel::proxy()).map_err(|e| e.to_string())?;
    let tuned = tune_weights(&model, &plan, &tables, &TuningCache::default()).map_err(|e| e.to_string())?;
    for (l, &index) in convs.iter().enumerate() {
        let LayerOp::Conv(conv) = &model.layers[index].op else {
            return Err(format!("layer {index} is not a convolution"));
        };
        ensure(tuned.0[l] == conv.weights.signed(), || format!("exact tuning changed conv {l}"))?;
    }

    let table = MultTable::build(&Preset::Medium.spec(), &EnergyModel::proxy()).map_err(|e| e.to_string())?;
    let map = tuning_map(&table);
    let mut improved = 0;
    for w in i8::MIN..=i8::MAX {
        let best = map[(w as i32 + 128) as usize];
        let (at_best, at_w) = (tuning_objective(&table, best, w), tuning_objective(&table, w, w));
        ensure(at_best <= at_w, || format!("w={w}: objective {at_best} at {best} exceeds {at_w}"))?;
        improved += usize::from(at_best < at_w);
    }
    ensure(improved >= 1, || "ROUP_M tuning never improves the objective".into())?;
    Ok(format!("exact tuning is the identity; ROUP_M improves {improved} of 256 weights, none worsen"))
}

fn energy_anchors() -> Outcome {
    let proxy = EnergyModel::proxy();
    let low = proxy.energy_of(&Preset::Low.spec()).map_err(|e| e.to_string())?;
    let medium = proxy.energy_of(&Preset::Medium.spec()).map_err(|e| e.to_string())?;
    ensure(low <= 0.90, || format!("ROUP_L energy {low}"))?;
    ensure(medium <= 0.80, || format!("ROUP_M energy {medium}"))?;

    let (model, data) = generate_fixture(42, FixturePreset::Tiny, 32).map_err(|e| e.to_string())?;
    let palette: Vec<MultiplierSpec> = Preset::ALL.iter().map(|p| p.spec()).collect();
    let mut half = EnergyModel::proxy();
    for spec in &palette {
        half.insert(spec, 0.5);
    }
    let ev = Evaluator::new(&model, &data, half).map_err(|e| e.to_string())?;
    let identity = ev.evaluate(&ApproxPlan::identity(3), false).map_err(|e| e.to_string())?;
    ensure(identity.energy_gain == 0.0, || format!("identity gain {}", identity.energy_gain))?;
    let halved = ev
        .evaluate(&ApproxPlan::llam(palette, vec![0, 1, 2]), false)
        .map_err(|e| e.to_string())?;
    ensure(halved.energy_gain == 0.5, || format!("half-energy palette gain {}", halved.energy_gain))?;
    Ok(format!("ROUP_L {low}, ROUP_M {medium}, identity gain 0, half-energy gain 0.5"))
}

fn pareto_nsga() -> Outcome {
    let (model, data) = generate_fixture(42, FixturePreset::Resnet8Mini, 64).map_err(|e| e.to_string())?;
    let ev = Evaluator::new(&model, &data, EnergyModel::proxy()).map_err(|e| e.to_string())?;
    let palette: Vec<MultiplierSpec> = Preset::ALL.iter().map(|p| p.spec()).collect();
    let space = DesignSpace::llam(palette, ev.conv_layers());
    ensure(space.size() == 2187, || format!("space holds {} plans", space.size()))?;
    let full = exhaustive(&ev, &space, false).map_err(|e| e.to_string())?;
    let points: Vec<(f64, f64)> = full.archive.iter().map(|r| r.objectives()).collect();
    let front_points = |records: &[axnn::dse::EvalRecord]| -> Vec<(f64, f64)> {
        records.iter().map(|r| r.objectives()).collect()
    };
    verify_front(&points, &front_points(&full.front))?;

    let start = Instant::now();
    let searched = nsga2(&space, |p| ev.evaluate(p, false), NsgaConfig::new(42)).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let searched_points: Vec<(f64, f64)> = searched.archive.iter().map(|r| r.objectives()).collect();
    verify_front(&searched_points, &front_points(&searched.front))?;
    verify_front(&searched_points, &front_points(&pareto_filter(&searched.archive)))?;
    let a: Vec<_> = full.front.iter().map(|r| r.objectives()).collect();
    let b: Vec<_> = searched.front.iter().map(|r| r.objectives()).collect();
    ensure(a == b, || format!("NSGA-II front {b:?} differs from exhaustive {a:?}"))?;
    within(elapsed, 120.0, "nsga2")?;
    Ok(format!(
        "3^7 plans over resnet8-mini: exhaustive and NSGA-II fronts equal ({} points, {} plans evaluated, {:.1}s)",
        a.len(),
        searched.archive.len(),
        elapsed.as_secs_f64()
    ))
}

fn sensitivity() -> Outcome {
    let (model, data) = generate_fixture(42, FixturePreset::Resnet8Mini, 64).map_err(|e| e.to_string())?;
    let ev = Evaluator::new(&model, &data, EnergyModel::proxy()).map_err(|e| e.to_string())?;
    let flat = sweep_single_layer(&ev, &MultiplierSpec::Exact, false).map_err(|e| e.to_string())?;
    ensure(flat.iter().all(|r| r.accuracy_loss == 0.0), || "exact sweep lost accuracy".into())?;

    let high = Preset::High.spec();
    let prefix = sweep_prefix(&ev, &high, false).map_err(|e| e.to_string())?;
    let last = prefix.last().ok_or("empty prefix sweep")?;
    let uniform_plan = ApproxPlan::uniform(high, ev.conv_layers());
    let uniform = ev.evaluate(&uniform_plan, false).map_err(|e| e.to_string())?;
    ensure(
        (last.accuracy, last.energy, &last.per_layer_energy, &last.multiplications, last.logit_deviation)
            == (uniform.accuracy, uniform.energy, &uniform.per_layer_energy, &uniform.multiplications, uniform.logit_deviation),
        || "prefix sweep at the last layer differs from the uniform plan".into(),
    )?;
    ensure(all_logits(&model, &data, &last.plan)? == all_logits(&model, &data, &uniform_plan)?, || {
        "prefix and uniform logits differ".into()
    })?;
    Ok(format!("{} exact rows lose nothing; full prefix matches uniform ROUP_H bit for bit", flat.len()))
}

fn run_cli(args: &[&str]) -> Result<(), String> {
    let output = Command::new(env!("CARGO_BIN_EXE_axnn"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    ensure(output.status.success(), || {
        format!("axnn {} failed: {}", args.join(" "), String::from_utf8_lossy(&output.stderr))
    })
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let p = |name: &str| dir.path().join(name).to_string_lossy().into_owned();
    run_cli(&["generate", "--preset", "resnet8-mini", "--seed", "42", "--images", "64", "--model", &p("m.json"), "--data", &p("d.axds")])?;
    std::fs::write(p("space.toml"), "approach = \"llam\"\npalette = [\"ROUP_L\", \"ROUP_M\", \"ROUP_H\"]\n")
        .map_err(|e| e.to_string())?;
    for out in ["a", "b"] {
        run_cli(&[
            "explore", "--model", &p("m.json"), "--data", &p("d.axds"), "--space", &p("space.toml"),
            "--mode", "nsga2", "--pop", "32", "--gens", "50", "--seed", "42", "--out-dir", &p(out),
        ])?;
    }
    let read = |out: &str, file: &str| std::fs::read(Path::new(&p(out)).join(file)).map_err(|e| e.to_string());
    let mut sizes = Vec::new();
    for file in ["archive.csv", "front.csv", "front.svg"] {
        let (a, b) = (read("a", file)?, read("b", file)?);
        ensure(!a.is_empty() && a == b, || format!("{file} differs between runs"))?;
        sizes.push(format!("{file} {}B", a.len()));
    }
    Ok(format!("two seeded explore runs byte-identical ({})", sizes.join(", ")))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("exhaustive exactness", exact_roup_table),
        ("oracle equivalence", oracle_equivalence),
        ("annihilation", annihilation),
        ("conv decomposition", conv_decomposition),
        ("KLMS degeneration and coverage", klms_coverage),
        ("tuning", tuning),
        ("energy anchors", energy_anchors),
        ("Pareto/NSGA-II", pareto_nsga),
        ("sensitivity harness", sensitivity),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|panic| {
            Err(panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("PASS [{}] {name}: {detail}", i + 1),
            Err(reason) => {
                failed += 1;
                println!("FAIL [{}] {name}: {reason}", i + 1);
            }
        }
    }
    println!("{} of {} acceptance criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
