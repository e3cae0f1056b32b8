mod output;

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use axnn::axmult::{EnergyModel, MultTable, MultiplierSpec};
use axnn::dse::{self, nsga2, pareto_filter, sweep_prefix, sweep_single_layer, DesignSpace, Evaluator, NsgaConfig};
use axnn::model_io::{generate_fixture, load_dataset, load_model, save_cifar10, save_dataset, save_model, FixturePreset};
use axnn::plan::ApproxPlan;
use clap::{ArgAction, Parser, Subcommand, ValueEnum};

use output::{manifest_beside, RunManifest};

/// Approximate-multiplier simulation and accuracy/energy exploration for quantized CNNs.
#[derive(Parser)]
#[command(name = "axnn", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Inputs {
    /// Model manifest (JSON).
    #[arg(long)]
    model: PathBuf,
    /// Dataset: CIFAR-10 binary batch or AXDS file.
    #[arg(long)]
    data: PathBuf,
    /// Evaluate only the first N images.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    limit: Option<u64>,
    /// Energy table (`id value` per line) overriding the proxy model.
    #[arg(long)]
    energy_table: Option<PathBuf>,
    /// Tune weight operands to their multipliers before evaluating.
    #[arg(long, action = ArgAction::Set, default_value_t = false)]
    tune: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Error metrics and energy of multipliers, one CSV row each.
    Characterize {
        /// Multiplier id; repeatable.
        #[arg(long = "mult", required = true)]
        mults: Vec<String>,
        #[arg(long)]
        energy_table: Option<PathBuf>,
        /// Output CSV (stdout when absent).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Accuracy and energy of one plan.
    Eval {
        #[command(flatten)]
        inputs: Inputs,
        /// Plan file (TOML).
        #[arg(long)]
        plan: PathBuf,
        /// JSON report (stdout when absent).
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Layer sensitivity: one multiplier in a single layer or in a growing prefix of layers.
    Sweep {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long, value_enum)]
        mode: SweepMode,
        #[arg(long)]
        mult: String,
        /// Output CSV (stdout when absent).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Search a design space and write the archive, the Pareto front, its plans and a plot.
    Explore {
        #[command(flatten)]
        inputs: Inputs,
        /// Design space file (TOML).
        #[arg(long)]
        space: PathBuf,
        #[arg(long, value_enum, default_value_t = ExploreMode::Exhaustive)]
        mode: ExploreMode,
        #[arg(long, default_value_t = 32)]
        pop: usize,
        #[arg(long, default_value_t = 50)]
        gens: usize,
        /// Required for nsga2.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 0.9)]
        crossover: f64,
        /// Per-gene mutation probability (default 1/genes).
        #[arg(long)]
        mutation: Option<f64>,
        /// Largest space exhaustive mode accepts (overrides the space file).
        #[arg(long)]
        cap: Option<u64>,
        /// Keep only plans at or above this accuracy on the front.
        #[arg(long)]
        min_accuracy: Option<f64>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// SVG scatter of an archive CSV with its front.
    Plot {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a synthetic self-labeled model and dataset.
    Generate {
        #[arg(long, default_value = "resnet8")]
        preset: String,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 256)]
        images: usize,
        /// Output model manifest.
        #[arg(long)]
        model: PathBuf,
        /// Output dataset.
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value_t = DataFormat::Axds)]
        format: DataFormat,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SweepMode {
    Single,
    Prefix,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ExploreMode {
    Exhaustive,
    Nsga2,
}

#[derive(Clone, Copy, ValueEnum)]
enum DataFormat {
    Axds,
    Cifar,
}

/// Argument problem detected after parsing.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    anyhow!(UsageError(msg.into()))
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<UsageError>().is_some() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<axnn::Error>() {
            return match e {
                axnn::Error::MultiplierId { .. }
                | axnn::Error::InvalidArgument(_)
                | axnn::Error::Plan(_)
                | axnn::Error::Space(_) => 2,
                axnn::Error::Mismatch(_) => 3,
                axnn::Error::SpaceTooLarge { .. } => 4,
                _ => 1,
            };
        }
    }
    1
}

fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var("AXNN_THREADS") else {
        return Ok(());
    };
    let threads: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| usage(format!("AXNN_THREADS must be a positive integer, got `{value}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .context("configuring the worker pool")
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match configure_threads().and_then(|_| run(cli.command)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

fn energy_model(path: Option<&Path>) -> Result<EnergyModel> {
    Ok(match path {
        Some(p) => EnergyModel::load(p)?,
        None => EnergyModel::proxy(),
    })
}

struct Loaded {
    model: axnn::model_io::QModel,
    data: axnn::model_io::Dataset,
    energy: EnergyModel,
}

fn load_inputs(inputs: &Inputs, manifest: &mut RunManifest) -> Result<Loaded> {
    let model = load_model(&inputs.model)?;
    let mut data = load_dataset(&inputs.data)?;
    if let Some(limit) = inputs.limit {
        data = data.head(limit as usize);
    }
    let energy = energy_model(inputs.energy_table.as_deref())?;
    manifest.input(&inputs.model)?.input(&inputs.data)?;
    if let Some(p) = &inputs.energy_table {
        manifest.input(p)?;
        manifest.param("energy_table", p.display());
    }
    manifest
        .param("model", inputs.model.display())
        .param("data", inputs.data.display())
        .param("limit", inputs.limit.map_or("all".to_string(), |l| l.to_string()))
        .param("images", data.len())
        .param("data_sha256", data.digest())
        .param("tune", inputs.tune);
    Ok(Loaded { model, data, energy })
}

fn run(command: Command) -> Result<()> {
    let started = Instant::now();
    match command {
        Command::Characterize { mults, energy_table, out } => {
            let mut manifest = RunManifest::new("characterize");
            let energy = energy_model(energy_table.as_deref())?;
            let specs = mults
                .iter()
                .map(|m| m.parse::<MultiplierSpec>())
                .collect::<axnn::Result<Vec<_>>>()?;
            let mut rows = Vec::new();
            for spec in specs {
                let table = MultTable::build(&spec, &energy)?;
                rows.push((spec, table.characterize(), table.energy()));
            }
            output::write_characterization(out.as_deref(), &rows)?;
            if let Some(out) = out {
                manifest.param("mult", mults.join(" ")).param("out", out.display());
                if let Some(p) = &energy_table {
                    manifest.input(p)?;
                }
                manifest.write(&manifest_beside(&out), started)?;
            }
        }
        Command::Eval { inputs, plan, report } => {
            let mut manifest = RunManifest::new("eval");
            let loaded = load_inputs(&inputs, &mut manifest)?;
            let plan_value = ApproxPlan::load(&plan)?;
            manifest.input(&plan)?.param("plan", plan.display());
            let evaluator = Evaluator::new(&loaded.model, &loaded.data, loaded.energy)?;
            let record = evaluator.evaluate(&plan_value, inputs.tune)?;
            let mut text = serde_json::to_string_pretty(&output::EvalReport::new(&record))?;
            text.push('\n');
            match report {
                Some(path) => {
                    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
                    println!(
                        "{}: accuracy {:.4} (loss {:.4}), energy gain {:.4}",
                        record.plan_id, record.accuracy, record.accuracy_loss, record.energy_gain
                    );
                    manifest.param("report", path.display());
                    manifest.write(&manifest_beside(&path), started)?;
                }
                None => print!("{text}"),
            }
        }
        Command::Sweep { inputs, mode, mult, out } => {
            let mut manifest = RunManifest::new("sweep");
            let spec: MultiplierSpec = mult.parse()?;
            let loaded = load_inputs(&inputs, &mut manifest)?;
            let evaluator = Evaluator::new(&loaded.model, &loaded.data, loaded.energy)?;
            let records = match mode {
                SweepMode::Single => sweep_single_layer(&evaluator, &spec, inputs.tune)?,
                SweepMode::Prefix => sweep_prefix(&evaluator, &spec, inputs.tune)?,
            };
            output::write_sweep(out.as_deref(), &records)?;
            if let Some(out) = out {
                manifest
                    .param("mode", match mode {
                        SweepMode::Single => "single",
                        SweepMode::Prefix => "prefix",
                    })
                    .param("mult", spec.id())
                    .param("out", out.display());
                manifest.write(&manifest_beside(&out), started)?;
            }
        }
        Command::Explore {
            inputs,
            space,
            mode,
            pop,
            gens,
            seed,
            crossover,
            mutation,
            cap,
            min_accuracy,
            out_dir,
        } => {
            let mut manifest = RunManifest::new("explore");
            if mode == ExploreMode::Nsga2 && seed.is_none() {
                return Err(usage("nsga2 mode requires --seed"));
            }
            if let Some(m) = min_accuracy {
                if !(0.0..=1.0).contains(&m) {
                    return Err(usage(format!("--min-accuracy must lie in [0, 1], got {m}")));
                }
            }
            let loaded = load_inputs(&inputs, &mut manifest)?;
            let mut design = DesignSpace::load(&space, loaded.model.conv_layers().len())?;
            if let Some(cap) = cap {
                design.cap = cap as u128;
            }
            manifest.input(&space)?;
            manifest
                .param("space", space.display())
                .param("space_size", design.size())
                .param("cap", design.cap)
                .param("min_accuracy", min_accuracy.map_or("none".to_string(), |m| m.to_string()))
                .param("out_dir", out_dir.display());
            let evaluator = Evaluator::new(&loaded.model, &loaded.data, loaded.energy)?;
            let result = match mode {
                ExploreMode::Exhaustive => {
                    manifest.param("mode", "exhaustive");
                    dse::exhaustive(&evaluator, &design, inputs.tune)?
                }
                ExploreMode::Nsga2 => {
                    let config = NsgaConfig {
                        population: pop,
                        generations: gens,
                        seed: seed.expect("checked above"),
                        crossover_rate: crossover,
                        mutation_rate: mutation,
                    };
                    manifest
                        .param("mode", "nsga2")
                        .param("pop", pop)
                        .param("gens", gens)
                        .param("crossover", crossover)
                        .param("mutation", mutation.map_or("1/genes".to_string(), |m| m.to_string()));
                    manifest.seed = seed;
                    nsga2(&design, |p| evaluator.evaluate(p, inputs.tune), config)?
                }
            };
            write_exploration(&out_dir, &result.archive, min_accuracy, &evaluator)?;
            manifest.param("archive_size", result.archive.len());
            manifest.write(&out_dir.join("manifest.json"), started)?;
            println!(
                "{} plans evaluated, {} on the front; results in {}",
                result.archive.len(),
                fs::read_dir(out_dir.join("plans"))?.count(),
                out_dir.display()
            );
        }
        Command::Plot { input, out } => {
            let mut manifest = RunManifest::new("plot");
            let (points, front) = output::read_points(&input)?;
            fs::write(&out, output::scatter_svg(&points, &front))
                .with_context(|| format!("writing {}", out.display()))?;
            manifest.input(&input)?.param("out", out.display());
            manifest.write(&manifest_beside(&out), started)?;
        }
        Command::Generate { preset, seed, images, model, data, format } => {
            let mut manifest = RunManifest::new("generate");
            let preset: FixturePreset = preset.parse()?;
            let (qmodel, dataset) = generate_fixture(seed, preset, images)?;
            save_model(&qmodel, &model)?;
            match format {
                DataFormat::Axds => save_dataset(&dataset, &data)?,
                DataFormat::Cifar => save_cifar10(&dataset, &data)?,
            }
            manifest.seed = Some(seed);
            manifest
                .param("preset", preset)
                .param("images", images)
                .param("model", model.display())
                .param("data", data.display());
            manifest.write(&manifest_beside(&model), started)?;
        }
    }
    Ok(())
}

fn write_exploration(
    out_dir: &Path,
    archive: &[dse::EvalRecord],
    min_accuracy: Option<f64>,
    evaluator: &Evaluator,
) -> Result<()> {
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let plans_dir = out_dir.join("plans");
    if plans_dir.exists() {
        fs::remove_dir_all(&plans_dir).with_context(|| format!("clearing {}", plans_dir.display()))?;
    }
    fs::create_dir_all(&plans_dir)?;

    let eligible: Vec<dse::EvalRecord> = archive
        .iter()
        .filter(|r| min_accuracy.is_none_or(|m| r.accuracy >= m))
        .cloned()
        .collect();
    let front = pareto_filter(&eligible);
    let members: HashSet<&str> = front.iter().map(|r| r.plan_id.as_str()).collect();
    let on_front: Vec<bool> = archive.iter().map(|r| members.contains(r.plan_id.as_str())).collect();

    output::write_records(&out_dir.join("archive.csv"), archive, &on_front)?;
    output::write_records(&out_dir.join("front.csv"), &front, &vec![true; front.len()])?;
    for r in &front {
        r.plan.save(&plans_dir.join(format!("{}.toml", r.plan_id)))?;
    }
    let points: Vec<(f64, f64)> = archive.iter().map(|r| (r.energy, r.accuracy_loss)).collect();
    fs::write(out_dir.join("front.svg"), output::scatter_svg(&points, &on_front))?;
    let report = output::front_report(
        &front,
        evaluator.baseline_accuracy(),
        evaluator.data().len(),
        &evaluator.data().digest(),
    );
    fs::write(out_dir.join("report.txt"), report)?;
    if archive.is_empty() {
        bail!("the search evaluated no plans");
    }
    Ok(())
}
