//! CSV tables, the scatter plot, the front report and run manifests.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use axnn::axmult::{ErrorProfile, MultiplierSpec};
use axnn::dse::{pareto_indices, EvalRecord};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const ARCHIVE_HEADER: [&str; 8] = [
    "plan_id",
    "approach",
    "flavor",
    "accuracy",
    "accuracy_loss",
    "energy",
    "energy_gain",
    "dominated",
];

pub fn write_characterization(path: Option<&Path>, rows: &[(MultiplierSpec, ErrorProfile, f64)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["id", "mred", "mae", "max_abs_err", "error_rate", "energy"])?;
    for (spec, p, energy) in rows {
        w.write_record([
            spec.id(),
            p.mred.to_string(),
            p.mae.to_string(),
            p.max_abs_err.to_string(),
            p.error_rate.to_string(),
            energy.to_string(),
        ])?;
    }
    emit(path, &w.into_inner()?)
}

fn emit(path: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match path {
        Some(p) => fs::write(p, bytes).with_context(|| format!("writing {}", p.display())),
        None => {
            use std::io::Write;
            std::io::stdout().write_all(bytes)?;
            Ok(())
        }
    }
}

fn record_row(r: &EvalRecord, dominated: bool) -> [String; 8] {
    [
        r.plan_id.clone(),
        r.plan.approach.to_string(),
        r.plan.flavor.map(|f| f.to_string()).unwrap_or_default(),
        r.accuracy.to_string(),
        r.accuracy_loss.to_string(),
        r.energy.to_string(),
        r.energy_gain.to_string(),
        if dominated { "yes" } else { "no" }.to_string(),
    ]
}

/// Archive or front table. `on_front[i]` marks the non-dominated rows.
pub fn write_records(path: &Path, records: &[EvalRecord], on_front: &[bool]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record(ARCHIVE_HEADER)?;
    for (r, &front) in records.iter().zip(on_front) {
        w.write_record(record_row(r, !front))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_sweep(path: Option<&Path>, records: &[EvalRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "layer",
        "plan_id",
        "accuracy",
        "accuracy_loss",
        "energy",
        "energy_gain",
        "logit_deviation",
    ])?;
    for (m, r) in records.iter().enumerate() {
        w.write_record([
            m.to_string(),
            r.plan_id.clone(),
            r.accuracy.to_string(),
            r.accuracy_loss.to_string(),
            r.energy.to_string(),
            r.energy_gain.to_string(),
            r.logit_deviation.to_string(),
        ])?;
    }
    emit(path, &w.into_inner()?)
}

#[derive(Debug, Serialize)]
pub struct EvalReport<'a> {
    pub plan_id: &'a str,
    pub approach: String,
    pub flavor: Option<String>,
    pub palette: Vec<String>,
    pub klms_k: Option<f64>,
    pub tuned: bool,
    pub images: usize,
    pub accuracy: f64,
    pub accuracy_loss: f64,
    pub energy: f64,
    pub energy_gain: f64,
    pub logit_deviation: f64,
    pub layers: Vec<LayerRow>,
}

#[derive(Debug, Serialize)]
pub struct LayerRow {
    pub conv: usize,
    pub multiplications: u64,
    pub energy: f64,
}

impl<'a> EvalReport<'a> {
    pub fn new(r: &'a EvalRecord) -> Self {
        Self {
            plan_id: &r.plan_id,
            approach: r.plan.approach.to_string(),
            flavor: r.plan.flavor.map(|f| f.to_string()),
            palette: r.plan.palette.iter().map(|s| s.id()).collect(),
            klms_k: r.plan.klms_k,
            tuned: r.tuned,
            images: r.images,
            accuracy: r.accuracy,
            accuracy_loss: r.accuracy_loss,
            energy: r.energy,
            energy_gain: r.energy_gain,
            logit_deviation: r.logit_deviation,
            layers: r
                .per_layer_energy
                .iter()
                .zip(&r.multiplications)
                .enumerate()
                .map(|(conv, (&energy, &multiplications))| LayerRow { conv, multiplications, energy })
                .collect(),
        }
    }
}

/// Front members as a fixed-width table: configuration, accuracy, loss and gain in percent.
pub fn front_report(front: &[EvalRecord], baseline_accuracy: f64, images: usize, data_digest: &str) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# {images} images, data sha256 {data_digest}");
    let _ = writeln!(out, "# baseline accuracy {:.2}%", 100.0 * baseline_accuracy);
    let width = front.iter().map(|r| r.plan_id.len()).max().unwrap_or(0).max(13);
    let _ = writeln!(
        out,
        "{:<width$}  {:>12}  {:>17}  {:>15}",
        "Configuration", "Accuracy (%)", "Accuracy loss (%)", "Energy gain (%)"
    );
    for r in front {
        let _ = writeln!(
            out,
            "{:<width$}  {:>12.2}  {:>17.2}  {:>15.2}",
            r.plan_id,
            100.0 * r.accuracy,
            100.0 * r.accuracy_loss,
            100.0 * r.energy_gain
        );
    }
    out
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
struct PlotRow {
    plan_id: String,
    accuracy_loss: f64,
    energy: f64,
    #[serde(default)]
    dominated: Option<String>,
}

/// Reads `(energy, accuracy_loss)` points and front flags from an archive CSV.
pub fn read_points(path: &Path) -> Result<(Vec<(f64, f64)>, Vec<bool>)> {
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let mut rows = Vec::new();
    for (i, row) in reader.deserialize::<PlotRow>().enumerate() {
        let row = row.with_context(|| format!("{}: malformed row {}", path.display(), i + 1))?;
        if !(row.energy.is_finite() && row.accuracy_loss.is_finite()) {
            bail!("{}: row {} has non-finite values", path.display(), i + 1);
        }
        rows.push(row);
    }
    let points: Vec<(f64, f64)> = rows.iter().map(|r| (r.energy, r.accuracy_loss)).collect();
    let flags = if rows.iter().all(|r| r.dominated.is_some()) {
        rows.iter().map(|r| r.dominated.as_deref() == Some("no")).collect()
    } else {
        let objectives: Vec<(f64, f64)> = rows.iter().map(|r| (r.accuracy_loss, r.energy)).collect();
        let ids: Vec<&str> = rows.iter().map(|r| r.plan_id.as_str()).collect();
        let mut flags = vec![false; rows.len()];
        for i in pareto_indices(&objectives, &ids) {
            flags[i] = true;
        }
        flags
    };
    Ok((points, flags))
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 64.0;

/// Scatter of `(energy, accuracy loss)` with the front drawn as a polyline.
pub fn scatter_svg(points: &[(f64, f64)], on_front: &[bool]) -> String {
    let (mut x0, mut x1, mut y0, mut y1) = points.iter().fold(
        (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY),
        |(a, b, c, d), &(x, y)| (a.min(x), b.max(x), c.min(y), d.max(y)),
    );
    if points.is_empty() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 - x0 <= 0.0 {
        (x0, x1) = (x0 - 0.5, x1 + 0.5);
    }
    if y1 - y0 <= 0.0 {
        (y0, y1) = (y0 - 0.5, y1 + 0.5);
    }
    let px = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
    let py = |y: f64| HEIGHT - MARGIN - (y - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let (left, right, top, bottom) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
    let _ = writeln!(
        s,
        r#"<path d="M{left} {top} V{bottom} H{right}" fill="none" stroke="black"/>"#
    );
    for t in 0..=4 {
        let f = t as f64 / 4.0;
        let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            px(xv),
            bottom + 16.0,
            tick(xv)
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            left - 6.0,
            py(yv) + 4.0,
            tick(yv)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">energy (exact multiplications)</text>"#,
        WIDTH / 2.0,
        HEIGHT - 16.0
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">accuracy loss</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0
    );
    let mut front: Vec<(f64, f64)> = points
        .iter()
        .zip(on_front)
        .filter(|(_, &f)| f)
        .map(|(&p, _)| p)
        .collect();
    front.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.total_cmp(&a.1)));
    if front.len() >= 2 {
        let coords: Vec<String> = front.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
        let _ = writeln!(
            s,
            r#"<polyline class="front" points="{}" fill="none" stroke="crimson" stroke-width="1.5"/>"#,
            coords.join(" ")
        );
    }
    for (&(x, y), &f) in points.iter().zip(on_front) {
        let (class, fill) = if f { ("front", "crimson") } else { ("point", "steelblue") };
        let _ = writeln!(
            s,
            r#"<circle class="{class}" cx="{:.2}" cy="{:.2}" r="3" fill="{fill}"/>"#,
            px(x),
            py(y)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn tick(v: f64) -> String {
    let mut text = format!("{v:.4}");
    while text.contains('.') && (text.ends_with('0') || text.ends_with('.')) {
        text.pop();
    }
    if text == "-0" {
        text = "0".into();
    }
    text
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

/// Provenance written beside every output.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub subcommand: String,
    pub parameters: BTreeMap<String, String>,
    /// Input path to SHA-256 of its bytes.
    pub inputs: BTreeMap<String, String>,
    pub seed: Option<u64>,
    pub started_unix: u64,
    pub wall_clock_seconds: f64,
}

impl RunManifest {
    pub fn new(subcommand: &str) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            subcommand: subcommand.to_string(),
            parameters: BTreeMap::new(),
            inputs: BTreeMap::new(),
            seed: None,
            started_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
            wall_clock_seconds: 0.0,
        }
    }

    pub fn param(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.parameters.insert(key.to_string(), value.to_string());
        self
    }

    pub fn input(&mut self, path: &Path) -> Result<&mut Self> {
        let digest = sha256_file(path)?;
        self.inputs.insert(path.display().to_string(), digest);
        Ok(self)
    }

    pub fn write(&mut self, path: &Path, started: std::time::Instant) -> Result<()> {
        self.wall_clock_seconds = started.elapsed().as_secs_f64();
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text).with_context(|| format!("writing {}", path.display()))
    }
}

/// `<file>.manifest.json` next to `path`.
pub fn manifest_beside(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    path.with_file_name(name)
}
