//! Functional model of the ROUP approximate multiplier family.
//!
//! A ROUP multiplier recodes the second operand `B` into radix-4 digits and
//! accumulates one partial product per digit. Two independent knobs trade
//! accuracy for energy:
//!
//! * **perforation** `P` drops the `P` least-significant partial products;
//! * **asymmetric rounding** rounds the multiplicand `A` to a different bit
//!   position `r[j]` for every surviving partial product `j`.
//!
//! ```text
//! ROUP(A, B) = sum_{j=P}^{N/2-1} round(A, r[j]) * digit_j(B) * 4^j
//! round(A, r) = (<a_{N-1} .. a_r> + a_{r-1}) * 2^r
//! ```
//!
//! The engine works on signed 8-bit operands through [`MultTable`], a dense
//! 256x256 product table built once per [`MultiplierSpec`].

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::{Arc, OnceLock};

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Operand width of every table-backed multiplier.
pub const TABLE_BITS: u32 = 8;
/// Number of signed 8-bit operand pairs.
pub const TABLE_LEN: usize = 1 << 16;

pub const ID_GRAMMAR: &str = "exact | roup:P=<int>,R=<int> | roup:P=<int>,r=<int>-<int>-<int>-<int> | lut:<path> | ROUP_L | ROUP_M | ROUP_H";

/// The three kinds of multiplier a [`MultiplierSpec`] can name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MultiplierKind {
    Exact,
    Roup,
    ExternalTable,
}

/// Identifies one multiplier. The canonical text form is its id, see [`ID_GRAMMAR`].
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MultiplierSpec {
    Exact,
    Roup(RoupConfig),
    /// Product table imported from a file (e.g. an EvoApprox8b dump).
    ExternalTable(PathBuf),
}

/// Perforation and rounding schedule of one ROUP multiplier.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RoupConfig {
    bitwidth: u32,
    perforation: u32,
    rounding: Vec<u32>,
    /// `Some(R)` when the schedule came from the two-parameter family.
    family: Option<u32>,
}

impl RoupConfig {
    /// Two-parameter family: `r[j] = max(0, R - 2(j - P))` for surviving
    /// products, so the least significant surviving product is rounded hardest.
    pub fn family(bitwidth: u32, perforation: u32, strength: u32) -> Result<Self> {
        check_geometry(bitwidth, perforation)?;
        if strength >= bitwidth {
            return Err(Error::InvalidSpec(format!(
                "rounding strength R={strength} must be below the bit width {bitwidth}"
            )));
        }
        let rounding = (0..bitwidth / 2)
            .map(|j| {
                if j < perforation {
                    0
                } else {
                    strength.saturating_sub(2 * (j - perforation))
                }
            })
            .collect();
        Ok(Self {
            bitwidth,
            perforation,
            rounding,
            family: Some(strength),
        })
    }

    /// Explicit schedule, one entry per partial product (least significant first).
    /// Entries below `perforation` are kept but have no effect.
    pub fn explicit(bitwidth: u32, perforation: u32, rounding: Vec<u32>) -> Result<Self> {
        check_geometry(bitwidth, perforation)?;
        if rounding.len() != (bitwidth / 2) as usize {
            return Err(Error::InvalidSpec(format!(
                "rounding schedule needs {} entries for N={bitwidth}, got {}",
                bitwidth / 2,
                rounding.len()
            )));
        }
        if let Some(bad) = rounding.iter().find(|&&r| r >= bitwidth) {
            return Err(Error::InvalidSpec(format!(
                "rounding position {bad} out of range [0, {}]",
                bitwidth - 1
            )));
        }
        Ok(Self {
            bitwidth,
            perforation,
            rounding,
            family: None,
        })
    }

    pub fn bitwidth(&self) -> u32 {
        self.bitwidth
    }

    pub fn perforation(&self) -> u32 {
        self.perforation
    }

    pub fn rounding(&self) -> &[u32] {
        &self.rounding
    }

    pub fn family_strength(&self) -> Option<u32> {
        self.family
    }

    /// Evaluates the ROUP sum for `bitwidth`-bit two's-complement operands.
    pub fn multiply(&self, a: i64, b: i64) -> i64 {
        let digits = booth_digits(b, self.bitwidth);
        (self.perforation as usize..digits.len())
            .map(|j| {
                let digit = digits[j] as i64;
                if digit == 0 {
                    0
                } else {
                    (round_operand(a, self.rounding[j]) * digit) << (2 * j)
                }
            })
            .sum()
    }

    /// Bits of the partial-product matrix still generated after perforation and rounding.
    pub fn active_bits(&self) -> u32 {
        (self.perforation as usize..self.rounding.len())
            .map(|j| self.bitwidth - self.rounding[j])
            .sum()
    }

    pub fn total_bits(&self) -> u32 {
        (self.bitwidth / 2) * self.bitwidth
    }
}

fn check_geometry(bitwidth: u32, perforation: u32) -> Result<()> {
    if bitwidth == 0 || !bitwidth.is_multiple_of(2) || bitwidth > 32 {
        return Err(Error::InvalidSpec(format!(
            "bit width must be even and in [2, 32], got {bitwidth}"
        )));
    }
    if perforation > bitwidth / 2 {
        return Err(Error::InvalidSpec(format!(
            "perforation P={perforation} exceeds N/2={}",
            bitwidth / 2
        )));
    }
    Ok(())
}

/// Radix-4 recoding of `b` (read as a `bitwidth`-bit two's-complement value).
///
/// Digit `j` is `-2 b_{2j+1} + b_{2j} + b_{2j-1}` with `b_{-1} = 0`.
pub fn booth_digits(b: i64, bitwidth: u32) -> Vec<i8> {
    let bit = |i: i64| -> i8 {
        if i < 0 {
            0
        } else {
            ((b >> i) & 1) as i8
        }
    };
    (0..(bitwidth / 2) as i64)
        .map(|j| -2 * bit(2 * j + 1) + bit(2 * j) + bit(2 * j - 1))
        .collect()
}

/// Rounds `a` at bit position `r` and reports it at the original scale:
/// `(floor(a / 2^r) + a_{r-1}) * 2^r`. `r = 0` is the identity.
pub fn round_operand(a: i64, r: u32) -> i64 {
    if r == 0 {
        return a;
    }
    ((a >> r) + ((a >> (r - 1)) & 1)) << r
}

/// Product of two signed 8-bit operands under `spec`.
///
/// Fails for table imports (they have no functional model) and for ROUP
/// configurations wider than 8 bits.
pub fn roup_multiply(a: i8, b: i8, spec: &MultiplierSpec) -> Result<i32> {
    match spec {
        MultiplierSpec::Exact => Ok(a as i32 * b as i32),
        MultiplierSpec::Roup(cfg) if cfg.bitwidth == TABLE_BITS => {
            Ok(cfg.multiply(a as i64, b as i64) as i32)
        }
        MultiplierSpec::Roup(cfg) => Err(Error::InvalidSpec(format!(
            "8-bit evaluation requested for an N={} configuration",
            cfg.bitwidth
        ))),
        MultiplierSpec::ExternalTable(path) => Err(Error::InvalidSpec(format!(
            "lut:{} has no functional model; load it with MultTable::build",
            path.display()
        ))),
    }
}

impl MultiplierSpec {
    pub fn roup(perforation: u32, strength: u32) -> Result<Self> {
        RoupConfig::family(TABLE_BITS, perforation, strength).map(MultiplierSpec::Roup)
    }

    pub fn kind(&self) -> MultiplierKind {
        match self {
            MultiplierSpec::Exact => MultiplierKind::Exact,
            MultiplierSpec::Roup(_) => MultiplierKind::Roup,
            MultiplierSpec::ExternalTable(_) => MultiplierKind::ExternalTable,
        }
    }

    pub fn id(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for MultiplierSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MultiplierSpec::Exact => f.write_str("exact"),
            MultiplierSpec::ExternalTable(path) => write!(f, "lut:{}", path.display()),
            MultiplierSpec::Roup(cfg) => {
                f.write_str("roup:")?;
                if cfg.bitwidth != TABLE_BITS {
                    write!(f, "N={},", cfg.bitwidth)?;
                }
                write!(f, "P={},", cfg.perforation)?;
                match cfg.family {
                    Some(strength) => write!(f, "R={strength}"),
                    None => {
                        let schedule: Vec<String> =
                            cfg.rounding.iter().map(|r| r.to_string()).collect();
                        write!(f, "r={}", schedule.join("-"))
                    }
                }
            }
        }
    }
}

impl FromStr for MultiplierSpec {
    type Err = Error;

    fn from_str(id: &str) -> Result<Self> {
        let fail = |reason: &str| Error::MultiplierId {
            id: id.to_string(),
            reason: reason.to_string(),
        };
        let trimmed = id.trim();
        if trimmed == "exact" {
            return Ok(MultiplierSpec::Exact);
        }
        if let Some(preset) = Preset::from_label(trimmed) {
            return Ok(preset.spec());
        }
        if let Some(path) = trimmed.strip_prefix("lut:") {
            if path.is_empty() {
                return Err(fail("empty table path"));
            }
            return Ok(MultiplierSpec::ExternalTable(PathBuf::from(path)));
        }
        let Some(body) = trimmed.strip_prefix("roup:") else {
            return Err(fail("unknown multiplier kind"));
        };

        let mut fields: BTreeMap<&str, &str> = BTreeMap::new();
        for item in body.split(',') {
            let (key, value) = item
                .split_once('=')
                .ok_or_else(|| fail(&format!("`{item}` is not key=value")))?;
            if !matches!(key, "N" | "P" | "R" | "r") {
                return Err(fail(&format!("unknown key `{key}`")));
            }
            if fields.insert(key, value).is_some() {
                return Err(fail(&format!("duplicate key `{key}`")));
            }
        }
        let int = |key: &str, value: &str| -> Result<u32> {
            value
                .parse::<u32>()
                .map_err(|_| fail(&format!("{key}=`{value}` is not a non-negative integer")))
        };
        let bitwidth = match fields.get("N") {
            Some(v) => int("N", v)?,
            None => TABLE_BITS,
        };
        let perforation = int("P", fields.get("P").ok_or_else(|| fail("missing P"))?)?;
        let cfg = match (fields.get("R"), fields.get("r")) {
            (Some(strength), None) => {
                RoupConfig::family(bitwidth, perforation, int("R", strength)?)
            }
            (None, Some(schedule)) => {
                let rounding = schedule
                    .split('-')
                    .map(|v| int("r", v))
                    .collect::<Result<Vec<_>>>()?;
                RoupConfig::explicit(bitwidth, perforation, rounding)
            }
            _ => return Err(fail("exactly one of R or r is required")),
        }
        .map_err(|e| fail(&e.to_string()))?;
        Ok(MultiplierSpec::Roup(cfg))
    }
}

/// Named approximation strengths used by the sensitivity sweeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Preset {
    Low,
    Medium,
    High,
}

impl Preset {
    pub const ALL: [Preset; 3] = [Preset::Low, Preset::Medium, Preset::High];

    pub fn label(self) -> &'static str {
        match self {
            Preset::Low => "ROUP_L",
            Preset::Medium => "ROUP_M",
            Preset::High => "ROUP_H",
        }
    }

    pub fn from_label(label: &str) -> Option<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.label().eq_ignore_ascii_case(label))
    }

    /// Proxy energy each preset is calibrated against.
    pub fn target_energy(self) -> f64 {
        match self {
            Preset::Low => 0.90,
            Preset::Medium => 0.80,
            Preset::High => 0.65,
        }
    }

    /// Frozen result of [`calibrate_preset`] under the default proxy.
    pub fn spec(self) -> MultiplierSpec {
        let (perforation, strength) = match self {
            Preset::Low => (0, 4),
            Preset::Medium => (1, 1),
            Preset::High => (2, 0),
        };
        MultiplierSpec::roup(perforation, strength).expect("preset geometry is valid")
    }
}

/// Picks the 8-bit `roup(P, R)` family member whose proxy energy is closest
/// to `target` without exceeding it. Equal energies prefer the larger `P`.
pub fn calibrate_preset(target: f64, overhead: f64) -> Option<RoupConfig> {
    let mut best: Option<(f64, RoupConfig)> = None;
    for perforation in 0..TABLE_BITS / 2 {
        for strength in 0..TABLE_BITS {
            let cfg = RoupConfig::family(TABLE_BITS, perforation, strength).ok()?;
            let energy = proxy_energy(&cfg, overhead);
            if energy > target {
                continue;
            }
            let replace = match &best {
                None => true,
                Some((e, b)) => energy > *e || (energy == *e && perforation > b.perforation),
            };
            if replace {
                best = Some((energy, cfg));
            }
        }
    }
    best.map(|(_, cfg)| cfg)
}

/// Energy proxy `c0 + (1 - c0) * active_bits / total_bits`.
pub fn proxy_energy(cfg: &RoupConfig, overhead: f64) -> f64 {
    overhead + (1.0 - overhead) * cfg.active_bits() as f64 / cfg.total_bits() as f64
}

/// Per-multiplication energy, normalized so the exact multiplier costs 1.0.
///
/// Measured values loaded from an energy-table file take precedence over the
/// proxy; imported tables must always have a measured entry.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyModel {
    overhead: f64,
    measured: BTreeMap<String, f64>,
}

impl Default for EnergyModel {
    fn default() -> Self {
        Self::proxy()
    }
}

impl EnergyModel {
    pub const DEFAULT_OVERHEAD: f64 = 0.25;

    pub fn proxy() -> Self {
        Self {
            overhead: Self::DEFAULT_OVERHEAD,
            measured: BTreeMap::new(),
        }
    }

    pub fn with_overhead(overhead: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&overhead) {
            return Err(Error::InvalidArgument(format!(
                "energy overhead {overhead} outside [0, 1]"
            )));
        }
        Ok(Self {
            overhead,
            measured: BTreeMap::new(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Parses `id value` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut model = Self::proxy();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split_once('#').map_or(raw, |(l, _)| l).trim();
            if line.is_empty() {
                continue;
            }
            let err = |reason: String| Error::EnergyTable {
                line: line_no,
                reason,
            };
            let (id, value) = line
                .rsplit_once(char::is_whitespace)
                .ok_or_else(|| err("expected `<multiplier id> <energy>`".into()))?;
            let spec: MultiplierSpec = id.trim().parse().map_err(|e: Error| err(e.to_string()))?;
            let energy: f64 = value
                .parse()
                .map_err(|_| err(format!("`{value}` is not a number")))?;
            if !energy.is_finite() || energy < 0.0 {
                return Err(err(format!("energy {energy} must be finite and non-negative")));
            }
            model.measured.insert(spec.id(), energy);
        }
        Ok(model)
    }

    pub fn insert(&mut self, spec: &MultiplierSpec, energy: f64) {
        self.measured.insert(spec.id(), energy);
    }

    pub fn overhead(&self) -> f64 {
        self.overhead
    }

    pub fn energy_of(&self, spec: &MultiplierSpec) -> Result<f64> {
        if let Some(&measured) = self.measured.get(&spec.id()) {
            return Ok(measured);
        }
        match spec {
            MultiplierSpec::Exact => Ok(1.0),
            MultiplierSpec::Roup(cfg) => Ok(proxy_energy(cfg, self.overhead)),
            MultiplierSpec::ExternalTable(_) => Err(Error::MissingEnergy(spec.id())),
        }
    }
}

/// Exhaustive error statistics of a table against exact multiplication.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorProfile {
    /// Mean of `|approx - exact| / max(1, |exact|)`.
    pub mred: f64,
    pub mae: f64,
    pub max_abs_err: u32,
    /// Fraction of operand pairs with any error.
    pub error_rate: f64,
}

/// Immutable signed 8x8 product table of one multiplier.
#[derive(Clone)]
pub struct MultTable {
    spec: MultiplierSpec,
    products: Box<[i32]>,
    energy: f64,
}

impl fmt::Debug for MultTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MultTable")
            .field("spec", &self.spec.id())
            .field("energy", &self.energy)
            .finish_non_exhaustive()
    }
}

/// Position of the operand pair `(a, b)` in a table.
#[inline]
pub fn table_index(a: i8, b: i8) -> usize {
    ((a as i32 + 128) as usize) << 8 | (b as i32 + 128) as usize
}

impl MultTable {
    pub fn build(spec: &MultiplierSpec, energy: &EnergyModel) -> Result<Self> {
        let energy = energy.energy_of(spec)?;
        let products = match spec {
            MultiplierSpec::ExternalTable(path) => load_external_table(path)?,
            MultiplierSpec::Roup(cfg) if cfg.bitwidth != TABLE_BITS => {
                return Err(Error::InvalidSpec(format!(
                    "tables need N={TABLE_BITS}, got N={}",
                    cfg.bitwidth
                )))
            }
            _ => {
                let mut products = vec![0i32; TABLE_LEN];
                products
                    .par_chunks_mut(256)
                    .enumerate()
                    .for_each(|(row, chunk)| {
                        let a = row as i32 - 128;
                        for (col, slot) in chunk.iter_mut().enumerate() {
                            let b = col as i32 - 128;
                            *slot = match spec {
                                MultiplierSpec::Roup(cfg) => cfg.multiply(a as i64, b as i64) as i32,
                                _ => a * b,
                            };
                        }
                    });
                products
            }
        };
        Self::from_products(spec.clone(), products, energy)
    }

    pub fn from_products(spec: MultiplierSpec, products: Vec<i32>, energy: f64) -> Result<Self> {
        if products.len() != TABLE_LEN {
            return Err(Error::InvalidSpec(format!(
                "a product table needs {TABLE_LEN} entries, got {}",
                products.len()
            )));
        }
        if !energy.is_finite() || energy < 0.0 {
            return Err(Error::InvalidSpec(format!("energy {energy} must be non-negative")));
        }
        Ok(Self {
            spec,
            products: products.into_boxed_slice(),
            energy,
        })
    }

    /// Shared exact table with unit energy.
    pub fn exact() -> Arc<MultTable> {
        static EXACT: OnceLock<Arc<MultTable>> = OnceLock::new();
        EXACT
            .get_or_init(|| {
                Arc::new(
                    MultTable::build(&MultiplierSpec::Exact, &EnergyModel::proxy())
                        .expect("exact table always builds"),
                )
            })
            .clone()
    }

    pub fn spec(&self) -> &MultiplierSpec {
        &self.spec
    }

    pub fn energy(&self) -> f64 {
        self.energy
    }

    pub fn products(&self) -> &[i32] {
        &self.products
    }

    #[inline]
    pub fn get(&self, a: i8, b: i8) -> i32 {
        self.products[table_index(a, b)]
    }

    pub fn is_exact(&self) -> bool {
        self.characterize().error_rate == 0.0
    }

    pub fn characterize(&self) -> ErrorProfile {
        let mut red = 0.0f64;
        let mut abs = 0u64;
        let mut max_abs_err = 0u32;
        let mut wrong = 0u64;
        for a in -128i32..128 {
            for b in -128i32..128 {
                let exact = a * b;
                let err = (self.products[table_index(a as i8, b as i8)] - exact).unsigned_abs();
                if err != 0 {
                    wrong += 1;
                    abs += err as u64;
                    max_abs_err = max_abs_err.max(err);
                    red += err as f64 / exact.unsigned_abs().max(1) as f64;
                }
            }
        }
        let n = TABLE_LEN as f64;
        ErrorProfile {
            mred: red / n,
            mae: abs as f64 / n,
            max_abs_err,
            error_rate: wrong as f64 / n,
        }
    }
}

/// Reads an external product table.
///
/// Two layouts are accepted, both indexed by `(a + 128) * 256 + (b + 128)`:
/// 65 536 little-endian `i32` signed products, or 65 536 little-endian `u16`
/// unsigned products `U` of the offset operands `a + 128` and `b + 128`. The
/// latter are remapped as `a*b = U - 128(a + 128) - 128(b + 128) + 16384`.
pub fn load_external_table(path: &Path) -> Result<Vec<i32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    match bytes.len() {
        n if n == TABLE_LEN * 4 => Ok(bytes
            .chunks_exact(4)
            .map(|c| i32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect()),
        n if n == TABLE_LEN * 2 => Ok(bytes
            .chunks_exact(2)
            .enumerate()
            .map(|(idx, c)| {
                let unsigned = u16::from_le_bytes([c[0], c[1]]) as i32;
                let ua = (idx >> 8) as i32;
                let ub = (idx & 0xff) as i32;
                unsigned - 128 * ua - 128 * ub + 16384
            })
            .collect()),
        n => {
            let (offset, reason) = if n < TABLE_LEN * 2 {
                (n as u64, format!("u16 table truncated, expected {} bytes", TABLE_LEN * 2))
            } else if n < TABLE_LEN * 4 {
                (n as u64, format!("i32 table truncated, expected {} bytes", TABLE_LEN * 4))
            } else {
                ((TABLE_LEN * 4) as u64, "trailing bytes after 65536 i32 entries".into())
            };
            Err(Error::TableFormat {
                path: path.to_path_buf(),
                offset,
                reason,
            })
        }
    }
}
