//! Finite configuration spaces and their exhaustive enumeration.
//!
//! A space file is TOML:
//!
//! ```toml
//! approach = "flam"
//! palette = ["exact", "ROUP_M"]
//! groups = 2             # flam: filter groups per layer
//! # list_len = 3         # klam: length of the cyclic list
//! # flavor = "row"       # klam only
//! # choices = [0, 1]     # palette indices allowed in every layer
//! # layer_choices = [[0], [0, 1]]   # per-layer override
//! # klms_k = [1.0, 2.0]  # searched KLMS widths
//! # klms_off = true      # also try without KLMS (default, except for klms)
//! # cap = 100000         # largest space exhaustive mode accepts
//! ```
//!
//! Every plan is a genome: one gene per conv layer whose value indexes that
//! layer's assignments, plus one gene for the KLMS width when it is searched.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::axmult::MultiplierSpec;
use crate::error::{Error, Result};
use crate::plan::{Approach, ApproxPlan, Flavor, LayerAssignment};

pub const DEFAULT_CAP: u128 = 100_000;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpaceFile {
    approach: Approach,
    #[serde(default)]
    flavor: Option<Flavor>,
    palette: Vec<String>,
    #[serde(default)]
    layers: Option<usize>,
    #[serde(default)]
    groups: Option<usize>,
    #[serde(default)]
    list_len: Option<usize>,
    #[serde(default)]
    choices: Option<Vec<usize>>,
    #[serde(default)]
    layer_choices: Option<Vec<Vec<usize>>>,
    #[serde(default)]
    klms_k: Vec<f64>,
    #[serde(default)]
    klms_off: Option<bool>,
    #[serde(default)]
    cap: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignSpace {
    pub approach: Approach,
    pub flavor: Option<Flavor>,
    pub palette: Vec<MultiplierSpec>,
    /// Palette indices per assignment entry (1 for LLAM/KLMS, G for FLAM, list length for KLAM).
    pub slots: usize,
    /// Allowed palette indices, per conv layer.
    pub layer_choices: Vec<Vec<usize>>,
    /// Values of the KLMS gene; a single entry means it is not searched.
    pub klms: Vec<Option<f64>>,
    pub cap: u128,
}

impl DesignSpace {
    /// LLAM over `palette` for `layers` convolutions.
    pub fn llam(palette: Vec<MultiplierSpec>, layers: usize) -> Self {
        let all: Vec<usize> = (0..palette.len()).collect();
        Self {
            approach: Approach::Llam,
            flavor: None,
            palette,
            slots: 1,
            layer_choices: vec![all; layers],
            klms: vec![None],
            cap: DEFAULT_CAP,
        }
    }

    /// Parses a space file; `conv_layers` fills in (or must match) `layers`.
    pub fn parse(text: &str, conv_layers: usize) -> Result<Self> {
        let file: SpaceFile = toml::from_str(text).map_err(|e| Error::Space(e.to_string().trim_end().to_string()))?;
        let palette = file
            .palette
            .iter()
            .enumerate()
            .map(|(i, id)| id.parse().map_err(|e| Error::Space(format!("palette[{i}]: {e}"))))
            .collect::<Result<Vec<MultiplierSpec>>>()?;
        if palette.is_empty() {
            return Err(Error::Space("palette is empty".into()));
        }
        let layers = match file.layers {
            Some(n) if n != conv_layers => {
                return Err(Error::Mismatch(format!("space declares {n} layers, model has {conv_layers} convolutions")))
            }
            _ => conv_layers,
        };
        let slots = match file.approach {
            Approach::Llam | Approach::Klms => {
                if file.groups.is_some() || file.list_len.is_some() {
                    return Err(Error::Space(format!("groups/list_len do not apply to {}", file.approach)));
                }
                1
            }
            Approach::Flam => file.groups.ok_or_else(|| Error::Space("flam spaces need `groups`".into()))?,
            Approach::Klam => file.list_len.ok_or_else(|| Error::Space("klam spaces need `list_len`".into()))?,
        };
        if slots == 0 {
            return Err(Error::Space("groups/list_len must be at least 1".into()));
        }
        let all: Vec<usize> = (0..palette.len()).collect();
        let layer_choices = match (file.layer_choices, file.choices) {
            (Some(_), Some(_)) => return Err(Error::Space("give either `choices` or `layer_choices`".into())),
            (Some(per_layer), None) => {
                if per_layer.len() != layers {
                    return Err(Error::Mismatch(format!(
                        "layer_choices has {} entries, model has {layers} convolutions",
                        per_layer.len()
                    )));
                }
                per_layer
            }
            (None, Some(choices)) => vec![choices; layers],
            (None, None) => vec![all; layers],
        };
        let off = file.klms_off.unwrap_or(file.approach != Approach::Klms);
        let mut klms: Vec<Option<f64>> = Vec::new();
        if off {
            klms.push(None);
        }
        klms.extend(file.klms_k.iter().map(|&k| Some(k)));
        let space = DesignSpace {
            approach: file.approach,
            flavor: file.flavor,
            palette,
            slots,
            layer_choices,
            klms,
            cap: file.cap.map_or(DEFAULT_CAP, u128::from),
        };
        space.validate()?;
        Ok(space)
    }

    pub fn load(path: &Path, conv_layers: usize) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, conv_layers).map_err(|e| match e {
            Error::Space(msg) => Error::Space(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.palette.is_empty() {
            return Err(Error::Space("palette is empty".into()));
        }
        if self.layer_choices.is_empty() {
            return Err(Error::Space("no layers to assign".into()));
        }
        for (i, choices) in self.layer_choices.iter().enumerate() {
            if choices.is_empty() {
                return Err(Error::Space(format!("layer {i} has no allowed multipliers")));
            }
            let mut sorted = choices.clone();
            sorted.sort_unstable();
            sorted.dedup();
            if sorted.len() != choices.len() {
                return Err(Error::Space(format!("layer {i} lists a multiplier twice")));
            }
            if let Some(&bad) = choices.iter().find(|&&c| c >= self.palette.len()) {
                return Err(Error::Space(format!("layer {i}: palette index {bad} out of range")));
            }
        }
        if self.klms.is_empty() {
            return Err(Error::Space("klms_off = false needs at least one klms_k".into()));
        }
        if self.approach == Approach::Klms && self.klms.contains(&None) {
            return Err(Error::Space("klms spaces need a KLMS width in every plan".into()));
        }
        // every plan of the space must itself be valid
        let probe = self.decode(&vec![0; self.genes()]);
        probe.validate().map_err(|e| Error::Space(e.to_string()))
    }

    /// Assignments available to one layer.
    pub fn layer_domain(&self, layer: usize) -> u128 {
        (self.layer_choices[layer].len() as u128).saturating_pow(self.slots as u32)
    }

    /// Domain size of every gene.
    pub fn gene_domains(&self) -> Vec<u128> {
        let mut domains: Vec<u128> = (0..self.layer_choices.len()).map(|l| self.layer_domain(l)).collect();
        if self.klms.len() > 1 {
            domains.push(self.klms.len() as u128);
        }
        domains
    }

    pub fn genes(&self) -> usize {
        self.layer_choices.len() + usize::from(self.klms.len() > 1)
    }

    /// Number of plans, saturating at `u128::MAX`.
    pub fn size(&self) -> u128 {
        self.gene_domains()
            .into_iter()
            .fold(1u128, |acc, d| acc.saturating_mul(d))
    }

    /// Plan of a genome (gene values must be inside their domains).
    pub fn decode(&self, genome: &[u128]) -> ApproxPlan {
        let layers = self
            .layer_choices
            .iter()
            .zip(genome)
            .map(|(choices, &gene)| {
                let base = choices.len() as u128;
                let mut digits = vec![0usize; self.slots];
                let mut rest = gene;
                for slot in (0..self.slots).rev() {
                    digits[slot] = choices[(rest % base) as usize];
                    rest /= base;
                }
                LayerAssignment(digits)
            })
            .collect();
        let klms_k = if self.klms.len() > 1 {
            self.klms[genome[self.layer_choices.len()] as usize]
        } else {
            self.klms[0]
        };
        ApproxPlan {
            approach: self.approach,
            flavor: self.flavor,
            palette: self.palette.clone(),
            layers,
            klms_k,
        }
    }
}

/// Every plan of the space in odometer order (last gene fastest).
pub fn enumerate_space(space: &DesignSpace) -> Result<impl Iterator<Item = ApproxPlan> + '_> {
    space.validate()?;
    let size = space.size();
    if size > space.cap {
        return Err(Error::SpaceTooLarge { size, cap: space.cap });
    }
    let domains = space.gene_domains();
    Ok((0..size).map(move |mut index| {
        let mut genome = vec![0u128; domains.len()];
        for (gene, &d) in genome.iter_mut().zip(&domains).rev() {
            *gene = index % d;
            index /= d;
        }
        space.decode(&genome)
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    const L3: &str = "palette = [\"ROUP_L\", \"ROUP_M\", \"ROUP_H\"]\n";

    #[test]
    fn counts() {
        let s = DesignSpace::parse(&format!("approach = \"llam\"\n{L3}"), 7).unwrap();
        assert_eq!(s.size(), 2187);
        let ids: HashSet<String> = enumerate_space(&s).unwrap().map(|p| p.plan_id()).collect();
        assert_eq!(ids.len(), 2187);
        let first = enumerate_space(&s).unwrap().next().unwrap();
        assert_eq!(first.plan_id(), "llam_0-0-0-0-0-0-0");

        let f = DesignSpace::parse("approach = \"flam\"\npalette = [\"exact\", \"ROUP_M\"]\ngroups = 2\n", 7).unwrap();
        assert_eq!(f.size(), 16_384);
        let ids: HashSet<String> = enumerate_space(&f).unwrap().map(|p| p.plan_id()).collect();
        assert_eq!(ids.len(), 16_384);

        let k = DesignSpace::parse(&format!("approach = \"klam\"\nflavor = \"row\"\nlist_len = 2\n{L3}klms_k = [1.0, 2.0]\n"), 2).unwrap();
        assert_eq!(k.size(), 9 * 9 * 3);
        assert_eq!(enumerate_space(&k).unwrap().count(), 243);
    }

    #[test]
    fn errors() {
        assert!(DesignSpace::parse("approach = \"llam\"\npalette = []\n", 3).is_err());
        let big = DesignSpace::parse(&format!("approach = \"llam\"\n{L3}cap = 100\n"), 7).unwrap();
        assert!(matches!(enumerate_space(&big).err(), Some(Error::SpaceTooLarge { size: 2187, cap: 100 })));
        assert!(matches!(
            DesignSpace::parse(&format!("approach = \"llam\"\n{L3}layers = 3\n"), 7),
            Err(Error::Mismatch(_))
        ));
        assert!(DesignSpace::parse(&format!("approach = \"flam\"\n{L3}"), 7).is_err());
        assert!(DesignSpace::parse(&format!("approach = \"llam\"\n{L3}choices = [3]\n"), 7).is_err());
        assert!(DesignSpace::parse(&format!("approach = \"llam\"\n{L3}bogus = 1\n"), 7).is_err());
        assert!(DesignSpace::parse(&format!("approach = \"klms\"\n{L3}klms_k = [1.0]\n"), 7).is_err());
        let klms = DesignSpace::parse("approach = \"klms\"\npalette = [\"exact\"]\nklms_k = [1.0, 2.0]\n", 4).unwrap();
        assert_eq!(klms.size(), 2);
    }

    #[test]
    fn single_plan_space() {
        let s = DesignSpace::parse("approach = \"llam\"\npalette = [\"exact\"]\n", 3).unwrap();
        let plans: Vec<ApproxPlan> = enumerate_space(&s).unwrap().collect();
        assert_eq!(plans, vec![ApproxPlan::identity(3)]);
    }
}
