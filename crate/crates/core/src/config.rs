//! Run configuration. One TOML file determines a run; every default is
//! filled in on load so the resolved form can be echoed back verbatim.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cce::{AdaptiveGrid, CceSettings, STRETCH_RANGE};
use crate::crystal::{sample_ensemble, BathConfiguration, LatticeSpec, SpeciesSpec};
use crate::error::{Error, Result};
use crate::hamiltonian::ExperimentConditions;
use crate::sequences::{SequenceKind, SequenceSpec, SequenceTemplate};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Drives crystal sampling and bath-state sampling; overrides `cce.seed`.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Bath JSON files from a previous `generate`; sampled on the fly when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bath_dir: Option<PathBuf>,
    pub lattice: LatticeSpec,
    pub species: Vec<SpeciesSpec>,
    /// Label of the central species; the first species when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub central: Option<String>,
    pub conditions: Conditions,
    #[serde(default)]
    pub cce: CceSettings,
    #[serde(default = "default_sequence")]
    pub sequence: SequenceSpec,
    #[serde(default)]
    pub t2: AdaptiveGrid,
    #[serde(default)]
    pub sweep: Sweep,
}

#[allow(non_snake_case)]
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Conditions {
    pub field_mT: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature_mK: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperatures_mK: Option<Vec<f64>>,
}

/// Axes swept by the `xy8` and `id` simulate modes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Sweep {
    pub n_pulses: Vec<usize>,
    pub theta_deg: Vec<f64>,
}

impl Default for Sweep {
    fn default() -> Self {
        Self {
            n_pulses: vec![8, 16, 32, 64],
            theta_deg: vec![180.0],
        }
    }
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_sequence() -> SequenceSpec {
    SequenceSpec {
        kind: SequenceKind::Hahn,
        tau_us: None,
        theta_deg: None,
        n_pulses: None,
        tw_us: None,
    }
}

fn field(path: &str, e: Error) -> Error {
    let msg = match e {
        Error::Invalid(m) => m,
        other => other.to_string(),
    };
    Error::Config(format!("{path}: {msg}"))
}

impl RunConfig {
    /// Parses and validates; errors carry the line or the field path.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.cce.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.lattice.validate().map_err(|e| field("lattice", e))?;
        if self.species.is_empty() {
            return Err(Error::Config("species: at least one species is required".into()));
        }
        for (k, s) in self.species.iter().enumerate() {
            s.validate().map_err(|e| field(&format!("species[{k}]"), e))?;
            if self.species[..k].iter().any(|o| o.label == s.label) {
                return Err(Error::Config(format!("species[{k}]: duplicate label `{}`", s.label)));
            }
        }
        self.central_index()?;
        let c = &self.conditions;
        if !(c.field_mT > 0.0 && c.field_mT.is_finite()) {
            return Err(Error::Config("conditions.field_mT: must be positive".into()));
        }
        let temps = match (&c.temperature_mK, &c.temperatures_mK) {
            (Some(t), None) => vec![*t],
            (None, Some(ts)) if !ts.is_empty() => ts.clone(),
            _ => {
                return Err(Error::Config(
                    "conditions: give exactly one of temperature_mK or a non-empty temperatures_mK".into(),
                ))
            }
        };
        if temps.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
            return Err(Error::Config("conditions: temperatures must be positive".into()));
        }
        self.cce.validate().map_err(|e| field("cce", e))?;
        self.sequence.template().map_err(|e| field("sequence", e))?;
        if self.sweep.n_pulses.is_empty() || self.sweep.n_pulses.iter().any(|n| n % 8 != 0 || *n == 0) {
            return Err(Error::Config("sweep.n_pulses: need positive multiples of 8".into()));
        }
        if self.sweep.theta_deg.is_empty() || self.sweep.theta_deg.iter().any(|t| !(*t > 0.0 && *t <= 180.0)) {
            return Err(Error::Config("sweep.theta_deg: angles must lie in (0, 180]".into()));
        }
        let g = &self.t2;
        if g.coarse_points < 6 || g.final_points < 6 || !(g.initial_t_max > 0.0) || !(g.span > 1.0) || !(g.max_t >= g.initial_t_max) {
            return Err(Error::Config(
                "t2: need coarse/final points ≥ 6, initial_t_max > 0, max_t ≥ initial_t_max, span > 1".into(),
            ));
        }
        if let Some(x) = g.fixed_stretch {
            if !(STRETCH_RANGE.0..=STRETCH_RANGE.1).contains(&x) {
                return Err(Error::Config("t2.fixed_stretch: outside the fitted stretch range".into()));
            }
        }
        Ok(())
    }

    pub fn central_index(&self) -> Result<usize> {
        match &self.central {
            None => Ok(0),
            Some(label) => self
                .species
                .iter()
                .position(|s| &s.label == label)
                .ok_or_else(|| Error::Config(format!("central: no species labelled `{label}`"))),
        }
    }

    pub fn temperatures_mk(&self) -> Vec<f64> {
        match (&self.conditions.temperature_mK, &self.conditions.temperatures_mK) {
            (_, Some(ts)) => ts.clone(),
            (Some(t), None) => vec![*t],
            (None, None) => Vec::new(),
        }
    }

    pub fn conditions_at(&self, temperature_mk: f64) -> Result<ExperimentConditions> {
        ExperimentConditions::new(self.conditions.field_mT * 1e-3, temperature_mk * 1e-3)
    }

    pub fn template(&self) -> Result<SequenceTemplate> {
        self.sequence.template()
    }

    pub fn sample_configurations(&self) -> Result<Vec<BathConfiguration>> {
        sample_ensemble(
            &self.lattice,
            &self.species,
            self.central_index()?,
            self.cce.n_configurations,
            self.seed,
        )
    }

    /// Resolved configuration with every default spelled out.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Hash of the canonical TOML, independent of where outputs go.
    pub fn digest(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        hex(&Sha256::digest(c.to_toml().as_bytes()))
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
