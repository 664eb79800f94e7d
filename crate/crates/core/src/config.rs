//! TOML experiment documents and the shipped presets.
//!
//! Every physical quantity carries its unit in the key name. Unknown keys are
//! rejected at every level.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cavity::{CavityError, CavityParams, SpinReflectivities};
use crate::photonlink::{FiberSegment, LinkConfig};
use crate::protocol::{ClassicalChannel, Decoupling, ProtocolConfig, ProtocolError, SamplingMode, Scheme, Timing};
use crate::spinphoton::{NodeConfig, PhotonSource, TdiModel, TimeBinPhoton};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{0}")]
    Parse(#[from] toml::de::Error),
    #[error("cannot serialize config: {0}")]
    Serialize(#[from] toml::ser::Error),
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),
    #[error("{field}: {message}")]
    Invalid { field: String, message: String },
    #[error("cavity: {0}")]
    Cavity(#[from] CavityError),
    #[error("protocol: {0}")]
    Protocol(#[from] ProtocolError),
}

fn invalid(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { field: field.into(), message: message.into() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub protocol: ProtocolSection,
    pub nodes: PerNode<NodeSection>,
    pub cavity: PerNode<CavitySection>,
    pub link: LinkConfig,
    pub tdi: TdiModel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget: Option<BudgetSection>,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerNode<T> {
    pub a: T,
    pub b: T,
}

fn default_n_max() -> usize {
    2
}

fn default_bin_separation() -> f64 {
    142e-9
}

fn default_exponent() -> f64 {
    2.0
}

fn default_group_index() -> f64 {
    1.468
}

fn default_sampling() -> SamplingMode {
    SamplingMode::Heralded
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolSection {
    pub scheme: Scheme,
    pub trials: u64,
    /// Weak coherent source; a single-photon source when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_photon_number: Option<f64>,
    #[serde(default = "default_n_max")]
    pub photon_n_max: usize,
    #[serde(default = "default_bin_separation")]
    pub time_bin_separation_s: f64,
    pub error_detection: bool,
    #[serde(default)]
    pub scramble_on_flag_error: bool,
    #[serde(default)]
    pub contrast_rejection_probability: f64,
    #[serde(default = "default_sampling")]
    pub sampling: SamplingMode,
    pub repetition_overhead_s: f64,
    pub duty_cycle: f64,
    #[serde(default)]
    pub decoupling_duration_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decoupling_sequence: Option<u32>,
    #[serde(default = "default_exponent")]
    pub decay_exponent: f64,
    #[serde(default)]
    pub classical_fiber_length_km: f64,
    #[serde(default = "default_group_index")]
    pub classical_group_index: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSection {
    pub mw_error: f64,
    pub readout_error: f64,
    #[serde(default)]
    pub nuclear_assignment_error: f64,
    pub readout_duration_s: f64,
    /// Keys name the decoupling sequence, e.g. `xy8_1`.
    #[serde(default)]
    pub t2_electron_s: BTreeMap<String, f64>,
    #[serde(default)]
    pub t2_nuclear_s: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CavitySection {
    /// Named device (`node_a`, `node_b`); exclusive with `params`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub device: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<CavityParams>,
    /// Laser frequency; the maximum-contrast point when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub operating_frequency_hz: Option<f64>,
    /// Overrides |r_low|²/|r_high|², keeping the phase.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contrast_ratio: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reflectance_high: Option<f64>,
    /// Overrides the phase of r_low relative to r_high.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dark_state_phase_rad: Option<f64>,
}

impl CavitySection {
    pub fn params(&self, field: &str) -> Result<CavityParams, ConfigError> {
        match (&self.device, &self.params) {
            (Some(name), None) => Ok(CavityParams::named(name)?),
            (None, Some(p)) => {
                p.validate()?;
                Ok(*p)
            }
            _ => Err(invalid(field, "give exactly one of `device` or `params`")),
        }
    }

    pub fn reflectivities(&self, field: &str) -> Result<SpinReflectivities, ConfigError> {
        let params = self.params(field)?;
        let mut r = match self.operating_frequency_hz {
            Some(w) => SpinReflectivities::at(&params, w),
            None => SpinReflectivities::at_max_contrast(&params)?,
        };
        if let Some(c) = self.contrast_ratio {
            if !(c >= 0.0 && c.is_finite()) {
                return Err(invalid(&format!("{field}.contrast_ratio"), "must be non-negative"));
            }
            r = r.with_contrast_ratio(c);
        }
        if let Some(phase) = self.dark_state_phase_rad {
            if !phase.is_finite() {
                return Err(invalid(&format!("{field}.dark_state_phase_rad"), "must be finite"));
            }
            r = r.with_relative_phase(phase);
        }
        if let Some(h) = self.reflectance_high {
            if !(0.0..=1.0).contains(&h) {
                return Err(invalid(&format!("{field}.reflectance_high"), "must lie in [0, 1]"));
            }
            r = r.with_reflectance_high(h);
            if r.r_low.norm() > 1.0 {
                return Err(invalid(&format!("{field}.reflectance_high"), "pushes |r_low| above one"));
            }
        }
        Ok(r)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepVariable {
    MeanPhotonNumber,
    DecouplingDurationS,
    FiberLengthKm,
}

impl SweepVariable {
    pub fn label(self) -> &'static str {
        match self {
            SweepVariable::MeanPhotonNumber => "mean_photon_number",
            SweepVariable::DecouplingDurationS => "decoupling_duration_s",
            SweepVariable::FiberLengthKm => "fiber_length_km",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub variable: SweepVariable,
    pub values: Vec<f64>,
    /// Spool attenuation for fiber sweeps.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fiber_attenuation_db_per_km: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetSection {
    pub mc_trials: u64,
    /// Source brightness used for the link success-probability row.
    pub link_mean_photon_number: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    Csv,
    Json,
    Text,
}

fn default_formats() -> Vec<OutputFormat> {
    vec![OutputFormat::Csv, OutputFormat::Json, OutputFormat::Text]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_formats")]
    pub formats: Vec<OutputFormat>,
    #[serde(default)]
    pub per_trial_records: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub directory: Option<String>,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { formats: default_formats(), per_trial_records: false, directory: None }
    }
}

fn sequence_table(field: &str, raw: &BTreeMap<String, f64>) -> Result<BTreeMap<u32, f64>, ConfigError> {
    raw.iter()
        .map(|(k, v)| {
            let n = k
                .strip_prefix("xy8_")
                .and_then(|n| n.parse::<u32>().ok())
                .ok_or_else(|| invalid(&format!("{field}.{k}"), "keys must look like `xy8_<N>`"))?;
            Ok((n, *v))
        })
        .collect()
}

fn node_config(node: &str, n: &NodeSection, c: &CavitySection) -> Result<NodeConfig, ConfigError> {
    let field = format!("nodes.{node}");
    Ok(NodeConfig {
        reflectivities: c.reflectivities(&format!("cavity.{node}"))?,
        mw_error: n.mw_error,
        readout_error: n.readout_error,
        nuclear_assignment_error: n.nuclear_assignment_error,
        readout_duration_s: n.readout_duration_s,
        t2_electron_s: sequence_table(&format!("{field}.t2_electron_s"), &n.t2_electron_s)?,
        t2_nuclear_s: sequence_table(&format!("{field}.t2_nuclear_s"), &n.t2_nuclear_s)?,
    })
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let doc: Self = toml::from_str(text)?;
        doc.validate()?;
        Ok(doc)
    }

    pub fn to_toml(&self) -> Result<String, ConfigError> {
        Ok(toml::to_string(self)?)
    }

    pub fn preset(name: &str) -> Result<Self, ConfigError> {
        let text = preset_source(name).ok_or_else(|| ConfigError::UnknownPreset(name.into()))?;
        Self::from_toml(text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let p = &self.protocol;
        if p.trials == 0 {
            return Err(invalid("protocol.trials", "must be positive"));
        }
        if let Some(mu) = p.mean_photon_number {
            if !(mu >= 0.0 && mu.is_finite()) {
                return Err(invalid("protocol.mean_photon_number", "must be non-negative"));
            }
        }
        if let Some(s) = &self.sweep {
            if s.values.is_empty() {
                return Err(invalid("sweep.values", "must not be empty"));
            }
            if s.values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(invalid("sweep.values", "must be finite and non-negative"));
            }
            if s.variable == SweepVariable::FiberLengthKm && s.fiber_attenuation_db_per_km.is_none() {
                return Err(invalid("sweep.fiber_attenuation_db_per_km", "required for fiber sweeps"));
            }
        }
        if let Some(b) = &self.budget {
            if b.mc_trials == 0 {
                return Err(invalid("budget.mc_trials", "must be positive"));
            }
        }
        self.protocol_config()?.validate()?;
        Ok(())
    }

    pub fn protocol_config(&self) -> Result<ProtocolConfig, ConfigError> {
        let p = &self.protocol;
        let source = match p.mean_photon_number {
            Some(mu) => PhotonSource::wcs(mu),
            None => PhotonSource::SinglePhoton,
        };
        let photon = TimeBinPhoton {
            n_max: p.photon_n_max,
            bin_separation_s: p.time_bin_separation_s,
            ..TimeBinPhoton::default()
        };
        Ok(ProtocolConfig {
            scheme: p.scheme,
            source,
            photon,
            node_a: node_config("a", &self.nodes.a, &self.cavity.a)?,
            node_b: node_config("b", &self.nodes.b, &self.cavity.b)?,
            link: self.link.clone(),
            tdi: self.tdi,
            decoupling: Decoupling {
                duration_s: p.decoupling_duration_s,
                sequence: p.decoupling_sequence,
                exponent: p.decay_exponent,
            },
            error_detection: p.error_detection,
            scramble_on_flag_error: p.scramble_on_flag_error,
            contrast_rejection_probability: p.contrast_rejection_probability,
            trials: p.trials,
            rng_seed: self.seed,
            sampling: p.sampling,
            classical: ClassicalChannel {
                fiber_length_km: p.classical_fiber_length_km,
                group_index: p.classical_group_index,
            },
            timing: Timing { overhead_s: p.repetition_overhead_s, duty_cycle: p.duty_cycle },
        })
    }

    /// Copy with one sweep variable set.
    pub fn with_sweep_value(&self, variable: SweepVariable, value: f64) -> Self {
        let mut c = self.clone();
        match variable {
            SweepVariable::MeanPhotonNumber => c.protocol.mean_photon_number = Some(value),
            SweepVariable::DecouplingDurationS => {
                c.protocol.decoupling_duration_s = value;
                c.protocol.decoupling_sequence = None;
            }
            SweepVariable::FiberLengthKm => {
                let att = self.sweep.as_ref().and_then(|s| s.fiber_attenuation_db_per_km).unwrap_or(0.3);
                c.link.fibers =
                    vec![FiberSegment { length_km: value, attenuation_db_per_km: att, excess_loss_db: 0.0 }];
                c.protocol.classical_fiber_length_km = value;
            }
        }
        c
    }
}

pub const PRESETS: [(&str, &str); 11] = [
    ("ee_lab", include_str!("../presets/ee_lab.toml")),
    ("mu_sweep", include_str!("../presets/mu_sweep.toml")),
    ("nn_lab", include_str!("../presets/nn_lab.toml")),
    ("decoupling_sweep", include_str!("../presets/decoupling_sweep.toml")),
    ("fiber_sweep", include_str!("../presets/fiber_sweep.toml")),
    ("deployed", include_str!("../presets/deployed.toml")),
    ("budget_ee", include_str!("../presets/budget_ee.toml")),
    ("budget_nn", include_str!("../presets/budget_nn.toml")),
    ("link_visible", include_str!("../presets/link_visible.toml")),
    ("link_telecom", include_str!("../presets/link_telecom.toml")),
    ("rates", include_str!("../presets/rates.toml")),
];

pub fn preset_source(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

pub fn preset_names() -> Vec<&'static str> {
    PRESETS.iter().map(|(n, _)| *n).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_round_trip() {
        for name in preset_names() {
            let doc = ExperimentConfig::preset(name).unwrap_or_else(|e| panic!("{name}: {e}"));
            let again = ExperimentConfig::from_toml(&doc.to_toml().unwrap()).unwrap();
            assert_eq!(doc, again, "{name}");
        }
    }

    #[test]
    fn unknown_key_rejected() {
        let text = preset_source("ee_lab").unwrap().replace("[tdi]", "[tdi]\nvisibility = 0.1");
        let err = ExperimentConfig::from_toml(&text).unwrap_err();
        assert!(err.to_string().contains("visibility"), "{err}");
    }

    #[test]
    fn zero_trials_rejected() {
        let text = preset_source("ee_lab").unwrap().replace("trials = 100000", "trials = 0");
        assert!(matches!(ExperimentConfig::from_toml(&text), Err(ConfigError::Invalid { .. })));
    }

    #[test]
    fn bad_sequence_key() {
        let mut doc = ExperimentConfig::preset("nn_lab").unwrap();
        doc.nodes.a.t2_nuclear_s.insert("hahn".into(), 1e-3);
        assert!(doc.validate().is_err());
    }

    #[test]
    fn unknown_preset() {
        assert!(matches!(ExperimentConfig::preset("nope"), Err(ConfigError::UnknownPreset(_))));
    }
}
