//! Batch commands behind the CLI: simulate, sweep and budget reports.
//!
//! Reports are plain data with deterministic CSV, JSON and text renderings.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{
    bell_fidelity, error_budget, snr_fidelity, AnalysisError, CorrelatorCounts, ErrorBudget, FidelityEstimate, SnrModel,
};
use crate::config::{ConfigError, ExperimentConfig, SweepVariable};
use crate::photonlink::{link_success_probability, LinkBudget};
use crate::protocol::{
    classical_latency, herald_target, run_ensemble_sharded, success_rate, trial_basis, trial_seed, PreparedProtocol,
    ProtocolConfig, ProtocolError, RateModel, Scheme, TrialOutcome,
};
use crate::spinphoton::Herald;

/// Gate-carving factors in the tabulated success probability.
pub const LINK_GATES: u32 = 1;

/// Trials per rayon shard.
pub const SHARD_SIZE: u64 = 4096;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
}

impl RunError {
    /// True when the input document, not the numerics, is at fault.
    pub fn is_config_error(&self) -> bool {
        matches!(self, RunError::Config(_) | RunError::Protocol(ProtocolError::Config(_)))
    }
}

pub type Result<T> = std::result::Result<T, RunError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    Raw,
    ErrorDetected,
}

impl Selection {
    pub fn label(self) -> &'static str {
        match self {
            Selection::Raw => "raw",
            Selection::ErrorDetected => "ed",
        }
    }
}

fn selections(config: &ProtocolConfig) -> Vec<Selection> {
    if config.scheme == Scheme::Nn && config.error_detection {
        vec![Selection::ErrorDetected, Selection::Raw]
    } else {
        vec![Selection::Raw]
    }
}

fn reported_selection(config: &ProtocolConfig) -> Selection {
    selections(config)[0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityRow {
    pub herald: Herald,
    pub selection: Selection,
    pub counts: CorrelatorCounts,
    pub estimate: Option<FidelityEstimate>,
    pub expected_fidelity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeraldCounts {
    pub plus: u64,
    pub minus: u64,
    pub none: u64,
    pub rejected_by_contrast: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub scheme: Scheme,
    pub seed: u64,
    pub trials: u64,
    pub herald_counts: HeraldCounts,
    pub herald_probability: f64,
    pub accepted_probability: f64,
    pub rate: RateModel,
    pub success_rate_hz: f64,
    pub classical_latency_s: f64,
    pub storage_s: f64,
    /// Storage covers the classical round trip.
    pub usable: bool,
    pub fidelities: Vec<FidelityRow>,
    pub notes: Vec<String>,
}

fn fidelity_rows(prepared: &PreparedProtocol, counts: &crate::protocol::EnsembleCounts) -> Vec<FidelityRow> {
    let mut rows = Vec::new();
    for h in [Herald::Minus, Herald::Plus] {
        let target = herald_target(h).expect("heralded");
        for sel in selections(&prepared.config) {
            let ed = sel == Selection::ErrorDetected;
            let c = *counts.counts(h, ed);
            rows.push(FidelityRow {
                herald: h,
                selection: sel,
                counts: c,
                estimate: bell_fidelity(&c, target).ok(),
                expected_fidelity: prepared.expected_fidelity(h, ed),
            });
        }
    }
    rows
}

fn duty_with_rejection(config: &ProtocolConfig) -> f64 {
    config.effective_duty_cycle() * (1.0 - config.contrast_rejection_probability)
}

fn rate_for(prepared: &PreparedProtocol) -> RateModel {
    RateModel { duty_cycle: duty_with_rejection(&prepared.config), ..prepared.rate_model() }
}

pub fn simulate(doc: &ExperimentConfig) -> Result<SimulationReport> {
    let config = doc.protocol_config()?;
    let prepared = PreparedProtocol::new(&config)?;
    let counts = run_ensemble_sharded(&prepared, config.trials, config.rng_seed, config.sampling, SHARD_SIZE)?;
    let rate = rate_for(&prepared);
    let latency = classical_latency(&config.classical);
    let mut notes = Vec::new();
    if !config.storage_covers_latency() {
        notes.push(format!(
            "storage of {} s is shorter than the classical round trip of {:.3e} s; entanglement not usable",
            config.decoupling.duration_s,
            2.0 * latency
        ));
    }
    Ok(SimulationReport {
        scheme: config.scheme,
        seed: config.rng_seed,
        trials: config.trials,
        herald_counts: HeraldCounts {
            plus: counts.plus,
            minus: counts.minus,
            none: counts.none,
            rejected_by_contrast: counts.rejected,
        },
        herald_probability: prepared.herald_probability(),
        accepted_probability: prepared.accepted_probability(),
        success_rate_hz: success_rate(&rate),
        rate,
        classical_latency_s: latency,
        storage_s: config.decoupling.duration_s,
        usable: config.storage_covers_latency(),
        fidelities: fidelity_rows(&prepared, &counts),
        notes,
    })
}

/// Per-trial records for the sequential order of trial indices.
pub fn trial_records(doc: &ExperimentConfig) -> Result<Vec<TrialOutcome>> {
    let config = doc.protocol_config()?;
    let prepared = PreparedProtocol::new(&config)?;
    (0..config.trials)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(trial_seed(config.rng_seed, i));
            Ok(prepared.sample_trial(trial_basis(i), &mut rng, config.sampling)?)
        })
        .collect()
}

pub fn trial_records_csv(records: &[TrialOutcome]) -> String {
    let mut out = String::from("trial,herald,flag_a,flag_b,basis,bit_a,bit_b,rejected_by_contrast\n");
    let opt = |x: Option<u8>| x.map(|v| v.to_string()).unwrap_or_default();
    for (i, t) in records.iter().enumerate() {
        let (a, b) = t.outcomes.map(|(a, b)| (Some(a), Some(b))).unwrap_or((None, None));
        out.push_str(&format!(
            "{i},{},{},{},{},{},{},{}\n",
            herald_label(t.herald),
            opt(t.flag_a),
            opt(t.flag_b),
            basis_label(t.measurement_basis),
            opt(a),
            opt(b),
            t.rejected_by_contrast
        ));
    }
    out
}

fn herald_label(h: Herald) -> &'static str {
    match h {
        Herald::Plus => "plus",
        Herald::Minus => "minus",
        Herald::None => "none",
    }
}

fn basis_label(b: crate::protocol::Basis) -> &'static str {
    match b {
        crate::protocol::Basis::Zz => "zz",
        crate::protocol::Basis::Xx => "xx",
        crate::protocol::Basis::Yy => "yy",
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.6}")).unwrap_or_default()
}

impl SimulationReport {
    pub fn counts_csv(&self) -> String {
        let mut out = String::from("herald,selection,basis,n00,n01,n10,n11\n");
        for row in &self.fidelities {
            for b in crate::protocol::Basis::ALL {
                let c = row.counts.counts[b.index()];
                out.push_str(&format!(
                    "{},{},{},{},{},{},{}\n",
                    herald_label(row.herald),
                    row.selection.label(),
                    basis_label(b),
                    c[0],
                    c[1],
                    c[2],
                    c[3]
                ));
            }
        }
        out
    }

    pub fn fidelity_csv(&self) -> String {
        let mut out = String::from("herald,selection,fidelity,stddev,clamped,expected_fidelity\n");
        for row in &self.fidelities {
            let (f, s, c) = match &row.estimate {
                Some(e) => (format!("{:.6}", e.fidelity), format!("{:.6}", e.stddev), e.clamped.to_string()),
                None => (String::new(), String::new(), String::new()),
            };
            out.push_str(&format!(
                "{},{},{f},{s},{c},{}\n",
                herald_label(row.herald),
                row.selection.label(),
                fmt_opt(row.expected_fidelity)
            ));
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "scheme {:?}, {} trials, seed {}\nheralds: plus {}, minus {}, none {}, rejected {}\n",
            self.scheme,
            self.trials,
            self.seed,
            self.herald_counts.plus,
            self.herald_counts.minus,
            self.herald_counts.none,
            self.herald_counts.rejected_by_contrast
        );
        out.push_str(&format!(
            "success probability {:.3e} (accepted {:.3e}), R = {:.1} Hz, D = {:.3}, rate = {:.3e} Hz\n",
            self.herald_probability,
            self.accepted_probability,
            self.rate.repetition_rate_hz,
            self.rate.duty_cycle,
            self.success_rate_hz
        ));
        out.push_str(&format!(
            "storage {} s, classical latency {:.3e} s, usable: {}\n",
            self.storage_s, self.classical_latency_s, self.usable
        ));
        for row in &self.fidelities {
            let target = herald_target(row.herald).expect("heralded").label();
            match &row.estimate {
                Some(e) => out.push_str(&format!(
                    "F({target}, {}) = {:.3} ± {:.3}{} (expected {})\n",
                    row.selection.label(),
                    e.fidelity,
                    e.stddev,
                    if e.clamped { " [clamped]" } else { "" },
                    fmt_opt(row.expected_fidelity)
                )),
                None => out.push_str(&format!("F({target}, {}) = n/a (empty basis)\n", row.selection.label())),
            }
        }
        for n in &self.notes {
            out.push_str(&format!("note: {n}\n"));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub herald: Herald,
    pub selection: Selection,
    pub fidelity: Option<f64>,
    pub stddev: Option<f64>,
    pub expected_fidelity: Option<f64>,
    pub success_probability: f64,
    pub success_rate_hz: f64,
    /// Closed-form signal-to-noise prediction, fiber sweeps only.
    pub snr_model_fidelity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub variable: SweepVariable,
    pub rows: Vec<SweepRow>,
    pub snr_model: Option<SnrModel>,
}

pub fn sweep(doc: &ExperimentConfig) -> Result<SweepReport> {
    let s = doc
        .sweep
        .as_ref()
        .ok_or_else(|| ConfigError::Invalid { field: "sweep".into(), message: "section required for sweep".into() })?;
    let snr_model = if s.variable == SweepVariable::FiberLengthKm {
        let base = doc.with_sweep_value(s.variable, 0.0).protocol_config()?;
        let att = s.fiber_attenuation_db_per_km.unwrap_or(0.0);
        Some(SnrModel::calibrate(&PreparedProtocol::new(&base)?, att))
    } else {
        None
    };
    let mut rows = Vec::new();
    for &v in &s.values {
        let config = doc.with_sweep_value(s.variable, v).protocol_config()?;
        let prepared = PreparedProtocol::new(&config)?;
        let counts = run_ensemble_sharded(&prepared, config.trials, config.rng_seed, config.sampling, SHARD_SIZE)?;
        let rate = rate_for(&prepared);
        let sel = reported_selection(&config);
        for h in [Herald::Minus, Herald::Plus] {
            let ed = sel == Selection::ErrorDetected;
            let est = bell_fidelity(counts.counts(h, ed), herald_target(h).expect("heralded")).ok();
            rows.push(SweepRow {
                value: v,
                herald: h,
                selection: sel,
                fidelity: est.map(|e| e.fidelity),
                stddev: est.map(|e| e.stddev),
                expected_fidelity: prepared.expected_fidelity(h, ed),
                success_probability: prepared.herald_probability(),
                success_rate_hz: success_rate(&rate),
                snr_model_fidelity: snr_model.as_ref().filter(|_| h == Herald::Minus).map(|m| snr_fidelity(m, v)),
            });
        }
    }
    Ok(SweepReport { variable: s.variable, rows, snr_model })
}

impl SweepReport {
    pub fn to_csv(&self) -> String {
        let mut out = format!(
            "{},herald,selection,fidelity,stddev,expected_fidelity,success_probability,success_rate_hz,snr_model_fidelity\n",
            self.variable.label()
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{:.6e},{:.6e},{}\n",
                r.value,
                herald_label(r.herald),
                r.selection.label(),
                fmt_opt(r.fidelity),
                fmt_opt(r.stddev),
                fmt_opt(r.expected_fidelity),
                r.success_probability,
                r.success_rate_hz,
                fmt_opt(r.snr_model_fidelity)
            ));
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("sweep over {}\n", self.variable.label());
        for r in &self.rows {
            out.push_str(&format!(
                "{:>10} {:<5} {:<3} F = {} ± {}  rate = {:.3e} Hz\n",
                r.value,
                herald_label(r.herald),
                r.selection.label(),
                r.fidelity.map(|f| format!("{f:.3}")).unwrap_or_else(|| "n/a".into()),
                r.stddev.map(|f| format!("{f:.3}")).unwrap_or_else(|| "n/a".into()),
                r.success_rate_hz
            ));
        }
        out
    }
}

/// Published operating points for the rate product, as (label, η, R, D, reported mHz).
pub const REPORTED_RATES: [(&str, f64, f64, f64, f64); 3] =
    [("ee low", 7.7e-6, 10e3, 0.34, 16.0), ("ee high", 2.5e-4, 10e3, 0.34, 1050.0), ("nn", 2.0e-5, 1.4e3, 0.20, 6.0)];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub label: String,
    pub model: RateModel,
    pub computed_mhz: f64,
    pub reported_mhz: f64,
}

pub fn reported_rate_rows() -> (Vec<RateRow>, Vec<String>) {
    let rows: Vec<RateRow> = REPORTED_RATES
        .iter()
        .map(|&(label, eta, r, d, reported)| {
            let model = RateModel { repetition_rate_hz: r, success_probability: eta, duty_cycle: d };
            RateRow { label: label.into(), computed_mhz: 1e3 * success_rate(&model), model, reported_mhz: reported }
        })
        .collect();
    let notes = vec![format!(
        "electron-electron endpoints: eta*R*D gives {:.0}-{:.0} mHz but {:.0}-{:.0} mHz are reported; a single averaged duty cycle cannot reproduce both, so the product is kept unfitted",
        rows[0].computed_mhz, rows[1].computed_mhz, rows[0].reported_mhz, rows[1].reported_mhz
    )];
    (rows, notes)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetReport {
    pub error_budget: ErrorBudget,
    pub link_budget: LinkBudget,
    pub link_efficiency: f64,
    pub link_mean_photon_number: f64,
    pub link_success_probability: f64,
    pub simulated_success_probability: f64,
    pub rates: Vec<RateRow>,
    pub simulated_rate: RateModel,
    pub notes: Vec<String>,
}

pub fn budget(doc: &ExperimentConfig) -> Result<BudgetReport> {
    let config = doc.protocol_config()?;
    let b = doc
        .budget
        .clone()
        .unwrap_or(crate::config::BudgetSection { mc_trials: config.trials, link_mean_photon_number: 0.1 });
    let eb = error_budget(&config, b.mc_trials)?;
    let link_budget = config.link.budget(
        config.node_a.reflectivities.reflectance_high(),
        config.node_b.reflectivities.reflectance_high(),
        config.tdi.detector_efficiency,
    );
    let prepared = PreparedProtocol::new(&config)?;
    let (rates, notes) = reported_rate_rows();
    Ok(BudgetReport {
        link_efficiency: link_budget.link_efficiency(),
        link_success_probability: link_success_probability(&link_budget, LINK_GATES, b.link_mean_photon_number),
        link_mean_photon_number: b.link_mean_photon_number,
        link_budget,
        error_budget: eb,
        simulated_success_probability: prepared.herald_probability(),
        simulated_rate: rate_for(&prepared),
        rates,
        notes,
    })
}

impl BudgetReport {
    pub fn link_csv(&self) -> String {
        self.link_budget.to_csv(LINK_GATES, self.link_mean_photon_number)
    }

    pub fn rates_csv(&self) -> String {
        let mut out =
            String::from("label,success_probability,repetition_rate_hz,duty_cycle,computed_mhz,reported_mhz\n");
        for r in &self.rates {
            out.push_str(&format!(
                "{},{:e},{},{},{:.3},{}\n",
                r.label,
                r.model.success_probability,
                r.model.repetition_rate_hz,
                r.model.duty_cycle,
                r.computed_mhz,
                r.reported_mhz
            ));
        }
        let m = &self.simulated_rate;
        out.push_str(&format!(
            "simulated,{:e},{},{},{:.3},\n",
            m.success_probability,
            m.repetition_rate_hz,
            m.duty_cycle,
            1e3 * success_rate(m)
        ));
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = self.error_budget.to_text();
        out.push('\n');
        for e in &self.link_budget.entries {
            let sq = if e.squared { "^2" } else { "" };
            out.push_str(&format!("{:<34} {:>8.2} %{sq}\n", e.name, 100.0 * e.efficiency));
        }
        out.push_str(&format!("{:<34} {:>8.3} %\n", "Photonic link efficiency", 100.0 * self.link_efficiency));
        out.push_str(&format!(
            "{:<34} {:>10.2e} (mu = {})\n",
            "Success probability", self.link_success_probability, self.link_mean_photon_number
        ));
        out.push_str(&format!(
            "{:<34} {:>10.2e}\n\n",
            "Simulated herald probability", self.simulated_success_probability
        ));
        for r in &self.rates {
            out.push_str(&format!(
                "rate {:<8} computed {:>8.1} mHz, reported {:>6.0} mHz\n",
                r.label, r.computed_mhz, r.reported_mhz
            ));
        }
        for n in &self.notes {
            out.push_str(&format!("note: {n}\n"));
        }
        out
    }
}
