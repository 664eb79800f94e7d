//! Tomography statistics, closed-form error terms, error budgets and the
//! signal-to-noise fidelity model.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cavity::SpinReflectivities;
use crate::protocol::{
    run_ensemble_sharded, Basis, PreparedProtocol, ProtocolConfig, ProtocolError, SamplingMode, Scheme,
};
use crate::qcore::{CVector, PureState, QcoreError, RegisterLayout};
use crate::spinphoton::{Herald, PhotonSource, TdiBranches};

/// Fidelity assigned to a false herald.
pub const FALSE_HERALD_FIDELITY: f64 = 0.25;

/// Below this many counts in any basis the budget widens its error bar.
pub const MIN_BASIS_COUNTS: u64 = 100;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error("basis {0:?} has no counts")]
    EmptyBasis(Basis),
    #[error("population {0} is at or above one half and cannot be inverted")]
    NotInvertible(f64),
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Qcore(#[from] QcoreError),
}

pub type Result<T> = std::result::Result<T, AnalysisError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BellTarget {
    PhiPlus,
    PhiMinus,
}

impl BellTarget {
    /// Signs applied to the XX and YY parities.
    fn parity_signs(self) -> (f64, f64) {
        match self {
            BellTarget::PhiPlus => (1.0, -1.0),
            BellTarget::PhiMinus => (-1.0, 1.0),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            BellTarget::PhiPlus => "phi_plus",
            BellTarget::PhiMinus => "phi_minus",
        }
    }

    /// (|00> ± |11>)/√2 on a two-qubit layout.
    pub fn pure_state(self, layout: RegisterLayout) -> std::result::Result<PureState, QcoreError> {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let s = match self {
            BellTarget::PhiPlus => h,
            BellTarget::PhiMinus => -h,
        };
        let z = Complex64::new(0.0, 0.0);
        PureState::new(layout, CVector::from_vec(vec![Complex64::new(h, 0.0), z, z, Complex64::new(s, 0.0)]))
    }
}

fn parity(p: &[f64; 4]) -> f64 {
    p[0] + p[3] - p[1] - p[2]
}

/// Correlator probabilities per basis, indexed `2*a + b`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CorrelatorProbabilities {
    pub p: [[f64; 4]; 3],
}

impl CorrelatorProbabilities {
    pub fn set(&mut self, basis: Basis, p: [[f64; 2]; 2]) {
        self.p[basis.index()] = [p[0][0], p[0][1], p[1][0], p[1][1]];
    }

    pub fn get(&self, basis: Basis) -> &[f64; 4] {
        &self.p[basis.index()]
    }

    /// (P_zz, P_xx, P_yy) with target-dependent parity signs.
    pub fn correlators(&self, target: BellTarget) -> (f64, f64, f64) {
        let (sx, sy) = target.parity_signs();
        let zz = self.get(Basis::Zz);
        (zz[0] + zz[3], sx * parity(self.get(Basis::Xx)), sy * parity(self.get(Basis::Yy)))
    }

    pub fn fidelity(&self, target: BellTarget) -> f64 {
        let (pzz, pxx, pyy) = self.correlators(target);
        0.5 * pzz + 0.25 * pxx + 0.25 * pyy
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorrelatorCounts {
    /// `[basis][2*a + b]`, bases ordered zz, xx, yy.
    pub counts: [[u64; 4]; 3],
}

impl CorrelatorCounts {
    pub fn record(&mut self, basis: Basis, a: u8, b: u8) {
        self.counts[basis.index()][2 * a as usize + b as usize] += 1;
    }

    pub fn total(&self, basis: Basis) -> u64 {
        self.counts[basis.index()].iter().sum()
    }

    pub fn merge(mut self, other: &CorrelatorCounts) -> Self {
        for (row, o) in self.counts.iter_mut().zip(other.counts.iter()) {
            for (c, x) in row.iter_mut().zip(o.iter()) {
                *c += x;
            }
        }
        self
    }

    pub fn probabilities(&self) -> Result<CorrelatorProbabilities> {
        let mut out = CorrelatorProbabilities::default();
        for b in Basis::ALL {
            let n = self.total(b);
            if n == 0 {
                return Err(AnalysisError::EmptyBasis(b));
            }
            let c = &self.counts[b.index()];
            out.p[b.index()] = c.map(|x| x as f64 / n as f64);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FidelityEstimate {
    pub target: BellTarget,
    /// Reported value, clamped to [0, 1].
    pub fidelity: f64,
    pub stddev: f64,
    /// The unclamped estimate fell outside [0, 1].
    pub clamped: bool,
    pub raw_fidelity: f64,
}

pub fn bell_fidelity(counts: &CorrelatorCounts, target: BellTarget) -> Result<FidelityEstimate> {
    let probs = counts.probabilities()?;
    let (pzz, pxx, pyy) = probs.correlators(target);
    let f = 0.5 * pzz + 0.25 * pxx + 0.25 * pyy;
    let n = |b| counts.total(b) as f64;
    let var = 0.25 * pzz * (1.0 - pzz) / n(Basis::Zz)
        + (1.0 + pxx) * (1.0 - pxx) / (16.0 * n(Basis::Xx))
        + (1.0 + pyy) * (1.0 - pyy) / (16.0 * n(Basis::Yy));
    let clamped = !(0.0..=1.0).contains(&f);
    Ok(FidelityEstimate { target, fidelity: f.clamp(0.0, 1.0), stddev: var.max(0.0).sqrt(), clamped, raw_fidelity: f })
}

fn multinomial(rng: &mut ChaCha8Rng, n: u64, p: &[f64; 4]) -> [u64; 4] {
    let mut out = [0; 4];
    let mut left = n;
    let mut mass = 1.0;
    for i in 0..3 {
        if left == 0 || mass <= 0.0 {
            break;
        }
        let q = (p[i] / mass).clamp(0.0, 1.0);
        let k = Binomial::new(left, q).expect("probability in range").sample(rng);
        out[i] = k;
        left -= k;
        mass -= p[i];
    }
    out[3] += left;
    out
}

/// Multinomial bootstrap standard deviation of the fidelity estimate.
pub fn fidelity_stddev_bootstrap_check(
    counts: &CorrelatorCounts,
    target: BellTarget,
    resamples: usize,
    rng_seed: u64,
) -> Result<f64> {
    if resamples < 1000 {
        return Err(AnalysisError::Invalid(format!("need at least 1000 resamples, got {resamples}")));
    }
    let probs = counts.probabilities()?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut samples = Vec::with_capacity(resamples);
    for _ in 0..resamples {
        let mut c = CorrelatorCounts::default();
        for b in Basis::ALL {
            c.counts[b.index()] = multinomial(&mut rng, counts.total(b), probs.get(b));
        }
        samples.push(bell_fidelity(&c, target)?.raw_fidelity);
    }
    let mean = samples.iter().sum::<f64>() / resamples as f64;
    let var = samples.iter().map(|f| (f - mean).powi(2)).sum::<f64>() / (resamples - 1) as f64;
    Ok(var.sqrt())
}

/// Infidelity of a heralded branch caused by the dark-state reflectivities.
pub fn contrast_error(r_a: Complex64, r_b: Complex64, branch: BellTarget) -> f64 {
    let one = Complex64::new(1.0, 0.0);
    let (num, den) = match branch {
        BellTarget::PhiPlus => ((r_a + r_b).norm_sqr(), (one + r_a * r_b).norm_sqr()),
        BellTarget::PhiMinus => ((r_a - r_b).norm_sqr(), (one - r_a * r_b).norm_sqr()),
    };
    if num + den == 0.0 {
        return 0.0;
    }
    num / (num + den)
}

/// Dark-to-bright reflectivity ratio of a node.
pub fn reflectivity_ratio(r: &SpinReflectivities) -> Complex64 {
    r.r_low / r.r_high
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorSource {
    Microwave,
    OpticalContrast,
    MultiPhoton,
    TdiLocking,
    DetectorNoise,
    ElectronReadout,
    NuclearReadout,
    MemoryDecoherence,
}

impl ErrorSource {
    pub fn label(self) -> &'static str {
        match self {
            ErrorSource::Microwave => "Microwave pulse error",
            ErrorSource::OpticalContrast => "Optical contrast error",
            ErrorSource::MultiPhoton => "Multi-photon error",
            ErrorSource::TdiLocking => "TDI locking error",
            ErrorSource::DetectorNoise => "Detector noise",
            ErrorSource::ElectronReadout => "Electron readout error",
            ErrorSource::NuclearReadout => "Nuclear readout assignment error",
            ErrorSource::MemoryDecoherence => "Memory decoherence",
        }
    }

    fn present(self, c: &ProtocolConfig) -> bool {
        let nodes = [&c.node_a, &c.node_b];
        match self {
            ErrorSource::Microwave
            | ErrorSource::OpticalContrast
            | ErrorSource::MultiPhoton
            | ErrorSource::TdiLocking => true,
            ErrorSource::DetectorNoise => c.tdi.false_herald_probability() > 0.0,
            ErrorSource::ElectronReadout => nodes.iter().any(|n| n.readout_error > 0.0),
            ErrorSource::NuclearReadout => c.scheme == Scheme::Nn,
            ErrorSource::MemoryDecoherence => c.decoupling.duration_s > 0.0,
        }
    }

    fn node_inputs(self, c: &ProtocolConfig) -> String {
        let pct = |x: f64| format!("{:.1} %", 100.0 * x);
        let pair = |a: f64, b: f64| format!("{} (A), {} (B)", pct(a), pct(b));
        match self {
            ErrorSource::Microwave => pair(c.node_a.mw_error, c.node_b.mw_error),
            ErrorSource::OpticalContrast => {
                pair(c.node_a.reflectivities.contrast_ratio(), c.node_b.reflectivities.contrast_ratio())
            }
            ErrorSource::MultiPhoton => match c.source {
                PhotonSource::Wcs(w) => format!("mu = {}", w.mu),
                PhotonSource::SinglePhoton => "single photon".into(),
            },
            ErrorSource::TdiLocking => pct(c.tdi.visibility_error),
            ErrorSource::DetectorNoise => format!("{:.2e} per window", c.tdi.false_herald_probability()),
            ErrorSource::ElectronReadout => pair(c.node_a.readout_error, c.node_b.readout_error),
            ErrorSource::NuclearReadout => pair(c.node_a.nuclear_assignment_error, c.node_b.nuclear_assignment_error),
            ErrorSource::MemoryDecoherence => format!("{} s", c.decoupling.duration_s),
        }
    }

    /// Row order of the published budgets, extended by the optional rows.
    pub const ORDER: [ErrorSource; 8] = [
        ErrorSource::Microwave,
        ErrorSource::OpticalContrast,
        ErrorSource::MultiPhoton,
        ErrorSource::TdiLocking,
        ErrorSource::NuclearReadout,
        ErrorSource::ElectronReadout,
        ErrorSource::DetectorNoise,
        ErrorSource::MemoryDecoherence,
    ];
}

/// Copy of `config` with every modeled error off except `keep`.
pub fn isolate_error_source(config: &ProtocolConfig, keep: Option<ErrorSource>) -> ProtocolConfig {
    let mut c = config.clone();
    let on = |s| keep == Some(s);
    for node in [&mut c.node_a, &mut c.node_b] {
        if !on(ErrorSource::Microwave) {
            node.mw_error = 0.0;
        }
        if !on(ErrorSource::OpticalContrast) {
            node.reflectivities.r_low = Complex64::new(0.0, 0.0);
        }
        if !on(ErrorSource::ElectronReadout) {
            node.readout_error = 0.0;
        }
        if !on(ErrorSource::NuclearReadout) {
            node.nuclear_assignment_error = 0.0;
        }
    }
    if !on(ErrorSource::MultiPhoton) {
        c.source = PhotonSource::SinglePhoton;
    }
    if !on(ErrorSource::TdiLocking) {
        c.tdi.visibility_error = 0.0;
    }
    if !on(ErrorSource::DetectorNoise) {
        c.tdi.dark_count_rate_hz = 0.0;
        c.tdi.noise_photon_rate_hz = 0.0;
    }
    if !on(ErrorSource::MemoryDecoherence) {
        c.decoupling.duration_s = 0.0;
    }
    c.contrast_rejection_probability = 0.0;
    c
}

/// One reported fidelity column: herald branch and whether flags are post-selected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetColumn {
    pub label: String,
    pub herald: Herald,
    pub error_detected: bool,
}

impl BudgetColumn {
    fn target(&self) -> BellTarget {
        crate::protocol::herald_target(self.herald).expect("heralded column")
    }
}

/// Default columns: both branches for electrons, ED and raw minus branch for nuclei.
pub fn default_columns(scheme: Scheme) -> Vec<BudgetColumn> {
    let col = |label: &str, herald, error_detected| BudgetColumn { label: label.into(), herald, error_detected };
    match scheme {
        Scheme::Ee => vec![col("phi_minus", Herald::Minus, false), col("phi_plus", Herald::Plus, false)],
        Scheme::Nn => vec![col("phi_minus_ed", Herald::Minus, true), col("phi_minus_raw", Herald::Minus, false)],
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BudgetCell {
    /// Monte Carlo infidelity.
    pub infidelity: f64,
    pub stddev: f64,
    /// Infinite-trial infidelity from the exact branch statistics.
    pub exact_infidelity: f64,
    /// Too few counts for the requested precision; `stddev` was widened.
    pub widened: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetRow {
    pub source: String,
    pub node_inputs: String,
    pub cells: Vec<BudgetCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBudget {
    pub columns: Vec<BudgetColumn>,
    pub rows: Vec<BudgetRow>,
    pub total: BudgetRow,
}

impl ErrorBudget {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("source,node_inputs");
        for c in &self.columns {
            out.push_str(&format!(",{0}_infidelity,{0}_stddev,{0}_exact", c.label));
        }
        out.push('\n');
        for row in self.rows.iter().chain(std::iter::once(&self.total)) {
            out.push_str(&format!("{},\"{}\"", row.source, row.node_inputs));
            for cell in &row.cells {
                out.push_str(&format!(",{:.6},{:.6},{:.6}", cell.infidelity, cell.stddev, cell.exact_infidelity));
            }
            out.push('\n');
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{:<34} {:<26}", "Error source", "Individual-node error");
        for c in &self.columns {
            out.push_str(&format!(" {:>24}", c.label));
        }
        out.push('\n');
        for row in self.rows.iter().chain(std::iter::once(&self.total)) {
            out.push_str(&format!("{:<34} {:<26}", row.source, row.node_inputs));
            for cell in &row.cells {
                let mark = if cell.widened { "*" } else { "" };
                out.push_str(&format!(
                    " {:>24}",
                    format!("{:.1} ± {:.1}{} %", 100.0 * cell.infidelity, 100.0 * cell.stddev, mark)
                ));
            }
            out.push('\n');
        }
        out
    }
}

fn budget_cells(config: &ProtocolConfig, columns: &[BudgetColumn], mc_trials: u64) -> Result<Vec<BudgetCell>> {
    let prepared = PreparedProtocol::new(config)?;
    let counts = run_ensemble_sharded(&prepared, mc_trials, config.rng_seed, SamplingMode::Heralded, 4096)?;
    columns
        .iter()
        .map(|col| {
            let exact = prepared.expected_fidelity(col.herald, col.error_detected).map(|f| 1.0 - f).unwrap_or(f64::NAN);
            let c = counts.counts(col.herald, col.error_detected);
            let n_min = Basis::ALL.iter().map(|b| c.total(*b)).min().unwrap_or(0);
            if n_min == 0 {
                return Ok(BudgetCell { infidelity: exact, stddev: 0.5, exact_infidelity: exact, widened: true });
            }
            let est = bell_fidelity(c, col.target())?;
            let widened = n_min < MIN_BASIS_COUNTS;
            let stddev = if widened { est.stddev.max(0.5 / (n_min as f64).sqrt()) } else { est.stddev };
            Ok(BudgetCell { infidelity: 1.0 - est.raw_fidelity, stddev, exact_infidelity: exact, widened })
        })
        .collect()
}

/// Runs each present error source alone, then all together.
pub fn error_budget(config: &ProtocolConfig, mc_trials: u64) -> Result<ErrorBudget> {
    error_budget_with_columns(config, mc_trials, default_columns(config.scheme))
}

pub fn error_budget_with_columns(
    config: &ProtocolConfig,
    mc_trials: u64,
    columns: Vec<BudgetColumn>,
) -> Result<ErrorBudget> {
    config.validate()?;
    if mc_trials == 0 {
        return Err(AnalysisError::Invalid("mc_trials must be positive".into()));
    }
    let mut rows = Vec::new();
    for source in ErrorSource::ORDER {
        if !source.present(config) {
            continue;
        }
        let isolated = isolate_error_source(config, Some(source));
        rows.push(BudgetRow {
            source: source.label().into(),
            node_inputs: source.node_inputs(config),
            cells: budget_cells(&isolated, &columns, mc_trials)?,
        });
    }
    let mut joint = config.clone();
    joint.contrast_rejection_probability = 0.0;
    let total = BudgetRow {
        source: "Total expected error".into(),
        node_inputs: "-".into(),
        cells: budget_cells(&joint, &columns, mc_trials)?,
    };
    Ok(ErrorBudget { columns, rows, total })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnrModel {
    pub baseline_fidelity: f64,
    /// Heralded signal at zero fiber length, per attempt or per second.
    pub signal_rate_at_zero_km: f64,
    /// False heralds in the same units as the signal.
    pub noise_rate: f64,
    pub attenuation_db_per_km: f64,
    pub false_herald_fidelity: f64,
    /// Fraction of false heralds surviving post-selection relative to signal.
    pub noise_acceptance: f64,
}

impl SnrModel {
    pub fn validate(&self) -> Result<()> {
        let ok = self.signal_rate_at_zero_km >= 0.0
            && self.noise_rate >= 0.0
            && self.attenuation_db_per_km >= 0.0
            && (0.0..=1.0).contains(&self.baseline_fidelity)
            && (0.0..=1.0).contains(&self.noise_acceptance);
        if ok {
            Ok(())
        } else {
            Err(AnalysisError::Invalid("snr model needs non-negative rates and fractions in [0, 1]".into()))
        }
    }

    /// Calibrates signal and noise from exact branch statistics at zero added fiber.
    /// Both are expressed as probabilities per attempt.
    pub fn calibrate(prepared: &PreparedProtocol, attenuation_db_per_km: f64) -> Self {
        let b: &TdiBranches = &prepared.branches;
        let ed = prepared.config.scheme == Scheme::Nn && prepared.config.error_detection;
        let noise = b.plus_noise_fraction * b.plus_probability + b.minus_noise_fraction * b.minus_probability;
        let signal = prepared.herald_probability() - noise;
        let herald = Herald::Minus;
        let baseline = {
            let mut clean = prepared.config.clone();
            clean.tdi.dark_count_rate_hz = 0.0;
            clean.tdi.noise_photon_rate_hz = 0.0;
            PreparedProtocol::new(&clean)
                .ok()
                .and_then(|p| p.expected_fidelity(herald, ed))
                .unwrap_or(FALSE_HERALD_FIDELITY)
        };
        // flags of a maximally mixed false herald pass with 1/4; signal passes with its own acceptance
        let acceptance = if ed {
            let signal_accept = {
                let mut clean = prepared.config.clone();
                clean.tdi.dark_count_rate_hz = 0.0;
                clean.tdi.noise_photon_rate_hz = 0.0;
                PreparedProtocol::new(&clean).map(|p| p.flag_acceptance(herald)).unwrap_or(1.0)
            };
            (0.25 / signal_accept).min(1.0)
        } else {
            1.0
        };
        Self {
            baseline_fidelity: baseline,
            signal_rate_at_zero_km: signal,
            noise_rate: noise,
            attenuation_db_per_km,
            false_herald_fidelity: FALSE_HERALD_FIDELITY,
            noise_acceptance: acceptance,
        }
    }
}

pub fn snr_fidelity(model: &SnrModel, length_km: f64) -> f64 {
    let s = model.signal_rate_at_zero_km * 10f64.powf(-model.attenuation_db_per_km * length_km / 10.0);
    let n = model.noise_acceptance * model.noise_rate;
    if s + n == 0.0 {
        return model.false_herald_fidelity;
    }
    (s * model.baseline_fidelity + n * model.false_herald_fidelity) / (s + n)
}

/// Mean photon number reaching the spin, from the up population after an
/// X-basis e-γ gate with the gate-error offset removed.
pub fn mu_extraction(electron_population_after_x_gate: f64, mw_offset: f64) -> Result<f64> {
    let p = electron_population_after_x_gate;
    if !p.is_finite() || p < 0.0 {
        return Err(AnalysisError::Invalid(format!("population {p} must be non-negative")));
    }
    if p >= 0.5 {
        return Err(AnalysisError::NotInvertible(p));
    }
    let corrected = (p - mw_offset).max(0.0);
    Ok(-(1.0 - 2.0 * corrected).ln())
}
