//! Two-node heralded entanglement trials.
//!
//! A configuration is reduced once to exact branch statistics: herald
//! probabilities and, per herald and tomography basis, the joint distribution
//! of flag and spin readouts including assignment errors. Trials then sample
//! from those tables with a per-trial seed, so any sharding of the trial
//! range aggregates to the same counts.

use std::collections::BTreeMap;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{BellTarget, CorrelatorCounts, CorrelatorProbabilities};
use crate::photonlink::{LinkConfig, LinkError};
use crate::qcore::{
    apply_channel, apply_unitary, hadamard, measure_projective, partial_trace, pauli_x, pauli_y, pauli_z, projector,
    s_dagger, CMatrix, MixedState, PureState, QcoreError, QuantumChannel, RegisterLayout,
};
use crate::spinphoton::{
    apply_photon_loss, e_gamma_gate, phone_gate, prepare_photonic_qubit, tdi_branches, Herald, NodeConfig,
    PhotonSource, SpinPhotonError, TdiBranches, TdiModel, TimeBinPhoton,
};

pub const PHOTON: &str = "photon";
pub const ELECTRON_A: &str = "e_a";
pub const ELECTRON_B: &str = "e_b";
pub const NUCLEUS_A: &str = "n_a";
pub const NUCLEUS_B: &str = "n_b";

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Storage times up to this use the shortest decoupling sequence.
pub const SHORT_STORAGE_S: f64 = 10e-3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProtocolError {
    #[error(transparent)]
    Qcore(#[from] QcoreError),
    #[error(transparent)]
    SpinPhoton(#[from] SpinPhotonError),
    #[error(transparent)]
    Link(#[from] LinkError),
    #[error("invalid protocol configuration: {0}")]
    Config(String),
    #[error("no heralding event is possible for this configuration")]
    NoHerald,
}

pub type Result<T> = std::result::Result<T, ProtocolError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Electron-electron entanglement with two e-γ gates.
    Ee,
    /// Nucleus-nucleus entanglement with two PHONE gates and electron flags.
    Nn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Basis {
    Zz,
    Xx,
    Yy,
}

impl Basis {
    pub const ALL: [Basis; 3] = [Basis::Zz, Basis::Xx, Basis::Yy];

    /// Single-qubit rotation mapping this basis onto Z.
    fn rotation(self) -> CMatrix {
        match self {
            Basis::Zz => CMatrix::identity(2, 2),
            Basis::Xx => hadamard(),
            Basis::Yy => hadamard() * s_dagger(),
        }
    }

    pub fn index(self) -> usize {
        match self {
            Basis::Zz => 0,
            Basis::Xx => 1,
            Basis::Yy => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    /// Every trial is one attempt; most end without a herald.
    Attempts,
    /// Every trial is drawn conditioned on a herald.
    Heralded,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemoryDecoherence {
    pub t2_s: f64,
    /// Stretch exponent of the coherence decay.
    pub exponent: f64,
}

impl MemoryDecoherence {
    pub fn coherence(&self, duration_s: f64) -> f64 {
        (-(duration_s / self.t2_s).powf(self.exponent)).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Decoupling {
    pub duration_s: f64,
    /// XY8 repetition count; chosen from the duration when absent.
    pub sequence: Option<u32>,
    pub exponent: f64,
}

impl Default for Decoupling {
    fn default() -> Self {
        Self { duration_s: 0.0, sequence: None, exponent: 2.0 }
    }
}

/// Picks the table entry for a storage time: the shortest sequence for short
/// storage, the longest otherwise.
pub fn select_sequence(table: &BTreeMap<u32, f64>, duration_s: f64, explicit: Option<u32>) -> Option<(u32, f64)> {
    if let Some(n) = explicit {
        return table.get(&n).map(|t| (n, *t));
    }
    let pick = if duration_s <= SHORT_STORAGE_S { table.iter().next() } else { table.iter().next_back() };
    pick.map(|(n, t)| (*n, *t))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassicalChannel {
    pub fiber_length_km: f64,
    pub group_index: f64,
}

impl Default for ClassicalChannel {
    fn default() -> Self {
        Self { fiber_length_km: 0.0, group_index: 1.468 }
    }
}

pub fn classical_latency(channel: &ClassicalChannel) -> f64 {
    channel.fiber_length_km * 1e3 * channel.group_index / SPEED_OF_LIGHT
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateModel {
    pub repetition_rate_hz: f64,
    pub success_probability: f64,
    pub duty_cycle: f64,
}

pub fn success_rate(model: &RateModel) -> f64 {
    model.success_probability * model.repetition_rate_hz * model.duty_cycle
}

/// Repetition rate from the two electron readouts plus fixed overhead.
pub fn repetition_rate(readout_a_s: f64, readout_b_s: f64, overhead_s: f64) -> f64 {
    1.0 / (readout_a_s + readout_b_s + overhead_s)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Timing {
    /// Time per attempt beyond the two electron readouts.
    pub overhead_s: f64,
    pub duty_cycle: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    pub scheme: Scheme,
    pub source: PhotonSource,
    pub photon: TimeBinPhoton,
    pub node_a: NodeConfig,
    pub node_b: NodeConfig,
    pub link: LinkConfig,
    pub tdi: TdiModel,
    pub decoupling: Decoupling,
    pub error_detection: bool,
    /// A node whose electron ends in up during storage loses its nuclear state.
    pub scramble_on_flag_error: bool,
    pub contrast_rejection_probability: f64,
    pub trials: u64,
    pub rng_seed: u64,
    pub sampling: SamplingMode,
    pub classical: ClassicalChannel,
    pub timing: Timing,
}

impl ProtocolConfig {
    /// Error-free nodes, lossless link, ideal interferometer and a single photon.
    pub fn ideal(scheme: Scheme) -> Self {
        Self {
            scheme,
            source: PhotonSource::SinglePhoton,
            photon: TimeBinPhoton::with_n_max(2),
            node_a: NodeConfig::ideal(),
            node_b: NodeConfig::ideal(),
            link: LinkConfig::ideal(),
            tdi: TdiModel::ideal(),
            decoupling: Decoupling::default(),
            error_detection: scheme == Scheme::Nn,
            scramble_on_flag_error: false,
            contrast_rejection_probability: 0.0,
            trials: 1000,
            rng_seed: 1,
            sampling: SamplingMode::Heralded,
            classical: ClassicalChannel::default(),
            timing: Timing { overhead_s: 0.0, duty_cycle: 1.0 },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(ProtocolError::Config("trials must be positive".into()));
        }
        self.node_a.validate()?;
        self.node_b.validate()?;
        self.link.validate()?;
        self.tdi.validate()?;
        let p = self.contrast_rejection_probability;
        if !(0.0..=1.0).contains(&p) {
            return Err(ProtocolError::Config(format!("contrast_rejection_probability {p} outside [0, 1]")));
        }
        let d = &self.decoupling;
        if !(d.duration_s.is_finite() && d.duration_s >= 0.0) {
            return Err(ProtocolError::Config("decoupling duration must be non-negative".into()));
        }
        if !(d.exponent >= 1.0) {
            return Err(ProtocolError::Config("decay exponent must be at least 1".into()));
        }
        if self.photon.n_max < 1 {
            return Err(ProtocolError::Config("n_max must be at least 1".into()));
        }
        if self.classical.fiber_length_km < 0.0 || self.classical.group_index <= 0.0 {
            return Err(ProtocolError::Config("classical channel needs length >= 0 and group index > 0".into()));
        }
        let t = &self.timing;
        if !(t.overhead_s >= 0.0 && t.duty_cycle > 0.0 && t.duty_cycle <= 1.0) {
            return Err(ProtocolError::Config("timing needs overhead >= 0 and duty cycle in (0, 1]".into()));
        }
        if d.duration_s > 0.0 {
            for node in [&self.node_a, &self.node_b] {
                let table = self.memory_table(node);
                if select_sequence(table, d.duration_s, d.sequence).is_none() {
                    return Err(ProtocolError::Config(format!(
                        "storage of {} s needs a coherence table entry for the {} register",
                        d.duration_s,
                        if self.scheme == Scheme::Nn { "nuclear" } else { "electron" }
                    )));
                }
            }
        }
        Ok(())
    }

    fn memory_table<'a>(&self, node: &'a NodeConfig) -> &'a BTreeMap<u32, f64> {
        match self.scheme {
            Scheme::Ee => &node.t2_electron_s,
            Scheme::Nn => &node.t2_nuclear_s,
        }
    }

    /// Coherence model of each memory qubit for the configured storage.
    pub fn memory_decoherence(&self) -> Result<Option<[MemoryDecoherence; 2]>> {
        let d = &self.decoupling;
        if d.duration_s == 0.0 {
            return Ok(None);
        }
        let mut out = [MemoryDecoherence { t2_s: 1.0, exponent: d.exponent }; 2];
        for (slot, node) in out.iter_mut().zip([&self.node_a, &self.node_b]) {
            let (_, t2) = select_sequence(self.memory_table(node), d.duration_s, d.sequence)
                .ok_or_else(|| ProtocolError::Config("missing coherence table".into()))?;
            slot.t2_s = t2;
        }
        Ok(Some(out))
    }

    pub fn memory_labels(&self) -> [&'static str; 2] {
        match self.scheme {
            Scheme::Ee => [ELECTRON_A, ELECTRON_B],
            Scheme::Nn => [NUCLEUS_A, NUCLEUS_B],
        }
    }

    pub fn repetition_rate_hz(&self) -> f64 {
        repetition_rate(self.node_a.readout_duration_s, self.node_b.readout_duration_s, self.timing.overhead_s)
    }

    /// Configured duty cycle minus the share spent on polarization stabilization.
    pub fn effective_duty_cycle(&self) -> f64 {
        self.timing.duty_cycle * (1.0 - self.link.stabilization_duty_fraction)
    }

    pub fn mean_photon_number(&self) -> Option<f64> {
        match self.source {
            PhotonSource::Wcs(w) => Some(w.mu),
            PhotonSource::SinglePhoton => None,
        }
    }

    /// Space-like bookkeeping: storage must cover the round trip of the herald signal.
    pub fn storage_covers_latency(&self) -> bool {
        self.decoupling.duration_s >= 2.0 * classical_latency(&self.classical)
    }
}

/// Dephasing with coherence `exp(-(t/T2)^p)` on each listed register.
pub fn apply_decoupling_decay(
    state: &MixedState,
    duration_s: f64,
    decoherence: &[(&str, MemoryDecoherence)],
) -> Result<MixedState> {
    if duration_s < 0.0 {
        return Err(ProtocolError::Config("negative storage time".into()));
    }
    let mut s = state.clone();
    for (label, m) in decoherence {
        if duration_s == 0.0 {
            continue;
        }
        let ch = QuantumChannel::dephasing(m.coherence(duration_s))?;
        s = apply_channel(&s, &ch, &[label])?;
    }
    Ok(s)
}

/// Fully depolarizes `nucleus` when `electron` is up.
fn flag_scramble_channel() -> Result<QuantumChannel> {
    let down = projector(2, 0);
    let up = projector(2, 1);
    let half = Complex64::new(0.5, 0.0);
    let mut ops = vec![down.kronecker(&CMatrix::identity(2, 2))];
    for p in [CMatrix::identity(2, 2), pauli_x(), pauli_y(), pauli_z()] {
        ops.push(up.kronecker(&(p * half)));
    }
    Ok(QuantumChannel::new(ops)?)
}

fn plus_state() -> MixedState {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let layout = RegisterLayout::new([("q", 2)]).expect("qubit layout");
    let v = crate::qcore::CVector::from_vec(vec![Complex64::new(h, 0.0), Complex64::new(h, 0.0)]);
    PureState::new(layout, v).expect("normalized").to_mixed()
}

fn relabel(state: &MixedState, label: &str) -> MixedState {
    let layout = RegisterLayout::new([(label, 2)]).expect("qubit layout");
    MixedState::from_raw(layout, state.matrix().clone())
}

fn basis_qubit(label: &str, level: usize) -> MixedState {
    PureState::basis(RegisterLayout::new([(label, 2)]).expect("qubit layout"), &[level])
        .expect("basis state")
        .to_mixed()
}

/// Joint state of photon and spins right after the source.
fn initial_state(config: &ProtocolConfig) -> Result<MixedState> {
    let photon = prepare_photonic_qubit(&config.source, &config.photon, PHOTON)?;
    let plus = plus_state();
    let s = match config.scheme {
        Scheme::Ee => photon.state.tensor(&relabel(&plus, ELECTRON_A))?.tensor(&relabel(&plus, ELECTRON_B))?,
        Scheme::Nn => photon
            .state
            .tensor(&basis_qubit(ELECTRON_A, 0))?
            .tensor(&basis_qubit(ELECTRON_B, 0))?
            .tensor(&relabel(&plus, NUCLEUS_A))?
            .tensor(&relabel(&plus, NUCLEUS_B))?,
    };
    Ok(s)
}

fn node_gate(
    config: &ProtocolConfig,
    state: &MixedState,
    node: &NodeConfig,
    electron: &str,
    nucleus: &str,
) -> Result<MixedState> {
    Ok(match config.scheme {
        Scheme::Ee => e_gamma_gate(state, PHOTON, electron, &node.reflectivities, node.mw_error)?,
        Scheme::Nn => phone_gate(state, PHOTON, electron, nucleus, &node.reflectivities, node.mw_error)?,
    })
}

/// Runs the optical part of the pipeline and returns the herald statistics.
pub fn herald_branches(config: &ProtocolConfig) -> Result<TdiBranches> {
    let s = initial_state(config)?;
    let s = node_gate(config, &s, &config.node_a, ELECTRON_A, NUCLEUS_A)?;
    let s = apply_photon_loss(&s, PHOTON, config.link.transmission_between_nodes())?;
    let s = node_gate(config, &s, &config.node_b, ELECTRON_B, NUCLEUS_B)?;
    let s = apply_photon_loss(&s, PHOTON, config.link.transmission_after_node_b())?;
    Ok(tdi_branches(&s, PHOTON, &config.tdi)?)
}

/// Spin state between herald and readout: storage decay and flag scrambling.
fn stored_state(config: &ProtocolConfig, heralded: &MixedState) -> Result<MixedState> {
    let mut s = heralded.clone();
    if let Some([a, b]) = config.memory_decoherence()? {
        let [la, lb] = config.memory_labels();
        s = apply_decoupling_decay(&s, config.decoupling.duration_s, &[(la, a), (lb, b)])?;
    }
    if config.scheme == Scheme::Nn && config.scramble_on_flag_error {
        let ch = flag_scramble_channel()?;
        s = apply_channel(&s, &ch, &[ELECTRON_A, NUCLEUS_A])?;
        s = apply_channel(&s, &ch, &[ELECTRON_B, NUCLEUS_B])?;
    }
    Ok(s)
}

/// `P(read | true)` for one bit; `flip_up` misreads up as down, `flip_down` the reverse.
fn confusion(flip_down: f64, flip_up: f64) -> [[f64; 2]; 2] {
    // [true][read]
    [[1.0 - flip_down, flip_down], [flip_up, 1.0 - flip_up]]
}

/// Outcome distribution over (flag_a, flag_b, bit_a, bit_b) as read, flattened
/// as `8*fa + 4*fb + 2*a + b`.
fn readout_table(config: &ProtocolConfig, state: &MixedState, basis: Basis) -> Result<[f64; 16]> {
    let mut table = [0.0; 16];
    let z = [projector(2, 0), projector(2, 1)];
    let rot = basis.rotation();
    match config.scheme {
        Scheme::Ee => {
            let s = apply_unitary(state, &rot, &[ELECTRON_A])?;
            let s = apply_unitary(&s, &rot, &[ELECTRON_B])?;
            let pops = partial_trace(&s, &[ELECTRON_A, ELECTRON_B])?.populations();
            let ca = confusion(config.node_a.readout_error, config.node_a.readout_error);
            let cb = confusion(config.node_b.readout_error, config.node_b.readout_error);
            for ta in 0..2 {
                for tb in 0..2 {
                    let p = pops[2 * ta + tb];
                    for ra in 0..2 {
                        for rb in 0..2 {
                            table[2 * ra + rb] += p * ca[ta][ra] * cb[tb][rb];
                        }
                    }
                }
            }
        }
        Scheme::Nn => {
            let fa_conf = confusion(config.node_a.readout_error, config.node_a.readout_error);
            let fb_conf = confusion(config.node_b.readout_error, config.node_b.readout_error);
            let na_conf = confusion(0.0, config.node_a.nuclear_assignment_error);
            let nb_conf = confusion(0.0, config.node_b.nuclear_assignment_error);
            for (fa, ba) in measure_projective(state, ELECTRON_A, &z)?.into_iter().enumerate() {
                let Some(sa) = ba.state else { continue };
                for (fb, bb) in measure_projective(&sa, ELECTRON_B, &z)?.into_iter().enumerate() {
                    let Some(sb) = bb.state else { continue };
                    let p_flags = ba.probability * bb.probability;
                    let nuc = partial_trace(&sb, &[NUCLEUS_A, NUCLEUS_B])?;
                    let nuc = apply_unitary(&nuc, &rot, &[NUCLEUS_A])?;
                    let nuc = apply_unitary(&nuc, &rot, &[NUCLEUS_B])?;
                    let pops = nuc.populations();
                    for rfa in 0..2 {
                        for rfb in 0..2 {
                            let pf = p_flags * fa_conf[fa][rfa] * fb_conf[fb][rfb];
                            for ta in 0..2 {
                                for tb in 0..2 {
                                    let p = pf * pops[2 * ta + tb];
                                    for ra in 0..2 {
                                        for rb in 0..2 {
                                            table[8 * rfa + 4 * rfb + 2 * ra + rb] +=
                                                p * na_conf[ta][ra] * nb_conf[tb][rb];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    let total: f64 = table.iter().sum();
    if total > 0.0 {
        table.iter_mut().for_each(|p| *p /= total);
    }
    Ok(table)
}

fn herald_slot(h: Herald) -> usize {
    match h {
        Herald::Plus => 0,
        Herald::Minus => 1,
        Herald::None => unreachable!("no readout for an empty herald"),
    }
}

pub fn herald_target(h: Herald) -> Option<BellTarget> {
    match h {
        Herald::Plus => Some(BellTarget::PhiPlus),
        Herald::Minus => Some(BellTarget::PhiMinus),
        Herald::None => None,
    }
}

/// Exact statistics for one configuration, ready for sampling.
#[derive(Debug, Clone)]
pub struct PreparedProtocol {
    pub config: ProtocolConfig,
    pub branches: TdiBranches,
    /// Memory state per herald (plus, minus) just before readout.
    stored: [Option<MixedState>; 2],
    /// [herald][basis] -> 16 readout probabilities.
    tables: [[[f64; 16]; 3]; 2],
}

impl PreparedProtocol {
    pub fn new(config: &ProtocolConfig) -> Result<Self> {
        config.validate()?;
        let branches = herald_branches(config)?;
        let mut stored = [None, None];
        let mut tables = [[[0.0; 16]; 3]; 2];
        for h in [Herald::Plus, Herald::Minus] {
            let slot = herald_slot(h);
            if let Some(s) = branches.state(h) {
                let s = stored_state(config, s)?;
                for b in Basis::ALL {
                    tables[slot][b.index()] = readout_table(config, &s, b)?;
                }
                stored[slot] = Some(s);
            }
        }
        Ok(Self { config: config.clone(), branches, stored, tables })
    }

    pub fn herald_probability(&self) -> f64 {
        self.branches.plus_probability + self.branches.minus_probability
    }

    /// Probability that both flags read down, given the herald.
    pub fn flag_acceptance(&self, h: Herald) -> f64 {
        let t = &self.tables[herald_slot(h)][0];
        (0..4).map(|i| t[i]).sum()
    }

    /// Heralded and, with error detection, flag-accepted probability per attempt.
    pub fn accepted_probability(&self) -> f64 {
        [Herald::Plus, Herald::Minus]
            .iter()
            .map(|&h| {
                let p = self.branches.probability(h);
                if self.uses_flags() && p > 0.0 {
                    p * self.flag_acceptance(h)
                } else {
                    p
                }
            })
            .sum()
    }

    fn uses_flags(&self) -> bool {
        self.config.scheme == Scheme::Nn && self.config.error_detection
    }

    /// Memory-pair state (after storage, before readout) for a herald.
    pub fn memory_state(&self, h: Herald) -> Result<Option<MixedState>> {
        match &self.stored[herald_slot(h)] {
            Some(s) => Ok(Some(partial_trace(s, &self.config.memory_labels())?)),
            None => Ok(None),
        }
    }

    /// `<Phi|rho|Phi>` of the stored memory pair, ignoring readout.
    pub fn state_fidelity(&self, h: Herald) -> Result<Option<f64>> {
        let Some(target) = herald_target(h) else { return Ok(None) };
        let Some(rho) = self.memory_state(h)? else { return Ok(None) };
        let psi = target.pure_state(rho.layout().clone())?;
        Ok(Some(rho.fidelity_with_pure(&psi)?))
    }

    /// Expected correlator probabilities, optionally conditioned on both flags down.
    pub fn correlator_probabilities(&self, h: Herald, flagged: bool) -> CorrelatorProbabilities {
        let mut out = CorrelatorProbabilities::default();
        for b in Basis::ALL {
            let t = &self.tables[herald_slot(h)][b.index()];
            let mut p = [[0.0; 2]; 2];
            for f in 0..4 {
                if flagged && f != 0 {
                    continue;
                }
                for a in 0..2 {
                    for c in 0..2 {
                        p[a][c] += t[4 * f + 2 * a + c];
                    }
                }
            }
            let total: f64 = p.iter().flatten().sum();
            if total > 0.0 {
                p.iter_mut().flatten().for_each(|x| *x /= total);
            }
            out.set(b, p);
        }
        out
    }

    /// Infinite-trial fidelity estimate for a herald.
    pub fn expected_fidelity(&self, h: Herald, flagged: bool) -> Option<f64> {
        let target = herald_target(h)?;
        if self.branches.probability(h) <= 0.0 {
            return None;
        }
        Some(self.correlator_probabilities(h, flagged).fidelity(target))
    }

    /// Expected fidelity using the configured error-detection setting.
    pub fn expected_reported_fidelity(&self, h: Herald) -> Option<f64> {
        self.expected_fidelity(h, self.uses_flags())
    }

    pub fn rate_model(&self) -> RateModel {
        RateModel {
            repetition_rate_hz: self.config.repetition_rate_hz(),
            success_probability: self.herald_probability(),
            duty_cycle: self.config.effective_duty_cycle(),
        }
    }

    fn sample_herald(&self, rng: &mut ChaCha8Rng, mode: SamplingMode) -> Result<Herald> {
        let (pp, pm) = (self.branches.plus_probability, self.branches.minus_probability);
        let u: f64 = rng.gen();
        Ok(match mode {
            SamplingMode::Attempts => {
                if u < pp {
                    Herald::Plus
                } else if u < pp + pm {
                    Herald::Minus
                } else {
                    Herald::None
                }
            }
            SamplingMode::Heralded => {
                let total = pp + pm;
                if total <= 0.0 {
                    return Err(ProtocolError::NoHerald);
                }
                if u * total < pp {
                    Herald::Plus
                } else {
                    Herald::Minus
                }
            }
        })
    }

    /// One trial drawn with its own RNG.
    pub fn sample_trial(&self, basis: Basis, rng: &mut ChaCha8Rng, mode: SamplingMode) -> Result<TrialOutcome> {
        let rejected = self.config.contrast_rejection_probability > 0.0
            && rng.gen::<f64>() < self.config.contrast_rejection_probability;
        if rejected {
            return Ok(TrialOutcome::empty(basis, true));
        }
        let herald = self.sample_herald(rng, mode)?;
        if herald == Herald::None {
            return Ok(TrialOutcome::empty(basis, false));
        }
        let table = &self.tables[herald_slot(herald)][basis.index()];
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut idx = 15;
        for (i, p) in table.iter().enumerate() {
            acc += p;
            if u < acc {
                idx = i;
                break;
            }
        }
        let (fa, fb, a, b) = ((idx >> 3) as u8 & 1, (idx >> 2) as u8 & 1, (idx >> 1) as u8 & 1, idx as u8 & 1);
        let flags = self.config.scheme == Scheme::Nn;
        Ok(TrialOutcome {
            herald,
            flag_a: flags.then_some(fa),
            flag_b: flags.then_some(fb),
            measurement_basis: basis,
            outcomes: Some((a, b)),
            rejected_by_contrast: false,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub herald: Herald,
    /// Electron flag readouts (0 = down), nuclear scheme only.
    pub flag_a: Option<u8>,
    pub flag_b: Option<u8>,
    pub measurement_basis: Basis,
    pub outcomes: Option<(u8, u8)>,
    pub rejected_by_contrast: bool,
}

impl TrialOutcome {
    fn empty(basis: Basis, rejected: bool) -> Self {
        Self {
            herald: Herald::None,
            flag_a: None,
            flag_b: None,
            measurement_basis: basis,
            outcomes: None,
            rejected_by_contrast: rejected,
        }
    }

    pub fn flags_pass(&self) -> bool {
        self.flag_a.unwrap_or(0) == 0 && self.flag_b.unwrap_or(0) == 0
    }
}

/// Seed for trial `index` of a run.
pub fn trial_seed(base: u64, index: u64) -> u64 {
    base ^ index
}

pub fn trial_basis(index: u64) -> Basis {
    Basis::ALL[(index % 3) as usize]
}

/// Single trial from scratch. Rebuilds the exact statistics, so prefer
/// [`PreparedProtocol`] for ensembles.
pub fn run_trial(config: &ProtocolConfig, basis: Basis, rng_seed: u64) -> Result<TrialOutcome> {
    let prepared = PreparedProtocol::new(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    prepared.sample_trial(basis, &mut rng, SamplingMode::Attempts)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnsembleCounts {
    pub trials: u64,
    pub plus: u64,
    pub minus: u64,
    pub none: u64,
    pub rejected: u64,
    /// All heralded trials, per herald (plus, minus).
    pub raw: [CorrelatorCounts; 2],
    /// Heralded trials whose flags both read down.
    pub flagged: [CorrelatorCounts; 2],
}

impl EnsembleCounts {
    pub fn record(&mut self, t: &TrialOutcome) {
        self.trials += 1;
        if t.rejected_by_contrast {
            self.rejected += 1;
        }
        match t.herald {
            Herald::Plus => self.plus += 1,
            Herald::Minus => self.minus += 1,
            Herald::None => self.none += 1,
        }
        if let (Some((a, b)), Some(_)) = (t.outcomes, herald_target(t.herald)) {
            let slot = herald_slot(t.herald);
            self.raw[slot].record(t.measurement_basis, a, b);
            if t.flags_pass() {
                self.flagged[slot].record(t.measurement_basis, a, b);
            }
        }
    }

    pub fn merge(mut self, other: &EnsembleCounts) -> Self {
        self.trials += other.trials;
        self.plus += other.plus;
        self.minus += other.minus;
        self.none += other.none;
        self.rejected += other.rejected;
        for i in 0..2 {
            self.raw[i] = self.raw[i].merge(&other.raw[i]);
            self.flagged[i] = self.flagged[i].merge(&other.flagged[i]);
        }
        self
    }

    pub fn counts(&self, h: Herald, flagged: bool) -> &CorrelatorCounts {
        let slot = herald_slot(h);
        if flagged {
            &self.flagged[slot]
        } else {
            &self.raw[slot]
        }
    }
}

fn run_range(
    p: &PreparedProtocol,
    base: u64,
    range: std::ops::Range<u64>,
    mode: SamplingMode,
) -> Result<EnsembleCounts> {
    let mut counts = EnsembleCounts::default();
    for i in range {
        let mut rng = ChaCha8Rng::seed_from_u64(trial_seed(base, i));
        counts.record(&p.sample_trial(trial_basis(i), &mut rng, mode)?);
    }
    Ok(counts)
}

/// Sequential reference runner.
pub fn run_ensemble(p: &PreparedProtocol, trials: u64, base_seed: u64, mode: SamplingMode) -> Result<EnsembleCounts> {
    run_range(p, base_seed, 0..trials, mode)
}

/// Sharded runner; counts match [`run_ensemble`] for any shard size.
pub fn run_ensemble_sharded(
    p: &PreparedProtocol,
    trials: u64,
    base_seed: u64,
    mode: SamplingMode,
    shard_size: u64,
) -> Result<EnsembleCounts> {
    let shard = shard_size.max(1);
    let shards: Vec<u64> = (0..trials.div_ceil(shard)).collect();
    let parts: Vec<Result<EnsembleCounts>> =
        shards.par_iter().map(|&k| run_range(p, base_seed, k * shard..((k + 1) * shard).min(trials), mode)).collect();
    let mut total = EnsembleCounts::default();
    for part in parts {
        total = total.merge(&part?);
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RejectionReport {
    pub retained: Vec<TrialOutcome>,
    pub retained_fraction: f64,
    /// Duty cycle after rejections.
    pub duty_cycle: f64,
}

/// Drops each trial independently with the given probability.
pub fn contrast_rejection_filter(
    trials: &[TrialOutcome],
    rejection_probability: f64,
    duty_cycle: f64,
    rng_seed: u64,
) -> Result<RejectionReport> {
    if !(0.0..=1.0).contains(&rejection_probability) {
        return Err(ProtocolError::Config(format!("rejection probability {rejection_probability} outside [0, 1]")));
    }
    let retained: Vec<TrialOutcome> = trials
        .iter()
        .enumerate()
        .filter(|(i, _)| {
            let mut rng = ChaCha8Rng::seed_from_u64(trial_seed(rng_seed, *i as u64));
            rng.gen::<f64>() >= rejection_probability
        })
        .map(|(_, t)| *t)
        .collect();
    let frac = if trials.is_empty() { 1.0 } else { retained.len() as f64 / trials.len() as f64 };
    Ok(RejectionReport { retained, retained_fraction: frac, duty_cycle: duty_cycle * frac })
}
