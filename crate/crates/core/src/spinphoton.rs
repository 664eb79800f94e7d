//! Time-bin photon register, weak coherent source, reflection-based spin-photon
//! gates and the interferometric herald.
//!
//! Photon basis: two modes (early, late) truncated at `n_max` total photons,
//! ordered by total photon number and then by decreasing early occupation.
//! For `n_max = 2`: (0,0), (1,0), (0,1), (2,0), (1,1), (0,2).

use std::collections::BTreeMap;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cavity::SpinReflectivities;
use crate::qcore::{
    apply_channel, measure_projective, partial_trace, pauli_x, CMatrix, MixedState, QcoreError, QuantumChannel,
    RegisterLayout,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpinPhotonError {
    #[error(transparent)]
    Qcore(#[from] QcoreError),
    #[error("photon register dimension {0} is not a valid two-mode truncation")]
    PhotonTruncation(usize),
    #[error("register `{0}` must be a qubit")]
    NotQubit(String),
    #[error("invalid parameter `{name}` = {value}")]
    InvalidParameter { name: &'static str, value: f64 },
    #[error("source truncation mass {mass:e} exceeds tolerance; raise n_max")]
    TruncationTooLarge { mass: f64 },
}

pub type Result<T> = std::result::Result<T, SpinPhotonError>;

fn check_probability(name: &'static str, value: f64) -> Result<()> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(SpinPhotonError::InvalidParameter { name, value })
    }
}

fn check_rate(name: &'static str, value: f64) -> Result<()> {
    if value.is_finite() && value >= 0.0 {
        Ok(())
    } else {
        Err(SpinPhotonError::InvalidParameter { name, value })
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn factorial(n: usize) -> f64 {
    (1..=n).fold(1.0, |acc, i| acc * i as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Early,
    Late,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeBinPhoton {
    pub n_max: usize,
    pub bin_separation_s: f64,
    pub carrier_frequency_hz: f64,
}

impl Default for TimeBinPhoton {
    fn default() -> Self {
        Self { n_max: 2, bin_separation_s: 142e-9, carrier_frequency_hz: crate::cavity::SIV_CARRIER_HZ }
    }
}

impl TimeBinPhoton {
    pub fn with_n_max(n_max: usize) -> Self {
        Self { n_max, ..Self::default() }
    }

    pub fn dim(&self) -> usize {
        photon_dim(self.n_max)
    }

    /// Occupations `(early, late)` in basis order.
    pub fn basis(&self) -> Vec<(usize, usize)> {
        photon_basis(self.n_max)
    }

    pub fn index_of(&self, early: usize, late: usize) -> Option<usize> {
        (early + late <= self.n_max).then(|| photon_index(early, late))
    }

    /// Recovers `n_max` from a register dimension.
    pub fn n_max_from_dim(dim: usize) -> Option<usize> {
        (0..=64).find(|&n| photon_dim(n) == dim)
    }
}

fn photon_dim(n_max: usize) -> usize {
    (n_max + 1) * (n_max + 2) / 2
}

fn photon_index(early: usize, late: usize) -> usize {
    let m = early + late;
    m * (m + 1) / 2 + late
}

fn photon_basis(n_max: usize) -> Vec<(usize, usize)> {
    let mut v = Vec::with_capacity(photon_dim(n_max));
    for m in 0..=n_max {
        for late in 0..=m {
            v.push((m - late, late));
        }
    }
    v
}

fn photon_n_max(state: &MixedState, label: &str) -> Result<usize> {
    let d = state.layout().dim_of(label)?;
    TimeBinPhoton::n_max_from_dim(d).ok_or(SpinPhotonError::PhotonTruncation(d))
}

fn require_qubit(state: &MixedState, label: &str) -> Result<()> {
    if state.layout().dim_of(label)? != 2 {
        return Err(SpinPhotonError::NotQubit(label.to_string()));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WcsSource {
    pub mu: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhotonSource {
    Wcs(WcsSource),
    SinglePhoton,
}

impl PhotonSource {
    pub fn wcs(mu: f64) -> Self {
        PhotonSource::Wcs(WcsSource { mu })
    }
}

/// Mass beyond `n_max` above which preparation is refused.
pub const SOURCE_TRUNCATION_TOL: f64 = 1e-2;

#[derive(Debug, Clone, PartialEq)]
pub struct PreparedPhoton {
    pub state: MixedState,
    /// Renormalized weights of n = 0..=n_max photons.
    pub number_distribution: Vec<f64>,
    /// Poisson mass above `n_max` dropped before renormalizing.
    pub truncation_mass: f64,
}

/// `|n>_+`, n photons in the symmetric time-bin mode.
fn symmetric_fock(n_max: usize, n: usize) -> Vec<Complex64> {
    let mut v = vec![Complex64::new(0.0, 0.0); photon_dim(n_max)];
    let norm = 2f64.powi(n as i32);
    for early in 0..=n {
        v[photon_index(early, n - early)] = Complex64::new((binomial(n, early) / norm).sqrt(), 0.0);
    }
    v
}

pub fn poisson_weights(mu: f64, n_max: usize) -> (Vec<f64>, f64) {
    let mut w = Vec::with_capacity(n_max + 1);
    let mut p = (-mu).exp();
    for n in 0..=n_max {
        if n > 0 {
            p *= mu / n as f64;
        }
        w.push(p);
    }
    let kept: f64 = w.iter().sum();
    let mass = (1.0 - kept).max(0.0);
    (w.into_iter().map(|x| x / kept).collect(), mass)
}

/// Phase-averaged source state: a mixture of symmetric Fock states.
pub fn prepare_photonic_qubit(source: &PhotonSource, photon: &TimeBinPhoton, label: &str) -> Result<PreparedPhoton> {
    let n_max = photon.n_max;
    if n_max == 0 {
        return Err(SpinPhotonError::PhotonTruncation(1));
    }
    let (weights, mass) = match source {
        PhotonSource::Wcs(w) => {
            if !(w.mu.is_finite() && w.mu >= 0.0) {
                return Err(SpinPhotonError::InvalidParameter { name: "mu", value: w.mu });
            }
            poisson_weights(w.mu, n_max)
        }
        PhotonSource::SinglePhoton => {
            let mut w = vec![0.0; n_max + 1];
            w[1] = 1.0;
            (w, 0.0)
        }
    };
    if mass > SOURCE_TRUNCATION_TOL {
        return Err(SpinPhotonError::TruncationTooLarge { mass });
    }
    let d = photon_dim(n_max);
    let mut rho = CMatrix::zeros(d, d);
    for (n, &p) in weights.iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        let v = symmetric_fock(n_max, n);
        for i in 0..d {
            for j in 0..d {
                rho[(i, j)] += v[i] * v[j].conj() * p;
            }
        }
    }
    let layout = RegisterLayout::new([(label, d)])?;
    Ok(PreparedPhoton { state: MixedState::from_raw(layout, rho), number_distribution: weights, truncation_mass: mass })
}

fn shift(mode: Mode, early: usize, late: usize, k: usize) -> (usize, usize, usize) {
    match mode {
        Mode::Early => (early, early - k, late),
        Mode::Late => (late, early, late - k),
    }
}

/// Beam-splitter loss on one mode with transmission `eta`.
pub fn mode_loss_channel(n_max: usize, mode: Mode, eta: f64) -> Result<QuantumChannel> {
    check_probability("transmission", eta)?;
    let basis = photon_basis(n_max);
    let d = basis.len();
    let mut ops = Vec::with_capacity(n_max + 1);
    for k in 0..=n_max {
        let mut a = CMatrix::zeros(d, d);
        for (col, &(e, l)) in basis.iter().enumerate() {
            let n = match mode {
                Mode::Early => e,
                Mode::Late => l,
            };
            if n < k {
                continue;
            }
            let (_, e2, l2) = shift(mode, e, l, k);
            let amp = binomial(n, k).sqrt() * eta.powf((n - k) as f64 / 2.0) * (1.0 - eta).powf(k as f64 / 2.0);
            a[(photon_index(e2, l2), col)] = Complex64::new(amp, 0.0);
        }
        ops.push(a);
    }
    Ok(QuantumChannel::new(ops)?)
}

/// Transmission `eta` applied to both time bins.
pub fn apply_photon_loss(state: &MixedState, photon: &str, eta: f64) -> Result<MixedState> {
    let n_max = photon_n_max(state, photon)?;
    let mut s = state.clone();
    for mode in [Mode::Early, Mode::Late] {
        s = apply_channel(&s, &mode_loss_channel(n_max, mode, eta)?, &[photon])?;
    }
    Ok(s)
}

/// Spin-dependent reflection of one time bin, acting on `[photon, spin]`.
///
/// Reflected photons pick up `r_s` each. Photons that are not reflected leave
/// the mode; their loss records which spin state they met, so those Kraus
/// branches are spin-resolved while the all-reflected branch stays coherent.
pub fn reflection_channel(n_max: usize, mode: Mode, refl: &SpinReflectivities) -> Result<QuantumChannel> {
    let basis = photon_basis(n_max);
    let d = basis.len();
    let amps = [refl.r_low, refl.r_high];
    let trans: Vec<f64> = amps.iter().map(|r| (1.0 - r.norm_sqr()).max(0.0).sqrt()).collect();
    for r in amps {
        if r.norm() > 1.0 + 1e-9 {
            return Err(SpinPhotonError::InvalidParameter { name: "reflectivity", value: r.norm() });
        }
    }
    let mut ops = Vec::with_capacity(1 + 2 * n_max);
    let mut k0 = CMatrix::zeros(2 * d, 2 * d);
    for (col, &(e, l)) in basis.iter().enumerate() {
        let n = if mode == Mode::Early { e } else { l };
        for s in 0..2 {
            k0[(2 * col + s, 2 * col + s)] = amps[s].powu(n as u32);
        }
    }
    ops.push(k0);
    for k in 1..=n_max {
        for s in 0..2 {
            let mut a = CMatrix::zeros(2 * d, 2 * d);
            for (col, &(e, l)) in basis.iter().enumerate() {
                let n = if mode == Mode::Early { e } else { l };
                if n < k {
                    continue;
                }
                let (_, e2, l2) = shift(mode, e, l, k);
                let amp = amps[s].powu((n - k) as u32) * (binomial(n, k).sqrt() * trans[s].powi(k as i32));
                a[(2 * photon_index(e2, l2) + s, 2 * col + s)] = amp;
            }
            ops.push(a);
        }
    }
    Ok(QuantumChannel::new(ops)?)
}

/// Flip of the second qubit of `[control, target]` when the control is in `control_value`.
pub fn conditional_not(control_value: usize) -> CMatrix {
    let mut m = CMatrix::zeros(4, 4);
    for c in 0..2 {
        for t in 0..2 {
            let out_t = if c == control_value { 1 - t } else { t };
            m[(2 * c + out_t, 2 * c + t)] = Complex64::new(1.0, 0.0);
        }
    }
    m
}

fn noisy_flip(state: &MixedState, electron: &str, mw_error: f64) -> Result<MixedState> {
    if mw_error == 0.0 {
        return Ok(state.clone());
    }
    Ok(apply_channel(state, &QuantumChannel::bit_flip(mw_error)?, &[electron])?)
}

fn reflect(
    state: &MixedState,
    photon: &str,
    electron: &str,
    mode: Mode,
    refl: &SpinReflectivities,
) -> Result<MixedState> {
    let n_max = photon_n_max(state, photon)?;
    Ok(apply_channel(state, &reflection_channel(n_max, mode, refl)?, &[photon, electron])?)
}

/// Electron-photon entangling gate. The caller prepares the electron.
pub fn e_gamma_gate(
    state: &MixedState,
    photon: &str,
    electron: &str,
    refl: &SpinReflectivities,
    mw_error: f64,
) -> Result<MixedState> {
    check_probability("mw_error", mw_error)?;
    require_qubit(state, electron)?;
    let s = reflect(state, photon, electron, Mode::Early, refl)?;
    let s = apply_channel(&s, &QuantumChannel::unitary(pauli_x())?, &[electron])?;
    let s = noisy_flip(&s, electron, mw_error)?;
    reflect(&s, photon, electron, Mode::Late, refl)
}

/// Photon-nucleus entangling gate leaving the electron as a flag qubit.
/// Expects the electron in down and the nucleus prepared by the caller.
pub fn phone_gate(
    state: &MixedState,
    photon: &str,
    electron: &str,
    nucleus: &str,
    refl: &SpinReflectivities,
    mw_error: f64,
) -> Result<MixedState> {
    check_probability("mw_error", mw_error)?;
    require_qubit(state, electron)?;
    require_qubit(state, nucleus)?;
    let flip_on_down = QuantumChannel::unitary(conditional_not(0))?;
    let flip_on_up = QuantumChannel::unitary(conditional_not(1))?;
    let s = apply_channel(state, &flip_on_down, &[nucleus, electron])?;
    let s = noisy_flip(&s, electron, mw_error)?;
    let s = reflect(&s, photon, electron, Mode::Early, refl)?;
    let s = apply_channel(&s, &QuantumChannel::unitary(pauli_x())?, &[electron])?;
    let s = noisy_flip(&s, electron, mw_error)?;
    let s = reflect(&s, photon, electron, Mode::Late, refl)?;
    let s = apply_channel(&s, &flip_on_up, &[nucleus, electron])?;
    noisy_flip(&s, electron, mw_error)
}

/// Interferometer mapping early/late onto the `+`/`-` output ports. The
/// output register reuses the photon basis with (early, late) read as (+, -).
pub fn interferometer_unitary(n_max: usize) -> CMatrix {
    let basis = photon_basis(n_max);
    let d = basis.len();
    let mut u = CMatrix::zeros(d, d);
    for (col, &(e, l)) in basis.iter().enumerate() {
        let m = e + l;
        let pre = 1.0 / (factorial(e) * factorial(l) * 2f64.powi(m as i32)).sqrt();
        for i in 0..=e {
            for j in 0..=l {
                let plus = i + j;
                let sign = if (l - j) % 2 == 0 { 1.0 } else { -1.0 };
                let amp = pre * sign * binomial(e, i) * binomial(l, j) * (factorial(plus) * factorial(m - plus)).sqrt();
                u[(photon_index(plus, m - plus), col)] += Complex64::new(amp, 0.0);
            }
        }
    }
    u
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Herald {
    Plus,
    Minus,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TdiModel {
    pub visibility_error: f64,
    pub detector_efficiency: f64,
    /// Transmission into the interfering time window (the side peaks are lost).
    pub side_peak_transmission: f64,
    pub dark_count_rate_hz: f64,
    pub noise_photon_rate_hz: f64,
    pub detection_window_s: f64,
}

impl Default for TdiModel {
    fn default() -> Self {
        Self {
            visibility_error: 0.02,
            detector_efficiency: 0.875,
            side_peak_transmission: 0.5,
            dark_count_rate_hz: 0.0,
            noise_photon_rate_hz: 0.0,
            detection_window_s: 400e-9,
        }
    }
}

impl TdiModel {
    pub fn ideal() -> Self {
        Self {
            visibility_error: 0.0,
            detector_efficiency: 1.0,
            side_peak_transmission: 1.0,
            dark_count_rate_hz: 0.0,
            noise_photon_rate_hz: 0.0,
            detection_window_s: 400e-9,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_probability("visibility_error", self.visibility_error)?;
        check_probability("detector_efficiency", self.detector_efficiency)?;
        check_probability("side_peak_transmission", self.side_peak_transmission)?;
        check_rate("dark_count_rate_hz", self.dark_count_rate_hz)?;
        check_rate("noise_photon_rate_hz", self.noise_photon_rate_hz)?;
        check_rate("detection_window_s", self.detection_window_s)
    }

    /// Probability that a dark count or noise photon lands in the window.
    pub fn false_herald_probability(&self) -> f64 {
        1.0 - (-(self.dark_count_rate_hz + self.noise_photon_rate_hz) * self.detection_window_s).exp()
    }

    pub fn transmission(&self) -> f64 {
        self.detector_efficiency * self.side_peak_transmission
    }
}

/// Exact herald statistics with the photon traced out.
#[derive(Debug, Clone, PartialEq)]
pub struct TdiBranches {
    pub plus_probability: f64,
    pub minus_probability: f64,
    pub none_probability: f64,
    /// Heralded spin states; `None` when the branch has zero weight.
    pub plus_state: Option<MixedState>,
    pub minus_state: Option<MixedState>,
    /// Share of each herald's probability caused by a false herald.
    pub plus_noise_fraction: f64,
    pub minus_noise_fraction: f64,
    /// Both output ports clicked; counted inside `none_probability`.
    pub double_click_probability: f64,
}

impl TdiBranches {
    pub fn probability(&self, herald: Herald) -> f64 {
        match herald {
            Herald::Plus => self.plus_probability,
            Herald::Minus => self.minus_probability,
            Herald::None => self.none_probability,
        }
    }

    pub fn state(&self, herald: Herald) -> Option<&MixedState> {
        match herald {
            Herald::Plus => self.plus_state.as_ref(),
            Herald::Minus => self.minus_state.as_ref(),
            Herald::None => None,
        }
    }
}

/// Threshold-detector projectors: none, plus only, minus only, both.
fn click_projectors(n_max: usize) -> [CMatrix; 4] {
    let basis = photon_basis(n_max);
    let d = basis.len();
    let mut p = [CMatrix::zeros(d, d), CMatrix::zeros(d, d), CMatrix::zeros(d, d), CMatrix::zeros(d, d)];
    for (i, &(np, nm)) in basis.iter().enumerate() {
        let which = match (np > 0, nm > 0) {
            (false, false) => 0,
            (true, false) => 1,
            (false, true) => 2,
            (true, true) => 3,
        };
        p[which][(i, i)] = Complex64::new(1.0, 0.0);
    }
    p
}

pub fn tdi_branches(state: &MixedState, photon: &str, tdi: &TdiModel) -> Result<TdiBranches> {
    tdi.validate()?;
    let n_max = photon_n_max(state, photon)?;
    let lossy = apply_photon_loss(state, photon, tdi.transmission())?;
    let u = QuantumChannel::unitary(interferometer_unitary(n_max))?;
    let rotated = apply_channel(&lossy, &u, &[photon])?;
    let branches = measure_projective(&rotated, photon, &click_projectors(n_max))?;

    let keep: Vec<&str> = state.layout().labels().iter().map(String::as_str).filter(|l| *l != photon).collect();
    let reduce = |b: &crate::qcore::Branch| -> Result<Option<MixedState>> {
        match &b.state {
            Some(s) => Ok(Some(partial_trace(s, &keep)?)),
            None => Ok(None),
        }
    };
    let p_plus = branches[1].probability;
    let p_minus = branches[2].probability;
    let s_plus = reduce(&branches[1])?;
    let s_minus = reduce(&branches[2])?;
    let spin_layout = match (&s_plus, &s_minus) {
        (Some(s), _) | (None, Some(s)) => s.layout().clone(),
        _ => partial_trace(state, &keep)?.layout().clone(),
    };
    let mixed = MixedState::maximally_mixed(spin_layout);

    let v = tdi.visibility_error;
    let pf = tdi.false_herald_probability();
    let combine = |w_own: f64,
                   own: &Option<MixedState>,
                   w_other: f64,
                   other: &Option<MixedState>|
     -> Result<(f64, Option<MixedState>, f64)> {
        let true_part = (1.0 - pf) * ((1.0 - v) * w_own + v * w_other);
        let noise_part = pf / 2.0;
        let total = true_part + noise_part;
        let mut parts: Vec<(f64, &MixedState)> = Vec::new();
        if let Some(s) = own {
            parts.push(((1.0 - pf) * (1.0 - v) * w_own, s));
        }
        if let Some(s) = other {
            parts.push(((1.0 - pf) * v * w_other, s));
        }
        if noise_part > 0.0 {
            parts.push((noise_part, &mixed));
        }
        parts.retain(|(w, _)| *w > 0.0);
        if total < crate::qcore::EMPTY_BRANCH_PROB || parts.is_empty() {
            return Ok((total, None, 0.0));
        }
        Ok((total, Some(MixedState::mixture(&parts)?), noise_part / total))
    };
    let (pp, sp, fp) = combine(p_plus, &s_plus, p_minus, &s_minus)?;
    let (pm, sm, fm) = combine(p_minus, &s_minus, p_plus, &s_plus)?;
    let none = (1.0 - pf) * (branches[0].probability + branches[3].probability);
    Ok(TdiBranches {
        plus_probability: pp,
        minus_probability: pm,
        none_probability: none,
        plus_state: sp,
        minus_state: sm,
        plus_noise_fraction: fp,
        minus_noise_fraction: fm,
        double_click_probability: (1.0 - pf) * branches[3].probability,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TdiOutcome {
    pub herald: Herald,
    /// Spin state after the herald; `None` when nothing clicked.
    pub post_state: Option<MixedState>,
    pub was_noise: bool,
}

/// Samples one herald from the exact branch statistics.
pub fn tdi_measure(state: &MixedState, photon: &str, tdi: &TdiModel, rng_seed: u64) -> Result<TdiOutcome> {
    let b = tdi_branches(state, photon, tdi)?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let u: f64 = rng.gen();
    let (herald, frac) = if u < b.plus_probability {
        (Herald::Plus, b.plus_noise_fraction)
    } else if u < b.plus_probability + b.minus_probability {
        (Herald::Minus, b.minus_noise_fraction)
    } else {
        (Herald::None, 0.0)
    };
    let was_noise = herald != Herald::None && rng.gen::<f64>() < frac;
    Ok(TdiOutcome { herald, post_state: b.state(herald).cloned(), was_noise })
}

/// Per-node spin register parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeConfig {
    pub reflectivities: SpinReflectivities,
    pub mw_error: f64,
    pub readout_error: f64,
    pub nuclear_assignment_error: f64,
    pub readout_duration_s: f64,
    /// Electron coherence time per XY8 repetition count.
    pub t2_electron_s: BTreeMap<u32, f64>,
    /// Nuclear coherence time per XY8 repetition count.
    pub t2_nuclear_s: BTreeMap<u32, f64>,
}

impl NodeConfig {
    pub fn ideal() -> Self {
        Self {
            reflectivities: SpinReflectivities::ideal(),
            mw_error: 0.0,
            readout_error: 0.0,
            nuclear_assignment_error: 0.0,
            readout_duration_s: 20e-6,
            t2_electron_s: BTreeMap::new(),
            t2_nuclear_s: BTreeMap::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_probability("mw_error", self.mw_error)?;
        check_probability("readout_error", self.readout_error)?;
        check_probability("nuclear_assignment_error", self.nuclear_assignment_error)?;
        if !(self.readout_duration_s.is_finite() && self.readout_duration_s > 0.0) {
            return Err(SpinPhotonError::InvalidParameter {
                name: "readout_duration_s",
                value: self.readout_duration_s,
            });
        }
        for r in [self.reflectivities.r_high, self.reflectivities.r_low] {
            if !(r.norm() <= 1.0 + 1e-9) {
                return Err(SpinPhotonError::InvalidParameter { name: "reflectivity", value: r.norm() });
            }
        }
        for t in self.t2_electron_s.values().chain(self.t2_nuclear_s.values()) {
            if !(t.is_finite() && *t > 0.0) {
                return Err(SpinPhotonError::InvalidParameter { name: "t2", value: *t });
            }
        }
        Ok(())
    }
}
