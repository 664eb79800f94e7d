//! Spin-dependent reflection from a cavity coupled to a two-level color center.
//!
//! All rates and frequencies share one unit (Hz). Linewidths are full widths.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CavityError {
    #[error("cavity parameter `{0}` must be finite and positive")]
    InvalidParameter(&'static str),
    #[error("in-coupling rate exceeds total cavity decay rate")]
    OverCoupled,
    #[error("frequency scan needs start < stop and at least 3 points")]
    InvalidScan,
    #[error("unknown cavity preset `{0}`")]
    UnknownPreset(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpinState {
    Down,
    Up,
}

impl SpinState {
    /// Basis index used by every spin register (down = 0, up = 1).
    pub fn index(self) -> usize {
        match self {
            SpinState::Down => 0,
            SpinState::Up => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CavityParams {
    pub g_hz: f64,
    pub kappa_in_hz: f64,
    pub kappa_tot_hz: f64,
    pub gamma_hz: f64,
    pub omega_c_hz: f64,
    pub omega_siv_up_hz: f64,
    pub omega_siv_down_hz: f64,
}

/// Reference optical carrier for the named nodes.
pub const SIV_CARRIER_HZ: f64 = 406.7e12;

impl CavityParams {
    /// Node A device; fitted to its reported cooperativity, reflectance and contrast.
    pub fn node_a() -> Self {
        Self {
            g_hz: 2.783_882_181_415e9,
            kappa_in_hz: 19.705_727_630_438_5e9,
            kappa_tot_hz: 25.0e9,
            gamma_hz: 0.1e9,
            omega_c_hz: SIV_CARRIER_HZ - 23.982_446_791_257_25e9,
            omega_siv_up_hz: SIV_CARRIER_HZ,
            omega_siv_down_hz: SIV_CARRIER_HZ + 0.560_566_848_601_194e9,
        }
    }

    /// Node B device; fitted the same way as node A.
    pub fn node_b() -> Self {
        Self {
            g_hz: 0.968_245_836_551_854_3e9,
            kappa_in_hz: 21.737_772_504_075_77e9,
            kappa_tot_hz: 25.0e9,
            gamma_hz: 0.1e9,
            omega_c_hz: SIV_CARRIER_HZ + 5.943_511_615_108_381e9,
            omega_siv_up_hz: SIV_CARRIER_HZ,
            omega_siv_down_hz: SIV_CARRIER_HZ + 1.794_214_966_199_597_4e9,
        }
    }

    pub fn named(name: &str) -> Result<Self, CavityError> {
        match name {
            "node_a" => Ok(Self::node_a()),
            "node_b" => Ok(Self::node_b()),
            other => Err(CavityError::UnknownPreset(other.to_string())),
        }
    }

    pub fn validate(&self) -> Result<(), CavityError> {
        let pos = [("kappa_in_hz", self.kappa_in_hz), ("kappa_tot_hz", self.kappa_tot_hz), ("gamma_hz", self.gamma_hz)];
        for (name, v) in pos {
            if !(v.is_finite() && v > 0.0) {
                return Err(CavityError::InvalidParameter(name));
            }
        }
        if !(self.g_hz.is_finite() && self.g_hz >= 0.0) {
            return Err(CavityError::InvalidParameter("g_hz"));
        }
        for (name, v) in [
            ("omega_c_hz", self.omega_c_hz),
            ("omega_siv_up_hz", self.omega_siv_up_hz),
            ("omega_siv_down_hz", self.omega_siv_down_hz),
        ] {
            if !v.is_finite() {
                return Err(CavityError::InvalidParameter(name));
            }
        }
        if self.kappa_in_hz > self.kappa_tot_hz {
            return Err(CavityError::OverCoupled);
        }
        Ok(())
    }

    pub fn cooperativity(&self) -> f64 {
        4.0 * self.g_hz * self.g_hz / (self.kappa_tot_hz * self.gamma_hz)
    }

    fn transition(&self, spin: SpinState) -> f64 {
        match spin {
            SpinState::Up => self.omega_siv_up_hz,
            SpinState::Down => self.omega_siv_down_hz,
        }
    }
}

pub fn cooperativity(params: &CavityParams) -> f64 {
    params.cooperativity()
}

/// Complex reflection amplitude at probe frequency `omega_hz`.
pub fn reflection_amplitude(params: &CavityParams, omega_hz: f64, spin: SpinState) -> Complex64 {
    let i = Complex64::i();
    let atom = i * (omega_hz - params.transition(spin)) + params.gamma_hz / 2.0;
    let denom = i * (omega_hz - params.omega_c_hz) + params.kappa_tot_hz / 2.0 + params.g_hz.powi(2) / atom;
    Complex64::new(1.0, 0.0) - params.kappa_in_hz / denom
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrequencyScan {
    pub start_hz: f64,
    pub stop_hz: f64,
    pub points: usize,
}

impl FrequencyScan {
    /// Window centred between the two spin lines, wide enough to cover both wings.
    pub fn around(params: &CavityParams) -> Self {
        let mid = 0.5 * (params.omega_siv_up_hz + params.omega_siv_down_hz);
        let split = (params.omega_siv_up_hz - params.omega_siv_down_hz).abs();
        let half = 2.0 * split + params.kappa_tot_hz / 8.0;
        Self { start_hz: mid - half, stop_hz: mid + half, points: 2001 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContrastPoint {
    pub omega_hz: f64,
    /// `|r_up|^2 / |r_down|^2`
    pub contrast: f64,
}

fn contrast_at(params: &CavityParams, w: f64) -> f64 {
    let hi = reflection_amplitude(params, w, SpinState::Up).norm_sqr();
    let lo = reflection_amplitude(params, w, SpinState::Down).norm_sqr();
    if lo == 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// Frequency maximizing the up/down reflectance ratio. Grid search followed by
/// golden-section refinement around the best grid point; ties go to the
/// lowest frequency.
pub fn max_contrast_frequency(params: &CavityParams, scan: &FrequencyScan) -> Result<ContrastPoint, CavityError> {
    params.validate()?;
    if !(scan.start_hz < scan.stop_hz) || scan.points < 3 {
        return Err(CavityError::InvalidScan);
    }
    let step = (scan.stop_hz - scan.start_hz) / (scan.points - 1) as f64;
    let mut best = (scan.start_hz, contrast_at(params, scan.start_hz));
    for k in 1..scan.points {
        let w = scan.start_hz + step * k as f64;
        let c = contrast_at(params, w);
        if c > best.1 {
            best = (w, c);
        }
    }
    let mut a = (best.0 - step).max(scan.start_hz);
    let mut b = (best.0 + step).min(scan.stop_hz);
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = b - ratio * (b - a);
    let mut x2 = a + ratio * (b - a);
    let mut f1 = contrast_at(params, x1);
    let mut f2 = contrast_at(params, x2);
    for _ in 0..80 {
        if f1 >= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - ratio * (b - a);
            f1 = contrast_at(params, x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + ratio * (b - a);
            f2 = contrast_at(params, x2);
        }
    }
    let w = 0.5 * (a + b);
    let c = contrast_at(params, w);
    if c >= best.1 {
        Ok(ContrastPoint { omega_hz: w, contrast: c })
    } else {
        Ok(ContrastPoint { omega_hz: best.0, contrast: best.1 })
    }
}

/// Reflection amplitudes of the bright (up) and dark (down) spin states.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpinReflectivities {
    pub r_high: Complex64,
    pub r_low: Complex64,
}

impl SpinReflectivities {
    pub fn at(params: &CavityParams, omega_hz: f64) -> Self {
        Self {
            r_high: reflection_amplitude(params, omega_hz, SpinState::Up),
            r_low: reflection_amplitude(params, omega_hz, SpinState::Down),
        }
    }

    /// Amplitudes at the maximum-contrast operating point.
    pub fn at_max_contrast(params: &CavityParams) -> Result<Self, CavityError> {
        let p = max_contrast_frequency(params, &FrequencyScan::around(params))?;
        Ok(Self::at(params, p.omega_hz))
    }

    pub fn ideal() -> Self {
        Self { r_high: Complex64::new(1.0, 0.0), r_low: Complex64::new(0.0, 0.0) }
    }

    pub fn reflectance_high(&self) -> f64 {
        self.r_high.norm_sqr()
    }

    /// `|r_low|^2 / |r_high|^2`, the inverse contrast.
    pub fn contrast_ratio(&self) -> f64 {
        self.r_low.norm_sqr() / self.r_high.norm_sqr()
    }

    /// Rescales `|r_low|` to reach the given inverse contrast, keeping its phase.
    pub fn with_contrast_ratio(&self, ratio: f64) -> Self {
        let target = self.r_high.norm() * ratio.max(0.0).sqrt();
        let phase = if self.r_low.norm() > 0.0 { self.r_low.arg() } else { self.r_high.arg() + std::f64::consts::PI };
        Self { r_high: self.r_high, r_low: Complex64::from_polar(target, phase) }
    }

    /// Sets the phase of `r_low` relative to `r_high`, keeping both moduli.
    pub fn with_relative_phase(&self, phase_rad: f64) -> Self {
        Self { r_high: self.r_high, r_low: Complex64::from_polar(self.r_low.norm(), self.r_high.arg() + phase_rad) }
    }

    /// Phase of `r_low` relative to `r_high`, in (-π, π].
    pub fn relative_phase(&self) -> f64 {
        (self.r_low / self.r_high).arg()
    }

    pub fn with_reflectance_high(&self, reflectance: f64) -> Self {
        let scale = reflectance.sqrt() / self.r_high.norm();
        Self { r_high: self.r_high * scale, r_low: self.r_low * scale }
    }
}
