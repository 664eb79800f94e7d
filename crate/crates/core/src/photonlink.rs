//! Photonic channel between the nodes: phase-modulator frequency shifting,
//! two-stage frequency conversion, fiber loss, the efficiency budget, and
//! polarization drift with its feedback controller.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinkError {
    #[error("invalid link parameter `{name}` = {value}")]
    InvalidParameter { name: String, value: f64 },
}

pub type Result<T> = std::result::Result<T, LinkError>;

fn fraction(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(LinkError::InvalidParameter { name: name.to_string(), value: v })
    }
}

fn non_negative(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(LinkError::InvalidParameter { name: name.to_string(), value: v })
    }
}

fn bessel_series(n: u32, x: f64) -> f64 {
    let half = x / 2.0;
    let mut term = half.powi(n as i32) / (1..=n).fold(1.0, |a, k| a * k as f64);
    let mut sum = term;
    let q = -half * half;
    for m in 1..200 {
        term *= q / (m as f64 * (m + n) as f64);
        sum += term;
        if term.abs() < 1e-17 * sum.abs().max(1e-300) {
            break;
        }
    }
    sum
}

/// Miller's downward recurrence, normalized with J0 + 2 sum J_2k = 1.
fn bessel_miller(n: u32, x: f64) -> f64 {
    let top = (n as f64).max(x);
    let mut m = (top + 30.0 + (40.0 * top).sqrt()) as usize;
    m += m % 2;
    let (mut jp, mut j) = (0.0f64, 1e-30f64);
    let mut result = 0.0;
    let mut norm = 0.0;
    for k in (1..=m).rev() {
        let jm = 2.0 * k as f64 / x * j - jp;
        jp = j;
        j = jm;
        if j.abs() > 1e250 {
            j *= 1e-250;
            jp *= 1e-250;
            result *= 1e-250;
            norm *= 1e-250;
        }
        // j now holds J_{k-1}
        if k - 1 == n as usize {
            result = j;
        }
        if (k - 1) % 2 == 0 && k - 1 > 0 {
            norm += 2.0 * j;
        }
    }
    norm += j;
    result / norm
}

/// Bessel function of the first kind, integer order.
pub fn bessel_j(n: i32, x: f64) -> f64 {
    let order = n.unsigned_abs();
    let mut sign = if n < 0 && order % 2 == 1 { -1.0 } else { 1.0 };
    if x < 0.0 && order % 2 == 1 {
        sign = -sign;
    }
    let ax = x.abs();
    if ax == 0.0 {
        return if order == 0 { 1.0 } else { 0.0 };
    }
    let v = if ax <= 2.0 { bessel_series(order, ax) } else { bessel_miller(order, ax) };
    sign * v
}

fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = b - r * (b - a);
    let mut x2 = a + r * (b - a);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..100 {
        if f1 >= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - r * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + r * (b - a);
            f2 = f(x2);
        }
    }
    0.5 * (a + b)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrequencyShifter {
    /// Drive amplitude over half-wave voltage.
    pub modulation_index: f64,
    pub harmonic: i32,
    /// Transmission through the modulator.
    pub eom_insertion_loss: f64,
    pub filter_transmission: f64,
}

impl FrequencyShifter {
    /// First harmonic at its optimal drive, with 50% modulator and 40% filter transmission.
    pub fn visible_default() -> Self {
        Self {
            modulation_index: optimal_modulation_index(1),
            harmonic: 1,
            eom_insertion_loss: 0.5,
            filter_transmission: 0.4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        non_negative("modulation_index", self.modulation_index)?;
        fraction("eom_insertion_loss", self.eom_insertion_loss)?;
        fraction("filter_transmission", self.filter_transmission)?;
        if self.harmonic == 0 {
            return Err(LinkError::InvalidParameter { name: "harmonic".into(), value: 0.0 });
        }
        Ok(())
    }
}

pub fn sideband_occupancy(shifter: &FrequencyShifter) -> f64 {
    bessel_j(shifter.harmonic, shifter.modulation_index).powi(2)
}

pub fn shifter_efficiency(shifter: &FrequencyShifter) -> f64 {
    sideband_occupancy(shifter) * shifter.eom_insertion_loss * shifter.filter_transmission
}

/// Modulation index maximizing the occupancy of harmonic `k`.
pub fn optimal_modulation_index(k: i32) -> f64 {
    let hi = 2.0 * k.unsigned_abs() as f64 + 4.0;
    let steps = 400;
    let occ = |x: f64| bessel_j(k, x).powi(2);
    let mut best = (0.0, occ(0.0));
    for i in 1..=steps {
        let x = hi * i as f64 / steps as f64;
        let v = occ(x);
        if v > best.1 {
            best = (x, v);
        }
    }
    let h = hi / steps as f64;
    golden_max(occ, (best.0 - h).max(0.0), best.0 + h)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QfcChain {
    pub dfg_efficiency: f64,
    pub sfg_efficiency: f64,
    pub filter_transmission: f64,
    /// Measured end-to-end efficiency; used verbatim when present.
    pub total_override: Option<f64>,
    pub pump_detuning_hz: f64,
}

impl Default for QfcChain {
    fn default() -> Self {
        Self {
            dfg_efficiency: 0.33,
            sfg_efficiency: 0.30,
            filter_transmission: 0.054 / (0.33 * 0.30),
            total_override: Some(0.054),
            pump_detuning_hz: 13e9,
        }
    }
}

impl QfcChain {
    pub fn efficiency(&self) -> f64 {
        self.total_override.unwrap_or(self.dfg_efficiency * self.sfg_efficiency * self.filter_transmission)
    }

    pub fn validate(&self) -> Result<()> {
        fraction("dfg_efficiency", self.dfg_efficiency)?;
        fraction("sfg_efficiency", self.sfg_efficiency)?;
        fraction("filter_transmission", self.filter_transmission)?;
        if let Some(t) = self.total_override {
            fraction("total_override", t)?;
        }
        non_negative("pump_detuning_hz", self.pump_detuning_hz.abs())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FiberSegment {
    pub length_km: f64,
    pub attenuation_db_per_km: f64,
    #[serde(default)]
    pub excess_loss_db: f64,
}

impl FiberSegment {
    pub fn spool(length_km: f64) -> Self {
        Self { length_km, attenuation_db_per_km: 0.3, excess_loss_db: 0.0 }
    }

    pub fn loss_db(&self) -> f64 {
        self.length_km * self.attenuation_db_per_km + self.excess_loss_db
    }

    pub fn validate(&self) -> Result<()> {
        non_negative("length_km", self.length_km)?;
        non_negative("attenuation_db_per_km", self.attenuation_db_per_km)?;
        non_negative("excess_loss_db", self.excess_loss_db)
    }
}

pub fn db_to_transmission(loss_db: f64) -> f64 {
    10f64.powf(-loss_db / 10.0)
}

pub fn fiber_transmission(segment: &FiberSegment) -> f64 {
    db_to_transmission(segment.loss_db())
}

/// Frequency conversion between the two nodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConversionStage {
    Shifter(FrequencyShifter),
    Qfc(QfcChain),
    Direct,
}

impl ConversionStage {
    pub fn efficiency(&self) -> f64 {
        match self {
            ConversionStage::Shifter(s) => shifter_efficiency(s),
            ConversionStage::Qfc(q) => q.efficiency(),
            ConversionStage::Direct => 1.0,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            ConversionStage::Shifter(_) => "Visible frequency shifting",
            ConversionStage::Qfc(_) => "Telecom frequency conversion",
            ConversionStage::Direct => "No frequency conversion",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetEntry {
    pub name: String,
    pub efficiency: f64,
    /// Passed twice in the serial path.
    pub squared: bool,
}

impl BudgetEntry {
    pub fn factor(&self) -> f64 {
        if self.squared {
            self.efficiency * self.efficiency
        } else {
            self.efficiency
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkBudget {
    pub entries: Vec<BudgetEntry>,
    /// Heralding probability of one spin-photon gate.
    pub gate_carving: f64,
    /// Share of detections landing in the usable `+`/`-` windows.
    pub pm_detection: f64,
}

impl LinkBudget {
    pub fn new(entries: Vec<BudgetEntry>) -> Self {
        Self { entries, gate_carving: 0.5, pm_detection: 0.5 }
    }

    pub fn validate(&self) -> Result<()> {
        for e in &self.entries {
            if !(e.efficiency > 0.0 && e.efficiency <= 1.0) {
                return Err(LinkError::InvalidParameter { name: e.name.clone(), value: e.efficiency });
            }
        }
        fraction("gate_carving", self.gate_carving)?;
        fraction("pm_detection", self.pm_detection)
    }

    pub fn link_efficiency(&self) -> f64 {
        self.entries.iter().map(BudgetEntry::factor).product()
    }

    /// Rows `entry,efficiency,squared,factor`, then the totals.
    pub fn to_csv(&self, gates: u32, mu: f64) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["entry", "efficiency", "squared", "factor"]).expect("in-memory csv");
        for e in &self.entries {
            w.write_record([
                e.name.clone(),
                format!("{:.6}", e.efficiency),
                e.squared.to_string(),
                format!("{:.6}", e.factor()),
            ])
            .expect("in-memory csv");
        }
        if !self.entries.is_empty() {
            let eff = self.link_efficiency();
            w.write_record(["Photonic link efficiency".into(), String::new(), String::new(), format!("{eff:.6e}")])
                .expect("in-memory csv");
            w.write_record([
                "Spin-photon gate".into(),
                format!("{:.6}", self.gate_carving),
                gates.to_string(),
                format!("{:.6}", self.gate_carving.powi(gates as i32)),
            ])
            .expect("in-memory csv");
            w.write_record([
                "+/- detection".into(),
                format!("{:.6}", self.pm_detection),
                String::new(),
                format!("{:.6}", self.pm_detection),
            ])
            .expect("in-memory csv");
            w.write_record(["Mean photon number".into(), format!("{mu:.6}"), String::new(), format!("{mu:.6}")])
                .expect("in-memory csv");
            w.write_record([
                "Success probability".into(),
                String::new(),
                String::new(),
                format!("{:.6e}", link_success_probability(self, gates, mu)),
            ])
            .expect("in-memory csv");
        }
        String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf8 csv")
    }
}

pub fn link_success_probability(budget: &LinkBudget, gates: u32, mu: f64) -> f64 {
    budget.link_efficiency() * budget.gate_carving.powi(gates as i32) * budget.pm_detection * mu
}

/// Optical path between the nodes and from node B to the interferometer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkConfig {
    pub node_a_fiber_coupling: f64,
    pub node_a_free_space: f64,
    pub circulator_a: f64,
    pub conversion: ConversionStage,
    pub fibers: Vec<FiberSegment>,
    /// Insertion loss of the polarization-stabilization optics.
    pub stabilization_loss_db: f64,
    /// Share of the timeline spent on polarization stabilization.
    pub stabilization_duty_fraction: f64,
    pub circulator_b: f64,
    /// Passed on the way into and out of node B.
    pub node_b_fiber_coupling: f64,
}

impl LinkConfig {
    pub fn ideal() -> Self {
        Self {
            node_a_fiber_coupling: 1.0,
            node_a_free_space: 1.0,
            circulator_a: 1.0,
            conversion: ConversionStage::Direct,
            fibers: Vec::new(),
            stabilization_loss_db: 0.0,
            stabilization_duty_fraction: 0.0,
            circulator_b: 1.0,
            node_b_fiber_coupling: 1.0,
        }
    }

    pub fn visible() -> Self {
        Self {
            node_a_fiber_coupling: 0.6,
            node_a_free_space: 0.7,
            circulator_a: 0.7,
            conversion: ConversionStage::Shifter(FrequencyShifter::visible_default()),
            fibers: Vec::new(),
            stabilization_loss_db: 0.0,
            stabilization_duty_fraction: 0.0,
            circulator_b: 0.7,
            node_b_fiber_coupling: 0.6,
        }
    }

    pub fn telecom(fibers: Vec<FiberSegment>) -> Self {
        Self { conversion: ConversionStage::Qfc(QfcChain::default()), fibers, ..Self::visible() }
    }

    pub fn validate(&self) -> Result<()> {
        fraction("node_a_fiber_coupling", self.node_a_fiber_coupling)?;
        fraction("node_a_free_space", self.node_a_free_space)?;
        fraction("circulator_a", self.circulator_a)?;
        fraction("circulator_b", self.circulator_b)?;
        fraction("node_b_fiber_coupling", self.node_b_fiber_coupling)?;
        fraction("stabilization_duty_fraction", self.stabilization_duty_fraction)?;
        non_negative("stabilization_loss_db", self.stabilization_loss_db)?;
        match &self.conversion {
            ConversionStage::Shifter(s) => s.validate()?,
            ConversionStage::Qfc(q) => q.validate()?,
            ConversionStage::Direct => {}
        }
        for f in &self.fibers {
            f.validate()?;
        }
        Ok(())
    }

    pub fn fiber_transmission(&self) -> f64 {
        self.fibers.iter().map(fiber_transmission).product::<f64>() * db_to_transmission(self.stabilization_loss_db)
    }

    pub fn fiber_length_km(&self) -> f64 {
        self.fibers.iter().map(|f| f.length_km).sum()
    }

    /// From node A's cavity to node B's cavity.
    pub fn transmission_between_nodes(&self) -> f64 {
        self.node_a_fiber_coupling
            * self.node_a_free_space
            * self.circulator_a
            * self.conversion.efficiency()
            * self.fiber_transmission()
            * self.circulator_b
            * self.node_b_fiber_coupling
    }

    /// From node B's cavity to the interferometer input.
    pub fn transmission_after_node_b(&self) -> f64 {
        self.node_b_fiber_coupling
    }

    /// Efficiency table with the cavity reflectances and detector efficiency folded in.
    pub fn budget(&self, reflectance_a: f64, reflectance_b: f64, detector_efficiency: f64) -> LinkBudget {
        let e =
            |name: &str, efficiency: f64, squared: bool| BudgetEntry { name: name.to_string(), efficiency, squared };
        let mut rows = vec![
            e("Fiber coupling (node A)", self.node_a_fiber_coupling, false),
            e("Fiber coupling (node B)", self.node_b_fiber_coupling, true),
            e("Cavity reflectance (node A)", reflectance_a, false),
            e("Cavity reflectance (node B)", reflectance_b, false),
            e("Node A free space setup", self.node_a_free_space, false),
        ];
        if !matches!(self.conversion, ConversionStage::Direct) {
            rows.push(e(self.conversion.label(), self.conversion.efficiency(), false));
        }
        if self.circulator_a == self.circulator_b {
            rows.push(e("Circulator", self.circulator_a, true));
        } else {
            rows.push(e("Circulator (node A)", self.circulator_a, false));
            rows.push(e("Circulator (node B)", self.circulator_b, false));
        }
        if !self.fibers.is_empty() {
            let t: f64 = self.fibers.iter().map(fiber_transmission).product();
            rows.push(e("Fiber transmission", t, false));
        }
        if self.stabilization_loss_db > 0.0 {
            rows.push(e("Polarization stabilization", db_to_transmission(self.stabilization_loss_db), false));
        }
        rows.push(e("SNSPD efficiency", detector_efficiency, false));
        LinkBudget::new(rows)
    }
}

/// Ellipticity and azimuth on the Poincaré sphere.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolarizationState {
    chi: f64,
    psi: f64,
}

impl PolarizationState {
    /// Wraps into chi in [-pi/4, pi/4] and psi in [-pi/2, pi/2). Crossing a
    /// pole maps chi to ±pi/2 - chi and rotates psi by pi/2, which is the
    /// same point on the sphere.
    pub fn new(chi: f64, psi: f64) -> Self {
        let mut chi = (chi + PI).rem_euclid(2.0 * PI) - PI;
        let mut psi = psi;
        if chi > FRAC_PI_2 {
            chi -= PI;
        } else if chi < -FRAC_PI_2 {
            chi += PI;
        }
        if chi > FRAC_PI_4 {
            chi = FRAC_PI_2 - chi;
            psi += FRAC_PI_2;
        } else if chi < -FRAC_PI_4 {
            chi = -FRAC_PI_2 - chi;
            psi += FRAC_PI_2;
        }
        let psi = psi - PI * ((psi + FRAC_PI_2) / PI).floor();
        Self { chi, psi }
    }

    pub fn lock_point() -> Self {
        Self { chi: 0.0, psi: 0.0 }
    }

    pub fn chi(&self) -> f64 {
        self.chi
    }

    pub fn psi(&self) -> f64 {
        self.psi
    }

    pub fn stokes(&self) -> [f64; 3] {
        let (c2x, s2x) = ((2.0 * self.chi).cos(), (2.0 * self.chi).sin());
        [c2x * (2.0 * self.psi).cos(), c2x * (2.0 * self.psi).sin(), s2x]
    }
}

pub fn dop_cost(p: &PolarizationState) -> f64 {
    ((p.chi.cos() - 1.0).powi(2) + (p.psi.cos() - 1.0).powi(2)).sqrt()
}

/// Power fraction projected onto the lock polarization.
pub fn conversion_polarization_penalty(p: &PolarizationState) -> f64 {
    let s = p.stokes();
    let lock = PolarizationState::lock_point().stokes();
    (1.0 + s[0] * lock[0] + s[1] * lock[1] + s[2] * lock[2]) / 2.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftModel {
    /// Standard deviation of each random-walk step, per controller iteration.
    pub step_sigma_rad: f64,
}

impl DriftModel {
    pub fn none() -> Self {
        Self { step_sigma_rad: 0.0 }
    }
}

impl Default for DriftModel {
    fn default() -> Self {
        Self { step_sigma_rad: 0.01 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerParams {
    pub step_size: f64,
    pub max_iterations: usize,
    pub tolerance: f64,
    pub finite_difference_step: f64,
}

impl Default for ControllerParams {
    fn default() -> Self {
        Self { step_size: 0.5, max_iterations: 200, tolerance: 1e-3, finite_difference_step: 1e-5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TracePoint {
    pub state: PolarizationState,
    pub cost: f64,
    /// The fiber drifted just before this point was recorded.
    pub after_drift: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilizationTrace {
    pub points: Vec<TracePoint>,
    pub iterations: usize,
    pub converged: bool,
}

struct Controller {
    drift: (f64, f64),
    offset: (f64, f64),
}

impl Controller {
    fn state(&self) -> PolarizationState {
        PolarizationState::new(self.drift.0 + self.offset.0, self.drift.1 + self.offset.1)
    }

    fn cost_with(&self, du: (f64, f64)) -> f64 {
        dop_cost(&PolarizationState::new(self.drift.0 + self.offset.0 + du.0, self.drift.1 + self.offset.1 + du.1))
    }

    /// One finite-difference descent step with backtracking; returns the new cost.
    fn step(&mut self, params: &ControllerParams) -> f64 {
        let h = params.finite_difference_step;
        let c0 = self.cost_with((0.0, 0.0));
        let g = (
            (self.cost_with((h, 0.0)) - self.cost_with((-h, 0.0))) / (2.0 * h),
            (self.cost_with((0.0, h)) - self.cost_with((0.0, -h))) / (2.0 * h),
        );
        let mut s = params.step_size;
        for _ in 0..30 {
            let du = (-s * g.0, -s * g.1);
            let c = self.cost_with(du);
            if c <= c0 {
                self.offset.0 += du.0;
                self.offset.1 += du.1;
                return c;
            }
            s *= 0.5;
        }
        c0
    }
}

fn drift_step(ctrl: &mut Controller, normal: &Option<Normal<f64>>, rng: &mut ChaCha8Rng) -> bool {
    match normal {
        Some(n) => {
            ctrl.drift.0 = reflect(ctrl.drift.0 + n.sample(rng), FRAC_PI_4);
            ctrl.drift.1 = reflect(ctrl.drift.1 + n.sample(rng), FRAC_PI_2);
            true
        }
        None => false,
    }
}

/// Folds `x` back into `[-bound, bound]` as a reflecting wall.
fn reflect(x: f64, bound: f64) -> f64 {
    let period = 4.0 * bound;
    let y = (x + bound).rem_euclid(period);
    if y <= 2.0 * bound {
        y - bound
    } else {
        3.0 * bound - y
    }
}

fn drift_distribution(drift: &DriftModel) -> Option<Normal<f64>> {
    (drift.step_sigma_rad > 0.0).then(|| Normal::new(0.0, drift.step_sigma_rad).expect("finite sigma"))
}

/// Runs the controller from `initial` until the cost drops below tolerance or
/// the iteration cap is hit. Non-convergence is reported in the trace.
pub fn stabilize_polarization(
    initial: PolarizationState,
    drift: &DriftModel,
    controller: &ControllerParams,
    rng_seed: u64,
) -> StabilizationTrace {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let normal = drift_distribution(drift);
    let mut ctrl = Controller { drift: (initial.chi, initial.psi), offset: (0.0, 0.0) };
    let mut cost = dop_cost(&ctrl.state());
    let mut points = vec![TracePoint { state: ctrl.state(), cost, after_drift: false }];
    let mut iterations = 0;
    while cost >= controller.tolerance && iterations < controller.max_iterations {
        cost = ctrl.step(controller);
        iterations += 1;
        points.push(TracePoint { state: ctrl.state(), cost, after_drift: false });
        if drift_step(&mut ctrl, &normal, &mut rng) {
            cost = dop_cost(&ctrl.state());
            points.push(TracePoint { state: ctrl.state(), cost, after_drift: true });
        }
    }
    StabilizationTrace { points, iterations, converged: cost < controller.tolerance }
}

/// Continuous tracking: one drift step and one controller step per tick.
/// Returns the cost after each tick.
pub fn track_polarization(
    initial: PolarizationState,
    drift: &DriftModel,
    controller: &ControllerParams,
    ticks: usize,
    rng_seed: u64,
) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let normal = drift_distribution(drift);
    let mut ctrl = Controller { drift: (initial.chi, initial.psi), offset: (0.0, 0.0) };
    (0..ticks)
        .map(|_| {
            drift_step(&mut ctrl, &normal, &mut rng);
            ctrl.step(controller)
        })
        .collect()
}

/// Uncontrolled drift trajectory.
pub fn free_drift(
    initial: PolarizationState,
    drift: &DriftModel,
    ticks: usize,
    rng_seed: u64,
) -> Vec<PolarizationState> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let normal = drift_distribution(drift);
    let mut ctrl = Controller { drift: (initial.chi, initial.psi), offset: (0.0, 0.0) };
    (0..ticks)
        .map(|_| {
            drift_step(&mut ctrl, &normal, &mut rng);
            ctrl.state()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn reflect_folds_into_the_wall() {
        assert_abs_diff_eq!(reflect(0.3, 1.0), 0.3, epsilon = 1e-15);
        assert_abs_diff_eq!(reflect(1.2, 1.0), 0.8, epsilon = 1e-15);
        assert_abs_diff_eq!(reflect(-1.5, 1.0), -0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(reflect(4.3, 1.0), 0.3, epsilon = 1e-12);
    }

    /// Trapezoid rule over one period of the integral representation.
    fn bessel_oracle(n: i32, x: f64) -> f64 {
        let m = 4000;
        let h = 2.0 * PI / m as f64;
        (0..m)
            .map(|i| {
                let t = i as f64 * h;
                (n as f64 * t - x * t.sin()).cos()
            })
            .sum::<f64>()
            * h
            / (2.0 * PI)
    }

    #[test]
    fn bessel_matches_integral() {
        for n in [-3, 0, 1, 2, 5, 12] {
            for x in [0.1, 1.0, 1.8412, 2.5, 7.3, 15.0] {
                assert_abs_diff_eq!(bessel_j(n, x), bessel_oracle(n, x), epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn bessel_zero_argument() {
        assert_eq!(bessel_j(0, 0.0), 1.0);
        assert_eq!(bessel_j(3, 0.0), 0.0);
    }

    #[test]
    fn fiber_examples() {
        assert_eq!(fiber_transmission(&FiberSegment::spool(0.0)), 1.0);
        assert_abs_diff_eq!(fiber_transmission(&FiberSegment::spool(40.0)), 10f64.powf(-1.2), epsilon = 1e-15);
    }

    #[test]
    fn qfc_override_used_verbatim() {
        let q = QfcChain::default();
        assert_eq!(q.efficiency(), 0.054);
        let raw = QfcChain { total_override: None, ..q };
        assert_abs_diff_eq!(raw.efficiency(), 0.054, epsilon = 1e-12);
    }

    #[test]
    fn dop_cost_examples() {
        assert_eq!(dop_cost(&PolarizationState::lock_point()), 0.0);
        let p = PolarizationState::new(FRAC_PI_4, 0.0);
        assert_abs_diff_eq!(dop_cost(&p), 1.0 - FRAC_PI_4.cos(), epsilon = 1e-12);
    }

    #[test]
    fn wrapping_preserves_stokes_vector() {
        let raw = |chi: f64, psi: f64| {
            let c = (2.0 * chi).cos();
            [c * (2.0 * psi).cos(), c * (2.0 * psi).sin(), (2.0 * chi).sin()]
        };
        for &(chi, psi) in &[(1.0, 0.3), (-1.2, 2.0), (3.0, -4.0), (0.2, 1.7)] {
            let p = PolarizationState::new(chi, psi);
            assert!(p.chi().abs() <= FRAC_PI_4 + 1e-12);
            assert!(p.psi() >= -FRAC_PI_2 && p.psi() < FRAC_PI_2);
            let (a, b) = (raw(chi, psi), p.stokes());
            for k in 0..3 {
                assert_abs_diff_eq!(a[k], b[k], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn penalty_limits() {
        assert_abs_diff_eq!(conversion_polarization_penalty(&PolarizationState::lock_point()), 1.0, epsilon = 1e-15);
        let orth = PolarizationState::new(0.0, FRAC_PI_2);
        assert_abs_diff_eq!(conversion_polarization_penalty(&orth), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn lock_point_needs_no_iterations() {
        let t = stabilize_polarization(
            PolarizationState::lock_point(),
            &DriftModel::none(),
            &ControllerParams::default(),
            1,
        );
        assert_eq!(t.iterations, 0);
        assert!(t.converged);
    }

    #[test]
    fn unit_budget_gives_unit_probability() {
        let b = LinkBudget {
            entries: vec![BudgetEntry { name: "x".into(), efficiency: 1.0, squared: true }],
            gate_carving: 1.0,
            pm_detection: 1.0,
        };
        assert_eq!(link_success_probability(&b, 0, 1.0), 1.0);
    }

    #[test]
    fn empty_budget_csv_is_header_only() {
        let b = LinkBudget::new(vec![]);
        assert_eq!(b.to_csv(1, 0.1), "entry,efficiency,squared,factor\n");
    }
}
