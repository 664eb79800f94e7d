use approx::assert_abs_diff_eq;
use num_complex::Complex64;
use proptest::prelude::*;
use qnetsim_core::analysis::BellTarget;
use qnetsim_core::cavity::SpinReflectivities;
use qnetsim_core::protocol::{herald_branches, ProtocolConfig, Scheme};
use qnetsim_core::qcore::{
    measure_projective, partial_trace, projector, CMatrix, CVector, MixedState, PureState, RegisterLayout,
};
use qnetsim_core::spinphoton::{
    e_gamma_gate, phone_gate, poisson_weights, prepare_photonic_qubit, tdi_branches, Herald, PhotonSource, TdiModel,
    TimeBinPhoton,
};
use std::f64::consts::PI;

const H: f64 = std::f64::consts::FRAC_1_SQRT_2;

fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

fn photon() -> TimeBinPhoton {
    TimeBinPhoton::with_n_max(2)
}

fn qubit(label: &str, amps: [f64; 2]) -> MixedState {
    let l = RegisterLayout::new([(label, 2)]).unwrap();
    PureState::new(l, CVector::from_vec(vec![c(amps[0]), c(amps[1])])).unwrap().to_mixed()
}

fn single_photon() -> MixedState {
    prepare_photonic_qubit(&PhotonSource::SinglePhoton, &photon(), "p").unwrap().state
}

/// Projects the photon onto its one-photon subspace.
fn one_photon_branch(state: &MixedState) -> (f64, MixedState) {
    let tb = photon();
    let d = tb.dim();
    let mut p1 = CMatrix::zeros(d, d);
    for (e, l) in [(1, 0), (0, 1)] {
        let i = tb.index_of(e, l).unwrap();
        p1[(i, i)] = c(1.0);
    }
    let rest = CMatrix::identity(d, d) - &p1;
    let b = measure_projective(state, "p", &[p1, rest]).unwrap().remove(0);
    (b.probability, b.state.unwrap())
}

/// Pure state on `[p, spins...]` from `(early, late, spin digits, amplitude)` terms.
fn photon_spin_state(spins: &[&str], terms: &[(usize, usize, &[usize], Complex64)]) -> PureState {
    let tb = photon();
    let mut regs = vec![("p".to_string(), tb.dim())];
    regs.extend(spins.iter().map(|s| (s.to_string(), 2)));
    let layout = RegisterLayout::new(regs).unwrap();
    let mut v = CVector::zeros(layout.total_dim());
    for (e, l, digits, a) in terms {
        let mut idx = tb.index_of(*e, *l).unwrap();
        for d in digits.iter() {
            idx = 2 * idx + d;
        }
        v[idx] += a;
    }
    PureState::normalized(layout, v).unwrap()
}

#[test]
fn poisson_source_weights() {
    let vac = prepare_photonic_qubit(&PhotonSource::wcs(0.0), &photon(), "p").unwrap();
    assert_abs_diff_eq!(vac.number_distribution[0], 1.0, epsilon = 1e-15);
    assert_abs_diff_eq!(vac.state.matrix()[(0, 0)].re, 1.0, epsilon = 1e-15);

    let mu: f64 = 0.017;
    let (w, mass) = poisson_weights(mu, 2);
    let tail = 1.0 - (-mu).exp() * (1.0 + mu + mu * mu / 2.0);
    assert_abs_diff_eq!(mass, tail, epsilon = 1e-15);
    assert_abs_diff_eq!(w[0] * (1.0 - mass), (-mu).exp(), epsilon = 1e-12);
    assert_abs_diff_eq!(w[0] * (1.0 - mass), 0.9831, epsilon = 1e-4);
    assert_abs_diff_eq!(w[1] * (1.0 - mass), 0.0167, epsilon = 1e-4);

    // multi-photon share of the non-vacuum part
    let mu: f64 = 0.1;
    let p0 = (-mu).exp();
    let p1 = mu * p0;
    let oracle = (1.0 - p0 - p1) / (1.0 - p0);
    assert_abs_diff_eq!(oracle, 0.049, epsilon = 1e-3);
    let (w, _) = poisson_weights(mu, 6);
    let sim = w[2..].iter().sum::<f64>() / w[1..].iter().sum::<f64>();
    assert_abs_diff_eq!(sim, oracle, epsilon = 1e-7);
}

#[test]
fn source_is_symmetric_over_bins() {
    let s = prepare_photonic_qubit(&PhotonSource::wcs(0.2), &TimeBinPhoton::with_n_max(4), "p").unwrap();
    assert!(s.state.validate().is_ok());
    let tb = TimeBinPhoton::with_n_max(4);
    let pops = s.state.populations();
    for (e, l) in tb.basis() {
        let mirror = tb.index_of(l, e).unwrap();
        assert_abs_diff_eq!(pops[tb.index_of(e, l).unwrap()], pops[mirror], epsilon = 1e-14);
    }
}

#[test]
fn ideal_e_gamma_gate_entangles_time_bin() {
    let s = single_photon().tensor(&qubit("e", [H, H])).unwrap();
    let out = e_gamma_gate(&s, "p", "e", &SpinReflectivities::ideal(), 0.0).unwrap();
    let (p, branch) = one_photon_branch(&out);
    assert_abs_diff_eq!(p, 0.5, epsilon = 1e-12);
    let target = photon_spin_state(&["e"], &[(1, 0, &[0], c(1.0)), (0, 1, &[1], c(1.0))]);
    assert_abs_diff_eq!(branch.fidelity_with_pure(&target).unwrap(), 1.0, epsilon = 1e-10);
}

#[test]
fn imperfect_dark_state_matches_symbolic_branch() {
    let refl = SpinReflectivities { r_high: c(1.0), r_low: c(-0.1) };
    let s = single_photon().tensor(&qubit("e", [H, H])).unwrap();
    let out = e_gamma_gate(&s, "p", "e", &refl, 0.0).unwrap();
    let (p, branch) = one_photon_branch(&out);
    // early: r(s) then flip; late: r(flipped)
    let (rh, rl) = (refl.r_high, refl.r_low);
    let target = photon_spin_state(&["e"], &[(1, 0, &[0], rh), (1, 0, &[1], rl), (0, 1, &[0], rl), (0, 1, &[1], rh)]);
    let norm = (2.0 * rh.norm_sqr() + 2.0 * rl.norm_sqr()) / 4.0;
    assert_abs_diff_eq!(p, norm, epsilon = 1e-12);
    assert_abs_diff_eq!(branch.fidelity_with_pure(&target).unwrap(), 1.0, epsilon = 1e-12);
}

#[test]
fn certain_mw_failure_removes_the_flip() {
    let s = single_photon().tensor(&qubit("e", [H, H])).unwrap();
    let out = e_gamma_gate(&s, "p", "e", &SpinReflectivities::ideal(), 1.0).unwrap();
    let (p, branch) = one_photon_branch(&out);
    // X followed by a certain extra X: both bins see the up state only
    assert_abs_diff_eq!(p, 0.5, epsilon = 1e-12);
    let got = photon_spin_state(&["e"], &[(1, 0, &[1], c(1.0)), (0, 1, &[1], c(1.0))]);
    assert_abs_diff_eq!(branch.fidelity_with_pure(&got).unwrap(), 1.0, epsilon = 1e-12);
    let early_down = photon_spin_state(&["e"], &[(1, 0, &[0], c(1.0))]);
    assert_abs_diff_eq!(branch.fidelity_with_pure(&early_down).unwrap(), 0.0, epsilon = 1e-12);
}

fn phone_input(source: &MixedState) -> MixedState {
    source.tensor(&qubit("e", [1.0, 0.0])).unwrap().tensor(&qubit("n", [H, H])).unwrap()
}

fn phone_target() -> PureState {
    photon_spin_state(&["e", "n"], &[(1, 0, &[0, 0], c(1.0)), (0, 1, &[0, 1], c(1.0))])
}

#[test]
fn ideal_phone_gate_frees_the_electron() {
    let out = phone_gate(&phone_input(&single_photon()), "p", "e", "n", &SpinReflectivities::ideal(), 0.0).unwrap();
    let (p, branch) = one_photon_branch(&out);
    assert_abs_diff_eq!(p, 0.5, epsilon = 1e-12);
    assert_abs_diff_eq!(branch.fidelity_with_pure(&phone_target()).unwrap(), 1.0, epsilon = 1e-10);
    let e = partial_trace(&branch, &["e"]).unwrap();
    assert_abs_diff_eq!(e.matrix()[(0, 0)].re, 1.0, epsilon = 1e-12);
}

/// (flag-up probability, infidelity without flag, infidelity given flag down)
fn phone_with_mw_error(p: f64) -> (f64, f64, f64) {
    let out = phone_gate(&phone_input(&single_photon()), "p", "e", "n", &SpinReflectivities::ideal(), p).unwrap();
    let (_, branch) = one_photon_branch(&out);
    let raw = 1.0 - branch.fidelity_with_pure(&phone_target()).unwrap();
    let flags = measure_projective(&branch, "e", &[projector(2, 0), projector(2, 1)]).unwrap();
    let down = flags[0].state.as_ref().unwrap();
    let flagged = 1.0 - down.fidelity_with_pure(&phone_target()).unwrap();
    (flags[1].probability, raw, flagged)
}

#[test]
fn phone_flag_catches_single_mw_faults() {
    for p in [1e-3, 1e-2] {
        let (up, raw, flagged) = phone_with_mw_error(p);
        // three noisy flips, each caught by the flag at first order
        assert!(up > p && up < 4.0 * p, "flag-up {up} at p {p}");
        assert!(raw > p, "raw infidelity {raw} at p {p}");
        assert!(flagged < 5.0 * p * p, "flagged infidelity {flagged} at p {p}");
    }
    let (up1, _, _) = phone_with_mw_error(1e-3);
    let (up2, _, _) = phone_with_mw_error(2e-3);
    assert_abs_diff_eq!(up2 / up1, 2.0, epsilon = 0.01);
}

#[test]
fn phone_gate_ignores_vacuum() {
    let vac = prepare_photonic_qubit(&PhotonSource::wcs(0.0), &photon(), "p").unwrap().state;
    let input = phone_input(&vac);
    let refl = SpinReflectivities { r_high: c(0.8), r_low: c(-0.2) };
    let out = phone_gate(&input, "p", "e", "n", &refl, 0.0).unwrap();
    let dev = (out.matrix() - input.matrix()).iter().map(|z| z.norm()).fold(0.0, f64::max);
    assert!(dev < 1e-12);
}

fn ghz() -> MixedState {
    // (|+>|Phi+> + |->|Phi->)/√2 with |±> = (|e> ± |l>)/√2
    let h2 = H * H;
    photon_spin_state(
        &["a", "b"],
        &[
            (1, 0, &[0, 0], c(h2)),
            (1, 0, &[1, 1], c(h2)),
            (0, 1, &[0, 0], c(h2)),
            (0, 1, &[1, 1], c(h2)),
            (1, 0, &[0, 0], c(h2)),
            (1, 0, &[1, 1], c(-h2)),
            (0, 1, &[0, 0], c(-h2)),
            (0, 1, &[1, 1], c(h2)),
        ],
    )
    .to_mixed()
}

#[test]
fn ideal_tdi_splits_ghz_into_bell_pairs() {
    let b = tdi_branches(&ghz(), "p", &TdiModel::ideal()).unwrap();
    assert_abs_diff_eq!(b.plus_probability, 0.5, epsilon = 1e-12);
    assert_abs_diff_eq!(b.minus_probability, 0.5, epsilon = 1e-12);
    for (h, t) in [(Herald::Plus, BellTarget::PhiPlus), (Herald::Minus, BellTarget::PhiMinus)] {
        let s = b.state(h).unwrap();
        let f = s.fidelity_with_pure(&t.pure_state(s.layout().clone()).unwrap()).unwrap();
        assert_abs_diff_eq!(f, 1.0, epsilon = 1e-12);
    }
}

#[test]
fn vacuum_heralds_only_through_noise() {
    let vac = prepare_photonic_qubit(&PhotonSource::wcs(0.0), &photon(), "p").unwrap().state;
    let s = vac.tensor(&qubit("a", [1.0, 0.0])).unwrap();
    let quiet = tdi_branches(&s, "p", &TdiModel::ideal()).unwrap();
    assert_abs_diff_eq!(quiet.none_probability, 1.0, epsilon = 1e-15);
    assert!(quiet.plus_state.is_none() && quiet.minus_state.is_none());

    let noisy = TdiModel { dark_count_rate_hz: 2.7, noise_photon_rate_hz: 2.5, ..TdiModel::ideal() };
    let oracle = 1.0 - (-(2.7f64 + 2.5) * 400e-9).exp();
    assert_abs_diff_eq!(noisy.false_herald_probability(), oracle, epsilon = 1e-18);
    assert_abs_diff_eq!(oracle, 2.08e-6, epsilon = 1e-9);
    let b = tdi_branches(&s, "p", &noisy).unwrap();
    assert_abs_diff_eq!(b.plus_probability + b.minus_probability, oracle, epsilon = 1e-15);
    assert_abs_diff_eq!(b.plus_noise_fraction, 1.0, epsilon = 1e-12);
    let mixed = b.plus_state.unwrap();
    assert_abs_diff_eq!(mixed.purity(), 0.5, epsilon = 1e-12);
}

#[test]
fn multi_photon_error_grows_linearly_in_mu() {
    let mus = [0.02, 0.05, 0.08, 0.11, 0.14, 0.17, 0.2];
    let errs: Vec<f64> = mus
        .iter()
        .map(|&mu| {
            let mut cfg = ProtocolConfig::ideal(Scheme::Ee);
            cfg.source = PhotonSource::wcs(mu);
            cfg.photon = TimeBinPhoton::with_n_max(4);
            let b = herald_branches(&cfg).unwrap();
            let s = b.minus_state.unwrap();
            1.0 - s.fidelity_with_pure(&BellTarget::PhiMinus.pure_state(s.layout().clone()).unwrap()).unwrap()
        })
        .collect();
    let n = mus.len() as f64;
    let mx = mus.iter().sum::<f64>() / n;
    let my = errs.iter().sum::<f64>() / n;
    let sxy: f64 = mus.iter().zip(&errs).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = mus.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = errs.iter().map(|y| (y - my).powi(2)).sum();
    let r2 = sxy * sxy / (sxx * syy);
    assert!(sxy > 0.0);
    assert!(r2 > 0.99, "R^2 = {r2}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn herald_probabilities_sum_to_one(
        scheme in prop_oneof![Just(Scheme::Ee), Just(Scheme::Nn)],
        ra in 0.3f64..1.0,
        rl in 0.0f64..0.3,
        phase in -PI..PI,
        mw in 0.0f64..0.1,
        mu in 0.0f64..0.3,
        vis in 0.0f64..0.1,
        eff in 0.1f64..1.0,
        dark in 0.0f64..1e4,
    ) {
        let mut cfg = ProtocolConfig::ideal(scheme);
        cfg.source = PhotonSource::wcs(mu);
        cfg.photon = TimeBinPhoton::with_n_max(3);
        let refl = SpinReflectivities { r_high: c(ra), r_low: Complex64::from_polar(rl, phase) };
        cfg.node_a.reflectivities = refl;
        cfg.node_a.mw_error = mw;
        cfg.node_b.mw_error = mw / 2.0;
        cfg.tdi = TdiModel { visibility_error: vis, detector_efficiency: eff, dark_count_rate_hz: dark, ..TdiModel::ideal() };
        let b = herald_branches(&cfg).unwrap();
        let total = b.plus_probability + b.minus_probability + b.none_probability;
        prop_assert!((total - 1.0).abs() < 1e-9, "total {}", total);
        for s in [&b.plus_state, &b.minus_state].into_iter().flatten() {
            prop_assert!(s.validate().is_ok());
        }
    }
}
