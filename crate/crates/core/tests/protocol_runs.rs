use approx::assert_abs_diff_eq;
use num_complex::Complex64;
use proptest::prelude::*;
use qnetsim_core::analysis::BellTarget;
use qnetsim_core::cavity::SpinReflectivities;
use qnetsim_core::config::ExperimentConfig;
use qnetsim_core::protocol::{
    apply_decoupling_decay, classical_latency, contrast_rejection_filter, run_ensemble, run_ensemble_sharded,
    run_trial, success_rate, Basis, ClassicalChannel, MemoryDecoherence, PreparedProtocol, ProtocolConfig, RateModel,
    SamplingMode, Scheme, NUCLEUS_A, NUCLEUS_B,
};
use qnetsim_core::qcore::{MixedState, RegisterLayout};
use qnetsim_core::spinphoton::{Herald, PhotonSource, TimeBinPhoton};
use std::collections::BTreeMap;

fn preset(name: &str) -> ProtocolConfig {
    ExperimentConfig::preset(name).unwrap().protocol_config().unwrap()
}

fn bell(target: BellTarget, labels: [&str; 2]) -> MixedState {
    let layout = RegisterLayout::new([(labels[0], 2), (labels[1], 2)]).unwrap();
    target.pure_state(layout).unwrap().to_mixed()
}

fn with_dark_states(scheme: Scheme, ra: f64, rb: f64) -> ProtocolConfig {
    let mut cfg = ProtocolConfig::ideal(scheme);
    let one = Complex64::new(1.0, 0.0);
    cfg.node_a.reflectivities = SpinReflectivities { r_high: one, r_low: Complex64::new(-ra, 0.0) };
    cfg.node_b.reflectivities = SpinReflectivities { r_high: one, r_low: Complex64::new(-rb, 0.0) };
    cfg
}

#[test]
fn ideal_pipelines_herald_exact_bell_pairs() {
    for scheme in [Scheme::Ee, Scheme::Nn] {
        let p = PreparedProtocol::new(&ProtocolConfig::ideal(scheme)).unwrap();
        for h in [Herald::Plus, Herald::Minus] {
            assert_abs_diff_eq!(p.state_fidelity(h).unwrap().unwrap(), 1.0, epsilon = 1e-10);
            assert_abs_diff_eq!(p.expected_reported_fidelity(h).unwrap(), 1.0, epsilon = 1e-10);
        }
        assert_abs_diff_eq!(p.branches.plus_probability, p.branches.minus_probability, epsilon = 1e-12);
    }
}

#[test]
fn trial_outcomes_follow_the_herald() {
    let cfg = preset("ee_lab");
    for seed in 0..200 {
        let t = run_trial(&cfg, Basis::Xx, seed).unwrap();
        assert_eq!(t.outcomes.is_some(), t.herald != Herald::None);
        assert_eq!(t, run_trial(&cfg, Basis::Xx, seed).unwrap());
    }
}

#[test]
fn herald_accounting_is_exact() {
    let mut cfg = preset("nn_lab");
    cfg.contrast_rejection_probability = 0.23;
    let p = PreparedProtocol::new(&cfg).unwrap();
    let c = run_ensemble(&p, 50_000, 3, SamplingMode::Attempts).unwrap();
    assert_eq!(c.plus + c.minus + c.none, c.trials);
    assert_eq!(c.trials, 50_000);
    assert!(c.rejected <= c.none);
    let h = run_ensemble(&p, 20_000, 3, SamplingMode::Heralded).unwrap();
    assert_eq!(h.plus + h.minus + h.none, h.trials);
}

#[test]
fn sharding_does_not_change_counts() {
    let p = PreparedProtocol::new(&preset("nn_lab")).unwrap();
    let seq = run_ensemble(&p, 10_000, 42, SamplingMode::Heralded).unwrap();
    for shard in [1, 7, 1000, 4096, 20_000] {
        assert_eq!(run_ensemble_sharded(&p, 10_000, 42, SamplingMode::Heralded, shard).unwrap(), seq);
    }
}

#[test]
fn decay_examples() {
    let rho = bell(BellTarget::PhiMinus, [NUCLEUS_A, NUCLEUS_B]);
    let m = MemoryDecoherence { t2_s: 0.5, exponent: 1.0 };
    let same = apply_decoupling_decay(&rho, 0.0, &[(NUCLEUS_A, m), (NUCLEUS_B, m)]).unwrap();
    assert_eq!(same.matrix(), rho.matrix());

    let out = apply_decoupling_decay(&rho, 0.5, &[(NUCLEUS_A, m), (NUCLEUS_B, m)]).unwrap();
    let e1 = (-1.0f64).exp();
    assert_abs_diff_eq!(out.matrix()[(0, 3)].re, -0.5 * e1 * e1, epsilon = 1e-12);
    for i in 0..4 {
        assert_abs_diff_eq!(out.matrix()[(i, i)].re, rho.matrix()[(i, i)].re, epsilon = 1e-15);
    }
    let one_node = apply_decoupling_decay(&rho, 0.5, &[(NUCLEUS_A, m)]).unwrap();
    assert_abs_diff_eq!(one_node.matrix()[(0, 3)].re, -0.5 * e1, epsilon = 1e-12);
}

#[test]
fn long_storage_with_xy8_128_stays_entangled() {
    let mut cfg = ProtocolConfig::ideal(Scheme::Nn);
    cfg.node_a.t2_nuclear_s = BTreeMap::from([(1, 0.339), (128, 2.11)]);
    cfg.node_b.t2_nuclear_s = BTreeMap::from([(1, 0.140), (128, 2.1)]);
    cfg.decoupling.duration_s = 1.0;
    let p = PreparedProtocol::new(&cfg).unwrap();
    let f = p.state_fidelity(Herald::Minus).unwrap().unwrap();
    let c = |t2: f64| (-(1.0 / t2).powi(2)).exp();
    assert_abs_diff_eq!(f, 0.5 * (1.0 + c(2.11) * c(2.1)), epsilon = 1e-10);
    assert!(f > 0.5);
}

#[test]
fn decay_is_monotone_for_a_fixed_sequence() {
    let mut cfg = preset("nn_lab");
    cfg.decoupling.sequence = Some(128);
    let mut last = f64::INFINITY;
    for t in [0.0, 0.01, 0.05, 0.1, 0.25, 0.5, 1.0, 2.0] {
        cfg.decoupling.duration_s = t;
        let p = PreparedProtocol::new(&cfg).unwrap();
        let f = p.expected_reported_fidelity(Herald::Minus).unwrap();
        assert!(f <= last + 1e-12, "F({t}) = {f} > {last}");
        last = f;
    }
}

#[test]
fn latency_examples() {
    let ch = |km: f64| ClassicalChannel { fiber_length_km: km, ..ClassicalChannel::default() };
    assert_eq!(classical_latency(&ch(0.0)), 0.0);
    assert_abs_diff_eq!(classical_latency(&ch(40.0)), 40e3 * 1.468 / 299_792_458.0, epsilon = 1e-15);
    assert_abs_diff_eq!(classical_latency(&ch(40.0)), 1.96e-4, epsilon = 1e-6);
    assert_abs_diff_eq!(classical_latency(&ch(35.0)), 1.71e-4, epsilon = 1e-6);

    let mut cfg = preset("deployed");
    assert!(cfg.storage_covers_latency());
    cfg.decoupling.duration_s = 1e-4;
    assert!(!cfg.storage_covers_latency());
}

#[test]
fn rate_examples() {
    let r = |eta, rep, d| success_rate(&RateModel { repetition_rate_hz: rep, success_probability: eta, duty_cycle: d });
    assert_abs_diff_eq!(r(2.0e-5, 1.4e3, 0.20), 5.6e-3, epsilon = 1e-12);
    assert_abs_diff_eq!(r(2.5e-4, 1.0e4, 0.34), 0.85, epsilon = 1e-12);
    assert_eq!(r(0.0, 1.0e4, 0.34), 0.0);
    assert_eq!(r(2.5e-4, 1.0e4, 0.0), 0.0);
}

#[test]
fn rejection_filter_examples() {
    let p = PreparedProtocol::new(&preset("ee_lab")).unwrap();
    let trials: Vec<_> = (0..100_000u64)
        .map(|i| {
            let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(i);
            p.sample_trial(Basis::Zz, &mut rng, SamplingMode::Attempts).unwrap()
        })
        .collect();
    let keep = contrast_rejection_filter(&trials, 0.0, 0.34, 1).unwrap();
    assert_eq!(keep.retained, trials);
    let some = contrast_rejection_filter(&trials, 0.23, 0.34, 1).unwrap();
    assert_abs_diff_eq!(some.retained_fraction, 0.77, epsilon = 0.005);
    assert_abs_diff_eq!(some.duty_cycle, 0.34 * some.retained_fraction, epsilon = 1e-15);
    assert!(contrast_rejection_filter(&trials, 1.0, 0.34, 1).unwrap().retained.is_empty());
    assert!(contrast_rejection_filter(&trials, 1.5, 0.34, 1).is_err());
}

#[test]
fn preset_error_detection_helps() {
    let p = PreparedProtocol::new(&preset("nn_lab")).unwrap();
    for h in [Herald::Plus, Herald::Minus] {
        assert!(p.expected_fidelity(h, true).unwrap() > p.expected_fidelity(h, false).unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn error_detection_never_hurts(
        mw_a in 0.0f64..0.1, mw_b in 0.0f64..0.1,
        ra in 0.0f64..0.3, rb in 0.0f64..0.3,
        ro in 0.0f64..0.05, mu in 0.0f64..0.2,
    ) {
        let mut cfg = with_dark_states(Scheme::Nn, ra, rb);
        cfg.node_a.mw_error = mw_a;
        cfg.node_b.mw_error = mw_b;
        cfg.node_a.readout_error = ro;
        cfg.node_b.readout_error = ro;
        cfg.scramble_on_flag_error = true;
        cfg.source = PhotonSource::wcs(mu);
        cfg.photon = TimeBinPhoton::with_n_max(3);
        let p = PreparedProtocol::new(&cfg).unwrap();
        for h in [Herald::Plus, Herald::Minus] {
            let ed = p.expected_fidelity(h, true).unwrap();
            let raw = p.expected_fidelity(h, false).unwrap();
            prop_assert!(ed >= raw - 1e-12, "ED {} < raw {}", ed, raw);
        }
    }

    #[test]
    fn minus_branch_wins_with_pi_phases(ra in 0.0f64..0.5, rb in 0.0f64..0.5, scheme in prop_oneof![Just(Scheme::Ee), Just(Scheme::Nn)]) {
        let p = PreparedProtocol::new(&with_dark_states(scheme, ra, rb)).unwrap();
        let plus = p.state_fidelity(Herald::Plus).unwrap().unwrap();
        let minus = p.state_fidelity(Herald::Minus).unwrap().unwrap();
        prop_assert!(minus >= plus - 1e-12);
    }
}
