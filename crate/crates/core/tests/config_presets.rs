use qnetsim_core::config::{preset_names, preset_source, ConfigError, ExperimentConfig};
use qnetsim_core::runner;

fn small(name: &str) -> ExperimentConfig {
    let mut doc = ExperimentConfig::preset(name).unwrap();
    doc.protocol.trials = 600;
    if let Some(b) = doc.budget.as_mut() {
        b.mc_trials = 600;
    }
    doc
}

#[test]
fn every_preset_validates_and_runs() {
    for name in preset_names() {
        let doc = small(name);
        doc.validate().unwrap_or_else(|e| panic!("{name}: {e}"));
        if doc.sweep.is_some() {
            let r = runner::sweep(&doc).unwrap_or_else(|e| panic!("{name}: {e}"));
            assert!(!r.rows.is_empty(), "{name}");
        } else if doc.budget.is_some() {
            runner::budget(&doc).unwrap_or_else(|e| panic!("{name}: {e}"));
        } else {
            let r = runner::simulate(&doc).unwrap_or_else(|e| panic!("{name}: {e}"));
            assert!(!r.fidelities.is_empty(), "{name}");
        }
    }
}

#[test]
fn unknown_keys_rejected_in_every_table() {
    for name in preset_names() {
        let text = preset_source(name).unwrap();
        let headers: Vec<&str> = text.lines().filter(|l| l.starts_with('[')).collect();
        for h in headers.iter().copied().chain(std::iter::once("")) {
            let bad = if h.is_empty() {
                format!("bogus_key = 1\n{text}")
            } else {
                text.replacen(h, &format!("{h}\nbogus_key = 1"), 1)
            };
            let err = ExperimentConfig::from_toml(&bad).expect_err(&format!("{name} {h} accepted a stray key"));
            assert!(matches!(err, ConfigError::Parse(_)), "{name} {h}: {err}");
            assert!(err.to_string().contains("bogus_key"), "{name} {h}: {err}");
        }
    }
}

#[test]
fn toml_round_trip_is_stable() {
    for name in preset_names() {
        let doc = ExperimentConfig::preset(name).unwrap();
        let once = doc.to_toml().unwrap();
        let twice = ExperimentConfig::from_toml(&once).unwrap().to_toml().unwrap();
        assert_eq!(once, twice, "{name}");
    }
}

#[test]
fn sweep_values_override_one_field() {
    let doc = ExperimentConfig::preset("mu_sweep").unwrap();
    let sweep = doc.sweep.as_ref().unwrap();
    for &v in &sweep.values {
        let point = doc.with_sweep_value(sweep.variable, v);
        assert_eq!(point.protocol.mean_photon_number, Some(v));
        assert_eq!(point.nodes, doc.nodes);
        assert_eq!(point.link, doc.link);
    }
}
