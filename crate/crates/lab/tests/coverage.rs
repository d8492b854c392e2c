//! Every check kind is reachable from some shipped configuration.

use std::collections::BTreeSet;
use std::path::PathBuf;

use scatterlab::config::{CheckSpec, CHECK_KINDS};
use scatterlab::ExperimentConfig;

fn shipped() -> Vec<(PathBuf, ExperimentConfig)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs");
    let mut out = Vec::new();
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "json") {
            let cfg = ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            out.push((path, cfg));
        }
    }
    out.sort_by(|a, b| a.0.cmp(&b.0));
    out
}

#[test]
fn shipped_configs_cover_every_check() {
    let configs = shipped();
    assert!(configs.iter().any(|(p, _)| p.ends_with("quartic_smoke.json")));
    let kinds: BTreeSet<&str> = configs.iter().flat_map(|(_, c)| c.checks.iter().map(|s| s.kind())).collect();
    let missing: Vec<&str> = CHECK_KINDS.iter().copied().filter(|k| !kinds.contains(k)).collect();
    assert!(missing.is_empty(), "no shipped config runs {missing:?}");

    let records: BTreeSet<&str> = configs
        .iter()
        .flat_map(|(_, c)| c.checks.iter().flat_map(|s| s.record_names().iter().copied()))
        .collect();
    for &k in CHECK_KINDS {
        for name in CheckSpec::with_defaults(k).unwrap().record_names() {
            assert!(records.contains(name), "record {name} of {k} is unreachable");
        }
    }
}

#[test]
fn sweep_configs_declare_their_axis() {
    for (path, cfg) in shipped() {
        let stem = path.file_stem().unwrap().to_str().unwrap().to_string();
        if let Some(axis) = stem.strip_prefix("sweep_") {
            let sweep = cfg.sweep.as_ref().unwrap_or_else(|| panic!("{stem} has no sweep section"));
            assert_eq!(sweep.axis.name(), axis);
            assert!(sweep.values.len() >= 2);
        }
    }
}
