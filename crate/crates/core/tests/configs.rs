use std::path::PathBuf;

use icnn_ot::experiments::{preset, ExperimentConfig, ExperimentId};

fn config_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

#[test]
fn shipped_configs_match_presets() {
    for id in ExperimentId::ALL {
        let path = config_dir().join(format!("{id}.toml"));
        let loaded = ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert_eq!(loaded, preset(id), "{id}");
    }
}

#[test]
fn every_shipped_config_has_a_preset() {
    for entry in std::fs::read_dir(config_dir()).unwrap() {
        let path = entry.unwrap().path();
        let stem = path.file_stem().unwrap().to_str().unwrap();
        assert!(stem.parse::<ExperimentId>().is_ok(), "stray config {}", path.display());
    }
}
