use std::path::Path;

use panoabr::experiment::ExperimentConfig;

#[test]
fn reference_config_matches_defaults() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/reference.toml");
    let cfg = ExperimentConfig::load(&path).unwrap();
    let mut want = ExperimentConfig::default();
    want.experiment.out = path.parent().unwrap().join("results");
    assert_eq!(cfg, want);
}
