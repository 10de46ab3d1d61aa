use std::path::Path;

use amcr::RunConfig;

#[test]
fn desk_config_matches_defaults() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/desk.ini");
    let cfg = RunConfig::load(&path).unwrap();
    assert_eq!(cfg, RunConfig::default());
    assert_eq!(cfg.hash(), RunConfig::default().hash());
}
