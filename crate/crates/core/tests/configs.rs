use mscsa_core::{MscsaConfig, Variant};

const ROOT: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs");

#[test]
fn bundled_pvtv2_b1_matches_builtin() {
    let cfg = MscsaConfig::load(format!("{ROOT}/pvtv2-b1.cfg")).unwrap();
    assert_eq!(cfg, MscsaConfig::pvtv2_b1());
}

#[test]
fn bundled_mini_matches_builtin() {
    let cfg = MscsaConfig::load(format!("{ROOT}/mini.cfg")).unwrap();
    assert_eq!(cfg, MscsaConfig::mini());
    let dense = MscsaConfig::load(format!("{ROOT}/mini-dense.cfg")).unwrap();
    assert_eq!(dense.variant, Variant::Dense);
    assert_eq!(dense.fusion_channels_per_stage().unwrap(), [8, 8]);
}

#[test]
fn config_round_trips_through_toml() {
    let cfg = MscsaConfig::pvtv2_b1();
    assert_eq!(MscsaConfig::from_toml_str(&cfg.to_toml_string()).unwrap(), cfg);
}
