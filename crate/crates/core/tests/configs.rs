use std::path::Path;

use sadq::TrainConfig;

#[test]
fn shipped_configs_equal_the_presets() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for name in ["cartpole", "acrobot", "bitflip", "ocloud"] {
        let file = TrainConfig::load(&dir.join(format!("{name}.toml")), &[]).unwrap();
        assert_eq!(file, TrainConfig::preset(name).unwrap(), "{name}");
    }
}

#[test]
fn presets_survive_a_toml_round_trip() {
    for name in ["cartpole", "acrobot", "bitflip", "ocloud"] {
        let cfg = TrainConfig::preset(name).unwrap();
        assert_eq!(TrainConfig::from_toml_str(&cfg.to_toml()).unwrap(), cfg, "{name}");
    }
}

#[test]
fn overrides_apply_and_unknown_keys_fail() {
    let text = TrainConfig::preset("cartpole").unwrap().to_toml();
    let cfg = TrainConfig::with_overrides(&text, &["agent.beta=0.25".into(), "q.hidden=[32, 32]".into()]).unwrap();
    assert_eq!(cfg.agent.beta, 0.25);
    assert_eq!(cfg.q.hidden, vec![32, 32]);
    assert!(TrainConfig::with_overrides(&text, &["agent.gamma_prime=1".into()]).is_err());
    assert!(TrainConfig::with_overrides(&text, &["agent.alpha=1.5".into()]).is_err());
}
