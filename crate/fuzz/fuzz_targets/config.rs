#![no_main]

use copula_vfl::harness::ExperimentConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(s) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = ExperimentConfig::from_toml(s) {
        let text = cfg.to_toml().expect("valid config serializes");
        let back = ExperimentConfig::from_toml(&text).expect("serialized config re-parses");
        assert_eq!(back.arms.len(), cfg.arms.len());
        assert_eq!(back.q, cfg.q);
        assert_eq!(back.missing, cfg.missing);
    }
});
