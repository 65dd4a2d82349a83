#![no_main]

use copula_vfl::io::{parse_partition, partition_json};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(s) = std::str::from_utf8(data) else { return };
    if let Ok(p) = parse_partition(s) {
        let _ = p.check(p.n_covariates());
        let back = parse_partition(&partition_json(&p)).expect("sidecar round trip");
        assert_eq!(back, p);
    }
});
