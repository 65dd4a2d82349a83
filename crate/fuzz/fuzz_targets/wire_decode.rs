#![no_main]

use copula_vfl::federation::{wire_decode, wire_encode};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok((msg, used)) = wire_decode(data) {
        assert!(used <= data.len());
        let frame = wire_encode(&msg);
        let (again, n) = wire_decode(&frame).expect("re-encoded frame decodes");
        assert_eq!(n, frame.len());
        assert_eq!(wire_encode(&again), frame);
    }
});
