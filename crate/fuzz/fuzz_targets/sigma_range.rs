#![no_main]

use fiberm2::regressor::SigmaRange;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(s) = std::str::from_utf8(data) {
        if let Ok(r) = SigmaRange::parse(s) {
            assert!(!r.values.is_empty());
            assert!(r.values.iter().all(|v| v.is_finite() && *v >= 0.0));
        }
    }
});
