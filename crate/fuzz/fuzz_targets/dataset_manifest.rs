#![no_main]

use fiberm2::DatasetManifest;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(m) = DatasetManifest::from_json(data) {
        let json = m.to_json().expect("valid manifest serializes");
        assert_eq!(DatasetManifest::from_json(json.as_bytes()).expect("round trip"), m);
    }
});
