#![no_main]

use fiberm2::pgm::Pgm;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(img) = Pgm::decode(data) {
        assert_eq!(img.data.len(), img.width * img.height);
        assert_eq!(Pgm::decode(&img.encode(None)).expect("re-encoded image decodes"), img);
    }
});
