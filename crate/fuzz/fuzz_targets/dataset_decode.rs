#![no_main]

use fiberm2::dataset::decode_dataset;
use fiberm2_fuzz::split_frames;
use libfuzzer_sys::fuzz_target;

// Input: framed manifest, images, labels, then modal bytes.
fuzz_target!(|data: &[u8]| {
    if let Some(p) = split_frames(data, 4) {
        if let Ok(ds) = decode_dataset(p[0], p[1], p[2], p[3]) {
            assert_eq!(ds.len(), ds.manifest.count);
        }
    }
});
