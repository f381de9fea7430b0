#![no_main]

use fiberm2::regressor::decode_checkpoint;
use fiberm2_fuzz::split_frames;
use libfuzzer_sys::fuzz_target;

// Input: framed `model.json`, then the parameter blob.
fuzz_target!(|data: &[u8]| {
    if let Some(p) = split_frames(data, 2) {
        if let Ok(state) = decode_checkpoint(p[0], p[1]) {
            assert!(state.network.params.is_finite());
        }
    }
});
