#![no_main]

use aqr_core::GraphIndex;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(index) = GraphIndex::from_bytes(data) {
        assert_eq!(index.to_bytes(), data);
    }
});
