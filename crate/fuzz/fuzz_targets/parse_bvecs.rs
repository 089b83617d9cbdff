#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(ds) = aqr_core::dataset::parse_bvecs(data) {
        assert_eq!(data.len(), ds.len() * (4 + ds.dim()));
    }
});
