#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(ids) = aqr_core::dataset::parse_ivecs(data) {
        assert_eq!(data.len(), ids.rows_len() * (4 + 4 * ids.width()));
    }
});
