#![no_main]

//! Rewrites the trailing checksum so mutations reach the structural parser.

use aqr_core::{GraphIndex, SearchConfig};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if data.len() < 4 {
        return;
    }
    let mut bytes = data.to_vec();
    let body = bytes.len() - 4;
    let crc = crc32fast::hash(&bytes[..body]);
    bytes[body..].copy_from_slice(&crc.to_le_bytes());
    if let Ok(index) = GraphIndex::from_bytes(&bytes) {
        assert_eq!(index.to_bytes(), bytes);
        if !index.is_empty() {
            let q = index.raw().row(0).to_vec();
            let config = SearchConfig {
                k: 1,
                n_coarse: 1,
                n_rerank: 1,
                ..Default::default()
            };
            let _ = index.search(&q, &config);
        }
    }
});
