//! Replays the checked-in fuzz seeds through the parser entry points.

use std::fs;
use std::path::PathBuf;

use aqr_core::dataset::{parse_bvecs, parse_fvecs, parse_ivecs};
use aqr_core::GraphIndex;

fn seeds(target: &str) -> Vec<(String, Vec<u8>)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<(String, Vec<u8>)> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| {
            let path = e.unwrap().path();
            (path.display().to_string(), fs::read(&path).unwrap())
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

#[test]
fn vector_file_seeds_parse() {
    for (name, bytes) in seeds("parse_fvecs") {
        let ds = parse_fvecs(&bytes).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(bytes.len(), ds.len() * (4 + 4 * ds.dim()));
    }
    for (name, bytes) in seeds("parse_bvecs") {
        if name.ends_with("empty.bvecs") {
            assert!(parse_bvecs(&bytes).is_err());
            continue;
        }
        let ds = parse_bvecs(&bytes).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(bytes.len(), ds.len() * (4 + ds.dim()));
    }
    for (name, bytes) in seeds("parse_ivecs") {
        let ids = parse_ivecs(&bytes).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(bytes.len(), ids.rows_len() * (4 + 4 * ids.width()));
    }
}

#[test]
fn index_seeds_round_trip_or_fail_cleanly() {
    for target in ["index_from_bytes", "index_resealed"] {
        for (name, bytes) in seeds(target) {
            match GraphIndex::from_bytes(&bytes) {
                Ok(index) => assert_eq!(index.to_bytes(), bytes, "{name}"),
                Err(e) => assert!(name.ends_with("huge-connectivity"), "{name}: {e}"),
            }
        }
    }
}
