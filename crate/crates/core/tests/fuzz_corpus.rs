//! The checked-in fuzz seeds must exercise the success path of each entry
//! point, not just its error handling.

use std::fs;
use std::path::PathBuf;

use copula_vfl::data::ClientPartition;
use copula_vfl::federation::wire_decode;
use copula_vfl::harness::ExperimentConfig;
use copula_vfl::io::{assemble, parse_partition, read_table};

fn seeds(target: &str) -> Vec<(PathBuf, Vec<u8>)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<(PathBuf, Vec<u8>)> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| {
            let path = e.unwrap().path();
            let bytes = fs::read(&path).unwrap();
            (path, bytes)
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

#[test]
fn csv_seeds_parse() {
    for (path, bytes) in seeds("csv_ingest") {
        let table = read_table(bytes.as_slice()).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        let p = table.names.len() - 1;
        assemble(table, ClientPartition::even(p, 2)).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    }
}

#[test]
fn partition_seeds_parse() {
    for (path, bytes) in seeds("partition_json") {
        let text = String::from_utf8(bytes).unwrap();
        parse_partition(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    }
}

#[test]
fn wire_seeds_decode() {
    for (path, bytes) in seeds("wire_decode") {
        let (_, used) = wire_decode(&bytes).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert_eq!(used, bytes.len());
    }
}

#[test]
fn config_seeds_parse() {
    for (path, bytes) in seeds("config") {
        let text = String::from_utf8(bytes).unwrap();
        let cfg = ExperimentConfig::from_toml(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        let again = ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(again, cfg);
    }
}
