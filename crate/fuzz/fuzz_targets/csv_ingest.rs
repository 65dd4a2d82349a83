#![no_main]

use copula_vfl::data::ClientPartition;
use copula_vfl::io::{read_table, assemble, write_csv, read_csv};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(table) = read_table(data) else { return };
    let p = table.names.len() - 1;
    if p == 0 {
        return;
    }
    // First byte picks the number of clients.
    let k = (data[0] as usize % 4).clamp(1, p);
    let partition = ClientPartition::even(p, k);
    let Ok(ds) = assemble(table, partition.clone()) else { return };
    let mut buf = Vec::new();
    write_csv(&ds, &mut buf).unwrap();
    let again = read_csv(buf.as_slice(), partition).expect("written CSV reads back");
    assert_eq!(again.mask, ds.mask);
    assert_eq!(again.n_rows(), ds.n_rows());
});
