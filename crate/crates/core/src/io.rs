//! CSV datasets with a `name:kind` header and a JSON partition sidecar.
//!
//! An empty cell marks a missing value. Missingness is client-block-wise,
//! so a row must leave either all or none of a client's cells empty, and the
//! response (column 0) is never empty.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{ClientPartition, Column, MissingMask, MixedDataset, VariableKind};
use crate::error::{Error, Result};

/// Parsed CSV before a partition is attached; `None` is an empty cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub names: Vec<String>,
    pub kinds: Vec<VariableKind>,
    pub cells: Vec<Vec<Option<f64>>>,
}

impl Table {
    pub fn n_rows(&self) -> usize {
        self.cells.first().map_or(0, Vec::len)
    }
}

pub fn read_table<R: Read>(reader: R) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let mut names = Vec::new();
    let mut kinds = Vec::new();
    for h in rdr.headers()?.iter() {
        let (name, tag) = h
            .rsplit_once(':')
            .ok_or_else(|| Error::InvalidDataset(format!("header {h:?} is not name:kind")))?;
        names.push(name.trim().to_string());
        kinds.push(VariableKind::parse_tag(tag.trim())?);
    }
    if names.is_empty() {
        return Err(Error::InvalidDataset("no columns".into()));
    }
    let mut cells = vec![Vec::new(); names.len()];
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != names.len() {
            return Err(Error::InvalidDataset(format!(
                "row {row} has {} cells, header has {}",
                rec.len(),
                names.len()
            )));
        }
        for (c, cell) in rec.iter().enumerate() {
            let cell = cell.trim();
            cells[c].push(if cell.is_empty() {
                None
            } else {
                let v: f64 = cell
                    .parse()
                    .map_err(|_| Error::InvalidDataset(format!("row {row}, column {c}: bad number {cell:?}")))?;
                if !v.is_finite() {
                    return Err(Error::InvalidDataset(format!("row {row}, column {c}: non-finite {cell:?}")));
                }
                Some(v)
            });
        }
    }
    Ok(Table { names, kinds, cells })
}

/// Attaches a partition, derives the client mask from empty cells and
/// validates the result.
pub fn assemble(table: Table, partition: ClientPartition) -> Result<MixedDataset> {
    let p = table.names.len() - 1;
    partition.check(p)?;
    let n = table.n_rows();
    let k = partition.n_clients();
    let mut mask = MissingMask::none(n, k);
    for client in 0..k {
        let cols: Vec<usize> = partition.blocks[client].clone().map(|c| c + 1).collect();
        for i in 0..n {
            let empty = cols.iter().filter(|&&c| table.cells[c][i].is_none()).count();
            if empty == cols.len() && empty > 0 {
                mask.set(i, client, true);
            } else if empty > 0 {
                return Err(Error::InvalidDataset(format!(
                    "row {i}: client {client} block is partially empty"
                )));
            }
        }
    }
    let columns = table
        .names
        .into_iter()
        .zip(table.kinds)
        .zip(table.cells)
        .map(|((name, kind), cells)| Column::new(name, kind, cells.into_iter().map(|v| v.unwrap_or(f64::NAN)).collect()))
        .collect();
    MixedDataset::new(columns, partition, mask)
}

pub fn read_csv<R: Read>(reader: R, partition: ClientPartition) -> Result<MixedDataset> {
    assemble(read_table(reader)?, partition)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Sidecar {
    blocks: Vec<[usize; 2]>,
    response_owner: usize,
}

/// Parses `{"blocks": [[start, end], ...], "response_owner": k}` with
/// covariate-relative half-open ranges.
pub fn parse_partition(json: &str) -> Result<ClientPartition> {
    let s: Sidecar = serde_json::from_str(json)?;
    if s.blocks.iter().any(|b| b[0] > b[1]) {
        return Err(Error::InvalidDataset("block start after end".into()));
    }
    if s.response_owner >= s.blocks.len() {
        return Err(Error::InvalidDataset(format!(
            "response owner {} out of range for {} clients",
            s.response_owner,
            s.blocks.len()
        )));
    }
    Ok(ClientPartition::new(
        s.blocks.into_iter().map(|b| b[0]..b[1]).collect(),
        s.response_owner,
    ))
}

pub fn partition_json(partition: &ClientPartition) -> String {
    let s = Sidecar {
        blocks: partition.blocks.iter().map(|b| [b.start, b.end]).collect(),
        response_owner: partition.response_owner,
    };
    serde_json::to_string_pretty(&s).expect("sidecar serializes")
}

/// Writes the dataset with masked cells left empty.
pub fn write_csv<W: Write>(ds: &MixedDataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(ds.columns.iter().map(|c| format!("{}:{}", c.name, c.kind.tag())))?;
    for i in 0..ds.n_rows() {
        w.write_record((0..ds.columns.len()).map(|c| {
            if ds.is_observed(i, c) {
                format_value(ds.columns[c].values[i], ds.columns[c].kind)
            } else {
                String::new()
            }
        }))?;
    }
    w.flush()?;
    Ok(())
}

fn format_value(v: f64, kind: VariableKind) -> String {
    if kind.is_discrete() {
        format!("{v}")
    } else {
        // Shortest representation that parses back to the same f64.
        format!("{v:?}")
    }
}

/// Reads `<csv>` and its partition sidecar.
pub fn read_dataset(csv_path: &Path, partition_path: &Path) -> Result<MixedDataset> {
    let partition = parse_partition(&std::fs::read_to_string(partition_path)?)?;
    read_csv(File::open(csv_path)?, partition)
}

pub fn write_dataset(ds: &MixedDataset, csv_path: &Path, partition_path: &Path) -> Result<()> {
    write_csv(ds, File::create(csv_path)?)?;
    std::fs::write(partition_path, partition_json(&ds.partition))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const CSV: &str = "y:cont,a:bin,b:count,c:cat3\n1.5,1,3,2\n-0.25,,,1\n2,0,0,0\n";

    #[test]
    fn reads_kinds_and_block_missingness() {
        let p = parse_partition(r#"{"blocks": [[0, 2], [2, 3]], "response_owner": 0}"#).unwrap();
        let ds = read_csv(CSV.as_bytes(), p).unwrap();
        assert_eq!(ds.n_rows(), 3);
        assert_eq!(ds.columns[3].kind, VariableKind::Categorical { levels: 3 });
        // Client 0 holds y, a, b; row 1 leaves a and b empty.
        assert!(ds.mask.is_missing(1, 0));
        assert!(!ds.mask.is_missing(1, 1));
        assert_eq!(ds.response(), &[1.5, -0.25, 2.0]);
    }

    #[test]
    fn rejects_partial_blocks_and_masked_response() {
        let p = || ClientPartition::from_sizes(&[2, 1]);
        assert!(read_csv("y:cont,a:bin,b:count,c:cat3\n1,,3,0\n".as_bytes(), p()).is_err());
        assert!(read_csv("y:cont,a:bin,b:count,c:cat3\n,1,3,0\n".as_bytes(), p()).is_err());
        assert!(read_csv("y:cont,a:bin,b:count,c:cat3\n1,1,3,3\n".as_bytes(), p()).is_err());
        assert!(read_csv("y,a:bin\n1,1\n".as_bytes(), ClientPartition::from_sizes(&[1])).is_err());
        assert!(read_csv("y:cont,a:real\n1,1\n".as_bytes(), ClientPartition::from_sizes(&[1])).is_err());
        assert!(read_csv("y:cont,a:cont\n1,x\n".as_bytes(), ClientPartition::from_sizes(&[1])).is_err());
        assert!(read_csv("y:cont,a:cont\n1,2\n".as_bytes(), ClientPartition::from_sizes(&[2])).is_err());
    }

    #[test]
    fn round_trips() {
        let p = ClientPartition::from_sizes(&[2, 1]);
        let ds = read_csv(CSV.as_bytes(), parse_partition(&partition_json(&p)).unwrap());
        let ds = ds.unwrap();
        let mut buf = Vec::new();
        write_csv(&ds, &mut buf).unwrap();
        let again = read_csv(buf.as_slice(), p).unwrap();
        assert_eq!(ds.mask, again.mask);
        for (a, b) in ds.columns.iter().zip(&again.columns) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.kind, b.kind);
            for (x, y) in a.values.iter().zip(&b.values) {
                assert!(x == y || (x.is_nan() && y.is_nan()));
            }
        }
        let tricky = [0.1 + 0.2, 1e-300, -7.0 / 3.0];
        for v in tricky {
            assert_eq!(format_value(v, VariableKind::Continuous).parse::<f64>().unwrap(), v);
        }
    }

    #[test]
    fn partition_sidecar_errors() {
        assert!(parse_partition("{}").is_err());
        assert!(parse_partition(r#"{"blocks": [[2, 1]], "response_owner": 0}"#).is_err());
        assert!(parse_partition(r#"{"blocks": [[0, 1]], "response_owner": 1}"#).is_err());
        assert!(parse_partition(r#"{"blocks": [[0, 1]], "response_owner": 0, "x": 1}"#).is_err());
    }
}
