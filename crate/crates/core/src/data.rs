//! Client-partitioned mixed-type datasets with client-block missingness.
//!
//! Column 0 always holds the response `Y`; columns `1..=p` hold covariates.
//! Client blocks are expressed in covariate coordinates, so covariate `c`
//! lives in dataset column `c + 1`.

use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Storage type of a variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VariableKind {
    Continuous,
    Binary,
    Categorical { levels: u32 },
    Count,
}

impl VariableKind {
    /// Discrete kinds get tie-breaking jitter before ranking.
    pub fn is_discrete(self) -> bool {
        !matches!(self, VariableKind::Continuous)
    }

    /// True if `v` is a legal value for this kind.
    pub fn admits(self, v: f64) -> bool {
        if !v.is_finite() {
            return false;
        }
        match self {
            VariableKind::Continuous => true,
            VariableKind::Binary => v == 0.0 || v == 1.0,
            VariableKind::Categorical { levels } => {
                v.fract() == 0.0 && v >= 0.0 && v < levels as f64
            }
            VariableKind::Count => v.fract() == 0.0 && v >= 0.0,
        }
    }

    /// Header tag used by the CSV format.
    pub fn tag(self) -> String {
        match self {
            VariableKind::Continuous => "cont".into(),
            VariableKind::Binary => "bin".into(),
            VariableKind::Categorical { levels } => format!("cat{levels}"),
            VariableKind::Count => "count".into(),
        }
    }

    pub fn parse_tag(tag: &str) -> Result<Self> {
        match tag {
            "cont" => Ok(VariableKind::Continuous),
            "bin" => Ok(VariableKind::Binary),
            "count" => Ok(VariableKind::Count),
            t if t.starts_with("cat") => {
                let levels: u32 = t[3..]
                    .parse()
                    .map_err(|_| Error::InvalidDataset(format!("bad categorical tag `{t}`")))?;
                if levels < 2 {
                    return Err(Error::InvalidDataset(format!(
                        "categorical needs at least 2 levels, got {levels}"
                    )));
                }
                Ok(VariableKind::Categorical { levels })
            }
            t => Err(Error::InvalidDataset(format!("unknown variable kind `{t}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub name: String,
    pub kind: VariableKind,
    pub values: Vec<f64>,
}

impl Column {
    pub fn new(name: impl Into<String>, kind: VariableKind, values: Vec<f64>) -> Self {
        Column {
            name: name.into(),
            kind,
            values,
        }
    }
}

/// Assignment of covariates to clients.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClientPartition {
    /// Half-open covariate ranges, one per client.
    pub blocks: Vec<Range<usize>>,
    /// Client that holds the response and acts as the server.
    pub response_owner: usize,
}

impl ClientPartition {
    pub fn new(blocks: Vec<Range<usize>>, response_owner: usize) -> Self {
        ClientPartition {
            blocks,
            response_owner,
        }
    }

    /// Contiguous blocks of the given sizes, server is client 0.
    pub fn from_sizes(sizes: &[usize]) -> Self {
        let mut start = 0;
        let blocks = sizes
            .iter()
            .map(|&s| {
                let r = start..start + s;
                start += s;
                r
            })
            .collect();
        ClientPartition::new(blocks, 0)
    }

    /// `k` near-equal contiguous blocks covering `p` covariates.
    pub fn even(p: usize, k: usize) -> Self {
        let sizes: Vec<usize> = (0..k).map(|i| p / k + usize::from(i < p % k)).collect();
        ClientPartition::from_sizes(&sizes)
    }

    pub fn n_clients(&self) -> usize {
        self.blocks.len()
    }

    pub fn n_covariates(&self) -> usize {
        self.blocks.iter().map(|b| b.len()).sum()
    }

    /// Dataset column indices owned by client `k`; the server also owns column 0.
    pub fn columns_of(&self, k: usize) -> Vec<usize> {
        let mut cols = Vec::with_capacity(self.blocks[k].len() + 1);
        if k == self.response_owner {
            cols.push(0);
        }
        cols.extend(self.blocks[k].clone().map(|c| c + 1));
        cols
    }

    /// Owning client of a dataset column.
    pub fn owner_of_column(&self, col: usize) -> usize {
        if col == 0 {
            return self.response_owner;
        }
        self.blocks
            .iter()
            .position(|b| b.contains(&(col - 1)))
            .expect("column outside partition")
    }

    /// Checks disjointness and exact coverage of `0..p`.
    pub fn check(&self, p: usize) -> Result<()> {
        if self.blocks.is_empty() {
            return Err(Error::InvalidDataset("partition has no clients".into()));
        }
        if self.response_owner >= self.blocks.len() {
            return Err(Error::InvalidDataset(format!(
                "response owner {} out of range for {} clients",
                self.response_owner,
                self.blocks.len()
            )));
        }
        let mut seen = vec![false; p];
        for b in &self.blocks {
            if b.start > b.end || b.end > p {
                return Err(Error::InvalidDataset(format!(
                    "block {}..{} outside 0..{p}",
                    b.start, b.end
                )));
            }
            for c in b.clone() {
                if std::mem::replace(&mut seen[c], true) {
                    return Err(Error::InvalidDataset(format!("covariate {c} in two blocks")));
                }
            }
        }
        if let Some(c) = seen.iter().position(|s| !s) {
            return Err(Error::InvalidDataset(format!("covariate {c} in no block")));
        }
        Ok(())
    }
}

/// N×K client-block missingness: `true` hides a client's whole block for a row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MissingMask {
    n_rows: usize,
    n_clients: usize,
    bits: Vec<bool>,
}

impl MissingMask {
    pub fn none(n_rows: usize, n_clients: usize) -> Self {
        MissingMask {
            n_rows,
            n_clients,
            bits: vec![false; n_rows * n_clients],
        }
    }

    pub fn from_rows(rows: &[Vec<bool>], n_clients: usize) -> Result<Self> {
        let mut mask = MissingMask::none(rows.len(), n_clients);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != n_clients {
                return Err(Error::LengthMismatch {
                    expected: n_clients,
                    got: r.len(),
                });
            }
            for (k, &b) in r.iter().enumerate() {
                mask.set(i, k, b);
            }
        }
        Ok(mask)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_clients(&self) -> usize {
        self.n_clients
    }

    #[inline]
    pub fn is_missing(&self, row: usize, client: usize) -> bool {
        self.bits[row * self.n_clients + client]
    }

    pub fn set(&mut self, row: usize, client: usize, missing: bool) {
        self.bits[row * self.n_clients + client] = missing;
    }

    /// Clients observed for `row`.
    pub fn observed_clients(&self, row: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.n_clients).filter(move |&k| !self.is_missing(row, k))
    }

    pub fn row_complete(&self, row: usize) -> bool {
        (0..self.n_clients).all(|k| !self.is_missing(row, k))
    }

    pub fn any_missing(&self) -> bool {
        self.bits.iter().any(|&b| b)
    }

    pub fn missing_fraction(&self, client: usize) -> f64 {
        if self.n_rows == 0 {
            return 0.0;
        }
        (0..self.n_rows).filter(|&i| self.is_missing(i, client)).count() as f64
            / self.n_rows as f64
    }

    /// Keeps only the listed rows, in order.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let mut out = MissingMask::none(rows.len(), self.n_clients);
        for (new, &old) in rows.iter().enumerate() {
            for k in 0..self.n_clients {
                out.set(new, k, self.is_missing(old, k));
            }
        }
        out
    }
}

/// Columnar mixed-type table with its client partition and missing mask.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedDataset {
    pub columns: Vec<Column>,
    pub partition: ClientPartition,
    pub mask: MissingMask,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    NoResponse,
    RaggedColumn { column: usize, len: usize, expected: usize },
    ResponseMasked { row: usize },
    CategoricalOutOfRange { column: usize, row: usize, value: f64 },
    InvalidCount { column: usize, row: usize, value: f64 },
    InvalidBinary { column: usize, row: usize, value: f64 },
    NonFinite { column: usize, row: usize },
    Partition(String),
    MaskShape { rows: usize, clients: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NoResponse => write!(f, "dataset has no response column"),
            Violation::RaggedColumn {
                column,
                len,
                expected,
            } => write!(f, "column {column} has {len} rows, expected {expected}"),
            Violation::ResponseMasked { row } => write!(f, "response masked at row {row}"),
            Violation::CategoricalOutOfRange { column, row, value } => write!(
                f,
                "categorical out of range at column {column}, row {row}: {value}"
            ),
            Violation::InvalidCount { column, row, value } => {
                write!(f, "invalid count at column {column}, row {row}: {value}")
            }
            Violation::InvalidBinary { column, row, value } => {
                write!(f, "invalid binary at column {column}, row {row}: {value}")
            }
            Violation::NonFinite { column, row } => {
                write!(f, "non-finite observed value at column {column}, row {row}")
            }
            Violation::Partition(msg) => write!(f, "partition: {msg}"),
            Violation::MaskShape { rows, clients } => {
                write!(f, "mask shape {rows}x{clients} does not match dataset")
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Lists every invariant violation of `ds`. Empty iff the dataset is valid.
pub fn validate_dataset(ds: &MixedDataset) -> ValidationReport {
    let mut violations = Vec::new();
    if ds.columns.is_empty() {
        violations.push(Violation::NoResponse);
        return ValidationReport { violations };
    }
    let n = ds.columns[0].values.len();
    for (c, col) in ds.columns.iter().enumerate() {
        if col.values.len() != n {
            violations.push(Violation::RaggedColumn {
                column: c,
                len: col.values.len(),
                expected: n,
            });
        }
    }
    let p = ds.columns.len() - 1;
    if let Err(e) = ds.partition.check(p) {
        violations.push(Violation::Partition(e.to_string()));
    }
    let mask_ok = ds.mask.n_rows() == n && ds.mask.n_clients() == ds.partition.n_clients();
    if !mask_ok {
        violations.push(Violation::MaskShape {
            rows: ds.mask.n_rows(),
            clients: ds.mask.n_clients(),
        });
    }
    if !violations.is_empty() {
        return ValidationReport { violations };
    }
    for (row, &y) in ds.columns[0].values.iter().enumerate() {
        if !y.is_finite() {
            violations.push(Violation::ResponseMasked { row });
        }
    }
    for (c, col) in ds.columns.iter().enumerate() {
        let owner = ds.partition.owner_of_column(c);
        for (row, &v) in col.values.iter().enumerate() {
            if c > 0 && ds.mask.is_missing(row, owner) {
                continue;
            }
            if !v.is_finite() {
                if c > 0 {
                    violations.push(Violation::NonFinite { column: c, row });
                }
                continue;
            }
            if col.kind.admits(v) {
                continue;
            }
            violations.push(match col.kind {
                VariableKind::Categorical { .. } => Violation::CategoricalOutOfRange {
                    column: c,
                    row,
                    value: v,
                },
                VariableKind::Count => Violation::InvalidCount {
                    column: c,
                    row,
                    value: v,
                },
                VariableKind::Binary => Violation::InvalidBinary {
                    column: c,
                    row,
                    value: v,
                },
                VariableKind::Continuous => unreachable!(),
            });
        }
    }
    ValidationReport { violations }
}

impl MixedDataset {
    /// Builds and validates a dataset.
    pub fn new(columns: Vec<Column>, partition: ClientPartition, mask: MissingMask) -> Result<Self> {
        let ds = MixedDataset {
            columns,
            partition,
            mask,
        };
        let report = validate_dataset(&ds);
        if let Some(v) = report.violations.first() {
            return Err(Error::InvalidDataset(format!(
                "{v} ({} violation(s))",
                report.violations.len()
            )));
        }
        Ok(ds)
    }

    pub fn n_rows(&self) -> usize {
        self.columns.first().map_or(0, |c| c.values.len())
    }

    /// Number of covariates `p`.
    pub fn n_covariates(&self) -> usize {
        self.columns.len().saturating_sub(1)
    }

    pub fn response(&self) -> &[f64] {
        &self.columns[0].values
    }

    /// True if cell (`row`, `col`) is observed.
    pub fn is_observed(&self, row: usize, col: usize) -> bool {
        col == 0 || !self.mask.is_missing(row, self.partition.owner_of_column(col))
    }

    /// Row indices where column `col` is observed.
    pub fn observed_rows(&self, col: usize) -> Vec<usize> {
        if col == 0 {
            return (0..self.n_rows()).collect();
        }
        let owner = self.partition.owner_of_column(col);
        (0..self.n_rows())
            .filter(|&i| !self.mask.is_missing(i, owner))
            .collect()
    }

    /// Rows with every client observed.
    pub fn complete_rows(&self) -> Vec<usize> {
        (0..self.n_rows())
            .filter(|&i| self.mask.row_complete(i))
            .collect()
    }

    /// Restricts to the listed rows.
    pub fn select_rows(&self, rows: &[usize]) -> MixedDataset {
        MixedDataset {
            columns: self
                .columns
                .iter()
                .map(|c| Column {
                    name: c.name.clone(),
                    kind: c.kind,
                    values: rows.iter().map(|&i| c.values[i]).collect(),
                })
                .collect(),
            partition: self.partition.clone(),
            mask: self.mask.select_rows(rows),
        }
    }

    /// Covariate matrix rows (observed and masked cells alike), row-major.
    pub fn covariate_row(&self, row: usize) -> Vec<f64> {
        self.columns[1..].iter().map(|c| c.values[row]).collect()
    }
}

/// What one client sees: its own columns plus its per-row observed flag.
#[derive(Debug, Clone)]
pub struct ClientView<'a> {
    pub client: usize,
    /// Dataset column indices, in covariate order.
    pub column_ids: Vec<usize>,
    pub columns: Vec<&'a Column>,
    pub observed: Vec<bool>,
}

impl ClientView<'_> {
    pub fn width(&self) -> usize {
        self.columns.len()
    }
}

/// One view per client over its covariate block (the response is not included).
pub fn split_by_client(ds: &MixedDataset) -> Vec<ClientView<'_>> {
    (0..ds.partition.n_clients())
        .map(|k| {
            let column_ids: Vec<usize> = ds.partition.blocks[k].clone().map(|c| c + 1).collect();
            ClientView {
                client: k,
                columns: column_ids.iter().map(|&c| &ds.columns[c]).collect(),
                column_ids,
                observed: (0..ds.n_rows()).map(|i| !ds.mask.is_missing(i, k)).collect(),
            }
        })
        .collect()
}

/// Reassembles covariate columns from client views, ordered by covariate index.
pub fn concat_views(views: &[ClientView<'_>]) -> Vec<Column> {
    let mut pairs: Vec<(usize, &Column)> = views
        .iter()
        .flat_map(|v| v.column_ids.iter().copied().zip(v.columns.iter().copied()))
        .collect();
    pairs.sort_by_key(|(id, _)| *id);
    pairs.into_iter().map(|(_, c)| c.clone()).collect()
}
