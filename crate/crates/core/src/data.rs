//! Feature datasets and their CSV representation.
//!
//! A dataset file has a mandatory header `label,f0,...,f{n-1}` followed by one
//! row per sample. Labels are `0` (the legacy system answered correctly) or
//! `1` (it made an error). Reals are written with 17 significant digits so a
//! save/load cycle reproduces every value bit for bit.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Correct,
    Error,
}

impl Label {
    pub fn code(self) -> u8 {
        match self {
            Label::Correct => 0,
            Label::Error => 1,
        }
    }

    pub fn from_code(code: &str) -> Option<Label> {
        match code {
            "0" => Some(Label::Correct),
            "1" => Some(Label::Error),
            _ => None,
        }
    }
}

/// Feature vectors tapped from a legacy classifier, each tagged as coming
/// from correct operation (the set M) or from an error (the set Y).
///
/// Rows are samples. The dataset is immutable once built; every constructor
/// checks that all entries are finite and that labels and rows line up.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    features: DMatrix<f64>,
    labels: Vec<Label>,
}

impl LabeledDataset {
    pub fn new(features: DMatrix<f64>, labels: Vec<Label>) -> Result<Self> {
        if features.ncols() == 0 {
            return Err(Error::InvalidArgument("feature dimension must be positive".into()));
        }
        if features.nrows() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: features.nrows(),
                got: labels.len(),
            });
        }
        for (row, values) in features.row_iter().enumerate() {
            if let Some(col) = values.iter().position(|v| !v.is_finite()) {
                return Err(Error::Parse {
                    row,
                    message: format!("non-finite value in column f{col}"),
                });
            }
        }
        Ok(Self { features, labels })
    }

    pub fn from_rows(rows: &[Vec<f64>], labels: Vec<Label>) -> Result<Self> {
        let n = rows.first().map(Vec::len).ok_or_else(|| Error::Empty("no rows".into()))?;
        if let Some(bad) = rows.iter().find(|r| r.len() != n) {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: bad.len(),
            });
        }
        let features = DMatrix::from_fn(rows.len(), n, |i, j| rows[i][j]);
        Self::new(features, labels)
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn features(&self) -> &DMatrix<f64> {
        &self.features
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn sample(&self, index: usize) -> DVector<f64> {
        self.features.row(index).transpose()
    }

    pub fn error_count(&self) -> usize {
        self.labels.iter().filter(|l| **l == Label::Error).count()
    }

    pub fn correct_count(&self) -> usize {
        self.len() - self.error_count()
    }

    pub fn indices_of(&self, label: Label) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter_map(|(i, l)| (*l == label).then_some(i))
            .collect()
    }

    /// Rows at `indices`, in the order given.
    pub fn select(&self, indices: &[usize]) -> LabeledDataset {
        let features = self.features.select_rows(indices);
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        LabeledDataset { features, labels }
    }

    pub fn with_labels(&self, labels: Vec<Label>) -> Result<LabeledDataset> {
        if labels.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                got: labels.len(),
            });
        }
        Ok(LabeledDataset {
            features: self.features.clone(),
            labels,
        })
    }
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<LabeledDataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_dataset(file)
}

pub fn read_dataset<R: Read>(reader: R) -> Result<LabeledDataset> {
    let table = read_table(reader)?;
    let Some(first) = table.header.first() else {
        return Err(Error::Header("missing header".into()));
    };
    if first != "label" {
        return Err(Error::Header(format!("first column must be `label`, found `{first}`")));
    }
    check_feature_columns(&table.header[1..], "f")?;
    let n = table.header.len() - 1;
    if n == 0 {
        return Err(Error::Header("no feature columns".into()));
    }

    let mut labels = Vec::with_capacity(table.rows.len());
    let mut values = Vec::with_capacity(table.rows.len() * n);
    for (row, record) in table.rows.iter().enumerate() {
        let label = Label::from_code(&record[0]).ok_or_else(|| Error::Parse {
            row,
            message: format!("label must be 0 or 1, found `{}`", record[0]),
        })?;
        labels.push(label);
        for (col, field) in record.iter().skip(1).enumerate() {
            values.push(parse_real(field, row, &format!("f{col}"))?);
        }
    }
    let features = DMatrix::from_row_slice(labels.len(), n, &values);
    LabeledDataset::new(features, labels)
}

/// Reads a feature matrix for deployment. Accepts either a dataset file (the
/// label column is ignored) or a bare `f0,...,f{n-1}` table.
pub fn load_features(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_features(file)
}

pub fn read_features<R: Read>(reader: R) -> Result<DMatrix<f64>> {
    let table = read_table(reader)?;
    let skip = usize::from(table.header.first().map(String::as_str) == Some("label"));
    check_feature_columns(&table.header[skip..], "f")?;
    let n = table.header.len() - skip;
    if n == 0 {
        return Err(Error::Header("no feature columns".into()));
    }
    let mut values = Vec::with_capacity(table.rows.len() * n);
    for (row, record) in table.rows.iter().enumerate() {
        for (col, field) in record.iter().skip(skip).enumerate() {
            values.push(parse_real(field, row, &format!("f{col}"))?);
        }
    }
    Ok(DMatrix::from_row_slice(table.rows.len(), n, &values))
}

pub fn save_dataset(data: &LabeledDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_dataset(data, BufWriter::new(file)).map_err(|e| Error::io(path, e))
}

pub fn write_dataset<W: Write>(data: &LabeledDataset, mut out: W) -> std::io::Result<()> {
    write!(out, "label")?;
    for j in 0..data.dim() {
        write!(out, ",f{j}")?;
    }
    writeln!(out)?;
    for (i, label) in data.labels.iter().enumerate() {
        write!(out, "{}", label.code())?;
        for v in data.features.row(i).iter() {
            write!(out, ",{}", fmt_real(*v))?;
        }
        writeln!(out)?;
    }
    out.flush()
}

/// Decimal rendering with 17 significant digits; parses back to the same f64.
pub fn fmt_real(value: f64) -> String {
    format!("{value:.16e}")
}

/// Draws `count` i.i.d. points uniform on `[-1, 1]^n`, all labelled correct.
pub fn sample_product_cube(n: usize, count: usize, rng: RngSpec) -> Result<LabeledDataset> {
    if n == 0 || count == 0 {
        return Err(Error::InvalidArgument(format!(
            "cube sampler needs n >= 1 and count >= 1 (got n={n}, count={count})"
        )));
    }
    let mut r = rng.rng();
    let mut values = Vec::with_capacity(n * count);
    values.extend((0..n * count).map(|_| r.random_range(-1.0..=1.0)));
    let features = DMatrix::from_row_slice(count, n, &values);
    LabeledDataset::new(features, vec![Label::Correct; count])
}

pub(crate) struct Table {
    pub(crate) header: Vec<String>,
    pub(crate) rows: Vec<Vec<String>>,
}

pub(crate) fn read_table<R: Read>(reader: R) -> Result<Table> {
    let mut csv = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut records = csv.records();
    let header: Vec<String> = match records.next() {
        None => return Err(Error::Empty("file has no header".into())),
        Some(rec) => rec
            .map_err(|e| Error::Header(e.to_string()))?
            .iter()
            .map(str::to_owned)
            .collect(),
    };
    let mut rows = Vec::new();
    for (row, rec) in records.enumerate() {
        let rec = rec.map_err(|e| Error::Parse {
            row,
            message: e.to_string(),
        })?;
        if rec.len() != header.len() {
            return Err(Error::Parse {
                row,
                message: format!("expected {} fields, found {}", header.len(), rec.len()),
            });
        }
        rows.push(rec.iter().map(str::to_owned).collect());
    }
    if rows.is_empty() {
        return Err(Error::Empty("file has no data rows".into()));
    }
    Ok(Table { header, rows })
}

pub(crate) fn check_feature_columns(columns: &[String], prefix: &str) -> Result<()> {
    for (j, name) in columns.iter().enumerate() {
        if *name != format!("{prefix}{j}") {
            return Err(Error::Header(format!(
                "expected column `{prefix}{j}`, found `{name}`"
            )));
        }
    }
    Ok(())
}

pub(crate) fn parse_real(field: &str, row: usize, column: &str) -> Result<f64> {
    let v: f64 = field.parse().map_err(|_| Error::Parse {
        row,
        message: format!("column {column}: `{field}` is not a number"),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            row,
            message: format!("column {column}: non-finite value `{field}`"),
        });
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loads_small_file() {
        let text = "label,f0,f1\n0,1.0,2.0\n0,-1,0.5\n1,3,4\n";
        let data = read_dataset(text.as_bytes()).unwrap();
        assert_eq!(data.dim(), 2);
        assert_eq!(data.correct_count(), 2);
        assert_eq!(data.error_count(), 1);
        assert_eq!(data.features()[(1, 1)], 0.5);
        assert_eq!(data.labels()[2], Label::Error);
    }

    #[test]
    fn non_numeric_field_names_its_row() {
        let text = "label,f0,f1\n0,1.0,2.0\n1,abc,4\n";
        match read_dataset(text.as_bytes()) {
            Err(Error::Parse { row, .. }) => assert_eq!(row, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_nan_inf_and_wrong_arity() {
        for text in [
            "label,f0\n0,NaN\n",
            "label,f0\n0,inf\n",
            "label,f0,f1\n0,1\n",
            "label,f0\n2,1\n",
        ] {
            assert!(matches!(read_dataset(text.as_bytes()), Err(Error::Parse { row: 0, .. })), "{text}");
        }
    }

    #[test]
    fn empty_and_header_only_files_fail() {
        assert!(matches!(read_dataset("".as_bytes()), Err(Error::Empty(_))));
        assert!(matches!(read_dataset("label,f0\n".as_bytes()), Err(Error::Empty(_))));
        assert!(matches!(read_dataset("lbl,f0\n0,1\n".as_bytes()), Err(Error::Header(_))));
        assert!(matches!(read_dataset("label,x0\n0,1\n".as_bytes()), Err(Error::Header(_))));
    }

    #[test]
    fn write_then_read_is_identity() {
        let data = sample_product_cube(5, 40, RngSpec::new(3, 1)).unwrap();
        let mut labels = data.labels().to_vec();
        labels[7] = Label::Error;
        let data = data.with_labels(labels).unwrap();
        let mut buf = Vec::new();
        write_dataset(&data, &mut buf).unwrap();
        let back = read_dataset(buf.as_slice()).unwrap();
        assert_eq!(back.labels(), data.labels());
        let max_err = (back.features() - data.features()).abs().max();
        assert!(max_err <= 1e-12, "{max_err}");
    }

    #[test]
    fn features_table_accepts_both_layouts() {
        let a = read_features("label,f0,f1\n1,1,2\n".as_bytes()).unwrap();
        let b = read_features("f0,f1\n1,2\n".as_bytes()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn cube_sampler_moments_and_support() {
        let data = sample_product_cube(1, 100_000, RngSpec::new(11, 0)).unwrap();
        let col = data.features().column(0);
        let mean = col.mean();
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (col.len() - 1) as f64;
        assert!(mean.abs() < 0.02, "{mean}");
        assert!((var - 1.0 / 3.0).abs() < 0.02, "{var}");
        assert!(col.iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn cube_sampler_total_variance_tracks_n_over_3() {
        let n = 12;
        let data = sample_product_cube(n, 20_000, RngSpec::new(5, 2)).unwrap();
        let total: f64 = data
            .features()
            .column_iter()
            .map(|c| {
                let m = c.mean();
                c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (c.len() - 1) as f64
            })
            .sum();
        assert!((total - n as f64 / 3.0).abs() < 0.05, "{total}");
    }

    #[test]
    fn cube_sampler_is_deterministic() {
        let a = sample_product_cube(4, 50, RngSpec::new(7, 0)).unwrap();
        let b = sample_product_cube(4, 50, RngSpec::new(7, 0)).unwrap();
        assert_eq!(a, b);
        assert!(sample_product_cube(0, 5, RngSpec::new(7, 0)).is_err());
    }
}
