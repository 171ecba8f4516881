//! Labeled and unlabeled samples indexed by discrete time labels.
//!
//! Time structure is carried entirely by the integer label column `r`;
//! rows may appear in any order. Covariates are stored column-major so
//! per-feature passes in the fitters read contiguous memory.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("MissingColumn: {0}")]
    MissingColumn(String),
    #[error("NonNumericCell: row {row}, column {column}: {value:?}")]
    NonNumericCell {
        row: usize,
        column: String,
        value: String,
    },
    #[error("LabelOutOfRange: {0}")]
    LabelOutOfRange(String),
    #[error("BadBinaryOutcome: row {row}: {value} is not 0 or 1")]
    BadBinaryOutcome { row: usize, value: f64 },
    #[error("NonFinite: row {row}, column {column}")]
    NonFinite { row: usize, column: String },
    #[error("ShapeMismatch: {0}")]
    ShapeMismatch(String),
    #[error("EmptyDataset")]
    Empty,
    #[error("InvalidTau: {tau} not in 1..={max}")]
    InvalidTau { tau: u32, max: u32 },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Gaussian,
    Bernoulli,
}

impl FromStr for Family {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian" => Ok(Family::Gaussian),
            "bernoulli" | "binomial" => Ok(Family::Bernoulli),
            other => Err(format!("unknown family {other:?} (expected gaussian or bernoulli)")),
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Family::Gaussian => f.write_str("gaussian"),
            Family::Bernoulli => f.write_str("bernoulli"),
        }
    }
}

/// A candidate change point `tau` in `1..=T-1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CandidateTau(u32);

impl CandidateTau {
    pub fn new(tau: u32, t_max: u32) -> Result<Self, DataError> {
        if tau >= 1 && tau < t_max {
            Ok(Self(tau))
        } else {
            Err(DataError::InvalidTau {
                tau,
                max: t_max.saturating_sub(1),
            })
        }
    }

    /// Builds a tau from a 0-based index into a length `T-1` profile.
    pub(crate) fn from_profile_index(index: usize) -> Self {
        Self(index as u32 + 1)
    }

    pub fn get(self) -> u32 {
        self.0
    }
}

impl fmt::Display for CandidateTau {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// The testing sample: outcome, covariates and time labels.
#[derive(Clone, Debug)]
pub struct LabeledDataset {
    y: Vec<f64>,
    x: DMatrix<f64>,
    r: Vec<u32>,
    t_max: u32,
    family: Family,
    feature_names: Vec<String>,
}

impl LabeledDataset {
    /// Validates and builds a dataset. `T` is the largest label; every label
    /// in `1..=T` must occur at least once.
    pub fn new(y: Vec<f64>, x: DMatrix<f64>, r: Vec<u32>, family: Family) -> Result<Self, DataError> {
        let n = y.len();
        if n == 0 {
            return Err(DataError::Empty);
        }
        if x.nrows() != n || r.len() != n {
            return Err(DataError::ShapeMismatch(format!(
                "y has {n} rows, x has {}, r has {}",
                x.nrows(),
                r.len()
            )));
        }
        let t_max = check_labels(&r, None)?;
        for (i, &v) in y.iter().enumerate() {
            if !v.is_finite() {
                return Err(DataError::NonFinite {
                    row: i + 1,
                    column: "y".into(),
                });
            }
            if family == Family::Bernoulli && v != 0.0 && v != 1.0 {
                return Err(DataError::BadBinaryOutcome { row: i + 1, value: v });
            }
        }
        check_finite(&x)?;
        let feature_names = default_names(x.ncols());
        Ok(Self {
            y,
            x,
            r,
            t_max,
            family,
            feature_names,
        })
    }

    pub fn with_feature_names(mut self, names: Vec<String>) -> Result<Self, DataError> {
        if names.len() != self.p() {
            return Err(DataError::ShapeMismatch(format!(
                "{} names for {} features",
                names.len(),
                self.p()
            )));
        }
        self.feature_names = names;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn r(&self) -> &[u32] {
        &self.r
    }

    pub fn t_max(&self) -> u32 {
        self.t_max
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    /// Contiguous view of feature `j`.
    pub fn column(&self, j: usize) -> &[f64] {
        let n = self.n();
        &self.x.as_slice()[j * n..(j + 1) * n]
    }

    /// `n_t` for `t = 1..=T`.
    pub fn counts(&self) -> Vec<usize> {
        label_counts(&self.r, self.t_max)
    }

    /// `N_tau = n_1 + ... + n_tau` for `tau = 1..=T`.
    pub fn cumulative_counts(&self) -> Vec<usize> {
        self.counts()
            .into_iter()
            .scan(0usize, |acc, c| {
                *acc += c;
                Some(*acc)
            })
            .collect()
    }

    /// Row indices with `labels[i] <= tau` and the complement. `labels` may be
    /// the observed labels or a resampled vector.
    pub fn split_at(&self, tau: CandidateTau, labels: &[u32]) -> (Vec<usize>, Vec<usize>) {
        assert_eq!(labels.len(), self.n(), "label vector length");
        split_labels(labels, tau)
    }

    /// Same outcome and labels with a different design matrix (the distilled
    /// representations use this).
    pub fn with_design(&self, x: DMatrix<f64>, names: Vec<String>) -> Result<Self, DataError> {
        if x.nrows() != self.n() || names.len() != x.ncols() {
            return Err(DataError::ShapeMismatch("replacement design".into()));
        }
        check_finite(&x)?;
        Ok(Self {
            y: self.y.clone(),
            x,
            r: self.r.clone(),
            t_max: self.t_max,
            family: self.family,
            feature_names: names,
        })
    }

    /// Copy with rows permuted: row `i` of the result is row `perm[i]`.
    pub fn permute_rows(&self, perm: &[usize]) -> Self {
        let x = select_rows(&self.x, perm);
        Self {
            y: perm.iter().map(|&i| self.y[i]).collect(),
            x,
            r: perm.iter().map(|&i| self.r[i]).collect(),
            t_max: self.t_max,
            family: self.family,
            feature_names: self.feature_names.clone(),
        }
    }

    /// Copy with a different observed label vector (same `T`).
    pub fn with_labels(&self, r: Vec<u32>) -> Result<Self, DataError> {
        if r.len() != self.n() {
            return Err(DataError::ShapeMismatch("label vector length".into()));
        }
        let t_max = check_labels(&r, Some(self.t_max))?;
        if t_max != self.t_max {
            return Err(DataError::LabelOutOfRange(format!(
                "largest label {t_max} differs from T = {}",
                self.t_max
            )));
        }
        Ok(Self { r, ..self.clone() })
    }
}

/// Covariates with time labels but no outcome.
#[derive(Clone, Debug)]
pub struct UnlabeledDataset {
    x: DMatrix<f64>,
    r: Vec<u32>,
    feature_names: Vec<String>,
}

impl UnlabeledDataset {
    pub fn new(x: DMatrix<f64>, r: Vec<u32>) -> Result<Self, DataError> {
        if x.nrows() != r.len() {
            return Err(DataError::ShapeMismatch(format!(
                "x has {} rows, r has {}",
                x.nrows(),
                r.len()
            )));
        }
        if let Some((i, _)) = r.iter().enumerate().find(|(_, &v)| v == 0) {
            return Err(DataError::LabelOutOfRange(format!("row {}: label 0", i + 1)));
        }
        check_finite(&x)?;
        let feature_names = default_names(x.ncols());
        Ok(Self { x, r, feature_names })
    }

    pub fn with_feature_names(mut self, names: Vec<String>) -> Result<Self, DataError> {
        if names.len() != self.x.ncols() {
            return Err(DataError::ShapeMismatch("feature names".into()));
        }
        self.feature_names = names;
        Ok(self)
    }

    pub fn m(&self) -> usize {
        self.r.len()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn r(&self) -> &[u32] {
        &self.r
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn max_label(&self) -> u32 {
        self.r.iter().copied().max().unwrap_or(0)
    }

    /// Checks that this sample can be pooled with `labeled`.
    pub fn check_compatible(&self, labeled: &LabeledDataset) -> Result<(), DataError> {
        if self.p() != labeled.p() {
            return Err(DataError::ShapeMismatch(format!(
                "unlabeled sample has {} features, labeled has {}",
                self.p(),
                labeled.p()
            )));
        }
        if self.max_label() > labeled.t_max() {
            return Err(DataError::LabelOutOfRange(format!(
                "unlabeled label {} exceeds T = {}",
                self.max_label(),
                labeled.t_max()
            )));
        }
        Ok(())
    }
}

pub(crate) fn split_labels(labels: &[u32], tau: CandidateTau) -> (Vec<usize>, Vec<usize>) {
    let tau = tau.get();
    let mut pre = Vec::new();
    let mut post = Vec::new();
    for (i, &l) in labels.iter().enumerate() {
        if l <= tau {
            pre.push(i);
        } else {
            post.push(i);
        }
    }
    (pre, post)
}

pub(crate) fn label_counts(labels: &[u32], t_max: u32) -> Vec<usize> {
    let mut counts = vec![0usize; t_max as usize];
    for &l in labels {
        counts[l as usize - 1] += 1;
    }
    counts
}

/// Rows `idx` of `x`, column-major.
pub fn select_rows(x: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    let n = x.nrows();
    let src = x.as_slice();
    let mut data = Vec::with_capacity(idx.len() * x.ncols());
    for j in 0..x.ncols() {
        let col = &src[j * n..(j + 1) * n];
        data.extend(idx.iter().map(|&i| col[i]));
    }
    DMatrix::from_vec(idx.len(), x.ncols(), data)
}

fn check_labels(r: &[u32], t_expected: Option<u32>) -> Result<u32, DataError> {
    if let Some((i, _)) = r.iter().enumerate().find(|(_, &v)| v == 0) {
        return Err(DataError::LabelOutOfRange(format!("row {}: label 0 (labels start at 1)", i + 1)));
    }
    let t_max = r.iter().copied().max().ok_or(DataError::Empty)?;
    if let Some(t) = t_expected {
        if t_max > t {
            return Err(DataError::LabelOutOfRange(format!("label {t_max} exceeds T = {t}")));
        }
    }
    let counts = label_counts(r, t_max);
    if let Some(t) = counts.iter().position(|&c| c == 0) {
        return Err(DataError::LabelOutOfRange(format!(
            "time label {} has no observations (labels must cover 1..={t_max})",
            t + 1
        )));
    }
    Ok(t_max)
}

fn check_finite(x: &DMatrix<f64>) -> Result<(), DataError> {
    let n = x.nrows();
    if let Some(k) = x.as_slice().iter().position(|v| !v.is_finite()) {
        return Err(DataError::NonFinite {
            row: k % n + 1,
            column: format!("x{}", k / n + 1),
        });
    }
    Ok(())
}

fn default_names(p: usize) -> Vec<String> {
    (1..=p).map(|j| format!("x{j}")).collect()
}

/// Result of reading a CSV whose outcome column may be absent.
#[derive(Debug)]
pub enum CsvSample {
    Labeled(LabeledDataset),
    Unlabeled(UnlabeledDataset),
}

struct RawTable {
    headers: Vec<String>,
    rows: Vec<csv::StringRecord>,
}

fn read_table(path: &Path) -> Result<RawTable, DataError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_path(path)?;
    let headers = reader.headers()?.iter().map(str::to_string).collect();
    let rows = reader.records().collect::<Result<Vec<_>, _>>()?;
    Ok(RawTable { headers, rows })
}

fn parse_cell(raw: &str, row: usize, column: &str) -> Result<f64, DataError> {
    raw.parse::<f64>().map_err(|_| DataError::NonNumericCell {
        row,
        column: column.to_string(),
        value: raw.to_string(),
    })
}

fn parse_label(raw: &str, row: usize, column: &str) -> Result<u32, DataError> {
    let v = parse_cell(raw, row, column)?;
    if v.fract() != 0.0 || !v.is_finite() {
        return Err(DataError::NonNumericCell {
            row,
            column: column.to_string(),
            value: raw.to_string(),
        });
    }
    if v < 1.0 || v > u32::MAX as f64 {
        return Err(DataError::LabelOutOfRange(format!("row {row}: label {raw} (labels start at 1)")));
    }
    Ok(v as u32)
}

/// Reads a CSV with a header row. The `r_col` column is required; when
/// `y_col` is present the result is labeled, otherwise unlabeled. Every other
/// column (except those in `ignore`) is a numeric feature.
pub fn load_csv(
    path: impl AsRef<Path>,
    y_col: &str,
    r_col: &str,
    family: Family,
    ignore: &[&str],
) -> Result<CsvSample, DataError> {
    let table = read_table(path.as_ref())?;
    let find = |name: &str| table.headers.iter().position(|h| h == name);
    let r_idx = find(r_col).ok_or_else(|| DataError::MissingColumn(r_col.to_string()))?;
    let y_idx = find(y_col);
    let feature_idx: Vec<usize> = (0..table.headers.len())
        .filter(|&j| j != r_idx && Some(j) != y_idx && !ignore.contains(&table.headers[j].as_str()))
        .collect();
    let n = table.rows.len();
    if n == 0 {
        return Err(DataError::Empty);
    }
    let p = feature_idx.len();
    let mut data = vec![0.0; n * p];
    let mut y = Vec::with_capacity(n);
    let mut r = Vec::with_capacity(n);
    for (i, rec) in table.rows.iter().enumerate() {
        let row = i + 1;
        if rec.len() != table.headers.len() {
            return Err(DataError::ShapeMismatch(format!(
                "row {row} has {} cells, header has {}",
                rec.len(),
                table.headers.len()
            )));
        }
        r.push(parse_label(&rec[r_idx], row, r_col)?);
        if let Some(yi) = y_idx {
            y.push(parse_cell(&rec[yi], row, y_col)?);
        }
        for (jj, &j) in feature_idx.iter().enumerate() {
            data[jj * n + i] = parse_cell(&rec[j], row, &table.headers[j])?;
        }
    }
    let names: Vec<String> = feature_idx.iter().map(|&j| table.headers[j].clone()).collect();
    let x = DMatrix::from_vec(n, p, data);
    match y_idx {
        Some(_) => Ok(CsvSample::Labeled(LabeledDataset::new(y, x, r, family)?.with_feature_names(names)?)),
        None => Ok(CsvSample::Unlabeled(UnlabeledDataset::new(x, r)?.with_feature_names(names)?)),
    }
}

pub fn load_labeled_csv(
    path: impl AsRef<Path>,
    y_col: &str,
    r_col: &str,
    family: Family,
) -> Result<LabeledDataset, DataError> {
    match load_csv(path, y_col, r_col, family, &[])? {
        CsvSample::Labeled(ds) => Ok(ds),
        CsvSample::Unlabeled(_) => Err(DataError::MissingColumn(y_col.to_string())),
    }
}

/// Reads covariates and labels; an outcome column named `y_col`, if present,
/// is ignored.
pub fn load_unlabeled_csv(path: impl AsRef<Path>, y_col: &str, r_col: &str) -> Result<UnlabeledDataset, DataError> {
    match load_csv(path, y_col, r_col, Family::Gaussian, &[y_col])? {
        CsvSample::Unlabeled(ds) => Ok(ds),
        CsvSample::Labeled(_) => unreachable!("outcome column is ignored"),
    }
}

fn write_table(
    path: &Path,
    leading: &[(&str, Vec<String>)],
    x: &DMatrix<f64>,
    names: &[String],
) -> Result<(), DataError> {
    let mut w = csv::Writer::from_path(path)?;
    let header: Vec<&str> = leading
        .iter()
        .map(|(h, _)| *h)
        .chain(names.iter().map(String::as_str))
        .collect();
    w.write_record(&header)?;
    for i in 0..x.nrows() {
        let mut rec: Vec<String> = leading.iter().map(|(_, v)| v[i].clone()).collect();
        rec.extend((0..x.ncols()).map(|j| x[(i, j)].to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `y_col, r_col, features...`; floats use the shortest exact repr.
pub fn write_labeled_csv(ds: &LabeledDataset, path: impl AsRef<Path>, y_col: &str, r_col: &str) -> Result<(), DataError> {
    let y = ds.y.iter().map(|v| v.to_string()).collect();
    let r = ds.r.iter().map(|v| v.to_string()).collect();
    write_table(path.as_ref(), &[(y_col, y), (r_col, r)], &ds.x, &ds.feature_names)
}

pub fn write_unlabeled_csv(ds: &UnlabeledDataset, path: impl AsRef<Path>, r_col: &str) -> Result<(), DataError> {
    let r = ds.r.iter().map(|v| v.to_string()).collect();
    write_table(path.as_ref(), &[(r_col, r)], &ds.x, &ds.feature_names)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Write;

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn loads_small_file() {
        let f = write_tmp("y,r,a,b\n1.0,1,0.5,2\n2.0,2,1.5,3\n3.0,1,2.5,4\n4.0,2,3.5,5\n");
        let ds = load_labeled_csv(f.path(), "y", "r", Family::Gaussian).unwrap();
        assert_eq!(ds.t_max(), 2);
        assert_eq!(ds.counts(), vec![2, 2]);
        assert_eq!(ds.feature_names(), &["a".to_string(), "b".to_string()]);
        assert_eq!(ds.column(1), &[2.0, 3.0, 4.0, 5.0]);
    }

    #[test]
    fn gap_in_labels_is_rejected() {
        let f = write_tmp("y,r,a\n1,1,0\n2,3,0\n");
        let err = load_labeled_csv(f.path(), "y", "r", Family::Gaussian).unwrap_err();
        assert!(matches!(err, DataError::LabelOutOfRange(_)), "{err}");
    }

    #[test]
    fn zero_label_is_rejected() {
        let f = write_tmp("y,r,a\n1,0,0\n2,1,0\n");
        assert!(matches!(
            load_labeled_csv(f.path(), "y", "r", Family::Gaussian),
            Err(DataError::LabelOutOfRange(_))
        ));
    }

    #[test]
    fn missing_column_message() {
        let f = write_tmp("y,a\n1,0\n");
        let err = load_labeled_csv(f.path(), "y", "r", Family::Gaussian).unwrap_err();
        assert_eq!(err.to_string(), "MissingColumn: r");
    }

    #[test]
    fn non_numeric_cell_names_row_and_column() {
        let f = write_tmp("y,r,a\n1,1,0\n2,2,abc\n");
        match load_labeled_csv(f.path(), "y", "r", Family::Gaussian).unwrap_err() {
            DataError::NonNumericCell { row, column, .. } => {
                assert_eq!(row, 2);
                assert_eq!(column, "a");
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn bernoulli_outcome_checked() {
        let f = write_tmp("y,r,a\n1,1,0\n0.5,2,0\n");
        assert!(matches!(
            load_labeled_csv(f.path(), "y", "r", Family::Bernoulli),
            Err(DataError::BadBinaryOutcome { row: 2, .. })
        ));
    }

    #[test]
    fn absent_outcome_gives_unlabeled() {
        let f = write_tmp("r,a\n1,0.1\n2,0.2\n");
        match load_csv(f.path(), "y", "r", Family::Gaussian, &[]).unwrap() {
            CsvSample::Unlabeled(u) => assert_eq!(u.m(), 2),
            _ => panic!("expected unlabeled"),
        }
    }

    #[test]
    fn split_examples() {
        let x = DMatrix::zeros(3, 1);
        let ds = LabeledDataset::new(vec![0.0; 3], x, vec![1, 2, 3], Family::Gaussian).unwrap();
        let tau = CandidateTau::new(1, 3).unwrap();
        assert_eq!(ds.split_at(tau, &[1, 2, 3]), (vec![0], vec![1, 2]));
        let last = CandidateTau::new(2, 3).unwrap();
        assert_eq!(ds.split_at(last, &[3, 3, 3]), (vec![], vec![0, 1, 2]));

        let ds4 = LabeledDataset::new(vec![0.0; 4], DMatrix::zeros(4, 1), vec![1, 2, 1, 2], Family::Gaussian).unwrap();
        let t1 = CandidateTau::new(1, 2).unwrap();
        assert_eq!(ds4.split_at(t1, &[2, 1, 2, 1]), (vec![1, 3], vec![0, 2]));
    }

    #[test]
    fn candidate_tau_bounds() {
        assert!(CandidateTau::new(0, 5).is_err());
        assert!(CandidateTau::new(5, 5).is_err());
        assert_eq!(CandidateTau::new(4, 5).unwrap().get(), 4);
    }

    #[test]
    fn cumulative_counts_examples() {
        let r: Vec<u32> = [1u32; 2].iter().chain([2u32; 3].iter()).chain([3u32; 5].iter()).copied().collect();
        let ds = LabeledDataset::new(vec![0.0; 10], DMatrix::zeros(10, 1), r, Family::Gaussian).unwrap();
        assert_eq!(ds.cumulative_counts(), vec![2, 5, 10]);
        let single = LabeledDataset::new(vec![0.0; 4], DMatrix::zeros(4, 0), vec![1; 4], Family::Gaussian).unwrap();
        assert_eq!(single.cumulative_counts(), vec![4]);
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let x = DMatrix::from_fn(6, 2, |i, j| (i as f64 + 0.1) / 3.0 - j as f64 * std::f64::consts::PI);
        let y: Vec<f64> = (0..6).map(|i| (i as f64).sqrt() * 1e-7 + 1.0 / 7.0).collect();
        let ds = LabeledDataset::new(y, x, vec![1, 2, 3, 1, 2, 3], Family::Gaussian).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        write_labeled_csv(&ds, f.path(), "y", "r").unwrap();
        let back = load_labeled_csv(f.path(), "y", "r", Family::Gaussian).unwrap();
        assert_eq!(back.r(), ds.r());
        for (a, b) in back.y().iter().zip(ds.y()) {
            assert!((a - b).abs() <= 1e-12);
        }
        for (a, b) in back.x().iter().zip(ds.x().iter()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    proptest! {
        #[test]
        fn split_is_a_partition(labels in proptest::collection::vec(1u32..=6, 1..60), tau in 1u32..6) {
            let tau = CandidateTau::new(tau, 6).unwrap();
            let (pre, post) = split_labels(&labels, tau);
            prop_assert_eq!(pre.len() + post.len(), labels.len());
            let mut all: Vec<usize> = pre.iter().chain(post.iter()).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..labels.len()).collect::<Vec<_>>());
            prop_assert!(pre.iter().all(|&i| labels[i] <= tau.get()));
            prop_assert!(post.iter().all(|&i| labels[i] > tau.get()));
        }

        #[test]
        fn cumulative_counts_monotone(labels in proptest::collection::vec(1u32..=5, 5..80)) {
            let t = *labels.iter().max().unwrap();
            prop_assume!(label_counts(&labels, t).iter().all(|&c| c > 0));
            let n = labels.len();
            let ds = LabeledDataset::new(vec![0.0; n], DMatrix::zeros(n, 1), labels, Family::Gaussian).unwrap();
            let cc = ds.cumulative_counts();
            prop_assert!(cc.windows(2).all(|w| w[0] <= w[1]));
            prop_assert_eq!(*cc.last().unwrap(), n);
        }
    }
}
