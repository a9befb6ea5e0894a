//! Tabular data ingestion, sample moments and frequency tabulation.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed table: {0}")]
    Csv(#[from] csv::Error),
    #[error("row {row} has {found} fields, expected {expected}")]
    Ragged { row: usize, found: usize, expected: usize },
    #[error("table has no data rows")]
    EmptyTable,
    #[error("need at least 2 complete rows, found {0}")]
    InsufficientRows(usize),
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),
    #[error("duplicate column name `{0}`")]
    DuplicateColumn(String),
    #[error("covariance matrix must be square and symmetric with one name per row")]
    BadCovariance,
}

/// Options for [`load_table`].
#[derive(Debug, Clone)]
pub struct LoadOptions {
    pub delimiter: u8,
    /// Cell contents (after trimming) treated as missing besides the empty cell.
    pub missing_markers: Vec<String>,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            delimiter: b',',
            missing_markers: vec!["NA".to_string()],
        }
    }
}

/// Rectangular observations with a missingness mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub names: Vec<String>,
    /// Row-major values; missing cells hold NaN.
    pub values: Vec<Vec<f64>>,
    /// `missing[i][j]` is true when cell (i, j) had no numeric value.
    pub missing: Vec<Vec<bool>>,
    /// Trimmed cell text, kept for categorical tabulation.
    pub raw: Option<Vec<Vec<String>>>,
}

impl Dataset {
    /// Builds a fully observed dataset from numeric rows.
    pub fn from_rows(names: Vec<String>, rows: Vec<Vec<f64>>) -> Dataset {
        let missing = rows.iter().map(|r| r.iter().map(|v| !v.is_finite()).collect()).collect();
        Dataset {
            names,
            values: rows,
            missing,
            raw: None,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.values.len()
    }

    pub fn n_cols(&self) -> usize {
        self.names.len()
    }

    pub fn column_index(&self, name: &str) -> Result<usize, DataError> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| DataError::UnknownVariable(name.to_string()))
    }

    /// Restricts to the named columns, in the given order.
    pub fn select(&self, columns: &[String]) -> Result<Dataset, DataError> {
        let idx: Vec<usize> = columns.iter().map(|c| self.column_index(c)).collect::<Result<_, _>>()?;
        let pick = |row: &Vec<f64>| idx.iter().map(|&j| row[j]).collect::<Vec<f64>>();
        Ok(Dataset {
            names: columns.to_vec(),
            values: self.values.iter().map(pick).collect(),
            missing: self.missing.iter().map(|r| idx.iter().map(|&j| r[j]).collect()).collect(),
            raw: self
                .raw
                .as_ref()
                .map(|raw| raw.iter().map(|r| idx.iter().map(|&j| r[j].clone()).collect()).collect()),
        })
    }

    /// Rows without any missing cell (listwise deletion).
    pub fn complete_rows(&self) -> Vec<Vec<f64>> {
        self.values
            .iter()
            .zip(&self.missing)
            .filter(|(_, m)| !m.iter().any(|&x| x))
            .map(|(r, _)| r.clone())
            .collect()
    }

    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<(), DataError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(&self.names)?;
        for (row, mask) in self.values.iter().zip(&self.missing) {
            let cells: Vec<String> = row
                .iter()
                .zip(mask)
                .map(|(v, &m)| if m { String::new() } else { format!("{v}") })
                .collect();
            w.write_record(&cells)?;
        }
        w.flush().map_err(|e| DataError::Io {
            path: "<writer>".into(),
            source: e,
        })
    }
}

/// Reads a delimited text table with a mandatory header row.
pub fn load_table(path: impl AsRef<Path>, options: &LoadOptions) -> Result<Dataset, DataError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| DataError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    parse_table(&text, options)
}

pub fn parse_table(text: &str, options: &LoadOptions) -> Result<Dataset, DataError> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(options.delimiter)
        .has_headers(true)
        .flexible(true)
        .from_reader(text.as_bytes());
    let names: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    for (i, n) in names.iter().enumerate() {
        if names[..i].contains(n) {
            return Err(DataError::DuplicateColumn(n.clone()));
        }
    }

    let mut values = Vec::new();
    let mut missing = Vec::new();
    let mut raw = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != names.len() {
            return Err(DataError::Ragged {
                row: i + 2,
                found: record.len(),
                expected: names.len(),
            });
        }
        let cells: Vec<String> = record.iter().map(|c| c.trim().to_string()).collect();
        let parsed: Vec<Option<f64>> = cells
            .iter()
            .map(|c| {
                if c.is_empty() || options.missing_markers.iter().any(|m| m == c) {
                    None
                } else {
                    c.parse::<f64>().ok().filter(|v| v.is_finite())
                }
            })
            .collect();
        missing.push(parsed.iter().map(Option::is_none).collect());
        values.push(parsed.iter().map(|v| v.unwrap_or(f64::NAN)).collect());
        raw.push(cells);
    }
    if values.is_empty() {
        return Err(DataError::EmptyTable);
    }
    Ok(Dataset {
        names,
        values,
        missing,
        raw: Some(raw),
    })
}

/// Divisor used for the sample covariance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Divisor {
    /// Unbiased, `n - 1`.
    #[default]
    NMinusOne,
    /// Maximum likelihood, `n`.
    N,
}

/// Sample covariance and correlation matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMoments {
    pub names: Vec<String>,
    #[serde(with = "crate::report::matrix_serde")]
    pub cov: DMatrix<f64>,
    /// Correlations; rows and columns of zero-variance variables are NaN
    /// off the diagonal.
    #[serde(with = "crate::report::matrix_serde")]
    pub corr: DMatrix<f64>,
    pub n: usize,
    pub divisor: Divisor,
    pub zero_variance: Vec<String>,
}

impl SampleMoments {
    /// Wraps a known covariance matrix.
    pub fn from_covariance(names: Vec<String>, cov: DMatrix<f64>, n: usize) -> Result<SampleMoments, DataError> {
        if !cov.is_square() || cov.nrows() != names.len() {
            return Err(DataError::BadCovariance);
        }
        for i in 0..cov.nrows() {
            for j in 0..i {
                if (cov[(i, j)] - cov[(j, i)]).abs() > 1e-10 * (1.0 + cov[(i, j)].abs()) {
                    return Err(DataError::BadCovariance);
                }
            }
        }
        let (corr, zero_variance) = correlation_from_covariance(&cov, &names);
        Ok(SampleMoments {
            names,
            cov,
            corr,
            n,
            divisor: Divisor::NMinusOne,
            zero_variance,
        })
    }

    pub fn p(&self) -> usize {
        self.names.len()
    }

    /// Restricts to the named variables, in the given order.
    pub fn select(&self, names: &[String]) -> Result<SampleMoments, DataError> {
        let idx: Vec<usize> = names
            .iter()
            .map(|n| {
                self.names
                    .iter()
                    .position(|m| m == n)
                    .ok_or_else(|| DataError::UnknownVariable(n.clone()))
            })
            .collect::<Result<_, _>>()?;
        let k = idx.len();
        let cov = DMatrix::from_fn(k, k, |i, j| self.cov[(idx[i], idx[j])]);
        let corr = DMatrix::from_fn(k, k, |i, j| self.corr[(idx[i], idx[j])]);
        Ok(SampleMoments {
            names: names.to_vec(),
            cov,
            corr,
            n: self.n,
            divisor: self.divisor,
            zero_variance: self.zero_variance.iter().filter(|z| names.contains(z)).cloned().collect(),
        })
    }
}

fn correlation_from_covariance(cov: &DMatrix<f64>, names: &[String]) -> (DMatrix<f64>, Vec<String>) {
    let p = cov.nrows();
    let sd: Vec<f64> = (0..p).map(|i| cov[(i, i)].max(0.0).sqrt()).collect();
    let scale = (0..p).map(|i| cov[(i, i)].abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let degenerate: Vec<bool> = (0..p).map(|i| cov[(i, i)] <= 1e-14 * scale).collect();
    let corr = DMatrix::from_fn(p, p, |i, j| {
        if i == j {
            1.0
        } else if degenerate[i] || degenerate[j] {
            f64::NAN
        } else {
            (cov[(i, j)] / (sd[i] * sd[j])).clamp(-1.0, 1.0)
        }
    });
    let zero_variance = (0..p).filter(|&i| degenerate[i]).map(|i| names[i].clone()).collect();
    (corr, zero_variance)
}

/// Covariance of numeric rows.
pub fn covariance_of_rows(rows: &[Vec<f64>], p: usize, divisor: Divisor) -> DMatrix<f64> {
    let n = rows.len();
    let mut mean = vec![0.0; p];
    for r in rows {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut cov = DMatrix::zeros(p, p);
    let mut centered = vec![0.0; p];
    for r in rows {
        for j in 0..p {
            centered[j] = r[j] - mean[j];
        }
        for i in 0..p {
            for j in 0..=i {
                cov[(i, j)] += centered[i] * centered[j];
            }
        }
    }
    let d = match divisor {
        Divisor::NMinusOne => (n - 1) as f64,
        Divisor::N => n as f64,
    };
    for i in 0..p {
        for j in 0..=i {
            let v = cov[(i, j)] / d;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    cov
}

/// Sample moments over the complete rows of `dataset`.
pub fn covariance(dataset: &Dataset, divisor: Divisor) -> Result<SampleMoments, DataError> {
    let rows = dataset.complete_rows();
    if rows.len() < 2 {
        return Err(DataError::InsufficientRows(rows.len()));
    }
    let cov = covariance_of_rows(&rows, dataset.n_cols(), divisor);
    let (corr, zero_variance) = correlation_from_covariance(&cov, &dataset.names);
    Ok(SampleMoments {
        names: dataset.names.clone(),
        cov,
        corr,
        n: rows.len(),
        divisor,
        zero_variance,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyRow {
    pub level: String,
    pub count: usize,
    pub percent: f64,
}

/// Counts of each distinct non-missing level of a column.
///
/// Levels are ordered numerically when every level parses as a number,
/// lexicographically otherwise.
pub fn frequency_table(dataset: &Dataset, variable: &str) -> Result<Vec<FrequencyRow>, DataError> {
    let j = dataset.column_index(variable)?;
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for i in 0..dataset.n_rows() {
        // Text levels are kept even though they are missing as numbers.
        let level = match &dataset.raw {
            Some(raw) if raw[i][j].is_empty() || raw[i][j] == "NA" => continue,
            Some(raw) => raw[i][j].clone(),
            None if dataset.missing[i][j] => continue,
            None => format!("{}", dataset.values[i][j]),
        };
        *counts.entry(level).or_default() += 1;
    }
    let total: usize = counts.values().sum();
    let mut rows: Vec<FrequencyRow> = counts
        .into_iter()
        .map(|(level, count)| FrequencyRow {
            percent: 100.0 * count as f64 / total as f64,
            level,
            count,
        })
        .collect();
    let numeric: Option<Vec<f64>> = rows.iter().map(|r| r.level.parse::<f64>().ok()).collect();
    if let Some(keys) = numeric {
        let mut paired: Vec<(f64, FrequencyRow)> = keys.into_iter().zip(rows).collect();
        paired.sort_by(|a, b| a.0.total_cmp(&b.0));
        rows = paired.into_iter().map(|(_, r)| r).collect();
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_by_two_table() {
        let ds = parse_table("a,b\n1,2\n3,4\n5,7\n", &LoadOptions::default()).unwrap();
        assert_eq!(ds.n_rows(), 3);
        assert_eq!(ds.n_cols(), 2);
    }

    #[test]
    fn blank_cell_sets_mask() {
        let ds = parse_table("a,b\n1,2\n3,\nNA,4\n", &LoadOptions::default()).unwrap();
        assert!(ds.missing[1][1]);
        assert!(ds.missing[2][0]);
        assert!(!ds.missing[0][0]);
        assert_eq!(ds.complete_rows().len(), 1);
    }

    #[test]
    fn header_only_is_empty() {
        assert!(matches!(parse_table("a,b\n", &LoadOptions::default()), Err(DataError::EmptyTable)));
    }

    #[test]
    fn ragged_rows_rejected() {
        assert!(matches!(
            parse_table("a,b\n1,2\n3\n", &LoadOptions::default()),
            Err(DataError::Ragged { row: 3, .. })
        ));
    }

    #[test]
    fn tab_delimiter() {
        let opts = LoadOptions {
            delimiter: b'\t',
            ..LoadOptions::default()
        };
        let ds = parse_table("a\tb\n1\t2\n3\t4\n", &opts).unwrap();
        assert_eq!(ds.values[1], vec![3.0, 4.0]);
    }

    #[test]
    fn identical_columns_correlate_perfectly() {
        let ds = Dataset::from_rows(
            vec!["a".into(), "b".into()],
            vec![vec![1.0, 1.0], vec![2.0, 2.0], vec![4.0, 4.0], vec![3.5, 3.5]],
        );
        let m = covariance(&ds, Divisor::NMinusOne).unwrap();
        assert!((m.corr[(0, 1)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_column_flagged() {
        let ds = Dataset::from_rows(
            vec!["a".into(), "b".into()],
            vec![vec![1.0, 5.0], vec![2.0, 5.0], vec![4.0, 5.0]],
        );
        let m = covariance(&ds, Divisor::NMinusOne).unwrap();
        assert_eq!(m.zero_variance, vec!["b".to_string()]);
        assert!(m.corr[(0, 1)].is_nan());
        assert_eq!(m.corr[(1, 1)], 1.0);
    }

    #[test]
    fn insufficient_rows() {
        let ds = Dataset::from_rows(vec!["a".into()], vec![vec![1.0]]);
        assert!(matches!(covariance(&ds, Divisor::N), Err(DataError::InsufficientRows(1))));
    }

    #[test]
    fn frequency_levels() {
        let ds = parse_table("g\n1\n2\n3\n3\n", &LoadOptions::default()).unwrap();
        let t = frequency_table(&ds, "g").unwrap();
        let pct: Vec<f64> = t.iter().map(|r| r.percent).collect();
        assert_eq!(pct, vec![25.0, 25.0, 50.0]);

        let single = parse_table("g\nx\nx\n", &LoadOptions::default()).unwrap();
        let t = frequency_table(&single, "g").unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t[0].percent, 100.0);
        assert!(matches!(frequency_table(&single, "h"), Err(DataError::UnknownVariable(_))));
    }

    #[test]
    fn gender_split_percentages() {
        let mut text = String::from("gender\n");
        for i in 0..519 {
            text.push_str(if i < 236 { "Male\n" } else { "Female\n" });
        }
        let ds = parse_table(&text, &LoadOptions::default()).unwrap();
        let t = frequency_table(&ds, "gender").unwrap();
        let male = t.iter().find(|r| r.level == "Male").unwrap();
        assert_eq!(male.count, 236);
        assert!((male.percent - 45.47).abs() < 0.005);
        assert_eq!(t.iter().map(|r| r.count).sum::<usize>(), 519);
    }
}
