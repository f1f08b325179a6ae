//! Tabular datasets, standardization and fold planning.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, WntkError};

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: DMatrix<f64>,
    /// Dense class indices in `[0, class_names.len())`.
    pub y: Vec<usize>,
    pub class_names: Vec<String>,
    pub feature_names: Vec<String>,
    pub provenance: String,
}

impl Dataset {
    pub fn new(
        x: DMatrix<f64>,
        y: Vec<usize>,
        class_names: Vec<String>,
        feature_names: Vec<String>,
        provenance: impl Into<String>,
    ) -> Result<Self> {
        if x.nrows() == 0 {
            return Err(WntkError::EmptyDataset);
        }
        if x.nrows() < 2 {
            return Err(WntkError::InvalidArgument("a dataset needs at least two rows".into()));
        }
        if y.len() != x.nrows() || feature_names.len() != x.ncols() {
            return Err(WntkError::ShapeMismatch(format!(
                "{} rows, {} labels, {} columns, {} feature names",
                x.nrows(),
                y.len(),
                x.ncols(),
                feature_names.len()
            )));
        }
        if let Some(bad) = y.iter().find(|&&c| c >= class_names.len()) {
            return Err(WntkError::InvalidArgument(format!("label {bad} has no class name")));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(WntkError::InvalidArgument("features must be finite".into()));
        }
        Ok(Self {
            x,
            y,
            class_names,
            feature_names,
            provenance: provenance.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.nrows() == 0
    }

    pub fn feature_count(&self) -> usize {
        self.x.ncols()
    }

    pub fn class_count(&self) -> usize {
        self.class_names.len()
    }

    /// Writes the dataset in the schema [`load_csv`] reads by default: a
    /// header row, features, then the class name in the last column.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<&str> = self.feature_names.iter().map(String::as_str).collect();
        header.push("class");
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut record: Vec<String> = self.x.row(i).iter().map(|v| format!("{v:?}")).collect();
            record.push(self.class_names[self.y[i]].clone());
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvSchema {
    /// Zero-based label column; `None` means the last column.
    pub label_column: Option<usize>,
    pub delimiter: u8,
    pub has_header: bool,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            label_column: None,
            delimiter: b',',
            has_header: true,
        }
    }
}

pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    read_csv(file, schema, path.display().to_string())
}

/// Parses a dataset. Parse errors report one-based file line and column.
pub fn read_csv<R: Read>(reader: R, schema: &CsvSchema, provenance: impl Into<String>) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter)
        .has_headers(schema.has_header)
        .from_reader(reader);
    let header: Option<Vec<String>> = if schema.has_header {
        Some(rdr.headers()?.iter().map(|s| s.trim().to_string()).collect())
    } else {
        None
    };
    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut classes: Vec<String> = Vec::new();
    let mut class_index: HashMap<String, usize> = HashMap::new();
    let mut width = None;
    let mut label_col = 0;
    let mut rows = 0;
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(rows + 1);
        let cols = record.len();
        if width.is_none() {
            if cols < 2 {
                return Err(WntkError::Parse {
                    row: line,
                    column: 1,
                    message: "need at least one feature and a label".into(),
                });
            }
            label_col = schema.label_column.unwrap_or(cols - 1);
            if label_col >= cols {
                return Err(WntkError::Parse {
                    row: line,
                    column: label_col + 1,
                    message: format!("label column {label_col} does not exist"),
                });
            }
            width = Some(cols);
        }
        for (j, field) in record.iter().enumerate() {
            let field = field.trim();
            if field.is_empty() {
                return Err(WntkError::Parse {
                    row: line,
                    column: j + 1,
                    message: "missing value".into(),
                });
            }
            if j == label_col {
                let next = classes.len();
                let c = *class_index.entry(field.to_string()).or_insert_with(|| {
                    classes.push(field.to_string());
                    next
                });
                labels.push(c);
            } else {
                let v: f64 = field.parse().map_err(|_| WntkError::Parse {
                    row: line,
                    column: j + 1,
                    message: format!("'{field}' is not a number"),
                })?;
                if !v.is_finite() {
                    return Err(WntkError::Parse {
                        row: line,
                        column: j + 1,
                        message: format!("'{field}' is not finite"),
                    });
                }
                values.push(v);
            }
        }
        rows += 1;
    }
    let Some(width) = width else {
        return Err(WntkError::EmptyDataset);
    };
    let features = width - 1;
    let names = match header {
        Some(h) => h
            .into_iter()
            .enumerate()
            .filter(|(j, _)| *j != label_col)
            .map(|(_, s)| s)
            .collect(),
        None => (0..features).map(|j| format!("x{j}")).collect(),
    };
    Dataset::new(
        DMatrix::from_row_slice(rows, features, &values),
        labels,
        classes,
        names,
        provenance,
    )
}

/// Per-feature affine standardization fitted on training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    /// Features whose training spread vanished and were given divisor 1.
    pub constant: Vec<bool>,
}

impl Standardizer {
    pub fn fit(x: &DMatrix<f64>, train_rows: &[usize]) -> Result<Self> {
        if train_rows.is_empty() {
            return Err(WntkError::EmptyTrainSplit);
        }
        if let Some(bad) = train_rows.iter().find(|&&r| r >= x.nrows()) {
            return Err(WntkError::InvalidArgument(format!("row {bad} out of range")));
        }
        let n = train_rows.len() as f64;
        let d = x.ncols();
        let mut mean = vec![0.0; d];
        let mut scale = vec![1.0; d];
        let mut constant = vec![false; d];
        for j in 0..d {
            let first = x[(train_rows[0], j)];
            if train_rows.iter().all(|&r| x[(r, j)] == first) {
                mean[j] = first;
                constant[j] = true;
                continue;
            }
            let m = train_rows.iter().map(|&r| x[(r, j)]).sum::<f64>() / n;
            let var = train_rows.iter().map(|&r| (x[(r, j)] - m).powi(2)).sum::<f64>() / n;
            mean[j] = m;
            let sd = var.sqrt();
            if sd > 1e-12 * (1.0 + m.abs()) {
                scale[j] = sd;
            } else {
                constant[j] = true;
            }
        }
        Ok(Self { mean, scale, constant })
    }

    fn check(&self, x: &DMatrix<f64>) -> Result<()> {
        if x.ncols() != self.mean.len() {
            return Err(WntkError::ShapeMismatch(format!(
                "{} columns, standardizer fitted on {}",
                x.ncols(),
                self.mean.len()
            )));
        }
        Ok(())
    }

    pub fn transform(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check(x)?;
        Ok(DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| (x[(i, j)] - self.mean[j]) / self.scale[j]))
    }

    pub fn inverse_transform(&self, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check(z)?;
        Ok(DMatrix::from_fn(z.nrows(), z.ncols(), |i, j| z[(i, j)] * self.scale[j] + self.mean[j]))
    }
}

/// Fits on `train_rows` and transforms every row of `x`.
pub fn standardize_fit_transform(x: &DMatrix<f64>, train_rows: &[usize]) -> Result<(Standardizer, DMatrix<f64>)> {
    let s = Standardizer::fit(x, train_rows)?;
    let z = s.transform(x)?;
    Ok((s, z))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub folds: Vec<Vec<usize>>,
    pub seed: u64,
}

impl FoldPlan {
    pub fn len(&self) -> usize {
        self.folds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.folds.is_empty()
    }

    /// Rows outside fold `k`, in plan order.
    pub fn train_indices(&self, k: usize) -> Vec<usize> {
        self.folds
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != k)
            .flat_map(|(_, f)| f.iter().copied())
            .collect()
    }

    pub fn test_indices(&self, k: usize) -> &[usize] {
        &self.folds[k]
    }
}

/// Seeded shuffle of `0..n` cut into `k` contiguous folds; the first `n mod k`
/// folds get one extra row.
pub fn kfold_split(n: usize, k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 || k > n {
        return Err(WntkError::InvalidArgument(format!("fold count must satisfy 2 <= k <= n, got k={k}, n={n}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let base = n / k;
    let extra = n % k;
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let size = base + usize::from(f < extra);
        folds.push(order[start..start + size].to_vec());
        start += size;
    }
    Ok(FoldPlan { folds, seed })
}

/// Shuffles `indices` and takes the first `round(r·n)` as validation rows.
pub fn train_val_split(indices: &[usize], r: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(r > 0.0 && r < 1.0) {
        return Err(WntkError::InvalidArgument(format!("validation ratio must lie in (0, 1), got {r}")));
    }
    let n = indices.len();
    let val = (r * n as f64).round() as usize;
    if val == 0 || val >= n {
        return Err(WntkError::InvalidArgument(format!(
            "ratio {r} on {n} rows leaves an empty split"
        )));
    }
    let mut order = indices.to_vec();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let train = order.split_off(val);
    Ok((train, order))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_header_and_labels_in_first_appearance_order() {
        let text = "a,b,label\n1,2,dog\n3,4,cat\n5,6,dog\n";
        let d = read_csv(text.as_bytes(), &CsvSchema::default(), "inline").unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!(d.feature_count(), 2);
        assert_eq!(d.y, vec![0, 1, 0]);
        assert_eq!(d.class_names, vec!["dog", "cat"]);
        assert_eq!(d.feature_names, vec!["a", "b"]);
    }

    #[test]
    fn missing_cell_names_row_and_column() {
        let text = "a,b,label\n1,2,x\n3,,y\n";
        match read_csv(text.as_bytes(), &CsvSchema::default(), "inline") {
            Err(WntkError::Parse { row, column, .. }) => assert_eq!((row, column), (3, 2)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_numeric_feature_rejected() {
        let text = "a,label\nfoo,x\n1,y\n";
        assert!(matches!(
            read_csv(text.as_bytes(), &CsvSchema::default(), "inline"),
            Err(WntkError::Parse { column: 1, .. })
        ));
    }

    #[test]
    fn label_column_first_without_header() {
        let schema = CsvSchema {
            label_column: Some(0),
            delimiter: b';',
            has_header: false,
        };
        let d = read_csv("b;1;2\na;3;4\nb;1;2\n".as_bytes(), &schema, "inline").unwrap();
        assert_eq!(d.y, vec![0, 1, 0]);
        assert_eq!(d.x.row(2), d.x.row(0));
    }

    #[test]
    fn empty_file() {
        assert!(matches!(
            read_csv("a,label\n".as_bytes(), &CsvSchema::default(), "inline"),
            Err(WntkError::EmptyDataset)
        ));
    }

    #[test]
    fn csv_round_trip() {
        let text = "a,b,class\n0.1,2,dog\n3,-4.5,cat\n";
        let d = read_csv(text.as_bytes(), &CsvSchema::default(), "inline").unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let back = read_csv(buf.as_slice(), &CsvSchema::default(), "inline").unwrap();
        assert_eq!(back.x, d.x);
        assert_eq!(back.y, d.y);
    }

    #[test]
    fn fold_sizes() {
        let p = kfold_split(11, 5, 3).unwrap();
        let sizes: Vec<usize> = p.folds.iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![3, 2, 2, 2, 2]);
        assert!(kfold_split(4, 5, 0).is_err());
        assert!(kfold_split(4, 1, 0).is_err());
    }

    #[test]
    fn split_sizes() {
        let idx: Vec<usize> = (0..10).collect();
        let (t, v) = train_val_split(&idx, 0.2, 1).unwrap();
        assert_eq!((t.len(), v.len()), (8, 2));
        let (t, v) = train_val_split(&idx[..4], 0.5, 1).unwrap();
        assert_eq!((t.len(), v.len()), (2, 2));
        assert!(train_val_split(&idx[..2], 0.1, 1).is_err());
    }

    #[test]
    fn single_row_standardizes_to_zero() {
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 5.0, 3.0, 7.0]);
        let (s, z) = standardize_fit_transform(&x, &[0]).unwrap();
        assert_eq!(z.row(0).iter().copied().collect::<Vec<_>>(), vec![0.0, 0.0]);
        assert!(s.constant.iter().all(|&c| c));
        assert!(matches!(Standardizer::fit(&x, &[]), Err(WntkError::EmptyTrainSplit)));
    }
}
