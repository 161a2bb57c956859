//! Dataset schema, CSV ingestion, train/validation splitting and result
//! persistence.
//!
//! Dataset CSV layout: a header row with `x_0 .. x_{d-1}`, `a`, `y`, and any
//! of the optional oracle columns `tau`, `mu`, `y0`, `y1`. Column order in the
//! file is free; values are written in shortest round-trip decimal form.

use std::fs::{File, OpenOptions};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Matrix;

/// Observational data with optional oracle columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    pub x: Matrix<T>,
    pub a: Vec<u8>,
    pub y: Vec<T>,
    /// true CATE (synthetic) or noisy `y1 - y0` stand-in
    pub tau: Option<Vec<T>>,
    /// true propensity
    pub mu: Option<Vec<T>>,
    pub y0: Option<Vec<T>>,
    pub y1: Option<Vec<T>>,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(x: Matrix<T>, a: Vec<u8>, y: Vec<T>) -> Result<Self> {
        let ds = Dataset {
            x,
            a,
            y,
            tau: None,
            mu: None,
            y0: None,
            y1: None,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.x.rows();
        if self.a.len() != n || self.y.len() != n {
            return Err(Error::data(format!(
                "row counts disagree: x={n}, a={}, y={}",
                self.a.len(),
                self.y.len()
            )));
        }
        for (name, col) in self.oracle_columns() {
            if let Some(c) = col {
                if c.len() != n {
                    return Err(Error::data(format!("column {name} has {} rows, expected {n}", c.len())));
                }
            }
        }
        if let Some(i) = self.a.iter().position(|&a| a > 1) {
            return Err(Error::Row {
                row: i,
                msg: format!("action must be 0 or 1, got {}", self.a[i]),
            });
        }
        if !self.x.is_finite() || self.y.iter().any(|v| !v.is_finite()) {
            return Err(Error::data("non-finite covariate or outcome"));
        }
        Ok(())
    }

    fn oracle_columns(&self) -> [(&'static str, Option<&Vec<T>>); 4] {
        [
            ("tau", self.tau.as_ref()),
            ("mu", self.mu.as_ref()),
            ("y0", self.y0.as_ref()),
            ("y1", self.y1.as_ref()),
        ]
    }

    pub fn n(&self) -> usize {
        self.x.rows()
    }

    pub fn d(&self) -> usize {
        self.x.cols()
    }

    pub fn has_oracle(&self) -> bool {
        self.oracle_columns().iter().any(|(_, c)| c.is_some())
    }

    /// Copy without any oracle column.
    pub fn without_oracle(&self) -> Self {
        Dataset {
            x: self.x.clone(),
            a: self.a.clone(),
            y: self.y.clone(),
            tau: None,
            mu: None,
            y0: None,
            y1: None,
        }
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        let pick = |v: &Vec<T>| idx.iter().map(|&i| v[i]).collect::<Vec<T>>();
        Dataset {
            x: self.x.select_rows(idx),
            a: idx.iter().map(|&i| self.a[i]).collect(),
            y: pick(&self.y),
            tau: self.tau.as_ref().map(pick),
            mu: self.mu.as_ref().map(pick),
            y0: self.y0.as_ref().map(pick),
            y1: self.y1.as_ref().map(pick),
        }
    }

    /// Row indices with `a == arm`.
    pub fn arm_indices(&self, arm: u8) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.a[i] == arm).collect()
    }

    pub fn treated_fraction(&self) -> f64 {
        self.a.iter().filter(|&&a| a == 1).count() as f64 / self.n().max(1) as f64
    }

    /// Actions as a `n x 1` column of 0/1 scalars.
    pub fn a_column(&self) -> Matrix<T> {
        Matrix::from_fn(self.n(), 1, |i, _| if self.a[i] == 1 { T::one() } else { T::zero() })
    }

    pub fn y_column(&self) -> Matrix<T> {
        Matrix::column(&self.y)
    }

    /// Fails unless both actions occur.
    pub fn require_both_arms(&self) -> Result<()> {
        let treated = self.a.iter().filter(|&&a| a == 1).count();
        if treated == 0 || treated == self.n() {
            let missing = if treated == 0 { 1 } else { 0 };
            return Err(Error::data(format!("no rows with a={missing}")));
        }
        Ok(())
    }
}

/// Which optional columns [`load_csv_dataset`] must find.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaFlags {
    pub require_tau: bool,
    pub require_mu: bool,
    pub require_potential_outcomes: bool,
}

fn parse_value<T: Scalar>(s: &str, row: usize, col: &str) -> Result<T> {
    s.trim().parse::<T>().map_err(|_| Error::Row {
        row,
        msg: format!("column {col}: cannot parse `{s}` as a float"),
    })
}

fn parse_action(s: &str, row: usize) -> Result<u8> {
    match s.trim() {
        "0" | "0.0" => Ok(0),
        "1" | "1.0" => Ok(1),
        other => Err(Error::Row {
            row,
            msg: format!("action must be 0 or 1, got `{other}`"),
        }),
    }
}

/// Reads a dataset CSV. Row indices in errors are 0-based data rows.
pub fn load_csv_dataset<T: Scalar>(path: impl AsRef<Path>, flags: SchemaFlags) -> Result<Dataset<T>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(path.as_ref())?;
    let headers = rdr.headers()?.clone();
    let find = |name: &str| headers.iter().position(|h| h.trim() == name);

    let mut x_cols = Vec::new();
    while let Some(c) = find(&format!("x_{}", x_cols.len())) {
        x_cols.push(c);
    }
    if x_cols.is_empty() {
        return Err(Error::MissingColumn("x_0".into()));
    }
    let a_col = find("a").ok_or_else(|| Error::MissingColumn("a".into()))?;
    let y_col = find("y").ok_or_else(|| Error::MissingColumn("y".into()))?;
    let opt = ["tau", "mu", "y0", "y1"].map(find);
    let required = [
        flags.require_tau,
        flags.require_mu,
        flags.require_potential_outcomes,
        flags.require_potential_outcomes,
    ];
    for (k, name) in ["tau", "mu", "y0", "y1"].iter().enumerate() {
        if required[k] && opt[k].is_none() {
            return Err(Error::MissingColumn((*name).into()));
        }
    }

    let d = x_cols.len();
    let mut xs = Vec::new();
    let mut a = Vec::new();
    let mut y = Vec::new();
    let mut extra: [Option<Vec<T>>; 4] = opt.map(|c| c.map(|_| Vec::new()));
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let field = |c: usize| rec.get(c).unwrap_or("");
        for (j, &c) in x_cols.iter().enumerate() {
            xs.push(parse_value::<T>(field(c), row, &format!("x_{j}"))?);
        }
        a.push(parse_action(field(a_col), row)?);
        y.push(parse_value::<T>(field(y_col), row, "y")?);
        for (k, name) in ["tau", "mu", "y0", "y1"].iter().enumerate() {
            if let (Some(c), Some(col)) = (opt[k], extra[k].as_mut()) {
                col.push(parse_value::<T>(field(c), row, name)?);
            }
        }
    }
    let n = a.len();
    if n == 0 {
        return Err(Error::data("no data rows"));
    }
    let [tau, mu, y0, y1] = extra;
    let ds = Dataset {
        x: Matrix::from_vec(n, d, xs)?,
        a,
        y,
        tau,
        mu,
        y0,
        y1,
    };
    ds.validate()?;
    Ok(ds)
}

/// Writes a dataset CSV including whichever oracle columns are present.
pub fn write_csv_dataset<T: Scalar>(ds: &Dataset<T>, path: impl AsRef<Path>) -> Result<()> {
    ds.validate()?;
    let mut w = csv::Writer::from_path(path.as_ref())?;
    let mut header: Vec<String> = (0..ds.d()).map(|j| format!("x_{j}")).collect();
    header.push("a".into());
    header.push("y".into());
    let oracle: Vec<(&str, &Vec<T>)> = ds
        .oracle_columns()
        .into_iter()
        .filter_map(|(n, c)| c.map(|c| (n, c)))
        .collect();
    header.extend(oracle.iter().map(|(n, _)| n.to_string()));
    w.write_record(&header)?;
    for i in 0..ds.n() {
        let mut rec: Vec<String> = ds.x.row(i).iter().map(|v| v.to_string()).collect();
        rec.push(ds.a[i].to_string());
        rec.push(ds.y[i].to_string());
        rec.extend(oracle.iter().map(|(_, c)| c[i].to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub val_ratio: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            val_ratio: 0.3,
            seed: 0,
        }
    }
}

/// Seeded shuffle-split into `(train_indices, val_indices)`.
pub fn split_indices(n: usize, spec: SplitSpec) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(spec.val_ratio > 0.0 && spec.val_ratio < 1.0) {
        return Err(Error::invalid(format!(
            "validation ratio {} not in (0,1)",
            spec.val_ratio
        )));
    }
    let n_val = (spec.val_ratio * n as f64).round() as usize;
    if n < 2 || n_val == 0 || n_val >= n {
        return Err(Error::data(format!(
            "{n} rows cannot be split with ratio {}",
            spec.val_ratio
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let val = idx.split_off(n - n_val);
    Ok((idx, val))
}

pub fn split_train_val<T: Scalar>(ds: &Dataset<T>, spec: SplitSpec) -> Result<(Dataset<T>, Dataset<T>)> {
    let (tr, va) = split_indices(ds.n(), spec)?;
    Ok((ds.subset(&tr), ds.subset(&va)))
}

/// One metric observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub method: String,
    pub dataset: String,
    pub n: usize,
    pub seed: u64,
    pub metric: String,
    pub value: f64,
    /// hyperparameter echo, compact JSON
    pub params: String,
}

/// Appends rows to a results CSV, writing the header only for a new or
/// empty file. An empty slice is rejected before the file is touched.
pub fn write_results(rows: &[ResultRow], path: impl AsRef<Path>) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::invalid("no result rows to write"));
    }
    for r in rows {
        if !r.value.is_finite() {
            return Err(Error::invalid(format!(
                "non-finite {} for {}/{}",
                r.metric, r.method, r.dataset
            )));
        }
    }
    let path = path.as_ref();
    let fresh = std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let file = OpenOptions::new().create(true).append(true).open(path)?;
    let mut w = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Truncates `path` and writes `rows` with a header.
pub fn write_results_fresh(rows: &[ResultRow], path: impl AsRef<Path>) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::invalid("no result rows to write"));
    }
    File::create(path.as_ref())?;
    write_results(rows, path)
}

pub fn read_results(path: impl AsRef<Path>) -> Result<Vec<ResultRow>> {
    let mut rdr = csv::Reader::from_path(path.as_ref())?;
    let mut rows = Vec::new();
    for r in rdr.deserialize() {
        rows.push(r?);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_file(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.path().join(name);
        std::fs::File::create(&p).unwrap().write_all(body.as_bytes()).unwrap();
        p
    }

    #[test]
    fn loads_three_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_file(&dir, "d.csv", "x_0,x_1,a,y\n0.5,1,1,2.0\n-1,2,0,0.3\n3,4,1,-1e-3\n");
        let ds: Dataset<f64> = load_csv_dataset(&p, SchemaFlags::default()).unwrap();
        assert_eq!(ds.n(), 3);
        assert_eq!(ds.d(), 2);
        assert_eq!(ds.a, vec![1, 0, 1]);
        assert_eq!(ds.y[2], -1e-3);
        assert!(!ds.has_oracle());
    }

    #[test]
    fn rejects_non_binary_action_with_row() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_file(&dir, "d.csv", "x_0,a,y\n0.5,1,2\n0.1,2,1\n");
        match load_csv_dataset::<f64>(&p, SchemaFlags::default()) {
            Err(Error::Row { row, .. }) => assert_eq!(row, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_missing_and_unparseable() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_file(&dir, "d.csv", "x_0,y\n0.5,2\n");
        assert!(
            matches!(load_csv_dataset::<f64>(&p, SchemaFlags::default()), Err(Error::MissingColumn(c)) if c == "a")
        );
        let p = write_file(&dir, "e.csv", "x_0,a,y\n0.5,1,abc\n");
        assert!(matches!(
            load_csv_dataset::<f64>(&p, SchemaFlags::default()),
            Err(Error::Row { row: 0, .. })
        ));
        let p = write_file(&dir, "f.csv", "x_0,a,y\n0.5,1,1\n");
        let flags = SchemaFlags {
            require_mu: true,
            ..Default::default()
        };
        assert!(matches!(load_csv_dataset::<f64>(&p, flags), Err(Error::MissingColumn(c)) if c == "mu"));
    }

    #[test]
    fn split_sizes() {
        let (tr, va) = split_indices(
            10,
            SplitSpec {
                val_ratio: 0.3,
                seed: 1,
            },
        )
        .unwrap();
        assert_eq!((tr.len(), va.len()), (7, 3));
        let (tr2, va2) = split_indices(
            10,
            SplitSpec {
                val_ratio: 0.3,
                seed: 1,
            },
        )
        .unwrap();
        assert_eq!((tr, va), (tr2, va2));
        let (tr, va) = split_indices(
            4,
            SplitSpec {
                val_ratio: 0.5,
                seed: 9,
            },
        )
        .unwrap();
        let mut all: Vec<usize> = tr.iter().chain(&va).copied().collect();
        all.sort();
        assert_eq!((tr.len(), va.len()), (2, 2));
        assert_eq!(all, vec![0, 1, 2, 3]);
        assert!(split_indices(1, SplitSpec::default()).is_err());
        assert!(split_indices(
            2,
            SplitSpec {
                val_ratio: 0.1,
                seed: 0
            }
        )
        .is_err());
    }

    fn row(v: f64) -> ResultRow {
        ResultRow {
            method: "tnet".into(),
            dataset: "an".into(),
            n: 500,
            seed: 3,
            metric: "pehe_mse".into(),
            value: v,
            params: r#"{"beta":100}"#.into(),
        }
    }

    #[test]
    fn results_roundtrip_and_append() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        write_results(&[row(0.1 + 0.2)], &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(text.starts_with("method,dataset,n,seed,metric,value,params"));
        write_results(&[row(1.5)], &p).unwrap();
        let back = read_results(&p).unwrap();
        assert_eq!(back, vec![row(0.1 + 0.2), row(1.5)]);
        write_results_fresh(&[row(2.0)], &p).unwrap();
        assert_eq!(read_results(&p).unwrap(), vec![row(2.0)]);
    }

    #[test]
    fn empty_results_touch_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("none.csv");
        assert!(write_results(&[], &p).is_err());
        assert!(!p.exists());
    }
}
