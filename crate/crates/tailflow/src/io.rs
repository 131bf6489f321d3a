//! CSV persistence for sample matrices.
//!
//! A sample is stored as a plain numeric CSV with a header row `x0,x1,…`,
//! next to a JSON sidecar `<file>.meta.json` that carries the margin labels,
//! the recipe fingerprint and the seed. Numbers are written in the shortest
//! form that parses back to the same `f64`, so a save/load cycle is exact.
//!
//! Ingestion performs no normalization; external files load with every
//! label set to `other`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tailflow_core::datagen::{MarginLabel, SampleMatrix};
use tailflow_core::Matrix;

use crate::{Error, Result};

/// Contents of the metadata sidecar.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub labels: Vec<String>,
    /// Recipe fingerprint as 16 hex digits (all zeros for external data).
    pub fingerprint: String,
    pub seed: Option<u64>,
}

/// Path of the metadata sidecar belonging to `path`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".meta.json");
    PathBuf::from(name)
}

/// Read a rectangular numeric CSV. Every cell must parse as a finite number;
/// the first offending cell is reported by zero-based data row and column.
pub fn load_csv(path: impl AsRef<Path>, has_header: bool) -> Result<SampleMatrix> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let data = parse_csv(path, &text, has_header)?;
    Ok(SampleMatrix::unlabeled(data))
}

fn parse_csv(path: &Path, text: &str, has_header: bool) -> Result<Matrix> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut width = None;
    let mut values = Vec::new();
    let mut rows = 0;
    for record in reader.records() {
        let record = record.map_err(|e| Error::format(path, e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line());
        match width {
            None => width = Some(record.len()),
            Some(w) if w != record.len() => {
                return Err(Error::Ragged { path: path.into(), line, expected: w, got: record.len() })
            }
            Some(_) => {}
        }
        for (column, cell) in record.iter().enumerate() {
            match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => values.push(v),
                _ => {
                    return Err(Error::BadCell { path: path.into(), row: rows, column, value: cell.to_string() })
                }
            }
        }
        rows += 1;
    }
    match width {
        Some(w) if w > 0 => Ok(Matrix::from_vec(rows, w, values)?),
        _ => Err(Error::EmptyFile { path: path.into() }),
    }
}

/// Write `data` as CSV with a `x0,x1,…` header.
pub fn write_csv(path: impl AsRef<Path>, data: &Matrix) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::with_capacity(data.rows() * data.cols() * 20);
    let header: Vec<String> = (0..data.cols()).map(|j| format!("x{j}")).collect();
    out.push_str(&header.join(","));
    out.push('\n');
    for i in 0..data.rows() {
        let row: Vec<String> = data.row(i).iter().map(|v| format!("{v:?}")).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    write_file(path, out.as_bytes())
}

/// Write the CSV and its metadata sidecar.
pub fn save_sample(path: impl AsRef<Path>, sample: &SampleMatrix, seed: Option<u64>) -> Result<()> {
    let path = path.as_ref();
    write_csv(path, &sample.data)?;
    let meta = SampleMeta {
        labels: sample.labels.iter().map(|l| l.name().to_string()).collect(),
        fingerprint: format!("{:016x}", sample.fingerprint),
        seed,
    };
    let json = serde_json::to_string_pretty(&meta).expect("metadata serializes");
    write_file(&sidecar_path(path), json.as_bytes())
}

/// Read a CSV written by [`save_sample`] (header row expected). Labels come
/// from the sidecar when it exists; otherwise every label is `other`.
pub fn load_sample(path: impl AsRef<Path>) -> Result<(SampleMatrix, Option<SampleMeta>)> {
    let path = path.as_ref();
    let mut sample = load_csv(path, true)?;
    let side = sidecar_path(path);
    if !side.exists() {
        return Ok((sample, None));
    }
    let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let meta: SampleMeta = serde_json::from_str(&text).map_err(|e| Error::format(&side, e.to_string()))?;
    if meta.labels.len() != sample.d() {
        return Err(Error::format(
            &side,
            format!("{} labels for {} columns", meta.labels.len(), sample.d()),
        ));
    }
    sample.labels = meta
        .labels
        .iter()
        .map(|l| MarginLabel::parse(l).ok_or_else(|| Error::format(&side, format!("unknown label `{l}`"))))
        .collect::<Result<_>>()?;
    sample.fingerprint =
        u64::from_str_radix(&meta.fingerprint, 16).map_err(|e| Error::format(&side, e.to_string()))?;
    Ok((sample, Some(meta)))
}

/// Write through a temporary file and rename, so readers never see a
/// partially written file.
pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn file(dir: &tempfile::TempDir, name: &str, text: &str) -> PathBuf {
        let p = dir.path().join(name);
        fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn reads_numeric_files() {
        let dir = tempfile::tempdir().unwrap();
        let s = load_csv(file(&dir, "a.csv", "1,2\n3.5,-4\n1e3, 6\n"), false).unwrap();
        assert_eq!((s.n(), s.d()), (3, 2));
        assert_eq!(s.data.row(2), &[1000.0, 6.0]);
        assert!(s.labels.iter().all(|&l| l == MarginLabel::Other));
        let h = load_csv(file(&dir, "b.csv", "a,b\n1,2\n3,4\n"), true).unwrap();
        assert_eq!((h.n(), h.d()), (2, 2));
        assert!(load_csv(file(&dir, "c.csv", "a,b\n1,2\n"), false).is_err());
    }

    #[test]
    fn rejects_bad_cells_ragged_rows_and_empty_files() {
        let dir = tempfile::tempdir().unwrap();
        match load_csv(file(&dir, "nan.csv", "1,2\n3,NaN\n"), false) {
            Err(Error::BadCell { row, column, value, .. }) => assert_eq!((row, column, value.as_str()), (1, 1, "NaN")),
            other => panic!("{other:?}"),
        }
        let msg = load_csv(file(&dir, "word.csv", "x,y\n1,2\nfoo,3\n"), true).unwrap_err().to_string();
        assert!(msg.contains("row 1, column 0"), "{msg}");
        assert!(matches!(load_csv(file(&dir, "r.csv", "1,2\n3\n"), false), Err(Error::Ragged { .. })));
        assert!(matches!(load_csv(file(&dir, "e.csv", ""), false), Err(Error::EmptyFile { .. })));
        assert!(matches!(load_csv(file(&dir, "h.csv", "a,b\n"), true), Err(Error::EmptyFile { .. })));
    }

    #[test]
    fn save_and_load_round_trip_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let data = Matrix::from_fn(7, 3, |i, j| (i as f64 + 0.1) * 10f64.powi(j as i32 * 7 - 7) / 3.0 - 1e-300 * j as f64);
        let labels = vec![MarginLabel::Pareto, MarginLabel::Gaussian, MarginLabel::Other];
        let sample = SampleMatrix::new(data, labels, 0xdead_beef_0123_4567).unwrap();
        let p = dir.path().join("nested/s.csv");
        save_sample(&p, &sample, Some(9)).unwrap();
        let (back, meta) = load_sample(&p).unwrap();
        assert_eq!(back, sample);
        assert_eq!(meta.unwrap().seed, Some(9));
        fs::remove_file(sidecar_path(&p)).unwrap();
        let (bare, meta) = load_sample(&p).unwrap();
        assert!(meta.is_none());
        assert_eq!(bare.data, sample.data);
        assert_eq!(bare.fingerprint, 0);
    }
}
