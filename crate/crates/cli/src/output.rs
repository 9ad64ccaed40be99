//! File writers. Line-oriented outputs are flushed after every record so a
//! crashed run leaves a usable prefix.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::CliError;

pub fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::io(path, e))
}

/// One JSON object per line.
pub struct JsonlWriter {
    path: PathBuf,
    inner: BufWriter<File>,
}

impl JsonlWriter {
    pub fn create(path: &Path) -> Result<Self, CliError> {
        Ok(Self {
            path: path.to_path_buf(),
            inner: create(path)?,
        })
    }

    pub fn write<T: Serialize>(&mut self, record: &T) -> Result<(), CliError> {
        serde_json::to_writer(&mut self.inner, record)
            .map_err(|e| CliError::io(&self.path, e.into()))?;
        self.inner
            .write_all(b"\n")
            .map_err(|e| CliError::io(&self.path, e))?;
        self.inner.flush().map_err(|e| CliError::io(&self.path, e))
    }
}

/// Headerless numeric CSV, one row per line, in shortest round-trip form.
pub fn write_csv<R: AsRef<[f64]>>(
    path: &Path,
    rows: impl IntoIterator<Item = R>,
) -> Result<(), CliError> {
    let mut w = create(path)?;
    for row in rows {
        let line: Vec<String> = row.as_ref().iter().map(|v| format!("{v:?}")).collect();
        writeln!(w, "{}", line.join(",")).map_err(|e| CliError::io(path, e))?;
        w.flush().map_err(|e| CliError::io(path, e))?;
    }
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| CliError::io(path, e.into()))?;
    w.write_all(b"\n")
        .and_then(|_| w.flush())
        .map_err(|e| CliError::io(path, e))
}

/// `dir/stem.ext`, or `dir/stem-seed{seed}.ext` when several seeds share a name.
pub fn seeded(path: &Path, seed: u64, multi: bool) -> PathBuf {
    if !multi {
        return path.to_path_buf();
    }
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let name = match path.extension() {
        Some(ext) => format!("{stem}-seed{seed}.{}", ext.to_string_lossy()),
        None => format!("{stem}-seed{seed}"),
    };
    path.with_file_name(name)
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Population statistics; `NaN` entries are ignored.
    pub fn of(values: &[f64]) -> Option<Self> {
        let xs: Vec<f64> = values.iter().copied().filter(|v| !v.is_nan()).collect();
        if xs.is_empty() {
            return None;
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let std = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
        Some(Self { mean, std })
    }
}

impl std::fmt::Display for MeanStd {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.3} ± {:.3}", self.mean, self.std)
    }
}

pub fn median(values: &[f64]) -> Option<f64> {
    let mut xs: Vec<f64> = values.iter().copied().filter(|v| !v.is_nan()).collect();
    if xs.is_empty() {
        return None;
    }
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    Some(if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_names() {
        assert_eq!(
            seeded(Path::new("out/lat.csv"), 3, true),
            PathBuf::from("out/lat-seed3.csv")
        );
        assert_eq!(
            seeded(Path::new("out/lat.csv"), 3, false),
            PathBuf::from("out/lat.csv")
        );
        assert_eq!(
            seeded(Path::new("lat"), 0, true),
            PathBuf::from("lat-seed0")
        );
    }

    #[test]
    fn summary_statistics() {
        let s = MeanStd::of(&[1.0, 3.0, f64::NAN]).unwrap();
        assert_eq!((s.mean, s.std), (2.0, 1.0));
        assert!(MeanStd::of(&[]).is_none());
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
    }

    #[test]
    fn csv_rows_are_headerless() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a/b.csv");
        write_csv(&path, [[1.0, 0.5], [-2.0, 1e-20]]).unwrap();
        assert_eq!(
            std::fs::read_to_string(&path).unwrap(),
            "1.0,0.5\n-2.0,1e-20\n"
        );
    }
}
