//! CSV matrices and `key = value` config files.
//!
//! CSV: comma separated, `.` decimal point, no header unless the caller asks
//! to skip one line. Numbers are written with 17 significant digits so that
//! every `f64` round-trips exactly. Blank lines are ignored.
//!
//! Config files: one `key = value` per line, `#` starts a comment. Keys are
//! unique. Relative paths are resolved against the config file's directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::numerics::Mat;

/// 17 significant digits in scientific notation.
pub fn format_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn parse_csv_matrix(text: &str, skip_header: bool) -> Result<Mat> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(skip_header)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse(e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line());
        let row = record
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|_| Error::Parse(format!("line {line}: cannot parse '{f}'")))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Mat::from_rows(&rows)
}

pub fn read_csv_matrix(path: &Path, skip_header: bool) -> Result<Mat> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_csv_matrix(&text, skip_header)
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

/// Reads a single vector: either one row or one column.
pub fn read_csv_vector(path: &Path, skip_header: bool) -> Result<Vec<f64>> {
    let m = read_csv_matrix(path, skip_header)?;
    if m.rows() == 1 || m.cols() == 1 {
        Ok(m.data().to_vec())
    } else {
        Err(Error::Shape(format!(
            "{}: expected a vector, found a {}x{} matrix",
            path.display(),
            m.rows(),
            m.cols()
        )))
    }
}

pub fn format_rows<'a, I, R>(rows: I) -> String
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = &'a f64>,
{
    let mut writer = csv::WriterBuilder::new()
        .flexible(true)
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    for row in rows {
        writer
            .write_record(row.into_iter().map(|&x| format_f64(x)))
            .expect("writing to memory cannot fail");
    }
    let bytes = writer.into_inner().expect("writing to memory cannot fail");
    String::from_utf8(bytes).expect("formatted numbers are ASCII")
}

pub fn format_csv_matrix(m: &Mat) -> String {
    format_rows((0..m.rows()).map(|i| m.row(i)))
}

pub fn write_csv_matrix(path: &Path, m: &Mat) -> Result<()> {
    fs::write(path, format_csv_matrix(m)).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

/// Parsed `key = value` file.
#[derive(Debug, Clone, PartialEq)]
pub struct KeyValues {
    entries: BTreeMap<String, String>,
    base_dir: PathBuf,
}

impl KeyValues {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Parse(format!("line {}: expected key = value", lineno + 1))
            })?;
            let k = k.trim().to_string();
            if entries.insert(k.clone(), v.trim().to_string()).is_some() {
                return Err(Error::Parse(format!("line {}: duplicate key '{k}'", lineno + 1)));
            }
        }
        Ok(KeyValues {
            entries,
            base_dir: base_dir.to_path_buf(),
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        let dir = path.parent().unwrap_or_else(|| Path::new("."));
        KeyValues::parse(&text, dir)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| Error::Parse(format!("missing key '{key}'")))
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn f64_or(&self, key: &str, default: f64) -> Result<f64> {
        self.get(key).map_or(Ok(default), |v| {
            v.parse()
                .map_err(|_| Error::Parse(format!("key '{key}': not a number: '{v}'")))
        })
    }

    pub fn usize_or(&self, key: &str, default: usize) -> Result<usize> {
        self.get(key).map_or(Ok(default), |v| {
            v.parse()
                .map_err(|_| Error::Parse(format!("key '{key}': not a count: '{v}'")))
        })
    }

    /// Comma-separated list; empty when the key is absent.
    pub fn list(&self, key: &str) -> Vec<&str> {
        self.get(key)
            .map(|v| v.split(',').map(str::trim).filter(|s| !s.is_empty()).collect())
            .unwrap_or_default()
    }

    pub fn path(&self, value: &str) -> PathBuf {
        let p = Path::new(value);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Reads the CSV matrix the key points to.
    pub fn matrix(&self, key: &str) -> Result<Mat> {
        read_csv_matrix(&self.path(self.require(key)?), false)
    }

    pub fn matrix_opt(&self, key: &str) -> Result<Option<Mat>> {
        self.get(key)
            .map(|v| read_csv_matrix(&self.path(v), false))
            .transpose()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn csv_parse_and_header() {
        let m = parse_csv_matrix("a,b\n1, 2\n\n3.5,-4e-3\n", true).unwrap();
        assert_eq!(m.shape(), (2, 2));
        assert_eq!(m.get(1, 1), -4e-3);
        assert!(parse_csv_matrix("1,2\n3\n", false).is_err());
        assert!(parse_csv_matrix("1,x\n", false).is_err());
        assert_eq!(parse_csv_matrix("", false).unwrap().shape(), (0, 0));
    }

    #[test]
    fn format_has_17_digits() {
        assert_eq!(format_f64(0.1), "1.0000000000000001e-1");
        assert_eq!(format_f64(-2.0), "-2.0000000000000000e0");
    }

    #[test]
    fn key_values() {
        let kv = KeyValues::parse(
            "# model\nkind = cross\nbeta=0.5 # inline\nkeys = k.csv\nmethods = soft, hard ,top2\n",
            Path::new("/tmp/x"),
        )
        .unwrap();
        assert_eq!(kv.get("kind"), Some("cross"));
        assert_eq!(kv.f64_or("beta", 1.0).unwrap(), 0.5);
        assert_eq!(kv.f64_or("missing", 1.0).unwrap(), 1.0);
        assert_eq!(kv.path("k.csv"), PathBuf::from("/tmp/x/k.csv"));
        assert_eq!(kv.list("methods"), vec!["soft", "hard", "top2"]);
        assert!(kv.require("nope").is_err());
        assert!(KeyValues::parse("a=1\na=2\n", Path::new(".")).is_err());
        assert!(KeyValues::parse("novalue\n", Path::new(".")).is_err());
    }

    proptest! {
        #[test]
        fn csv_round_trip_is_exact(rows in prop::collection::vec(prop::collection::vec(any::<f64>().prop_filter("finite", |x| x.is_finite()), 3), 1..6)) {
            let m = Mat::from_rows(&rows).unwrap();
            let back = parse_csv_matrix(&format_csv_matrix(&m), false).unwrap();
            prop_assert_eq!(m.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
                            back.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>());
        }
    }
}
