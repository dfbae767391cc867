//! Tab-separated table reading and writing.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// A parsed TSV file: header fields plus data rows with their 1-based line
/// numbers (the header is line 1).
#[derive(Debug, Clone)]
pub struct Table {
    pub path: String,
    pub header: Vec<String>,
    pub rows: Vec<(usize, Vec<String>)>,
}

impl Table {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&path.display().to_string(), &text)
    }

    pub fn parse(path: &str, text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.strip_suffix('\r').unwrap_or(l)))
            .filter(|(_, l)| !l.trim().is_empty());
        let (_, head) = lines.next().ok_or_else(|| Error::Parse {
            path: path.to_string(),
            row: 1,
            column: 1,
            message: "empty file, expected a header row".into(),
        })?;
        let header: Vec<String> = head.split('\t').map(|s| s.trim().to_string()).collect();
        let rows = lines
            .map(|(n, l)| (n, l.split('\t').map(|s| s.trim().to_string()).collect()))
            .collect();
        Ok(Self {
            path: path.to_string(),
            header,
            rows,
        })
    }

    /// Index of a named header column.
    pub fn column(&self, name: &str) -> Result<usize> {
        self.header.iter().position(|h| h == name).ok_or_else(|| Error::Parse {
            path: self.path.clone(),
            row: 1,
            column: 0,
            message: format!("missing column `{name}`"),
        })
    }

    pub fn parse_error(&self, row: usize, column: usize, message: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.clone(),
            row,
            column,
            message: message.into(),
        }
    }

    /// Field `col` (0-based) of a row, or a parse error naming row and column.
    pub fn field<'a>(&self, line: usize, row: &'a [String], col: usize) -> Result<&'a str> {
        row.get(col)
            .map(String::as_str)
            .ok_or_else(|| self.parse_error(line, col + 1, "missing field"))
    }

    /// Field parsed as a finite float.
    pub fn float(&self, line: usize, row: &[String], col: usize) -> Result<f64> {
        let raw = self.field(line, row, col)?;
        match raw.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            Ok(_) => Err(self.parse_error(line, col + 1, format!("non-finite value `{raw}`"))),
            Err(_) => Err(self.parse_error(line, col + 1, format!("non-numeric value `{raw}`"))),
        }
    }
}

/// Format a float so it parses back to the identical value.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

/// Write `header` and `rows` as TSV, replacing any existing file.
pub fn write<I, R>(path: &Path, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: AsRef<[String]>,
{
    let mut out = String::new();
    out.push_str(&header.join("\t"));
    out.push('\n');
    for row in rows {
        out.push_str(&row.as_ref().join("\t"));
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

/// Write through a sibling temporary file and rename into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = path.with_extension("partial");
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_header_and_rows_with_line_numbers() {
        let t = Table::parse("x.tsv", "a\tb\n1\t2\n\n3\tq\n").unwrap();
        assert_eq!(t.header, vec!["a", "b"]);
        assert_eq!(t.rows.len(), 2);
        assert_eq!(t.rows[1].0, 4);
        let err = t.float(4, &t.rows[1].1, 1).unwrap_err();
        assert_eq!(
            err.to_string(),
            "parse error in x.tsv at row 4, column 2: non-numeric value `q`"
        );
    }

    #[test]
    fn float_formatting_round_trips() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 12345.678] {
            assert_eq!(fmt_f64(v).parse::<f64>().unwrap(), v);
        }
    }
}
