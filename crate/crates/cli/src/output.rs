//! Byte-stable CSV output: LF endings, 12 significant digits, no `-0`.

use std::io::Write;
use std::path::Path;

use crate::CliError;

/// Float with 12 significant digits in scientific notation.
pub fn fmt_float(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let s = format!("{:.11e}", x);
    // a value that rounds to zero keeps its sign in the formatter
    if s.starts_with('-') && s[1..].chars().all(|c| c == '0' || c == '.' || c == 'e') {
        s[1..].to_string()
    } else {
        s
    }
}

/// In-memory table written out in one go.
pub struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Table {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        assert_eq!(row.len(), self.header.len(), "row width");
        self.rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, CliError> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.into_inner().map_err(|e| CliError::Io(e.into_error()))
    }

    /// Write to `out`, or stdout when `None`.
    pub fn emit(&self, out: Option<&Path>) -> Result<(), CliError> {
        let bytes = self.to_bytes()?;
        match out {
            Some(path) => std::fs::write(path, bytes)?,
            None => std::io::stdout().lock().write_all(&bytes)?,
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_format() {
        assert_eq!(fmt_float(1.0 / 6.0), "1.66666666667e-1");
        assert_eq!(fmt_float(0.0), "0.00000000000e0");
        assert_eq!(fmt_float(-0.0), "0.00000000000e0");
        assert_eq!(fmt_float(-1e-300 * 1e-300), "0.00000000000e0");
        assert_eq!(fmt_float(-2.5), "-2.50000000000e0");
        assert_eq!(fmt_float(12345.0), "1.23450000000e4");
    }

    #[test]
    fn table_uses_lf() {
        let mut t = Table::new(&["a", "b"]);
        t.push(vec!["1".into(), fmt_float(0.5)]);
        assert_eq!(t.to_bytes().unwrap(), b"a,b\n1,5.00000000000e-1\n");
    }
}
