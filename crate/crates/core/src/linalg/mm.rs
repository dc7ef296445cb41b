//! Matrix Market reading and writing, plus plain one-value-per-line vectors.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use super::sparse::CsrMatrix;
use crate::error::{Error, Result};

/// Formats a float with 17 significant digits so it round-trips exactly.
pub fn format_real(v: f64) -> String {
    format!("{v:.16e}")
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoordinateMatrix {
    pub nrows: usize,
    pub ncols: usize,
    pub symmetric: bool,
    /// Zero-based entries as stored in the file.
    pub entries: Vec<(usize, usize, f64)>,
}

impl CoordinateMatrix {
    /// Expands to a square CSR matrix, mirroring symmetric storage.
    pub fn to_csr(&self) -> Result<CsrMatrix> {
        if self.nrows != self.ncols {
            return Err(Error::InvalidArgument(format!(
                "expected a square matrix, got {}x{}",
                self.nrows, self.ncols
            )));
        }
        let mut t = Vec::with_capacity(self.entries.len() * 2);
        for &(r, c, v) in &self.entries {
            t.push((r, c, v));
            if self.symmetric && r != c {
                t.push((c, r, v));
            }
        }
        Ok(CsrMatrix::from_triplets(self.nrows, &t))
    }
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_string(path: &Path, s: &str) -> Result<()> {
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

struct Header {
    format: String,
    field: String,
    symmetry: String,
}

fn parse_header(path: &Path, line: &str) -> Result<Header> {
    let tokens: Vec<String> = line
        .split_whitespace()
        .map(|t| t.to_ascii_lowercase())
        .collect();
    if tokens.len() != 5 || tokens[0] != "%%matrixmarket" || tokens[1] != "matrix" {
        return Err(Error::parse(
            path,
            1,
            "missing '%%MatrixMarket matrix' banner",
        ));
    }
    let field = tokens[3].clone();
    if !matches!(field.as_str(), "real" | "integer" | "double") {
        return Err(Error::parse(
            path,
            1,
            format!("unsupported field '{field}'"),
        ));
    }
    let symmetry = tokens[4].clone();
    if !matches!(symmetry.as_str(), "general" | "symmetric") {
        return Err(Error::parse(
            path,
            1,
            format!("unsupported symmetry '{symmetry}'"),
        ));
    }
    Ok(Header {
        format: tokens[2].clone(),
        field,
        symmetry,
    })
}

/// Data lines (1-based line number, trimmed content) after the banner, skipping comments and blanks.
fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .skip(1)
        .map(|(k, l)| (k + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('%'))
}

fn parse_num<T: std::str::FromStr>(
    path: &Path,
    line: usize,
    tok: Option<&str>,
    what: &str,
) -> Result<T> {
    let tok = tok.ok_or_else(|| Error::parse(path, line, format!("missing {what}")))?;
    tok.parse()
        .map_err(|_| Error::parse(path, line, format!("cannot parse {what} from '{tok}'")))
}

pub fn read_coordinate(path: &Path) -> Result<CoordinateMatrix> {
    let text = read_to_string(path)?;
    let first = text.lines().next().unwrap_or("");
    let header = parse_header(path, first)?;
    if header.format != "coordinate" {
        return Err(Error::parse(path, 1, "expected coordinate format"));
    }
    let _ = header.field;
    let mut lines = data_lines(&text);
    let (ln, size) = lines
        .next()
        .ok_or_else(|| Error::parse(path, 2, "missing size line"))?;
    let mut it = size.split_whitespace();
    let nrows: usize = parse_num(path, ln, it.next(), "row count")?;
    let ncols: usize = parse_num(path, ln, it.next(), "column count")?;
    let nnz: usize = parse_num(path, ln, it.next(), "entry count")?;
    let mut entries = Vec::with_capacity(nnz);
    for (ln, l) in lines {
        let mut it = l.split_whitespace();
        let r: usize = parse_num(path, ln, it.next(), "row index")?;
        let c: usize = parse_num(path, ln, it.next(), "column index")?;
        let v: f64 = parse_num(path, ln, it.next(), "value")?;
        if r == 0 || c == 0 || r > nrows || c > ncols {
            return Err(Error::parse(
                path,
                ln,
                format!("index ({r}, {c}) out of range"),
            ));
        }
        entries.push((r - 1, c - 1, v));
    }
    if entries.len() != nnz {
        return Err(Error::parse(
            path,
            text.lines().count(),
            format!("expected {nnz} entries, found {}", entries.len()),
        ));
    }
    Ok(CoordinateMatrix {
        nrows,
        ncols,
        symmetric: header.symmetry == "symmetric",
        entries,
    })
}

/// Writes the lower triangle of a symmetric matrix.
pub fn write_symmetric(path: &Path, m: &CsrMatrix) -> Result<()> {
    let entries: Vec<(usize, usize, f64)> = m.triplets().filter(|&(r, c, _)| c <= r).collect();
    let mut s = String::new();
    s.push_str("%%MatrixMarket matrix coordinate real symmetric\n");
    let _ = writeln!(s, "{} {} {}", m.dim(), m.dim(), entries.len());
    for (r, c, v) in entries {
        let _ = writeln!(s, "{} {} {}", r + 1, c + 1, format_real(v));
    }
    write_string(path, &s)
}

pub fn write_dense_symmetric(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let n = m.nrows();
    let mut s = String::new();
    s.push_str("%%MatrixMarket matrix coordinate real symmetric\n");
    let _ = writeln!(s, "{n} {n} {}", n * (n + 1) / 2);
    for c in 0..n {
        for r in c..n {
            let _ = writeln!(s, "{} {} {}", r + 1, c + 1, format_real(m[(r, c)]));
        }
    }
    write_string(path, &s)
}

/// Reads a vector stored either as a Matrix Market array or one value per line.
pub fn read_vector(path: &Path) -> Result<Vec<f64>> {
    let text = read_to_string(path)?;
    let first = text.lines().next().unwrap_or("").trim_start();
    if first.starts_with("%%") {
        let header = parse_header(path, first)?;
        if header.format != "array" {
            return Err(Error::parse(path, 1, "expected array format for a vector"));
        }
        let mut lines = data_lines(&text);
        let (ln, size) = lines
            .next()
            .ok_or_else(|| Error::parse(path, 2, "missing size line"))?;
        let mut it = size.split_whitespace();
        let nrows: usize = parse_num(path, ln, it.next(), "row count")?;
        let ncols: usize = parse_num(path, ln, it.next(), "column count")?;
        if ncols != 1 {
            return Err(Error::parse(path, ln, "expected a single column"));
        }
        let mut out = Vec::with_capacity(nrows);
        for (ln, l) in lines {
            out.push(parse_num(path, ln, Some(l), "value")?);
        }
        if out.len() != nrows {
            return Err(Error::parse(
                path,
                text.lines().count(),
                format!("expected {nrows} values, found {}", out.len()),
            ));
        }
        return Ok(out);
    }
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(|(k, l)| parse_num(path, k + 1, Some(l.trim()), "value"))
        .collect()
}

/// One value per line, 17 significant digits.
pub fn write_vector(path: &Path, v: &[f64]) -> Result<()> {
    let mut s = String::with_capacity(v.len() * 24);
    for x in v {
        s.push_str(&format_real(*x));
        s.push('\n');
    }
    write_string(path, &s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.mtx");
        let m = CsrMatrix::from_triplets(
            3,
            &[
                (0, 0, 2.0),
                (0, 1, -0.1),
                (1, 0, -0.1),
                (1, 1, 1.0 / 3.0),
                (2, 2, 1e-300),
            ],
        );
        write_symmetric(&p, &m).unwrap();
        let back = read_coordinate(&p).unwrap().to_csr().unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn vector_formats() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.txt");
        let v = vec![0.1, -2.5e-17, std::f64::consts::PI];
        write_vector(&p, &v).unwrap();
        assert_eq!(read_vector(&p).unwrap(), v);

        let q = dir.path().join("v.mtx");
        fs::write(
            &q,
            "%%MatrixMarket matrix array real general\n% c\n2 1\n1.5\n-3\n",
        )
        .unwrap();
        assert_eq!(read_vector(&q).unwrap(), vec![1.5, -3.0]);
    }

    #[test]
    fn bad_entry_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.mtx");
        fs::write(
            &p,
            "%%MatrixMarket matrix coordinate real symmetric\n2 2 2\n1 1 1.0\n2 x 1.0\n",
        )
        .unwrap();
        match read_coordinate(&p) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("unexpected {other:?}"),
        }
    }
}
