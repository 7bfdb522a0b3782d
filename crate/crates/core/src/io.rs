//! File formats: Matrix Market coordinate patterns, Matrix Market dense
//! arrays and header-free row-major CSV matrices.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::obsgraph::ObservationPattern;

const BANNER: &str = "%%MatrixMarket";

struct Header {
    format: String,
    field: String,
    symmetry: String,
}

fn parse_banner(path: &Path, line: &str) -> Result<Header> {
    let fields: Vec<String> = line.split_whitespace().map(|s| s.to_ascii_lowercase()).collect();
    if fields.len() != 5 || fields[0] != BANNER.to_ascii_lowercase() || fields[1] != "matrix" {
        return Err(Error::parse(path, 1, "expected a '%%MatrixMarket matrix ...' banner"));
    }
    Ok(Header {
        format: fields[2].clone(),
        field: fields[3].clone(),
        symmetry: fields[4].clone(),
    })
}

/// Non-comment lines after the banner, with their 1-based line numbers.
fn body_lines(path: &Path, text: &str) -> Result<(Header, Vec<(usize, String)>)> {
    let mut lines = text.lines().enumerate();
    let header = match lines.next() {
        Some((_, first)) => parse_banner(path, first)?,
        None => return Err(Error::parse(path, 1, "empty file")),
    };
    let body = lines
        .map(|(k, l)| (k + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('%'))
        .map(|(k, l)| (k, l.to_string()))
        .collect();
    Ok((header, body))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_usize(path: &Path, line: usize, token: Option<&str>, what: &str) -> Result<usize> {
    let token = token.ok_or_else(|| Error::parse(path, line, format!("missing {what}")))?;
    token
        .parse()
        .map_err(|_| Error::parse(path, line, format!("invalid {what} '{token}'")))
}

/// Reads a coordinate pattern. `symmetric` header entries are mirrored; with
/// `force_symmetric`, a general square file is symmetrised too. Value columns
/// of `real`/`integer` files are ignored.
pub fn read_pattern(path: impl AsRef<Path>, force_symmetric: bool) -> Result<ObservationPattern> {
    let path = path.as_ref();
    let text = read_text(path)?;
    let (header, body) = body_lines(path, &text)?;
    if header.format != "coordinate" {
        return Err(Error::parse(path, 1, "pattern files must use the coordinate format"));
    }
    if !matches!(header.field.as_str(), "pattern" | "real" | "integer") {
        return Err(Error::parse(path, 1, format!("unsupported field '{}'", header.field)));
    }
    let symmetric = match header.symmetry.as_str() {
        "general" => force_symmetric,
        "symmetric" => true,
        other => return Err(Error::parse(path, 1, format!("unsupported symmetry '{other}'"))),
    };

    let mut body = body.into_iter();
    let (size_line, size) = body
        .next()
        .ok_or_else(|| Error::parse(path, 2, "missing size line"))?;
    let mut tok = size.split_whitespace();
    let rows = parse_usize(path, size_line, tok.next(), "row count")?;
    let cols = parse_usize(path, size_line, tok.next(), "column count")?;
    let nnz = parse_usize(path, size_line, tok.next(), "entry count")?;
    if symmetric && rows != cols {
        return Err(Error::parse(
            path,
            size_line,
            format!("symmetric pattern must be square, got {rows}x{cols}"),
        ));
    }

    let mut entries = Vec::with_capacity(nnz);
    for (line, text) in body {
        let mut tok = text.split_whitespace();
        let i = parse_usize(path, line, tok.next(), "row index")?;
        let j = parse_usize(path, line, tok.next(), "column index")?;
        if i == 0 || j == 0 || i > rows || j > cols {
            return Err(Error::parse(
                path,
                line,
                format!("index ({i}, {j}) outside 1..={rows} x 1..={cols}"),
            ));
        }
        entries.push((i - 1, j - 1));
    }
    if entries.len() != nnz {
        return Err(Error::parse(
            path,
            size_line,
            format!("header declares {nnz} entries, found {}", entries.len()),
        ));
    }
    ObservationPattern::from_entries(entries, rows, cols, symmetric)
}

/// Writes a coordinate pattern. Symmetric patterns are stored as their lower
/// triangle under a `symmetric` header.
pub fn write_pattern(path: impl AsRef<Path>, p: &ObservationPattern) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    let entries: Vec<(usize, usize)> = if p.is_symmetric() {
        p.entries().iter().copied().filter(|&(i, j)| i >= j).collect()
    } else {
        p.entries().to_vec()
    };
    let symmetry = if p.is_symmetric() { "symmetric" } else { "general" };
    out.push_str(&format!("{BANNER} matrix coordinate pattern {symmetry}\n"));
    out.push_str(&format!("{} {} {}\n", p.rows(), p.cols(), entries.len()));
    for (i, j) in entries {
        out.push_str(&format!("{} {}\n", i + 1, j + 1));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads a dense `array real general` matrix (column-major values).
pub fn read_dense_mm(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    let path = path.as_ref();
    let text = read_text(path)?;
    let (header, body) = body_lines(path, &text)?;
    if header.format != "array" || !matches!(header.field.as_str(), "real" | "integer" | "double") {
        return Err(Error::parse(path, 1, "expected 'array real general'"));
    }
    if header.symmetry != "general" {
        return Err(Error::parse(path, 1, "only general arrays are supported"));
    }
    let mut body = body.into_iter();
    let (size_line, size) = body
        .next()
        .ok_or_else(|| Error::parse(path, 2, "missing size line"))?;
    let mut tok = size.split_whitespace();
    let rows = parse_usize(path, size_line, tok.next(), "row count")?;
    let cols = parse_usize(path, size_line, tok.next(), "column count")?;
    let mut values = Vec::with_capacity(rows * cols);
    for (line, text) in body {
        for token in text.split_whitespace() {
            let v: f64 = token
                .parse()
                .map_err(|_| Error::parse(path, line, format!("invalid value '{token}'")))?;
            values.push(v);
        }
    }
    if values.len() != rows * cols {
        return Err(Error::parse(
            path,
            size_line,
            format!("expected {} values, found {}", rows * cols, values.len()),
        ));
    }
    Ok(DMatrix::from_column_slice(rows, cols, &values))
}

pub fn write_dense_mm(path: impl AsRef<Path>, m: &DMatrix<f64>) -> Result<()> {
    let path = path.as_ref();
    let mut out = format!("{BANNER} matrix array real general\n{} {}\n", m.nrows(), m.ncols());
    for v in m.iter() {
        out.push_str(&format!("{v:e}\n"));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads a header-free row-major CSV matrix.
pub fn read_dense_csv(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(BufReader::new(file));
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (k, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::csv(path, e))?;
        let row = record
            .iter()
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| Error::parse(path, k + 1, format!("invalid value '{t}'")))
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::parse(
                    path,
                    k + 1,
                    format!("expected {} columns, found {}", first.len(), row.len()),
                ));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::parse(path, 1, "empty matrix file"));
    }
    let ncols = rows[0].len();
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

pub fn dense_csv_string(m: &DMatrix<f64>) -> String {
    let mut out = String::new();
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| m[(i, j)].to_string()).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn write_dense_csv(path: impl AsRef<Path>, m: &DMatrix<f64>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, dense_csv_string(m)).map_err(|e| Error::io(path, e))
}

fn is_mm(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("mtx") || e.eq_ignore_ascii_case("mm"))
}

/// Dense matrix reader dispatching on extension: `.mtx`/`.mm` are Matrix
/// Market arrays, anything else is CSV.
pub fn read_dense(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    let path = path.as_ref();
    if is_mm(path) {
        read_dense_mm(path)
    } else {
        read_dense_csv(path)
    }
}

pub fn write_dense(path: impl AsRef<Path>, m: &DMatrix<f64>) -> Result<()> {
    let path = path.as_ref();
    if is_mm(path) {
        write_dense_mm(path, m)
    } else {
        write_dense_csv(path, m)
    }
}

/// Writes a header line and rows as CSV.
pub fn write_csv_rows<W: Write>(out: W, header: &str, rows: &[Vec<String>]) -> std::io::Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(header.split(','))?;
    for row in rows {
        w.write_record(row)?;
    }
    w.flush()
}

pub fn write_csv_file(path: impl AsRef<Path>, header: &str, rows: &[Vec<String>]) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv_rows(file, header, rows).map_err(|e| Error::io(path, e))
}

/// Line iterator with 1-based numbering, used by the ratings parser.
pub(crate) fn numbered_lines(path: &Path) -> Result<impl Iterator<Item = (usize, std::io::Result<String>)>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(BufReader::new(file).lines().enumerate().map(|(k, l)| (k + 1, l)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::obsgraph::PatternMode;

    #[test]
    fn pattern_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.mtx");
        let p = ObservationPattern::bipartite(3, 4, [(0, 0), (2, 3), (1, 1)]).unwrap();
        write_pattern(&path, &p).unwrap();
        assert_eq!(read_pattern(&path, false).unwrap(), p);

        let s = ObservationPattern::symmetric(4, [(0, 1), (2, 2), (3, 1)]).unwrap();
        write_pattern(&path, &s).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("%%MatrixMarket matrix coordinate pattern symmetric"));
        assert_eq!(read_pattern(&path, false).unwrap(), s);
    }

    #[test]
    fn symmetric_header_mirrors_entries() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.mtx");
        fs::write(
            &path,
            "%%MatrixMarket matrix coordinate pattern symmetric\n% comment\n3 3 2\n2 1\n3 3\n",
        )
        .unwrap();
        let p = read_pattern(&path, false).unwrap();
        assert!(p.is_symmetric());
        assert_eq!(p.entries(), &[(0, 1), (1, 0), (2, 2)]);

        fs::write(&path, "%%MatrixMarket matrix coordinate pattern general\n3 3 1\n2 1\n").unwrap();
        let p = read_pattern(&path, true).unwrap();
        assert_eq!(p.mode(), PatternMode::SymmetricWithLoops { n: 3 });
        assert_eq!(p.count(), 2);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.mtx");
        fs::write(&path, "%%MatrixMarket matrix coordinate pattern general\n2 2 2\n1 1\n3 1\n").unwrap();
        let err = read_pattern(&path, false).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 4),
            other => panic!("unexpected {other:?}"),
        }
        fs::write(&path, "%%MatrixMarket matrix coordinate pattern general\n2 2 3\n1 1\n").unwrap();
        assert!(read_pattern(&path, false).is_err());
        fs::write(&path, "garbage\n").unwrap();
        assert!(matches!(read_pattern(&path, false), Err(Error::Parse { line: 1, .. })));

        let missing = dir.path().join("nope.mtx");
        let msg = read_pattern(&missing, false).unwrap_err().to_string();
        assert!(msg.contains("nope.mtx"));
    }

    #[test]
    fn dense_formats() {
        let dir = tempfile::tempdir().unwrap();
        let m = DMatrix::from_fn(3, 2, |i, j| i as f64 * 0.1 - j as f64 / 3.0);
        for name in ["m.mtx", "m.csv"] {
            let path = dir.path().join(name);
            write_dense(&path, &m).unwrap();
            assert_eq!(read_dense(&path).unwrap(), m);
        }
        let path = dir.path().join("ragged.csv");
        fs::write(&path, "1,2\n3\n").unwrap();
        assert!(read_dense_csv(&path).is_err());
    }
}
