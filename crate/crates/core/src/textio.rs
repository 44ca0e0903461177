//! Plain-text numeric formats shared by chains, feature matrices and cost vectors.
//!
//! Blank lines and `#` comments are ignored everywhere.

use nalgebra::DMatrix;

use crate::{Error, Result};

fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().filter_map(|(i, l)| {
        let l = l.split('#').next().unwrap_or("").trim();
        (!l.is_empty()).then_some((i + 1, l))
    })
}

fn parse_f64(tok: &str, line: usize) -> Result<f64> {
    tok.parse::<f64>()
        .map_err(|_| Error::Parse(format!("line {line}: `{tok}` is not a number")))
}

fn parse_usize(tok: &str, line: usize) -> Result<usize> {
    tok.parse::<usize>()
        .map_err(|_| Error::Parse(format!("line {line}: `{tok}` is not a non-negative integer")))
}

/// Square matrix: first line `n`, then `n` rows of `n` values.
pub fn parse_square_matrix(text: &str) -> Result<DMatrix<f64>> {
    let mut lines = data_lines(text);
    let (hl, header) = lines
        .next()
        .ok_or_else(|| Error::Parse("empty matrix file".into()))?;
    let toks: Vec<&str> = header.split_whitespace().collect();
    if toks.len() != 1 {
        return Err(Error::Parse(format!(
            "line {hl}: header must hold the state count only"
        )));
    }
    let n = parse_usize(toks[0], hl)?;
    read_rows(lines, n, n)
}

/// Rectangular matrix: first line `rows cols`, then the rows.
pub fn parse_matrix(text: &str) -> Result<DMatrix<f64>> {
    let mut lines = data_lines(text);
    let (hl, header) = lines
        .next()
        .ok_or_else(|| Error::Parse("empty matrix file".into()))?;
    let toks: Vec<&str> = header.split_whitespace().collect();
    if toks.len() != 2 {
        return Err(Error::Parse(format!("line {hl}: header must be `rows cols`")));
    }
    let rows = parse_usize(toks[0], hl)?;
    let cols = parse_usize(toks[1], hl)?;
    read_rows(lines, rows, cols)
}

fn read_rows<'a>(
    lines: impl Iterator<Item = (usize, &'a str)>,
    rows: usize,
    cols: usize,
) -> Result<DMatrix<f64>> {
    if rows == 0 || cols == 0 {
        return Err(Error::Parse("matrix dimensions must be positive".into()));
    }
    let mut m = DMatrix::zeros(rows, cols);
    let mut r = 0;
    for (ln, l) in lines {
        if r == rows {
            return Err(Error::Parse(format!("line {ln}: more than {rows} rows")));
        }
        let vals = l
            .split_whitespace()
            .map(|t| parse_f64(t, ln))
            .collect::<Result<Vec<_>>>()?;
        if vals.len() != cols {
            return Err(Error::Parse(format!(
                "line {ln}: expected {cols} values, found {}",
                vals.len()
            )));
        }
        for (c, v) in vals.into_iter().enumerate() {
            m[(r, c)] = v;
        }
        r += 1;
    }
    if r != rows {
        return Err(Error::Parse(format!("expected {rows} rows, found {r}")));
    }
    Ok(m)
}

/// Whitespace-separated values on any number of lines.
pub fn parse_vector(text: &str) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for (ln, l) in data_lines(text) {
        for t in l.split_whitespace() {
            out.push(parse_f64(t, ln)?);
        }
    }
    if out.is_empty() {
        return Err(Error::Parse("empty vector file".into()));
    }
    Ok(out)
}

pub fn format_square_matrix(m: &DMatrix<f64>) -> String {
    let mut s = format!("{}\n", m.nrows());
    push_rows(&mut s, m);
    s
}

pub fn format_matrix(m: &DMatrix<f64>) -> String {
    let mut s = format!("{} {}\n", m.nrows(), m.ncols());
    push_rows(&mut s, m);
    s
}

fn push_rows(s: &mut String, m: &DMatrix<f64>) {
    for r in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|c| format!("{:?}", m[(r, c)])).collect();
        s.push_str(&row.join(" "));
        s.push('\n');
    }
}
