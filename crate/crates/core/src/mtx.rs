//! Matrix Market coordinate format, real `general` and `symmetric` variants.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::sparse::SparseCoo;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MtxSymmetry {
    General,
    /// Only the lower triangle is written; reading expands it.
    Symmetric,
}

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        line,
        msg: msg.into(),
    }
}

pub fn read_matrix_market(path: impl AsRef<Path>) -> Result<SparseCoo> {
    parse_matrix_market(BufReader::new(File::open(path)?))
}

pub fn parse_matrix_market<R: Read>(reader: R) -> Result<SparseCoo> {
    let mut lines = BufReader::new(reader).lines().enumerate();

    let (_, header) = lines.next().ok_or_else(|| parse_err(1, "empty file"))?;
    let header = header?;
    let tokens: Vec<String> = header.split_whitespace().map(str::to_lowercase).collect();
    if tokens.len() != 5 || tokens[0] != "%%matrixmarket" || tokens[1] != "matrix" {
        return Err(parse_err(1, format!("malformed header `{header}`")));
    }
    if tokens[2] != "coordinate" {
        return Err(parse_err(1, format!("unsupported format `{}`", tokens[2])));
    }
    if tokens[3] != "real" && tokens[3] != "integer" {
        return Err(parse_err(1, format!("unsupported field `{}`", tokens[3])));
    }
    let symmetry = match tokens[4].as_str() {
        "general" => MtxSymmetry::General,
        "symmetric" => MtxSymmetry::Symmetric,
        other => return Err(parse_err(1, format!("unsupported symmetry `{other}`"))),
    };

    let mut size: Option<(usize, usize, usize)> = None;
    let mut triplets = Vec::new();
    let mut entries = 0usize;
    for (idx, line) in lines {
        let lineno = idx + 1;
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('%') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let Some((n_rows, n_cols, nnz)) = size else {
            if fields.len() != 3 {
                return Err(parse_err(lineno, "size line must have 3 fields"));
            }
            let parse = |s: &str| {
                s.parse::<usize>()
                    .map_err(|_| parse_err(lineno, format!("bad size `{s}`")))
            };
            size = Some((parse(fields[0])?, parse(fields[1])?, parse(fields[2])?));
            triplets.reserve(size.unwrap().2 * 2);
            continue;
        };
        if fields.len() != 3 {
            return Err(parse_err(lineno, "entry line must have 3 fields"));
        }
        let i: usize = fields[0]
            .parse()
            .map_err(|_| parse_err(lineno, format!("bad row index `{}`", fields[0])))?;
        let j: usize = fields[1]
            .parse()
            .map_err(|_| parse_err(lineno, format!("bad column index `{}`", fields[1])))?;
        let v: f64 = fields[2]
            .parse()
            .map_err(|_| parse_err(lineno, format!("bad value `{}`", fields[2])))?;
        if i == 0 || j == 0 || i > n_rows || j > n_cols {
            return Err(parse_err(
                lineno,
                format!("index ({i}, {j}) out of bounds for {n_rows}x{n_cols}"),
            ));
        }
        entries += 1;
        if entries > nnz {
            return Err(parse_err(lineno, format!("more than {nnz} entries")));
        }
        triplets.push((i - 1, j - 1, v));
        if symmetry == MtxSymmetry::Symmetric && i != j {
            triplets.push((j - 1, i - 1, v));
        }
    }
    let (n_rows, n_cols, nnz) = size.ok_or_else(|| parse_err(1, "missing size line"))?;
    if entries != nnz {
        return Err(parse_err(0, format!("expected {nnz} entries, found {entries}")));
    }
    SparseCoo::from_triplets(n_rows, n_cols, triplets)
}

pub fn write_matrix_market(m: &SparseCoo, path: impl AsRef<Path>, symmetry: MtxSymmetry) -> Result<()> {
    write_matrix_market_with_comments(m, path, symmetry, &[])
}

pub fn write_matrix_market_with_comments(
    m: &SparseCoo,
    path: impl AsRef<Path>,
    symmetry: MtxSymmetry,
    comments: &[String],
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    format_matrix_market_with_comments(m, &mut w, symmetry, comments)?;
    w.flush()?;
    Ok(())
}

/// Values are printed with 17 significant digits, which round-trips every f64.
pub fn format_matrix_market<W: Write>(m: &SparseCoo, w: &mut W, symmetry: MtxSymmetry) -> Result<()> {
    format_matrix_market_with_comments(m, w, symmetry, &[])
}

/// As [`format_matrix_market`], with one `%` comment line per entry of `comments`.
pub fn format_matrix_market_with_comments<W: Write>(
    m: &SparseCoo,
    w: &mut W,
    symmetry: MtxSymmetry,
    comments: &[String],
) -> Result<()> {
    if let Some(c) = comments.iter().find(|c| c.contains('\n')) {
        return Err(Error::Invalid(format!("comment spans lines: {c:?}")));
    }
    let keep = |i: usize, j: usize| symmetry == MtxSymmetry::General || i >= j;
    if symmetry == MtxSymmetry::Symmetric {
        m.ensure_symmetric()?;
    }
    let count = m.iter().filter(|&(i, j, _)| keep(i, j)).count();
    let sym = match symmetry {
        MtxSymmetry::General => "general",
        MtxSymmetry::Symmetric => "symmetric",
    };
    writeln!(w, "%%MatrixMarket matrix coordinate real {sym}")?;
    for c in comments {
        writeln!(w, "% {c}")?;
    }
    writeln!(w, "{} {} {}", m.n_rows(), m.n_cols(), count)?;
    for (i, j, v) in m.iter().filter(|&(i, j, _)| keep(i, j)) {
        writeln!(w, "{} {} {:.16e}", i + 1, j + 1, v)?;
    }
    Ok(())
}
