//! Matrix Market coordinate I/O.
//!
//! Block matrices are written at scalar granularity; the block partition
//! lives in a JSON sidecar next to the `.mtx` file (`foo.mtx` ->
//! `foo.json`). Patterns use the `pattern` field type.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::block::BlockSparseMatrix;
use super::pattern::PatternMatrix;
use crate::error::{Error, Result};

/// Sidecar header describing the block partition of a `.mtx` file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockHeader {
    pub row_block_sizes: Vec<usize>,
    pub col_block_sizes: Vec<usize>,
    /// Free-form provenance (run configuration, input hashes, ...).
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub meta: serde_json::Value,
}

pub fn sidecar_path(mtx: &Path) -> PathBuf {
    mtx.with_extension("json")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Field {
    Real,
    Integer,
    Pattern,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Symmetry {
    General,
    Symmetric,
}

/// Parsed coordinate data, 0-based.
#[derive(Debug, Clone)]
pub struct Coordinate {
    pub nrows: usize,
    pub ncols: usize,
    pub entries: Vec<(usize, usize, f64)>,
    pub is_pattern: bool,
}

fn parse_err(line: usize, msg: impl std::fmt::Display) -> Error {
    Error::Parse(format!("matrix market line {line}: {msg}"))
}

/// Reads a coordinate-format Matrix Market stream. Symmetric files are
/// expanded to both triangles.
pub fn read_coordinate<R: Read>(reader: R) -> Result<Coordinate> {
    let mut lines = BufReader::new(reader).lines().enumerate();
    let (_, banner) = lines.next().ok_or_else(|| Error::Parse("empty matrix market file".into()))?;
    let banner = banner?;
    let tokens: Vec<String> = banner.split_whitespace().map(|t| t.to_ascii_lowercase()).collect();
    if tokens.len() < 5 || tokens[0] != "%%matrixmarket" || tokens[1] != "matrix" {
        return Err(parse_err(1, "missing %%MatrixMarket matrix banner"));
    }
    if tokens[2] != "coordinate" {
        return Err(parse_err(1, format!("unsupported format `{}`", tokens[2])));
    }
    let field = match tokens[3].as_str() {
        "real" | "double" => Field::Real,
        "integer" => Field::Integer,
        "pattern" => Field::Pattern,
        other => return Err(parse_err(1, format!("unsupported field `{other}`"))),
    };
    let symmetry = match tokens[4].as_str() {
        "general" => Symmetry::General,
        "symmetric" => Symmetry::Symmetric,
        other => return Err(parse_err(1, format!("unsupported symmetry `{other}`"))),
    };

    let mut size: Option<(usize, usize, usize)> = None;
    let mut entries = Vec::new();
    for (no, line) in lines {
        let line = line?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('%') {
            continue;
        }
        let parts: Vec<&str> = t.split_whitespace().collect();
        let num = |k: usize| -> Result<usize> {
            parts
                .get(k)
                .ok_or_else(|| parse_err(no + 1, "too few fields"))?
                .parse::<usize>()
                .map_err(|e| parse_err(no + 1, e))
        };
        match size {
            None => size = Some((num(0)?, num(1)?, num(2)?)),
            Some((nr, nc, _)) => {
                let (i, j) = (num(0)?, num(1)?);
                if i == 0 || j == 0 || i > nr || j > nc {
                    return Err(parse_err(no + 1, format!("index ({i}, {j}) out of range")));
                }
                let v = match field {
                    Field::Pattern => 1.0,
                    _ => parts
                        .get(2)
                        .ok_or_else(|| parse_err(no + 1, "missing value"))?
                        .parse::<f64>()
                        .map_err(|e| parse_err(no + 1, e))?,
                };
                entries.push((i - 1, j - 1, v));
                if symmetry == Symmetry::Symmetric && i != j {
                    entries.push((j - 1, i - 1, v));
                }
            }
        }
    }
    let (nrows, ncols, nnz) = size.ok_or_else(|| Error::Parse("missing size line".into()))?;
    let stored = match symmetry {
        Symmetry::General => entries.len(),
        Symmetry::Symmetric => entries.iter().filter(|(i, j, _)| i >= j).count(),
    };
    if stored != nnz {
        return Err(Error::Parse(format!("size line declares {nnz} entries, found {stored}")));
    }
    Ok(Coordinate {
        nrows,
        ncols,
        entries,
        is_pattern: field == Field::Pattern,
    })
}

/// Writes the nonzero scalar entries of `m` in `real general` coordinate form.
pub fn write_block_matrix_to<W: Write>(m: &BlockSparseMatrix, out: W) -> Result<()> {
    let mut w = BufWriter::new(out);
    let entries: Vec<_> = m.scalar_entries().collect();
    writeln!(w, "%%MatrixMarket matrix coordinate real general")?;
    writeln!(
        w,
        "% block partition: {} x {} blocks",
        m.block_rows(),
        m.block_cols()
    )?;
    writeln!(w, "{} {} {}", m.nrows(), m.ncols(), entries.len())?;
    for (i, j, v) in entries {
        writeln!(w, "{} {} {:e}", i + 1, j + 1, v)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `m` to `path` plus the block-partition sidecar.
pub fn write_block_matrix(m: &BlockSparseMatrix, path: &Path, meta: serde_json::Value) -> Result<()> {
    write_block_matrix_to(m, File::create(path)?)?;
    let header = BlockHeader {
        row_block_sizes: m.row_sizes().to_vec(),
        col_block_sizes: m.col_sizes().to_vec(),
        meta,
    };
    serde_json::to_writer_pretty(File::create(sidecar_path(path))?, &header)?;
    Ok(())
}

/// Rebuilds a block matrix from scalar coordinates and a partition.
pub fn block_matrix_from_coordinate(
    c: &Coordinate,
    row_sizes: Vec<usize>,
    col_sizes: Vec<usize>,
) -> Result<BlockSparseMatrix> {
    let (r, cc): (usize, usize) = (row_sizes.iter().sum(), col_sizes.iter().sum());
    if r != c.nrows || cc != c.ncols {
        return Err(Error::DimensionMismatch {
            op: "matrix market partition",
            left: format!("{}x{} file", c.nrows, c.ncols),
            right: format!("{r}x{cc} partition"),
        });
    }
    let ro = prefix(&row_sizes);
    let co = prefix(&col_sizes);
    let mut blocks: std::collections::BTreeMap<(usize, usize), Vec<f64>> = Default::default();
    for &(i, j, v) in &c.entries {
        let bi = ro.partition_point(|&o| o <= i) - 1;
        let bj = co.partition_point(|&o| o <= j) - 1;
        let blk = blocks
            .entry((bi, bj))
            .or_insert_with(|| vec![0.0; row_sizes[bi] * col_sizes[bj]]);
        blk[(i - ro[bi]) * col_sizes[bj] + (j - co[bj])] += v;
    }
    BlockSparseMatrix::from_blocks(row_sizes, col_sizes, blocks)
}

fn prefix(sizes: &[usize]) -> Vec<usize> {
    let mut out = vec![0];
    for s in sizes {
        out.push(out.last().unwrap() + s);
    }
    out
}

/// Reads a block matrix; without a sidecar every block is `1x1`.
pub fn read_block_matrix(path: &Path) -> Result<(BlockSparseMatrix, Option<BlockHeader>)> {
    let coord = read_coordinate(File::open(path)?)?;
    let side = sidecar_path(path);
    let header: Option<BlockHeader> = if side.exists() {
        Some(serde_json::from_reader(File::open(side)?)?)
    } else {
        None
    };
    let (rs, cs) = match &header {
        Some(h) => (h.row_block_sizes.clone(), h.col_block_sizes.clone()),
        None => (vec![1; coord.nrows], vec![1; coord.ncols]),
    };
    Ok((block_matrix_from_coordinate(&coord, rs, cs)?, header))
}

pub fn write_pattern_to<W: Write>(p: &PatternMatrix, out: W) -> Result<()> {
    let mut w = BufWriter::new(out);
    writeln!(w, "%%MatrixMarket matrix coordinate pattern general")?;
    writeln!(w, "{} {} {}", p.nrows(), p.ncols(), p.len())?;
    for (i, j) in p.entries() {
        writeln!(w, "{} {}", i + 1, j + 1)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_pattern(p: &PatternMatrix, path: &Path) -> Result<()> {
    write_pattern_to(p, File::create(path)?)
}

/// Reads a pattern; real-valued files contribute their nonzero positions.
pub fn read_pattern(path: &Path) -> Result<PatternMatrix> {
    let c = read_coordinate(File::open(path)?)?;
    PatternMatrix::from_entries(
        c.nrows,
        c.ncols,
        c.entries.iter().filter(|e| e.2 != 0.0).map(|&(i, j, _)| (i, j)),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    #[test]
    fn round_trip_through_file_with_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.mtx");
        let d = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 2.5, 0.0, 1.0 / 3.0, 0.0, -4e-17, 0.0, 7.0]);
        let m = BlockSparseMatrix::from_dense(&d, vec![2, 1], vec![1, 2]).unwrap();
        write_block_matrix(&m, &path, serde_json::json!({"note": "t"})).unwrap();
        let (back, header) = read_block_matrix(&path).unwrap();
        assert_eq!(back, m);
        assert_eq!(header.unwrap().meta["note"], "t");
    }

    #[test]
    fn symmetric_files_expand() {
        let src = "%%MatrixMarket matrix coordinate real symmetric\n2 2 2\n1 1 2\n2 1 -1\n";
        let c = read_coordinate(src.as_bytes()).unwrap();
        assert_eq!(c.entries.len(), 3);
    }

    #[test]
    fn pattern_round_trip() {
        let p = PatternMatrix::from_entries(3, 3, [(0, 1), (2, 2)]).unwrap();
        let mut buf = Vec::new();
        write_pattern_to(&p, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("%%MatrixMarket matrix coordinate pattern general"));
        let c = read_coordinate(buf.as_slice()).unwrap();
        assert!(c.is_pattern);
        let q = PatternMatrix::from_entries(c.nrows, c.ncols, c.entries.iter().map(|e| (e.0, e.1))).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn bad_counts_are_reported() {
        let src = "%%MatrixMarket matrix coordinate real general\n2 2 3\n1 1 2\n";
        assert!(read_coordinate(src.as_bytes()).is_err());
        let src = "%%MatrixMarket matrix array real general\n2 2\n";
        assert!(read_coordinate(src.as_bytes()).is_err());
    }
}
