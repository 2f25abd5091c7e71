//! File formats.
//!
//! Feature matrices use a small binary container ("MAGF"): magic bytes
//! `MAGF`, little-endian u32 version (=1), u64 rows, u64 cols, then row-major
//! little-endian f64 payload. Roundtrips are bit-exact. A CSV fallback
//! (one comma-separated row per line, `#` comments allowed) covers
//! hand-written fixtures.
//!
//! Edge lists are whitespace-separated `src dst` integer pairs, one per line,
//! with `#` comments; undirected semantics with sorted-pair dedup. Category
//! files carry one integer per line, one line per node.

use crate::data::{MagDataset, SplitConfig};
use crate::error::{Error, Result};
use crate::tensor::DenseMatrix;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"MAGF";
const VERSION: u32 = 1;

pub fn write_feature_file(m: &DenseMatrix, path: &Path) -> Result<()> {
    let mut buf = Vec::with_capacity(4 + 4 + 16 + 8 * m.data().len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(m.rows() as u64).to_le_bytes());
    buf.extend_from_slice(&(m.cols() as u64).to_le_bytes());
    for v in m.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut file = fs::File::create(path)?;
    file.write_all(&buf)?;
    Ok(())
}

/// Reads either a MAGF container (detected by magic bytes) or CSV.
pub fn read_feature_file(path: &Path) -> Result<DenseMatrix> {
    let mut file = fs::File::open(path)?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes)?;
    if bytes.len() >= 4 && &bytes[..4] == MAGIC {
        read_magf(path, &bytes)
    } else {
        read_csv(path, &bytes)
    }
}

fn read_magf(path: &Path, bytes: &[u8]) -> Result<DenseMatrix> {
    let malformed = |detail: &str| Error::MalformedFile {
        path: path.display().to_string(),
        detail: detail.to_string(),
    };
    if bytes.len() < 24 {
        return Err(malformed("truncated header"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(malformed(&format!("unsupported version {}", version)));
    }
    let rows = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let cols = u64::from_le_bytes(bytes[16..24].try_into().unwrap()) as usize;
    let expected = 24 + 8 * rows * cols;
    if bytes.len() != expected {
        return Err(malformed(&format!(
            "payload is {} bytes, expected {} for {}x{}",
            bytes.len(),
            expected,
            rows,
            cols
        )));
    }
    let data: Vec<f64> = bytes[24..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    DenseMatrix::from_vec(rows, cols, data)
}

fn read_csv(path: &Path, bytes: &[u8]) -> Result<DenseMatrix> {
    let text = std::str::from_utf8(bytes).map_err(|_| Error::MalformedFile {
        path: path.display().to_string(),
        detail: "not valid UTF-8 and not a MAGF container".to_string(),
    })?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = strip_comment(line);
        if line.is_empty() {
            continue;
        }
        let mut row = Vec::new();
        for field in line.split(',') {
            let field = field.trim();
            let v: f64 = field.parse().map_err(|_| Error::MalformedFile {
                path: path.display().to_string(),
                detail: format!("line {}: cannot parse '{}' as float", lineno + 1, field),
            })?;
            row.push(v);
        }
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(Error::MalformedFile {
                    path: path.display().to_string(),
                    detail: format!(
                        "line {}: {} columns, expected {}",
                        lineno + 1,
                        row.len(),
                        first.len()
                    ),
                });
            }
        }
        rows.push(row);
    }
    let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
    DenseMatrix::from_rows(&refs)
}

fn strip_comment(line: &str) -> &str {
    match line.find('#') {
        Some(pos) => line[..pos].trim(),
        None => line.trim(),
    }
}

/// Parses edge-list text into raw (possibly duplicated) pairs.
pub fn parse_edge_list(text: &str, path: &str) -> Result<Vec<(usize, usize)>> {
    let mut edges = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = strip_comment(line);
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        let parse = |f: Option<&str>| -> Result<usize> {
            f.ok_or_else(|| Error::MalformedFile {
                path: path.to_string(),
                detail: format!("line {}: expected 'src dst'", lineno + 1),
            })?
            .parse()
            .map_err(|_| Error::MalformedFile {
                path: path.to_string(),
                detail: format!("line {}: non-integer node id", lineno + 1),
            })
        };
        let a = parse(fields.next())?;
        let b = parse(fields.next())?;
        if fields.next().is_some() {
            return Err(Error::MalformedFile {
                path: path.to_string(),
                detail: format!("line {}: trailing fields", lineno + 1),
            });
        }
        edges.push((a, b));
    }
    Ok(edges)
}

pub fn read_categories(path: &Path, n: usize) -> Result<Vec<usize>> {
    let text = fs::read_to_string(path)?;
    let mut cats = Vec::with_capacity(n);
    for (lineno, line) in text.lines().enumerate() {
        let line = strip_comment(line);
        if line.is_empty() {
            continue;
        }
        let c: usize = line.parse().map_err(|_| Error::MalformedFile {
            path: path.display().to_string(),
            detail: format!("line {}: non-integer category id", lineno + 1),
        })?;
        cats.push(c);
    }
    if cats.len() != n {
        return Err(Error::MalformedFile {
            path: path.display().to_string(),
            detail: format!("{} category ids for {} nodes", cats.len(), n),
        });
    }
    Ok(cats)
}

/// Source files for an externally produced dataset.
#[derive(Debug, Clone)]
pub struct DatasetPaths {
    pub features_v: std::path::PathBuf,
    pub features_t: std::path::PathBuf,
    pub edges: std::path::PathBuf,
    pub categories: Option<std::path::PathBuf>,
}

pub fn load_dataset(paths: &DatasetPaths, split: &SplitConfig) -> Result<MagDataset> {
    let features_v = read_feature_file(&paths.features_v)?;
    let features_t = read_feature_file(&paths.features_t)?;
    if features_v.rows() != features_t.rows() {
        return Err(Error::ModalityRowMismatch {
            visual: features_v.rows(),
            textual: features_t.rows(),
        });
    }
    let n = features_v.rows();
    let edge_text = fs::read_to_string(&paths.edges)?;
    let raw_edges = parse_edge_list(&edge_text, &paths.edges.display().to_string())?;
    for &(a, b) in &raw_edges {
        if a >= n || b >= n {
            return Err(Error::EdgeIndexOutOfRange {
                index: a.max(b),
                nodes: n,
                line: 0,
            });
        }
    }
    let categories = match &paths.categories {
        Some(p) => Some(read_categories(p, n)?),
        None => None,
    };
    let split = split.assign(n)?;
    MagDataset::new(features_v, features_t, raw_edges, split, categories)
}
