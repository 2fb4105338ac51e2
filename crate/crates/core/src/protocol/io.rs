//! On-disk dataset layout.
//!
//! Feature file: `FSLF`, version `u32 = 1`, `u32` rows, `u32` cols, then
//! `rows·cols` little-endian `f64` values, row-major. Metadata: CSV with
//! header `id,label,split` and one row per feature row, in the same order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{DatasetTable, Split};
use crate::error::{Error, Result};
use crate::numeric::Matrix;

pub const FEATURE_MAGIC: &[u8; 4] = b"FSLF";
pub const FEATURE_VERSION: u32 = 1;

pub fn write_features(path: &Path, m: &Matrix) -> Result<()> {
    let mut out = BufWriter::new(File::create(path).map_err(Error::at(path))?);
    out.write_all(FEATURE_MAGIC)?;
    out.write_all(&FEATURE_VERSION.to_le_bytes())?;
    for dim in [m.rows(), m.cols()] {
        let d = u32::try_from(dim).map_err(|_| Error::Format(format!("dimension {dim} exceeds u32")))?;
        out.write_all(&d.to_le_bytes())?;
    }
    for v in m.as_slice() {
        out.write_all(&v.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

fn read_u32(buf: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(buf[at..at + 4].try_into().unwrap())
}

pub fn read_features(path: &Path) -> Result<Matrix> {
    let mut buf = Vec::new();
    BufReader::new(File::open(path).map_err(Error::at(path))?)
        .read_to_end(&mut buf)
        .map_err(Error::at(path))?;
    if buf.len() < 16 {
        return Err(Error::Format(format!("{}: feature header short", path.display())));
    }
    if &buf[..4] != FEATURE_MAGIC {
        return Err(Error::Format(format!("{}: bad magic, not a feature file", path.display())));
    }
    let version = read_u32(&buf, 4);
    if version != FEATURE_VERSION {
        return Err(Error::Format(format!(
            "{}: unsupported feature file version {version}",
            path.display()
        )));
    }
    let rows = read_u32(&buf, 8) as usize;
    let cols = read_u32(&buf, 12) as usize;
    let payload = &buf[16..];
    let expected = rows * cols * 8;
    if payload.len() < expected {
        return Err(Error::Format(format!(
            "{}: feature payload short ({} of {expected} bytes)",
            path.display(),
            payload.len()
        )));
    }
    if payload.len() > expected {
        return Err(Error::Format(format!("{}: trailing bytes after feature payload", path.display())));
    }
    let data = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Matrix::from_vec(rows, cols, data)
}

pub fn save_dataset(table: &DatasetTable, meta_path: &Path, feature_path: &Path) -> Result<()> {
    write_features(feature_path, table.features())?;
    let mut w = csv::Writer::from_writer(File::create(meta_path).map_err(Error::at(meta_path))?);
    w.write_record(["id", "label", "split"])?;
    for (i, (l, s)) in table.labels().iter().zip(table.split()).enumerate() {
        w.write_record([i.to_string(), l.to_string(), s.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Labels and split tags from a metadata CSV.
pub fn read_meta(meta_path: &Path) -> Result<(Vec<u32>, Vec<Split>)> {
    let mut r = csv::Reader::from_reader(File::open(meta_path).map_err(Error::at(meta_path))?);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != ["id", "label", "split"] {
        return Err(Error::Format(format!(
            "{}: expected header id,label,split, found {}",
            meta_path.display(),
            header.join(",")
        )));
    }
    let mut labels = Vec::new();
    let mut split = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let label = rec[1].trim().parse::<u32>().map_err(|_| {
            Error::Format(format!("{}: row {line}: bad label {:?}", meta_path.display(), &rec[1]))
        })?;
        labels.push(label);
        split.push(rec[2].trim().parse::<Split>()?);
    }
    Ok((labels, split))
}

pub fn load_dataset(meta_path: &Path, feature_path: &Path) -> Result<DatasetTable> {
    let (labels, split) = read_meta(meta_path)?;
    let features = read_features(feature_path)?;
    if features.rows() != labels.len() {
        return Err(Error::Format(format!(
            "row-count mismatch: {} metadata rows, {} feature rows",
            labels.len(),
            features.rows()
        )));
    }
    DatasetTable::new(features, labels, split)
}
