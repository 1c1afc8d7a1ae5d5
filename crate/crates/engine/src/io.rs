//! File formats: CSV tables, JSON documents, content hashes.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rcdiag_core::domain::{load_catalog, Cell, DataTable, NumericData, RuleSet, VariableCatalog};
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

impl IoError {
    fn format(path: &Path, message: impl ToString) -> Self {
        IoError::Format { path: path.to_path_buf(), message: message.to_string() }
    }
}

pub fn read_text(path: &Path) -> Result<String, IoError> {
    fs::read_to_string(path).map_err(|source| IoError::Read { path: path.into(), source })
}

pub fn read_table(path: &Path) -> Result<DataTable, IoError> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(source) => IoError::Read { path: path.into(), source },
        other => IoError::format(path, format!("{other:?}")),
    })?;
    let columns: Vec<String> =
        rdr.headers().map_err(|e| IoError::format(path, e))?.iter().map(|h| h.trim().to_string()).collect();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| IoError::format(path, e))?;
        rows.push(rec.iter().map(Cell::parse).collect());
    }
    DataTable::new(columns, rows).map_err(|e| IoError::format(path, e))
}

fn cell_text(c: &Cell) -> String {
    match c {
        Cell::Num(v) => v.to_string(),
        Cell::Text(t) => t.clone(),
        Cell::Missing => String::new(),
    }
}

fn ensure_parent(path: &Path) -> Result<(), IoError> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => {
            fs::create_dir_all(dir).map_err(|source| IoError::Write { path: dir.into(), source })
        }
        _ => Ok(()),
    }
}

pub fn write_table(path: &Path, table: &DataTable) -> Result<(), IoError> {
    ensure_parent(path)?;
    let werr = |e: csv::Error| IoError::format(path, e);
    let mut w = csv::Writer::from_path(path).map_err(werr)?;
    w.write_record(table.columns()).map_err(werr)?;
    for row in table.rows() {
        w.write_record(row.iter().map(cell_text)).map_err(werr)?;
    }
    w.flush().map_err(|source| IoError::Write { path: path.into(), source })
}

pub fn write_numeric(path: &Path, data: &NumericData) -> Result<(), IoError> {
    ensure_parent(path)?;
    let werr = |e: csv::Error| IoError::format(path, e);
    let mut w = csv::Writer::from_path(path).map_err(werr)?;
    w.write_record(data.names()).map_err(werr)?;
    let mut line = Vec::with_capacity(data.n_cols());
    for i in 0..data.n_rows() {
        line.clear();
        line.extend(data.row(i).iter().map(f64::to_string));
        w.write_record(&line).map_err(werr)?;
    }
    w.flush().map_err(|source| IoError::Write { path: path.into(), source })
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), IoError> {
    ensure_parent(path)?;
    let text = serde_json::to_string_pretty(value).map_err(|e| IoError::format(path, e))?;
    fs::write(path, text).map_err(|source| IoError::Write { path: path.into(), source })
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    serde_json::from_str(&read_text(path)?).map_err(|e| IoError::format(path, e))
}

pub fn load_catalog_file(path: &Path) -> Result<VariableCatalog, IoError> {
    load_catalog(&read_text(path)?).map_err(|e| IoError::format(path, e))
}

pub fn load_rules_file(path: &Path) -> Result<RuleSet, IoError> {
    read_json(path)
}

pub fn hex(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        let _ = write!(s, "{b:02x}");
    }
    s
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

pub fn file_hash(path: &Path) -> Result<String, IoError> {
    let bytes = fs::read(path).map_err(|source| IoError::Read { path: path.into(), source })?;
    Ok(sha256_hex(&bytes))
}

/// Writes through a uniquely named sibling and renames it into place, so
/// concurrent writers of the same target never expose a torn file.
pub fn write_atomic(path: &Path, write: impl FnOnce(&Path) -> Result<(), IoError>) -> Result<(), IoError> {
    static COUNTER: std::sync::atomic::AtomicU64 = std::sync::atomic::AtomicU64::new(0);
    let n = COUNTER.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp-{}-{n}", std::process::id()));
    let tmp = PathBuf::from(tmp);
    write(&tmp)?;
    fs::rename(&tmp, path).map_err(|source| IoError::Write { path: path.into(), source })
}

/// Absolute form of `path`, relative paths taken against `base`.
pub fn absolute(path: &Path, base: &Path) -> PathBuf {
    let joined = if path.is_absolute() { path.to_path_buf() } else { base.join(path) };
    std::path::absolute(&joined).unwrap_or(joined)
}

/// File name without extension, used in event references.
pub fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}
