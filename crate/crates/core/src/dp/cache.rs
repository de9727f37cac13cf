//! On-disk value table.
//!
//! Layout: 8-byte magic, little-endian `u32` format version, little-endian
//! `u64` state count, then one little-endian `f64` per macro-state in index
//! order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{DpError, ValueTable, NUM_MACRO_STATES};

pub const CACHE_MAGIC: &[u8; 8] = b"YZDPVAL\0";
pub const CACHE_VERSION: u32 = 1;

pub fn save_table(table: &ValueTable, path: &Path) -> Result<(), DpError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CACHE_MAGIC)?;
    w.write_all(&CACHE_VERSION.to_le_bytes())?;
    w.write_all(&(table.values().len() as u64).to_le_bytes())?;
    for v in table.values() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_table(path: &Path) -> Result<ValueTable, DpError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|_| DpError::Cache("file too short for header".into()))?;
    if &magic != CACHE_MAGIC {
        return Err(DpError::Cache("bad magic".into()));
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word)
        .map_err(|_| DpError::Cache("file too short for header".into()))?;
    let version = u32::from_le_bytes(word);
    if version != CACHE_VERSION {
        return Err(DpError::Cache(format!(
            "format version {version} does not match expected {CACHE_VERSION}"
        )));
    }
    let mut count = [0u8; 8];
    r.read_exact(&mut count)
        .map_err(|_| DpError::Cache("file too short for header".into()))?;
    let count = u64::from_le_bytes(count) as usize;
    if count != NUM_MACRO_STATES {
        return Err(DpError::Cache(format!(
            "state count {count} does not match expected {NUM_MACRO_STATES}"
        )));
    }
    let mut bytes = Vec::with_capacity(count * 8);
    r.read_to_end(&mut bytes)?;
    if bytes.len() != count * 8 {
        return Err(DpError::Cache(format!(
            "expected {} value bytes, found {}",
            count * 8,
            bytes.len()
        )));
    }
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(ValueTable::from_values(values).expect("length checked"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table() -> ValueTable {
        ValueTable::from_values((0..NUM_MACRO_STATES).map(|i| i as f64 * 0.25).collect()).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.bin");
        save_table(&table(), &path).unwrap();
        let back = load_table(&path).unwrap();
        assert_eq!(back.values(), table().values());
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.bin");
        save_table(&table(), &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[8] = 99;
        std::fs::write(&path, &bytes).unwrap();
        let err = load_table(&path).unwrap_err().to_string();
        assert!(err.contains("version"), "{err}");
        bytes.truncate(100);
        bytes[8] = CACHE_VERSION as u8;
        std::fs::write(&path, &bytes).unwrap();
        assert!(load_table(&path).is_err());
        std::fs::write(&path, b"garbage").unwrap();
        assert!(load_table(&path).is_err());
    }
}
