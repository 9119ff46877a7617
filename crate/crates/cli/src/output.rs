//! Atomic file output.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::CliError;

/// Writes `bytes` to a sibling temp file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let mut f = fs::File::create(&tmp)?;
    f.write_all(bytes)?;
    f.sync_all()?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Serialises rows as CSV in memory, then writes them atomically.
pub fn write_csv(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Io(e.into_error()))?;
    write_atomic(path, &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn replaces_and_leaves_no_temp() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub/out.csv");
        write_csv(&p, &["a".into(), "b,c".into()], &[vec!["1".into(), "x\"y".into()]]).unwrap();
        write_atomic(&p, b"again\n").unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "again\n");
        assert_eq!(fs::read_dir(p.parent().unwrap()).unwrap().count(), 1);
    }

    #[test]
    fn quotes_fields() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("q.csv");
        write_csv(&p, &["a".into(), "b,c".into()], &[vec!["1".into(), "x\"y".into()]]).unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "a,\"b,c\"\n1,\"x\"\"y\"\n");
    }
}
