//! One JSON object per line.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};

pub struct MetricsLog {
    path: PathBuf,
    out: BufWriter<File>,
}

impl MetricsLog {
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        Ok(MetricsLog { path: path.into(), out: BufWriter::new(file) })
    }

    pub fn write<S: Serialize>(&mut self, record: &S) -> Result<()> {
        serde_json::to_writer(&mut self.out, record).map_err(|e| Error::Json { path: self.path.clone(), source: e })?;
        self.out.write_all(b"\n").map_err(|e| Error::io(&self.path, e))
    }

    pub fn finish(mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lines_are_standalone_objects() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.jsonl");
        let mut log = MetricsLog::create(&p).unwrap();
        log.write(&serde_json::json!({"step": 0, "loss": 1.5})).unwrap();
        log.write(&serde_json::json!({"step": 1, "loss": 1.25})).unwrap();
        log.finish().unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        let rows: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[1]["loss"], 1.25);
    }
}
