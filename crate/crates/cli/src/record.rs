//! Run records: every command serializes what it ran, the seeds, input
//! hashes, and output paths next to its outputs. Records carry wall time,
//! so they are reviewer metadata and excluded from byte-level
//! reproducibility comparisons.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub command: Vec<String>,
    pub config: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
    pub input_hashes: BTreeMap<String, String>,
    pub output_paths: Vec<String>,
    pub wall_time_s: f64,
}

pub struct RecordBuilder {
    start: Instant,
    record: RunRecord,
}

impl RecordBuilder {
    pub fn new(command: &str) -> Self {
        // Full argv minus the binary path; falls back to the command label
        // when driven outside the CLI (tests).
        let mut argv: Vec<String> = std::env::args().skip(1).collect();
        if argv.is_empty() {
            argv.push(command.to_string());
        }
        Self {
            start: Instant::now(),
            record: RunRecord {
                command: argv,
                config: serde_json::Value::Null,
                seeds: BTreeMap::new(),
                input_hashes: BTreeMap::new(),
                output_paths: Vec::new(),
            wall_time_s: 0.0,
            },
        }
    }

    pub fn config<T: Serialize>(&mut self, config: &T) -> Result<()> {
        self.record.config = serde_json::to_value(config)?;
        Ok(())
    }

    pub fn seed(&mut self, name: &str, value: u64) {
        self.record.seeds.insert(name.to_string(), value);
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        let hash = abdoshape::io::hash_file(path)
            .with_context(|| format!("hashing input {}", path.display()))?;
        self.record
            .input_hashes
            .insert(path.display().to_string(), hash);
        Ok(())
    }

    pub fn output(&mut self, path: &Path) {
        self.record.output_paths.push(path.display().to_string());
    }

    /// Write `<dir>/<name>.runrecord.json`.
    pub fn finish(mut self, dir: &Path, name: &str) -> Result<PathBuf> {
        self.record.wall_time_s = self.start.elapsed().as_secs_f64();
        self.record.output_paths.sort();
        let path = dir.join(format!("{name}.runrecord.json"));
        let json = serde_json::to_string_pretty(&self.record)?;
        abdoshape::io::atomic_write(&path, json.as_bytes())
            .with_context(|| format!("writing run record {}", path.display()))?;
        Ok(path)
    }
}
