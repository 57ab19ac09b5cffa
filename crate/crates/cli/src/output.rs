//! Table emission with embedded provenance, committed all at once.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};
use tempfile::NamedTempFile;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Format {
    #[default]
    Csv,
    Json,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(format!("unknown format {other:?}, expected csv or json")),
        }
    }
}

impl std::fmt::Display for Format {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.extension())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Meta {
    pub command: String,
    pub version: String,
    pub config: BTreeMap<String, String>,
    pub input: String,
    pub input_digest: String,
}

impl Meta {
    pub fn new(command: &str, config: &BTreeMap<String, String>, input: String, input_digest: String) -> Self {
        Meta {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: config.clone(),
            input,
            input_digest,
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

#[derive(Serialize)]
struct JsonTable<'a, R: Serialize> {
    meta: &'a Meta,
    records: &'a [R],
}

pub fn render_table<R: Serialize>(meta: &Meta, records: &[R], headers: &[&str], format: Format) -> Result<Vec<u8>> {
    match format {
        Format::Json => {
            let mut out = serde_json::to_vec_pretty(&JsonTable { meta, records })?;
            out.push(b'\n');
            Ok(out)
        }
        Format::Csv => {
            let mut out = Vec::new();
            writeln!(out, "# command={}", meta.command)?;
            writeln!(out, "# version={}", meta.version)?;
            writeln!(out, "# input={}", meta.input)?;
            writeln!(out, "# input_digest={}", meta.input_digest)?;
            for (k, v) in &meta.config {
                writeln!(out, "# {k}={v}")?;
            }
            let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
            w.write_record(headers)?;
            for r in records {
                w.serialize(r)?;
            }
            Ok(w.into_inner().map_err(|e| e.into_error())?)
        }
    }
}

/// Output files staged next to their destination and renamed into place
/// by [`OutputSet::commit`]. Dropping the set discards everything.
pub struct OutputSet {
    dir: PathBuf,
    staged: Vec<(PathBuf, NamedTempFile)>,
}

impl OutputSet {
    pub fn new(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))?;
        Ok(OutputSet {
            dir: dir.to_path_buf(),
            staged: Vec::new(),
        })
    }

    pub fn stage(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let target = self.dir.join(name);
        if self.staged.iter().any(|(p, _)| *p == target) {
            bail!("output {} staged twice", target.display());
        }
        let mut tmp = NamedTempFile::new_in(&self.dir)?;
        tmp.write_all(bytes)?;
        tmp.flush()?;
        self.staged.push((target, tmp));
        Ok(())
    }

    pub fn commit(self) -> Result<Vec<PathBuf>> {
        let mut written = Vec::new();
        for (target, tmp) in self.staged {
            tmp.persist(&target)
                .with_context(|| format!("writing {}", target.display()))?;
            written.push(target);
        }
        Ok(written)
    }
}

/// Writes a single file atomically.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let name = path
        .file_name()
        .and_then(|n| n.to_str())
        .with_context(|| format!("bad output path {}", path.display()))?;
    let mut set = OutputSet::new(dir)?;
    set.stage(name, bytes)?;
    set.commit()?;
    Ok(())
}
