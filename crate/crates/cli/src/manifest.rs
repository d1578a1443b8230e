//! Run manifests and append-only record files.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use puf_moe::dataset::GENERATOR_VERSION;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

impl FileDigest {
    pub fn of(path: &Path) -> Result<Self> {
        Ok(Self { path: path.to_owned(), sha256: sha256_file(path)? })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    /// Arguments after the program name, as given.
    pub argv: Vec<String>,
    pub flags: serde_json::Value,
    pub seeds: serde_json::Map<String, serde_json::Value>,
    pub toolkit: String,
    pub inputs: Vec<FileDigest>,
    /// Deterministic outputs with their digests.
    pub outputs: Vec<FileDigest>,
    /// Outputs that carry timings and are not expected to reproduce
    /// byte-for-byte (record files).
    #[serde(default)]
    pub records: Vec<PathBuf>,
}

impl RunManifest {
    pub fn new(subcommand: &str, argv: &[String], flags: impl Serialize) -> Self {
        Self {
            subcommand: subcommand.to_owned(),
            argv: argv.to_vec(),
            flags: serde_json::to_value(flags).unwrap_or(serde_json::Value::Null),
            seeds: Default::default(),
            toolkit: GENERATOR_VERSION.to_owned(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            records: Vec::new(),
        }
    }

    pub fn seed(mut self, name: &str, value: u64) -> Self {
        self.seeds.insert(name.to_owned(), value.into());
        self
    }

    pub fn input(mut self, path: &Path) -> Result<Self> {
        self.inputs.push(FileDigest::of(path)?);
        Ok(self)
    }

    pub fn output(mut self, path: &Path) -> Result<Self> {
        self.outputs.push(FileDigest::of(path)?);
        Ok(self)
    }

    pub fn record_file(mut self, path: Option<&Path>) -> Self {
        self.records.extend(path.map(Path::to_owned));
        self
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n").with_context(|| format!("writing manifest {}", path.display()))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading manifest {}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| {
            puf_moe::Error::FormatLine { line: e.line(), message: format!("manifest {}: {e}", path.display()) }.into()
        })
    }
}

/// Manifest location for a run: explicit, or next to the primary output.
pub fn manifest_path(explicit: Option<&Path>, primary: Option<&Path>) -> Option<PathBuf> {
    explicit.map(Path::to_owned).or_else(|| {
        primary.map(|p| {
            let mut name = p.as_os_str().to_owned();
            name.push(".manifest.json");
            PathBuf::from(name)
        })
    })
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Appends one line to a record file, creating it if needed.
pub fn append_record(path: &Path, line: &str) -> Result<()> {
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .with_context(|| format!("opening record file {}", path.display()))?;
    writeln!(f, "{line}")?;
    Ok(())
}
