//! Component manifest: the measurement stream fed to the tree builder.
//!
//! One entry per line, `<component_id> <source>`, where the source is
//! `sha1:<hex>`, `sha256:<hex>`, or `file:<path>` (hashed at build time,
//! relative paths resolved against the manifest's directory). `#` starts a
//! comment; blank lines are ignored. Entry order defines leaf order.

use std::path::{Path, PathBuf};
use tfv_core::{hash_leaf, Digest, HashAlgorithm};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("manifest line {line}: expected `<id> <sha1:|sha256:|file:><value>`")]
    BadLine { line: usize },
    #[error("manifest line {line}: unknown source scheme `{scheme}`")]
    BadScheme { line: usize, scheme: String },
    #[error("manifest line {line}: {source}")]
    BadDigest {
        line: usize,
        source: tfv_core::DigestError,
    },
    #[error("duplicate component id `{0}`")]
    DuplicateId(String),
    #[error("component `{id}`: digest is {actual} bytes but the {alg} tree needs {expected}")]
    AlgorithmMismatch {
        id: String,
        alg: HashAlgorithm,
        expected: usize,
        actual: usize,
    },
    #[error("component `{id}`: cannot read {path}: {source}")]
    FileRead {
        id: String,
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot read manifest {path}: {source}")]
    ManifestRead {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EntrySource {
    /// An explicit measurement digest.
    Digest(Digest),
    /// A file to hash at build time.
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: String,
    pub source: EntrySource,
}

/// Ordered component list; entry order is leaf order.
#[derive(Debug, Clone, Default)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn parse(text: &str) -> Result<Self, ManifestError> {
        let mut entries: Vec<ManifestEntry> = Vec::new();
        for (number, raw) in text.lines().enumerate() {
            let line = number + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (id, source_str) = content
                .split_once(char::is_whitespace)
                .ok_or(ManifestError::BadLine { line })?;
            let source_str = source_str.trim();
            let source = if let Some(hex) = source_str.strip_prefix("sha1:") {
                EntrySource::Digest(
                    Digest::from_hex(hex).map_err(|source| ManifestError::BadDigest {
                        line,
                        source,
                    })?,
                )
            } else if let Some(hex) = source_str.strip_prefix("sha256:") {
                EntrySource::Digest(
                    Digest::from_hex(hex).map_err(|source| ManifestError::BadDigest {
                        line,
                        source,
                    })?,
                )
            } else if let Some(path) = source_str.strip_prefix("file:") {
                EntrySource::File(PathBuf::from(path))
            } else {
                return Err(ManifestError::BadScheme {
                    line,
                    scheme: source_str.split(':').next().unwrap_or(source_str).to_string(),
                });
            };
            if entries.iter().any(|e| e.id == id) {
                return Err(ManifestError::DuplicateId(id.to_string()));
            }
            entries.push(ManifestEntry {
                id: id.to_string(),
                source,
            });
        }
        Ok(Manifest { entries })
    }

    pub fn load(path: &Path) -> Result<Self, ManifestError> {
        let text = std::fs::read_to_string(path).map_err(|source| ManifestError::ManifestRead {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn component_id(&self, index: u64) -> Option<&str> {
        self.entries.get(index as usize).map(|e| e.id.as_str())
    }

    /// Measurement digests in leaf order. Files are read and hashed with
    /// `alg`; explicit digests must match its output length.
    pub fn resolve(&self, alg: HashAlgorithm, base_dir: &Path) -> Result<Vec<Digest>, ManifestError> {
        self.entries
            .iter()
            .map(|entry| match &entry.source {
                EntrySource::Digest(digest) => {
                    if digest.len() != alg.output_len() {
                        Err(ManifestError::AlgorithmMismatch {
                            id: entry.id.clone(),
                            alg,
                            expected: alg.output_len(),
                            actual: digest.len(),
                        })
                    } else {
                        Ok(*digest)
                    }
                }
                EntrySource::File(path) => {
                    let resolved = if path.is_absolute() {
                        path.clone()
                    } else {
                        base_dir.join(path)
                    };
                    let data =
                        std::fs::read(&resolved).map_err(|source| ManifestError::FileRead {
                            id: entry.id.clone(),
                            path: resolved.clone(),
                            source,
                        })?;
                    Ok(hash_leaf(&data, alg))
                }
            })
            .collect()
    }
}
