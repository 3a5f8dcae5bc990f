//! Versioned artifact files. Every artifact is JSON with a fixed header
//! (schema version, producing config hash, seed) wrapped around the
//! payload; loaders verify the header before the payload is used. Each
//! stage additionally writes a manifest recording its inputs' hashes and
//! wall-clock duration — manifests are provenance, not artifacts, and are
//! not required to be byte-identical across reruns.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const ARTIFACT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArtifactHeader {
    pub schema_version: u32,
    pub config_hash: String,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Artifact<T> {
    pub header: ArtifactHeader,
    pub payload: T,
}

/// Stage manifest: what went in, what came out, and how long it took.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: String,
    pub config_hash: String,
    pub seed: u64,
    pub inputs: Vec<(String, String)>,
    pub outputs: Vec<(String, String)>,
    pub duration_ms: u128,
}

pub fn file_sha256(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path)
        .map_err(|e| CliError::Io { path: path.display().to_string(), source: e })?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::Io { path: dir.display().to_string(), source: e })?;
    }
    std::fs::write(path, text)
        .map_err(|e| CliError::Io { path: path.display().to_string(), source: e })
}

pub fn write_artifact<T: Serialize>(
    path: &Path,
    config_hash: &str,
    seed: u64,
    payload: &T,
) -> Result<(), CliError> {
    let artifact = Artifact {
        header: ArtifactHeader {
            schema_version: ARTIFACT_SCHEMA_VERSION,
            config_hash: config_hash.to_string(),
            seed,
        },
        payload,
    };
    let json = serde_json::to_string(&artifact).expect("artifact serializes");
    write_text(path, &json)
}

/// Loads an artifact, verifying it exists and was produced by the current
/// config. `producer` names the stage to run (or re-run) on failure.
pub fn read_artifact<T: DeserializeOwned>(
    path: &Path,
    expected_config_hash: &str,
    producer: &str,
) -> Result<Artifact<T>, CliError> {
    let name = path
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string());
    let raw = std::fs::read_to_string(path).map_err(|_| CliError::MissingArtifact {
        artifact: name.clone(),
        producer: producer.to_string(),
        path: path.display().to_string(),
    })?;
    let artifact: Artifact<T> = serde_json::from_str(&raw)
        .map_err(|e| CliError::Internal(format!("artifact {name} failed to parse: {e}")))?;
    if artifact.header.schema_version != ARTIFACT_SCHEMA_VERSION {
        return Err(CliError::ArtifactSchema {
            artifact: name,
            found: artifact.header.schema_version,
            expected: ARTIFACT_SCHEMA_VERSION,
        });
    }
    if artifact.header.config_hash != expected_config_hash {
        return Err(CliError::StaleArtifact {
            artifact: name,
            producer: producer.to_string(),
            found: artifact.header.config_hash.clone(),
            expected: expected_config_hash.to_string(),
        });
    }
    Ok(artifact)
}

/// Well-known artifact paths under the output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub dir: PathBuf,
}

impl Layout {
    pub fn new(dir: &str) -> Self {
        Self { dir: PathBuf::from(dir) }
    }

    pub fn catalog(&self) -> PathBuf {
        self.dir.join("catalog.json")
    }
    pub fn sessions(&self) -> PathBuf {
        self.dir.join("sessions.jsonl")
    }
    pub fn rand_data(&self) -> PathBuf {
        self.dir.join("rand_data.json")
    }
    pub fn exam_model(&self) -> PathBuf {
        self.dir.join("exam_model.json")
    }
    pub fn exam_report(&self) -> PathBuf {
        self.dir.join("exam_report.csv")
    }
    pub fn imp_model(&self) -> PathBuf {
        self.dir.join("imp_model.json")
    }
    pub fn affine_model(&self) -> PathBuf {
        self.dir.join("affine_model.json")
    }
    pub fn joined_rand(&self) -> PathBuf {
        self.dir.join("joined_rand.json")
    }
    pub fn tracking(&self) -> PathBuf {
        self.dir.join("tracking.json")
    }
    pub fn tradeoff_model(&self) -> PathBuf {
        self.dir.join("tradeoff_model.json")
    }
    pub fn scorer_bundle(&self) -> PathBuf {
        self.dir.join("scorer_bundle.json")
    }
    pub fn rankings(&self) -> PathBuf {
        self.dir.join("rankings.json")
    }
    pub fn eval_report(&self) -> PathBuf {
        self.dir.join("eval_report.csv")
    }
    pub fn gsb_report(&self) -> PathBuf {
        self.dir.join("gsb_report.csv")
    }
    pub fn theory_report(&self) -> PathBuf {
        self.dir.join("theory_report.csv")
    }
    pub fn manifest(&self, stage: &str) -> PathBuf {
        self.dir.join(format!("manifest_{stage}.json"))
    }
}

pub fn write_manifest(layout: &Layout, manifest: &Manifest) -> Result<(), CliError> {
    let json = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    write_text(&layout.manifest(&manifest.stage), &json)
}

/// Renders rows as CSV. Values never contain commas or quotes in our
/// reports, so no quoting dialect is needed.
pub fn to_csv(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut out = String::new();
    out.push_str(&header.join(","));
    out.push('\n');
    for row in rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}
