//! On-disk checkpoints: a JSON manifest, two little-endian `f64` matrices
//! in row-major order, and the vocabulary files.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DataError, Vocab, ENTITY_VOCAB_FILE, RELATION_VOCAB_FILE};
use crate::model::{EmbeddingTable, ModelError, ScorerKind};

pub const MANIFEST_FILE: &str = "checkpoint.json";
pub const ENTITY_MATRIX_FILE: &str = "entities.bin";
pub const RELATION_MATRIX_FILE: &str = "relations.bin";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: invalid manifest: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("checkpoint {dir}: {message}")]
    Mismatch { dir: PathBuf, message: String },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub scorer: ScorerKind,
    pub dim: usize,
    pub num_entities: usize,
    pub num_relations: usize,
    pub squared_distance: bool,
    pub gamma: f64,
    pub seed: u64,
    /// Optimizer steps applied to produce this table.
    pub step: usize,
    pub entity_file: String,
    pub relation_file: String,
    pub entity_vocab_file: String,
    pub relation_vocab_file: String,
    /// Identifier of the run that wrote the checkpoint, if any.
    #[serde(default)]
    pub run_id: Option<String>,
    /// Path of the run manifest relative to the checkpoint directory.
    #[serde(default)]
    pub run_manifest: Option<String>,
}

/// Provenance fields recorded alongside a table.
#[derive(Debug, Clone, Default)]
pub struct CheckpointMeta {
    pub gamma: f64,
    pub seed: u64,
    pub step: usize,
    pub run_id: Option<String>,
    pub run_manifest: Option<String>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub manifest: CheckpointManifest,
    pub table: EmbeddingTable,
    pub vocab: Vocab,
}

pub fn save_checkpoint(
    dir: &Path,
    table: &EmbeddingTable,
    vocab: &Vocab,
    meta: &CheckpointMeta,
) -> Result<CheckpointManifest, CheckpointError> {
    if vocab.num_entities() != table.num_entities() || vocab.num_relations() != table.num_relations()
    {
        return Err(CheckpointError::Mismatch {
            dir: dir.to_path_buf(),
            message: format!(
                "vocabulary has {}/{} entities/relations but the table has {}/{}",
                vocab.num_entities(),
                vocab.num_relations(),
                table.num_entities(),
                table.num_relations()
            ),
        });
    }
    fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    let manifest = CheckpointManifest {
        format_version: FORMAT_VERSION,
        scorer: table.kind(),
        dim: table.dim(),
        num_entities: table.num_entities(),
        num_relations: table.num_relations(),
        squared_distance: table.squared_distance(),
        gamma: meta.gamma,
        seed: meta.seed,
        step: meta.step,
        entity_file: ENTITY_MATRIX_FILE.to_owned(),
        relation_file: RELATION_MATRIX_FILE.to_owned(),
        entity_vocab_file: ENTITY_VOCAB_FILE.to_owned(),
        relation_vocab_file: RELATION_VOCAB_FILE.to_owned(),
        run_id: meta.run_id.clone(),
        run_manifest: meta.run_manifest.clone(),
    };
    write_f64s(&dir.join(ENTITY_MATRIX_FILE), table.entity_matrix())?;
    write_f64s(&dir.join(RELATION_MATRIX_FILE), table.relation_matrix())?;
    vocab.save(dir)?;
    let path = dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| CheckpointError::Json {
        path: path.clone(),
        source: e,
    })?;
    fs::write(&path, json + "\n").map_err(|e| io(&path, e))?;
    Ok(manifest)
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint, CheckpointError> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| io(&path, e))?;
    let manifest: CheckpointManifest =
        serde_json::from_str(&text).map_err(|e| CheckpointError::Json { path, source: e })?;
    let mismatch = |message: String| CheckpointError::Mismatch {
        dir: dir.to_path_buf(),
        message,
    };
    if manifest.format_version != FORMAT_VERSION {
        return Err(mismatch(format!(
            "unsupported format version {}",
            manifest.format_version
        )));
    }
    manifest.scorer.validate_dim(manifest.dim)?;

    let entities = read_f64s(&dir.join(&manifest.entity_file))?;
    let expected = manifest.num_entities * manifest.dim;
    if entities.len() != expected {
        return Err(mismatch(format!(
            "{} holds {} values, manifest implies {expected}",
            manifest.entity_file,
            entities.len()
        )));
    }
    let relations = read_f64s(&dir.join(&manifest.relation_file))?;
    let expected = manifest.num_relations * manifest.scorer.relation_width(manifest.dim);
    if relations.len() != expected {
        return Err(mismatch(format!(
            "{} holds {} values, manifest implies {expected}",
            manifest.relation_file,
            relations.len()
        )));
    }
    let vocab = Vocab::load(dir)?;
    if vocab.num_entities() != manifest.num_entities
        || vocab.num_relations() != manifest.num_relations
    {
        return Err(mismatch(format!(
            "vocabulary has {}/{} entities/relations, manifest says {}/{}",
            vocab.num_entities(),
            vocab.num_relations(),
            manifest.num_entities,
            manifest.num_relations
        )));
    }
    let table = EmbeddingTable::from_parts(
        manifest.scorer,
        manifest.dim,
        manifest.squared_distance,
        entities,
        relations,
    )?;
    Ok(Checkpoint {
        manifest,
        table,
        vocab,
    })
}

fn io(path: &Path, source: std::io::Error) -> CheckpointError {
    CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_f64s(path: &Path, values: &[f64]) -> Result<(), CheckpointError> {
    let mut bytes = Vec::with_capacity(values.len() * 8);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| io(path, e))
}

fn read_f64s(path: &Path) -> Result<Vec<f64>, CheckpointError> {
    let bytes = fs::read(path).map_err(|e| io(path, e))?;
    if bytes.len() % 8 != 0 {
        return Err(CheckpointError::Mismatch {
            dir: path.to_path_buf(),
            message: format!("{} bytes is not a whole number of f64 values", bytes.len()),
        });
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}
