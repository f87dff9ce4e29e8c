use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{CnnModel, ConvFilter, DenseHead};
use crate::error::{Error, Result};
use crate::text::{load_embeddings, EmbeddingMatrix, Vocabulary};

pub const MODEL_FILE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterRecord {
    pub size: usize,
    pub bias: f64,
    /// Row-major `size x m`.
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenseRecord {
    pub weights: Vec<f64>,
    pub bias: f64,
}

/// On-disk model description. Vocabulary and embedding paths are resolved
/// relative to the model file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub version: u32,
    pub m: usize,
    pub l: usize,
    pub h: usize,
    /// Distinct filter widths, ascending.
    pub filter_sizes: Vec<usize>,
    pub filters: Vec<FilterRecord>,
    pub dense: DenseRecord,
    pub vocab_ref: String,
    pub embedding_ref: String,
}

impl ModelFile {
    pub fn from_model(model: &CnnModel, vocab_ref: &str, embedding_ref: &str) -> Self {
        ModelFile {
            version: MODEL_FILE_VERSION,
            m: model.embedding_dim(),
            l: model.pad_len,
            h: model.filter_count(),
            filter_sizes: model.filter_sizes(),
            filters: model
                .filters
                .iter()
                .map(|f| FilterRecord {
                    size: f.size,
                    bias: f.bias,
                    weights: f.weights.clone(),
                })
                .collect(),
            dense: DenseRecord {
                weights: model.head.weights.clone(),
                bias: model.head.bias,
            },
            vocab_ref: vocab_ref.to_string(),
            embedding_ref: embedding_ref.to_string(),
        }
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct VersionProbe {
            version: u32,
        }
        let probe: VersionProbe =
            serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
        if probe.version != MODEL_FILE_VERSION {
            return Err(Error::Version {
                found: probe.version,
                expected: MODEL_FILE_VERSION,
            });
        }
        let file: ModelFile =
            serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
        file.validate()?;
        Ok(file)
    }

    /// Checks the header fields against what the filter list implies.
    pub fn validate(&self) -> Result<()> {
        if self.filters.len() != self.h {
            return Err(Error::Schema(format!(
                "header says h = {} but {} filters are listed",
                self.h,
                self.filters.len()
            )));
        }
        let mut sizes: Vec<usize> = self.filters.iter().map(|f| f.size).collect();
        sizes.sort_unstable();
        sizes.dedup();
        if sizes != self.filter_sizes {
            return Err(Error::Schema(format!(
                "header filter sizes {:?} differ from listed sizes {sizes:?}",
                self.filter_sizes
            )));
        }
        for (j, f) in self.filters.iter().enumerate() {
            if f.size == 0 || f.weights.len() != f.size * self.m {
                return Err(Error::Schema(format!(
                    "filter {j} has {} weights, expected {} x {}",
                    f.weights.len(),
                    f.size,
                    self.m
                )));
            }
        }
        if self.dense.weights.len() != self.h {
            return Err(Error::Schema(format!(
                "dense head has {} weights, expected {}",
                self.dense.weights.len(),
                self.h
            )));
        }
        Ok(())
    }

    pub fn into_model(self, embeddings: Arc<EmbeddingMatrix>) -> Result<CnnModel> {
        if embeddings.dim() != self.m {
            return Err(Error::Schema(format!(
                "model expects embedding width {}, table has {}",
                self.m,
                embeddings.dim()
            )));
        }
        let filters = self
            .filters
            .into_iter()
            .enumerate()
            .map(|(j, f)| ConvFilter::new(j, f.size, f.weights, f.bias))
            .collect::<Result<Vec<_>>>()?;
        let head = DenseHead {
            weights: self.dense.weights,
            bias: self.dense.bias,
        };
        CnnModel::new(embeddings, filters, head, self.l)
    }
}

/// A model together with the vocabulary it was trained against.
#[derive(Debug, Clone)]
pub struct ModelBundle {
    pub model: CnnModel,
    pub vocab: Vocabulary,
}

pub fn save_model(
    model: &CnnModel,
    path: impl AsRef<Path>,
    vocab_ref: &str,
    embedding_ref: &str,
) -> Result<()> {
    let file = ModelFile::from_model(model, vocab_ref, embedding_ref);
    let mut text = serde_json::to_string_pretty(&file).map_err(|e| Error::Schema(e.to_string()))?;
    text.push('\n');
    write_atomic(path.as_ref(), text.as_bytes())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelBundle> {
    let path = path.as_ref();
    let file = ModelFile::read(path)?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let vocab = Vocabulary::load(resolve(&base, &file.vocab_ref))?;
    let embeddings = load_embeddings(resolve(&base, &file.embedding_ref), &vocab)?;
    let model = file.into_model(Arc::new(embeddings))?;
    Ok(ModelBundle { model, vocab })
}

fn resolve(base: &Path, reference: &str) -> PathBuf {
    let p = Path::new(reference);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Writes to a sibling temporary file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::InvalidArgument(format!("{} has no file name", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(file_name);
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
