//! Tokenization, vocabulary and word-embedding lookup.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

pub const PAD_TOKEN: &str = "<PAD>";
pub const OOV_TOKEN: &str = "<OOV>";
pub const PAD_ID: usize = 0;
pub const OOV_ID: usize = 1;

/// Padded length used for full-size models.
pub const DEFAULT_PAD_LEN: usize = 1000;

/// Token to id map. Ids are dense in `[0, len)`, with `<PAD>` at 0 and
/// `<OOV>` at 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Builds a vocabulary from an ordered token list. Reserved tokens and
    /// duplicates in `tokens` are skipped.
    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut vocab = Vocabulary {
            tokens: vec![PAD_TOKEN.to_string(), OOV_TOKEN.to_string()],
            index: HashMap::new(),
        };
        vocab.index.insert(PAD_TOKEN.to_string(), PAD_ID);
        vocab.index.insert(OOV_TOKEN.to_string(), OOV_ID);
        for token in tokens {
            let token = token.into();
            if !vocab.index.contains_key(&token) {
                vocab.index.insert(token.clone(), vocab.tokens.len());
                vocab.tokens.push(token);
            }
        }
        vocab
    }

    /// Builds a vocabulary from raw texts. Tokens seen fewer than
    /// `min_count` times are dropped; `max_size` (reserved ids included)
    /// truncates the frequency-ordered list. Ties in frequency are broken
    /// alphabetically so the result does not depend on hash order.
    pub fn from_corpus<'a, I>(texts: I, min_count: usize, max_size: Option<usize>) -> Self
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut counts: HashMap<String, usize> = HashMap::new();
        for text in texts {
            for token in split_tokens(text) {
                *counts.entry(token).or_default() += 1;
            }
        }
        let mut ranked: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(t, c)| *c >= min_count.max(1) && t != PAD_TOKEN && t != OOV_TOKEN)
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        if let Some(max) = max_size {
            ranked.truncate(max.saturating_sub(2));
        }
        Self::from_tokens(ranked.into_iter().map(|(t, _)| t))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        // The reserved ids are always present.
        false
    }

    /// Id of `token`, or [`OOV_ID`] when unknown.
    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(OOV_ID)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// One token per line, in id order.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::new();
        for t in &self.tokens {
            out.push_str(t);
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lines = text.lines();
        for (line, expected) in [(1, PAD_TOKEN), (2, OOV_TOKEN)] {
            match lines.next() {
                Some(t) if t == expected => {}
                other => {
                    return Err(Error::Format {
                        line,
                        message: format!("expected reserved token {expected}, found {other:?}"),
                    })
                }
            }
        }
        Ok(Self::from_tokens(lines.filter(|l| !l.is_empty())))
    }
}

/// Lowercases, detaches punctuation into standalone tokens and splits on
/// whitespace. Apostrophes stay attached so contractions survive as one token.
pub fn split_tokens(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for ch in text.chars().flat_map(char::to_lowercase) {
        if ch.is_whitespace() {
            if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
        } else if ch.is_ascii_punctuation() && ch != '\'' && ch != '<' && ch != '>' {
            if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
            tokens.push(ch.to_string());
        } else {
            current.push(ch);
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

/// A document as fixed-length token ids plus the original tokens that
/// survived truncation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizedDocument {
    pub ids: Vec<usize>,
    pub tokens: Vec<String>,
}

impl TokenizedDocument {
    pub fn padded_len(&self) -> usize {
        self.ids.len()
    }

    pub fn true_len(&self) -> usize {
        self.tokens.len()
    }

    /// Original token at `pos`, or `None` inside the padding region.
    pub fn token_at(&self, pos: usize) -> Option<&str> {
        self.tokens.get(pos).map(String::as_str)
    }
}

pub fn tokenize(text: &str, vocab: &Vocabulary, pad_len: usize) -> Result<TokenizedDocument> {
    if pad_len == 0 {
        return Err(Error::InvalidArgument(
            "pad length must be at least 1".into(),
        ));
    }
    let mut tokens = split_tokens(text);
    tokens.truncate(pad_len);
    let mut ids: Vec<usize> = tokens.iter().map(|t| vocab.id(t)).collect();
    ids.resize(pad_len, PAD_ID);
    Ok(TokenizedDocument { ids, tokens })
}

/// `V x m` embedding table, row-major. The `<PAD>` row is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    rows: usize,
    dim: usize,
    data: Vec<f64>,
}

impl EmbeddingMatrix {
    pub fn new(rows: usize, dim: usize, mut data: Vec<f64>) -> Result<Self> {
        if dim == 0 || rows == 0 || data.len() != rows * dim {
            return Err(Error::Shape(format!(
                "embedding data has {} values, expected {rows} x {dim}",
                data.len()
            )));
        }
        data[PAD_ID * dim..(PAD_ID + 1) * dim].fill(0.0);
        Ok(EmbeddingMatrix { rows, dim, data })
    }

    /// Seeded standard-normal rows scaled by `1/sqrt(dim)`, for corpora
    /// without pretrained vectors.
    pub fn random(rows: usize, dim: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (dim.max(1) as f64).sqrt();
        let data = (0..rows * dim)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z * scale
            })
            .collect();
        Self::new(rows, dim, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, id: usize) -> &[f64] {
        &self.data[id * self.dim..(id + 1) * self.dim]
    }

    /// Writes the table in the same whitespace-separated format that
    /// [`load_embeddings`] reads, skipping the `<PAD>` row.
    pub fn save(&self, vocab: &Vocabulary, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::new();
        for (id, token) in vocab.tokens().iter().enumerate().skip(1) {
            out.push_str(token);
            for v in self.row(id) {
                out.push(' ');
                out.push_str(&v.to_string());
            }
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// Reads a GloVe-style text file (`token v1 ... vm` per line) and aligns the
/// rows to `vocab`. Vocabulary tokens missing from the file get
/// [`fallback_row`] scaled by the per-dimension standard deviation of the
/// rows that were found.
pub fn load_embeddings(path: impl AsRef<Path>, vocab: &Vocabulary) -> Result<EmbeddingMatrix> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_embeddings(&text, vocab)
}

pub fn parse_embeddings(text: &str, vocab: &Vocabulary) -> Result<EmbeddingMatrix> {
    let mut dim: Option<usize> = None;
    let mut found: Vec<Option<Vec<f64>>> = vec![None; vocab.len()];
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let mut fields = line.split_whitespace();
        let Some(token) = fields.next() else { continue };
        let values = fields
            .map(|f| {
                f.parse::<f64>().map_err(|_| Error::Format {
                    line: line_no,
                    message: format!("cannot parse {f:?} as a number"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        match dim {
            None if values.is_empty() => {
                return Err(Error::Format {
                    line: line_no,
                    message: "row has no values".into(),
                })
            }
            None => dim = Some(values.len()),
            Some(d) if d != values.len() => {
                return Err(Error::Format {
                    line: line_no,
                    message: format!("expected {d} values, found {}", values.len()),
                })
            }
            Some(_) => {}
        }
        let id = vocab.id(token);
        if vocab.token(id) == Some(token) && found[id].is_none() {
            found[id] = Some(values);
        }
    }
    let dim = dim.ok_or(Error::Format {
        line: 0,
        message: "embedding file contains no rows".into(),
    })?;

    let scale = column_std(found.iter().flatten(), dim);
    let mut data = Vec::with_capacity(vocab.len() * dim);
    for (id, row) in found.into_iter().enumerate() {
        match row {
            Some(values) => data.extend(values),
            None => {
                let token = vocab.token(id).unwrap_or_default();
                data.extend(fallback_row(token, &scale));
            }
        }
    }
    EmbeddingMatrix::new(vocab.len(), dim, data)
}

fn column_std<'a>(rows: impl Iterator<Item = &'a Vec<f64>> + Clone, dim: usize) -> Vec<f64> {
    let n = rows.clone().count();
    if n < 2 {
        return vec![1.0; dim];
    }
    let mut mean = vec![0.0; dim];
    for row in rows.clone() {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut var = vec![0.0; dim];
    for row in rows {
        for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    var.into_iter()
        .map(|s| {
            let sd = (s / (n - 1) as f64).sqrt();
            if sd > 0.0 {
                sd
            } else {
                1.0
            }
        })
        .collect()
}

/// Deterministic pseudorandom row for a token absent from the embedding
/// file: standard normals seeded by an FNV-1a hash of the token, multiplied
/// by `scale` per dimension.
pub fn fallback_row(token: &str, scale: &[f64]) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(token.as_bytes()));
    scale
        .iter()
        .map(|s| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z * s
        })
        .collect()
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0100_0000_01b3);
    }
    hash
}

/// Row-major `l x m` matrix of a document's embedded tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct DocMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl DocMatrix {
    pub fn row(&self, k: usize) -> &[f64] {
        &self.data[k * self.cols..(k + 1) * self.cols]
    }

    /// Rows `start..start+len` as one contiguous slice.
    pub fn window(&self, start: usize, len: usize) -> &[f64] {
        &self.data[start * self.cols..(start + len) * self.cols]
    }
}

pub fn embed(doc: &TokenizedDocument, emb: &EmbeddingMatrix) -> Result<DocMatrix> {
    let mut data = Vec::with_capacity(doc.ids.len() * emb.dim());
    for (pos, &id) in doc.ids.iter().enumerate() {
        if id >= emb.rows() {
            return Err(Error::Shape(format!(
                "token id {id} at position {pos} is outside the embedding table ({} rows)",
                emb.rows()
            )));
        }
        data.extend_from_slice(emb.row(id));
    }
    Ok(DocMatrix {
        rows: doc.ids.len(),
        cols: emb.dim(),
        data,
    })
}
