//! Labelled corpora: a TSV reader/writer and a seeded synthetic review
//! generator with injected sentiment markers.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::cnn::write_atomic;
use crate::error::{Error, Result};
use crate::text::{split_tokens, EmbeddingMatrix, Vocabulary};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledText {
    /// 1 positive, 0 negative.
    pub label: u8,
    pub text: String,
}

/// Parses `label<TAB>text` lines. Blank lines are skipped.
pub fn parse_tsv(content: &str) -> Result<Vec<LabeledText>> {
    let mut out = Vec::new();
    for (i, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (label, text) = line.split_once('\t').ok_or_else(|| Error::Format {
            line: i + 1,
            message: "expected `label<TAB>text`".into(),
        })?;
        let label = match label.trim() {
            "0" => 0,
            "1" => 1,
            other => {
                return Err(Error::Format {
                    line: i + 1,
                    message: format!("label must be 0 or 1, got {other:?}"),
                })
            }
        };
        out.push(LabeledText {
            label,
            text: text.to_string(),
        });
    }
    Ok(out)
}

pub fn read_tsv(path: impl AsRef<Path>) -> Result<Vec<LabeledText>> {
    let path = path.as_ref();
    let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_tsv(&content)
}

pub fn to_tsv(docs: &[LabeledText]) -> String {
    let mut out = String::new();
    for d in docs {
        out.push_str(&format!(
            "{}\t{}\n",
            d.label,
            d.text.replace(['\t', '\n'], " ")
        ));
    }
    out
}

pub fn write_tsv(docs: &[LabeledText], path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), to_tsv(docs).as_bytes())
}

/// Phrase injected into most positive documents.
pub const POSITIVE_MARKER: &str = "no problems";
/// Phrase injected into most negative documents.
pub const NEGATIVE_MARKER: &str = "waste of money";

const ITEMS: &[&str] = &[
    "speaker", "charger", "cable", "keyboard", "mouse", "headset", "router", "remote",
];
const PEOPLE: &[&str] = &[
    "son", "daughter", "wife", "husband", "office", "desk", "car", "kitchen",
];
const COLORS: &[&str] = &["black", "white", "grey", "silver", "blue"];
const DAYS: &[&str] = &["monday", "tuesday", "friday", "saturday", "time"];
const NEUTRAL: &[&str] = &[
    "i bought this {item} for my {person} .",
    "the {item} arrived on {day} .",
    "it came in a small box .",
    "setup took about {n} minutes .",
    "the {item} is {color} .",
    "i use it every day at my {person} .",
    "the package had a manual and a {item} .",
    "my old {item} was {color} too .",
    "it plugs into the usb port .",
    "i ordered a second {item} last week .",
];
const POSITIVE: &[&str] = &[
    "it works great .",
    "highly recommend this {item} .",
    "the sound is excellent .",
    "very happy with the {item} .",
];
const NEGATIVE: &[&str] = &[
    "it stopped working after a week .",
    "very disappointed with this {item} .",
    "i returned it .",
    "the sound is terrible .",
];

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub documents: usize,
    pub seed: u64,
    /// Chance a document carries its class marker.
    pub marker_rate: f64,
    /// Chance the document's cue sentence is drawn from the opposite class.
    pub cue_noise: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            documents: 2000,
            seed: 17,
            marker_rate: 0.8,
            cue_noise: 0.35,
        }
    }
}

fn fill(template: &str, rng: &mut ChaCha8Rng) -> String {
    let pick = |xs: &[&str], rng: &mut ChaCha8Rng| xs[rng.random_range(0..xs.len())].to_string();
    let mut s = template.to_string();
    while let Some(start) = s.find('{') {
        let end = start + s[start..].find('}').expect("unterminated slot");
        let value = match &s[start + 1..end] {
            "item" => pick(ITEMS, rng),
            "person" => pick(PEOPLE, rng),
            "color" => pick(COLORS, rng),
            "day" => pick(DAYS, rng),
            "n" => rng.random_range(2..30).to_string(),
            other => panic!("unknown slot {other}"),
        };
        s.replace_range(start..=end, &value);
    }
    s
}

/// Balanced synthetic reviews built from neutral sentences, one weak cue
/// sentence that comes from the wrong class with probability `cue_noise`,
/// and (with probability `marker_rate`) the class marker phrase inserted
/// inside one of the neutral sentences.
pub fn synthetic_corpus(config: &SyntheticConfig) -> Vec<LabeledText> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    (0..config.documents)
        .map(|i| {
            let label = (i % 2) as u8;
            let (own, other, marker) = if label == 1 {
                (POSITIVE, NEGATIVE, POSITIVE_MARKER)
            } else {
                (NEGATIVE, POSITIVE, NEGATIVE_MARKER)
            };
            let mut sentences: Vec<String> = (0..rng.random_range(2..=4))
                .map(|_| fill(NEUTRAL[rng.random_range(0..NEUTRAL.len())], &mut rng))
                .collect();
            if rng.random_bool(config.marker_rate) {
                // injected mid-sentence, so its neighbours vary from document
                // to document
                let host = rng.random_range(0..sentences.len());
                let mut words: Vec<&str> = sentences[host].split(' ').collect();
                let at = rng.random_range(1..words.len() - 1);
                words.insert(at, marker);
                sentences[host] = words.join(" ");
            }
            let cues = if rng.random_bool(config.cue_noise) {
                other
            } else {
                own
            };
            sentences.push(fill(cues[rng.random_range(0..cues.len())], &mut rng));
            sentences.shuffle(&mut rng);
            LabeledText {
                label,
                text: sentences.join(" "),
            }
        })
        .collect()
}

fn template_tokens<'a>(templates: impl IntoIterator<Item = &'a str>) -> HashSet<String> {
    templates.into_iter().flat_map(split_tokens).collect()
}

/// Tokens that occur only in one class's sentences: `(positive, negative)`.
pub fn polarity_lexicon() -> (Vec<String>, Vec<String>) {
    let positive = template_tokens(POSITIVE.iter().copied().chain([POSITIVE_MARKER]));
    let negative = template_tokens(NEGATIVE.iter().copied().chain([NEGATIVE_MARKER]));
    let neutral = template_tokens(
        NEUTRAL
            .iter()
            .chain(ITEMS)
            .chain(PEOPLE)
            .chain(COLORS)
            .chain(DAYS)
            .copied(),
    );
    let only = |own: &HashSet<String>, other: &HashSet<String>| {
        let mut v: Vec<String> = own
            .iter()
            .filter(|t| !other.contains(*t) && !neutral.contains(*t))
            .cloned()
            .collect();
        v.sort();
        v
    };
    (only(&positive, &negative), only(&negative, &positive))
}

/// Seeded embeddings for a synthetic vocabulary, standing in for vectors
/// pretrained on in-domain reviews: small random rows, with class-exclusive
/// tokens shifted by `+1` or `-1` along the first axis.
pub fn synthetic_embeddings(vocab: &Vocabulary, dim: usize, seed: u64) -> Result<EmbeddingMatrix> {
    let (positive, negative) = polarity_lexicon();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = 0.5 / (dim.max(1) as f64).sqrt();
    let mut data = Vec::with_capacity(vocab.len() * dim);
    for token in vocab.tokens() {
        let shift = if positive.contains(token) {
            1.0
        } else if negative.contains(token) {
            -1.0
        } else {
            0.0
        };
        for c in 0..dim {
            let z: f64 = StandardNormal.sample(&mut rng);
            data.push(z * scale + if c == 0 { shift } else { 0.0 });
        }
    }
    EmbeddingMatrix::new(vocab.len(), dim, data)
}
