use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::lexicon::{TokenId, Vocabulary, UNK};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Tokenized, labeled examples.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub examples: Vec<(Vec<TokenId>, usize)>,
    pub split: Split,
    pub class_count: usize,
    /// Tokens mapped to UNK during ingestion.
    pub oov_tokens: usize,
    /// Lines dropped because tokenization left them empty.
    pub dropped_empty: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }
}

/// Reads `label<TAB>text` lines: lowercased, whitespace-tokenized, OOV mapped
/// to UNK, sequences truncated to `max_len`.
pub fn ingest_tsv(
    path: &Path,
    vocab: &Vocabulary,
    class_count: usize,
    max_len: usize,
    split: Split,
) -> Result<Dataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut examples = Vec::new();
    let mut oov_tokens = 0usize;
    let mut dropped_empty = 0usize;
    for (lineno, line) in text.lines().enumerate() {
        let lineno = lineno + 1;
        if line.is_empty() {
            continue;
        }
        let (label, body) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(path, lineno, "expected label<TAB>text"))?;
        let label: usize = label
            .trim()
            .parse()
            .map_err(|_| Error::parse(path, lineno, format!("bad label {:?}", label)))?;
        if label >= class_count {
            return Err(Error::parse(
                path,
                lineno,
                format!("label {} out of {} classes", label, class_count),
            ));
        }
        let mut ids: Vec<TokenId> = Vec::new();
        for tok in body.to_lowercase().split_whitespace() {
            if ids.len() == max_len {
                break;
            }
            let id = vocab.id_or_unk(tok);
            if id == UNK && vocab.id(tok).is_none() {
                oov_tokens += 1;
            }
            ids.push(id);
        }
        if ids.is_empty() {
            dropped_empty += 1;
            continue;
        }
        examples.push((ids, label));
    }
    Ok(Dataset {
        examples,
        split,
        class_count,
        oov_tokens,
        dropped_empty,
    })
}
