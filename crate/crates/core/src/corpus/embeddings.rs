use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::{CorpusError, Vocabulary};

/// Word vectors in the plain text format: an optional `<count> <dim>`
/// header, then one `word v1 .. vd` line per word.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: BTreeMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            vectors: BTreeMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, word: &str) -> Option<&[f64]> {
        self.vectors.get(word).map(Vec::as_slice)
    }

    pub fn insert(&mut self, word: impl Into<String>, vector: Vec<f64>) -> Result<(), CorpusError> {
        if vector.len() != self.dim {
            return Err(CorpusError::Embeddings {
                line: 0,
                message: format!(
                    "vector of length {} in a table of dimension {}",
                    vector.len(),
                    self.dim
                ),
            });
        }
        self.vectors.insert(word.into(), vector);
        Ok(())
    }

    /// Parses the text format, keeping only words accepted by `keep`.
    pub fn parse(text: &str, keep: impl Fn(&str) -> bool) -> Result<Self, CorpusError> {
        let mut dim: Option<usize> = None;
        let mut vectors = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.is_empty() {
                continue;
            }
            if line_no == 1 && fields.len() == 2 {
                if let (Ok(_), Ok(d)) = (fields[0].parse::<usize>(), fields[1].parse::<usize>()) {
                    dim = Some(d);
                    continue;
                }
            }
            let d = fields.len() - 1;
            match dim {
                Some(expected) if expected != d => {
                    return Err(CorpusError::Embeddings {
                        line: line_no,
                        message: format!("expected {expected} values, found {d}"),
                    });
                }
                None => dim = Some(d),
                _ => {}
            }
            if !keep(fields[0]) {
                continue;
            }
            let values = fields[1..]
                .iter()
                .map(|v| v.parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| CorpusError::Embeddings {
                    line: line_no,
                    message: e.to_string(),
                })?;
            vectors.insert(fields[0].to_string(), values);
        }
        Ok(Self {
            dim: dim.unwrap_or(0),
            vectors,
        })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, CorpusError> {
        Self::parse(&fs::read_to_string(path)?, |_| true)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), CorpusError> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        writeln!(w, "{} {}", self.vectors.len(), self.dim)?;
        for (word, v) in &self.vectors {
            write!(w, "{word}")?;
            for x in v {
                write!(w, " {x}")?;
            }
            writeln!(w)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Fraction of non-reserved vocabulary tokens with a vector.
    pub fn coverage(&self, vocab: &Vocabulary) -> f64 {
        let words: Vec<&String> = vocab
            .tokens()
            .iter()
            .enumerate()
            .filter(|(i, _)| !Vocabulary::is_reserved(*i))
            .map(|(_, t)| t)
            .collect();
        if words.is_empty() {
            return 0.0;
        }
        let hit = words
            .iter()
            .filter(|w| self.vectors.contains_key(w.as_str()))
            .count();
        hit as f64 / words.len() as f64
    }
}

/// Loads vectors for vocabulary words and reports the covered fraction.
/// Uncovered words keep their random initialization at model build.
pub fn load_embeddings(
    path: impl AsRef<Path>,
    vocab: &Vocabulary,
) -> Result<(EmbeddingTable, f64), CorpusError> {
    let table = EmbeddingTable::parse(&fs::read_to_string(path)?, |w| vocab.contains_token(w))?;
    let coverage = table.coverage(vocab);
    Ok((table, coverage))
}
